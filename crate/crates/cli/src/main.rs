use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use jitter_core::datagen::{build_dataset, DatasetManifest, SplitSizes};
use jitter_core::evaluation::MaskRule;
use jitter_core::model::ModelConfig;
use jitter_core::perturb::{apply_mode, FrameSequence, ShuffleMode, ShuffleSpec};
use jitter_core::pipeline::{
    ablate, evaluate_checkpoint, evaluate_detections, featurize, train_stage, EvalOptions,
    FeatureStore, PretrainPool, StageRun,
};
use jitter_core::training::{Stage, TrainConfig};

#[derive(Parser, Serialize)]
#[command(
    name = "jitter",
    version,
    about = "Temporal shuffle pretraining for sound event detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
enum Command {
    /// Synthesize the ten-class dataset.
    Datagen(DatagenArgs),
    /// Extract log-mel features and fit the standardizer.
    Featurize(FeaturizeArgs),
    /// Stage 1: shuffle-reconstruction pretraining of the context network.
    Pretrain(PretrainArgs),
    /// Stage 2: train the SED and AT heads on frozen features.
    Adapt(AdaptArgs),
    /// Stage 3: train the whole network end to end.
    Finetune(FinetuneArgs),
    /// Score a checkpoint or detection files with PSDS.
    Evaluate(EvaluateArgs),
    /// Run the ablation grids and emit their tables.
    Ablate(AblateArgs),
    /// Print one perturbation of a ramp sequence.
    DemoPerturb(DemoArgs),
}

#[derive(Args, Serialize)]
struct DatagenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    strong: usize,
    #[arg(long, default_value_t = 200)]
    weak: usize,
    #[arg(long, default_value_t = 400)]
    unlabeled: usize,
    #[arg(long, default_value_t = 100)]
    validation: usize,
}

#[derive(Args, Serialize)]
struct FeaturizeArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize, Clone)]
struct Common {
    /// Feature cache from `featurize`.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of the 6000-step schedule to run per stage.
    #[arg(long, default_value_t = 0.1)]
    scale: f64,
    /// JSON training configuration; flags override its seed and scale.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Block,
    Frame,
    Multitask,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum PoolArg {
    All,
    Strong,
}

#[derive(Args, Serialize, Clone)]
struct ShuffleArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Multitask)]
    mode: ModeArg,
    #[arg(long = "p-b", default_value_t = 0.75)]
    p_b: f64,
    #[arg(long = "p-fb", default_value_t = 0.5)]
    p_fb: f64,
    #[arg(long = "p-ff", default_value_t = 0.25)]
    p_ff: f64,
    #[arg(long = "flip-rate", default_value_t = 0.0)]
    flip_rate: f64,
    /// Noise scale λ added to shuffled blocks.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Apply both shuffles every iteration instead of alternating.
    #[arg(long)]
    parallel: bool,
}

impl ShuffleArgs {
    fn spec(&self, seed: u64) -> ShuffleSpec {
        ShuffleSpec {
            p_b: self.p_b,
            p_fb: self.p_fb,
            p_ff: self.p_ff,
            flip_rate: self.flip_rate,
            noise_scale: self.noise,
            mode: match self.mode {
                ModeArg::Block => ShuffleMode::Block,
                ModeArg::Frame => ShuffleMode::Frame,
                ModeArg::Multitask => ShuffleMode::Multitask,
            },
            seed,
            parallel_multitask: self.parallel,
            ..ShuffleSpec::default()
        }
    }
}

#[derive(Args, Serialize)]
struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    shuffle: ShuffleArgs,
    /// Clips reconstructed during pretraining.
    #[arg(long, value_enum, default_value_t = PoolArg::All)]
    pool: PoolArg,
}

#[derive(Args, Serialize)]
struct AdaptArgs {
    #[command(flatten)]
    common: Common,
    /// Pretraining run directory.
    #[arg(
        long,
        required_unless_present = "no_pretrain",
        conflicts_with = "no_pretrain"
    )]
    init: Option<PathBuf>,
    /// Start from random weights (the no-pretraining control).
    #[arg(long)]
    no_pretrain: bool,
    /// Drop the consistency term in this stage.
    #[arg(long)]
    no_consistency: bool,
}

#[derive(Args, Serialize)]
struct FinetuneArgs {
    #[command(flatten)]
    common: Common,
    /// Adaptation run directory.
    #[arg(long)]
    init: PathBuf,
}

#[derive(Args, Serialize, Clone)]
struct ScoringArgs {
    #[arg(long, default_value_t = 50)]
    thresholds: usize,
    /// Suppress a class when its clip probability is below 0.5 instead of
    /// capping frames by it.
    #[arg(long)]
    hard_gate: bool,
    /// Median-filter thresholded decisions rather than probabilities.
    #[arg(long)]
    filter_binary: bool,
    #[arg(long)]
    use_teacher: bool,
    #[arg(long, default_value_t = 0.7)]
    dtc: f64,
    #[arg(long, default_value_t = 0.7)]
    gtc: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha_st: f64,
    #[arg(long, default_value_t = 100.0)]
    e_max: f64,
}

impl ScoringArgs {
    fn options(&self) -> EvalOptions {
        let mut o = EvalOptions {
            n_thresholds: self.thresholds,
            mask: if self.hard_gate {
                MaskRule::HardGate
            } else {
                MaskRule::Min
            },
            filter_binary: self.filter_binary,
            use_teacher: self.use_teacher,
            ..EvalOptions::default()
        };
        o.params.dtc = self.dtc;
        o.params.gtc = self.gtc;
        o.params.alpha_st = self.alpha_st;
        o.params.e_max = self.e_max;
        o
    }
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    out: PathBuf,
    /// Training run directory holding a checkpoint.
    #[arg(long, requires = "features", conflicts_with = "detections")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    /// Detection TSV files, one operating point each.
    #[arg(long, num_args = 1.., requires = "dataset")]
    detections: Vec<PathBuf>,
    /// Dataset whose validation labels serve as ground truth.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[command(flatten)]
    scoring: ScoringArgs,
}

#[derive(Args, Serialize)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    /// Independent runs per cell; seeds are `seed..seed + seeds`.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[command(flatten)]
    scoring: ScoringArgs,
}

#[derive(Args, Serialize)]
struct DemoArgs {
    #[command(flatten)]
    shuffle: ShuffleArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    iteration: u64,
    #[arg(long, default_value_t = 100)]
    frames: usize,
}

fn train_config(common: &Common) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &common.config {
        Some(path) => serde_json::from_str(
            &std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?,
        )
        .with_context(|| format!("parsing {}", path.display()))?,
        None => TrainConfig::default(),
    };
    cfg.seed = common.seed;
    cfg.scale = common.scale;
    cfg.shuffle.seed = common.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn echo(cli: &Cli, extra: impl Serialize) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "args": serde_json::to_value(cli)?,
        "resolved": serde_json::to_value(extra)?,
    }))
}

fn stage_run(
    cli: &Cli,
    stage: Stage,
    common: &Common,
    init: Option<PathBuf>,
    train: TrainConfig,
    pool: PretrainPool,
) -> Result<()> {
    let store = FeatureStore::open(&common.features)?;
    let model = ModelConfig {
        num_classes: store.num_classes(),
        ..ModelConfig::default()
    };
    let run = StageRun {
        stage,
        init,
        out: common.out.clone(),
        config_echo: echo(cli, serde_json::json!({"model": &model, "train": &train}))?,
        model,
        train,
        pool,
    };
    let report = train_stage(&store, &run)?;
    eprintln!(
        "{}: {} steps, loss {:.5} -> {:.5}",
        stage.name(),
        report.summary.steps,
        report.summary.first_loss,
        report.summary.last_loss
    );
    if let (Some(a), Some(b)) = (report.recon_before, report.recon_after) {
        eprintln!("normalized reconstruction error {a:.5} -> {b:.5}");
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Datagen(a) => {
            let manifest = DatasetManifest {
                seed: a.seed,
                sizes: SplitSizes {
                    strong: a.strong,
                    weak: a.weak,
                    unlabeled: a.unlabeled,
                    validation: a.validation,
                },
                ..DatasetManifest::default()
            };
            build_dataset(&manifest, &a.out)?;
            std::fs::write(
                a.out.join("config.json"),
                serde_json::to_string_pretty(&echo(cli, &manifest)?)?,
            )?;
        }
        Command::Featurize(a) => {
            let fm = featurize(&a.dataset, &a.out)?;
            std::fs::write(
                a.out.join("config.json"),
                serde_json::to_string_pretty(&echo(cli, &fm)?)?,
            )?;
        }
        Command::Pretrain(a) => {
            let mut train = train_config(&a.common)?;
            train.shuffle = ShuffleSpec {
                block_size: train.shuffle.block_size,
                frame_block_size: train.shuffle.frame_block_size,
                ..a.shuffle.spec(a.common.seed)
            };
            train.validate()?;
            let pool = match a.pool {
                PoolArg::All => PretrainPool::All,
                PoolArg::Strong => PretrainPool::Strong,
            };
            stage_run(cli, Stage::Pretrain, &a.common, None, train, pool)?;
        }
        Command::Adapt(a) => {
            let mut train = train_config(&a.common)?;
            if a.no_consistency {
                train.weights.consistency_in_adapt = false;
            }
            let init = if a.no_pretrain { None } else { a.init.clone() };
            stage_run(cli, Stage::Adapt, &a.common, init, train, PretrainPool::All)?;
        }
        Command::Finetune(a) => {
            let train = train_config(&a.common)?;
            stage_run(
                cli,
                Stage::Finetune,
                &a.common,
                Some(a.init.clone()),
                train,
                PretrainPool::All,
            )?;
        }
        Command::Evaluate(a) => {
            let opts = a.scoring.options();
            let config = echo(cli, &opts)?;
            let report = match (&a.checkpoint, a.detections.is_empty()) {
                (Some(ckpt), true) => {
                    let features = a
                        .features
                        .as_ref()
                        .context("--checkpoint needs --features")?;
                    let store = FeatureStore::open(features)?;
                    evaluate_checkpoint(&store, ckpt, &a.out, &opts, &config)?
                }
                (None, false) => {
                    let dataset = a.dataset.as_ref().context("--detections needs --dataset")?;
                    evaluate_detections(
                        dataset,
                        &a.detections,
                        a.ground_truth.as_deref(),
                        &a.out,
                        &opts,
                        &config,
                    )?
                }
                _ => bail!("give either --checkpoint or --detections"),
            };
            println!("PSDS1 {:.6}", report.psds1);
        }
        Command::Ablate(a) => {
            let train = train_config(&a.common)?;
            let store = FeatureStore::open(&a.common.features)?;
            let model = ModelConfig {
                num_classes: store.num_classes(),
                ..ModelConfig::default()
            };
            if a.seeds == 0 {
                bail!("--seeds must be at least 1");
            }
            let seeds: Vec<u64> = (a.common.seed..a.common.seed + a.seeds).collect();
            let opts = a.scoring.options();
            std::fs::create_dir_all(&a.common.out)?;
            std::fs::write(
                a.common.out.join("config.json"),
                serde_json::to_string_pretty(&echo(
                    cli,
                    serde_json::json!({"model": &model, "train": &train, "eval": &opts}),
                )?)?,
            )?;
            let report = ablate(&store, &a.common.out, &model, &train, &seeds, &opts)?;
            for t in &report.tables {
                println!("{}", t.render());
            }
        }
        Command::DemoPerturb(a) => {
            let spec = a.shuffle.spec(a.seed);
            let seq = FrameSequence::new(a.frames, 1, (0..a.frames).map(|i| i as f64).collect())?;
            let (out, record, mode) =
                apply_mode(&seq, &spec, a.iteration, spec.mode_for(a.iteration))?;
            let order: Vec<f64> = out.data().to_vec();
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "mode": mode,
                    "frames": order,
                    "record": record,
                }))?
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    match run(&cli) {
        Ok(()) => {
            eprintln!("done in {:.1} s", start.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
