//! On-disk run directories: feature caches, per-stage training runs,
//! evaluation reports and the ablation grid.
//!
//! Every run directory holds `config.json` (the caller's configuration
//! echo), `report.json`, and for training stages `metrics.jsonl` plus a
//! `checkpoint/` directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{audio_dir, strong_labels_path, weak_labels_path, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::evaluation::{
    count_operating_point, parse_weak, psds, psds_from_counts, read_events, thresholds,
    write_events, ClipScores, EventTable, MaskRule, PostProcess, PsdsParams, ScoreReport,
};
use crate::features::{logmel, normalize, Standardizer, Waveform, CLIP_SECONDS};
use crate::model::{load_checkpoint, save_checkpoint, Model, ModelConfig, ParamSet};
use crate::numerics::{io as tensor_io, Tensor};
use crate::perturb::{ShuffleMode, ShuffleSpec};
use crate::training::{
    encode_all, multi_hot, rasterize, reconstruction_error, run_stage, Example, Stage,
    StageSummary, TrainConfig, TrainData, TrainState,
};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";
const FEATURES_FILE: &str = "features.json";
const STANDARDIZER_FILE: &str = "standardizer.json";

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Dependency {
            what: what.into(),
            path: path.to_path_buf(),
        })
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T> {
    require(path, what)?;
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Index of a feature cache.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub dataset: PathBuf,
    pub clips: BTreeMap<Split, Vec<String>>,
}

/// Extracts log-mel features of every clip to `out/<split>/<clip>.jtt` and
/// fits the standardizer on the strong split.
pub fn featurize(dataset: &Path, out: &Path) -> Result<FeatureManifest> {
    let manifest = DatasetManifest::load(dataset)?;
    let mut clips = BTreeMap::new();
    let mut strong_specs = Vec::new();
    for split in Split::ALL {
        let dir = out.join(split.name());
        std::fs::create_dir_all(&dir)?;
        let mut ids = Vec::new();
        for i in 0..manifest.sizes.get(split) {
            let id = DatasetManifest::clip_id(split, i);
            let wav = audio_dir(dataset, split).join(format!("{id}.wav"));
            require(&wav, "audio clip")?;
            let spec = logmel(&normalize(&Waveform::read_wav(&wav)?))?.frames;
            tensor_io::save(dir.join(format!("{id}.jtt")), &spec)?;
            if split == Split::Strong {
                strong_specs.push(spec);
            }
            ids.push(id);
        }
        clips.insert(split, ids);
    }
    let standardizer = Standardizer::fit(&strong_specs)?;
    write_json(&out.join(STANDARDIZER_FILE), &standardizer)?;
    let fm = FeatureManifest {
        dataset: std::fs::canonicalize(dataset)?,
        clips,
    };
    write_json(&out.join(FEATURES_FILE), &fm)?;
    Ok(fm)
}

/// A loaded feature cache with its dataset labels.
#[derive(Clone, Debug)]
pub struct FeatureStore {
    pub root: PathBuf,
    pub manifest: FeatureManifest,
    pub dataset: DatasetManifest,
    pub standardizer: Standardizer,
}

impl FeatureStore {
    pub fn open(root: &Path) -> Result<Self> {
        let manifest: FeatureManifest = read_json(&root.join(FEATURES_FILE), "feature cache")?;
        let dataset = DatasetManifest::load(&manifest.dataset)?;
        let standardizer = read_json(&root.join(STANDARDIZER_FILE), "feature standardizer")?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            dataset,
            standardizer,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.dataset.classes.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.dataset.class_names()
    }

    pub fn ids(&self, split: Split) -> &[String] {
        self.manifest
            .clips
            .get(&split)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn features(&self, split: Split, id: &str) -> Result<Tensor<f32>> {
        let path = self.root.join(split.name()).join(format!("{id}.jtt"));
        require(&path, "cached features")?;
        Ok(self.standardizer.apply(&tensor_io::load(path)?))
    }

    pub fn ground_truth(&self, split: Split) -> Result<EventTable> {
        read_events(
            strong_labels_path(&self.manifest.dataset, split),
            &self.class_names(),
        )
    }

    /// Clips of a split with the labels that split carries.
    pub fn examples(&self, split: Split) -> Result<Vec<Example>> {
        let c = self.num_classes();
        let strong = match split {
            Split::Strong | Split::Validation => Some(self.ground_truth(split)?),
            _ => None,
        };
        let weak = match split {
            Split::Weak => {
                let path = weak_labels_path(&self.manifest.dataset);
                require(&path, "weak labels")?;
                Some(parse_weak(
                    &std::fs::read_to_string(path)?,
                    &self.class_names(),
                )?)
            }
            _ => None,
        };
        self.ids(split)
            .iter()
            .map(|id| {
                let features = self.features(split, id)?;
                let frames = features.rows() / 5;
                Ok(Example {
                    id: id.clone(),
                    strong: strong.as_ref().map(|t| {
                        rasterize(
                            t.get(id).map(Vec::as_slice).unwrap_or(&[]),
                            c,
                            frames,
                            CLIP_SECONDS / frames as f64,
                        )
                    }),
                    weak: weak
                        .as_ref()
                        .map(|w| multi_hot(w.get(id).map(Vec::as_slice).unwrap_or(&[]), c)),
                    features,
                })
            })
            .collect()
    }
}

/// Which clips stage 1 reconstructs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretrainPool {
    #[default]
    All,
    Strong,
}

/// Inputs of one training stage run.
#[derive(Clone, Debug)]
pub struct StageRun {
    pub stage: Stage,
    /// Run directory of the preceding stage, if any.
    pub init: Option<PathBuf>,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pool: PretrainPool,
    /// Written verbatim as `config.json`.
    pub config_echo: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub summary: StageSummary,
    pub num_parameters: usize,
    /// Normalized reconstruction error on a fixed perturbation draw, before
    /// and after stage 1.
    pub recon_before: Option<f64>,
    pub recon_after: Option<f64>,
    pub init: Option<String>,
}

const RECON_EVAL_CLIPS: usize = 200;

/// Runs one stage into `run.out` and returns its report.
pub fn train_stage(store: &FeatureStore, run: &StageRun) -> Result<StageReport> {
    let model = Model::new(run.model.clone())?;
    if run.model.num_classes != store.num_classes() {
        return Err(Error::Config(format!(
            "model has {} classes, dataset {}",
            run.model.num_classes,
            store.num_classes()
        )));
    }
    let mut state = match &run.init {
        Some(dir) => {
            let (manifest, student, teacher) = load_checkpoint(&dir.join(CHECKPOINT_DIR))?;
            if manifest.config != run.model {
                return Err(Error::Checkpoint(
                    "checkpoint model config differs from this run".into(),
                ));
            }
            let stage = match manifest.stage.as_deref() {
                Some("pretrain") => Some(Stage::Pretrain),
                Some("adapt") => Some(Stage::Adapt),
                Some("finetune") => Some(Stage::Finetune),
                Some(other) => return Err(Error::Checkpoint(format!("unknown stage {other}"))),
                None => None,
            };
            TrainState {
                teacher,
                stage,
                step: manifest.step,
                ..TrainState::new(student)
            }
        }
        None => TrainState::new(model.init::<f32>(run.train.seed)),
    };
    run.stage.check_follows(state.stage)?;
    std::fs::create_dir_all(&run.out)?;
    write_json(&run.out.join(CONFIG_FILE), &run.config_echo)?;

    let data = match run.stage {
        Stage::Pretrain => TrainData {
            strong: store.examples(Split::Strong)?,
            weak: if run.pool == PretrainPool::All {
                store.examples(Split::Weak)?
            } else {
                Vec::new()
            },
            unlabeled: if run.pool == PretrainPool::All {
                store.examples(Split::Unlabeled)?
            } else {
                Vec::new()
            },
        },
        _ => TrainData {
            strong: store.examples(Split::Strong)?,
            weak: store.examples(Split::Weak)?,
            unlabeled: store.examples(Split::Unlabeled)?,
        },
    };

    let probe = |params: &ParamSet<f32>| -> Result<f64> {
        let clips: Vec<&Tensor<f32>> = data
            .all()
            .take(RECON_EVAL_CLIPS)
            .map(|e| &e.features)
            .collect();
        let latents = encode_all(&model, params, &clips)?;
        let spec = ShuffleSpec {
            seed: run.train.shuffle.seed ^ 0x5eed,
            ..run.train.shuffle.clone()
        };
        reconstruction_error(&model, params, &latents, &spec)
    };
    let recon_before = if run.stage == Stage::Pretrain {
        Some(probe(&state.student)?)
    } else {
        None
    };

    let mut metrics = BufWriter::new(File::create(run.out.join(METRICS_FILE))?);
    let mut log = |r: &crate::training::StepRecord| -> Result<()> {
        serde_json::to_writer(&mut metrics, r)?;
        metrics.write_all(b"\n")?;
        Ok(())
    };
    let summary = run_stage(
        &model,
        run.stage,
        run.train.steps(),
        &mut state,
        &data,
        &run.train,
        &mut log,
    )?;
    metrics.flush()?;
    drop(metrics);

    let recon_after = if run.stage == Stage::Pretrain {
        Some(probe(&state.student)?)
    } else {
        None
    };
    save_checkpoint(
        &run.out.join(CHECKPOINT_DIR),
        &run.model,
        Some(run.stage.name()),
        state.step,
        &state.student,
        state.teacher.as_ref(),
    )?;
    let report = StageReport {
        stage: run.stage,
        summary,
        num_parameters: state.student.num_scalars(),
        recon_before,
        recon_after,
        init: run.init.as_ref().map(|p| p.display().to_string()),
    };
    write_json(&run.out.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// Scoring options shared by every evaluation path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub params: PsdsParams,
    pub n_thresholds: usize,
    pub mask: MaskRule,
    pub filter_binary: bool,
    pub use_teacher: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            params: PsdsParams::default(),
            n_thresholds: 50,
            mask: MaskRule::Min,
            filter_binary: false,
            use_teacher: false,
        }
    }
}

/// Model outputs on the validation split.
pub fn predict_split(
    store: &FeatureStore,
    model: &Model,
    params: &ParamSet<f32>,
    split: Split,
) -> Result<BTreeMap<String, ClipScores>> {
    let mut out = BTreeMap::new();
    for id in store.ids(split) {
        let (s, w) = model.infer(params, &store.features(split, id)?)?;
        out.insert(
            id.clone(),
            ClipScores {
                strong: s.cast(),
                weak: w.data().iter().map(|&v| v as f64).collect(),
            },
        );
    }
    Ok(out)
}

/// Scores a trained checkpoint on the validation split and writes
/// `report.json` plus `detections.tsv` at the middle threshold.
pub fn evaluate_checkpoint(
    store: &FeatureStore,
    run_dir: &Path,
    out: &Path,
    opts: &EvalOptions,
    config_echo: &serde_json::Value,
) -> Result<ScoreReport> {
    let (manifest, student, teacher) = load_checkpoint(&run_dir.join(CHECKPOINT_DIR))?;
    let params = if opts.use_teacher {
        teacher.ok_or_else(|| Error::Checkpoint("checkpoint has no teacher".into()))?
    } else {
        student
    };
    let model = Model::new(manifest.config)?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join(CONFIG_FILE), config_echo)?;
    let scores = predict_split(store, &model, &params, Split::Validation)?;
    let gts = store.ground_truth(Split::Validation)?;
    let post = PostProcess {
        mask: opts.mask,
        windows: store.dataset.median_windows(),
        filter_binary: opts.filter_binary,
    };
    let taus = thresholds(opts.n_thresholds);
    let result = psds(&scores, &gts, &post, &taus, CLIP_SECONDS, &opts.params)?;
    let mut dets = EventTable::new();
    for (id, s) in &scores {
        let events = post.detect(&post.smooth(&s.strong, &s.weak)?, 0.5)?;
        if !events.is_empty() {
            dets.insert(id.clone(), events);
        }
    }
    write_events(out.join("detections.tsv"), &dets, &store.class_names())?;
    let report = ScoreReport::new(&result, opts.params, scores.len(), &store.class_names());
    write_json(&out.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// Scores detection files directly, one operating point per file, against
/// the validation labels of `dataset` (or `ground_truth` when given).
pub fn evaluate_detections(
    dataset: &Path,
    detections: &[PathBuf],
    ground_truth: Option<&Path>,
    out: &Path,
    opts: &EvalOptions,
    config_echo: &serde_json::Value,
) -> Result<ScoreReport> {
    let manifest = DatasetManifest::load(dataset)?;
    let names = manifest.class_names();
    let gt_path = ground_truth.map_or_else(
        || strong_labels_path(dataset, Split::Validation),
        Path::to_path_buf,
    );
    require(&gt_path, "ground truth")?;
    let gts = read_events(&gt_path, &names)?;
    let mut clips: Vec<String> = if ground_truth.is_some() {
        gts.keys().cloned().collect()
    } else {
        (0..manifest.sizes.validation)
            .map(|i| DatasetManifest::clip_id(Split::Validation, i))
            .collect()
    };
    clips.sort();
    if detections.is_empty() {
        return Err(Error::Config("no detection files given".into()));
    }
    let mut ops = Vec::new();
    for (i, path) in detections.iter().enumerate() {
        require(path, "detection file")?;
        let dets = read_events(path, &names)?;
        let counts =
            count_operating_point(&dets, &gts, &clips, names.len(), opts.params.tolerances())?;
        ops.push(((i + 1) as f64 / (detections.len() + 1) as f64, counts));
    }
    let hours = clips.len() as f64 * CLIP_SECONDS / 3600.0;
    let result = psds_from_counts(&ops, hours, &opts.params)?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join(CONFIG_FILE), config_echo)?;
    let report = ScoreReport::new(&result, opts.params, clips.len(), &names);
    write_json(&out.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// The three stages plus evaluation into `out/{pretrain,adapt,finetune,evaluate}`.
/// Without `shuffle` the pretraining stage is skipped.
pub fn run_pipeline(
    store: &FeatureStore,
    out: &Path,
    model: &ModelConfig,
    train: &TrainConfig,
    pretrain: bool,
    opts: &EvalOptions,
) -> Result<ScoreReport> {
    let echo = |stage: &str| {
        serde_json::json!({
            "command": stage,
            "model": model,
            "train": train,
            "pretrain": pretrain,
            "eval": opts,
        })
    };
    let mut init = None;
    let stages: &[Stage] = if pretrain {
        &[Stage::Pretrain, Stage::Adapt, Stage::Finetune]
    } else {
        &[Stage::Adapt, Stage::Finetune]
    };
    for &stage in stages {
        let dir = out.join(stage.name());
        train_stage(
            store,
            &StageRun {
                stage,
                init: init.clone(),
                out: dir.clone(),
                model: model.clone(),
                train: train.clone(),
                pool: PretrainPool::All,
                config_echo: echo(stage.name()),
            },
        )?;
        init = Some(dir);
    }
    let last = init.expect("at least one stage");
    evaluate_checkpoint(store, &last, &out.join("evaluate"), opts, &echo("evaluate"))
}

/// One configuration row of an ablation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    /// Column label → cell text (`-` for unused settings).
    pub settings: Vec<(String, String)>,
    /// `None` marks the no-pretraining control.
    pub shuffle: Option<ShuffleSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSection {
    /// Empty for the header rows above the first divider.
    pub title: String,
    pub rows: Vec<AblationRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub name: String,
    pub caption: String,
    pub columns: Vec<String>,
    pub sections: Vec<AblationSection>,
}

fn fmt_rate(v: f64) -> String {
    format!("{v}")
}

fn shuffle_row(
    method: &str,
    mode: ShuffleMode,
    p_b: f64,
    p_fb: f64,
    p_ff: f64,
    seed: u64,
) -> AblationRow {
    let spec = ShuffleSpec {
        p_b,
        p_fb,
        p_ff,
        mode,
        seed,
        ..ShuffleSpec::default()
    };
    let dash = |used: bool, v: f64| if used { fmt_rate(v) } else { "-".to_owned() };
    let block = mode != ShuffleMode::Frame;
    let frame = mode != ShuffleMode::Block;
    AblationRow {
        method: method.to_owned(),
        settings: vec![
            ("p_b".into(), dash(block, p_b)),
            ("p_fb".into(), dash(frame, p_fb)),
            ("p_ff".into(), dash(frame, p_ff)),
        ],
        shuffle: Some(spec),
    }
}

/// The three ablation grids with their row and column layout.
pub fn ablation_grid(seed: u64) -> Vec<AblationTable> {
    let baseline = AblationRow {
        method: "Baseline (no pretraining)".into(),
        settings: ["p_b", "p_fb", "p_ff"]
            .iter()
            .map(|c| (c.to_string(), "-".into()))
            .collect(),
        shuffle: None,
    };
    let rates = [0.25, 0.5, 0.75];
    let block = rates
        .iter()
        .map(|&p| {
            shuffle_row(
                "JiTTER (Block Shuffle)",
                ShuffleMode::Block,
                p,
                0.0,
                0.0,
                seed,
            )
        })
        .collect();
    let mut frame = Vec::new();
    for &fb in &rates {
        for &ff in &rates {
            frame.push(shuffle_row(
                "JiTTER (Frame Shuffle)",
                ShuffleMode::Frame,
                0.0,
                fb,
                ff,
                seed,
            ));
        }
    }
    let mt = |name: &str, b, fb, ff| shuffle_row(name, ShuffleMode::Multitask, b, fb, ff, seed);
    let multitask = vec![
        mt("JiTTER (Multitask) - Best", 0.75, 0.5, 0.25),
        mt("JiTTER (Multitask)", 0.5, 0.5, 0.25),
        mt("JiTTER (Multitask)", 0.75, 0.25, 0.25),
        mt("JiTTER (Multitask)", 0.75, 0.75, 0.25),
        mt("JiTTER (Multitask)", 0.75, 0.5, 0.5),
    ];
    let best = ShuffleSpec {
        seed,
        ..ShuffleSpec::default()
    };
    let reference = |col: &str| AblationRow {
        method: "JiTTER (Multitask)".into(),
        settings: vec![(col.into(), "-".into())],
        shuffle: Some(best.clone()),
    };
    let flips = rates
        .iter()
        .map(|&f| AblationRow {
            method: "JiTTER (Multitask + Flip)".into(),
            settings: vec![("flip rate".into(), fmt_rate(f))],
            shuffle: Some(ShuffleSpec {
                flip_rate: f,
                ..best.clone()
            }),
        })
        .collect();
    let noise = [0.05, 0.1, 0.2, 0.4]
        .iter()
        .map(|&l| AblationRow {
            method: "JiTTER (Multitask + Noise)".into(),
            settings: vec![("noise scale".into(), fmt_rate(l))],
            shuffle: Some(ShuffleSpec {
                noise_scale: l,
                ..best.clone()
            }),
        })
        .collect();
    let section = |title: &str, rows| AblationSection {
        title: title.into(),
        rows,
    };
    vec![
        AblationTable {
            name: "shuffle".into(),
            caption: "Block-level shuffle, frame-level shuffle and multitask learning".into(),
            columns: vec![
                "Method".into(),
                "p_b".into(),
                "p_fb".into(),
                "p_ff".into(),
                "PSDS".into(),
            ],
            sections: vec![
                section("", vec![baseline]),
                section("Block-Level Shuffle", block),
                section("Frame-Level Shuffle", frame),
                section(
                    "Multitask Learning (Block + Frame-Level Shuffle)",
                    multitask,
                ),
            ],
        },
        AblationTable {
            name: "flip".into(),
            caption: "Block flip on multitask pretraining".into(),
            columns: vec!["Method".into(), "flip rate".into(), "PSDS".into()],
            sections: vec![
                section("", vec![reference("flip rate")]),
                section("", flips),
            ],
        },
        AblationTable {
            name: "noise".into(),
            caption: "Noise injection on multitask pretraining".into(),
            columns: vec!["Method".into(), "noise scale".into(), "PSDS".into()],
            sections: vec![
                section("", vec![reference("noise scale")]),
                section("", noise),
            ],
        },
    ]
}

/// Stable directory name for a configuration.
pub fn cell_key(shuffle: Option<&ShuffleSpec>) -> String {
    match shuffle {
        None => "baseline".into(),
        Some(s) => format!(
            "{}_pb{}_pfb{}_pff{}_flip{}_noise{}",
            match s.mode {
                ShuffleMode::Block => "block",
                ShuffleMode::Frame => "frame",
                ShuffleMode::Multitask => "multitask",
            },
            s.p_b,
            s.p_fb,
            s.p_ff,
            s.flip_rate,
            s.noise_scale
        ),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: String,
    pub psds: Vec<f64>,
    pub mean: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilledRow {
    pub method: String,
    pub settings: Vec<(String, String)>,
    pub cell: String,
    pub psds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilledSection {
    pub title: String,
    pub rows: Vec<FilledRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilledTable {
    pub name: String,
    pub caption: String,
    pub columns: Vec<String>,
    pub sections: Vec<FilledSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub tables: Vec<FilledTable>,
    pub cells: BTreeMap<String, CellResult>,
}

impl FilledTable {
    /// Plain-text rendering with one `|`-separated line per row and a rule
    /// line between sections.
    pub fn render(&self) -> String {
        let mut out = format!("{}: {}\n", self.name, self.caption);
        out.push_str(&self.columns.join(" | "));
        out.push('\n');
        for s in &self.sections {
            out.push_str("---\n");
            if !s.title.is_empty() {
                out.push_str(&format!("[{}]\n", s.title));
            }
            for r in &s.rows {
                let mut cols = vec![r.method.clone()];
                cols.extend(r.settings.iter().map(|(_, v)| v.clone()));
                cols.push(format!("{:.4}", r.psds));
                out.push_str(&cols.join(" | "));
                out.push('\n');
            }
        }
        out
    }
}

/// Runs every distinct configuration of the grids for each seed and fills
/// the tables with the mean PSDS over seeds.
pub fn ablate(
    store: &FeatureStore,
    out: &Path,
    model: &ModelConfig,
    train: &TrainConfig,
    seeds: &[u64],
    opts: &EvalOptions,
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let grid = ablation_grid(0);
    let mut cells: BTreeMap<String, Option<ShuffleSpec>> = BTreeMap::new();
    for t in &grid {
        for s in &t.sections {
            for r in &s.rows {
                cells
                    .entry(cell_key(r.shuffle.as_ref()))
                    .or_insert_with(|| r.shuffle.clone());
            }
        }
    }
    let mut results = BTreeMap::new();
    for (key, shuffle) in &cells {
        let mut scores = Vec::new();
        for &seed in seeds {
            let mut cfg = train.clone();
            cfg.seed = seed;
            if let Some(s) = shuffle {
                cfg.shuffle = ShuffleSpec { seed, ..s.clone() };
            }
            let dir = out.join("cells").join(key).join(format!("seed{seed}"));
            let report = run_pipeline(store, &dir, model, &cfg, shuffle.is_some(), opts)?;
            scores.push(report.psds1);
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        results.insert(
            key.clone(),
            CellResult {
                key: key.clone(),
                psds: scores,
                mean,
                max,
            },
        );
    }
    let tables = grid
        .into_iter()
        .map(|t| FilledTable {
            name: t.name,
            caption: t.caption,
            columns: t.columns,
            sections: t
                .sections
                .into_iter()
                .map(|s| FilledSection {
                    title: s.title,
                    rows: s
                        .rows
                        .into_iter()
                        .map(|r| {
                            let key = cell_key(r.shuffle.as_ref());
                            FilledRow {
                                psds: results[&key].mean,
                                method: r.method,
                                settings: r.settings,
                                cell: key,
                            }
                        })
                        .collect(),
                })
                .collect(),
        })
        .collect();
    let report = AblationReport {
        seeds: seeds.to_vec(),
        tables,
        cells: results,
    };
    write_json(&out.join("tables.json"), &report)?;
    let text: String = report.tables.iter().map(|t| t.render() + "\n").collect();
    std::fs::write(out.join("tables.txt"), text)?;
    Ok(report)
}
