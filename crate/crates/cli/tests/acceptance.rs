//! Acceptance checks for the whole toolkit. Prints one PASS/FAIL line per
//! criterion and exits non-zero when any fails.

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;
#[path = "../../core/tests/scenes/mod.rs"]
mod scenes;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, ensure, Context as _, Result};
use jitter_core::evaluation::median_filter_1d;
use jitter_core::model::{
    load_checkpoint, Bound, ContextConfig, EncoderConfig, Model, ModelConfig, ParamSet,
};
use jitter_core::numerics::{grad_check_all, Real, Tensor};
use jitter_core::perturb::{
    apply, block_shuffle, frame_shuffle, invert, partition, AppliedMode, FrameSequence,
    ShuffleMode, ShuffleSpec,
};
use jitter_core::pipeline::AblationReport;
use jitter_core::training::rec_loss;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

const PIPELINE_SEEDS: [u64; 3] = [0, 1, 2];
const STAGES: [&str; 3] = ["pretrain", "adapt", "finetune"];

/// Shared scratch space. Datasets and pipeline runs are built on first use
/// and reused by later criteria.
struct Ctx {
    root: tempfile::TempDir,
    features: BTreeMap<String, PathBuf>,
    strong_pretrain: Option<(PathBuf, Duration)>,
    pipelines: BTreeMap<(u64, bool), Pipeline>,
}

#[derive(Clone)]
struct Pipeline {
    dir: PathBuf,
    elapsed: Duration,
    psds1: f64,
}

fn jitter(args: &[&str]) -> Result<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_jitter"))
        .args(args)
        .output()?;
    if !out.status.success() {
        bail!(
            "jitter {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        );
    }
    Ok(())
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    Ok(serde_json::from_str(&text)?)
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

impl Ctx {
    fn new() -> Result<Self> {
        Ok(Self {
            root: tempfile::tempdir()?,
            features: BTreeMap::new(),
            strong_pretrain: None,
            pipelines: BTreeMap::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.path().join(name)
    }

    /// `datagen` + `featurize` under `name`, cached.
    fn dataset(&mut self, name: &str, datagen: &[&str]) -> Result<PathBuf> {
        if let Some(p) = self.features.get(name) {
            return Ok(p.clone());
        }
        let data = self.path(&format!("{name}/data"));
        let feats = self.path(&format!("{name}/feats"));
        let mut args = vec!["datagen", "--out", s(&data)];
        args.extend_from_slice(datagen);
        jitter(&args)?;
        jitter(&["featurize", "--dataset", s(&data), "--out", s(&feats)])?;
        self.features.insert(name.to_owned(), feats.clone());
        Ok(feats)
    }

    fn seed_dataset(&mut self, seed: u64) -> Result<PathBuf> {
        let seed = seed.to_string();
        self.dataset(&format!("seed{seed}"), &["--seed", &seed])
    }

    /// Pretraining on the strong split only, at the default step count.
    /// Returns the run directory and the time the pretraining itself took.
    fn strong_pretrain(&mut self) -> Result<(PathBuf, Duration)> {
        if let Some(p) = &self.strong_pretrain {
            return Ok(p.clone());
        }
        let feats = self.seed_dataset(0)?;
        let out = self.path("strong_pretrain");
        let start = Instant::now();
        jitter(&[
            "pretrain",
            "--features",
            s(&feats),
            "--out",
            s(&out),
            "--pool",
            "strong",
        ])?;
        let run = (out, start.elapsed());
        self.strong_pretrain = Some(run.clone());
        Ok(run)
    }

    /// Full run for one seed, from dataset synthesis to evaluation.
    /// `pretrain = false` is the control with stage 1 skipped.
    fn pipeline(&mut self, seed: u64, pretrain: bool, tag: &str) -> Result<Pipeline> {
        let start = Instant::now();
        let name = format!("{tag}seed{seed}");
        let seed_s = seed.to_string();
        let feats = self.dataset(&name, &["--seed", &seed_s])?;
        let dir = self.path(&format!("{name}/{}", if pretrain { "pre" } else { "ctl" }));
        let stage = |d: &str| dir.join(d);
        let common = ["--features", s(&feats), "--seed", &seed_s];
        if pretrain {
            jitter(&[&["pretrain", "--out", s(&stage("pretrain"))][..], &common].concat())?;
            jitter(
                &[
                    &[
                        "adapt",
                        "--out",
                        s(&stage("adapt")),
                        "--init",
                        s(&stage("pretrain")),
                    ][..],
                    &common,
                ]
                .concat(),
            )?;
        } else {
            jitter(
                &[
                    &["adapt", "--out", s(&stage("adapt")), "--no-pretrain"][..],
                    &common,
                ]
                .concat(),
            )?;
        }
        jitter(
            &[
                &[
                    "finetune",
                    "--out",
                    s(&stage("finetune")),
                    "--init",
                    s(&stage("adapt")),
                ][..],
                &common,
            ]
            .concat(),
        )?;
        jitter(&[
            "evaluate",
            "--checkpoint",
            s(&stage("finetune")),
            "--features",
            s(&feats),
            "--out",
            s(&stage("evaluate")),
        ])?;
        let psds1 = read_json(&stage("evaluate").join("report.json"))?["psds1"]
            .as_f64()
            .ok_or_else(|| anyhow!("report without psds1"))?;
        Ok(Pipeline {
            dir,
            elapsed: start.elapsed(),
            psds1,
        })
    }

    fn cached_pipeline(&mut self, seed: u64, pretrain: bool) -> Result<Pipeline> {
        if let Some(p) = self.pipelines.get(&(seed, pretrain)) {
            return Ok(p.clone());
        }
        let p = self.pipeline(seed, pretrain, "")?;
        self.pipelines.insert((seed, pretrain), p.clone());
        Ok(p)
    }
}

fn random_seq(rng: &mut impl Rng, len: usize, dim: usize) -> FrameSequence<f32> {
    let data = (0..len * dim)
        .map(|_| rng.random_range(-3.0f32..3.0))
        .collect();
    FrameSequence::new(len, dim, data).unwrap()
}

fn bits(x: &[f32]) -> Vec<u32> {
    x.iter().map(|v| v.to_bits()).collect()
}

fn sorted_rows(x: &[f32], dim: usize) -> Vec<Vec<u32>> {
    let mut rows: Vec<Vec<u32>> = x.chunks(dim).map(bits).collect();
    rows.sort();
    rows
}

fn bijectivity(_: &mut Ctx) -> Result<String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let modes = [
        ShuffleMode::Block,
        ShuffleMode::Frame,
        ShuffleMode::Multitask,
    ];
    let sizes = [(5usize, 20usize), (4, 10), (10, 25), (2, 50)];
    let mut anchored = 0;
    for case in 0..1000 {
        let (block_size, frame_block_size) = sizes[rng.random_range(0..sizes.len())];
        let spec = ShuffleSpec {
            p_b: rng.random_range(0.0..=1.0),
            p_fb: rng.random_range(0.0..=1.0),
            p_ff: rng.random_range(0.0..=1.0),
            flip_rate: rng.random_range(0.0..=1.0),
            noise_scale: 0.0,
            mode: modes[rng.random_range(0..3)],
            seed: rng.random(),
            block_size,
            frame_block_size,
            ..ShuffleSpec::default()
        };
        let dim = 3;
        let x = random_seq(&mut rng, 100, dim);
        let (y, rec, applied) = apply(&x, &spec, rng.random_range(0..1000))?;
        ensure!(
            sorted_rows(x.data(), dim) == sorted_rows(y.data(), dim),
            "case {case}: multiset changed"
        );
        ensure!(
            bits(invert(&y, &rec)?.data()) == bits(x.data()),
            "case {case}: inverse differs"
        );
        if applied == AppliedMode::Block {
            let a = block_size * dim;
            let n = x.data().len();
            ensure!(
                bits(&x.data()[..a]) == bits(&y.data()[..a]),
                "case {case}: first block moved"
            );
            ensure!(
                bits(&x.data()[n - a..]) == bits(&y.data()[n - a..]),
                "case {case}: last block moved"
            );
            anchored += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.1} s");
    Ok(format!(
        "1000 pairs ({anchored} block-mode with anchors checked) in {secs:.2} s"
    ))
}

fn grid_shapes(_: &mut Ctx) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let blocks = partition(100, 5)?;
    ensure!(blocks.num_blocks == 20);
    for _ in 0..100 {
        let x = random_seq(&mut rng, 100, 2);
        let (y, rec) = block_shuffle(&x, blocks, 0.75, 0.0, 0.0, &mut rng)?;
        let moved = (0..20)
            .filter(|&b| x.data()[b * 10..(b + 1) * 10] != y.data()[b * 10..(b + 1) * 10])
            .count();
        ensure!(
            rec.chosen.len() == 15 && moved == 15,
            "block shuffle moved {moved}"
        );
        ensure!(
            !rec.chosen.contains(&0) && !rec.chosen.contains(&19),
            "anchor chosen"
        );
    }
    let frames = partition(100, 20)?;
    ensure!(frames.num_blocks == 5);
    for _ in 0..100 {
        let x = random_seq(&mut rng, 100, 2);
        let (y, rec) = frame_shuffle(&x, frames, 0.5, 0.25, &mut rng)?;
        ensure!(
            rec.frame_perms.len() == 3,
            "{} blocks chosen",
            rec.frame_perms.len()
        );
        for &b in rec.frame_perms.keys() {
            let changed = (0..20)
                .filter(|&i| x.frame(b * 20 + i) != y.frame(b * 20 + i))
                .count();
            ensure!(changed == 5, "block {b}: {changed} positions moved");
        }
    }
    Ok("B=20 p_b=0.75 moves 15 blocks; B=5 F=20 moves 5 positions in each of 3 blocks".into())
}

fn noise_statistics(_: &mut Ctx) -> Result<String> {
    // One chosen all-zero block of 100 × 500 per draw, two draws.
    let mut samples = Vec::with_capacity(100_000);
    for seed in 0..2u64 {
        let x = FrameSequence::new(300, 500, vec![0.0f64; 300 * 500])?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (y, rec) = block_shuffle(&x, partition(300, 100)?, 1.0 / 3.0, 0.0, 0.1, &mut rng)?;
        ensure!(rec.chosen.len() == 1);
        samples.extend_from_slice(&y.data()[100 * 500..200 * 500]);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let std = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    ensure!(mean.abs() <= 0.005, "mean {mean}");
    ensure!((0.095..=0.105).contains(&std), "std {std}");
    Ok(format!(
        "{} samples, mean {mean:.5}, std {std:.5}",
        samples.len()
    ))
}

fn randn(rng: &mut impl Rng, shape: [usize; 2]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal))
}

fn rpe_names<T: Real>(params: &ParamSet<T>) -> Vec<String> {
    params
        .names()
        .filter(|n| n.contains(".rpe."))
        .cloned()
        .collect()
}

fn gradient_checks(_: &mut Ctx) -> Result<String> {
    let start = Instant::now();
    let model = Model::new(ModelConfig {
        encoder: EncoderConfig {
            n_mels: 4,
            latent_dim: 8,
            stages: EncoderConfig::default().stages,
        },
        context: ContextConfig {
            layers: 1,
            heads: 2,
            dim: 8,
            ff_dim: 16,
            max_distance: 9,
        },
        num_classes: 3,
        input_frames: 50,
    })?;
    let t = model.config.latent_frames();
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut params = model.init::<f64>(seed);
        for n in rpe_names(&params) {
            for v in params.get_mut(&n).unwrap().data_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
        let x = randn(&mut rng, [t, 8]);
        let spec = ShuffleSpec {
            block_size: 2,
            frame_block_size: 5,
            seed,
            ..ShuffleSpec::default()
        };
        let (view, _, _) = apply(&FrameSequence::from_tensor(&x)?, &spec, seed)?;
        let names: Vec<String> = params.names().cloned().collect();
        let mut inputs: Vec<Tensor<f64>> = params.iter().map(|(_, t)| t.clone()).collect();
        inputs.push(view.to_tensor());
        inputs.push(x);
        let err = grad_check_all(
            |g, vars| {
                let n = names.len();
                let p: Bound = names
                    .iter()
                    .cloned()
                    .zip(vars[..n].iter().copied())
                    .collect();
                let ctx = model.context_forward(g, &p, vars[n])?;
                let pred = model.reconstruct(g, &p, ctx)?;
                rec_loss(g, pred, vars[n + 1])
            },
            &inputs,
            1e-5,
        )?;
        ensure!(err < 1e-4, "seed {seed}: relative error {err:e}");
        worst = worst.max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1} s");
    Ok(format!(
        "20 seeds, max relative error {worst:.2e}, {secs:.1} s"
    ))
}

fn permute_rows(t: &Tensor<f32>, perm: &[usize]) -> Tensor<f32> {
    let rows: Vec<Vec<f32>> = perm.iter().map(|&i| t.row(i).to_vec()).collect();
    Tensor::from_rows(&rows).unwrap()
}

/// Largest equivariance error for each of `trials` random permutations.
fn equivariance_errors(
    model: &Model,
    params: &ParamSet<f32>,
    rng: &mut impl Rng,
    trials: usize,
) -> Result<Vec<f64>> {
    let t = model.config.latent_frames();
    let x: Tensor<f32> = randn(rng, [t, model.config.context.dim]).cast();
    let y = model.context_tensor(params, &x)?;
    let mut errs = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut perm: Vec<usize> = (0..t).collect();
        perm.shuffle(rng);
        let yp = model.context_tensor(params, &permute_rows(&x, &perm))?;
        errs.push(yp.max_abs_diff(&permute_rows(&y, &perm)));
    }
    Ok(errs)
}

fn rpe_control(ctx: &mut Ctx) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = Model::new(ModelConfig::default())?;
    let mut zero_worst = 0.0f64;
    for seed in 0..5 {
        let params = model.init::<f32>(seed);
        for n in rpe_names(&params) {
            ensure!(
                params.get(&n).unwrap().data().iter().all(|&v| v == 0.0),
                "{n} not zero at init"
            );
        }
        let errs = equivariance_errors(&model, &params, &mut rng, 20)?;
        zero_worst = errs.into_iter().fold(zero_worst, f64::max);
    }
    ensure!(
        zero_worst < 1e-5,
        "zero-bias equivariance error {zero_worst:e}"
    );

    let (run, _) = ctx.strong_pretrain()?;
    let (manifest, trained, _) = load_checkpoint(&run.join("checkpoint"))?;
    let model = Model::new(manifest.config)?;
    let bias_max = rpe_names(&trained)
        .iter()
        .flat_map(|n| trained.get(n).unwrap().data().to_vec())
        .fold(0.0f32, |m, v| m.max(v.abs()));
    ensure!(bias_max > 0.0, "trained biases are all zero");
    let trials = 200;
    let errs = equivariance_errors(&model, &trained, &mut rng, trials)?;
    let violated = errs.iter().filter(|&&e| e > 1e-3).count();
    ensure!(
        violated * 100 >= 95 * trials,
        "only {violated}/{trials} permutations break equivariance"
    );
    Ok(format!(
        "zero biases: max error {zero_worst:.1e}; trained biases (max |b| {bias_max:.3}): {violated}/{trials} permutations violate"
    ))
}

fn pretraining_efficacy(ctx: &mut Ctx) -> Result<String> {
    let (run, elapsed) = ctx.strong_pretrain()?;
    let secs = elapsed.as_secs_f64();
    let report = read_json(&run.join("report.json"))?;
    let before = report["recon_before"]
        .as_f64()
        .ok_or_else(|| anyhow!("no recon_before"))?;
    let after = report["recon_after"]
        .as_f64()
        .ok_or_else(|| anyhow!("no recon_after"))?;
    let steps = report["summary"]["steps"].as_u64();
    ensure!(steps == Some(600), "ran {steps:?} steps");
    let reduction = 1.0 - after / before;
    ensure!(
        reduction >= 0.5,
        "reconstruction error {before:.4} -> {after:.4} ({:.1}%)",
        100.0 * reduction
    );
    ensure!(secs < 600.0, "took {secs:.0} s");
    Ok(format!(
        "reconstruction error {before:.4} -> {after:.4} ({:.1}% lower) in {secs:.0} s",
        100.0 * reduction
    ))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn end_to_end(ctx: &mut Ctx) -> Result<String> {
    let mut pre = Vec::new();
    let mut ctl = Vec::new();
    let mut lines = Vec::new();
    for seed in PIPELINE_SEEDS {
        let p = ctx.cached_pipeline(seed, true)?;
        let c = ctx.cached_pipeline(seed, false)?;
        for run in [&p, &c] {
            ensure!(
                run.elapsed.as_secs() < 30 * 60,
                "seed {seed}: {:?}",
                run.elapsed
            );
        }
        lines.push(format!(
            "seed {seed}: {:.4} vs {:.4} ({:.0} s / {:.0} s)",
            p.psds1,
            c.psds1,
            p.elapsed.as_secs_f64(),
            c.elapsed.as_secs_f64()
        ));
        pre.push(p.psds1);
        ctl.push(c.psds1);
    }
    let (mp, mc) = (median(pre), median(ctl));
    let detail = format!(
        "median PSDS1 {mp:.4} pretrained vs {mc:.4} control; {}",
        lines.join("; ")
    );
    ensure!(mp > mc, "{detail}");
    Ok(detail)
}

fn psds_oracle(_: &mut Ctx) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    let mut scored = 0;
    for i in 0..1000 {
        let case = scenes::random_case(&mut rng);
        let slow = oracle::psds(&case.scene, &case.post, &case.taus, &case.params);
        match (scenes::fast_psds(&case), slow) {
            (Ok(a), Some(b)) => {
                ensure!((a - b).abs() < 1e-9, "scene {i}: {a} vs {b}");
                worst = worst.max((a - b).abs());
                scored += 1;
            }
            (Err(jitter_core::Error::UndefinedScore(_)), None) => {}
            (a, b) => bail!("scene {i}: fast {a:?}, reference {b:?}"),
        }
    }
    for (alpha, e_max, value) in scenes::HAND_EXPECTED {
        let case = scenes::hand_case(alpha, e_max);
        let fast = scenes::fast_psds(&case)?;
        let slow = oracle::psds(&case.scene, &case.post, &case.taus, &case.params).unwrap();
        ensure!(
            (fast - slow).abs() < 1e-9 && (fast - value).abs() < 1e-9,
            "hand scene: {fast} / {slow} / {value}"
        );
    }
    for _ in 0..20 {
        let (perfect, silent) = scenes::perfect_and_silent(&mut rng);
        let (p, z) = (scenes::fast_psds(&perfect)?, scenes::fast_psds(&silent)?);
        ensure!(p == 1.0 && z == 0.0, "perfect {p}, silent {z}");
    }
    Ok(format!(
        "{scored} scored random scenes (max diff {worst:.1e}), hand scene, perfect 1.0, silent 0.0"
    ))
}

fn median_oracle(_: &mut Ctx) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..10_000 {
        let w = if i % 2 == 0 { 5 } else { 20 };
        let n = rng.random_range(w..=120);
        let coarse = rng.random_bool(0.5);
        let x: Vec<f64> = (0..n)
            .map(|_| {
                if coarse {
                    rng.random_range(0..4) as f64 / 3.0
                } else {
                    rng.random_range(0.0..1.0)
                }
            })
            .collect();
        ensure!(
            median_filter_1d(&x, w)? == oracle::median(&x, w),
            "sequence {i} (n {n}, w {w})"
        );
    }
    Ok("10000 sequences, windows 5 and 20".into())
}

fn determinism(ctx: &mut Ctx) -> Result<String> {
    let first = ctx.cached_pipeline(0, true)?;
    let second = ctx.pipeline(0, true, "rerun_")?;
    for stage in STAGES {
        let a = std::fs::read(first.dir.join(stage).join("metrics.jsonl"))?;
        let b = std::fs::read(second.dir.join(stage).join("metrics.jsonl"))?;
        ensure!(!a.is_empty(), "{stage}: empty metrics");
        ensure!(a == b, "{stage}: metrics differ");
    }
    ensure!(
        first.psds1 == second.psds1,
        "PSDS1 {} vs {}",
        first.psds1,
        second.psds1
    );
    Ok(format!(
        "seed 0 rerun: metrics.jsonl identical for all stages, PSDS1 {:.6}",
        second.psds1
    ))
}

fn ablation_tables(ctx: &mut Ctx) -> Result<String> {
    let sizes = [
        "--strong",
        "4",
        "--weak",
        "4",
        "--unlabeled",
        "4",
        "--validation",
        "4",
    ];
    let feats = ctx.dataset("ablate", &sizes)?;
    let out = ctx.path("ablate/out");
    jitter(&[
        "ablate",
        "--features",
        s(&feats),
        "--out",
        s(&out),
        "--scale",
        "0.001",
    ])?;
    ensure!(out.join("tables.txt").is_file(), "no tables.txt");
    let report: AblationReport = serde_json::from_value(read_json(&out.join("tables.json"))?)?;

    let expected: [(&str, &[&str], &[usize]); 3] = [
        (
            "shuffle",
            &["Method", "p_b", "p_fb", "p_ff", "PSDS"],
            &[1, 3, 9, 5],
        ),
        ("flip", &["Method", "flip rate", "PSDS"], &[1, 3]),
        ("noise", &["Method", "noise scale", "PSDS"], &[1, 4]),
    ];
    ensure!(report.tables.len() == 3, "{} tables", report.tables.len());
    let mut rows = 0;
    for (table, (name, columns, sections)) in report.tables.iter().zip(expected) {
        ensure!(
            table.name == name,
            "table {} where {name} expected",
            table.name
        );
        ensure!(
            table.columns == columns,
            "{name}: columns {:?}",
            table.columns
        );
        let counts: Vec<usize> = table.sections.iter().map(|s| s.rows.len()).collect();
        ensure!(counts == sections, "{name}: section sizes {counts:?}");
        let setting_cols = &columns[1..columns.len() - 1];
        for row in table.sections.iter().flat_map(|s| &s.rows) {
            ensure!(!row.method.is_empty(), "{name}: unlabeled row");
            let keys: Vec<&str> = row.settings.iter().map(|(k, _)| k.as_str()).collect();
            ensure!(
                keys == setting_cols,
                "{name}/{}: settings {keys:?}",
                row.method
            );
            ensure!(
                row.settings.iter().all(|(_, v)| !v.is_empty()),
                "{name}/{}: blank setting",
                row.method
            );
            let cell = report
                .cells
                .get(&row.cell)
                .ok_or_else(|| anyhow!("{name}: no cell {}", row.cell))?;
            ensure!(
                row.psds.is_finite() && row.psds == cell.mean,
                "{name}/{}: psds {}",
                row.method,
                row.psds
            );
            rows += 1;
        }
    }
    let settings = |t: usize, sec: usize| -> Vec<Vec<String>> {
        report.tables[t].sections[sec]
            .rows
            .iter()
            .map(|r| r.settings.iter().map(|(_, v)| v.clone()).collect())
            .collect()
    };
    let v = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    ensure!(
        settings(0, 0) == vec![v(&["-", "-", "-"])],
        "baseline row {:?}",
        settings(0, 0)
    );
    ensure!(
        settings(0, 1)
            == vec![
                v(&["0.25", "-", "-"]),
                v(&["0.5", "-", "-"]),
                v(&["0.75", "-", "-"])
            ],
        "block rows {:?}",
        settings(0, 1)
    );
    ensure!(
        settings(1, 1) == vec![v(&["0.25"]), v(&["0.5"]), v(&["0.75"])],
        "flip rows"
    );
    ensure!(
        settings(2, 1) == vec![v(&["0.05"]), v(&["0.1"]), v(&["0.2"]), v(&["0.4"])],
        "noise rows"
    );
    ensure!(
        report.cells.len() == 25,
        "{} distinct cells",
        report.cells.len()
    );
    Ok(format!(
        "3 tables, {rows} rows over {} configurations",
        report.cells.len()
    ))
}

type Check = fn(&mut Ctx) -> Result<String>;

fn main() -> ExitCode {
    let checks: [(&str, Check); 11] = [
        ("perturbation bijectivity", bijectivity),
        ("grid shape counts", grid_shapes),
        ("noise statistics", noise_statistics),
        ("gradient checks", gradient_checks),
        ("relative position control", rpe_control),
        ("pretraining efficacy", pretraining_efficacy),
        ("end-to-end pipeline", end_to_end),
        ("PSDS oracle equivalence", psds_oracle),
        ("median filter oracle", median_oracle),
        ("determinism", determinism),
        ("ablation tables", ablation_tables),
    ];
    let mut ctx = match Ctx::new() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("cannot create scratch directory: {e}");
            return ExitCode::FAILURE;
        }
    };
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = check(&mut ctx);
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {id:>2} {name} [{secs:.1} s]: {detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {id:>2} {name} [{secs:.1} s]: {e:#}");
            }
        }
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
