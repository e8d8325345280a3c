//! Losses, augmentations, mean teacher and the three-stage schedule.

mod augment;
mod labels;
mod losses;
mod optim;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Component, Model, ParamSet};
use crate::numerics::{Graph, Tensor};
use crate::perturb::{apply_mode, iteration_rng, AppliedMode, FrameSequence, ShuffleSpec};

pub use augment::{
    augment, filter_augment, frame_shift, freq_warp, mixup, time_mask, AugmentationConfig, Example,
};
pub use labels::{multi_hot, project_weak, rasterize};
pub use losses::{
    jitter_loss, rec_loss, rec_loss_value, sed_loss, ClipTargets, LossWeights, SedLoss,
};
pub use optim::{cosine_lr, ema_update, AdamW};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Adapt,
    Finetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Adapt => "adapt",
            Stage::Finetune => "finetune",
        }
    }

    /// Components updated during the stage.
    pub fn trainable(self) -> &'static [Component] {
        match self {
            Stage::Pretrain => &[Component::Context, Component::Recon],
            Stage::Adapt => &[Component::Sed, Component::At],
            Stage::Finetune => &[
                Component::Encoder,
                Component::Context,
                Component::Sed,
                Component::At,
            ],
        }
    }

    /// Errors unless `self` may follow `previous`. Adaptation may start
    /// from scratch, which is how the no-pretraining control runs.
    pub fn check_follows(self, previous: Option<Stage>) -> Result<()> {
        let ok = matches!(
            (previous, self),
            (None, Stage::Pretrain)
                | (None, Stage::Adapt)
                | (Some(Stage::Pretrain), Stage::Adapt)
                | (Some(Stage::Adapt), Stage::Finetune)
        );
        if ok {
            Ok(())
        } else {
            let prev = previous.map_or("nothing", Stage::name);
            Err(Error::Schedule(format!(
                "{} cannot follow {prev}",
                self.name()
            )))
        }
    }

    fn salt(self) -> u64 {
        match self {
            Stage::Pretrain => 0x9e37_79b9_7f4a_7c15,
            Stage::Adapt => 0xbf58_476d_1ce4_e5b9,
            Stage::Finetune => 0x94d0_49bb_1331_11eb,
        }
    }
}

/// Clips per SED step by label type.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchComposition {
    pub strong: usize,
    pub weak: usize,
    pub unlabeled: usize,
}

impl Default for BatchComposition {
    fn default() -> Self {
        Self {
            strong: 2,
            weak: 2,
            unlabeled: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub pretrain: f64,
    pub adapt: f64,
    pub finetune: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            pretrain: 1e-3,
            adapt: 1e-3,
            finetune: 1e-4,
        }
    }
}

impl LearningRates {
    pub fn for_stage(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Pretrain => self.pretrain,
            Stage::Adapt => self.adapt,
            Stage::Finetune => self.finetune,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    /// Multiplies `base_steps`.
    pub scale: f64,
    pub base_steps: u64,
    pub batch: BatchComposition,
    pub pretrain_batch: usize,
    pub lr: LearningRates,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub weights: LossWeights,
    pub augment: AugmentationConfig,
    pub shuffle: ShuffleSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scale: 0.1,
            base_steps: 6000,
            batch: BatchComposition::default(),
            pretrain_batch: 8,
            lr: LearningRates::default(),
            weight_decay: 1e-4,
            ema_decay: 0.999,
            weights: LossWeights::default(),
            augment: AugmentationConfig::default(),
            shuffle: ShuffleSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn steps(&self) -> u64 {
        ((self.base_steps as f64 * self.scale).round() as u64).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!(
                "step scale {} must be positive",
                self.scale
            )));
        }
        if self.pretrain_batch == 0
            || self.batch.strong + self.batch.weak + self.batch.unlabeled == 0
        {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!(
                "EMA decay {} outside [0, 1]",
                self.ema_decay
            )));
        }
        self.weights.validate()?;
        self.shuffle.validate()
    }
}

/// Clips available to training, by split.
#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub strong: Vec<Example>,
    pub weak: Vec<Example>,
    pub unlabeled: Vec<Example>,
}

impl TrainData {
    pub fn all(&self) -> impl Iterator<Item = &Example> {
        self.strong.iter().chain(&self.weak).chain(&self.unlabeled)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub student: ParamSet<f32>,
    pub teacher: Option<ParamSet<f32>>,
    pub optimizer: AdamW,
    /// Last completed stage.
    pub stage: Option<Stage>,
    /// Optimizer steps over all stages.
    pub step: u64,
}

impl TrainState {
    pub fn new(student: ParamSet<f32>) -> Self {
        Self {
            student,
            teacher: None,
            optimizer: AdamW::new(0.0),
            stage: None,
            step: 0,
        }
    }
}

/// One JSONL metrics line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: Stage,
    pub step: u64,
    pub global_step: u64,
    pub lr: f64,
    pub loss: f64,
    #[serde(flatten)]
    pub terms: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub steps: u64,
    pub first_loss: f64,
    pub last_loss: f64,
    pub clamp_warnings: usize,
}

fn is_trainable(stage: Stage) -> impl Fn(&str) -> bool {
    move |name: &str| Component::of(name).is_some_and(|c| stage.trainable().contains(&c))
}

/// Frozen-encoder latents of every clip.
pub fn encode_all(
    model: &Model,
    params: &ParamSet<f32>,
    clips: &[&Tensor<f32>],
) -> Result<Vec<Tensor<f32>>> {
    clips
        .iter()
        .map(|x| model.encode_tensor(params, x))
        .collect()
}

/// Block-shuffled and frame-shuffled views; either may be absent.
type Views = (Option<Tensor<f32>>, Option<Tensor<f32>>);

/// Perturbed views of one latent sequence for a pretraining iteration.
fn views(x: &Tensor<f32>, spec: &ShuffleSpec, step: u64, iteration: u64) -> Result<Views> {
    let seq = FrameSequence::from_tensor(x)?;
    let modes: Vec<AppliedMode> =
        if spec.parallel_multitask && spec.mode == crate::perturb::ShuffleMode::Multitask {
            vec![AppliedMode::Block, AppliedMode::Frame]
        } else {
            vec![spec.mode_for(step)]
        };
    let mut block = None;
    let mut frame = None;
    for m in modes {
        let (out, _, _) = apply_mode(&seq, spec, iteration, m)?;
        match m {
            AppliedMode::Block => block = Some(out.to_tensor()),
            AppliedMode::Frame => frame = Some(out.to_tensor()),
        }
    }
    Ok((block, frame))
}

/// Mean normalized reconstruction error `rec / (T·D)` over `latents`, with
/// perturbation `i` drawn as iteration `i` of `spec`.
pub fn reconstruction_error(
    model: &Model,
    params: &ParamSet<f32>,
    latents: &[Tensor<f32>],
    spec: &ShuffleSpec,
) -> Result<f64> {
    if latents.is_empty() {
        return Err(Error::Contract("no sequences to score".into()));
    }
    let mut total = 0.0;
    for (i, x) in latents.iter().enumerate() {
        let (b, f) = views(x, spec, i as u64, i as u64)?;
        for v in [b, f].into_iter().flatten() {
            let ctx = model.context_tensor(params, &v)?;
            let mut g = Graph::new();
            let bound = params.bind(&mut g, |_| false)?;
            let c = g.constant(ctx)?;
            let r = model.reconstruct(&mut g, &bound, c)?;
            total += rec_loss_value(g.value(r), x)? / x.len() as f64;
        }
    }
    Ok(total / latents.len() as f64)
}

fn collect_grads(
    g: &Graph<f32>,
    loss: crate::numerics::Var,
    bound: &crate::model::Bound,
    stage: Stage,
) -> Result<BTreeMap<String, Vec<f32>>> {
    let mut grads = g.backward(loss)?;
    let trainable = is_trainable(stage);
    let mut out = BTreeMap::new();
    for (name, &v) in bound.iter() {
        if trainable(name) {
            if let Some(gr) = grads.take(v) {
                out.insert(name.clone(), gr);
            }
        }
    }
    Ok(out)
}

/// Runs `steps` optimizer steps of `stage`, calling `log` once per step.
pub fn run_stage(
    model: &Model,
    stage: Stage,
    steps: u64,
    state: &mut TrainState,
    data: &TrainData,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&StepRecord) -> Result<()>,
) -> Result<StageSummary> {
    stage.check_follows(state.stage)?;
    cfg.validate()?;
    if steps == 0 {
        return Err(Error::Config("stage needs at least one step".into()));
    }
    state.optimizer = AdamW::new(cfg.weight_decay);
    let summary = match stage {
        Stage::Pretrain => pretrain(model, steps, state, data, cfg, log)?,
        Stage::Adapt | Stage::Finetune => {
            if stage == Stage::Adapt || state.teacher.is_none() {
                state.teacher = Some(state.student.clone());
            }
            sed_stage(model, stage, steps, state, data, cfg, log)?
        }
    };
    state.stage = Some(stage);
    Ok(summary)
}

fn pretrain(
    model: &Model,
    steps: u64,
    state: &mut TrainState,
    data: &TrainData,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&StepRecord) -> Result<()>,
) -> Result<StageSummary> {
    let clips: Vec<&Tensor<f32>> = data.all().map(|e| &e.features).collect();
    if clips.is_empty() {
        return Err(Error::Data("pretraining needs at least one clip".into()));
    }
    let latents = encode_all(model, &state.student, &clips)?;
    let norm = latents[0].len() as f64;
    let base_lr = cfg.lr.for_stage(Stage::Pretrain);
    let trainable = is_trainable(Stage::Pretrain);
    let mut first = None;
    let mut last = 0.0;
    let mut warnings = 0;
    for step in 0..steps {
        let mut rng = iteration_rng(cfg.seed ^ Stage::Pretrain.salt(), step);
        let mut g = Graph::<f32>::new();
        let bound = state.student.bind(&mut g, &trainable)?;
        let mut terms = Vec::with_capacity(cfg.pretrain_batch);
        let mut per_mode: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for i in 0..cfg.pretrain_batch {
            let x = &latents[rng.random_range(0..latents.len())];
            let iteration = step * cfg.pretrain_batch as u64 + i as u64;
            let (block, frame) = views(x, &cfg.shuffle, step, iteration)?;
            let target = g.constant(x.clone())?;
            let vb = block.map(|t| g.constant(t)).transpose()?;
            let vf = frame.map(|t| g.constant(t)).transpose()?;
            let mut net = |g: &mut Graph<f32>, v| {
                let c = model.context_forward(g, &bound, v)?;
                model.reconstruct(g, &bound, c)
            };
            let l = jitter_loss(&mut g, &mut net, vb, vf, target)?;
            let key = match (vb.is_some(), vf.is_some()) {
                (true, true) => "rec_parallel",
                (true, false) => "rec_block",
                _ => "rec_frame",
            };
            let e = per_mode.entry(key.to_owned()).or_default();
            e.0 += g.value(l).data()[0] as f64;
            e.1 += 1;
            terms.push(l);
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = g.add(total, t)?;
        }
        let loss = g.scale(total, 1.0 / terms.len() as f32)?;
        let loss_value = g.value(loss).data()[0] as f64;
        let grads = collect_grads(&g, loss, &bound, Stage::Pretrain)?;
        warnings += g.clamp_warnings();
        let lr = cosine_lr(base_lr, step, steps);
        state.optimizer.step(&mut state.student, &grads, lr)?;
        state.step += 1;
        first.get_or_insert(loss_value);
        last = loss_value;
        let mut terms = BTreeMap::new();
        terms.insert("rec_loss_norm".to_owned(), loss_value / norm);
        for (k, (sum, n)) in per_mode {
            terms.insert(k, sum / n as f64);
        }
        log(&StepRecord {
            stage: Stage::Pretrain,
            step,
            global_step: state.step,
            lr,
            loss: loss_value,
            terms,
        })?;
    }
    Ok(StageSummary {
        stage: Stage::Pretrain,
        steps,
        first_loss: first.unwrap_or(0.0),
        last_loss: last,
        clamp_warnings: warnings,
    })
}

fn sample<'a, R: Rng>(pool: &'a [Example], n: usize, rng: &mut R) -> Vec<&'a Example> {
    if pool.is_empty() {
        return Vec::new();
    }
    (0..n)
        .map(|_| &pool[rng.random_range(0..pool.len())])
        .collect()
}

fn sed_stage(
    model: &Model,
    stage: Stage,
    steps: u64,
    state: &mut TrainState,
    data: &TrainData,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&StepRecord) -> Result<()>,
) -> Result<StageSummary> {
    if data.strong.is_empty() && data.weak.is_empty() {
        return Err(Error::Data("SED training needs labeled clips".into()));
    }
    let base_lr = cfg.lr.for_stage(stage);
    let trainable = is_trainable(stage);
    let use_consistency = stage == Stage::Finetune || cfg.weights.consistency_in_adapt;
    let mut first = None;
    let mut last = 0.0;
    let mut warnings = 0;
    for step in 0..steps {
        let mut rng = iteration_rng(cfg.seed ^ stage.salt(), step);
        let mut batch: Vec<Example> = Vec::new();
        let s = sample(&data.strong, cfg.batch.strong, &mut rng);
        let w = sample(&data.weak, cfg.batch.weak, &mut rng);
        let u = sample(&data.unlabeled, cfg.batch.unlabeled, &mut rng);
        let groups = [0..s.len(), s.len()..s.len() + w.len()];
        batch.extend(s.into_iter().cloned());
        batch.extend(w.into_iter().cloned());
        batch.extend(u.into_iter().cloned());
        let batch = augment(&batch, &groups, &cfg.augment, &mut rng)?;

        let w_cons = if use_consistency {
            cfg.weights.consistency(step, steps)
        } else {
            0.0
        };
        let teacher = state
            .teacher
            .as_ref()
            .ok_or_else(|| Error::Schedule("SED stage without a teacher".into()))?;
        let mut targets = Vec::with_capacity(batch.len());
        for ex in &batch {
            let teacher_out = if w_cons > 0.0 {
                Some(model.infer(teacher, &ex.features)?)
            } else {
                None
            };
            targets.push(ClipTargets {
                strong: ex.strong.as_ref().map(|t| t.data().to_vec()),
                weak: if ex.strong.is_some() {
                    None
                } else {
                    ex.weak.clone()
                },
                teacher: teacher_out,
            });
        }

        let mut g = Graph::<f32>::new();
        let bound = state.student.bind(&mut g, &trainable)?;
        let mut outputs = Vec::with_capacity(batch.len());
        for ex in &batch {
            let x = g.constant(ex.features.clone())?;
            let z = model.encode(&mut g, &bound, x)?;
            let c = model.context_forward(&mut g, &bound, z)?;
            outputs.push(model.classify(&mut g, &bound, c)?);
        }
        let parts = sed_loss(&mut g, &outputs, &targets, cfg.weights.w_weak, w_cons)?;
        let value = |v: Option<crate::numerics::Var>| v.map(|v| g.value(v).data()[0] as f64);
        let loss_value = g.value(parts.total).data()[0] as f64;
        let mut terms = BTreeMap::new();
        for (k, v) in [
            ("strong", value(parts.strong)),
            ("weak", value(parts.weak)),
            ("consistency", value(parts.consistency)),
        ] {
            if let Some(v) = v {
                terms.insert(k.to_owned(), v);
            }
        }
        terms.insert("w_cons".to_owned(), w_cons);
        let grads = collect_grads(&g, parts.total, &bound, stage)?;
        warnings += g.clamp_warnings();
        let lr = cosine_lr(base_lr, step, steps);
        state.optimizer.step(&mut state.student, &grads, lr)?;
        if let Some(t) = state.teacher.as_mut() {
            ema_update(t, &state.student, cfg.ema_decay)?;
        }
        state.step += 1;
        first.get_or_insert(loss_value);
        last = loss_value;
        log(&StepRecord {
            stage,
            step,
            global_step: state.step,
            lr,
            loss: loss_value,
            terms,
        })?;
    }
    Ok(StageSummary {
        stage,
        steps,
        first_loss: first.unwrap_or(0.0),
        last_loss: last,
        clamp_warnings: warnings,
    })
}
