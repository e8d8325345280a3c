use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One training clip: standardized `[500, 128]` features plus whatever
/// labels its split carries.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub features: Tensor<f32>,
    /// `[100, C]` frame labels.
    pub strong: Option<Tensor<f32>>,
    /// `[C]` clip labels.
    pub weak: Option<Vec<f32>>,
}

impl Example {
    /// Feature frames per label frame.
    pub fn rate_ratio(&self) -> usize {
        match &self.strong {
            Some(s) => (self.features.rows() / s.rows()).max(1),
            None => 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Largest roll, in feature frames, either direction.
    pub frame_shift_max: usize,
    pub mixup_alpha: f64,
    pub mixup_prob: f64,
    /// Largest masked span, in label frames.
    pub time_mask_max: usize,
    pub time_mask_prob: f64,
    pub filter_bands: (usize, usize),
    pub filter_db: f64,
    pub filter_prob: f64,
    /// Largest mel-axis displacement of the warp, in bins.
    pub freq_warp_max: f64,
    pub freq_warp_prob: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            frame_shift_max: 25,
            mixup_alpha: 0.2,
            mixup_prob: 0.5,
            time_mask_max: 10,
            time_mask_prob: 0.5,
            filter_bands: (2, 5),
            filter_db: 6.0,
            filter_prob: 0.5,
            freq_warp_max: 2.0,
            freq_warp_prob: 0.5,
        }
    }
}

impl AugmentationConfig {
    /// Everything switched off.
    pub fn none() -> Self {
        Self {
            frame_shift_max: 0,
            mixup_prob: 0.0,
            time_mask_max: 0,
            time_mask_prob: 0.0,
            filter_prob: 0.0,
            freq_warp_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self, feature_frames: usize, label_frames: usize) -> Result<()> {
        if self.mixup_alpha.is_nan() || self.mixup_alpha <= 0.0 {
            return Err(Error::Config("mixup alpha must be > 0".into()));
        }
        if self.frame_shift_max >= feature_frames || self.time_mask_max > label_frames {
            return Err(Error::Config(
                "augmentation widths exceed the sequence".into(),
            ));
        }
        if self.filter_bands.0 == 0 || self.filter_bands.0 > self.filter_bands.1 {
            return Err(Error::Config(
                "FilterAugment band range must be 1 <= lo <= hi".into(),
            ));
        }
        if !(0.0..=4.0).contains(&self.freq_warp_max) {
            return Err(Error::Config(
                "frequency warp must be within 0..=4 bins".into(),
            ));
        }
        for p in [
            self.mixup_prob,
            self.time_mask_prob,
            self.filter_prob,
            self.freq_warp_prob,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn roll_rows(t: &Tensor<f32>, shift: isize) -> Tensor<f32> {
    let (n, c) = (t.rows(), t.cols());
    let mut out = t.clone();
    for r in 0..n {
        let dst = (r as isize + shift).rem_euclid(n as isize) as usize;
        out.data_mut()[dst * c..(dst + 1) * c].copy_from_slice(t.row(r));
    }
    out
}

/// Rolls features by `shift` frames (positive = later) and strong labels by
/// the same time offset rounded to the label grid.
pub fn frame_shift(ex: &Example, shift: isize) -> Example {
    let ratio = ex.rate_ratio() as f64;
    let label_shift = (shift as f64 / ratio).round() as isize;
    Example {
        id: ex.id.clone(),
        features: roll_rows(&ex.features, shift),
        strong: ex.strong.as_ref().map(|s| roll_rows(s, label_shift)),
        weak: ex.weak.clone(),
    }
}

/// `lam·a + (1 − lam)·b` for features and every label both clips carry.
pub fn mixup(a: &Example, b: &Example, lam: f32) -> Result<Example> {
    if a.features.shape() != b.features.shape() {
        return Err(Error::Shape {
            expected: a.features.shape().to_vec(),
            actual: b.features.shape().to_vec(),
        });
    }
    let mix = |x: f32, y: f32| lam * x + (1.0 - lam) * y;
    let mut features = a.features.clone();
    for (v, &w) in features.data_mut().iter_mut().zip(b.features.data()) {
        *v = mix(*v, w);
    }
    let strong = match (&a.strong, &b.strong) {
        (Some(x), Some(y)) => {
            let mut s = x.clone();
            for (v, &w) in s.data_mut().iter_mut().zip(y.data()) {
                *v = mix(*v, w);
            }
            Some(s)
        }
        (s, _) => s.clone(),
    };
    let weak = match (&a.weak, &b.weak) {
        (Some(x), Some(y)) => Some(x.iter().zip(y).map(|(&v, &w)| mix(v, w)).collect()),
        (w, _) => w.clone(),
    };
    Ok(Example {
        id: a.id.clone(),
        features,
        strong,
        weak,
    })
}

/// Zeroes label frames `[start, start + width)` and the matching feature
/// frames.
pub fn time_mask(ex: &Example, start: usize, width: usize) -> Example {
    let mut out = ex.clone();
    if width == 0 {
        return out;
    }
    let ratio = ex.rate_ratio();
    let c = out.features.cols();
    let lo = (start * ratio).min(out.features.rows());
    let hi = ((start + width) * ratio).min(out.features.rows());
    out.features.data_mut()[lo * c..hi * c].fill(0.0);
    if let Some(s) = &mut out.strong {
        let k = s.cols();
        let lo = start.min(s.rows());
        let hi = (start + width).min(s.rows());
        s.data_mut()[lo * k..hi * k].fill(0.0);
    }
    out
}

/// Adds `gains[i]` (decibels, converted to natural-log magnitude) to the
/// bins `edges[i]..edges[i + 1]`.
pub fn filter_augment(ex: &Example, edges: &[usize], gains_db: &[f64]) -> Example {
    let mut out = ex.clone();
    let c = out.features.cols();
    let mut per_bin = vec![0.0f32; c];
    for (i, &g) in gains_db.iter().enumerate() {
        let (lo, hi) = (edges[i].min(c), edges[i + 1].min(c));
        for v in &mut per_bin[lo..hi] {
            *v = (g * std::f64::consts::LN_10 / 20.0) as f32;
        }
    }
    for row in out.features.data_mut().chunks_mut(c) {
        for (v, &g) in row.iter_mut().zip(&per_bin) {
            *v += g;
        }
    }
    out
}

/// Piecewise-linear warp of the mel axis: output bin `center` reads input
/// position `center + delta`, with both ends pinned and linear
/// interpolation in between.
pub fn freq_warp(ex: &Example, center: usize, delta: f64) -> Example {
    let mut out = ex.clone();
    let c = ex.features.cols();
    if c < 3 || delta == 0.0 {
        return out;
    }
    let center = center.clamp(1, c - 2) as f64;
    let last = (c - 1) as f64;
    let src: Vec<f64> = (0..c)
        .map(|f| {
            let f = f as f64;
            if f <= center {
                f * (center + delta) / center
            } else {
                center + delta + (f - center) * (last - center - delta) / (last - center)
            }
        })
        .collect();
    for (r, row) in out.features.data_mut().chunks_mut(c).enumerate() {
        let orig = ex.features.row(r);
        for (v, &s) in row.iter_mut().zip(&src) {
            let s = s.clamp(0.0, last);
            let i = (s.floor() as usize).min(c - 2);
            let frac = (s - i as f64) as f32;
            *v = orig[i] * (1.0 - frac) + orig[i + 1] * frac;
        }
    }
    out
}

/// Per-clip random augmentations, then mixup within `groups` (index ranges
/// of clips that share a label type).
pub fn augment<R: Rng + ?Sized>(
    batch: &[Example],
    groups: &[std::ops::Range<usize>],
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> Result<Vec<Example>> {
    let mut out = Vec::with_capacity(batch.len());
    for ex in batch {
        let mut e = ex.clone();
        if cfg.frame_shift_max > 0 {
            let m = cfg.frame_shift_max as i64;
            e = frame_shift(&e, rng.random_range(-m..=m) as isize);
        }
        if cfg.time_mask_max > 0 && rng.random_bool(cfg.time_mask_prob) {
            let labels = e.features.rows() / e.rate_ratio();
            let width = rng.random_range(1..=cfg.time_mask_max);
            let start = rng.random_range(0..=labels - width);
            e = time_mask(&e, start, width);
        }
        if rng.random_bool(cfg.filter_prob) {
            let bins = e.features.cols();
            let n = rng
                .random_range(cfg.filter_bands.0..=cfg.filter_bands.1)
                .min(bins);
            let mut edges: Vec<usize> = (0..n - 1).map(|_| rng.random_range(1..bins)).collect();
            edges.push(0);
            edges.push(bins);
            edges.sort_unstable();
            let gains: Vec<f64> = (0..n)
                .map(|_| rng.random_range(-cfg.filter_db..=cfg.filter_db))
                .collect();
            e = filter_augment(&e, &edges, &gains);
        }
        if cfg.freq_warp_max > 0.0 && rng.random_bool(cfg.freq_warp_prob) {
            let bins = e.features.cols();
            let center = rng.random_range(bins / 8..bins - bins / 8);
            let delta = rng.random_range(-cfg.freq_warp_max..=cfg.freq_warp_max);
            e = freq_warp(&e, center, delta);
        }
        out.push(e);
    }
    let beta = Beta::new(cfg.mixup_alpha, cfg.mixup_alpha)
        .map_err(|e| Error::Config(format!("mixup alpha: {e}")))?;
    for g in groups {
        if g.len() < 2 || !rng.random_bool(cfg.mixup_prob) {
            continue;
        }
        let lam = beta.sample(rng) as f32;
        let orig: Vec<Example> = out[g.clone()].to_vec();
        let n = orig.len();
        for (i, ex) in orig.iter().enumerate() {
            out[g.start + i] = mixup(ex, &orig[(i + 1) % n], lam)?;
        }
    }
    Ok(out)
}
