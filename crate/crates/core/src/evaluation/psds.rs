use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::events::{Event, EventTable};
use super::matching::{intersection_match, MatchCounts, Tolerances};
use super::postprocess::PostProcess;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdsParams {
    pub dtc: f64,
    pub gtc: f64,
    pub alpha_st: f64,
    /// Upper end of the eFPR axis, false positives per hour.
    pub e_max: f64,
}

impl Default for PsdsParams {
    fn default() -> Self {
        Self {
            dtc: 0.7,
            gtc: 0.7,
            alpha_st: 1.0,
            e_max: 100.0,
        }
    }
}

impl PsdsParams {
    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            dtc: self.dtc,
            gtc: self.gtc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tolerances().validate()?;
        if !(self.e_max > 0.0 && self.e_max.is_finite()) {
            return Err(Error::Config(format!(
                "e_max = {} must be positive",
                self.e_max
            )));
        }
        if !(self.alpha_st >= 0.0 && self.alpha_st.is_finite()) {
            return Err(Error::Config(format!(
                "alpha_st = {} must be >= 0",
                self.alpha_st
            )));
        }
        Ok(())
    }
}

/// `n` evenly spaced thresholds strictly inside (0, 1): `i / (n + 1)`.
pub fn thresholds(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / (n + 1) as f64).collect()
}

/// One operating point of the sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    /// Per scored class.
    pub tpr: Vec<f64>,
    /// Per scored class, false positives per hour.
    pub efpr: Vec<f64>,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdsResult {
    pub psds: f64,
    /// Classes with at least one ground-truth event; the others carry no TPR
    /// and are left out of the cross-class statistics.
    pub classes: Vec<usize>,
    pub points: Vec<RocPoint>,
}

/// Best TPR reachable at false-positive rate `e` for one class.
fn envelope(points: &[RocPoint], k: usize, e: f64) -> f64 {
    points
        .iter()
        .filter(|p| p.efpr[k] <= e)
        .map(|p| p.tpr[k])
        .fold(0.0, f64::max)
}

fn effective_tpr(points: &[RocPoint], classes: usize, e: f64, alpha: f64) -> f64 {
    let tprs: Vec<f64> = (0..classes).map(|k| envelope(points, k, e)).collect();
    let n = tprs.len() as f64;
    let mean = tprs.iter().sum::<f64>() / n;
    let var = tprs.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    (mean - alpha * var.sqrt()).max(0.0)
}

/// Area under the effective ROC from per-threshold counts.
///
/// Each class gets a monotone step curve TPR(e) = best TPR among operating
/// points whose eFPR is at most `e`. The effective TPR at `e` is the mean
/// over classes minus `alpha_st` times their population standard deviation,
/// clamped at zero; the score is its integral over `[0, e_max]` divided by
/// `e_max`.
pub fn psds_from_counts(
    ops: &[(f64, MatchCounts)],
    hours: f64,
    params: &PsdsParams,
) -> Result<PsdsResult> {
    params.validate()?;
    if hours.is_nan() || hours <= 0.0 {
        return Err(Error::Config(format!(
            "audio duration {hours} h must be positive"
        )));
    }
    let Some((_, first)) = ops.first() else {
        return Err(Error::Config("no operating points".into()));
    };
    let classes: Vec<usize> = (0..first.n_gt.len())
        .filter(|&c| first.n_gt[c] > 0)
        .collect();
    if classes.is_empty() {
        return Err(Error::UndefinedScore(
            "ground truth contains no events".into(),
        ));
    }
    let mut points = Vec::with_capacity(ops.len());
    for (tau, counts) in ops {
        if counts.n_gt != first.n_gt {
            return Err(Error::Contract(
                "operating points disagree on ground truth".into(),
            ));
        }
        points.push(RocPoint {
            threshold: *tau,
            tpr: classes
                .iter()
                .map(|&c| counts.tp[c] as f64 / counts.n_gt[c] as f64)
                .collect(),
            efpr: classes
                .iter()
                .map(|&c| counts.fp[c] as f64 / hours)
                .collect(),
            tp: classes.iter().map(|&c| counts.tp[c]).sum(),
            fp: classes.iter().map(|&c| counts.fp[c]).sum(),
        });
    }
    let mut axis: Vec<f64> = points
        .iter()
        .flat_map(|p| p.efpr.iter().copied())
        .filter(|&e| e < params.e_max)
        .chain(std::iter::once(0.0))
        .collect();
    axis.sort_by(f64::total_cmp);
    axis.dedup();
    let mut area = 0.0;
    for (i, &e) in axis.iter().enumerate() {
        let next = axis.get(i + 1).copied().unwrap_or(params.e_max);
        area += effective_tpr(&points, classes.len(), e, params.alpha_st) * (next - e);
    }
    Ok(PsdsResult {
        psds: area / params.e_max,
        classes,
        points,
    })
}

/// Matches each operating point's detections against the ground truth over
/// the listed clips.
pub fn count_operating_point(
    dets: &EventTable,
    gts: &EventTable,
    clips: &[String],
    num_classes: usize,
    tol: Tolerances,
) -> Result<MatchCounts> {
    for id in dets.keys() {
        if clips.binary_search(id).is_err() {
            return Err(Error::Data(format!("detections for unknown clip {id}")));
        }
    }
    let mut total = MatchCounts::zeros(num_classes);
    let empty: Vec<Event> = Vec::new();
    for id in clips {
        let d = dets.get(id).unwrap_or(&empty);
        let g = gts.get(id).unwrap_or(&empty);
        total.accumulate(&intersection_match(d, g, num_classes, tol)?);
    }
    Ok(total)
}

/// Per-clip model output.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipScores {
    /// `[T, C]` frame probabilities.
    pub strong: Tensor<f64>,
    /// `[C]` clip probabilities.
    pub weak: Vec<f64>,
}

/// PSDS over a threshold sweep of model outputs.
pub fn psds(
    scores: &BTreeMap<String, ClipScores>,
    gts: &EventTable,
    post: &PostProcess,
    taus: &[f64],
    clip_seconds: f64,
    params: &PsdsParams,
) -> Result<PsdsResult> {
    let Some(first) = scores.values().next() else {
        return Err(Error::UndefinedScore("no clips to score".into()));
    };
    if taus.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "thresholds must be strictly increasing".into(),
        ));
    }
    let num_classes = first.strong.cols();
    let clips: Vec<String> = scores.keys().cloned().collect();
    let smoothed: Vec<(String, Tensor<f64>)> = scores
        .iter()
        .map(|(id, s)| Ok((id.clone(), post.smooth(&s.strong, &s.weak)?)))
        .collect::<Result<_>>()?;
    let mut ops = Vec::with_capacity(taus.len());
    for &tau in taus {
        let mut dets = EventTable::new();
        for (id, sm) in &smoothed {
            let events = post.detect(sm, tau)?;
            if !events.is_empty() {
                dets.insert(id.clone(), events);
            }
        }
        ops.push((
            tau,
            count_operating_point(&dets, gts, &clips, num_classes, params.tolerances())?,
        ));
    }
    let hours = clips.len() as f64 * clip_seconds / 3600.0;
    psds_from_counts(&ops, hours, params)
}

/// JSON score report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub psds1: f64,
    pub params: PsdsParams,
    pub num_clips: usize,
    pub num_thresholds: usize,
    pub class_names: Vec<String>,
    /// Per-class TPR at the sweep thresholds nearest 0.25, 0.5 and 0.75,
    /// keyed by the threshold actually used.
    pub reference_tpr: BTreeMap<String, BTreeMap<String, f64>>,
    pub roc: Vec<RocPoint>,
}

impl ScoreReport {
    pub fn new(
        result: &PsdsResult,
        params: PsdsParams,
        num_clips: usize,
        class_names: &[String],
    ) -> Self {
        let mut reference_tpr = BTreeMap::new();
        for target in [0.25, 0.5, 0.75] {
            let Some(p) = result.points.iter().min_by(|a, b| {
                (a.threshold - target)
                    .abs()
                    .total_cmp(&(b.threshold - target).abs())
            }) else {
                continue;
            };
            let per_class = result
                .classes
                .iter()
                .zip(&p.tpr)
                .map(|(&c, &t)| {
                    (
                        class_names.get(c).cloned().unwrap_or_else(|| c.to_string()),
                        t,
                    )
                })
                .collect();
            reference_tpr.insert(format!("{:.4}", p.threshold), per_class);
        }
        Self {
            psds1: result.psds,
            params,
            num_clips,
            num_thresholds: result.points.len(),
            class_names: class_names.to_vec(),
            reference_tpr,
            roc: result.points.clone(),
        }
    }
}
