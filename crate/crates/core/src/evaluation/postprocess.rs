use serde::{Deserialize, Serialize};

use super::events::Event;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Seconds per prediction frame (100 frames per 10 s clip).
pub const FRAME_SECONDS: f64 = 0.1;

/// How clip-level predictions gate frame-level ones.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskRule {
    /// `min(strong, weak)`.
    #[default]
    Min,
    /// Zero class `c` entirely when `weak[c] < 0.5`.
    HardGate,
    None,
}

/// `[T, C]` strong probabilities capped by `[C]` weak probabilities.
pub fn weak_mask(strong: &Tensor<f64>, weak: &[f64], rule: MaskRule) -> Result<Tensor<f64>> {
    let c = strong.cols();
    if weak.len() != c {
        return Err(Error::Dimension {
            op: "weak_mask",
            left: strong.shape().to_vec(),
            right: vec![weak.len()],
        });
    }
    let mut out = strong.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let w = weak[i % c];
        *v = match rule {
            MaskRule::Min => v.min(w),
            MaskRule::HardGate if w < 0.5 => 0.0,
            MaskRule::HardGate | MaskRule::None => *v,
        };
    }
    Ok(out)
}

/// Odd window actually used for a requested width: even widths grow by one
/// so the median stays centred on a sample.
pub fn effective_window(window: usize) -> usize {
    if window.is_multiple_of(2) {
        window + 1
    } else {
        window
    }
}

/// Sliding median of one sequence with edge replication.
pub fn median_filter_1d(x: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window > x.len() {
        return Err(Error::Config(format!(
            "median window {window} must be in 1..={}",
            x.len()
        )));
    }
    let w = effective_window(window);
    let h = w / 2;
    let n = x.len();
    let at = |i: isize| x[i.clamp(0, n as isize - 1) as usize];
    let mut sorted: Vec<f64> = (-(h as isize)..=h as isize).map(at).collect();
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(n);
    for t in 0..n as isize {
        out.push(sorted[h]);
        if t + 1 < n as isize {
            let leaving = at(t - h as isize);
            let idx = sorted.partition_point(|v| v.total_cmp(&leaving).is_lt());
            sorted.remove(idx);
            let entering = at(t + 1 + h as isize);
            let idx = sorted.partition_point(|v| v.total_cmp(&entering).is_lt());
            sorted.insert(idx, entering);
        }
    }
    Ok(out)
}

/// Per-class median filter over the time axis of a `[T, C]` matrix.
pub fn median_filter(strong: &Tensor<f64>, windows: &[usize]) -> Result<Tensor<f64>> {
    let (t, c) = (strong.rows(), strong.cols());
    if windows.len() != c {
        return Err(Error::Config(format!(
            "{} median windows for {c} classes",
            windows.len()
        )));
    }
    let mut out = strong.clone();
    for (k, &w) in windows.iter().enumerate() {
        let col: Vec<f64> = (0..t).map(|i| strong.at(i, k)).collect();
        for (i, v) in median_filter_1d(&col, w)?.into_iter().enumerate() {
            out.data_mut()[i * c + k] = v;
        }
    }
    Ok(out)
}

/// Maximal runs of frames `>= tau` as events, one frame per `frame_seconds`.
pub fn decode_column(values: &[f64], class: usize, tau: f64, frame_seconds: f64) -> Vec<Event> {
    let mut events = Vec::new();
    let mut start = None;
    for (i, &v) in values
        .iter()
        .chain(std::iter::once(&f64::NEG_INFINITY))
        .enumerate()
    {
        match (v >= tau, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                events.push(Event::new(
                    class,
                    s as f64 * frame_seconds,
                    i as f64 * frame_seconds,
                ));
                start = None;
            }
            _ => {}
        }
    }
    events
}

pub fn decode(strong: &Tensor<f64>, tau: f64) -> Vec<Event> {
    let (t, c) = (strong.rows(), strong.cols());
    let mut events = Vec::new();
    for k in 0..c {
        let col: Vec<f64> = (0..t).map(|i| strong.at(i, k)).collect();
        events.extend(decode_column(&col, k, tau, FRAME_SECONDS));
    }
    events
}

/// Post-processing chain applied before decoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostProcess {
    pub mask: MaskRule,
    /// Median window per class.
    pub windows: Vec<usize>,
    /// Filter the thresholded 0/1 decisions per operating point instead of
    /// the probabilities.
    #[serde(default)]
    pub filter_binary: bool,
}

impl PostProcess {
    /// Probabilities after masking and, unless `filter_binary`, smoothing.
    pub fn smooth(&self, strong: &Tensor<f64>, weak: &[f64]) -> Result<Tensor<f64>> {
        let masked = weak_mask(strong, weak, self.mask)?;
        if self.filter_binary {
            Ok(masked)
        } else {
            median_filter(&masked, &self.windows)
        }
    }

    /// Events at one operating point from already smoothed probabilities.
    pub fn detect(&self, smoothed: &Tensor<f64>, tau: f64) -> Result<Vec<Event>> {
        if !self.filter_binary {
            return Ok(decode(smoothed, tau));
        }
        let binary = smoothed.map(|v| if v >= tau { 1.0 } else { 0.0 });
        Ok(decode(&median_filter(&binary, &self.windows)?, 0.5))
    }
}
