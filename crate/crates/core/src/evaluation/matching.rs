use serde::{Deserialize, Serialize};

use super::events::Event;
use crate::error::{Error, Result};

/// Intersection tolerances; see [`intersection_match`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub dtc: f64,
    pub gtc: f64,
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("dtc", self.dtc), ("gtc", self.gtc)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} = {v} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Per-class counts for one clip or a whole set.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
    pub n_gt: Vec<usize>,
}

impl MatchCounts {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            tp: vec![0; num_classes],
            fp: vec![0; num_classes],
            n_gt: vec![0; num_classes],
        }
    }

    pub fn total_tp(&self) -> usize {
        self.tp.iter().sum()
    }

    pub fn total_fp(&self) -> usize {
        self.fp.iter().sum()
    }

    pub fn accumulate(&mut self, other: &MatchCounts) {
        for (a, b) in self.tp.iter_mut().zip(&other.tp) {
            *a += b;
        }
        for (a, b) in self.fp.iter_mut().zip(&other.fp) {
            *a += b;
        }
        for (a, b) in self.n_gt.iter_mut().zip(&other.n_gt) {
            *a += b;
        }
    }
}

/// Sorted disjoint union of intervals.
fn union(mut spans: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(spans.len());
    for (a, b) in spans {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// Length of `[a, b)` covered by a disjoint union.
fn covered(a: f64, b: f64, union: &[(f64, f64)]) -> f64 {
    union
        .iter()
        .map(|&(u, v)| (b.min(v) - a.max(u)).max(0.0))
        .sum()
}

/// Seconds of slack in the coverage tests, so that full containment at
/// `dtc = 1` or `gtc = 1` survives rounding in the interval sums.
pub const COVERAGE_SLACK: f64 = 1e-9;

/// Intersection-based matching on one clip.
///
/// A detection is valid when the part of it covered by same-class ground
/// truth is at least `dtc` of its length; invalid detections are false
/// positives. A ground-truth event is a true positive when valid detections
/// of its class cover at least `gtc` of its length.
pub fn intersection_match(
    dets: &[Event],
    gts: &[Event],
    num_classes: usize,
    tol: Tolerances,
) -> Result<MatchCounts> {
    tol.validate()?;
    let mut counts = MatchCounts::zeros(num_classes);
    for e in dets.iter().chain(gts) {
        e.validate()?;
        if e.class >= num_classes {
            return Err(Error::Data(format!("class id {} out of range", e.class)));
        }
    }
    for c in 0..num_classes {
        let gt_c: Vec<&Event> = gts.iter().filter(|e| e.class == c).collect();
        let det_c: Vec<&Event> = dets.iter().filter(|e| e.class == c).collect();
        counts.n_gt[c] = gt_c.len();
        if det_c.is_empty() {
            continue;
        }
        let gt_union = union(gt_c.iter().map(|e| (e.onset, e.offset)).collect());
        let mut valid = Vec::new();
        for d in det_c {
            if covered(d.onset, d.offset, &gt_union) + COVERAGE_SLACK >= tol.dtc * d.duration() {
                valid.push((d.onset, d.offset));
            } else {
                counts.fp[c] += 1;
            }
        }
        let det_union = union(valid);
        counts.tp[c] = gt_c
            .iter()
            .filter(|g| {
                covered(g.onset, g.offset, &det_union) + COVERAGE_SLACK >= tol.gtc * g.duration()
            })
            .count();
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: Tolerances = Tolerances { dtc: 0.7, gtc: 0.7 };

    #[test]
    fn exact_match() {
        let e = [Event::new(0, 1.0, 2.0)];
        let m = intersection_match(&e, &e, 1, Tolerances { dtc: 1.0, gtc: 1.0 }).unwrap();
        assert_eq!((m.tp[0], m.fp[0], m.n_gt[0]), (1, 0, 1));
    }

    #[test]
    fn containment_in_overlapping_truth_is_valid_at_full_tolerance() {
        let gts = [
            Event::new(0, 0.3069772320578499, 1.7356479704750336),
            Event::new(0, 1.6154070036412536, 2.8578151379071177),
            Event::new(0, 1.9841611603955773, 2.108985895000784),
        ];
        let det = [Event::new(0, 4.0 * 0.1, 28.0 * 0.1)];
        let m = intersection_match(&det, &gts, 1, Tolerances { dtc: 1.0, gtc: 1.0 }).unwrap();
        assert_eq!((m.tp[0], m.fp[0]), (1, 0));
    }

    #[test]
    fn half_overlap_fails_both_tolerances() {
        let m = intersection_match(
            &[Event::new(0, 0.0, 1.0)],
            &[Event::new(0, 0.5, 1.5)],
            1,
            TOL,
        )
        .unwrap();
        assert_eq!((m.tp[0], m.fp[0]), (0, 1));
    }

    #[test]
    fn two_halves_cover_one_ground_truth() {
        let dets = [Event::new(0, 1.0, 1.5), Event::new(0, 1.5, 2.0)];
        let m = intersection_match(&dets, &[Event::new(0, 1.0, 2.0)], 1, TOL).unwrap();
        assert_eq!((m.tp[0], m.fp[0]), (1, 0));
    }

    #[test]
    fn other_class_does_not_count() {
        let m = intersection_match(
            &[Event::new(1, 1.0, 2.0)],
            &[Event::new(0, 1.0, 2.0)],
            2,
            TOL,
        )
        .unwrap();
        assert_eq!((m.total_tp(), m.total_fp()), (0, 1));
    }

    #[test]
    fn malformed_interval_is_a_data_error() {
        assert!(matches!(
            intersection_match(&[Event::new(0, 2.0, 1.0)], &[], 1, TOL),
            Err(Error::Data(_))
        ));
    }
}
