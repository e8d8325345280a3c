use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Real, Tensor, Var};

/// Σ_t ||pred(t) − target(t)||², unnormalized.
pub fn rec_loss<T: Real>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    if g.shape(pred) != g.shape(target) {
        return Err(Error::Contract(format!(
            "reconstruction shapes differ: {:?} vs {:?}",
            g.shape(pred),
            g.shape(target)
        )));
    }
    let diff = g.sub(pred, target)?;
    g.sum_sq(diff)
}

/// Tape-free [`rec_loss`].
pub fn rec_loss_value<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Contract(format!(
            "reconstruction shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p.as_f64() - t.as_f64()).powi(2))
        .sum())
}

/// Reconstruction objective over whichever perturbed views are present:
/// `rec(net(x_block), x) + rec(net(x_frame), x)`. Alternating multitask
/// training passes exactly one view per iteration.
pub fn jitter_loss<T: Real>(
    g: &mut Graph<T>,
    net: &mut impl FnMut(&mut Graph<T>, Var) -> Result<Var>,
    x_block: Option<Var>,
    x_frame: Option<Var>,
    x: Var,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for view in [x_block, x_frame].into_iter().flatten() {
        let pred = net(g, view)?;
        let l = rec_loss(g, pred, x)?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    total.ok_or_else(|| Error::Contract("jitter loss needs at least one perturbed view".into()))
}

/// Weak-label and consistency weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_weak: f64,
    pub w_cons_max: f64,
    /// Fraction of a stage over which `w_C` ramps linearly from 0.
    pub ramp_fraction: f64,
    pub consistency_in_adapt: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_weak: 0.5,
            w_cons_max: 2.0,
            ramp_fraction: 0.2,
            consistency_in_adapt: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_weak >= 0.0 && self.w_cons_max >= 0.0) {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.ramp_fraction) {
            return Err(Error::Config("ramp fraction outside [0, 1]".into()));
        }
        Ok(())
    }

    /// `w_C` at `step` of a stage lasting `total` steps.
    pub fn consistency(&self, step: u64, total: u64) -> f64 {
        let horizon = self.ramp_fraction * total as f64;
        if horizon <= 0.0 {
            return self.w_cons_max;
        }
        self.w_cons_max * (step as f64 / horizon).min(1.0)
    }
}

/// What applies to one clip of an SED batch.
#[derive(Clone, Debug, Default)]
pub struct ClipTargets<T> {
    /// Flattened `[T, C]` frame labels.
    pub strong: Option<Vec<T>>,
    /// `[C]` clip labels.
    pub weak: Option<Vec<T>>,
    /// Teacher `(strong, weak)` outputs, used as constants.
    pub teacher: Option<(Tensor<T>, Tensor<T>)>,
}

/// Handles to the individual SED loss terms.
#[derive(Clone, Copy, Debug)]
pub struct SedLoss {
    pub total: Var,
    pub strong: Option<Var>,
    pub weak: Option<Var>,
    pub consistency: Option<Var>,
}

fn mean_of<T: Real>(g: &mut Graph<T>, terms: &[Var]) -> Result<Option<Var>> {
    let Some((&first, rest)) = terms.split_first() else {
        return Ok(None);
    };
    let mut acc = first;
    for &t in rest {
        acc = g.add(acc, t)?;
    }
    Ok(Some(g.scale(acc, T::lit(1.0 / terms.len() as f64))?))
}

fn mse<T: Real>(g: &mut Graph<T>, pred: Var, target: &Tensor<T>) -> Result<Var> {
    let t = g.constant(target.clone())?;
    let diff = g.sub(pred, t)?;
    let sq = g.sum_sq(diff)?;
    g.scale(sq, T::lit(1.0 / target.len() as f64))
}

/// `B(S, l_s)` over strong clips + `w_W·B(W, l_w)` over weak clips
/// + `w_C·[M(S, S_T) + M(W, W_T)]` over clips with teacher outputs.
///
/// Teacher tensors enter the tape as constants, so no gradient reaches
/// them.
pub fn sed_loss<T: Real>(
    g: &mut Graph<T>,
    outputs: &[(Var, Var)],
    targets: &[ClipTargets<T>],
    w_weak: f64,
    w_cons: f64,
) -> Result<SedLoss> {
    if outputs.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} outputs for {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    let mut strong_terms = Vec::new();
    let mut weak_terms = Vec::new();
    let mut cons_terms = Vec::new();
    for (&(s, w), tg) in outputs.iter().zip(targets) {
        if let Some(ls) = &tg.strong {
            let ones = vec![T::one(); ls.len()];
            strong_terms.push(g.bce(s, ls, &ones)?);
        }
        if let Some(lw) = &tg.weak {
            let ones = vec![T::one(); lw.len()];
            weak_terms.push(g.bce(w, lw, &ones)?);
        }
        if w_cons > 0.0 {
            if let Some((ts, tw)) = &tg.teacher {
                let a = mse(g, s, ts)?;
                let b = mse(g, w, tw)?;
                cons_terms.push(g.add(a, b)?);
            }
        }
    }
    let strong = mean_of(g, &strong_terms)?;
    let weak = mean_of(g, &weak_terms)?;
    let consistency = mean_of(g, &cons_terms)?;
    let mut parts = Vec::new();
    if let Some(s) = strong {
        parts.push(s);
    }
    if let Some(w) = weak {
        parts.push(g.scale(w, T::lit(w_weak))?);
    }
    if let Some(c) = consistency {
        parts.push(g.scale(c, T::lit(w_cons))?);
    }
    let Some((&first, rest)) = parts.split_first() else {
        return Err(Error::Contract(
            "batch has no supervised or consistency term".into(),
        ));
    };
    let mut total = first;
    for &p in rest {
        total = g.add(total, p)?;
    }
    Ok(SedLoss {
        total,
        strong,
        weak,
        consistency,
    })
}
