use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamSet;

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update of every parameter that has a gradient.
    pub fn step(
        &mut self,
        params: &mut ParamSet<f32>,
        grads: &BTreeMap<String, Vec<f32>>,
        lr: f64,
    ) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            if g.len() != p.len() {
                return Err(Error::Dimension {
                    op: "adamw",
                    left: p.shape().to_vec(),
                    right: vec![g.len()],
                });
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gi = gi as f64;
                let m_new = self.beta1 * *mi as f64 + (1.0 - self.beta1) * gi;
                let v_new = self.beta2 * *vi as f64 + (1.0 - self.beta2) * gi * gi;
                *mi = m_new as f32;
                *vi = v_new as f32;
                let update = (m_new / bc1) / ((v_new / bc2).sqrt() + self.eps)
                    + self.weight_decay * *w as f64;
                *w = (*w as f64 - lr * update) as f32;
            }
        }
        Ok(())
    }
}

/// Cosine decay from `base` at step 0 to zero at `total`.
pub fn cosine_lr(base: f64, step: u64, total: u64) -> f64 {
    if total == 0 {
        return base;
    }
    let x = (step as f64 / total as f64).min(1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * x).cos())
}

/// `teacher ← decay·teacher + (1 − decay)·student`.
pub fn ema_update(teacher: &mut ParamSet<f32>, student: &ParamSet<f32>, decay: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::Config(format!("EMA decay {decay} outside [0, 1]")));
    }
    teacher.check_manifest(student)?;
    for ((_, t), (_, s)) in teacher.iter_mut().zip(student.iter()) {
        for (a, &b) in t.data_mut().iter_mut().zip(s.data()) {
            *a = (decay * *a as f64 + (1.0 - decay) * b as f64) as f32;
        }
    }
    Ok(())
}
