use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{io, Graph, Real, Tensor, Var};

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Errors unless both sets have the same names and shapes.
    pub fn check_manifest(&self, other: &Self) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: {} vs {}",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for ((a, ta), (b, tb)) in self.tensors.iter().zip(&other.tensors) {
            if a != b || ta.shape() != tb.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter manifest mismatch: {a} {:?} vs {b} {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }

    /// Places every tensor on the tape; those matching `trainable` become
    /// grad-requiring leaves, the rest constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: impl Fn(&str) -> bool) -> Result<Bound> {
        let mut vars = BTreeMap::new();
        for (name, t) in &self.tensors {
            let v = g.leaf(t.clone().with_grad(trainable(name)))?;
            vars.insert(name.clone(), v);
        }
        Ok(Bound { vars })
    }
}

impl ParamSet<f32> {
    /// Writes `<dir>/<prefix><name>.jtt` per tensor and returns the
    /// name → file map for the caller's manifest.
    pub fn save(&self, dir: &Path, prefix: &str) -> Result<BTreeMap<String, String>> {
        std::fs::create_dir_all(dir)?;
        let mut files = BTreeMap::new();
        for (name, t) in &self.tensors {
            let file = format!("{prefix}{name}.jtt");
            io::save(dir.join(&file), t)?;
            files.insert(name.clone(), file);
        }
        Ok(files)
    }

    pub fn load(dir: &Path, files: &BTreeMap<String, String>) -> Result<Self> {
        let mut set = Self::new();
        for (name, file) in files {
            set.insert(name.clone(), io::load(dir.join(file))?);
        }
        Ok(set)
    }
}

/// Tape handles for a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("parameter {name} not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Binds already-placed tape vars by name, e.g. leaves created by a
/// gradient checker.
impl FromIterator<(String, Var)> for Bound {
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        Self {
            vars: iter.into_iter().collect(),
        }
    }
}

/// Which part of the network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Encoder,
    Context,
    Recon,
    Sed,
    At,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::Encoder,
        Component::Context,
        Component::Recon,
        Component::Sed,
        Component::At,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            Component::Encoder => "encoder.",
            Component::Context => "context.",
            Component::Recon => "heads.recon.",
            Component::Sed => "heads.sed.",
            Component::At => "heads.at.",
        }
    }

    pub fn of(name: &str) -> Option<Component> {
        Self::ALL.into_iter().find(|c| name.starts_with(c.prefix()))
    }
}
