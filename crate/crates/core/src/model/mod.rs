//! Desk-scale SED network: strided convolutional encoder, transformer
//! context network with relative position biases, and three heads
//! (reconstruction, frame-wise SED, clip-wise AT).

mod checkpoint;
mod params;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Real, Tensor, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use params::{Bound, Component, ParamSet};

/// One 1-D convolution over time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvStage {
    pub fn output_len(&self, input: usize) -> usize {
        (input + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_mels: usize,
    pub latent_dim: usize,
    pub stages: Vec<ConvStage>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            n_mels: crate::features::N_MELS,
            latent_dim: 64,
            stages: vec![
                ConvStage {
                    kernel: 5,
                    stride: 5,
                    pad: 0,
                },
                ConvStage {
                    kernel: 3,
                    stride: 1,
                    pad: 1,
                },
                ConvStage {
                    kernel: 3,
                    stride: 1,
                    pad: 1,
                },
            ],
        }
    }
}

impl EncoderConfig {
    pub fn output_len(&self, input: usize) -> usize {
        self.stages.iter().fold(input, |n, s| s.output_len(n))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub ff_dim: usize,
    pub max_distance: usize,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            dim: 64,
            ff_dim: 256,
            max_distance: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub context: ContextConfig,
    pub num_classes: usize,
    /// Spectrogram frames per clip.
    pub input_frames: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            context: ContextConfig::default(),
            num_classes: 10,
            input_frames: crate::features::CLIP_FRAMES,
        }
    }
}

impl ModelConfig {
    pub fn latent_frames(&self) -> usize {
        self.encoder.output_len(self.input_frames)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.context;
        if self.encoder.latent_dim < 8 {
            return Err(Error::Config("latent dim must be at least 8".into()));
        }
        if c.dim != self.encoder.latent_dim {
            return Err(Error::Config(format!(
                "context dim {} differs from latent dim {}",
                c.dim, self.encoder.latent_dim
            )));
        }
        if c.heads == 0 || !c.dim.is_multiple_of(c.heads) {
            return Err(Error::Config(format!(
                "dim {} not divisible by {} heads",
                c.dim, c.heads
            )));
        }
        let t = self.latent_frames();
        if c.max_distance + 1 < t {
            return Err(Error::Config(format!(
                "max relative distance {} shorter than sequence length {t} - 1",
                c.max_distance
            )));
        }
        if self.encoder.stages.is_empty() {
            return Err(Error::Config("encoder needs at least one stage".into()));
        }
        Ok(())
    }
}

/// Tape handles of the three heads.
#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    /// `[T, C]` frame probabilities.
    pub strong: Var,
    /// `[C]` clip probabilities.
    pub weak: Var,
    /// `[T, D]` reconstruction.
    pub recon: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
}

fn uniform_tensor<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], limit: f64) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.random_range(-limit..limit)))
}

fn xavier<T: Real>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform_tensor(rng, &[fan_in, fan_out], limit)
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    /// Xavier-uniform weights, zero biases, unit LayerNorm gains, zero
    /// relative biases.
    pub fn init<T: Real>(&self, seed: u64) -> ParamSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let enc = &self.config.encoder;
        let d = enc.latent_dim;
        let mut channels = enc.n_mels;
        for (i, s) in enc.stages.iter().enumerate() {
            p.insert(
                format!("encoder.stage{i}.weight"),
                xavier(&mut rng, s.kernel * channels, d),
            );
            p.insert(format!("encoder.stage{i}.bias"), Tensor::zeros([d]));
            channels = d;
        }
        let c = &self.config.context;
        let table = 2 * c.max_distance + 1;
        for l in 0..c.layers {
            let pre = format!("context.layer{l}");
            p.insert(format!("{pre}.ln1.gamma"), Tensor::full([d], T::one()));
            p.insert(format!("{pre}.ln1.beta"), Tensor::zeros([d]));
            p.insert(format!("{pre}.attn.qkv.weight"), xavier(&mut rng, d, 3 * d));
            p.insert(format!("{pre}.attn.qkv.bias"), Tensor::zeros([3 * d]));
            p.insert(format!("{pre}.attn.out.weight"), xavier(&mut rng, d, d));
            p.insert(format!("{pre}.attn.out.bias"), Tensor::zeros([d]));
            for h in 0..c.heads {
                p.insert(format!("{pre}.attn.rpe.head{h}"), Tensor::zeros([table]));
            }
            p.insert(format!("{pre}.ln2.gamma"), Tensor::full([d], T::one()));
            p.insert(format!("{pre}.ln2.beta"), Tensor::zeros([d]));
            p.insert(format!("{pre}.ff1.weight"), xavier(&mut rng, d, c.ff_dim));
            p.insert(format!("{pre}.ff1.bias"), Tensor::zeros([c.ff_dim]));
            p.insert(format!("{pre}.ff2.weight"), xavier(&mut rng, c.ff_dim, d));
            p.insert(format!("{pre}.ff2.bias"), Tensor::zeros([d]));
        }
        let k = self.config.num_classes;
        p.insert("heads.recon.weight", xavier(&mut rng, d, d));
        p.insert("heads.recon.bias", Tensor::zeros([d]));
        p.insert("heads.sed.weight", xavier(&mut rng, d, k));
        p.insert("heads.sed.bias", Tensor::zeros([k]));
        p.insert("heads.at.weight", xavier(&mut rng, d, k));
        p.insert("heads.at.bias", Tensor::zeros([k]));
        p
    }

    fn affine<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, name: &str) -> Result<Var> {
        let y = g.matmul(x, p.var(&format!("{name}.weight"))?)?;
        g.add_bias(y, p.var(&format!("{name}.bias"))?)
    }

    /// `[input_frames, n_mels]` spectrogram → `[latent_frames, D]` latents.
    pub fn encode<T: Real>(&self, g: &mut Graph<T>, p: &Bound, spec: Var) -> Result<Var> {
        let expected = [self.config.input_frames, self.config.encoder.n_mels];
        if g.shape(spec) != expected {
            return Err(Error::Shape {
                expected: expected.to_vec(),
                actual: g.shape(spec).to_vec(),
            });
        }
        let stages = &self.config.encoder.stages;
        let mut h = spec;
        for (i, s) in stages.iter().enumerate() {
            let cols = g.unfold(h, s.kernel, s.stride, s.pad)?;
            h = self.affine(g, p, cols, &format!("encoder.stage{i}"))?;
            if i + 1 < stages.len() {
                h = g.gelu(h)?;
            }
        }
        Ok(h)
    }

    /// Pre-norm transformer layers with per-head relative position biases
    /// added to the attention logits.
    pub fn context_forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let c = &self.config.context;
        let t = g.value(x).rows();
        if g.shape(x) != [t, c.dim] {
            return Err(Error::Shape {
                expected: vec![t, c.dim],
                actual: g.shape(x).to_vec(),
            });
        }
        let dh = c.dim / c.heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let mut x = x;
        for l in 0..c.layers {
            let pre = format!("context.layer{l}");
            let h = g.layer_norm(
                x,
                p.var(&format!("{pre}.ln1.gamma"))?,
                p.var(&format!("{pre}.ln1.beta"))?,
            )?;
            let qkv = self.affine(g, p, h, &format!("{pre}.attn.qkv"))?;
            let mut heads = Vec::with_capacity(c.heads);
            for hd in 0..c.heads {
                let q = g.slice_cols(qkv, hd * dh, dh)?;
                let k = g.slice_cols(qkv, c.dim + hd * dh, dh)?;
                let v = g.slice_cols(qkv, 2 * c.dim + hd * dh, dh)?;
                let kt = g.transpose(k)?;
                let logits = g.matmul(q, kt)?;
                let logits = g.scale(logits, scale)?;
                let bias = g.rel_bias(p.var(&format!("{pre}.attn.rpe.head{hd}"))?, t)?;
                let logits = g.add(logits, bias)?;
                let attn = g.softmax(logits)?;
                heads.push(g.matmul(attn, v)?);
            }
            let merged = g.concat_cols(&heads)?;
            let out = self.affine(g, p, merged, &format!("{pre}.attn.out"))?;
            x = g.add(x, out)?;
            let h2 = g.layer_norm(
                x,
                p.var(&format!("{pre}.ln2.gamma"))?,
                p.var(&format!("{pre}.ln2.beta"))?,
            )?;
            let f = self.affine(g, p, h2, &format!("{pre}.ff1"))?;
            let f = g.gelu(f)?;
            let f = self.affine(g, p, f, &format!("{pre}.ff2"))?;
            x = g.add(x, f)?;
        }
        Ok(x)
    }

    /// Reconstruction head only.
    pub fn reconstruct<T: Real>(&self, g: &mut Graph<T>, p: &Bound, ctx: Var) -> Result<Var> {
        self.affine(g, p, ctx, "heads.recon")
    }

    /// Frame-wise and clip-wise probabilities. The clip logit for class `c`
    /// is the softmax-over-time weighted average of the frame logits.
    pub fn classify<T: Real>(&self, g: &mut Graph<T>, p: &Bound, ctx: Var) -> Result<(Var, Var)> {
        let logits = self.affine(g, p, ctx, "heads.sed")?;
        let strong = g.sigmoid(logits)?;
        let att = self.affine(g, p, ctx, "heads.at")?;
        let att_t = g.transpose(att)?;
        let w_t = g.softmax(att_t)?;
        let w = g.transpose(w_t)?;
        let weighted = g.mul(w, logits)?;
        let pooled = g.sum_rows(weighted)?;
        let weak = g.sigmoid(pooled)?;
        Ok((strong, weak))
    }

    pub fn predict<T: Real>(&self, g: &mut Graph<T>, p: &Bound, ctx: Var) -> Result<Outputs> {
        let (strong, weak) = self.classify(g, p, ctx)?;
        let recon = self.reconstruct(g, p, ctx)?;
        Ok(Outputs {
            strong,
            weak,
            recon,
        })
    }

    /// Forward-only encode of a plain tensor.
    pub fn encode_tensor<T: Real>(
        &self,
        params: &ParamSet<T>,
        spec: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = params.bind(&mut g, |_| false)?;
        let x = g.constant(spec.clone())?;
        let y = self.encode(&mut g, &p, x)?;
        Ok(g.value(y).clone())
    }

    pub fn context_tensor<T: Real>(
        &self,
        params: &ParamSet<T>,
        latents: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = params.bind(&mut g, |_| false)?;
        let x = g.constant(latents.clone())?;
        let y = self.context_forward(&mut g, &p, x)?;
        Ok(g.value(y).clone())
    }

    /// Forward-only `(strong, weak)` for a spectrogram.
    pub fn infer<T: Real>(
        &self,
        params: &ParamSet<T>,
        spec: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let p = params.bind(&mut g, |_| false)?;
        let x = g.constant(spec.clone())?;
        let z = self.encode(&mut g, &p, x)?;
        let ctx = self.context_forward(&mut g, &p, z)?;
        let (s, w) = self.classify(&mut g, &p, ctx)?;
        Ok((g.value(s).clone(), g.value(w).clone()))
    }
}
