//! Block-level and frame-level temporal shuffling.
//!
//! Every perturbation is first *sampled* as a [`PerturbationRecord`] and
//! then *replayed* onto the sequence, so a record alone reproduces the
//! perturbed sequence bit-exactly and [`invert`] can undo the reordering.
//!
//! Block shuffle keeps the first and last blocks as anchors, picks
//! `round(p_b·B)` interior blocks and deranges them; each moved block may be
//! time-reversed (`flip_rate`) and then receives `λ·N(0, I)` noise. Frame
//! shuffle picks `round(p_fb·B)` blocks (anchors included) and deranges
//! `round(p_ff·F)` frame positions inside each of them.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// `T × D` frame matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence<T> {
    frames: Vec<T>,
    len: usize,
    dim: usize,
}

impl<T: Real> FrameSequence<T> {
    pub fn new(len: usize, dim: usize, frames: Vec<T>) -> Result<Self> {
        if len == 0 || dim == 0 || frames.len() != len * dim {
            return Err(Error::Shape {
                expected: vec![len, dim],
                actual: vec![frames.len()],
            });
        }
        if let Some(index) = frames.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                op: "frame_sequence",
                index,
            });
        }
        Ok(Self { frames, len, dim })
    }

    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        if t.shape().len() != 2 {
            return Err(Error::Shape {
                expected: vec![0, 0],
                actual: t.shape().to_vec(),
            });
        }
        Self::new(t.rows(), t.cols(), t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new([self.len, self.dim], self.frames.clone()).expect("consistent shape")
    }

    pub fn num_frames(&self) -> usize {
        self.len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, t: usize) -> &[T] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[T] {
        &self.frames
    }

    fn frame_mut(&mut self, t: usize) -> &mut [T] {
        &mut self.frames[t * self.dim..(t + 1) * self.dim]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub block_size: usize,
    pub num_blocks: usize,
}

impl BlockPartition {
    pub fn frames(&self, block: usize) -> std::ops::Range<usize> {
        block * self.block_size..(block + 1) * self.block_size
    }
}

/// Splits `num_frames` into equal blocks; remainders are rejected.
pub fn partition(num_frames: usize, block_size: usize) -> Result<BlockPartition> {
    if block_size == 0 || num_frames == 0 || !num_frames.is_multiple_of(block_size) {
        return Err(Error::Partition {
            frames: num_frames,
            block_size,
        });
    }
    Ok(BlockPartition {
        block_size,
        num_blocks: num_frames / block_size,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShuffleMode {
    Block,
    Frame,
    Multitask,
}

/// Which perturbation even iterations get in multitask mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultitaskOrder {
    #[default]
    BlockFirst,
    FrameFirst,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppliedMode {
    Block,
    Frame,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShuffleSpec {
    pub p_b: f64,
    pub p_fb: f64,
    pub p_ff: f64,
    pub flip_rate: f64,
    pub noise_scale: f64,
    pub mode: ShuffleMode,
    pub seed: u64,
    /// Block length for block-level shuffle (5 frames → 20 blocks of 100).
    pub block_size: usize,
    /// Block length for frame-level shuffle (20 frames → 5 blocks of 100).
    pub frame_block_size: usize,
    #[serde(default)]
    pub multitask_order: MultitaskOrder,
    /// Apply both perturbations to every clip and sum the two losses,
    /// instead of alternating between iterations.
    #[serde(default)]
    pub parallel_multitask: bool,
}

impl Default for ShuffleSpec {
    fn default() -> Self {
        Self {
            p_b: 0.75,
            p_fb: 0.5,
            p_ff: 0.25,
            flip_rate: 0.0,
            noise_scale: 0.0,
            mode: ShuffleMode::Multitask,
            seed: 0,
            block_size: 5,
            frame_block_size: 20,
            multitask_order: MultitaskOrder::BlockFirst,
            parallel_multitask: false,
        }
    }
}

impl ShuffleSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("p_b", self.p_b),
            ("p_fb", self.p_fb),
            ("p_ff", self.p_ff),
            ("flip_rate", self.flip_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return Err(Error::Config(format!(
                "noise scale {} must be finite and >= 0",
                self.noise_scale
            )));
        }
        if self.block_size == 0 || self.frame_block_size == 0 {
            return Err(Error::Config("block sizes must be positive".into()));
        }
        Ok(())
    }

    /// Perturbation applied at a given training iteration.
    pub fn mode_for(&self, iteration: u64) -> AppliedMode {
        match self.mode {
            ShuffleMode::Block => AppliedMode::Block,
            ShuffleMode::Frame => AppliedMode::Frame,
            ShuffleMode::Multitask => {
                let even = iteration.is_multiple_of(2);
                match (self.multitask_order, even) {
                    (MultitaskOrder::BlockFirst, true) | (MultitaskOrder::FrameFirst, false) => {
                        AppliedMode::Block
                    }
                    _ => AppliedMode::Frame,
                }
            }
        }
    }
}

/// Exact log of one perturbation.
///
/// `block_perm[p]` is the source block placed at position `p`;
/// `frame_perms[b][i]` is the source frame (within block `b`) placed at
/// offset `i`; `flipped` lists destination blocks that were time-reversed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub block_perm: Vec<usize>,
    pub frame_perms: BTreeMap<usize, Vec<usize>>,
    pub flipped: BTreeSet<usize>,
    pub noise_seed: u64,
    pub noise_scale: f64,
    /// Blocks that were selected for shuffling (noise targets).
    pub chosen: BTreeSet<usize>,
    pub partition: BlockPartition,
    pub num_frames: usize,
}

impl PerturbationRecord {
    pub fn identity(partition: BlockPartition) -> Self {
        Self {
            block_perm: (0..partition.num_blocks).collect(),
            frame_perms: BTreeMap::new(),
            flipped: BTreeSet::new(),
            noise_seed: 0,
            noise_scale: 0.0,
            chosen: BTreeSet::new(),
            partition,
            num_frames: partition.block_size * partition.num_blocks,
        }
    }

    /// Source frame index for every destination frame.
    pub fn source_frames(&self) -> Vec<usize> {
        let f = self.partition.block_size;
        let mut src = Vec::with_capacity(self.num_frames);
        for (p, &b) in self.block_perm.iter().enumerate() {
            let flip = self.flipped.contains(&p);
            for i in 0..f {
                let within = if flip { f - 1 - i } else { i };
                src.push(b * f + within);
            }
        }
        // Frame perms act after block placement, within destination blocks.
        let placed = src.clone();
        for (&b, perm) in &self.frame_perms {
            for (i, &s) in perm.iter().enumerate() {
                src[b * f + i] = placed[b * f + s];
            }
        }
        src
    }

    /// Frames whose content came from a different position.
    pub fn displaced_frames(&self) -> usize {
        self.source_frames()
            .iter()
            .enumerate()
            .filter(|(t, &s)| *t != s)
            .count()
    }

    /// Blocks whose source block differs from their position.
    pub fn displaced_blocks(&self) -> usize {
        self.block_perm
            .iter()
            .enumerate()
            .filter(|(p, &b)| *p != b)
            .count()
    }

    /// The noise that replay adds to each chosen destination block,
    /// regenerated from `noise_seed`.
    pub fn noise<T: Real>(&self, dim: usize) -> BTreeMap<usize, Vec<T>> {
        let mut out = BTreeMap::new();
        if self.noise_scale == 0.0 {
            return out;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        let n = self.partition.block_size * dim;
        for &b in &self.chosen {
            let block = (0..n)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    T::lit(self.noise_scale * z)
                })
                .collect();
            out.insert(b, block);
        }
        out
    }

    fn check_shape<T: Real>(&self, seq: &FrameSequence<T>) -> Result<()> {
        if seq.num_frames() != self.num_frames || self.block_perm.len() != self.partition.num_blocks
        {
            return Err(Error::Record(format!(
                "record for {} frames ({} blocks) applied to {} frames",
                self.num_frames,
                self.partition.num_blocks,
                seq.num_frames()
            )));
        }
        Ok(())
    }

    /// Applies the record to `original`: permute, flip, add noise, then
    /// shuffle frames within blocks.
    pub fn replay<T: Real>(&self, original: &FrameSequence<T>) -> Result<FrameSequence<T>> {
        self.check_shape(original)?;
        let f = self.partition.block_size;
        let d = original.dim();
        let mut out = original.clone();
        for (p, &b) in self.block_perm.iter().enumerate() {
            let flip = self.flipped.contains(&p);
            if b == p && !flip {
                continue;
            }
            for i in 0..f {
                let within = if flip { f - 1 - i } else { i };
                let src = original.frame(b * f + within).to_vec();
                out.frame_mut(p * f + i).copy_from_slice(&src);
            }
        }
        for (b, noise) in self.noise::<T>(d) {
            for (x, z) in out.frames[b * f * d..(b + 1) * f * d].iter_mut().zip(noise) {
                *x += z;
            }
        }
        if !self.frame_perms.is_empty() {
            let placed = out.clone();
            for (&b, perm) in &self.frame_perms {
                for (i, &s) in perm.iter().enumerate() {
                    out.frame_mut(b * f + i)
                        .copy_from_slice(placed.frame(b * f + s));
                }
            }
        }
        Ok(out)
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Interior blocks selected by block shuffle for rate `p_b`.
pub fn block_shuffle_count(p_b: f64, num_blocks: usize) -> usize {
    round_half_up(p_b * num_blocks as f64).min(num_blocks.saturating_sub(2))
}

/// Blocks selected by frame shuffle for rate `p_fb`.
pub fn frame_block_count(p_fb: f64, num_blocks: usize) -> usize {
    round_half_up(p_fb * num_blocks as f64).min(num_blocks)
}

/// Frame positions shuffled inside a selected block for rate `p_ff`.
pub fn frame_position_count(p_ff: f64, block_size: usize) -> usize {
    round_half_up(p_ff * block_size as f64).min(block_size)
}

/// Uniform derangement of `items` (every element moves) when there are at
/// least two of them.
fn derange<R: Rng + ?Sized>(items: &[usize], rng: &mut R) -> Vec<usize> {
    let mut out = items.to_vec();
    if items.len() < 2 {
        return out;
    }
    loop {
        out.shuffle(rng);
        if out.iter().zip(items).all(|(a, b)| a != b) {
            return out;
        }
    }
}

fn sample_sorted<R: Rng + ?Sized>(rng: &mut R, population: usize, amount: usize) -> Vec<usize> {
    let mut v = index::sample(rng, population, amount).into_vec();
    v.sort_unstable();
    v
}

/// Samples a block-level record without touching any data.
pub fn sample_block_record<R: Rng + ?Sized>(
    part: BlockPartition,
    p_b: f64,
    flip_rate: f64,
    noise_scale: f64,
    rng: &mut R,
) -> Result<PerturbationRecord> {
    if part.num_blocks < 3 {
        return Err(Error::Perturbation(format!(
            "block shuffle needs at least 3 blocks, got {}",
            part.num_blocks
        )));
    }
    let k = block_shuffle_count(p_b, part.num_blocks);
    let chosen: Vec<usize> = sample_sorted(rng, part.num_blocks - 2, k)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    let sources = derange(&chosen, rng);
    let mut rec = PerturbationRecord::identity(part);
    for (&dst, &src) in chosen.iter().zip(&sources) {
        rec.block_perm[dst] = src;
    }
    for &dst in &chosen {
        if rng.random::<f64>() < flip_rate {
            rec.flipped.insert(dst);
        }
    }
    rec.noise_seed = rng.random();
    rec.noise_scale = noise_scale;
    rec.chosen = chosen.into_iter().collect();
    Ok(rec)
}

/// Samples a frame-level record without touching any data.
pub fn sample_frame_record<R: Rng + ?Sized>(
    part: BlockPartition,
    p_fb: f64,
    p_ff: f64,
    rng: &mut R,
) -> Result<PerturbationRecord> {
    if part.block_size < 2 {
        return Err(Error::Perturbation(format!(
            "frame shuffle needs blocks of at least 2 frames, got {}",
            part.block_size
        )));
    }
    let m = frame_block_count(p_fb, part.num_blocks);
    let r = frame_position_count(p_ff, part.block_size);
    let mut rec = PerturbationRecord::identity(part);
    for b in sample_sorted(rng, part.num_blocks, m) {
        let positions = sample_sorted(rng, part.block_size, r);
        let sources = derange(&positions, rng);
        let mut perm: Vec<usize> = (0..part.block_size).collect();
        for (&dst, &src) in positions.iter().zip(&sources) {
            perm[dst] = src;
        }
        rec.frame_perms.insert(b, perm);
        rec.chosen.insert(b);
    }
    Ok(rec)
}

pub fn block_shuffle<T: Real, R: Rng + ?Sized>(
    seq: &FrameSequence<T>,
    part: BlockPartition,
    p_b: f64,
    flip_rate: f64,
    noise_scale: f64,
    rng: &mut R,
) -> Result<(FrameSequence<T>, PerturbationRecord)> {
    check_partition(seq, part)?;
    let rec = sample_block_record(part, p_b, flip_rate, noise_scale, rng)?;
    Ok((rec.replay(seq)?, rec))
}

pub fn frame_shuffle<T: Real, R: Rng + ?Sized>(
    seq: &FrameSequence<T>,
    part: BlockPartition,
    p_fb: f64,
    p_ff: f64,
    rng: &mut R,
) -> Result<(FrameSequence<T>, PerturbationRecord)> {
    check_partition(seq, part)?;
    let rec = sample_frame_record(part, p_fb, p_ff, rng)?;
    Ok((rec.replay(seq)?, rec))
}

fn check_partition<T: Real>(seq: &FrameSequence<T>, part: BlockPartition) -> Result<()> {
    if part.block_size * part.num_blocks != seq.num_frames() {
        return Err(Error::Partition {
            frames: seq.num_frames(),
            block_size: part.block_size,
        });
    }
    Ok(())
}

/// RNG for a given spec and iteration; distinct iterations get independent
/// streams.
pub fn iteration_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    rng
}

/// Applies the perturbation selected by `spec.mode` for this iteration.
pub fn apply<T: Real>(
    seq: &FrameSequence<T>,
    spec: &ShuffleSpec,
    iteration: u64,
) -> Result<(FrameSequence<T>, PerturbationRecord, AppliedMode)> {
    apply_mode(seq, spec, iteration, spec.mode_for(iteration))
}

/// Applies one specific perturbation kind, regardless of `spec.mode`.
pub fn apply_mode<T: Real>(
    seq: &FrameSequence<T>,
    spec: &ShuffleSpec,
    iteration: u64,
    mode: AppliedMode,
) -> Result<(FrameSequence<T>, PerturbationRecord, AppliedMode)> {
    spec.validate()?;
    let mut rng = iteration_rng(spec.seed, iteration);
    let (out, rec) = match mode {
        AppliedMode::Block => {
            let part = partition(seq.num_frames(), spec.block_size)?;
            block_shuffle(
                seq,
                part,
                spec.p_b,
                spec.flip_rate,
                spec.noise_scale,
                &mut rng,
            )?
        }
        AppliedMode::Frame => {
            let part = partition(seq.num_frames(), spec.frame_block_size)?;
            frame_shuffle(seq, part, spec.p_fb, spec.p_ff, &mut rng)?
        }
    };
    Ok((out, rec, mode))
}

/// Undoes the reordering described by `rec`. Injected noise stays in place:
/// with `λ > 0` the result is the original plus the recorded noise on the
/// chosen blocks.
pub fn invert<T: Real>(
    perturbed: &FrameSequence<T>,
    rec: &PerturbationRecord,
) -> Result<FrameSequence<T>> {
    rec.check_shape(perturbed)?;
    let f = rec.partition.block_size;
    let mut cur = perturbed.clone();
    if !rec.frame_perms.is_empty() {
        let shuffled = cur.clone();
        for (&b, perm) in &rec.frame_perms {
            if perm.len() != f {
                return Err(Error::Record(format!(
                    "frame permutation of length {} for block size {f}",
                    perm.len()
                )));
            }
            for (i, &s) in perm.iter().enumerate() {
                cur.frame_mut(b * f + s)
                    .copy_from_slice(shuffled.frame(b * f + i));
            }
        }
    }
    let placed = cur.clone();
    for (p, &b) in rec.block_perm.iter().enumerate() {
        let flip = rec.flipped.contains(&p);
        for i in 0..f {
            let within = if flip { f - 1 - i } else { i };
            cur.frame_mut(b * f + within)
                .copy_from_slice(placed.frame(p * f + i));
        }
    }
    Ok(cur)
}
