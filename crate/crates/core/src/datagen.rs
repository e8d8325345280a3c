//! Synthetic ten-class dataset: short tone bursts and long band-limited
//! noises over a quiet pink-noise bed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{format_weak, write_events, Event, EventList, EventTable};
use crate::features::{Waveform, CLIP_SAMPLES, CLIP_SECONDS, SAMPLE_RATE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Transient,
    Stationary,
}

impl Category {
    /// Median-filter width used in post-processing.
    pub fn median_window(self) -> usize {
        match self {
            Category::Transient => 5,
            Category::Stationary => 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Recipe {
    /// Sine burst at `freq_hz` scaled by a factor drawn from
    /// `1 ± detune`.
    Tone { freq_hz: f64, detune: f64 },
    /// White noise restricted to `[lo_hz, hi_hz]`.
    Band { lo_hz: f64, hi_hz: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub id: usize,
    pub name: String,
    pub category: Category,
    pub recipe: Recipe,
    /// Event length range in seconds.
    pub duration: (f64, f64),
}

pub fn default_classes() -> Vec<ClassSpec> {
    let tones = [440.0, 1000.0, 2000.0, 3500.0, 6000.0];
    let bands = [
        (150.0, 300.0),
        (600.0, 800.0),
        (1300.0, 1700.0),
        (2500.0, 3000.0),
        (4200.0, 5200.0),
    ];
    let mut classes = Vec::new();
    for f in tones {
        classes.push(ClassSpec {
            id: classes.len(),
            name: format!("tone_{f}"),
            category: Category::Transient,
            recipe: Recipe::Tone {
                freq_hz: f,
                detune: 0.1,
            },
            duration: (0.05, 0.3),
        });
    }
    for (lo, hi) in bands {
        classes.push(ClassSpec {
            id: classes.len(),
            name: format!("band_{lo}_{hi}"),
            category: Category::Stationary,
            recipe: Recipe::Band {
                lo_hz: lo,
                hi_hz: hi,
            },
            duration: (1.0, 6.0),
        });
    }
    classes
}

/// Reference RMS of a full-level event.
const EVENT_RMS: f64 = 0.1;
const BED_DB: f64 = -30.0;
const FADE_SECONDS: f64 = 0.005;

fn pink_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Paul Kellet's refined filter.
    let mut b = [0.0f64; 7];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let w: f64 = rng.sample(StandardNormal);
        b[0] = 0.99886 * b[0] + w * 0.0555179;
        b[1] = 0.99332 * b[1] + w * 0.0750759;
        b[2] = 0.96900 * b[2] + w * 0.1538520;
        b[3] = 0.86650 * b[3] + w * 0.3104856;
        b[4] = 0.55000 * b[4] + w * 0.5329522;
        b[5] = -0.7616 * b[5] - w * 0.0168980;
        out.push(b.iter().sum::<f64>() + w * 0.5362);
        b[6] = w * 0.115926;
    }
    out
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

fn band_noise(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let sr = SAMPLE_RATE as f64;
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * sr / n as f64;
        if f < lo || f > hi {
            *v = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Renders one event of `spec` lasting `n` samples at unit RMS.
fn render(spec: &ClassSpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = match spec.recipe {
        Recipe::Tone { freq_hz, detune } => {
            let f = freq_hz * (1.0 + rng.random_range(-detune..=detune));
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (0..n)
                .map(|i| (std::f64::consts::TAU * f * i as f64 / SAMPLE_RATE as f64 + phase).sin())
                .collect()
        }
        Recipe::Band { lo_hz, hi_hz } => band_noise(rng, n, lo_hz, hi_hz),
    };
    let fade = ((FADE_SECONDS * SAMPLE_RATE as f64) as usize).min(n / 2);
    for i in 0..fade {
        let g = 0.5 - 0.5 * (std::f64::consts::PI * i as f64 / fade as f64).cos();
        x[i] *= g;
        x[n - 1 - i] *= g;
    }
    let r = rms(&x).max(1e-12);
    x.iter_mut().for_each(|v| *v /= r);
    x
}

/// Mixes the given events over a pink bed. Onsets and offsets are snapped to
/// whole samples; the returned list holds the snapped times.
pub fn synth_clip_with_events(
    seed: u64,
    classes: &[ClassSpec],
    placed: &[Event],
) -> Result<(Waveform, Vec<Event>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bed = pink_noise(&mut rng, CLIP_SAMPLES);
    let scale = EVENT_RMS * 10f64.powf(BED_DB / 20.0) / rms(&bed).max(1e-12);
    let mut mix: Vec<f64> = bed.iter().map(|v| v * scale).collect();
    let sr = SAMPLE_RATE as f64;
    let mut events = Vec::with_capacity(placed.len());
    for e in placed {
        e.validate()?;
        let spec = classes
            .iter()
            .find(|c| c.id == e.class)
            .ok_or_else(|| Error::Data(format!("unknown class id {}", e.class)))?;
        let start = (e.onset * sr).round() as usize;
        let end = ((e.offset * sr).round() as usize).min(CLIP_SAMPLES);
        if end <= start {
            return Err(Error::Data(format!(
                "event ({}, {}) shorter than a sample",
                e.onset, e.offset
            )));
        }
        let gain = EVENT_RMS * 10f64.powf(rng.random_range(-6.0..=0.0) / 20.0);
        for (i, v) in render(spec, end - start, &mut rng).into_iter().enumerate() {
            mix[start + i] += gain * v;
        }
        events.push(Event::new(e.class, start as f64 / sr, end as f64 / sr));
    }
    let samples = mix.iter().map(|&v| v.clamp(-1.0, 1.0) as f32).collect();
    Ok((Waveform::new(samples, SAMPLE_RATE), events))
}

/// 1–4 events with uniform class, duration and onset. An empty class list
/// yields a bed-only clip.
pub fn synth_clip(seed: u64, classes: &[ClassSpec]) -> Result<(Waveform, Vec<Event>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667_f3bc_c908);
    let mut placed = Vec::new();
    if !classes.is_empty() {
        let n = rng.random_range(1..=4);
        for _ in 0..n {
            let spec = &classes[rng.random_range(0..classes.len())];
            let dur = rng.random_range(spec.duration.0..=spec.duration.1);
            let onset = rng.random_range(0.0..=CLIP_SECONDS - dur);
            placed.push(Event::new(spec.id, onset, onset + dur));
        }
    }
    let (w, mut events) = synth_clip_with_events(seed, classes, &placed)?;
    events.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.class.cmp(&b.class)));
    Ok((w, events))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Strong,
    Weak,
    Unlabeled,
    Validation,
}

impl Split {
    pub const ALL: [Split; 4] = [
        Split::Strong,
        Split::Weak,
        Split::Unlabeled,
        Split::Validation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Split::Strong => "strong",
            Split::Weak => "weak",
            Split::Unlabeled => "unlabeled",
            Split::Validation => "validation",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub strong: usize,
    pub weak: usize,
    pub unlabeled: usize,
    pub validation: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            strong: 200,
            weak: 200,
            unlabeled: 400,
            validation: 100,
        }
    }
}

impl SplitSizes {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Strong => self.strong,
            Split::Weak => self.weak,
            Split::Unlabeled => self.unlabeled,
            Split::Validation => self.validation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub sizes: SplitSizes,
    pub classes: Vec<ClassSpec>,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self {
            seed: 0,
            sizes: SplitSizes::default(),
            classes: default_classes(),
        }
    }
}

pub const MANIFEST_FILE: &str = "dataset.json";

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.classes.iter().enumerate() {
            if c.id != i {
                return Err(Error::Config(format!(
                    "class {} has id {}, expected {i}",
                    c.name, c.id
                )));
            }
            let (lo, hi) = c.duration;
            if !(lo > 0.0 && lo <= hi && hi <= CLIP_SECONDS) {
                return Err(Error::Config(format!(
                    "class {} duration range ({lo}, {hi}) invalid",
                    c.name
                )));
            }
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn median_windows(&self) -> Vec<usize> {
        self.classes
            .iter()
            .map(|c| c.category.median_window())
            .collect()
    }

    pub fn clip_id(split: Split, index: usize) -> String {
        format!("{}_{index:04}", split.name())
    }

    /// Per-clip seed, independent across splits and indices.
    pub fn clip_seed(&self, split: Split, index: usize) -> u64 {
        let mut z = self.seed.wrapping_add(
            0x9e37_79b9_7f4a_7c15u64.wrapping_mul(split.index() * 1_000_003 + index as u64 + 1),
        );
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Every clip of a split with its full event list.
    pub fn synth_split(&self, split: Split) -> Result<Vec<(EventList, Waveform)>> {
        (0..self.sizes.get(split))
            .map(|i| {
                let (w, events) = synth_clip(self.clip_seed(split, i), &self.classes)?;
                Ok((EventList::new(Self::clip_id(split, i), events), w))
            })
            .collect()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::Dependency {
                what: "dataset manifest".into(),
                path,
            });
        }
        let m: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        m.validate()?;
        Ok(m)
    }
}

pub fn audio_dir(root: &Path, split: Split) -> PathBuf {
    root.join("audio").join(split.name())
}

pub fn strong_labels_path(root: &Path, split: Split) -> PathBuf {
    root.join("labels").join(format!("{}.tsv", split.name()))
}

pub fn weak_labels_path(root: &Path) -> PathBuf {
    root.join("labels").join("weak.txt")
}

/// Writes audio, labels and the manifest under `root`, which must not
/// already contain a dataset.
pub fn build_dataset(manifest: &DatasetManifest, root: &Path) -> Result<()> {
    manifest.validate()?;
    if root.join(MANIFEST_FILE).exists() || root.join("audio").exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::AlreadyExists,
            format!("{} already holds a dataset", root.display()),
        )));
    }
    std::fs::create_dir_all(root.join("labels"))?;
    let names = manifest.class_names();
    for split in Split::ALL {
        let dir = audio_dir(root, split);
        std::fs::create_dir_all(&dir)?;
        let mut strong = EventTable::new();
        let mut weak = BTreeMap::new();
        for (list, wave) in manifest.synth_split(split)? {
            wave.write_wav(dir.join(format!("{}.wav", list.clip_id)))?;
            weak.insert(list.clip_id.clone(), list.classes());
            strong.insert(list.clip_id, list.events);
        }
        match split {
            Split::Strong | Split::Validation => {
                write_events(strong_labels_path(root, split), &strong, &names)?
            }
            Split::Weak => std::fs::write(weak_labels_path(root), format_weak(&weak, &names))?,
            Split::Unlabeled => {}
        }
    }
    std::fs::write(
        root.join(MANIFEST_FILE),
        serde_json::to_string_pretty(manifest)?,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let c = default_classes();
        let a = synth_clip(7, &c).unwrap();
        let b = synth_clip(7, &c).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, synth_clip(8, &c).unwrap().0);
    }

    #[test]
    fn empty_class_list_gives_bed_only() {
        let (w, events) = synth_clip(1, &[]).unwrap();
        assert!(events.is_empty());
        assert_eq!(w.samples.len(), CLIP_SAMPLES);
        let level = rms(&w.samples.iter().map(|&v| v as f64).collect::<Vec<_>>());
        assert!((level - EVENT_RMS * 10f64.powf(BED_DB / 20.0)).abs() < 1e-4);
    }

    #[test]
    fn events_within_clip_and_counts_in_range() {
        let c = default_classes();
        for seed in 0..50 {
            let (_, events) = synth_clip(seed, &c).unwrap();
            assert!((1..=4).contains(&events.len()));
            for e in &events {
                assert!(e.onset >= 0.0 && e.offset <= CLIP_SECONDS && e.onset < e.offset);
                let (lo, hi) = c[e.class].duration;
                assert!(e.duration() >= lo - 1e-4 && e.duration() <= hi + 1e-4);
            }
        }
    }

    #[test]
    fn clip_ids_unique_across_splits() {
        let m = DatasetManifest::default();
        let mut ids = std::collections::BTreeSet::new();
        let mut seeds = std::collections::BTreeSet::new();
        for s in Split::ALL {
            for i in 0..m.sizes.get(s) {
                assert!(ids.insert(DatasetManifest::clip_id(s, i)));
                assert!(seeds.insert(m.clip_seed(s, i)));
            }
        }
    }
}
