//! Waveform normalization and log-mel extraction.
//!
//! Front-end parameters: 16 kHz audio, 1024-point FFT, hop 320 (20 ms),
//! periodic Hann window, 128 Slaney mel bands over 0–8 kHz with
//! area-normalized triangles, `ln(mel + 1e-8)`. Frames are centered with
//! reflect padding, so a clip of `n` samples yields `ceil(n / 320)` frames
//! (500 for a 10 s clip).

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;
pub const N_FFT: usize = 1024;
pub const HOP: usize = 320;
pub const N_MELS: usize = 128;
pub const F_MIN: f64 = 0.0;
pub const F_MAX: f64 = 8_000.0;
pub const LOG_FLOOR: f64 = 1e-8;
pub const CLIP_SECONDS: f64 = 10.0;
pub const CLIP_SAMPLES: usize = 160_000;
/// Spectrogram frames for a 10 s clip.
pub const CLIP_FRAMES: usize = CLIP_SAMPLES / HOP;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(Error::Data(format!(
                "expected mono audio, got {} channels",
                spec.channels
            )));
        }
        let samples = match spec.sample_format {
            hound::SampleFormat::Int => {
                let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
                reader
                    .samples::<i32>()
                    .map(|s| s.map(|v| v as f32 * scale))
                    .collect::<std::result::Result<Vec<_>, _>>()?
            }
            hound::SampleFormat::Float => reader
                .samples::<f32>()
                .collect::<std::result::Result<Vec<_>, _>>()?,
        };
        Ok(Self::new(samples, spec.sample_rate))
    }

    /// 16-bit PCM mono.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            w.write_sample(q)?;
        }
        w.finalize()?;
        Ok(())
    }
}

/// Scales the clip so its peak magnitude is one. All-zero input is
/// returned unchanged.
pub fn normalize(w: &Waveform) -> Waveform {
    let peak = w.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()));
    if peak == 0.0 {
        return w.clone();
    }
    Waveform::new(w.samples.iter().map(|s| s / peak).collect(), w.sample_rate)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogMelSpectrogram {
    /// `[frames, 128]` log-mel energies.
    pub frames: Tensor<f32>,
}

impl LogMelSpectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= min_log_hz {
        min_log_mel + (hz / min_log_hz).ln() / logstep
    } else {
        hz / f_sp
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        min_log_hz * (logstep * (mel - min_log_mel)).exp()
    } else {
        f_sp * mel
    }
}

/// Edge frequencies of the `n_mels` triangles: `n_mels + 2` points evenly
/// spaced on the mel axis.
pub fn mel_edges(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Area-normalized triangular filterbank, `[n_mels][n_fft/2 + 1]`.
pub fn mel_filterbank(
    sample_rate: u32,
    n_fft: usize,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
) -> Vec<Vec<f64>> {
    let edges = mel_edges(n_mels, fmin, fmax);
    let bins = n_fft / 2 + 1;
    let freqs: Vec<f64> = (0..bins)
        .map(|k| k as f64 * sample_rate as f64 / n_fft as f64)
        .collect();
    (0..n_mels)
        .map(|i| {
            let (l, c, r) = (edges[i], edges[i + 1], edges[i + 2]);
            let enorm = 2.0 / (r - l);
            freqs
                .iter()
                .map(|&f| {
                    let lower = (f - l) / (c - l);
                    let upper = (r - f) / (r - c);
                    lower.min(upper).max(0.0) * enorm
                })
                .collect()
        })
        .collect()
}

/// Index into a signal reflected about its end samples (no edge repeat).
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Reusable STFT + mel projection.
pub struct LogMelExtractor {
    window: Vec<f64>,
    /// Sparse filterbank rows: (first bin, weights).
    filters: Vec<(usize, Vec<f64>)>,
    fft: Arc<dyn Fft<f64>>,
}

impl Default for LogMelExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl LogMelExtractor {
    pub fn new() -> Self {
        let window = (0..N_FFT)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / N_FFT as f64).cos())
            .collect();
        let filters = mel_filterbank(SAMPLE_RATE, N_FFT, N_MELS, F_MIN, F_MAX)
            .into_iter()
            .map(|row| {
                let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
                let last = row.iter().rposition(|&w| w > 0.0).unwrap_or(0);
                (first, row[first..=last].to_vec())
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        Self {
            window,
            filters,
            fft,
        }
    }

    pub fn num_frames(num_samples: usize) -> usize {
        num_samples.div_ceil(HOP)
    }

    /// Hann-windowed samples of frame `t`, centered at sample `t * HOP`.
    pub fn windowed_frame(&self, samples: &[f32], t: usize) -> Vec<f64> {
        let start = (t * HOP) as isize - (N_FFT / 2) as isize;
        (0..N_FFT)
            .map(|n| samples[reflect(start + n as isize, samples.len())] as f64 * self.window[n])
            .collect()
    }

    /// One-sided power spectrum `|X_k|²`, `k = 0..=N_FFT/2`.
    pub fn power_spectrum(&self, samples: &[f32], t: usize) -> Vec<f64> {
        self.magnitude(samples, t)
            .into_iter()
            .map(|m| m * m)
            .collect()
    }

    fn magnitude(&self, samples: &[f32], t: usize) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = self
            .windowed_frame(samples, t)
            .into_iter()
            .map(|x| Complex::new(x, 0.0))
            .collect();
        self.fft.process(&mut buf);
        buf[..=N_FFT / 2].iter().map(|c| c.norm()).collect()
    }

    pub fn extract(&self, w: &Waveform) -> Result<LogMelSpectrogram> {
        if w.sample_rate != SAMPLE_RATE {
            return Err(Error::Config(format!(
                "log-mel front end expects {SAMPLE_RATE} Hz audio, got {}",
                w.sample_rate
            )));
        }
        if w.samples.is_empty() {
            return Err(Error::Data("empty waveform".into()));
        }
        let frames = Self::num_frames(w.samples.len());
        let mut out = Vec::with_capacity(frames * N_MELS);
        for t in 0..frames {
            let mag = self.magnitude(&w.samples, t);
            for (first, weights) in &self.filters {
                let e: f64 = weights.iter().zip(&mag[*first..]).map(|(a, b)| a * b).sum();
                out.push((e + LOG_FLOOR).ln() as f32);
            }
        }
        Ok(LogMelSpectrogram {
            frames: Tensor::new([frames, N_MELS], out)?,
        })
    }
}

pub fn logmel(w: &Waveform) -> Result<LogMelSpectrogram> {
    LogMelExtractor::new().extract(w)
}

/// Per-bin standardization statistics, fitted on the strongly labeled split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardizer {
    pub fn fit<'a>(specs: impl IntoIterator<Item = &'a Tensor<f32>>) -> Result<Self> {
        let mut sum = vec![0.0f64; N_MELS];
        let mut sq = vec![0.0f64; N_MELS];
        let mut n = 0usize;
        for s in specs {
            if s.cols() != N_MELS {
                return Err(Error::Shape {
                    expected: vec![s.rows(), N_MELS],
                    actual: s.shape().to_vec(),
                });
            }
            for row in s.data().chunks(N_MELS) {
                for (j, &v) in row.iter().enumerate() {
                    sum[j] += v as f64;
                    sq[j] += (v as f64) * (v as f64);
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Data("cannot fit standardizer on no frames".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / n as f64 - m * m).max(0.0).sqrt().max(1e-5)) as f32)
            .collect();
        Ok(Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    pub fn apply(&self, s: &Tensor<f32>) -> Tensor<f32> {
        let c = s.cols();
        Tensor::from_fn(s.shape().to_vec(), |i| {
            let j = i % c;
            (s.data()[i] - self.mean[j]) / self.std[j]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, n: usize, amp: f64) -> Vec<f32> {
        (0..n)
            .map(|i| {
                (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
                    as f32
            })
            .collect()
    }

    #[test]
    fn normalize_scales_to_unit_peak() {
        let w = Waveform::new(vec![0.5, -0.25], SAMPLE_RATE);
        assert_eq!(normalize(&w).samples, vec![1.0, -0.5]);
        let z = Waveform::new(vec![0.0; 16], SAMPLE_RATE);
        assert_eq!(normalize(&z), z);
    }

    #[test]
    fn ten_second_clip_has_500_frames() {
        assert_eq!(LogMelExtractor::num_frames(CLIP_SAMPLES), 500);
        assert_eq!(CLIP_FRAMES, 500);
    }

    #[test]
    fn silence_maps_to_log_floor() {
        let w = Waveform::new(vec![0.0; 3200], SAMPLE_RATE);
        let s = logmel(&w).unwrap();
        assert_eq!(s.frames.shape(), &[10, N_MELS]);
        let floor = (LOG_FLOOR.ln()) as f32;
        assert!(s.frames.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn wrong_rate_is_config_error() {
        let w = Waveform::new(vec![0.1; 1000], 22_050);
        assert!(matches!(logmel(&w), Err(Error::Config(_))));
    }

    #[test]
    fn filterbank_rows_are_nonempty() {
        let fb = mel_filterbank(SAMPLE_RATE, N_FFT, N_MELS, F_MIN, F_MAX);
        assert_eq!(fb.len(), N_MELS);
        for row in &fb {
            assert!(row.iter().any(|&w| w > 0.0));
        }
    }

    #[test]
    fn parseval_holds_per_frame() {
        let ex = LogMelExtractor::new();
        let mut state = 12345u64;
        let samples: Vec<f32> = (0..8000)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((state >> 33) as f64 / (1u64 << 31) as f64 - 1.0) as f32
            })
            .collect();
        for t in [0, 3, 10, 24] {
            let time: f64 = ex.windowed_frame(&samples, t).iter().map(|x| x * x).sum();
            let p = ex.power_spectrum(&samples, t);
            let half = N_FFT / 2;
            let spec: f64 = p[0] + p[half] + 2.0 * p[1..half].iter().sum::<f64>();
            let ratio = spec / (N_FFT as f64 * time);
            assert!((ratio - 1.0).abs() < 0.01, "frame {t}: ratio {ratio}");
        }
    }

    #[test]
    fn sine_peaks_in_covering_triangle() {
        let w = normalize(&Waveform::new(sine(1000.0, 16000, 0.8), SAMPLE_RATE));
        let s = logmel(&w).unwrap();
        let edges = mel_edges(N_MELS, F_MIN, F_MAX);
        let argmax = |row: &[f32]| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap()
        };
        // Frames whose window lies fully inside the signal.
        let interior = (N_FFT / 2).div_ceil(HOP)..s.num_frames() - (N_FFT / 2).div_ceil(HOP);
        let peak = argmax(s.frames.row(interior.start));
        for t in 0..s.num_frames() {
            let bin = argmax(s.frames.row(t));
            assert!(
                edges[bin] < 1000.0 && 1000.0 < edges[bin + 2],
                "frame {t}: bin {bin}"
            );
            if interior.contains(&t) {
                assert_eq!(bin, peak, "frame {t}");
            }
        }
    }

    #[test]
    fn one_hop_delay_shifts_interior_frames() {
        let mut state = 99u64;
        let base: Vec<f32> = (0..16000)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                ((state >> 40) as f32 / (1u32 << 24) as f32) - 0.5
            })
            .collect();
        let mut delayed = vec![0.0f32; HOP];
        delayed.extend_from_slice(&base[..base.len() - HOP]);
        let a = logmel(&Waveform::new(base, SAMPLE_RATE)).unwrap();
        let b = logmel(&Waveform::new(delayed, SAMPLE_RATE)).unwrap();
        let frames = a.num_frames();
        for t in 3..frames - 3 {
            for (x, y) in a.frames.row(t).iter().zip(b.frames.row(t + 1)) {
                assert!((x - y).abs() < 1e-5, "frame {t}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let w = Waveform::new(sine(440.0, 4000, 0.3), SAMPLE_RATE);
        assert_eq!(logmel(&w).unwrap(), logmel(&w).unwrap());
    }

    #[test]
    fn standardizer_centers_bins() {
        let a = Tensor::from_fn([4, N_MELS], |i| (i % 7) as f32);
        let st = Standardizer::fit([&a]).unwrap();
        let z = st.apply(&a);
        for j in 0..N_MELS {
            let m: f32 = (0..4).map(|i| z.at(i, j)).sum::<f32>() / 4.0;
            assert!(m.abs() < 1e-5);
        }
    }
}
