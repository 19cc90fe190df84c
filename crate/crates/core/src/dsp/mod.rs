//! Log mel-filterbank features and fixed-length segmentation.

mod cache;
mod fft;
mod mel;
mod wav;

pub use cache::{read_cache, read_cache_from, write_cache, write_cache_to, CACHE_MAGIC, CACHE_VERSION};
pub use fft::Fft;
pub use mel::{filter_centers, hz_to_mel, mel_filterbank, mel_to_hz};
pub use wav::{read_wav, resample_linear, write_wav};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const N_FILTERS: usize = 40;
pub const SEGMENT_FRAMES: usize = 197;
pub const TRAIN_HOP_FRAMES: usize = 100;
pub const TEST_HOP_FRAMES: usize = 40;
pub const LOG_FLOOR: f64 = 1e-10;
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub utterance_id: String,
    pub label: usize,
}

impl AudioClip {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// A `SEGMENT_FRAMES × n_bins` block of features, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSegment {
    pub frames: Vec<f64>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub utterance_id: String,
    pub label: usize,
    pub segment_index: usize,
}

impl FeatureSegment {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * self.n_bins..(t + 1) * self.n_bins]
    }
}

/// Features of one clip: `n_frames × n_bins`, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Vec<f64>,
    pub n_frames: usize,
    pub n_bins: usize,
}

impl FeatureMatrix {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn hop_frames(self) -> usize {
        match self {
            Split::Train => TRAIN_HOP_FRAMES,
            Split::Test => TEST_HOP_FRAMES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FbankConfig {
    pub n_filters: usize,
    pub win_len: f64,
    pub hop: f64,
}

impl Default for FbankConfig {
    fn default() -> Self {
        Self { n_filters: N_FILTERS, win_len: 0.04, hop: 0.01 }
    }
}

impl FbankConfig {
    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.win_len * sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop * sample_rate as f64).round() as usize
    }

    pub fn nfft(&self, sample_rate: u32) -> usize {
        self.window_samples(sample_rate).next_power_of_two()
    }

    /// Number of whole windows that fit in `n_samples`.
    pub fn num_frames(&self, n_samples: usize, sample_rate: u32) -> usize {
        let (win, hop) = (self.window_samples(sample_rate), self.hop_samples(sample_rate));
        if n_samples < win {
            0
        } else {
            (n_samples - win) / hop + 1
        }
    }
}

/// Symmetric Hamming window of length `n`.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * libm::cos(2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64))
        .collect()
}

/// Reusable extractor holding the window, FFT plan and filterbank.
pub struct Fbank {
    cfg: FbankConfig,
    sample_rate: u32,
    window: Vec<f64>,
    hop: usize,
    fft: Fft,
    filters: Vec<f64>,
}

impl Fbank {
    pub fn new(cfg: FbankConfig, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 || !(cfg.win_len > 0.0) || !(cfg.hop > 0.0) {
            return Err(Error::Config(format!(
                "invalid framing: rate {sample_rate}, window {} s, hop {} s",
                cfg.win_len, cfg.hop
            )));
        }
        let win = cfg.window_samples(sample_rate);
        let hop = cfg.hop_samples(sample_rate);
        if win == 0 || hop == 0 {
            return Err(Error::Config("window or hop rounds to zero samples".into()));
        }
        let nfft = cfg.nfft(sample_rate);
        let filters = mel_filterbank(cfg.n_filters, nfft, sample_rate as f64)?;
        Ok(Self { cfg, sample_rate, window: hamming(win), hop, fft: Fft::new(nfft), filters })
    }

    pub fn config(&self) -> &FbankConfig {
        &self.cfg
    }

    pub fn compute(&self, samples: &[f64]) -> Result<FeatureMatrix> {
        let win = self.window.len();
        if samples.len() < win {
            return Err(Error::TooShort { samples: samples.len(), needed: win });
        }
        let n_frames = self.cfg.num_frames(samples.len(), self.sample_rate);
        let n_bins = self.cfg.n_filters;
        let spec_bins = self.fft.len() / 2 + 1;
        let mut data = Vec::with_capacity(n_frames * n_bins);
        let mut frame = vec![0.0; win];
        for t in 0..n_frames {
            let start = t * self.hop;
            for (i, f) in frame.iter_mut().enumerate() {
                *f = samples[start + i] * self.window[i];
            }
            let power = self.fft.power_spectrum(&frame);
            for m in 0..n_bins {
                let weights = &self.filters[m * spec_bins..(m + 1) * spec_bins];
                let energy: f64 = weights.iter().zip(&power).map(|(w, p)| w * p).sum();
                data.push(libm::log(energy.max(LOG_FLOOR)));
            }
        }
        Ok(FeatureMatrix { data, n_frames, n_bins })
    }
}

/// Log mel-filterbank energies of `clip`.
pub fn logfbank(clip: &AudioClip, cfg: &FbankConfig) -> Result<FeatureMatrix> {
    Fbank::new(*cfg, clip.sample_rate)?.compute(&clip.samples)
}

/// Start frame and number of real (unpadded) frames of every segment.
pub fn segment_starts(n_frames: usize, split: Split) -> Vec<(usize, usize)> {
    let hop = split.hop_frames();
    let mut out = Vec::new();
    let mut start = 0;
    let mut covered = 0;
    loop {
        if start + SEGMENT_FRAMES <= n_frames {
            out.push((start, SEGMENT_FRAMES));
            covered = start + SEGMENT_FRAMES;
            start += hop;
            continue;
        }
        // One short remainder, only when it reaches frames no full window
        // covered and holds at least half a segment of real frames.
        let real = n_frames.saturating_sub(start);
        if n_frames > covered && 2 * real >= SEGMENT_FRAMES {
            out.push((start, real));
        }
        return out;
    }
}

/// Cuts `features` into `SEGMENT_FRAMES`-frame windows.
///
/// Values are rounded to `f32` so that segments read back from the cache
/// compare equal to freshly computed ones.
pub fn segment(
    features: &FeatureMatrix,
    split: Split,
    utterance_id: &str,
    label: usize,
) -> Vec<FeatureSegment> {
    let bins = features.n_bins;
    segment_starts(features.n_frames, split)
        .into_iter()
        .enumerate()
        .map(|(segment_index, (start, real))| {
            let mut frames = vec![0.0; SEGMENT_FRAMES * bins];
            for (dst, &src) in frames.iter_mut().zip(&features.data[start * bins..(start + real) * bins]) {
                *dst = src as f32 as f64;
            }
            FeatureSegment {
                frames,
                n_frames: SEGMENT_FRAMES,
                n_bins: bins,
                utterance_id: utterance_id.to_string(),
                label,
                segment_index,
            }
        })
        .collect()
}

/// Extracts and segments one clip.
pub fn clip_segments(fbank: &Fbank, clip: &AudioClip, split: Split) -> Result<Vec<FeatureSegment>> {
    let feats = fbank.compute(&clip.samples)?;
    Ok(segment(&feats, split, &clip.utterance_id, clip.label))
}

/// Per-bin mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Population statistics over every frame of `segments`. Bins whose
    /// deviation is below `STD_FLOOR` get `STD_FLOOR`.
    pub fn fit(segments: &[FeatureSegment]) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::Shape("cannot fit normalization on zero segments".into()))?;
        let bins = first.n_bins;
        let mut sum = vec![0.0; bins];
        let mut count = 0usize;
        for s in segments {
            if s.n_bins != bins {
                return Err(Error::Dimension { axis: "mel bins", expected: bins, actual: s.n_bins });
            }
            for t in 0..s.n_frames {
                for (a, v) in sum.iter_mut().zip(s.frame(t)) {
                    *a += v;
                }
            }
            count += s.n_frames;
        }
        let mean: Vec<f64> = sum.iter().map(|a| a / count as f64).collect();
        let mut sq = vec![0.0; bins];
        for s in segments {
            for t in 0..s.n_frames {
                for ((a, v), m) in sq.iter_mut().zip(s.frame(t)).zip(&mean) {
                    *a += (v - m) * (v - m);
                }
            }
        }
        let std = sq.iter().map(|a| (a / count as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn identity(bins: usize) -> Self {
        Self { mean: vec![0.0; bins], std: vec![1.0; bins] }
    }

    fn check(&self, s: &FeatureSegment) -> Result<()> {
        if s.n_bins != self.mean.len() {
            return Err(Error::Dimension { axis: "mel bins", expected: self.mean.len(), actual: s.n_bins });
        }
        Ok(())
    }
}

/// Standardizes every bin with `stats`.
pub fn normalize(segments: &[FeatureSegment], stats: &NormStats) -> Result<Vec<FeatureSegment>> {
    segments
        .iter()
        .map(|s| {
            stats.check(s)?;
            let mut out = s.clone();
            for (i, v) in out.frames.iter_mut().enumerate() {
                let b = i % s.n_bins;
                *v = (*v - stats.mean[b]) / stats.std[b];
            }
            Ok(out)
        })
        .collect()
}

/// Inverse of [`normalize`].
pub fn denormalize(segments: &[FeatureSegment], stats: &NormStats) -> Result<Vec<FeatureSegment>> {
    segments
        .iter()
        .map(|s| {
            stats.check(s)?;
            let mut out = s.clone();
            for (i, v) in out.frames.iter_mut().enumerate() {
                let b = i % s.n_bins;
                *v = *v * stats.std[b] + stats.mean[b];
            }
            Ok(out)
        })
        .collect()
}
