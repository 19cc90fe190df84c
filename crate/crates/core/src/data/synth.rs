//! Synthetic four-class corpus with one spectro-temporal signature per class.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Corpus, Source};
use crate::dsp::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::model::CLASS_NAMES;
use crate::par::map_ordered;

const SIGNAL_RMS: f64 = 0.1;
const SNR_DB: f64 = 10.0;
pub const MIN_SECONDS: f64 = 2.0;
pub const MAX_SECONDS: f64 = 6.0;

/// Two-pole band-pass (constant peak gain) biquad.
struct BandPass {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x: [f64; 2],
    y: [f64; 2],
}

impl BandPass {
    fn new(center: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * center / SAMPLE_RATE as f64;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            b2: -alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
            x: [0.0; 2],
            y: [0.0; 2],
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b2 * self.x[1] - self.a1 * self.y[0] - self.a2 * self.y[1];
        self.x = [x, self.x[0]];
        self.y = [y, self.y[0]];
        y
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn am_noise(rng: &mut ChaCha8Rng, n: usize, center: f64, q: f64, mod_hz: f64) -> Vec<f64> {
    let mut filter = BandPass::new(center, q);
    let phase = rng.random_range(0.0..2.0 * PI);
    (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            let env = 0.5 * (1.0 + (2.0 * PI * mod_hz * t + phase).sin());
            env * filter.step(gaussian(rng))
        })
        .collect()
}

fn chirps(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let period = rng.random_range(0.4..0.6);
    let f_start = rng.random_range(300.0..500.0);
    let ratio = rng.random_range(2.0..2.5);
    let mut out = vec![0.0; n];
    let (mut phase_a, mut phase_b) = (0.0f64, 0.0f64);
    for (i, v) in out.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let u = (t % period) / period;
        let f = f_start * (1.0 + (ratio - 1.0) * u);
        phase_a += 2.0 * PI * f / sr;
        phase_b += 2.0 * PI * 1.5 * f / sr;
        let env = (PI * u).sin();
        *v = env * (phase_a.sin() + 0.6 * phase_b.sin());
    }
    out
}

fn harmonic(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let f0 = rng.random_range(400.0..600.0);
    let phases: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            (1..=4)
                .map(|k| (2.0 * PI * f0 * k as f64 * t + phases[k - 1]).sin() / k as f64)
                .sum()
        })
        .collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// One utterance of `class`, driven entirely by `rng`.
pub fn synth_clip(class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let seconds = rng.random_range(MIN_SECONDS..MAX_SECONDS);
    let n = (seconds * SAMPLE_RATE as f64).round() as usize;
    let jitter = rng.random_range(0.85..1.15);
    let mut x = match class {
        0 => {
            let rate = rng.random_range(7.0..9.0);
            am_noise(rng, n, 2000.0 * jitter, 1.5, rate)
        }
        1 => chirps(rng, n),
        2 => harmonic(rng, n),
        3 => {
            let rate = rng.random_range(1.5..2.5);
            am_noise(rng, n, 400.0 * jitter, 1.0, rate)
        }
        _ => unreachable!("four classes"),
    };
    let gain = SIGNAL_RMS / rms(&x).max(1e-12);
    let noise_rms = SIGNAL_RMS / 10f64.powf(SNR_DB / 20.0);
    for v in &mut x {
        *v = (*v * gain + noise_rms * gaussian(rng)).clamp(-1.0, 1.0);
    }
    x
}

/// `n_per_class` utterances per class, sorted by utterance id. Each
/// utterance draws from its own ChaCha stream, so the corpus is a pure
/// function of `seed`.
pub fn synth_corpus(n_per_class: usize, seed: u64) -> Result<Corpus> {
    if n_per_class == 0 {
        return Err(Error::Config("synthetic corpus needs at least one utterance per class".into()));
    }
    let total = n_per_class * CLASS_NAMES.len();
    let utterances = map_ordered(total, |k| {
        let (class, i) = (k / n_per_class, k % n_per_class);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        AudioClip {
            samples: synth_clip(class, &mut rng),
            sample_rate: SAMPLE_RATE,
            utterance_id: format!("syn_{class}_{}_{i:04}", CLASS_NAMES[class]),
            label: class,
        }
    });
    Corpus::new(utterances, Source::Synthetic)
}
