//! Browser demo: distillation loss explorer, synthetic log-mel spectrograms
//! and the segmentation layout of a clip.

use dkdfmh::autodiff::softmax_row;
use dkdfmh::data::synth_clip;
use dkdfmh::distill::rows;
use dkdfmh::dsp::{logfbank, segment_starts, AudioClip, FbankConfig, Split, SAMPLE_RATE, SEGMENT_FRAMES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize, PartialEq)]
pub struct LossReport {
    pub student_probs: Vec<f64>,
    pub teacher_probs: Vec<f64>,
    pub p_t: f64,
    pub kd: f64,
    pub tckd: f64,
    pub nckd: f64,
    pub dkd: f64,
    /// `tckd + (1 − p_t)·nckd`; equals `kd`.
    pub kd_rebuilt: f64,
    pub grad_kd: Vec<f64>,
    pub grad_dkd: Vec<f64>,
}

/// Per-sample KD, its decoupled parts and their gradients, all scaled by T².
pub fn loss_report(
    student: &[f64],
    teacher: &[f64],
    target: usize,
    temperature: f64,
    alpha: f64,
    beta: f64,
) -> Result<LossReport, String> {
    if student.len() != teacher.len() || student.len() < 2 {
        return Err(format!("need two logit vectors of equal length >= 2, got {} and {}", student.len(), teacher.len()));
    }
    let scale = temperature * temperature;
    let err = |e: dkdfmh::Error| e.to_string();
    let kd = rows::kd(student, teacher, temperature, scale).map_err(err)?;
    let tc = rows::tckd(student, teacher, target, temperature, scale).map_err(err)?;
    let nc = rows::nckd(student, teacher, target, temperature, scale).map_err(err)?;
    let p_t = rows::target_confidence(teacher, target, temperature);
    let grad_dkd = tc.grad.iter().zip(&nc.grad).map(|(a, b)| alpha * a + beta * b).collect();
    Ok(LossReport {
        student_probs: softmax_row(student, temperature),
        teacher_probs: softmax_row(teacher, temperature),
        p_t,
        kd: kd.value,
        tckd: tc.value,
        nckd: nc.value,
        dkd: alpha * tc.value + beta * nc.value,
        kd_rebuilt: tc.value + (1.0 - p_t) * nc.value,
        grad_kd: kd.grad,
        grad_dkd,
    })
}

/// Row-major `[frames, bins]` log-mel features.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Spectrogram {
    frames: usize,
    bins: usize,
    seconds: f64,
    data: Vec<f64>,
}

#[wasm_bindgen]
impl Spectrogram {
    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[wasm_bindgen(getter)]
    pub fn bins(&self) -> usize {
        self.bins
    }

    #[wasm_bindgen(getter)]
    pub fn seconds(&self) -> f64 {
        self.seconds
    }

    pub fn data(&self) -> Vec<f64> {
        self.data.clone()
    }
}

pub fn spectrogram(class: usize, seed: u32) -> Result<Spectrogram, String> {
    if class >= 4 {
        return Err(format!("class must be 0..3, got {class}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let samples = synth_clip(class, &mut rng);
    let seconds = samples.len() as f64 / SAMPLE_RATE as f64;
    let clip = AudioClip { samples, sample_rate: SAMPLE_RATE, utterance_id: "demo".into(), label: class };
    let f = logfbank(&clip, &FbankConfig::default()).map_err(|e| e.to_string())?;
    Ok(Spectrogram { frames: f.n_frames, bins: f.n_bins, seconds, data: f.data })
}

/// `[start, real frames]` pairs flattened, for a clip of `seconds`.
pub fn layout(seconds: f64, test_split: bool) -> Vec<usize> {
    let cfg = FbankConfig::default();
    let n = (seconds.max(0.0) * SAMPLE_RATE as f64).round() as usize;
    let frames = cfg.num_frames(n, SAMPLE_RATE);
    let split = if test_split { Split::Test } else { Split::Train };
    segment_starts(frames, split).into_iter().flat_map(|(s, r)| [s, r]).collect()
}

#[wasm_bindgen(js_name = lossTerms)]
pub fn loss_terms(
    student: &[f64],
    teacher: &[f64],
    target: usize,
    temperature: f64,
    alpha: f64,
    beta: f64,
) -> Result<String, JsError> {
    let report = loss_report(student, teacher, target, temperature, alpha, beta).map_err(|e| JsError::new(&e))?;
    Ok(serde_json::to_string(&report).expect("report serializes"))
}

#[wasm_bindgen(js_name = syntheticSpectrogram)]
pub fn synthetic_spectrogram(class: usize, seed: u32) -> Result<Spectrogram, JsError> {
    spectrogram(class, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = segmentLayout)]
pub fn segment_layout(seconds: f64, test_split: bool) -> Vec<usize> {
    layout(seconds, test_split)
}

#[wasm_bindgen(js_name = segmentFrames)]
pub fn segment_frames() -> usize {
    SEGMENT_FRAMES
}
