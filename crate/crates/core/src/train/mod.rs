//! Teacher and student training loops and utterance-level evaluation.

mod adam;

pub use adam::{learning_rate, AdamState, DecayMode, BETA1, BETA2, EPSILON};

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_row, Graph, Mode};
use crate::data::{featurize, split_hash, Corpus};
use crate::distill::{student_total_loss, DistillConfig, Variant};
use crate::dsp::{normalize, FbankConfig, FeatureSegment, NormStats, Split};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::{forward, predict_logits, save_checkpoint, ModelConfig, NetworkParams};
use crate::tensor::Tensor;

/// ChaCha stream used for batch shuffling; stream 0 belongs to weight init.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub decay: f64,
    pub decay_mode: DecayMode,
    /// Weight initialization seed.
    pub seed: u64,
    /// Batch order seed.
    pub shuffle_seed: u64,
    pub distill: DistillConfig,
    /// Write measured seconds into the run log. Off by default so that
    /// logs of identical runs are byte-identical.
    pub record_timing: bool,
    /// Segments per forward pass during evaluation.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 50,
            lr0: 1e-4,
            decay: 1e-6,
            decay_mode: DecayMode::Schedule,
            seed: 0,
            shuffle_seed: 0,
            distill: DistillConfig::default(),
            record_timing: false,
            eval_batch: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.eval_batch == 0 {
            return Err(Error::Config("batch_size, epochs and eval_batch must be at least 1".into()));
        }
        if !(self.lr0 > 0.0) || !(self.decay >= 0.0) {
            return Err(Error::Config(format!("need lr0 > 0 and decay >= 0, got {} and {}", self.lr0, self.decay)));
        }
        self.distill.validate()
    }

    fn lr_and_weight_decay(&self, step: u64) -> (f64, f64) {
        match self.decay_mode {
            DecayMode::Schedule => (learning_rate(self.lr0, self.decay, step), 0.0),
            DecayMode::WeightDecay => (self.lr0, self.decay),
        }
    }
}

/// Normalized train and test segments.
#[derive(Debug, Clone)]
pub struct FeatureData {
    pub train: Vec<FeatureSegment>,
    pub test: Vec<FeatureSegment>,
    pub stats: NormStats,
    pub split_hash: String,
}

impl FeatureData {
    /// Fits normalization on `train` (or uses the identity when `normalize`
    /// is off) and applies it to both sets. Fails if an utterance appears on
    /// both sides.
    pub fn new(train: Vec<FeatureSegment>, test: Vec<FeatureSegment>, normalize_bins: bool) -> Result<Self> {
        let train_ids: BTreeSet<&str> = train.iter().map(|s| s.utterance_id.as_str()).collect();
        if let Some(s) = test.iter().find(|s| train_ids.contains(s.utterance_id.as_str())) {
            return Err(Error::Config(format!("utterance {} is in both train and test", s.utterance_id)));
        }
        let hash = split_hash(train_ids.iter().copied(), test.iter().map(|s| s.utterance_id.as_str()));
        let stats = match (normalize_bins, train.first()) {
            (true, _) => NormStats::fit(&train)?,
            (false, Some(s)) => NormStats::identity(s.n_bins),
            (false, None) => return Err(Error::Config("empty training set".into())),
        };
        Ok(Self {
            train: normalize(&train, &stats)?,
            test: normalize(&test, &stats)?,
            stats,
            split_hash: hash,
        })
    }

    /// Extracts features from already-split corpora.
    pub fn from_corpora(train: &Corpus, test: &Corpus, fbank: &FbankConfig, normalize_bins: bool) -> Result<Self> {
        Self::new(featurize(train, Split::Train, fbank)?, featurize(test, Split::Test, fbank)?, normalize_bins)
    }
}

/// `[N, 1, frames, bins]` input built from `segments[idx]`.
pub fn batch_tensor(segments: &[FeatureSegment], idx: &[usize]) -> Result<Tensor> {
    let first = segments
        .get(*idx.first().ok_or_else(|| Error::Shape("empty batch".into()))?)
        .ok_or_else(|| Error::Shape("batch index out of range".into()))?;
    let (h, w) = (first.n_frames, first.n_bins);
    let mut data = Vec::with_capacity(idx.len() * h * w);
    for &i in idx {
        let s = &segments[i];
        if (s.n_frames, s.n_bins) != (h, w) {
            return Err(Error::Shape(format!(
                "segment {} is {}x{}, batch is {h}x{w}",
                s.utterance_id, s.n_frames, s.n_bins
            )));
        }
        data.extend_from_slice(&s.frames);
    }
    Tensor::new(&[idx.len(), 1, h, w], data)
}

/// One line of the run log. Loss columns are means over the epoch's batches;
/// `tckd` and `nckd` are unweighted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub ce: f64,
    pub tckd: f64,
    pub nckd: f64,
    pub wa: f64,
    pub ua: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
    /// Weights relating the columns: `total = ce_weight·ce +
    /// distill_weight·(alpha·tckd + beta·nckd)`.
    pub ce_weight: f64,
    pub distill_weight: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl RunLog {
    pub const HEADER: &'static str = "epoch,total,ce,tckd,nckd,wa,ua,seconds";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.epoch, r.total, r.ce, r.tckd, r.nckd, r.wa, r.ua, r.seconds
            );
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overwritten with the current weights after every epoch.
    pub checkpoint: Option<PathBuf>,
    /// Also score the training utterances once training ends.
    pub evaluate_train: bool,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub params: NetworkParams,
    pub log: RunLog,
    pub test: ConfusionMatrix,
    pub train: Option<ConfusionMatrix>,
    pub steps: u64,
}

/// Trains a fresh network with cross-entropy only.
pub fn train_teacher(data: &FeatureData, model: &ModelConfig, cfg: &TrainConfig, opts: &RunOptions) -> Result<RunResult> {
    let mut cfg = *cfg;
    cfg.distill.variant = Variant::CeOnly;
    let net = NetworkParams::init(model, cfg.seed)?;
    run(data, net, None, &cfg, opts)
}

/// Trains a fresh student against a frozen `teacher` with the loss selected
/// by `cfg.distill`.
pub fn train_student(
    data: &FeatureData,
    teacher: &NetworkParams,
    model: &ModelConfig,
    cfg: &TrainConfig,
    opts: &RunOptions,
) -> Result<RunResult> {
    train_student_from(data, teacher, NetworkParams::init(model, cfg.seed)?, cfg, opts)
}

/// As [`train_student`], starting from the given weights.
pub fn train_student_from(
    data: &FeatureData,
    teacher: &NetworkParams,
    student: NetworkParams,
    cfg: &TrainConfig,
    opts: &RunOptions,
) -> Result<RunResult> {
    if teacher.config.n_classes != student.config.n_classes {
        return Err(Error::Config(format!(
            "teacher predicts {} classes, student {}",
            teacher.config.n_classes, student.config.n_classes
        )));
    }
    run(data, student, Some(teacher), cfg, opts)
}

fn run(
    data: &FeatureData,
    mut net: NetworkParams,
    teacher: Option<&NetworkParams>,
    cfg: &TrainConfig,
    opts: &RunOptions,
) -> Result<RunResult> {
    cfg.validate()?;
    let n = data.train.len();
    if n == 0 {
        return Err(Error::Config("empty training set".into()));
    }
    let n_batches = n / cfg.batch_size;
    if n_batches == 0 {
        return Err(Error::Config(format!(
            "{n} training segments do not fill one batch of {}",
            cfg.batch_size
        )));
    }
    let teacher = match (cfg.distill.variant.needs_teacher(), teacher) {
        (true, None) => return Err(Error::Config("distillation needs a teacher".into())),
        (true, Some(t)) => Some(t),
        (false, _) => None,
    };

    let mut adam = AdamState::new(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    let (alpha, beta) = cfg.distill.effective_weights();
    let mut log = RunLog {
        records: Vec::with_capacity(cfg.epochs),
        ce_weight: cfg.distill.ce_weight,
        distill_weight: if cfg.distill.variant.needs_teacher() { cfg.distill.distill_weight } else { 0.0 },
        alpha,
        beta,
    };
    let mut test = ConfusionMatrix::new(&[]);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        for b in 0..n_batches {
            let idx = &order[b * cfg.batch_size..(b + 1) * cfg.batch_size];
            let x = batch_tensor(&data.train, idx)?;
            let labels: Vec<usize> = idx.iter().map(|&i| data.train[i].label).collect();
            let teacher_logits = teacher.map(|t| predict_logits(t, &x)).transpose()?;

            let mut g = Graph::new();
            let out = forward(&mut g, &mut net, &x, Mode::Train, true)?;
            let terms = student_total_loss(&mut g, out.logits, teacher_logits.as_ref(), &labels, &cfg.distill)?;
            let total = g.value(terms.total).item();
            g.backward(terms.total)?;
            let grads: Vec<&[f64]> = out
                .params
                .iter()
                .map(|&v| g.grad(v).expect("parameters take part in the loss"))
                .collect();
            let (lr, wd) = cfg.lr_and_weight_decay(adam.step);
            adam.update(&mut net, &grads, lr, wd)?;
            for (s, v) in sums.iter_mut().zip([total, terms.ce, terms.tckd, terms.nckd]) {
                *s += v;
            }
        }
        test = evaluate(&net, &data.test, cfg.eval_batch)?;
        let [total, ce, tckd, nckd] = sums.map(|s| s / n_batches as f64);
        let record = EpochRecord {
            epoch,
            total,
            ce,
            tckd,
            nckd,
            wa: test.wa()?,
            ua: test.ua()?,
            seconds: if cfg.record_timing { started.elapsed().as_secs_f64() } else { 0.0 },
        };
        log::info!(
            "epoch {epoch}/{}: loss {total:.4} (ce {ce:.4}) test WA {:.3} UA {:.3}",
            cfg.epochs,
            record.wa,
            record.ua
        );
        log.records.push(record);
        if let Some(path) = &opts.checkpoint {
            save_checkpoint(path, &net)?;
        }
    }
    let train = if opts.evaluate_train { Some(evaluate(&net, &data.train, cfg.eval_batch)?) } else { None };
    Ok(RunResult { params: net, log, test, train, steps: adam.step })
}

/// Softmax posteriors (T = 1) of every segment, in order.
pub fn segment_posteriors(net: &NetworkParams, segments: &[FeatureSegment], batch: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(segments.len());
    let idx: Vec<usize> = (0..segments.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let logits = predict_logits(net, &batch_tensor(segments, chunk)?)?;
        for i in 0..chunk.len() {
            out.push(softmax_row(logits.row(i), 1.0));
        }
    }
    Ok(out)
}

/// Element-wise mean of segment posteriors.
pub fn mean_posterior(posteriors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = posteriors.first().ok_or_else(|| Error::Shape("no segments to aggregate".into()))?;
    let mut mean = vec![0.0; first.len()];
    for p in posteriors {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    let n = posteriors.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Argmax of the mean posterior; ties go to the lowest class id.
pub fn aggregate_posteriors(posteriors: &[Vec<f64>]) -> Result<usize> {
    let mean = mean_posterior(posteriors)?;
    let mut best = 0;
    for (c, &m) in mean.iter().enumerate() {
        if m > mean[best] {
            best = c;
        }
    }
    Ok(best)
}

/// Class of one utterance from all of its segments.
pub fn predict_utterance(net: &NetworkParams, segments: &[FeatureSegment]) -> Result<usize> {
    aggregate_posteriors(&segment_posteriors(net, segments, 32)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtterancePrediction {
    pub utterance_id: String,
    pub label: usize,
    pub prediction: usize,
}

/// Per-utterance predictions, in order of first appearance.
pub fn predict_utterances(net: &NetworkParams, segments: &[FeatureSegment], batch: usize) -> Result<Vec<UtterancePrediction>> {
    let posteriors = segment_posteriors(net, segments, batch)?;
    let mut groups: Vec<(String, usize, Vec<Vec<f64>>)> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (s, p) in segments.iter().zip(posteriors) {
        let k = *index.entry(&s.utterance_id).or_insert_with(|| {
            groups.push((s.utterance_id.clone(), s.label, Vec::new()));
            groups.len() - 1
        });
        groups[k].2.push(p);
    }
    groups
        .into_iter()
        .map(|(utterance_id, label, ps)| Ok(UtterancePrediction { utterance_id, label, prediction: aggregate_posteriors(&ps)? }))
        .collect()
}

/// Utterance-level confusion matrix.
pub fn evaluate(net: &NetworkParams, segments: &[FeatureSegment], batch: usize) -> Result<ConfusionMatrix> {
    let names: Vec<&str> = crate::model::CLASS_NAMES.iter().copied().take(net.config.n_classes).collect();
    let preds = predict_utterances(net, segments, batch)?;
    ConfusionMatrix::from_pairs(&names, preds.iter().map(|p| (p.label, p.prediction)))
}
