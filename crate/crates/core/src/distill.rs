//! Cross-entropy, classical knowledge distillation and its decoupled form.
//!
//! For one sample with target class `t`, teacher logits `z_T` and student
//! logits `z_S`, tempered at `T`:
//!
//! * KD   = T²·KL(softmax(z_T/T) ‖ softmax(z_S/T))
//! * TCKD = T²·KL(b_T ‖ b_S) with `b = [p_t, 1 − p_t]`
//! * NCKD = T²·KL(p̃_T ‖ p̃_S) with `p̃` the softmax over non-target classes
//! * DKD  = α·TCKD + β·NCKD
//!
//! and per sample `KD = TCKD + (1 − p_t^T)·NCKD`. Batch losses are the mean
//! of per-sample losses; averaging before forming `b` and `p̃` would break
//! that identity.
//!
//! Every divergence is evaluated from log-softmax values, so no probability
//! is ever passed through `ln`. Each row loss comes with its analytic
//! gradient with respect to the student logits, which the graph uses on the
//! backward pass. The teacher side is always a constant.

use serde::{Deserialize, Serialize};

use crate::autodiff::{log_softmax_row, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which distillation term accompanies the student's cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    CeOnly,
    Kd,
    TckdOnly,
    NckdOnly,
    Dkd,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::CeOnly,
        Variant::Kd,
        Variant::TckdOnly,
        Variant::NckdOnly,
        Variant::Dkd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::CeOnly => "ce_only",
            Variant::Kd => "kd",
            Variant::TckdOnly => "tckd_only",
            Variant::NckdOnly => "nckd_only",
            Variant::Dkd => "dkd",
        }
    }

    pub fn needs_teacher(self) -> bool {
        self != Variant::CeOnly
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown distillation variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub temperature: f64,
    pub alpha: f64,
    pub beta: f64,
    pub variant: Variant,
    /// Multiply every KL term by T².
    pub scale_by_t_squared: bool,
    pub ce_weight: f64,
    pub distill_weight: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            temperature: 4.0,
            alpha: 1.0,
            beta: 8.0,
            variant: Variant::Dkd,
            scale_by_t_squared: true,
            ce_weight: 1.0,
            distill_weight: 1.0,
        }
    }
}

impl DistillConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Parameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("ce_weight", self.ce_weight),
            ("distill_weight", self.distill_weight),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// TCKD and NCKD weights after applying the variant.
    pub fn effective_weights(&self) -> (f64, f64) {
        match self.variant {
            Variant::CeOnly => (0.0, 0.0),
            Variant::Kd => (1.0, 1.0),
            Variant::TckdOnly => (self.alpha, 0.0),
            Variant::NckdOnly => (0.0, self.beta),
            Variant::Dkd => (self.alpha, self.beta),
        }
    }

    fn kl_scale(&self) -> f64 {
        kl_scale(self.temperature, self.scale_by_t_squared)
    }
}

fn kl_scale(temperature: f64, t_squared: bool) -> f64 {
    if t_squared {
        temperature * temperature
    } else {
        1.0
    }
}

/// Student logits in a graph, teacher logits as constants, and labels.
#[derive(Clone, Copy)]
pub struct LogitPair<'a> {
    pub student: Var,
    pub teacher: &'a Tensor,
    pub labels: &'a [usize],
}

/// One sample's loss and its gradient with respect to the student logits.
#[derive(Debug, Clone, PartialEq)]
pub struct RowLoss {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("temperature must be positive, got {t}")))
    }
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label < classes {
        Ok(())
    } else {
        Err(Error::Label { label, classes })
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Log-probabilities of the non-target classes, renormalised among
/// themselves. The target entry is set to −∞.
fn non_target_log_softmax(logits: &[f64], target: usize, t: f64) -> Vec<f64> {
    let others = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target)
        .map(|(_, &z)| z / t);
    let lse = log_sum_exp(others);
    logits
        .iter()
        .enumerate()
        .map(|(j, &z)| if j == target { f64::NEG_INFINITY } else { z / t - lse })
        .collect()
}

/// Σ p·(log p − log q) over entries with p > 0.
fn kl_from_logs(log_p: &[f64], log_q: &[f64]) -> f64 {
    log_p
        .iter()
        .zip(log_q)
        .filter(|(lp, _)| lp.is_finite())
        .map(|(&lp, &lq)| {
            let p = lp.exp();
            if p == 0.0 {
                0.0
            } else {
                p * (lp - lq)
            }
        })
        .sum()
}

/// Per-sample losses. All take raw logits and apply the temperature.
pub mod rows {
    use super::*;

    pub fn cross_entropy(logits: &[f64], label: usize) -> Result<RowLoss> {
        check_label(label, logits.len())?;
        let lsm = log_softmax_row(logits, 1.0);
        let grad = lsm
            .iter()
            .enumerate()
            .map(|(j, l)| l.exp() - if j == label { 1.0 } else { 0.0 })
            .collect();
        Ok(RowLoss {
            value: -lsm[label],
            grad,
        })
    }

    /// `scale`·KL over all classes.
    pub fn kd(student: &[f64], teacher: &[f64], t: f64, scale: f64) -> Result<RowLoss> {
        check_temperature(t)?;
        let lp = log_softmax_row(teacher, t);
        let lq = log_softmax_row(student, t);
        let grad = lp
            .iter()
            .zip(&lq)
            .map(|(p, q)| scale / t * (q.exp() - p.exp()))
            .collect();
        Ok(RowLoss {
            value: scale * kl_from_logs(&lp, &lq),
            grad,
        })
    }

    /// Log of the binary distribution `[p_t, 1 − p_t]`.
    pub fn binary_log_probs(logits: &[f64], target: usize, t: f64) -> [f64; 2] {
        let all = log_sum_exp(logits.iter().map(|z| z / t));
        let rest = log_sum_exp(
            logits
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != target)
                .map(|(_, z)| z / t),
        );
        [logits[target] / t - all, rest - all]
    }

    pub fn tckd(student: &[f64], teacher: &[f64], target: usize, t: f64, scale: f64) -> Result<RowLoss> {
        check_temperature(t)?;
        check_label(target, student.len())?;
        let bp = binary_log_probs(teacher, target, t);
        let bq = binary_log_probs(student, target, t);
        let value = scale * kl_from_logs(&bp, &bq);
        let p_t = bp[0].exp();
        let q = log_softmax_row(student, t);
        let q_tilde = non_target_log_softmax(student, target, t);
        let grad = (0..student.len())
            .map(|j| {
                let qj = q[j].exp();
                let g = if j == target {
                    qj - p_t
                } else {
                    qj - (1.0 - p_t) * q_tilde[j].exp()
                };
                scale / t * g
            })
            .collect();
        Ok(RowLoss { value, grad })
    }

    pub fn nckd(student: &[f64], teacher: &[f64], target: usize, t: f64, scale: f64) -> Result<RowLoss> {
        check_temperature(t)?;
        if student.len() < 2 {
            return Err(Error::Config(format!(
                "non-target distillation needs at least 2 classes, got {}",
                student.len()
            )));
        }
        check_label(target, student.len())?;
        let lp = non_target_log_softmax(teacher, target, t);
        let lq = non_target_log_softmax(student, target, t);
        let grad = lp
            .iter()
            .zip(&lq)
            .enumerate()
            .map(|(j, (p, q))| if j == target { 0.0 } else { scale / t * (q.exp() - p.exp()) })
            .collect();
        Ok(RowLoss {
            value: scale * kl_from_logs(&lp, &lq),
            grad,
        })
    }

    /// Teacher's tempered probability of the target class.
    pub fn target_confidence(teacher: &[f64], target: usize, t: f64) -> f64 {
        log_softmax_row(teacher, t)[target].exp()
    }
}

fn check_pair(g: &Graph, pair: &LogitPair<'_>) -> Result<(usize, usize)> {
    let [n, c] = g.value(pair.student).dims2()?;
    let [tn, tc] = pair.teacher.dims2()?;
    if tn != n {
        return Err(Error::Dimension {
            axis: "teacher batch",
            expected: n,
            actual: tn,
        });
    }
    if tc != c {
        return Err(Error::Config(format!(
            "teacher has {tc} classes, student has {c}"
        )));
    }
    if pair.labels.len() != n {
        return Err(Error::Dimension {
            axis: "labels",
            expected: n,
            actual: pair.labels.len(),
        });
    }
    for &l in pair.labels {
        check_label(l, c)?;
    }
    Ok((n, c))
}

/// Accumulated batch of weighted row losses.
struct Batch {
    values: Vec<f64>,
    grads: Vec<f64>,
}

impl Batch {
    fn new(n: usize, c: usize) -> Self {
        Self {
            values: vec![0.0; n],
            grads: vec![0.0; n * c],
        }
    }

    fn add(&mut self, row: usize, weight: f64, loss: &RowLoss) {
        if weight == 0.0 {
            return;
        }
        let c = loss.grad.len();
        self.values[row] += weight * loss.value;
        self.grads[row * c..(row + 1) * c]
            .iter_mut()
            .zip(&loss.grad)
            .for_each(|(g, d)| *g += weight * d);
    }

    fn into_var(self, g: &mut Graph, x: Var) -> Result<Var> {
        g.mean_row_loss(x, &self.values, self.grads)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean cross-entropy of `logits: [N,C]` against hard labels.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let [n, c] = g.value(logits).dims2()?;
    if labels.len() != n {
        return Err(Error::Dimension {
            axis: "labels",
            expected: n,
            actual: labels.len(),
        });
    }
    let mut batch = Batch::new(n, c);
    for (i, &l) in labels.iter().enumerate() {
        batch.add(i, 1.0, &rows::cross_entropy(g.value(logits).row(i), l)?);
    }
    batch.into_var(g, logits)
}

fn per_row(
    g: &mut Graph,
    pair: &LogitPair<'_>,
    f: impl Fn(&[f64], &[f64], usize) -> Result<RowLoss>,
) -> Result<Var> {
    let (n, c) = check_pair(g, pair)?;
    let mut batch = Batch::new(n, c);
    for i in 0..n {
        let loss = f(g.value(pair.student).row(i), pair.teacher.row(i), pair.labels[i])?;
        batch.add(i, 1.0, &loss);
    }
    batch.into_var(g, pair.student)
}

/// Mean over the batch of T²·KL(teacher ‖ student) at temperature `t`.
pub fn kd_loss(g: &mut Graph, pair: &LogitPair<'_>, t: f64) -> Result<Var> {
    check_temperature(t)?;
    per_row(g, pair, |s, te, _| rows::kd(s, te, t, t * t))
}

pub fn tckd(g: &mut Graph, pair: &LogitPair<'_>, t: f64) -> Result<Var> {
    check_temperature(t)?;
    per_row(g, pair, |s, te, l| rows::tckd(s, te, l, t, t * t))
}

pub fn nckd(g: &mut Graph, pair: &LogitPair<'_>, t: f64) -> Result<Var> {
    check_temperature(t)?;
    per_row(g, pair, |s, te, l| rows::nckd(s, te, l, t, t * t))
}

/// `α·TCKD + β·NCKD` with the variant applied to the weights.
pub fn dkd_loss(g: &mut Graph, pair: &LogitPair<'_>, cfg: &DistillConfig) -> Result<Var> {
    cfg.validate()?;
    let (alpha, beta) = cfg.effective_weights();
    let n = g.value(pair.student).shape()[0];
    dkd_loss_per_sample(g, pair, cfg.temperature, cfg.kl_scale(), alpha, &vec![beta; n])
}

/// DKD with one NCKD weight per sample. Binding `betas[i] = 1 − p_t^T`
/// for each sample recovers classical KD exactly.
pub fn dkd_loss_per_sample(
    g: &mut Graph,
    pair: &LogitPair<'_>,
    t: f64,
    kl_scale: f64,
    alpha: f64,
    betas: &[f64],
) -> Result<Var> {
    check_temperature(t)?;
    let (n, c) = check_pair(g, pair)?;
    if betas.len() != n {
        return Err(Error::Dimension {
            axis: "per-sample beta",
            expected: n,
            actual: betas.len(),
        });
    }
    let mut batch = Batch::new(n, c);
    for i in 0..n {
        let (s, te, l) = (g.value(pair.student).row(i), pair.teacher.row(i), pair.labels[i]);
        batch.add(i, alpha, &rows::tckd(s, te, l, t, kl_scale)?);
        batch.add(i, betas[i], &rows::nckd(s, te, l, t, kl_scale)?);
    }
    batch.into_var(g, pair.student)
}

/// The student's objective and its logged components.
///
/// `total = ce_weight·ce + distill_weight·(alpha·tckd + beta·nckd)`, where
/// for the KD variant `nckd` holds the confidence-weighted term
/// `mean((1 − p_t^T)·NCKD)` and both weights are 1.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub ce: f64,
    pub tckd: f64,
    pub nckd: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl LossTerms {
    pub fn distill(&self) -> f64 {
        self.alpha * self.tckd + self.beta * self.nckd
    }
}

/// Cross-entropy plus the distillation term selected by `cfg.variant`.
/// `teacher` may be `None` only for [`Variant::CeOnly`].
pub fn student_total_loss(
    g: &mut Graph,
    student: Var,
    teacher: Option<&Tensor>,
    labels: &[usize],
    cfg: &DistillConfig,
) -> Result<LossTerms> {
    cfg.validate()?;
    let [n, c] = g.value(student).dims2()?;
    if labels.len() != n {
        return Err(Error::Dimension {
            axis: "labels",
            expected: n,
            actual: labels.len(),
        });
    }
    let t = cfg.temperature;
    let scale = cfg.kl_scale();
    let (alpha, beta) = cfg.effective_weights();

    let mut batch = Batch::new(n, c);
    let mut ce = vec![0.0; n];
    let mut tc = vec![0.0; n];
    let mut nc = vec![0.0; n];
    for i in 0..n {
        let s = g.value(student).row(i).to_vec();
        let ce_row = rows::cross_entropy(&s, labels[i])?;
        ce[i] = ce_row.value;
        batch.add(i, cfg.ce_weight, &ce_row);
        if !cfg.variant.needs_teacher() {
            continue;
        }
        let teacher = teacher.ok_or_else(|| {
            Error::Config(format!("variant {} needs teacher logits", cfg.variant.name()))
        })?;
        let pair = LogitPair {
            student,
            teacher,
            labels,
        };
        if i == 0 {
            check_pair(g, &pair)?;
        }
        let te = teacher.row(i);
        let tckd_row = rows::tckd(&s, te, labels[i], t, scale)?;
        let nckd_row = rows::nckd(&s, te, labels[i], t, scale)?;
        tc[i] = tckd_row.value;
        match cfg.variant {
            Variant::Kd => {
                // Distill through KD directly; log its exact decomposition.
                let kd_row = rows::kd(&s, te, t, scale)?;
                let weight = 1.0 - rows::target_confidence(te, labels[i], t);
                nc[i] = weight * nckd_row.value;
                batch.add(i, cfg.distill_weight, &kd_row);
            }
            _ => {
                nc[i] = nckd_row.value;
                batch.add(i, cfg.distill_weight * alpha, &tckd_row);
                batch.add(i, cfg.distill_weight * beta, &nckd_row);
            }
        }
    }
    let total = batch.into_var(g, student)?;
    Ok(LossTerms {
        total,
        ce: mean(&ce),
        tckd: mean(&tc),
        nckd: mean(&nc),
        alpha,
        beta,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    // Oracles work directly from probabilities, without log-softmax.
    fn probs(z: &[f64], t: f64) -> Vec<f64> {
        let e: Vec<f64> = z.iter().map(|v| (v / t).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    fn kl(p: &[f64], q: &[f64]) -> f64 {
        p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum()
    }

    fn oracle_tckd(s: &[f64], te: &[f64], l: usize, t: f64) -> f64 {
        let (p, q) = (probs(te, t), probs(s, t));
        t * t * kl(&[p[l], 1.0 - p[l]], &[q[l], 1.0 - q[l]])
    }

    fn oracle_nckd(s: &[f64], te: &[f64], l: usize, t: f64) -> f64 {
        let drop = |z: &[f64]| -> Vec<f64> {
            z.iter().enumerate().filter(|&(j, _)| j != l).map(|(_, &v)| v).collect()
        };
        t * t * kl(&probs(&drop(te), t), &probs(&drop(s), t))
    }

    fn random_logits(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Tensor {
        Tensor::from_fn(&[n, c], |_| rng.random_range(-3.0..3.0))
    }

    fn eval(f: impl Fn(&mut Graph, Var) -> Result<Var>, student: &Tensor) -> f64 {
        let mut g = Graph::new();
        let s = g.input(student.clone());
        let v = f(&mut g, s).unwrap();
        g.value(v).item()
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = Tensor::zeros(&[2, 4]);
        let ce = eval(|g, s| cross_entropy(g, s, &[0, 3]), &uniform);
        assert!((ce - 4f64.ln()).abs() < 1e-15);

        let saturated = Tensor::new(&[1, 4], vec![1e4, 0.0, 0.0, 0.0]).unwrap();
        assert!(eval(|g, s| cross_entropy(g, s, &[0]), &saturated).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = random_logits(&mut rng, 6, 4);
        let labels = [0, 1, 2, 3, 1, 2];
        let expected: f64 = (0..6).map(|i| -probs(z.row(i), 1.0)[labels[i]].ln()).sum::<f64>() / 6.0;
        assert!((eval(|g, s| cross_entropy(g, s, &labels), &z) - expected).abs() < 1e-12);

        assert!(matches!(
            eval_err(|g, s| cross_entropy(g, s, &[4]), &saturated),
            Error::Label { label: 4, classes: 4 }
        ));
    }

    fn eval_err(f: impl Fn(&mut Graph, Var) -> Result<Var>, student: &Tensor) -> Error {
        let mut g = Graph::new();
        let s = g.input(student.clone());
        f(&mut g, s).unwrap_err()
    }

    #[test]
    fn kd_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let te = random_logits(&mut rng, 8, 4);
        let labels = [0, 1, 2, 3, 0, 1, 2, 3];
        let same = eval(|g, s| kd_loss(g, &LogitPair { student: s, teacher: &te, labels: &labels }, 4.0), &te);
        assert!(same.abs() < 1e-15);

        let st = random_logits(&mut rng, 8, 4);
        for t in [1.0, 2.0, 4.0] {
            let got = eval(|g, s| kd_loss(g, &LogitPair { student: s, teacher: &te, labels: &labels }, t), &st);
            let expected = (0..8)
                .map(|i| t * t * kl(&probs(te.row(i), t), &probs(st.row(i), t)))
                .sum::<f64>()
                / 8.0;
            assert!(got >= 0.0);
            assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        }
        assert!(matches!(
            eval_err(|g, s| kd_loss(g, &LogitPair { student: s, teacher: &te, labels: &labels }, 0.0), &st),
            Error::Parameter(_)
        ));
    }

    #[test]
    fn tckd_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let te = random_logits(&mut rng, 8, 4);
        let st = random_logits(&mut rng, 8, 4);
        let labels = [3, 1, 2, 0, 0, 1, 2, 3];
        let pair = |s| LogitPair { student: s, teacher: &te, labels: &labels };
        assert!(eval(|g, s| tckd(g, &pair(s), 4.0), &te).abs() < 1e-15);

        // Target mass 1/2 in both models, non-target arrangement differs.
        let a = Tensor::new(&[1, 4], vec![3f64.ln(), 0.0, 0.0, 0.0]).unwrap();
        let b = Tensor::new(&[1, 4], vec![0.0, 0.5f64.ln(), 0.25f64.ln(), 0.25f64.ln()]).unwrap();
        let got = eval(|g, s| tckd(g, &LogitPair { student: s, teacher: &a, labels: &[0] }, 1.0), &b);
        assert!(got.abs() < 1e-15, "{got}");

        for t in [1.0, 4.0] {
            let got = eval(|g, s| tckd(g, &pair(s), t), &st);
            let expected = (0..8).map(|i| oracle_tckd(st.row(i), te.row(i), labels[i], t)).sum::<f64>() / 8.0;
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn nckd_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let te = random_logits(&mut rng, 8, 4);
        let st = random_logits(&mut rng, 8, 4);
        let labels = [1, 1, 2, 0, 3, 1, 2, 3];
        let pair = |s| LogitPair { student: s, teacher: &te, labels: &labels };
        assert!(eval(|g, s| nckd(g, &pair(s), 4.0), &te).abs() < 1e-15);

        let te2 = random_logits(&mut rng, 3, 2);
        let st2 = random_logits(&mut rng, 3, 2);
        let got = eval(|g, s| nckd(g, &LogitPair { student: s, teacher: &te2, labels: &[0, 1, 0] }, 2.0), &st2);
        assert_eq!(got, 0.0);

        for t in [1.0, 4.0] {
            let got = eval(|g, s| nckd(g, &pair(s), t), &st);
            let expected = (0..8).map(|i| oracle_nckd(st.row(i), te.row(i), labels[i], t)).sum::<f64>() / 8.0;
            assert!((got - expected).abs() < 1e-12);
        }

        let single = Tensor::zeros(&[1, 1]);
        assert!(matches!(rows::nckd(single.row(0), single.row(0), 0, 1.0, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn dkd_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let te = random_logits(&mut rng, 16, 4);
        let st = random_logits(&mut rng, 16, 4);
        let labels: Vec<usize> = (0..16).map(|i| i % 4).collect();
        let pair = |s| LogitPair { student: s, teacher: &te, labels: &labels };

        let zero = DistillConfig { alpha: 0.0, beta: 0.0, ..Default::default() };
        assert_eq!(eval(|g, s| dkd_loss(g, &pair(s), &zero), &st), 0.0);

        let default = DistillConfig::default();
        assert!(eval(|g, s| dkd_loss(g, &pair(s), &default), &te).abs() < 1e-15);

        let t = 4.0;
        let betas: Vec<f64> = (0..16).map(|i| 1.0 - rows::target_confidence(te.row(i), labels[i], t)).collect();
        let dkd = eval(|g, s| dkd_loss_per_sample(g, &pair(s), t, t * t, 1.0, &betas), &st);
        let kd = eval(|g, s| kd_loss(g, &pair(s), t), &st);
        assert!((dkd - kd).abs() <= 1e-9, "{dkd} vs {kd}");

        let only_t = default.with_variant(Variant::TckdOnly);
        let tc = eval(|g, s| tckd(g, &pair(s), t), &st);
        assert!((eval(|g, s| dkd_loss(g, &pair(s), &only_t), &st) - tc).abs() < 1e-12);
        let only_n = default.with_variant(Variant::NckdOnly);
        let nc = eval(|g, s| nckd(g, &pair(s), t), &st);
        assert!((eval(|g, s| dkd_loss(g, &pair(s), &only_n), &st) - 8.0 * nc).abs() < 1e-12);
    }

    #[test]
    fn student_total_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let te = random_logits(&mut rng, 8, 4);
        let st = random_logits(&mut rng, 8, 4);
        let labels: Vec<usize> = (0..8).map(|i| (i * 3) % 4).collect();
        let ce = eval(|g, s| cross_entropy(g, s, &labels), &st);

        let total = |student: &Tensor, cfg: DistillConfig, teacher: Option<&Tensor>| {
            let mut g = Graph::new();
            let s = g.input(student.clone());
            let terms = student_total_loss(&mut g, s, teacher, &labels, &cfg).unwrap();
            (g.value(terms.total).item(), terms)
        };
        let cfg = DistillConfig::default();
        let (v, _) = total(&st, cfg.with_variant(Variant::CeOnly), None);
        assert_eq!(v, ce);

        let ce_te = eval(|g, s| cross_entropy(g, s, &labels), &te);
        let (v, terms) = total(&te, cfg, Some(&te));
        assert!((v - ce_te).abs() < 1e-15);
        assert!(terms.distill().abs() < 1e-15);

        let pair = |s| LogitPair { student: s, teacher: &te, labels: &labels };
        let tc = eval(|g, s| tckd(g, &pair(s), 4.0), &st);
        let nc = eval(|g, s| nckd(g, &pair(s), 4.0), &st);
        let kd = eval(|g, s| kd_loss(g, &pair(s), 4.0), &st);
        let (v, terms) = total(&st, cfg, Some(&te));
        assert!((v - (ce + tc + 8.0 * nc)).abs() < 1e-12);
        assert!((terms.ce + terms.distill() - v).abs() < 1e-12);
        let (v, terms) = total(&st, cfg.with_variant(Variant::Kd), Some(&te));
        assert!((v - (ce + kd)).abs() < 1e-12);
        assert!((terms.ce + terms.distill() - v).abs() < 1e-12);

        let mut g = Graph::new();
        let s = g.input(st.clone());
        assert!(student_total_loss(&mut g, s, None, &labels, &cfg).is_err());
        let narrow = Tensor::zeros(&[8, 3]);
        assert!(matches!(
            student_total_loss(&mut g, s, Some(&narrow), &labels, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let te = random_logits(&mut rng, 8, 4);
        let st = random_logits(&mut rng, 8, 4);
        let shifted = Tensor::from_fn(&[8, 4], |i| st.data()[i] + 17.5);
        let labels: Vec<usize> = (0..8).map(|i| i % 4).collect();
        let pair = |s| LogitPair { student: s, teacher: &te, labels: &labels };
        for f in [kd_loss, tckd, nckd] {
            let a = eval(|g, s| f(g, &pair(s), 4.0), &st);
            let b = eval(|g, s| f(g, &pair(s), 4.0), &shifted);
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn row_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = 1e-5;
        for _ in 0..20 {
            let s: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let te: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let l = rng.random_range(0..4);
            let t = [1.0, 2.0, 4.0][rng.random_range(0..3)];
            let fs: [&dyn Fn(&[f64]) -> RowLoss; 4] = [
                &|z| rows::cross_entropy(z, l).unwrap(),
                &|z| rows::kd(z, &te, t, t * t).unwrap(),
                &|z| rows::tckd(z, &te, l, t, t * t).unwrap(),
                &|z| rows::nckd(z, &te, l, t, t * t).unwrap(),
            ];
            for f in fs {
                let analytic = f(&s).grad;
                for j in 0..4 {
                    let mut p = s.clone();
                    p[j] += h;
                    let mut m = s.clone();
                    m[j] -= h;
                    let numeric = (f(&p).value - f(&m).value) / (2.0 * h);
                    let scale = analytic[j].abs().max(numeric.abs()).max(1e-3);
                    assert!((analytic[j] - numeric).abs() / scale <= 1e-5);
                }
            }
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("bogus".parse::<Variant>().is_err());
    }
}
