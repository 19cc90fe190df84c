//! Multi-seed ablation and beta-sweep harnesses.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::distill::Variant;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, NetworkParams};
use crate::train::{train_student, train_teacher, FeatureData, RunLog, RunOptions, RunResult, TrainConfig};

/// The six ablation configurations: name, attention enabled, variant, and
/// the published IEMOCAP (WA, UA) in percent.
pub const ABLATION_ROWS: [(&str, bool, Variant, f64, f64); 6] = [
    ("CNN", false, Variant::CeOnly, 74.5, 72.2),
    ("CNN+multi-head attention", true, Variant::CeOnly, 76.2, 74.8),
    ("CNN+multi-head attention+KD", true, Variant::Kd, 76.9, 76.4),
    ("TCKD", true, Variant::TckdOnly, 75.3, 72.6),
    ("NCKD", true, Variant::NckdOnly, 77.7, 76.9),
    ("DKDFMH", true, Variant::Dkd, 79.1, 77.1),
];

pub const DEFAULT_BETAS: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];

/// Best beta reported for IEMOCAP.
pub const PUBLISHED_BEST_BETA: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Training seeds, each used for both initialization and shuffling. The
    /// data split is fixed by the features passed in.
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub model: ModelConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2], train: TrainConfig::default(), model: ModelConfig::default() }
    }
}

impl ExperimentConfig {
    fn train_for(&self, seed: u64, variant: Variant) -> TrainConfig {
        let mut cfg = self.train;
        cfg.seed = seed;
        cfg.shuffle_seed = seed;
        cfg.distill.variant = variant;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub wa: f64,
    pub ua: f64,
    /// Utterance-level accuracy on the training split.
    pub train_wa: f64,
    pub error: Option<String>,
    #[serde(skip)]
    pub log: Option<RunLog>,
}

impl SeedResult {
    fn from_run(seed: u64, run: &Result<RunResult>) -> Self {
        let scored = run.as_ref().map_err(|e| Error::Config(e.to_string())).and_then(|r| {
            let train_wa = r.train.as_ref().map(|cm| cm.wa()).transpose()?.unwrap_or(f64::NAN);
            Ok((r.test.wa()?, r.test.ua()?, train_wa, r.log.clone()))
        });
        match scored {
            Ok((wa, ua, train_wa, log)) => Self { seed, wa, ua, train_wa, error: None, log: Some(log) },
            Err(e) => Self { seed, wa: f64::NAN, ua: f64::NAN, train_wa: f64::NAN, error: Some(e.to_string()), log: None },
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

fn mean_of(results: &[SeedResult], f: impl Fn(&SeedResult) -> f64) -> f64 {
    let ok: Vec<f64> = results.iter().filter(|r| r.ok()).map(f).collect();
    if ok.is_empty() {
        f64::NAN
    } else {
        ok.iter().sum::<f64>() / ok.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub row: usize,
    pub name: String,
    pub attention: bool,
    pub variant: Variant,
    pub runs: Vec<SeedResult>,
    pub wa: f64,
    pub ua: f64,
    pub published_wa: f64,
    pub published_ua: f64,
}

impl AblationRow {
    pub fn failed(&self) -> bool {
        self.runs.iter().any(|r| !r.ok())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub split_hash: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

fn status(failed: bool, runs: &[SeedResult]) -> String {
    if !failed {
        return "ok".into();
    }
    let msgs: Vec<String> = runs
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("seed {}: {e}", r.seed)))
        .collect();
    format!("failed ({})", msgs.join("; ").replace([',', '\n'], " "))
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# published_wa/published_ua: published IEMOCAP results in percent, reference only");
        let _ = writeln!(out, "# split {} seeds {:?}", self.split_hash, self.seeds);
        let _ = writeln!(out, "row,config,wa,ua,published_wa,published_ua,status");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.row,
                r.name,
                r.wa,
                r.ua,
                r.published_wa,
                r.published_ua,
                status(r.failed(), &r.runs)
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

fn train_opts() -> RunOptions {
    RunOptions { checkpoint: None, evaluate_train: true }
}

/// Trains the six ablation configurations for every seed. Row 2 (full model,
/// cross-entropy only) is the teacher run itself: a cross-entropy student
/// with the teacher's seed follows exactly the same trajectory. Failed runs
/// are reported, not propagated.
pub fn run_ablation(data: &FeatureData, cfg: &ExperimentConfig) -> Result<AblationReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut rows: Vec<AblationRow> = ABLATION_ROWS
        .iter()
        .enumerate()
        .map(|(i, &(name, attention, variant, published_wa, published_ua))| AblationRow {
            row: i + 1,
            name: name.into(),
            attention,
            variant,
            runs: Vec::new(),
            wa: f64::NAN,
            ua: f64::NAN,
            published_wa,
            published_ua,
        })
        .collect();

    for &seed in &cfg.seeds {
        log::info!("ablation seed {seed}: teacher");
        let teacher = train_teacher(data, &cfg.model, &cfg.train_for(seed, Variant::CeOnly), &train_opts());
        for (i, &(name, attention, variant, _, _)) in ABLATION_ROWS.iter().enumerate() {
            let result = if i == 1 {
                SeedResult::from_run(seed, &teacher)
            } else if !attention {
                log::info!("ablation seed {seed}: {name}");
                let model = ModelConfig { attention: false, ..cfg.model.clone() };
                let run = train_teacher(data, &model, &cfg.train_for(seed, variant), &train_opts());
                SeedResult::from_run(seed, &run)
            } else {
                log::info!("ablation seed {seed}: {name}");
                let run = match &teacher {
                    Ok(t) => train_student(data, &t.params, &cfg.model, &cfg.train_for(seed, variant), &train_opts()),
                    Err(e) => Err(Error::Config(format!("teacher run failed: {e}"))),
                };
                SeedResult::from_run(seed, &run)
            };
            rows[i].runs.push(result);
        }
    }
    for r in &mut rows {
        r.wa = mean_of(&r.runs, |s| s.wa);
        r.ua = mean_of(&r.runs, |s| s.ua);
    }
    Ok(AblationReport { split_hash: data.split_hash.clone(), seeds: cfg.seeds.clone(), rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub beta: f64,
    pub runs: Vec<SeedResult>,
    pub wa: f64,
    pub ua: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSweepReport {
    pub split_hash: String,
    pub seeds: Vec<u64>,
    pub teachers: Vec<SeedResult>,
    pub rows: Vec<BetaRow>,
}

impl BetaSweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# published IEMOCAP sweep peaks at beta = {PUBLISHED_BEST_BETA} (alpha = 1); reference only"
        );
        let _ = writeln!(out, "# split {} seeds {:?}", self.split_hash, self.seeds);
        let _ = writeln!(out, "beta,wa,ua,status");
        for r in &self.rows {
            let failed = r.runs.iter().any(|s| !s.ok());
            let _ = writeln!(out, "{},{},{},{}", r.beta, r.wa, r.ua, status(failed, &r.runs));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// One DKD student per beta and seed with alpha fixed at 1, all distilled
/// from the same per-seed teacher.
pub fn run_beta_sweep(data: &FeatureData, betas: &[f64], cfg: &ExperimentConfig) -> Result<BetaSweepReport> {
    if betas.is_empty() {
        return Err(Error::Config("beta sweep needs at least one beta".into()));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::Config("beta sweep needs at least one seed".into()));
    }
    if let Some(b) = betas.iter().find(|b| !(**b >= 0.0) || !b.is_finite()) {
        return Err(Error::Config(format!("invalid beta {b}")));
    }
    let mut teachers = Vec::new();
    let mut trained: Vec<Result<NetworkParams>> = Vec::new();
    for &seed in &cfg.seeds {
        log::info!("beta sweep seed {seed}: teacher");
        let run = train_teacher(data, &cfg.model, &cfg.train_for(seed, Variant::CeOnly), &train_opts());
        teachers.push(SeedResult::from_run(seed, &run));
        trained.push(run.map(|r| r.params));
    }
    let mut rows = Vec::new();
    for &beta in betas {
        let mut runs = Vec::new();
        for (&seed, teacher) in cfg.seeds.iter().zip(&trained) {
            log::info!("beta sweep seed {seed}: beta {beta}");
            let mut tc = cfg.train_for(seed, Variant::Dkd);
            tc.distill.alpha = 1.0;
            tc.distill.beta = beta;
            let run = match teacher {
                Ok(t) => train_student(data, t, &cfg.model, &tc, &train_opts()),
                Err(e) => Err(Error::Config(format!("teacher run failed: {e}"))),
            };
            runs.push(SeedResult::from_run(seed, &run));
        }
        rows.push(BetaRow { beta, wa: mean_of(&runs, |s| s.wa), ua: mean_of(&runs, |s| s.ua), runs });
    }
    Ok(BetaSweepReport { split_hash: data.split_hash.clone(), seeds: cfg.seeds.clone(), teachers, rows })
}
