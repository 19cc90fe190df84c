//! Confusion matrices, WA/UA, and the ablation and beta-sweep harnesses.

mod experiment;

pub use experiment::{
    run_ablation, run_beta_sweep, AblationReport, AblationRow, BetaRow, BetaSweepReport, ExperimentConfig,
    SeedResult, ABLATION_ROWS, DEFAULT_BETAS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(class_names: &[&str]) -> Self {
        let k = class_names.len();
        Self {
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_pairs(class_names: &[&str], pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut cm = Self::new(class_names);
        for (truth, pred) in pairs {
            cm.add(truth, pred)?;
        }
        Ok(cm)
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        let k = self.n_classes();
        for label in [truth, pred] {
            if label >= k {
                return Err(Error::Label { label, classes: k });
            }
        }
        self.counts[truth][pred] += 1;
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Weighted accuracy: correct predictions over all samples.
    pub fn wa(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::UndefinedMetric("WA of an empty confusion matrix".into()));
        }
        Ok(self.trace() as f64 / total as f64)
    }

    /// Recall of each class.
    pub fn recalls(&self) -> Result<Vec<f64>> {
        (0..self.n_classes())
            .map(|c| {
                let n = self.row_sum(c);
                if n == 0 {
                    return Err(Error::UndefinedMetric(format!(
                        "UA undefined: class {} has no samples",
                        self.class_names[c]
                    )));
                }
                Ok(self.counts[c][c] as f64 / n as f64)
            })
            .collect()
    }

    /// Unweighted accuracy: mean per-class recall.
    pub fn ua(&self) -> Result<f64> {
        let r = self.recalls()?;
        Ok(r.iter().sum::<f64>() / r.len() as f64)
    }

    /// Aligned plain-text table with true classes down the side.
    pub fn to_table(&self) -> String {
        let width = self
            .class_names
            .iter()
            .map(|s| s.len())
            .chain(self.counts.iter().flatten().map(|c| c.to_string().len()))
            .max()
            .unwrap_or(1)
            .max("true\\pred".len());
        let mut out = format!("{:>width$}", "true\\pred");
        for name in &self.class_names {
            out.push_str(&format!(" {name:>width$}"));
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            out.push_str(&format!("{name:>width$}"));
            for c in row {
                out.push_str(&format!(" {c:>width$}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("confusion matrix serializes")
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    const NAMES: [&str; 4] = ["angry", "happy", "neutral", "sad"];

    #[test]
    fn perfect_diagonal() {
        let cm = ConfusionMatrix::from_pairs(&NAMES, (0..4).flat_map(|c| [(c, c), (c, c)])).unwrap();
        assert_eq!(cm.wa().unwrap(), 1.0);
        assert_eq!(cm.ua().unwrap(), 1.0);
    }

    #[test]
    fn ninety_ten() {
        let pairs = std::iter::repeat_n((0, 0), 90).chain(std::iter::repeat_n((1, 0), 10));
        let cm = ConfusionMatrix::from_pairs(&["a", "b"], pairs).unwrap();
        assert_eq!(cm.wa().unwrap(), 0.9);
        assert_eq!(cm.ua().unwrap(), 0.5);
    }

    #[test]
    fn undefined_metrics_name_the_class() {
        let cm = ConfusionMatrix::new(&NAMES);
        assert!(matches!(cm.wa(), Err(Error::UndefinedMetric(_))));
        let cm = ConfusionMatrix::from_pairs(&NAMES, [(0, 0), (1, 1), (3, 3)]).unwrap();
        match cm.ua() {
            Err(Error::UndefinedMetric(msg)) => assert!(msg.contains("neutral")),
            other => panic!("{other:?}"),
        }
        assert!(cm.wa().is_ok());
    }

    #[test]
    fn table_and_json() {
        let cm = ConfusionMatrix::from_pairs(&NAMES, [(0, 0), (1, 2), (2, 2), (3, 1)]).unwrap();
        let table = cm.to_table();
        assert_eq!(table.lines().count(), 5);
        let widths: Vec<usize> = table.lines().map(str::len).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]));
        let back: ConfusionMatrix = serde_json::from_str(&cm.to_json()).unwrap();
        assert_eq!(back, cm);
    }

    proptest! {
        #[test]
        fn balanced_classes_make_ua_equal_wa(hits in prop::array::uniform4(0u64..=10)) {
            let mut cm = ConfusionMatrix::new(&NAMES);
            for (c, &h) in hits.iter().enumerate() {
                cm.counts[c][c] = h;
                cm.counts[c][(c + 1) % 4] = 10 - h;
            }
            let (wa, ua) = (cm.wa().unwrap(), cm.ua().unwrap());
            prop_assert!((wa - ua).abs() < 1e-15);
        }

        #[test]
        fn total_counts_every_pair(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..200)) {
            let cm = ConfusionMatrix::from_pairs(&NAMES, pairs.iter().copied()).unwrap();
            prop_assert_eq!(cm.total(), pairs.len() as u64);
            let correct = pairs.iter().filter(|(t, p)| t == p).count();
            prop_assert_eq!(cm.wa().unwrap(), correct as f64 / pairs.len() as f64);
        }
    }
}
