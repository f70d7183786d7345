use std::fmt::Write as _;

use serde::Serialize;
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::synth::{PromptItem, Proposal};

pub const CSV_HEADER: &str = "setting,seed,accuracy,per_class_acc,mean_ce";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub setting: String,
    pub seed: u64,
    pub accuracy: f64,
    pub per_class_acc: f64,
    pub mean_ce: f64,
}

/// Hashes of the exact inputs a cell saw, so paired cells can be checked for
/// sharing every draw except the variable under test.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditEntry {
    pub setting: String,
    pub seed: u64,
    pub prompt_hash: String,
    pub proposal_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub setting: String,
    pub seeds: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_per_class_acc: f64,
    pub mean_ce: f64,
}

/// Per-seed differences `a - b` of two settings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairedDifference {
    pub minuend: String,
    pub subtrahend: String,
    pub differences: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub positive: usize,
    /// Two-sided 95% Student-t interval for the mean difference.
    pub ci95: (f64, f64),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunReport {
    pub experiment: String,
    pub rows: Vec<ReportRow>,
    pub audit: Vec<AuditEntry>,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

impl RunReport {
    pub fn new(experiment: impl Into<String>) -> Self {
        Self {
            experiment: experiment.into(),
            ..Self::default()
        }
    }

    /// Settings in first-appearance order.
    pub fn settings(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.setting) {
                out.push(r.setting.clone());
            }
        }
        out
    }

    fn column(&self, setting: &str, f: impl Fn(&ReportRow) -> f64) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.setting == setting)
            .map(f)
            .collect()
    }

    pub fn accuracies(&self, setting: &str) -> Vec<f64> {
        self.column(setting, |r| r.accuracy)
    }

    pub fn aggregate(&self, setting: &str) -> Aggregate {
        let acc = self.accuracies(setting);
        Aggregate {
            setting: setting.to_string(),
            seeds: acc.len(),
            mean_accuracy: mean(&acc),
            std_accuracy: std_dev(&acc),
            mean_per_class_acc: mean(&self.column(setting, |r| r.per_class_acc)),
            mean_ce: mean(&self.column(setting, |r| r.mean_ce)),
        }
    }

    pub fn aggregates(&self) -> Vec<Aggregate> {
        self.settings().iter().map(|s| self.aggregate(s)).collect()
    }

    /// Pairs rows of `a` and `b` by seed.
    pub fn paired_difference(&self, a: &str, b: &str) -> PairedDifference {
        let differences: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.setting == a)
            .filter_map(|ra| {
                self.rows
                    .iter()
                    .find(|rb| rb.setting == b && rb.seed == ra.seed)
                    .map(|rb| ra.accuracy - rb.accuracy)
            })
            .collect();
        let (m, s, n) = (mean(&differences), std_dev(&differences), differences.len());
        let half = if n >= 2 {
            let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
                .map(|d| d.inverse_cdf(0.975))
                .unwrap_or(f64::INFINITY);
            t * s / (n as f64).sqrt()
        } else {
            0.0
        };
        PairedDifference {
            minuend: a.to_string(),
            subtrahend: b.to_string(),
            positive: differences.iter().filter(|&&d| d > 0.0).count(),
            differences,
            mean: m,
            std: s,
            ci95: (m - half, m + half),
        }
    }

    /// One row per cell, fixed six-decimal formatting so identical runs are
    /// byte-identical.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6}",
                r.setting, r.seed, r.accuracy, r.per_class_acc, r.mean_ce
            );
        }
        out
    }
}

fn hex_digest(h: Sha256) -> String {
    hex::encode(h.finalize())
}

pub fn hash_prompts(items: &[PromptItem]) -> String {
    let mut h = Sha256::new();
    for it in items {
        h.update((it.category.0 as u64).to_le_bytes());
        h.update((it.view as u64).to_le_bytes());
        for x in it.feature.iter() {
            h.update(x.to_le_bytes());
        }
    }
    hex_digest(h)
}

pub fn hash_proposals(proposals: &[Proposal]) -> String {
    let mut h = Sha256::new();
    for p in proposals {
        h.update((p.label.0 as u64).to_le_bytes());
        for x in &p.feature {
            h.update(x.to_le_bytes());
        }
    }
    hex_digest(h)
}
