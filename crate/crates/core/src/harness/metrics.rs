use serde::Serialize;

use crate::bank::VisualBank;
use crate::error::{Error, Result};
use crate::fusion::{alignment_scores, assign_labels, project_prototypes, MlpParams};
use crate::learner::cross_entropy;
use crate::linalg::Matrix;
use crate::synth::Proposal;

/// Accuracy figures derived from a confusion matrix (rows = ground truth).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Classification {
    pub accuracy: f64,
    /// Mean of per-class recall over classes that occur in the ground truth.
    pub per_class_accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
    pub count: usize,
}

pub fn classification(truth: &[usize], predicted: &[usize], classes: usize) -> Classification {
    assert_eq!(truth.len(), predicted.len());
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[t][p] += 1;
    }
    let hits: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    let recalls: Vec<f64> = confusion
        .iter()
        .enumerate()
        .filter_map(|(c, row)| {
            let total: u64 = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect();
    Classification {
        accuracy: if truth.is_empty() {
            0.0
        } else {
            hits as f64 / truth.len() as f64
        },
        per_class_accuracy: if recalls.is_empty() {
            0.0
        } else {
            recalls.iter().sum::<f64>() / recalls.len() as f64
        },
        confusion,
        count: truth.len(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    #[serde(flatten)]
    pub classification: Classification,
    pub mean_ce: f64,
}

impl Metrics {
    pub fn accuracy(&self) -> f64 {
        self.classification.accuracy
    }

    pub fn per_class_accuracy(&self) -> f64 {
        self.classification.per_class_accuracy
    }
}

/// Label every proposal against all of the bank's categories.
pub fn evaluate(
    bank: &VisualBank,
    params: &MlpParams<f32>,
    proposals: &[Proposal],
    temperature: f64,
) -> Result<Metrics> {
    let active: Vec<_> = bank.category_ids().collect();
    let protos = project_prototypes(params, bank, &active)?;
    if proposals.is_empty() {
        return Err(Error::InvalidDimension("no proposals to evaluate".into()));
    }
    let truth = proposals
        .iter()
        .map(|p| {
            if p.label.0 < active.len() {
                Ok(p.label.0)
            } else {
                Err(Error::UnknownCategory(p.label.0))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<&[f32]> = proposals.iter().map(|p| p.feature.as_slice()).collect();
    let scores = alignment_scores(&Matrix::from_rows(&rows)?, &protos, temperature)?;
    let predicted: Vec<usize> = assign_labels(&scores).iter().map(|a| a.column).collect();
    let ce = cross_entropy(&scores, &truth)?;
    Ok(Metrics {
        classification: classification(&truth, &predicted, active.len()),
        mean_ce: ce.mean_ce,
    })
}
