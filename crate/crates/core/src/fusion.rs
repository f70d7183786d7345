//! Prototype projection and the softmax alignment head.
//!
//! Category means are lifted into region space by a two-layer rectifier MLP,
//! then each proposal is scored against every projected prototype with a
//! dot product followed by a softmax over categories.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::bank::{CategoryId, VisualBank};
use crate::error::{Error, Result};
use crate::linalg::{dot64, Matrix, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub struct MlpDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl MlpDims {
    /// Hidden width defaults to twice the larger of the two outer widths.
    pub fn with_default_hidden(input: usize, output: usize) -> Self {
        Self {
            input,
            hidden: 2 * input.max(output),
            output,
        }
    }

    pub fn param_count(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden + self.output
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = w1 + self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.output * self.hidden;
        [w1, b1, w2, b2]
    }
}

/// Weights of `x -> W2 · relu(W1 · x + b1) + b2`, stored flat as
/// `[W1 (h×d), b1 (h), W2 (D×h), b2 (D)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    dims: MlpDims,
    theta: Vec<T>,
}

impl<T: Real> MlpParams<T> {
    pub fn zeros(dims: MlpDims) -> Result<Self> {
        if dims.input == 0 || dims.hidden == 0 || dims.output == 0 {
            return Err(Error::InvalidDimension(format!("mlp dims {dims:?}")));
        }
        Ok(Self {
            dims,
            theta: vec![T::zero(); dims.param_count()],
        })
    }

    pub fn from_flat(dims: MlpDims, theta: Vec<T>) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        if theta.len() != p.theta.len() {
            return Err(Error::DimensionMismatch {
                expected: p.theta.len(),
                got: theta.len(),
            });
        }
        p.theta = theta;
        Ok(p)
    }

    /// He-style initialisation: `W1 ~ N(0, 2/d)`, `W2 ~ N(0, 1/h)`, zero biases.
    pub fn init<R: Rng + ?Sized>(dims: MlpDims, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        let w1 = Normal::new(0.0, (2.0 / dims.input as f64).sqrt()).unwrap();
        let w2 = Normal::new(0.0, (1.0 / dims.hidden as f64).sqrt()).unwrap();
        for x in p.w1_mut() {
            *x = T::from(w1.sample(rng)).unwrap();
        }
        for x in p.w2_mut() {
            *x = T::from(w2.sample(rng)).unwrap();
        }
        Ok(p)
    }

    pub fn dims(&self) -> MlpDims {
        self.dims
    }

    pub fn as_flat(&self) -> &[T] {
        &self.theta
    }

    pub fn as_flat_mut(&mut self) -> &mut [T] {
        &mut self.theta
    }

    pub fn w1(&self) -> &[T] {
        let [a, b, _, _] = self.dims.offsets();
        &self.theta[a..b]
    }

    pub fn b1(&self) -> &[T] {
        let [_, b, c, _] = self.dims.offsets();
        &self.theta[b..c]
    }

    pub fn w2(&self) -> &[T] {
        let [_, _, c, d] = self.dims.offsets();
        &self.theta[c..d]
    }

    pub fn b2(&self) -> &[T] {
        let [_, _, _, d] = self.dims.offsets();
        &self.theta[d..]
    }

    pub fn w1_mut(&mut self) -> &mut [T] {
        let [a, b, _, _] = self.dims.offsets();
        &mut self.theta[a..b]
    }

    pub fn b1_mut(&mut self) -> &mut [T] {
        let [_, b, c, _] = self.dims.offsets();
        &mut self.theta[b..c]
    }

    pub fn w2_mut(&mut self) -> &mut [T] {
        let [_, _, c, d] = self.dims.offsets();
        &mut self.theta[c..d]
    }

    pub fn b2_mut(&mut self) -> &mut [T] {
        let [_, _, _, d] = self.dims.offsets();
        &mut self.theta[d..]
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> MlpParams<U> {
        MlpParams {
            dims: self.dims,
            theta: self.theta.iter().map(|&x| U::from(x).unwrap()).collect(),
        }
    }

    /// Forward pass that also returns the hidden pre-activations.
    pub(crate) fn forward_cached(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let MlpDims {
            input,
            hidden,
            output,
        } = self.dims;
        if x.len() != input {
            return Err(Error::DimensionMismatch {
                expected: input,
                got: x.len(),
            });
        }
        let (w1, b1, w2, b2) = (self.w1(), self.b1(), self.w2(), self.b2());
        let pre: Vec<T> = (0..hidden)
            .map(|j| {
                let row = &w1[j * input..(j + 1) * input];
                row.iter().zip(x).map(|(&w, &v)| w * v).sum::<T>() + b1[j]
            })
            .collect();
        let out = (0..output)
            .map(|k| {
                let row = &w2[k * hidden..(k + 1) * hidden];
                row.iter()
                    .zip(&pre)
                    .map(|(&w, &a)| w * a.max(T::zero()))
                    .sum::<T>()
                    + b2[k]
            })
            .collect();
        Ok((pre, out))
    }
}

pub fn mlp_forward<T: Real>(params: &MlpParams<T>, x: &[T]) -> Result<Vec<T>> {
    params.forward_cached(x).map(|(_, out)| out)
}

/// Apply the MLP to every row of `means`.
pub fn project_rows<T: Real>(params: &MlpParams<T>, means: &Matrix<T>) -> Result<Matrix<T>> {
    let mut out = Matrix::zeros(means.rows(), params.dims.output);
    for (i, row) in means.iter_rows().enumerate() {
        out.row_mut(i).copy_from_slice(&mlp_forward(params, row)?);
    }
    Ok(out)
}

/// Projected category prototypes with the category each row belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeBatch<T> {
    pub rows: Matrix<T>,
    pub category_ids: Vec<CategoryId>,
}

impl<T: Copy + Default> PrototypeBatch<T> {
    /// Rows labelled `0..rows` in order.
    pub fn indexed(rows: Matrix<T>) -> Self {
        let category_ids = (0..rows.rows()).map(CategoryId).collect();
        Self { rows, category_ids }
    }

    pub fn len(&self) -> usize {
        self.category_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.category_ids.is_empty()
    }

    pub fn column_of(&self, id: CategoryId) -> Option<usize> {
        self.category_ids.iter().position(|&c| c == id)
    }
}

pub fn project_prototypes(
    params: &MlpParams<f32>,
    bank: &VisualBank,
    active: &[CategoryId],
) -> Result<PrototypeBatch<f32>> {
    let means = bank.prototype_matrix(active)?;
    Ok(PrototypeBatch {
        rows: project_rows(params, &means)?,
        category_ids: active.to_vec(),
    })
}

/// Temperature softmax, shifted by the max logit for stability.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if logits.iter().any(|z| !z.is_finite()) || !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::NonFinite);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|&z| ((z - max) / temperature).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Per-proposal category probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentScores {
    pub probs: Matrix<f64>,
    pub temperature: f64,
    pub category_ids: Vec<CategoryId>,
}

/// Raw dot-product logits `F_r · P^T`, accumulated in `f64`.
pub fn logits<T: Real>(proposals: &Matrix<T>, prototypes: &Matrix<T>) -> Result<Matrix<f64>> {
    if proposals.cols() != prototypes.cols() {
        return Err(Error::DimensionMismatch {
            expected: prototypes.cols(),
            got: proposals.cols(),
        });
    }
    let mut out = Matrix::zeros(proposals.rows(), prototypes.rows());
    for (q, fr) in proposals.iter_rows().enumerate() {
        for (c, p) in prototypes.iter_rows().enumerate() {
            out.row_mut(q)[c] = dot64(fr, p);
        }
    }
    Ok(out)
}

pub fn alignment_scores<T: Real>(
    proposals: &Matrix<T>,
    prototypes: &PrototypeBatch<T>,
    temperature: f64,
) -> Result<AlignmentScores> {
    let raw = logits(proposals, &prototypes.rows)?;
    let mut probs = Matrix::zeros(raw.rows(), raw.cols());
    for q in 0..raw.rows() {
        probs
            .row_mut(q)
            .copy_from_slice(&softmax(raw.row(q), temperature)?);
    }
    Ok(AlignmentScores {
        probs,
        temperature,
        category_ids: prototypes.category_ids.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Assignment {
    pub column: usize,
    pub category: CategoryId,
    pub confidence: f64,
}

/// Row-wise argmax (lowest column on ties).
pub fn assign_labels(scores: &AlignmentScores) -> Vec<Assignment> {
    scores
        .probs
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (c, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = c;
                }
            }
            Assignment {
                column: best,
                category: scores.category_ids[best],
                confidence: row[best],
            }
        })
        .collect()
}
