//! Training the projection MLP through the alignment head.
//!
//! The loss is mean softmax cross-entropy over proposals. Gradients flow
//! only into the MLP; category means and proposal features are inputs.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bank::{CategoryId, UpdatePolicy, VisualBank};
use crate::error::{Error, Result};
use crate::fusion::{alignment_scores, assign_labels, AlignmentScores, MlpDims, MlpParams, PrototypeBatch};
use crate::linalg::{Matrix, Real};
use crate::synth::{seeded_rng, World};

const INIT_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossReport {
    pub mean_ce: f64,
    pub correct_fraction: f64,
    pub n_terms: usize,
}

/// Mean `-ln p[q, target_q]` and argmax hit rate. `targets` are column indices.
pub fn cross_entropy(scores: &AlignmentScores, targets: &[usize]) -> Result<LossReport> {
    let probs = &scores.probs;
    if targets.len() != probs.rows() || targets.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: probs.rows(),
            got: targets.len(),
        });
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= probs.cols()) {
        return Err(Error::InvalidTarget {
            target: bad,
            columns: probs.cols(),
        });
    }
    let labels = assign_labels(scores);
    let mut ce = 0.0;
    let mut hits = 0usize;
    for (q, &t) in targets.iter().enumerate() {
        ce -= probs.get(q, t).max(f64::MIN_POSITIVE).ln();
        hits += usize::from(labels[q].column == t);
    }
    let n = targets.len();
    Ok(LossReport {
        mean_ce: ce / n as f64,
        correct_fraction: hits as f64 / n as f64,
        n_terms: n,
    })
}

/// Inputs of one loss evaluation: category means (rows), proposal features
/// (rows) and the target column of every proposal.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub means: Matrix<T>,
    pub proposals: Matrix<T>,
    pub targets: Vec<usize>,
    pub temperature: f64,
}

impl<T: Real> Batch<T> {
    fn check(&self, params: &MlpParams<T>) -> Result<()> {
        let dims = params.dims();
        if self.means.cols() != dims.input {
            return Err(Error::DimensionMismatch {
                expected: dims.input,
                got: self.means.cols(),
            });
        }
        if self.proposals.cols() != dims.output {
            return Err(Error::DimensionMismatch {
                expected: dims.output,
                got: self.proposals.cols(),
            });
        }
        if self.proposals.rows() != self.targets.len() {
            return Err(Error::DimensionMismatch {
                expected: self.proposals.rows(),
                got: self.targets.len(),
            });
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Batch<U> {
        Batch {
            means: self.means.map(|x| U::from(x).unwrap()),
            proposals: self.proposals.map(|x| U::from(x).unwrap()),
            targets: self.targets.clone(),
            temperature: self.temperature,
        }
    }
}

pub fn loss<T: Real>(params: &MlpParams<T>, batch: &Batch<T>) -> Result<LossReport> {
    batch.check(params)?;
    let protos = crate::fusion::project_rows(params, &batch.means)?;
    let scores = alignment_scores(&batch.proposals, &PrototypeBatch::indexed(protos), batch.temperature)?;
    cross_entropy(&scores, &batch.targets)
}

/// Loss and its exact gradient with respect to every MLP parameter.
pub fn backward<T: Real>(params: &MlpParams<T>, batch: &Batch<T>) -> Result<(LossReport, MlpParams<T>)> {
    batch.check(params)?;
    let MlpDims {
        input,
        hidden,
        output,
    } = params.dims();
    let c = batch.means.rows();
    let nq = batch.proposals.rows();

    let mut pre = Vec::with_capacity(c);
    let mut protos = Matrix::zeros(c, output);
    for (i, x) in batch.means.iter_rows().enumerate() {
        let (a, y) = params.forward_cached(x)?;
        protos.row_mut(i).copy_from_slice(&y);
        pre.push(a);
    }
    let scores = alignment_scores(&batch.proposals, &PrototypeBatch::indexed(protos), batch.temperature)?;
    let report = cross_entropy(&scores, &batch.targets)?;

    // dL/dlogit[q, c] = (p - y) / nq, and logit = fr·proto / τ.
    let coef = 1.0 / (nq as f64 * batch.temperature);
    let mut dproto = vec![vec![0.0f64; output]; c];
    for q in 0..nq {
        let fr = batch.proposals.row(q);
        for (ci, dp) in dproto.iter_mut().enumerate() {
            let mut g = scores.probs.get(q, ci);
            if ci == batch.targets[q] {
                g -= 1.0;
            }
            let g = g * coef;
            for (acc, &f) in dp.iter_mut().zip(fr) {
                *acc += g * f.to_f64().unwrap();
            }
        }
    }

    let mut grad = MlpParams::zeros(params.dims())?;
    let w2 = params.w2().to_vec();
    for ci in 0..c {
        let x = batch.means.row(ci);
        let a = &pre[ci];
        let dp: Vec<T> = dproto[ci].iter().map(|&g| T::from(g).unwrap()).collect();
        {
            let gw2 = grad.w2_mut();
            for k in 0..output {
                for j in 0..hidden {
                    gw2[k * hidden + j] = gw2[k * hidden + j] + dp[k] * a[j].max(T::zero());
                }
            }
        }
        for (gb, &g) in grad.b2_mut().iter_mut().zip(&dp) {
            *gb = *gb + g;
        }
        let da: Vec<T> = (0..hidden)
            .map(|j| {
                if a[j] > T::zero() {
                    (0..output).map(|k| w2[k * hidden + j] * dp[k]).sum()
                } else {
                    T::zero()
                }
            })
            .collect();
        {
            let gw1 = grad.w1_mut();
            for j in 0..hidden {
                for i in 0..input {
                    gw1[j * input + i] = gw1[j * input + i] + da[j] * x[i];
                }
            }
        }
        for (gb, &g) in grad.b1_mut().iter_mut().zip(&da) {
            *gb = *gb + g;
        }
    }
    Ok((report, grad))
}

/// Largest relative gap between an analytic gradient and central differences,
/// over `samples` coordinates drawn from `pool` (all of it if smaller).
///
/// Gap per coordinate is `|analytic - numeric| / max(1e-12, |numeric|)`.
pub fn finite_difference_check<F, R>(
    theta: &[f64],
    analytic: &[f64],
    mut loss_at: F,
    eps: f64,
    pool: &[usize],
    samples: usize,
    rng: &mut R,
) -> f64
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    assert_eq!(theta.len(), analytic.len());
    let coords: Vec<usize> = if samples >= pool.len() {
        pool.to_vec()
    } else {
        sample(rng, pool.len(), samples)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    };
    let mut probe = theta.to_vec();
    let mut worst = 0.0f64;
    for i in coords {
        probe[i] = theta[i] + eps;
        let up = loss_at(&probe);
        probe[i] = theta[i] - eps;
        let down = loss_at(&probe);
        probe[i] = theta[i];
        let numeric = (up - down) / (2.0 * eps);
        let gap = (analytic[i] - numeric).abs() / numeric.abs().max(1e-12);
        worst = worst.max(gap);
    }
    worst
}

/// Flat indices whose gradient can be non-zero for `means`.
///
/// Adding the same vector to every prototype adds `v·f` to every logit of a
/// proposal, which the softmax cannot see. The output bias does exactly that,
/// and so does `b1[j]` for a hidden unit that is active on every mean. Their
/// gradients are identically zero, so a relative error there would only
/// measure rounding noise; they are left out.
pub fn identifiable_coordinates<T: Real>(params: &MlpParams<T>, means: &Matrix<T>) -> Result<Vec<usize>> {
    let dims = params.dims();
    let mut always_on = vec![true; dims.hidden];
    for row in means.iter_rows() {
        let (pre, _) = params.forward_cached(row)?;
        for (on, a) in always_on.iter_mut().zip(pre) {
            *on &= a > T::zero();
        }
    }
    let b1_start = dims.hidden * dims.input;
    let b2_start = dims.param_count() - dims.output;
    Ok((0..b2_start)
        .filter(|&i| !(b1_start..b1_start + dims.hidden).contains(&i) || !always_on[i - b1_start])
        .collect())
}

/// Finite-difference check of [`backward`] at 64-bit precision.
pub fn gradient_check<R: Rng + ?Sized>(
    params: &MlpParams<f64>,
    batch: &Batch<f64>,
    eps: f64,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let (_, grad) = backward(params, batch)?;
    let dims = params.dims();
    let pool = identifiable_coordinates(params, &batch.means)?;
    let mut failure = None;
    let gap = finite_difference_check(
        params.as_flat(),
        grad.as_flat(),
        |theta| {
            let p = MlpParams::from_flat(dims, theta.to_vec()).expect("same shape");
            match loss(&p, batch) {
                Ok(r) => r.mean_ce,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        eps,
        &pool,
        samples,
        rng,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(gap),
    }
}

/// One architecture in the gradient-check matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct GradCheckCase {
    pub dims: MlpDims,
    pub categories: usize,
    pub queries: usize,
}

/// Five shapes covering tiny, wide, deep-hidden, tall-output and single-query
/// problems.
pub fn gradcheck_cases() -> [GradCheckCase; 5] {
    let case = |input, hidden, output, categories, queries| GradCheckCase {
        dims: MlpDims {
            input,
            hidden,
            output,
        },
        categories,
        queries,
    };
    [
        case(2, 3, 2, 2, 3),
        case(5, 7, 4, 3, 6),
        case(8, 32, 8, 5, 10),
        case(4, 6, 12, 4, 8),
        case(16, 32, 16, 10, 1),
    ]
}

/// Seeded random parameters (with non-zero biases) and a Gaussian batch of
/// the requested shape.
pub fn random_problem(seed: u64, case: GradCheckCase) -> Result<(MlpParams<f64>, Batch<f64>)> {
    let mut rng = seeded_rng(seed, INIT_STREAM);
    let dims = case.dims;
    let mut params = MlpParams::<f64>::init(dims, &mut rng)?;
    let bias = Normal::new(0.0, 0.1).expect("valid sigma");
    for b in params.b1_mut() {
        *b = bias.sample(&mut rng);
    }
    for b in params.b2_mut() {
        *b = bias.sample(&mut rng);
    }
    let mut gauss = |r: usize, k: usize| {
        let v = (0..r * k).map(|_| StandardNormal.sample(&mut rng)).collect();
        Matrix::from_vec(r, k, v)
    };
    let means = gauss(case.categories, dims.input)?;
    let proposals = gauss(case.queries, dims.output)?;
    let targets = (0..case.queries).map(|q| (q * 7 + 3) % case.categories).collect();
    Ok((
        params,
        Batch {
            means,
            proposals,
            targets,
            temperature: 1.0,
        },
    ))
}

/// Worst relative gap for one case, probing 200 coordinates with `eps = 1e-6`.
pub fn run_gradcheck_case(case: GradCheckCase, seed: u64) -> Result<f64> {
    let (params, batch) = random_problem(seed, case)?;
    gradient_check(&params, &batch, 1e-6, 200, &mut seeded_rng(seed, TRAIN_STREAM))
}

/// AdamW hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub hyper: AdamW,
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub step: u64,
}

impl<T: Real> OptimState<T> {
    pub fn new(hyper: AdamW, len: usize) -> Self {
        Self {
            hyper,
            first_moment: vec![T::zero(); len],
            second_moment: vec![T::zero(); len],
            step: 0,
        }
    }

    /// One bias-corrected AdamW step with decoupled weight decay.
    pub fn step(&mut self, theta: &mut [T], grad: &[T]) -> Result<()> {
        if grad.len() != theta.len() || self.first_moment.len() != theta.len() {
            return Err(Error::DimensionMismatch {
                expected: theta.len(),
                got: grad.len(),
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        let h = self.hyper;
        let t = |x: f64| T::from(x).unwrap();
        self.step += 1;
        let (b1, b2) = (t(h.beta1), t(h.beta2));
        let c1 = t(1.0 - h.beta1.powi(self.step as i32));
        let c2 = t(1.0 - h.beta2.powi(self.step as i32));
        let (lr, wd, eps) = (t(h.learning_rate), t(h.weight_decay), t(h.epsilon));
        for i in 0..theta.len() {
            let g = grad[i];
            let m = b1 * self.first_moment[i] + (T::one() - b1) * g;
            let v = b2 * self.second_moment[i] + (T::one() - b2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            let decayed = theta[i] - lr * wd * theta[i];
            theta[i] = decayed - lr * ((m / c1) / ((v / c2).sqrt() + eps));
        }
        Ok(())
    }
}

pub fn optimizer_step<T: Real>(
    params: &mut MlpParams<T>,
    grads: &MlpParams<T>,
    state: &mut OptimState<T>,
) -> Result<()> {
    if params.dims() != grads.dims() {
        return Err(Error::DimensionMismatch {
            expected: params.as_flat().len(),
            got: grads.as_flat().len(),
        });
    }
    state.step(params.as_flat_mut(), grads.as_flat())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub prompts_per_episode: usize,
    pub proposals_per_episode: usize,
    pub slots: usize,
    /// Hidden width; `None` means `2 · max(d, D)`.
    pub hidden: Option<usize>,
    pub temperature: f64,
    pub optimizer: AdamW,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            episodes_per_epoch: 20,
            prompts_per_episode: 8,
            proposals_per_episode: 16,
            slots: 5,
            hidden: None,
            temperature: 1.0,
            optimizer: AdamW::default(),
        }
    }
}

impl TrainConfig {
    pub fn mlp_dims(&self, world: &World) -> MlpDims {
        let mut dims = MlpDims::with_default_hidden(world.spec.prompt_dim, world.spec.region_dim);
        if let Some(h) = self.hidden {
            dims.hidden = h;
        }
        dims
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss: LossReport,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: MlpParams<f32>,
    pub curve: Vec<EpochReport>,
    /// The bank as it stood after the last episode.
    pub final_bank: VisualBank,
}

/// Stream episodes through a fresh averaging bank each epoch and fit the MLP.
///
/// Only `categories` are used (the bank has one row per entry, row `i` holding
/// `categories[i]`). Every random draw comes from `seed`.
pub fn train_loop(
    world: &World,
    config: &TrainConfig,
    categories: &[CategoryId],
    seed: u64,
) -> Result<TrainOutcome> {
    if categories.is_empty() || config.epochs == 0 || config.episodes_per_epoch == 0 {
        return Err(Error::InvalidDimension("empty training schedule".into()));
    }
    let dims = config.mlp_dims(world);
    let mut params = MlpParams::<f32>::init(dims, &mut seeded_rng(seed, INIT_STREAM))?;
    let mut state = OptimState::new(config.optimizer, dims.param_count());
    let mut rng = seeded_rng(seed, TRAIN_STREAM);
    let mut curve = Vec::with_capacity(config.epochs);
    let mut bank = VisualBank::new(categories.len(), config.slots, world.spec.prompt_dim, UpdatePolicy::Averaging)?;

    for epoch in 1..=config.epochs {
        bank = VisualBank::new(categories.len(), config.slots, world.spec.prompt_dim, UpdatePolicy::Averaging)?;
        let (mut ce, mut hits, mut terms) = (0.0, 0.0, 0usize);
        for _ in 0..config.episodes_per_epoch {
            let episode = world.sample_episode(
                categories,
                config.prompts_per_episode,
                config.proposals_per_episode,
                &mut rng,
            );
            for item in &episode.prompt_items {
                let row = categories.iter().position(|&c| c == item.category).unwrap();
                bank.insert(CategoryId(row), &item.feature)?;
            }
            let active = bank.active_categories();
            let mut rows = Vec::new();
            let mut targets = Vec::new();
            for p in &episode.proposals {
                let row = categories.iter().position(|&c| c == p.label).unwrap();
                if let Some(col) = active.iter().position(|&a| a.0 == row) {
                    rows.push(p.feature.as_slice());
                    targets.push(col);
                }
            }
            if targets.is_empty() {
                continue;
            }
            let batch = Batch {
                means: bank.prototype_matrix(&active)?,
                proposals: Matrix::from_rows(&rows)?,
                targets,
                temperature: config.temperature,
            };
            let (report, grad) = backward(&params, &batch)?;
            optimizer_step(&mut params, &grad, &mut state)?;
            ce += report.mean_ce * report.n_terms as f64;
            hits += report.correct_fraction * report.n_terms as f64;
            terms += report.n_terms;
        }
        let n = terms.max(1) as f64;
        curve.push(EpochReport {
            epoch,
            loss: LossReport {
                mean_ce: ce / n,
                correct_fraction: hits / n,
                n_terms: terms,
            },
        });
    }
    Ok(TrainOutcome {
        params,
        curve,
        final_bank: bank,
    })
}
