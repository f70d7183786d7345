//! Property checks shared by `properties.rs` (as proptest cases) and the
//! acceptance target (through an explicit `TestRunner`).

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use vbank::bank::{UpdateAction, UpdatePolicy};
use vbank::fusion::{
    alignment_scores, assign_labels, logits, mlp_forward, project_prototypes, softmax, MlpDims,
    MlpParams, PrototypeBatch,
};
use vbank::linalg::Matrix;
use vbank::synth::seeded_rng;
use vbank::{cosine_similarity, CategoryId, VisualBank};

pub type Check = Result<(), TestCaseError>;

/// A non-zero feature of dimension `d`.
pub fn feature(d: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-8.0f32..8.0, d).prop_filter("non-zero", |v| v.iter().any(|&x| x != 0.0))
}

pub fn policy() -> impl Strategy<Value = UpdatePolicy> {
    prop_oneof![Just(UpdatePolicy::Averaging), Just(UpdatePolicy::Fifo)]
}

/// `(n, d, features)` for one category.
pub fn insert_sequence() -> impl Strategy<Value = (usize, usize, Vec<Vec<f32>>)> {
    (1usize..=5, 1usize..=8).prop_flat_map(|(n, d)| {
        (Just(n), Just(d), prop::collection::vec(feature(d), 0..24))
    })
}

/// `(n, d, features with category labels)` over three categories.
pub fn labelled_sequence() -> impl Strategy<Value = (usize, usize, Vec<(usize, Vec<f32>)>)> {
    (1usize..=4, 1usize..=6).prop_flat_map(|(n, d)| {
        (
            Just(n),
            Just(d),
            prop::collection::vec((0usize..3, feature(d)), 0..30),
        )
    })
}

fn slots_of(bank: &VisualBank, c: usize) -> Vec<f32> {
    bank.category(CategoryId(c)).unwrap().raw().to_vec()
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// The first `n` inserts land in slots `0, 1, ...` verbatim, whatever the policy.
pub fn prefix_fill(policy: UpdatePolicy, n: usize, d: usize, feats: &[Vec<f32>]) -> Check {
    let mut bank = VisualBank::new(1, n, d, policy).unwrap();
    for (i, f) in feats.iter().enumerate() {
        let rec = bank.insert(CategoryId(0), f).unwrap();
        let cat = bank.category(CategoryId(0)).unwrap();
        if i < n {
            prop_assert_eq!(rec.slot_index, i);
            prop_assert_eq!(rec.action, UpdateAction::Filled);
            for (k, earlier) in feats[..=i].iter().enumerate() {
                prop_assert_eq!(bits(cat.slot(k)), bits(earlier));
            }
        } else {
            prop_assert_ne!(rec.action, UpdateAction::Filled);
        }
        prop_assert_eq!(cat.occupancy(), (i + 1).min(n));
    }
    Ok(())
}

/// Every insert rewrites exactly the reported slot of the target category.
pub fn single_slot_mutation(
    policy: UpdatePolicy,
    n: usize,
    d: usize,
    feats: &[(usize, Vec<f32>)],
) -> Check {
    let mut bank = VisualBank::new(3, n, d, policy).unwrap();
    for (c, f) in feats {
        let before: Vec<Vec<f32>> = (0..3).map(|k| slots_of(&bank, k)).collect();
        let rec = bank.insert(CategoryId(*c), f).unwrap();
        for (k, old_slots) in before.iter().enumerate() {
            let after = slots_of(&bank, k);
            for s in 0..n {
                let (old, new) = (&old_slots[s * d..(s + 1) * d], &after[s * d..(s + 1) * d]);
                if k == *c && s == rec.slot_index {
                    continue;
                }
                prop_assert_eq!(bits(old), bits(new), "category {} slot {} changed", k, s);
            }
        }
    }
    Ok(())
}

/// Scaling the incoming feature by a positive power of two never changes
/// which slot the averaging policy selects.
pub fn scale_invariant_selection(
    n: usize,
    d: usize,
    feats: &[Vec<f32>],
    probe: &[f32],
    exponent: i32,
) -> Check {
    let mut bank = VisualBank::new(1, n, d, UpdatePolicy::Averaging).unwrap();
    for f in feats {
        bank.insert(CategoryId(0), f).unwrap();
    }
    let scaled: Vec<f32> = probe.iter().map(|&x| x * 2f32.powi(exponent)).collect();
    let a = bank.clone().insert(CategoryId(0), probe).unwrap();
    let b = bank.clone().insert(CategoryId(0), &scaled).unwrap();
    prop_assert_eq!(a, b);
    Ok(())
}

/// A FIFO category holds exactly the last `min(m, n)` features, feature `i`
/// in slot `i mod n`.
pub fn fifo_recency(n: usize, d: usize, feats: &[Vec<f32>]) -> Check {
    let mut bank = VisualBank::new(1, n, d, UpdatePolicy::Fifo).unwrap();
    for f in feats {
        bank.insert(CategoryId(0), f).unwrap();
    }
    let cat = bank.category(CategoryId(0)).unwrap();
    let m = feats.len();
    prop_assert_eq!(cat.occupancy(), m.min(n));
    for (i, f) in feats.iter().enumerate().skip(m.saturating_sub(n)) {
        prop_assert_eq!(bits(cat.slot(i % n)), bits(f));
    }
    Ok(())
}

/// A merged slot is no longer than the longer of its two inputs.
pub fn merge_norm_bound(n: usize, d: usize, feats: &[Vec<f32>]) -> Check {
    let norm = |v: &[f32]| v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    let mut bank = VisualBank::new(1, n, d, UpdatePolicy::Averaging).unwrap();
    for f in feats {
        let before = slots_of(&bank, 0);
        let rec = bank.insert(CategoryId(0), f).unwrap();
        if rec.action == UpdateAction::Merged {
            let k = rec.slot_index;
            let old = norm(&before[k * d..(k + 1) * d]);
            let new = norm(bank.category(CategoryId(0)).unwrap().slot(k));
            prop_assert!(new <= old.max(norm(f)) * (1.0 + 1e-6));
        }
    }
    Ok(())
}

pub fn cosine_contract(a: &[f32], b: &[f32], scale: f32) -> Check {
    let ab = cosine_similarity(a, b).unwrap();
    prop_assert!((-1.0..=1.0).contains(&ab));
    prop_assert_eq!(ab, cosine_similarity(b, a).unwrap());
    let scaled: Vec<f32> = a.iter().map(|&x| x * scale).collect();
    prop_assert!((cosine_similarity(&scaled, b).unwrap() - ab).abs() < 1e-5);
    prop_assert!((cosine_similarity(a, a).unwrap() - 1.0).abs() < 1e-12);
    Ok(())
}

/// Row sums, positivity, shift invariance and argmax stability across temperatures.
pub fn softmax_contract(z: &[f64], tau: f64, shift: f64, tau2: f64) -> Check {
    let p = softmax(z, tau).unwrap();
    let sum: f64 = p.iter().sum();
    prop_assert!((sum - 1.0).abs() <= 1e-6, "sum {}", sum);
    // The top entry rounds to exactly 1 once the rest of the mass drops
    // below f64 resolution, so strictness is only asserted short of that.
    let spread = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
        - z.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    for &x in &p {
        prop_assert!(x > 0.0 && x <= 1.0);
        if z.len() > 1 && spread / tau < 30.0 {
            prop_assert!(x < 1.0);
        }
    }
    let shifted: Vec<f64> = z.iter().map(|x| x + shift).collect();
    for (a, b) in p.iter().zip(softmax(&shifted, tau).unwrap()) {
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300).max(1.0), "{} vs {}", a, b);
    }
    prop_assert_eq!(argmax(&p), argmax(&softmax(z, tau2).unwrap()));
    Ok(())
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Permuting the prototype rows permutes the score columns and keeps every
/// assigned category.
pub fn permutation_equivariance(
    proposals: &Matrix<f64>,
    prototypes: &Matrix<f64>,
    perm: &[usize],
    tau: f64,
) -> Check {
    let base = PrototypeBatch::indexed(prototypes.clone());
    let permuted = PrototypeBatch {
        rows: prototypes.select_rows(perm),
        category_ids: perm.iter().map(|&i| CategoryId(i)).collect(),
    };
    let s = alignment_scores(proposals, &base, tau).unwrap();
    let t = alignment_scores(proposals, &permuted, tau).unwrap();
    for q in 0..proposals.rows() {
        let row_sum: f64 = s.probs.row(q).iter().sum();
        prop_assert!((row_sum - 1.0).abs() <= 1e-6);
        for (j, &i) in perm.iter().enumerate() {
            prop_assert!((t.probs.get(q, j) - s.probs.get(q, i)).abs() <= 1e-12);
        }
    }
    let (a, b) = (assign_labels(&s), assign_labels(&t));
    for (q, (x, y)) in a.iter().zip(&b).enumerate() {
        if x.category != y.category {
            // Only a tie may resolve differently.
            prop_assert!((x.confidence - s.probs.get(q, y.category.0)).abs() <= 1e-12);
        }
    }
    Ok(())
}

/// Appending a prototype row leaves the logits of existing rows bit-identical.
pub fn appended_row_preserves_logits(
    proposals: &Matrix<f64>,
    prototypes: &Matrix<f64>,
    extra: &[f64],
) -> Check {
    let mut rows: Vec<Vec<f64>> = prototypes.iter_rows().map(<[f64]>::to_vec).collect();
    let before = logits(proposals, prototypes).unwrap();
    rows.push(extra.to_vec());
    let after = logits(proposals, &Matrix::from_rows(&rows).unwrap()).unwrap();
    for q in 0..proposals.rows() {
        prop_assert_eq!(&after.row(q)[..prototypes.rows()], before.row(q));
    }
    Ok(())
}

/// Projecting the active categories in a permuted order permutes the rows.
pub fn projection_equivariance(seed: u64, d: usize, feats: &[Vec<f32>], perm: &[usize]) -> Check {
    let c = perm.len();
    let mut bank = VisualBank::new(c, 2, d, UpdatePolicy::Averaging).unwrap();
    for (i, f) in feats.iter().enumerate() {
        bank.insert(CategoryId(i % c), f).unwrap();
    }
    let params =
        MlpParams::<f32>::init(MlpDims::with_default_hidden(d, 3), &mut seeded_rng(seed, 2))
            .unwrap();
    let ids: Vec<CategoryId> = (0..c).map(CategoryId).collect();
    let order: Vec<CategoryId> = perm.iter().map(|&i| CategoryId(i)).collect();
    let base = project_prototypes(&params, &bank, &ids).unwrap();
    let permuted = project_prototypes(&params, &bank, &order).unwrap();
    for (j, &i) in perm.iter().enumerate() {
        prop_assert_eq!(permuted.rows.row(j), base.rows.row(i));
    }
    prop_assert_eq!(permuted.category_ids, order);
    Ok(())
}

/// With both biases zero the MLP is positively homogeneous.
pub fn mlp_homogeneity(seed: u64, x: &[f64], alpha: f64) -> Check {
    let mut p =
        MlpParams::<f64>::init(MlpDims::with_default_hidden(x.len(), 4), &mut seeded_rng(seed, 2))
            .unwrap();
    p.b1_mut().fill(0.0);
    p.b2_mut().fill(0.0);
    let scaled: Vec<f64> = x.iter().map(|v| v * alpha).collect();
    let (a, b) = (mlp_forward(&p, &scaled).unwrap(), mlp_forward(&p, x).unwrap());
    for (u, v) in a.iter().zip(&b) {
        prop_assert!((u - alpha * v).abs() <= 1e-9 * (1.0 + (alpha * v).abs()));
    }
    Ok(())
}

pub fn logit_vector() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 1..12)
}

pub fn matrix(rows: std::ops::Range<usize>, cols: usize) -> impl Strategy<Value = Matrix<f64>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, cols), rows)
        .prop_map(|r| Matrix::from_rows(&r).unwrap())
}

/// `(proposals, prototypes, permutation)` with matching widths.
pub fn alignment_case() -> impl Strategy<Value = (Matrix<f64>, Matrix<f64>, Vec<usize>)> {
    (1usize..6, 1usize..7).prop_flat_map(|(d, c)| {
        (
            matrix(1..5, d),
            matrix(c..c + 1, d),
            Just((0..c).collect::<Vec<_>>()).prop_shuffle(),
        )
    })
}

fn runner(cases: u32, seed_name: &str) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut seed = [0u8; 32];
    for (s, b) in seed.iter_mut().zip(seed_name.bytes()) {
        *s = b;
    }
    TestRunner::new_with_rng(
        config,
        proptest::test_runner::TestRng::from_seed(proptest::test_runner::RngAlgorithm::ChaCha, &seed),
    )
}

fn named<T: std::fmt::Debug>(
    name: &str,
    r: Result<(), proptest::test_runner::TestError<T>>,
) -> Result<(), String> {
    r.map_err(|e| format!("{name}: {e}"))
}

/// The bank invariants, `cases` random sequences each.
pub fn bank_suite(cases: u32) -> Result<(), String> {
    named(
        "prefix fill",
        runner(cases, "prefix").run(&(policy(), insert_sequence()), |(p, (n, d, f))| {
            prefix_fill(p, n, d, &f)
        }),
    )?;
    named(
        "single-slot mutation",
        runner(cases, "single").run(&(policy(), labelled_sequence()), |(p, (n, d, f))| {
            single_slot_mutation(p, n, d, &f)
        }),
    )?;
    let scale_case = insert_sequence()
        .prop_flat_map(|(n, d, f)| (Just(n), Just(d), Just(f), feature(d), -20i32..20));
    named(
        "scale-invariant selection",
        runner(cases, "scale").run(&scale_case, |(n, d, f, probe, e)| {
            scale_invariant_selection(n, d, &f, &probe, e)
        }),
    )?;
    named(
        "fifo recency",
        runner(cases, "fifo").run(&insert_sequence(), |(n, d, f)| fifo_recency(n, d, &f)),
    )?;
    named(
        "merge norm bound",
        runner(cases, "norm").run(&insert_sequence(), |(n, d, f)| merge_norm_bound(n, d, &f)),
    )
}

/// Softmax and alignment contracts, `cases` random draws each.
pub fn alignment_suite(cases: u32) -> Result<(), String> {
    named(
        "softmax",
        runner(cases, "softmax").run(
            &(logit_vector(), 0.25f64..4.0, -100.0f64..100.0, 0.25f64..4.0),
            |(z, tau, shift, tau2)| softmax_contract(&z, tau, shift, tau2),
        ),
    )?;
    named(
        "permutation equivariance",
        runner(cases, "perm").run(&(alignment_case(), 0.25f64..4.0), |((q, p, perm), tau)| {
            permutation_equivariance(&q, &p, &perm, tau)
        }),
    )?;
    named(
        "appended row",
        runner(cases, "append").run(
            &(1usize..6).prop_flat_map(|d| {
                (matrix(1..4, d), matrix(1..5, d), prop::collection::vec(-3.0f64..3.0, d))
            }),
            |(q, p, extra)| appended_row_preserves_logits(&q, &p, &extra),
        ),
    )?;
    named(
        "projection equivariance",
        runner(cases, "project").run(
            &(2usize..6, 1usize..6).prop_flat_map(|(c, d)| {
                (
                    any::<u64>(),
                    Just(d),
                    prop::collection::vec(feature(d), c..3 * c),
                    Just((0..c).collect::<Vec<_>>()).prop_shuffle(),
                )
            }),
            |(seed, d, f, perm)| projection_equivariance(seed, d, &f, &perm),
        ),
    )
}

/// Exhaustive small softmax cases: every logit vector over {-2,...,2} of
/// length 1 to 4, at three temperatures and three shifts.
pub fn softmax_exhaustive() -> Result<usize, String> {
    let mut count = 0;
    for len in 1..=4u32 {
        for code in 0..5usize.pow(len) {
            let z: Vec<f64> = (0..len)
                .map(|i| (code / 5usize.pow(i) % 5) as f64 - 2.0)
                .collect();
            for tau in [0.5, 1.0, 2.0] {
                for shift in [-50.0, 0.0, 7.5] {
                    softmax_contract(&z, tau, shift, 1.0 / tau)
                        .map_err(|e| format!("softmax {z:?} tau {tau}: {e}"))?;
                    count += 1;
                }
            }
        }
    }
    Ok(count)
}

/// Every permutation of three and four prototypes on a fixed grid.
pub fn permutation_exhaustive() -> Result<usize, String> {
    let proposals = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.5, -0.5], [-1.0, 2.0]]).unwrap();
    let mut count = 0;
    for c in [3usize, 4] {
        let protos: Vec<[f64; 2]> = (0..c).map(|i| [i as f64 - 1.0, 1.0 - 0.5 * i as f64]).collect();
        let protos = Matrix::from_rows(&protos).unwrap();
        for perm in permutations(c) {
            permutation_equivariance(&proposals, &protos, &perm, 1.0)
                .map_err(|e| format!("permutation {perm:?}: {e}"))?;
            count += 1;
        }
    }
    Ok(count)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}
