mod common;

use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn fill_phase_is_a_prefix((p, (n, d, f)) in (policy(), insert_sequence())) {
        prefix_fill(p, n, d, &f)?;
    }

    #[test]
    fn inserts_touch_one_slot((p, (n, d, f)) in (policy(), labelled_sequence())) {
        single_slot_mutation(p, n, d, &f)?;
    }

    #[test]
    fn selection_ignores_scale(
        (n, d, f, probe, e) in insert_sequence()
            .prop_flat_map(|(n, d, f)| (Just(n), Just(d), Just(f), feature(d), -20i32..20))
    ) {
        scale_invariant_selection(n, d, &f, &probe, e)?;
    }

    #[test]
    fn fifo_keeps_the_most_recent((n, d, f) in insert_sequence()) {
        fifo_recency(n, d, &f)?;
    }

    #[test]
    fn merging_never_grows_past_the_inputs((n, d, f) in insert_sequence()) {
        merge_norm_bound(n, d, &f)?;
    }

    #[test]
    fn cosine_is_symmetric_bounded_and_scale_free(
        (a, b) in (1usize..16).prop_flat_map(|d| (feature(d), feature(d))),
        scale in 0.01f32..100.0,
    ) {
        cosine_contract(&a, &b, scale)?;
    }

    #[test]
    fn softmax_rows_are_distributions(
        z in logit_vector(),
        tau in 0.25f64..4.0,
        shift in -100.0f64..100.0,
        tau2 in 0.25f64..4.0,
    ) {
        softmax_contract(&z, tau, shift, tau2)?;
    }

    #[test]
    fn scores_follow_prototype_permutations(((q, p, perm), tau) in (alignment_case(), 0.25f64..4.0)) {
        permutation_equivariance(&q, &p, &perm, tau)?;
    }

    #[test]
    fn new_rows_leave_old_logits_alone(
        (q, p, extra) in (1usize..6).prop_flat_map(|d| {
            (matrix(1..4, d), matrix(1..5, d), prop::collection::vec(-3.0f64..3.0, d))
        })
    ) {
        appended_row_preserves_logits(&q, &p, &extra)?;
    }

    #[test]
    fn projection_commutes_with_reordering(
        (seed, d, f, perm) in (2usize..6, 1usize..6).prop_flat_map(|(c, d)| {
            (
                any::<u64>(),
                Just(d),
                prop::collection::vec(feature(d), c..3 * c),
                Just((0..c).collect::<Vec<_>>()).prop_shuffle(),
            )
        })
    ) {
        projection_equivariance(seed, d, &f, &perm)?;
    }

    #[test]
    fn mlp_is_positively_homogeneous_without_biases(
        seed in any::<u64>(),
        x in prop::collection::vec(-2.0f64..2.0, 1..10),
        alpha in 0.001f64..1000.0,
    ) {
        mlp_homogeneity(seed, &x, alpha)?;
    }
}

#[test]
fn exhaustive_small_cases() {
    softmax_exhaustive().unwrap();
    permutation_exhaustive().unwrap();
}
