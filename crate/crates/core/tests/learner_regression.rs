//! Pinned training outcome on the default world.

use vbank::harness::RunConfig;
use vbank::learner::train_loop;
use vbank::synth::{generate_world, WorldSpec};
use vbank::CategoryId;

#[test]
fn default_training_reaches_pinned_accuracy() {
    let config = RunConfig::default();
    let mut finals = Vec::new();
    for seed in 0..10 {
        let world = generate_world(&WorldSpec {
            seed,
            ..config.world.clone()
        })
        .unwrap();
        let ids: Vec<CategoryId> = (0..world.num_categories()).map(CategoryId).collect();
        let outcome = train_loop(&world, &config.train, &ids, seed).unwrap();
        let (first, last) = (&outcome.curve[0], outcome.curve.last().unwrap());
        assert_eq!(outcome.curve.len(), config.train.epochs);
        assert!(
            last.loss.mean_ce < first.loss.mean_ce,
            "seed {seed}: loss {} -> {}",
            first.loss.mean_ce,
            last.loss.mean_ce
        );
        finals.push(last.loss.correct_fraction);
    }
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    assert!(mean >= 0.9, "mean final correct fraction {mean:.4} ({finals:?})");
}
