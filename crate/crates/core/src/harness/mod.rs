//! Desk-scale experiments: prompt-budget sweep, update-policy ablation and
//! open-set insertion.
//!
//! Every experiment runs one cell per seed. Within a cell the world, the
//! trained MLP and the evaluation proposals are shared by all settings, so
//! settings differ only in the variable under test.

pub mod metrics;
pub mod report;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::bank::{CategoryId, UpdatePolicy, VisualBank};
use crate::error::{Error, Result};
use crate::fusion::MlpParams;
use crate::learner::{train_loop, TrainConfig};
use crate::synth::{generate_world, seeded_rng, PromptItem, Proposal, StreamPolicy, World, WorldSpec};

pub use metrics::{classification, evaluate, Classification, Metrics};
pub use report::{Aggregate, AuditEntry, PairedDifference, ReportRow, RunReport};

const EVAL_STREAM: u64 = 10;
const PROMPT_STREAM: u64 = 11;
const UNSEEN_PROMPT_STREAM: u64 = 12;
const UNSEEN_EVAL_STREAM: u64 = 13;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Proposals drawn for evaluation per seed.
    pub proposals: usize,
    /// Prompts inserted per category before a plain evaluation.
    pub prompts_per_category: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            proposals: 1000,
            prompts_per_category: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub budgets: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            budgets: vec![1, 5, 10, 20],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub stream: StreamPolicy,
    pub prompts_per_category: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            stream: StreamPolicy::CyclicViews { run_length: 10 },
            prompts_per_category: 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpensetConfig {
    /// The last `unseen` categories are held out of training.
    pub unseen: usize,
    pub prompts: usize,
}

impl Default for OpensetConfig {
    fn default() -> Self {
        Self {
            unseen: 2,
            prompts: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: WorldSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub ablation: AblationConfig,
    pub openset: OpensetConfig,
    /// First seed; cells use `seed, seed + 1, ..., seed + num_seeds - 1`.
    pub seed: u64,
    pub num_seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            world: WorldSpec::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
            ablation: AblationConfig::default(),
            openset: OpensetConfig::default(),
            seed: 0,
            num_seeds: 10,
        }
    }
}

impl RunConfig {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.num_seeds as u64).map(|i| self.seed + i).collect()
    }

    /// Structural checks; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        let counts = [
            ("train.epochs", self.train.epochs),
            ("train.episodes_per_epoch", self.train.episodes_per_epoch),
            ("train.prompts_per_episode", self.train.prompts_per_episode),
            ("train.proposals_per_episode", self.train.proposals_per_episode),
            ("train.slots", self.train.slots),
            ("eval.proposals", self.eval.proposals),
            ("num_seeds", self.num_seeds),
        ];
        for (path, v) in counts {
            if v == 0 {
                return Err(Error::config(path, "must be >= 1"));
            }
        }
        if self.train.hidden == Some(0) {
            return Err(Error::config("train.hidden", "must be >= 1"));
        }
        if !(self.train.temperature.is_finite() && self.train.temperature > 0.0) {
            return Err(Error::config("train.temperature", "must be > 0"));
        }
        let opt = &self.train.optimizer;
        if !(opt.learning_rate.is_finite() && opt.learning_rate >= 0.0) {
            return Err(Error::config("train.optimizer.learning_rate", "must be >= 0"));
        }
        if !(opt.weight_decay.is_finite() && opt.weight_decay >= 0.0) {
            return Err(Error::config("train.optimizer.weight_decay", "must be >= 0"));
        }
        for (path, b) in [("train.optimizer.beta1", opt.beta1), ("train.optimizer.beta2", opt.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(path, "must be in [0, 1)"));
            }
        }
        if !(opt.epsilon.is_finite() && opt.epsilon > 0.0) {
            return Err(Error::config("train.optimizer.epsilon", "must be > 0"));
        }
        if self.sweep.budgets.is_empty() {
            return Err(Error::config("sweep.budgets", "must not be empty"));
        }
        if self.sweep.budgets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::config("sweep.budgets", "must be sorted ascending"));
        }
        if let StreamPolicy::CyclicViews { run_length: 0 } = self.ablation.stream {
            return Err(Error::config("ablation.stream.run_length", "must be >= 1"));
        }
        if self.openset.unseen >= self.world.categories {
            return Err(Error::config(
                "openset.unseen",
                "must leave at least one seen category",
            ));
        }
        Ok(())
    }
}

fn all_ids(n: usize) -> Vec<CategoryId> {
    (0..n).map(CategoryId).collect()
}

/// The parts of a cell shared by every setting.
struct Cell {
    seed: u64,
    world: World,
    params: MlpParams<f32>,
    proposals: Vec<Proposal>,
}

fn prepare_cell(config: &RunConfig, seed: u64, trained: &[CategoryId]) -> Result<Cell> {
    let world = generate_world(&WorldSpec {
        seed,
        ..config.world.clone()
    })?;
    let params = train_loop(&world, &config.train, trained, seed)?.params;
    let (proposals, _) =
        world.sample_proposals(trained, config.eval.proposals, &mut seeded_rng(seed, EVAL_STREAM));
    Ok(Cell {
        seed,
        world,
        params,
        proposals,
    })
}

fn fill_bank(
    config: &RunConfig,
    categories: usize,
    policy: UpdatePolicy,
    items: &[PromptItem],
) -> Result<VisualBank> {
    let mut bank = VisualBank::new(categories, config.train.slots, config.world.prompt_dim, policy)?;
    for it in items {
        bank.insert(it.category, &it.feature)?;
    }
    Ok(bank)
}

fn record(
    report: &mut RunReport,
    setting: &str,
    cell: &Cell,
    metrics: &Metrics,
    prompts: &[PromptItem],
    proposals: &[Proposal],
) {
    report.rows.push(ReportRow {
        setting: setting.to_string(),
        seed: cell.seed,
        accuracy: metrics.accuracy(),
        per_class_acc: metrics.per_class_accuracy(),
        mean_ce: metrics.mean_ce,
    });
    report.audit.push(AuditEntry {
        setting: setting.to_string(),
        seed: cell.seed,
        prompt_hash: report::hash_prompts(prompts),
        proposal_hash: report::hash_proposals(proposals),
    });
}

/// Run `cell` for every seed on a small worker pool and concatenate the
/// partial reports in seed order, so output does not depend on scheduling.
fn per_seed<F>(config: &RunConfig, experiment: &str, cell: F) -> Result<RunReport>
where
    F: Fn(u64, &mut RunReport) -> Result<()> + Sync,
{
    let seeds = config.seeds();
    let slots: Vec<Mutex<Option<Result<RunReport>>>> = seeds.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(seeds.len());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = seeds.get(i) else { break };
                let mut part = RunReport::new(experiment);
                let outcome = cell(seed, &mut part).map(|()| part);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(outcome);
            });
        }
    });
    let mut report = RunReport::new(experiment);
    for slot in slots {
        let part = slot
            .into_inner()
            .unwrap_or_else(|e| e.into_inner())
            .expect("every seed ran")?;
        report.rows.extend(part.rows);
        report.audit.extend(part.audit);
    }
    Ok(report)
}

/// The bank a cell would evaluate with: `eval.prompts_per_category` shuffled
/// prompts per category of the seed's world, inserted under `policy`.
pub fn reference_bank(config: &RunConfig, seed: u64, policy: UpdatePolicy) -> Result<VisualBank> {
    config.validate()?;
    let world = generate_world(&WorldSpec {
        seed,
        ..config.world.clone()
    })?;
    let c = config.world.categories;
    let stream = world.make_stream(
        &all_ids(c),
        StreamPolicy::Shuffled,
        c * config.eval.prompts_per_category,
        seed,
        PROMPT_STREAM,
    );
    fill_bank(config, c, policy, &stream)
}

pub fn budget_setting(k: usize) -> String {
    format!("budget_{k}")
}

/// Train once per seed, then evaluate banks rebuilt from scratch with `k`
/// prompts per category for every budget `k`. Budgets share one stream: the
/// bank for `k` sees exactly the first `k` prompts of each category.
pub fn run_prompt_sweep(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let c = config.world.categories;
    let ids = all_ids(c);
    let max_budget = *config.sweep.budgets.last().unwrap();
    per_seed(config, "sweep", |seed, report| {
        let cell = prepare_cell(config, seed, &ids)?;
        let stream = cell
            .world
            .make_stream(&ids, StreamPolicy::Shuffled, c * max_budget, seed, PROMPT_STREAM);
        for &k in &config.sweep.budgets {
            let prompts = &stream[..c * k];
            let bank = fill_bank(config, c, UpdatePolicy::Averaging, prompts)?;
            let m = evaluate(&bank, &cell.params, &cell.proposals, config.train.temperature)?;
            record(report, &budget_setting(k), &cell, &m, prompts, &cell.proposals);
        }
        Ok(())
    })
}

/// Feed one drift stream to an averaging bank and a FIFO bank and score both
/// with the same trained MLP and proposals.
pub fn run_policy_ablation(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    if !matches!(config.ablation.stream, StreamPolicy::CyclicViews { .. }) {
        return Err(Error::config(
            "ablation.stream",
            "the policy ablation requires the cyclic_views stream",
        ));
    }
    let c = config.world.categories;
    let ids = all_ids(c);
    per_seed(config, "ablate", |seed, report| {
        let cell = prepare_cell(config, seed, &ids)?;
        let stream = cell.world.make_stream(
            &ids,
            config.ablation.stream,
            c * config.ablation.prompts_per_category,
            seed,
            PROMPT_STREAM,
        );
        for policy in [UpdatePolicy::Averaging, UpdatePolicy::Fifo] {
            let bank = fill_bank(config, c, policy, &stream)?;
            let m = evaluate(&bank, &cell.params, &cell.proposals, config.train.temperature)?;
            record(report, policy.name(), &cell, &m, &stream, &cell.proposals);
        }
        Ok(())
    })
}

pub const SEEN: &str = "seen";
pub const SEEN_WITH_UNSEEN: &str = "seen_with_unseen";
pub const UNSEEN: &str = "unseen";

/// Train on the seen categories only, then append the held-out categories
/// with `openset.prompts` prompts each and no parameter updates.
///
/// Rows: `seen` (seen proposals, seen rows only), `seen_with_unseen` (seen
/// proposals, all rows) and `unseen` (held-out proposals, all rows).
pub fn run_openset_eval(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let c = config.world.categories;
    let seen_count = c - config.openset.unseen;
    let seen = all_ids(seen_count);
    let unseen: Vec<CategoryId> = (seen_count..c).map(CategoryId).collect();
    let k = config.openset.prompts;
    per_seed(config, "openset", |seed, report| {
        let cell = prepare_cell(config, seed, &seen)?;
        let seen_prompts =
            cell.world
                .make_stream(&seen, StreamPolicy::Shuffled, seen_count * k, seed, PROMPT_STREAM);
        let mut bank = fill_bank(config, seen_count, UpdatePolicy::Averaging, &seen_prompts)?;
        let tau = config.train.temperature;
        let m = evaluate(&bank, &cell.params, &cell.proposals, tau)?;
        record(report, SEEN, &cell, &m, &seen_prompts, &cell.proposals);

        for &u in &unseen {
            let id = bank.add_category();
            debug_assert_eq!(id, u);
        }
        let unseen_prompts = cell.world.make_stream(
            &unseen,
            StreamPolicy::Shuffled,
            unseen.len() * k,
            seed,
            UNSEEN_PROMPT_STREAM,
        );
        for it in &unseen_prompts {
            bank.insert(it.category, &it.feature)?;
        }
        let m = evaluate(&bank, &cell.params, &cell.proposals, tau)?;
        record(report, SEEN_WITH_UNSEEN, &cell, &m, &seen_prompts, &cell.proposals);

        let (held_out, _) = cell.world.sample_proposals(
            &unseen,
            config.eval.proposals,
            &mut seeded_rng(seed, UNSEEN_EVAL_STREAM),
        );
        let m = evaluate(&bank, &cell.params, &held_out, tau)?;
        record(report, UNSEEN, &cell, &m, &unseen_prompts, &held_out);
        Ok(())
    })
}

/// Plain evaluation: train, fill with `eval.prompts_per_category` prompts
/// per category, evaluate.
pub fn run_plain_eval(config: &RunConfig) -> Result<RunReport> {
    let mut sweep = config.clone();
    sweep.sweep.budgets = vec![config.eval.prompts_per_category];
    let mut report = run_prompt_sweep(&sweep)?;
    report.experiment = "eval".into();
    Ok(report)
}
