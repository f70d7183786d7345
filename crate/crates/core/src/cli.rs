//! The `vbank` command line.
//!
//! Exit status is 0 on success, 1 when the invocation or the config is
//! invalid and 2 when a run fails.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bank::{oracle::random_equivalence, CategoryId, UpdatePolicy, VisualBank};
use crate::error::{Error, Result};
use crate::harness::{
    budget_setting, reference_bank, run_openset_eval, run_policy_ablation, run_prompt_sweep,
    PairedDifference, RunConfig, RunReport, SEEN, SEEN_WITH_UNSEEN,
};
use crate::io;
use crate::learner::{gradcheck_cases, run_gradcheck_case, train_loop};
use crate::synth::{generate_world, seeded_rng, WorldSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_FAILED: i32 = 2;

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "vbank", version, about = "Visual prompt bank experiments")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// JSON run config; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed base, overriding the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    Averaging,
    Fifo,
}

impl From<PolicyArg> for UpdatePolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Averaging => UpdatePolicy::Averaging,
            PolicyArg::Fifo => UpdatePolicy::Fifo,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the projection MLP on every category; writes curve.csv and params.vmlp.
    Train,
    /// Prompt-budget sweep; writes report.csv and summary.json.
    Sweep,
    /// Averaging versus FIFO on the drift stream.
    Ablate,
    /// Held-out categories inserted at test time.
    Openset,
    /// Fill a bank from the seed's world and write it in the binary format.
    BankExport {
        #[arg(long, value_enum, default_value = "averaging")]
        policy: PolicyArg,
        /// Destination file; defaults to `<out>/bank.vbnk`.
        #[arg(long)]
        path: Option<PathBuf>,
    },
    /// Read a bank file and write its shape and occupancy as JSON.
    BankImport { path: PathBuf },
    /// Finite-difference check of the analytic gradient on five shapes.
    Gradcheck,
    /// Bank-versus-oracle equivalence and the gradient check.
    Selftest,
}

/// Parse `args` (including the program name) and run. Output goes to
/// `stdout`/`stderr`; the return value is the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(rendered.as_bytes());
            return code;
        }
    };
    match dispatch(&cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_validation() {
                EXIT_INVALID
            } else {
                EXIT_FAILED
            }
        }
    }
}

fn load(global: &GlobalArgs) -> Result<RunConfig> {
    let mut config = match &global.config {
        Some(path) => io::load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn emit(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<()> {
    out.write_fmt(line)
        .and_then(|()| out.write_all(b"\n"))
        .map_err(|e| Error::io("<stdout>", e))
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Train => train(&load(g)?, &g.out, out),
        Command::Sweep => {
            let config = load(g)?;
            let report = run_prompt_sweep(&config)?;
            let b = &config.sweep.budgets;
            let paired = if b.len() >= 2 {
                vec![report.paired_difference(&budget_setting(b[b.len() - 1]), &budget_setting(b[0]))]
            } else {
                Vec::new()
            };
            finish(&report, &config, paired, &g.out, out)
        }
        Command::Ablate => {
            let config = load(g)?;
            let report = run_policy_ablation(&config)?;
            let paired = vec![report.paired_difference("averaging", "fifo")];
            finish(&report, &config, paired, &g.out, out)
        }
        Command::Openset => {
            let config = load(g)?;
            let report = run_openset_eval(&config)?;
            let paired = vec![report.paired_difference(SEEN_WITH_UNSEEN, SEEN)];
            finish(&report, &config, paired, &g.out, out)
        }
        Command::BankExport { policy, path } => {
            let config = load(g)?;
            let bank = reference_bank(&config, config.seed, (*policy).into())?;
            let path = match path {
                Some(p) => p.clone(),
                None => {
                    io::ensure_dir(&g.out)?;
                    g.out.join("bank.vbnk")
                }
            };
            io::bank_export(&bank, &path)?;
            emit(out, format_args!("wrote {}", path.display()))
        }
        Command::BankImport { path } => {
            let bank = io::bank_import(path)?;
            let json = bank_json(&bank)?;
            io::ensure_dir(&g.out)?;
            let dest = g.out.join("bank.json");
            std::fs::write(&dest, &json).map_err(|e| Error::io(&dest, e))?;
            emit(out, format_args!("{json}"))
        }
        Command::Gradcheck => gradcheck(load(g)?.seed, out),
        Command::Selftest => {
            let seed = load(g)?.seed;
            let mismatches = random_equivalence(&mut seeded_rng(seed, 20), 2_000)?.mismatches;
            emit(out, format_args!("oracle equivalence: {mismatches} mismatches in 2000 draws"))?;
            if mismatches > 0 {
                return Err(Error::CheckFailed("bank update disagrees with the oracle".into()));
            }
            gradcheck(seed, out)?;
            emit(out, format_args!("PASS"))
        }
    }
}

fn finish(
    report: &RunReport,
    config: &RunConfig,
    paired: Vec<PairedDifference>,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    for a in report.aggregates() {
        emit(
            out,
            format_args!(
                "{:<18} acc {:.4} ± {:.4}  per-class {:.4}  ce {:.4}",
                a.setting, a.mean_accuracy, a.std_accuracy, a.mean_per_class_acc, a.mean_ce
            ),
        )?;
    }
    for d in &paired {
        emit(
            out,
            format_args!(
                "{} - {}: {:+.4} (95% CI {:+.4} .. {:+.4}), positive in {}/{}",
                d.minuend,
                d.subtrahend,
                d.mean,
                d.ci95.0,
                d.ci95.1,
                d.positive,
                d.differences.len()
            ),
        )?;
    }
    io::write_report(dir, report, config, paired)?;
    emit(out, format_args!("wrote {}", dir.join("report.csv").display()))
}

fn train(config: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<()> {
    config.validate()?;
    let world = generate_world(&WorldSpec {
        seed: config.seed,
        ..config.world.clone()
    })?;
    let ids: Vec<CategoryId> = (0..world.num_categories()).map(CategoryId).collect();
    let outcome = train_loop(&world, &config.train, &ids, config.seed)?;
    io::ensure_dir(dir)?;
    io::write_curve(&dir.join("curve.csv"), &outcome.curve)?;
    io::write_params(&dir.join("params.vmlp"), &outcome.params)?;
    if let Some(last) = outcome.curve.last() {
        emit(
            out,
            format_args!(
                "epoch {}: mean_ce {:.4}, correct_fraction {:.4}",
                last.epoch, last.loss.mean_ce, last.loss.correct_fraction
            ),
        )?;
    }
    emit(out, format_args!("wrote {}", dir.join("params.vmlp").display()))
}

fn gradcheck(seed: u64, out: &mut dyn Write) -> Result<()> {
    let mut worst = 0.0f64;
    for case in gradcheck_cases() {
        let gap = run_gradcheck_case(case, seed)?;
        worst = worst.max(gap);
        let d = case.dims;
        emit(
            out,
            format_args!(
                "d={:<3} h={:<3} D={:<3} C={:<3} q={:<3} max relative gap {gap:.3e}",
                d.input, d.hidden, d.output, case.categories, case.queries
            ),
        )?;
    }
    if worst < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(Error::CheckFailed(format!(
            "gradient check gap {worst:.3e} exceeds {GRADCHECK_TOLERANCE:e}"
        )))
    }
}

fn bank_json(bank: &VisualBank) -> Result<String> {
    let occupancy: Vec<usize> = bank
        .category_ids()
        .map(|id| bank.occupancy(id))
        .collect::<Result<_>>()?;
    let value = serde_json::json!({
        "categories": bank.num_categories(),
        "slots_per_category": bank.slots_per_category(),
        "dim": bank.dim(),
        "policy": bank.policy(),
        "occupancy": occupancy,
    });
    Ok(serde_json::to_string_pretty(&value).expect("plain JSON value"))
}
