use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use qacq::acquisition::AcqKind;
use qacq::harness::{emit_results, load_config, median_final_regret, run_trials, ParallelMode, RunConfig};
use qacq::maximize::{BudgetMode, MaximizerKind};
use qacq::tasks::TaskSpec;
use qacq::verification;

#[derive(Parser)]
#[command(name = "qacq", version, about = "Batch Bayesian optimization with Monte Carlo acquisition functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run benchmark trials and write a CSV plus a metadata sidecar.
    Run(RunArgs),
    /// Run the oracle checks; prints one JSON line per check.
    Verify {
        /// Run a single check (default: all).
        #[arg(long)]
        check: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MaximizerArg {
    Grad,
    Rs,
}

#[derive(Clone, Copy, ValueEnum)]
enum BudgetModeArg {
    Evals,
    Seconds,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// synthetic, branin, hartmann3, hartmann6 or levy.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    /// ei, pi, sr, ucb, es or kg.
    #[arg(long)]
    acq: Option<String>,
    #[arg(long, value_enum)]
    maximizer: Option<MaximizerArg>,
    /// greedy, joint or incremental.
    #[arg(long)]
    parallel_mode: Option<String>,
    #[arg(long)]
    inner_budget: Option<usize>,
    #[arg(long, value_enum)]
    budget_mode: Option<BudgetModeArg>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
}

fn build_config(args: &RunArgs) -> qacq::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => RunConfig::synthetic(args.dim.unwrap_or(2), args.q.unwrap_or(1), args.iters.unwrap_or(10)),
    };
    if let Some(t) = &args.task {
        cfg.task = TaskSpec::from_name(t)?;
        if let Some(d) = cfg.task.fixed_dim() {
            cfg.d = d;
        }
    }
    if let Some(d) = args.dim {
        cfg.d = d;
    }
    if let Some(q) = args.q {
        cfg.q = q;
    }
    if let Some(a) = &args.acq {
        cfg.acquisition.kind = a.parse::<AcqKind>()?;
    }
    if let Some(m) = args.maximizer {
        cfg.maximizer.kind = match m {
            MaximizerArg::Grad => MaximizerKind::GradAscent,
            MaximizerArg::Rs => MaximizerKind::RandomSearch,
        };
    }
    if let Some(p) = &args.parallel_mode {
        cfg.parallel_mode = p.parse::<ParallelMode>()?;
    }
    if let Some(n) = args.inner_budget {
        cfg.inner_budget.n = n;
    }
    if let Some(b) = args.budget_mode {
        cfg.inner_budget.mode = match b {
            BudgetModeArg::Evals => BudgetMode::Evals,
            BudgetModeArg::Seconds => BudgetMode::Seconds,
        };
    }
    if let Some(t) = args.trials {
        cfg.n_trials = t;
    }
    if let Some(i) = args.iters {
        cfg.n_iterations = i;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: &RunArgs) -> qacq::Result<bool> {
    let cfg = build_config(args)?;
    log::info!("config {}", cfg.hash());
    let records = run_trials(&cfg)?;
    emit_results(&records, &cfg, &args.out)?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    eprintln!(
        "{} trials written to {} (median final log10 regret {:.3}, {failed} failed)",
        records.len(),
        args.out.display(),
        median_final_regret(&records)
    );
    Ok(failed == 0)
}

fn verify(check: Option<&str>, seed: u64) -> qacq::Result<bool> {
    let reports = match check {
        Some(name) => verification::run_check(name, seed)?,
        None => verification::battery(seed)?,
    };
    for r in &reports {
        println!("{}", serde_json::to_string(r)?);
    }
    Ok(reports.iter().all(|r| r.pass))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => run(args),
        Command::Verify { check, seed } => verify(check.as_deref(), *seed),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
