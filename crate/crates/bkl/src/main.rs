//! `bkl`: run one experiment described by a JSON spec and write its CSV and
//! JSON summary. The subcommand names the experiment and must agree with the
//! spec's `kind` (the `run` subcommand takes whatever the spec says).

use bkl::error::{BklError, Result};
use bkl::harness::config::{ExperimentKind, ExperimentSpec};
use bkl::harness::runner;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "bkl",
    about = "Simulation laboratory for subcritical branching Lévy processes killed at the origin",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment spec.
    #[arg(long)]
    config: PathBuf,
    /// Override the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the spec's `out`; default ".").
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results are identical for any
    /// worker count.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Offspring-law tables: m, alpha, C_sub, generating functionals, g(t).
    Law(RunArgs),
    /// Motion tables: moments, Laplace exponent, tilt rates.
    Model(RunArgs),
    /// Scale function W^(q) on an x-grid.
    Scale(RunArgs),
    /// Discounted two-sided exit Monte Carlo against the scale-function ratio.
    Exit(RunArgs),
    /// Renewal function estimates for a zero-mean motion.
    Renewal(RunArgs),
    /// Conditioned-limit checks for the killed path (zero or negative mean).
    Cond(RunArgs),
    /// Raw per-tree trajectory records.
    Sim(RunArgs),
    /// Tree survival probabilities over a t-grid, with the limit prediction.
    Survival(RunArgs),
    /// Maximum-displacement tail over (t, y) grids, with limit predictions.
    MtTail(RunArgs),
    /// All-time maximum tail over a y-grid, with the decay-rate interval.
    Alltime(RunArgs),
    /// Conditioned maximum samples at one time, with the limit CDF.
    Yaglom(RunArgs),
    /// Weighted-path representation of the tail on an (x, t) grid.
    Fk(RunArgs),
    /// All-time decay constants as JSON and CSV.
    Constants(RunArgs),
    /// Survival / threshold / all-time limit predictions.
    Predict(RunArgs),
    /// Run whatever experiment the spec's `kind` names.
    Run(RunArgs),
}

impl Cmd {
    fn split(&self) -> (Option<ExperimentKind>, &RunArgs) {
        match self {
            Cmd::Law(a) => (Some(ExperimentKind::Law), a),
            Cmd::Model(a) => (Some(ExperimentKind::Model), a),
            Cmd::Scale(a) => (Some(ExperimentKind::Scale), a),
            Cmd::Exit(a) => (Some(ExperimentKind::Exit), a),
            Cmd::Renewal(a) => (Some(ExperimentKind::Renewal), a),
            Cmd::Cond(a) => (Some(ExperimentKind::Cond), a),
            Cmd::Sim(a) => (Some(ExperimentKind::Sim), a),
            Cmd::Survival(a) => (Some(ExperimentKind::Survival), a),
            Cmd::MtTail(a) => (Some(ExperimentKind::MtTail), a),
            Cmd::Alltime(a) => (Some(ExperimentKind::Alltime), a),
            Cmd::Yaglom(a) => (Some(ExperimentKind::Yaglom), a),
            Cmd::Fk(a) => (Some(ExperimentKind::Fk), a),
            Cmd::Constants(a) => (Some(ExperimentKind::Constants), a),
            Cmd::Predict(a) => (Some(ExperimentKind::Predict), a),
            Cmd::Run(a) => (None, a),
        }
    }
}

fn execute(cli: &Cli) -> Result<runner::RunReport> {
    let (expected, args) = cli.cmd.split();
    if let Some(k) = args.workers {
        if k == 0 {
            return Err(BklError::config("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| BklError::config(format!("worker pool: {e}")))?;
    }
    let mut spec = ExperimentSpec::load(&args.config)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(expected) = expected {
        if spec.kind != expected {
            return Err(BklError::config(format!(
                "config kind \"{}\" does not match subcommand \"{expected}\"; \
                 use `bkl run` to dispatch on the spec",
                spec.kind
            )));
        }
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| spec.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    runner::run(&spec, &out_dir)
}

fn main() {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(report) => {
            if let Some(echo) = &report.echo {
                print!("{echo}");
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!(
                "wrote {} ({} rows) and {} [spec {}]",
                report.csv_path.display(),
                report.n_rows,
                report.summary_path.display(),
                report.spec_hash
            );
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
