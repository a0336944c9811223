use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use czvar_harness::{
    emit_report, read_report, run_with_threads, Experiment, ExperimentConfig, ExperimentReport, Format,
};

#[derive(Parser)]
#[command(version, about = "Run variational singular-integral experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output`
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Number of grid doublings in the refinement table
    #[arg(long)]
    grid_doubling: Option<u32>,
}

#[derive(Subcommand)]
enum Command {
    VerifyKernel(RunArgs),
    JumpDyadic(RunArgs),
    JumpFull(RunArgs),
    Variation(RunArgs),
    ShortVariation(RunArgs),
    MollifierJump(RunArgs),
    OpnormSurface(RunArgs),
    /// Print the criteria of an existing report.json
    Report {
        path: PathBuf,
    },
}

fn print_criteria(report: &ExperimentReport) {
    println!("{} [{}] config {}", report.experiment, report.kernel, report.provenance.config_hash);
    for c in &report.criteria {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
}

fn execute(experiment: Experiment, args: RunArgs) -> czvar_harness::Result<bool> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(d) = args.grid_doubling {
        cfg.refinement.grid_doublings = d;
    }
    if let Some(out) = args.out {
        cfg.output = out;
    }
    let outcome = run_with_threads(experiment, &cfg, args.threads.max(1))?;
    emit_report(&outcome, &cfg.output, &[Format::Json, Format::Csv])?;
    print_criteria(&outcome.report);
    Ok(outcome.report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::VerifyKernel(a) => execute(Experiment::VerifyKernel, a),
        Command::JumpDyadic(a) => execute(Experiment::JumpDyadic, a),
        Command::JumpFull(a) => execute(Experiment::JumpFull, a),
        Command::Variation(a) => execute(Experiment::Variation, a),
        Command::ShortVariation(a) => execute(Experiment::ShortVariation, a),
        Command::MollifierJump(a) => execute(Experiment::MollifierJump, a),
        Command::OpnormSurface(a) => execute(Experiment::OpnormSurface, a),
        Command::Report { path } => read_report(&path).map(|r| {
            print_criteria(&r);
            r.passed
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
