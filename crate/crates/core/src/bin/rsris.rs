use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rsris::config::validate_config;
use rsris::experiment::{run_experiment, write_outputs};

/// Monte-Carlo experiments for rate splitting with RIS under I/Q imbalance.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `run.out_dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Number of Monte-Carlo trials; overrides `run.trials`.
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed; overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores); overrides `run.threads`.
    #[arg(long)]
    threads: Option<usize>,
    /// Run only schemes whose label contains this string.
    #[arg(long)]
    scheme_filter: Option<String>,
}

fn run(args: Args) -> rsris::Result<()> {
    let mut cfg = validate_config(&args.config)?;
    if let Some(d) = args.out_dir {
        cfg.run.out_dir = d;
    }
    if let Some(t) = args.trials {
        cfg.run.trials = t;
    }
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    if let Some(t) = args.threads {
        cfg.run.threads = t;
    }
    if args.scheme_filter.is_some() {
        cfg.schemes.filter = args.scheme_filter;
    }
    cfg.validate()?;
    log::info!(
        "{} schemes x {} sweep points x {} trials",
        cfg.schemes.variants().len(),
        cfg.sweep.values.len(),
        cfg.run.trials
    );
    let result = run_experiment(&cfg)?;
    write_outputs(&cfg, &result, &cfg.run.out_dir)?;
    for row in &result.table.rows {
        println!(
            "{:<28} {:>8} mean {:.6} stderr {:.6} n {}/{}",
            row.scheme, row.sweep_value, row.mean, row.stderr, row.n, row.trials
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
