use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::error;

use mimo_jcd::estimation::EstimatorId;
use mimo_jcd::harness::{emit_results, flop_count, run_experiment, summarize, version_string, ExperimentSpec, RunManifest};
use mimo_jcd::jcd::EstimatorKind;
use mimo_jcd::selftest::run_selftest;

#[derive(Parser)]
#[command(version, about = "MIMO-OFDM joint channel estimation and detection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment described by a TOML file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        estimator: Option<EstimatorKind>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        coded: bool,
    },
    /// Analytical multiply-add counts per estimator.
    Flops {
        #[arg(long)]
        nr: usize,
        #[arg(long)]
        nt: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        p: usize,
    },
    /// Run the built-in oracle checks.
    Selftest,
}

fn simulate(
    config: PathBuf,
    out: Option<PathBuf>,
    trials: Option<usize>,
    seed: Option<u64>,
    estimator: Option<EstimatorKind>,
    layers: Option<usize>,
    coded: bool,
) -> mimo_jcd::Result<bool> {
    let mut spec = ExperimentSpec::from_file(&config)?;
    if let Some(t) = trials {
        spec.trials = t;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(e) = estimator {
        spec.jcd.estimator = e;
    }
    if let Some(l) = layers {
        spec.jcd.layers = l;
    }
    spec.system.coded |= coded;
    spec.validate()?;
    let dir = out.or_else(|| spec.output.clone()).unwrap_or_else(|| PathBuf::from("results"));
    let start = Instant::now();
    let run = run_experiment(&spec)?;
    let manifest = RunManifest {
        version: version_string(),
        spec,
        wall_time_s: start.elapsed().as_secs_f64(),
        records: run.records.len(),
        failures: run.failures.iter().map(|e| e.to_string()).collect(),
    };
    if !run.records.is_empty() {
        let (csv, json) = emit_results(&run.records, &manifest, &dir)?;
        println!("wrote {} and {}", csv.display(), json.display());
    }
    println!("{:>8} {:>5} {:>14} {:>12} {:>12} {:>10}", "snr_db", "layer", "estimator", "mse", "ber", "bits");
    for r in summarize(&run.records) {
        println!(
            "{:>8.2} {:>5} {:>14} {:>12.4e} {:>12.4e} {:>10}",
            r.snr_db, r.layer, r.estimator, r.mse, r.ber, r.bit_count
        );
    }
    for f in &run.failures {
        error!("{f}");
    }
    Ok(run.failures.is_empty())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let ok = match cli.command {
        Command::Simulate {
            config,
            out,
            trials,
            seed,
            estimator,
            layers,
            coded,
        } => simulate(config, out, trials, seed, estimator, layers, coded),
        Command::Flops { nr, nt, k, p } => {
            if p == 0 || p >= k || nr == 0 || nt == 0 {
                error!("need nr, nt >= 1 and 0 < p < k");
                return ExitCode::from(2);
            }
            for id in [EstimatorId::Lmmse, EstimatorId::Mjcd, EstimatorId::Ojcd] {
                println!("{:<6} {}", id.as_str(), flop_count(id, nr, nt, k, p));
            }
            Ok(true)
        }
        Command::Selftest => {
            let results = run_selftest();
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            Ok(results.iter().all(|r| r.passed))
        }
    };
    match ok {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
