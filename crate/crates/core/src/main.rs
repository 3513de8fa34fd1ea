//! Command-line entry point. Exit codes: 0 success, 2 configuration
//! error, 3 I/O error. The `NMSMC_SEED` environment variable overrides
//! the scenario seed.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nmsmc::fom::{impedance, BatteryTheta};
use nmsmc::pmmh::{battery_loglik_estimator, select_num_particles};
use nmsmc::scenario::{self, Scenario};
use nmsmc::smc::{FilterConfig, Resampling};
use nmsmc::Error;

#[derive(Parser)]
#[command(name = "nmsmc", version, about = "Bayesian inference for fractional-order battery models via particle MCMC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario's synthetic dataset without running inference.
    Simulate {
        /// Built-in scenario name or path to a scenario JSON file.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the full study: dataset, tuned PMMH chains, KDEs, summary.
    Infer {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        /// Full study size (M = 20,000 and 5 chains) instead of the
        /// desk-scale defaults (M = 2,000 and 3 chains).
        #[arg(long)]
        paper_scale: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Cap on concurrent worker threads.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Choose the particle count by the conditional acceptance rate.
    SelectN {
        #[arg(long, default_value = "base")]
        scenario: String,
        /// Comma-separated candidate particle counts.
        #[arg(long, value_delimiter = ',', default_value = "16,64,128")]
        candidates: Vec<usize>,
        #[arg(long, default_value_t = 0.1)]
        threshold: f64,
        /// Filter repetitions per (N, theta) pair.
        #[arg(long, default_value_t = 100)]
        reps: usize,
        /// Prior draws probed per candidate.
        #[arg(long, default_value_t = 3)]
        n_theta: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Summarize previously written chain CSVs.
    Summarize {
        /// Directory containing chain_*.csv (and optionally scenario.json
        /// for the prior-overlap scores).
        #[arg(long)]
        chains: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        burn_in: f64,
    },
    /// Impedance frequency response as CSV `f,re,im,mag,phase`.
    Impedance {
        /// JSON file with the parameter vector; defaults to the
        /// reference parameters when omitted.
        #[arg(long)]
        theta: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        fmin: f64,
        #[arg(long, default_value_t = 2e3)]
        fmax: f64,
        #[arg(long, default_value_t = 200)]
        points: usize,
    },
    /// List the built-in scenarios.
    ListScenarios,
}

fn apply_seed_overrides(scenario: &mut Scenario, cli_seed: Option<u64>) -> Result<(), Error> {
    if let Ok(v) = std::env::var("NMSMC_SEED") {
        scenario.seed = v
            .parse()
            .map_err(|e| Error::config(format!("NMSMC_SEED must be an integer: {e}")))?;
    }
    if let Some(s) = cli_seed {
        scenario.seed = s;
    }
    Ok(())
}

fn set_jobs(jobs: Option<usize>) -> Result<(), Error> {
    if let Some(j) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Writes a line to stdout; a closed pipe (e.g. `| head`) reports
/// `false` so the caller can stop emitting instead of panicking.
fn emit(args: std::fmt::Arguments) -> Result<bool, Error> {
    let mut out = std::io::stdout().lock();
    match out.write_fmt(args).and_then(|()| out.write_all(b"\n")) {
        Ok(()) => Ok(true),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(false),
        Err(e) => Err(Error::io("stdout", e)),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { scenario, out, seed } => {
            let mut sc = scenario::resolve_scenario(&scenario)?;
            apply_seed_overrides(&mut sc, seed)?;
            sc.validate()?;
            scenario::write_dataset(&sc, &out)?;
            println!("wrote dataset for scenario `{}` to {}", sc.name, out.display());
        }
        Command::Infer { scenario, out, paper_scale, seed, jobs } => {
            set_jobs(jobs)?;
            let mut sc = scenario::resolve_scenario(&scenario)?;
            if paper_scale {
                sc.paper_scale();
            }
            apply_seed_overrides(&mut sc, seed)?;
            scenario::run_scenario(&sc, &out)?;
            println!(
                "scenario `{}`: {} chains of {} iterations written to {}",
                sc.name,
                sc.n_chains,
                sc.iterations,
                out.display()
            );
        }
        Command::SelectN { scenario, candidates, threshold, reps, n_theta, seed, jobs } => {
            set_jobs(jobs)?;
            let mut sc = scenario::resolve_scenario(&scenario)?;
            apply_seed_overrides(&mut sc, seed)?;
            sc.validate()?;
            let (_, data) = sc.simulate()?;
            let prior = sc.prior();
            let template = FilterConfig {
                n_particles: 1,
                proposal: sc.proposal,
                resampling: Resampling::Systematic,
                seed: 0,
            };
            let (chosen, report) = select_num_particles(
                &prior,
                |n, theta, filter_seed| {
                    let cfg = FilterConfig { n_particles: n, ..template.clone() };
                    let est = battery_loglik_estimator(&data, sc.ts, sc.sigma_x, sc.sigma_y, &cfg);
                    est(theta, filter_seed)
                },
                &candidates,
                reps,
                n_theta,
                threshold,
                sc.seed,
            )?;
            for (n, acc) in candidates.iter().zip(&report.mean_acceptance) {
                println!("N = {n:>6}: mean conditional acceptance {acc:.3}");
            }
            if report.threshold_unmet {
                println!("no candidate reached threshold {threshold}; largest returned");
            }
            println!("chosen N = {chosen}");
        }
        Command::Summarize { chains, burn_in } => {
            let mut chain_files: Vec<_> = std::fs::read_dir(&chains)
                .map_err(|e| Error::io(&chains, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("chain_") && n.ends_with(".csv"))
                })
                .collect();
            chain_files.sort();
            if chain_files.is_empty() {
                return Err(Error::config(format!(
                    "no chain_*.csv files in {}",
                    chains.display()
                )));
            }
            let parsed: Vec<_> = chain_files
                .iter()
                .map(|p| scenario::read_chain_csv(p))
                .collect::<Result<_, _>>()?;
            let scenario_path = chains.join("scenario.json");
            let summary = if scenario_path.exists() {
                let sc: Scenario = serde_json::from_str(
                    &std::fs::read_to_string(&scenario_path)
                        .map_err(|e| Error::io(&scenario_path, e))?,
                )?;
                scenario::pooled_summary(&parsed, burn_in, &sc.prior(), 512)?
            } else {
                // no prior available: skip the overlap column
                let prior = nmsmc::pmmh::Prior::battery(nmsmc::pmmh::PriorKind::Uniform);
                let mut s = scenario::pooled_summary(&parsed, burn_in, &prior, 512)?;
                for p in &mut s.parameters {
                    p.overlap = None;
                }
                s
            };
            emit(format_args!("{}", serde_json::to_string_pretty(&summary)?))?;
        }
        Command::Impedance { theta, fmin, fmax, points } => {
            let theta = match theta {
                Some(path) => {
                    let text =
                        std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    let t: BatteryTheta = serde_json::from_str(&text)?;
                    t.validate()?;
                    t
                }
                None => BatteryTheta::reference(),
            };
            if !(fmin > 0.0 && fmax > fmin && points >= 2) {
                return Err(Error::config("need 0 < fmin < fmax and points >= 2"));
            }
            if !emit(format_args!("f,re,im,mag,phase"))? {
                return Ok(());
            }
            let ratio = (fmax / fmin).ln() / (points - 1) as f64;
            for i in 0..points {
                let f = fmin * (ratio * i as f64).exp();
                let z = impedance(&theta, 2.0 * std::f64::consts::PI * f);
                let more = emit(format_args!(
                    "{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
                    f,
                    z.re,
                    z.im,
                    z.norm(),
                    z.arg().to_degrees()
                ))?;
                if !more {
                    return Ok(());
                }
            }
        }
        Command::ListScenarios => {
            for (name, desc) in scenario::list_scenarios() {
                if !emit(format_args!("{name:<12} {desc}"))? {
                    break;
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
