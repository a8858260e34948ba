use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nbiot_noma::baselines::grid_power_oracle;
use nbiot_noma::harness::{
    emit_csv, run_experiment, self_check, summarize, ExperimentSpec, Scheme, SweepVar, TrialResult,
};
use nbiot_noma::power_opt::{constraint_violation, solve, OrderedCluster};
use nbiot_noma::scenario::ScenarioConfig;
use nbiot_noma::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

/// NOMA clustering, allocation and power control for an NB-IoT uplink cell.
#[derive(Parser)]
#[command(name = "nbiot-noma", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Paired trials on the cell described by the config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Paired trials over a list of values of one variable.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// total_devices, k_max or threshold_scale.
        #[arg(long)]
        var: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// mMTC devices per URLLC device when sweeping total_devices.
        #[arg(long, default_value_t = 3.0)]
        ratio: f64,
        /// Fixed cluster count; by default ceil((U+M)/k_max).
        #[arg(long)]
        clusters: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Oracle and invariant checks on tiny instances.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Solves one cluster's power problem and compares with the grid oracle.
    SolvePower {
        /// Normalised gains, ascending, 1/W.
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        /// Rate thresholds, bps.
        #[arg(long, value_delimiter = ',', required = true)]
        thresholds: Vec<f64>,
        /// Cluster power budget, W.
        #[arg(long)]
        pmax: f64,
        /// Bandwidth factor, Hz.
        #[arg(long, default_value_t = 3750.0)]
        bandwidth: f64,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Master seed; defaults to the config's rng_seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',', default_value = "noma,ofdma,fast_ofdm")]
    schemes: Vec<String>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Record per-scheme wall-clock time in runtime_s.
    #[arg(long)]
    timing: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::ConfigParse { .. } => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn load(config: Option<&PathBuf>) -> Result<ScenarioConfig, Error> {
    match config {
        Some(p) => ScenarioConfig::from_file(p),
        None => Ok(ScenarioConfig::default()),
    }
}

fn print_summary(results: &[TrialResult]) {
    let failed: Vec<&TrialResult> = results.iter().filter(|r| r.error.is_some()).collect();
    for r in &failed {
        eprintln!(
            "warning: trial seed {} scheme {} at {} failed: {}",
            r.seed,
            r.scheme,
            r.sweep_value,
            r.error.as_deref().unwrap_or("")
        );
    }
    println!("scheme     value      trials  sum_rate_bps (95% CI)        fairness          satisfied");
    for c in summarize(results) {
        let ci = |m: nbiot_noma::harness::Metric| match m.half_width {
            Some(h) => format!("{:.4} ± {:.4}", m.mean, h),
            None => format!("{:.4}", m.mean),
        };
        println!(
            "{:<10} {:<10} {:<7} {:<28} {:<17} {}",
            c.scheme.name(),
            c.sweep_value,
            c.trials,
            ci(c.sum_rate),
            ci(c.fairness),
            ci(c.satisfied_count)
        );
    }
}

fn experiment(spec: ExperimentSpec, out: &Path) -> Result<(), Error> {
    let results = run_experiment(&spec)?;
    emit_csv(&results, out)?;
    print_summary(&results);
    Ok(())
}

fn spec_from(base: ScenarioConfig, common: &Common) -> Result<ExperimentSpec, Error> {
    let schemes = common
        .schemes
        .iter()
        .map(|s| s.parse::<Scheme>())
        .collect::<Result<Vec<_>, _>>()?;
    let mut base = base;
    if let Some(seed) = common.seed {
        base.rng_seed = seed;
    }
    Ok(ExperimentSpec {
        base,
        trials: common.trials,
        schemes,
        workers: common.workers,
        timing: common.timing,
        output: Some(common.out.clone()),
        ..ExperimentSpec::default()
    })
}

fn dispatch(command: Command) -> Result<u8, Error> {
    match command {
        Command::Run { config, common } => {
            let base = load(Some(&config))?;
            // The config's own layout, reported under its k_max.
            let spec = ExperimentSpec {
                sweep_var: SweepVar::KMax,
                sweep_values: vec![base.max_rank as f64],
                num_clusters: Some(base.num_clusters),
                ..spec_from(base, &common)?
            };
            experiment(spec, &common.out)?;
        }
        Command::Sweep {
            config,
            var,
            values,
            ratio,
            clusters,
            common,
        } => {
            let spec = ExperimentSpec {
                sweep_var: var.parse()?,
                sweep_values: values,
                mmtc_to_urllc_ratio: ratio,
                num_clusters: clusters,
                ..spec_from(load(config.as_ref())?, &common)?
            };
            experiment(spec, &common.out)?;
        }
        Command::Validate {
            config,
            instances,
            seed,
        } => {
            let base = load(config.as_ref())?;
            let checks = self_check(&base, instances, seed);
            let mut ok = true;
            for c in &checks {
                println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            if !ok {
                return Ok(EXIT_VALIDATION);
            }
        }
        Command::SolvePower {
            lambdas,
            thresholds,
            pmax,
            bandwidth,
        } => {
            let cluster = OrderedCluster::new(lambdas, thresholds, pmax, bandwidth)?;
            let sol = solve(&cluster)?;
            println!("powers_w: {:?}", sol.powers);
            println!("z_w: {:?}", sol.z);
            println!("objective_bps: {}", sol.objective);
            println!("constraint_violation_w: {:e}", constraint_violation(&sol.z, &cluster));
            println!("optimality_gap: {:e}", sol.optimality_gap);
            println!("newton_steps: {}", sol.newton_steps);
            match grid_power_oracle(&cluster, pmax / 1000.0) {
                Ok((_, grid)) => println!(
                    "oracle_objective_bps: {grid}\noracle_relative_gap: {:e}",
                    (sol.objective - grid) / grid
                ),
                Err(e) => println!("oracle: {e}"),
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
