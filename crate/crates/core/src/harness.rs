//! Paired Monte Carlo experiments, CSV output and summary statistics.
//!
//! Every (sweep value, trial) pair gets its own child seed; one scenario is
//! drawn per child seed and every scheme is evaluated on that same scenario.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::allocation::{allocate, Allocation};
use crate::baselines::{
    exhaustive_clustering, fast_ofdm_allocate, grid_power_oracle, mckp_oracle, ofdma_allocate,
    PowerPolicy,
};
use crate::clustering::cluster;
use crate::error::{Error, Result};
use crate::power_opt::{
    concavity_probe, constraint_violation, direct_rates, from_z, objective, solve, to_z,
    OrderedCluster,
};
use crate::rate_model::{sic_conservation_error, validate, ClusterAssignment, RateReport};
use crate::scenario::{generate_scenario, Scenario, ScenarioConfig};
use crate::stats::compensated_sum;

pub const CSV_HEADER: &str = "seed,scheme,sweep_value,sum_rate_bps,fairness,satisfied_count,runtime_s";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Noma,
    Ofdma,
    FastOfdm,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Noma, Scheme::Ofdma, Scheme::FastOfdm];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Noma => "noma",
            Scheme::Ofdma => "ofdma",
            Scheme::FastOfdm => "fast_ofdm",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s.trim())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheme {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    /// `U + M`, split by the mMTC:URLLC ratio.
    TotalDevices,
    /// Maximum cluster size.
    KMax,
    /// Multiplier on both threshold ranges.
    ThresholdScale,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::TotalDevices => "total_devices",
            SweepVar::KMax => "k_max",
            SweepVar::ThresholdScale => "threshold_scale",
        }
    }
}

impl FromStr for SweepVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [SweepVar::TotalDevices, SweepVar::KMax, SweepVar::ThresholdScale]
            .into_iter()
            .find(|x| x.name() == s.trim())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown sweep variable {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub base: ScenarioConfig,
    pub sweep_var: SweepVar,
    pub sweep_values: Vec<f64>,
    pub trials: usize,
    pub schemes: Vec<Scheme>,
    pub mmtc_to_urllc_ratio: f64,
    /// `None` sizes each trial at `ceil((U+M)/k_max)` clusters.
    pub num_clusters: Option<usize>,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
    /// Record wall-clock time per scheme; otherwise runtime is 0 so output is
    /// byte-reproducible.
    pub timing: bool,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            base: ScenarioConfig::default(),
            sweep_var: SweepVar::TotalDevices,
            sweep_values: vec![40.0],
            trials: 100,
            schemes: Scheme::ALL.to_vec(),
            mmtc_to_urllc_ratio: 3.0,
            num_clusters: None,
            workers: 0,
            timing: false,
            output: None,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.sweep_values.is_empty() {
            return bad("sweep values must be nonempty".into());
        }
        if self.schemes.is_empty() {
            return bad("at least one scheme is required".into());
        }
        if !(self.mmtc_to_urllc_ratio.is_finite() && self.mmtc_to_urllc_ratio > 0.0) {
            return bad(format!("ratio must be > 0, got {}", self.mmtc_to_urllc_ratio));
        }
        for &v in &self.sweep_values {
            self.trial_config(v, 0)?;
        }
        Ok(())
    }

    /// Scenario configuration for one trial.
    pub fn trial_config(&self, sweep_value: f64, seed: u64) -> Result<ScenarioConfig> {
        let mut cfg = self.base.clone();
        cfg.rng_seed = seed;
        let integral = |v: f64| {
            if v.is_finite() && v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidConfig(format!(
                    "{} must be a nonnegative integer, got {v}",
                    self.sweep_var.name()
                )))
            }
        };
        match self.sweep_var {
            SweepVar::TotalDevices => {
                let n = integral(sweep_value)?;
                let u = (n as f64 / (1.0 + self.mmtc_to_urllc_ratio)).round() as usize;
                cfg.num_urllc = u;
                cfg.num_mmtc = n - u;
            }
            SweepVar::KMax => cfg.max_rank = integral(sweep_value)?,
            SweepVar::ThresholdScale => {
                if !(sweep_value.is_finite() && sweep_value >= 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "threshold scale must be >= 0, got {sweep_value}"
                    )));
                }
                let (a, b) = cfg.urllc_rate_threshold_range;
                cfg.urllc_rate_threshold_range = (a * sweep_value, b * sweep_value);
                let (a, b) = cfg.mmtc_rate_threshold_range;
                cfg.mmtc_rate_threshold_range = (a * sweep_value, b * sweep_value);
            }
        }
        cfg.num_clusters = self
            .num_clusters
            .unwrap_or_else(|| cfg.num_devices().div_ceil(cfg.max_rank.max(1)).max(1));
        cfg.validate()?;
        Ok(cfg)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic seed for `(master, sweep value, trial)`.
pub fn child_seed(master: u64, sweep_value: f64, trial: usize) -> u64 {
    let a = splitmix64(master);
    let b = splitmix64(a ^ sweep_value.to_bits());
    splitmix64(b ^ (trial as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub seed: u64,
    pub scheme: Scheme,
    pub sweep_value: f64,
    /// bps.
    pub sum_rate: f64,
    pub fairness: f64,
    pub satisfied_count: usize,
    /// Seconds.
    pub runtime: f64,
    /// Set when the trial failed; metrics are then NaN / 0.
    pub error: Option<String>,
}

/// The NOMA pipeline's full output on one scenario.
#[derive(Debug, Clone)]
pub struct NomaOutcome {
    pub assignment: ClusterAssignment,
    pub allocation: Allocation,
}

pub fn run_noma(scenario: &Scenario) -> Result<NomaOutcome> {
    let assignment = cluster(scenario)?;
    let allocation = allocate(scenario, &assignment)?;
    Ok(NomaOutcome {
        assignment,
        allocation,
    })
}

pub fn evaluate_scheme(scenario: &Scenario, scheme: Scheme) -> Result<RateReport> {
    Ok(match scheme {
        Scheme::Noma => run_noma(scenario)?.allocation.report,
        Scheme::Ofdma => ofdma_allocate(scenario).report,
        Scheme::FastOfdm => fast_ofdm_allocate(scenario)?.report,
    })
}

fn failed(seed: u64, scheme: Scheme, sweep_value: f64, e: &Error) -> TrialResult {
    TrialResult {
        seed,
        scheme,
        sweep_value,
        sum_rate: f64::NAN,
        fairness: f64::NAN,
        satisfied_count: 0,
        runtime: 0.0,
        error: Some(e.to_string()),
    }
}

/// All schemes on the scenario of one `(sweep value, trial)`.
pub fn run_trial(spec: &ExperimentSpec, sweep_value: f64, trial: usize) -> Vec<TrialResult> {
    let seed = child_seed(spec.base.rng_seed, sweep_value, trial);
    let scenario = spec
        .trial_config(sweep_value, seed)
        .and_then(|cfg| generate_scenario(&cfg));
    let scenario = match scenario {
        Ok(s) => s,
        Err(e) => {
            return spec
                .schemes
                .iter()
                .map(|&s| failed(seed, s, sweep_value, &e))
                .collect()
        }
    };
    spec.schemes
        .iter()
        .map(|&scheme| {
            let start = Instant::now();
            match evaluate_scheme(&scenario, scheme) {
                Ok(r) => TrialResult {
                    seed,
                    scheme,
                    sweep_value,
                    sum_rate: r.sum_rate,
                    fairness: r.fairness,
                    satisfied_count: r.satisfied_count,
                    runtime: if spec.timing {
                        start.elapsed().as_secs_f64()
                    } else {
                        0.0
                    },
                    error: None,
                },
                Err(e) => failed(seed, scheme, sweep_value, &e),
            }
        })
        .collect()
}

fn canonical_order(a: &TrialResult, b: &TrialResult) -> std::cmp::Ordering {
    a.sweep_value
        .total_cmp(&b.sweep_value)
        .then(a.scheme.name().cmp(b.scheme.name()))
        .then(a.seed.cmp(&b.seed))
}

/// Runs every (sweep value, trial) pair, in parallel, and returns the results
/// in canonical order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<TrialResult>> {
    spec.validate()?;
    let jobs: Vec<(f64, usize)> = spec
        .sweep_values
        .iter()
        .flat_map(|&v| (0..spec.trials).map(move |t| (v, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let mut results: Vec<TrialResult> = pool.install(|| {
        jobs.par_iter()
            .flat_map_iter(|&(v, t)| run_trial(spec, v, t))
            .collect()
    });
    results.sort_by(canonical_order);
    Ok(results)
}

/// `x` rounded to 12 significant digits, printed in plain decimal.
fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

pub fn to_csv(results: &[TrialResult]) -> String {
    let mut rows: Vec<&TrialResult> = results.iter().collect();
    rows.sort_by(|a, b| canonical_order(a, b));
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.seed,
            r.scheme,
            fmt_num(r.sweep_value),
            fmt_num(r.sum_rate),
            fmt_num(r.fairness),
            r.satisfied_count,
            fmt_num(r.runtime)
        ));
    }
    out
}

/// Writes `results` as CSV. Nothing is created when `results` is empty.
pub fn emit_csv(results: &[TrialResult], path: &Path) -> Result<()> {
    if results.is_empty() {
        return Err(Error::InsufficientData("no results to write".into()));
    }
    std::fs::write(path, to_csv(results)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads back the output of [`to_csv`]. Error messages are not stored, so
/// every parsed row has `error: None`.
pub fn parse_csv(text: &str) -> Result<Vec<TrialResult>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::ConfigParse {
                line: 1,
                message: "missing or unexpected header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: String| Error::ConfigParse {
            line: i + 1,
            message: m,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(err(format!("expected 7 fields, got {}", fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
        out.push(TrialResult {
            seed: fields[0].parse().map_err(|e| err(format!("seed: {e}")))?,
            scheme: fields[1].parse().map_err(|e: Error| err(e.to_string()))?,
            sweep_value: num(fields[2])?,
            sum_rate: num(fields[3])?,
            fairness: num(fields[4])?,
            satisfied_count: fields[5].parse().map_err(|e| err(format!("satisfied_count: {e}")))?,
            runtime: num(fields[6])?,
            error: None,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric {
    pub mean: f64,
    /// `1.96·s/√n`; absent below two samples.
    pub half_width: Option<f64>,
}

impl Metric {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = compensated_sum(xs.iter().copied()) / n;
        let half_width = (xs.len() >= 2).then(|| {
            let ss = compensated_sum(xs.iter().map(|x| (x - mean) * (x - mean)));
            1.96 * (ss / (n - 1.0)).sqrt() / n.sqrt()
        });
        Self { mean, half_width }
    }

    /// `(low, high)` of the 95% interval.
    pub fn interval(&self) -> Result<(f64, f64)> {
        let h = self.half_width.ok_or_else(|| {
            Error::InsufficientData("an interval needs at least two trials".into())
        })?;
        Ok((self.mean - h, self.mean + h))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub scheme: Scheme,
    pub sweep_value: f64,
    /// Successful trials.
    pub trials: usize,
    pub failures: usize,
    pub sum_rate: Metric,
    pub fairness: Metric,
    pub satisfied_count: Metric,
}

/// Mean and 95% normal interval per (scheme, sweep value), over successful
/// trials. Cells with no successful trial are omitted.
pub fn summarize(results: &[TrialResult]) -> Vec<CellSummary> {
    let mut cells: BTreeMap<(u64, Scheme), Vec<&TrialResult>> = BTreeMap::new();
    for r in results {
        // Order by value: flip the sign bit so negative floats sort first.
        let bits = r.sweep_value.to_bits();
        let key = if bits >> 63 == 1 { !bits } else { bits | 1 << 63 };
        cells.entry((key, r.scheme)).or_default().push(r);
    }
    cells
        .into_values()
        .filter_map(|rows| {
            let ok: Vec<&&TrialResult> = rows.iter().filter(|r| r.error.is_none()).collect();
            if ok.is_empty() {
                return None;
            }
            let pick = |f: fn(&TrialResult) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<_>>();
            Some(CellSummary {
                scheme: rows[0].scheme,
                sweep_value: rows[0].sweep_value,
                trials: ok.len(),
                failures: rows.len() - ok.len(),
                sum_rate: Metric::from_samples(&pick(|r| r.sum_rate)),
                fairness: Metric::from_samples(&pick(|r| r.fairness)),
                satisfied_count: Metric::from_samples(&pick(|r| r.satisfied_count as f64)),
            })
        })
        .collect()
}

/// One named check of [`self_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Oracle and invariant checks on `instances` tiny cells that share the
/// physical parameters of `base`.
pub fn self_check(base: &ScenarioConfig, instances: usize, seed: u64) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut record = |name: &'static str, failures: Vec<String>, checked: usize| {
        out.push(CheckOutcome {
            name,
            passed: failures.is_empty(),
            detail: match failures.first() {
                None => format!("{checked} checked"),
                Some(f) => format!("{} of {checked} failed; first: {f}", failures.len()),
            },
        });
    };

    let mut dominance = Vec::new();
    let mut validity = Vec::new();
    let mut conservation = Vec::new();
    let mut tiny_count = 0;
    for _ in 0..instances {
        let num_c = rng.gen_range(1..=2);
        let k_max = rng.gen_range(2..=3);
        let n = rng.gen_range(2 * num_c..=(num_c * k_max).min(5));
        let u = rng.gen_range(0..=n);
        let cfg = ScenarioConfig {
            num_urllc: u,
            num_mmtc: n - u,
            num_subcarriers: rng.gen_range(1..=6),
            num_clusters: num_c,
            max_rank: k_max,
            rng_seed: rng.gen(),
            ..base.clone()
        };
        let checked = (|| -> Result<()> {
            let sc = generate_scenario(&cfg)?;
            let noma = run_noma(&sc)?;
            let alloc = &noma.allocation;
            let v = validate(&noma.assignment, &alloc.map, &alloc.powers, &sc);
            if let Some(first) = v.first() {
                validity.push(format!("seed {}: {first}", cfg.rng_seed));
            }
            let err = sic_conservation_error(&sc, &noma.assignment, &alloc.map, &alloc.powers);
            if err > 1e-9 {
                conservation.push(format!("seed {}: {err:e}", cfg.rng_seed));
            }
            let mckp = mckp_oracle(&sc, &noma.assignment, PowerPolicy::EqualSplit)?;
            let best = exhaustive_clustering(&sc)?;
            let h = alloc.report.sum_rate;
            if mckp.objective < h * (1.0 - 1e-12) || best.report.sum_rate < h * (1.0 - 1e-12) {
                dominance.push(format!(
                    "seed {}: heuristic {h}, map oracle {}, exhaustive {}",
                    cfg.rng_seed, mckp.objective, best.report.sum_rate
                ));
            }
            Ok(())
        })();
        if let Err(e) = checked {
            dominance.push(format!("seed {}: {e}", cfg.rng_seed));
        }
        tiny_count += 1;
    }
    record("oracle dominance", dominance, tiny_count);
    record("constraint validation", validity, tiny_count);
    record("SIC conservation", conservation, tiny_count);

    let mut solver = Vec::new();
    let mut identity = Vec::new();
    let mut concavity = Vec::new();
    for i in 0..instances {
        let n = rng.gen_range(1..=3);
        let c = random_feasible_cluster(&mut rng, n);
        match (solve(&c), grid_power_oracle(&c, c.total_budget() / 1000.0)) {
            (Ok(sol), Ok((_, grid))) => {
                let viol = constraint_violation(&sol.z, &c);
                if (sol.objective - grid).abs() > 1e-3 * grid || viol > 1e-9 {
                    solver.push(format!("{c:?}: solver {} grid {grid} violation {viol:e}", sol.objective));
                }
            }
            (a, b) => solver.push(format!("{c:?}: {:?} / {:?}", a.err(), b.err())),
        }
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..c.total_budget())).collect();
        let direct: f64 = direct_rates(&p, &c).iter().sum();
        let via_z = objective(&to_z(&p), &c);
        let back = from_z(&to_z(&p)).unwrap_or_default();
        let round_trip = p.iter().zip(&back).all(|(a, b)| (a - b).abs() <= 1e-12);
        if (via_z - direct).abs() > 1e-9 * direct || !round_trip {
            identity.push(format!("{p:?}: {via_z} vs {direct}"));
        }
        let report = concavity_probe(&c, 10, i as u64);
        if !report.passed() {
            concavity.push(format!("{:?}", report.positive.first().or(report.disagreeing.first())));
        }
    }
    record("power solver vs grid", solver, instances);
    record("transform identity", identity, instances);
    record("concavity", concavity, instances);
    out
}

/// Cluster with gains log-uniform so that `λ·P_max ∈ [0.1, 1e4]` and
/// thresholds a random fraction (below 0.8) of the equal-power rates, which
/// keeps the feasible set's interior nonempty.
pub fn random_feasible_cluster(rng: &mut ChaCha8Rng, n: usize) -> OrderedCluster {
    let pmax = rng.gen_range(0.01..1.0);
    let mut lambdas: Vec<f64> = (0..n)
        .map(|_| 10f64.powf(rng.gen_range(-1.0..4.0)) / pmax)
        .collect();
    lambdas.sort_by(f64::total_cmp);
    let bf = 3_750.0 * rng.gen_range(1..=48) as f64;
    let open = OrderedCluster::new(lambdas, vec![0.0; n], pmax, bf).expect("valid cluster");
    let equal = vec![pmax / n as f64; n];
    let thresholds = direct_rates(&equal, &open)
        .into_iter()
        .map(|r| r * rng.gen_range(0.0..0.8))
        .collect();
    open.with_thresholds(thresholds).expect("valid thresholds")
}
