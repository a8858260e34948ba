//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion, with
//! indented detail lines, and exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use nbiot_noma::baselines::{exhaustive_clustering, fast_ofdm_allocate, grid_power_oracle, ofdma_allocate};
use nbiot_noma::harness::{child_seed, random_feasible_cluster, run_noma, ExperimentSpec, Metric};
use nbiot_noma::power_opt::{
    concavity_probe, direct_rates, from_z, objective, phi_curvature, solve, to_z, ConcavityReport,
    OrderedCluster,
};
use nbiot_noma::rate_model::{sic_conservation_error, validate, RateReport};
use nbiot_noma::scenario::{generate_scenario, Scenario, ScenarioConfig};

const TRIALS: usize = 100;
const MASTER_SEED: u64 = 20_240_601;

/// Every NOMA (assignment, map, powers) triple seen by the suite.
#[derive(Default)]
struct Audit {
    triples: usize,
    violations: Vec<String>,
    worst_conservation: f64,
    conservation_failures: Vec<String>,
    regressions: usize,
    regressed_runs: usize,
    failures: Vec<String>,
}

impl Audit {
    fn noma(audit: &Mutex<Audit>, sc: &Scenario, label: &str) -> Option<RateReport> {
        let out = run_noma(sc);
        let mut a = audit.lock().unwrap();
        let out = match out {
            Ok(o) => o,
            Err(e) => {
                a.failures.push(format!("{label}: {e}"));
                return None;
            }
        };
        let alloc = &out.allocation;
        a.triples += 1;
        for v in validate(&out.assignment, &alloc.map, &alloc.powers, sc) {
            a.violations.push(format!("{label}: {v}"));
        }
        let err = sic_conservation_error(sc, &out.assignment, &alloc.map, &alloc.powers);
        a.worst_conservation = a.worst_conservation.max(err);
        if err > 1e-9 {
            a.conservation_failures.push(format!("{label}: {err:e}"));
        }
        let r = alloc.coverage_regressions().len();
        a.regressions += r;
        a.regressed_runs += usize::from(r > 0);
        Some(out.allocation.report)
    }
}

/// All schemes on one paired scenario.
struct Row {
    noma: Option<RateReport>,
    noma_k4: Option<RateReport>,
    ofdma: RateReport,
    fast: Option<RateReport>,
}

fn section_v() -> ExperimentSpec {
    ExperimentSpec {
        base: ScenarioConfig {
            rng_seed: MASTER_SEED,
            ..ScenarioConfig::default()
        },
        trials: TRIALS,
        ..ExperimentSpec::default()
    }
}

fn low_thresholds() -> ExperimentSpec {
    let mut spec = section_v();
    spec.base.urllc_rate_threshold_range = (100.0, 100.0);
    spec.base.mmtc_rate_threshold_range = (100.0, 100.0);
    spec
}

fn paired_rows(spec: &ExperimentSpec, devices: usize, with_k4: bool, audit: &Mutex<Audit>) -> Vec<Row> {
    (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let v = devices as f64;
            let seed = child_seed(spec.base.rng_seed, v, t);
            let cfg = spec.trial_config(v, seed).expect("valid trial config");
            let sc = generate_scenario(&cfg).expect("scenario");
            let label = format!("N={devices} seed {seed}");
            let noma = Audit::noma(audit, &sc, &label);
            let noma_k4 = with_k4.then(|| {
                let k4 = sc.with_clustering(devices.div_ceil(4), 4).expect("k_max=4 layout");
                Audit::noma(audit, &k4, &format!("{label} k_max=4"))
            });
            let fast = match fast_ofdm_allocate(&sc) {
                Ok(f) => Some(f.report),
                Err(e) => {
                    audit.lock().unwrap().failures.push(format!("{label} fast-OFDM: {e}"));
                    None
                }
            };
            Row {
                noma,
                noma_k4: noma_k4.flatten(),
                ofdma: ofdma_allocate(&sc).report,
                fast,
            }
        })
        .collect()
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    Metric::from_samples(&xs).mean
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn report(id: usize, title: &str, ok: bool, details: &[String]) -> bool {
    println!("[{}] {id}. {title}", verdict(ok));
    for d in details {
        println!("      {d}");
    }
    ok
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

enum Gap {
    Confirmed,
    Indistinguishable,
    Reversed,
}

/// Classifies `a − b ≥ 0` by the 95% interval of the paired differences.
fn paired_gap(a: &[f64], b: &[f64]) -> (Gap, Metric) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = Metric::from_samples(&d);
    let (lo, hi) = m.interval().expect("at least two trials");
    let gap = if lo > 0.0 {
        Gap::Confirmed
    } else if hi < 0.0 {
        Gap::Reversed
    } else {
        Gap::Indistinguishable
    };
    (gap, m)
}

fn criterion_1(rows: &[(usize, Vec<Row>)], seconds: f64) -> bool {
    let mut ok = seconds < 300.0;
    let mut details = Vec::new();
    for (n, rows) in rows {
        let complete: Vec<&Row> = rows.iter().filter(|r| r.noma.is_some()).collect();
        if complete.len() != rows.len() {
            ok = false;
        }
        let noma = mean(complete.iter().map(|r| r.noma.as_ref().unwrap().sum_rate));
        let ofdma = mean(rows.iter().map(|r| r.ofdma.sum_rate));
        let gain = noma / ofdma - 1.0;
        let wins = complete
            .iter()
            .filter(|r| r.noma.as_ref().unwrap().sum_rate >= r.ofdma.sum_rate)
            .count();
        let share = wins as f64 / rows.len() as f64;
        ok &= gain >= 0.15 && share >= 0.95;
        details.push(format!(
            "N={n}: NOMA {noma:.1} bps, OFDMA {ofdma:.1} bps, gain {:+.2}% (need >= +15%), \
             NOMA >= OFDMA in {wins}/{} trials (need >= 95%)",
            100.0 * gain,
            rows.len()
        ));
    }
    details.push(format!("runtime {seconds:.1} s (limit 300 s)"));
    report(1, "NOMA vs OFDMA sum-rate gain", ok, &details)
}

fn criterion_2(rows: &[(usize, Vec<Row>)], all_jain: &[f64]) -> bool {
    let mut ok = true;
    let mut details = Vec::new();
    for (n, rows) in rows {
        let full: Vec<&Row> = rows
            .iter()
            .filter(|r| r.noma.is_some() && r.noma_k4.is_some())
            .collect();
        ok &= full.len() == rows.len();
        let k4: Vec<f64> = full.iter().map(|r| r.noma_k4.as_ref().unwrap().fairness).collect();
        let k2: Vec<f64> = full.iter().map(|r| r.noma.as_ref().unwrap().fairness).collect();
        let oma: Vec<f64> = full.iter().map(|r| r.ofdma.fairness).collect();
        details.push(format!(
            "N={n}: mean Jain NOMA(k_max=4) {:.4}, NOMA(k_max=2) {:.4}, OFDMA {:.4}",
            mean(k4.iter().copied()),
            mean(k2.iter().copied()),
            mean(oma.iter().copied())
        ));
        for (name, a, b) in [("k_max=4 >= k_max=2", &k4, &k2), ("k_max=2 >= OFDMA", &k2, &oma)] {
            let (gap, m) = paired_gap(a, b);
            let label = match gap {
                Gap::Confirmed => "confirmed",
                Gap::Indistinguishable => "statistically indistinguishable",
                Gap::Reversed => {
                    ok = false;
                    "reversed"
                }
            };
            details.push(format!(
                "N={n}: {name}: paired difference {:+.4} ± {:.4}, {label}",
                m.mean,
                m.half_width.unwrap_or(f64::NAN)
            ));
        }
    }
    let in_range = all_jain.iter().all(|j| (0.0..=1.0).contains(j));
    ok &= in_range;
    details.push(format!(
        "Jain index in [0,1] on all {} evaluations: {in_range}",
        all_jain.len()
    ));
    report(2, "Fairness ordering", ok, &details)
}

fn criterion_3(ceiling: &[&Row], low: &[(usize, Vec<Row>)]) -> bool {
    let mut details = Vec::new();
    let oma_max = ceiling.iter().map(|r| r.ofdma.satisfied_count).max().unwrap_or(0);
    let fast_max = ceiling
        .iter()
        .filter_map(|r| r.fast.as_ref().map(|f| f.satisfied_count))
        .max()
        .unwrap_or(0);
    let mut ok = oma_max <= 48 && fast_max <= 96;
    ok &= ceiling.iter().all(|r| r.fast.is_some());
    details.push(format!(
        "over {} trials: max OFDMA satisfied {oma_max} (limit 48), max fast-OFDM satisfied {fast_max} (limit 96)",
        ceiling.len()
    ));
    for (n, rows) in low {
        ok &= rows.iter().all(|r| r.noma.is_some() && r.fast.is_some());
        let noma = mean(rows.iter().filter_map(|r| r.noma.as_ref()).map(|r| r.satisfied_count as f64));
        let fast = mean(rows.iter().filter_map(|r| r.fast.as_ref()).map(|r| r.satisfied_count as f64));
        let oma = mean(rows.iter().map(|r| r.ofdma.satisfied_count as f64));
        let ordered = noma >= fast && fast >= oma;
        ok &= ordered;
        details.push(format!(
            "low thresholds, N={n}: mean satisfied NOMA(k_max=2) {noma:.2}, fast-OFDM {fast:.2}, OFDMA {oma:.2}, \
             NOMA >= fast-OFDM >= OFDMA: {ordered}"
        ));
    }
    report(3, "Connectivity ceiling", ok, &details)
}

fn criterion_4() -> bool {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED ^ 4);
    let clusters: Vec<OrderedCluster> = (0..200)
        .map(|_| {
            let n = rng.gen_range(1..=3);
            random_feasible_cluster(&mut rng, n)
        })
        .collect();
    let outcomes: Vec<Result<(f64, f64, f64), String>> = clusters
        .par_iter()
        .map(|c| {
            let sol = solve(c).map_err(|e| e.to_string())?;
            let (_, grid) = grid_power_oracle(c, c.total_budget() / 1000.0).map_err(|e| e.to_string())?;
            let ordered = sol.powers.windows(2).all(|w| w[0] >= w[1]);
            let sum_err = (sol.powers.iter().sum::<f64>() - c.total_budget()).abs();
            if !ordered {
                return Err(format!("powers not nonincreasing: {:?}", sol.powers));
            }
            Ok(((sol.objective - grid).abs() / grid, sum_err, sol.objective / grid - 1.0))
        })
        .collect();
    let seconds = start.elapsed().as_secs_f64();
    let errors: Vec<&String> = outcomes.iter().filter_map(|o| o.as_ref().err()).collect();
    let fine: Vec<&(f64, f64, f64)> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let worst_rel = fine.iter().map(|o| o.0).fold(0.0, f64::max);
    let worst_sum = fine.iter().map(|o| o.1).fold(0.0, f64::max);
    let above_grid = fine.iter().filter(|o| o.2 > 0.0).count();
    let ok = errors.is_empty() && worst_rel <= 1e-3 && worst_sum <= 1e-9 && seconds < 120.0;
    let mut details = vec![
        format!("{} instances, {} errors", clusters.len(), errors.len()),
        format!("worst |solver - grid| / grid {worst_rel:.3e} (limit 1e-3); solver above grid on {above_grid}"),
        format!("worst |sum P - P_max| {worst_sum:.3e} W (limit 1e-9)"),
        format!("runtime {seconds:.2} s (limit 120 s)"),
    ];
    if let Some(e) = errors.first() {
        details.push(format!("first error: {e}"));
    }
    report(4, "Power solver vs grid oracle", ok, &details)
}

fn criterion_5() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED ^ 5);
    let mut merged = ConcavityReport::default();
    for i in 0..1_000 {
        let n = rng.gen_range(2..=5);
        let c = random_feasible_cluster(&mut rng, n);
        merged.merge(concavity_probe(&c, 10, i));
    }
    let spot = phi_curvature(1.0, 2.0, 1.0);
    let spot_err = (spot + 7.0 / 36.0).abs();
    let ok = merged.samples == 10_000 && merged.passed() && spot_err <= 1e-9;
    report(
        5,
        "Concavity",
        ok,
        &[
            format!(
                "{} samples: {} positive, {} disagreeing beyond 1e-4 relative, max disagreement {:.3e}",
                merged.samples,
                merged.positive.len(),
                merged.disagreeing.len(),
                merged.max_disagreement
            ),
            format!("lambda=[1,2], Z=1: {spot:.15} vs -7/36, error {spot_err:.1e} (limit 1e-9)"),
        ],
    )
}

fn criterion_6() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED ^ 6);
    let mut worst_identity: f64 = 0.0;
    let mut worst_trip: f64 = 0.0;
    for _ in 0..1_000 {
        let n = rng.gen_range(1..=5);
        let c = random_feasible_cluster(&mut rng, n);
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..c.total_budget())).collect();
        let direct: f64 = direct_rates(&p, &c).iter().sum();
        let z = to_z(&p);
        let via_z = objective(&z, &c);
        worst_identity = worst_identity.max((via_z - direct).abs() / direct);
        let back = from_z(&z).expect("suffix sums of nonnegative powers");
        for (a, b) in p.iter().zip(&back) {
            worst_trip = worst_trip.max((a - b).abs());
        }
    }
    let ok = worst_identity <= 1e-9 && worst_trip <= 1e-12;
    report(
        6,
        "Transform identity",
        ok,
        &[
            format!("1000 vectors: worst relative gap sum Phi vs SIC sum rate {worst_identity:.3e} (limit 1e-9)"),
            format!("worst round-trip error {worst_trip:.3e} W (limit 1e-12)"),
        ],
    )
}

fn criterion_7(audit: &Mutex<Audit>) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED ^ 7);
    let configs: Vec<ScenarioConfig> = (0..500)
        .map(|_| {
            let num_c = rng.gen_range(1..=2);
            let k_max = rng.gen_range(2..=3);
            let n = rng.gen_range(2 * num_c..=(num_c * k_max).min(5));
            let u = rng.gen_range(0..=n);
            ScenarioConfig {
                num_urllc: u,
                num_mmtc: n - u,
                num_subcarriers: rng.gen_range(1..=6),
                num_clusters: num_c,
                max_rank: k_max,
                rng_seed: rng.gen(),
                ..ScenarioConfig::default()
            }
        })
        .collect();
    let outcomes: Vec<Result<(f64, f64), String>> = configs
        .par_iter()
        .map(|cfg| {
            let sc = generate_scenario(cfg).map_err(|e| e.to_string())?;
            let label = format!("tiny seed {}", cfg.rng_seed);
            let h = Audit::noma(audit, &sc, &label).ok_or(format!("{label}: heuristic failed"))?;
            let best = exhaustive_clustering(&sc).map_err(|e| format!("{label}: {e}"))?;
            Ok((h.sum_rate, best.report.sum_rate))
        })
        .collect();
    let errors: Vec<&String> = outcomes.iter().filter_map(|o| o.as_ref().err()).collect();
    let pairs: Vec<(f64, f64)> = outcomes.iter().filter_map(|o| o.as_ref().ok().copied()).collect();
    let below = pairs.iter().filter(|(h, b)| *b < h * (1.0 - 1e-12)).count();
    let mut ratios: Vec<f64> = pairs
        .iter()
        .map(|&(h, b)| if b > 0.0 { h / b } else { 1.0 })
        .collect();
    ratios.sort_by(f64::total_cmp);
    let avg = mean(ratios.iter().copied());
    let optimal = ratios.iter().filter(|&&r| r >= 1.0 - 1e-12).count();
    let ok = errors.is_empty() && below == 0 && avg >= 0.6;
    let mut details = vec![
        format!(
            "{} instances, {} errors, exhaustive below heuristic on {below}",
            configs.len(),
            errors.len()
        ),
        format!("heuristic / exhaustive: mean {avg:.4} (floor 0.6), heuristic optimal on {optimal}"),
        format!(
            "distribution: min {:.4}, p10 {:.4}, p25 {:.4}, median {:.4}, p75 {:.4}, max {:.4}",
            ratios[0],
            quantile(&ratios, 0.10),
            quantile(&ratios, 0.25),
            quantile(&ratios, 0.5),
            quantile(&ratios, 0.75),
            ratios[ratios.len() - 1]
        ),
    ];
    if let Some(e) = errors.first() {
        details.push(format!("first error: {e}"));
    }
    report(7, "Oracle dominance", ok, &details)
}

fn criterion_8(audit: &Audit) -> bool {
    let ok = audit.violations.is_empty() && audit.conservation_failures.is_empty() && audit.failures.is_empty();
    let mut details = vec![
        format!(
            "{} pipeline triples: {} constraint violations, {} pipeline errors",
            audit.triples,
            audit.violations.len(),
            audit.failures.len()
        ),
        format!("worst SIC conservation error {:.3e} (limit 1e-9)", audit.worst_conservation),
        format!(
            "coverage regressions during allocation: {} steps over {} runs",
            audit.regressions, audit.regressed_runs
        ),
    ];
    for first in [audit.violations.first(), audit.conservation_failures.first(), audit.failures.first()]
        .into_iter()
        .flatten()
    {
        details.push(format!("first: {first}"));
    }
    report(8, "Constraint validation", ok, &details)
}

fn main() -> ExitCode {
    let audit = Mutex::new(Audit::default());

    let start = Instant::now();
    let spec = section_v();
    let large: Vec<(usize, Vec<Row>)> = [96, 120]
        .into_iter()
        .map(|n| (n, paired_rows(&spec, n, true, &audit)))
        .collect();
    let large_seconds = start.elapsed().as_secs_f64();

    let small: Vec<(usize, Vec<Row>)> = [24, 48, 72]
        .into_iter()
        .map(|n| (n, paired_rows(&spec, n, false, &audit)))
        .collect();
    let low_spec = low_thresholds();
    let low: Vec<(usize, Vec<Row>)> = [60, 72, 84, 96, 108, 120]
        .into_iter()
        .map(|n| (n, paired_rows(&low_spec, n, false, &audit)))
        .collect();

    let all_rows: Vec<&Row> = large
        .iter()
        .chain(&small)
        .chain(&low)
        .flat_map(|(_, rows)| rows)
        .collect();
    let all_jain: Vec<f64> = all_rows
        .iter()
        .flat_map(|r| {
            [r.noma.as_ref(), r.noma_k4.as_ref(), Some(&r.ofdma), r.fast.as_ref()]
                .into_iter()
                .flatten()
                .map(|x| x.fairness)
        })
        .collect();

    let mut results = vec![
        criterion_1(&large, large_seconds),
        criterion_2(&large, &all_jain),
        criterion_3(&all_rows, &low),
        criterion_4(),
        criterion_5(),
        criterion_6(),
    ];
    results.push(criterion_7(&audit));
    results.push(criterion_8(&audit.lock().unwrap()));

    let passed = results.iter().filter(|&&r| r).count();
    println!("{passed}/{} acceptance criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
