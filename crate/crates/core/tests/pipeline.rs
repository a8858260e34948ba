use nbiot_noma::baselines::{fast_ofdm_allocate, ofdma_allocate};
use nbiot_noma::clustering::check_structure;
use nbiot_noma::harness::{
    emit_csv, parse_csv, run_experiment, run_noma, self_check, summarize, to_csv, ExperimentSpec,
    Scheme, SweepVar,
};
use nbiot_noma::power_opt::{meets_thresholds, solve, OrderedCluster};
use nbiot_noma::rate_model::{sic_conservation_error, validate};
use nbiot_noma::scenario::{generate_scenario, ScenarioConfig};

#[test]
fn default_cell_end_to_end() {
    let sc = generate_scenario(&ScenarioConfig::default()).unwrap();
    let out = run_noma(&sc).unwrap();
    assert!(check_structure(&out.assignment, &sc).is_empty());
    let a = &out.allocation;
    assert!(validate(&out.assignment, &a.map, &a.powers, &sc).is_empty());
    assert!(sic_conservation_error(&sc, &out.assignment, &a.map, &a.powers) <= 1e-9);
    assert!(a.report.sum_rate > 0.0);
    assert!((0.0..=1.0).contains(&a.report.fairness));

    let oma = ofdma_allocate(&sc);
    assert!(oma.report.satisfied_count <= sc.num_subcarriers());
    let fast = fast_ofdm_allocate(&sc).unwrap();
    assert!(fast.report.satisfied_count <= 2 * sc.num_subcarriers());
}

#[test]
fn per_cluster_power_solution_meets_thresholds() {
    let sc = generate_scenario(&ScenarioConfig {
        rng_seed: 7,
        ..ScenarioConfig::default()
    })
    .unwrap();
    let out = run_noma(&sc).unwrap();
    let mut solved = 0;
    for c in 0..out.assignment.num_clusters() {
        let owned = out.allocation.map.owned_by(c);
        let members = out.assignment.member_ids(c);
        if owned.is_empty() || members.len() < 2 {
            continue;
        }
        let budget = members.iter().map(|&d| sc.device(d).power_budget).fold(f64::INFINITY, f64::min);
        let (cluster, _) = OrderedCluster::from_members(&sc, &members, &owned, budget).unwrap();
        let open = cluster.with_thresholds(vec![0.0; cluster.len()]).unwrap();
        let sol = solve(&open).unwrap();
        assert!(meets_thresholds(&sol.powers, &open, 1e-9));
        assert!((sol.powers.iter().sum::<f64>() - budget).abs() <= 1e-9 * budget);
        solved += 1;
    }
    assert!(solved > 0);
}

#[test]
fn csv_file_round_trip() {
    let spec = ExperimentSpec {
        sweep_values: vec![20.0, 40.0],
        trials: 4,
        ..ExperimentSpec::default()
    };
    let results = run_experiment(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    emit_csv(&results, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, to_csv(&results));
    let back = parse_csv(&text).unwrap();
    assert_eq!(back.len(), results.len());
    for (a, b) in results.iter().zip(&back) {
        assert_eq!((a.seed, a.scheme, a.satisfied_count), (b.seed, b.scheme, b.satisfied_count));
        assert!((a.sum_rate - b.sum_rate).abs() <= 1e-11 * a.sum_rate);
        assert!((a.fairness - b.fairness).abs() <= 1e-11);
    }
    assert_eq!(to_csv(&back), text);
}

#[test]
fn schemes_see_the_same_scenario() {
    let spec = ExperimentSpec {
        trials: 5,
        ..ExperimentSpec::default()
    };
    let results = run_experiment(&spec).unwrap();
    for scheme in Scheme::ALL {
        let seeds: Vec<u64> = results.iter().filter(|r| r.scheme == scheme).map(|r| r.seed).collect();
        let noma: Vec<u64> = results.iter().filter(|r| r.scheme == Scheme::Noma).map(|r| r.seed).collect();
        assert_eq!(seeds, noma);
    }
}

#[test]
fn k_max_sweep_summary() {
    let spec = ExperimentSpec {
        sweep_var: SweepVar::KMax,
        sweep_values: vec![2.0, 3.0],
        trials: 3,
        schemes: vec![Scheme::Noma],
        ..ExperimentSpec::default()
    };
    let cells = summarize(&run_experiment(&spec).unwrap());
    assert_eq!(cells.len(), 2);
    assert!(cells.iter().all(|c| c.trials == 3 && c.failures == 0));
    assert!(cells[0].sweep_value < cells[1].sweep_value);
}

#[test]
fn self_check_passes_on_default_physics() {
    for check in self_check(&ScenarioConfig::default(), 40, 3) {
        assert!(check.passed, "{}: {}", check.name, check.detail);
    }
}
