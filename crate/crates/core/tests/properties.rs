use proptest::prelude::*;

use nbiot_noma::harness::{child_seed, run_noma};
use nbiot_noma::power_opt::{constraint_violation, direct_rates, from_z, objective, solve, to_z, OrderedCluster};
use nbiot_noma::rate_model::{jain_fairness, sic_conservation_error, validate};
use nbiot_noma::scenario::{generate_scenario, ScenarioConfig};

fn cluster() -> impl Strategy<Value = OrderedCluster> {
    (1usize..=3, 0.01f64..1.0).prop_flat_map(|(n, pmax)| {
        (
            prop::collection::vec(-1.0f64..4.0, n),
            prop::collection::vec(0.0f64..0.8, n),
        )
            .prop_map(move |(exps, fractions)| {
                let mut l: Vec<f64> = exps.iter().map(|e| 10f64.powf(*e) / pmax).collect();
                l.sort_by(f64::total_cmp);
                let open = OrderedCluster::new(l, vec![0.0; exps.len()], pmax, 3_750.0).unwrap();
                let equal = vec![pmax / exps.len() as f64; exps.len()];
                let r = direct_rates(&equal, &open).iter().zip(&fractions).map(|(r, f)| r * f).collect();
                open.with_thresholds(r).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn suffix_sums_round_trip(p in prop::collection::vec(0.0f64..1.0, 1..8)) {
        let back = from_z(&to_z(&p)).unwrap();
        for (a, b) in p.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn solution_is_feasible_and_ordered(c in cluster()) {
        let sol = solve(&c).unwrap();
        prop_assert!(constraint_violation(&sol.z, &c) <= 1e-9);
        prop_assert!(sol.powers.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!((sol.powers.iter().sum::<f64>() - c.total_budget()).abs() <= 1e-9);
        let equal = vec![c.total_budget() / c.len() as f64; c.len()];
        prop_assert!(sol.objective >= objective(&to_z(&equal), &c) * (1.0 - 1e-9));
    }

    #[test]
    fn jain_index_is_bounded(rates in prop::collection::vec(0.0f64..1e6, 1..20)) {
        if let Ok(j) = jain_fairness(&rates) {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&j));
        }
    }

    #[test]
    fn pipeline_output_validates(master in any::<u64>(), pairs in 2usize..20) {
        let n = 2 * pairs;
        let u = n / 4;
        let cfg = ScenarioConfig {
            num_urllc: u,
            num_mmtc: n - u,
            num_clusters: n.div_ceil(2),
            rng_seed: child_seed(master, n as f64, 0),
            ..ScenarioConfig::default()
        };
        let sc = generate_scenario(&cfg).unwrap();
        let out = run_noma(&sc).unwrap();
        let a = &out.allocation;
        prop_assert!(validate(&out.assignment, &a.map, &a.powers, &sc).is_empty());
        prop_assert!(sic_conservation_error(&sc, &out.assignment, &a.map, &a.powers) <= 1e-9);
    }
}
