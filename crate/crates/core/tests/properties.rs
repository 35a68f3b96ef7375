mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use routemix::analysis::{ccdf, gini, js_divergence, kl_divergence, Histogram};
use routemix::emissions::{
    aggregate, instantaneous_emission, total_emissions, EmissionAccumulator, EmissionCoefficients,
};
use routemix::network::{synth_grid, EdgeIdx};
use routemix::routing::{
    fastest_path, path_cost, perturbed_fastest_path, sspd, validate_path, RoutingError,
};
use routemix::seeds::rng_from;
use routemix::sim::{assign_departures, simulate, SimConfig, TrajectorySink};

fn gini_pairs(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let mut s = 0.0;
    for a in x {
        for b in x {
            s += (a - b).abs();
        }
    }
    s / (2.0 * n * n * mean)
}

fn histogram(weights: &[f64]) -> Histogram {
    let edges: Vec<f64> = (0..=weights.len()).map(|k| k as f64).collect();
    Histogram::from_weights(edges, weights).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fastest_path_is_valid_and_optimal(seed in any::<u64>(), n_nodes in 3usize..9, n_edges in 4usize..25) {
        let mut rng = rng_from(seed);
        let net = common::random_network(&mut rng, n_nodes, n_edges);
        let o = EdgeIdx(rng.gen_range(0..net.edge_count()));
        let d = EdgeIdx(rng.gen_range(0..net.edge_count()));
        prop_assume!(o != d);
        match (fastest_path(&net, "v", o, d), common::bellman_ford(&net, o, d)) {
            (Ok(p), Some(best)) => {
                validate_path(&net, &p.edges, Some(o), Some(d)).unwrap();
                prop_assert!((path_cost(&net, &p.edges) - best).abs() <= 1e-9 * best);
            }
            (Err(RoutingError::Unreachable { .. }), None) => {}
            (r, b) => prop_assert!(false, "router {:?} vs oracle {:?}", r.map(|p| p.edges), b),
        }
    }

    #[test]
    fn perturbation_never_beats_fastest(seed in any::<u64>(), w in 1.0f64..30.0) {
        let net = synth_grid(5, 5, 100.0, 13.9, None).unwrap();
        let mut rng = rng_from(seed);
        let o = EdgeIdx(rng.gen_range(0..net.edge_count()));
        let d = EdgeIdx(rng.gen_range(0..net.edge_count()));
        prop_assume!(o != d);
        let exact = fastest_path(&net, "v", o, d).unwrap();
        let p = perturbed_fastest_path(&net, "v", o, d, w, &mut rng).unwrap();
        validate_path(&net, &p.edges, Some(o), Some(d)).unwrap();
        prop_assert!(path_cost(&net, &p.edges) >= path_cost(&net, &exact.edges) - 1e-9);
    }

    #[test]
    fn sspd_is_a_symmetric_semimetric(seed in any::<u64>()) {
        let net = synth_grid(5, 5, 100.0, 13.9, None).unwrap();
        let mut rng = rng_from(seed);
        let mut path = || loop {
            let o = EdgeIdx(rng.gen_range(0..net.edge_count()));
            let d = EdgeIdx(rng.gen_range(0..net.edge_count()));
            if o != d {
                break fastest_path(&net, "v", o, d).unwrap().edges;
            }
        };
        let (a, b) = (path(), path());
        let ab = sspd(&net, &a, &b);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, sspd(&net, &b, &a));
        prop_assert_eq!(sspd(&net, &a, &a), 0.0);
    }

    #[test]
    fn gini_matches_pairwise_definition(x in prop::collection::vec(0.0f64..1e6, 1..80)) {
        prop_assume!(x.iter().sum::<f64>() > 0.0);
        let g = gini(&x).unwrap();
        prop_assert!((0.0..1.0).contains(&g));
        prop_assert!((g - gini_pairs(&x)).abs() < 1e-9);
        let scaled: Vec<f64> = x.iter().map(|v| v * 7.5).collect();
        prop_assert!((gini(&scaled).unwrap() - g).abs() < 1e-9);
    }

    #[test]
    fn divergences_are_bounded(
        (p, q) in (2usize..30).prop_flat_map(|n| (
            prop::collection::vec(0.0f64..1.0, n),
            prop::collection::vec(0.0f64..1.0, n),
        ))
    ) {
        prop_assume!(p.iter().sum::<f64>() > 0.0 && q.iter().sum::<f64>() > 0.0);
        let (hp, hq) = (histogram(&p), histogram(&q));
        let js = js_divergence(&hp, &hq).unwrap();
        prop_assert!((0.0..=1.0).contains(&js));
        prop_assert_eq!(js, js_divergence(&hq, &hp).unwrap());
        prop_assert!(js_divergence(&hp, &hp).unwrap() <= 1e-12);
        prop_assert!(kl_divergence(&hp, &hq).unwrap() >= 0.0);
    }

    #[test]
    fn ccdf_is_a_survival_function(x in prop::collection::vec(-1e3f64..1e3, 1..200)) {
        let c = ccdf(&x).unwrap();
        prop_assert_eq!(c[0].1, 1.0);
        prop_assert!(c.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 > w[1].1));
        prop_assert!(c.last().unwrap().1 > 0.0);
    }

    #[test]
    fn emission_rate_is_clamped_and_monotone(
        c in prop::array::uniform6(0.0f64..100.0),
        s in 0.0f64..40.0,
        ds in 0.0f64..10.0,
        a in -5.0f64..5.0,
    ) {
        let coef = EmissionCoefficients::new("p", c);
        prop_assert!(instantaneous_emission(&coef, s, a) >= 0.0);
        prop_assert!(instantaneous_emission(&coef, s + ds, 0.0) >= instantaneous_emission(&coef, s, 0.0));
    }

    #[test]
    fn emission_total_ignores_record_order(seed in any::<u64>()) {
        let net = synth_grid(4, 4, 100.0, 13.9, None).unwrap();
        let coef = EmissionCoefficients::default_passenger_car();
        let mut rng = rng_from(seed);
        let recs: Vec<(EdgeIdx, f64, f64)> = (0..500)
            .map(|_| (EdgeIdx(rng.gen_range(0..net.edge_count())), rng.gen_range(0.0..20.0), rng.gen_range(-3.0..3.0)))
            .collect();
        let mut shuffled = recs.clone();
        shuffled.shuffle(&mut rng);
        let total = |rs: &[(EdgeIdx, f64, f64)]| {
            let mut acc = EmissionAccumulator::new(&net, &coef, 1.0).unwrap();
            for &(e, s, a) in rs {
                acc.add(e, s, a);
            }
            total_emissions(&acc.finish(&net).unwrap())
        };
        let (x, y) = (total(&recs), total(&shuffled));
        prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn simulation_conserves_vehicles_and_is_deterministic(seed in any::<u64>(), n in 1usize..60) {
        let net = synth_grid(4, 4, 100.0, 13.9, Some(2)).unwrap();
        let mut rng = rng_from(seed);
        let d = common::random_fastest_demand(&net, n, &mut rng);
        let cfg = SimConfig { horizon: 120.0, ..SimConfig::default() };
        let sched = assign_departures(&d, cfg.horizon, &mut rng).unwrap();
        let (log, stats) = simulate(&net, &d, &sched, &cfg, &[], seed).unwrap();
        prop_assert!(stats.is_conserved());
        prop_assert_eq!(stats.fleet_size, n);
        for r in &log.records {
            prop_assert!(r.speed >= 0.0);
            prop_assert!(r.speed <= net.edge(r.edge).speed_limit + 1e-9);
            prop_assert!(r.pos >= -1e-9 && r.pos <= net.edge(r.edge).length + 1e-9);
        }
        for v in &log.vehicles {
            if let Some(tt) = v.travel_time() {
                prop_assert!(tt > 0.0);
            }
        }
        let (again, stats2) = simulate(&net, &d, &sched, &cfg, &[], seed).unwrap();
        prop_assert_eq!(stats, stats2);
        prop_assert!(log == again);
        let coef = EmissionCoefficients::default_passenger_car();
        let g = aggregate(&log, &coef, &net, cfg.dt).unwrap();
        let mut acc = EmissionAccumulator::new(&net, &coef, cfg.dt).unwrap();
        for r in &log.records {
            acc.record(r);
        }
        let flat = acc.flat_total();
        prop_assert!((total_emissions(&g) - flat).abs() <= 1e-9 * flat.max(1.0));
    }
}
