//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

mod common;

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng;

use routemix::analysis::{
    fit_all_models, gini, js_divergence, sample_truncated_power_law, select_best, spearman,
    Histogram, Model,
};
use routemix::demand::{estimate_od, synth_trip_records, SyntheticRecordsConfig, TileGrid};
use routemix::emissions::{
    aggregate, instantaneous_emission, total_emissions, EmissionAccumulator, EmissionCoefficients,
};
use routemix::experiment::{
    run_calibration, run_sweep, sort_calibration, summarize, sweep_demand, CalibrationGrid,
    CalibrationRow, ProviderSpec, SweepConfig,
};
use routemix::network::{synth_grid, EdgeIdx, EdgeRecord, Node, RoadNetwork, RoadType};
use routemix::routing::{
    fastest_path, path_cost, perturbation_curve, write_fixture, Fallback, RoutingError,
};
use routemix::seeds::rng_from;
use routemix::sim::{
    assign_departures, simulate, travel_times, write_trajectory_csv, ExtraVehiclesConfig,
    SimConfig, TrajectorySink,
};

/// Outcome of one criterion: the measured summary, or why it failed.
type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn c1_emission_polynomial() -> Check {
    let ones = EmissionCoefficients::new("ones", [1.0; 6]);
    let c = EmissionCoefficients::new("c", [42.5, 3.0, -2.0, 4.0, 1.0, 0.5]);
    let e = instantaneous_emission(&ones, 2.0, 1.0);
    ensure(e == 19.0, format!("E(ones, 2, 1) = {e}"))?;
    let e0 = instantaneous_emission(&c, 0.0, 0.0);
    ensure(e0 == 42.5, format!("E(c, 0, 0) = {e0}"))?;
    Ok(format!("E = {e}, E(0,0) = c0 = {e0}"))
}

fn brute_gini(x: &[f64]) -> f64 {
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

fn c2_gini_oracle() -> Check {
    let mut rng = rng_from(2);
    let mut worst = 0.0f64;
    for k in 0..200 {
        let n = rng.gen_range(1..=500);
        let x: Vec<f64> = (0..n)
            .map(|_| {
                // mix of heavy-tailed and flat vectors
                let u: f64 = rng.gen_range(0.0..1.0);
                if k % 2 == 0 { u } else { (1.0 - u).powf(-1.5) }
            })
            .collect();
        let d = (gini(&x).unwrap() - brute_gini(&x)).abs();
        worst = worst.max(d);
    }
    ensure(worst <= 1e-9, format!("max |Δ| = {worst:e}"))?;
    Ok(format!("200 vectors, max |fast - brute| = {worst:.1e}"))
}

fn c3_truncated_power_law() -> Check {
    let mut rng = rng_from(3);
    let x = sample_truncated_power_law(1.8, 1e-4, 1.0, 50_000, &mut rng).unwrap();
    let fits = fit_all_models(&x, 1.0).map_err(|e| e.to_string())?;
    let tpl = fits
        .iter()
        .find(|f| f.model == Model::TruncatedPowerLaw)
        .unwrap();
    let alpha = tpl.alpha.unwrap();
    let sel = select_best(&fits, &x).map_err(|e| e.to_string())?;
    ensure((alpha - 1.8).abs() <= 0.05, format!("alpha = {alpha}"))?;
    ensure(
        sel.winner == Model::TruncatedPowerLaw,
        format!("winner {:?} with wins {:?}", sel.winner, sel.wins),
    )?;
    Ok(format!(
        "alpha = {alpha:.4}, lambda = {:.2e}, winner truncated_power_law",
        tpl.lambda.unwrap()
    ))
}

fn c4_js_divergence() -> Check {
    let edges: Vec<f64> = (0..=4).map(f64::from).collect();
    let p = Histogram::new(edges.clone(), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let same = js_divergence(&p, &p).unwrap();
    ensure(same <= 1e-12, format!("JS(P,P) = {same:e}"))?;
    let a = Histogram::new(edges.clone(), vec![0.5, 0.5, 0.0, 0.0]).unwrap();
    let b = Histogram::new(edges, vec![0.0, 0.0, 0.25, 0.75]).unwrap();
    let disjoint = js_divergence(&a, &b).unwrap();
    ensure((disjoint - 1.0).abs() <= 1e-12, format!("disjoint JS = {disjoint}"))?;
    let mut rng = rng_from(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..50);
        let e: Vec<f64> = (0..=n).map(|k| k as f64).collect();
        let w1: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let w2: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let h1 = Histogram::from_weights(e.clone(), &w1).unwrap();
        let h2 = Histogram::from_weights(e, &w2).unwrap();
        worst = worst.max((js_divergence(&h1, &h2).unwrap() - js_divergence(&h2, &h1).unwrap()).abs());
    }
    ensure(worst <= 1e-15, format!("asymmetry {worst:e}"))?;
    Ok(format!("JS(P,P) = {same:e}, disjoint = {disjoint}, max asymmetry {worst:e}"))
}

fn c5_shortest_path_oracle() -> Check {
    let mut rng = rng_from(5);
    let (mut feasible, mut infeasible) = (0usize, 0usize);
    for _ in 0..100 {
        let n_nodes = rng.gen_range(3..12);
        let n_edges = rng.gen_range(3..=30);
        let net = common::random_network(&mut rng, n_nodes, n_edges);
        for o in net.edge_indices() {
            for d in net.edge_indices() {
                if o == d {
                    continue;
                }
                match (fastest_path(&net, "v", o, d), common::bellman_ford(&net, o, d)) {
                    (Ok(p), Some(best)) => {
                        let c = path_cost(&net, &p.edges);
                        ensure(
                            (c - best).abs() <= 1e-9 * best,
                            format!("cost {c} vs Bellman-Ford {best}"),
                        )?;
                        feasible += 1;
                    }
                    (Err(RoutingError::Unreachable { .. }), None) => infeasible += 1,
                    (r, b) => {
                        return Err(format!("router {:?} vs oracle {b:?}", r.map(|p| p.edges)))
                    }
                }
            }
        }
    }
    Ok(format!("{feasible} feasible pairs match, {infeasible} unreachable agree"))
}

fn c6_perturbation_trend() -> Check {
    let net = common::arterial_grid();
    let ws = [1.0, 2.0, 5.0, 10.0, 20.0];
    let rows = perturbation_curve(&net, 500, &ws, &mut rng_from(6)).map_err(|e| e.to_string())?;
    let sspd: Vec<f64> = rows.iter().map(|r| r.mean_sspd).collect();
    let rho = spearman(&ws, &sspd).unwrap();
    ensure(sspd[0] == 0.0, format!("SSPD at w=1 is {}", sspd[0]))?;
    ensure(rho >= 0.9, format!("Spearman {rho} for {sspd:?}"))?;
    let shown: Vec<String> = sspd.iter().map(|s| format!("{s:.1}")).collect();
    Ok(format!("mean SSPD [{}] m, rho = {rho:.3}", shown.join(", ")))
}

fn c7_simulator_physics() -> Check {
    let node = |id: &str, x: f64| Node {
        id: id.into(),
        x,
        y: 0.0,
        has_traffic_light: false,
    };
    let edge = |id: &str, a: &str, b: &str, len: f64| EdgeRecord {
        id: id.into(),
        from: a.into(),
        to: b.into(),
        length: len,
        speed_limit: 12.0,
        lanes: 1,
        road_type: RoadType::Residential,
        self_loop: false,
    };
    let net = RoadNetwork::new(
        vec![node("a", 0.0), node("b", 500.0), node("c", 1000.0)],
        vec![edge("ab", "a", "b", 500.0), edge("bc", "b", "c", 500.0)],
    )
    .unwrap();
    let quiet = SimConfig {
        sigma: 0.0,
        ..SimConfig::default()
    };

    // single vehicle against closed-form kinematics
    let one = common::routed(vec![("solo".into(), vec![EdgeIdx(0), EdgeIdx(1)])]);
    let sched = routemix::sim::DepartureSchedule { times: vec![0.0] };
    let (log, stats) = simulate(&net, &one, &sched, &quiet, &[], 1).map_err(|e| e.to_string())?;
    let (a, v, len) = (quiet.accel, 12.0, 1000.0);
    let expected = v / a + (len - v * v / (2.0 * a)) / v;
    let tt = travel_times(&log)[0].1;
    ensure((tt - expected).abs() <= 2.0 * quiet.dt, format!("travel time {tt} vs {expected}"))?;
    ensure(stats.is_conserved(), "conservation (single)")?;

    // two vehicles on one path with driver noise
    let cfg = SimConfig::default();
    let path = vec![EdgeIdx(0), EdgeIdx(1)];
    let two = common::routed(vec![("lead".into(), path.clone()), ("follow".into(), path)]);
    let sched = routemix::sim::DepartureSchedule {
        times: vec![0.0, 1.0],
    };
    let (log, stats) = simulate(&net, &two, &sched, &cfg, &[], 7).map_err(|e| e.to_string())?;
    ensure(stats.is_conserved() && stats.arrived == 2, "conservation (pair)")?;
    let mut at: std::collections::BTreeMap<u64, [Option<(usize, f64)>; 2]> = Default::default();
    for r in &log.records {
        at.entry(r.time.to_bits()).or_default()[r.vehicle] = Some((r.edge.0, r.pos));
    }
    let mut min_gap = f64::INFINITY;
    for [l, f] in at.values() {
        if let (Some((le, lp)), Some((fe, fp))) = (l, f) {
            let lead_abs = *le as f64 * 500.0 + lp;
            let follow_abs = *fe as f64 * 500.0 + fp;
            min_gap = min_gap.min(lead_abs - follow_abs - cfg.vehicle_length);
        }
    }
    ensure(min_gap >= cfg.min_gap - 1e-9, format!("gap {min_gap} < min_gap"))?;

    // conservation and byte-identical logs on a busy grid
    let grid = synth_grid(5, 5, 100.0, 13.9, Some(2)).unwrap();
    let mut rng = rng_from(77);
    let d = common::random_fastest_demand(&grid, 300, &mut rng);
    let busy = SimConfig {
        horizon: 120.0,
        ..SimConfig::default()
    };
    let sched = assign_departures(&d, busy.horizon, &mut rng).unwrap();
    let run = || -> Result<Vec<u8>, String> {
        let (log, stats) = simulate(&grid, &d, &sched, &busy, &[], 99).map_err(|e| e.to_string())?;
        ensure(stats.is_conserved(), format!("conservation (grid) {stats:?}"))?;
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &log, &grid).map_err(|e| e.to_string())?;
        Ok(buf)
    };
    let (x, y) = (run()?, run()?);
    ensure(x == y, "trajectory logs differ between identical runs")?;
    Ok(format!(
        "free-flow {tt:.2} s vs {expected:.2} s, min gap {min_gap:.2} m, logs identical ({} bytes)",
        x.len()
    ))
}

fn c8_mass_conservation() -> Check {
    let net = synth_grid(5, 5, 100.0, 13.9, Some(3)).unwrap();
    let mut rng = rng_from(8);
    let d = common::random_fastest_demand(&net, 100, &mut rng);
    let cfg = SimConfig {
        horizon: 300.0,
        ..SimConfig::default()
    };
    let sched = assign_departures(&d, cfg.horizon, &mut rng).unwrap();
    let (log, _) = simulate(&net, &d, &sched, &cfg, &[], 8).map_err(|e| e.to_string())?;
    let coef = EmissionCoefficients::default_passenger_car();
    let g = aggregate(&log, &coef, &net, cfg.dt).map_err(|e| e.to_string())?;
    let mut acc = EmissionAccumulator::new(&net, &coef, cfg.dt).unwrap();
    for r in &log.records {
        acc.record(r);
    }
    let (edges, flat) = (total_emissions(&g), acc.flat_total());
    let rel = (edges - flat).abs() / flat;
    ensure(rel <= 1e-9, format!("relative difference {rel:e}"))?;
    Ok(format!("{} records, {edges:.6e} mg, rel diff {rel:.1e}", log.records.len()))
}

fn c9_mixing_curve() -> Check {
    let net = common::arterial_grid();
    let grid = TileGrid::covering(&net, 400.0).unwrap();
    let records_cfg = SyntheticRecordsConfig {
        n_records: 5000,
        ..SyntheticRecordsConfig::default()
    };
    let records = synth_trip_records(&grid, &records_cfg, &mut rng_from(1)).unwrap();
    let od = estimate_od(&records, &grid).unwrap();

    // the "navigation app" replays fastest paths from fixture files
    let fixtures = tempfile::tempdir().map_err(|e| e.to_string())?;
    let provider = ProviderSpec::Fixture {
        dir: fixtures.path().to_path_buf(),
        fallback: Fallback::Error,
    };
    let mut cfg = SweepConfig::new("APP", provider, 2000, 5.0);
    cfg.horizon = 900.0;
    cfg.sim.drain_factor = 20.0;
    let mut seen = HashSet::new();
    for rep in 0..cfg.repetitions {
        for t in sweep_demand(&cfg, &net, &od, &grid, rep).map_err(|e| e.to_string())?.trips {
            if seen.insert((t.origin_edge, t.dest_edge)) {
                let p = fastest_path(&net, "fixture", t.origin_edge, t.dest_edge)
                    .map_err(|e| e.to_string())?;
                write_fixture(fixtures.path(), &net, &p.edges).map_err(|e| e.to_string())?;
            }
        }
    }

    let res = run_sweep(&cfg, &net, &od, &grid, None).map_err(|e| e.to_string())?;
    ensure(res.failures() == 0, format!("{} failed cells", res.failures()))?;
    let means: Vec<f64> = summarize(&res)
        .iter()
        .map(|s| s.total_co2_mean.unwrap())
        .collect();
    let (best_i, best) = (3..=7)
        .map(|i| (i, means[i]))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let curve: Vec<String> = means.iter().map(|m| format!("{:.4}", m / 1e9)).collect();
    ensure(
        best <= means[0] && best <= means[10],
        format!("best i={best_i} {best:.4e} vs i=0 {:.4e}, i=10 {:.4e}; curve [{}] t", means[0], means[10], curve.join(", ")),
    )?;
    Ok(format!(
        "mean total CO2 (t) by i: [{}]; best intermediate i={best_i}",
        curve.join(", ")
    ))
}

fn c10_calibration() -> Check {
    let net = synth_grid(6, 6, 200.0, 13.89, Some(2)).unwrap();
    let grid = TileGrid::covering(&net, 400.0).unwrap();
    let records_cfg = SyntheticRecordsConfig {
        n_records: 2000,
        horizon: 600.0,
        ..SyntheticRecordsConfig::default()
    };
    let records = synth_trip_records(&grid, &records_cfg, &mut rng_from(10)).unwrap();
    let od = estimate_od(&records, &grid).unwrap();
    let real: Vec<f64> = records.iter().map(|r| r.travel_time()).collect();
    let cal = CalibrationGrid {
        n_values: vec![150, 400],
        w_values: vec![1.0, 10.0],
        extra_values: vec![ExtraVehiclesConfig::NONE],
        runs: 3,
        master_seed: 10,
        horizon: 600.0,
        ..CalibrationGrid::default()
    };
    let rows = run_calibration(&cal, &net, &od, &grid, &real).map_err(|e| e.to_string())?;
    ensure(rows.len() == 4, format!("{} rows", rows.len()))?;
    let key = |r: &CalibrationRow| (r.js.unwrap(), r.abs_dtt.unwrap(), r.teleports.unwrap());
    for (k, r) in rows.iter().enumerate() {
        ensure(r.status == "ok" && r.rank == Some(k + 1), format!("row {k}: {r:?}"))?;
    }
    for w in rows.windows(2) {
        let (a, b) = (key(&w[0]), key(&w[1]));
        ensure(
            a.0 < b.0 || (a.0 == b.0 && (a.1 < b.1 || (a.1 == b.1 && a.2 <= b.2))),
            format!("rows out of order: {a:?} before {b:?}"),
        )?;
    }

    // tie-break on equal JS and a failed cell
    let mk = |js: Option<f64>, dtt: f64, tp: f64| CalibrationRow {
        rank: None,
        n: 0,
        w: 1.0,
        extra: ExtraVehiclesConfig::NONE,
        js,
        abs_dtt: js.map(|_| dtt),
        teleports: js.map(|_| tp),
        runs_ok: usize::from(js.is_some()),
        runs_failed: usize::from(js.is_none()),
        status: if js.is_some() { "ok" } else { "failed" }.into(),
        error: None,
    };
    let mut synthetic = vec![mk(None, 0.0, 0.0), mk(Some(0.2), 9.0, 1.0), mk(Some(0.2), 3.0, 5.0), mk(Some(0.2), 3.0, 4.0)];
    sort_calibration(&mut synthetic);
    let order: Vec<(Option<f64>, Option<f64>)> = synthetic.iter().map(|r| (r.abs_dtt, r.teleports)).collect();
    ensure(
        order == vec![(Some(3.0), Some(4.0)), (Some(3.0), Some(5.0)), (Some(9.0), Some(1.0)), (None, None)]
            && synthetic[3].rank.is_none(),
        format!("tie-break order {order:?}"),
    )?;
    let best = &rows[0];
    Ok(format!(
        "4 ranked rows, best N={} w={} JS={:.4} |dtt|={:.1} s",
        best.n,
        best.w,
        best.js.unwrap(),
        best.abs_dtt.unwrap()
    ))
}

struct Criterion {
    id: u8,
    name: &'static str,
    limit: Duration,
    run: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "emission polynomial", limit: Duration::from_millis(1), run: c1_emission_polynomial },
        Criterion { id: 2, name: "Gini oracle equivalence", limit: Duration::from_secs(5), run: c2_gini_oracle },
        Criterion { id: 3, name: "truncated power-law recovery", limit: Duration::from_secs(60), run: c3_truncated_power_law },
        Criterion { id: 4, name: "JS divergence", limit: Duration::from_secs(1), run: c4_js_divergence },
        Criterion { id: 5, name: "shortest-path oracle", limit: Duration::from_secs(30), run: c5_shortest_path_oracle },
        Criterion { id: 6, name: "perturbation trend", limit: Duration::from_secs(120), run: c6_perturbation_trend },
        Criterion { id: 7, name: "simulator physics", limit: Duration::from_secs(10), run: c7_simulator_physics },
        Criterion { id: 8, name: "mass conservation", limit: Duration::from_secs(5), run: c8_mass_conservation },
        Criterion { id: 9, name: "mixing curve minimum at intermediate i", limit: Duration::from_secs(900), run: c9_mixing_curve },
        Criterion { id: 10, name: "calibration table ordering", limit: Duration::from_secs(600), run: c10_calibration },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.id.to_string() == *f || c.name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|m| {
            if elapsed <= c.limit {
                Ok(m)
            } else {
                Err(format!("{m}; runtime {elapsed:.2?} exceeds {:?}", c.limit))
            }
        });
        match outcome {
            Ok(m) => println!("ACCEPTANCE {:>2} PASS  {} ({elapsed:.2?}): {m}", c.id, c.name),
            Err(m) => {
                failed += 1;
                println!("ACCEPTANCE {:>2} FAIL  {} ({elapsed:.2?}): {m}", c.id, c.name);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
