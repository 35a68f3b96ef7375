//! Grid search over fleet size and perturbation strength, ranked by how well
//! simulated travel times match observed ones.

use routemix::demand::{estimate_od, synth_trip_records, SyntheticRecordsConfig, TileGrid};
use routemix::experiment::{run_calibration, CalibrationGrid};
use routemix::network::synth_grid;
use routemix::seeds::rng_from;
use routemix::sim::ExtraVehiclesConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = synth_grid(6, 6, 200.0, 13.89, Some(2))?;
    let grid = TileGrid::covering(&net, 400.0)?;
    let cfg = SyntheticRecordsConfig {
        n_records: 2000,
        horizon: 600.0,
        ..SyntheticRecordsConfig::default()
    };
    let records = synth_trip_records(&grid, &cfg, &mut rng_from(1))?;
    let od = estimate_od(&records, &grid)?;
    let real: Vec<f64> = records.iter().map(|r| r.travel_time()).collect();

    let cal = CalibrationGrid {
        n_values: vec![100, 300, 600],
        w_values: vec![1.0, 5.0],
        extra_values: vec![ExtraVehiclesConfig::NONE, ExtraVehiclesConfig { start_pct: 0, end_pct: 15 }],
        runs: 2,
        horizon: 600.0,
        ..CalibrationGrid::default()
    };
    println!("rank, N, w, extra, JS, |dtt|, teleports");
    for r in run_calibration(&cal, &net, &od, &grid, &real)? {
        println!(
            "{:?}, {}, {}, {}_{}, {:.4}, {:.1}, {:.1}",
            r.rank,
            r.n,
            r.w,
            r.extra.start_pct,
            r.extra.end_pct,
            r.js.unwrap_or(f64::NAN),
            r.abs_dtt.unwrap_or(f64::NAN),
            r.teleports.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
