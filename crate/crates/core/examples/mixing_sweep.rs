//! Sweeps the navigation share `i` (tenths of the fleet on the app) and prints
//! the mean total CO2 and its Gini coefficient per share.

use routemix::demand::{estimate_od, synth_trip_records, SyntheticRecordsConfig, TileGrid};
use routemix::experiment::{run_sweep, summarize, ProviderSpec, SweepConfig};
use routemix::network::{synth_grid_with, GridOptions};
use routemix::seeds::rng_from;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = synth_grid_with(&GridOptions {
        light_period: Some(1),
        arterial_every: Some(3),
        arterial_speed: Some(13.89),
        arterial_lanes: Some(1),
        ..GridOptions::new(8, 8, 200.0, 8.33)
    })?;
    let grid = TileGrid::covering(&net, 400.0)?;
    let records = synth_trip_records(&grid, &SyntheticRecordsConfig::default(), &mut rng_from(1))?;
    let od = estimate_od(&records, &grid)?;

    let mut cfg = SweepConfig::new("fastest", ProviderSpec::Fastest, 800, 5.0);
    cfg.i_values = vec![0, 2, 4, 6, 8, 10];
    cfg.repetitions = 3;
    cfg.horizon = 600.0;
    let res = run_sweep(&cfg, &net, &od, &grid, None)?;

    println!("i, mean CO2 (kg), std, Gini");
    for s in summarize(&res) {
        println!(
            "{}, {:.2}, {:.2}, {:.3}",
            s.i,
            s.total_co2_mean.unwrap_or(f64::NAN) / 1e6,
            s.total_co2_std.unwrap_or(f64::NAN) / 1e6,
            s.gini_mean.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
