//! Routes a sampled demand with half the fleet on a navigation app and runs
//! the microscopic simulator.

use routemix::demand::{estimate_od, sample_demand, synth_trip_records, SyntheticRecordsConfig, TileGrid};
use routemix::network::synth_grid;
use routemix::routing::{route_demand, FastestProvider};
use routemix::seeds::rng_from;
use routemix::sim::{assign_departures, simulate, travel_times, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = synth_grid(8, 8, 200.0, 13.89, Some(2))?;
    let grid = TileGrid::covering(&net, 400.0)?;
    let mut rng = rng_from(3);
    let records = synth_trip_records(&grid, &SyntheticRecordsConfig::default(), &mut rng)?;
    let od = estimate_od(&records, &grid)?;
    let demand = sample_demand(&od, &net, &grid, 500, &mut rng)?;

    let routed = route_demand(&net, &demand, 5, &FastestProvider, 5.0, &mut rng)?;
    let cfg = SimConfig {
        horizon: 600.0,
        ..SimConfig::default()
    };
    let sched = assign_departures(&routed, cfg.horizon, &mut rng)?;
    let (log, stats) = simulate(&net, &routed, &sched, &cfg, &[], 3)?;

    println!("{stats:?}");
    let tt = travel_times(&log);
    let mean = tt.iter().map(|(_, t)| t).sum::<f64>() / tt.len() as f64;
    println!("{} arrivals, mean travel time {mean:.1} s, {} log records", tt.len(), log.records.len());
    Ok(())
}
