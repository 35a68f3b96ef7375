//! Per-edge CO2 from a simulated trajectory log, its inequality, and a GeoJSON
//! export of emissions per meter.

use routemix::analysis::gini;
use routemix::emissions::{aggregate, instantaneous_emission, to_geojson, total_emissions, EmissionCoefficients, GeoValues};
use routemix::network::{synth_grid, EdgeIdx};
use routemix::routing::{fastest_path, RoutedDemand, RoutedPath, Provider};
use routemix::seeds::rng_from;
use routemix::sim::{assign_departures, simulate, SimConfig};
use rand::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let coef = EmissionCoefficients::default_passenger_car();
    for (s, a) in [(0.0, 0.0), (13.89, 0.0), (10.0, 1.0)] {
        println!("E(s={s}, a={a}) = {:.1} mg/s", instantaneous_emission(&coef, s, a));
    }

    let net = synth_grid(6, 6, 200.0, 13.89, Some(2))?;
    let mut rng = rng_from(11);
    let mut paths = Vec::new();
    while paths.len() < 300 {
        let o = EdgeIdx(rng.gen_range(0..net.edge_count()));
        let d = EdgeIdx(rng.gen_range(0..net.edge_count()));
        let id = format!("v{}", paths.len());
        if let Ok(p) = fastest_path(&net, &id, o, d) {
            paths.push(RoutedPath { vehicle_id: id, edges: p.edges, provider: Provider::Fastest });
        }
    }
    let routed = RoutedDemand { paths, mix_fraction: 10, provider_name: "fastest".into() };
    let cfg = SimConfig { horizon: 300.0, ..SimConfig::default() };
    let sched = assign_departures(&routed, cfg.horizon, &mut rng)?;
    let (log, _) = simulate(&net, &routed, &sched, &cfg, &[], 11)?;

    let g = aggregate(&log, &coef, &net, cfg.dt)?;
    let busy: Vec<f64> = g.masses().iter().copied().filter(|&m| m > 0.0).collect();
    println!(
        "total {:.3} kg CO2 over {} edges, Gini {:.3}",
        total_emissions(&g) / 1e6,
        busy.len(),
        gini(&busy)?
    );
    let geo = to_geojson(&net, GeoValues::PerMeter(&g))?;
    println!("GeoJSON features: {}", geo["features"].as_array().map_or(0, Vec::len));
    Ok(())
}
