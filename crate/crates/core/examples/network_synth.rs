//! Builds a signalized grid with arterials, prunes it to its largest strongly
//! connected component and round-trips it through JSON.

use routemix::network::{largest_scc, synth_grid_with, GridOptions, RoadNetwork};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = synth_grid_with(&GridOptions {
        light_period: Some(2),
        arterial_every: Some(3),
        arterial_speed: Some(13.89),
        ..GridOptions::new(6, 6, 200.0, 8.33)
    })?;
    let core = largest_scc(&net)?;
    println!(
        "grid: {} nodes, {} edges ({} in the largest SCC)",
        net.node_count(),
        net.edge_count(),
        core.edge_count()
    );
    let lights = net.nodes().iter().filter(|n| n.has_traffic_light).count();
    println!("signalized intersections: {lights}");

    let again = RoadNetwork::from_json_str(&net.to_json_string())?;
    assert_eq!(again.edge_count(), net.edge_count());
    let first = net.edge(net.edge_indices().next().unwrap());
    println!(
        "first edge {}: {:.0} m at {:.2} m/s, free-flow {:.1} s",
        first.id,
        first.length,
        first.speed_limit,
        first.free_flow_time()
    );
    Ok(())
}
