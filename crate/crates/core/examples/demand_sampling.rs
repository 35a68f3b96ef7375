//! Tiles a network, estimates an OD matrix from synthetic trip records and
//! samples a mobility demand from it.

use routemix::demand::{estimate_od, sample_demand, synth_trip_records, SyntheticRecordsConfig, TileGrid};
use routemix::network::synth_grid;
use routemix::seeds::rng_from;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = synth_grid(8, 8, 200.0, 13.89, None)?;
    let grid = TileGrid::covering(&net, 500.0)?;
    let mut rng = rng_from(42);
    let records = synth_trip_records(&grid, &SyntheticRecordsConfig::default(), &mut rng)?;
    let od = estimate_od(&records, &grid)?;
    println!(
        "{} tiles, {} records, {} non-empty OD cells",
        grid.tile_count(),
        records.len(),
        od.len()
    );

    let mut top: Vec<_> = od.entries().collect();
    top.sort_by_key(|&(_, _, c)| std::cmp::Reverse(c));
    for (o, d, c) in top.iter().take(5) {
        println!("  ({},{}) -> ({},{}): {c}", o.row, o.col, d.row, d.col);
    }

    let demand = sample_demand(&od, &net, &grid, 1000, &mut rng)?;
    let t = &demand.trips[0];
    println!(
        "sampled {} trips; first {} -> {}",
        demand.len(),
        net.edge(t.origin_edge).id,
        net.edge(t.dest_edge).id
    );
    Ok(())
}
