//! Fastest versus perturbed paths, and how far perturbation moves a route as
//! the strength `w` grows.

use routemix::network::{synth_grid, EdgeIdx};
use routemix::routing::{fastest_path, path_cost, perturbation_curve, perturbed_fastest_path, sspd};
use routemix::seeds::rng_from;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = synth_grid(10, 10, 200.0, 13.89, None)?;
    let (o, d) = (EdgeIdx(0), EdgeIdx(net.edge_count() - 1));
    let mut rng = rng_from(7);

    let fast = fastest_path(&net, "v0", o, d)?;
    println!("fastest: {} edges, {:.1} s", fast.edges.len(), path_cost(&net, &fast.edges));
    for w in [1.0, 5.0, 20.0] {
        let p = perturbed_fastest_path(&net, "v0", o, d, w, &mut rng)?;
        println!(
            "w={w:>4}: {} edges, {:.1} s, SSPD to fastest {:.1} m",
            p.edges.len(),
            path_cost(&net, &p.edges),
            sspd(&net, &p.edges, &fast.edges)
        );
    }

    println!("w, mean SSPD (m)");
    for row in perturbation_curve(&net, 200, &[1.0, 2.0, 5.0, 10.0, 20.0], &mut rng)? {
        println!("{}, {:.2}", row.w, row.mean_sspd);
    }
    Ok(())
}
