#![allow(dead_code)]

use rand::Rng;
use routemix::network::{
    synth_grid_with, EdgeIdx, EdgeRecord, GridOptions, Node, RoadNetwork, RoadType,
};
use routemix::routing::{Provider, RoutedDemand, RoutedPath};

pub fn node(id: &str, x: f64, y: f64) -> Node {
    Node {
        id: id.into(),
        x,
        y,
        has_traffic_light: false,
    }
}

pub fn edge(id: &str, from: &str, to: &str, length: f64, speed: f64) -> EdgeRecord {
    EdgeRecord {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        length,
        speed_limit: speed,
        lanes: 1,
        road_type: RoadType::Residential,
        self_loop: false,
    }
}

/// s → (a | b) → t with two equal-cost branches, plus entry and exit edges.
pub fn diamond() -> RoadNetwork {
    RoadNetwork::new(
        vec![
            node("o", -100.0, 0.0),
            node("s", 0.0, 0.0),
            node("a", 100.0, 100.0),
            node("b", 100.0, -100.0),
            node("t", 200.0, 0.0),
            node("z", 300.0, 0.0),
        ],
        vec![
            edge("in", "o", "s", 100.0, 10.0),
            edge("sa", "s", "a", 141.0, 10.0),
            edge("sb", "s", "b", 141.0, 10.0),
            edge("at", "a", "t", 141.0, 10.0),
            edge("bt", "b", "t", 141.0, 10.0),
            edge("out", "t", "z", 100.0, 10.0),
        ],
    )
    .unwrap()
}

/// Random directed graph on a plane without self-loops.
pub fn random_network<R: Rng>(rng: &mut R, n_nodes: usize, n_edges: usize) -> RoadNetwork {
    let nodes: Vec<Node> = (0..n_nodes)
        .map(|k| node(&format!("n{k}"), rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0)))
        .collect();
    let edges: Vec<EdgeRecord> = (0..n_edges)
        .map(|k| {
            let a = rng.gen_range(0..n_nodes);
            let mut b = rng.gen_range(0..n_nodes);
            while b == a {
                b = rng.gen_range(0..n_nodes);
            }
            edge(
                &format!("e{k}"),
                &format!("n{a}"),
                &format!("n{b}"),
                rng.gen_range(10.0..500.0),
                rng.gen_range(5.0..30.0),
            )
        })
        .collect();
    RoadNetwork::new(nodes, edges).unwrap()
}

/// Least free-flow cost of any edge walk from `o` to `d`, both edges included.
pub fn bellman_ford(net: &RoadNetwork, o: EdgeIdx, d: EdgeIdx) -> Option<f64> {
    let n = net.edge_count();
    let mut dist = vec![f64::INFINITY; n];
    dist[o.0] = net.edge(o).free_flow_time();
    for _ in 0..n {
        let mut changed = false;
        for e in net.edge_indices() {
            if !dist[e.0].is_finite() {
                continue;
            }
            for &s in net.successors(e) {
                let c = dist[e.0] + net.edge(s).free_flow_time();
                if c < dist[s.0] {
                    dist[s.0] = c;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    dist[d.0].is_finite().then_some(dist[d.0])
}

/// 10×10 grid of 30 km/h streets with single-lane 50 km/h arterials on every
/// third row and column and a signal at every intersection. Fastest paths
/// pile onto the arterials, which saturate under peak demand.
pub fn arterial_grid() -> RoadNetwork {
    synth_grid_with(&GridOptions {
        light_period: Some(1),
        arterial_every: Some(3),
        arterial_speed: Some(13.89),
        arterial_lanes: Some(1),
        ..GridOptions::new(10, 10, 200.0, 8.33)
    })
    .unwrap()
}

pub fn routed(paths: Vec<(String, Vec<EdgeIdx>)>) -> RoutedDemand {
    RoutedDemand {
        paths: paths
            .into_iter()
            .map(|(vehicle_id, edges)| RoutedPath {
                vehicle_id,
                edges,
                provider: Provider::Fastest,
            })
            .collect(),
        mix_fraction: 10,
        provider_name: "fastest".into(),
    }
}

/// `n` vehicles on random fastest paths of `net`.
pub fn random_fastest_demand<R: Rng>(net: &RoadNetwork, n: usize, rng: &mut R) -> RoutedDemand {
    let mut paths = Vec::with_capacity(n);
    while paths.len() < n {
        let a = EdgeIdx(rng.gen_range(0..net.edge_count()));
        let b = EdgeIdx(rng.gen_range(0..net.edge_count()));
        if a == b {
            continue;
        }
        let id = format!("v{}", paths.len());
        if let Ok(p) = routemix::routing::fastest_path(net, &id, a, b) {
            paths.push((id, p.edges));
        }
    }
    routed(paths)
}
