//! Edge-to-edge routing.
//!
//! Paths include both the origin and the destination edge. Costs are sums of
//! per-edge weights over the whole path (free-flow travel time, or a
//! multiplicatively perturbed version of it). Among equal-cost paths the
//! lexicographically smallest edge-id sequence wins, so every router here is
//! a deterministic function of its inputs and seed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{MobilityDemand, Trip};
use crate::network::{EdgeIdx, NetworkError, RoadNetwork};
use crate::seeds::{derived_rng, label_hash};

#[derive(Debug, Error)]
pub enum RoutingError {
    #[error("edge {to:?} is unreachable from edge {from:?}")]
    Unreachable { from: String, to: String },
    #[error("perturbation strength w must be >= 1, got {0}")]
    InvalidStrength(f64),
    #[error("mixing fraction must be in 0..=10, got {0}")]
    InvalidFraction(u8),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("no route fixture for {from:?} -> {to:?} at {path}")]
    MissingFixture {
        from: String,
        to: String,
        path: PathBuf,
    },
    #[error("navigation provider {provider:?} failed: {message}")]
    Provider { provider: String, message: String },
    #[error("routing vehicle {vehicle_id:?} failed: {source}")]
    Vehicle {
        vehicle_id: String,
        #[source]
        source: Box<RoutingError>,
    },
    #[error("demand is empty")]
    EmptyDemand,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Which router produced a path.
#[derive(Debug, Clone, PartialEq)]
pub enum Provider {
    Fastest,
    Perturbed(f64),
    External(String),
}

impl Provider {
    /// Anything that is not a perturbed fastest path counts as navigation-routed.
    pub fn is_navigation(&self) -> bool {
        !matches!(self, Provider::Perturbed(_))
    }
}

impl fmt::Display for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provider::Fastest => f.write_str("FASTEST"),
            Provider::Perturbed(w) => write!(f, "PERTURBED({w})"),
            Provider::External(name) => write!(f, "EXTERNAL({name})"),
        }
    }
}

impl FromStr for Provider {
    type Err = RoutingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RoutingError::InvalidPath(format!("unknown provider tag {s:?}"));
        if s == "FASTEST" {
            return Ok(Provider::Fastest);
        }
        let inner = |prefix: &str| {
            s.strip_prefix(prefix)
                .and_then(|rest| rest.strip_suffix(')'))
                .map(str::to_string)
        };
        if let Some(w) = inner("PERTURBED(") {
            return w.parse().map(Provider::Perturbed).map_err(|_| bad());
        }
        if let Some(name) = inner("EXTERNAL(") {
            return Ok(Provider::External(name));
        }
        Err(bad())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutedPath {
    pub vehicle_id: String,
    pub edges: Vec<EdgeIdx>,
    pub provider: Provider,
}

/// Checks adjacency, endpoints and the no-consecutive-repeat rule.
pub fn validate_path(
    net: &RoadNetwork,
    edges: &[EdgeIdx],
    e_o: Option<EdgeIdx>,
    e_d: Option<EdgeIdx>,
) -> Result<(), RoutingError> {
    let (first, last) = match (edges.first(), edges.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(RoutingError::InvalidPath("empty path".into())),
    };
    if let Some(&bad) = edges.iter().find(|e| e.0 >= net.edge_count()) {
        return Err(RoutingError::InvalidPath(format!("edge index {} out of range", bad.0)));
    }
    if let Some(o) = e_o.filter(|&o| o != first) {
        return Err(RoutingError::InvalidPath(format!(
            "starts at {:?}, expected {:?}",
            net.edge(first).id,
            net.edge(o).id
        )));
    }
    if let Some(d) = e_d.filter(|&d| d != last) {
        return Err(RoutingError::InvalidPath(format!(
            "ends at {:?}, expected {:?}",
            net.edge(last).id,
            net.edge(d).id
        )));
    }
    for pair in edges.windows(2) {
        let (a, b) = (net.edge(pair[0]), net.edge(pair[1]));
        if pair[0] == pair[1] {
            return Err(RoutingError::InvalidPath(format!("edge {:?} repeated", a.id)));
        }
        if a.to != b.from {
            return Err(RoutingError::InvalidPath(format!(
                "{:?} does not connect to {:?}",
                a.id, b.id
            )));
        }
    }
    Ok(())
}

/// Total free-flow travel time along a path.
pub fn path_cost(net: &RoadNetwork, edges: &[EdgeIdx]) -> f64 {
    edges.iter().map(|&e| net.edge(e).free_flow_time()).sum()
}

pub fn free_flow_weights(net: &RoadNetwork) -> Vec<f64> {
    net.edges().iter().map(|e| e.free_flow_time()).collect()
}

#[derive(Copy, Clone, PartialEq)]
struct HeapItem {
    cost: f64,
    edge: EdgeIdx,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.edge.cmp(&self.edge))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over the edge graph. Forward: `dist[e]` is the cost from `source`
/// through `e`, both inclusive. Backward: `dist[e]` is the cost of the edges
/// strictly after `e` up to and including `source`. Stops once costs exceed
/// `bound`.
fn edge_dijkstra(
    net: &RoadNetwork,
    weights: &[f64],
    source: EdgeIdx,
    forward: bool,
    stop_at: Option<EdgeIdx>,
    bound: f64,
) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; net.edge_count()];
    let start = if forward { weights[source.0] } else { 0.0 };
    dist[source.0] = start;
    let mut heap = BinaryHeap::new();
    heap.push(HeapItem {
        cost: start,
        edge: source,
    });
    while let Some(HeapItem { cost, edge }) = heap.pop() {
        if cost > dist[edge.0] {
            continue;
        }
        if Some(edge) == stop_at || cost > bound {
            break;
        }
        let next: &[EdgeIdx] = if forward {
            net.successors(edge)
        } else {
            net.incoming(net.edge(edge).from)
        };
        for &f in next {
            let c = if forward {
                cost + weights[f.0]
            } else {
                cost + weights[edge.0]
            };
            if c < dist[f.0] {
                dist[f.0] = c;
                heap.push(HeapItem { cost: c, edge: f });
            }
        }
    }
    dist
}

/// Minimum-cost path from `e_o` to `e_d` under arbitrary positive edge weights,
/// ties broken towards the lexicographically smallest edge-id sequence.
pub fn shortest_path_with_weights(
    net: &RoadNetwork,
    weights: &[f64],
    e_o: EdgeIdx,
    e_d: EdgeIdx,
) -> Result<Vec<EdgeIdx>, RoutingError> {
    if e_o == e_d {
        return Ok(vec![e_o]);
    }
    let fwd = edge_dijkstra(net, weights, e_o, true, Some(e_d), f64::INFINITY);
    let total = fwd[e_d.0];
    if !total.is_finite() {
        return Err(RoutingError::Unreachable {
            from: net.edge(e_o).id.clone(),
            to: net.edge(e_d).id.clone(),
        });
    }
    let tol = 1e-9 * total.max(1.0);
    let bwd = edge_dijkstra(net, weights, e_d, false, None, total + tol);

    // Forward distances are only final for edges settled before e_d; any edge on
    // a shortest path has fwd + bwd == total and was settled (cost <= total).
    let on_shortest = |f: EdgeIdx| (fwd[f.0] + bwd[f.0] - total).abs() <= tol;
    let mut path = vec![e_o];
    let mut cur = e_o;
    while cur != e_d {
        let next = net
            .successors(cur)
            .iter()
            .copied()
            .filter(|&f| (fwd[cur.0] + weights[f.0] - fwd[f.0]).abs() <= tol && on_shortest(f))
            .min_by(|&a, &b| net.edge(a).id.cmp(&net.edge(b).id))
            .expect("a shortest-path successor always exists");
        path.push(next);
        cur = next;
        if path.len() > net.edge_count() {
            unreachable!("shortest path reconstruction looped");
        }
    }
    Ok(path)
}

/// Fastest path under free-flow travel times.
pub fn fastest_path(
    net: &RoadNetwork,
    vehicle_id: &str,
    e_o: EdgeIdx,
    e_d: EdgeIdx,
) -> Result<RoutedPath, RoutingError> {
    let edges = shortest_path_with_weights(net, &free_flow_weights(net), e_o, e_d)?;
    Ok(RoutedPath {
        vehicle_id: vehicle_id.to_string(),
        edges,
        provider: Provider::Fastest,
    })
}

/// Fastest path after multiplying every edge's free-flow time by an independent
/// `Uniform[1, w]` factor. `w == 1` gives exactly the fastest path.
pub fn perturbed_fastest_path<R: Rng + ?Sized>(
    net: &RoadNetwork,
    vehicle_id: &str,
    e_o: EdgeIdx,
    e_d: EdgeIdx,
    w: f64,
    rng: &mut R,
) -> Result<RoutedPath, RoutingError> {
    if !(w >= 1.0) || !w.is_finite() {
        return Err(RoutingError::InvalidStrength(w));
    }
    let mut weights = free_flow_weights(net);
    if w > 1.0 {
        for wt in weights.iter_mut() {
            *wt *= 1.0 + (w - 1.0) * rng.gen::<f64>();
        }
    }
    let edges = shortest_path_with_weights(net, &weights, e_o, e_d)?;
    Ok(RoutedPath {
        vehicle_id: vehicle_id.to_string(),
        edges,
        provider: Provider::Perturbed(w),
    })
}

/// A navigation service that suggests a path between two edges.
pub trait NavigationProvider: Sync {
    fn name(&self) -> &str;

    fn suggest(
        &self,
        net: &RoadNetwork,
        e_o: EdgeIdx,
        e_d: EdgeIdx,
    ) -> Result<Vec<EdgeIdx>, RoutingError>;

    /// Tag stored on the paths this provider produces.
    fn tag(&self) -> Provider {
        Provider::External(self.name().to_string())
    }
}

/// The built-in fastest-path router used as a navigation app.
#[derive(Debug, Clone, Copy, Default)]
pub struct FastestProvider;

impl NavigationProvider for FastestProvider {
    fn name(&self) -> &str {
        "fastest"
    }

    fn suggest(
        &self,
        net: &RoadNetwork,
        e_o: EdgeIdx,
        e_d: EdgeIdx,
    ) -> Result<Vec<EdgeIdx>, RoutingError> {
        shortest_path_with_weights(net, &free_flow_weights(net), e_o, e_d)
    }

    fn tag(&self) -> Provider {
        Provider::Fastest
    }
}

/// What to do when a fixture for an OD pair is missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fallback {
    #[default]
    Error,
    Fastest,
}

impl FromStr for Fallback {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "error" => Ok(Fallback::Error),
            "fastest" => Ok(Fallback::Fastest),
            other => Err(format!("unknown fallback {other:?} (expected error|fastest)")),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FixtureBody {
    Bare(Vec<String>),
    Wrapped { edges: Vec<String> },
}

impl FixtureBody {
    fn into_ids(self) -> Vec<String> {
        match self {
            FixtureBody::Bare(ids) | FixtureBody::Wrapped { edges: ids } => ids,
        }
    }
}

fn resolve_ids(
    net: &RoadNetwork,
    provider: &str,
    ids: &[String],
) -> Result<Vec<EdgeIdx>, RoutingError> {
    ids.iter()
        .map(|id| {
            net.edge_idx(id).ok_or_else(|| RoutingError::Provider {
                provider: provider.to_string(),
                message: format!("unknown edge id {id:?}"),
            })
        })
        .collect()
}

/// Replays recorded navigation answers from `<dir>/<e_o>__<e_d>.json`. Each
/// file holds the edge ids either as a bare JSON array or as `{"edges": [...]}`.
#[derive(Debug, Clone)]
pub struct FixtureProvider {
    name: String,
    dir: PathBuf,
    fallback: Fallback,
}

impl FixtureProvider {
    pub fn new(name: impl Into<String>, dir: impl Into<PathBuf>, fallback: Fallback) -> Self {
        Self {
            name: name.into(),
            dir: dir.into(),
            fallback,
        }
    }

    pub fn fixture_path(&self, net: &RoadNetwork, e_o: EdgeIdx, e_d: EdgeIdx) -> PathBuf {
        fixture_path(&self.dir, &net.edge(e_o).id, &net.edge(e_d).id)
    }
}

pub fn fixture_path(dir: &Path, e_o: &str, e_d: &str) -> PathBuf {
    dir.join(format!("{e_o}__{e_d}.json"))
}

/// Writes a fixture file in the wrapped form.
pub fn write_fixture(
    dir: &Path,
    net: &RoadNetwork,
    edges: &[EdgeIdx],
) -> Result<PathBuf, RoutingError> {
    let (first, last) = match (edges.first(), edges.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(RoutingError::InvalidPath("empty path".into())),
    };
    let path = fixture_path(dir, &net.edge(first).id, &net.edge(last).id);
    let ids: Vec<&str> = edges.iter().map(|&e| net.edge(e).id.as_str()).collect();
    std::fs::write(&path, serde_json::to_string(&serde_json::json!({ "edges": ids }))?)?;
    Ok(path)
}

impl NavigationProvider for FixtureProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn suggest(
        &self,
        net: &RoadNetwork,
        e_o: EdgeIdx,
        e_d: EdgeIdx,
    ) -> Result<Vec<EdgeIdx>, RoutingError> {
        let path = self.fixture_path(net, e_o, e_d);
        match std::fs::read_to_string(&path) {
            Ok(text) => {
                let body: FixtureBody = serde_json::from_str(&text)?;
                resolve_ids(net, &self.name, &body.into_ids())
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => match self.fallback {
                Fallback::Error => Err(RoutingError::MissingFixture {
                    from: net.edge(e_o).id.clone(),
                    to: net.edge(e_d).id.clone(),
                    path,
                }),
                Fallback::Fastest => FastestProvider.suggest(net, e_o, e_d),
            },
            Err(e) => Err(e.into()),
        }
    }
}

#[derive(Debug, Serialize)]
struct Point {
    x: f64,
    y: f64,
}

#[derive(Debug, Serialize)]
struct HttpRouteRequest<'a> {
    origin: Point,
    destination: Point,
    origin_edge: &'a str,
    dest_edge: &'a str,
}

/// Generic JSON-over-HTTP navigation client.
///
/// POSTs `{"origin":{"x","y"},"destination":{"x","y"},"origin_edge","dest_edge"}`
/// where origin is the source node of `e_o` and destination the target node of
/// `e_d`; expects the ordered edge ids back (bare array or `{"edges": [...]}`).
#[derive(Debug, Clone)]
pub struct HttpProvider {
    name: String,
    url: String,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(name: impl Into<String>, url: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            name: name.into(),
            url: url.into(),
            agent,
        }
    }
}

impl NavigationProvider for HttpProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn suggest(
        &self,
        net: &RoadNetwork,
        e_o: EdgeIdx,
        e_d: EdgeIdx,
    ) -> Result<Vec<EdgeIdx>, RoutingError> {
        let ((ox, oy), _) = net.edge_endpoints(e_o);
        let (_, (dx, dy)) = net.edge_endpoints(e_d);
        let req = HttpRouteRequest {
            origin: Point { x: ox, y: oy },
            destination: Point { x: dx, y: dy },
            origin_edge: &net.edge(e_o).id,
            dest_edge: &net.edge(e_d).id,
        };
        let fail = |message: String| RoutingError::Provider {
            provider: self.name.clone(),
            message,
        };
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&req)
            .map_err(|e| fail(e.to_string()))?;
        let body: FixtureBody = resp
            .body_mut()
            .read_json()
            .map_err(|e| fail(format!("bad response body: {e}")))?;
        resolve_ids(net, &self.name, &body.into_ids())
    }
}

/// Asks `provider` for a path and validates it against the network. Invalid
/// paths are rejected, never repaired.
pub fn external_route(
    provider: &dyn NavigationProvider,
    net: &RoadNetwork,
    vehicle_id: &str,
    e_o: EdgeIdx,
    e_d: EdgeIdx,
) -> Result<RoutedPath, RoutingError> {
    let edges = provider.suggest(net, e_o, e_d)?;
    validate_path(net, &edges, Some(e_o), Some(e_d))?;
    Ok(RoutedPath {
        vehicle_id: vehicle_id.to_string(),
        edges,
        provider: provider.tag(),
    })
}

/// Routed paths for a whole demand with `i` tenths of them navigation-routed.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutedDemand {
    pub paths: Vec<RoutedPath>,
    pub mix_fraction: u8,
    pub provider_name: String,
}

impl RoutedDemand {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn navigation_count(&self) -> usize {
        self.paths.iter().filter(|p| p.provider.is_navigation()).count()
    }
}

/// Number of navigation-routed vehicles for `n` trips at fraction `i / 10`.
pub fn navigation_share(n: usize, i: u8) -> usize {
    (n as f64 * f64::from(i) / 10.0).round() as usize
}

/// Routes every trip: a uniformly random subset of `round(N·i/10)` vehicles via
/// `provider`, the rest via [`perturbed_fastest_path`] with strength `w`.
///
/// The subset is a prefix of a random permutation drawn from `rng`, so the
/// same generator state yields nested subsets for increasing `i`. Each vehicle's
/// perturbation draws come from its own generator derived from a base seed and
/// its id, making the result independent of thread scheduling.
pub fn route_demand<R: Rng + ?Sized>(
    net: &RoadNetwork,
    demand: &MobilityDemand,
    i: u8,
    provider: &dyn NavigationProvider,
    w: f64,
    rng: &mut R,
) -> Result<RoutedDemand, RoutingError> {
    if i > 10 {
        return Err(RoutingError::InvalidFraction(i));
    }
    if !(w >= 1.0) || !w.is_finite() {
        return Err(RoutingError::InvalidStrength(w));
    }
    if demand.is_empty() {
        return Err(RoutingError::EmptyDemand);
    }
    let n = demand.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut navigated = vec![false; n];
    for &k in &order[..navigation_share(n, i)] {
        navigated[k] = true;
    }
    let base_seed: u64 = rng.gen();

    let route_one = |(trip, nav): (&Trip, &bool)| -> Result<RoutedPath, RoutingError> {
        let res = if *nav {
            external_route(provider, net, &trip.vehicle_id, trip.origin_edge, trip.dest_edge)
        } else {
            let mut vrng = derived_rng(&[base_seed, label_hash(&trip.vehicle_id)]);
            perturbed_fastest_path(
                net,
                &trip.vehicle_id,
                trip.origin_edge,
                trip.dest_edge,
                w,
                &mut vrng,
            )
        };
        res.map_err(|e| RoutingError::Vehicle {
            vehicle_id: trip.vehicle_id.clone(),
            source: Box::new(e),
        })
    };
    let paths = demand
        .trips
        .par_iter()
        .zip(navigated.par_iter())
        .map(route_one)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RoutedDemand {
        paths,
        mix_fraction: i,
        provider_name: provider.name().to_string(),
    })
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.0 - (a.0 + t * dx)).hypot(p.1 - (a.1 + t * dy))
}

fn point_polyline_distance(p: (f64, f64), line: &[(f64, f64)]) -> f64 {
    if line.len() == 1 {
        return (p.0 - line[0].0).hypot(p.1 - line[0].1);
    }
    line.windows(2)
        .map(|s| point_segment_distance(p, s[0], s[1]))
        .fold(f64::INFINITY, f64::min)
}

/// Node coordinates along a path: every edge's source plus the last edge's target.
pub fn path_polyline(net: &RoadNetwork, edges: &[EdgeIdx]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = edges.iter().map(|&e| net.edge_endpoints(e).0).collect();
    if let Some(&last) = edges.last() {
        pts.push(net.edge_endpoints(last).1);
    }
    pts
}

fn spd(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    a.iter().map(|&p| point_polyline_distance(p, b)).sum::<f64>() / a.len() as f64
}

/// Symmetrized segment-path distance between two paths, in meters.
pub fn sspd(net: &RoadNetwork, a: &[EdgeIdx], b: &[EdgeIdx]) -> f64 {
    let (pa, pb) = (path_polyline(net, a), path_polyline(net, b));
    if pa.is_empty() || pb.is_empty() {
        return 0.0;
    }
    (spd(&pa, &pb) + spd(&pb, &pa)) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRow {
    pub w: f64,
    pub mean_sspd: f64,
    pub n_pairs: usize,
}

/// Mean SSPD between perturbed and exact fastest paths over `n_pairs` random
/// edge pairs, for each strength in `w_values`.
pub fn perturbation_curve<R: Rng + ?Sized>(
    net: &RoadNetwork,
    n_pairs: usize,
    w_values: &[f64],
    rng: &mut R,
) -> Result<Vec<PerturbationRow>, RoutingError> {
    if n_pairs == 0 {
        return Err(RoutingError::EmptyDemand);
    }
    if let Some(&w) = w_values.iter().find(|&&w| !(w >= 1.0)) {
        return Err(RoutingError::InvalidStrength(w));
    }
    if net.edge_count() < 2 {
        return Err(RoutingError::InvalidPath("network needs at least two edges".into()));
    }
    let weights = free_flow_weights(net);
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut attempts = 0usize;
    while pairs.len() < n_pairs {
        attempts += 1;
        if attempts > 100 * n_pairs {
            return Err(RoutingError::InvalidPath(
                "could not find enough mutually reachable edge pairs".into(),
            ));
        }
        let a = EdgeIdx(rng.gen_range(0..net.edge_count()));
        let b = EdgeIdx(rng.gen_range(0..net.edge_count()));
        if a == b {
            continue;
        }
        if let Ok(p) = shortest_path_with_weights(net, &weights, a, b) {
            pairs.push((a, b, p));
        }
    }
    let base_seed: u64 = rng.gen();
    w_values
        .iter()
        .enumerate()
        .map(|(wi, &w)| {
            let total = pairs
                .par_iter()
                .enumerate()
                .map(|(k, (a, b, exact))| {
                    let mut prng = derived_rng(&[base_seed, wi as u64, k as u64]);
                    let p = perturbed_fastest_path(net, "pair", *a, *b, w, &mut prng)?;
                    Ok(sspd(net, &p.edges, exact))
                })
                .collect::<Result<Vec<f64>, RoutingError>>()?
                .into_iter()
                .sum::<f64>();
            Ok(PerturbationRow {
                w,
                mean_sspd: total / n_pairs as f64,
                n_pairs,
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct RoutedPathJson {
    vehicle_id: String,
    provider: String,
    edges: Vec<String>,
}

pub fn write_routed_demand<W: io::Write>(
    writer: W,
    routed: &RoutedDemand,
    net: &RoadNetwork,
) -> Result<(), RoutingError> {
    let rows: Vec<RoutedPathJson> = routed
        .paths
        .iter()
        .map(|p| RoutedPathJson {
            vehicle_id: p.vehicle_id.clone(),
            provider: p.provider.to_string(),
            edges: p.edges.iter().map(|&e| net.edge(e).id.clone()).collect(),
        })
        .collect();
    serde_json::to_writer(writer, &rows)?;
    Ok(())
}

/// Reads a routed-demand JSON file, validating every path's adjacency.
pub fn read_routed_demand<R: io::Read>(
    reader: R,
    net: &RoadNetwork,
) -> Result<RoutedDemand, RoutingError> {
    let rows: Vec<RoutedPathJson> = serde_json::from_reader(reader)?;
    let mut provider_name = String::new();
    let paths = rows
        .into_iter()
        .map(|r| {
            let edges = r
                .edges
                .iter()
                .map(|id| net.require_edge(id))
                .collect::<Result<Vec<_>, _>>()?;
            validate_path(net, &edges, None, None).map_err(|e| RoutingError::Vehicle {
                vehicle_id: r.vehicle_id.clone(),
                source: Box::new(e),
            })?;
            let provider: Provider = r.provider.parse()?;
            match &provider {
                Provider::External(name) if provider_name.is_empty() => {
                    provider_name = name.clone()
                }
                Provider::Fastest if provider_name.is_empty() => provider_name = "fastest".into(),
                _ => {}
            }
            Ok(RoutedPath {
                vehicle_id: r.vehicle_id,
                edges,
                provider,
            })
        })
        .collect::<Result<Vec<_>, RoutingError>>()?;
    let nav = paths.iter().filter(|p| p.provider.is_navigation()).count();
    let mix_fraction = if paths.is_empty() {
        0
    } else {
        (10.0 * nav as f64 / paths.len() as f64).round() as u8
    };
    Ok(RoutedDemand {
        paths,
        mix_fraction,
        provider_name,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{synth_grid, EdgeRecord, Node, RoadType};
    use crate::seeds::rng_from;

    fn node(id: &str, x: f64, y: f64) -> Node {
        Node {
            id: id.into(),
            x,
            y,
            has_traffic_light: false,
        }
    }

    fn edge(id: &str, from: &str, to: &str, length: f64) -> EdgeRecord {
        EdgeRecord {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            length,
            speed_limit: 10.0,
            lanes: 1,
            road_type: RoadType::Residential,
            self_loop: false,
        }
    }

    /// s -> a -> t (fast, 20 s in the middle) and s -> b -> t (slow, 30 s),
    /// with an entry edge into s and an exit edge out of t.
    pub(crate) fn diamond() -> RoadNetwork {
        RoadNetwork::new(
            vec![
                node("in", -100.0, 0.0),
                node("s", 0.0, 0.0),
                node("a", 100.0, 100.0),
                node("b", 100.0, -100.0),
                node("t", 200.0, 0.0),
                node("out", 300.0, 0.0),
            ],
            vec![
                edge("entry", "in", "s", 100.0),
                edge("sa", "s", "a", 100.0),
                edge("at", "a", "t", 100.0),
                edge("sb", "s", "b", 150.0),
                edge("bt", "b", "t", 150.0),
                edge("exit", "t", "out", 100.0),
            ],
        )
        .unwrap()
    }

    fn ids(net: &RoadNetwork, p: &[EdgeIdx]) -> Vec<String> {
        p.iter().map(|&e| net.edge(e).id.clone()).collect()
    }

    #[test]
    fn line_graph() {
        let net = RoadNetwork::new(
            vec![node("a", 0.0, 0.0), node("b", 1.0, 0.0), node("c", 2.0, 0.0)],
            vec![edge("ab", "a", "b", 10.0), edge("bc", "b", "c", 10.0)],
        )
        .unwrap();
        let p = fastest_path(&net, "v", EdgeIdx(0), EdgeIdx(1)).unwrap();
        assert_eq!(p.edges, vec![EdgeIdx(0), EdgeIdx(1)]);
        assert!(matches!(
            fastest_path(&net, "v", EdgeIdx(1), EdgeIdx(0)),
            Err(RoutingError::Unreachable { .. })
        ));
    }

    #[test]
    fn diamond_prefers_fast_branch() {
        let net = diamond();
        let (o, d) = (net.edge_idx("entry").unwrap(), net.edge_idx("exit").unwrap());
        let p = fastest_path(&net, "v", o, d).unwrap();
        assert_eq!(ids(&net, &p.edges), ["entry", "sa", "at", "exit"]);
        assert_eq!(path_cost(&net, &p.edges), 40.0);
    }

    #[test]
    fn equal_cost_ties_go_lexicographic() {
        // On a grid the east-first and north-first routes cost the same;
        // "e0_0E" < "e0_0N".
        let net = synth_grid(3, 3, 100.0, 10.0, None).unwrap();
        let o = net.edge_idx("e0_1W").unwrap();
        let d = net.edge_idx("e1_1N").unwrap();
        let p = fastest_path(&net, "v", o, d).unwrap();
        assert_eq!(ids(&net, &p.edges), ["e0_1W", "e0_0E", "e0_1N", "e1_1N"]);
    }

    #[test]
    fn w_one_matches_fastest() {
        let net = synth_grid(5, 5, 100.0, 10.0, None).unwrap();
        let mut rng = rng_from(4);
        for _ in 0..50 {
            let a = EdgeIdx(rng.gen_range(0..net.edge_count()));
            let b = EdgeIdx(rng.gen_range(0..net.edge_count()));
            let f = fastest_path(&net, "v", a, b).unwrap();
            let p = perturbed_fastest_path(&net, "v", a, b, 1.0, &mut rng).unwrap();
            assert_eq!(f.edges, p.edges);
        }
        assert!(matches!(
            perturbed_fastest_path(&net, "v", EdgeIdx(0), EdgeIdx(1), 0.5, &mut rng),
            Err(RoutingError::InvalidStrength(_))
        ));
    }

    #[test]
    fn provider_tags_round_trip() {
        for p in [
            Provider::Fastest,
            Provider::Perturbed(5.0),
            Provider::Perturbed(2.5),
            Provider::External("tt".into()),
        ] {
            assert_eq!(p.to_string().parse::<Provider>().unwrap(), p);
        }
        assert!("NOPE".parse::<Provider>().is_err());
    }

    #[test]
    fn validation_errors() {
        let net = diamond();
        let e = |id: &str| net.edge_idx(id).unwrap();
        assert!(validate_path(&net, &[e("entry"), e("sa"), e("at")], None, None).is_ok());
        assert!(validate_path(&net, &[e("entry"), e("at")], None, None).is_err());
        assert!(validate_path(&net, &[], None, None).is_err());
        assert!(validate_path(&net, &[e("sa"), e("at")], Some(e("entry")), None).is_err());
        assert!(validate_path(&net, &[e("sa"), e("at")], None, Some(e("exit"))).is_err());
    }

    #[test]
    fn sspd_basics() {
        let net = synth_grid(2, 5, 100.0, 10.0, None).unwrap();
        let bottom: Vec<_> = (0..4)
            .map(|c| net.edge_idx(&format!("e0_{c}E")).unwrap())
            .collect();
        let top: Vec<_> = (0..4)
            .map(|c| net.edge_idx(&format!("e1_{c}E")).unwrap())
            .collect();
        assert_eq!(sspd(&net, &bottom, &bottom), 0.0);
        assert!((sspd(&net, &bottom, &top) - 100.0).abs() < 1e-12);
    }

    #[test]
    fn navigation_share_rounds() {
        assert_eq!(navigation_share(15000, 5), 7500);
        assert_eq!(navigation_share(15, 5), 8);
        assert_eq!(navigation_share(7, 0), 0);
        assert_eq!(navigation_share(7, 10), 7);
    }
}
