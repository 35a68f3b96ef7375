//! Directed road networks: loading, validation, cleanup and synthetic grids.
//!
//! Nodes are junctions with planar coordinates in meters, edges are one-way
//! roads. Everything downstream (demand sampling, routing, simulation,
//! emissions) works on the dense indices [`NodeIdx`] / [`EdgeIdx`]; the
//! string ids only matter at the I/O boundary and for deterministic
//! tie-breaking.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeIdx(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeIdx(pub usize);

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed network JSON at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid network:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("network has no nodes")]
    Empty,
    #[error("a grid needs at least 2 rows and 2 columns, got {rows}x{cols}")]
    GridTooSmall { rows: usize, cols: usize },
    #[error("unknown edge id {0:?}")]
    UnknownEdge(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoadType {
    Motorway,
    Primary,
    Secondary,
    Residential,
    Other,
}

/// A junction. Serialized exactly as it appears in the network file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: String,
    pub x: f64,
    pub y: f64,
    #[serde(rename = "traffic_light", default)]
    pub has_traffic_light: bool,
}

/// An edge as written in the network file, endpoints given by node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeRecord {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length: f64,
    pub speed_limit: f64,
    pub lanes: u32,
    pub road_type: RoadType,
    /// Set to allow `from == to`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub self_loop: bool,
}

/// A validated edge with resolved endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: String,
    pub from: NodeIdx,
    pub to: NodeIdx,
    /// meters
    pub length: f64,
    /// m/s
    pub speed_limit: f64,
    pub lanes: u32,
    pub road_type: RoadType,
    pub self_loop: bool,
}

impl Edge {
    /// Travel time at the speed limit, in seconds.
    pub fn free_flow_time(&self) -> f64 {
        self.length / self.speed_limit
    }

    /// Number of vehicles the edge can hold: `ceil(lanes * length / (vehicle_length + min_gap))`,
    /// never less than one.
    pub fn capacity(&self, vehicle_length: f64, min_gap: f64) -> usize {
        let slots = (f64::from(self.lanes) * self.length / (vehicle_length + min_gap)).ceil();
        (slots as usize).max(1)
    }
}

/// Travel time along `e` at its speed limit.
pub fn free_flow_time(e: &Edge) -> f64 {
    e.free_flow_time()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    nodes: Vec<Node>,
    edges: Vec<EdgeRecord>,
}

/// Immutable directed road graph with outgoing/incoming adjacency.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    node_lookup: HashMap<String, NodeIdx>,
    edge_lookup: HashMap<String, EdgeIdx>,
    outgoing: Vec<Vec<EdgeIdx>>,
    incoming: Vec<Vec<EdgeIdx>>,
}

impl RoadNetwork {
    /// Builds a network, reporting every violated invariant at once.
    pub fn new(nodes: Vec<Node>, edges: Vec<EdgeRecord>) -> Result<Self, NetworkError> {
        let mut problems = Vec::new();
        let mut node_lookup = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if node_lookup.insert(n.id.clone(), NodeIdx(i)).is_some() {
                problems.push(format!("duplicate node id {:?}", n.id));
            }
            if !n.x.is_finite() || !n.y.is_finite() {
                problems.push(format!("node {:?} has non-finite coordinates", n.id));
            }
        }

        let mut edge_lookup = HashMap::with_capacity(edges.len());
        let mut resolved = Vec::with_capacity(edges.len());
        for (i, e) in edges.into_iter().enumerate() {
            if edge_lookup.insert(e.id.clone(), EdgeIdx(i)).is_some() {
                problems.push(format!("duplicate edge id {:?}", e.id));
            }
            let from = node_lookup.get(&e.from).copied();
            let to = node_lookup.get(&e.to).copied();
            if from.is_none() {
                problems.push(format!("edge {:?} references missing node {:?}", e.id, e.from));
            }
            if to.is_none() {
                problems.push(format!("edge {:?} references missing node {:?}", e.id, e.to));
            }
            if e.from == e.to && !e.self_loop {
                problems.push(format!(
                    "edge {:?} is a self-loop on {:?} but is not flagged self_loop",
                    e.id, e.from
                ));
            }
            if !(e.length > 0.0) || !e.length.is_finite() {
                problems.push(format!("edge {:?} has length {} (must be > 0)", e.id, e.length));
            }
            if !(e.speed_limit > 0.0) || !e.speed_limit.is_finite() {
                problems.push(format!(
                    "edge {:?} has speed_limit {} (must be > 0)",
                    e.id, e.speed_limit
                ));
            }
            if e.lanes < 1 {
                problems.push(format!("edge {:?} has {} lanes (must be >= 1)", e.id, e.lanes));
            }
            if let (Some(from), Some(to)) = (from, to) {
                resolved.push(Edge {
                    id: e.id,
                    from,
                    to,
                    length: e.length,
                    speed_limit: e.speed_limit,
                    lanes: e.lanes,
                    road_type: e.road_type,
                    self_loop: e.self_loop,
                });
            }
        }
        if !problems.is_empty() {
            return Err(NetworkError::Invalid(problems));
        }

        let mut outgoing = vec![Vec::new(); nodes.len()];
        let mut incoming = vec![Vec::new(); nodes.len()];
        for (i, e) in resolved.iter().enumerate() {
            outgoing[e.from.0].push(EdgeIdx(i));
            incoming[e.to.0].push(EdgeIdx(i));
        }
        Ok(Self {
            nodes,
            edges: resolved,
            node_lookup,
            edge_lookup,
            outgoing,
            incoming,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, NetworkError> {
        let file: NetworkFile = serde_json::from_str(text).map_err(|e| NetworkError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::new(file.nodes, file.edges)
    }

    /// Canonical JSON form: nodes then edges, in index order, pretty-printed.
    pub fn to_json_string(&self) -> String {
        let file = NetworkFile {
            nodes: self.nodes.clone(),
            edges: self.edges.iter().map(|e| self.edge_record(e)).collect(),
        };
        serde_json::to_string_pretty(&file).expect("network serialization cannot fail")
    }

    fn edge_record(&self, e: &Edge) -> EdgeRecord {
        EdgeRecord {
            id: e.id.clone(),
            from: self.nodes[e.from.0].id.clone(),
            to: self.nodes[e.to.0].id.clone(),
            length: e.length,
            speed_limit: e.speed_limit,
            lanes: e.lanes,
            road_type: e.road_type,
            self_loop: e.self_loop,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, idx: NodeIdx) -> &Node {
        &self.nodes[idx.0]
    }

    pub fn edge(&self, idx: EdgeIdx) -> &Edge {
        &self.edges[idx.0]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_idx(&self, id: &str) -> Option<NodeIdx> {
        self.node_lookup.get(id).copied()
    }

    pub fn edge_idx(&self, id: &str) -> Option<EdgeIdx> {
        self.edge_lookup.get(id).copied()
    }

    pub fn require_edge(&self, id: &str) -> Result<EdgeIdx, NetworkError> {
        self.edge_idx(id)
            .ok_or_else(|| NetworkError::UnknownEdge(id.to_string()))
    }

    pub fn outgoing(&self, node: NodeIdx) -> &[EdgeIdx] {
        &self.outgoing[node.0]
    }

    pub fn incoming(&self, node: NodeIdx) -> &[EdgeIdx] {
        &self.incoming[node.0]
    }

    /// Edges that can follow `e` on a path.
    pub fn successors(&self, e: EdgeIdx) -> &[EdgeIdx] {
        self.outgoing(self.edges[e.0].to)
    }

    pub fn edge_indices(&self) -> impl Iterator<Item = EdgeIdx> {
        (0..self.edges.len()).map(EdgeIdx)
    }

    /// `(x_min, y_min, x_max, y_max)` over all node coordinates.
    pub fn bbox(&self) -> Option<(f64, f64, f64, f64)> {
        let first = self.nodes.first()?;
        Some(self.nodes.iter().fold(
            (first.x, first.y, first.x, first.y),
            |(x0, y0, x1, y1), n| (x0.min(n.x), y0.min(n.y), x1.max(n.x), y1.max(n.y)),
        ))
    }

    /// Source and target coordinates of an edge.
    pub fn edge_endpoints(&self, e: EdgeIdx) -> ((f64, f64), (f64, f64)) {
        let edge = &self.edges[e.0];
        let a = &self.nodes[edge.from.0];
        let b = &self.nodes[edge.to.0];
        ((a.x, a.y), (b.x, b.y))
    }

    /// Subgraph induced by the node set `keep` (edges with both ends kept).
    fn induced(&self, keep: &[bool]) -> RoadNetwork {
        let nodes: Vec<Node> = self
            .nodes
            .iter()
            .zip(keep)
            .filter(|(_, k)| **k)
            .map(|(n, _)| n.clone())
            .collect();
        let edges: Vec<EdgeRecord> = self
            .edges
            .iter()
            .filter(|e| keep[e.from.0] && keep[e.to.0])
            .map(|e| self.edge_record(e))
            .collect();
        RoadNetwork::new(nodes, edges).expect("induced subgraph of a valid network is valid")
    }
}

impl fmt::Display for RoadNetwork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RoadNetwork(|V|={}, |E|={})", self.nodes.len(), self.edges.len())
    }
}

pub fn load_network(path: impl AsRef<Path>) -> Result<RoadNetwork, NetworkError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| NetworkError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    RoadNetwork::from_json_str(&text)
}

pub fn store_network(net: &RoadNetwork, path: impl AsRef<Path>) -> Result<(), NetworkError> {
    let path = path.as_ref();
    std::fs::write(path, net.to_json_string()).map_err(|source| NetworkError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Strongly connected components of the node graph (iterative Tarjan).
/// Returns a component label per node.
pub fn strongly_connected_components(net: &RoadNetwork) -> Vec<usize> {
    const UNVISITED: usize = usize::MAX;
    let n = net.node_count();
    let mut index = vec![UNVISITED; n];
    let mut lowlink = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comp = vec![UNVISITED; n];
    let mut next_index = 0;
    let mut n_comp = 0;

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        // (node, position in its outgoing list)
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next_index;
        lowlink[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            let out = net.outgoing(NodeIdx(v));
            if *pos < out.len() {
                let w = net.edge(out[*pos]).to.0;
                *pos += 1;
                if index[w] == UNVISITED {
                    index[w] = next_index;
                    lowlink[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    lowlink[v] = lowlink[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    lowlink[parent] = lowlink[parent].min(lowlink[v]);
                }
                if lowlink[v] == index[v] {
                    loop {
                        let w = stack.pop().expect("tarjan stack underflow");
                        on_stack[w] = false;
                        comp[w] = n_comp;
                        if w == v {
                            break;
                        }
                    }
                    n_comp += 1;
                }
            }
        }
    }
    comp
}

/// Restricts the network to its largest strongly connected component.
///
/// Ties on component size go to the component holding the lexicographically
/// smallest node id.
pub fn largest_scc(net: &RoadNetwork) -> Result<RoadNetwork, NetworkError> {
    if net.node_count() == 0 {
        return Err(NetworkError::Empty);
    }
    let comp = strongly_connected_components(net);
    let n_comp = comp.iter().max().map_or(0, |m| m + 1);
    let mut size = vec![0usize; n_comp];
    let mut smallest_id: Vec<Option<&str>> = vec![None; n_comp];
    for (v, &c) in comp.iter().enumerate() {
        size[c] += 1;
        let id = net.nodes[v].id.as_str();
        if smallest_id[c].map_or(true, |s| id < s) {
            smallest_id[c] = Some(id);
        }
    }
    let best = (0..n_comp)
        .min_by(|&a, &b| {
            size[b]
                .cmp(&size[a])
                .then_with(|| smallest_id[a].cmp(&smallest_id[b]))
        })
        .expect("at least one component");
    let keep: Vec<bool> = comp.iter().map(|&c| c == best).collect();
    Ok(net.induced(&keep))
}

/// Parameters for [`synth_grid_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridOptions {
    pub rows: usize,
    pub cols: usize,
    /// meters between adjacent intersections
    pub block_len: f64,
    /// m/s on ordinary streets
    pub speed_limit: f64,
    /// Every k-th intersection (row-major) gets a traffic light.
    #[serde(default)]
    pub light_period: Option<usize>,
    /// Every k-th row and column (starting at 0) is an arterial.
    #[serde(default)]
    pub arterial_every: Option<usize>,
    #[serde(default)]
    pub arterial_speed: Option<f64>,
    #[serde(default)]
    pub arterial_lanes: Option<u32>,
}

impl GridOptions {
    pub fn new(rows: usize, cols: usize, block_len: f64, speed_limit: f64) -> Self {
        Self {
            rows,
            cols,
            block_len,
            speed_limit,
            light_period: None,
            arterial_every: None,
            arterial_speed: None,
            arterial_lanes: None,
        }
    }
}

/// Manhattan grid with two directed edges per block.
pub fn synth_grid(
    rows: usize,
    cols: usize,
    block_len: f64,
    speed_limit: f64,
    light_period: Option<usize>,
) -> Result<RoadNetwork, NetworkError> {
    synth_grid_with(&GridOptions {
        light_period,
        ..GridOptions::new(rows, cols, block_len, speed_limit)
    })
}

/// Grid builder with optional faster multi-lane arterials.
///
/// Node `n{r}_{c}` sits at `(c * block_len, r * block_len)`. Edge ids are
/// `e{r}_{c}{D}` where `D` is the heading (`E`, `W`, `N`, `S`) from node `(r, c)`.
pub fn synth_grid_with(opts: &GridOptions) -> Result<RoadNetwork, NetworkError> {
    let (rows, cols) = (opts.rows, opts.cols);
    if rows < 2 || cols < 2 {
        return Err(NetworkError::GridTooSmall { rows, cols });
    }
    let node_id = |r: usize, c: usize| format!("n{r}_{c}");
    let nodes: Vec<Node> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| Node {
            id: node_id(r, c),
            x: c as f64 * opts.block_len,
            y: r as f64 * opts.block_len,
            has_traffic_light: opts
                .light_period
                .map_or(false, |k| k > 0 && (r * cols + c) % k == 0),
        })
        .collect();

    let is_arterial = |line: usize| opts.arterial_every.map_or(false, |k| k > 0 && line % k == 0);
    let mut edges = Vec::with_capacity(4 * rows * cols);
    let mut push = |r: usize, c: usize, r2: usize, c2: usize, heading: char, arterial: bool| {
        let (speed, lanes, road_type) = if arterial {
            (
                opts.arterial_speed.unwrap_or(opts.speed_limit),
                opts.arterial_lanes.unwrap_or(1),
                RoadType::Primary,
            )
        } else {
            (opts.speed_limit, 1, RoadType::Residential)
        };
        edges.push(EdgeRecord {
            id: format!("e{r}_{c}{heading}"),
            from: node_id(r, c),
            to: node_id(r2, c2),
            length: opts.block_len,
            speed_limit: speed,
            lanes,
            road_type,
            self_loop: false,
        });
    };
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                push(r, c, r, c + 1, 'E', is_arterial(r));
            }
            if c > 0 {
                push(r, c, r, c - 1, 'W', is_arterial(r));
            }
            if r + 1 < rows {
                push(r, c, r + 1, c, 'N', is_arterial(c));
            }
            if r > 0 {
                push(r, c, r - 1, c, 'S', is_arterial(c));
            }
        }
    }
    RoadNetwork::new(nodes, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: &str, x: f64, y: f64) -> Node {
        Node {
            id: id.into(),
            x,
            y,
            has_traffic_light: false,
        }
    }

    fn edge(id: &str, from: &str, to: &str) -> EdgeRecord {
        EdgeRecord {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            length: 100.0,
            speed_limit: 10.0,
            lanes: 1,
            road_type: RoadType::Residential,
            self_loop: false,
        }
    }

    /// Full-pairs reachability by repeated BFS; the oracle for SCC checks.
    fn strongly_connected_bruteforce(net: &RoadNetwork) -> bool {
        let n = net.node_count();
        (0..n).all(|s| {
            let mut seen = vec![false; n];
            let mut todo = vec![s];
            seen[s] = true;
            while let Some(v) = todo.pop() {
                for &e in net.outgoing(NodeIdx(v)) {
                    let w = net.edge(e).to.0;
                    if !seen[w] {
                        seen[w] = true;
                        todo.push(w);
                    }
                }
            }
            seen.iter().all(|&x| x)
        })
    }

    fn cycle4() -> (Vec<Node>, Vec<EdgeRecord>) {
        let nodes = vec![
            node("a", 0.0, 0.0),
            node("b", 100.0, 0.0),
            node("c", 100.0, 100.0),
            node("d", 0.0, 100.0),
        ];
        let edges = vec![
            edge("ab", "a", "b"),
            edge("bc", "b", "c"),
            edge("cd", "c", "d"),
            edge("da", "d", "a"),
        ];
        (nodes, edges)
    }

    #[test]
    fn minimal_file_loads() {
        let json = r#"{"nodes":[{"id":"a","x":0,"y":0,"traffic_light":false},
            {"id":"b","x":100,"y":0,"traffic_light":true}],
            "edges":[{"id":"e","from":"a","to":"b","length":100,"speed_limit":10,"lanes":1,"road_type":"primary"}]}"#;
        let net = RoadNetwork::from_json_str(json).unwrap();
        assert_eq!(net.node_count(), 2);
        assert_eq!(net.edge_count(), 1);
        assert!(net.node(NodeIdx(1)).has_traffic_light);
    }

    #[test]
    fn missing_node_is_named() {
        let err = RoadNetwork::new(vec![node("a", 0.0, 0.0)], vec![edge("e", "a", "n9")])
            .unwrap_err();
        assert!(err.to_string().contains("\"n9\""), "{err}");
    }

    #[test]
    fn all_violations_reported() {
        let mut bad = edge("e", "a", "b");
        bad.length = -5.0;
        bad.lanes = 0;
        let err = RoadNetwork::new(vec![node("a", 0.0, 0.0), node("b", 1.0, 0.0)], vec![bad])
            .unwrap_err();
        let NetworkError::Invalid(list) = err else {
            panic!("expected validation error")
        };
        assert_eq!(list.len(), 2);
        assert!(list[0].contains("length -5"));
    }

    #[test]
    fn unknown_field_rejected_with_position() {
        let json = "{\"nodes\":[],\n\"edges\":[], \"extra\": 1}";
        match RoadNetwork::from_json_str(json) {
            Err(NetworkError::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("extra"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn self_loop_needs_flag() {
        let nodes = vec![node("a", 0.0, 0.0)];
        assert!(RoadNetwork::new(nodes.clone(), vec![edge("l", "a", "a")]).is_err());
        let mut flagged = edge("l", "a", "a");
        flagged.self_loop = true;
        assert!(RoadNetwork::new(nodes, vec![flagged]).is_ok());
    }

    #[test]
    fn free_flow_examples() {
        let mut e = RoadNetwork::new(
            vec![node("a", 0.0, 0.0), node("b", 1.0, 0.0)],
            vec![edge("e", "a", "b")],
        )
        .unwrap()
        .edge(EdgeIdx(0))
        .clone();
        assert_eq!(free_flow_time(&e), 10.0);
        e.length = 250.0;
        e.speed_limit = 12.5;
        assert_eq!(free_flow_time(&e), 20.0);
        e.length = 1.0;
        e.speed_limit = 50.0;
        assert_eq!(free_flow_time(&e), 0.02);
    }

    #[test]
    fn scc_fixed_point_on_cycle() {
        let (nodes, edges) = cycle4();
        let net = RoadNetwork::new(nodes, edges).unwrap();
        let scc = largest_scc(&net).unwrap();
        assert_eq!(scc.to_json_string(), net.to_json_string());
    }

    #[test]
    fn scc_drops_spur() {
        let (mut nodes, mut edges) = cycle4();
        nodes.push(node("e", 200.0, 0.0));
        edges.push(edge("be", "b", "e"));
        let net = RoadNetwork::new(nodes, edges).unwrap();
        assert!(!strongly_connected_bruteforce(&net));
        let scc = largest_scc(&net).unwrap();
        assert_eq!(scc.node_count(), 4);
        assert_eq!(scc.edge_count(), 4);
        assert!(scc.edge_idx("be").is_none());
        assert!(strongly_connected_bruteforce(&scc));
    }

    #[test]
    fn scc_tie_break_smallest_id() {
        // Two 3-cycles; {"p","q","r"} listed first but {"a","b","c"} owns the smallest id.
        let nodes = ["p", "q", "r", "c", "a", "b"]
            .iter()
            .map(|id| node(id, 0.0, 0.0))
            .collect();
        let edges = vec![
            edge("pq", "p", "q"),
            edge("qr", "q", "r"),
            edge("rp", "r", "p"),
            edge("ab", "a", "b"),
            edge("bc", "b", "c"),
            edge("ca", "c", "a"),
        ];
        let net = RoadNetwork::new(nodes, edges).unwrap();
        let scc = largest_scc(&net).unwrap();
        let mut ids: Vec<_> = scc.nodes().iter().map(|n| n.id.as_str()).collect();
        ids.sort();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn scc_empty_is_error() {
        let net = RoadNetwork::new(vec![], vec![]).unwrap();
        assert!(matches!(largest_scc(&net), Err(NetworkError::Empty)));
    }

    #[test]
    fn grid_counts() {
        let g = synth_grid(2, 2, 100.0, 10.0, None).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (4, 8));
        let g = synth_grid(3, 3, 100.0, 10.0, None).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (9, 24));
        assert!(strongly_connected_bruteforce(&g));
        assert!(matches!(
            synth_grid(1, 5, 100.0, 10.0, None),
            Err(NetworkError::GridTooSmall { .. })
        ));
    }

    #[test]
    fn grid_lights() {
        let g = synth_grid(3, 4, 100.0, 10.0, Some(1)).unwrap();
        assert!(g.nodes().iter().all(|n| n.has_traffic_light));
        let g = synth_grid(3, 4, 100.0, 10.0, Some(2)).unwrap();
        assert_eq!(g.nodes().iter().filter(|n| n.has_traffic_light).count(), 6);
    }

    #[test]
    fn arterials_are_faster() {
        let mut opts = GridOptions::new(5, 5, 100.0, 8.0);
        opts.arterial_every = Some(2);
        opts.arterial_speed = Some(16.0);
        opts.arterial_lanes = Some(2);
        let g = synth_grid_with(&opts).unwrap();
        let e = g.edge(g.edge_idx("e0_0E").unwrap());
        assert_eq!((e.speed_limit, e.lanes), (16.0, 2));
        let e = g.edge(g.edge_idx("e1_0E").unwrap());
        assert_eq!((e.speed_limit, e.lanes), (8.0, 1));
    }

    #[test]
    fn capacity_rounds_up() {
        let g = synth_grid(2, 2, 100.0, 10.0, None).unwrap();
        assert_eq!(g.edge(EdgeIdx(0)).capacity(5.0, 2.5), 14);
    }
}
