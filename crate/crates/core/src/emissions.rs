//! CO₂ emission estimation from trajectories.
//!
//! The instantaneous rate is the polynomial
//! `c0 + c1·s·a + c2·s·a² + c3·s + c4·s² + c5·s³` (mg/s), clamped at zero.
//! Each step contributes `rate · dt` to the edge the vehicle occupied at the
//! start of the step.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::network::{EdgeIdx, RoadNetwork};
use crate::sim::{StepRecord, TrajectoryLog, TrajectorySink};

const DEFAULT_COEFFICIENTS: &str = include_str!("../data/default_passenger_car.toml");

#[derive(Debug, Error)]
pub enum EmissionsError {
    #[error("invalid emission coefficients: {0}")]
    Coefficients(String),
    #[error("log references edge index {0} outside the network")]
    UnknownEdge(usize),
    #[error("unknown edge id {0:?}")]
    UnknownEdgeId(String),
    #[error("weighted networks are built on different road networks")]
    NetworkMismatch,
    #[error("weighted network CSV is missing edge {0:?}")]
    MissingEdge(String),
    #[error("dt must be positive, got {0}")]
    InvalidDt(f64),
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionCoefficients {
    pub label: String,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
}

impl EmissionCoefficients {
    pub fn new(label: impl Into<String>, c: [f64; 6]) -> Self {
        Self {
            label: label.into(),
            c0: c[0],
            c1: c[1],
            c2: c[2],
            c3: c[3],
            c4: c[4],
            c5: c[5],
        }
    }

    /// The passenger-car set shipped in `data/default_passenger_car.toml`.
    pub fn default_passenger_car() -> Self {
        Self::from_toml_str(DEFAULT_COEFFICIENTS).expect("bundled coefficient file is valid")
    }

    pub fn validate(&self) -> Result<(), EmissionsError> {
        let c = [self.c0, self.c1, self.c2, self.c3, self.c4, self.c5];
        if c.iter().any(|v| !v.is_finite()) {
            return Err(EmissionsError::Coefficients("all coefficients must be finite".into()));
        }
        if self.c0 < 0.0 {
            return Err(EmissionsError::Coefficients(format!("c0 = {} < 0", self.c0)));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, EmissionsError> {
        let c: Self = toml::from_str(text).map_err(|e| EmissionsError::Parse {
            path: "<toml>".into(),
            message: e.to_string(),
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_json_str(text: &str) -> Result<Self, EmissionsError> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Loads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmissionsError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let res = if is_json {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        };
        res.map_err(|e| match e {
            EmissionsError::Parse { message, .. } => EmissionsError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }
}

/// Emission rate in mg/s at speed `s` (m/s) and acceleration `a` (m/s²).
pub fn instantaneous_emission(coef: &EmissionCoefficients, s: f64, a: f64) -> f64 {
    let sa = s * a;
    let raw = coef.c0
        + coef.c1 * sa
        + coef.c2 * sa * a
        + coef.c3 * s
        + coef.c4 * s * s
        + coef.c5 * s * s * s;
    raw.max(0.0)
}

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Road network annotated with per-edge CO₂ mass in mg.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedNetwork {
    edge_ids: Vec<String>,
    lengths: Vec<f64>,
    mass: Vec<f64>,
}

impl WeightedNetwork {
    pub fn zeros(net: &RoadNetwork) -> Self {
        Self::from_masses(net, vec![0.0; net.edge_count()]).expect("length matches")
    }

    pub fn from_masses(net: &RoadNetwork, mass: Vec<f64>) -> Result<Self, EmissionsError> {
        if mass.len() != net.edge_count() {
            return Err(EmissionsError::NetworkMismatch);
        }
        Ok(Self {
            edge_ids: net.edges().iter().map(|e| e.id.clone()).collect(),
            lengths: net.edges().iter().map(|e| e.length).collect(),
            mass,
        })
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// Per-edge mass, mg, in network edge order.
    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn mass(&self, e: EdgeIdx) -> f64 {
        self.mass[e.0]
    }

    pub fn edge_ids(&self) -> &[String] {
        &self.edge_ids
    }

    pub fn matches(&self, net: &RoadNetwork) -> bool {
        self.edge_ids.len() == net.edge_count()
            && net
                .edges()
                .iter()
                .zip(self.edge_ids.iter().zip(&self.lengths))
                .all(|(e, (id, &len))| e.id == *id && e.length == len)
    }

    fn same_network(&self, other: &Self) -> bool {
        self.edge_ids == other.edge_ids && self.lengths == other.lengths
    }
}

/// Streaming aggregation: plug into the simulator as a [`TrajectorySink`] to
/// get emissions without keeping the log.
#[derive(Debug, Clone)]
pub struct EmissionAccumulator {
    coef: EmissionCoefficients,
    dt: f64,
    per_edge: Vec<CompensatedSum>,
    total: CompensatedSum,
    records: u64,
    bad_edge: Option<usize>,
}

impl EmissionAccumulator {
    pub fn new(
        net: &RoadNetwork,
        coef: &EmissionCoefficients,
        dt: f64,
    ) -> Result<Self, EmissionsError> {
        coef.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(EmissionsError::InvalidDt(dt));
        }
        Ok(Self {
            coef: coef.clone(),
            dt,
            per_edge: vec![CompensatedSum::default(); net.edge_count()],
            total: CompensatedSum::default(),
            records: 0,
            bad_edge: None,
        })
    }

    pub fn add(&mut self, edge: EdgeIdx, speed: f64, accel: f64) {
        let m = instantaneous_emission(&self.coef, speed, accel) * self.dt;
        match self.per_edge.get_mut(edge.0) {
            Some(s) => s.add(m),
            None => {
                self.bad_edge.get_or_insert(edge.0);
            }
        }
        self.total.add(m);
        self.records += 1;
    }

    /// Sum over every record seen, independent of edge attribution.
    pub fn flat_total(&self) -> f64 {
        self.total.value()
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn finish(self, net: &RoadNetwork) -> Result<WeightedNetwork, EmissionsError> {
        if let Some(e) = self.bad_edge {
            return Err(EmissionsError::UnknownEdge(e));
        }
        WeightedNetwork::from_masses(net, self.per_edge.iter().map(|s| s.value()).collect())
    }
}

impl TrajectorySink for EmissionAccumulator {
    fn record(&mut self, rec: &StepRecord) {
        self.add(rec.edge, rec.speed, rec.accel);
    }
}

/// Per-edge emission masses of a trajectory log.
pub fn aggregate(
    log: &TrajectoryLog,
    coef: &EmissionCoefficients,
    net: &RoadNetwork,
    dt: f64,
) -> Result<WeightedNetwork, EmissionsError> {
    let mut acc = EmissionAccumulator::new(net, coef, dt)?;
    for r in &log.records {
        acc.record(r);
    }
    acc.finish(net)
}

/// Total mass over all edges, mg.
pub fn total_emissions(g: &WeightedNetwork) -> f64 {
    g.mass.iter().copied().collect::<CompensatedSum>().value()
}

/// mg per meter of road.
pub fn per_meter(g: &WeightedNetwork) -> Vec<f64> {
    g.mass.iter().zip(&g.lengths).map(|(m, l)| m / l).collect()
}

/// `per_meter(a) - per_meter(b)` edge by edge.
pub fn emission_diff(a: &WeightedNetwork, b: &WeightedNetwork) -> Result<Vec<f64>, EmissionsError> {
    if !a.same_network(b) {
        return Err(EmissionsError::NetworkMismatch);
    }
    Ok(per_meter(a)
        .into_iter()
        .zip(per_meter(b))
        .map(|(x, y)| x - y)
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightedRow {
    edge_id: String,
    co2_mg: f64,
    co2_mg_per_m: f64,
}

/// `edge_id,co2_mg,co2_mg_per_m`
pub fn write_weighted_csv<W: io::Write>(writer: W, g: &WeightedNetwork) -> Result<(), EmissionsError> {
    let mut w = csv::Writer::from_writer(writer);
    for ((id, &m), pm) in g.edge_ids.iter().zip(&g.mass).zip(per_meter(g)) {
        w.serialize(WeightedRow {
            edge_id: id.clone(),
            co2_mg: m,
            co2_mg_per_m: pm,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a weighted-network CSV; every network edge must appear.
pub fn read_weighted_csv<R: io::Read>(
    reader: R,
    net: &RoadNetwork,
) -> Result<WeightedNetwork, EmissionsError> {
    let mut mass = vec![None; net.edge_count()];
    for rec in csv::Reader::from_reader(reader).deserialize() {
        let row: WeightedRow = rec?;
        let e = net
            .edge_idx(&row.edge_id)
            .ok_or_else(|| EmissionsError::UnknownEdgeId(row.edge_id.clone()))?;
        mass[e.0] = Some(row.co2_mg);
    }
    let mass = mass
        .into_iter()
        .enumerate()
        .map(|(i, m)| m.ok_or_else(|| EmissionsError::MissingEdge(net.edge(EdgeIdx(i)).id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    WeightedNetwork::from_masses(net, mass)
}

/// Which per-edge value a GeoJSON export carries.
#[derive(Debug, Clone, Copy)]
pub enum GeoValues<'a> {
    PerMeter(&'a WeightedNetwork),
    Diff(&'a [f64]),
}

/// Edges as GeoJSON LineStrings in the network's planar coordinates, with a
/// `co2_mg_per_m` or `diff_mg_per_m` property.
pub fn to_geojson(net: &RoadNetwork, values: GeoValues<'_>) -> Result<serde_json::Value, EmissionsError> {
    let (key, vals): (&str, Vec<f64>) = match values {
        GeoValues::PerMeter(g) => {
            if !g.matches(net) {
                return Err(EmissionsError::NetworkMismatch);
            }
            ("co2_mg_per_m", per_meter(g))
        }
        GeoValues::Diff(d) => {
            if d.len() != net.edge_count() {
                return Err(EmissionsError::NetworkMismatch);
            }
            ("diff_mg_per_m", d.to_vec())
        }
    };
    let features: Vec<serde_json::Value> = net
        .edge_indices()
        .map(|e| {
            let ((x1, y1), (x2, y2)) = net.edge_endpoints(e);
            let mut props = serde_json::Map::new();
            props.insert("edge_id".into(), json!(net.edge(e).id));
            props.insert(key.into(), json!(vals[e.0]));
            json!({
                "type": "Feature",
                "geometry": { "type": "LineString", "coordinates": [[x1, y1], [x2, y2]] },
                "properties": props,
            })
        })
        .collect();
    Ok(json!({ "type": "FeatureCollection", "features": features }))
}
