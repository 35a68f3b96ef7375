//! Mobility demand: square tiling, OD matrix estimation from trip records and
//! sampling of edge-to-edge trips.

use std::collections::BTreeMap;
use std::io;

use log::warn;
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{EdgeIdx, NetworkError, RoadNetwork};

#[derive(Debug, Error)]
pub enum DemandError {
    #[error("degenerate bounding box ({x_min}, {y_min}, {x_max}, {y_max}) or tile side {side}")]
    DegenerateGrid {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        side: f64,
    },
    #[error("point ({x}, {y}) lies outside the tile grid")]
    OutsideGrid { x: f64, y: f64 },
    #[error("tile ({row}, {col}) does not exist in a {rows}x{cols} grid")]
    BadTile {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("no trip records")]
    NoRecords,
    #[error("all {0} trip records fall outside the tile grid")]
    AllRecordsOutside(usize),
    #[error("OD matrix has no OD pair whose tiles both contain edges")]
    NoFeasiblePair,
    #[error("number of trips must be at least 1")]
    ZeroTrips,
    #[error("invalid trip record at row {row}: {reason}")]
    BadRecord { row: usize, reason: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
}

impl Tile {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Square tessellation anchored at `(origin_x, origin_y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileGrid {
    pub origin_x: f64,
    pub origin_y: f64,
    pub side: f64,
    pub n_rows: usize,
    pub n_cols: usize,
}

/// Tiles of side `side` covering `(x_min, y_min, x_max, y_max)`.
pub fn build_grid(bbox: (f64, f64, f64, f64), side: f64) -> Result<TileGrid, DemandError> {
    let (x_min, y_min, x_max, y_max) = bbox;
    if !(x_max > x_min && y_max > y_min && side > 0.0) || !side.is_finite() {
        return Err(DemandError::DegenerateGrid {
            x_min,
            y_min,
            x_max,
            y_max,
            side,
        });
    }
    Ok(TileGrid {
        origin_x: x_min,
        origin_y: y_min,
        side,
        n_rows: ((y_max - y_min) / side).ceil() as usize,
        n_cols: ((x_max - x_min) / side).ceil() as usize,
    })
}

impl TileGrid {
    /// Grid over the network's node bounding box. A flat extent (all nodes on
    /// one line) is widened to one tile.
    pub fn covering(net: &RoadNetwork, side: f64) -> Result<TileGrid, DemandError> {
        let (x0, y0, mut x1, mut y1) = net.bbox().ok_or(DemandError::DegenerateGrid {
            x_min: 0.0,
            y_min: 0.0,
            x_max: 0.0,
            y_max: 0.0,
            side,
        })?;
        if x1 <= x0 {
            x1 = x0 + side;
        }
        if y1 <= y0 {
            y1 = y0 + side;
        }
        build_grid((x0, y0, x1, y1), side)
    }

    pub fn tile_count(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn tiles(&self) -> impl Iterator<Item = Tile> + '_ {
        (0..self.n_rows).flat_map(move |r| (0..self.n_cols).map(move |c| Tile::new(r, c)))
    }

    pub fn contains_tile(&self, t: Tile) -> bool {
        t.row < self.n_rows && t.col < self.n_cols
    }

    fn check_tile(&self, t: Tile) -> Result<(), DemandError> {
        if self.contains_tile(t) {
            Ok(())
        } else {
            Err(DemandError::BadTile {
                row: t.row,
                col: t.col,
                rows: self.n_rows,
                cols: self.n_cols,
            })
        }
    }

    /// Tile containing the point. Points on the upper or right edge of the
    /// extent belong to the last row/column.
    pub fn tile_of(&self, x: f64, y: f64) -> Result<Tile, DemandError> {
        let fx = (x - self.origin_x) / self.side;
        let fy = (y - self.origin_y) / self.side;
        if !(fx >= 0.0 && fy >= 0.0 && fx <= self.n_cols as f64 && fy <= self.n_rows as f64) {
            return Err(DemandError::OutsideGrid { x, y });
        }
        Ok(Tile {
            row: (fy.floor() as usize).min(self.n_rows - 1),
            col: (fx.floor() as usize).min(self.n_cols - 1),
        })
    }

    pub fn tile_center(&self, t: Tile) -> (f64, f64) {
        (
            self.origin_x + (t.col as f64 + 0.5) * self.side,
            self.origin_y + (t.row as f64 + 0.5) * self.side,
        )
    }
}

pub fn tile_of(grid: &TileGrid, x: f64, y: f64) -> Result<Tile, DemandError> {
    grid.tile_of(x, y)
}

/// A trip observed in real (or synthetic stand-in) data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub origin_x: f64,
    pub origin_y: f64,
    pub dest_x: f64,
    pub dest_y: f64,
    pub depart_time: f64,
    pub arrive_time: f64,
}

impl TripRecord {
    pub fn travel_time(&self) -> f64 {
        self.arrive_time - self.depart_time
    }
}

/// Tile-to-tile trip counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OdMatrix {
    counts: BTreeMap<(Tile, Tile), u64>,
}

impl OdMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, o: Tile, d: Tile, count: u64) {
        if count > 0 {
            *self.counts.entry((o, d)).or_default() += count;
        }
    }

    pub fn get(&self, o: Tile, d: Tile) -> u64 {
        self.counts.get(&(o, d)).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Positive entries in `(origin, destination)` order.
    pub fn entries(&self) -> impl Iterator<Item = (Tile, Tile, u64)> + '_ {
        self.counts.iter().map(|(&(o, d), &c)| (o, d, c))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Counts records by (origin tile, destination tile). Records outside the
/// grid are skipped with a warning.
pub fn estimate_od(records: &[TripRecord], grid: &TileGrid) -> Result<OdMatrix, DemandError> {
    if records.is_empty() {
        return Err(DemandError::NoRecords);
    }
    let mut od = OdMatrix::new();
    let mut outside = 0usize;
    for r in records {
        match (grid.tile_of(r.origin_x, r.origin_y), grid.tile_of(r.dest_x, r.dest_y)) {
            (Ok(o), Ok(d)) => od.add(o, d, 1),
            _ => outside += 1,
        }
    }
    if outside == records.len() {
        return Err(DemandError::AllRecordsOutside(outside));
    }
    if outside > 0 {
        warn!("{outside} of {} trip records lie outside the tile grid", records.len());
    }
    Ok(od)
}

/// Edges whose source node lies in `tile`, in index order.
pub fn edges_in_tile(
    net: &RoadNetwork,
    grid: &TileGrid,
    tile: Tile,
) -> Result<Vec<EdgeIdx>, DemandError> {
    grid.check_tile(tile)?;
    Ok(net
        .edge_indices()
        .filter(|&e| {
            let src = net.node(net.edge(e).from);
            grid.tile_of(src.x, src.y).ok() == Some(tile)
        })
        .collect())
}

/// Tile → edge lists for the whole grid, computed in one pass.
#[derive(Debug, Clone)]
pub struct TileIndex {
    grid: TileGrid,
    edges: Vec<Vec<EdgeIdx>>,
}

impl TileIndex {
    pub fn new(net: &RoadNetwork, grid: &TileGrid) -> Self {
        let mut edges = vec![Vec::new(); grid.tile_count()];
        for e in net.edge_indices() {
            let src = net.node(net.edge(e).from);
            if let Ok(t) = grid.tile_of(src.x, src.y) {
                edges[t.row * grid.n_cols + t.col].push(e);
            }
        }
        Self { grid: *grid, edges }
    }

    pub fn edges(&self, t: Tile) -> &[EdgeIdx] {
        if self.grid.contains_tile(t) {
            &self.edges[t.row * self.grid.n_cols + t.col]
        } else {
            &[]
        }
    }

    /// Whether a trip with distinct origin and destination edges can be drawn.
    pub fn pair_feasible(&self, o: Tile, d: Tile) -> bool {
        let (eo, ed) = (self.edges(o), self.edges(d));
        !eo.is_empty() && !ed.is_empty() && !(o == d && eo.len() < 2)
    }

    /// Draws distinct origin/destination edges uniformly from the two tiles.
    /// The pair must be feasible.
    pub fn draw_trip_edges<R: Rng + ?Sized>(
        &self,
        o: Tile,
        d: Tile,
        rng: &mut R,
    ) -> (EdgeIdx, EdgeIdx) {
        let (eo, ed) = (self.edges(o), self.edges(d));
        loop {
            let a = *eo.choose(rng).expect("feasible origin tile");
            let b = *ed.choose(rng).expect("feasible destination tile");
            if a != b {
                return (a, b);
            }
        }
    }

    pub fn grid(&self) -> &TileGrid {
        &self.grid
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trip {
    pub vehicle_id: String,
    pub origin_edge: EdgeIdx,
    pub dest_edge: EdgeIdx,
}

/// The sampled multiset of trips, one per vehicle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MobilityDemand {
    pub trips: Vec<Trip>,
}

impl MobilityDemand {
    pub fn len(&self) -> usize {
        self.trips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trips.is_empty()
    }
}

/// Draws `n` trips: an OD pair with probability proportional to its count
/// (restricted to pairs whose tiles contain edges), then one edge uniformly
/// from each tile, redrawn until origin and destination differ.
pub fn sample_demand<R: Rng + ?Sized>(
    od: &OdMatrix,
    net: &RoadNetwork,
    grid: &TileGrid,
    n: usize,
    rng: &mut R,
) -> Result<MobilityDemand, DemandError> {
    if n == 0 {
        return Err(DemandError::ZeroTrips);
    }
    let index = TileIndex::new(net, grid);
    let mut pairs = Vec::new();
    let mut weights = Vec::new();
    let mut skipped = 0u64;
    for (o, d, c) in od.entries() {
        if index.pair_feasible(o, d) {
            pairs.push((o, d));
            weights.push(c as f64);
        } else {
            skipped += c;
        }
    }
    if pairs.is_empty() {
        return Err(DemandError::NoFeasiblePair);
    }
    if skipped > 0 {
        warn!(
            "excluding {skipped} of {} OD trips whose tiles contain no usable edges",
            od.total()
        );
    }
    let pick = WeightedIndex::new(&weights).expect("positive weights");
    let trips = (0..n)
        .map(|k| {
            let (o, d) = pairs[pick.sample(rng)];
            let (origin_edge, dest_edge) = index.draw_trip_edges(o, d, rng);
            Trip {
                vehicle_id: format!("v{k}"),
                origin_edge,
                dest_edge,
            }
        })
        .collect();
    Ok(MobilityDemand { trips })
}

/// Gravity-model generator for stand-in trip records:
/// flow(o, d) ∝ w_o · w_d · exp(−dist(o, d) / decay_length).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticRecordsConfig {
    pub n_records: usize,
    /// Row-major tile weights; `None` weights tiles by closeness to the center.
    #[serde(default)]
    pub tile_weights: Option<Vec<f64>>,
    /// meters
    pub decay_length: f64,
    /// Effective door-to-door speed, m/s.
    pub mean_speed: f64,
    /// Log-scale spread of the travel-time noise.
    pub noise_sigma: f64,
    /// Departures are uniform on [0, horizon).
    pub horizon: f64,
}

impl Default for SyntheticRecordsConfig {
    fn default() -> Self {
        Self {
            n_records: 5000,
            tile_weights: None,
            decay_length: 2000.0,
            mean_speed: 6.0,
            noise_sigma: 0.3,
            horizon: 3600.0,
        }
    }
}

pub fn synth_trip_records<R: Rng + ?Sized>(
    grid: &TileGrid,
    cfg: &SyntheticRecordsConfig,
    rng: &mut R,
) -> Result<Vec<TripRecord>, DemandError> {
    let tiles: Vec<Tile> = grid.tiles().collect();
    let weights: Vec<f64> = match &cfg.tile_weights {
        Some(w) if w.len() == tiles.len() => w.clone(),
        Some(w) => {
            return Err(DemandError::BadRecord {
                row: 0,
                reason: format!("{} tile weights for {} tiles", w.len(), tiles.len()),
            })
        }
        None => {
            let (cx, cy) = (
                grid.origin_x + grid.n_cols as f64 * grid.side / 2.0,
                grid.origin_y + grid.n_rows as f64 * grid.side / 2.0,
            );
            let scale = grid.side * (grid.n_rows.max(grid.n_cols) as f64) / 2.0;
            tiles
                .iter()
                .map(|&t| {
                    let (x, y) = grid.tile_center(t);
                    (-((x - cx).hypot(y - cy)) / scale).exp()
                })
                .collect()
        }
    };
    let mut pair_w = Vec::with_capacity(tiles.len() * tiles.len());
    for (i, &o) in tiles.iter().enumerate() {
        for (j, &d) in tiles.iter().enumerate() {
            let (ox, oy) = grid.tile_center(o);
            let (dx, dy) = grid.tile_center(d);
            let dist = (ox - dx).hypot(oy - dy);
            pair_w.push(weights[i] * weights[j] * (-dist / cfg.decay_length).exp());
        }
    }
    let pick = WeightedIndex::new(&pair_w).map_err(|e| DemandError::BadRecord {
        row: 0,
        reason: format!("tile weights unusable: {e}"),
    })?;
    let noise = LogNormal::new(0.0, cfg.noise_sigma).map_err(|e| DemandError::BadRecord {
        row: 0,
        reason: e.to_string(),
    })?;
    let n_tiles = tiles.len();
    let in_tile = |t: Tile, rng: &mut R| {
        (
            grid.origin_x + (t.col as f64 + rng.gen::<f64>()) * grid.side,
            grid.origin_y + (t.row as f64 + rng.gen::<f64>()) * grid.side,
        )
    };
    Ok((0..cfg.n_records)
        .map(|_| {
            let k = pick.sample(rng);
            let (o, d) = (tiles[k / n_tiles], tiles[k % n_tiles]);
            let (ox, oy) = in_tile(o, rng);
            let (dx, dy) = in_tile(d, rng);
            let depart = rng.gen::<f64>() * cfg.horizon;
            // Manhattan distance plus half a tile of access/egress.
            let dist = (ox - dx).abs() + (oy - dy).abs() + grid.side / 2.0;
            let tt = dist / cfg.mean_speed * noise.sample(rng);
            TripRecord {
                origin_x: ox,
                origin_y: oy,
                dest_x: dx,
                dest_y: dy,
                depart_time: depart,
                arrive_time: depart + tt,
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// CSV

pub fn read_trip_records<R: io::Read>(reader: R) -> Result<Vec<TripRecord>, DemandError> {
    let mut out = Vec::new();
    for (row, rec) in csv::Reader::from_reader(reader).deserialize().enumerate() {
        let rec: TripRecord = rec?;
        if !(rec.arrive_time > rec.depart_time) {
            return Err(DemandError::BadRecord {
                row: row + 1,
                reason: format!(
                    "arrive_time {} is not after depart_time {}",
                    rec.arrive_time, rec.depart_time
                ),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_trip_records<W: io::Write>(
    writer: W,
    records: &[TripRecord],
) -> Result<(), DemandError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct OdRow {
    o_row: usize,
    o_col: usize,
    d_row: usize,
    d_col: usize,
    count: u64,
}

pub fn read_od_matrix<R: io::Read>(reader: R) -> Result<OdMatrix, DemandError> {
    let mut od = OdMatrix::new();
    for row in csv::Reader::from_reader(reader).deserialize() {
        let r: OdRow = row?;
        od.add(Tile::new(r.o_row, r.o_col), Tile::new(r.d_row, r.d_col), r.count);
    }
    Ok(od)
}

pub fn write_od_matrix<W: io::Write>(writer: W, od: &OdMatrix) -> Result<(), DemandError> {
    let mut w = csv::Writer::from_writer(writer);
    for (o, d, count) in od.entries() {
        w.serialize(OdRow {
            o_row: o.row,
            o_col: o.col,
            d_row: d.row,
            d_col: d.col,
            count,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct DemandRow {
    vehicle_id: String,
    origin_edge: String,
    dest_edge: String,
}

pub fn read_demand<R: io::Read>(
    reader: R,
    net: &RoadNetwork,
) -> Result<MobilityDemand, DemandError> {
    let mut trips = Vec::new();
    for (row, rec) in csv::Reader::from_reader(reader).deserialize().enumerate() {
        let r: DemandRow = rec?;
        let origin_edge = net.require_edge(&r.origin_edge)?;
        let dest_edge = net.require_edge(&r.dest_edge)?;
        if origin_edge == dest_edge {
            return Err(DemandError::BadRecord {
                row: row + 1,
                reason: format!("vehicle {} has identical origin and destination", r.vehicle_id),
            });
        }
        trips.push(Trip {
            vehicle_id: r.vehicle_id,
            origin_edge,
            dest_edge,
        });
    }
    Ok(MobilityDemand { trips })
}

pub fn write_demand<W: io::Write>(
    writer: W,
    demand: &MobilityDemand,
    net: &RoadNetwork,
) -> Result<(), DemandError> {
    let mut w = csv::Writer::from_writer(writer);
    for t in &demand.trips {
        w.serialize(DemandRow {
            vehicle_id: t.vehicle_id.clone(),
            origin_edge: net.edge(t.origin_edge).id.clone(),
            dest_edge: net.edge(t.dest_edge).id.clone(),
        })?;
    }
    w.flush()?;
    Ok(())
}
