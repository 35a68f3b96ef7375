//! Time-stepped microscopic traffic simulation.
//!
//! Each edge holds a single queue of vehicles ordered front first. Speeds
//! follow a Krauss-style car-following rule against the nearest obstacle
//! ahead: a leading vehicle (possibly on a later edge of the route), or the
//! stop line of a junction whose light is red or whose next edge is full.
//! Multi-lane edges are modelled as one queue whose per-vehicle footprint is
//! divided by the lane count, which keeps the edge capacity at
//! `ceil(lanes * length / (vehicle_length + min_gap))`.
//!
//! Vehicles stuck below 0.1 m/s for `teleport_threshold` seconds (not counting
//! time spent as the first vehicle at a red light) are teleported to the start
//! of the next edge of their path that has room.

use std::collections::VecDeque;
use std::fmt;
use std::io;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{Tile, TileIndex};
use crate::network::{EdgeIdx, NetworkError, RoadNetwork};
use crate::routing::{
    perturbed_fastest_path, validate_path, RoutedDemand, RoutedPath, RoutingError,
};
use crate::seeds::{derived_rng, label_hash, SimRng};

/// Speed below which a vehicle counts as stopped, m/s.
pub const STOPPED_SPEED: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("vehicle {vehicle_id:?} has an invalid path: {source}")]
    Path {
        vehicle_id: String,
        #[source]
        source: RoutingError,
    },
    #[error("departure schedule has {schedule} entries for {paths} paths")]
    ScheduleMismatch { schedule: usize, paths: usize },
    #[error("invalid extra-vehicle config {0:?} (expected none, <x>_start or <x>_start+<y>_end)")]
    ExtraConfig(String),
    #[error("no feasible tile pair to route extra vehicles")]
    NoExtraPairs,
    #[error("trajectory log row {row}: {reason}")]
    BadRecord { row: usize, reason: String },
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// step length, s
    pub dt: f64,
    /// insertion window, s
    pub horizon: f64,
    /// the run stops at `drain_factor * horizon` even if vehicles remain
    pub drain_factor: f64,
    /// m/s²
    pub accel: f64,
    /// m/s²
    pub decel: f64,
    /// driver reaction time, s
    pub tau: f64,
    /// driver imperfection in [0, 1]
    pub sigma: f64,
    /// m
    pub vehicle_length: f64,
    /// m
    pub min_gap: f64,
    /// s
    pub teleport_threshold: f64,
    /// s of green for the first phase
    pub light_green: f64,
    /// s of red for the first phase (= green of the second)
    pub light_red: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1.0,
            horizon: 3600.0,
            drain_factor: 3.0,
            accel: 2.6,
            decel: 4.5,
            tau: 1.0,
            sigma: 0.5,
            vehicle_length: 5.0,
            min_gap: 2.5,
            teleport_threshold: 300.0,
            light_green: 45.0,
            light_red: 45.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("dt", self.dt),
            ("horizon", self.horizon),
            ("accel", self.accel),
            ("decel", self.decel),
            ("tau", self.tau),
            ("vehicle_length", self.vehicle_length),
            ("min_gap", self.min_gap),
            ("teleport_threshold", self.teleport_threshold),
            ("light_green", self.light_green),
            ("light_red", self.light_red),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.drain_factor >= 1.0 && self.drain_factor.is_finite()) {
            return Err(SimError::Config(format!(
                "drain_factor must be >= 1, got {}",
                self.drain_factor
            )));
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(SimError::Config(format!("sigma must be in [0, 1], got {}", self.sigma)));
        }
        Ok(())
    }

    pub fn end_time(&self) -> f64 {
        self.horizon * self.drain_factor
    }
}

/// Krauss speed update.
///
/// `v_safe = v_l + (gap - v_l·τ) / (τ + (v + v_l) / (2b))`, then
/// `v_des = min(v + a·dt, v_max, v_safe)` and the result is
/// `max(0, v_des - σ·a·dt·η)`. Pass `gap = ∞` when nothing is ahead.
pub fn car_following_speed(
    v: f64,
    v_leader: f64,
    gap: f64,
    v_max: f64,
    cfg: &SimConfig,
    eta: f64,
) -> f64 {
    let v_safe = if gap.is_finite() {
        v_leader + (gap - v_leader * cfg.tau) / (cfg.tau + (v + v_leader) / (2.0 * cfg.decel))
    } else {
        f64::INFINITY
    };
    let v_des = (v + cfg.accel * cfg.dt).min(v_max).min(v_safe);
    (v_des - cfg.sigma * cfg.accel * cfg.dt * eta).max(0.0)
}

/// Departure time per routed path, aligned with `RoutedDemand::paths`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepartureSchedule {
    pub times: Vec<f64>,
}

impl DepartureSchedule {
    pub fn last(&self) -> Option<f64> {
        self.times.iter().copied().reduce(f64::max)
    }
}

/// I.i.d. uniform departures on `[0, horizon)`.
pub fn assign_departures<R: Rng + ?Sized>(
    routed: &RoutedDemand,
    horizon: f64,
    rng: &mut R,
) -> Result<DepartureSchedule, SimError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(SimError::Config(format!("horizon must be positive, got {horizon}")));
    }
    let times = (0..routed.len())
        .map(|_| rng.gen_range(0.0..horizon))
        .collect();
    Ok(DepartureSchedule { times })
}

/// Background traffic added on top of the demand: `start_pct`% of N at t = 0
/// and `end_pct`% of N after the last scheduled departure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExtraVehiclesConfig {
    pub start_pct: u32,
    pub end_pct: u32,
}

impl ExtraVehiclesConfig {
    pub const NONE: Self = Self {
        start_pct: 0,
        end_pct: 0,
    };

    pub fn counts(&self, n: usize) -> (usize, usize) {
        (
            n * self.start_pct as usize / 100,
            n * self.end_pct as usize / 100,
        )
    }
}

impl fmt::Display for ExtraVehiclesConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.start_pct, self.end_pct) {
            (0, 0) => f.write_str("none"),
            (s, 0) => write!(f, "{s}_start"),
            (0, e) => write!(f, "{e}_end"),
            (s, e) => write!(f, "{s}_start+{e}_end"),
        }
    }
}

impl FromStr for ExtraVehiclesConfig {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SimError::ExtraConfig(s.to_string());
        let mut cfg = Self::NONE;
        if s == "none" {
            return Ok(cfg);
        }
        for part in s.split('+') {
            if let Some(x) = part.strip_suffix("_start") {
                cfg.start_pct = x.parse().map_err(|_| bad())?;
            } else if let Some(y) = part.strip_suffix("_end") {
                cfg.end_pct = y.parse().map_err(|_| bad())?;
            } else {
                return Err(bad());
            }
        }
        Ok(cfg)
    }
}

impl Serialize for ExtraVehiclesConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ExtraVehiclesConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtraVehicle {
    pub path: RoutedPath,
    pub depart: f64,
}

/// Builds the background vehicles for `c`. Start vehicles depart at t = 0; end
/// vehicles uniformly on `[last_departure, last_departure + end_window)`. Each
/// gets a perturbed fastest path between edges drawn from a uniformly chosen
/// feasible tile pair.
#[allow(clippy::too_many_arguments)]
pub fn generate_extra_vehicles<R: Rng + ?Sized>(
    c: ExtraVehiclesConfig,
    n: usize,
    net: &RoadNetwork,
    tiles: &TileIndex,
    w: f64,
    last_departure: f64,
    end_window: f64,
    rng: &mut R,
) -> Result<Vec<ExtraVehicle>, SimError> {
    let (n_start, n_end) = c.counts(n);
    if n_start + n_end == 0 {
        return Ok(Vec::new());
    }
    let all: Vec<Tile> = tiles.grid().tiles().collect();
    let pairs: Vec<(Tile, Tile)> = all
        .iter()
        .flat_map(|&o| all.iter().map(move |&d| (o, d)))
        .filter(|&(o, d)| tiles.pair_feasible(o, d))
        .collect();
    if pairs.is_empty() {
        return Err(SimError::NoExtraPairs);
    }
    let mut out = Vec::with_capacity(n_start + n_end);
    for k in 0..n_start + n_end {
        let (id, depart) = if k < n_start {
            (format!("x_start{k}"), 0.0)
        } else {
            (
                format!("x_end{}", k - n_start),
                last_departure + rng.gen::<f64>() * end_window,
            )
        };
        let mut attempts = 0;
        let path = loop {
            let &(o, d) = pairs.choose(rng).expect("nonempty pairs");
            let (eo, ed) = tiles.draw_trip_edges(o, d, rng);
            match perturbed_fastest_path(net, &id, eo, ed, w, rng) {
                Ok(p) => break p,
                Err(RoutingError::Unreachable { .. }) if attempts < 100 => attempts += 1,
                Err(e) => return Err(e.into()),
            }
        };
        out.push(ExtraVehicle { path, depart });
    }
    Ok(out)
}

/// One vehicle-step: the state at the start of the step together with the
/// speed held during it and the acceleration that produced that speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub vehicle: usize,
    pub time: f64,
    pub edge: EdgeIdx,
    pub pos: f64,
    pub speed: f64,
    pub accel: f64,
}

/// Receives the simulation output as it is produced.
pub trait TrajectorySink {
    fn record(&mut self, rec: &StepRecord);

    fn enter_edge(&mut self, _vehicle: usize, _edge: EdgeIdx, _time: f64) {}
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleOutcome {
    pub vehicle_id: String,
    pub extra: bool,
    /// scheduled departure, s
    pub depart: f64,
    /// time the vehicle actually entered the network
    pub inserted: Option<f64>,
    pub arrival: Option<f64>,
}

impl VehicleOutcome {
    pub fn travel_time(&self) -> Option<f64> {
        self.arrival.map(|a| a - self.depart)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeEntry {
    pub vehicle: usize,
    pub edge: EdgeIdx,
    pub time: f64,
}

/// Full in-memory trajectory output. Vehicle indices refer to `vehicles`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub vehicles: Vec<VehicleOutcome>,
    pub records: Vec<StepRecord>,
    pub entries: Vec<EdgeEntry>,
}

impl TrajectorySink for TrajectoryLog {
    fn record(&mut self, rec: &StepRecord) {
        self.records.push(*rec);
    }

    fn enter_edge(&mut self, vehicle: usize, edge: EdgeIdx, time: f64) {
        self.entries.push(EdgeEntry {
            vehicle,
            edge,
            time,
        });
    }
}

/// Discards everything.
pub struct NullSink;

impl TrajectorySink for NullSink {
    fn record(&mut self, _rec: &StepRecord) {}
}

/// Runs several sinks on the same stream.
pub struct Tee<'a, 'b>(pub &'a mut dyn TrajectorySink, pub &'b mut dyn TrajectorySink);

impl TrajectorySink for Tee<'_, '_> {
    fn record(&mut self, rec: &StepRecord) {
        self.0.record(rec);
        self.1.record(rec);
    }

    fn enter_edge(&mut self, vehicle: usize, edge: EdgeIdx, time: f64) {
        self.0.enter_edge(vehicle, edge, time);
        self.1.enter_edge(vehicle, edge, time);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub teleports: u64,
    /// demand vehicles that reached their destination
    pub arrived: usize,
    /// over arrived demand vehicles; `None` if none arrived
    pub mean_travel_time: Option<f64>,
    pub fleet_size: usize,
    pub departed: usize,
    pub arrived_total: usize,
    pub en_route: usize,
    pub never_departed: usize,
    pub end_time: f64,
}

impl SimStats {
    /// `departed == arrived_total + en_route` and every vehicle is accounted for.
    pub fn is_conserved(&self) -> bool {
        self.departed == self.arrived_total + self.en_route
            && self.departed + self.never_departed == self.fleet_size
    }
}

/// Travel time of every arrived demand vehicle.
pub fn travel_times(log: &TrajectoryLog) -> Vec<(String, f64)> {
    log.vehicles
        .iter()
        .filter(|v| !v.extra)
        .filter_map(|v| v.travel_time().map(|t| (v.vehicle_id.clone(), t)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pending,
    Active,
    Done,
}

struct Vehicle {
    path: Vec<EdgeIdx>,
    rp: usize,
    pos: f64,
    speed: f64,
    waiting: f64,
    rng: SimRng,
    status: Status,
}

#[derive(Clone, Copy, PartialEq)]
enum Obstacle {
    Free,
    Leader { gap: f64, speed: f64 },
    RedLight { gap: f64 },
    FullEdge { gap: f64 },
}

struct EdgeInfo {
    length: f64,
    v_max: f64,
    capacity: usize,
    /// per-vehicle footprint on this edge
    spacing: f64,
    /// `None` = unsignalized, otherwise the signal phase of this approach
    phase: Option<u8>,
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    edges: Vec<EdgeInfo>,
    queues: Vec<VecDeque<usize>>,
    veh: Vec<Vehicle>,
    outcomes: Vec<VehicleOutcome>,
    lookahead: f64,
    teleports: u64,
}

impl<'a> Engine<'a> {
    fn green(&self, e: EdgeIdx, t: f64) -> bool {
        match self.edges[e.0].phase {
            None => true,
            Some(p) => {
                let m = t.rem_euclid(self.cfg.light_green + self.cfg.light_red);
                (m < self.cfg.light_green) == (p == 0)
            }
        }
    }

    fn full(&self, e: EdgeIdx) -> bool {
        self.queues[e.0].len() >= self.edges[e.0].capacity
    }

    /// Free distance from the start of `e` to its last vehicle's footprint.
    fn room_at_start(&self, e: EdgeIdx) -> f64 {
        match self.queues[e.0].back() {
            Some(&b) => self.veh[b].pos - self.edges[e.0].spacing,
            None => f64::INFINITY,
        }
    }

    fn obstacle(&self, v: usize, queue_pos: usize, t: f64) -> Obstacle {
        let me = &self.veh[v];
        let e = me.path[me.rp];
        if queue_pos > 0 {
            let l = self.queues[e.0][queue_pos - 1];
            return Obstacle::Leader {
                gap: (self.veh[l].pos - me.pos - self.edges[e.0].spacing).max(0.0),
                speed: self.veh[l].speed,
            };
        }
        let mut dist = self.edges[e.0].length - me.pos;
        let mut k = me.rp;
        while k + 1 < me.path.len() && dist <= self.lookahead {
            let (cur, nxt) = (me.path[k], me.path[k + 1]);
            if !self.green(cur, t) {
                return Obstacle::RedLight { gap: dist.max(0.0) };
            }
            if self.full(nxt) {
                return Obstacle::FullEdge { gap: dist.max(0.0) };
            }
            if let Some(&b) = self.queues[nxt.0].back() {
                return Obstacle::Leader {
                    gap: (dist + self.veh[b].pos - self.edges[nxt.0].spacing).max(0.0),
                    speed: self.veh[b].speed,
                };
            }
            dist += self.edges[nxt.0].length;
            k += 1;
        }
        Obstacle::Free
    }

    fn insert(&mut self, v: usize, t: f64, sink: &mut dyn TrajectorySink) {
        let e = self.veh[v].path[0];
        let veh = &mut self.veh[v];
        veh.status = Status::Active;
        veh.rp = 0;
        veh.pos = 0.0;
        veh.speed = 0.0;
        self.queues[e.0].push_back(v);
        self.outcomes[v].inserted = Some(t);
        sink.enter_edge(v, e, t);
    }

    fn arrive(&mut self, v: usize, time: f64) {
        let e = self.veh[v].path[self.veh[v].rp];
        self.queues[e.0].retain(|&x| x != v);
        self.veh[v].status = Status::Done;
        self.outcomes[v].arrival = Some(time);
    }

    /// Advances `v` by `travel` meters, crossing junctions where allowed.
    /// Returns the distance actually covered and whether it arrived (with the
    /// fraction of the step used).
    fn advance(
        &mut self,
        v: usize,
        travel: f64,
        t: f64,
        sink: &mut dyn TrajectorySink,
    ) -> (f64, Option<f64>) {
        let mut remaining = travel;
        let mut covered = 0.0;
        loop {
            let (e, rp, pos, last) = {
                let me = &self.veh[v];
                (me.path[me.rp], me.rp, me.pos, me.rp + 1 == me.path.len())
            };
            let len = self.edges[e.0].length;
            if last && pos + remaining >= len {
                covered += len - pos;
                let frac = if travel > 0.0 { covered / travel } else { 1.0 };
                return (covered, Some(frac));
            }
            if pos + remaining <= len {
                self.veh[v].pos = pos + remaining;
                return (covered + remaining, None);
            }
            let nxt = self.veh[v].path[rp + 1];
            let room = self.room_at_start(nxt);
            if !self.green(e, t) || self.full(nxt) || room < 0.0 {
                self.veh[v].pos = len;
                return (covered + len - pos, None);
            }
            let into = (pos + remaining - len).min(room);
            covered += len - pos;
            remaining = into;
            let front = self.queues[e.0].pop_front();
            debug_assert_eq!(front, Some(v));
            self.queues[nxt.0].push_back(v);
            let me = &mut self.veh[v];
            me.rp += 1;
            me.pos = 0.0;
            let entry_time = t + self.cfg.dt * if travel > 0.0 { covered / travel } else { 0.0 };
            sink.enter_edge(v, nxt, entry_time);
        }
    }

    /// Moves a stuck vehicle to the start of the next path edge with room.
    fn teleport(&mut self, v: usize, t: f64, sink: &mut dyn TrajectorySink) -> bool {
        let (rp, len) = (self.veh[v].rp, self.veh[v].path.len());
        if rp + 1 == len {
            self.teleports += 1;
            self.arrive(v, t);
            return true;
        }
        let target = (rp + 1..len).find(|&k| {
            let e = self.veh[v].path[k];
            !self.full(e) && self.room_at_start(e) >= 0.0
        });
        let Some(k) = target else { return false };
        let from = self.veh[v].path[rp];
        let to = self.veh[v].path[k];
        self.queues[from.0].retain(|&x| x != v);
        self.queues[to.0].push_back(v);
        let me = &mut self.veh[v];
        me.rp = k;
        me.pos = 0.0;
        me.speed = 0.0;
        me.waiting = 0.0;
        self.teleports += 1;
        sink.enter_edge(v, to, t);
        true
    }
}

/// Simulates `routed` (departing per `sched`) plus `extras`.
///
/// Vehicle `k < routed.len()` is demand vehicle `k`; extras follow. Each
/// vehicle draws its driver noise from a generator derived from `seed` and
/// its id, so the output is a deterministic function of the inputs.
pub fn simulate_into(
    net: &RoadNetwork,
    routed: &RoutedDemand,
    sched: &DepartureSchedule,
    cfg: &SimConfig,
    extras: &[ExtraVehicle],
    seed: u64,
    sink: &mut dyn TrajectorySink,
) -> Result<(SimStats, Vec<VehicleOutcome>), SimError> {
    cfg.validate()?;
    if sched.times.len() != routed.len() {
        return Err(SimError::ScheduleMismatch {
            schedule: sched.times.len(),
            paths: routed.len(),
        });
    }
    let fleet: Vec<(&RoutedPath, f64, bool)> = routed
        .paths
        .iter()
        .zip(&sched.times)
        .map(|(p, &t)| (p, t, false))
        .chain(extras.iter().map(|x| (&x.path, x.depart, true)))
        .collect();
    for (p, depart, _) in &fleet {
        validate_path(net, &p.edges, None, None).map_err(|source| SimError::Path {
            vehicle_id: p.vehicle_id.clone(),
            source,
        })?;
        if !depart.is_finite() || *depart < 0.0 {
            return Err(SimError::Config(format!(
                "vehicle {:?} has departure {depart}",
                p.vehicle_id
            )));
        }
    }

    let edges: Vec<EdgeInfo> = net
        .edges()
        .iter()
        .map(|e| {
            let (a, b) = (net.node(e.from), net.node(e.to));
            let horizontal = (b.x - a.x).abs() >= (b.y - a.y).abs();
            EdgeInfo {
                length: e.length,
                v_max: e.speed_limit,
                capacity: e.capacity(cfg.vehicle_length, cfg.min_gap),
                spacing: (cfg.vehicle_length + cfg.min_gap) / f64::from(e.lanes),
                phase: b.has_traffic_light.then_some(if horizontal { 0 } else { 1 }),
            }
        })
        .collect();
    let v_top = edges.iter().map(|e| e.v_max).fold(0.0, f64::max);
    let lookahead = v_top * (cfg.tau + v_top / (2.0 * cfg.decel))
        + 2.0 * (cfg.vehicle_length + cfg.min_gap)
        + v_top * cfg.dt;

    let veh: Vec<Vehicle> = fleet
        .iter()
        .map(|(p, _, _)| Vehicle {
            path: p.edges.clone(),
            rp: 0,
            pos: 0.0,
            speed: 0.0,
            waiting: 0.0,
            rng: derived_rng(&[seed, label_hash(&p.vehicle_id)]),
            status: Status::Pending,
        })
        .collect();
    let outcomes: Vec<VehicleOutcome> = fleet
        .iter()
        .map(|(p, depart, extra)| VehicleOutcome {
            vehicle_id: p.vehicle_id.clone(),
            extra: *extra,
            depart: *depart,
            inserted: None,
            arrival: None,
        })
        .collect();

    let mut order: Vec<usize> = (0..fleet.len()).collect();
    order.sort_by(|&a, &b| fleet[a].1.total_cmp(&fleet[b].1).then(a.cmp(&b)));
    let mut pending = order.into_iter().peekable();
    let mut waiting_insert: Vec<VecDeque<usize>> = vec![VecDeque::new(); net.edge_count()];
    let mut n_waiting_insert = 0usize;

    let mut eng = Engine {
        cfg,
        edges,
        queues: vec![VecDeque::new(); net.edge_count()],
        veh,
        outcomes,
        lookahead,
        teleports: 0,
    };

    let end = cfg.end_time();
    let mut done = 0usize;
    let mut step: u64 = 0;
    let mut t = 0.0;
    let mut obstacles: Vec<(usize, usize, Obstacle)> = Vec::new();
    let mut new_speed: Vec<(usize, f64, bool)> = Vec::new();
    while done < fleet.len() && t < end {
        while let Some(&v) = pending.peek() {
            if fleet[v].1 > t {
                break;
            }
            pending.next();
            waiting_insert[eng.veh[v].path[0].0].push_back(v);
            n_waiting_insert += 1;
        }
        if n_waiting_insert > 0 {
            for e in 0..waiting_insert.len() {
                let Some(&v) = waiting_insert[e].front() else { continue };
                let ei = EdgeIdx(e);
                if !eng.full(ei) && eng.room_at_start(ei) >= 0.0 {
                    waiting_insert[e].pop_front();
                    n_waiting_insert -= 1;
                    eng.insert(v, t, sink);
                }
            }
        }

        // Speeds from the step-start snapshot.
        obstacles.clear();
        for (e, q) in eng.queues.iter().enumerate() {
            for (qp, &v) in q.iter().enumerate() {
                obstacles.push((v, e, eng.obstacle(v, qp, t)));
            }
        }
        new_speed.clear();
        for &(v, e, obstacle) in &obstacles {
            let (gap, v_l, at_red) = match obstacle {
                Obstacle::Free => (f64::INFINITY, 0.0, false),
                Obstacle::Leader { gap, speed } => (gap, speed, false),
                Obstacle::RedLight { gap } => (gap, 0.0, true),
                Obstacle::FullEdge { gap } => (gap, 0.0, false),
            };
            let me = &mut eng.veh[v];
            let eta: f64 = me.rng.gen();
            let s = car_following_speed(me.speed, v_l, gap, eng.edges[e].v_max, cfg, eta)
                .min(gap / cfg.dt);
            new_speed.push((v, s, at_red));
        }

        for &(v, s, at_red) in &new_speed {
            let (edge, pos, old) = {
                let me = &eng.veh[v];
                (me.path[me.rp], me.pos, me.speed)
            };
            let (covered, arrived) = eng.advance(v, s * cfg.dt, t, sink);
            // An arriving vehicle drives at `s` until it leaves mid-step.
            let speed = if arrived.is_some() { s } else { covered / cfg.dt };
            sink.record(&StepRecord {
                vehicle: v,
                time: t,
                edge,
                pos,
                speed,
                accel: (speed - old) / cfg.dt,
            });
            if let Some(frac) = arrived {
                eng.arrive(v, t + frac * cfg.dt);
                done += 1;
                continue;
            }
            let me = &mut eng.veh[v];
            me.speed = speed;
            if speed < STOPPED_SPEED {
                if !at_red {
                    me.waiting += cfg.dt;
                }
            } else {
                me.waiting = 0.0;
            }
            if me.waiting >= cfg.teleport_threshold && eng.teleport(v, t + cfg.dt, sink) {
                if eng.veh[v].status == Status::Done {
                    done += 1;
                }
            }
        }

        step += 1;
        t = step as f64 * cfg.dt;
    }

    let outcomes = eng.outcomes;
    let departed = outcomes.iter().filter(|o| o.inserted.is_some()).count();
    let arrived_total = outcomes.iter().filter(|o| o.arrival.is_some()).count();
    let demand_tt: Vec<f64> = outcomes
        .iter()
        .filter(|o| !o.extra)
        .filter_map(VehicleOutcome::travel_time)
        .collect();
    let stats = SimStats {
        teleports: eng.teleports,
        arrived: demand_tt.len(),
        mean_travel_time: (!demand_tt.is_empty())
            .then(|| demand_tt.iter().sum::<f64>() / demand_tt.len() as f64),
        fleet_size: fleet.len(),
        departed,
        arrived_total,
        en_route: departed - arrived_total,
        never_departed: fleet.len() - departed,
        end_time: t,
    };
    Ok((stats, outcomes))
}

/// [`simulate_into`] collecting the full trajectory log.
pub fn simulate(
    net: &RoadNetwork,
    routed: &RoutedDemand,
    sched: &DepartureSchedule,
    cfg: &SimConfig,
    extras: &[ExtraVehicle],
    seed: u64,
) -> Result<(TrajectoryLog, SimStats), SimError> {
    let mut log = TrajectoryLog::default();
    let (stats, outcomes) = simulate_into(net, routed, sched, cfg, extras, seed, &mut log)?;
    log.vehicles = outcomes;
    Ok((log, stats))
}

#[derive(Debug, Serialize, Deserialize)]
struct LogRow {
    vehicle_id: String,
    time: f64,
    edge_id: String,
    pos: f64,
    speed: f64,
    accel: f64,
}

/// `vehicle_id,time,edge_id,pos,speed,accel`
pub fn write_trajectory_csv<W: io::Write>(
    writer: W,
    log: &TrajectoryLog,
    net: &RoadNetwork,
) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in &log.records {
        w.serialize(LogRow {
            vehicle_id: log.vehicles[r.vehicle].vehicle_id.clone(),
            time: r.time,
            edge_id: net.edge(r.edge).id.clone(),
            pos: r.pos,
            speed: r.speed,
            accel: r.accel,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads step records back. Vehicle outcomes are not part of the CSV, so the
/// returned log lists each vehicle with unknown departure and arrival.
pub fn read_trajectory_csv<R: io::Read>(
    reader: R,
    net: &RoadNetwork,
) -> Result<TrajectoryLog, SimError> {
    let mut log = TrajectoryLog::default();
    let mut index = std::collections::HashMap::new();
    for (row, rec) in csv::Reader::from_reader(reader).deserialize().enumerate() {
        let r: LogRow = rec?;
        let edge = net.edge_idx(&r.edge_id).ok_or_else(|| SimError::BadRecord {
            row: row + 1,
            reason: format!("unknown edge {:?}", r.edge_id),
        })?;
        let vehicle = *index.entry(r.vehicle_id.clone()).or_insert_with(|| {
            log.vehicles.push(VehicleOutcome {
                vehicle_id: r.vehicle_id.clone(),
                extra: false,
                depart: f64::NAN,
                inserted: None,
                arrival: None,
            });
            log.vehicles.len() - 1
        });
        log.records.push(StepRecord {
            vehicle,
            time: r.time,
            edge,
            pos: r.pos,
            speed: r.speed,
            accel: r.accel,
        });
    }
    Ok(log)
}

pub fn write_stats_json<W: io::Write>(writer: W, stats: &SimStats) -> Result<(), SimError> {
    serde_json::to_writer_pretty(writer, stats)?;
    Ok(())
}
