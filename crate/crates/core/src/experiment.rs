//! Experiment campaigns: the mixing sweep over navigation-routed fractions
//! and the calibration grid search against observed travel times.
//!
//! Seeding: every random stream is derived from the master seed. Within one
//! repetition the demand, the departure times, the routed subset and the
//! perturbed paths are shared by all mixing fractions (common random numbers),
//! so increasing `i` only converts more perturbed routes into navigation
//! routes. The per-cell seed `derive(master, i, rep)` drives the simulator's
//! driver noise.

use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use log::{info, warn};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, travel_time_comparison, AnalysisError, DEFAULT_TT_BINS};
use crate::demand::{sample_demand, DemandError, MobilityDemand, OdMatrix, TileGrid, TileIndex};
use crate::emissions::{total_emissions, EmissionAccumulator, EmissionCoefficients, EmissionsError};
use crate::network::RoadNetwork;
use crate::routing::{
    route_demand, Fallback, FastestProvider, FixtureProvider, HttpProvider, NavigationProvider,
    RoutingError,
};
use crate::seeds::{derive_seed, rng_from};
use crate::sim::{
    assign_departures, generate_extra_vehicles, simulate_into, ExtraVehiclesConfig, SimConfig,
    SimError,
};

const TAG_DEMAND: u64 = 0xD1;
const TAG_ROUTE: u64 = 0xD2;
const TAG_DEPART: u64 = 0xD3;
const TAG_EXTRA: u64 = 0xD4;
const TAG_CALIBRATION: u64 = 0xC0;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Emissions(#[from] EmissionsError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads a JSON (`.json`) or TOML (anything else) config file.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T, ExperimentError> {
    let text = fs::read_to_string(path)?;
    let parse_err = |message: String| ExperimentError::Parse {
        path: path.to_path_buf(),
        message,
    };
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))
    } else {
        toml::from_str(&text).map_err(|e| parse_err(e.to_string()))
    }
}

/// How to build the navigation provider R.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProviderSpec {
    /// exact fastest paths
    Fastest,
    /// replayed answers from `<dir>/<e_o>__<e_d>.json`
    Fixture {
        dir: PathBuf,
        #[serde(default)]
        fallback: Fallback,
    },
    Http {
        url: String,
        #[serde(default = "default_timeout")]
        timeout_s: f64,
    },
}

fn default_timeout() -> f64 {
    10.0
}

impl ProviderSpec {
    pub fn build(&self, label: &str) -> Box<dyn NavigationProvider> {
        match self {
            ProviderSpec::Fastest => Box::new(FastestProvider),
            ProviderSpec::Fixture { dir, fallback } => {
                Box::new(FixtureProvider::new(label, dir.clone(), *fallback))
            }
            ProviderSpec::Http { url, timeout_s } => Box::new(HttpProvider::new(
                label,
                url.clone(),
                Duration::from_secs_f64(*timeout_s),
            )),
        }
    }
}

fn default_i_values() -> Vec<u8> {
    (0..=10).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// label R written into every row
    pub provider_label: String,
    pub provider: ProviderSpec,
    pub n_vehicles: usize,
    pub w: f64,
    #[serde(default = "default_i_values")]
    pub i_values: Vec<u8>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub extra: ExtraVehiclesConfig,
    /// `None` uses the bundled passenger-car coefficients
    #[serde(default)]
    pub coefficients: Option<PathBuf>,
    /// keep one demand for all repetitions
    #[serde(default)]
    pub fix_demand: bool,
    /// keep one departure schedule for all repetitions
    #[serde(default)]
    pub fix_departures: bool,
    /// count zero-emission edges in Gini and fits
    #[serde(default)]
    pub include_zero_edges: bool,
    #[serde(default)]
    pub sim: SimConfig,
}

fn default_repetitions() -> usize {
    10
}

fn default_horizon() -> f64 {
    3600.0
}

impl SweepConfig {
    pub fn new(provider_label: &str, provider: ProviderSpec, n_vehicles: usize, w: f64) -> Self {
        Self {
            provider_label: provider_label.to_string(),
            provider,
            n_vehicles,
            w,
            i_values: default_i_values(),
            repetitions: default_repetitions(),
            master_seed: 0,
            horizon: default_horizon(),
            extra: ExtraVehiclesConfig::NONE,
            coefficients: None,
            fix_demand: false,
            fix_departures: false,
            include_zero_edges: false,
            sim: SimConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.repetitions == 0 {
            return Err(ExperimentError::Config("repetitions must be >= 1".into()));
        }
        if self.i_values.is_empty() || self.i_values.iter().any(|&i| i > 10) {
            return Err(ExperimentError::Config("i values must be a nonempty subset of 0..=10".into()));
        }
        if !(self.w >= 1.0) {
            return Err(ExperimentError::Config(format!("w must be >= 1, got {}", self.w)));
        }
        self.sim_config().validate()?;
        Ok(())
    }

    fn sim_config(&self) -> SimConfig {
        SimConfig {
            horizon: self.horizon,
            ..self.sim.clone()
        }
    }

    fn coefficients(&self) -> Result<EmissionCoefficients, ExperimentError> {
        Ok(match &self.coefficients {
            Some(p) => EmissionCoefficients::load(p)?,
            None => EmissionCoefficients::default_passenger_car(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub provider: String,
    pub w: f64,
    pub i: u8,
    pub rep: usize,
    pub seed: u64,
    pub status: String,
    pub total_co2_mg: Option<f64>,
    pub gini: Option<f64>,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub mean_travel_time: Option<f64>,
    pub teleports: Option<u64>,
    pub arrived: Option<usize>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.ok()).count()
    }
}

struct CellMetrics {
    total: f64,
    gini: Option<f64>,
    alpha: Option<f64>,
    lambda: Option<f64>,
    mean_tt: Option<f64>,
    teleports: u64,
    arrived: usize,
}

/// Everything a cell needs that does not depend on the cell.
struct SweepContext<'a> {
    cfg: &'a SweepConfig,
    net: &'a RoadNetwork,
    od: &'a OdMatrix,
    grid: &'a TileGrid,
    tiles: TileIndex,
    coef: EmissionCoefficients,
    provider: Box<dyn NavigationProvider>,
}

fn stream_seed(master: u64, tag: u64, rep: usize, fixed: bool) -> u64 {
    derive_seed(&[master, tag, if fixed { 0 } else { rep as u64 + 1 }])
}

pub fn cell_seed(master: u64, i: u8, rep: usize) -> u64 {
    derive_seed(&[master, u64::from(i), rep as u64])
}

/// The demand every cell of repetition `rep` shares.
pub fn sweep_demand(
    cfg: &SweepConfig,
    net: &RoadNetwork,
    od: &OdMatrix,
    grid: &TileGrid,
    rep: usize,
) -> Result<MobilityDemand, ExperimentError> {
    Ok(sample_demand(
        od,
        net,
        grid,
        cfg.n_vehicles,
        &mut rng_from(stream_seed(cfg.master_seed, TAG_DEMAND, rep, cfg.fix_demand)),
    )?)
}

fn run_cell(ctx: &SweepContext<'_>, i: u8, rep: usize) -> Result<CellMetrics, ExperimentError> {
    let cfg = ctx.cfg;
    let master = cfg.master_seed;
    let demand = sweep_demand(cfg, ctx.net, ctx.od, ctx.grid, rep)?;
    let routed = route_demand(
        ctx.net,
        &demand,
        i,
        ctx.provider.as_ref(),
        cfg.w,
        &mut rng_from(stream_seed(master, TAG_ROUTE, rep, false)),
    )?;
    let sim_cfg = cfg.sim_config();
    let sched = assign_departures(
        &routed,
        sim_cfg.horizon,
        &mut rng_from(stream_seed(master, TAG_DEPART, rep, cfg.fix_departures)),
    )?;
    let extras = generate_extra_vehicles(
        cfg.extra,
        cfg.n_vehicles,
        ctx.net,
        &ctx.tiles,
        cfg.w,
        sched.last().unwrap_or(0.0),
        sim_cfg.horizon / 4.0,
        &mut rng_from(stream_seed(master, TAG_EXTRA, rep, false)),
    )?;
    let mut acc = EmissionAccumulator::new(ctx.net, &ctx.coef, sim_cfg.dt)?;
    let (stats, _) = simulate_into(
        ctx.net,
        &routed,
        &sched,
        &sim_cfg,
        &extras,
        cell_seed(master, i, rep),
        &mut acc,
    )?;
    let weighted = acc.finish(ctx.net)?;
    let masses: Vec<f64> = weighted
        .masses()
        .iter()
        .copied()
        .filter(|&m| cfg.include_zero_edges || m > 0.0)
        .collect();
    let gini = analysis::gini(&masses).ok();
    let (alpha, lambda) = analysis::default_x_min(&masses)
        .and_then(|xm| analysis::fit_truncated_power_law(&masses, xm))
        .map(|f| (f.alpha, f.lambda))
        .unwrap_or_else(|e| {
            warn!("i={i} rep={rep}: truncated power-law fit skipped: {e}");
            (None, None)
        });
    Ok(CellMetrics {
        total: total_emissions(&weighted),
        gini,
        alpha,
        lambda,
        mean_tt: stats.mean_travel_time,
        teleports: stats.teleports,
        arrived: stats.arrived,
    })
}

/// Serializes rows to an append-only CSV as cells finish.
struct RowLog {
    writer: Option<csv::Writer<BufWriter<File>>>,
}

impl RowLog {
    fn open(path: Option<&Path>) -> Result<Self, ExperimentError> {
        let writer = match path {
            Some(p) => Some(csv::Writer::from_writer(BufWriter::new(File::create(p)?))),
            None => None,
        };
        Ok(Self { writer })
    }

    fn append<T: Serialize>(&mut self, row: &T) -> Result<(), ExperimentError> {
        if let Some(w) = self.writer.as_mut() {
            w.serialize(row)?;
            w.flush()?;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a, C: Serialize> {
    kind: &'a str,
    crate_version: &'a str,
    config: &'a C,
    cells: Vec<serde_json::Value>,
    failures: usize,
}

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_PARTIAL_CSV: &str = "sweep.rows.csv";
pub const SWEEP_MANIFEST: &str = "sweep.manifest.json";

/// Runs every `(i, rep)` cell in parallel. When `out_dir` is given, each row
/// is appended to `sweep.rows.csv` as soon as its cell finishes; the sorted
/// `sweep.csv` and `sweep.manifest.json` are written at the end. Failed cells
/// become rows with status `failed`.
pub fn run_sweep(
    cfg: &SweepConfig,
    net: &RoadNetwork,
    od: &OdMatrix,
    grid: &TileGrid,
    out_dir: Option<&Path>,
) -> Result<SweepResult, ExperimentError> {
    cfg.validate()?;
    let ctx = SweepContext {
        cfg,
        net,
        od,
        grid,
        tiles: TileIndex::new(net, grid),
        coef: cfg.coefficients()?,
        provider: cfg.provider.build(&cfg.provider_label),
    };
    if let Some(d) = out_dir {
        fs::create_dir_all(d)?;
    }
    let log = Mutex::new(RowLog::open(out_dir.map(|d| d.join(SWEEP_PARTIAL_CSV)).as_deref())?);
    let cells: Vec<(u8, usize)> = cfg
        .i_values
        .iter()
        .flat_map(|&i| (0..cfg.repetitions).map(move |r| (i, r)))
        .collect();

    let mut rows = cells
        .par_iter()
        .map(|&(i, rep)| {
            let seed = cell_seed(cfg.master_seed, i, rep);
            let mut row = SweepRow {
                provider: cfg.provider_label.clone(),
                w: cfg.w,
                i,
                rep,
                seed,
                status: "ok".into(),
                total_co2_mg: None,
                gini: None,
                alpha: None,
                lambda: None,
                mean_travel_time: None,
                teleports: None,
                arrived: None,
                error: None,
            };
            match run_cell(&ctx, i, rep) {
                Ok(m) => {
                    row.total_co2_mg = Some(m.total);
                    row.gini = m.gini;
                    row.alpha = m.alpha;
                    row.lambda = m.lambda;
                    row.mean_travel_time = m.mean_tt;
                    row.teleports = Some(m.teleports);
                    row.arrived = Some(m.arrived);
                    info!("cell i={i} rep={rep}: total CO2 {:.4e} mg", m.total);
                }
                Err(e) => {
                    warn!("cell i={i} rep={rep} failed: {e}");
                    row.status = "failed".into();
                    row.error = Some(e.to_string());
                }
            }
            log.lock()
                .expect("row log lock")
                .append(&row)
                .map(|_| row)
        })
        .collect::<Result<Vec<_>, _>>()?;
    rows.sort_by_key(|r| (r.i, r.rep));
    let result = SweepResult { rows };

    if let Some(d) = out_dir {
        write_rows_csv(File::create(d.join(SWEEP_CSV))?, &result.rows)?;
        let manifest = Manifest {
            kind: "sweep",
            crate_version: env!("CARGO_PKG_VERSION"),
            config: cfg,
            cells: result
                .rows
                .iter()
                .map(|r| serde_json::json!({"i": r.i, "rep": r.rep, "seed": r.seed, "status": r.status}))
                .collect(),
            failures: result.failures(),
        };
        serde_json::to_writer_pretty(File::create(d.join(SWEEP_MANIFEST))?, &manifest)?;
    }
    Ok(result)
}

/// Reruns the whole sweep for each `w`, concatenating the rows.
pub fn run_w_sweep(
    cfg: &SweepConfig,
    w_values: &[f64],
    net: &RoadNetwork,
    od: &OdMatrix,
    grid: &TileGrid,
    out_dir: Option<&Path>,
) -> Result<SweepResult, ExperimentError> {
    let mut rows = Vec::new();
    for &w in w_values {
        let sub = out_dir.map(|d| d.join(format!("w{w}")));
        let cfg_w = SweepConfig { w, ..cfg.clone() };
        rows.extend(run_sweep(&cfg_w, net, od, grid, sub.as_deref())?.rows);
    }
    let result = SweepResult { rows };
    if let Some(d) = out_dir {
        write_rows_csv(File::create(d.join(SWEEP_CSV))?, &result.rows)?;
    }
    Ok(result)
}

pub fn write_rows_csv<W: io::Write, T: Serialize>(writer: W, rows: &[T]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: io::Read>(reader: R) -> Result<SweepResult, ExperimentError> {
    let rows = csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<Result<Vec<SweepRow>, _>>()?;
    Ok(SweepResult { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub provider: String,
    pub w: f64,
    pub i: u8,
    pub reps: usize,
    pub total_co2_mean: Option<f64>,
    pub total_co2_std: Option<f64>,
    pub gini_mean: Option<f64>,
    pub gini_std: Option<f64>,
    pub alpha_mean: Option<f64>,
    pub alpha_std: Option<f64>,
    pub travel_time_mean: Option<f64>,
    pub travel_time_std: Option<f64>,
    pub teleports_mean: Option<f64>,
}

/// Mean and population standard deviation.
fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (Some(m), Some(var.sqrt()))
}

/// One row per `(provider, w, i)` over the successful repetitions.
pub fn summarize(result: &SweepResult) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, f64, u8)> = result
        .rows
        .iter()
        .map(|r| (r.provider.clone(), r.w, r.i))
        .collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    keys.dedup();
    keys.into_iter()
        .map(|(provider, w, i)| {
            let rows: Vec<&SweepRow> = result
                .rows
                .iter()
                .filter(|r| r.ok() && r.provider == provider && r.w == w && r.i == i)
                .collect();
            let col = |f: fn(&SweepRow) -> Option<f64>| -> Vec<f64> {
                rows.iter().filter_map(|r| f(r)).collect()
            };
            let (total_co2_mean, total_co2_std) = mean_std(&col(|r| r.total_co2_mg));
            let (gini_mean, gini_std) = mean_std(&col(|r| r.gini));
            let (alpha_mean, alpha_std) = mean_std(&col(|r| r.alpha));
            let (travel_time_mean, travel_time_std) = mean_std(&col(|r| r.mean_travel_time));
            let (teleports_mean, _) = mean_std(&col(|r| r.teleports.map(|t| t as f64)));
            SummaryRow {
                provider,
                w,
                i,
                reps: rows.len(),
                total_co2_mean,
                total_co2_std,
                gini_mean,
                gini_std,
                alpha_mean,
                alpha_std,
                travel_time_mean,
                travel_time_std,
                teleports_mean,
            }
        })
        .collect()
}

fn default_runs() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationGrid {
    pub n_values: Vec<usize>,
    pub w_values: Vec<f64>,
    pub extra_values: Vec<ExtraVehiclesConfig>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub sim: SimConfig,
}

fn default_bins() -> usize {
    DEFAULT_TT_BINS
}

impl Default for CalibrationGrid {
    fn default() -> Self {
        Self {
            n_values: vec![5000, 10000, 15000, 20000],
            w_values: vec![1.0, 2.5, 5.0, 10.0, 15.0, 25.0],
            extra_values: vec![
                ExtraVehiclesConfig::NONE,
                ExtraVehiclesConfig {
                    start_pct: 15,
                    end_pct: 0,
                },
                ExtraVehiclesConfig {
                    start_pct: 15,
                    end_pct: 45,
                },
            ],
            runs: default_runs(),
            master_seed: 0,
            horizon: default_horizon(),
            bins: default_bins(),
            sim: SimConfig::default(),
        }
    }
}

impl CalibrationGrid {
    pub fn cells(&self) -> Vec<(usize, f64, ExtraVehiclesConfig)> {
        let mut out = Vec::new();
        for &n in &self.n_values {
            for &w in &self.w_values {
                for &c in &self.extra_values {
                    out.push((n, w, c));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.cells().is_empty() {
            return Err(ExperimentError::Config("calibration grid is empty".into()));
        }
        if self.runs == 0 {
            return Err(ExperimentError::Config("runs must be >= 1".into()));
        }
        if self.bins == 0 {
            return Err(ExperimentError::Config("bins must be >= 1".into()));
        }
        SimConfig {
            horizon: self.horizon,
            ..self.sim.clone()
        }
        .validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    /// 1-based position in the ranking; `None` for failed cells
    pub rank: Option<usize>,
    pub n: usize,
    pub w: f64,
    pub extra: ExtraVehiclesConfig,
    pub js: Option<f64>,
    pub abs_dtt: Option<f64>,
    pub teleports: Option<f64>,
    pub runs_ok: usize,
    pub runs_failed: usize,
    pub status: String,
    pub error: Option<String>,
}

struct RunOutcome {
    js: f64,
    abs_dtt: f64,
    teleports: u64,
}

#[allow(clippy::too_many_arguments)]
fn calibration_run(
    grid: &CalibrationGrid,
    net: &RoadNetwork,
    od: &OdMatrix,
    tile_grid: &TileGrid,
    tiles: &TileIndex,
    real: &[f64],
    (n, w, c): (usize, f64, ExtraVehiclesConfig),
    run: usize,
) -> Result<RunOutcome, ExperimentError> {
    let base = derive_seed(&[grid.master_seed, TAG_CALIBRATION, n as u64, w.to_bits(), run as u64]);
    let seed = |tag: u64| derive_seed(&[base, tag]);
    let demand = sample_demand(od, net, tile_grid, n, &mut rng_from(seed(TAG_DEMAND)))?;
    let routed = route_demand(net, &demand, 0, &FastestProvider, w, &mut rng_from(seed(TAG_ROUTE)))?;
    let sim_cfg = SimConfig {
        horizon: grid.horizon,
        ..grid.sim.clone()
    };
    let sched = assign_departures(&routed, sim_cfg.horizon, &mut rng_from(seed(TAG_DEPART)))?;
    let extras = generate_extra_vehicles(
        c,
        n,
        net,
        tiles,
        w,
        sched.last().unwrap_or(0.0),
        sim_cfg.horizon / 4.0,
        &mut rng_from(seed(TAG_EXTRA)),
    )?;
    let (stats, outcomes) = simulate_into(
        net,
        &routed,
        &sched,
        &sim_cfg,
        &extras,
        base,
        &mut crate::sim::NullSink,
    )?;
    let tt: Vec<f64> = outcomes
        .iter()
        .filter(|o| !o.extra)
        .filter_map(|o| o.travel_time())
        .collect();
    if tt.is_empty() {
        return Err(ExperimentError::Config("no demand vehicle arrived".into()));
    }
    let cmp = travel_time_comparison(&tt, real, grid.bins)?;
    Ok(RunOutcome {
        js: cmp.js,
        abs_dtt: cmp.abs_mean_diff,
        teleports: stats.teleports,
    })
}

/// Ranks the calibration cells: every cell `C(N, w, c)` simulates the
/// all-perturbed demand `runs` times and averages JS, |Δtt| and teleports
/// over successful runs. Rows are sorted ascending by JS, then |Δtt|, then
/// teleports; cells whose runs all failed are flagged and listed last
/// without a rank.
pub fn run_calibration(
    grid: &CalibrationGrid,
    net: &RoadNetwork,
    od: &OdMatrix,
    tile_grid: &TileGrid,
    real_times: &[f64],
) -> Result<Vec<CalibrationRow>, ExperimentError> {
    grid.validate()?;
    if real_times.is_empty() {
        return Err(ExperimentError::Config("no observed travel times".into()));
    }
    let tiles = TileIndex::new(net, tile_grid);
    let cells = grid.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..grid.runs).map(move |r| (c, r)))
        .collect();
    let outcomes: Vec<(usize, Result<RunOutcome, ExperimentError>)> = jobs
        .par_iter()
        .map(|&(c, r)| {
            (
                c,
                calibration_run(grid, net, od, tile_grid, &tiles, real_times, cells[c], r),
            )
        })
        .collect();

    let mut rows: Vec<CalibrationRow> = cells
        .iter()
        .enumerate()
        .map(|(ci, &(n, w, extra))| {
            let mut ok = Vec::new();
            let mut last_err = None;
            for (c, res) in &outcomes {
                if *c != ci {
                    continue;
                }
                match res {
                    Ok(o) => ok.push(o),
                    Err(e) => last_err = Some(e.to_string()),
                }
            }
            let runs_failed = grid.runs - ok.len();
            let avg = |f: fn(&RunOutcome) -> f64| {
                (!ok.is_empty()).then(|| ok.iter().map(|o| f(o)).sum::<f64>() / ok.len() as f64)
            };
            CalibrationRow {
                rank: None,
                n,
                w,
                extra,
                js: avg(|o| o.js),
                abs_dtt: avg(|o| o.abs_dtt),
                teleports: avg(|o| o.teleports as f64),
                runs_ok: ok.len(),
                runs_failed,
                status: if ok.is_empty() { "failed" } else { "ok" }.into(),
                error: last_err,
            }
        })
        .collect();
    sort_calibration(&mut rows);
    Ok(rows)
}

/// Ascending JS, then |Δtt|, then teleports; failed rows last. Assigns ranks.
pub fn sort_calibration(rows: &mut [CalibrationRow]) {
    let key = |r: &CalibrationRow| {
        (
            r.status != "ok",
            r.js.unwrap_or(f64::INFINITY),
            r.abs_dtt.unwrap_or(f64::INFINITY),
            r.teleports.unwrap_or(f64::INFINITY),
        )
    };
    rows.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(ka.2.total_cmp(&kb.2))
            .then(ka.3.total_cmp(&kb.3))
    });
    let mut rank = 0;
    for r in rows.iter_mut() {
        if r.status == "ok" {
            rank += 1;
            r.rank = Some(rank);
        } else {
            r.rank = None;
        }
    }
}

pub const CALIBRATION_CSV: &str = "calibration.csv";
pub const CALIBRATION_MANIFEST: &str = "calibration.manifest.json";

pub fn write_calibration(
    out_dir: &Path,
    grid: &CalibrationGrid,
    rows: &[CalibrationRow],
) -> Result<(), ExperimentError> {
    fs::create_dir_all(out_dir)?;
    write_rows_csv(File::create(out_dir.join(CALIBRATION_CSV))?, rows)?;
    let manifest = Manifest {
        kind: "calibration",
        crate_version: env!("CARGO_PKG_VERSION"),
        config: grid,
        cells: rows
            .iter()
            .map(|r| serde_json::json!({"n": r.n, "w": r.w, "extra": r.extra.to_string(), "status": r.status}))
            .collect(),
        failures: rows.iter().filter(|r| r.status != "ok").count(),
    };
    serde_json::to_writer_pretty(File::create(out_dir.join(CALIBRATION_MANIFEST))?, &manifest)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::Tile;
    use crate::network::synth_grid;

    fn small_world() -> (RoadNetwork, TileGrid, OdMatrix) {
        let net = synth_grid(4, 4, 100.0, 13.9, Some(2)).unwrap();
        let grid = TileGrid::covering(&net, 150.0).unwrap();
        let mut od = OdMatrix::new();
        od.add(Tile::new(0, 0), Tile::new(1, 1), 5);
        od.add(Tile::new(1, 1), Tile::new(0, 0), 3);
        od.add(Tile::new(0, 1), Tile::new(1, 0), 2);
        (net, grid, od)
    }

    fn small_cfg() -> SweepConfig {
        SweepConfig {
            i_values: vec![0, 5, 10],
            repetitions: 2,
            master_seed: 7,
            horizon: 120.0,
            ..SweepConfig::new("fastest", ProviderSpec::Fastest, 30, 5.0)
        }
    }

    #[test]
    fn sweep_is_reproducible_and_complete() {
        let (net, grid, od) = small_world();
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let a = run_sweep(&cfg, &net, &od, &grid, Some(dir.path())).unwrap();
        assert_eq!(a.rows.len(), 6);
        assert_eq!(a.failures(), 0);
        let first = fs::read(dir.path().join(SWEEP_CSV)).unwrap();
        let b = run_sweep(&cfg, &net, &od, &grid, Some(dir.path())).unwrap();
        assert_eq!(a, b);
        assert_eq!(first, fs::read(dir.path().join(SWEEP_CSV)).unwrap());
        let partial = fs::read_to_string(dir.path().join(SWEEP_PARTIAL_CSV)).unwrap();
        assert_eq!(partial.lines().count(), 7);
        let back = read_sweep_csv(first.as_slice()).unwrap();
        assert_eq!(back.rows.len(), 6);
        assert!(dir.path().join(SWEEP_MANIFEST).exists());
    }

    #[test]
    fn summary_counts_and_degenerate_std() {
        let mk = |i: u8, rep: usize, total: f64| SweepRow {
            provider: "R".into(),
            w: 5.0,
            i,
            rep,
            seed: 0,
            status: "ok".into(),
            total_co2_mg: Some(total),
            gini: Some(0.5),
            alpha: None,
            lambda: None,
            mean_travel_time: Some(100.0),
            teleports: Some(0),
            arrived: Some(1),
            error: None,
        };
        let res = SweepResult {
            rows: vec![mk(0, 0, 10.0), mk(0, 1, 20.0), mk(3, 0, 7.0)],
        };
        let s = summarize(&res);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].total_co2_mean, Some(15.0));
        assert_eq!(s[0].total_co2_std, Some(5.0));
        assert_eq!(s[0].gini_std, Some(0.0));
        assert_eq!(s[1].total_co2_std, Some(0.0));
        assert_eq!(s[1].alpha_mean, None);
    }

    #[test]
    fn calibration_sorting_contract() {
        let row = |js: Option<f64>, dtt: f64, tp: f64| CalibrationRow {
            rank: None,
            n: 1,
            w: 1.0,
            extra: ExtraVehiclesConfig::NONE,
            js,
            abs_dtt: Some(dtt),
            teleports: Some(tp),
            runs_ok: 1,
            runs_failed: 0,
            status: if js.is_some() { "ok" } else { "failed" }.into(),
            error: None,
        };
        let mut rows = vec![
            row(Some(0.3), 1.0, 0.0),
            row(None, 0.0, 0.0),
            row(Some(0.1), 5.0, 2.0),
            row(Some(0.1), 5.0, 1.0),
            row(Some(0.1), 2.0, 9.0),
        ];
        sort_calibration(&mut rows);
        let order: Vec<(Option<f64>, Option<f64>, Option<f64>)> =
            rows.iter().map(|r| (r.js, r.abs_dtt, r.teleports)).collect();
        assert_eq!(
            order,
            vec![
                (Some(0.1), Some(2.0), Some(9.0)),
                (Some(0.1), Some(5.0), Some(1.0)),
                (Some(0.1), Some(5.0), Some(2.0)),
                (Some(0.3), Some(1.0), Some(0.0)),
                (None, Some(0.0), Some(0.0)),
            ]
        );
        assert_eq!(rows[0].rank, Some(1));
        assert_eq!(rows[4].rank, None);
    }

    #[test]
    fn config_files_parse() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("sweep.toml");
        fs::write(
            &toml_path,
            r#"
provider_label = "TT"
n_vehicles = 100
w = 5.0
repetitions = 3
extra = "15_start"
[provider]
kind = "fixture"
dir = "routes"
fallback = "fastest"
"#,
        )
        .unwrap();
        let cfg: SweepConfig = load_config(&toml_path).unwrap();
        assert_eq!(cfg.i_values, default_i_values());
        assert_eq!(cfg.extra.start_pct, 15);
        assert!(matches!(cfg.provider, ProviderSpec::Fixture { fallback: Fallback::Fastest, .. }));
        let json_path = dir.path().join("grid.json");
        fs::write(
            &json_path,
            r#"{"n_values":[10],"w_values":[1.0,5.0],"extra_values":["none","15_start+45_end"]}"#,
        )
        .unwrap();
        let g: CalibrationGrid = load_config(&json_path).unwrap();
        assert_eq!(g.cells().len(), 4);
        assert_eq!(g.runs, 5);
    }

    #[test]
    fn invalid_sweep_config() {
        let mut cfg = small_cfg();
        cfg.repetitions = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.i_values = vec![11];
        assert!(cfg.validate().is_err());
    }
}
