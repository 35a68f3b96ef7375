use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use routemix::analysis::{self, ccdf, fit_report, gini, travel_time_comparison, DEFAULT_TT_BINS};
use routemix::demand::{
    estimate_od, read_demand, read_od_matrix, read_trip_records, sample_demand, synth_trip_records,
    write_demand, write_od_matrix, write_trip_records, SyntheticRecordsConfig, TileGrid,
    TileIndex,
};
use routemix::emissions::{
    aggregate, emission_diff, read_weighted_csv, to_geojson, total_emissions, write_weighted_csv,
    EmissionCoefficients, GeoValues,
};
use routemix::experiment::{
    load_config, run_calibration, run_sweep, run_w_sweep, read_sweep_csv, summarize,
    write_calibration, write_rows_csv, CalibrationGrid, ProviderSpec, SweepConfig,
};
use routemix::network::{
    largest_scc, load_network, store_network, strongly_connected_components, synth_grid_with,
    GridOptions, RoadNetwork,
};
use routemix::routing::{
    external_route, fastest_path, perturbation_curve, perturbed_fastest_path, read_routed_demand,
    route_demand, write_routed_demand, Fallback, FastestProvider, FixtureProvider, HttpProvider,
    NavigationProvider, RoutedPath,
};
use routemix::seeds::{derive_seed, rng_from};
use routemix::sim::{
    assign_departures, generate_extra_vehicles, simulate, write_stats_json,
    write_trajectory_csv, ExtraVehiclesConfig, SimConfig,
};

#[derive(Parser)]
#[command(name = "routemix", version, about = "Mixed-routing traffic emission experiments")]
struct Cli {
    /// master seed for every random stream
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON or TOML config file for the subcommand
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// output directory
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Road network files
    #[command(subcommand)]
    Net(NetCmd),
    /// Trip records, OD matrices and sampled demand
    #[command(subcommand)]
    Demand(DemandCmd),
    /// Fastest and perturbed routing
    #[command(subcommand)]
    Route(RouteCmd),
    /// Simulate a routed demand
    Simulate(SimulateArgs),
    /// Per-edge CO2 from trajectories
    #[command(subcommand)]
    Emissions(EmissionsCmd),
    /// Inequality, tail fits and travel-time comparison
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    /// Mixing sweeps and calibration
    #[command(subcommand)]
    Experiment(ExperimentCmd),
}

#[derive(Subcommand)]
enum NetCmd {
    /// Check a network file and report strongly connected components
    Validate {
        network: PathBuf,
        /// write the largest strongly connected component to <out>/network.scc.json
        #[arg(long)]
        keep_largest_scc: bool,
    },
    /// Generate a Manhattan grid (options from --config or flags)
    Synth {
        #[arg(long, default_value_t = 10)]
        rows: usize,
        #[arg(long, default_value_t = 10)]
        cols: usize,
        #[arg(long, default_value_t = 200.0)]
        block: f64,
        #[arg(long, default_value_t = 13.89)]
        speed: f64,
        #[arg(long)]
        light_period: Option<usize>,
    },
}

#[derive(Args)]
struct TileArgs {
    network: PathBuf,
    /// tile side, meters
    #[arg(long, default_value_t = 1000.0)]
    tile_side: f64,
}

#[derive(Subcommand)]
enum DemandCmd {
    /// Trip records CSV to tile OD matrix
    BuildOd {
        #[command(flatten)]
        tiles: TileArgs,
        records: PathBuf,
    },
    /// Sample N trips from an OD matrix
    Sample {
        #[command(flatten)]
        tiles: TileArgs,
        od: PathBuf,
        #[arg(long)]
        n: usize,
    },
    /// Generate synthetic trip records (SyntheticRecordsConfig via --config)
    SynthRecords {
        #[command(flatten)]
        tiles: TileArgs,
        #[arg(long)]
        n: Option<usize>,
    },
}

#[derive(Args, Clone)]
struct ProviderArgs {
    /// directory of <e_o>__<e_d>.json route fixtures
    #[arg(long, conflicts_with = "http")]
    fixtures: Option<PathBuf>,
    /// routing service URL
    #[arg(long)]
    http: Option<String>,
    #[arg(long, default_value = "error")]
    fallback: Fallback,
    #[arg(long, default_value_t = 10.0)]
    timeout_s: f64,
    /// provider label
    #[arg(long, default_value = "R")]
    label: String,
}

impl ProviderArgs {
    fn provider_spec(&self) -> ProviderSpec {
        match (&self.fixtures, &self.http) {
            (Some(dir), _) => ProviderSpec::Fixture {
                dir: dir.clone(),
                fallback: self.fallback,
            },
            (None, Some(url)) => ProviderSpec::Http {
                url: url.clone(),
                timeout_s: self.timeout_s,
            },
            (None, None) => ProviderSpec::Fastest,
        }
    }

    fn build(&self) -> Box<dyn NavigationProvider> {
        match self.provider_spec() {
            ProviderSpec::Fastest => Box::new(FastestProvider),
            ProviderSpec::Fixture { dir, fallback } => {
                Box::new(FixtureProvider::new(&self.label, dir, fallback))
            }
            ProviderSpec::Http { url, timeout_s } => Box::new(HttpProvider::new(
                &self.label,
                url,
                Duration::from_secs_f64(timeout_s),
            )),
        }
    }
}

#[derive(Subcommand)]
enum RouteCmd {
    /// Route one origin/destination edge pair
    Single {
        network: PathBuf,
        origin: String,
        dest: String,
        /// perturbation strength; omit for the navigation provider
        #[arg(long)]
        w: Option<f64>,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Route a demand with i tenths navigation-routed
    Demand {
        network: PathBuf,
        demand: PathBuf,
        #[arg(long)]
        i: u8,
        #[arg(long)]
        w: f64,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Mean SSPD between perturbed and fastest paths as a function of w
    PerturbationCurve {
        network: PathBuf,
        #[arg(long, default_value_t = 200)]
        pairs: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2.5,5,10,15,25")]
        w: Vec<f64>,
    },
}

#[derive(Args)]
struct SimulateArgs {
    network: PathBuf,
    routed: PathBuf,
    #[arg(long, default_value = "none")]
    extra: ExtraVehiclesConfig,
    /// perturbation strength for extra vehicles
    #[arg(long, default_value_t = 1.0)]
    w: f64,
    /// tile side for extra-vehicle origins, meters
    #[arg(long, default_value_t = 1000.0)]
    tile_side: f64,
    #[arg(long)]
    horizon: Option<f64>,
    /// skip writing the per-step trajectory CSV
    #[arg(long)]
    no_trajectory: bool,
    /// emission coefficients (TOML or JSON); defaults to the bundled car
    #[arg(long)]
    coefficients: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EmissionsCmd {
    /// Trajectory CSV to per-edge CO2 masses
    Aggregate {
        network: PathBuf,
        trajectory: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        dt: f64,
        #[arg(long)]
        coefficients: Option<PathBuf>,
    },
    /// Per-meter difference a - b of two weighted networks
    Diff {
        network: PathBuf,
        a: PathBuf,
        b: PathBuf,
    },
    /// GeoJSON of per-meter emissions, or of a diff when --minus is given
    ExportGeojson {
        network: PathBuf,
        weighted: PathBuf,
        #[arg(long)]
        minus: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Gini coefficient of per-edge emissions
    Gini {
        weighted: PathBuf,
        #[arg(long)]
        include_zero: bool,
    },
    /// Fit all tail families and select the best one
    Fit {
        weighted: PathBuf,
        /// defaults to the smallest positive value
        #[arg(long, conflicts_with = "scan_x_min")]
        x_min: Option<f64>,
        /// choose x_min by KS-distance scan
        #[arg(long)]
        scan_x_min: bool,
    },
    /// JS divergence between simulated and observed travel times
    Js {
        /// vehicles.csv written by `simulate`
        sim: PathBuf,
        /// trip records CSV
        real: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TT_BINS)]
        bins: usize,
    },
    /// Empirical CCDF and KDE of per-edge emissions
    Ccdf {
        weighted: PathBuf,
        #[arg(long, default_value_t = 200)]
        kde_points: usize,
    },
}

#[derive(Args)]
struct WorldArgs {
    network: PathBuf,
    od: PathBuf,
    #[arg(long, default_value_t = 1000.0)]
    tile_side: f64,
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Run the mixing sweep (SweepConfig via --config)
    Sweep {
        #[command(flatten)]
        world: WorldArgs,
        /// repeat the sweep for each of these w values
        #[arg(long, value_delimiter = ',')]
        w_values: Vec<f64>,
        /// one demand for all repetitions
        #[arg(long)]
        fix_demand: bool,
        #[arg(long)]
        fix_departures: bool,
    },
    /// Grid-search (N, w, c) against observed travel times (CalibrationGrid via --config)
    Calibrate {
        #[command(flatten)]
        world: WorldArgs,
        /// trip records CSV with observed travel times
        real: PathBuf,
    },
    /// Per-i mean and std of a sweep CSV
    Summarize { sweep: PathBuf },
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    let p = dir.join(name);
    eprintln!("writing {}", p.display());
    Ok(BufWriter::new(
        File::create(&p).with_context(|| format!("cannot create {}", p.display()))?,
    ))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, v: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, v)?;
    w.flush()?;
    Ok(())
}

fn coefficients(path: Option<&Path>) -> Result<EmissionCoefficients> {
    Ok(match path {
        Some(p) => EmissionCoefficients::load(p)?,
        None => EmissionCoefficients::default_passenger_car(),
    })
}

fn tile_grid(net: &RoadNetwork, side: f64) -> Result<TileGrid> {
    Ok(TileGrid::covering(net, side)?)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out.as_path();
    let config = cli.config.as_deref();
    let seed = cli.seed;
    match cli.cmd {
        Cmd::Net(c) => net_cmd(c, out, config),
        Cmd::Demand(c) => demand_cmd(c, out, config, seed),
        Cmd::Route(c) => route_cmd(c, out, seed),
        Cmd::Simulate(a) => simulate_cmd(a, out, config, seed),
        Cmd::Emissions(c) => emissions_cmd(c, out),
        Cmd::Analyze(c) => analyze_cmd(c, out),
        Cmd::Experiment(c) => experiment_cmd(c, out, config, seed),
    }
}

fn net_cmd(c: NetCmd, out: &Path, config: Option<&Path>) -> Result<()> {
    match c {
        NetCmd::Validate {
            network,
            keep_largest_scc,
        } => {
            let net = load_network(&network)?;
            let comp = strongly_connected_components(&net);
            let n_comp = comp.iter().max().map_or(0, |m| m + 1);
            println!(
                "{}: {} nodes, {} edges, {} strongly connected component(s)",
                network.display(),
                net.node_count(),
                net.edge_count(),
                n_comp
            );
            if keep_largest_scc {
                fs::create_dir_all(out)?;
                store_network(&largest_scc(&net)?, out.join("network.scc.json"))?;
            }
        }
        NetCmd::Synth {
            rows,
            cols,
            block,
            speed,
            light_period,
        } => {
            let opts = match config {
                Some(p) => load_config::<GridOptions>(p)?,
                None => GridOptions {
                    light_period,
                    ..GridOptions::new(rows, cols, block, speed)
                },
            };
            let net = synth_grid_with(&opts)?;
            fs::create_dir_all(out)?;
            store_network(&net, out.join("network.json"))?;
            println!("{} nodes, {} edges", net.node_count(), net.edge_count());
        }
    }
    Ok(())
}

fn demand_cmd(c: DemandCmd, out: &Path, config: Option<&Path>, seed: u64) -> Result<()> {
    match c {
        DemandCmd::BuildOd { tiles, records } => {
            let net = load_network(&tiles.network)?;
            let grid = tile_grid(&net, tiles.tile_side)?;
            let recs = read_trip_records(open(&records)?)?;
            let od = estimate_od(&recs, &grid)?;
            write_od_matrix(create(out, "od.csv")?, &od)?;
            println!("{} OD pairs, {} trips", od.len(), od.total());
        }
        DemandCmd::Sample { tiles, od, n } => {
            let net = load_network(&tiles.network)?;
            let grid = tile_grid(&net, tiles.tile_side)?;
            let od = read_od_matrix(open(&od)?)?;
            let demand = sample_demand(&od, &net, &grid, n, &mut rng_from(seed))?;
            write_demand(create(out, "demand.csv")?, &demand, &net)?;
        }
        DemandCmd::SynthRecords { tiles, n } => {
            let net = load_network(&tiles.network)?;
            let grid = tile_grid(&net, tiles.tile_side)?;
            let mut cfg = match config {
                Some(p) => load_config::<SyntheticRecordsConfig>(p)?,
                None => SyntheticRecordsConfig::default(),
            };
            if let Some(n) = n {
                cfg.n_records = n;
            }
            let recs = synth_trip_records(&grid, &cfg, &mut rng_from(seed))?;
            write_trip_records(create(out, "records.csv")?, &recs)?;
        }
    }
    Ok(())
}

fn route_cmd(c: RouteCmd, out: &Path, seed: u64) -> Result<()> {
    match c {
        RouteCmd::Single {
            network,
            origin,
            dest,
            w,
            provider,
        } => {
            let net = load_network(&network)?;
            let (o, d) = (net.require_edge(&origin)?, net.require_edge(&dest)?);
            let path: RoutedPath = match w {
                Some(w) => perturbed_fastest_path(&net, "single", o, d, w, &mut rng_from(seed))?,
                None if provider.fixtures.is_none() && provider.http.is_none() => {
                    fastest_path(&net, "single", o, d)?
                }
                None => external_route(provider.build().as_ref(), &net, "single", o, d)?,
            };
            let ids: Vec<&str> = path.edges.iter().map(|&e| net.edge(e).id.as_str()).collect();
            println!("{}", serde_json::to_string(&ids)?);
        }
        RouteCmd::Demand {
            network,
            demand,
            i,
            w,
            provider,
        } => {
            let net = load_network(&network)?;
            let demand = read_demand(open(&demand)?, &net)?;
            let p = provider.build();
            let routed = route_demand(&net, &demand, i, p.as_ref(), w, &mut rng_from(seed))?;
            let mut f = create(out, "routed.json")?;
            write_routed_demand(&mut f, &routed, &net)?;
            f.flush()?;
            println!(
                "{} vehicles, {} navigation-routed",
                routed.len(),
                routed.navigation_count()
            );
        }
        RouteCmd::PerturbationCurve { network, pairs, w } => {
            let net = load_network(&network)?;
            let rows = perturbation_curve(&net, pairs, &w, &mut rng_from(seed))?;
            write_rows_csv(create(out, "perturbation_curve.csv")?, &rows)?;
            for r in &rows {
                println!("w={:<6} mean SSPD {:.2} m", r.w, r.mean_sspd);
            }
        }
    }
    Ok(())
}

fn simulate_cmd(a: SimulateArgs, out: &Path, config: Option<&Path>, seed: u64) -> Result<()> {
    let net = load_network(&a.network)?;
    let routed = read_routed_demand(open(&a.routed)?, &net)?;
    let mut cfg = match config {
        Some(p) => load_config::<SimConfig>(p)?,
        None => SimConfig::default(),
    };
    if let Some(h) = a.horizon {
        cfg.horizon = h;
    }
    cfg.validate()?;
    let sched = assign_departures(&routed, cfg.horizon, &mut rng_from(derive_seed(&[seed, 1])))?;
    let tiles = TileIndex::new(&net, &tile_grid(&net, a.tile_side)?);
    let extras = generate_extra_vehicles(
        a.extra,
        routed.len(),
        &net,
        &tiles,
        a.w,
        sched.last().unwrap_or(0.0),
        cfg.horizon / 4.0,
        &mut rng_from(derive_seed(&[seed, 2])),
    )?;
    let (log, stats) = simulate(&net, &routed, &sched, &cfg, &extras, seed)?;
    if !a.no_trajectory {
        let mut f = create(out, "trajectory.csv")?;
        write_trajectory_csv(&mut f, &log, &net)?;
        f.flush()?;
    }
    write_rows_csv(create(out, "vehicles.csv")?, &log.vehicles)?;
    write_stats_json(create(out, "stats.json")?, &stats)?;
    let weighted = aggregate(&log, &coefficients(a.coefficients.as_deref())?, &net, cfg.dt)?;
    write_weighted_csv(create(out, "emissions.csv")?, &weighted)?;
    println!(
        "arrived {}/{}, teleports {}, total CO2 {:.4e} mg",
        stats.arrived,
        routed.len(),
        stats.teleports,
        total_emissions(&weighted)
    );
    Ok(())
}

fn emissions_cmd(c: EmissionsCmd, out: &Path) -> Result<()> {
    match c {
        EmissionsCmd::Aggregate {
            network,
            trajectory,
            dt,
            coefficients: coef,
        } => {
            let net = load_network(&network)?;
            let log = routemix::sim::read_trajectory_csv(open(&trajectory)?, &net)?;
            let g = aggregate(&log, &coefficients(coef.as_deref())?, &net, dt)?;
            write_weighted_csv(create(out, "emissions.csv")?, &g)?;
            println!("total CO2 {:.4e} mg", total_emissions(&g));
        }
        EmissionsCmd::Diff { network, a, b } => {
            let net = load_network(&network)?;
            let ga = read_weighted_csv(open(&a)?, &net)?;
            let gb = read_weighted_csv(open(&b)?, &net)?;
            let diff = emission_diff(&ga, &gb)?;
            #[derive(Serialize)]
            struct Row<'a> {
                edge_id: &'a str,
                diff_mg_per_m: f64,
            }
            let rows: Vec<Row> = net
                .edges()
                .iter()
                .zip(&diff)
                .map(|(e, &d)| Row {
                    edge_id: &e.id,
                    diff_mg_per_m: d,
                })
                .collect();
            write_rows_csv(create(out, "diff.csv")?, &rows)?;
        }
        EmissionsCmd::ExportGeojson {
            network,
            weighted,
            minus,
        } => {
            let net = load_network(&network)?;
            let g = read_weighted_csv(open(&weighted)?, &net)?;
            let json = match minus {
                Some(b) => {
                    let gb = read_weighted_csv(open(&b)?, &net)?;
                    to_geojson(&net, GeoValues::Diff(&emission_diff(&g, &gb)?))?
                }
                None => to_geojson(&net, GeoValues::PerMeter(&g))?,
            };
            write_json(out, "emissions.geojson", &json)?;
        }
    }
    Ok(())
}

/// Per-edge masses from a weighted-network CSV, without needing the network.
fn read_masses(path: &Path, include_zero: bool) -> Result<Vec<f64>> {
    #[derive(serde::Deserialize)]
    struct Row {
        co2_mg: f64,
    }
    let mut v = Vec::new();
    for rec in csv::Reader::from_reader(open(path)?).deserialize() {
        let r: Row = rec?;
        if include_zero || r.co2_mg > 0.0 {
            v.push(r.co2_mg);
        }
    }
    Ok(v)
}

fn analyze_cmd(c: AnalyzeCmd, out: &Path) -> Result<()> {
    match c {
        AnalyzeCmd::Gini {
            weighted,
            include_zero,
        } => {
            println!("{:.6}", gini(&read_masses(&weighted, include_zero)?)?);
        }
        AnalyzeCmd::Fit {
            weighted,
            x_min,
            scan_x_min,
        } => {
            let v = read_masses(&weighted, false)?;
            let xm = match (x_min, scan_x_min) {
                (Some(x), _) => x,
                (None, true) => analysis::scan_x_min(&v, 50)?,
                (None, false) => analysis::default_x_min(&v)?,
            };
            let report = fit_report(&v, xm)?;
            write_json(out, "fit.json", &report)?;
            for f in &report.fits {
                println!("{:<24} loglik {:.3}", f.model.name(), f.loglik);
            }
            println!("winner: {}", report.winner.name());
        }
        AnalyzeCmd::Js { sim, real, bins } => {
            #[derive(serde::Deserialize)]
            struct Row {
                extra: bool,
                depart: f64,
                arrival: Option<f64>,
            }
            let mut tt = Vec::new();
            for rec in csv::Reader::from_reader(open(&sim)?).deserialize() {
                let r: Row = rec?;
                if let (false, Some(a)) = (r.extra, r.arrival) {
                    tt.push(a - r.depart);
                }
            }
            if tt.is_empty() {
                bail!("no arrived demand vehicles in {}", sim.display());
            }
            let real: Vec<f64> = read_trip_records(open(&real)?)?
                .iter()
                .map(|r| r.travel_time())
                .collect();
            let cmp = travel_time_comparison(&tt, &real, bins)?;
            println!("js {:.6} abs_mean_diff {:.3}", cmp.js, cmp.abs_mean_diff);
        }
        AnalyzeCmd::Ccdf {
            weighted,
            kde_points,
        } => {
            let v = read_masses(&weighted, false)?;
            analysis::write_ccdf_csv(create(out, "ccdf.csv")?, &ccdf(&v)?)?;
            let curve = analysis::kde_curve(&v, None, kde_points)?;
            analysis::write_kde_csv(create(out, "kde.csv")?, &curve)?;
        }
    }
    Ok(())
}

fn experiment_cmd(c: ExperimentCmd, out: &Path, config: Option<&Path>, seed: u64) -> Result<()> {
    match c {
        ExperimentCmd::Sweep {
            world,
            w_values,
            fix_demand,
            fix_departures,
        } => {
            let Some(p) = config else {
                bail!("experiment sweep needs --config <SweepConfig file>");
            };
            let mut cfg: SweepConfig = load_config(p)?;
            cfg.master_seed = seed;
            cfg.fix_demand |= fix_demand;
            cfg.fix_departures |= fix_departures;
            let net = load_network(&world.network)?;
            let grid = tile_grid(&net, world.tile_side)?;
            let od = read_od_matrix(open(&world.od)?)?;
            let res = if w_values.is_empty() {
                run_sweep(&cfg, &net, &od, &grid, Some(out))?
            } else {
                run_w_sweep(&cfg, &w_values, &net, &od, &grid, Some(out))?
            };
            let summary = summarize(&res);
            write_rows_csv(create(out, "summary.csv")?, &summary)?;
            println!("{} cells, {} failed", res.rows.len(), res.failures());
            if res.failures() == res.rows.len() {
                bail!("every sweep cell failed");
            }
        }
        ExperimentCmd::Calibrate { world, real } => {
            let mut grid: CalibrationGrid = match config {
                Some(p) => load_config(p)?,
                None => CalibrationGrid::default(),
            };
            grid.master_seed = seed;
            let net = load_network(&world.network)?;
            let tg = tile_grid(&net, world.tile_side)?;
            let od = read_od_matrix(open(&world.od)?)?;
            let real: Vec<f64> = read_trip_records(open(&real)?)?
                .iter()
                .map(|r| r.travel_time())
                .collect();
            let rows = run_calibration(&grid, &net, &od, &tg, &real)?;
            write_calibration(out, &grid, &rows)?;
            match rows.first().filter(|r| r.rank.is_some()) {
                Some(best) => println!(
                    "best: N={} w={} c={} js={:.4}",
                    best.n,
                    best.w,
                    best.extra,
                    best.js.unwrap_or(f64::NAN)
                ),
                None => bail!("every calibration cell failed"),
            }
        }
        ExperimentCmd::Summarize { sweep } => {
            let res = read_sweep_csv(open(&sweep)?)?;
            let summary = summarize(&res);
            write_rows_csv(create(out, "summary.csv")?, &summary)?;
            for s in &summary {
                println!(
                    "{} w={} i={:>2}: CO2 {:.4e} ± {:.2e} mg, gini {:.4}",
                    s.provider,
                    s.w,
                    s.i,
                    s.total_co2_mean.unwrap_or(f64::NAN),
                    s.total_co2_std.unwrap_or(f64::NAN),
                    s.gini_mean.unwrap_or(f64::NAN)
                );
            }
        }
    }
    Ok(())
}
