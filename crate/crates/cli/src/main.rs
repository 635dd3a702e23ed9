use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use dragoon_core::estimation::{estimate_target, EstimationConfig, GridSearchConfig};
use dragoon_core::experiment::{
    calibration_mesh, circles_for, place_landmarks, run_experiment, sample_targets, target_probes,
    ExperimentConfig, Method,
};
use dragoon_core::export::{estimate_collection, placement_collection};
use dragoon_core::latency::{calibrate_all, ModelFile, DEFAULT_PER_HOP_MS};
use dragoon_core::lateration::{LaterationConfig, DEFAULT_GAP_MAX_KM};
use dragoon_core::placement::{dragoon_place, place_orientation_mark, two_approx};
use dragoon_core::simulator::{
    generate_topology, BoundingBox, DelayParams, Endpoint, Propagation, SimWorld, Stochastic,
};
use dragoon_core::topology::TopologyFormat;
use dragoon_core::{GeoPoint, Landmark, LandmarkSet, LatencyModel, Measurement, Topology};

/// Seed used whenever `--seed` is omitted.
const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(
    name = "dragoon",
    version,
    about = "Landmark placement and latency-based geolocation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Choose k landmark nodes on a topology.
    Place(PlaceArgs),
    /// Fit one latency→distance model per landmark from mesh measurements.
    Fit(FitArgs),
    /// Estimate target locations from landmark measurements.
    Locate(LocateArgs),
    /// Generate a world and write its topology, landmarks and measurements.
    Simulate(SimulateArgs),
    /// Compare placement methods on a simulated world.
    Eval(EvalArgs),
}

#[derive(Args)]
struct TopologyArgs {
    /// Topology file: JSON, or an `id id` edge list together with --node-file.
    #[arg(long)]
    topology: PathBuf,
    /// `id lat lon` node file for edge-list topologies.
    #[arg(long)]
    node_file: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algorithm {
    Dragoon,
    #[value(alias = "two_approx")]
    TwoApprox,
}

#[derive(Args)]
struct PlaceArgs {
    #[command(flatten)]
    topology: TopologyArgs,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    k: u32,
    #[arg(long, value_enum, default_value = "dragoon")]
    algorithm: Algorithm,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write nodes and landmarks as GeoJSON.
    #[arg(long)]
    geojson: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Inter-landmark measurement CSV.
    #[arg(long)]
    measurements: PathBuf,
    /// Landmark JSON as written by `place`.
    #[arg(long)]
    landmarks: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PER_HOP_MS)]
    per_hop_ms: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimationArgs {
    #[arg(long, default_value_t = GridSearchConfig::default().eps0_m)]
    eps0_m: f64,
    #[arg(long, default_value_t = GridSearchConfig::default().eps_min_m)]
    eps_min_m: f64,
    #[arg(long, default_value_t = DEFAULT_GAP_MAX_KM)]
    gap_max_km: f64,
}

impl EstimationArgs {
    fn config(&self) -> EstimationConfig {
        EstimationConfig {
            grid: GridSearchConfig {
                eps0_m: self.eps0_m,
                eps_min_m: self.eps_min_m,
                ..Default::default()
            },
            lateration: LaterationConfig {
                gap_max_km: self.gap_max_km,
            },
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct LocateArgs {
    /// Model JSON as written by `fit`.
    #[arg(long)]
    models: PathBuf,
    /// Landmark→target measurement CSV; rows are grouped by target id.
    #[arg(long)]
    measurements: PathBuf,
    /// Overrides the per-hop correction stored in the model file.
    #[arg(long)]
    per_hop_ms: Option<f64>,
    #[command(flatten)]
    estimation: EstimationArgs,
    /// Ground truth JSON as written by `simulate`; adds error_km per target.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write circles, point clouds and estimates as GeoJSON.
    #[arg(long)]
    geojson: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PropagationArg {
    /// Path length along the shortest-hop route over fiber speed.
    Path,
    /// Inverse of a fixed logarithmic curve of straight-line distance.
    Curve,
}

#[derive(Args)]
struct WorldArgs {
    /// Use this topology instead of generating one.
    #[arg(long)]
    topology: Option<PathBuf>,
    #[arg(long)]
    node_file: Option<PathBuf>,
    /// Node count of the generated topology.
    #[arg(long, default_value_t = 100)]
    nodes: usize,
    /// Connection radius of the generated topology.
    #[arg(long, default_value_t = 400.0)]
    radius_km: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Mean of the exponential excess delay per sample; 0 disables noise.
    #[arg(long, default_value_t = 0.0)]
    noise_ms: f64,
    #[arg(long, default_value_t = 10)]
    samples: usize,
    #[arg(long, value_enum, default_value = "path")]
    propagation: PropagationArg,
    #[arg(long, default_value_t = DEFAULT_PER_HOP_MS)]
    per_hop_ms: f64,
}

impl WorldArgs {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    fn build(&self) -> Result<SimWorld> {
        let topology = match &self.topology {
            Some(path) => load_topology(path, self.node_file.as_deref())?,
            None => generate_topology(self.nodes, BoundingBox::EUROPE, self.radius_km, self.seed())?,
        };
        let delay = DelayParams {
            per_hop_ms: self.per_hop_ms,
            samples_per_probe: self.samples,
            stochastic: if self.noise_ms > 0.0 {
                Stochastic::Exponential {
                    mean_ms: self.noise_ms,
                }
            } else {
                Stochastic::None
            },
            propagation: match self.propagation {
                PropagationArg::Path => Propagation::PathGeodesic,
                PropagationArg::Curve => Propagation::default_curve(),
            },
            ..Default::default()
        };
        Ok(SimWorld::new(topology, self.seed(), delay)?)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, value_enum, default_value = "dragoon")]
    algorithm: Algorithm,
    #[arg(long, default_value_t = 10)]
    n_targets: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Comma-separated: dragoon, two_approx, random, shortest_ping.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "dragoon,two_approx,random,shortest_ping"
    )]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 100)]
    n_targets: usize,
    #[command(flatten)]
    estimation: EstimationArgs,
    /// Output directory for report.json and report.csv; JSON on stdout if
    /// omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Accepts either a full `place` output or a bare landmark list.
#[derive(Deserialize)]
#[serde(untagged)]
enum LandmarkInput {
    Set(LandmarkSet),
    List(Vec<Landmark>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TruthEntry {
    node: String,
    lat: f64,
    lon: f64,
}

#[derive(Serialize)]
struct LocatedTarget {
    target_id: String,
    lat: f64,
    lon: f64,
    mean_residual_km: f64,
    circles: usize,
    kept_points: usize,
    dropped_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    error_km: Option<f64>,
}

#[derive(Serialize)]
struct FailedTarget {
    target_id: String,
    error: String,
}

#[derive(Serialize)]
struct LocateOutput {
    targets: Vec<LocatedTarget>,
    failures: Vec<FailedTarget>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).with_context(|| format!("invalid JSON in {}", path.display()))
}

fn load_topology(path: &Path, node_file: Option<&Path>) -> Result<Topology> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let t = if is_json {
        Topology::load(open(path)?, TopologyFormat::Json, None)
    } else {
        let Some(nodes) = node_file else {
            bail!(
                "{} is not JSON; pass --node-file for edge-list topologies",
                path.display()
            );
        };
        Topology::load(open(path)?, TopologyFormat::EdgeList, Some(open(nodes)?))
    };
    t.with_context(|| format!("loading {}", path.display()))
}

/// Writes to `out`, or to stdout when absent.
fn emit(out: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        Some(path) => {
            let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
            let mut w = BufWriter::new(f);
            write(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            write(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    emit(out, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn cmd_place(args: &PlaceArgs) -> Result<()> {
    let t = load_topology(&args.topology.topology, args.topology.node_file.as_deref())?;
    let k = args.k as usize;
    let ls = match args.algorithm {
        Algorithm::Dragoon => dragoon_place(&t, k)?,
        Algorithm::TwoApprox => two_approx(&t, k, &place_orientation_mark(&t))?,
    };
    emit_json(args.out.as_deref(), &ls)?;
    if let Some(path) = &args.geojson {
        emit_json(Some(path), &placement_collection(&t, &ls))?;
    }
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let landmarks = match read_json::<LandmarkInput>(&args.landmarks)? {
        LandmarkInput::Set(s) => s.landmarks,
        LandmarkInput::List(l) => l,
    };
    let measurements = Measurement::read_csv(open(&args.measurements)?)
        .with_context(|| format!("reading {}", args.measurements.display()))?;
    let models = calibrate_all(&landmarks, &measurements, args.per_hop_ms)?;
    emit_json(
        args.out.as_deref(),
        &ModelFile::new(&landmarks, &models, args.per_hop_ms),
    )
}

fn cmd_locate(args: &LocateArgs) -> Result<()> {
    let file: ModelFile = read_json(&args.models)?;
    let per_hop_ms = args.per_hop_ms.unwrap_or(file.per_hop_ms);
    let cfg = args.estimation.config();
    cfg.validate()?;
    let truth: BTreeMap<String, TruthEntry> = match &args.truth {
        Some(p) => read_json(p)?,
        None => BTreeMap::new(),
    };

    let mut models: BTreeMap<String, LatencyModel> = BTreeMap::new();
    let mut positions: BTreeMap<String, GeoPoint> = BTreeMap::new();
    for lm in &file.models {
        let p = GeoPoint::new(lm.lat, lm.lon).with_context(|| format!("landmark {}", lm.landmark_id))?;
        models.insert(lm.landmark_id.clone(), lm.model);
        positions.insert(lm.landmark_id.clone(), p);
    }

    let measurements = Measurement::read_csv(open(&args.measurements)?)
        .with_context(|| format!("reading {}", args.measurements.display()))?;
    let mut by_target: BTreeMap<String, Vec<Measurement>> = BTreeMap::new();
    for m in measurements {
        by_target.entry(m.target_id.clone()).or_default().push(m);
    }
    if by_target.is_empty() {
        bail!("{} contains no measurements", args.measurements.display());
    }

    let mut output = LocateOutput {
        targets: Vec::new(),
        failures: Vec::new(),
    };
    let mut collections = Vec::new();
    let mut first_error = None;
    for (target_id, probes) in &by_target {
        let circles = circles_for(&models, &positions, probes, per_hop_ms);
        match estimate_target(&circles, &cfg) {
            Ok(est) => {
                let true_pos = truth
                    .get(target_id)
                    .and_then(|t| GeoPoint::new(t.lat, t.lon).ok());
                output.targets.push(LocatedTarget {
                    target_id: target_id.clone(),
                    lat: est.point.lat,
                    lon: est.point.lon,
                    mean_residual_km: est.mean_residual_km,
                    circles: circles.len(),
                    kept_points: est.kept_points.len(),
                    dropped_points: est.dropped_points.len(),
                    error_km: true_pos
                        .map(|p| dragoon_core::geodesy::orthodromic_distance(&p, &est.point) / 1000.0),
                });
                collections.push(estimate_collection(target_id, &circles, &est, true_pos.as_ref()));
            }
            Err(e) => {
                log::warn!("target {target_id}: {e}");
                output.failures.push(FailedTarget {
                    target_id: target_id.clone(),
                    error: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if output.targets.is_empty() {
        let e = first_error.expect("at least one target");
        return Err(anyhow::Error::new(e).context("no target could be located"));
    }
    emit_json(args.out.as_deref(), &output)?;
    if let Some(path) = &args.geojson {
        let mut all = geojson::FeatureCollection::default();
        for c in collections {
            all.features.extend(c.features);
        }
        emit_json(Some(path), &all)?;
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    if args.n_targets == 0 {
        bail!("--n-targets must be at least 1");
    }
    let world = args.world.build()?;
    let seed = args.world.seed();
    let method = match args.algorithm {
        Algorithm::Dragoon => Method::Dragoon,
        Algorithm::TwoApprox => Method::TwoApprox,
    };
    let ls = place_landmarks(&world, method, args.k, seed)?;
    let mesh = calibration_mesh(&world, &ls.landmarks, seed)?;

    let mut truth = BTreeMap::new();
    let mut probes = Vec::new();
    for (i, node) in sample_targets(&world, args.n_targets, seed).iter().enumerate() {
        let id = format!("t{i:03}");
        let endpoint = Endpoint::node(node);
        let p = world.position(&endpoint)?;
        truth.insert(
            id.clone(),
            TruthEntry {
                node: node.clone(),
                lat: p.lat,
                lon: p.lon,
            },
        );
        for mut m in target_probes(&world, &ls.landmarks, &endpoint, i, seed)? {
            m.target_id = id.clone();
            probes.push(m);
        }
    }

    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let dir = &args.out;
    emit(Some(&dir.join("topology.json")), |w| {
        Ok(world.topology.write_json(&mut *w)?)
    })?;
    emit_json(Some(&dir.join("landmarks.json")), &ls)?;
    emit(Some(&dir.join("calibration.csv")), |w| {
        Ok(Measurement::write_csv(&mesh, w)?)
    })?;
    emit(Some(&dir.join("targets.csv")), |w| {
        Ok(Measurement::write_csv(&probes, w)?)
    })?;
    emit_json(Some(&dir.join("truth.json")), &truth)?;
    emit_json(
        Some(&dir.join("world.json")),
        &serde_json::json!({
            "seed": seed,
            "delay": world.delay,
            "nodes": world.topology.len(),
            "edges": world.topology.edge_count(),
        }),
    )?;
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    if args.n_targets == 0 {
        bail!("--n-targets must be at least 1");
    }
    let world = args.world.build()?;
    let cfg = ExperimentConfig {
        k: args.k,
        methods: args.methods.clone(),
        n_targets: args.n_targets,
        seed: args.world.seed(),
        per_hop_ms: args.world.per_hop_ms,
        estimation: args.estimation.config(),
    };
    let report = run_experiment(&world, &cfg)?;
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
            emit_json(Some(&dir.join("report.json")), &report)?;
            emit(Some(&dir.join("report.csv")), |w| Ok(report.write_csv(w)?))?;
            let mut table = String::from("method          median_km    mean_km     p90_km  failed\n");
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}"));
            for m in &report.methods {
                let s = &m.summary;
                table.push_str(&format!(
                    "{:<14} {:>10} {:>10} {:>10} {:>7}\n",
                    m.method.as_str(),
                    fmt(s.median_km),
                    fmt(s.mean_km),
                    fmt(s.p90_km),
                    s.failed
                ));
            }
            emit(None, |w| Ok(w.write_all(table.as_bytes())?))
        }
        None => emit_json(None, &report),
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Place(a) => cmd_place(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Locate(a) => cmd_locate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

/// 2 when the root cause is the filesystem or a stream, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|cause| {
        cause.downcast_ref::<io::Error>().is_some()
            || cause
                .downcast_ref::<dragoon_core::Error>()
                .is_some_and(|e| e.is_io())
            || cause
                .downcast_ref::<serde_json::Error>()
                .is_some_and(|e| e.is_io())
    });
    if io {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
