//! End-to-end evaluation on a simulated world: place landmarks, calibrate
//! from the inter-landmark mesh, locate random targets and score the error
//! against ground truth.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{estimate_target, EstimationConfig};
use crate::geodesy::{orthodromic_distance, GeoPoint};
use crate::latency::{calibrate_all, LatencyModel, Measurement};
use crate::lateration::{build_circle, LandmarkCircle};
use crate::placement::{dragoon_place, place_orientation_mark, two_approx, Landmark, LandmarkSet};
use crate::simulator::{derived_rng, Endpoint, SimWorld};

/// Calibration needs four peers per landmark, so at least five landmarks.
pub const MIN_LANDMARKS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dragoon,
    TwoApprox,
    Random,
    /// Target placed at the landmark with the smallest RTT; uses the
    /// Dragoon landmark set.
    ShortestPing,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Dragoon,
        Method::TwoApprox,
        Method::Random,
        Method::ShortestPing,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Dragoon => "dragoon",
            Method::TwoApprox => "two_approx",
            Method::Random => "random",
            Method::ShortestPing => "shortest_ping",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dragoon" => Ok(Method::Dragoon),
            "two_approx" | "two-approx" => Ok(Method::TwoApprox),
            "random" => Ok(Method::Random),
            "shortest_ping" | "shortest-ping" | "shortest_ping_only" => Ok(Method::ShortestPing),
            other => Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub k: usize,
    pub methods: Vec<Method>,
    pub n_targets: usize,
    pub seed: u64,
    /// Per-hop correction assumed by the locator, ms.
    pub per_hop_ms: f64,
    pub estimation: EstimationConfig,
}

impl ExperimentConfig {
    pub fn validate(&self, world: &SimWorld) -> Result<()> {
        if self.k < MIN_LANDMARKS {
            return Err(Error::InvalidParameter(format!(
                "k must be at least {MIN_LANDMARKS} for calibration, got {}",
                self.k
            )));
        }
        if self.k > world.topology.len() {
            return Err(Error::TooManyLandmarks {
                k: self.k,
                nodes: world.topology.len(),
            });
        }
        if self.n_targets == 0 {
            return Err(Error::InvalidParameter("n_targets must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("no methods selected".into()));
        }
        if !(self.per_hop_ms >= 0.0) {
            return Err(Error::InvalidParameter("per_hop_ms must be non-negative".into()));
        }
        self.estimation.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetResult {
    pub method: Method,
    pub target_index: usize,
    pub target_id: String,
    pub true_lat: f64,
    pub true_lon: f64,
    pub est_lat: Option<f64>,
    pub est_lon: Option<f64>,
    pub error_km: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub located: usize,
    pub failed: usize,
    pub median_km: Option<f64>,
    pub mean_km: Option<f64>,
    pub p90_km: Option<f64>,
}

impl Summary {
    pub fn from_errors(errors: &[f64], failed: usize) -> Self {
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = (n > 0).then(|| {
            if n % 2 == 1 {
                sorted[n / 2]
            } else {
                0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
            }
        });
        // Nearest-rank percentile.
        let p90 = (n > 0).then(|| sorted[((0.9 * n as f64).ceil() as usize).max(1) - 1]);
        let mean = (n > 0).then(|| sorted.iter().sum::<f64>() / n as f64);
        Self {
            located: n,
            failed,
            median_km: median,
            mean_km: mean,
            p90_km: p90,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub landmarks: Vec<String>,
    pub max_hop: u32,
    pub mean_hop: f64,
    pub summary: Summary,
    pub targets: Vec<TargetResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub world_seed: u64,
    pub config: ExperimentConfig,
    pub methods: Vec<MethodReport>,
}

impl ExperimentReport {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }

    /// One row per (method, target).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let map = |e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            kind => Error::Parse {
                location: "report csv".into(),
                message: format!("{kind:?}"),
            },
        };
        w.write_record([
            "method",
            "target_index",
            "target_id",
            "true_lat",
            "true_lon",
            "est_lat",
            "est_lon",
            "error_km",
            "failure",
        ])
        .map_err(map)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in self.methods.iter().flat_map(|m| &m.targets) {
            w.write_record([
                r.method.as_str().to_string(),
                r.target_index.to_string(),
                r.target_id.clone(),
                r.true_lat.to_string(),
                r.true_lon.to_string(),
                opt(r.est_lat),
                opt(r.est_lon),
                opt(r.error_km),
                r.failure.clone().unwrap_or_default(),
            ])
            .map_err(map)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Landmarks for a placement strategy. Random placement draws from the
/// experiment seed.
pub fn place_landmarks(world: &SimWorld, method: Method, k: usize, seed: u64) -> Result<LandmarkSet> {
    let t = &world.topology;
    match method {
        Method::Dragoon | Method::ShortestPing => dragoon_place(t, k),
        Method::TwoApprox => two_approx(t, k, &place_orientation_mark(t)),
        Method::Random => {
            if k > t.len() {
                return Err(Error::TooManyLandmarks { k, nodes: t.len() });
            }
            let mut rng = derived_rng(world.rng_seed, &["random-placement", &seed.to_string()]);
            let idx = rand::seq::index::sample(&mut rng, t.len(), k).into_vec();
            let ids: Vec<&str> = idx.iter().map(|&i| t.node(i).id.as_str()).collect();
            LandmarkSet::from_ids(t, &ids)
        }
    }
}

/// Probes between every ordered pair of distinct landmarks.
pub fn calibration_mesh(world: &SimWorld, landmarks: &[Landmark], seed: u64) -> Result<Vec<Measurement>> {
    let seed = seed.to_string();
    let pairs: Vec<(&Landmark, &Landmark)> = landmarks
        .iter()
        .flat_map(|a| {
            landmarks
                .iter()
                .filter(move |b| b.id != a.id)
                .map(move |b| (a, b))
        })
        .collect();
    pairs
        .par_iter()
        .map(|(a, b)| {
            let mut rng = derived_rng(world.rng_seed, &["calibration", &seed, &a.id, &b.id]);
            world.simulate_measurement(&Endpoint::node(&a.id), &Endpoint::node(&b.id), &mut rng)
        })
        .collect()
}

/// Target node ids, drawn uniformly with replacement from the topology.
pub fn sample_targets(world: &SimWorld, n_targets: usize, seed: u64) -> Vec<String> {
    use rand::RngExt;
    let mut rng = derived_rng(world.rng_seed, &["targets", &seed.to_string()]);
    (0..n_targets)
        .map(|_| {
            let i = rng.random_range(0..world.topology.len());
            world.topology.node(i).id.clone()
        })
        .collect()
}

/// Probes from every landmark to one target. `target_index` keys the RNG
/// stream so repeated targets still get independent noise.
pub fn target_probes(
    world: &SimWorld,
    landmarks: &[Landmark],
    target: &Endpoint,
    target_index: usize,
    seed: u64,
) -> Result<Vec<Measurement>> {
    let seed = seed.to_string();
    let idx = target_index.to_string();
    landmarks
        .iter()
        .map(|l| {
            let mut rng = derived_rng(world.rng_seed, &["target", &seed, &idx, &l.id]);
            world.simulate_measurement(&Endpoint::node(&l.id), target, &mut rng)
        })
        .collect()
}

/// Circles for one target from its probes; landmarks whose model is
/// undefined at the measured latency are skipped.
pub fn circles_for(
    models: &BTreeMap<String, LatencyModel>,
    positions: &BTreeMap<String, GeoPoint>,
    probes: &[Measurement],
    per_hop_ms: f64,
) -> Vec<LandmarkCircle> {
    probes
        .iter()
        .filter_map(|m| {
            let model = models.get(&m.landmark_id)?;
            let center = positions.get(&m.landmark_id)?;
            match build_circle(*center, model, m, per_hop_ms) {
                Ok(circle) => Some(LandmarkCircle {
                    landmark_id: m.landmark_id.clone(),
                    circle,
                }),
                Err(e) => {
                    log::warn!("landmark {} skipped for {}: {e}", m.landmark_id, m.target_id);
                    None
                }
            }
        })
        .collect()
}

/// Location of the landmark with the smallest measured RTT.
pub fn shortest_ping(positions: &BTreeMap<String, GeoPoint>, probes: &[Measurement]) -> Option<GeoPoint> {
    probes
        .iter()
        .filter(|m| positions.contains_key(&m.landmark_id))
        .min_by(|a, b| {
            a.min_rtt_ms()
                .total_cmp(&b.min_rtt_ms())
                .then_with(|| a.landmark_id.cmp(&b.landmark_id))
        })
        .map(|m| positions[&m.landmark_id])
}

pub fn run_experiment(world: &SimWorld, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate(world)?;
    let targets = sample_targets(world, cfg.n_targets, cfg.seed);
    let methods = cfg
        .methods
        .iter()
        .map(|&m| run_method(world, cfg, m, &targets))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        world_seed: world.rng_seed,
        config: cfg.clone(),
        methods,
    })
}

fn run_method(
    world: &SimWorld,
    cfg: &ExperimentConfig,
    method: Method,
    targets: &[String],
) -> Result<MethodReport> {
    let ls = place_landmarks(world, method, cfg.k, cfg.seed)?;
    let positions: BTreeMap<String, GeoPoint> = ls
        .landmarks
        .iter()
        .map(|l| (l.id.clone(), l.position()))
        .collect();

    let models = if method == Method::ShortestPing {
        Ok(BTreeMap::new())
    } else {
        let mesh = calibration_mesh(world, &ls.landmarks, cfg.seed)?;
        calibrate_all(&ls.landmarks, &mesh, cfg.per_hop_ms)
    };

    let rows: Vec<TargetResult> = targets
        .par_iter()
        .enumerate()
        .map(|(i, id)| {
            let endpoint = Endpoint::node(id);
            let truth = world.position(&endpoint).expect("sampled from topology");
            let estimate = match &models {
                Err(e) => Err(format!("calibration failed: {e}")),
                Ok(models) => locate_one(world, cfg, method, &ls, models, &positions, &endpoint, i),
            };
            let (est, failure) = match estimate {
                Ok(p) => (Some(p), None),
                Err(msg) => (None, Some(msg)),
            };
            TargetResult {
                method,
                target_index: i,
                target_id: id.clone(),
                true_lat: truth.lat,
                true_lon: truth.lon,
                est_lat: est.map(|p| p.lat),
                est_lon: est.map(|p| p.lon),
                error_km: est.map(|p| orthodromic_distance(&p, &truth) / 1000.0),
                failure,
            }
        })
        .collect();

    let errors: Vec<f64> = rows.iter().filter_map(|r| r.error_km).collect();
    let failed = rows.len() - errors.len();
    Ok(MethodReport {
        method,
        landmarks: ls.ids().into_iter().map(String::from).collect(),
        max_hop: ls.objective.max_hop,
        mean_hop: ls.objective.mean_hop,
        summary: Summary::from_errors(&errors, failed),
        targets: rows,
    })
}

#[allow(clippy::too_many_arguments)]
fn locate_one(
    world: &SimWorld,
    cfg: &ExperimentConfig,
    method: Method,
    ls: &LandmarkSet,
    models: &BTreeMap<String, LatencyModel>,
    positions: &BTreeMap<String, GeoPoint>,
    target: &Endpoint,
    index: usize,
) -> std::result::Result<GeoPoint, String> {
    let probes = target_probes(world, &ls.landmarks, target, index, cfg.seed).map_err(|e| e.to_string())?;
    if method == Method::ShortestPing {
        return shortest_ping(positions, &probes).ok_or_else(|| "no probes".to_string());
    }
    let circles = circles_for(models, positions, &probes, cfg.per_hop_ms);
    estimate_target(&circles, &cfg.estimation)
        .map(|e| e.point)
        .map_err(|e| e.to_string())
}
