//! Synthetic ground truth: geographic topologies and probe measurements with
//! a deterministic path delay plus an optional stochastic excess.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::{orthodromic_distance, GeoPoint};
use crate::latency::{LatencyModel, Measurement};
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stochastic {
    None,
    /// Exponential excess delay per sample, one way.
    Exponential {
        mean_ms: f64,
    },
}

/// How the deterministic one-way propagation delay is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Propagation {
    /// Great-circle length of the shortest-hop path divided by the speed.
    PathGeodesic,
    /// Inverse of a logarithmic latency→distance curve applied to the
    /// straight-line distance; a world where that curve is exactly right.
    Curve { p: f64, q: f64, n: f64, m: f64 },
}

impl Propagation {
    /// Curve whose latencies stay in a realistic range across Europe:
    /// 1000 km ≈ 6.5 ms, 3000 km ≈ 35 ms one way.
    pub fn default_curve() -> Self {
        Propagation::Curve {
            p: 2000.0,
            q: 0.1,
            n: 1.0,
            m: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayParams {
    /// km/ms; 200 is about two thirds of light speed, typical for fiber.
    pub propagation_speed: f64,
    pub per_hop_ms: f64,
    pub stochastic: Stochastic,
    pub samples_per_probe: usize,
    pub propagation: Propagation,
}

impl Default for DelayParams {
    fn default() -> Self {
        Self {
            propagation_speed: 200.0,
            per_hop_ms: 0.1,
            stochastic: Stochastic::None,
            samples_per_probe: 10,
            propagation: Propagation::PathGeodesic,
        }
    }
}

impl DelayParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.propagation_speed > 0.0) || !self.propagation_speed.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "propagation speed must be positive, got {}",
                self.propagation_speed
            )));
        }
        if !(self.per_hop_ms >= 0.0) || !self.per_hop_ms.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "per-hop delay must be non-negative, got {}",
                self.per_hop_ms
            )));
        }
        if self.samples_per_probe == 0 {
            return Err(Error::InvalidParameter(
                "samples_per_probe must be at least 1".into(),
            ));
        }
        if let Stochastic::Exponential { mean_ms } = self.stochastic {
            if !(mean_ms > 0.0) || !mean_ms.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "exponential mean must be positive, got {mean_ms}"
                )));
            }
        }
        if let Propagation::Curve { p, q, n, .. } = self.propagation {
            if !(p > 0.0 && q > 0.0 && n > 0.0) {
                return Err(Error::InvalidParameter(
                    "propagation curve needs p, q, n > 0".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Latitude/longitude rectangle, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BoundingBox {
    /// Roughly continental Europe.
    pub const EUROPE: BoundingBox = BoundingBox {
        lat_min: 35.0,
        lat_max: 60.0,
        lon_min: -10.0,
        lon_max: 30.0,
    };
}

/// Random geometric graph: nodes uniform in the box, edges between nodes
/// within `connection_radius_km`. The radius grows by 10% per retry until
/// the graph is connected.
pub fn generate_topology(
    n_nodes: usize,
    bbox: BoundingBox,
    connection_radius_km: f64,
    seed: u64,
) -> Result<Topology> {
    const MAX_RETRIES: usize = 40;
    if n_nodes == 0 {
        return Err(Error::InvalidParameter("n_nodes must be at least 1".into()));
    }
    if !(bbox.lat_min < bbox.lat_max && bbox.lon_min < bbox.lon_max)
        || bbox.lat_min < -90.0
        || bbox.lat_max > 90.0
    {
        return Err(Error::InvalidParameter(format!("invalid bounding box {bbox:?}")));
    }
    if !(connection_radius_km > 0.0) {
        return Err(Error::InvalidParameter(
            "connection radius must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = (n_nodes.max(2) - 1).to_string().len();
    let nodes: Vec<(String, GeoPoint)> = (0..n_nodes)
        .map(|i| {
            let lat = rng.random_range(bbox.lat_min..bbox.lat_max);
            let lon = rng.random_range(bbox.lon_min..bbox.lon_max);
            Ok((format!("n{i:0width$}"), GeoPoint::new(lat, lon)?))
        })
        .collect::<Result<_>>()?;

    let mut radius_km = connection_radius_km;
    for _ in 0..MAX_RETRIES {
        let mut edges = Vec::new();
        for i in 0..n_nodes {
            for j in i + 1..n_nodes {
                if orthodromic_distance(&nodes[i].1, &nodes[j].1) <= radius_km * 1000.0 {
                    edges.push((nodes[i].0.clone(), nodes[j].0.clone()));
                }
            }
        }
        match Topology::from_parts(nodes.clone(), edges) {
            Ok(t) => return Ok(t),
            Err(Error::Disconnected { .. }) => radius_km *= 1.1,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Connectivity(format!(
        "{n_nodes} nodes still disconnected at radius {radius_km:.0} km"
    )))
}

/// A probe endpoint: a topology node, or an off-graph host attached to its
/// nearest node by one extra last-mile hop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Endpoint {
    Node { id: String },
    Host { id: String, position: GeoPoint },
}

impl Endpoint {
    pub fn node(id: impl Into<String>) -> Self {
        Endpoint::Node { id: id.into() }
    }

    pub fn id(&self) -> &str {
        match self {
            Endpoint::Node { id } | Endpoint::Host { id, .. } => id,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimWorld {
    pub topology: Topology,
    pub rng_seed: u64,
    pub delay: DelayParams,
}

/// Where an endpoint sits and how it joins the graph.
struct Attachment {
    node: usize,
    position: GeoPoint,
    extra_hops: u32,
    extra_km: f64,
}

impl SimWorld {
    pub fn new(topology: Topology, rng_seed: u64, delay: DelayParams) -> Result<Self> {
        delay.validate()?;
        Ok(Self {
            topology,
            rng_seed,
            delay,
        })
    }

    pub fn position(&self, e: &Endpoint) -> Result<GeoPoint> {
        Ok(self.attach(e)?.position)
    }

    fn attach(&self, e: &Endpoint) -> Result<Attachment> {
        match e {
            Endpoint::Node { id } => {
                let node = self.topology.index_of(id)?;
                Ok(Attachment {
                    node,
                    position: self.topology.node(node).position,
                    extra_hops: 0,
                    extra_km: 0.0,
                })
            }
            Endpoint::Host { position, .. } => {
                let (node, d) = self
                    .topology
                    .nodes()
                    .iter()
                    .enumerate()
                    .map(|(i, n)| (i, orthodromic_distance(position, &n.position)))
                    .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                    .ok_or(Error::EmptyTopology)?;
                Ok(Attachment {
                    node,
                    position: *position,
                    extra_hops: 1,
                    extra_km: d / 1000.0,
                })
            }
        }
    }

    /// Deterministic one-way delay (ms) and hop count between two endpoints.
    pub fn deterministic_delay(&self, src: &Endpoint, dst: &Endpoint) -> Result<(f64, u32)> {
        let a = self.attach(src)?;
        let b = self.attach(dst)?;
        if src == dst {
            return Ok((0.0, 0));
        }
        let path = self.topology.shortest_path(a.node, b.node);
        let hops = (path.len() - 1) as u32 + a.extra_hops + b.extra_hops;
        let propagation = match self.delay.propagation {
            Propagation::PathGeodesic => {
                let graph_km: f64 = path
                    .windows(2)
                    .map(|w| {
                        orthodromic_distance(
                            &self.topology.node(w[0]).position,
                            &self.topology.node(w[1]).position,
                        ) / 1000.0
                    })
                    .sum();
                (graph_km + a.extra_km + b.extra_km) / self.delay.propagation_speed
            }
            Propagation::Curve { p, q, n, m } => {
                let km = orthodromic_distance(&a.position, &b.position) / 1000.0;
                (((km - m) / p).exp() - n).max(0.0) / q
            }
        };
        Ok((propagation + self.delay.per_hop_ms * f64::from(hops), hops))
    }

    /// One probe: `samples_per_probe` RTTs, each twice the deterministic
    /// delay plus one stochastic draw. Samples are drawn in sequence, so a
    /// longer probe extends a shorter one from the same stream.
    pub fn simulate_measurement<R: rand::Rng>(
        &self,
        src: &Endpoint,
        dst: &Endpoint,
        rng: &mut R,
    ) -> Result<Measurement> {
        let (det, hops) = self.deterministic_delay(src, dst)?;
        let mut samples = Vec::with_capacity(self.delay.samples_per_probe);
        match self.delay.stochastic {
            Stochastic::None => samples.resize(self.delay.samples_per_probe, 2.0 * det),
            Stochastic::Exponential { mean_ms } => {
                let exp = Exp::new(1.0 / mean_ms).expect("validated mean");
                for _ in 0..self.delay.samples_per_probe {
                    let draw: f64 = exp.sample(rng);
                    samples.push(2.0 * (det + draw));
                }
            }
        }
        Measurement::new(src.id(), dst.id(), hops, samples)
    }

    /// Probe with an RNG derived from the world seed, a stream label and
    /// the endpoint ids, so results do not depend on call order.
    pub fn probe(&self, src: &Endpoint, dst: &Endpoint, stream: &str) -> Result<Measurement> {
        let mut rng = derived_rng(self.rng_seed, &[stream, src.id(), dst.id()]);
        self.simulate_measurement(src, dst, &mut rng)
    }

    /// The logarithmic curve that is exact for this world, if any.
    pub fn exact_model(&self) -> Option<LatencyModel> {
        match self.delay.propagation {
            Propagation::Curve { p, q, n, m } => Some(LatencyModel::with_params(p, q, n, m)),
            Propagation::PathGeodesic => None,
        }
    }
}

/// Stable 64-bit seed from a base seed and labels (FNV-1a, then a
/// SplitMix64 finalizer).
pub fn derive_seed(base: u64, labels: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ base;
    for label in labels {
        for &b in label.as_bytes().iter().chain(std::iter::once(&0xffu8)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derived_rng(base: u64, labels: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, labels))
}
