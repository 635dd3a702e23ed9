//! Landmark placement on a hop-metric graph.
//!
//! Placement runs in three stages: an orientation mark at the graph
//! 1-center, farthest-point (2-Approx) seeding from that mark, then
//! iterative refinement where each landmark may step to one adjacent node
//! per iteration when that strictly improves the (max hop, mean hop)
//! objective.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::GeoPoint;
use crate::topology::Topology;

/// Placement quality: worst-case hops to the closest landmark, then the
/// total (equivalently mean) hops over all nodes. Smaller is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Objective {
    pub max_hop: u32,
    pub total_hops: u64,
    pub node_count: usize,
}

impl Objective {
    pub fn mean_hop(&self) -> f64 {
        self.total_hops as f64 / self.node_count as f64
    }

    fn evaluate(t: &Topology, landmarks: &[usize]) -> Self {
        let ap = t.all_pairs();
        let mut max_hop = 0;
        let mut total_hops = 0u64;
        for v in 0..t.len() {
            let d = landmarks.iter().map(|&l| ap[l][v]).min().unwrap_or(u32::MAX);
            max_hop = max_hop.max(d);
            total_hops += u64::from(d);
        }
        Self {
            max_hop,
            total_hops,
            node_count: t.len(),
        }
    }
}

impl Ord for Objective {
    /// Lexicographic on (max_hop, mean_hop). Mean comparison is exact via
    /// cross-multiplication so objectives over different graphs still order.
    fn cmp(&self, other: &Self) -> Ordering {
        self.max_hop.cmp(&other.max_hop).then_with(|| {
            (self.total_hops as u128 * other.node_count as u128)
                .cmp(&(other.total_hops as u128 * self.node_count as u128))
        })
    }
}

impl PartialOrd for Objective {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "max_hop={} mean_hop={:.4}", self.max_hop, self.mean_hop())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

impl Landmark {
    pub fn position(&self) -> GeoPoint {
        GeoPoint {
            lat: self.lat,
            lon: self.lon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSummary {
    pub max_hop: u32,
    pub mean_hop: f64,
}

/// Ordered landmarks with the node assignment and objective they induce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub landmarks: Vec<Landmark>,
    pub assignment: BTreeMap<String, String>,
    pub objective: ObjectiveSummary,
    #[serde(skip)]
    exact: Option<Objective>,
}

impl LandmarkSet {
    /// Builds a set from node indices, recomputing assignment and objective.
    fn from_indices(t: &Topology, idx: &[usize]) -> Self {
        let closest = t.closest_landmarks(idx);
        let objective = Objective::evaluate(t, idx);
        Self {
            landmarks: idx
                .iter()
                .map(|&i| {
                    let n = t.node(i);
                    Landmark {
                        id: n.id.clone(),
                        lat: n.position.lat,
                        lon: n.position.lon,
                    }
                })
                .collect(),
            assignment: closest
                .iter()
                .enumerate()
                .map(|(v, &l)| (t.node(v).id.clone(), t.node(l).id.clone()))
                .collect(),
            objective: ObjectiveSummary {
                max_hop: objective.max_hop,
                mean_hop: objective.mean_hop(),
            },
            exact: Some(objective),
        }
    }

    /// Builds a set from landmark ids on a topology.
    pub fn from_ids<S: AsRef<str>>(t: &Topology, ids: &[S]) -> Result<Self> {
        let idx = ids
            .iter()
            .map(|s| t.index_of(s.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let mut seen = idx.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != idx.len() {
            return Err(Error::InvalidParameter("landmark ids must be distinct".into()));
        }
        if idx.is_empty() {
            return Err(Error::InvalidParameter("landmark set is empty".into()));
        }
        Ok(Self::from_indices(t, &idx))
    }

    pub fn ids(&self) -> Vec<&str> {
        self.landmarks.iter().map(|l| l.id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    /// Exact objective; recomputed against `t` if this set was deserialized.
    pub fn exact_objective(&self, t: &Topology) -> Result<Objective> {
        match self.exact {
            Some(o) => Ok(o),
            None => Ok(Objective::evaluate(t, &self.indices(t)?)),
        }
    }

    fn indices(&self, t: &Topology) -> Result<Vec<usize>> {
        self.landmarks.iter().map(|l| t.index_of(&l.id)).collect()
    }
}

/// Graph 1-center: minimal eccentricity, then minimal total hops, then
/// smallest id.
pub fn place_orientation_mark(t: &Topology) -> String {
    let ap = t.all_pairs();
    let best = (0..t.len())
        .min_by_key(|&v| {
            let row = &ap[v];
            let ecc = *row.iter().max().unwrap();
            let total: u64 = row.iter().map(|&d| u64::from(d)).sum();
            (ecc, total, v)
        })
        .expect("topology is non-empty");
    t.node(best).id.clone()
}

/// Farthest-point selection seeded from `seed_node`. The seed itself is only
/// a reference point and is not part of the result.
pub fn two_approx(t: &Topology, k: usize, seed_node: &str) -> Result<LandmarkSet> {
    check_k(t, k)?;
    let seed = t.index_of(seed_node)?;
    Ok(LandmarkSet::from_indices(t, &farthest_point(t, k, seed)))
}

fn farthest_point(t: &Topology, k: usize, seed: usize) -> Vec<usize> {
    let ap = t.all_pairs();
    let n = t.len();
    // Distance to the closest "placed" point; starts from the seed alone.
    let mut closest: Vec<u32> = ap[seed].clone();
    let mut is_landmark = vec![false; n];
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let next = (0..n)
            .filter(|&v| !is_landmark[v])
            .max_by(|&a, &b| closest[a].cmp(&closest[b]).then(b.cmp(&a)))
            .expect("k <= |V|");
        if chosen.is_empty() {
            // Forget the seed: distances now come from real landmarks only.
            closest = ap[next].clone();
        } else {
            for v in 0..n {
                closest[v] = closest[v].min(ap[next][v]);
            }
        }
        is_landmark[next] = true;
        chosen.push(next);
    }
    chosen
}

/// One accepted landmark move recorded during refinement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefineMove {
    pub iteration: usize,
    pub slot: usize,
    pub from: String,
    pub to: String,
    pub before: Objective,
    pub after: Objective,
}

/// Iterative neighbor-move refinement. The objective never gets worse.
pub fn refine(t: &Topology, ls: &LandmarkSet) -> Result<LandmarkSet> {
    refine_traced(t, ls).map(|(set, _)| set)
}

/// As [`refine`], also returning every accepted move in order.
pub fn refine_traced(t: &Topology, ls: &LandmarkSet) -> Result<(LandmarkSet, Vec<RefineMove>)> {
    let mut current = ls.indices(t)?;
    if current.is_empty() {
        return Err(Error::InvalidParameter("landmark set is empty".into()));
    }
    let mut occupied = vec![false; t.len()];
    for &l in &current {
        occupied[l] = true;
    }
    let mut objective = Objective::evaluate(t, &current);
    let mut moves = Vec::new();
    let mut iteration = 0;
    loop {
        let mut moved = false;
        for slot in 0..current.len() {
            let here = current[slot];
            let mut best: Option<(Objective, usize)> = None;
            for &cand in t.neighbors(here) {
                if occupied[cand] {
                    continue;
                }
                current[slot] = cand;
                let o = Objective::evaluate(t, &current);
                current[slot] = here;
                let incumbent = best.map_or(objective, |(b, _)| b);
                if o < incumbent {
                    best = Some((o, cand));
                }
            }
            if let Some((o, cand)) = best {
                current[slot] = cand;
                occupied[here] = false;
                occupied[cand] = true;
                moves.push(RefineMove {
                    iteration,
                    slot,
                    from: t.node(here).id.clone(),
                    to: t.node(cand).id.clone(),
                    before: objective,
                    after: o,
                });
                objective = o;
                moved = true;
            }
        }
        if !moved {
            break;
        }
        iteration += 1;
    }
    Ok((LandmarkSet::from_indices(t, &current), moves))
}

/// Orientation mark, then 2-Approx seeding, then refinement.
pub fn dragoon_place(t: &Topology, k: usize) -> Result<LandmarkSet> {
    let mark = place_orientation_mark(t);
    let initial = two_approx(t, k, &mark)?;
    refine(t, &initial)
}

fn check_k(t: &Topology, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if k > t.len() {
        return Err(Error::TooManyLandmarks { k, nodes: t.len() });
    }
    Ok(())
}
