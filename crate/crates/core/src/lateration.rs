//! Pairwise circle lateration.
//!
//! Each landmark's distance estimate becomes a circle around it. Every pair
//! of circles yields zero, one or two candidate target locations depending
//! on how the circles meet; the union over all pairs is the point cloud the
//! estimator works on.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::{
    along_geodesic, circle_intersections, GeoCircle, GeoPoint, IntersectionResult, Which,
    INTERSECTION_TOLERANCE_M, MAX_DISTANCE_M,
};
use crate::latency::{effective_latency, predict_distance, LatencyModel, Measurement};

/// Default cut-off for circles that miss each other, km.
pub const DEFAULT_GAP_MAX_KM: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseTag {
    /// Disjoint circles: midpoint of the gap between the perimeters.
    MidpointGap,
    /// One circle inside the other: tangent point after shrinking the larger.
    ContainedTangent,
    Tangent,
    /// One of the two intersection points.
    PairBranch,
}

impl CaseTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            CaseTag::MidpointGap => "midpoint_gap",
            CaseTag::ContainedTangent => "contained_tangent",
            CaseTag::Tangent => "tangent",
            CaseTag::PairBranch => "pair_branch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePoint {
    pub point: GeoPoint,
    pub source_pair: (String, String),
    pub case_tag: CaseTag,
    pub weight: f64,
}

/// A circle tagged with the landmark it is centered on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkCircle {
    pub landmark_id: String,
    pub circle: GeoCircle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaterationConfig {
    /// Disjoint pairs whose perimeters are further apart than this are
    /// dropped, km.
    pub gap_max_km: f64,
}

impl Default for LaterationConfig {
    fn default() -> Self {
        Self {
            gap_max_km: DEFAULT_GAP_MAX_KM,
        }
    }
}

impl LaterationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap_max_km >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gap_max_km must be non-negative, got {}",
                self.gap_max_km
            )));
        }
        Ok(())
    }
}

/// Circle around `landmark` whose radius is the model's distance for the
/// measurement, capped at half the circumference.
pub fn build_circle(
    landmark: GeoPoint,
    model: &LatencyModel,
    measurement: &Measurement,
    per_hop_ms: f64,
) -> Result<GeoCircle> {
    let latency = effective_latency(measurement, per_hop_ms);
    let km = predict_distance(model, latency.latency_ms)?;
    GeoCircle::new(landmark, (km * 1000.0).min(MAX_DISTANCE_M))
}

/// Candidate points for one pair of circles. The result does not depend on
/// argument order.
pub fn pair_candidates(
    a: &LandmarkCircle,
    b: &LandmarkCircle,
    cfg: &LaterationConfig,
) -> Result<Vec<CandidatePoint>> {
    let (c1, c2) =
        if (a.landmark_id.as_str(), a.circle.radius_m) <= (b.landmark_id.as_str(), b.circle.radius_m) {
            (a, b)
        } else {
            (b, a)
        };
    let pair = (c1.landmark_id.clone(), c2.landmark_id.clone());
    let candidate = |point, case_tag| CandidatePoint {
        point,
        source_pair: pair.clone(),
        case_tag,
        weight: 1.0,
    };

    let out = match circle_intersections(&c1.circle, &c2.circle)? {
        IntersectionResult::NonOverlapping { gap_m } => {
            if gap_m > cfg.gap_max_km * 1000.0 {
                Vec::new()
            } else {
                let p = along_geodesic(
                    &c1.circle.center,
                    &c2.circle.center,
                    c1.circle.radius_m + gap_m / 2.0,
                );
                vec![candidate(p, CaseTag::MidpointGap)]
            }
        }
        IntersectionResult::Tangent { point } => vec![candidate(point, CaseTag::Tangent)],
        IntersectionResult::Pair { p1, p2 } => vec![
            candidate(p1, CaseTag::PairBranch),
            candidate(p2, CaseTag::PairBranch),
        ],
        IntersectionResult::Contained { inner } => {
            let (small, large) = match inner {
                Which::First => (&c1.circle, &c2.circle),
                Which::Second => (&c2.circle, &c1.circle),
            };
            match shrink_to_tangency(small, large)? {
                Some(p) => vec![candidate(p, CaseTag::ContainedTangent)],
                None => {
                    log::warn!(
                        "pair {}/{}: could not shrink to tangency, skipped",
                        pair.0,
                        pair.1
                    );
                    Vec::new()
                }
            }
        }
    };
    Ok(out)
}

/// Bisects the larger radius down until the circles touch and returns the
/// tangent point.
fn shrink_to_tangency(small: &GeoCircle, large: &GeoCircle) -> Result<Option<GeoPoint>> {
    let contained = |r: f64| -> Result<IntersectionResult> {
        circle_intersections(
            small,
            &GeoCircle {
                radius_m: r,
                ..*large
            },
        )
    };
    // At r = small radius the circles cannot be nested any more.
    let mut lo = small.radius_m;
    let mut hi = large.radius_m;
    if matches!(contained(lo)?, IntersectionResult::Contained { .. }) {
        return Ok(None);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        match contained(mid)? {
            IntersectionResult::Contained { .. } => hi = mid,
            IntersectionResult::Tangent { point } => return Ok(Some(point)),
            _ => lo = mid,
        }
        if hi - lo < INTERSECTION_TOLERANCE_M / 4.0 {
            break;
        }
    }
    match contained(lo)? {
        IntersectionResult::Tangent { point } => Ok(Some(point)),
        _ => Ok(None),
    }
}

/// Union of [`pair_candidates`] over all unordered pairs, ordered by the
/// pair's landmark ids. Degenerate pairs are skipped.
pub fn all_candidates(circles: &[LandmarkCircle], cfg: &LaterationConfig) -> Result<Vec<CandidatePoint>> {
    if circles.len() < 2 {
        return Err(Error::TooFewCircles(circles.len()));
    }
    let mut sorted: Vec<&LandmarkCircle> = circles.iter().collect();
    sorted.sort_by(|a, b| a.landmark_id.cmp(&b.landmark_id));
    let pairs: Vec<(usize, usize)> = (0..sorted.len())
        .flat_map(|i| (i + 1..sorted.len()).map(move |j| (i, j)))
        .collect();
    let per_pair: Vec<Vec<CandidatePoint>> = pairs
        .par_iter()
        .map(|&(i, j)| match pair_candidates(sorted[i], sorted[j], cfg) {
            Ok(v) => v,
            Err(e) => {
                log::warn!(
                    "pair {}/{} skipped: {e}",
                    sorted[i].landmark_id,
                    sorted[j].landmark_id
                );
                Vec::new()
            }
        })
        .collect();
    Ok(per_pair.into_iter().flatten().collect())
}
