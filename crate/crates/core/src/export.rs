//! GeoJSON views of circles, point clouds, estimates and landmark sets.
//! Coordinates are `[lon, lat]` as GeoJSON requires.

use geojson::{Feature, FeatureCollection, Geometry, JsonObject};
use serde_json::{json, Value};

use crate::estimation::EstimatedLocation;
use crate::geodesy::GeoPoint;
use crate::lateration::{CandidatePoint, LandmarkCircle};
use crate::placement::LandmarkSet;
use crate::topology::Topology;

fn point_feature(p: &GeoPoint, props: Value) -> Feature {
    let properties: JsonObject = match props {
        Value::Object(map) => map,
        _ => JsonObject::new(),
    };
    Feature {
        geometry: Some(Geometry::new_point([p.lon, p.lat])),
        properties: Some(properties),
        ..Default::default()
    }
}

/// Circle as its center with a `radius_m` property.
pub fn circle_feature(c: &LandmarkCircle) -> Feature {
    point_feature(
        &c.circle.center,
        json!({
            "role": "circle",
            "landmark_id": c.landmark_id,
            "radius_m": c.circle.radius_m,
        }),
    )
}

fn candidate_feature(c: &CandidatePoint, role: &str) -> Feature {
    point_feature(
        &c.point,
        json!({
            "role": role,
            "pair": [c.source_pair.0, c.source_pair.1],
            "case": c.case_tag.as_str(),
            "weight": c.weight,
        }),
    )
}

/// Circles, kept and dropped candidates, the estimate, and optionally the
/// true location.
pub fn estimate_collection(
    target_id: &str,
    circles: &[LandmarkCircle],
    estimate: &EstimatedLocation,
    truth: Option<&GeoPoint>,
) -> FeatureCollection {
    let mut features: Vec<Feature> = circles.iter().map(circle_feature).collect();
    features.extend(estimate.kept_points.iter().map(|c| candidate_feature(c, "kept")));
    features.extend(
        estimate
            .dropped_points
            .iter()
            .map(|c| candidate_feature(c, "dropped")),
    );
    features.push(point_feature(
        &estimate.point,
        json!({
            "role": "estimate",
            "target_id": target_id,
            "mean_residual_km": estimate.mean_residual_km,
        }),
    ));
    if let Some(t) = truth {
        features.push(point_feature(
            t,
            json!({ "role": "truth", "target_id": target_id }),
        ));
    }
    FeatureCollection {
        features,
        ..Default::default()
    }
}

/// Every node, tagged with whether it hosts a landmark and which landmark
/// serves it.
pub fn placement_collection(t: &Topology, ls: &LandmarkSet) -> FeatureCollection {
    let features = t
        .nodes()
        .iter()
        .map(|n| {
            let is_landmark = ls.landmarks.iter().any(|l| l.id == n.id);
            point_feature(
                &n.position,
                json!({
                    "role": if is_landmark { "landmark" } else { "node" },
                    "id": n.id,
                    "assigned_to": ls.assignment.get(&n.id),
                }),
            )
        })
        .collect();
    FeatureCollection {
        features,
        ..Default::default()
    }
}
