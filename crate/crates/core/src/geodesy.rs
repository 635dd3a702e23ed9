//! Spherical-Earth geometry on a sphere with the WGS84 mean radius.
//!
//! Angles are radians internally; degrees only appear on [`GeoPoint`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// WGS84 mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Half the circumference: the largest possible great-circle distance.
pub const MAX_DISTANCE_M: f64 = PI * EARTH_RADIUS_M;

/// Classification tolerance for circle intersections, meters.
pub const INTERSECTION_TOLERANCE_M: f64 = 1.0;

/// Centers closer than this are treated as identical.
const SAME_CENTER_M: f64 = 1e-3;

/// A position on the sphere in degrees.
///
/// Latitude lies in [-90, 90]; longitude is normalized into (-180, 180].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// Validates latitude and normalizes longitude.
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::InvalidCoordinate(format!("({lat}, {lon}) is not finite")));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidCoordinate(format!(
                "latitude {lat} outside [-90, 90]"
            )));
        }
        Ok(Self {
            lat,
            lon: normalize_lon(lon),
        })
    }

    pub(crate) fn from_radians(lat: f64, lon: f64) -> Self {
        Self {
            lat: lat.to_degrees().clamp(-90.0, 90.0),
            lon: normalize_lon(lon.to_degrees()),
        }
    }

    fn lat_rad(&self) -> f64 {
        self.lat.to_radians()
    }

    fn lon_rad(&self) -> f64 {
        self.lon.to_radians()
    }

    /// Unit vector in Earth-centered Cartesian coordinates.
    pub fn to_unit_vector(&self) -> [f64; 3] {
        let (slat, clat) = self.lat_rad().sin_cos();
        let (slon, clon) = self.lon_rad().sin_cos();
        [clat * clon, clat * slon, slat]
    }

    /// Inverse of [`GeoPoint::to_unit_vector`]; the input need not be normalized.
    pub fn from_vector(v: [f64; 3]) -> Self {
        let lat = v[2].atan2(v[0].hypot(v[1]));
        let lon = v[1].atan2(v[0]);
        Self::from_radians(lat, lon)
    }
}

/// Maps any finite longitude into (-180, 180].
pub fn normalize_lon(lon: f64) -> f64 {
    let mut l = lon % 360.0;
    if l <= -180.0 {
        l += 360.0;
    } else if l > 180.0 {
        l -= 360.0;
    }
    l
}

/// Central angle between two points, radians.
///
/// Uses the atan2 form, which stays well conditioned for both coincident
/// and antipodal points.
pub fn central_angle(a: &GeoPoint, b: &GeoPoint) -> f64 {
    // Fixed argument order makes the result exactly symmetric.
    let (a, b) = if (a.lat, a.lon) <= (b.lat, b.lon) {
        (a, b)
    } else {
        (b, a)
    };
    let (s1, c1) = a.lat_rad().sin_cos();
    let (s2, c2) = b.lat_rad().sin_cos();
    let (sdl, cdl) = (b.lon_rad() - a.lon_rad()).sin_cos();
    let y = (c2 * sdl).hypot(c1 * s2 - s1 * c2 * cdl);
    let x = s1 * s2 + c1 * c2 * cdl;
    y.atan2(x)
}

/// Great-circle distance in meters.
pub fn orthodromic_distance(a: &GeoPoint, b: &GeoPoint) -> f64 {
    central_angle(a, b) * EARTH_RADIUS_M
}

/// Initial bearing from `a` toward `b`, degrees clockwise from north in [0, 360).
pub fn initial_bearing(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let (s1, c1) = a.lat_rad().sin_cos();
    let (s2, c2) = b.lat_rad().sin_cos();
    let (sdl, cdl) = (b.lon_rad() - a.lon_rad()).sin_cos();
    let theta = (sdl * c2).atan2(c1 * s2 - s1 * c2 * cdl);
    (theta.to_degrees() + 360.0) % 360.0
}

/// Point reached by travelling `distance_m` along the great circle leaving
/// `origin` at `bearing_deg`.
pub fn destination_point(origin: &GeoPoint, bearing_deg: f64, distance_m: f64) -> GeoPoint {
    if distance_m == 0.0 {
        return *origin;
    }
    let delta = distance_m / EARTH_RADIUS_M;
    let theta = bearing_deg.to_radians();
    let (s1, c1) = origin.lat_rad().sin_cos();
    let (sd, cd) = delta.sin_cos();
    let s2 = (s1 * cd + c1 * sd * theta.cos()).clamp(-1.0, 1.0);
    let lat2 = s2.asin();
    let lon2 = origin.lon_rad() + (theta.sin() * sd * c1).atan2(cd - s1 * s2);
    GeoPoint::from_radians(lat2, lon2)
}

/// Point at `distance_m` from `from` along the geodesic toward `toward`.
///
/// Distances beyond the separation continue past `toward`; negative
/// distances head the opposite way.
pub fn along_geodesic(from: &GeoPoint, toward: &GeoPoint, distance_m: f64) -> GeoPoint {
    let a = from.to_unit_vector();
    let b = toward.to_unit_vector();
    let cos_d = dot(a, b);
    let mut u = sub(b, scale(a, cos_d));
    let norm = dot(u, u).sqrt();
    if norm < 1e-15 {
        // Coincident or antipodal centers: every direction is a geodesic.
        return destination_point(from, 0.0, distance_m.abs());
    }
    u = scale(u, 1.0 / norm);
    let s = distance_m / EARTH_RADIUS_M;
    GeoPoint::from_vector(add(scale(a, s.cos()), scale(u, s.sin())))
}

/// Midpoint of the great-circle segment between two points.
pub fn midpoint(a: &GeoPoint, b: &GeoPoint) -> GeoPoint {
    along_geodesic(a, b, orthodromic_distance(a, b) / 2.0)
}

/// Spherical centroid: the mean of unit vectors projected back to the sphere.
pub fn spherical_centroid(points: &[GeoPoint]) -> Option<GeoPoint> {
    if points.is_empty() {
        return None;
    }
    let mut acc = [0.0; 3];
    for p in points {
        acc = add(acc, p.to_unit_vector());
    }
    if dot(acc, acc).sqrt() < 1e-12 {
        // Antipodally balanced cloud; fall back to the first point.
        return Some(points[0]);
    }
    Some(GeoPoint::from_vector(acc))
}

/// A small circle on the sphere: all points at `radius_m` from `center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCircle {
    pub center: GeoPoint,
    pub radius_m: f64,
}

impl GeoCircle {
    pub fn new(center: GeoPoint, radius_m: f64) -> Result<Self> {
        if !radius_m.is_finite() || radius_m < 0.0 {
            return Err(Error::InvalidParameter(format!("circle radius {radius_m} m")));
        }
        if radius_m > MAX_DISTANCE_M {
            return Err(Error::InvalidParameter(format!(
                "circle radius {radius_m} m exceeds half the circumference"
            )));
        }
        Ok(Self { center, radius_m })
    }

    /// Distance from `p` to the circle's perimeter, meters.
    pub fn residual(&self, p: &GeoPoint) -> f64 {
        (orthodromic_distance(&self.center, p) - self.radius_m).abs()
    }
}

/// Which argument of [`circle_intersections`] is meant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Which {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntersectionResult {
    /// Disks are disjoint; `gap_m` separates the perimeters along the
    /// center-connecting geodesic.
    NonOverlapping {
        gap_m: f64,
    },
    /// One circle lies strictly inside the other's disk.
    Contained {
        inner: Which,
    },
    Tangent {
        point: GeoPoint,
    },
    /// Two distinct points, northern first (ties: smaller longitude first).
    Pair {
        p1: GeoPoint,
        p2: GeoPoint,
    },
}

/// Intersects two circles on the sphere, classifying with a 1 m tolerance.
pub fn circle_intersections(c1: &GeoCircle, c2: &GeoCircle) -> Result<IntersectionResult> {
    let tau = INTERSECTION_TOLERANCE_M;
    let (r1, r2) = (c1.radius_m, c2.radius_m);
    let d = orthodromic_distance(&c1.center, &c2.center);

    if d < SAME_CENTER_M {
        if (r1 - r2).abs() <= tau {
            return Err(Error::DegenerateCircles);
        }
        let inner = if r1 < r2 { Which::First } else { Which::Second };
        return Ok(IntersectionResult::Contained { inner });
    }

    let sum = r1 + r2;
    let diff = (r1 - r2).abs();
    let full = 2.0 * MAX_DISTANCE_M;

    if (d - sum).abs() <= tau {
        // External tangency: split any sub-tolerance gap evenly.
        let point = along_geodesic(&c1.center, &c2.center, r1 + (d - sum) / 2.0);
        return Ok(IntersectionResult::Tangent { point });
    }
    if (d - diff).abs() <= tau {
        // Internal tangency: the point lies beyond the smaller circle's
        // center as seen from the larger one.
        let point = if r1 >= r2 {
            along_geodesic(&c1.center, &c2.center, r1)
        } else {
            along_geodesic(&c2.center, &c1.center, r2)
        };
        return Ok(IntersectionResult::Tangent { point });
    }
    if (d + sum - full).abs() <= tau {
        // Tangency on the far side of the sphere.
        let point = along_geodesic(&c1.center, &c2.center, -r1);
        return Ok(IntersectionResult::Tangent { point });
    }
    if d > sum {
        return Ok(IntersectionResult::NonOverlapping { gap_m: d - sum });
    }
    if d < diff {
        let inner = if r1 < r2 { Which::First } else { Which::Second };
        return Ok(IntersectionResult::Contained { inner });
    }
    if d + sum > full {
        // Each disk covers the other's complement; perimeters never meet.
        let inner = if r1 < r2 { Which::First } else { Which::Second };
        return Ok(IntersectionResult::Contained { inner });
    }

    let a = c1.center.to_unit_vector();
    let b = c2.center.to_unit_vector();
    let cos_d = (d / EARTH_RADIUS_M).cos();
    let n = cross(a, b);
    let sin2 = dot(n, n);
    let cos1 = (r1 / EARTH_RADIUS_M).cos();
    let cos2 = (r2 / EARTH_RADIUS_M).cos();
    let alpha = (cos1 - cos2 * cos_d) / sin2;
    let beta = (cos2 - cos1 * cos_d) / sin2;
    let gamma = ((1.0 - alpha * cos1 - beta * cos2) / sin2).max(0.0).sqrt();
    let base = add(scale(a, alpha), scale(b, beta));
    let p = GeoPoint::from_vector(add(base, scale(n, gamma)));
    let q = GeoPoint::from_vector(sub(base, scale(n, gamma)));
    let (p1, p2) = if north_first(&p, &q) { (p, q) } else { (q, p) };
    Ok(IntersectionResult::Pair { p1, p2 })
}

fn north_first(p: &GeoPoint, q: &GeoPoint) -> bool {
    p.lat > q.lat || (p.lat == q.lat && p.lon <= q.lon)
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    /// Independent haversine evaluation, kept separate from the atan2 form.
    fn haversine_m(a: &GeoPoint, b: &GeoPoint) -> f64 {
        let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
        let dphi = p2 - p1;
        let dl = (b.lon - a.lon).to_radians();
        let h = (dphi / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
    }

    #[test]
    fn lon_normalization() {
        assert_eq!(pt(0.0, -180.0).lon, 180.0);
        assert_eq!(pt(0.0, 190.0).lon, -170.0);
        assert_eq!(pt(0.0, 540.0).lon, 180.0);
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn zero_and_antipodal_distance() {
        let a = pt(12.3, 45.6);
        assert_eq!(orthodromic_distance(&a, &a), 0.0);
        let d = orthodromic_distance(&pt(0.0, 0.0), &pt(0.0, 180.0));
        assert!((d - 20_015_114.4).abs() < 0.1, "{d}");
    }

    #[test]
    fn destination_quarter_arc_reaches_pole() {
        let p = destination_point(&pt(0.0, 0.0), 0.0, MAX_DISTANCE_M / 2.0);
        assert!((p.lat - 90.0).abs() < 1e-9, "{}", p.lat);
        assert_eq!(destination_point(&pt(3.0, 4.0), 77.0, 0.0), pt(3.0, 4.0));
    }

    #[test]
    fn non_overlapping_gap() {
        let c = pt(10.0, 10.0);
        let far = destination_point(&c, 60.0, 1_000_000.0);
        let r = circle_intersections(
            &GeoCircle::new(c, 400_000.0).unwrap(),
            &GeoCircle::new(far, 400_000.0).unwrap(),
        )
        .unwrap();
        match r {
            IntersectionResult::NonOverlapping { gap_m } => {
                assert!((gap_m - 200_000.0).abs() <= 1.0, "{gap_m}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn external_tangent_at_midpoint() {
        let c = pt(48.0, 2.0);
        let far = destination_point(&c, 100.0, 1_000_000.0);
        let r = circle_intersections(
            &GeoCircle::new(c, 500_000.0).unwrap(),
            &GeoCircle::new(far, 500_000.0).unwrap(),
        )
        .unwrap();
        let IntersectionResult::Tangent { point } = r else {
            panic!("{r:?}")
        };
        let mid = midpoint(&c, &far);
        assert!(orthodromic_distance(&point, &mid) < 1.0);
    }

    #[test]
    fn internal_tangent_and_contained() {
        let c = pt(0.0, 0.0);
        let other = destination_point(&c, 90.0, 100_000.0);
        let big = GeoCircle::new(c, 500_000.0).unwrap();
        let small = GeoCircle::new(other, 400_000.0).unwrap();
        let IntersectionResult::Tangent { point } = circle_intersections(&small, &big).unwrap() else {
            panic!()
        };
        assert!(big.residual(&point) < 1.0 && small.residual(&point) < 1.0);

        let tiny = GeoCircle::new(other, 100_000.0).unwrap();
        assert_eq!(
            circle_intersections(&big, &tiny).unwrap(),
            IntersectionResult::Contained { inner: Which::Second }
        );
    }

    #[test]
    fn identical_centers() {
        let c = pt(5.0, 5.0);
        let a = GeoCircle::new(c, 1000.0).unwrap();
        assert!(matches!(
            circle_intersections(&a, &a),
            Err(Error::DegenerateCircles)
        ));
        let b = GeoCircle::new(c, 2000.0).unwrap();
        assert_eq!(
            circle_intersections(&a, &b).unwrap(),
            IntersectionResult::Contained { inner: Which::First }
        );
    }

    #[test]
    fn far_side_tangency() {
        let a = pt(0.0, 0.0);
        let b = pt(0.0, 90.0);
        // d = quarter circumference, radii fill the remaining 3/4.
        let r1 = MAX_DISTANCE_M * 0.8;
        let r2 = 2.0 * MAX_DISTANCE_M - MAX_DISTANCE_M / 2.0 - r1;
        let c1 = GeoCircle::new(a, r1).unwrap();
        let c2 = GeoCircle::new(b, r2).unwrap();
        let IntersectionResult::Tangent { point } = circle_intersections(&c1, &c2).unwrap() else {
            panic!()
        };
        assert!(c1.residual(&point) < 1.0 && c2.residual(&point) < 1.0);
    }

    /// Scans latitude along lon = 5 for the point equidistant at radius r
    /// from both equatorial centers, by bisection on the residual.
    fn scan_equatorial_root(r: f64) -> f64 {
        let c = pt(0.0, 0.0);
        let f = |lat: f64| orthodromic_distance(&c, &pt(lat, 5.0)) - r;
        let (mut lo, mut hi) = (0.0, 89.0);
        assert!(f(lo) < 0.0 && f(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn equatorial_pair_matches_scan() {
        let r = 800_000.0;
        let c1 = GeoCircle::new(pt(0.0, 0.0), r).unwrap();
        let c2 = GeoCircle::new(pt(0.0, 10.0), r).unwrap();
        let IntersectionResult::Pair { p1, p2 } = circle_intersections(&c1, &c2).unwrap() else {
            panic!()
        };
        let lat = scan_equatorial_root(r);
        assert!((p1.lat - lat).abs() < 1e-6, "{} vs {lat}", p1.lat);
        assert!((p1.lat + p2.lat).abs() < 1e-6);
        assert!((p1.lon - 5.0).abs() < 1e-6 && (p2.lon - 5.0).abs() < 1e-6);
    }

    fn arb_point() -> impl Strategy<Value = GeoPoint> {
        (-89.9f64..89.9, -179.9f64..180.0).prop_map(|(lat, lon)| pt(lat, lon))
    }

    proptest! {
        #[test]
        fn matches_haversine(a in arb_point(), b in arb_point()) {
            let d = orthodromic_distance(&a, &b);
            let h = haversine_m(&a, &b);
            prop_assert!((d - h).abs() <= 1e-6 * h.max(1.0));
        }

        #[test]
        fn metric_axioms(a in arb_point(), b in arb_point(), c in arb_point()) {
            let ab = orthodromic_distance(&a, &b);
            prop_assert_eq!(ab, orthodromic_distance(&b, &a));
            prop_assert!(ab <= orthodromic_distance(&a, &c) + orthodromic_distance(&c, &b) + 1e-6);
        }

        #[test]
        fn destination_round_trip(o in arb_point(), bearing in 0.0f64..360.0, dist in 0.0f64..MAX_DISTANCE_M) {
            let p = destination_point(&o, bearing, dist);
            prop_assert!((orthodromic_distance(&o, &p) - dist).abs() <= 0.5);
        }

        #[test]
        fn pair_points_on_both_circles(
            a in arb_point(), bearing in 0.0f64..360.0,
            sep in 10_000.0f64..3_000_000.0, f1 in 0.1f64..1.5, f2 in 0.1f64..1.5,
        ) {
            let b = destination_point(&a, bearing, sep);
            let c1 = GeoCircle::new(a, sep * f1).unwrap();
            let c2 = GeoCircle::new(b, sep * f2).unwrap();
            let r12 = circle_intersections(&c1, &c2).unwrap();
            let r21 = circle_intersections(&c2, &c1).unwrap();
            match (r12, r21) {
                (IntersectionResult::Pair { p1, p2 }, IntersectionResult::Pair { p1: q1, p2: q2 }) => {
                    for p in [p1, p2] {
                        prop_assert!(c1.residual(&p) <= 1.0 && c2.residual(&p) <= 1.0);
                    }
                    prop_assert!(orthodromic_distance(&p1, &q1) < 1e-3);
                    prop_assert!(orthodromic_distance(&p2, &q2) < 1e-3);
                }
                (IntersectionResult::Tangent { point }, IntersectionResult::Tangent { .. }) => {
                    prop_assert!(c1.residual(&point) <= 1.0 && c2.residual(&point) <= 1.0);
                }
                (IntersectionResult::NonOverlapping { gap_m: g1 }, IntersectionResult::NonOverlapping { gap_m: g2 }) => {
                    prop_assert!((g1 - g2).abs() < 1e-6);
                }
                (IntersectionResult::Contained { inner: i1 }, IntersectionResult::Contained { inner: i2 }) => {
                    prop_assert_ne!(i1, i2);
                }
                (x, y) => prop_assert!(false, "asymmetric {:?} {:?}", x, y),
            }
        }
    }
}
