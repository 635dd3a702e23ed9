//! Collapse a candidate point cloud into one location.
//!
//! The center is found by a local grid search minimizing the mean
//! great-circle distance to the cloud: try a 7×7 neighborhood at spacing ε,
//! move to the best strictly improving grid point, and halve ε whenever
//! nothing improves. Outliers are removed by repeatedly centering and
//! dropping the farthest fraction of points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::{normalize_lon, orthodromic_distance, spherical_centroid, GeoPoint, EARTH_RADIUS_M};
use crate::lateration::{all_candidates, CandidatePoint, LandmarkCircle, LaterationConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSearchConfig {
    /// Initial grid spacing, meters.
    pub eps0_m: f64,
    /// Search stops once the spacing drops below this, meters.
    pub eps_min_m: f64,
    /// Grid half-width in steps; 3 gives a 7×7 neighborhood.
    pub extent: u32,
}

impl Default for GridSearchConfig {
    fn default() -> Self {
        Self {
            eps0_m: 100_000.0,
            eps_min_m: 500.0,
            extent: 3,
        }
    }
}

impl GridSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_min_m > 0.0) || !self.eps_min_m.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "eps_min_m must be positive, got {}",
                self.eps_min_m
            )));
        }
        if !(self.eps0_m >= self.eps_min_m) || !self.eps0_m.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "eps0_m ({}) must be at least eps_min_m ({})",
                self.eps0_m, self.eps_min_m
            )));
        }
        if self.extent == 0 {
            return Err(Error::InvalidParameter("grid extent must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierConfig {
    pub rounds: u32,
    pub drop_fraction: f64,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        Self {
            rounds: 2,
            drop_fraction: 0.25,
        }
    }
}

impl OutlierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.drop_fraction) {
            return Err(Error::InvalidParameter(format!(
                "drop_fraction must be in [0, 1), got {}",
                self.drop_fraction
            )));
        }
        Ok(())
    }
}

/// Never filter the cloud below this many points.
pub const MIN_KEPT: usize = 3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub grid: GridSearchConfig,
    pub outliers: OutlierConfig,
    pub lateration: LaterationConfig,
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.outliers.validate()?;
        self.lateration.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedLocation {
    pub point: GeoPoint,
    pub kept_points: Vec<CandidatePoint>,
    pub dropped_points: Vec<CandidatePoint>,
    pub mean_residual_km: f64,
}

/// Mean great-circle distance from `at` to the cloud, meters.
pub fn mean_distance(at: &GeoPoint, points: &[GeoPoint]) -> f64 {
    points.iter().map(|p| orthodromic_distance(at, p)).sum::<f64>() / points.len() as f64
}

/// Accepted moves must beat the incumbent by more than this, meters.
const MIN_GAIN_M: f64 = 1e-9;
/// Bound on moves at a single spacing.
const MAX_MOVES_PER_LEVEL: usize = 100_000;

/// Grid-search minimizer of the mean distance to `points`, starting at
/// `seed` (spherical centroid when `None`).
pub fn grid_center(points: &[GeoPoint], cfg: &GridSearchConfig, seed: Option<GeoPoint>) -> Result<GeoPoint> {
    grid_center_traced(points, cfg, seed).map(|t| t.point)
}

/// Search trace: the accepted objective values and the spacing each was
/// accepted at.
#[derive(Debug, Clone)]
pub struct GridTrace {
    pub point: GeoPoint,
    pub objective_m: f64,
    pub steps: Vec<(f64, f64)>,
    pub halvings: usize,
}

pub fn grid_center_traced(
    points: &[GeoPoint],
    cfg: &GridSearchConfig,
    seed: Option<GeoPoint>,
) -> Result<GridTrace> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    cfg.validate()?;
    let mut best = match seed {
        Some(s) => s,
        None => spherical_centroid(points).ok_or(Error::EmptyCloud)?,
    };
    let mut best_val = mean_distance(&best, points);
    let mut eps = cfg.eps0_m;
    let mut steps = vec![(eps, best_val)];
    let mut halvings = 0;
    let k = cfg.extent as i32;

    while eps >= cfg.eps_min_m {
        for _ in 0..MAX_MOVES_PER_LEVEL {
            let dlat = (eps / EARTH_RADIUS_M).to_degrees();
            let dlon = dlat / best.lat.to_radians().cos().max(1e-6);
            let mut round_best: Option<(f64, GeoPoint)> = None;
            for i in -k..=k {
                let lat = best.lat + f64::from(i) * dlat;
                if !(-90.0..=90.0).contains(&lat) {
                    continue;
                }
                for j in -k..=k {
                    if i == 0 && j == 0 {
                        continue;
                    }
                    let cand = GeoPoint {
                        lat,
                        lon: normalize_lon(best.lon + f64::from(j) * dlon),
                    };
                    let v = mean_distance(&cand, points);
                    let better = match &round_best {
                        None => true,
                        Some((bv, bp)) => {
                            v < *bv
                                || (v == *bv
                                    && (cand.lat > bp.lat || (cand.lat == bp.lat && cand.lon < bp.lon)))
                        }
                    };
                    if better {
                        round_best = Some((v, cand));
                    }
                }
            }
            match round_best {
                Some((v, p)) if v < best_val - MIN_GAIN_M => {
                    best = p;
                    best_val = v;
                    steps.push((eps, v));
                }
                _ => break,
            }
        }
        eps /= 2.0;
        halvings += 1;
    }
    Ok(GridTrace {
        point: best,
        objective_m: best_val,
        steps,
        halvings,
    })
}

/// Repeatedly centers the kept set and drops its farthest points. Never
/// drops below [`MIN_KEPT`] points. Both outputs preserve input order.
pub fn filter_outliers(
    points: &[CandidatePoint],
    cfg: &OutlierConfig,
    grid: &GridSearchConfig,
) -> Result<(Vec<CandidatePoint>, Vec<CandidatePoint>)> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    cfg.validate()?;
    let mut kept: Vec<usize> = (0..points.len()).collect();
    let mut dropped: Vec<usize> = Vec::new();
    for _ in 0..cfg.rounds {
        if kept.len() <= MIN_KEPT {
            break;
        }
        let cloud: Vec<GeoPoint> = kept.iter().map(|&i| points[i].point).collect();
        let center = grid_center(&cloud, grid, None)?;
        let want = (cfg.drop_fraction * kept.len() as f64).ceil() as usize;
        let n_drop = want.min(kept.len() - MIN_KEPT);
        if n_drop == 0 {
            break;
        }
        let mut by_dist: Vec<(f64, usize)> = kept
            .iter()
            .map(|&i| (orthodromic_distance(&center, &points[i].point), i))
            .collect();
        by_dist.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut gone: Vec<usize> = by_dist[..n_drop].iter().map(|&(_, i)| i).collect();
        gone.sort_unstable();
        kept.retain(|i| gone.binary_search(i).is_err());
        dropped.extend(gone);
    }
    dropped.sort_unstable();
    Ok((
        kept.iter().map(|&i| points[i].clone()).collect(),
        dropped.iter().map(|&i| points[i].clone()).collect(),
    ))
}

/// Full estimation from circles: candidates, outlier filter, final center.
pub fn estimate_target(circles: &[LandmarkCircle], cfg: &EstimationConfig) -> Result<EstimatedLocation> {
    cfg.validate()?;
    let cands = all_candidates(circles, &cfg.lateration)?;
    if cands.is_empty() {
        return Err(Error::NoCandidates);
    }
    let (kept, dropped) = filter_outliers(&cands, &cfg.outliers, &cfg.grid)?;
    let cloud: Vec<GeoPoint> = kept.iter().map(|c| c.point).collect();
    let point = grid_center(&cloud, &cfg.grid, None)?;
    let mean_residual_km = mean_distance(&point, &cloud) / 1000.0;
    Ok(EstimatedLocation {
        point,
        kept_points: kept,
        dropped_points: dropped,
        mean_residual_km,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::{destination_point, midpoint, GeoCircle};
    use crate::lateration::CaseTag;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn cand(p: GeoPoint) -> CandidatePoint {
        CandidatePoint {
            point: p,
            source_pair: ("a".into(), "b".into()),
            case_tag: CaseTag::PairBranch,
            weight: 1.0,
        }
    }

    #[test]
    fn single_point() {
        let p = pt(47.3, 8.5);
        let cfg = GridSearchConfig::default();
        let c = grid_center(&[p], &cfg, Some(pt(46.0, 7.0))).unwrap();
        assert!(orthodromic_distance(&c, &p) <= cfg.eps_min_m);
    }

    #[test]
    fn two_points_midpoint() {
        let a = pt(40.0, 0.0);
        let b = pt(42.0, 3.0);
        let cfg = GridSearchConfig::default();
        let c = grid_center(&[a, b], &cfg, None).unwrap();
        assert!(orthodromic_distance(&c, &midpoint(&a, &b)) <= cfg.eps_min_m);
    }

    #[test]
    fn config_validation() {
        assert!(matches!(
            grid_center(&[], &GridSearchConfig::default(), None),
            Err(Error::EmptyCloud)
        ));
        let bad = GridSearchConfig {
            eps0_m: 10.0,
            eps_min_m: 100.0,
            extent: 3,
        };
        assert!(bad.validate().is_err());
        assert!(GridSearchConfig {
            eps_min_m: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(OutlierConfig {
            rounds: 1,
            drop_fraction: 1.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn objective_monotone_and_halvings_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> = (0..40)
            .map(|_| pt(rng.random_range(44.0..48.0), rng.random_range(2.0..9.0)))
            .collect();
        let cfg = GridSearchConfig::default();
        let seed = pt(40.0, 0.0);
        let trace = grid_center_traced(&pts, &cfg, Some(seed)).unwrap();
        for w in trace.steps.windows(2) {
            assert!(w[1].1 < w[0].1);
            assert!(w[1].0 <= w[0].0);
        }
        assert!(trace.objective_m <= mean_distance(&seed, &pts));
        let expected = (cfg.eps0_m / cfg.eps_min_m).log2().ceil() as usize;
        assert_eq!(trace.halvings, expected);
    }

    /// Dense brute-force minimizer: a 5 km scan of the whole box, then a
    /// 100 m scan of ±10 km around the coarse winner.
    fn dense_grid_minimum(pts: &[GeoPoint], center: GeoPoint, half_km: f64) -> f64 {
        let deg_lat = |m: f64| (m / EARTH_RADIUS_M).to_degrees();
        let scan = |c: GeoPoint, half_m: f64, step_m: f64| -> (f64, GeoPoint) {
            let n = (half_m / step_m).round() as i32;
            let dlat = deg_lat(step_m);
            let dlon = dlat / c.lat.to_radians().cos();
            let mut best = (f64::INFINITY, c);
            for i in -n..=n {
                for j in -n..=n {
                    let p = GeoPoint {
                        lat: c.lat + f64::from(i) * dlat,
                        lon: c.lon + f64::from(j) * dlon,
                    };
                    let v = mean_distance(&p, pts);
                    if v < best.0 {
                        best = (v, p);
                    }
                }
            }
            best
        };
        let (_, coarse) = scan(center, half_km * 1000.0, 5000.0);
        scan(coarse, 10_000.0, 100.0).0
    }

    #[test]
    fn matches_dense_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let center = pt(50.0, 10.0);
        let pts: Vec<_> = (0..50)
            .map(|_| {
                let d = rng.random_range(0.0..250_000.0f64);
                let b = rng.random_range(0.0..360.0);
                destination_point(&center, b, d)
            })
            .collect();
        let found = grid_center_traced(&pts, &GridSearchConfig::default(), None).unwrap();
        let oracle = dense_grid_minimum(&pts, center, 260.0);
        assert!(
            found.objective_m <= oracle * 1.01,
            "{} vs {oracle}",
            found.objective_m
        );
    }

    #[test]
    fn identical_points() {
        let p = pt(10.0, 20.0);
        let pts: Vec<_> = (0..8).map(|_| cand(p)).collect();
        let (kept, dropped) =
            filter_outliers(&pts, &OutlierConfig::default(), &GridSearchConfig::default()).unwrap();
        assert_eq!(kept.len() + dropped.len(), 8);
        let cloud: Vec<_> = kept.iter().map(|c| c.point).collect();
        let c = grid_center(&cloud, &GridSearchConfig::default(), None).unwrap();
        assert!(orthodromic_distance(&c, &p) < 1e-6);
    }

    #[test]
    fn far_point_dropped() {
        let base = pt(48.0, 11.0);
        let mut pts: Vec<_> = (0..9)
            .map(|i| cand(destination_point(&base, 40.0 * i as f64, 1000.0 * i as f64)))
            .collect();
        let far = destination_point(&base, 10.0, 2_000_000.0);
        pts.push(cand(far));
        let cfg = OutlierConfig {
            rounds: 1,
            drop_fraction: 0.25,
        };
        let (kept, dropped) = filter_outliers(&pts, &cfg, &GridSearchConfig::default()).unwrap();
        assert_eq!(dropped.len(), 3);
        assert_eq!(kept.len(), 7);
        assert!(dropped.iter().any(|c| c.point == far));
    }

    #[test]
    fn filter_respects_floor_and_order() {
        let pts: Vec<_> = (0..4).map(|i| cand(pt(0.0, i as f64))).collect();
        let cfg = OutlierConfig {
            rounds: 5,
            drop_fraction: 0.9,
        };
        let grid = GridSearchConfig::default();
        let (kept, dropped) = filter_outliers(&pts, &cfg, &grid).unwrap();
        assert_eq!(kept.len(), MIN_KEPT);
        assert_eq!(dropped.len(), 1);

        // Within one round nothing kept is farther than anything dropped.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<_> = (0..30)
            .map(|_| cand(pt(rng.random_range(40.0..50.0), rng.random_range(0.0..15.0))))
            .collect();
        let one = OutlierConfig {
            rounds: 1,
            drop_fraction: 0.3,
        };
        let (kept, dropped) = filter_outliers(&pts, &one, &grid).unwrap();
        let cloud: Vec<_> = pts.iter().map(|c| c.point).collect();
        let center = grid_center(&cloud, &grid, None).unwrap();
        let max_kept = kept
            .iter()
            .map(|c| orthodromic_distance(&center, &c.point))
            .fold(0.0, f64::max);
        let min_dropped = dropped
            .iter()
            .map(|c| orthodromic_distance(&center, &c.point))
            .fold(f64::INFINITY, f64::min);
        assert!(max_kept <= min_dropped);
    }

    #[test]
    fn three_circles_one_point() {
        let target = pt(52.5, 13.4);
        let circles: Vec<_> = [(0.0, 300_000.0), (120.0, 450_000.0), (240.0, 200_000.0)]
            .iter()
            .enumerate()
            .map(|(i, &(b, d))| {
                let c = destination_point(&target, b, d);
                LandmarkCircle {
                    landmark_id: format!("L{i}"),
                    circle: GeoCircle::new(c, orthodromic_distance(&c, &target)).unwrap(),
                }
            })
            .collect();
        let cfg = EstimationConfig::default();
        let est = estimate_target(&circles, &cfg).unwrap();
        assert!(orthodromic_distance(&est.point, &target) <= cfg.grid.eps_min_m);
        assert_eq!(est.kept_points.len() + est.dropped_points.len(), 6);
        assert_eq!(estimate_target(&circles, &cfg).unwrap(), est);
    }

    #[test]
    fn two_circle_pair_is_ambiguous() {
        let circles = vec![
            LandmarkCircle {
                landmark_id: "a".into(),
                circle: GeoCircle::new(pt(0.0, 0.0), 800_000.0).unwrap(),
            },
            LandmarkCircle {
                landmark_id: "b".into(),
                circle: GeoCircle::new(pt(0.0, 10.0), 800_000.0).unwrap(),
            },
        ];
        let cfg = EstimationConfig::default();
        let est = estimate_target(&circles, &cfg).unwrap();
        let branches: Vec<_> = est.kept_points.iter().map(|c| c.point).collect();
        assert_eq!(branches.len(), 2);
        assert!(est.dropped_points.is_empty());
        let direct = grid_center(&branches, &cfg.grid, None).unwrap();
        assert_eq!(est.point, direct);
    }

    #[test]
    fn no_candidates_when_all_pairs_dropped() {
        let circles = vec![
            LandmarkCircle {
                landmark_id: "a".into(),
                circle: GeoCircle::new(pt(0.0, 0.0), 1000.0).unwrap(),
            },
            LandmarkCircle {
                landmark_id: "b".into(),
                circle: GeoCircle::new(pt(0.0, 40.0), 1000.0).unwrap(),
            },
        ];
        assert!(matches!(
            estimate_target(&circles, &EstimationConfig::default()),
            Err(Error::NoCandidates)
        ));
    }
}
