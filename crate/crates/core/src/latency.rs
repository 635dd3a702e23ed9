//! Latency to distance conversion.
//!
//! A landmark's model has the form `distance = p * ln(q * latency + n) + m`,
//! with latency the one-way delay left after subtracting per-hop
//! processing. Models are fitted per landmark from measurements to the other
//! landmarks, whose true distances are known.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::orthodromic_distance;
use crate::placement::Landmark;

/// Default per-hop processing delay, ms.
pub const DEFAULT_PER_HOP_MS: f64 = 0.1;

/// Minimum number of calibration samples (one per model parameter).
pub const MIN_SAMPLES: usize = 4;

/// RTT samples and hop count for one landmark→target probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub landmark_id: String,
    pub target_id: String,
    pub hop_count: u32,
    pub rtt_samples_ms: Vec<f64>,
}

impl Measurement {
    pub fn new(
        landmark_id: impl Into<String>,
        target_id: impl Into<String>,
        hop_count: u32,
        rtt_samples_ms: Vec<f64>,
    ) -> Result<Self> {
        if rtt_samples_ms.is_empty() {
            return Err(Error::InvalidParameter("measurement has no RTT samples".into()));
        }
        if let Some(bad) = rtt_samples_ms.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return Err(Error::InvalidParameter(format!("invalid RTT sample {bad}")));
        }
        Ok(Self {
            landmark_id: landmark_id.into(),
            target_id: target_id.into(),
            hop_count,
            rtt_samples_ms,
        })
    }

    pub fn min_rtt_ms(&self) -> f64 {
        self.rtt_samples_ms.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Reads `landmark_id,target_id,hops,rtt1,rtt2,...` rows. A first row
    /// whose hop field is not numeric is treated as a header.
    pub fn read_csv<R: Read>(mut reader: R) -> Result<Vec<Self>> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let mut out = Vec::new();
        let mut first = true;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::Parse {
                location: format!("line {line}"),
                message: msg,
            };
            let rec = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .trim(csv::Trim::All)
                .from_reader(trimmed.as_bytes())
                .records()
                .next()
                .transpose()
                .map_err(|e| bad(e.to_string()))?
                .ok_or_else(|| bad("empty record".into()))?;
            let header = std::mem::replace(&mut first, false);
            if rec.len() < 4 {
                return Err(bad(format!(
                    "expected landmark_id,target_id,hops,rtt... but got {} fields",
                    rec.len()
                )));
            }
            let hops = match rec[2].parse::<u32>() {
                Ok(h) => h,
                Err(_) if header => continue,
                Err(_) => {
                    return Err(bad(format!(
                        "hop count {:?} is not a non-negative integer",
                        &rec[2]
                    )))
                }
            };
            let samples = rec
                .iter()
                .skip(3)
                .filter(|f| !f.is_empty())
                .map(|f| {
                    f.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite() && *v >= 0.0)
                        .ok_or_else(|| bad(format!("RTT sample {f:?} is not a non-negative number")))
                })
                .collect::<Result<Vec<_>>>()?;
            let m = Measurement::new(&rec[0], &rec[1], hops, samples).map_err(|e| bad(e.to_string()))?;
            out.push(m);
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(measurements: &[Self], writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
        let io = |e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            kind => Error::Parse {
                location: "csv output".into(),
                message: format!("{kind:?}"),
            },
        };
        w.write_record(["landmark_id", "target_id", "hops", "rtt_ms"])
            .map_err(io)?;
        for m in measurements {
            let mut row = vec![
                m.landmark_id.clone(),
                m.target_id.clone(),
                m.hop_count.to_string(),
            ];
            row.extend(m.rtt_samples_ms.iter().map(|s| s.to_string()));
            w.write_record(&row).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One-way latency after the per-hop correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveLatency {
    pub latency_ms: f64,
    /// The raw value was negative and has been clamped to zero.
    pub clamped: bool,
}

/// `min(rtt) / 2 - per_hop_ms * hops`, clamped at zero.
pub fn effective_latency(m: &Measurement, per_hop_ms: f64) -> EffectiveLatency {
    let raw = m.min_rtt_ms() / 2.0 - per_hop_ms * f64::from(m.hop_count);
    if raw < 0.0 {
        EffectiveLatency {
            latency_ms: 0.0,
            clamped: true,
        }
    } else {
        EffectiveLatency {
            latency_ms: raw,
            clamped: false,
        }
    }
}

/// Fitted logarithmic latency→distance curve for one landmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    /// km
    pub p: f64,
    /// 1/ms
    pub q: f64,
    pub n: f64,
    /// km
    pub m: f64,
    /// km²
    pub fit_rss: f64,
    pub sample_count: usize,
}

impl LatencyModel {
    pub fn with_params(p: f64, q: f64, n: f64, m: f64) -> Self {
        Self {
            p,
            q,
            n,
            m,
            fit_rss: 0.0,
            sample_count: 0,
        }
    }
}

/// Distance in km predicted for `latency_ms`, clamped below at zero.
pub fn predict_distance(model: &LatencyModel, latency_ms: f64) -> Result<f64> {
    let argument = model.q * latency_ms + model.n;
    if !(argument > 0.0) {
        return Err(Error::ModelDomain { latency_ms, argument });
    }
    // ln_1p keeps precision when q·latency is tiny next to n.
    let log = if model.n > 0.0 {
        (model.q * latency_ms / model.n).ln_1p() + model.n.ln()
    } else {
        argument.ln()
    };
    Ok((model.p * log + model.m).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub latency_ms: f64,
    pub distance_km: f64,
}

/// The n = 1 slice of the four-parameter family. Scaling q and n together
/// only shifts m, so nothing is lost for n > 0.
///
/// The optimizer works in one of two coordinate systems, each of which
/// keeps one limit of the family at a finite point:
///
/// - `Linear`: `c + (a / b) ln(1 + b x)` with theta = (a, ln b, c); the
///   straight line is b → 0.
/// - `Log`: `c + p ln(x + s)` with theta = (p, ln s, c); the pure
///   logarithm is s → 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Form {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy)]
struct Curve {
    form: Form,
    theta: [f64; 3],
    rss: f64,
    converged: bool,
}

/// Bounds on the curvature q. Below `Q_MIN` the curve is a line to within
/// double precision over any realistic latency range; above `Q_MAX` it is
/// the pure logarithm to within 1e-6 relative for latencies of 1 µs and up.
const Q_MIN: f64 = 1e-12;
const Q_MAX: f64 = 1e12;

/// `ln(1 + b x) / b` and its derivative in b, with a series near b x = 0.
fn shape(b: f64, x: f64) -> (f64, f64) {
    let t = b * x;
    if t.abs() < 1e-4 {
        let g = x * (1.0 - t / 2.0 + t * t / 3.0 - t * t * t / 4.0);
        let dg = x * x * (-0.5 + 2.0 * t / 3.0 - 0.75 * t * t);
        (g, dg)
    } else {
        let l = t.ln_1p();
        (l / b, x / (b * (1.0 + t)) - l / (b * b))
    }
}

impl Form {
    /// Range of theta[1] equivalent to `[Q_MIN, Q_MAX]`.
    fn log_bounds(self) -> (f64, f64) {
        match self {
            Form::Linear => (Q_MIN.ln(), Q_MAX.ln()),
            Form::Log => (-Q_MAX.ln(), -Q_MIN.ln()),
        }
    }

    /// Value and gradient in theta.
    fn eval(self, theta: &[f64; 3], x: f64) -> (f64, [f64; 3]) {
        match self {
            Form::Linear => {
                let b = theta[1].exp();
                let (g, dg) = shape(b, x);
                (theta[2] + theta[0] * g, [g, theta[0] * dg * b, 1.0])
            }
            Form::Log => {
                let s = theta[1].exp();
                let l = (x + s).ln();
                (theta[2] + theta[0] * l, [l, theta[0] * s / (x + s), 1.0])
            }
        }
    }

    /// Theta for the curve `p ln(q x + 1) + m`.
    fn theta_from_pqm(self, p: f64, q: f64, m: f64) -> [f64; 3] {
        match self {
            Form::Linear => [p * q, q.ln(), m],
            Form::Log => [p, -q.ln(), m + p * q.ln()],
        }
    }

    /// Inverse of `theta_from_pqm`.
    fn to_pqm(self, theta: &[f64; 3]) -> (f64, f64, f64) {
        match self {
            Form::Linear => {
                let q = theta[1].exp();
                (theta[0] / q, q, theta[2])
            }
            Form::Log => (theta[0], (-theta[1]).exp(), theta[2] + theta[0] * theta[1]),
        }
    }

    /// Sum of squared residuals, or `None` outside the feasible region.
    fn rss(self, theta: &[f64; 3], samples: &[CalibrationSample]) -> Option<f64> {
        let (lo, hi) = self.log_bounds();
        if !(theta[0] > 0.0) || !(theta[1] >= lo && theta[1] <= hi) || theta.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let s: f64 = samples
            .iter()
            .map(|c| (c.distance_km - self.eval(theta, c.latency_ms).0).powi(2))
            .sum();
        s.is_finite().then_some(s)
    }
}

const MAX_ITERATIONS: usize = 5000;
/// A fit whose RSS fell by less than `STALL_TOLERANCE` (relative) over the
/// last `STALL_WINDOW` iterations is in a flat valley and counts as done.
const STALL_WINDOW: usize = 50;
const STALL_TOLERANCE: f64 = 1e-9;
const LAMBDA_MIN: f64 = 1e-12;
const LAMBDA_MAX: f64 = 1e16;

/// Levenberg–Marquardt with Marquardt diagonal scaling. theta[1] is
/// projected onto its bounds; steps that leave the feasible region are
/// rejected like steps that increase the cost.
fn levenberg_marquardt(form: Form, start: [f64; 3], samples: &[CalibrationSample]) -> Option<Curve> {
    let (lo, hi) = form.log_bounds();
    let mut theta = start;
    theta[1] = theta[1].clamp(lo, hi);
    let mut rss = form.rss(&theta, samples)?;
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut window_rss = rss;

    for iteration in 1..=MAX_ITERATIONS {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for c in samples {
            let (value, grad) = form.eval(&theta, c.latency_ms);
            let r = c.distance_km - value;
            for i in 0..3 {
                jtr[i] += grad[i] * r;
                for j in 0..3 {
                    jtj[i][j] += grad[i] * grad[j];
                }
            }
        }

        let mut accepted = false;
        while lambda <= LAMBDA_MAX {
            let mut a = jtj;
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += lambda * jtj[i][i].max(1e-12);
            }
            let Some(delta) = solve3(a, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let cand = [
                theta[0] + delta[0],
                (theta[1] + delta[1]).clamp(lo, hi),
                theta[2] + delta[2],
            ];
            match form.rss(&cand, samples) {
                Some(new_rss) if new_rss < rss => {
                    let step = (0..3).fold(0.0f64, |acc, i| {
                        acc.max((cand[i] - theta[i]).abs() / (theta[i].abs() + 1e-9))
                    });
                    let gain = (rss - new_rss) / rss;
                    theta = cand;
                    rss = new_rss;
                    lambda = (lambda / 10.0).max(LAMBDA_MIN);
                    accepted = true;
                    if step < 1e-12 || gain < 1e-13 || rss == 0.0 {
                        converged = true;
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        // No descent at any damping: a minimum to machine precision.
        if !accepted {
            converged = true;
        }
        if iteration % STALL_WINDOW == 0 {
            if window_rss - rss <= STALL_TOLERANCE * window_rss {
                converged = true;
            }
            window_rss = rss;
        }
        if converged {
            break;
        }
    }
    Some(Curve {
        form,
        theta,
        rss,
        converged,
    })
}

/// Gaussian elimination with partial pivoting on a 3×3 system.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = b[row];
        for k in row + 1..3 {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Fixed multi-start grid in (p, q, n, m): p ∈ {10, 100}, q ∈ {0.1, 1},
/// n = 1, m ∈ {0, mean distance}, each run in both forms; plus the
/// least-squares line.
fn multi_starts(samples: &[CalibrationSample]) -> Vec<(Form, [f64; 3])> {
    let mean_d = samples.iter().map(|s| s.distance_km).sum::<f64>() / samples.len() as f64;
    let mut starts = Vec::with_capacity(17);
    for form in [Form::Linear, Form::Log] {
        for p in [10.0, 100.0] {
            for q in [0.1, 1.0] {
                for m in [0.0, mean_d] {
                    starts.push((form, form.theta_from_pqm(p, q, m)));
                }
            }
        }
    }
    if let Some(s) = line_start(samples) {
        starts.push((Form::Linear, s));
    }
    starts
}

/// The least-squares line, as the q → 0 member of the family.
fn line_start(samples: &[CalibrationSample]) -> Option<[f64; 3]> {
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s.latency_ms).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.distance_km).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.latency_ms - mx).powi(2)).sum();
    let sxy: f64 = samples
        .iter()
        .map(|s| (s.latency_ms - mx) * (s.distance_km - my))
        .sum();
    let slope = sxy / sxx;
    (slope > 0.0).then_some([slope, Q_MIN.ln(), my - slope * mx])
}

/// Least-squares fit of the logarithmic curve from the fixed multi-start
/// set; returns the lowest-RSS result.
pub fn fit_model(samples: &[CalibrationSample]) -> Result<LatencyModel> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_SAMPLES,
            got: samples.len(),
        });
    }
    if let Some(bad) = samples.iter().find(|s| {
        !s.latency_ms.is_finite() || !s.distance_km.is_finite() || s.latency_ms < 0.0 || s.distance_km < 0.0
    }) {
        return Err(Error::InvalidParameter(format!(
            "invalid calibration sample {bad:?}"
        )));
    }
    let mut distinct: Vec<f64> = samples.iter().map(|s| s.latency_ms).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < MIN_SAMPLES {
        return Err(Error::DegenerateSamples(format!(
            "{} distinct latency values, need {MIN_SAMPLES}",
            distinct.len()
        )));
    }

    // Descent is monotone, so a start that ran out of iterations is still
    // no worse than where it began; keep it as a candidate.
    let best = multi_starts(samples)
        .into_iter()
        .filter_map(|(form, s)| levenberg_marquardt(form, s, samples))
        .min_by(|a, b| a.rss.total_cmp(&b.rss))
        .ok_or_else(|| Error::FitFailed("no feasible start".into()))?;
    let (p, q, m) = best.form.to_pqm(&best.theta);
    if !best.converged {
        log::warn!(
            "curve fit stopped at the iteration budget (rss {:.3}, q {q:.4e})",
            best.rss
        );
    }
    Ok(LatencyModel {
        p,
        q,
        n: 1.0,
        m,
        fit_rss: best.rss,
        sample_count: samples.len(),
    })
}

/// Fits one model per landmark from its measurements toward the other
/// landmarks. Each directed measurement is one sample.
pub fn calibrate_all(
    landmarks: &[Landmark],
    measurements: &[Measurement],
    per_hop_ms: f64,
) -> Result<BTreeMap<String, LatencyModel>> {
    let positions: BTreeMap<&str, &Landmark> = landmarks.iter().map(|l| (l.id.as_str(), l)).collect();
    let results: Vec<Result<(String, LatencyModel)>> = landmarks
        .par_iter()
        .map(|lm| {
            let samples: Vec<CalibrationSample> = measurements
                .iter()
                .filter(|m| m.landmark_id == lm.id && m.target_id != lm.id)
                .filter_map(|m| {
                    let peer = positions.get(m.target_id.as_str())?;
                    Some(CalibrationSample {
                        latency_ms: effective_latency(m, per_hop_ms).latency_ms,
                        distance_km: orthodromic_distance(&lm.position(), &peer.position()) / 1000.0,
                    })
                })
                .collect();
            if samples.len() < MIN_SAMPLES {
                return Err(Error::CalibrationData {
                    landmark: lm.id.clone(),
                    reason: format!("{} peer measurements, need {MIN_SAMPLES}", samples.len()),
                });
            }
            let model = fit_model(&samples).map_err(|e| Error::CalibrationData {
                landmark: lm.id.clone(),
                reason: e.to_string(),
            })?;
            Ok((lm.id.clone(), model))
        })
        .collect();
    results.into_iter().collect()
}

/// A landmark's fitted model together with its position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkModel {
    pub landmark_id: String,
    pub lat: f64,
    pub lon: f64,
    #[serde(flatten)]
    pub model: LatencyModel,
}

/// Serialized calibration output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub per_hop_ms: f64,
    pub models: Vec<LandmarkModel>,
}

impl ModelFile {
    pub fn new(landmarks: &[Landmark], models: &BTreeMap<String, LatencyModel>, per_hop_ms: f64) -> Self {
        Self {
            per_hop_ms,
            models: landmarks
                .iter()
                .filter_map(|l| {
                    models.get(&l.id).map(|m| LandmarkModel {
                        landmark_id: l.id.clone(),
                        lat: l.lat,
                        lon: l.lon,
                        model: *m,
                    })
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn meas(rtts: &[f64], hops: u32) -> Measurement {
        Measurement::new("l", "t", hops, rtts.to_vec()).unwrap()
    }

    /// Closed-form ordinary least squares RSS for a straight line.
    fn linear_rss(samples: &[CalibrationSample]) -> f64 {
        let n = samples.len() as f64;
        let mx = samples.iter().map(|s| s.latency_ms).sum::<f64>() / n;
        let my = samples.iter().map(|s| s.distance_km).sum::<f64>() / n;
        let sxx: f64 = samples.iter().map(|s| (s.latency_ms - mx).powi(2)).sum();
        let sxy: f64 = samples
            .iter()
            .map(|s| (s.latency_ms - mx) * (s.distance_km - my))
            .sum();
        let a = sxy / sxx;
        let b = my - a * mx;
        samples
            .iter()
            .map(|s| (s.distance_km - a * s.latency_ms - b).powi(2))
            .sum()
    }

    fn generator_samples() -> Vec<CalibrationSample> {
        let truth = LatencyModel::with_params(100.0, 2.0, 1.0, 10.0);
        (0..20)
            .map(|i| {
                let latency_ms = 1.0 + 99.0 * i as f64 / 19.0;
                CalibrationSample {
                    latency_ms,
                    distance_km: predict_distance(&truth, latency_ms).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn effective_latency_examples() {
        assert_eq!(
            effective_latency(&meas(&[25.0, 20.0, 30.0], 10), 0.1).latency_ms,
            9.0
        );
        let e = effective_latency(&meas(&[2.0], 0), 0.1);
        assert_eq!((e.latency_ms, e.clamped), (1.0, false));
        let e = effective_latency(&meas(&[1.0], 20), 0.1);
        assert_eq!((e.latency_ms, e.clamped), (0.0, true));
        // A larger extra sample never changes the result.
        assert_eq!(
            effective_latency(&meas(&[20.0, 99.0], 3), 0.1),
            effective_latency(&meas(&[20.0], 3), 0.1)
        );
    }

    #[test]
    fn predict_examples() {
        let m = LatencyModel::with_params(100.0, 1.0, 1.0, 0.0);
        assert_eq!(predict_distance(&m, 0.0).unwrap(), 0.0);
        let d = predict_distance(&m, std::f64::consts::E - 1.0).unwrap();
        assert!((d - 100.0).abs() < 1e-9);
        let m2 = LatencyModel::with_params(100.0, 2.0, 1.0, 10.0);
        let expected = 100.0 * 11f64.ln() + 10.0;
        assert!((expected - 249.79).abs() < 0.01);
        assert!((predict_distance(&m2, 5.0).unwrap() - expected).abs() < 1e-9);

        let neg = LatencyModel::with_params(100.0, 1.0, -5.0, 0.0);
        let err = predict_distance(&neg, 2.0).unwrap_err();
        assert!(matches!(err, Error::ModelDomain { latency_ms, .. } if latency_ms == 2.0));
        // Negative predictions clamp to zero.
        let low = LatencyModel::with_params(100.0, 1.0, 0.5, 0.0);
        assert_eq!(predict_distance(&low, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn noiseless_recovery() {
        let samples = generator_samples();
        let model = fit_model(&samples).unwrap();
        assert!(model.fit_rss <= 1e-6 * samples.len() as f64, "{model:?}");
        let rms_true = (samples.iter().map(|s| s.distance_km.powi(2)).sum::<f64>() / 20.0).sqrt();
        let rms_err = (samples
            .iter()
            .map(|s| (predict_distance(&model, s.latency_ms).unwrap() - s.distance_km).powi(2))
            .sum::<f64>()
            / 20.0)
            .sqrt();
        assert!(rms_err <= 0.005 * rms_true);
    }

    #[test]
    fn noisy_recovery_on_held_out_grid() {
        let truth = LatencyModel::with_params(100.0, 2.0, 1.0, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let samples: Vec<_> = generator_samples()
            .into_iter()
            .map(|s| CalibrationSample {
                distance_km: s.distance_km + noise.sample(&mut rng),
                ..s
            })
            .collect();
        let model = fit_model(&samples).unwrap();
        let grid: Vec<f64> = (0..200).map(|i| 1.0 + 99.0 * (i as f64 + 0.5) / 200.0).collect();
        let rms = (grid
            .iter()
            .map(|&x| (predict_distance(&model, x).unwrap() - predict_distance(&truth, x).unwrap()).powi(2))
            .sum::<f64>()
            / grid.len() as f64)
            .sqrt();
        assert!(rms <= 5.0, "{rms}");
    }

    #[test]
    fn fit_preconditions() {
        let s = generator_samples();
        assert!(matches!(
            fit_model(&s[..3]),
            Err(Error::InsufficientSamples { needed: 4, got: 3 })
        ));
        let flat: Vec<_> = s
            .iter()
            .map(|c| CalibrationSample {
                latency_ms: 5.0,
                ..*c
            })
            .collect();
        assert!(matches!(fit_model(&flat), Err(Error::DegenerateSamples(_))));
    }

    #[test]
    fn fit_beats_starts_and_line() {
        // Concave data that is not an exact member of the family.
        let samples: Vec<_> = (1..=15)
            .map(|i| {
                let x = i as f64 * 3.0;
                CalibrationSample {
                    latency_ms: x,
                    distance_km: 180.0 * x.sqrt() + 5.0 * (i % 3) as f64,
                }
            })
            .collect();
        let model = fit_model(&samples).unwrap();
        for (form, s) in multi_starts(&samples) {
            assert!(model.fit_rss <= form.rss(&s, &samples).unwrap());
        }
        assert!(model.fit_rss <= linear_rss(&samples));
        assert_eq!(fit_model(&samples).unwrap(), model);
    }

    #[test]
    fn pure_log_limit_is_reached() {
        let samples: Vec<_> = (1..=20)
            .map(|i| {
                let x = i as f64 * 1.5;
                CalibrationSample {
                    latency_ms: x,
                    distance_km: 300.0 * x.ln() + 50.0,
                }
            })
            .collect();
        let model = fit_model(&samples).unwrap();
        assert!(model.fit_rss <= 1e-6 * samples.len() as f64, "{model:?}");
        for c in &samples {
            let d = predict_distance(&model, c.latency_ms).unwrap();
            assert!((d - c.distance_km).abs() < 1e-3, "{d} vs {}", c.distance_km);
        }
    }

    #[test]
    fn forms_round_trip() {
        for form in [Form::Linear, Form::Log] {
            let theta = form.theta_from_pqm(120.0, 0.3, -7.0);
            let (p, q, m) = form.to_pqm(&theta);
            assert!((p - 120.0).abs() < 1e-9 && (q - 0.3).abs() < 1e-12 && (m + 7.0).abs() < 1e-9);
            for x in [0.0, 0.5, 20.0] {
                let direct = 120.0 * (0.3 * x + 1.0f64).ln() - 7.0;
                assert!((form.eval(&theta, x).0 - direct).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn straight_line_data_is_matched() {
        let samples: Vec<_> = (0..12)
            .map(|i| CalibrationSample {
                latency_ms: 1.0 + 2.5 * i as f64,
                distance_km: 200.0 * (1.0 + 2.5 * i as f64) - 30.0 + if i % 2 == 0 { 4.0 } else { -4.0 },
            })
            .collect();
        let model = fit_model(&samples).unwrap();
        assert!(
            model.fit_rss <= linear_rss(&samples) * (1.0 + 1e-6),
            "{} vs {}",
            model.fit_rss,
            linear_rss(&samples)
        );
    }

    #[test]
    fn calibration_counts_and_errors() {
        let landmarks: Vec<Landmark> = (0..5)
            .map(|i| Landmark {
                id: format!("L{i}"),
                lat: 40.0 + i as f64,
                lon: 2.0 * i as f64 + (i * i) as f64 * 0.3,
            })
            .collect();
        let mut ms = Vec::new();
        for a in &landmarks {
            for b in &landmarks {
                if a.id != b.id {
                    let d = orthodromic_distance(&a.position(), &b.position()) / 1000.0;
                    ms.push(Measurement::new(&a.id, &b.id, 2, vec![2.0 * (d / 150.0 + 0.2) + 0.3]).unwrap());
                }
            }
        }
        let models = calibrate_all(&landmarks, &ms, 0.1).unwrap();
        assert_eq!(models.len(), 5);
        assert!(models.values().all(|m| m.sample_count == 4));

        ms.retain(|m| !(m.landmark_id == "L3" && m.target_id == "L0"));
        let err = calibrate_all(&landmarks, &ms, 0.1).unwrap_err();
        assert!(
            matches!(&err, Error::CalibrationData { landmark, .. } if landmark == "L3"),
            "{err}"
        );
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let ms = vec![
            Measurement::new("a", "b", 3, vec![10.0, 11.5]).unwrap(),
            Measurement::new("a", "c", 0, vec![2.0]).unwrap(),
        ];
        let mut buf = Vec::new();
        Measurement::write_csv(&ms, &mut buf).unwrap();
        assert_eq!(Measurement::read_csv(buf.as_slice()).unwrap(), ms);

        let bad = "a,b,3,10.0\na,c,x,2.0\n";
        let err = Measurement::read_csv(bad.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let bad = "a,b,3,10.0\n\na,c,1,-2.0\n";
        let err = Measurement::read_csv(bad.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let short = "a,b,3\n";
        assert!(Measurement::read_csv(short.as_bytes()).is_err());
    }

    #[test]
    fn predict_monotone_for_positive_params() {
        let m = LatencyModel::with_params(250.0, 0.3, 1.2, -40.0);
        let mut last = 0.0;
        for i in 0..1000 {
            let d = predict_distance(&m, i as f64 * 0.1).unwrap();
            assert!(d >= last);
            last = d;
        }
    }
}
