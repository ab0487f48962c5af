//! Synthetic balanced-detection data: photocurrent sum/difference variances
//! with electronic noise, gain imbalance and finite averaging, plus the
//! estimators that turn them back into shot-noise-normalized spectra.

use std::io::{Read, Write};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cavity::{CavityParams, Detuning, Parking};
use crate::covariance::CovarianceParams;
use crate::error::{Error, Result};
use crate::forward_model::{csv_error, predict_point, sweep_couplings, ModelPoint, SweepConfiguration, SweepMode};

/// Settings of the detection chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    /// Electronic-noise variance of the signal detector pair (sum of both
    /// detectors), in raw units.
    pub electronic_noise_s: f64,
    pub electronic_noise_i: f64,
    /// Relative gain error of the second detector in each pair.
    #[serde(default)]
    pub gain_imbalance: f64,
    /// Rescale the second detector by the measured DC ratio before
    /// forming sums and differences.
    #[serde(default = "default_true")]
    pub gain_matching: bool,
    pub samples_per_point: usize,
    pub rng_seed: u64,
    /// Shot-noise variance in raw units.
    #[serde(default = "default_raw_gain")]
    pub raw_gain: f64,
}

fn default_true() -> bool {
    true
}

fn default_raw_gain() -> f64 {
    1.0
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self {
            electronic_noise_s: 0.0,
            electronic_noise_i: 0.0,
            gain_imbalance: 0.0,
            gain_matching: true,
            samples_per_point: 1000,
            rng_seed: 0,
            raw_gain: 1.0,
        }
    }
}

impl DetectionParams {
    pub fn validate(&self) -> Result<()> {
        let e_ok = |e: f64| e >= 0.0 && e.is_finite();
        if !e_ok(self.electronic_noise_s) || !e_ok(self.electronic_noise_i) {
            return Err(Error::InvalidConfig("electronic noise must be non-negative".into()));
        }
        if self.samples_per_point == 0 {
            return Err(Error::InvalidConfig("samples_per_point must be at least 1".into()));
        }
        if !(self.raw_gain > 0.0 && self.raw_gain.is_finite()) {
            return Err(Error::InvalidConfig("raw_gain must be positive".into()));
        }
        if !(self.gain_imbalance > -1.0 && self.gain_imbalance.is_finite()) {
            return Err(Error::InvalidConfig("gain_imbalance must exceed -1".into()));
        }
        Ok(())
    }
}

/// Raw second moments at one sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredPoint {
    pub detuning: f64,
    pub v_sum_s: f64,
    pub v_diff_s: f64,
    pub v_sum_i: f64,
    pub v_diff_i: f64,
    pub corr_re_raw: f64,
    pub corr_im_raw: f64,
    pub e_s: f64,
    pub e_i: f64,
}

/// Generation metadata written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub mode: SweepMode,
    pub omega_hz: f64,
    #[serde(default)]
    pub parking: Parking,
    /// `None` for external data; weights then default to unit variance.
    pub samples_per_point: Option<usize>,
    pub rng_seed: Option<u64>,
    #[serde(default)]
    pub noiseless: bool,
    pub detection: Option<DetectionParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredTrace {
    pub metadata: TraceMetadata,
    pub points: Vec<MeasuredPoint>,
}

pub const MEASURED_CSV_HEADER: [&str; 9] = [
    "detuning",
    "v_sum_s",
    "v_diff_s",
    "v_sum_i",
    "v_diff_i",
    "corr_re_raw",
    "corr_im_raw",
    "e_s",
    "e_i",
];

impl MeasuredTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(MEASURED_CSV_HEADER).map_err(csv_error)?;
        for p in &self.points {
            w.serialize((
                p.detuning,
                p.v_sum_s,
                p.v_diff_s,
                p.v_sum_i,
                p.v_diff_i,
                p.corr_re_raw,
                p.corr_im_raw,
                p.e_s,
                p.e_i,
            ))
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, metadata: TraceMetadata) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers().map_err(csv_error)?.clone();
        if header.iter().ne(MEASURED_CSV_HEADER) {
            return Err(Error::MalformedTrace(format!(
                "expected header `{}`, found `{}`",
                MEASURED_CSV_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let points = r
            .deserialize::<MeasuredPoint>()
            .map(|row| row.map_err(csv_error))
            .collect::<Result<Vec<_>>>()?;
        if points.is_empty() {
            return Err(Error::MalformedTrace("trace has no data rows".into()));
        }
        if points.windows(2).any(|w| w[1].detuning <= w[0].detuning) {
            return Err(Error::MalformedTrace("detunings must be strictly increasing".into()));
        }
        Ok(Self { metadata, points })
    }

    pub fn grid(&self) -> Result<Vec<Detuning>> {
        self.points.iter().map(|p| Detuning::new(p.detuning)).collect()
    }

    /// Shot-noise-normalized spectra and correlation at every point.
    pub fn normalized(&self) -> Result<Vec<NormalizedPoint>> {
        self.points.iter().map(NormalizedPoint::from_measured).collect()
    }
}

/// Sum and difference photocurrent variances of a balanced pair for a beam
/// of the given power: the sum carries the quadrature noise, the difference
/// the vacuum reference.
pub fn balanced_split(mean_field_power: f64, quadrature_variance: f64, vacuum_variance: f64) -> (f64, f64) {
    (mean_field_power * quadrature_variance, mean_field_power * vacuum_variance)
}

/// Quadrature variance in shot-noise units from sum/difference variances,
/// with both detectors' electronic noise removed.
pub fn normalized_noise(sum_variance: f64, diff_variance: f64, e_1: f64, e_2: f64) -> Result<f64> {
    let shot = diff_variance - e_1 - e_2;
    if !(shot > 0.0) {
        return Err(Error::NonPositiveShotNoise(shot));
    }
    Ok((sum_variance - e_1 - e_2) / shot)
}

/// [`normalized_noise`] from raw zero-mean detector records.
pub fn normalized_noise_from_series(v_1: &[f64], v_2: &[f64], e_1: f64, e_2: f64) -> Result<f64> {
    if v_1.len() != v_2.len() || v_1.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: v_1.len().max(1),
            found: v_2.len(),
        });
    }
    let n = v_1.len() as f64;
    let sum = v_1.iter().zip(v_2).map(|(a, b)| (a + b) * (a + b)).sum::<f64>() / n;
    let diff = v_1.iter().zip(v_2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    normalized_noise(sum, diff, e_1, e_2)
}

/// Normalized estimates at one sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPoint {
    pub detuning: f64,
    pub s_signal: f64,
    pub s_idler: f64,
    pub corr: Complex64,
    /// Shot-noise references after electronic-noise subtraction.
    pub shot_s: f64,
    pub shot_i: f64,
}

impl NormalizedPoint {
    pub fn from_measured(p: &MeasuredPoint) -> Result<Self> {
        let s_signal = normalized_noise(p.v_sum_s, p.v_diff_s, p.e_s, 0.0)?;
        let s_idler = normalized_noise(p.v_sum_i, p.v_diff_i, p.e_i, 0.0)?;
        let shot_s = p.v_diff_s - p.e_s;
        let shot_i = p.v_diff_i - p.e_i;
        // Electronic noise of distinct detector pairs is uncorrelated, so the
        // raw cross moment needs no subtraction.
        let corr = Complex64::new(p.corr_re_raw, p.corr_im_raw) / (shot_s * shot_i).sqrt();
        Ok(Self {
            detuning: p.detuning,
            s_signal,
            s_idler,
            corr,
            shot_s,
            shot_i,
        })
    }
}

/// Joint-quadrature variances `(Δ²x₊, Δ²x₋)` of the sum and difference
/// subspaces.
pub fn epr_combination(p: &MeasuredPoint) -> Result<(f64, f64)> {
    let n = NormalizedPoint::from_measured(p)?;
    let mean = 0.5 * (n.s_signal + n.s_idler);
    Ok((mean + n.corr.re, mean - n.corr.re))
}

/// Expected raw moments at one point; no sampling noise.
fn expected_point(model: &ModelPoint, detection: &DetectionParams) -> MeasuredPoint {
    let g = detection.raw_gain;
    MeasuredPoint {
        detuning: model.detuning,
        v_sum_s: g * model.s_signal + detection.electronic_noise_s,
        v_diff_s: g + detection.electronic_noise_s,
        v_sum_i: g * model.s_idler + detection.electronic_noise_i,
        v_diff_i: g + detection.electronic_noise_i,
        corr_re_raw: g * model.corr_re,
        corr_im_raw: g * model.corr_im,
        e_s: detection.electronic_noise_s,
        e_i: detection.electronic_noise_i,
    }
}

/// Tolerance on `|Q|² ≤ S_s S_i` before a point is declared unphysical.
const CAUCHY_SCHWARZ_SLACK: f64 = 1e-9;

/// Draws `n` samples of the demodulated photocurrents at one point and
/// forms their empirical second moments.
fn sample_point(model: &ModelPoint, detection: &DetectionParams, rng: &mut ChaCha8Rng) -> Result<MeasuredPoint> {
    let (ss, si) = (model.s_signal, model.s_idler);
    let q = Complex64::new(model.corr_re, model.corr_im);
    let residual = si - q.norm_sqr() / ss;
    if !(ss > 0.0) || residual < -CAUCHY_SCHWARZ_SLACK * si.abs().max(1.0) {
        return Err(Error::InvalidConfig(format!(
            "state is unphysical at detuning {}: spectra ({ss}, {si}) cannot carry correlation {q}",
            model.detuning
        )));
    }
    let root_s = ss.sqrt();
    let root_res = residual.max(0.0).sqrt();
    let half_gain = detection.raw_gain.sqrt() / 2.0;
    let g2 = 1.0 + detection.gain_imbalance;
    let rescale = if detection.gain_matching { 1.0 / g2 } else { 1.0 };
    let sd_e_s = (detection.electronic_noise_s / 2.0).sqrt();
    let sd_e_i = (detection.electronic_noise_i / 2.0).sqrt();

    let mut acc = [0.0f64; 6];
    let mut cross = Complex64::new(0.0, 0.0);
    let mut z = [0.0f64; 16];
    for _ in 0..detection.samples_per_point {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        // optical quadrature noise of the cos/sin demodulator outputs
        let c_s = root_s * z[0];
        let s_s = root_s * z[1];
        let c_i = (q.re * z[0] + q.im * z[1]) / root_s + root_res * z[2];
        let s_i = (-q.im * z[0] + q.re * z[1]) / root_s + root_res * z[3];
        let vacuum = [z[4], z[5], z[6], z[7]];
        let elec = |k: usize, sd: f64| sd * z[8 + k];

        // two detectors per beam, each demodulated into cos and sin
        let pair = |x: f64, v: f64, e1: f64, e2: f64| {
            let d1 = half_gain * (x + v) + e1;
            let d2 = rescale * g2 * (half_gain * (x - v) + e2);
            (d1 + d2, d1 - d2)
        };
        let (sum_cs, diff_cs) = pair(c_s, vacuum[0], elec(0, sd_e_s), elec(1, sd_e_s));
        let (sum_ss, diff_ss) = pair(s_s, vacuum[1], elec(2, sd_e_s), elec(3, sd_e_s));
        let (sum_ci, diff_ci) = pair(c_i, vacuum[2], elec(4, sd_e_i), elec(5, sd_e_i));
        let (sum_si, diff_si) = pair(s_i, vacuum[3], elec(6, sd_e_i), elec(7, sd_e_i));

        acc[0] += 0.5 * (sum_cs * sum_cs + sum_ss * sum_ss);
        acc[1] += 0.5 * (diff_cs * diff_cs + diff_ss * diff_ss);
        acc[2] += 0.5 * (sum_ci * sum_ci + sum_si * sum_si);
        acc[3] += 0.5 * (diff_ci * diff_ci + diff_si * diff_si);
        cross += 0.5 * Complex64::new(sum_cs, sum_ss) * Complex64::new(sum_ci, -sum_si);
    }
    let n = detection.samples_per_point as f64;
    Ok(MeasuredPoint {
        detuning: model.detuning,
        v_sum_s: acc[0] / n,
        v_diff_s: acc[1] / n,
        v_sum_i: acc[2] / n,
        v_diff_i: acc[3] / n,
        corr_re_raw: cross.re / n,
        corr_im_raw: cross.im / n,
        e_s: detection.electronic_noise_s,
        e_i: detection.electronic_noise_i,
    })
}

fn model_points(
    params: &CovarianceParams,
    signal_cavity: &CavityParams,
    idler_cavity: &CavityParams,
    config: &SweepConfiguration,
) -> Result<Vec<ModelPoint>> {
    let couplings = sweep_couplings(signal_cavity, idler_cavity, config)?;
    Ok(config
        .grid
        .iter()
        .zip(&couplings)
        .map(|(&d, (ks, ki))| predict_point(params, d, ks, ki))
        .collect())
}

fn metadata(config: &SweepConfiguration, detection: &DetectionParams, noiseless: bool) -> TraceMetadata {
    TraceMetadata {
        mode: config.mode,
        omega_hz: config.omega_hz,
        parking: config.parking,
        samples_per_point: Some(detection.samples_per_point),
        rng_seed: (!noiseless).then_some(detection.rng_seed),
        noiseless,
        detection: Some(*detection),
    }
}

/// Monte Carlo dataset. Each grid point draws from its own ChaCha stream
/// keyed by the seed and the point index, so the output does not depend on
/// thread scheduling.
pub fn generate_dataset(
    params: &CovarianceParams,
    signal_cavity: &CavityParams,
    idler_cavity: &CavityParams,
    config: &SweepConfiguration,
    detection: &DetectionParams,
) -> Result<MeasuredTrace> {
    detection.validate()?;
    let models = model_points(params, signal_cavity, idler_cavity, config)?;
    let points = models
        .par_iter()
        .enumerate()
        .map(|(index, model)| {
            let mut rng = ChaCha8Rng::seed_from_u64(detection.rng_seed);
            rng.set_stream(index as u64);
            sample_point(model, detection, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MeasuredTrace {
        metadata: metadata(config, detection, false),
        points,
    })
}

/// Expectation values of the raw moments, i.e. the infinite-average limit
/// of [`generate_dataset`].
pub fn expected_dataset(
    params: &CovarianceParams,
    signal_cavity: &CavityParams,
    idler_cavity: &CavityParams,
    config: &SweepConfiguration,
    detection: &DetectionParams,
) -> Result<MeasuredTrace> {
    detection.validate()?;
    let points = model_points(params, signal_cavity, idler_cavity, config)?
        .iter()
        .map(|m| expected_point(m, detection))
        .collect();
    Ok(MeasuredTrace {
        metadata: metadata(config, detection, true),
        points,
    })
}

/// Delta-method variances of the normalized estimators at one point for `n`
/// averaged samples: `[s_signal, s_idler, corr_re, corr_im]`.
pub fn estimator_variances(p: &MeasuredPoint, n: usize) -> Result<[f64; 4]> {
    let np = NormalizedPoint::from_measured(p)?;
    let n = n as f64;
    let spectrum = |sum: f64, diff: f64, shot: f64, s: f64| (sum * sum + s * s * diff * diff) / (n * shot * shot);
    let var_s = spectrum(p.v_sum_s, p.v_diff_s, np.shot_s, np.s_signal);
    let var_i = spectrum(p.v_sum_i, p.v_diff_i, np.shot_i, np.s_idler);
    let (qr, qi) = (p.corr_re_raw, p.corr_im_raw);
    let aa = p.v_sum_s * p.v_sum_i;
    let scale = np.shot_s * np.shot_i;
    let denominators = (p.v_diff_s / np.shot_s).powi(2) + (p.v_diff_i / np.shot_i).powi(2);
    let var_re = 0.5 * (aa + qr * qr - qi * qi) / (n * scale) + 0.25 * np.corr.re.powi(2) * denominators / n;
    let var_im = 0.5 * (aa - qr * qr + qi * qi) / (n * scale) + 0.25 * np.corr.im.powi(2) * denominators / n;
    Ok([var_s, var_i, var_re, var_im])
}
