//! Covariance reconstruction from swept spectra.
//!
//! The model is linear in the covariance scalars once the cavities are
//! fixed, so each stage is a weighted linear least-squares problem solved by
//! SVD: first the single-beam spectra for `(α, β, γ, δ)` of each beam, then
//! all correlation curves jointly for the eight cross scalars. Cavity dip
//! and bandwidth can optionally be co-fitted with the beam parameters, which
//! makes that stage nonlinear; it is then solved with Levenberg-Marquardt.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cavity::{coupling_with_gradient, CavityParams, CouplingCoefficients, Detuning, Parking};
use crate::covariance::{Beam, BeamParams, CovarianceParams, Param};
use crate::error::{Error, Result};
use crate::cavity::cross_coupling;
use crate::forward_model::{
    correlation_rows, cross_correlation, power_spectrum, spectrum_row, ModelTrace, SweepConfiguration, SweepMode,
};
use crate::optimize::{levenberg_marquardt, LmOptions};
use crate::synthesis::{estimator_variances, MeasuredTrace};

/// Detuning below which (in bandwidths) a sweep counts as reaching the
/// resonance.
pub const COVERAGE_HALF_WIDTH: f64 = 2.0;

/// Relative weighted column norm below which a parameter is not constrained.
pub const COLUMN_NORM_THRESHOLD: f64 = 1e-9;

/// Smallest accepted ratio of extreme singular values.
pub const CONDITION_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Spectrum(Beam),
    CorrelationRe,
    CorrelationIm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Normalized to the nominal bandwidth of the swept cavity.
    pub detuning: f64,
    pub value: f64,
    /// Variance of `value`; used as inverse weight.
    pub variance: f64,
}

/// One measured curve with enough context to predict it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub label: String,
    pub quantity: Quantity,
    pub mode: SweepMode,
    pub omega_hz: f64,
    #[serde(default)]
    pub parking: Parking,
    #[serde(default)]
    pub apply_mode_matching: bool,
    pub points: Vec<CurvePoint>,
}

impl Curve {
    fn reaches_resonance(&self, beam: Beam) -> bool {
        let swept = match beam {
            Beam::Signal => self.mode.sweeps_signal(),
            Beam::Idler => self.mode.sweeps_idler(),
        };
        swept && self.points.iter().any(|p| p.detuning.abs() < COVERAGE_HALF_WIDTH)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Inverse of each point's estimated variance.
    #[default]
    InverseVariance,
    /// Every point weighted equally; for external data without error bars.
    Uniform,
}

fn quantity_label(q: Quantity) -> &'static str {
    match q {
        Quantity::Spectrum(Beam::Signal) => "s_signal",
        Quantity::Spectrum(Beam::Idler) => "s_idler",
        Quantity::CorrelationRe => "corr_re",
        Quantity::CorrelationIm => "corr_im",
    }
}

fn make_curves(
    mode: SweepMode,
    omega_hz: f64,
    parking: Parking,
    columns: [Vec<CurvePoint>; 4],
) -> Vec<Curve> {
    let quantities = [
        Quantity::Spectrum(Beam::Signal),
        Quantity::Spectrum(Beam::Idler),
        Quantity::CorrelationRe,
        Quantity::CorrelationIm,
    ];
    quantities
        .into_iter()
        .zip(columns)
        .map(|(quantity, points)| Curve {
            label: format!("{}/{}", mode.label(), quantity_label(quantity)),
            quantity,
            mode,
            omega_hz,
            parking,
            apply_mode_matching: false,
            points,
        })
        .collect()
}

/// The four curves (two spectra, real and imaginary correlation) of a
/// measured trace, with delta-method variances when the sample count is
/// known and unit variances otherwise.
pub fn curves_from_measured(trace: &MeasuredTrace) -> Result<Vec<Curve>> {
    let mut columns: [Vec<CurvePoint>; 4] = Default::default();
    for p in &trace.points {
        let n = crate::synthesis::NormalizedPoint::from_measured(p)?;
        let variances = match trace.metadata.samples_per_point {
            Some(samples) => estimator_variances(p, samples)?,
            None => [1.0; 4],
        };
        let values = [n.s_signal, n.s_idler, n.corr.re, n.corr.im];
        for k in 0..4 {
            columns[k].push(CurvePoint {
                detuning: p.detuning,
                value: values[k],
                variance: variances[k],
            });
        }
    }
    let m = &trace.metadata;
    Ok(make_curves(m.mode, m.omega_hz, m.parking, columns))
}

/// Curves from exact model values, all with unit variance.
pub fn curves_from_model(trace: &ModelTrace, parking: Parking) -> Vec<Curve> {
    let mut columns: [Vec<CurvePoint>; 4] = Default::default();
    for p in &trace.points {
        for (k, value) in [p.s_signal, p.s_idler, p.corr_re, p.corr_im].into_iter().enumerate() {
            columns[k].push(CurvePoint {
                detuning: p.detuning,
                value,
                variance: 1.0,
            });
        }
    }
    make_curves(trace.mode, trace.omega_hz, parking, columns)
}

/// Everything needed for a staged reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitProblem {
    pub curves: Vec<Curve>,
    pub signal_cavity: CavityParams,
    pub idler_cavity: CavityParams,
    /// Parameters held at the given values.
    #[serde(default)]
    pub fixed: BTreeMap<Param, f64>,
    /// Values used for beam parameters in the cross stage when that stage
    /// runs on its own, and for automatically pinned parameters.
    pub initial_guess: CovarianceParams,
    #[serde(default)]
    pub weighting: Weighting,
    /// Co-fit dip and bandwidth of each cavity with the beam parameters.
    #[serde(default)]
    pub fit_cavities: bool,
}

impl FitProblem {
    pub fn new(curves: Vec<Curve>, signal_cavity: CavityParams, idler_cavity: CavityParams) -> Self {
        Self {
            curves,
            signal_cavity,
            idler_cavity,
            fixed: BTreeMap::new(),
            initial_guess: CovarianceParams::vacuum(),
            weighting: Weighting::default(),
            fit_cavities: false,
        }
    }

    pub fn pin(mut self, param: Param, value: f64) -> Self {
        self.fixed.insert(param, value);
        self
    }

    fn cavity(&self, beam: Beam) -> &CavityParams {
        match beam {
            Beam::Signal => &self.signal_cavity,
            Beam::Idler => &self.idler_cavity,
        }
    }

    fn curves_for(&self, select: impl Fn(Quantity) -> bool) -> Vec<&Curve> {
        self.curves.iter().filter(|c| select(c.quantity)).collect()
    }

    fn weight(&self, variance: f64) -> Result<f64> {
        match self.weighting {
            Weighting::Uniform => Ok(1.0),
            Weighting::InverseVariance if variance > 0.0 && variance.is_finite() => Ok(1.0 / variance),
            Weighting::InverseVariance => Err(Error::MalformedTrace(format!(
                "point variance must be positive for weighted fits, got {variance}"
            ))),
        }
    }
}

/// Reconstructed parameters with uncertainties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: CovarianceParams,
    /// Zero for pinned parameters.
    pub std_devs: CovarianceParams,
    /// Square root of the weighted residual sum of squares over all curves
    /// used.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub free: Vec<Param>,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Cavities used for the cross stage; differ from the input only when
    /// co-fitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitted_cavities: Option<FittedCavities>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedCavities {
    pub signal: CavityFit,
    pub idler: CavityFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityFit {
    pub cavity: CavityParams,
    pub std_dip: f64,
    pub std_bandwidth_hz: f64,
}

/// Weighted design of one linear stage: `observed ≈ constant + rows · θ`.
#[derive(Debug, Default)]
struct Design {
    rows: Vec<Vec<f64>>,
    constant: Vec<f64>,
    observed: Vec<f64>,
    weight: Vec<f64>,
}

impl Design {
    fn push(&mut self, row: Vec<f64>, constant: f64, observed: f64, weight: f64) {
        self.rows.push(row);
        self.constant.push(constant);
        self.observed.push(observed);
        self.weight.push(weight);
    }

    fn len(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Debug)]
struct StageSolution {
    values: Vec<f64>,
    std: Vec<f64>,
    chi2: f64,
    free: Vec<Param>,
}

/// Solves one stage. `params` names the design columns; pinned columns move
/// to the right-hand side.
fn solve_stage(design: &Design, params: &[Param], pinned: &BTreeMap<Param, f64>) -> Result<StageSolution> {
    let free: Vec<usize> = (0..params.len()).filter(|&k| !pinned.contains_key(&params[k])).collect();
    let m = design.len();
    let p = free.len();
    let mut values: Vec<f64> = params.iter().map(|q| pinned.get(q).copied().unwrap_or(0.0)).collect();
    if p == 0 {
        let chi2 = stage_chi2(design, &values);
        return Ok(StageSolution {
            std: vec![0.0; params.len()],
            values,
            chi2,
            free: Vec::new(),
        });
    }
    if m <= p {
        return Err(Error::InsufficientCoverage(format!(
            "{m} data points cannot constrain {p} free parameters"
        )));
    }
    let mut a = DMatrix::zeros(m, p);
    let mut b = DVector::zeros(m);
    for i in 0..m {
        let sw = design.weight[i].sqrt();
        let pinned_part: f64 = (0..params.len())
            .filter(|k| !free.contains(k))
            .map(|k| design.rows[i][k] * values[k])
            .sum();
        b[i] = sw * (design.observed[i] - design.constant[i] - pinned_part);
        for (j, &k) in free.iter().enumerate() {
            a[(i, j)] = sw * design.rows[i][k];
        }
    }

    let norms: Vec<f64> = (0..p).map(|j| a.column(j).norm()).collect();
    let largest = norms.iter().cloned().fold(0.0, f64::max);
    let weak: Vec<Param> = free
        .iter()
        .zip(&norms)
        .filter(|(_, &n)| !(n > COLUMN_NORM_THRESHOLD * largest))
        .map(|(&k, _)| params[k])
        .collect();
    if !weak.is_empty() {
        return Err(Error::Unidentifiable(weak));
    }
    for j in 0..p {
        let n = norms[j];
        a.column_mut(j).scale_mut(1.0 / n);
    }

    let svd = a.clone().svd(true, true);
    let sv = &svd.singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    if !(smin > CONDITION_THRESHOLD * smax) {
        let k_min = sv.imin();
        let null = v_t.row(k_min);
        let mut involved: Vec<Param> = (0..p)
            .filter(|&j| null[j].abs() > 0.1)
            .map(|j| params[free[j]])
            .collect();
        involved.sort();
        return Err(Error::Unidentifiable(involved));
    }
    let x = svd.solve(&b, 0.0).map_err(|_| Error::SingularNormalMatrix)?;
    for (j, &k) in free.iter().enumerate() {
        values[k] = x[j] / norms[j];
    }
    let chi2 = stage_chi2(design, &values);
    let scale = chi2 / (m - p) as f64;
    let mut std = vec![0.0; params.len()];
    for (j, &k) in free.iter().enumerate() {
        // diag of (AᵀA)⁻¹ = V Σ⁻² Vᵀ in scaled columns
        let var: f64 = (0..p).map(|s| (v_t[(s, j)] / sv[s]).powi(2)).sum();
        std[k] = (var * scale).sqrt() / norms[j];
    }
    Ok(StageSolution {
        values,
        std,
        chi2,
        free: free.iter().map(|&k| params[k]).collect(),
    })
}

fn stage_chi2(design: &Design, values: &[f64]) -> f64 {
    (0..design.len())
        .map(|i| {
            let pred = design.constant[i] + design.rows[i].iter().zip(values).map(|(a, b)| a * b).sum::<f64>();
            design.weight[i] * (design.observed[i] - pred).powi(2)
        })
        .sum()
}

fn curve_couplings(
    curve: &Curve,
    signal_cavity: &CavityParams,
    idler_cavity: &CavityParams,
) -> Result<Vec<(CouplingCoefficients, CouplingCoefficients)>> {
    // Fits accept points in any order, so the grid is not required to be
    // increasing here.
    let config = SweepConfiguration {
        mode: curve.mode,
        omega_hz: curve.omega_hz,
        grid: vec![Detuning::new(0.0)?],
        parking: curve.parking,
        apply_mode_matching: curve.apply_mode_matching,
    };
    config.validate()?;
    signal_cavity.validate()?;
    idler_cavity.validate()?;
    curve
        .points
        .par_iter()
        .map(|p| {
            let (ks, ki) = config.couplings(signal_cavity, idler_cavity, Detuning::new(p.detuning)?)?;
            if curve.apply_mode_matching {
                Ok((
                    ks.with_visibility(signal_cavity.mode_matching),
                    ki.with_visibility(idler_cavity.mode_matching),
                ))
            } else {
                Ok((ks, ki))
            }
        })
        .collect()
}

fn beam_coupling(pair: &(CouplingCoefficients, CouplingCoefficients), beam: Beam) -> &CouplingCoefficients {
    match beam {
        Beam::Signal => &pair.0,
        Beam::Idler => &pair.1,
    }
}

fn spectrum_design(problem: &FitProblem, beam: Beam, curves: &[&Curve]) -> Result<Design> {
    let mut design = Design::default();
    for curve in curves {
        let couplings = curve_couplings(curve, &problem.signal_cavity, &problem.idler_cavity)?;
        for (point, pair) in curve.points.iter().zip(&couplings) {
            let k = beam_coupling(pair, beam);
            design.push(
                spectrum_row(k).to_vec(),
                k.vacuum_weight(),
                point.value,
                problem.weight(point.variance)?,
            );
        }
    }
    Ok(design)
}

fn correlation_design(problem: &FitProblem, curves: &[&Curve], signal: &CavityParams, idler: &CavityParams) -> Result<Design> {
    let mut design = Design::default();
    for curve in curves {
        let couplings = curve_couplings(curve, signal, idler)?;
        for (point, (ks, ki)) in curve.points.iter().zip(&couplings) {
            let (re, im) = correlation_rows(&cross_coupling(ks, ki));
            let row = if curve.quantity == Quantity::CorrelationRe { re } else { im };
            design.push(row.to_vec(), 0.0, point.value, problem.weight(point.variance)?);
        }
    }
    Ok(design)
}

/// Single-beam result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamFit {
    pub params: BeamParams,
    pub std_devs: BeamParams,
    pub chi2: f64,
    pub points: usize,
    pub free: Vec<Param>,
    pub warnings: Vec<String>,
}

fn check_coverage(curves: &[&Curve], beam: Beam) -> Result<()> {
    if curves.iter().any(|c| c.reaches_resonance(beam)) {
        Ok(())
    } else {
        Err(Error::InsufficientCoverage(format!(
            "no {beam:?} sweep reaches within {COVERAGE_HALF_WIDTH} bandwidths of resonance"
        )))
    }
}

/// Fits `(α, β, γ, δ)` of one beam to its spectrum curves. If `δ` has no
/// leverage on the supplied curves it is held at the initial guess and a
/// warning is returned instead of an error.
pub fn fit_single_beam(problem: &FitProblem, beam: Beam) -> Result<BeamFit> {
    let curves = problem.curves_for(|q| q == Quantity::Spectrum(beam));
    let params = Param::beam_params(beam);
    let mut pinned: BTreeMap<Param, f64> = params
        .iter()
        .filter_map(|p| problem.fixed.get(p).map(|v| (*p, *v)))
        .collect();
    if curves.is_empty() {
        if pinned.len() == 4 {
            let values = params.map(|p| pinned[&p]);
            return Ok(BeamFit {
                params: BeamParams::from_array(values),
                std_devs: BeamParams::from_array([0.0; 4]),
                chi2: 0.0,
                points: 0,
                free: Vec::new(),
                warnings: Vec::new(),
            });
        }
        return Err(Error::InsufficientCoverage(format!("no spectrum curves for the {beam:?} beam")));
    }
    check_coverage(&curves, beam)?;
    let design = spectrum_design(problem, beam, &curves)?;
    let mut warnings = Vec::new();
    let delta = params[3];
    let solution = match solve_stage(&design, &params, &pinned) {
        Err(Error::Unidentifiable(weak)) if weak == [delta] => {
            let guess = problem.initial_guess.get(delta);
            let msg = format!("{delta} has no leverage on the {beam:?} spectra; held at {guess}");
            log::warn!("{msg}");
            warnings.push(msg);
            pinned.insert(delta, guess);
            solve_stage(&design, &params, &pinned)?
        }
        other => other?,
    };
    Ok(BeamFit {
        params: BeamParams::from_array([0, 1, 2, 3].map(|k| solution.values[k])),
        std_devs: BeamParams::from_array([0, 1, 2, 3].map(|k| solution.std[k])),
        chi2: solution.chi2,
        points: design.len(),
        free: solution.free,
        warnings,
    })
}

/// Fits the eight cross scalars to all correlation curves jointly, holding
/// the beam parameters at `problem.initial_guess`.
pub fn fit_cross(problem: &FitProblem) -> Result<FitResult> {
    fit_cross_with(problem, &problem.signal_cavity, &problem.idler_cavity, problem.initial_guess)
}

fn fit_cross_with(
    problem: &FitProblem,
    signal: &CavityParams,
    idler: &CavityParams,
    beams: CovarianceParams,
) -> Result<FitResult> {
    let curves = problem.curves_for(|q| matches!(q, Quantity::CorrelationRe | Quantity::CorrelationIm));
    let pinned: BTreeMap<Param, f64> = Param::CROSS
        .iter()
        .filter_map(|p| problem.fixed.get(p).map(|v| (*p, *v)))
        .collect();
    if curves.is_empty() && pinned.len() < Param::CROSS.len() {
        return Err(Error::InsufficientCoverage("no correlation curves supplied".into()));
    }
    let design = correlation_design(problem, &curves, signal, idler)?;
    let solution = solve_stage(&design, &Param::CROSS, &pinned)?;
    let mut params = beams;
    let mut std_devs = CovarianceParams::zeros();
    for (k, p) in Param::CROSS.into_iter().enumerate() {
        params.set(p, solution.values[k]);
        std_devs.set(p, solution.std[k]);
    }
    Ok(FitResult {
        params,
        std_devs,
        residual_norm: solution.chi2.sqrt(),
        iterations: 1,
        converged: true,
        free: solution.free,
        warnings: Vec::new(),
        fitted_cavities: None,
    })
}

/// Full staged reconstruction: each beam's spectra, then the joint
/// correlation fit.
pub fn fit(problem: &FitProblem) -> Result<FitResult> {
    let mut params = problem.initial_guess;
    for (p, v) in &problem.fixed {
        params.set(*p, *v);
    }
    let mut std_devs = CovarianceParams::zeros();
    let mut chi2 = 0.0;
    let mut iterations = 0;
    let mut free = Vec::new();
    let mut warnings = Vec::new();
    let mut cavities = [problem.signal_cavity, problem.idler_cavity];
    let mut cavity_fits = Vec::new();

    for (slot, beam) in [Beam::Signal, Beam::Idler].into_iter().enumerate() {
        let (beam_fit, its) = if problem.fit_cavities {
            let co = fit_single_beam_with_cavity(problem, beam, &LmOptions::default())?;
            cavities[slot] = co.cavity.cavity;
            cavity_fits.push(co.cavity);
            (co.beam, co.iterations)
        } else {
            (fit_single_beam(problem, beam)?, 1)
        };
        iterations += its;
        chi2 += beam_fit.chi2;
        params.set_beam(beam, beam_fit.params);
        std_devs.set_beam(beam, beam_fit.std_devs);
        free.extend(beam_fit.free);
        warnings.extend(beam_fit.warnings);
    }

    let cross = fit_cross_with(problem, &cavities[0], &cavities[1], params)?;
    for p in Param::CROSS {
        params.set(p, cross.params.get(p));
        std_devs.set(p, cross.std_devs.get(p));
    }
    chi2 += cross.residual_norm.powi(2);
    free.extend(cross.free);
    free.sort();
    Ok(FitResult {
        params,
        std_devs,
        residual_norm: chi2.sqrt(),
        iterations: iterations + cross.iterations,
        converged: true,
        free,
        warnings,
        fitted_cavities: problem.fit_cavities.then(|| FittedCavities {
            signal: cavity_fits[0],
            idler: cavity_fits[1],
        }),
    })
}

/// Standard deviations for `result.params` on `problem`: the diagonal of the
/// inverse weighted normal matrix of each stage scaled by that stage's
/// reduced residual variance. Parameters listed as pinned in the problem get
/// zero.
pub fn estimate_uncertainties(result: &FitResult, problem: &FitProblem) -> Result<CovarianceParams> {
    let mut std_devs = CovarianceParams::zeros();
    let (signal, idler) = match &result.fitted_cavities {
        Some(f) => (f.signal.cavity, f.idler.cavity),
        None => (problem.signal_cavity, problem.idler_cavity),
    };
    let cavity_problem = FitProblem {
        signal_cavity: signal,
        idler_cavity: idler,
        ..problem.clone()
    };
    let mut stages: Vec<(Design, Vec<Param>)> = Vec::new();
    for beam in [Beam::Signal, Beam::Idler] {
        let curves = cavity_problem.curves_for(|q| q == Quantity::Spectrum(beam));
        stages.push((spectrum_design(&cavity_problem, beam, &curves)?, Param::beam_params(beam).to_vec()));
    }
    let curves = cavity_problem.curves_for(|q| matches!(q, Quantity::CorrelationRe | Quantity::CorrelationIm));
    stages.push((correlation_design(&cavity_problem, &curves, &signal, &idler)?, Param::CROSS.to_vec()));

    for (design, params) in stages {
        let free: Vec<Param> = params.iter().copied().filter(|p| result.free.contains(p)).collect();
        if free.is_empty() {
            continue;
        }
        let values: Vec<f64> = params.iter().map(|p| result.params.get(*p)).collect();
        let chi2 = stage_chi2(&design, &values);
        let m = design.len();
        if m <= free.len() {
            return Err(Error::InsufficientCoverage(format!(
                "{m} data points cannot constrain {} free parameters",
                free.len()
            )));
        }
        let cols: Vec<usize> = free.iter().map(|p| params.iter().position(|q| q == p).unwrap()).collect();
        let mut normal = DMatrix::<f64>::zeros(cols.len(), cols.len());
        for i in 0..m {
            for (a, &ca) in cols.iter().enumerate() {
                for (b, &cb) in cols.iter().enumerate() {
                    normal[(a, b)] += design.weight[i] * design.rows[i][ca] * design.rows[i][cb];
                }
            }
        }
        let inverse = normal.try_inverse().ok_or(Error::SingularNormalMatrix)?;
        let scale = chi2 / (m - free.len()) as f64;
        for (a, p) in free.iter().enumerate() {
            let var: f64 = inverse[(a, a)] * scale;
            if !(var >= 0.0) {
                return Err(Error::SingularNormalMatrix);
            }
            std_devs.set(*p, var.sqrt());
        }
    }
    Ok(std_devs)
}

/// Co-fit of one beam's parameters with its cavity's dip and bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityCoFit {
    pub beam: BeamFit,
    pub cavity: CavityFit,
    pub iterations: usize,
    pub converged: bool,
    /// Residual norm after every accepted step.
    pub history: Vec<f64>,
}

fn point_gradient(
    curve: &Curve,
    cavity: &CavityParams,
    nominal_bandwidth: f64,
    beam: Beam,
    detuning: f64,
) -> Result<(CouplingCoefficients, [[f64; 4]; 2])> {
    let swept = match beam {
        Beam::Signal => curve.mode.sweeps_signal(),
        Beam::Idler => curve.mode.sweeps_idler(),
    };
    let hz = if swept {
        Some(detuning * nominal_bandwidth)
    } else {
        match curve.parking {
            Parking::FarDetuned => None,
            Parking::CarrierResonant => Some(0.0),
            Parking::Detuned(d) => Some(d.value() * nominal_bandwidth),
        }
    };
    let Some(hz) = hz else {
        return Ok((CouplingCoefficients::parked(), [[0.0; 4]; 2]));
    };
    let (k, grad) = coupling_with_gradient(cavity, Detuning::from_hz(hz, cavity)?, curve.omega_hz)?;
    let mut d_dip = k.differential(grad.dip.g_plus, grad.dip.g_minus);
    let mut d_bw = k.differential(grad.bandwidth.g_plus, grad.bandwidth.g_minus);
    let mut k = k;
    if curve.apply_mode_matching {
        let v = cavity.mode_matching;
        k = k.with_visibility(v);
        for d in [&mut d_dip, &mut d_bw] {
            d[1] *= v;
            d[2] *= v;
            d[3] *= v;
        }
    }
    Ok((k, [d_dip, d_bw]))
}

/// Co-fits `(α, β, γ, δ, dip, bandwidth)` of one beam by Levenberg-Marquardt,
/// starting from vacuum and the configured cavity. Curve detunings are taken
/// relative to the configured bandwidth, so a bandwidth change rescales
/// them.
pub fn fit_single_beam_with_cavity(problem: &FitProblem, beam: Beam, options: &LmOptions) -> Result<CavityCoFit> {
    let curves = problem.curves_for(|q| q == Quantity::Spectrum(beam));
    if curves.is_empty() {
        return Err(Error::InsufficientCoverage(format!("no spectrum curves for the {beam:?} beam")));
    }
    check_coverage(&curves, beam)?;
    let nominal = *problem.cavity(beam);
    let nominal_bw = nominal.bandwidth;
    let params = Param::beam_params(beam);
    let pinned: Vec<Option<f64>> = params.iter().map(|p| problem.fixed.get(p).copied()).collect();
    let free_idx: Vec<usize> = (0..6).filter(|&k| k >= 4 || pinned[k].is_none()).collect();

    let mut points = Vec::new();
    for curve in &curves {
        for p in &curve.points {
            points.push((*curve, p.detuning, p.value, problem.weight(p.variance)?));
        }
    }
    let m = points.len();
    if m <= free_idx.len() {
        return Err(Error::InsufficientCoverage(format!(
            "{m} data points cannot constrain {} free parameters",
            free_idx.len()
        )));
    }

    let start = [1.0, 1.0, 0.0, 0.0, nominal.dip, 1.0];
    let full = |x: &DVector<f64>| -> [f64; 6] {
        let mut v = start;
        for (k, p) in pinned.iter().enumerate() {
            if let Some(value) = p {
                v[k] = *value;
            }
        }
        for (j, &k) in free_idx.iter().enumerate() {
            v[k] = x[j];
        }
        v
    };
    let cavity_at = |v: &[f64; 6]| -> Result<CavityParams> {
        let bandwidth = v[5] * nominal_bw;
        CavityParams::new(
            nominal.free_spectral_range,
            bandwidth,
            nominal.free_spectral_range / bandwidth,
            v[4],
            nominal.mode_matching,
            nominal.regime,
        )
    };
    let model = |x: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let v = full(x);
        if !(v[4] > 0.0) {
            return Err(Error::InvalidCavity("dip left (0, 1]".into()));
        }
        let cavity = cavity_at(&v)?;
        let beam_params = BeamParams::from_array([v[0], v[1], v[2], v[3]]);
        let mut r = DVector::zeros(m);
        let mut j = DMatrix::zeros(m, free_idx.len());
        for (i, (curve, detuning, value, w)) in points.iter().enumerate() {
            let (k, [d_dip, d_bw]) = point_gradient(curve, &cavity, nominal_bw, beam, *detuning)?;
            let sw = w.sqrt();
            r[i] = sw * (power_spectrum(&beam_params, &k) - value);
            let row = spectrum_row(&k);
            let shifted = [v[0] - 1.0, v[1] - 1.0, v[2], v[3]];
            let cav = |d: [f64; 4]| d.iter().zip(&shifted).map(|(a, b)| a * b).sum::<f64>();
            let derivs = [row[0], row[1], row[2], row[3], cav(d_dip), cav(d_bw) * nominal_bw];
            for (col, &k) in free_idx.iter().enumerate() {
                j[(i, col)] = sw * derivs[k];
            }
        }
        Ok((r, j))
    };

    let x0 = DVector::from_iterator(free_idx.len(), free_idx.iter().map(|&k| start[k]));
    let report = levenberg_marquardt(x0, model, options)?;
    if !report.converged {
        return Err(Error::NonConvergence {
            iterations: report.iterations,
            residual_norm: report.residual_norm,
        });
    }
    let v = full(&report.x);
    let cavity = cavity_at(&v)?;
    let chi2 = report.residual_norm.powi(2);
    let normal = report.jacobian.transpose() * &report.jacobian;
    let inverse = normal.try_inverse().ok_or(Error::SingularNormalMatrix)?;
    let scale = chi2 / (m - free_idx.len()) as f64;
    let mut std = [0.0; 6];
    for (j, &k) in free_idx.iter().enumerate() {
        std[k] = (inverse[(j, j)] * scale).max(0.0).sqrt();
    }
    Ok(CavityCoFit {
        beam: BeamFit {
            params: BeamParams::from_array([v[0], v[1], v[2], v[3]]),
            std_devs: BeamParams::from_array([std[0], std[1], std[2], std[3]]),
            chi2,
            points: m,
            free: free_idx.iter().filter(|&&k| k < 4).map(|&k| params[k]).collect(),
            warnings: Vec::new(),
        },
        cavity: CavityFit {
            cavity,
            std_dip: std[4],
            std_bandwidth_hz: std[5] * nominal_bw,
        },
        iterations: report.iterations,
        converged: report.converged,
        history: report.history,
    })
}

/// One row of the post-fit residual table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub curve: String,
    pub detuning: f64,
    pub observed: f64,
    pub predicted: f64,
    pub sigma: f64,
}

/// Model predictions against every curve point.
pub fn residuals(problem: &FitProblem, result: &FitResult) -> Result<Vec<ResidualRow>> {
    let (signal, idler) = match &result.fitted_cavities {
        Some(f) => (f.signal.cavity, f.idler.cavity),
        None => (problem.signal_cavity, problem.idler_cavity),
    };
    let mut rows = Vec::new();
    for curve in &problem.curves {
        let couplings = curve_couplings(curve, &signal, &idler)?;
        for (point, (ks, ki)) in curve.points.iter().zip(&couplings) {
            let predicted = match curve.quantity {
                Quantity::Spectrum(Beam::Signal) => power_spectrum(&result.params.beam(Beam::Signal), ks),
                Quantity::Spectrum(Beam::Idler) => power_spectrum(&result.params.beam(Beam::Idler), ki),
                Quantity::CorrelationRe | Quantity::CorrelationIm => {
                    let c: Complex64 = cross_correlation(&result.params, &cross_coupling(ks, ki));
                    if curve.quantity == Quantity::CorrelationRe {
                        c.re
                    } else {
                        c.im
                    }
                }
            };
            rows.push(ResidualRow {
                curve: curve.label.clone(),
                detuning: point.detuning,
                observed: point.value,
                predicted,
                sigma: point.variance.sqrt(),
            });
        }
    }
    Ok(rows)
}
