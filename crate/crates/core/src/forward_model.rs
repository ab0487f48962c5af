//! Predicted single-beam spectra and signal-idler cross-correlations along a
//! cavity sweep.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cavity::{coupling, cross_coupling, CavityParams, CouplingCoefficients, CrossCoefficients, Detuning, Parking};
use crate::covariance::{BeamParams, CovarianceParams};
use crate::error::{Error, Result};

/// Which cavities move during an acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Both cavities swept together with equal normalized detuning.
    Synchronous,
    SignalSweepIdlerParked,
    IdlerSweepSignalParked,
}

impl SweepMode {
    pub const ALL: [SweepMode; 3] = [
        SweepMode::Synchronous,
        SweepMode::SignalSweepIdlerParked,
        SweepMode::IdlerSweepSignalParked,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SweepMode::Synchronous => "synchronous",
            SweepMode::SignalSweepIdlerParked => "signal_sweep",
            SweepMode::IdlerSweepSignalParked => "idler_sweep",
        }
    }

    pub fn sweeps_signal(self) -> bool {
        self != SweepMode::IdlerSweepSignalParked
    }

    pub fn sweeps_idler(self) -> bool {
        self != SweepMode::SignalSweepIdlerParked
    }
}

/// Default sweep: 2001 points over ±8 bandwidths.
pub const DEFAULT_GRID_POINTS: usize = 2001;
pub const DEFAULT_GRID_HALF_WIDTH: f64 = 8.0;

/// Evenly spaced detunings from `lo` to `hi` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<Detuning>> {
    if points < 2 || !(hi > lo) {
        return Err(Error::InvalidConfig(format!(
            "grid needs at least two points and hi > lo (got {points} points on [{lo}, {hi}])"
        )));
    }
    let step = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|k| Detuning::new(if k + 1 == points { hi } else { lo + step * k as f64 }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfiguration {
    pub mode: SweepMode,
    pub omega_hz: f64,
    pub grid: Vec<Detuning>,
    #[serde(default)]
    pub parking: Parking,
    /// Scale the quadrature-mixing coupling terms by each cavity's mode
    /// matching. Off by default.
    #[serde(default)]
    pub apply_mode_matching: bool,
}

impl SweepConfiguration {
    pub fn new(mode: SweepMode, omega_hz: f64, grid: Vec<Detuning>) -> Result<Self> {
        let config = Self {
            mode,
            omega_hz,
            grid,
            parking: Parking::default(),
            apply_mode_matching: false,
        };
        config.validate()?;
        Ok(config)
    }

    /// Default grid at the given analysis frequency.
    pub fn standard(mode: SweepMode, omega_hz: f64) -> Result<Self> {
        let grid = uniform_grid(-DEFAULT_GRID_HALF_WIDTH, DEFAULT_GRID_HALF_WIDTH, DEFAULT_GRID_POINTS)?;
        Self::new(mode, omega_hz, grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_hz > 0.0 && self.omega_hz.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "analysis frequency must be positive, got {}",
                self.omega_hz
            )));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("detuning grid is empty".into()));
        }
        if self.grid.windows(2).any(|w| w[1].value() <= w[0].value()) {
            return Err(Error::InvalidConfig("detuning grid must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Coupling coefficients of both beams at one sweep point.
    pub fn couplings(
        &self,
        signal: &CavityParams,
        idler: &CavityParams,
        delta: Detuning,
    ) -> Result<(CouplingCoefficients, CouplingCoefficients)> {
        let beam = |cavity: &CavityParams, swept: bool| -> Result<CouplingCoefficients> {
            let k = if swept {
                coupling(cavity, delta, self.omega_hz)?
            } else {
                self.parking.coupling(cavity, self.omega_hz)?
            };
            Ok(k)
        };
        Ok((beam(signal, self.mode.sweeps_signal())?, beam(idler, self.mode.sweeps_idler())?))
    }
}

/// Spectral density of one beam reflected off its analysis cavity.
pub fn power_spectrum(beam: &BeamParams, k: &CouplingCoefficients) -> f64 {
    let [a, b, c, d] = spectrum_row(k);
    a * beam.alpha + b * beam.beta + c * beam.gamma + d * beam.delta + k.vacuum_weight()
}

/// Coefficients multiplying `(α, β, γ, δ)` in [`power_spectrum`].
pub fn spectrum_row(k: &CouplingCoefficients) -> [f64; 4] {
    [k.c_alpha, k.c_beta, k.c_gamma, k.c_delta]
}

/// Coefficients multiplying the cross scalars (ordered as
/// [`crate::covariance::Param::CROSS`]) in the real and imaginary parts of the
/// cross-correlation.
pub fn correlation_rows(x: &CrossCoefficients) -> ([f64; 8], [f64; 8]) {
    let re = [x.c_mu, x.c_nu, x.c_kappa, x.c_lambda, x.c_xi, x.c_zeta, x.c_eta, x.c_tau];
    let im = [-x.c_eta, -x.c_tau, x.c_xi, x.c_zeta, -x.c_kappa, -x.c_lambda, x.c_mu, x.c_nu];
    (re, im)
}

fn cross_values(params: &CovarianceParams) -> [f64; 8] {
    [
        params.mu,
        params.nu,
        params.kappa,
        params.lambda,
        params.xi,
        params.zeta,
        params.eta,
        params.tau,
    ]
}

/// Complex signal-idler cross-correlation `⟨I_Ω^(s) I_{−Ω}^(i)⟩`.
pub fn cross_correlation(params: &CovarianceParams, x: &CrossCoefficients) -> Complex64 {
    let (re, im) = correlation_rows(x);
    let values = cross_values(params);
    let dot = |row: [f64; 8]| row.iter().zip(&values).map(|(a, b)| a * b).sum::<f64>();
    Complex64::new(dot(re), dot(im))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPoint {
    pub detuning: f64,
    pub s_signal: f64,
    pub s_idler: f64,
    pub corr_re: f64,
    pub corr_im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTrace {
    pub mode: SweepMode,
    pub omega_hz: f64,
    pub points: Vec<ModelPoint>,
}

pub const MODEL_CSV_HEADER: [&str; 5] = ["detuning", "s_signal", "s_idler", "corr_re", "corr_im"];

impl ModelTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(MODEL_CSV_HEADER).map_err(csv_error)?;
        for p in &self.points {
            w.serialize((p.detuning, p.s_signal, p.s_idler, p.corr_re, p.corr_im))
                .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io.to_string()),
        other => Error::MalformedTrace(format!("{other:?}")),
    }
}

/// Model values at one sweep point, with the couplings already evaluated.
pub fn predict_point(
    params: &CovarianceParams,
    detuning: Detuning,
    signal: &CouplingCoefficients,
    idler: &CouplingCoefficients,
) -> ModelPoint {
    let corr = cross_correlation(params, &cross_coupling(signal, idler));
    ModelPoint {
        detuning: detuning.value(),
        s_signal: power_spectrum(&params.beam(crate::covariance::Beam::Signal), signal),
        s_idler: power_spectrum(&params.beam(crate::covariance::Beam::Idler), idler),
        corr_re: corr.re,
        corr_im: corr.im,
    }
}

/// Couplings of both beams at every grid point, evaluated in parallel.
///
/// When mode matching is applied, the visibility scales the single-beam
/// coefficients only; the returned `g` functions are unscaled.
pub fn sweep_couplings(
    signal_cavity: &CavityParams,
    idler_cavity: &CavityParams,
    config: &SweepConfiguration,
) -> Result<Vec<(CouplingCoefficients, CouplingCoefficients)>> {
    config.validate()?;
    signal_cavity.validate()?;
    idler_cavity.validate()?;
    config
        .grid
        .par_iter()
        .map(|&delta| {
            let (ks, ki) = config.couplings(signal_cavity, idler_cavity, delta)?;
            if config.apply_mode_matching {
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

pub fn predict_trace(
    params: &CovarianceParams,
    signal_cavity: &CavityParams,
    idler_cavity: &CavityParams,
    config: &SweepConfiguration,
) -> Result<ModelTrace> {
    let couplings = sweep_couplings(signal_cavity, idler_cavity, config)?;
    let points = config
        .grid
        .par_iter()
        .zip(couplings.par_iter())
        .map(|(&delta, (ks, ki))| predict_point(params, delta, ks, ki))
        .collect();
    Ok(ModelTrace {
        mode: config.mode,
        omega_hz: config.omega_hz,
        points,
    })
}
