//! Four-mode sideband covariance parameterization and the 8×8 matrix it
//! spans in the symmetric/antisymmetric quadrature basis.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix8 = SMatrix<f64, 8, 8>;

/// Quadrature ordering of [`CovarianceMatrix`] rows and columns.
pub const BASIS: [&str; 8] = [
    "p_sym_signal",
    "q_sym_signal",
    "p_sym_idler",
    "q_sym_idler",
    "p_anti_signal",
    "q_anti_signal",
    "p_anti_idler",
    "q_anti_idler",
];

/// Default tolerance on redundant-entry disagreement in [`disassemble`].
pub const STRUCTURE_TOLERANCE: f64 = 1e-9;

/// Names one of the sixteen covariance scalars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    AlphaS,
    BetaS,
    GammaS,
    DeltaS,
    AlphaI,
    BetaI,
    GammaI,
    DeltaI,
    Mu,
    Nu,
    Kappa,
    Lambda,
    Xi,
    Zeta,
    Eta,
    Tau,
}

impl Param {
    pub const ALL: [Param; 16] = [
        Param::AlphaS,
        Param::BetaS,
        Param::GammaS,
        Param::DeltaS,
        Param::AlphaI,
        Param::BetaI,
        Param::GammaI,
        Param::DeltaI,
        Param::Mu,
        Param::Nu,
        Param::Kappa,
        Param::Lambda,
        Param::Xi,
        Param::Zeta,
        Param::Eta,
        Param::Tau,
    ];

    pub const SIGNAL: [Param; 4] = [Param::AlphaS, Param::BetaS, Param::GammaS, Param::DeltaS];
    pub const IDLER: [Param; 4] = [Param::AlphaI, Param::BetaI, Param::GammaI, Param::DeltaI];
    pub const CROSS: [Param; 8] = [
        Param::Mu,
        Param::Nu,
        Param::Kappa,
        Param::Lambda,
        Param::Xi,
        Param::Zeta,
        Param::Eta,
        Param::Tau,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Param::AlphaS => "alpha_s",
            Param::BetaS => "beta_s",
            Param::GammaS => "gamma_s",
            Param::DeltaS => "delta_s",
            Param::AlphaI => "alpha_i",
            Param::BetaI => "beta_i",
            Param::GammaI => "gamma_i",
            Param::DeltaI => "delta_i",
            Param::Mu => "mu",
            Param::Nu => "nu",
            Param::Kappa => "kappa",
            Param::Lambda => "lambda",
            Param::Xi => "xi",
            Param::Zeta => "zeta",
            Param::Eta => "eta",
            Param::Tau => "tau",
        }
    }

    pub fn beam_params(beam: Beam) -> [Param; 4] {
        match beam {
            Beam::Signal => Self::SIGNAL,
            Beam::Idler => Self::IDLER,
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Param::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter name `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Beam {
    Signal,
    Idler,
}

/// Single-beam parameters `(α, β, γ, δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl BeamParams {
    pub const VACUUM: BeamParams = BeamParams {
        alpha: 1.0,
        beta: 1.0,
        gamma: 0.0,
        delta: 0.0,
    };

    pub fn to_array(self) -> [f64; 4] {
        [self.alpha, self.beta, self.gamma, self.delta]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self {
            alpha: v[0],
            beta: v[1],
            gamma: v[2],
            delta: v[3],
        }
    }
}

/// The sixteen scalars spanning the sideband covariance matrix, in shot-noise
/// units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceParams {
    pub alpha_s: f64,
    pub beta_s: f64,
    pub gamma_s: f64,
    pub delta_s: f64,
    pub alpha_i: f64,
    pub beta_i: f64,
    pub gamma_i: f64,
    pub delta_i: f64,
    pub mu: f64,
    pub nu: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub xi: f64,
    pub zeta: f64,
    pub eta: f64,
    pub tau: f64,
}

impl Default for CovarianceParams {
    fn default() -> Self {
        Self::vacuum()
    }
}

impl CovarianceParams {
    pub fn vacuum() -> Self {
        Self::from_beams(BeamParams::VACUUM, BeamParams::VACUUM, [0.0; 8])
    }

    pub fn zeros() -> Self {
        Self::from_array([0.0; 16])
    }

    /// `cross` follows the order of [`Param::CROSS`].
    pub fn from_beams(signal: BeamParams, idler: BeamParams, cross: [f64; 8]) -> Self {
        let mut v = [0.0; 16];
        v[0..4].copy_from_slice(&signal.to_array());
        v[4..8].copy_from_slice(&idler.to_array());
        v[8..16].copy_from_slice(&cross);
        Self::from_array(v)
    }

    pub fn from_array(v: [f64; 16]) -> Self {
        Self {
            alpha_s: v[0],
            beta_s: v[1],
            gamma_s: v[2],
            delta_s: v[3],
            alpha_i: v[4],
            beta_i: v[5],
            gamma_i: v[6],
            delta_i: v[7],
            mu: v[8],
            nu: v[9],
            kappa: v[10],
            lambda: v[11],
            xi: v[12],
            zeta: v[13],
            eta: v[14],
            tau: v[15],
        }
    }

    pub fn to_array(&self) -> [f64; 16] {
        [
            self.alpha_s,
            self.beta_s,
            self.gamma_s,
            self.delta_s,
            self.alpha_i,
            self.beta_i,
            self.gamma_i,
            self.delta_i,
            self.mu,
            self.nu,
            self.kappa,
            self.lambda,
            self.xi,
            self.zeta,
            self.eta,
            self.tau,
        ]
    }

    pub fn get(&self, p: Param) -> f64 {
        self.to_array()[p.index()]
    }

    pub fn set(&mut self, p: Param, value: f64) {
        let mut v = self.to_array();
        v[p.index()] = value;
        *self = Self::from_array(v);
    }

    pub fn beam(&self, beam: Beam) -> BeamParams {
        match beam {
            Beam::Signal => BeamParams {
                alpha: self.alpha_s,
                beta: self.beta_s,
                gamma: self.gamma_s,
                delta: self.delta_s,
            },
            Beam::Idler => BeamParams {
                alpha: self.alpha_i,
                beta: self.beta_i,
                gamma: self.gamma_i,
                delta: self.delta_i,
            },
        }
    }

    pub fn set_beam(&mut self, beam: Beam, values: BeamParams) {
        for (p, v) in Param::beam_params(beam).into_iter().zip(values.to_array()) {
            self.set(p, v);
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in [Param::AlphaS, Param::BetaS, Param::AlphaI, Param::BetaI] {
            let value = self.get(p);
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::NonPositiveVariance { param: p, value });
            }
        }
        if let Some(p) = Param::ALL.into_iter().find(|&p| !self.get(p).is_finite()) {
            return Err(Error::InvalidConfig(format!("parameter {p} is not finite")));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(Param, f64) -> f64) -> Self {
        let v = self.to_array();
        Self::from_array(std::array::from_fn(|k| f(Param::ALL[k], v[k])))
    }

    /// Exchanges the roles of signal and idler.
    ///
    /// Relabelling the modes permutes the matrix basis; the cross scalars
    /// transform as `ξ ↔ ζ`, `κ → −λ`, `λ → −κ`, `η → −η`, `τ → −τ`.
    pub fn swap_beams(&self) -> Self {
        Self {
            alpha_s: self.alpha_i,
            beta_s: self.beta_i,
            gamma_s: self.gamma_i,
            delta_s: self.delta_i,
            alpha_i: self.alpha_s,
            beta_i: self.beta_s,
            gamma_i: self.gamma_s,
            delta_i: self.delta_s,
            mu: self.mu,
            nu: self.nu,
            kappa: -self.lambda,
            lambda: -self.kappa,
            xi: self.zeta,
            zeta: self.xi,
            eta: -self.eta,
            tau: -self.tau,
        }
    }
}

/// Position of each scalar in the upper triangle, with its sign. Every
/// scalar appears exactly twice.
const LAYOUT: [(usize, usize, Param, f64); 32] = [
    // symmetric block
    (0, 0, Param::AlphaS, 1.0),
    (1, 1, Param::BetaS, 1.0),
    (2, 2, Param::AlphaI, 1.0),
    (3, 3, Param::BetaI, 1.0),
    (0, 1, Param::GammaS, 1.0),
    (2, 3, Param::GammaI, 1.0),
    (0, 2, Param::Mu, 1.0),
    (0, 3, Param::Xi, 1.0),
    (1, 2, Param::Zeta, 1.0),
    (1, 3, Param::Nu, 1.0),
    // antisymmetric block
    (4, 4, Param::BetaS, 1.0),
    (5, 5, Param::AlphaS, 1.0),
    (6, 6, Param::BetaI, 1.0),
    (7, 7, Param::AlphaI, 1.0),
    (4, 5, Param::GammaS, -1.0),
    (6, 7, Param::GammaI, -1.0),
    (4, 6, Param::Nu, 1.0),
    (4, 7, Param::Zeta, -1.0),
    (5, 6, Param::Xi, -1.0),
    (5, 7, Param::Mu, 1.0),
    // symmetric-antisymmetric correlations
    (0, 4, Param::DeltaS, 1.0),
    (1, 5, Param::DeltaS, 1.0),
    (2, 6, Param::DeltaI, 1.0),
    (3, 7, Param::DeltaI, 1.0),
    (0, 6, Param::Kappa, 1.0),
    (0, 7, Param::Eta, -1.0),
    (1, 6, Param::Tau, 1.0),
    (1, 7, Param::Lambda, -1.0),
    (2, 4, Param::Lambda, -1.0),
    (2, 5, Param::Eta, 1.0),
    (3, 4, Param::Tau, -1.0),
    (3, 5, Param::Kappa, 1.0),
];

/// Entries of the correlation block that are identically zero.
const STRUCTURAL_ZEROS: [(usize, usize); 4] = [(0, 5), (1, 4), (2, 7), (3, 6)];

/// Real symmetric 8×8 covariance matrix in the [`BASIS`] ordering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceMatrix(Matrix8);

impl CovarianceMatrix {
    /// Wraps a matrix after checking symmetry to `1e-12`. No structural check
    /// is done; see [`disassemble`].
    pub fn new(m: Matrix8) -> Result<Self> {
        let asym = (m - m.transpose()).amax();
        if asym > 1e-12 {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix8::identity())
    }

    pub fn matrix(&self) -> &Matrix8 {
        &self.0
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_iterator(8, 8, self.0.iter().copied())
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    basis: String,
    entries: Vec<f64>,
}

impl Serialize for CovarianceMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let entries = (0..8).flat_map(|r| (0..8).map(move |c| (r, c))).map(|(r, c)| self.0[(r, c)]);
        MatrixRepr {
            basis: BASIS.join(","),
            entries: entries.collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CovarianceMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = MatrixRepr::deserialize(d)?;
        if repr.basis != BASIS.join(",") {
            return Err(D::Error::custom(format!("unsupported basis `{}`", repr.basis)));
        }
        if repr.entries.len() != 64 {
            return Err(D::Error::custom(format!("expected 64 entries, found {}", repr.entries.len())));
        }
        CovarianceMatrix::new(Matrix8::from_row_slice(&repr.entries)).map_err(D::Error::custom)
    }
}

pub fn assemble(params: &CovarianceParams) -> CovarianceMatrix {
    let mut m = Matrix8::zeros();
    for &(r, c, p, sign) in &LAYOUT {
        let v = sign * params.get(p);
        m[(r, c)] = v;
        m[(c, r)] = v;
    }
    CovarianceMatrix(m)
}

/// Recovers the sixteen scalars by averaging redundant entries. Returns the
/// parameters together with the largest structural residual.
pub fn disassemble_with_tolerance(
    matrix: &CovarianceMatrix,
    tolerance: f64,
) -> Result<(CovarianceParams, f64)> {
    let m = matrix.0;
    let mut sums = [0.0; 16];
    for &(r, c, p, sign) in &LAYOUT {
        sums[p.index()] += sign * m[(r, c)];
    }
    let params = CovarianceParams::from_array(sums.map(|s| s / 2.0));
    let mut residual: f64 = 0.0;
    for &(r, c, p, sign) in &LAYOUT {
        residual = residual.max((sign * m[(r, c)] - params.get(p)).abs());
    }
    for &(r, c) in &STRUCTURAL_ZEROS {
        residual = residual.max(m[(r, c)].abs());
    }
    // symmetric and antisymmetric blocks have no other free entries
    if residual > tolerance {
        return Err(Error::StructureViolation { residual, tolerance });
    }
    Ok((params, residual))
}

pub fn disassemble(matrix: &CovarianceMatrix) -> Result<CovarianceParams> {
    disassemble_with_tolerance(matrix, STRUCTURE_TOLERANCE).map(|(p, _)| p)
}

/// Amplitude and phase quadratures of the upper (`+Ω`) and lower (`−Ω`)
/// sidebands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidebandQuadratures {
    pub p_plus: f64,
    pub q_plus: f64,
    pub p_minus: f64,
    pub q_minus: f64,
}

/// Symmetric and antisymmetric sideband combinations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymAntiQuadratures {
    pub p_sym: f64,
    pub q_sym: f64,
    pub p_anti: f64,
    pub q_anti: f64,
}

pub fn sideband_basis_change(sb: SidebandQuadratures) -> SymAntiQuadratures {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    SymAntiQuadratures {
        p_sym: h * (sb.p_plus + sb.p_minus),
        q_sym: h * (sb.q_plus + sb.q_minus),
        p_anti: h * (sb.p_plus - sb.p_minus),
        q_anti: h * (sb.q_plus - sb.q_minus),
    }
}

/// Inverse of [`sideband_basis_change`]; the transform is its own inverse.
pub fn to_sidebands(sa: SymAntiQuadratures) -> SidebandQuadratures {
    let back = sideband_basis_change(SidebandQuadratures {
        p_plus: sa.p_sym,
        q_plus: sa.q_sym,
        p_minus: sa.p_anti,
        q_minus: sa.q_anti,
    });
    SidebandQuadratures {
        p_plus: back.p_sym,
        q_plus: back.q_sym,
        p_minus: back.p_anti,
        q_minus: back.q_anti,
    }
}

/// In-phase and quadrature demodulator outputs `(I_cos, I_sin)` at
/// demodulation phase `theta`.
pub fn demodulated_components(sa: SymAntiQuadratures, theta: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (c * sa.p_sym + s * sa.q_sym, c * sa.q_anti + s * sa.p_anti)
}
