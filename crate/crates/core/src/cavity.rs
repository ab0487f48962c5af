//! Analysis-cavity reflection model and the detuning-dependent coupling
//! coefficients that weight covariance elements in the measured spectra.
//!
//! Detunings are expressed in units of the cavity bandwidth everywhere in this
//! module. The analysis frequency is passed in Hz and divided by the bandwidth
//! internally.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Sign of the on-resonance reflection relative to the off-resonance value.
///
/// An undercoupled cavity reflects `r(0) = -sqrt(d)` (same sign as far off
/// resonance), an overcoupled one `r(0) = +sqrt(d)`, which flips the carrier
/// phase by π as the cavity is swept through resonance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingRegime {
    #[default]
    Undercoupled,
    Overcoupled,
}

impl CouplingRegime {
    fn root_sign(self) -> f64 {
        match self {
            CouplingRegime::Undercoupled => 1.0,
            CouplingRegime::Overcoupled => -1.0,
        }
    }
}

/// Measured properties of one analysis cavity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityParams {
    #[serde(rename = "fsr_hz")]
    pub free_spectral_range: f64,
    #[serde(rename = "bandwidth_hz")]
    pub bandwidth: f64,
    pub finesse: f64,
    /// On-resonance reflected power fraction, `|r(0)|^2`.
    pub dip: f64,
    pub mode_matching: f64,
    #[serde(default)]
    pub regime: CouplingRegime,
}

/// Relative tolerance on `finesse * bandwidth == free_spectral_range`.
pub const FINESSE_TOLERANCE: f64 = 0.01;

impl CavityParams {
    pub fn new(
        free_spectral_range: f64,
        bandwidth: f64,
        finesse: f64,
        dip: f64,
        mode_matching: f64,
        regime: CouplingRegime,
    ) -> Result<Self> {
        let params = Self {
            free_spectral_range,
            bandwidth,
            finesse,
            dip,
            mode_matching,
            regime,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.free_spectral_range) || !positive(self.bandwidth) {
            return Err(Error::InvalidCavity(
                "bandwidth and free spectral range must be positive and finite".into(),
            ));
        }
        if !positive(self.finesse) {
            return Err(Error::InvalidCavity(format!(
                "finesse must be positive, got {}",
                self.finesse
            )));
        }
        if !(0.0..=1.0).contains(&self.dip) {
            return Err(Error::InvalidCavity(format!(
                "dip must lie in [0, 1], got {}",
                self.dip
            )));
        }
        if !(self.mode_matching > 0.0 && self.mode_matching <= 1.0) {
            return Err(Error::InvalidCavity(format!(
                "mode matching must lie in (0, 1], got {}",
                self.mode_matching
            )));
        }
        let ratio = self.free_spectral_range / self.bandwidth;
        if ((self.finesse - ratio) / ratio).abs() > FINESSE_TOLERANCE {
            return Err(Error::InvalidCavity(format!(
                "finesse {} inconsistent with fsr/bandwidth = {ratio:.2}",
                self.finesse
            )));
        }
        Ok(())
    }

    /// Analysis frequency in units of this cavity's bandwidth.
    pub fn normalized_frequency(&self, omega_hz: f64) -> f64 {
        omega_hz / self.bandwidth
    }
}

/// Cavity detuning in units of the cavity bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Detuning(f64);

impl Detuning {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() {
            Ok(Self(value))
        } else {
            Err(Error::InvalidDetuning(value))
        }
    }

    /// Converts a detuning in Hz using the cavity bandwidth.
    pub fn from_hz(detuning_hz: f64, cavity: &CavityParams) -> Result<Self> {
        Self::new(detuning_hz / cavity.bandwidth)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

fn reflection_at(dip: f64, regime: CouplingRegime, x: f64) -> Complex64 {
    let root = Complex64::from(regime.root_sign() * dip.sqrt());
    let two_ix = I * (2.0 * x);
    -(root - two_ix) / (Complex64::from(1.0) - two_ix)
}

/// Complex field reflection `r(Δ)` of a high-finesse cavity.
pub fn reflection(params: &CavityParams, delta: Detuning) -> Complex64 {
    reflection_at(params.dip, params.regime, delta.value())
}

/// Carrier phase reference `r*(Δ)/|r(Δ)|`.
fn phase_reference(params: &CavityParams, x: f64) -> Result<(Complex64, Complex64)> {
    let r0 = reflection_at(params.dip, params.regime, x);
    let modulus = r0.norm();
    if !modulus.is_normal() {
        return Err(Error::DegeneratePhase { detuning: x });
    }
    Ok((r0, r0.conj() / modulus))
}

/// Sideband reflection referenced to the reflected carrier phase,
/// `R(Δ, Ω) = r*(Δ)/|r(Δ)| · r(Δ + Ω/Δ_BW)`.
///
/// `omega_hz` may be negative to address the lower sideband.
pub fn sideband_reflection(params: &CavityParams, delta: Detuning, omega_hz: f64) -> Result<Complex64> {
    let x = delta.value();
    let (_, phase) = phase_reference(params, x)?;
    let shifted = x + params.normalized_frequency(omega_hz);
    Ok(phase * reflection_at(params.dip, params.regime, shifted))
}

/// Single-beam coupling coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingCoefficients {
    pub g_plus: Complex64,
    pub g_minus: Complex64,
    pub c_alpha: f64,
    pub c_beta: f64,
    pub c_gamma: f64,
    pub c_delta: f64,
}

impl CouplingCoefficients {
    pub fn from_g(g_plus: Complex64, g_minus: Complex64) -> Self {
        let mixed = g_plus.conj() * g_minus;
        Self {
            g_plus,
            g_minus,
            c_alpha: g_plus.norm_sqr(),
            c_beta: g_minus.norm_sqr(),
            c_gamma: 2.0 * mixed.re,
            c_delta: 2.0 * mixed.im,
        }
    }

    /// Exact far-detuned limit: the cavity does not touch the beam.
    pub fn parked() -> Self {
        Self::from_g(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0))
    }

    /// Weight of the vacuum admitted through cavity losses.
    pub fn vacuum_weight(&self) -> f64 {
        1.0 - self.c_alpha - self.c_beta
    }

    /// Scales the quadrature-mixing terms by a mode-matching visibility.
    ///
    /// This is a phenomenological option; the scaled coefficients no longer
    /// satisfy `c_gamma² + c_delta² = 4 c_alpha c_beta`.
    pub fn with_visibility(mut self, visibility: f64) -> Self {
        self.c_beta *= visibility;
        self.c_gamma *= visibility;
        self.c_delta *= visibility;
        self
    }

    /// First-order change of `[c_alpha, c_beta, c_gamma, c_delta]` for a
    /// perturbation `(dg_plus, dg_minus)` of the underlying `g` functions.
    pub fn differential(&self, dg_plus: Complex64, dg_minus: Complex64) -> [f64; 4] {
        let dmixed = dg_plus.conj() * self.g_minus + self.g_plus.conj() * dg_minus;
        [
            2.0 * (self.g_plus.conj() * dg_plus).re,
            2.0 * (self.g_minus.conj() * dg_minus).re,
            2.0 * dmixed.re,
            2.0 * dmixed.im,
        ]
    }
}

fn g_functions(upper: Complex64, lower: Complex64) -> (Complex64, Complex64) {
    let lower_conj = lower.conj();
    ((upper + lower_conj) / 2.0, I * (upper - lower_conj) / 2.0)
}

/// Coupling coefficients of a beam reflected off a cavity at detuning `delta`.
pub fn coupling(params: &CavityParams, delta: Detuning, omega_hz: f64) -> Result<CouplingCoefficients> {
    let upper = sideband_reflection(params, delta, omega_hz)?;
    let lower = sideband_reflection(params, delta, -omega_hz)?;
    let (g_plus, g_minus) = g_functions(upper, lower);
    Ok(CouplingCoefficients::from_g(g_plus, g_minus))
}

/// Derivatives of `(g_plus, g_minus)` with respect to one cavity parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GDerivative {
    pub g_plus: Complex64,
    pub g_minus: Complex64,
}

/// Sensitivity of the coupling to the dip and to the bandwidth.
///
/// The bandwidth derivative holds the detuning in Hz fixed, so the
/// normalized detuning moves as `Δ ∝ 1/Δ_BW`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingGradient {
    pub dip: GDerivative,
    pub bandwidth: GDerivative,
}

/// Coupling coefficients together with their analytic cavity-parameter
/// derivatives. Requires `dip > 0`.
pub fn coupling_with_gradient(
    params: &CavityParams,
    delta: Detuning,
    omega_hz: f64,
) -> Result<(CouplingCoefficients, CouplingGradient)> {
    if params.dip <= 0.0 {
        return Err(Error::InvalidCavity(
            "dip derivative undefined at dip = 0".into(),
        ));
    }
    let x0 = delta.value();
    let w = params.normalized_frequency(omega_hz);
    let xs = [x0, x0 + w, x0 - w];
    let (r0, phase) = phase_reference(params, x0)?;
    let modulus = r0.norm();
    let refl = xs.map(|x| reflection_at(params.dip, params.regime, x));

    let sign = params.regime.root_sign();
    let root = params.dip.sqrt();
    let dr_ddip = |x: f64| -Complex64::from(sign / (2.0 * root)) / (Complex64::from(1.0) - I * (2.0 * x));
    let dr_dx = |x: f64| {
        let den = Complex64::from(1.0) - I * (2.0 * x);
        I * (2.0 * (1.0 - sign * root)) / (den * den)
    };
    let bw = params.bandwidth;
    let d_by_dip = xs.map(dr_ddip);
    let d_by_bw = xs.map(|x| dr_dx(x) * (-x / bw));

    let derive = |dr: [Complex64; 3]| {
        let dmod = (r0.conj() * dr[0]).re / modulus;
        let dphase = dr[0].conj() / modulus - r0.conj() * dmod / (modulus * modulus);
        let d_upper = dphase * refl[1] + phase * dr[1];
        let d_lower = dphase * refl[2] + phase * dr[2];
        let (g_plus, g_minus) = g_functions(d_upper, d_lower);
        GDerivative { g_plus, g_minus }
    };

    let (g_plus, g_minus) = g_functions(phase * refl[1], phase * refl[2]);
    Ok((
        CouplingCoefficients::from_g(g_plus, g_minus),
        CouplingGradient {
            dip: derive(d_by_dip),
            bandwidth: derive(d_by_bw),
        },
    ))
}

/// How a non-swept cavity is held during an asynchronous acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detuning")]
pub enum Parking {
    /// Exact far-detuned limit, `g_plus = 1`, `g_minus = 0`.
    #[default]
    FarDetuned,
    /// Locked on the carrier, `Δ = 0`.
    CarrierResonant,
    /// Held at a finite detuning; for sensitivity studies.
    Detuned(Detuning),
}

impl Parking {
    pub fn coupling(&self, params: &CavityParams, omega_hz: f64) -> Result<CouplingCoefficients> {
        match *self {
            Parking::FarDetuned => Ok(CouplingCoefficients::parked()),
            Parking::CarrierResonant => coupling(params, Detuning(0.0), omega_hz),
            Parking::Detuned(delta) => coupling(params, delta, omega_hz),
        }
    }
}

/// Signal-idler coupling coefficients built from the four products
/// `g^(s)* g^(i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossCoefficients {
    pub c_mu: f64,
    pub c_nu: f64,
    pub c_kappa: f64,
    pub c_lambda: f64,
    pub c_xi: f64,
    pub c_zeta: f64,
    pub c_eta: f64,
    pub c_tau: f64,
}

pub fn cross_coupling(signal: &CouplingCoefficients, idler: &CouplingCoefficients) -> CrossCoefficients {
    let plus_plus = signal.g_plus.conj() * idler.g_plus;
    let minus_plus = signal.g_minus.conj() * idler.g_plus;
    let minus_minus = signal.g_minus.conj() * idler.g_minus;
    let plus_minus = signal.g_plus.conj() * idler.g_minus;
    CrossCoefficients {
        c_mu: plus_plus.re,
        c_eta: plus_plus.im,
        c_zeta: minus_plus.re,
        c_lambda: minus_plus.im,
        c_nu: minus_minus.re,
        c_tau: minus_minus.im,
        c_xi: plus_minus.re,
        c_kappa: plus_minus.im,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    fn cavity(dip: f64, regime: CouplingRegime) -> CavityParams {
        CavityParams::new(1.03e9, 3.56e6, 290.0, dip, 0.975, regime).unwrap()
    }

    fn det(x: f64) -> Detuning {
        Detuning::new(x).unwrap()
    }

    #[test]
    fn reflection_on_resonance_is_minus_root_dip() {
        let r = reflection(&cavity(0.258, CouplingRegime::Undercoupled), det(0.0));
        assert!((r.re + 0.258f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.im, 0.0);
        assert!((r.re + 0.5079).abs() < 1e-4);
    }

    #[test]
    fn overcoupled_flips_resonant_sign() {
        let r = reflection(&cavity(0.258, CouplingRegime::Overcoupled), det(0.0));
        assert!((r.re - 0.258f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn reflection_far_off_resonance_has_unit_modulus() {
        for regime in [CouplingRegime::Undercoupled, CouplingRegime::Overcoupled] {
            let r = reflection(&cavity(0.134, regime), det(1e7));
            assert!((r.norm() - 1.0).abs() < 1e-12);
            assert!((r.re + 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn lossless_cavity_is_a_pure_minus_one() {
        let r = reflection(&cavity(1.0, CouplingRegime::Undercoupled), det(0.5));
        assert!((r - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn sideband_reflection_at_zero_frequency_is_modulus() {
        let c = fixtures::idler_cavity();
        for x in [-3.0, -0.4, 0.0, 0.7, 5.0] {
            let r = sideband_reflection(&c, det(x), 0.0).unwrap();
            assert!((r.re - reflection(&c, det(x)).norm()).abs() < 1e-15);
            assert!(r.im.abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_phase_when_reflection_vanishes() {
        let c = cavity(0.0, CouplingRegime::Undercoupled);
        assert_eq!(
            sideband_reflection(&c, det(0.0), 20e6),
            Err(Error::DegeneratePhase { detuning: 0.0 })
        );
        assert!(coupling(&c, det(0.0), 20e6).is_err());
        // Off resonance the phase is well defined again.
        assert!(coupling(&c, det(0.1), 20e6).is_ok());
    }

    #[test]
    fn zero_frequency_has_no_quadrature_mixing() {
        let c = fixtures::signal_cavity();
        for x in [-2.0, -0.3, 0.4, 1.5] {
            let k = coupling(&c, det(x), 0.0).unwrap();
            assert!(k.c_beta.abs() < 1e-30);
            assert!(k.g_minus.norm() < 1e-15);
        }
    }

    #[test]
    fn far_detuned_coupling_saturates() {
        let c = fixtures::idler_cavity();
        let k = coupling(&c, det(1e5), 20e6).unwrap();
        assert!((k.c_alpha - 1.0).abs() < 1e-8);
        assert!(k.c_beta.abs() < 1e-8);
        assert!(k.c_gamma.abs() < 1e-8);
        assert!(k.c_delta.abs() < 1e-8);
    }

    #[test]
    fn carrier_resonant_parking_has_no_mixing() {
        let c = fixtures::idler_cavity();
        let k = Parking::CarrierResonant.coupling(&c, 20e6).unwrap();
        assert!(k.g_minus.norm() < 1e-15);
        let w = c.normalized_frequency(20e6);
        let leak = (1.0 - c.dip) / (1.0 + 4.0 * w * w);
        assert!((k.c_alpha - (1.0 - leak)).abs() < 1e-12);
    }

    #[test]
    fn cavity_validation() {
        assert!(CavityParams::new(1.03e9, 3.56e6, 290.0, 1.2, 0.9, CouplingRegime::Undercoupled).is_err());
        assert!(CavityParams::new(1.03e9, 3.56e6, 290.0, 0.2, 0.0, CouplingRegime::Undercoupled).is_err());
        assert!(CavityParams::new(1.03e9, 3.56e6, 250.0, 0.2, 0.9, CouplingRegime::Undercoupled).is_err());
        assert!(CavityParams::new(-1.0, 3.56e6, 250.0, 0.2, 0.9, CouplingRegime::Undercoupled).is_err());
        assert!(Detuning::new(f64::NAN).is_err());
    }

    #[test]
    fn parked_cross_coupling_selects_idler_g() {
        let idler = coupling(&fixtures::idler_cavity(), det(0.37), 20e6).unwrap();
        let x = cross_coupling(&CouplingCoefficients::parked(), &idler);
        assert_eq!(x.c_mu, idler.g_plus.re);
        assert_eq!(x.c_eta, idler.g_plus.im);
        assert_eq!(x.c_xi, idler.g_minus.re);
        assert_eq!(x.c_kappa, idler.g_minus.im);
        for c in [x.c_zeta, x.c_lambda, x.c_nu, x.c_tau] {
            assert_eq!(c, 0.0);
        }
        let both = cross_coupling(&CouplingCoefficients::parked(), &CouplingCoefficients::parked());
        assert_eq!(both.c_mu, 1.0);
        assert_eq!(
            [both.c_nu, both.c_kappa, both.c_lambda, both.c_xi, both.c_zeta, both.c_eta, both.c_tau],
            [0.0; 7]
        );
    }

    #[test]
    fn gradient_matches_central_differences() {
        for regime in [CouplingRegime::Undercoupled, CouplingRegime::Overcoupled] {
            let base = CavityParams { regime, ..fixtures::signal_cavity() };
            for x in [-6.1, -1.3, -0.2, 0.45, 2.2] {
                let (k, grad) = coupling_with_gradient(&base, det(x), 20e6).unwrap();
                let h = 1e-6;
                let at = |dip: f64, bw: f64| {
                    let c = CavityParams { dip, bandwidth: bw, ..base };
                    // hold detuning in Hz fixed
                    let xn = x * base.bandwidth / bw;
                    coupling(&c, det(xn), 20e6).unwrap()
                };
                let fd_dip = {
                    let (p, m) = (at(base.dip + h, base.bandwidth), at(base.dip - h, base.bandwidth));
                    ((p.g_plus - m.g_plus) / (2.0 * h), (p.g_minus - m.g_minus) / (2.0 * h))
                };
                let hb = base.bandwidth * 1e-7;
                let fd_bw = {
                    let (p, m) = (at(base.dip, base.bandwidth + hb), at(base.dip, base.bandwidth - hb));
                    ((p.g_plus - m.g_plus) / (2.0 * hb), (p.g_minus - m.g_minus) / (2.0 * hb))
                };
                assert!((grad.dip.g_plus - fd_dip.0).norm() < 1e-6, "{x}");
                assert!((grad.dip.g_minus - fd_dip.1).norm() < 1e-6, "{x}");
                let scale = 1.0 / base.bandwidth;
                assert!((grad.bandwidth.g_plus - fd_bw.0).norm() < 1e-6 * scale, "{x}");
                assert!((grad.bandwidth.g_minus - fd_bw.1).norm() < 1e-6 * scale, "{x}");
                assert_eq!(k, coupling(&base, det(x), 20e6).unwrap());
            }
        }
    }

    fn any_cavity() -> impl Strategy<Value = CavityParams> {
        (0.0..1.0f64, 1e6..2e7f64, prop::bool::ANY).prop_map(|(dip, bw, over)| CavityParams {
            free_spectral_range: 1.03e9,
            bandwidth: bw,
            finesse: 1.03e9 / bw,
            dip,
            mode_matching: 0.97,
            regime: if over { CouplingRegime::Overcoupled } else { CouplingRegime::Undercoupled },
        })
    }

    proptest! {
        #[test]
        fn coupling_weights_never_exceed_unity(c in any_cavity(), x in -20.0..20.0f64, omega in 1e5..1e8f64) {
            prop_assume!(reflection(&c, det(x)).norm() > 1e-9);
            let k = coupling(&c, det(x), omega).unwrap();
            prop_assert!(k.c_alpha >= 0.0 && k.c_beta >= 0.0);
            prop_assert!(k.c_alpha + k.c_beta <= 1.0 + 1e-12);
            let lhs = k.c_gamma * k.c_gamma + k.c_delta * k.c_delta;
            prop_assert!((lhs - 4.0 * k.c_alpha * k.c_beta).abs() < 1e-12);
        }

        #[test]
        fn reflection_modulus_grows_with_detuning(c in any_cavity(), a in 0.0..30.0f64, b in 0.0..30.0f64) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            for sign in [1.0, -1.0] {
                let r_lo = reflection(&c, det(sign * lo)).norm();
                let r_hi = reflection(&c, det(sign * hi)).norm();
                prop_assert!(r_hi >= r_lo - 1e-15);
                prop_assert!(r_hi <= 1.0 + 1e-15);
            }
        }

        #[test]
        fn self_cross_coupling_is_real(c in any_cavity(), x in -10.0..10.0f64) {
            prop_assume!(reflection(&c, det(x)).norm() > 1e-9);
            let k = coupling(&c, det(x), 20e6).unwrap();
            let cross = cross_coupling(&k, &k);
            prop_assert!(cross.c_eta.abs() < 1e-15);
            prop_assert!((cross.c_mu - k.c_alpha).abs() < 1e-15);
            prop_assert!(cross.c_tau.abs() < 1e-15);
        }
    }
}
