//! Gaussian-state diagnostics of a reconstructed covariance matrix:
//! symplectic spectrum, purity, partial-transpose tests, the Duan sum, loss
//! inversion and noise-ellipse frame rotation.
//!
//! Matrix functions take `2n × 2n` matrices ordered as `(p, q)` pairs per
//! mode. For the sideband matrix the four modes are, in order, symmetric
//! signal, symmetric idler, antisymmetric signal, antisymmetric idler.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{assemble, disassemble_with_tolerance, CovarianceMatrix, CovarianceParams, Param};
use crate::error::{Error, Result};

/// Tolerance on `min ν_j ≥ 1` for physicality.
pub const PHYSICALITY_TOLERANCE: f64 = 1e-9;

pub const MODE_NAMES: [&str; 4] = ["sym_signal", "sym_idler", "anti_signal", "anti_idler"];

/// Block-diagonal symplectic form with `[[0, 1], [-1, 0]]` blocks.
pub fn symplectic_form(modes: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(2 * modes, 2 * modes);
    for k in 0..modes {
        w[(2 * k, 2 * k + 1)] = 1.0;
        w[(2 * k + 1, 2 * k)] = -1.0;
    }
    w
}

fn check_shape(v: &DMatrix<f64>) -> Result<usize> {
    if v.nrows() != v.ncols() || v.nrows() % 2 != 0 || v.nrows() == 0 {
        return Err(Error::DimensionMismatch {
            expected: 2 * (v.nrows() / 2).max(1),
            found: v.ncols(),
        });
    }
    let asym = (v - v.transpose()).amax();
    if asym > 1e-9 * v.amax().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(v.nrows() / 2)
}

fn cholesky(v: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    v.clone().cholesky().ok_or(Error::NotPositiveDefinite)
}

/// Williamson symplectic eigenvalues, ascending.
///
/// With `V = L Lᵀ`, `(VW)²` is similar to `(LᵀWL)²`, and `LᵀWL` is
/// antisymmetric, so `-(LᵀWL)² = (LᵀWL)ᵀ(LᵀWL)` is symmetric positive
/// semidefinite with eigenvalues `ν_j²`, each twice.
pub fn symplectic_eigenvalues(v: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = check_shape(v)?;
    let l = cholesky(v)?.unpack();
    let a = l.transpose() * symplectic_form(n) * &l;
    let gram = a.transpose() * &a;
    let gram = (&gram + gram.transpose()) * 0.5;
    let mut squares: Vec<f64> = SymmetricEigen::new(gram).eigenvalues.iter().copied().collect();
    squares.sort_by(f64::total_cmp);
    Ok(squares
        .chunks(2)
        .map(|pair| (0.5 * (pair[0] + pair[1])).max(0.0).sqrt())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Physicality {
    pub physical: bool,
    /// `min ν_j − 1`.
    pub margin: f64,
    pub symplectic_eigenvalues: Vec<f64>,
}

pub fn check_physicality(v: &DMatrix<f64>) -> Result<Physicality> {
    let nu = symplectic_eigenvalues(v)?;
    let margin = nu[0] - 1.0;
    Ok(Physicality {
        physical: margin >= -PHYSICALITY_TOLERANCE,
        margin,
        symplectic_eigenvalues: nu,
    })
}

/// `1/√det V`, computed from the Cholesky factor.
pub fn purity(v: &DMatrix<f64>) -> Result<f64> {
    check_shape(v)?;
    let l = cholesky(v)?;
    Ok(1.0 / l.l_dirty().diagonal().iter().product::<f64>())
}

/// Flips the sign of the `q` quadrature of every mode in `partition`.
pub fn partial_transpose(v: &DMatrix<f64>, partition: &[usize]) -> Result<DMatrix<f64>> {
    let n = check_shape(v)?;
    let mut sign = vec![1.0; 2 * n];
    for &mode in partition {
        if mode >= n {
            return Err(Error::DimensionMismatch { expected: n, found: mode + 1 });
        }
        sign[2 * mode + 1] = -1.0;
    }
    Ok(DMatrix::from_fn(2 * n, 2 * n, |r, c| sign[r] * sign[c] * v[(r, c)]))
}

fn validate_partition(modes: usize, partition: &[usize]) -> Result<()> {
    let mut seen = vec![false; modes];
    for &m in partition {
        if m >= modes {
            return Err(Error::DimensionMismatch { expected: modes, found: m + 1 });
        }
        seen[m] = true;
    }
    let count = seen.iter().filter(|&&s| s).count();
    if count == 0 || count == modes {
        return Err(Error::TrivialPartition);
    }
    Ok(())
}

/// Smallest symplectic eigenvalue of the partially transposed matrix; a
/// value below 1 certifies entanglement across the partition.
pub fn ppt_test(v: &DMatrix<f64>, partition: &[usize]) -> Result<f64> {
    let n = check_shape(v)?;
    validate_partition(n, partition)?;
    Ok(symplectic_eigenvalues(&partial_transpose(v, partition)?)?[0])
}

/// All bipartitions of `modes` modes up to complement, each given by the
/// side that excludes the last mode.
pub fn bipartitions(modes: usize) -> Vec<Vec<usize>> {
    let rest = modes.saturating_sub(1);
    (1u32..(1 << rest))
        .map(|mask| (0..rest).filter(|&m| mask & (1 << m) != 0).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PptResult {
    pub partition: Vec<usize>,
    pub min_eigenvalue: f64,
    /// Propagated from parameter standard deviations when available.
    pub sigma: Option<f64>,
    /// `min_eigenvalue < 1 − 3σ` (or `< 1` without σ).
    pub entangled: bool,
}

/// Partial-transpose scan of the sideband state over all seven
/// bipartitions. With `std_devs`, each minimum gets an uncertainty from
/// central finite differences in every parameter.
pub fn ppt_scan(params: &CovarianceParams, std_devs: Option<&CovarianceParams>) -> Result<Vec<PptResult>> {
    let v = assemble(params).to_dmatrix();
    bipartitions(4)
        .into_par_iter()
        .map(|partition| {
            let min_eigenvalue = ppt_test(&v, &partition)?;
            let sigma = match std_devs {
                Some(std) => Some(propagate(params, std, |p| ppt_test(&assemble(p).to_dmatrix(), &partition))?),
                None => None,
            };
            let threshold = 1.0 - 3.0 * sigma.unwrap_or(0.0);
            Ok(PptResult {
                entangled: min_eigenvalue < threshold,
                partition,
                min_eigenvalue,
                sigma,
            })
        })
        .collect()
}

/// First-order uncertainty of `f` from independent parameter errors.
fn propagate(
    params: &CovarianceParams,
    std_devs: &CovarianceParams,
    f: impl Fn(&CovarianceParams) -> Result<f64>,
) -> Result<f64> {
    let mut var = 0.0;
    for p in Param::ALL {
        let s = std_devs.get(p);
        if s == 0.0 {
            continue;
        }
        let h = 1e-6 * params.get(p).abs().max(1.0);
        let (mut up, mut down) = (*params, *params);
        up.set(p, params.get(p) + h);
        down.set(p, params.get(p) - h);
        let slope = (f(&up)? - f(&down)?) / (2.0 * h);
        var += (slope * s).powi(2);
    }
    Ok(var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuanSum {
    pub variance_minus_p: f64,
    pub variance_plus_q: f64,
    pub sum: f64,
    /// `sum < 2`.
    pub witness: bool,
}

/// EPR variances of `p₋ = (p^(s) − p^(i))/√2` and `q₊ = (q^(s) + q^(i))/√2`
/// in the symmetric subspace.
pub fn duan_sum(params: &CovarianceParams) -> DuanSum {
    let variance_minus_p = 0.5 * (params.alpha_s + params.alpha_i) - params.mu;
    let variance_plus_q = 0.5 * (params.beta_s + params.beta_i) + params.nu;
    let sum = variance_minus_p + variance_plus_q;
    DuanSum {
        variance_minus_p,
        variance_plus_q,
        sum,
        witness: sum < 2.0,
    }
}

fn check_efficiency(eta: f64) -> Result<()> {
    if eta > 0.0 && eta <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidEfficiency(eta))
    }
}

/// Loss channel of transmissivity `eta` on every quadrature.
pub fn apply_loss(v: &DMatrix<f64>, eta: f64) -> Result<DMatrix<f64>> {
    check_efficiency(eta)?;
    let identity = DMatrix::identity(v.nrows(), v.ncols());
    Ok(v * eta + identity * (1.0 - eta))
}

/// Inverts a uniform loss channel: `(V − (1 − η)I)/η`.
pub fn loss_correct(v: &DMatrix<f64>, eta: f64) -> Result<DMatrix<f64>> {
    loss_correct_per_mode(v, &vec![eta; v.nrows() / 2])
}

/// Inverts a loss channel with one efficiency per mode.
pub fn loss_correct_per_mode(v: &DMatrix<f64>, etas: &[f64]) -> Result<DMatrix<f64>> {
    let n = check_shape(v)?;
    if etas.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: etas.len() });
    }
    for &eta in etas {
        check_efficiency(eta)?;
    }
    let eta = |k: usize| etas[k / 2];
    let corrected = DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let leak = if r == c { 1.0 - eta(r) } else { 0.0 };
        (v[(r, c)] - leak) / (eta(r) * eta(c)).sqrt()
    });
    if corrected.clone().cholesky().is_none() {
        let worst = etas.iter().cloned().fold(1.0, f64::min);
        return Err(Error::UnphysicalCorrection(worst));
    }
    Ok(corrected)
}

/// Loss correction in parameter form.
pub fn loss_correct_params(params: &CovarianceParams, eta: f64) -> Result<CovarianceParams> {
    // positivity check on the full matrix
    loss_correct(&assemble(params).to_dmatrix(), eta)?;
    Ok(params.map(|p, v| match p {
        Param::AlphaS | Param::BetaS | Param::AlphaI | Param::BetaI => (v - (1.0 - eta)) / eta,
        _ => v / eta,
    }))
}

/// Variance of a single quadrature after undoing loss `eta`.
pub fn loss_correct_variance(variance: f64, eta: f64) -> Result<f64> {
    check_efficiency(eta)?;
    let corrected = (variance - (1.0 - eta)) / eta;
    if corrected > 0.0 {
        Ok(corrected)
    } else {
        Err(Error::UnphysicalCorrection(eta))
    }
}

pub fn to_db(variance: f64) -> f64 {
    10.0 * variance.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Angle that diagonalizes a beam's `[[α, γ], [γ, β]]` block.
pub fn ellipse_angle(alpha: f64, beta: f64, gamma: f64) -> f64 {
    if gamma == 0.0 && alpha == beta {
        0.0
    } else {
        0.5 * (2.0 * gamma).atan2(alpha - beta)
    }
}

fn rotation(theta: f64) -> [[f64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    [[c, s], [-s, c]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRotation {
    pub theta_s: f64,
    pub theta_i: f64,
    /// Full four-mode rotation: both sideband combinations of each beam
    /// turned by that beam's angle.
    pub rotated: CovarianceParams,
    /// Two-mode path: the symmetric block only.
    pub two_mode: TwoModeRotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoModeRotation {
    /// Rotated 4×4 symmetric block, row-major.
    pub matrix: Vec<f64>,
    pub variance_minus_p: f64,
    pub variance_plus_q: f64,
    pub purity: f64,
}

fn block_rotation(angles: &[f64]) -> DMatrix<f64> {
    let n = angles.len();
    let mut r = DMatrix::zeros(2 * n, 2 * n);
    for (k, &theta) in angles.iter().enumerate() {
        let m = rotation(theta);
        for a in 0..2 {
            for b in 0..2 {
                r[(2 * k + a, 2 * k + b)] = m[a][b];
            }
        }
    }
    r
}

/// Rotates each beam's quadratures onto the axes of its noise ellipse.
pub fn frame_rotation(params: &CovarianceParams) -> Result<FrameRotation> {
    let theta_s = ellipse_angle(params.alpha_s, params.beta_s, params.gamma_s);
    let theta_i = ellipse_angle(params.alpha_i, params.beta_i, params.gamma_i);
    let v = assemble(params).to_dmatrix();
    let r = block_rotation(&[theta_s, theta_i, theta_s, theta_i]);
    let turned = &r * v * r.transpose();
    let matrix = CovarianceMatrix::new(nalgebra::SMatrix::<f64, 8, 8>::from_iterator(turned.iter().copied()))?;
    let (rotated, _) = disassemble_with_tolerance(&matrix, 1e-9 * v_scale(params))?;

    let vs = assemble(params).to_dmatrix().view((0, 0), (4, 4)).into_owned();
    let r2 = block_rotation(&[theta_s, theta_i]);
    let vs_rot = &r2 * vs * r2.transpose();
    let minus_p = 0.5 * (vs_rot[(0, 0)] + vs_rot[(2, 2)]) - vs_rot[(0, 2)];
    let plus_q = 0.5 * (vs_rot[(1, 1)] + vs_rot[(3, 3)]) + vs_rot[(1, 3)];
    let two_mode = TwoModeRotation {
        purity: purity(&vs_rot)?,
        matrix: (0..4).flat_map(|r| (0..4).map(move |c| (r, c))).map(|(r, c)| vs_rot[(r, c)]).collect(),
        variance_minus_p: minus_p,
        variance_plus_q: plus_q,
    };
    Ok(FrameRotation {
        theta_s,
        theta_i,
        rotated,
        two_mode,
    })
}

fn v_scale(params: &CovarianceParams) -> f64 {
    params.to_array().iter().fold(1.0, |m, v| m.max(v.abs()))
}

/// A family of states with phase noise growing by `increments` added to
/// both beams' `β`.
pub fn phase_noise_family(base: &CovarianceParams, increments: &[f64]) -> Vec<CovarianceParams> {
    increments
        .iter()
        .map(|&k| {
            let mut p = *base;
            p.beta_s += k;
            p.beta_i += k;
            p
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCorrected {
    pub efficiency: f64,
    pub params: CovarianceParams,
    pub purity: f64,
    pub duan: DuanSum,
    pub variance_minus_p_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationReport {
    pub theta_s: f64,
    pub theta_i: f64,
    pub rotated_params: CovarianceParams,
    pub purity: f64,
    pub duan: DuanSum,
    pub two_mode: TwoModeRotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub params: CovarianceParams,
    pub symplectic_eigenvalues: Vec<f64>,
    pub physical: bool,
    pub physicality_margin: f64,
    pub purity: f64,
    pub ppt_results: Vec<PptResult>,
    pub duan: DuanSum,
    pub rotation: RotationReport,
    pub loss_corrected: Option<LossCorrected>,
    pub warnings: Vec<String>,
}

/// Runs every diagnostic. An unphysical (but positive-definite) state is
/// reported with a warning; a failed loss correction becomes a warning too.
pub fn analyze(
    params: &CovarianceParams,
    std_devs: Option<&CovarianceParams>,
    efficiency: Option<f64>,
) -> Result<AnalysisReport> {
    let v = assemble(params).to_dmatrix();
    let phys = check_physicality(&v)?;
    let mut warnings = Vec::new();
    if !phys.physical {
        warnings.push(format!(
            "state violates the uncertainty principle: min symplectic eigenvalue {:.6}",
            phys.symplectic_eigenvalues[0]
        ));
    }
    let ppt_results = ppt_scan(params, std_devs)?;
    let rot = frame_rotation(params)?;
    let rotation = RotationReport {
        theta_s: rot.theta_s,
        theta_i: rot.theta_i,
        purity: purity(&assemble(&rot.rotated).to_dmatrix())?,
        duan: duan_sum(&rot.rotated),
        rotated_params: rot.rotated,
        two_mode: rot.two_mode,
    };
    let loss_corrected = match efficiency {
        None => None,
        Some(eta) => match loss_correct_params(params, eta) {
            Ok(corrected) => {
                let duan = duan_sum(&corrected);
                Some(LossCorrected {
                    efficiency: eta,
                    purity: purity(&assemble(&corrected).to_dmatrix())?,
                    variance_minus_p_db: to_db(duan.variance_minus_p),
                    duan,
                    params: corrected,
                })
            }
            Err(e @ Error::UnphysicalCorrection(_)) => {
                warnings.push(e.to_string());
                None
            }
            Err(e) => return Err(e),
        },
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(AnalysisReport {
        params: *params,
        purity: purity(&v)?,
        symplectic_eigenvalues: phys.symplectic_eigenvalues,
        physical: phys.physical,
        physicality_margin: phys.margin,
        ppt_results,
        duan: duan_sum(params),
        rotation,
        loss_corrected,
        warnings,
    })
}

impl AnalysisReport {
    /// Plain-text summary with variances also given in dB.
    pub fn summary(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let nu: Vec<String> = self.symplectic_eigenvalues.iter().map(|v| format!("{v:.4}")).collect();
        let _ = writeln!(s, "symplectic eigenvalues: {}", nu.join(", "));
        let _ = writeln!(
            s,
            "physical: {} (margin {:+.4})",
            if self.physical { "yes" } else { "no" },
            self.physicality_margin
        );
        let _ = writeln!(s, "purity: {:.5}", self.purity);
        let d = &self.duan;
        let _ = writeln!(
            s,
            "EPR variances: dp- = {:.4} ({:+.2} dB), dq+ = {:.4} ({:+.2} dB)",
            d.variance_minus_p,
            to_db(d.variance_minus_p),
            d.variance_plus_q,
            to_db(d.variance_plus_q)
        );
        let _ = writeln!(
            s,
            "Duan sum: {:.4} -> {}",
            d.sum,
            if d.witness { "entangled" } else { "no witness" }
        );
        let _ = writeln!(s, "partial transpose (min eigenvalue per bipartition):");
        for r in &self.ppt_results {
            let names: Vec<&str> = r.partition.iter().map(|&m| MODE_NAMES[m]).collect();
            let sigma = r.sigma.map(|x| format!(" +/- {x:.4}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "  {{{}}}: {:.4}{} {}",
                names.join(", "),
                r.min_eigenvalue,
                sigma,
                if r.entangled { "ENTANGLED" } else { "separable" }
            );
        }
        let rot = &self.rotation;
        let _ = writeln!(
            s,
            "frame rotation: theta_s = {:.4} rad, theta_i = {:.4} rad; rotated dp- = {:.4} ({:+.2} dB), purity {:.5}",
            rot.theta_s,
            rot.theta_i,
            rot.duan.variance_minus_p,
            to_db(rot.duan.variance_minus_p),
            rot.purity
        );
        let _ = writeln!(
            s,
            "two-mode rotation: dp- = {:.4} ({:+.2} dB), purity {:.5}",
            rot.two_mode.variance_minus_p,
            to_db(rot.two_mode.variance_minus_p),
            rot.two_mode.purity
        );
        if let Some(l) = &self.loss_corrected {
            let _ = writeln!(
                s,
                "loss corrected at efficiency {:.3}: dp- = {:.4} ({:+.2} dB), purity {:.5}",
                l.efficiency, l.duan.variance_minus_p, l.variance_minus_p_db, l.purity
            );
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    fn tmsv(r: f64) -> DMatrix<f64> {
        let (c, s) = ((2.0 * r).cosh(), (2.0 * r).sinh());
        DMatrix::from_row_slice(4, 4, &[c, 0.0, s, 0.0, 0.0, c, 0.0, -s, s, 0.0, c, 0.0, 0.0, -s, 0.0, c])
    }

    #[test]
    fn symplectic_form_properties() {
        let w = symplectic_form(4);
        assert_eq!(w.transpose(), -&w);
        assert_eq!(&w * &w, -DMatrix::<f64>::identity(8, 8));
    }

    #[test]
    fn vacuum_and_thermal_spectra() {
        let nu = symplectic_eigenvalues(&DMatrix::identity(8, 8)).unwrap();
        assert!(nu.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let mut v = DMatrix::identity(8, 8);
        v[(2, 2)] = 3.5;
        v[(3, 3)] = 3.5;
        let nu = symplectic_eigenvalues(&v).unwrap();
        assert!((nu[3] - 3.5).abs() < 1e-12);
        let thermal = DMatrix::identity(8, 8) * 2.0;
        assert!((purity(&thermal).unwrap() - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn tmsv_is_pure_and_entangled() {
        let v = tmsv(0.5);
        let nu = symplectic_eigenvalues(&v).unwrap();
        assert!(nu.iter().all(|x| (x - 1.0).abs() < 1e-9));
        assert!((purity(&v).unwrap() - 1.0).abs() < 1e-9);
        assert!((ppt_test(&v, &[0]).unwrap() - (-1.0f64).exp()).abs() < 1e-9);
        assert!((ppt_test(&v, &[1]).unwrap() - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn physicality_examples() {
        let p = check_physicality(&DMatrix::identity(8, 8)).unwrap();
        assert!(p.physical && p.margin.abs() < 1e-12);
        let p = check_physicality(&(DMatrix::identity(8, 8) * 0.5)).unwrap();
        assert!(!p.physical && (p.margin + 0.5).abs() < 1e-12);
        let mut bad = DMatrix::identity(4, 4);
        bad[(0, 0)] = -1.0;
        assert_eq!(symplectic_eigenvalues(&bad), Err(Error::NotPositiveDefinite));
        assert!(matches!(symplectic_eigenvalues(&DMatrix::identity(3, 3)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn partitions() {
        assert_eq!(bipartitions(4).len(), 7);
        assert!(bipartitions(4).iter().all(|p| !p.contains(&3)));
        let v = DMatrix::identity(8, 8);
        assert_eq!(ppt_test(&v, &[]), Err(Error::TrivialPartition));
        assert_eq!(ppt_test(&v, &[0, 1, 2, 3]), Err(Error::TrivialPartition));
        assert!(ppt_test(&v, &[5]).is_err());
        for p in bipartitions(4) {
            assert!((ppt_test(&v, &p).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duan_examples() {
        let d = duan_sum(&CovarianceParams::vacuum());
        assert_eq!((d.variance_minus_p, d.variance_plus_q, d.sum, d.witness), (1.0, 1.0, 2.0, false));
        let r: f64 = 0.4;
        let mut p = CovarianceParams::vacuum();
        let (c, s) = ((2.0 * r).cosh(), (2.0 * r).sinh());
        p.alpha_s = c;
        p.beta_s = c;
        p.alpha_i = c;
        p.beta_i = c;
        p.mu = s;
        p.nu = -s;
        let d = duan_sum(&p);
        assert!((d.sum - 2.0 * (-2.0 * r).exp()).abs() < 1e-12 && d.witness);
        let d = duan_sum(&fixtures::reference_state());
        assert!((d.variance_minus_p - 0.64).abs() < 1e-12);
        assert!((d.variance_plus_q - 12.825).abs() < 1e-12);
        assert!((d.sum - 13.465).abs() < 1e-12 && !d.witness);
    }

    #[test]
    fn duan_matches_quadratic_forms() {
        let p = fixtures::reference_state();
        let v = assemble(&p).to_dmatrix();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut minus_p = nalgebra::DVector::zeros(8);
        minus_p[0] = h;
        minus_p[2] = -h;
        let mut plus_q = nalgebra::DVector::zeros(8);
        plus_q[1] = h;
        plus_q[3] = h;
        let d = duan_sum(&p);
        assert!(((minus_p.transpose() * &v * &minus_p)[(0, 0)] - d.variance_minus_p).abs() < 1e-12);
        assert!(((plus_q.transpose() * &v * &plus_q)[(0, 0)] - d.variance_plus_q).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        let v = assemble(&fixtures::reference_state()).to_dmatrix();
        assert!((loss_correct(&v, 1.0).unwrap() - &v).amax() < 1e-15);
        let vac = DMatrix::identity(8, 8);
        assert!((loss_correct(&vac, 0.37).unwrap() - &vac).amax() < 1e-15);
        let corrected = loss_correct_variance(from_db(-2.3), 0.61).unwrap();
        assert!((to_db(corrected) + 4.87).abs() < 0.01);
        assert!(loss_correct(&v, 0.0).is_err());
        assert!(loss_correct(&v, 1.2).is_err());
        assert!(matches!(loss_correct(&(DMatrix::identity(8, 8) * 0.3), 0.5), Err(Error::UnphysicalCorrection(_))));
    }

    #[test]
    fn loss_params_match_matrix() {
        let p = fixtures::reference_state();
        let m = loss_correct(&assemble(&p).to_dmatrix(), 0.61).unwrap();
        let q = loss_correct_params(&p, 0.61).unwrap();
        assert!((assemble(&q).to_dmatrix() - m).amax() < 1e-12);
    }

    #[test]
    fn per_mode_loss_inverts_per_mode_channel() {
        let p = fixtures::reference_state();
        let v = assemble(&p).to_dmatrix();
        let etas: [f64; 4] = [0.9, 0.8, 0.7, 0.95];
        let d = DMatrix::from_fn(8, 8, |r, c| if r == c { etas[r / 2].sqrt() } else { 0.0 });
        let leak = DMatrix::from_fn(8, 8, |r, c| if r == c { 1.0 - etas[r / 2] } else { 0.0 });
        let lossy = &d * &v * &d + leak;
        assert!((loss_correct_per_mode(&lossy, &etas).unwrap() - v).amax() < 1e-12);
    }

    #[test]
    fn rotation_angles() {
        use std::f64::consts::FRAC_PI_2;
        assert_eq!(ellipse_angle(2.0, 1.0, 0.0), 0.0);
        assert_eq!(ellipse_angle(1.0, 1.0, 0.0), 0.0);
        assert!((ellipse_angle(2.0, 2.0, 0.3) - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        let mut p = fixtures::reference_state();
        p.gamma_s = 0.0;
        p.gamma_i = 0.0;
        // beta exceeds alpha in both beams, so the frame turns a quarter
        let r = frame_rotation(&p).unwrap();
        assert_eq!((r.theta_s, r.theta_i), (FRAC_PI_2, FRAC_PI_2));
        assert!((r.rotated.alpha_s - p.beta_s).abs() < 1e-12);
        assert!((r.rotated.beta_i - p.alpha_i).abs() < 1e-12);
        assert!((purity(&assemble(&r.rotated).to_dmatrix()).unwrap() - purity(&assemble(&p).to_dmatrix()).unwrap()).abs() < 1e-12);
        (p.alpha_s, p.beta_s, p.alpha_i, p.beta_i) = (p.beta_s, p.alpha_s, p.beta_i, p.alpha_i);
        let r = frame_rotation(&p).unwrap();
        assert_eq!((r.theta_s, r.theta_i), (0.0, 0.0));
        assert!((assemble(&r.rotated).to_dmatrix() - assemble(&p).to_dmatrix()).amax() < 1e-12);
    }

    #[test]
    fn fixture_rotation_loses_squeezing() {
        let p = fixtures::reference_state();
        let r = frame_rotation(&p).unwrap();
        assert!(r.theta_s != 0.0 && r.theta_i != 0.0);
        let v = assemble(&p).to_dmatrix();
        let vr = assemble(&r.rotated).to_dmatrix();
        assert!((purity(&v).unwrap() - purity(&vr).unwrap()).abs() < 1e-9);
        assert!(duan_sum(&r.rotated).variance_minus_p > 1.0);
        assert!(r.two_mode.variance_minus_p > 1.0);
    }

    #[test]
    fn report_summary_mentions_everything() {
        let report = analyze(&fixtures::reference_state(), Some(&fixtures::reference_state_std()), Some(0.61)).unwrap();
        let text = report.summary();
        assert!(text.contains("purity"));
        assert!(text.contains("Duan sum: 13.4650"));
        assert_eq!(report.ppt_results.len(), 7);
        assert!(report.ppt_results.iter().all(|r| r.sigma.unwrap() > 0.0));
        let json = serde_json::to_string(&report).unwrap();
        let back: AnalysisReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    fn random_symplectic(seed: [f64; 12]) -> DMatrix<f64> {
        // product of local squeezers, rotations and two-mode mixers
        let mut s = DMatrix::identity(4, 4);
        for k in 0..2 {
            let sq = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                seed[k].exp(),
                (-seed[k]).exp(),
                seed[k + 2].exp(),
                (-seed[k + 2]).exp(),
            ]));
            let rot = block_rotation(&[seed[k + 4], seed[k + 6]]);
            let (c, sn) = (seed[k + 8].cos(), seed[k + 8].sin());
            let bs = DMatrix::from_row_slice(4, 4, &[c, 0.0, sn, 0.0, 0.0, c, 0.0, sn, -sn, 0.0, c, 0.0, 0.0, -sn, 0.0, c]);
            s = bs * rot * sq * s;
        }
        s
    }

    proptest! {
        #[test]
        fn williamson_identities(seed in prop::array::uniform12(-1.0..1.0f64), nu in prop::array::uniform2(1.0..4.0f64)) {
            let s = random_symplectic(seed);
            let w = symplectic_form(2);
            prop_assert!((&s * &w * s.transpose() - &w).amax() < 1e-9);
            let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![nu[0], nu[0], nu[1], nu[1]]));
            let v = &s * d * s.transpose();
            let got = symplectic_eigenvalues(&v).unwrap();
            let mut expect = nu.to_vec();
            expect.sort_by(f64::total_cmp);
            prop_assert!((got[0] - expect[0]).abs() < 1e-8 && (got[1] - expect[1]).abs() < 1e-8);
            prop_assert!((purity(&v).unwrap() * got.iter().product::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!((ppt_test(&v, &[0]).unwrap() - ppt_test(&v, &[1]).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn loss_round_trip(seed in prop::array::uniform12(-0.8..0.8f64), eta in 0.05..1.0f64) {
            let s = random_symplectic(seed);
            let v = &s * s.transpose();
            let back = loss_correct(&apply_loss(&v, eta).unwrap(), eta).unwrap();
            prop_assert!((&back - &v).amax() < 1e-12 * v.amax().max(1.0));
        }
    }
}
