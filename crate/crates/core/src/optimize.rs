//! Damped Gauss-Newton (Levenberg-Marquardt) minimization of a sum of
//! squared residuals.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when an accepted step changes the residual norm by less than
    /// this fraction.
    pub relative_tolerance: f64,
    /// Stop when the gradient infinity norm falls below this.
    pub gradient_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            relative_tolerance: 1e-10,
            gradient_tolerance: 1e-12,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub x: DVector<f64>,
    pub residuals: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Residual norm after every accepted step, starting with the initial
    /// point.
    pub history: Vec<f64>,
}

const MAX_DAMPING: f64 = 1e16;

/// Minimizes `|r(x)|²` where `model` returns the residual vector and its
/// Jacobian. A trial point at which `model` fails is treated as a rejected
/// step; failure at the starting point is returned as an error.
pub fn levenberg_marquardt<F>(x0: DVector<f64>, mut model: F, options: &LmOptions) -> Result<LmReport>
where
    F: FnMut(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>,
{
    let mut x = x0;
    let (mut r, mut j) = model(&x)?;
    let mut norm = r.norm();
    let mut history = vec![norm];
    let mut damping = options.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        let gradient = j.transpose() * &r;
        if gradient.amax() < options.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let normal = j.transpose() * &j;
        let mut accepted = false;
        while damping < MAX_DAMPING {
            let mut damped = normal.clone();
            for k in 0..damped.nrows() {
                let d = normal[(k, k)];
                damped[(k, k)] += damping * if d > 0.0 { d } else { 1.0 };
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&(-&gradient)),
                None => {
                    damping *= 10.0;
                    continue;
                }
            };
            let trial = &x + &step;
            match model(&trial) {
                Ok((rt, jt)) if rt.norm() < norm => {
                    let trial_norm = rt.norm();
                    let change = (norm - trial_norm) / norm.max(f64::MIN_POSITIVE);
                    x = trial;
                    r = rt;
                    j = jt;
                    norm = trial_norm;
                    history.push(norm);
                    damping = (damping / 10.0).max(1e-15);
                    accepted = true;
                    let small_step = step.norm() <= options.relative_tolerance * (x.norm() + options.relative_tolerance);
                    if change < options.relative_tolerance || small_step {
                        converged = true;
                    }
                    break;
                }
                _ => damping *= 10.0,
            }
        }
        if !accepted {
            // No descent direction left at machine precision; accept if the
            // gradient is round-off relative to |J| |r|.
            converged = gradient.amax() <= options.gradient_tolerance.max(1e-8 * j.norm() * norm);
            break;
        }
        if converged {
            break;
        }
    }
    log::debug!("levenberg-marquardt: {iterations} iterations, residual {norm:.6e}, converged {converged}");
    Ok(LmReport {
        x,
        residuals: r,
        jacobian: j,
        residual_norm: norm,
        iterations,
        converged,
        history,
    })
}
