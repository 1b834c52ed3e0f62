//! Levenberg–Marquardt least squares for small parameter counts.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when χ² changes by less than this fraction.
    pub chi2_rel_tol: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            chi2_rel_tol: 1e-10,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmFit {
    pub params: DVector<f64>,
    pub chi2: f64,
    /// (JᵀJ)⁻¹ scaled by χ²/(n − p).
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
}

/// Minimizes Σ r_i(p)² given residuals and their Jacobian (rows = residuals).
/// Damping is applied to the diagonal of JᵀJ, which keeps the iteration
/// invariant under rescaling of individual parameters.
pub fn levenberg_marquardt<R, J>(residuals: R, jacobian: J, p0: DVector<f64>, opts: LmOptions) -> Result<LmFit>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let mut p = p0;
    let mut r = residuals(&p);
    let n = r.len();
    let k = p.len();
    if n <= k {
        return Err(Error::FitFailed(format!("{n} residuals cannot constrain {k} parameters")));
    }
    let mut chi2 = r.norm_squared();
    if !chi2.is_finite() {
        return Err(Error::FitFailed("non-finite residuals at the initial guess".into()));
    }
    let mut lambda = opts.initial_lambda;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let jm = jacobian(&p);
        let jtj = jm.transpose() * &jm;
        let jtr = jm.transpose() * &r;
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for d in 0..k {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-300);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let trial = &p + &step;
            let rt = residuals(&trial);
            let c2 = rt.norm_squared();
            if c2.is_finite() && c2 <= chi2 {
                let change = (chi2 - c2) / chi2.max(f64::MIN_POSITIVE);
                p = trial;
                r = rt;
                chi2 = c2;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if change < opts.chi2_rel_tol {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged || !improved || chi2 == 0.0 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::FitFailed(format!("no convergence after {iterations} iterations")));
    }
    let jm = jacobian(&p);
    let jtj = jm.transpose() * &jm;
    let inv = jtj
        .try_inverse()
        .ok_or_else(|| Error::FitFailed("singular normal matrix at the solution".into()))?;
    let covariance = inv * (chi2 / (n - k) as f64);
    Ok(LmFit {
        params: p,
        chi2,
        covariance,
        iterations,
    })
}
