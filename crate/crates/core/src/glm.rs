//! Linear Poisson regression (log link) fitted by iteratively reweighted
//! least squares — the comparison baseline.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

/// Fitted linear Poisson model: `lambda = exp(b0 + b' x)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GlmFit {
    /// Intercept followed by one slope per covariate.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
    /// Deviance after each IRLS iteration.
    pub deviance_trace: Vec<f64>,
}

const GLM_LINPRED_CAP: f64 = 700.0;

fn poisson_deviance(t: &[u64], lambda: &[f64]) -> f64 {
    t.iter()
        .zip(lambda)
        .map(|(&tn, &lam)| {
            let tn = tn as f64;
            let term = if tn > 0.0 { tn * (tn / lam).ln() } else { 0.0 };
            2.0 * (term - (tn - lam))
        })
        .sum()
}

/// Fit by IRLS. The linear predictor starts at `ln(t + 0.5)` per row; a
/// flat start overshoots so badly on large counts that recovery takes
/// hundreds of iterations. Converged when the largest coefficient update
/// falls below `tol`.
pub fn fit_glm(x: &Array2<f64>, t: &[u64], max_iter: usize, tol: f64) -> Result<GlmFit> {
    let n = x.nrows();
    let d = x.ncols();
    let p = d + 1;
    if n != t.len() {
        return Err(Error::ShapeMismatch(format!(
            "{n} design rows vs {} targets",
            t.len()
        )));
    }
    if n <= p {
        return Err(Error::InvalidInput(format!(
            "need more than {p} observations to fit {p} coefficients, got {n}"
        )));
    }
    // Design with intercept column.
    let design = DMatrix::from_fn(n, p, |r, c| if c == 0 { 1.0 } else { x[(r, c - 1)] });
    if design.rank(1e-10) < p {
        return Err(Error::SingularDesign(format!(
            "design matrix (with intercept) has rank < {p}"
        )));
    }

    let mut beta = DVector::zeros(p);
    let mut deviance_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    // Data-driven start on the response scale.
    let mut eta = DVector::from_fn(n, |r, _| (t[r] as f64 + 0.5).ln());
    let mut lambda: Vec<f64> = eta.iter().map(|e| e.exp()).collect();

    for iter in 0..max_iter {
        iterations = iter + 1;
        // Working response z = eta + (t - lambda)/lambda; weights lambda.
        let z = DVector::from_fn(n, |r, _| eta[r] + (t[r] as f64 - lambda[r]) / lambda[r]);
        let mut xtwx = DMatrix::zeros(p, p);
        let mut xtwz = DVector::zeros(p);
        for r in 0..n {
            let w = lambda[r];
            for i in 0..p {
                let xi = design[(r, i)];
                xtwz[i] += w * xi * z[r];
                for j in 0..p {
                    xtwx[(i, j)] += w * xi * design[(r, j)];
                }
            }
        }
        let chol = xtwx
            .cholesky()
            .ok_or_else(|| Error::SingularDesign("weighted normal equations are singular".into()))?;
        let beta_new = chol.solve(&xtwz);
        let max_delta = (&beta_new - &beta).amax();
        beta = beta_new;

        eta = &design * &beta;
        for (li, &e) in lambda.iter_mut().zip(eta.iter()) {
            if e > GLM_LINPRED_CAP || !e.is_finite() {
                return Err(Error::OptimizationFailed {
                    reason: format!("IRLS diverged at iteration {iterations}"),
                    last_iterate: beta.iter().copied().collect(),
                });
            }
            *li = e.exp();
        }
        deviance_trace.push(poisson_deviance(t, &lambda));

        if max_delta < tol {
            converged = true;
            break;
        }
    }

    Ok(GlmFit {
        coefficients: beta.iter().copied().collect(),
        converged,
        iterations,
        deviance: *deviance_trace.last().unwrap_or(&f64::NAN),
        deviance_trace,
    })
}

/// Predicted rates `exp(b0 + b' x)` for new rows.
pub fn predict_glm(fit: &GlmFit, x: &Array2<f64>) -> Result<Vec<f64>> {
    if x.ncols() + 1 != fit.coefficients.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} covariates but the fit has {} coefficients",
            x.ncols(),
            fit.coefficients.len()
        )));
    }
    Ok((0..x.nrows())
        .map(|r| {
            let mut eta = fit.coefficients[0];
            for c in 0..x.ncols() {
                eta += fit.coefficients[c + 1] * x[(r, c)];
            }
            eta.exp()
        })
        .collect())
}
