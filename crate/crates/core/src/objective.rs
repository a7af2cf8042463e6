//! Prior, likelihood, and the regularized error
//! `S(w) = E_D(w) + sum_g alpha_g * E_{w,g}(w)` with single-alpha and
//! per-covariate (relevance) group structures.

use crate::error::{Error, Result};
use crate::net::{self, NetworkConfig};
use ndarray::Array2;

/// Whether one alpha covers every group or each group carries its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PriorMode {
    Single,
    Ard,
}

/// Zero-mean Gaussian prior: precision `alpha_g` per weight group.
///
/// Biases are penalized too (hidden biases, second-layer weights, and the
/// output bias each form a group); leaving them free destabilizes the
/// Hessian eigenproblem the evidence update depends on.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PriorSpec {
    pub mode: PriorMode,
    /// One entry per group; in `Single` mode every entry is equal.
    pub alphas: Vec<f64>,
    /// Partition of all flat weight indices.
    pub groups: Vec<Vec<usize>>,
}

impl PriorSpec {
    /// One alpha for everything, one group covering all `n_params` indices.
    pub fn single(alpha: f64, n_params: usize) -> Result<Self> {
        Self::with_groups(PriorMode::Single, vec![alpha], vec![(0..n_params).collect()])
    }

    /// One shared alpha over the network's group structure.
    pub fn single_for(cfg: &NetworkConfig, alpha: f64) -> Result<Self> {
        let groups = cfg.group_indices();
        let alphas = vec![alpha; groups.len()];
        Self::with_groups(PriorMode::Single, alphas, groups)
    }

    /// Per-group alphas over the network's group structure, all starting at
    /// `alpha0`.
    pub fn ard_for(cfg: &NetworkConfig, alpha0: f64) -> Result<Self> {
        let groups = cfg.group_indices();
        let alphas = vec![alpha0; groups.len()];
        Self::with_groups(PriorMode::Ard, alphas, groups)
    }

    pub fn with_groups(mode: PriorMode, alphas: Vec<f64>, groups: Vec<Vec<usize>>) -> Result<Self> {
        if alphas.len() != groups.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} alphas for {} groups",
                alphas.len(),
                groups.len()
            )));
        }
        if alphas.iter().any(|&a| a <= 0.0 || !a.is_finite()) {
            return Err(Error::InvalidInput("every alpha must be positive and finite".into()));
        }
        let spec = Self { mode, alphas, groups };
        spec.check_partition()?;
        Ok(spec)
    }

    /// Every index in exactly one group.
    fn check_partition(&self) -> Result<()> {
        let n = self.n_params();
        let mut seen = vec![false; n];
        for g in &self.groups {
            for &i in g {
                if i >= n || seen[i] {
                    return Err(Error::InvalidInput(
                        "group map must partition the weight indices".into(),
                    ));
                }
                seen[i] = true;
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::InvalidInput(
                "group map must cover every weight index".into(),
            ));
        }
        Ok(())
    }

    /// Total number of weights covered.
    pub fn n_params(&self) -> usize {
        self.groups.iter().map(|g| g.len()).sum::<usize>()
    }

    /// Expand to one alpha per weight index.
    pub fn alpha_per_index(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_params()];
        for (g, idxs) in self.groups.iter().enumerate() {
            for &i in idxs {
                out[i] = self.alphas[g];
            }
        }
        out
    }

    /// Replace the alphas, preserving the group structure.
    pub fn with_alphas(&self, alphas: Vec<f64>) -> Result<Self> {
        Self::with_groups(self.mode, alphas, self.groups.clone())
    }
}

/// Components of the regularized error at one weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub data_term: f64,
    /// `E_{w,g}` per group (unweighted by alpha).
    pub penalties: Vec<f64>,
}

/// Negative Poisson log-likelihood up to the constant `sum ln t_n!`:
/// `sum_n (lambda_n - t_n ln lambda_n)`.
pub fn poisson_nll(rates: &[f64], t: &[u64]) -> Result<f64> {
    if rates.len() != t.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rates vs {} targets",
            rates.len(),
            t.len()
        )));
    }
    let mut total = 0.0;
    for (&lam, &tn) in rates.iter().zip(t.iter()) {
        if lam <= 0.0 || !lam.is_finite() {
            return Err(Error::Domain(format!("rate must be positive, got {lam}")));
        }
        total += lam - tn as f64 * lam.ln();
    }
    Ok(total)
}

/// `E_{w,g} = 1/2 sum_{i in g} w_i^2` per group.
pub fn weight_penalty(w: &[f64], prior: &PriorSpec) -> Result<Vec<f64>> {
    if w.len() != prior.n_params() {
        return Err(Error::ShapeMismatch(format!(
            "weight vector has length {}, prior covers {}",
            w.len(),
            prior.n_params()
        )));
    }
    Ok(prior
        .groups
        .iter()
        .map(|g| 0.5 * g.iter().map(|&i| w[i] * w[i]).sum::<f64>())
        .collect())
}

/// Data-error half of an objective: value and gradient of `E_D` as a
/// function of the flat weight vector. The regularizer wraps any
/// implementation, so surrogate objectives slot in for tests and the
/// evidence fixed-point checks.
pub trait DataObjective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, w: &[f64]) -> Result<f64>;
    fn grad(&self, w: &[f64]) -> Result<Vec<f64>>;
    /// Hessian of the data error; default is central finite differences of
    /// the analytic gradient, symmetrized.
    fn hessian(&self, w: &[f64]) -> Result<Array2<f64>> {
        let raw = net::fd_hessian(w, |wi| self.grad(wi))?;
        Ok(net::symmetrize(&raw))
    }
}

/// The network data error over a fixed dataset.
pub struct NetworkObjective {
    pub cfg: NetworkConfig,
    x: Array2<f64>,
    t: Vec<u64>,
}

impl NetworkObjective {
    pub fn new(cfg: NetworkConfig, x: &Array2<f64>, t: &[u64]) -> Result<Self> {
        if x.ncols() != cfg.n_inputs {
            return Err(Error::ShapeMismatch(format!(
                "input matrix has {} columns, expected {}",
                x.ncols(),
                cfg.n_inputs
            )));
        }
        if x.nrows() != t.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} input rows vs {} targets",
                x.nrows(),
                t.len()
            )));
        }
        Ok(Self {
            cfg,
            x: x.clone(),
            t: t.to_vec(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.t.len()
    }
}

impl DataObjective for NetworkObjective {
    fn dim(&self) -> usize {
        self.cfg.n_params()
    }

    fn value(&self, w: &[f64]) -> Result<f64> {
        net::data_error(&self.cfg, w, &self.x, &self.t)
    }

    fn grad(&self, w: &[f64]) -> Result<Vec<f64>> {
        net::grad_data_error(&self.cfg, w, &self.x, &self.t)
    }
}

/// Shifted quadratic `E_D(w) = 1/2 (w - c)^T Q (w - c)` with exact
/// derivatives. Surrogate used by optimizer and evidence tests, where the
/// analytic minimizer and Hessian are known.
pub struct QuadraticObjective {
    pub q: Array2<f64>,
    pub center: Vec<f64>,
}

impl QuadraticObjective {
    pub fn new(q: Array2<f64>, center: Vec<f64>) -> Result<Self> {
        if q.nrows() != q.ncols() || q.nrows() != center.len() {
            return Err(Error::ShapeMismatch("Q must be square and match the center".into()));
        }
        Ok(Self { q, center })
    }
}

impl DataObjective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, w: &[f64]) -> Result<f64> {
        let d: Vec<f64> = w.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let mut total = 0.0;
        for i in 0..d.len() {
            for j in 0..d.len() {
                total += 0.5 * d[i] * self.q[(i, j)] * d[j];
            }
        }
        Ok(total)
    }

    fn grad(&self, w: &[f64]) -> Result<Vec<f64>> {
        let d: Vec<f64> = w.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        Ok((0..d.len())
            .map(|i| (0..d.len()).map(|j| self.q[(i, j)] * d[j]).sum())
            .collect())
    }

    fn hessian(&self, _w: &[f64]) -> Result<Array2<f64>> {
        Ok(self.q.clone())
    }
}

/// `S(w) = E_D(w) + sum_g alpha_g E_{w,g}(w)` over any data objective.
pub struct RegularizedObjective<'a, O: DataObjective + ?Sized> {
    pub data: &'a O,
    pub prior: &'a PriorSpec,
    alpha_of: Vec<f64>,
}

impl<'a, O: DataObjective + ?Sized> RegularizedObjective<'a, O> {
    pub fn new(data: &'a O, prior: &'a PriorSpec) -> Result<Self> {
        if data.dim() != prior.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "objective has {} parameters, prior covers {}",
                data.dim(),
                prior.n_params()
            )));
        }
        Ok(Self {
            data,
            prior,
            alpha_of: prior.alpha_per_index(),
        })
    }

    pub fn value(&self, w: &[f64]) -> Result<ObjectiveValue> {
        let data_term = self.data.value(w)?;
        let penalties = weight_penalty(w, self.prior)?;
        let total = data_term
            + penalties
                .iter()
                .zip(&self.prior.alphas)
                .map(|(e, a)| a * e)
                .sum::<f64>();
        Ok(ObjectiveValue {
            total,
            data_term,
            penalties,
        })
    }

    pub fn total(&self, w: &[f64]) -> Result<f64> {
        Ok(self.value(w)?.total)
    }

    /// `grad S = grad E_D + alpha_{g(i)} w_i`.
    pub fn grad(&self, w: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.data.grad(w)?;
        for (i, gi) in g.iter_mut().enumerate() {
            *gi += self.alpha_of[i] * w[i];
        }
        Ok(g)
    }
}

/// Regularized error of the network on a dataset (spec-facing wrapper).
pub fn regularized_error(
    cfg: &NetworkConfig,
    w: &[f64],
    x: &Array2<f64>,
    t: &[u64],
    prior: &PriorSpec,
) -> Result<ObjectiveValue> {
    let data = NetworkObjective::new(*cfg, x, t)?;
    RegularizedObjective::new(&data, prior)?.value(w)
}

/// Gradient of the regularized network error.
pub fn grad_regularized(
    cfg: &NetworkConfig,
    w: &[f64],
    x: &Array2<f64>,
    t: &[u64],
    prior: &PriorSpec,
) -> Result<Vec<f64>> {
    let data = NetworkObjective::new(*cfg, x, t)?;
    RegularizedObjective::new(&data, prior)?.grad(w)
}
