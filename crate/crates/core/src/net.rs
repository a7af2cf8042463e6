//! Single-hidden-layer network with tanh hidden units and an exponential
//! output unit, producing a strictly positive Poisson rate per input row.
//!
//! The flat parameter layout groups first-layer weights by the covariate they
//! fan out from, which is what the per-covariate relevance priors key on:
//!
//! ```text
//! [ w1[j,i] for i in 0..d, j in 0..m | b1[0..m] | w2[0..m] | b2 ]
//! ```
//!
//! so group `i < d` holds covariate i's fan-out weights, followed by one
//! group each for hidden biases, second-layer weights, and the output bias.

use crate::error::{Error, Result};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Pre-activation bound for the exponential output. Exceeding it is an
/// error, not a clamp: clamping would corrupt gradients undetectably.
pub const DEFAULT_EXP_CAP: f64 = 700.0;

/// Architecture: `n_inputs` covariates, `n_hidden` tanh units, one
/// exponential output.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetworkConfig {
    pub n_inputs: usize,
    pub n_hidden: usize,
    /// Cap on the output pre-activation before exp.
    pub exp_cap: f64,
}

impl NetworkConfig {
    pub fn new(n_inputs: usize, n_hidden: usize) -> Result<Self> {
        if n_inputs < 1 || n_hidden < 1 {
            return Err(Error::InvalidInput(format!(
                "network needs at least one input and one hidden unit (got d={n_inputs}, m={n_hidden})"
            )));
        }
        Ok(Self {
            n_inputs,
            n_hidden,
            exp_cap: DEFAULT_EXP_CAP,
        })
    }

    pub fn with_exp_cap(mut self, cap: f64) -> Self {
        self.exp_cap = cap;
        self
    }

    /// Total parameter count W = m·d + m + m + 1.
    pub fn n_params(&self) -> usize {
        self.n_hidden * self.n_inputs + 2 * self.n_hidden + 1
    }

    /// Number of penalty groups: one per covariate plus hidden biases,
    /// second-layer weights, and the output bias.
    pub fn n_groups(&self) -> usize {
        self.n_inputs + 3
    }

    /// Flat-index partition into penalty groups.
    pub fn group_indices(&self) -> Vec<Vec<usize>> {
        let (d, m) = (self.n_inputs, self.n_hidden);
        let mut groups = Vec::with_capacity(self.n_groups());
        for i in 0..d {
            groups.push((i * m..(i + 1) * m).collect());
        }
        groups.push((d * m..d * m + m).collect());
        groups.push((d * m + m..d * m + 2 * m).collect());
        groups.push(vec![d * m + 2 * m]);
        groups
    }

    /// One name per flat parameter, in pack order (`w1_j_i` is hidden unit
    /// j's weight on covariate i, 1-based).
    pub fn param_names(&self) -> Vec<String> {
        let (d, m) = (self.n_inputs, self.n_hidden);
        let mut names = Vec::with_capacity(self.n_params());
        for i in 0..d {
            for j in 0..m {
                names.push(format!("w1_{}_{}", j + 1, i + 1));
            }
        }
        for j in 0..m {
            names.push(format!("b1_{}", j + 1));
        }
        for j in 0..m {
            names.push(format!("w2_{}", j + 1));
        }
        names.push("b2".to_string());
        names
    }
}

/// Structured view of the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredWeights {
    /// `first_layer[(j, i)]` is hidden unit j's weight on covariate i.
    pub first_layer: Array2<f64>,
    pub hidden_bias: Vec<f64>,
    pub second_layer: Vec<f64>,
    pub output_bias: f64,
}

/// Flatten structured weights into the canonical layout.
pub fn pack(cfg: &NetworkConfig, sw: &StructuredWeights) -> Result<Vec<f64>> {
    let (d, m) = (cfg.n_inputs, cfg.n_hidden);
    if sw.first_layer.nrows() != m
        || sw.first_layer.ncols() != d
        || sw.hidden_bias.len() != m
        || sw.second_layer.len() != m
    {
        return Err(Error::ShapeMismatch(format!(
            "structured weights do not match d={d}, m={m}"
        )));
    }
    let mut w = Vec::with_capacity(cfg.n_params());
    for i in 0..d {
        for j in 0..m {
            w.push(sw.first_layer[(j, i)]);
        }
    }
    w.extend_from_slice(&sw.hidden_bias);
    w.extend_from_slice(&sw.second_layer);
    w.push(sw.output_bias);
    Ok(w)
}

/// Rebuild structured weights from the flat layout.
pub fn unpack(cfg: &NetworkConfig, w: &[f64]) -> Result<StructuredWeights> {
    let (d, m) = (cfg.n_inputs, cfg.n_hidden);
    if w.len() != cfg.n_params() {
        return Err(Error::ShapeMismatch(format!(
            "weight vector has length {}, expected {}",
            w.len(),
            cfg.n_params()
        )));
    }
    let mut first_layer = Array2::zeros((m, d));
    for i in 0..d {
        for j in 0..m {
            first_layer[(j, i)] = w[i * m + j];
        }
    }
    Ok(StructuredWeights {
        first_layer,
        hidden_bias: w[d * m..d * m + m].to_vec(),
        second_layer: w[d * m + m..d * m + 2 * m].to_vec(),
        output_bias: w[d * m + 2 * m],
    })
}

/// Seeded Gaussian initialization, sd 1/sqrt(fan-in) per layer, which keeps
/// the tanh units unsaturated at the start of training.
pub fn init_weights(cfg: &NetworkConfig, seed: u64) -> Vec<f64> {
    let (d, m) = (cfg.n_inputs, cfg.n_hidden);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer1 = Normal::new(0.0, 1.0 / (d as f64).sqrt()).unwrap();
    let layer2 = Normal::new(0.0, 1.0 / (m as f64).sqrt()).unwrap();
    let mut w = Vec::with_capacity(cfg.n_params());
    for _ in 0..d * m + m {
        w.push(layer1.sample(&mut rng));
    }
    for _ in 0..m + 1 {
        w.push(layer2.sample(&mut rng));
    }
    w
}

fn check_weights(cfg: &NetworkConfig, w: &[f64]) -> Result<()> {
    if w.len() != cfg.n_params() {
        return Err(Error::ShapeMismatch(format!(
            "weight vector has length {}, expected {}",
            w.len(),
            cfg.n_params()
        )));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite weight".into()));
    }
    Ok(())
}

/// Forward pass for one row, with scratch output of the hidden activations.
/// `row` only labels errors.
#[inline]
fn forward_row(
    cfg: &NetworkConfig,
    w: &[f64],
    x: &[f64],
    row: usize,
    hidden: &mut [f64],
) -> Result<f64> {
    let (d, m) = (cfg.n_inputs, cfg.n_hidden);
    let b1 = &w[d * m..d * m + m];
    let w2 = &w[d * m + m..d * m + 2 * m];
    let b2 = w[d * m + 2 * m];
    for (j, h) in hidden.iter_mut().enumerate() {
        let mut a = b1[j];
        for (i, &xi) in x.iter().enumerate() {
            a += w[i * m + j] * xi;
        }
        *h = a.tanh();
    }
    let mut u = b2;
    for j in 0..m {
        u += w2[j] * hidden[j];
    }
    if !u.is_finite() || u > cfg.exp_cap {
        return Err(Error::RateOverflow {
            row,
            value: u,
            cap: cfg.exp_cap,
        });
    }
    Ok(u.exp())
}

/// Rate for a single input row.
pub fn forward(cfg: &NetworkConfig, w: &[f64], x: &[f64]) -> Result<f64> {
    check_weights(cfg, w)?;
    if x.len() != cfg.n_inputs {
        return Err(Error::ShapeMismatch(format!(
            "input has {} columns, expected {}",
            x.len(),
            cfg.n_inputs
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite input".into()));
    }
    let mut hidden = vec![0.0; cfg.n_hidden];
    forward_row(cfg, w, x, 0, &mut hidden)
}

/// Rates for every row of `x`.
pub fn forward_batch(cfg: &NetworkConfig, w: &[f64], x: &Array2<f64>) -> Result<Vec<f64>> {
    check_weights(cfg, w)?;
    let d = cfg.n_inputs;
    if x.ncols() != d {
        return Err(Error::ShapeMismatch(format!(
            "input matrix has {} columns, expected {d}",
            x.ncols()
        )));
    }
    let flat = x.as_standard_layout();
    let xs = flat.as_slice().expect("standard layout");
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite input".into()));
    }
    let n = x.nrows();
    let mut hidden = vec![0.0; cfg.n_hidden];
    let mut rates = Vec::with_capacity(n);
    for row in 0..n {
        rates.push(forward_row(cfg, w, &xs[row * d..(row + 1) * d], row, &mut hidden)?);
    }
    Ok(rates)
}

/// Gradient of the Poisson data error
/// `E_D(w) = sum_n [ y(x_n; w) - t_n ln y(x_n; w) ]`
/// by back-propagation. The exponential output with Poisson error is the
/// canonical pairing, so the output delta is simply `y_n - t_n`.
pub fn grad_data_error(
    cfg: &NetworkConfig,
    w: &[f64],
    x: &Array2<f64>,
    t: &[u64],
) -> Result<Vec<f64>> {
    check_weights(cfg, w)?;
    let (d, m) = (cfg.n_inputs, cfg.n_hidden);
    if x.ncols() != d {
        return Err(Error::ShapeMismatch(format!(
            "input matrix has {} columns, expected {d}",
            x.ncols()
        )));
    }
    if x.nrows() != t.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} input rows vs {} targets",
            x.nrows(),
            t.len()
        )));
    }
    let flat = x.as_standard_layout();
    let xs = flat.as_slice().expect("standard layout");
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite input".into()));
    }

    let b1 = &w[d * m..d * m + m];
    let w2 = &w[d * m + m..d * m + 2 * m];
    let b2 = w[d * m + 2 * m];
    let mut grad = vec![0.0; cfg.n_params()];
    let mut hidden = vec![0.0; m];

    for (row, &tn) in t.iter().enumerate() {
        let xr = &xs[row * d..(row + 1) * d];
        for (j, h) in hidden.iter_mut().enumerate() {
            let mut a = b1[j];
            for (i, &xi) in xr.iter().enumerate() {
                a += w[i * m + j] * xi;
            }
            *h = a.tanh();
        }
        let mut u = b2;
        for j in 0..m {
            u += w2[j] * hidden[j];
        }
        if !u.is_finite() || u > cfg.exp_cap {
            return Err(Error::RateOverflow {
                row,
                value: u,
                cap: cfg.exp_cap,
            });
        }
        let y = u.exp();
        let delta_out = y - tn as f64;

        grad[d * m + 2 * m] += delta_out;
        for j in 0..m {
            grad[d * m + m + j] += delta_out * hidden[j];
            let delta_j = delta_out * w2[j] * (1.0 - hidden[j] * hidden[j]);
            grad[d * m + j] += delta_j;
            for (i, &xi) in xr.iter().enumerate() {
                grad[i * m + j] += delta_j * xi;
            }
        }
    }
    Ok(grad)
}

/// Value of the Poisson data error for one weight vector.
pub fn data_error(cfg: &NetworkConfig, w: &[f64], x: &Array2<f64>, t: &[u64]) -> Result<f64> {
    let rates = forward_batch(cfg, w, x)?;
    if rates.len() != t.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rates vs {} targets",
            rates.len(),
            t.len()
        )));
    }
    Ok(rates
        .iter()
        .zip(t.iter())
        .map(|(&y, &tn)| y - tn as f64 * y.ln())
        .sum())
}

/// Central finite differences of a gradient function, step scaled per
/// coordinate as `1e-5 * (1 + |w_i|)`. Columns are independent gradient
/// evaluations.
pub fn fd_hessian<F>(w: &[f64], mut grad: F) -> Result<Array2<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = w.len();
    let mut h = Array2::zeros((n, n));
    let mut wp = w.to_vec();
    for i in 0..n {
        let step = 1e-5 * (1.0 + w[i].abs());
        wp[i] = w[i] + step;
        let gp = grad(&wp)?;
        wp[i] = w[i] - step;
        let gm = grad(&wp)?;
        wp[i] = w[i];
        for j in 0..n {
            h[(j, i)] = (gp[j] - gm[j]) / (2.0 * step);
        }
    }
    Ok(h)
}

/// Unsymmetrized finite-difference Hessian of the data error. Exposed so the
/// FD asymmetry bound can be checked directly.
pub fn hessian_data_error_raw(
    cfg: &NetworkConfig,
    w: &[f64],
    x: &Array2<f64>,
    t: &[u64],
) -> Result<Array2<f64>> {
    check_weights(cfg, w)?;
    fd_hessian(w, |wi| grad_data_error(cfg, wi, x, t))
}

/// Hessian of the data error, symmetrized as (H + Hᵀ)/2.
pub fn hessian_data_error(
    cfg: &NetworkConfig,
    w: &[f64],
    x: &Array2<f64>,
    t: &[u64],
) -> Result<Array2<f64>> {
    let h = hessian_data_error_raw(cfg, w, x, t)?;
    Ok(symmetrize(&h))
}

pub fn symmetrize(h: &Array2<f64>) -> Array2<f64> {
    let mut s = h.clone();
    for i in 0..h.nrows() {
        for j in 0..h.ncols() {
            s[(i, j)] = 0.5 * (h[(i, j)] + h[(j, i)]);
        }
    }
    s
}
