//! Penalized maximum-likelihood training: nonlinear conjugate-gradient
//! minimization of the regularized error with a backtracking line search,
//! k-fold cross-validation over the (alpha, hidden-nodes) grid, and
//! committees of independently initialized networks.

use crate::error::{Error, Result};
use crate::net::{self, NetworkConfig};
use crate::objective::{DataObjective, NetworkObjective, ObjectiveValue, PriorSpec, RegularizedObjective};
use crate::seeding::derive_seed;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Settings for one minimization run and for committee training.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainSettings {
    pub max_iters: usize,
    /// Stop when the infinity norm of the gradient falls below this.
    pub grad_tol: f64,
    /// Stop when one iteration improves the objective by less than this.
    pub objective_tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            max_iters: 500,
            grad_tol: 1e-5,
            objective_tol: 1e-9,
            restarts: 10,
            seed: 0,
        }
    }
}

impl TrainSettings {
    fn validate(&self) -> Result<()> {
        if self.grad_tol <= 0.0 || self.objective_tol <= 0.0 {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        if self.restarts < 1 {
            return Err(Error::InvalidInput("restarts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum StopReason {
    GradientTolerance,
    SmallDecrease,
    IterationCap,
    LineSearchStall,
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub weights: Vec<f64>,
    pub objective: ObjectiveValue,
    /// Objective value per accepted iterate, starting at the initial point.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub stop: StopReason,
    /// True when the gradient tolerance was met.
    pub converged: bool,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Minimize `S(w) = E_D + sum_g alpha_g E_{w,g}` from `w0` by
/// Polak-Ribiere conjugate gradients with an Armijo backtracking line
/// search. The accepted-iterate trace is non-increasing by construction.
pub fn minimize<O: DataObjective + ?Sized>(
    data: &O,
    prior: &PriorSpec,
    w0: &[f64],
    settings: &TrainSettings,
) -> Result<MinimizeResult> {
    settings.validate()?;
    let obj = RegularizedObjective::new(data, prior)?;
    let mut w = w0.to_vec();

    let mut f = match obj.total(&w) {
        Ok(v) if v.is_finite() => v,
        _ => {
            return Err(Error::OptimizationFailed {
                reason: "objective not finite at the starting point".into(),
                last_iterate: w,
            })
        }
    };
    let mut g = obj.grad(&w)?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::OptimizationFailed {
            reason: "gradient not finite at the starting point".into(),
            last_iterate: w,
        });
    }

    let mut trace = vec![f];
    let mut dir: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut step = 1.0 / (1.0 + norm2(&g));
    let mut stop = StopReason::IterationCap;
    let mut iterations = 0;

    for iter in 0..settings.max_iters {
        if inf_norm(&g) <= settings.grad_tol {
            stop = StopReason::GradientTolerance;
            break;
        }
        iterations = iter + 1;

        // Descent guard: fall back to steepest descent when the conjugate
        // direction stops pointing downhill.
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
        }

        // Backtracking with the sufficient-decrease condition; trial points
        // that overflow the rate cap just shrink the step.
        let mut a = step;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let wt: Vec<f64> = w.iter().zip(&dir).map(|(wi, di)| wi + a * di).collect();
            match obj.total(&wt) {
                Ok(ft) if ft.is_finite() && ft <= f + ARMIJO_C1 * a * slope => {
                    accepted = Some((wt, ft));
                    break;
                }
                _ => a *= 0.5,
            }
        }
        let Some((wt, ft)) = accepted else {
            stop = StopReason::LineSearchStall;
            break;
        };

        let g_new = obj.grad(&wt)?;
        if g_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::OptimizationFailed {
                reason: format!("gradient not finite at iteration {iterations}"),
                last_iterate: w,
            });
        }

        // Polak-Ribiere+ restart-safe update.
        let gg = dot(&g, &g);
        let beta = if gg > 0.0 {
            let mut num = 0.0;
            for i in 0..g.len() {
                num += g_new[i] * (g_new[i] - g[i]);
            }
            (num / gg).max(0.0)
        } else {
            0.0
        };
        for i in 0..dir.len() {
            dir[i] = -g_new[i] + beta * dir[i];
        }

        let decrease = f - ft;
        w = wt;
        f = ft;
        g = g_new;
        trace.push(f);
        step = (a * 2.0).min(1.0);

        if decrease < settings.objective_tol {
            stop = StopReason::SmallDecrease;
            break;
        }
    }
    if stop == StopReason::IterationCap && inf_norm(&g) <= settings.grad_tol {
        stop = StopReason::GradientTolerance;
    }

    let objective = obj.value(&w)?;
    Ok(MinimizeResult {
        weights: w,
        objective,
        trace,
        iterations,
        stop,
        converged: stop == StopReason::GradientTolerance,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

/// Cross-validation plan over the alpha and hidden-node grids.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CvPlan {
    pub folds: usize,
    pub alphas: Vec<f64>,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for CvPlan {
    fn default() -> Self {
        Self {
            folds: 5,
            alphas: vec![0.01, 0.025, 0.05, 0.075, 0.1],
            hidden: (3..=13).collect(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CvCell {
    pub alpha: f64,
    pub hidden: usize,
    /// Mean held-out per-observation Poisson NLL across folds.
    pub mean_nll: f64,
}

#[derive(Debug, Clone)]
pub struct CvTable {
    pub cells: Vec<CvCell>,
    pub best_alpha: f64,
    pub best_hidden: usize,
    pub warnings: Vec<String>,
}

/// Deterministic fold labels: a seeded permutation dealt round-robin, so
/// fold sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut fold = vec![0usize; n];
    for (pos, &idx) in order.iter().enumerate() {
        fold[idx] = pos % folds;
    }
    fold
}

/// Grid search by k-fold cross-validation; the selection metric is held-out
/// Poisson NLL (the model's native loss). Ties prefer fewer hidden nodes,
/// then smaller alpha.
pub fn cross_validate(
    x: &Array2<f64>,
    t: &[u64],
    plan: &CvPlan,
    inner: &TrainSettings,
) -> Result<CvTable> {
    let n = x.nrows();
    if plan.folds < 2 {
        return Err(Error::InvalidInput("folds must be >= 2".into()));
    }
    if plan.alphas.is_empty() || plan.hidden.is_empty() {
        return Err(Error::InvalidInput("grids must be non-empty".into()));
    }
    if n < plan.folds {
        return Err(Error::InvalidInput(format!(
            "{n} rows cannot be split into {} folds",
            plan.folds
        )));
    }
    let d = x.ncols();
    let fold_of = fold_assignment(n, plan.folds, plan.seed);
    let mut warnings = Vec::new();

    // Pre-split the rows once per fold.
    let mut splits = Vec::with_capacity(plan.folds);
    for f in 0..plan.folds {
        let train_rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let valid_rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        let xtr = select_rows(x, &train_rows);
        let ttr: Vec<u64> = train_rows.iter().map(|&i| t[i]).collect();
        let xva = select_rows(x, &valid_rows);
        let tva: Vec<u64> = valid_rows.iter().map(|&i| t[i]).collect();
        for c in 0..d {
            let col = xtr.column(c);
            let first = col[0];
            if col.iter().all(|&v| v == first) {
                warnings.push(format!(
                    "fold {f}: covariate {c} has zero variance in the training part"
                ));
            }
        }
        splits.push((xtr, ttr, xva, tva));
    }

    let mut cells = Vec::with_capacity(plan.alphas.len() * plan.hidden.len());
    for &m in &plan.hidden {
        for &alpha in &plan.alphas {
            let cfg = NetworkConfig::new(d, m)?;
            let prior = PriorSpec::single_for(&cfg, alpha)?;
            let mut nll_sum = 0.0;
            for (f, (xtr, ttr, xva, tva)) in splits.iter().enumerate() {
                // Seeded from the cell's values, so duplicated cells tie
                // exactly.
                let cell_seed = derive_seed(
                    plan.seed,
                    &format!("cv-m{}-a{}-f{}", m, alpha.to_bits(), f),
                );
                let data = NetworkObjective::new(cfg, xtr, ttr)?;
                let w0 = net::init_weights(&cfg, cell_seed);
                let fit = minimize(&data, &prior, &w0, inner)?;
                let rates = net::forward_batch(&cfg, &fit.weights, xva)?;
                nll_sum += crate::objective::poisson_nll(&rates, tva)? / tva.len() as f64;
            }
            cells.push(CvCell {
                alpha,
                hidden: m,
                mean_nll: nll_sum / plan.folds as f64,
            });
        }
    }

    let best = cells
        .iter()
        .min_by(|a, b| {
            (a.mean_nll, a.hidden, a.alpha)
                .partial_cmp(&(b.mean_nll, b.hidden, b.alpha))
                .expect("NLL values are finite")
        })
        .expect("grid is non-empty");
    Ok(CvTable {
        best_alpha: best.alpha,
        best_hidden: best.hidden,
        cells,
        warnings,
    })
}

fn select_rows(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let d = x.ncols();
    let mut out = Array2::zeros((rows.len(), d));
    for (r, &i) in rows.iter().enumerate() {
        out.row_mut(r).assign(&x.row(i));
    }
    out
}

/// One committee member: an independently initialized fit.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CommitteeMember {
    pub seed: u64,
    pub weights: Vec<f64>,
    pub converged: bool,
    /// Set when the member's optimization diverged and the stored weights
    /// are its last finite iterate.
    pub diverged: bool,
    pub final_objective: f64,
}

/// Committee of restarts; the prediction is the arithmetic mean of the
/// member rates per row. Weights are never averaged: hidden-unit
/// permutation symmetry makes that meaningless.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CommitteeModel {
    pub cfg: NetworkConfig,
    pub members: Vec<CommitteeMember>,
}

impl CommitteeModel {
    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        let mut mean = vec![0.0; x.nrows()];
        for member in &self.members {
            let rates = net::forward_batch(&self.cfg, &member.weights, x)?;
            for (m, r) in mean.iter_mut().zip(&rates) {
                *m += r;
            }
        }
        let k = self.members.len() as f64;
        for m in mean.iter_mut() {
            *m /= k;
        }
        Ok(mean)
    }
}

/// Train `settings.restarts` members from seeded initializations. Members
/// that diverge are retained with their last finite iterate and flagged;
/// only if every member diverges does the committee fail.
pub fn train_committee(
    cfg: &NetworkConfig,
    x: &Array2<f64>,
    t: &[u64],
    prior: &PriorSpec,
    settings: &TrainSettings,
) -> Result<CommitteeModel> {
    settings.validate()?;
    let data = NetworkObjective::new(*cfg, x, t)?;
    let mut members = Vec::with_capacity(settings.restarts);
    let mut any_ok = false;
    for k in 0..settings.restarts {
        let seed = derive_seed(settings.seed, &format!("committee-member-{k}"));
        let w0 = net::init_weights(cfg, seed);
        match minimize(&data, prior, &w0, settings) {
            Ok(res) => {
                any_ok = true;
                members.push(CommitteeMember {
                    seed,
                    final_objective: res.objective.total,
                    weights: res.weights,
                    converged: res.converged,
                    diverged: false,
                });
            }
            Err(Error::OptimizationFailed { last_iterate, .. }) => {
                let final_objective = RegularizedObjective::new(&data, prior)?
                    .total(&last_iterate)
                    .unwrap_or(f64::INFINITY);
                members.push(CommitteeMember {
                    seed,
                    weights: last_iterate,
                    converged: false,
                    diverged: true,
                    final_objective,
                });
            }
            Err(e) => return Err(e),
        }
    }
    if !any_ok {
        return Err(Error::OptimizationFailed {
            reason: "every committee member diverged".into(),
            last_iterate: vec![],
        });
    }
    Ok(CommitteeModel { cfg: *cfg, members })
}
