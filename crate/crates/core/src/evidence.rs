//! Hyperparameter re-estimation from the Hessian spectrum, alternated with
//! weight optimization until the alphas settle.
//!
//! One outer iteration minimizes `S(w)` at the current alphas, recomputes
//! the data-error Hessian at the minimizer, and maps each alpha through
//! `alpha_new = gamma / (2 E_w)` where `gamma = sum_i lambda_i /
//! (lambda_i + alpha)` counts the well-determined parameters. Negative
//! Hessian eigenvalues (off-minimum curvature or finite-difference noise)
//! are clamped before the update; without that, gamma leaves `[0, W]`.

use crate::error::{Error, Result};
use crate::objective::{weight_penalty, DataObjective, ObjectiveValue, PriorMode, PriorSpec};
use crate::optimizer::{minimize, TrainSettings};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

/// Clamping bounds applied to every re-estimated alpha; they keep the fixed
/// point from diverging on degenerate data.
pub const ALPHA_MIN: f64 = 1e-8;
pub const ALPHA_MAX: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvidenceSettings {
    pub max_outer: usize,
    /// Convergence is measured on the alphas: stop when the largest
    /// relative change falls below this.
    pub alpha_tol: f64,
    /// Eigenvalues of the data Hessian are floored here before the update.
    pub eigen_floor: f64,
    pub inner: TrainSettings,
}

impl Default for EvidenceSettings {
    fn default() -> Self {
        Self {
            max_outer: 20,
            alpha_tol: 1e-3,
            eigen_floor: 0.0,
            inner: TrainSettings::default(),
        }
    }
}

/// One outer-iteration record.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvidenceIteration {
    pub iteration: usize,
    pub alphas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub data_term: f64,
    pub total: f64,
    pub warnings: Vec<String>,
}

/// Final state of the evidence loop.
#[derive(Debug, Clone)]
pub struct EvidenceState {
    pub w_map: Vec<f64>,
    /// Prior with the final alphas.
    pub prior: PriorSpec,
    /// gamma per group (single mode: one entry, the total).
    pub gammas: Vec<f64>,
    /// Floored eigenvalues of the data Hessian at `w_map` (single mode).
    pub eigenvalues: Option<Vec<f64>>,
    /// Diagonal of `A^{-1}` at `w_map` (per-group mode).
    pub a_inv_diag: Option<Vec<f64>>,
    pub objective: ObjectiveValue,
    pub log: Vec<EvidenceIteration>,
    pub converged: bool,
}

/// Effective number of well-determined parameters,
/// `gamma = sum_i lambda_i / (lambda_i + alpha)`. Negative entries count
/// as zero; the result lies in `[0, W]`.
pub fn gamma_single(eigenvalues: &[f64], alpha: f64) -> f64 {
    eigenvalues
        .iter()
        .map(|&l| {
            let l = l.max(0.0);
            l / (l + alpha)
        })
        .sum()
}

/// `alpha_new = gamma / (2 E_w)`, clamped into `[ALPHA_MIN, ALPHA_MAX]`.
/// `E_w = 0` means every penalized weight is zero and the update is
/// undefined; the caller keeps its previous alpha.
pub fn reestimate_alpha_single(gamma: f64, e_w: f64) -> Result<f64> {
    if e_w <= 0.0 || e_w.is_nan() {
        return Err(Error::DegeneratePosterior(
            "all penalized weights are zero (E_w = 0)".into(),
        ));
    }
    Ok((gamma / (2.0 * e_w)).clamp(ALPHA_MIN, ALPHA_MAX))
}

/// Per-group update from the diagonal of `A^{-1}`:
/// `gamma_g = sum_{i in g} (1 - alpha_g [A^{-1}]_{ii})` clamped to
/// `[0, |g|]`, then `alpha_g_new = gamma_g / (2 E_{w,g})`. Groups with
/// `E_{w,g} = 0` keep their previous alpha and are reported in the
/// warnings.
pub fn reestimate_alpha_ard(
    a_inv_diag: &[f64],
    prior: &PriorSpec,
    w: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<String>)> {
    if a_inv_diag.len() != prior.n_params() {
        return Err(Error::ShapeMismatch(format!(
            "A^-1 diagonal has length {}, prior covers {}",
            a_inv_diag.len(),
            prior.n_params()
        )));
    }
    let penalties = weight_penalty(w, prior)?;
    let mut alphas = Vec::with_capacity(prior.groups.len());
    let mut gammas = Vec::with_capacity(prior.groups.len());
    let mut warnings = Vec::new();
    for (g, idxs) in prior.groups.iter().enumerate() {
        let alpha_old = prior.alphas[g];
        let gamma: f64 = idxs
            .iter()
            .map(|&i| 1.0 - alpha_old * a_inv_diag[i])
            .sum::<f64>()
            .clamp(0.0, idxs.len() as f64);
        gammas.push(gamma);
        if penalties[g] > 0.0 {
            alphas.push((gamma / (2.0 * penalties[g])).clamp(ALPHA_MIN, ALPHA_MAX));
        } else {
            warnings.push(format!("group {g}: E_w = 0, keeping previous alpha"));
            alphas.push(alpha_old);
        }
    }
    Ok((alphas, gammas, warnings))
}

/// Floored spectral decomposition of a symmetric ndarray matrix.
fn floored_eigen(h: &Array2<f64>, floor: f64) -> (Vec<f64>, DMatrix<f64>) {
    let n = h.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| h[(i, j)]);
    let eig = m.symmetric_eigen();
    let vals: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(floor)).collect();
    (vals, eig.eigenvectors)
}

/// `A = Q diag(floored) Q^T + diag(alpha)`, inverted by Cholesky. A jitter
/// of `1e-6 * trace(A)/W` (escalated tenfold if needed) is added when the
/// factorization fails.
fn a_inverse_diagonal(
    floored: &[f64],
    eigenvectors: &DMatrix<f64>,
    alpha_of: &[f64],
    warnings: &mut Vec<String>,
) -> Result<Vec<f64>> {
    let n = floored.len();
    let lam = DMatrix::from_diagonal(&DVector::from_row_slice(floored));
    let mut a = eigenvectors * lam * eigenvectors.transpose();
    for i in 0..n {
        a[(i, i)] += alpha_of[i];
    }
    let base_jitter = 1e-6 * a.trace() / n as f64;
    let mut jitter = 0.0;
    for attempt in 0..7 {
        let mut aj = a.clone();
        if jitter > 0.0 {
            for i in 0..n {
                aj[(i, i)] += jitter;
            }
        }
        if let Some(chol) = aj.cholesky() {
            if attempt > 0 {
                warnings.push(format!("A was singular; added diagonal jitter {jitter:.3e}"));
            }
            let inv = chol.inverse();
            return Ok((0..n).map(|i| inv[(i, i)]).collect());
        }
        jitter = if jitter == 0.0 { base_jitter } else { jitter * 10.0 };
    }
    Err(Error::DegeneratePosterior(
        "A remained singular after jitter escalation".into(),
    ))
}

/// Run the evidence loop from `w0` and the prior's starting alphas.
pub fn run_evidence<O: DataObjective + ?Sized>(
    data: &O,
    prior0: &PriorSpec,
    w0: &[f64],
    settings: &EvidenceSettings,
) -> Result<EvidenceState> {
    if settings.max_outer < 1 {
        return Err(Error::InvalidInput("outer iteration cap must be >= 1".into()));
    }
    if settings.alpha_tol <= 0.0 || settings.alpha_tol.is_nan() {
        return Err(Error::InvalidInput("alpha tolerance must be positive".into()));
    }
    let mut prior = prior0.clone();
    let mut w = w0.to_vec();
    let mut log: Vec<EvidenceIteration> = Vec::new();
    let mut converged = false;
    let mut eigenvalues = None;
    let mut a_inv_diag = None;
    let mut gammas = vec![0.0; prior.groups.len()];
    let mut objective = None;

    for outer in 0..settings.max_outer {
        // Inner failures surface with the loop position and the best
        // iterate so far attached.
        let fit = minimize(data, &prior, &w, &settings.inner).map_err(|e| match e {
            Error::OptimizationFailed { reason, last_iterate } => Error::OptimizationFailed {
                reason: format!("evidence outer iteration {outer}: {reason}"),
                last_iterate,
            },
            other => other,
        })?;
        w = fit.weights;
        objective = Some(fit.objective.clone());

        // The Hessian is recomputed at every outer iterate, never reused.
        let hess = data.hessian(&w)?;
        let (floored, vectors) = floored_eigen(&hess, settings.eigen_floor);

        let mut warnings = Vec::new();
        let (new_alphas, new_gammas) = match prior.mode {
            PriorMode::Single => {
                let e_w_total: f64 = weight_penalty(&w, &prior)?.iter().sum();
                let gamma = gamma_single(&floored, prior.alphas[0]);
                let alpha_new = match reestimate_alpha_single(gamma, e_w_total) {
                    Ok(a) => {
                        if gamma <= 0.0 {
                            warnings.push("gamma = 0: no well-determined parameters, alpha clamped".into());
                        }
                        a
                    }
                    Err(Error::DegeneratePosterior(msg)) => {
                        warnings.push(format!("{msg}; keeping previous alpha"));
                        prior.alphas[0]
                    }
                    Err(e) => return Err(e),
                };
                eigenvalues = Some(floored.clone());
                (vec![alpha_new; prior.alphas.len()], vec![gamma])
            }
            PriorMode::Ard => {
                let alpha_of = prior.alpha_per_index();
                let diag = a_inverse_diagonal(&floored, &vectors, &alpha_of, &mut warnings)?;
                let (alphas, gs, ws) = reestimate_alpha_ard(&diag, &prior, &w)?;
                warnings.extend(ws);
                a_inv_diag = Some(diag);
                (alphas, gs)
            }
        };

        let rel_change = prior
            .alphas
            .iter()
            .zip(&new_alphas)
            .map(|(old, new)| (new - old).abs() / old.abs().max(ALPHA_MIN))
            .fold(0.0f64, f64::max);

        gammas = new_gammas.clone();
        log.push(EvidenceIteration {
            iteration: outer,
            alphas: new_alphas.clone(),
            gammas: new_gammas,
            data_term: fit.objective.data_term,
            total: fit.objective.total,
            warnings,
        });
        prior = prior.with_alphas(new_alphas)?;

        if rel_change < settings.alpha_tol {
            converged = true;
            break;
        }
    }

    Ok(EvidenceState {
        w_map: w,
        prior,
        gammas,
        eigenvalues,
        a_inv_diag,
        objective: objective.expect("at least one outer iteration ran"),
        log,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::QuadraticObjective;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gamma_hand_values() {
        // all eigenvalues equal to alpha: each term is 1/2
        assert_abs_diff_eq!(gamma_single(&[2.0, 2.0], 2.0), 1.0);
        assert_abs_diff_eq!(gamma_single(&[3.0, 1.0], 1.0), 1.25);
        // huge eigenvalues: every parameter well determined
        assert_abs_diff_eq!(gamma_single(&[1e12, 1e12], 1.0), 2.0, epsilon = 1e-9);
        // negatives clamp to zero contribution
        assert_abs_diff_eq!(gamma_single(&[-5.0, 1.0], 1.0), 0.5);
    }

    #[test]
    fn reestimate_hand_values() {
        assert_abs_diff_eq!(reestimate_alpha_single(1.25, 0.5).unwrap(), 1.25);
        let w = 4.0;
        assert_abs_diff_eq!(reestimate_alpha_single(w, w / 2.0).unwrap(), 1.0);
        // gamma = 0 clamps to the floor instead of returning 0
        assert_abs_diff_eq!(reestimate_alpha_single(0.0, 0.5).unwrap(), ALPHA_MIN);
        assert!(matches!(
            reestimate_alpha_single(1.0, 0.0),
            Err(Error::DegeneratePosterior(_))
        ));
    }

    #[test]
    fn ard_single_group_matches_eigen_form() {
        // Trace identity: sum(1 - alpha [A^-1]_ii) = sum lambda_i /
        // (lambda_i + alpha) when A = H + alpha I.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = 4;
            let m = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
            let spd = &m * m.transpose() + DMatrix::identity(n, n) * 0.1;
            let alpha = 0.5 + rng.random::<f64>();
            let eig = spd.clone().symmetric_eigen();
            let gamma_eig = gamma_single(eig.eigenvalues.as_slice(), alpha);

            let a = &spd + DMatrix::identity(n, n) * alpha;
            let inv = a.cholesky().unwrap().inverse();
            let gamma_trace: f64 = (0..n).map(|i| 1.0 - alpha * inv[(i, i)]).sum();
            assert_abs_diff_eq!(gamma_eig, gamma_trace, epsilon = 1e-8 * gamma_eig.abs().max(1.0));
        }
    }

    #[test]
    fn ard_two_weight_hand_case() {
        // Diagonal A with A^-1_ii = 1/(lambda_i + alpha): lambda = [3, 1],
        // alpha = 1, E_w = 0.5 -> alpha_new = 1.25 as in the single-alpha
        // case.
        let prior = PriorSpec::single(1.0, 2).unwrap();
        let a_inv = [1.0 / 4.0, 1.0 / 2.0];
        let w = [1.0, 0.0]; // E_w = 0.5
        let (alphas, gammas, warnings) = reestimate_alpha_ard(&a_inv, &prior, &w).unwrap();
        assert!(warnings.is_empty());
        assert_abs_diff_eq!(gammas[0], 1.25, epsilon = 1e-12);
        assert_abs_diff_eq!(alphas[0], 1.25, epsilon = 1e-12);
    }

    #[test]
    fn ard_fully_penalized_group_has_zero_gamma() {
        // alpha -> huge with tiny weights: A ~ diag(alpha), so
        // 1 - alpha/alpha -> 0 per index.
        let prior = PriorSpec::with_groups(
            crate::objective::PriorMode::Ard,
            vec![1e8],
            vec![vec![0, 1]],
        )
        .unwrap();
        let a_inv = [1.0 / 1e8, 1.0 / 1e8];
        let w = [1e-9, -1e-9];
        let (_, gammas, _) = reestimate_alpha_ard(&a_inv, &prior, &w).unwrap();
        assert!(gammas[0].abs() < 1e-6);
    }

    /// 200-iteration scalar fixed-point oracle for the shifted quadratic
    /// surrogate: alpha -> gamma(alpha) / (2 E_w(alpha)) with
    /// w*(alpha) = (Q + alpha I)^-1 Q c.
    fn quadratic_fixed_point(q: &[f64; 2], c: &[f64; 2], mut alpha: f64) -> f64 {
        for _ in 0..200 {
            let w: Vec<f64> = (0..2).map(|i| q[i] * c[i] / (q[i] + alpha)).collect();
            let e_w = 0.5 * (w[0] * w[0] + w[1] * w[1]);
            let gamma = q[0] / (q[0] + alpha) + q[1] / (q[1] + alpha);
            alpha = (gamma / (2.0 * e_w)).clamp(ALPHA_MIN, ALPHA_MAX);
        }
        alpha
    }

    #[test]
    fn evidence_matches_fixed_point_oracle_on_quadratic() {
        let q = QuadraticObjective::new(arr2(&[[3.0, 0.0], [0.0, 1.0]]), vec![1.0, 1.0]).unwrap();
        let prior = PriorSpec::single(1.0, 2).unwrap();
        let settings = EvidenceSettings {
            max_outer: 200,
            alpha_tol: 1e-10,
            inner: TrainSettings {
                grad_tol: 1e-12,
                objective_tol: 1e-16,
                max_iters: 500,
                ..Default::default()
            },
            ..Default::default()
        };
        let state = run_evidence(&q, &prior, &[0.0, 0.0], &settings).unwrap();
        let oracle = quadratic_fixed_point(&[3.0, 1.0], &[1.0, 1.0], 1.0);
        assert!(state.converged);
        assert_abs_diff_eq!(state.prior.alphas[0], oracle, epsilon = 1e-4);
    }

    #[test]
    fn evidence_infinite_tolerance_stops_after_one_iteration() {
        let q = QuadraticObjective::new(arr2(&[[2.0, 0.0], [0.0, 1.0]]), vec![1.0, -1.0]).unwrap();
        let prior = PriorSpec::single(0.5, 2).unwrap();
        let settings = EvidenceSettings {
            alpha_tol: f64::INFINITY,
            ..Default::default()
        };
        let state = run_evidence(&q, &prior, &[0.0, 0.0], &settings).unwrap();
        assert_eq!(state.log.len(), 1);
        assert!(state.converged);
    }

    #[test]
    fn evidence_alpha_grows_on_pure_noise_targets() {
        // Targets generated at w = 0 truth: the network weights are
        // undetermined and alpha should ratchet upward.
        use crate::net::{init_weights, NetworkConfig};
        use crate::objective::NetworkObjective;
        let cfg = NetworkConfig::new(1, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 40;
        let x = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>());
        // w = 0 truth means rate 1 everywhere.
        let t: Vec<u64> = (0..n)
            .map(|_| crate::data::poisson_draw(1.0, &mut rng).unwrap())
            .collect();
        let data = NetworkObjective::new(cfg, &x, &t).unwrap();
        let prior = PriorSpec::single_for(&cfg, 0.075).unwrap();
        let settings = EvidenceSettings {
            max_outer: 4,
            alpha_tol: 1e-12,
            inner: TrainSettings {
                max_iters: 300,
                seed: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let w0 = init_weights(&cfg, 1);
        let state = run_evidence(&data, &prior, &w0, &settings).unwrap();
        let alphas: Vec<f64> = state.log.iter().map(|it| it.alphas[0]).collect();
        assert!(alphas.len() >= 3);
        for pair in alphas.windows(2) {
            assert!(pair[1] >= pair[0] * 0.99, "alpha not growing: {alphas:?}");
        }
        assert!(alphas[alphas.len() - 1] > alphas[0]);
    }

    #[test]
    fn evidence_log_respects_cap_and_invariants() {
        let q = QuadraticObjective::new(arr2(&[[3.0, 0.0], [0.0, 1.0]]), vec![1.0, 1.0]).unwrap();
        let prior = PriorSpec::single(1.0, 2).unwrap();
        let settings = EvidenceSettings {
            max_outer: 5,
            alpha_tol: 1e-14,
            ..Default::default()
        };
        let state = run_evidence(&q, &prior, &[0.0, 0.0], &settings).unwrap();
        assert!(state.log.len() <= 5);
        for it in &state.log {
            for (g, &gamma) in it.gammas.iter().enumerate() {
                let size = state.prior.groups.get(g).map_or(2, |v| v.len()) as f64;
                assert!((0.0..=size.max(2.0)).contains(&gamma));
            }
            for &a in &it.alphas {
                assert!((ALPHA_MIN..=ALPHA_MAX).contains(&a));
            }
        }
    }
}
