//! Convergence diagnostics (estimated potential scale reduction over
//! multi-chain traces) and the four evaluation metrics.

use crate::error::{Error, Result};
use crate::hmc::Chain;

/// Estimated potential scale reduction for one scalar statistic across `m`
/// chains of length `n`:
///
/// ```text
/// W    = mean within-chain variance
/// B    = n * variance of chain means
/// Vhat = (n-1)/n * W + B/n
/// EPSR = sqrt(Vhat / W)
/// ```
///
/// Chains that are constant *and equal* make the statistic undefined;
/// constant but unequal chains report `+inf` as a flagged sentinel.
pub fn epsr(chains: &[Vec<f64>]) -> Result<f64> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::ChainMismatch(format!("need at least 2 chains, got {m}")));
    }
    let n = chains[0].len();
    if n < 2 {
        return Err(Error::ChainMismatch(format!("need chains of length >= 2, got {n}")));
    }
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::ChainMismatch("chains have unequal lengths".into()));
    }
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let within: f64 = chains
        .iter()
        .zip(&means)
        .map(|(c, &mu)| c.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m as f64;
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = nf * means.iter().map(|&mu| (mu - grand) * (mu - grand)).sum::<f64>()
        / (m as f64 - 1.0);
    if within == 0.0 {
        if b == 0.0 {
            return Err(Error::DegenerateStatistic(
                "all chains constant and equal".into(),
            ));
        }
        return Ok(f64::INFINITY);
    }
    let vhat = (nf - 1.0) / nf * within + b / nf;
    Ok((vhat / within).sqrt())
}

pub const EPSR_CUTOFF: f64 = 1.10;

#[derive(Debug, Clone, serde::Serialize)]
pub struct EpsrRow {
    pub name: String,
    /// NaN marks a statistic that was constant and equal in every chain.
    pub epsr: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EpsrReport {
    pub rows: Vec<EpsrRow>,
    pub n_chains: usize,
    pub chain_length: usize,
    pub pass_fraction: f64,
    pub worst_statistic: String,
    /// Regularized error per retained sample, one trace per chain, for the
    /// overlaid-sequence convergence check.
    pub s_traces: Vec<Vec<f64>>,
    pub notes: Vec<String>,
}

/// Caveat emitted with every report: weight traces are diagnosed raw,
/// without aligning hidden-unit permutations, so mode switching inflates
/// the weight EPSR values by design.
pub const PERMUTATION_CAVEAT: &str =
    "weight EPSR is computed on raw traces; hidden-unit permutation switching inflates it";

/// One EPSR row per weight index plus one for the regularized error
/// evaluated at every retained sample.
pub fn epsr_report<F>(chains: &[Chain], names: &[String], objective: F) -> Result<EpsrReport>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if chains.len() < 2 {
        return Err(Error::ChainMismatch(format!(
            "need at least 2 chains, got {}",
            chains.len()
        )));
    }
    let w = chains[0].n_params();
    let n = chains[0].samples.len();
    if chains.iter().any(|c| c.n_params() != w || c.samples.len() != n) {
        return Err(Error::ChainMismatch(
            "chains disagree on parameter count or length".into(),
        ));
    }
    if names.len() != w {
        return Err(Error::ShapeMismatch(format!(
            "{} names for {w} parameters",
            names.len()
        )));
    }

    let mut notes = vec![PERMUTATION_CAVEAT.to_string()];
    let mut rows = Vec::with_capacity(w + 1);
    let push_stat = |name: &str, traces: &[Vec<f64>], rows: &mut Vec<EpsrRow>, notes: &mut Vec<String>| -> Result<()> {
        match epsr(traces) {
            Ok(v) => rows.push(EpsrRow {
                name: name.to_string(),
                epsr: v,
                pass: v < EPSR_CUTOFF,
            }),
            Err(Error::DegenerateStatistic(_)) => {
                notes.push(format!("{name}: constant and equal in every chain"));
                rows.push(EpsrRow {
                    name: name.to_string(),
                    epsr: f64::NAN,
                    pass: false,
                });
            }
            Err(e) => return Err(e),
        }
        Ok(())
    };

    for k in 0..w {
        let traces: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.samples.iter().map(|s| s[k]).collect())
            .collect();
        push_stat(&names[k], &traces, &mut rows, &mut notes)?;
    }

    let s_traces: Vec<Vec<f64>> = chains
        .iter()
        .map(|c| c.samples.iter().map(|s| objective(s)).collect::<Result<Vec<f64>>>())
        .collect::<Result<Vec<_>>>()?;
    push_stat("error", &s_traces, &mut rows, &mut notes)?;

    let pass_fraction = rows.iter().filter(|r| r.pass).count() as f64 / rows.len() as f64;
    let worst = rows
        .iter()
        .filter(|r| !r.epsr.is_nan())
        .max_by(|a, b| a.epsr.partial_cmp(&b.epsr).unwrap())
        .map(|r| r.name.clone())
        .unwrap_or_else(|| "none".to_string());

    Ok(EpsrReport {
        rows,
        n_chains: chains.len(),
        chain_length: n,
        pass_fraction,
        worst_statistic: worst,
        s_traces,
        notes,
    })
}

/// One row of the evaluation table.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EvalRow {
    pub rmse: f64,
    pub mae: f64,
    /// Mean absolute percentage error |a-p|/a; absent when any actual is 0.
    pub mpe: Option<f64>,
    /// Squared error relative to the mean-only predictor; absent when the
    /// actuals have zero variance.
    pub rse: Option<f64>,
}

/// RMSE, MAE, MPE, RSE of predictions against actuals.
pub fn metrics(actual: &[f64], predicted: &[f64]) -> Result<EvalRow> {
    let n = actual.len();
    if n == 0 || n != predicted.len() {
        return Err(Error::ShapeMismatch(format!(
            "{n} actuals vs {} predictions",
            predicted.len()
        )));
    }
    let nf = n as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    for (&a, &p) in actual.iter().zip(predicted) {
        let e = a - p;
        sq += e * e;
        abs += e.abs();
    }
    let rmse = (sq / nf).sqrt();
    let mae = abs / nf;

    let mpe = if actual.iter().all(|&a| a > 0.0) {
        Some(
            actual
                .iter()
                .zip(predicted)
                .map(|(&a, &p)| (a - p).abs() / a)
                .sum::<f64>()
                / nf,
        )
    } else {
        None
    };

    let mean = actual.iter().sum::<f64>() / nf;
    let denom: f64 = actual.iter().map(|&a| (a - mean) * (a - mean)).sum();
    let rse = if denom > 0.0 { Some(sq / denom) } else { None };

    Ok(EvalRow { rmse, mae, mpe, rse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn epsr_identical_chains_hits_floor() {
        let n = 100;
        let chain: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let v = epsr(&[chain.clone(), chain]).unwrap();
        let expected = ((n as f64 - 1.0) / n as f64).sqrt();
        assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.994987, epsilon = 1e-6);
    }

    #[test]
    fn epsr_same_distribution_chains_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect()
        };
        let v = epsr(&[draw(10_000), draw(10_000)]).unwrap();
        assert!((0.99..1.01).contains(&v), "EPSR {v}");
    }

    #[test]
    fn epsr_separated_chains_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut draw = |n: usize, shift: f64| -> Vec<f64> {
            (0..n)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) + shift)
                .collect()
        };
        let v = epsr(&[draw(100, 0.0), draw(100, 10.0)]).unwrap();
        assert!(v > 2.0, "EPSR {v}");
    }

    #[test]
    fn epsr_degenerate_cases() {
        assert!(matches!(
            epsr(&[vec![1.0, 1.0], vec![1.0, 1.0]]),
            Err(Error::DegenerateStatistic(_))
        ));
        let v = epsr(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert!(v.is_infinite());
        assert!(epsr(&[vec![1.0, 2.0]]).is_err());
        assert!(epsr(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    proptest! {
        #[test]
        fn epsr_affine_invariant(seed in 0u64..100, a in prop::sample::select(vec![-3.0, 0.5, 2.0]), b in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let chains: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..50).map(|_| rng.random::<f64>()).collect())
                .collect();
            let transformed: Vec<Vec<f64>> = chains
                .iter()
                .map(|c| c.iter().map(|&v| a * v + b).collect())
                .collect();
            let v0 = epsr(&chains).unwrap();
            let v1 = epsr(&transformed).unwrap();
            prop_assert!((v0 - v1).abs() < 1e-9 * v0.max(1.0));
        }

        #[test]
        fn metrics_permutation_invariant(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 20;
            let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.5).collect();
            let p: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.5).collect();
            let mut idx: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                idx.swap(i, j);
            }
            let ap: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
            let pp: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
            let m0 = metrics(&a, &p).unwrap();
            let m1 = metrics(&ap, &pp).unwrap();
            prop_assert!((m0.rmse - m1.rmse).abs() < 1e-12);
            prop_assert!((m0.mae - m1.mae).abs() < 1e-12);
        }

        #[test]
        fn rmse_dominates_mae(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 15;
            let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 + 0.1).collect();
            let p: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 + 0.1).collect();
            let m = metrics(&a, &p).unwrap();
            prop_assert!(m.rmse >= m.mae - 1e-12);
        }
    }

    #[test]
    fn metrics_hand_case() {
        let m = metrics(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_abs_diff_eq!(m.rmse, 0.816497, epsilon = 1e-6);
        assert_abs_diff_eq!(m.mae, 0.666667, epsilon = 1e-6);
        assert_abs_diff_eq!(m.mpe.unwrap(), 0.444444, epsilon = 1e-6);
        assert_abs_diff_eq!(m.rse.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn metrics_perfect_predictions_are_zero() {
        let a = [1.5, 2.5, 0.5];
        let m = metrics(&a, &a).unwrap();
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.mae, 0.0);
        assert_eq!(m.mpe, Some(0.0));
        assert_eq!(m.rse, Some(0.0));
    }

    #[test]
    fn metrics_mean_predictor_has_unit_rse() {
        let a = [1.0, 4.0, 2.0, 5.0];
        let mean = a.iter().sum::<f64>() / 4.0;
        let m = metrics(&a, &[mean; 4]).unwrap();
        assert_abs_diff_eq!(m.rse.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn metrics_not_applicable_paths() {
        // zero actual: MPE is withheld, others computed
        let m = metrics(&[0.0, 2.0], &[1.0, 1.0]).unwrap();
        assert!(m.mpe.is_none());
        assert!(m.rmse > 0.0);
        // zero-variance actuals: RSE withheld
        let m = metrics(&[2.0, 2.0], &[1.0, 3.0]).unwrap();
        assert!(m.rse.is_none());
        assert!(m.mpe.is_some());
    }

    fn dummy_chain(samples: Vec<Vec<f64>>) -> Chain {
        Chain {
            samples,
            steps: vec![],
            burn_in: 0,
            thin: 1,
            seed: 0,
            initial_step_size: 0.1,
            final_step_size: 0.1,
            acceptance_rate: 1.0,
            low_acceptance_warning: false,
            alphas: vec![],
            data_hash: 0,
            rng_word_pos: 0,
        }
    }

    #[test]
    fn report_on_duplicated_chains_passes_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let samples: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
            .collect();
        let chains = vec![dummy_chain(samples.clone()), dummy_chain(samples)];
        let names = vec!["a".into(), "b".into(), "c".into()];
        let report = epsr_report(&chains, &names, |w| Ok(w.iter().sum())).unwrap();
        assert_eq!(report.rows.len(), 4); // 3 weights + error
        let floor = (49.0f64 / 50.0).sqrt();
        for row in &report.rows {
            assert_abs_diff_eq!(row.epsr, floor, epsilon = 1e-12);
            assert!(row.pass);
        }
        assert_eq!(report.pass_fraction, 1.0);
        assert_eq!(report.s_traces.len(), 2);
        assert!(report.notes.iter().any(|n| n.contains("permutation")));
    }

    #[test]
    fn report_row_count_matches_table_shape() {
        // m=5 hidden, d=3 -> 26 weights + 1 error row.
        let cfg = crate::net::NetworkConfig::new(3, 5).unwrap();
        let names = cfg.param_names();
        let w = cfg.n_params();
        assert_eq!(w, 26);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mk = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..20).map(|_| (0..w).map(|_| rng.random::<f64>()).collect()).collect()
        };
        let chains = vec![dummy_chain(mk(&mut rng)), dummy_chain(mk(&mut rng))];
        let report = epsr_report(&chains, &names, |w| Ok(w.iter().sum())).unwrap();
        assert_eq!(report.rows.len(), 27);
        assert_eq!(report.rows.last().unwrap().name, "error");
    }

    #[test]
    fn report_rejects_mismatched_chains() {
        let a = dummy_chain(vec![vec![0.0, 1.0]; 10]);
        let b = dummy_chain(vec![vec![0.0, 1.0]; 9]);
        let names = vec!["a".into(), "b".into()];
        assert!(matches!(
            epsr_report(&[a, b], &names, |_| Ok(0.0)),
            Err(Error::ChainMismatch(_))
        ));
    }
}
