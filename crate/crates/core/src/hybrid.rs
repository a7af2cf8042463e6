//! The hybrid learning pipeline: run the evidence procedure to fix the
//! prior precisions, then sample weights by HMC with those precisions held
//! fixed, starting at the optimized weights. Also produces the
//! per-covariate relevance report when the prior is per-group.

use crate::error::{Error, Result};
use crate::evidence::{run_evidence, EvidenceSettings, EvidenceState};
use crate::hmc::{run_chain, Chain, HmcSettings, PredictiveSummary};
use crate::net::NetworkConfig;
use crate::objective::{NetworkObjective, PriorMode, PriorSpec};
use crate::seeding::derive_seed;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Standard deviation of the jitter applied to chain starts after the
/// first; small enough to stay in the optimized mode at desk scale, large
/// enough that the overlaid-sequence check is meaningful.
pub const CHAIN_JITTER_SD: f64 = 0.01;

/// Assembled hybrid model.
#[derive(Debug, Clone)]
pub struct HybridModel {
    pub cfg: NetworkConfig,
    pub evidence: EvidenceState,
    pub chains: Vec<Chain>,
    /// (chain index, error message) for chains that failed to run.
    pub chain_failures: Vec<(usize, String)>,
    pub data_hash: u64,
}

impl HybridModel {
    /// Posterior-mean rates on new rows, pooled over chains.
    pub fn predict(&self, x_star: &Array2<f64>) -> Result<Vec<f64>> {
        let summary = self.predictive_summary(x_star, &[])?;
        Ok(summary.rows.iter().map(|r| r.mean_rate).collect())
    }

    pub fn predictive_summary(
        &self,
        x_star: &Array2<f64>,
        t_queries: &[u64],
    ) -> Result<PredictiveSummary> {
        crate::hmc::predictive_summary(&self.cfg, &self.chains, x_star, t_queries)
    }
}

/// Evidence phase, then `n_chains` HMC chains at the optimized alphas:
/// chain 1 starts exactly at the optimized weights, later chains at those
/// weights plus seeded Gaussian jitter. A chain failure is recorded rather
/// than fatal as long as at least one chain survives.
pub fn fit_hybrid(
    cfg: &NetworkConfig,
    x: &Array2<f64>,
    t: &[u64],
    prior0: &PriorSpec,
    evidence_settings: &EvidenceSettings,
    hmc_settings: &HmcSettings,
    n_chains: usize,
) -> Result<HybridModel> {
    if n_chains < 1 {
        return Err(Error::InvalidInput("need at least one chain".into()));
    }
    let data = NetworkObjective::new(*cfg, x, t)?;
    let w0 = crate::net::init_weights(cfg, derive_seed(evidence_settings.inner.seed, "evidence-init"));
    let evidence = run_evidence(&data, prior0, &w0, evidence_settings)?;
    let prior_map = evidence.prior.clone();

    let mut chains = Vec::new();
    let mut chain_failures = Vec::new();
    for j in 0..n_chains {
        let mut init = evidence.w_map.clone();
        if j > 0 {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(hmc_settings.seed, &format!("chain-init-{j}")));
            for v in init.iter_mut() {
                *v += CHAIN_JITTER_SD * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let settings = HmcSettings {
            seed: derive_seed(hmc_settings.seed, &format!("chain-{j}")),
            ..hmc_settings.clone()
        };
        match run_chain(cfg, x, t, &prior_map, &init, &settings) {
            Ok(chain) => chains.push(chain),
            Err(e) => chain_failures.push((j, e.to_string())),
        }
    }
    if chains.is_empty() {
        return Err(Error::OptimizationFailed {
            reason: format!("every chain failed: {chain_failures:?}"),
            last_iterate: evidence.w_map,
        });
    }

    let data_hash = {
        let flat = x.as_standard_layout();
        crate::seeding::hash_f64_u64(flat.as_slice().expect("standard layout"), t)
    };
    Ok(HybridModel {
        cfg: *cfg,
        evidence,
        chains,
        chain_failures,
        data_hash,
    })
}

/// One relevance row: lower alpha means the covariate matters more.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ArdReportRow {
    pub covariate: String,
    pub alpha: f64,
    pub rank: usize,
}

/// Covariates ordered by ascending alpha (most relevant first); equal
/// alphas share a rank, with covariate index breaking the listing order.
pub fn ard_report(model: &HybridModel, covariate_names: &[String]) -> Result<Vec<ArdReportRow>> {
    if model.evidence.prior.mode != PriorMode::Ard {
        return Err(Error::NotApplicable(
            "relevance report requires the per-covariate prior".into(),
        ));
    }
    let d = model.cfg.n_inputs;
    if covariate_names.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "{} covariate names for {d} inputs",
            covariate_names.len()
        )));
    }
    // The first d groups are the covariate fan-outs.
    let mut order: Vec<usize> = (0..d).collect();
    let alphas = &model.evidence.prior.alphas;
    order.sort_by(|&a, &b| {
        alphas[a]
            .partial_cmp(&alphas[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut rows = Vec::with_capacity(d);
    let mut rank = 0usize;
    let mut prev: Option<f64> = None;
    for (pos, &i) in order.iter().enumerate() {
        if prev != Some(alphas[i]) {
            rank = pos + 1;
        }
        prev = Some(alphas[i]);
        rows.push(ArdReportRow {
            covariate: covariate_names[i].clone(),
            alpha: alphas[i],
            rank,
        });
    }
    Ok(rows)
}
