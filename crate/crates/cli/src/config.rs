//! Benchmark run configuration. Unknown keys are rejected, and every run
//! writes the fully resolved form (defaults expanded) next to its outputs
//! so any stage can be reproduced from the artifact directory alone.

use poisson_ann::bundle::ModelKind;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub ml: MlSection,
    #[serde(default)]
    pub hmc: HmcSection,
    #[serde(default)]
    pub evidence: EvidenceSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
}

fn default_models() -> Vec<ModelKind> {
    vec![ModelKind::Glm, ModelKind::Ml, ModelKind::Hmc, ModelKind::Hybrid]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Simulation scheme 1..=6; mutually exclusive with `csv`.
    #[serde(default)]
    pub scheme: Option<u32>,
    /// Rows to simulate (required with `scheme`).
    #[serde(default)]
    pub n: Option<usize>,
    /// Input CSV path; mutually exclusive with `scheme`.
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default = "default_target")]
    pub target: String,
    /// Name of the true-rate column, when the CSV carries one.
    #[serde(default)]
    pub true_rate: Option<String>,
    /// Z-score covariates with training-set statistics.
    #[serde(default)]
    pub standardize: bool,
}

fn default_target() -> String {
    "target".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { train_fraction: 0.8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: usize,
    pub alpha0: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            hidden: 5,
            alpha0: 0.075,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlSection {
    pub restarts: usize,
    pub max_iters: usize,
    #[serde(default)]
    pub cv: CvSection,
}

impl Default for MlSection {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iters: 500,
            cv: CvSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvSection {
    pub enabled: bool,
    pub folds: usize,
    pub alphas: Vec<f64>,
    pub hidden: Vec<usize>,
}

impl Default for CvSection {
    fn default() -> Self {
        Self {
            enabled: false,
            folds: 5,
            alphas: vec![0.01, 0.025, 0.05, 0.075, 0.1],
            hidden: (3..=13).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmcSection {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub burn_in: usize,
    pub retained: usize,
    pub thin: usize,
    pub chains: usize,
}

impl Default for HmcSection {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            leapfrog_steps: 100,
            burn_in: 5000,
            retained: 5000,
            thin: 1,
            chains: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceSection {
    pub max_outer: usize,
    pub alpha_tol: f64,
    /// Prior used by the hybrid model: "ard" or "single".
    pub prior: String,
}

impl Default for EvidenceSection {
    fn default() -> Self {
        Self {
            max_outer: 20,
            alpha_tol: 1e-3,
            prior: "ard".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    /// "rate" (simulation path, needs a true-rate column) or "count";
    /// resolved from the data source when omitted.
    #[serde(default)]
    pub against: Option<String>,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        match (&self.data.scheme, &self.data.csv) {
            (Some(_), Some(_)) => anyhow::bail!("data: give either scheme or csv, not both"),
            (None, None) => anyhow::bail!("data: give a scheme or a csv path"),
            (Some(_), None) if self.data.n.is_none() => {
                anyhow::bail!("data: n is required with scheme")
            }
            _ => {}
        }
        if self.models.is_empty() {
            anyhow::bail!("models: list at least one model");
        }
        if !matches!(self.evidence.prior.as_str(), "ard" | "single") {
            anyhow::bail!("evidence.prior must be 'ard' or 'single'");
        }
        if let Some(against) = &self.evaluate.against {
            if !matches!(against.as_str(), "rate" | "count") {
                anyhow::bail!("evaluate.against must be 'rate' or 'count'");
            }
        }
        Ok(())
    }

    /// The fully resolved form: optional knobs made concrete.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        if out.evaluate.against.is_none() {
            out.evaluate.against = Some(if out.data.scheme.is_some() {
                "rate".into()
            } else {
                "count".into()
            });
        }
        if out.data.scheme.is_some() && out.data.true_rate.is_none() {
            out.data.true_rate = Some(poisson_ann::data::TRUE_RATE_COLUMN.into());
        }
        out
    }
}
