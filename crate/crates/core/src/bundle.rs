//! Model bundles: one directory per fitted model holding the resolved
//! settings, the exact train/test split, the model artifacts (coefficient
//! JSON, committee JSON, or chain CSVs plus the evidence log and relevance
//! report), and any derived reports. Bundles are self-contained: evaluation
//! and diagnostics need nothing beyond the directory.

use crate::data::{format_float, load_csv, write_csv, Dataset, SplitSpec, Standardizer,
    TARGET_COLUMN, TRUE_RATE_COLUMN};
use crate::error::{Error, Result};
use crate::evidence::{EvidenceIteration, EvidenceSettings};
use crate::glm::{predict_glm, GlmFit};
use crate::hmc::{Chain, HmcSettings, PredictiveSummary, StepRecord};
use crate::hybrid::ArdReportRow;
use crate::metrics::EpsrReport;
use crate::net::NetworkConfig;
use crate::objective::PriorMode;
use crate::optimizer::{CommitteeModel, TrainSettings};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Glm,
    Ml,
    Hmc,
    Hybrid,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Glm => "glm",
            ModelKind::Ml => "ml",
            ModelKind::Hmc => "hmc",
            ModelKind::Hybrid => "hybrid",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glm" => Ok(ModelKind::Glm),
            "ml" => Ok(ModelKind::Ml),
            "hmc" => Ok(ModelKind::Hmc),
            "hybrid" => Ok(ModelKind::Hybrid),
            other => Err(Error::InvalidInput(format!("unknown model kind '{other}'"))),
        }
    }
}

/// Per-chain bookkeeping persisted in the bundle settings.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ChainMeta {
    pub seed: u64,
    pub burn_in: usize,
    pub thin: usize,
    pub initial_step_size: f64,
    pub final_step_size: f64,
    pub acceptance_rate: f64,
    pub low_acceptance_warning: bool,
    pub alphas: Vec<f64>,
    pub data_hash: u64,
    pub rng_word_pos: u128,
}

impl ChainMeta {
    fn of(chain: &Chain) -> Self {
        Self {
            seed: chain.seed,
            burn_in: chain.burn_in,
            thin: chain.thin,
            initial_step_size: chain.initial_step_size,
            final_step_size: chain.final_step_size,
            acceptance_rate: chain.acceptance_rate,
            low_acceptance_warning: chain.low_acceptance_warning,
            alphas: chain.alphas.clone(),
            data_hash: chain.data_hash,
            rng_word_pos: chain.rng_word_pos,
        }
    }
}

/// Everything needed to reproduce and reuse a fitted model.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BundleMeta {
    pub model: ModelKind,
    pub seed: u64,
    pub split: SplitSpec,
    /// Content hash of the full (pre-split) dataset.
    pub data_hash: u64,
    pub covariate_names: Vec<String>,
    pub standardizer: Option<Standardizer>,
    pub network: Option<NetworkConfig>,
    pub prior_mode: Option<PriorMode>,
    pub alpha0: Option<f64>,
    pub final_alphas: Option<Vec<f64>>,
    pub train_settings: Option<TrainSettings>,
    pub evidence_settings: Option<EvidenceSettings>,
    pub hmc_settings: Option<HmcSettings>,
    pub chains: Vec<ChainMeta>,
    pub train_nll: Option<f64>,
    pub notes: Vec<String>,
}

pub const META_FILE: &str = "settings.json";
pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const GLM_FILE: &str = "glm.json";
pub const COMMITTEE_FILE: &str = "committee.json";
pub const EVIDENCE_LOG_FILE: &str = "evidence_log.csv";
pub const ARD_REPORT_FILE: &str = "ard_report.csv";
pub const PREDICTIVE_FILE: &str = "predictive_summary.csv";
pub const EPSR_REPORT_FILE: &str = "epsr_report.csv";
pub const EPSR_SUMMARY_FILE: &str = "epsr_summary.json";

pub fn chain_file(index: usize) -> String {
    format!("chain_{}.csv", index + 1)
}

pub fn s_trace_file(index: usize) -> String {
    format!("s_trace_chain_{}.csv", index + 1)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    fs::write(path, body)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Write the shared part of every bundle: settings plus the exact split.
pub fn save_common(dir: &Path, meta: &BundleMeta, train: &Dataset, test: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join(META_FILE), meta)?;
    write_csv(train, dir.join(TRAIN_FILE))?;
    write_csv(test, dir.join(TEST_FILE))?;
    Ok(())
}

pub fn save_glm(dir: &Path, fit: &GlmFit) -> Result<()> {
    write_json(&dir.join(GLM_FILE), fit)
}

pub fn save_committee(dir: &Path, committee: &CommitteeModel) -> Result<()> {
    write_json(&dir.join(COMMITTEE_FILE), committee)
}

/// One row per retained sample: the weight columns, the total energy at the
/// accept decision, and the accept flag.
pub fn save_chain_csv(dir: &Path, index: usize, chain: &Chain, names: &[String]) -> Result<()> {
    let mut writer = csv::Writer::from_path(dir.join(chain_file(index)))?;
    let mut header: Vec<String> = names.to_vec();
    header.push("energy".into());
    header.push("accepted".into());
    writer.write_record(&header)?;
    for (sample, step) in chain.samples.iter().zip(&chain.steps) {
        let mut record: Vec<String> = sample.iter().map(|&v| format_float(v)).collect();
        record.push(format_float(step.energy));
        record.push(if step.accepted { "1" } else { "0" }.into());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

fn read_chain_csv(path: &Path, meta: &ChainMeta) -> Result<Chain> {
    let mut reader = csv::Reader::from_path(path)?;
    let n_cols = reader.headers()?.len();
    if n_cols < 3 {
        return Err(Error::InvalidInput(format!(
            "chain file {} has too few columns",
            path.display()
        )));
    }
    let w = n_cols - 2;
    let mut samples = Vec::new();
    let mut steps = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |idx: usize| -> Result<f64> {
            record
                .get(idx)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    row,
                    message: format!("bad value in chain file {}", path.display()),
                })
        };
        let mut sample = Vec::with_capacity(w);
        for c in 0..w {
            sample.push(parse(c)?);
        }
        let energy = parse(w)?;
        let accepted = record.get(w + 1).map(str::trim) == Some("1");
        samples.push(sample);
        steps.push(StepRecord {
            energy,
            accepted,
            step_size: meta.final_step_size,
        });
    }
    Ok(Chain {
        samples,
        steps,
        burn_in: meta.burn_in,
        thin: meta.thin,
        seed: meta.seed,
        initial_step_size: meta.initial_step_size,
        final_step_size: meta.final_step_size,
        acceptance_rate: meta.acceptance_rate,
        low_acceptance_warning: meta.low_acceptance_warning,
        alphas: meta.alphas.clone(),
        data_hash: meta.data_hash,
        rng_word_pos: meta.rng_word_pos,
    })
}

/// Outer-iteration log: iteration, objective terms, then one alpha and one
/// gamma column per group.
pub fn save_evidence_log(dir: &Path, log: &[EvidenceIteration]) -> Result<()> {
    let n_groups = log.first().map_or(0, |it| it.alphas.len());
    let mut writer = csv::Writer::from_path(dir.join(EVIDENCE_LOG_FILE))?;
    let mut header = vec!["iteration".to_string(), "total".into(), "data_term".into()];
    for g in 0..n_groups {
        header.push(format!("alpha_{g}"));
    }
    for g in 0..log.first().map_or(0, |it| it.gammas.len()) {
        header.push(format!("gamma_{g}"));
    }
    header.push("warnings".into());
    writer.write_record(&header)?;
    for it in log {
        let mut record = vec![
            it.iteration.to_string(),
            format_float(it.total),
            format_float(it.data_term),
        ];
        record.extend(it.alphas.iter().map(|&a| format_float(a)));
        record.extend(it.gammas.iter().map(|&g| format_float(g)));
        record.push(it.warnings.join("; "));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_ard_report(dir: &Path, rows: &[ArdReportRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(dir.join(ARD_REPORT_FILE))?;
    writer.write_record(["covariate", "alpha", "rank"])?;
    for r in rows {
        writer.write_record(&[r.covariate.clone(), format_float(r.alpha), r.rank.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

/// Per-row predictive summary with error-bar half-widths and any requested
/// pmf columns.
pub fn save_predictive_summary(dir: &Path, summary: &PredictiveSummary) -> Result<()> {
    let mut writer = csv::Writer::from_path(dir.join(PREDICTIVE_FILE))?;
    let queries: Vec<u64> = summary
        .rows
        .first()
        .map(|r| r.pmf.iter().map(|p| p.t_value).collect())
        .unwrap_or_default();
    let mut header = vec!["row".to_string(), "mean_rate".into(), "sd_rate".into()];
    for t in &queries {
        header.push(format!("p_{t}"));
        header.push(format!("se_{t}"));
    }
    writer.write_record(&header)?;
    for (i, row) in summary.rows.iter().enumerate() {
        let mut record = vec![
            i.to_string(),
            format_float(row.mean_rate),
            format_float(row.sd_rate),
        ];
        for p in &row.pmf {
            record.push(format_float(p.mean));
            record.push(format_float(p.se));
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// EPSR rows as CSV plus the `{pass_fraction, worst_statistic}` JSON
/// summary and one S-trace CSV per chain.
pub fn save_epsr_report(dir: &Path, report: &EpsrReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut writer = csv::Writer::from_path(dir.join(EPSR_REPORT_FILE))?;
    writer.write_record(["statistic", "epsr", "pass"])?;
    for row in &report.rows {
        writer.write_record(&[
            row.name.clone(),
            format_float(row.epsr),
            if row.pass { "1" } else { "0" }.to_string(),
        ])?;
    }
    writer.flush()?;

    #[derive(serde::Serialize)]
    struct Summary<'a> {
        pass_fraction: f64,
        worst_statistic: &'a str,
        n_chains: usize,
        chain_length: usize,
        notes: &'a [String],
    }
    write_json(
        &dir.join(EPSR_SUMMARY_FILE),
        &Summary {
            pass_fraction: report.pass_fraction,
            worst_statistic: &report.worst_statistic,
            n_chains: report.n_chains,
            chain_length: report.chain_length,
            notes: &report.notes,
        },
    )?;

    for (i, trace) in report.s_traces.iter().enumerate() {
        let mut writer = csv::Writer::from_path(dir.join(s_trace_file(i)))?;
        writer.write_record(["sample_index", "s"])?;
        for (j, &s) in trace.iter().enumerate() {
            writer.write_record(&[j.to_string(), format_float(s)])?;
        }
        writer.flush()?;
    }
    Ok(())
}

/// A bundle loaded back into memory, able to predict rates.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    Glm(GlmFit),
    Committee(CommitteeModel),
    Sampled {
        cfg: NetworkConfig,
        chains: Vec<Chain>,
    },
}

impl LoadedModel {
    pub fn predict(&self, x: &ndarray::Array2<f64>) -> Result<Vec<f64>> {
        match self {
            LoadedModel::Glm(fit) => predict_glm(fit, x),
            LoadedModel::Committee(c) => c.predict(x),
            LoadedModel::Sampled { cfg, chains } => {
                let summary = crate::hmc::predictive_summary(cfg, chains, x, &[])?;
                Ok(summary.rows.iter().map(|r| r.mean_rate).collect())
            }
        }
    }
}

pub fn load_meta(dir: &Path) -> Result<BundleMeta> {
    read_json(&dir.join(META_FILE))
}

pub fn load_bundle(dir: &Path) -> Result<(BundleMeta, LoadedModel)> {
    let meta = load_meta(dir)?;
    let model = match meta.model {
        ModelKind::Glm => LoadedModel::Glm(read_json(&dir.join(GLM_FILE))?),
        ModelKind::Ml => LoadedModel::Committee(read_json(&dir.join(COMMITTEE_FILE))?),
        ModelKind::Hmc | ModelKind::Hybrid => {
            let cfg = meta.network.ok_or_else(|| {
                Error::InvalidInput("bundle settings lack the network section".into())
            })?;
            let mut chains = Vec::with_capacity(meta.chains.len());
            for (i, cm) in meta.chains.iter().enumerate() {
                chains.push(read_chain_csv(&dir.join(chain_file(i)), cm)?);
            }
            LoadedModel::Sampled { cfg, chains }
        }
    };
    Ok((meta, model))
}

/// The training split stored in the bundle.
pub fn load_train(dir: &Path) -> Result<Dataset> {
    let has_rate = {
        let mut reader = csv::Reader::from_path(dir.join(TRAIN_FILE))?;
        reader
            .headers()?
            .iter()
            .any(|h| h.trim() == TRUE_RATE_COLUMN)
    };
    load_csv(
        dir.join(TRAIN_FILE),
        TARGET_COLUMN,
        has_rate.then_some(TRUE_RATE_COLUMN),
    )
}

pub fn save_chains(dir: &Path, chains: &[Chain], names: &[String]) -> Result<()> {
    for (i, chain) in chains.iter().enumerate() {
        save_chain_csv(dir, i, chain, names)?;
    }
    Ok(())
}

pub fn chain_metas(chains: &[Chain]) -> Vec<ChainMeta> {
    chains.iter().map(ChainMeta::of).collect()
}
