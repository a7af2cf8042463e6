//! The experiment pipeline behind the subcommands: fit a model family into
//! a bundle directory, evaluate bundles into a comparison table, and run
//! convergence diagnostics over a bundle's chains.

use anyhow::{bail, Context};
use poisson_ann::bundle::{self, BundleMeta, LoadedModel, ModelKind};
use poisson_ann::data::{load_csv, split, Dataset, SplitSpec, Standardizer};
use poisson_ann::evidence::EvidenceSettings;
use poisson_ann::glm::{fit_glm, predict_glm};
use poisson_ann::hmc::{predictive_summary, run_chain, HmcSettings};
use poisson_ann::hybrid::{ard_report, fit_hybrid};
use poisson_ann::metrics::{epsr_report, metrics, EvalRow};
use poisson_ann::net::{init_weights, NetworkConfig};
use poisson_ann::objective::{poisson_nll, regularized_error, PriorMode, PriorSpec};
use poisson_ann::optimizer::{cross_validate, train_committee, CvPlan, TrainSettings};
use poisson_ann::seeding::derive_seed;
use std::path::{Path, PathBuf};

/// Load a CSV dataset; the true-rate column is used when named explicitly
/// or present under its default header.
pub fn load_dataset(path: &Path, target: &str, true_rate: Option<&str>) -> anyhow::Result<Dataset> {
    let rate_col = match true_rate {
        Some(name) => Some(name.to_string()),
        None => {
            let mut reader = csv::Reader::from_path(path)
                .with_context(|| format!("opening {}", path.display()))?;
            reader
                .headers()?
                .iter()
                .find(|h| h.trim() == poisson_ann::data::TRUE_RATE_COLUMN)
                .map(|h| h.trim().to_string())
        }
    };
    load_csv(path, target, rate_col.as_deref())
        .with_context(|| format!("loading {}", path.display()))
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub model: ModelKind,
    pub seed: u64,
    pub hidden: usize,
    pub alpha0: f64,
    pub prior_mode: PriorMode,
    pub restarts: usize,
    pub max_iters: usize,
    pub chains: usize,
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub burn_in: usize,
    pub retained: usize,
    pub thin: usize,
    pub evidence_max_outer: usize,
    pub evidence_tol: f64,
    pub standardize: bool,
    pub cv: Option<CvPlan>,
}

impl FitOptions {
    fn train_settings(&self, stage: &str) -> TrainSettings {
        TrainSettings {
            max_iters: self.max_iters,
            restarts: self.restarts,
            seed: derive_seed(self.seed, stage),
            ..Default::default()
        }
    }

    fn hmc_settings(&self, stage: &str) -> HmcSettings {
        HmcSettings {
            step_size: self.step_size,
            leapfrog_steps: self.leapfrog_steps,
            burn_in: self.burn_in,
            retained: self.retained,
            thin: self.thin,
            seed: derive_seed(self.seed, stage),
            ..Default::default()
        }
    }

    fn evidence_settings(&self) -> EvidenceSettings {
        EvidenceSettings {
            max_outer: self.evidence_max_outer,
            alpha_tol: self.evidence_tol,
            inner: TrainSettings {
                max_iters: self.max_iters,
                seed: derive_seed(self.seed, "evidence"),
                ..Default::default()
            },
            ..Default::default()
        }
    }
}

/// Fit one model family on the train split and persist its bundle. Prints
/// the training NLL. Returns an error (with artifacts kept on disk) when
/// the fit did not converge.
pub fn fit_model(
    dir: &Path,
    full: &Dataset,
    train: &Dataset,
    test: &Dataset,
    split_spec: &SplitSpec,
    opts: &FitOptions,
) -> anyhow::Result<()> {
    let standardizer = opts.standardize.then(|| Standardizer::fit(&train.x));
    let x_train = match &standardizer {
        Some(s) => s.apply(&train.x)?,
        None => train.x.clone(),
    };

    let mut meta = BundleMeta {
        model: opts.model,
        seed: opts.seed,
        split: *split_spec,
        data_hash: full.content_hash(),
        covariate_names: full.covariate_names.clone(),
        standardizer,
        network: None,
        prior_mode: None,
        alpha0: None,
        final_alphas: None,
        train_settings: None,
        evidence_settings: None,
        hmc_settings: None,
        chains: vec![],
        train_nll: None,
        notes: vec![],
    };

    // Partial artifacts (settings + split) land first so a failed fit
    // still leaves an inspectable directory.
    bundle::save_common(dir, &meta, train, test)?;

    let mut convergence_failure: Option<String> = None;
    match opts.model {
        ModelKind::Glm => {
            let fit = fit_glm(&x_train, &train.t, 100, 1e-10)
                .with_context(|| format!("glm fit failed (artifacts kept in {})", dir.display()))?;
            let rates = predict_glm(&fit, &x_train)?;
            meta.train_nll = Some(poisson_nll(&rates, &train.t)?);
            if !fit.converged {
                convergence_failure = Some("glm did not converge within 100 iterations".into());
            }
            bundle::save_common(dir, &meta, train, test)?;
            bundle::save_glm(dir, &fit)?;
        }
        ModelKind::Ml => {
            let (mut hidden, mut alpha) = (opts.hidden, opts.alpha0);
            if let Some(plan) = &opts.cv {
                let plan = CvPlan {
                    seed: derive_seed(opts.seed, "cv"),
                    ..plan.clone()
                };
                let inner = TrainSettings {
                    max_iters: opts.max_iters,
                    restarts: 1,
                    seed: plan.seed,
                    ..Default::default()
                };
                let table = cross_validate(&x_train, &train.t, &plan, &inner)?;
                for w in &table.warnings {
                    eprintln!("cv warning: {w}");
                }
                hidden = table.best_hidden;
                alpha = table.best_alpha;
                meta.notes.push(format!(
                    "cross-validation selected hidden={hidden}, alpha={alpha}"
                ));
                println!("cv selected hidden={hidden} alpha={alpha}");
            }
            let cfg = NetworkConfig::new(train.n_covariates(), hidden)?;
            let prior = PriorSpec::single_for(&cfg, alpha)?;
            let settings = opts.train_settings("fit-ml");
            let committee = train_committee(&cfg, &x_train, &train.t, &prior, &settings)
                .with_context(|| {
                    format!("committee training failed (artifacts kept in {})", dir.display())
                })?;
            let diverged = committee.members.iter().filter(|m| m.diverged).count();
            if diverged > 0 {
                eprintln!("warning: {diverged} committee member(s) diverged; kept with flags");
            }
            let rates = committee.predict(&x_train)?;
            meta.train_nll = Some(poisson_nll(&rates, &train.t)?);
            meta.network = Some(cfg);
            meta.prior_mode = Some(PriorMode::Single);
            meta.alpha0 = Some(alpha);
            meta.final_alphas = Some(prior.alphas.clone());
            meta.train_settings = Some(settings);
            bundle::save_common(dir, &meta, train, test)?;
            bundle::save_committee(dir, &committee)?;
        }
        ModelKind::Hmc => {
            let cfg = NetworkConfig::new(train.n_covariates(), opts.hidden)?;
            let prior = PriorSpec::single_for(&cfg, opts.alpha0)?;
            let mut chains = Vec::with_capacity(opts.chains);
            for j in 0..opts.chains {
                let settings = opts.hmc_settings(&format!("fit-hmc-chain-{j}"));
                let init = init_weights(&cfg, derive_seed(opts.seed, &format!("hmc-init-{j}")));
                chains.push(run_chain(&cfg, &x_train, &train.t, &prior, &init, &settings)?);
            }
            let summary = predictive_summary(&cfg, &chains, &x_train, &[])?;
            let rates: Vec<f64> = summary.rows.iter().map(|r| r.mean_rate).collect();
            meta.train_nll = Some(poisson_nll(&rates, &train.t)?);
            meta.network = Some(cfg);
            meta.prior_mode = Some(PriorMode::Single);
            meta.alpha0 = Some(opts.alpha0);
            meta.final_alphas = Some(prior.alphas.clone());
            meta.hmc_settings = Some(opts.hmc_settings("fit-hmc"));
            meta.chains = bundle::chain_metas(&chains);
            for chain in &chains {
                if chain.low_acceptance_warning {
                    eprintln!(
                        "warning: chain acceptance {:.3} below 0.05",
                        chain.acceptance_rate
                    );
                }
            }
            bundle::save_common(dir, &meta, train, test)?;
            bundle::save_chains(dir, &chains, &cfg.param_names())?;
            save_test_predictive(dir, &meta, &cfg, &chains, test)?;
        }
        ModelKind::Hybrid => {
            let cfg = NetworkConfig::new(train.n_covariates(), opts.hidden)?;
            let prior0 = match opts.prior_mode {
                PriorMode::Ard => PriorSpec::ard_for(&cfg, opts.alpha0)?,
                PriorMode::Single => PriorSpec::single_for(&cfg, opts.alpha0)?,
            };
            let ev = opts.evidence_settings();
            let hmc = opts.hmc_settings("fit-hybrid");
            let model = fit_hybrid(&cfg, &x_train, &train.t, &prior0, &ev, &hmc, opts.chains)?;
            for (j, err) in &model.chain_failures {
                eprintln!("warning: chain {j} failed: {err}");
            }
            let rates = model.predict(&x_train)?;
            meta.train_nll = Some(poisson_nll(&rates, &train.t)?);
            meta.network = Some(cfg);
            meta.prior_mode = Some(opts.prior_mode);
            meta.alpha0 = Some(opts.alpha0);
            meta.final_alphas = Some(model.evidence.prior.alphas.clone());
            meta.evidence_settings = Some(ev);
            meta.hmc_settings = Some(hmc);
            meta.chains = bundle::chain_metas(&model.chains);
            if !model.evidence.converged {
                meta.notes
                    .push("evidence loop hit the outer iteration cap".into());
            }
            bundle::save_common(dir, &meta, train, test)?;
            bundle::save_chains(dir, &model.chains, &cfg.param_names())?;
            bundle::save_evidence_log(dir, &model.evidence.log)?;
            if opts.prior_mode == PriorMode::Ard {
                let report = ard_report(&model, &train.covariate_names)?;
                bundle::save_ard_report(dir, &report)?;
            }
            save_test_predictive(dir, &meta, &cfg, &model.chains, test)?;
        }
    }

    println!(
        "fitted {} -> {} (train NLL {:.4})",
        opts.model.as_str(),
        dir.display(),
        meta.train_nll.unwrap_or(f64::NAN)
    );
    if let Some(reason) = convergence_failure {
        bail!("{reason} (artifacts kept in {})", dir.display());
    }
    Ok(())
}

/// Held-out predictive summary written into a sampled bundle at fit time,
/// so the error-bar CSV exists without a separate evaluate pass.
fn save_test_predictive(
    dir: &Path,
    meta: &BundleMeta,
    cfg: &NetworkConfig,
    chains: &[poisson_ann::hmc::Chain],
    test: &Dataset,
) -> anyhow::Result<()> {
    let x_test = match &meta.standardizer {
        Some(s) => s.apply(&test.x)?,
        None => test.x.clone(),
    };
    let summary = predictive_summary(cfg, chains, &x_test, &[])?;
    bundle::save_predictive_summary(dir, &summary)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Against {
    Rate,
    Count,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSel {
    Train,
    Test,
}

/// Evaluate each bundle on its recorded split of `data`. The comparison
/// table uses the RMSE, MAE, MPE, RSE column order. Sampled bundles also
/// get a predictive-summary CSV with error-bar columns.
pub fn evaluate_bundles(
    bundles: &[PathBuf],
    data: &Dataset,
    against: Against,
    sel: SplitSel,
    out: &Path,
) -> anyhow::Result<Vec<(String, EvalRow)>> {
    let mut rows = Vec::new();
    for dir in bundles {
        let (meta, model) = bundle::load_bundle(dir)?;
        if meta.data_hash != data.content_hash() {
            bail!(
                "bundle {} was fitted on different data (hash mismatch)",
                dir.display()
            );
        }
        let (train, test) = split(data, &meta.split)?;
        let part = match sel {
            SplitSel::Train => &train,
            SplitSel::Test => &test,
        };
        let x = match &meta.standardizer {
            Some(s) => s.apply(&part.x)?,
            None => part.x.clone(),
        };
        let predicted = model.predict(&x)?;
        let actual: Vec<f64> = match against {
            Against::Rate => part
                .true_rate
                .clone()
                .ok_or_else(|| anyhow::anyhow!("--against rate needs a true_rate column"))?,
            Against::Count => part.t.iter().map(|&t| t as f64).collect(),
        };
        let row = metrics(&actual, &predicted)?;
        if let LoadedModel::Sampled { cfg, chains } = &model {
            let summary = predictive_summary(cfg, chains, &x, &[])?;
            bundle::save_predictive_summary(dir, &summary)?;
        }
        rows.push((meta.model.as_str().to_string(), row));
    }
    write_comparison_csv(out, &rows)?;
    Ok(rows)
}

fn na(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.6}"))
}

pub fn write_comparison_csv(path: &Path, rows: &[(String, EvalRow)]) -> anyhow::Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["model", "rmse", "mae", "mpe", "rse"])?;
    for (name, row) in rows {
        writer.write_record(&[
            name.clone(),
            format!("{:.6}", row.rmse),
            format!("{:.6}", row.mae),
            na(row.mpe),
            na(row.rse),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Run the convergence diagnostic over a bundle's chains: EPSR per weight
/// plus the regularized error, report CSV/JSON, and per-chain S traces.
pub fn diagnose_bundle(dir: &Path, out: &Path) -> anyhow::Result<f64> {
    let (meta, model) = bundle::load_bundle(dir)?;
    let LoadedModel::Sampled { cfg, chains } = &model else {
        bail!("bundle {} holds no chains; diagnostics need a sampled model", dir.display());
    };
    if chains.len() < 2 {
        bail!(
            "bundle has {} chain(s); refit with --chains >= 2 to diagnose convergence",
            chains.len()
        );
    }
    let train = bundle::load_train(dir)?;
    let x_train = match &meta.standardizer {
        Some(s) => s.apply(&train.x)?,
        None => train.x.clone(),
    };
    let alphas = meta
        .final_alphas
        .clone()
        .ok_or_else(|| anyhow::anyhow!("bundle settings lack the prior alphas"))?;
    let groups = cfg.group_indices();
    let mode = meta.prior_mode.unwrap_or(PriorMode::Single);
    let prior = PriorSpec::with_groups(mode, alphas, groups)?;
    let names = cfg.param_names();
    let report = epsr_report(chains, &names, |w| {
        Ok(regularized_error(cfg, w, &x_train, &train.t, &prior)?.total)
    })?;
    bundle::save_epsr_report(out, &report)?;
    println!(
        "diagnosed {}: pass fraction {:.3}, worst statistic {}",
        dir.display(),
        report.pass_fraction,
        report.worst_statistic
    );
    Ok(report.pass_fraction)
}

/// Print one dataset summary line (row count, covariates, mean rate).
pub fn describe(ds: &Dataset) {
    let mean_rate = ds
        .true_rate
        .as_ref()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64);
    match mean_rate {
        Some(m) => println!(
            "{} rows, {} covariates, mean rate {:.4}",
            ds.n_rows(),
            ds.n_covariates(),
            m
        ),
        None => println!("{} rows, {} covariates", ds.n_rows(), ds.n_covariates()),
    }
}

