//! Command-line harness: simulate count data, fit the model families,
//! evaluate them against true rates or observed counts, and run chain
//! convergence diagnostics — individually or as one benchmark pipeline.

mod config;
mod pipeline;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use config::RunConfig;
use pipeline::{Against, FitOptions, SplitSel};
use poisson_ann::bundle::ModelKind;
use poisson_ann::data::{self, split, SplitSpec};
use poisson_ann::objective::PriorMode;
use poisson_ann::optimizer::CvPlan;
use poisson_ann::seeding::derive_seed;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "poisson-ann", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Glm,
    Ml,
    Hmc,
    Hybrid,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Glm => ModelKind::Glm,
            ModelArg::Ml => ModelKind::Ml,
            ModelArg::Hmc => ModelKind::Hmc,
            ModelArg::Hybrid => ModelKind::Hybrid,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AgainstArg {
    Rate,
    Count,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorArg {
    Ard,
    Single,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset from one of the six simulation schemes.
    Simulate {
        /// Scheme id, 1..=6.
        #[arg(long)]
        scheme: u32,
        /// Number of rows.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path (covariates, target, true_rate).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one model family on the training split and persist its bundle.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        model: ModelArg,
        /// Bundle output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = data::TARGET_COLUMN)]
        target: String,
        /// True-rate column name (auto-detected when named `true_rate`).
        #[arg(long)]
        true_rate_column: Option<String>,
        #[arg(long, default_value_t = 5)]
        hidden: usize,
        #[arg(long, default_value_t = 0.075)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        /// Z-score covariates with training statistics.
        #[arg(long, default_value_t = false)]
        standardize: bool,
        /// Prior structure for the hybrid model.
        #[arg(long, value_enum, default_value_t = PriorArg::Ard)]
        prior: PriorArg,
        #[arg(long, default_value_t = 5)]
        chains: usize,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, default_value_t = 500)]
        max_iters: usize,
        #[arg(long, default_value_t = 0.01)]
        step_size: f64,
        #[arg(long, default_value_t = 100)]
        leapfrog: usize,
        #[arg(long, default_value_t = 5000)]
        burn_in: usize,
        #[arg(long, default_value_t = 5000)]
        retained: usize,
        #[arg(long, default_value_t = 1)]
        thin: usize,
        #[arg(long, default_value_t = 20)]
        evidence_max_outer: usize,
        #[arg(long, default_value_t = 1e-3)]
        evidence_tol: f64,
        /// Select alpha and hidden nodes by cross-validation first (ml).
        #[arg(long, default_value_t = false)]
        cv: bool,
        #[arg(long, default_value_t = 5)]
        cv_folds: usize,
        /// Comma-separated alpha grid for --cv.
        #[arg(long, value_delimiter = ',')]
        cv_alphas: Option<Vec<f64>>,
        /// Comma-separated hidden-node grid for --cv.
        #[arg(long, value_delimiter = ',')]
        cv_hidden: Option<Vec<usize>>,
    },
    /// Evaluate fitted bundles on their recorded split of a dataset.
    Evaluate {
        /// Bundle directories.
        #[arg(long, num_args = 1.., required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        against: AgainstArg,
        /// Comparison CSV output path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, default_value = data::TARGET_COLUMN)]
        target: String,
        #[arg(long)]
        true_rate_column: Option<String>,
    },
    /// EPSR convergence diagnostics over a bundle's chains.
    Diagnose {
        #[arg(long)]
        model_bundle: PathBuf,
        /// Report output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline from a config file: data, split, fit, evaluate,
    /// diagnose.
    Bench {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Simulate { scheme, n, seed, out } => {
            let ds = data::simulate(scheme, n, seed)?;
            data::write_csv(&ds, &out)?;
            println!("wrote {}", out.display());
            pipeline::describe(&ds);
            Ok(())
        }
        Command::Fit {
            data: data_path,
            model,
            out,
            target,
            true_rate_column,
            hidden,
            alpha,
            seed,
            train_fraction,
            standardize,
            prior,
            chains,
            restarts,
            max_iters,
            step_size,
            leapfrog,
            burn_in,
            retained,
            thin,
            evidence_max_outer,
            evidence_tol,
            cv,
            cv_folds,
            cv_alphas,
            cv_hidden,
        } => {
            let ds = pipeline::load_dataset(&data_path, &target, true_rate_column.as_deref())?;
            let split_spec = SplitSpec {
                train_fraction,
                seed: derive_seed(seed, "split"),
            };
            let (train, test) = split(&ds, &split_spec)?;
            let cv_plan = cv.then(|| {
                let defaults = CvPlan::default();
                CvPlan {
                    folds: cv_folds,
                    alphas: cv_alphas.unwrap_or(defaults.alphas),
                    hidden: cv_hidden.unwrap_or(defaults.hidden),
                    seed: 0, // replaced by a derived seed inside fit_model
                }
            });
            let opts = FitOptions {
                model: model.into(),
                seed,
                hidden,
                alpha0: alpha,
                prior_mode: match prior {
                    PriorArg::Ard => PriorMode::Ard,
                    PriorArg::Single => PriorMode::Single,
                },
                restarts,
                max_iters,
                chains,
                step_size,
                leapfrog_steps: leapfrog,
                burn_in,
                retained,
                thin,
                evidence_max_outer,
                evidence_tol,
                standardize,
                cv: cv_plan,
            };
            pipeline::fit_model(&out, &ds, &train, &test, &split_spec, &opts)
        }
        Command::Evaluate {
            models,
            data: data_path,
            against,
            out,
            split: split_sel,
            target,
            true_rate_column,
        } => {
            let ds = pipeline::load_dataset(&data_path, &target, true_rate_column.as_deref())?;
            let rows = pipeline::evaluate_bundles(
                &models,
                &ds,
                match against {
                    AgainstArg::Rate => Against::Rate,
                    AgainstArg::Count => Against::Count,
                },
                match split_sel {
                    SplitArg::Train => SplitSel::Train,
                    SplitArg::Test => SplitSel::Test,
                },
                &out,
            )?;
            for (name, row) in &rows {
                println!(
                    "{name}: RMSE {:.4} MAE {:.4} MPE {} RSE {}",
                    row.rmse,
                    row.mae,
                    row.mpe.map_or("NA".into(), |v| format!("{v:.4}")),
                    row.rse.map_or("NA".into(), |v| format!("{v:.4}")),
                );
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Diagnose { model_bundle, out } => {
            pipeline::diagnose_bundle(&model_bundle, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Bench { config } => bench(&config),
    }
}

/// The end-to-end experiment: every stage seeded from the config's one
/// seed, every artifact under the out directory, one comparison CSV at the
/// top.
fn bench(config_path: &std::path::Path) -> anyhow::Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let cfg = cfg.resolved();
    let out_dir = cfg.out_dir.clone();
    std::fs::create_dir_all(&out_dir)?;
    let resolved = toml::to_string_pretty(&cfg)?;
    std::fs::write(out_dir.join("resolved_config.toml"), resolved)?;

    // stage: data
    let ds = (|| -> anyhow::Result<_> {
        let ds = match (cfg.data.scheme, &cfg.data.csv) {
            (Some(scheme), None) => {
                let n = cfg.data.n.expect("validated");
                data::simulate(scheme, n, derive_seed(cfg.seed, "simulate"))?
            }
            (None, Some(path)) => {
                pipeline::load_dataset(path, &cfg.data.target, cfg.data.true_rate.as_deref())?
            }
            _ => unreachable!("validated"),
        };
        data::write_csv(&ds, out_dir.join("data.csv"))?;
        Ok(ds)
    })()
    .context("stage data failed")?;
    println!("stage data: ok");
    pipeline::describe(&ds);

    // stage: split
    let split_spec = SplitSpec {
        train_fraction: cfg.split.train_fraction,
        seed: derive_seed(cfg.seed, "split"),
    };
    let (train, test) = split(&ds, &split_spec).context("stage split failed")?;
    println!(
        "stage split: ok ({} train / {} test)",
        train.n_rows(),
        test.n_rows()
    );

    // stage: fit, one bundle per requested model
    let mut bundles = Vec::new();
    for &model in &cfg.models {
        let dir = out_dir.join(format!("model_{}", model.as_str()));
        let opts = FitOptions {
            model,
            seed: derive_seed(cfg.seed, &format!("fit-{}", model.as_str())),
            hidden: cfg.network.hidden,
            alpha0: cfg.network.alpha0,
            prior_mode: if cfg.evidence.prior == "single" {
                PriorMode::Single
            } else {
                PriorMode::Ard
            },
            restarts: cfg.ml.restarts,
            max_iters: cfg.ml.max_iters,
            chains: cfg.hmc.chains,
            step_size: cfg.hmc.step_size,
            leapfrog_steps: cfg.hmc.leapfrog_steps,
            burn_in: cfg.hmc.burn_in,
            retained: cfg.hmc.retained,
            thin: cfg.hmc.thin,
            evidence_max_outer: cfg.evidence.max_outer,
            evidence_tol: cfg.evidence.alpha_tol,
            standardize: cfg.data.standardize,
            cv: cfg.ml.cv.enabled.then(|| CvPlan {
                folds: cfg.ml.cv.folds,
                alphas: cfg.ml.cv.alphas.clone(),
                hidden: cfg.ml.cv.hidden.clone(),
                seed: 0,
            }),
        };
        pipeline::fit_model(&dir, &ds, &train, &test, &split_spec, &opts)
            .with_context(|| format!("stage fit {} failed", model.as_str()))?;
        bundles.push((model, dir));
    }

    // stage: evaluate
    let against = match cfg.evaluate.against.as_deref() {
        Some("count") => Against::Count,
        _ => Against::Rate,
    };
    let dirs: Vec<PathBuf> = bundles.iter().map(|(_, d)| d.clone()).collect();
    pipeline::evaluate_bundles(
        &dirs,
        &ds,
        against,
        SplitSel::Test,
        &out_dir.join("comparison.csv"),
    )
    .context("stage evaluate failed")?;
    println!("stage evaluate: ok -> comparison.csv");

    // stage: diagnose sampled models with at least two chains
    for (model, dir) in &bundles {
        if !matches!(model, ModelKind::Hmc | ModelKind::Hybrid) {
            continue;
        }
        let meta = poisson_ann::bundle::load_meta(dir)
            .with_context(|| format!("stage diagnose {} failed", model.as_str()))?;
        if meta.chains.len() < 2 {
            println!(
                "stage diagnose {}: skipped (needs >= 2 chains)",
                model.as_str()
            );
            continue;
        }
        let diag_dir = out_dir.join(format!("diagnostics_{}", model.as_str()));
        pipeline::diagnose_bundle(dir, &diag_dir)
            .with_context(|| format!("stage diagnose {} failed", model.as_str()))?;
    }

    println!("bench complete: {}", out_dir.display());
    Ok(())
}
