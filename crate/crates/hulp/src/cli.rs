//! Command-line entry points.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use hulp_core::baselines::{EhrOnlyModel, FusionModel, Imputer};
use hulp_core::data::{generate_synthetic, stratified_folds, Cohort};
use hulp_core::experiments::{
    hulp_for, partial_intervention_cindex, run_intervention_experiment, run_missingness_sweep,
    InterventionExperiment, InterventionReport, MissingnessSweep,
};
use hulp_core::survival::build_time_grid;
use hulp_core::training::{cross_validate, evaluate_cindex, fit, CvConfig, CvEntry, TrainConfig};
use hulp_core::HulpModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{model_version, read_checkpoint, save_checkpoint, CheckpointError};
use crate::cohort_io::{load_cohort, write_cohort_jsonl, CohortFileError};
use crate::config::{ConfigError, RunConfig};
use crate::reports;
use crate::service::{serve, AppState, ServeError};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_BIND: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "hulp", version, about = "Concept-bottleneck survival models with test-time intervention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file (generate) or directory (everything else).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Cohort file; a synthetic cohort is generated from the config otherwise.
    #[arg(long, global = true)]
    pub cohort: Option<PathBuf>,
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort file.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train HuLP and write a checkpoint with its fit report.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// C-index with and without oracle interventions.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Evaluate this model on the cohort instead of cross-validating.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        with_interventions: bool,
    },
    /// Cross-validated comparison against covariate-only and fusion baselines.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// C-index against covariate missingness rate per method.
    SweepMissingness {
        #[command(flatten)]
        common: Common,
    },
    /// C-index against the fraction of parent categories intervened on.
    SweepIntervention {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Start the inference service.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        port: Option<u16>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] hulp_core::Error),
    #[error(transparent)]
    Cohort(#[from] CohortFileError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Serve(#[from] ServeError),
    #[error("{0}")]
    Usage(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Core(hulp_core::Error::Config(_)) => EXIT_CONFIG,
            CliError::Core(hulp_core::Error::Divergence { .. }) => EXIT_DIVERGENCE,
            CliError::Serve(ServeError::Bind { .. }) => EXIT_BIND,
            _ => EXIT_DATA,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// File config with flag overrides applied, validated.
pub fn resolve_config(common: &Common) -> CliResult<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
        config.cohort.seed = seed;
        config.train.seed = seed;
    }
    if let Some(folds) = common.folds {
        config.folds = folds;
    }
    if let Some(seeds) = &common.seeds {
        config.seeds = seeds.clone();
    }
    config.validate()?;
    Ok(config)
}

fn cohort_for(common: &Common, config: &RunConfig) -> CliResult<Cohort> {
    match &common.cohort {
        Some(path) => Ok(load_cohort(path)?),
        None => Ok(generate_synthetic(&config.cohort)?),
    }
}

fn out_dir(common: &Common) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

/// Stratified split with one fold held out for validation.
fn holdout(cohort: &Cohort, config: &RunConfig) -> CliResult<(Cohort, Cohort)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let fold = stratified_folds(cohort, config.folds, &mut rng)?.swap_remove(0);
    Ok((cohort.subset(&fold.train), cohort.subset(&fold.valid)))
}

fn train_model(cohort: &Cohort, config: &RunConfig) -> CliResult<(HulpModel, hulp_core::training::FitReport, Cohort)> {
    let (train, valid) = holdout(cohort, config)?;
    let mut model = hulp_for(&train, &config.model, config.seed)?;
    let report = fit(&mut model, &train, Some(&valid), &config.train)?;
    Ok((model, report, valid))
}

fn log(msg: impl AsRef<str>) {
    eprintln!("{}", msg.as_ref());
}

fn cmd_generate(common: &Common) -> CliResult<()> {
    let config = resolve_config(common)?;
    let cohort = generate_synthetic(&config.cohort)?;
    let out = common
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("generate requires --out <file>".into()))?;
    write_file(&out, &write_cohort_jsonl(&cohort))?;
    log(format!(
        "wrote {} patients ({:.1}% covariates missing) to {}",
        cohort.len(),
        100.0 * cohort.missing_fraction(),
        out.display()
    ));
    Ok(())
}

fn cmd_train(common: &Common, checkpoint: Option<&Path>) -> CliResult<()> {
    let config = resolve_config(common)?;
    let cohort = cohort_for(common, &config)?;
    let (model, mut report, _) = train_model(&cohort, &config)?;
    let dir = out_dir(common);
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| dir.join("checkpoint.json"));
    let bytes = save_checkpoint(&model);
    write_file(&ckpt, &bytes)?;
    report.checkpoint = Some(ckpt.display().to_string());
    write_file(&dir.join("fit_report.json"), &reports::fit_report_json(&report))?;
    write_file(&dir.join("fit_report.csv"), &reports::fit_report_csv(&report))?;
    log(format!(
        "best epoch {} (validation C-index {}), checkpoint {} version {}",
        report.best_epoch,
        report.best_cindex.map_or("n/a".into(), |c| format!("{c:.4}")),
        ckpt.display(),
        model_version(&bytes)
    ));
    Ok(())
}

fn cmd_evaluate(common: &Common, checkpoint: Option<&Path>, with_interventions: bool) -> CliResult<()> {
    let config = resolve_config(common)?;
    let dir = out_dir(common);
    let report = match checkpoint {
        Some(path) => {
            let (model, _) = read_checkpoint(path)?;
            let cohort = cohort_for(common, &config)?;
            let cindex = evaluate_cindex(&model, &cohort, false)?.ok_or(hulp_core::Error::UndefinedMetric)?;
            let oracle = if with_interventions {
                evaluate_cindex(&model, &cohort, true)?
            } else {
                None
            };
            InterventionReport {
                entries: vec![CvEntry {
                    seed: config.seed,
                    fold: 0,
                    cindex,
                    cindex_oracle: oracle,
                    best_epoch: 0,
                }],
            }
        }
        None => {
            let experiment = InterventionExperiment {
                cohort: config.cohort.clone(),
                model: config.model.clone(),
                train: config.train.clone(),
                seeds: config.seeds.clone(),
                folds: config.folds,
                fold_limit: None,
            };
            run_intervention_experiment(&experiment)?
        }
    };
    let folds = if checkpoint.is_some() { 1 } else { config.folds };
    let seeds = if checkpoint.is_some() { vec![config.seed] } else { config.seeds.clone() };
    let summary = reports::EvaluateSummary::from_report(&report, folds, &seeds, with_interventions);
    write_file(&dir.join("evaluate.json"), &reports::evaluate_json(&summary))?;
    write_file(&dir.join("evaluate.csv"), &reports::evaluate_csv(&report, with_interventions))?;
    match summary.cindex_with_interventions_mean {
        Some(w) => log(format!("C-index {:.4} without, {w:.4} with interventions", summary.cindex_mean)),
        None => log(format!("C-index {:.4}", summary.cindex_mean)),
    }
    Ok(())
}

fn cmd_compare(common: &Common) -> CliResult<()> {
    let config = resolve_config(common)?;
    let cohort = cohort_for(common, &config)?;
    let cv = |train: TrainConfig| CvConfig {
        folds: config.folds,
        seeds: config.seeds.clone(),
        with_oracle: false,
        fold_limit: None,
        train,
    };
    let grid_for = |train: &Cohort| build_time_grid(&train.times(), &train.events(), None);
    let widths = {
        let mut w = config.model.encoder_hidden.clone();
        w.push(config.model.latent_dim_for(cohort.schema()));
        w
    };

    let ehr = cross_validate(&cohort, "EHR-only (mode)", &cv(EhrOnlyModel::train_config(&config.train)), |train, seed| {
        Ok(EhrOnlyModel::new(train.schema().clone(), grid_for(train)?, Some(Imputer::mode(train)?), seed))
    })?;
    log(format!("EHR-only {:.4}", ehr.summary().0));
    let image = cross_validate(&cohort, "Image-only", &cv(config.train.clone()), |train, seed| {
        FusionModel::new(train.schema().clone(), grid_for(train)?, &widths_for(train, &widths), false, None, seed)
    })?;
    log(format!("Image-only {:.4}", image.summary().0));
    let fusion = cross_validate(&cohort, "Fusion (mode)", &cv(config.train.clone()), |train, seed| {
        FusionModel::new(
            train.schema().clone(),
            grid_for(train)?,
            &widths_for(train, &widths),
            true,
            Some(Imputer::mode(train)?),
            seed,
        )
    })?;
    log(format!("Fusion {:.4}", fusion.summary().0));
    let hulp = cross_validate(&cohort, "HuLP", &cv(config.train.clone()), |train, seed| {
        hulp_for(train, &config.model, seed)
    })?;
    log(format!("HuLP {:.4}", hulp.summary().0));

    let csv = reports::comparison_csv(&[
        (ehr, "EHR"),
        (image, "Image"),
        (fusion, "EHR+Image"),
        (hulp, "EHR+Image"),
    ]);
    write_file(&out_dir(common).join("comparison.csv"), &csv)?;
    Ok(())
}

/// Encoder widths for the fusion baselines: signal width, hidden layers, latent.
fn widths_for(train: &Cohort, tail: &[usize]) -> Vec<usize> {
    let mut w = vec![train.signal_dim()];
    w.extend_from_slice(tail);
    w
}

fn cmd_sweep_missingness(common: &Common) -> CliResult<()> {
    let config = resolve_config(common)?;
    if common.cohort.is_some() {
        return Err(CliError::Usage(
            "sweep-missingness draws its own complete cohorts; configure them under [cohort]".into(),
        ));
    }
    let sweep = MissingnessSweep {
        cohort: config.cohort.clone(),
        rates: config.sweep.rates.clone(),
        seeds: config.seeds.clone(),
        model: config.model.clone(),
        baseline_train: EhrOnlyModel::train_config(&config.train),
        train: config.train.clone(),
        knn_k: config.sweep.knn_k,
        folds: config.folds,
        with_oracle: config.sweep.with_oracle,
    };
    let report = run_missingness_sweep(&sweep)?;
    let dir = out_dir(common);
    write_file(&dir.join("missingness_table.csv"), &reports::sweep_table_csv(&report))?;
    write_file(&dir.join("missingness_rows.csv"), &reports::sweep_rows_csv(&report))?;
    for (method, means) in report.table() {
        let cells: Vec<String> = means.iter().map(|m| m.map_or("-".into(), |c| format!("{c:.4}"))).collect();
        log(format!("{method:>14}  {}", cells.join("  ")));
    }
    Ok(())
}

fn cmd_sweep_intervention(common: &Common, checkpoint: Option<&Path>) -> CliResult<()> {
    let config = resolve_config(common)?;
    let cohort = cohort_for(common, &config)?;
    let (model, valid) = match checkpoint {
        Some(path) => (read_checkpoint(path)?.0, cohort),
        None => {
            let (model, _, valid) = train_model(&cohort, &config)?;
            (model, valid)
        }
    };
    let mut points = Vec::with_capacity(config.sweep.fractions.len());
    for &f in &config.sweep.fractions {
        let c = partial_intervention_cindex(&model, &valid, f, config.seed)?;
        log(format!("fraction {f:.2}: {}", c.map_or("n/a".into(), |c| format!("{c:.4}"))));
        points.push((f, c));
    }
    write_file(
        &out_dir(common).join("intervention_sweep.csv"),
        &reports::intervention_sweep_csv(&points),
    )?;
    Ok(())
}

fn cmd_serve(common: &Common, checkpoint: &Path, port: Option<u16>) -> CliResult<()> {
    let config = resolve_config(common)?;
    let (model, bytes) = read_checkpoint(checkpoint)?;
    let cohort = match &common.cohort {
        Some(path) => Some(load_cohort(path)?),
        None => None,
    };
    let state = Arc::new(AppState::new(model, model_version(&bytes), cohort)?);
    let runtime = tokio::runtime::Runtime::new().map_err(|source| CliError::Io {
        path: PathBuf::from("<runtime>"),
        source,
    })?;
    runtime.block_on(serve(state, config.static_dir.clone(), port.unwrap_or(config.port)))?;
    Ok(())
}

pub fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Generate { common } => cmd_generate(common),
        Command::Train { common, checkpoint } => cmd_train(common, checkpoint.as_deref()),
        Command::Evaluate {
            common,
            checkpoint,
            with_interventions,
        } => cmd_evaluate(common, checkpoint.as_deref(), *with_interventions),
        Command::Compare { common } => cmd_compare(common),
        Command::SweepMissingness { common } => cmd_sweep_missingness(common),
        Command::SweepIntervention { common, checkpoint } => cmd_sweep_intervention(common, checkpoint.as_deref()),
        Command::Serve {
            common,
            checkpoint,
            port,
        } => cmd_serve(common, checkpoint, *port),
    }
}
