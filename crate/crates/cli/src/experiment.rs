//! The benchmark protocol: for each seed, split the data, fit one center
//! model on the training rows, fit every requested shape method on the same
//! residuals, calibrate on the validation rows, and evaluate on the test
//! rows. Per-seed records aggregate into mean ± std tables.
//!
//! Seeds run in parallel worker slots; each seed owns all of its mutable
//! state, and records are merged in seed order so the output files are
//! byte-stable. A method failure inside a seed is recorded as a diagnostic
//! and the sweep continues.

use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use mve_core::center::{CenterConfig, CenterModel};
use mve_core::data::{
    load_csv, split_dataset, validate_registry_shape, Dataset, Split,
};
use mve_core::estimators::{
    conformal_calibrate, evaluate, fit_ge, fit_nle, imitation_targets, CalibratedModel,
    Evaluation, ShapeModel,
};
use mve_core::gaussian::ConditionalGaussian;
use mve_core::lmve::{
    init_phase, initial_params, select_lambda, train_phase, LambdaRule, TrainConfig,
};
use mve_core::Standardizer;
use ndarray::Array2;

use crate::config::{DataSource, ExperimentConfig, Method};
use crate::report::{
    aggregate_report, render_table, write_atomic, write_jsonl, RecordRow, Summary, TimingRow,
    CONFIG_FILE, FAILURES_FILE, RECORDS_FILE, SUMMARY_FILE, TABLE_FILE, TIMINGS_FILE,
};
use crate::synth;

/// A method that failed inside one seed, with the stage and error message.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodFailure {
    pub method: String,
    pub seed: u64,
    pub stage: String,
    pub error: String,
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub records: Vec<RecordRow>,
    pub timings: Vec<TimingRow>,
    pub failures: Vec<MethodFailure>,
    pub summary: Summary,
    /// Seeds with at least one failed method.
    pub failed_seeds: usize,
}

/// Load the configured dataset plus, for synthetic runs, the analytic
/// conditional law backing the oracle method.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, Option<ConditionalGaussian>)> {
    match &cfg.dataset {
        DataSource::Synthetic => {
            let (data, cond) = synth::build_dataset(&cfg.synth)?;
            Ok((data, Some(cond)))
        }
        DataSource::Registry(name) => {
            let path = cfg.data_dir.join(format!("{name}.csv"));
            if !path.exists() {
                bail!(
                    "dataset {name:?} not found at {}; prepare the file as described in \
                     docs/datasets.md (or point --data-dir elsewhere)",
                    path.display()
                );
            }
            let labels = cfg
                .labels
                .as_ref()
                .expect("registry sources always resolve label columns");
            let loaded = load_csv(&path, labels, cfg.delimiter)
                .with_context(|| format!("loading {}", path.display()))?;
            if loaded.dropped_rows > 0 {
                log::warn!("{name}: dropped {} unusable rows", loaded.dropped_rows);
            }
            validate_registry_shape(&loaded.dataset)
                .with_context(|| format!("{name} does not match its registry contract"))?;
            Ok((loaded.dataset, None))
        }
        DataSource::Csv(path) => {
            let labels = cfg
                .labels
                .as_ref()
                .ok_or_else(|| anyhow!("--labels is required for csv datasets"))?;
            let loaded = load_csv(path, labels, cfg.delimiter)
                .with_context(|| format!("loading {}", path.display()))?;
            if loaded.dropped_rows > 0 {
                log::warn!(
                    "{}: dropped {} unusable rows",
                    path.display(),
                    loaded.dropped_rows
                );
            }
            Ok((loaded.dataset, None))
        }
    }
}

struct SeedData<'a> {
    seed: u64,
    split: Split,
    x_train: Array2<f64>,
    y_train: Array2<f64>,
    x_val: Array2<f64>,
    y_val: Array2<f64>,
    x_test: Array2<f64>,
    y_test: Array2<f64>,
    center: CenterModel,
    residuals: Array2<f64>,
    oracle: Option<&'a ConditionalGaussian>,
}

fn prepare_seed<'a>(
    data: &Dataset,
    oracle: Option<&'a ConditionalGaussian>,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<SeedData<'a>> {
    let split = split_dataset(data, seed).context("splitting dataset")?;
    let x_train = data.x_rows(split.train());
    let y_train = data.y_rows(split.train());
    let x_val = data.x_rows(split.val());
    let y_val = data.y_rows(split.val());
    let x_test = data.x_rows(split.test());
    let y_test = data.y_rows(split.test());

    let center_config = CenterConfig {
        oracle: oracle.cloned(),
        ..Default::default()
    };
    let center = CenterModel::fit(x_train.view(), y_train.view(), cfg.center, &center_config)
        .context("fitting center model")?;
    let residuals = center
        .residuals(x_train.view(), y_train.view())
        .context("computing training residuals")?;
    Ok(SeedData {
        seed,
        split,
        x_train,
        y_train,
        x_val,
        y_val,
        x_test,
        y_test,
        center,
        residuals,
        oracle,
    })
}

/// Fit the learned shape model for one seed: imitation of the NLE baseline,
/// lambda balancing against the same baseline calibrated on the training
/// split, then fine-tuning on the penalized objective.
fn fit_lmve_shape(
    seed_data: &SeedData<'_>,
    nle: &ShapeModel,
    tc: &TrainConfig,
    cfg: &ExperimentConfig,
) -> Result<(ShapeModel, f64)> {
    let ge = ge_matrix_of(&seed_data.residuals)?;
    let eps = tc.resolve_epsilon(ge.view());

    let targets = imitation_targets(nle, seed_data.x_train.view())?;
    let standardizer = Standardizer::fit(seed_data.x_train.view())?;
    let xs_train = standardizer.transform(seed_data.x_train.view());

    let d = seed_data.x_train.ncols();
    let n = seed_data.y_train.ncols();
    let start = initial_params(d, n, Some(ge.view()), tc.seed);
    let initialized = init_phase(start, xs_train.view(), &targets, eps, tc)?;

    let lambda = match tc.lambda {
        LambdaRule::Fixed(value) => value,
        LambdaRule::Auto => {
            let baseline = conformal_calibrate(
                nle.clone(),
                seed_data.center.clone(),
                seed_data.x_train.view(),
                seed_data.y_train.view(),
                cfg.eta,
            )
            .context("calibrating the lambda baseline on the training split")?;
            select_lambda(
                &baseline,
                seed_data.x_train.view(),
                seed_data.y_train.view(),
                tc.lambda_denominator,
            )?
        }
    };

    let trained = train_phase(
        initialized.params,
        xs_train.view(),
        seed_data.residuals.view(),
        lambda,
        eps,
        tc,
    )?;
    Ok((
        ShapeModel::Lmve {
            params: trained.params,
            eps,
            standardizer,
        },
        lambda,
    ))
}

fn ge_matrix_of(residuals: &Array2<f64>) -> Result<Array2<f64>> {
    match fit_ge(residuals.view())? {
        ShapeModel::Ge { cov } => Ok(cov),
        _ => unreachable!("fit_ge returns the global variant"),
    }
}

fn calibrate_and_evaluate(
    shape: ShapeModel,
    seed_data: &SeedData<'_>,
    eta: f64,
) -> Result<(CalibratedModel, Evaluation)> {
    let model = conformal_calibrate(
        shape,
        seed_data.center.clone(),
        seed_data.x_val.view(),
        seed_data.y_val.view(),
        eta,
    )?;
    let eval = evaluate(&model, seed_data.x_test.view(), seed_data.y_test.view())?;
    Ok((model, eval))
}

fn run_method(
    method: Method,
    seed_data: &SeedData<'_>,
    nle_cache: &mut Option<ShapeModel>,
    cfg: &ExperimentConfig,
) -> Result<(Evaluation, f64, usize, Option<f64>)> {
    let mut ensure_nle = |seed_data: &SeedData<'_>| -> Result<ShapeModel> {
        if nle_cache.is_none() {
            *nle_cache = Some(fit_nle(
                seed_data.x_train.view(),
                seed_data.residuals.view(),
                cfg.nle_fraction,
                cfg.nle_mix,
            )?);
        }
        Ok(nle_cache.clone().expect("just filled"))
    };

    let (shape, lambda) = match method {
        Method::Ge => (fit_ge(seed_data.residuals.view())?, None),
        Method::Nle => (ensure_nle(seed_data)?, None),
        Method::Oracle => {
            let cond = seed_data.oracle.ok_or_else(|| {
                anyhow!("the oracle method needs the analytic conditional law; use --dataset synthetic")
            })?;
            (ShapeModel::oracle(cond), None)
        }
        Method::Lmve => {
            let nle = ensure_nle(seed_data)?;
            let tc = cfg.train_config(seed_data.seed);
            let (shape, lambda) = fit_lmve_shape(seed_data, &nle, &tc, cfg)?;
            (shape, Some(lambda))
        }
    };
    let (model, eval) = calibrate_and_evaluate(shape, seed_data, cfg.eta)?;
    Ok((eval, model.alpha_q(), model.calib_size(), lambda))
}

fn run_seed(
    data: &Dataset,
    oracle: Option<&ConditionalGaussian>,
    cfg: &ExperimentConfig,
    seed: u64,
) -> (Vec<RecordRow>, Vec<TimingRow>, Vec<MethodFailure>) {
    let mut records = Vec::new();
    let mut timings = Vec::new();
    let mut failures = Vec::new();

    let seed_data = match prepare_seed(data, oracle, cfg, seed) {
        Ok(sd) => sd,
        Err(e) => {
            for method in &cfg.methods {
                failures.push(MethodFailure {
                    method: method.as_str().into(),
                    seed,
                    stage: "prepare".into(),
                    error: format!("{e:#}"),
                });
            }
            return (records, timings, failures);
        }
    };
    let checksum = format!("{:016x}", seed_data.split.checksum());

    let mut nle_cache = None;
    for &method in &cfg.methods {
        let start = Instant::now();
        match run_method(method, &seed_data, &mut nle_cache, cfg) {
            Ok((eval, alpha_q, calib_size, lambda)) => {
                records.push(RecordRow {
                    method: method.as_str().into(),
                    seed,
                    eta: cfg.eta,
                    coverage: eval.coverage,
                    mean_volume: eval.mean_volume,
                    alpha_q,
                    lambda,
                    calib_size,
                    split_checksum: checksum.clone(),
                });
                timings.push(TimingRow {
                    method: method.as_str().into(),
                    seed,
                    wall_time_ms: start.elapsed().as_millis() as u64,
                });
            }
            Err(e) => failures.push(MethodFailure {
                method: method.as_str().into(),
                seed,
                stage: "fit-calibrate-evaluate".into(),
                error: format!("{e:#}"),
            }),
        }
    }
    (records, timings, failures)
}

/// Run the full sweep described by the configuration. When an output
/// directory is configured the report files are also written there.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (data, oracle) = load_dataset(cfg)?;
    let seeds: Vec<u64> = (0..cfg.repetitions as u64)
        .map(|i| cfg.base_seed + i)
        .collect();

    let run_all = || -> Vec<(u64, (Vec<RecordRow>, Vec<TimingRow>, Vec<MethodFailure>))> {
        seeds
            .par_iter()
            .map(|&seed| (seed, run_seed(&data, oracle.as_ref(), cfg, seed)))
            .collect()
    };
    let mut outcomes = match cfg.workers {
        Some(workers) => rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .context("building worker pool")?
            .install(run_all),
        None => run_all(),
    };
    outcomes.sort_by_key(|(seed, _)| *seed);

    let mut records = Vec::new();
    let mut timings = Vec::new();
    let mut failures = Vec::new();
    let mut failed_seeds = 0usize;
    for (_, (r, t, f)) in outcomes {
        if !f.is_empty() {
            failed_seeds += 1;
        }
        records.extend(r);
        timings.extend(t);
        failures.extend(f);
    }
    for failure in &failures {
        log::error!(
            "seed {} method {} failed at {}: {}",
            failure.seed,
            failure.method,
            failure.stage,
            failure.error
        );
    }
    if records.is_empty() {
        bail!("every seed failed; nothing to report");
    }

    let summary = Summary {
        dataset: cfg.dataset.label(),
        eta: cfg.eta,
        repetitions: cfg.repetitions,
        base_seed: cfg.base_seed,
        aggregates: aggregate_report(&records)?,
    };
    let report = ExperimentReport {
        records,
        timings,
        failures,
        summary,
        failed_seeds,
    };
    if let Some(dir) = &cfg.out_dir {
        write_report_files(dir, cfg, &report)?;
    }
    Ok(report)
}

/// Write all report files into `dir` (created if missing).
pub fn write_report_files(
    dir: &Path,
    cfg: &ExperimentConfig,
    report: &ExperimentReport,
) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    write_jsonl(&dir.join(RECORDS_FILE), &report.records)?;
    write_jsonl(&dir.join(TIMINGS_FILE), &report.timings)?;
    if !report.failures.is_empty() {
        write_jsonl(&dir.join(FAILURES_FILE), &report.failures)?;
    }
    let summary_json = serde_json::to_string_pretty(&report.summary)?;
    write_atomic(&dir.join(SUMMARY_FILE), summary_json.as_bytes())?;
    write_atomic(
        &dir.join(TABLE_FILE),
        render_table(&report.summary).as_bytes(),
    )?;
    write_atomic(&dir.join(CONFIG_FILE), cfg.echo().as_bytes())?;
    Ok(())
}
