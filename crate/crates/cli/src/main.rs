//! `mve` — benchmark CLI for calibrated uncertainty ellipsoids.
//!
//! Subcommands:
//! - `run`: execute the per-seed protocol on a dataset and write a report.
//! - `report`: re-render the tables of a saved report, verifying that the
//!   stored aggregates match the per-seed records.
//! - `gaussian-check`: self-contained correctness checks of the Gaussian
//!   machinery, printing one pass/fail line per check.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use mve_cli::config::{ExperimentConfig, PartialConfig};
use mve_cli::experiment::run_experiment;
use mve_cli::report::{load_and_verify, render_table};
use mve_cli::synth;
use mve_core::center::{CenterConfig, CenterKind, CenterModel};
use mve_core::data::split_dataset;
use mve_core::estimators::{conformal_calibrate, evaluate, ShapeModel};
use mve_core::gaussian::{
    chi2_inv_cdf, condition, mc_coverage, optimal_single_ellipsoid, sample_joint,
};
use mve_core::special::{regularized_lower_gamma, unit_ball_volume};

#[derive(Parser)]
#[command(
    name = "mve",
    about = "Calibrated minimum-volume uncertainty ellipsoids: benchmarks and reports",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the benchmark protocol on a dataset.
    Run(RunArgs),
    /// Re-render the tables of a saved report directory.
    Report { dir: PathBuf },
    /// Check the Gaussian machinery against analytic ground truth.
    GaussianCheck(GaussianCheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Dataset: a registry name (ble_rssi, enb, indoor_localization,
    /// residential_building), `synthetic`, or a path to a CSV file.
    #[arg(long)]
    dataset: Option<String>,
    /// Label columns, comma separated; names, or zero-based indices when
    /// every token is numeric.
    #[arg(long)]
    labels: Option<String>,
    /// Directory holding prepared registry datasets.
    #[arg(long)]
    data_dir: Option<String>,
    /// Field delimiter for CSV input.
    #[arg(long)]
    delimiter: Option<String>,
    /// Comma-separated subset of ge,nle,lmve,oracle.
    #[arg(long)]
    methods: Option<String>,
    /// Target coverage level.
    #[arg(long)]
    eta: Option<f64>,
    /// Number of repetitions (seeds).
    #[arg(long)]
    reps: Option<usize>,
    /// Base seed; repetition i uses seed base+i.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the report files.
    #[arg(long)]
    out: Option<String>,
    /// Train the network at full scale (100k + 100k iterations) instead of
    /// the desk-scale default (10k + 10k).
    #[arg(long)]
    full: bool,
    /// Flat key-value config file; flags override file entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parallel worker slots (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Center model: linear-ridge, knn-mean, or oracle-gaussian.
    #[arg(long)]
    center: Option<String>,
    #[arg(long)]
    synth_d: Option<usize>,
    #[arg(long)]
    synth_n: Option<usize>,
    #[arg(long)]
    synth_m: Option<usize>,
    /// Seed for generating the synthetic dataset itself.
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    nle_fraction: Option<f64>,
    #[arg(long)]
    nle_mix: Option<f64>,
    #[arg(long)]
    iters_init: Option<usize>,
    #[arg(long)]
    iters_train: Option<usize>,
    #[arg(long)]
    lr_init: Option<f64>,
    #[arg(long)]
    lr_train: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Volume weight: `auto` (balance against the calibrated baseline) or a
    /// fixed number.
    #[arg(long)]
    lambda: Option<String>,
    /// Denominator of the auto lambda rule: det or sqrt-det.
    #[arg(long)]
    lambda_denominator: Option<String>,
    /// Positive definiteness floor for the network head.
    #[arg(long)]
    epsilon: Option<f64>,
}

impl RunArgs {
    fn partial(&self) -> PartialConfig {
        PartialConfig {
            dataset: self.dataset.clone(),
            data_dir: self.data_dir.clone(),
            labels: self.labels.clone(),
            delimiter: self.delimiter.clone(),
            methods: self.methods.clone(),
            eta: self.eta,
            reps: self.reps,
            seed: self.seed,
            out: self.out.clone(),
            full: if self.full { Some(true) } else { None },
            workers: self.workers,
            center: self.center.clone(),
            synth_d: self.synth_d,
            synth_n: self.synth_n,
            synth_m: self.synth_m,
            data_seed: self.data_seed,
            nle_fraction: self.nle_fraction,
            nle_mix: self.nle_mix,
            iters_init: self.iters_init,
            iters_train: self.iters_train,
            lr_init: self.lr_init,
            lr_train: self.lr_train,
            dropout: self.dropout,
            batch_size: self.batch_size,
            lambda: self.lambda.clone(),
            lambda_denominator: self.lambda_denominator.clone(),
            epsilon: self.epsilon,
        }
    }
}

#[derive(Args)]
struct GaussianCheckArgs {
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 0.9)]
    eta: f64,
    /// Monte-Carlo draws per coverage check.
    #[arg(long, default_value_t = 1_000_000)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Report { dir } => cmd_report(&dir),
        Command::GaussianCheck(args) => cmd_gaussian_check(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let mut partial = args.partial();
    if let Some(path) = &args.config {
        partial = partial.or(PartialConfig::from_file(path)?);
    }
    let cfg: ExperimentConfig = partial.finalize()?;
    let report = run_experiment(&cfg)?;
    print!("{}", render_table(&report.summary));
    if !report.failures.is_empty() {
        eprintln!(
            "{} method failure(s) across {} seed(s); see failures.jsonl",
            report.failures.len(),
            report.failed_seeds
        );
    }
    // More than 10% failed seeds turns the run into an error.
    if report.failed_seeds * 10 > cfg.repetitions {
        eprintln!(
            "{} of {} seeds failed (over 10%)",
            report.failed_seeds, cfg.repetitions
        );
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(dir: &PathBuf) -> Result<ExitCode> {
    let summary = load_and_verify(dir)
        .with_context(|| format!("loading report from {}", dir.display()))?;
    print!("{}", render_table(&summary));
    Ok(ExitCode::SUCCESS)
}

struct CheckOutcome {
    failures: usize,
}

impl CheckOutcome {
    fn report(&mut self, name: &str, pass: bool, detail: String) {
        if pass {
            println!("PASS {name}: {detail}");
        } else {
            self.failures += 1;
            println!("FAIL {name}: {detail}");
        }
    }
}

fn cmd_gaussian_check(args: GaussianCheckArgs) -> Result<ExitCode> {
    let mut outcome = CheckOutcome { failures: 0 };

    // Quantile round-trip over the probability grid.
    let mut worst = 0.0f64;
    for dof in 1..=10usize {
        for i in 1..100usize {
            let p = i as f64 / 100.0;
            let x = chi2_inv_cdf(p, dof)?;
            let back = regularized_lower_gamma(dof as f64 / 2.0, x / 2.0);
            worst = worst.max((back - p).abs());
        }
    }
    outcome.report(
        "chi2-quantile-roundtrip",
        worst <= 1e-10,
        format!("max |CDF(quantile(p)) - p| = {worst:.3e} over p in 0.01..0.99, dof 1..10"),
    );

    let closed_form = -2.0 * (0.1f64).ln();
    let solved = chi2_inv_cdf(0.9, 2)?;
    outcome.report(
        "chi2-two-dof-closed-form",
        (solved - closed_form).abs() <= 1e-9,
        format!("quantile(0.9, 2) = {solved:.12} vs -2 ln 0.1 = {closed_form:.12}"),
    );

    // Monte-Carlo exactness of the minimum-volume ellipsoid on the label
    // marginal of a random joint law.
    let spec = synth::build_spec(&mve_cli::config::SynthSpec {
        d: args.d,
        n: args.n,
        m: 1,
        data_seed: args.seed,
    })?;
    let (mu_y, sigma_yy) = spec.label_marginal();
    let mut etas = vec![0.5, 0.9, 0.95];
    if !etas.iter().any(|e| (e - args.eta).abs() < 1e-12) {
        etas.push(args.eta);
    }
    for (i, &eta) in etas.iter().enumerate() {
        let ellipsoid = optimal_single_ellipsoid(mu_y.clone(), sigma_yy.view(), eta)?;
        let coverage = mc_coverage(
            |_| ellipsoid.clone(),
            &spec,
            args.draws,
            args.seed + 1 + i as u64,
        );
        let tolerance = 1e-3f64.max(3.5 * (eta * (1.0 - eta) / args.draws as f64).sqrt());
        outcome.report(
            &format!("coverage-exactness-eta-{eta}"),
            (coverage - eta).abs() <= tolerance,
            format!("measured {coverage:.4} vs {eta} (tolerance {tolerance:.4})"),
        );
    }

    // End-to-end: oracle shapes with a ridge center, calibrated and
    // evaluated on fresh splits; the mean volume must approach the analytic
    // optimum and coverage must stay in band.
    let cond = condition(&spec)?;
    let data = sample_joint(&spec, 5_000, args.seed)?;
    let kappa = chi2_inv_cdf(args.eta, args.n)?;
    let analytic_volume = {
        let factor = mve_core::linalg::SpdFactor::new(cond.cond_cov())
            .context("conditional covariance factorization")?;
        unit_ball_volume(args.n) * kappa.powf(args.n as f64 / 2.0) * (0.5 * factor.log_det()).exp()
    };
    let reps = 10u64;
    let mut mean_coverage = 0.0;
    let mut mean_volume = 0.0;
    for rep in 0..reps {
        let split = split_dataset(&data, args.seed + rep)?;
        let x_train = data.x_rows(split.train());
        let y_train = data.y_rows(split.train());
        let center = CenterModel::fit(
            x_train.view(),
            y_train.view(),
            CenterKind::LinearRidge,
            &CenterConfig::default(),
        )?;
        let model = conformal_calibrate(
            ShapeModel::oracle(&cond),
            center,
            data.x_rows(split.val()).view(),
            data.y_rows(split.val()).view(),
            args.eta,
        )?;
        let eval = evaluate(
            &model,
            data.x_rows(split.test()).view(),
            data.y_rows(split.test()).view(),
        )?;
        mean_coverage += eval.coverage;
        mean_volume += eval.mean_volume;
    }
    mean_coverage /= reps as f64;
    mean_volume /= reps as f64;
    outcome.report(
        "oracle-end-to-end-coverage",
        (mean_coverage - args.eta).abs() <= 0.03,
        format!("mean coverage {mean_coverage:.4} vs target {}", args.eta),
    );
    outcome.report(
        "oracle-end-to-end-volume",
        (mean_volume - analytic_volume).abs() <= 0.05 * analytic_volume,
        format!("mean volume {mean_volume:.4} vs analytic {analytic_volume:.4}"),
    );

    if outcome.failures == 0 {
        println!("all checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{} check(s) failed", outcome.failures);
        Ok(ExitCode::FAILURE)
    }
}
