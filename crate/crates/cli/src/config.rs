//! Experiment configuration: defaults, a flat key-value config file, and
//! command-line flags, merged in that order (flags win).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use mve_core::center::CenterKind;
use mve_core::data::{registry_entry, LabelColumns};
use mve_core::estimators::{NLE_DEFAULT_FRACTION, NLE_DEFAULT_MIX};
use mve_core::lmve::{AdamParams, LambdaDenominator, LambdaRule, TrainConfig};

/// Iteration counts for the two fitting phases: the full-scale budget
/// (split half/half across phases) and the desk-scale default.
pub const FULL_ITERS: (usize, usize) = (100_000, 100_000);
pub const DESK_ITERS: (usize, usize) = (10_000, 10_000);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Ge,
    Nle,
    Lmve,
    Oracle,
}

impl Method {
    pub const CANONICAL_ORDER: [Method; 4] =
        [Method::Ge, Method::Nle, Method::Lmve, Method::Oracle];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ge => "ge",
            Method::Nle => "nle",
            Method::Lmve => "lmve",
            Method::Oracle => "oracle",
        }
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ge" => Ok(Method::Ge),
            "nle" => Ok(Method::Nle),
            "lmve" => Ok(Method::Lmve),
            "oracle" => Ok(Method::Oracle),
            other => bail!("unknown method {other:?}; expected ge, nle, lmve, or oracle"),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dimensions of the built-in synthetic jointly Gaussian dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub data_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            d: 3,
            n: 2,
            m: 5_000,
            data_seed: 0,
        }
    }
}

/// Where the benchmark data comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    /// One of the registry datasets, loaded from `<data_dir>/<name>.csv`.
    Registry(String),
    /// An arbitrary delimited file; label columns must be given.
    Csv(PathBuf),
    /// The built-in jointly Gaussian generator.
    Synthetic,
}

impl DataSource {
    fn parse(value: &str) -> Self {
        if value.eq_ignore_ascii_case("synthetic") {
            DataSource::Synthetic
        } else if registry_entry(value).is_some() {
            DataSource::Registry(value.to_string())
        } else {
            DataSource::Csv(PathBuf::from(value))
        }
    }

    pub fn label(&self) -> String {
        match self {
            DataSource::Registry(name) => name.clone(),
            DataSource::Csv(path) => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into()),
            DataSource::Synthetic => "synthetic".into(),
        }
    }
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: DataSource,
    pub data_dir: PathBuf,
    pub labels: Option<LabelColumns>,
    pub delimiter: u8,
    pub methods: Vec<Method>,
    pub eta: f64,
    pub repetitions: usize,
    pub base_seed: u64,
    pub out_dir: Option<PathBuf>,
    pub full_scale: bool,
    pub workers: Option<usize>,
    pub center: CenterKind,
    pub synth: SynthSpec,
    pub nle_fraction: f64,
    pub nle_mix: f64,
    // Training-phase overrides; None keeps the scale-derived default.
    pub iters_init: Option<usize>,
    pub iters_train: Option<usize>,
    pub lr_init: f64,
    pub lr_train: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub lambda: LambdaRule,
    pub lambda_denominator: LambdaDenominator,
    pub epsilon: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DataSource::Synthetic,
            data_dir: PathBuf::from("data"),
            labels: None,
            delimiter: b',',
            methods: vec![Method::Ge, Method::Nle, Method::Lmve],
            eta: 0.9,
            repetitions: 50,
            base_seed: 0,
            out_dir: None,
            full_scale: false,
            workers: None,
            center: CenterKind::LinearRidge,
            synth: SynthSpec::default(),
            nle_fraction: NLE_DEFAULT_FRACTION,
            nle_mix: NLE_DEFAULT_MIX,
            iters_init: None,
            iters_train: None,
            lr_init: 1e-3,
            lr_train: 1e-5,
            dropout: 0.1,
            batch_size: 128,
            lambda: LambdaRule::Auto,
            lambda_denominator: LambdaDenominator::Det,
            epsilon: None,
        }
    }
}

impl ExperimentConfig {
    /// Network training configuration for one repetition.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let scale = if self.full_scale { FULL_ITERS } else { DESK_ITERS };
        TrainConfig {
            eta: self.eta,
            epsilon: self.epsilon,
            lambda: self.lambda,
            lambda_denominator: self.lambda_denominator,
            dropout_rate: self.dropout,
            iters_init: self.iters_init.unwrap_or(scale.0),
            iters_train: self.iters_train.unwrap_or(scale.1),
            lr_init: self.lr_init,
            lr_train: self.lr_train,
            adam: AdamParams::default(),
            batch_size: self.batch_size,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 1 {
            bail!("repetitions must be at least 1");
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            bail!("eta must lie in (0, 1), got {}", self.eta);
        }
        if self.methods.is_empty() {
            bail!("no methods requested");
        }
        if matches!(self.dataset, DataSource::Csv(_)) && self.labels.is_none() {
            bail!("--labels is required for csv datasets");
        }
        Ok(())
    }

    /// The resolved configuration as sorted `key = value` lines; echoed next
    /// to the report so a run can be reproduced from its output directory.
    pub fn echo(&self) -> String {
        let mut map: BTreeMap<&str, String> = BTreeMap::new();
        map.insert(
            "dataset",
            match &self.dataset {
                DataSource::Registry(name) => name.clone(),
                DataSource::Csv(path) => path.display().to_string(),
                DataSource::Synthetic => "synthetic".into(),
            },
        );
        map.insert("data-dir", self.data_dir.display().to_string());
        if let Some(labels) = &self.labels {
            map.insert("labels", format_labels(labels));
        }
        map.insert("delimiter", (self.delimiter as char).to_string());
        map.insert(
            "methods",
            self.methods
                .iter()
                .map(Method::as_str)
                .collect::<Vec<_>>()
                .join(","),
        );
        map.insert("eta", trim_float(self.eta));
        map.insert("reps", self.repetitions.to_string());
        map.insert("seed", self.base_seed.to_string());
        map.insert("full", self.full_scale.to_string());
        map.insert("center", self.center.as_str().into());
        map.insert("synth-d", self.synth.d.to_string());
        map.insert("synth-n", self.synth.n.to_string());
        map.insert("synth-m", self.synth.m.to_string());
        map.insert("data-seed", self.synth.data_seed.to_string());
        map.insert("nle-fraction", trim_float(self.nle_fraction));
        map.insert("nle-mix", trim_float(self.nle_mix));
        let tc = self.train_config(self.base_seed);
        map.insert("iters-init", tc.iters_init.to_string());
        map.insert("iters-train", tc.iters_train.to_string());
        map.insert("lr-init", trim_float(self.lr_init));
        map.insert("lr-train", trim_float(self.lr_train));
        map.insert("dropout", trim_float(self.dropout));
        map.insert("batch-size", self.batch_size.to_string());
        map.insert(
            "lambda",
            match self.lambda {
                LambdaRule::Auto => "auto".into(),
                LambdaRule::Fixed(v) => trim_float(v),
            },
        );
        map.insert(
            "lambda-denominator",
            match self.lambda_denominator {
                LambdaDenominator::Det => "det".into(),
                LambdaDenominator::SqrtDet => "sqrt-det".into(),
            },
        );
        if let Some(eps) = self.epsilon {
            map.insert("epsilon", trim_float(eps));
        }
        let mut out = String::new();
        for (k, v) in map {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

fn trim_float(v: f64) -> String {
    let s = format!("{v}");
    s
}

fn format_labels(labels: &LabelColumns) -> String {
    match labels {
        LabelColumns::Names(names) => names.join(","),
        LabelColumns::Indices(idx) => idx
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(","),
    }
}

/// Parse a `--labels` style value: all-numeric tokens select by column
/// index, anything else by column name.
pub fn parse_labels(value: &str) -> LabelColumns {
    let tokens: Vec<&str> = value.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
    if !tokens.is_empty() && tokens.iter().all(|t| t.parse::<usize>().is_ok()) {
        LabelColumns::Indices(tokens.iter().map(|t| t.parse().unwrap()).collect())
    } else {
        LabelColumns::Names(tokens.iter().map(|t| t.to_string()).collect())
    }
}

fn parse_methods(value: &str) -> Result<Vec<Method>> {
    let mut requested = Vec::new();
    for token in value.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        requested.push(token.parse::<Method>()?);
    }
    // Canonical order with duplicates removed keeps report files stable
    // under flag reordering.
    let mut methods = Vec::new();
    for m in Method::CANONICAL_ORDER {
        if requested.contains(&m) {
            methods.push(m);
        }
    }
    if methods.is_empty() {
        bail!("no methods in {value:?}");
    }
    Ok(methods)
}

fn parse_center(value: &str) -> Result<CenterKind> {
    match value.trim().to_ascii_lowercase().as_str() {
        "linear-ridge" | "ridge" => Ok(CenterKind::LinearRidge),
        "knn-mean" | "knn" => Ok(CenterKind::KnnMean),
        "oracle-gaussian" | "oracle" => Ok(CenterKind::OracleGaussian),
        other => bail!("unknown center model {other:?}"),
    }
}

/// Unresolved option bundle; every field mirrors a config-file key and a
/// command-line flag.
#[derive(Debug, Clone, Default)]
pub struct PartialConfig {
    pub dataset: Option<String>,
    pub data_dir: Option<String>,
    pub labels: Option<String>,
    pub delimiter: Option<String>,
    pub methods: Option<String>,
    pub eta: Option<f64>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub full: Option<bool>,
    pub workers: Option<usize>,
    pub center: Option<String>,
    pub synth_d: Option<usize>,
    pub synth_n: Option<usize>,
    pub synth_m: Option<usize>,
    pub data_seed: Option<u64>,
    pub nle_fraction: Option<f64>,
    pub nle_mix: Option<f64>,
    pub iters_init: Option<usize>,
    pub iters_train: Option<usize>,
    pub lr_init: Option<f64>,
    pub lr_train: Option<f64>,
    pub dropout: Option<f64>,
    pub batch_size: Option<usize>,
    pub lambda: Option<String>,
    pub lambda_denominator: Option<String>,
    pub epsilon: Option<f64>,
}

impl PartialConfig {
    /// Fill unset fields from `other` (lower precedence).
    pub fn or(mut self, other: PartialConfig) -> PartialConfig {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if self.$field.is_none() { self.$field = other.$field; })*
            };
        }
        take!(
            dataset, data_dir, labels, delimiter, methods, eta, reps, seed, out, full, workers,
            center, synth_d, synth_n, synth_m, data_seed, nle_fraction, nle_mix, iters_init,
            iters_train, lr_init, lr_train, dropout, batch_size, lambda, lambda_denominator,
            epsilon
        );
        self
    }

    /// Read a flat `key = value` config file. Unknown keys are an error so
    /// typos do not silently fall back to defaults.
    pub fn from_file(path: &Path) -> Result<PartialConfig> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let mut out = PartialConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{}:{}: expected `key = value`", path.display(), lineno + 1);
            };
            let key = key.trim();
            let value = value.trim().to_string();
            let parse_err = |what: &str| format!("{}:{}: bad {what}", path.display(), lineno + 1);
            match key {
                "dataset" => out.dataset = Some(value),
                "data-dir" => out.data_dir = Some(value),
                "labels" => out.labels = Some(value),
                "delimiter" => out.delimiter = Some(value),
                "methods" => out.methods = Some(value),
                "eta" => out.eta = Some(value.parse().with_context(|| parse_err("eta"))?),
                "reps" => out.reps = Some(value.parse().with_context(|| parse_err("reps"))?),
                "seed" => out.seed = Some(value.parse().with_context(|| parse_err("seed"))?),
                "out" => out.out = Some(value),
                "full" => out.full = Some(value.parse().with_context(|| parse_err("full"))?),
                "workers" => {
                    out.workers = Some(value.parse().with_context(|| parse_err("workers"))?)
                }
                "center" => out.center = Some(value),
                "synth-d" => {
                    out.synth_d = Some(value.parse().with_context(|| parse_err("synth-d"))?)
                }
                "synth-n" => {
                    out.synth_n = Some(value.parse().with_context(|| parse_err("synth-n"))?)
                }
                "synth-m" => {
                    out.synth_m = Some(value.parse().with_context(|| parse_err("synth-m"))?)
                }
                "data-seed" => {
                    out.data_seed = Some(value.parse().with_context(|| parse_err("data-seed"))?)
                }
                "nle-fraction" => {
                    out.nle_fraction =
                        Some(value.parse().with_context(|| parse_err("nle-fraction"))?)
                }
                "nle-mix" => {
                    out.nle_mix = Some(value.parse().with_context(|| parse_err("nle-mix"))?)
                }
                "iters-init" => {
                    out.iters_init = Some(value.parse().with_context(|| parse_err("iters-init"))?)
                }
                "iters-train" => {
                    out.iters_train =
                        Some(value.parse().with_context(|| parse_err("iters-train"))?)
                }
                "lr-init" => {
                    out.lr_init = Some(value.parse().with_context(|| parse_err("lr-init"))?)
                }
                "lr-train" => {
                    out.lr_train = Some(value.parse().with_context(|| parse_err("lr-train"))?)
                }
                "dropout" => {
                    out.dropout = Some(value.parse().with_context(|| parse_err("dropout"))?)
                }
                "batch-size" => {
                    out.batch_size = Some(value.parse().with_context(|| parse_err("batch-size"))?)
                }
                "lambda" => out.lambda = Some(value),
                "lambda-denominator" => out.lambda_denominator = Some(value),
                "epsilon" => {
                    out.epsilon = Some(value.parse().with_context(|| parse_err("epsilon"))?)
                }
                other => bail!("{}:{}: unknown key {other:?}", path.display(), lineno + 1),
            }
        }
        Ok(out)
    }

    /// Resolve against defaults into a validated configuration.
    pub fn finalize(self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(dataset) = &self.dataset {
            cfg.dataset = DataSource::parse(dataset);
        }
        if let Some(dir) = self.data_dir {
            cfg.data_dir = PathBuf::from(dir);
        }
        if let Some(labels) = &self.labels {
            cfg.labels = Some(parse_labels(labels));
        } else if let DataSource::Registry(name) = &cfg.dataset {
            let spec = registry_entry(name).expect("registry name was validated");
            cfg.labels = Some(LabelColumns::Names(
                spec.label_columns.iter().map(|s| s.to_string()).collect(),
            ));
        }
        if let Some(delim) = &self.delimiter {
            let bytes = delim.as_bytes();
            if bytes.len() != 1 {
                bail!("delimiter must be a single byte, got {delim:?}");
            }
            cfg.delimiter = bytes[0];
        }
        if let Some(methods) = &self.methods {
            cfg.methods = parse_methods(methods)?;
        }
        if let Some(eta) = self.eta {
            cfg.eta = eta;
        }
        if let Some(reps) = self.reps {
            cfg.repetitions = reps;
        }
        if let Some(seed) = self.seed {
            cfg.base_seed = seed;
        }
        if let Some(out) = self.out {
            cfg.out_dir = Some(PathBuf::from(out));
        }
        if let Some(full) = self.full {
            cfg.full_scale = full;
        }
        cfg.workers = self.workers;
        if let Some(center) = &self.center {
            cfg.center = parse_center(center)?;
        }
        if let Some(d) = self.synth_d {
            cfg.synth.d = d;
        }
        if let Some(n) = self.synth_n {
            cfg.synth.n = n;
        }
        if let Some(m) = self.synth_m {
            cfg.synth.m = m;
        }
        if let Some(seed) = self.data_seed {
            cfg.synth.data_seed = seed;
        }
        if let Some(v) = self.nle_fraction {
            cfg.nle_fraction = v;
        }
        if let Some(v) = self.nle_mix {
            cfg.nle_mix = v;
        }
        cfg.iters_init = self.iters_init;
        cfg.iters_train = self.iters_train;
        if let Some(v) = self.lr_init {
            cfg.lr_init = v;
        }
        if let Some(v) = self.lr_train {
            cfg.lr_train = v;
        }
        if let Some(v) = self.dropout {
            cfg.dropout = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(lambda) = &self.lambda {
            cfg.lambda = if lambda.eq_ignore_ascii_case("auto") {
                LambdaRule::Auto
            } else {
                LambdaRule::Fixed(
                    lambda
                        .parse()
                        .with_context(|| format!("bad lambda {lambda:?}"))?,
                )
            };
        }
        if let Some(denom) = &self.lambda_denominator {
            cfg.lambda_denominator = match denom.trim().to_ascii_lowercase().as_str() {
                "det" => LambdaDenominator::Det,
                "sqrt-det" | "sqrtdet" | "sqrt_det" => LambdaDenominator::SqrtDet,
                other => bail!("unknown lambda denominator {other:?}"),
            };
        }
        cfg.epsilon = self.epsilon;
        cfg.validate()?;
        Ok(cfg)
    }
}
