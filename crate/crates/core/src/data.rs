//! Dataset ingestion and bookkeeping: CSV loading with a drop-and-count
//! policy for bad rows, seeded train/validation/test splits, per-feature
//! standardization fitted on training rows only, a checksummed cache format,
//! and the registry of the benchmark datasets.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Train/validation/test fractions used by every experiment.
pub const SPLIT_FRACTIONS: (f64, f64, f64) = (0.81, 0.09, 0.10);

/// Smallest dataset a split accepts; keeps every part nonempty.
pub const MIN_SPLIT_ROWS: usize = 12;

/// Floor applied to per-feature standard deviations so constant features map
/// to zero instead of dividing by zero.
pub const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("dataset has no usable rows")]
    Empty,
    #[error("feature matrix has {x_rows} rows but label matrix has {y_rows}")]
    RowMismatch { x_rows: usize, y_rows: usize },
    #[error("dataset contains non-finite values")]
    NonFinite,
    #[error("expected {expected} column names, got {got}")]
    NameCount { expected: usize, got: usize },
    #[error("label column {0:?} not found in header")]
    MissingLabelColumn(String),
    #[error("label index {index} out of range for {columns} columns")]
    LabelIndexOutOfRange { index: usize, columns: usize },
    #[error("no label columns requested")]
    NoLabels,
    #[error("need at least {min} rows to split, got {rows}")]
    TooFewRows { rows: usize, min: usize },
    #[error("standardizer requires at least one row")]
    EmptyFit,
    #[error("cache file corrupt: {0}")]
    Cache(String),
    #[error("cache checksum mismatch: header says {expected}, data hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error(
        "dataset {name}: registry expects {want_rows} rows, {want_features} features, \
         {want_labels} labels; got {rows} rows, {features} features, {labels} labels"
    )]
    RegistryShape {
        name: String,
        want_rows: usize,
        want_features: usize,
        want_labels: usize,
        rows: usize,
        features: usize,
        labels: usize,
    },
}

/// A named feature/label matrix pair.
///
/// Rows of `x` and `y` correspond; entries are finite by construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    name: String,
    x: Array2<f64>,
    y: Array2<f64>,
    feature_names: Vec<String>,
    label_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        x: Array2<f64>,
        y: Array2<f64>,
        feature_names: Vec<String>,
        label_names: Vec<String>,
    ) -> Result<Self, DataError> {
        if x.nrows() != y.nrows() {
            return Err(DataError::RowMismatch {
                x_rows: x.nrows(),
                y_rows: y.nrows(),
            });
        }
        if x.nrows() == 0 {
            return Err(DataError::Empty);
        }
        if feature_names.len() != x.ncols() {
            return Err(DataError::NameCount {
                expected: x.ncols(),
                got: feature_names.len(),
            });
        }
        if label_names.len() != y.ncols() {
            return Err(DataError::NameCount {
                expected: y.ncols(),
                got: label_names.len(),
            });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite);
        }
        Ok(Self {
            name: name.into(),
            x,
            y,
            feature_names,
            label_names,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn label_dim(&self) -> usize {
        self.y.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> ArrayView2<'_, f64> {
        self.y.view()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    /// Gather feature rows by index.
    pub fn x_rows(&self, idx: &[usize]) -> Array2<f64> {
        self.x.select(Axis(0), idx)
    }

    /// Gather label rows by index.
    pub fn y_rows(&self, idx: &[usize]) -> Array2<f64> {
        self.y.select(Axis(0), idx)
    }
}

/// A seeded, disjoint train/validation/test partition of row indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    train_idx: Vec<usize>,
    val_idx: Vec<usize>,
    test_idx: Vec<usize>,
    seed: u64,
}

impl Split {
    pub fn train(&self) -> &[usize] {
        &self.train_idx
    }

    pub fn val(&self) -> &[usize] {
        &self.val_idx
    }

    pub fn test(&self) -> &[usize] {
        &self.test_idx
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Order-sensitive checksum of the three index lists; lets experiment
    /// records assert that methods within a seed saw identical splits.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::with_capacity(8 * (self.train_idx.len() + self.val_idx.len() + self.test_idx.len() + 3));
        for part in [&self.train_idx, &self.val_idx, &self.test_idx] {
            bytes.extend_from_slice(&(part.len() as u64).to_le_bytes());
            for &i in part.iter() {
                bytes.extend_from_slice(&(i as u64).to_le_bytes());
            }
        }
        fnv1a64(&bytes)
    }
}

/// Split `rows` indices into train/validation/test parts.
///
/// A seeded uniform permutation is cut contiguously: `floor(0.81 m)` rows of
/// train, `floor(0.09 m)` validation, remainder test.
pub fn split_rows(rows: usize, seed: u64) -> Result<Split, DataError> {
    if rows < MIN_SPLIT_ROWS {
        return Err(DataError::TooFewRows {
            rows,
            min: MIN_SPLIT_ROWS,
        });
    }
    let mut perm: Vec<usize> = (0..rows).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);

    let n_train = (rows as f64 * SPLIT_FRACTIONS.0).floor() as usize;
    let n_val = (rows as f64 * SPLIT_FRACTIONS.1).floor() as usize;
    let val_end = n_train + n_val;
    Ok(Split {
        train_idx: perm[..n_train].to_vec(),
        val_idx: perm[n_train..val_end].to_vec(),
        test_idx: perm[val_end..].to_vec(),
        seed,
    })
}

/// Split a dataset's rows; see [`split_rows`].
pub fn split_dataset(ds: &Dataset, seed: u64) -> Result<Split, DataError> {
    split_rows(ds.rows(), seed)
}

/// Per-feature affine transform `(x - mean) / scale` with the scale floored
/// at [`STD_FLOOR`]. Fit on training rows only; the stored parameters never
/// see validation or test data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Array1<f64>,
    scale: Array1<f64>,
}

impl Standardizer {
    /// Fit means and (population) standard deviations per column.
    pub fn fit(rows: ArrayView2<'_, f64>) -> Result<Self, DataError> {
        if rows.nrows() == 0 {
            return Err(DataError::EmptyFit);
        }
        let m = rows.nrows() as f64;
        let mean = rows.sum_axis(Axis(0)) / m;
        let mut var = Array1::<f64>::zeros(rows.ncols());
        for row in rows.rows() {
            for (j, v) in row.iter().enumerate() {
                let d = v - mean[j];
                var[j] += d * d;
            }
        }
        let scale = var.mapv(|v| (v / m).sqrt().max(STD_FLOOR));
        Ok(Self { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> ArrayView1<'_, f64> {
        self.mean.view()
    }

    pub fn scale(&self) -> ArrayView1<'_, f64> {
        self.scale.view()
    }

    pub fn transform(&self, rows: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = rows.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        out
    }

    pub fn transform_vec(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut out = x.to_owned();
        for (j, v) in out.iter_mut().enumerate() {
            *v = (*v - self.mean[j]) / self.scale[j];
        }
        out
    }
}

/// How label columns are picked out of a delimited file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumns {
    Names(Vec<String>),
    Indices(Vec<usize>),
}

/// A loaded dataset plus the number of rows dropped for unparseable or
/// non-finite cells.
#[derive(Debug)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    pub dropped_rows: usize,
}

/// Load a delimited text file with a header row.
///
/// Every column must parse as a number; rows with any unparseable, missing,
/// or non-finite cell are dropped and counted. File column order is
/// preserved for both features and labels.
pub fn load_csv(
    path: &Path,
    labels: &LabelColumns,
    delimiter: u8,
) -> Result<LoadedCsv, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let columns = header.len();

    let mut label_set = vec![false; columns];
    match labels {
        LabelColumns::Names(names) => {
            if names.is_empty() {
                return Err(DataError::NoLabels);
            }
            for name in names {
                let pos = header
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| DataError::MissingLabelColumn(name.clone()))?;
                label_set[pos] = true;
            }
        }
        LabelColumns::Indices(indices) => {
            if indices.is_empty() {
                return Err(DataError::NoLabels);
            }
            for &index in indices {
                if index >= columns {
                    return Err(DataError::LabelIndexOutOfRange { index, columns });
                }
                label_set[index] = true;
            }
        }
    }

    let mut x_flat = Vec::new();
    let mut y_flat = Vec::new();
    let mut kept = 0usize;
    let mut dropped = 0usize;
    let mut parsed = Vec::with_capacity(columns);
    for record in reader.records() {
        let record = record?;
        parsed.clear();
        let mut ok = record.len() == columns;
        if ok {
            for field in record.iter() {
                match field.parse::<f64>() {
                    Ok(v) if v.is_finite() => parsed.push(v),
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
        }
        if !ok {
            dropped += 1;
            continue;
        }
        for (j, &v) in parsed.iter().enumerate() {
            if label_set[j] {
                y_flat.push(v);
            } else {
                x_flat.push(v);
            }
        }
        kept += 1;
    }
    if dropped > 0 {
        log::warn!(
            "{}: dropped {dropped} row(s) with unusable cells",
            path.display()
        );
    }
    if kept == 0 {
        return Err(DataError::Empty);
    }

    let n_labels = label_set.iter().filter(|&&b| b).count();
    let n_features = columns - n_labels;
    let feature_names: Vec<String> = header
        .iter()
        .zip(&label_set)
        .filter(|(_, &is_label)| !is_label)
        .map(|(h, _)| h.clone())
        .collect();
    let label_names: Vec<String> = header
        .iter()
        .zip(&label_set)
        .filter(|(_, &is_label)| is_label)
        .map(|(h, _)| h.clone())
        .collect();

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let x = Array2::from_shape_vec((kept, n_features), x_flat)
        .expect("row-major feature buffer matches shape");
    let y = Array2::from_shape_vec((kept, n_labels), y_flat)
        .expect("row-major label buffer matches shape");
    Ok(LoadedCsv {
        dataset: Dataset::new(name, x, y, feature_names, label_names)?,
        dropped_rows: dropped,
    })
}

/// 64-bit FNV-1a hash; used for cache checksums and split fingerprints.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

const CACHE_MAGIC: &str = "# mve dataset cache v1";

/// Write a dataset in the columnar cache format.
///
/// Layout: a magic line, `# key: value` header lines (name, rows, features,
/// labels, tab-separated column names), a `# checksum:` line holding the
/// FNV-1a 64 hash of the data block, then one tab-separated row per line
/// with features before labels, printed with 17 significant digits so values
/// round-trip exactly.
pub fn write_cache(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut body = String::new();
    for i in 0..ds.rows() {
        let mut first = true;
        for v in ds.x.row(i).iter().chain(ds.y.row(i).iter()) {
            if !first {
                body.push('\t');
            }
            body.push_str(&format!("{v:.17e}"));
            first = false;
        }
        body.push('\n');
    }
    let checksum = fnv1a64(body.as_bytes());
    let mut file = fs::File::create(path)?;
    writeln!(file, "{CACHE_MAGIC}")?;
    writeln!(file, "# name: {}", ds.name())?;
    writeln!(file, "# rows: {}", ds.rows())?;
    writeln!(file, "# features: {}", ds.feature_dim())?;
    writeln!(file, "# labels: {}", ds.label_dim())?;
    writeln!(file, "# feature_names: {}", ds.feature_names.join("\t"))?;
    writeln!(file, "# label_names: {}", ds.label_names.join("\t"))?;
    writeln!(file, "# checksum: {checksum:016x}")?;
    file.write_all(body.as_bytes())?;
    Ok(())
}

/// Read a dataset written by [`write_cache`], verifying the checksum.
pub fn read_cache(path: &Path) -> Result<Dataset, DataError> {
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let magic = lines
        .next()
        .transpose()?
        .ok_or_else(|| DataError::Cache("empty file".into()))?;
    if magic != CACHE_MAGIC {
        return Err(DataError::Cache(format!("unexpected magic line {magic:?}")));
    }

    let mut name = String::new();
    let mut rows = 0usize;
    let mut features = 0usize;
    let mut labels = 0usize;
    let mut feature_names = Vec::new();
    let mut label_names = Vec::new();
    let mut expected_checksum = String::new();
    let mut body = String::new();
    let header_field = |line: &str, key: &str| -> Option<String> {
        line.strip_prefix(&format!("# {key}: ")).map(str::to_string)
    };
    for line in lines {
        let line = line?;
        if let Some(rest) = line.strip_prefix("# ") {
            let line = format!("# {rest}");
            if let Some(v) = header_field(&line, "name") {
                name = v;
            } else if let Some(v) = header_field(&line, "rows") {
                rows = v.parse().map_err(|_| DataError::Cache("bad rows".into()))?;
            } else if let Some(v) = header_field(&line, "features") {
                features = v
                    .parse()
                    .map_err(|_| DataError::Cache("bad features".into()))?;
            } else if let Some(v) = header_field(&line, "labels") {
                labels = v
                    .parse()
                    .map_err(|_| DataError::Cache("bad labels".into()))?;
            } else if let Some(v) = header_field(&line, "feature_names") {
                feature_names = v.split('\t').map(str::to_string).collect();
            } else if let Some(v) = header_field(&line, "label_names") {
                label_names = v.split('\t').map(str::to_string).collect();
            } else if let Some(v) = header_field(&line, "checksum") {
                expected_checksum = v;
            }
        } else {
            body.push_str(&line);
            body.push('\n');
        }
    }

    let actual = format!("{:016x}", fnv1a64(body.as_bytes()));
    if actual != expected_checksum {
        return Err(DataError::ChecksumMismatch {
            expected: expected_checksum,
            actual,
        });
    }

    let mut x_flat = Vec::with_capacity(rows * features);
    let mut y_flat = Vec::with_capacity(rows * labels);
    let mut seen = 0usize;
    for line in body.lines() {
        let values: Vec<f64> = line
            .split('\t')
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| DataError::Cache(format!("bad data line {:?}", line)))?;
        if values.len() != features + labels {
            return Err(DataError::Cache(format!(
                "data line has {} values, expected {}",
                values.len(),
                features + labels
            )));
        }
        x_flat.extend_from_slice(&values[..features]);
        y_flat.extend_from_slice(&values[features..]);
        seen += 1;
    }
    if seen != rows {
        return Err(DataError::Cache(format!(
            "header says {rows} rows, file has {seen}"
        )));
    }
    let x = Array2::from_shape_vec((rows, features), x_flat).expect("shape checked above");
    let y = Array2::from_shape_vec((rows, labels), y_flat).expect("shape checked above");
    Dataset::new(name, x, y, feature_names, label_names)
}

/// Registry entry for one benchmark dataset: the shape contract a prepared
/// file must satisfy plus pointers for obtaining it.
#[derive(Debug, Clone, Copy)]
pub struct DatasetSpec {
    pub name: &'static str,
    pub rows: usize,
    pub features: usize,
    pub labels: usize,
    /// Label column names in the prepared CSV (see docs/datasets.md).
    pub label_columns: &'static [&'static str],
    pub source: &'static str,
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} rows, {} features, {} labels",
            self.name, self.rows, self.features, self.labels
        )
    }
}

/// The four localization benchmark datasets. Files are user-prepared (see
/// docs/datasets.md); the registry pins the shapes experiments expect.
pub const REGISTRY: [DatasetSpec; 4] = [
    DatasetSpec {
        name: "ble_rssi",
        rows: 1420,
        features: 13,
        labels: 2,
        label_columns: &["x", "y"],
        source: "BLE RSSI indoor localization (Waldo Library; UCI repository)",
    },
    DatasetSpec {
        name: "enb",
        rows: 768,
        features: 8,
        labels: 2,
        label_columns: &["Y1", "Y2"],
        source: "Energy efficiency (ENB2012; UCI repository / Mulan)",
    },
    DatasetSpec {
        name: "indoor_localization",
        rows: 19937,
        features: 519,
        labels: 2,
        label_columns: &["LONGITUDE", "LATITUDE"],
        source: "UJIIndoorLoc (UCI repository)",
    },
    DatasetSpec {
        name: "residential_building",
        rows: 372,
        features: 103,
        labels: 2,
        label_columns: &["V-9", "V-10"],
        source: "Residential building (UCI repository)",
    },
];

pub fn registry_entry(name: &str) -> Option<&'static DatasetSpec> {
    REGISTRY.iter().find(|spec| spec.name == name)
}

/// If the dataset's name is in the registry, check its shape against the
/// registry contract.
pub fn validate_registry_shape(ds: &Dataset) -> Result<(), DataError> {
    if let Some(spec) = registry_entry(ds.name()) {
        if ds.rows() != spec.rows
            || ds.feature_dim() != spec.features
            || ds.label_dim() != spec.labels
        {
            return Err(DataError::RegistryShape {
                name: ds.name().to_string(),
                want_rows: spec.rows,
                want_features: spec.features,
                want_labels: spec.labels,
                rows: ds.rows(),
                features: ds.feature_dim(),
                labels: ds.label_dim(),
            });
        }
    }
    Ok(())
}
