//! Dataset ingestion and synthetic generators.
//!
//! Features are public in this setting, so CSV loading z-scores every feature
//! column against the full file. Labels are integers in `0..classes`. All
//! generators and splits are deterministic from an explicit seed.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::{rng_streams, seeded_rng};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("label column {0:?} not found in header")]
    MissingLabelColumn(String),
    #[error("row {row}: non-numeric value {value:?} in column {column:?}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: label {label} out of range for {classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: f64,
        classes: usize,
    },
    #[error("dataset is empty")]
    Empty,
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
    #[error("invalid split plan: {0}")]
    BadPlan(String),
    #[error("operation requires a binary task, dataset has {0} classes")]
    BinaryOnly(usize),
}

/// Feature rows plus integer labels in `0..classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimension; zero for an empty dataset.
    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// A new dataset holding the rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], name: &str) -> LabeledDataset {
        LabeledDataset {
            name: name.to_string(),
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &LabeledDataset, name: &str) -> LabeledDataset {
        let mut features = self.features.clone();
        features.extend(other.features.iter().cloned());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        LabeledDataset {
            name: name.to_string(),
            features,
            labels,
            classes: self.classes.max(other.classes),
        }
    }
}

impl fmt::Display for LabeledDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} rows x {} features, {} classes {:?}",
            self.name,
            self.len(),
            self.dim(),
            self.classes,
            self.class_counts()
        )
    }
}

/// How to carve a dataset into the two parties' shares and the holdout set.
#[derive(Debug, Clone)]
pub struct SplitPlan {
    pub holdout_fraction: f64,
    pub d1_fraction: f64,
    pub d2_fraction: f64,
    /// Exact per-class row counts for party one's share. When set, the
    /// holdout is drawn class-balanced and party two receives up to
    /// `d2_fraction` of the total from the remainder.
    pub skew: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            holdout_fraction: 0.30,
            d1_fraction: 0.10,
            d2_fraction: 0.60,
            skew: None,
            seed: 0,
        }
    }
}

/// Loads a CSV with a header row; every column except `label_column` must be
/// numeric and becomes a feature, z-scored against the full file.
pub fn load_csv(
    path: &Path,
    label_column: &str,
    classes: usize,
) -> Result<LabeledDataset, DataError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => DataError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        },
        _ => DataError::Csv(e),
    })?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::MissingLabelColumn(label_column.to_string()))?;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let mut feats = Vec::with_capacity(record.len().saturating_sub(1));
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| DataError::NonNumeric {
                row,
                column: headers.get(col).unwrap_or("?").to_string(),
                value: field.to_string(),
            })?;
            if col == label_idx {
                if value.fract() != 0.0 || value < 0.0 || value >= classes as f64 {
                    return Err(DataError::LabelOutOfRange {
                        row,
                        label: value,
                        classes,
                    });
                }
                labels.push(value as usize);
            } else {
                if !value.is_finite() {
                    return Err(DataError::NonNumeric {
                        row,
                        column: headers.get(col).unwrap_or("?").to_string(),
                        value: field.to_string(),
                    });
                }
                feats.push(value);
            }
        }
        features.push(feats);
    }
    if features.is_empty() {
        return Err(DataError::Empty);
    }
    standardize(&mut features);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Ok(LabeledDataset {
        name,
        features,
        labels,
        classes,
    })
}

/// Writes a dataset as CSV with columns `f0..f{d-1},label`. Values use the
/// shortest representation that round-trips, so load/save preserves features
/// exactly (up to re-standardization on load).
pub fn write_csv(ds: &LabeledDataset, path: &Path) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path).map_err(DataError::Csv)?;
    let mut header: Vec<String> = (0..ds.dim()).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    writer.write_record(&header)?;
    for (feats, label) in ds.features.iter().zip(&ds.labels) {
        let mut record: Vec<String> = feats.iter().map(|v| format!("{v}")).collect();
        record.push(label.to_string());
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

/// Z-scores every column in place against the population mean and standard
/// deviation; near-constant columns are centered only.
pub fn standardize(features: &mut [Vec<f64>]) {
    if features.is_empty() {
        return;
    }
    let n = features.len() as f64;
    let dim = features[0].len();
    for col in 0..dim {
        let mean = features.iter().map(|r| r[col]).sum::<f64>() / n;
        let var = features.iter().map(|r| (r[col] - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        for row in features.iter_mut() {
            row[col] = if std > 1e-12 {
                (row[col] - mean) / std
            } else {
                row[col] - mean
            };
        }
    }
}

/// Splits into `(d1, d2, holdout)` under a seeded shuffle. The three parts
/// are disjoint; sizes are `round(n * fraction)` each, and a `skew` plan
/// instead fixes exact per-class counts for `d1` with a class-balanced
/// holdout.
pub fn split(
    ds: &LabeledDataset,
    plan: &SplitPlan,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset), DataError> {
    for (label, f) in [
        ("holdout_fraction", plan.holdout_fraction),
        ("d1_fraction", plan.d1_fraction),
        ("d2_fraction", plan.d2_fraction),
    ] {
        // d1_fraction may be zero only under a skew plan, which replaces it.
        let zero_ok = f == 0.0 && label == "d1_fraction" && plan.skew.is_some();
        if !(f > 0.0 && f < 1.0) && !zero_ok {
            return Err(DataError::BadPlan(format!("{label} = {f} not in (0, 1)")));
        }
    }
    if plan.holdout_fraction + plan.d1_fraction + plan.d2_fraction > 1.0 + 1e-9 {
        return Err(DataError::BadPlan("fractions sum above 1".into()));
    }
    if ds.is_empty() {
        return Err(DataError::Empty);
    }

    let n = ds.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(plan.seed, rng_streams::DATA));

    let (d1_idx, d2_idx, hold_idx) = if let Some(skew) = &plan.skew {
        if skew.len() != ds.classes {
            return Err(DataError::BadPlan(format!(
                "skew has {} entries for {} classes",
                skew.len(),
                ds.classes
            )));
        }
        let n_hold = (n as f64 * plan.holdout_fraction).round() as usize;
        let per_class = n_hold / ds.classes;
        let mut hold_quota = vec![per_class; ds.classes];
        let mut hold_idx = Vec::with_capacity(per_class * ds.classes);
        let mut rest = Vec::with_capacity(n);
        for &i in &order {
            let c = ds.labels[i];
            if hold_quota[c] > 0 {
                hold_quota[c] -= 1;
                hold_idx.push(i);
            } else {
                rest.push(i);
            }
        }
        if hold_quota.iter().any(|&q| q > 0) {
            return Err(DataError::InfeasibleSplit(
                "not enough rows per class for a balanced holdout".into(),
            ));
        }
        let mut d1_quota = skew.clone();
        let mut d1_idx = Vec::new();
        let mut pool = Vec::with_capacity(rest.len());
        for i in rest {
            let c = ds.labels[i];
            if d1_quota[c] > 0 {
                d1_quota[c] -= 1;
                d1_idx.push(i);
            } else {
                pool.push(i);
            }
        }
        if d1_quota.iter().any(|&q| q > 0) {
            return Err(DataError::InfeasibleSplit(format!(
                "skew {skew:?} not satisfiable after the holdout draw"
            )));
        }
        let n_d2 = ((n as f64 * plan.d2_fraction).round() as usize).min(pool.len());
        let d2_idx = pool[..n_d2].to_vec();
        (d1_idx, d2_idx, hold_idx)
    } else {
        let n_hold = (n as f64 * plan.holdout_fraction).round() as usize;
        let n_d1 = (n as f64 * plan.d1_fraction).round() as usize;
        let n_d2 = (n as f64 * plan.d2_fraction).round() as usize;
        if n_hold + n_d1 + n_d2 > n {
            return Err(DataError::InfeasibleSplit(format!(
                "{n_hold} + {n_d1} + {n_d2} rows requested from {n}"
            )));
        }
        let hold_idx = order[..n_hold].to_vec();
        let d1_idx = order[n_hold..n_hold + n_d1].to_vec();
        let d2_idx = order[n_hold + n_d1..n_hold + n_d1 + n_d2].to_vec();
        (d1_idx, d2_idx, hold_idx)
    };

    Ok((
        ds.subset(&d1_idx, &format!("{}-d1", ds.name)),
        ds.subset(&d2_idx, &format!("{}-d2", ds.name)),
        ds.subset(&hold_idx, &format!("{}-holdout", ds.name)),
    ))
}

/// Mean distance between the two class centroids of the default binary
/// generator, calibrated once so the stock architecture reaches at least 0.9
/// holdout accuracy.
pub const DEFAULT_SEPARATION: f64 = 3.0;

/// Two spherical Gaussian clusters with the default separation.
pub fn gen_synthetic_binary(
    rows: usize,
    features: usize,
    class_balance: f64,
    seed: u64,
) -> LabeledDataset {
    gen_synthetic_binary_separated(rows, features, class_balance, DEFAULT_SEPARATION, seed)
}

/// Two spherical Gaussian clusters whose centroids sit `separation` apart.
/// `class_balance` is the fraction of rows labelled 1, honored exactly.
pub fn gen_synthetic_binary_separated(
    rows: usize,
    features: usize,
    class_balance: f64,
    separation: f64,
    seed: u64,
) -> LabeledDataset {
    assert!(rows >= 2 && features >= 1);
    assert!((0.0..=1.0).contains(&class_balance));
    let n1 = (rows as f64 * class_balance).round() as usize;
    let n0 = rows - n1;
    let offset = separation / (2.0 * (features as f64).sqrt());
    let mut rng = seeded_rng(seed, rng_streams::DATA);
    let normal = Normal::new(0.0, 1.0).unwrap();

    let mut feature_rows = Vec::with_capacity(rows);
    let mut labels = Vec::with_capacity(rows);
    for (count, label, sign) in [(n0, 0usize, -1.0), (n1, 1, 1.0)] {
        for _ in 0..count {
            let row: Vec<f64> = (0..features)
                .map(|_| sign * offset + normal.sample(&mut rng))
                .collect();
            feature_rows.push(row);
            labels.push(label);
        }
    }
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(&mut rng);
    let mut features_shuffled: Vec<Vec<f64>> = order.iter().map(|&i| feature_rows[i].clone()).collect();
    let labels_shuffled: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
    standardize(&mut features_shuffled);
    LabeledDataset {
        name: "synthetic-binary".into(),
        features: features_shuffled,
        labels: labels_shuffled,
        classes: 2,
    }
}

/// Cluster geometry for [`gen_iris_like`]: one well-separated class and two
/// overlapping ones, 150 rows of 4 features in 3 balanced classes. The
/// constants were calibrated once so that a model trained on a 10% share
/// scores near 0.73 on the holdout while the 70% pool reaches roughly 0.85.
const IRIS_LIKE_MEANS: [[f64; 4]; 3] = [
    [-1.30, 0.80, -1.30, -1.25],
    [0.45, -0.40, 0.50, 0.45],
    [1.10, -0.40, 1.10, 1.05],
];
const IRIS_LIKE_STD: f64 = 0.62;

/// A 150 x 4 three-class dataset with the size and difficulty profile of the
/// classic iris table: class 0 sits apart, classes 1 and 2 overlap.
pub fn gen_iris_like(seed: u64) -> LabeledDataset {
    let mut rng = seeded_rng(seed, rng_streams::DATA);
    let normal = Normal::new(0.0, IRIS_LIKE_STD).unwrap();
    let mut feature_rows = Vec::with_capacity(150);
    let mut labels = Vec::with_capacity(150);
    for (class, mean) in IRIS_LIKE_MEANS.iter().enumerate() {
        for _ in 0..50 {
            let row: Vec<f64> = mean.iter().map(|m| m + normal.sample(&mut rng)).collect();
            feature_rows.push(row);
            labels.push(class);
        }
    }
    let mut order: Vec<usize> = (0..150).collect();
    order.shuffle(&mut rng);
    let mut features: Vec<Vec<f64>> = order.iter().map(|&i| feature_rows[i].clone()).collect();
    let labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
    standardize(&mut features);
    LabeledDataset {
        name: "iris-like".into(),
        features,
        labels,
        classes: 3,
    }
}

/// Labels every row 1 with probability `prob_one`, independent of features.
#[derive(Debug, Clone, Copy)]
pub struct RandomLabeler {
    pub prob_one: f64,
    pub seed: u64,
}

/// Replaces the labels of a binary dataset with i.i.d. Bernoulli draws;
/// features are untouched.
pub fn relabel_random(
    ds: &LabeledDataset,
    labeler: &RandomLabeler,
) -> Result<LabeledDataset, DataError> {
    if ds.classes != 2 {
        return Err(DataError::BinaryOnly(ds.classes));
    }
    let mut rng = seeded_rng(labeler.seed, rng_streams::DATA);
    let labels = (0..ds.len())
        .map(|_| usize::from(rng.random::<f64>() < labeler.prob_one))
        .collect();
    Ok(LabeledDataset {
        name: format!("{}-random-labels", ds.name),
        features: ds.features.clone(),
        labels,
        classes: 2,
    })
}
