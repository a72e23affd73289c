use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Labeled samples stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    n_features: usize,
    n_classes: usize,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Dataset("no samples".into()));
        }
        if rows.len() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let n_features = rows[0].len();
        if n_features == 0 {
            return Err(Error::Dataset("samples have no features".into()));
        }
        let mut features = Vec::with_capacity(rows.len() * n_features);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_features {
                return Err(Error::Dataset(format!(
                    "row {i} has {} features, expected {n_features}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!(
                    "row {i} has non-finite feature {v}"
                )));
            }
            features.extend_from_slice(row);
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        Ok(Self {
            features,
            labels,
            n_features,
            n_classes,
        })
    }

    /// Reads a CSV whose last column is an integer class label. A first row
    /// that does not parse as numbers is treated as a header.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        Self::from_records(reader)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        Self::from_records(reader)
    }

    fn from_records<R: std::io::Read>(mut reader: csv::Reader<R>) -> Result<Self> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let line = i + 1;
            if record.len() < 2 {
                return Err(Error::Parse {
                    line,
                    message: "need at least one feature and a label".into(),
                });
            }
            let (label, feats) = record
                .iter()
                .collect::<Vec<_>>()
                .split_last()
                .map(|(l, f)| (*l, f.to_vec()))
                .unwrap();
            let parsed: std::result::Result<Vec<f64>, _> =
                feats.iter().map(|f| f.parse::<f64>()).collect();
            let label = label.parse::<usize>();
            match (parsed, label) {
                (Ok(row), Ok(label)) => {
                    rows.push(row);
                    labels.push(label);
                }
                _ if i == 0 => continue,
                (Err(_), _) => {
                    return Err(Error::Parse {
                        line,
                        message: "non-numeric feature".into(),
                    })
                }
                (_, Err(_)) => {
                    return Err(Error::Parse {
                        line,
                        message: "label is not a non-negative integer".into(),
                    })
                }
            }
        }
        Self::new(rows, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Same features with labels permuted.
    pub fn shuffled_labels<R: Rng>(&self, rng: &mut R) -> Self {
        let mut labels = self.labels.clone();
        labels.shuffle(rng);
        Self {
            labels,
            ..self.clone()
        }
    }

    /// Assigns each sample to one of `k` folds so every class is spread evenly.
    pub fn stratified_folds<R: Rng>(&self, k: usize, rng: &mut R) -> Result<Vec<usize>> {
        if k < 2 {
            return Err(Error::Dataset(format!("need at least 2 folds, got {k}")));
        }
        let mut fold = vec![0; self.len()];
        let mut offset = 0;
        for class in 0..self.n_classes {
            let mut members: Vec<usize> = (0..self.len())
                .filter(|&i| self.labels[i] == class)
                .collect();
            if members.is_empty() {
                continue;
            }
            if members.len() < k {
                return Err(Error::Dataset(format!(
                    "class {class} has {} samples, too few for {k} stratified folds",
                    members.len()
                )));
            }
            members.shuffle(rng);
            for (j, &i) in members.iter().enumerate() {
                fold[i] = (j + offset) % k;
            }
            offset += members.len();
        }
        Ok(fold)
    }

    /// Two Gaussian-free blobs: class `c` centered at `±separation` on every
    /// feature with uniform noise of half-width `noise`.
    pub fn two_blobs<R: Rng>(
        n_per_class: usize,
        n_features: usize,
        separation: f64,
        noise: f64,
        rng: &mut R,
    ) -> Self {
        let mut rows = Vec::with_capacity(2 * n_per_class);
        let mut labels = Vec::with_capacity(2 * n_per_class);
        for i in 0..2 * n_per_class {
            let class = i % 2;
            let center = if class == 0 { -separation } else { separation };
            rows.push(
                (0..n_features)
                    .map(|_| center + rng.gen_range(-noise..=noise))
                    .collect(),
            );
            labels.push(class);
        }
        Self::new(rows, labels).expect("generated dataset is well formed")
    }
}
