//! Tabular datasets: dictionary-validated ingestion, group-aware holdout,
//! three-way splits and marginal resampling.

mod dictionary;
pub mod generators;
mod io;
mod split;
mod synth;

pub use dictionary::{parse_data_dictionary, DataDictionary, Encoding, FeatureSpec, TargetSpec};
pub use io::{load_dataset, write_dataset};
pub use split::{reserve_holdout, split_three_way, HoldoutPartition, SplitIndices};
pub use synth::synthesize_marginals;

pub(crate) use dictionary::json_error;

use std::collections::BTreeSet;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Encoded rows, class ids and per-row individual identifiers, validated
/// against a [`DataDictionary`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    matrix: Matrix,
    labels: Vec<usize>,
    group_ids: Vec<String>,
    dictionary: DataDictionary,
}

impl Dataset {
    pub fn new(
        matrix: Matrix,
        labels: Vec<usize>,
        group_ids: Vec<String>,
        dictionary: DataDictionary,
    ) -> Result<Self> {
        dictionary.validate()?;
        if matrix.rows() == 0 {
            return Err(Error::EmptyDataset("dataset has no rows".into()));
        }
        if matrix.cols() != dictionary.width() {
            return Err(Error::Shape(format!(
                "matrix has {} columns but the dictionary declares {}",
                matrix.cols(),
                dictionary.width()
            )));
        }
        if labels.len() != matrix.rows() || group_ids.len() != matrix.rows() {
            return Err(Error::Shape(format!(
                "{} rows, {} labels, {} group ids",
                matrix.rows(),
                labels.len(),
                group_ids.len()
            )));
        }
        let n_classes = dictionary.n_classes();
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(Error::Label(format!("row {i} has class id {l} >= {n_classes}")));
        }
        check_encodings(&matrix, &dictionary)?;
        Ok(Self {
            matrix,
            labels,
            group_ids,
            dictionary,
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn group_ids(&self) -> &[String] {
        &self.group_ids
    }

    pub fn dictionary(&self) -> &DataDictionary {
        &self.dictionary
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn width(&self) -> usize {
        self.matrix.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.dictionary.n_classes()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset("subset selects no rows".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_rows()) {
            return Err(Error::Argument(format!("row index {bad} out of range")));
        }
        Ok(Self {
            matrix: self.matrix.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            group_ids: indices.iter().map(|&i| self.group_ids[i].clone()).collect(),
            dictionary: self.dictionary.clone(),
        })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn distinct_groups(&self) -> BTreeSet<&str> {
        self.group_ids.iter().map(String::as_str).collect()
    }

    /// SHA-256 over the matrix bits, labels and group ids.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_rows() as u64).to_le_bytes());
        h.update((self.width() as u64).to_le_bytes());
        for v in self.matrix.as_slice() {
            h.update(v.to_bits().to_le_bytes());
        }
        for &l in &self.labels {
            h.update((l as u64).to_le_bytes());
        }
        for g in &self.group_ids {
            h.update((g.len() as u64).to_le_bytes());
            h.update(g.as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// True when any group id appears in both datasets.
    pub fn shares_groups_with(&self, other: &Dataset) -> bool {
        let mine = self.distinct_groups();
        other.group_ids.iter().any(|g| mine.contains(g.as_str()))
    }

    /// Size in bytes of the canonical CSV form.
    pub fn csv_size(&self) -> usize {
        write_dataset(self).len()
    }
}

fn check_encodings(matrix: &Matrix, dict: &DataDictionary) -> Result<()> {
    for i in 0..matrix.rows() {
        let row = matrix.row(i);
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Encoding(format!("row {i} column {j} is not finite")));
        }
        for f in &dict.features {
            match f.encoding {
                Encoding::Onehot => {
                    let mut ones = 0;
                    for &j in &f.indices {
                        match row[j] {
                            v if v == 1.0 => ones += 1,
                            v if v == 0.0 => {}
                            v => {
                                return Err(Error::Encoding(format!(
                                    "row {i}: onehot feature '{}' has value {v}",
                                    f.name
                                )))
                            }
                        }
                    }
                    if ones != 1 {
                        return Err(Error::Encoding(format!(
                            "row {i}: onehot feature '{}' has {ones} active columns",
                            f.name
                        )));
                    }
                }
                Encoding::Int64 => {
                    let v = row[f.indices[0]];
                    if v.fract() != 0.0 || v.abs() > 9.007_199_254_740_992e15 {
                        return Err(Error::Encoding(format!(
                            "row {i}: int64 feature '{}' holds non-integral {v}",
                            f.name
                        )));
                    }
                }
                Encoding::Float64 => {}
            }
        }
    }
    Ok(())
}
