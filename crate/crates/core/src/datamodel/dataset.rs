use std::collections::HashSet;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// A labeled sample set: `n` rows of `d` real features, labels in `[0, C)`.
///
/// The class count `C` is carried explicitly so that a sample set missing
/// some classes still lives in the full label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    /// Builds a dataset, checking every invariant.
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let (n, d) = features.dim();
        ensure!(n >= 1, InvalidDataset, "dataset has no rows");
        ensure!(d >= 1, InvalidDataset, "dataset has no feature columns");
        ensure!(
            num_classes >= 2,
            InvalidDataset,
            "need at least 2 classes, got {num_classes}"
        );
        ensure!(
            labels.len() == n,
            InvalidDataset,
            "{} labels for {n} rows",
            labels.len()
        );
        for (row, values) in features.outer_iter().enumerate() {
            if let Some(col) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row, col });
            }
        }
        if let Some(row) = labels.iter().position(|&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                row,
                label: labels[row] as i64,
                num_classes,
            });
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Always false: a dataset holds at least one row.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn into_parts(self) -> (Array2<f64>, Vec<usize>, usize) {
        (self.features, self.labels, self.num_classes)
    }

    /// Same labels, new features (e.g. after an augmentor). The row count
    /// must match; the dimension may change.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        ensure!(
            features.nrows() == self.len(),
            DimensionMismatch,
            "replacement features have {} rows, dataset has {}",
            features.nrows(),
            self.len()
        );
        Dataset::new(features, self.labels.clone(), self.num_classes)
    }

    /// Same features, new labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Dataset::new(self.features.clone(), labels, self.num_classes)
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        ensure!(!indices.is_empty(), InvalidDataset, "empty row selection");
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidArgument(format!(
                "row index {bad} out of range for {} rows",
                self.len()
            )));
        }
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(Self {
            features,
            labels,
            num_classes: self.num_classes,
        })
    }

    /// Row-wise concatenation, preserving the order of `parts`.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Dataset>) -> Result<Self> {
        let parts: Vec<&Dataset> = parts.into_iter().collect();
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidDataset("nothing to concatenate".into()))?;
        for p in &parts {
            ensure!(
                p.dim() == first.dim() && p.num_classes == first.num_classes,
                DimensionMismatch,
                "cannot concatenate d={} C={} with d={} C={}",
                first.dim(),
                first.num_classes,
                p.dim(),
                p.num_classes
            );
        }
        let views: Vec<_> = parts.iter().map(|p| p.features.view()).collect();
        let features = concatenate(Axis(0), &views)
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        let labels = parts.iter().flat_map(|p| p.labels.iter().copied()).collect();
        Ok(Self {
            features,
            labels,
            num_classes: first.num_classes,
        })
    }

    /// Number of rows carrying each label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Row indices grouped by label.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }
}

/// One named data source and its sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub id: String,
    pub dataset: Dataset,
}

/// The ordered set of sources being valued.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceCollection {
    sources: Vec<Source>,
}

impl SourceCollection {
    pub fn new(sources: Vec<Source>) -> Result<Self> {
        let first = sources
            .first()
            .ok_or_else(|| Error::InvalidArgument("source collection is empty".into()))?;
        let (d, c) = (first.dataset.dim(), first.dataset.num_classes());
        let mut seen = HashSet::new();
        for s in &sources {
            ensure!(
                seen.insert(s.id.as_str()),
                InvalidArgument,
                "duplicate source id {:?}",
                s.id
            );
            ensure!(
                s.dataset.dim() == d && s.dataset.num_classes() == c,
                DimensionMismatch,
                "source {:?} has d={} C={}, expected d={d} C={c}",
                s.id,
                s.dataset.dim(),
                s.dataset.num_classes()
            );
        }
        Ok(Self { sources })
    }

    /// Builds a collection from `(id, dataset)` pairs.
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Dataset)>,
        S: Into<String>,
    {
        Self::new(
            pairs
                .into_iter()
                .map(|(id, dataset)| Source {
                    id: id.into(),
                    dataset,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.sources[0].dataset.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.sources[0].dataset.num_classes()
    }

    pub fn ids(&self) -> Vec<String> {
        self.sources.iter().map(|s| s.id.clone()).collect()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Source> {
        self.sources.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Dataset> {
        self.sources.iter().find(|s| s.id == id).map(|s| &s.dataset)
    }

    pub fn datasets(&self) -> impl Iterator<Item = &Dataset> {
        self.sources.iter().map(|s| &s.dataset)
    }

    pub fn into_sources(self) -> Vec<Source> {
        self.sources
    }
}

impl<'a> IntoIterator for &'a SourceCollection {
    type Item = &'a Source;
    type IntoIter = std::slice::Iter<'a, Source>;

    fn into_iter(self) -> Self::IntoIter {
        self.sources.iter()
    }
}
