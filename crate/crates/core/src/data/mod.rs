//! Datasets, standard-format decoders, and shifted training partitions.

mod cifar;
mod idx;
mod normalize;
mod partition;
mod synthetic;

pub use cifar::{
    encode_cifar_records, load_cifar10, load_cifar_binary, parse_cifar_records, CIFAR_RECORD_LEN,
};
pub use idx::{encode_idx, load_idx, load_mnist, parse_idx, write_idx, IdxArray};
pub use normalize::{
    apply_normalizer, fit_normalizer, ChannelAffine, NormKind, NormalizationScheme,
};
pub use partition::{
    partition, write_partition_manifest, Partition, ShiftKind, ShiftSpec, SubsetId,
};
pub use synthetic::{make_synthetic, SyntheticSpec};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{LmcError, Result};
use crate::nn::InputShape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub shape: InputShape,
    pub classes: usize,
    /// Samples per class; sums to N.
    pub class_counts: Vec<usize>,
}

impl DatasetInfo {
    pub fn n(&self) -> usize {
        self.class_counts.iter().sum()
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }
}

/// Immutable labelled samples, one flattened (C, H, W) row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub info: DatasetInfo,
    pub inputs: Array2<f32>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        shape: InputShape,
        classes: usize,
        inputs: Array2<f32>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(LmcError::Shape(format!(
                "{} inputs, {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if inputs.ncols() != shape.dim() {
            return Err(LmcError::Shape(format!(
                "rows have {} features, shape implies {}",
                inputs.ncols(),
                shape.dim()
            )));
        }
        if classes == 0 || shape.dim() == 0 {
            return Err(LmcError::Shape(
                "class count and dimensionality must be positive".into(),
            ));
        }
        let mut class_counts = vec![0; classes];
        for &l in &labels {
            *class_counts
                .get_mut(l)
                .ok_or_else(|| LmcError::Shape(format!("label {l} outside [0, {classes})")))? += 1;
        }
        Ok(Dataset {
            info: DatasetInfo {
                name: name.into(),
                shape,
                classes,
                class_counts,
            },
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn classes(&self) -> usize {
        self.info.classes
    }

    /// Gathers the given rows into a training batch.
    pub fn batch(&self, indices: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize], name: impl Into<String>) -> Dataset {
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        let mut class_counts = vec![0; self.info.classes];
        labels.iter().for_each(|&l| class_counts[l] += 1);
        Dataset {
            info: DatasetInfo {
                name: name.into(),
                class_counts,
                ..self.info.clone()
            },
            inputs: self.inputs.select(Axis(0), indices),
            labels,
        }
    }

    /// Row indices of each class in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.info.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// Keeps the first `per_class` samples of every class, preserving order.
    pub fn take_per_class(&self, per_class: usize) -> Dataset {
        let mut seen = vec![0; self.info.classes];
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let c = &mut seen[self.labels[i]];
                *c += 1;
                *c <= per_class
            })
            .collect();
        self.select(&keep, format!("{}[{}/class]", self.info.name, per_class))
    }

    /// Row-wise concatenation; all parts must share shape and class count.
    pub fn concat(parts: &[&Dataset], name: impl Into<String>) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| LmcError::Precondition("nothing to concatenate".into()))?;
        if parts
            .iter()
            .any(|p| p.info.shape != first.info.shape || p.info.classes != first.info.classes)
        {
            return Err(LmcError::Shape(
                "datasets disagree on shape or class count".into(),
            ));
        }
        let views: Vec<_> = parts.iter().map(|p| p.inputs.view()).collect();
        let inputs =
            ndarray::concatenate(Axis(0), &views).map_err(|e| LmcError::Shape(e.to_string()))?;
        let labels = parts
            .iter()
            .flat_map(|p| p.labels.iter().copied())
            .collect();
        Dataset::new(name, first.info.shape, first.info.classes, inputs, labels)
    }

    #[cfg(test)]
    pub(crate) fn synthetic_for_tests(classes: usize, per_class: usize, dim: usize) -> Dataset {
        make_synthetic(&SyntheticSpec {
            classes,
            per_class,
            dim,
            spread: 0.3,
            seed: 11,
        })
        .unwrap()
    }
}

/// A training mini-batch: inputs (batch x D) and labels in [0, K).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f32>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Array2<f32>, labels: Vec<usize>) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(LmcError::Shape(format!(
                "{} inputs, {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn take_per_class_keeps_first_samples() {
        let ds = Dataset::synthetic_for_tests(3, 5, 2);
        let small = ds.take_per_class(2);
        assert_eq!(small.info.class_counts, vec![2, 2, 2]);
        assert_eq!(small.info.n(), 6);
        let firsts: Vec<usize> = ds
            .class_indices()
            .iter()
            .flat_map(|ix| ix[..2].to_vec())
            .collect();
        let mut sorted = firsts.clone();
        sorted.sort();
        assert_eq!(small.inputs, ds.inputs.select(Axis(0), &sorted));
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let x = Array2::zeros((2, 3));
        assert!(Dataset::new("t", InputShape::flat(3), 2, x, vec![0, 2]).is_err());
    }
}
