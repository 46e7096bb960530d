//! Turns a validated config into the in-memory datasets of one experiment.

use anyhow::{Context, Result};
use lmc_core::data::{
    apply_normalizer, fit_normalizer, load_cifar10, load_mnist, make_synthetic, partition, Dataset,
    Partition, SyntheticSpec,
};
use log::info;

use crate::config::{DatasetKind, EvalSet, ExperimentConfig, Protocol};

pub struct Prepared {
    pub partition: Partition,
    pub test: Dataset,
    /// Pre-partition training data (after subsampling and normalization).
    pub train: Dataset,
}

impl Prepared {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let d = &cfg.dataset;
        let (mut train, mut test) = match d.kind {
            DatasetKind::Mnist => load_mnist(d.path.as_ref().expect("validated"))?,
            DatasetKind::Cifar10 => load_cifar10(d.path.as_ref().expect("validated"))?,
            DatasetKind::Synthetic => {
                synthetic_split(d.synthetic.as_ref().expect("validated"), d.test_per_class)?
            }
        };
        if let Some(m) = d.train_per_class {
            train = train.take_per_class(m);
        }
        if let Some(m) = d.test_per_class {
            test = test.take_per_class(m);
        }
        if let Some(kind) = d.normalization.kind() {
            let scheme = fit_normalizer(&train, kind);
            train = apply_normalizer(&scheme, &train);
            test = apply_normalizer(&scheme, &test);
        }
        let spec = cfg.shift.to_spec().context("shift")?;
        let partition = partition(&train, &spec)?;
        info!(
            "{}: train {} ({} / {} after {} split), test {}",
            cfg.name,
            train.len(),
            partition.a.len(),
            partition.b.len(),
            spec.label(),
            test.len()
        );
        Ok(Prepared {
            partition,
            test,
            train,
        })
    }

    /// Datasets the interpolation is evaluated on, with their labels.
    pub fn eval_sets(&self, cfg: &ExperimentConfig) -> Result<Vec<(String, Dataset)>> {
        let per_class = cfg.interpolation.train_eval_per_class;
        let thin = |d: &Dataset| match per_class {
            Some(m) => d.take_per_class(m),
            None => d.clone(),
        };
        let p = &self.partition;
        cfg.interpolation
            .sets
            .iter()
            .map(|&set| {
                let data = match set {
                    EvalSet::Test => self.test.clone(),
                    EvalSet::TrainA => thin(&p.a),
                    EvalSet::TrainB => thin(&p.b),
                    EvalSet::Train => match cfg.train.protocol {
                        Protocol::DifferentInit => thin(&p.a),
                        Protocol::Paired => thin(&Dataset::concat(&[&p.a, &p.b], "train")?),
                    },
                };
                Ok((set.label().to_string(), data))
            })
            .collect()
    }

    /// Data the BN statistics of interpolated models are re-estimated on:
    /// everything the two endpoints were trained on.
    pub fn recompute_sets(&self, cfg: &ExperimentConfig) -> Vec<&Dataset> {
        match cfg.train.protocol {
            Protocol::Paired => vec![&self.partition.a, &self.partition.b],
            Protocol::DifferentInit => vec![&self.partition.a],
        }
    }
}

/// One generator call for both splits, so train and test share class means.
/// Samples are interleaved by class, so the first `classes * per_class` rows
/// hold exactly `per_class` samples of every class.
fn synthetic_split(
    spec: &SyntheticSpec,
    test_per_class: Option<usize>,
) -> Result<(Dataset, Dataset)> {
    let test_pc = test_per_class.expect("validated");
    let all = make_synthetic(&SyntheticSpec {
        per_class: spec.per_class + test_pc,
        ..spec.clone()
    })?;
    let n_train = spec.classes * spec.per_class;
    let train_rows: Vec<usize> = (0..n_train).collect();
    let test_rows: Vec<usize> = (n_train..all.len()).collect();
    Ok((
        all.select(&train_rows, "synthetic-train"),
        all.select(&test_rows, "synthetic-test"),
    ))
}
