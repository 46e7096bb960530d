//! Experiment definition: one TOML file per experiment, versioned schema,
//! unknown keys rejected everywhere.

use std::fmt;
use std::path::{Path, PathBuf};

use lmc_core::analysis::{validate_grid, BarrierVariant, BnPolicy};
use lmc_core::data::{NormKind, ShiftKind, ShiftSpec, SyntheticSpec};
use lmc_core::nn::ArchKind;
use lmc_core::training::NoiseMode;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// A validation failure tied to the config field that caused it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub seeds: Vec<u64>,
    pub dataset: DatasetConfig,
    pub shift: ShiftConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    #[serde(default)]
    pub interpolation: InterpolationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    None,
    Center,
    UnitRange,
}

impl Normalization {
    pub fn kind(self) -> Option<NormKind> {
        match self {
            Normalization::None => None,
            Normalization::Center => Some(NormKind::Center),
            Normalization::UnitRange => Some(NormKind::UnitRange),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::Center => "center",
            Normalization::UnitRange => "unit-range",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Directory with the standard files (MNIST IDX or `cifar-10-batches-bin`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Keep only the first `m` training samples of every class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_per_class: Option<usize>,
    pub normalization: Normalization,
    /// Generator for `kind = "synthetic"`; `per_class` covers the training
    /// split and `test_per_class` more samples per class form the test split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftName {
    #[serde(rename = "covariate-5050")]
    Covariate5050,
    LabelImbalance,
    ChannelDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    pub kind: ShiftName,
    #[serde(default)]
    pub seed: u64,
    /// Percentage of every `low` class that subset A receives.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub low: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub high: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub channels_a: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub channels_b: Vec<usize>,
}

impl ShiftConfig {
    pub fn to_spec(&self) -> Result<ShiftSpec, ConfigError> {
        match self.kind {
            ShiftName::Covariate5050 => Ok(ShiftSpec::covariate(self.seed)),
            ShiftName::LabelImbalance => {
                let x = self
                    .x
                    .ok_or_else(|| ConfigError::new("shift.x", "required for label-imbalance"))?;
                Ok(ShiftSpec::label_imbalance(
                    x,
                    self.low.clone(),
                    self.high.clone(),
                    self.seed,
                ))
            }
            ShiftName::ChannelDomain => Ok(ShiftSpec {
                kind: ShiftKind::ChannelDomain {
                    channels_a: self.channels_a.clone(),
                    channels_b: self.channels_b.clone(),
                },
                seed: self.seed,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ArchKind,
    pub widths: Vec<usize>,
    /// One flag per layer; omitted means no batch normalization.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub batch_norm: Vec<bool>,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub stem_stride: usize,
}

fn one() -> usize {
    1
}

fn is_one(v: &usize) -> bool {
    *v == 1
}

/// How the two endpoint models of a repeat are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// One initialization, two copies trained on subsets A and B.
    #[default]
    Paired,
    /// Two initializations, both trained on subset A.
    DifferentInit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default)]
    pub protocol: Protocol,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub noise_mode: NoiseMode,
    #[serde(default)]
    pub eval_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalSet {
    Test,
    /// Union of the sets the two endpoints were trained on.
    Train,
    TrainA,
    TrainB,
}

impl EvalSet {
    pub fn label(self) -> &'static str {
        match self {
            EvalSet::Test => "test",
            EvalSet::Train => "train",
            EvalSet::TrainA => "train-a",
            EvalSet::TrainB => "train-b",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolationConfig {
    /// Uniform grid size; ignored when `lambdas` is given.
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_sets")]
    pub sets: Vec<EvalSet>,
    /// Evaluate the train sets on the first `m` samples per class only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_eval_per_class: Option<usize>,
    #[serde(default = "default_variants")]
    pub barriers: Vec<BarrierVariant>,
    #[serde(default)]
    pub bn_policy: BnPolicy,
}

fn default_points() -> usize {
    21
}

fn default_sets() -> Vec<EvalSet> {
    vec![EvalSet::Test, EvalSet::Train]
}

fn default_variants() -> Vec<BarrierVariant> {
    BarrierVariant::ALL.to_vec()
}

impl Default for InterpolationConfig {
    fn default() -> Self {
        InterpolationConfig {
            points: default_points(),
            lambdas: Vec::new(),
            sets: default_sets(),
            train_eval_per_class: None,
            barriers: default_variants(),
            bn_policy: BnPolicy::default(),
        }
    }
}

impl InterpolationConfig {
    pub fn grid(&self) -> Vec<f64> {
        if self.lambdas.is_empty() {
            lmc_core::analysis::uniform_grid(self.points)
        } else {
            self.lambdas.clone()
        }
    }
}

/// A (batch size x learning rate) grid; every cell reruns the train section
/// with those two values replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    /// Barrier variant and evaluation set summarized in the sweep table.
    #[serde(default = "default_sweep_variant")]
    pub variant: BarrierVariant,
    #[serde(default = "default_sweep_set")]
    pub set: EvalSet,
}

fn default_sweep_variant() -> BarrierVariant {
    BarrierVariant::LocalMin
}

fn default_sweep_set() -> EvalSet {
    EvalSet::Test
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Interpolation points of the LMC ensemble.
    pub lambdas: Vec<f64>,
    /// Size of the different-initialization ensemble.
    pub seed_members: usize,
    /// Pairs whose test barrier exceeds this are flagged as not connected.
    #[serde(default = "default_lmc_threshold")]
    pub lmc_threshold: f64,
}

fn default_lmc_threshold() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::new("", e.to_string()))?;
        Ok(cfg)
    }

    /// Parses and validates a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::from_toml(&text)
            .map_err(|e| ConfigError::new("", format!("{}: {}", path.display(), e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Checks everything that can be checked without loading data,
    /// including that referenced paths exist.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |f: &str, m: String| Err(ConfigError::new(f, m));
        if self.schema_version != SCHEMA_VERSION {
            return err(
                "schema_version",
                format!(
                    "unsupported version {}, expected {SCHEMA_VERSION}",
                    self.schema_version
                ),
            );
        }
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return err(
                "name",
                format!("{:?} must be a nonempty [A-Za-z0-9._-] string", self.name),
            );
        }
        if self.name.starts_with('.') {
            return err("name", "must not start with '.'".into());
        }
        if self.seeds.is_empty() {
            return err("seeds", "at least one seed is required".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return err("seeds", "seeds must be distinct".into());
        }

        let d = &self.dataset;
        match d.kind {
            DatasetKind::Mnist | DatasetKind::Cifar10 => {
                let Some(path) = &d.path else {
                    return err("dataset.path", "required for file-backed datasets".into());
                };
                for f in dataset_files(d.kind, path) {
                    if !f.is_file() {
                        return err(
                            "dataset.path",
                            format!("missing dataset file {}", f.display()),
                        );
                    }
                }
                if d.synthetic.is_some() {
                    return err(
                        "dataset.synthetic",
                        "only valid with kind = \"synthetic\"".into(),
                    );
                }
            }
            DatasetKind::Synthetic => {
                let Some(s) = &d.synthetic else {
                    return err(
                        "dataset.synthetic",
                        "required for kind = \"synthetic\"".into(),
                    );
                };
                if s.classes < 2 || s.per_class == 0 || s.dim == 0 {
                    return err(
                        "dataset.synthetic",
                        "needs classes >= 2 and positive per_class, dim".into(),
                    );
                }
                if d.test_per_class.is_none() {
                    return err(
                        "dataset.test_per_class",
                        "required for kind = \"synthetic\"".into(),
                    );
                }
                if d.path.is_some() {
                    return err("dataset.path", "not used by synthetic data".into());
                }
            }
        }
        if d.train_per_class == Some(0) {
            return err("dataset.train_per_class", "must be positive".into());
        }
        if d.test_per_class == Some(0) {
            return err("dataset.test_per_class", "must be positive".into());
        }

        let shift = self.shift.to_spec()?;
        if let Err(e) = shift.validate(self.classes(), self.input_channels()) {
            return err("shift", e.to_string());
        }

        let m = &self.model;
        if m.widths.is_empty() {
            return err("model.widths", "at least one layer is required".into());
        }
        if !m.batch_norm.is_empty() && m.batch_norm.len() != m.widths.len() {
            return err(
                "model.batch_norm",
                format!(
                    "has {} flags for {} layers",
                    m.batch_norm.len(),
                    m.widths.len()
                ),
            );
        }
        if m.kind != ArchKind::Mlp && self.dataset.kind == DatasetKind::Synthetic {
            return err(
                "model.kind",
                "synthetic data is flat; use kind = \"mlp\"".into(),
            );
        }
        if let Err(e) = self.model_spec().validate() {
            return err("model", e.to_string());
        }

        let t = &self.train;
        if t.batch_size == 0 {
            return err("train.batch_size", "must be positive".into());
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return err(
                "train.learning_rate",
                format!("must be positive, got {}", t.learning_rate),
            );
        }
        if t.noise_mode == NoiseMode::Fixed
            && t.protocol == Protocol::Paired
            && !shift.supports_fixed_noise()
        {
            return err(
                "train.noise_mode",
                "fixed noise needs equal class counts; this shift requires \"independent\"".into(),
            );
        }

        let i = &self.interpolation;
        if i.lambdas.is_empty() && i.points < 2 {
            return err("interpolation.points", "needs at least 2 points".into());
        }
        if let Err(e) = validate_grid(&i.grid()) {
            return err("interpolation.lambdas", e.to_string());
        }
        if i.sets.is_empty() {
            return err(
                "interpolation.sets",
                "at least one evaluation set is required".into(),
            );
        }
        if i.barriers.is_empty() {
            return err(
                "interpolation.barriers",
                "at least one variant is required".into(),
            );
        }
        if i.train_eval_per_class == Some(0) {
            return err(
                "interpolation.train_eval_per_class",
                "must be positive".into(),
            );
        }

        if let Some(s) = &self.sweep {
            if s.batch_sizes.is_empty() || s.batch_sizes.contains(&0) {
                return err("sweep.batch_sizes", "needs positive batch sizes".into());
            }
            if s.learning_rates.is_empty()
                || s.learning_rates
                    .iter()
                    .any(|&lr| !(lr > 0.0 && lr.is_finite()))
            {
                return err(
                    "sweep.learning_rates",
                    "needs positive learning rates".into(),
                );
            }
        }
        if let Some(e) = &self.ensemble {
            if e.lambdas.len() < 2 {
                return err(
                    "ensemble.lambdas",
                    "an ensemble needs at least 2 members".into(),
                );
            }
            if e.lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
                return err("ensemble.lambdas", "values must lie in [0, 1]".into());
            }
            if e.seed_members < 2 {
                return err(
                    "ensemble.seed_members",
                    "an ensemble needs at least 2 members".into(),
                );
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        match self.dataset.kind {
            DatasetKind::Mnist | DatasetKind::Cifar10 => 10,
            DatasetKind::Synthetic => self.dataset.synthetic.as_ref().map_or(0, |s| s.classes),
        }
    }

    pub fn input_shape(&self) -> lmc_core::nn::InputShape {
        use lmc_core::nn::InputShape;
        match self.dataset.kind {
            DatasetKind::Mnist => InputShape::image(1, 28, 28),
            DatasetKind::Cifar10 => InputShape::image(3, 32, 32),
            DatasetKind::Synthetic => {
                InputShape::flat(self.dataset.synthetic.as_ref().map_or(0, |s| s.dim))
            }
        }
    }

    fn input_channels(&self) -> usize {
        self.input_shape().channels
    }

    pub fn model_spec(&self) -> lmc_core::nn::ModelSpec {
        use lmc_core::nn::ModelSpec;
        let m = &self.model;
        let shape = self.input_shape();
        let spec = match m.kind {
            ArchKind::Mlp => ModelSpec::mlp(shape.dim(), &m.widths, self.classes()),
            kind => ModelSpec::conv(kind, shape, &m.widths, self.classes())
                .with_stem_stride(m.stem_stride),
        };
        if m.batch_norm.is_empty() {
            spec
        } else {
            spec.with_batch_norm(&m.batch_norm)
        }
    }

    /// The train section with a sweep cell's overrides applied.
    pub fn train_config(
        &self,
        seed: u64,
        batch_size: usize,
        learning_rate: f64,
    ) -> lmc_core::training::TrainConfig {
        lmc_core::training::TrainConfig {
            batch_size,
            learning_rate,
            epochs: self.train.epochs,
            init_seed: seed,
            noise_seed: seed,
            noise_mode: self.train.noise_mode,
            eval_every: self.train.eval_every,
        }
    }
}

/// Files a file-backed dataset directory must contain.
pub fn dataset_files(kind: DatasetKind, dir: &Path) -> Vec<PathBuf> {
    match kind {
        DatasetKind::Mnist => [
            "train-images-idx3-ubyte",
            "train-labels-idx1-ubyte",
            "t10k-images-idx3-ubyte",
            "t10k-labels-idx1-ubyte",
        ]
        .iter()
        .map(|f| dir.join(f))
        .collect(),
        DatasetKind::Cifar10 => (1..=5)
            .map(|i| format!("data_batch_{i}.bin"))
            .chain(std::iter::once("test_batch.bin".to_string()))
            .map(|f| dir.join(f))
            .collect(),
        DatasetKind::Synthetic => Vec::new(),
    }
}
