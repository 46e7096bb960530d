use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{LmcError, Result};
use crate::nn::InputShape;

/// Gaussian class blobs. Class means are random directions of norm 2 drawn
/// from `seed`; samples add isotropic noise with standard deviation `spread`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub seed: u64,
}

/// Samples are interleaved by class: sample `i` has label `i % classes`.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.classes == 0 || spec.per_class == 0 || spec.dim == 0 {
        return Err(LmcError::Precondition(
            "synthetic classes, per_class and dim must be positive".into(),
        ));
    }
    if !(spec.spread >= 0.0) {
        return Err(LmcError::Precondition("spread must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let v: Vec<f64> = (0..spec.dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| 2.0 * x / norm).collect()
        })
        .collect();
    let n = spec.classes * spec.per_class;
    let mut inputs = Array2::<f32>::zeros((n, spec.dim));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % spec.classes;
        for (j, x) in inputs.row_mut(i).iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = (means[c][j] + spec.spread * z) as f32;
        }
        labels.push(c);
    }
    Dataset::new(
        "synthetic",
        InputShape::flat(spec.dim),
        spec.classes,
        inputs,
        labels,
    )
}
