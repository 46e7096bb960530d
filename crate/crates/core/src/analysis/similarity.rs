use serde::{Deserialize, Serialize};

use super::interp::interpolate;
use crate::error::{LmcError, Result};
use crate::nn::{Checkpoint, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub cosine: f64,
    pub angle_deg: f64,
    pub manhattan: f64,
    pub params: usize,
}

fn same_len(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(LmcError::Shape(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn norm(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt()
}

/// Cosine similarity and the angle between `a` and `b` in degrees. The angle
/// uses `2 atan2(|â - b̂|, |â + b̂|)`, which stays accurate for nearly parallel
/// vectors where `acos` loses all precision.
pub fn cosine_angle(a: &[f32], b: &[f32]) -> Result<(f64, f64)> {
    same_len(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(LmcError::Undefined(
            "cosine similarity of a zero vector".into(),
        ));
    }
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let cosine = (dot / (na * nb)).clamp(-1.0, 1.0);
    let (mut diff, mut sum) = (0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (u, v) = (x as f64 / na, y as f64 / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    let angle = 2.0 * diff.sqrt().atan2(sum.sqrt());
    Ok((cosine, angle.to_degrees()))
}

/// L1 distance, accumulated in f64.
pub fn manhattan(a: &[f32], b: &[f32]) -> Result<f64> {
    same_len(a, b)?;
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum())
}

pub fn similarity(a: &ParamVector, b: &ParamVector) -> Result<SimilarityReport> {
    let (cosine, angle_deg) = cosine_angle(&a.0, &b.0)?;
    Ok(SimilarityReport {
        cosine,
        angle_deg,
        manhattan: manhattan(&a.0, &b.0)?,
        params: a.len(),
    })
}

/// SGD noise scale `g = lr * (n / batch - 1)`.
pub fn noise_scale(lr: f64, n: usize, batch: usize) -> Result<f64> {
    if batch == 0 || batch > n {
        return Err(LmcError::Precondition(format!(
            "noise scale needs 0 < B <= N, got B={batch}, N={n}"
        )));
    }
    if !(lr > 0.0) {
        return Err(LmcError::Precondition(format!(
            "noise scale needs a positive learning rate, got {lr}"
        )));
    }
    Ok(lr * (n as f64 / batch as f64 - 1.0))
}

/// Angle and L1 distance from endpoint A to each interpolated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarTrace {
    pub lambdas: Vec<f64>,
    pub angle_deg: Vec<f64>,
    pub manhattan: Vec<f64>,
}

impl PolarTrace {
    /// Both coordinates grow with λ (up to `tol`).
    pub fn is_monotone(&self, tol: f64) -> bool {
        let up = |v: &[f64]| v.windows(2).all(|w| w[1] >= w[0] - tol);
        up(&self.angle_deg) && up(&self.manhattan)
    }
}

pub fn polar_trace(lambdas: &[f64], a: &Checkpoint, b: &Checkpoint) -> Result<PolarTrace> {
    let mut angle_deg = Vec::with_capacity(lambdas.len());
    let mut dist = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let p = interpolate(&a.params, &b.params, lambda)?;
        angle_deg.push(cosine_angle(&a.params.0, &p.0)?.1);
        dist.push(manhattan(&a.params.0, &p.0)?);
    }
    Ok(PolarTrace {
        lambdas: lambdas.to_vec(),
        angle_deg,
        manhattan: dist,
    })
}
