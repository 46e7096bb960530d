use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::interp::interpolate_checkpoint;
use super::similarity::PolarTrace;
use crate::data::Dataset;
use crate::error::{LmcError, Result};
use crate::nn::Checkpoint;
use crate::nn::{evaluate_with, recompute_bn_stats_with};
use crate::par::Exec;

/// How interpolated models get their BN running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BnPolicy {
    /// Interpolate the endpoint running statistics linearly.
    None,
    /// Re-estimate statistics on the training data at every λ.
    #[default]
    Recompute,
}

impl BnPolicy {
    pub fn label(self) -> &'static str {
        match self {
            BnPolicy::None => "none",
            BnPolicy::Recompute => "recompute",
        }
    }
}

/// `n` uniform points from 0 to 1 inclusive.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn validate_grid(lambdas: &[f64]) -> Result<()> {
    if lambdas.len() < 2 {
        return Err(LmcError::Precondition(
            "interpolation grid needs at least the points 0 and 1".into(),
        ));
    }
    if lambdas[0] != 0.0 || *lambdas.last().unwrap() != 1.0 {
        return Err(LmcError::Precondition(
            "interpolation grid must start at 0 and end at 1".into(),
        ));
    }
    if lambdas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(LmcError::Precondition(
            "interpolation grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetCurve {
    pub name: String,
    pub loss: Vec<f64>,
    pub accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationCurve {
    pub lambdas: Vec<f64>,
    pub sets: Vec<SetCurve>,
    pub bn_policy: BnPolicy,
}

/// One row of the curve CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub lambda: f64,
    pub set: String,
    pub loss: f64,
    pub accuracy: f64,
    pub angle_from_a_deg: Option<f64>,
    pub manhattan_from_a: Option<f64>,
}

impl InterpolationCurve {
    pub fn new(lambdas: Vec<f64>, sets: Vec<SetCurve>, bn_policy: BnPolicy) -> Result<Self> {
        validate_grid(&lambdas)?;
        for s in &sets {
            if s.loss.len() != lambdas.len() || s.accuracy.len() != lambdas.len() {
                return Err(LmcError::Shape(format!(
                    "set {} has {} losses / {} accuracies for {} grid points",
                    s.name,
                    s.loss.len(),
                    s.accuracy.len(),
                    lambdas.len()
                )));
            }
        }
        Ok(InterpolationCurve {
            lambdas,
            sets,
            bn_policy,
        })
    }

    pub fn set(&self, name: &str) -> Result<&SetCurve> {
        self.sets
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| LmcError::Precondition(format!("curve has no evaluation set {name:?}")))
    }

    pub fn index_of(&self, lambda: f64) -> Result<usize> {
        self.lambdas
            .iter()
            .position(|&l| l == lambda)
            .ok_or_else(|| LmcError::Precondition(format!("lambda {lambda} is not on the grid")))
    }

    /// The same curve seen from the other endpoint (λ -> 1 - λ).
    pub fn reversed(&self) -> InterpolationCurve {
        let rev = |v: &Vec<f64>| v.iter().rev().copied().collect::<Vec<_>>();
        InterpolationCurve {
            lambdas: self.lambdas.iter().rev().map(|l| 1.0 - l).collect(),
            sets: self
                .sets
                .iter()
                .map(|s| SetCurve {
                    name: s.name.clone(),
                    loss: rev(&s.loss),
                    accuracy: rev(&s.accuracy),
                })
                .collect(),
            bn_policy: self.bn_policy,
        }
    }

    /// Rows ordered by λ, then by set in curve order.
    pub fn rows(&self, polar: Option<&PolarTrace>) -> Vec<CurveRow> {
        let mut out = Vec::with_capacity(self.lambdas.len() * self.sets.len());
        for (i, &lambda) in self.lambdas.iter().enumerate() {
            for s in &self.sets {
                out.push(CurveRow {
                    lambda,
                    set: s.name.clone(),
                    loss: s.loss[i],
                    accuracy: s.accuracy[i],
                    angle_from_a_deg: polar.map(|p| p.angle_deg[i]),
                    manhattan_from_a: polar.map(|p| p.manhattan[i]),
                });
            }
        }
        out
    }

    /// Rebuilds a curve from CSV rows. Sets keep their first-seen order.
    pub fn from_rows(rows: &[CurveRow], bn_policy: BnPolicy) -> Result<Self> {
        let mut lambdas: Vec<f64> = Vec::new();
        let mut sets: Vec<SetCurve> = Vec::new();
        for r in rows {
            if !lambdas.contains(&r.lambda) {
                lambdas.push(r.lambda);
            }
            if !sets.iter().any(|s| s.name == r.set) {
                sets.push(SetCurve {
                    name: r.set.clone(),
                    loss: Vec::new(),
                    accuracy: Vec::new(),
                });
            }
        }
        lambdas.sort_by(f64::total_cmp);
        for s in &mut sets {
            s.loss = vec![f64::NAN; lambdas.len()];
            s.accuracy = vec![f64::NAN; lambdas.len()];
        }
        for r in rows {
            let i = lambdas
                .iter()
                .position(|&l| l == r.lambda)
                .expect("collected above");
            let s = sets
                .iter_mut()
                .find(|s| s.name == r.set)
                .expect("collected above");
            s.loss[i] = r.loss;
            s.accuracy[i] = r.accuracy;
        }
        if sets.iter().any(|s| s.loss.iter().any(|v| v.is_nan())) {
            return Err(LmcError::Precondition(
                "curve rows do not cover every (lambda, set) pair".into(),
            ));
        }
        InterpolationCurve::new(lambdas, sets, bn_policy)
    }

    pub fn write_csv<W: Write>(&self, w: W, polar: Option<&PolarTrace>) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in self.rows(polar) {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, bn_policy: BnPolicy) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let rows = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<CurveRow>, _>>()?;
        Self::from_rows(&rows, bn_policy)
    }
}

/// Sweeps the straight line between two checkpoints. For each λ the
/// interpolated model gets BN statistics per `bn_policy` (recomputed on
/// `recompute_on`, typically both training subsets) and is evaluated in eval
/// mode on every named set. Grid points run in parallel under
/// [`Exec::Parallel`]; the assembled curve is independent of the executor.
pub fn sweep(
    a: &Checkpoint,
    b: &Checkpoint,
    lambdas: &[f64],
    sets: &[(&str, &Dataset)],
    bn_policy: BnPolicy,
    recompute_on: &[&Dataset],
    exec: Exec,
) -> Result<InterpolationCurve> {
    if a.spec != b.spec {
        return Err(LmcError::Shape(
            "checkpoints have different model specs".into(),
        ));
    }
    validate_grid(lambdas)?;
    if sets.is_empty() {
        return Err(LmcError::Precondition(
            "sweep needs at least one evaluation set".into(),
        ));
    }
    let net = a.network()?;
    let recompute = bn_policy == BnPolicy::Recompute && !net.bn_features().is_empty();
    if recompute && recompute_on.iter().all(|d| d.is_empty()) {
        return Err(LmcError::Precondition(
            "BN recompute needs training data".into(),
        ));
    }
    let points = exec.map(lambdas, |&lambda| -> Result<Vec<(f64, f64)>> {
        let mut ckpt = interpolate_checkpoint(a, b, lambda)?;
        if recompute {
            ckpt = recompute_bn_stats_with(&ckpt, recompute_on, 1, exec)?.0;
        }
        sets.iter()
            .map(|(_, data)| evaluate_with(&net, &ckpt, data, exec).map(|m| (m.loss, m.accuracy)))
            .collect()
    });
    let mut curves: Vec<SetCurve> = sets
        .iter()
        .map(|(name, _)| SetCurve {
            name: name.to_string(),
            loss: Vec::with_capacity(lambdas.len()),
            accuracy: Vec::with_capacity(lambdas.len()),
        })
        .collect();
    for p in points {
        for (c, (loss, acc)) in curves.iter_mut().zip(p?) {
            c.loss.push(loss);
            c.accuracy.push(acc);
        }
    }
    InterpolationCurve::new(lambdas.to_vec(), curves, bn_policy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let g = uniform_grid(21);
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[20], 1.0);
        assert_eq!(g[10], 0.5);
        assert!(validate_grid(&g).is_ok());
        assert!(validate_grid(&[]).is_err());
        assert!(validate_grid(&[0.0, 0.5]).is_err());
        assert!(validate_grid(&[0.0, 0.5, 0.5, 1.0]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let curve = InterpolationCurve::new(
            vec![0.0, 0.5, 1.0],
            vec![
                SetCurve {
                    name: "test".into(),
                    loss: vec![0.1, 0.7, 0.2],
                    accuracy: vec![0.9, 0.6, 0.95],
                },
                SetCurve {
                    name: "train-A".into(),
                    loss: vec![0.01, 1.0 / 3.0, 0.3],
                    accuracy: vec![1.0, 0.5, 0.9],
                },
            ],
            BnPolicy::None,
        )
        .unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf, None).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("lambda,set,loss,accuracy,angle_from_a_deg,manhattan_from_a\n"));
        assert_eq!(
            InterpolationCurve::read_csv(&buf[..], BnPolicy::None).unwrap(),
            curve
        );
    }

    #[test]
    fn reversal_is_an_involution() {
        let curve = InterpolationCurve::new(
            uniform_grid(5),
            vec![SetCurve {
                name: "s".into(),
                loss: vec![1.0, 2.0, 3.0, 2.5, 0.5],
                accuracy: vec![0.5; 5],
            }],
            BnPolicy::None,
        )
        .unwrap();
        assert_eq!(curve.reversed().reversed(), curve);
        assert_eq!(
            curve.reversed().set("s").unwrap().loss,
            vec![0.5, 2.5, 3.0, 2.0, 1.0]
        );
    }
}
