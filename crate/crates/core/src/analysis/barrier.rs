use std::io::Write;

use serde::{Deserialize, Serialize};

use super::curve::InterpolationCurve;
use crate::error::{LmcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BarrierVariant {
    /// Maximum loss minus the endpoint mean.
    Frankle,
    /// Interior maximum minus the mean of the minima on either side of it.
    LocalMin,
    /// Maximum excess over the straight chord between the endpoint losses.
    Entezari,
    /// Frankle value divided by the mean endpoint accuracy.
    Normalized,
}

impl BarrierVariant {
    pub const ALL: [BarrierVariant; 4] = [
        BarrierVariant::Frankle,
        BarrierVariant::LocalMin,
        BarrierVariant::Entezari,
        BarrierVariant::Normalized,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BarrierVariant::Frankle => "frankle",
            BarrierVariant::LocalMin => "local-min",
            BarrierVariant::Entezari => "entezari",
            BarrierVariant::Normalized => "normalized",
        }
    }
}

/// Reference rule used by [`BarrierVariant::LocalMin`], recorded alongside results.
pub const LOCAL_MIN_RULE: &str =
    "global interior loss maximum minus the mean of the minimal losses left and right of it (endpoints included); 0 when the maximum is attained only at an endpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierResult {
    pub variant: BarrierVariant,
    pub set: String,
    pub value: f64,
    pub lambda_star: f64,
    /// Accuracy at `lambda_star` minus the endpoint mean accuracy.
    pub delta: f64,
}

/// First index holding the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn finish(
    curve: &InterpolationCurve,
    set: &str,
    variant: BarrierVariant,
    value: f64,
    idx: usize,
) -> Result<BarrierResult> {
    let lambda_star = curve.lambdas[idx];
    Ok(BarrierResult {
        variant,
        set: set.to_string(),
        value,
        lambda_star,
        delta: accuracy_delta(curve, set, lambda_star)?,
    })
}

pub fn barrier_frankle(curve: &InterpolationCurve, set: &str) -> Result<BarrierResult> {
    let loss = &curve.set(set)?.loss;
    let i = argmax(loss);
    let value = loss[i] - 0.5 * (loss[0] + loss[loss.len() - 1]);
    finish(curve, set, BarrierVariant::Frankle, value, i)
}

pub fn barrier_local_min(curve: &InterpolationCurve, set: &str) -> Result<BarrierResult> {
    let loss = &curve.set(set)?.loss;
    let n = loss.len();
    let top = loss[argmax(loss)];
    match (1..n - 1).find(|&i| loss[i] == top) {
        Some(i) => {
            let value = top - 0.5 * (min_of(&loss[..=i]) + min_of(&loss[i..]));
            finish(curve, set, BarrierVariant::LocalMin, value, i)
        }
        None => finish(curve, set, BarrierVariant::LocalMin, 0.0, argmax(loss)),
    }
}

pub fn barrier_entezari(curve: &InterpolationCurve, set: &str) -> Result<BarrierResult> {
    let loss = &curve.set(set)?.loss;
    let (l0, l1) = (loss[0], loss[loss.len() - 1]);
    let excess: Vec<f64> = curve
        .lambdas
        .iter()
        .zip(loss)
        .map(|(&lam, &l)| l - ((1.0 - lam) * l0 + lam * l1))
        .collect();
    let i = argmax(&excess);
    finish(curve, set, BarrierVariant::Entezari, excess[i].max(0.0), i)
}

pub fn barrier_normalized(curve: &InterpolationCurve, set: &str) -> Result<BarrierResult> {
    let acc = &curve.set(set)?.accuracy;
    let mean_acc = 0.5 * (acc[0] + acc[acc.len() - 1]);
    if mean_acc == 0.0 {
        return Err(LmcError::Undefined(format!(
            "normalized barrier on {set}: both endpoints have zero accuracy"
        )));
    }
    let f = barrier_frankle(curve, set)?;
    let i = curve.index_of(f.lambda_star)?;
    finish(
        curve,
        set,
        BarrierVariant::Normalized,
        f.value / mean_acc,
        i,
    )
}

pub fn barrier(
    curve: &InterpolationCurve,
    set: &str,
    variant: BarrierVariant,
) -> Result<BarrierResult> {
    match variant {
        BarrierVariant::Frankle => barrier_frankle(curve, set),
        BarrierVariant::LocalMin => barrier_local_min(curve, set),
        BarrierVariant::Entezari => barrier_entezari(curve, set),
        BarrierVariant::Normalized => barrier_normalized(curve, set),
    }
}

/// Every variant on every set of the curve. A normalized barrier that is
/// undefined (zero endpoint accuracy) is skipped rather than failing the batch.
pub fn all_barriers(curve: &InterpolationCurve) -> Result<Vec<BarrierResult>> {
    let mut out = Vec::new();
    for s in &curve.sets {
        for v in BarrierVariant::ALL {
            match barrier(curve, &s.name, v) {
                Ok(r) => out.push(r),
                Err(LmcError::Undefined(msg)) => log::warn!("{msg}"),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

/// Accuracy at grid point `lambda_star` minus the mean endpoint accuracy.
pub fn accuracy_delta(curve: &InterpolationCurve, set: &str, lambda_star: f64) -> Result<f64> {
    let acc = &curve.set(set)?.accuracy;
    let i = curve.index_of(lambda_star)?;
    Ok(acc[i] - 0.5 * (acc[0] + acc[acc.len() - 1]))
}

pub fn write_barriers_csv<W: Write>(w: W, results: &[BarrierResult]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if results.is_empty() {
        out.write_record(["variant", "set", "value", "lambda_star", "delta"])?;
    }
    for r in results {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_barriers_csv<R: std::io::Read>(r: R) -> Result<Vec<BarrierResult>> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr
        .deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()?)
}
