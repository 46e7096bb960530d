//! Ensembles sampled along a linear path or from independent seeds, and
//! their error-diversity metrics.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::analysis::{interpolate_checkpoint, BnPolicy};
use crate::data::Dataset;
use crate::error::{LmcError, Result};
use crate::nn::{predict, recompute_bn_stats_with, Checkpoint};
use crate::par::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleKind {
    Lmc,
    DifferentSeeds,
}

impl EnsembleKind {
    pub fn label(self) -> &'static str {
        match self {
            EnsembleKind::Lmc => "lmc",
            EnsembleKind::DifferentSeeds => "different-seeds",
        }
    }
}

/// Pairwise averaging rule recorded with ensemble outputs.
pub const PAIR_AVERAGING_RULE: &str = "mean over all unordered member pairs";

/// One interpolated model per λ. Under [`BnPolicy::Recompute`] each member's
/// BN statistics are re-estimated on `recompute_on`.
pub fn build_lmc_ensemble(
    a: &Checkpoint,
    b: &Checkpoint,
    lambdas: &[f64],
    bn_policy: BnPolicy,
    recompute_on: &[&Dataset],
    exec: Exec,
) -> Result<Vec<Checkpoint>> {
    if a.spec != b.spec {
        return Err(LmcError::Shape(
            "checkpoints have different model specs".into(),
        ));
    }
    let recompute = bn_policy == BnPolicy::Recompute && a.spec.has_batch_norm();
    exec.map(lambdas, |&lambda| {
        let m = interpolate_checkpoint(a, b, lambda)?;
        if recompute {
            Ok(recompute_bn_stats_with(&m, recompute_on, 1, exec)?.0)
        } else {
            Ok(m)
        }
    })
    .into_iter()
    .collect()
}

/// Predicted classes and softmax outputs of every member on one sample order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub labels: Vec<usize>,
    pub classes: usize,
    /// `preds[e][m]`: class predicted by member `e` for sample `m`.
    pub preds: Vec<Vec<usize>>,
    /// Per-member softmax outputs (samples x classes), when available.
    pub probs: Option<Vec<Array2<f32>>>,
}

impl PredictionMatrix {
    pub fn new(
        labels: Vec<usize>,
        classes: usize,
        preds: Vec<Vec<usize>>,
        probs: Option<Vec<Array2<f32>>>,
    ) -> Result<Self> {
        let m = labels.len();
        if labels
            .iter()
            .chain(preds.iter().flatten())
            .any(|&c| c >= classes)
        {
            return Err(LmcError::Precondition(format!(
                "class index outside [0, {classes})"
            )));
        }
        if preds.iter().any(|p| p.len() != m) {
            return Err(LmcError::Shape(
                "every member needs one prediction per sample".into(),
            ));
        }
        if let Some(ps) = &probs {
            if ps.len() != preds.len() || ps.iter().any(|p| p.dim() != (m, classes)) {
                return Err(LmcError::Shape(
                    "probability matrices must be samples x classes per member".into(),
                ));
            }
        }
        Ok(PredictionMatrix {
            labels,
            classes,
            preds,
            probs,
        })
    }

    pub fn members(&self) -> usize {
        self.preds.len()
    }

    /// Runs every model on `data`, in parallel over models.
    pub fn collect(models: &[Checkpoint], data: &Dataset, exec: Exec) -> Result<Self> {
        let outs = exec.map(models, |m| predict(m, data, Exec::Sequential));
        let mut preds = Vec::with_capacity(models.len());
        let mut probs = Vec::with_capacity(models.len());
        for o in outs {
            let p = o?;
            preds.push(p.classes);
            probs.push(p.probs);
        }
        Self::new(data.labels.clone(), data.classes(), preds, Some(probs))
    }
}

fn check_lengths(pi: &[usize], pj: &[usize], labels: &[usize]) -> Result<()> {
    if pi.len() != labels.len() || pj.len() != labels.len() {
        return Err(LmcError::Shape(format!(
            "prediction lists of length {} and {} for {} labels",
            pi.len(),
            pj.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(LmcError::Precondition("no samples".into()));
    }
    Ok(())
}

fn fraction(
    pi: &[usize],
    pj: &[usize],
    labels: &[usize],
    hit: impl Fn(usize, usize, usize) -> bool,
) -> Result<f64> {
    check_lengths(pi, pj, labels)?;
    let n = pi
        .iter()
        .zip(pj)
        .zip(labels)
        .filter(|((&a, &b), &y)| hit(a, b, y))
        .count();
    Ok(n as f64 / labels.len() as f64)
}

/// Share of samples where both models predict the same wrong class.
pub fn wrong_agreement(pi: &[usize], pj: &[usize], labels: &[usize]) -> Result<f64> {
    fraction(pi, pj, labels, |a, b, y| a == b && a != y)
}

/// Share of samples where the models disagree and both are wrong.
pub fn wrong_disagreement(pi: &[usize], pj: &[usize], labels: &[usize]) -> Result<f64> {
    fraction(pi, pj, labels, |a, b, y| a != b && a != y && b != y)
}

/// Share of samples where the models disagree and exactly one is right.
pub fn one_correct_disagreement(pi: &[usize], pj: &[usize], labels: &[usize]) -> Result<f64> {
    fraction(pi, pj, labels, |a, b, y| a != b && (a == y) != (b == y))
}

/// Plurality vote per sample; ties go to the lowest class index.
pub fn majority_vote(preds: &[Vec<usize>], classes: usize) -> Vec<usize> {
    let m = preds.first().map_or(0, |p| p.len());
    let mut counts = vec![0usize; classes];
    (0..m)
        .map(|s| {
            counts.iter_mut().for_each(|c| *c = 0);
            for p in preds {
                counts[p[s]] += 1;
            }
            let mut best = 0;
            for (c, &n) in counts.iter().enumerate() {
                if n > counts[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Argmax of the member-averaged softmax outputs (lowest index on ties).
pub fn averaged_prediction(probs: &[Array2<f32>]) -> Vec<usize> {
    let Some(first) = probs.first() else {
        return Vec::new();
    };
    let mut sum = Array2::<f64>::zeros(first.dim());
    for p in probs {
        sum.zip_mut_with(p, |s, &v| *s += v as f64);
    }
    sum.outer_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub i: usize,
    pub j: usize,
    pub wa: f64,
    pub wd: f64,
    pub one_correct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub kind: EnsembleKind,
    pub members: usize,
    pub wa_mean: f64,
    pub wd_mean: f64,
    pub acc_majority: f64,
    /// Absent when the members' probability outputs were not collected.
    pub acc_avgpred: Option<f64>,
    pub member_accuracy: Vec<f64>,
    pub pairs: Vec<PairStats>,
}

pub fn ensemble_metrics(preds: &PredictionMatrix, kind: EnsembleKind) -> Result<EnsembleReport> {
    let e = preds.members();
    if e < 2 {
        return Err(LmcError::Precondition(format!(
            "pairwise metrics need at least 2 members, got {e}"
        )));
    }
    if preds.labels.is_empty() {
        return Err(LmcError::Precondition("no samples".into()));
    }
    let y = &preds.labels;
    let mut pairs = Vec::with_capacity(e * (e - 1) / 2);
    for i in 0..e {
        for j in i + 1..e {
            let (pi, pj) = (&preds.preds[i], &preds.preds[j]);
            pairs.push(PairStats {
                i,
                j,
                wa: wrong_agreement(pi, pj, y)?,
                wd: wrong_disagreement(pi, pj, y)?,
                one_correct: one_correct_disagreement(pi, pj, y)?,
            });
        }
    }
    let np = pairs.len() as f64;
    Ok(EnsembleReport {
        kind,
        members: e,
        wa_mean: pairs.iter().map(|p| p.wa).sum::<f64>() / np,
        wd_mean: pairs.iter().map(|p| p.wd).sum::<f64>() / np,
        acc_majority: accuracy(&majority_vote(&preds.preds, preds.classes), y),
        acc_avgpred: preds
            .probs
            .as_ref()
            .map(|p| accuracy(&averaged_prediction(p), y)),
        member_accuracy: preds.preds.iter().map(|p| accuracy(p, y)).collect(),
        pairs,
    })
}

/// Signed differences `lmc - seeds`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleComparison {
    pub d_wa: f64,
    pub d_wd: f64,
    pub d_acc_majority: f64,
    pub d_acc_avgpred: Option<f64>,
}

pub fn compare_ensembles(lmc: &EnsembleReport, seeds: &EnsembleReport) -> EnsembleComparison {
    EnsembleComparison {
        d_wa: lmc.wa_mean - seeds.wa_mean,
        d_wd: lmc.wd_mean - seeds.wd_mean,
        d_acc_majority: lmc.acc_majority - seeds.acc_majority,
        d_acc_avgpred: lmc.acc_avgpred.zip(seeds.acc_avgpred).map(|(a, b)| a - b),
    }
}

/// WA/WD aggregated over several ensembles of one kind, both as the mean of
/// per-ensemble means and pooled over every pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleAggregate {
    pub ensembles: usize,
    pub wa_mean_of_means: f64,
    pub wd_mean_of_means: f64,
    pub wa_pooled: f64,
    pub wd_pooled: f64,
}

pub fn aggregate_reports(reports: &[EnsembleReport]) -> Result<EnsembleAggregate> {
    if reports.is_empty() {
        return Err(LmcError::Precondition("no ensembles to aggregate".into()));
    }
    let k = reports.len() as f64;
    let pairs: Vec<&PairStats> = reports.iter().flat_map(|r| &r.pairs).collect();
    let np = pairs.len() as f64;
    Ok(EnsembleAggregate {
        ensembles: reports.len(),
        wa_mean_of_means: reports.iter().map(|r| r.wa_mean).sum::<f64>() / k,
        wd_mean_of_means: reports.iter().map(|r| r.wd_mean).sum::<f64>() / k,
        wa_pooled: pairs.iter().map(|p| p.wa).sum::<f64>() / np,
        wd_pooled: pairs.iter().map(|p| p.wd).sum::<f64>() / np,
    })
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    kind: &'a str,
    #[serde(rename = "E")]
    e: usize,
    wa_mean: f64,
    wd_mean: f64,
    acc_majority: f64,
    acc_avgpred: Option<f64>,
}

#[derive(Serialize)]
struct PairRow<'a> {
    kind: &'a str,
    i: usize,
    j: usize,
    wa: f64,
    wd: f64,
    one_correct_disagreement: f64,
}

/// Summary CSV: `kind,E,wa_mean,wd_mean,acc_majority,acc_avgpred`.
pub fn write_ensemble_csv<W: Write>(w: W, reports: &[EnsembleReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        out.serialize(SummaryRow {
            kind: r.kind.label(),
            e: r.members,
            wa_mean: r.wa_mean,
            wd_mean: r.wd_mean,
            acc_majority: r.acc_majority,
            acc_avgpred: r.acc_avgpred,
        })?;
    }
    out.flush()?;
    Ok(())
}

/// Audit CSV with one row per member pair.
pub fn write_pairs_csv<W: Write>(w: W, reports: &[EnsembleReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        for p in &r.pairs {
            out.serialize(PairRow {
                kind: r.kind.label(),
                i: p.i,
                j: p.j,
                wa: p.wa,
                wd: p.wd,
                one_correct_disagreement: p.one_correct,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}
