use ndarray::{Array2, ArrayView2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, CheckpointMeta};
use super::network::{BnStats, Mode, Network, ParamRole};
use super::spec::ModelSpec;
use super::ParamVector;
use crate::data::{Batch, Dataset};
use crate::error::{LmcError, Result};
use crate::par::Exec;

/// Weight of the newest batch in the running-stat moving average.
pub const BN_MOMENTUM: f32 = 0.1;
/// Rows per forward pass when evaluating or recomputing BN statistics.
pub const EVAL_CHUNK: usize = 1000;

/// Scaled-uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// drawn block by block in canonical order. BN scale 1, shift 0, stats (0, 1).
pub fn init_model(spec: &ModelSpec, seed: u64) -> Result<Checkpoint> {
    let net = Network::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![0.0f32; net.param_count()];
    for block in net.param_blocks() {
        let dst = &mut params[block.offset..block.offset + block.len()];
        match block.role {
            ParamRole::Weight | ParamRole::Bias => {
                let bound = 1.0 / (block.fan_in.unwrap_or(1) as f32).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                dst.iter_mut().for_each(|p| *p = dist.sample(&mut rng));
            }
            ParamRole::BnScale => dst.fill(1.0),
            ParamRole::BnShift => dst.fill(0.0),
        }
    }
    Ok(Checkpoint {
        spec: spec.clone(),
        params: ParamVector(params),
        bn_stats: net
            .bn_features()
            .iter()
            .map(|&f| BnStats::fresh(f))
            .collect(),
        meta: CheckpointMeta {
            init_seed: seed,
            ..CheckpointMeta::default()
        },
    })
}

/// Logits for `inputs`. Pure in both modes: train mode normalizes with batch
/// statistics but leaves the checkpoint untouched (see [`forward_train`]).
pub fn forward(ckpt: &Checkpoint, inputs: ArrayView2<f32>, mode: Mode) -> Result<Array2<f32>> {
    let net = ckpt.network()?;
    Ok(net.forward(&ckpt.params.0, &ckpt.bn_stats, inputs, mode)?.0)
}

/// Train-mode forward that folds the batch statistics into the running stats.
pub fn forward_train(ckpt: &mut Checkpoint, inputs: ArrayView2<f32>) -> Result<Array2<f32>> {
    let net = ckpt.network()?;
    let (logits, stats) = net.forward(&ckpt.params.0, &ckpt.bn_stats, inputs, Mode::Train)?;
    absorb_batch_stats(&mut ckpt.bn_stats, &stats);
    Ok(logits)
}

pub(crate) fn absorb_batch_stats(running: &mut [BnStats], batch: &[BnStats]) {
    for (r, b) in running.iter_mut().zip(batch) {
        for (rm, &bm) in r.mean.iter_mut().zip(&b.mean) {
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * bm;
        }
        for (rv, &bv) in r.var.iter_mut().zip(&b.var) {
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * bv;
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f32,
    pub grad: ParamVector,
    /// Batch statistics of every BN layer, for the caller to fold into the
    /// running stats.
    pub batch_stats: Vec<BnStats>,
}

pub fn loss_and_grad(ckpt: &Checkpoint, batch: &Batch) -> Result<LossGrad> {
    loss_and_grad_with(&ckpt.network()?, ckpt, batch)
}

pub(crate) fn loss_and_grad_with(
    net: &Network,
    ckpt: &Checkpoint,
    batch: &Batch,
) -> Result<LossGrad> {
    let (loss, grad, batch_stats) =
        net.loss_and_grad(&ckpt.params.0, batch.inputs.view(), &batch.labels)?;
    Ok(LossGrad {
        loss,
        grad: ParamVector(grad),
        batch_stats,
    })
}

/// Plain SGD: `params - lr * grad`. No momentum, no weight decay.
pub fn sgd_step(ckpt: &Checkpoint, grad: &ParamVector, lr: f32) -> Result<Checkpoint> {
    let mut next = ckpt.clone();
    sgd_step_in_place(&mut next, grad, lr)?;
    Ok(next)
}

pub fn sgd_step_in_place(ckpt: &mut Checkpoint, grad: &ParamVector, lr: f32) -> Result<()> {
    if !(lr > 0.0) {
        return Err(LmcError::Precondition(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if grad.len() != ckpt.params.len() {
        return Err(LmcError::Shape(format!(
            "gradient has length {}, parameters {}",
            grad.len(),
            ckpt.params.len()
        )));
    }
    for (p, &g) in ckpt.params.0.iter_mut().zip(&grad.0) {
        *p -= lr * g;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnRecompute {
    Recomputed,
    /// The model has no BN layers; the checkpoint is returned unchanged.
    NoBatchNorm,
}

/// Replaces the running statistics by the sample-weighted average of batch
/// statistics gathered from `passes` train-mode sweeps over `data` with the
/// parameters frozen.
pub fn recompute_bn_stats(
    ckpt: &Checkpoint,
    data: &[&Dataset],
    passes: usize,
) -> Result<(Checkpoint, BnRecompute)> {
    recompute_bn_stats_with(ckpt, data, passes, Exec::default())
}

pub(crate) fn recompute_bn_stats_with(
    ckpt: &Checkpoint,
    data: &[&Dataset],
    passes: usize,
    exec: Exec,
) -> Result<(Checkpoint, BnRecompute)> {
    let net = ckpt.network()?;
    if net.bn_features().is_empty() {
        log::warn!("recompute_bn_stats on a model without batch norm; nothing to do");
        return Ok((ckpt.clone(), BnRecompute::NoBatchNorm));
    }
    if passes == 0 {
        return Err(LmcError::Precondition(
            "recompute needs at least one pass".into(),
        ));
    }
    let chunks: Vec<(usize, usize, usize)> = data
        .iter()
        .enumerate()
        .flat_map(|(d, ds)| chunk_ranges(ds.len()).map(move |(a, b)| (d, a, b)))
        .collect();
    if chunks.is_empty() {
        return Err(LmcError::Precondition(
            "recompute needs nonempty data".into(),
        ));
    }
    let per_chunk = exec.map(&chunks, |&(d, a, b)| {
        let rows = data[d].inputs.slice(ndarray::s![a..b, ..]);
        net.forward(&ckpt.params.0, &ckpt.bn_stats, rows, Mode::Train)
            .map(|(_, stats)| (b - a, stats))
    });

    let mut sums: Vec<(Vec<f64>, Vec<f64>)> = net
        .bn_features()
        .iter()
        .map(|&f| (vec![0.0; f], vec![0.0; f]))
        .collect();
    let mut total = 0usize;
    for _ in 0..passes {
        for chunk in &per_chunk {
            let (n, stats) = chunk
                .as_ref()
                .map_err(|e| LmcError::Precondition(e.to_string()))?;
            total += n;
            for ((ms, vs), s) in sums.iter_mut().zip(stats) {
                for (acc, &m) in ms.iter_mut().zip(&s.mean) {
                    *acc += *n as f64 * m as f64;
                }
                for (acc, &v) in vs.iter_mut().zip(&s.var) {
                    *acc += *n as f64 * v as f64;
                }
            }
        }
    }
    let mut next = ckpt.clone();
    next.bn_stats = sums
        .into_iter()
        .map(|(m, v)| BnStats {
            mean: m.iter().map(|x| (x / total as f64) as f32).collect(),
            var: v
                .iter()
                .map(|x| ((x / total as f64) as f32).max(f32::MIN_POSITIVE))
                .collect(),
        })
        .collect();
    Ok((next, BnRecompute::Recomputed))
}

fn chunk_ranges(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n)
        .step_by(EVAL_CHUNK)
        .map(move |a| (a, (a + EVAL_CHUNK).min(n)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    /// Mean softmax cross-entropy.
    pub loss: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// Eval-mode loss and accuracy over a whole dataset.
pub fn evaluate(ckpt: &Checkpoint, data: &Dataset, exec: Exec) -> Result<EvalMetrics> {
    let net = ckpt.network()?;
    evaluate_with(&net, ckpt, data, exec)
}

pub(crate) fn evaluate_with(
    net: &Network,
    ckpt: &Checkpoint,
    data: &Dataset,
    exec: Exec,
) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(LmcError::Precondition(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    let ranges: Vec<_> = chunk_ranges(data.len()).collect();
    let parts = exec.map(&ranges, |&(a, b)| -> Result<(f64, usize)> {
        let rows = data.inputs.slice(ndarray::s![a..b, ..]);
        let (logits, _) = net.forward(&ckpt.params.0, &ckpt.bn_stats, rows, Mode::Eval)?;
        Ok(xent_sum_and_correct(&logits, &data.labels[a..b]))
    });
    let (mut loss, mut correct) = (0.0, 0);
    for p in parts {
        let (l, c) = p?;
        loss += l;
        correct += c;
    }
    let n = data.len();
    Ok(EvalMetrics {
        loss: loss / n as f64,
        accuracy: correct as f64 / n as f64,
        count: n,
    })
}

/// Summed cross-entropy (in f64) and number of argmax hits.
pub(crate) fn xent_sum_and_correct(logits: &Array2<f32>, labels: &[usize]) -> (f64, usize) {
    let mut loss = 0.0f64;
    let mut correct = 0;
    for (row, &y) in logits.outer_iter().zip(labels) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b as f64));
        let lse = m + row.fold(0.0f64, |a, &z| a + (z as f64 - m).exp()).ln();
        loss += lse - row[y] as f64;
        if argmax(row.iter().copied()) == y {
            correct += 1;
        }
    }
    (loss, correct)
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax(values: impl Iterator<Item = f32>) -> usize {
    let mut best = (0, f32::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

#[derive(Debug, Clone)]
pub struct Predictions {
    pub classes: Vec<usize>,
    /// Softmax probabilities, one row per sample.
    pub probs: Array2<f32>,
}

pub fn predict(ckpt: &Checkpoint, data: &Dataset, exec: Exec) -> Result<Predictions> {
    let net = ckpt.network()?;
    let ranges: Vec<_> = chunk_ranges(data.len()).collect();
    let parts = exec.map(&ranges, |&(a, b)| {
        let rows = data.inputs.slice(ndarray::s![a..b, ..]);
        net.forward(&ckpt.params.0, &ckpt.bn_stats, rows, Mode::Eval)
            .map(|r| r.0)
    });
    let mut blocks = Vec::with_capacity(parts.len());
    for p in parts {
        blocks.push(p?);
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let mut probs =
        ndarray::concatenate(Axis(0), &views).map_err(|e| LmcError::Shape(e.to_string()))?;
    for mut row in probs.outer_iter_mut() {
        let m = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|z| (z - m).exp());
        let s = row.sum();
        row.mapv_inplace(|z| z / s);
    }
    let classes = probs
        .outer_iter()
        .map(|r| argmax(r.iter().copied()))
        .collect();
    Ok(Predictions { classes, probs })
}
