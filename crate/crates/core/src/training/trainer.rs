use std::io::Write;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use super::schedule::{NoiseMode, NoiseSchedule, ALIGNMENT_RULE};
use crate::data::{Dataset, SubsetId};
use crate::error::{LmcError, Result};
use crate::nn::{
    absorb_batch_stats, evaluate_with, loss_and_grad_with, sgd_step_in_place, Checkpoint, Network,
};
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub init_seed: u64,
    pub noise_seed: u64,
    pub noise_mode: NoiseMode,
    /// Evaluate every this many epochs (and always after the last); 0 only
    /// evaluates at the end.
    #[serde(default)]
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(LmcError::Precondition("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LmcError::Precondition(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// SGD noise scale `lr * (n / B - 1)` for a training set of `n` samples.
    pub fn noise_scale(&self, n: usize) -> Result<f64> {
        crate::analysis::noise_scale(self.learning_rate, n, self.batch_size)
    }
}

/// One evaluation of one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub subset: String,
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rows: Vec<MetricRow>,
}

impl RunRecord {
    /// Latest row for `(subset, split)`.
    pub fn last(&self, subset: &str, split: &str) -> Option<&MetricRow> {
        self.rows
            .iter()
            .rev()
            .find(|r| r.subset == subset && r.split == split)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["subset", "epoch", "split", "loss", "accuracy"])?;
        for r in &self.rows {
            out.write_record([
                r.subset.clone(),
                r.epoch.to_string(),
                r.split.clone(),
                format!("{:.9}", r.loss),
                format!("{:.9}", r.accuracy),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PairRun {
    pub a: Checkpoint,
    pub b: Checkpoint,
    pub record: RunRecord,
}

struct Run<'a> {
    tag: &'a str,
    subset: &'a Dataset,
    batches: Box<dyn Fn(usize) -> Vec<Vec<usize>> + Send + Sync + 'a>,
}

fn train_loop(
    net: &Network,
    init: &Checkpoint,
    run: Run<'_>,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<(Checkpoint, Vec<MetricRow>)> {
    let mut ckpt = init.clone();
    let mut rows = Vec::new();
    let lr = cfg.learning_rate as f32;
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0f64;
        let batches = (run.batches)(epoch);
        for (bi, idx) in batches.iter().enumerate() {
            let batch = run.subset.batch(idx);
            let lg = loss_and_grad_with(net, &ckpt, &batch).map_err(|e| match e {
                LmcError::NonFiniteLoss { loss, .. } => LmcError::NonFiniteLoss {
                    loss,
                    epoch,
                    batch: bi,
                },
                other => other,
            })?;
            sgd_step_in_place(&mut ckpt, &lg.grad, lr)?;
            absorb_batch_stats(&mut ckpt.bn_stats, &lg.batch_stats);
            loss_sum += lg.loss as f64;
        }
        let done = epoch + 1;
        debug!(
            "{} epoch {done}: mean batch loss {:.5}",
            run.tag,
            loss_sum / batches.len().max(1) as f64
        );
        let due = done == cfg.epochs || (cfg.eval_every > 0 && done % cfg.eval_every == 0);
        if due {
            rows.extend(eval_rows(
                net, &ckpt, run.tag, done, run.subset, test, exec,
            )?);
        }
    }
    if cfg.epochs == 0 {
        rows.extend(eval_rows(net, &ckpt, run.tag, 0, run.subset, test, exec)?);
    }
    if let Some(last) = rows.iter().rev().find(|r| r.split == "test") {
        info!(
            "{} done: test loss {:.4}, accuracy {:.4}",
            run.tag, last.loss, last.accuracy
        );
    }
    ckpt.meta.epoch = cfg.epochs;
    Ok((ckpt, rows))
}

fn eval_rows(
    net: &Network,
    ckpt: &Checkpoint,
    tag: &str,
    epoch: usize,
    train: &Dataset,
    test: Option<&Dataset>,
    exec: Exec,
) -> Result<Vec<MetricRow>> {
    let mut splits = vec![("train", train)];
    if let Some(t) = test {
        splits.push(("test", t));
    }
    splits
        .into_iter()
        .map(|(split, data)| {
            let m = evaluate_with(net, ckpt, data, exec)?;
            Ok(MetricRow {
                subset: tag.to_string(),
                epoch,
                split: split.to_string(),
                loss: m.loss,
                accuracy: m.accuracy,
            })
        })
        .collect()
}

fn stamp(ckpt: &mut Checkpoint, cfg: &TrainConfig, subset: &str, n: usize, mode: NoiseMode) {
    let m = &mut ckpt.meta;
    m.init_seed = cfg.init_seed;
    m.noise_seed = cfg.noise_seed;
    m.subset = subset.to_string();
    m.batch_size = cfg.batch_size;
    m.learning_rate = cfg.learning_rate;
    m.dataset_size = n;
    m.noise_mode = Some(mode.label().to_string());
    m.alignment = (mode == NoiseMode::Fixed).then(|| ALIGNMENT_RULE.to_string());
}

/// Trains two copies of `init` with plain SGD, one on each subset, under a
/// shared noise schedule. The two runs execute concurrently under
/// [`Exec::Parallel`]; results do not depend on the executor.
pub fn train_pair(
    init: &Checkpoint,
    a: &Dataset,
    b: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<PairRun> {
    cfg.validate()?;
    init.validate()?;
    let net = init.network()?;
    let schedule = NoiseSchedule::build(a, b, cfg.batch_size, cfg.noise_seed, cfg.noise_mode)?;
    let (tag_a, tag_b) = (SubsetId::A.as_str(), SubsetId::B.as_str());
    let sched = &schedule;
    let (ra, rb) = exec.join(
        || {
            let run = Run {
                tag: tag_a,
                subset: a,
                batches: Box::new(move |e| sched.batches(e).0),
            };
            train_loop(&net, init, run, test, cfg, exec)
        },
        || {
            let run = Run {
                tag: tag_b,
                subset: b,
                batches: Box::new(move |e| sched.batches(e).1),
            };
            train_loop(&net, init, run, test, cfg, exec)
        },
    );
    let (mut ca, rows_a) = ra?;
    let (mut cb, rows_b) = rb?;
    stamp(&mut ca, cfg, tag_a, a.len(), cfg.noise_mode);
    stamp(&mut cb, cfg, tag_b, b.len(), cfg.noise_mode);
    let mut rows = rows_a;
    rows.extend(rows_b);
    Ok(PairRun {
        a: ca,
        b: cb,
        record: RunRecord { rows },
    })
}

/// Trains one model on `data`; used for ensemble members and baselines.
pub fn train_single(
    init: &Checkpoint,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    tag: &str,
    exec: Exec,
) -> Result<(Checkpoint, RunRecord)> {
    cfg.validate()?;
    init.validate()?;
    let net = init.network()?;
    let schedule = NoiseSchedule::single(data, cfg.batch_size, cfg.noise_seed)?;
    let run = Run {
        tag,
        subset: data,
        batches: Box::new(|e| schedule.batches(e).0),
    };
    let (mut ckpt, rows) = train_loop(&net, init, run, test, cfg, exec)?;
    stamp(&mut ckpt, cfg, tag, data.len(), NoiseMode::Independent);
    Ok((ckpt, RunRecord { rows }))
}
