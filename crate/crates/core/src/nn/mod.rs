//! Minimal deterministic network engine: dense and 3x3 conv layers, ReLU,
//! batch norm, softmax cross-entropy, reverse-mode gradients and plain SGD.

mod checkpoint;
mod network;
mod ops;
mod spec;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint,
    CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use network::{BnStats, Mode, Network, ParamBlock, ParamRole, Scalar, BN_EPS};
pub use ops::{
    evaluate, forward, forward_train, init_model, loss_and_grad, predict, recompute_bn_stats,
    sgd_step, sgd_step_in_place, BnRecompute, EvalMetrics, LossGrad, Predictions, BN_MOMENTUM,
    EVAL_CHUNK,
};
pub use spec::{ArchKind, InputShape, ModelSpec};

pub(crate) use ops::{
    absorb_batch_stats, evaluate_with, loss_and_grad_with, recompute_bn_stats_with,
};

use crate::error::{LmcError, Result};

/// Flattened model parameters in canonical layer-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f32>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    /// Splits into named per-layer tensors.
    pub fn unflatten(&self, net: &Network) -> Result<Vec<(ParamBlock, Vec<f32>)>> {
        if self.len() != net.param_count() {
            return Err(LmcError::Shape(format!(
                "parameter vector has length {}, spec implies {}",
                self.len(),
                net.param_count()
            )));
        }
        Ok(net
            .param_blocks()
            .into_iter()
            .map(|b| {
                let v = self.0[b.offset..b.offset + b.len()].to_vec();
                (b, v)
            })
            .collect())
    }

    pub fn flatten(net: &Network, tensors: &[(ParamBlock, Vec<f32>)]) -> Result<Self> {
        let mut out = vec![0.0f32; net.param_count()];
        let mut covered = 0;
        for (block, values) in tensors {
            if values.len() != block.len() || block.offset + block.len() > out.len() {
                return Err(LmcError::Shape(format!(
                    "tensor {} has wrong size",
                    block.name
                )));
            }
            out[block.offset..block.offset + block.len()].copy_from_slice(values);
            covered += block.len();
        }
        if covered != out.len() {
            return Err(LmcError::Shape(format!(
                "tensors cover {covered} of {} parameters",
                out.len()
            )));
        }
        Ok(ParamVector(out))
    }
}

impl From<Vec<f32>> for ParamVector {
    fn from(v: Vec<f32>) -> Self {
        ParamVector(v)
    }
}
