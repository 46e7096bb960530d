use serde::{Deserialize, Serialize};

use crate::error::{LmcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchKind {
    Mlp,
    ConvPlain,
    ConvResidual,
}

/// Per-sample input layout. MLPs consume the flattened `channels * height * width` vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn flat(dim: usize) -> Self {
        InputShape {
            channels: 1,
            height: 1,
            width: dim,
        }
    }

    pub fn image(channels: usize, height: usize, width: usize) -> Self {
        InputShape {
            channels,
            height,
            width,
        }
    }

    pub fn dim(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Architecture description.
///
/// For `mlp`, `widths` are the hidden layer widths. For the conv kinds each
/// entry is the channel count of one 3x3 conv block; block 0 applies
/// `stem_stride`. In `conv-residual`, blocks after the first are grouped in
/// pairs and each pair is wrapped by an identity skip, so the pair's output
/// width must equal its input width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ArchKind,
    pub widths: Vec<usize>,
    pub batch_norm: Vec<bool>,
    pub input: InputShape,
    pub classes: usize,
    #[serde(default = "default_stride")]
    pub stem_stride: usize,
}

fn default_stride() -> usize {
    1
}

impl ModelSpec {
    pub fn mlp(input_dim: usize, widths: &[usize], classes: usize) -> Self {
        ModelSpec {
            kind: ArchKind::Mlp,
            widths: widths.to_vec(),
            batch_norm: vec![false; widths.len()],
            input: InputShape::flat(input_dim),
            classes,
            stem_stride: 1,
        }
    }

    pub fn conv(kind: ArchKind, input: InputShape, widths: &[usize], classes: usize) -> Self {
        ModelSpec {
            kind,
            widths: widths.to_vec(),
            batch_norm: vec![false; widths.len()],
            input,
            classes,
            stem_stride: 1,
        }
    }

    pub fn with_batch_norm(mut self, flags: &[bool]) -> Self {
        self.batch_norm = flags.to_vec();
        self
    }

    pub fn with_stem_stride(mut self, stride: usize) -> Self {
        self.stem_stride = stride;
        self
    }

    /// Number of hidden layers / conv blocks.
    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input.dim()
    }

    pub fn has_batch_norm(&self) -> bool {
        self.batch_norm.iter().any(|&b| b)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LmcError::InvalidSpec(m));
        if self.input.dim() == 0 {
            return bad("input dimensionality must be positive".into());
        }
        if self.classes == 0 {
            return bad("class count must be positive".into());
        }
        if let Some(i) = self.widths.iter().position(|&w| w == 0) {
            return bad(format!("width of layer {i} is zero"));
        }
        if self.batch_norm.len() != self.widths.len() {
            return bad(format!(
                "{} batch-norm flags for {} layers",
                self.batch_norm.len(),
                self.widths.len()
            ));
        }
        match self.kind {
            ArchKind::Mlp => {}
            ArchKind::ConvPlain | ArchKind::ConvResidual => {
                if self.widths.is_empty() {
                    return bad("conv architectures need at least one block".into());
                }
                if self.stem_stride == 0 {
                    return bad("stem stride must be positive".into());
                }
                if self.kind == ArchKind::ConvResidual {
                    for (pair, join) in residual_pairs(self.widths.len()) {
                        let (into, out) = (self.widths[pair - 1], self.widths[join]);
                        if into != out {
                            return bad(format!(
                                "residual join after block {join}: skip carries {into} channels, block emits {out}"
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Exact parameter count P implied by the layer list.
    pub fn param_count(&self) -> Result<usize> {
        Ok(super::Network::new(self)?.param_count())
    }
}

/// (first block, last block) of every skip-wrapped pair in a residual stack.
pub(crate) fn residual_pairs(blocks: usize) -> impl Iterator<Item = (usize, usize)> {
    (1..blocks)
        .step_by(2)
        .filter(move |&s| s + 1 < blocks)
        .map(|s| (s, s + 1))
}
