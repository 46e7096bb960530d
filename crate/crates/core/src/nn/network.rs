use std::fmt::Debug;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};

use super::spec::{residual_pairs, ArchKind, ModelSpec};
use crate::error::{LmcError, Result};

pub const BN_EPS: f64 = 1e-5;

/// Floating-point type the engine can run in. Training uses `f32`; the
/// gradient oracle runs the same graph in `f64`.
pub trait Scalar:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + Send
    + Sync
    + Debug
    + Default
    + 'static
{
}
impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running (or batch) statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<T = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BnStats<T> {
    pub fn fresh(features: usize) -> Self {
        BnStats {
            mean: vec![T::zero(); features],
            var: vec![T::one(); features],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub out_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub stride: usize,
}

impl ConvGeom {
    fn new(in_c: usize, out_c: usize, in_h: usize, in_w: usize, stride: usize) -> Self {
        // 3x3 kernel, padding 1
        ConvGeom {
            in_c,
            out_c,
            in_h,
            in_w,
            out_h: (in_h - 1) / stride + 1,
            out_w: (in_w - 1) / stride + 1,
            stride,
        }
    }

    fn in_hw(&self) -> usize {
        self.in_h * self.in_w
    }

    fn out_hw(&self) -> usize {
        self.out_h * self.out_w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Op {
    /// (batch, C*HW) sample-major input to (C, batch*HW) channel-major activations.
    ChannelMajor {
        channels: usize,
        hw: usize,
    },
    Dense {
        inp: usize,
        out: usize,
        w: usize,
        b: usize,
    },
    Conv {
        geom: ConvGeom,
        w: usize,
        b: usize,
    },
    /// `spatial` layers normalize rows of channel-major activations; dense
    /// layers normalize columns of (batch, features) activations.
    BatchNorm {
        features: usize,
        gamma: usize,
        beta: usize,
        slot: usize,
        spatial: bool,
    },
    Relu,
    SkipSave,
    SkipAdd,
    GlobalAvgPool {
        channels: usize,
        hw: usize,
    },
}

/// A spec compiled into an executable op list with parameter offsets into
/// the canonical flat layout.
#[derive(Debug, Clone)]
pub struct Network {
    spec: ModelSpec,
    ops: Vec<Op>,
    param_count: usize,
    bn_features: Vec<usize>,
    first_param_op: usize,
}

/// One parameter tensor in the canonical layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
    /// Fan-in used for initialization; `None` for batch-norm affine params.
    pub fan_in: Option<usize>,
    pub role: ParamRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    BnScale,
    BnShift,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Network {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut ops = Vec::new();
        let mut cursor = 0usize;
        let mut bn_features = Vec::new();
        let mut take = |n: usize| {
            let at = cursor;
            cursor += n;
            at
        };
        let mut push_bn =
            |ops: &mut Vec<Op>, take: &mut dyn FnMut(usize) -> usize, f: usize, spatial: bool| {
                let gamma = take(f);
                let beta = take(f);
                ops.push(Op::BatchNorm {
                    features: f,
                    gamma,
                    beta,
                    slot: bn_features.len(),
                    spatial,
                });
                bn_features.push(f);
            };

        match spec.kind {
            ArchKind::Mlp => {
                let mut prev = spec.input_dim();
                for (i, &width) in spec.widths.iter().enumerate() {
                    let w = take(width * prev);
                    let b = take(width);
                    ops.push(Op::Dense {
                        inp: prev,
                        out: width,
                        w,
                        b,
                    });
                    if spec.batch_norm[i] {
                        push_bn(&mut ops, &mut take, width, false);
                    }
                    ops.push(Op::Relu);
                    prev = width;
                }
                let w = take(spec.classes * prev);
                let b = take(spec.classes);
                ops.push(Op::Dense {
                    inp: prev,
                    out: spec.classes,
                    w,
                    b,
                });
            }
            ArchKind::ConvPlain | ArchKind::ConvResidual => {
                let shape = spec.input;
                ops.push(Op::ChannelMajor {
                    channels: shape.channels,
                    hw: shape.height * shape.width,
                });
                let pairs: Vec<(usize, usize)> = if spec.kind == ArchKind::ConvResidual {
                    residual_pairs(spec.widths.len()).collect()
                } else {
                    Vec::new()
                };
                let (mut c, mut h, mut wd) = (shape.channels, shape.height, shape.width);
                for (i, &width) in spec.widths.iter().enumerate() {
                    let stride = if i == 0 { spec.stem_stride } else { 1 };
                    if pairs.iter().any(|&(start, _)| start == i) {
                        ops.push(Op::SkipSave);
                    }
                    let geom = ConvGeom::new(c, width, h, wd, stride);
                    let w = take(width * c * 9);
                    let b = take(width);
                    ops.push(Op::Conv { geom, w, b });
                    if spec.batch_norm[i] {
                        push_bn(&mut ops, &mut take, width, true);
                    }
                    if pairs.iter().any(|&(_, end)| end == i) {
                        ops.push(Op::SkipAdd);
                    }
                    ops.push(Op::Relu);
                    c = width;
                    h = geom.out_h;
                    wd = geom.out_w;
                }
                ops.push(Op::GlobalAvgPool {
                    channels: c,
                    hw: h * wd,
                });
                let w = take(spec.classes * c);
                let b = take(spec.classes);
                ops.push(Op::Dense {
                    inp: c,
                    out: spec.classes,
                    w,
                    b,
                });
            }
        }

        let first_param_op = ops
            .iter()
            .position(|op| matches!(op, Op::Dense { .. } | Op::Conv { .. }))
            .unwrap_or(0);
        Ok(Network {
            spec: spec.clone(),
            ops,
            param_count: cursor,
            bn_features,
            first_param_op,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Feature count of each batch-norm layer, in layer order.
    pub fn bn_features(&self) -> &[usize] {
        &self.bn_features
    }

    /// Parameter tensors in canonical (layer-major) order.
    pub fn param_blocks(&self) -> Vec<ParamBlock> {
        let mut blocks = Vec::new();
        let mut layer = 0;
        for op in &self.ops {
            match *op {
                Op::Dense { inp, out, w, b } => {
                    blocks.push(ParamBlock {
                        name: format!("layer{layer}.weight"),
                        offset: w,
                        shape: vec![out, inp],
                        fan_in: Some(inp),
                        role: ParamRole::Weight,
                    });
                    blocks.push(ParamBlock {
                        name: format!("layer{layer}.bias"),
                        offset: b,
                        shape: vec![out],
                        fan_in: Some(inp),
                        role: ParamRole::Bias,
                    });
                    layer += 1;
                }
                Op::Conv { geom, w, b } => {
                    blocks.push(ParamBlock {
                        name: format!("layer{layer}.weight"),
                        offset: w,
                        shape: vec![geom.out_c, geom.in_c, 3, 3],
                        fan_in: Some(geom.in_c * 9),
                        role: ParamRole::Weight,
                    });
                    blocks.push(ParamBlock {
                        name: format!("layer{layer}.bias"),
                        offset: b,
                        shape: vec![geom.out_c],
                        fan_in: Some(geom.in_c * 9),
                        role: ParamRole::Bias,
                    });
                    layer += 1;
                }
                Op::BatchNorm {
                    features,
                    gamma,
                    beta,
                    slot,
                    ..
                } => {
                    blocks.push(ParamBlock {
                        name: format!("bn{slot}.gamma"),
                        offset: gamma,
                        shape: vec![features],
                        fan_in: None,
                        role: ParamRole::BnScale,
                    });
                    blocks.push(ParamBlock {
                        name: format!("bn{slot}.beta"),
                        offset: beta,
                        shape: vec![features],
                        fan_in: None,
                        role: ParamRole::BnShift,
                    });
                }
                _ => {}
            }
        }
        blocks
    }

    fn check_input<T>(&self, input: &ArrayView2<T>) -> Result<()> {
        if input.ncols() != self.spec.input_dim() {
            return Err(LmcError::Shape(format!(
                "input has {} features, model expects {}",
                input.ncols(),
                self.spec.input_dim()
            )));
        }
        if input.nrows() == 0 {
            return Err(LmcError::Shape("empty batch".into()));
        }
        Ok(())
    }

    fn check_params<T>(&self, params: &[T]) -> Result<()> {
        if params.len() != self.param_count {
            return Err(LmcError::Shape(format!(
                "parameter vector has length {}, spec implies {}",
                params.len(),
                self.param_count
            )));
        }
        Ok(())
    }

    /// Runs the network. In train mode batch norm uses batch statistics and
    /// the returned `batch_stats` holds them (one entry per BN layer); eval
    /// mode normalizes with `running` and returns no stats.
    pub fn forward<T: Scalar>(
        &self,
        params: &[T],
        running: &[BnStats<T>],
        input: ArrayView2<T>,
        mode: Mode,
    ) -> Result<(Array2<T>, Vec<BnStats<T>>)> {
        self.check_params(params)?;
        self.check_input(&input)?;
        if mode == Mode::Eval && running.len() != self.bn_features.len() {
            return Err(LmcError::Shape(format!(
                "{} running-stat sets for {} batch-norm layers",
                running.len(),
                self.bn_features.len()
            )));
        }
        let (logits, _, stats) = self.run(params, running, input, mode, false);
        Ok((logits, stats))
    }

    /// Mean softmax cross-entropy over the batch and its gradient in the
    /// canonical layout. Batch norm runs in train mode.
    pub fn loss_and_grad<T: Scalar>(
        &self,
        params: &[T],
        input: ArrayView2<T>,
        labels: &[usize],
    ) -> Result<(T, Vec<T>, Vec<BnStats<T>>)> {
        self.check_params(params)?;
        self.check_input(&input)?;
        self.check_labels(input.nrows(), labels)?;
        let (logits, tape, stats) = self.run(params, &[], input, Mode::Train, true);
        let (loss, dlogits) = softmax_xent(&logits, labels, true);
        if !loss.is_finite() {
            return Err(LmcError::NonFiniteLoss {
                loss: loss.to_f64().unwrap_or(f64::NAN),
                epoch: 0,
                batch: 0,
            });
        }
        let grad = self.backward(params, tape, dlogits.expect("gradient requested"));
        Ok((loss, grad, stats))
    }

    /// Mean cross-entropy only (no tape); used by the finite-difference oracle.
    pub fn loss<T: Scalar>(
        &self,
        params: &[T],
        running: &[BnStats<T>],
        input: ArrayView2<T>,
        labels: &[usize],
        mode: Mode,
    ) -> Result<T> {
        self.check_labels(input.nrows(), labels)?;
        let (logits, _) = self.forward(params, running, input, mode)?;
        Ok(softmax_xent(&logits, labels, false).0)
    }

    pub(crate) fn check_labels(&self, rows: usize, labels: &[usize]) -> Result<()> {
        if labels.len() != rows {
            return Err(LmcError::Shape(format!(
                "{} labels for {} inputs",
                labels.len(),
                rows
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.spec.classes) {
            return Err(LmcError::Shape(format!(
                "label {bad} outside [0, {})",
                self.spec.classes
            )));
        }
        Ok(())
    }

    fn run<T: Scalar>(
        &self,
        params: &[T],
        running: &[BnStats<T>],
        input: ArrayView2<T>,
        mode: Mode,
        record: bool,
    ) -> (Array2<T>, Vec<Cache<T>>, Vec<BnStats<T>>) {
        let batch = input.nrows();
        let mut tape = Vec::with_capacity(if record { self.ops.len() } else { 0 });
        let mut stats = Vec::new();
        let mut skips: Vec<Array2<T>> = Vec::new();
        let mut x = input.to_owned();
        let eps = T::from_f64(BN_EPS).unwrap();

        for op in &self.ops {
            let (y, cache) = match *op {
                Op::ChannelMajor { channels, hw } => {
                    (to_channel_major(x.view(), channels, hw), Cache::Empty)
                }
                Op::Dense { inp, out, w, b } => {
                    let wt = ArrayView2::from_shape((out, inp), &params[w..w + out * inp]).unwrap();
                    let bias = ArrayView1::from(&params[b..b + out]);
                    let y = x.dot(&wt.t()) + bias;
                    (
                        y,
                        if record {
                            Cache::Input(x)
                        } else {
                            Cache::Empty
                        },
                    )
                }
                Op::Conv { geom, w, b } => {
                    let wt = ArrayView2::from_shape(
                        (geom.out_c, geom.in_c * 9),
                        &params[w..w + geom.out_c * geom.in_c * 9],
                    )
                    .unwrap();
                    let bias = ArrayView1::from(&params[b..b + geom.out_c]).insert_axis(Axis(1));
                    let cols = im2col(x.view(), &geom, batch);
                    let y = wt.dot(&cols) + bias;
                    (
                        y,
                        if record {
                            Cache::Input(cols)
                        } else {
                            Cache::Empty
                        },
                    )
                }
                Op::BatchNorm {
                    features,
                    gamma,
                    beta,
                    slot,
                    spatial,
                } => {
                    let g = ArrayView1::from(&params[gamma..gamma + features]);
                    let bt = ArrayView1::from(&params[beta..beta + features]);
                    // feature-major view: (features, samples)
                    let xf = if spatial { x.view() } else { x.t() };
                    let (mean, var) = match mode {
                        Mode::Train => {
                            let n = T::from_usize(xf.ncols()).unwrap();
                            let mean = xf.sum_axis(Axis(1)) / n;
                            let centered = &xf - &mean.view().insert_axis(Axis(1));
                            let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / n;
                            stats.push(BnStats {
                                mean: mean.to_vec(),
                                var: var.to_vec(),
                            });
                            (mean, var)
                        }
                        Mode::Eval => (
                            Array1::from(running[slot].mean.clone()),
                            Array1::from(running[slot].var.clone()),
                        ),
                    };
                    let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
                    let mut xhat = &xf - &mean.view().insert_axis(Axis(1));
                    xhat *= &inv_std.view().insert_axis(Axis(1));
                    let yf = &xhat * &g.insert_axis(Axis(1)) + bt.insert_axis(Axis(1));
                    let y = if spatial { yf } else { yf.reversed_axes() };
                    let cache = if record {
                        Cache::Bn { xhat, inv_std }
                    } else {
                        Cache::Empty
                    };
                    (y, cache)
                }
                Op::Relu => {
                    x.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
                    let cache = if record {
                        Cache::Input(x.clone())
                    } else {
                        Cache::Empty
                    };
                    (x, cache)
                }
                Op::SkipSave => {
                    skips.push(x.clone());
                    (x, Cache::Empty)
                }
                Op::SkipAdd => {
                    let saved = skips.pop().expect("skip stack balanced by construction");
                    x += &saved;
                    (x, Cache::Empty)
                }
                Op::GlobalAvgPool { channels, hw } => {
                    (global_avg_pool(x.view(), channels, hw, batch), Cache::Empty)
                }
            };
            if record {
                tape.push(cache);
            }
            x = y;
        }
        (x, tape, stats)
    }

    fn backward<T: Scalar>(
        &self,
        params: &[T],
        mut tape: Vec<Cache<T>>,
        dlogits: Array2<T>,
    ) -> Vec<T> {
        let mut grad = vec![T::zero(); self.param_count];
        let mut dy = dlogits;
        let batch = dy.nrows();
        let mut skip_grads: Vec<Array2<T>> = Vec::new();

        for (idx, op) in self.ops.iter().enumerate().rev() {
            let cache = tape.pop().expect("tape matches ops");
            let need_dx = idx > self.first_param_op;
            match *op {
                Op::ChannelMajor { .. } => break,
                Op::Dense { inp, out, w, b } => {
                    let Cache::Input(x) = cache else {
                        unreachable!()
                    };
                    let wt = ArrayView2::from_shape((out, inp), &params[w..w + out * inp]).unwrap();
                    let dw = dy.t().dot(&x);
                    add_into(&mut grad[w..w + out * inp], dw.view());
                    add_into1(&mut grad[b..b + out], dy.sum_axis(Axis(0)).view());
                    if !need_dx {
                        break;
                    }
                    dy = dy.dot(&wt);
                }
                Op::Conv { geom, w, b } => {
                    let Cache::Input(cols) = cache else {
                        unreachable!()
                    };
                    let n = geom.out_c * geom.in_c * 9;
                    let wt = ArrayView2::from_shape((geom.out_c, geom.in_c * 9), &params[w..w + n])
                        .unwrap();
                    let dw = dy.dot(&cols.t());
                    add_into(&mut grad[w..w + n], dw.view());
                    add_into1(&mut grad[b..b + geom.out_c], dy.sum_axis(Axis(1)).view());
                    if !need_dx {
                        break;
                    }
                    let dcols = wt.t().dot(&dy);
                    dy = col2im(dcols.view(), &geom, batch);
                }
                Op::BatchNorm {
                    features,
                    gamma,
                    beta,
                    spatial,
                    ..
                } => {
                    let Cache::Bn { xhat, inv_std } = cache else {
                        unreachable!()
                    };
                    let g = ArrayView1::from(&params[gamma..gamma + features]);
                    let dyf = if spatial { dy.view() } else { dy.t() };
                    let n = T::from_usize(dyf.ncols()).unwrap();
                    let dbeta = dyf.sum_axis(Axis(1));
                    let dgamma = (&dyf * &xhat).sum_axis(Axis(1));
                    add_into1(&mut grad[gamma..gamma + features], dgamma.view());
                    add_into1(&mut grad[beta..beta + features], dbeta.view());
                    let scale = (&g * &inv_std) / n;
                    let mut dx = &dyf * n - dbeta.view().insert_axis(Axis(1));
                    dx = dx - &xhat * &dgamma.view().insert_axis(Axis(1));
                    dx *= &scale.view().insert_axis(Axis(1));
                    dy = if spatial { dx } else { dx.reversed_axes() };
                }
                Op::Relu => {
                    let Cache::Input(out) = cache else {
                        unreachable!()
                    };
                    Zip::from(&mut dy).and(&out).for_each(|d, &o| {
                        if o <= T::zero() {
                            *d = T::zero();
                        }
                    });
                }
                Op::SkipAdd => skip_grads.push(dy.clone()),
                Op::SkipSave => {
                    let sg = skip_grads.pop().expect("balanced skips");
                    dy += &sg;
                }
                Op::GlobalAvgPool { channels, hw } => {
                    let inv = T::one() / T::from_usize(hw).unwrap();
                    let mut dx = Array2::zeros((channels, batch * hw));
                    for c in 0..channels {
                        for bi in 0..batch {
                            let v = dy[[bi, c]] * inv;
                            dx.slice_mut(s![c, bi * hw..(bi + 1) * hw]).fill(v);
                        }
                    }
                    dy = dx;
                }
            }
        }
        grad
    }
}

enum Cache<T> {
    Empty,
    Input(Array2<T>),
    Bn { xhat: Array2<T>, inv_std: Array1<T> },
}

fn add_into<T: Scalar>(dst: &mut [T], src: ArrayView2<T>) {
    for (d, &s) in dst.iter_mut().zip(src.iter()) {
        *d += s;
    }
}

fn add_into1<T: Scalar>(dst: &mut [T], src: ArrayView1<T>) {
    for (d, &s) in dst.iter_mut().zip(src.iter()) {
        *d += s;
    }
}

/// Mean softmax cross-entropy; optionally the gradient w.r.t. the logits.
pub(crate) fn softmax_xent<T: Scalar>(
    logits: &Array2<T>,
    labels: &[usize],
    want_grad: bool,
) -> (T, Option<Array2<T>>) {
    let batch = logits.nrows();
    let inv_b = T::one() / T::from_usize(batch).unwrap();
    let mut total = T::zero();
    let mut grad = want_grad.then(|| Array2::zeros(logits.raw_dim()));
    for (i, row) in logits.outer_iter().enumerate() {
        let m = row.fold(T::neg_infinity(), |a, &b| a.max(b));
        let sum = row.fold(T::zero(), |a, &z| a + (z - m).exp());
        let lse = m + sum.ln();
        total += lse - row[labels[i]];
        if let Some(g) = grad.as_mut() {
            let mut grow = g.row_mut(i);
            for (k, &z) in row.iter().enumerate() {
                grow[k] = (z - lse).exp() * inv_b;
            }
            grow[labels[i]] -= inv_b;
        }
    }
    (total * inv_b, grad)
}

fn to_channel_major<T: Scalar>(x: ArrayView2<T>, channels: usize, hw: usize) -> Array2<T> {
    let batch = x.nrows();
    let v = x
        .into_shape_with_order((batch, channels, hw))
        .expect("contiguous input");
    v.permuted_axes([1, 0, 2])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((channels, batch * hw))
        .unwrap()
}

fn global_avg_pool<T: Scalar>(
    x: ArrayView2<T>,
    channels: usize,
    hw: usize,
    batch: usize,
) -> Array2<T> {
    let inv = T::one() / T::from_usize(hw).unwrap();
    let mut y = Array2::zeros((batch, channels));
    for c in 0..channels {
        let row = x.row(c);
        for b in 0..batch {
            let sum = row
                .slice(s![b * hw..(b + 1) * hw])
                .fold(T::zero(), |a, &v| a + v);
            y[[b, c]] = sum * inv;
        }
    }
    y
}

/// Channel-major (C, batch*H*W) activations to (C*9, batch*Ho*Wo) patch columns.
fn im2col<T: Scalar>(x: ArrayView2<T>, g: &ConvGeom, batch: usize) -> Array2<T> {
    let (ihw, ohw) = (g.in_hw(), g.out_hw());
    let mut cols = Array2::<T>::zeros((g.in_c * 9, batch * ohw));
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().unwrap();
    let cs = cols.as_slice_mut().unwrap();
    let ncols = batch * ohw;
    for c in 0..g.in_c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cs[(c * 9 + ky * 3 + kx) * ncols..][..ncols];
                for b in 0..batch {
                    let src = &xs[c * batch * ihw + b * ihw..][..ihw];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ky) as isize - 1;
                        if iy < 0 || iy as usize >= g.in_h {
                            continue;
                        }
                        let srow = &src[iy as usize * g.in_w..][..g.in_w];
                        let drow = &mut row[b * ohw + oy * g.out_w..][..g.out_w];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - 1;
                            if ix >= 0 && (ix as usize) < g.in_w {
                                *d = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch-column gradients back to activations.
fn col2im<T: Scalar>(cols: ArrayView2<T>, g: &ConvGeom, batch: usize) -> Array2<T> {
    let (ihw, ohw) = (g.in_hw(), g.out_hw());
    let mut x = Array2::<T>::zeros((g.in_c, batch * ihw));
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().unwrap();
    let xs = x.as_slice_mut().unwrap();
    let ncols = batch * ohw;
    for c in 0..g.in_c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cs[(c * 9 + ky * 3 + kx) * ncols..][..ncols];
                for b in 0..batch {
                    let dst = &mut xs[c * batch * ihw + b * ihw..][..ihw];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ky) as isize - 1;
                        if iy < 0 || iy as usize >= g.in_h {
                            continue;
                        }
                        let srow = &row[b * ohw + oy * g.out_w..][..g.out_w];
                        let drow = &mut dst[iy as usize * g.in_w..][..g.in_w];
                        for (ox, &v) in srow.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - 1;
                            if ix >= 0 && (ix as usize) < g.in_w {
                                drow[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::InputShape;

    #[test]
    fn mlp_param_count_closed_form() {
        let net = Network::new(&ModelSpec::mlp(784, &[512], 10)).unwrap();
        assert_eq!(net.param_count(), 784 * 512 + 512 + 512 * 10 + 10);
        assert_eq!(net.param_count(), 407_050);
        let bn = ModelSpec::mlp(20, &[8, 8], 3).with_batch_norm(&[true, false]);
        assert_eq!(
            Network::new(&bn).unwrap().param_count(),
            20 * 8 + 8 + 16 + 8 * 8 + 8 + 8 * 3 + 3
        );
    }

    #[test]
    fn conv_param_count_and_blocks() {
        let spec = ModelSpec::conv(
            ArchKind::ConvResidual,
            InputShape::image(3, 8, 8),
            &[4, 4, 4],
            10,
        )
        .with_batch_norm(&[true, false, true]);
        let net = Network::new(&spec).unwrap();
        let convs = (3 * 4 * 9 + 4) + 2 * (4 * 4 * 9 + 4);
        assert_eq!(net.param_count(), convs + 2 * 4 * 2 + 4 * 10 + 10);
        let blocks = net.param_blocks();
        let total: usize = blocks.iter().map(|b| b.len()).sum();
        assert_eq!(total, net.param_count());
        // blocks tile the flat vector in order
        let mut at = 0;
        for b in &blocks {
            assert_eq!(b.offset, at, "{}", b.name);
            at += b.len();
        }
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeom::new(2, 3, 5, 4, 2);
        let batch = 2;
        let x = Array2::from_shape_fn((2, batch * 20), |(i, j)| {
            ((i * 31 + j * 7) % 11) as f64 - 5.0
        });
        let cols = im2col(x.view(), &g, batch);
        let y = Array2::from_shape_fn(cols.raw_dim(), |(i, j)| ((i * 13 + j * 3) % 7) as f64 - 3.0);
        let lhs = (&cols * &y).sum();
        let back = col2im(y.view(), &g, batch);
        let rhs = (&x * &back).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn channel_major_layout() {
        // batch 2, channels 2, hw 3
        let x = Array2::from_shape_vec((2, 6), (0..12).map(|v| v as f32).collect()).unwrap();
        let y = to_channel_major(x.view(), 2, 3);
        assert_eq!(y.row(0).to_vec(), vec![0.0, 1.0, 2.0, 6.0, 7.0, 8.0]);
        assert_eq!(y.row(1).to_vec(), vec![3.0, 4.0, 5.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn softmax_xent_of_equal_logits_is_ln_k() {
        let logits = Array2::<f32>::zeros((4, 10));
        let (loss, _) = softmax_xent(&logits, &[0, 3, 9, 1], false);
        assert_eq!(loss, 10f32.ln());
    }
}
