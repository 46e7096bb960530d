use serde::{Deserialize, Serialize};

use super::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    /// Per-channel standardization, `(x - mean) / std`.
    Center,
    /// Per-channel min-max scaling to [0, 1].
    UnitRange,
}

impl NormKind {
    pub fn label(self) -> &'static str {
        match self {
            NormKind::Center => "center",
            NormKind::UnitRange => "unit-range",
        }
    }
}

/// `(x - offset) / scale` for one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelAffine {
    pub offset: f32,
    pub scale: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationScheme {
    pub kind: NormKind,
    pub channels: Vec<ChannelAffine>,
}

/// Fits per-channel statistics on training data. A constant channel gets
/// scale 1 (mean shift only under `Center`).
pub fn fit_normalizer(train: &Dataset, kind: NormKind) -> NormalizationScheme {
    let shape = train.info.shape;
    let hw = shape.height * shape.width;
    let channels = (0..shape.channels)
        .map(|c| {
            let block = train.inputs.slice(ndarray::s![.., c * hw..(c + 1) * hw]);
            match kind {
                NormKind::Center => {
                    let n = block.len() as f64;
                    let mean = block.iter().map(|&v| v as f64).sum::<f64>() / n;
                    let var = block
                        .iter()
                        .map(|&v| (v as f64 - mean).powi(2))
                        .sum::<f64>()
                        / n;
                    let std = var.sqrt() as f32;
                    ChannelAffine {
                        offset: mean as f32,
                        scale: if std > 0.0 { std } else { 1.0 },
                    }
                }
                NormKind::UnitRange => {
                    let lo = block.iter().copied().fold(f32::INFINITY, f32::min);
                    let hi = block.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                    let range = hi - lo;
                    ChannelAffine {
                        offset: lo,
                        scale: if range > 0.0 { range } else { 1.0 },
                    }
                }
            }
        })
        .collect();
    NormalizationScheme { kind, channels }
}

/// Applies training statistics to any split. Unit-range output is clamped to
/// [0, 1] so held-out values beyond the training range stay in bounds.
pub fn apply_normalizer(scheme: &NormalizationScheme, data: &Dataset) -> Dataset {
    let shape = data.info.shape;
    let hw = shape.height * shape.width;
    let mut out = data.clone();
    for (c, aff) in scheme.channels.iter().enumerate() {
        let mut block = out.inputs.slice_mut(ndarray::s![.., c * hw..(c + 1) * hw]);
        match scheme.kind {
            NormKind::Center => block.mapv_inplace(|v| (v - aff.offset) / aff.scale),
            NormKind::UnitRange => {
                block.mapv_inplace(|v| ((v - aff.offset) / aff.scale).clamp(0.0, 1.0))
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::InputShape;
    use ndarray::Array2;

    fn bytes_dataset() -> Dataset {
        let x = Array2::from_shape_fn((6, 2 * 4), |(i, j)| ((i * 37 + j * 101) % 256) as f32);
        let mut x = x;
        x[[0, 0]] = 0.0;
        x[[1, 1]] = 255.0;
        x[[2, 4]] = 0.0;
        x[[3, 5]] = 255.0;
        Dataset::new(
            "t",
            InputShape::image(2, 2, 2),
            2,
            x,
            vec![0, 1, 0, 1, 0, 1],
        )
        .unwrap()
    }

    #[test]
    fn unit_range_maps_bytes_to_value_over_255() {
        let ds = bytes_dataset();
        let s = fit_normalizer(&ds, NormKind::UnitRange);
        let out = apply_normalizer(&s, &ds);
        for (o, i) in out.inputs.iter().zip(ds.inputs.iter()) {
            assert_eq!(o.to_bits(), (i / 255.0).to_bits());
        }
        // idempotent: refitting on normalized data changes nothing
        let again = apply_normalizer(&fit_normalizer(&out, NormKind::UnitRange), &out);
        assert_eq!(again.inputs, out.inputs);
    }

    #[test]
    fn centering_zeroes_channel_means() {
        let ds = bytes_dataset();
        let out = apply_normalizer(&fit_normalizer(&ds, NormKind::Center), &ds);
        for c in 0..2 {
            let block = out.inputs.slice(ndarray::s![.., c * 4..(c + 1) * 4]);
            let mean = block.iter().map(|&v| v as f64).sum::<f64>() / block.len() as f64;
            assert!(mean.abs() < 1e-6, "channel {c} mean {mean}");
        }
    }

    #[test]
    fn constant_channel_is_only_shifted() {
        let x = Array2::from_elem((3, 2), 7.0f32);
        let ds = Dataset::new("c", InputShape::image(2, 1, 1), 1, x, vec![0, 0, 0]).unwrap();
        let s = fit_normalizer(&ds, NormKind::Center);
        assert_eq!(
            s.channels[0],
            ChannelAffine {
                offset: 7.0,
                scale: 1.0
            }
        );
        assert!(apply_normalizer(&s, &ds).inputs.iter().all(|&v| v == 0.0));
    }
}
