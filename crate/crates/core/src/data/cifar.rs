//! CIFAR-10 binary batches: records of 1 label byte followed by 3072 pixel
//! bytes (1024 red, 1024 green, 1024 blue, row-major 32x32).

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::Dataset;
use crate::error::{LmcError, Result};
use crate::nn::InputShape;

pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;
const CIFAR_CLASSES: usize = 10;

/// Decodes one batch file into `(labels, pixels)`.
pub fn parse_cifar_records(bytes: &[u8], path: &Path) -> Result<(Vec<u8>, Vec<u8>)> {
    if bytes.is_empty() {
        return Err(LmcError::parse(path, 0, "empty file"));
    }
    let whole = bytes.len() / CIFAR_RECORD_LEN * CIFAR_RECORD_LEN;
    if whole != bytes.len() {
        return Err(LmcError::parse(
            path,
            whole as u64,
            format!(
                "trailing partial record of {} bytes (records are {CIFAR_RECORD_LEN} bytes)",
                bytes.len() - whole
            ),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD_LEN - 1));
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
        if rec[0] as usize >= CIFAR_CLASSES {
            return Err(LmcError::parse(
                path,
                (i * CIFAR_RECORD_LEN) as u64,
                format!("label {} outside [0, {CIFAR_CLASSES})", rec[0]),
            ));
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((labels, pixels))
}

pub fn encode_cifar_records(labels: &[u8], pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), labels.len() * (CIFAR_RECORD_LEN - 1));
    let mut out = Vec::with_capacity(labels.len() * CIFAR_RECORD_LEN);
    for (l, px) in labels.iter().zip(pixels.chunks_exact(CIFAR_RECORD_LEN - 1)) {
        out.push(*l);
        out.extend_from_slice(px);
    }
    out
}

/// Concatenates the records of every file, in order. Pixels are raw
/// intensities in [0, 255], channel-major per sample.
pub fn load_cifar_binary<P: AsRef<Path>>(paths: &[P], name: &str) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let (l, px) = parse_cifar_records(&fs::read(p)?, p)?;
        labels.extend(l.into_iter().map(|b| b as usize));
        pixels.extend(px.into_iter().map(|b| b as f32));
    }
    let n = labels.len();
    let inputs =
        Array2::from_shape_vec((n, CIFAR_RECORD_LEN - 1), pixels).expect("record sizes checked");
    Dataset::new(
        name,
        InputShape::image(3, 32, 32),
        CIFAR_CLASSES,
        inputs,
        labels,
    )
}

/// `(train, test)` from a `cifar-10-batches-bin` directory.
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let d = dir.as_ref();
    let train: Vec<_> = (1..=5)
        .map(|i| d.join(format!("data_batch_{i}.bin")))
        .collect();
    let train = load_cifar_binary(&train, "cifar10-train")?;
    let test = load_cifar_binary(&[d.join("test_batch.bin")], "cifar10-test")?;
    Ok((train, test))
}
