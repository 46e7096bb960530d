//! IDX container (MNIST): big-endian header `00 00 <type> <ndim>`, `ndim`
//! u32 dimensions, then the payload. Only the unsigned-byte type (0x08) is
//! supported.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::Dataset;
use crate::error::{LmcError, Result};
use crate::nn::InputShape;

const UBYTE: u8 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(LmcError::parse(
            path,
            bytes.len() as u64,
            "truncated header: need 4 magic bytes",
        ));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(LmcError::parse(
            path,
            0,
            format!("bad magic {:02x}{:02x}", bytes[0], bytes[1]),
        ));
    }
    if bytes[2] != UBYTE {
        return Err(LmcError::parse(
            path,
            2,
            format!("unsupported element type 0x{:02x}", bytes[2]),
        ));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(LmcError::parse(path, 3, "zero dimensions"));
    }
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(LmcError::parse(
            path,
            bytes.len() as u64,
            format!("truncated header: {ndim} dimensions need {header} bytes"),
        ));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < expected {
        return Err(LmcError::parse(
            path,
            bytes.len() as u64,
            format!(
                "truncated payload: dims {dims:?} need {expected} bytes, found {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > expected {
        return Err(LmcError::parse(
            path,
            (header + expected) as u64,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }
    Ok(IdxArray {
        dims,
        data: payload.to_vec(),
    })
}

pub fn encode_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = vec![0, 0, UBYTE, array.dims.len() as u8];
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

pub fn write_idx(path: impl AsRef<Path>, array: &IdxArray) -> Result<()> {
    fs::write(path, encode_idx(array))?;
    Ok(())
}

/// Pairs an image file (N x H x W) with a label file (N) by index. Pixels
/// are returned as raw intensities in [0, 255].
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>, name: &str) -> Result<Dataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let img = parse_idx(&fs::read(ip)?, ip)?;
    let lab = parse_idx(&fs::read(lp)?, lp)?;
    if img.dims.len() != 3 {
        return Err(LmcError::parse(
            ip,
            3,
            format!("image file must have 3 dimensions, has {}", img.dims.len()),
        ));
    }
    if lab.dims.len() != 1 {
        return Err(LmcError::parse(
            lp,
            3,
            format!("label file must have 1 dimension, has {}", lab.dims.len()),
        ));
    }
    if img.dims[0] != lab.dims[0] {
        return Err(LmcError::parse(
            lp,
            4,
            format!(
                "label count {} does not match image count {}",
                lab.dims[0], img.dims[0]
            ),
        ));
    }
    let (n, h, w) = (img.dims[0], img.dims[1], img.dims[2]);
    if n == 0 {
        return Err(LmcError::parse(ip, 4, "no images"));
    }
    let classes = *lab.data.iter().max().unwrap() as usize + 1;
    let inputs = Array2::from_shape_vec((n, h * w), img.data.iter().map(|&b| b as f32).collect())
        .expect("sizes checked by parse_idx");
    let labels = lab.data.iter().map(|&b| b as usize).collect();
    Dataset::new(name, InputShape::image(1, h, w), classes, inputs, labels)
}

/// `(train, test)` from a directory holding the four standard MNIST files.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let d = dir.as_ref();
    let train = load_idx(
        d.join("train-images-idx3-ubyte"),
        d.join("train-labels-idx1-ubyte"),
        "mnist-train",
    )?;
    let test = load_idx(
        d.join("t10k-images-idx3-ubyte"),
        d.join("t10k-labels-idx1-ubyte"),
        "mnist-test",
    )?;
    Ok((train, test))
}
