//! IDX image and label files (unsigned-byte variants only).

use std::fs;
use std::path::Path;

use ablate_core::{Dataset, Tensor};

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn header(bytes: &[u8], what: &str, magic: u32, dims: usize) -> Result<Vec<usize>> {
    let need = 4 * (1 + dims);
    if bytes.len() < need {
        return Err(Error::Format(format!("{} file truncated inside header", what)));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    if word(0) != magic {
        return Err(Error::Format(format!("{} file has magic {:#010x}, expected {:#010x}", what, word(0), magic)));
    }
    Ok((1..=dims).map(|i| word(i) as usize).collect())
}

/// Parses an image/label pair. Pixels are scaled to `[0, 1]`; the class
/// count is one more than the largest label.
pub fn parse(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let dims = header(images, "image", IMAGE_MAGIC, 3)?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    let label_count = header(labels, "label", LABEL_MAGIC, 1)?[0];
    if n != label_count {
        return Err(Error::Format(format!("{} images but {} labels", n, label_count)));
    }
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::Format(format!("empty image set {}x{}x{}", n, h, w)));
    }
    let pixels = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
    let body = &images[16..];
    if body.len() != pixels {
        return Err(Error::Format(format!("image file holds {} pixel bytes, header claims {}", body.len(), pixels)));
    }
    let label_body = &labels[8..];
    if label_body.len() != n {
        return Err(Error::Format(format!("label file holds {} bytes, header claims {}", label_body.len(), n)));
    }
    let data = body.iter().map(|&b| b as f32 / 255.0).collect();
    let images = Tensor::new(vec![n, 1, h, w], data)?;
    let labels: Vec<usize> = label_body.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1).max(2);
    Ok(Dataset::new(images, labels, classes)?)
}

pub fn load(images: &Path, labels: &Path) -> Result<Dataset> {
    let ib = fs::read(images).map_err(|e| Error::read(images, e))?;
    let lb = fs::read(labels).map_err(|e| Error::read(labels, e))?;
    parse(&ib, &lb)
}

/// Encodes a single-channel dataset, quantizing pixels by `round(x·255)`
/// after clamping to `[0, 1]`.
pub fn encode(dataset: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let [c, h, w] = dataset.image_shape();
    if c != 1 {
        return Err(Error::Format(format!("IDX holds single-channel images, dataset has {} channels", c)));
    }
    if let Some(&l) = dataset.labels().iter().find(|&&l| l > 255) {
        return Err(Error::Format(format!("label {} does not fit in a byte", l)));
    }
    let n = dataset.len();
    let mut images = Vec::with_capacity(16 + n * h * w);
    for v in [IMAGE_MAGIC, n as u32, h as u32, w as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend(dataset.images().data().iter().map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut labels = Vec::with_capacity(8 + n);
    for v in [LABEL_MAGIC, n as u32] {
        labels.extend_from_slice(&v.to_be_bytes());
    }
    labels.extend(dataset.labels().iter().map(|&l| l as u8));
    Ok((images, labels))
}

pub fn save(dataset: &Dataset, images: &Path, labels: &Path) -> Result<()> {
    let (ib, lb) = encode(dataset)?;
    fs::write(images, ib).map_err(|e| Error::write(images, e))?;
    fs::write(labels, lb).map_err(|e| Error::write(labels, e))
}
