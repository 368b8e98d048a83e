//! Big-endian IDX files (the MNIST distribution format).

use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn ingest_err(path: &Path, offset: u64, message: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| ingest_err(path, bytes.len() as u64, "truncated header"))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| ingest_err(path, 0, format!("cannot read: {e}")))
}

/// Loads an image/label file pair. Pixels are scaled by 1/255.
///
/// The dataset is named after the directory holding the image file, and the
/// split is inferred from the file name (`t10k*`/`test*` → test).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = read_file(ip)?;
    let labels = read_file(lp)?;

    let magic = read_u32(&images, 0, ip)?;
    if magic != IMAGES_MAGIC {
        return Err(ingest_err(ip, 0, format!("bad magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}")));
    }
    let n = read_u32(&images, 4, ip)? as usize;
    let rows = read_u32(&images, 8, ip)? as usize;
    let cols = read_u32(&images, 12, ip)? as usize;
    let width = rows * cols;
    let expected = 16 + n * width;
    if images.len() < expected {
        return Err(ingest_err(
            ip,
            images.len() as u64,
            format!("truncated: header promises {n} images of {rows}x{cols} ({expected} bytes)"),
        ));
    }

    let magic = read_u32(&labels, 0, lp)?;
    if magic != LABELS_MAGIC {
        return Err(ingest_err(lp, 0, format!("bad magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}")));
    }
    let n_labels = read_u32(&labels, 4, lp)? as usize;
    if n_labels != n {
        return Err(ingest_err(
            lp,
            4,
            format!("label count {n_labels} does not match image count {n} in {}", ip.display()),
        ));
    }
    if labels.len() < 8 + n {
        return Err(ingest_err(
            lp,
            labels.len() as u64,
            format!("truncated: header promises {n} labels"),
        ));
    }

    let label_vec: Vec<usize> = labels[8..8 + n].iter().map(|&b| b as usize).collect();
    let num_classes = label_vec.iter().max().map_or(0, |m| m + 1).max(10);
    let name = ip
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    let file = ip.file_name().map(|s| s.to_string_lossy().to_lowercase()).unwrap_or_default();
    let split = if file.starts_with("t10k") || file.starts_with("test") {
        Split::Test
    } else {
        Split::Train
    };
    let mut pixels = images;
    pixels.truncate(expected);
    pixels.drain(..16);
    Ok(Dataset::from_bytes(name, split, width, pixels, label_vec, num_classes))
}

/// Loads `train-*` and `t10k-*` pairs from a directory in the MNIST layout.
pub fn load_idx_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let d = dir.as_ref();
    let train = load_idx(d.join("train-images-idx3-ubyte"), d.join("train-labels-idx1-ubyte"))?;
    let test = load_idx(d.join("t10k-images-idx3-ubyte"), d.join("t10k-labels-idx1-ubyte"))?;
    Ok((train, test))
}
