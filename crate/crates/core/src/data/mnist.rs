//! MNIST IDX reader (big-endian header, unsigned byte payload).

use std::path::Path;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, "truncated header"))
}

/// Images as (N, 1, rows, cols) scaled by 1/255.
pub fn read_idx_images(path: &Path) -> Result<Tensor> {
    let bytes = read(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(path, format!("bad image magic {magic:#010x}")));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected || n == 0 || rows == 0 || cols == 0 {
        return Err(Error::format(path, format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let data = bytes[16..].iter().map(|&b| b as Scalar / 255.0).collect();
    Tensor::new(vec![n, 1, rows, cols], data)
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(path, format!("bad label magic {magic:#010x}")));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    if bytes.len() != 8 + n {
        return Err(Error::format(path, format!("expected {} bytes, found {}", 8 + n, bytes.len())));
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

pub fn load_mnist(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let x = read_idx_images(ip)?;
    let y = read_idx_labels(lp)?;
    if x.batch() != y.len() {
        return Err(Error::format(lp, format!("{} labels for {} images", y.len(), x.batch())));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= 10) {
        return Err(Error::format(lp, format!("label {bad} out of range")));
    }
    let split = ip.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    LabeledDataset::new(x, y, 10, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pair(dir: &Path, n: usize) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("img");
        let lp = dir.join("lbl");
        let mut img = Vec::new();
        img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        img.extend_from_slice(&(n as u32).to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&3u32.to_be_bytes());
        img.extend((0..n * 6).map(|i| (i * 37 % 256) as u8));
        std::fs::write(&ip, img).unwrap();
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        lbl.extend_from_slice(&(n as u32).to_be_bytes());
        lbl.extend((0..n).map(|i| (i % 10) as u8));
        std::fs::write(&lp, lbl).unwrap();
        (ip, lp)
    }

    #[test]
    fn parses_synthetic_files() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_pair(dir.path(), 4);
        let d = load_mnist(&ip, &lp).unwrap();
        assert_eq!(d.images.shape(), &[4, 1, 2, 3]);
        assert_eq!(d.labels, vec![0, 1, 2, 3]);
        assert_eq!(d.images.data()[1], 37.0 / 255.0);
    }

    #[test]
    fn truncated_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_pair(dir.path(), 4);
        let bytes = std::fs::read(&ip).unwrap();
        std::fs::write(&ip, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_mnist(&ip, &lp), Err(Error::Format { .. })));
        // label file passed as images
        assert!(matches!(read_idx_images(&lp), Err(Error::Format { .. })));
    }
}
