//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 1024 red, 1024 green and 1024 blue pixel bytes.

use std::path::Path;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const RECORD: usize = 1 + 3 * 32 * 32;

pub fn load_cifar10<P: AsRef<Path>>(batches: &[P]) -> Result<LabeledDataset> {
    if batches.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut pixels: Vec<Scalar> = Vec::new();
    let mut labels = Vec::new();
    for p in batches {
        let path = p.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.is_empty() || bytes.len() % RECORD != 0 {
            return Err(Error::format(
                path,
                format!("size {} is not a multiple of the {RECORD}-byte record", bytes.len()),
            ));
        }
        for rec in bytes.chunks_exact(RECORD) {
            if rec[0] >= 10 {
                return Err(Error::format(path, format!("label {} out of range", rec[0])));
            }
            labels.push(rec[0] as usize);
            pixels.extend(rec[1..].iter().map(|&b| b as Scalar / 255.0));
        }
    }
    let n = labels.len();
    let split = batches[0].as_ref().file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    LabeledDataset::new(Tensor::new(vec![n, 3, 32, 32], pixels)?, labels, 10, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data_batch_1.bin");
        let mut bytes = Vec::new();
        for r in 0..3u8 {
            bytes.push(r);
            bytes.extend((0..3072).map(|i| ((i + r as usize) % 256) as u8));
        }
        std::fs::write(&path, &bytes).unwrap();
        let d = load_cifar10(&[&path]).unwrap();
        assert_eq!(d.images.shape(), &[3, 3, 32, 32]);
        assert_eq!(d.labels, vec![0, 1, 2]);
        assert_eq!(d.images.at4(0, 0, 0, 0), bytes[1] as Scalar / 255.0);
        // green plane starts 1024 bytes into the record
        assert_eq!(d.images.at4(1, 1, 0, 0), bytes[RECORD + 1 + 1024] as Scalar / 255.0);

        std::fs::write(&path, &bytes[..RECORD + 5]).unwrap();
        assert!(matches!(load_cifar10(&[&path]), Err(Error::Format { .. })));
    }
}
