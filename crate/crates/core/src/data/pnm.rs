//! Plain-text PGM (P2) / PPM (P3) export of synthesized patterns with a JSON
//! sidecar holding the min-max scaling constants.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSidecar {
    pub min: f64,
    pub max: f64,
}

pub fn sidecar_path(image: &Path) -> PathBuf {
    image.with_extension("json")
}

/// Quantize a (C,H,W) pattern to 0–255. A constant pattern renders as 128.
pub fn quantize(pattern: &Tensor) -> (Vec<u8>, ScaleSidecar) {
    let (min, max) = pattern
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));
    let bytes = if max > min {
        pattern.data().iter().map(|&v| (((v as f64 - min) / (max - min)) * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    } else {
        vec![128; pattern.len()]
    };
    (bytes, ScaleSidecar { min, max })
}

/// Write a 1-channel pattern as P2 or a 3-channel pattern as P3, plus
/// `<stem>.json` with `{"min": .., "max": ..}`.
pub fn write_pattern_image(pattern: &Tensor, path: &Path) -> Result<()> {
    let shape = pattern.shape();
    let (c, h, w) = match shape {
        [c, h, w] => (*c, *h, *w),
        [1, c, h, w] => (*c, *h, *w),
        _ => return Err(Error::Shape(format!("pattern must be (C,H,W), got {shape:?}"))),
    };
    if c != 1 && c != 3 {
        return Err(Error::Shape(format!("pattern images need 1 or 3 channels, got {c}")));
    }
    if !pattern.all_finite() {
        return Err(Error::Shape("pattern has non-finite values".into()));
    }
    let (bytes, scale) = quantize(pattern);
    let mut text = String::new();
    let _ = writeln!(text, "{}\n{w} {h}\n255", if c == 1 { "P2" } else { "P3" });
    for y in 0..h {
        let mut row = Vec::with_capacity(w * c);
        for x in 0..w {
            for ch in 0..c {
                row.push(bytes[(ch * h + y) * w + x].to_string());
            }
        }
        let _ = writeln!(text, "{}", row.join(" "));
    }
    write_atomic(path, text.as_bytes())?;
    write_atomic(&sidecar_path(path), serde_json::to_string(&scale)?.as_bytes())
}

/// Parse a P2/P3 image and undo the scaling recorded in its sidecar.
pub fn read_pattern_image(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tokens = text.split_whitespace();
    let channels = match tokens.next() {
        Some("P2") => 1,
        Some("P3") => 3,
        _ => return Err(Error::format(path, "not a plain PGM/PPM")),
    };
    let mut next = || -> Result<usize> {
        tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::format(path, "truncated image"))
    };
    let (w, h, maxval) = (next()?, next()?, next()?);
    if maxval != 255 {
        return Err(Error::format(path, format!("unsupported maxval {maxval}")));
    }
    let mut samples = vec![0usize; w * h * channels];
    for s in samples.iter_mut() {
        *s = next()?;
    }
    let side = sidecar_path(path);
    let scale: ScaleSidecar =
        serde_json::from_str(&std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?)?;
    let mut out = Tensor::zeros(&[channels, h, w]);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..channels {
                let q = samples[(y * w + x) * channels + ch] as f64;
                let v = if scale.max > scale.min { scale.min + q / 255.0 * (scale.max - scale.min) } else { scale.min };
                out.data_mut()[(ch * h + y) * w + x] = v as Scalar;
            }
        }
    }
    Ok(out)
}
