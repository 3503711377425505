use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

pub const PAD: usize = 4;

/// Per-image transform: optional horizontal flip, then a crop of the
/// zero-padded image at offset `(dy, dx)` in `0..=2·PAD`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crop {
    pub flip: bool,
    pub dy: usize,
    pub dx: usize,
}

/// Flip with probability 0.5 and random-crop from a 4-pixel zero padding,
/// independently per image. Deterministic given `seed`.
pub fn augment(batch: &Tensor, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let crops: Vec<Crop> = (0..batch.batch())
        .map(|_| Crop { flip: rng.random_bool(0.5), dy: rng.random_range(0..=2 * PAD), dx: rng.random_range(0..=2 * PAD) })
        .collect();
    augment_with(batch, &crops)
}

pub fn augment_with(batch: &Tensor, crops: &[Crop]) -> Tensor {
    let [n, ch, h, w] = batch.dims4();
    assert_eq!(crops.len(), n);
    let mut out = Tensor::zeros(batch.shape());
    for (i, crop) in crops.iter().enumerate() {
        for c in 0..ch {
            for y in 0..h {
                // row y of the crop reads padded row y + dy, i.e. source row y + dy - PAD
                let sy = (y + crop.dy) as isize - PAD as isize;
                if sy < 0 || sy as usize >= h {
                    continue;
                }
                for x in 0..w {
                    let sx = (x + crop.dx) as isize - PAD as isize;
                    if sx < 0 || sx as usize >= w {
                        continue;
                    }
                    let src_x = if crop.flip { w - 1 - sx as usize } else { sx as usize };
                    let v = batch.at4(i, c, sy as usize, src_x);
                    out.data_mut()[((i * ch + c) * h + y) * w + x] = v;
                }
            }
        }
    }
    out
}
