//! Per-sample numeric kernels shared by the tape and the FLOPs/reference
//! checks. All functions work on flat row-major slices.

use crate::tensor::Scalar;

/// Geometry of a 2-D convolution over one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Rows of the unrolled patch matrix.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Unroll one sample (C,H,W) into a (C·k·k, Hout·Wout) patch matrix.
pub fn im2col(x: &[Scalar], g: &ConvGeom, cols: &mut [Scalar]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let hw = oh * ow;
    let k = g.kernel;
    for c in 0..g.in_channels {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        dst[oy * ow + ox] = if iy >= 0
                            && ix >= 0
                            && (iy as usize) < g.in_h
                            && (ix as usize) < g.in_w
                        {
                            plane[iy as usize * g.in_w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add a patch-matrix gradient back onto a (C,H,W) input gradient.
pub fn col2im(cols: &[Scalar], g: &ConvGeom, dx: &mut [Scalar]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let hw = oh * ow;
    let k = g.kernel;
    for c in 0..g.in_channels {
        let plane = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy as usize >= g.in_h {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix < 0 || ix as usize >= g.in_w {
                            continue;
                        }
                        plane[iy as usize * g.in_w + ix as usize] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

/// c(m×n) = a(m×k) · b(k×n). Each output row depends only on its own row of
/// `a`, so row order never changes the arithmetic.
pub fn matmul(a: &[Scalar], b: &[Scalar], c: &mut [Scalar], m: usize, k: usize, n: usize) {
    c[..m * n].fill(0.0);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// c(m×k) = a(m×n) · b(k×n)ᵀ.
pub fn matmul_a_bt(a: &[Scalar], b: &[Scalar], c: &mut [Scalar], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            c[i * k + j] = dot(arow, brow);
        }
    }
}

/// c(m×n) = a(k×m)ᵀ · b(k×n).
pub fn matmul_at_b(a: &[Scalar], b: &[Scalar], c: &mut [Scalar], k: usize, m: usize, n: usize) {
    c[..m * n].fill(0.0);
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

pub fn dot(a: &[Scalar], b: &[Scalar]) -> Scalar {
    // Four independent lanes let the compiler vectorize without reassociating.
    let mut acc = [0.0 as Scalar; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Max-pool one (C,H,W) sample. Returns the flat argmax (within the input
/// plane) of each output; ties resolve to the lowest flat index.
pub fn maxpool(
    x: &[Scalar],
    channels: usize,
    h: usize,
    w: usize,
    size: usize,
    stride: usize,
    out: &mut [Scalar],
    argmax: &mut [u32],
) {
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    for c in 0..channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = Scalar::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for ky in 0..size {
                    for kx in 0..size {
                        let idx = (oy * stride + ky) * w + ox * stride + kx;
                        let v = plane[idx];
                        if v > best || best_idx == usize::MAX || (v == best && idx < best_idx) {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                let o = (c * oh + oy) * ow + ox;
                out[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
}

/// Whether any pooling window of the sample holds a tie for its maximum.
pub fn maxpool_has_tie(x: &[Scalar], channels: usize, h: usize, w: usize, size: usize, stride: usize) -> bool {
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    for c in 0..channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = Scalar::NEG_INFINITY;
                let mut count = 0;
                for ky in 0..size {
                    for kx in 0..size {
                        let v = plane[(oy * stride + ky) * w + ox * stride + kx];
                        if v > best {
                            best = v;
                            count = 1;
                        } else if v == best {
                            count += 1;
                        }
                    }
                }
                if count > 1 {
                    return true;
                }
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a: Vec<Scalar> = (0..6).map(|v| v as Scalar).collect(); // 2x3
        let b: Vec<Scalar> = (0..12).map(|v| (v as Scalar) * 0.5).collect(); // 3x4
        let mut c = vec![0.0; 8];
        matmul(&a, &b, &mut c, 2, 3, 4);
        assert_eq!(c, vec![10.0, 11.5, 13.0, 14.5, 28.0, 34.0, 40.0, 46.0]);

        // aᵀ stored as 3x2
        let at: Vec<Scalar> = vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0];
        let mut c2 = vec![0.0; 8];
        matmul_at_b(&at, &b, &mut c2, 3, 2, 4);
        assert_eq!(c, c2);

        // bᵀ stored as 4x3
        let mut bt = vec![0.0; 12];
        for p in 0..3 {
            for j in 0..4 {
                bt[j * 3 + p] = b[p * 4 + j];
            }
        }
        let mut c3 = vec![0.0; 8];
        matmul_a_bt(&a, &bt, &mut c3, 2, 3, 4);
        assert_eq!(c, c3);
    }

    #[test]
    fn maxpool_tie_breaks_low() {
        let x = [1.0, 1.0, 0.0, 1.0];
        let mut out = [0.0];
        let mut arg = [0u32];
        maxpool(&x, 1, 2, 2, 2, 2, &mut out, &mut arg);
        assert_eq!(out[0], 1.0);
        assert_eq!(arg[0], 0);
        assert!(maxpool_has_tie(&x, 1, 2, 2, 2, 2));
        assert!(!maxpool_has_tie(&[0.0, 2.0, 1.0, 0.5], 1, 2, 2, 2, 2));
    }

    #[test]
    fn im2col_col2im_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeom { in_channels: 2, in_h: 5, in_w: 4, kernel: 3, stride: 2, padding: 1 };
        let x: Vec<Scalar> = (0..40).map(|v| ((v * 7) % 11) as Scalar - 5.0).collect();
        let n = g.patch_len() * g.out_h() * g.out_w();
        let y: Vec<Scalar> = (0..n).map(|v| ((v * 5) % 13) as Scalar - 6.0).collect();
        let mut cols = vec![0.0; n];
        im2col(&x, &g, &mut cols);
        let mut dx = vec![0.0; 40];
        col2im(&y, &g, &mut dx);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert_eq!(lhs, rhs);
    }
}
