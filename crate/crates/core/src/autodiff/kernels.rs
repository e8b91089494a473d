//! Dense loops behind the matmul and convolution primitives.

use super::{Tensor, TensorError};

pub(crate) fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose(a: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Self, TensorError> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        };
        if x.rank() != 3 || w.rank() != 4 || stride == 0 {
            return Err(mismatch());
        }
        let (in_c, in_h, in_w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (out_c, wc, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        if wc != in_c || kh != kw || in_h + 2 * pad < kh || in_w + 2 * pad < kw {
            return Err(mismatch());
        }
        Ok(Self {
            in_c,
            in_h,
            in_w,
            out_c,
            out_h: (in_h + 2 * pad - kh) / stride + 1,
            out_w: (in_w + 2 * pad - kw) / stride + 1,
            k: kh,
            stride,
            pad,
        })
    }

    /// Output-column range `[lo, hi)` whose input column `ox*stride + kx - pad`
    /// lands inside the image.
    fn valid_range(&self, kx: usize, out_len: usize, in_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kx as isize - self.pad as isize;
        // ox*s + off >= 0  and  ox*s + off <= in_len - 1
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi_incl = (in_len as isize - 1 - off).div_euclid(s);
        let hi = (hi_incl + 1).clamp(0, out_len as isize);
        (lo.min(out_len as isize) as usize, hi.max(lo) as usize)
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f32], w: &[f32], bias: Option<&[f32]>) -> Vec<f32> {
    let plane = g.out_h * g.out_w;
    let mut out = vec![0.0f32; g.out_c * plane];
    let ranges: Vec<_> = (0..g.k)
        .map(|kk| {
            (
                g.valid_range(kk, g.out_h, g.in_h),
                g.valid_range(kk, g.out_w, g.in_w),
            )
        })
        .collect();
    for o in 0..g.out_c {
        let dst = &mut out[o * plane..(o + 1) * plane];
        if let Some(b) = bias {
            dst.iter_mut().for_each(|v| *v = b[o]);
        }
        for c in 0..g.in_c {
            let src = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
            for ky in 0..g.k {
                let (ylo, yhi) = ranges[ky].0;
                for kx in 0..g.k {
                    let wv = w[((o * g.in_c + c) * g.k + ky) * g.k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (xlo, xhi) = ranges[kx].1;
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ky - g.pad;
                        let srow = &src[iy * g.in_w..(iy + 1) * g.in_w];
                        let drow = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                        if g.stride == 1 {
                            let ix0 = xlo + kx - g.pad;
                            for (d, s) in
                                drow[xlo..xhi].iter_mut().zip(&srow[ix0..ix0 + (xhi - xlo)])
                            {
                                *d += wv * s;
                            }
                        } else {
                            for ox in xlo..xhi {
                                drow[ox] += wv * srow[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns (dx, dw, db).
#[allow(clippy::needless_range_loop)]
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f32],
    w: &[f32],
    grad: &[f32],
    want_x: bool,
    want_w: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>, Vec<f32>) {
    let plane = g.out_h * g.out_w;
    let mut dx = want_x.then(|| vec![0.0f32; g.in_c * g.in_h * g.in_w]);
    let mut dw = want_w.then(|| vec![0.0f32; w.len()]);
    let db: Vec<f32> = (0..g.out_c)
        .map(|o| {
            grad[o * plane..(o + 1) * plane]
                .iter()
                .map(|&v| f64::from(v))
                .sum::<f64>() as f32
        })
        .collect();
    let ranges: Vec<_> = (0..g.k)
        .map(|kk| {
            (
                g.valid_range(kk, g.out_h, g.in_h),
                g.valid_range(kk, g.out_w, g.in_w),
            )
        })
        .collect();
    for o in 0..g.out_c {
        let gplane = &grad[o * plane..(o + 1) * plane];
        for c in 0..g.in_c {
            let base = c * g.in_h * g.in_w;
            for ky in 0..g.k {
                let (ylo, yhi) = ranges[ky].0;
                for kx in 0..g.k {
                    let widx = ((o * g.in_c + c) * g.k + ky) * g.k + kx;
                    let wv = w[widx];
                    let (xlo, xhi) = ranges[kx].1;
                    let mut acc = 0.0f32;
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &gplane[oy * g.out_w..(oy + 1) * g.out_w];
                        let xrow = base + iy * g.in_w;
                        for ox in xlo..xhi {
                            let ix = ox * g.stride + kx - g.pad;
                            let gv = grow[ox];
                            if let Some(dx) = dx.as_mut() {
                                dx[xrow + ix] += wv * gv;
                            }
                            acc += gv * x[xrow + ix];
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct definition with explicit bounds checks.
    fn conv_naive(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Vec<f32> {
        let g = ConvGeom::new(x, w, stride, pad).unwrap();
        let mut out = vec![0.0; g.out_c * g.out_h * g.out_w];
        for o in 0..g.out_c {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut s = 0.0;
                    for c in 0..g.in_c {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0
                                    || ix < 0
                                    || iy >= g.in_h as isize
                                    || ix >= g.in_w as isize
                                {
                                    continue;
                                }
                                s += x.data()[(c * g.in_h + iy as usize) * g.in_w + ix as usize]
                                    * w.data()[((o * g.in_c + c) * g.k + ky) * g.k + kx];
                            }
                        }
                    }
                    out[(o * g.out_h + oy) * g.out_w + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_definition() {
        for &(h, w_, k, stride, pad) in &[
            (5, 7, 3, 1, 1),
            (8, 8, 3, 2, 1),
            (6, 5, 1, 1, 0),
            (7, 7, 3, 2, 0),
        ] {
            let x = Tensor::from_fn([2, h, w_], |i| ((i * 37 % 11) as f32 - 5.0) * 0.1);
            let w = Tensor::from_fn([3, 2, k, k], |i| ((i * 13 % 7) as f32 - 3.0) * 0.2);
            let g = ConvGeom::new(&x, &w, stride, pad).unwrap();
            let fast = conv2d_forward(&g, x.data(), w.data(), None);
            let slow = conv_naive(&x, &w, stride, pad);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-5, "{a} vs {b}");
            }
        }
    }
}
