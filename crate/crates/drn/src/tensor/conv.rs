//! CPU kernels behind the conv2d tape op: im2col + a small GEMM.

use super::{Scalar, Shape};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub hout: usize,
    pub wout: usize,
}

impl ConvDims {
    pub fn out_shape(&self) -> Shape {
        Shape::new(self.n, self.cout, self.hout, self.wout)
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_px(&self) -> usize {
        self.hout * self.wout
    }
}

pub(crate) fn conv_dims(
    x: Shape,
    w: Shape,
    bias: Shape,
    stride: usize,
    pad: usize,
) -> Result<ConvDims> {
    if x.c != w.c {
        return Err(Error::Dimension(format!(
            "conv2d: input channel axis ({}) does not match weight Cin axis ({})",
            x.c, w.c
        )));
    }
    if bias.len() != w.n {
        return Err(Error::Dimension(format!(
            "conv2d: bias has {} elements but weight Cout axis is {}",
            bias.len(),
            w.n
        )));
    }
    if w.h % 2 == 0 || w.w % 2 == 0 {
        return Err(Error::Dimension(format!(
            "conv2d: kernel axes must be odd, got {}x{}",
            w.h, w.w
        )));
    }
    if stride == 0 {
        return Err(Error::Contract("conv2d: stride must be positive".into()));
    }
    if x.h + 2 * pad < w.h || x.w + 2 * pad < w.w {
        return Err(Error::Dimension(format!(
            "conv2d: padded input {}x{} is smaller than kernel {}x{}",
            x.h + 2 * pad,
            x.w + 2 * pad,
            w.h,
            w.w
        )));
    }
    let hout = (x.h + 2 * pad - w.h) / stride + 1;
    let wout = (x.w + 2 * pad - w.w) / stride + 1;
    Ok(ConvDims {
        n: x.n,
        cin: x.c,
        h: x.h,
        w: x.w,
        cout: w.n,
        kh: w.h,
        kw: w.w,
        stride,
        pad,
        hout,
        wout,
    })
}

/// C[m x n] += A[m x k] * B[k x n], all row-major.
fn gemm_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// C[m x n] += A[m x l] * B[n x l]^T, all row-major (dot-product form).
fn gemm_abt_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, l: usize, n: usize) {
    debug_assert_eq!(a.len(), m * l);
    debug_assert_eq!(b.len(), n * l);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * l..(i + 1) * l];
        for j in 0..n {
            let brow = &b[j * l..(j + 1) * l];
            let mut acc = T::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            c[i * n + j] += acc;
        }
    }
}

/// Unpack one batch item into a (Cin*kH*kW) x (Hout*Wout) patch matrix.
fn im2col<T: Scalar>(x: &[T], d: &ConvDims, col: &mut [T]) {
    let px = d.out_px();
    debug_assert_eq!(col.len(), d.k() * px);
    for ci in 0..d.cin {
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = &mut col[((ci * d.kh + ki) * d.kw + kj) * px..][..px];
                let mut m = 0;
                for oh in 0..d.hout {
                    let ih = (oh * d.stride + ki) as isize - d.pad as isize;
                    if ih < 0 || ih >= d.h as isize {
                        row[m..m + d.wout].fill(T::zero());
                        m += d.wout;
                        continue;
                    }
                    let src = &plane[ih as usize * d.w..(ih as usize + 1) * d.w];
                    for ow in 0..d.wout {
                        let iw = (ow * d.stride + kj) as isize - d.pad as isize;
                        row[m] = if iw < 0 || iw >= d.w as isize {
                            T::zero()
                        } else {
                            src[iw as usize]
                        };
                        m += 1;
                    }
                }
            }
        }
    }
}

/// Scatter-add the adjoint of im2col back onto the input plane.
fn col2im_acc<T: Scalar>(col: &[T], d: &ConvDims, gx: &mut [T]) {
    let px = d.out_px();
    for ci in 0..d.cin {
        let plane = &mut gx[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = &col[((ci * d.kh + ki) * d.kw + kj) * px..][..px];
                let mut m = 0;
                for oh in 0..d.hout {
                    let ih = (oh * d.stride + ki) as isize - d.pad as isize;
                    if ih < 0 || ih >= d.h as isize {
                        m += d.wout;
                        continue;
                    }
                    let dst = &mut plane[ih as usize * d.w..(ih as usize + 1) * d.w];
                    for ow in 0..d.wout {
                        let iw = (ow * d.stride + kj) as isize - d.pad as isize;
                        if iw >= 0 && (iw as usize) < d.w {
                            dst[iw as usize] += row[m];
                        }
                        m += 1;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], w: &[T], bias: &[T], d: &ConvDims) -> Vec<T> {
    let px = d.out_px();
    let k = d.k();
    let mut out = vec![T::zero(); d.n * d.cout * px];
    let mut col = vec![T::zero(); k * px];
    for n in 0..d.n {
        im2col(&x[n * d.cin * d.h * d.w..], d, &mut col);
        let item = &mut out[n * d.cout * px..(n + 1) * d.cout * px];
        for co in 0..d.cout {
            item[co * px..(co + 1) * px].fill(bias[co]);
        }
        gemm_acc(w, &col, item, d.cout, k, px);
    }
    out
}

/// Gradients w.r.t. input, weight and bias. The input patch matrix is
/// recomputed here rather than saved by the forward pass, which keeps tape
/// memory proportional to the tensors themselves.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    g: &[T],
    d: &ConvDims,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let px = d.out_px();
    let k = d.k();
    let mut gx = vec![T::zero(); d.n * d.cin * d.h * d.w];
    let mut gw = vec![T::zero(); d.cout * k];
    let mut gb = vec![T::zero(); d.cout];
    let mut col = vec![T::zero(); k * px];
    let mut gcol = vec![T::zero(); k * px];
    for n in 0..d.n {
        let gitem = &g[n * d.cout * px..(n + 1) * d.cout * px];
        // bias: plain sum over output pixels
        for co in 0..d.cout {
            let mut acc = T::zero();
            for &v in &gitem[co * px..(co + 1) * px] {
                acc += v;
            }
            gb[co] += acc;
        }
        // weight: g . col^T
        im2col(&x[n * d.cin * d.h * d.w..], d, &mut col);
        gemm_abt_acc(gitem, &col, &mut gw, d.cout, px, k);
        // input: w^T . g, scattered back through col2im
        gcol.fill(T::zero());
        for co in 0..d.cout {
            let grow = &gitem[co * px..(co + 1) * px];
            for p in 0..k {
                let wv = w[co * k + p];
                if wv == T::zero() {
                    continue;
                }
                let dst = &mut gcol[p * px..(p + 1) * px];
                for (dv, &gv) in dst.iter_mut().zip(grow) {
                    *dv += wv * gv;
                }
            }
        }
        col2im_acc(&gcol, d, &mut gx[n * d.cin * d.h * d.w..(n + 1) * d.cin * d.h * d.w]);
    }
    (gx, gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct four-loop cross-correlation, the oracle for the GEMM path.
    pub(crate) fn conv2d_naive(
        x: &[f64],
        w: &[f64],
        bias: &[f64],
        d: &ConvDims,
    ) -> Vec<f64> {
        let mut out = vec![0.0; d.n * d.cout * d.hout * d.wout];
        for n in 0..d.n {
            for co in 0..d.cout {
                for oh in 0..d.hout {
                    for ow in 0..d.wout {
                        let mut acc = bias[co];
                        for ci in 0..d.cin {
                            for ki in 0..d.kh {
                                for kj in 0..d.kw {
                                    let ih = (oh * d.stride + ki) as isize - d.pad as isize;
                                    let iw = (ow * d.stride + kj) as isize - d.pad as isize;
                                    if ih < 0
                                        || iw < 0
                                        || ih >= d.h as isize
                                        || iw >= d.w as isize
                                    {
                                        continue;
                                    }
                                    let xi = ((n * d.cin + ci) * d.h + ih as usize) * d.w
                                        + iw as usize;
                                    let wi = ((co * d.cin + ci) * d.kh + ki) * d.kw + kj;
                                    acc += x[xi] * w[wi];
                                }
                            }
                        }
                        out[((n * d.cout + co) * d.hout + oh) * d.wout + ow] = acc;
                    }
                }
            }
        }
        out
    }

    fn dims(x: Shape, w: Shape, stride: usize, pad: usize) -> ConvDims {
        conv_dims(x, w, Shape::new(1, w.n, 1, 1), stride, pad).unwrap()
    }

    #[test]
    fn gemm_path_matches_naive_conv() {
        let mut rng_state = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for &(xs, ws, stride, pad) in &[
            (Shape::new(2, 3, 7, 9), Shape::new(4, 3, 3, 3), 1, 1),
            (Shape::new(1, 2, 8, 8), Shape::new(3, 2, 3, 3), 2, 1),
            (Shape::new(1, 1, 5, 5), Shape::new(1, 1, 5, 5), 1, 2),
            (Shape::new(2, 4, 6, 6), Shape::new(2, 4, 1, 1), 1, 0),
        ] {
            let d = dims(xs, ws, stride, pad);
            let x: Vec<f64> = (0..xs.len()).map(|_| next()).collect();
            let w: Vec<f64> = (0..ws.len()).map(|_| next()).collect();
            let b: Vec<f64> = (0..ws.n).map(|_| next()).collect();
            let fast = conv2d_forward(&x, &w, &b, &d);
            let slow = conv2d_naive(&x, &w, &b, &d);
            for (a, e) in fast.iter().zip(&slow) {
                assert!((a - e).abs() < 1e-12, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn strided_conv_uses_floor_output_dims() {
        // 4x4 input, 3x3 kernel, stride 2, pad 1 -> 2x2 output.
        let d = dims(Shape::new(1, 1, 4, 4), Shape::new(1, 1, 3, 3), 2, 1);
        assert_eq!((d.hout, d.wout), (2, 2));
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let r = conv_dims(
            Shape::new(1, 3, 8, 8),
            Shape::new(4, 2, 3, 3),
            Shape::new(1, 4, 1, 1),
            1,
            1,
        );
        let msg = format!("{}", r.unwrap_err());
        assert!(msg.contains("channel"), "{msg}");
    }

    #[test]
    fn even_kernel_is_rejected() {
        let r = conv_dims(
            Shape::new(1, 1, 8, 8),
            Shape::new(1, 1, 2, 2),
            Shape::new(1, 1, 1, 1),
            1,
            0,
        );
        assert!(r.is_err());
    }
}
