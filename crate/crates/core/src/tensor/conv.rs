//! 2-D cross-correlation lowered to GEMM through a per-image im2col buffer.
//!
//! Weights are `[Cout, Cin, k, k]`; no bias. The column buffer of one image
//! is `[Cin*k*k, Ho*Wo]`, so the forward product is `W[Cout, K] x cols[K, P]`.

use rayon::prelude::*;

use super::{gemm, Element, MatRef, Tensor};
use crate::error::{Error, Result};

/// `floor((extent + 2*pad - k) / stride) + 1`, or `None` if the kernel does not fit.
pub fn conv_output_extent(extent: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || extent + 2 * pad < k {
        return None;
    }
    Some((extent + 2 * pad - k) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }
}

fn geometry<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, Geometry)> {
    let (b, cin, h, w) = input.dims4()?;
    let (cout, wcin, kh, kw) = weights.dims4()?;
    if wcin != cin {
        return Err(Error::mismatch("conv2d channels", input.shape(), weights.shape()));
    }
    if kh != kw {
        return Err(Error::shape(weights.shape(), "kernel must be square"));
    }
    let out = |extent| {
        conv_output_extent(extent, kh, stride, pad).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "kernel {kh} with stride {stride} and pad {pad} does not fit input {:?}",
                input.shape()
            ))
        })
    };
    let (ho, wo) = (out(h)?, out(w)?);
    Ok((
        b,
        cout,
        Geometry {
            cin,
            h,
            w,
            k: kh,
            stride,
            pad,
            ho,
            wo,
        },
    ))
}

/// Output columns `[lo, hi)` whose input column `ox*stride + kj - pad` lies inside the image.
#[inline]
fn valid_columns(g: &Geometry, kj: usize) -> (usize, usize) {
    let lo = if g.pad > kj {
        (g.pad - kj).div_ceil(g.stride)
    } else {
        0
    };
    let hi = if g.w + g.pad > kj {
        ((g.w + g.pad - kj - 1) / g.stride + 1).min(g.wo)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn im2col<T: Element>(image: &[T], g: &Geometry, cols: &mut [T]) {
    let p = g.positions();
    for c in 0..g.cin {
        let plane = &image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_columns(g, kj);
                for oy in 0..g.ho {
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out_row[..lo].fill(T::zero());
                    out_row[hi..].fill(T::zero());
                    if lo < hi {
                        let start = lo * g.stride + kj - g.pad;
                        if g.stride == 1 {
                            out_row[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        } else {
                            for (slot, &v) in out_row[lo..hi]
                                .iter_mut()
                                .zip(src[start..].iter().step_by(g.stride))
                            {
                                *slot = v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add of a column buffer back onto an image (adjoint of [`im2col`]).
fn col2im<T: Element>(cols: &[T], g: &Geometry, image: &mut [T]) {
    let p = g.positions();
    image.fill(T::zero());
    for c in 0..g.cin {
        let plane = &mut image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_columns(g, kj);
                if lo >= hi {
                    continue;
                }
                let start = lo * g.stride + kj - g.pad;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let src_row = &src[oy * g.wo + lo..oy * g.wo + hi];
                    if g.stride == 1 {
                        for (d, &v) in dst[start..start + hi - lo].iter_mut().zip(src_row) {
                            *d = *d + v;
                        }
                    } else {
                        for (d, &v) in dst[start..].iter_mut().step_by(g.stride).zip(src_row) {
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input [B, Cin, H, W]` with `weights [Cout, Cin, k, k]`.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (b, cout, g) = geometry(input, weights, stride, pad)?;
    let (kdim, p) = (g.patch(), g.positions());
    let in_stride = g.cin * g.h * g.w;
    let wmat = MatRef::new(weights.data(), cout, kdim);
    let mut out = vec![T::zero(); b * cout * p];
    out.par_chunks_mut(cout * p)
        .enumerate()
        .for_each_init(
            || vec![T::zero(); kdim * p],
            |cols, (i, dst)| {
                im2col(&input.data()[i * in_stride..(i + 1) * in_stride], &g, cols);
                gemm(wmat, MatRef::new(cols, kdim, p), T::zero(), dst);
            },
        );
    Tensor::from_vec(&[b, cout, g.ho, g.wo], out)
}

/// Gradients of [`conv2d`]. Returns the input gradient and adds the weight
/// gradient into `grad_weights`.
pub fn conv2d_backward<T: Element>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    pad: usize,
    grad_weights: &mut Tensor<T>,
) -> Result<Tensor<T>> {
    let (b, cout, g) = geometry(input, weights, stride, pad)?;
    if grad_out.shape() != [b, cout, g.ho, g.wo] {
        return Err(Error::mismatch(
            "conv2d_backward grad_out",
            grad_out.shape(),
            &[b, cout, g.ho, g.wo],
        ));
    }
    if grad_weights.shape() != weights.shape() {
        return Err(Error::mismatch(
            "conv2d_backward grad_weights",
            grad_weights.shape(),
            weights.shape(),
        ));
    }
    let (kdim, p) = (g.patch(), g.positions());
    let in_stride = g.cin * g.h * g.w;
    let out_stride = cout * p;
    let wmat = MatRef::new(weights.data(), cout, kdim);

    // Weight gradient is reduced in batch order so the sum is reproducible.
    let mut cols = vec![T::zero(); kdim * p];
    for i in 0..b {
        im2col(&input.data()[i * in_stride..(i + 1) * in_stride], &g, &mut cols);
        let go = MatRef::new(&grad_out.data()[i * out_stride..(i + 1) * out_stride], cout, p);
        gemm(go, MatRef::new(&cols, kdim, p).t(), T::one(), grad_weights.data_mut());
    }

    let mut grad_in = vec![T::zero(); b * in_stride];
    grad_in
        .par_chunks_mut(in_stride)
        .enumerate()
        .for_each_init(
            || vec![T::zero(); kdim * p],
            |gcols, (i, dst)| {
                let go = MatRef::new(&grad_out.data()[i * out_stride..(i + 1) * out_stride], cout, p);
                gemm(wmat.t(), go, T::zero(), gcols);
                col2im(gcols, &g, dst);
            },
        );
    Tensor::from_vec(input.shape(), grad_in)
}
