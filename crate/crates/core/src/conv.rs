//! Raw 2-D convolution kernels shared by the autodiff tape.
//!
//! Correlation convention (no kernel flip); the Haar subband signs depend on
//! it. Plain blocked loops with a contiguous stride-1 fast path; out-of-range
//! taps read zero (zero padding).

use crate::error::{shape_string, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Valid output range `[lo, hi)` along one axis so that `o*stride + d` stays
/// inside `[0, n_in)`.
#[inline]
fn valid_range(d: isize, stride: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if d >= 0 { 0 } else { (-d + s - 1) / s };
    let hi = if (n_in as isize) > d {
        (n_in as isize - 1 - d) / s + 1
    } else {
        0
    };
    let lo = lo.max(0) as usize;
    let hi = hi.max(0) as usize;
    (lo.min(n_out), hi.min(n_out))
}

#[inline]
fn axpy<S: Scalar>(out: &mut [S], inp: &[S], w: S) {
    for (o, &i) in out.iter_mut().zip(inp) {
        *o = *o + w * i;
    }
}

#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

pub fn conv2d_output_shape(
    input: &[usize; 4],
    kernel: &[usize; 4],
    stride: usize,
    padding: usize,
) -> Result<[usize; 4]> {
    let [b, cin, h, w] = *input;
    let [cout, kcin, kh, kw] = *kernel;
    if cin != kcin {
        return Err(Error::ShapeMismatch {
            context: "conv2d",
            expected: format!("kernel with {cin} input channels"),
            got: format!("kernel {}", shape_string(kernel)),
        });
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::InvalidArgument(format!(
            "conv2d: padded input {}x{} smaller than kernel {kh}x{kw}",
            h + 2 * padding,
            w + 2 * padding
        )));
    }
    let h_out = (h + 2 * padding - kh) / stride + 1;
    let w_out = (w + 2 * padding - kw) / stride + 1;
    Ok([b, cout, h_out, w_out])
}

pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    let in_dims = input.dims4("conv2d input")?;
    let k_dims = kernel.dims4("conv2d kernel")?;
    let [b, cin, h, w] = in_dims;
    let [cout, _, kh, kw] = k_dims;
    let out_dims = conv2d_output_shape(&in_dims, &k_dims, stride, padding)?;
    let [_, _, h_out, w_out] = out_dims;
    if let Some(bias) = bias {
        if bias.shape() != [cout] {
            return Err(Error::ShapeMismatch {
                context: "conv2d bias",
                expected: format!("{cout}"),
                got: shape_string(bias.shape()),
            });
        }
    }

    let mut out = Tensor::zeros(&out_dims);
    let x = input.data();
    let k = kernel.data();
    let o = out.data_mut();
    let pad = padding as isize;
    for bi in 0..b {
        for co in 0..cout {
            let out_base = (bi * cout + co) * h_out * w_out;
            if let Some(bias) = bias {
                let bv = bias.data()[co];
                for v in &mut o[out_base..out_base + h_out * w_out] {
                    *v = bv;
                }
            }
            for ci in 0..cin {
                let in_base = (bi * cin + ci) * h * w;
                let k_base = (co * cin + ci) * kh * kw;
                for ky in 0..kh {
                    let dy = ky as isize - pad;
                    for kx in 0..kw {
                        let wv = k[k_base + ky * kw + kx];
                        let dx = kx as isize - pad;
                        let (lo, hi) = valid_range(dx, stride, w, w_out);
                        if lo >= hi {
                            continue;
                        }
                        for oy in 0..h_out {
                            let iy = oy as isize * stride as isize + dy;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let orow = out_base + oy * w_out;
                            let irow = in_base + iy as usize * w;
                            if stride == 1 {
                                let ix0 = (lo as isize + dx) as usize;
                                axpy(
                                    &mut o[orow + lo..orow + hi],
                                    &x[irow + ix0..irow + ix0 + (hi - lo)],
                                    wv,
                                );
                            } else {
                                for ox in lo..hi {
                                    let ix = (ox as isize * stride as isize + dx) as usize;
                                    o[orow + ox] = o[orow + ox] + wv * x[irow + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`conv2d`] w.r.t. its input: scatters the upstream gradient
/// back through the same taps.
pub fn conv2d_grad_input<S: Scalar>(
    grad: &Tensor<S>,
    kernel: &Tensor<S>,
    stride: usize,
    padding: usize,
    input_shape: &[usize; 4],
) -> Result<Tensor<S>> {
    let [b, cin, h, w] = *input_shape;
    let [cout, _, kh, kw] = kernel.dims4("conv2d kernel")?;
    let [_, _, h_out, w_out] = grad.dims4("conv2d upstream grad")?;

    let mut din = Tensor::zeros(input_shape);
    let g = grad.data();
    let k = kernel.data();
    let d = din.data_mut();
    let pad = padding as isize;
    for bi in 0..b {
        for co in 0..cout {
            let g_base = (bi * cout + co) * h_out * w_out;
            for ci in 0..cin {
                let in_base = (bi * cin + ci) * h * w;
                let k_base = (co * cin + ci) * kh * kw;
                for ky in 0..kh {
                    let dy = ky as isize - pad;
                    for kx in 0..kw {
                        let wv = k[k_base + ky * kw + kx];
                        let dx = kx as isize - pad;
                        let (lo, hi) = valid_range(dx, stride, w, w_out);
                        if lo >= hi {
                            continue;
                        }
                        for oy in 0..h_out {
                            let iy = oy as isize * stride as isize + dy;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let grow = g_base + oy * w_out;
                            let irow = in_base + iy as usize * w;
                            if stride == 1 {
                                let ix0 = (lo as isize + dx) as usize;
                                axpy(
                                    &mut d[irow + ix0..irow + ix0 + (hi - lo)],
                                    &g[grow + lo..grow + hi],
                                    wv,
                                );
                            } else {
                                for ox in lo..hi {
                                    let ix = (ox as isize * stride as isize + dx) as usize;
                                    d[irow + ix] = d[irow + ix] + wv * g[grow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(din)
}

/// Adjoint of [`conv2d`] w.r.t. the kernel.
pub fn conv2d_grad_kernel<S: Scalar>(
    grad: &Tensor<S>,
    input: &Tensor<S>,
    stride: usize,
    padding: usize,
    kernel_shape: &[usize; 4],
) -> Result<Tensor<S>> {
    let [b, cin, h, w] = input.dims4("conv2d input")?;
    let [cout, _, kh, kw] = *kernel_shape;
    let [_, _, h_out, w_out] = grad.dims4("conv2d upstream grad")?;

    let mut dk = Tensor::zeros(kernel_shape);
    let g = grad.data();
    let x = input.data();
    let d = dk.data_mut();
    let pad = padding as isize;
    for bi in 0..b {
        for co in 0..cout {
            let g_base = (bi * cout + co) * h_out * w_out;
            for ci in 0..cin {
                let in_base = (bi * cin + ci) * h * w;
                let k_base = (co * cin + ci) * kh * kw;
                for ky in 0..kh {
                    let dy = ky as isize - pad;
                    for kx in 0..kw {
                        let dx = kx as isize - pad;
                        let (lo, hi) = valid_range(dx, stride, w, w_out);
                        if lo >= hi {
                            continue;
                        }
                        let mut acc = S::zero();
                        for oy in 0..h_out {
                            let iy = oy as isize * stride as isize + dy;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let grow = g_base + oy * w_out;
                            let irow = in_base + iy as usize * w;
                            if stride == 1 {
                                let ix0 = (lo as isize + dx) as usize;
                                acc = acc
                                    + dot(
                                        &g[grow + lo..grow + hi],
                                        &x[irow + ix0..irow + ix0 + (hi - lo)],
                                    );
                            } else {
                                for ox in lo..hi {
                                    let ix = (ox as isize * stride as isize + dx) as usize;
                                    acc = acc + g[grow + ox] * x[irow + ix];
                                }
                            }
                        }
                        d[k_base + ky * kw + kx] = d[k_base + ky * kw + kx] + acc;
                    }
                }
            }
        }
    }
    Ok(dk)
}

/// Adjoint of [`conv2d`] w.r.t. the bias: per-channel sum of the upstream grad.
pub fn conv2d_grad_bias<S: Scalar>(grad: &Tensor<S>) -> Result<Tensor<S>> {
    let [b, cout, h_out, w_out] = grad.dims4("conv2d upstream grad")?;
    let mut db = Tensor::zeros(&[cout]);
    let g = grad.data();
    let d = db.data_mut();
    for bi in 0..b {
        for co in 0..cout {
            let base = (bi * cout + co) * h_out * w_out;
            let mut acc = S::zero();
            for &v in &g[base..base + h_out * w_out] {
                acc = acc + v;
            }
            d[co] = d[co] + acc;
        }
    }
    Ok(db)
}

pub fn conv_transpose2d_output_shape(
    input: &[usize; 4],
    kernel: &[usize; 4],
    stride: usize,
) -> Result<[usize; 4]> {
    let [b, cin, h, w] = *input;
    let [kcin, cout, kh, kw] = *kernel;
    if cin != kcin {
        return Err(Error::ShapeMismatch {
            context: "transposed_conv2d",
            expected: format!("kernel with {cin} input channels"),
            got: format!("kernel {}", shape_string(kernel)),
        });
    }
    Ok([b, cout, (h - 1) * stride + kh, (w - 1) * stride + kw])
}

/// Transposed convolution: the exact vector-space transpose of [`conv2d`]
/// with padding 0 and the same kernel storage read as `[Cin,Cout,kh,kw]`.
pub fn conv_transpose2d<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    stride: usize,
) -> Result<Tensor<S>> {
    let in_dims = input.dims4("transposed_conv2d input")?;
    let k_dims = kernel.dims4("transposed_conv2d kernel")?;
    let out_dims = conv_transpose2d_output_shape(&in_dims, &k_dims, stride)?;
    let [b, cin, h, w] = in_dims;
    let [_, cout, kh, kw] = k_dims;
    let [_, _, h_out, w_out] = out_dims;

    let mut out = Tensor::zeros(&out_dims);
    let x = input.data();
    let k = kernel.data();
    let o = out.data_mut();
    for bi in 0..b {
        for ci in 0..cin {
            let in_base = (bi * cin + ci) * h * w;
            for co in 0..cout {
                let out_base = (bi * cout + co) * h_out * w_out;
                let k_base = (ci * cout + co) * kh * kw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = k[k_base + ky * kw + kx];
                        for iy in 0..h {
                            let oy = iy * stride + ky;
                            let orow = out_base + oy * w_out + kx;
                            let irow = in_base + iy * w;
                            if stride == 1 {
                                axpy(&mut o[orow..orow + w], &x[irow..irow + w], wv);
                            } else {
                                for ix in 0..w {
                                    let oi = orow + ix * stride;
                                    o[oi] = o[oi] + wv * x[irow + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`conv_transpose2d`] w.r.t. its input (a stride-`s` correlation
/// of the upstream gradient with the kernel).
pub fn conv_transpose2d_grad_input<S: Scalar>(
    grad: &Tensor<S>,
    kernel: &Tensor<S>,
    stride: usize,
    input_shape: &[usize; 4],
) -> Result<Tensor<S>> {
    let [b, cin, h, w] = *input_shape;
    let [_, cout, kh, kw] = kernel.dims4("transposed_conv2d kernel")?;
    let [_, _, _, w_out] = grad.dims4("transposed_conv2d upstream grad")?;

    let mut din = Tensor::zeros(input_shape);
    let g = grad.data();
    let k = kernel.data();
    let d = din.data_mut();
    let h_out = grad.shape()[2];
    let _ = h_out;
    for bi in 0..b {
        for ci in 0..cin {
            let in_base = (bi * cin + ci) * h * w;
            for co in 0..cout {
                let g_base = (bi * cout + co) * grad.shape()[2] * w_out;
                let k_base = (ci * cout + co) * kh * kw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = k[k_base + ky * kw + kx];
                        for iy in 0..h {
                            let oy = iy * stride + ky;
                            let grow = g_base + oy * w_out + kx;
                            let irow = in_base + iy * w;
                            if stride == 1 {
                                axpy(&mut d[irow..irow + w], &g[grow..grow + w], wv);
                            } else {
                                for ix in 0..w {
                                    d[irow + ix] = d[irow + ix] + wv * g[grow + ix * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(din)
}

/// Adjoint of [`conv_transpose2d`] w.r.t. the kernel.
pub fn conv_transpose2d_grad_kernel<S: Scalar>(
    grad: &Tensor<S>,
    input: &Tensor<S>,
    stride: usize,
    kernel_shape: &[usize; 4],
) -> Result<Tensor<S>> {
    let [b, cin, h, w] = input.dims4("transposed_conv2d input")?;
    let [_, cout, kh, kw] = *kernel_shape;
    let [_, _, _, w_out] = grad.dims4("transposed_conv2d upstream grad")?;

    let mut dk = Tensor::zeros(kernel_shape);
    let g = grad.data();
    let x = input.data();
    let d = dk.data_mut();
    for bi in 0..b {
        for ci in 0..cin {
            let in_base = (bi * cin + ci) * h * w;
            for co in 0..cout {
                let g_base = (bi * cout + co) * grad.shape()[2] * w_out;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = S::zero();
                        for iy in 0..h {
                            let oy = iy * stride + ky;
                            let grow = g_base + oy * w_out + kx;
                            let irow = in_base + iy * w;
                            if stride == 1 {
                                acc = acc + dot(&g[grow..grow + w], &x[irow..irow + w]);
                            } else {
                                for ix in 0..w {
                                    acc = acc + g[grow + ix * stride] * x[irow + ix];
                                }
                            }
                        }
                        let ki = (ci * cout + co) * kh * kw + ky * kw + kx;
                        d[ki] = d[ki] + acc;
                    }
                }
            }
        }
    }
    Ok(dk)
}
