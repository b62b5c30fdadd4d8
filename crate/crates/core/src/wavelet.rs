//! Single-level 2-D Haar transform.
//!
//! The low/high pass filter pair is `L = (1/sqrt(2))[1, 1]`,
//! `H = (1/sqrt(2))[1, -1]`; the four separable 2x2 kernels applied as a
//! stride-2 correlation produce the LL/HL/LH/HH subbands. Orientation
//! convention: the row (width) filter is applied first, then the column
//! (height) filter, so HL is high-pass along width and low-pass along height.
//!
//! A `[B,C,H,W]` input maps to a subband stack `[B,4C,H/2,W/2]` whose channel
//! order is a frozen contract: index `4c+0` = LL, `4c+1` = HL, `4c+2` = LH,
//! `4c+3` = HH for source channel `c`. The inverse is the transposed
//! convolution with identical kernels; because the kernels are orthonormal
//! the reconstruction is exact and the transform preserves energy.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Subband offsets within a channel group of four.
pub const LL: usize = 0;
pub const HL: usize = 1;
pub const LH: usize = 2;
pub const HH: usize = 3;

/// A `[B,4C,H/2,W/2]` tensor holding the four Haar subbands per source
/// channel in the frozen LL/HL/LH/HH order.
pub type SubbandStack<S> = Tensor<S>;

/// The four 2x2 Haar analysis kernels in subband order, row-major.
/// `kernel[k][ky*2+kx] = colfilt[ky] * rowfilt[kx]` with colfilt/rowfilt
/// drawn from {L, H} per the orientation convention above.
pub fn haar_kernels() -> [[f64; 4]; 4] {
    let h = 0.5; // (1/sqrt(2))^2
    [
        [h, h, h, h],     // LL
        [h, -h, h, -h],   // HL: high along width
        [h, h, -h, -h],   // LH: high along height
        [h, -h, -h, h],   // HH
    ]
}

/// Forward transform: `[B,C,H,W]` -> `[B,4C,H/2,W/2]`. H and W must be even.
pub fn dwt2d<S: Scalar>(x: &Tensor<S>) -> Result<SubbandStack<S>> {
    let [b, c, h, w] = x.dims4("dwt2d")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddSpatialDims { context: "dwt2d", h, w });
    }
    let (hh, ww) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[b, 4 * c, hh, ww]);
    let half = S::from_f64(0.5);
    let src = x.data();
    let dst = out.data_mut();
    for bi in 0..b {
        for ci in 0..c {
            let in_base = (bi * c + ci) * h * w;
            let group = (bi * 4 * c + 4 * ci) * hh * ww;
            for oy in 0..hh {
                let r0 = in_base + (2 * oy) * w;
                let r1 = r0 + w;
                let orow = oy * ww;
                for ox in 0..ww {
                    let a = src[r0 + 2 * ox];
                    let bv = src[r0 + 2 * ox + 1];
                    let cv = src[r1 + 2 * ox];
                    let d = src[r1 + 2 * ox + 1];
                    let o = group + orow + ox;
                    let plane = hh * ww;
                    dst[o] = (a + bv + cv + d) * half;
                    dst[o + plane] = (a - bv + cv - d) * half;
                    dst[o + 2 * plane] = (a + bv - cv - d) * half;
                    dst[o + 3 * plane] = (a - bv - cv + d) * half;
                }
            }
        }
    }
    Ok(out)
}

/// Inverse transform: `[B,4C,H/2,W/2]` -> `[B,C,H,W]`. The channel count
/// must be divisible by 4.
pub fn idwt2d<S: Scalar>(s: &SubbandStack<S>) -> Result<Tensor<S>> {
    let [b, c4, hh, ww] = s.dims4("idwt2d")?;
    if c4 % 4 != 0 {
        return Err(Error::ChannelsNotSubbands { context: "idwt2d", channels: c4 });
    }
    let c = c4 / 4;
    let (h, w) = (2 * hh, 2 * ww);
    let mut out = Tensor::zeros(&[b, c, h, w]);
    let half = S::from_f64(0.5);
    let src = s.data();
    let dst = out.data_mut();
    for bi in 0..b {
        for ci in 0..c {
            let group = (bi * c4 + 4 * ci) * hh * ww;
            let out_base = (bi * c + ci) * h * w;
            let plane = hh * ww;
            for oy in 0..hh {
                let orow = oy * ww;
                let r0 = out_base + (2 * oy) * w;
                let r1 = r0 + w;
                for ox in 0..ww {
                    let i = group + orow + ox;
                    let ll = src[i];
                    let hl = src[i + plane];
                    let lh = src[i + 2 * plane];
                    let hv = src[i + 3 * plane];
                    dst[r0 + 2 * ox] = (ll + hl + lh + hv) * half;
                    dst[r0 + 2 * ox + 1] = (ll - hl + lh - hv) * half;
                    dst[r1 + 2 * ox] = (ll + hl - lh - hv) * half;
                    dst[r1 + 2 * ox + 1] = (ll - hl - lh + hv) * half;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv;

    /// Oracle route: apply the four fixed 2x2 kernels per source channel with
    /// a generic stride-2 convolution and interleave the results.
    fn dwt2d_via_conv(x: &Tensor<f64>) -> Tensor<f64> {
        let [b, c, h, w] = x.dims4("oracle").unwrap();
        let kernels = haar_kernels();
        let mut kdata = Vec::with_capacity(16);
        for k in &kernels {
            kdata.extend_from_slice(k);
        }
        let kernel = Tensor::<f64>::from_f64_slice(&[4, 1, 2, 2], &kdata).unwrap();
        let mut out = Tensor::zeros(&[b, 4 * c, h / 2, w / 2]);
        let plane = (h / 2) * (w / 2);
        for bi in 0..b {
            for ci in 0..c {
                let mut single = Tensor::zeros(&[1, 1, h, w]);
                let base = (bi * c + ci) * h * w;
                single.data_mut().copy_from_slice(&x.data()[base..base + h * w]);
                let y = conv::conv2d(&single, &kernel, None, 2, 0).unwrap();
                for k in 0..4 {
                    let dst = ((bi * 4 * c) + 4 * ci + k) * plane;
                    out.data_mut()[dst..dst + plane]
                        .copy_from_slice(&y.data()[k * plane..(k + 1) * plane]);
                }
            }
        }
        out
    }

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn constant_patch_has_zero_highpass() {
        let a = 0.7;
        let x = Tensor::<f64>::full(&[1, 1, 2, 2], a);
        let s = dwt2d(&x).unwrap();
        assert!((s.data()[LL] - 2.0 * a).abs() < 1e-15);
        assert_eq!(s.data()[HL], 0.0);
        assert_eq!(s.data()[LH], 0.0);
        assert_eq!(s.data()[HH], 0.0);
    }

    #[test]
    fn reference_patch_subbands() {
        let x = Tensor::<f64>::from_f64_slice(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = dwt2d(&x).unwrap();
        assert!((s.data()[LL] - 5.0).abs() < 1e-12);
        assert!((s.data()[HL] - -1.0).abs() < 1e-12);
        assert!((s.data()[LH] - -2.0).abs() < 1e-12);
        assert!((s.data()[HH] - 0.0).abs() < 1e-12);
        // energy is preserved: 1+4+9+16 = 25+1+4+0
        assert!((x.energy() - 30.0).abs() < 1e-12);
        assert!((s.energy() - 30.0).abs() < 1e-12);
        // and the inverse recovers the patch
        let back = idwt2d(&s).unwrap();
        assert!(back.max_abs_diff(&x).unwrap() < 1e-12);
    }

    #[test]
    fn shape_contract_quarters_area_quadruples_channels() {
        let x = Tensor::<f64>::zeros(&[1, 3, 256, 256]);
        let s = dwt2d(&x).unwrap();
        assert_eq!(s.shape(), &[1, 12, 128, 128]);
    }

    #[test]
    fn odd_dims_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 1, 3, 4]);
        assert!(matches!(dwt2d(&x), Err(Error::OddSpatialDims { .. })));
    }

    #[test]
    fn idwt_rejects_channels_not_divisible_by_4() {
        let s = Tensor::<f64>::zeros(&[1, 6, 4, 4]);
        assert!(matches!(idwt2d(&s), Err(Error::ChannelsNotSubbands { .. })));
    }

    #[test]
    fn perfect_reconstruction_both_directions() {
        let x = rand_tensor(&[1, 3, 64, 64], 7);
        let s = dwt2d(&x).unwrap();
        assert!(idwt2d(&s).unwrap().max_abs_diff(&x).unwrap() < 1e-12);
        // other direction: dwt(idwt(s)) = s
        let s0 = rand_tensor(&[2, 8, 6, 6], 9);
        let x0 = idwt2d(&s0).unwrap();
        assert!(dwt2d(&x0).unwrap().max_abs_diff(&s0).unwrap() < 1e-12);
    }

    #[test]
    fn zero_subbands_give_zero_image() {
        let s = Tensor::<f64>::zeros(&[1, 4, 4, 4]);
        let x = idwt2d(&s).unwrap();
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn butterfly_matches_generic_convolution_route() {
        let x = rand_tensor(&[2, 3, 8, 10], 21);
        let fast = dwt2d(&x).unwrap();
        let oracle = dwt2d_via_conv(&x);
        assert_eq!(fast.shape(), oracle.shape());
        assert!(fast.max_abs_diff(&oracle).unwrap() < 1e-14);
    }

    #[test]
    fn energy_preserved_on_random_input() {
        let x = rand_tensor(&[1, 2, 16, 16], 3);
        let s = dwt2d(&x).unwrap();
        assert!((x.energy() - s.energy()).abs() < 1e-10);
    }
}
