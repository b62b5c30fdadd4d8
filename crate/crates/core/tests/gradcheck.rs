//! Central finite-difference checks for every differentiable op and block,
//! plus the conv/transposed-conv transpose identity.

mod common;

use common::{gradcheck, rand_tensor, weighted_sum};
use derain_core::blocks::{
    channel_attention, iwcam, residual_wcam, wcam, AttentionIds, AttentionParams, BlockIds,
    BlockParams, ConvIds, ConvParams, GateKind,
};
use derain_core::conv;
use derain_core::loss::{l1_loss, ssim, total_loss, wavelet_ssim_loss, LossWeights};
use derain_core::tape::{Tape, TensorId};
use derain_core::tensor::Tensor;

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-6;

#[test]
fn conv2d_gradients() {
    let x = rand_tensor(&[2, 3, 6, 6], -1.0, 1.0, 1);
    let k = rand_tensor(&[4, 3, 3, 3], -0.5, 0.5, 2);
    let b = rand_tensor(&[4], -0.2, 0.2, 3);
    gradcheck(
        "conv2d s1 p1",
        &[x.clone(), k.clone(), b.clone()],
        &|t, ids| {
            let y = t.conv2d(ids[0], ids[1], Some(ids[2]), 1, 1).unwrap();
            weighted_sum(t, y, 10)
        },
        STEP,
        TOL,
        24,
        100,
    );
    gradcheck(
        "conv2d s2 p0",
        &[x, k, b],
        &|t, ids| {
            let y = t.conv2d(ids[0], ids[1], Some(ids[2]), 2, 0).unwrap();
            weighted_sum(t, y, 11)
        },
        STEP,
        TOL,
        24,
        101,
    );
}

#[test]
fn transposed_conv2d_gradients() {
    let x = rand_tensor(&[1, 4, 3, 3], -1.0, 1.0, 4);
    let k = rand_tensor(&[4, 2, 2, 2], -0.5, 0.5, 5);
    for stride in [1, 2] {
        gradcheck(
            "transposed_conv2d",
            &[x.clone(), k.clone()],
            &move |t, ids| {
                let y = t.conv_transpose2d(ids[0], ids[1], stride).unwrap();
                weighted_sum(t, y, 12)
            },
            STEP,
            TOL,
            32,
            102,
        );
    }
}

#[test]
fn wavelet_gradients() {
    let x = rand_tensor(&[1, 2, 6, 6], -1.0, 1.0, 6);
    gradcheck(
        "dwt2d",
        &[x.clone()],
        &|t, ids| {
            let y = t.dwt2d(ids[0]).unwrap();
            weighted_sum(t, y, 13)
        },
        STEP,
        TOL,
        36,
        103,
    );
    let s = rand_tensor(&[1, 8, 3, 3], -1.0, 1.0, 7);
    gradcheck(
        "idwt2d",
        &[s],
        &|t, ids| {
            let y = t.idwt2d(ids[0]).unwrap();
            weighted_sum(t, y, 14)
        },
        STEP,
        TOL,
        36,
        104,
    );
    // adjoint structure: grad of dwt2d under sum-loss equals idwt2d of ones
    let mut tape = Tape::new();
    let xid = tape.leaf(x, true);
    let y = tape.dwt2d(xid).unwrap();
    let loss = tape.sum_all(y);
    tape.backward(loss).unwrap();
    let ones = Tensor::<f64>::ones(&[1, 8, 3, 3]);
    let expect = derain_core::wavelet::idwt2d(&ones).unwrap();
    assert!(tape.grad(xid).unwrap().max_abs_diff(&expect).unwrap() < 1e-12);
}

#[test]
fn activation_and_elementwise_gradients() {
    // keep leaky_relu / abs inputs away from their kinks
    let x = rand_tensor(&[2, 3, 4, 4], 0.2, 1.2, 8);
    let x_neg = x.map(|v| -v);
    gradcheck(
        "leaky_relu positive",
        &[x.clone()],
        &|t, ids| {
            let y = t.leaky_relu(ids[0], 0.2).unwrap();
            weighted_sum(t, y, 15)
        },
        STEP,
        TOL,
        24,
        105,
    );
    gradcheck(
        "leaky_relu negative",
        &[x_neg],
        &|t, ids| {
            let y = t.leaky_relu(ids[0], 0.2).unwrap();
            weighted_sum(t, y, 16)
        },
        STEP,
        TOL,
        24,
        106,
    );
    gradcheck(
        "sigmoid",
        &[rand_tensor(&[2, 2, 3, 3], -2.0, 2.0, 9)],
        &|t, ids| {
            let y = t.sigmoid(ids[0]);
            weighted_sum(t, y, 17)
        },
        STEP,
        TOL,
        24,
        107,
    );
    gradcheck(
        "global_avg_pool",
        &[rand_tensor(&[2, 3, 4, 4], -1.0, 1.0, 10)],
        &|t, ids| {
            let y = t.global_avg_pool(ids[0]).unwrap();
            weighted_sum(t, y, 18)
        },
        STEP,
        TOL,
        24,
        108,
    );
    gradcheck(
        "abs away from zero",
        &[x.clone()],
        &|t, ids| {
            let y = t.abs(ids[0]);
            weighted_sum(t, y, 19)
        },
        STEP,
        TOL,
        24,
        109,
    );

    let a = rand_tensor(&[2, 3, 4, 4], -1.0, 1.0, 11);
    let b = rand_tensor(&[2, 3, 4, 4], 0.5, 1.5, 12);
    gradcheck(
        "add/sub/mul/div chain",
        &[a.clone(), b.clone()],
        &|t, ids| {
            let s = t.add(ids[0], ids[1]).unwrap();
            let d = t.sub(s, ids[1]).unwrap();
            let m = t.mul(d, ids[0]).unwrap();
            let q = t.div(m, ids[1]).unwrap();
            weighted_sum(t, q, 20)
        },
        STEP,
        TOL,
        24,
        110,
    );

    let gate = rand_tensor(&[2, 3, 1, 1], 0.2, 0.9, 13);
    gradcheck(
        "channel-gate broadcast mul/add/sub",
        &[a, gate],
        &|t, ids| {
            let m = t.mul(ids[0], ids[1]).unwrap();
            let p = t.add(m, ids[1]).unwrap();
            let q = t.sub(p, ids[1]).unwrap();
            weighted_sum(t, q, 21)
        },
        STEP,
        TOL,
        24,
        111,
    );
}

#[test]
fn scalar_reduction_reshape_gradients() {
    let x = rand_tensor(&[1, 4, 4, 4], -1.0, 1.0, 14);
    gradcheck(
        "scalar ops + mean",
        &[x.clone()],
        &|t, ids| {
            let y = t.mul_scalar(ids[0], 3.5);
            let y = t.add_scalar(y, -0.25);
            t.mean_all(y)
        },
        STEP,
        TOL,
        24,
        112,
    );
    gradcheck(
        "reshape + subband_group + pad + crop",
        &[x],
        &|t, ids| {
            let r = t.reshape(ids[0], vec![1, 4, 4, 4]).unwrap();
            let g = t.subband_group(r, 2).unwrap();
            let p = t.zero_pad2d(g, 1, 1).unwrap();
            let c = t.crop2d(p, 4, 4).unwrap();
            weighted_sum(t, c, 22)
        },
        STEP,
        TOL,
        24,
        113,
    );
}

fn bind_conv(tape: &mut Tape<f64>, ids: &[TensorId], at: &mut usize) -> ConvIds {
    let c = ConvIds { kernel: ids[*at], bias: ids[*at + 1] };
    *at += 2;
    c
}

fn conv_tensors(p: &ConvParams<f64>) -> Vec<Tensor<f64>> {
    vec![p.kernel.clone(), p.bias.clone()]
}

#[test]
fn attention_and_block_gradients() {
    let mut r = derain_core::rng::rng_for(99, &[derain_core::rng::STREAM_INIT]);
    let attn = AttentionParams::<f64>::init(3, 12, &mut r);
    let x = rand_tensor(&[1, 3, 4, 4], -1.0, 1.0, 15);
    let mut inputs = vec![x.clone()];
    inputs.extend(conv_tensors(&attn.squeeze));
    inputs.extend(conv_tensors(&attn.excite));
    for gate in [GateKind::Sigmoid, GateKind::Literal] {
        gradcheck(
            "channel_attention",
            &inputs,
            &move |t, ids| {
                let mut at = 1;
                let a = AttentionIds {
                    squeeze: bind_conv(t, ids, &mut at),
                    excite: bind_conv(t, ids, &mut at),
                };
                let m = channel_attention(t, ids[0], &a, gate).unwrap();
                weighted_sum(t, m, 23)
            },
            STEP,
            TOL,
            16,
            114,
        );
    }

    let block = BlockParams::<f64>::init(12, 12, 3, true, &mut r);
    let mut inputs = vec![x.clone()];
    inputs.extend(conv_tensors(&block.conv));
    let a = block.attention.as_ref().unwrap();
    inputs.extend(conv_tensors(&a.squeeze));
    inputs.extend(conv_tensors(&a.excite));
    gradcheck(
        "wcam",
        &inputs,
        &|t, ids| {
            let mut at = 1;
            let b = BlockIds {
                conv: bind_conv(t, ids, &mut at),
                attention: Some(AttentionIds {
                    squeeze: bind_conv(t, ids, &mut at),
                    excite: bind_conv(t, ids, &mut at),
                }),
            };
            let y = wcam(t, ids[0], &b, GateKind::Sigmoid).unwrap();
            weighted_sum(t, y, 24)
        },
        STEP,
        TOL,
        12,
        115,
    );

    let up = BlockParams::<f64>::init(3, 3, 12, true, &mut r);
    let s = rand_tensor(&[1, 12, 2, 2], -1.0, 1.0, 16);
    let mut inputs = vec![s];
    inputs.extend(conv_tensors(&up.conv));
    let a = up.attention.as_ref().unwrap();
    inputs.extend(conv_tensors(&a.squeeze));
    inputs.extend(conv_tensors(&a.excite));
    gradcheck(
        "iwcam",
        &inputs,
        &|t, ids| {
            let mut at = 1;
            let b = BlockIds {
                conv: bind_conv(t, ids, &mut at),
                attention: Some(AttentionIds {
                    squeeze: bind_conv(t, ids, &mut at),
                    excite: bind_conv(t, ids, &mut at),
                }),
            };
            let y = iwcam(t, ids[0], &b, GateKind::Sigmoid).unwrap();
            weighted_sum(t, y, 25)
        },
        STEP,
        TOL,
        12,
        116,
    );

    // residual block, including the odd-dims pad path (3x3 features)
    let down = BlockParams::<f64>::init(12, 12, 3, true, &mut r);
    let up2 = BlockParams::<f64>::init(3, 3, 12, true, &mut r);
    for (h, w) in [(4, 4), (3, 3)] {
        let x = rand_tensor(&[1, 3, h, w], -1.0, 1.0, 17);
        let mut inputs = vec![x];
        inputs.extend(conv_tensors(&down.conv));
        let ad = down.attention.as_ref().unwrap();
        inputs.extend(conv_tensors(&ad.squeeze));
        inputs.extend(conv_tensors(&ad.excite));
        inputs.extend(conv_tensors(&up2.conv));
        let au = up2.attention.as_ref().unwrap();
        inputs.extend(conv_tensors(&au.squeeze));
        inputs.extend(conv_tensors(&au.excite));
        gradcheck(
            "residual_wcam",
            &inputs,
            &|t, ids| {
                let mut at = 1;
                let down = BlockIds {
                    conv: bind_conv(t, ids, &mut at),
                    attention: Some(AttentionIds {
                        squeeze: bind_conv(t, ids, &mut at),
                        excite: bind_conv(t, ids, &mut at),
                    }),
                };
                let up = BlockIds {
                    conv: bind_conv(t, ids, &mut at),
                    attention: Some(AttentionIds {
                        squeeze: bind_conv(t, ids, &mut at),
                        excite: bind_conv(t, ids, &mut at),
                    }),
                };
                let y = residual_wcam(t, ids[0], &down, &up, GateKind::Sigmoid).unwrap();
                weighted_sum(t, y, 26)
            },
            STEP,
            TOL,
            10,
            118,
        );
    }
}

#[test]
fn residual_identity_gradient_with_zeroed_inner_path() {
    // zero inner weights: y = x, so d sum(y) / dx = 1 everywhere
    let zero_block = |out_c: usize, in_c: usize| BlockParams::<f64> {
        conv: ConvParams {
            kernel: Tensor::zeros(&[out_c, in_c, 3, 3]),
            bias: Tensor::zeros(&[out_c]),
        },
        attention: None,
    };
    let down = zero_block(12, 12);
    let up = zero_block(3, 3);
    let x = rand_tensor(&[1, 3, 4, 4], -1.0, 1.0, 18);
    let mut tape = Tape::new();
    let xid = tape.leaf(x.clone(), true);
    let down_ids = BlockIds {
        conv: ConvIds {
            kernel: tape.leaf(down.conv.kernel.clone(), false),
            bias: tape.leaf(down.conv.bias.clone(), false),
        },
        attention: None,
    };
    let up_ids = BlockIds {
        conv: ConvIds {
            kernel: tape.leaf(up.conv.kernel.clone(), false),
            bias: tape.leaf(up.conv.bias.clone(), false),
        },
        attention: None,
    };
    let y = residual_wcam(&mut tape, xid, &down_ids, &up_ids, GateKind::Sigmoid).unwrap();
    assert!(tape.value(y).max_abs_diff(&x).unwrap() < 1e-15, "residual identity");
    let loss = tape.sum_all(y);
    tape.backward(loss).unwrap();
    let g = tape.grad(xid).unwrap();
    assert!(g.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn loss_gradients() {
    let pred = rand_tensor(&[1, 3, 32, 32], 0.1, 0.9, 19);
    let target = rand_tensor(&[1, 3, 32, 32], 0.1, 0.9, 20);
    gradcheck(
        "l1_loss",
        &[pred.clone(), target.clone()],
        &|t, ids| l1_loss(t, ids[0], ids[1]).unwrap(),
        STEP,
        1e-5, // |x| has curvature spikes wherever pred-target is small
        16,
        119,
    );
    gradcheck(
        "ssim",
        &[pred.clone(), target.clone()],
        &|t, ids| ssim(t, ids[0], ids[1], 1.0).unwrap(),
        STEP,
        TOL,
        16,
        120,
    );
    // The per-subband data range is read off the target and treated as a
    // constant, so these two check the prediction path only.
    let t2 = target.clone();
    gradcheck(
        "wavelet_ssim_loss",
        &[pred.clone()],
        &move |t, ids| {
            let tid = t.constant(t2.clone());
            wavelet_ssim_loss(t, ids[0], tid).unwrap()
        },
        STEP,
        TOL,
        16,
        121,
    );
    let t3 = target.clone();
    gradcheck(
        "total_loss",
        &[pred],
        &move |t, ids| {
            let tid = t.constant(t3.clone());
            let w = LossWeights { lambda_l1: 0.7, lambda_wssim: 1.3 };
            total_loss(t, ids[0], tid, &w).unwrap().total
        },
        STEP,
        1e-5,
        16,
        122,
    );
}

#[test]
fn transpose_identity_inner_product() {
    // <conv2d(x;k), y> = <x, transposed_conv2d(y;k)> for padding 0
    for (stride, seed) in [(1, 30), (2, 31)] {
        let x64 = rand_tensor(&[2, 3, 8, 8], -1.0, 1.0, seed);
        let k64 = rand_tensor(&[5, 3, 2, 2], -1.0, 1.0, seed + 1);
        let cx = conv::conv2d(&x64, &k64, None, stride, 0).unwrap();
        let y64 = rand_tensor(cx.shape(), -1.0, 1.0, seed + 2);
        let ty = conv::conv_transpose2d(&y64, &k64, stride).unwrap();
        let lhs: f64 = cx.data().iter().zip(y64.data()).map(|(&a, &b)| a * b).sum();
        let rhs: f64 = x64.data().iter().zip(ty.data()).map(|(&a, &b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "f64 transpose identity, stride {stride}");

        let x32 = x64.cast::<f32>();
        let k32 = k64.cast::<f32>();
        let y32 = y64.cast::<f32>();
        let cx = conv::conv2d(&x32, &k32, None, stride, 0).unwrap();
        let ty = conv::conv_transpose2d(&y32, &k32, stride).unwrap();
        let lhs: f64 = cx.data().iter().zip(y32.data()).map(|(&a, &b)| (a * b) as f64).sum();
        let rhs: f64 = x32.data().iter().zip(ty.data()).map(|(&a, &b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-5, "f32 transpose identity, stride {stride}");
    }
}
