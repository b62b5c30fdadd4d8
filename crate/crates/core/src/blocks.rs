//! Building blocks of the network: channel attention, the wavelet
//! channel-attention module (WCAM) that halves resolution while quadrupling
//! channels, its inverse counterpart (IWCAM), and the residual bottleneck
//! block combining both.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

/// LeakyReLU slope used throughout the network.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Squeeze-excite reduction ratio of the attention head.
pub const ATTENTION_REDUCTION: usize = 4;

/// Terminal nonlinearity of the channel-attention gate.
///
/// `Sigmoid` bounds the gate in (0,1) like squeeze-excite attention;
/// `Literal` ends the gate with conv+LeakyReLU instead, which leaves it
/// unbounded. Sigmoid is the default; the literal form exists for the
/// ablation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateKind {
    Sigmoid,
    Literal,
}

impl GateKind {
    pub fn name(self) -> &'static str {
        match self {
            GateKind::Sigmoid => "sigmoid",
            GateKind::Literal => "literal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sigmoid" => Some(GateKind::Sigmoid),
            "literal" => Some(GateKind::Literal),
            _ => None,
        }
    }
}

pub fn attention_mid_width(out_channels: usize) -> usize {
    (out_channels / ATTENTION_REDUCTION).max(4)
}

/// Kernel plus bias of one convolution.
#[derive(Debug, Clone)]
pub struct ConvParams<S: Scalar> {
    pub kernel: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> ConvParams<S> {
    /// Kernel entries drawn from the fan-in-scaled uniform distribution
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; biases start at zero.
    pub fn init(out_c: usize, in_c: usize, kh: usize, kw: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (in_c * kh * kw) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let numel = out_c * in_c * kh * kw;
        let data: Vec<S> = (0..numel)
            .map(|_| S::from_f64((rng.random::<f64>() * 2.0 - 1.0) * bound))
            .collect();
        ConvParams {
            kernel: Tensor::new(vec![out_c, in_c, kh, kw], data).expect("init shape"),
            bias: Tensor::zeros(&[out_c]),
        }
    }

    pub fn numel(&self) -> usize {
        self.kernel.numel() + self.bias.numel()
    }
}

/// The two 1x1 convolutions of the squeeze-excite attention head.
#[derive(Debug, Clone)]
pub struct AttentionParams<S: Scalar> {
    pub squeeze: ConvParams<S>,
    pub excite: ConvParams<S>,
}

impl<S: Scalar> AttentionParams<S> {
    pub fn init(in_c: usize, out_c: usize, rng: &mut ChaCha8Rng) -> Self {
        let mid = attention_mid_width(out_c);
        AttentionParams {
            squeeze: ConvParams::init(mid, in_c, 1, 1, rng),
            excite: ConvParams::init(out_c, mid, 1, 1, rng),
        }
    }

    pub fn numel(&self) -> usize {
        self.squeeze.numel() + self.excite.numel()
    }
}

/// Parameters of one WCAM or IWCAM: the main-path 3x3 convolution and,
/// unless attention is ablated, the gate head. The attention output width
/// always equals the main-path output width.
#[derive(Debug, Clone)]
pub struct BlockParams<S: Scalar> {
    pub conv: ConvParams<S>,
    pub attention: Option<AttentionParams<S>>,
}

impl<S: Scalar> BlockParams<S> {
    pub fn init(
        conv_in: usize,
        conv_out: usize,
        attn_in: usize,
        with_attention: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        BlockParams {
            conv: ConvParams::init(conv_out, conv_in, 3, 3, rng),
            attention: with_attention.then(|| AttentionParams::init(attn_in, conv_out, rng)),
        }
    }

    pub fn numel(&self) -> usize {
        self.conv.numel() + self.attention.as_ref().map_or(0, |a| a.numel())
    }
}

/// Tape handles for one convolution's parameters.
#[derive(Debug, Clone, Copy)]
pub struct ConvIds {
    pub kernel: TensorId,
    pub bias: TensorId,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionIds {
    pub squeeze: ConvIds,
    pub excite: ConvIds,
}

#[derive(Debug, Clone)]
pub struct BlockIds {
    pub conv: ConvIds,
    pub attention: Option<AttentionIds>,
}

/// `M_c = gate(conv1x1_excite(leaky_relu(conv1x1_squeeze(avg_pool(x)))))`,
/// a `[B,Cout,1,1]` channel gate computed from globally pooled features.
pub fn channel_attention<S: Scalar>(
    tape: &mut Tape<S>,
    x: TensorId,
    attn: &AttentionIds,
    gate: GateKind,
) -> Result<TensorId> {
    let pooled = tape.global_avg_pool(x)?;
    let h = tape.conv2d(pooled, attn.squeeze.kernel, Some(attn.squeeze.bias), 1, 0)?;
    let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
    let m = tape.conv2d(h, attn.excite.kernel, Some(attn.excite.bias), 1, 0)?;
    Ok(match gate {
        GateKind::Sigmoid => tape.sigmoid(m),
        GateKind::Literal => tape.leaky_relu(m, LEAKY_SLOPE)?,
    })
}

/// `[B,C,H,W] -> [B,4C,H/2,W/2]`: wavelet decomposition, 3x3 conv +
/// LeakyReLU, gated channel-wise by attention pooled from the block input.
pub fn wcam<S: Scalar>(
    tape: &mut Tape<S>,
    x: TensorId,
    block: &BlockIds,
    gate: GateKind,
) -> Result<TensorId> {
    let s = tape.dwt2d(x)?;
    let y = tape.conv2d(s, block.conv.kernel, Some(block.conv.bias), 1, 1)?;
    let y = tape.leaky_relu(y, LEAKY_SLOPE)?;
    match &block.attention {
        Some(attn) => {
            let m = channel_attention(tape, x, attn, gate)?;
            tape.mul(y, m)
        }
        None => Ok(y),
    }
}

/// `[B,4C,H/2,W/2] -> [B,C,H,W]`: wavelet reconstruction, 3x3 conv +
/// LeakyReLU, gated by attention pooled from the block input. The gate width
/// is C — the block's output width.
pub fn iwcam<S: Scalar>(
    tape: &mut Tape<S>,
    x: TensorId,
    block: &BlockIds,
    gate: GateKind,
) -> Result<TensorId> {
    let u = tape.idwt2d(x)?;
    let y = tape.conv2d(u, block.conv.kernel, Some(block.conv.bias), 1, 1)?;
    let y = tape.leaky_relu(y, LEAKY_SLOPE)?;
    match &block.attention {
        Some(attn) => {
            let m = channel_attention(tape, x, attn, gate)?;
            tape.mul(y, m)
        }
        None => Ok(y),
    }
}

/// Shape-preserving bottleneck block: `x + iwcam(wcam(x))`.
///
/// Odd spatial dims (bottleneck features of an input that is a multiple of
/// 16 but not 32) are zero-padded to even before the inner transform and
/// cropped back, keeping the block shape-preserving for any input size.
pub fn residual_wcam<S: Scalar>(
    tape: &mut Tape<S>,
    x: TensorId,
    down: &BlockIds,
    up: &BlockIds,
    gate: GateKind,
) -> Result<TensorId> {
    let [_, _, h, w] = tape.value(x).dims4("residual_wcam")?;
    let inner = tape.zero_pad2d(x, h % 2, w % 2)?;
    let mid = wcam(tape, inner, down, gate)?;
    let y = iwcam(tape, mid, up, gate)?;
    let y = tape.crop2d(y, h, w)?;
    tape.add(x, y)
}
