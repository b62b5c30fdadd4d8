//! The encoder-decoder deraining network.
//!
//! Pipeline: wavelet-decompose the rainy input, lift 12 subband channels to
//! the base width, run three WCAM encoder stages (each halves resolution and
//! quadruples channels), a stack of residual bottleneck blocks, three IWCAM
//! decoder stages with additive skip connections from each encoder stage
//! input, and a linear 3x3 head that emits twelve confidence maps — one per
//! subband of the input. Deraining multiplies the input subbands by the
//! confidence maps and reconstructs the image with the inverse transform.


use crate::blocks::{
    iwcam, residual_wcam, wcam, BlockIds, BlockParams, ConvIds, ConvParams, GateKind,
};
use crate::error::{Error, Result};
use crate::rng::{rng_for, STREAM_INIT};
use crate::scalar::Scalar;
use crate::tape::{Tape, TensorId};
use crate::tensor::{crop_top_left, reflect_pad_to_multiple, Tensor};

/// Number of encoder (and decoder) stages; together with the input transform
/// they require spatial dims that are multiples of 16.
pub const STAGES: usize = 3;

/// Subband channels entering and leaving the network (4 per RGB channel).
pub const SUBBAND_CHANNELS: usize = 12;

/// Structural hyperparameters of the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Base channel width after the input lift.
    pub c0: usize,
    /// Number of residual bottleneck blocks.
    pub n_res: usize,
    pub gate: GateKind,
    /// When false, the channel-attention heads are dropped entirely and the
    /// blocks run ungated (the "w/o attention" ablation).
    pub attention: bool,
    /// When false, the head output is reconstructed directly as the image
    /// instead of weighting the input subbands (the "w/o fusion" ablation).
    pub fusion: bool,
    /// Skip the 12->c0 lift and c0->12 head convolutions; requires c0 == 12.
    pub bypass_io: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            c0: 16,
            n_res: 2,
            gate: GateKind::Sigmoid,
            attention: true,
            fusion: true,
            bypass_io: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c0 < 4 {
            return Err(Error::Config(format!("c0 must be at least 4, got {}", self.c0)));
        }
        if self.bypass_io && self.c0 != SUBBAND_CHANNELS {
            return Err(Error::Config(format!(
                "bypass_io_convs requires c0 = {SUBBAND_CHANNELS}, got {}",
                self.c0
            )));
        }
        Ok(())
    }

    /// Channel width entering encoder stage `i` (0-based).
    pub fn stage_width(&self, i: usize) -> usize {
        self.c0 << (2 * i)
    }
}

#[derive(Debug, Clone)]
pub struct ResidualParams<S: Scalar> {
    pub down: BlockParams<S>,
    pub up: BlockParams<S>,
}

/// All learnable tensors of the network, with unique names and a stable
/// iteration order (the checkpoint and optimizer contract).
#[derive(Debug, Clone)]
pub struct ModelParams<S: Scalar> {
    pub config: ModelConfig,
    pub lift: Option<ConvParams<S>>,
    pub encoder: Vec<BlockParams<S>>,
    pub bottleneck: Vec<ResidualParams<S>>,
    pub decoder: Vec<BlockParams<S>>,
    pub head: Option<ConvParams<S>>,
}

/// Deterministic initialization: kernels from the fan-in-scaled uniform
/// distribution, biases zero. The same seed yields bit-identical parameters.
pub fn init_params<S: Scalar>(config: &ModelConfig, seed: u64) -> Result<ModelParams<S>> {
    config.validate()?;
    let mut rng = rng_for(seed, &[STREAM_INIT]);
    let c0 = config.c0;
    let attn = config.attention;

    let lift = (!config.bypass_io)
        .then(|| ConvParams::init(c0, SUBBAND_CHANNELS, 3, 3, &mut rng));

    let mut encoder = Vec::with_capacity(STAGES);
    for i in 0..STAGES {
        let w = config.stage_width(i);
        encoder.push(BlockParams::init(4 * w, 4 * w, w, attn, &mut rng));
    }

    let wb = config.stage_width(STAGES);
    let mut bottleneck = Vec::with_capacity(config.n_res);
    for _ in 0..config.n_res {
        bottleneck.push(ResidualParams {
            down: BlockParams::init(4 * wb, 4 * wb, wb, attn, &mut rng),
            up: BlockParams::init(wb, wb, 4 * wb, attn, &mut rng),
        });
    }

    let mut decoder = Vec::with_capacity(STAGES);
    for i in 0..STAGES {
        let w_in = config.stage_width(STAGES - i); // 64c0, 16c0, 4c0
        let w_out = w_in / 4;
        decoder.push(BlockParams::init(w_out, w_out, w_in, attn, &mut rng));
    }

    let head = (!config.bypass_io)
        .then(|| ConvParams::init(SUBBAND_CHANNELS, c0, 3, 3, &mut rng));

    Ok(ModelParams { config: *config, lift, encoder, bottleneck, decoder, head })
}

impl<S: Scalar> ModelParams<S> {
    /// Named tensors in the frozen iteration order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out: Vec<(String, &Tensor<S>)> = Vec::new();
        fn conv<'a, S: Scalar>(
            out: &mut Vec<(String, &'a Tensor<S>)>,
            name: String,
            c: &'a ConvParams<S>,
        ) {
            out.push((format!("{name}.kernel"), &c.kernel));
            out.push((format!("{name}.bias"), &c.bias));
        }
        fn block<'a, S: Scalar>(
            out: &mut Vec<(String, &'a Tensor<S>)>,
            name: String,
            b: &'a BlockParams<S>,
        ) {
            conv(out, format!("{name}.conv"), &b.conv);
            if let Some(a) = &b.attention {
                conv(out, format!("{name}.attn.squeeze"), &a.squeeze);
                conv(out, format!("{name}.attn.excite"), &a.excite);
            }
        }
        if let Some(l) = &self.lift {
            conv(&mut out, "lift".to_string(), l);
        }
        for (i, b) in self.encoder.iter().enumerate() {
            block(&mut out, format!("encoder.{i}"), b);
        }
        for (i, r) in self.bottleneck.iter().enumerate() {
            block(&mut out, format!("bottleneck.{i}.down"), &r.down);
            block(&mut out, format!("bottleneck.{i}.up"), &r.up);
        }
        for (i, b) in self.decoder.iter().enumerate() {
            block(&mut out, format!("decoder.{i}"), b);
        }
        if let Some(h) = &self.head {
            conv(&mut out, "head".to_string(), h);
        }
        out
    }

    /// Mutable view of the same tensors in the same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out: Vec<(String, &mut Tensor<S>)> = Vec::new();
        fn conv<'a, S: Scalar>(
            out: &mut Vec<(String, &'a mut Tensor<S>)>,
            name: String,
            c: &'a mut ConvParams<S>,
        ) {
            out.push((format!("{name}.kernel"), &mut c.kernel));
            out.push((format!("{name}.bias"), &mut c.bias));
        }
        fn block<'a, S: Scalar>(
            out: &mut Vec<(String, &'a mut Tensor<S>)>,
            name: String,
            b: &'a mut BlockParams<S>,
        ) {
            conv(out, format!("{name}.conv"), &mut b.conv);
            if let Some(a) = &mut b.attention {
                conv(out, format!("{name}.attn.squeeze"), &mut a.squeeze);
                conv(out, format!("{name}.attn.excite"), &mut a.excite);
            }
        }
        if let Some(l) = &mut self.lift {
            conv(&mut out, "lift".to_string(), l);
        }
        for (i, b) in self.encoder.iter_mut().enumerate() {
            block(&mut out, format!("encoder.{i}"), b);
        }
        for (i, r) in self.bottleneck.iter_mut().enumerate() {
            block(&mut out, format!("bottleneck.{i}.down"), &mut r.down);
            block(&mut out, format!("bottleneck.{i}.up"), &mut r.up);
        }
        for (i, b) in self.decoder.iter_mut().enumerate() {
            block(&mut out, format!("decoder.{i}"), b);
        }
        if let Some(h) = &mut self.head {
            conv(&mut out, "head".to_string(), h);
        }
        out
    }

    /// Total learnable scalar count.
    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Register every parameter on a tape (in iteration order) and return
    /// the structural handle used by the forward pass.
    pub fn bind(&self, tape: &mut Tape<S>) -> ModelBinding {
        let bind_conv = |tape: &mut Tape<S>, c: &ConvParams<S>| ConvIds {
            kernel: tape.leaf(c.kernel.clone(), true),
            bias: tape.leaf(c.bias.clone(), true),
        };
        let bind_block = |tape: &mut Tape<S>, b: &BlockParams<S>| BlockIds {
            conv: bind_conv(tape, &b.conv),
            attention: b.attention.as_ref().map(|a| crate::blocks::AttentionIds {
                squeeze: bind_conv(tape, &a.squeeze),
                excite: bind_conv(tape, &a.excite),
            }),
        };
        ModelBinding {
            config: self.config,
            lift: self.lift.as_ref().map(|l| bind_conv(tape, l)),
            encoder: self.encoder.iter().map(|b| bind_block(tape, b)).collect(),
            bottleneck: self
                .bottleneck
                .iter()
                .map(|r| (bind_block(tape, &r.down), bind_block(tape, &r.up)))
                .collect(),
            decoder: self.decoder.iter().map(|b| bind_block(tape, b)).collect(),
            head: self.head.as_ref().map(|h| bind_conv(tape, h)),
        }
    }

}

/// Structural tape handles for one bound forward pass.
#[derive(Debug, Clone)]
pub struct ModelBinding {
    pub config: ModelConfig,
    pub lift: Option<ConvIds>,
    pub encoder: Vec<BlockIds>,
    pub bottleneck: Vec<(BlockIds, BlockIds)>,
    pub decoder: Vec<BlockIds>,
    pub head: Option<ConvIds>,
}

impl ModelBinding {
    /// Tape leaf ids in the same order as [`ModelParams::named_tensors`].
    pub fn ordered_ids(&self) -> Vec<TensorId> {
        let mut out = Vec::new();
        let conv = |out: &mut Vec<TensorId>, c: &ConvIds| {
            out.push(c.kernel);
            out.push(c.bias);
        };
        let block = |out: &mut Vec<TensorId>, b: &BlockIds| {
            conv(out, &b.conv);
            if let Some(a) = &b.attention {
                conv(out, &a.squeeze);
                conv(out, &a.excite);
            }
        };
        if let Some(l) = &self.lift {
            conv(&mut out, l);
        }
        for b in &self.encoder {
            block(&mut out, b);
        }
        for (d, u) in &self.bottleneck {
            block(&mut out, d);
            block(&mut out, u);
        }
        for b in &self.decoder {
            block(&mut out, b);
        }
        if let Some(h) = &self.head {
            conv(&mut out, h);
        }
        out
    }
}

fn check_input<S: Scalar>(x: &Tensor<S>) -> Result<()> {
    let [_, c, h, w] = x.dims4("network input")?;
    if c != 3 {
        return Err(Error::ShapeMismatch {
            context: "network input",
            expected: "3 channels (RGB)".to_string(),
            got: format!("{c} channels"),
        });
    }
    if h % 16 != 0 || w % 16 != 0 {
        return Err(Error::NotMultipleOf16 { context: "network input", h, w });
    }
    Ok(())
}

/// Run the network on a `[B,3,H,W]` input (H, W multiples of 16) and return
/// the `[B,12,H/2,W/2]` confidence maps.
pub fn forward<S: Scalar>(
    tape: &mut Tape<S>,
    binding: &ModelBinding,
    rainy: TensorId,
) -> Result<TensorId> {
    check_input(tape.value(rainy))?;
    let gate = binding.config.gate;

    let s0 = tape.dwt2d(rainy)?;
    let mut f = match &binding.lift {
        Some(l) => tape.conv2d(s0, l.kernel, Some(l.bias), 1, 1)?,
        None => s0,
    };
    let mut skips = Vec::with_capacity(binding.encoder.len());
    for block in &binding.encoder {
        skips.push(f);
        f = wcam(tape, f, block, gate)?;
    }
    for (down, up) in &binding.bottleneck {
        f = residual_wcam(tape, f, down, up, gate)?;
    }
    for block in &binding.decoder {
        f = iwcam(tape, f, block, gate)?;
        let skip = skips.pop().expect("one skip per decoder stage");
        f = tape.add(f, skip)?;
    }
    match &binding.head {
        Some(h) => tape.conv2d(f, h.kernel, Some(h.bias), 1, 1),
        None => Ok(f),
    }
}

/// Confidence maps plus the reconstructed image for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct DerainNodes {
    pub maps: TensorId,
    pub output: TensorId,
}

/// Full deraining pass on the tape. With fusion enabled the confidence maps
/// weight the input subbands before reconstruction
/// (`J = IDWT(C_LL*I_LL, C_HL*I_HL, C_LH*I_LH, C_HH*I_HH)`); without fusion
/// the head output is reconstructed directly. The output is unclamped; clamp
/// to [0,1] only when emitting images.
pub fn derain_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    binding: &ModelBinding,
    rainy: TensorId,
) -> Result<DerainNodes> {
    let maps = forward(tape, binding, rainy)?;
    let output = if binding.config.fusion {
        let subbands = tape.dwt2d(rainy)?;
        let fused = tape.mul(maps, subbands)?;
        tape.idwt2d(fused)?
    } else {
        tape.idwt2d(maps)?
    };
    Ok(DerainNodes { maps, output })
}

/// Inference convenience: derain a `[B,3,H,W]` batch outside any training
/// loop. Returns the unclamped output and the confidence maps.
pub fn derain<S: Scalar>(
    params: &ModelParams<S>,
    rainy: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let mut tape = Tape::new();
    let binding = params.bind(&mut tape);
    let input = tape.constant(rainy.clone());
    let nodes = derain_on_tape(&mut tape, &binding, input)?;
    Ok((tape.value(nodes.output).clone(), tape.value(nodes.maps).clone()))
}

/// Derain a single `[3,H,W]` image of arbitrary size: reflect-pad to the next
/// multiple of 16, run the network, crop back. Returns the unclamped image
/// and the confidence maps of the padded input.
pub fn derain_padded<S: Scalar>(
    params: &ModelParams<S>,
    image: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let shape = image.shape().to_vec();
    let (h, w) = match shape.as_slice() {
        &[3, h, w] => (h, w),
        other => {
            return Err(Error::ShapeMismatch {
                context: "derain_padded",
                expected: "3xHxW".to_string(),
                got: crate::error::shape_string(other),
            })
        }
    };
    let padded = reflect_pad_to_multiple(image, 16)?;
    let batch = Tensor::stack(&[padded])?;
    let (out, maps) = derain(params, &batch)?;
    let out = crop_top_left(&out.unstack(0)?, h, w)?;
    Ok((out, maps))
}
