//! Reverse-mode autodiff over a Wengert tape.
//!
//! Forward ops append nodes holding their output value and the ids of their
//! parents; `backward` replays the tape in reverse, visiting each recorded op
//! exactly once (node ids grow monotonically, so reverse id order is a
//! reverse topological order). Gradients of `requires_grad` leaves persist on
//! the tape; repeated `backward` calls accumulate into them.
//!
//! A tape is single-threaded per model instance. Tensors themselves are
//! value-semantic and move freely across threads.

use crate::conv;
use crate::error::{shape_string, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::wavelet;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op<S: Scalar> {
    Leaf,
    Conv2d {
        input: TensorId,
        kernel: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        input: TensorId,
        kernel: TensorId,
        stride: usize,
    },
    Dwt2d { input: TensorId },
    Idwt2d { input: TensorId },
    LeakyRelu { input: TensorId, slope: S },
    Sigmoid { input: TensorId },
    GlobalAvgPool { input: TensorId },
    Add { lhs: TensorId, rhs: TensorId },
    Sub { lhs: TensorId, rhs: TensorId },
    Mul { lhs: TensorId, rhs: TensorId },
    Div { lhs: TensorId, rhs: TensorId },
    AddScalar { input: TensorId },
    MulScalar { input: TensorId, value: S },
    Abs { input: TensorId },
    SumAll { input: TensorId },
    MeanAll { input: TensorId },
    Reshape { input: TensorId },
    SubbandGroup { input: TensorId, offset: usize },
    ZeroPad2d { input: TensorId, bottom: usize, right: usize },
    CropTopLeft { input: TensorId, h: usize, w: usize },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    needs_grad: bool,
    requires_grad: bool,
    op: Op<S>,
}

/// How the right-hand side of an elementwise op lines up with the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// rhs is `[B,C,1,1]` against lhs `[B,C,H,W]`; gradients for the rhs are
    /// sum-reduced over the broadcast axes.
    ChannelGate,
}

fn broadcast_kind(lhs: &[usize], rhs: &[usize], context: &'static str) -> Result<Broadcast> {
    if lhs == rhs {
        return Ok(Broadcast::Same);
    }
    if let (&[b, c, _, _], &[rb, rc, 1, 1]) = (lhs, rhs) {
        if rb == b && rc == c {
            return Ok(Broadcast::ChannelGate);
        }
    }
    Err(Error::ShapeMismatch {
        context,
        expected: format!("{} or channel-gate shape", shape_string(lhs)),
        got: shape_string(rhs),
    })
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> TensorId {
        self.push(value, requires_grad, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> TensorId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: TensorId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a `requires_grad` leaf; `None` before any
    /// backward pass reaches it.
    pub fn grad(&self, id: TensorId) -> Option<&Tensor<S>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn push(
        &mut self,
        value: Tensor<S>,
        needs_grad: bool,
        requires_grad: bool,
        op: Op<S>,
    ) -> TensorId {
        self.nodes.push(Node { value, needs_grad, requires_grad, op });
        TensorId(self.nodes.len() - 1)
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn record(&mut self, value: Tensor<S>, parents: &[TensorId], op: Op<S>) -> TensorId {
        let needs = parents.iter().any(|&p| self.needs(p));
        self.push(value, needs, false, op)
    }

    // ---- forward ops -----------------------------------------------------

    pub fn conv2d(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        padding: usize,
    ) -> Result<TensorId> {
        let value = conv::conv2d(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let mut parents = vec![input, kernel];
        parents.extend(bias);
        Ok(self.record(value, &parents, Op::Conv2d { input, kernel, bias, stride, padding }))
    }

    pub fn conv_transpose2d(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        stride: usize,
    ) -> Result<TensorId> {
        let value = conv::conv_transpose2d(self.value(input), self.value(kernel), stride)?;
        Ok(self.record(value, &[input, kernel], Op::ConvTranspose2d { input, kernel, stride }))
    }

    pub fn dwt2d(&mut self, input: TensorId) -> Result<TensorId> {
        let value = wavelet::dwt2d(self.value(input))?;
        Ok(self.record(value, &[input], Op::Dwt2d { input }))
    }

    pub fn idwt2d(&mut self, input: TensorId) -> Result<TensorId> {
        let value = wavelet::idwt2d(self.value(input))?;
        Ok(self.record(value, &[input], Op::Idwt2d { input }))
    }

    /// Elementwise `max(x, slope*x)`; the subgradient at exactly 0 is 1.
    pub fn leaky_relu(&mut self, input: TensorId, slope: f64) -> Result<TensorId> {
        if !(0.0..1.0).contains(&slope) {
            return Err(Error::InvalidArgument(format!(
                "leaky_relu slope must be in [0,1), got {slope}"
            )));
        }
        let s = S::from_f64(slope);
        let value = self.value(input).map(|v| if v >= S::zero() { v } else { v * s });
        Ok(self.record(value, &[input], Op::LeakyRelu { input, slope: s }))
    }

    pub fn sigmoid(&mut self, input: TensorId) -> TensorId {
        let value = self.value(input).map(stable_sigmoid);
        self.record(value, &[input], Op::Sigmoid { input })
    }

    /// Per-channel spatial mean: `[B,C,H,W]` -> `[B,C,1,1]`.
    pub fn global_avg_pool(&mut self, input: TensorId) -> Result<TensorId> {
        let x = self.value(input);
        let [b, c, h, w] = x.dims4("global_avg_pool")?;
        let mut out = Tensor::zeros(&[b, c, 1, 1]);
        let plane = h * w;
        for i in 0..b * c {
            let sum: f64 = x.data()[i * plane..(i + 1) * plane]
                .iter()
                .map(|v| v.as_f64())
                .sum();
            out.data_mut()[i] = S::from_f64(sum / plane as f64);
        }
        Ok(self.record(out, &[input], Op::GlobalAvgPool { input }))
    }

    pub fn add(&mut self, lhs: TensorId, rhs: TensorId) -> Result<TensorId> {
        let value = self.elementwise(lhs, rhs, "add", |a, b| a + b)?;
        Ok(self.record(value, &[lhs, rhs], Op::Add { lhs, rhs }))
    }

    pub fn sub(&mut self, lhs: TensorId, rhs: TensorId) -> Result<TensorId> {
        let value = self.elementwise(lhs, rhs, "sub", |a, b| a - b)?;
        Ok(self.record(value, &[lhs, rhs], Op::Sub { lhs, rhs }))
    }

    pub fn mul(&mut self, lhs: TensorId, rhs: TensorId) -> Result<TensorId> {
        let value = self.elementwise(lhs, rhs, "mul", |a, b| a * b)?;
        Ok(self.record(value, &[lhs, rhs], Op::Mul { lhs, rhs }))
    }

    /// Elementwise division; equal shapes only.
    pub fn div(&mut self, lhs: TensorId, rhs: TensorId) -> Result<TensorId> {
        let a = self.value(lhs);
        let b = self.value(rhs);
        a.same_shape(b, "div")?;
        let data: Vec<S> = a.data().iter().zip(b.data()).map(|(&x, &y)| x / y).collect();
        let value = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.record(value, &[lhs, rhs], Op::Div { lhs, rhs }))
    }

    pub fn add_scalar(&mut self, input: TensorId, value: f64) -> TensorId {
        let c = S::from_f64(value);
        let out = self.value(input).map(|v| v + c);
        self.record(out, &[input], Op::AddScalar { input })
    }

    pub fn mul_scalar(&mut self, input: TensorId, value: f64) -> TensorId {
        let c = S::from_f64(value);
        let out = self.value(input).map(|v| v * c);
        self.record(out, &[input], Op::MulScalar { input, value: c })
    }

    /// Elementwise absolute value with subgradient 0 at 0.
    pub fn abs(&mut self, input: TensorId) -> TensorId {
        let out = self.value(input).map(|v| v.abs());
        self.record(out, &[input], Op::Abs { input })
    }

    pub fn sum_all(&mut self, input: TensorId) -> TensorId {
        let s = S::from_f64(self.value(input).sum_f64());
        self.record(Tensor::scalar(s), &[input], Op::SumAll { input })
    }

    pub fn mean_all(&mut self, input: TensorId) -> TensorId {
        let m = S::from_f64(self.value(input).mean_f64());
        self.record(Tensor::scalar(m), &[input], Op::MeanAll { input })
    }

    pub fn reshape(&mut self, input: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let value = self.value(input).clone().reshaped(shape)?;
        Ok(self.record(value, &[input], Op::Reshape { input }))
    }

    /// Select the channels `4c + offset` of a subband stack `[B,4C,H,W]`,
    /// yielding `[B,C,H,W]` — one subband type across all source channels.
    pub fn subband_group(&mut self, input: TensorId, offset: usize) -> Result<TensorId> {
        let x = self.value(input);
        let [b, c4, h, w] = x.dims4("subband_group")?;
        if c4 % 4 != 0 {
            return Err(Error::ChannelsNotSubbands { context: "subband_group", channels: c4 });
        }
        if offset >= 4 {
            return Err(Error::InvalidArgument(format!(
                "subband offset must be 0..4, got {offset}"
            )));
        }
        let c = c4 / 4;
        let plane = h * w;
        let mut out = Tensor::zeros(&[b, c, h, w]);
        for bi in 0..b {
            for ci in 0..c {
                let src = (bi * c4 + 4 * ci + offset) * plane;
                let dst = (bi * c + ci) * plane;
                out.data_mut()[dst..dst + plane]
                    .copy_from_slice(&x.data()[src..src + plane]);
            }
        }
        Ok(self.record(out, &[input], Op::SubbandGroup { input, offset }))
    }

    /// Zero-pad the bottom/right of a `[B,C,H,W]` tensor.
    pub fn zero_pad2d(&mut self, input: TensorId, bottom: usize, right: usize) -> Result<TensorId> {
        let x = self.value(input);
        let [b, c, h, w] = x.dims4("zero_pad2d")?;
        if bottom == 0 && right == 0 {
            return Ok(input);
        }
        let (ph, pw) = (h + bottom, w + right);
        let mut out = Tensor::zeros(&[b, c, ph, pw]);
        for i in 0..b * c {
            for y in 0..h {
                let src = (i * h + y) * w;
                let dst = (i * ph + y) * pw;
                out.data_mut()[dst..dst + w].copy_from_slice(&x.data()[src..src + w]);
            }
        }
        Ok(self.record(out, &[input], Op::ZeroPad2d { input, bottom, right }))
    }

    /// Keep the top-left `h x w` window of a `[B,C,H,W]` tensor.
    pub fn crop2d(&mut self, input: TensorId, h: usize, w: usize) -> Result<TensorId> {
        let x = self.value(input);
        let [b, c, xh, xw] = x.dims4("crop2d")?;
        if h > xh || w > xw {
            return Err(Error::InvalidArgument(format!(
                "crop2d {h}x{w} exceeds input {xh}x{xw}"
            )));
        }
        if h == xh && w == xw {
            return Ok(input);
        }
        let mut out = Tensor::zeros(&[b, c, h, w]);
        for i in 0..b * c {
            for y in 0..h {
                let src = (i * xh + y) * xw;
                let dst = (i * h + y) * w;
                out.data_mut()[dst..dst + w].copy_from_slice(&x.data()[src..src + w]);
            }
        }
        Ok(self.record(out, &[input], Op::CropTopLeft { input, h, w }))
    }

    fn elementwise(
        &self,
        lhs: TensorId,
        rhs: TensorId,
        context: &'static str,
        f: impl Fn(S, S) -> S,
    ) -> Result<Tensor<S>> {
        let a = self.value(lhs);
        let b = self.value(rhs);
        match broadcast_kind(a.shape(), b.shape(), context)? {
            Broadcast::Same => {
                let data: Vec<S> =
                    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::new(a.shape().to_vec(), data)
            }
            Broadcast::ChannelGate => {
                let [bsz, c, h, w] = a.dims4(context)?;
                let plane = h * w;
                let mut out = Tensor::zeros(a.shape());
                for i in 0..bsz * c {
                    let gate = b.data()[i];
                    let src = &a.data()[i * plane..(i + 1) * plane];
                    let dst = &mut out.data_mut()[i * plane..(i + 1) * plane];
                    for (o, &v) in dst.iter_mut().zip(src) {
                        *o = f(v, gate);
                    }
                }
                Ok(out)
            }
        }
    }

    // ---- backward --------------------------------------------------------

    /// Propagate adjoints from a scalar loss back to every reachable leaf.
    /// Leaf gradients accumulate across calls; use [`Tape::zero_grads`] to
    /// reset them.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: shape_string(self.nodes[loss.0].value.shape()),
            });
        }
        let mut sweep: Vec<Option<Tensor<S>>> = vec![None; loss.0 + 1];
        sweep[loss.0] = Some(Tensor::ones(self.nodes[loss.0].value.shape()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = sweep[i].take() else { continue };
            self.propagate(i, &g, &mut sweep)?;
            if self.nodes[i].requires_grad {
                if self.grads.len() < self.nodes.len() {
                    self.grads.resize(self.nodes.len(), None);
                }
                match &mut self.grads[i] {
                    Some(acc) => accumulate(acc, &g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn propagate(
        &self,
        node: usize,
        g: &Tensor<S>,
        sweep: &mut [Option<Tensor<S>>],
    ) -> Result<()> {
        let add = |id: TensorId, contribution: Tensor<S>, sweep: &mut [Option<Tensor<S>>]| {
            if !self.needs(id) {
                return;
            }
            match &mut sweep[id.0] {
                Some(acc) => accumulate(acc, &contribution),
                slot @ None => *slot = Some(contribution),
            }
        };

        match &self.nodes[node].op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, stride, padding } => {
                if self.needs(*input) {
                    let in_shape = self.value(*input).dims4("conv2d input")?;
                    let din = conv::conv2d_grad_input(
                        g,
                        self.value(*kernel),
                        *stride,
                        *padding,
                        &in_shape,
                    )?;
                    add(*input, din, sweep);
                }
                if self.needs(*kernel) {
                    let k_shape = self.value(*kernel).dims4("conv2d kernel")?;
                    let dk = conv::conv2d_grad_kernel(
                        g,
                        self.value(*input),
                        *stride,
                        *padding,
                        &k_shape,
                    )?;
                    add(*kernel, dk, sweep);
                }
                if let Some(bias) = bias {
                    if self.needs(*bias) {
                        add(*bias, conv::conv2d_grad_bias(g)?, sweep);
                    }
                }
            }
            Op::ConvTranspose2d { input, kernel, stride } => {
                if self.needs(*input) {
                    let in_shape = self.value(*input).dims4("transposed_conv2d input")?;
                    let din = conv::conv_transpose2d_grad_input(
                        g,
                        self.value(*kernel),
                        *stride,
                        &in_shape,
                    )?;
                    add(*input, din, sweep);
                }
                if self.needs(*kernel) {
                    let k_shape = self.value(*kernel).dims4("transposed_conv2d kernel")?;
                    let dk = conv::conv_transpose2d_grad_kernel(
                        g,
                        self.value(*input),
                        *stride,
                        &k_shape,
                    )?;
                    add(*kernel, dk, sweep);
                }
            }
            // The Haar kernels are orthonormal, so each transform's adjoint
            // is its inverse.
            Op::Dwt2d { input } => add(*input, wavelet::idwt2d(g)?, sweep),
            Op::Idwt2d { input } => add(*input, wavelet::dwt2d(g)?, sweep),
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input);
                let data: Vec<S> = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| if xv >= S::zero() { gv } else { gv * *slope })
                    .collect();
                add(*input, Tensor::new(x.shape().to_vec(), data)?, sweep);
            }
            Op::Sigmoid { input } => {
                let y = &self.nodes[node].value;
                let data: Vec<S> = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&gv, &yv)| gv * yv * (S::one() - yv))
                    .collect();
                add(*input, Tensor::new(y.shape().to_vec(), data)?, sweep);
            }
            Op::GlobalAvgPool { input } => {
                let x = self.value(*input);
                let [b, c, h, w] = x.dims4("global_avg_pool")?;
                let plane = h * w;
                let scale = S::from_f64(1.0 / plane as f64);
                let mut din = Tensor::zeros(x.shape());
                for i in 0..b * c {
                    let gv = g.data()[i] * scale;
                    for v in &mut din.data_mut()[i * plane..(i + 1) * plane] {
                        *v = gv;
                    }
                }
                add(*input, din, sweep);
            }
            Op::Add { lhs, rhs } => {
                if self.needs(*lhs) {
                    add(*lhs, g.clone(), sweep);
                }
                if self.needs(*rhs) {
                    add(*rhs, self.reduce_to(g, *rhs)?, sweep);
                }
            }
            Op::Sub { lhs, rhs } => {
                if self.needs(*lhs) {
                    add(*lhs, g.clone(), sweep);
                }
                if self.needs(*rhs) {
                    let d = self.reduce_to(g, *rhs)?.map(|v| -v);
                    add(*rhs, d, sweep);
                }
            }
            Op::Mul { lhs, rhs } => {
                let a = self.value(*lhs);
                let b = self.value(*rhs);
                let kind = broadcast_kind(a.shape(), b.shape(), "mul backward")?;
                if self.needs(*lhs) {
                    let da = match kind {
                        Broadcast::Same => zip_mul(g, b)?,
                        Broadcast::ChannelGate => gate_expand_mul(g, b)?,
                    };
                    add(*lhs, da, sweep);
                }
                if self.needs(*rhs) {
                    let db = match kind {
                        Broadcast::Same => zip_mul(g, a)?,
                        Broadcast::ChannelGate => gate_reduce_mul(g, a)?,
                    };
                    add(*rhs, db, sweep);
                }
            }
            Op::Div { lhs, rhs } => {
                let b = self.value(*rhs);
                if self.needs(*lhs) {
                    let data: Vec<S> = g
                        .data()
                        .iter()
                        .zip(b.data())
                        .map(|(&gv, &bv)| gv / bv)
                        .collect();
                    add(*lhs, Tensor::new(b.shape().to_vec(), data)?, sweep);
                }
                if self.needs(*rhs) {
                    let y = &self.nodes[node].value;
                    let data: Vec<S> = g
                        .data()
                        .iter()
                        .zip(y.data().iter().zip(b.data()))
                        .map(|(&gv, (&yv, &bv))| -(gv * yv / bv))
                        .collect();
                    add(*rhs, Tensor::new(b.shape().to_vec(), data)?, sweep);
                }
            }
            Op::AddScalar { input } => add(*input, g.clone(), sweep),
            Op::MulScalar { input, value } => {
                let c = *value;
                add(*input, g.map(|v| v * c), sweep);
            }
            Op::Abs { input } => {
                let x = self.value(*input);
                let data: Vec<S> = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| {
                        if xv > S::zero() {
                            gv
                        } else if xv < S::zero() {
                            -gv
                        } else {
                            S::zero()
                        }
                    })
                    .collect();
                add(*input, Tensor::new(x.shape().to_vec(), data)?, sweep);
            }
            Op::SumAll { input } => {
                let shape = self.value(*input).shape().to_vec();
                add(*input, Tensor::full(&shape, g.data()[0]), sweep);
            }
            Op::MeanAll { input } => {
                let x = self.value(*input);
                let v = g.data()[0] * S::from_f64(1.0 / x.numel() as f64);
                add(*input, Tensor::full(x.shape(), v), sweep);
            }
            Op::Reshape { input } => {
                let shape = self.value(*input).shape().to_vec();
                add(*input, g.clone().reshaped(shape)?, sweep);
            }
            Op::SubbandGroup { input, offset } => {
                let x = self.value(*input);
                let [b, c4, h, w] = x.dims4("subband_group")?;
                let c = c4 / 4;
                let plane = h * w;
                let mut din = Tensor::zeros(x.shape());
                for bi in 0..b {
                    for ci in 0..c {
                        let dst = (bi * c4 + 4 * ci + offset) * plane;
                        let src = (bi * c + ci) * plane;
                        din.data_mut()[dst..dst + plane]
                            .copy_from_slice(&g.data()[src..src + plane]);
                    }
                }
                add(*input, din, sweep);
            }
            Op::ZeroPad2d { input, .. } => {
                let x = self.value(*input);
                let [b, c, h, w] = x.dims4("zero_pad2d")?;
                let [_, _, ph, pw] = g.dims4("zero_pad2d upstream grad")?;
                let mut din = Tensor::zeros(x.shape());
                for i in 0..b * c {
                    for y in 0..h {
                        let src = (i * ph + y) * pw;
                        let dst = (i * h + y) * w;
                        din.data_mut()[dst..dst + w]
                            .copy_from_slice(&g.data()[src..src + w]);
                    }
                }
                add(*input, din, sweep);
            }
            Op::CropTopLeft { input, h, w } => {
                let x = self.value(*input);
                let [b, c, xh, xw] = x.dims4("crop2d")?;
                let mut din = Tensor::zeros(x.shape());
                for i in 0..b * c {
                    for y in 0..*h {
                        let src = (i * h + y) * w;
                        let dst = (i * xh + y) * xw;
                        din.data_mut()[dst..dst + w]
                            .copy_from_slice(&g.data()[src..src + w]);
                    }
                }
                add(*input, din, sweep);
            }
        }
        Ok(())
    }

    /// Reduce a full-shape gradient down to the shape of `target` when the
    /// target was broadcast (sum over the spatial axes), or pass it through.
    fn reduce_to(&self, g: &Tensor<S>, target: TensorId) -> Result<Tensor<S>> {
        let t = self.value(target);
        if t.shape() == g.shape() {
            return Ok(g.clone());
        }
        let [b, c, h, w] = g.dims4("broadcast reduce")?;
        let plane = h * w;
        let mut out = Tensor::zeros(&[b, c, 1, 1]);
        for i in 0..b * c {
            let mut acc = S::zero();
            for &v in &g.data()[i * plane..(i + 1) * plane] {
                acc = acc + v;
            }
            out.data_mut()[i] = acc;
        }
        Ok(out)
    }
}

fn accumulate<S: Scalar>(acc: &mut Tensor<S>, inc: &Tensor<S>) {
    debug_assert_eq!(acc.shape(), inc.shape());
    for (a, &b) in acc.data_mut().iter_mut().zip(inc.data()) {
        *a = *a + b;
    }
}

fn zip_mul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let data: Vec<S> = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// `g [B,C,H,W] * gate [B,C,1,1]`, expanded over the plane.
fn gate_expand_mul<S: Scalar>(g: &Tensor<S>, gate: &Tensor<S>) -> Result<Tensor<S>> {
    let [b, c, h, w] = g.dims4("gate expand")?;
    let plane = h * w;
    let mut out = Tensor::zeros(g.shape());
    for i in 0..b * c {
        let gv = gate.data()[i];
        let src = &g.data()[i * plane..(i + 1) * plane];
        let dst = &mut out.data_mut()[i * plane..(i + 1) * plane];
        for (o, &v) in dst.iter_mut().zip(src) {
            *o = v * gv;
        }
    }
    Ok(out)
}

/// Gradient of a `[B,C,1,1]` gate: the per-channel spatial sum of `g * other`.
fn gate_reduce_mul<S: Scalar>(g: &Tensor<S>, other: &Tensor<S>) -> Result<Tensor<S>> {
    let [b, c, h, w] = g.dims4("gate reduce")?;
    let plane = h * w;
    let mut out = Tensor::zeros(&[b, c, 1, 1]);
    for i in 0..b * c {
        let mut acc = S::zero();
        let gs = &g.data()[i * plane..(i + 1) * plane];
        let os = &other.data()[i * plane..(i + 1) * plane];
        for (&gv, &ov) in gs.iter().zip(os) {
            acc = acc + gv * ov;
        }
        out.data_mut()[i] = acc;
    }
    Ok(out)
}

fn stable_sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
