use crate::error::{shape_string, Error, Result};
use crate::scalar::Scalar;

/// Dense row-major N-D array of real scalars. Value-semantic: cloning copies
/// the data, and tensors can move freely between threads.
///
/// The canonical image layout is `[channels, height, width]`, batched as
/// `[batch, channels, height, width]`. Scalars are tensors with one element.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "tensor extents must be positive, got {}",
                shape_string(&shape)
            )));
        }
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                context: "Tensor::new",
                expected: format!("{} elements for shape {}", numel, shape_string(&shape)),
                got: format!("{} elements", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![S::zero(); numel] }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, S::one())
    }

    pub fn scalar(value: S) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn from_f64_slice(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| S::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> Result<S> {
        if !self.is_scalar() {
            return Err(Error::NonScalarLoss { shape: shape_string(&self.shape) });
        }
        Ok(self.data[0])
    }

    /// Interpret as `[batch, channels, height, width]`.
    pub fn dims4(&self, context: &'static str) -> Result<[usize; 4]> {
        match self.shape.as_slice() {
            &[b, c, h, w] => Ok([b, c, h, w]),
            other => Err(Error::ShapeMismatch {
                context,
                expected: "rank-4 BxCxHxW".to_string(),
                got: shape_string(other),
            }),
        }
    }

    pub fn same_shape(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                context,
                expected: shape_string(&self.shape),
                got: shape_string(&other.shape),
            });
        }
        Ok(())
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::ShapeMismatch {
                context: "reshape",
                expected: format!("{} elements", self.data.len()),
                got: format!("shape {} with {} elements", shape_string(&shape), numel),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.max(S::zero()).min(S::one()))
    }

    pub fn min_value(&self) -> S {
        self.data.iter().copied().fold(S::infinity(), |a, b| a.min(b))
    }

    pub fn max_value(&self) -> S {
        self.data.iter().copied().fold(S::neg_infinity(), |a, b| a.max(b))
    }

    /// Sum of all elements, accumulated in f64 for stable reductions.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn mean_f64(&self) -> f64 {
        self.sum_f64() / self.data.len() as f64
    }

    /// Squared L2 norm, accumulated in f64.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum()
    }

    /// Mean squared difference, accumulated in f64.
    pub fn mse(&self, other: &Self) -> Result<f64> {
        self.same_shape(other, "mse")?;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = a.as_f64() - b.as_f64();
                d * d
            })
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    /// Convert element type, e.g. an f32 image to f64 for gradient checks.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
        }
    }

    /// Stack rank-3 `[C,H,W]` tensors into a `[N,C,H,W]` batch.
    pub fn stack(items: &[Tensor<S>]) -> Result<Tensor<S>> {
        let first = items.first().ok_or_else(|| {
            Error::InvalidArgument("cannot stack an empty tensor list".to_string())
        })?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for item in items {
            item.same_shape(first, "stack")?;
            data.extend_from_slice(&item.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }

    /// Extract batch element `n` of a `[N,C,H,W]` tensor as `[C,H,W]`.
    pub fn unstack(&self, n: usize) -> Result<Tensor<S>> {
        let [b, c, h, w] = self.dims4("unstack")?;
        if n >= b {
            return Err(Error::InvalidArgument(format!(
                "batch index {n} out of range for batch size {b}"
            )));
        }
        let len = c * h * w;
        Ok(Tensor {
            shape: vec![c, h, w],
            data: self.data[n * len..(n + 1) * len].to_vec(),
        })
    }
}

/// Mirror-pad a `[C,H,W]` image on the bottom/right so its spatial dims reach
/// the next multiple of `m`. Reflection excludes the border sample and folds
/// indices with period `2(n-1)`, so any pad amount is valid.
pub fn reflect_pad_to_multiple<S: Scalar>(x: &Tensor<S>, m: usize) -> Result<Tensor<S>> {
    let shape = x.shape();
    let (c, h, w) = match shape {
        &[c, h, w] => (c, h, w),
        other => {
            return Err(Error::ShapeMismatch {
                context: "reflect_pad_to_multiple",
                expected: "rank-3 CxHxW".to_string(),
                got: shape_string(other),
            })
        }
    };
    let ph = h.div_ceil(m) * m;
    let pw = w.div_ceil(m) * m;
    if ph == h && pw == w {
        return Ok(x.clone());
    }
    let mirror = |i: usize, n: usize| -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let j = i % period;
        if j < n {
            j
        } else {
            period - j
        }
    };
    let mut out = Tensor::zeros(&[c, ph, pw]);
    let src = x.data();
    let dst = out.data_mut();
    for ci in 0..c {
        for y in 0..ph {
            let sy = mirror(y, h);
            for xx in 0..pw {
                let sx = mirror(xx, w);
                dst[(ci * ph + y) * pw + xx] = src[(ci * h + sy) * w + sx];
            }
        }
    }
    Ok(out)
}

/// Crop a `[C,H,W]` image back to `h x w` from the top-left corner.
pub fn crop_top_left<S: Scalar>(x: &Tensor<S>, h: usize, w: usize) -> Result<Tensor<S>> {
    let shape = x.shape();
    let (c, xh, xw) = match shape {
        &[c, xh, xw] => (c, xh, xw),
        other => {
            return Err(Error::ShapeMismatch {
                context: "crop_top_left",
                expected: "rank-3 CxHxW".to_string(),
                got: shape_string(other),
            })
        }
    };
    if h > xh || w > xw {
        return Err(Error::InvalidArgument(format!(
            "crop {h}x{w} larger than image {xh}x{xw}"
        )));
    }
    let mut out = Tensor::zeros(&[c, h, w]);
    let src = x.data();
    let dst = out.data_mut();
    for ci in 0..c {
        for y in 0..h {
            let s = (ci * xh + y) * xw;
            let d = (ci * h + y) * w;
            dst[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
    Ok(out)
}
