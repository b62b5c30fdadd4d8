use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Scalar precision of a tensor computation.
///
/// Training defaults to 32-bit; gradient checking runs in 64-bit because
/// central finite differences are unreliable in single precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn tolerances(self) -> Tolerances {
        match self {
            Precision::F32 => Tolerances {
                reconstruction: 1e-5,
                fd_step: 1e-3,
                fd_rel: 1e-3,
                transpose_identity: 1e-5,
            },
            Precision::F64 => Tolerances {
                reconstruction: 1e-12,
                fd_step: 1e-6,
                fd_rel: 1e-6,
                transpose_identity: 1e-10,
            },
        }
    }

    /// Tag byte used in the checkpoint header.
    pub fn tag(self) -> u8 {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            4 => Some(Precision::F32),
            8 => Some(Precision::F64),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "f32" | "32" => Some(Precision::F32),
            "f64" | "64" => Some(Precision::F64),
            _ => None,
        }
    }
}

/// Numeric tolerances keyed by precision.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Max abs error allowed for idwt2d(dwt2d(x)) = x and energy preservation.
    pub reconstruction: f64,
    /// Central finite-difference step.
    pub fd_step: f64,
    /// Relative error bound for analytic-vs-FD gradient comparison.
    pub fd_rel: f64,
    /// Inner-product bound for the conv/transposed-conv transpose identity.
    pub transpose_identity: f64,
}

/// Element type of tensors: f32 for training, f64 for gradient checks.
pub trait Scalar:
    Float + Sum + Debug + Display + Default + Send + Sync + 'static
{
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// Size of one scalar in bytes (matches the checkpoint precision tag).
    fn byte_width() -> usize {
        Self::PRECISION.tag() as usize
    }
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::F64;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ])
    }
}
