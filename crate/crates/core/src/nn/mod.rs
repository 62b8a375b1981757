//! Minimal dense kernels with hand-written backward passes: exactly the pieces the
//! feature extractor needs, generic over the scalar type.

mod adam;
mod attention;
mod gradcheck;
mod layers;
mod mat;
mod transformer;
mod vit;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub use adam::{lr_at, Adam, AdamConfig, LrSchedule};
pub use attention::{self_attention, AttentionCache, MultiHeadAttention};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use layers::{gelu, gelu_grad, softmax, softmax_rows, Embedding, LayerNorm, LayerNormCache, Linear};
pub use mat::Mat;
pub use transformer::{Encoder, EncoderCache, TransformerLayer, TransformerLayerCache};
pub use vit::{patchify, unpatchify, ViTCache, ViTConfig, Vit};

/// Floating-point element type of every tensor. `f32` trains, `f64` verifies.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant.
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index {index} out of range for table of {size} rows")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Access to the named learnable tensors of a module, in a fixed order.
///
/// The order defines checkpoint layout and optimizer-state layout, so implementations
/// must visit fields deterministically.
pub trait Params<T: Scalar> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat<T>)>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat<T>)>);

    fn named_params(&self) -> Vec<(String, &Mat<T>)> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Mat<T>> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out.into_iter().map(|(_, m)| m).collect()
    }

    fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, m)| m.len()).sum()
    }

    /// A copy with every parameter set to zero, used as a gradient accumulator.
    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.zero();
        z
    }

    fn zero(&mut self) {
        for m in self.params_mut() {
            m.fill(T::zero());
        }
    }

    /// `self += other`, parameter by parameter.
    fn accumulate(&mut self, other: &Self) -> Result<(), NnError>
    where
        Self: Sized,
    {
        let src = other.named_params();
        let dst = self.params_mut();
        if src.len() != dst.len() {
            return Err(NnError::ShapeMismatch("parameter lists differ".into()));
        }
        for (d, (_, s)) in dst.into_iter().zip(src) {
            d.add_assign(s)?;
        }
        Ok(())
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Normal(0, std) truncated to two standard deviations, by rejection.
pub fn trunc_normal<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Mat<T> {
    Mat::from_fn(rows, cols, |_, _| loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            break T::c(z * std);
        }
    })
}

pub fn normal<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Mat<T> {
    Mat::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        T::c(z * std)
    })
}

pub fn uniform<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize, limit: f64) -> Mat<T> {
    Mat::from_fn(rows, cols, |_, _| T::c(rng.gen_range(-limit..=limit)))
}
