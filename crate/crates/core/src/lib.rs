//! Open-set video device matching from H.264 codec information.
//!
//! Two GOPs are mapped to feature vectors by a shared five-branch transformer
//! extractor and compared with `s = 1 - tanh(||r1 - r2||)`. The crate also carries
//! the plumbing needed to run that end to end: Annex-B header parsing, the GOP record
//! interchange format, pair-dataset construction, training and evaluation.
//!
//! Numerical code is generic over [`nn::Scalar`] (`f32` for training, `f64` for
//! gradient verification); the aliases below pin the common instantiations.

pub mod bitstream;
pub mod checkpoint;
pub mod dataset;
pub mod eval;
pub mod gop_store;
pub mod model;
pub mod nn;
pub mod synth;
pub mod train;

use serde::{Deserialize, Serialize};

/// Coded picture type as it appears in slice headers and GOP records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FrameType {
    I,
    P,
    B,
}

impl FrameType {
    /// Index into the frame-type embedding table: I=0, P=1, B=2.
    pub fn id(self) -> usize {
        match self {
            FrameType::I => 0,
            FrameType::P => 1,
            FrameType::B => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FrameType::I => "I",
            FrameType::P => "P",
            FrameType::B => "B",
        }
    }
}

impl std::str::FromStr for FrameType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "I" => Ok(FrameType::I),
            "P" => Ok(FrameType::P),
            "B" => Ok(FrameType::B),
            other => Err(format!("unknown frame type {other:?}")),
        }
    }
}

pub type Mat32 = nn::Mat<f32>;
pub type Mat64 = nn::Mat<f64>;


pub type Model32 = model::H4vdm<f32>;
pub type Model64 = model::H4vdm<f64>;
