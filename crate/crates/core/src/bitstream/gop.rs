//! Frame assembly from slices and GOP segmentation.

use serde::{Deserialize, Serialize};

use super::slice::SliceHeaderInfo;
use super::BitstreamError;
use crate::FrameType;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GopBoundary {
    pub gop_index: usize,
    pub start_frame_index: usize,
    pub length: usize,
    pub frame_types: Vec<FrameType>,
}

/// Which frames may open a GOP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GopMode {
    /// A GOP starts at every IDR frame.
    #[default]
    Closed,
    /// A GOP starts at every I frame, IDR or not.
    Open,
}

/// Collapses slices into frames: a slice with `first_mb_in_slice == 0` opens a frame and
/// following slices with the same `frame_num` belong to it. The frame takes the header of
/// its opening slice.
pub fn merge_slices(slices: &[SliceHeaderInfo]) -> Vec<SliceHeaderInfo> {
    let mut frames: Vec<SliceHeaderInfo> = Vec::new();
    for s in slices {
        let continues = s.first_mb_in_slice > 0
            && frames.last().map(|f| f.frame_num == s.frame_num).unwrap_or(false);
        if !continues {
            frames.push(s.clone());
        }
    }
    frames
}

/// Splits a decode-order frame sequence into GOPs.
///
/// The first I frame always opens a GOP; later GOPs open at IDR frames (closed mode) or
/// any I frame (open mode). Frames decoded before the first I frame have no anchor and are
/// dropped with a warning.
pub fn segment_gops(frames: &[SliceHeaderInfo], mode: GopMode) -> Result<Vec<GopBoundary>, BitstreamError> {
    let first_i = frames
        .iter()
        .position(|f| f.frame_type == FrameType::I)
        .ok_or(BitstreamError::NoIFrame)?;
    if first_i > 0 {
        log::warn!("{first_i} leading frame(s) precede the first I frame and belong to no GOP");
    }
    let mut gops: Vec<GopBoundary> = Vec::new();
    for (idx, f) in frames.iter().enumerate().skip(first_i) {
        let anchor = idx == first_i
            || match mode {
                GopMode::Closed => f.is_idr,
                GopMode::Open => f.frame_type == FrameType::I,
            };
        if anchor {
            gops.push(GopBoundary {
                gop_index: gops.len(),
                start_frame_index: idx,
                length: 0,
                frame_types: Vec::new(),
            });
        }
        let g = gops.last_mut().expect("first frame is an anchor");
        g.length += 1;
        g.frame_types.push(f.frame_type);
    }
    Ok(gops)
}
