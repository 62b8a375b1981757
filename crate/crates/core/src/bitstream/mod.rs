//! H.264 Annex-B syntax extraction: NAL units, parameter sets, slice headers and GOPs.
//!
//! Only header syntax is decoded. Macroblock data, pixels and containers are out of
//! reach of this module; decoded frames enter the crate through [`crate::gop_store`].

mod bits;
mod gop;
mod nal;
mod slice;
mod sps;
pub mod writer;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bits::{BitReader, BitWriter};
pub use gop::{merge_slices, segment_gops, GopBoundary, GopMode};
pub use nal::{escape_rbsp, find_nal_units, unescape_rbsp, NalUnit, NAL_AUD, NAL_IDR_SLICE, NAL_PPS, NAL_SEI, NAL_SLICE, NAL_SPS};
pub use slice::{parse_slice_header, SliceHeaderInfo};
pub use sps::{parse_pps, parse_sps, EntropyMode, PpsInfo, SpsInfo};

use crate::FrameType;

#[derive(Debug, Error)]
pub enum BitstreamError {
    #[error("no Annex-B start code found")]
    NoStartCode,
    #[error("bitstream exhausted")]
    BitstreamExhausted,
    #[error("Exp-Golomb code longer than 32 bits")]
    ExpGolombOverflow,
    #[error("invalid rbsp_trailing_bits at bit {0}")]
    TrailingBits(usize),
    #[error("malformed SPS: {0}")]
    MalformedSps(String),
    #[error("malformed PPS: {0}")]
    MalformedPps(String),
    #[error("malformed slice header: {0}")]
    MalformedSliceHeader(String),
    #[error("unsupported slice type {0} (SP/SI)")]
    UnsupportedSliceType(u32),
    #[error("slice references missing parameter set {0}")]
    MissingParameterSet(String),
    #[error("stream contains no I frame")]
    NoIFrame,
    #[error("NAL unit at byte offset {offset}: {source}")]
    AtNal {
        offset: usize,
        #[source]
        source: Box<BitstreamError>,
    },
}

impl BitstreamError {
    fn at(self, offset: usize) -> Self {
        BitstreamError::AtNal {
            offset,
            source: Box::new(self),
        }
    }

    /// Byte offset of the NAL unit that failed, when known.
    pub fn nal_offset(&self) -> Option<usize> {
        match self {
            BitstreamError::AtNal { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NalSummary {
    pub offset: usize,
    pub nal_ref_idc: u8,
    pub nal_unit_type: u8,
    pub rbsp_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub index: usize,
    pub frame_type: FrameType,
    pub slice_qp: i32,
    pub is_idr: bool,
    pub frame_num: u32,
    pub slice_count: usize,
    /// GOP the frame belongs to; absent for frames preceding the first I frame.
    pub gop_index: Option<usize>,
}

/// Everything extracted from one elementary stream; this is the `parse` JSON document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamReport {
    pub gop_mode: GopMode,
    pub nal_units: Vec<NalSummary>,
    pub sps: Vec<SpsInfo>,
    pub pps: Vec<PpsInfo>,
    pub frames: Vec<FrameSummary>,
    pub gops: Vec<GopBoundary>,
}

impl StreamReport {
    pub fn frame_types(&self) -> Vec<FrameType> {
        self.frames.iter().map(|f| f.frame_type).collect()
    }
}

/// Parses a complete Annex-B stream. Errors carry the offset of the failing NAL unit.
pub fn parse_stream(stream: &[u8], mode: GopMode) -> Result<StreamReport, BitstreamError> {
    let units = find_nal_units(stream)?;
    let mut sps_map: BTreeMap<u32, SpsInfo> = BTreeMap::new();
    let mut pps_map: BTreeMap<u32, PpsInfo> = BTreeMap::new();
    let mut slices = Vec::new();
    let mut slice_counts: Vec<usize> = Vec::new();

    for u in &units {
        match u.nal_unit_type {
            NAL_SPS => {
                let sps = parse_sps(u).map_err(|e| e.at(u.offset))?;
                sps_map.insert(sps.sps_id, sps);
            }
            NAL_PPS => {
                let pps = parse_pps(u).map_err(|e| e.at(u.offset))?;
                pps_map.insert(pps.pps_id, pps);
            }
            NAL_SLICE | NAL_IDR_SLICE => {
                let pps_id = slice::peek_pps_id(u).map_err(|e| e.at(u.offset))?;
                let pps = pps_map
                    .get(&pps_id)
                    .ok_or_else(|| BitstreamError::MissingParameterSet(format!("pps {pps_id}")).at(u.offset))?;
                let sps = sps_map
                    .get(&pps.sps_id)
                    .ok_or_else(|| BitstreamError::MissingParameterSet(format!("sps {}", pps.sps_id)).at(u.offset))?;
                let header = parse_slice_header(u, sps, pps).map_err(|e| e.at(u.offset))?;
                let starts_frame = header.first_mb_in_slice == 0
                    || slices
                        .last()
                        .map(|p: &SliceHeaderInfo| p.frame_num != header.frame_num)
                        .unwrap_or(true);
                if starts_frame {
                    slice_counts.push(1);
                } else if let Some(c) = slice_counts.last_mut() {
                    *c += 1;
                }
                slices.push(header);
            }
            _ => {}
        }
    }

    let frames = merge_slices(&slices);
    debug_assert_eq!(frames.len(), slice_counts.len());
    let gops = segment_gops(&frames, mode)?;
    let mut gop_of = vec![None; frames.len()];
    for g in &gops {
        for k in 0..g.length {
            gop_of[g.start_frame_index + k] = Some(g.gop_index);
        }
    }

    Ok(StreamReport {
        gop_mode: mode,
        nal_units: units
            .iter()
            .map(|u| NalSummary {
                offset: u.offset,
                nal_ref_idc: u.nal_ref_idc,
                nal_unit_type: u.nal_unit_type,
                rbsp_len: u.rbsp.len(),
            })
            .collect(),
        sps: sps_map.into_values().collect(),
        pps: pps_map.into_values().collect(),
        frames: frames
            .iter()
            .enumerate()
            .map(|(index, f)| FrameSummary {
                index,
                frame_type: f.frame_type,
                slice_qp: f.slice_qp,
                is_idr: f.is_idr,
                frame_num: f.frame_num,
                slice_count: slice_counts[index],
                gop_index: gop_of[index],
            })
            .collect(),
        gops,
    })
}
