//! Authoring of header-only Baseline/Main streams.
//!
//! The synthetic generator emits one of these next to each synthetic video so that the
//! frame-type cross-check between parsed streams and GOP records can be exercised. Slice
//! payloads carry no macroblock data.

use super::bits::BitWriter;
use super::nal::escape_rbsp;
use crate::FrameType;

/// One coded frame to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSpec {
    pub frame_type: FrameType,
    pub is_idr: bool,
    pub qp: i32,
}

#[derive(Debug, Clone)]
pub struct HeaderStreamWriter {
    pub profile_idc: u8,
    pub level_idc: u8,
    pub width_mbs: u32,
    pub height_mbs: u32,
    pub pic_init_qp: i32,
    /// Emit a cropping window making the display size `width x height`.
    pub display_size: Option<(u32, u32)>,
    /// Split every frame into this many slices.
    pub slices_per_frame: u32,
}

const LOG2_MAX_FRAME_NUM: u32 = 4;
const LOG2_MAX_POC_LSB: u32 = 8;

impl HeaderStreamWriter {
    pub fn new(width_mbs: u32, height_mbs: u32) -> Self {
        Self {
            profile_idc: 77,
            level_idc: 30,
            width_mbs,
            height_mbs,
            pic_init_qp: 26,
            display_size: None,
            slices_per_frame: 1,
        }
    }

    fn nal(header: u8, rbsp: &[u8]) -> Vec<u8> {
        let mut out = vec![0, 0, 0, 1, header];
        out.extend(escape_rbsp(rbsp));
        out
    }

    pub fn sps(&self) -> Vec<u8> {
        let mut w = BitWriter::new();
        w.put_bits(u32::from(self.profile_idc), 8);
        w.put_bits(0, 8);
        w.put_bits(u32::from(self.level_idc), 8);
        w.put_ue(0); // sps id
        w.put_ue(LOG2_MAX_FRAME_NUM - 4);
        w.put_ue(0); // poc type
        w.put_ue(LOG2_MAX_POC_LSB - 4);
        w.put_ue(1); // max_num_ref_frames
        w.put_bit(false);
        w.put_ue(self.width_mbs - 1);
        w.put_ue(self.height_mbs - 1);
        w.put_bit(true); // frame_mbs_only
        w.put_bit(true); // direct_8x8_inference
        match self.display_size {
            Some((dw, dh)) => {
                w.put_bit(true);
                w.put_ue(0);
                w.put_ue((16 * self.width_mbs - dw) / 2);
                w.put_ue(0);
                w.put_ue((16 * self.height_mbs - dh) / 2);
            }
            None => w.put_bit(false),
        }
        w.put_bit(false); // vui
        w.put_trailing_bits();
        Self::nal(0x67, &w.into_bytes())
    }

    pub fn pps(&self) -> Vec<u8> {
        let mut w = BitWriter::new();
        w.put_ue(0);
        w.put_ue(0);
        w.put_bit(false); // CAVLC
        w.put_bit(false);
        w.put_ue(0); // one slice group
        w.put_ue(0);
        w.put_ue(0);
        w.put_bit(false);
        w.put_bits(0, 2);
        w.put_se(self.pic_init_qp - 26);
        w.put_se(0);
        w.put_se(0);
        w.put_bit(true); // deblocking_filter_control_present
        w.put_bit(false);
        w.put_bit(false);
        w.put_trailing_bits();
        Self::nal(0x68, &w.into_bytes())
    }

    fn slice(&self, f: &FrameSpec, frame_num: u32, poc: u32, first_mb: u32) -> Vec<u8> {
        let is_ref = f.frame_type != FrameType::B;
        let nal_type = if f.is_idr { 5u8 } else { 1u8 };
        let header = ((if is_ref { 3u8 } else { 0u8 }) << 5) | nal_type;
        let slice_type = match f.frame_type {
            FrameType::P => 5,
            FrameType::B => 6,
            FrameType::I => 7,
        };
        let mut w = BitWriter::new();
        w.put_ue(first_mb);
        w.put_ue(slice_type);
        w.put_ue(0);
        w.put_bits(frame_num % (1 << LOG2_MAX_FRAME_NUM), LOG2_MAX_FRAME_NUM);
        if f.is_idr {
            w.put_ue(0);
        }
        w.put_bits(poc % (1 << LOG2_MAX_POC_LSB), LOG2_MAX_POC_LSB);
        if f.frame_type == FrameType::B {
            w.put_bit(true);
        }
        if f.frame_type != FrameType::I {
            w.put_bit(false); // num_ref_idx_active_override_flag
            w.put_bit(false); // ref_pic_list_modification_flag_l0
            if f.frame_type == FrameType::B {
                w.put_bit(false);
            }
        }
        if is_ref {
            if f.is_idr {
                w.put_bits(0, 2);
            } else {
                w.put_bit(false);
            }
        }
        w.put_se(f.qp - self.pic_init_qp);
        w.put_ue(1); // disable_deblocking_filter_idc
        w.put_trailing_bits();
        Self::nal(header, &w.into_bytes())
    }

    /// Encodes SPS, PPS and one access unit per frame.
    pub fn encode(&self, frames: &[FrameSpec]) -> Vec<u8> {
        let mut out = self.sps();
        out.extend(self.pps());
        let mbs = self.width_mbs * self.height_mbs;
        let per_slice = mbs.div_ceil(self.slices_per_frame.max(1));
        let mut frame_num = 0u32;
        for (k, f) in frames.iter().enumerate() {
            if f.is_idr {
                frame_num = 0;
            }
            let mut first = 0;
            while first < mbs {
                out.extend(self.slice(f, frame_num, 2 * k as u32, first));
                first += per_slice;
            }
            if f.frame_type != FrameType::B {
                frame_num += 1;
            }
        }
        out
    }
}
