//! Slice header decoding up to `slice_qp_delta`.

use serde::{Deserialize, Serialize};

use super::bits::BitReader;
use super::nal::{NalUnit, NAL_IDR_SLICE, NAL_SLICE};
use super::sps::{EntropyMode, PpsInfo, SpsInfo};
use super::BitstreamError;
use crate::FrameType;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceHeaderInfo {
    pub first_mb_in_slice: u32,
    pub frame_type: FrameType,
    pub frame_num: u32,
    pub slice_qp: i32,
    pub pps_id: u32,
    pub is_idr: bool,
}

fn malformed(e: BitstreamError) -> BitstreamError {
    match e {
        BitstreamError::MalformedSliceHeader(_) | BitstreamError::UnsupportedSliceType(_) => e,
        other => BitstreamError::MalformedSliceHeader(other.to_string()),
    }
}

fn bad(what: &str) -> BitstreamError {
    BitstreamError::MalformedSliceHeader(format!("{what} out of range"))
}

fn skip_ref_pic_list_modification(r: &mut BitReader) -> Result<(), BitstreamError> {
    if r.read_flag()? {
        loop {
            match r.read_ue()? {
                0..=2 => {
                    r.read_ue()?;
                }
                3 => break,
                _ => return Err(bad("modification_of_pic_nums_idc")),
            }
        }
    }
    Ok(())
}

fn skip_pred_weight_table(
    r: &mut BitReader,
    chroma_array_type: u32,
    num_l0: u32,
    num_l1: Option<u32>,
) -> Result<(), BitstreamError> {
    r.read_ue()?; // luma_log2_weight_denom
    if chroma_array_type != 0 {
        r.read_ue()?;
    }
    for count in std::iter::once(num_l0).chain(num_l1) {
        for _ in 0..count {
            if r.read_flag()? {
                r.read_se()?;
                r.read_se()?;
            }
            if chroma_array_type != 0 && r.read_flag()? {
                for _ in 0..4 {
                    r.read_se()?;
                }
            }
        }
    }
    Ok(())
}

fn skip_dec_ref_pic_marking(r: &mut BitReader, idr: bool) -> Result<(), BitstreamError> {
    if idr {
        r.skip_bits(2)?;
        return Ok(());
    }
    if r.read_flag()? {
        loop {
            let op = r.read_ue()?;
            match op {
                0 => break,
                1 | 3 => {
                    r.read_ue()?;
                    if op == 3 {
                        r.read_ue()?;
                    }
                }
                2 | 6 => {
                    r.read_ue()?;
                }
                4 => {
                    r.read_ue()?;
                }
                5 => {}
                _ => return Err(bad("memory_management_control_operation")),
            }
        }
    }
    Ok(())
}

/// Parses a coded-slice header through `slice_qp_delta`.
///
/// SP and SI slices are rejected with [`BitstreamError::UnsupportedSliceType`].
pub fn parse_slice_header(nal: &NalUnit, sps: &SpsInfo, pps: &PpsInfo) -> Result<SliceHeaderInfo, BitstreamError> {
    if !matches!(nal.nal_unit_type, NAL_SLICE | NAL_IDR_SLICE) {
        return Err(BitstreamError::MalformedSliceHeader(format!(
            "nal_unit_type {} is not a coded slice",
            nal.nal_unit_type
        )));
    }
    parse_inner(nal, sps, pps).map_err(malformed)
}

/// Reads only `first_mb_in_slice`, `slice_type` and `pic_parameter_set_id`.
pub(crate) fn peek_pps_id(nal: &NalUnit) -> Result<u32, BitstreamError> {
    let mut r = BitReader::new(&nal.rbsp);
    r.read_ue().map_err(malformed)?;
    r.read_ue().map_err(malformed)?;
    r.read_ue().map_err(malformed)
}

fn parse_inner(nal: &NalUnit, sps: &SpsInfo, pps: &PpsInfo) -> Result<SliceHeaderInfo, BitstreamError> {
    let is_idr = nal.nal_unit_type == NAL_IDR_SLICE;
    let mut r = BitReader::new(&nal.rbsp);
    let first_mb_in_slice = r.read_ue()?;
    let slice_type = r.read_ue()?;
    if slice_type > 9 {
        return Err(bad("slice_type"));
    }
    let frame_type = match slice_type % 5 {
        0 => FrameType::P,
        1 => FrameType::B,
        2 => FrameType::I,
        other => return Err(BitstreamError::UnsupportedSliceType(other)),
    };
    let pps_id = r.read_ue()?;
    if pps_id != pps.pps_id {
        return Err(BitstreamError::MalformedSliceHeader(format!(
            "slice refers to pps {pps_id}, got pps {}",
            pps.pps_id
        )));
    }
    if sps.separate_colour_plane {
        r.skip_bits(2)?;
    }
    let frame_num = r.read_bits(sps.log2_max_frame_num)?;
    let mut field_pic = false;
    if !sps.frame_mbs_only {
        field_pic = r.read_flag()?;
        if field_pic {
            r.skip_bits(1)?;
        }
    }
    if is_idr {
        r.read_ue()?; // idr_pic_id
    }
    if sps.pic_order_cnt_type == 0 {
        r.skip_bits(sps.log2_max_pic_order_cnt_lsb as usize)?;
        if pps.bottom_field_pic_order_in_frame_present && !field_pic {
            r.read_se()?;
        }
    }
    if sps.pic_order_cnt_type == 1 && !sps.delta_pic_order_always_zero {
        r.read_se()?;
        if pps.bottom_field_pic_order_in_frame_present && !field_pic {
            r.read_se()?;
        }
    }
    if pps.redundant_pic_cnt_present {
        r.read_ue()?;
    }
    let is_b = frame_type == FrameType::B;
    let is_p = frame_type == FrameType::P;
    if is_b {
        r.skip_bits(1)?; // direct_spatial_mv_pred_flag
    }
    let mut num_l0 = pps.num_ref_idx_l0_default_active;
    let mut num_l1 = pps.num_ref_idx_l1_default_active;
    if is_p || is_b {
        if r.read_flag()? {
            num_l0 = r.read_ue()?.saturating_add(1);
            if is_b {
                num_l1 = r.read_ue()?.saturating_add(1);
            }
        }
        if num_l0 > 32 || num_l1 > 32 {
            return Err(bad("num_ref_idx_active_minus1"));
        }
    }
    if frame_type != FrameType::I {
        skip_ref_pic_list_modification(&mut r)?;
        if is_b {
            skip_ref_pic_list_modification(&mut r)?;
        }
    }
    if (pps.weighted_pred && is_p) || (pps.weighted_bipred_idc == 1 && is_b) {
        skip_pred_weight_table(&mut r, sps.chroma_array_type(), num_l0, is_b.then_some(num_l1))?;
    }
    if nal.nal_ref_idc != 0 {
        skip_dec_ref_pic_marking(&mut r, is_idr)?;
    }
    if pps.entropy_mode == EntropyMode::Cabac && frame_type != FrameType::I {
        let cabac_init_idc = r.read_ue()?;
        if cabac_init_idc > 2 {
            return Err(bad("cabac_init_idc"));
        }
    }
    let slice_qp_delta = r.read_se()?;
    let slice_qp = pps.pic_init_qp.saturating_add(slice_qp_delta);
    if !(0..=51).contains(&slice_qp) {
        return Err(BitstreamError::MalformedSliceHeader(format!(
            "slice_qp {slice_qp} outside 0..=51"
        )));
    }
    Ok(SliceHeaderInfo {
        first_mb_in_slice,
        frame_type,
        frame_num,
        slice_qp,
        pps_id,
        is_idr,
    })
}
