//! Sequence and picture parameter sets.

use serde::{Deserialize, Serialize};

use super::bits::BitReader;
use super::nal::{NalUnit, NAL_PPS, NAL_SPS};
use super::BitstreamError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpsInfo {
    pub profile_idc: u8,
    pub level_idc: u8,
    pub sps_id: u32,
    pub chroma_format_idc: u32,
    pub separate_colour_plane: bool,
    pub log2_max_frame_num: u32,
    pub pic_order_cnt_type: u32,
    pub log2_max_pic_order_cnt_lsb: u32,
    pub delta_pic_order_always_zero: bool,
    pub max_num_ref_frames: u32,
    pub pic_width_mbs: u32,
    pub pic_height_map_units: u32,
    pub frame_mbs_only: bool,
    /// Crop offsets (left, right, top, bottom) in crop units, when signalled.
    pub frame_crop: Option<[u32; 4]>,
    pub vui_present: bool,
}

impl SpsInfo {
    pub fn width(&self) -> u32 {
        16 * self.pic_width_mbs
    }

    pub fn height(&self) -> u32 {
        16 * self.pic_height_map_units * (2 - u32::from(self.frame_mbs_only))
    }

    /// `ChromaArrayType` as defined by the syntax.
    pub fn chroma_array_type(&self) -> u32 {
        if self.separate_colour_plane {
            0
        } else {
            self.chroma_format_idc
        }
    }

    /// Display dimensions after applying the cropping window.
    pub fn cropped_dims(&self) -> (u32, u32) {
        let Some([l, r, t, b]) = self.frame_crop else {
            return (self.width(), self.height());
        };
        let (crop_x, crop_y) = match self.chroma_array_type() {
            0 => (1, 2 - u32::from(self.frame_mbs_only)),
            1 => (2, 2 * (2 - u32::from(self.frame_mbs_only))),
            2 => (2, 2 - u32::from(self.frame_mbs_only)),
            _ => (1, 2 - u32::from(self.frame_mbs_only)),
        };
        (
            self.width().saturating_sub(crop_x * (l + r)),
            self.height().saturating_sub(crop_y * (t + b)),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntropyMode {
    #[serde(rename = "CAVLC")]
    Cavlc,
    #[serde(rename = "CABAC")]
    Cabac,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PpsInfo {
    pub pps_id: u32,
    pub sps_id: u32,
    pub pic_init_qp: i32,
    pub entropy_mode: EntropyMode,
    pub bottom_field_pic_order_in_frame_present: bool,
    pub num_slice_groups: u32,
    pub slice_group_map_type: u32,
    pub slice_group_change_rate: u32,
    pub num_ref_idx_l0_default_active: u32,
    pub num_ref_idx_l1_default_active: u32,
    pub weighted_pred: bool,
    pub weighted_bipred_idc: u32,
    pub deblocking_filter_control_present: bool,
    pub redundant_pic_cnt_present: bool,
}

const HIGH_PROFILES: [u8; 13] = [100, 110, 122, 244, 44, 83, 86, 118, 128, 138, 139, 134, 135];

fn malformed_sps(e: BitstreamError) -> BitstreamError {
    match e {
        BitstreamError::MalformedSps(_) => e,
        other => BitstreamError::MalformedSps(other.to_string()),
    }
}

fn check(cond: bool, what: &str) -> Result<(), BitstreamError> {
    if cond {
        Ok(())
    } else {
        Err(BitstreamError::MalformedSps(format!("{what} out of range")))
    }
}

fn skip_scaling_list(r: &mut BitReader, size: usize) -> Result<(), BitstreamError> {
    let mut last = 8i32;
    let mut next = 8i32;
    for _ in 0..size {
        if next != 0 {
            let delta = r.read_se()?;
            check((-128..=127).contains(&delta), "delta_scale")?;
            next = (last + delta + 256) % 256;
        }
        if next != 0 {
            last = next;
        }
    }
    Ok(())
}

fn skip_hrd(r: &mut BitReader) -> Result<(), BitstreamError> {
    let cpb_cnt = r.read_ue()?.saturating_add(1);
    check(cpb_cnt <= 32, "cpb_cnt_minus1")?;
    r.skip_bits(8)?; // bit_rate_scale, cpb_size_scale
    for _ in 0..cpb_cnt {
        r.read_ue()?;
        r.read_ue()?;
        r.read_flag()?;
    }
    r.skip_bits(20)?; // four 5-bit delay/length fields
    Ok(())
}

fn skip_vui(r: &mut BitReader) -> Result<(), BitstreamError> {
    if r.read_flag()? {
        let aspect_ratio_idc = r.read_bits(8)?;
        if aspect_ratio_idc == 255 {
            r.skip_bits(32)?;
        }
    }
    if r.read_flag()? {
        r.skip_bits(1)?;
    }
    if r.read_flag()? {
        r.skip_bits(4)?; // video_format, video_full_range_flag
        if r.read_flag()? {
            r.skip_bits(24)?;
        }
    }
    if r.read_flag()? {
        r.read_ue()?;
        r.read_ue()?;
    }
    if r.read_flag()? {
        r.skip_bits(65)?; // num_units_in_tick, time_scale, fixed_frame_rate_flag
    }
    let nal_hrd = r.read_flag()?;
    if nal_hrd {
        skip_hrd(r)?;
    }
    let vcl_hrd = r.read_flag()?;
    if vcl_hrd {
        skip_hrd(r)?;
    }
    if nal_hrd || vcl_hrd {
        r.skip_bits(1)?;
    }
    r.skip_bits(1)?; // pic_struct_present_flag
    if r.read_flag()? {
        r.skip_bits(1)?;
        for _ in 0..6 {
            r.read_ue()?;
        }
    }
    Ok(())
}

/// Decodes a sequence parameter set. Every field up to and including the VUI is
/// accounted for bit-exactly; the unit must then end in valid RBSP trailing bits.
pub fn parse_sps(nal: &NalUnit) -> Result<SpsInfo, BitstreamError> {
    if nal.nal_unit_type != NAL_SPS {
        return Err(BitstreamError::MalformedSps(format!(
            "nal_unit_type {} is not an SPS",
            nal.nal_unit_type
        )));
    }
    parse_sps_rbsp(&nal.rbsp).map_err(malformed_sps)
}

fn parse_sps_rbsp(rbsp: &[u8]) -> Result<SpsInfo, BitstreamError> {
    let mut r = BitReader::new(rbsp);
    let profile_idc = r.read_bits(8)? as u8;
    r.skip_bits(8)?; // constraint_set flags + reserved_zero_2bits
    let level_idc = r.read_bits(8)? as u8;
    let sps_id = r.read_ue()?;
    check(sps_id <= 31, "seq_parameter_set_id")?;

    let mut chroma_format_idc = 1;
    let mut separate_colour_plane = false;
    if HIGH_PROFILES.contains(&profile_idc) {
        chroma_format_idc = r.read_ue()?;
        check(chroma_format_idc <= 3, "chroma_format_idc")?;
        if chroma_format_idc == 3 {
            separate_colour_plane = r.read_flag()?;
        }
        let bit_depth_luma = r.read_ue()?;
        let bit_depth_chroma = r.read_ue()?;
        check(bit_depth_luma <= 6 && bit_depth_chroma <= 6, "bit_depth")?;
        r.skip_bits(1)?; // qpprime_y_zero_transform_bypass_flag
        if r.read_flag()? {
            let lists = if chroma_format_idc == 3 { 12 } else { 8 };
            for i in 0..lists {
                if r.read_flag()? {
                    skip_scaling_list(&mut r, if i < 6 { 16 } else { 64 })?;
                }
            }
        }
    }

    let log2_max_frame_num = r.read_ue()?.saturating_add(4);
    check(log2_max_frame_num <= 16, "log2_max_frame_num_minus4")?;
    let pic_order_cnt_type = r.read_ue()?;
    check(pic_order_cnt_type <= 2, "pic_order_cnt_type")?;
    let mut log2_max_pic_order_cnt_lsb = 0;
    let mut delta_pic_order_always_zero = false;
    match pic_order_cnt_type {
        0 => {
            log2_max_pic_order_cnt_lsb = r.read_ue()?.saturating_add(4);
            check(log2_max_pic_order_cnt_lsb <= 16, "log2_max_pic_order_cnt_lsb_minus4")?;
        }
        1 => {
            delta_pic_order_always_zero = r.read_flag()?;
            r.read_se()?;
            r.read_se()?;
            let cycle = r.read_ue()?;
            check(cycle <= 255, "num_ref_frames_in_pic_order_cnt_cycle")?;
            for _ in 0..cycle {
                r.read_se()?;
            }
        }
        _ => {}
    }
    let max_num_ref_frames = r.read_ue()?;
    r.skip_bits(1)?; // gaps_in_frame_num_value_allowed_flag
    let pic_width_mbs = r.read_ue()?.saturating_add(1);
    let pic_height_map_units = r.read_ue()?.saturating_add(1);
    check(pic_width_mbs <= 2048 && pic_height_map_units <= 2048, "picture size")?;
    let frame_mbs_only = r.read_flag()?;
    if !frame_mbs_only {
        r.skip_bits(1)?;
    }
    r.skip_bits(1)?; // direct_8x8_inference_flag
    let frame_crop = if r.read_flag()? {
        let offsets = [r.read_ue()?, r.read_ue()?, r.read_ue()?, r.read_ue()?];
        check(offsets.iter().all(|&o| o <= 1 << 16), "frame_crop offset")?;
        Some(offsets)
    } else {
        None
    };
    let vui_present = r.read_flag()?;
    if vui_present {
        skip_vui(&mut r)?;
    }
    r.expect_trailing_bits()?;

    Ok(SpsInfo {
        profile_idc,
        level_idc,
        sps_id,
        chroma_format_idc,
        separate_colour_plane,
        log2_max_frame_num,
        pic_order_cnt_type,
        log2_max_pic_order_cnt_lsb,
        delta_pic_order_always_zero,
        max_num_ref_frames,
        pic_width_mbs,
        pic_height_map_units,
        frame_mbs_only,
        frame_crop,
        vui_present,
    })
}

/// Decodes the picture parameter set fields that slice-header parsing depends on.
pub fn parse_pps(nal: &NalUnit) -> Result<PpsInfo, BitstreamError> {
    if nal.nal_unit_type != NAL_PPS {
        return Err(BitstreamError::MalformedPps(format!(
            "nal_unit_type {} is not a PPS",
            nal.nal_unit_type
        )));
    }
    let to_pps = |e: BitstreamError| match e {
        BitstreamError::MalformedPps(_) => e,
        other => BitstreamError::MalformedPps(other.to_string()),
    };
    let bad = |what: &str| BitstreamError::MalformedPps(format!("{what} out of range"));

    let mut r = BitReader::new(&nal.rbsp);
    let pps_id = r.read_ue().map_err(to_pps)?;
    if pps_id > 255 {
        return Err(bad("pic_parameter_set_id"));
    }
    let sps_id = r.read_ue().map_err(to_pps)?;
    if sps_id > 31 {
        return Err(bad("seq_parameter_set_id"));
    }
    let entropy_mode = if r.read_flag().map_err(to_pps)? {
        EntropyMode::Cabac
    } else {
        EntropyMode::Cavlc
    };
    let bottom_field_pic_order_in_frame_present = r.read_flag().map_err(to_pps)?;
    let num_slice_groups = r.read_ue().map_err(to_pps)?.saturating_add(1);
    if num_slice_groups > 8 {
        return Err(bad("num_slice_groups_minus1"));
    }
    let mut slice_group_map_type = 0;
    let mut slice_group_change_rate = 1;
    if num_slice_groups > 1 {
        slice_group_map_type = r.read_ue().map_err(to_pps)?;
        match slice_group_map_type {
            0 => {
                for _ in 0..num_slice_groups {
                    r.read_ue().map_err(to_pps)?;
                }
            }
            2 => {
                for _ in 0..num_slice_groups - 1 {
                    r.read_ue().map_err(to_pps)?;
                    r.read_ue().map_err(to_pps)?;
                }
            }
            3..=5 => {
                r.skip_bits(1).map_err(to_pps)?;
                slice_group_change_rate = r.read_ue().map_err(to_pps)?.saturating_add(1);
            }
            6 => {
                let map_units = r.read_ue().map_err(to_pps)?.saturating_add(1);
                let width = 32 - (num_slice_groups - 1).leading_zeros();
                r.skip_bits(map_units as usize * width as usize).map_err(to_pps)?;
            }
            1 => {}
            _ => return Err(bad("slice_group_map_type")),
        }
    }
    let num_ref_idx_l0_default_active = r.read_ue().map_err(to_pps)?.saturating_add(1);
    let num_ref_idx_l1_default_active = r.read_ue().map_err(to_pps)?.saturating_add(1);
    if num_ref_idx_l0_default_active > 32 || num_ref_idx_l1_default_active > 32 {
        return Err(bad("num_ref_idx_default_active_minus1"));
    }
    let weighted_pred = r.read_flag().map_err(to_pps)?;
    let weighted_bipred_idc = r.read_bits(2).map_err(to_pps)?;
    let pic_init_qp = 26 + r.read_se().map_err(to_pps)?;
    if !(0..=51).contains(&pic_init_qp) {
        return Err(bad("pic_init_qp_minus26"));
    }
    r.read_se().map_err(to_pps)?; // pic_init_qs_minus26
    r.read_se().map_err(to_pps)?; // chroma_qp_index_offset
    let deblocking_filter_control_present = r.read_flag().map_err(to_pps)?;
    r.skip_bits(1).map_err(to_pps)?; // constrained_intra_pred_flag
    let redundant_pic_cnt_present = r.read_flag().map_err(to_pps)?;
    // transform_8x8_mode and friends follow when more_rbsp_data(); not needed.

    Ok(PpsInfo {
        pps_id,
        sps_id,
        pic_init_qp,
        entropy_mode,
        bottom_field_pic_order_in_frame_present,
        num_slice_groups,
        slice_group_map_type,
        slice_group_change_rate,
        num_ref_idx_l0_default_active,
        num_ref_idx_l1_default_active,
        weighted_pred,
        weighted_bipred_idc,
        deblocking_filter_control_present,
        redundant_pic_cnt_present,
    })
}
