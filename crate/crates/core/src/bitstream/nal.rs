//! Annex-B start-code scanning and emulation-prevention removal.

use serde::{Deserialize, Serialize};

use super::BitstreamError;

pub const NAL_SLICE: u8 = 1;
pub const NAL_IDR_SLICE: u8 = 5;
pub const NAL_SEI: u8 = 6;
pub const NAL_SPS: u8 = 7;
pub const NAL_PPS: u8 = 8;
pub const NAL_AUD: u8 = 9;

/// One NAL unit located in an Annex-B stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NalUnit {
    /// Byte index of the NAL header (the first byte after the start code).
    pub offset: usize,
    pub nal_ref_idc: u8,
    pub nal_unit_type: u8,
    /// Payload after the header byte with emulation-prevention bytes removed.
    pub rbsp: Vec<u8>,
}

impl NalUnit {
    pub fn is_slice(&self) -> bool {
        matches!(self.nal_unit_type, NAL_SLICE | NAL_IDR_SLICE)
    }
}

/// Returns the index just past each start code (`00 00 01`, optionally preceded by a
/// further zero byte).
fn start_code_ends(stream: &[u8]) -> Vec<usize> {
    let mut ends = Vec::new();
    let mut i = 0;
    while i + 2 < stream.len() {
        if stream[i] == 0 && stream[i + 1] == 0 {
            if stream[i + 2] == 1 {
                ends.push(i + 3);
                i += 3;
                continue;
            }
            // Keep scanning one byte at a time so `00 00 00 01` is caught at i + 1.
        }
        i += 1;
    }
    ends
}

/// Splits an Annex-B byte stream into NAL units.
///
/// Bytes before the first start code are ignored. Zero bytes immediately preceding the
/// next start code (the leading zero of a four-byte start code, or `trailing_zero_8bits`)
/// are not part of the unit.
pub fn find_nal_units(stream: &[u8]) -> Result<Vec<NalUnit>, BitstreamError> {
    let ends = start_code_ends(stream);
    if ends.is_empty() {
        return Err(BitstreamError::NoStartCode);
    }
    let mut units = Vec::with_capacity(ends.len());
    for (k, &begin) in ends.iter().enumerate() {
        let mut end = match ends.get(k + 1) {
            Some(&next) => next - 3,
            None => stream.len(),
        };
        while end > begin && stream[end - 1] == 0 {
            end -= 1;
        }
        if end <= begin {
            continue;
        }
        let header = stream[begin];
        units.push(NalUnit {
            offset: begin,
            nal_ref_idc: (header >> 5) & 0x3,
            nal_unit_type: header & 0x1f,
            rbsp: unescape_rbsp(&stream[begin + 1..end]),
        });
    }
    if units.is_empty() {
        return Err(BitstreamError::NoStartCode);
    }
    Ok(units)
}

/// Removes emulation-prevention bytes: the `03` in every `00 00 03 xx` with `xx <= 03`.
///
/// A `00 00 03` with nothing after it is passed through untouched.
pub fn unescape_rbsp(ebsp: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(ebsp.len());
    let mut zeros = 0usize;
    let mut i = 0;
    while i < ebsp.len() {
        let b = ebsp[i];
        if zeros >= 2 && b == 0x03 && i + 1 < ebsp.len() && ebsp[i + 1] <= 0x03 {
            zeros = 0;
            i += 1;
            continue;
        }
        out.push(b);
        zeros = if b == 0 { zeros + 1 } else { 0 };
        i += 1;
    }
    out
}

/// Inserts emulation-prevention bytes so the payload contains no `00 00 0x` (x <= 3).
pub fn escape_rbsp(rbsp: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(rbsp.len() + rbsp.len() / 64 + 1);
    let mut zeros = 0usize;
    for &b in rbsp {
        if zeros >= 2 && b <= 0x03 {
            out.push(0x03);
            zeros = 0;
        }
        out.push(b);
        zeros = if b == 0 { zeros + 1 } else { 0 };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_three_byte_start_code() {
        let units = find_nal_units(&[0x00, 0x00, 0x01, 0x67, 0x42]).unwrap();
        assert_eq!(units.len(), 1);
        assert_eq!(units[0].nal_unit_type, 7);
        assert_eq!(units[0].nal_ref_idc, 3);
        assert_eq!(units[0].offset, 3);
        assert_eq!(units[0].rbsp, vec![0x42]);
    }

    #[test]
    fn mixed_start_code_lengths() {
        let s = [0x00, 0x00, 0x00, 0x01, 0x65, 0x88, 0x00, 0x00, 0x01, 0x41, 0x9A];
        let units = find_nal_units(&s).unwrap();
        let types: Vec<u8> = units.iter().map(|u| u.nal_unit_type).collect();
        assert_eq!(types, vec![5, 1]);
        assert_eq!(units[0].rbsp, vec![0x88]);
        assert_eq!(units[1].rbsp, vec![0x9A]);
        assert_eq!(units[1].offset, 9);
    }

    #[test]
    fn four_byte_start_code_zero_not_attached_to_previous_unit() {
        let s = [0, 0, 1, 0x09, 0xF0, 0, 0, 0, 1, 0x67, 0x10];
        let units = find_nal_units(&s).unwrap();
        assert_eq!(units[0].rbsp, vec![0xF0]);
        assert_eq!(units[1].offset, 9);
    }

    #[test]
    fn garbage_has_no_start_code() {
        assert!(matches!(find_nal_units(&[0xFF, 0xFF]), Err(BitstreamError::NoStartCode)));
        assert!(matches!(find_nal_units(&[]), Err(BitstreamError::NoStartCode)));
    }

    #[test]
    fn leading_bytes_ignored() {
        let units = find_nal_units(&[0xAB, 0xCD, 0, 0, 1, 0x68, 0xCE]).unwrap();
        assert_eq!(units.len(), 1);
        assert_eq!(units[0].nal_unit_type, 8);
    }

    #[test]
    fn unescape_examples() {
        assert_eq!(unescape_rbsp(&[0, 0, 3, 0]), vec![0, 0, 0]);
        assert_eq!(unescape_rbsp(&[1, 2, 3]), vec![1, 2, 3]);
        assert_eq!(unescape_rbsp(&[0, 0, 3, 1, 0, 0, 3, 3]), vec![0, 0, 1, 0, 0, 3]);
    }

    #[test]
    fn unescape_trailing_pattern_verbatim() {
        assert_eq!(unescape_rbsp(&[5, 0, 0, 3]), vec![5, 0, 0, 3]);
        assert_eq!(unescape_rbsp(&[0, 0, 3, 4]), vec![0, 0, 3, 4]);
    }

    #[test]
    fn unescape_is_not_idempotent_in_general() {
        // Second pass sees a fresh 00 00 03 01 created by the first removal.
        let once = unescape_rbsp(&[0, 0, 3, 3, 1]);
        assert_eq!(once, vec![0, 0, 3, 1]);
        assert_eq!(unescape_rbsp(&once), vec![0, 0, 1]);
    }

    #[test]
    fn escape_then_unescape() {
        let rbsp = [0u8, 0, 0, 0, 1, 0, 0, 2, 7, 0, 0, 3, 0x80];
        let e = escape_rbsp(&rbsp);
        assert!(!e.windows(3).any(|w| w[0] == 0 && w[1] == 0 && w[2] <= 2));
        assert_eq!(unescape_rbsp(&e), rbsp.to_vec());
    }
}
