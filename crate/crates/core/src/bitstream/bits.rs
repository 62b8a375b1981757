//! MSB-first bit reader and writer with Exp-Golomb support.

use super::BitstreamError;

/// Reads bits most-significant first from an RBSP.
#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    /// Number of bits consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn bits_left(&self) -> usize {
        self.data.len() * 8 - self.pos
    }

    pub fn read_bit(&mut self) -> Result<bool, BitstreamError> {
        if self.pos >= self.data.len() * 8 {
            return Err(BitstreamError::BitstreamExhausted);
        }
        let byte = self.data[self.pos / 8];
        let bit = (byte >> (7 - (self.pos % 8))) & 1;
        self.pos += 1;
        Ok(bit == 1)
    }

    pub fn read_flag(&mut self) -> Result<bool, BitstreamError> {
        self.read_bit()
    }

    /// Reads `n <= 32` bits as an unsigned integer.
    pub fn read_bits(&mut self, n: u32) -> Result<u32, BitstreamError> {
        debug_assert!(n <= 32);
        if self.bits_left() < n as usize {
            return Err(BitstreamError::BitstreamExhausted);
        }
        let mut v: u64 = 0;
        for _ in 0..n {
            v = (v << 1) | u64::from(self.read_bit()?);
        }
        Ok(v as u32)
    }

    pub fn skip_bits(&mut self, n: usize) -> Result<(), BitstreamError> {
        if self.bits_left() < n {
            return Err(BitstreamError::BitstreamExhausted);
        }
        self.pos += n;
        Ok(())
    }

    /// Unsigned Exp-Golomb `ue(v)`.
    pub fn read_ue(&mut self) -> Result<u32, BitstreamError> {
        let mut leading = 0u32;
        while !self.read_bit()? {
            leading += 1;
            if leading > 32 {
                return Err(BitstreamError::ExpGolombOverflow);
            }
        }
        if leading == 0 {
            return Ok(0);
        }
        let suffix = u64::from(self.read_bits(leading)?);
        let value = (1u64 << leading) - 1 + suffix;
        u32::try_from(value).map_err(|_| BitstreamError::ExpGolombOverflow)
    }

    /// Signed Exp-Golomb `se(v)`: codeNum k maps to (-1)^(k+1) * ceil(k/2).
    pub fn read_se(&mut self) -> Result<i32, BitstreamError> {
        let k = i64::from(self.read_ue()?);
        let magnitude = (k + 1) / 2;
        Ok(if k % 2 == 1 { magnitude } else { -magnitude } as i32)
    }

    /// True while payload bits remain before the RBSP stop bit.
    pub fn more_rbsp_data(&self) -> bool {
        let total = self.data.len() * 8;
        if self.pos >= total {
            return false;
        }
        // Position of the last set bit in the buffer is the stop bit.
        let mut last_one = None;
        for (i, &b) in self.data.iter().enumerate().rev() {
            if b != 0 {
                last_one = Some(i * 8 + 7 - b.trailing_zeros() as usize);
                break;
            }
        }
        matches!(last_one, Some(p) if p > self.pos)
    }

    /// Consumes `rbsp_trailing_bits()`: a single one bit followed by zero bits to the end.
    pub fn expect_trailing_bits(&mut self) -> Result<(), BitstreamError> {
        if !self.read_bit()? {
            return Err(BitstreamError::TrailingBits(self.pos - 1));
        }
        while self.pos < self.data.len() * 8 {
            if self.read_bit()? {
                return Err(BitstreamError::TrailingBits(self.pos - 1));
            }
        }
        Ok(())
    }
}

/// MSB-first bit writer, used to author header-only streams.
#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bit: u8,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_bit(&mut self, b: bool) {
        if self.bit == 0 {
            self.bytes.push(0);
        }
        if b {
            *self.bytes.last_mut().unwrap() |= 0x80 >> self.bit;
        }
        self.bit = (self.bit + 1) % 8;
    }

    pub fn put_bits(&mut self, value: u32, n: u32) {
        for i in (0..n).rev() {
            self.put_bit((value >> i) & 1 == 1);
        }
    }

    pub fn put_ue(&mut self, value: u32) {
        let v = u64::from(value) + 1;
        let len = 64 - v.leading_zeros();
        for _ in 0..len - 1 {
            self.put_bit(false);
        }
        for i in (0..len).rev() {
            self.put_bit((v >> i) & 1 == 1);
        }
    }

    pub fn put_se(&mut self, value: i32) {
        let k = if value > 0 {
            2 * value as i64 - 1
        } else {
            -2 * value as i64
        };
        self.put_ue(k as u32);
    }

    /// Appends the stop bit and zero-pads to a byte boundary.
    pub fn put_trailing_bits(&mut self) {
        self.put_bit(true);
        while self.bit != 0 {
            self.put_bit(false);
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}
