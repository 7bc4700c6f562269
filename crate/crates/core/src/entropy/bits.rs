use super::EntropyError;

/// Packs bits MSB-first within each byte.
#[derive(Debug, Clone, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bit_len: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bit_len(&self) -> u64 {
        self.bit_len
    }

    pub fn write_bit(&mut self, bit: bool) {
        let offset = (self.bit_len % 8) as u8;
        if offset == 0 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().unwrap() |= 0x80 >> offset;
        }
        self.bit_len += 1;
    }

    /// Writes the low `n` bits of `value`, most significant first.
    pub fn write_bits(&mut self, value: u64, n: u32) {
        debug_assert!(n <= 64);
        for i in (0..n).rev() {
            self.write_bit((value >> i) & 1 == 1);
        }
    }

    /// Bytes (zero-padded to a byte boundary) and the exact bit count.
    pub fn finish(self) -> (Vec<u8>, u64) {
        (self.bytes, self.bit_len)
    }
}

/// Reads bits written by [`BitWriter`]. Reads past `limit` fail.
#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: u64,
    limit: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        BitReader {
            data,
            pos: 0,
            limit: data.len() as u64 * 8,
        }
    }

    /// Restricts reading to the first `bit_len` bits.
    pub fn with_limit(data: &'a [u8], bit_len: u64) -> Self {
        BitReader {
            data,
            pos: 0,
            limit: bit_len.min(data.len() as u64 * 8),
        }
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn remaining(&self) -> u64 {
        self.limit - self.pos
    }

    pub fn read_bit(&mut self) -> Result<bool, EntropyError> {
        if self.pos >= self.limit {
            return Err(EntropyError::Truncated { bit_offset: self.pos });
        }
        let byte = self.data[(self.pos / 8) as usize];
        let bit = byte & (0x80 >> (self.pos % 8)) != 0;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, n: u32) -> Result<u64, EntropyError> {
        if self.remaining() < n as u64 {
            return Err(EntropyError::Truncated { bit_offset: self.pos });
        }
        let mut v = 0u64;
        for _ in 0..n {
            v = (v << 1) | self.read_bit()? as u64;
        }
        Ok(v)
    }
}

/// An owned bit sequence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitString {
    pub bytes: Vec<u8>,
    pub bit_len: u64,
}

impl BitString {
    pub fn reader(&self) -> BitReader<'_> {
        BitReader::with_limit(&self.bytes, self.bit_len)
    }
}

impl From<BitWriter> for BitString {
    fn from(w: BitWriter) -> Self {
        let (bytes, bit_len) = w.finish();
        BitString { bytes, bit_len }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msb_first_packing() {
        let mut w = BitWriter::new();
        w.write_bits(0b101, 3);
        w.write_bits(0b1_1111, 5);
        w.write_bit(true);
        let (bytes, len) = w.finish();
        assert_eq!(bytes, vec![0b1011_1111, 0b1000_0000]);
        assert_eq!(len, 9);
    }

    #[test]
    fn reader_stops_at_limit() {
        let data = [0xF0u8];
        let mut r = BitReader::with_limit(&data, 4);
        assert_eq!(r.read_bits(4).unwrap(), 0xF);
        assert_eq!(r.read_bit(), Err(EntropyError::Truncated { bit_offset: 4 }));
    }

    #[test]
    fn wide_fields_round_trip() {
        let mut w = BitWriter::new();
        w.write_bits(u64::MAX, 64);
        w.write_bits(0x1234, 13);
        let s = BitString::from(w);
        let mut r = s.reader();
        assert_eq!(r.read_bits(64).unwrap(), u64::MAX);
        assert_eq!(r.read_bits(13).unwrap(), 0x1234 & 0x1FFF);
        assert_eq!(r.remaining(), 0);
    }
}
