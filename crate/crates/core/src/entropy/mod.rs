//! Lossless coding primitives: bit I/O, differential coordinates, run-length
//! coding and canonical Huffman codes.

mod bits;
mod delta;
mod huffman;
mod rle;

pub use bits::{BitReader, BitString, BitWriter};
pub use delta::{delta_decode, delta_encode};
pub use huffman::{huffman_build, huffman_decode, huffman_encode, HuffmanTable, MAX_CODE_LEN};
pub use rle::{rle_decode, rle_encode, run_length_symbols, Run, RunList, RUN_CONTINUE};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EntropyError {
    #[error("bitstream truncated at bit {bit_offset}")]
    Truncated { bit_offset: u64 },
    #[error("invalid Huffman code at bit {bit_offset}")]
    InvalidCode { bit_offset: u64 },
    #[error("symbol {0} is not in the Huffman table")]
    UnknownSymbol(u32),
    #[error("Huffman alphabet is empty")]
    EmptyAlphabet,
    #[error("code lengths violate the Kraft inequality")]
    KraftViolation,
    #[error("code length {0} is out of range")]
    BadCodeLength(u32),
    #[error("duplicate symbol {0}")]
    DuplicateSymbol(u32),
    #[error("locations are not in strictly increasing raster order")]
    Unsorted,
    #[error("location ({x}, {y}) lies outside a {side}-pixel block")]
    OutOfBlock { x: u32, y: u32, side: u32 },
    #[error("malformed data at bit {bit_offset}: {reason}")]
    Malformed { bit_offset: u64, reason: String },
}

/// Largest value coded directly; anything bigger is sent as [`ESCAPE_SYMBOL`]
/// followed by a raw 32-bit field.
pub const MAX_DIRECT_SYMBOL: u32 = 4095;
pub const ESCAPE_SYMBOL: u32 = MAX_DIRECT_SYMBOL + 1;
pub const ESCAPE_RAW_BITS: u32 = 32;

/// Maps a value to its Huffman symbol plus the optional raw escape payload.
pub fn escape_split(value: u32) -> (u32, Option<u32>) {
    if value > MAX_DIRECT_SYMBOL {
        (ESCAPE_SYMBOL, Some(value))
    } else {
        (value, None)
    }
}

/// Writes `value` through `table`, escaping large values.
pub fn write_escaped(table: &HuffmanTable, value: u32, w: &mut BitWriter) -> Result<(), EntropyError> {
    let (sym, raw) = escape_split(value);
    table.encode_symbol(sym, w)?;
    if let Some(raw) = raw {
        w.write_bits(raw as u64, ESCAPE_RAW_BITS);
    }
    Ok(())
}

pub fn read_escaped(table: &HuffmanTable, r: &mut BitReader<'_>) -> Result<u32, EntropyError> {
    let at = r.position();
    let sym = table.decode_symbol(r)?;
    if sym == ESCAPE_SYMBOL {
        let raw = r.read_bits(ESCAPE_RAW_BITS)? as u32;
        if raw <= MAX_DIRECT_SYMBOL {
            return Err(EntropyError::Malformed {
                bit_offset: at,
                reason: "escaped value fits the direct alphabet".into(),
            });
        }
        Ok(raw)
    } else if sym > ESCAPE_SYMBOL {
        Err(EntropyError::Malformed {
            bit_offset: at,
            reason: format!("symbol {sym} outside the escaped alphabet"),
        })
    } else {
        Ok(sym)
    }
}

/// Reads one run length coded by [`run_length_symbols`] through `table`.
pub fn read_run_length_from(table: &HuffmanTable, r: &mut BitReader<'_>) -> Result<u64, EntropyError> {
    let at = r.position();
    rle::read_run_length(|| table.decode_symbol(r)).map_err(|e| match e {
        EntropyError::Malformed { reason, .. } => EntropyError::Malformed { bit_offset: at, reason },
        other => other,
    })
}

/// Empirical entropy in bits per symbol.
pub fn empirical_entropy<I: IntoIterator<Item = u64>>(counts: I) -> f64 {
    let counts: Vec<u64> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn escape_round_trip() {
        let values = [0u32, 1, 4095, 4096, 70_000, u32::MAX];
        let mut freqs = BTreeMap::new();
        for &v in &values {
            *freqs.entry(escape_split(v).0).or_insert(0u64) += 1;
        }
        let table = huffman_build(&freqs).unwrap();
        let mut w = BitWriter::new();
        for &v in &values {
            write_escaped(&table, v, &mut w).unwrap();
        }
        let (bytes, _) = w.finish();
        let mut r = BitReader::new(&bytes);
        let back: Vec<u32> = values.iter().map(|_| read_escaped(&table, &mut r).unwrap()).collect();
        assert_eq!(back, values);
    }

    #[test]
    fn entropy_of_uniform_pair_is_one_bit() {
        assert!((empirical_entropy([5, 5]) - 1.0).abs() < 1e-12);
        assert_eq!(empirical_entropy([7]), 0.0);
        assert_eq!(empirical_entropy([]), 0.0);
    }
}
