use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use super::{BitReader, BitString, BitWriter, EntropyError};

/// Codes are held in a `u64`.
pub const MAX_CODE_LEN: u8 = 63;

/// Canonical prefix code: codewords are assigned in `(length, symbol)` order,
/// so the table is fully described by its code lengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanTable {
    /// `(symbol, length)` in canonical order.
    order: Vec<(u32, u8)>,
    codes: HashMap<u32, (u64, u8)>,
    count: [u32; MAX_CODE_LEN as usize + 1],
    first: [u64; MAX_CODE_LEN as usize + 1],
    offset: [u32; MAX_CODE_LEN as usize + 1],
}

impl HuffmanTable {
    /// Table with no symbols; it can be serialized but not used for coding.
    pub fn empty() -> Self {
        Self::from_lengths(&[]).unwrap()
    }

    pub fn from_lengths(lengths: &[(u32, u8)]) -> Result<Self, EntropyError> {
        let mut order: Vec<(u32, u8)> = lengths.to_vec();
        order.sort_by_key(|&(s, l)| (l, s));
        let mut seen = std::collections::HashSet::with_capacity(order.len());
        let mut kraft: u128 = 0;
        for &(s, l) in &order {
            if l == 0 || l > MAX_CODE_LEN {
                return Err(EntropyError::BadCodeLength(l as u32));
            }
            if !seen.insert(s) {
                return Err(EntropyError::DuplicateSymbol(s));
            }
            kraft += 1u128 << (MAX_CODE_LEN - l);
        }
        if kraft > 1u128 << MAX_CODE_LEN {
            return Err(EntropyError::KraftViolation);
        }

        let mut count = [0u32; MAX_CODE_LEN as usize + 1];
        for &(_, l) in &order {
            count[l as usize] += 1;
        }
        let mut first = [0u64; MAX_CODE_LEN as usize + 1];
        let mut offset = [0u32; MAX_CODE_LEN as usize + 1];
        let mut code = 0u64;
        let mut idx = 0u32;
        for l in 1..=MAX_CODE_LEN as usize {
            first[l] = code;
            offset[l] = idx;
            code = (code + count[l] as u64) << 1;
            idx += count[l];
        }
        let mut codes = HashMap::with_capacity(order.len());
        let mut next = first;
        for &(s, l) in &order {
            codes.insert(s, (next[l as usize], l));
            next[l as usize] += 1;
        }
        Ok(HuffmanTable {
            order,
            codes,
            count,
            first,
            offset,
        })
    }

    /// `(symbol, length)` pairs in canonical order.
    pub fn lengths(&self) -> &[(u32, u8)] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn code(&self, symbol: u32) -> Option<(u64, u8)> {
        self.codes.get(&symbol).copied()
    }

    pub fn code_len(&self, symbol: u32) -> Option<u8> {
        self.code(symbol).map(|(_, l)| l)
    }

    /// Average code length under `freqs`.
    pub fn expected_length(&self, freqs: &BTreeMap<u32, u64>) -> f64 {
        let total: u64 = freqs.values().sum();
        let bits: u64 = freqs
            .iter()
            .map(|(s, &c)| c * self.code_len(*s).unwrap_or(0) as u64)
            .sum();
        bits as f64 / total.max(1) as f64
    }

    pub fn encode_symbol(&self, symbol: u32, w: &mut BitWriter) -> Result<(), EntropyError> {
        let (code, len) = self.code(symbol).ok_or(EntropyError::UnknownSymbol(symbol))?;
        w.write_bits(code, len as u32);
        Ok(())
    }

    pub fn decode_symbol(&self, r: &mut BitReader<'_>) -> Result<u32, EntropyError> {
        let start = r.position();
        let mut code = 0u64;
        for l in 1..=MAX_CODE_LEN as usize {
            code = (code << 1) | r.read_bit()? as u64;
            let c = self.count[l] as u64;
            if c > 0 && code >= self.first[l] && code - self.first[l] < c {
                let i = self.offset[l] as u64 + code - self.first[l];
                return Ok(self.order[i as usize].0);
            }
        }
        Err(EntropyError::InvalidCode { bit_offset: start })
    }

    /// Header layout: symbol count (u16 LE), then `(symbol: u16 LE, length: u8)`
    /// for each symbol in canonical order.
    pub fn write_header(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.order.len() as u16).to_le_bytes());
        for &(s, l) in &self.order {
            out.extend_from_slice(&(s as u16).to_le_bytes());
            out.push(l);
        }
    }

    pub fn header_len(&self) -> usize {
        2 + 3 * self.order.len()
    }

    /// Parses a header at `bytes[*pos..]`, advancing `pos`.
    pub fn read_header(bytes: &[u8], pos: &mut usize) -> Result<Self, EntropyError> {
        let truncated = |p: usize| EntropyError::Truncated {
            bit_offset: p as u64 * 8,
        };
        let n = bytes
            .get(*pos..*pos + 2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]) as usize)
            .ok_or_else(|| truncated(*pos))?;
        let body = bytes
            .get(*pos + 2..*pos + 2 + 3 * n)
            .ok_or_else(|| truncated(bytes.len()))?;
        let lengths: Vec<(u32, u8)> = body
            .chunks_exact(3)
            .map(|c| (u16::from_le_bytes([c[0], c[1]]) as u32, c[2]))
            .collect();
        *pos += 2 + 3 * n;
        Self::from_lengths(&lengths)
    }
}

/// Optimal code for the given frequencies, canonicalized. A lone symbol gets
/// a 1-bit code.
pub fn huffman_build(freqs: &BTreeMap<u32, u64>) -> Result<HuffmanTable, EntropyError> {
    let symbols: Vec<(u32, u64)> = freqs.iter().filter(|(_, &c)| c > 0).map(|(&s, &c)| (s, c)).collect();
    match symbols.len() {
        0 => return Err(EntropyError::EmptyAlphabet),
        1 => return HuffmanTable::from_lengths(&[(symbols[0].0, 1)]),
        _ => {}
    }
    let n = symbols.len();
    // parent links over leaves 0..n and internal nodes n..2n-1
    let mut parent = vec![usize::MAX; 2 * n - 1];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
        symbols.iter().enumerate().map(|(i, &(_, c))| Reverse((c, i))).collect();
    let mut next = n;
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().unwrap();
        let Reverse((wb, b)) = heap.pop().unwrap();
        parent[a] = next;
        parent[b] = next;
        heap.push(Reverse((wa + wb, next)));
        next += 1;
    }
    let mut depth = vec![0u32; 2 * n - 1];
    for i in (0..2 * n - 2).rev() {
        depth[i] = depth[parent[i]] + 1;
    }
    let mut lengths = Vec::with_capacity(n);
    for (i, &(s, _)) in symbols.iter().enumerate() {
        if depth[i] > MAX_CODE_LEN as u32 {
            return Err(EntropyError::BadCodeLength(depth[i]));
        }
        lengths.push((s, depth[i] as u8));
    }
    HuffmanTable::from_lengths(&lengths)
}

pub fn huffman_encode(table: &HuffmanTable, symbols: &[u32]) -> Result<BitString, EntropyError> {
    let mut w = BitWriter::new();
    for &s in symbols {
        table.encode_symbol(s, &mut w)?;
    }
    Ok(w.into())
}

/// Decodes exactly `n_symbols` and requires the bit string to be fully consumed.
pub fn huffman_decode(
    table: &HuffmanTable,
    bits: &BitString,
    n_symbols: usize,
) -> Result<Vec<u32>, EntropyError> {
    let mut r = bits.reader();
    let mut out = Vec::with_capacity(n_symbols);
    for _ in 0..n_symbols {
        out.push(table.decode_symbol(&mut r)?);
    }
    if r.remaining() != 0 {
        return Err(EntropyError::Malformed {
            bit_offset: r.position(),
            reason: format!("{} unread bits after {n_symbols} symbols", r.remaining()),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::{empirical_entropy, rle_encode};
    use proptest::prelude::*;

    fn freqs(pairs: &[(u32, u64)]) -> BTreeMap<u32, u64> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn two_symbols_get_one_bit_each() {
        let t = huffman_build(&freqs(&[(0, 1), (1, 1)])).unwrap();
        assert_eq!(t.code_len(0), Some(1));
        assert_eq!(t.code_len(1), Some(1));
    }

    #[test]
    fn single_symbol_gets_one_bit() {
        let t = huffman_build(&freqs(&[(42, 1)])).unwrap();
        assert_eq!(t.code(42), Some((0, 1)));
        let bits = huffman_encode(&t, &[42, 42, 42]).unwrap();
        assert_eq!(bits.bit_len, 3);
        assert_eq!(huffman_decode(&t, &bits, 3).unwrap(), vec![42, 42, 42]);
    }

    #[test]
    fn skewed_distribution_within_entropy_bound() {
        let f = freqs(&[(0, 5), (1, 2), (2, 1), (3, 1)]);
        let t = huffman_build(&f).unwrap();
        // reference Huffman: lengths 1, 2, 3, 3
        assert_eq!(
            (0..4).map(|s| t.code_len(s).unwrap()).collect::<Vec<_>>(),
            vec![1, 2, 3, 3]
        );
        let avg = t.expected_length(&f);
        let h = empirical_entropy(f.values().copied());
        assert!((avg - 15.0 / 9.0).abs() < 1e-12);
        assert!(h <= avg && avg < h + 1.0);
    }

    #[test]
    fn empty_alphabet_rejected() {
        assert_eq!(huffman_build(&BTreeMap::new()), Err(EntropyError::EmptyAlphabet));
        assert_eq!(huffman_build(&freqs(&[(3, 0)])), Err(EntropyError::EmptyAlphabet));
    }

    #[test]
    fn encode_unknown_symbol_fails() {
        let t = huffman_build(&freqs(&[(0, 1), (1, 1)])).unwrap();
        assert_eq!(huffman_encode(&t, &[2]), Err(EntropyError::UnknownSymbol(2)));
        assert!(huffman_encode(&t, &[]).unwrap().bit_len == 0);
    }

    #[test]
    fn wrong_symbol_count_is_detected() {
        let t = huffman_build(&freqs(&[(0, 3), (1, 2), (2, 1)])).unwrap();
        let bits = huffman_encode(&t, &[0, 1, 2, 2, 1]).unwrap();
        assert!(huffman_decode(&t, &bits, 4).is_err());
        assert!(huffman_decode(&t, &bits, 6).is_err());
        assert!(huffman_decode(&t, &bits, 5).is_ok());
    }

    #[test]
    fn canonical_codes_are_ordered() {
        let t = HuffmanTable::from_lengths(&[(7, 2), (3, 1), (9, 3), (1, 3)]).unwrap();
        assert_eq!(t.code(3), Some((0b0, 1)));
        assert_eq!(t.code(7), Some((0b10, 2)));
        assert_eq!(t.code(1), Some((0b110, 3)));
        assert_eq!(t.code(9), Some((0b111, 3)));
    }

    #[test]
    fn invalid_length_sets_rejected() {
        assert_eq!(
            HuffmanTable::from_lengths(&[(0, 1), (1, 1), (2, 1)]),
            Err(EntropyError::KraftViolation)
        );
        assert!(HuffmanTable::from_lengths(&[(0, 0)]).is_err());
        assert!(HuffmanTable::from_lengths(&[(0, 1), (0, 2)]).is_err());
    }

    #[test]
    fn incomplete_code_rejects_unused_codeword() {
        let t = HuffmanTable::from_lengths(&[(5, 1)]).unwrap();
        let bits = BitString {
            bytes: vec![0x80],
            bit_len: 1,
        };
        assert!(matches!(
            huffman_decode(&t, &bits, 1),
            Err(EntropyError::InvalidCode { .. } | EntropyError::Truncated { .. })
        ));
    }

    #[test]
    fn header_round_trip() {
        let t = huffman_build(&freqs(&[(0, 9), (4096, 1), (17, 4), (300, 4)])).unwrap();
        let mut bytes = vec![0xAA];
        t.write_header(&mut bytes);
        assert_eq!(bytes.len(), 1 + t.header_len());
        let mut pos = 1;
        assert_eq!(HuffmanTable::read_header(&bytes, &mut pos).unwrap(), t);
        assert_eq!(pos, bytes.len());
        let mut pos = 1;
        assert!(HuffmanTable::read_header(&bytes[..bytes.len() - 1], &mut pos).is_err());
    }

    proptest! {
        #[test]
        fn run_symbol_streams_round_trip(values in prop::collection::vec(0u32..12, 1..300)) {
            let runs = rle_encode(&values);
            let syms: Vec<u32> = runs.runs().iter().flat_map(|r| [r.value, r.len.min(4095)]).collect();
            let mut f = BTreeMap::new();
            for &s in &syms {
                *f.entry(s).or_insert(0u64) += 1;
            }
            let t = huffman_build(&f).unwrap();
            let bits = huffman_encode(&t, &syms).unwrap();
            prop_assert_eq!(huffman_decode(&t, &bits, syms.len()).unwrap(), syms);
        }

        #[test]
        fn builds_are_deterministic_and_satisfy_kraft(
            counts in prop::collection::btree_map(0u32..5000, 1u64..10_000, 1..64)
        ) {
            let a = huffman_build(&counts).unwrap();
            let b = huffman_build(&counts).unwrap();
            prop_assert_eq!(&a, &b);
            let kraft: f64 = a.lengths().iter().map(|&(_, l)| 2f64.powi(-(l as i32))).sum();
            prop_assert!(kraft <= 1.0 + 1e-12);
            let h = empirical_entropy(counts.values().copied());
            let avg = a.expected_length(&counts);
            prop_assert!(avg >= h - 1e-9);
            prop_assert!(avg < h + 1.0 || (a.len() == 1 && avg == 1.0));
        }
    }
}
