//! The `.evlc` container. See `docs/bitstream.md` for the byte layout.

use std::collections::BTreeMap;

use crate::binning::{HistogramSubframe, TQuantMode};
use crate::entropy::{
    delta_decode, delta_encode, escape_split, huffman_build, read_escaped, rle_encode,
    read_run_length_from, run_length_symbols, BitReader, BitString, BitWriter, EntropyError, HuffmanTable,
    ESCAPE_RAW_BITS,
};
use crate::event::Polarity;
use crate::quadtree::{LeafMap, RateModel};

use super::{DecodeError, DecodeErrorKind};

pub const MAGIC: [u8; 4] = *b"EVLC";
pub const VERSION: u8 = 1;

const FLAG_DROP_SKIP: u8 = 1;
const FLAG_T_CENTER: u8 = 2;
const FLAG_EMPTY: u8 = 4;

/// Largest accepted frame dimension (coordinates are 16-bit).
const MAX_DIM: u32 = u16::MAX as u32;

/// How events were thinned before coding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplingKind {
    None,
    PoissonDisk { r4: f64 },
    Random { keep_fraction: f64, seed: u64 },
}

/// How the frame is partitioned into coding blocks.
#[derive(Debug, Clone, PartialEq)]
pub enum LayoutSpec {
    QuadTree {
        root_side: u32,
        max_depth: u8,
        bits: BitString,
    },
    Uniform {
        side: u32,
    },
}

/// Everything in the header except tables and checksums.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamParams {
    pub width: u32,
    pub height: u32,
    pub t_start: f64,
    pub t_end: f64,
    pub t_bin: u32,
    pub t_quant: TQuantMode,
    pub drop_skip_events: bool,
    pub sampling: SamplingKind,
    pub r_max: f64,
    pub tolerance: f64,
    pub lambda_star: f64,
    pub rate_model: RateModel,
    pub layout: LayoutSpec,
}

pub(crate) fn count_checksum(counts: &[u32]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for c in counts {
        h.update(&c.to_le_bytes());
    }
    h.finalize()
}

#[derive(Clone, Copy)]
enum Stream {
    Coord,
    Value,
    Length,
}

/// One coded token: a Huffman symbol of some stream, possibly followed by a
/// raw escape field.
struct Token {
    stream: Stream,
    symbol: u32,
    raw: Option<u32>,
}

#[derive(Default)]
struct Tokens(Vec<Token>);

impl Tokens {
    fn escaped(&mut self, stream: Stream, value: u32) {
        let (symbol, raw) = escape_split(value);
        self.0.push(Token { stream, symbol, raw });
    }

    fn runs(&mut self, values: &[u32]) {
        for run in rle_encode(values).runs() {
            self.escaped(Stream::Value, run.value);
            for s in run_length_symbols(run.len) {
                self.0.push(Token {
                    stream: Stream::Length,
                    symbol: s,
                    raw: None,
                });
            }
        }
    }
}

fn tokenize(layout: &LeafMap, subframes: &[HistogramSubframe]) -> Tokens {
    let (w, h) = (layout.width(), layout.height());
    let unit_cells: Vec<usize> = layout
        .grid()
        .iter()
        .enumerate()
        .filter(|(_, (side, _))| *side == 1)
        .map(|(i, _)| i)
        .collect();
    let mut tokens = Tokens::default();
    let blocks: Vec<_> = layout.leaves().iter().filter(|l| l.side >= 2).collect();
    for sf in subframes {
        let mut occupied = Vec::with_capacity(blocks.len());
        for leaf in &blocks {
            let (x1, y1) = leaf.clipped_end(w, h);
            let mut locs = Vec::new();
            let mut counts = Vec::new();
            for y in leaf.y0 as usize..y1 {
                for x in leaf.x0 as usize..x1 {
                    let c = sf.counts[y * w + x];
                    if c > 0 {
                        locs.push((x as u32 - leaf.x0, y as u32 - leaf.y0));
                        counts.push(c);
                    }
                }
            }
            occupied.push((locs, counts));
        }
        if !blocks.is_empty() {
            let ns: Vec<u32> = occupied.iter().map(|(l, _)| l.len() as u32).collect();
            tokens.runs(&ns);
        }
        for (leaf, (locs, counts)) in blocks.iter().zip(&occupied) {
            if locs.is_empty() {
                continue;
            }
            for g in delta_encode(locs, leaf.side).expect("raster-ordered block cells") {
                tokens.escaped(Stream::Coord, g);
            }
            tokens.runs(counts);
        }
        if !unit_cells.is_empty() {
            let seq: Vec<u32> = unit_cells.iter().map(|&i| sf.counts[i]).collect();
            tokens.runs(&seq);
        }
    }
    tokens
}

fn build_table(freqs: &BTreeMap<u32, u64>) -> HuffmanTable {
    if freqs.is_empty() {
        HuffmanTable::empty()
    } else {
        huffman_build(freqs).expect("non-empty alphabet with bounded depth")
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Serializes a volume. `subframes` must hold `2 * t_bin` entries in slot order.
/// Returns the bytes and the payload length in bits.
pub fn write_stream(params: &StreamParams, layout: &LeafMap, subframes: &[HistogramSubframe]) -> (Vec<u8>, u64) {
    debug_assert_eq!(subframes.len(), 2 * params.t_bin as usize);
    let empty = subframes.iter().all(|s| s.total() == 0);

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    let mut flags = 0;
    if params.drop_skip_events {
        flags |= FLAG_DROP_SKIP;
    }
    if params.t_quant == TQuantMode::Center {
        flags |= FLAG_T_CENTER;
    }
    if empty {
        flags |= FLAG_EMPTY;
    }
    out.push(flags);
    let (kind, r4, keep, seed) = match params.sampling {
        SamplingKind::None => (0u8, 0.0, 1.0, 0),
        SamplingKind::PoissonDisk { r4 } => (1, r4, 1.0, 0),
        SamplingKind::Random { keep_fraction, seed } => (2, 0.0, keep_fraction, seed),
    };
    out.push(kind);
    out.push(match params.layout {
        LayoutSpec::QuadTree { .. } => 0,
        LayoutSpec::Uniform { .. } => 1,
    });
    put_u32(&mut out, params.width);
    put_u32(&mut out, params.height);
    put_f64(&mut out, params.t_start);
    put_f64(&mut out, params.t_end);
    put_u32(&mut out, params.t_bin);
    put_f64(&mut out, r4);
    put_f64(&mut out, keep);
    put_u64(&mut out, seed);
    put_f64(&mut out, params.r_max);
    put_f64(&mut out, params.tolerance);
    put_f64(&mut out, params.lambda_star);
    put_u32(&mut out, params.rate_model.bits_structure);
    put_u32(&mut out, params.rate_model.bits_mode);
    put_u32(&mut out, params.rate_model.bits_value);
    match &params.layout {
        LayoutSpec::QuadTree {
            root_side,
            max_depth,
            bits,
        } => {
            put_u32(&mut out, *root_side);
            out.push(*max_depth);
            put_u32(&mut out, bits.bit_len as u32);
            out.extend_from_slice(&bits.bytes);
        }
        LayoutSpec::Uniform { side } => put_u32(&mut out, *side),
    }

    let mut payload = BitWriter::new();
    if !empty {
        let tokens = tokenize(layout, subframes);
        let mut freqs: [BTreeMap<u32, u64>; 3] = Default::default();
        for t in &tokens.0 {
            *freqs[t.stream as usize].entry(t.symbol).or_default() += 1;
        }
        let tables = freqs.each_ref().map(build_table);
        for t in &tables {
            t.write_header(&mut out);
        }
        for sf in subframes {
            put_u32(&mut out, count_checksum(&sf.counts));
        }
        for t in &tokens.0 {
            tables[t.stream as usize]
                .encode_symbol(t.symbol, &mut payload)
                .expect("symbol counted into its table");
            if let Some(raw) = t.raw {
                payload.write_bits(raw as u64, ESCAPE_RAW_BITS);
            }
        }
        put_u64(&mut out, payload.bit_len());
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    let (data, payload_bits) = payload.finish();
    out.extend_from_slice(&data);
    (out, payload_bits)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(DecodeError {
                offset: self.bytes.len() as u64,
                kind: DecodeErrorKind::Truncated,
            }),
        }
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn table(&mut self) -> Result<HuffmanTable, DecodeError> {
        let start = self.pos;
        HuffmanTable::read_header(self.bytes, &mut self.pos).map_err(|e| DecodeError {
            offset: start as u64,
            kind: DecodeErrorKind::Entropy(e),
        })
    }
}

fn invalid(offset: usize, what: impl Into<String>) -> DecodeError {
    DecodeError {
        offset: offset as u64,
        kind: DecodeErrorKind::InvalidHeader(what.into()),
    }
}

/// Parses and fully validates a stream.
pub fn read_stream(bytes: &[u8]) -> Result<(StreamParams, LeafMap, Vec<HistogramSubframe>), DecodeError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(DecodeError {
            offset: 0,
            kind: DecodeErrorKind::BadMagic,
        });
    }
    let version = c.u8()?;
    if version != VERSION {
        return Err(DecodeError {
            offset: 4,
            kind: DecodeErrorKind::UnsupportedVersion(version),
        });
    }
    let flags_at = c.pos;
    let flags = c.u8()?;
    if flags & !(FLAG_DROP_SKIP | FLAG_T_CENTER | FLAG_EMPTY) != 0 {
        return Err(invalid(flags_at, "unknown flag bits"));
    }
    let kind_at = c.pos;
    let kind = c.u8()?;
    let layout_kind = c.u8()?;
    let width = c.u32()?;
    let height = c.u32()?;
    let t_start = c.f64()?;
    let t_end = c.f64()?;
    let t_bin = c.u32()?;
    let r4 = c.f64()?;
    let keep_fraction = c.f64()?;
    let seed = c.u64()?;
    let r_max = c.f64()?;
    let tolerance = c.f64()?;
    let lambda_star = c.f64()?;
    let rate_model = RateModel {
        bits_structure: c.u32()?,
        bits_mode: c.u32()?,
        bits_value: c.u32()?,
    };
    let sampling = match kind {
        0 => SamplingKind::None,
        1 => SamplingKind::PoissonDisk { r4 },
        2 => SamplingKind::Random { keep_fraction, seed },
        _ => return Err(invalid(kind_at, "unknown sampling kind")),
    };
    let layout_at = c.pos;
    let layout = match layout_kind {
        0 => {
            let root_side = c.u32()?;
            let max_depth = c.u8()?;
            let bit_len = c.u32()? as u64;
            let data = c.take(bit_len.div_ceil(8) as usize)?;
            LayoutSpec::QuadTree {
                root_side,
                max_depth,
                bits: BitString {
                    bytes: data.to_vec(),
                    bit_len,
                },
            }
        }
        1 => LayoutSpec::Uniform { side: c.u32()? },
        _ => return Err(invalid(layout_at, "unknown layout kind")),
    };
    let empty = flags & FLAG_EMPTY != 0;
    let n_slots = 2 * t_bin as usize;
    let mut tables = None;
    let mut checksums = Vec::new();
    let mut payload_bits = 0;
    if !empty {
        tables = Some([c.table()?, c.table()?, c.table()?]);
        checksums = c
            .take(n_slots.saturating_mul(4))?
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        payload_bits = c.u64()?;
    }
    let header_end = c.pos;
    let stored_crc = c.u32()?;
    if crc32fast::hash(&bytes[..header_end]) != stored_crc {
        return Err(DecodeError {
            offset: header_end as u64,
            kind: DecodeErrorKind::HeaderChecksum,
        });
    }

    // Header is authentic from here on; validate its semantics.
    if width == 0 || height == 0 || width > MAX_DIM || height > MAX_DIM {
        return Err(invalid(8, "frame dimensions out of range"));
    }
    if t_bin == 0 || !(t_start < t_end) || !t_start.is_finite() || !t_end.is_finite() {
        return Err(invalid(24, "invalid time grid"));
    }
    let t_quant = if flags & FLAG_T_CENTER != 0 {
        TQuantMode::Center
    } else {
        TQuantMode::Start
    };
    let (w, h) = (width as usize, height as usize);
    let leaf_map = match &layout {
        LayoutSpec::QuadTree {
            root_side,
            max_depth,
            bits,
        } => {
            if *root_side != crate::quadtree::root_side_for(w, h) {
                return Err(invalid(layout_at, "root side does not match the frame"));
            }
            let mut r = bits.reader();
            let map = LeafMap::read_tree_bits(&mut r, w, h, *root_side, *max_depth).map_err(|e| DecodeError {
                offset: layout_at as u64 + 9 + r.position() / 8,
                kind: DecodeErrorKind::Entropy(e),
            })?;
            if r.remaining() != 0 {
                return Err(invalid(layout_at, "unused quad-tree bits"));
            }
            map
        }
        LayoutSpec::Uniform { side } => {
            if *side == 0 || *side > MAX_DIM + 1 {
                return Err(invalid(layout_at, "invalid block side"));
            }
            LeafMap::uniform(w, h, *side).map_err(|e| invalid(layout_at, e.to_string()))?
        }
    };

    let payload_start = c.pos;
    let payload_len = payload_bits.div_ceil(8);
    let available = (bytes.len() - payload_start) as u64;
    if payload_len > available {
        return Err(DecodeError {
            offset: bytes.len() as u64,
            kind: DecodeErrorKind::Truncated,
        });
    }
    if payload_len < available {
        return Err(DecodeError {
            offset: payload_start as u64 + payload_len,
            kind: DecodeErrorKind::TrailingBytes((available - payload_len) as usize),
        });
    }

    let unit_cells: Vec<usize> = leaf_map
        .grid()
        .iter()
        .enumerate()
        .filter(|(_, (side, _))| *side == 1)
        .map(|(i, _)| i)
        .collect();
    let mut subframes: Vec<HistogramSubframe> = (0..n_slots)
        .map(|s| HistogramSubframe::zeros((s / 2) as u32, Polarity::from_index(s % 2), w, h))
        .collect();
    if let Some(tables) = tables {
        let data = &bytes[payload_start..];
        let mut r = BitReader::with_limit(data, payload_bits);
        let to_err = |e: EntropyError, pos: u64| DecodeError {
            offset: payload_start as u64 + pos / 8,
            kind: DecodeErrorKind::Entropy(e),
        };
        for sf in subframes.iter_mut() {
            read_subframe(&mut r, &tables, &leaf_map, &unit_cells, sf).map_err(|e| {
                let pos = match &e {
                    EntropyError::Truncated { bit_offset }
                    | EntropyError::InvalidCode { bit_offset }
                    | EntropyError::Malformed { bit_offset, .. } => *bit_offset,
                    _ => r.position(),
                };
                to_err(e, pos)
            })?;
        }
        if r.remaining() != 0 {
            return Err(DecodeError {
                offset: payload_start as u64 + r.position() / 8,
                kind: DecodeErrorKind::Payload(format!("{} unread payload bits", r.remaining())),
            });
        }
        let pad = payload_bits % 8;
        if pad != 0 && data[data.len() - 1] & (0xFF >> pad) != 0 {
            return Err(DecodeError {
                offset: bytes.len() as u64 - 1,
                kind: DecodeErrorKind::Padding,
            });
        }
        for (i, (sf, &sum)) in subframes.iter().zip(&checksums).enumerate() {
            if count_checksum(&sf.counts) != sum {
                return Err(DecodeError {
                    offset: payload_start as u64,
                    kind: DecodeErrorKind::CountChecksum(i),
                });
            }
        }
    }

    let params = StreamParams {
        width,
        height,
        t_start,
        t_end,
        t_bin,
        t_quant,
        drop_skip_events: flags & FLAG_DROP_SKIP != 0,
        sampling,
        r_max,
        tolerance,
        lambda_star,
        rate_model,
        layout,
    };
    Ok((params, leaf_map, subframes))
}

fn malformed(r: &BitReader<'_>, reason: &str) -> EntropyError {
    EntropyError::Malformed {
        bit_offset: r.position(),
        reason: reason.into(),
    }
}

/// Reads runs until exactly `total` values are produced.
fn read_runs(
    r: &mut BitReader<'_>,
    tables: &[HuffmanTable; 3],
    total: u64,
    mut emit: impl FnMut(u32),
) -> Result<(), EntropyError> {
    let mut produced = 0u64;
    while produced < total {
        let value = read_escaped(&tables[Stream::Value as usize], r)?;
        let len = read_run_length_from(&tables[Stream::Length as usize], r)?;
        if len == 0 || produced + len > total {
            return Err(malformed(r, "run length out of range"));
        }
        for _ in 0..len {
            emit(value);
        }
        produced += len;
    }
    Ok(())
}

fn read_subframe(
    r: &mut BitReader<'_>,
    tables: &[HuffmanTable; 3],
    layout: &LeafMap,
    unit_cells: &[usize],
    sf: &mut HistogramSubframe,
) -> Result<(), EntropyError> {
    let (w, h) = (layout.width(), layout.height());
    let blocks: Vec<_> = layout.leaves().iter().filter(|l| l.side >= 2).collect();
    let mut ns = Vec::with_capacity(blocks.len());
    read_runs(r, tables, blocks.len() as u64, |v| ns.push(v as u64))?;
    for (leaf, &n) in blocks.iter().zip(&ns) {
        let (x1, y1) = leaf.clipped_end(w, h);
        let area = (x1 - leaf.x0 as usize) as u64 * (y1 - leaf.y0 as usize) as u64;
        if n > area {
            return Err(malformed(r, "more occupied cells than the block holds"));
        }
        if n == 0 {
            continue;
        }
        let mut gaps = Vec::with_capacity(n as usize);
        for _ in 0..n {
            gaps.push(read_escaped(&tables[Stream::Coord as usize], r)?);
        }
        let locs = delta_decode(&gaps, leaf.side)?;
        let mut cells = Vec::with_capacity(locs.len());
        for (x, y) in locs {
            let (ax, ay) = ((leaf.x0 + x) as usize, (leaf.y0 + y) as usize);
            if ax >= x1 || ay >= y1 {
                return Err(malformed(r, "coordinate outside the frame"));
            }
            cells.push(ay * w + ax);
        }
        let mut i = 0;
        let mut zero = false;
        read_runs(r, tables, n, |v| {
            zero |= v == 0;
            sf.counts[cells[i]] = v;
            i += 1;
        })?;
        if zero {
            return Err(malformed(r, "zero count at an occupied cell"));
        }
    }
    if !unit_cells.is_empty() {
        let mut cells = unit_cells.iter();
        read_runs(r, tables, unit_cells.len() as u64, |v| {
            sf.counts[*cells.next().unwrap()] = v;
        })?;
    }
    Ok(())
}
