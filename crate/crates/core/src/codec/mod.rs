//! Volume encoder and decoder.
//!
//! [`encode`] runs the whole chain for one volume: rate-controlled quad-tree,
//! temporal binning, Poisson disk thinning inside the tree blocks and entropy
//! coding into a self-describing `.evlc` stream. [`decode`] inverts the
//! lossless part exactly.

mod bitstream;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bitstream::{LayoutSpec, SamplingKind, StreamParams, MAGIC, VERSION};

use crate::binning::{bin_events, HistogramSubframe, TQuantMode, TimeGrid};
use crate::entropy::{BitString, BitWriter, EntropyError};
use crate::event::{EventVolume, Polarity};
use crate::frame::IntensityFrame;
use crate::metrics::{compression_ratio, spatial_metrics, t_error_frame, DEFAULT_BITS_PER_EVENT, DEFAULT_PSNR_CAP};
use crate::quadtree::{optimize_rate, LeafMap, QuadTree, RateControlled, RateModel};
use crate::sampling::{sample_volume, RadiusSchedule, SampleLogEntry};
use crate::{Error, Result};

/// Block side of the uniform grid used by the random-sampling baseline.
pub const BASELINE_BLOCK_SIDE: u32 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Bins per volume.
    pub t_bin: u32,
    /// Poisson disk radius of 4x4 blocks.
    pub r4: f64,
    /// Quad-tree bit budget per frame.
    pub r_max: f64,
    pub tolerance: f64,
    /// `None` subdivides down to single pixels.
    pub max_depth: Option<u8>,
    pub rate_model: RateModel,
    pub max_iters: u32,
    pub drop_skip_events: bool,
    pub t_quant: TQuantMode,
    pub bits_per_event: u32,
    pub psnr_cap: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            t_bin: 16,
            r4: 1.0,
            r_max: 10_000.0,
            tolerance: 0.05,
            max_depth: None,
            rate_model: RateModel::default(),
            max_iters: 64,
            drop_skip_events: false,
            t_quant: TQuantMode::Start,
            bits_per_event: DEFAULT_BITS_PER_EVENT,
            psnr_cap: DEFAULT_PSNR_CAP,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_bin == 0 {
            return Err(Error::invalid("T_bin must be at least 1"));
        }
        if !(self.r4 > 0.0 && self.r4.is_finite()) {
            return Err(Error::invalid(format!("r4 must be positive, got {}", self.r4)));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::invalid("rate tolerance must be in (0, 1)"));
        }
        if self.bits_per_event == 0 {
            return Err(Error::invalid("bits per event must be positive"));
        }
        Ok(())
    }
}

/// Per-volume summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeReport {
    pub method: String,
    pub t_bin: u32,
    /// Zero when the volume has no quad-tree.
    pub lambda_star: f64,
    pub qt_rate_bits: u64,
    pub converged: bool,
    pub events_in: u64,
    pub events_kept: u64,
    pub deleted_fraction: f64,
    pub header_bits: u64,
    pub payload_bits: u64,
    pub gamma_bits: u64,
    pub cr: f64,
    pub t_error: f64,
    pub psnr: f64,
    pub ssim: f64,
    /// Squared error of the aggregated images, for pooling across volumes.
    pub mse: f64,
}

/// An encoded volume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedVolume {
    bytes: Vec<u8>,
}

impl CompressedVolume {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        CompressedVolume { bytes }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    /// Total stream size in bits (the compressed size in the ratio).
    pub fn gamma_bits(&self) -> u64 {
        self.bytes.len() as u64 * 8
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_bytes(std::fs::read(path)?))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, &self.bytes)?)
    }
}

/// Everything produced while encoding one volume.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub stream: CompressedVolume,
    pub report: EncodeReport,
    /// Histograms after sampling, exactly what the decoder recovers.
    pub subframes: Vec<HistogramSubframe>,
    /// Histograms before sampling.
    pub original: Vec<HistogramSubframe>,
    pub sampling_log: Vec<SampleLogEntry>,
    /// Per event of the volume: whether it survived.
    pub kept: Vec<bool>,
    /// Per event of the volume: its quantized timestamp.
    pub t_quant: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeErrorKind {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("stream truncated")]
    Truncated,
    #[error("header checksum mismatch")]
    HeaderChecksum,
    #[error("count checksum mismatch in subframe {0}")]
    CountChecksum(usize),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("{0}")]
    Entropy(EntropyError),
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
    #[error("nonzero padding bits")]
    Padding,
    #[error("payload: {0}")]
    Payload(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("decode error at byte {offset}: {kind}")]
pub struct DecodeError {
    pub offset: u64,
    pub kind: DecodeErrorKind,
}

/// One decoded histogram cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedEvent {
    pub x: u16,
    pub y: u16,
    pub t_quant: f64,
    pub p: Polarity,
    pub count: u32,
}

#[derive(Debug, Clone)]
pub struct DecodedVolume {
    pub params: StreamParams,
    pub grid: TimeGrid,
    pub layout: LeafMap,
    /// `2 * T_bin` subframes, bin-major, positive polarity first.
    pub subframes: Vec<HistogramSubframe>,
}

impl DecodedVolume {
    /// Occupied cells in subframe order, raster order within a subframe.
    pub fn events(&self) -> Vec<DecodedEvent> {
        let w = self.params.width as usize;
        let mut out = Vec::new();
        for sf in &self.subframes {
            let t = self.grid.quantized_time(sf.bin);
            for (i, &c) in sf.counts.iter().enumerate() {
                if c > 0 {
                    out.push(DecodedEvent {
                        x: (i % w) as u16,
                        y: (i / w) as u16,
                        t_quant: t,
                        p: sf.polarity,
                        count: c,
                    });
                }
            }
        }
        out
    }

    pub fn event_count(&self) -> u64 {
        self.subframes.iter().map(|s| s.total()).sum()
    }
}

pub fn decode(stream: &CompressedVolume) -> std::result::Result<DecodedVolume, DecodeError> {
    decode_bytes(stream.as_bytes())
}

pub fn decode_bytes(bytes: &[u8]) -> std::result::Result<DecodedVolume, DecodeError> {
    let (params, layout, subframes) = bitstream::read_stream(bytes)?;
    let grid = TimeGrid::new(params.t_start, params.t_end, params.t_bin, params.t_quant).map_err(|e| {
        DecodeError {
            offset: 0,
            kind: DecodeErrorKind::InvalidHeader(e.to_string()),
        }
    })?;
    Ok(DecodedVolume {
        params,
        grid,
        layout,
        subframes,
    })
}

enum Thinning {
    None,
    PoissonDisk(RadiusSchedule),
    Random { keep_fraction: f64, seed: u64 },
}

struct Plan<'a> {
    method: &'static str,
    layout: LeafMap,
    spec: LayoutSpec,
    thinning: Thinning,
    qt: Option<&'a RateControlled>,
    r_max: f64,
}

fn check_frames(volume: &EventVolume, frames: &[&IntensityFrame]) -> Result<()> {
    for f in frames {
        if f.width() != volume.width() || f.height() != volume.height() {
            return Err(Error::invalid(format!(
                "frame is {}x{} but the volume is {}x{}",
                f.width(),
                f.height(),
                volume.width(),
                volume.height()
            )));
        }
    }
    Ok(())
}

/// Full encoder: quad-tree from `(prev_recon, cur_frame)` under
/// `cfg.r_max`, then binning, Poisson disk thinning and coding.
pub fn encode(
    volume: &EventVolume,
    prev_recon: &IntensityFrame,
    cur_frame: &IntensityFrame,
    cfg: &EncoderConfig,
) -> Result<Encoded> {
    cfg.validate()?;
    check_frames(volume, &[prev_recon, cur_frame])?;
    let qt = optimize_rate(
        cur_frame,
        prev_recon,
        cfg.r_max,
        cfg.rate_model,
        cfg.max_depth,
        cfg.tolerance,
        cfg.max_iters,
    )?;
    encode_with_tree(volume, &qt, cfg)
}

/// [`encode`] with an already optimized tree.
pub fn encode_with_tree(volume: &EventVolume, qt: &RateControlled, cfg: &EncoderConfig) -> Result<Encoded> {
    cfg.validate()?;
    let tree = &qt.tree;
    if tree.width != volume.width() || tree.height != volume.height() {
        return Err(Error::invalid("quad-tree and volume dimensions differ"));
    }
    let plan = Plan {
        method: "pds-lec",
        layout: tree.leaf_map(),
        spec: tree_spec(tree),
        thinning: Thinning::PoissonDisk(RadiusSchedule::new(cfg.r4)?),
        qt: Some(qt),
        r_max: cfg.r_max,
    };
    run(volume, plan, cfg)
}

fn tree_spec(tree: &QuadTree) -> LayoutSpec {
    let mut w = BitWriter::new();
    tree.write_bits(&mut w);
    LayoutSpec::QuadTree {
        root_side: tree.root_side,
        max_depth: tree.max_depth,
        bits: BitString::from(w),
    }
}

/// Temporal aggregation only: every pixel is its own block and nothing is
/// thinned, so the spatial content is preserved exactly.
pub fn encode_temporal_only(volume: &EventVolume, cfg: &EncoderConfig) -> Result<Encoded> {
    cfg.validate()?;
    let plan = Plan {
        method: "temporal-only",
        layout: LeafMap::uniform(volume.width(), volume.height(), 1)?,
        spec: LayoutSpec::Uniform { side: 1 },
        thinning: Thinning::None,
        qt: None,
        r_max: 0.0,
    };
    run(volume, plan, cfg)
}

/// Baseline: uniform 16x16 blocks, each event kept independently with
/// probability `keep_fraction`.
pub fn encode_random_baseline(
    volume: &EventVolume,
    cfg: &EncoderConfig,
    keep_fraction: f64,
    seed: u64,
) -> Result<Encoded> {
    cfg.validate()?;
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::invalid(format!("keep fraction must be in (0, 1], got {keep_fraction}")));
    }
    let plan = Plan {
        method: "random",
        layout: LeafMap::uniform(volume.width(), volume.height(), BASELINE_BLOCK_SIDE)?,
        spec: LayoutSpec::Uniform {
            side: BASELINE_BLOCK_SIDE,
        },
        thinning: Thinning::Random { keep_fraction, seed },
        qt: None,
        r_max: 0.0,
    };
    run(volume, plan, cfg)
}

fn run(volume: &EventVolume, plan: Plan<'_>, cfg: &EncoderConfig) -> Result<Encoded> {
    let w = volume.width();
    let binned = bin_events(volume, cfg.t_bin, cfg.t_quant)?;
    let t_quant = binned.quantized_times();
    let original = binned.subframes;

    let mut kept = vec![true; volume.len()];
    let mut log = Vec::new();
    let drop_skip = cfg.drop_skip_events && plan.qt.is_some();
    let (subframes, sampling) = match &plan.thinning {
        Thinning::None => (original.clone(), SamplingKind::None),
        Thinning::PoissonDisk(schedule) => {
            let s = sample_volume(&original, &plan.layout, schedule, drop_skip)?;
            log = s.log;
            (s.subframes, SamplingKind::PoissonDisk { r4: schedule.r4() })
        }
        Thinning::Random { keep_fraction, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut sub = original.clone();
            for sf in sub.iter_mut() {
                sf.counts.fill(0);
            }
            for (i, e) in volume.events().iter().enumerate() {
                kept[i] = rng.gen::<f64>() < *keep_fraction;
                if kept[i] {
                    let slot = HistogramSubframe::slot(binned.event_bins[i], e.p);
                    sub[slot].counts[e.y as usize * w + e.x as usize] += 1;
                }
            }
            (
                sub,
                SamplingKind::Random {
                    keep_fraction: *keep_fraction,
                    seed: *seed,
                },
            )
        }
    };
    if !matches!(plan.thinning, Thinning::Random { .. }) {
        for (i, e) in volume.events().iter().enumerate() {
            let slot = HistogramSubframe::slot(binned.event_bins[i], e.p);
            kept[i] = subframes[slot].counts[e.y as usize * w + e.x as usize] > 0;
        }
    }

    let (lambda_star, qt_rate_bits, converged) = match plan.qt {
        Some(qt) => (qt.lambda_star(), qt.tree.total_rate(), qt.converged),
        None => (0.0, 0, true),
    };
    let params = StreamParams {
        width: w as u32,
        height: volume.height() as u32,
        t_start: volume.t_start(),
        t_end: volume.t_end(),
        t_bin: cfg.t_bin,
        t_quant: cfg.t_quant,
        drop_skip_events: drop_skip,
        sampling,
        r_max: plan.r_max,
        tolerance: if plan.qt.is_some() { cfg.tolerance } else { 0.0 },
        lambda_star,
        rate_model: cfg.rate_model,
        layout: plan.spec,
    };
    let (bytes, payload_bits) = bitstream::write_stream(&params, &plan.layout, &subframes);
    let stream = CompressedVolume::from_bytes(bytes);

    let pairs: Vec<(f64, f64)> = volume
        .events()
        .iter()
        .zip(&t_quant)
        .zip(&kept)
        .filter(|(_, &k)| k)
        .map(|((e, &q), _)| (e.t, q))
        .collect();
    let events_in = volume.len() as u64;
    let events_kept = pairs.len() as u64;
    let spatial = spatial_metrics(&original, &subframes, cfg.psnr_cap)?;
    let gamma_bits = stream.gamma_bits();
    let report = EncodeReport {
        method: plan.method.to_string(),
        t_bin: cfg.t_bin,
        lambda_star,
        qt_rate_bits,
        converged,
        events_in,
        events_kept,
        deleted_fraction: if events_in == 0 {
            0.0
        } else {
            (events_in - events_kept) as f64 / events_in as f64
        },
        header_bits: gamma_bits - payload_bits.div_ceil(8) * 8,
        payload_bits,
        gamma_bits,
        cr: compression_ratio(events_in, gamma_bits, cfg.bits_per_event)?,
        t_error: t_error_frame(&pairs),
        psnr: spatial.psnr,
        ssim: spatial.ssim,
        mse: spatial.mse,
    };
    Ok(Encoded {
        stream,
        report,
        subframes,
        original,
        sampling_log: log,
        kept,
        t_quant,
    })
}

/// Quality of a decoded volume against the events it was coded from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedMetrics {
    pub events_in: u64,
    pub events_decoded: u64,
    pub gamma_bits: u64,
    pub cr: f64,
    pub t_error: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

/// Compares `decoded` with `volume`, binned on the stream's own grid.
///
/// A decoded count `c` in a cell is matched to the `c` earliest original
/// events of that cell, bin and polarity. This is exact whenever cells are
/// kept or dropped whole (Poisson disk thinning, temporal-only) and an
/// approximation for the random baseline.
pub fn evaluate_decoded(
    volume: &EventVolume,
    decoded: &DecodedVolume,
    gamma_bits: u64,
    bits_per_event: u32,
    psnr_cap: f64,
) -> Result<DecodedMetrics> {
    let p = &decoded.params;
    if p.width as usize != volume.width() || p.height as usize != volume.height() {
        return Err(Error::invalid("stream and volume dimensions differ"));
    }
    if p.t_start != volume.t_start() || p.t_end != volume.t_end() {
        return Err(Error::invalid("stream and volume time spans differ"));
    }
    let binned = bin_events(volume, p.t_bin, p.t_quant)?;
    let t_quant = binned.quantized_times();
    let w = volume.width();
    let mut budget: Vec<Vec<u32>> = decoded.subframes.iter().map(|s| s.counts.clone()).collect();
    let mut pairs = Vec::new();
    for (i, e) in volume.events().iter().enumerate() {
        let slot = HistogramSubframe::slot(binned.event_bins[i], e.p);
        let c = &mut budget[slot][e.y as usize * w + e.x as usize];
        if *c > 0 {
            *c -= 1;
            pairs.push((e.t, t_quant[i]));
        }
    }
    let spatial = spatial_metrics(&binned.subframes, &decoded.subframes, psnr_cap)?;
    let events_in = volume.len() as u64;
    Ok(DecodedMetrics {
        events_in,
        events_decoded: decoded.event_count(),
        gamma_bits,
        cr: compression_ratio(events_in, gamma_bits, bits_per_event)?,
        t_error: t_error_frame(&pairs),
        psnr: spatial.psnr,
        ssim: spatial.ssim,
        mse: spatial.mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Event;

    fn volume(events: Vec<Event>) -> EventVolume {
        EventVolume::new(8, 8, 0.0, 1.0, events).unwrap()
    }

    fn frames() -> (IntensityFrame, IntensityFrame) {
        let prev = IntensityFrame::filled(8, 8, 10);
        let cur = IntensityFrame::new(8, 8, (0..64).map(|i| (i * 4) as u8).collect()).unwrap();
        (prev, cur)
    }

    #[test]
    fn empty_volume_is_header_only() {
        let (prev, cur) = frames();
        let enc = encode(&volume(vec![]), &prev, &cur, &EncoderConfig::default()).unwrap();
        assert_eq!(enc.report.payload_bits, 0);
        assert_eq!(enc.report.gamma_bits, enc.report.header_bits);
        assert_eq!(enc.report.cr, 0.0);
        let dec = decode(&enc.stream).unwrap();
        assert!(dec.events().is_empty());
        assert_eq!(dec.subframes.len(), 32);
    }

    #[test]
    fn lossless_when_nothing_is_thinned() {
        let (prev, cur) = frames();
        let ev = vec![
            Event::new(1, 2, 0.05, Polarity::Positive),
            Event::new(1, 2, 0.06, Polarity::Positive),
            Event::new(7, 7, 0.5, Polarity::Negative),
            Event::new(0, 0, 0.9, Polarity::Positive),
        ];
        let cfg = EncoderConfig {
            t_bin: 1000,
            r_max: 1e9,
            ..Default::default()
        };
        let v = volume(ev.clone());
        let enc = encode(&v, &prev, &cur, &cfg).unwrap();
        assert_eq!(enc.report.events_kept, 4);
        let dec = decode(&enc.stream).unwrap();
        assert_eq!(dec.subframes, enc.subframes);
        let got = dec.events();
        assert_eq!(got.len(), 4);
        let total: u32 = got.iter().map(|e| e.count).sum();
        assert_eq!(total, 4);
        for e in &ev {
            let d = got
                .iter()
                .find(|d| d.x == e.x && d.y == e.y && d.p == e.p && e.t - d.t_quant < 1e-3 && e.t >= d.t_quant)
                .expect("event recovered");
            assert!(d.count >= 1);
        }
    }

    #[test]
    fn config_echo_round_trips() {
        let (prev, cur) = frames();
        let v = volume(vec![Event::new(3, 3, 0.2, Polarity::Negative)]);
        let cfg = EncoderConfig {
            t_bin: 5,
            r4: 1.5,
            r_max: 40.0,
            t_quant: TQuantMode::Center,
            ..Default::default()
        };
        let enc = encode(&v, &prev, &cur, &cfg).unwrap();
        let dec = decode(&enc.stream).unwrap();
        assert_eq!(dec.params.t_bin, 5);
        assert_eq!(dec.params.sampling, SamplingKind::PoissonDisk { r4: 1.5 });
        assert_eq!(dec.params.t_quant, TQuantMode::Center);
        assert_eq!(dec.params.lambda_star, enc.report.lambda_star);
        assert!((dec.events()[0].t_quant - 0.3).abs() < 1e-12);
    }

    #[test]
    fn infeasible_budget_propagates() {
        let (prev, cur) = frames();
        let cfg = EncoderConfig {
            r_max: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            encode(&volume(vec![]), &prev, &cur, &cfg),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let (prev, cur) = frames();
        let v = volume(vec![Event::new(3, 3, 0.2, Polarity::Negative)]);
        let enc = encode(&v, &prev, &cur, &EncoderConfig::default()).unwrap();
        let mut bytes = enc.stream.as_bytes().to_vec();
        bytes[0] = b'X';
        assert_eq!(decode_bytes(&bytes).unwrap_err().kind, DecodeErrorKind::BadMagic);
        let bytes = enc.stream.as_bytes();
        for cut in 0..bytes.len() {
            assert!(decode_bytes(&bytes[..cut]).is_err());
        }
        let mut longer = bytes.to_vec();
        longer.push(0);
        assert!(decode_bytes(&longer).is_err());
    }

    #[test]
    fn random_baseline_full_keep_is_lossless() {
        let ev: Vec<Event> = (0..40)
            .map(|i| Event::new(i % 8, (i * 3) % 8, i as f64 / 40.0, Polarity::from_index(i as usize % 2)))
            .collect();
        let v = volume(ev);
        let cfg = EncoderConfig {
            t_bin: 4,
            ..Default::default()
        };
        let a = encode_random_baseline(&v, &cfg, 1.0, 7).unwrap();
        let t = encode_temporal_only(&v, &cfg).unwrap();
        assert_eq!(a.subframes, t.subframes);
        assert_eq!(a.report.events_kept, 40);
        assert_eq!(a.report.ssim, 1.0);
        let b = encode_random_baseline(&v, &cfg, 0.5, 7).unwrap();
        assert_eq!(b.stream, encode_random_baseline(&v, &cfg, 0.5, 7).unwrap().stream);
        assert_eq!(decode(&b.stream).unwrap().subframes, b.subframes);
    }

    #[test]
    fn decoded_metrics_match_encoder_report() {
        let (prev, cur) = frames();
        let ev: Vec<Event> = (0..200)
            .map(|i| {
                let p = if i % 3 == 0 { Polarity::Negative } else { Polarity::Positive };
                Event::new((i * 7 % 8) as u16, (i * 5 % 8) as u16, i as f64 / 200.0, p)
            })
            .collect();
        let cfg = EncoderConfig {
            t_bin: 5,
            r4: 2.0,
            r_max: 40.0,
            ..Default::default()
        };
        let vol = volume(ev);
        let enc = encode(&vol, &prev, &cur, &cfg).unwrap();
        let dec = decode(&enc.stream).unwrap();
        let m = evaluate_decoded(&vol, &dec, enc.stream.gamma_bits(), 64, 99.0).unwrap();
        assert_eq!(m.events_decoded, enc.report.events_kept);
        assert_eq!(m.cr, enc.report.cr);
        assert_eq!(m.psnr, enc.report.psnr);
        assert_eq!(m.ssim, enc.report.ssim);
        assert!((m.t_error - enc.report.t_error).abs() < 1e-12);
    }
}
