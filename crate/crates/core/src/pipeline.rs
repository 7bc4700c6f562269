//! Whole-sequence encoding: frame-driven reconstruction chain, per-volume
//! encoders on a worker pool, and sequence-level metrics.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{encode_random_baseline, encode_temporal_only, encode_with_tree, EncodeReport, Encoded, EncoderConfig};
use crate::event::{load_events, slice_volumes, Event, EventVolume};
use crate::frame::{read_frame_list, IntensityFrame};
use crate::metrics::{compression_ratio, psnr_from_mse};
use crate::quadtree::{optimize_rate, reconstruct, RateControlled};
use crate::synth::SynthDataset;
use crate::{Error, Result};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "EVLEC_THREADS";

/// Frames plus the event volumes between consecutive frames.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<(f64, IntensityFrame)>,
    pub volumes: Vec<EventVolume>,
    /// Events outside the span of the frame timestamps.
    pub dropped: usize,
}

impl Dataset {
    pub fn from_parts(events: &[Event], frames: Vec<(f64, IntensityFrame)>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("dataset has no frames"))?;
        let (width, height) = (first.1.width(), first.1.height());
        if frames.iter().any(|(_, f)| f.width() != width || f.height() != height) {
            return Err(Error::invalid("frames differ in size"));
        }
        let times: Vec<f64> = frames.iter().map(|(t, _)| *t).collect();
        let sliced = slice_volumes(events, &times, width, height)?;
        Ok(Dataset {
            width,
            height,
            frames,
            volumes: sliced.volumes,
            dropped: sliced.dropped,
        })
    }

    /// Reads an event file and a `timestamp filename` frame list.
    pub fn load(events_path: impl AsRef<Path>, frames_path: impl AsRef<Path>) -> Result<Self> {
        let entries = read_frame_list(frames_path)?;
        let mut frames = Vec::with_capacity(entries.len());
        for e in entries {
            frames.push((e.timestamp, IntensityFrame::read_pgm(&e.path)?));
        }
        let dims = frames.first().map(|(_, f)| (f.width(), f.height()));
        let events = load_events(events_path, dims)?;
        Self::from_parts(&events, frames)
    }

    pub fn from_synth(d: &SynthDataset) -> Result<Self> {
        Self::from_parts(&d.events, d.frames.clone())
    }

    pub fn event_count(&self) -> usize {
        self.volumes.iter().map(|v| v.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Method {
    PdsLec,
    TemporalOnly,
    Random { keep_fraction: f64, seed: u64 },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::PdsLec => "pds-lec",
            Method::TemporalOnly => "temporal-only",
            Method::Random { .. } => "random",
        }
    }
}

/// Sequence-level figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSummary {
    pub method: String,
    pub volumes: usize,
    pub events_in: u64,
    pub events_kept: u64,
    pub gamma_bits: u64,
    /// Over the whole sequence: `bits_per_event * events_in / gamma_bits`.
    pub cr: f64,
    /// Mean of the per-volume temporal errors.
    pub t_error: f64,
    /// From the mean squared error over volumes.
    pub psnr: f64,
    /// Mean over volumes.
    pub ssim: f64,
    pub all_converged: bool,
}

impl SequenceSummary {
    pub fn from_reports(method: &str, reports: &[EncodeReport], cfg: &EncoderConfig) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::invalid("sequence has no volumes"));
        }
        let n = reports.len() as f64;
        let events_in = reports.iter().map(|r| r.events_in).sum();
        let gamma_bits = reports.iter().map(|r| r.gamma_bits).sum();
        let mse = reports.iter().map(|r| r.mse).sum::<f64>() / n;
        Ok(SequenceSummary {
            method: method.to_string(),
            volumes: reports.len(),
            events_in,
            events_kept: reports.iter().map(|r| r.events_kept).sum(),
            gamma_bits,
            cr: compression_ratio(events_in, gamma_bits, cfg.bits_per_event)?,
            t_error: reports.iter().map(|r| r.t_error).sum::<f64>() / n,
            psnr: psnr_from_mse(mse, cfg.psnr_cap),
            ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
            all_converged: reports.iter().all(|r| r.converged),
        })
    }
}

#[derive(Debug, Clone)]
pub struct SequenceResult {
    /// In volume order.
    pub volumes: Vec<Encoded>,
    pub summary: SequenceSummary,
}

/// Worker count from [`THREADS_ENV`], if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Rate-controlled trees for every volume. Tree `i` is built from the running
/// reconstruction and frame `i + 1`, which then updates the reconstruction.
pub fn sequence_trees(ds: &Dataset, cfg: &EncoderConfig) -> Result<Vec<RateControlled>> {
    let mut recon = ds.frames[0].1.clone();
    let mut out = Vec::with_capacity(ds.volumes.len());
    for (_, cur) in &ds.frames[1..] {
        let qt = optimize_rate(
            cur,
            &recon,
            cfg.r_max,
            cfg.rate_model,
            cfg.max_depth,
            cfg.tolerance,
            cfg.max_iters,
        )?;
        recon = reconstruct(&qt.tree, &recon, cur)?;
        out.push(qt);
    }
    Ok(out)
}

/// Encodes every volume with `method`. `threads` caps the pool (default: all
/// cores). Output order and bytes do not depend on the thread count.
pub fn encode_sequence(
    ds: &Dataset,
    method: Method,
    cfg: &EncoderConfig,
    threads: Option<usize>,
) -> Result<SequenceResult> {
    cfg.validate()?;
    let trees = match method {
        Method::PdsLec => Some(sequence_trees(ds, cfg)?),
        _ => None,
    };
    let job = |i: usize| -> Result<Encoded> {
        let v = &ds.volumes[i];
        match method {
            Method::PdsLec => encode_with_tree(v, &trees.as_ref().unwrap()[i], cfg),
            Method::TemporalOnly => encode_temporal_only(v, cfg),
            Method::Random { keep_fraction, seed } => {
                encode_random_baseline(v, cfg, keep_fraction, seed.wrapping_add(i as u64))
            }
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let volumes: Vec<Encoded> =
        pool.install(|| (0..ds.volumes.len()).into_par_iter().map(job).collect::<Result<Vec<_>>>())?;
    let reports: Vec<EncodeReport> = volumes.iter().map(|e| e.report.clone()).collect();
    let summary = SequenceSummary::from_reports(method.name(), &reports, cfg)?;
    Ok(SequenceResult { volumes, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn tiny() -> Dataset {
        let d = generate(&SynthConfig {
            width: 32,
            height: 32,
            frames: 4,
            substeps: 10,
            ..Default::default()
        })
        .unwrap();
        Dataset::from_synth(&d).unwrap()
    }

    #[test]
    fn one_volume_per_frame_gap() {
        let ds = tiny();
        assert_eq!(ds.volumes.len(), 3);
        assert_eq!(ds.dropped, 0);
        let cfg = EncoderConfig {
            r_max: 300.0,
            t_bin: 4,
            ..Default::default()
        };
        let r = encode_sequence(&ds, Method::PdsLec, &cfg, Some(2)).unwrap();
        assert_eq!(r.volumes.len(), 3);
        assert_eq!(r.summary.events_in as usize, ds.event_count());
        assert!(r.volumes.iter().all(|v| v.report.qt_rate_bits <= 300));
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let ds = tiny();
        let cfg = EncoderConfig {
            r_max: 200.0,
            t_bin: 3,
            ..Default::default()
        };
        let a = encode_sequence(&ds, Method::PdsLec, &cfg, Some(1)).unwrap();
        let b = encode_sequence(&ds, Method::PdsLec, &cfg, Some(4)).unwrap();
        for (x, y) in a.volumes.iter().zip(&b.volumes) {
            assert_eq!(x.stream, y.stream);
        }
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn temporal_only_keeps_everything() {
        let ds = tiny();
        let cfg = EncoderConfig {
            t_bin: 8,
            ..Default::default()
        };
        let r = encode_sequence(&ds, Method::TemporalOnly, &cfg, None).unwrap();
        assert_eq!(r.summary.ssim, 1.0);
        assert_eq!(r.summary.events_kept, r.summary.events_in);
    }
}
