//! Temporal quantization of a volume into per-polarity histogram subframes.

use serde::{Deserialize, Serialize};

use crate::event::{EventVolume, Polarity};
use crate::{Error, Result};

/// Which instant of a bin stands in for every event quantized into it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TQuantMode {
    #[default]
    Start,
    Center,
}

impl std::str::FromStr for TQuantMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "start" => Ok(TQuantMode::Start),
            "center" => Ok(TQuantMode::Center),
            other => Err(Error::invalid(format!("unknown t-quant mode `{other}`"))),
        }
    }
}

/// Uniform partition of `[t_start, t_end)` into `t_bin` bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub t_bin: u32,
    pub mode: TQuantMode,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, t_bin: u32, mode: TQuantMode) -> Result<Self> {
        if t_bin == 0 {
            return Err(Error::invalid("T_bin must be at least 1"));
        }
        if !(t_start < t_end) {
            return Err(Error::invalid("time grid span is empty"));
        }
        Ok(TimeGrid {
            t_start,
            t_end,
            t_bin,
            mode,
        })
    }

    pub fn bin_width(&self) -> f64 {
        (self.t_end - self.t_start) / self.t_bin as f64
    }

    fn bin_start(&self, bin: u32) -> f64 {
        self.t_start + bin as f64 * self.bin_width()
    }

    /// `floor(T_bin * (t - t_start) / span)` clamped to the last bin, nudged so
    /// that the bin start never lies after `t` under rounding.
    pub fn bin_of(&self, t: f64) -> u32 {
        let span = self.t_end - self.t_start;
        let raw = (self.t_bin as f64 * (t - self.t_start) / span).floor();
        let mut bin = if raw <= 0.0 {
            0
        } else {
            (raw as u64).min(self.t_bin as u64 - 1) as u32
        };
        while bin > 0 && self.bin_start(bin) > t {
            bin -= 1;
        }
        while bin + 1 < self.t_bin && self.bin_start(bin + 1) <= t {
            bin += 1;
        }
        bin
    }

    pub fn quantized_time(&self, bin: u32) -> f64 {
        match self.mode {
            TQuantMode::Start => self.bin_start(bin),
            TQuantMode::Center => self.bin_start(bin) + 0.5 * self.bin_width(),
        }
    }
}

/// Event counts of one polarity inside one time bin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistogramSubframe {
    pub bin: u32,
    pub polarity: Polarity,
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u32>,
}

impl HistogramSubframe {
    pub fn zeros(bin: u32, polarity: Polarity, width: usize, height: usize) -> Self {
        HistogramSubframe {
            bin,
            polarity,
            width,
            height,
            counts: vec![0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.counts[y * self.width + x]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Position of a subframe in the canonical `(bin, polarity)` ordering.
    pub fn slot(bin: u32, polarity: Polarity) -> usize {
        bin as usize * 2 + polarity.index()
    }
}

/// Output of [`bin_events`].
#[derive(Debug, Clone)]
pub struct BinnedVolume {
    pub grid: TimeGrid,
    /// `2 * T_bin` subframes ordered by bin, positive polarity first.
    pub subframes: Vec<HistogramSubframe>,
    /// Bin index of each event, parallel to the volume's event list.
    pub event_bins: Vec<u32>,
}

impl BinnedVolume {
    pub fn quantized_times(&self) -> Vec<f64> {
        self.event_bins
            .iter()
            .map(|&b| self.grid.quantized_time(b))
            .collect()
    }
}

pub fn bin_events(volume: &EventVolume, t_bin: u32, mode: TQuantMode) -> Result<BinnedVolume> {
    let grid = TimeGrid::new(volume.t_start(), volume.t_end(), t_bin, mode)?;
    let (w, h) = (volume.width(), volume.height());
    let mut subframes = Vec::with_capacity(2 * t_bin as usize);
    for bin in 0..t_bin {
        subframes.push(HistogramSubframe::zeros(bin, Polarity::Positive, w, h));
        subframes.push(HistogramSubframe::zeros(bin, Polarity::Negative, w, h));
    }
    let mut event_bins = Vec::with_capacity(volume.len());
    for e in volume.events() {
        let bin = grid.bin_of(e.t);
        event_bins.push(bin);
        let sf = &mut subframes[HistogramSubframe::slot(bin, e.p)];
        sf.counts[e.y as usize * w + e.x as usize] += 1;
    }
    Ok(BinnedVolume {
        grid,
        subframes,
        event_bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Event;
    use proptest::prelude::*;

    fn unit_volume(events: Vec<Event>) -> EventVolume {
        EventVolume::new(4, 4, 0.0, 1.0, events).unwrap()
    }

    #[test]
    fn lower_boundary_maps_to_first_bin() {
        let v = unit_volume(vec![Event::new(0, 0, 0.0, Polarity::Positive)]);
        let b = bin_events(&v, 8, TQuantMode::Start).unwrap();
        assert_eq!(b.event_bins, vec![0]);
        assert_eq!(b.quantized_times(), vec![0.0]);
    }

    #[test]
    fn late_event_maps_to_last_bin() {
        let v = unit_volume(vec![Event::new(0, 0, 0.99, Polarity::Positive)]);
        let b = bin_events(&v, 8, TQuantMode::Start).unwrap();
        assert_eq!(b.event_bins, vec![7]);
        assert_eq!(b.quantized_times(), vec![0.875]);
    }

    #[test]
    fn repeated_cell_accumulates() {
        let e = Event::new(2, 3, 0.1, Polarity::Negative);
        let v = unit_volume(vec![e, e]);
        let b = bin_events(&v, 4, TQuantMode::Start).unwrap();
        let sf = &b.subframes[HistogramSubframe::slot(0, Polarity::Negative)];
        assert_eq!(sf.get(2, 3), 2);
        assert_eq!(b.subframes.len(), 8);
    }

    #[test]
    fn center_mode_offsets_half_a_bin() {
        let v = unit_volume(vec![Event::new(0, 0, 0.3, Polarity::Positive)]);
        let b = bin_events(&v, 4, TQuantMode::Center).unwrap();
        assert_eq!(b.quantized_times(), vec![0.375]);
    }

    #[test]
    fn zero_bins_rejected() {
        assert!(bin_events(&unit_volume(vec![]), 0, TQuantMode::Start).is_err());
    }

    proptest! {
        #[test]
        fn partition_and_quantization_bound(
            t_start in 0.0f64..100.0,
            span in 1e-3f64..10.0,
            t_bin in 1u32..64,
            raw in prop::collection::vec((0u16..8, 0u16..8, 0.0f64..1.0, any::<bool>()), 0..200),
        ) {
            let events: Vec<Event> = raw.iter().map(|&(x, y, f, pos)| {
                let t = (t_start + f * span).min(t_start + span * (1.0 - 1e-12));
                Event::new(x, y, t, if pos { Polarity::Positive } else { Polarity::Negative })
            }).filter(|e| e.t < t_start + span).collect();
            let v = EventVolume::new(8, 8, t_start, t_start + span, events).unwrap();
            let b = bin_events(&v, t_bin, TQuantMode::Start).unwrap();
            let width = b.grid.bin_width();
            let mut expect = vec![0u64; 2 * t_bin as usize];
            for (e, &bin) in v.events().iter().zip(&b.event_bins) {
                let tq = b.grid.quantized_time(bin);
                prop_assert!(e.t - tq >= 0.0);
                prop_assert!(e.t - tq < width * (1.0 + 1e-9));
                expect[HistogramSubframe::slot(bin, e.p)] += 1;
            }
            for (sf, want) in b.subframes.iter().zip(expect) {
                prop_assert_eq!(sf.total(), want);
            }
        }
    }
}
