//! Event tuples, text ingestion and slicing into inter-frame volumes.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> i32 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    /// Index used to order subframes inside a time bin (positive first).
    pub fn index(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
        }
    }

    pub fn from_index(index: usize) -> Self {
        if index == 0 {
            Polarity::Positive
        } else {
            Polarity::Negative
        }
    }
}

/// A single (x, y, t, p) event. `t` is in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: f64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: f64, p: Polarity) -> Self {
        Event { x, y, t, p }
    }
}

/// All events between two successive intensity frames.
#[derive(Debug, Clone, PartialEq)]
pub struct EventVolume {
    width: usize,
    height: usize,
    t_start: f64,
    t_end: f64,
    events: Vec<Event>,
}

impl EventVolume {
    /// Builds a volume, sorting the events by timestamp (stable, so ties keep
    /// their input order).
    pub fn new(
        width: usize,
        height: usize,
        t_start: f64,
        t_end: f64,
        mut events: Vec<Event>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("volume dimensions must be positive"));
        }
        if !(t_start.is_finite() && t_end.is_finite() && t_start < t_end) {
            return Err(Error::invalid(format!(
                "volume time span [{t_start}, {t_end}) is empty or not finite"
            )));
        }
        for e in &events {
            if e.x as usize >= width || e.y as usize >= height {
                return Err(Error::invalid(format!(
                    "event at ({}, {}) outside {width}x{height} volume",
                    e.x, e.y
                )));
            }
            if !(e.t >= t_start && e.t < t_end) {
                return Err(Error::invalid(format!(
                    "event time {} outside [{t_start}, {t_end})",
                    e.t
                )));
            }
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        Ok(EventVolume {
            width,
            height,
            t_start,
            t_end,
            events,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Reads a `t x y p` text file. See [`parse_events`].
pub fn load_events(path: impl AsRef<Path>, dims: Option<(usize, usize)>) -> Result<Vec<Event>> {
    let file = File::open(path)?;
    parse_events(BufReader::new(file), dims)
}

/// Parses one event per line: `t x y p`, whitespace separated, `t` in seconds
/// and `p` in {0, 1} or {-1, 1}. Blank lines and `#` comments are skipped.
/// When `dims` is given, coordinates are checked against `(width, height)`.
pub fn parse_events<R: BufRead>(reader: R, dims: Option<(usize, usize)>) -> Result<Vec<Event>> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        events.push(parse_line(trimmed, dims).map_err(|message| Error::Parse {
            line: lineno,
            message,
        })?);
    }
    Ok(events)
}

fn parse_line(line: &str, dims: Option<(usize, usize)>) -> std::result::Result<Event, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 fields `t x y p`, found {}", fields.len()));
    }
    let t: f64 = fields[0]
        .parse()
        .map_err(|_| format!("bad timestamp `{}`", fields[0]))?;
    if !t.is_finite() || t < 0.0 {
        return Err(format!("timestamp `{}` must be finite and non-negative", fields[0]));
    }
    let x: u16 = fields[1]
        .parse()
        .map_err(|_| format!("bad x coordinate `{}`", fields[1]))?;
    let y: u16 = fields[2]
        .parse()
        .map_err(|_| format!("bad y coordinate `{}`", fields[2]))?;
    let p = match fields[3] {
        "1" | "+1" => Polarity::Positive,
        "0" | "-1" => Polarity::Negative,
        other => return Err(format!("bad polarity `{other}`")),
    };
    if let Some((w, h)) = dims {
        if x as usize >= w || y as usize >= h {
            return Err(format!("coordinate ({x}, {y}) outside {w}x{h} frame"));
        }
    }
    Ok(Event { x, y, t, p })
}

/// Result of [`slice_volumes`].
#[derive(Debug, Clone)]
pub struct SlicedVolumes {
    pub volumes: Vec<EventVolume>,
    /// Events that fell outside `[frame_times[0], frame_times[last])`.
    pub dropped: usize,
}

/// Splits a stream into half-open volumes `[frame_times[i], frame_times[i+1])`.
pub fn slice_volumes(
    events: &[Event],
    frame_times: &[f64],
    width: usize,
    height: usize,
) -> Result<SlicedVolumes> {
    if frame_times.len() < 2 {
        return Err(Error::invalid("at least two frame times are required"));
    }
    if frame_times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("frame times must be strictly increasing"));
    }
    let n_volumes = frame_times.len() - 1;
    let mut buckets: Vec<Vec<Event>> = vec![Vec::new(); n_volumes];
    let mut dropped = 0;
    let last = frame_times[n_volumes];
    for e in events {
        if e.t < frame_times[0] || e.t >= last {
            dropped += 1;
            continue;
        }
        // index of the last frame time <= t
        let idx = frame_times.partition_point(|&ft| ft <= e.t) - 1;
        buckets[idx].push(*e);
    }
    let volumes = buckets
        .into_iter()
        .enumerate()
        .map(|(i, evs)| EventVolume::new(width, height, frame_times[i], frame_times[i + 1], evs))
        .collect::<Result<Vec<_>>>()?;
    Ok(SlicedVolumes { volumes, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: f64) -> Event {
        Event::new(1, 1, t, Polarity::Positive)
    }

    #[test]
    fn parses_zero_polarity_as_negative() {
        let evs = parse_events("0.003811 96 133 0\n".as_bytes(), None).unwrap();
        assert_eq!(evs, vec![Event::new(96, 133, 0.003811, Polarity::Negative)]);
    }

    #[test]
    fn accepts_signed_polarity() {
        let evs = parse_events("0.1 1 2 -1\n0.2 3 4 1\n".as_bytes(), None).unwrap();
        assert_eq!(evs[0].p, Polarity::Negative);
        assert_eq!(evs[1].p, Polarity::Positive);
    }

    #[test]
    fn empty_input_is_empty_stream() {
        assert!(parse_events("".as_bytes(), None).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_coordinate_reports_line() {
        let text = "0.0 1 1 1\n\n0.01 700 5 1\n";
        match parse_events(text.as_bytes(), Some((640, 480))) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_fields_are_rejected() {
        for bad in ["abc 1 1 1", "0.1 1 1", "0.1 -3 1 1", "0.1 1 1 2", "-0.5 1 1 1"] {
            assert!(parse_events(bad.as_bytes(), None).is_err(), "{bad}");
        }
    }

    #[test]
    fn slices_by_half_open_intervals() {
        let events = [ev(0.1), ev(0.5), ev(0.9)];
        let s = slice_volumes(&events, &[0.0, 0.6, 1.0], 4, 4).unwrap();
        let times: Vec<Vec<f64>> = s
            .volumes
            .iter()
            .map(|v| v.events().iter().map(|e| e.t).collect())
            .collect();
        assert_eq!(times, vec![vec![0.1, 0.5], vec![0.9]]);
        assert_eq!(s.dropped, 0);
    }

    #[test]
    fn boundary_event_goes_to_later_volume() {
        let s = slice_volumes(&[ev(0.6)], &[0.0, 0.6, 1.0], 4, 4).unwrap();
        assert!(s.volumes[0].is_empty());
        assert_eq!(s.volumes[1].len(), 1);
    }

    #[test]
    fn no_events_gives_empty_volumes() {
        let s = slice_volumes(&[], &[0.0, 0.5, 1.0], 4, 4).unwrap();
        assert_eq!(s.volumes.len(), 2);
        assert!(s.volumes.iter().all(|v| v.is_empty()));
    }

    #[test]
    fn events_outside_range_are_counted() {
        let s = slice_volumes(&[ev(0.05), ev(1.0), ev(2.0)], &[0.1, 1.0], 4, 4).unwrap();
        assert_eq!(s.dropped, 3);
    }

    #[test]
    fn non_monotonic_frame_times_rejected() {
        assert!(slice_volumes(&[], &[0.0, 0.5, 0.5], 4, 4).is_err());
        assert!(slice_volumes(&[], &[0.0], 4, 4).is_err());
    }

    #[test]
    fn volume_sort_is_stable() {
        let a = Event::new(0, 0, 0.2, Polarity::Positive);
        let b = Event::new(1, 0, 0.1, Polarity::Positive);
        let c = Event::new(2, 0, 0.2, Polarity::Negative);
        let v = EventVolume::new(4, 4, 0.0, 1.0, vec![a, b, c]).unwrap();
        assert_eq!(v.events(), &[b, a, c]);
    }
}
