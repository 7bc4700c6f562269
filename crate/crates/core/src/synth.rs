//! Deterministic synthetic scenes: textured objects moving over a gradient,
//! observed by an idealized event sensor and a frame camera.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::event::{Event, Polarity};
use crate::frame::IntensityFrame;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Seconds between frames.
    pub frame_interval: f64,
    /// Log-intensity contrast threshold.
    pub threshold: f64,
    /// Relative per-pixel spread of the threshold.
    pub threshold_spread: f64,
    /// Object speed in pixels per frame. Zero gives a static scene.
    pub speed: f64,
    /// Sensor sampling steps per frame interval.
    pub substeps: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 64,
            height: 64,
            frames: 10,
            frame_interval: 0.04,
            threshold: 0.15,
            threshold_spread: 0.1,
            speed: 2.0,
            substeps: 40,
            seed: 42,
        }
    }
}

/// Generated events and frames.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub width: usize,
    pub height: usize,
    /// Sorted by time.
    pub events: Vec<Event>,
    pub frames: Vec<(f64, IntensityFrame)>,
}

fn smoothstep(e0: f64, e1: f64, v: f64) -> f64 {
    let t = ((v - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

struct Scene {
    width: f64,
    height: f64,
    speed: f64,
    interval: f64,
}

impl Scene {
    /// Intensity in `[0, 255]` at pixel center `(x, y)` and time `t`.
    fn intensity(&self, x: f64, y: f64, t: f64) -> f64 {
        let f = t / self.interval * self.speed;
        let mut v = 40.0 + 120.0 * x / self.width + 30.0 * y / self.height;

        // striped square drifting right and slightly down
        let (sx, sy) = (8.0 + f, 10.0 + 0.4 * f);
        let side = 0.3 * self.width;
        let inside = smoothstep(-1.0, 1.0, x - sx)
            * smoothstep(-1.0, 1.0, sx + side - x)
            * smoothstep(-1.0, 1.0, y - sy)
            * smoothstep(-1.0, 1.0, sy + side - y);
        let stripes = 150.0 + 80.0 * ((x - sx + 0.5 * (y - sy)) * 0.9).sin();
        v = v * (1.0 - inside) + stripes * inside;

        // dark disc moving up-left
        let (cx, cy) = (0.75 * self.width - 0.8 * f, 0.75 * self.height - 0.6 * f);
        let r = 0.14 * self.width;
        let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
        let disc = smoothstep(-1.0, 1.0, r - d);
        let rings = 30.0 + 25.0 * (d * 1.3).cos();
        v = v * (1.0 - disc) + rings * disc;
        v.clamp(0.0, 255.0)
    }
}

fn to_log(v: f64) -> f64 {
    (v + 1.0).ln()
}

/// Renders frames and simulates threshold-crossing events between them.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    if cfg.width == 0 || cfg.height == 0 || cfg.width > u16::MAX as usize || cfg.height > u16::MAX as usize {
        return Err(Error::invalid("synthetic frame size out of range"));
    }
    if cfg.frames < 2 || !(cfg.frame_interval > 0.0) || !(cfg.threshold > 0.0) || cfg.substeps == 0 {
        return Err(Error::invalid("synthetic scene needs >= 2 frames, positive interval, threshold and substeps"));
    }
    if !(0.0..1.0).contains(&cfg.threshold_spread) {
        return Err(Error::invalid("threshold spread must be in [0, 1)"));
    }
    let scene = Scene {
        width: cfg.width as f64,
        height: cfg.height as f64,
        speed: cfg.speed,
        interval: cfg.frame_interval,
    };
    let (w, h) = (cfg.width, cfg.height);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let thresholds: Vec<f64> = (0..w * h)
        .map(|_| cfg.threshold * (1.0 + cfg.threshold_spread * (2.0 * rng.gen::<f64>() - 1.0)))
        .collect();

    let sample = |t: f64| -> Vec<f64> {
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                out.push(scene.intensity(x as f64 + 0.5, y as f64 + 0.5, t));
            }
        }
        out
    };

    let mut frames = Vec::with_capacity(cfg.frames);
    for i in 0..cfg.frames {
        let t = i as f64 * cfg.frame_interval;
        let px = sample(t).iter().map(|v| v.round() as u8).collect();
        frames.push((t, IntensityFrame::new(w, h, px)?));
    }

    let t_end = (cfg.frames - 1) as f64 * cfg.frame_interval;
    let steps = cfg.substeps as usize * (cfg.frames - 1);
    let dt = t_end / steps as f64;
    let mut reference: Vec<f64> = sample(0.0).into_iter().map(to_log).collect();
    let mut prev = reference.clone();
    let mut events = Vec::new();
    for k in 1..=steps {
        let (t0, t1) = ((k - 1) as f64 * dt, k as f64 * dt);
        let now: Vec<f64> = sample(t1).into_iter().map(to_log).collect();
        let mut step_events = Vec::new();
        for i in 0..w * h {
            let c = thresholds[i];
            let (l0, l1) = (prev[i], now[i]);
            loop {
                let (level, p) = if l1 >= reference[i] + c {
                    (reference[i] + c, Polarity::Positive)
                } else if l1 <= reference[i] - c {
                    (reference[i] - c, Polarity::Negative)
                } else {
                    break;
                };
                let frac = if l1 != l0 { ((level - l0) / (l1 - l0)).clamp(0.0, 1.0) } else { 1.0 };
                let t = t0 + frac * (t1 - t0);
                reference[i] = level;
                if t < t_end {
                    step_events.push(Event::new((i % w) as u16, (i / w) as u16, t, p));
                }
            }
        }
        step_events.sort_by(|a, b| a.t.total_cmp(&b.t));
        events.extend(step_events);
        prev = now;
    }
    Ok(SynthDataset {
        width: w,
        height: h,
        events,
        frames,
    })
}

impl SynthDataset {
    /// Event file text: `t x y p` per line, `p` in {0, 1}.
    pub fn events_text(&self) -> String {
        let mut s = String::with_capacity(self.events.len() * 24);
        for e in &self.events {
            let p = if e.p == Polarity::Positive { 1 } else { 0 };
            writeln!(s, "{:.9} {} {} {}", e.t, e.x, e.y, p).unwrap();
        }
        s
    }

    pub fn frame_name(index: usize) -> String {
        format!("frame_{index:04}.pgm")
    }

    pub fn frames_text(&self) -> String {
        let mut s = String::new();
        for (i, (t, _)) in self.frames.iter().enumerate() {
            writeln!(s, "{:.9} {}", t, Self::frame_name(i)).unwrap();
        }
        s
    }

    /// CRC-32 over the event text, the frame list and every PGM file.
    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        h.update(self.events_text().as_bytes());
        h.update(self.frames_text().as_bytes());
        for (_, f) in &self.frames {
            h.update(&f.to_pgm());
        }
        h.finalize()
    }

    /// Writes `events.txt`, `frames.txt` and the frames into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("events.txt"), self.events_text())?;
        fs::write(dir.join("frames.txt"), self.frames_text())?;
        for (i, (_, f)) in self.frames.iter().enumerate() {
            f.write_pgm(dir.join(Self::frame_name(i)))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            width: 32,
            height: 24,
            frames: 4,
            substeps: 10,
            ..Default::default()
        }
    }

    #[test]
    fn static_scene_has_no_events() {
        let d = generate(&SynthConfig { speed: 0.0, ..small() }).unwrap();
        assert!(d.events.is_empty());
        assert_eq!(d.frames.len(), 4);
        assert_eq!(d.frames[0].1, d.frames[3].1);
    }

    #[test]
    fn events_are_sorted_and_in_range() {
        let d = generate(&small()).unwrap();
        assert!(!d.events.is_empty());
        assert!(d.events.windows(2).all(|w| w[0].t <= w[1].t));
        let t_end = d.frames.last().unwrap().0;
        assert!(d.events.iter().all(|e| e.t >= 0.0 && e.t < t_end && (e.x as usize) < 32 && (e.y as usize) < 24));
    }

    #[test]
    fn higher_threshold_never_adds_events() {
        for base in [0.05, 0.1, 0.15, 0.3] {
            let a = generate(&SynthConfig { threshold: base, ..small() }).unwrap();
            let b = generate(&SynthConfig { threshold: 2.0 * base, ..small() }).unwrap();
            assert!(b.events.len() <= a.events.len(), "threshold {base}");
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(&small()).unwrap().checksum(), generate(&small()).unwrap().checksum());
    }

    #[test]
    fn default_scene_golden() {
        let d = generate(&SynthConfig::default()).unwrap();
        assert_eq!((d.events.len(), d.checksum()), (GOLDEN_EVENTS, GOLDEN_CHECKSUM));
    }

    const GOLDEN_EVENTS: usize = 38881;
    const GOLDEN_CHECKSUM: u32 = 3001793989;
}
