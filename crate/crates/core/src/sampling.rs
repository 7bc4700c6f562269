//! Priority-weighted Poisson disk thinning of occupied histogram cells.
//!
//! Inside every quad-tree leaf of side 4 or more, occupied cells are visited
//! starting from the geometric median; each visited reference keeps its cell
//! and deletes every unvisited cell closer than the block's radius, then hands
//! over to the nearest cell outside the disk. Survivors end up at least `r`
//! apart. Smaller blocks (higher priority) are never thinned.

use std::cmp::Ordering;

use serde::Serialize;

use crate::binning::HistogramSubframe;
use crate::event::Polarity;
use crate::quadtree::{LeafMap, LeafMode};
use crate::{Error, Result};

/// Cell location `(x, y)`.
pub type Loc = (u32, u32);

/// Block side to Poisson disk radius: 4 -> r4, 8 -> 2 r4, 16 -> 3 r4,
/// 32 -> 4 r4, and `(m - 1) r4` for side `2^m` beyond that.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusSchedule {
    r4: f64,
}

impl RadiusSchedule {
    pub fn new(r4: f64) -> Result<Self> {
        if !(r4 > 0.0 && r4.is_finite()) {
            return Err(Error::invalid(format!("base radius must be positive, got {r4}")));
        }
        Ok(RadiusSchedule { r4 })
    }

    pub fn r4(&self) -> f64 {
        self.r4
    }

    /// `None` for blocks that are not sampled (side below 4).
    pub fn radius(&self, side: u32) -> Option<f64> {
        if side < 4 {
            return None;
        }
        let m = 31 - side.leading_zeros();
        Some((m - 1) as f64 * self.r4)
    }
}

fn raster_key(l: &Loc) -> (u32, u32) {
    (l.1, l.0)
}

fn dist2(a: &Loc, b: &Loc) -> u64 {
    let dx = a.0.abs_diff(b.0) as u64;
    let dy = a.1.abs_diff(b.1) as u64;
    dx * dx + dy * dy
}

/// The occupied location minimizing the summed Euclidean distance to all
/// others. Near-equal sums (within 1e-9 relative) resolve to the smallest
/// `(y, x)`.
pub fn geometric_median_event(locations: &[Loc]) -> Result<Loc> {
    if locations.is_empty() {
        return Err(Error::invalid("geometric median of an empty set"));
    }
    let mut best: Option<(f64, Loc)> = None;
    for c in locations {
        let cost: f64 = locations.iter().map(|o| (dist2(c, o) as f64).sqrt()).sum();
        best = match best {
            None => Some((cost, *c)),
            Some((bc, bl)) => {
                let tol = 1e-9 * bc.max(1.0);
                if cost < bc - tol || ((cost - bc).abs() <= tol && raster_key(c) < raster_key(&bl)) {
                    Some((cost, *c))
                } else {
                    Some((bc, bl))
                }
            }
        };
    }
    Ok(best.unwrap().1)
}

/// One reference visit: the reference kept and how many cells its disk removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PdsStep {
    pub reference: Loc,
    pub removed: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PdsResult {
    /// Kept locations in visiting order; the first is the seed.
    pub survivors: Vec<Loc>,
    pub steps: Vec<PdsStep>,
}

impl PdsResult {
    pub fn seed(&self) -> Option<Loc> {
        self.survivors.first().copied()
    }

    pub fn removed(&self) -> usize {
        self.steps.iter().map(|s| s.removed).sum()
    }
}

/// Thins `locations` (distinct cells of one block) to a set with pairwise
/// distance at least `r`.
pub fn poisson_disk_sample(locations: &[Loc], r: f64) -> PdsResult {
    if locations.is_empty() {
        return PdsResult {
            survivors: Vec::new(),
            steps: Vec::new(),
        };
    }
    let r2 = r * r;
    let seed = geometric_median_event(locations).expect("non-empty");
    let mut unvisited: Vec<Loc> = locations.iter().copied().filter(|l| *l != seed).collect();
    let mut survivors = vec![seed];
    let mut steps = Vec::new();
    let mut reference = seed;
    loop {
        let before = unvisited.len();
        unvisited.retain(|l| (dist2(l, &reference) as f64) >= r2);
        steps.push(PdsStep {
            reference,
            removed: before - unvisited.len(),
        });
        let Some((i, _)) = unvisited.iter().enumerate().min_by(|(_, a), (_, b)| {
            match dist2(a, &reference).cmp(&dist2(b, &reference)) {
                Ordering::Equal => raster_key(a).cmp(&raster_key(b)),
                o => o,
            }
        }) else {
            break;
        };
        reference = unvisited.swap_remove(i);
        survivors.push(reference);
    }
    PdsResult { survivors, steps }
}

/// One row of the sampling log. `r == 0` marks a block whose events were
/// dropped because it is a skip leaf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleLogEntry {
    pub bin: u32,
    pub polarity: Polarity,
    pub block_x: u32,
    pub block_y: u32,
    pub side: u32,
    pub r: f64,
    pub kept: usize,
    pub removed: usize,
}

impl SampleLogEntry {
    pub const CSV_HEADER: &'static str = "bin,polarity,block_x,block_y,side,r,kept,removed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{},{}",
            self.bin,
            self.polarity.sign(),
            self.block_x,
            self.block_y,
            self.side,
            self.r,
            self.kept,
            self.removed
        )
    }
}

/// Output of [`sample_volume`].
#[derive(Debug, Clone)]
pub struct SampledVolume {
    pub subframes: Vec<HistogramSubframe>,
    pub log: Vec<SampleLogEntry>,
}

/// Applies Poisson disk thinning to every leaf of side >= 4 in every subframe.
/// With `drop_skip_events`, cells inside skip leaves are cleared first.
pub fn sample_volume(
    subframes: &[HistogramSubframe],
    layout: &LeafMap,
    schedule: &RadiusSchedule,
    drop_skip_events: bool,
) -> Result<SampledVolume> {
    let (w, h) = (layout.width(), layout.height());
    let mut out = Vec::with_capacity(subframes.len());
    let mut log = Vec::new();
    for sf in subframes {
        if sf.width != w || sf.height != h {
            return Err(Error::invalid("subframe and layout dimensions differ"));
        }
        let mut counts = sf.counts.clone();
        for leaf in layout.leaves() {
            let (x1, y1) = leaf.clipped_end(w, h);
            let mut occupied: Vec<Loc> = Vec::new();
            for y in leaf.y0 as usize..y1 {
                for x in leaf.x0 as usize..x1 {
                    if counts[y * w + x] > 0 {
                        occupied.push((x as u32, y as u32));
                    }
                }
            }
            if occupied.is_empty() {
                continue;
            }
            if drop_skip_events && leaf.mode == LeafMode::Skip {
                for &(x, y) in &occupied {
                    counts[y as usize * w + x as usize] = 0;
                }
                log.push(SampleLogEntry {
                    bin: sf.bin,
                    polarity: sf.polarity,
                    block_x: leaf.x0,
                    block_y: leaf.y0,
                    side: leaf.side,
                    r: 0.0,
                    kept: 0,
                    removed: occupied.len(),
                });
                continue;
            }
            let Some(r) = schedule.radius(leaf.side) else {
                continue;
            };
            let result = poisson_disk_sample(&occupied, r);
            let mut keep = vec![false; occupied.len()];
            for s in &result.survivors {
                // occupied is in raster order
                let i = occupied
                    .binary_search_by_key(&raster_key(s), raster_key)
                    .expect("survivor comes from the occupied set");
                keep[i] = true;
            }
            for (loc, k) in occupied.iter().zip(&keep) {
                if !k {
                    counts[loc.1 as usize * w + loc.0 as usize] = 0;
                }
            }
            log.push(SampleLogEntry {
                bin: sf.bin,
                polarity: sf.polarity,
                block_x: leaf.x0,
                block_y: leaf.y0,
                side: leaf.side,
                r,
                kept: result.survivors.len(),
                removed: result.removed(),
            });
        }
        out.push(HistogramSubframe {
            counts,
            ..sf.clone()
        });
    }
    Ok(SampledVolume {
        subframes: out,
        log,
    })
}
