//! Rate-distortion optimal quad-tree segmentation of an intensity frame.
//!
//! Each leaf is either *skip* (copy the previous reconstruction) or *acquire*
//! (transmit the block mean). For a multiplier `lambda` the tree minimizing
//! `J = D + lambda * R` is found by a bottom-up dynamic program over a padded
//! power-of-two square; [`optimize_rate`] searches `lambda` so that the tree
//! fits a bit budget.

mod leaf_map;
mod rate_control;

pub use leaf_map::{reconstruct, LeafBlock, LeafMap};
pub use rate_control::{optimize_rate, RateControlled};

use serde::{Deserialize, Serialize};

use crate::entropy::BitWriter;
use crate::frame::IntensityFrame;
use crate::{Error, Result};

/// Bit cost assigned to each tree element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateModel {
    /// Split/leaf flag, paid by every node.
    pub bits_structure: u32,
    /// Skip/acquire flag, paid by every leaf.
    pub bits_mode: u32,
    /// Block value, paid by acquire leaves.
    pub bits_value: u32,
}

impl Default for RateModel {
    fn default() -> Self {
        RateModel {
            bits_structure: 1,
            bits_mode: 1,
            bits_value: 8,
        }
    }
}

impl RateModel {
    pub fn split_rate(&self) -> u64 {
        self.bits_structure as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LeafMode {
    Skip,
    Acquire,
}

pub fn leaf_rate(mode: LeafMode, model: &RateModel) -> u64 {
    let base = model.bits_structure as u64 + model.bits_mode as u64;
    match mode {
        LeafMode::Skip => base,
        LeafMode::Acquire => base + model.bits_value as u64,
    }
}

/// Sum of absolute differences between a block of the current frame and the
/// same block of the previous reconstruction.
pub fn leaf_distortion_skip(current: &[u8], reconstruction: &[u8]) -> Result<f64> {
    if current.len() != reconstruction.len() {
        return Err(Error::invalid(format!(
            "block shapes differ ({} vs {} pixels)",
            current.len(),
            reconstruction.len()
        )));
    }
    let sad: u64 = current
        .iter()
        .zip(reconstruction)
        .map(|(&a, &b)| (a as i32 - b as i32).unsigned_abs() as u64)
        .sum();
    Ok(sad as f64)
}

/// `sigma * 4^(max_depth - level)` with `sigma` the population standard
/// deviation of the block.
pub fn leaf_distortion_acquire(block: &[u8], level: u8, max_depth: u8) -> Result<f64> {
    if block.is_empty() {
        return Err(Error::invalid("acquire distortion of an empty block"));
    }
    if level > max_depth {
        return Err(Error::invalid(format!("level {level} exceeds max depth {max_depth}")));
    }
    let n = block.len() as u64;
    let sum: u64 = block.iter().map(|&v| v as u64).sum();
    let sumsq: u64 = block.iter().map(|&v| (v as u64) * (v as u64)).sum();
    Ok(acquire_distortion(n, sum, sumsq, max_depth - level))
}

/// Population standard deviation from integer moments, computed as
/// `sqrt(n * sumsq - sum^2) / n` so the only rounding happens in the last two steps.
pub(crate) fn population_std(n: u64, sum: u64, sumsq: u128) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let scaled = n as u128 * sumsq - (sum as u128) * (sum as u128);
    (scaled as f64).sqrt() / n as f64
}

fn acquire_distortion(n: u64, sum: u64, sumsq: u64, depth_below: u8) -> f64 {
    population_std(n, sum, sumsq as u128) * 4f64.powi(depth_below as i32)
}

/// Split, or one of the two leaf modes.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeState {
    Split(Box<[QuadTreeNode; 4]>),
    Skip,
    Acquire { mean: u8 },
}

/// One square block. Children are stored in Z order: top-left, top-right,
/// bottom-left, bottom-right.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadTreeNode {
    pub level: u8,
    pub x0: u32,
    pub y0: u32,
    pub side: u32,
    pub state: NodeState,
    /// Distortion of the subtree rooted here.
    pub distortion: f64,
    /// Bits of the subtree rooted here.
    pub rate: u64,
}

impl QuadTreeNode {
    pub fn is_leaf(&self) -> bool {
        !matches!(self.state, NodeState::Split(_))
    }

    pub fn leaf_mode(&self) -> Option<LeafMode> {
        match self.state {
            NodeState::Split(_) => None,
            NodeState::Skip => Some(LeafMode::Skip),
            NodeState::Acquire { .. } => Some(LeafMode::Acquire),
        }
    }

    /// Visits leaves in preorder (Z order).
    pub fn for_each_leaf<'a>(&'a self, f: &mut impl FnMut(&'a QuadTreeNode)) {
        match &self.state {
            NodeState::Split(children) => children.iter().for_each(|c| c.for_each_leaf(f)),
            _ => f(self),
        }
    }

    pub fn node_count(&self) -> usize {
        match &self.state {
            NodeState::Split(children) => 1 + children.iter().map(|c| c.node_count()).sum::<usize>(),
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadTree {
    pub root: QuadTreeNode,
    pub root_side: u32,
    pub max_depth: u8,
    pub width: usize,
    pub height: usize,
    pub lambda: f64,
    /// The Lagrangian cost the optimizer minimized.
    pub cost: f64,
    pub rate_model: RateModel,
}

impl QuadTree {
    pub fn total_rate(&self) -> u64 {
        self.root.rate
    }

    pub fn total_distortion(&self) -> f64 {
        self.root.distortion
    }

    pub fn leaves(&self) -> Vec<&QuadTreeNode> {
        let mut out = Vec::new();
        self.root.for_each_leaf(&mut |n| out.push(n));
        out
    }

    pub fn leaf_map(&self) -> LeafMap {
        LeafMap::from_tree(self)
    }

    /// Preorder serialization: a split flag per node, a mode bit per leaf and
    /// the 8-bit mean of each acquire leaf.
    pub fn write_bits(&self, w: &mut BitWriter) {
        fn visit(node: &QuadTreeNode, w: &mut BitWriter) {
            match &node.state {
                NodeState::Split(children) => {
                    w.write_bit(true);
                    children.iter().for_each(|c| visit(c, w));
                }
                NodeState::Skip => {
                    w.write_bit(false);
                    w.write_bit(false);
                }
                NodeState::Acquire { mean } => {
                    w.write_bit(false);
                    w.write_bit(true);
                    w.write_bits(*mean as u64, 8);
                }
            }
        }
        visit(&self.root, w);
    }
}

/// Smallest power of two covering both frame dimensions.
pub fn root_side_for(width: usize, height: usize) -> u32 {
    (width.max(height).max(1) as u32).next_power_of_two()
}

pub fn full_depth_for(root_side: u32) -> u8 {
    root_side.trailing_zeros() as u8
}

#[derive(Debug, Clone, Copy, Default)]
struct NodeStats {
    n: u64,
    sum: u64,
    sumsq: u64,
    sad: u64,
}

impl NodeStats {
    fn add(&mut self, o: &NodeStats) {
        self.n += o.n;
        self.sum += o.sum;
        self.sumsq += o.sumsq;
        self.sad += o.sad;
    }

    fn mean(&self) -> u8 {
        if self.n == 0 {
            0
        } else {
            ((self.sum + self.n / 2) / self.n) as u8
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Choice {
    Skip,
    Acquire,
    Split,
}

/// Per-node statistics of a frame pair, reusable across `lambda` values.
///
/// Pixels of the padded square that fall outside the frame are excluded from
/// every statistic, so padding never contributes distortion.
#[derive(Debug, Clone)]
pub struct RdProblem {
    width: usize,
    height: usize,
    root_side: u32,
    max_depth: u8,
    model: RateModel,
    /// `levels[l]` holds `4^l` nodes in row-major order of the level grid.
    levels: Vec<Vec<NodeStats>>,
    d_skip: Vec<Vec<f64>>,
    d_acquire: Vec<Vec<f64>>,
}

impl RdProblem {
    /// `max_depth` defaults to subdividing down to single pixels.
    pub fn new(
        current: &IntensityFrame,
        reconstruction: &IntensityFrame,
        model: RateModel,
        max_depth: Option<u8>,
    ) -> Result<Self> {
        if !current.same_shape(reconstruction) {
            return Err(Error::invalid("current and reconstructed frames differ in shape"));
        }
        let (width, height) = (current.width(), current.height());
        let root_side = root_side_for(width, height);
        let full = full_depth_for(root_side);
        let max_depth = max_depth.unwrap_or(full);
        if max_depth > full {
            return Err(Error::invalid(format!(
                "max depth {max_depth} exceeds {full} for a {root_side}-pixel root"
            )));
        }

        let mut levels: Vec<Vec<NodeStats>> = Vec::with_capacity(max_depth as usize + 1);
        let deepest_dim = 1usize << max_depth;
        let deepest_side = (root_side >> max_depth) as usize;
        let mut deepest = vec![NodeStats::default(); deepest_dim * deepest_dim];
        for y in 0..height {
            let ny = y / deepest_side;
            for x in 0..width {
                let nx = x / deepest_side;
                let c = current.get(x, y) as u64;
                let r = reconstruction.get(x, y) as u64;
                let s = &mut deepest[ny * deepest_dim + nx];
                s.n += 1;
                s.sum += c;
                s.sumsq += c * c;
                s.sad += c.abs_diff(r);
            }
        }
        levels.push(deepest);
        for l in (0..max_depth as usize).rev() {
            let dim = 1usize << l;
            let child = levels.last().unwrap();
            let cdim = dim * 2;
            let mut stats = vec![NodeStats::default(); dim * dim];
            for ny in 0..dim {
                for nx in 0..dim {
                    let s = &mut stats[ny * dim + nx];
                    for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        s.add(&child[(2 * ny + dy) * cdim + 2 * nx + dx]);
                    }
                }
            }
            levels.push(stats);
        }
        levels.reverse();

        let d_skip = levels
            .iter()
            .map(|lv| lv.iter().map(|s| s.sad as f64).collect())
            .collect();
        let d_acquire = levels
            .iter()
            .enumerate()
            .map(|(l, lv)| {
                lv.iter()
                    .map(|s| acquire_distortion(s.n, s.sum, s.sumsq, max_depth - l as u8))
                    .collect()
            })
            .collect();

        Ok(RdProblem {
            width,
            height,
            root_side,
            max_depth,
            model,
            levels,
            d_skip,
            d_acquire,
        })
    }

    pub fn root_side(&self) -> u32 {
        self.root_side
    }

    pub fn max_depth(&self) -> u8 {
        self.max_depth
    }

    pub fn model(&self) -> &RateModel {
        &self.model
    }

    /// Rate of the cheapest single-leaf tree; nothing smaller is representable.
    pub fn min_rate(&self) -> u64 {
        leaf_rate(LeafMode::Skip, &self.model).min(leaf_rate(LeafMode::Acquire, &self.model))
    }

    /// Minimizes `D + lambda * R` over all segmentations and leaf modes.
    ///
    /// Ties in cost go to the lower rate, then to skip, acquire, split in
    /// that order.
    pub fn solve(&self, lambda: f64) -> QuadTree {
        let depth = self.max_depth as usize;
        let r_skip = leaf_rate(LeafMode::Skip, &self.model);
        let r_acq = leaf_rate(LeafMode::Acquire, &self.model);
        let r_split = self.model.split_rate();

        let mut cost: Vec<Vec<f64>> = vec![Vec::new(); depth + 1];
        let mut rate: Vec<Vec<u64>> = vec![Vec::new(); depth + 1];
        let mut dist: Vec<Vec<f64>> = vec![Vec::new(); depth + 1];
        let mut choice: Vec<Vec<Choice>> = vec![Vec::new(); depth + 1];

        for l in (0..=depth).rev() {
            let dim = 1usize << l;
            let count = dim * dim;
            let (mut lc, mut lr, mut ld, mut lch) = (
                Vec::with_capacity(count),
                Vec::with_capacity(count),
                Vec::with_capacity(count),
                Vec::with_capacity(count),
            );
            for i in 0..count {
                let ds = self.d_skip[l][i];
                let da = self.d_acquire[l][i];
                let mut best = (ds + lambda * r_skip as f64, r_skip, ds, Choice::Skip);
                let acq = (da + lambda * r_acq as f64, r_acq, da, Choice::Acquire);
                if better(&acq, &best) {
                    best = acq;
                }
                if l < depth {
                    let (ny, nx) = (i / dim, i % dim);
                    let cdim = dim * 2;
                    let kids = [
                        (2 * ny) * cdim + 2 * nx,
                        (2 * ny) * cdim + 2 * nx + 1,
                        (2 * ny + 1) * cdim + 2 * nx,
                        (2 * ny + 1) * cdim + 2 * nx + 1,
                    ];
                    let cc = &cost[l + 1];
                    let cr = &rate[l + 1];
                    let cd = &dist[l + 1];
                    let j = cc[kids[0]] + cc[kids[1]] + cc[kids[2]] + cc[kids[3]]
                        + lambda * r_split as f64;
                    let r = cr[kids[0]] + cr[kids[1]] + cr[kids[2]] + cr[kids[3]] + r_split;
                    let d = cd[kids[0]] + cd[kids[1]] + cd[kids[2]] + cd[kids[3]];
                    let split = (j, r, d, Choice::Split);
                    if better(&split, &best) {
                        best = split;
                    }
                }
                lc.push(best.0);
                lr.push(best.1);
                ld.push(best.2);
                lch.push(best.3);
            }
            cost[l] = lc;
            rate[l] = lr;
            dist[l] = ld;
            choice[l] = lch;
        }

        let root = self.build_node(0, 0, 0, &choice, &rate, &dist);
        QuadTree {
            root,
            root_side: self.root_side,
            max_depth: self.max_depth,
            width: self.width,
            height: self.height,
            lambda,
            cost: cost[0][0],
            rate_model: self.model,
        }
    }

    fn build_node(
        &self,
        level: usize,
        nx: usize,
        ny: usize,
        choice: &[Vec<Choice>],
        rate: &[Vec<u64>],
        dist: &[Vec<f64>],
    ) -> QuadTreeNode {
        let dim = 1usize << level;
        let i = ny * dim + nx;
        let side = self.root_side >> level;
        let state = match choice[level][i] {
            Choice::Skip => NodeState::Skip,
            Choice::Acquire => NodeState::Acquire {
                mean: self.levels[level][i].mean(),
            },
            Choice::Split => NodeState::Split(Box::new([
                self.build_node(level + 1, 2 * nx, 2 * ny, choice, rate, dist),
                self.build_node(level + 1, 2 * nx + 1, 2 * ny, choice, rate, dist),
                self.build_node(level + 1, 2 * nx, 2 * ny + 1, choice, rate, dist),
                self.build_node(level + 1, 2 * nx + 1, 2 * ny + 1, choice, rate, dist),
            ])),
        };
        QuadTreeNode {
            level: level as u8,
            x0: nx as u32 * side,
            y0: ny as u32 * side,
            side,
            state,
            distortion: dist[level][i],
            rate: rate[level][i],
        }
    }
}

fn better(a: &(f64, u64, f64, Choice), b: &(f64, u64, f64, Choice)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Optimal tree for a fixed multiplier.
pub fn optimize_tree(
    current: &IntensityFrame,
    reconstruction: &IntensityFrame,
    lambda: f64,
    model: RateModel,
    max_depth: Option<u8>,
) -> Result<QuadTree> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(RdProblem::new(current, reconstruction, model, max_depth)?.solve(lambda))
}
