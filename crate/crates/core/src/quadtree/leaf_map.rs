use super::{full_depth_for, LeafMode, NodeState, QuadTree};
use crate::entropy::{BitReader, EntropyError};
use crate::frame::IntensityFrame;
use crate::{Error, Result};

/// One leaf block, possibly extending past the frame edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeafBlock {
    pub x0: u32,
    pub y0: u32,
    pub side: u32,
    pub mode: LeafMode,
    /// Acquired block mean, when the leaf is an acquire leaf.
    pub value: Option<u8>,
}

impl LeafBlock {
    /// Exclusive bottom-right corner after clipping to the frame.
    pub fn clipped_end(&self, width: usize, height: usize) -> (usize, usize) {
        (
            ((self.x0 + self.side) as usize).min(width),
            ((self.y0 + self.side) as usize).min(height),
        )
    }
}

/// Per-pixel leaf assignment of a block layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafMap {
    width: usize,
    height: usize,
    leaves: Vec<LeafBlock>,
    cell_leaf: Vec<u32>,
}

impl LeafMap {
    fn from_leaves(width: usize, height: usize, all: Vec<LeafBlock>) -> Self {
        let leaves: Vec<LeafBlock> = all
            .into_iter()
            .filter(|l| (l.x0 as usize) < width && (l.y0 as usize) < height)
            .collect();
        let mut cell_leaf = vec![u32::MAX; width * height];
        for (i, l) in leaves.iter().enumerate() {
            let (x1, y1) = l.clipped_end(width, height);
            for y in l.y0 as usize..y1 {
                cell_leaf[y * width + l.x0 as usize..y * width + x1].fill(i as u32);
            }
        }
        debug_assert!(cell_leaf.iter().all(|&c| c != u32::MAX));
        LeafMap {
            width,
            height,
            leaves,
            cell_leaf,
        }
    }

    pub fn from_tree(tree: &QuadTree) -> Self {
        let mut all = Vec::new();
        tree.root.for_each_leaf(&mut |n| {
            all.push(LeafBlock {
                x0: n.x0,
                y0: n.y0,
                side: n.side,
                mode: n.leaf_mode().unwrap(),
                value: match n.state {
                    NodeState::Acquire { mean } => Some(mean),
                    _ => None,
                },
            })
        });
        Self::from_leaves(tree.width, tree.height, all)
    }

    /// Regular grid of `side`-pixel blocks in raster order. All blocks are
    /// marked acquire.
    pub fn uniform(width: usize, height: usize, side: u32) -> Result<Self> {
        if side == 0 || width == 0 || height == 0 {
            return Err(Error::invalid("uniform layout needs positive sizes"));
        }
        let mut all = Vec::new();
        for by in (0..height as u32).step_by(side as usize) {
            for bx in (0..width as u32).step_by(side as usize) {
                all.push(LeafBlock {
                    x0: bx,
                    y0: by,
                    side,
                    mode: LeafMode::Acquire,
                    value: None,
                });
            }
        }
        Ok(Self::from_leaves(width, height, all))
    }

    /// Rebuilds the leaf layout from the preorder bits written by
    /// [`QuadTree::write_bits`].
    pub fn read_tree_bits(
        reader: &mut BitReader<'_>,
        width: usize,
        height: usize,
        root_side: u32,
        max_depth: u8,
    ) -> std::result::Result<Self, EntropyError> {
        if !root_side.is_power_of_two() || max_depth > full_depth_for(root_side) {
            return Err(EntropyError::Malformed {
                bit_offset: reader.position(),
                reason: "invalid quad-tree geometry".into(),
            });
        }
        fn visit(
            r: &mut BitReader<'_>,
            level: u8,
            x0: u32,
            y0: u32,
            side: u32,
            max_depth: u8,
            out: &mut Vec<LeafBlock>,
        ) -> std::result::Result<(), EntropyError> {
            let at = r.position();
            if r.read_bit()? {
                if level >= max_depth {
                    return Err(EntropyError::Malformed {
                        bit_offset: at,
                        reason: "split flag below maximum depth".into(),
                    });
                }
                let h = side / 2;
                for (dx, dy) in [(0, 0), (h, 0), (0, h), (h, h)] {
                    visit(r, level + 1, x0 + dx, y0 + dy, h, max_depth, out)?;
                }
            } else if r.read_bit()? {
                let mean = r.read_bits(8)? as u8;
                out.push(LeafBlock {
                    x0,
                    y0,
                    side,
                    mode: LeafMode::Acquire,
                    value: Some(mean),
                });
            } else {
                out.push(LeafBlock {
                    x0,
                    y0,
                    side,
                    mode: LeafMode::Skip,
                    value: None,
                });
            }
            Ok(())
        }
        let mut all = Vec::new();
        visit(reader, 0, 0, 0, root_side, max_depth, &mut all)?;
        Ok(Self::from_leaves(width, height, all))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Leaves that intersect the frame, in layout order.
    pub fn leaves(&self) -> &[LeafBlock] {
        &self.leaves
    }

    pub fn leaf_index_at(&self, x: usize, y: usize) -> usize {
        self.cell_leaf[y * self.width + x] as usize
    }

    pub fn leaf_at(&self, x: usize, y: usize) -> &LeafBlock {
        &self.leaves[self.leaf_index_at(x, y)]
    }

    /// `(side, mode)` for every pixel, row-major.
    pub fn grid(&self) -> Vec<(u32, LeafMode)> {
        self.cell_leaf
            .iter()
            .map(|&i| {
                let l = &self.leaves[i as usize];
                (l.side, l.mode)
            })
            .collect()
    }
}

/// Next reconstruction: skip leaves copy `previous`, acquire leaves take the
/// block mean of `current`.
pub fn reconstruct(
    tree: &QuadTree,
    previous: &IntensityFrame,
    current: &IntensityFrame,
) -> Result<IntensityFrame> {
    if !previous.same_shape(current) || previous.width() != tree.width || previous.height() != tree.height {
        return Err(Error::invalid("frame shapes do not match the tree"));
    }
    let mut out = previous.clone();
    let map = tree.leaf_map();
    for leaf in map.leaves() {
        if let Some(mean) = leaf.value {
            let (x1, y1) = leaf.clipped_end(tree.width, tree.height);
            for y in leaf.y0 as usize..y1 {
                for x in leaf.x0 as usize..x1 {
                    out.set(x, y, mean);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::BitWriter;
    use crate::quadtree::{optimize_tree, RateModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy_pair(seed: u64, w: usize, h: usize) -> (IntensityFrame, IntensityFrame) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cur: Vec<u8> = (0..w * h).map(|i| ((i % w) * 4) as u8 ^ rng.gen_range(0..16)).collect();
        let rec: Vec<u8> = cur.iter().map(|&v| v.saturating_add(rng.gen_range(0..3))).collect();
        (
            IntensityFrame::new(w, h, cur).unwrap(),
            IntensityFrame::new(w, h, rec).unwrap(),
        )
    }

    #[test]
    fn single_root_maps_every_pixel_to_root() {
        let f = IntensityFrame::filled(64, 64, 9);
        let tree = optimize_tree(&f, &f, 1e9, RateModel::default(), None).unwrap();
        let grid = tree.leaf_map().grid();
        assert_eq!(grid.len(), 64 * 64);
        assert!(grid.iter().all(|&(s, _)| s == 64));
    }

    #[test]
    fn full_depth_maps_every_pixel_to_unit_leaf() {
        let (cur, _) = noisy_pair(1, 16, 16);
        let recon = IntensityFrame::new(16, 16, cur.pixels().iter().map(|v| !v).collect()).unwrap();
        let tree = optimize_tree(&cur, &recon, 0.0, RateModel::default(), None).unwrap();
        assert!(tree.leaf_map().grid().iter().all(|&(s, _)| s == 1));
    }

    #[test]
    fn mixed_tree_covers_each_pixel_once() {
        let (cur, recon) = noisy_pair(2, 21, 13);
        let tree = optimize_tree(&cur, &recon, 3.0, RateModel::default(), None).unwrap();
        let map = tree.leaf_map();
        let mut hits = vec![0u32; 21 * 13];
        for l in map.leaves() {
            let (x1, y1) = l.clipped_end(21, 13);
            for y in l.y0 as usize..y1 {
                for x in l.x0 as usize..x1 {
                    hits[y * 21 + x] += 1;
                }
            }
        }
        assert!(hits.iter().all(|&h| h == 1));
        let area: usize = map
            .leaves()
            .iter()
            .map(|l| {
                let (x1, y1) = l.clipped_end(21, 13);
                (x1 - l.x0 as usize) * (y1 - l.y0 as usize)
            })
            .sum();
        assert_eq!(area, 21 * 13);
    }

    #[test]
    fn tree_bits_round_trip_and_match_rate() {
        let (cur, recon) = noisy_pair(3, 32, 32);
        for lambda in [0.0, 0.5, 4.0, 40.0, 1e6] {
            let tree = optimize_tree(&cur, &recon, lambda, RateModel::default(), None).unwrap();
            let mut w = BitWriter::new();
            tree.write_bits(&mut w);
            assert_eq!(w.bit_len(), tree.total_rate());
            let (bytes, _) = w.finish();
            let mut r = BitReader::new(&bytes);
            let map = LeafMap::read_tree_bits(&mut r, 32, 32, tree.root_side, tree.max_depth).unwrap();
            assert_eq!(map, tree.leaf_map());
        }
    }

    #[test]
    fn uniform_layout_clips_edges() {
        let map = LeafMap::uniform(40, 20, 16).unwrap();
        assert_eq!(map.leaves().len(), 3 * 2);
        assert_eq!(map.leaf_at(39, 19).x0, 32);
        assert_eq!(map.leaf_at(39, 19).clipped_end(40, 20), (40, 20));
    }

    #[test]
    fn reconstruction_copies_skip_and_fills_acquire() {
        let (cur, prev) = noisy_pair(4, 16, 16);
        let tree = optimize_tree(&cur, &prev, 2.0, RateModel::default(), None).unwrap();
        let next = reconstruct(&tree, &prev, &cur).unwrap();
        let map = tree.leaf_map();
        for y in 0..16 {
            for x in 0..16 {
                let leaf = map.leaf_at(x, y);
                match leaf.mode {
                    LeafMode::Skip => assert_eq!(next.get(x, y), prev.get(x, y)),
                    LeafMode::Acquire => assert_eq!(Some(next.get(x, y)), leaf.value),
                }
            }
        }
    }
}
