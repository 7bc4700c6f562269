use super::EntropyError;

/// Codes block-relative locations as linear indices: the first as its index
/// `y * side + x`, every later one as the (positive) gap to its predecessor.
///
/// Input must be strictly increasing in raster order (y-major, then x).
pub fn delta_encode(locations: &[(u32, u32)], side: u32) -> Result<Vec<u32>, EntropyError> {
    let mut out = Vec::with_capacity(locations.len());
    let mut prev: Option<u32> = None;
    for &(x, y) in locations {
        if x >= side || y >= side {
            return Err(EntropyError::OutOfBlock { x, y, side });
        }
        let idx = y * side + x;
        match prev {
            None => out.push(idx),
            Some(p) if idx > p => out.push(idx - p),
            Some(_) => return Err(EntropyError::Unsorted),
        }
        prev = Some(idx);
    }
    Ok(out)
}

pub fn delta_decode(symbols: &[u32], side: u32) -> Result<Vec<(u32, u32)>, EntropyError> {
    let area = side as u64 * side as u64;
    let mut out = Vec::with_capacity(symbols.len());
    let mut idx: u64 = 0;
    for (i, &s) in symbols.iter().enumerate() {
        if i == 0 {
            idx = s as u64;
        } else {
            if s == 0 {
                return Err(EntropyError::Unsorted);
            }
            idx += s as u64;
        }
        if idx >= area {
            return Err(EntropyError::OutOfBlock {
                x: (idx % side as u64) as u32,
                y: (idx / side as u64).min(u32::MAX as u64) as u32,
                side,
            });
        }
        out.push(((idx % side as u64) as u32, (idx / side as u64) as u32));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[test]
    fn origin_only() {
        assert_eq!(delta_encode(&[(0, 0)], 8).unwrap(), vec![0]);
    }

    #[test]
    fn raster_gaps() {
        assert_eq!(delta_encode(&[(0, 0), (2, 0), (0, 1)], 8).unwrap(), vec![0, 2, 6]);
    }

    #[test]
    fn rejects_unsorted_and_duplicates() {
        assert_eq!(delta_encode(&[(2, 0), (0, 0)], 8), Err(EntropyError::Unsorted));
        assert_eq!(delta_encode(&[(1, 1), (1, 1)], 8), Err(EntropyError::Unsorted));
        assert!(delta_encode(&[(8, 0)], 8).is_err());
        assert!(delta_decode(&[3, 0], 8).is_err());
        assert!(delta_decode(&[60, 4], 8).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(cells in prop::collection::btree_set((0u32..32, 0u32..32), 0..100)) {
            let mut locs: Vec<(u32, u32)> = cells.iter().copied().collect();
            locs.sort_by_key(|&(x, y)| (y, x));
            let syms = delta_encode(&locs, 32).unwrap();
            let back = delta_decode(&syms, 32).unwrap();
            prop_assert_eq!(back.iter().copied().collect::<BTreeSet<_>>(), cells);
            prop_assert_eq!(back, locs);
        }
    }
}
