//! Index algebra for both attention levels: clipped sliding windows,
//! global-token receptive fields and the shared pooled grid.
//!
//! The second level pools keys and values once, over the whole sequence, on
//! a grid of segments starting at `0, ξ, 2ξ, …`. Token `i` then attends to
//! every segment whose center lies in `[i − w2, i + w2]`.

use std::ops::Range;

use crate::error::{Error, Result};

/// Receptive field of one token: the clipped interval `[lo, hi]` plus any
/// global indices outside it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborSpec {
    pub token: usize,
    pub lo: usize,
    pub hi: usize,
    pub extra: Vec<usize>,
}

impl NeighborSpec {
    pub fn len(&self) -> usize {
        self.hi - self.lo + 1 + self.extra.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, j: usize) -> bool {
        (self.lo..=self.hi).contains(&j) || self.extra.binary_search(&j).is_ok()
    }

    /// All indices in ascending order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        let split = self.extra.partition_point(|&g| g < self.lo);
        self.extra[..split]
            .iter()
            .copied()
            .chain(self.lo..=self.hi)
            .chain(self.extra[split..].iter().copied())
    }
}

pub fn neighbor_set(i: usize, w: usize, n: usize) -> Result<NeighborSpec> {
    if i >= n {
        return Err(Error::OutOfRange { index: i, len: n });
    }
    Ok(NeighborSpec {
        token: i,
        lo: i.saturating_sub(w),
        hi: (i + w).min(n - 1),
        extra: Vec::new(),
    })
}

/// Window of `i` united with the sorted global set `globals`; a global token
/// sees the whole sequence.
pub fn global_neighbor_set(i: usize, w: usize, n: usize, globals: &[usize]) -> Result<NeighborSpec> {
    let mut spec = neighbor_set(i, w, n)?;
    if globals.binary_search(&i).is_ok() {
        spec.lo = 0;
        spec.hi = n - 1;
    } else {
        spec.extra = globals
            .iter()
            .copied()
            .filter(|&g| g < spec.lo || g > spec.hi)
            .collect();
    }
    Ok(spec)
}

/// Segments of the shared pooling grid.
///
/// Centers are non-decreasing, and strictly increasing whenever `ξ ≥ 2`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PooledGrid {
    pub segment_starts: Vec<usize>,
    pub segment_lens: Vec<usize>,
    pub centers: Vec<usize>,
}

/// Center of a segment: `start + ⌈(1 + len)/2⌉ − 1`.
#[inline]
pub fn segment_center(start: usize, len: usize) -> usize {
    start + (len + 2) / 2 - 1
}

impl PooledGrid {
    pub fn len(&self) -> usize {
        self.segment_starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segment_starts.is_empty()
    }

    /// Source rows `[start, start + len)` of segment `j`.
    pub fn segment(&self, j: usize) -> Range<usize> {
        self.segment_starts[j]..self.segment_starts[j] + self.segment_lens[j]
    }

    /// Total number of source rows read when pooling one matrix on this grid.
    pub fn rows_read(&self) -> usize {
        self.segment_lens.iter().sum()
    }

    /// Grid over a padded sequence: segments made only of padding are
    /// dropped. Lengths and centers stay those of the unmasked grid.
    pub fn build_masked(pad_mask: &[bool], kappa: usize, xi: usize) -> Result<Self> {
        let full = build_pooled_grid(pad_mask.len(), kappa, xi)?;
        if pad_mask.iter().all(|&real| real) {
            return Ok(full);
        }
        let mut grid = PooledGrid::default();
        for j in 0..full.len() {
            if full.segment(j).any(|r| pad_mask[r]) {
                grid.segment_starts.push(full.segment_starts[j]);
                grid.segment_lens.push(full.segment_lens[j]);
                grid.centers.push(full.centers[j]);
            }
        }
        Ok(grid)
    }
}

/// Chunks `n` tokens into kernel-`κ`, stride-`ξ` segments. The trailing
/// partial segment is kept.
pub fn build_pooled_grid(n: usize, kappa: usize, xi: usize) -> Result<PooledGrid> {
    if kappa == 0 || xi == 0 || xi > kappa {
        return Err(Error::Config(format!(
            "pooled grid needs 1 <= xi <= kappa, got kappa={kappa}, xi={xi}"
        )));
    }
    let mut grid = PooledGrid::default();
    for start in (0..n).step_by(xi) {
        let len = kappa.min(n - start);
        grid.segment_starts.push(start);
        grid.segment_lens.push(len);
        grid.centers.push(segment_center(start, len));
    }
    Ok(grid)
}

/// Segments whose center lies in `[i − w2, i + w2]`, as a contiguous range.
pub fn visible_segments(i: usize, w2: usize, grid: &PooledGrid) -> Range<usize> {
    let lo = i.saturating_sub(w2);
    let hi = i.saturating_add(w2);
    let start = grid.centers.partition_point(|&c| c < lo);
    let end = grid.centers.partition_point(|&c| c <= hi);
    start..end.max(start)
}
