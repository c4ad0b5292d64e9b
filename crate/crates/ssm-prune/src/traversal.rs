//! Scan-order construction for 2D token grids: directional traversal paths,
//! token permutation, and merging of per-direction outputs back into grid
//! order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pruning::PositionMap;
use crate::tensor::TokenTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenGrid {
    pub height: usize,
    pub width: usize,
}

impl TokenGrid {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("grid dimensions must be >= 1"));
        }
        Ok(TokenGrid { height, width })
    }

    pub fn tokens(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ForwardRowMajor,
    BackwardRowMajor,
    /// Row-major with every odd row reversed, so consecutive scan steps are
    /// always grid-adjacent.
    SnakeForward,
    SnakeBackward,
}

/// A traversal order over a grid: `perm[i]` is the original grid index
/// visited at scan step `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanPath {
    pub direction: Direction,
    perm: Vec<usize>,
}

impl ScanPath {
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Inverse permutation: original index -> scan position.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inv[p] = i;
        }
        inv
    }
}

pub fn build_path(grid: &TokenGrid, direction: Direction) -> ScanPath {
    let n = grid.tokens();
    let perm = match direction {
        Direction::ForwardRowMajor => (0..n).collect(),
        Direction::BackwardRowMajor => (0..n).rev().collect(),
        Direction::SnakeForward => snake(grid),
        Direction::SnakeBackward => {
            let mut p = snake(grid);
            p.reverse();
            p
        }
    };
    ScanPath { direction, perm }
}

fn snake(grid: &TokenGrid) -> Vec<usize> {
    let mut perm = Vec::with_capacity(grid.tokens());
    for row in 0..grid.height {
        if row % 2 == 0 {
            perm.extend((0..grid.width).map(|col| row * grid.width + col));
        } else {
            perm.extend((0..grid.width).rev().map(|col| row * grid.width + col));
        }
    }
    perm
}

/// Reorders tokens into scan order: output position `i` holds input token
/// `perm[i]`.
pub fn permute(x: &TokenTensor, path: &ScanPath) -> Result<TokenTensor> {
    if x.tokens() != path.len() {
        return Err(Error::shape(format!(
            "tensor has {} tokens, path covers {}",
            x.tokens(),
            path.len()
        )));
    }
    x.gather_tokens(path.perm())
}

/// Inverse-permutes each per-direction output back to original grid order
/// and sums them elementwise.
pub fn cross_merge(outputs: &[(TokenTensor, ScanPath)]) -> Result<TokenTensor> {
    let (first, _) = outputs
        .first()
        .ok_or_else(|| Error::shape("cross_merge needs at least one output"))?;
    let mut merged = TokenTensor::zeros(first.batch(), first.tokens(), first.channels());
    for (y, path) in outputs {
        if !y.same_shape(first) {
            return Err(Error::shape("cross_merge outputs must share one shape"));
        }
        if y.tokens() != path.len() {
            return Err(Error::shape(format!(
                "output has {} tokens, path covers {}",
                y.tokens(),
                path.len()
            )));
        }
        for b in 0..y.batch() {
            for (i, &orig) in path.perm().iter().enumerate() {
                let src = y.token(b, i);
                let dst = merged.token_mut(b, orig);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += *s;
                }
            }
        }
    }
    Ok(merged)
}

/// How a pruned token set lays out along one traversal path.
///
/// `dense_order[j]` is the index (into kept-token storage ordered by
/// ascending original index) of the j-th kept token encountered along the
/// path, and `scan_map` marks which path positions hold kept tokens.
#[derive(Debug, Clone)]
pub struct PrunedPathView {
    pub dense_order: Vec<usize>,
    pub scan_map: PositionMap,
}

pub fn pruned_view(path: &ScanPath, map: &PositionMap) -> Result<PrunedPathView> {
    if path.len() != map.original_len() {
        return Err(Error::shape(format!(
            "path covers {} positions, map covers {}",
            path.len(),
            map.original_len()
        )));
    }
    let mut dense_rank = vec![usize::MAX; map.original_len()];
    for (j, &q) in map.remaining_indices().iter().enumerate() {
        dense_rank[q] = j;
    }
    let mut dense_order = Vec::with_capacity(map.kept_len());
    let mut kept_scan_positions = Vec::with_capacity(map.kept_len());
    for (i, &orig) in path.perm().iter().enumerate() {
        if map.is_kept(orig) {
            dense_order.push(dense_rank[orig]);
            kept_scan_positions.push(i);
        }
    }
    let scan_map = PositionMap::from_kept(path.len(), kept_scan_positions)?;
    Ok(PrunedPathView { dense_order, scan_map })
}
