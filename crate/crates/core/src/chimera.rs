//! Logical Chimera topology.
//!
//! An `m x n` grid of 8-node cells. Node `k` of cell `(r, c)` has id
//! `8 * (r * n + c) + k`. Inside a cell, ids 0-3 form one side of a complete
//! K4,4 and ids 4-7 the other. Nodes 0-3 additionally link to the same `k` in
//! the cells above and below; nodes 4-7 link to the same `k` in the cells to
//! the left and right.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CELL_SIZE: usize = 8;
const HALF: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChimeraError {
    #[error("chimera dimensions must be positive, got {rows}x{cols}")]
    ZeroDimension { rows: usize, cols: usize },
    #[error("hidden size {h} outside 1..={max}")]
    HiddenRange { h: usize, max: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChimeraGraph {
    rows: usize,
    cols: usize,
    node_count: usize,
    /// Sorted, each pair stored once with `u < v`.
    edges: Vec<(u32, u32)>,
}

impl ChimeraGraph {
    pub fn build(rows: usize, cols: usize) -> Result<Self, ChimeraError> {
        if rows == 0 || cols == 0 {
            return Err(ChimeraError::ZeroDimension { rows, cols });
        }
        let id = |r: usize, c: usize, k: usize| (CELL_SIZE * (r * cols + c) + k) as u32;
        let mut edges = Vec::with_capacity(16 * rows * cols + 4 * rows * (cols - 1) + 4 * (rows - 1) * cols);
        for r in 0..rows {
            for c in 0..cols {
                for a in 0..HALF {
                    for b in HALF..CELL_SIZE {
                        edges.push((id(r, c, a), id(r, c, b)));
                    }
                }
                if r + 1 < rows {
                    for k in 0..HALF {
                        edges.push((id(r, c, k), id(r + 1, c, k)));
                    }
                }
                if c + 1 < cols {
                    for k in HALF..CELL_SIZE {
                        edges.push((id(r, c, k), id(r, c + 1, k)));
                    }
                }
            }
        }
        edges.sort_unstable();
        Ok(Self {
            rows,
            cols,
            node_count: CELL_SIZE * rows * cols,
            edges,
        })
    }

    /// Smallest square-ish grid holding `h` nodes, restricted to its first
    /// `h` ids.
    pub fn for_hidden_size(h: usize) -> Result<Self, ChimeraError> {
        if h == 0 {
            return Err(ChimeraError::HiddenRange { h, max: 0 });
        }
        let cells = h.div_ceil(CELL_SIZE);
        let side = (cells as f64).sqrt().ceil() as usize;
        let rows = cells.div_ceil(side);
        Self::build(rows, side)?.hidden_subgraph(h)
    }

    /// Induced subgraph on node ids `0..h`.
    pub fn hidden_subgraph(&self, h: usize) -> Result<Self, ChimeraError> {
        if h == 0 || h > self.node_count {
            return Err(ChimeraError::HiddenRange {
                h,
                max: self.node_count,
            });
        }
        let limit = h as u32;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            node_count: h,
            edges: self
                .edges
                .iter()
                .copied()
                .filter(|&(u, v)| u < limit && v < limit)
                .collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// `(row, col, k)` position of a node id.
    pub fn locate(&self, node: usize) -> (usize, usize, usize) {
        let cell = node / CELL_SIZE;
        (cell / self.cols, cell % self.cols, node % CELL_SIZE)
    }

    pub fn degree(&self, node: usize) -> usize {
        let n = node as u32;
        self.edges.iter().filter(|&&(u, v)| u == n || v == n).count()
    }

    /// One `u v` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::with_capacity(self.edges.len() * 8);
        for (u, v) in &self.edges {
            let _ = writeln!(out, "{u} {v}");
        }
        out
    }
}

/// Closed-form edge count of a full `m x n` grid.
pub fn expected_edge_count(rows: usize, cols: usize) -> usize {
    16 * rows * cols + 4 * rows * (cols - 1) + 4 * (rows - 1) * cols
}
