//! Uniform 1-D grids, cell fields and ghost-cell boundary handling.
//!
//! Cells are numbered `1..=N` and every field is extended by two ghost cells
//! per side before a step, so an extended array holds `Q_{-1} .. Q_{N+2}`.
//! Extended index `e` stores `Q_{e-1}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of ghost cells on each side of the domain.
pub const GHOSTS: usize = 2;

/// Smallest grid accepted: the update stencil spans `i-2..=i+2`.
pub const MIN_CELLS: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("degenerate interval [{x_left}, {x_right}]")]
    DegenerateInterval { x_left: f64, x_right: f64 },
    #[error("grid needs at least {MIN_CELLS} cells, got {0}")]
    TooFewCells(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x_left: f64,
    pub x_right: f64,
    pub n_cells: usize,
    pub dx: f64,
}

impl Grid {
    pub fn new(x_left: f64, x_right: f64, n_cells: usize) -> Result<Self, GridError> {
        if !(x_right > x_left) || !x_left.is_finite() || !x_right.is_finite() {
            return Err(GridError::DegenerateInterval { x_left, x_right });
        }
        if n_cells < MIN_CELLS {
            return Err(GridError::TooFewCells(n_cells));
        }
        Ok(Self {
            x_left,
            x_right,
            n_cells,
            dx: (x_right - x_left) / n_cells as f64,
        })
    }

    /// Center of cell `i` in 1-based numbering.
    pub fn center(&self, i: usize) -> f64 {
        self.x_left + (i as f64 - 0.5) * self.dx
    }

    pub fn centers(&self) -> Vec<f64> {
        uniform_centers(self.x_left, self.x_right, self.n_cells)
    }
}

/// Cell centers of a uniform partition of `[x_left, x_right]` into `n` cells.
pub fn uniform_centers(x_left: f64, x_right: f64, n: usize) -> Vec<f64> {
    let dx = (x_right - x_left) / n as f64;
    (1..=n).map(|i| x_left + (i as f64 - 0.5) * dx).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Periodic,
    Outflow,
}

/// The discrete state at one time level: one `D`-vector per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField<const D: usize> {
    pub values: Vec<[f64; D]>,
    pub time: f64,
}

impl<const D: usize> CellField<D> {
    pub fn new(values: Vec<[f64; D]>, time: f64) -> Self {
        Self { values, time }
    }

    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    pub const fn n_components(&self) -> usize {
        D
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    /// Per-component sum of the cell values times `dx`.
    pub fn integral(&self, dx: f64) -> [f64; D] {
        let mut total = [0.0; D];
        for q in &self.values {
            for d in 0..D {
                total[d] += q[d];
            }
        }
        total.map(|t| t * dx)
    }
}

/// Extends `values` (cells `1..=N`) with two ghost cells per side.
///
/// Panics if fewer than two cells are given.
pub fn fill_ghost<const D: usize>(values: &[[f64; D]], bc: BoundaryKind) -> Vec<[f64; D]> {
    let n = values.len();
    assert!(n >= 2, "ghost filling needs at least two cells");
    let mut ext = Vec::with_capacity(n + 2 * GHOSTS);
    match bc {
        BoundaryKind::Periodic => {
            ext.push(values[n - 2]);
            ext.push(values[n - 1]);
            ext.extend_from_slice(values);
            ext.push(values[0]);
            ext.push(values[1]);
        }
        BoundaryKind::Outflow => {
            ext.push(values[0]);
            ext.push(values[0]);
            ext.extend_from_slice(values);
            ext.push(values[n - 1]);
            ext.push(values[n - 1]);
        }
    }
    ext
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_grids() {
        let g = Grid::new(-1.0, 1.0, 100).unwrap();
        assert!((g.dx - 0.02).abs() < 1e-15);
        let g = Grid::new(0.0, 800.0, 100).unwrap();
        assert_eq!(g.dx, 8.0);
        assert!((g.center(1) - 4.0).abs() < 1e-12);
        assert!((g.center(100) - 796.0).abs() < 1e-12);
    }

    #[test]
    fn four_cell_centers() {
        assert_eq!(uniform_centers(0.0, 1.0, 4), vec![0.125, 0.375, 0.625, 0.875]);
        // too small for the five-point stencil
        assert_eq!(Grid::new(0.0, 1.0, 4), Err(GridError::TooFewCells(4)));
    }

    #[test]
    fn rejects_bad_interval() {
        assert!(matches!(
            Grid::new(1.0, 1.0, 10),
            Err(GridError::DegenerateInterval { .. })
        ));
        assert!(Grid::new(2.0, 1.0, 10).is_err());
        assert!(Grid::new(f64::NAN, 1.0, 10).is_err());
    }

    #[test]
    fn periodic_ghosts() {
        let q = [[1.0], [2.0], [3.0], [4.0]];
        let ext = fill_ghost(&q, BoundaryKind::Periodic);
        let flat: Vec<f64> = ext.iter().map(|v| v[0]).collect();
        assert_eq!(flat, vec![3.0, 4.0, 1.0, 2.0, 3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn outflow_ghosts() {
        let q = [[1.0], [2.0], [3.0], [4.0]];
        let ext = fill_ghost(&q, BoundaryKind::Outflow);
        let flat: Vec<f64> = ext.iter().map(|v| v[0]).collect();
        assert_eq!(flat, vec![1.0, 1.0, 1.0, 2.0, 3.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn constant_field_stays_constant() {
        let q = vec![[0.3, -1.0]; 7];
        for bc in [BoundaryKind::Periodic, BoundaryKind::Outflow] {
            let ext = fill_ghost(&q, bc);
            assert_eq!(ext.len(), 11);
            assert!(ext.iter().all(|v| *v == [0.3, -1.0]));
        }
    }

    #[test]
    fn interior_untouched() {
        let q: Vec<[f64; 2]> = (0..9).map(|i| [i as f64, (i * i) as f64]).collect();
        for bc in [BoundaryKind::Periodic, BoundaryKind::Outflow] {
            let ext = fill_ghost(&q, bc);
            assert_eq!(&ext[GHOSTS..GHOSTS + q.len()], q.as_slice());
        }
    }

    #[test]
    fn integral_sums_components() {
        let f = CellField::new(vec![[1.0, 2.0], [3.0, 4.0]], 0.0);
        assert_eq!(f.integral(0.5), [2.0, 3.0]);
        assert!(f.is_finite());
    }
}
