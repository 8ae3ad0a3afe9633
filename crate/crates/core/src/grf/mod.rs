//! Stationary Matérn Gaussian random fields on rectangular tensor grids.

mod cholesky;
mod embedding;
mod matern;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use cholesky::sample_grf_cholesky;
pub use embedding::{
    build_embedding, build_embedding_with_padding, sample_grf, sample_grf_from_normals,
    ClippingReport, EmbeddingFactor, EmbeddingOptions,
};
pub use matern::{matern_covariance, scaled_bessel_k, scaled_bessel_k_integral, MaternParams};

/// Equidistant tensor grid `[x0, x1] x [y0, y1]` with `nx * ny` points.
///
/// A single-point axis (`n = 1`) has zero extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorGrid {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub nx: usize,
    pub ny: usize,
}

impl TensorGrid {
    pub fn new(x0: f64, x1: f64, nx: usize, y0: f64, y1: f64, ny: usize) -> Result<Self> {
        for (name, lo, hi, n) in [("nx", x0, x1, nx), ("ny", y0, y1, ny)] {
            if n == 0 {
                return Err(invalid(name, "grid needs at least one point per axis"));
            }
            if !(lo.is_finite() && hi.is_finite()) || hi < lo {
                return Err(invalid(name, format!("bad axis extent [{lo}, {hi}]")));
            }
            if n == 1 && hi != lo {
                return Err(invalid(name, "a single-point axis must have zero extent"));
            }
            if n > 1 && hi == lo {
                return Err(invalid(name, "a multi-point axis needs positive extent"));
            }
        }
        Ok(Self { x0, x1, y0, y1, nx, ny })
    }

    /// `n x n` points on `[lo, hi]^2`.
    pub fn square(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(lo, hi, n, lo, hi, n)
    }

    /// Square grid on `[lo, hi]^2` with a given number of cells per axis.
    pub fn square_cells(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        Self::square(lo, hi, cells + 1)
    }

    /// Fewest cells per axis with step `<= max_step`.
    pub fn cells_for_step(extent: f64, max_step: f64) -> usize {
        ((extent / max_step) * (1.0 - 1e-12)).ceil().max(1.0) as usize
    }

    pub fn dx(&self) -> f64 {
        if self.nx > 1 {
            (self.x1 - self.x0) / (self.nx - 1) as f64
        } else {
            0.0
        }
    }

    pub fn dy(&self) -> f64 {
        if self.ny > 1 {
            (self.y1 - self.y0) / (self.ny - 1) as f64
        } else {
            0.0
        }
    }

    /// Largest step over both axes (the grid's `eps_W`).
    pub fn max_step(&self) -> f64 {
        self.dx().max(self.dy())
    }

    pub fn x(&self, i: usize) -> f64 {
        if self.nx == 1 {
            self.x0
        } else if i + 1 == self.nx {
            self.x1
        } else {
            self.x0 + (self.x1 - self.x0) * i as f64 / (self.nx - 1) as f64
        }
    }

    pub fn y(&self, j: usize) -> f64 {
        if self.ny == 1 {
            self.y0
        } else if j + 1 == self.ny {
            self.y1
        } else {
            self.y0 + (self.y1 - self.y0) * j as f64 / (self.ny - 1) as f64
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let tx = 1e-12 * (self.x1 - self.x0).abs().max(1.0);
        let ty = 1e-12 * (self.y1 - self.y0).abs().max(1.0);
        x >= self.x0 - tx && x <= self.x1 + tx && y >= self.y0 - ty && y <= self.y1 + ty
    }

    /// Refinement factors `(fx, fy)` if every node of `self` is a node of `fine`.
    pub fn nesting_factors(&self, fine: &TensorGrid) -> Option<(usize, usize)> {
        if self.x0 != fine.x0 || self.x1 != fine.x1 || self.y0 != fine.y0 || self.y1 != fine.y1 {
            return None;
        }
        let fx = axis_factor(self.nx, fine.nx)?;
        let fy = axis_factor(self.ny, fine.ny)?;
        Some((fx, fy))
    }
}

fn axis_factor(coarse: usize, fine: usize) -> Option<usize> {
    if coarse == 1 || fine == 1 {
        return (coarse == fine).then_some(1);
    }
    let (c, f) = (coarse - 1, fine - 1);
    (f % c == 0).then_some(f / c)
}

/// Position of `t` on an axis of `n` points starting at `lo` with step `step`:
/// returns the cell index and the local coordinate in `[0, 1]`.
#[inline]
fn locate(t: f64, lo: f64, step: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let mut u = (t - lo) / step;
    let r = u.round();
    if (u - r).abs() < 1e-9 {
        u = r;
    }
    let last = (n - 2) as f64;
    let cell = u.floor().clamp(0.0, last);
    let frac = (u - cell).clamp(0.0, 1.0);
    (cell as usize, frac)
}

/// Real values on a [`TensorGrid`], stored with `x` fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    grid: TensorGrid,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: TensorGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid("values", format!("non-finite value at index {k}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TensorGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: TensorGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: TensorGrid, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            let y = grid.y(j);
            for i in 0..grid.nx {
                values.push(f(grid.x(i), y));
            }
        }
        Self::new(grid, values)
    }

    /// Trusted constructor for values produced by this crate.
    pub(crate) fn from_raw(grid: TensorGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &TensorGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Bilinear interpolation; errors outside the closed grid box.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        let g = &self.grid;
        if !g.contains(x, y) {
            return Err(Error::OutOfGrid {
                x,
                y,
                x0: g.x0,
                x1: g.x1,
                y0: g.y0,
                y1: g.y1,
            });
        }
        Ok(self.eval_unchecked(x, y))
    }

    /// Bilinear interpolation with the query clamped into the grid box.
    #[inline]
    pub fn eval_unchecked(&self, x: f64, y: f64) -> f64 {
        let g = &self.grid;
        let (i, fx) = locate(x, g.x0, g.dx(), g.nx);
        let (j, fy) = locate(y, g.y0, g.dy(), g.ny);
        self.in_cell(i, j, fx, fy)
    }

    /// Bilinear form of cell `(i, j)` at local coordinates `(fx, fy)`.
    #[inline]
    fn in_cell(&self, i: usize, j: usize, fx: f64, fy: f64) -> f64 {
        let g = &self.grid;
        let i1 = if g.nx > 1 { i + 1 } else { i };
        let j1 = if g.ny > 1 { j + 1 } else { j };
        let v00 = self.values[g.index(i, j)];
        let v10 = self.values[g.index(i1, j)];
        let v01 = self.values[g.index(i, j1)];
        let v11 = self.values[g.index(i1, j1)];
        (1.0 - fx) * (1.0 - fy) * v00 + fx * (1.0 - fy) * v10 + (1.0 - fx) * fy * v01 + fx * fy * v11
    }

    /// Restriction to a coarser grid whose nodes are a subset of this grid's nodes.
    pub fn restrict_to(&self, coarse: &TensorGrid) -> Result<GridField> {
        let (fx, fy) = coarse.nesting_factors(&self.grid).ok_or_else(|| {
            Error::NotNested(format!("{coarse:?} is not a subgrid of {:?}", self.grid))
        })?;
        let mut values = Vec::with_capacity(coarse.len());
        for j in 0..coarse.ny {
            for i in 0..coarse.nx {
                values.push(self.at(i * fx, j * fy));
            }
        }
        Ok(GridField::from_raw(*coarse, values))
    }

    /// `x,y,value` CSV, rows ordered by `y` then `x`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y,value")?;
        for j in 0..self.grid.ny {
            let y = self.grid.y(j);
            for i in 0..self.grid.nx {
                writeln!(w, "{:.16e},{:.16e},{:.16e}", self.grid.x(i), y, self.at(i, j))?;
            }
        }
        Ok(())
    }

    pub fn axpy(&mut self, alpha: f64, other: &GridField) -> Result<()> {
        if other.grid != self.grid {
            return Err(Error::GridMismatch("axpy on different grids".into()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_cell() -> GridField {
        // corners ordered by x then y: (0,0)=0, (1,0)=1, (0,1)=0, (1,1)=1
        let g = TensorGrid::square(0.0, 1.0, 2).unwrap();
        GridField::new(g, vec![0.0, 1.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn node_queries_are_exact() {
        let g = TensorGrid::new(0.0, 0.7, 8, -1.0, 3.0, 5).unwrap();
        let f = GridField::from_fn(g, |x, y| (x * 13.1).sin() + y * y * 0.37).unwrap();
        for j in 0..g.ny {
            for i in 0..g.nx {
                assert_eq!(f.eval(g.x(i), g.y(j)).unwrap(), f.at(i, j));
            }
        }
    }

    #[test]
    fn cell_center_is_corner_mean() {
        let g = TensorGrid::square(0.0, 1.0, 2).unwrap();
        let f = GridField::new(g, vec![1.0, 2.0, 4.0, 9.0]).unwrap();
        assert!((f.eval(0.5, 0.5).unwrap() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn edge_interpolation() {
        let f = one_cell();
        assert!((f.eval(0.25, 0.0).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn out_of_box_is_error() {
        let f = one_cell();
        assert!(matches!(f.eval(1.1, 0.5), Err(Error::OutOfGrid { .. })));
        assert!(f.eval(0.5, -0.01).is_err());
        assert!(f.eval(1.0, 1.0).is_ok());
    }

    #[test]
    fn restriction_picks_nodes() {
        let fine = TensorGrid::square(0.0, 1.0, 9).unwrap();
        let coarse = TensorGrid::square(0.0, 1.0, 3).unwrap();
        let f = GridField::from_fn(fine, |x, y| x + 10.0 * y).unwrap();
        let c = f.restrict_to(&coarse).unwrap();
        assert_eq!(c.at(1, 2), 0.5 + 10.0);
        let bad = TensorGrid::square(0.0, 1.0, 4).unwrap();
        assert!(f.restrict_to(&bad).is_err());
    }

    #[test]
    fn csv_layout() {
        let f = one_cell();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "x,y,value");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[2], "1.0000000000000000e0,0.0000000000000000e0,1.0000000000000000e0");
    }

    proptest! {
        #[test]
        fn continuous_across_cell_edges(vals in prop::collection::vec(-5.0f64..5.0, 16), t in 0.0f64..=1.0) {
            let g = TensorGrid::square(0.0, 3.0, 4).unwrap();
            let f = GridField::new(g, vals).unwrap();
            // edge x = 1 seen from cell 0 (fx = 1) and from cell 1 (fx = 0)
            for j in 0..3 {
                let left = f.in_cell(0, j, 1.0, t);
                let right = f.in_cell(1, j, 0.0, t);
                prop_assert!((left - right).abs() < 1e-12);
                let below = f.in_cell(j, 0, t, 1.0);
                let above = f.in_cell(j, 1, t, 0.0);
                prop_assert!((below - above).abs() < 1e-12);
            }
        }
    }
}
