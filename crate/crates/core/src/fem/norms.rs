use crate::error::{Error, Result};
use crate::grf::{GridField, TensorGrid};

use super::FeSolution;

/// Points per axis of the reference grid.
pub const REFERENCE_POINTS: usize = 401;

/// The `401 x 401` grid on the unit square used for prolongation and norms.
pub fn reference_grid() -> TensorGrid {
    TensorGrid::square(0.0, 1.0, REFERENCE_POINTS).expect("valid reference grid")
}

// cell index and local coordinate of every point of one axis
fn axis_lookup(lines: &[f64], points: impl Iterator<Item = f64>) -> Result<Vec<(usize, f64)>> {
    let last = lines.len() - 2;
    let (lo, hi) = (lines[0], lines[lines.len() - 1]);
    points
        .map(|t| {
            if t < lo - 1e-12 || t > hi + 1e-12 {
                return Err(Error::Uncovered { x: t, y: f64::NAN });
            }
            let c = lines.partition_point(|&l| l <= t).saturating_sub(1).min(last);
            let frac = ((t - lines[c]) / (lines[c + 1] - lines[c])).clamp(0.0, 1.0);
            Ok((c, frac))
        })
        .collect()
}

/// P1 evaluation of `sol` at every node of `grid`.
pub fn prolong(sol: &FeSolution, grid: &TensorGrid) -> Result<GridField> {
    let mesh = &sol.mesh;
    let nx = mesh.xs().len();
    let ax = axis_lookup(mesh.xs(), (0..grid.nx).map(|i| grid.x(i)))
        .map_err(|_| Error::Uncovered { x: grid.x0, y: grid.y0 })?;
    let ay = axis_lookup(mesh.ys(), (0..grid.ny).map(|j| grid.y(j)))
        .map_err(|_| Error::Uncovered { x: grid.x0, y: grid.y0 })?;
    let u = &sol.values;
    let mut out = Vec::with_capacity(grid.len());
    for &(cj, ty) in &ay {
        for &(ci, tx) in &ax {
            let p00 = cj * nx + ci;
            let (u00, u10, u01, u11) = (u[p00], u[p00 + 1], u[p00 + nx], u[p00 + nx + 1]);
            // lower triangle (p00, p10, p11) when tx >= ty
            let v = if tx >= ty {
                u00 + tx * (u10 - u00) + ty * (u11 - u10)
            } else {
                u00 + ty * (u01 - u00) + tx * (u11 - u01)
            };
            out.push(v);
        }
    }
    GridField::new(*grid, out)
}

fn trapezoid_weight(i: usize, n: usize, step: f64) -> f64 {
    if i == 0 || i == n - 1 {
        0.5 * step
    } else {
        step
    }
}

fn derivative(v: &[f64], i: usize, stride: usize, n: usize, step: f64) -> f64 {
    let at = |k: usize| v[k * stride];
    if i == 0 {
        (at(1) - at(0)) / step
    } else if i == n - 1 {
        (at(n - 1) - at(n - 2)) / step
    } else {
        (at(i + 1) - at(i - 1)) / (2.0 * step)
    }
}

fn check_same(f: &GridField, g: &GridField) -> Result<()> {
    if f.grid() != g.grid() {
        return Err(Error::GridMismatch("H1 inner product needs identical grids".into()));
    }
    let gr = f.grid();
    if gr.nx < 2 || gr.ny < 2 {
        return Err(Error::GridMismatch("H1 norm needs at least two points per axis".into()));
    }
    Ok(())
}

/// Discrete `H¹` inner product: central differences inside, one-sided
/// differences on the boundary, trapezoid weights.
pub fn h1_inner(f: &GridField, g: &GridField) -> Result<f64> {
    check_same(f, g)?;
    Ok(h1_inner_values(f.grid(), f.values(), g.values()))
}

pub(crate) fn h1_inner_values(gr: &TensorGrid, a: &[f64], b: &[f64]) -> f64 {
    let (nx, ny, dx, dy) = (gr.nx, gr.ny, gr.dx(), gr.dy());
    let mut sum = 0.0;
    for j in 0..ny {
        let wy = trapezoid_weight(j, ny, dy);
        for i in 0..nx {
            let w = wy * trapezoid_weight(i, nx, dx);
            let k = j * nx + i;
            let fx = derivative(&a[j * nx..], i, 1, nx, dx);
            let gx = derivative(&b[j * nx..], i, 1, nx, dx);
            let fy = derivative(&a[i..], j, nx, ny, dy);
            let gy = derivative(&b[i..], j, nx, ny, dy);
            sum += w * (a[k] * b[k] + fx * gx + fy * gy);
        }
    }
    sum
}

pub fn h1_norm(f: &GridField) -> Result<f64> {
    Ok(h1_inner(f, f)?.max(0.0).sqrt())
}

pub fn h1_distance_sq(f: &GridField, g: &GridField) -> Result<f64> {
    check_same(f, g)?;
    let diff: Vec<f64> = f.values().iter().zip(g.values()).map(|(a, b)| a - b).collect();
    let d = GridField::new(*f.grid(), diff)?;
    h1_inner(&d, &d)
}

pub fn h1_distance(f: &GridField, g: &GridField) -> Result<f64> {
    Ok(h1_distance_sq(f, g)?.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble_solve, build_adapted_mesh, build_uniform_mesh, BoundarySpec, SolverChoice, DEFAULT_MIN_ANGLE_DEG};
    use std::sync::Arc;

    #[test]
    fn constant_norm() {
        let f = GridField::constant(reference_grid(), -2.5);
        assert!((h1_norm(&f).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn linear_field_norm() {
        let f = GridField::from_fn(reference_grid(), |x, _| x).unwrap();
        let exact = (4.0f64 / 3.0).sqrt();
        assert!((h1_norm(&f).unwrap() - exact).abs() < 1e-3);
        assert_eq!(h1_distance(&f, &f).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_grids() {
        let f = GridField::zeros(reference_grid());
        let g = GridField::zeros(TensorGrid::square(0.0, 1.0, 11).unwrap());
        assert!(matches!(h1_distance(&f, &g), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn inner_product_is_bilinear() {
        let g = TensorGrid::square(0.0, 1.0, 31).unwrap();
        let a = GridField::from_fn(g, |x, y| (3.0 * x).sin() * y).unwrap();
        let b = GridField::from_fn(g, |x, y| x * x + y).unwrap();
        let s = GridField::from_fn(g, |x, y| (3.0 * x).sin() * y + x * x + y).unwrap();
        let lhs = h1_inner(&s, &s).unwrap();
        let rhs = h1_inner(&a, &a).unwrap() + 2.0 * h1_inner(&a, &b).unwrap() + h1_inner(&b, &b).unwrap();
        assert!((lhs - rhs).abs() < 1e-12 * lhs);
    }

    #[test]
    fn affine_prolongation_is_exact() {
        let bc = BoundarySpec { source: 0.0, ..BoundarySpec::default() };
        let mesh = Arc::new(build_adapted_mesh(&[0.23], &[0.61], 0.2, DEFAULT_MIN_ANGLE_DEG).unwrap());
        let sol = assemble_solve(&mesh, &|_, _| 1.0, &bc, SolverChoice::Auto).unwrap();
        let r = prolong(&sol, &reference_grid()).unwrap();
        let g = r.grid();
        for j in (0..g.ny).step_by(7) {
            for i in 0..g.nx {
                assert!((r.at(i, j) - (0.1 + 0.2 * g.x(i))).abs() < 1e-12);
            }
        }
        assert_eq!(h1_distance(&r, &r).unwrap(), 0.0);
    }

    #[test]
    fn prolongation_hits_nodes_and_rejects_outside() {
        let mesh = Arc::new(build_uniform_mesh(0.3).unwrap());
        let sol = assemble_solve(&mesh, &|x, y| 1.0 + x + y, &BoundarySpec::default(), SolverChoice::Auto).unwrap();
        let n = mesh.xs().len() - 1;
        let grid = TensorGrid::square_cells(0.0, 1.0, n).unwrap();
        let r = prolong(&sol, &grid).unwrap();
        for (k, v) in sol.values.iter().enumerate() {
            assert!((r.values()[k] - v).abs() < 1e-14);
        }
        let outside = TensorGrid::square(0.0, 1.5, 4).unwrap();
        assert!(matches!(prolong(&sol, &outside), Err(Error::Uncovered { .. })));
    }

    #[test]
    fn two_layer_prolongation_matches_closed_form() {
        let bc = BoundarySpec { source: 0.0, ..BoundarySpec::default() };
        let mesh = Arc::new(build_adapted_mesh(&[0.5], &[], 0.1, DEFAULT_MIN_ANGLE_DEG).unwrap());
        let sol = assemble_solve(&mesh, &|x, _| if x < 0.5 { 1.0 } else { 10.0 }, &bc, SolverChoice::Auto).unwrap();
        let r = prolong(&sol, &reference_grid()).unwrap();
        let q = 4.0 / 11.0;
        let g = r.grid();
        for i in 0..g.nx {
            let x = g.x(i);
            if x == 0.5 {
                continue;
            }
            let exact = if x < 0.5 { 0.1 + q * x } else { 0.1 + 0.5 * q + 0.1 * q * (x - 0.5) };
            assert!((r.at(i, 100) - exact).abs() < 1e-10);
        }
    }
}
