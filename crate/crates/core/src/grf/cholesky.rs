use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{GridField, MaternParams, TensorGrid};
use crate::error::{invalid, Error, Result};

const JITTER: f64 = 1e-12;
const MAX_POINTS: usize = 64 * 64;

/// Exact Gaussian draw by dense Cholesky factorisation of the grid
/// covariance matrix (diagonal jitter `1e-12`). Validation oracle for the
/// circulant sampler; only for small grids.
pub fn sample_grf_cholesky<R: Rng + ?Sized>(
    grid: &TensorGrid,
    params: &MaternParams,
    rng: &mut R,
) -> Result<GridField> {
    let factor = covariance_cholesky(grid, params)?;
    let z: DVector<f64> = DVector::from_fn(grid.len(), |_, _| rng.sample(StandardNormal));
    let v = factor * z;
    Ok(GridField::from_raw(*grid, v.as_slice().to_vec()))
}

/// Lower Cholesky factor of the (jittered) covariance matrix of the grid nodes.
pub(crate) fn covariance_cholesky(grid: &TensorGrid, params: &MaternParams) -> Result<DMatrix<f64>> {
    params.validate()?;
    let n = grid.len();
    if n > MAX_POINTS {
        return Err(invalid("grid", format!("{n} points is too many for a dense factorisation")));
    }
    let pts: Vec<(f64, f64)> = (0..grid.ny)
        .flat_map(|j| (0..grid.nx).map(move |i| (i, j)))
        .map(|(i, j)| (grid.x(i), grid.y(j)))
        .collect();
    let cov = DMatrix::from_fn(n, n, |a, b| {
        let d = ((pts[a].0 - pts[b].0).powi(2) + (pts[a].1 - pts[b].1).powi(2)).sqrt();
        params.at(d) + if a == b { JITTER } else { 0.0 }
    });
    debug_assert!((0..n).all(|a| cov[(a, a)] == params.sigma2 + JITTER));
    cov.cholesky().map(|c| c.l()).ok_or(Error::NotPositiveDefinite)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_point_is_scalar_normal() {
        let grid = TensorGrid::square(0.3, 0.3, 1).unwrap();
        let p = MaternParams::new(1.5, 0.5, 2.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 4000;
        let draws: Vec<f64> = (0..m)
            .map(|_| sample_grf_cholesky(&grid, &p, &mut rng).unwrap().values()[0])
            .collect();
        let var = draws.iter().map(|v| v * v).sum::<f64>() / m as f64;
        let fourth = draws.iter().map(|v| v.powi(4)).sum::<f64>() / m as f64;
        let se = ((fourth - var * var) / m as f64).sqrt();
        assert!((var - 2.25).abs() < 3.0 * se, "{var} ± {se}");
    }

    #[test]
    fn zero_noise_gives_zero_field() {
        let grid = TensorGrid::square(0.0, 1.0, 5).unwrap();
        let p = MaternParams::new(1.5, 0.5, 1.0).unwrap();
        let l = covariance_cholesky(&grid, &p).unwrap();
        let v = &l * DVector::zeros(grid.len());
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_large_grids() {
        let grid = TensorGrid::square(0.0, 1.0, 70).unwrap();
        let p = MaternParams::new(1.5, 0.5, 1.0).unwrap();
        assert!(covariance_cholesky(&grid, &p).is_err());
    }
}
