//! Circulant embedding sampler.
//!
//! The covariance matrix of the grid points is embedded in a block-circulant
//! matrix on a periodic grid of `2 p (n - 1)` points per axis. Its spectrum is
//! the 2-D DFT of the first block column; negative eigenvalues are clipped
//! to zero and reported.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{GridField, MaternParams, TensorGrid};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingOptions {
    /// First padding factor tried (multiplies the minimal embedding length).
    pub initial_padding: usize,
    pub max_padding: usize,
    /// Padding search stops once the clipped fraction falls below this.
    pub target_clipped_fraction: f64,
    /// Accepting a factor above this clipped fraction is an error.
    pub max_clipped_fraction: f64,
    /// Eigenvalues below `-negative_tol * max eigenvalue` are counted as significant.
    pub negative_tol: f64,
}

impl Default for EmbeddingOptions {
    fn default() -> Self {
        Self {
            initial_padding: 1,
            max_padding: 8,
            target_clipped_fraction: 1e-10,
            max_clipped_fraction: 1e-3,
            negative_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClippingReport {
    pub padding: usize,
    /// Eigenvalues below `-negative_tol * max`.
    pub significant_negative: usize,
    /// All eigenvalues zeroed.
    pub clipped: usize,
    pub clipped_mass: f64,
    pub total_mass: f64,
    pub min_eigenvalue: f64,
}

impl ClippingReport {
    pub fn clipped_fraction(&self) -> f64 {
        if self.total_mass > 0.0 {
            self.clipped_mass / self.total_mass
        } else {
            0.0
        }
    }
}

#[derive(Clone)]
pub struct EmbeddingFactor {
    grid: TensorGrid,
    params: MaternParams,
    mx: usize,
    my: usize,
    /// `sqrt(max(lambda, 0) / (mx * my))`, row-major with x fastest.
    sqrt_spectrum: Vec<f64>,
    report: ClippingReport,
    fft_x: Arc<dyn Fft<f64>>,
    fft_y: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for EmbeddingFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EmbeddingFactor")
            .field("grid", &self.grid)
            .field("params", &self.params)
            .field("mx", &self.mx)
            .field("my", &self.my)
            .field("report", &self.report)
            .finish_non_exhaustive()
    }
}

impl EmbeddingFactor {
    pub fn grid(&self) -> &TensorGrid {
        &self.grid
    }

    pub fn params(&self) -> &MaternParams {
        &self.params
    }

    pub fn report(&self) -> &ClippingReport {
        &self.report
    }

    pub fn embedding_shape(&self) -> (usize, usize) {
        (self.mx, self.my)
    }

    /// Retained (clipped) eigenvalues of the circulant embedding.
    pub fn spectrum(&self) -> Vec<f64> {
        let n = (self.mx * self.my) as f64;
        self.sqrt_spectrum.iter().map(|s| s * s * n).collect()
    }

    /// Standard normal variates consumed by one draw.
    pub fn normal_budget(&self) -> usize {
        2 * self.mx * self.my
    }
}

/// 2-D forward DFT in place on a row-major `mx x my` buffer (x fastest).
/// Leaves the result transposed (y fastest) in `buf`.
fn fft2_transposed(
    fft_x: &dyn Fft<f64>,
    fft_y: &dyn Fft<f64>,
    mx: usize,
    my: usize,
    buf: &mut Vec<Complex<f64>>,
) {
    fft_x.process(buf);
    let mut t = vec![Complex::new(0.0, 0.0); mx * my];
    for j in 0..my {
        for i in 0..mx {
            t[i * my + j] = buf[j * mx + i];
        }
    }
    fft_y.process(&mut t);
    *buf = t;
}

fn wrapped_lag(k: usize, m: usize) -> usize {
    k.min(m - k)
}

/// Circulant embedding with a fixed padding factor.
pub fn build_embedding_with_padding(
    grid: &TensorGrid,
    params: &MaternParams,
    padding: usize,
    negative_tol: f64,
) -> Result<EmbeddingFactor> {
    params.validate()?;
    if grid.nx < 2 || grid.ny < 2 {
        return Err(invalid("grid", "circulant embedding needs at least 2 points per axis"));
    }
    if padding == 0 {
        return Err(invalid("padding", "must be >= 1"));
    }
    let mx = 2 * padding * (grid.nx - 1);
    let my = 2 * padding * (grid.ny - 1);
    let (dx, dy) = (grid.dx(), grid.dy());

    let mut buf = Vec::with_capacity(mx * my);
    for j in 0..my {
        let ly = wrapped_lag(j, my) as f64 * dy;
        for i in 0..mx {
            let lx = wrapped_lag(i, mx) as f64 * dx;
            buf.push(Complex::new(params.at((lx * lx + ly * ly).sqrt()), 0.0));
        }
    }
    let mut planner = FftPlanner::new();
    let fft_x = planner.plan_fft_forward(mx);
    let fft_y = planner.plan_fft_forward(my);
    fft2_transposed(&*fft_x, &*fft_y, mx, my, &mut buf);

    let n = (mx * my) as f64;
    let mut sqrt_spectrum = vec![0.0; mx * my];
    let max_lambda = buf.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
    let mut report = ClippingReport {
        padding,
        significant_negative: 0,
        clipped: 0,
        clipped_mass: 0.0,
        total_mass: 0.0,
        min_eigenvalue: f64::INFINITY,
    };
    for i in 0..mx {
        for j in 0..my {
            let lambda = buf[i * my + j].re;
            report.total_mass += lambda.abs();
            report.min_eigenvalue = report.min_eigenvalue.min(lambda);
            if lambda < 0.0 {
                report.clipped += 1;
                report.clipped_mass += -lambda;
                if lambda < -negative_tol * max_lambda {
                    report.significant_negative += 1;
                }
            } else {
                sqrt_spectrum[j * mx + i] = (lambda / n).sqrt();
            }
        }
    }
    Ok(EmbeddingFactor {
        grid: *grid,
        params: *params,
        mx,
        my,
        sqrt_spectrum,
        report,
        fft_x,
        fft_y,
    })
}

/// Circulant embedding with the padding search of [`EmbeddingOptions`].
pub fn build_embedding(
    grid: &TensorGrid,
    params: &MaternParams,
    opts: &EmbeddingOptions,
) -> Result<EmbeddingFactor> {
    let mut padding = opts.initial_padding.max(1);
    loop {
        let factor = build_embedding_with_padding(grid, params, padding, opts.negative_tol)?;
        let fraction = factor.report.clipped_fraction();
        if fraction < opts.target_clipped_fraction {
            return Ok(factor);
        }
        if padding * 2 > opts.max_padding {
            if fraction > opts.max_clipped_fraction {
                return Err(Error::EmbeddingTooSmall {
                    fraction,
                    bound: opts.max_clipped_fraction,
                    padding,
                });
            }
            return Ok(factor);
        }
        padding *= 2;
    }
}

/// One field draw from explicit noise: `normals` holds `normal_budget()`
/// standard normals (real and imaginary parts interleaved).
pub fn sample_grf_from_normals(factor: &EmbeddingFactor, normals: &[f64]) -> Result<GridField> {
    if normals.len() != factor.normal_budget() {
        return Err(invalid(
            "normals",
            format!("expected {} variates, got {}", factor.normal_budget(), normals.len()),
        ));
    }
    let (mx, my) = (factor.mx, factor.my);
    let mut buf: Vec<Complex<f64>> = factor
        .sqrt_spectrum
        .iter()
        .zip(normals.chunks_exact(2))
        .map(|(s, z)| Complex::new(s * z[0], s * z[1]))
        .collect();
    fft2_transposed(&*factor.fft_x, &*factor.fft_y, mx, my, &mut buf);
    let g = factor.grid;
    let mut values = Vec::with_capacity(g.len());
    for j in 0..g.ny {
        for i in 0..g.nx {
            values.push(buf[i * my + j].re);
        }
    }
    Ok(GridField::from_raw(g, values))
}

/// One zero-mean Matérn field on the factor's grid; consumes exactly
/// `factor.normal_budget()` standard normals from `rng`.
pub fn sample_grf<R: Rng + ?Sized>(factor: &EmbeddingFactor, rng: &mut R) -> GridField {
    let normals: Vec<f64> = (0..factor.normal_budget())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    sample_grf_from_normals(factor, &normals).expect("budget matches by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grf::matern_covariance;
    use nalgebra::{DMatrix, SymmetricEigen};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exact_covariance(grid: &TensorGrid, p: &MaternParams) -> DMatrix<f64> {
        let n = grid.len();
        let pts: Vec<(f64, f64)> = (0..grid.ny)
            .flat_map(|j| (0..grid.nx).map(move |i| (i, j)))
            .map(|(i, j)| (grid.x(i), grid.y(j)))
            .collect();
        DMatrix::from_fn(n, n, |a, b| {
            let d = ((pts[a].0 - pts[b].0).powi(2) + (pts[a].1 - pts[b].1).powi(2)).sqrt();
            matern_covariance(d, p).unwrap()
        })
    }

    /// Covariance between grid nodes implied by the clipped circulant spectrum.
    fn implied_covariance(f: &EmbeddingFactor, di: usize, dj: usize) -> f64 {
        let (mx, my) = f.embedding_shape();
        let lam = f.spectrum();
        let mut acc = 0.0;
        for j in 0..my {
            for i in 0..mx {
                let phase = 2.0 * std::f64::consts::PI
                    * ((i * di) as f64 / mx as f64 + (j * dj) as f64 / my as f64);
                acc += lam[j * mx + i] * phase.cos();
            }
        }
        acc / (mx * my) as f64
    }

    #[test]
    fn isolated_point_spectrum_is_flat() {
        // spacing far beyond the correlation length: only the zero lag survives
        let grid = TensorGrid::square(0.0, 1e4, 2).unwrap();
        let p = MaternParams::new(1.5, 0.5, 2.0).unwrap();
        let f = build_embedding_with_padding(&grid, &p, 1, 1e-12).unwrap();
        for l in f.spectrum() {
            assert!((l - 2.0).abs() < 1e-12, "{l}");
        }
    }

    #[test]
    fn small_grid_matches_exact_covariance() {
        let grid = TensorGrid::square(0.0, 1.0, 8).unwrap();
        let p = MaternParams::new(1.5, 0.5, 1.0).unwrap();
        let c = exact_covariance(&grid, &p);
        let eig = SymmetricEigen::new(c.clone());
        assert!(eig.eigenvalues.iter().all(|&l| l > 0.0));
        for a in 0..c.nrows() {
            assert_eq!(c[(a, a)], 1.0);
            for b in 0..a {
                assert_eq!(c[(a, b)], c[(b, a)]);
            }
        }

        let f = build_embedding(&grid, &p, &EmbeddingOptions::default()).unwrap();
        assert!(f.report().clipped_fraction() < 1e-10, "{:?}", f.report());
        for dj in 0..8 {
            for di in 0..8 {
                let exact = c[(0, grid.index(di, dj))];
                let implied = implied_covariance(&f, di, dj);
                assert!((exact - implied).abs() < 1e-10, "lag ({di},{dj}): {exact} vs {implied}");
            }
        }
    }

    #[test]
    fn clipping_is_nonincreasing_in_padding() {
        let grid = TensorGrid::square(0.0, 1.0, 16).unwrap();
        let p = MaternParams::new(1.5, 1.0, 1.0).unwrap();
        let f1 = build_embedding_with_padding(&grid, &p, 1, 1e-12).unwrap();
        let f2 = build_embedding_with_padding(&grid, &p, 2, 1e-12).unwrap();
        assert!(f2.report().clipped_fraction() <= f1.report().clipped_fraction());
        assert!(f1.report().clipped > 0, "expected clipping at minimal padding: {:?}", f1.report());
    }

    #[test]
    fn too_small_embedding_is_reported() {
        let grid = TensorGrid::square(0.0, 1.0, 16).unwrap();
        let p = MaternParams::new(1.5, 1.0, 1.0).unwrap();
        let opts = EmbeddingOptions {
            max_padding: 1,
            max_clipped_fraction: 1e-14,
            ..Default::default()
        };
        assert!(matches!(
            build_embedding(&grid, &p, &opts),
            Err(Error::EmbeddingTooSmall { .. })
        ));
    }

    #[test]
    fn zero_noise_gives_zero_field() {
        let grid = TensorGrid::square(0.0, 1.0, 6).unwrap();
        let p = MaternParams::new(1.5, 0.5, 1.0).unwrap();
        let f = build_embedding(&grid, &p, &EmbeddingOptions::default()).unwrap();
        let z = vec![0.0; f.normal_budget()];
        let field = sample_grf_from_normals(&f, &z).unwrap();
        assert!(field.values().iter().all(|&v| v == 0.0));
        assert!(sample_grf_from_normals(&f, &z[1..]).is_err());
    }

    #[test]
    fn deterministic_given_stream() {
        let grid = TensorGrid::square(0.0, 1.0, 9).unwrap();
        let p = MaternParams::new(1.5, 0.5, 1.0).unwrap();
        let f = build_embedding(&grid, &p, &EmbeddingOptions::default()).unwrap();
        let a = sample_grf(&f, &mut ChaCha8Rng::seed_from_u64(3));
        let b = sample_grf(&f, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn moments_match_matern() {
        let grid = TensorGrid::square(0.0, 1.0, 8).unwrap();
        let p = MaternParams::new(1.5, 0.5, 1.0).unwrap();
        let f = build_embedding(&grid, &p, &EmbeddingOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = 2000;
        let (a, b) = (grid.index(1, 2), grid.index(3, 2));
        let (mut sa, mut saa, mut sab, mut sprod2) = (0.0, 0.0, 0.0, 0.0);
        let mut sq2 = 0.0;
        for _ in 0..m {
            let field = sample_grf(&f, &mut rng);
            let (va, vb) = (field.values()[a], field.values()[b]);
            sa += va;
            saa += va * va;
            sq2 += va.powi(4);
            sab += va * vb;
            sprod2 += (va * vb).powi(2);
        }
        let mf = m as f64;
        let var = saa / mf;
        let se_var = ((sq2 / mf - var * var) / mf).sqrt();
        assert!((var - 1.0).abs() < 3.0 * se_var, "var {var} se {se_var}");
        assert!((sa / mf).abs() < 3.0 / mf.sqrt());
        let cov = sab / mf;
        let se_cov = ((sprod2 / mf - cov * cov) / mf).sqrt();
        let target = matern_covariance(2.0 / 7.0, &p).unwrap();
        assert!((cov - target).abs() < 3.0 * se_cov, "cov {cov} target {target} se {se_cov}");
    }
}
