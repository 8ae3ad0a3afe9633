//! The jump diffusion coefficient
//! `a(x, y) = min(A, ā(x, y) + Φ1(W1(x, y)) + Φ2(W2(min(l1(x), K), min(l2(y), K))))`
//! and its Gaussian-smoothed counterpart.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grf::{GridField, TensorGrid};
use crate::subordinator::SubordinatorPath;

/// A continuous map into `[0, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Transform {
    Zero,
    /// `c · exp(z)`
    ScaledExp { c: f64 },
    /// `c · |z|`
    ScaledAbs { c: f64 },
    /// Piecewise-linear interpolation of `(xs, ys)`, constant beyond the ends.
    Table { xs: Vec<f64>, ys: Vec<f64> },
}

impl Transform {
    pub fn validate(&self) -> Result<()> {
        match self {
            Transform::Zero => Ok(()),
            Transform::ScaledExp { c } | Transform::ScaledAbs { c } => {
                if *c >= 0.0 && c.is_finite() {
                    Ok(())
                } else {
                    Err(invalid("transform.c", format!("must be finite and >= 0, got {c}")))
                }
            }
            Transform::Table { xs, ys } => {
                if xs.is_empty() || xs.len() != ys.len() {
                    return Err(invalid("transform.table", "xs and ys must be nonempty and of equal length"));
                }
                if xs.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(invalid("transform.table", "xs must be strictly increasing"));
                }
                if ys.iter().any(|&y| !(y >= 0.0 && y.is_finite())) {
                    return Err(invalid("transform.table", "ys must be finite and >= 0"));
                }
                Ok(())
            }
        }
    }

    #[inline]
    pub fn apply(&self, z: f64) -> f64 {
        match self {
            Transform::Zero => 0.0,
            Transform::ScaledExp { c } => c * z.exp(),
            Transform::ScaledAbs { c } => c * z.abs(),
            Transform::Table { xs, ys } => {
                let k = xs.partition_point(|&x| x <= z);
                if k == 0 {
                    ys[0]
                } else if k == xs.len() {
                    ys[k - 1]
                } else {
                    let t = (z - xs[k - 1]) / (xs[k] - xs[k - 1]);
                    ys[k - 1] + t * (ys[k] - ys[k - 1])
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Transform::Zero => true,
            Transform::ScaledExp { c } | Transform::ScaledAbs { c } => *c == 0.0,
            Transform::Table { ys, .. } => ys.iter().all(|&y| y == 0.0),
        }
    }
}

/// The deterministic part `ā`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum MeanField {
    Constant { value: f64 },
    /// Bilinear interpolation of a tabulated field covering the domain.
    Table { field: GridField },
}

impl MeanField {
    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            MeanField::Constant { value } => *value,
            MeanField::Table { field } => field.eval_unchecked(x, y),
        }
    }

    /// `(ā_-, ā_+)`
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            MeanField::Constant { value } => (*value, *value),
            MeanField::Table { field } => (field.min(), field.max()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub phi1: Transform,
    pub phi2: Transform,
    pub mean: MeanField,
}

impl TransformSpec {
    pub fn validate(&self) -> Result<()> {
        self.phi1.validate()?;
        self.phi2.validate()?;
        let (lo, hi) = self.mean.bounds();
        if !(lo > 0.0 && hi.is_finite()) {
            return Err(invalid("mean", format!("must be bounded below by a positive constant, min is {lo}")));
        }
        Ok(())
    }

    pub fn is_deterministic(&self) -> bool {
        self.phi1.is_zero() && self.phi2.is_zero()
    }
}

/// One realization of the coefficient.
#[derive(Debug, Clone)]
pub struct CoefficientSample {
    pub w1: GridField,
    pub w2: GridField,
    pub path_x: SubordinatorPath,
    pub path_y: SubordinatorPath,
    pub k: f64,
    pub a_cap: f64,
    pub transforms: Arc<TransformSpec>,
}

impl CoefficientSample {
    pub fn validate(&self) -> Result<()> {
        self.transforms.validate()?;
        if !(self.k > 0.0) {
            return Err(invalid("K", "must be > 0"));
        }
        if !(self.a_cap > 0.0) {
            return Err(invalid("A", "must be > 0"));
        }
        let g = self.w2.grid();
        if g.x0 > 0.0 || g.y0 > 0.0 || g.x1 < self.k * (1.0 - 1e-12) || g.y1 < self.k * (1.0 - 1e-12) {
            return Err(Error::GridMismatch(format!("W2 grid must cover [0, {}]²", self.k)));
        }
        Ok(())
    }

    /// `[min(ā_-, A), A]`, the range every evaluation falls in.
    pub fn bounds(&self) -> (f64, f64) {
        (self.transforms.mean.bounds().0.min(self.a_cap), self.a_cap)
    }

    #[inline]
    fn combine(&self, x: f64, y: f64, lx: f64, ly: f64) -> f64 {
        let t = &*self.transforms;
        let v = t.mean.eval(x, y) + t.phi1.apply(self.w1.eval_unchecked(x, y)) + t.phi2.apply(self.w2.eval_unchecked(lx, ly));
        v.min(self.a_cap)
    }

    #[inline]
    fn cut(&self, v: f64) -> f64 {
        v.min(self.k)
    }

    /// Pointwise evaluation with all range checks.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        if !self.w1.grid().contains(x, y) {
            let g = self.w1.grid();
            return Err(Error::OutOfGrid { x, y, x0: g.x0, x1: g.x1, y0: g.y0, y1: g.y1 });
        }
        let lx = self.cut(self.path_x.eval(x)?);
        let ly = self.cut(self.path_y.eval(y)?);
        if !(0.0..=self.k).contains(&lx) || !(0.0..=self.k).contains(&ly) {
            return Err(invalid("path", format!("cut value ({lx}, {ly}) outside [0, {}]", self.k)));
        }
        Ok(self.combine(x, y, lx, ly))
    }

    /// Evaluation for points known to lie in the domain.
    #[inline]
    pub fn value(&self, x: f64, y: f64) -> f64 {
        let lx = self.cut(self.path_x.eval_unchecked(x));
        let ly = self.cut(self.path_y.eval_unchecked(y));
        self.combine(x, y, lx, ly)
    }

    /// Jump abscissae and ordinates strictly inside the domain.
    pub fn jump_lines(&self) -> (Vec<f64>, Vec<f64>) {
        let g = self.w1.grid();
        let inside = |p: &SubordinatorPath, lo: f64, hi: f64| -> Vec<f64> {
            p.jump_times().iter().copied().filter(|&t| t > lo && t < hi).collect()
        };
        (inside(&self.path_x, g.x0, g.x1), inside(&self.path_y, g.y0, g.y1))
    }

    /// Node values on `grid`, bit-identical to [`CoefficientSample::eval`].
    pub fn rasterize(&self, grid: &TensorGrid) -> Result<GridField> {
        let d = self.w1.grid();
        let tol = 1e-12;
        if grid.x0 < d.x0 - tol || grid.x1 > d.x1 + tol || grid.y0 < d.y0 - tol || grid.y1 > d.y1 + tol {
            return Err(Error::GridMismatch("raster grid exceeds the coefficient domain".into()));
        }
        let lxs: Vec<f64> = (0..grid.nx).map(|i| self.cut(self.path_x.eval_unchecked(grid.x(i)))).collect();
        let lys: Vec<f64> = (0..grid.ny).map(|j| self.cut(self.path_y.eval_unchecked(grid.y(j)))).collect();
        let mut values = Vec::with_capacity(grid.len());
        for (j, &ly) in lys.iter().enumerate() {
            let y = grid.y(j);
            for (i, &lx) in lxs.iter().enumerate() {
                values.push(self.combine(grid.x(i), y, lx, ly));
            }
        }
        GridField::new(*grid, values)
    }
}

/// A coefficient rasterized to a grid and convolved with a truncated Gaussian.
#[derive(Debug, Clone)]
pub struct SmoothedCoefficient {
    pub base: GridField,
    pub nu_s: f64,
    pub smoothed: GridField,
}

impl SmoothedCoefficient {
    #[inline]
    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.smoothed.eval_unchecked(x, y)
    }
}

/// Reusable FFT convolution with `φ(x, y) = exp(-(x²+y²)/(2ν²)) / (2πν²)`
/// restricted to the disk of radius `4ν`, for rasters on one fixed grid.
/// The raster is zero outside the grid and the kernel is not renormalized.
pub struct GaussianSmoother {
    grid: TensorGrid,
    nu_s: f64,
    px: usize,
    py: usize,
    kernel_hat: Vec<Complex64>,
    kernel_mass: f64,
    fwd_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for GaussianSmoother {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GaussianSmoother")
            .field("grid", &self.grid)
            .field("nu_s", &self.nu_s)
            .field("fft_shape", &(self.px, self.py))
            .field("kernel_mass", &self.kernel_mass)
            .finish()
    }
}

impl GaussianSmoother {
    pub fn new(grid: &TensorGrid, nu_s: f64) -> Result<Self> {
        if !(nu_s > 0.0 && nu_s.is_finite()) {
            return Err(invalid("nu_s", format!("must be finite and > 0, got {nu_s}")));
        }
        let (dx, dy) = (grid.dx(), grid.dy());
        if grid.nx < 2 || grid.ny < 2 || dx > nu_s || dy > nu_s {
            return Err(invalid(
                "nu_s",
                format!("grid spacing ({dx}, {dy}) must not exceed the kernel width {nu_s}"),
            ));
        }
        let radius = 4.0 * nu_s;
        let rx = (radius / dx + 1e-9).floor() as usize;
        let ry = (radius / dy + 1e-9).floor() as usize;
        let px = (grid.nx + rx + 1).next_power_of_two();
        let py = (grid.ny + ry + 1).next_power_of_two();

        let mut kernel = vec![Complex64::new(0.0, 0.0); px * py];
        let norm = dx * dy / (2.0 * std::f64::consts::PI * nu_s * nu_s);
        let r2max = radius * radius * (1.0 + 1e-12);
        let mut mass = 0.0;
        for dj in -(ry as isize)..=(ry as isize) {
            let yy = dj as f64 * dy;
            for di in -(rx as isize)..=(rx as isize) {
                let xx = di as f64 * dx;
                let r2 = xx * xx + yy * yy;
                if r2 <= r2max {
                    let w = norm * (-r2 / (2.0 * nu_s * nu_s)).exp();
                    mass += w;
                    let i = di.rem_euclid(px as isize) as usize;
                    let j = dj.rem_euclid(py as isize) as usize;
                    kernel[j * px + i] = Complex64::new(w, 0.0);
                }
            }
        }

        let mut planner = FftPlanner::new();
        let fwd_x = planner.plan_fft_forward(px);
        let fwd_y = planner.plan_fft_forward(py);
        let inv_x = planner.plan_fft_inverse(px);
        let inv_y = planner.plan_fft_inverse(py);
        let mut s = Self {
            grid: *grid,
            nu_s,
            px,
            py,
            kernel_hat: Vec::new(),
            kernel_mass: mass,
            fwd_x,
            fwd_y,
            inv_x,
            inv_y,
        };
        s.fft2(&mut kernel, false);
        s.kernel_hat = kernel;
        Ok(s)
    }

    pub fn grid(&self) -> &TensorGrid {
        &self.grid
    }

    pub fn nu_s(&self) -> f64 {
        self.nu_s
    }

    /// Sum of discrete kernel weights times cell area.
    pub fn kernel_mass(&self) -> f64 {
        self.kernel_mass
    }

    // row-major data with x fastest
    fn fft2(&self, data: &mut [Complex64], inverse: bool) {
        let (fx, fy) = if inverse { (&self.inv_x, &self.inv_y) } else { (&self.fwd_x, &self.fwd_y) };
        fx.process(data);
        let mut col = vec![Complex64::new(0.0, 0.0); self.py];
        for i in 0..self.px {
            for j in 0..self.py {
                col[j] = data[j * self.px + i];
            }
            fy.process(&mut col);
            for j in 0..self.py {
                data[j * self.px + i] = col[j];
            }
        }
    }

    pub fn convolve(&self, raster: &GridField) -> Result<GridField> {
        if raster.grid() != &self.grid {
            return Err(Error::GridMismatch("raster grid differs from the smoother grid".into()));
        }
        let (nx, ny, px) = (self.grid.nx, self.grid.ny, self.px);
        let mut buf = vec![Complex64::new(0.0, 0.0); px * self.py];
        for j in 0..ny {
            for i in 0..nx {
                buf[j * px + i] = Complex64::new(raster.at(i, j), 0.0);
            }
        }
        self.fft2(&mut buf, false);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.fft2(&mut buf, true);
        let scale = 1.0 / (px * self.py) as f64;
        let mut out = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                out.push(buf[j * px + i].re * scale);
            }
        }
        Ok(GridField::from_raw(self.grid, out))
    }

    pub fn smooth_raster(&self, raster: GridField) -> Result<SmoothedCoefficient> {
        let smoothed = self.convolve(&raster)?;
        Ok(SmoothedCoefficient { base: raster, nu_s: self.nu_s, smoothed })
    }

    pub fn smooth_sample(&self, c: &CoefficientSample) -> Result<SmoothedCoefficient> {
        self.smooth_raster(c.rasterize(&self.grid)?)
    }
}

/// One-shot smoothing of a raster.
pub fn smooth(raster: &GridField, nu_s: f64) -> Result<SmoothedCoefficient> {
    GaussianSmoother::new(raster.grid(), nu_s)?.smooth_raster(raster.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subordinator::{cut_path, sample_poisson_exact};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn preset_transforms() -> Arc<TransformSpec> {
        Arc::new(TransformSpec {
            phi1: Transform::ScaledExp { c: 0.01 },
            phi2: Transform::ScaledAbs { c: 5.0 },
            mean: MeanField::Constant { value: 0.1 },
        })
    }

    fn unit() -> TensorGrid {
        TensorGrid::square_cells(0.0, 1.0, 4).unwrap()
    }

    fn constant_sample(w1: f64, w2: f64, a_cap: f64, t: Arc<TransformSpec>) -> CoefficientSample {
        let k = 8.0;
        CoefficientSample {
            w1: GridField::constant(unit(), w1),
            w2: GridField::constant(TensorGrid::square_cells(0.0, k, 4).unwrap(), w2),
            path_x: SubordinatorPath::zero(1.0),
            path_y: SubordinatorPath::zero(1.0),
            k,
            a_cap,
            transforms: t,
        }
    }

    #[test]
    fn constant_mean_only() {
        let t = Arc::new(TransformSpec {
            phi1: Transform::Zero,
            phi2: Transform::Zero,
            mean: MeanField::Constant { value: 0.1 },
        });
        let c = constant_sample(3.0, -2.0, 100.0, t);
        for (x, y) in [(0.0, 0.0), (0.3, 0.9), (1.0, 1.0)] {
            assert_eq!(c.eval(x, y).unwrap(), 0.1);
        }
    }

    #[test]
    fn preset_transform_value_and_cap() {
        let c = constant_sample(0.0, 0.2, 100.0, preset_transforms());
        assert!((c.eval(0.4, 0.6).unwrap() - 1.11).abs() < 1e-14);
        let c = constant_sample(0.0, 0.2, 0.5, preset_transforms());
        assert_eq!(c.eval(0.4, 0.6).unwrap(), 0.5);
    }

    #[test]
    fn out_of_domain_is_error() {
        let c = constant_sample(0.0, 0.0, 100.0, preset_transforms());
        assert!(c.eval(1.2, 0.5).is_err());
    }

    #[test]
    fn jump_line_examples() {
        let mut c = constant_sample(0.0, 0.0, 100.0, preset_transforms());
        assert_eq!(c.jump_lines(), (vec![], vec![]));
        c.path_x = SubordinatorPath::from_jumps(1.0, vec![0.3, 0.7], vec![1.0, 2.0]).unwrap();
        c.path_y = SubordinatorPath::from_jumps(1.0, vec![0.5, 1.0], vec![1.0, 2.0]).unwrap();
        let (xs, ys) = c.jump_lines();
        assert_eq!(xs, vec![0.3, 0.7]);
        assert_eq!(ys, vec![0.5]);
        assert_eq!((xs.len() + 1) * (ys.len() + 1), 6);
    }

    fn random_sample(seed: u64, a_cap: f64) -> CoefficientSample {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let k = 8.0;
        let g1 = TensorGrid::square_cells(0.0, 1.0, 10).unwrap();
        let g2 = TensorGrid::square_cells(0.0, k, 16).unwrap();
        let w1 = GridField::from_fn(g1, |_, _| r.random_range(-3.0..3.0)).unwrap();
        let w2 = GridField::from_fn(g2, |_, _| r.random_range(-3.0..3.0)).unwrap();
        let px = cut_path(&sample_poisson_exact(4.0, 1.0, &mut r).unwrap(), k).unwrap();
        let py = cut_path(&sample_poisson_exact(4.0, 1.0, &mut r).unwrap(), k).unwrap();
        CoefficientSample { w1, w2, path_x: px, path_y: py, k, a_cap, transforms: preset_transforms() }
    }

    #[test]
    fn raster_matches_eval_bit_exactly() {
        let c = random_sample(11, 100.0);
        let grid = TensorGrid::square(0.0, 1.0, 37).unwrap();
        let r = c.rasterize(&grid).unwrap();
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                assert_eq!(r.at(i, j).to_bits(), c.eval(grid.x(i), grid.y(j)).unwrap().to_bits());
            }
        }
        let cst = constant_sample(0.5, 0.5, 100.0, preset_transforms());
        let r = cst.rasterize(&grid).unwrap();
        assert_eq!(r.min(), r.max());
    }

    #[test]
    fn continuity_away_from_jump_lines() {
        let c = random_sample(12, 100.0);
        let (xs, _) = c.jump_lines();
        let y = 0.37;
        let delta = 1e-7;
        let mut x = 0.001;
        while x + delta < 0.999 {
            let crosses = xs.iter().any(|&t| t > x && t <= x + delta);
            if !crosses {
                let d = (c.eval(x + delta, y).unwrap() - c.eval(x, y).unwrap()).abs();
                assert!(d < 1e-4, "jump {d} at x = {x} without a jump line");
            }
            x += 0.0007;
        }
    }

    proptest! {
        #[test]
        fn values_within_bounds(seed in any::<u64>(), a_cap in 0.05f64..200.0, pts in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 20)) {
            let c = random_sample(seed, a_cap);
            let (lo, hi) = c.bounds();
            for (x, y) in pts {
                let v = c.eval(x, y).unwrap();
                prop_assert!(v >= lo && v <= hi, "{} not in [{}, {}]", v, lo, hi);
            }
        }
    }

    fn reference_grid() -> TensorGrid {
        TensorGrid::square(0.0, 1.0, 401).unwrap()
    }

    #[test]
    fn kernel_mass_matches_truncated_integral() {
        let s = GaussianSmoother::new(&reference_grid(), 0.01).unwrap();
        let exact = 1.0 - (-8f64).exp();
        assert!((s.kernel_mass() - exact).abs() < 1e-4, "{}", s.kernel_mass());
    }

    #[test]
    fn constant_raster_center_value() {
        let g = reference_grid();
        let out = smooth(&GridField::constant(g, 1.0), 0.01).unwrap();
        assert!((out.smoothed.at(200, 200) - 0.99966).abs() < 1e-3);
        assert!(out.smoothed.max() <= 1.0 + 1e-12);
        // boundary dip without renormalization
        assert!(out.smoothed.at(0, 200) < 0.6);
        assert!(out.smoothed.min() > 0.0);
    }

    #[test]
    fn smoothing_is_linear_and_kills_zero() {
        let g = TensorGrid::square(0.0, 1.0, 101).unwrap();
        let s = GaussianSmoother::new(&g, 0.03).unwrap();
        let z = s.convolve(&GridField::zeros(g)).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let f = GridField::from_fn(g, |_, _| r.random::<f64>()).unwrap();
        let h = GridField::from_fn(g, |x, y| (x * 7.0).sin() + y).unwrap();
        let (a, b) = (2.5, -0.75);
        let mut comb = GridField::zeros(g);
        comb.axpy(a, &f).unwrap();
        comb.axpy(b, &h).unwrap();
        let lhs = s.convolve(&comb).unwrap();
        let (sf, sh) = (s.convolve(&f).unwrap(), s.convolve(&h).unwrap());
        for k in 0..g.len() {
            let rhs = a * sf.values()[k] + b * sh.values()[k];
            assert!((lhs.values()[k] - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothed_sample_bounded_by_raster_max() {
        let g = TensorGrid::square(0.0, 1.0, 201).unwrap();
        let c = random_sample(13, 100.0);
        let s = GaussianSmoother::new(&g, 0.02).unwrap().smooth_sample(&c).unwrap();
        assert!(s.smoothed.max() <= s.base.max() * (1.0 + 1e-12));
        assert!(s.smoothed.min() >= 0.0);
    }

    #[test]
    fn resolution_guard() {
        let g = TensorGrid::square(0.0, 1.0, 11).unwrap();
        assert!(GaussianSmoother::new(&g, 0.05).is_err());
        assert!(GaussianSmoother::new(&g, 0.0).is_err());
    }

    #[test]
    fn table_transform_interpolates() {
        let t = Transform::Table { xs: vec![0.0, 1.0], ys: vec![1.0, 3.0] };
        assert_eq!(t.apply(-1.0), 1.0);
        assert_eq!(t.apply(0.5), 2.0);
        assert_eq!(t.apply(4.0), 3.0);
        assert!(Transform::Table { xs: vec![0.0], ys: vec![-1.0] }.validate().is_err());
    }
}
