//! Lévy subordinator paths on `[0, D]`.
//!
//! Two representations share [`SubordinatorPath`]: exact Poisson paths
//! (uniform-order-statistics construction, true càdlàg evaluation) and
//! grid approximations. A grid path stores its values `g_0 = 0, g_1, ..., g_N`
//! at `x_i = i D / N` and evaluates as `g_i` on `[x_i, x_{i+1})`, with
//! `g_{N-1}` at `x = D`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathKind {
    ExactPoisson,
    GridApprox,
}

/// Nondecreasing right-continuous piecewise-constant path starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubordinatorPath {
    horizon: f64,
    jump_times: Vec<f64>,
    values: Vec<f64>,
    kind: PathKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid_values: Option<Vec<f64>>,
}

fn grid_node(horizon: f64, i: usize, cells: usize) -> f64 {
    if i == cells {
        horizon
    } else {
        horizon * i as f64 / cells as f64
    }
}

impl SubordinatorPath {
    /// Validating constructor for exact (jump-list) paths.
    pub fn from_jumps(horizon: f64, jump_times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let p = Self {
            horizon,
            jump_times,
            values,
            kind: PathKind::ExactPoisson,
            grid_values: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// Grid path from its node values `g_0, ..., g_N` (`g_0` must be 0).
    pub fn from_grid_values(horizon: f64, grid_values: Vec<f64>) -> Result<Self> {
        if grid_values.len() < 2 {
            return Err(invalid("grid_values", "need at least one cell"));
        }
        if grid_values[0] != 0.0 {
            return Err(invalid("grid_values", "path must start at 0"));
        }
        let cells = grid_values.len() - 1;
        let mut jump_times = Vec::new();
        let mut values = Vec::new();
        // g_N is never used by the extension, so jumps live on x_1..x_{N-1}
        for i in 1..cells {
            if grid_values[i] != grid_values[i - 1] {
                jump_times.push(grid_node(horizon, i, cells));
                values.push(grid_values[i]);
            }
        }
        let p = Self {
            horizon,
            jump_times,
            values,
            kind: PathKind::GridApprox,
            grid_values: Some(grid_values),
        };
        p.validate()?;
        Ok(p)
    }

    /// The constant-zero path.
    pub fn zero(horizon: f64) -> Self {
        Self {
            horizon,
            jump_times: Vec::new(),
            values: Vec::new(),
            kind: PathKind::ExactPoisson,
            grid_values: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon", format!("must be finite and > 0, got {}", self.horizon)));
        }
        if self.jump_times.len() != self.values.len() {
            return Err(invalid("values", "one value per jump time required"));
        }
        let mut prev_t = 0.0;
        for &t in &self.jump_times {
            if !(t > prev_t && t <= self.horizon) {
                return Err(invalid("jump_times", "must be strictly increasing in (0, D]"));
            }
            prev_t = t;
        }
        let mut prev_v = 0.0;
        for &v in &self.values {
            if !(v.is_finite() && v >= prev_v) {
                return Err(invalid("values", "must be finite, >= 0 and nondecreasing"));
            }
            prev_v = v;
        }
        if let Some(g) = &self.grid_values {
            if g.windows(2).any(|w| !(w[1] >= w[0])) || g.iter().any(|v| !v.is_finite()) {
                return Err(invalid("grid_values", "must be finite and nondecreasing"));
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> PathKind {
        self.kind
    }

    pub fn grid_values(&self) -> Option<&[f64]> {
        self.grid_values.as_deref()
    }

    /// Number of grid cells for grid paths.
    pub fn grid_cells(&self) -> Option<usize> {
        self.grid_values.as_ref().map(|g| g.len() - 1)
    }

    pub fn max_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// Path value at `x` in `[0, D]`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let tol = 1e-12 * self.horizon;
        if !(x >= -tol && x <= self.horizon + tol) {
            return Err(Error::OutOfHorizon {
                x,
                horizon: self.horizon,
            });
        }
        Ok(self.eval_unchecked(x))
    }

    #[inline]
    pub fn eval_unchecked(&self, x: f64) -> f64 {
        let k = self.jump_times.partition_point(|&t| t <= x);
        if k == 0 {
            0.0
        } else {
            self.values[k - 1]
        }
    }

    fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            horizon: self.horizon,
            jump_times: self.jump_times.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            kind: self.kind,
            grid_values: self.grid_values.as_ref().map(|g| g.iter().map(|&v| f(v)).collect()),
        }
    }
}

/// Pointwise `min(l(x), K)`. Jump locations are kept, including those
/// past saturation.
pub fn cut_path(p: &SubordinatorPath, k: f64) -> Result<SubordinatorPath> {
    if !(k > 0.0) {
        return Err(invalid("K", format!("cut level must be > 0, got {k}")));
    }
    Ok(p.map_values(|v| v.min(k)))
}

/// Values multiplied by `rho`; jump times unchanged.
pub fn rescale_path(p: &SubordinatorPath, rho: f64) -> Result<SubordinatorPath> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(invalid("rescale", format!("must be finite and > 0, got {rho}")));
    }
    if rho == 1.0 {
        return Ok(p.clone());
    }
    Ok(p.map_values(|v| v * rho))
}

/// Restriction of a grid path to a nested coarser grid of `coarse_cells`
/// cells: coarse node values are the fine path's values at the coarse
/// nodes, then the usual piecewise-constant extension applies.
pub fn coarsen_path(p: &SubordinatorPath, coarse_cells: usize) -> Result<SubordinatorPath> {
    let fine = p
        .grid_values
        .as_ref()
        .ok_or_else(|| Error::NotNested("only grid paths can be coarsened".into()))?;
    let cells = fine.len() - 1;
    if coarse_cells == 0 || cells % coarse_cells != 0 {
        return Err(Error::NotNested(format!(
            "{coarse_cells} coarse cells do not divide {cells} fine cells"
        )));
    }
    if coarse_cells == cells {
        return Ok(p.clone());
    }
    let f = cells / coarse_cells;
    let mut g: Vec<f64> = (0..coarse_cells).map(|k| fine[k * f]).collect();
    g.push(p.eval_unchecked(p.horizon));
    SubordinatorPath::from_grid_values(p.horizon, g)
}

/// Exact Poisson path: `N ~ Poisson(lambda D)` unit jumps at sorted
/// i.i.d. uniform times on `(0, D]`.
pub fn sample_poisson_exact<R: Rng + ?Sized>(
    lambda: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<SubordinatorPath> {
    check_positive("lambda", lambda)?;
    check_positive("horizon", horizon)?;
    let n = Poisson::new(lambda * horizon)
        .map_err(|e| invalid("lambda", e.to_string()))?
        .sample(rng) as usize;
    let mut times: Vec<f64> = (0..n).map(|_| horizon * (1.0 - rng.random::<f64>())).collect();
    times.sort_by(f64::total_cmp);
    let mut jump_times = Vec::with_capacity(n);
    let mut values: Vec<f64> = Vec::with_capacity(n);
    for t in times {
        if jump_times.last() == Some(&t) {
            *values.last_mut().unwrap() += 1.0;
        } else {
            let level = values.last().copied().unwrap_or(0.0) + 1.0;
            jump_times.push(t);
            values.push(level);
        }
    }
    SubordinatorPath::from_jumps(horizon, jump_times, values)
}

fn grid_from_increments<R: Rng + ?Sized, D: Distribution<f64>>(
    horizon: f64,
    cells: usize,
    dist: D,
    rng: &mut R,
) -> Result<SubordinatorPath> {
    let mut g = Vec::with_capacity(cells + 1);
    let mut level = 0.0;
    g.push(level);
    for _ in 0..cells {
        level += dist.sample(rng);
        g.push(level);
    }
    SubordinatorPath::from_grid_values(horizon, g)
}

/// Poisson grid approximation with step `<= eps`.
pub fn sample_poisson_grid<R: Rng + ?Sized>(
    lambda: f64,
    horizon: f64,
    eps: f64,
    rng: &mut R,
) -> Result<SubordinatorPath> {
    let cells = cells_for_eps(horizon, eps)?;
    sample_poisson_grid_cells(lambda, horizon, cells, rng)
}

pub fn sample_poisson_grid_cells<R: Rng + ?Sized>(
    lambda: f64,
    horizon: f64,
    cells: usize,
    rng: &mut R,
) -> Result<SubordinatorPath> {
    check_positive("lambda", lambda)?;
    check_positive("horizon", horizon)?;
    if cells == 0 {
        return Err(invalid("cells", "must be >= 1"));
    }
    let dist = Poisson::new(lambda * horizon / cells as f64).map_err(|e| invalid("lambda", e.to_string()))?;
    grid_from_increments(horizon, cells, dist, rng)
}

/// Gamma process grid approximation: increments `Gamma(shape = a dx, rate = b)`.
pub fn sample_gamma_grid<R: Rng + ?Sized>(
    a: f64,
    b: f64,
    horizon: f64,
    eps: f64,
    rng: &mut R,
) -> Result<SubordinatorPath> {
    let cells = cells_for_eps(horizon, eps)?;
    sample_gamma_grid_cells(a, b, horizon, cells, rng)
}

pub fn sample_gamma_grid_cells<R: Rng + ?Sized>(
    a: f64,
    b: f64,
    horizon: f64,
    cells: usize,
    rng: &mut R,
) -> Result<SubordinatorPath> {
    check_positive("a", a)?;
    check_positive("b", b)?;
    check_positive("horizon", horizon)?;
    if cells == 0 {
        return Err(invalid("cells", "must be >= 1"));
    }
    let dist = Gamma::new(a * horizon / cells as f64, 1.0 / b).map_err(|e| invalid("a", e.to_string()))?;
    grid_from_increments(horizon, cells, dist, rng)
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite and > 0, got {v}")))
    }
}

fn cells_for_eps(horizon: f64, eps: f64) -> Result<usize> {
    if !(eps > 0.0 && eps <= horizon * (1.0 + 1e-12)) {
        return Err(invalid("eps_l", format!("must lie in (0, D], got {eps}")));
    }
    Ok(crate::grf::TensorGrid::cells_for_step(horizon, eps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SubordinatorFamily {
    Poisson { lambda: f64 },
    /// Gamma process with shape rate `a` per unit length and rate `b`.
    Gamma { a: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimulationMode {
    Exact,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubordinatorSpec {
    pub family: SubordinatorFamily,
    pub mode: SimulationMode,
    /// Multiplies path values (1 = no rescaling).
    pub rescale: f64,
}

impl SubordinatorSpec {
    pub fn validate(&self) -> Result<()> {
        match self.family {
            SubordinatorFamily::Poisson { lambda } => check_positive("lambda", lambda)?,
            SubordinatorFamily::Gamma { a, b } => {
                check_positive("a", a)?;
                check_positive("b", b)?;
                if self.mode == SimulationMode::Exact {
                    return Err(invalid("mode", "Gamma subordinators only support grid simulation"));
                }
            }
        }
        check_positive("rescale", self.rescale)
    }

    /// One rescaled, uncut path. `cells` is ignored in exact mode.
    pub fn sample<R: Rng + ?Sized>(&self, horizon: f64, cells: usize, rng: &mut R) -> Result<SubordinatorPath> {
        let raw = match (self.family, self.mode) {
            (SubordinatorFamily::Poisson { lambda }, SimulationMode::Exact) => {
                sample_poisson_exact(lambda, horizon, rng)?
            }
            (SubordinatorFamily::Poisson { lambda }, SimulationMode::Grid) => {
                sample_poisson_grid_cells(lambda, horizon, cells, rng)?
            }
            (SubordinatorFamily::Gamma { a, b }, SimulationMode::Grid) => {
                sample_gamma_grid_cells(a, b, horizon, cells, rng)?
            }
            (SubordinatorFamily::Gamma { .. }, SimulationMode::Exact) => {
                return Err(invalid("mode", "Gamma subordinators only support grid simulation"))
            }
        };
        rescale_path(&raw, self.rescale)
    }

    /// `P(rescale * l(horizon) > k)`: the probability that the cut at `k` is active.
    pub fn exceedance_probability(&self, horizon: f64, k: f64) -> f64 {
        let level = k / self.rescale;
        match self.family {
            SubordinatorFamily::Poisson { lambda } => poisson_exceedance(lambda * horizon, level.floor() as u64),
            SubordinatorFamily::Gamma { a, b } => gamma_exceedance(a * horizon, b, level),
        }
    }
}

/// `P(N > k)` for `N ~ Poisson(mean)`, by summing the upper tail.
pub fn poisson_exceedance(mean: f64, k: u64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    let log_pmf = |j: u64| -mean + j as f64 * mean.ln() - ln_gamma(j as f64 + 1.0);
    if (k as f64) + 1.0 < mean {
        // head is the small part here
        let head: f64 = (0..=k).map(|j| log_pmf(j).exp()).sum();
        return 1.0 - head;
    }
    let mut sum = 0.0;
    let mut j = k + 1;
    loop {
        let term = log_pmf(j).exp();
        sum += term;
        if term < 1e-17 * sum || j > k + 10_000 {
            break;
        }
        j += 1;
    }
    sum
}

/// `P(X > level)` for `X ~ Gamma(shape, rate)`.
pub fn gamma_exceedance(shape: f64, rate: f64, level: f64) -> f64 {
    if level <= 0.0 {
        return 1.0;
    }
    gamma_ur(shape, rate * level)
}
