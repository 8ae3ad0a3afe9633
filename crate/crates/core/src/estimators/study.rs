use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fem::h1_distance_sq;
use crate::grf::GridField;

/// `√((1/n) Σ_i ‖ref - E_i‖²)` in the discrete `H¹` norm.
pub fn rmse(estimates: &[&GridField], reference: &GridField) -> Result<f64> {
    if estimates.is_empty() {
        return Err(invalid("runs", "need at least one run"));
    }
    let mut sum = 0.0;
    for e in estimates {
        sum += h1_distance_sq(reference, e)?;
    }
    Ok((sum / estimates.len() as f64).max(0.0).sqrt())
}

/// Least-squares slope of `log rmse` against `log h`.
pub fn fit_rate(hs: &[f64], rmses: &[f64]) -> Result<f64> {
    if hs.len() != rmses.len() {
        return Err(invalid("rmse", "one RMSE per mesh size required"));
    }
    if hs.len() < 2 {
        return Err(invalid("rmse", "a rate needs at least two points"));
    }
    if hs.iter().chain(rmses).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(invalid("rmse", "mesh sizes and errors must be finite and > 0"));
    }
    let x: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let y: Vec<f64> = rmses.iter().map(|r| r.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("h", "mesh sizes must not all coincide"));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    /// Finest level `L` of the estimator (levels counted from 1).
    pub level: usize,
    pub h_l: f64,
    pub rmse: f64,
    /// Mean wall-clock time of one estimator run.
    pub wallclock_s: f64,
    /// Mean FE unknowns of one estimator run.
    pub cost_dofs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseTable {
    pub rows: Vec<RmseRow>,
    /// `None` with fewer than two rows.
    pub fitted_rate: Option<f64>,
}

impl RmseTable {
    pub fn new(rows: Vec<RmseRow>) -> Self {
        let hs: Vec<f64> = rows.iter().map(|r| r.h_l).collect();
        let rs: Vec<f64> = rows.iter().map(|r| r.rmse).collect();
        let fitted_rate = fit_rate(&hs, &rs).ok();
        Self { rows, fitted_rate }
    }

    pub fn rmses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.rmse).collect()
    }
}

/// One estimator run: its mean field, wall-clock seconds and FE unknowns.
pub struct RunOutput {
    pub mean: GridField,
    pub wallclock_s: f64,
    pub cost_dofs: u64,
}

/// RMSE of `n_runs` independent runs per finest level against `reference`.
/// `run(L, i)` performs run `i` of the estimator with finest level `L`.
pub fn rmse_study(
    levels: &[(usize, f64)],
    n_runs: usize,
    reference: &GridField,
    mut run: impl FnMut(usize, usize) -> Result<RunOutput>,
) -> Result<RmseTable> {
    if n_runs < 2 {
        return Err(invalid("n_runs", "an RMSE study needs at least two runs"));
    }
    let mut rows = Vec::with_capacity(levels.len());
    for &(level, h_l) in levels {
        let mut means = Vec::with_capacity(n_runs);
        let (mut secs, mut dofs) = (0.0, 0.0);
        for i in 0..n_runs {
            let out = run(level, i)?;
            secs += out.wallclock_s;
            dofs += out.cost_dofs as f64;
            means.push(out.mean);
        }
        let refs: Vec<&GridField> = means.iter().collect();
        rows.push(RmseRow {
            level,
            h_l,
            rmse: rmse(&refs, reference)?,
            wallclock_s: secs / n_runs as f64,
            cost_dofs: dofs / n_runs as f64,
        });
    }
    Ok(RmseTable::new(rows))
}
