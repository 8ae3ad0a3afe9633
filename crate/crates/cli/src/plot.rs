//! Plot-ready tables derived from an `rmse.csv`.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context};
use levy_mlmc_core::estimators::fit_rate;
use serde::Deserialize;

pub const LOGLOG_CSV: &str = "rmse_loglog.csv";
pub const TIME_TO_ERROR_CSV: &str = "time_to_error.csv";

#[derive(Debug, Clone, Deserialize)]
pub struct RmsePoint {
    pub level: usize,
    #[serde(rename = "h_L")]
    pub h_l: f64,
    pub rmse: f64,
    #[serde(default)]
    pub fitted_rate: Option<f64>,
    pub wallclock_s: f64,
}

pub fn read_rmse(path: &Path) -> anyhow::Result<Vec<RmsePoint>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let rows = r.deserialize().collect::<Result<Vec<RmsePoint>, _>>().with_context(|| format!("parsing {}", path.display()))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogLog {
    pub slope: f64,
    pub intercept: f64,
    /// `(log h, log rmse)` per row.
    pub points: Vec<(f64, f64)>,
}

/// Least-squares line through `(log h_L, log rmse)`.
pub fn loglog(rows: &[RmsePoint]) -> anyhow::Result<LogLog> {
    if rows.len() < 2 {
        bail!("a log-log fit needs at least two rows, got {}", rows.len());
    }
    let hs: Vec<f64> = rows.iter().map(|r| r.h_l).collect();
    let es: Vec<f64> = rows.iter().map(|r| r.rmse).collect();
    let slope = fit_rate(&hs, &es)?;
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.h_l.ln(), r.rmse.ln())).collect();
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    Ok(LogLog { slope, intercept: my - slope * mx, points })
}

/// `(cumulative wall-clock seconds, rmse)` in level order.
pub fn time_to_error(rows: &[RmsePoint]) -> Vec<(f64, f64)> {
    let mut t = 0.0;
    rows.iter()
        .map(|r| {
            t += r.wallclock_s;
            (t, r.rmse)
        })
        .collect()
}

pub fn emit(input: &Path, out: &Path) -> anyhow::Result<LogLog> {
    let rows = read_rmse(input)?;
    let fit = loglog(&rows)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let mut f = fs::File::create(out.join(LOGLOG_CSV))?;
    writeln!(f, "# slope {}", fit.slope)?;
    writeln!(f, "# intercept {}", fit.intercept)?;
    writeln!(f, "h_L,rmse,log_h,log_rmse,log_rmse_fit")?;
    for (r, &(lh, le)) in rows.iter().zip(&fit.points) {
        writeln!(f, "{},{},{},{},{}", r.h_l, r.rmse, lh, le, fit.intercept + fit.slope * lh)?;
    }

    let mut f = fs::File::create(out.join(TIME_TO_ERROR_CSV))?;
    writeln!(f, "cumulative_wallclock_s,rmse")?;
    for (t, e) in time_to_error(&rows) {
        writeln!(f, "{t},{e}")?;
    }
    Ok(fit)
}
