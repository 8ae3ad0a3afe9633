use std::fs;
use std::path::Path;

use anyhow::Context;
use levy_mlmc_core::grf::GridField;
use serde::Serialize;

use crate::experiment::ExperimentOutcome;

pub const RESULT_JSON: &str = "result.json";
pub const RMSE_CSV: &str = "rmse.csv";
pub const LEVELS_CSV: &str = "levels.csv";
pub const MEAN_FIELD_CSV: &str = "mean_field.csv";
pub const REFERENCE_FIELD_CSV: &str = "reference_field.csv";

#[derive(Serialize)]
struct RmseRecord {
    level: usize,
    #[serde(rename = "h_L")]
    h_l: f64,
    rmse: f64,
    /// Empty with fewer than two rows.
    fitted_rate: Option<f64>,
    wallclock_s: f64,
}

#[derive(Serialize)]
struct LevelRecord {
    level: usize,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "VAR")]
    var: f64,
    cost: u64,
}

#[derive(Serialize)]
struct FieldRecord {
    x: f64,
    y: f64,
    u: f64,
}

pub fn write_field(path: &Path, field: &GridField) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let g = field.grid();
    for j in 0..g.ny {
        for i in 0..g.nx {
            w.serialize(FieldRecord { x: g.x(i), y: g.y(j), u: field.at(i, j) })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `result.json`, the reference field and one directory per variant.
pub fn write_outputs(out: &Path, outcome: &ExperimentOutcome) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let json = serde_json::to_string_pretty(outcome)?;
    fs::write(out.join(RESULT_JSON), json + "\n")?;
    write_field(&out.join(REFERENCE_FIELD_CSV), outcome.reference_field())?;

    for v in &outcome.variants {
        let dir = out.join(&v.label);
        fs::create_dir_all(&dir)?;
        let mut w = csv::Writer::from_path(dir.join(RMSE_CSV))?;
        for r in &v.rmse.rows {
            w.serialize(RmseRecord {
                level: r.level,
                h_l: r.h_l,
                rmse: r.rmse,
                fitted_rate: v.rmse.fitted_rate,
                wallclock_s: r.wallclock_s,
            })?;
        }
        w.flush()?;
        if let Some(run) = &v.top_run {
            let mut w = csv::Writer::from_path(dir.join(LEVELS_CSV))?;
            for l in &run.levels {
                w.serialize(LevelRecord { level: l.level, m: l.samples, var: l.var, cost: l.cost_dofs })?;
            }
            w.flush()?;
            write_field(&dir.join(MEAN_FIELD_CSV), &run.mean)?;
        }
    }
    Ok(())
}
