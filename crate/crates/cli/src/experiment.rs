use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::Context;
use levy_mlmc_core::estimators::{
    cv_pilot, equilibrate, mlmc, mlmc_cv, optimal_samples, pilot_variances, rmse_study, slmc, CvMean, CvPilotLevel,
    EstimatorResult, LevelPlan, LevelSpec, MeshMode, RmseTable, RunOutput, Sampler, Smoothing,
};
use levy_mlmc_core::grf::GridField;
use levy_mlmc_core::rng::SeedSchedule;
use serde::Serialize;

use crate::config::{EstimatorChoice, ExperimentConfig, SampleRule};

/// Child tags of the master schedule.
pub mod stream {
    pub const REFERENCE: u64 = 1;
    pub const RUNS: u64 = 2;
    pub const PILOT: u64 = 3;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Variant {
    pub estimator: EstimatorChoice,
    pub mesh: MeshMode,
}

impl Variant {
    pub fn label(&self) -> String {
        let mesh = match self.mesh {
            MeshMode::Adapted => "adapted",
            MeshMode::Uniform => "uniform",
        };
        format!("{}-{mesh}", self.estimator)
    }
}

pub fn variants(cfg: &ExperimentConfig) -> Vec<Variant> {
    let mut out = Vec::new();
    for &estimator in &cfg.estimators {
        for &mesh in &cfg.meshes {
            out.push(Variant { estimator, mesh });
        }
    }
    out
}

/// The equilibrated plan of levels `1..=levels` (sample counts not yet scaled).
pub fn equilibrated_plan(cfg: &ExperimentConfig, levels: usize) -> anyhow::Result<LevelPlan> {
    Ok(equilibrate(&cfg.levels.mesh_sizes(levels), &cfg.rates, &cfg.calibration)?)
}

/// Single-level plan of the reference solution.
pub fn reference_plan(cfg: &ExperimentConfig) -> anyhow::Result<LevelPlan> {
    let full = equilibrated_plan(cfg, cfg.reference_level)?;
    let top = *full.finest();
    let m = (cfg.scale * cfg.reference_factor * top.h.powi(-2)).ceil().max(1.0) as usize;
    Ok(LevelPlan::new(vec![LevelSpec { samples: m, ..top }], reference_mesh(cfg))?)
}

/// Adapted meshes when any variant uses them, uniform otherwise.
pub fn reference_mesh(cfg: &ExperimentConfig) -> MeshMode {
    if cfg.meshes.contains(&MeshMode::Adapted) {
        MeshMode::Adapted
    } else {
        MeshMode::Uniform
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DryRunLevel {
    pub level: usize,
    pub h: f64,
    pub eps_w: f64,
    pub eps_l: f64,
    /// `None` when counts come from pilot variances at run time.
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DryRunPlan {
    /// Finest level `L` of the estimator.
    pub finest_level: usize,
    pub levels: Vec<DryRunLevel>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DryRun {
    pub config: ExperimentConfig,
    pub variants: Vec<String>,
    pub plans: Vec<DryRunPlan>,
    pub reference: DryRunLevel,
    pub reference_mesh: MeshMode,
}

/// The expanded study without any computation.
pub fn dry_run(cfg: &ExperimentConfig) -> anyhow::Result<DryRun> {
    cfg.validate()?;
    let mut plans = Vec::new();
    for top in 1..=cfg.levels.count {
        let plan = equilibrated_plan(cfg, top)?.scaled(cfg.scale)?;
        let levels = plan
            .levels
            .iter()
            .enumerate()
            .map(|(l, s)| DryRunLevel {
                level: l,
                h: s.h,
                eps_w: s.eps_w,
                eps_l: s.eps_l,
                samples: matches!(cfg.samples, SampleRule::Equilibrated).then_some(s.samples),
            })
            .collect();
        plans.push(DryRunPlan { finest_level: top, levels });
    }
    let r = reference_plan(cfg)?;
    let s = r.finest();
    Ok(DryRun {
        config: cfg.clone(),
        variants: variants(cfg).iter().map(Variant::label).collect(),
        plans,
        reference: DryRunLevel { level: cfg.reference_level, h: s.h, eps_w: s.eps_w, eps_l: s.eps_l, samples: Some(s.samples) },
        reference_mesh: r.mesh,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PilotReport {
    pub mesh: MeshMode,
    pub samples: usize,
    pub var: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv: Option<Vec<CvPilotLevel>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantOutcome {
    pub label: String,
    pub variant: Variant,
    pub rmse: RmseTable,
    /// Sample counts per level for every finest level `L`.
    pub samples: BTreeMap<usize, Vec<usize>>,
    /// Sample counts of the inner smoothed-mean estimator (`mlmc-cv` only).
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub cv_mean_samples: BTreeMap<usize, Vec<usize>>,
    /// Every run without its mean field, indexed by finest level and then run.
    pub runs: BTreeMap<usize, Vec<serde_json::Value>>,
    /// The first run with the finest level `levels.count`.
    #[serde(skip)]
    pub top_run: Option<EstimatorResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub reference: EstimatorResult,
    pub pilots: Vec<PilotReport>,
    pub variants: Vec<VariantOutcome>,
    pub wallclock_s: f64,
}

impl ExperimentOutcome {
    pub fn reference_field(&self) -> &GridField {
        &self.reference.mean
    }
}

fn pilot_for(
    cfg: &ExperimentConfig,
    sampler: &Sampler,
    mesh: MeshMode,
    n: usize,
    master: &SeedSchedule,
) -> anyhow::Result<PilotReport> {
    let plan = equilibrated_plan(cfg, cfg.levels.count)?.with_mesh(mesh);
    let sched = master.child(stream::PILOT);
    if cfg.estimators.contains(&EstimatorChoice::MlmcCv) {
        let smoothing = Smoothing::Gaussian { nu_s: cfg.nu_s.expect("validated") };
        let levels = cv_pilot(sampler, &plan, smoothing, n, &sched)?;
        Ok(PilotReport { mesh, samples: n, var: levels.iter().map(|l| l.var).collect(), cv: Some(levels) })
    } else {
        Ok(PilotReport { mesh, samples: n, var: pilot_variances(sampler, &plan, n, &sched)?, cv: None })
    }
}

/// The estimator plan and, for `mlmc-cv`, the plan of its inner estimator
/// of the smoothed mean.
fn plan_for(
    cfg: &ExperimentConfig,
    variant: Variant,
    top: usize,
    pilot: Option<&PilotReport>,
) -> anyhow::Result<(LevelPlan, Option<LevelPlan>)> {
    let base = equilibrated_plan(cfg, top)?.with_mesh(variant.mesh);
    let hs: Vec<f64> = base.levels.iter().map(|l| l.h).collect();
    let optimal = |var: &[f64]| -> anyhow::Result<LevelPlan> {
        Ok(base.with_samples(&optimal_samples(&var[..top], &hs)?.samples)?.scaled(cfg.scale)?)
    };
    let cv = variant.estimator == EstimatorChoice::MlmcCv;
    match (cfg.samples, pilot) {
        (SampleRule::Equilibrated, _) => {
            let p = base.scaled(cfg.scale)?;
            let inner = cv.then(|| p.clone());
            Ok((p, inner))
        }
        (SampleRule::Optimal { .. }, Some(p)) => match (&p.cv, cv) {
            (Some(levels), true) => {
                let var_cv: Vec<f64> = levels.iter().map(|l| l.var_cv).collect();
                let var_s: Vec<f64> = levels.iter().map(|l| l.var_smoothed).collect();
                Ok((optimal(&var_cv)?, Some(optimal(&var_s)?)))
            }
            _ => Ok((optimal(&p.var)?, None)),
        },
        (SampleRule::Optimal { .. }, None) => unreachable!("pilot runs before optimal plans"),
    }
}

/// Runs the configured study: reference, pilots, then `n_runs` estimator
/// runs for every finest level and variant.
pub fn run(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> anyhow::Result<ExperimentOutcome> {
    cfg.validate()?;
    let t = Instant::now();
    let master = SeedSchedule::new(cfg.seed);

    let ref_plan = reference_plan(cfg)?;
    log(&format!(
        "reference: level {} with {} samples ({:?} meshes)",
        cfg.reference_level,
        ref_plan.finest().samples,
        ref_plan.mesh
    ));
    let ref_sampler = Sampler::new(&cfg.problem, &ref_plan)?;
    let reference = slmc(&ref_sampler, &ref_plan, &master.child(stream::REFERENCE)).context("reference estimator")?;
    drop(ref_sampler);

    let full = equilibrated_plan(cfg, cfg.levels.count)?;
    let sampler = Sampler::new(&cfg.problem, &full)?;

    let mut pilots = Vec::new();
    if let SampleRule::Optimal { pilot } = cfg.samples {
        for &mesh in &cfg.meshes {
            log(&format!("pilot: {pilot} samples per level ({mesh:?} meshes)"));
            pilots.push(pilot_for(cfg, &sampler, mesh, pilot, &master).context("pilot run")?);
        }
    }

    let runs_sched = master.child(stream::RUNS);
    let tops: Vec<(usize, f64)> = (1..=cfg.levels.count).map(|l| (l, *cfg.levels.mesh_sizes(l).last().unwrap())).collect();
    let mut outcomes = Vec::new();
    for variant in variants(cfg) {
        let pilot = pilots.iter().find(|p| p.mesh == variant.mesh);
        let mut plans = BTreeMap::new();
        for &(top, _) in &tops {
            plans.insert(top, plan_for(cfg, variant, top, pilot)?);
        }
        let mut runs: BTreeMap<usize, Vec<serde_json::Value>> = BTreeMap::new();
        let mut top_run = None;
        let table = rmse_study(&tops, cfg.n_runs, &reference.mean, |top, i| {
            let (plan, inner) = &plans[&top];
            let sched = runs_sched.child(top as u64).child(i as u64);
            let r = match variant.estimator {
                EstimatorChoice::Mlmc => mlmc(&sampler, plan, &sched)?,
                EstimatorChoice::MlmcCv => {
                    let smoothing = Smoothing::Gaussian { nu_s: cfg.nu_s.expect("validated") };
                    let inner = inner.clone().expect("cv plans carry an inner plan");
                    mlmc_cv(&sampler, plan, smoothing, CvMean::Estimate(inner), &sched)?
                }
            };
            runs.entry(top).or_default().push(serde_json::to_value(&r).expect("serializable"));
            let out = RunOutput { mean: r.mean.clone(), wallclock_s: r.wallclock_s, cost_dofs: r.total_cost_dofs() };
            if top == cfg.levels.count && i == 0 {
                top_run = Some(r);
            }
            Ok(out)
        })
        .with_context(|| format!("variant {}", variant.label()))?;
        for row in &table.rows {
            log(&format!("{}: L = {} rmse = {:.6e} ({:.2} s per run)", variant.label(), row.level, row.rmse, row.wallclock_s));
        }
        if let Some(rate) = table.fitted_rate {
            log(&format!("{}: fitted rate {rate:.3}", variant.label()));
        }
        outcomes.push(VariantOutcome {
            label: variant.label(),
            variant,
            rmse: table,
            samples: plans.iter().map(|(k, (p, _))| (*k, p.sample_counts())).collect(),
            cv_mean_samples: plans.iter().filter_map(|(k, (_, i))| Some((*k, i.as_ref()?.sample_counts()))).collect(),
            runs,
            top_run,
        });
    }
    Ok(ExperimentOutcome {
        config: cfg.clone(),
        reference,
        pilots,
        variants: outcomes,
        wallclock_s: t.elapsed().as_secs_f64(),
    })
}
