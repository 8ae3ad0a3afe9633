use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Result};
use crate::fem::h1_inner_values;
use crate::grf::{GridField, TensorGrid};
use crate::rng::SeedSchedule;

use super::plan::{LevelPlan, MeshMode};
use super::sampling::{with_sample_context, PairSolutions, Sampler, Smoother, Smoothing};

/// Samples evaluated in parallel before they are folded in index order.
const CHUNK: usize = 16;

/// Child tag of the schedule used by the inner control variate mean estimator.
pub const CV_MEAN_STREAM: u64 = 0xC5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Slmc,
    Mlmc,
    MlmcCv,
}

/// The level-pair quantity averaged by an estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Quantity {
    /// `u_ℓ - u_{ℓ-1}`
    Rough,
    /// `s_ℓ - s_{ℓ-1}` for the smoothed coefficient
    Smoothed,
    /// `(u_ℓ - s_ℓ) - (u_{ℓ-1} - s_{ℓ-1})`
    Cv,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelReport {
    pub level: usize,
    pub h: f64,
    pub eps_w: f64,
    pub eps_l: f64,
    pub samples: usize,
    /// Sample variance of the level quantity in the discrete `H¹` norm.
    pub var: f64,
    /// False when `samples == 1`; `var` is then reported as 0.
    pub var_defined: bool,
    /// Sum over samples of the FE unknowns solved for.
    pub cost_dofs: u64,
    /// Sum over samples of the per-sample wall-clock time.
    pub wallclock_s: f64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum CvMeanInfo {
    Given,
    Estimated { inner: Box<EstimatorResult> },
}

#[derive(Debug, Clone, Serialize)]
pub struct CvInfo {
    pub smoothing: Smoothing,
    pub mean: CvMeanInfo,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorResult {
    pub kind: EstimatorKind,
    pub mesh: MeshMode,
    pub seed: SeedSchedule,
    pub levels: Vec<LevelReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvInfo>,
    /// Elapsed time of the whole estimator, including any inner estimator.
    pub wallclock_s: f64,
    /// Estimate of the mean solution on the reference grid.
    #[serde(skip)]
    pub mean: GridField,
}

impl EstimatorResult {
    pub fn total_cost_dofs(&self) -> u64 {
        let inner = match &self.cv {
            Some(CvInfo { mean: CvMeanInfo::Estimated { inner }, .. }) => inner.total_cost_dofs(),
            _ => 0,
        };
        self.levels.iter().map(|l| l.cost_dofs).sum::<u64>() + inner
    }

    pub fn sample_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.samples).collect()
    }
}

/// Running mean and `H¹` sum of squared deviations.
struct Welford<'a> {
    grid: &'a TensorGrid,
    n: usize,
    mean: Vec<f64>,
    m2: f64,
}

impl<'a> Welford<'a> {
    fn new(grid: &'a TensorGrid) -> Self {
        Self { grid, n: 0, mean: vec![0.0; grid.len()], m2: 0.0 }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let k = self.n as f64;
        let before: Vec<f64> = x.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        for (m, d) in self.mean.iter_mut().zip(&before) {
            *m += d / k;
        }
        let after: Vec<f64> = x.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        self.m2 += h1_inner_values(self.grid, &before, &after);
    }

    fn variance(&self) -> Option<f64> {
        (self.n > 1).then(|| (self.m2 / (self.n - 1) as f64).max(0.0))
    }
}

fn difference(fine: &[f64], coarse: Option<&Vec<f64>>) -> Vec<f64> {
    match coarse {
        Some(c) => fine.iter().zip(c).map(|(f, c)| f - c).collect(),
        None => fine.to_vec(),
    }
}

fn extract(q: Quantity, p: PairSolutions) -> Vec<f64> {
    match q {
        Quantity::Rough => {
            let (f, c) = p.rough.expect("rough solve");
            difference(&f, c.as_ref())
        }
        Quantity::Smoothed => {
            let (f, c) = p.smooth.expect("smoothed solve");
            difference(&f, c.as_ref())
        }
        Quantity::Cv => cv_difference(&p),
    }
}

fn cv_difference(p: &PairSolutions) -> Vec<f64> {
    let (uf, uc) = p.rough.as_ref().expect("rough solve");
    let (sf, sc) = p.smooth.as_ref().expect("smoothed solve");
    let fine: Vec<f64> = uf.iter().zip(sf).map(|(u, s)| u - s).collect();
    match (uc, sc) {
        (Some(uc), Some(sc)) => fine
            .iter()
            .zip(uc.iter().zip(sc))
            .map(|(f, (u, s))| f - (u - s))
            .collect(),
        _ => fine,
    }
}

/// Evaluates `count` samples of `level` through `per_sample` in parallel
/// chunks and hands the results to `fold` in sample order.
fn for_each_sample<T: Send>(
    schedule: &SeedSchedule,
    level: usize,
    count: usize,
    per_sample: impl Fn(u64) -> Result<T> + Sync,
    mut fold: impl FnMut(T),
) -> Result<()> {
    let mut start = 0;
    while start < count {
        let end = (start + CHUNK).min(count);
        let out: Vec<Result<T>> = (start..end)
            .into_par_iter()
            .map(|i| per_sample(i as u64).map_err(|e| with_sample_context(e, level, i as u64, schedule)))
            .collect();
        for r in out {
            fold(r?);
        }
        start = end;
    }
    Ok(())
}

struct LevelOutcome {
    mean: Vec<f64>,
    report: LevelReport,
}

#[allow(clippy::too_many_arguments)]
fn run_level(
    sampler: &Sampler,
    plan: &LevelPlan,
    level: usize,
    coupled: bool,
    samples: usize,
    quantity: Quantity,
    smoother: Option<&Smoother>,
    schedule: &SeedSchedule,
) -> Result<LevelOutcome> {
    let grid = sampler.reference();
    let mut acc = Welford::new(grid);
    let mut cost = 0u64;
    let mut secs = 0.0;
    let rough = quantity != Quantity::Smoothed;
    for_each_sample(
        schedule,
        level,
        samples,
        |i| {
            let t = Instant::now();
            let draw = sampler.draw(schedule, level, i)?;
            let pair = if coupled {
                sampler.pair_solutions(&draw, plan.mesh, rough, smoother)?
            } else {
                sampler.single_solutions(&draw, plan.mesh, rough, smoother)?
            };
            let dofs = pair.dofs;
            Ok((extract(quantity, pair), dofs, t.elapsed().as_secs_f64()))
        },
        |(v, dofs, s)| {
            acc.push(&v);
            cost += dofs;
            secs += s;
        },
    )?;
    let spec = plan.levels[level];
    Ok(LevelOutcome {
        report: LevelReport {
            level,
            h: spec.h,
            eps_w: spec.eps_w,
            eps_l: spec.eps_l,
            samples,
            var: acc.variance().unwrap_or(0.0),
            var_defined: acc.variance().is_some(),
            cost_dofs: cost,
            wallclock_s: secs,
        },
        mean: acc.mean,
    })
}

fn check(sampler: &Sampler, plan: &LevelPlan) -> Result<()> {
    sampler.check_plan(plan)?;
    if plan.levels.iter().any(|l| l.samples == 0) {
        return Err(invalid("samples", "every level needs at least one sample"));
    }
    Ok(())
}

fn multilevel(
    sampler: &Sampler,
    plan: &LevelPlan,
    quantity: Quantity,
    smoother: Option<&Smoother>,
    schedule: &SeedSchedule,
) -> Result<(GridField, Vec<LevelReport>)> {
    check(sampler, plan)?;
    let mut total = vec![0.0; sampler.reference().len()];
    let mut reports = Vec::with_capacity(plan.len());
    for (l, spec) in plan.levels.iter().enumerate() {
        let out = run_level(sampler, plan, l, true, spec.samples, quantity, smoother, schedule)?;
        for (t, m) in total.iter_mut().zip(&out.mean) {
            *t += m;
        }
        reports.push(out.report);
    }
    Ok((GridField::new(*sampler.reference(), total)?, reports))
}

/// Single-level Monte Carlo on the finest level of `plan` with that
/// level's sample count.
pub fn slmc(sampler: &Sampler, plan: &LevelPlan, schedule: &SeedSchedule) -> Result<EstimatorResult> {
    check(sampler, plan)?;
    let t = Instant::now();
    let top = plan.len() - 1;
    let out = run_level(sampler, plan, top, false, plan.levels[top].samples, Quantity::Rough, None, schedule)?;
    Ok(EstimatorResult {
        kind: EstimatorKind::Slmc,
        mesh: plan.mesh,
        seed: *schedule,
        levels: vec![out.report],
        cv: None,
        wallclock_s: t.elapsed().as_secs_f64(),
        mean: GridField::new(*sampler.reference(), out.mean)?,
    })
}

/// Multilevel Monte Carlo: the sum over levels of the sample means of the
/// coupled differences `u_ℓ - u_{ℓ-1}`.
pub fn mlmc(sampler: &Sampler, plan: &LevelPlan, schedule: &SeedSchedule) -> Result<EstimatorResult> {
    let t = Instant::now();
    let (mean, levels) = multilevel(sampler, plan, Quantity::Rough, None, schedule)?;
    Ok(EstimatorResult {
        kind: EstimatorKind::Mlmc,
        mesh: plan.mesh,
        seed: *schedule,
        levels,
        cv: None,
        wallclock_s: t.elapsed().as_secs_f64(),
        mean,
    })
}

/// Mean of the smoothed problem for the control variate.
#[derive(Debug, Clone)]
pub enum CvMean {
    Given(GridField),
    /// Estimated by a multilevel estimator on the smoothed problem with the
    /// same plan and the child schedule [`CV_MEAN_STREAM`].
    Auto,
    /// As `Auto` with its own plan, which must share the mesh sizes and
    /// approximation parameters of the outer plan.
    Estimate(LevelPlan),
}

/// Multilevel Monte Carlo with the smoothed-coefficient solution as control
/// variate.
pub fn mlmc_cv(
    sampler: &Sampler,
    plan: &LevelPlan,
    smoothing: Smoothing,
    cv_mean: CvMean,
    schedule: &SeedSchedule,
) -> Result<EstimatorResult> {
    let t = Instant::now();
    let smoother = Smoother::new(smoothing)?;
    let (mean_cv, info) = match cv_mean {
        CvMean::Given(m) => {
            if m.grid() != sampler.reference() {
                return Err(invalid("cv_mean", "must live on the reference grid"));
            }
            (m, CvMeanInfo::Given)
        }
        inner => {
            let inner_plan = match &inner {
                CvMean::Estimate(p) => {
                    let same = p.len() == plan.len()
                        && p.mesh == plan.mesh
                        && p.levels.iter().zip(&plan.levels).all(|(a, b)| (a.h, a.eps_w, a.eps_l) == (b.h, b.eps_w, b.eps_l));
                    if !same {
                        return Err(invalid("cv_mean", "the inner plan must match the outer plan up to sample counts"));
                    }
                    p
                }
                _ => plan,
            };
            let child = schedule.child(CV_MEAN_STREAM);
            let ti = Instant::now();
            let (m, levels) = multilevel(sampler, inner_plan, Quantity::Smoothed, Some(&smoother), &child)?;
            let inner = EstimatorResult {
                kind: EstimatorKind::Mlmc,
                mesh: plan.mesh,
                seed: child,
                levels,
                cv: None,
                wallclock_s: ti.elapsed().as_secs_f64(),
                mean: m.clone(),
            };
            (m, CvMeanInfo::Estimated { inner: Box::new(inner) })
        }
    };
    let (corr, levels) = multilevel(sampler, plan, Quantity::Cv, Some(&smoother), schedule)?;
    let mut mean = mean_cv;
    mean.axpy(1.0, &corr)?;
    Ok(EstimatorResult {
        kind: EstimatorKind::MlmcCv,
        mesh: plan.mesh,
        seed: *schedule,
        levels,
        cv: Some(CvInfo { smoothing, mean: info }),
        wallclock_s: t.elapsed().as_secs_f64(),
        mean,
    })
}

/// `VAR_ℓ` of the rough level differences from `n` samples per level.
pub fn pilot_variances(sampler: &Sampler, plan: &LevelPlan, n: usize, schedule: &SeedSchedule) -> Result<Vec<f64>> {
    pilot(sampler, plan, n, Quantity::Rough, None, schedule)
}

/// `VAR_ℓ` of the control variate level differences from `n` samples per level.
pub fn pilot_cv_variances(
    sampler: &Sampler,
    plan: &LevelPlan,
    smoothing: Smoothing,
    n: usize,
    schedule: &SeedSchedule,
) -> Result<Vec<f64>> {
    let smoother = Smoother::new(smoothing)?;
    pilot(sampler, plan, n, Quantity::Cv, Some(&smoother), schedule)
}

fn pilot(
    sampler: &Sampler,
    plan: &LevelPlan,
    n: usize,
    quantity: Quantity,
    smoother: Option<&Smoother>,
    schedule: &SeedSchedule,
) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(invalid("pilot", "at least two pilot samples per level are needed"));
    }
    let p = plan.with_samples(&vec![n; plan.len()])?;
    let (_, levels) = multilevel(sampler, &p, quantity, smoother, schedule)?;
    Ok(levels.iter().map(|l| l.var).collect())
}

/// Paired comparison of the rough and control variate level variances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvPilotLevel {
    pub level: usize,
    pub samples: usize,
    pub var: f64,
    pub var_cv: f64,
    /// Level variance of the smoothed problem alone.
    pub var_smoothed: f64,
    /// t statistic of `VAR_ℓ - VAR^CV_ℓ` from the paired squared deviations.
    pub t_statistic: f64,
    /// One-sided p-value for `VAR^CV_ℓ < VAR_ℓ`.
    pub p_value: f64,
}

/// Rough and control variate differences from the same `n` draws per level.
pub fn cv_pilot(
    sampler: &Sampler,
    plan: &LevelPlan,
    smoothing: Smoothing,
    n: usize,
    schedule: &SeedSchedule,
) -> Result<Vec<CvPilotLevel>> {
    if n < 3 {
        return Err(invalid("pilot", "the paired test needs at least three samples per level"));
    }
    check(sampler, plan)?;
    let smoother = Smoother::new(smoothing)?;
    let grid = sampler.reference();
    let mut out = Vec::with_capacity(plan.len());
    for l in 0..plan.len() {
        let mut rough = Vec::with_capacity(n);
        let mut cv = Vec::with_capacity(n);
        for_each_sample(
            schedule,
            l,
            n,
            |i| {
                let draw = sampler.draw(schedule, l, i)?;
                let p = sampler.pair_solutions(&draw, plan.mesh, true, Some(&smoother))?;
                let c = cv_difference(&p);
                Ok((extract(Quantity::Rough, p), c))
            },
            |(r, c)| {
                rough.push(r);
                cv.push(c);
            },
        )?;
        let centered_sq = |xs: &[Vec<f64>]| -> Vec<f64> {
            let mut mean = vec![0.0; grid.len()];
            for x in xs {
                for (m, v) in mean.iter_mut().zip(x) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= xs.len() as f64);
            xs.iter()
                .map(|x| {
                    let d: Vec<f64> = x.iter().zip(&mean).map(|(x, m)| x - m).collect();
                    h1_inner_values(grid, &d, &d)
                })
                .collect()
        };
        let a = centered_sq(&rough);
        let b = centered_sq(&cv);
        let smoothed: Vec<Vec<f64>> =
            rough.iter().zip(&cv).map(|(r, c)| r.iter().zip(c).map(|(r, c)| r - c).collect()).collect();
        let nf = n as f64;
        let var_smoothed = centered_sq(&smoothed).iter().sum::<f64>() / (nf - 1.0);
        let var = a.iter().sum::<f64>() / (nf - 1.0);
        let var_cv = b.iter().sum::<f64>() / (nf - 1.0);
        let z: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a - b).collect();
        let zm = z.iter().sum::<f64>() / nf;
        let zs = (z.iter().map(|v| (v - zm).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
        let (t_statistic, p_value) = if zs > 0.0 {
            let t = zm / (zs / nf.sqrt());
            let dist = StudentsT::new(0.0, 1.0, nf - 1.0).map_err(|e| invalid("pilot", e.to_string()))?;
            (t, 1.0 - dist.cdf(t))
        } else if zm > 0.0 {
            (f64::INFINITY, 0.0)
        } else {
            (0.0, 1.0)
        };
        out.push(CvPilotLevel { level: l, samples: n, var, var_cv, var_smoothed, t_statistic, p_value });
    }
    Ok(out)
}
