use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficient::{CoefficientSample, GaussianSmoother, TransformSpec};
use crate::error::{invalid, Error, Result};
use crate::fem::{
    assemble_solve, build_adapted_mesh, build_uniform_mesh, prolong, reference_grid, BoundarySpec, Mesh,
    SolverChoice, DEFAULT_MIN_ANGLE_DEG,
};
use crate::grf::{build_embedding, sample_grf, EmbeddingFactor, EmbeddingOptions, GridField, MaternParams, TensorGrid};
use crate::rng::{component, SeedSchedule};
use crate::subordinator::{coarsen_path, cut_path, PathKind, SubordinatorPath, SubordinatorSpec};

use super::plan::{nested_cells, LevelPlan, LevelSpec, MeshMode};

/// Rough and smoothed prolonged solutions and the unknowns solved for.
type Solves = (Option<Vec<f64>>, Option<Vec<f64>>, u64);

fn default_min_angle() -> f64 {
    DEFAULT_MIN_ANGLE_DEG
}

/// Everything about the PDE and its random coefficient except the level schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub transforms: TransformSpec,
    pub w1: MaternParams,
    pub w2: MaternParams,
    /// Subordinator for both axes; paths live on `[0, 1]`.
    pub subordinator: SubordinatorSpec,
    /// Cut level `K`; `W2` is sampled on `[0, K]²`.
    pub k: f64,
    /// Upper cap `A`.
    pub a_cap: f64,
    #[serde(default)]
    pub boundary: BoundarySpec,
    #[serde(default = "default_min_angle")]
    pub min_angle_deg: f64,
    #[serde(default)]
    pub solver: SolverChoice,
    #[serde(default)]
    pub embedding: EmbeddingOptions,
}

impl Problem {
    pub fn validate(&self) -> Result<()> {
        self.transforms.validate()?;
        self.w1.validate()?;
        self.w2.validate()?;
        self.subordinator.validate()?;
        self.boundary.validate()?;
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(invalid("k", "cut level must be finite and > 0"));
        }
        if !(self.a_cap > 0.0 && self.a_cap.is_finite()) {
            return Err(invalid("a_cap", "cap must be finite and > 0"));
        }
        Ok(())
    }
}

/// Control variate coefficient used next to the rough one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Smoothing {
    /// Convolution with the truncated Gaussian kernel of width `nu_s`.
    Gaussian { nu_s: f64 },
    /// The rough coefficient itself; the smoothed solve is skipped and the
    /// rough solution reused.
    Identity,
}

pub(crate) enum Smoother {
    Gaussian(GaussianSmoother),
    Identity,
}

impl Smoother {
    pub(crate) fn new(s: Smoothing) -> Result<Self> {
        match s {
            Smoothing::Gaussian { nu_s } => Ok(Smoother::Gaussian(GaussianSmoother::new(&reference_grid(), nu_s)?)),
            Smoothing::Identity => Ok(Smoother::Identity),
        }
    }
}

/// Discretization of one level.
#[derive(Debug, Clone)]
struct LevelDisc {
    spec: LevelSpec,
    w1_grid: TensorGrid,
    w2_grid: TensorGrid,
    path_cells: usize,
    w1_factor: Option<Arc<EmbeddingFactor>>,
    w2_factor: Option<Arc<EmbeddingFactor>>,
    uniform_mesh: Arc<Mesh>,
}

/// The randomness of one Monte Carlo index at the resolution of `level`.
#[derive(Debug, Clone)]
pub struct SampleDraw {
    pub level: usize,
    pub sample: u64,
    pub w1: GridField,
    pub w2: GridField,
    /// Uncut paths.
    pub path_x: SubordinatorPath,
    pub path_y: SubordinatorPath,
}

/// Prolonged solutions of one level pair. Coarse parts are `None` on level 0.
#[derive(Debug, Clone, Default)]
pub(crate) struct PairSolutions {
    pub rough: Option<(Vec<f64>, Option<Vec<f64>>)>,
    pub smooth: Option<(Vec<f64>, Option<Vec<f64>>)>,
    pub dofs: u64,
}

/// Per-level grids, embedding factors and uniform meshes for a problem.
#[derive(Debug, Clone)]
pub struct Sampler {
    problem: Problem,
    transforms: Arc<TransformSpec>,
    levels: Vec<LevelDisc>,
    reference: TensorGrid,
}

impl Sampler {
    /// Builds the discretizations of every level of `plan`. The result
    /// serves any plan whose levels are a prefix of these (sample counts
    /// may differ).
    pub fn new(problem: &Problem, plan: &LevelPlan) -> Result<Self> {
        problem.validate()?;
        let eps_w: Vec<f64> = plan.levels.iter().map(|l| l.eps_w).collect();
        let eps_l: Vec<f64> = plan.levels.iter().map(|l| l.eps_l).collect();
        if eps_l.iter().any(|&e| e > 1.0) {
            return Err(invalid("eps_l", "subordinator grid step must not exceed the unit horizon"));
        }
        let c1 = nested_cells(1.0, &eps_w);
        let c2 = nested_cells(problem.k, &eps_w);
        let cl = nested_cells(1.0, &eps_l);
        let factor = |grid: &TensorGrid, p: &MaternParams, active: bool| -> Result<Option<Arc<EmbeddingFactor>>> {
            if active {
                Ok(Some(Arc::new(build_embedding(grid, p, &problem.embedding)?)))
            } else {
                Ok(None)
            }
        };
        let mut levels = Vec::with_capacity(plan.len());
        for (l, spec) in plan.levels.iter().enumerate() {
            let w1_grid = TensorGrid::square_cells(0.0, 1.0, c1[l])?;
            let w2_grid = TensorGrid::square_cells(0.0, problem.k, c2[l])?;
            levels.push(LevelDisc {
                spec: *spec,
                w1_grid,
                w2_grid,
                path_cells: cl[l],
                w1_factor: factor(&w1_grid, &problem.w1, !problem.transforms.phi1.is_zero())?,
                w2_factor: factor(&w2_grid, &problem.w2, !problem.transforms.phi2.is_zero())?,
                uniform_mesh: Arc::new(build_uniform_mesh(spec.h)?),
            });
        }
        Ok(Self {
            problem: problem.clone(),
            transforms: Arc::new(problem.transforms.clone()),
            levels,
            reference: reference_grid(),
        })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn reference(&self) -> &TensorGrid {
        &self.reference
    }

    pub fn w1_grid(&self, level: usize) -> &TensorGrid {
        &self.levels[level].w1_grid
    }

    pub fn w2_grid(&self, level: usize) -> &TensorGrid {
        &self.levels[level].w2_grid
    }

    pub fn path_cells(&self, level: usize) -> usize {
        self.levels[level].path_cells
    }

    /// Checks that `plan` uses this sampler's level parameters.
    pub fn check_plan(&self, plan: &LevelPlan) -> Result<()> {
        if plan.len() > self.levels.len() {
            return Err(invalid("plan", format!("sampler has {} levels, plan needs {}", self.levels.len(), plan.len())));
        }
        for (a, b) in plan.levels.iter().zip(&self.levels) {
            if a.h != b.spec.h || a.eps_w != b.spec.eps_w || a.eps_l != b.spec.eps_l {
                return Err(invalid("plan", "level parameters differ from the sampler's"));
            }
        }
        Ok(())
    }

    /// Draws sample `sample` at the resolution of `level` from the streams
    /// `(level, sample, component)` of `schedule`.
    pub fn draw(&self, schedule: &SeedSchedule, level: usize, sample: u64) -> Result<SampleDraw> {
        let d = self.level(level)?;
        let lv = level as u64;
        let field = |grid: &TensorGrid, f: &Option<Arc<EmbeddingFactor>>, tag: u64| match f {
            Some(f) => sample_grf(f, &mut schedule.stream(&[lv, sample, tag])),
            None => GridField::zeros(*grid),
        };
        let sub = &self.problem.subordinator;
        Ok(SampleDraw {
            level,
            sample,
            w1: field(&d.w1_grid, &d.w1_factor, component::W1),
            w2: field(&d.w2_grid, &d.w2_factor, component::W2),
            path_x: sub.sample(1.0, d.path_cells, &mut schedule.stream(&[lv, sample, component::PATH_X]))?,
            path_y: sub.sample(1.0, d.path_cells, &mut schedule.stream(&[lv, sample, component::PATH_Y]))?,
        })
    }

    fn level(&self, level: usize) -> Result<&LevelDisc> {
        self.levels
            .get(level)
            .ok_or_else(|| invalid("level", format!("sampler has no level {level}")))
    }

    /// The coefficient of `draw` seen at `level <= draw.level`: fields
    /// restricted to the level's grids, grid paths coarsened, exact paths
    /// reused, then cut at `K`.
    pub fn view(&self, draw: &SampleDraw, level: usize) -> Result<CoefficientSample> {
        if level > draw.level {
            return Err(invalid("level", "a draw can only be viewed at its own or a coarser level"));
        }
        let d = self.level(level)?;
        let restrict = |f: &GridField, g: &TensorGrid| if f.grid() == g { Ok(f.clone()) } else { f.restrict_to(g) };
        let path = |p: &SubordinatorPath| -> Result<SubordinatorPath> {
            let coarse = match p.kind() {
                PathKind::GridApprox => coarsen_path(p, d.path_cells)?,
                PathKind::ExactPoisson => p.clone(),
            };
            cut_path(&coarse, self.problem.k)
        };
        let c = CoefficientSample {
            w1: restrict(&draw.w1, &d.w1_grid)?,
            w2: restrict(&draw.w2, &d.w2_grid)?,
            path_x: path(&draw.path_x)?,
            path_y: path(&draw.path_y)?,
            k: self.problem.k,
            a_cap: self.problem.a_cap,
            transforms: Arc::clone(&self.transforms),
        };
        c.validate()?;
        Ok(c)
    }

    /// Mesh of `level` for a coefficient view.
    pub fn mesh(&self, view: &CoefficientSample, level: usize, mode: MeshMode) -> Result<Arc<Mesh>> {
        let d = self.level(level)?;
        match mode {
            MeshMode::Uniform => Ok(Arc::clone(&d.uniform_mesh)),
            MeshMode::Adapted => {
                let (jx, jy) = view.jump_lines();
                Ok(Arc::new(build_adapted_mesh(&jx, &jy, d.spec.h, self.problem.min_angle_deg)?))
            }
        }
    }

    fn solve_on(&self, mesh: &Arc<Mesh>, coeff: &dyn Fn(f64, f64) -> f64) -> Result<(Vec<f64>, u64)> {
        let sol = assemble_solve(mesh, coeff, &self.problem.boundary, self.problem.solver)?;
        let dofs = sol.stats.unknowns as u64;
        Ok((prolong(&sol, &self.reference)?.into_values(), dofs))
    }

    /// FE solution of the rough coefficient on `level`, prolonged to the
    /// reference grid.
    pub fn solve(&self, view: &CoefficientSample, level: usize, mode: MeshMode) -> Result<GridField> {
        let mesh = self.mesh(view, level, mode)?;
        let (v, _) = self.solve_on(&mesh, &|x, y| view.value(x, y))?;
        GridField::new(self.reference, v)
    }

    /// FE solution of the Gaussian-smoothed coefficient on `level`, on the
    /// same mesh as [`Sampler::solve`].
    pub fn solve_smoothed(
        &self,
        view: &CoefficientSample,
        level: usize,
        mode: MeshMode,
        smoother: &GaussianSmoother,
    ) -> Result<GridField> {
        if smoother.grid() != &self.reference {
            return Err(Error::GridMismatch("smoother must act on the reference grid".into()));
        }
        let mesh = self.mesh(view, level, mode)?;
        let sc = smoother.smooth_sample(view)?;
        let (v, _) = self.solve_on(&mesh, &|x, y| sc.value(x, y))?;
        GridField::new(self.reference, v)
    }

    fn solve_level(
        &self,
        draw: &SampleDraw,
        level: usize,
        mode: MeshMode,
        rough: bool,
        smoother: Option<&Smoother>,
    ) -> Result<Solves> {
        let view = self.view(draw, level)?;
        let mesh = self.mesh(&view, level, mode)?;
        let mut dofs = 0;
        let identity = matches!(smoother, Some(Smoother::Identity));
        let r = if rough || identity {
            let (v, n) = self.solve_on(&mesh, &|x, y| view.value(x, y))?;
            dofs += n;
            Some(v)
        } else {
            None
        };
        let s = match smoother {
            None => None,
            Some(Smoother::Identity) => r.clone(),
            Some(Smoother::Gaussian(g)) => {
                let sc = g.smooth_sample(&view)?;
                let (v, n) = self.solve_on(&mesh, &|x, y| sc.value(x, y))?;
                dofs += n;
                Some(v)
            }
        };
        Ok((if rough { r } else { None }, s, dofs))
    }

    /// Fine and coarse solutions of one draw at `draw.level`, on the same
    /// meshes for the rough and smoothed coefficients.
    pub(crate) fn pair_solutions(
        &self,
        draw: &SampleDraw,
        mode: MeshMode,
        rough: bool,
        smoother: Option<&Smoother>,
    ) -> Result<PairSolutions> {
        let l = draw.level;
        let (rf, sf, mut dofs) = self.solve_level(draw, l, mode, rough, smoother)?;
        let (rc, sc) = if l > 0 {
            let (rc, sc, n) = self.solve_level(draw, l - 1, mode, rough, smoother)?;
            dofs += n;
            (rc, sc)
        } else {
            (None, None)
        };
        Ok(PairSolutions {
            rough: rf.map(|f| (f, rc)),
            smooth: sf.map(|f| (f, sc)),
            dofs,
        })
    }

    /// Solutions of `draw.level` alone, without a coarse part.
    pub(crate) fn single_solutions(
        &self,
        draw: &SampleDraw,
        mode: MeshMode,
        rough: bool,
        smoother: Option<&Smoother>,
    ) -> Result<PairSolutions> {
        let (rf, sf, dofs) = self.solve_level(draw, draw.level, mode, rough, smoother)?;
        Ok(PairSolutions { rough: rf.map(|f| (f, None)), smooth: sf.map(|f| (f, None)), dofs })
    }

    /// The coupled pair `(u_ℓ, u_{ℓ-1})` of one draw; the coarse field is
    /// zero on level 0.
    pub fn sample_level_pair(&self, draw: &SampleDraw, mode: MeshMode) -> Result<(GridField, GridField)> {
        let p = self.pair_solutions(draw, mode, true, None)?;
        let (f, c) = p.rough.expect("rough solve requested");
        let fine = GridField::new(self.reference, f)?;
        let coarse = match c {
            Some(c) => GridField::new(self.reference, c)?,
            None => GridField::zeros(self.reference),
        };
        Ok((fine, coarse))
    }
}

pub(crate) fn with_sample_context(e: Error, level: usize, sample: u64, schedule: &SeedSchedule) -> Error {
    match e {
        Error::Sample { .. } => e,
        other => Error::Sample { level, sample, seed: schedule.master, source: Box::new(other) },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::{MeanField, Transform};
    use crate::estimators::plan::{equilibrate, Calibration, RateParams};
    use crate::fem::h1_distance;
    use crate::subordinator::{SimulationMode, SubordinatorFamily};

    pub(crate) fn toy_problem(mode: SimulationMode) -> Problem {
        Problem {
            transforms: TransformSpec {
                phi1: Transform::ScaledExp { c: 0.01 },
                phi2: Transform::ScaledAbs { c: 5.0 },
                mean: MeanField::Constant { value: 0.1 },
            },
            w1: MaternParams::new(1.5, 0.5, 1.5 * 1.5).unwrap(),
            w2: MaternParams::new(1.5, 0.5, 0.01).unwrap(),
            subordinator: SubordinatorSpec {
                family: SubordinatorFamily::Poisson { lambda: 1.0 },
                mode,
                rescale: 1.0,
            },
            k: 8.0,
            a_cap: 100.0,
            boundary: BoundarySpec::default(),
            min_angle_deg: DEFAULT_MIN_ANGLE_DEG,
            solver: SolverChoice::Auto,
            embedding: EmbeddingOptions::default(),
        }
    }

    fn toy_plan() -> LevelPlan {
        let rates = RateParams { kappa: 1.0, gamma: 1.0, c: 1.5, xi: 0.1 };
        equilibrate(&[0.3, 0.3 / 1.7], &rates, &Calibration::default()).unwrap()
    }

    #[test]
    fn grids_are_nested() {
        let s = Sampler::new(&toy_problem(SimulationMode::Grid), &toy_plan()).unwrap();
        assert!(s.w1_grid(0).nesting_factors(s.w1_grid(1)).is_some());
        assert!(s.w2_grid(0).nesting_factors(s.w2_grid(1)).is_some());
        assert_eq!(s.path_cells(1) % s.path_cells(0), 0);
        assert!(s.w2_grid(1).dx() <= 0.3 / 1.7 + 1e-15);
    }

    #[test]
    fn views_derive_from_one_draw() {
        let s = Sampler::new(&toy_problem(SimulationMode::Grid), &toy_plan()).unwrap();
        let sched = SeedSchedule::new(3);
        let d = s.draw(&sched, 1, 5).unwrap();
        let again = s.draw(&sched, 1, 5).unwrap();
        assert_eq!(d.w1, again.w1);
        assert_eq!(d.path_x, again.path_x);
        let fine = s.view(&d, 1).unwrap();
        let coarse = s.view(&d, 0).unwrap();
        let g0 = s.w1_grid(0);
        for j in 0..g0.ny {
            for i in 0..g0.nx {
                assert_eq!(coarse.w1.at(i, j), fine.w1.eval(g0.x(i), g0.y(j)).unwrap());
            }
        }
        let h0 = 1.0 / s.path_cells(0) as f64;
        for k in 0..s.path_cells(0) {
            let x = k as f64 * h0;
            assert_eq!(coarse.path_x.eval(x).unwrap(), fine.path_x.eval(x).unwrap());
        }
        assert!(s.view(&s.draw(&sched, 0, 5).unwrap(), 1).is_err());
    }

    #[test]
    fn exact_paths_are_shared_across_levels() {
        let s = Sampler::new(&toy_problem(SimulationMode::Exact), &toy_plan()).unwrap();
        let d = s.draw(&SeedSchedule::new(9), 1, 0).unwrap();
        assert_eq!(s.view(&d, 0).unwrap().path_x, s.view(&d, 1).unwrap().path_x);
    }

    #[test]
    fn level_zero_coarse_part_is_zero() {
        let s = Sampler::new(&toy_problem(SimulationMode::Exact), &toy_plan()).unwrap();
        let d = s.draw(&SeedSchedule::new(1), 0, 0).unwrap();
        let (fine, coarse) = s.sample_level_pair(&d, MeshMode::Adapted).unwrap();
        assert!(coarse.values().iter().all(|&v| v == 0.0));
        assert!(fine.max() > 0.0);
    }

    #[test]
    fn deterministic_pair_is_the_deterministic_solutions() {
        let mut p = toy_problem(SimulationMode::Exact);
        p.transforms.phi1 = Transform::Zero;
        p.transforms.phi2 = Transform::Zero;
        let plan = toy_plan();
        let s = Sampler::new(&p, &plan).unwrap();
        let d = s.draw(&SeedSchedule::new(4), 1, 2).unwrap();
        let (fine, coarse) = s.sample_level_pair(&d, MeshMode::Uniform).unwrap();
        for (l, got) in [(1, &fine), (0, &coarse)] {
            let mesh = Arc::new(build_uniform_mesh(plan.levels[l].h).unwrap());
            let sol = assemble_solve(&mesh, &|_, _| 0.1, &p.boundary, SolverChoice::Auto).unwrap();
            let want = prolong(&sol, &reference_grid()).unwrap();
            assert_eq!(h1_distance(got, &want).unwrap(), 0.0);
        }
    }

    #[test]
    fn failures_carry_the_sample() {
        let e = with_sample_context(Error::NotPositiveDefinite, 2, 17, &SeedSchedule::new(5));
        assert!(matches!(e, Error::Sample { level: 2, sample: 17, seed: 5, .. }));
        assert!(e.to_string().contains("sample 17"));
    }
}
