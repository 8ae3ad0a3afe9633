//! The experiment configurations of the convergence studies.

use levy_mlmc_core::coefficient::{MeanField, Transform, TransformSpec};
use levy_mlmc_core::estimators::{Calibration, MeshMode, Problem, RateParams};
use levy_mlmc_core::fem::{BoundarySpec, SolverChoice, DEFAULT_MIN_ANGLE_DEG};
use levy_mlmc_core::grf::{EmbeddingOptions, MaternParams};
use levy_mlmc_core::subordinator::{SimulationMode, SubordinatorFamily, SubordinatorSpec};

use crate::config::{EstimatorChoice, ExperimentConfig, LevelSchedule, PresetName, SampleRule};

pub const ALL: [PresetName; 5] = [
    PresetName::Poisson1,
    PresetName::Poisson5Smooth,
    PresetName::Poisson5Rough,
    PresetName::GammaCv1,
    PresetName::GammaCv2,
];

pub const DEFAULT_SEED: u64 = 20_240_601;

fn matern(r: f64, sigma: f64) -> MaternParams {
    MaternParams { nu: 1.5, r, sigma2: sigma * sigma }
}

fn transforms(c1: f64, c2: f64) -> TransformSpec {
    TransformSpec {
        phi1: Transform::ScaledExp { c: c1 },
        phi2: Transform::ScaledAbs { c: c2 },
        mean: MeanField::Constant { value: 0.1 },
    }
}

fn problem(t: TransformSpec, w1: MaternParams, w2: MaternParams, sub: SubordinatorSpec, k: f64) -> Problem {
    Problem {
        transforms: t,
        w1,
        w2,
        subordinator: sub,
        k,
        a_cap: 100.0,
        boundary: BoundarySpec::default(),
        min_angle_deg: DEFAULT_MIN_ANGLE_DEG,
        solver: SolverChoice::Auto,
        embedding: EmbeddingOptions::default(),
    }
}

fn poisson(lambda: f64, rescale: f64) -> SubordinatorSpec {
    SubordinatorSpec {
        family: SubordinatorFamily::Poisson { lambda },
        mode: SimulationMode::Exact,
        rescale,
    }
}

fn common(preset: PresetName, h1: f64, problem: Problem) -> ExperimentConfig {
    ExperimentConfig {
        preset,
        seed: DEFAULT_SEED,
        scale: 1.0,
        n_runs: 10,
        levels: LevelSchedule { h1, ratio: 1.7, count: 5 },
        reference_level: 7,
        reference_factor: 4.0,
        meshes: vec![MeshMode::Adapted, MeshMode::Uniform],
        estimators: vec![EstimatorChoice::Mlmc],
        samples: SampleRule::Equilibrated,
        nu_s: None,
        rates: RateParams { kappa: 1.0, gamma: 1.0, c: 1.5, xi: 0.1 },
        calibration: Calibration::default(),
        problem,
    }
}

/// The expanded configuration of a named preset; `None` for `custom`.
pub fn preset(name: PresetName) -> Option<ExperimentConfig> {
    let gamma = SubordinatorSpec {
        family: SubordinatorFamily::Gamma { a: 4.0, b: 10.0 },
        mode: SimulationMode::Grid,
        rescale: 1.0,
    };
    let cv = |mut c: ExperimentConfig| {
        c.meshes = vec![MeshMode::Uniform];
        c.estimators = vec![EstimatorChoice::Mlmc, EstimatorChoice::MlmcCv];
        c.samples = SampleRule::Optimal { pilot: 20 };
        c.nu_s = Some(0.01);
        c
    };
    let cfg = match name {
        PresetName::Poisson1 => common(
            name,
            0.3,
            problem(transforms(0.01, 5.0), matern(0.5, 1.5), matern(0.5, 0.1), poisson(1.0, 1.0), 8.0),
        ),
        // K = 15 on the unscaled paths is K = 1 after rescaling by 1/15
        PresetName::Poisson5Smooth => common(
            name,
            0.2,
            problem(transforms(0.01, 5.0), matern(0.5, 0.5), matern(0.5, 0.3), poisson(5.0, 1.0 / 15.0), 1.0),
        ),
        PresetName::Poisson5Rough => common(
            name,
            0.2,
            problem(transforms(0.01, 5.0), matern(0.5, 0.5), matern(0.1, 0.3), poisson(5.0, 1.0 / 15.0), 1.0),
        ),
        PresetName::GammaCv1 => cv(common(
            name,
            0.3,
            problem(transforms(0.01, 5.0), matern(0.5, 1.5), matern(0.05, 0.3), gamma, 2.0),
        )),
        PresetName::GammaCv2 => cv(common(
            name,
            0.3,
            problem(transforms(0.2, 3.0), matern(0.5, 1.5), matern(0.2, 0.5), gamma, 2.0),
        )),
        PresetName::Custom => return None,
    };
    Some(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for p in ALL {
            preset(p).unwrap().validate().unwrap();
        }
        assert!(preset(PresetName::Custom).is_none());
    }

    #[test]
    fn rough_differs_from_smooth_only_in_w2_range() {
        let s = preset(PresetName::Poisson5Smooth).unwrap();
        let mut r = preset(PresetName::Poisson5Rough).unwrap();
        assert_eq!(r.problem.w2.r, 0.1);
        r.problem.w2.r = 0.5;
        r.preset = s.preset;
        assert_eq!(r, s);
    }

    #[test]
    fn gamma_variants() {
        let a = preset(PresetName::GammaCv1).unwrap();
        let b = preset(PresetName::GammaCv2).unwrap();
        assert_eq!(a.problem.k, 2.0);
        assert_eq!(b.problem.transforms.phi1, Transform::ScaledExp { c: 0.2 });
        assert_eq!(b.problem.transforms.phi2, Transform::ScaledAbs { c: 3.0 });
        assert_eq!((b.problem.w2.sigma2, b.problem.w2.r), (0.25, 0.2));
        assert_eq!(b.problem.w1, a.problem.w1);
    }
}
