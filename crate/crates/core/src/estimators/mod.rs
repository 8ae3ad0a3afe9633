//! Single-level, multilevel and control variate Monte Carlo estimators of
//! the mean solution, their level plans and RMSE studies.

mod mlmc;
mod plan;
mod sampling;
mod study;

pub use mlmc::{
    cv_pilot, mlmc, mlmc_cv, pilot_cv_variances, pilot_variances, slmc, CvInfo, CvMean, CvMeanInfo, CvPilotLevel,
    EstimatorKind, EstimatorResult, LevelReport, CV_MEAN_STREAM,
};
pub use plan::{
    equilibrate, equilibrated_eps_l, equilibrated_eps_w, equilibrated_sample_count, geometric_mesh_sizes, nested_cells,
    optimal_samples, Calibration, LevelPlan, LevelSpec, MeshMode, OptimalSamples, RateParams,
};
pub use sampling::{Problem, SampleDraw, Sampler, Smoothing};
pub use study::{fit_rate, rmse, rmse_study, RmseRow, RmseTable, RunOutput};
