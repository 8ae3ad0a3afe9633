use std::fmt;
use std::path::Path;

use anyhow::{bail, Context};
use levy_mlmc_core::estimators::{geometric_mesh_sizes, Calibration, MeshMode, Problem, RateParams};
use serde::{Deserialize, Serialize};

use crate::presets;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PresetName {
    Poisson1,
    Poisson5Smooth,
    Poisson5Rough,
    #[serde(rename = "gamma-cv-1")]
    #[value(name = "gamma-cv-1")]
    GammaCv1,
    #[serde(rename = "gamma-cv-2")]
    #[value(name = "gamma-cv-2")]
    GammaCv2,
    Custom,
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PresetName::Poisson1 => "poisson1",
            PresetName::Poisson5Smooth => "poisson5-smooth",
            PresetName::Poisson5Rough => "poisson5-rough",
            PresetName::GammaCv1 => "gamma-cv-1",
            PresetName::GammaCv2 => "gamma-cv-2",
            PresetName::Custom => "custom",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorChoice {
    Mlmc,
    MlmcCv,
}

impl fmt::Display for EstimatorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorChoice::Mlmc => "mlmc",
            EstimatorChoice::MlmcCv => "mlmc-cv",
        })
    }
}

/// Mesh sizes `h_ℓ = h1 · ratio^{-(ℓ-1)}` for `ℓ = 1..=count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSchedule {
    pub h1: f64,
    pub ratio: f64,
    pub count: usize,
}

impl LevelSchedule {
    pub fn mesh_sizes(&self, levels: usize) -> Vec<f64> {
        geometric_mesh_sizes(self.h1, self.ratio, levels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SampleRule {
    /// Equilibrated sample numbers from the rate parameters.
    Equilibrated,
    /// Variance-optimal numbers from `pilot` samples per level.
    Optimal { pilot: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: PresetName,
    pub seed: u64,
    /// Multiplies every sample count (rounded up, at least 1).
    pub scale: f64,
    /// Independent estimator runs per finest level.
    pub n_runs: usize,
    pub levels: LevelSchedule,
    /// Level of the single-level reference solution.
    pub reference_level: usize,
    /// Reference samples `⌈scale · reference_factor · h_R^{-2}⌉`.
    pub reference_factor: f64,
    pub meshes: Vec<MeshMode>,
    pub estimators: Vec<EstimatorChoice>,
    pub samples: SampleRule,
    /// Smoothing width of the control variate; required for `mlmc-cv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_s: Option<f64>,
    pub rates: RateParams,
    pub calibration: Calibration,
    pub problem: Problem,
}

impl ExperimentConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        self.problem.validate().context("problem")?;
        self.rates.validate().context("rates")?;
        let l = &self.levels;
        if !(l.h1 > 0.0 && l.h1 < 1.0 && l.ratio > 1.0) || l.count == 0 {
            bail!("levels: need 0 < h1 < 1, ratio > 1 and count >= 1");
        }
        if self.reference_level < l.count {
            bail!("reference_level ({}) must be >= levels.count ({})", self.reference_level, l.count);
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            bail!("scale must be finite and > 0");
        }
        if !(self.reference_factor > 0.0 && self.reference_factor.is_finite()) {
            bail!("reference_factor must be finite and > 0");
        }
        if self.n_runs < 2 {
            bail!("n_runs must be >= 2");
        }
        if self.meshes.is_empty() || self.estimators.is_empty() {
            bail!("meshes and estimators must be nonempty");
        }
        if self.estimators.contains(&EstimatorChoice::MlmcCv) {
            match self.nu_s {
                Some(v) if v > 0.0 && v.is_finite() => {}
                _ => bail!("nu_s must be set to a positive value for mlmc-cv"),
            }
        }
        if let SampleRule::Optimal { pilot } = self.samples {
            if pilot < 2 {
                bail!("samples.pilot must be >= 2");
            }
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn deserialize(table: toml::Table) -> anyhow::Result<ExperimentConfig> {
    serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        anyhow::anyhow!("invalid config at `{path}`: {}", e.into_inner())
    })
}

/// Config from TOML text. A named `preset` supplies every value and the
/// text overrides any subset of them; `custom` starts from nothing.
pub fn from_toml_str(text: &str, preset_flag: Option<PresetName>) -> anyhow::Result<ExperimentConfig> {
    let user: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
    let named = match user.get("preset") {
        Some(v) => Some(
            serde_path_to_error::deserialize::<_, PresetName>(v.clone())
                .map_err(|e| anyhow::anyhow!("invalid config at `preset`: {}", e.into_inner()))?,
        ),
        None => None,
    };
    let preset = preset_flag.or(named).unwrap_or(PresetName::Custom);
    let mut base = match presets::preset(preset) {
        Some(cfg) => toml::Table::try_from(&cfg).context("preset serialization")?,
        None => toml::Table::new(),
    };
    merge(&mut base, user);
    base.insert("preset".into(), toml::Value::String(preset.to_string()));
    deserialize(base)
}

pub fn load(path: &Path, preset_flag: Option<PresetName>) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    from_toml_str(&text, preset_flag)
}
