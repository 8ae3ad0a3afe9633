use std::path::PathBuf;

use anyhow::bail;
use clap::{Args, Parser, Subcommand, ValueEnum};
use levy_mlmc_core::estimators::MeshMode;

use crate::config::{self, EstimatorChoice, ExperimentConfig, PresetName};
use crate::presets;

#[derive(Debug, Parser)]
#[command(name = "levy-mlmc", version, about = "MLMC convergence studies for elliptic problems with jump coefficients")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a study and write its outputs.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Print the expanded plan and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Print the expanded plan as JSON.
    DryRun {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Turn an rmse.csv into log-log and time-to-error tables.
    EmitPlot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeshArg {
    Adapted,
    Uniform,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Mlmc,
    MlmcCv,
    Both,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    #[arg(long, value_enum)]
    pub preset: Option<PresetName>,
    /// TOML file overriding preset values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Multiplies every sample count.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Number of levels `L` to study.
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub reference_level: Option<usize>,
    /// Estimator runs per level.
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long, value_enum)]
    pub mesh: Option<MeshArg>,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorArg>,
}

impl ConfigArgs {
    /// Preset and file layered, then flags applied.
    pub fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match (&self.config, self.preset) {
            (Some(path), p) => config::load(path, p)?,
            (None, Some(PresetName::Custom)) => bail!("--preset custom needs --config"),
            (None, Some(p)) => presets::preset(p).expect("named preset"),
            (None, None) => bail!("one of --preset or --config is required"),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.scale {
            cfg.scale = s;
        }
        if let Some(l) = self.levels {
            cfg.levels.count = l;
        }
        if let Some(r) = self.reference_level {
            cfg.reference_level = r;
        }
        if let Some(n) = self.runs {
            cfg.n_runs = n;
        }
        if let Some(m) = self.mesh {
            cfg.meshes = match m {
                MeshArg::Adapted => vec![MeshMode::Adapted],
                MeshArg::Uniform => vec![MeshMode::Uniform],
                MeshArg::Both => vec![MeshMode::Adapted, MeshMode::Uniform],
            };
        }
        if let Some(e) = self.estimator {
            cfg.estimators = match e {
                EstimatorArg::Mlmc => vec![EstimatorChoice::Mlmc],
                EstimatorArg::MlmcCv => vec![EstimatorChoice::MlmcCv],
                EstimatorArg::Both => vec![EstimatorChoice::Mlmc, EstimatorChoice::MlmcCv],
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_the_preset() {
        let cli = Cli::try_parse_from([
            "levy-mlmc", "dry-run", "--preset", "poisson1", "--seed", "3", "--levels", "2", "--mesh", "uniform",
        ])
        .unwrap();
        let Command::DryRun { config } = cli.command else { panic!() };
        let cfg = config.resolve().unwrap();
        assert_eq!((cfg.seed, cfg.levels.count), (3, 2));
        assert_eq!(cfg.meshes, vec![MeshMode::Uniform]);
    }

    #[test]
    fn source_is_required() {
        assert!(ConfigArgs::default().resolve().is_err());
        let a = ConfigArgs { preset: Some(PresetName::Custom), ..Default::default() };
        assert!(a.resolve().is_err());
    }
}
