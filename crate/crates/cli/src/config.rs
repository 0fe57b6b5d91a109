//! Experiment configuration read from TOML.

use std::path::{Path, PathBuf};

use gpcn_core::sim::{NormalizationMode, ParamGrid, SimConfig, StrengthParam};
use gpcn_core::train::ScheduleSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Bin,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Desk,
    Full,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub threads: Option<usize>,
    pub generate: GenerateSection,
    pub search: SearchSection,
    pub limit: LimitSection,
    pub train: TrainSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub param: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    /// Preset for the protocol and the default grid.
    pub scale: Scale,
    /// Overrides on top of the preset's simulator settings.
    pub sim: Option<toml::Table>,
    /// Replaces the preset grid when given.
    pub grid: Option<Vec<GridAxis>>,
    /// Base strengths for parameters not on the grid.
    pub base: Option<toml::Table>,
    /// Failed runs tolerated before the command reports failure.
    pub max_failed: usize,
}

impl GenerateSection {
    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        let preset = match self.scale {
            Scale::Desk => SimConfig::desk(),
            Scale::Full => SimConfig::full(),
        };
        let mut table =
            toml::Table::try_from(&preset).map_err(|e| CliError::Usage(e.to_string()))?;
        if let Some(over) = &self.sim {
            merge(&mut table, over);
        }
        let cfg: SimConfig = table.try_into().map_err(|e: toml::de::Error| {
            CliError::Usage(format!("generate.sim: {}", e.message()))
        })?;
        cfg.validate()
            .map_err(|e| CliError::Usage(format!("generate.sim: {e}")))?;
        Ok(cfg)
    }

    pub fn param_grid(&self) -> Result<ParamGrid, CliError> {
        let mut grid = match self.scale {
            Scale::Desk => ParamGrid::desk(),
            Scale::Full => ParamGrid::full(),
        };
        if let Some(base) = &self.base {
            let mut table =
                toml::Table::try_from(grid.base).map_err(|e| CliError::Usage(e.to_string()))?;
            merge(&mut table, base);
            grid.base = table.try_into().map_err(|e: toml::de::Error| {
                CliError::Usage(format!("generate.base: {}", e.message()))
            })?;
        }
        if let Some(axes) = &self.grid {
            grid.axes = axes
                .iter()
                .map(|a| {
                    let p = StrengthParam::from_name(&a.param).ok_or_else(|| {
                        let valid: Vec<&str> =
                            StrengthParam::ALL.iter().map(|p| p.name()).collect();
                        CliError::Usage(format!(
                            "generate.grid: unknown parameter `{}` (valid: {})",
                            a.param,
                            valid.join(", ")
                        ))
                    })?;
                    Ok((p, a.values.clone()))
                })
                .collect::<Result<_, CliError>>()?;
        }
        if grid.is_empty() {
            return Err(CliError::Usage("generate.grid is empty".into()));
        }
        for (p, values) in &grid.axes {
            if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(CliError::Usage(format!(
                    "generate.grid: {} value {v} must be positive",
                    p.name()
                )));
            }
        }
        if let Err((p, v)) = grid.base.validate() {
            return Err(CliError::Usage(format!(
                "generate.base.{} must be positive, got {v}",
                p.name()
            )));
        }
        Ok(grid)
    }
}

fn merge(into: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (into.get_mut(k), v) {
            (Some(toml::Value::Table(a)), toml::Value::Table(b)) => merge(a, b),
            _ => {
                into.insert(k.clone(), v.clone());
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeParams {
    pub rings: usize,
    pub k: usize,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub fine: TubeParams,
    pub coarse_rings: usize,
    pub k: Vec<usize>,
    pub p: Vec<usize>,
    pub seam_weights: Vec<f64>,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            fine: TubeParams {
                rings: 12,
                k: 13,
                offset: 3,
            },
            coarse_rings: 6,
            k: vec![3, 5, 13],
            p: vec![0, 1],
            seam_weights: vec![1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitSection {
    pub n: Vec<usize>,
    pub families: Vec<gpcn_core::gdd::LimitFamily>,
}

impl Default for LimitSection {
    fn default() -> Self {
        use gpcn_core::gdd::LimitFamily;
        Self {
            n: (4..=10).collect(),
            families: vec![LimitFamily::Tube, LimitFamily::Grid],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Directory written by `generate`; generated on the fly when absent.
    pub dataset: Option<PathBuf>,
    pub models: Vec<String>,
    pub seeds: Vec<u64>,
    pub split_seed: u64,
    pub normalization: NormalizationMode,
    pub schedule: ScheduleSpec,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            dataset: None,
            models: vec!["a_gpcn3".into()],
            seeds: vec![0],
            split_seed: 0,
            normalization: NormalizationMode::default(),
            schedule: ScheduleSpec::default(),
        }
    }
}

/// Parsed config plus its source text, echoed into manifests.
#[derive(Clone, Debug, Default)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub text: String,
    pub path: Option<PathBuf>,
}

impl LoadedConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let config =
            Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Ok(Self {
            config,
            text,
            path: Some(path.to_path_buf()),
        })
    }

    pub fn parse(text: &str) -> Result<ExperimentConfig, String> {
        toml::from_str(text).map_err(|e: toml::de::Error| e.to_string().trim_end().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let c = LoadedConfig::parse("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.generate.sim_config().unwrap(), SimConfig::desk());
        assert_eq!(c.generate.param_grid().unwrap().len(), 9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = LoadedConfig::parse("[generate]\nscael = \"desk\"\n").unwrap_err();
        assert!(err.contains("scael"), "{err}");
        let c = LoadedConfig::parse("[generate.sim]\nramp = 3\n").unwrap();
        let err = c.generate.sim_config().unwrap_err().to_string();
        assert!(err.contains("ramp"), "{err}");
    }

    #[test]
    fn overrides_merge_into_presets() {
        let c = LoadedConfig::parse(
            "[generate]\nscale = \"full\"\n[generate.sim]\nhold_steps = 128000\n[generate.sim.strengths]\nlat_angle = 1.3\n",
        )
        .unwrap();
        let s = c.generate.sim_config().unwrap();
        assert_eq!(s.hold_steps, 128_000);
        assert_eq!(s.ramp_steps, 128_000);
        assert_eq!(s.strengths.lat_angle, 1.3);
        assert_eq!(s.strengths.long_angle, 1.0);
    }

    #[test]
    fn bad_strength_names_the_key() {
        let c = LoadedConfig::parse("[generate.sim.strengths]\nquad_angles = -0.5\n").unwrap();
        let err = c.generate.sim_config().unwrap_err().to_string();
        assert!(err.contains("quad_angles"), "{err}");
        let c =
            LoadedConfig::parse("[[generate.grid]]\nparam = \"long_assoc\"\nvalues = [1.0, 0.0]\n")
                .unwrap();
        let err = c.generate.param_grid().unwrap_err().to_string();
        assert!(err.contains("long_assoc"), "{err}");
    }
}
