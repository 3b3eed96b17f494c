use std::path::{Path, PathBuf};

use loopsoup::estimators::ExperimentSpec;
use loopsoup::sampler::{VertexOrder, DEFAULT_LENGTH_BUDGET};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out: PathBuf,
    /// 0 means: `LOOPSOUP_WORKERS`, else all cores.
    pub workers: usize,
    pub seed: u64,
    /// Total loop sites a single soup may hold.
    pub length_budget: usize,
    pub sample: SampleConfig,
    pub analyze: AnalyzeConfig,
    pub exact: ExactConfig,
    pub green: GreenConfig,
    pub experiment: ExperimentSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: PathBuf::from("loopsoup-out"),
            workers: 0,
            seed: 1,
            length_budget: DEFAULT_LENGTH_BUDGET,
            sample: SampleConfig::default(),
            analyze: AnalyzeConfig::default(),
            exact: ExactConfig::default(),
            green: GreenConfig::default(),
            experiment: ExperimentSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub dim: usize,
    pub radius: u32,
    pub alpha: f64,
    pub kappa: f64,
    pub soups: u64,
    pub order: VertexOrder,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { dim: 3, radius: 4, alpha: 1.0, kappa: 0.0, soups: 1, order: VertexOrder::Lexicographic }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeConfig {
    /// Soup stems (`<stem>.loops` + `<stem>.json`); empty means every soup in `out`.
    pub inputs: Vec<PathBuf>,
    /// Also count `U(0,K)` for `K = 1..=chain`; 0 skips it.
    pub chain: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExactConfig {
    pub dim: usize,
    pub radius: u32,
    pub kappa: f64,
    pub alpha: f64,
    /// Site sets for the determinant quantities.
    pub sets: Vec<Vec<Vec<i32>>>,
    /// Dimensions for the first-shell expectation on `Z^d`.
    pub first_shell_dims: Vec<usize>,
    pub first_shell_radius: u32,
}

impl Default for ExactConfig {
    fn default() -> Self {
        ExactConfig {
            dim: 3,
            radius: 4,
            kappa: 0.0,
            alpha: 1.0,
            sets: vec![vec![vec![0, 0, 0]], vec![vec![0, 0, 0], vec![1, 0, 0]]],
            first_shell_dims: vec![5, 6, 8],
            first_shell_radius: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GreenConfig {
    pub dim: usize,
    /// Box radius; `free = true` uses `Z^d` instead.
    pub radius: u32,
    pub free: bool,
    pub kappa: f64,
    pub points: Vec<Vec<i32>>,
}

impl Default for GreenConfig {
    fn default() -> Self {
        GreenConfig {
            dim: 3,
            radius: 8,
            free: true,
            kappa: 0.0,
            points: vec![vec![0, 0, 0], vec![1, 0, 0], vec![2, 0, 0], vec![1, 1, 1], vec![4, 0, 0]],
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
