//! Run configuration shared by all subcommands. Every field is optional
//! except the format version; command-line flags override file values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cavity_tomography::cavity::{CavityParams, Detuning, Parking};
use cavity_tomography::covariance::{CovarianceParams, Param};
use cavity_tomography::fixtures;
use cavity_tomography::forward_model::{
    uniform_grid, SweepMode, DEFAULT_GRID_HALF_WIDTH, DEFAULT_GRID_POINTS,
};
use cavity_tomography::synthesis::DetectionParams;
use cavity_tomography::tomography::Weighting;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub signal_cavity: Option<CavityParams>,
    pub idler_cavity: Option<CavityParams>,
    /// Ground-truth state for `simulate` and `reproduce`, inline.
    pub state: Option<CovarianceParams>,
    /// Same, from a JSON file; relative to the config file.
    pub state_path: Option<PathBuf>,
    pub omega_hz: Option<f64>,
    pub grid: Option<GridSpec>,
    pub configurations: Option<Vec<SweepMode>>,
    #[serde(default)]
    pub parking: Parking,
    #[serde(default)]
    pub apply_mode_matching: bool,
    pub detection: Option<DetectionParams>,
    pub seed: Option<u64>,
    pub efficiency: Option<f64>,
    /// Pinned parameters by name, e.g. `mu = 10.1`.
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default)]
    pub fit_cavities: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            signal_cavity: None,
            idler_cavity: None,
            state: None,
            state_path: None,
            omega_hz: None,
            grid: None,
            configurations: None,
            parking: Parking::default(),
            apply_mode_matching: false,
            detection: None,
            seed: None,
            efficiency: None,
            fixed: BTreeMap::new(),
            weighting: Weighting::default(),
            fit_cavities: false,
        }
    }
}

impl RunConfig {
    /// Reads TOML (by `.toml` extension) or JSON and validates it.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: RunConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        if let Some(rel) = &config.state_path {
            let base = path.parent().unwrap_or(Path::new("."));
            config.state_path = Some(base.join(rel));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if let Some(omega) = self.omega_hz {
            if !(omega > 0.0 && omega.is_finite()) {
                return Err(CliError::Config(format!("omega_hz must be positive, got {omega}")));
            }
        }
        if let Some(path) = &self.state_path {
            if !path.is_file() {
                return Err(CliError::Config(format!("state file {} does not exist", path.display())));
            }
        }
        if self.state.is_some() && self.state_path.is_some() {
            return Err(CliError::Config("give either `state` or `state_path`, not both".into()));
        }
        for c in [&self.signal_cavity, &self.idler_cavity].into_iter().flatten() {
            c.validate()?;
        }
        self.pinned()?;
        Ok(())
    }

    pub fn signal_cavity(&self) -> CavityParams {
        self.signal_cavity.unwrap_or_else(fixtures::signal_cavity)
    }

    pub fn idler_cavity(&self) -> CavityParams {
        self.idler_cavity.unwrap_or_else(fixtures::idler_cavity)
    }

    pub fn state(&self) -> CliResult<CovarianceParams> {
        if let Some(path) = &self.state_path {
            return read_params(path);
        }
        Ok(self.state.unwrap_or_else(fixtures::reference_state))
    }

    pub fn omega_hz(&self, flag: Option<f64>) -> CliResult<f64> {
        let omega = flag.or(self.omega_hz).unwrap_or(fixtures::ANALYSIS_FREQUENCY_HZ);
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(CliError::Config(format!("analysis frequency must be positive, got {omega}")));
        }
        Ok(omega)
    }

    pub fn grid(&self) -> CliResult<Vec<Detuning>> {
        let g = self.grid.unwrap_or(GridSpec {
            lo: -DEFAULT_GRID_HALF_WIDTH,
            hi: DEFAULT_GRID_HALF_WIDTH,
            points: DEFAULT_GRID_POINTS,
        });
        Ok(uniform_grid(g.lo, g.hi, g.points)?)
    }

    pub fn configurations(&self) -> Vec<SweepMode> {
        self.configurations.clone().unwrap_or_else(|| SweepMode::ALL.to_vec())
    }

    pub fn pinned(&self) -> CliResult<BTreeMap<Param, f64>> {
        self.fixed
            .iter()
            .map(|(name, value)| {
                let p: Param = name.parse().map_err(|e: cavity_tomography::Error| CliError::Config(e.to_string()))?;
                Ok((p, *value))
            })
            .collect()
    }
}

/// Covariance parameters from a JSON file holding either the bare
/// parameters or a fit result.
pub fn read_params(path: &Path) -> CliResult<CovarianceParams> {
    Ok(read_params_with_std(path)?.0)
}

pub fn read_params_with_std(path: &Path) -> CliResult<(CovarianceParams, Option<CovarianceParams>)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::io(path, e))?;
    let parse = |v: serde_json::Value| -> CliResult<CovarianceParams> {
        serde_json::from_value(v).map_err(|e| CliError::io(path, format!("not a covariance parameter set: {e}")))
    };
    match value {
        serde_json::Value::Object(mut map) if map.contains_key("params") => {
            let params = parse(map.remove("params").unwrap_or_default())?;
            let std = map.remove("std_devs").map(parse).transpose()?;
            Ok((params, std))
        }
        other => Ok((parse(other)?, None)),
    }
}
