use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::GridConfig;
use crate::knowledge::KwikParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Single fidelity: the high-fidelity simulator only.
    Sf,
    /// Low- and high-fidelity simulators.
    Mf,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Sf, Mode::Mf];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Sf => "sf",
            Mode::Mf => "mf",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sf" => Ok(Mode::Sf),
            "mf" => Ok(Mode::Mf),
            other => Err(Error::Config(format!("unknown mode {other:?} (expected sf or mf)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KwikConfig {
    pub epsilon: f64,
    pub delta: f64,
}

impl Default for KwikConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.25,
            delta: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwitchingConfig {
    pub m_known: u32,
    pub m_unknown: u32,
}

impl Default for SwitchingConfig {
    fn default() -> Self {
        Self {
            m_known: 10,
            m_unknown: 5,
        }
    }
}

/// Everything a Monte Carlo experiment needs. Missing keys take the defaults
/// below; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Mode used by `run`; `sweep` always runs both.
    pub mode: Mode,
    pub trials: usize,
    pub iterations: usize,
    pub r_inc_values: Vec<f64>,
    pub kwik: KwikConfig,
    pub switching: SwitchingConfig,
    pub beta: f64,
    pub t_max: usize,
    pub discount: f64,
    /// Puddle layout and rewards; both fidelities are derived from it.
    pub grid: GridConfig,
    pub base_seed: u64,
    pub out_dir: PathBuf,
    pub plausibility_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Mf,
            trials: 25,
            iterations: 1000,
            r_inc_values: vec![0.0, 0.25, 1.0, 2.0, 5.0],
            kwik: KwikConfig::default(),
            switching: SwitchingConfig::default(),
            beta: 1250.0,
            t_max: 20,
            discount: 0.95,
            grid: GridConfig::default(),
            base_seed: 0,
            out_dir: PathBuf::from("results"),
            plausibility_samples: 1000,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Config(reason) => Error::Config(format!("{}: {reason}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.r_inc_values.is_empty() {
            return Err(Error::Config("r_inc_values must not be empty".into()));
        }
        if let Some(r) = self.r_inc_values.iter().find(|r| !(0.0..).contains(*r) || !r.is_finite()) {
            return Err(Error::Config(format!("r_inc value {r} must be non-negative")));
        }
        if !(0.0..).contains(&self.beta) {
            return Err(Error::Config(format!("beta {} must be non-negative", self.beta)));
        }
        if self.t_max < 1 {
            return Err(Error::Config("t_max must be at least 1".into()));
        }
        if self.switching.m_known < 1 || self.switching.m_unknown < 1 {
            return Err(Error::Config("m_known and m_unknown must be at least 1".into()));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Config(format!("discount {} outside (0, 1)", self.discount)));
        }
        if self.grid.discount != self.discount {
            return Err(Error::Config(format!(
                "grid.discount {} disagrees with discount {}",
                self.grid.discount, self.discount
            )));
        }
        self.kwik_params()?;
        self.grid.validate()
    }

    pub fn kwik_params(&self) -> Result<KwikParams> {
        KwikParams::new(self.kwik.epsilon, self.kwik.delta).map_err(|e| Error::Config(e.to_string()))
    }
}
