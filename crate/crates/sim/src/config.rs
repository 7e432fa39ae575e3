use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vpp_core::agent::DdpgHyperparams;
use vpp_core::env::EnvConfig;

use crate::data::{self, ScenarioData};
use crate::HarnessError;

pub const DER_CONFIGS: [&str; 4] = ["basecase", "renew1", "renew2", "bat1"];

/// Independent seeds, one per random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Renewable availability draws.
    pub network_noise: u64,
    pub rival: u64,
    pub agent_init: u64,
    pub exploration: u64,
    pub replay: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { network_noise: 1, rival: 2, agent_init: 3, exploration: 4, replay: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeCounts {
    pub train: usize,
    pub eval: usize,
}

impl Default for EpisodeCounts {
    fn default() -> Self {
        Self { train: 100, eval: 500 }
    }
}

/// A run description. Relative paths resolve against `base_dir`, the
/// directory of the file the configuration was read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub network: PathBuf,
    /// One of [`DER_CONFIGS`], resolved to `<network dir>/../ders/<name>.toml`.
    pub ders: String,
    /// Load curve name, resolved to `<network dir>/../loads/<name>.toml`.
    pub loads: String,
    pub rivals: PathBuf,
    /// Multiplier applied to rewards before they reach the agent.
    #[serde(default = "default_reward_scale")]
    pub reward_scale: f64,
    /// Save a checkpoint every this many training episodes; 0 saves only the last.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub episodes: EpisodeCounts,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub seed_sets: BTreeMap<String, Seeds>,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub hyper: DdpgHyperparams,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_reward_scale() -> f64 {
    1e-3
}

impl ScenarioConfig {
    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let mut cfg: ScenarioConfig = data::read_toml(path)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    /// A bundled configuration by file stem, e.g. `basecase_srl`.
    pub fn bundled(stem: &str) -> Result<Self, HarnessError> {
        Self::from_file(&data::bundled_dir().join("configs").join(format!("{stem}.toml")))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !DER_CONFIGS.contains(&self.ders.as_str()) {
            return Err(HarnessError::Config(format!("unknown DER configuration {:?}", self.ders)));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(HarnessError::Config("reward_scale must be positive".into()));
        }
        self.hyper.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        for path in [self.network_path(), self.der_path(), self.load_path(), self.rivals_path()] {
            if !path.is_file() {
                return Err(HarnessError::Config(format!("missing file {}", path.display())));
            }
        }
        Ok(())
    }

    /// Replace the active seeds with a named set.
    pub fn with_seed_set(mut self, name: &str) -> Result<Self, HarnessError> {
        self.seeds = *self
            .seed_sets
            .get(name)
            .ok_or_else(|| HarnessError::Config(format!("no seed set named {name:?}")))?;
        Ok(self)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn network_path(&self) -> PathBuf {
        self.resolve(&self.network)
    }

    fn data_root(&self) -> PathBuf {
        let net = self.network_path();
        net.parent().and_then(Path::parent).map(Path::to_path_buf).unwrap_or_default()
    }

    pub fn der_path(&self) -> PathBuf {
        self.data_root().join("ders").join(format!("{}.toml", self.ders))
    }

    pub fn load_path(&self) -> PathBuf {
        self.data_root().join("loads").join(format!("{}.toml", self.loads))
    }

    pub fn rivals_path(&self) -> PathBuf {
        self.resolve(&self.rivals)
    }

    pub fn load_data(&self) -> Result<ScenarioData, HarnessError> {
        let network = data::load_network(&self.network_path())?;
        let (fleet, load_label) = data::load_fleet(&self.der_path(), &self.load_path(), &network)?;
        let rivals = data::load_rivals(&self.rivals_path())?;
        Ok(ScenarioData { network, fleet, rivals, load_label })
    }

    /// Short run label: DER configuration, variant and forecast mode.
    pub fn label(&self) -> String {
        let fc = match self.env.forecast {
            vpp_core::env::ForecastMode::WithForecast => "wFC",
            vpp_core::env::ForecastMode::WithoutForecast => "woFC",
        };
        format!("{}-{}-{}", self.ders, self.env.variant.name(), fc)
    }
}
