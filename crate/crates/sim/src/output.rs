//! Run artifacts: step and episode CSVs, the run manifest and checkpoints.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vpp_core::agent::Ddpg;
use vpp_core::env::StepRecord;

use crate::config::ScenarioConfig;
use crate::harness::{Abort, EpisodeSummary, RunLog};
use crate::HarnessError;

pub const CHECKPOINT_FORMAT: u32 = 1;
pub const STEPS_FILE: &str = "steps.csv";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const ABORTS_FILE: &str = "aborts.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CHECKPOINT_FILE: &str = "agent.cbor";

/// One CSV line per simulated hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub episode: usize,
    pub hour: usize,
    pub bid_price: f64,
    pub bid_quantity: f64,
    pub shielded_quantity: f64,
    pub shield_activated: bool,
    pub intervention: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub mcp: f64,
    pub mcp_without_vpp: f64,
    pub cleared: f64,
    pub dispatched: f64,
    pub pmc: f64,
    pub pcc_mismatch: f64,
    pub dispatch_feasible: bool,
    pub c_vpp: f64,
    pub shield_penalty: f64,
    pub balancing_cost: f64,
    pub r_da: f64,
    pub reward: f64,
    pub storage_power: f64,
    pub soe: f64,
}

impl StepRow {
    pub fn new(episode: usize, r: &StepRecord) -> Self {
        Self {
            episode,
            hour: r.hour,
            bid_price: r.bid_price,
            bid_quantity: r.bid_quantity,
            shielded_quantity: r.shielded_quantity,
            shield_activated: r.shield_activated,
            intervention: r.intervention,
            u_min: r.u_min,
            u_max: r.u_max,
            mcp: r.mcp,
            mcp_without_vpp: r.mcp_without_vpp,
            cleared: r.cleared,
            dispatched: r.dispatched,
            pmc: r.pmc,
            pcc_mismatch: r.pcc_mismatch,
            dispatch_feasible: r.dispatch_feasible,
            c_vpp: r.c_vpp,
            shield_penalty: r.shield_penalty,
            balancing_cost: r.balancing_cost,
            r_da: r.reward.r_da,
            reward: r.reward.total,
            storage_power: r.storage_power,
            soe: r.soe,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| HarnessError::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::Format(format!("{}: {e}", path.display()))
}

/// A serializable CSV row with a fixed header.
pub trait CsvRow: Serialize {
    const COLUMNS: &'static [&'static str];
}

impl CsvRow for StepRow {
    const COLUMNS: &'static [&'static str] = &STEP_COLUMNS;
}

impl CsvRow for EpisodeSummary {
    const COLUMNS: &'static [&'static str] = &EPISODE_COLUMNS;
}

impl CsvRow for Abort {
    const COLUMNS: &'static [&'static str] = &["episode", "hour", "cause"];
}

pub fn write_csv<T: CsvRow>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?);
    w.write_record(T::COLUMNS).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub const STEP_COLUMNS: [&str; 23] = [
    "episode",
    "hour",
    "bid_price",
    "bid_quantity",
    "shielded_quantity",
    "shield_activated",
    "intervention",
    "u_min",
    "u_max",
    "mcp",
    "mcp_without_vpp",
    "cleared",
    "dispatched",
    "pmc",
    "pcc_mismatch",
    "dispatch_feasible",
    "c_vpp",
    "shield_penalty",
    "balancing_cost",
    "r_da",
    "reward",
    "storage_power",
    "soe",
];

pub const EPISODE_COLUMNS: [&str; 13] = [
    "episode",
    "hours",
    "r_da",
    "balancing",
    "net_market_profit",
    "c_vpp",
    "c_shd",
    "total_reward",
    "shield_activations",
    "infeasible_dispatches",
    "mean_mcp",
    "aborted",
    "critic_loss",
];

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    csv::Reader::from_reader(BufReader::new(file))
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| csv_err(path, e))
}

/// Write steps, episode summaries and aborts of a run into `dir`.
pub fn write_run(dir: &Path, log: &RunLog) -> Result<(), HarnessError> {
    write_csv(&dir.join(STEPS_FILE), log.records().map(|(e, r)| StepRow::new(e, r)))?;
    write_csv(&dir.join(EPISODES_FILE), log.summaries())?;
    write_csv(&dir.join(ABORTS_FILE), log.aborts().cloned())
}

pub fn read_episodes(dir: &Path) -> Result<Vec<EpisodeSummary>, HarnessError> {
    read_csv(&dir.join(EPISODES_FILE))
}

pub fn read_steps(dir: &Path) -> Result<Vec<StepRow>, HarnessError> {
    read_csv(&dir.join(STEPS_FILE))
}

pub fn read_aborts(dir: &Path) -> Result<Vec<Abort>, HarnessError> {
    read_csv(&dir.join(ABORTS_FILE))
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub label: String,
    pub policy: String,
    pub episodes: usize,
    pub load_label: String,
    pub network_file: PathBuf,
    pub der_file: PathBuf,
    pub load_file: PathBuf,
    pub rivals_file: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub config: ScenarioConfig,
}

impl Manifest {
    pub fn new(command: &str, policy: &str, episodes: usize, cfg: &ScenarioConfig, load_label: &str) -> Self {
        Self {
            command: command.into(),
            label: cfg.label(),
            policy: policy.into(),
            episodes,
            load_label: load_label.into(),
            network_file: cfg.network_path(),
            der_file: cfg.der_path(),
            load_file: cfg.load_path(),
            rivals_file: cfg.rivals_path(),
            checkpoint: None,
            config: cfg.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        let path = dir.join(MANIFEST_FILE);
        let text = toml::to_string(self).map_err(|e| HarnessError::Format(e.to_string()))?;
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self, HarnessError> {
        crate::data::read_toml(&dir.join(MANIFEST_FILE))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub state_dim: usize,
    pub label: String,
    pub episodes: usize,
    pub agent: Ddpg,
}

impl Checkpoint {
    pub fn new(label: String, episodes: usize, agent: Ddpg) -> Self {
        Self { format: CHECKPOINT_FORMAT, state_dim: agent.state_dim(), label, episodes, agent }
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let mut w = create(path)?;
        ciborium::into_writer(self, &mut w).map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
        let ck: Checkpoint = ciborium::from_reader(BufReader::new(file))
            .map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(HarnessError::Format(format!("unsupported checkpoint format {}", ck.format)));
        }
        if ck.agent.state_dim() != ck.state_dim {
            return Err(HarnessError::Format("checkpoint state dimension is inconsistent".into()));
        }
        Ok(ck)
    }

    /// Reject a checkpoint trained on a different state layout.
    pub fn check_dim(&self, found: usize) -> Result<(), HarnessError> {
        if self.state_dim != found {
            return Err(HarnessError::Dimension { expected: self.state_dim, found });
        }
        Ok(())
    }
}

/// Periodic checkpoint path, e.g. `checkpoints/agent_0050.cbor`.
pub fn periodic_checkpoint(dir: &Path, episodes: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("agent_{episodes:04}.cbor"))
}
