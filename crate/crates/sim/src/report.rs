//! Summary tables recomputed from per-step logs. All money columns are €/day:
//! the 24 hourly values of an episode summed, then averaged over episodes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::output::{self, write_csv, CsvRow, Manifest, StepRow};
use crate::HarnessError;

pub const TABLE_I_FILE: &str = "table_i.csv";
pub const TABLE_II_FILE: &str = "table_ii.csv";
pub const FIG_SHIELD_FILE: &str = "fig_shield.csv";
pub const FIG_MCP_FILE: &str = "fig_mcp.csv";

/// A results directory: its manifest and step log.
#[derive(Debug, Clone)]
pub struct Run {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub steps: Vec<StepRow>,
}

impl Run {
    pub fn read(dir: &Path) -> Result<Self, HarnessError> {
        Ok(Self { dir: dir.to_path_buf(), manifest: Manifest::read(dir)?, steps: output::read_steps(dir)? })
    }

    fn is_training(&self) -> bool {
        self.manifest.command == "train"
    }
}

/// `dir` itself when it holds a run, otherwise each immediate subdirectory
/// holding one, in name order.
pub fn discover(dir: &Path) -> Result<Vec<Run>, HarnessError> {
    if dir.join(output::MANIFEST_FILE).is_file() {
        return Ok(vec![Run::read(dir)?]);
    }
    let entries = fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(output::MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| Run::read(d)).collect()
}

/// Per-episode sums of the step columns that enter the tables.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DailyTotals {
    pub r_da: f64,
    pub balancing: f64,
    pub net_market_profit: f64,
    pub c_vpp: f64,
    pub c_shd: f64,
    pub reward: f64,
    pub activations: usize,
    pub hours: usize,
}

pub fn daily_totals(steps: &[StepRow]) -> BTreeMap<usize, DailyTotals> {
    let mut out: BTreeMap<usize, DailyTotals> = BTreeMap::new();
    for s in steps {
        let d = out.entry(s.episode).or_default();
        d.r_da += s.r_da;
        d.balancing += s.balancing_cost;
        d.net_market_profit += s.r_da - s.balancing_cost;
        d.c_vpp += s.c_vpp;
        d.c_shd += s.shield_penalty;
        d.reward += s.reward;
        d.activations += usize::from(s.shield_activated);
        d.hours += 1;
    }
    out
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableIRow {
    pub label: String,
    pub policy: String,
    pub load_label: String,
    pub episodes: usize,
    pub day_ahead: f64,
    pub balancing: f64,
    pub net_market_profit: f64,
    pub c_vpp: f64,
    pub c_shd: f64,
    pub reward: f64,
}

impl CsvRow for TableIRow {
    const COLUMNS: &'static [&'static str] = &[
        "label",
        "policy",
        "load_label",
        "episodes",
        "day_ahead",
        "balancing",
        "net_market_profit",
        "c_vpp",
        "c_shd",
        "reward",
    ];
}

pub fn table_i_row(run: &Run) -> TableIRow {
    let days = daily_totals(&run.steps);
    let avg = |f: fn(&DailyTotals) -> f64| mean(days.values().map(f));
    TableIRow {
        label: run.manifest.label.clone(),
        policy: run.manifest.policy.clone(),
        load_label: run.manifest.load_label.clone(),
        episodes: days.len(),
        day_ahead: avg(|d| d.r_da),
        balancing: avg(|d| d.balancing),
        net_market_profit: avg(|d| d.net_market_profit),
        c_vpp: avg(|d| d.c_vpp),
        c_shd: avg(|d| d.c_shd),
        reward: avg(|d| d.reward),
    }
}

/// Daily profit after internal costs, per DER configuration, with and
/// without the renewable forecast in the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableIIRow {
    pub configuration: String,
    pub variant: String,
    pub policy: String,
    pub load_label: String,
    pub profit_wfc: Option<f64>,
    pub profit_wofc: Option<f64>,
}

impl CsvRow for TableIIRow {
    const COLUMNS: &'static [&'static str] =
        &["configuration", "variant", "policy", "load_label", "profit_wfc", "profit_wofc"];
}

/// Net market profit less internal cost, €/day.
pub fn daily_profit(steps: &[StepRow]) -> f64 {
    mean(daily_totals(steps).values().map(|d| d.net_market_profit - d.c_vpp))
}

pub fn table_ii(runs: &[&Run]) -> Vec<TableIIRow> {
    let mut rows: BTreeMap<(usize, String, String, String), TableIIRow> = BTreeMap::new();
    for run in runs {
        let cfg = &run.manifest.config;
        let order = crate::config::DER_CONFIGS.iter().position(|c| *c == cfg.ders).unwrap_or(usize::MAX);
        let variant = cfg.env.variant.name().to_string();
        let key = (order, variant.clone(), run.manifest.policy.clone(), run.manifest.load_label.clone());
        let row = rows.entry(key).or_insert_with(|| TableIIRow {
            configuration: cfg.ders.clone(),
            variant,
            policy: run.manifest.policy.clone(),
            load_label: run.manifest.load_label.clone(),
            profit_wfc: None,
            profit_wofc: None,
        });
        let profit = Some(daily_profit(&run.steps));
        match cfg.env.forecast {
            vpp_core::env::ForecastMode::WithForecast => row.profit_wfc = profit,
            vpp_core::env::ForecastMode::WithoutForecast => row.profit_wofc = profit,
        }
    }
    rows.into_values().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShieldRow {
    pub label: String,
    pub phase: String,
    pub episode: usize,
    pub activations: usize,
    pub hours: usize,
    pub activation_rate: f64,
}

impl CsvRow for ShieldRow {
    const COLUMNS: &'static [&'static str] = &["label", "phase", "episode", "activations", "hours", "activation_rate"];
}

pub fn shield_rows(run: &Run) -> Vec<ShieldRow> {
    let phase = if run.is_training() { "train" } else { "test" };
    daily_totals(&run.steps)
        .into_iter()
        .map(|(episode, d)| ShieldRow {
            label: run.manifest.label.clone(),
            phase: phase.into(),
            episode,
            activations: d.activations,
            hours: d.hours,
            activation_rate: d.activations as f64 / d.hours.max(1) as f64,
        })
        .collect()
}

/// Hourly means over the episodes of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McpRow {
    pub label: String,
    pub policy: String,
    pub hour: usize,
    pub mcp: f64,
    pub mcp_without_vpp: f64,
    pub bid_price: f64,
    pub cleared: f64,
    pub pmc: f64,
}

impl CsvRow for McpRow {
    const COLUMNS: &'static [&'static str] =
        &["label", "policy", "hour", "mcp", "mcp_without_vpp", "bid_price", "cleared", "pmc"];
}

pub fn mcp_rows(run: &Run) -> Vec<McpRow> {
    let mut by_hour: BTreeMap<usize, Vec<&StepRow>> = BTreeMap::new();
    for s in &run.steps {
        by_hour.entry(s.hour).or_default().push(s);
    }
    by_hour
        .into_iter()
        .map(|(hour, v)| {
            let avg = |f: fn(&StepRow) -> f64| mean(v.iter().map(|s| f(s)));
            McpRow {
                label: run.manifest.label.clone(),
                policy: run.manifest.policy.clone(),
                hour,
                mcp: avg(|s| s.mcp),
                mcp_without_vpp: avg(|s| s.mcp_without_vpp),
                bid_price: avg(|s| s.bid_price),
                cleared: avg(|s| s.cleared),
                pmc: avg(|s| s.pmc),
            }
        })
        .collect()
}

/// Write all four report files into `out`. Tables use evaluation and
/// baseline runs only; the shield figure also covers training.
pub fn write_report(runs: &[Run], out: &Path) -> Result<(), HarnessError> {
    let tested: Vec<&Run> = runs.iter().filter(|r| !r.is_training()).collect();
    write_csv(&out.join(TABLE_I_FILE), tested.iter().map(|r| table_i_row(r)))?;
    write_csv(&out.join(TABLE_II_FILE), table_ii(&tested))?;
    write_csv(&out.join(FIG_SHIELD_FILE), runs.iter().flat_map(shield_rows))?;
    write_csv(&out.join(FIG_MCP_FILE), tested.iter().flat_map(|r| mcp_rows(r)))
}
