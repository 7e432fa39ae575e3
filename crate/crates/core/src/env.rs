//! The bidding MDP: one hourly step routes the agent's bid through the
//! shield, the day-ahead market and the internal dispatch, then advances
//! storage and assembles the reward.
//!
//! The VPP's own loads are served internally; the market sees a single VPP
//! bid whose side follows the sign of the (shielded) quantity.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ders::{sample_availability, AvailabilityDraw, DerError, DerFleet, DerKind, HOURS};
use crate::dispatch::{
    feasible_export_interval, production_marginal_cost, solve_opf, DispatchError, DispatchResult,
    FeasibleExportInterval, OpfOptions,
};
use crate::grid::NetworkModel;
use crate::market::{clear, generate_rival_bids, settle, Bid, MarketError, RivalScenario, VPP_OWNER};
use crate::shield::{project_bid, ShieldConfig, ShieldError};

/// Entries of the interval cache before it is flushed.
const CACHE_CAPACITY: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Shield bypassed; reward is the day-ahead revenue.
    #[serde(rename = "uRL")]
    Unsafe,
    /// Shield on; reward excludes the activation penalty.
    #[serde(rename = "shRL")]
    Shielded,
    /// Shield on; reward charges the activation penalty.
    #[serde(rename = "sRL")]
    Safe,
}

impl Variant {
    pub fn shielded(self) -> bool {
        self != Variant::Unsafe
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Unsafe => "uRL",
            Variant::Shielded => "shRL",
            Variant::Safe => "sRL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForecastMode {
    #[serde(rename = "wFC")]
    WithForecast,
    #[serde(rename = "woFC")]
    WithoutForecast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub variant: Variant,
    pub forecast: ForecastMode,
    pub shield: ShieldConfig,
    pub opf: OpfOptions,
    /// Upper end of the bid price range, €/kWh.
    pub price_cap: f64,
    /// Bid quantities span `[-q, q]`, kW; `None` uses the installed capacity.
    pub quantity_cap: Option<f64>,
    /// Balancing price as a multiple of the MCP.
    pub balancing_factor: f64,
    /// State of energy at reset as a fraction of `chi_max`.
    pub initial_soe_fraction: f64,
    /// Normalized state entries beyond this are clipped.
    pub state_clip: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Safe,
            forecast: ForecastMode::WithForecast,
            shield: ShieldConfig::default(),
            opf: OpfOptions::default(),
            price_cap: 10.0,
            quantity_cap: None,
            balancing_factor: 1.2,
            initial_soe_fraction: 0.5,
            state_clip: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Shield(#[from] ShieldError),
    #[error(transparent)]
    Der(#[from] DerError),
    #[error("invalid environment configuration: {0}")]
    Config(&'static str),
    #[error("action component {0} outside [0, 1]")]
    Action(f64),
    #[error("step called on a finished or unreset episode")]
    NotRunning,
    #[error("no feasible dispatch for {target} kW at hour {hour}")]
    InfeasibleDispatch { hour: usize, target: f64 },
}

/// A denormalized bid: price €/kWh, quantity kW (positive sells).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BidAction {
    pub price: f64,
    pub quantity: f64,
}

/// Reward components charged to the agent; components a variant ignores are
/// zero. `total = r_da - c_vpp - c_shd - balancing`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_da: f64,
    pub c_vpp: f64,
    pub c_shd: f64,
    pub balancing: f64,
    pub total: f64,
}

impl RewardBreakdown {
    fn new(r_da: f64, c_vpp: f64, c_shd: f64, balancing: f64) -> Self {
        Self { r_da, c_vpp, c_shd, balancing, total: r_da - c_vpp - c_shd - balancing }
    }
}

/// Everything that happened in one step, including costs the variant's reward
/// does not charge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub hour: usize,
    pub bid_price: f64,
    pub bid_quantity: f64,
    pub shielded_quantity: f64,
    pub shield_activated: bool,
    /// `|shielded - bid|`, kW.
    pub intervention: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub mcp: f64,
    /// Clearing price of the rival bids alone.
    pub mcp_without_vpp: f64,
    /// Net cleared VPP quantity, kW (positive sells).
    pub cleared: f64,
    /// Exchange the internal dispatch delivers, kW.
    pub dispatched: f64,
    pub pmc: f64,
    pub pcc_mismatch: f64,
    pub dispatch_feasible: bool,
    /// Incurred costs regardless of variant, €.
    pub c_vpp: f64,
    pub shield_penalty: f64,
    pub balancing_cost: f64,
    pub reward: RewardBreakdown,
    /// Total storage injection, kW (positive discharges).
    pub storage_power: f64,
    /// Total stored energy after the step, kWh.
    pub soe: f64,
    /// `(p, q)` per fleet unit as dispatched.
    pub setpoints: Vec<(f64, f64)>,
    /// Realized availability per fleet unit, kW.
    pub availability: Vec<f64>,
    /// Stored energy per fleet unit before the step, kWh; zero for non-storage.
    pub soe_before: Vec<f64>,
}

impl StepRecord {
    /// Day-ahead revenue less balancing, €.
    pub fn net_market_profit(&self) -> f64 {
        self.reward.r_da - self.balancing_cost
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub reward: RewardBreakdown,
    pub done: bool,
    pub record: StepRecord,
}

/// Per-episode seeds of the exogenous draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSeeds {
    pub availability: u64,
    pub rival: u64,
    pub episode: u64,
}

impl EpisodeSeeds {
    fn rng(seed: u64, episode: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(episode);
        rng
    }
}

struct Day {
    availability: Vec<AvailabilityDraw>,
    rivals: Vec<(Vec<Bid>, Vec<Bid>)>,
}

type CacheKey = (usize, Vec<u64>, Vec<u64>);

pub struct Environment {
    net: NetworkModel,
    initial_fleet: DerFleet,
    fleet: DerFleet,
    scenario: RivalScenario,
    cfg: EnvConfig,
    quantity_cap: f64,
    load_scale: Vec<(f64, f64)>,
    hour: usize,
    running: bool,
    day: Option<Day>,
    cache: BTreeMap<CacheKey, FeasibleExportInterval>,
    clipped: usize,
}

impl Environment {
    pub fn new(net: NetworkModel, fleet: DerFleet, scenario: RivalScenario, cfg: EnvConfig) -> Result<Self, EnvError> {
        scenario.validate()?;
        if !(cfg.price_cap > 0.0 && cfg.price_cap.is_finite()) {
            return Err(EnvError::Config("price cap must be positive"));
        }
        if !(cfg.balancing_factor >= 1.0 && cfg.balancing_factor.is_finite()) {
            return Err(EnvError::Config("balancing factor must be at least one"));
        }
        if !(0.0..=1.0).contains(&cfg.initial_soe_fraction) {
            return Err(EnvError::Config("initial state of energy fraction must lie in [0, 1]"));
        }
        if !(cfg.state_clip >= 1.0) {
            return Err(EnvError::Config("state clip must be at least one"));
        }
        let quantity_cap = cfg.quantity_cap.unwrap_or_else(|| fleet.installed_capacity());
        if !(quantity_cap > 0.0 && quantity_cap.is_finite()) {
            return Err(EnvError::Config("quantity cap must be positive"));
        }
        let load_scale = fleet
            .loads()
            .map(|k| match &fleet.units()[k].kind {
                DerKind::Load { p_profile, q_profile, .. } => {
                    let peak = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                    (peak(p_profile).max(1e-9), peak(q_profile).max(1e-9))
                }
                _ => unreachable!(),
            })
            .collect();
        Ok(Self {
            net,
            initial_fleet: fleet.clone(),
            fleet,
            scenario,
            cfg,
            quantity_cap,
            load_scale,
            hour: 0,
            running: false,
            day: None,
            cache: BTreeMap::new(),
            clipped: 0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn network(&self) -> &NetworkModel {
        &self.net
    }

    pub fn fleet(&self) -> &DerFleet {
        &self.fleet
    }

    pub fn scenario(&self) -> &RivalScenario {
        &self.scenario
    }

    pub fn hour(&self) -> usize {
        self.hour
    }

    pub fn quantity_cap(&self) -> f64 {
        self.quantity_cap
    }

    /// State entries clipped so far.
    pub fn clipped_entries(&self) -> usize {
        self.clipped
    }

    pub fn state_dim(&self) -> usize {
        let res = match self.cfg.forecast {
            ForecastMode::WithForecast => self.fleet.renewables().count(),
            ForecastMode::WithoutForecast => 0,
        };
        1 + 2 * self.fleet.loads().count() + res + self.fleet.storages().count()
    }

    /// Start a day: storage at its initial fraction, availability and rival
    /// bids drawn for all 24 hours.
    pub fn reset(&mut self, seeds: EpisodeSeeds) -> Result<Vec<f64>, EnvError> {
        self.fleet = self.initial_fleet.clone();
        let storages: Vec<usize> = self.fleet.storages().collect();
        for k in storages {
            let unit = self.fleet.unit_mut(k);
            if let DerKind::Storage { chi_min, chi_max, .. } = unit.kind {
                let target = chi_max * self.cfg.initial_soe_fraction;
                unit.set_soe(target.clamp(chi_min, chi_max))?;
            }
        }
        let mut avail_rng = EpisodeSeeds::rng(seeds.availability, seeds.episode);
        let mut rival_rng = EpisodeSeeds::rng(seeds.rival, seeds.episode);
        let mut availability = Vec::with_capacity(HOURS);
        let mut rivals = Vec::with_capacity(HOURS);
        for t in 0..HOURS {
            availability.push(sample_availability(&self.fleet, t, &mut avail_rng)?);
            rivals.push(generate_rival_bids(t, &self.scenario, &mut rival_rng)?);
        }
        self.day = Some(Day { availability, rivals });
        self.hour = 0;
        self.running = true;
        Ok(self.state())
    }

    /// Normalized state for the current hour.
    pub fn state(&mut self) -> Vec<f64> {
        let t = self.hour.min(HOURS - 1);
        let mut raw = Vec::with_capacity(self.state_dim());
        raw.push((t as f64, (HOURS - 1) as f64));
        for (k, &(sp, sq)) in self.fleet.loads().zip(&self.load_scale) {
            let (p, q) = self.fleet.units()[k].load_injection(t).unwrap_or((0.0, 0.0));
            raw.push((-p, sp));
            raw.push((-q, sq));
        }
        if self.cfg.forecast == ForecastMode::WithForecast {
            for k in self.fleet.renewables() {
                let forecast = self.day.as_ref().map_or(0.0, |d| d.availability[t].forecast[k]);
                raw.push((forecast, self.fleet.units()[k].s_max().unwrap_or(1.0)));
            }
        }
        for k in self.fleet.storages() {
            let u = &self.fleet.units()[k];
            let scale = match u.kind {
                DerKind::Storage { chi_max, .. } => chi_max,
                _ => 1.0,
            };
            raw.push((u.soe().unwrap_or(0.0), scale));
        }
        let (v, clipped) = assemble_state(&raw, self.cfg.state_clip);
        self.clipped += clipped;
        v
    }

    /// Map a normalized action in `[0,1]²` onto a bid.
    pub fn denormalize(&self, a: [f64; 2]) -> Result<BidAction, EnvError> {
        for x in a {
            if !(0.0..=1.0).contains(&x) {
                return Err(EnvError::Action(x));
            }
        }
        Ok(BidAction { price: a[0] * self.cfg.price_cap, quantity: (2.0 * a[1] - 1.0) * self.quantity_cap })
    }

    fn day(&self) -> Result<&Day, EnvError> {
        self.day.as_ref().filter(|_| self.running).ok_or(EnvError::NotRunning)
    }

    pub fn availability(&self) -> Result<&AvailabilityDraw, EnvError> {
        Ok(&self.day()?.availability[self.hour])
    }

    pub fn rival_bids(&self) -> Result<&(Vec<Bid>, Vec<Bid>), EnvError> {
        Ok(&self.day()?.rivals[self.hour])
    }

    /// Feasible PCC exchange for the current hour and storage state.
    pub fn feasible_interval(&mut self) -> Result<FeasibleExportInterval, EnvError> {
        let hour = self.hour;
        let avail = self.day()?.availability[hour].clone();
        let key: CacheKey = (
            hour,
            avail.realized.iter().map(|x| x.to_bits()).collect(),
            self.fleet.storages().map(|k| self.fleet.units()[k].soe().unwrap_or(0.0).to_bits()).collect(),
        );
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit.clone());
        }
        let interval = feasible_export_interval(&self.net, &self.fleet, hour, &avail, &self.cfg.opf)?;
        if self.cache.len() >= CACHE_CAPACITY {
            self.cache.clear();
        }
        self.cache.insert(key, interval.clone());
        Ok(interval)
    }

    /// Production marginal cost when exporting the interval's maximum.
    pub fn price_taker_bid(&mut self) -> Result<BidAction, EnvError> {
        let interval = self.feasible_interval()?;
        Ok(BidAction { price: production_marginal_cost(&interval.max_certificate, &self.fleet), quantity: interval.u_max })
    }

    /// Clearing price of the rival bids alone at the current hour.
    pub fn rival_clearing_price(&self) -> Result<f64, EnvError> {
        let (s, d) = self.rival_bids()?;
        Ok(clear(s, d)?.mcp)
    }

    fn dispatch(&self, target: f64, interval: &FeasibleExportInterval) -> Result<DispatchResult, EnvError> {
        let tol = self.cfg.opf.pcc_tolerance;
        if target >= interval.u_max - 1e-9 {
            return Ok(interval.max_certificate.clone());
        }
        if target <= interval.u_min + 1e-9 {
            return Ok(interval.min_certificate.clone());
        }
        let avail = &self.day()?.availability[self.hour];
        let r = solve_opf(&self.net, &self.fleet, self.hour, avail, target, &self.cfg.opf)?;
        if r.feasible {
            return Ok(r);
        }
        // Within the bisection tolerance of an end, its certificate stands in.
        if interval.u_max - target <= tol {
            return Ok(interval.max_certificate.clone());
        }
        if target - interval.u_min <= tol {
            return Ok(interval.min_certificate.clone());
        }
        Err(EnvError::InfeasibleDispatch { hour: self.hour, target })
    }

    /// One hour of the pipeline: shield, market, dispatch, storage, reward.
    /// An error aborts the episode.
    pub fn step(&mut self, bid: BidAction) -> Result<StepOutcome, EnvError> {
        let result = self.step_inner(bid);
        if result.is_err() {
            self.running = false;
        }
        result
    }

    fn step_inner(&mut self, bid: BidAction) -> Result<StepOutcome, EnvError> {
        if !self.running {
            return Err(EnvError::NotRunning);
        }
        if !(bid.price.is_finite() && bid.quantity.is_finite()) {
            return Err(EnvError::Action(if bid.price.is_finite() { bid.quantity } else { bid.price }));
        }
        let hour = self.hour;
        let dt = self.cfg.opf.dt;
        let interval = self.feasible_interval()?;
        let shield_cfg = ShieldConfig { enabled: self.cfg.variant.shielded(), ..self.cfg.shield };
        let shielded = project_bid(bid.quantity, interval.u_min, interval.u_max, &shield_cfg)?;

        let (rival_supply, rival_demand) = self.rival_bids()?.clone();
        let mcp_without_vpp = clear(&rival_supply, &rival_demand)?.mcp;
        let (mut supply, mut demand) = (Vec::with_capacity(rival_supply.len() + 1), rival_demand.clone());
        let q = shielded.shielded_bid;
        // The VPP bid goes first so it wins price ties.
        if q > 0.0 {
            supply.push(Bid::supply(VPP_OWNER, bid.price, q));
        } else if q < 0.0 {
            demand.insert(0, Bid::demand(VPP_OWNER, bid.price, -q));
        }
        supply.extend(rival_supply);
        let outcome = clear(&supply, &demand)?;
        let cleared = outcome.net_cleared(VPP_OWNER);
        let r_da = settle(&outcome, VPP_OWNER, dt);

        let target = cleared.clamp(interval.u_min, interval.u_max);
        let dispatch = self.dispatch(target, &interval)?;
        let balancing_cost = (cleared - target).abs() * self.cfg.balancing_factor * outcome.mcp * dt;

        let availability = self.availability()?.realized.clone();
        let soe_before: Vec<f64> = self.fleet.units().iter().map(|u| u.soe().unwrap_or(0.0)).collect();
        let storages: Vec<usize> = self.fleet.storages().collect();
        let storage_power = storages.iter().map(|&k| dispatch.setpoints[k].0).sum();
        for k in storages {
            let p = dispatch.setpoints[k].0;
            let next = self.fleet.units()[k].step_soe(p, dt)?;
            self.fleet.unit_mut(k).set_soe(next)?;
        }

        let c_vpp = dispatch.c_vpp;
        let reward = match self.cfg.variant {
            Variant::Unsafe => RewardBreakdown::new(r_da, 0.0, 0.0, 0.0),
            Variant::Shielded => RewardBreakdown::new(r_da, c_vpp, 0.0, balancing_cost),
            Variant::Safe => RewardBreakdown::new(r_da, c_vpp, shielded.penalty, balancing_cost),
        };
        let record = StepRecord {
            hour,
            bid_price: bid.price,
            bid_quantity: bid.quantity,
            shielded_quantity: q,
            shield_activated: shielded.activated,
            intervention: shielded.intervention(),
            u_min: interval.u_min,
            u_max: interval.u_max,
            mcp: outcome.mcp,
            mcp_without_vpp,
            cleared,
            dispatched: target,
            pmc: production_marginal_cost(&dispatch, &self.fleet),
            pcc_mismatch: dispatch.pcc_mismatch,
            dispatch_feasible: dispatch.feasible,
            c_vpp,
            shield_penalty: shielded.penalty,
            balancing_cost,
            reward,
            storage_power,
            soe: self.fleet.storages().filter_map(|k| self.fleet.units()[k].soe()).sum(),
            setpoints: dispatch.setpoints,
            availability,
            soe_before,
        };

        let done = hour + 1 >= HOURS;
        if done {
            self.running = false;
        } else {
            self.hour += 1;
        }
        let state = self.state();
        Ok(StepOutcome { state, reward, done, record })
    }
}

/// Affine normalization `raw / scale` of `(raw, scale)` pairs. Entries
/// outside `[-clip, clip]` are clipped; the count of clipped entries is
/// returned alongside.
pub fn assemble_state(raw: &[(f64, f64)], clip: f64) -> (Vec<f64>, usize) {
    let mut clipped = 0;
    let v = raw
        .iter()
        .map(|&(x, scale)| {
            let y = if scale > 0.0 { x / scale } else { 0.0 };
            if y.abs() > clip || !y.is_finite() {
                clipped += 1;
                if y.is_nan() { 0.0 } else { y.clamp(-clip, clip) }
            } else {
                y
            }
        })
        .collect();
    (v, clipped)
}

impl core::fmt::Debug for Environment {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Environment")
            .field("hour", &self.hour)
            .field("running", &self.running)
            .field("variant", &self.cfg.variant)
            .field("cached_intervals", &self.cache.len())
            .finish()
    }
}
