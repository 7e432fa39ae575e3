//! Distributed energy resources and their capability sets.
//!
//! Sign convention: injections are generation-positive. Storage discharging is
//! a positive injection and lowers the state of energy:
//! `chi' = chi - p * dt` (unit efficiency).

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::NetworkModel;
use crate::math::sqrt;

pub const HOURS: usize = 24;

/// Slack allowed on state-of-energy bounds, kWh.
pub const SOE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DerError {
    #[error("unit {unit}: {reason}")]
    InvalidUnit { unit: String, reason: &'static str },
    #[error("unit {unit} is placed on unknown bus index {bus}")]
    UnknownBus { unit: String, bus: usize },
    #[error("unit {unit} is placed on the substation bus")]
    AtRoot { unit: String },
    #[error("bus {bus} hosts more than one {what}")]
    SharedBus { bus: usize, what: &'static str },
    #[error("hour {0} outside 0..24")]
    Hour(usize),
    #[error("unit {0} is not a storage unit")]
    NotStorage(String),
    #[error("unit {0} is not a load")]
    NotLoad(String),
    #[error("storage power {p} kW exceeds rating {p_max} kW")]
    PowerRating { p: f64, p_max: f64 },
    #[error("state of energy {chi} kWh leaves [{chi_min}, {chi_max}]")]
    EnergyBound { chi: f64, chi_min: f64, chi_max: f64 },
}

/// Forecast-error model of a renewable's hourly availability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseModel {
    None,
    /// Multiplicative Gaussian error with the given relative standard deviation.
    Gaussian { rel_std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DerKind {
    Conventional {
        p_min: f64,
        p_max: f64,
        s_max: f64,
        /// €/kWh
        cost: f64,
    },
    Renewable {
        s_max: f64,
        /// Minimum power factor `a` in [0, 1].
        pf_floor: f64,
        /// Hourly expected availability, kW.
        profile: Vec<f64>,
        noise: NoiseModel,
    },
    Storage {
        p_max: f64,
        s_max: f64,
        chi_min: f64,
        chi_max: f64,
        /// Current state of energy, kWh.
        chi: f64,
        cost: f64,
    },
    Load {
        p_profile: Vec<f64>,
        q_profile: Vec<f64>,
        /// Price paid by the load to the VPP, €/kWh.
        tariff: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerUnit {
    pub name: String,
    /// Bus index in the network model.
    pub bus: usize,
    pub kind: DerKind,
}

/// Exogenous conditions a capability test depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitConditions {
    pub hour: usize,
    /// Realized renewable availability, kW (ignored for other kinds).
    pub p_res: f64,
    /// Step length, hours.
    pub dt: f64,
}

impl UnitConditions {
    pub fn at(hour: usize) -> Self {
        Self { hour, p_res: 0.0, dt: 1.0 }
    }
}

fn finite_nonneg(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

impl DerUnit {
    pub fn validate(&self) -> Result<(), DerError> {
        let fail = |reason| Err(DerError::InvalidUnit { unit: self.name.clone(), reason });
        match &self.kind {
            DerKind::Conventional { p_min, p_max, s_max, cost } => {
                if !(finite_nonneg(*p_min) && p_min <= p_max && p_max <= s_max && s_max.is_finite()) {
                    return fail("requires 0 <= p_min <= p_max <= s_max");
                }
                if !cost.is_finite() {
                    return fail("cost must be finite");
                }
            }
            DerKind::Renewable { s_max, pf_floor, profile, noise } => {
                if !(s_max.is_finite() && *s_max > 0.0) {
                    return fail("s_max must be positive");
                }
                if !(0.0..=1.0).contains(pf_floor) {
                    return fail("power factor floor must lie in [0, 1]");
                }
                if profile.len() != HOURS || !profile.iter().all(|&x| finite_nonneg(x)) {
                    return fail("availability profile needs 24 non-negative values");
                }
                if let NoiseModel::Gaussian { rel_std } = noise {
                    if !finite_nonneg(*rel_std) {
                        return fail("noise standard deviation must be non-negative");
                    }
                }
            }
            DerKind::Storage { p_max, s_max, chi_min, chi_max, chi, cost } => {
                if !(finite_nonneg(*p_max) && p_max <= s_max && s_max.is_finite()) {
                    return fail("requires 0 <= p_max <= s_max");
                }
                if !(finite_nonneg(*chi_min) && chi_min <= chi && chi <= chi_max && chi_max.is_finite()) {
                    return fail("requires chi_min <= chi <= chi_max");
                }
                if !cost.is_finite() {
                    return fail("cost must be finite");
                }
            }
            DerKind::Load { p_profile, q_profile, tariff } => {
                if p_profile.len() != HOURS || q_profile.len() != HOURS {
                    return fail("load profiles need 24 values");
                }
                if !p_profile.iter().chain(q_profile).all(|x| x.is_finite()) || !tariff.is_finite() {
                    return fail("load profile and tariff must be finite");
                }
            }
        }
        Ok(())
    }

    /// Whether `(p, q)` lies in the unit's capability set under `cond`.
    pub fn contains(&self, p: f64, q: f64, cond: &UnitConditions) -> bool {
        match &self.kind {
            DerKind::Conventional { p_min, p_max, s_max, .. } => {
                *p_min <= p && p <= *p_max && p * p + q * q <= s_max * s_max
            }
            DerKind::Renewable { s_max, pf_floor, .. } => {
                let s2 = p * p + q * q;
                // (0, 0) passes the power-factor test: curtailment to zero is allowed.
                let pf_ok = s2 == 0.0 || p >= pf_floor * sqrt(s2);
                0.0 <= p && p <= cond.p_res && s2 <= s_max * s_max && pf_ok
            }
            DerKind::Storage { p_max, s_max, chi_min, chi_max, chi, .. } => {
                let next = chi - p * cond.dt;
                p.abs() <= *p_max && p * p + q * q <= s_max * s_max && *chi_min <= next && next <= *chi_max
            }
            DerKind::Load { p_profile, q_profile, .. } => match (p_profile.get(cond.hour), q_profile.get(cond.hour)) {
                (Some(&lp), Some(&lq)) => p == -lp && q == -lq,
                _ => false,
            },
        }
    }

    /// Active-power range `[lo, hi]` the unit can reach at `cond`, ignoring the
    /// apparent-power circle. `None` for loads.
    pub fn active_range(&self, cond: &UnitConditions) -> Option<(f64, f64)> {
        match &self.kind {
            DerKind::Conventional { p_min, p_max, .. } => Some((*p_min, *p_max)),
            DerKind::Renewable { s_max, .. } => Some((0.0, cond.p_res.min(*s_max).max(0.0))),
            DerKind::Storage { p_max, chi_min, chi_max, chi, .. } => {
                let lo = (-p_max).max((chi - chi_max) / cond.dt);
                let hi = p_max.min((chi - chi_min) / cond.dt);
                Some((lo.min(hi.max(lo)), hi.max(lo)))
            }
            DerKind::Load { .. } => None,
        }
    }

    pub fn s_max(&self) -> Option<f64> {
        match &self.kind {
            DerKind::Conventional { s_max, .. } | DerKind::Renewable { s_max, .. } | DerKind::Storage { s_max, .. } => {
                Some(*s_max)
            }
            DerKind::Load { .. } => None,
        }
    }

    /// Marginal production cost γ, €/kWh (renewables are free).
    pub fn cost(&self) -> f64 {
        match &self.kind {
            DerKind::Conventional { cost, .. } | DerKind::Storage { cost, .. } => *cost,
            DerKind::Renewable { .. } => 0.0,
            DerKind::Load { tariff, .. } => *tariff,
        }
    }

    pub fn is_load(&self) -> bool {
        matches!(self.kind, DerKind::Load { .. })
    }

    pub fn is_storage(&self) -> bool {
        matches!(self.kind, DerKind::Storage { .. })
    }

    pub fn is_renewable(&self) -> bool {
        matches!(self.kind, DerKind::Renewable { .. })
    }

    /// State of energy after injecting `p` kW for `dt` hours.
    pub fn step_soe(&self, p: f64, dt: f64) -> Result<f64, DerError> {
        let DerKind::Storage { p_max, chi_min, chi_max, chi, .. } = &self.kind else {
            return Err(DerError::NotStorage(self.name.clone()));
        };
        if p.abs() > *p_max + SOE_TOLERANCE {
            return Err(DerError::PowerRating { p, p_max: *p_max });
        }
        let next = chi - p * dt;
        if next < chi_min - SOE_TOLERANCE || next > chi_max + SOE_TOLERANCE {
            return Err(DerError::EnergyBound { chi: next, chi_min: *chi_min, chi_max: *chi_max });
        }
        Ok(next.clamp(*chi_min, *chi_max))
    }

    pub fn soe(&self) -> Option<f64> {
        match &self.kind {
            DerKind::Storage { chi, .. } => Some(*chi),
            _ => None,
        }
    }

    pub fn set_soe(&mut self, value: f64) -> Result<(), DerError> {
        match &mut self.kind {
            DerKind::Storage { chi, chi_min, chi_max, .. } => {
                if value < *chi_min - SOE_TOLERANCE || value > *chi_max + SOE_TOLERANCE {
                    return Err(DerError::EnergyBound { chi: value, chi_min: *chi_min, chi_max: *chi_max });
                }
                *chi = value.clamp(*chi_min, *chi_max);
                Ok(())
            }
            _ => Err(DerError::NotStorage(self.name.clone())),
        }
    }

    /// Fixed injection `(-p_load, -q_load)` of a load at hour `t`.
    pub fn load_injection(&self, t: usize) -> Result<(f64, f64), DerError> {
        let DerKind::Load { p_profile, q_profile, .. } = &self.kind else {
            return Err(DerError::NotLoad(self.name.clone()));
        };
        if t >= HOURS {
            return Err(DerError::Hour(t));
        }
        Ok((-p_profile[t], -q_profile[t]))
    }
}

/// Realized and forecast renewable availability for one hour, aligned with
/// the fleet's unit list (zero for non-renewables).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityDraw {
    pub realized: Vec<f64>,
    pub forecast: Vec<f64>,
}

impl AvailabilityDraw {
    pub fn none(units: usize) -> Self {
        Self { realized: alloc::vec![0.0; units], forecast: alloc::vec![0.0; units] }
    }
}

/// The VPP's units together, validated against a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerFleet {
    units: Vec<DerUnit>,
}

impl DerFleet {
    /// Validate every unit and the placement rules: nothing on the root bus,
    /// at most one generating unit (conventional, renewable or storage) and at
    /// most one load per bus.
    pub fn new(units: Vec<DerUnit>, net: &NetworkModel) -> Result<Self, DerError> {
        for (k, u) in units.iter().enumerate() {
            u.validate()?;
            if u.bus >= net.bus_count() {
                return Err(DerError::UnknownBus { unit: u.name.clone(), bus: u.bus });
            }
            if u.bus == net.root() {
                return Err(DerError::AtRoot { unit: u.name.clone() });
            }
            for other in &units[..k] {
                if other.bus == u.bus && other.is_load() == u.is_load() {
                    let what = if u.is_load() { "load" } else { "generating unit" };
                    return Err(DerError::SharedBus { bus: u.bus, what });
                }
            }
        }
        Ok(Self { units })
    }

    pub fn units(&self) -> &[DerUnit] {
        &self.units
    }

    pub fn unit_mut(&mut self, k: usize) -> &mut DerUnit {
        &mut self.units[k]
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn controllable(&self) -> impl Iterator<Item = usize> + '_ {
        self.units.iter().enumerate().filter(|(_, u)| !u.is_load()).map(|(k, _)| k)
    }

    pub fn loads(&self) -> impl Iterator<Item = usize> + '_ {
        self.units.iter().enumerate().filter(|(_, u)| u.is_load()).map(|(k, _)| k)
    }

    pub fn renewables(&self) -> impl Iterator<Item = usize> + '_ {
        self.units.iter().enumerate().filter(|(_, u)| u.is_renewable()).map(|(k, _)| k)
    }

    pub fn storages(&self) -> impl Iterator<Item = usize> + '_ {
        self.units.iter().enumerate().filter(|(_, u)| u.is_storage()).map(|(k, _)| k)
    }

    /// Total active load at hour `t`, kW.
    pub fn total_load(&self, t: usize) -> f64 {
        self.units
            .iter()
            .filter_map(|u| match &u.kind {
                DerKind::Load { p_profile, .. } => p_profile.get(t).copied(),
                _ => None,
            })
            .sum()
    }

    /// Installed active capacity of conventional, renewable and storage units, kW.
    pub fn installed_capacity(&self) -> f64 {
        self.units
            .iter()
            .map(|u| match &u.kind {
                DerKind::Conventional { p_max, .. } | DerKind::Storage { p_max, .. } => *p_max,
                DerKind::Renewable { s_max, .. } => *s_max,
                DerKind::Load { .. } => 0.0,
            })
            .sum()
    }

    pub fn conditions(&self, unit: usize, hour: usize, avail: &AvailabilityDraw, dt: f64) -> UnitConditions {
        UnitConditions { hour, p_res: avail.realized.get(unit).copied().unwrap_or(0.0), dt }
    }
}

/// Draw this hour's renewable availability.
///
/// `realized = clamp(profile[t] * (1 + rel_std * z), 0, s_max)` with a standard
/// normal `z`; the forecast is the noise-free `profile[t]`. One normal draw is
/// consumed per renewable regardless of its noise model, so streams stay
/// aligned across configurations.
pub fn sample_availability<R: Rng + ?Sized>(
    fleet: &DerFleet,
    t: usize,
    rng: &mut R,
) -> Result<AvailabilityDraw, DerError> {
    if t >= HOURS {
        return Err(DerError::Hour(t));
    }
    let mut draw = AvailabilityDraw::none(fleet.len());
    for (k, unit) in fleet.units.iter().enumerate() {
        if let DerKind::Renewable { s_max, profile, noise, .. } = &unit.kind {
            let z: f64 = rng.sample(StandardNormal);
            let mean = profile[t];
            let factor = match noise {
                NoiseModel::None => 1.0,
                NoiseModel::Gaussian { rel_std } => 1.0 + rel_std * z,
            };
            draw.realized[k] = (mean * factor).clamp(0.0, *s_max);
            draw.forecast[k] = mean;
        }
    }
    Ok(draw)
}
