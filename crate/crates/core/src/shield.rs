//! Projection of the bid quantity onto the feasible PCC exchange.
//!
//! Only the exchange `u` appears in the projection objective, so the
//! projection onto the feasible set reduces to clamping onto
//! `[u_min, u_max]`; the geometry lives in
//! [`feasible_export_interval`](crate::dispatch::feasible_export_interval).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::FeasibleExportInterval;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShieldConfig {
    /// Penalty weight ε, €/kW.
    pub epsilon: f64,
    /// Interventions at or below this size are not counted as activations, kW.
    pub tolerance: f64,
    pub enabled: bool,
}

impl Default for ShieldConfig {
    fn default() -> Self {
        Self { epsilon: 1.0, tolerance: 1.0, enabled: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShieldOutcome {
    pub original_bid: f64,
    pub shielded_bid: f64,
    pub activated: bool,
    /// €
    pub penalty: f64,
}

impl ShieldOutcome {
    pub fn intervention(&self) -> f64 {
        (self.shielded_bid - self.original_bid).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ShieldError {
    #[error("invalid interval [{0}, {1}]")]
    Interval(f64, f64),
    #[error("invalid shield configuration")]
    Config,
    #[error("bid {0} is not finite")]
    Bid(f64),
}

/// Clamp `p_bid` onto `[u_min, u_max]`.
pub fn project_bid(p_bid: f64, u_min: f64, u_max: f64, cfg: &ShieldConfig) -> Result<ShieldOutcome, ShieldError> {
    if !(cfg.epsilon >= 0.0 && cfg.tolerance >= 0.0 && cfg.epsilon.is_finite()) {
        return Err(ShieldError::Config);
    }
    if !(u_min <= u_max && u_min.is_finite() && u_max.is_finite()) {
        return Err(ShieldError::Interval(u_min, u_max));
    }
    if !p_bid.is_finite() {
        return Err(ShieldError::Bid(p_bid));
    }
    if !cfg.enabled {
        return Ok(ShieldOutcome { original_bid: p_bid, shielded_bid: p_bid, activated: false, penalty: 0.0 });
    }
    let shielded = p_bid.clamp(u_min, u_max);
    let mut out = ShieldOutcome { original_bid: p_bid, shielded_bid: shielded, activated: false, penalty: 0.0 };
    out.activated = out.intervention() > cfg.tolerance;
    out.penalty = shield_penalty(&out, cfg);
    Ok(out)
}

/// [`project_bid`] against a computed interval.
pub fn project_onto_interval(
    p_bid: f64,
    interval: &FeasibleExportInterval,
    cfg: &ShieldConfig,
) -> Result<ShieldOutcome, ShieldError> {
    project_bid(p_bid, interval.u_min, interval.u_max, cfg)
}

/// `ε·|p̃ − p|` for an activated shield, zero otherwise.
pub fn shield_penalty(outcome: &ShieldOutcome, cfg: &ShieldConfig) -> f64 {
    if outcome.activated {
        cfg.epsilon * outcome.intervention()
    } else {
        0.0
    }
}
