//! Uniform-price day-ahead auction.
//!
//! Clearing walks the ascending supply stack against the descending demand
//! stack, which solves the welfare-maximizing LP for single-segment bids. The
//! reported MCP is one element of the set of balance-constraint duals:
//!
//! * a partially cleared bid fixes the price at its own price;
//! * otherwise the MCP is the smallest dual, the larger of the highest cleared
//!   supply price and the highest price of any not fully cleared demand bid;
//! * with nothing cleared it is the midpoint of the bid-ask gap.
//!
//! Equal prices keep input order, so a bid listed first is cleared first.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ders::HOURS;

pub type OwnerId = u32;

/// Owner id reserved for the strategic VPP.
pub const VPP_OWNER: OwnerId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Supply,
    Demand,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub owner: OwnerId,
    pub side: Side,
    /// €/kWh
    pub price: f64,
    /// kW, non-negative.
    pub quantity: f64,
}

impl Bid {
    pub fn supply(owner: OwnerId, price: f64, quantity: f64) -> Self {
        Self { owner, side: Side::Supply, price, quantity }
    }

    pub fn demand(owner: OwnerId, price: f64, quantity: f64) -> Self {
        Self { owner, side: Side::Demand, price, quantity }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketError {
    #[error("no {0:?} bids")]
    EmptySide(Side),
    #[error("bid {index} on the {side:?} side has negative or non-finite price or quantity")]
    InvalidBid { side: Side, index: usize },
    #[error("bid of side {0:?} submitted in the wrong list")]
    WrongSide(Side),
    #[error("rival scenario: {0}")]
    Scenario(&'static str),
    #[error("hour {0} outside 0..24")]
    Hour(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClearedBid {
    pub bid: Bid,
    pub cleared: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BidRef {
    pub side: Side,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketOutcome {
    /// €/kWh
    pub mcp: f64,
    /// Supply bids in input order with their cleared quantities.
    pub supply: Vec<ClearedBid>,
    pub demand: Vec<ClearedBid>,
    /// kW
    pub total_cleared: f64,
    /// The bid whose price became the MCP, if one did.
    pub marginal: Option<BidRef>,
}

impl MarketOutcome {
    /// Social welfare `Σ γ_d p_d − Σ γ_s p_s`, €/h.
    pub fn welfare(&self) -> f64 {
        let d: f64 = self.demand.iter().map(|c| c.bid.price * c.cleared).sum();
        let s: f64 = self.supply.iter().map(|c| c.bid.price * c.cleared).sum();
        d - s
    }

    pub fn balance_residual(&self) -> f64 {
        let d: f64 = self.demand.iter().map(|c| c.cleared).sum();
        let s: f64 = self.supply.iter().map(|c| c.cleared).sum();
        (d - s).abs()
    }

    /// Net quantity cleared for `owner`: supply positive, demand negative, kW.
    pub fn net_cleared(&self, owner: OwnerId) -> f64 {
        let s: f64 = self.supply.iter().filter(|c| c.bid.owner == owner).map(|c| c.cleared).sum();
        let d: f64 = self.demand.iter().filter(|c| c.bid.owner == owner).map(|c| c.cleared).sum();
        s - d
    }
}

fn check(bids: &[Bid], side: Side) -> Result<(), MarketError> {
    if bids.is_empty() {
        return Err(MarketError::EmptySide(side));
    }
    for (index, b) in bids.iter().enumerate() {
        if b.side != side {
            return Err(MarketError::WrongSide(b.side));
        }
        if !(b.price.is_finite() && b.quantity.is_finite() && b.price >= 0.0 && b.quantity >= 0.0) {
            return Err(MarketError::InvalidBid { side, index });
        }
    }
    Ok(())
}

fn stack(bids: &[Bid], ascending: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..bids.len()).collect();
    // Stable sort keeps input order among equal prices.
    if ascending {
        idx.sort_by(|&a, &b| bids[a].price.total_cmp(&bids[b].price));
    } else {
        idx.sort_by(|&a, &b| bids[b].price.total_cmp(&bids[a].price));
    }
    idx
}

/// Clear the auction. Both lists must be non-empty and carry bids of the
/// matching side.
pub fn clear(supply: &[Bid], demand: &[Bid]) -> Result<MarketOutcome, MarketError> {
    check(supply, Side::Supply)?;
    check(demand, Side::Demand)?;

    let s_order = stack(supply, true);
    let d_order = stack(demand, false);
    let mut s_done = alloc::vec![0.0; supply.len()];
    let mut d_done = alloc::vec![0.0; demand.len()];

    let (mut i, mut j) = (0, 0);
    let mut s_left = supply[s_order[0]].quantity;
    let mut d_left = demand[d_order[0]].quantity;
    let mut total = 0.0;
    while i < s_order.len() && j < d_order.len() {
        let (si, dj) = (s_order[i], d_order[j]);
        if supply[si].price > demand[dj].price {
            break;
        }
        if s_left <= d_left {
            s_done[si] = supply[si].quantity;
            d_done[dj] += s_left;
            total += s_left;
            d_left -= s_left;
            i += 1;
            s_left = s_order.get(i).map_or(0.0, |&k| supply[k].quantity);
            if d_left == 0.0 {
                d_done[dj] = demand[dj].quantity;
                j += 1;
                d_left = d_order.get(j).map_or(0.0, |&k| demand[k].quantity);
            }
        } else {
            d_done[dj] = demand[dj].quantity;
            s_done[si] += d_left;
            total += d_left;
            s_left -= d_left;
            j += 1;
            d_left = d_order.get(j).map_or(0.0, |&k| demand[k].quantity);
        }
    }

    let partial = |q: f64, c: f64| c > 0.0 && c < q;
    let mut marginal = None;
    let mcp;
    if let Some(k) = (0..supply.len()).find(|&k| partial(supply[k].quantity, s_done[k])) {
        mcp = supply[k].price;
        marginal = Some(BidRef { side: Side::Supply, index: k });
    } else if let Some(k) = (0..demand.len()).find(|&k| partial(demand[k].quantity, d_done[k])) {
        mcp = demand[k].price;
        marginal = Some(BidRef { side: Side::Demand, index: k });
    } else if total > 0.0 {
        // Lower end of the dual interval.
        let mut best = f64::NEG_INFINITY;
        for k in 0..supply.len() {
            if s_done[k] > 0.0 && supply[k].price > best {
                best = supply[k].price;
                marginal = Some(BidRef { side: Side::Supply, index: k });
            }
        }
        for k in 0..demand.len() {
            if d_done[k] < demand[k].quantity && demand[k].price > best {
                best = demand[k].price;
                marginal = Some(BidRef { side: Side::Demand, index: k });
            }
        }
        mcp = best;
    } else {
        let live = |b: &&Bid| b.quantity > 0.0;
        let ask = supply.iter().filter(live).map(|b| b.price).reduce(f64::min);
        let bid = demand.iter().filter(live).map(|b| b.price).reduce(f64::max);
        let ask = ask.unwrap_or_else(|| supply.iter().map(|b| b.price).fold(f64::INFINITY, f64::min));
        let bid = bid.unwrap_or_else(|| demand.iter().map(|b| b.price).fold(f64::NEG_INFINITY, f64::max));
        mcp = 0.5 * (ask + bid);
    }

    Ok(MarketOutcome {
        mcp,
        supply: supply.iter().zip(s_done).map(|(&bid, cleared)| ClearedBid { bid, cleared }).collect(),
        demand: demand.iter().zip(d_done).map(|(&bid, cleared)| ClearedBid { bid, cleared }).collect(),
        total_cleared: total,
        marginal,
    })
}

/// Day-ahead cash flow of `owner`: cleared supply earns, cleared demand pays, €.
pub fn settle(outcome: &MarketOutcome, owner: OwnerId, dt: f64) -> f64 {
    outcome.net_cleared(owner) * outcome.mcp * dt
}

/// Price-maker hour: cheap rival supply, a gap the VPP can fill, and a next
/// rival offer that caps the useful bid price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinnedHour {
    pub hour: usize,
    /// Cheap rival supply blocks, (price €/kWh, quantity kW).
    pub cheap: Vec<(f64, f64)>,
    /// Price of the next rival supply offer, €/kWh.
    pub next_price: f64,
    /// Rival supply at and above `next_price`, (price, quantity).
    pub expensive: Vec<(f64, f64)>,
    /// Demand in excess of the cheap supply, kW.
    pub gap: f64,
    /// Relative standard deviation of the gap.
    pub gap_jitter: f64,
    /// Demand block prices (all above `next_price`) and shares of the total.
    pub demand: Vec<(f64, f64)>,
}

/// Seeded rival bidding around an hourly anchor price.
///
/// Supply block `k` is offered at `anchor * (1 + supply[k].0)` with quantity
/// `depth * supply[k].1`; demand block `k` at `anchor * (1 + demand[k].0)` with
/// quantity `depth * demand[k].1`. Exactly one supply offset is zero; that
/// block straddles `depth` so the unperturbed clearing price is the anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RivalScenario {
    /// €/kWh per hour.
    pub anchors: Vec<f64>,
    /// Cleared rival volume per hour, kW.
    pub depth: Vec<f64>,
    /// (relative price offset, quantity share of depth)
    pub supply: Vec<(f64, f64)>,
    /// (relative premium over the anchor, share of depth); shares sum to one.
    pub demand: Vec<(f64, f64)>,
    /// Relative standard deviation of each block price.
    pub price_jitter: f64,
    /// Relative standard deviation of each block quantity.
    pub quantity_jitter: f64,
    pub pinned: Vec<PinnedHour>,
}

impl RivalScenario {
    pub fn validate(&self) -> Result<(), MarketError> {
        use MarketError::Scenario;
        if self.anchors.len() != HOURS || self.depth.len() != HOURS {
            return Err(Scenario("anchors and depth need 24 values"));
        }
        if !self.anchors.iter().chain(&self.depth).all(|x| x.is_finite() && *x > 0.0) {
            return Err(Scenario("anchors and depth must be positive"));
        }
        if self.supply.iter().filter(|b| b.0 == 0.0).count() != 1 {
            return Err(Scenario("exactly one supply block must sit at the anchor"));
        }
        if self.supply.iter().any(|b| !(b.0 > -1.0 && b.1 >= 0.0 && b.0.is_finite() && b.1.is_finite())) {
            return Err(Scenario("supply offsets must exceed -1 and shares be non-negative"));
        }
        let below: f64 = self.supply.iter().filter(|b| b.0 < 0.0).map(|b| b.1).sum();
        let through: f64 = below + self.supply.iter().filter(|b| b.0 == 0.0).map(|b| b.1).sum::<f64>();
        if !(below < 1.0 && through > 1.0) {
            return Err(Scenario("the anchor block must straddle the demand volume"));
        }
        let shares: f64 = self.demand.iter().map(|b| b.1).sum();
        if self.demand.is_empty() || (shares - 1.0).abs() > 1e-9 || self.demand.iter().any(|b| !(b.0 > 0.0 && b.1 >= 0.0)) {
            return Err(Scenario("demand premiums must be positive and shares sum to one"));
        }
        if !(self.price_jitter >= 0.0 && self.quantity_jitter >= 0.0) {
            return Err(Scenario("jitter must be non-negative"));
        }
        for pin in &self.pinned {
            if pin.hour >= HOURS {
                return Err(Scenario("pinned hour outside 0..24"));
            }
            if pin.cheap.iter().any(|b| b.0 >= pin.next_price) || pin.expensive.iter().any(|b| b.0 < pin.next_price) {
                return Err(Scenario("pinned cheap supply must lie below the next rival price"));
            }
            if !pin.expensive.iter().any(|b| b.0 == pin.next_price) {
                return Err(Scenario("pinned hour needs an offer at the next rival price"));
            }
            if pin.demand.iter().any(|b| b.0 <= pin.next_price) || pin.demand.is_empty() {
                return Err(Scenario("pinned demand must be priced above the next rival price"));
            }
            if !(pin.gap > 0.0 && pin.gap_jitter >= 0.0) {
                return Err(Scenario("pinned gap must be positive"));
            }
        }
        Ok(())
    }

    pub fn pinned_at(&self, hour: usize) -> Option<&PinnedHour> {
        self.pinned.iter().find(|p| p.hour == hour)
    }
}

fn jitter<R: Rng + ?Sized>(rng: &mut R, rel: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    (1.0 + rel * z).max(0.0)
}

/// Rival supply and demand bids for hour `t`. Owners are numbered from 1.
///
/// The number of normal draws per hour is fixed by the scenario shape, so the
/// stream position does not depend on the realized values.
pub fn generate_rival_bids<R: Rng + ?Sized>(
    t: usize,
    scenario: &RivalScenario,
    rng: &mut R,
) -> Result<(Vec<Bid>, Vec<Bid>), MarketError> {
    if t >= HOURS {
        return Err(MarketError::Hour(t));
    }
    let mut owner = 0;
    let mut next_owner = || {
        owner += 1;
        owner
    };
    if let Some(pin) = scenario.pinned_at(t) {
        let mut supply = Vec::new();
        let cheap_total: f64 = pin.cheap.iter().map(|b| b.1).sum();
        for &(p, q) in pin.cheap.iter().chain(&pin.expensive) {
            supply.push(Bid::supply(next_owner(), p, q));
        }
        let volume = cheap_total + pin.gap * jitter(rng, pin.gap_jitter);
        let shares: f64 = pin.demand.iter().map(|b| b.1).sum();
        let demand = pin.demand.iter().map(|&(p, s)| Bid::demand(next_owner(), p, volume * s / shares)).collect();
        return Ok((supply, demand));
    }
    let anchor = scenario.anchors[t];
    let depth = scenario.depth[t];
    let mut block = |offset: f64, share: f64, side: Side, rng: &mut R| {
        let price = anchor * (1.0 + offset) * jitter(rng, scenario.price_jitter);
        let quantity = depth * share * jitter(rng, scenario.quantity_jitter);
        Bid { owner: next_owner(), side, price, quantity }
    };
    let supply = scenario.supply.iter().map(|&(o, s)| block(o, s, Side::Supply, rng)).collect();
    let demand = scenario.demand.iter().map(|&(o, s)| block(o, s, Side::Demand, rng)).collect();
    Ok((supply, demand))
}
