// Independent reference solvers used to check the production code.
#![allow(dead_code)]

use vpp_core::ders::{AvailabilityDraw, DerFleet, DerKind, DerUnit, UnitConditions};
use vpp_core::grid::{
    build_network, evaluate_limits, solve_power_flow, BranchSpec, BusSpec, InjectionProfile, NetworkModel, NetworkSpec,
    PowerFlowSolution,
};
use rand::Rng;
use vpp_core::market::{Bid, MarketOutcome};

/// Welfare-maximizing clearing by vertex enumeration: at an optimum at most
/// one bid is fractional, the rest sit at zero or their full quantity.
pub fn market_welfare(supply: &[Bid], demand: &[Bid]) -> f64 {
    let bids: Vec<(f64, f64, f64)> = supply
        .iter()
        .map(|b| (-b.price, b.quantity, 1.0))
        .chain(demand.iter().map(|b| (b.price, b.quantity, -1.0)))
        .collect();
    let n = bids.len();
    let mut best = 0.0f64;
    for mask in 0u32..(1 << n) {
        // Net supply minus demand with every bid at a bound.
        let at_bound = |skip: Option<usize>| {
            let (mut w, mut bal) = (0.0, 0.0);
            for (k, &(value, q, sign)) in bids.iter().enumerate() {
                if Some(k) != skip && mask & (1 << k) != 0 {
                    w += value * q;
                    bal += sign * q;
                }
            }
            (w, bal)
        };
        let (w, bal) = at_bound(None);
        if bal.abs() <= 1e-9 {
            best = best.max(w);
        }
        for j in 0..n {
            if mask & (1 << j) != 0 {
                continue;
            }
            let (w, bal) = at_bound(Some(j));
            let (value, q, sign) = bids[j];
            let x = -bal * sign;
            if x > 0.0 && x < q {
                best = best.max(w + value * x);
            }
        }
    }
    best
}

/// A radial three-bus feeder, chain (0-1-2) or star (0-1, 0-2).
pub fn three_bus(chain: bool, lines: [(f64, f64, f64); 2], v_band: (f64, f64)) -> NetworkModel {
    let bus = |id| BusSpec { id, v_min: v_band.0, v_max: v_band.1 };
    let from2 = if chain { 1 } else { 0 };
    build_network(&NetworkSpec {
        buses: vec![bus(0), bus(1), bus(2)],
        branches: vec![
            BranchSpec { from: 0, to: 1, r: lines[0].0, x: lines[0].1, s_max: lines[0].2 },
            BranchSpec { from: from2, to: 2, r: lines[1].0, x: lines[1].1, s_max: lines[1].2 },
        ],
        root_id: 0,
        base_power: 1000.0,
        base_voltage: 4.16,
    })
    .unwrap()
}

/// Cheapest dispatch of the fleet's two conventional units meeting export
/// `target`, by grid search over `(p_a, q_a, q_b)` at `res` kW/kvar with
/// `p_b` solved from the exchange equality. Returns `Σ γ p` over the
/// conventional units, or `None` if no grid point is feasible.
pub fn opf_grid_search(net: &NetworkModel, fleet: &DerFleet, hour: usize, target: f64, res: f64) -> Option<f64> {
    let gens: Vec<&DerUnit> = fleet.units().iter().filter(|u| !u.is_load()).collect();
    assert_eq!(gens.len(), 2, "oracle handles two units");
    let params = |u: &DerUnit| match u.kind {
        DerKind::Conventional { p_min, p_max, s_max, cost } => (p_min, p_max, s_max, cost),
        _ => panic!("oracle handles conventional units only"),
    };
    let (a, b) = (params(gens[0]), params(gens[1]));
    let mut base = InjectionProfile::zeros(net.bus_count());
    for u in fleet.units().iter().filter(|u| u.is_load()) {
        let (p, q) = u.load_injection(hour).unwrap();
        base.add(u.bus, p, q);
    }
    let cond = UnitConditions::at(hour);
    let grid = |lo: f64, hi: f64| {
        let n = ((hi - lo) / res).floor() as usize;
        (0..=n).map(move |k| lo + k as f64 * res)
    };
    let mut best: Option<f64> = None;
    for pa in grid(a.0, a.1) {
        let qa_max = (a.2 * a.2 - pa * pa).max(0.0).sqrt();
        for qa in grid(-qa_max, qa_max) {
            for qb in grid(-b.2, b.2) {
                let mut pb = target - base.p.iter().sum::<f64>() - pa;
                let mut sol = None;
                for _ in 0..30 {
                    let mut inj = base.clone();
                    inj.add(gens[0].bus, pa, qa);
                    inj.add(gens[1].bus, pb, qb);
                    let Ok(s) = solve_power_flow(net, &inj, 1.0) else { break };
                    let mismatch = s.pcc_active + target;
                    if mismatch.abs() < 1e-7 {
                        sol = Some(s);
                        break;
                    }
                    pb += mismatch;
                }
                let Some(s) = sol else { continue };
                if !gens[0].contains(pa, qa, &cond) || !gens[1].contains(pb, qb, &cond) {
                    continue;
                }
                if !evaluate_limits(net, &s).feasible {
                    continue;
                }
                let cost = a.3 * pa + b.3 * pb;
                if best.is_none_or(|c| cost < c) {
                    best = Some(cost);
                }
            }
        }
    }
    best
}

pub fn no_renewables(fleet: &DerFleet) -> AvailabilityDraw {
    AvailabilityDraw::none(fleet.len())
}

/// Branch-flow residual rebuilt from the published solution fields alone.
pub fn residual(net: &NetworkModel, inj: &InjectionProfile, sol: &PowerFlowSolution) -> f64 {
    let base = net.base_power();
    let pu = |x: f64| x / base;
    let v2: Vec<f64> = sol.v.iter().map(|v| v * v).collect();
    let mut worst: f64 = 0.0;
    for (k, br) in net.branches().iter().enumerate() {
        let (mut down_p, mut down_q) = (0.0, 0.0);
        for (c, child) in net.branches().iter().enumerate() {
            if child.from == br.to {
                down_p += pu(sol.p[c]);
                down_q += pu(sol.q[c]);
            }
        }
        let (p, q, l) = (pu(sol.p[k]), pu(sol.q[k]), sol.i_sq[k]);
        let eqs = [
            p - (down_p - pu(inj.p[br.to]) + br.r * l),
            q - (down_q - pu(inj.q[br.to]) + br.x * l),
            v2[br.to] - (v2[br.from] - 2.0 * (br.r * p + br.x * q) + (br.r * br.r + br.x * br.x) * l),
            l * v2[br.from] - (p * p + q * q),
        ];
        worst = eqs.iter().fold(worst, |w, e| w.max(e.abs()));
    }
    worst
}

// Prices on a coarse grid so ties and exact stack overlaps are common.
pub fn random_book<R: Rng>(rng: &mut R) -> (Vec<Bid>, Vec<Bid>) {
    let total = rng.random_range(2..=6);
    let n_supply = rng.random_range(1..total);
    let mut bid = |owner: u32| {
        let price = rng.random_range(0..=10) as f64 * 0.5;
        let quantity = if rng.random_bool(0.2) { 100.0 } else { rng.random_range(0.0..200.0) };
        (owner, price, quantity)
    };
    let supply = (0..n_supply).map(|k| bid(k as u32)).map(|(o, p, q)| Bid::supply(o, p, q)).collect();
    let demand = (n_supply..total).map(|k| bid(k as u32)).map(|(o, p, q)| Bid::demand(o, p, q)).collect();
    (supply, demand)
}

pub fn complementary_slackness(out: &MarketOutcome) -> Result<(), String> {
    let eps = 1e-9;
    for c in &out.supply {
        let (p, q, x) = (c.bid.price, c.bid.quantity, c.cleared);
        if p < out.mcp && x < q - eps {
            return Err(format!("supply {p} below mcp {} cleared {x} of {q}", out.mcp));
        }
        if p > out.mcp && x > eps {
            return Err(format!("supply {p} above mcp {} cleared {x}", out.mcp));
        }
    }
    for c in &out.demand {
        let (p, q, x) = (c.bid.price, c.bid.quantity, c.cleared);
        if p > out.mcp && x < q - eps {
            return Err(format!("demand {p} above mcp {} cleared {x} of {q}", out.mcp));
        }
        if p < out.mcp && x > eps {
            return Err(format!("demand {p} below mcp {} cleared {x}", out.mcp));
        }
    }
    Ok(())
}
