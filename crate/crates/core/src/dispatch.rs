//! Internal optimal power flow of the VPP and the feasible PCC export interval.
//!
//! `solve_opf` minimizes `Σ γ_i p_i` over the controllable units subject to
//! capability sets, the DistFlow equations, branch and voltage limits, and a
//! fixed PCC exchange `P_01 = -P_disp`.
//!
//! A merit-order dispatch with a loss fixed point gives the starting point;
//! each unit covers the reactive demand at its own bus where it can. When that
//! point is feasible with slack on every network limit it is returned as is.
//! Otherwise a sequential LP refines it: sensitivities come from finite
//! differences of the power flow, capability circles and branch limits are
//! replaced by inscribed polygons, and network rows are elastic with a large
//! penalty inside a trust region.
//!
//! Feasibility of a returned dispatch is always judged on the nonlinear power
//! flow, never on the linear model.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ders::{AvailabilityDraw, DerError, DerFleet, DerKind, UnitConditions};
use crate::grid::{
    evaluate_limits, solve_power_flow_with, GridError, InjectionProfile, LimitReport, NetworkModel,
    PowerFlowSolution, SweepOptions,
};
use crate::lp::{Lp, LpOutcome};
use crate::math::{cos, hypot, sin, sqrt};

/// Output below this is treated as idle when picking the marginal unit, kW.
pub const DISPATCH_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpfOptions {
    /// Allowed |P_01 + P_disp|, kW. Also the bisection tolerance of the interval.
    pub pcc_tolerance: f64,
    /// Step length, hours.
    pub dt: f64,
    /// Substation voltage, p.u.
    pub v_root: f64,
    pub sweep_tolerance: f64,
    pub sweep_iterations: usize,
    /// Sequential-LP iteration cap.
    pub max_iterations: usize,
    /// Sides of the polygons replacing capability and branch circles.
    pub polygon_sides: usize,
    /// Finite-difference step, kW or kvar.
    pub fd_step: f64,
}

impl Default for OpfOptions {
    fn default() -> Self {
        Self {
            pcc_tolerance: 1.0,
            dt: 1.0,
            v_root: 1.0,
            sweep_tolerance: 1e-10,
            sweep_iterations: 100,
            max_iterations: 40,
            polygon_sides: 32,
            fd_step: 1.0,
        }
    }
}

impl OpfOptions {
    fn sweep(&self) -> SweepOptions {
        SweepOptions { tolerance: self.sweep_tolerance, max_iterations: self.sweep_iterations }
    }
}

/// Constraint groups used to explain an empty feasible set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintFamily {
    Capability,
    PccBalance,
    Voltage,
    BranchFlow,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DispatchError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Der(#[from] DerError),
    #[error("dispatch target {0} kW is not finite")]
    Target(f64),
    #[error("availability draw has {got} entries, fleet has {expected} units")]
    Availability { expected: usize, got: usize },
    #[error("linear subproblem failed: {0}")]
    Lp(&'static str),
    #[error("no feasible PCC exchange; binding constraints: {0:?}")]
    NoFeasibleExport(ConstraintFamily),
    #[error("feasible exchanges are not an interval: {probe} kW infeasible inside [{u_min}, {u_max}]")]
    NonConvex { u_min: f64, u_max: f64, probe: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchResult {
    /// Requested export `P_disp`, kW.
    pub target: f64,
    /// `(p, q)` per fleet unit in kW / kvar; loads carry their fixed injection.
    pub setpoints: Vec<(f64, f64)>,
    /// OPF objective `Σ γ_i p_i − Σ γ_n p_n` over all controllable units, €/h.
    pub objective: f64,
    /// Internal cost over the step: generation cost of renewable and
    /// conventional units minus load revenue, €.
    pub c_vpp: f64,
    /// Production marginal cost, €/kWh.
    pub pmc: f64,
    pub feasible: bool,
    /// `P_01 + P_disp`, kW.
    pub pcc_mismatch: f64,
    pub flow: PowerFlowSolution,
    pub limits: LimitReport,
    /// Whether the sequential LP ran.
    pub refined: bool,
    pub iterations: usize,
}

impl DispatchResult {
    /// Realized export `-P_01`, kW.
    pub fn export(&self) -> f64 {
        -self.flow.pcc_active
    }
}

/// Feasible PCC exchange `[u_min, u_max]` with witnessing dispatches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleExportInterval {
    pub u_min: f64,
    pub u_max: f64,
    pub min_certificate: DispatchResult,
    pub max_certificate: DispatchResult,
    /// Number of OPF solves spent.
    pub evaluations: usize,
}

impl FeasibleExportInterval {
    pub fn contains(&self, u: f64) -> bool {
        self.u_min <= u && u <= self.u_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    /// Minimize cost at a fixed exchange.
    Target(f64),
    /// Minimize `dir * P_01`: `+1` pushes export up, `-1` import.
    Extreme(f64),
}

// Penalty weights of the elastic rows: € per kW of PCC or branch excess and
// per milli-p.u. of voltage excess.
const PENALTY: f64 = 1e3;
// Cost on |Δq| that keeps reactive setpoints from drifting, €/kvar.
const Q_REGULARIZER: f64 = 1e-4;
// Voltage rows keep this far inside the band, p.u.
const V_MARGIN: f64 = 1e-5;
// Skip the refinement only with at least this slack.
const SKIP_LOADING: f64 = 0.97;
const SKIP_VOLTAGE: f64 = 0.003;

struct Problem<'a> {
    net: &'a NetworkModel,
    fleet: &'a DerFleet,
    opts: &'a OpfOptions,
    hour: usize,
    p_res: Vec<f64>,
    ctrl: Vec<usize>,
    bus: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    s_max: Vec<f64>,
    /// Reactive-to-active ratio cap of power-factor limited units.
    tan: Vec<Option<f64>>,
    cost: Vec<f64>,
    rank: Vec<u8>,
    /// Reactive consumption of the load sharing each unit's bus, kvar.
    local_q: Vec<f64>,
    base: InjectionProfile,
    load_p: f64,
    load_revenue: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Violation {
    pcc: f64,
    voltage: f64,
    branch: f64,
}

impl Violation {
    fn total(&self) -> f64 {
        PENALTY * (self.pcc + self.voltage + self.branch)
    }

    fn family(&self) -> ConstraintFamily {
        if self.voltage >= self.branch && self.voltage >= self.pcc && self.voltage > 0.0 {
            ConstraintFamily::Voltage
        } else if self.branch >= self.pcc && self.branch > 0.0 {
            ConstraintFamily::BranchFlow
        } else if self.pcc > 0.0 {
            ConstraintFamily::PccBalance
        } else {
            ConstraintFamily::Capability
        }
    }
}

// Linear row over Δx (length 2n), `a·Δ <= b` or `a·Δ = b`, penalized per unit
// of excess when soft.
struct Row {
    a: Vec<f64>,
    b: f64,
    eq: bool,
}

impl Row {
    fn excess(&self, d: &[f64]) -> f64 {
        let v: f64 = self.a.iter().zip(d).map(|(a, x)| a * x).sum::<f64>() - self.b;
        if self.eq {
            v.abs()
        } else {
            v.max(0.0)
        }
    }
}

struct Trial {
    x: Vec<f64>,
    flow: PowerFlowSolution,
    merit: f64,
}

impl<'a> Problem<'a> {
    fn new(
        net: &'a NetworkModel,
        fleet: &'a DerFleet,
        hour: usize,
        avail: &AvailabilityDraw,
        opts: &'a OpfOptions,
    ) -> Result<Self, DispatchError> {
        if avail.realized.len() != fleet.len() {
            return Err(DispatchError::Availability { expected: fleet.len(), got: avail.realized.len() });
        }
        let mut base = InjectionProfile::zeros(net.bus_count());
        let (mut load_p, mut load_revenue) = (0.0, 0.0);
        let mut q_at_bus = vec![0.0; net.bus_count()];
        for k in fleet.loads() {
            let unit = &fleet.units()[k];
            let (p, q) = unit.load_injection(hour)?;
            base.add(unit.bus, p, q);
            q_at_bus[unit.bus] -= q;
            load_p -= p;
            load_revenue -= p * unit.cost();
        }
        let ctrl: Vec<usize> = fleet.controllable().collect();
        let n = ctrl.len();
        let mut pb = Problem {
            net,
            fleet,
            opts,
            hour,
            p_res: avail.realized.clone(),
            bus: Vec::with_capacity(n),
            lo: Vec::with_capacity(n),
            hi: Vec::with_capacity(n),
            s_max: Vec::with_capacity(n),
            tan: Vec::with_capacity(n),
            cost: Vec::with_capacity(n),
            rank: Vec::with_capacity(n),
            local_q: Vec::with_capacity(n),
            ctrl,
            base,
            load_p,
            load_revenue,
        };
        for &k in &pb.ctrl {
            let unit = &fleet.units()[k];
            let cond = fleet.conditions(k, hour, avail, opts.dt);
            let (lo, hi) = unit.active_range(&cond).unwrap_or((0.0, 0.0));
            pb.bus.push(unit.bus);
            pb.lo.push(lo);
            pb.hi.push(hi);
            pb.s_max.push(unit.s_max().unwrap_or(0.0));
            pb.cost.push(unit.cost());
            pb.local_q.push(q_at_bus[unit.bus]);
            let (tan, rank) = match &unit.kind {
                DerKind::Renewable { pf_floor, .. } => {
                    let tan = if *pf_floor <= 0.0 { None } else { Some(sqrt(1.0 - pf_floor * pf_floor) / pf_floor) };
                    (tan, 0)
                }
                DerKind::Storage { .. } => (None, 1),
                _ => (None, 2),
            };
            pb.tan.push(tan);
            pb.rank.push(rank);
        }
        Ok(pb)
    }

    fn n(&self) -> usize {
        self.ctrl.len()
    }

    /// Largest |q| allowed at active output `p`, shrunk by a relative 1e-9 so
    /// that membership survives rounding.
    fn q_cap(&self, k: usize, p: f64) -> f64 {
        let s = self.s_max[k];
        let mut cap = sqrt((s * s - p * p).max(0.0));
        if let Some(t) = self.tan[k] {
            cap = cap.min(p.max(0.0) * t);
        }
        cap * (1.0 - 1e-9)
    }

    fn clamp(&self, x: &mut [f64]) {
        for k in 0..self.n() {
            let p = x[2 * k].clamp(self.lo[k], self.hi[k]);
            let p = p.clamp(-self.s_max[k], self.s_max[k]);
            let cap = self.q_cap(k, p);
            x[2 * k] = p;
            x[2 * k + 1] = x[2 * k + 1].clamp(-cap, cap);
        }
    }

    fn flow(&self, x: &[f64]) -> Result<PowerFlowSolution, GridError> {
        let mut inj = self.base.clone();
        for k in 0..self.n() {
            inj.add(self.bus[k], x[2 * k], x[2 * k + 1]);
        }
        solve_power_flow_with(self.net, &inj, self.opts.v_root, &self.opts.sweep())
    }

    fn gen_cost(&self, x: &[f64]) -> f64 {
        (0..self.n()).map(|k| self.cost[k] * x[2 * k]).sum()
    }

    fn inner_radius(&self) -> f64 {
        cos(PI / self.opts.polygon_sides as f64)
    }

    fn violation(&self, sol: &PowerFlowSolution, mode: Mode) -> Violation {
        let mut out = Violation::default();
        if let Mode::Target(u) = mode {
            out.pcc = (sol.pcc_active + u).abs();
        }
        for (i, bus) in self.net.buses().iter().enumerate() {
            let v = sol.v[i];
            out.voltage += 1e3 * ((bus.v_min + V_MARGIN - v).max(0.0) + (v - bus.v_max + V_MARGIN).max(0.0));
        }
        let base = self.net.base_power();
        let r = self.inner_radius();
        for (k, br) in self.net.branches().iter().enumerate() {
            out.branch += (hypot(sol.p[k], sol.q[k]) - br.s_max * base * r).max(0.0);
        }
        out
    }

    fn merit(&self, x: &[f64], sol: &PowerFlowSolution, mode: Mode) -> f64 {
        let objective = match mode {
            Mode::Target(_) => self.gen_cost(x),
            Mode::Extreme(dir) => dir * sol.pcc_active,
        };
        objective + self.violation(sol, mode).total()
    }

    /// Active setpoints for a total generation requirement, cheapest first.
    /// Returns the unmet remainder (positive: short, negative: surplus).
    fn merit_order(&self, total: f64, x: &mut [f64]) -> f64 {
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by(|&a, &b| {
            self.cost[a].total_cmp(&self.cost[b]).then(self.rank[a].cmp(&self.rank[b])).then(a.cmp(&b))
        });
        let mut rem = total;
        for k in 0..self.n() {
            x[2 * k] = self.lo[k];
            rem -= self.lo[k];
        }
        for &k in &order {
            if rem <= 0.0 {
                break;
            }
            let add = rem.min(self.hi[k] - self.lo[k]);
            x[2 * k] += add;
            rem -= add;
        }
        rem
    }

    fn local_reactive(&self, x: &mut [f64]) {
        for k in 0..self.n() {
            let cap = self.q_cap(k, x[2 * k]);
            x[2 * k + 1] = self.local_q[k].clamp(-cap, cap);
        }
    }

    /// Merit order plus loss fixed point on the PCC exchange.
    fn warm_start(&self, u: f64) -> Result<(Vec<f64>, PowerFlowSolution), GridError> {
        let mut x = vec![0.0; 2 * self.n()];
        let mut total = u + self.load_p;
        self.merit_order(total, &mut x);
        self.local_reactive(&mut x);
        let mut sol = self.flow(&x)?;
        for _ in 0..30 {
            let mismatch = sol.pcc_active + u;
            if mismatch.abs() <= 1e-3 * self.opts.pcc_tolerance {
                break;
            }
            total += mismatch;
            let rem = self.merit_order(total, &mut x);
            self.local_reactive(&mut x);
            sol = self.flow(&x)?;
            if rem.abs() > 1e-9 && rem.signum() == mismatch.signum() {
                // Saturated: more iterations cannot close the gap.
                break;
            }
        }
        Ok((x, sol))
    }

    fn extreme_start(&self, dir: f64) -> Result<(Vec<f64>, PowerFlowSolution), GridError> {
        let mut x = vec![0.0; 2 * self.n()];
        for k in 0..self.n() {
            x[2 * k] = if dir > 0.0 { self.hi[k] } else { self.lo[k] };
        }
        self.local_reactive(&mut x);
        let sol = self.flow(&x)?;
        Ok((x, sol))
    }

    fn polygon_edges(&self, p: f64, q: f64, radius: f64, spread: usize) -> Vec<usize> {
        let sides = self.opts.polygon_sides;
        if hypot(p, q) < 0.3 * radius {
            return (0..sides).collect();
        }
        let step = 2.0 * PI / sides as f64;
        let mut angle = libm::atan2(q, p);
        if angle < 0.0 {
            angle += 2.0 * PI;
        }
        let centre = (angle / step) as isize;
        (-(spread as isize)..=spread as isize)
            .map(|o| (centre + o).rem_euclid(sides as isize) as usize)
            .collect()
    }

    /// Outward normal of polygon edge `j`; vertices sit at angles `2πj/N`.
    fn edge_normal(&self, j: usize) -> (f64, f64) {
        let phi = (j as f64 + 0.5) * 2.0 * PI / self.opts.polygon_sides as f64;
        (cos(phi), sin(phi))
    }

    fn refine(
        &self,
        mut x: Vec<f64>,
        mut sol: PowerFlowSolution,
        mode: Mode,
    ) -> Result<(Vec<f64>, PowerFlowSolution, usize), DispatchError> {
        let n = self.n();
        let nv = 2 * n;
        if n == 0 {
            return Ok((x, sol, 0));
        }
        let span = (0..n).map(|k| self.hi[k] - self.lo[k]).fold(0.0, f64::max);
        let smax = self.s_max.iter().copied().fold(0.0, f64::max);
        let mut rho_p = (0.5 * span).max(10.0);
        let mut rho_q = (0.5 * smax).max(10.0);
        let mut merit = self.merit(&x, &sol, mode);
        let base = self.net.base_power();
        let h = self.opts.fd_step;
        let mut iterations = 0;

        while iterations < self.opts.max_iterations {
            iterations += 1;
            // Finite-difference sensitivities of every flow quantity.
            let nb = self.net.bus_count();
            let nbr = self.net.branch_count();
            let mut d_pcc = vec![0.0; nv];
            let mut d_v = vec![vec![0.0; nv]; nb];
            let mut d_p = vec![vec![0.0; nv]; nbr];
            let mut d_q = vec![vec![0.0; nv]; nbr];
            for j in 0..nv {
                let mut xj = x.clone();
                let mut step = h;
                xj[j] += step;
                let sj = match self.flow(&xj) {
                    Ok(s) => s,
                    Err(_) => {
                        step = -h;
                        xj[j] = x[j] + step;
                        self.flow(&xj)?
                    }
                };
                d_pcc[j] = (sj.pcc_active - sol.pcc_active) / step;
                for i in 0..nb {
                    d_v[i][j] = (sj.v[i] - sol.v[i]) / step;
                }
                for b in 0..nbr {
                    d_p[b][j] = (sj.p[b] - sol.p[b]) / step;
                    d_q[b][j] = (sj.q[b] - sol.q[b]) / step;
                }
            }

            let rho = |j: usize| if j % 2 == 0 { rho_p } else { rho_q };
            let mut soft: Vec<Row> = Vec::new();
            if let Mode::Target(u) = mode {
                soft.push(Row { a: d_pcc.clone(), b: -u - sol.pcc_active, eq: true });
            }
            for (i, bus) in self.net.buses().iter().enumerate() {
                let reach: f64 = (0..nv).map(|j| d_v[i][j].abs() * rho(j)).sum();
                let v = sol.v[i];
                if v + reach > bus.v_max - 0.005 {
                    let a = d_v[i].iter().map(|g| 1e3 * g).collect();
                    soft.push(Row { a, b: 1e3 * (bus.v_max - V_MARGIN - v), eq: false });
                }
                if v - reach < bus.v_min + 0.005 {
                    let a = d_v[i].iter().map(|g| -1e3 * g).collect();
                    soft.push(Row { a, b: 1e3 * (v - bus.v_min - V_MARGIN), eq: false });
                }
            }
            let r_in = self.inner_radius();
            for (b, br) in self.net.branches().iter().enumerate() {
                let limit = br.s_max * base;
                let s0 = hypot(sol.p[b], sol.q[b]);
                let reach: f64 = (0..nv).map(|j| (d_p[b][j].abs() + d_q[b][j].abs()) * rho(j)).sum();
                if s0 + reach < 0.5 * limit {
                    continue;
                }
                for e in self.polygon_edges(sol.p[b], sol.q[b], limit, 3) {
                    let (c, s) = self.edge_normal(e);
                    let a = (0..nv).map(|j| c * d_p[b][j] + s * d_q[b][j]).collect();
                    soft.push(Row { a, b: limit * r_in - (c * sol.p[b] + s * sol.q[b]), eq: false });
                }
            }

            // Hard rows: power-factor cuts and capability polygons, each
            // relaxed so that Δ = 0 stays feasible.
            let mut hard: Vec<Row> = Vec::new();
            for k in 0..n {
                let (p0, q0) = (x[2 * k], x[2 * k + 1]);
                if let Some(t) = self.tan[k] {
                    for sgn in [1.0, -1.0] {
                        let mut a = vec![0.0; nv];
                        a[2 * k] = -t;
                        a[2 * k + 1] = sgn;
                        hard.push(Row { a, b: (t * p0 - sgn * q0).max(0.0), eq: false });
                    }
                }
                let s = self.s_max[k];
                for e in self.polygon_edges(p0, q0, s, 3) {
                    let (c, sn) = self.edge_normal(e);
                    let mut a = vec![0.0; nv];
                    a[2 * k] = c;
                    a[2 * k + 1] = sn;
                    let now = c * p0 + sn * q0;
                    hard.push(Row { a, b: (s * r_in - now).max(0.0), eq: false });
                }
            }

            // Column layout: y_p (n), q+ (n), q- (n), then slacks.
            let lows: Vec<f64> = (0..n).map(|k| (-rho_p).max(self.lo[k] - x[2 * k]).min(0.0)).collect();
            let ups: Vec<f64> = (0..n).map(|k| rho_p.min(self.hi[k] - x[2 * k]).max(0.0)).collect();
            let n_slack: usize = soft.iter().map(|r| if r.eq { 2 } else { 1 }).sum();
            let cols = 3 * n + n_slack;
            let mut lp = Lp::new(cols);
            for k in 0..n {
                let (cp, cq) = match mode {
                    Mode::Target(_) => (self.cost[k], 0.0),
                    Mode::Extreme(dir) => (dir * d_pcc[2 * k], dir * d_pcc[2 * k + 1]),
                };
                lp.cost(k, cp);
                lp.cost(n + k, Q_REGULARIZER + cq);
                lp.cost(2 * n + k, Q_REGULARIZER - cq);
                lp.upper(k, ups[k] - lows[k]);
                lp.upper(n + k, rho_q);
                lp.upper(2 * n + k, rho_q);
            }
            let expand = |a: &[f64]| -> (Vec<f64>, f64) {
                let mut row = vec![0.0; cols];
                let mut shift = 0.0;
                for k in 0..n {
                    row[k] = a[2 * k];
                    shift += a[2 * k] * lows[k];
                    row[n + k] = a[2 * k + 1];
                    row[2 * n + k] = -a[2 * k + 1];
                }
                (row, shift)
            };
            let mut col = 3 * n;
            for r in &soft {
                let (mut row, shift) = expand(&r.a);
                row[col] = -1.0;
                lp.cost(col, PENALTY);
                if r.eq {
                    row[col + 1] = 1.0;
                    lp.cost(col + 1, PENALTY);
                    lp.eq(row, r.b - shift);
                    col += 2;
                } else {
                    lp.le(row, r.b - shift);
                    col += 1;
                }
            }
            for r in &hard {
                let (row, shift) = expand(&r.a);
                lp.le(row, r.b - shift);
            }

            let y = match lp.solve() {
                LpOutcome::Optimal { x, .. } => x,
                LpOutcome::Infeasible => return Err(DispatchError::Lp("infeasible subproblem")),
                LpOutcome::Unbounded => return Err(DispatchError::Lp("unbounded subproblem")),
                LpOutcome::IterationLimit => return Err(DispatchError::Lp("simplex iteration limit")),
            };
            let mut d = vec![0.0; nv];
            for k in 0..n {
                d[2 * k] = y[k] + lows[k];
                d[2 * k + 1] = y[n + k] - y[2 * n + k];
            }

            // Predicted merit decrease under the linear model.
            let lin_obj = |d: &[f64]| -> f64 {
                (0..n)
                    .map(|k| match mode {
                        Mode::Target(_) => self.cost[k] * d[2 * k],
                        Mode::Extreme(dir) => dir * (d_pcc[2 * k] * d[2 * k] + d_pcc[2 * k + 1] * d[2 * k + 1]),
                    })
                    .sum()
            };
            let model = |d: &[f64]| lin_obj(d) + PENALTY * soft.iter().map(|r| r.excess(d)).sum::<f64>();
            let zero = vec![0.0; nv];
            let predicted = model(&zero) - model(&d);
            if predicted <= 1e-7 * (1.0 + merit.abs()) {
                break;
            }

            let mut trial = x.clone();
            for j in 0..nv {
                trial[j] += d[j];
            }
            self.clamp(&mut trial);
            let accepted = match self.flow(&trial) {
                Ok(ts) => {
                    let tm = self.merit(&trial, &ts, mode);
                    let actual = merit - tm;
                    if actual >= 0.1 * predicted {
                        let at_edge = (0..n).any(|k| (d[2 * k].abs() - rho_p).abs() < 1e-9);
                        if actual >= 0.75 * predicted && at_edge {
                            rho_p *= 2.0;
                            rho_q *= 2.0;
                        }
                        Some(Trial { x: trial, flow: ts, merit: tm })
                    } else {
                        None
                    }
                }
                Err(_) => None,
            };
            match accepted {
                Some(t) => {
                    x = t.x;
                    sol = t.flow;
                    merit = t.merit;
                }
                None => {
                    rho_p *= 0.5;
                    rho_q *= 0.5;
                    if rho_p.max(rho_q) < 1e-3 {
                        break;
                    }
                }
            }
        }
        Ok((x, sol, iterations))
    }

    /// Close a residual PCC mismatch with the unit whose exchange sensitivity
    /// is largest and which has room in the needed direction.
    fn correct_exchange(&self, x: &mut Vec<f64>, sol: &mut PowerFlowSolution, u: f64) -> Result<(), GridError> {
        for _ in 0..8 {
            let mismatch = sol.pcc_active + u;
            if mismatch.abs() <= 1e-2 * self.opts.pcc_tolerance {
                return Ok(());
            }
            // Positive mismatch: too much import, raise generation.
            let room = |k: usize| if mismatch > 0.0 { self.hi[k] - x[2 * k] } else { x[2 * k] - self.lo[k] };
            let Some(k) = (0..self.n()).filter(|&k| room(k) > 1e-9).max_by(|&a, &b| room(a).total_cmp(&room(b)))
            else {
                return Ok(());
            };
            let mut trial = x.clone();
            trial[2 * k] += mismatch.signum() * mismatch.abs().min(room(k));
            self.clamp(&mut trial);
            let ts = self.flow(&trial)?;
            if (ts.pcc_active + u).abs() >= mismatch.abs() {
                return Ok(());
            }
            let before = evaluate_limits(self.net, sol).worst_violation;
            let after = evaluate_limits(self.net, &ts).worst_violation;
            if after > before.max(0.0) {
                return Ok(());
            }
            *x = trial;
            *sol = ts;
        }
        Ok(())
    }

    fn result(&self, target: f64, x: &[f64], flow: PowerFlowSolution, refined: bool, iterations: usize) -> DispatchResult {
        let units = self.fleet.units();
        let mut setpoints = vec![(0.0, 0.0); units.len()];
        for (k, &u) in self.ctrl.iter().enumerate() {
            setpoints[u] = (x[2 * k], x[2 * k + 1]);
        }
        for k in self.fleet.loads() {
            setpoints[k] = units[k].load_injection(self.hour).unwrap_or((0.0, 0.0));
        }
        let dt = self.opts.dt;
        let mut gen_cost = 0.0;
        let mut pmc: f64 = 0.0;
        for (k, &u) in self.ctrl.iter().enumerate() {
            let p = x[2 * k];
            if !units[u].is_storage() {
                gen_cost += p * self.cost[k];
            }
            if p > DISPATCH_TOLERANCE {
                pmc = pmc.max(self.cost[k]);
            }
        }
        let limits = evaluate_limits(self.net, &flow);
        let pcc_mismatch = flow.pcc_active + target;
        let mut feasible = limits.feasible && pcc_mismatch.abs() <= self.opts.pcc_tolerance;
        for (k, &u) in self.ctrl.iter().enumerate() {
            let cond = UnitConditions { hour: self.hour, p_res: self.p_res[u], dt };
            feasible &= units[u].contains(x[2 * k], x[2 * k + 1], &cond);
        }
        DispatchResult {
            target,
            setpoints,
            objective: self.gen_cost(x) - self.load_revenue,
            c_vpp: (gen_cost - self.load_revenue) * dt,
            pmc,
            feasible,
            pcc_mismatch,
            flow,
            limits,
            refined,
            iterations,
        }
    }

    fn near_binding(&self, sol: &PowerFlowSolution, limits: &LimitReport) -> bool {
        limits.loading.iter().any(|&l| l > SKIP_LOADING)
            || self
                .net
                .buses()
                .iter()
                .zip(&sol.v)
                .any(|(b, &v)| v < b.v_min + SKIP_VOLTAGE || v > b.v_max - SKIP_VOLTAGE)
    }

    fn solve(&self, target: f64) -> Result<DispatchResult, DispatchError> {
        let (x, sol) = self.warm_start(target)?;
        let limits = evaluate_limits(self.net, &sol);
        let start_ok = limits.feasible && (sol.pcc_active + target).abs() <= self.opts.pcc_tolerance;
        if start_ok && !self.near_binding(&sol, &limits) {
            return Ok(self.result(target, &x, sol, false, 0));
        }
        let (mut x, mut sol, iterations) = self.refine(x, sol, Mode::Target(target))?;
        self.correct_exchange(&mut x, &mut sol, target)?;
        Ok(self.result(target, &x, sol, true, iterations))
    }
}

/// Cost-minimal dispatch exporting `p_disp` kW at the PCC (negative: import).
///
/// `feasible == false` means no dispatch meeting every constraint was found;
/// errors are reserved for solver failures and malformed inputs.
pub fn solve_opf(
    net: &NetworkModel,
    fleet: &DerFleet,
    hour: usize,
    avail: &AvailabilityDraw,
    p_disp: f64,
    opts: &OpfOptions,
) -> Result<DispatchResult, DispatchError> {
    if !p_disp.is_finite() {
        return Err(DispatchError::Target(p_disp));
    }
    Problem::new(net, fleet, hour, avail, opts)?.solve(p_disp)
}

/// `γ` of the most expensive unit producing more than the dispatch tolerance;
/// zero when nothing runs.
pub fn production_marginal_cost(result: &DispatchResult, fleet: &DerFleet) -> f64 {
    fleet
        .units()
        .iter()
        .zip(&result.setpoints)
        .filter(|(u, sp)| !u.is_load() && sp.0 > DISPATCH_TOLERANCE)
        .map(|(u, _)| u.cost())
        .fold(0.0, f64::max)
}

/// The interval of PCC exports for which `solve_opf` finds a feasible
/// dispatch, located to `opts.pcc_tolerance`.
///
/// An extreme-exchange LP run brackets each end, bisection with `solve_opf`
/// as the predicate refines it, and the midpoint is re-checked to catch a
/// feasible set that is not an interval.
pub fn feasible_export_interval(
    net: &NetworkModel,
    fleet: &DerFleet,
    hour: usize,
    avail: &AvailabilityDraw,
    opts: &OpfOptions,
) -> Result<FeasibleExportInterval, DispatchError> {
    let pb = Problem::new(net, fleet, hour, avail, opts)?;
    let tol = opts.pcc_tolerance;
    let mut evaluations = 0;
    let mut probe = |u: f64| -> Result<Option<DispatchResult>, DispatchError> {
        evaluations += 1;
        match pb.solve(u) {
            Ok(r) if r.feasible => Ok(Some(r)),
            Ok(_) => Ok(None),
            // A sweep that fails to converge marks an infeasible exchange.
            Err(DispatchError::Grid(GridError::NonConvergence { .. } | GridError::VoltageCollapse(_))) => Ok(None),
            Err(e) => Err(e),
        }
    };

    // Hard outer bounds. Losses only shrink export, so capacity caps it;
    // import can grow past the load by the losses, so only the PCC rating
    // caps that side.
    let pcc_rating: f64 = net.pcc_branches().iter().map(|&b| net.branches()[b].s_max).sum::<f64>() * net.base_power();
    let cap_hi = ((0..pb.n()).map(|k| pb.hi[k]).sum::<f64>() - pb.load_p).min(pcc_rating) + 2.0 * tol;
    let cap_lo = -pcc_rating - 2.0 * tol;

    // Extreme exchanges under the linearized model.
    let mut guesses = [None, None];
    let mut worst = Violation::default();
    for (slot, dir) in [1.0, -1.0].into_iter().enumerate() {
        let (x, sol) = pb.extreme_start(dir)?;
        let (_, sol, _) = pb.refine(x, sol, Mode::Extreme(dir))?;
        let v = pb.violation(&sol, Mode::Extreme(dir));
        if v.total() == 0.0 {
            guesses[slot] = Some(-sol.pcc_active);
        } else if worst.total() == 0.0 || v.total() < worst.total() {
            worst = v;
        }
    }

    // A feasible anchor for both bisections.
    let mut anchor: Option<(f64, DispatchResult)> = None;
    let mut candidates: Vec<f64> = guesses.iter().flatten().copied().collect();
    if let [Some(a), Some(b)] = guesses {
        candidates.insert(0, 0.5 * (a + b));
    }
    candidates.push(0.0);
    for &g in &candidates {
        for off in [0.0, -2.0 * tol, 2.0 * tol, -8.0 * tol, 8.0 * tol] {
            let u = g + off;
            if let Some(r) = probe(u)? {
                anchor = Some((u, r));
                break;
            }
        }
        if anchor.is_some() {
            break;
        }
    }
    let Some((u0, r0)) = anchor else {
        return Err(DispatchError::NoFeasibleExport(worst.family()));
    };

    let mut search = |dir: f64, guess: Option<f64>| -> Result<(f64, DispatchResult), DispatchError> {
        let limit = if dir > 0.0 { cap_hi } else { cap_lo };
        let (mut good, mut good_r) = (u0, r0.clone());
        // Start from the LP guess when it is feasible.
        if let Some(g) = guess {
            if dir * (g - good) > 0.0 {
                if let Some(r) = probe(g)? {
                    good = g;
                    good_r = r;
                }
            }
        }
        // Expand until an infeasible exchange is found.
        let mut step = tol;
        let mut bad = loop {
            let u = good + dir * step;
            if dir * (u - limit) >= 0.0 {
                break limit;
            }
            match probe(u)? {
                Some(r) => {
                    good = u;
                    good_r = r;
                    step *= 4.0;
                }
                None => break u,
            }
        };
        while (bad - good).abs() > tol {
            let mid = 0.5 * (good + bad);
            match probe(mid)? {
                Some(r) => {
                    good = mid;
                    good_r = r;
                }
                None => bad = mid,
            }
        }
        // The end target may sit up to the PCC tolerance beyond the exchange
        // it delivers; pull it in to the delivered exchange when that holds.
        let delivered = good_r.export();
        if dir * (good - delivered) > 0.0 {
            if let Some(r) = probe(delivered)? {
                return Ok((delivered, r));
            }
        }
        Ok((good, good_r))
    };
    let (u_max, max_cert) = search(1.0, guesses[0])?;
    let (u_min, min_cert) = search(-1.0, guesses[1])?;

    let mid = 0.5 * (u_min + u_max);
    if u_max - u_min > 2.0 * tol && probe(mid)?.is_none() {
        return Err(DispatchError::NonConvex { u_min, u_max, probe: mid });
    }
    Ok(FeasibleExportInterval { u_min, u_max, min_certificate: min_cert, max_certificate: max_cert, evaluations })
}
