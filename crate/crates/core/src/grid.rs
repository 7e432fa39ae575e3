//! Radial distribution network model and the DistFlow branch-flow solver.
//!
//! Quantities inside the solver are per unit on the network's own base; every
//! public entry point takes and returns kW / kvar. Voltages are always per unit.
//!
//! Branches are oriented parent -> child when the model is built, so `P`, `Q`
//! and the squared current of a branch always refer to the sending (parent)
//! end, which is the direction the DistFlow recursion is written in.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{hypot, sqrt};

/// Errors raised while building a network or solving a power flow.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("network has no buses")]
    Empty,
    #[error("bus id {0} is listed twice")]
    DuplicateBus(usize),
    #[error("root bus id {0} is not part of the network")]
    UnknownRoot(usize),
    #[error("branch {branch} references unknown bus id {bus}")]
    UnknownBus { branch: usize, bus: usize },
    #[error("branch {branch} connects bus {bus} to itself")]
    SelfLoop { branch: usize, bus: usize },
    #[error("branch {branch} ({from} -> {to}) closes a cycle")]
    Cycle { branch: usize, from: usize, to: usize },
    #[error("bus {0} is not connected to the root")]
    Disconnected(usize),
    #[error("branch {branch} has non-positive or non-finite apparent power limit {s_max}")]
    NonPositiveLimit { branch: usize, s_max: f64 },
    #[error("branch {branch} has negative or non-finite resistance {r}")]
    NegativeResistance { branch: usize, r: f64 },
    #[error("branch {branch} has non-finite reactance")]
    InvalidReactance { branch: usize },
    #[error("bus {bus} has an invalid voltage band [{v_min}, {v_max}]")]
    InvalidVoltageBand { bus: usize, v_min: f64, v_max: f64 },
    #[error("base power and base voltage must be positive")]
    InvalidBase,
    #[error("injection profile has {got} entries, network has {expected} buses")]
    InjectionLength { expected: usize, got: usize },
    #[error("non-finite injection at bus index {0}")]
    NonFiniteInjection(usize),
    #[error("substation voltage {0} p.u. outside (0.8, 1.2)")]
    RootVoltage(f64),
    #[error("power flow did not converge after {iterations} iterations (residual {residual:e} p.u.)")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("voltage collapse at bus index {0}")]
    VoltageCollapse(usize),
}

/// Bus record of a network description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusSpec {
    pub id: usize,
    pub v_min: f64,
    pub v_max: f64,
}

/// Branch record of a network description. Impedances and limit in p.u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSpec {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub s_max: f64,
}

/// Unvalidated network description, as read from a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub buses: Vec<BusSpec>,
    pub branches: Vec<BranchSpec>,
    pub root_id: usize,
    /// kVA
    pub base_power: f64,
    /// kV
    pub base_voltage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub v_min: f64,
    pub v_max: f64,
}

/// A validated branch; `from` is the parent bus index, `to` the child.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub s_max: f64,
}

/// Validated radial network: a tree rooted at the substation (PCC).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    root: usize,
    base_power: f64,
    base_voltage: f64,
    parent_branch: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    order: Vec<usize>,
    depth: Vec<usize>,
}

/// Validate a network description and derive the tree structure.
pub fn build_network(spec: &NetworkSpec) -> Result<NetworkModel, GridError> {
    NetworkModel::new(spec)
}

impl NetworkModel {
    pub fn new(spec: &NetworkSpec) -> Result<Self, GridError> {
        if spec.buses.is_empty() {
            return Err(GridError::Empty);
        }
        if !(spec.base_power > 0.0 && spec.base_power.is_finite())
            || !(spec.base_voltage > 0.0 && spec.base_voltage.is_finite())
        {
            return Err(GridError::InvalidBase);
        }
        let n = spec.buses.len();
        let mut buses = Vec::with_capacity(n);
        for (k, b) in spec.buses.iter().enumerate() {
            if spec.buses[..k].iter().any(|o| o.id == b.id) {
                return Err(GridError::DuplicateBus(b.id));
            }
            let band_ok = b.v_min.is_finite() && b.v_max.is_finite() && 0.0 < b.v_min && b.v_min < b.v_max;
            if !band_ok {
                return Err(GridError::InvalidVoltageBand { bus: b.id, v_min: b.v_min, v_max: b.v_max });
            }
            buses.push(Bus { id: b.id, v_min: b.v_min, v_max: b.v_max });
        }
        let index_of = |id: usize| buses.iter().position(|b| b.id == id);
        let root = index_of(spec.root_id).ok_or(GridError::UnknownRoot(spec.root_id))?;

        // Endpoint resolution and union-find cycle detection.
        let mut uf: Vec<usize> = (0..n).collect();
        fn find(uf: &mut [usize], mut a: usize) -> usize {
            while uf[a] != a {
                uf[a] = uf[uf[a]];
                a = uf[a];
            }
            a
        }
        let mut ends = Vec::with_capacity(spec.branches.len());
        for (k, br) in spec.branches.iter().enumerate() {
            let a = index_of(br.from).ok_or(GridError::UnknownBus { branch: k, bus: br.from })?;
            let b = index_of(br.to).ok_or(GridError::UnknownBus { branch: k, bus: br.to })?;
            if a == b {
                return Err(GridError::SelfLoop { branch: k, bus: br.from });
            }
            if !(br.r >= 0.0 && br.r.is_finite()) {
                return Err(GridError::NegativeResistance { branch: k, r: br.r });
            }
            if !br.x.is_finite() {
                return Err(GridError::InvalidReactance { branch: k });
            }
            if !(br.s_max > 0.0 && br.s_max.is_finite()) {
                return Err(GridError::NonPositiveLimit { branch: k, s_max: br.s_max });
            }
            let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
            if ra == rb {
                return Err(GridError::Cycle { branch: k, from: br.from, to: br.to });
            }
            uf[ra] = rb;
            ends.push((a, b));
        }

        // Orient from the root with a breadth-first walk.
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (k, &(a, b)) in ends.iter().enumerate() {
            adjacency[a].push(k);
            adjacency[b].push(k);
        }
        let mut parent_branch = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut depth = vec![usize::MAX; n];
        let mut order = Vec::with_capacity(n);
        let mut branches = Vec::with_capacity(ends.len());
        for (k, br) in spec.branches.iter().enumerate() {
            branches.push(Branch { from: ends[k].0, to: ends[k].1, r: br.r, x: br.x, s_max: br.s_max });
        }
        let mut queue = VecDeque::new();
        depth[root] = 0;
        queue.push_back(root);
        while let Some(bus) = queue.pop_front() {
            order.push(bus);
            for &k in &adjacency[bus] {
                let (a, b) = ends[k];
                let other = if a == bus { b } else { a };
                if depth[other] != usize::MAX {
                    continue;
                }
                depth[other] = depth[bus] + 1;
                parent_branch[other] = Some(k);
                children[bus].push(k);
                branches[k].from = bus;
                branches[k].to = other;
                queue.push_back(other);
            }
        }
        if let Some(lost) = (0..n).find(|&i| depth[i] == usize::MAX) {
            return Err(GridError::Disconnected(buses[lost].id));
        }

        Ok(Self {
            buses,
            branches,
            root,
            base_power: spec.base_power,
            base_voltage: spec.base_voltage,
            parent_branch,
            children,
            order,
            depth,
        })
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    /// Index of the substation bus.
    pub fn root(&self) -> usize {
        self.root
    }

    pub fn base_power(&self) -> f64 {
        self.base_power
    }

    pub fn base_voltage(&self) -> f64 {
        self.base_voltage
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Branch feeding `bus`, `None` for the root.
    pub fn parent_branch(&self, bus: usize) -> Option<usize> {
        self.parent_branch[bus]
    }

    /// Branches leaving `bus` towards the leaves.
    pub fn child_branches(&self, bus: usize) -> &[usize] {
        &self.children[bus]
    }

    /// Bus indices in breadth-first order from the root.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn bus_depth(&self, bus: usize) -> usize {
        self.depth[bus]
    }

    /// Depth of the tree (longest root-to-leaf path in branches).
    pub fn depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    /// Branches leaving the root; their sending-end flow is the PCC exchange.
    pub fn pcc_branches(&self) -> &[usize] {
        &self.children[self.root]
    }

    /// Copy of the model with every branch limit replaced through `f`.
    pub fn map_limits(&self, mut f: impl FnMut(usize, &Branch) -> f64) -> Result<Self, GridError> {
        let mut out = self.clone();
        for (k, br) in out.branches.iter_mut().enumerate() {
            let s = f(k, &self.branches[k]);
            if !(s > 0.0 && s.is_finite()) {
                return Err(GridError::NonPositiveLimit { branch: k, s_max: s });
            }
            br.s_max = s;
        }
        Ok(out)
    }
}

/// Nodal injections in kW / kvar, generation positive. The root entry is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionProfile {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl InjectionProfile {
    pub fn zeros(buses: usize) -> Self {
        Self { p: vec![0.0; buses], q: vec![0.0; buses] }
    }

    pub fn add(&mut self, bus: usize, p: f64, q: f64) {
        self.p[bus] += p;
        self.q[bus] += q;
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Converged DistFlow state. Flows are sending-end values in kW / kvar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    /// Active flow per branch, kW.
    pub p: Vec<f64>,
    /// Reactive flow per branch, kvar.
    pub q: Vec<f64>,
    /// Squared current magnitude per branch, p.u.
    pub i_sq: Vec<f64>,
    /// Voltage magnitude per bus, p.u.
    pub v: Vec<f64>,
    /// Active power drawn from the upstream grid at the PCC (P_01), kW.
    pub pcc_active: f64,
    /// Reactive power drawn at the PCC, kvar.
    pub pcc_reactive: f64,
    /// Largest mismatch over the branch-flow equations, p.u.
    pub residual: f64,
    pub iterations: usize,
}

impl PowerFlowSolution {
    /// Total active losses, kW.
    pub fn losses(&self, net: &NetworkModel) -> f64 {
        net.branches().iter().zip(&self.i_sq).map(|(b, l)| b.r * l).sum::<f64>() * net.base_power()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iterations: 100 }
    }
}

/// Solve the DistFlow equations by backward/forward sweep from a flat start.
pub fn solve_power_flow(
    net: &NetworkModel,
    inj: &InjectionProfile,
    v_root: f64,
) -> Result<PowerFlowSolution, GridError> {
    solve_power_flow_with(net, inj, v_root, &SweepOptions::default())
}

pub fn solve_power_flow_with(
    net: &NetworkModel,
    inj: &InjectionProfile,
    v_root: f64,
    opts: &SweepOptions,
) -> Result<PowerFlowSolution, GridError> {
    let n = net.bus_count();
    if inj.p.len() != n || inj.q.len() != n {
        return Err(GridError::InjectionLength { expected: n, got: inj.p.len().min(inj.q.len()) });
    }
    if !(v_root > 0.8 && v_root < 1.2) {
        return Err(GridError::RootVoltage(v_root));
    }
    let base = net.base_power;
    let mut p_inj = vec![0.0; n];
    let mut q_inj = vec![0.0; n];
    for i in 0..n {
        if !(inj.p[i].is_finite() && inj.q[i].is_finite()) {
            return Err(GridError::NonFiniteInjection(i));
        }
        if i != net.root {
            p_inj[i] = inj.p[i] / base;
            q_inj[i] = inj.q[i] / base;
        }
    }

    let m = net.branch_count();
    let mut flow_p = vec![0.0; m];
    let mut flow_q = vec![0.0; m];
    let mut l = vec![0.0; m];
    let mut v2 = vec![1.0; n];
    v2[net.root] = v_root * v_root;

    let mut residual = f64::INFINITY;
    for iteration in 1..=opts.max_iterations {
        for &bus in net.order.iter().rev() {
            let Some(k) = net.parent_branch[bus] else { continue };
            let mut p = -p_inj[bus];
            let mut q = -q_inj[bus];
            for &c in &net.children[bus] {
                p += flow_p[c];
                q += flow_q[c];
            }
            let br = &net.branches[k];
            flow_p[k] = p + br.r * l[k];
            flow_q[k] = q + br.x * l[k];
        }
        for (k, br) in net.branches.iter().enumerate() {
            l[k] = (flow_p[k] * flow_p[k] + flow_q[k] * flow_q[k]) / v2[br.from];
        }
        for &bus in &net.order {
            let Some(k) = net.parent_branch[bus] else { continue };
            let br = &net.branches[k];
            let z2 = br.r * br.r + br.x * br.x;
            let next = v2[br.from] - 2.0 * (br.r * flow_p[k] + br.x * flow_q[k]) + z2 * l[k];
            if !(next > 0.0) || !next.is_finite() {
                return Err(GridError::VoltageCollapse(bus));
            }
            v2[bus] = next;
        }
        residual = distflow_residual_pu(net, &p_inj, &q_inj, &flow_p, &flow_q, &l, &v2);
        if residual <= opts.tolerance {
            return Ok(assemble(net, flow_p, flow_q, l, &v2, residual, iteration));
        }
    }
    Err(GridError::NonConvergence { iterations: opts.max_iterations, residual })
}

fn assemble(
    net: &NetworkModel,
    mut flow_p: Vec<f64>,
    mut flow_q: Vec<f64>,
    l: Vec<f64>,
    v2: &[f64],
    residual: f64,
    iterations: usize,
) -> PowerFlowSolution {
    let base = net.base_power;
    let (mut pcc_p, mut pcc_q) = (0.0, 0.0);
    for &k in net.pcc_branches() {
        pcc_p += flow_p[k];
        pcc_q += flow_q[k];
    }
    for x in flow_p.iter_mut().chain(flow_q.iter_mut()) {
        *x *= base;
    }
    PowerFlowSolution {
        p: flow_p,
        q: flow_q,
        i_sq: l,
        v: v2.iter().map(|&x| sqrt(x)).collect(),
        pcc_active: pcc_p * base,
        pcc_reactive: pcc_q * base,
        residual,
        iterations,
    }
}

/// Largest mismatch, in p.u., of the three branch-flow equations and the
/// squared-current definition, evaluated by direct substitution.
fn distflow_residual_pu(
    net: &NetworkModel,
    p_inj: &[f64],
    q_inj: &[f64],
    flow_p: &[f64],
    flow_q: &[f64],
    l: &[f64],
    v2: &[f64],
) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, br) in net.branches.iter().enumerate() {
        let j = br.to;
        let (mut sum_p, mut sum_q) = (0.0, 0.0);
        for &c in &net.children[j] {
            sum_p += flow_p[c];
            sum_q += flow_q[c];
        }
        let ra = flow_p[k] - (sum_p - p_inj[j] + br.r * l[k]);
        let rb = flow_q[k] - (sum_q - q_inj[j] + br.x * l[k]);
        let rc = v2[br.from] - v2[j] - 2.0 * (br.r * flow_p[k] + br.x * flow_q[k])
            + (br.r * br.r + br.x * br.x) * l[k];
        let rd = l[k] - (flow_p[k] * flow_p[k] + flow_q[k] * flow_q[k]) / v2[br.from];
        worst = worst.max(ra.abs()).max(rb.abs()).max(rc.abs()).max(rd.abs());
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VoltageFlag {
    Within,
    Under,
    Over,
}

/// Result of checking a power-flow solution against line and voltage limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    /// S_ij / S_max per branch.
    pub loading: Vec<f64>,
    pub voltage: Vec<VoltageFlag>,
    /// Largest normalized exceedance; negative means slack on every limit.
    pub worst_violation: f64,
    pub feasible: bool,
}

impl LimitReport {
    pub fn overloaded_branches(&self) -> impl Iterator<Item = usize> + '_ {
        self.loading.iter().enumerate().filter(|(_, &x)| x > 1.0).map(|(k, _)| k)
    }

    pub fn flagged_buses(&self) -> impl Iterator<Item = usize> + '_ {
        self.voltage.iter().enumerate().filter(|(_, f)| **f != VoltageFlag::Within).map(|(i, _)| i)
    }
}

/// Evaluate branch loading and voltage bands.
///
/// Branch exceedance is `S/S_max - 1`; voltage exceedance is the distance
/// outside the band divided by the violated bound.
pub fn evaluate_limits(net: &NetworkModel, sol: &PowerFlowSolution) -> LimitReport {
    let base = net.base_power;
    let mut worst = f64::NEG_INFINITY;
    let loading: Vec<f64> = net
        .branches
        .iter()
        .enumerate()
        .map(|(k, br)| {
            let s = hypot(sol.p[k], sol.q[k]) / base;
            let ratio = s / br.s_max;
            worst = worst.max(ratio - 1.0);
            ratio
        })
        .collect();
    let voltage: Vec<VoltageFlag> = net
        .buses
        .iter()
        .zip(&sol.v)
        .map(|(bus, &v)| {
            worst = worst.max((bus.v_min - v) / bus.v_min).max((v - bus.v_max) / bus.v_max);
            if v < bus.v_min {
                VoltageFlag::Under
            } else if v > bus.v_max {
                VoltageFlag::Over
            } else {
                VoltageFlag::Within
            }
        })
        .collect();
    LimitReport { loading, voltage, worst_violation: worst, feasible: worst <= 0.0 }
}
