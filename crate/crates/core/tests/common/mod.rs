// Shared fixtures: the 13-bus feeder and the case-study DER fleets.
#![allow(dead_code)]

pub mod oracles;

use rand::Rng;
use vpp_core::ders::{DerFleet, DerKind, DerUnit, NoiseModel, HOURS};
use vpp_core::grid::{build_network, BranchSpec, BusSpec, NetworkModel, NetworkSpec};
use vpp_core::market::{PinnedHour, RivalScenario};

pub const LOAD_TARIFF: f64 = 0.5;
pub const POWER_FACTOR_Q: f64 = 0.328_684_140_937_810_8; // tan(acos 0.95)

// (from, to, r, x, s_max kVA); impedances in p.u. on 1000 kVA / 4.16 kV.
const BRANCHES: [(usize, usize, f64, f64, f64); 12] = [
    (0, 1, 0.004069, 0.013063, 5260.0),
    (1, 2, 0.003240, 0.004159, 3819.0),
    (2, 3, 0.022, 0.04, 500.0),
    (1, 4, 0.006144, 0.004859, 1657.0),
    (4, 5, 0.003686, 0.002916, 1657.0),
    (1, 6, 0.004069, 0.013063, 5260.0),
    (6, 7, 1e-5, 1e-5, 5260.0),
    (7, 8, 0.002667, 0.002272, 2371.0),
    (6, 9, 0.003686, 0.002916, 1657.0),
    (9, 10, 0.004364, 0.004424, 1189.0),
    (9, 11, 0.011754, 0.004486, 1189.0),
    (6, 12, 0.002034, 0.006531, 5260.0),
];

// (bus index, nominal kW)
pub const LOADS: [(usize, f64); 9] = [
    (1, 200.0),
    (3, 400.0),
    (4, 170.0),
    (5, 230.0),
    (6, 1155.0),
    (7, 170.0),
    (8, 843.0),
    (10, 170.0),
    (11, 128.0),
];

pub fn ieee13() -> NetworkModel {
    build_network(&NetworkSpec {
        buses: (0..13).map(|id| BusSpec { id, v_min: 0.95, v_max: 1.05 }).collect(),
        branches: BRANCHES
            .iter()
            .map(|&(from, to, r, x, s)| BranchSpec { from, to, r, x, s_max: s / 1000.0 })
            .collect(),
        root_id: 0,
        base_power: 1000.0,
        base_voltage: 4.16,
    })
    .unwrap()
}

pub fn load_shape(t: usize) -> f64 {
    let t = t as f64;
    0.18 + 0.12 * (-(t - 8.0).powi(2) / 8.0).exp() + 0.22 * (-(t - 19.0).powi(2) / 12.5).exp()
}

pub fn loads() -> Vec<DerUnit> {
    LOADS
        .iter()
        .map(|&(bus, nominal)| {
            let p: Vec<f64> = (0..HOURS).map(|t| nominal * load_shape(t)).collect();
            let q = p.iter().map(|x| x * POWER_FACTOR_Q).collect();
            DerUnit { name: format!("load{bus}"), bus, kind: DerKind::Load { p_profile: p, q_profile: q, tariff: LOAD_TARIFF } }
        })
        .collect()
}

pub fn conventional(bus: usize, s: f64, cost: f64) -> DerUnit {
    DerUnit { name: format!("gen{bus}"), bus, kind: DerKind::Conventional { p_min: 0.0, p_max: s, s_max: s, cost } }
}

pub fn renewable(bus: usize, s: f64, profile: Vec<f64>) -> DerUnit {
    DerUnit {
        name: format!("res{bus}"),
        bus,
        kind: DerKind::Renewable { s_max: s, pf_floor: 0.9, profile, noise: NoiseModel::Gaussian { rel_std: 0.15 } },
    }
}

pub fn basecase(net: &NetworkModel) -> DerFleet {
    let mut units = vec![conventional(4, 500.0, 4.0), conventional(7, 500.0, 4.5), conventional(8, 950.0, 5.0)];
    units.extend(loads());
    DerFleet::new(units, net).unwrap()
}

pub fn renew2(net: &NetworkModel) -> DerFleet {
    let wind = |s: f64| (0..HOURS).map(|t| s * (0.45 + 0.25 * ((t as f64) * 0.26).cos())).collect();
    let mut units = vec![renewable(4, 500.0, wind(500.0)), renewable(7, 500.0, wind(500.0)), renewable(8, 950.0, wind(950.0))];
    units.extend(loads());
    DerFleet::new(units, net).unwrap()
}

pub fn bat1(net: &NetworkModel) -> DerFleet {
    let mut units = vec![
        DerUnit {
            name: "bess1".into(),
            bus: 1,
            kind: DerKind::Storage { p_max: 500.0, s_max: 500.0, chi_min: 0.0, chi_max: 4800.0, chi: 2400.0, cost: 0.0 },
        },
        conventional(4, 500.0, 4.0),
        conventional(7, 500.0, 4.5),
        conventional(8, 950.0, 5.0),
    ];
    units.extend(loads());
    DerFleet::new(units, net).unwrap()
}

pub fn rivals(jitter: f64) -> RivalScenario {
    RivalScenario {
        anchors: (0..HOURS).map(|h| 3.0 + 0.1 * h as f64).collect(),
        depth: vec![2000.0; HOURS],
        supply: vec![(-0.5, 0.4), (-0.25, 0.4), (0.0, 0.5), (0.25, 0.5), (0.5, 1.0)],
        demand: vec![(0.9, 0.3), (0.6, 0.3), (0.3, 0.4)],
        price_jitter: jitter,
        quantity_jitter: jitter,
        pinned: vec![PinnedHour {
            hour: 22,
            cheap: vec![(0.3, 600.0), (0.5, 600.0)],
            next_price: 8.0,
            expensive: vec![(8.0, 1000.0), (9.0, 2000.0), (11.0, 2000.0)],
            gap: 500.0,
            gap_jitter: jitter,
            demand: vec![(12.0, 0.4), (10.0, 0.3), (8.5, 0.3)],
        }],
    }
}

pub fn flat_load(name: &str, bus: usize, p: f64, q: f64) -> DerUnit {
    DerUnit {
        name: name.into(),
        bus,
        kind: DerKind::Load { p_profile: vec![p; HOURS], q_profile: vec![q; HOURS], tariff: 0.0 },
    }
}

/// Two lines, two generators, two flat loads; chain or star at random.
pub fn random_three_bus<R: Rng>(rng: &mut R) -> (NetworkModel, DerFleet) {
    let mut line = || (rng.random_range(0.002..0.03), rng.random_range(0.002..0.03), rng.random_range(0.3..1.0));
    let lines = [line(), line()];
    let net = oracles::three_bus(rng.random_bool(0.5), lines, (0.95, 1.05));
    let mut gen = |bus: usize| {
        let s = rng.random_range(100.0..250.0);
        DerUnit {
            name: format!("g{bus}"),
            bus,
            kind: DerKind::Conventional { p_min: 0.0, p_max: s, s_max: s, cost: rng.random_range(2.0..6.0) },
        }
    };
    let (g1, g2) = (gen(1), gen(2));
    let mut load = |bus: usize| {
        let p = rng.random_range(50.0..200.0);
        flat_load(&format!("l{bus}"), bus, p, p * POWER_FACTOR_Q)
    };
    let (l1, l2) = (load(1), load(2));
    (net.clone(), DerFleet::new(vec![g1, g2, l1, l2], &net).unwrap())
}
