mod common;

use common::oracles::{opf_grid_search, three_bus};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpp_core::ders::{AvailabilityDraw, DerFleet, DerUnit};
use vpp_core::dispatch::{
    feasible_export_interval, production_marginal_cost, solve_opf, DispatchError, OpfOptions,
};

const OPTS: OpfOptions = OpfOptions {
    pcc_tolerance: 1.0,
    dt: 1.0,
    v_root: 1.0,
    sweep_tolerance: 1e-10,
    sweep_iterations: 100,
    max_iterations: 40,
    polygon_sides: 32,
    fd_step: 1.0,
};

fn generators() -> Vec<DerUnit> {
    vec![conventional(4, 500.0, 4.0), conventional(7, 500.0, 4.5), conventional(8, 950.0, 5.0)]
}

#[test]
fn loads_only_fleet_imports_load_plus_losses() {
    let net = ieee13();
    let fleet = DerFleet::new(loads(), &net).unwrap();
    let avail = AvailabilityDraw::none(fleet.len());
    let iv = feasible_export_interval(&net, &fleet, 19, &avail, &OPTS).unwrap();
    let r = solve_opf(&net, &fleet, 19, &avail, iv.u_min, &OPTS).unwrap();
    let demand = fleet.total_load(19) + r.flow.losses(&net);
    assert!((iv.u_min + demand).abs() <= 2.0 * OPTS.pcc_tolerance, "{} vs {}", iv.u_min, -demand);
    assert!(iv.u_max - iv.u_min <= 2.0 * OPTS.pcc_tolerance);
    assert_eq!(r.pmc, 0.0);
}

#[test]
fn marginal_cost_follows_the_merit_order() {
    let net = ieee13();
    let fleet = DerFleet::new(generators(), &net).unwrap();
    let avail = AvailabilityDraw::none(fleet.len());
    let at = |u: f64| {
        let r = solve_opf(&net, &fleet, 0, &avail, u, &OPTS).unwrap();
        assert!(r.feasible);
        production_marginal_cost(&r, &fleet)
    };
    assert_eq!(at(0.0), 0.0);
    assert_eq!(at(300.0), 4.0);
    assert_eq!(at(800.0), 4.5);
    assert_eq!(at(1500.0), 5.0);
}

#[test]
fn pcc_rating_caps_export() {
    let net = ieee13().map_limits(|k, b| if k == 0 { 0.6 } else { b.s_max }).unwrap();
    let fleet = DerFleet::new(generators(), &net).unwrap();
    let avail = AvailabilityDraw::none(fleet.len());
    let iv = feasible_export_interval(&net, &fleet, 3, &avail, &OPTS).unwrap();
    assert!(iv.u_max <= 600.0 && iv.u_max >= 600.0 - 2.0 * OPTS.pcc_tolerance, "u_max {}", iv.u_max);
    assert!(iv.max_certificate.limits.feasible);
    assert!(iv.max_certificate.limits.loading[0] > 0.99);
    let just_over = solve_opf(&net, &fleet, 3, &avail, iv.u_max + 2.0 * OPTS.pcc_tolerance, &OPTS).unwrap();
    assert!(!just_over.feasible);
}

#[test]
fn interval_agrees_with_a_scan() {
    let net = ieee13();
    let fleet = basecase(&net);
    let avail = AvailabilityDraw::none(fleet.len());
    for hour in [1, 19] {
        let iv = feasible_export_interval(&net, &fleet, hour, &avail, &OPTS).unwrap();
        for k in 0..=10 {
            let u = iv.u_min + (iv.u_max - iv.u_min) * k as f64 / 10.0;
            let r = solve_opf(&net, &fleet, hour, &avail, u, &OPTS).unwrap();
            assert!(r.feasible, "hour {hour}: {u} inside [{}, {}] infeasible", iv.u_min, iv.u_max);
        }
        for u in [iv.u_max + 2.0 * OPTS.pcc_tolerance, iv.u_min - 2.0 * OPTS.pcc_tolerance] {
            assert!(!solve_opf(&net, &fleet, hour, &avail, u, &OPTS).unwrap().feasible);
        }
        // A coarse scan finds nothing feasible clear of the interval.
        let margin = 2.0 * OPTS.pcc_tolerance;
        let mut u = iv.u_min - 400.0;
        while u < iv.u_max + 400.0 {
            if u < iv.u_min - margin || u > iv.u_max + margin {
                assert!(!solve_opf(&net, &fleet, hour, &avail, u, &OPTS).unwrap().feasible, "{u} feasible outside");
            }
            u += 50.0;
        }
    }
}

#[test]
fn cost_rises_with_export() {
    let net = ieee13();
    let fleet = basecase(&net);
    let avail = AvailabilityDraw::none(fleet.len());
    let iv = feasible_export_interval(&net, &fleet, 8, &avail, &OPTS).unwrap();
    let mut last = f64::NEG_INFINITY;
    for k in 0..=20 {
        let u = iv.u_min + (iv.u_max - iv.u_min) * k as f64 / 20.0;
        let r = solve_opf(&net, &fleet, 8, &avail, u, &OPTS).unwrap();
        assert!(r.objective >= last - 1e-6);
        last = r.objective;
    }
}

#[test]
fn binding_voltage_uses_reactive_support() {
    let net = three_bus(true, [(0.05, 0.05, 5.0), (0.001, 0.001, 5.0)], (0.95, 1.05));
    let fleet = DerFleet::new(vec![conventional(1, 2000.0, 4.0)], &net).unwrap();
    let avail = AvailabilityDraw::none(1);
    let iv = feasible_export_interval(&net, &fleet, 3, &avail, &OPTS).unwrap();
    let cert = &iv.max_certificate;
    assert!(cert.limits.feasible);
    // Absorbing reactive power holds the voltage rise below the band edge.
    assert!(cert.setpoints[0].1 < -100.0);
    assert!(cert.flow.v[1] > 1.04);
    assert!(iv.u_max < 2000.0);
}

#[test]
fn impossible_fleet_reports_no_export() {
    // A 10 kVA feeder cannot carry a 1 MW load.
    let net = three_bus(true, [(0.01, 0.01, 0.01), (0.01, 0.01, 0.01)], (0.95, 1.05));
    let fleet = DerFleet::new(vec![flat_load("l", 2, 1000.0, 300.0)], &net).unwrap();
    let avail = AvailabilityDraw::none(1);
    let err = feasible_export_interval(&net, &fleet, 0, &avail, &OPTS).unwrap_err();
    assert!(matches!(err, DispatchError::NoFeasibleExport(_)), "{err:?}");
}

#[test]
fn three_bus_dispatch_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut checked = 0;
    while checked < 8 {
        let (net, fleet) = random_three_bus(&mut rng);
        let avail = AvailabilityDraw::none(fleet.len());
        let Ok(iv) = feasible_export_interval(&net, &fleet, 0, &avail, &OPTS) else { continue };
        let u = rng.random_range(iv.u_min..=iv.u_max);
        let r = solve_opf(&net, &fleet, 0, &avail, u, &OPTS).unwrap();
        let Some(oracle) = opf_grid_search(&net, &fleet, 0, u, 10.0) else { continue };
        assert!(r.feasible);
        assert!(r.objective <= oracle + 0.01 * oracle.abs(), "opf {} vs grid {oracle}", r.objective);
        checked += 1;
    }
}
