mod common;

use common::ieee13;
use common::oracles::residual;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use vpp_core::grid::{solve_power_flow, InjectionProfile};

#[test]
fn random_profiles_satisfy_the_branch_flow_equations() {
    let net = ieee13();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut converged, mut elapsed) = (0, 0.0);
    for _ in 0..1000 {
        let mut inj = InjectionProfile::zeros(net.bus_count());
        for bus in 1..net.bus_count() {
            inj.add(bus, rng.random_range(-600.0..600.0), rng.random_range(-250.0..250.0));
        }
        let start = Instant::now();
        let out = solve_power_flow(&net, &inj, 1.0);
        elapsed += start.elapsed().as_secs_f64();
        if let Ok(sol) = out {
            converged += 1;
            let r = residual(&net, &inj, &sol);
            assert!(r <= 1e-8, "residual {r}");
        }
    }
    assert!(converged >= 990, "{converged} converged");
    assert!(elapsed / 1000.0 < 5e-3, "{} s per solve", elapsed / 1000.0);
}

#[test]
fn pcc_exchange_is_injection_plus_losses() {
    let net = ieee13();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let mut inj = InjectionProfile::zeros(net.bus_count());
        for bus in 1..net.bus_count() {
            inj.add(bus, rng.random_range(-300.0..300.0), rng.random_range(-100.0..100.0));
        }
        let sol = solve_power_flow(&net, &inj, 1.0).unwrap();
        let injected: f64 = inj.p[1..].iter().sum();
        assert!((sol.pcc_active + injected - sol.losses(&net)).abs() < 1e-6);
    }
}
