use std::fs;
use std::path::Path;

use vpp_core::env::{ForecastMode, Variant};
use vpp_sim::config::{ScenarioConfig, DER_CONFIGS};
use vpp_sim::data::bundled_dir;
use vpp_sim::HarnessError;

const BUNDLED: [&str; 9] = [
    "basecase_url",
    "basecase_shrl",
    "basecase_srl",
    "basecase_alt",
    "renew1_wfc",
    "renew1_wofc",
    "renew2_wfc",
    "renew2_wofc",
    "bat1",
];

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let data = bundled_dir();
    let text = format!(
        "network = {:?}\nders = \"basecase\"\nloads = \"default\"\nrivals = {:?}\n{extra}",
        data.join("network/ieee13.toml"),
        data.join("rivals/default.toml"),
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn every_bundled_configuration_loads() {
    for stem in BUNDLED {
        let cfg = ScenarioConfig::bundled(stem).unwrap();
        let data = cfg.load_data().unwrap();
        assert!(DER_CONFIGS.contains(&cfg.ders.as_str()));
        assert_eq!(data.network.bus_count(), 13);
        assert!(!data.load_label.is_empty());
    }
}

#[test]
fn configurations_match_their_names() {
    let cfg = ScenarioConfig::bundled("renew1_wofc").unwrap();
    assert_eq!(cfg.env.forecast, ForecastMode::WithoutForecast);
    assert_eq!(cfg.env.variant, Variant::Safe);
    let data = cfg.load_data().unwrap();
    assert_eq!(data.fleet.renewables().count(), 1);
    assert_eq!(ScenarioConfig::bundled("renew2_wfc").unwrap().load_data().unwrap().fleet.renewables().count(), 3);
    assert_eq!(ScenarioConfig::bundled("bat1").unwrap().load_data().unwrap().fleet.storages().count(), 1);
    assert_eq!(ScenarioConfig::bundled("basecase_url").unwrap().env.variant, Variant::Unsafe);
    assert_eq!(ScenarioConfig::bundled("basecase_srl").unwrap().label(), "basecase-sRL-wFC");
}

#[test]
fn the_two_load_curves_carry_distinct_labels() {
    let a = ScenarioConfig::bundled("basecase_srl").unwrap().load_data().unwrap();
    let b = ScenarioConfig::bundled("basecase_alt").unwrap().load_data().unwrap();
    assert_ne!(a.load_label, b.load_label);
}

#[test]
fn seed_sets_change_only_the_seeds() {
    let base = ScenarioConfig::bundled("basecase_srl").unwrap();
    let s2 = base.clone().with_seed_set("s2").unwrap();
    assert_ne!(base.seeds, s2.seeds);
    let (a, b) = (base.load_data().unwrap(), s2.load_data().unwrap());
    assert_eq!(a.network, b.network);
    assert_eq!(a.fleet.units(), b.fleet.units());
    assert_eq!(a.rivals, b.rivals);
    assert!(matches!(base.with_seed_set("nope"), Err(HarnessError::Config(_))));
}

#[test]
fn minimal_file_takes_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig::from_file(&write_config(dir.path(), "")).unwrap();
    assert_eq!(cfg.episodes.train, 100);
    assert_eq!(cfg.episodes.eval, 500);
    assert_eq!(cfg.reward_scale, 1e-3);
    assert_eq!(cfg.env.shield.epsilon, 1.0);
    assert_eq!(cfg.env.variant, Variant::Safe);
}

#[test]
fn unknown_keys_are_rejected() {
    let cases = [
        "colour = 3\n",
        "[env]\nvarient = \"sRL\"\n",
        "[env.shield]\nweight = 2.0\n",
        "[hyper]\nlearning_rate = 0.1\n",
        "[episodes]\nvalidate = 2\n",
        "[seeds]\nnetwork_noise = 1\nrival = 2\nagent_init = 3\nexploration = 4\nreplay = 5\nextra = 6\n",
    ];
    for extra in cases {
        let dir = tempfile::tempdir().unwrap();
        let err = ScenarioConfig::from_file(&write_config(dir.path(), extra)).unwrap_err();
        assert!(matches!(err, HarnessError::Config(_)), "{extra}: {err}");
        assert_eq!(err.exit_code(), 3);
    }
}

#[test]
fn missing_and_invalid_references_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, text.replace("ieee13.toml", "ieee14.toml")).unwrap();
    assert!(matches!(ScenarioConfig::from_file(&path), Err(HarnessError::Config(_))));
    fs::write(&path, text.replace("\"basecase\"", "\"renew3\"")).unwrap();
    assert!(matches!(ScenarioConfig::from_file(&path), Err(HarnessError::Config(_))));
    fs::write(&path, format!("{text}reward_scale = -1.0\n")).unwrap();
    assert!(matches!(ScenarioConfig::from_file(&path), Err(HarnessError::Config(_))));
    let err = ScenarioConfig::from_file(&dir.path().join("absent.toml")).unwrap_err();
    assert!(matches!(err, HarnessError::Io { .. }));
}

#[test]
fn invalid_hyperparameters_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "[hyper]\ndiscount = 1.5\n");
    assert!(matches!(ScenarioConfig::from_file(&path), Err(HarnessError::Config(_))));
}
