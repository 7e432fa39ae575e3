//! Plain-text data files: network, DER configurations, load curves and
//! rival scenarios.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vpp_core::ders::{DerFleet, DerKind, DerUnit, NoiseModel, HOURS};
use vpp_core::grid::{build_network, NetworkModel, NetworkSpec};
use vpp_core::market::RivalScenario;

use crate::HarnessError;

/// Directory of the bundled data files.
pub fn bundled_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UnitFile {
    Conventional { name: String, bus: usize, p_min: f64, p_max: f64, s_max: f64, cost: f64 },
    Renewable {
        name: String,
        bus: usize,
        s_max: f64,
        pf_floor: f64,
        /// Hourly expected availability as a fraction of `s_max`.
        availability: Vec<f64>,
        rel_std: f64,
    },
    Storage { name: String, bus: usize, p_max: f64, s_max: f64, chi_min: f64, chi_max: f64, cost: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerFile {
    pub units: Vec<UnitFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadPoint {
    pub bus: usize,
    pub nominal_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadCurveFile {
    pub label: String,
    /// Fraction of nominal load per hour.
    pub shape: Vec<f64>,
    pub power_factor: f64,
    pub tariff: f64,
    pub loads: Vec<LoadPoint>,
}

fn bus_index(net: &NetworkModel, id: usize) -> Result<usize, HarnessError> {
    net.bus_index(id).ok_or_else(|| HarnessError::Config(format!("unknown bus id {id}")))
}

impl UnitFile {
    fn build(&self, net: &NetworkModel) -> Result<DerUnit, HarnessError> {
        Ok(match self {
            UnitFile::Conventional { name, bus, p_min, p_max, s_max, cost } => DerUnit {
                name: name.clone(),
                bus: bus_index(net, *bus)?,
                kind: DerKind::Conventional { p_min: *p_min, p_max: *p_max, s_max: *s_max, cost: *cost },
            },
            UnitFile::Renewable { name, bus, s_max, pf_floor, availability, rel_std } => {
                if availability.len() != HOURS {
                    return Err(HarnessError::Config(format!("{name}: availability needs {HOURS} values")));
                }
                let noise = if *rel_std > 0.0 { NoiseModel::Gaussian { rel_std: *rel_std } } else { NoiseModel::None };
                DerUnit {
                    name: name.clone(),
                    bus: bus_index(net, *bus)?,
                    kind: DerKind::Renewable {
                        s_max: *s_max,
                        pf_floor: *pf_floor,
                        profile: availability.iter().map(|a| a * s_max).collect(),
                        noise,
                    },
                }
            }
            UnitFile::Storage { name, bus, p_max, s_max, chi_min, chi_max, cost } => DerUnit {
                name: name.clone(),
                bus: bus_index(net, *bus)?,
                // Reset moves the energy to its configured starting fraction.
                kind: DerKind::Storage {
                    p_max: *p_max,
                    s_max: *s_max,
                    chi_min: *chi_min,
                    chi_max: *chi_max,
                    chi: *chi_min,
                    cost: *cost,
                },
            },
        })
    }
}

impl LoadCurveFile {
    pub fn units(&self, net: &NetworkModel) -> Result<Vec<DerUnit>, HarnessError> {
        if self.shape.len() != HOURS {
            return Err(HarnessError::Config(format!("load shape needs {HOURS} values")));
        }
        if !(self.power_factor > 0.0 && self.power_factor <= 1.0) {
            return Err(HarnessError::Config("load power factor must lie in (0, 1]".into()));
        }
        let tan_phi = (1.0 - self.power_factor * self.power_factor).sqrt() / self.power_factor;
        self.loads
            .iter()
            .map(|l| {
                let p: Vec<f64> = self.shape.iter().map(|s| s * l.nominal_kw).collect();
                let q = p.iter().map(|x| x * tan_phi).collect();
                Ok(DerUnit {
                    name: format!("load{}", l.bus),
                    bus: bus_index(net, l.bus)?,
                    kind: DerKind::Load { p_profile: p, q_profile: q, tariff: self.tariff },
                })
            })
            .collect()
    }
}

/// Static data of a run, resolved from a configuration.
#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub network: NetworkModel,
    pub fleet: DerFleet,
    pub rivals: RivalScenario,
    pub load_label: String,
}

pub fn load_network(path: &Path) -> Result<NetworkModel, HarnessError> {
    let spec: NetworkSpec = read_toml(path)?;
    build_network(&spec).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

pub fn load_fleet(ders: &Path, loads: &Path, net: &NetworkModel) -> Result<(DerFleet, String), HarnessError> {
    let der_file: DerFile = read_toml(ders)?;
    let load_file: LoadCurveFile = read_toml(loads)?;
    let mut units = der_file.units.iter().map(|u| u.build(net)).collect::<Result<Vec<_>, _>>()?;
    units.extend(load_file.units(net)?);
    let fleet = DerFleet::new(units, net).map_err(|e| HarnessError::Config(format!("{}: {e}", ders.display())))?;
    Ok((fleet, load_file.label))
}

pub fn load_rivals(path: &Path) -> Result<RivalScenario, HarnessError> {
    let scenario: RivalScenario = read_toml(path)?;
    scenario.validate().map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    Ok(scenario)
}
