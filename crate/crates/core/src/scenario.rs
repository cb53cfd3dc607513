//! Scenario files: one self-contained TOML document per experiment.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::AnalysisConfig;
use crate::chem::{AcidKind, AcidSpec, IndicatorSpec};
use crate::controller::{ControllerConfig, DispenseMode};
use crate::fusion::FusionConfig;
use crate::plant::{FaultKind, FaultSpec, PlantConfig, Vessel};
use crate::planner::{Inventory, InventoryItem};
use crate::protocol::ParsedInstruction;
use crate::supervisors::{AudioConfig, EndpointConfig, ScenarioKind, StabilityConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("no fault named `{0}` in the scenario")]
    UnknownFault(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InventoryEntry {
    Name(String),
    Item(InventoryItem),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultEntry {
    pub name: String,
    pub kind: FaultKind,
    pub start: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<f64>,
    /// Disabled faults can be switched on from the command line.
    #[serde(default = "yes")]
    pub enabled: bool,
}

fn yes() -> bool {
    true
}

impl FaultEntry {
    pub fn spec(&self) -> FaultSpec {
        FaultSpec {
            name: self.name.clone(),
            kind: self.kind,
            start: self.start,
            end: self.end,
        }
    }
}

/// Values the instruction does not carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChemistryConfig {
    /// Ascending pKa list of the analyte; empty for a strong acid.
    pub pka: Vec<f64>,
    pub indicator: IndicatorSpec,
    /// Largest |mass error| counted as a successful weighing, g.
    pub mass_tolerance_g: f64,
}

impl Default for ChemistryConfig {
    fn default() -> Self {
        Self {
            pka: Vec::new(),
            indicator: IndicatorSpec::default(),
            mass_tolerance_g: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionDurations {
    pub grasp: f64,
    pub draw: f64,
    pub position: f64,
    pub transfer: f64,
    pub stir: f64,
}

impl Default for ActionDurations {
    fn default() -> Self {
        Self {
            grasp: 2.0,
            draw: 3.0,
            position: 2.0,
            transfer: 3.0,
            stir: 1.0,
        }
    }
}

impl ActionDurations {
    pub fn of(&self, action: &str) -> f64 {
        match action {
            "grasp" => self.grasp,
            "draw" => self.draw,
            "position" => self.position,
            "transfer" => self.transfer,
            "stir" => self.stir,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisorConfig {
    pub stability: StabilityConfig,
    /// Stability rule applied to balance readings.
    pub balance_stability: StabilityConfig,
    pub endpoint: EndpointConfig,
    pub audio: AudioConfig,
    pub sensor_timeout_limit_s: f64,
    pub sensor_confidence: f64,
    pub actions: ActionDurations,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        Self {
            stability: StabilityConfig::default(),
            balance_stability: StabilityConfig {
                window_s: 1.0,
                max_delta: 0.05,
            },
            endpoint: EndpointConfig::default(),
            audio: AudioConfig::default(),
            sensor_timeout_limit_s: 30.0,
            sensor_confidence: 0.9,
            actions: ActionDurations::default(),
        }
    }
}

fn default_seed() -> u64 {
    42
}

fn default_replicates() -> u32 {
    1
}

fn default_max_time() -> f64 {
    20_000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub instruction: String,
    #[serde(default)]
    pub inventory: Vec<InventoryEntry>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: u32,
    /// Simulated-time budget, s.
    #[serde(default = "default_max_time")]
    pub max_time_s: f64,
    #[serde(default)]
    pub chemistry: ChemistryConfig,
    #[serde(default)]
    pub plant: PlantConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub supervisor: SupervisorConfig,
    #[serde(default)]
    pub faults: Vec<FaultEntry>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// One of the scenarios shipped with the crate.
    pub fn bundled(name: &str) -> Option<Self> {
        let text = match name {
            "hcl_titration" => include_str!("../scenarios/hcl_titration.toml"),
            "acetic_titration" => include_str!("../scenarios/acetic_titration.toml"),
            "maleic_titration" => include_str!("../scenarios/maleic_titration.toml"),
            "edta_complexometric" => include_str!("../scenarios/edta_complexometric.toml"),
            "nacl_weighing" => include_str!("../scenarios/nacl_weighing.toml"),
            _ => return None,
        };
        Some(Self::from_toml(text).expect("bundled scenario is valid"))
    }

    pub const BUNDLED: [&'static str; 5] = [
        "hcl_titration",
        "acetic_titration",
        "maleic_titration",
        "edta_complexometric",
        "nacl_weighing",
    ];

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.replicates < 1 {
            return bad("replicates must be at least 1".into());
        }
        if !(self.max_time_s > 0.0) {
            return bad("max_time_s must be positive".into());
        }
        self.plant.validate().map_err(ConfigError::Invalid)?;
        self.controller.validate().map_err(ConfigError::Invalid)?;
        self.fusion.validate().map_err(ConfigError::Invalid)?;
        let a = &self.analysis;
        if a.sg_window.is_multiple_of(2) || a.sg_order >= a.sg_window || !(a.resample_step > 0.0) {
            return bad("analysis window must be odd, above the order, with a positive step".into());
        }
        if self.chemistry.pka.windows(2).any(|w| w[0] > w[1]) {
            return bad("chemistry.pka must be ascending".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for f in &self.faults {
            if !names.insert(f.name.as_str()) {
                return bad(format!("fault `{}` declared twice", f.name));
            }
            if f.end.is_some_and(|e| e <= f.start) || f.start < 0.0 {
                return bad(format!("fault `{}` has an empty window", f.name));
            }
        }
        self.inventory()?;
        Ok(())
    }

    pub fn inventory(&self) -> Result<Inventory, ConfigError> {
        let items = self
            .inventory
            .iter()
            .enumerate()
            .map(|(i, e)| match e {
                InventoryEntry::Name(n) => InventoryItem {
                    name: n.clone(),
                    quantity: None,
                    location: format!("slot-{}", i + 1),
                },
                InventoryEntry::Item(item) => item.clone(),
            })
            .collect();
        Inventory::new(items).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Enables the named fault.
    pub fn enable_fault(&mut self, name: &str) -> Result<(), ConfigError> {
        let f = self
            .faults
            .iter_mut()
            .find(|f| f.name == name)
            .ok_or_else(|| ConfigError::UnknownFault(name.to_string()))?;
        f.enabled = true;
        Ok(())
    }

    pub fn active_faults(&self) -> Vec<FaultSpec> {
        self.faults.iter().filter(|f| f.enabled).map(FaultEntry::spec).collect()
    }

    /// The same scenario with every noise source switched off.
    pub fn noiseless(mut self) -> Self {
        self.plant.ph_noise_sigma = 0.0;
        self.plant.droplet.jitter = 0.0;
        self.plant.temperature_noise = 0.0;
        self.plant.balance_noise_g = 0.0;
        self.plant.grain_g = 0.0;
        self.plant.dissolve_jitter = 0.0;
        self
    }

    /// Controller settings with the instruction's target filled in.
    pub fn controller_for(&self, kind: ScenarioKind, parsed: &ParsedInstruction) -> ControllerConfig {
        let mut c = self.controller.clone();
        let t = &parsed.target_conditions.parameters;
        match kind {
            ScenarioKind::PhTitration => {
                if let Some(q) = t.get("pH") {
                    c.target = q.value;
                }
            }
            ScenarioKind::Weighing => {
                c.mode = DispenseMode::Mass;
                if let Some(q) = t.get("mass") {
                    c.target = q.value;
                }
            }
            ScenarioKind::ColorTitration => {}
        }
        c
    }

    /// The plant vessel and titrant concentration for the parsed scenario.
    pub fn vessel_for(&self, kind: ScenarioKind, parsed: &ParsedInstruction) -> Result<(Vessel, f64), ConfigError> {
        let p = &parsed.initial_conditions.parameters;
        let get = |key: &str| {
            p.get(key)
                .map(|q| q.value)
                .ok_or_else(|| ConfigError::Invalid(format!("instruction lacks `{key}`")))
        };
        match kind {
            ScenarioKind::PhTitration => {
                let analyte = AcidSpec {
                    name: parsed.initial_conditions.chemical_system.clone(),
                    kind: if self.chemistry.pka.is_empty() {
                        AcidKind::Strong
                    } else {
                        AcidKind::Weak
                    },
                    pka: self.chemistry.pka.clone(),
                    concentration: get("concentration")?,
                    volume: get("volume")? * 1e-3,
                };
                analyte
                    .validate()
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok((Vessel::acid_base(&analyte), get("titrant_concentration")?))
            }
            ScenarioKind::ColorTitration => {
                let volume = get("volume")? * 1e-3;
                Ok((
                    Vessel::Complexometric {
                        metal_moles: get("concentration")? * volume,
                        initial_volume: volume,
                        indicator: self.chemistry.indicator.clone(),
                    },
                    get("titrant_concentration")?,
                ))
            }
            ScenarioKind::Weighing => Ok((
                Vessel::Weighing {
                    water_volume: get("water_volume")? * 1e-3,
                },
                0.0,
            )),
        }
    }

    /// Stability rule for the monitored signal.
    pub fn stability_for(&self, kind: ScenarioKind) -> StabilityConfig {
        match kind {
            ScenarioKind::Weighing => self.supervisor.balance_stability.clone(),
            _ => self.supervisor.stability.clone(),
        }
    }

    /// Endpoint rule with the instruction's target filled in.
    pub fn endpoint_for(&self, parsed: &ParsedInstruction) -> EndpointConfig {
        let mut e = self.supervisor.endpoint.clone();
        if let Some(q) = parsed.target_conditions.parameters.get("pH") {
            e.target = q.value;
        }
        e
    }
}
