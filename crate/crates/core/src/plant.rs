//! Simulated bench: vessel chemistry, gripper-driven droplet dispensing,
//! acoustic droplet events, a lagged noisy pH probe, a balance and faults.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{self, AcidSpec, ChemError, IndicatorSpec, SolutionState};

/// Nominal closing displacement per droplet, mm.
pub const D_DROP_MM: f64 = 0.000415625;
/// Nominal droplet volume, mL.
pub const DROP_VOLUME_ML: f64 = 0.046875;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DropletConfig {
    pub volume_ml: f64,
    /// Relative standard deviation of droplet volume.
    pub jitter: f64,
    /// Relative clamp applied to the jitter.
    pub jitter_clamp: f64,
    pub displacement_mm: f64,
    pub clarity_min: f64,
    pub clarity_max: f64,
}

impl Default for DropletConfig {
    fn default() -> Self {
        Self {
            volume_ml: DROP_VOLUME_ML,
            jitter: 0.03,
            jitter_clamp: 0.10,
            displacement_mm: D_DROP_MM,
            clarity_min: 0.6,
            clarity_max: 0.98,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    pub dt: f64,
    pub tau: f64,
    pub ph_noise_sigma: f64,
    pub droplet: DropletConfig,
    pub grain_g: f64,
    pub balance_noise_g: f64,
    pub temperature: f64,
    pub temperature_noise: f64,
    /// Seconds of stirring needed to dissolve 2.5 g of solid.
    pub dissolve_s_per_2_5g: f64,
    pub dissolve_jitter: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            tau: 0.5,
            ph_noise_sigma: 0.02,
            droplet: DropletConfig::default(),
            grain_g: 0.02,
            balance_noise_g: 0.005,
            temperature: 25.0,
            temperature_noise: 0.05,
            dissolve_s_per_2_5g: 40.0,
            dissolve_jitter: 0.1,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt > 0.0) {
            return Err("plant.dt must be positive".into());
        }
        if !(self.tau > 0.0) {
            return Err("plant.tau must be positive".into());
        }
        if self.ph_noise_sigma < 0.0 || self.grain_g < 0.0 || self.balance_noise_g < 0.0 {
            return Err("plant noise parameters must be non-negative".into());
        }
        let d = &self.droplet;
        if !(d.volume_ml > 0.0 && d.displacement_mm > 0.0) {
            return Err("plant.droplet volume and displacement must be positive".into());
        }
        if d.jitter < 0.0 || d.jitter_clamp < 0.0 {
            return Err("plant.droplet jitter must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&d.clarity_min) || !(d.clarity_min..=1.0).contains(&d.clarity_max) {
            return Err("plant.droplet clarity range must lie in [0,1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    DropletFailure,
    SensorTimeout,
    StuckGripper,
}

impl FaultKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FaultKind::DropletFailure => "droplet_failure",
            FaultKind::SensorTimeout => "sensor_timeout",
            FaultKind::StuckGripper => "stuck_gripper",
        }
    }
}

/// A fault active on `[start, end)`; no `end` means permanent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    #[serde(default)]
    pub name: String,
    pub kind: FaultKind,
    pub start: f64,
    #[serde(default)]
    pub end: Option<f64>,
}

impl FaultSpec {
    pub fn end_or_inf(&self) -> f64 {
        self.end.unwrap_or(f64::INFINITY)
    }

    pub fn active_at(&self, t: f64) -> bool {
        t >= self.start && t < self.end_or_inf()
    }

    fn overlaps(&self, other: &FaultSpec) -> bool {
        self.start < other.end_or_inf() && other.start < self.end_or_inf()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("fault `{0}` overlaps an existing fault of the same kind")]
    OverlappingFault(String),
    #[error("fault window [{start}, {end}) is not in the future or not ordered")]
    InvalidWindow { start: f64, end: f64 },
    #[error(transparent)]
    Chem(#[from] ChemError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ActuatorCommand {
    /// Gripper closing rate, mm/s.
    pub closure_rate: f64,
    /// Gripper opening rate during reset, mm/s.
    pub retract_rate: f64,
    /// Solid pouring rate onto the balance, g/s.
    pub pour_rate: f64,
    /// Move the weighed solid into the beaker.
    pub transfer: bool,
    pub stir: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticEvent {
    pub timestamp: f64,
    pub amplitude: f64,
    pub clarity: f64,
    /// Hidden ground truth, for tests and audits only.
    pub true_volume: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorStatus {
    Ok,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub timestamp: f64,
    pub ph: f64,
    pub ph_status: SensorStatus,
    pub temperature: f64,
    pub balance: f64,
    pub color: Option<String>,
    pub solid_remaining: f64,
    pub events: Vec<AcousticEvent>,
}

/// What the vessel holds and how it reacts to titrant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Vessel {
    AcidBase {
        initial: SolutionState,
    },
    Complexometric {
        /// mol of metal ion
        metal_moles: f64,
        /// L
        initial_volume: f64,
        indicator: IndicatorSpec,
    },
    Weighing {
        /// L of solvent in the beaker
        water_volume: f64,
    },
}

impl Vessel {
    pub fn acid_base(analyte: &AcidSpec) -> Self {
        Vessel::AcidBase {
            initial: SolutionState::from_analyte(analyte),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Plant {
    config: PlantConfig,
    vessel: Vessel,
    /// Titrant concentration, mol/L.
    titrant_conc: f64,
    rng: ChaCha8Rng,
    clock: f64,
    faults: Vec<FaultSpec>,

    /// Closure accumulated since the last droplet crossing, mm.
    accumulator: f64,
    total_closure: f64,
    dispensed_ml: f64,
    droplets: u64,
    solution: SolutionState,

    equilibrium_ph: f64,
    sensed_ph: f64,
    last_reading: f64,
    status: SensorStatus,

    balance_mass: f64,
    beaker_solid: f64,
    dissolved_solid: f64,
    dissolve_rate: f64,
    last_frame: Option<SensorFrame>,
}

impl Plant {
    pub fn new(config: PlantConfig, vessel: Vessel, titrant_conc: f64, seed: u64) -> Result<Self, PlantError> {
        let solution = match &vessel {
            Vessel::AcidBase { initial } => initial.clone(),
            Vessel::Complexometric { initial_volume, .. } => SolutionState::water(*initial_volume),
            Vessel::Weighing { water_volume } => SolutionState::water(*water_volume),
        };
        let ph = match &vessel {
            Vessel::AcidBase { .. } => chem::ph_of(&solution)?,
            _ => 7.0,
        };
        let temperature = config.temperature;
        Ok(Self {
            config,
            vessel,
            titrant_conc,
            rng: ChaCha8Rng::seed_from_u64(seed),
            clock: 0.0,
            faults: Vec::new(),
            accumulator: 0.0,
            total_closure: 0.0,
            dispensed_ml: 0.0,
            droplets: 0,
            solution: SolutionState {
                temperature,
                ..solution
            },
            equilibrium_ph: ph,
            sensed_ph: ph,
            last_reading: ph,
            status: SensorStatus::Ok,
            balance_mass: 0.0,
            beaker_solid: 0.0,
            dissolved_solid: 0.0,
            dissolve_rate: 0.0,
            last_frame: None,
        })
    }

    pub fn config(&self) -> &PlantConfig {
        &self.config
    }

    pub fn vessel(&self) -> &Vessel {
        &self.vessel
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn solution(&self) -> &SolutionState {
        &self.solution
    }

    pub fn equilibrium_ph(&self) -> f64 {
        self.equilibrium_ph
    }

    pub fn sensed_ph(&self) -> f64 {
        self.sensed_ph
    }

    /// Sum of emitted droplet volumes, mL.
    pub fn dispensed_ml(&self) -> f64 {
        self.dispensed_ml
    }

    pub fn droplet_count(&self) -> u64 {
        self.droplets
    }

    pub fn total_closure(&self) -> f64 {
        self.total_closure
    }

    pub fn balance_mass(&self) -> f64 {
        self.balance_mass
    }

    pub fn beaker_solid(&self) -> f64 {
        self.beaker_solid
    }

    pub fn solid_remaining(&self) -> f64 {
        (self.beaker_solid - self.dissolved_solid).max(0.0)
    }

    pub fn faults(&self) -> &[FaultSpec] {
        &self.faults
    }

    pub fn inject_fault(&mut self, fault: FaultSpec) -> Result<(), PlantError> {
        if fault.start < self.clock || fault.end_or_inf() <= fault.start {
            return Err(PlantError::InvalidWindow {
                start: fault.start,
                end: fault.end_or_inf(),
            });
        }
        if self
            .faults
            .iter()
            .any(|f| f.kind == fault.kind && f.overlaps(&fault))
        {
            return Err(PlantError::OverlappingFault(fault.kind.as_str().into()));
        }
        self.faults.push(fault);
        Ok(())
    }

    fn fault_active(&self, kind: FaultKind, t: f64) -> bool {
        self.faults.iter().any(|f| f.kind == kind && f.active_at(t))
    }

    /// Faults whose window covers `t`.
    pub fn active_faults(&self, t: f64) -> Vec<&FaultSpec> {
        self.faults.iter().filter(|f| f.active_at(t)).collect()
    }

    /// Latest probe reading and its status.
    pub fn read_ph(&self) -> (f64, SensorStatus) {
        (self.last_reading, self.status)
    }

    pub fn color(&self) -> Option<String> {
        match &self.vessel {
            Vessel::Complexometric {
                metal_moles,
                indicator,
                ..
            } => {
                let edta = self.titrant_conc * self.dispensed_ml * 1e-3;
                Some(chem::indicator_color(*metal_moles, edta, indicator).to_string())
            }
            _ => None,
        }
    }

    fn draw_droplet_volume(&mut self) -> f64 {
        let d = &self.config.droplet;
        let (nominal, jitter, clamp) = (d.volume_ml, d.jitter, d.jitter_clamp);
        if jitter == 0.0 {
            return nominal;
        }
        let z: f64 = Normal::new(0.0, jitter)
            .map(|n| n.sample(&mut self.rng))
            .unwrap_or(0.0);
        nominal * (1.0 + z.clamp(-clamp, clamp))
    }

    fn update_chemistry(&mut self) -> Result<(), ChemError> {
        match &self.vessel {
            Vessel::AcidBase { initial } => {
                let mut s = initial.clone();
                s.add_base(self.titrant_conc, self.dispensed_ml * 1e-3);
                s.temperature = self.solution.temperature;
                self.equilibrium_ph = chem::ph_of(&s)?;
                self.solution = s;
            }
            Vessel::Complexometric { initial_volume, .. } => {
                self.solution.volume = initial_volume + self.dispensed_ml * 1e-3;
            }
            Vessel::Weighing { .. } => {}
        }
        Ok(())
    }

    /// Advances the plant by `dt` seconds under `command`.
    pub fn tick(&mut self, dt: f64, command: &ActuatorCommand) -> Result<SensorFrame, PlantError> {
        let t0 = self.clock;
        self.clock += dt;
        let t = self.clock;
        let mut events = Vec::new();

        // Gripper.
        if !self.fault_active(FaultKind::StuckGripper, t0) {
            let closing = command.closure_rate.max(0.0) * dt;
            if closing > 0.0 {
                self.total_closure += closing;
                self.accumulator += closing;
                let d_drop = self.config.droplet.displacement_mm;
                let failing = self.fault_active(FaultKind::DropletFailure, t0);
                while self.accumulator >= d_drop * (1.0 - 1e-9) {
                    self.accumulator -= d_drop;
                    if failing {
                        continue;
                    }
                    let vol = self.draw_droplet_volume();
                    self.dispensed_ml += vol;
                    self.droplets += 1;
                    let (lo, hi) = (self.config.droplet.clarity_min, self.config.droplet.clarity_max);
                    let clarity = if hi > lo { self.rng.random_range(lo..=hi) } else { lo };
                    let amplitude = (0.7 * vol / self.config.droplet.volume_ml).clamp(1e-6, 1.0);
                    events.push(AcousticEvent {
                        timestamp: t,
                        amplitude,
                        clarity,
                        true_volume: vol,
                    });
                }
                self.accumulator = self.accumulator.max(0.0);
            }
            let opening = command.retract_rate.max(0.0) * dt;
            if opening > 0.0 {
                self.accumulator = (self.accumulator - opening).max(0.0);
            }
        }
        if !events.is_empty() {
            self.update_chemistry()?;
        }

        // Balance and beaker.
        if command.pour_rate > 0.0 {
            let mass = command.pour_rate * dt;
            let g = self.config.grain_g;
            let added = if g > 0.0 {
                let n = Poisson::new(mass / g)
                    .map(|p| p.sample(&mut self.rng))
                    .unwrap_or(0.0);
                n * g
            } else {
                mass
            };
            self.balance_mass += added;
        }
        if command.transfer && self.balance_mass > 0.0 {
            self.beaker_solid += self.balance_mass;
            self.balance_mass = 0.0;
            let full = self.config.dissolve_s_per_2_5g * (self.beaker_solid / 2.5).max(0.05);
            let z: f64 = Normal::new(0.0, self.config.dissolve_jitter.max(0.0))
                .map(|n| n.sample(&mut self.rng))
                .unwrap_or(0.0);
            let seconds = (full * (1.0 + z.clamp(-0.3, 0.3))).max(dt);
            self.dissolve_rate = self.beaker_solid / seconds;
        }
        if command.stir && self.beaker_solid > self.dissolved_solid {
            self.dissolved_solid = (self.dissolved_solid + self.dissolve_rate * dt).min(self.beaker_solid);
        }

        // Probe.
        let alpha = 1.0 - (-dt / self.config.tau).exp();
        self.sensed_ph += (self.equilibrium_ph - self.sensed_ph) * alpha;
        let timeout = self.fault_active(FaultKind::SensorTimeout, t0);
        if timeout {
            self.status = SensorStatus::Timeout;
        } else {
            self.status = SensorStatus::Ok;
            let noise = self.gaussian(self.config.ph_noise_sigma);
            self.last_reading = self.sensed_ph + noise;
        }
        let temperature = self.config.temperature + self.gaussian(self.config.temperature_noise);
        let balance = self.balance_mass + self.gaussian(self.config.balance_noise_g);

        let frame = SensorFrame {
            timestamp: t,
            ph: self.last_reading,
            ph_status: self.status,
            temperature,
            balance,
            color: self.color(),
            solid_remaining: self.solid_remaining(),
            events,
        };
        self.last_frame = Some(frame.clone());
        Ok(frame)
    }

    /// Pours solid at `rate` g/s for one step with nothing else commanded.
    pub fn pour_solid(&mut self, dt: f64, rate: f64) -> Result<SensorFrame, PlantError> {
        self.tick(
            dt,
            &ActuatorCommand {
                pour_rate: rate,
                ..Default::default()
            },
        )
    }

    pub fn last_frame(&self) -> Option<&SensorFrame> {
        self.last_frame.as_ref()
    }

    fn gaussian(&mut self, sigma: f64) -> f64 {
        if sigma > 0.0 {
            Normal::new(0.0, sigma)
                .map(|n| n.sample(&mut self.rng))
                .unwrap_or(0.0)
        } else {
            0.0
        }
    }
}
