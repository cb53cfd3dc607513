//! Statistics-based quantity logger: a motion/waiting/reset controller that
//! dispenses at a constant rate and books Q̂ = k · displacement.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::{ActuatorCommand, DROP_VOLUME_ML, D_DROP_MM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispenseMode {
    /// Gripper closure in mm, quantity in mL.
    Volume,
    /// Pour rate in g/s, quantity in g.
    Mass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub mode: DispenseMode,
    /// Quantity per unit displacement.
    pub k: f64,
    pub rate: f64,
    pub target: f64,
    pub epsilon: f64,
    pub fine_threshold: f64,
    pub fine_rate: f64,
    pub rate_of_change_limit: f64,
    pub max_retries: u32,
    /// Duration of one reset retraction, s.
    pub reset_duration: f64,
    pub retract_rate: f64,
    /// +1 when the controlled variable rises with dispensing, −1 otherwise.
    pub direction: f64,
    pub confidence: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        let rate = D_DROP_MM / 0.5;
        Self {
            mode: DispenseMode::Volume,
            k: DROP_VOLUME_ML / D_DROP_MM,
            rate,
            target: 12.5,
            epsilon: 0.01,
            fine_threshold: 1.0,
            fine_rate: rate / 5.0,
            rate_of_change_limit: 0.5,
            max_retries: 3,
            reset_duration: 1.0,
            retract_rate: D_DROP_MM,
            direction: 1.0,
            confidence: 0.9,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.k > 0.0) {
            return Err("controller.k must be positive".into());
        }
        if !(self.rate > 0.0 && self.fine_rate > 0.0) {
            return Err("controller rates must be positive".into());
        }
        if self.fine_rate > self.rate {
            return Err("controller.fine_rate must not exceed controller.rate".into());
        }
        if !(self.epsilon > 0.0) {
            return Err("controller.epsilon must be positive".into());
        }
        if !(self.reset_duration > 0.0) {
            return Err("controller.reset_duration must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Motion,
    Waiting,
    Reset,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("displacement must be non-negative, got {0}")]
    NegativeDisplacement(f64),
}

/// Δq = k · Δd.
pub fn map_displacement(delta_d: f64, k: f64) -> Result<f64, ControllerError> {
    if delta_d < 0.0 {
        return Err(ControllerError::NegativeDisplacement(delta_d));
    }
    Ok(k * delta_d)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Current value of the controlled variable (smoothed).
    pub measured: Option<f64>,
    pub stable: bool,
    pub anomaly: Option<String>,
    pub resume: bool,
    pub hold: bool,
    /// Finish now, whatever the measurement says.
    pub stop: bool,
    pub droplet_confirmed: bool,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseChange {
    pub time: f64,
    pub from: Phase,
    pub to: Phase,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ControllerRecord {
    Estimate { q_stat: f64, confidence: f64 },
    TargetReached { measured: f64 },
    Escalation { reason: String, retries: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    config: ControllerConfig,
    phase: Phase,
    active: bool,
    finished: bool,
    escalated: bool,
    q_stat: f64,
    displacement_total: f64,
    last_measured: Option<f64>,
    last_change_rate: f64,
    reset_reason: Option<String>,
    reset_elapsed: f64,
    retries: u32,
    fine: bool,
    clock: f64,
    phase_log: Vec<PhaseChange>,
}

impl Controller {
    pub fn new(config: ControllerConfig) -> Self {
        Self {
            config,
            phase: Phase::Waiting,
            active: false,
            finished: false,
            escalated: false,
            q_stat: 0.0,
            displacement_total: 0.0,
            last_measured: None,
            last_change_rate: 0.0,
            reset_reason: None,
            reset_elapsed: 0.0,
            retries: 0,
            fine: false,
            clock: 0.0,
            phase_log: Vec::new(),
        }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn is_escalated(&self) -> bool {
        self.escalated
    }

    pub fn is_dispensing(&self) -> bool {
        self.active && self.phase == Phase::Motion
    }

    pub fn displacement_total(&self) -> f64 {
        self.displacement_total
    }

    pub fn retries(&self) -> u32 {
        self.retries
    }

    pub fn reset_reason(&self) -> Option<&str> {
        self.reset_reason.as_deref()
    }

    pub fn last_change_rate(&self) -> f64 {
        self.last_change_rate
    }

    pub fn phase_log(&self) -> &[PhaseChange] {
        &self.phase_log
    }

    /// Running estimate and its confidence.
    pub fn accumulated(&self) -> (f64, f64) {
        let c = if self.phase == Phase::Reset {
            0.0
        } else {
            self.config.confidence
        };
        (self.q_stat, c)
    }

    /// Starts dispensing (logger activation).
    pub fn activate(&mut self) {
        if !self.active {
            self.active = true;
            self.transition(Phase::Motion, "activated");
        }
    }

    fn transition(&mut self, to: Phase, reason: &str) {
        if self.phase != to {
            self.phase_log.push(PhaseChange {
                time: self.clock,
                from: self.phase,
                to,
                reason: reason.to_string(),
            });
            self.phase = to;
        }
    }

    fn past_target(&self, m: f64) -> bool {
        (m - self.config.target).abs() <= self.config.epsilon
            || (m - self.config.target) * self.config.direction > 0.0
    }

    fn enter_reset(&mut self, reason: String) -> Option<ControllerRecord> {
        if self.retries >= self.config.max_retries {
            self.escalated = true;
            self.transition(Phase::Reset, "escalated");
            self.reset_reason = Some(reason.clone());
            return Some(ControllerRecord::Escalation {
                reason,
                retries: self.retries,
            });
        }
        self.retries += 1;
        self.reset_elapsed = 0.0;
        self.transition(Phase::Reset, &reason);
        self.reset_reason = Some(reason);
        None
    }

    fn command(&self, rate: f64) -> ActuatorCommand {
        match self.config.mode {
            DispenseMode::Volume => ActuatorCommand {
                closure_rate: rate,
                ..Default::default()
            },
            DispenseMode::Mass => ActuatorCommand {
                pour_rate: rate,
                ..Default::default()
            },
        }
    }

    /// One control step.
    pub fn step(&mut self, obs: &Observation) -> (ActuatorCommand, Vec<ControllerRecord>) {
        let dt = obs.dt;
        self.clock += dt;
        let mut records = Vec::new();
        if let (Some(m), Some(prev)) = (obs.measured, self.last_measured) {
            if dt > 0.0 {
                self.last_change_rate = (m - prev) / dt;
            }
        }
        if obs.measured.is_some() {
            self.last_measured = obs.measured;
        }
        if obs.droplet_confirmed {
            self.retries = 0;
        }
        if !self.active || self.escalated {
            return (ActuatorCommand::default(), records);
        }
        if obs.stop && !self.finished {
            self.finished = true;
            if self.phase != Phase::Waiting {
                self.transition(Phase::Waiting, "stop");
            }
            return (ActuatorCommand::default(), records);
        }
        match self.phase {
            Phase::Motion => {
                if let Some(a) = obs.anomaly.clone() {
                    records.extend(self.enter_reset(a));
                    return (ActuatorCommand::default(), records);
                }
                if obs.hold {
                    self.transition(Phase::Waiting, "hold");
                    return (ActuatorCommand::default(), records);
                }
                if self.last_change_rate.abs() > self.config.rate_of_change_limit {
                    self.transition(Phase::Waiting, "rate_of_change");
                    return (ActuatorCommand::default(), records);
                }
                if let Some(m) = obs.measured {
                    if self.past_target(m) {
                        self.finished = true;
                        self.transition(Phase::Waiting, "target");
                        records.push(ControllerRecord::TargetReached { measured: m });
                        return (ActuatorCommand::default(), records);
                    }
                }
                // Fine mode latches so noise at the threshold cannot flip
                // the rate mid-drop.
                self.fine |= obs
                    .measured
                    .is_some_and(|m| (m - self.config.target).abs() <= self.config.fine_threshold);
                let rate = if self.fine {
                    self.config.fine_rate
                } else {
                    self.config.rate
                };
                let dd = rate * dt;
                self.displacement_total += dd;
                self.q_stat = self.config.k * self.displacement_total;
                records.push(ControllerRecord::Estimate {
                    q_stat: self.q_stat,
                    confidence: self.config.confidence,
                });
                (self.command(rate), records)
            }
            Phase::Waiting => {
                if let Some(a) = obs.anomaly.clone() {
                    records.extend(self.enter_reset(a));
                    return (ActuatorCommand::default(), records);
                }
                if obs.resume && obs.stable && !self.finished {
                    if let Some(m) = obs.measured {
                        if self.past_target(m) {
                            self.finished = true;
                            records.push(ControllerRecord::TargetReached { measured: m });
                            return (ActuatorCommand::default(), records);
                        }
                    }
                    self.last_change_rate = 0.0;
                    self.transition(Phase::Motion, "resume");
                }
                (ActuatorCommand::default(), records)
            }
            Phase::Reset => {
                self.reset_elapsed += dt;
                if self.reset_elapsed >= self.config.reset_duration - 1e-9 {
                    self.last_change_rate = 0.0;
                    self.transition(Phase::Motion, "reset_done");
                    return (ActuatorCommand::default(), records);
                }
                let cmd = match self.config.mode {
                    DispenseMode::Volume => ActuatorCommand {
                        retract_rate: self.config.retract_rate,
                        ..Default::default()
                    },
                    DispenseMode::Mass => ActuatorCommand::default(),
                };
                (cmd, records)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs() -> Observation {
        Observation {
            measured: Some(2.0),
            stable: true,
            dt: 0.1,
            ..Default::default()
        }
    }

    #[test]
    fn ten_drops_of_displacement() {
        let mut c = Controller::new(ControllerConfig {
            rate: D_DROP_MM / 0.1,
            fine_rate: D_DROP_MM / 0.1,
            ..Default::default()
        });
        c.activate();
        for _ in 0..10 {
            c.step(&obs());
        }
        let (q, g) = c.accumulated();
        assert!((q - 0.46875).abs() < 1e-12);
        assert_eq!(g, 0.9);
    }

    #[test]
    fn target_enters_waiting() {
        let mut c = Controller::new(ControllerConfig::default());
        c.activate();
        let (cmd, rec) = c.step(&Observation {
            measured: Some(12.495),
            ..obs()
        });
        assert_eq!(c.phase(), Phase::Waiting);
        assert_eq!(cmd, ActuatorCommand::default());
        assert!(matches!(rec[0], ControllerRecord::TargetReached { .. }));
    }

    #[test]
    fn anomaly_resets() {
        let mut c = Controller::new(ControllerConfig::default());
        c.activate();
        c.step(&Observation {
            anomaly: Some("x".into()),
            ..obs()
        });
        assert_eq!(c.phase(), Phase::Reset);
        assert_eq!(c.accumulated().1, 0.0);
    }

    #[test]
    fn displacement_map() {
        let k = 0.046875 / 0.000415625;
        assert!((map_displacement(0.000415625, k).unwrap() - 0.046875).abs() < 1e-15);
        assert_eq!(map_displacement(0.0, k).unwrap(), 0.0);
        assert!(map_displacement(-1.0, k).is_err());
    }

    #[test]
    fn escalates_after_retries() {
        let mut c = Controller::new(ControllerConfig::default());
        c.activate();
        let bad = Observation {
            anomaly: Some("timeout".into()),
            ..obs()
        };
        let mut escalations = 0;
        for _ in 0..100 {
            let (_, rec) = c.step(&bad);
            escalations += rec
                .iter()
                .filter(|r| matches!(r, ControllerRecord::Escalation { .. }))
                .count();
            // Let the reset finish.
            for _ in 0..10 {
                c.step(&obs());
            }
        }
        assert_eq!(escalations, 1);
        assert!(c.is_escalated());
    }

    #[test]
    fn stop_finishes() {
        let mut c = Controller::new(ControllerConfig::default());
        c.activate();
        c.step(&obs());
        c.step(&Observation { stop: true, ..obs() });
        assert!(c.is_finished());
        assert_eq!(c.phase(), Phase::Waiting);
        let (cmd, _) = c.step(&Observation { resume: true, ..obs() });
        assert_eq!(cmd, ActuatorCommand::default());
    }
}
