use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::fsm::StateId;
use crate::plant::{AcousticEvent, DROP_VOLUME_ML};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventClass {
    Expected,
    Anomalous,
}

/// Expected iff dispensing is active and `q_t` anticipates droplets.
pub fn classify_event(
    _event: &AcousticEvent,
    q_t: &StateId,
    dispensing_active: bool,
    anticipating: &BTreeSet<StateId>,
) -> EventClass {
    if dispensing_active && anticipating.contains(q_t) {
        EventClass::Expected
    } else {
        EventClass::Anomalous
    }
}

/// Count × nominal volume, with the mean clarity as confidence.
pub fn estimate_audio_quantity(events: &[AcousticEvent], v_nominal: f64, baseline: f64) -> (f64, f64) {
    if events.is_empty() {
        return (0.0, baseline);
    }
    let q = events.len() as f64 * v_nominal;
    let c = events.iter().map(|e| e.clarity).sum::<f64>() / events.len() as f64;
    (q, c.clamp(0.0, 1.0))
}

/// The timeout symbol when dispensing has gone `limit` seconds without an
/// event.
pub fn check_timeout(last_event_time: f64, now: f64, limit: f64, dispensing_active: bool) -> Option<&'static str> {
    (dispensing_active && now - last_event_time > limit).then_some(EVENT_TIMEOUT)
}

pub const EVENT_TIMEOUT: &str = "event_timeout";
pub const UNEXPECTED_EVENT: &str = "unexpected_droplet";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioConfig {
    pub nominal_volume_ml: f64,
    pub timeout_s: f64,
    pub baseline_confidence: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            nominal_volume_ml: DROP_VOLUME_ML,
            timeout_s: 10.0,
            baseline_confidence: 0.8,
        }
    }
}

/// What the audio supervisor produced this tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AudioOutput {
    /// (event, per-event estimate mL, confidence) for expected events.
    pub expected: Vec<(AcousticEvent, f64, f64)>,
    pub anomalous: Vec<AcousticEvent>,
    pub timeout: Option<&'static str>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioSupervisor {
    config: AudioConfig,
    anticipating: BTreeSet<StateId>,
    q_total: f64,
    expected_count: u64,
    anomalous_count: u64,
    last_event_time: f64,
    was_dispensing: bool,
}

impl AudioSupervisor {
    pub fn new(config: AudioConfig, anticipating: BTreeSet<StateId>) -> Self {
        Self {
            config,
            anticipating,
            q_total: 0.0,
            expected_count: 0,
            anomalous_count: 0,
            last_event_time: 0.0,
            was_dispensing: false,
        }
    }

    pub fn total(&self) -> f64 {
        self.q_total
    }

    pub fn expected_count(&self) -> u64 {
        self.expected_count
    }

    pub fn anomalous_count(&self) -> u64 {
        self.anomalous_count
    }

    pub fn anticipating(&self) -> &BTreeSet<StateId> {
        &self.anticipating
    }

    /// Classifies this tick's events and checks the silence timeout.
    pub fn step(&mut self, now: f64, events: &[AcousticEvent], q_t: &StateId, dispensing_active: bool) -> AudioOutput {
        let mut out = AudioOutput::default();
        if dispensing_active && !self.was_dispensing {
            self.last_event_time = self.last_event_time.max(now);
        }
        self.was_dispensing = dispensing_active;
        for e in events {
            match classify_event(e, q_t, dispensing_active, &self.anticipating) {
                EventClass::Expected => {
                    let (q, c) = estimate_audio_quantity(
                        std::slice::from_ref(e),
                        self.config.nominal_volume_ml,
                        self.config.baseline_confidence,
                    );
                    self.q_total = (self.expected_count + 1) as f64 * self.config.nominal_volume_ml;
                    self.expected_count += 1;
                    out.expected.push((e.clone(), q, c));
                }
                EventClass::Anomalous => {
                    self.anomalous_count += 1;
                    out.anomalous.push(e.clone());
                }
            }
            self.last_event_time = self.last_event_time.max(e.timestamp);
        }
        if self.anticipating.contains(q_t) {
            out.timeout = check_timeout(self.last_event_time, now, self.config.timeout_s, dispensing_active);
            if out.timeout.is_some() {
                self.last_event_time = now;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(clarity: f64) -> AcousticEvent {
        AcousticEvent {
            timestamp: 1.0,
            amplitude: 0.7,
            clarity,
            true_volume: DROP_VOLUME_ML,
        }
    }

    fn q4() -> BTreeSet<StateId> {
        [StateId::new("q4_titrating")].into_iter().collect()
    }

    #[test]
    fn classification() {
        let s = q4();
        assert_eq!(
            classify_event(&ev(0.9), &"q4_titrating".into(), true, &s),
            EventClass::Expected
        );
        assert_eq!(
            classify_event(&ev(0.9), &"q5_waiting_stable".into(), false, &s),
            EventClass::Anomalous
        );
        assert_eq!(
            classify_event(&ev(0.9), &"q2_drawn".into(), true, &s),
            EventClass::Anomalous
        );
    }

    #[test]
    fn quantity_estimates() {
        let events: Vec<_> = (0..100).map(|_| ev(0.9)).collect();
        let (q, c) = estimate_audio_quantity(&events, DROP_VOLUME_ML, 0.8);
        assert_eq!(q, 4.6875);
        assert!((c - 0.9).abs() < 1e-12);
        assert_eq!(estimate_audio_quantity(&[], DROP_VOLUME_ML, 0.8), (0.0, 0.8));
    }

    #[test]
    fn timeouts() {
        assert_eq!(check_timeout(0.0, 12.0, 10.0, true), Some(EVENT_TIMEOUT));
        assert_eq!(check_timeout(0.0, 12.0, 10.0, false), None);
        assert_eq!(check_timeout(0.0, 9.9, 10.0, true), None);
    }
}
