//! Rule-based Vision and Audio supervisors.

mod audio;
mod vision;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub use audio::{
    check_timeout, classify_event, estimate_audio_quantity, AudioConfig, AudioOutput,
    AudioSupervisor, EventClass, EVENT_TIMEOUT, UNEXPECTED_EVENT,
};
pub use vision::{ControllerView, Decision, ScenarioKind, VisionConfig, VisionSupervisor};

/// Slack for comparing sample timestamps that are sums of `dt`.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityConfig {
    pub window_s: f64,
    pub max_delta: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            window_s: 1.0,
            max_delta: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub target: f64,
    pub tolerance: f64,
    pub hold_s: f64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            target: 12.5,
            tolerance: 0.05,
            hold_s: 5.0,
        }
    }
}

/// Readings in the trailing `span` seconds plus the one in force at its
/// start, or `None` if the window does not reach back that far.
fn trailing(window: &[(f64, f64)], span: f64) -> Option<&[(f64, f64)]> {
    let last = window.last()?.0;
    let start = window
        .partition_point(|p| p.0 <= last - span + TIME_EPS)
        .saturating_sub(1);
    let slice = &window[start..];
    (last - slice[0].0 >= span - TIME_EPS).then_some(slice)
}

/// True iff the readings of the trailing `window_s` seconds vary by at
/// most `max_delta` and the window spans at least `window_s`.
pub fn detect_stability(window: &[(f64, f64)], config: &StabilityConfig) -> bool {
    let Some(slice) = trailing(window, config.window_s) else {
        return false;
    };
    let (lo, hi) = slice
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    hi - lo <= config.max_delta
}

/// True iff every reading of the trailing `hold_s` seconds lies within
/// `target ± tolerance` and the window spans at least `hold_s`.
pub fn detect_endpoint(window: &[(f64, f64)], config: &EndpointConfig) -> bool {
    let Some(slice) = trailing(window, config.hold_s) else {
        return false;
    };
    slice
        .iter()
        .all(|p| (p.1 - config.target).abs() <= config.tolerance)
}

/// Bounded (t, value) history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReadingWindow {
    buf: VecDeque<(f64, f64)>,
    horizon: f64,
}

impl ReadingWindow {
    pub fn new(horizon: f64) -> Self {
        Self {
            buf: VecDeque::new(),
            horizon,
        }
    }

    pub fn push(&mut self, t: f64, value: f64) {
        self.buf.push_back((t, value));
        while let Some(&(t0, _)) = self.buf.front() {
            if t - t0 > self.horizon + TIME_EPS {
                self.buf.pop_front();
            } else {
                break;
            }
        }
    }

    pub fn clear(&mut self) {
        self.buf.clear();
    }

    pub fn as_slice(&mut self) -> &[(f64, f64)] {
        self.buf.make_contiguous()
    }

    pub fn last(&self) -> Option<(f64, f64)> {
        self.buf.back().copied()
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Mean of the trailing `span` seconds (whatever is available).
    pub fn mean_over(&self, span: f64) -> Option<f64> {
        let last = self.buf.back()?.0;
        let (s, n) = self
            .buf
            .iter()
            .rev()
            .take_while(|p| p.0 >= last - span - TIME_EPS)
            .fold((0.0, 0usize), |(s, n), p| (s + p.1, n + 1));
        Some(s / n as f64)
    }
}
