use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{detect_endpoint, detect_stability, EndpointConfig, ReadingWindow, StabilityConfig};
use crate::controller::Phase;
use crate::fsm::{MachineCursor, StateId, SymbolId};
use crate::plant::{SensorFrame, SensorStatus};
use crate::planner::names::*;
use crate::planner::Roles;
use crate::protocol::{AgentId, AgentMessage, Payload, SubtaskId, TaskPlan};

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Titrate to a target pH.
    PhTitration,
    /// Titrate to an indicator color change.
    ColorTitration,
    /// Weigh a solid and dissolve it.
    Weighing,
}

impl ScenarioKind {
    pub fn is_titration(&self) -> bool {
        !matches!(self, ScenarioKind::Weighing)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionConfig {
    pub kind: ScenarioKind,
    pub stability: StabilityConfig,
    pub endpoint: EndpointConfig,
    /// Indicator color that marks the endpoint.
    pub free_color: String,
    /// Longest tolerated probe outage before escalation, s.
    pub sensor_timeout_limit_s: f64,
    pub sensor_confidence: f64,
}

/// What the supervisor can see of the dispensing controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerView {
    pub active: bool,
    pub phase: Phase,
    pub finished: bool,
    pub escalated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Fire {
        symbol: SymbolId,
        from: StateId,
        to: StateId,
        emitter: AgentId,
    },
    Send {
        receiver: AgentId,
        subtask: SubtaskId,
        q_target: StateId,
        payload: Payload,
    },
    Escalate {
        code: String,
        detail: String,
    },
    Accept,
}

#[derive(Debug)]
pub struct VisionSupervisor {
    cursor: MachineCursor,
    plan: Arc<TaskPlan>,
    config: VisionConfig,
    roles: Roles,
    readings: ReadingWindow,
    post_drop: ReadingWindow,
    measured: Option<f64>,
    stable: bool,
    last_raw: Option<f64>,
    last_temperature: f64,
    color_free_since: Option<f64>,
    stop_sent: bool,
    verify_at: Option<f64>,
    timeout_since: Option<f64>,
    dissolve_start: Option<f64>,
    drops: u64,
    now: f64,
    out: Vec<Decision>,
}

impl VisionSupervisor {
    pub fn new(plan: Arc<TaskPlan>, config: VisionConfig, roles: Roles) -> Self {
        let machine = Arc::new(plan.state_machine.clone());
        let horizon = config.endpoint.hold_s.max(config.stability.window_s) + 1.0;
        Self {
            cursor: MachineCursor::new(machine),
            plan,
            roles,
            readings: ReadingWindow::new(horizon),
            post_drop: ReadingWindow::new(horizon),
            measured: None,
            stable: false,
            last_raw: None,
            last_temperature: 25.0,
            color_free_since: None,
            stop_sent: false,
            verify_at: None,
            timeout_since: None,
            dissolve_start: None,
            drops: 0,
            now: 0.0,
            out: Vec::new(),
            config,
        }
    }

    pub fn cursor(&self) -> &MachineCursor {
        &self.cursor
    }

    pub fn current(&self) -> &StateId {
        self.cursor.current()
    }

    pub fn measured(&self) -> Option<f64> {
        self.measured
    }

    pub fn stable(&self) -> bool {
        self.stable
    }

    pub fn drops(&self) -> u64 {
        self.drops
    }

    pub fn config(&self) -> &VisionConfig {
        &self.config
    }

    fn send(&mut self, receiver: AgentId, subtask: &SubtaskId, q_target: StateId, payload: Payload) {
        self.out.push(Decision::Send {
            receiver,
            subtask: subtask.clone(),
            q_target,
            payload,
        });
    }

    fn command(&mut self, receiver: AgentId, subtask: SubtaskId, q_target: &str, action: &str) {
        self.send(
            receiver,
            &subtask,
            StateId::new(q_target),
            Payload::command(action, action),
        );
    }

    fn here(&self) -> StateId {
        self.cursor.current().clone()
    }

    fn record(&mut self, subtask: SubtaskId, channel: &str, value: f64, unit: &str, confidence: f64) {
        let q = self.here();
        let t = self.now;
        self.send(
            AgentId::Recorder,
            &subtask,
            q,
            Payload::Estimate {
                channel: channel.into(),
                value,
                unit: unit.into(),
                confidence,
                timestamp: t,
            },
        );
    }

    fn log_anomaly(&mut self, code: &str, detail: &str) {
        let q = self.here();
        let t = self.now;
        let sub = self.roles.monitor.clone();
        self.send(
            AgentId::Recorder,
            &sub,
            q,
            Payload::Anomaly {
                code: code.into(),
                detail: detail.into(),
                timestamp: t,
            },
        );
    }

    fn escalate(&mut self, code: &str, detail: &str) {
        self.log_anomaly(code, detail);
        self.out.push(Decision::Escalate {
            code: code.into(),
            detail: detail.into(),
        });
    }

    fn reset_controller(&mut self, reason: &str) {
        let mut params = BTreeMap::new();
        params.insert("action".to_string(), serde_json::Value::from("reset"));
        params.insert("reason".to_string(), serde_json::Value::from(reason));
        let q = self.here();
        let sub = self.roles.logger.clone();
        self.send(
            AgentId::StatLogger,
            &sub,
            q,
            Payload::Command {
                symbol: SymbolId::new("reset"),
                params,
            },
        );
    }

    /// Fires `symbol` on the cursor and runs the new state's entry actions.
    fn fire(&mut self, symbol: &str, emitter: AgentId) -> bool {
        let from = self.here();
        let sym = SymbolId::new(symbol);
        match self.cursor.step(&sym, self.now, emitter) {
            Ok(to) => {
                self.out.push(Decision::Fire {
                    symbol: sym,
                    from,
                    to: to.clone(),
                    emitter,
                });
                self.on_enter(to.as_str(), symbol);
                true
            }
            Err(e) => {
                self.escalate("undefined_transition", &e.to_string());
                false
            }
        }
    }

    fn on_enter(&mut self, state: &str, via: &str) {
        let plan = Arc::clone(&self.plan);
        let logger = &plan.module_instantiation.stat_logger;
        if logger.activate && logger.activation_phase.as_str() == state {
            let sub = self.roles.logger.clone();
            self.command(AgentId::StatLogger, sub, state, "activate");
        }
        match (self.config.kind, state) {
            (ScenarioKind::Weighing, W1) => {
                let sub = self.roles.manipulation.clone();
                self.command(AgentId::ActionAgent, sub, W2, POSITION);
            }
            (ScenarioKind::Weighing, W3) => {
                let sub = self.roles.transfer.clone();
                self.command(AgentId::ActionAgent, sub, W4, TRANSFER);
            }
            (ScenarioKind::Weighing, W4) => {
                let sub = self.roles.transfer.clone();
                self.command(AgentId::ActionAgent, sub, W5, STIR);
            }
            (ScenarioKind::Weighing, W5) => {
                self.dissolve_start = Some(self.now);
            }
            (_, Q1) => {
                let sub = self.roles.manipulation.clone();
                self.command(AgentId::ActionAgent, sub, Q2, DRAW);
            }
            (_, Q3) => {
                self.fire(TITRATE, AgentId::VisionSupervisor);
            }
            (_, Q5) if via == AUDIO_DETECT => {
                self.drops += 1;
                self.post_drop.clear();
                let sub = self.roles.logger.clone();
                self.command(AgentId::StatLogger, sub, Q5, "hold");
            }
            _ => {}
        }
    }

    fn finish(&mut self, accept_state: &str) {
        let t = self.last_temperature;
        let sub = self.roles.record.clone();
        self.record(sub, "sensor", t, "degC", self.config.sensor_confidence);
        let sub = self.roles.report.clone();
        self.command(AgentId::Summarizer, sub, accept_state, "report");
        self.out.push(Decision::Accept);
    }

    fn endpoint_reached(&mut self) -> bool {
        match self.config.kind {
            ScenarioKind::ColorTitration => self
                .color_free_since
                .is_some_and(|s| self.now - s >= self.config.endpoint.hold_s - TIME_EPS),
            _ => detect_endpoint(self.readings.as_slice(), &self.config.endpoint),
        }
    }

    fn stop_controller(&mut self) {
        if !self.stop_sent {
            self.stop_sent = true;
            let sub = self.roles.logger.clone();
            let q = self.here();
            self.command(AgentId::StatLogger, sub, q.as_str(), "stop");
        }
    }

    /// One supervision step over the latest frame and this tick's inbox.
    pub fn supervise_step(
        &mut self,
        frame: &SensorFrame,
        inbox: Vec<AgentMessage>,
        ctl: ControllerView,
    ) -> Vec<Decision> {
        self.out.clear();
        self.now = frame.timestamp;
        self.last_temperature = frame.temperature;
        let weighing = self.config.kind == ScenarioKind::Weighing;

        // Observations.
        if !weighing && frame.ph_status == SensorStatus::Timeout {
            match self.timeout_since {
                None => {
                    self.timeout_since = Some(self.now);
                    self.readings.clear();
                    self.post_drop.clear();
                    self.log_anomaly("sensor_timeout", "pH probe stopped updating");
                    if ctl.active && !ctl.finished && ctl.phase == Phase::Motion {
                        let sub = self.roles.logger.clone();
                        let q = self.here();
                        self.command(AgentId::StatLogger, sub, q.as_str(), "pause");
                    }
                }
                Some(since) if self.now - since > self.config.sensor_timeout_limit_s => {
                    self.escalate("sensor_timeout", "pH probe outage exceeded the tolerated limit");
                    return std::mem::take(&mut self.out);
                }
                Some(_) => {}
            }
        } else {
            self.timeout_since = None;
            let value = if weighing { frame.balance } else { frame.ph };
            self.last_raw = Some(value);
            self.readings.push(self.now, value);
            self.post_drop.push(self.now, value);
        }
        self.measured = self.readings.mean_over(self.config.stability.window_s);
        self.stable = detect_stability(self.readings.as_slice(), &self.config.stability);

        if self.config.kind == ScenarioKind::ColorTitration {
            if frame.color.as_deref() == Some(self.config.free_color.as_str()) {
                if self.color_free_since.is_none() {
                    self.color_free_since = Some(self.now);
                    self.stop_controller();
                    let sub = self.roles.record.clone();
                    self.record(sub, "visual", 1.0, "indicator", self.config.sensor_confidence);
                }
            } else {
                self.color_free_since = None;
            }
        }

        // Messages.
        for msg in inbox {
            match msg.payload {
                Some(Payload::Completion { symbol, success, .. }) => {
                    if success {
                        self.fire(symbol.as_str(), msg.sender);
                    } else {
                        let detail = format!("{} reported failure of {}", msg.sender, symbol);
                        self.log_anomaly("operation_failed", &detail);
                    }
                }
                Some(Payload::Anomaly { code, detail, .. }) => {
                    if code == "escalation" {
                        self.escalate(&code, &detail);
                        return std::mem::take(&mut self.out);
                    }
                    self.log_anomaly(&code, &detail);
                    if ctl.active && !ctl.finished && !ctl.escalated {
                        self.reset_controller(&code);
                    }
                }
                _ => {}
            }
        }

        // State-driven actions.
        let state = self.here();
        match (self.config.kind, state.as_str()) {
            (ScenarioKind::Weighing, W2) => {
                if ctl.finished && self.stable {
                    let m = self.measured.unwrap_or(frame.balance);
                    let sub = self.roles.record.clone();
                    self.record(sub, "sensor", m, "g", self.config.sensor_confidence);
                    self.fire(WEIGHED, AgentId::VisionSupervisor);
                } else if ctl.active && ctl.phase == Phase::Waiting && !ctl.finished && self.stable {
                    let sub = self.roles.logger.clone();
                    self.command(AgentId::StatLogger, sub, W2, "resume");
                }
            }
            (ScenarioKind::Weighing, W5) => {
                if frame.solid_remaining <= 1e-12 {
                    let dt = self.now - self.dissolve_start.unwrap_or(self.now);
                    let sub = self.roles.dissolution.clone();
                    self.record(sub, "visual", dt, "s", self.config.sensor_confidence);
                    if self.fire(DISSOLVED, AgentId::VisionSupervisor) {
                        let sub = self.roles.transfer.clone();
                        self.command(AgentId::ActionAgent, sub, WA, "stop_stir");
                        self.finish(WA);
                    }
                }
            }
            (ScenarioKind::Weighing, _) => {}
            (_, Q2) => {
                if self.stable {
                    let m = self.measured.unwrap_or(frame.ph);
                    let sub = self.roles.record.clone();
                    self.record(sub.clone(), "sensor", m, "pH", self.config.sensor_confidence);
                    let t = frame.temperature;
                    self.record(sub, "sensor", t, "degC", self.config.sensor_confidence);
                    self.fire(RECORD, AgentId::VisionSupervisor);
                }
            }
            (_, Q4) => {
                if self.endpoint_reached() {
                    if self.fire(ENDPOINT, AgentId::VisionSupervisor) {
                        self.stop_controller();
                        self.verify_at = Some(self.now + self.config.stability.window_s);
                    }
                } else if ctl.active
                    && ctl.phase == Phase::Waiting
                    && !ctl.finished
                    && !self.stop_sent
                    && self.stable
                {
                    let sub = self.roles.logger.clone();
                    self.command(AgentId::StatLogger, sub, Q4, "resume");
                }
            }
            (_, Q5) => {
                if detect_stability(self.post_drop.as_slice(), &self.config.stability) {
                    if let Some(raw) = self.last_raw {
                        let sub = self.roles.record.clone();
                        self.record(sub.clone(), "sensor", raw, "pH", self.config.sensor_confidence);
                        if self.config.kind == ScenarioKind::ColorTitration {
                            let free = if self.color_free_since.is_some() { 1.0 } else { 0.0 };
                            self.record(sub, "visual", free, "indicator", self.config.sensor_confidence);
                        }
                    }
                    if self.fire(STABLE, AgentId::VisionSupervisor) && !self.stop_sent && !ctl.finished {
                        let sub = self.roles.logger.clone();
                        self.command(AgentId::StatLogger, sub, Q4, "resume");
                    }
                }
            }
            (_, Q6) => {
                if self.verify_at.is_some_and(|v| self.now >= v - TIME_EPS) {
                    if self.endpoint_reached() {
                        if self.fire(VERIFY, AgentId::VisionSupervisor) {
                            self.finish(QA);
                        }
                    } else {
                        self.verify_at = Some(self.now + self.config.stability.window_s);
                    }
                }
            }
            _ => {}
        }
        std::mem::take(&mut self.out)
    }
}
