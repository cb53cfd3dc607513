//! The seeded closed loop: plant, supervisors, dispensing controller,
//! manipulation agent and recorder exchanging messages tick by tick.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{Controller, ControllerRecord, Observation, Phase, PhaseChange};
use crate::fsm::{StateId, SymbolId, TransitionRecord};
use crate::fusion::{
    fuse_record, ChannelId, Datastore, DatastoreError, ExecutionAnomaly, FusedRecord,
    ObservationChannel,
};
use crate::plant::{ActuatorCommand, Plant, PlantError, SensorStatus};
use crate::planner::{self, names, Compiled, Roles};
use crate::protocol::{AgentId, AgentMessage, Payload, ProtocolError, SubtaskId, TaskPlan};
use crate::scenario::{ConfigError, ScenarioConfig};
use crate::supervisors::{
    AudioSupervisor, ControllerView, Decision, ScenarioKind, VisionConfig, VisionSupervisor,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Datastore(#[from] DatastoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Accepted,
    Escalated { code: String, detail: String },
}

/// One raw sample of the monitored signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSample {
    pub t: f64,
    pub ph: Option<f64>,
    pub balance: f64,
    pub temperature: f64,
    pub color: Option<String>,
    pub state: String,
}

/// State dump taken at every machine transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub state: String,
    pub symbol: String,
    pub ph: f64,
    pub balance: f64,
    pub color: Option<String>,
    pub drops_heard: u64,
}

/// Ground truth kept alongside the observed record, for checks only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantTruth {
    pub dispensed_ml: f64,
    pub droplets: u64,
    pub total_closure_mm: f64,
    pub final_ph: f64,
    pub beaker_solid_g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioTally {
    pub expected: u64,
    pub anomalous: u64,
    pub q_audio_ml: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scenario: String,
    pub seed: u64,
    pub kind: ScenarioKind,
    pub status: RunStatus,
    pub plan: TaskPlan,
    pub datastore: Datastore,
    pub transitions: Vec<TransitionRecord>,
    pub final_state: StateId,
    pub process: Vec<ProcessSample>,
    pub snapshots: Vec<Snapshot>,
    pub phase_log: Vec<PhaseChange>,
    pub message_counts: BTreeMap<String, u64>,
    pub audio: AudioTally,
    pub q_stat: f64,
    pub displacement_mm: f64,
    pub truth: PlantTruth,
    pub duration_s: f64,
}

impl RunOutcome {
    pub fn accepted(&self) -> bool {
        self.status == RunStatus::Accepted
    }
}

#[derive(Debug)]
struct Job {
    action: String,
    subtask: SubtaskId,
    q_target: StateId,
    done_at: f64,
}

/// Scripted manipulation agent: each command takes a fixed time and then
/// reports completion.
#[derive(Debug)]
struct ActionAgent {
    queue: VecDeque<Job>,
    stirring: bool,
    transfer_pending: bool,
}

impl ActionAgent {
    fn new() -> Self {
        Self {
            queue: VecDeque::new(),
            stirring: false,
            transfer_pending: false,
        }
    }

    fn accept(&mut self, msg: AgentMessage, now: f64, config: &ScenarioConfig) {
        let Some(action) = msg.payload.as_ref().and_then(|p| p.action()).map(str::to_string) else {
            return;
        };
        if action == "stop_stir" {
            self.stirring = false;
            return;
        }
        let start = self.queue.back().map_or(now, |j| j.done_at.max(now));
        self.queue.push_back(Job {
            done_at: start + config.supervisor.actions.of(&action),
            action,
            subtask: msg.subtask,
            q_target: msg.q_target,
        });
    }

    /// Completed jobs, with their effects applied to `cmd`.
    fn step(&mut self, now: f64, cmd: &mut ActuatorCommand) -> Vec<Job> {
        let mut done = Vec::new();
        while self.queue.front().is_some_and(|j| j.done_at <= now + 1e-9) {
            let job = self.queue.pop_front().expect("front exists");
            match job.action.as_str() {
                "transfer" => self.transfer_pending = true,
                "stir" => self.stirring = true,
                _ => {}
            }
            done.push(job);
        }
        cmd.transfer = std::mem::take(&mut self.transfer_pending);
        cmd.stir = self.stirring;
        done
    }
}

/// Fuses incoming estimates into the datastore.
#[derive(Debug)]
struct Recorder {
    store: Datastore,
    fusion: crate::fusion::FusionConfig,
    operation: BTreeSet<StateId>,
    anomalies: Vec<ExecutionAnomaly>,
    q_stat: f64,
    stat_confidence: f64,
    q_stat_at_last: f64,
    last_volume_t: f64,
}

impl Recorder {
    fn record(&mut self, rec: FusedRecord) -> Result<(), SimError> {
        self.store.record(rec)?;
        Ok(())
    }

    fn handle(&mut self, msg: AgentMessage) -> Result<(), SimError> {
        let state = msg.q_target.as_str().to_string();
        let subtask = msg.subtask.as_str().to_string();
        let physical = self.operation.contains(&msg.q_target);
        match msg.payload {
            Some(Payload::Estimate {
                channel,
                value,
                unit,
                confidence,
                timestamp,
            }) => match (channel.as_str(), unit.as_str()) {
                ("stat", _) => {
                    self.q_stat = value;
                    self.stat_confidence = confidence;
                }
                ("audio", _) => {
                    let window = (self.last_volume_t, timestamp);
                    let channels = [
                        ObservationChannel {
                            id: ChannelId::Audio,
                            value,
                            confidence_raw: confidence,
                            timestamp,
                            window,
                        },
                        ObservationChannel {
                            id: ChannelId::Stat,
                            value: self.q_stat - self.q_stat_at_last,
                            confidence_raw: self.stat_confidence,
                            timestamp,
                            window,
                        },
                    ];
                    let rec = fuse_record(
                        &channels,
                        "volume",
                        timestamp,
                        &state,
                        &subtask,
                        physical,
                        &self.anomalies,
                        &self.fusion,
                    );
                    self.q_stat_at_last = self.q_stat;
                    self.last_volume_t = timestamp;
                    self.record(rec)?;
                }
                ("sensor", "g") => {
                    let window = (timestamp - 1.0, timestamp);
                    let channels = [
                        ObservationChannel {
                            id: ChannelId::Sensor,
                            value,
                            confidence_raw: confidence,
                            timestamp,
                            window,
                        },
                        ObservationChannel {
                            id: ChannelId::Stat,
                            value: self.q_stat,
                            confidence_raw: self.stat_confidence,
                            timestamp,
                            window,
                        },
                    ];
                    let rec = fuse_record(
                        &channels,
                        "mass",
                        timestamp,
                        &state,
                        &subtask,
                        physical,
                        &self.anomalies,
                        &self.fusion,
                    );
                    self.record(rec)?;
                }
                (ch, unit) => {
                    let quantity = match unit {
                        "pH" => "pH",
                        "degC" => "temperature",
                        "indicator" => "indicator",
                        "s" => "dissolution_time",
                        other => other,
                    };
                    let id = if ch == "visual" {
                        ChannelId::Visual
                    } else {
                        ChannelId::Sensor
                    };
                    self.record(FusedRecord::single(
                        timestamp, quantity, id, value, confidence, &state, &subtask,
                    ))?;
                }
            },
            Some(Payload::Anomaly { code, timestamp, .. }) => {
                self.anomalies.push(ExecutionAnomaly {
                    code: code.clone(),
                    timestamp,
                });
                self.record(FusedRecord::anomaly(timestamp, &code, &state, &subtask))?;
            }
            _ => {}
        }
        Ok(())
    }
}

fn message_kind(p: &Option<Payload>) -> &'static str {
    match p {
        None => "bare",
        Some(Payload::Completion { .. }) => "completion",
        Some(Payload::Anomaly { .. }) => "anomaly",
        Some(Payload::Estimate { .. }) => "estimate",
        Some(Payload::Command { .. }) => "command",
    }
}

struct Loop {
    bus: crate::protocol::MessageBus,
    counts: BTreeMap<String, u64>,
}

impl Loop {
    fn send(
        &mut self,
        sender: AgentId,
        receiver: AgentId,
        subtask: SubtaskId,
        q_target: StateId,
        payload: Payload,
        now: f64,
    ) -> Result<(), SimError> {
        let key = format!("{sender}->{receiver}:{}", message_kind(&Some(payload.clone())));
        *self.counts.entry(key).or_default() += 1;
        self.bus.send(AgentMessage {
            sender,
            receiver,
            subtask,
            q_target,
            payload: Some(payload),
            sent_at: now,
        })?;
        Ok(())
    }
}

/// Runs one compiled scenario to acceptance, escalation or time-out.
pub fn run_compiled(config: &ScenarioConfig, compiled: &Compiled, seed: u64) -> Result<RunOutcome, SimError> {
    let kind = compiled.kind;
    let plan = Arc::new(compiled.plan.clone());
    let parsed = &plan.parsed_instruction;
    let roles = Roles::for_kind(kind);
    let (vessel, titrant_conc) = config.vessel_for(kind, parsed)?;
    let mut plant = Plant::new(config.plant.clone(), vessel, titrant_conc, seed)?;
    for f in config.active_faults() {
        plant.inject_fault(f)?;
    }
    let dt = config.plant.dt;

    let free_color = config.chemistry.indicator.free_color.clone();
    let mut vision = VisionSupervisor::new(
        Arc::clone(&plan),
        VisionConfig {
            kind,
            stability: config.stability_for(kind),
            endpoint: config.endpoint_for(parsed),
            free_color,
            sensor_timeout_limit_s: config.supervisor.sensor_timeout_limit_s,
            sensor_confidence: config.supervisor.sensor_confidence,
        },
        roles.clone(),
    );
    let mut audio = AudioSupervisor::new(config.supervisor.audio.clone(), planner::anticipating_states(kind));
    let mut controller = Controller::new(config.controller_for(kind, parsed));
    let mut action = ActionAgent::new();
    let mut recorder = Recorder {
        store: Datastore::new(),
        fusion: config.fusion.clone(),
        operation: planner::operation_states(kind),
        anomalies: Vec::new(),
        q_stat: 0.0,
        stat_confidence: 0.0,
        q_stat_at_last: 0.0,
        last_volume_t: 0.0,
    };
    let mut lp = Loop {
        bus: crate::protocol::MessageBus::new(Arc::clone(&plan)),
        counts: BTreeMap::new(),
    };

    // The planner opens the run by asking for the first grasp.
    let (first_state, first_sub) = if kind.is_titration() {
        (names::Q1, roles.manipulation.clone())
    } else {
        (names::W1, roles.manipulation.clone())
    };
    lp.send(
        AgentId::Planner,
        AgentId::ActionAgent,
        first_sub,
        StateId::new(first_state),
        Payload::command(names::GRASP, names::GRASP),
        0.0,
    )?;

    let mut cmd = ActuatorCommand::default();
    let mut process = Vec::new();
    let mut snapshots = Vec::new();
    let mut status = None;
    let ticks = (config.max_time_s / dt).ceil() as u64;
    let mut now = 0.0;

    for tick in 1..=ticks {
        now = tick as f64 * dt;
        // Manipulation agent.
        for msg in lp.bus.poll(AgentId::ActionAgent) {
            action.accept(msg, now, config);
        }
        let done = action.step(now, &mut cmd);
        let frame = plant.tick(dt, &cmd)?;
        let q_t = vision.current().clone();
        for job in done {
            lp.send(
                AgentId::ActionAgent,
                AgentId::VisionSupervisor,
                job.subtask.clone(),
                job.q_target,
                Payload::Completion {
                    subtask: job.subtask,
                    symbol: SymbolId::new(job.action),
                    success: true,
                    timestamp: now,
                },
                now,
            )?;
        }
        process.push(ProcessSample {
            t: frame.timestamp,
            ph: (kind != ScenarioKind::Weighing && frame.ph_status == SensorStatus::Ok).then_some(frame.ph),
            balance: frame.balance,
            temperature: frame.temperature,
            color: frame.color.clone(),
            state: q_t.as_str().to_string(),
        });

        // Audio supervisor.
        let heard = audio.step(now, &frame.events, &q_t, controller.is_dispensing());
        for (event, q, c) in heard.expected {
            lp.send(
                AgentId::AudioSupervisor,
                AgentId::Recorder,
                roles.audio.clone(),
                q_t.clone(),
                Payload::Estimate {
                    channel: "audio".into(),
                    value: q,
                    unit: "mL".into(),
                    confidence: c,
                    timestamp: event.timestamp,
                },
                now,
            )?;
            lp.send(
                AgentId::AudioSupervisor,
                AgentId::VisionSupervisor,
                roles.audio.clone(),
                StateId::new(names::Q5),
                Payload::Completion {
                    subtask: roles.audio.clone(),
                    symbol: SymbolId::new(names::AUDIO_DETECT),
                    success: true,
                    timestamp: event.timestamp,
                },
                now,
            )?;
        }
        for event in heard.anomalous {
            lp.send(
                AgentId::AudioSupervisor,
                AgentId::VisionSupervisor,
                roles.audio.clone(),
                q_t.clone(),
                Payload::Anomaly {
                    code: crate::supervisors::UNEXPECTED_EVENT.into(),
                    detail: format!("droplet heard in {q_t} at {:.1} s", event.timestamp),
                    timestamp: now,
                },
                now,
            )?;
        }
        if let Some(code) = heard.timeout {
            lp.send(
                AgentId::AudioSupervisor,
                AgentId::VisionSupervisor,
                roles.audio.clone(),
                q_t.clone(),
                Payload::Anomaly {
                    code: code.into(),
                    detail: format!("no droplet heard for {} s while dispensing", config.supervisor.audio.timeout_s),
                    timestamp: now,
                },
                now,
            )?;
        }

        // Recorder.
        for msg in lp.bus.poll(AgentId::Recorder) {
            recorder.handle(msg)?;
        }

        // Vision supervisor.
        let view = ControllerView {
            active: controller.is_active(),
            phase: controller.phase(),
            finished: controller.is_finished(),
            escalated: controller.is_escalated(),
        };
        let inbox = lp.bus.poll(AgentId::VisionSupervisor);
        for decision in vision.supervise_step(&frame, inbox, view) {
            match decision {
                Decision::Fire { symbol, to, .. } => snapshots.push(Snapshot {
                    t: now,
                    state: to.as_str().to_string(),
                    symbol: symbol.as_str().to_string(),
                    ph: frame.ph,
                    balance: frame.balance,
                    color: frame.color.clone(),
                    drops_heard: audio.expected_count(),
                }),
                Decision::Send {
                    receiver,
                    subtask,
                    q_target,
                    payload,
                } => lp.send(AgentId::VisionSupervisor, receiver, subtask, q_target, payload, now)?,
                Decision::Escalate { code, detail } => {
                    let q = vision.current().clone();
                    lp.send(
                        AgentId::VisionSupervisor,
                        AgentId::Planner,
                        roles.monitor.clone(),
                        q,
                        Payload::Anomaly {
                            code: code.clone(),
                            detail: detail.clone(),
                            timestamp: now,
                        },
                        now,
                    )?;
                    status.get_or_insert(RunStatus::Escalated { code, detail });
                }
                Decision::Accept => {}
            }
        }
        // Vision's own anomaly and record pushes land this tick.
        for msg in lp.bus.poll(AgentId::Recorder) {
            recorder.handle(msg)?;
        }

        // Statistics logger.
        let mut obs = Observation {
            measured: vision.measured(),
            stable: vision.stable(),
            dt,
            ..Default::default()
        };
        for msg in lp.bus.poll(AgentId::StatLogger) {
            match msg.payload.as_ref().and_then(|p| p.action()) {
                Some("activate") => controller.activate(),
                Some("hold") => {
                    obs.hold = true;
                    obs.droplet_confirmed = true;
                }
                Some("pause") => obs.hold = true,
                Some("resume") => obs.resume = true,
                Some("stop") => obs.stop = true,
                Some("reset") => {
                    let reason = match &msg.payload {
                        Some(Payload::Command { params, .. }) => params
                            .get("reason")
                            .and_then(|v| v.as_str())
                            .unwrap_or("reset")
                            .to_string(),
                        _ => "reset".into(),
                    };
                    obs.anomaly = Some(reason);
                }
                _ => {}
            }
        }
        let (next_cmd, records) = controller.step(&obs);
        cmd = next_cmd;
        let q_now = vision.current().clone();
        for r in records {
            match r {
                ControllerRecord::Estimate { q_stat, confidence } => lp.send(
                    AgentId::StatLogger,
                    AgentId::Recorder,
                    roles.logger.clone(),
                    q_now.clone(),
                    Payload::Estimate {
                        channel: "stat".into(),
                        value: q_stat,
                        unit: if kind == ScenarioKind::Weighing { "g" } else { "mL" }.into(),
                        confidence,
                        timestamp: now,
                    },
                    now,
                )?,
                ControllerRecord::TargetReached { .. } => {}
                ControllerRecord::Escalation { reason, retries } => lp.send(
                    AgentId::StatLogger,
                    AgentId::VisionSupervisor,
                    roles.logger.clone(),
                    q_now.clone(),
                    Payload::Anomaly {
                        code: "escalation".into(),
                        detail: format!("{reason} persisted after {retries} resets"),
                        timestamp: now,
                    },
                    now,
                )?,
            }
        }
        for msg in lp.bus.poll(AgentId::Recorder) {
            recorder.handle(msg)?;
        }

        // Summarizer and planner.
        let report_requested = lp
            .bus
            .poll(AgentId::Summarizer)
            .iter()
            .any(|m| m.payload.as_ref().and_then(|p| p.action()) == Some("report"));
        lp.bus.poll(AgentId::Planner);
        if status.is_some() {
            break;
        }
        if report_requested && vision.cursor().is_accepting() {
            status = Some(RunStatus::Accepted);
            break;
        }
    }

    let status = match status {
        Some(s) => s,
        None => {
            let code = "run_timeout".to_string();
            let detail = format!("no accepting state within {} s", config.max_time_s);
            let q = vision.current().as_str().to_string();
            recorder.record(FusedRecord::anomaly(now, &code, &q, roles.monitor.as_str()))?;
            RunStatus::Escalated { code, detail }
        }
    };

    let truth = PlantTruth {
        dispensed_ml: plant.dispensed_ml(),
        droplets: plant.droplet_count(),
        total_closure_mm: plant.total_closure(),
        final_ph: plant.equilibrium_ph(),
        beaker_solid_g: plant.beaker_solid(),
    };
    Ok(RunOutcome {
        scenario: config.name.clone(),
        seed,
        kind,
        status,
        plan: compiled.plan.clone(),
        datastore: recorder.store,
        transitions: vision.cursor().history().to_vec(),
        final_state: vision.current().clone(),
        process,
        snapshots,
        phase_log: controller.phase_log().to_vec(),
        message_counts: lp.counts,
        audio: AudioTally {
            expected: audio.expected_count(),
            anomalous: audio.anomalous_count(),
            q_audio_ml: audio.total(),
        },
        q_stat: controller.accumulated().0,
        displacement_mm: controller.displacement_total(),
        truth,
        duration_s: now,
    })
}

/// The controller phase names, for reports.
pub fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Motion => "motion",
        Phase::Waiting => "waiting",
        Phase::Reset => "reset",
    }
}
