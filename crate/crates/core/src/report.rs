//! Summarizer: reconstructs the experiment from the datastore and the
//! transition history and writes the eleven-module report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::analysis::{self, AnalysisError, AnalysisResult, PkaContext, TitrationCurve};
use crate::chem::KW_25C;
use crate::fsm::replay;
use crate::fusion::{smooth_single_source, Datastore, MAD_FACTOR, MAD_WINDOW};
use crate::protocol::canonical::{self, round_significant, CodecError};
use crate::scenario::ScenarioConfig;
use crate::sim::{phase_name, RunOutcome, RunStatus};
use crate::supervisors::ScenarioKind;

/// Report module keys, in presentation order.
pub const MODULES: [&str; 11] = [
    "metadata",
    "parameters",
    "procedure",
    "fsm_evolution",
    "process_data",
    "quantity_records",
    "event_logs",
    "anomaly_records",
    "results",
    "visual_documentation",
    "reproducibility_guide",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("incomplete run: no data recorded for required `{quantity}` ({frequency})")]
    IncompleteRun { quantity: String, frequency: String },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// (cumulative volume mL, pH) pairs rebuilt from the datastore. Volume
/// increments with no fused value count at their audio estimate.
pub fn titration_points(store: &Datastore) -> Vec<(f64, f64)> {
    let mut volume = 0.0;
    let mut out = Vec::new();
    for r in store.records() {
        match r.quantity.as_str() {
            "volume" => {
                volume += r
                    .value
                    .or_else(|| r.raw.get("audio").map(|c| c.value))
                    .unwrap_or(0.0);
            }
            "pH" => {
                if let Some(v) = r.value {
                    out.push((volume, v));
                }
            }
            _ => {}
        }
    }
    out
}

/// Cumulative volume when each record was written.
fn volume_at_each(store: &Datastore) -> Vec<f64> {
    let mut volume = 0.0;
    store
        .records()
        .iter()
        .map(|r| {
            if r.quantity == "volume" {
                volume += r
                    .value
                    .or_else(|| r.raw.get("audio").map(|c| c.value))
                    .unwrap_or(0.0);
            }
            volume
        })
        .collect()
}

pub fn total_volume(store: &Datastore) -> f64 {
    volume_at_each(store).last().copied().unwrap_or(0.0)
}

/// Cumulative volume at the first record showing the free indicator color.
pub fn color_transition_volume(store: &Datastore) -> Option<f64> {
    let vols = volume_at_each(store);
    store
        .records()
        .iter()
        .zip(vols)
        .find(|(r, _)| r.quantity == "indicator" && r.value == Some(1.0))
        .map(|(_, v)| v)
}

fn last_value(store: &Datastore, quantity: &str) -> Option<f64> {
    store.by_quantity(quantity).filter_map(|r| r.value).last()
}

fn param(outcome: &RunOutcome, key: &str) -> Option<f64> {
    outcome
        .plan
        .parsed_instruction
        .initial_conditions
        .parameters
        .get(key)
        .map(|q| q.value)
}

/// Checks every data requirement of the instruction against the record.
pub fn check_requirements(outcome: &RunOutcome) -> Result<(), ReportError> {
    for req in &outcome.plan.parsed_instruction.data_requirements {
        let present = match req.quantity.as_str() {
            "indicator" => outcome.datastore.by_quantity("indicator").next().is_some(),
            q => outcome.datastore.by_quantity(q).any(|r| r.value.is_some()),
        };
        if !present {
            return Err(ReportError::IncompleteRun {
                quantity: req.quantity.clone(),
                frequency: req.frequency.clone(),
            });
        }
    }
    Ok(())
}

/// Chart series for a titration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Charts {
    pub curve: Vec<(f64, f64)>,
    pub d1: Vec<(f64, f64)>,
    pub d2: Vec<(f64, f64)>,
    pub zoom: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub json: Value,
    pub markdown: String,
    pub analysis: Option<AnalysisResult>,
    pub charts: Option<Charts>,
    pub process_csv: String,
}

impl Report {
    pub fn to_json(&self) -> Result<String, CodecError> {
        canonical::encode_pretty(&self.json)
    }

    /// Chart files as (file name, contents).
    pub fn chart_files(&self) -> Vec<(&'static str, String)> {
        let Some(c) = &self.charts else {
            return Vec::new();
        };
        vec![
            ("curve.csv", csv("V_mL,pH", &c.curve)),
            ("d1.csv", csv("V_mL,dpH_dV", &c.d1)),
            ("d2.csv", csv("V_mL,d2pH_dV2", &c.d2)),
            ("zoom.csv", csv("V_mL,pH", &c.zoom)),
        ]
    }
}

fn num(x: f64) -> String {
    let r = round_significant(x, 10);
    if r == 0.0 {
        "0".into()
    } else {
        format!("{r}")
    }
}

pub fn csv(header: &str, rows: &[(f64, f64)]) -> String {
    let mut s = String::with_capacity(rows.len() * 24);
    s.push_str(header);
    s.push('\n');
    for (a, b) in rows {
        let _ = writeln!(s, "{},{}", num(*a), num(*b));
    }
    s
}

fn process_csv(outcome: &RunOutcome) -> (String, usize) {
    let weighing = outcome.kind == ScenarioKind::Weighing;
    let series: Vec<(f64, f64)> = outcome
        .process
        .iter()
        .filter_map(|p| {
            if weighing {
                Some((p.t, p.balance))
            } else {
                p.ph.map(|v| (p.t, v))
            }
        })
        .collect();
    let smoothed = smooth_single_source(&series, MAD_WINDOW, MAD_FACTOR);
    let low = smoothed.iter().filter(|p| p.low_confidence).count();
    let mut s = String::from(if weighing {
        "t_s,balance_g,smoothed_g,low_confidence\n"
    } else {
        "t_s,pH,smoothed_pH,low_confidence\n"
    });
    for p in &smoothed {
        let _ = writeln!(s, "{},{},{},{}", num(p.t), num(p.raw), num(p.value), u8::from(p.low_confidence));
    }
    (s, low)
}

fn analyze_titration(outcome: &RunOutcome, config: &ScenarioConfig) -> Result<(AnalysisResult, Charts), ReportError> {
    let points = titration_points(&outcome.datastore);
    let mut curve = TitrationCurve::new(points);
    curve.meta.analyte = outcome.plan.parsed_instruction.initial_conditions.chemical_system.clone();
    curve.meta.titrant = outcome
        .plan
        .parsed_instruction
        .entities
        .reagents
        .get(1)
        .cloned()
        .unwrap_or_default();
    let ctx = PkaContext {
        titrant_conc: param(outcome, "titrant_concentration").unwrap_or(0.1),
        initial_volume_ml: param(outcome, "volume").unwrap_or(25.0),
        strong: config.chemistry.pka.is_empty(),
        kw: KW_25C,
    };
    let result = analysis::analyze(&curve, &config.analysis, Some(&ctx))?;
    let half = config.analysis.stddev_half_width;
    let zoom = match result.equivalence_points.first() {
        Some(eq) => result
            .resampled
            .points
            .iter()
            .copied()
            .filter(|(v, _)| (v - eq.volume).abs() <= half + 1e-9)
            .collect(),
        None => Vec::new(),
    };
    let charts = Charts {
        curve: result.resampled.points.clone(),
        d1: result.d1.clone(),
        d2: result.d2.clone(),
        zoom,
    };
    Ok((result, charts))
}

fn anomaly_module(outcome: &RunOutcome) -> Value {
    let accepted = outcome.accepted();
    let mut entries = Vec::new();
    for r in outcome.datastore.records() {
        for code in &r.anomalies {
            let reset = outcome
                .phase_log
                .iter()
                .find(|p| p.time >= r.timestamp - 1e-6 && p.time <= r.timestamp + 0.5 && phase_name(p.to) == "reset");
            let paused = outcome
                .phase_log
                .iter()
                .any(|p| p.time >= r.timestamp - 1e-6 && p.time <= r.timestamp + 0.5 && phase_name(p.to) == "waiting");
            let response = match (reset, code.as_str()) {
                (Some(p), _) if p.reason == "escalated" => "escalated to the planner".to_string(),
                (Some(_), _) => "controller reset and retraction".to_string(),
                (None, "sensor_timeout") if paused => "dispensing paused until readings resumed".to_string(),
                (None, "escalation" | "run_timeout") => "run stopped".to_string(),
                (None, "data_quality") => "record kept without a fused value".to_string(),
                (None, _) => "logged".to_string(),
            };
            entries.push(json!({
                "timestamp": r.timestamp,
                "code": code,
                "quantity": r.quantity,
                "state": r.state,
                "subtask": r.subtask,
                "response": response,
                "resolution": if accepted { "resolved" } else { "unresolved" },
            }));
        }
    }
    if let RunStatus::Escalated { code, detail } = &outcome.status {
        if !entries.iter().any(|e| e["code"] == json!(code)) {
            entries.push(json!({
                "timestamp": outcome.duration_s,
                "code": code,
                "quantity": "anomaly",
                "state": outcome.final_state.as_str(),
                "subtask": "",
                "response": detail,
                "resolution": "unresolved",
            }));
        }
    }
    if entries.is_empty() {
        json!("none")
    } else {
        Value::Array(entries)
    }
}

fn results_module(outcome: &RunOutcome, config: &ScenarioConfig, analysis: Option<&AnalysisResult>) -> Value {
    let store = &outcome.datastore;
    match outcome.kind {
        ScenarioKind::PhTitration => {
            let a = analysis.expect("titrations are analysed");
            let titrant = param(outcome, "titrant_concentration").unwrap_or(0.1);
            let conc = param(outcome, "concentration").unwrap_or(0.1);
            let vol = param(outcome, "volume").unwrap_or(25.0);
            let protons = config.chemistry.pka.len().max(1);
            let theory: Vec<f64> = (1..=protons).map(|k| k as f64 * conc * vol / titrant).collect();
            let eqs: Vec<Value> = a
                .equivalence_points
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    let reference = theory.get(i).copied();
                    json!({
                        "volume_ml": e.volume,
                        "ph": e.ph,
                        "d1_peak_volume_ml": e.peak_volume,
                        "stoichiometric_volume_ml": reference,
                        "deviation_pct": reference.map(|r| 100.0 * (e.volume - r) / r),
                    })
                })
                .collect();
            let pkas: Vec<Value> = a
                .pka
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let reference = config.chemistry.pka.get(i).copied();
                    json!({
                        "step": p.step,
                        "v_half_ml": p.v_half,
                        "ph_half": p.ph_half,
                        "pka": p.pka,
                        "applicable": p.applicable,
                        "reference_pka": reference,
                        "deviation_pct": match (p.pka, reference) {
                            (Some(x), Some(r)) => Some(100.0 * (x - r) / r),
                            _ => None,
                        },
                    })
                })
                .collect();
            let first_ph = store.by_quantity("pH").find_map(|r| r.value);
            json!({
                "equivalence_points": eqs,
                "pka": pkas,
                "initial_ph_stated": param(outcome, "pH"),
                "initial_ph_measured": first_ph,
                "final_ph": last_value(store, "pH"),
                "total_volume_ml": total_volume(store),
                "drops": store.by_quantity("volume").count(),
            })
        }
        ScenarioKind::ColorTitration => {
            let titrant = param(outcome, "titrant_concentration").unwrap_or(0.0);
            let conc = param(outcome, "concentration").unwrap_or(0.0);
            let vol = param(outcome, "volume").unwrap_or(0.0);
            let v = color_transition_volume(store);
            let computed = v.map(|v| titrant * v / vol);
            json!({
                "transition_volume_ml": v,
                "stoichiometric_volume_ml": conc * vol / titrant,
                "titrant_concentration_m": titrant,
                "analyte_volume_ml": vol,
                "computed_concentration_m": computed,
                "nominal_concentration_m": conc,
                "relative_error_pct": computed.map(|c| 100.0 * (c - conc) / conc),
                "total_volume_ml": total_volume(store),
            })
        }
        ScenarioKind::Weighing => {
            let target = outcome
                .plan
                .parsed_instruction
                .target_conditions
                .parameters
                .get("mass")
                .map_or(0.0, |q| q.value);
            let measured = last_value(store, "mass");
            let error = measured.map(|m| m - target);
            json!({
                "target_g": target,
                "measured_g": measured,
                "error_g": error,
                "tolerance_g": config.chemistry.mass_tolerance_g,
                "success": outcome.accepted() && error.is_some_and(|e| e.abs() <= config.chemistry.mass_tolerance_g),
                "dissolution_time_s": last_value(store, "dissolution_time"),
            })
        }
    }
}

/// Builds the report. Fails with `IncompleteRun` when a completed run
/// lacks a required quantity.
pub fn generate_report(outcome: &RunOutcome, config: &ScenarioConfig) -> Result<Report, ReportError> {
    if outcome.accepted() {
        check_requirements(outcome)?;
    }
    let plan = &outcome.plan;
    let parsed = &plan.parsed_instruction;
    let (analysis, charts) = if outcome.kind.is_titration() && titration_points(&outcome.datastore).len() >= 4 {
        let (a, c) = analyze_titration(outcome, config)?;
        (Some(a), Some(c))
    } else {
        (None, None)
    };
    let (process_csv, low_confidence) = process_csv(outcome);

    let transitions: Vec<Value> = outcome
        .transitions
        .iter()
        .map(|t| {
            json!({
                "from": t.from, "symbol": t.symbol, "to": t.to,
                "timestamp": t.timestamp, "emitter": t.emitter,
            })
        })
        .collect();
    let replay_ok = replay(&plan.state_machine, outcome.transitions.iter().map(|t| &t.symbol))
        .map(|s| s == outcome.final_state)
        .unwrap_or(false);

    let mut quantities = serde_json::Map::new();
    for r in outcome.datastore.records() {
        let e = quantities.entry(r.quantity.clone()).or_insert(json!(0));
        *e = json!(e.as_u64().unwrap_or(0) + 1);
    }

    let results = if outcome.kind == ScenarioKind::PhTitration && analysis.is_none() {
        json!({ "note": "too few readings for analysis", "total_volume_ml": total_volume(&outcome.datastore) })
    } else {
        results_module(outcome, config, analysis.as_ref())
    };

    let phases: Vec<Value> = outcome
        .phase_log
        .iter()
        .map(|p| json!({"time": p.time, "from": phase_name(p.from), "to": phase_name(p.to), "reason": p.reason}))
        .collect();

    let mut files = vec!["plan.json", "datastore.jsonl", "transitions.json", "report.json", "report.md", "process.csv"];
    if charts.is_some() {
        files.extend(["curve.csv", "d1.csv", "d2.csv", "zoom.csv"]);
    }

    let json = json!({
        "metadata": {
            "scenario": outcome.scenario,
            "kind": outcome.kind,
            "seed": outcome.seed,
            "status": outcome.status,
            "instruction": config.instruction.trim(),
            "chemical_system": parsed.initial_conditions.chemical_system,
            "simulated_duration_s": outcome.duration_s,
            "generator": format!("labloop {}", env!("CARGO_PKG_VERSION")),
        },
        "parameters": {
            "initial_conditions": parsed.initial_conditions,
            "target_conditions": parsed.target_conditions,
            "chemistry": config.chemistry,
            "plant": config.plant,
            "controller": config.controller,
            "fusion": config.fusion,
            "analysis": config.analysis,
            "supervisor": config.supervisor,
        },
        "procedure": {
            "operation_intent": parsed.operation_intent,
            "operation_primitives": parsed.operation_primitives,
            "subtasks": plan.task_decomposition.subtasks.iter().map(|s| json!({
                "id": s.id, "receiver": s.receiver, "description": s.description,
                "input_symbol": s.input_symbol, "resulting_state": s.resulting_state,
            })).collect::<Vec<_>>(),
            "dependencies": plan.task_decomposition.dependencies,
        },
        "fsm_evolution": {
            "initial_state": plan.state_machine.initial,
            "final_state": outcome.final_state,
            "accepted": outcome.accepted(),
            "replay_consistent": replay_ok,
            "transitions": transitions,
        },
        "process_data": {
            "file": "process.csv",
            "samples": outcome.process.len(),
            "low_confidence_samples": low_confidence,
            "mad_window": MAD_WINDOW,
            "mad_factor": MAD_FACTOR,
        },
        "quantity_records": {
            "file": "datastore.jsonl",
            "records": outcome.datastore.len(),
            "by_quantity": quantities,
            "q_stat": outcome.q_stat,
            "q_audio": outcome.audio.q_audio_ml,
        },
        "event_logs": {
            "controller_phases": phases,
            "messages": outcome.message_counts,
            "audio": outcome.audio,
        },
        "anomaly_records": anomaly_module(outcome),
        "results": results,
        "visual_documentation": {
            "note": "simulator state snapshots taken at each transition",
            "snapshots": outcome.snapshots,
        },
        "reproducibility_guide": {
            "seed": outcome.seed,
            "command": format!("labloop --scenario {}.toml --seed {}", outcome.scenario, outcome.seed),
            "files": files,
            "rng": "ChaCha8 seeded from the run seed; one stream for all plant noise",
        },
    });
    let json = canonical::to_canonical_value(&json)?;
    let markdown = render_markdown(&json);
    Ok(Report {
        json,
        markdown,
        analysis,
        charts,
        process_csv,
    })
}

fn title(key: &str) -> String {
    let mut s = key.replace('_', " ");
    if let Some(c) = s.get_mut(0..1) {
        c.make_ascii_uppercase();
    }
    s
}

fn md_value(out: &mut String, v: &Value, depth: usize) {
    let pad = "  ".repeat(depth);
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                match x {
                    Value::Object(_) | Value::Array(_) => {
                        let _ = writeln!(out, "{pad}- **{k}**:");
                        md_value(out, x, depth + 1);
                    }
                    _ => {
                        let _ = writeln!(out, "{pad}- **{k}**: {}", scalar(x));
                    }
                }
            }
        }
        Value::Array(items) => {
            if items.is_empty() {
                let _ = writeln!(out, "{pad}- (empty)");
            }
            for (i, x) in items.iter().enumerate() {
                match x {
                    Value::Object(_) | Value::Array(_) => {
                        let _ = writeln!(out, "{pad}- [{i}]");
                        md_value(out, x, depth + 1);
                    }
                    _ => {
                        let _ = writeln!(out, "{pad}- {}", scalar(x));
                    }
                }
            }
        }
        _ => {
            let _ = writeln!(out, "{pad}{}", scalar(v));
        }
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "n/a".into(),
        other => other.to_string(),
    }
}

/// Markdown rendering of the report modules.
pub fn render_markdown(report: &Value) -> String {
    let mut out = String::new();
    let name = report["metadata"]["scenario"].as_str().unwrap_or("run");
    let _ = writeln!(out, "# Experiment report: {name}\n");
    for key in MODULES {
        let _ = writeln!(out, "## {}\n", title(key));
        let v = &report[key];
        if key == "visual_documentation" {
            // The snapshot list is long; a table reads better.
            let _ = writeln!(out, "| t (s) | state | symbol | pH | balance (g) | color | drops heard |");
            let _ = writeln!(out, "|---|---|---|---|---|---|---|");
            for s in v["snapshots"].as_array().into_iter().flatten() {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} | {} |",
                    scalar(&s["t"]),
                    scalar(&s["state"]),
                    scalar(&s["symbol"]),
                    scalar(&s["ph"]),
                    scalar(&s["balance"]),
                    scalar(&s["color"]),
                    scalar(&s["drops_heard"]),
                );
            }
        } else {
            md_value(&mut out, v, 0);
        }
        out.push('\n');
    }
    out
}
