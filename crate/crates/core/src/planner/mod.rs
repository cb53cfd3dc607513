//! Rule-based instruction compiler: parse, check the bench, build the
//! machine, decompose into subtasks, instantiate the modules.

mod grammar;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grammar::{Captures, GrammarProfile, PatternSpec};

use crate::fsm::{FsmError, StateId, StateMachine, SymbolId};
use crate::protocol::{
    AgentId, DataRequirement, Entities, EnvironmentCheck, ExpectedTransition, InitialConditions,
    ModuleInstantiation, ParsedInstruction, PlanDiagnostic, Quantity, RecorderConfig,
    StatLoggerConfig, Subtask, SubtaskId, TargetConditions, TaskDecomposition, TaskPlan,
};
use crate::supervisors::ScenarioKind;

/// State and symbol names of the canonical machines.
pub mod names {
    pub const Q0: &str = "q0";
    pub const Q1: &str = "q1_grasped";
    pub const Q2: &str = "q2_drawn";
    pub const Q3: &str = "q3_ready";
    pub const Q4: &str = "q4_titrating";
    pub const Q5: &str = "q5_waiting_stable";
    pub const Q6: &str = "q6_complete";
    pub const QA: &str = "q_accept";

    pub const W0: &str = "q0_initial";
    pub const W1: &str = "q1_grasped";
    pub const W2: &str = "q2_weighing";
    pub const W3: &str = "q3_weighed";
    pub const W4: &str = "q4_transferred";
    pub const W5: &str = "q5_dissolving";
    pub const WA: &str = "q_accept_dissolved";

    pub const GRASP: &str = "grasp";
    pub const DRAW: &str = "draw";
    pub const RECORD: &str = "record";
    pub const TITRATE: &str = "titrate";
    pub const AUDIO_DETECT: &str = "audio_detect";
    pub const STABLE: &str = "stable";
    pub const ENDPOINT: &str = "endpoint";
    pub const VERIFY: &str = "verify";
    pub const POSITION: &str = "position";
    pub const WEIGHED: &str = "weighed";
    pub const TRANSFER: &str = "transfer";
    pub const STIR: &str = "stir";
    pub const DISSOLVED: &str = "dissolved";
}

use names::*;

/// The fixed primitive vocabulary of the manipulation agent.
pub const PRIMITIVES: [&str; 6] = ["grasp", "draw", "position", "dispense", "stir", "weigh"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlannerError {
    #[error("grammar error: {0}")]
    Grammar(String),
    #[error("instruction is missing a value for `{0}`")]
    MissingParameter(String),
    #[error("unrecognized instruction: {0}")]
    UnrecognizedInstruction(String),
    #[error("instruction matches several patterns: {}", .0.join(", "))]
    AmbiguousInstruction(Vec<String>),
    #[error("unsupported scenario: {0}")]
    UnsupportedScenario(String),
    #[error("invalid plan: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidPlan(Vec<PlanDiagnostic>),
    #[error("state machine: {0}")]
    Machine(#[from] FsmError),
    #[error("duplicate inventory item `{0}`")]
    DuplicateInventoryItem(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryItem {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantity: Option<Quantity>,
    #[serde(default)]
    pub location: String,
}

/// What is on the bench.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<InventoryItem>", into = "Vec<InventoryItem>")]
pub struct Inventory {
    items: Vec<InventoryItem>,
}

impl Inventory {
    pub fn new(items: Vec<InventoryItem>) -> Result<Self, PlannerError> {
        let mut seen = BTreeSet::new();
        for item in &items {
            if !seen.insert(item.name.to_lowercase()) {
                return Err(PlannerError::DuplicateInventoryItem(item.name.clone()));
            }
        }
        Ok(Self { items })
    }

    /// Items named `names`, with bench slots assigned in order.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, PlannerError> {
        Self::new(
            names
                .iter()
                .enumerate()
                .map(|(i, n)| InventoryItem {
                    name: n.as_ref().to_string(),
                    quantity: None,
                    location: format!("slot-{}", i + 1),
                })
                .collect(),
        )
    }

    pub fn items(&self) -> &[InventoryItem] {
        &self.items
    }

    pub fn contains(&self, name: &str) -> bool {
        self.items.iter().any(|i| i.name.eq_ignore_ascii_case(name))
    }

    pub fn without(&self, name: &str) -> Self {
        Self {
            items: self
                .items
                .iter()
                .filter(|i| !i.name.eq_ignore_ascii_case(name))
                .cloned()
                .collect(),
        }
    }
}

impl TryFrom<Vec<InventoryItem>> for Inventory {
    type Error = PlannerError;

    fn try_from(items: Vec<InventoryItem>) -> Result<Self, Self::Error> {
        Inventory::new(items)
    }
}

impl From<Inventory> for Vec<InventoryItem> {
    fn from(inv: Inventory) -> Self {
        inv.items
    }
}

fn number(c: &Captures, key: &str) -> Result<f64, PlannerError> {
    c.get(key)
        .and_then(|s| s.parse::<f64>().ok())
        .ok_or_else(|| PlannerError::MissingParameter(key.to_string()))
}

fn word(c: &Captures, key: &str) -> Result<String, PlannerError> {
    c.get(key)
        .cloned()
        .ok_or_else(|| PlannerError::MissingParameter(key.to_string()))
}

fn requirement(quantity: &str, unit: &str, frequency: &str) -> DataRequirement {
    DataRequirement {
        quantity: quantity.into(),
        unit: unit.into(),
        frequency: frequency.into(),
    }
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Parses `text` into the structured instruction.
pub fn parse_instruction(text: &str, grammar: &GrammarProfile) -> Result<ParsedInstruction, PlannerError> {
    let (kind, c) = grammar.match_text(text)?;
    let output = c.get("output").cloned().unwrap_or_default();
    match kind.as_str() {
        "ph_titration" | "color_titration" => {
            let volume = number(&c, "analyte_volume")?;
            let conc = number(&c, "analyte_conc")?;
            let analyte = word(&c, "analyte")?;
            let titrant_conc = number(&c, "titrant_conc")?;
            let titrant = word(&c, "titrant")?;
            let mut parameters = BTreeMap::new();
            parameters.insert("concentration".to_string(), Quantity::new(conc, "M"));
            parameters.insert("volume".to_string(), Quantity::new(volume, "mL"));
            parameters.insert("titrant_concentration".to_string(), Quantity::new(titrant_conc, "M"));
            let mut reagents = vec![analyte.clone(), titrant.clone()];
            let mut instruments = strings(&["microphone"]);
            let mut target = BTreeMap::new();
            let mut data = vec![requirement("volume", "mL", "per_drop")];
            let intent;
            let primitives;
            if kind == "ph_titration" {
                if let Some(ph) = c.get("initial_ph") {
                    let ph = ph
                        .parse::<f64>()
                        .map_err(|_| PlannerError::MissingParameter("initial_ph".into()))?;
                    parameters.insert("pH".to_string(), Quantity::new(ph, "pH"));
                }
                let target_ph = number(&c, "target_ph")?;
                target.insert("pH".to_string(), Quantity::new(target_ph, "pH"));
                instruments.insert(0, "pH meter".to_string());
                data.insert(0, requirement("pH", "pH", "per_drop"));
                intent = vec![
                    format!("titrate {volume} mL of {conc} M {analyte} with {titrant_conc} M {titrant}"),
                    format!("stop at pH {target_ph}"),
                ];
                primitives = strings(&["grasp", "draw", "position", "dispense"]);
            } else {
                let indicator = word(&c, "indicator")?;
                let from = word(&c, "from_color")?;
                let to = word(&c, "to_color")?;
                reagents.push(indicator);
                instruments.insert(0, "camera".to_string());
                target.insert("free_metal_fraction".to_string(), Quantity::new(1e-3, "fraction"));
                data.insert(0, requirement("indicator", "color", "per_drop"));
                intent = vec![
                    format!("titrate {volume} mL of {conc} M {analyte} with {titrant_conc} M {titrant}"),
                    format!("stop when the color turns from {from} to {to}"),
                ];
                primitives = strings(&["grasp", "draw", "position", "dispense", "stir"]);
            }
            Ok(ParsedInstruction {
                entities: Entities {
                    objects: strings(&["beaker", "pipette"]),
                    reagents,
                    instruments,
                },
                initial_conditions: InitialConditions {
                    chemical_system: analyte,
                    parameters,
                },
                target_conditions: TargetConditions { parameters: target },
                operation_intent: intent,
                data_requirements: data,
                output_format: if output.is_empty() {
                    "titration curve with first and second derivatives".into()
                } else {
                    output
                },
                operation_primitives: primitives,
            })
        }
        "weighing" => {
            let mass = number(&c, "mass")?;
            let solid = word(&c, "solid")?;
            let water = number(&c, "water_ml")?;
            let mut parameters = BTreeMap::new();
            parameters.insert("water_volume".to_string(), Quantity::new(water, "mL"));
            let mut target = BTreeMap::new();
            target.insert("mass".to_string(), Quantity::new(mass, "g"));
            Ok(ParsedInstruction {
                entities: Entities {
                    objects: strings(&["beaker", "spatula"]),
                    reagents: vec![solid.clone(), "deionized water".into()],
                    instruments: strings(&["balance", "camera", "stirrer"]),
                },
                initial_conditions: InitialConditions {
                    chemical_system: solid.clone(),
                    parameters,
                },
                target_conditions: TargetConditions { parameters: target },
                operation_intent: vec![
                    format!("weigh {mass} g of {solid}"),
                    format!("dissolve it in {water} mL of deionized water"),
                ],
                data_requirements: vec![
                    requirement("mass", "g", "on_completion"),
                    requirement("dissolution_time", "s", "on_completion"),
                ],
                output_format: if output.is_empty() {
                    "weighed mass and dissolution time".into()
                } else {
                    output
                },
                operation_primitives: strings(&["grasp", "position", "weigh", "dispense", "stir"]),
            })
        }
        other => Err(PlannerError::UnsupportedScenario(other.to_string())),
    }
}

/// Required entities missing from the bench, with user feedback.
pub fn check_environment(parsed: &ParsedInstruction, inventory: &Inventory) -> EnvironmentCheck {
    let missing: Vec<String> = parsed
        .entities
        .all()
        .filter(|e| !inventory.contains(e))
        .cloned()
        .collect();
    let satisfied = missing.is_empty();
    let user_feedback = (!satisfied).then(|| {
        format!(
            "The experiment you wish to complete is [{}]. The current experimental scene lacks [{}].",
            parsed.operation_intent.join("; "),
            missing.join(", ")
        )
    });
    EnvironmentCheck {
        satisfied,
        missing_objects: missing,
        user_feedback,
    }
}

/// Scenario kind implied by the target conditions.
pub fn scenario_kind(parsed: &ParsedInstruction) -> Result<ScenarioKind, PlannerError> {
    let t = &parsed.target_conditions.parameters;
    if t.contains_key("pH") {
        Ok(ScenarioKind::PhTitration)
    } else if t.contains_key("free_metal_fraction") {
        Ok(ScenarioKind::ColorTitration)
    } else if t.contains_key("mass") {
        Ok(ScenarioKind::Weighing)
    } else {
        Err(PlannerError::UnsupportedScenario(
            t.keys().cloned().collect::<Vec<_>>().join(", "),
        ))
    }
}

const TITRATION_EDGES: [(&str, &str, &str); 8] = [
    (Q0, GRASP, Q1),
    (Q1, DRAW, Q2),
    (Q2, RECORD, Q3),
    (Q3, TITRATE, Q4),
    (Q4, AUDIO_DETECT, Q5),
    (Q5, STABLE, Q4),
    (Q4, ENDPOINT, Q6),
    (Q6, VERIFY, QA),
];

const WEIGHING_EDGES: [(&str, &str, &str); 6] = [
    (W0, GRASP, W1),
    (W1, POSITION, W2),
    (W2, WEIGHED, W3),
    (W3, TRANSFER, W4),
    (W4, STIR, W5),
    (W5, DISSOLVED, WA),
];

/// The canonical machine for the parsed scenario.
pub fn build_state_machine(parsed: &ParsedInstruction) -> Result<StateMachine, PlannerError> {
    let machine = match scenario_kind(parsed)? {
        ScenarioKind::PhTitration | ScenarioKind::ColorTitration => StateMachine::build(
            &[Q0, Q1, Q2, Q3, Q4, Q5, Q6, QA],
            &[GRASP, DRAW, TITRATE, AUDIO_DETECT, STABLE, RECORD, ENDPOINT, VERIFY],
            Q0,
            &[QA],
            &TITRATION_EDGES,
        )?,
        ScenarioKind::Weighing => StateMachine::build(
            &[W0, W1, W2, W3, W4, W5, WA],
            &[GRASP, POSITION, WEIGHED, TRANSFER, STIR, DISSOLVED],
            W0,
            &[WA],
            &WEIGHING_EDGES,
        )?,
    };
    Ok(machine)
}

/// Which subtask each kind of work is filed under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roles {
    pub monitor: SubtaskId,
    pub record: SubtaskId,
    pub drive: SubtaskId,
    pub logger: SubtaskId,
    pub manipulation: SubtaskId,
    pub transfer: SubtaskId,
    pub audio: SubtaskId,
    pub dissolution: SubtaskId,
    pub report: SubtaskId,
}

impl Roles {
    pub fn for_kind(kind: ScenarioKind) -> Self {
        let t = |s: &str| SubtaskId::new(s);
        if kind.is_titration() {
            Roles {
                monitor: t("t1"),
                record: t("t2"),
                drive: t("t3"),
                logger: t("t4"),
                manipulation: t("t5"),
                transfer: t("t5"),
                audio: t("t6"),
                dissolution: t("t1"),
                report: t("t7"),
            }
        } else {
            Roles {
                monitor: t("t1"),
                record: t("t3"),
                drive: t("t3"),
                logger: t("t4"),
                manipulation: t("t2"),
                transfer: t("t5"),
                audio: t("t1"),
                dissolution: t("t6"),
                report: t("t7"),
            }
        }
    }
}

/// States in which the plant is physically changing the measured quantity.
pub fn operation_states(kind: ScenarioKind) -> BTreeSet<StateId> {
    let s = if kind.is_titration() { Q4 } else { W2 };
    [StateId::new(s)].into_iter().collect()
}

/// States in which droplet sounds are anticipated.
pub fn anticipating_states(kind: ScenarioKind) -> BTreeSet<StateId> {
    if kind.is_titration() {
        [StateId::new(Q4)].into_iter().collect()
    } else {
        BTreeSet::new()
    }
}

fn subtask(id: &str, receiver: AgentId, description: &str, assoc: Option<(&str, &str)>) -> Subtask {
    Subtask {
        id: SubtaskId::new(id),
        receiver,
        description: description.into(),
        input_symbol: assoc.map(|a| SymbolId::new(a.0)),
        resulting_state: assoc.map(|a| StateId::new(a.1)),
    }
}

fn dependencies(pairs: &[(&str, &[&str])]) -> BTreeMap<SubtaskId, Vec<SubtaskId>> {
    pairs
        .iter()
        .map(|(k, v)| (SubtaskId::new(*k), v.iter().map(|s| SubtaskId::new(*s)).collect()))
        .collect()
}

fn expected(edges: &[(&str, &str, &str)], via: &[&str]) -> Vec<ExpectedTransition> {
    edges
        .iter()
        .zip(via)
        .map(|((from, on, to), via)| ExpectedTransition {
            from: StateId::new(*from),
            on: SymbolId::new(*on),
            to: StateId::new(*to),
            via: SubtaskId::new(*via),
        })
        .collect()
}

/// Splits the experiment into subtasks and instantiates the modules.
pub fn decompose(
    parsed: &ParsedInstruction,
    machine: &StateMachine,
    environment: EnvironmentCheck,
) -> Result<TaskPlan, PlannerError> {
    let kind = scenario_kind(parsed)?;
    let (subtasks, deps, transitions, activation, associated) = if kind.is_titration() {
        let watch = if kind == ScenarioKind::PhTitration {
            "read the pH meter"
        } else {
            "watch the indicator color"
        };
        (
            vec![
                subtask("t1", AgentId::VisionSupervisor, &format!("monitor the bench and {watch}"), None),
                subtask("t2", AgentId::VisionSupervisor, "record readings once stable", Some((RECORD, Q3))),
                subtask("t3", AgentId::VisionSupervisor, "drive the state machine to the endpoint", Some((ENDPOINT, Q6))),
                subtask("t4", AgentId::VisionSupervisor, "activate the statistics logger", Some((TITRATE, Q4))),
                subtask("t5", AgentId::ActionAgent, "grasp the pipette and draw titrant", Some((DRAW, Q2))),
                subtask("t6", AgentId::AudioSupervisor, "detect droplet sounds", Some((AUDIO_DETECT, Q5))),
                subtask("t7", AgentId::Summarizer, "verify the endpoint and write the report", Some((VERIFY, QA))),
            ],
            dependencies(&[
                ("t2", &["t5"]),
                ("t3", &["t1"]),
                ("t4", &["t2"]),
                ("t5", &["t1"]),
                ("t6", &["t4"]),
                ("t7", &["t3", "t4", "t5", "t6"]),
            ]),
            expected(&TITRATION_EDGES, &["t5", "t5", "t2", "t4", "t6", "t2", "t3", "t7"]),
            Q3,
            vec![SubtaskId::new("t4"), SubtaskId::new("t6")],
        )
    } else {
        (
            vec![
                subtask("t1", AgentId::VisionSupervisor, "monitor the bench and read the balance", None),
                subtask("t2", AgentId::ActionAgent, "grasp the spatula and position it over the balance", Some((POSITION, W2))),
                subtask("t3", AgentId::VisionSupervisor, "confirm the weighed mass", Some((WEIGHED, W3))),
                subtask("t4", AgentId::VisionSupervisor, "activate the statistics logger", None),
                subtask("t5", AgentId::ActionAgent, "transfer the solid and stir", Some((STIR, W5))),
                subtask("t6", AgentId::VisionSupervisor, "confirm complete dissolution", Some((DISSOLVED, WA))),
                subtask("t7", AgentId::Summarizer, "write the report", None),
            ],
            dependencies(&[
                ("t2", &["t1"]),
                ("t3", &["t2", "t4"]),
                ("t4", &["t1"]),
                ("t5", &["t3"]),
                ("t6", &["t5"]),
                ("t7", &["t3", "t6"]),
            ]),
            expected(&WEIGHING_EDGES, &["t2", "t2", "t3", "t5", "t5", "t6"]),
            W2,
            vec![SubtaskId::new("t2"), SubtaskId::new("t4")],
        )
    };
    let mut sources = strings(&["sensor", "visual", "stat"]);
    if kind.is_titration() {
        sources.insert(0, "audio".into());
    }
    let plan = TaskPlan {
        parsed_instruction: parsed.clone(),
        environment_check: environment,
        state_machine: machine.clone(),
        task_decomposition: TaskDecomposition {
            subtasks,
            dependencies: deps,
            expected_transitions: transitions,
        },
        module_instantiation: ModuleInstantiation {
            stat_logger: StatLoggerConfig {
                activate: true,
                activation_phase: StateId::new(activation),
                activation_trigger: AgentId::VisionSupervisor,
                associated_subtasks: associated,
            },
            recorder: RecorderConfig {
                activate: true,
                activation_time: machine.initial.as_str().to_string(),
                deactivation_time: machine
                    .accepting
                    .first()
                    .map(|s| s.as_str().to_string())
                    .unwrap_or_default(),
                data_sources: sources,
            },
        },
    };
    let diagnostics = plan.validate();
    if diagnostics.is_empty() {
        Ok(plan)
    } else {
        Err(PlannerError::InvalidPlan(diagnostics))
    }
}

/// A compiled plan together with its scenario kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Compiled {
    pub kind: ScenarioKind,
    pub plan: TaskPlan,
}

/// Full planner pipeline. An unsatisfied environment is reported in the
/// plan rather than as an error.
pub fn compile(text: &str, grammar: &GrammarProfile, inventory: &Inventory) -> Result<Compiled, PlannerError> {
    let parsed = parse_instruction(text, grammar)?;
    let kind = scenario_kind(&parsed)?;
    let env = check_environment(&parsed, inventory);
    let machine = build_state_machine(&parsed)?;
    let plan = decompose(&parsed, &machine, env)?;
    Ok(Compiled { kind, plan })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const HCL: &str = "Titrate 25 mL of 0.1 M HCl with 0.1 M NaOH. The initial pH is 1.06. \
        Add the titrant one drop at a time and wait for the reading to settle after each drop. \
        Stop titrating once the pH reaches 12.5. Report the curve and its derivatives.";

    fn bench(parsed: &ParsedInstruction) -> Inventory {
        let names: Vec<&String> = parsed.entities.all().collect();
        Inventory::from_names(&names).unwrap()
    }

    #[test]
    fn titration_parse() {
        let p = parse_instruction(HCL, &GrammarProfile::bundled()).unwrap();
        assert_eq!(p.target_conditions.parameters["pH"], Quantity::new(12.5, "pH"));
        assert_eq!(p.initial_conditions.parameters["pH"], Quantity::new(1.06, "pH"));
        assert_eq!(p.initial_conditions.parameters["concentration"], Quantity::new(0.1, "M"));
        assert_eq!(p.initial_conditions.chemical_system, "HCl");
        assert!(p.entities.reagents.contains(&"HCl".to_string()));
        let per_drop: Vec<_> = p
            .data_requirements
            .iter()
            .filter(|d| d.frequency == "per_drop")
            .map(|d| d.quantity.as_str())
            .collect();
        assert!(per_drop.contains(&"pH") && per_drop.contains(&"volume"));
    }

    #[test]
    fn weighing_parse() {
        let text = "Weigh 2.50 g of NaCl, add 50 mL deionized water and stir until the solid is completely dissolved.";
        let p = parse_instruction(text, &GrammarProfile::bundled()).unwrap();
        assert_eq!(p.target_conditions.parameters["mass"], Quantity::new(2.5, "g"));
        assert!(p.operation_primitives.contains(&"weigh".to_string()));
        assert!(p.operation_primitives.contains(&"stir".to_string()));
        assert!(p.operation_primitives.iter().all(|x| PRIMITIVES.contains(&x.as_str())));
    }

    #[test]
    fn unrecognized() {
        assert!(matches!(
            parse_instruction("paint the beaker blue", &GrammarProfile::bundled()),
            Err(PlannerError::UnrecognizedInstruction(_))
        ));
    }

    #[test]
    fn missing_target() {
        let text = HCL.replace("reaches 12.5", "reaches neutral");
        assert!(matches!(
            parse_instruction(&text, &GrammarProfile::bundled()),
            Err(PlannerError::MissingParameter(s)) if s == "target_ph"
        ));
    }

    #[test]
    fn environment_feedback() {
        let p = parse_instruction(HCL, &GrammarProfile::bundled()).unwrap();
        let full = bench(&p);
        let ok = check_environment(&p, &full);
        assert!(ok.satisfied && ok.missing_objects.is_empty() && ok.user_feedback.is_none());
        let lacking = check_environment(&p, &full.without("pH meter"));
        let fb = lacking.user_feedback.unwrap();
        assert!(fb.contains("lacks") && fb.contains("pH meter"));
        let empty = check_environment(&p, &Inventory::default());
        assert_eq!(empty.missing_objects, p.entities.all().cloned().collect::<Vec<_>>());
    }

    #[test]
    fn titration_plan() {
        let g = GrammarProfile::bundled();
        let p = parse_instruction(HCL, &g).unwrap();
        let c = compile(HCL, &g, &bench(&p)).unwrap();
        let m = &c.plan.state_machine;
        assert_eq!(m.states.len(), 8);
        assert_eq!(m.initial.as_str(), Q0);
        assert_eq!(m.accepting, vec![StateId::new(QA)]);
        assert!(m.validate().is_empty());
        assert_eq!(c.plan.task_decomposition.subtasks.len(), 7);
        assert_eq!(c.plan.module_instantiation.stat_logger.activation_phase.as_str(), Q3);
        let deps = &c.plan.task_decomposition.dependencies[&SubtaskId::new("t7")];
        assert!(deps.contains(&SubtaskId::new("t6")));
        assert!(c.plan.validate().is_empty());
    }

    #[test]
    fn weighing_machine_requires_dissolution() {
        let text = "Weigh 2.50 g of NaCl, add 50 mL deionized water and stir until the solid is completely dissolved.";
        let p = parse_instruction(text, &GrammarProfile::bundled()).unwrap();
        let m = build_state_machine(&p).unwrap();
        let into_accept: Vec<_> = m.edges().filter(|e| m.accepting.contains(e.2)).collect();
        assert_eq!(into_accept.len(), 1);
        assert_eq!(into_accept[0].1.as_str(), DISSOLVED);
        assert!(m.reachable().contains(&StateId::new(WA)));
    }
}
