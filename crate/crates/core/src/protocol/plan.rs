//! The five-block task plan document: parsed instruction, environment
//! check, state machine, task decomposition, module instantiation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use super::{AgentId, SubtaskId};
use crate::fsm::{Diagnostic, StateId, StateMachine, SymbolId};

/// A number with its unit. Serialized as `"<value> <unit>"` so parameter
/// maps keep the string-valued shape of the plan template.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantity {
    pub value: f64,
    pub unit: String,
}

impl Quantity {
    pub fn new(value: f64, unit: impl Into<String>) -> Self {
        Self {
            value,
            unit: unit.into(),
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.value, self.unit)
    }
}

impl Serialize for Quantity {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Quantity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Object { value: f64, unit: String },
        }
        match Repr::deserialize(d)? {
            Repr::Object { value, unit } => Ok(Quantity { value, unit }),
            Repr::Text(text) => {
                let text = text.trim();
                let (num, unit) = text.split_once(char::is_whitespace).ok_or_else(|| {
                    de::Error::custom(format!("quantity `{text}` lacks a unit"))
                })?;
                let value = num
                    .parse::<f64>()
                    .map_err(|_| de::Error::custom(format!("quantity `{text}` is not numeric")))?;
                Ok(Quantity {
                    value,
                    unit: unit.trim().to_string(),
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Entities {
    pub objects: Vec<String>,
    pub reagents: Vec<String>,
    pub instruments: Vec<String>,
}

impl Entities {
    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.objects
            .iter()
            .chain(self.instruments.iter())
            .chain(self.reagents.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InitialConditions {
    pub chemical_system: String,
    pub parameters: BTreeMap<String, Quantity>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TargetConditions {
    pub parameters: BTreeMap<String, Quantity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRequirement {
    pub quantity: String,
    pub unit: String,
    pub frequency: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedInstruction {
    pub entities: Entities,
    pub initial_conditions: InitialConditions,
    pub target_conditions: TargetConditions,
    pub operation_intent: Vec<String>,
    pub data_requirements: Vec<DataRequirement>,
    pub output_format: String,
    pub operation_primitives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentCheck {
    pub satisfied: bool,
    pub missing_objects: Vec<String>,
    pub user_feedback: Option<String>,
}

/// An atomic subtask with its (optional) link into the state machine.
#[derive(Debug, Clone, PartialEq)]
pub struct Subtask {
    pub id: SubtaskId,
    pub receiver: AgentId,
    pub description: String,
    pub input_symbol: Option<SymbolId>,
    pub resulting_state: Option<StateId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedTransition {
    pub from: StateId,
    pub on: SymbolId,
    pub to: StateId,
    pub via: SubtaskId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawDecomposition", into = "RawDecomposition")]
pub struct TaskDecomposition {
    pub subtasks: Vec<Subtask>,
    pub dependencies: BTreeMap<SubtaskId, Vec<SubtaskId>>,
    pub expected_transitions: Vec<ExpectedTransition>,
}

impl TaskDecomposition {
    pub fn subtask(&self, id: &SubtaskId) -> Option<&Subtask> {
        self.subtasks.iter().find(|s| &s.id == id)
    }

    /// First subtask whose input symbol is `symbol`.
    pub fn subtask_for_symbol(&self, symbol: &SymbolId) -> Option<&Subtask> {
        self.subtasks
            .iter()
            .find(|s| s.input_symbol.as_ref() == Some(symbol))
    }

    /// First subtask assigned to `agent`.
    pub fn subtask_for_agent(&self, agent: AgentId) -> Option<&Subtask> {
        self.subtasks.iter().find(|s| s.receiver == agent)
    }
}

#[derive(Serialize, Deserialize)]
struct RawSubtask {
    id: SubtaskId,
    receiver: AgentId,
    description: String,
}

#[derive(Serialize, Deserialize)]
struct RawAssociation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_symbol: Option<SymbolId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    resulting_state: Option<StateId>,
}

#[derive(Serialize, Deserialize)]
struct RawDecomposition {
    subtasks: Vec<RawSubtask>,
    #[serde(default)]
    dependencies: BTreeMap<SubtaskId, Vec<SubtaskId>>,
    #[serde(default)]
    state_associations: BTreeMap<SubtaskId, RawAssociation>,
    #[serde(default)]
    expected_transitions: Vec<ExpectedTransition>,
}

impl From<RawDecomposition> for TaskDecomposition {
    fn from(mut raw: RawDecomposition) -> Self {
        let subtasks = raw
            .subtasks
            .into_iter()
            .map(|s| {
                let assoc = raw.state_associations.remove(&s.id);
                Subtask {
                    input_symbol: assoc.as_ref().and_then(|a| a.input_symbol.clone()),
                    resulting_state: assoc.and_then(|a| a.resulting_state),
                    id: s.id,
                    receiver: s.receiver,
                    description: s.description,
                }
            })
            .collect();
        TaskDecomposition {
            subtasks,
            dependencies: raw.dependencies,
            expected_transitions: raw.expected_transitions,
        }
    }
}

impl From<TaskDecomposition> for RawDecomposition {
    fn from(d: TaskDecomposition) -> Self {
        let mut state_associations = BTreeMap::new();
        let mut subtasks = Vec::with_capacity(d.subtasks.len());
        for s in d.subtasks {
            if s.input_symbol.is_some() || s.resulting_state.is_some() {
                state_associations.insert(
                    s.id.clone(),
                    RawAssociation {
                        input_symbol: s.input_symbol,
                        resulting_state: s.resulting_state,
                    },
                );
            }
            subtasks.push(RawSubtask {
                id: s.id,
                receiver: s.receiver,
                description: s.description,
            });
        }
        RawDecomposition {
            subtasks,
            dependencies: d.dependencies,
            state_associations,
            expected_transitions: d.expected_transitions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatLoggerConfig {
    pub activate: bool,
    pub activation_phase: StateId,
    pub activation_trigger: AgentId,
    #[serde(default)]
    pub associated_subtasks: Vec<SubtaskId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecorderConfig {
    pub activate: bool,
    pub activation_time: String,
    pub deactivation_time: String,
    pub data_sources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleInstantiation {
    #[serde(rename = "statistics_logger")]
    pub stat_logger: StatLoggerConfig,
    #[serde(rename = "high_confidence_recorder")]
    pub recorder: RecorderConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub parsed_instruction: ParsedInstruction,
    pub environment_check: EnvironmentCheck,
    pub state_machine: StateMachine,
    pub task_decomposition: TaskDecomposition,
    pub module_instantiation: ModuleInstantiation,
}

/// A cross-reference problem found by [`TaskPlan::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanDiagnostic {
    Machine { diagnostic: Diagnostic },
    DuplicateSubtask { subtask: SubtaskId },
    UnknownDependency { subtask: SubtaskId, depends_on: SubtaskId },
    DependencyCycle { cycle: Vec<SubtaskId> },
    UnresolvedSymbol { subtask: SubtaskId, symbol: SymbolId },
    UnresolvedState { subtask: SubtaskId, state: StateId },
    ExpectedTransitionMismatch { from: StateId, on: SymbolId, to: StateId },
    UnknownViaSubtask { via: SubtaskId },
    UnknownActivationPhase { state: StateId },
    UnknownAssociatedSubtask { subtask: SubtaskId },
    InconsistentEnvironmentCheck,
    EmptyTargetConditions,
}

impl fmt::Display for PlanDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanDiagnostic::Machine { diagnostic } => write!(f, "state machine: {diagnostic}"),
            PlanDiagnostic::DuplicateSubtask { subtask } => {
                write!(f, "subtask `{subtask}` declared twice")
            }
            PlanDiagnostic::UnknownDependency {
                subtask,
                depends_on,
            } => write!(f, "subtask `{subtask}` depends on unknown subtask `{depends_on}`"),
            PlanDiagnostic::DependencyCycle { cycle } => write!(
                f,
                "dependency cycle: {}",
                cycle
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(" -> ")
            ),
            PlanDiagnostic::UnresolvedSymbol { subtask, symbol } => {
                write!(f, "subtask `{subtask}` references undeclared symbol `{symbol}`")
            }
            PlanDiagnostic::UnresolvedState { subtask, state } => {
                write!(f, "subtask `{subtask}` references undeclared state `{state}`")
            }
            PlanDiagnostic::ExpectedTransitionMismatch { from, on, to } => write!(
                f,
                "expected transition `{from}` --{on}--> `{to}` is not in the transition table"
            ),
            PlanDiagnostic::UnknownViaSubtask { via } => {
                write!(f, "expected transition via unknown subtask `{via}`")
            }
            PlanDiagnostic::UnknownActivationPhase { state } => {
                write!(f, "logger activation phase `{state}` is not a declared state")
            }
            PlanDiagnostic::UnknownAssociatedSubtask { subtask } => {
                write!(f, "logger associated with unknown subtask `{subtask}`")
            }
            PlanDiagnostic::InconsistentEnvironmentCheck => {
                write!(f, "environment check flags disagree with its missing list")
            }
            PlanDiagnostic::EmptyTargetConditions => write!(f, "no target conditions"),
        }
    }
}

impl TaskPlan {
    /// Cross-referential integrity check. Empty iff every plan invariant
    /// holds, including the embedded machine's own validation.
    pub fn validate(&self) -> Vec<PlanDiagnostic> {
        let mut out: Vec<PlanDiagnostic> = self
            .state_machine
            .validate()
            .into_iter()
            .map(|diagnostic| PlanDiagnostic::Machine { diagnostic })
            .collect();
        let machine = &self.state_machine;
        let decomp = &self.task_decomposition;

        let mut ids = BTreeSet::new();
        for s in &decomp.subtasks {
            if !ids.insert(s.id.clone()) {
                out.push(PlanDiagnostic::DuplicateSubtask {
                    subtask: s.id.clone(),
                });
            }
            if let Some(sym) = &s.input_symbol {
                if !machine.has_symbol(sym) {
                    out.push(PlanDiagnostic::UnresolvedSymbol {
                        subtask: s.id.clone(),
                        symbol: sym.clone(),
                    });
                }
            }
            if let Some(state) = &s.resulting_state {
                if !machine.has_state(state) {
                    out.push(PlanDiagnostic::UnresolvedState {
                        subtask: s.id.clone(),
                        state: state.clone(),
                    });
                }
            }
        }

        for (task, deps) in &decomp.dependencies {
            for dep in std::iter::once(task).chain(deps.iter()) {
                if !ids.contains(dep) {
                    out.push(PlanDiagnostic::UnknownDependency {
                        subtask: task.clone(),
                        depends_on: dep.clone(),
                    });
                }
            }
        }
        if let Some(cycle) = find_cycle(&decomp.dependencies) {
            out.push(PlanDiagnostic::DependencyCycle { cycle });
        }

        for t in &decomp.expected_transitions {
            if machine.next(&t.from, &t.on) != Some(&t.to) {
                out.push(PlanDiagnostic::ExpectedTransitionMismatch {
                    from: t.from.clone(),
                    on: t.on.clone(),
                    to: t.to.clone(),
                });
            }
            if !ids.contains(&t.via) {
                out.push(PlanDiagnostic::UnknownViaSubtask { via: t.via.clone() });
            }
        }

        let logger = &self.module_instantiation.stat_logger;
        if logger.activate && !machine.has_state(&logger.activation_phase) {
            out.push(PlanDiagnostic::UnknownActivationPhase {
                state: logger.activation_phase.clone(),
            });
        }
        for t in &logger.associated_subtasks {
            if !ids.contains(t) {
                out.push(PlanDiagnostic::UnknownAssociatedSubtask { subtask: t.clone() });
            }
        }

        let env = &self.environment_check;
        if env.satisfied != env.missing_objects.is_empty()
            || env.satisfied == env.user_feedback.is_some()
        {
            out.push(PlanDiagnostic::InconsistentEnvironmentCheck);
        }
        if self.parsed_instruction.target_conditions.parameters.is_empty() {
            out.push(PlanDiagnostic::EmptyTargetConditions);
        }
        out
    }
}

/// Depth-first search for a cycle in a dependency map (task -> prerequisites).
/// Returns the cycle as a closed path when one exists.
fn find_cycle(deps: &BTreeMap<SubtaskId, Vec<SubtaskId>>) -> Option<Vec<SubtaskId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    fn visit(
        node: &SubtaskId,
        deps: &BTreeMap<SubtaskId, Vec<SubtaskId>>,
        marks: &mut BTreeMap<SubtaskId, Mark>,
        path: &mut Vec<SubtaskId>,
    ) -> Option<Vec<SubtaskId>> {
        match marks.get(node) {
            Some(Mark::Done) => return None,
            Some(Mark::Open) => {
                let start = path.iter().position(|p| p == node).unwrap_or(0);
                let mut cycle = path[start..].to_vec();
                cycle.push(node.clone());
                return Some(cycle);
            }
            None => {}
        }
        marks.insert(node.clone(), Mark::Open);
        path.push(node.clone());
        for next in deps.get(node).into_iter().flatten() {
            if let Some(c) = visit(next, deps, marks, path) {
                return Some(c);
            }
        }
        path.pop();
        marks.insert(node.clone(), Mark::Done);
        None
    }
    let mut marks = BTreeMap::new();
    for node in deps.keys() {
        let mut path = Vec::new();
        if let Some(c) = visit(node, deps, &mut marks, &mut path) {
            return Some(c);
        }
    }
    None
}
