//! Deterministic finite state machine with validated transitions and a
//! replayable transition history.
//!
//! A [`StateMachine`] is the immutable five-tuple (states, symbols,
//! transition function, initial state, accepting states). A
//! [`MachineCursor`] walks one machine and records every transition it
//! takes, so the history can be replayed from the initial state.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::AgentId;

/// Opaque state label, e.g. `q3_ready`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub String);

/// Opaque input symbol label, e.g. `grasp`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SymbolId(pub String);

impl StateId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl SymbolId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for SymbolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StateId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl From<&str> for SymbolId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FsmError {
    #[error("no transition defined from state `{state}` on symbol `{symbol}`")]
    UndefinedTransition { state: StateId, symbol: SymbolId },
    #[error("symbol `{0}` is not declared by the machine")]
    UnknownSymbol(SymbolId),
    #[error("timestamp {at} precedes the last recorded transition at {last}")]
    TimestampRegression { at: f64, last: f64 },
    #[error("invalid machine: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidMachine(Vec<Diagnostic>),
}

/// One structural problem found by [`StateMachine::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    DuplicateState { state: StateId },
    DuplicateSymbol { symbol: SymbolId },
    UnknownInitialState { state: StateId },
    UnknownAcceptingState { state: StateId },
    DanglingSourceState { state: StateId },
    DanglingTargetState { from: StateId, symbol: SymbolId, to: StateId },
    UndeclaredSymbol { from: StateId, symbol: SymbolId },
    UnreachableAcceptingState { state: StateId },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::DuplicateState { state } => write!(f, "state `{state}` declared twice"),
            Diagnostic::DuplicateSymbol { symbol } => write!(f, "symbol `{symbol}` declared twice"),
            Diagnostic::UnknownInitialState { state } => {
                write!(f, "initial state `{state}` is not a declared state")
            }
            Diagnostic::UnknownAcceptingState { state } => {
                write!(f, "accepting state `{state}` is not a declared state")
            }
            Diagnostic::DanglingSourceState { state } => {
                write!(f, "transitions declared from undeclared state `{state}`")
            }
            Diagnostic::DanglingTargetState { from, symbol, to } => write!(
                f,
                "transition `{from}` --{symbol}--> `{to}` targets an undeclared state"
            ),
            Diagnostic::UndeclaredSymbol { from, symbol } => {
                write!(f, "transition from `{from}` uses undeclared symbol `{symbol}`")
            }
            Diagnostic::UnreachableAcceptingState { state } => {
                write!(f, "accepting state `{state}` is unreachable from the initial state")
            }
        }
    }
}

/// The five-tuple (Q, Σ, δ, q0, F). Serializes as the `state_machine` block
/// of a task plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMachine {
    pub states: Vec<StateId>,
    #[serde(rename = "input_symbols")]
    pub symbols: Vec<SymbolId>,
    #[serde(rename = "initial_state")]
    pub initial: StateId,
    #[serde(rename = "accepting_states")]
    pub accepting: Vec<StateId>,
    /// Nested map state -> symbol -> state. Nesting makes δ a partial
    /// function by construction.
    pub transitions: BTreeMap<StateId, BTreeMap<SymbolId, StateId>>,
}

impl StateMachine {
    /// Builds a machine from edge triples, failing fast on any diagnostic.
    pub fn build<S, Y>(
        states: &[S],
        symbols: &[Y],
        initial: &str,
        accepting: &[S],
        edges: &[(&str, &str, &str)],
    ) -> Result<Self, FsmError>
    where
        S: AsRef<str>,
        Y: AsRef<str>,
    {
        let mut transitions: BTreeMap<StateId, BTreeMap<SymbolId, StateId>> = BTreeMap::new();
        for (from, sym, to) in edges {
            transitions
                .entry(StateId::new(*from))
                .or_default()
                .insert(SymbolId::new(*sym), StateId::new(*to));
        }
        let machine = StateMachine {
            states: states.iter().map(|s| StateId::new(s.as_ref())).collect(),
            symbols: symbols.iter().map(|s| SymbolId::new(s.as_ref())).collect(),
            initial: StateId::new(initial),
            accepting: accepting.iter().map(|s| StateId::new(s.as_ref())).collect(),
            transitions,
        };
        let diagnostics = machine.validate();
        if diagnostics.is_empty() {
            Ok(machine)
        } else {
            Err(FsmError::InvalidMachine(diagnostics))
        }
    }

    pub fn has_state(&self, state: &StateId) -> bool {
        self.states.contains(state)
    }

    pub fn has_symbol(&self, symbol: &SymbolId) -> bool {
        self.symbols.contains(symbol)
    }

    pub fn is_accepting_state(&self, state: &StateId) -> bool {
        self.accepting.contains(state)
    }

    /// δ(state, symbol), if defined.
    pub fn next(&self, state: &StateId, symbol: &SymbolId) -> Option<&StateId> {
        self.transitions.get(state).and_then(|row| row.get(symbol))
    }

    /// Iterates all edges as (from, symbol, to).
    pub fn edges(&self) -> impl Iterator<Item = (&StateId, &SymbolId, &StateId)> {
        self.transitions
            .iter()
            .flat_map(|(from, row)| row.iter().map(move |(sym, to)| (from, sym, to)))
    }

    /// States reachable from the initial state by breadth-first search.
    pub fn reachable(&self) -> BTreeSet<StateId> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        seen.insert(self.initial.clone());
        queue.push_back(self.initial.clone());
        while let Some(state) = queue.pop_front() {
            if let Some(row) = self.transitions.get(&state) {
                for to in row.values() {
                    if seen.insert(to.clone()) {
                        queue.push_back(to.clone());
                    }
                }
            }
        }
        seen
    }

    /// Structural diagnostics. Empty iff every reference resolves and every
    /// accepting state is reachable from the initial state.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for s in &self.states {
            if !seen.insert(s) {
                out.push(Diagnostic::DuplicateState { state: s.clone() });
            }
        }
        let mut seen_sym = BTreeSet::new();
        for s in &self.symbols {
            if !seen_sym.insert(s) {
                out.push(Diagnostic::DuplicateSymbol { symbol: s.clone() });
            }
        }
        if !self.has_state(&self.initial) {
            out.push(Diagnostic::UnknownInitialState {
                state: self.initial.clone(),
            });
        }
        for a in &self.accepting {
            if !self.has_state(a) {
                out.push(Diagnostic::UnknownAcceptingState { state: a.clone() });
            }
        }
        for (from, row) in &self.transitions {
            if !self.has_state(from) {
                out.push(Diagnostic::DanglingSourceState { state: from.clone() });
            }
            for (sym, to) in row {
                if !self.has_symbol(sym) {
                    out.push(Diagnostic::UndeclaredSymbol {
                        from: from.clone(),
                        symbol: sym.clone(),
                    });
                }
                if !self.has_state(to) {
                    out.push(Diagnostic::DanglingTargetState {
                        from: from.clone(),
                        symbol: sym.clone(),
                        to: to.clone(),
                    });
                }
            }
        }
        let reachable = self.reachable();
        for a in &self.accepting {
            if self.has_state(a) && !reachable.contains(a) {
                out.push(Diagnostic::UnreachableAcceptingState { state: a.clone() });
            }
        }
        out
    }
}

/// One taken edge (q_t, σ, q_{t+1}) with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub from: StateId,
    pub symbol: SymbolId,
    pub to: StateId,
    pub timestamp: f64,
    pub emitter: AgentId,
}

/// Walks a shared machine and keeps its transition history.
#[derive(Debug, Clone)]
pub struct MachineCursor {
    machine: Arc<StateMachine>,
    current: StateId,
    history: Vec<TransitionRecord>,
}

impl MachineCursor {
    pub fn new(machine: Arc<StateMachine>) -> Self {
        let current = machine.initial.clone();
        Self {
            machine,
            current,
            history: Vec::new(),
        }
    }

    pub fn machine(&self) -> &Arc<StateMachine> {
        &self.machine
    }

    pub fn current(&self) -> &StateId {
        &self.current
    }

    pub fn history(&self) -> &[TransitionRecord] {
        &self.history
    }

    /// Applies δ(current, symbol). An undefined pair is a protocol
    /// violation reported to the caller; the cursor is left unchanged.
    pub fn step(
        &mut self,
        symbol: &SymbolId,
        timestamp: f64,
        emitter: AgentId,
    ) -> Result<StateId, FsmError> {
        if !self.machine.has_symbol(symbol) {
            return Err(FsmError::UnknownSymbol(symbol.clone()));
        }
        if let Some(last) = self.history.last() {
            if timestamp < last.timestamp {
                return Err(FsmError::TimestampRegression {
                    at: timestamp,
                    last: last.timestamp,
                });
            }
        }
        let to = self
            .machine
            .next(&self.current, symbol)
            .cloned()
            .ok_or_else(|| FsmError::UndefinedTransition {
                state: self.current.clone(),
                symbol: symbol.clone(),
            })?;
        self.history.push(TransitionRecord {
            from: self.current.clone(),
            symbol: symbol.clone(),
            to: to.clone(),
            timestamp,
            emitter,
        });
        self.current = to.clone();
        Ok(to)
    }

    pub fn is_accepting(&self) -> bool {
        self.machine.is_accepting_state(&self.current)
    }

    /// Folds the recorded symbols over δ from the initial state.
    pub fn replay(&self) -> Result<StateId, FsmError> {
        replay(&self.machine, self.history.iter().map(|r| &r.symbol))
    }
}

/// Replays a symbol sequence from the machine's initial state.
pub fn replay<'a, I>(machine: &StateMachine, symbols: I) -> Result<StateId, FsmError>
where
    I: IntoIterator<Item = &'a SymbolId>,
{
    let mut state = machine.initial.clone();
    for sym in symbols {
        state = machine
            .next(&state, sym)
            .cloned()
            .ok_or_else(|| FsmError::UndefinedTransition {
                state: state.clone(),
                symbol: sym.clone(),
            })?;
    }
    Ok(state)
}
