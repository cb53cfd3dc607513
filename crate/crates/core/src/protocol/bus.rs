use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use super::plan::TaskPlan;
use super::{AgentId, AgentMessage, ProtocolError};

/// A delivered message with its global sequence number.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub seq: u64,
    pub message: AgentMessage,
}

/// Single-process bus with one FIFO queue per receiver. Sequence numbers
/// come from one monotone counter, so delivery order never depends on
/// anything but the order of `send` calls.
#[derive(Debug)]
pub struct MessageBus {
    plan: Option<Arc<TaskPlan>>,
    registered: BTreeSet<AgentId>,
    queues: BTreeMap<AgentId, VecDeque<Delivery>>,
    next_seq: u64,
    log: Vec<Delivery>,
}

impl MessageBus {
    /// A bus validating against `plan`, with every agent registered.
    pub fn new(plan: Arc<TaskPlan>) -> Self {
        let mut bus = Self::unchecked();
        bus.plan = Some(plan);
        bus
    }

    /// A bus without plan validation (used before a plan exists).
    pub fn unchecked() -> Self {
        Self {
            plan: None,
            registered: AgentId::ALL.into_iter().collect(),
            queues: BTreeMap::new(),
            next_seq: 1,
            log: Vec::new(),
        }
    }

    pub fn deregister(&mut self, agent: AgentId) {
        self.registered.remove(&agent);
        self.queues.remove(&agent);
    }

    pub fn register(&mut self, agent: AgentId) {
        self.registered.insert(agent);
    }

    pub fn plan(&self) -> Option<&Arc<TaskPlan>> {
        self.plan.as_ref()
    }

    pub fn send(&mut self, msg: AgentMessage) -> Result<u64, ProtocolError> {
        if !self.registered.contains(&msg.receiver) {
            return Err(ProtocolError::UnknownReceiver(msg.receiver));
        }
        if let Some(plan) = &self.plan {
            if plan.task_decomposition.subtask(&msg.subtask).is_none() {
                return Err(ProtocolError::UnresolvedSubtask(msg.subtask));
            }
            if !plan.state_machine.has_state(&msg.q_target) {
                return Err(ProtocolError::UnresolvedState(msg.q_target));
            }
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let delivery = Delivery { seq, message: msg };
        self.log.push(delivery.clone());
        self.queues
            .entry(delivery.message.receiver)
            .or_default()
            .push_back(delivery);
        Ok(seq)
    }

    /// Drains the receiver's queue in delivery order.
    pub fn poll(&mut self, receiver: AgentId) -> Vec<AgentMessage> {
        self.poll_with_seq(receiver)
            .into_iter()
            .map(|d| d.message)
            .collect()
    }

    pub fn poll_with_seq(&mut self, receiver: AgentId) -> Vec<Delivery> {
        self.queues
            .get_mut(&receiver)
            .map(|q| q.drain(..).collect())
            .unwrap_or_default()
    }

    pub fn pending(&self, receiver: AgentId) -> usize {
        self.queues.get(&receiver).map_or(0, |q| q.len())
    }

    /// Every message ever accepted, in sequence order.
    pub fn log(&self) -> &[Delivery] {
        &self.log
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::SubtaskId;

    fn msg(sender: AgentId, receiver: AgentId, t: &str) -> AgentMessage {
        AgentMessage {
            sender,
            receiver,
            subtask: SubtaskId::new(t),
            q_target: "q1".into(),
            payload: None,
            sent_at: 0.0,
        }
    }

    #[test]
    fn fifo_per_receiver() {
        let mut bus = MessageBus::unchecked();
        let a = bus
            .send(msg(AgentId::Planner, AgentId::ActionAgent, "t1"))
            .unwrap();
        let b = bus
            .send(msg(AgentId::Planner, AgentId::ActionAgent, "t2"))
            .unwrap();
        assert!(a < b);
        let got = bus.poll(AgentId::ActionAgent);
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].subtask.as_str(), "t1");
        assert_eq!(got[1].subtask.as_str(), "t2");
        assert!(bus.poll(AgentId::ActionAgent).is_empty());
    }

    #[test]
    fn empty_poll() {
        let mut bus = MessageBus::unchecked();
        assert!(bus.poll(AgentId::Summarizer).is_empty());
    }

    #[test]
    fn unregistered_receiver() {
        let mut bus = MessageBus::unchecked();
        bus.deregister(AgentId::Summarizer);
        assert_eq!(
            bus.send(msg(AgentId::Planner, AgentId::Summarizer, "t1")),
            Err(ProtocolError::UnknownReceiver(AgentId::Summarizer))
        );
    }
}
