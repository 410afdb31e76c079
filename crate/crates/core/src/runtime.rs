//! Agent identities, the protocol wiring table, conversation tracking and
//! message delivery over the kernel.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Bid, MachineStatusRecord, Proposal};
use crate::domain::{Job, Minutes, Operation, Order, ScheduleEntry, TransportEntry};
use crate::kernel::{EventKind, Kernel, KernelError};
use crate::scheduler::OrderPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Manager,
    ShopManager,
    Cell,
    MHs,
    SchedulerMachine,
    MachineResource,
    MHsResource,
    JobTracker,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentId {
    pub role: Role,
    pub instance: String,
}

impl AgentId {
    pub fn new(role: Role, instance: impl Into<String>) -> Self {
        Self {
            role,
            instance: instance.into(),
        }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}/{}", self.role, self.instance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    Order,
    Shop,
    MHsNegotiation,
    MachineNegotiation,
    Resource,
    MachineResource,
}

impl Protocol {
    pub const ALL: [Protocol; 6] = [
        Protocol::Order,
        Protocol::Shop,
        Protocol::MHsNegotiation,
        Protocol::MachineNegotiation,
        Protocol::Resource,
        Protocol::MachineResource,
    ];

    /// The two roles a protocol connects (either direction).
    pub fn endpoints(self) -> (Role, Role) {
        match self {
            Protocol::Order => (Role::Manager, Role::ShopManager),
            Protocol::Shop => (Role::ShopManager, Role::Cell),
            Protocol::MachineNegotiation => (Role::Cell, Role::SchedulerMachine),
            Protocol::MHsNegotiation => (Role::Cell, Role::MHs),
            Protocol::MachineResource => (Role::SchedulerMachine, Role::MachineResource),
            Protocol::Resource => (Role::MHs, Role::MHsResource),
        }
    }
}

pub fn wiring_allows(protocol: Protocol, from: Role, to: Role) -> bool {
    let (a, b) = protocol.endpoints();
    (from == a && to == b) || (from == b && to == a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Performative {
    Inform,
    Query,
    Propose,
    AcceptProposal,
    RejectProposal,
    Request,
    Confirm,
    Refuse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Body {
    NewOrder {
        order: Order,
    },
    ShopQuery {
        order: Order,
        jobs: Vec<Job>,
    },
    OpsQuery {
        ops: Vec<Operation>,
        material_arrival: Minutes,
    },
    Bids {
        bids: Vec<Bid>,
        status: MachineStatusRecord,
    },
    LegQuery {
        from_station: String,
        to_station: String,
    },
    LegOffer {
        from_station: String,
        to_station: String,
        minutes: Minutes,
        fleet_size: u32,
    },
    Plan {
        plan: OrderPlan,
    },
    Offer {
        proposal: Proposal,
    },
    Verdict {
        proposal_id: String,
    },
    Refusal {
        order_id: String,
        reason: String,
    },
    Commit {
        order_id: String,
        entries: Vec<ScheduleEntry>,
        transports: Vec<TransportEntry>,
    },
    Assign {
        entries: Vec<ScheduleEntry>,
    },
    Carry {
        transports: Vec<TransportEntry>,
    },
    Status {
        status: MachineStatusRecord,
    },
    Fleet {
        transporter: u32,
        op_id: String,
        busy: bool,
    },
    Withdraw {
        order_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    /// Absent for status pushes that belong to no order negotiation.
    pub conversation_id: Option<String>,
    pub protocol: Protocol,
    pub performative: Performative,
    pub sender: AgentId,
    pub receiver: AgentId,
    pub body: Body,
    pub sent_at: Minutes,
}

impl Message {
    /// `Protocol.Performative`, the token used by the sequence checker.
    pub fn token(&self) -> String {
        format!("{:?}.{:?}", self.protocol, self.performative)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConversationState {
    Notified,
    Queried,
    BidsCollected,
    Proposed,
    Confirmed,
    Rejected,
    Committed,
}

impl ConversationState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            ConversationState::Committed | ConversationState::Rejected
        )
    }
}

/// Conversation state edges. Besides the main line, a cell that finds no
/// capacity ends the conversation right after collecting bids, and a
/// confirmed proposal that can no longer be placed is rejected.
pub fn conversation_transition_allowed(from: ConversationState, to: ConversationState) -> bool {
    use ConversationState::*;
    matches!(
        (from, to),
        (Notified, Queried)
            | (Queried, BidsCollected)
            | (BidsCollected, Proposed)
            | (Proposed, Confirmed)
            | (Proposed, Rejected)
            | (Confirmed, Committed)
            | (BidsCollected, Rejected)
            | (Confirmed, Rejected)
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub conversation_id: String,
    pub state: ConversationState,
    pub subject: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuntimeError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("{protocol:?} is not wired between {from:?} and {to:?}")]
    IllegalWiring {
        protocol: Protocol,
        from: Role,
        to: Role,
    },
    #[error("spawn refused: {0}")]
    SpawnRefused(String),
    #[error("unknown conversation {0}")]
    UnknownConversation(String),
    #[error("conversation {id} cannot move from {from:?} to {to:?}")]
    IllegalTransition {
        id: String,
        from: ConversationState,
        to: ConversationState,
    },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Presence {
    Active,
    Despawned,
}

/// Registry, wiring checks and conversations. Agents themselves are owned by
/// the engine; the runtime only knows who exists.
#[derive(Debug, Clone, Default)]
pub struct Runtime {
    pub latency: Minutes,
    agents: BTreeMap<AgentId, Presence>,
    conversations: BTreeMap<String, Conversation>,
}

impl Runtime {
    pub fn new(latency: Minutes) -> Self {
        Self {
            latency,
            ..Default::default()
        }
    }

    pub fn register(&mut self, id: AgentId) {
        self.agents.insert(id, Presence::Active);
    }

    pub fn is_active(&self, id: &AgentId) -> bool {
        self.agents.get(id) == Some(&Presence::Active)
    }

    /// Number of live agents.
    pub fn agent_count(&self) -> usize {
        self.agents
            .values()
            .filter(|p| **p == Presence::Active)
            .count()
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentId> {
        self.agents
            .iter()
            .filter(|(_, p)| **p == Presence::Active)
            .map(|(id, _)| id)
    }

    pub fn check_wiring(&self, msg: &Message) -> Result<(), RuntimeError> {
        for id in [&msg.sender, &msg.receiver] {
            if !self.agents.contains_key(id) {
                return Err(RuntimeError::UnknownAgent(id.clone()));
            }
        }
        if !wiring_allows(msg.protocol, msg.sender.role, msg.receiver.role) {
            return Err(RuntimeError::IllegalWiring {
                protocol: msg.protocol,
                from: msg.sender.role,
                to: msg.receiver.role,
            });
        }
        Ok(())
    }

    /// Queues `msg` for delivery at `now + latency`. An order notice opens its
    /// conversation in state `Notified`. Same-pair messages keep send order
    /// because latency is constant and the kernel breaks ties by insertion.
    pub fn send<P: From<Message>>(
        &mut self,
        kernel: &mut Kernel<P>,
        msg: Message,
    ) -> Result<u64, RuntimeError> {
        self.check_wiring(&msg)?;
        if let (Protocol::Order, Performative::Inform, Some(cid), Body::NewOrder { order }) = (
            msg.protocol,
            msg.performative,
            &msg.conversation_id,
            &msg.body,
        ) {
            self.conversations
                .entry(cid.clone())
                .or_insert_with(|| Conversation {
                    conversation_id: cid.clone(),
                    state: ConversationState::Notified,
                    subject: order.order_id.clone(),
                });
        }
        let at = kernel.now() + self.latency;
        Ok(kernel.push(at, EventKind::MessageDelivery, P::from(msg))?)
    }

    pub fn conversation(&self, id: &str) -> Option<&Conversation> {
        self.conversations.get(id)
    }

    pub fn conversations(&self) -> impl Iterator<Item = &Conversation> {
        self.conversations.values()
    }

    pub fn transition(
        &mut self,
        id: &str,
        to: ConversationState,
    ) -> Result<ConversationState, RuntimeError> {
        let c = self
            .conversations
            .get_mut(id)
            .ok_or_else(|| RuntimeError::UnknownConversation(id.to_string()))?;
        if !conversation_transition_allowed(c.state, to) {
            return Err(RuntimeError::IllegalTransition {
                id: id.to_string(),
                from: c.state,
                to,
            });
        }
        let from = c.state;
        c.state = to;
        Ok(from)
    }

    /// Registers a tracker for `job_id`, on behalf of the shop manager, once
    /// the order's conversation is confirmed.
    pub fn spawn_job_tracker(
        &mut self,
        parent: &AgentId,
        job_id: &str,
        conversation_id: &str,
    ) -> Result<AgentId, RuntimeError> {
        if parent.role != Role::ShopManager || !self.is_active(parent) {
            return Err(RuntimeError::SpawnRefused(format!(
                "{parent} may not spawn job trackers"
            )));
        }
        match self.conversations.get(conversation_id) {
            Some(c) if c.state == ConversationState::Confirmed => {}
            Some(c) => {
                return Err(RuntimeError::SpawnRefused(format!(
                    "conversation {conversation_id} is {:?}",
                    c.state
                )));
            }
            None => {
                return Err(RuntimeError::UnknownConversation(
                    conversation_id.to_string(),
                ))
            }
        }
        let id = AgentId::new(Role::JobTracker, job_id);
        if self.is_active(&id) {
            return Err(RuntimeError::SpawnRefused(format!("{id} already running")));
        }
        self.agents.insert(id.clone(), Presence::Active);
        Ok(id)
    }

    pub fn despawn(&mut self, id: &AgentId) {
        if let Some(p) = self.agents.get_mut(id) {
            *p = Presence::Despawned;
        }
    }
}
