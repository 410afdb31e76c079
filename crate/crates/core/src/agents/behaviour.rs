//! Agent behaviours as step functions: each handler reads an [`Env`] view of
//! the shop and returns the messages to send plus the effects the engine must
//! apply. Agents never touch each other's state.

use std::collections::{BTreeMap, VecDeque};

use crate::agents::{
    bid_against, cell_feasibility, manager_decide, Bid, Decision, MachineStatusRecord,
    ManagerPolicy, NegotiationRecord, Proposal,
};
use crate::domain::{
    expand_order_in, Factory, Job, Minutes, Order, ProductModel, Schedule, ScheduleEntry,
    TransportEntry,
};
use crate::runtime::{AgentId, Body, ConversationState, Message, Performative, Protocol, Role};
use crate::scheduler::planning::{Insertion, PlanningState};
use crate::scheduler::OrderPlan;

/// Read-only view of the shop handed to agents.
#[derive(Clone, Copy)]
pub struct Env<'a> {
    pub now: Minutes,
    pub factory: &'a Factory,
    pub models: &'a [ProductModel],
    pub schedule: &'a Schedule,
    /// Pending proposals' placements, keyed by order id.
    pub reservations: &'a BTreeMap<String, OrderPlan>,
    pub horizon: Minutes,
}

impl<'a> Env<'a> {
    /// Planning state over committed work and all reservations.
    pub fn planning_state(&self) -> PlanningState<'a> {
        let mut st = PlanningState::from_schedule(
            self.factory,
            self.schedule,
            self.now,
            self.horizon,
            Insertion::EarliestGap,
        );
        for plan in self.reservations.values() {
            st.add_entries(&plan.entries);
            st.add_transports(&plan.transports);
        }
        st
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    Transition {
        conversation_id: String,
        state: ConversationState,
    },
    Reserve(OrderPlan),
    Release {
        order_id: String,
    },
    Defer(Proposal),
    Commit {
        conversation_id: String,
        proposal_id: String,
        order_id: String,
    },
    OrderRejected {
        order_id: String,
        reason: String,
    },
    Negotiated(Vec<NegotiationRecord>),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Outbox {
    pub messages: Vec<Message>,
    pub effects: Vec<Effect>,
}

impl Outbox {
    fn send(&mut self, msg: Message) {
        self.messages.push(msg);
    }

    fn effect(&mut self, e: Effect) {
        self.effects.push(e);
    }
}

fn reply(
    to: &Message,
    me: &AgentId,
    performative: Performative,
    body: Body,
    now: Minutes,
) -> Message {
    Message {
        conversation_id: to.conversation_id.clone(),
        protocol: to.protocol,
        performative,
        sender: me.clone(),
        receiver: to.sender.clone(),
        body,
        sent_at: now,
    }
}

fn message(
    cid: Option<&str>,
    protocol: Protocol,
    performative: Performative,
    from: &AgentId,
    to: &AgentId,
    body: Body,
    now: Minutes,
) -> Message {
    Message {
        conversation_id: cid.map(str::to_string),
        protocol,
        performative,
        sender: from.clone(),
        receiver: to.clone(),
        body,
        sent_at: now,
    }
}

pub fn conversation_id_for(order_id: &str) -> String {
    format!("c-{order_id}")
}

/// Customer-facing agent: announces orders and takes the confirm decision.
#[derive(Debug, Clone)]
pub struct ManagerAgent {
    pub id: AgentId,
    pub shop: AgentId,
    pub policy: ManagerPolicy,
    orders: BTreeMap<String, Order>,
}

impl ManagerAgent {
    pub fn new(shop: AgentId, policy: ManagerPolicy) -> Self {
        Self {
            id: AgentId::new(Role::Manager, "manager"),
            shop,
            policy,
            orders: BTreeMap::new(),
        }
    }

    /// A new or unpredictable order reaches the manager.
    pub fn on_order(&mut self, env: &Env<'_>, order: &Order) -> Outbox {
        self.orders.insert(order.order_id.clone(), order.clone());
        let mut out = Outbox::default();
        let cid = conversation_id_for(&order.order_id);
        out.send(message(
            Some(&cid),
            Protocol::Order,
            Performative::Inform,
            &self.id,
            &self.shop,
            Body::NewOrder {
                order: order.clone(),
            },
            env.now,
        ));
        out
    }

    pub fn handle(&mut self, env: &Env<'_>, msg: &Message) -> Outbox {
        let mut out = Outbox::default();
        if let (Performative::Propose, Body::Offer { proposal }) = (msg.performative, &msg.body) {
            let Some(order) = self.orders.get(&proposal.order_id) else {
                return out;
            };
            match manager_decide(proposal, order, self.policy) {
                Decision::Confirm => out.send(self.verdict(env, proposal, true)),
                Decision::Reject => out.send(self.verdict(env, proposal, false)),
                Decision::Deferred => out.effect(Effect::Defer(proposal.clone())),
            }
        }
        out
    }

    /// Applies a decision taken outside the agent (operator or timeout).
    pub fn decide(&mut self, env: &Env<'_>, proposal: &Proposal, accept: bool) -> Outbox {
        Outbox {
            messages: vec![self.verdict(env, proposal, accept)],
            effects: vec![],
        }
    }

    fn verdict(&self, env: &Env<'_>, proposal: &Proposal, accept: bool) -> Message {
        message(
            Some(&proposal.conversation_id),
            Protocol::Order,
            if accept {
                Performative::AcceptProposal
            } else {
                Performative::RejectProposal
            },
            &self.id,
            &self.shop,
            Body::Verdict {
                proposal_id: proposal.proposal_id.clone(),
            },
            env.now,
        )
    }
}

#[derive(Debug, Clone)]
struct OpenOrder {
    order: Order,
    proposal_id: Option<String>,
}

/// Turns orders into shop queries and cell plans into proposals.
#[derive(Debug, Clone)]
pub struct ShopManagerAgent {
    pub id: AgentId,
    pub cell: AgentId,
    next_proposal: u64,
    open: BTreeMap<String, OpenOrder>,
}

impl ShopManagerAgent {
    pub fn new(cell: AgentId) -> Self {
        Self {
            id: AgentId::new(Role::ShopManager, "shop"),
            cell,
            next_proposal: 1,
            open: BTreeMap::new(),
        }
    }

    pub fn handle(&mut self, env: &Env<'_>, msg: &Message) -> Outbox {
        let mut out = Outbox::default();
        let cid = msg.conversation_id.clone().unwrap_or_default();
        match (msg.protocol, msg.performative, &msg.body) {
            (Protocol::Order, Performative::Inform, Body::NewOrder { order }) => {
                match expand_order_in(order, env.models, env.factory) {
                    Ok(jobs) => {
                        self.open.insert(
                            order.order_id.clone(),
                            OpenOrder {
                                order: order.clone(),
                                proposal_id: None,
                            },
                        );
                        out.send(message(
                            Some(&cid),
                            Protocol::Shop,
                            Performative::Query,
                            &self.id,
                            &self.cell,
                            Body::ShopQuery {
                                order: order.clone(),
                                jobs,
                            },
                            env.now,
                        ));
                        out.effect(Effect::Transition {
                            conversation_id: cid,
                            state: ConversationState::Queried,
                        });
                    }
                    Err(e) => {
                        out.send(reply(
                            msg,
                            &self.id,
                            Performative::Refuse,
                            Body::Refusal {
                                order_id: order.order_id.clone(),
                                reason: e.to_string(),
                            },
                            env.now,
                        ));
                        out.effect(Effect::OrderRejected {
                            order_id: order.order_id.clone(),
                            reason: e.to_string(),
                        });
                    }
                }
            }
            (Protocol::Shop, Performative::Propose, Body::Plan { plan }) => {
                let Some(open) = self.open.get_mut(&plan.order_id) else {
                    return out;
                };
                let pid = format!("p{}", self.next_proposal);
                self.next_proposal += 1;
                open.proposal_id = Some(pid.clone());
                let proposal = Proposal::from_plan(pid, cid.clone(), plan, open.order.due_date);
                out.send(message(
                    Some(&cid),
                    Protocol::Order,
                    Performative::Propose,
                    &self.id,
                    &AgentId::new(Role::Manager, "manager"),
                    Body::Offer { proposal },
                    env.now,
                ));
                out.effect(Effect::Transition {
                    conversation_id: cid,
                    state: ConversationState::Proposed,
                });
            }
            (Protocol::Shop, Performative::Refuse, Body::Refusal { order_id, reason }) => {
                self.open.remove(order_id);
                out.send(message(
                    Some(&cid),
                    Protocol::Order,
                    Performative::Refuse,
                    &self.id,
                    &AgentId::new(Role::Manager, "manager"),
                    Body::Refusal {
                        order_id: order_id.clone(),
                        reason: reason.clone(),
                    },
                    env.now,
                ));
                out.effect(Effect::Transition {
                    conversation_id: cid,
                    state: ConversationState::Rejected,
                });
                out.effect(Effect::OrderRejected {
                    order_id: order_id.clone(),
                    reason: reason.clone(),
                });
            }
            (Protocol::Order, Performative::AcceptProposal, Body::Verdict { proposal_id }) => {
                if let Some((order_id, _)) = self
                    .open
                    .iter()
                    .find(|(_, o)| o.proposal_id.as_deref() == Some(proposal_id))
                {
                    out.effect(Effect::Commit {
                        conversation_id: cid,
                        proposal_id: proposal_id.clone(),
                        order_id: order_id.clone(),
                    });
                }
            }
            (Protocol::Order, Performative::RejectProposal, Body::Verdict { proposal_id }) => {
                let found = self
                    .open
                    .iter()
                    .find(|(_, o)| o.proposal_id.as_deref() == Some(proposal_id))
                    .map(|(k, _)| k.clone());
                if let Some(order_id) = found {
                    self.open.remove(&order_id);
                    out.send(message(
                        Some(&cid),
                        Protocol::Shop,
                        Performative::RejectProposal,
                        &self.id,
                        &self.cell,
                        Body::Withdraw {
                            order_id: order_id.clone(),
                        },
                        env.now,
                    ));
                    out.effect(Effect::Transition {
                        conversation_id: cid,
                        state: ConversationState::Rejected,
                    });
                    out.effect(Effect::OrderRejected {
                        order_id,
                        reason: "rejected by manager".into(),
                    });
                }
            }
            _ => {}
        }
        out
    }

    /// After the engine committed the order: tell the cell to dispatch it.
    pub fn committed(&mut self, env: &Env<'_>, conversation_id: &str, plan: &OrderPlan) -> Outbox {
        self.open.remove(&plan.order_id);
        let mut out = Outbox::default();
        out.send(message(
            Some(conversation_id),
            Protocol::Shop,
            Performative::Confirm,
            &self.id,
            &self.cell,
            Body::Commit {
                order_id: plan.order_id.clone(),
                entries: plan.entries.clone(),
                transports: plan.transports.clone(),
            },
            env.now,
        ));
        out
    }

    pub fn open_orders(&self) -> usize {
        self.open.len()
    }
}

#[derive(Debug, Clone)]
struct Negotiation {
    conversation_id: String,
    order: Order,
    jobs: Vec<Job>,
    awaiting: usize,
    bids: BTreeMap<String, Vec<Bid>>,
}

/// Coordinates machine and transport negotiation for one order at a time.
#[derive(Debug, Clone)]
pub struct CellAgent {
    pub id: AgentId,
    pub mhs: AgentId,
    queue: VecDeque<Message>,
    active: Option<Negotiation>,
    pub records: Vec<NegotiationRecord>,
}

impl CellAgent {
    pub fn new(mhs: AgentId) -> Self {
        Self {
            id: AgentId::new(Role::Cell, "cell"),
            mhs,
            queue: VecDeque::new(),
            active: None,
            records: vec![],
        }
    }

    pub fn handle(&mut self, env: &Env<'_>, msg: &Message) -> Outbox {
        let mut out = Outbox::default();
        match (msg.protocol, msg.performative, &msg.body) {
            (Protocol::Shop, Performative::Query, Body::ShopQuery { .. }) => {
                self.queue.push_back(msg.clone());
                if self.active.is_none() {
                    self.start_next(env, &mut out);
                }
            }
            (Protocol::MachineNegotiation, Performative::Propose, Body::Bids { bids, .. }) => {
                if let Some(n) = self
                    .active
                    .as_mut()
                    .filter(|n| Some(&n.conversation_id) == msg.conversation_id.as_ref())
                {
                    for b in bids {
                        n.bids.entry(b.op_id.clone()).or_default().push(b.clone());
                    }
                    n.awaiting -= 1;
                }
                self.maybe_finish(env, &mut out);
            }
            (Protocol::MHsNegotiation, Performative::Propose, Body::LegOffer { .. }) => {
                if let Some(n) = self
                    .active
                    .as_mut()
                    .filter(|n| Some(&n.conversation_id) == msg.conversation_id.as_ref())
                {
                    n.awaiting -= 1;
                }
                self.maybe_finish(env, &mut out);
            }
            (
                Protocol::Shop,
                Performative::Confirm,
                Body::Commit {
                    entries,
                    transports,
                    ..
                },
            ) => {
                let mut by_machine: BTreeMap<&str, Vec<ScheduleEntry>> = BTreeMap::new();
                for e in entries {
                    by_machine
                        .entry(e.machine_id.as_str())
                        .or_default()
                        .push(e.clone());
                }
                for (m, es) in by_machine {
                    out.send(message(
                        msg.conversation_id.as_deref(),
                        Protocol::MachineNegotiation,
                        Performative::Confirm,
                        &self.id,
                        &AgentId::new(Role::SchedulerMachine, m),
                        Body::Assign { entries: es },
                        env.now,
                    ));
                }
                if !transports.is_empty() {
                    out.send(message(
                        msg.conversation_id.as_deref(),
                        Protocol::MHsNegotiation,
                        Performative::Confirm,
                        &self.id,
                        &self.mhs,
                        Body::Carry {
                            transports: transports.clone(),
                        },
                        env.now,
                    ));
                }
            }
            (Protocol::Shop, Performative::RejectProposal, Body::Withdraw { order_id }) => {
                out.effect(Effect::Release {
                    order_id: order_id.clone(),
                });
            }
            _ => {}
        }
        out
    }

    fn start_next(&mut self, env: &Env<'_>, out: &mut Outbox) {
        let Some(query) = self.queue.pop_front() else {
            return;
        };
        let Body::ShopQuery { order, jobs } = &query.body else {
            return;
        };
        let cid = query.conversation_id.clone().unwrap_or_default();
        let arrival = order.release_time.max(env.now);
        let stages: Vec<_> = jobs
            .first()
            .map(|j| j.operations.iter().map(|o| o.stage).collect())
            .unwrap_or_default();
        let mut awaiting = 0;
        for &stage in &stages {
            let ops: Vec<_> = jobs
                .iter()
                .flat_map(|j| j.operations.iter().filter(|o| o.stage == stage).cloned())
                .collect();
            let Some(station) = env.factory.station_for(stage) else {
                continue;
            };
            for m in &station.machines {
                out.send(message(
                    Some(&cid),
                    Protocol::MachineNegotiation,
                    Performative::Query,
                    &self.id,
                    &AgentId::new(Role::SchedulerMachine, m.as_str()),
                    Body::OpsQuery {
                        ops: ops.clone(),
                        material_arrival: arrival,
                    },
                    env.now,
                ));
                awaiting += 1;
            }
        }
        for w in stages.windows(2) {
            let (Some(a), Some(b)) = (env.factory.station_for(w[0]), env.factory.station_for(w[1]))
            else {
                continue;
            };
            out.send(message(
                Some(&cid),
                Protocol::MHsNegotiation,
                Performative::Query,
                &self.id,
                &self.mhs,
                Body::LegQuery {
                    from_station: a.station_id.clone(),
                    to_station: b.station_id.clone(),
                },
                env.now,
            ));
            awaiting += 1;
        }
        self.active = Some(Negotiation {
            conversation_id: cid,
            order: order.clone(),
            jobs: jobs.clone(),
            awaiting,
            bids: BTreeMap::new(),
        });
        if awaiting == 0 {
            self.maybe_finish(env, out);
        }
    }

    fn maybe_finish(&mut self, env: &Env<'_>, out: &mut Outbox) {
        if self.active.as_ref().is_none_or(|n| n.awaiting > 0) {
            return;
        }
        let n = self.active.take().expect("active");
        let cid = n.conversation_id.clone();
        out.effect(Effect::Transition {
            conversation_id: cid.clone(),
            state: ConversationState::BidsCollected,
        });
        let shop = AgentId::new(Role::ShopManager, "shop");
        let mut state = env.planning_state();
        match cell_feasibility(&mut state, &n.order, &n.jobs) {
            Ok(plan) => {
                let records: Vec<NegotiationRecord> = plan
                    .entries
                    .iter()
                    .map(|e| {
                        let mut r = NegotiationRecord {
                            conversation_id: cid.clone(),
                            op_id: e.op_id.clone(),
                            bids: n.bids.get(&e.op_id).cloned().unwrap_or_default(),
                            winner: None,
                        };
                        r.award(&e.machine_id);
                        r
                    })
                    .collect();
                self.records.extend(records.iter().cloned());
                out.effect(Effect::Negotiated(records));
                out.effect(Effect::Reserve(plan.clone()));
                out.send(message(
                    Some(&cid),
                    Protocol::Shop,
                    Performative::Propose,
                    &self.id,
                    &shop,
                    Body::Plan { plan },
                    env.now,
                ));
            }
            Err(e) => {
                out.send(message(
                    Some(&cid),
                    Protocol::Shop,
                    Performative::Refuse,
                    &self.id,
                    &shop,
                    Body::Refusal {
                        order_id: n.order.order_id.clone(),
                        reason: e.to_string(),
                    },
                    env.now,
                ));
            }
        }
        self.start_next(env, out);
    }

    pub fn is_idle(&self) -> bool {
        self.active.is_none() && self.queue.is_empty()
    }
}

/// Bids on behalf of one machine and keeps its status and negotiation results.
#[derive(Debug, Clone)]
pub struct SchedulerMachineAgent {
    pub id: AgentId,
    pub resource: AgentId,
    pub status: MachineStatusRecord,
    pub results: Vec<NegotiationRecord>,
}

impl SchedulerMachineAgent {
    pub fn new(machine_id: &str) -> Self {
        Self {
            id: AgentId::new(Role::SchedulerMachine, machine_id),
            resource: AgentId::new(Role::MachineResource, machine_id),
            status: MachineStatusRecord::idle(machine_id),
            results: vec![],
        }
    }

    pub fn handle(&mut self, env: &Env<'_>, msg: &Message) -> Outbox {
        let mut out = Outbox::default();
        match (msg.protocol, msg.performative, &msg.body) {
            (
                Protocol::MachineNegotiation,
                Performative::Query,
                Body::OpsQuery {
                    ops,
                    material_arrival,
                },
            ) => {
                let state = env.planning_state();
                let mut bids = Vec::new();
                if let Some(tl) = state.machine_timeline(&self.status.machine_id) {
                    for op in ops {
                        if let Ok(b) = bid_against(
                            &self.status,
                            op,
                            (*material_arrival).max(env.now),
                            tl,
                            env.horizon,
                        ) {
                            self.results.push(NegotiationRecord {
                                conversation_id: msg.conversation_id.clone().unwrap_or_default(),
                                op_id: op.op_id.clone(),
                                bids: vec![b.clone()],
                                winner: None,
                            });
                            bids.push(b);
                        }
                    }
                }
                out.send(reply(
                    msg,
                    &self.id,
                    Performative::Propose,
                    Body::Bids {
                        bids,
                        status: self.status.clone(),
                    },
                    env.now,
                ));
            }
            (Protocol::MachineNegotiation, Performative::Confirm, Body::Assign { entries }) => {
                let cid = msg.conversation_id.clone().unwrap_or_default();
                for e in entries {
                    if let Some(r) = self
                        .results
                        .iter_mut()
                        .find(|r| r.conversation_id == cid && r.op_id == e.op_id)
                    {
                        r.award(&e.machine_id);
                    }
                }
                out.send(message(
                    msg.conversation_id.as_deref(),
                    Protocol::MachineResource,
                    Performative::Request,
                    &self.id,
                    &self.resource,
                    Body::Assign {
                        entries: entries.clone(),
                    },
                    env.now,
                ));
            }
            (Protocol::MachineResource, Performative::Inform, Body::Status { status }) => {
                self.status = status.clone();
            }
            _ => {}
        }
        out
    }
}

/// Interface to the physical machine; pushes status changes upstream.
#[derive(Debug, Clone)]
pub struct MachineResourceAgent {
    pub id: AgentId,
    pub scheduler: AgentId,
    pub assigned: Vec<String>,
}

impl MachineResourceAgent {
    pub fn new(machine_id: &str) -> Self {
        Self {
            id: AgentId::new(Role::MachineResource, machine_id),
            scheduler: AgentId::new(Role::SchedulerMachine, machine_id),
            assigned: vec![],
        }
    }

    pub fn handle(&mut self, _env: &Env<'_>, msg: &Message) -> Outbox {
        if let (Performative::Request, Body::Assign { entries }) = (msg.performative, &msg.body) {
            self.assigned
                .extend(entries.iter().map(|e| e.op_id.clone()));
        }
        Outbox::default()
    }

    pub fn push_status(&mut self, env: &Env<'_>, status: &MachineStatusRecord) -> Outbox {
        let mut out = Outbox::default();
        out.send(message(
            None,
            Protocol::MachineResource,
            Performative::Inform,
            &self.id,
            &self.scheduler,
            Body::Status {
                status: status.clone(),
            },
            env.now,
        ));
        out
    }
}

/// Answers transport queries for the cell.
#[derive(Debug, Clone)]
pub struct MHsAgent {
    pub id: AgentId,
    pub resource: AgentId,
    pub busy: BTreeMap<u32, bool>,
}

impl Default for MHsAgent {
    fn default() -> Self {
        Self::new()
    }
}

impl MHsAgent {
    pub fn new() -> Self {
        Self {
            id: AgentId::new(Role::MHs, "mhs"),
            resource: AgentId::new(Role::MHsResource, "fleet"),
            busy: BTreeMap::new(),
        }
    }

    pub fn handle(&mut self, env: &Env<'_>, msg: &Message) -> Outbox {
        let mut out = Outbox::default();
        match (msg.protocol, msg.performative, &msg.body) {
            (
                Protocol::MHsNegotiation,
                Performative::Query,
                Body::LegQuery {
                    from_station,
                    to_station,
                },
            ) => {
                let minutes = env.factory.transport.travel_time(from_station, to_station);
                out.send(reply(
                    msg,
                    &self.id,
                    Performative::Propose,
                    Body::LegOffer {
                        from_station: from_station.clone(),
                        to_station: to_station.clone(),
                        minutes,
                        fleet_size: env.factory.transport.fleet_size,
                    },
                    env.now,
                ));
            }
            (Protocol::MHsNegotiation, Performative::Confirm, Body::Carry { transports }) => {
                out.send(message(
                    msg.conversation_id.as_deref(),
                    Protocol::Resource,
                    Performative::Request,
                    &self.id,
                    &self.resource,
                    Body::Carry {
                        transports: transports.clone(),
                    },
                    env.now,
                ));
            }
            (
                Protocol::Resource,
                Performative::Inform,
                Body::Fleet {
                    transporter, busy, ..
                },
            ) => {
                self.busy.insert(*transporter, *busy);
            }
            _ => {}
        }
        out
    }
}

/// Interface to the transporter fleet.
#[derive(Debug, Clone)]
pub struct MHsResourceAgent {
    pub id: AgentId,
    pub mhs: AgentId,
    pub booked: Vec<TransportEntry>,
}

impl Default for MHsResourceAgent {
    fn default() -> Self {
        Self::new()
    }
}

impl MHsResourceAgent {
    pub fn new() -> Self {
        Self {
            id: AgentId::new(Role::MHsResource, "fleet"),
            mhs: AgentId::new(Role::MHs, "mhs"),
            booked: vec![],
        }
    }

    pub fn handle(&mut self, _env: &Env<'_>, msg: &Message) -> Outbox {
        if let (Performative::Request, Body::Carry { transports }) = (msg.performative, &msg.body) {
            self.booked.extend(transports.iter().cloned());
        }
        Outbox::default()
    }

    pub fn push_movement(
        &mut self,
        env: &Env<'_>,
        transporter: u32,
        op_id: &str,
        busy: bool,
    ) -> Outbox {
        let mut out = Outbox::default();
        out.send(message(
            None,
            Protocol::Resource,
            Performative::Inform,
            &self.id,
            &self.mhs,
            Body::Fleet {
                transporter,
                op_id: op_id.to_string(),
                busy,
            },
            env.now,
        ));
        out
    }
}

/// Follows one job from commit to its last operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobTrackerAgent {
    pub id: AgentId,
    pub job_id: String,
    pub remaining: Vec<String>,
    pub version_seen: u64,
}

impl JobTrackerAgent {
    pub fn new(id: AgentId, job: &Job, version: u64) -> Self {
        Self {
            id,
            job_id: job.job_id.clone(),
            remaining: job.operations.iter().map(|o| o.op_id.clone()).collect(),
            version_seen: version,
        }
    }

    pub fn on_commit(&mut self, version: u64) {
        self.version_seen = self.version_seen.max(version);
    }

    /// Records an op end; true once the job is finished.
    pub fn on_op_end(&mut self, op_id: &str) -> bool {
        self.remaining.retain(|o| o != op_id);
        self.remaining.is_empty()
    }
}
