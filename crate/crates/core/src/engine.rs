//! The simulated shop: kernel, agents, committed schedule and execution of
//! operations, transports, failures and repairs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::agents::behaviour::{
    CellAgent, Effect, Env, JobTrackerAgent, MHsAgent, MHsResourceAgent, MachineResourceAgent,
    ManagerAgent, Outbox, SchedulerMachineAgent, ShopManagerAgent,
};
use crate::agents::{transition_allowed, MachineState, MachineStatusRecord, Proposal};
use crate::domain::{
    expand_order_in, DeadlineClass, DomainError, Factory, Job, Minutes, Order, OrderSource,
    ProductModel, Schedule, ScheduleEntry, TimeWindow, TransportEntry,
};
use crate::kernel::{EventKind, Kernel, KernelError, RunLimit, SimEvent};
use crate::runtime::{AgentId, ConversationState, Message, Role, Runtime, RuntimeError};
use crate::scenario::{EventLog, Policy, Scenario, ScenarioError};
use crate::scheduler::planning::Insertion;
use crate::scheduler::{
    plan_initial, plan_order, repair_on_failure, OrderPlan, PlanContext, RepairStrategy,
    ScheduleError,
};

/// How the shop reacts to new orders and failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Agent negotiation, admission control, re-bidding on failure.
    Dynamic,
    /// Baseline: the initial schedule, new orders appended behind existing
    /// work without admission control, failed work right-shifted.
    StaticAppend,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "dynamic" => Some(Mode::Dynamic),
            "static" | "static-append" | "staticappend" => Some(Mode::StaticAppend),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Dynamic => "dynamic",
            Mode::StaticAppend => "static",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    OrderArrival(Order),
    MachineFailure {
        machine_id: String,
        window: TimeWindow,
    },
    MachineRepair {
        machine_id: String,
    },
    OperationStart {
        op_id: String,
        machine_id: String,
        start: Minutes,
    },
    OperationEnd {
        op_id: String,
        machine_id: String,
        start: Minutes,
    },
    TransportStart {
        op_id: String,
        transporter: u32,
        start: Minutes,
    },
    TransportEnd {
        op_id: String,
        transporter: u32,
        start: Minutes,
    },
    Deliver(Message),
    Clock(String),
    DecisionTimeout {
        proposal_id: String,
    },
}

impl From<Message> for Payload {
    fn from(m: Message) -> Self {
        Payload::Deliver(m)
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("invalid order: {0}")]
    InvalidOrder(String),
    #[error("unknown proposal {0}")]
    UnknownProposal(String),
}

#[derive(Debug, Clone)]
struct MachineRun {
    status: MachineStatusRecord,
    running: Option<(String, Minutes, Minutes)>,
    loaded: bool,
}

pub struct Engine {
    mode: Mode,
    policy: Policy,
    scenario_hash: String,
    kernel: Kernel<Payload>,
    runtime: Runtime,
    factory: Factory,
    models: Vec<ProductModel>,
    orders: BTreeMap<String, Order>,
    jobs: BTreeMap<String, Job>,
    schedule: Schedule,
    reservations: BTreeMap<String, OrderPlan>,
    manager: ManagerAgent,
    shop: ShopManagerAgent,
    cell: CellAgent,
    mhs: MHsAgent,
    fleet: MHsResourceAgent,
    schedulers: BTreeMap<String, SchedulerMachineAgent>,
    resources: BTreeMap<String, MachineResourceAgent>,
    trackers: BTreeMap<String, JobTrackerAgent>,
    machines: BTreeMap<String, MachineRun>,
    started: BTreeSet<String>,
    finished: BTreeSet<String>,
    transports_done: BTreeSet<String>,
    pending: BTreeMap<String, Proposal>,
    log: EventLog,
    accepted: BTreeSet<String>,
    rejected: BTreeSet<String>,
    broken: BTreeSet<String>,
}

macro_rules! env {
    ($s:expr) => {
        Env {
            now: $s.kernel.now(),
            factory: &$s.factory,
            models: &$s.models,
            schedule: &$s.schedule,
            reservations: &$s.reservations,
            horizon: $s.policy.horizon,
        }
    };
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

impl Engine {
    /// Builds the shop, plans initial orders at time 0 and queues the known
    /// order arrivals and failures.
    pub fn new(scenario: &Scenario, mode: Mode) -> Result<Self, EngineError> {
        scenario.validate()?;
        let policy = scenario.policy.clone();
        let mut runtime = Runtime::new(policy.message_latency);
        let cell_id = AgentId::new(Role::Cell, "cell");
        let shop = ShopManagerAgent::new(cell_id);
        let manager = ManagerAgent::new(shop.id.clone(), policy.manager);
        let mhs = MHsAgent::new();
        let cell = CellAgent::new(mhs.id.clone());
        let fleet = MHsResourceAgent::new();
        let mut schedulers = BTreeMap::new();
        let mut resources = BTreeMap::new();
        let mut machines = BTreeMap::new();
        for m in &scenario.factory.machines {
            schedulers.insert(
                m.machine_id.clone(),
                SchedulerMachineAgent::new(&m.machine_id),
            );
            resources.insert(
                m.machine_id.clone(),
                MachineResourceAgent::new(&m.machine_id),
            );
            machines.insert(
                m.machine_id.clone(),
                MachineRun {
                    status: MachineStatusRecord::idle(&m.machine_id),
                    running: None,
                    loaded: false,
                },
            );
        }
        for id in [&manager.id, &shop.id, &cell.id, &mhs.id, &fleet.id] {
            runtime.register(id.clone());
        }
        for a in schedulers.values() {
            runtime.register(a.id.clone());
        }
        for a in resources.values() {
            runtime.register(a.id.clone());
        }

        let mut engine = Engine {
            mode,
            policy,
            scenario_hash: scenario.content_hash(),
            kernel: Kernel::new(),
            runtime,
            factory: scenario.factory.clone(),
            models: scenario.models.clone(),
            orders: BTreeMap::new(),
            jobs: BTreeMap::new(),
            schedule: Schedule::default(),
            reservations: BTreeMap::new(),
            manager,
            shop,
            cell,
            mhs,
            fleet,
            schedulers,
            resources,
            trackers: BTreeMap::new(),
            machines,
            started: BTreeSet::new(),
            finished: BTreeSet::new(),
            transports_done: BTreeSet::new(),
            pending: BTreeMap::new(),
            log: EventLog::new(),
            accepted: BTreeSet::new(),
            rejected: BTreeSet::new(),
            broken: BTreeSet::new(),
        };
        engine.log.push(
            0,
            "RunStarted",
            None,
            None,
            json!({"scenario": scenario.name, "scenario_hash": engine.scenario_hash, "mode": mode.as_str(), "seed": scenario.policy.seed}),
        );

        for d in &scenario.disturbances {
            engine.kernel.push(
                d.window.start,
                EventKind::MachineFailure,
                Payload::MachineFailure {
                    machine_id: d.machine_id.clone(),
                    window: d.window,
                },
            )?;
            engine.kernel.push(
                d.window.end,
                EventKind::MachineRepair,
                Payload::MachineRepair {
                    machine_id: d.machine_id.clone(),
                },
            )?;
        }
        for o in scenario
            .orders
            .iter()
            .filter(|o| o.source == OrderSource::Dynamic)
        {
            engine.kernel.push(
                o.release_time,
                EventKind::OrderArrival,
                Payload::OrderArrival(o.clone()),
            )?;
        }

        let initial: Vec<Order> = scenario
            .orders
            .iter()
            .filter(|o| o.source == OrderSource::Initial)
            .cloned()
            .collect();
        let plan = plan_initial(
            &initial,
            &engine.models,
            &engine.factory,
            engine.policy.rule,
            engine.policy.horizon,
        )?;
        if let Some(w) = &plan.warning {
            engine
                .log
                .push(0, "Warning", None, None, json!({"message": w}));
        }
        for o in &initial {
            engine.orders.insert(o.order_id.clone(), o.clone());
        }
        for id in &plan.accepted {
            let o = &engine.orders[id];
            for j in expand_order_in(o, &engine.models, &engine.factory)? {
                engine.jobs.insert(j.job_id.clone(), j);
            }
        }
        engine.commit(
            plan.schedule.entries.clone(),
            plan.schedule.transports.clone(),
            None,
            "initial",
        )?;
        let completions = engine.schedule.order_completions();
        for id in &plan.accepted {
            let o = engine.orders[id].clone();
            engine.record_accepted(&o, completions.get(id).copied().unwrap_or(0));
        }
        for id in &plan.rejected {
            engine.rejected.insert(id.clone());
            engine.log.push(
                0,
                "OrderRejected",
                None,
                None,
                json!({"order_id": id, "reason": "not schedulable by its due date"}),
            );
        }
        Ok(engine)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn scenario_hash(&self) -> &str {
        &self.scenario_hash
    }

    pub fn now(&self) -> Minutes {
        self.kernel.now()
    }

    pub fn dispatched(&self) -> u64 {
        self.kernel.dispatched()
    }

    pub fn next_event_time(&self) -> Option<Minutes> {
        self.kernel.next_time()
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn factory(&self) -> &Factory {
        &self.factory
    }

    pub fn models(&self) -> &[ProductModel] {
        &self.models
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn runtime(&self) -> &Runtime {
        &self.runtime
    }

    pub fn orders(&self) -> impl Iterator<Item = &Order> {
        self.orders.values()
    }

    pub fn jobs(&self) -> Vec<Job> {
        self.jobs.values().cloned().collect()
    }

    pub fn accepted(&self) -> &BTreeSet<String> {
        &self.accepted
    }

    pub fn rejected(&self) -> &BTreeSet<String> {
        &self.rejected
    }

    pub fn guarantees_broken(&self) -> &BTreeSet<String> {
        &self.broken
    }

    pub fn pending_proposals(&self) -> Vec<Proposal> {
        self.pending.values().cloned().collect()
    }

    pub fn machine_statuses(&self) -> Vec<MachineStatusRecord> {
        self.machines.values().map(|m| m.status.clone()).collect()
    }

    pub fn live_trackers(&self) -> usize {
        self.trackers
            .keys()
            .filter(|j| {
                self.runtime
                    .is_active(&AgentId::new(Role::JobTracker, j.as_str()))
            })
            .count()
    }

    /// Ops of committed jobs that have not finished.
    pub fn unfinished_ops(&self) -> usize {
        self.schedule
            .entries
            .iter()
            .filter(|e| !self.finished.contains(&e.op_id))
            .count()
    }

    /// Dispatches every event up to and including `limit`.
    pub fn run_until(&mut self, limit: Minutes) -> Result<(), EngineError> {
        self.run(RunLimit::Until(limit))
    }

    fn run(&mut self, limit: RunLimit) -> Result<(), EngineError> {
        loop {
            match (self.kernel.next_time(), limit) {
                (None, _) => return Ok(()),
                (Some(t), RunLimit::Until(l)) if t > l => return Ok(()),
                _ => {}
            }
            let ev = self.kernel.pop().expect("peeked");
            self.dispatch(ev)?;
        }
    }

    /// Dispatches the single next event, if any.
    pub fn step(&mut self) -> Result<bool, EngineError> {
        match self.kernel.pop() {
            Some(ev) => {
                self.dispatch(ev)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// Lets the clock move to `t` when nothing is queued earlier.
    pub fn advance_to(&mut self, t: Minutes) {
        self.kernel.advance_to(t);
    }

    /// Batch run: dispatch to quiescence (bounded by the horizon); proposals
    /// still awaiting a decision at that point are rejected so every
    /// conversation ends.
    pub fn run_to_end(&mut self) -> Result<(), EngineError> {
        loop {
            self.run(RunLimit::Until(self.policy.horizon))?;
            let pending: Vec<String> = self.pending.keys().cloned().collect();
            if pending.is_empty() {
                return Ok(());
            }
            for pid in pending {
                self.decide(&pid, false, "run-end")?;
            }
        }
    }

    /// Queues an unpredictable order at the current instant.
    pub fn inject_order(&mut self, order: Order) -> Result<(), EngineError> {
        let mut order = order;
        order.source = OrderSource::Dynamic;
        if order.release_time < self.now() {
            order.release_time = self.now();
        }
        order.check().map_err(EngineError::InvalidOrder)?;
        if order.due_date < order.release_time {
            return Err(EngineError::InvalidOrder(
                "due_date precedes the injection instant".into(),
            ));
        }
        if self.orders.contains_key(&order.order_id) {
            return Err(EngineError::InvalidOrder(format!(
                "order id {} already used",
                order.order_id
            )));
        }
        if !self.models.iter().any(|m| m.model_id == order.model_id) {
            return Err(EngineError::InvalidOrder(format!(
                "unknown model {}",
                order.model_id
            )));
        }
        let at = order.release_time;
        self.kernel
            .push(at, EventKind::OrderArrival, Payload::OrderArrival(order))?;
        Ok(())
    }

    /// Records a clock command in the timeline.
    pub fn clock_command(&mut self, command: &str) -> Result<(), EngineError> {
        let now = self.now();
        self.kernel.push(
            now,
            EventKind::ClockCommand,
            Payload::Clock(command.to_string()),
        )?;
        Ok(())
    }

    /// Resolves a deferred proposal (operator decision or timeout).
    pub fn decide(&mut self, proposal_id: &str, accept: bool, by: &str) -> Result<(), EngineError> {
        let proposal = self
            .pending
            .remove(proposal_id)
            .ok_or_else(|| EngineError::UnknownProposal(proposal_id.to_string()))?;
        self.log.push(
            self.now(),
            "ProposalDecided",
            Some(self.manager.id.to_string()),
            Some(proposal.conversation_id.clone()),
            json!({"proposal_id": proposal_id, "decision": if accept { "confirm" } else { "reject" }, "by": by}),
        );
        let env = env!(self);
        let out = self.manager.decide(&env, &proposal, accept);
        let me = self.manager.id.clone();
        self.apply(&me, out)
    }

    fn dispatch(&mut self, ev: SimEvent<Payload>) -> Result<(), EngineError> {
        let now = ev.time;
        match ev.payload {
            Payload::OrderArrival(order) => self.on_order(order),
            Payload::MachineFailure { machine_id, window } => self.on_failure(&machine_id, window),
            Payload::MachineRepair { machine_id } => {
                let in_failure = self.factory.machine(&machine_id).is_some_and(|m| {
                    m.failure_windows
                        .iter()
                        .any(|w| w.start <= now && now < w.end)
                });
                self.log.push(
                    now,
                    "MachineRepair",
                    Some(AgentId::new(Role::MachineResource, machine_id.as_str()).to_string()),
                    None,
                    json!({"machine_id": machine_id}),
                );
                if let Some(m) = self.machines.get_mut(&machine_id) {
                    m.status.in_failure = in_failure;
                }
                self.refresh_machine(&machine_id)
            }
            Payload::OperationStart {
                op_id,
                machine_id,
                start,
            } => self.on_op_start(&op_id, &machine_id, start),
            Payload::OperationEnd {
                op_id,
                machine_id,
                start,
            } => self.on_op_end(&op_id, &machine_id, start),
            Payload::TransportStart {
                op_id,
                transporter,
                start,
            } => self.on_transport(&op_id, transporter, start, true),
            Payload::TransportEnd {
                op_id,
                transporter,
                start,
            } => self.on_transport(&op_id, transporter, start, false),
            Payload::Deliver(msg) => self.deliver(msg),
            Payload::Clock(cmd) => {
                self.log
                    .push(now, "ClockCommand", None, None, json!({"command": cmd}));
                Ok(())
            }
            Payload::DecisionTimeout { proposal_id } => {
                if self.pending.contains_key(&proposal_id) {
                    self.decide(&proposal_id, false, "timeout")?;
                }
                Ok(())
            }
        }
    }

    fn on_order(&mut self, order: Order) -> Result<(), EngineError> {
        let now = self.now();
        self.log.push(
            now,
            "OrderArrival",
            None,
            None,
            json!({"order": to_value(&order)}),
        );
        self.orders.insert(order.order_id.clone(), order.clone());
        match self.mode {
            Mode::Dynamic => {
                let env = env!(self);
                let out = self.manager.on_order(&env, &order);
                let me = self.manager.id.clone();
                self.apply(&me, out)
            }
            Mode::StaticAppend => {
                let jobs = expand_order_in(&order, &self.models, &self.factory)?;
                let mut ctx =
                    PlanContext::new(&self.factory, &self.schedule, now, self.policy.horizon);
                ctx.insertion = Insertion::AppendToTail;
                match plan_order(&ctx, &order, &jobs) {
                    Ok(plan) => {
                        for j in jobs {
                            self.jobs.insert(j.job_id.clone(), j);
                        }
                        self.commit(
                            plan.entries.clone(),
                            plan.transports.clone(),
                            Some(&order.order_id),
                            "append",
                        )?;
                        self.record_accepted(&order, plan.completion);
                    }
                    Err(e) => {
                        self.rejected.insert(order.order_id.clone());
                        self.log.push(
                            now,
                            "OrderRejected",
                            None,
                            None,
                            json!({"order_id": order.order_id, "reason": e.to_string()}),
                        );
                    }
                }
                Ok(())
            }
        }
    }

    fn record_accepted(&mut self, order: &Order, completion: Minutes) {
        self.accepted.insert(order.order_id.clone());
        self.log.push(
            self.now(),
            "OrderAccepted",
            None,
            None,
            json!({
                "order_id": order.order_id,
                "deadline_class": to_value(&order.deadline_class),
                "predicted_completion": completion,
                "predicted_tardiness": (completion - order.due_date).max(0),
            }),
        );
    }

    fn deliver(&mut self, msg: Message) -> Result<(), EngineError> {
        if !self.runtime.is_active(&msg.receiver) {
            self.log.push(
                self.now(),
                "DeadLetter",
                Some(msg.receiver.to_string()),
                msg.conversation_id.clone(),
                json!({"message": to_value(&msg)}),
            );
            return Ok(());
        }
        let env = env!(self);
        let out = match msg.receiver.role {
            Role::Manager => self.manager.handle(&env, &msg),
            Role::ShopManager => self.shop.handle(&env, &msg),
            Role::Cell => self.cell.handle(&env, &msg),
            Role::MHs => self.mhs.handle(&env, &msg),
            Role::MHsResource => self.fleet.handle(&env, &msg),
            Role::SchedulerMachine => match self.schedulers.get_mut(&msg.receiver.instance) {
                Some(a) => a.handle(&env, &msg),
                None => Outbox::default(),
            },
            Role::MachineResource => match self.resources.get_mut(&msg.receiver.instance) {
                Some(a) => a.handle(&env, &msg),
                None => Outbox::default(),
            },
            Role::JobTracker => Outbox::default(),
        };
        self.apply(&msg.receiver, out)
    }

    fn apply(&mut self, actor: &AgentId, out: Outbox) -> Result<(), EngineError> {
        let now = self.now();
        for effect in out.effects {
            match effect {
                Effect::Transition {
                    conversation_id,
                    state,
                } => self.transition(&conversation_id, state)?,
                Effect::Reserve(plan) => {
                    self.reservations.insert(plan.order_id.clone(), plan);
                }
                Effect::Release { order_id } => {
                    self.reservations.remove(&order_id);
                }
                Effect::Defer(proposal) => {
                    self.log.push(
                        now,
                        "ProposalDeferred",
                        Some(actor.to_string()),
                        Some(proposal.conversation_id.clone()),
                        json!({"proposal": to_value(&proposal)}),
                    );
                    if let Some(t) = self.policy.decision_timeout {
                        self.kernel.push(
                            now + t,
                            EventKind::ClockCommand,
                            Payload::DecisionTimeout {
                                proposal_id: proposal.proposal_id.clone(),
                            },
                        )?;
                    }
                    self.pending.insert(proposal.proposal_id.clone(), proposal);
                }
                Effect::Commit {
                    conversation_id,
                    proposal_id,
                    order_id,
                } => {
                    self.commit_order(&conversation_id, &proposal_id, &order_id)?;
                }
                Effect::OrderRejected { order_id, reason } => {
                    self.rejected.insert(order_id.clone());
                    self.log.push(
                        now,
                        "OrderRejected",
                        Some(actor.to_string()),
                        Some(crate::agents::behaviour::conversation_id_for(&order_id)),
                        json!({"order_id": order_id, "reason": reason}),
                    );
                }
                Effect::Negotiated(records) => {
                    let cid = records.first().map(|r| r.conversation_id.clone());
                    self.log.push(
                        now,
                        "NegotiationResults",
                        Some(actor.to_string()),
                        cid,
                        json!({"records": to_value(&records)}),
                    );
                }
            }
        }
        for msg in out.messages {
            self.log.push(
                now,
                "MessageSent",
                Some(msg.sender.to_string()),
                msg.conversation_id.clone(),
                json!({"message": to_value(&msg)}),
            );
            self.runtime.send(&mut self.kernel, msg)?;
        }
        Ok(())
    }

    fn transition(
        &mut self,
        conversation_id: &str,
        to: ConversationState,
    ) -> Result<(), EngineError> {
        let from = self.runtime.transition(conversation_id, to)?;
        self.log.push(
            self.now(),
            "ConversationState",
            None,
            Some(conversation_id.to_string()),
            json!({"from": to_value(&from), "to": to_value(&to)}),
        );
        Ok(())
    }

    /// True when every entry of `plan` still fits the committed schedule and
    /// the other reservations, and nothing starts in the past.
    fn plan_is_fresh(&self, plan: &OrderPlan) -> bool {
        let now = self.now();
        let mut state =
            PlanContext::new(&self.factory, &self.schedule, now, self.policy.horizon).state();
        for (id, other) in &self.reservations {
            if id != &plan.order_id {
                state.add_entries(&other.entries);
                state.add_transports(&other.transports);
            }
        }
        let machines_ok = plan.entries.iter().all(|e| {
            e.start >= now
                && state
                    .machine_timeline(&e.machine_id)
                    .is_some_and(|tl| tl.is_free(e.start, e.end))
        });
        let transports_ok = plan.transports.iter().all(|t| {
            t.start >= now
                && state
                    .transporter_timelines()
                    .get(t.transporter as usize)
                    .is_some_and(|tl| tl.is_free(t.start, t.end))
        });
        machines_ok && transports_ok
    }

    fn commit_order(
        &mut self,
        cid: &str,
        proposal_id: &str,
        order_id: &str,
    ) -> Result<(), EngineError> {
        let now = self.now();
        self.transition(cid, ConversationState::Confirmed)?;
        self.pending.remove(proposal_id);
        let order = self.orders[order_id].clone();
        let jobs = expand_order_in(&order, &self.models, &self.factory)?;
        let mut plan = match self.reservations.get(order_id) {
            Some(p) => p.clone(),
            None => return Err(EngineError::UnknownProposal(proposal_id.to_string())),
        };
        if !self.plan_is_fresh(&plan) {
            let others: Vec<ScheduleEntry> = self
                .reservations
                .iter()
                .filter(|(id, _)| *id != order_id)
                .flat_map(|(_, p)| p.entries.clone())
                .collect();
            let other_t: Vec<TransportEntry> = self
                .reservations
                .iter()
                .filter(|(id, _)| *id != order_id)
                .flat_map(|(_, p)| p.transports.clone())
                .collect();
            let mut ctx = PlanContext::new(&self.factory, &self.schedule, now, self.policy.horizon);
            ctx.reserved_entries = &others;
            ctx.reserved_transports = &other_t;
            let refreshed = plan_order(&ctx, &order, &jobs);
            let late_hard = matches!(&refreshed, Ok(p) if order.deadline_class == DeadlineClass::Hard && p.completion > order.due_date);
            match refreshed {
                Ok(p) if !late_hard => {
                    self.log.push(
                        now,
                        "ProposalRefreshed",
                        None,
                        Some(cid.to_string()),
                        json!({"order_id": order_id, "old_completion": plan.completion, "new_completion": p.completion}),
                    );
                    plan = p;
                }
                other => {
                    let reason = match other {
                        Err(e) => e.to_string(),
                        Ok(p) => format!(
                            "refreshed plan completes at {} after the hard due date {}",
                            p.completion, order.due_date
                        ),
                    };
                    self.reservations.remove(order_id);
                    self.transition(cid, ConversationState::Rejected)?;
                    self.rejected.insert(order_id.to_string());
                    self.log.push(
                        now,
                        "OrderRejected",
                        None,
                        Some(cid.to_string()),
                        json!({"order_id": order_id, "reason": reason}),
                    );
                    return Ok(());
                }
            }
        }
        self.reservations.remove(order_id);

        let version = self.schedule.version + 1;
        for j in &jobs {
            let id = self
                .runtime
                .spawn_job_tracker(&self.shop.id, &j.job_id, cid)?;
            self.log.push(
                now,
                "AgentSpawned",
                Some(id.to_string()),
                Some(cid.to_string()),
                json!({"job_id": j.job_id, "parent": self.shop.id.to_string()}),
            );
            self.trackers
                .insert(j.job_id.clone(), JobTrackerAgent::new(id, j, version));
            self.jobs.insert(j.job_id.clone(), j.clone());
        }
        self.commit(
            plan.entries.clone(),
            plan.transports.clone(),
            Some(order_id),
            "order",
        )?;
        self.transition(cid, ConversationState::Committed)?;
        self.record_accepted(&order, plan.completion);

        let env = env!(self);
        let out = self.shop.committed(&env, cid, &plan);
        let me = self.shop.id.clone();
        self.apply(&me, out)
    }

    /// Adds entries as a new schedule version and queues their execution.
    fn commit(
        &mut self,
        entries: Vec<ScheduleEntry>,
        transports: Vec<TransportEntry>,
        order_id: Option<&str>,
        reason: &str,
    ) -> Result<(), EngineError> {
        let now = self.now();
        let version = self.schedule.version + 1;
        let mut added = Vec::with_capacity(entries.len());
        for mut e in entries {
            e.version = version;
            self.kernel.push(
                e.start,
                EventKind::OperationStart,
                Payload::OperationStart {
                    op_id: e.op_id.clone(),
                    machine_id: e.machine_id.clone(),
                    start: e.start,
                },
            )?;
            added.push(e);
        }
        for t in &transports {
            self.kernel.push(
                t.start,
                EventKind::TransportStart,
                Payload::TransportStart {
                    op_id: t.op_id.clone(),
                    transporter: t.transporter,
                    start: t.start,
                },
            )?;
        }
        self.schedule.entries.extend(added.iter().cloned());
        self.schedule.transports.extend(transports.iter().cloned());
        self.schedule.version = version;
        self.schedule.normalize();
        self.log.push(
            now,
            "ScheduleCommitted",
            None,
            order_id.map(crate::agents::behaviour::conversation_id_for).filter(|_| reason == "order"),
            json!({"version": version, "reason": reason, "order_id": order_id, "entries": to_value(&added), "transports": to_value(&transports)}),
        );
        for t in self.trackers.values_mut() {
            t.on_commit(version);
        }
        let touched: BTreeSet<String> = added.iter().map(|e| e.machine_id.clone()).collect();
        for m in touched {
            self.refresh_machine(&m)?;
        }
        Ok(())
    }

    fn material_delivered(&self, op_id: &str) -> bool {
        let Some(entry) = self.schedule.entry(op_id) else {
            return false;
        };
        let Some(job) = self.jobs.get(&entry.job_id) else {
            return false;
        };
        let Some(k) = job.operations.iter().position(|o| o.op_id == op_id) else {
            return false;
        };
        if k == 0 {
            return false;
        }
        let prev = &job.operations[k - 1];
        if !self.finished.contains(&prev.op_id) {
            return false;
        }
        let arrival = match self.schedule.transport_for(op_id) {
            Some(t) => t.end,
            None => self
                .schedule
                .entry(&prev.op_id)
                .map(|e| e.end)
                .unwrap_or(Minutes::MAX),
        };
        arrival <= self.now()
    }

    /// Recomputes a machine's status from the schedule and pushes it to its
    /// scheduler agent when it changed.
    fn refresh_machine(&mut self, machine_id: &str) -> Result<(), EngineError> {
        let now = self.now();
        let mut queue: Vec<&ScheduleEntry> = self
            .schedule
            .entries_on(machine_id)
            .filter(|e| !self.started.contains(&e.op_id) && !self.finished.contains(&e.op_id))
            .collect();
        queue.sort_by(|a, b| (a.start, &a.op_id).cmp(&(b.start, &b.op_id)));
        let queued: Vec<String> = queue.iter().map(|e| e.op_id.clone()).collect();
        let Some(run) = self.machines.get(machine_id) else {
            return Ok(());
        };
        let state = if run.running.is_some() {
            MachineState::BusyWithTask
        } else if !queued.is_empty() {
            MachineState::FreeWithTask
        } else if run.loaded {
            MachineState::LoadedNoTask
        } else {
            MachineState::FreeNoTask
        };
        let busy_until = run.running.as_ref().map(|r| r.2).unwrap_or(now);
        let new = MachineStatusRecord {
            machine_id: machine_id.to_string(),
            state,
            busy_until,
            queued_ops: queued,
            in_failure: run.status.in_failure,
        };
        if new == run.status {
            return Ok(());
        }
        let old = run.status.state;
        let run = self.machines.get_mut(machine_id).expect("machine");
        run.status = new.clone();
        if state != MachineState::LoadedNoTask {
            run.loaded = false;
        }
        if old != state {
            self.log.push(
                now,
                "MachineState",
                Some(AgentId::new(Role::MachineResource, machine_id).to_string()),
                None,
                json!({"machine_id": machine_id, "from": to_value(&old), "to": to_value(&state), "legal": transition_allowed(old, state)}),
            );
        }
        if self.mode == Mode::StaticAppend {
            return Ok(());
        }
        let env = env!(self);
        let out = match self.resources.get_mut(machine_id) {
            Some(r) => r.push_status(&env, &new),
            None => Outbox::default(),
        };
        let id = AgentId::new(Role::MachineResource, machine_id);
        self.apply(&id, out)
    }

    fn on_op_start(
        &mut self,
        op_id: &str,
        machine_id: &str,
        start: Minutes,
    ) -> Result<(), EngineError> {
        let now = self.now();
        let current = self
            .schedule
            .entry(op_id)
            .filter(|e| e.machine_id == machine_id && e.start == start)
            .cloned();
        let stale =
            current.is_none() || self.started.contains(op_id) || self.finished.contains(op_id);
        let agent = Some(AgentId::new(Role::MachineResource, machine_id).to_string());
        if stale {
            self.log.push(
                now,
                "OperationStart",
                agent,
                None,
                json!({"op_id": op_id, "machine_id": machine_id, "ignored": true}),
            );
            return Ok(());
        }
        let e = current.expect("checked");
        if self.finishing_now(machine_id, &e) {
            // an end at this same instant was queued earlier; run after it
            self.kernel.push(
                now,
                EventKind::OperationStart,
                Payload::OperationStart {
                    op_id: op_id.to_string(),
                    machine_id: machine_id.to_string(),
                    start,
                },
            )?;
            return Ok(());
        }
        self.log.push(
            now,
            "OperationStart",
            agent,
            None,
            json!({"op_id": op_id, "machine_id": machine_id, "end": e.end}),
        );
        self.started.insert(op_id.to_string());
        if let Some(run) = self.machines.get_mut(machine_id) {
            run.running = Some((op_id.to_string(), e.start, e.end));
        }
        self.kernel.push(
            e.end,
            EventKind::OperationEnd,
            Payload::OperationEnd {
                op_id: op_id.to_string(),
                machine_id: machine_id.to_string(),
                start,
            },
        )?;
        self.notify_tracker(&e.job_id, "OperationStarted", op_id);
        self.refresh_machine(machine_id)
    }

    /// True when the machine or the job's previous op is still running but
    /// due to end at the current instant.
    fn finishing_now(&self, machine_id: &str, entry: &ScheduleEntry) -> bool {
        let now = self.now();
        let ends_now = |m: &str, op: Option<&str>| {
            self.machines
                .get(m)
                .and_then(|r| r.running.as_ref())
                .is_some_and(|(o, _, end)| *end <= now && op.is_none_or(|op| op == o))
        };
        if ends_now(machine_id, None) {
            return true;
        }
        let Some(job) = self.jobs.get(&entry.job_id) else {
            return false;
        };
        let Some(k) = job.operations.iter().position(|o| o.op_id == entry.op_id) else {
            return false;
        };
        if k == 0 || self.finished.contains(&job.operations[k - 1].op_id) {
            return false;
        }
        let prev = &job.operations[k - 1].op_id;
        self.schedule
            .entry(prev)
            .is_some_and(|p| ends_now(&p.machine_id, Some(prev)))
    }

    fn on_op_end(
        &mut self,
        op_id: &str,
        machine_id: &str,
        start: Minutes,
    ) -> Result<(), EngineError> {
        let now = self.now();
        let agent = Some(AgentId::new(Role::MachineResource, machine_id).to_string());
        let running = self
            .machines
            .get(machine_id)
            .and_then(|m| m.running.clone());
        if running
            .as_ref()
            .is_none_or(|(op, s, _)| op != op_id || *s != start)
        {
            self.log.push(
                now,
                "OperationEnd",
                agent,
                None,
                json!({"op_id": op_id, "machine_id": machine_id, "ignored": true}),
            );
            return Ok(());
        }
        self.log.push(
            now,
            "OperationEnd",
            agent,
            None,
            json!({"op_id": op_id, "machine_id": machine_id}),
        );
        self.started.remove(op_id);
        self.finished.insert(op_id.to_string());
        if let Some(run) = self.machines.get_mut(machine_id) {
            run.running = None;
        }
        let job_id = self
            .schedule
            .entry(op_id)
            .map(|e| e.job_id.clone())
            .unwrap_or_default();
        self.refresh_machine(machine_id)?;
        if let Some(t) = self.trackers.get_mut(&job_id) {
            let done = t.on_op_end(op_id);
            let id = t.id.clone();
            if done && self.runtime.is_active(&id) {
                self.runtime.despawn(&id);
                self.log.push(
                    now,
                    "AgentDespawned",
                    Some(id.to_string()),
                    None,
                    json!({"job_id": job_id}),
                );
            }
        }
        Ok(())
    }

    /// Lifecycle notice for a job's tracker; a tracker that already finished
    /// gets a dead letter instead.
    fn notify_tracker(&mut self, job_id: &str, what: &str, op_id: &str) {
        let Some(t) = self.trackers.get(job_id) else {
            return;
        };
        if !self.runtime.is_active(&t.id) {
            self.log.push(
                self.now(),
                "DeadLetter",
                Some(t.id.to_string()),
                None,
                json!({"notice": what, "op_id": op_id}),
            );
        }
    }

    fn on_transport(
        &mut self,
        op_id: &str,
        transporter: u32,
        start: Minutes,
        starting: bool,
    ) -> Result<(), EngineError> {
        let now = self.now();
        let entry = self
            .schedule
            .transport_for(op_id)
            .filter(|t| t.transporter == transporter && t.start == start)
            .cloned();
        let kind = if starting {
            "TransportStart"
        } else {
            "TransportEnd"
        };
        let agent = Some(self.fleet.id.to_string());
        let stale = entry.is_none() || (starting && self.transports_done.contains(op_id));
        if stale {
            self.log.push(
                now,
                kind,
                agent,
                None,
                json!({"op_id": op_id, "transporter": transporter, "ignored": true}),
            );
            return Ok(());
        }
        let t = entry.expect("checked");
        self.log.push(
            now,
            kind,
            agent,
            None,
            json!({"op_id": op_id, "transporter": transporter}),
        );
        if starting {
            self.transports_done.insert(op_id.to_string());
            self.kernel.push(
                t.end,
                EventKind::TransportEnd,
                Payload::TransportEnd {
                    op_id: op_id.to_string(),
                    transporter,
                    start,
                },
            )?;
        }
        if self.mode == Mode::StaticAppend {
            return Ok(());
        }
        let env = env!(self);
        let out = self.fleet.push_movement(&env, transporter, op_id, starting);
        let id = self.fleet.id.clone();
        self.apply(&id, out)
    }

    fn on_failure(&mut self, machine_id: &str, window: TimeWindow) -> Result<(), EngineError> {
        let now = self.now();
        let agent = Some(AgentId::new(Role::MachineResource, machine_id).to_string());
        self.log.push(
            now,
            "MachineFailure",
            agent,
            None,
            json!({"machine_id": machine_id, "window": to_value(&window)}),
        );
        let strategy = match self.mode {
            Mode::Dynamic => RepairStrategy::Rebid,
            Mode::StaticAppend => RepairStrategy::RightShift,
        };
        let jobs: Vec<Job> = self.jobs.values().cloned().collect();
        let orders: Vec<Order> = self.orders.values().cloned().collect();
        let outcome = repair_on_failure(
            &self.schedule,
            machine_id,
            window,
            &self.factory,
            &jobs,
            &orders,
            now,
            self.policy.horizon,
            strategy,
        )?;
        if let Some(m) = self.factory.machine_mut(machine_id) {
            m.add_failure_window(window);
        }
        if let Some(run) = self.machines.get_mut(machine_id) {
            run.status.in_failure = true;
        }

        let before = self.schedule.clone();
        for op in &outcome.aborted {
            self.started.remove(op);
            if let Some(run) = self.machines.get_mut(machine_id) {
                if run.running.as_ref().is_some_and(|r| &r.0 == op) {
                    run.running = None;
                }
            }
            self.log.push(
                now,
                "OperationAborted",
                Some(AgentId::new(Role::MachineResource, machine_id).to_string()),
                None,
                json!({"op_id": op, "machine_id": machine_id}),
            );
        }
        self.schedule = outcome.schedule;
        let version = self.schedule.version;
        let mut moved_entries = Vec::new();
        let mut moved_transports = Vec::new();
        let mut touched: BTreeSet<String> = BTreeSet::from([machine_id.to_string()]);
        for op in &outcome.moved {
            if let Some(e) = self.schedule.entry(op).cloned() {
                self.kernel.push(
                    e.start,
                    EventKind::OperationStart,
                    Payload::OperationStart {
                        op_id: e.op_id.clone(),
                        machine_id: e.machine_id.clone(),
                        start: e.start,
                    },
                )?;
                touched.insert(e.machine_id.clone());
                moved_entries.push(e);
            }
            if let Some(old) = before.entry(op) {
                touched.insert(old.machine_id.clone());
            }
            if let Some(t) = self.schedule.transport_for(op).cloned() {
                if before.transport_for(op) != Some(&t) {
                    self.transports_done.remove(op);
                    self.kernel.push(
                        t.start,
                        EventKind::TransportStart,
                        Payload::TransportStart {
                            op_id: t.op_id.clone(),
                            transporter: t.transporter,
                            start: t.start,
                        },
                    )?;
                    moved_transports.push(t);
                }
            }
        }
        self.log.push(
            now,
            "ScheduleCommitted",
            None,
            None,
            json!({"version": version, "reason": "repair", "machine_id": machine_id, "entries": to_value(&moved_entries), "transports": to_value(&moved_transports)}),
        );
        for t in self.trackers.values_mut() {
            t.on_commit(version);
        }

        // machines that lost delivered work are left loaded
        for op in &outcome.moved {
            let (Some(old), Some(new)) = (before.entry(op), self.schedule.entry(op)) else {
                continue;
            };
            if old.machine_id != new.machine_id
                && (outcome.aborted.contains(op) || self.material_delivered(op))
            {
                if let Some(run) = self.machines.get_mut(&old.machine_id) {
                    run.loaded = true;
                }
            }
        }
        for m in touched {
            self.refresh_machine(&m)?;
        }

        for order_id in &outcome.broken_guarantees {
            if self.broken.insert(order_id.clone()) {
                let completion = self
                    .schedule
                    .order_completions()
                    .get(order_id)
                    .copied()
                    .unwrap_or(0);
                let due = self.orders.get(order_id).map(|o| o.due_date).unwrap_or(0);
                self.log.push(
                    now,
                    "GuaranteeBrokenByDisturbance",
                    None,
                    None,
                    json!({"order_id": order_id, "machine_id": machine_id, "completion": completion, "due_date": due}),
                );
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::*;
    use crate::scenario::{generate_scenario, Disturbance, GeneratorParams};

    fn small_scenario() -> Scenario {
        let f = crate::testutil::flow_factory(&[1, 1], 1);
        Scenario {
            name: "small".into(),
            factory: f,
            models: vec![crate::testutil::model_with("m", &[3, 2])],
            orders: vec![],
            disturbances: vec![],
            policy: Policy::default(),
        }
    }

    fn order(
        id: &str,
        release: Minutes,
        due: Minutes,
        class: DeadlineClass,
        source: OrderSource,
    ) -> Order {
        Order {
            order_id: id.into(),
            model_id: "m".into(),
            quantity: 1,
            release_time: release,
            due_date: due,
            deadline_class: class,
            source,
            period: None,
        }
    }

    #[test]
    fn empty_scenario_starts_at_version_one() {
        let mut e = Engine::new(&small_scenario(), Mode::Dynamic).unwrap();
        assert_eq!(e.schedule().version, 1);
        e.run_to_end().unwrap();
        assert_eq!(e.schedule().makespan(), 0);
    }

    #[test]
    fn dynamic_order_is_negotiated_and_executed() {
        let mut s = small_scenario();
        s.orders.push(order(
            "D1",
            5,
            50,
            DeadlineClass::Hard,
            OrderSource::Dynamic,
        ));
        let mut e = Engine::new(&s, Mode::Dynamic).unwrap();
        e.run_to_end().unwrap();
        assert!(e.accepted().contains("D1"));
        assert_eq!(e.schedule().version, 2);
        assert_eq!(
            e.runtime().conversation("c-D1").unwrap().state,
            ConversationState::Committed
        );
        assert_eq!(e.unfinished_ops(), 0);
        assert_eq!(e.live_trackers(), 0);
        // cut [5,8), transport 1, weld [9,11)
        assert_eq!(e.schedule().makespan(), 11);
        assert!(e.log().records().iter().any(|r| r.kind == "AgentSpawned"));
        assert!(e.log().records().iter().any(|r| r.kind == "AgentDespawned"));
    }

    #[test]
    fn late_hard_order_is_rejected() {
        let mut s = small_scenario();
        s.orders
            .push(order("D1", 5, 8, DeadlineClass::Hard, OrderSource::Dynamic));
        let mut e = Engine::new(&s, Mode::Dynamic).unwrap();
        e.run_to_end().unwrap();
        assert!(e.rejected().contains("D1"));
        assert_eq!(e.schedule().version, 1);
        assert_eq!(
            e.runtime().conversation("c-D1").unwrap().state,
            ConversationState::Rejected
        );
    }

    #[test]
    fn interactive_proposals_wait_for_a_decision() {
        let mut s = small_scenario();
        s.policy.manager = crate::agents::ManagerPolicy::Interactive;
        s.orders.push(order(
            "D1",
            5,
            50,
            DeadlineClass::Soft,
            OrderSource::Dynamic,
        ));
        let mut e = Engine::new(&s, Mode::Dynamic).unwrap();
        e.run_until(5).unwrap();
        let pending = e.pending_proposals();
        assert_eq!(pending.len(), 1);
        assert!(matches!(
            e.decide("nope", true, "test"),
            Err(EngineError::UnknownProposal(_))
        ));
        e.decide(&pending[0].proposal_id, true, "test").unwrap();
        e.run_until(5).unwrap();
        assert_eq!(e.schedule().version, 2);
        assert_eq!(
            e.runtime().conversation("c-D1").unwrap().state,
            ConversationState::Committed
        );
    }

    #[test]
    fn decision_timeout_rejects() {
        let mut s = small_scenario();
        s.policy.manager = crate::agents::ManagerPolicy::Interactive;
        s.policy.decision_timeout = Some(10);
        s.orders.push(order(
            "D1",
            5,
            50,
            DeadlineClass::Soft,
            OrderSource::Dynamic,
        ));
        let mut e = Engine::new(&s, Mode::Dynamic).unwrap();
        e.run_until(20).unwrap();
        assert!(e.pending_proposals().is_empty());
        assert!(e.rejected().contains("D1"));
    }

    #[test]
    fn failure_mid_operation_aborts_and_reruns() {
        let mut s = small_scenario();
        s.orders.push(order(
            "I1",
            0,
            50,
            DeadlineClass::Hard,
            OrderSource::Initial,
        ));
        s.disturbances.push(Disturbance {
            machine_id: "M11".into(),
            window: TimeWindow::new(1, 6),
        });
        let mut e = Engine::new(&s, Mode::Dynamic).unwrap();
        e.run_to_end().unwrap();
        let cut = e.schedule().entry("I1#1.cutting").unwrap();
        assert_eq!((cut.start, cut.end), (6, 9));
        assert!(e
            .log()
            .records()
            .iter()
            .any(|r| r.kind == "OperationAborted"));
        assert_eq!(e.unfinished_ops(), 0);
        let v = validate_schedule(e.schedule(), e.factory(), &e.jobs(), &e.factory().transport);
        assert!(v.is_empty(), "{v:?}");
    }

    #[test]
    fn static_append_accepts_everything() {
        let mut s = small_scenario();
        s.orders
            .push(order("D1", 5, 8, DeadlineClass::Hard, OrderSource::Dynamic));
        let mut e = Engine::new(&s, Mode::StaticAppend).unwrap();
        e.run_to_end().unwrap();
        assert!(e.accepted().contains("D1"));
        assert!(!e.log().records().iter().any(|r| r.kind == "MessageSent"));
    }

    #[test]
    fn generated_runs_are_valid_and_complete() {
        let p = GeneratorParams {
            initial_orders: 4,
            dynamic_orders: 8,
            failures: 3,
            arrival_span: 600,
            hard_percent: 40,
            max_quantity: 2,
        };
        for seed in 0..5 {
            let s = generate_scenario(seed, &p);
            for mode in [Mode::Dynamic, Mode::StaticAppend] {
                let mut e = Engine::new(&s, mode).unwrap();
                e.run_to_end().unwrap();
                assert_eq!(e.unfinished_ops(), 0, "seed {seed} {mode:?}");
                let v =
                    validate_schedule(e.schedule(), e.factory(), &e.jobs(), &e.factory().transport);
                assert!(v.is_empty(), "seed {seed} {mode:?}: {v:?}");
                assert!(e.runtime().conversations().all(|c| c.state.is_terminal()));
                for r in e
                    .log()
                    .records()
                    .iter()
                    .filter(|r| r.kind == "MachineState")
                {
                    assert_eq!(r.payload["legal"], true, "{r:?}");
                }
            }
        }
    }
}
