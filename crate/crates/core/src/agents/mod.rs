//! Negotiation artifacts, the four-state machine model and the pure decision
//! functions the agents are built from. Agent behaviours live in
//! [`behaviour`].

pub mod behaviour;

use serde::{Deserialize, Serialize};

use crate::domain::{
    DeadlineClass, Factory, Job, Minutes, Operation, Order, Schedule, ScheduleEntry,
};
use crate::scheduler::planning::{bid_on_timeline, Insertion, PlanningState, Timeline};
use crate::scheduler::{OrderPlan, ScheduleError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bid {
    pub machine_id: String,
    pub op_id: String,
    pub earliest_start: Minutes,
    pub completion: Minutes,
}

/// One entry of a scheduler machine's negotiation-results database.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegotiationRecord {
    pub conversation_id: String,
    pub op_id: String,
    pub bids: Vec<Bid>,
    pub winner: Option<String>,
}

impl NegotiationRecord {
    pub fn award(&mut self, machine_id: &str) -> bool {
        if self.bids.iter().any(|b| b.machine_id == machine_id) {
            self.winner = Some(machine_id.to_string());
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MachineState {
    BusyWithTask,
    FreeWithTask,
    FreeNoTask,
    /// Material delivered, assignment revoked.
    LoadedNoTask,
}

impl MachineState {
    pub const ALL: [MachineState; 4] = [
        MachineState::BusyWithTask,
        MachineState::FreeWithTask,
        MachineState::FreeNoTask,
        MachineState::LoadedNoTask,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MachineState::BusyWithTask => "Machine is busy and has task",
            MachineState::FreeWithTask => "Machine is free and has task",
            MachineState::FreeNoTask => "Machine is free and has no task",
            MachineState::LoadedNoTask => "Machine is loaded and has no task",
        }
    }
}

/// Legal machine state transitions. Besides the enqueue/start/end/revoke
/// edges, aborts (failure mid-operation) may leave a machine free with or
/// without queued work, or loaded when the aborted op moved elsewhere.
pub fn transition_allowed(from: MachineState, to: MachineState) -> bool {
    use MachineState::*;
    matches!(
        (from, to),
        (FreeNoTask, FreeWithTask)
            | (FreeWithTask, BusyWithTask)
            | (BusyWithTask, FreeWithTask)
            | (BusyWithTask, FreeNoTask)
            | (FreeWithTask, LoadedNoTask)
            | (LoadedNoTask, BusyWithTask)
            | (LoadedNoTask, FreeWithTask)
            | (FreeWithTask, FreeNoTask)
            | (BusyWithTask, LoadedNoTask)
    )
}

/// The machine-status database row kept by a scheduler machine agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineStatusRecord {
    pub machine_id: String,
    pub state: MachineState,
    pub busy_until: Minutes,
    pub queued_ops: Vec<String>,
    pub in_failure: bool,
}

impl MachineStatusRecord {
    pub fn idle(machine_id: &str) -> Self {
        Self {
            machine_id: machine_id.to_string(),
            state: MachineState::FreeNoTask,
            busy_until: 0,
            queued_ops: vec![],
            in_failure: false,
        }
    }

    /// Checks the record's own invariants at `now`.
    pub fn check(&self, now: Minutes) -> Result<(), String> {
        if self.state == MachineState::BusyWithTask && self.busy_until < now {
            return Err(format!(
                "{} busy until {} < now {}",
                self.machine_id, self.busy_until, now
            ));
        }
        let no_task = matches!(
            self.state,
            MachineState::FreeNoTask | MachineState::LoadedNoTask
        );
        if no_task != self.queued_ops.is_empty() && self.state != MachineState::BusyWithTask {
            return Err(format!(
                "{} in {:?} with {} queued ops",
                self.machine_id,
                self.state,
                self.queued_ops.len()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub proposal_id: String,
    pub order_id: String,
    pub conversation_id: String,
    pub schedule_delta: Vec<ScheduleEntry>,
    pub predicted_completion: Minutes,
    pub due_date: Minutes,
    pub predicted_tardiness: Minutes,
}

impl Proposal {
    pub fn from_plan(
        proposal_id: String,
        conversation_id: String,
        plan: &OrderPlan,
        due_date: Minutes,
    ) -> Self {
        Self {
            proposal_id,
            order_id: plan.order_id.clone(),
            conversation_id,
            schedule_delta: plan.entries.clone(),
            predicted_completion: plan.completion,
            due_date,
            predicted_tardiness: (plan.completion - due_date).max(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManagerPolicy {
    Auto,
    Interactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Confirm,
    Reject,
    Deferred,
}

/// Timeline of one machine: failure windows plus committed entries.
pub fn machine_timeline(schedule: &Schedule, factory: &Factory, machine_id: &str) -> Timeline {
    let mut tl = Timeline::new();
    if let Some(m) = factory.machine(machine_id) {
        for w in &m.failure_windows {
            tl.insert(w.start, w.end, None);
        }
    }
    for e in schedule.entries_on(machine_id) {
        tl.insert(e.start, e.end, Some(e.op_id.clone()));
    }
    tl
}

/// A scheduler machine's bid for `op` against the committed schedule.
pub fn scheduler_machine_bid(
    status: &MachineStatusRecord,
    op: &Operation,
    material_arrival: Minutes,
    schedule: &Schedule,
    factory: &Factory,
    horizon: Minutes,
) -> Result<Bid, ScheduleError> {
    let tl = machine_timeline(schedule, factory, &status.machine_id);
    bid_against(status, op, material_arrival, &tl, horizon)
}

/// Bid against an explicit timeline (committed work plus reservations).
pub fn bid_against(
    status: &MachineStatusRecord,
    op: &Operation,
    material_arrival: Minutes,
    timeline: &Timeline,
    horizon: Minutes,
) -> Result<Bid, ScheduleError> {
    let lower = material_arrival.max(status.busy_until);
    bid_on_timeline(
        &status.machine_id,
        op,
        lower,
        timeline,
        horizon,
        Insertion::EarliestGap,
    )
    .ok_or_else(|| ScheduleError::NoCapacity {
        op_id: op.op_id.clone(),
        reason: format!("{} has no slot before the horizon", status.machine_id),
    })
}

/// Stage-chained placement of an order's jobs: stage k+1 may start once stage
/// k has completed and the part has been carried over.
pub fn cell_feasibility(
    state: &mut PlanningState<'_>,
    order: &Order,
    jobs: &[Job],
) -> Result<OrderPlan, ScheduleError> {
    let refs: Vec<&Job> = jobs.iter().collect();
    let plans = state.plan_stage_major(&refs, order.release_time)?;
    let (entries, transports) = crate::scheduler::planning::collect_plans(&plans);
    let completion = entries.iter().map(|e| e.end).max().unwrap_or(state.now);
    Ok(OrderPlan {
        order_id: order.order_id.clone(),
        entries,
        transports,
        completion,
    })
}

/// The Manager's confirm step.
pub fn manager_decide(proposal: &Proposal, order: &Order, policy: ManagerPolicy) -> Decision {
    match policy {
        ManagerPolicy::Interactive => Decision::Deferred,
        ManagerPolicy::Auto => match order.deadline_class {
            DeadlineClass::Soft => Decision::Confirm,
            DeadlineClass::Hard if proposal.predicted_tardiness == 0 => Decision::Confirm,
            DeadlineClass::Hard => Decision::Reject,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::*;
    use crate::testutil::*;

    fn status(m: &str, busy_until: Minutes) -> MachineStatusRecord {
        MachineStatusRecord {
            busy_until,
            ..MachineStatusRecord::idle(m)
        }
    }

    fn op(p: Minutes) -> Operation {
        Operation {
            op_id: "J#1.cutting".into(),
            job_id: "J#1".into(),
            stage: Stage::Cutting,
            processing_time: p,
            eligible_machines: vec!["M11".into()],
            max_wait_after: None,
        }
    }

    #[test]
    fn bid_waits_for_material() {
        let f = flow_factory(&[1], 0);
        let b = scheduler_machine_bid(&status("M11", 0), &op(4), 2, &Schedule::default(), &f, 1000)
            .unwrap();
        assert_eq!((b.earliest_start, b.completion), (2, 6));
    }

    #[test]
    fn bid_waits_for_busy_machine() {
        let f = flow_factory(&[1], 0);
        let mut st = status("M11", 10);
        st.state = MachineState::BusyWithTask;
        let b = scheduler_machine_bid(&st, &op(4), 2, &Schedule::default(), &f, 1000).unwrap();
        assert_eq!((b.earliest_start, b.completion), (10, 14));
    }

    #[test]
    fn bid_skips_failure_window() {
        let mut f = flow_factory(&[1], 0);
        f.machines[0].failure_windows.push(TimeWindow::new(5, 8));
        let b = scheduler_machine_bid(&status("M11", 3), &op(4), 0, &Schedule::default(), &f, 1000)
            .unwrap();
        assert_eq!((b.earliest_start, b.completion), (8, 12));
    }

    #[test]
    fn bid_beyond_horizon() {
        let f = flow_factory(&[1], 0);
        let r = scheduler_machine_bid(&status("M11", 0), &op(4), 0, &Schedule::default(), &f, 3);
        assert!(matches!(r, Err(ScheduleError::NoCapacity { .. })));
    }

    fn order(due: Minutes, class: DeadlineClass) -> Order {
        Order {
            order_id: "J".into(),
            model_id: "m".into(),
            quantity: 1,
            release_time: 0,
            due_date: due,
            deadline_class: class,
            source: OrderSource::Dynamic,
            period: None,
        }
    }

    #[test]
    fn chaining_adds_transport() {
        let mut f = flow_factory(&[1, 1], 0);
        f.transport.travel.push(TravelLeg {
            from: "S1".into(),
            to: "S2".into(),
            minutes: 1,
        });
        f.machines[0].failure_windows.push(TimeWindow::new(0, 2));
        let job = job_with("J#1", &f, &[4, 3]);
        let mut st = PlanningState::new(&f, 0, 1000, Insertion::EarliestGap);
        let plan = cell_feasibility(&mut st, &order(50, DeadlineClass::Soft), &[job]).unwrap();
        let weld = plan
            .entries
            .iter()
            .find(|e| e.stage == Stage::Welding)
            .unwrap();
        assert_eq!((weld.start, weld.end), (7, 10));
        assert_eq!(plan.completion, 10);
    }

    #[test]
    fn chaining_without_transport() {
        let f = flow_factory(&[1, 1], 0);
        let job = job_with("J#1", &f, &[4, 3]);
        let mut st = PlanningState::new(&f, 0, 1000, Insertion::EarliestGap);
        assert_eq!(
            cell_feasibility(&mut st, &order(50, DeadlineClass::Soft), &[job])
                .unwrap()
                .completion,
            7
        );
    }

    /// Every (cut start, weld start) pair on the tiny instance, keeping the
    /// feasible one with the earliest completion, then the earliest cut.
    fn exhaustive_two_stage(
        cut_free: Minutes,
        p1: Minutes,
        weld_busy_until: Minutes,
        p2: Minutes,
        max_wait: Minutes,
    ) -> (Minutes, Minutes) {
        let mut best: Option<(Minutes, Minutes, Minutes)> = None;
        for s1 in 0..60 {
            for s2 in 0..60 {
                let ok = s1 >= cut_free
                    && s2 >= weld_busy_until
                    && s2 >= s1 + p1
                    && s2 - (s1 + p1) <= max_wait;
                if ok && best.is_none_or(|(c, a, _)| (s2 + p2, s1) < (c, a)) {
                    best = Some((s2 + p2, s1, s2));
                }
            }
        }
        let (_, s1, s2) = best.unwrap();
        (s1, s2)
    }

    #[test]
    fn max_wait_rebids_upstream() {
        let mut f = flow_factory(&[1, 1], 0);
        f.machines[0].failure_windows.push(TimeWindow::new(0, 2));
        let mut job = job_with("J#1", &f, &[4, 3]);
        job.operations[0].max_wait_after = Some(2);
        let mut st = PlanningState::new(&f, 0, 1000, Insertion::EarliestGap);
        st.reserve(&ScheduleEntry {
            op_id: "X#1.welding".into(),
            job_id: "X#1".into(),
            stage: Stage::Welding,
            machine_id: "M21".into(),
            start: 0,
            end: 20,
            version: 1,
        });
        let plan = cell_feasibility(&mut st, &order(50, DeadlineClass::Soft), &[job]).unwrap();
        let cut = plan
            .entries
            .iter()
            .find(|e| e.stage == Stage::Cutting)
            .unwrap();
        let weld = plan
            .entries
            .iter()
            .find(|e| e.stage == Stage::Welding)
            .unwrap();
        let (s1, s2) = exhaustive_two_stage(2, 4, 20, 3, 2);
        assert_eq!((cut.start, weld.start), (s1, s2));
        assert_eq!((cut.start, cut.end, weld.start, weld.end), (14, 18, 20, 23));
    }

    #[test]
    fn max_wait_gives_up_after_one_round() {
        // The re-bid moves cutting past its failure window, which lands welding
        // behind the second block. A later slot exists but is not searched.
        let mut f = flow_factory(&[1, 1], 0);
        f.machines[0].failure_windows.push(TimeWindow::new(10, 40));
        let mut job = job_with("J#1", &f, &[4, 3]);
        job.operations[0].max_wait_after = Some(2);
        let mut st = PlanningState::new(&f, 0, 1000, Insertion::EarliestGap);
        st.reserve(&ScheduleEntry {
            op_id: "X#1.welding".into(),
            job_id: "X#1".into(),
            stage: Stage::Welding,
            machine_id: "M21".into(),
            start: 4,
            end: 20,
            version: 1,
        });
        st.reserve(&ScheduleEntry {
            op_id: "Y#1.welding".into(),
            job_id: "Y#1".into(),
            stage: Stage::Welding,
            machine_id: "M21".into(),
            start: 41,
            end: 100,
            version: 1,
        });
        let r = cell_feasibility(&mut st, &order(50, DeadlineClass::Soft), &[job]);
        assert!(matches!(r, Err(ScheduleError::NoCapacity { .. })));
    }

    fn proposal(tardiness: Minutes) -> Proposal {
        Proposal {
            proposal_id: "p1".into(),
            order_id: "J".into(),
            conversation_id: "c".into(),
            schedule_delta: vec![],
            predicted_completion: 10 + tardiness,
            due_date: 10,
            predicted_tardiness: tardiness,
        }
    }

    #[test]
    fn manager_confirms_on_time_hard_order() {
        assert_eq!(
            manager_decide(
                &proposal(0),
                &order(10, DeadlineClass::Hard),
                ManagerPolicy::Auto
            ),
            Decision::Confirm
        );
    }

    #[test]
    fn manager_rejects_late_hard_order() {
        assert_eq!(
            manager_decide(
                &proposal(2),
                &order(10, DeadlineClass::Hard),
                ManagerPolicy::Auto
            ),
            Decision::Reject
        );
    }

    #[test]
    fn manager_confirms_late_soft_order() {
        assert_eq!(
            manager_decide(
                &proposal(2),
                &order(10, DeadlineClass::Soft),
                ManagerPolicy::Auto
            ),
            Decision::Confirm
        );
    }

    #[test]
    fn interactive_defers() {
        assert_eq!(
            manager_decide(
                &proposal(0),
                &order(10, DeadlineClass::Hard),
                ManagerPolicy::Interactive
            ),
            Decision::Deferred
        );
    }

    #[test]
    fn transition_table() {
        use MachineState::*;
        assert!(transition_allowed(FreeNoTask, FreeWithTask));
        assert!(transition_allowed(LoadedNoTask, BusyWithTask));
        assert!(!transition_allowed(FreeNoTask, BusyWithTask));
        assert!(!transition_allowed(FreeNoTask, LoadedNoTask));
        assert!(!transition_allowed(BusyWithTask, BusyWithTask));
    }

    #[test]
    fn negotiation_winner_must_be_a_bidder() {
        let mut r = NegotiationRecord {
            conversation_id: "c".into(),
            op_id: "o".into(),
            bids: vec![Bid {
                machine_id: "M1".into(),
                op_id: "o".into(),
                earliest_start: 0,
                completion: 3,
            }],
            winner: None,
        };
        assert!(!r.award("M2"));
        assert!(r.award("M1"));
        assert_eq!(r.winner.as_deref(), Some("M1"));
    }
}
