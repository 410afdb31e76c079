use serde::{Deserialize, Serialize};

use crate::domain::{
    DeadlineClass, Factory, Job, Minutes, Order, Schedule, ScheduleEntry, TransportEntry,
};
use crate::scheduler::planning::{collect_plans, Insertion, PlanningState};
use crate::scheduler::ScheduleError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdmissionResult {
    Accept(Minutes),
    RejectInfeasible,
    AcceptWithTardiness(Minutes),
}

/// Tentative placement of one order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderPlan {
    pub order_id: String,
    pub entries: Vec<ScheduleEntry>,
    pub transports: Vec<TransportEntry>,
    pub completion: Minutes,
}

/// Everything a placement needs to know about the shop right now.
#[derive(Debug, Clone, Copy)]
pub struct PlanContext<'a> {
    pub factory: &'a Factory,
    pub schedule: &'a Schedule,
    /// Work promised to pending proposals, not yet committed.
    pub reserved_entries: &'a [ScheduleEntry],
    pub reserved_transports: &'a [TransportEntry],
    pub now: Minutes,
    pub horizon: Minutes,
    pub insertion: Insertion,
}

impl<'a> PlanContext<'a> {
    pub fn new(
        factory: &'a Factory,
        schedule: &'a Schedule,
        now: Minutes,
        horizon: Minutes,
    ) -> Self {
        Self {
            factory,
            schedule,
            reserved_entries: &[],
            reserved_transports: &[],
            now,
            horizon,
            insertion: Insertion::EarliestGap,
        }
    }

    pub fn state(&self) -> PlanningState<'a> {
        let mut st = PlanningState::from_schedule(
            self.factory,
            self.schedule,
            self.now,
            self.horizon,
            self.insertion,
        );
        st.add_entries(self.reserved_entries);
        st.add_transports(self.reserved_transports);
        st
    }
}

/// Stage-by-stage chained placement of all jobs of `order`, without
/// committing anything.
pub fn plan_order(
    ctx: &PlanContext<'_>,
    order: &Order,
    jobs: &[Job],
) -> Result<OrderPlan, ScheduleError> {
    let mut state = ctx.state();
    let refs: Vec<&Job> = jobs.iter().collect();
    let plans = state.plan_stage_major(&refs, order.release_time)?;
    let (entries, transports) = collect_plans(&plans);
    let completion = entries.iter().map(|e| e.end).max().unwrap_or(ctx.now);
    Ok(OrderPlan {
        order_id: order.order_id.clone(),
        entries,
        transports,
        completion,
    })
}

/// Run-time schedulability check for an arriving order. Pure: the schedule is
/// only read.
pub fn admission_check(ctx: &PlanContext<'_>, order: &Order, jobs: &[Job]) -> AdmissionResult {
    match plan_order(ctx, order, jobs) {
        Err(_) => AdmissionResult::RejectInfeasible,
        Ok(plan) => match order.deadline_class {
            DeadlineClass::Hard if plan.completion <= order.due_date => {
                AdmissionResult::Accept(plan.completion)
            }
            DeadlineClass::Hard => AdmissionResult::RejectInfeasible,
            DeadlineClass::Soft => {
                AdmissionResult::AcceptWithTardiness((plan.completion - order.due_date).max(0))
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::*;
    use crate::testutil::*;

    fn dynamic_order(class: DeadlineClass, due: Minutes, model: &str) -> Order {
        Order {
            order_id: "D1".into(),
            model_id: model.into(),
            quantity: 1,
            release_time: 0,
            due_date: due,
            deadline_class: class,
            source: OrderSource::Dynamic,
            period: None,
        }
    }

    #[test]
    fn free_shop_accepts_hard_order() {
        let f = flow_factory(&[1, 1], 0);
        let models = vec![model_with("m", &[1, 3])];
        let o = dynamic_order(DeadlineClass::Hard, 12, "m");
        let jobs = expand_order_in(&o, &models, &f).unwrap();
        let s = Schedule::default();
        assert_eq!(
            admission_check(&PlanContext::new(&f, &s, 0, 1000), &o, &jobs),
            AdmissionResult::Accept(4)
        );
    }

    fn busy_until_ten() -> (Factory, Vec<ProductModel>, Schedule) {
        let f = flow_factory(&[1], 0);
        let models = vec![model_with("m", &[4])];
        let s = Schedule {
            version: 1,
            entries: vec![ScheduleEntry {
                op_id: "X#1.cutting".into(),
                job_id: "X#1".into(),
                stage: Stage::Cutting,
                machine_id: "M11".into(),
                start: 0,
                end: 10,
                version: 1,
            }],
            transports: vec![],
        };
        (f, models, s)
    }

    #[test]
    fn busy_machine_rejects_hard_order() {
        let (f, models, s) = busy_until_ten();
        let o = dynamic_order(DeadlineClass::Hard, 12, "m");
        let jobs = expand_order_in(&o, &models, &f).unwrap();
        let before = s.clone();
        assert_eq!(
            admission_check(&PlanContext::new(&f, &s, 0, 1000), &o, &jobs),
            AdmissionResult::RejectInfeasible
        );
        assert_eq!(s, before);
    }

    #[test]
    fn busy_machine_soft_order_records_tardiness() {
        let (f, models, s) = busy_until_ten();
        let o = dynamic_order(DeadlineClass::Soft, 12, "m");
        let jobs = expand_order_in(&o, &models, &f).unwrap();
        assert_eq!(
            admission_check(&PlanContext::new(&f, &s, 0, 1000), &o, &jobs),
            AdmissionResult::AcceptWithTardiness(2)
        );
    }

    #[test]
    fn reservations_are_respected() {
        let (f, models, _) = busy_until_ten();
        let (_, _, reserved) = busy_until_ten();
        let empty = Schedule::default();
        let mut ctx = PlanContext::new(&f, &empty, 0, 1000);
        ctx.reserved_entries = &reserved.entries;
        let o = dynamic_order(DeadlineClass::Soft, 12, "m");
        let jobs = expand_order_in(&o, &models, &f).unwrap();
        assert_eq!(plan_order(&ctx, &o, &jobs).unwrap().completion, 14);
    }
}
