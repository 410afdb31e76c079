use serde::{Deserialize, Serialize};

use crate::domain::{
    expand_order_in, DeadlineClass, Factory, Job, Minutes, Order, OrderSource, ProductModel,
    Schedule,
};
use crate::scheduler::planning::{collect_plans, Insertion, PlanningState};
use crate::scheduler::ScheduleError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DispatchRule {
    FIFO,
    EDD,
    SPT,
    /// Rate-monotonic analog: periodic orders by ascending period, then
    /// aperiodic orders first-in first-out.
    ShortestPeriod,
}

impl DispatchRule {
    pub const ALL: [DispatchRule; 4] = [
        DispatchRule::FIFO,
        DispatchRule::EDD,
        DispatchRule::SPT,
        DispatchRule::ShortestPeriod,
    ];
}

/// The rule actually applied: shortest-period degrades to FIFO when no
/// order declares a period.
pub fn effective_rule(orders: &[Order], rule: DispatchRule) -> (DispatchRule, Option<String>) {
    if rule == DispatchRule::ShortestPeriod && orders.iter().all(|o| o.period.is_none()) {
        return (
            DispatchRule::FIFO,
            Some("ShortestPeriod requested but no order declares a period; using FIFO".to_string()),
        );
    }
    (rule, None)
}

fn total_work(order: &Order, models: &[ProductModel]) -> Minutes {
    let per_unit: Minutes = models
        .iter()
        .find(|m| m.model_id == order.model_id)
        .map(|m| m.routing.iter().map(|s| s.processing_time).sum())
        .unwrap_or(0);
    per_unit * order.quantity as Minutes
}

/// Orders sorted by the rule, ties broken by order id.
pub fn order_priority<'o>(
    orders: &'o [Order],
    models: &[ProductModel],
    rule: DispatchRule,
) -> Vec<&'o Order> {
    let (rule, _) = effective_rule(orders, rule);
    let mut sorted: Vec<&Order> = orders.iter().collect();
    match rule {
        DispatchRule::FIFO => {
            sorted.sort_by(|a, b| (a.release_time, &a.order_id).cmp(&(b.release_time, &b.order_id)))
        }
        DispatchRule::EDD => {
            sorted.sort_by(|a, b| (a.due_date, &a.order_id).cmp(&(b.due_date, &b.order_id)))
        }
        DispatchRule::SPT => {
            sorted.sort_by_cached_key(|o| (total_work(o, models), o.order_id.clone()))
        }
        DispatchRule::ShortestPeriod => sorted.sort_by(|a, b| {
            let ka = (
                a.period.is_none(),
                a.period.unwrap_or(0),
                a.release_time,
                &a.order_id,
            );
            let kb = (
                b.period.is_none(),
                b.period.unwrap_or(0),
                b.release_time,
                &b.order_id,
            );
            ka.cmp(&kb)
        }),
    }
    sorted
}

/// Non-preemptive list schedule of initial orders: orders in rule order, each
/// job's operations placed greedily at their earliest feasible start.
pub fn build_static_schedule(
    orders: &[Order],
    models: &[ProductModel],
    factory: &Factory,
    rule: DispatchRule,
    horizon: Minutes,
) -> Result<Schedule, ScheduleError> {
    if let Some(o) = orders.iter().find(|o| o.source != OrderSource::Initial) {
        return Err(ScheduleError::NotInitial(o.order_id.clone()));
    }
    let mut state = PlanningState::new(factory, 0, horizon, Insertion::EarliestGap);
    state.version = 1;
    let mut entries = Vec::new();
    let mut transports = Vec::new();
    for order in order_priority(orders, models, rule) {
        let jobs = expand_order_in(order, models, factory)?;
        let refs: Vec<&Job> = jobs.iter().collect();
        let plans = state.plan_job_major(&refs, order.release_time)?;
        let (e, t) = collect_plans(&plans);
        entries.extend(e);
        transports.extend(t);
    }
    let mut schedule = Schedule {
        version: 1,
        entries,
        transports,
    };
    schedule.normalize();
    Ok(schedule)
}

/// Initial plan after offline schedulability analysis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InitialPlan {
    pub schedule: Schedule,
    pub accepted: Vec<String>,
    pub rejected: Vec<String>,
    pub warning: Option<String>,
}

/// Builds the static schedule, then rejects Hard orders that would miss their
/// due date (lowest priority first) and orders that cannot be placed at all,
/// rebuilding until every accepted Hard order is on time.
pub fn plan_initial(
    orders: &[Order],
    models: &[ProductModel],
    factory: &Factory,
    rule: DispatchRule,
    horizon: Minutes,
) -> Result<InitialPlan, ScheduleError> {
    let (_, warning) = effective_rule(orders, rule);
    let mut remaining: Vec<Order> = orders.to_vec();
    let mut rejected = Vec::new();
    loop {
        match build_static_schedule(&remaining, models, factory, rule, horizon) {
            Ok(schedule) => {
                let completions = schedule.order_completions();
                let late: Vec<&str> = order_priority(&remaining, models, rule)
                    .into_iter()
                    .filter(|o| o.deadline_class == DeadlineClass::Hard)
                    .filter(|o| {
                        completions
                            .get(&o.order_id)
                            .is_some_and(|&c| c > o.due_date)
                    })
                    .map(|o| o.order_id.as_str())
                    .collect();
                let Some(victim) = late.last().map(|s| s.to_string()) else {
                    let mut accepted: Vec<String> =
                        remaining.iter().map(|o| o.order_id.clone()).collect();
                    accepted.sort();
                    rejected.sort();
                    return Ok(InitialPlan {
                        schedule,
                        accepted,
                        rejected,
                        warning,
                    });
                };
                remaining.retain(|o| o.order_id != victim);
                rejected.push(victim);
            }
            Err(ScheduleError::NoCapacity { op_id, .. }) => {
                let victim = crate::domain::order_of_job(&op_id).to_string();
                if !remaining.iter().any(|o| o.order_id == victim) {
                    return Err(ScheduleError::NoCapacity {
                        op_id,
                        reason: "unattributable".into(),
                    });
                }
                remaining.retain(|o| o.order_id != victim);
                rejected.push(victim);
            }
            Err(e) => return Err(e),
        }
    }
}
