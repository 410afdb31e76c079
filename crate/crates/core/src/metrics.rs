//! Schedule quality measures and run-level statistics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    expand_order_in, order_of_job, validate_schedule, DeadlineClass, Factory, Minutes, Order,
    ProductModel, Schedule, Violation,
};
use crate::scenario::EventLogRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario_hash: String,
    pub makespan: Minutes,
    pub total_tardiness: Minutes,
    pub hard_misses: u32,
    pub hard_misses_disturbed: u32,
    /// Busy minutes over `max(1, makespan)`, per machine.
    pub utilization: BTreeMap<String, f64>,
    pub accepted: u32,
    pub rejected: u32,
    /// Completion of every accepted order that has scheduled work.
    pub completions: BTreeMap<String, Minutes>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("schedule has {} violation(s); first: {}", .0.len(), .0[0])]
    InvalidSchedule(Vec<Violation>),
    #[error("runs come from different scenarios ({0} vs {1})")]
    ScenarioMismatch(String, String),
}

/// Route of an order: the machines of every station its model visits.
fn route_machines(order: &Order, models: &[ProductModel], factory: &Factory) -> BTreeSet<String> {
    let Some(model) = models.iter().find(|m| m.model_id == order.model_id) else {
        return BTreeSet::new();
    };
    model
        .routing
        .iter()
        .filter_map(|s| factory.station_for(s.stage))
        .flat_map(|st| st.machines.iter().cloned())
        .collect()
}

/// Measures a finished run. Accepted and rejected orders are read from the
/// log; tardiness counts accepted orders only.
pub fn compute_metrics(
    scenario_hash: &str,
    schedule: &Schedule,
    orders: &[Order],
    log: &[EventLogRecord],
    factory: &Factory,
    models: &[ProductModel],
) -> Result<RunMetrics, MetricsError> {
    let ids_of = |kind: &str| -> BTreeSet<String> {
        log.iter()
            .filter(|r| r.kind == kind)
            .filter_map(|r| {
                r.payload
                    .get("order_id")
                    .and_then(|v| v.as_str())
                    .map(str::to_string)
            })
            .collect()
    };
    let accepted = ids_of("OrderAccepted");
    let rejected = ids_of("OrderRejected");

    let scheduled: BTreeSet<&str> = schedule
        .entries
        .iter()
        .map(|e| order_of_job(&e.job_id))
        .collect();
    let jobs: Vec<_> = orders
        .iter()
        .filter(|o| scheduled.contains(o.order_id.as_str()))
        .filter_map(|o| expand_order_in(o, models, factory).ok())
        .flatten()
        .collect();
    let violations = validate_schedule(schedule, factory, &jobs, &factory.transport);
    if !violations.is_empty() {
        return Err(MetricsError::InvalidSchedule(violations));
    }

    let makespan = schedule.makespan();
    let all_completions = schedule.order_completions();
    let mut completions = BTreeMap::new();
    let mut total_tardiness = 0;
    let mut hard_misses = 0;
    let mut hard_misses_disturbed = 0;
    for o in orders.iter().filter(|o| accepted.contains(&o.order_id)) {
        let Some(&c) = all_completions.get(&o.order_id) else {
            continue;
        };
        completions.insert(o.order_id.clone(), c);
        let tardiness = (c - o.due_date).max(0);
        total_tardiness += tardiness;
        if o.deadline_class == DeadlineClass::Hard && tardiness > 0 {
            hard_misses += 1;
            let route = route_machines(o, models, factory);
            let disturbed = log.iter().any(|r| {
                r.kind == "MachineFailure"
                    && r.t < c
                    && r.payload
                        .get("machine_id")
                        .and_then(|v| v.as_str())
                        .is_some_and(|m| route.contains(m))
            });
            if disturbed {
                hard_misses_disturbed += 1;
            }
        }
    }

    let denom = makespan.max(1) as f64;
    let utilization = factory
        .machines
        .iter()
        .map(|m| {
            let busy: Minutes = schedule
                .entries_on(&m.machine_id)
                .map(|e| e.end - e.start)
                .sum();
            (m.machine_id.clone(), busy as f64 / denom)
        })
        .collect();

    Ok(RunMetrics {
        scenario_hash: scenario_hash.to_string(),
        makespan,
        total_tardiness,
        hard_misses,
        hard_misses_disturbed,
        utilization,
        accepted: accepted.len() as u32,
        rejected: rejected.len() as u32,
        completions,
    })
}

/// Field-wise `b - a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDelta {
    pub scenario_hash: String,
    pub makespan: Minutes,
    pub total_tardiness: Minutes,
    pub hard_misses: i64,
    pub hard_misses_disturbed: i64,
    pub accepted: i64,
    pub rejected: i64,
    pub utilization: BTreeMap<String, f64>,
}

impl MetricsDelta {
    pub fn is_zero(&self) -> bool {
        self.makespan == 0
            && self.total_tardiness == 0
            && self.hard_misses == 0
            && self.hard_misses_disturbed == 0
            && self.accepted == 0
            && self.rejected == 0
            && self.utilization.values().all(|d| *d == 0.0)
    }
}

pub fn compare_runs(a: &RunMetrics, b: &RunMetrics) -> Result<MetricsDelta, MetricsError> {
    if a.scenario_hash != b.scenario_hash {
        return Err(MetricsError::ScenarioMismatch(
            a.scenario_hash.clone(),
            b.scenario_hash.clone(),
        ));
    }
    let machines: BTreeSet<&String> = a.utilization.keys().chain(b.utilization.keys()).collect();
    let utilization = machines
        .into_iter()
        .map(|m| {
            let ua = a.utilization.get(m).copied().unwrap_or(0.0);
            let ub = b.utilization.get(m).copied().unwrap_or(0.0);
            (m.clone(), ub - ua)
        })
        .collect();
    Ok(MetricsDelta {
        scenario_hash: a.scenario_hash.clone(),
        makespan: b.makespan - a.makespan,
        total_tardiness: b.total_tardiness - a.total_tardiness,
        hard_misses: b.hard_misses as i64 - a.hard_misses as i64,
        hard_misses_disturbed: b.hard_misses_disturbed as i64 - a.hard_misses_disturbed as i64,
        accepted: b.accepted as i64 - a.accepted as i64,
        rejected: b.rejected as i64 - a.rejected as i64,
        utilization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{OrderSource, ScheduleEntry, Stage};
    use crate::scenario::EventLog;
    use crate::scheduler::{
        brute_force_optimum, build_static_schedule, DispatchRule, OracleInstance, OracleJob,
        DEFAULT_HORIZON,
    };
    use crate::testutil::{flow_factory, model_with};
    use proptest::prelude::*;
    use serde_json::json;

    fn order(id: &str, due: Minutes, class: DeadlineClass) -> Order {
        Order {
            order_id: id.into(),
            model_id: "m".into(),
            quantity: 1,
            release_time: 0,
            due_date: due,
            deadline_class: class,
            source: OrderSource::Initial,
            period: None,
        }
    }

    fn accepted_log(ids: &[&str]) -> EventLog {
        let mut log = EventLog::new();
        for id in ids {
            log.push(0, "OrderAccepted", None, None, json!({"order_id": id}));
        }
        log
    }

    #[test]
    fn empty_schedule() {
        let f = flow_factory(&[1], 0);
        let m = compute_metrics("h", &Schedule::default(), &[], &[], &f, &[]).unwrap();
        assert_eq!((m.makespan, m.total_tardiness, m.hard_misses), (0, 0, 0));
        assert_eq!(m.utilization["M11"], 0.0);
    }

    #[test]
    fn soft_lateness_counts_tardiness_only() {
        let f = flow_factory(&[1], 0);
        let models = vec![model_with("m", &[5])];
        let orders = vec![order("A", 3, DeadlineClass::Soft)];
        let s = build_static_schedule(&orders, &models, &f, DispatchRule::FIFO, DEFAULT_HORIZON)
            .unwrap();
        let m = compute_metrics(
            "h",
            &s,
            &orders,
            accepted_log(&["A"]).records(),
            &f,
            &models,
        )
        .unwrap();
        assert_eq!(m.total_tardiness, 2);
        assert_eq!(m.hard_misses, 0);
        assert_eq!(m.utilization["M11"], 1.0);
    }

    #[test]
    fn oracle_instance_optimum_sequence() {
        // EDD orders the instance J2, J3, J1, one of its optimal sequences
        let (f, models, orders) = crate::testutil::three_job_instance();
        let s = build_static_schedule(&orders, &models, &f, DispatchRule::EDD, DEFAULT_HORIZON)
            .unwrap();
        let m = compute_metrics(
            "h",
            &s,
            &orders,
            accepted_log(&["J1", "J2", "J3"]).records(),
            &f,
            &models,
        )
        .unwrap();
        let inst = OracleInstance {
            jobs: [("J1", [3, 2], 12), ("J2", [1, 4], 5), ("J3", [2, 3], 10)]
                .iter()
                .map(|(id, t, due)| OracleJob {
                    id: id.to_string(),
                    times: t.to_vec(),
                    due: Some(*due),
                })
                .collect(),
            transport: vec![],
        };
        assert_eq!(m.makespan, brute_force_optimum(&inst).unwrap().makespan);
        assert_eq!(m.makespan, 10);
        assert_eq!(m.total_tardiness, 0);
    }

    #[test]
    fn hard_miss_after_failure_is_disturbed() {
        let f = flow_factory(&[1], 0);
        let models = vec![model_with("m", &[5])];
        let orders = vec![
            order("A", 3, DeadlineClass::Hard),
            order("B", 100, DeadlineClass::Hard),
        ];
        let s = build_static_schedule(&orders, &models, &f, DispatchRule::FIFO, DEFAULT_HORIZON)
            .unwrap();
        let mut log = accepted_log(&["A", "B"]);
        let m = compute_metrics("h", &s, &orders, log.records(), &f, &models).unwrap();
        assert_eq!((m.hard_misses, m.hard_misses_disturbed), (1, 0));
        log.push(
            1,
            "MachineFailure",
            None,
            None,
            json!({"machine_id": "M11"}),
        );
        let m = compute_metrics("h", &s, &orders, log.records(), &f, &models).unwrap();
        assert_eq!((m.hard_misses, m.hard_misses_disturbed), (1, 1));
    }

    #[test]
    fn rejected_orders_count_but_add_no_tardiness() {
        let f = flow_factory(&[1], 0);
        let models = vec![model_with("m", &[5])];
        let orders = vec![order("A", 3, DeadlineClass::Hard)];
        let mut log = EventLog::new();
        log.push(0, "OrderRejected", None, None, json!({"order_id": "A"}));
        let m = compute_metrics(
            "h",
            &Schedule::default(),
            &orders,
            log.records(),
            &f,
            &models,
        )
        .unwrap();
        assert_eq!((m.accepted, m.rejected, m.total_tardiness), (0, 1, 0));
    }

    #[test]
    fn invalid_schedule_is_refused() {
        let f = flow_factory(&[1], 0);
        let models = vec![model_with("m", &[5])];
        let orders = vec![
            order("A", 30, DeadlineClass::Soft),
            order("B", 30, DeadlineClass::Soft),
        ];
        let e = |op: &str, job: &str| ScheduleEntry {
            op_id: op.into(),
            job_id: job.into(),
            stage: Stage::Cutting,
            machine_id: "M11".into(),
            start: 0,
            end: 5,
            version: 1,
        };
        let s = Schedule {
            version: 1,
            entries: vec![e("A#1.cutting", "A#1"), e("B#1.cutting", "B#1")],
            transports: vec![],
        };
        assert!(matches!(
            compute_metrics("h", &s, &orders, &[], &f, &models),
            Err(MetricsError::InvalidSchedule(_))
        ));
    }

    #[test]
    fn compare_identical_and_mismatched() {
        let f = flow_factory(&[1], 0);
        let a = compute_metrics("h", &Schedule::default(), &[], &[], &f, &[]).unwrap();
        assert!(compare_runs(&a, &a).unwrap().is_zero());
        let b = RunMetrics {
            scenario_hash: "other".into(),
            ..a.clone()
        };
        assert!(matches!(
            compare_runs(&a, &b),
            Err(MetricsError::ScenarioMismatch(..))
        ));
        let c = RunMetrics {
            total_tardiness: 7,
            ..a.clone()
        };
        assert_eq!(compare_runs(&a, &c).unwrap().total_tardiness, 7);
    }

    proptest! {
        #[test]
        fn metrics_are_pure_and_bounded(times in prop::collection::vec(1i64..9, 1..5), dues in prop::collection::vec(0i64..40, 1..5)) {
            let f = flow_factory(&[1, 2], 0);
            let models = vec![model_with("m", &[times[0], *times.last().unwrap()])];
            let orders: Vec<Order> = dues.iter().enumerate().map(|(i, &d)| order(&format!("O{i}"), d, if i % 2 == 0 { DeadlineClass::Hard } else { DeadlineClass::Soft })).collect();
            let s = build_static_schedule(&orders, &models, &f, DispatchRule::EDD, DEFAULT_HORIZON).unwrap();
            let ids: Vec<&str> = orders.iter().map(|o| o.order_id.as_str()).collect();
            let log = accepted_log(&ids);
            let a = compute_metrics("h", &s, &orders, log.records(), &f, &models).unwrap();
            let b = compute_metrics("h", &s, &orders, log.records(), &f, &models).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.hard_misses >= a.hard_misses_disturbed);
            for u in a.utilization.values() {
                prop_assert!((0.0..=1.0).contains(u));
            }
        }
    }
}
