use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{
    order_of_job, DeadlineClass, Factory, Job, Minutes, Order, Schedule, TimeWindow,
};
use crate::scheduler::planning::{Insertion, JobPlan, PlaceOptions, Placed, PlanningState};
use crate::scheduler::ScheduleError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RepairStrategy {
    /// Ops hit by the failure are re-bid across their station.
    Rebid,
    /// Ops hit by the failure wait for their own machine.
    RightShift,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepairOutcome {
    pub schedule: Schedule,
    /// Ops that overlapped the failure window on the failed machine.
    pub hit: Vec<String>,
    /// Hit ops that were already running when the failure struck.
    pub aborted: Vec<String>,
    /// Every op whose entry changed.
    pub moved: Vec<String>,
    /// Hard orders whose completion now exceeds their due date.
    pub broken_guarantees: Vec<String>,
}

/// Re-plans the schedule around a failure of `machine_id` during `window`.
///
/// `factory` must not yet contain the window; `now` is the instant the
/// failure is handled. Ops that have not started yet and sit right before a
/// moved op may themselves be delayed to keep a maximum-wait limit.
#[allow(clippy::too_many_arguments)]
pub fn repair_on_failure(
    schedule: &Schedule,
    machine_id: &str,
    window: TimeWindow,
    factory: &Factory,
    jobs: &[Job],
    orders: &[Order],
    now: Minutes,
    horizon: Minutes,
    strategy: RepairStrategy,
) -> Result<RepairOutcome, ScheduleError> {
    let mut f = factory.clone();
    if let Some(m) = f.machine_mut(machine_id) {
        m.add_failure_window(window);
    }

    let hit: Vec<String> = schedule
        .entries_on(machine_id)
        .filter(|e| window.overlaps(e.start, e.end))
        .map(|e| e.op_id.clone())
        .collect();
    let aborted: Vec<String> = schedule
        .entries_on(machine_id)
        .filter(|e| hit.contains(&e.op_id) && e.start < now)
        .map(|e| e.op_id.clone())
        .collect();

    let job_index: BTreeMap<&str, &Job> = jobs.iter().map(|j| (j.job_id.as_str(), j)).collect();
    let mut affected: BTreeSet<String> = BTreeSet::new();
    for op_id in &hit {
        let Some(e) = schedule.entry(op_id) else {
            continue;
        };
        let Some(job) = job_index.get(e.job_id.as_str()) else {
            continue;
        };
        for op in job.operations.iter().filter(|o| o.stage >= e.stage) {
            if schedule.entry(&op.op_id).is_some() {
                affected.insert(op.op_id.clone());
            }
        }
    }

    let mut rest = schedule.clone();
    let removed = rest.remove_ops(&affected.iter().cloned().collect::<Vec<_>>());
    let mut state = PlanningState::from_schedule(&f, &rest, now, horizon, Insertion::EarliestGap);
    let version = state.version;

    let mut todo = removed.clone();
    todo.sort_by(|a, b| {
        (a.start, a.stage.index(), &a.op_id).cmp(&(b.start, b.stage.index(), &b.op_id))
    });

    let mut plans: BTreeMap<String, JobPlan> = BTreeMap::new();
    for r in &todo {
        if plans.contains_key(&r.job_id) {
            continue;
        }
        let job = job_index[r.job_id.as_str()];
        let mut plan = JobPlan::new(job);
        for (k, op) in job.operations.iter().enumerate() {
            if affected.contains(&op.op_id) {
                continue;
            }
            if let Some(e) = rest.entry(&op.op_id) {
                plan.placed[k] = Some(Placed {
                    entry: e.clone(),
                    transport: rest.transport_for(&op.op_id).cloned(),
                    movable: e.start >= now,
                    arrival: e.start,
                });
            }
        }
        plans.insert(r.job_id.clone(), plan);
    }

    for r in &todo {
        let job = job_index[r.job_id.as_str()];
        let k = job
            .operations
            .iter()
            .position(|o| o.op_id == r.op_id)
            .expect("op of job");
        let release = orders
            .iter()
            .find(|o| o.order_id == job.order_id)
            .map(|o| o.release_time)
            .unwrap_or(0);
        let own = [r.machine_id.clone()];
        let opts = if hit.contains(&r.op_id) {
            PlaceOptions {
                machines: (strategy == RepairStrategy::RightShift).then_some(&own[..]),
                not_before: now,
            }
        } else {
            PlaceOptions {
                machines: Some(&own[..]),
                not_before: r.start.max(now),
            }
        };
        let plan = plans.get_mut(&r.job_id).expect("plan");
        state.place_op(job, k, plan, release, &opts)?;
    }

    let mut out = rest;
    let mut moved = Vec::new();
    for plan in plans.values() {
        for p in plan.placed.iter().flatten().filter(|p| p.movable) {
            let changed = schedule.entry(&p.entry.op_id) != Some(&p.entry)
                || schedule.transport_for(&p.entry.op_id) != p.transport.as_ref();
            if !changed {
                continue;
            }
            moved.push(p.entry.op_id.clone());
            out.entries.retain(|e| e.op_id != p.entry.op_id);
            out.transports.retain(|t| t.op_id != p.entry.op_id);
            let mut e = p.entry.clone();
            e.version = version;
            out.entries.push(e);
            if let Some(t) = &p.transport {
                out.transports.push(t.clone());
            }
        }
    }
    moved.sort();
    out.version = version;
    out.normalize();

    let completions = out.order_completions();
    let touched: BTreeSet<&str> = moved.iter().map(|op| order_of_job(op_job(op))).collect();
    let broken_guarantees = orders
        .iter()
        .filter(|o| {
            o.deadline_class == DeadlineClass::Hard && touched.contains(o.order_id.as_str())
        })
        .filter(|o| {
            completions
                .get(&o.order_id)
                .is_some_and(|&c| c > o.due_date)
        })
        .map(|o| o.order_id.clone())
        .collect();

    Ok(RepairOutcome {
        schedule: out,
        hit,
        aborted,
        moved,
        broken_guarantees,
    })
}

fn op_job(op_id: &str) -> &str {
    op_id.rsplit_once('.').map(|(j, _)| j).unwrap_or(op_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::*;
    use crate::testutil::*;

    fn entry(op: &str, job: &str, stage: Stage, m: &str, s: Minutes, e: Minutes) -> ScheduleEntry {
        ScheduleEntry {
            op_id: op.into(),
            job_id: job.into(),
            stage,
            machine_id: m.into(),
            start: s,
            end: e,
            version: 1,
        }
    }

    fn single_order(job: &str, due: Minutes, class: DeadlineClass) -> Order {
        Order {
            order_id: order_of_job(job).into(),
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
    fn untouched_window_only_bumps_version() {
        let f = flow_factory(&[1], 0);
        let job = job_with("A#1", &f, &[4]);
        let s = Schedule {
            version: 3,
            entries: vec![entry("A#1.cutting", "A#1", Stage::Cutting, "M11", 0, 4)],
            transports: vec![],
        };
        let out = repair_on_failure(
            &s,
            "M11",
            TimeWindow::new(10, 20),
            &f,
            &[job],
            &[],
            0,
            1000,
            RepairStrategy::Rebid,
        )
        .unwrap();
        assert_eq!(out.schedule.version, 4);
        assert_eq!(out.schedule.entries, s.entries);
        assert!(out.moved.is_empty());
    }

    #[test]
    fn abort_and_rerun_after_repair() {
        let f = flow_factory(&[1, 1], 0);
        let job = job_with("A#1", &f, &[4, 3]);
        let s = Schedule {
            version: 1,
            entries: vec![
                entry("A#1.cutting", "A#1", Stage::Cutting, "M11", 2, 6),
                entry("A#1.welding", "A#1", Stage::Welding, "M21", 6, 9),
            ],
            transports: vec![],
        };
        let orders = [single_order("A#1", 10, DeadlineClass::Hard)];
        let out = repair_on_failure(
            &s,
            "M11",
            TimeWindow::new(4, 9),
            &f,
            std::slice::from_ref(&job),
            &orders,
            4,
            1000,
            RepairStrategy::Rebid,
        )
        .unwrap();
        let cut = out.schedule.entry("A#1.cutting").unwrap();
        let weld = out.schedule.entry("A#1.welding").unwrap();
        assert_eq!((cut.start, cut.end), (9, 13));
        assert_eq!((weld.start, weld.end), (13, 16));
        assert_eq!(out.aborted, vec!["A#1.cutting"]);
        assert_eq!(out.broken_guarantees, vec!["A"]);
        let mut f2 = f.clone();
        f2.machine_mut("M11")
            .unwrap()
            .add_failure_window(TimeWindow::new(4, 9));
        assert!(validate_schedule(&out.schedule, &f2, &[job], &f2.transport).is_empty());
    }

    /// Brute-force scan over every start minute on every station machine.
    fn scan_placement(
        f: &Factory,
        busy: &[(String, Minutes, Minutes)],
        machines: &[String],
        lower: Minutes,
        p: Minutes,
    ) -> (String, Minutes) {
        let mut best: Option<(Minutes, String, Minutes)> = None;
        for m in machines {
            let windows = &f.machine(m).unwrap().failure_windows;
            for t in lower..lower + 500 {
                let clash_fail = windows.iter().any(|w| w.start < t + p && t < w.end);
                let clash_busy = busy
                    .iter()
                    .any(|(bm, s, e)| bm == m && *s < t + p && t < *e);
                if !clash_fail && !clash_busy {
                    if best.as_ref().is_none_or(|(c, bm, _)| (t + p, m) < (*c, bm)) {
                        best = Some((t + p, m.clone(), t));
                    }
                    break;
                }
            }
        }
        let (_, m, t) = best.unwrap();
        (m, t)
    }

    #[test]
    fn migrates_to_free_sibling_machine() {
        let f = flow_factory(&[2], 0);
        let job = job_with("A#1", &f, &[5]);
        let other = job_with("B#1", &f, &[3]);
        let s = Schedule {
            version: 1,
            entries: vec![
                entry("A#1.cutting", "A#1", Stage::Cutting, "M11", 2, 7),
                entry("B#1.cutting", "B#1", Stage::Cutting, "M12", 0, 3),
            ],
            transports: vec![],
        };
        let window = TimeWindow::new(4, 30);
        let out = repair_on_failure(
            &s,
            "M11",
            window,
            &f,
            &[job, other],
            &[],
            4,
            1000,
            RepairStrategy::Rebid,
        )
        .unwrap();
        let mut f2 = f.clone();
        f2.machine_mut("M11").unwrap().add_failure_window(window);
        let (m, t) = scan_placement(&f2, &[("M12".into(), 0, 3)], &f2.stations[0].machines, 4, 5);
        let e = out.schedule.entry("A#1.cutting").unwrap();
        assert_eq!((e.machine_id.as_str(), e.start), (m.as_str(), t));
        assert_eq!(e.machine_id, "M12");
        assert_eq!(out.schedule.entry("B#1.cutting").unwrap(), &s.entries[1]);
    }

    #[test]
    fn right_shift_keeps_machine() {
        let f = flow_factory(&[2], 0);
        let job = job_with("A#1", &f, &[5]);
        let s = Schedule {
            version: 1,
            entries: vec![entry("A#1.cutting", "A#1", Stage::Cutting, "M11", 2, 7)],
            transports: vec![],
        };
        let out = repair_on_failure(
            &s,
            "M11",
            TimeWindow::new(4, 30),
            &f,
            &[job],
            &[],
            4,
            1000,
            RepairStrategy::RightShift,
        )
        .unwrap();
        let e = out.schedule.entry("A#1.cutting").unwrap();
        assert_eq!((e.machine_id.as_str(), e.start, e.end), ("M11", 30, 35));
    }

    proptest::proptest! {
        #[test]
        fn repaired_schedules_validate(times in proptest::collection::vec(proptest::collection::vec(1i64..8, 2), 1..5),
                                       fail_at in 0i64..15, fail_len in 1i64..20, machine in 0usize..2) {
            let mut f = flow_factory(&[2, 1], 0);
            f.transport.travel.push(TravelLeg { from: "S1".into(), to: "S2".into(), minutes: 1 });
            let rows: Vec<(String, Vec<Minutes>, Minutes)> = times.iter().enumerate().map(|(i, t)| (format!("J{}", i + 1), t.clone(), 30)).collect();
            let rows_ref: Vec<(&str, &[Minutes], Minutes)> = rows.iter().map(|(a, b, c)| (a.as_str(), b.as_slice(), *c)).collect();
            let (_, models, orders) = oracle_problem(&rows_ref);
            let jobs = jobs_of(&orders, &models, &f);
            let s = crate::scheduler::build_static_schedule(&orders, &models, &f, crate::scheduler::DispatchRule::FIFO, 10_000).unwrap();
            let mid = ["M11", "M12"][machine];
            let w = TimeWindow::new(fail_at, fail_at + fail_len);
            let out = repair_on_failure(&s, mid, w, &f, &jobs, &orders, fail_at, 10_000, RepairStrategy::Rebid).unwrap();
            let mut f2 = f.clone();
            f2.machine_mut(mid).unwrap().add_failure_window(w);
            proptest::prop_assert!(validate_schedule(&out.schedule, &f2, &jobs, &f2.transport).is_empty());
            proptest::prop_assert_eq!(out.schedule.entries.len(), s.entries.len());
            proptest::prop_assert_eq!(out.schedule.version, s.version + 1);
            // entries on other machines keep their machine, and move only later
            for e in &s.entries {
                let n = out.schedule.entry(&e.op_id).unwrap();
                if e.machine_id != mid {
                    proptest::prop_assert!(n.start >= e.start);
                }
            }
        }
    }
}
