//! Resource timelines and greedy operation placement.
//!
//! Static builds, admission checks, cell negotiation and failure repair all
//! place operations through [`PlanningState`], so they agree on what
//! "earliest feasible" means.

use std::collections::BTreeMap;

use crate::agents::Bid;
use crate::domain::{
    Factory, Job, Minutes, Operation, Schedule, ScheduleEntry, TimeWindow, TransportEntry,
};
use crate::scheduler::{evaluate_bids, ScheduleError};

/// How new work may be slotted onto a resource.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Insertion {
    /// First gap that fits.
    EarliestGap,
    /// Only after the last operation already on the resource.
    AppendToTail,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Busy {
    start: Minutes,
    end: Minutes,
    /// Op id for work items; `None` for failure windows.
    tag: Option<String>,
}

/// Busy intervals of one resource, sorted by start. Intervals may overlap
/// (a failure window can cover work that is about to be moved).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Timeline {
    busy: Vec<Busy>,
}

impl Timeline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, start: Minutes, end: Minutes, tag: Option<String>) {
        let pos = self
            .busy
            .partition_point(|b| (b.start, b.end) <= (start, end));
        self.busy.insert(pos, Busy { start, end, tag });
    }

    pub fn remove(&mut self, tag: &str) {
        self.busy.retain(|b| b.tag.as_deref() != Some(tag));
    }

    /// End of the last work item (failure windows excluded).
    pub fn tail(&self) -> Minutes {
        self.busy
            .iter()
            .filter(|b| b.tag.is_some())
            .map(|b| b.end)
            .max()
            .unwrap_or(Minutes::MIN)
    }

    /// Earliest `t >= from` such that `[t, t + dur)` is free.
    pub fn earliest_fit(&self, from: Minutes, dur: Minutes) -> Minutes {
        let mut t = from;
        for b in &self.busy {
            if b.end <= t {
                continue;
            }
            if b.start >= t + dur {
                break;
            }
            t = b.end;
        }
        t
    }

    pub fn intervals(&self) -> Vec<TimeWindow> {
        self.busy
            .iter()
            .map(|b| TimeWindow::new(b.start, b.end))
            .collect()
    }

    pub fn is_free(&self, start: Minutes, end: Minutes) -> bool {
        !self.busy.iter().any(|b| b.start < end && start < b.end)
    }
}

/// Earliest start on a single timeline, honoring the insertion policy.
pub fn earliest_on(
    timeline: &Timeline,
    lower: Minutes,
    dur: Minutes,
    insertion: Insertion,
) -> Minutes {
    let from = match insertion {
        Insertion::EarliestGap => lower,
        Insertion::AppendToTail => lower.max(timeline.tail()),
    };
    timeline.earliest_fit(from, dur)
}

/// A placed operation within a job plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placed {
    pub entry: ScheduleEntry,
    pub transport: Option<TransportEntry>,
    /// Fixed placements come from the committed schedule and are never moved.
    pub movable: bool,
    /// Lower bound used when the op was placed (material arrival).
    pub arrival: Minutes,
}

/// Per-job placement progress; `placed[k]` is op k once placed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobPlan {
    pub job_id: String,
    pub placed: Vec<Option<Placed>>,
}

impl JobPlan {
    pub fn new(job: &Job) -> Self {
        Self {
            job_id: job.job_id.clone(),
            placed: vec![None; job.operations.len()],
        }
    }

    pub fn completion(&self) -> Option<Minutes> {
        self.placed
            .last()
            .and_then(|p| p.as_ref())
            .map(|p| p.entry.end)
    }
}

/// Where an op may go during placement.
#[derive(Debug, Clone, Default)]
pub struct PlaceOptions<'a> {
    /// Restrict the candidate machines (right-shift repair keeps the original machine).
    pub machines: Option<&'a [String]>,
    /// Never start before this instant.
    pub not_before: Minutes,
}

pub struct PlanningState<'a> {
    pub factory: &'a Factory,
    pub now: Minutes,
    pub horizon: Minutes,
    pub insertion: Insertion,
    pub version: u64,
    machines: BTreeMap<String, Timeline>,
    transporters: Vec<Timeline>,
}

impl<'a> PlanningState<'a> {
    pub fn new(factory: &'a Factory, now: Minutes, horizon: Minutes, insertion: Insertion) -> Self {
        let mut machines = BTreeMap::new();
        for m in &factory.machines {
            let mut tl = Timeline::new();
            for w in &m.failure_windows {
                tl.insert(w.start, w.end, None);
            }
            machines.insert(m.machine_id.clone(), tl);
        }
        let transporters = vec![Timeline::new(); factory.transport.fleet_size.max(1) as usize];
        Self {
            factory,
            now,
            horizon,
            insertion,
            version: 0,
            machines,
            transporters,
        }
    }

    /// State seeded with every entry and transport of `schedule`.
    pub fn from_schedule(
        factory: &'a Factory,
        schedule: &Schedule,
        now: Minutes,
        horizon: Minutes,
        insertion: Insertion,
    ) -> Self {
        let mut st = Self::new(factory, now, horizon, insertion);
        st.version = schedule.version + 1;
        st.add_entries(&schedule.entries);
        st.add_transports(&schedule.transports);
        st
    }

    pub fn add_entries(&mut self, entries: &[ScheduleEntry]) {
        for e in entries {
            if let Some(tl) = self.machines.get_mut(&e.machine_id) {
                tl.insert(e.start, e.end, Some(e.op_id.clone()));
            }
        }
    }

    pub fn add_transports(&mut self, transports: &[TransportEntry]) {
        for t in transports {
            if let Some(tl) = self.transporters.get_mut(t.transporter as usize) {
                tl.insert(t.start, t.end, Some(t.op_id.clone()));
            }
        }
    }

    pub fn machine_timeline(&self, machine_id: &str) -> Option<&Timeline> {
        self.machines.get(machine_id)
    }

    pub fn transporter_timelines(&self) -> &[Timeline] {
        &self.transporters
    }

    /// Bid of one machine for `op` given its material arrival.
    pub fn machine_bid(&self, machine_id: &str, op: &Operation, lower: Minutes) -> Option<Bid> {
        let tl = self.machines.get(machine_id)?;
        bid_on_timeline(
            machine_id,
            op,
            lower.max(self.now),
            tl,
            self.horizon,
            self.insertion,
        )
    }

    /// Bids from every candidate machine that can finish before the horizon.
    pub fn collect_bids(
        &self,
        op: &Operation,
        lower: Minutes,
        machines: Option<&[String]>,
    ) -> Vec<Bid> {
        machines
            .unwrap_or(&op.eligible_machines)
            .iter()
            .filter_map(|m| self.machine_bid(m, op, lower))
            .collect()
    }

    pub fn reserve(&mut self, entry: &ScheduleEntry) {
        if let Some(tl) = self.machines.get_mut(&entry.machine_id) {
            tl.insert(entry.start, entry.end, Some(entry.op_id.clone()));
        }
    }

    pub fn release(&mut self, entry: &ScheduleEntry) {
        if let Some(tl) = self.machines.get_mut(&entry.machine_id) {
            tl.remove(&entry.op_id);
        }
    }

    fn release_transport(&mut self, t: &TransportEntry) {
        if let Some(tl) = self.transporters.get_mut(t.transporter as usize) {
            tl.remove(&t.op_id);
        }
    }

    /// Books the move of a part from `prev` to the station of `op`. Returns the
    /// material arrival time and the booking (none for zero-length legs).
    pub fn book_transport(
        &mut self,
        prev: &Operation,
        prev_end: Minutes,
        op: &Operation,
    ) -> Result<(Minutes, Option<TransportEntry>), ScheduleError> {
        let travel = self.factory.travel_between(prev.stage, op.stage);
        let ready = prev_end.max(self.now);
        if travel <= 0 {
            return Ok((ready, None));
        }
        let (idx, start) = self
            .transporters
            .iter()
            .enumerate()
            .map(|(i, tl)| (i, earliest_on(tl, ready, travel, Insertion::EarliestGap)))
            .min_by_key(|&(i, s)| (s, i))
            .expect("fleet has at least one transporter");
        if start + travel > self.horizon {
            return Err(ScheduleError::NoCapacity {
                op_id: op.op_id.clone(),
                reason: "transport beyond horizon".into(),
            });
        }
        let from = self
            .factory
            .station_for(prev.stage)
            .map(|s| s.station_id.clone())
            .unwrap_or_default();
        let to = self
            .factory
            .station_for(op.stage)
            .map(|s| s.station_id.clone())
            .unwrap_or_default();
        let t = TransportEntry {
            op_id: op.op_id.clone(),
            job_id: op.job_id.clone(),
            transporter: idx as u32,
            from_station: from,
            to_station: to,
            start,
            end: start + travel,
        };
        self.transporters[idx].insert(t.start, t.end, Some(t.op_id.clone()));
        Ok((t.end, Some(t)))
    }

    fn award(
        &mut self,
        op: &Operation,
        lower: Minutes,
        machines: Option<&[String]>,
    ) -> Result<ScheduleEntry, ScheduleError> {
        let bids = self.collect_bids(op, lower, machines);
        let win = evaluate_bids(&bids).map_err(|_| ScheduleError::NoCapacity {
            op_id: op.op_id.clone(),
            reason: "no machine can fit the operation before the horizon".into(),
        })?;
        let entry = ScheduleEntry {
            op_id: op.op_id.clone(),
            job_id: op.job_id.clone(),
            stage: op.stage,
            machine_id: win.machine_id.clone(),
            start: win.earliest_start,
            end: win.completion,
            version: self.version,
        };
        self.reserve(&entry);
        Ok(entry)
    }

    /// Places op `k` of `job`. Op `k - 1` must already be placed in `plan`
    /// (fixed or movable). When the wait after op `k - 1` exceeds its limit,
    /// one re-bid round delays op `k - 1` to close the gap.
    pub fn place_op(
        &mut self,
        job: &Job,
        k: usize,
        plan: &mut JobPlan,
        release: Minutes,
        opts: &PlaceOptions<'_>,
    ) -> Result<(), ScheduleError> {
        let op = &job.operations[k];
        let base = release.max(self.now).max(opts.not_before);
        let (arrival, transport) = if k == 0 {
            (base, None)
        } else {
            let prev = plan.placed[k - 1]
                .as_ref()
                .expect("predecessor placed first");
            let prev_end = prev.entry.end;
            let (arr, t) = self.book_transport(&job.operations[k - 1], prev_end, op)?;
            (arr.max(base), t)
        };
        let entry = match self.award(op, arrival, opts.machines) {
            Ok(e) => e,
            Err(err) => {
                if let Some(t) = &transport {
                    self.release_transport(t);
                }
                return Err(err);
            }
        };
        plan.placed[k] = Some(Placed {
            entry,
            transport,
            movable: true,
            arrival,
        });

        if k == 0 {
            return Ok(());
        }
        let prev_op = &job.operations[k - 1];
        let Some(max_wait) = prev_op.max_wait_after else {
            return Ok(());
        };
        let gap = plan.placed[k].as_ref().unwrap().entry.start
            - plan.placed[k - 1].as_ref().unwrap().entry.end;
        if gap <= max_wait {
            return Ok(());
        }
        self.rebid_upstream(job, k, plan, release, opts, max_wait)
    }

    fn rebid_upstream(
        &mut self,
        job: &Job,
        k: usize,
        plan: &mut JobPlan,
        release: Minutes,
        opts: &PlaceOptions<'_>,
        max_wait: Minutes,
    ) -> Result<(), ScheduleError> {
        let op = &job.operations[k];
        let prev_op = &job.operations[k - 1];
        let no_cap = |reason: &str| ScheduleError::NoCapacity {
            op_id: op.op_id.clone(),
            reason: reason.to_string(),
        };

        let prev = plan.placed[k - 1].clone().expect("placed");
        if !prev.movable {
            self.undo(plan, k);
            return Err(no_cap(
                "maximum wait exceeded after a fixed upstream operation",
            ));
        }
        let cur = plan.placed[k].take().expect("placed");
        let target_start = cur.entry.start;
        self.release(&cur.entry);
        if let Some(t) = &cur.transport {
            self.release_transport(t);
        }
        self.release(&prev.entry);

        let lower = prev
            .arrival
            .max(target_start - max_wait - prev_op.processing_time);
        let new_prev = self.award(prev_op, lower, None)?;
        if k >= 2 {
            if let (Some(pp), Some(w)) = (
                plan.placed[k - 2].as_ref(),
                job.operations[k - 2].max_wait_after,
            ) {
                if new_prev.start - pp.entry.end > w {
                    self.release(&new_prev);
                    plan.placed[k - 1] = None;
                    return Err(no_cap(
                        "re-bid of upstream operation breaks its own maximum wait",
                    ));
                }
            }
        }
        plan.placed[k - 1] = Some(Placed {
            entry: new_prev.clone(),
            ..prev
        });

        let (arr, transport) = self.book_transport(prev_op, new_prev.end, op)?;
        let arrival = arr.max(release.max(self.now).max(opts.not_before));
        let entry = self.award(op, arrival, opts.machines)?;
        if entry.start - new_prev.end > max_wait {
            self.release(&entry);
            if let Some(t) = &transport {
                self.release_transport(t);
            }
            return Err(no_cap("maximum wait still exceeded after one re-bid round"));
        }
        plan.placed[k] = Some(Placed {
            entry,
            transport,
            movable: true,
            arrival,
        });
        Ok(())
    }

    fn undo(&mut self, plan: &mut JobPlan, k: usize) {
        if let Some(p) = plan.placed[k].take() {
            self.release(&p.entry);
            if let Some(t) = &p.transport {
                self.release_transport(t);
            }
        }
    }

    /// Places every op of each job in turn (job-major).
    pub fn plan_job_major(
        &mut self,
        jobs: &[&Job],
        release: Minutes,
    ) -> Result<Vec<JobPlan>, ScheduleError> {
        let mut plans = Vec::with_capacity(jobs.len());
        for job in jobs {
            let mut plan = JobPlan::new(job);
            for k in 0..job.operations.len() {
                self.place_op(job, k, &mut plan, release, &PlaceOptions::default())?;
            }
            plans.push(plan);
        }
        Ok(plans)
    }

    /// Places stage by stage across all jobs (stage-major), as the cell does
    /// when it answers a shop query.
    pub fn plan_stage_major(
        &mut self,
        jobs: &[&Job],
        release: Minutes,
    ) -> Result<Vec<JobPlan>, ScheduleError> {
        let mut plans: Vec<JobPlan> = jobs.iter().map(|j| JobPlan::new(j)).collect();
        let depth = jobs.iter().map(|j| j.operations.len()).max().unwrap_or(0);
        for k in 0..depth {
            for (job, plan) in jobs.iter().zip(plans.iter_mut()) {
                if k < job.operations.len() {
                    self.place_op(job, k, plan, release, &PlaceOptions::default())?;
                }
            }
        }
        Ok(plans)
    }
}

/// Earliest feasible bid for `op` on one machine timeline.
pub fn bid_on_timeline(
    machine_id: &str,
    op: &Operation,
    lower: Minutes,
    timeline: &Timeline,
    horizon: Minutes,
    insertion: Insertion,
) -> Option<Bid> {
    let start = earliest_on(timeline, lower, op.processing_time, insertion);
    let completion = start + op.processing_time;
    (completion <= horizon).then(|| Bid {
        machine_id: machine_id.to_string(),
        op_id: op.op_id.clone(),
        earliest_start: start,
        completion,
    })
}

/// Flattens plans into schedule entries and transports.
pub fn collect_plans(plans: &[JobPlan]) -> (Vec<ScheduleEntry>, Vec<TransportEntry>) {
    let mut entries = Vec::new();
    let mut transports = Vec::new();
    for plan in plans {
        for p in plan.placed.iter().flatten().filter(|p| p.movable) {
            entries.push(p.entry.clone());
            if let Some(t) = &p.transport {
                transports.push(t.clone());
            }
        }
    }
    (entries, transports)
}
