//! Factory and demand data model.
//!
//! Everything here is a plain value: orders expand into jobs, jobs carry one
//! operation per routing step, and a [`Schedule`] assigns operations to
//! machines over integer-minute intervals.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time in whole minutes from scenario start.
pub type Minutes = i64;

/// Processing stages of the flow line, in flow order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    Cutting,
    Welding,
    Assembly,
    Quality,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::Cutting,
        Stage::Welding,
        Stage::Assembly,
        Stage::Quality,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Cutting => "Cutting",
            Stage::Welding => "Welding",
            Stage::Assembly => "Assembly",
            Stage::Quality => "Quality",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DeadlineClass {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OrderSource {
    Initial,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProfileTier {
    High,
    Medium,
    Economic,
}

impl ProfileTier {
    /// Colors offered for each profile quality.
    pub fn colors(self) -> &'static [&'static str] {
        match self {
            ProfileTier::High => &["white", "golden-oak"],
            ProfileTier::Medium => &["white", "cream", "walnut", "anthracite", "mahogany"],
            ProfileTier::Economic => &["white", "grey"],
        }
    }

    pub const ALL: [ProfileTier; 3] = [
        ProfileTier::High,
        ProfileTier::Medium,
        ProfileTier::Economic,
    ];
}

/// A customer demand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Order {
    pub order_id: String,
    pub model_id: String,
    pub quantity: u32,
    pub release_time: Minutes,
    pub due_date: Minutes,
    pub deadline_class: DeadlineClass,
    pub source: OrderSource,
    /// Recurrence period for standing orders; used by the shortest-period rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<Minutes>,
}

impl Order {
    /// Checks the value-level invariants of an order.
    pub fn check(&self) -> Result<(), String> {
        if !is_token(&self.order_id) || self.order_id.contains('#') {
            return Err(format!(
                "order_id {:?} must be a non-empty ASCII token without '#'",
                self.order_id
            ));
        }
        if self.quantity == 0 {
            return Err("quantity must be at least 1".into());
        }
        if self.release_time < 0 {
            return Err("release_time must be non-negative".into());
        }
        if self.due_date < self.release_time {
            return Err("due_date must not precede release_time".into());
        }
        if let Some(p) = self.period {
            if p <= 0 {
                return Err("period must be positive".into());
            }
        }
        Ok(())
    }
}

/// One step of a model's routing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteStep {
    pub stage: Stage,
    pub processing_time: Minutes,
    /// Largest allowed gap between the end of this step and the start of the next.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_wait_after: Option<Minutes>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductModel {
    pub model_id: String,
    pub name: String,
    pub profile_tier: ProfileTier,
    pub color: String,
    pub routing: Vec<RouteStep>,
}

impl ProductModel {
    pub fn check(&self) -> Result<(), String> {
        if self.routing.is_empty() {
            return Err("routing must not be empty".into());
        }
        for pair in self.routing.windows(2) {
            if pair[1].stage <= pair[0].stage {
                return Err(format!(
                    "routing stages out of flow order: {} before {}",
                    pair[0].stage, pair[1].stage
                ));
            }
        }
        for step in &self.routing {
            if step.processing_time <= 0 {
                return Err(format!(
                    "processing_time for {} must be positive",
                    step.stage
                ));
            }
            if matches!(step.max_wait_after, Some(w) if w < 0) {
                return Err(format!(
                    "max_wait_after for {} must be non-negative",
                    step.stage
                ));
            }
        }
        if !self.profile_tier.colors().contains(&self.color.as_str()) {
            return Err(format!(
                "color {:?} is not offered for the {:?} profile tier",
                self.color, self.profile_tier
            ));
        }
        Ok(())
    }
}

/// Half-open interval `[start, end)` in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: Minutes,
    pub end: Minutes,
}

impl TimeWindow {
    pub fn new(start: Minutes, end: Minutes) -> Self {
        Self { start, end }
    }

    pub fn is_valid(&self) -> bool {
        self.end > self.start
    }

    pub fn overlaps(&self, start: Minutes, end: Minutes) -> bool {
        self.start < end && start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workstation {
    pub station_id: String,
    pub stage: Stage,
    pub machines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Machine {
    pub machine_id: String,
    pub station_id: String,
    #[serde(default)]
    pub failure_windows: Vec<TimeWindow>,
}

impl Machine {
    /// Adds a window, merging with any window it touches so the list stays
    /// sorted and pairwise disjoint.
    pub fn add_failure_window(&mut self, window: TimeWindow) {
        let mut merged = window;
        let mut kept = Vec::with_capacity(self.failure_windows.len() + 1);
        for w in self.failure_windows.drain(..) {
            if w.end < merged.start || merged.end < w.start {
                kept.push(w);
            } else {
                merged = TimeWindow::new(merged.start.min(w.start), merged.end.max(w.end));
            }
        }
        kept.push(merged);
        kept.sort();
        self.failure_windows = kept;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TravelLeg {
    pub from: String,
    pub to: String,
    pub minutes: Minutes,
}

/// Material handling configuration: fleet size plus a sparse station-to-station
/// travel-time matrix (absent legs take zero minutes).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportConfig {
    #[serde(default = "default_fleet")]
    pub fleet_size: u32,
    #[serde(default)]
    pub travel: Vec<TravelLeg>,
}

fn default_fleet() -> u32 {
    1
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            fleet_size: 1,
            travel: Vec::new(),
        }
    }
}

impl TransportConfig {
    pub fn travel_time(&self, from: &str, to: &str) -> Minutes {
        self.travel
            .iter()
            .find(|l| l.from == from && l.to == to)
            .map(|l| l.minutes)
            .unwrap_or(0)
    }
}

pub fn default_warehouses() -> Vec<String> {
    ["WH-profiles", "WH-glass", "WH-fittings", "WH-finished"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factory {
    pub stations: Vec<Workstation>,
    pub machines: Vec<Machine>,
    #[serde(default)]
    pub transport: TransportConfig,
    #[serde(default = "default_warehouses")]
    pub warehouses: Vec<String>,
}

impl Factory {
    pub fn station_for(&self, stage: Stage) -> Option<&Workstation> {
        self.stations.iter().find(|s| s.stage == stage)
    }

    pub fn station(&self, station_id: &str) -> Option<&Workstation> {
        self.stations.iter().find(|s| s.station_id == station_id)
    }

    pub fn machine(&self, machine_id: &str) -> Option<&Machine> {
        self.machines.iter().find(|m| m.machine_id == machine_id)
    }

    pub fn machine_mut(&mut self, machine_id: &str) -> Option<&mut Machine> {
        self.machines
            .iter_mut()
            .find(|m| m.machine_id == machine_id)
    }

    /// Travel time between the stations serving two stages.
    pub fn travel_between(&self, from: Stage, to: Stage) -> Minutes {
        match (self.station_for(from), self.station_for(to)) {
            (Some(a), Some(b)) => self.transport.travel_time(&a.station_id, &b.station_id),
            _ => 0,
        }
    }

    pub fn stage_of_machine(&self, machine_id: &str) -> Option<Stage> {
        let m = self.machine(machine_id)?;
        self.station(&m.station_id).map(|s| s.stage)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operation {
    pub op_id: String,
    pub job_id: String,
    pub stage: Stage,
    pub processing_time: Minutes,
    pub eligible_machines: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_wait_after: Option<Minutes>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub order_id: String,
    pub operations: Vec<Operation>,
}

pub fn job_id_for(order_id: &str, unit: u32) -> String {
    format!("{order_id}#{unit}")
}

/// Order id encoded in a job id.
pub fn order_of_job(job_id: &str) -> &str {
    job_id.split_once('#').map(|(o, _)| o).unwrap_or(job_id)
}

pub fn op_id_for(job_id: &str, stage: Stage) -> String {
    format!("{job_id}.{}", stage.as_str().to_ascii_lowercase())
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("order {order_id} references unknown model {model_id}")]
    UnknownModel { order_id: String, model_id: String },
    #[error("model {model_id} is invalid: {reason}")]
    InvalidModel { model_id: String, reason: String },
    #[error("no station serves stage {0}")]
    MissingStation(Stage),
}

/// Expands an order into one job per unit.
pub fn expand_order(
    order: &Order,
    model: &ProductModel,
    factory: &Factory,
) -> Result<Vec<Job>, DomainError> {
    if order.model_id != model.model_id {
        return Err(DomainError::UnknownModel {
            order_id: order.order_id.clone(),
            model_id: order.model_id.clone(),
        });
    }
    model.check().map_err(|reason| DomainError::InvalidModel {
        model_id: model.model_id.clone(),
        reason,
    })?;

    let mut stations = Vec::with_capacity(model.routing.len());
    for step in &model.routing {
        let st = factory
            .station_for(step.stage)
            .ok_or(DomainError::MissingStation(step.stage))?;
        stations.push(st);
    }

    Ok((1..=order.quantity)
        .map(|unit| {
            let job_id = job_id_for(&order.order_id, unit);
            let operations = model
                .routing
                .iter()
                .zip(&stations)
                .map(|(step, st)| Operation {
                    op_id: op_id_for(&job_id, step.stage),
                    job_id: job_id.clone(),
                    stage: step.stage,
                    processing_time: step.processing_time,
                    eligible_machines: st.machines.clone(),
                    max_wait_after: step.max_wait_after,
                })
                .collect();
            Job {
                job_id,
                order_id: order.order_id.clone(),
                operations,
            }
        })
        .collect())
}

/// Looks up the model in `models` and expands.
pub fn expand_order_in(
    order: &Order,
    models: &[ProductModel],
    factory: &Factory,
) -> Result<Vec<Job>, DomainError> {
    let model = models
        .iter()
        .find(|m| m.model_id == order.model_id)
        .ok_or_else(|| DomainError::UnknownModel {
            order_id: order.order_id.clone(),
            model_id: order.model_id.clone(),
        })?;
    expand_order(order, model, factory)
}

/// An operation placed on a machine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub op_id: String,
    pub job_id: String,
    pub stage: Stage,
    pub machine_id: String,
    pub start: Minutes,
    pub end: Minutes,
    /// Schedule version that placed this entry.
    #[serde(default)]
    pub version: u64,
}

/// A transporter booking moving a part to the station of `op_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportEntry {
    pub op_id: String,
    pub job_id: String,
    pub transporter: u32,
    pub from_station: String,
    pub to_station: String,
    pub start: Minutes,
    pub end: Minutes,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub version: u64,
    pub entries: Vec<ScheduleEntry>,
    #[serde(default)]
    pub transports: Vec<TransportEntry>,
}

impl Schedule {
    pub fn entry(&self, op_id: &str) -> Option<&ScheduleEntry> {
        self.entries.iter().find(|e| e.op_id == op_id)
    }

    pub fn transport_for(&self, op_id: &str) -> Option<&TransportEntry> {
        self.transports.iter().find(|t| t.op_id == op_id)
    }

    pub fn makespan(&self) -> Minutes {
        self.entries.iter().map(|e| e.end).max().unwrap_or(0)
    }

    /// Canonical ordering: by start, then machine, then op.
    pub fn normalize(&mut self) {
        self.entries.sort_by(|a, b| {
            (a.start, &a.machine_id, &a.op_id).cmp(&(b.start, &b.machine_id, &b.op_id))
        });
        self.transports.sort_by(|a, b| {
            (a.start, a.transporter, &a.op_id).cmp(&(b.start, b.transporter, &b.op_id))
        });
    }

    /// Completion time of each order with at least one scheduled entry.
    pub fn order_completions(&self) -> BTreeMap<String, Minutes> {
        let mut out: BTreeMap<String, Minutes> = BTreeMap::new();
        for e in &self.entries {
            let c = out
                .entry(order_of_job(&e.job_id).to_string())
                .or_insert(e.end);
            *c = (*c).max(e.end);
        }
        out
    }

    pub fn entries_on<'a>(
        &'a self,
        machine_id: &'a str,
    ) -> impl Iterator<Item = &'a ScheduleEntry> + 'a {
        self.entries
            .iter()
            .filter(move |e| e.machine_id == machine_id)
    }

    /// Removes the given ops (and their inbound transports).
    pub fn remove_ops(&mut self, op_ids: &[String]) -> Vec<ScheduleEntry> {
        let mut removed = Vec::new();
        self.entries.retain(|e| {
            if op_ids.contains(&e.op_id) {
                removed.push(e.clone());
                false
            } else {
                true
            }
        });
        self.transports.retain(|t| !op_ids.contains(&t.op_id));
        removed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    Overlap,
    PrecedenceBreak,
    IneligibleMachine,
    FailureOverlap,
    MaxWaitExceeded,
    DuplicateOperation,
    DurationMismatch,
    UnknownOperation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.detail)
    }
}

fn push(v: &mut Vec<Violation>, kind: ViolationKind, detail: String) {
    v.push(Violation { kind, detail });
}

/// Checks every schedule invariant and returns all violations found.
pub fn validate_schedule(
    schedule: &Schedule,
    factory: &Factory,
    jobs: &[Job],
    transport: &TransportConfig,
) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut ops: BTreeMap<&str, (&Job, usize)> = BTreeMap::new();
    for job in jobs {
        for (i, op) in job.operations.iter().enumerate() {
            ops.insert(op.op_id.as_str(), (job, i));
        }
    }

    let mut by_op: BTreeMap<&str, &ScheduleEntry> = BTreeMap::new();
    for e in &schedule.entries {
        if by_op.insert(e.op_id.as_str(), e).is_some() {
            push(
                &mut out,
                ViolationKind::DuplicateOperation,
                format!("{} scheduled more than once", e.op_id),
            );
        }
        let Some(&(job, idx)) = ops.get(e.op_id.as_str()) else {
            push(
                &mut out,
                ViolationKind::UnknownOperation,
                format!("{} is not an operation of any job", e.op_id),
            );
            continue;
        };
        let op = &job.operations[idx];
        if !op.eligible_machines.contains(&e.machine_id) || factory.machine(&e.machine_id).is_none()
        {
            push(
                &mut out,
                ViolationKind::IneligibleMachine,
                format!(
                    "{} placed on {} which is not eligible",
                    e.op_id, e.machine_id
                ),
            );
        }
        if e.end - e.start != op.processing_time {
            push(
                &mut out,
                ViolationKind::DurationMismatch,
                format!(
                    "{} spans [{},{}) but needs {} min",
                    e.op_id, e.start, e.end, op.processing_time
                ),
            );
        }
        if let Some(m) = factory.machine(&e.machine_id) {
            for w in &m.failure_windows {
                if w.overlaps(e.start, e.end) {
                    push(
                        &mut out,
                        ViolationKind::FailureOverlap,
                        format!(
                            "{} on {} at [{},{}) overlaps failure [{},{})",
                            e.op_id, e.machine_id, e.start, e.end, w.start, w.end
                        ),
                    );
                }
            }
        }
    }

    // machine overlaps
    let mut per_machine: BTreeMap<&str, Vec<&ScheduleEntry>> = BTreeMap::new();
    for e in &schedule.entries {
        per_machine
            .entry(e.machine_id.as_str())
            .or_default()
            .push(e);
    }
    for (m, mut list) in per_machine {
        list.sort_by_key(|e| (e.start, e.end));
        for (i, a) in list.iter().enumerate() {
            for b in &list[i + 1..] {
                if b.start >= a.end {
                    break;
                }
                push(
                    &mut out,
                    ViolationKind::Overlap,
                    format!(
                        "{} [{},{}) and {} [{},{}) overlap on {}",
                        a.op_id, a.start, a.end, b.op_id, b.start, b.end, m
                    ),
                );
            }
        }
    }

    // transporter overlaps
    let mut per_vehicle: BTreeMap<u32, Vec<&TransportEntry>> = BTreeMap::new();
    for t in &schedule.transports {
        per_vehicle.entry(t.transporter).or_default().push(t);
    }
    for (v, mut list) in per_vehicle {
        list.sort_by_key(|t| (t.start, t.end));
        for (i, a) in list.iter().enumerate() {
            for b in &list[i + 1..] {
                if b.start >= a.end {
                    break;
                }
                push(
                    &mut out,
                    ViolationKind::Overlap,
                    format!(
                        "transports for {} and {} overlap on transporter {}",
                        a.op_id, b.op_id, v
                    ),
                );
            }
        }
    }

    // precedence, transport and max-wait within each job
    for job in jobs {
        for pair in job.operations.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            let Some(ne) = by_op.get(next.op_id.as_str()) else {
                continue;
            };
            let Some(pe) = by_op.get(prev.op_id.as_str()) else {
                push(
                    &mut out,
                    ViolationKind::PrecedenceBreak,
                    format!(
                        "{} scheduled without its predecessor {}",
                        next.op_id, prev.op_id
                    ),
                );
                continue;
            };
            let travel = match (
                factory.station_for(prev.stage),
                factory.station_for(next.stage),
            ) {
                (Some(a), Some(b)) => transport.travel_time(&a.station_id, &b.station_id),
                _ => 0,
            };
            if ne.start < pe.end + travel {
                push(
                    &mut out,
                    ViolationKind::PrecedenceBreak,
                    format!(
                        "{} starts at {} before {} ends at {} plus {} travel",
                        next.op_id, ne.start, prev.op_id, pe.end, travel
                    ),
                );
            }
            if let Some(t) = schedule.transport_for(&next.op_id) {
                if t.start < pe.end || t.end - t.start != travel || ne.start < t.end {
                    push(
                        &mut out,
                        ViolationKind::PrecedenceBreak,
                        format!(
                            "transport [{},{}) into {} is inconsistent with its stages",
                            t.start, t.end, next.op_id
                        ),
                    );
                }
            }
            if let Some(w) = prev.max_wait_after {
                if ne.start - pe.end > w {
                    push(
                        &mut out,
                        ViolationKind::MaxWaitExceeded,
                        format!(
                            "{} waits {} min after {} (max {})",
                            next.op_id,
                            ne.start - pe.end,
                            prev.op_id,
                            w
                        ),
                    );
                }
            }
        }
    }

    out
}

/// Non-empty ASCII identifier without whitespace or control characters.
pub fn is_token(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_graphic())
}
