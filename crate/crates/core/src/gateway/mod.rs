//! Live mode: a running simulation driven by operator commands, with state
//! snapshots, an event stream and replayable command scripts.

mod server;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{MachineStatusRecord, Proposal};
use crate::domain::{DeadlineClass, Minutes, Order, OrderSource};
use crate::engine::{Engine, EngineError, Mode};
use crate::scenario::Scenario;

pub use server::{serve, ServeOptions, ServerHandle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Confirm,
    Reject,
}

/// Clock control. `Step` advances the simulation by whole minutes; `Speed`
/// is simulated minutes per wall-clock minute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClockCommand {
    Pause,
    Resume,
    Step(Minutes),
    Speed(f64),
}

impl ClockCommand {
    /// Parses `pause`, `resume`, `step:n` or `speed:f`.
    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        let bad = || GatewayError::BadRequest(format!("unknown clock command {text:?}"));
        let text = text.trim();
        match text.split_once(':') {
            None if text == "pause" => Ok(ClockCommand::Pause),
            None if text == "resume" => Ok(ClockCommand::Resume),
            Some(("step", n)) => match n.trim().parse::<Minutes>() {
                Ok(n) if n >= 0 => Ok(ClockCommand::Step(n)),
                _ => Err(bad()),
            },
            Some(("speed", f)) => match f.trim().parse::<f64>() {
                Ok(f) if f.is_finite() && f > 0.0 => Ok(ClockCommand::Speed(f)),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }

    pub fn text(&self) -> String {
        match self {
            ClockCommand::Pause => "pause".into(),
            ClockCommand::Resume => "resume".into(),
            ClockCommand::Step(n) => format!("step:{n}"),
            ClockCommand::Speed(f) => format!("speed:{f}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CommandKind {
    InjectOrder(Order),
    Decide {
        proposal_id: String,
        decision: Decision,
    },
    Clock(ClockCommand),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayCommand {
    pub kind: CommandKind,
    /// Wall-clock milliseconds since the session started.
    pub received_at: u64,
    /// Simulated minute at which the command took effect.
    pub applied_at: Minutes,
}

/// Everything needed to re-drive a live session headlessly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandScript {
    pub scenario_hash: String,
    pub commands: Vec<GatewayCommand>,
    /// Simulated minute the session had reached when the script was taken.
    pub end_at: Minutes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub sim_now: Minutes,
    pub schedule_version: u64,
    pub machines: Vec<MachineStatusRecord>,
    pub pending_proposals: Vec<Proposal>,
    pub accepted: usize,
    pub rejected: usize,
    pub paused: bool,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("unknown proposal {0}")]
    UnknownProposal(String),
    #[error("invalid order: {0}")]
    InvalidOrder(String),
    #[error("session is not in live mode")]
    NotLiveMode,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("command script belongs to scenario {script}, not {scenario}")]
    ScenarioMismatch { script: String, scenario: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl GatewayError {
    pub fn status(&self) -> u16 {
        match self {
            GatewayError::UnknownProposal(_) => 404,
            GatewayError::InvalidOrder(_) | GatewayError::BadRequest(_) => 400,
            GatewayError::NotLiveMode | GatewayError::ScenarioMismatch { .. } => 409,
            GatewayError::Engine(_) => 500,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            GatewayError::UnknownProposal(_) => "UnknownProposal",
            GatewayError::InvalidOrder(_) => "InvalidOrder",
            GatewayError::NotLiveMode => "NotLiveMode",
            GatewayError::BadRequest(_) => "BadRequest",
            GatewayError::ScenarioMismatch { .. } => "ScenarioMismatch",
            GatewayError::Engine(_) => "EngineError",
        }
    }
}

/// Order document accepted by `POST /api/orders`. Release defaults to the
/// injection instant; the source is always Dynamic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderRequest {
    pub order_id: String,
    pub model_id: String,
    pub quantity: u32,
    pub due_date: Minutes,
    pub deadline_class: DeadlineClass,
    #[serde(default)]
    pub release_time: Option<Minutes>,
    #[serde(default)]
    pub source: Option<OrderSource>,
    #[serde(default)]
    pub period: Option<Minutes>,
}

impl OrderRequest {
    pub fn into_order(self, now: Minutes) -> Order {
        Order {
            order_id: self.order_id,
            model_id: self.model_id,
            quantity: self.quantity,
            release_time: self.release_time.unwrap_or(now).max(now),
            due_date: self.due_date,
            deadline_class: self.deadline_class,
            source: OrderSource::Dynamic,
            period: self.period,
        }
    }
}

/// A simulation driven by commands. All mutations go through `&mut self`, so
/// commands, clock ticks and reads are serialized by construction.
pub struct LiveSession {
    engine: Engine,
    paused: bool,
    speed: f64,
    started: Instant,
    anchor: (Instant, Minutes),
    commands: Vec<GatewayCommand>,
}

impl LiveSession {
    pub fn new(
        scenario: &Scenario,
        mode: Mode,
        speed: f64,
        paused: bool,
    ) -> Result<Self, GatewayError> {
        let mut engine = Engine::new(scenario, mode)?;
        engine.run_until(0)?;
        let now = Instant::now();
        Ok(Self {
            engine,
            paused,
            speed,
            started: now,
            anchor: (now, 0),
            commands: Vec::new(),
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    /// Dispatches every event up to `t`, then moves the clock to `t`.
    fn advance(&mut self, t: Minutes) -> Result<(), GatewayError> {
        let t = t.min(self.engine.policy().horizon);
        if t < self.engine.now() {
            return Ok(());
        }
        self.engine.run_until(t)?;
        self.engine.advance_to(t);
        Ok(())
    }

    /// Moves simulated time forward according to wall time and the speed
    /// factor; a no-op while paused.
    pub fn tick(&mut self) -> Result<(), GatewayError> {
        if self.paused {
            return Ok(());
        }
        let (at, sim) = self.anchor;
        let target = sim + (at.elapsed().as_secs_f64() * self.speed / 60.0).floor() as Minutes;
        if target > self.engine.now() {
            self.advance(target)?;
        }
        Ok(())
    }

    pub fn apply(&mut self, kind: CommandKind) -> Result<serde_json::Value, GatewayError> {
        if self.engine.mode() != Mode::Dynamic {
            return Err(GatewayError::NotLiveMode);
        }
        let received_at = self.started.elapsed().as_millis() as u64;
        let applied_at = self.engine.now();
        let ack = apply_to_engine(&mut self.engine, &kind)?;
        if let CommandKind::Clock(c) = &kind {
            match *c {
                ClockCommand::Pause => self.paused = true,
                ClockCommand::Resume => self.paused = false,
                ClockCommand::Speed(f) => self.speed = f,
                ClockCommand::Step(_) => {}
            }
        }
        self.anchor = (Instant::now(), self.engine.now());
        self.commands.push(GatewayCommand {
            kind,
            received_at,
            applied_at,
        });
        Ok(ack)
    }

    pub fn inject(&mut self, req: OrderRequest) -> Result<serde_json::Value, GatewayError> {
        let order = req.into_order(self.engine.now());
        self.apply(CommandKind::InjectOrder(order))
    }

    pub fn snapshot(&self) -> StateSnapshot {
        snapshot(&self.engine, self.paused)
    }

    pub fn script(&self) -> CommandScript {
        CommandScript {
            scenario_hash: self.engine.scenario_hash().to_string(),
            commands: self.commands.clone(),
            end_at: self.engine.now(),
        }
    }
}

fn apply_to_engine(
    engine: &mut Engine,
    kind: &CommandKind,
) -> Result<serde_json::Value, GatewayError> {
    let now = engine.now();
    let ack = match kind {
        CommandKind::InjectOrder(order) => {
            engine.inject_order(order.clone()).map_err(|e| match e {
                EngineError::InvalidOrder(m) => GatewayError::InvalidOrder(m),
                other => other.into(),
            })?;
            serde_json::json!({"order_id": order.order_id})
        }
        CommandKind::Decide {
            proposal_id,
            decision,
        } => {
            engine
                .decide(proposal_id, *decision == Decision::Confirm, "operator")
                .map_err(|e| match e {
                    EngineError::UnknownProposal(p) => GatewayError::UnknownProposal(p),
                    other => other.into(),
                })?;
            serde_json::json!({"proposal_id": proposal_id, "decision": decision})
        }
        CommandKind::Clock(c) => {
            engine.clock_command(&c.text())?;
            if let ClockCommand::Step(n) = c {
                engine.run_until(now + n)?;
                engine.advance_to(now + n);
            }
            serde_json::json!({"clock": c.text()})
        }
    };
    engine.run_until(engine.now())?;
    Ok(ack)
}

pub fn snapshot(engine: &Engine, paused: bool) -> StateSnapshot {
    StateSnapshot {
        sim_now: engine.now(),
        schedule_version: engine.schedule().version,
        machines: engine.machine_statuses(),
        pending_proposals: engine.pending_proposals(),
        accepted: engine.accepted().len(),
        rejected: engine.rejected().len(),
        paused,
    }
}

/// Re-drives a recorded session headlessly and returns the engine at the
/// script's end instant.
pub fn replay(scenario: &Scenario, script: &CommandScript) -> Result<Engine, GatewayError> {
    let hash = scenario.content_hash();
    if hash != script.scenario_hash {
        return Err(GatewayError::ScenarioMismatch {
            script: script.scenario_hash.clone(),
            scenario: hash,
        });
    }
    let mut engine = Engine::new(scenario, Mode::Dynamic)?;
    engine.run_until(0)?;
    for cmd in &script.commands {
        if cmd.applied_at > engine.now() {
            engine.run_until(cmd.applied_at)?;
            engine.advance_to(cmd.applied_at);
        }
        apply_to_engine(&mut engine, &cmd.kind)?;
    }
    if script.end_at > engine.now() {
        engine.run_until(script.end_at)?;
        engine.advance_to(script.end_at);
    }
    Ok(engine)
}
