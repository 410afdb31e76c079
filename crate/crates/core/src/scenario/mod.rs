//! Scenario documents, the YBG case-study generator, event logs and Gantt
//! export.

mod generator;
mod log;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::ManagerPolicy;
use crate::domain::{is_token, Factory, Minutes, Order, ProductModel, TimeWindow};
use crate::scheduler::{DispatchRule, DEFAULT_HORIZON};

pub use generator::{
    disturbance_suite, generate_scenario, generate_ybg_scenario, GeneratorParams, YBG_MODEL_NAMES,
};
pub use log::{gantt_csv, parse_gantt_csv, EventLog, EventLogRecord, GanttError, GANTT_HEADER};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disturbance {
    pub machine_id: String,
    pub window: TimeWindow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    #[serde(default = "default_rule")]
    pub rule: DispatchRule,
    #[serde(default = "default_manager")]
    pub manager: ManagerPolicy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: Minutes,
    #[serde(default)]
    pub message_latency: Minutes,
    /// Deferred proposals are rejected after this many minutes; absent means
    /// they wait for the operator indefinitely.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision_timeout: Option<Minutes>,
}

fn default_rule() -> DispatchRule {
    DispatchRule::FIFO
}

fn default_manager() -> ManagerPolicy {
    ManagerPolicy::Auto
}

fn default_horizon() -> Minutes {
    DEFAULT_HORIZON
}

impl Default for Policy {
    fn default() -> Self {
        Self {
            rule: default_rule(),
            manager: default_manager(),
            seed: 0,
            horizon: default_horizon(),
            message_latency: 0,
            decision_timeout: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub factory: Factory,
    pub models: Vec<ProductModel>,
    #[serde(default)]
    pub orders: Vec<Order>,
    #[serde(default)]
    pub disturbances: Vec<Disturbance>,
    #[serde(default)]
    pub policy: Policy,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario at {path}: {message}")]
    ValidationError { path: String, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::ValidationError {
        path: path.into(),
        message: message.into(),
    }
}

impl Scenario {
    /// Compact canonical JSON: fields in declaration order, no whitespace.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    pub fn pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Hex SHA-256 of the canonical form; the scenario's replay identity.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let f = &self.factory;
        if f.stations.is_empty() {
            return Err(invalid(
                "factory.stations",
                "at least one station is required",
            ));
        }
        let mut stages = BTreeSet::new();
        let mut station_ids = BTreeSet::new();
        for (i, s) in f.stations.iter().enumerate() {
            let p = format!("factory.stations[{i}]");
            if !is_token(&s.station_id) || !station_ids.insert(s.station_id.as_str()) {
                return Err(invalid(format!("{p}.station_id"), "must be a unique token"));
            }
            if !stages.insert(s.stage) {
                return Err(invalid(
                    format!("{p}.stage"),
                    format!("second station for {}", s.stage),
                ));
            }
            if s.machines.is_empty() {
                return Err(invalid(
                    format!("{p}.machines"),
                    "a station needs at least one machine",
                ));
            }
            for (k, m) in s.machines.iter().enumerate() {
                match f.machine(m) {
                    Some(mm) if mm.station_id == s.station_id => {}
                    _ => {
                        return Err(invalid(
                            format!("{p}.machines[{k}]"),
                            format!("machine {m} is not declared for this station"),
                        ))
                    }
                }
            }
        }
        let mut machine_ids = BTreeSet::new();
        for (i, m) in f.machines.iter().enumerate() {
            let p = format!("factory.machines[{i}]");
            if !is_token(&m.machine_id) || !machine_ids.insert(m.machine_id.as_str()) {
                return Err(invalid(format!("{p}.machine_id"), "must be a unique token"));
            }
            if !f
                .station(&m.station_id)
                .is_some_and(|s| s.machines.contains(&m.machine_id))
            {
                return Err(invalid(
                    format!("{p}.station_id"),
                    format!("station {} does not list this machine", m.station_id),
                ));
            }
            for (k, w) in m.failure_windows.iter().enumerate() {
                if !w.is_valid() {
                    return Err(invalid(
                        format!("{p}.failure_windows[{k}]"),
                        "end must exceed start",
                    ));
                }
                if k > 0 && m.failure_windows[k - 1].end > w.start {
                    return Err(invalid(
                        format!("{p}.failure_windows[{k}]"),
                        "windows must be sorted and disjoint",
                    ));
                }
            }
        }
        if f.transport.fleet_size == 0 {
            return Err(invalid(
                "factory.transport.fleet_size",
                "at least one transporter is required",
            ));
        }
        for (i, leg) in f.transport.travel.iter().enumerate() {
            let p = format!("factory.transport.travel[{i}]");
            if f.station(&leg.from).is_none() {
                return Err(invalid(
                    format!("{p}.from"),
                    format!("unknown station {}", leg.from),
                ));
            }
            if f.station(&leg.to).is_none() {
                return Err(invalid(
                    format!("{p}.to"),
                    format!("unknown station {}", leg.to),
                ));
            }
            if leg.minutes < 0 {
                return Err(invalid(
                    format!("{p}.minutes"),
                    "travel time must be non-negative",
                ));
            }
        }
        for (i, w) in f.warehouses.iter().enumerate() {
            if !is_token(w) {
                return Err(invalid(
                    format!("factory.warehouses[{i}]"),
                    "must be a token",
                ));
            }
        }

        let mut model_ids = BTreeSet::new();
        for (i, m) in self.models.iter().enumerate() {
            let p = format!("models[{i}]");
            if !is_token(&m.model_id) || !model_ids.insert(m.model_id.as_str()) {
                return Err(invalid(format!("{p}.model_id"), "must be a unique token"));
            }
            m.check().map_err(|e| invalid(format!("{p}.routing"), e))?;
            for (k, step) in m.routing.iter().enumerate() {
                if f.station_for(step.stage).is_none() {
                    return Err(invalid(
                        format!("{p}.routing[{k}].stage"),
                        format!("no station for {}", step.stage),
                    ));
                }
            }
        }

        let mut order_ids = BTreeSet::new();
        for (i, o) in self.orders.iter().enumerate() {
            let p = format!("orders[{i}]");
            if !order_ids.insert(o.order_id.as_str()) {
                return Err(invalid(
                    format!("{p}.order_id"),
                    format!("duplicate order id {}", o.order_id),
                ));
            }
            o.check().map_err(|e| invalid(p.clone(), e))?;
            if !model_ids.contains(o.model_id.as_str()) {
                return Err(invalid(
                    format!("{p}.model_id"),
                    format!("unknown model {}", o.model_id),
                ));
            }
        }

        for (i, d) in self.disturbances.iter().enumerate() {
            let p = format!("disturbances[{i}]");
            if f.machine(&d.machine_id).is_none() {
                return Err(invalid(
                    format!("{p}.machine_id"),
                    format!("unknown machine {}", d.machine_id),
                ));
            }
            if !d.window.is_valid() || d.window.start < 0 {
                return Err(invalid(
                    format!("{p}.window"),
                    "window must be non-negative with end > start",
                ));
            }
        }

        let pol = &self.policy;
        if pol.horizon <= 0 {
            return Err(invalid("policy.horizon", "must be positive"));
        }
        if pol.message_latency < 0 {
            return Err(invalid("policy.message_latency", "must be non-negative"));
        }
        if pol.decision_timeout.is_some_and(|t| t <= 0) {
            return Err(invalid("policy.decision_timeout", "must be positive"));
        }
        Ok(())
    }
}

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::ParseError {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    s.validate()?;
    Ok(s)
}

pub fn load_scenario_file(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    load_scenario(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "minimal",
        "factory": {
            "stations": [{"station_id": "S1", "stage": "Cutting", "machines": ["M1"]}],
            "machines": [{"machine_id": "M1", "station_id": "S1"}]
        },
        "models": [{"model_id": "m", "name": "Top light", "profile_tier": "Economic", "color": "grey",
                    "routing": [{"stage": "Cutting", "processing_time": 3}]}]
    }"#;

    #[test]
    fn minimal_document_loads_with_defaults() {
        let s = load_scenario(MINIMAL).unwrap();
        assert!(s.orders.is_empty());
        assert_eq!(s.factory.warehouses.len(), 4);
        assert_eq!(s.factory.transport.fleet_size, 1);
        assert_eq!(s.policy.horizon, DEFAULT_HORIZON);
    }

    #[test]
    fn missing_model_reports_field_path() {
        let mut v: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
        v["orders"] = serde_json::json!([
            {"order_id": "A", "model_id": "m", "quantity": 1, "release_time": 0, "due_date": 9, "deadline_class": "Soft", "source": "Initial"},
            {"order_id": "B", "model_id": "nope", "quantity": 1, "release_time": 0, "due_date": 9, "deadline_class": "Soft", "source": "Initial"}
        ]);
        let err = load_scenario(&v.to_string()).unwrap_err();
        assert_eq!(
            err,
            ScenarioError::ValidationError {
                path: "orders[1].model_id".into(),
                message: "unknown model nope".into()
            }
        );
    }

    #[test]
    fn syntax_error_has_position() {
        let err = load_scenario("{\n  \"name\": }").unwrap_err();
        assert!(
            matches!(err, ScenarioError::ParseError { line: 2, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn wrong_color_rejected() {
        let bad = MINIMAL.replace("\"grey\"", "\"walnut\"");
        assert!(matches!(
            load_scenario(&bad),
            Err(ScenarioError::ValidationError { .. })
        ));
    }

    #[test]
    fn round_trip_is_stable() {
        let s = load_scenario(MINIMAL).unwrap();
        let once = s.canonical_json();
        let again = load_scenario(&once).unwrap();
        assert_eq!(again, s);
        assert_eq!(again.canonical_json(), once);
        assert_eq!(again.content_hash(), s.content_hash());
    }

    #[test]
    fn bad_disturbance_machine() {
        let mut v: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
        v["disturbances"] =
            serde_json::json!([{"machine_id": "M9", "window": {"start": 1, "end": 5}}]);
        let err = load_scenario(&v.to_string()).unwrap_err();
        assert!(
            matches!(err, ScenarioError::ValidationError { ref path, .. } if path == "disturbances[0].machine_id")
        );
    }
}
