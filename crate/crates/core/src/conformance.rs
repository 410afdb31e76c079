//! Log-replay checks of the agent protocols: wiring, conversation
//! termination, the decision sequence pattern, message bounds and machine
//! state transitions.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::Serialize;

use crate::agents::{transition_allowed, MachineState};
use crate::domain::{Factory, Order, ProductModel};
use crate::runtime::{
    conversation_transition_allowed, wiring_allows, ConversationState, Message, Performative,
    Protocol,
};
use crate::scenario::EventLogRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ConformanceViolation {
    IllegalWiring {
        seq: u64,
        token: String,
        sender: String,
        receiver: String,
    },
    UnreadableRecord {
        seq: u64,
        kind: String,
    },
    NotTerminated {
        conversation_id: String,
        state: String,
    },
    IllegalConversationTransition {
        conversation_id: String,
        from: String,
        to: String,
    },
    SequenceMismatch {
        conversation_id: String,
        tokens: Vec<String>,
    },
    MessageBound {
        conversation_id: String,
        count: usize,
        bound: usize,
    },
    IllegalMachineTransition {
        seq: u64,
        machine_id: String,
        from: String,
        to: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConformanceReport {
    pub conversations: usize,
    pub messages: usize,
    pub violations: Vec<ConformanceViolation>,
}

impl ConformanceReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

const MACHINE_SIDE: &[&str] = &["MachineNegotiation.Query", "MachineNegotiation.Propose"];
const MHS_SIDE: &[&str] = &["MHsNegotiation.Query", "MHsNegotiation.Propose"];

static MAIN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(concat!(
        r"^Order\.Inform (",
        r"Shop\.Query NEG (",
        r"Shop\.Propose Order\.Propose (",
        r"Order\.AcceptProposal( Shop\.Confirm( (MachineNegotiation\.Confirm|MachineResource\.Request|MHsNegotiation\.Confirm|Resource\.Request))*)?",
        r"|Order\.RejectProposal Shop\.RejectProposal)",
        r"|Shop\.Refuse Order\.Refuse)",
        r"|Order\.Refuse)$",
    ))
    .expect("pattern")
});
static MACHINE_NEG: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^((MachineNegotiation\.Query )+(MachineResource\.\w+ )*(MachineNegotiation\.Propose )+)+$").expect("pattern")
});
static MHS_NEG: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^((MHsNegotiation\.Query )+(Resource\.\w+ )*(MHsNegotiation\.Propose )+)*$")
        .expect("pattern")
});

fn side_ok(tokens: &[&str], re: &Regex, query: &str, propose: &str) -> bool {
    let text: String = tokens.iter().map(|t| format!("{t} ")).collect();
    let q = tokens.iter().filter(|t| **t == query).count();
    let p = tokens.iter().filter(|t| **t == propose).count();
    re.is_match(&text) && q == p
}

/// True when one conversation's message tokens follow the decision
/// sequence: order notice, shop query, the machine negotiation in parallel
/// with the transport negotiation, plan, proposal, the manager's verdict and
/// the commit fan-out.
pub fn matches_decision_sequence(tokens: &[String]) -> bool {
    let neg_start = tokens.iter().position(|t| t == "Shop.Query").map(|i| i + 1);
    let mut main: Vec<&str> = Vec::with_capacity(tokens.len());
    match neg_start {
        None => main.extend(tokens.iter().map(String::as_str)),
        Some(s) => {
            let len = tokens[s..]
                .iter()
                .take_while(|t| t.as_str() != "Shop.Propose" && t.as_str() != "Shop.Refuse")
                .count();
            let block = &tokens[s..s + len];
            let machine: Vec<&str> = block
                .iter()
                .map(String::as_str)
                .filter(|t| MACHINE_SIDE.contains(t) || t.starts_with("MachineResource."))
                .collect();
            let mhs: Vec<&str> = block
                .iter()
                .map(String::as_str)
                .filter(|t| MHS_SIDE.contains(t) || t.starts_with("Resource."))
                .collect();
            if machine.len() + mhs.len() != block.len()
                || !side_ok(&machine, &MACHINE_NEG, MACHINE_SIDE[0], MACHINE_SIDE[1])
                || !side_ok(&mhs, &MHS_NEG, MHS_SIDE[0], MHS_SIDE[1])
            {
                return false;
            }
            main.extend(tokens[..s].iter().map(String::as_str));
            main.push("NEG");
            main.extend(tokens[s + len..].iter().map(String::as_str));
        }
    }
    MAIN.is_match(&main.join(" "))
}

/// Upper bound on messages up to the manager's decision for an order whose
/// routing visits `stations` stations with `machines` candidate machines.
pub fn message_bound(stations: usize, machines: usize) -> usize {
    2 + 2 * stations + 2 * machines + 3
}

fn is_decision(token: &str) -> bool {
    matches!(
        token,
        "Order.AcceptProposal" | "Order.RejectProposal" | "Order.Refuse"
    )
}

fn parse<T: serde::de::DeserializeOwned>(v: &serde_json::Value) -> Option<T> {
    serde_json::from_value(v.clone()).ok()
}

/// Replays a run log. `orders` seeds the order table; orders announced in
/// the log itself are added as they arrive.
pub fn check_log(
    records: &[EventLogRecord],
    factory: &Factory,
    models: &[ProductModel],
    orders: &[Order],
) -> ConformanceReport {
    let mut report = ConformanceReport::default();
    let mut order_table: BTreeMap<String, Order> = orders
        .iter()
        .map(|o| (o.order_id.clone(), o.clone()))
        .collect();
    let mut tokens: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut subject: BTreeMap<String, String> = BTreeMap::new();
    let mut states: BTreeMap<String, ConversationState> = BTreeMap::new();

    for r in records {
        match r.kind.as_str() {
            "OrderArrival" => {
                if let Some(o) = r.payload.get("order").and_then(parse::<Order>) {
                    order_table.insert(o.order_id.clone(), o);
                }
            }
            "MessageSent" => {
                let Some(msg) = r.payload.get("message").and_then(parse::<Message>) else {
                    report
                        .violations
                        .push(ConformanceViolation::UnreadableRecord {
                            seq: r.seq,
                            kind: r.kind.clone(),
                        });
                    continue;
                };
                report.messages += 1;
                if !wiring_allows(msg.protocol, msg.sender.role, msg.receiver.role) {
                    report.violations.push(ConformanceViolation::IllegalWiring {
                        seq: r.seq,
                        token: msg.token(),
                        sender: msg.sender.to_string(),
                        receiver: msg.receiver.to_string(),
                    });
                }
                let Some(cid) = msg.conversation_id.clone() else {
                    continue;
                };
                if msg.protocol == Protocol::Order && msg.performative == Performative::Inform {
                    if let crate::runtime::Body::NewOrder { order } = &msg.body {
                        subject.insert(cid.clone(), order.order_id.clone());
                        states
                            .entry(cid.clone())
                            .or_insert(ConversationState::Notified);
                    }
                }
                tokens.entry(cid).or_default().push(msg.token());
            }
            "ConversationState" => {
                let (Some(cid), Some(from), Some(to)) = (
                    r.conversation_id.clone(),
                    r.payload.get("from").and_then(parse::<ConversationState>),
                    r.payload.get("to").and_then(parse::<ConversationState>),
                ) else {
                    report
                        .violations
                        .push(ConformanceViolation::UnreadableRecord {
                            seq: r.seq,
                            kind: r.kind.clone(),
                        });
                    continue;
                };
                if !conversation_transition_allowed(from, to) {
                    report
                        .violations
                        .push(ConformanceViolation::IllegalConversationTransition {
                            conversation_id: cid.clone(),
                            from: format!("{from:?}"),
                            to: format!("{to:?}"),
                        });
                }
                states.insert(cid, to);
            }
            "MachineState" => {
                let (Some(m), Some(from), Some(to)) = (
                    r.payload.get("machine_id").and_then(|v| v.as_str()),
                    r.payload.get("from").and_then(parse::<MachineState>),
                    r.payload.get("to").and_then(parse::<MachineState>),
                ) else {
                    report
                        .violations
                        .push(ConformanceViolation::UnreadableRecord {
                            seq: r.seq,
                            kind: r.kind.clone(),
                        });
                    continue;
                };
                if !transition_allowed(from, to) {
                    report
                        .violations
                        .push(ConformanceViolation::IllegalMachineTransition {
                            seq: r.seq,
                            machine_id: m.to_string(),
                            from: from.label().to_string(),
                            to: to.label().to_string(),
                        });
                }
            }
            _ => {}
        }
    }

    report.conversations = states.len();
    for (cid, state) in &states {
        if !state.is_terminal() {
            report.violations.push(ConformanceViolation::NotTerminated {
                conversation_id: cid.clone(),
                state: format!("{state:?}"),
            });
        }
        let toks = tokens.get(cid).cloned().unwrap_or_default();
        if !matches_decision_sequence(&toks) {
            report
                .violations
                .push(ConformanceViolation::SequenceMismatch {
                    conversation_id: cid.clone(),
                    tokens: toks.clone(),
                });
        }
        let route = subject
            .get(cid)
            .and_then(|id| order_table.get(id))
            .and_then(|o| models.iter().find(|m| m.model_id == o.model_id))
            .map(|m| {
                let stations: Vec<_> = m
                    .routing
                    .iter()
                    .filter_map(|s| factory.station_for(s.stage))
                    .collect();
                (
                    stations.len(),
                    stations.iter().map(|s| s.machines.len()).sum::<usize>(),
                )
            });
        if let Some((s, q)) = route {
            let count = toks
                .iter()
                .position(|t| is_decision(t))
                .map(|i| i + 1)
                .unwrap_or(toks.len());
            let bound = message_bound(s, q);
            if count > bound {
                report.violations.push(ConformanceViolation::MessageBound {
                    conversation_id: cid.clone(),
                    count,
                    bound,
                });
            }
        }
    }
    report
}

/// Hard orders that finished late without being explained: each late Hard
/// order must carry a GuaranteeBrokenByDisturbance record, and a failure of a
/// machine on its route must precede that record. Returns the unexplained
/// order ids.
pub fn unexplained_hard_misses(
    records: &[EventLogRecord],
    schedule: &crate::domain::Schedule,
    factory: &Factory,
    models: &[ProductModel],
    orders: &[Order],
) -> Vec<String> {
    let mut table: BTreeMap<String, Order> = orders
        .iter()
        .map(|o| (o.order_id.clone(), o.clone()))
        .collect();
    for r in records.iter().filter(|r| r.kind == "OrderArrival") {
        if let Some(o) = r.payload.get("order").and_then(parse::<Order>) {
            table.insert(o.order_id.clone(), o);
        }
    }
    let completions = schedule.order_completions();
    let mut out = Vec::new();
    for (id, o) in &table {
        let late = o.deadline_class == crate::domain::DeadlineClass::Hard
            && completions.get(id).is_some_and(|&c| c > o.due_date);
        if !late {
            continue;
        }
        let route: Vec<&String> = models
            .iter()
            .find(|m| m.model_id == o.model_id)
            .map(|m| {
                m.routing
                    .iter()
                    .filter_map(|s| factory.station_for(s.stage))
                    .flat_map(|st| st.machines.iter())
                    .collect()
            })
            .unwrap_or_default();
        let flag = records.iter().position(|r| {
            r.kind == "GuaranteeBrokenByDisturbance"
                && r.payload.get("order_id").and_then(|v| v.as_str()) == Some(id)
        });
        let explained = flag.is_some_and(|i| {
            records[..i].iter().any(|r| {
                r.kind == "MachineFailure"
                    && r.payload
                        .get("machine_id")
                        .and_then(|v| v.as_str())
                        .is_some_and(|m| route.iter().any(|x| x.as_str() == m))
            })
        });
        if !explained {
            out.push(id.clone());
        }
    }
    out
}
