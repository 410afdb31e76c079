//! HTTP front end. One thread owns the session and alternates between
//! handling a request and ticking the clock.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Serialize;
use serde_json::{json, Value};
use tiny_http::{Header, Method, Request, Response, Server};

use super::{ClockCommand, CommandKind, Decision, GatewayError, LiveSession, OrderRequest};
use crate::scenario::EventLog;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Listen address; port 0 picks a free port.
    pub addr: String,
    pub poll: Duration,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:0".into(),
            poll: Duration::from_millis(20),
        }
    }
}

pub struct ServerHandle {
    pub port: u16,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<LiveSession>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }

    /// Stops serving and hands the session back.
    pub fn stop(mut self) -> LiveSession {
        self.stop.store(true, Ordering::SeqCst);
        self.thread
            .take()
            .expect("running")
            .join()
            .expect("server thread")
    }

    /// Blocks until the server thread exits.
    pub fn wait(mut self) -> LiveSession {
        self.thread
            .take()
            .expect("running")
            .join()
            .expect("server thread")
    }
}

pub fn serve(session: LiveSession, opts: ServeOptions) -> std::io::Result<ServerHandle> {
    let server = Server::http(&opts.addr).map_err(|e| std::io::Error::other(e.to_string()))?;
    let port = server.server_addr().to_ip().map(|a| a.port()).unwrap_or(0);
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let thread = std::thread::spawn(move || {
        let mut session = session;
        while !flag.load(Ordering::SeqCst) {
            if let Ok(Some(req)) = server.recv_timeout(opts.poll) {
                handle(&mut session, req);
            }
            // a failing tick leaves the clock where it was; the error is
            // visible to the next request
            let _ = session.tick();
        }
        session
    });
    Ok(ServerHandle {
        port,
        stop,
        thread: Some(thread),
    })
}

fn json_header() -> Header {
    Header::from_bytes("Content-Type", "application/json").expect("header")
}

fn reply<T: Serialize>(req: Request, status: u16, body: &T) {
    let text = serde_json::to_string(body).expect("serializable");
    let _ = req.respond(
        Response::from_string(text)
            .with_status_code(status)
            .with_header(json_header()),
    );
}

fn error(req: Request, e: &GatewayError) {
    reply(
        req,
        e.status(),
        &json!({"error": e.kind(), "message": e.to_string()}),
    );
}

fn body_text(req: &mut Request) -> Result<String, GatewayError> {
    let mut s = String::new();
    req.as_reader()
        .read_to_string(&mut s)
        .map_err(|e| GatewayError::BadRequest(e.to_string()))?;
    Ok(s)
}

fn query_param<'a>(url: &'a str, key: &str) -> Option<&'a str> {
    url.split_once('?')?.1.split('&').find_map(|kv| {
        kv.split_once('=')
            .filter(|(k, _)| *k == key)
            .map(|(_, v)| v)
    })
}

fn handle(session: &mut LiveSession, mut req: Request) {
    let url = req.url().to_string();
    let path = url
        .split('?')
        .next()
        .unwrap_or("")
        .trim_end_matches('/')
        .to_string();
    let segments: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();
    let method = req.method().clone();
    match (&method, segments.as_slice()) {
        (Method::Get, ["api", "state"]) => reply(req, 200, &session.snapshot()),
        (Method::Get, ["api", "schedule"]) => {
            let s = session.engine().schedule();
            let mut rows = s.entries.clone();
            rows.sort_by(|a, b| {
                (&a.machine_id, a.start, &a.op_id).cmp(&(&b.machine_id, b.start, &b.op_id))
            });
            reply(
                req,
                200,
                &json!({"schedule_version": s.version, "rows": rows}),
            );
        }
        (Method::Get, ["api", "proposals"]) => {
            reply(req, 200, &session.engine().pending_proposals())
        }
        (Method::Get, ["api", "commands"]) => reply(req, 200, &session.script()),
        (Method::Get, ["api", "events"]) => {
            let from = match query_param(&url, "from").map(str::parse::<usize>) {
                None => 0,
                Some(Ok(n)) => n,
                Some(Err(_)) => {
                    return error(
                        req,
                        &GatewayError::BadRequest("from must be a record index".into()),
                    )
                }
            };
            let body: String = session
                .engine()
                .log()
                .since(from)
                .iter()
                .map(|r| EventLog::line(r) + "\n")
                .collect();
            let header =
                Header::from_bytes("Content-Type", "application/x-ndjson").expect("header");
            let _ = req.respond(Response::from_string(body).with_header(header));
        }
        (Method::Post, ["api", "orders"]) => {
            let result = body_text(&mut req).and_then(|text| {
                let order: OrderRequest = serde_json::from_str(&text)
                    .map_err(|e| GatewayError::InvalidOrder(e.to_string()))?;
                session.inject(order)
            });
            match result {
                Ok(ack) => reply(req, 200, &ack),
                Err(e) => error(req, &e),
            }
        }
        (Method::Post, ["api", "proposals", id, "decision"]) => {
            let id = id.to_string();
            let result = body_text(&mut req).and_then(|text| {
                let v: Value = serde_json::from_str(&text)
                    .map_err(|e| GatewayError::BadRequest(e.to_string()))?;
                let decision: Decision = v
                    .get("decision")
                    .and_then(|d| serde_json::from_value(d.clone()).ok())
                    .ok_or_else(|| {
                        GatewayError::BadRequest(
                            "decision must be \"confirm\" or \"reject\"".into(),
                        )
                    })?;
                session.apply(CommandKind::Decide {
                    proposal_id: id,
                    decision,
                })
            });
            match result {
                Ok(ack) => reply(req, 200, &ack),
                Err(e) => error(req, &e),
            }
        }
        (Method::Post, ["api", "clock"]) => {
            let result = body_text(&mut req).and_then(|text| {
                // plain `step:5` or a JSON string / {"command": "step:5"}
                let command = match serde_json::from_str::<Value>(&text) {
                    Ok(Value::String(s)) => s,
                    Ok(Value::Object(o)) => o
                        .get("command")
                        .and_then(|c| c.as_str())
                        .unwrap_or_default()
                        .to_string(),
                    _ => text,
                };
                let c = ClockCommand::parse(&command)?;
                session.apply(CommandKind::Clock(c))
            });
            match result {
                Ok(ack) => reply(req, 200, &ack),
                Err(e) => error(req, &e),
            }
        }
        _ => reply(
            req,
            404,
            &json!({"error": "NotFound", "message": format!("no route {method} {path}")}),
        ),
    }
}
