//! The simulator as a local HTTP service.
//!
//! Routes:
//! - `GET /generate-random-scenario[?seed=N&kind=K]` returns a new scenario
//!   document and registers it.
//! - `GET /evaluate?scenario=<id>` returns `{success, task_progress, subgoals_hit}`.
//! - `GET /?scenario=<id>` returns the current page as `{url, observation}`.
//! - `POST /act?scenario=<id>` takes one action line as the body and returns
//!   the resulting page.
//! - `POST /reset?scenario=<id>` restores the initial page.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};
use webstack_core::action::parse_action;
use webstack_core::env::EnvError;
use webstack_core::observation::{serialize_elements, Observation};

use crate::scenario::{generate_with, ScenarioKind};
use crate::simulator::CrmSimulator;

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Value,
}

fn reply(status: u16, body: Value) -> HttpResponse {
    HttpResponse { status, body }
}

fn error(status: u16, message: impl Into<String>) -> HttpResponse {
    reply(status, json!({ "error": message.into() }))
}

fn page(obs: &Observation) -> Value {
    json!({ "url": obs.url, "observation": serialize_elements(obs) })
}

fn env_error(e: EnvError) -> HttpResponse {
    match e {
        EnvError::UnknownScenario(_) => error(404, e.to_string()),
        EnvError::Other(_) => error(500, e.to_string()),
        _ => error(400, e.to_string()),
    }
}

/// Routes one request. `base_url` is used for the URLs of new scenarios.
pub fn handle(sim: &CrmSimulator, base_url: &str, method: &str, target: &str, body: &str) -> HttpResponse {
    let (path, query) = target.split_once('?').unwrap_or((target, ""));
    let params: HashMap<String, String> = url::form_urlencoded::parse(query.as_bytes())
        .into_owned()
        .collect();
    let scenario_id = || {
        params
            .get("scenario")
            .cloned()
            .ok_or_else(|| error(400, "missing `scenario` parameter"))
    };
    let result = match (method, path) {
        ("GET", "/generate-random-scenario") => (|| {
            let seed = match params.get("seed") {
                Some(s) => s.parse::<u64>().map_err(|_| error(400, format!("bad seed `{s}`")))?,
                None => SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_nanos() as u64)
                    .unwrap_or(0),
            };
            let kind = match params.get("kind") {
                Some(k) => Some(k.parse::<ScenarioKind>().map_err(|e| error(400, e.to_string()))?),
                None => None,
            };
            let scenario = generate_with(seed, kind, base_url);
            sim.register(scenario.clone()).map_err(env_error)?;
            Ok(reply(200, serde_json::to_value(&scenario).expect("scenario serializes")))
        })(),
        ("GET", "/evaluate") => scenario_id().and_then(|id| {
            let r = sim.evaluate(&id).map_err(env_error)?;
            Ok(reply(
                200,
                json!({
                    "success": r.success,
                    "task_progress": r.task_progress,
                    "subgoals_hit": r.subgoals_hit,
                }),
            ))
        }),
        ("GET", "/") => scenario_id().and_then(|id| {
            let obs = sim.observe(&id).map_err(env_error)?;
            Ok(reply(200, page(&obs)))
        }),
        ("POST", "/act") => scenario_id().and_then(|id| {
            let action = parse_action(body, &Default::default()).map_err(|e| error(400, e.to_string()))?;
            let obs = sim.apply(&id, &action).map_err(env_error)?;
            Ok(reply(200, page(&obs)))
        }),
        ("POST", "/reset") => scenario_id().and_then(|id| {
            let obs = sim.reset(&id).map_err(env_error)?;
            Ok(reply(200, page(&obs)))
        }),
        _ => Err(error(404, format!("no route for {method} {path}"))),
    };
    result.unwrap_or_else(|e| e)
}

/// A running service; stopped on drop.
pub struct CrmServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    worker: Option<JoinHandle<()>>,
}

impl CrmServer {
    /// Binds `addr` (e.g. `127.0.0.1:0`) and serves requests on a background
    /// thread. Requests are handled one at a time.
    pub fn start(sim: Arc<CrmSimulator>, addr: &str) -> std::io::Result<CrmServer> {
        let server = tiny_http::Server::http(addr).map_err(|e| std::io::Error::other(e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("not an IP listener"))?;
        let server = Arc::new(server);
        let base_url = format!("http://{addr}");
        let worker_server = server.clone();
        let worker = std::thread::spawn(move || {
            for mut request in worker_server.incoming_requests() {
                let mut body = String::new();
                let response = match request.as_reader().read_to_string(&mut body) {
                    Ok(_) => handle(
                        &sim,
                        &base_url,
                        request.method().as_str(),
                        request.url(),
                        body.trim(),
                    ),
                    Err(e) => error(400, e.to_string()),
                };
                let header =
                    tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).unwrap();
                let out = tiny_http::Response::from_string(response.body.to_string())
                    .with_status_code(response.status)
                    .with_header(header);
                let _ = request.respond(out);
            }
        });
        Ok(CrmServer {
            server,
            addr,
            worker: Some(worker),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Serves until the process ends.
    pub fn join(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for CrmServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generate_then_evaluate() {
        let sim = CrmSimulator::new();
        let r = handle(&sim, "http://h", "GET", "/generate-random-scenario?seed=3&kind=FIND_FLIGHT", "");
        assert_eq!(r.status, 200);
        let id = r.body["id"].as_str().unwrap().to_string();
        assert_eq!(r.body["url"], format!("http://h/?scenario={id}"));
        let keys: Vec<&str> = r.body.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys.len(), 4);
        let e = handle(&sim, "http://h", "GET", &format!("/evaluate?scenario={id}"), "");
        assert_eq!(e.body, json!({"success": 0, "task_progress": 0.0, "subgoals_hit": []}));
    }

    #[test]
    fn act_and_errors() {
        let sim = CrmSimulator::new();
        let sc = sim.generate(1, Some(ScenarioKind::FindFlight));
        let r = handle(&sim, "", "POST", &format!("/act?scenario={}", sc.id), "type [11] [JFK] [0]");
        assert_eq!(r.status, 200);
        assert!(r.body["observation"].as_str().unwrap().contains(">JFK</input_text>"));
        assert_eq!(handle(&sim, "", "POST", &format!("/act?scenario={}", sc.id), "click [999]").status, 400);
        assert_eq!(handle(&sim, "", "GET", "/evaluate?scenario=nope", "").status, 404);
        assert_eq!(handle(&sim, "", "GET", "/evaluate", "").status, 400);
        assert_eq!(handle(&sim, "", "GET", "/nowhere", "").status, 404);
        assert_eq!(handle(&sim, "", "GET", "/generate-random-scenario?kind=FLY", "").status, 400);
    }
}
