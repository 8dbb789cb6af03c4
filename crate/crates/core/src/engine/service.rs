use std::io::Read;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use tiny_http::{Header, Method, Request, Response, Server};

use super::runtime::{Channels, Engine, QueryOptions};
use crate::error::{Error, Result};
use crate::fusion::AlphaMode;

/// One line of a `/query` response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum QueryEvent {
    Hit {
        rank: usize,
        doc_ref: u32,
        chunk_id: String,
        doc_id: String,
        score: f64,
        channel: String,
    },
    Done {
        latency_ms: f64,
        cache_hit: bool,
        hits: usize,
        generation: u64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryBody {
    #[serde(alias = "query")]
    q: String,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    alpha_mode: Option<AlphaMode>,
    #[serde(default)]
    no_cache: bool,
    #[serde(default)]
    channels: Option<Channels>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestBody {
    corpus: PathBuf,
}

/// Encode events as newline-delimited JSON.
pub fn ndjson(events: &[QueryEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    out
}

/// Run one query and produce its event stream; a not-ready engine yields a
/// bare `done`.
pub fn query_events(engine: &Engine, text: &str, opts: &QueryOptions) -> Result<Vec<QueryEvent>> {
    let t0 = Instant::now();
    let (mut events, cache_hit, generation) = match engine.query(text, opts) {
        Ok(res) => {
            let snap = engine.snapshot();
            let views = engine.views(&snap, &res.hits)?;
            let events = views
                .into_iter()
                .map(|v| QueryEvent::Hit {
                    rank: v.rank,
                    doc_ref: v.doc_ref,
                    chunk_id: v.chunk_id,
                    doc_id: v.doc_id,
                    score: v.score,
                    channel: v.channel.as_str().to_string(),
                })
                .collect();
            (events, res.cache_hit, res.generation)
        }
        Err(Error::NotReady(_)) => (Vec::new(), false, engine.snapshot().generation),
        Err(e) => return Err(e),
    };
    let hits = events.len();
    events.push(QueryEvent::Done {
        latency_ms: t0.elapsed().as_secs_f64() * 1e3,
        cache_hit,
        hits,
        generation,
    });
    Ok(events)
}

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("static header")
}

fn json_response(status: u16, body: serde_json::Value) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_data(serde_json::to_vec(&body).expect("json"))
        .with_status_code(status)
        .with_header(header("Content-Type", "application/json"))
}

fn read_body<T: for<'de> Deserialize<'de>>(req: &mut Request) -> std::result::Result<T, String> {
    let mut buf = Vec::new();
    req.as_reader()
        .take(1 << 20)
        .read_to_end(&mut buf)
        .map_err(|e| format!("unreadable body: {e}"))?;
    serde_json::from_slice(&buf).map_err(|e| format!("malformed request body: {e}"))
}

fn handle(engine: &Arc<Engine>, mut req: Request) {
    let path = req.url().split('?').next().unwrap_or("").to_string();
    let method = req.method().clone();
    let resp = match (method, path.as_str()) {
        (Method::Get, "/health") => {
            let snap = engine.snapshot();
            json_response(
                200,
                json!({
                    "status": "ok",
                    "generation": snap.generation,
                    "ready": snap.is_ready(),
                    "writer": engine.write_lock().holder(),
                }),
            )
        }
        (Method::Get, "/stats") => json_response(200, engine.stats()),
        (Method::Get, p) if p.starts_with("/jobs/") => match engine.job(&p["/jobs/".len()..]) {
            Some(s) => json_response(200, serde_json::to_value(s).unwrap_or_default()),
            None => json_response(404, json!({ "error": "unknown job" })),
        },
        (Method::Post, "/query") => match read_body::<QueryBody>(&mut req) {
            Err(e) => json_response(400, json!({ "error": e })),
            Ok(b) if b.q.trim().is_empty() => json_response(400, json!({ "error": "empty query" })),
            Ok(b) => {
                let opts = QueryOptions {
                    k: b.k.unwrap_or(10),
                    alpha_mode: b.alpha_mode.unwrap_or_default(),
                    use_cache: !b.no_cache,
                    rerank: false,
                    channels: b.channels.unwrap_or_default(),
                };
                match query_events(engine, &b.q, &opts) {
                    Ok(events) => Response::from_data(ndjson(&events).into_bytes())
                        .with_status_code(200)
                        .with_header(header("Content-Type", "application/x-ndjson")),
                    Err(e) => json_response(500, json!({ "error": e.to_string() })),
                }
            }
        },
        (Method::Post, "/ingest") => match read_body::<IngestBody>(&mut req) {
            Err(e) => json_response(400, json!({ "error": e })),
            Ok(b) if !b.corpus.is_dir() => json_response(
                400,
                json!({ "error": format!("corpus {} is not a directory", b.corpus.display()) }),
            ),
            Ok(b) => match engine.spawn_ingest(b.corpus) {
                Ok(job) => json_response(202, json!({ "job": job, "status": "accepted" })),
                Err(Error::WouldBlock) => json_response(
                    409,
                    json!({ "error": "another write job holds the lock", "holder": engine.write_lock().holder() }),
                ),
                Err(e) => json_response(500, json!({ "error": e.to_string() })),
            },
        },
        _ => json_response(404, json!({ "error": format!("no route for {path}") })),
    };
    if let Err(e) = req.respond(resp) {
        log::debug!("client went away: {e}");
    }
}

/// A running HTTP service; stops on [`Service::shutdown`] or drop.
pub struct Service {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl Service {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Block until the process is killed.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_all();
    }

    fn stop_all(&mut self) {
        self.stop.store(true, Ordering::Release);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.stop_all();
    }
}

/// Bind `addr` and answer requests on `workers` threads plus one spare so
/// health checks are not queued behind queries. A governor thread runs the
/// idle-unload policy once per second.
pub fn serve(engine: Arc<Engine>, addr: &str, workers: usize) -> Result<Service> {
    let server = Server::http(addr).map_err(|e| Error::InvalidConfig(format!("cannot bind {addr}: {e}")))?;
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::InvalidConfig(format!("{addr} is not an IP address")))?;
    let server = Arc::new(server);
    let stop = Arc::new(AtomicBool::new(false));
    let mut threads = Vec::new();
    for i in 0..workers.max(1) + 1 {
        let (server, engine, stop) = (Arc::clone(&server), Arc::clone(&engine), Arc::clone(&stop));
        threads.push(
            std::thread::Builder::new()
                .name(format!("http-{i}"))
                .spawn(move || {
                    while !stop.load(Ordering::Acquire) {
                        match server.recv_timeout(Duration::from_millis(100)) {
                            Ok(Some(req)) => handle(&engine, req),
                            Ok(None) => {}
                            Err(e) => log::warn!("accept failed: {e}"),
                        }
                    }
                })
                .map_err(Error::RawIo)?,
        );
    }
    let (gov_engine, gov_stop) = (Arc::clone(&engine), Arc::clone(&stop));
    threads.push(
        std::thread::Builder::new()
            .name("governor".into())
            .spawn(move || {
                while !gov_stop.load(Ordering::Acquire) {
                    for (c, a) in gov_engine.governor_tick() {
                        log::info!("governor: {c} {a:?}");
                    }
                    std::thread::sleep(Duration::from_millis(250));
                }
            })
            .map_err(Error::RawIo)?,
    );
    Ok(Service {
        addr: bound,
        stop,
        threads,
    })
}
