//! Out-of-process backends.
//!
//! Two transports carry the same JSON messages. Over HTTP a generation is
//! `POST /generate` with a [`GenerateRequest`] body answered by a
//! [`MeshResponse`]; prompt segmentation is `POST /segment_prompt`. Over a
//! subprocess every request is one line on stdin tagged with an `id` and a
//! `method`, and every response is one line on stdout carrying the same
//! `id`, so responses may arrive in any order.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::SocketAddr;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{GenerationJob, GenerationResult, GeneratorBackend};
use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud, TriMesh, Vector};
use crate::segmentation::{MaskCandidate, SegmenterBackend};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub part_id: u32,
    pub points: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normals: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    pub seed: u64,
}

impl GenerateRequest {
    pub fn from_job(job: &GenerationJob) -> Self {
        let (points, normals) = encode_cloud(&job.prompt_cloud);
        Self {
            part_id: job.part_id,
            points,
            normals,
            seed: job.seed,
        }
    }

    pub fn into_job(self) -> Result<GenerationJob> {
        Ok(GenerationJob {
            part_id: self.part_id,
            prompt_cloud: decode_cloud(self.points, self.normals)?,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshResponse {
    pub vertices: Vec<[f64; 3]>,
    /// 0-based vertex indices.
    pub faces: Vec<[u32; 3]>,
}

impl MeshResponse {
    pub fn from_mesh(mesh: &TriMesh) -> Self {
        Self {
            vertices: mesh.vertices().iter().map(|p| [p.x, p.y, p.z]).collect(),
            faces: mesh.faces().to_vec(),
        }
    }

    pub fn into_mesh(self) -> Result<TriMesh> {
        TriMesh::new(self.vertices.into_iter().map(Point::from).collect(), self.faces)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPromptRequest {
    pub points: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normals: Option<Vec<[f64; 3]>>,
    pub prompt_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireCandidate {
    pub mask: Vec<bool>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPromptResponse {
    pub candidates: Vec<WireCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Request {
    Generate(GenerateRequest),
    SegmentPrompt(SegmentPromptRequest),
}

#[derive(Debug, Serialize, Deserialize)]
struct RequestEnvelope {
    id: u64,
    #[serde(flatten)]
    request: Request,
}

#[derive(Debug, Serialize, Deserialize)]
struct ResponseEnvelope {
    id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(flatten)]
    body: Map<String, Value>,
}

fn encode_cloud(cloud: &PointCloud) -> (Vec<[f64; 3]>, Option<Vec<[f64; 3]>>) {
    (
        cloud.positions().iter().map(|p| [p.x, p.y, p.z]).collect(),
        cloud.normals().map(|ns| ns.iter().map(|n| [n.x, n.y, n.z]).collect()),
    )
}

fn decode_cloud(points: Vec<[f64; 3]>, normals: Option<Vec<[f64; 3]>>) -> Result<PointCloud> {
    PointCloud::new(
        points.into_iter().map(Point::from).collect(),
        normals.map(|ns| ns.into_iter().map(Vector::from).collect()),
    )
}

fn from_value<T: DeserializeOwned>(value: Value, context: &str) -> Result<T> {
    serde_json::from_value(value).map_err(|e| Error::backend(context, format!("malformed response: {e}")))
}

/// Answers wire requests with in-process backends.
#[derive(Clone)]
pub struct WireService {
    generator: Arc<dyn GeneratorBackend>,
    segmenter: Option<Arc<dyn SegmenterBackend>>,
}

impl WireService {
    pub fn new(generator: Arc<dyn GeneratorBackend>) -> Self {
        Self {
            generator,
            segmenter: None,
        }
    }

    pub fn with_segmenter(mut self, segmenter: Arc<dyn SegmenterBackend>) -> Self {
        self.segmenter = Some(segmenter);
        self
    }

    pub fn handle(&self, request: Request) -> Result<Value> {
        match request {
            Request::Generate(req) => {
                let result = self.generator.generate(&req.into_job()?)?;
                Ok(serde_json::to_value(MeshResponse::from_mesh(&result.mesh))?)
            }
            Request::SegmentPrompt(req) => {
                let segmenter = self
                    .segmenter
                    .as_ref()
                    .ok_or_else(|| Error::InvalidParameter("no segmenter configured".into()))?;
                let cloud = decode_cloud(req.points, req.normals)?;
                let candidates = segmenter
                    .segment_prompt(&cloud, req.prompt_index)?
                    .into_iter()
                    .map(|c| WireCandidate {
                        mask: c.mask,
                        score: c.score,
                    })
                    .collect();
                Ok(serde_json::to_value(SegmentPromptResponse { candidates })?)
            }
        }
    }

    /// Handles one NDJSON request line and returns the response line.
    pub fn handle_line(&self, line: &str) -> String {
        let response = match serde_json::from_str::<Value>(line) {
            Err(e) => error_envelope(0, format!("malformed request: {e}")),
            Ok(value) => {
                let id = value.get("id").and_then(Value::as_u64).unwrap_or(0);
                match serde_json::from_value::<RequestEnvelope>(value) {
                    Err(e) => error_envelope(id, format!("malformed request: {e}")),
                    Ok(env) => match self.handle(env.request) {
                        Ok(Value::Object(body)) => ResponseEnvelope {
                            id,
                            error: None,
                            body,
                        },
                        Ok(_) => error_envelope(id, "non-object response".into()),
                        Err(e) => error_envelope(id, e.to_string()),
                    },
                }
            }
        };
        serde_json::to_string(&response).expect("response serializes")
    }
}

fn error_envelope(id: u64, message: String) -> ResponseEnvelope {
    ResponseEnvelope {
        id,
        error: Some(message),
        body: Map::new(),
    }
}

/// Serves NDJSON requests until `input` ends. Each request runs on its own
/// thread; responses are written as they complete.
pub fn serve_ndjson(input: impl BufRead, output: impl Write + Send, service: &WireService) -> Result<()> {
    let output = Mutex::new(output);
    thread::scope(|scope| -> Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let output = &output;
            scope.spawn(move || {
                let response = service.handle_line(&line);
                let mut out = output.lock().expect("output lock");
                // A closed stdout means the client is gone; nothing to report to.
                let _ = writeln!(out, "{response}").and_then(|_| out.flush());
            });
        }
        Ok(())
    })
}

/// A running HTTP front end for a [`WireService`].
pub struct HttpServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    acceptor: Option<JoinHandle<()>>,
}

impl HttpServer {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub fn bind(addr: &str, service: WireService) -> Result<Self> {
        let server = tiny_http::Server::http(addr).map_err(|e| {
            Error::Io(std::io::Error::new(std::io::ErrorKind::AddrNotAvailable, e.to_string()))
        })?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::InvalidParameter("HTTP server needs an IP address".into()))?;
        let server = Arc::new(server);
        let acceptor = {
            let server = Arc::clone(&server);
            thread::spawn(move || {
                for request in server.incoming_requests() {
                    let service = service.clone();
                    thread::spawn(move || respond(request, &service));
                }
            })
        };
        Ok(Self {
            server,
            addr,
            acceptor: Some(acceptor),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Serves until the process ends.
    pub fn join(mut self) {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

fn respond(mut request: tiny_http::Request, service: &WireService) {
    let mut body = String::new();
    let parsed = request
        .as_reader()
        .read_to_string(&mut body)
        .map_err(|e| e.to_string())
        .and_then(|_| {
            let route = (request.method().clone(), request.url().trim_end_matches('/'));
            match route {
                (tiny_http::Method::Post, "/generate") => serde_json::from_str(&body)
                    .map(Request::Generate)
                    .map_err(|e| e.to_string()),
                (tiny_http::Method::Post, "/segment_prompt") => serde_json::from_str(&body)
                    .map(Request::SegmentPrompt)
                    .map_err(|e| e.to_string()),
                _ => Err(String::new()),
            }
        });
    let (status, payload) = match parsed {
        Err(message) if message.is_empty() => (404, serde_json::json!({"error": "not found"})),
        Err(message) => (400, serde_json::json!({ "error": message })),
        Ok(req) => match service.handle(req) {
            Ok(value) => (200, value),
            Err(Error::UnknownPart(id)) => (404, serde_json::json!({ "error": format!("unknown part {id}") })),
            Err(e) => (500, serde_json::json!({ "error": e.to_string() })),
        },
    };
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
    let response = tiny_http::Response::from_string(payload.to_string())
        .with_status_code(status)
        .with_header(header);
    let _ = request.respond(response);
}

/// Generator and segmenter reached over HTTP.
pub struct HttpBackend {
    base: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(url: &str, timeout: Duration) -> Self {
        let base = url.trim_end_matches('/').trim_end_matches("/generate").to_string();
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self { base, agent }
    }

    fn post<T: DeserializeOwned>(&self, route: &str, body: &impl Serialize, context: &str) -> Result<T> {
        let url = format!("{}{route}", self.base);
        match self.agent.post(&url).send_json(body) {
            Ok(resp) => {
                let value: Value = resp
                    .into_json()
                    .map_err(|e| Error::backend(context, format!("unreadable response: {e}")))?;
                from_value(value, context)
            }
            Err(ureq::Error::Status(code, resp)) => {
                let detail = resp.into_string().unwrap_or_default();
                Err(Error::backend(context, format!("HTTP {code}: {detail}")))
            }
            Err(ureq::Error::Transport(t)) => match t.kind() {
                ureq::ErrorKind::ConnectionFailed | ureq::ErrorKind::Dns | ureq::ErrorKind::InvalidUrl => {
                    Err(Error::BackendUnreachable {
                        endpoint: url,
                        message: t.to_string(),
                    })
                }
                _ => Err(Error::backend(context, t.to_string())),
            },
        }
    }
}

impl GeneratorBackend for HttpBackend {
    fn generate(&self, job: &GenerationJob) -> Result<GenerationResult> {
        let started = Instant::now();
        let context = format!("part {}", job.part_id);
        let resp: MeshResponse = self.post("/generate", &GenerateRequest::from_job(job), &context)?;
        Ok(GenerationResult {
            part_id: job.part_id,
            mesh: resp.into_mesh()?,
            backend_latency: started.elapsed(),
        })
    }
}

impl SegmenterBackend for HttpBackend {
    fn segment_prompt(&self, cloud: &PointCloud, prompt_index: usize) -> Result<Vec<MaskCandidate>> {
        let (points, normals) = encode_cloud(cloud);
        let req = SegmentPromptRequest {
            points,
            normals,
            prompt_index,
        };
        let resp: SegmentPromptResponse = self.post("/segment_prompt", &req, &format!("prompt {prompt_index}"))?;
        Ok(candidates(resp, prompt_index))
    }
}

fn candidates(resp: SegmentPromptResponse, prompt_index: usize) -> Vec<MaskCandidate> {
    resp.candidates
        .into_iter()
        .map(|c| MaskCandidate {
            mask: c.mask,
            score: c.score,
            prompt_index,
        })
        .collect()
}

struct Shared {
    stdin: Mutex<ChildStdin>,
    pending: Mutex<HashMap<u64, Sender<ResponseEnvelope>>>,
    alive: AtomicBool,
}

/// Generator and segmenter running as a child process speaking NDJSON.
pub struct SubprocessBackend {
    shared: Arc<Shared>,
    child: Mutex<Child>,
    reader: Option<JoinHandle<()>>,
    next_id: AtomicU64,
    timeout: Duration,
    command: String,
}

impl SubprocessBackend {
    pub fn spawn(program: &str, args: &[String], timeout: Duration) -> Result<Self> {
        let command = std::iter::once(program.to_string()).chain(args.iter().cloned()).collect::<Vec<_>>().join(" ");
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::BackendUnreachable {
                endpoint: command.clone(),
                message: e.to_string(),
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let shared = Arc::new(Shared {
            stdin: Mutex::new(stdin),
            pending: Mutex::new(HashMap::new()),
            alive: AtomicBool::new(true),
        });
        let reader = {
            let shared = Arc::clone(&shared);
            thread::spawn(move || read_responses(stdout, &shared))
        };
        Ok(Self {
            shared,
            child: Mutex::new(child),
            reader: Some(reader),
            next_id: AtomicU64::new(1),
            timeout,
            command,
        })
    }

    fn call<T: DeserializeOwned>(&self, request: Request, context: &str) -> Result<T> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = mpsc::channel();
        self.shared.pending.lock().expect("pending lock").insert(id, tx);
        let gone = |message: String| Error::BackendUnreachable {
            endpoint: self.command.clone(),
            message,
        };
        if !self.shared.alive.load(Ordering::SeqCst) {
            self.shared.pending.lock().expect("pending lock").remove(&id);
            return Err(gone("backend process exited".into()));
        }
        let line = serde_json::to_string(&RequestEnvelope { id, request })?;
        {
            let mut stdin = self.shared.stdin.lock().expect("stdin lock");
            if let Err(e) = writeln!(stdin, "{line}").and_then(|_| stdin.flush()) {
                self.shared.pending.lock().expect("pending lock").remove(&id);
                return Err(gone(e.to_string()));
            }
        }
        match rx.recv_timeout(self.timeout) {
            Ok(env) => match env.error {
                Some(message) => Err(Error::backend(context, message)),
                None => from_value(Value::Object(env.body), context),
            },
            Err(RecvTimeoutError::Timeout) => {
                self.shared.pending.lock().expect("pending lock").remove(&id);
                Err(Error::backend(context, format!("timed out after {:?}", self.timeout)))
            }
            Err(RecvTimeoutError::Disconnected) => Err(gone("backend process exited".into())),
        }
    }
}

fn read_responses(stdout: impl Read, shared: &Shared) {
    for line in BufReader::new(stdout).lines() {
        let Ok(line) = line else { break };
        let Ok(env) = serde_json::from_str::<ResponseEnvelope>(&line) else {
            continue;
        };
        if let Some(tx) = shared.pending.lock().expect("pending lock").remove(&env.id) {
            let _ = tx.send(env);
        }
    }
    shared.alive.store(false, Ordering::SeqCst);
    shared.pending.lock().expect("pending lock").clear();
}

impl GeneratorBackend for SubprocessBackend {
    fn generate(&self, job: &GenerationJob) -> Result<GenerationResult> {
        let started = Instant::now();
        let context = format!("part {}", job.part_id);
        let resp: MeshResponse = self.call(Request::Generate(GenerateRequest::from_job(job)), &context)?;
        Ok(GenerationResult {
            part_id: job.part_id,
            mesh: resp.into_mesh()?,
            backend_latency: started.elapsed(),
        })
    }
}

impl SegmenterBackend for SubprocessBackend {
    fn segment_prompt(&self, cloud: &PointCloud, prompt_index: usize) -> Result<Vec<MaskCandidate>> {
        let (points, normals) = encode_cloud(cloud);
        let req = Request::SegmentPrompt(SegmentPromptRequest {
            points,
            normals,
            prompt_index,
        });
        let resp: SegmentPromptResponse = self.call(req, &format!("prompt {prompt_index}"))?;
        Ok(candidates(resp, prompt_index))
    }
}

impl Drop for SubprocessBackend {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            let _ = child.kill();
            let _ = child.wait();
        }
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}
