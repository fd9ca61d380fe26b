//! Wire protocol for remote backends: tools, policies, and generators.
//!
//! Two transports carry identical JSON payloads. HTTP posts each request to a
//! role-specific path under the endpoint; a subprocess backend serves exactly
//! one role and exchanges newline-delimited JSON over its stdio, so no path
//! or envelope is needed there.
//!
//! All rectangle coordinates on the wire are in the request's viewport frame:
//! scene units with the origin at the viewport's top-left corner. The engine
//! offsets responses back into scene coordinates. The attached PNG render is
//! advisory input for the backend; its pixel resolution does not affect the
//! coordinate contract.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("remote endpoint `{endpoint}` failed: {message}")]
    Transport { endpoint: String, message: String },
    #[error("remote endpoint `{endpoint}` sent an invalid response: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("remote endpoint `{endpoint}` reported: {0}", endpoint = .1)]
    Backend(String, String),
}

/// How to reach one remote backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "transport")]
pub enum RemoteTransport {
    /// Base URL; the engine appends `/v1/...` role paths.
    Http { endpoint: String },
    /// Command line to spawn; the child speaks NDJSON on stdio.
    Subprocess { command: Vec<String> },
}

impl RemoteTransport {
    /// Human-readable address used in error messages.
    pub fn address(&self) -> String {
        match self {
            RemoteTransport::Http { endpoint } => endpoint.clone(),
            RemoteTransport::Subprocess { command } => command.join(" "),
        }
    }
}

fn default_max_in_flight() -> usize {
    1
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_render_px() -> u32 {
    448
}

/// A remote backend address plus transport limits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteEndpoint {
    #[serde(flatten)]
    pub transport: RemoteTransport,
    /// Requests allowed in flight at once; 1 serializes the endpoint.
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Longest side of the PNG render attached to requests.
    #[serde(default = "default_render_px")]
    pub render_px: u32,
}

impl RemoteEndpoint {
    pub fn http(endpoint: impl Into<String>) -> Self {
        Self {
            transport: RemoteTransport::Http {
                endpoint: endpoint.into(),
            },
            max_in_flight: default_max_in_flight(),
            timeout_ms: default_timeout_ms(),
            render_px: default_render_px(),
        }
    }

    pub fn subprocess(command: Vec<String>) -> Self {
        Self {
            transport: RemoteTransport::Subprocess { command },
            max_in_flight: default_max_in_flight(),
            timeout_ms: default_timeout_ms(),
            render_px: default_render_px(),
        }
    }
}

/// Annotation as serialized on the wire, in viewport-frame coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireAnnotation {
    pub kind: String,
    pub rect: [f64; 4],
}

/// View block shared by tool and policy requests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireView {
    /// Scene-coordinate viewport rectangle `[x0, y0, x1, y1]`.
    pub viewport: [f64; 4],
    pub annotations: Vec<WireAnnotation>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct WireArgs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_entity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub characters: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireToolRequest {
    pub tool: String,
    pub args: WireArgs,
    pub view: WireView,
    pub image_png_b64: String,
}

/// Tool output as serialized on the wire.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WireOutput {
    Image {
        #[serde(default)]
        marks: Vec<[f64; 4]>,
        #[serde(default)]
        highlights: Vec<[f64; 4]>,
    },
    Text {
        items: Vec<String>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireToolResponse {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<WireOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WirePolicyRequest {
    pub question: String,
    pub prior_sub_questions: Vec<String>,
    pub view: WireView,
    pub image_png_b64: String,
    /// Present only when the engine runs with context passthrough enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_outputs: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WirePolicyResponse {
    pub sub_question: String,
    pub tool: String,
    #[serde(default)]
    pub args: WireArgs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireQuestionRequest {
    pub head_profile: serde_json::Value,
    pub tail_profile: serde_json::Value,
    pub tool: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireQuestionResponse {
    pub sub_question: String,
    #[serde(default)]
    pub args: WireArgs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireCombineRequest {
    pub outer: String,
    pub inner: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireCombineResponse {
    pub question: String,
}

/// Role paths under an HTTP endpoint. Subprocess children are single-role
/// and receive the bare payload, so the path only matters for HTTP.
pub const PATH_TOOL_INVOKE: &str = "/v1/tool/invoke";
pub const PATH_POLICY_STEP: &str = "/v1/policy/step";
pub const PATH_GENERATE_QUESTION: &str = "/v1/generate/question";
pub const PATH_GENERATE_COMBINE: &str = "/v1/generate/combine";

/// Counting semaphore enforcing the per-endpoint in-flight limit.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().expect("semaphore lock");
        while *permits == 0 {
            permits = self.cv.wait(permits).expect("semaphore wait");
        }
        *permits -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.sem.permits.lock().expect("semaphore lock");
        *permits += 1;
        self.sem.cv.notify_one();
    }
}

struct ChildHandle {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Drop for ChildHandle {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// One live connection to a remote backend, respecting its in-flight limit.
///
/// Subprocess children are spawned lazily on first use and killed on drop.
pub struct RemoteClient {
    pub endpoint: RemoteEndpoint,
    limiter: Semaphore,
    agent: ureq::Agent,
    child: Mutex<Option<ChildHandle>>,
}

impl RemoteClient {
    pub fn new(endpoint: RemoteEndpoint) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms)))
            .build();
        Self {
            limiter: Semaphore::new(endpoint.max_in_flight),
            agent: config.into(),
            child: Mutex::new(None),
            endpoint,
        }
    }

    fn address(&self) -> String {
        self.endpoint.transport.address()
    }

    /// Sends one request and parses the JSON reply.
    pub fn exchange(
        &self,
        path: &str,
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, WireError> {
        let _permit = self.limiter.acquire();
        match &self.endpoint.transport {
            RemoteTransport::Http { endpoint } => {
                let url = format!("{}{}", endpoint.trim_end_matches('/'), path);
                let mut response =
                    self.agent
                        .post(&url)
                        .send_json(body)
                        .map_err(|e| WireError::Transport {
                            endpoint: self.address(),
                            message: e.to_string(),
                        })?;
                response
                    .body_mut()
                    .read_json()
                    .map_err(|e| WireError::Protocol {
                        endpoint: self.address(),
                        message: e.to_string(),
                    })
            }
            RemoteTransport::Subprocess { command } => {
                let mut slot = self.child.lock().expect("child lock");
                if slot.is_none() {
                    *slot = Some(self.spawn(command)?);
                }
                let handle = slot.as_mut().expect("child spawned above");
                let result = self.exchange_stdio(handle, body);
                if result.is_err() {
                    // A broken pipe poisons the child; drop it so the next
                    // call respawns instead of reading desynced frames.
                    *slot = None;
                }
                result
            }
        }
    }

    fn spawn(&self, command: &[String]) -> Result<ChildHandle, WireError> {
        let (program, args) = command.split_first().ok_or_else(|| WireError::Transport {
            endpoint: self.address(),
            message: "empty subprocess command".to_string(),
        })?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| WireError::Transport {
                endpoint: self.address(),
                message: format!("spawn failed: {e}"),
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ChildHandle {
            child,
            stdin,
            stdout,
        })
    }

    fn exchange_stdio(
        &self,
        handle: &mut ChildHandle,
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, WireError> {
        let mut line = serde_json::to_string(body).expect("request serializes");
        line.push('\n');
        handle
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| handle.stdin.flush())
            .map_err(|e| WireError::Transport {
                endpoint: self.address(),
                message: format!("write failed: {e}"),
            })?;
        let mut reply = String::new();
        let n = handle
            .stdout
            .read_line(&mut reply)
            .map_err(|e| WireError::Transport {
                endpoint: self.address(),
                message: format!("read failed: {e}"),
            })?;
        if n == 0 {
            return Err(WireError::Transport {
                endpoint: self.address(),
                message: "child closed stdout".to_string(),
            });
        }
        serde_json::from_str(&reply).map_err(|e| WireError::Protocol {
            endpoint: self.address(),
            message: e.to_string(),
        })
    }

    pub fn invoke_tool(&self, request: &WireToolRequest) -> Result<WireOutput, WireError> {
        let body = serde_json::to_value(request).expect("request serializes");
        let reply = self.exchange(PATH_TOOL_INVOKE, &body)?;
        let response: WireToolResponse =
            serde_json::from_value(reply).map_err(|e| WireError::Protocol {
                endpoint: self.address(),
                message: e.to_string(),
            })?;
        if !response.ok {
            return Err(WireError::Backend(
                self.address(),
                response
                    .error
                    .unwrap_or_else(|| "unspecified error".to_string()),
            ));
        }
        response.output.ok_or_else(|| WireError::Protocol {
            endpoint: self.address(),
            message: "ok response without output".to_string(),
        })
    }

    pub fn policy_step(
        &self,
        request: &WirePolicyRequest,
    ) -> Result<WirePolicyResponse, WireError> {
        let body = serde_json::to_value(request).expect("request serializes");
        let reply = self.exchange(PATH_POLICY_STEP, &body)?;
        serde_json::from_value(reply).map_err(|e| WireError::Protocol {
            endpoint: self.address(),
            message: e.to_string(),
        })
    }

    pub fn generate_question(
        &self,
        request: &WireQuestionRequest,
    ) -> Result<WireQuestionResponse, WireError> {
        let body = serde_json::to_value(request).expect("request serializes");
        let reply = self.exchange(PATH_GENERATE_QUESTION, &body)?;
        serde_json::from_value(reply).map_err(|e| WireError::Protocol {
            endpoint: self.address(),
            message: e.to_string(),
        })
    }

    pub fn generate_combine(
        &self,
        request: &WireCombineRequest,
    ) -> Result<WireCombineResponse, WireError> {
        let body = serde_json::to_value(request).expect("request serializes");
        let reply = self.exchange(PATH_GENERATE_COMBINE, &body)?;
        serde_json::from_value(reply).map_err(|e| WireError::Protocol {
            endpoint: self.address(),
            message: e.to_string(),
        })
    }
}

/// Converts a view into its wire form (viewport-frame coordinates).
pub fn view_to_wire(view: &crate::canvas::ViewState) -> WireView {
    let vp = view.viewport;
    WireView {
        viewport: [vp.x0, vp.y0, vp.x1, vp.y1],
        annotations: view
            .annotations
            .iter()
            .map(|a| WireAnnotation {
                kind: match a.kind {
                    crate::canvas::AnnotationKind::Mark => "mark".to_string(),
                    crate::canvas::AnnotationKind::Highlight => "highlight".to_string(),
                },
                rect: [
                    a.rect.x0 - vp.x0,
                    a.rect.y0 - vp.y0,
                    a.rect.x1 - vp.x0,
                    a.rect.y1 - vp.y0,
                ],
            })
            .collect(),
    }
}

/// Maps one viewport-frame rect from a response back into scene coordinates,
/// clipped to the viewport.
pub fn wire_rect_to_scene(
    rect: &[f64; 4],
    viewport: &crate::scene::BBox,
) -> Option<crate::scene::BBox> {
    let (x0, y0) = (rect[0].min(rect[2]), rect[1].min(rect[3]));
    let (x1, y1) = (rect[0].max(rect[2]), rect[1].max(rect[3]));
    let bbox = crate::scene::BBox::new(
        viewport.x0 + x0,
        viewport.y0 + y0,
        viewport.x0 + x1,
        viewport.y0 + y1,
    )
    .ok()?;
    Some(bbox.clamp_into(viewport))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canvas::{add_mark, full_view};
    use crate::scene::{BBox, Scene};

    fn scene() -> Scene {
        Scene {
            id: "s".into(),
            width: 100,
            height: 80,
            image_ref: None,
            caption: None,
            entities: vec![],
        }
    }

    #[test]
    fn wire_view_uses_viewport_frame() {
        let s = scene();
        let v = full_view(&s);
        let v = crate::canvas::crop_zoom(&v, BBox::new(10.0, 20.0, 60.0, 70.0).unwrap()).unwrap();
        let v = add_mark(&v, BBox::new(15.0, 25.0, 30.0, 40.0).unwrap(), vec![]);
        let wire = view_to_wire(&v);
        assert_eq!(wire.viewport, [10.0, 20.0, 60.0, 70.0]);
        assert_eq!(wire.annotations[0].rect, [5.0, 5.0, 20.0, 20.0]);
    }

    #[test]
    fn wire_rect_round_trips_through_scene_coordinates() {
        let vp = BBox::new(10.0, 20.0, 60.0, 70.0).unwrap();
        let rect = [5.0, 5.0, 20.0, 20.0];
        let mapped = wire_rect_to_scene(&rect, &vp).unwrap();
        assert_eq!(mapped, BBox::new(15.0, 25.0, 30.0, 40.0).unwrap());
        // Out-of-viewport coordinates clip instead of escaping the frame.
        let wild = [-10.0, -10.0, 500.0, 500.0];
        assert_eq!(wire_rect_to_scene(&wild, &vp).unwrap(), vp);
    }

    #[test]
    fn tool_response_parses_both_output_kinds() {
        let img: WireToolResponse = serde_json::from_str(
            r#"{"ok":true,"output":{"kind":"image","marks":[[0,0,5,5]],"highlights":[]}}"#,
        )
        .unwrap();
        assert!(matches!(img.output, Some(WireOutput::Image { .. })));
        let text: WireToolResponse =
            serde_json::from_str(r#"{"ok":true,"output":{"kind":"text","items":["a","b"]}}"#)
                .unwrap();
        match text.output {
            Some(WireOutput::Text { items }) => assert_eq!(items, vec!["a", "b"]),
            other => panic!("unexpected output: {other:?}"),
        }
        let err: WireToolResponse =
            serde_json::from_str(r#"{"ok":false,"error":"no match"}"#).unwrap();
        assert!(!err.ok);
        assert_eq!(err.error.as_deref(), Some("no match"));
    }

    #[test]
    fn semaphore_limits_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;
        let sem = Arc::new(Semaphore::new(2));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let mut handles = Vec::new();
        for _ in 0..8 {
            let (sem, live, peak) = (sem.clone(), live.clone(), peak.clone());
            handles.push(std::thread::spawn(move || {
                let _g = sem.acquire();
                let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(std::time::Duration::from_millis(10));
                live.fetch_sub(1, Ordering::SeqCst);
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
