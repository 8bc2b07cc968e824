use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::wire::{ChunkRequest, GoalRequest, GroundingRequest};
use super::PerceptionError;
use crate::model::{ChunkId, FrameId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Replay,
}

/// How to reach a perception backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    /// Base URL for `http`, fixture directory for `replay`.
    pub location: String,
    pub timeout_s: f64,
    pub retries: u32,
}

impl BackendDescriptor {
    pub fn replay(dir: impl AsRef<Path>) -> Self {
        Self {
            kind: BackendKind::Replay,
            location: dir.as_ref().to_string_lossy().into_owned(),
            timeout_s: 30.0,
            retries: 0,
        }
    }

    pub fn http(url: impl Into<String>, timeout_s: f64, retries: u32) -> Self {
        Self {
            kind: BackendKind::Http,
            location: url.into(),
            timeout_s,
            retries,
        }
    }

    pub fn open(&self) -> Result<Box<dyn PerceptionBackend>, PerceptionError> {
        Ok(match self.kind {
            BackendKind::Replay => Box::new(ReplayBackend::new(&self.location)?),
            BackendKind::Http => Box::new(HttpBackend::new(
                &self.location,
                Duration::from_secs_f64(self.timeout_s.max(0.001)),
                self.retries,
            )?),
        })
    }
}

/// Transport for raw response bodies. Parsing and validation happen in the
/// caller, so every backend gets identical guarantees.
pub trait PerceptionBackend: Send + Sync + fmt::Debug {
    fn scene_graph_raw(&self, req: &ChunkRequest) -> Result<Vec<u8>, PerceptionError>;
    fn ground_raw(&self, req: &GroundingRequest) -> Result<Vec<u8>, PerceptionError>;
    fn select_goal_raw(&self, req: &GoalRequest) -> Result<Vec<u8>, PerceptionError>;
}

impl<T: PerceptionBackend + ?Sized> PerceptionBackend for Box<T> {
    fn scene_graph_raw(&self, req: &ChunkRequest) -> Result<Vec<u8>, PerceptionError> {
        (**self).scene_graph_raw(req)
    }

    fn ground_raw(&self, req: &GroundingRequest) -> Result<Vec<u8>, PerceptionError> {
        (**self).ground_raw(req)
    }

    fn select_goal_raw(&self, req: &GoalRequest) -> Result<Vec<u8>, PerceptionError> {
        (**self).select_goal_raw(req)
    }
}

pub fn chunk_fixture_name(chunk_id: ChunkId) -> String {
    format!("chunk_{chunk_id}.json")
}

pub fn ground_fixture_name(frame_id: FrameId) -> String {
    format!("ground_{frame_id}.json")
}

/// Goal fixtures are keyed by a digest of the query text.
pub fn goal_fixture_name(query: &str) -> String {
    let digest = Sha256::digest(query.trim().as_bytes());
    format!("goal_{}.json", &hex::encode(digest)[..16])
}

/// Serves recorded responses verbatim from a fixture directory.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    dir: PathBuf,
}

impl ReplayBackend {
    pub fn new(dir: impl AsRef<Path>) -> Result<Self, PerceptionError> {
        let dir = dir.as_ref().to_path_buf();
        if !dir.is_dir() {
            return Err(PerceptionError::Config(format!(
                "replay fixture directory {} does not exist",
                dir.display()
            )));
        }
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn read(&self, name: &str) -> Result<Vec<u8>, PerceptionError> {
        let path = self.dir.join(name);
        std::fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => PerceptionError::MissingFixture(path),
            _ => PerceptionError::Transport {
                attempts: 1,
                message: format!("{}: {e}", path.display()),
            },
        })
    }
}

impl PerceptionBackend for ReplayBackend {
    fn scene_graph_raw(&self, req: &ChunkRequest) -> Result<Vec<u8>, PerceptionError> {
        self.read(&chunk_fixture_name(req.chunk_id))
    }

    fn ground_raw(&self, req: &GroundingRequest) -> Result<Vec<u8>, PerceptionError> {
        self.read(&ground_fixture_name(req.frame.frame_id))
    }

    fn select_goal_raw(&self, req: &GoalRequest) -> Result<Vec<u8>, PerceptionError> {
        self.read(&goal_fixture_name(&req.query))
    }
}

/// JSON-over-HTTP client for a perception sidecar.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    base: String,
    retries: u32,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base: &str, timeout: Duration, retries: u32) -> Result<Self, PerceptionError> {
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(PerceptionError::Config(format!(
                "endpoint '{base}' is not an http(s) URL"
            )));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            base: base.trim_end_matches('/').to_string(),
            retries,
            agent,
        })
    }

    fn post<T: Serialize>(&self, path: &str, body: &T) -> Result<Vec<u8>, PerceptionError> {
        let url = format!("{}{path}", self.base);
        let payload = serde_json::to_vec(body).expect("request bodies always serialize");
        let attempts = self.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.post_once(&url, &payload) {
                Ok(Outcome::Body(b)) => return Ok(b),
                Ok(Outcome::ClientError(status, body)) => {
                    return Err(PerceptionError::Transport {
                        attempts: attempt,
                        message: format!(
                            "{url} rejected the request with status {status}: {}",
                            String::from_utf8_lossy(&body)
                        ),
                    })
                }
                Ok(Outcome::ServerError(status)) => {
                    last = format!("{url} returned status {status}")
                }
                Err(e) => last = format!("{url}: {e}"),
            }
            tracing::warn!(attempt, attempts, error = %last, "perception request failed");
        }
        Err(PerceptionError::Transport {
            attempts,
            message: last,
        })
    }

    fn post_once(&self, url: &str, payload: &[u8]) -> Result<Outcome, ureq::Error> {
        let mut resp = self
            .agent
            .post(url)
            .header("Content-Type", "application/json")
            .send(payload)?;
        let status = resp.status().as_u16();
        let mut body = Vec::new();
        resp.body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .reader()
            .read_to_end(&mut body)?;
        Ok(match status {
            200..=299 => Outcome::Body(body),
            400..=499 => Outcome::ClientError(status, body),
            _ => Outcome::ServerError(status),
        })
    }
}

enum Outcome {
    Body(Vec<u8>),
    ClientError(u16, Vec<u8>),
    ServerError(u16),
}

impl PerceptionBackend for HttpBackend {
    fn scene_graph_raw(&self, req: &ChunkRequest) -> Result<Vec<u8>, PerceptionError> {
        self.post("/v1/scene_graph", req)
    }

    fn ground_raw(&self, req: &GroundingRequest) -> Result<Vec<u8>, PerceptionError> {
        self.post("/v1/ground", req)
    }

    fn select_goal_raw(&self, req: &GoalRequest) -> Result<Vec<u8>, PerceptionError> {
        self.post("/v1/select_goal", req)
    }
}
