use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::wire::{ChunkRequest, FrameSummary, GoalRequest, GoalResponse, GroundingRequest};
use super::{
    chunk_fixture_name, goal_fixture_name, ground_fixture_name, parse_grounding, parse_scene_graph,
    PerceptionBackend, PerceptionError,
};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("refusing to record an invalid response: {0}")]
    Unvalidated(#[source] PerceptionError),
    #[error("fixture {} already holds different bytes", .0.display())]
    Conflict(PathBuf),
    #[error("fixture I/O on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Stores a validated scene-graph response as `chunk_<id>.json`.
///
/// Fixtures are immutable: re-recording identical bytes is a no-op, different
/// bytes are a [`FixtureError::Conflict`].
pub fn record_fixture(
    chunk: &ChunkRequest,
    response: &[u8],
    fixture_dir: &Path,
) -> Result<PathBuf, FixtureError> {
    parse_scene_graph(chunk, response).map_err(FixtureError::Unvalidated)?;
    write_immutable(
        &fixture_dir.join(chunk_fixture_name(chunk.chunk_id)),
        response,
    )
}

/// Stores a validated grounding response as `ground_<frame_id>.json`.
pub fn record_grounding_fixture(
    labels: &[String],
    frame: &FrameSummary,
    response: &[u8],
    fixture_dir: &Path,
) -> Result<PathBuf, FixtureError> {
    parse_grounding(labels, frame, response, 0.0).map_err(FixtureError::Unvalidated)?;
    write_immutable(
        &fixture_dir.join(ground_fixture_name(frame.frame_id)),
        response,
    )
}

/// Stores a goal-selection response as `goal_<digest>.json`.
pub fn record_goal_fixture(
    query: &str,
    response: &[u8],
    fixture_dir: &Path,
) -> Result<PathBuf, FixtureError> {
    serde_json::from_slice::<GoalResponse>(response).map_err(|e| {
        FixtureError::Unvalidated(PerceptionError::Schema {
            message: format!("malformed goal selection: {e}"),
            raw: response.to_vec(),
        })
    })?;
    write_immutable(&fixture_dir.join(goal_fixture_name(query)), response)
}

/// Forwards to another backend and records every validated response into a
/// fixture directory, for later replay.
#[derive(Debug)]
pub struct RecordingBackend<B> {
    inner: B,
    dir: PathBuf,
}

impl<B: PerceptionBackend> RecordingBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            dir: dir.into(),
        }
    }
}

fn recording_failed(e: FixtureError) -> PerceptionError {
    match e {
        FixtureError::Unvalidated(inner) => inner,
        other => PerceptionError::Recording(other.to_string()),
    }
}

impl<B: PerceptionBackend> PerceptionBackend for RecordingBackend<B> {
    fn scene_graph_raw(&self, req: &ChunkRequest) -> Result<Vec<u8>, PerceptionError> {
        let raw = self.inner.scene_graph_raw(req)?;
        record_fixture(req, &raw, &self.dir).map_err(recording_failed)?;
        Ok(raw)
    }

    fn ground_raw(&self, req: &GroundingRequest) -> Result<Vec<u8>, PerceptionError> {
        let raw = self.inner.ground_raw(req)?;
        record_grounding_fixture(&req.labels, &req.frame, &raw, &self.dir)
            .map_err(recording_failed)?;
        Ok(raw)
    }

    fn select_goal_raw(&self, req: &GoalRequest) -> Result<Vec<u8>, PerceptionError> {
        let raw = self.inner.select_goal_raw(req)?;
        record_goal_fixture(&req.query, &raw, &self.dir).map_err(recording_failed)?;
        Ok(raw)
    }
}

fn write_immutable(path: &Path, bytes: &[u8]) -> Result<PathBuf, FixtureError> {
    let io = |source| FixtureError::Io {
        path: path.to_path_buf(),
        source,
    };
    match fs::read(path) {
        Ok(existing) if existing == bytes => return Ok(path.to_path_buf()),
        Ok(_) => return Err(FixtureError::Conflict(path.to_path_buf())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(io(e)),
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let tmp = path.with_extension("json.partial");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)?;
    Ok(path.to_path_buf())
}
