//! Perception protocol: chunked 2D scene-graph requests, grounding requests,
//! response validation, and the HTTP and replay backends behind them.
//!
//! Backends only move bytes. Everything they return is parsed and checked
//! here before it reaches fusion, so replayed and live responses are held to
//! the same contract.

mod backend;
mod fixture;
pub mod rle;
pub mod wire;

use std::collections::{BTreeSet, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    chunk_fixture_name, goal_fixture_name, ground_fixture_name, BackendDescriptor, BackendKind,
    HttpBackend, PerceptionBackend, ReplayBackend,
};
pub use fixture::{
    record_fixture, record_goal_fixture, record_grounding_fixture, FixtureError, RecordingBackend,
};
pub use rle::MaskDecodeError;
use wire::{
    ChunkRequest, FrameSummary, GroundingRequest, GroundingResponse, InstructionProfile,
    SceneGraphResponse, WIRE_SCHEMA_VERSION,
};

use crate::model::{ChunkId, Detection2D, PosedFrame, Relation2D, SceneGraph2D};
use crate::text::{normalize_label, normalize_predicate};

pub const DEFAULT_CHUNK_SIZE: usize = 10;
pub const DEFAULT_GROUNDING_THRESHOLD: f64 = 0.3;

/// Labels dropped before grounding. Matched case-insensitively as substrings
/// of the normalized label.
pub const DEFAULT_EXCLUSIONS: &[&str] = &["wall", "floor", "ceiling", "door frame", "doorframe"];

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("schema error: {message}")]
    Schema { message: String, raw: Vec<u8> },
    #[error("mask decode error for '{label}': {source}")]
    MaskDecode {
        label: String,
        #[source]
        source: MaskDecodeError,
    },
    #[error("no recorded fixture at {}", .0.display())]
    MissingFixture(PathBuf),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("fixture recording failed: {0}")]
    Recording(String),
}

impl PerceptionError {
    fn schema(message: impl Into<String>, raw: &[u8]) -> Self {
        PerceptionError::Schema {
            message: message.into(),
            raw: raw.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    pub chunk_size: usize,
    pub grounding_threshold: f64,
    pub exclusions: Vec<String>,
    pub timeout_s: f64,
    pub retries: u32,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            chunk_size: DEFAULT_CHUNK_SIZE,
            grounding_threshold: DEFAULT_GROUNDING_THRESHOLD,
            exclusions: DEFAULT_EXCLUSIONS.iter().map(|s| s.to_string()).collect(),
            timeout_s: 30.0,
            retries: 2,
        }
    }
}

impl FrameSummary {
    pub fn of(frame: &PosedFrame) -> Self {
        Self {
            frame_id: frame.frame_id,
            rgb_ref: frame.rgb_ref.clone(),
            width: frame.intrinsics.width,
            height: frame.intrinsics.height,
            pose: frame.pose,
        }
    }
}

impl ChunkRequest {
    pub fn new(
        chunk_id: ChunkId,
        frames: &[PosedFrame],
        max_frames: usize,
    ) -> Result<Self, PerceptionError> {
        if frames.is_empty() || frames.len() > max_frames {
            return Err(PerceptionError::InvalidRequest(format!(
                "chunk {chunk_id} has {} frames, expected 1..={max_frames}",
                frames.len()
            )));
        }
        Ok(Self {
            schema_version: WIRE_SCHEMA_VERSION,
            chunk_id,
            profile: InstructionProfile::SceneGraph,
            frames: frames.iter().map(FrameSummary::of).collect(),
        })
    }
}

/// Parses and validates a scene-graph response against the request it
/// answers.
pub fn parse_scene_graph(req: &ChunkRequest, raw: &[u8]) -> Result<SceneGraph2D, PerceptionError> {
    let resp: SceneGraphResponse = serde_json::from_slice(raw)
        .map_err(|e| PerceptionError::schema(format!("malformed scene-graph JSON: {e}"), raw))?;
    if resp.schema_version != WIRE_SCHEMA_VERSION {
        return Err(PerceptionError::schema(
            format!("unsupported schema_version {}", resp.schema_version),
            raw,
        ));
    }
    if resp.chunk_id != req.chunk_id {
        return Err(PerceptionError::schema(
            format!(
                "response for chunk {} answers request for chunk {}",
                resp.chunk_id, req.chunk_id
            ),
            raw,
        ));
    }

    let mut objects = Vec::with_capacity(resp.objects.len());
    for o in &resp.objects {
        let frame = req
            .frames
            .iter()
            .find(|f| f.frame_id == o.frame_id)
            .ok_or_else(|| {
                PerceptionError::schema(
                    format!(
                        "object '{}' cites frame {} outside the chunk",
                        o.local_id, o.frame_id
                    ),
                    raw,
                )
            })?;
        if normalize_label(&o.label).is_empty() {
            return Err(PerceptionError::schema(
                format!("object '{}' has an empty label", o.local_id),
                raw,
            ));
        }
        if let Some(b) = &o.bbox {
            b.validate(frame.width, frame.height).map_err(|e| {
                PerceptionError::schema(format!("object '{}': {e}", o.local_id), raw)
            })?;
        }
        objects.push(Detection2D {
            local_id: o.local_id.clone(),
            label: normalize_predicate(&o.label),
            description: o.description.trim().to_string(),
            category: o.category.trim().to_string(),
            room_type: o.room_type.trim().to_string(),
            bbox: o.bbox,
            mask: None,
            frame_id: o.frame_id,
            confidence: 1.0,
        });
    }

    let mut relations = Vec::with_capacity(resp.relations.len());
    for r in &resp.relations {
        let predicate = normalize_predicate(&r.predicate);
        if predicate.is_empty() {
            return Err(PerceptionError::schema(
                format!(
                    "relation {} -> {} has an empty predicate",
                    r.subject, r.object
                ),
                raw,
            ));
        }
        relations.push(Relation2D {
            subject: r.subject.clone(),
            predicate,
            object: r.object.clone(),
        });
    }

    let sg = SceneGraph2D {
        chunk_id: resp.chunk_id,
        objects,
        relations,
        frame_ids: req.frames.iter().map(|f| f.frame_id).collect(),
    };
    let problems = sg.problems();
    if !problems.is_empty() {
        return Err(PerceptionError::schema(problems.join("; "), raw));
    }
    Ok(sg)
}

/// Asks the backend for the 2D scene graph of one chunk.
pub fn request_scene_graph_2d(
    chunk: &ChunkRequest,
    backend: &dyn PerceptionBackend,
) -> Result<SceneGraph2D, PerceptionError> {
    if chunk.frames.is_empty() {
        return Err(PerceptionError::InvalidRequest(format!(
            "chunk {} has no frames",
            chunk.chunk_id
        )));
    }
    let raw = backend.scene_graph_raw(chunk)?;
    parse_scene_graph(chunk, &raw)
}

fn is_excluded(label: &str, patterns: &[String]) -> bool {
    let label = normalize_label(label);
    patterns.iter().any(|p| {
        let p = normalize_label(p);
        !p.is_empty() && label.contains(&p)
    })
}

/// Drops objects whose label matches an exclusion pattern, with every
/// relation touching them.
pub fn filter_objects(sg2d: &SceneGraph2D, exclusions: &[String]) -> SceneGraph2D {
    let kept: Vec<Detection2D> = sg2d
        .objects
        .iter()
        .filter(|o| !is_excluded(&o.label, exclusions))
        .cloned()
        .collect();
    let ids: HashSet<&str> = kept.iter().map(|o| o.local_id.as_str()).collect();
    let relations = sg2d
        .relations
        .iter()
        .filter(|r| ids.contains(r.subject.as_str()) && ids.contains(r.object.as_str()))
        .cloned()
        .collect();
    SceneGraph2D {
        chunk_id: sg2d.chunk_id,
        objects: kept,
        relations,
        frame_ids: sg2d.frame_ids.clone(),
    }
}

/// Masks returned for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Grounding {
    /// Surviving detections. `local_id` is `"<label>#<k>"` until fusion
    /// assigns scene-graph ids.
    pub detections: Vec<Detection2D>,
    /// Requested labels (as requested) with no detection above threshold.
    pub absent: Vec<String>,
}

/// Parses and validates a grounding response for `frame`, keeping detections
/// for the requested labels with confidence at or above `threshold`.
pub fn parse_grounding(
    labels: &[String],
    frame: &FrameSummary,
    raw: &[u8],
    threshold: f64,
) -> Result<Grounding, PerceptionError> {
    let resp: GroundingResponse = serde_json::from_slice(raw)
        .map_err(|e| PerceptionError::schema(format!("malformed grounding JSON: {e}"), raw))?;
    if resp.schema_version != WIRE_SCHEMA_VERSION {
        return Err(PerceptionError::schema(
            format!("unsupported schema_version {}", resp.schema_version),
            raw,
        ));
    }
    let wanted: BTreeSet<String> = labels.iter().map(|l| normalize_label(l)).collect();
    let mut found = BTreeSet::new();
    let mut detections = Vec::new();
    for (k, d) in resp.detections.iter().enumerate() {
        if d.frame_id != frame.frame_id {
            return Err(PerceptionError::schema(
                format!(
                    "detection '{}' is for frame {}, requested {}",
                    d.label, d.frame_id, frame.frame_id
                ),
                raw,
            ));
        }
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(PerceptionError::schema(
                format!(
                    "detection '{}' has confidence {} outside [0, 1]",
                    d.label, d.confidence
                ),
                raw,
            ));
        }
        d.bbox
            .validate(frame.width, frame.height)
            .map_err(|e| PerceptionError::schema(format!("detection '{}': {e}", d.label), raw))?;
        let mask = rle::decode(&d.mask_rle, frame.width, frame.height).map_err(|source| {
            PerceptionError::MaskDecode {
                label: d.label.clone(),
                source,
            }
        })?;
        let key = normalize_label(&d.label);
        if !wanted.contains(&key) || d.confidence < threshold {
            continue;
        }
        let det = Detection2D {
            local_id: format!("{key}#{k}"),
            label: normalize_predicate(&d.label),
            description: String::new(),
            category: String::new(),
            room_type: String::new(),
            bbox: Some(d.bbox),
            mask: Some(mask),
            frame_id: d.frame_id,
            confidence: d.confidence,
        };
        det.validate(frame.width, frame.height)
            .map_err(|e| PerceptionError::schema(e.to_string(), raw))?;
        found.insert(key);
        detections.push(det);
    }
    let mut absent = Vec::new();
    let mut reported = BTreeSet::new();
    for l in labels {
        let key = normalize_label(l);
        if !found.contains(&key) && reported.insert(key) {
            absent.push(l.clone());
        }
    }
    Ok(Grounding { detections, absent })
}

/// Requests segmentation masks for `labels` in one frame.
pub fn ground_objects(
    labels: &[String],
    frame: &PosedFrame,
    backend: &dyn PerceptionBackend,
    threshold: f64,
) -> Result<Grounding, PerceptionError> {
    if labels.is_empty() {
        return Err(PerceptionError::InvalidRequest(
            "grounding needs at least one label".into(),
        ));
    }
    let req = GroundingRequest {
        schema_version: WIRE_SCHEMA_VERSION,
        profile: InstructionProfile::Grounding,
        frame: FrameSummary::of(frame),
        labels: labels.to_vec(),
    };
    let raw = backend.ground_raw(&req)?;
    parse_grounding(labels, &req.frame, &raw, threshold)
}
