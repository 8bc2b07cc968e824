//! JSON bodies exchanged with perception backends. All top-level bodies carry
//! `"schema_version": 1`.

use serde::{Deserialize, Deserializer, Serialize};

use crate::model::{BBox, ChunkId, FrameId, Pose};

pub const WIRE_SCHEMA_VERSION: u32 = 1;

fn wire_version() -> u32 {
    WIRE_SCHEMA_VERSION
}

/// Local ids may arrive as JSON strings or integers; both map to a string.
fn local_id<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        S(String),
        N(u64),
    }
    Ok(match Raw::deserialize(d)? {
        Raw::S(s) => s,
        Raw::N(n) => n.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionProfile {
    SceneGraph,
    Grounding,
}

/// What the backend learns about a frame: a reference to its image, its size
/// and its pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub frame_id: FrameId,
    pub rgb_ref: String,
    pub width: u32,
    pub height: u32,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRequest {
    #[serde(default = "wire_version")]
    pub schema_version: u32,
    pub chunk_id: ChunkId,
    pub profile: InstructionProfile,
    pub frames: Vec<FrameSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireObject {
    #[serde(deserialize_with = "local_id")]
    pub local_id: String,
    pub label: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub room_type: String,
    pub frame_id: FrameId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRelation {
    #[serde(deserialize_with = "local_id")]
    pub subject: String,
    pub predicate: String,
    #[serde(deserialize_with = "local_id")]
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraphResponse {
    pub schema_version: u32,
    pub chunk_id: ChunkId,
    pub objects: Vec<WireObject>,
    pub relations: Vec<WireRelation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingRequest {
    #[serde(default = "wire_version")]
    pub schema_version: u32,
    pub profile: InstructionProfile,
    pub frame: FrameSummary,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub label: String,
    pub frame_id: FrameId,
    pub bbox: BBox,
    pub mask_rle: Vec<u64>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingResponse {
    pub schema_version: u32,
    pub detections: Vec<WireDetection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

/// Goal selection for task-guided pruning: the serialized graph plus the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalRequest {
    #[serde(default = "wire_version")]
    pub schema_version: u32,
    pub query: String,
    pub graph: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalResponse {
    pub schema_version: u32,
    pub node_id: u64,
}
