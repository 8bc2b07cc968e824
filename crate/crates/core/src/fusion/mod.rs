//! Lifting grounded detections to world-frame instances and merging them into
//! the global graph.
//!
//! Association rule: an instance joins the nearest existing node whose label
//! matches and whose centroid lies strictly closer than the association
//! distance (ties go to the lowest node id); otherwise it founds a new node.
//! A node absorbs each frame's evidence at most once, so replaying frames it
//! has already seen leaves its geometry untouched.

mod ingest;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ingest::{ingest_chunk, ChunkReport, IngestError, IngestOptions, StageTimings};

use crate::geometry::{
    backproject_mask, camera_to_world, centroid_and_aabb, flip_camera_z, pairwise_distance, Aabb,
    GeometryError, Point3,
};
use crate::model::{
    ChunkId, Detection2D, FrameId, LocalId, NodeId, ObjectNode3D, PosedFrame, SceneGraph2D,
    SceneGraph3D,
};
use crate::text::{normalize_label, token_jaccard};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMatch {
    /// Equal after [`normalize_label`].
    ExactNormalized,
    /// Token-set Jaccard overlap of at least 0.5.
    TokenOverlap,
}

impl LabelMatch {
    pub fn matches(self, a: &str, b: &str) -> bool {
        match self {
            LabelMatch::ExactNormalized => normalize_label(a) == normalize_label(b),
            LabelMatch::TokenOverlap => token_jaccard(a, b) >= 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Association radius in meters.
    pub association_distance: f64,
    pub label_match: LabelMatch,
    /// Detections back-projecting to fewer points are dropped.
    pub min_points: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            association_distance: 0.5,
            label_match: LabelMatch::ExactNormalized,
            min_points: 20,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.association_distance.is_finite() && self.association_distance > 0.0) {
            return Err(format!(
                "association_distance must be positive, got {}",
                self.association_distance
            ));
        }
        if self.min_points < 1 {
            return Err("min_points must be at least 1".into());
        }
        Ok(())
    }
}

/// One detection lifted into the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance3D {
    pub label: String,
    pub description: String,
    pub category: String,
    pub room_type: String,
    pub centroid: Point3,
    pub point_count: u64,
    pub aabb: Aabb,
    pub frame_id: FrameId,
    pub chunk_id: ChunkId,
    pub local_id: LocalId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedDetection {
    pub local_id: LocalId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LiftOutcome {
    pub instances: Vec<ObjectInstance3D>,
    pub dropped: Vec<DroppedDetection>,
}

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("detection '{0}' has no mask")]
    MissingMask(LocalId),
    #[error("detection '{local_id}' does not fit frame {frame_id}: {reason}")]
    DimensionMismatch {
        local_id: LocalId,
        frame_id: FrameId,
        reason: String,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Back-projects each detection mask through the frame's depth and pose.
/// Detections with no valid depth or fewer than `cfg.min_points` points are
/// dropped and reported.
pub fn lift_detections(
    detections: &[Detection2D],
    frame: &PosedFrame,
    chunk_id: ChunkId,
    cfg: &FusionConfig,
    flip_z: bool,
) -> Result<LiftOutcome, FusionError> {
    let lifted: Vec<Result<Result<ObjectInstance3D, DroppedDetection>, FusionError>> = detections
        .par_iter()
        .map(|det| lift_one(det, frame, chunk_id, cfg, flip_z))
        .collect();
    let mut out = LiftOutcome::default();
    for r in lifted {
        match r? {
            Ok(inst) => out.instances.push(inst),
            Err(dropped) => {
                tracing::debug!(local_id = %dropped.local_id, reason = %dropped.reason, "detection dropped");
                out.dropped.push(dropped);
            }
        }
    }
    Ok(out)
}

fn lift_one(
    det: &Detection2D,
    frame: &PosedFrame,
    chunk_id: ChunkId,
    cfg: &FusionConfig,
    flip_z: bool,
) -> Result<Result<ObjectInstance3D, DroppedDetection>, FusionError> {
    let mask = det
        .mask
        .as_ref()
        .ok_or_else(|| FusionError::MissingMask(det.local_id.clone()))?;
    if mask.width() != frame.intrinsics.width || mask.height() != frame.intrinsics.height {
        return Err(FusionError::DimensionMismatch {
            local_id: det.local_id.clone(),
            frame_id: frame.frame_id,
            reason: format!(
                "mask {}x{} vs frame {}x{}",
                mask.width(),
                mask.height(),
                frame.intrinsics.width,
                frame.intrinsics.height
            ),
        });
    }
    let mut cam = match backproject_mask(mask, &frame.depth, &frame.intrinsics) {
        Ok(b) => b,
        Err(GeometryError::EmptyProjection) => {
            return Ok(Err(DroppedDetection {
                local_id: det.local_id.clone(),
                reason: "no valid depth inside mask".into(),
            }))
        }
        Err(GeometryError::DimensionMismatch(reason)) => {
            return Err(FusionError::DimensionMismatch {
                local_id: det.local_id.clone(),
                frame_id: frame.frame_id,
                reason,
            })
        }
        Err(e) => return Err(e.into()),
    };
    if (cam.len() as u64) < cfg.min_points {
        return Ok(Err(DroppedDetection {
            local_id: det.local_id.clone(),
            reason: format!("{} points, below min_points {}", cam.len(), cfg.min_points),
        }));
    }
    if flip_z {
        flip_camera_z(&mut cam);
    }
    let world = camera_to_world(&cam, &frame.pose)?;
    let (centroid, aabb) = centroid_and_aabb(&world)?;
    Ok(Ok(ObjectInstance3D {
        label: det.label.clone(),
        description: det.description.clone(),
        category: det.category.clone(),
        room_type: det.room_type.clone(),
        centroid,
        point_count: world.len() as u64,
        aabb,
        frame_id: frame.frame_id,
        chunk_id,
        local_id: det.local_id.clone(),
    }))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MergeReport {
    pub merged: Vec<NodeId>,
    pub created: Vec<NodeId>,
    /// Node each instance landed in, in input order.
    pub assignments: Vec<NodeId>,
}

fn nearest_match(
    graph: &SceneGraph3D,
    inst: &ObjectInstance3D,
    cfg: &FusionConfig,
) -> Option<NodeId> {
    let mut best: Option<(f64, NodeId)> = None;
    // BTreeMap iteration is ascending in node id, so strict `<` keeps the lowest id on ties.
    for (id, node) in &graph.nodes {
        let d = pairwise_distance(&node.centroid, &inst.centroid);
        // distance first: label comparison normalizes strings and is far costlier
        if d < cfg.association_distance
            && best.is_none_or(|(bd, _)| d < bd)
            && cfg.label_match.matches(&node.label, &inst.label)
        {
            best = Some((d, *id));
        }
    }
    best.map(|(_, id)| id)
}

fn absorb(node: &mut ObjectNode3D, inst: &ObjectInstance3D) {
    if node.observed_in.contains(&inst.frame_id) {
        return;
    }
    let n = node.point_count as f64;
    let m = inst.point_count as f64;
    let total = n + m;
    let mean = node.centroid.scale(n / total) + inst.centroid.scale(m / total);
    node.aabb = node.aabb.union(&inst.aabb);
    node.centroid = node.aabb.clamp(mean);
    node.point_count += inst.point_count;
    node.observed_in.insert(inst.frame_id);
    node.last_updated_chunk = node.last_updated_chunk.max(inst.chunk_id);
    if !inst.room_type.is_empty() {
        node.room_type = inst.room_type.clone();
    }
    if node.description.is_empty() {
        node.description = inst.description.clone();
    }
    if node.category.is_empty() {
        node.category = inst.category.clone();
    }
}

/// Merges `instances` into `graph` in order. Every instance is either merged
/// into an existing node or creates exactly one new node.
pub fn associate_and_merge(
    graph: &mut SceneGraph3D,
    instances: &[ObjectInstance3D],
    cfg: &FusionConfig,
) -> MergeReport {
    let mut report = MergeReport::default();
    for inst in instances {
        let id = match nearest_match(graph, inst, cfg) {
            Some(id) => {
                absorb(graph.nodes.get_mut(&id).expect("matched node exists"), inst);
                report.merged.push(id);
                id
            }
            None => {
                let id = graph.allocate_node_id();
                graph.nodes.insert(
                    id,
                    ObjectNode3D {
                        node_id: id,
                        label: inst.label.clone(),
                        description: inst.description.clone(),
                        category: inst.category.clone(),
                        room_type: inst.room_type.clone(),
                        centroid: inst.aabb.clamp(inst.centroid),
                        point_count: inst.point_count,
                        aabb: inst.aabb,
                        observed_in: [inst.frame_id].into_iter().collect(),
                        created_chunk: inst.chunk_id,
                        last_updated_chunk: inst.chunk_id,
                    },
                );
                report.created.push(id);
                id
            }
        };
        report.assignments.push(id);
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RelationReport {
    /// Relations carried into the graph (new or refreshed edges).
    pub applied: usize,
    /// Of those, edges that did not exist before.
    pub created: usize,
    /// Relations whose endpoints did not both survive, or collapsed into one node.
    pub discarded: usize,
}

/// Turns 2D relations into directed edges between the nodes their endpoints
/// were fused into.
pub fn apply_relations(
    graph: &mut SceneGraph3D,
    sg2d: &SceneGraph2D,
    id_map: &HashMap<LocalId, NodeId>,
) -> RelationReport {
    let mut report = RelationReport::default();
    for r in &sg2d.relations {
        match (id_map.get(&r.subject), id_map.get(&r.object)) {
            (Some(&s), Some(&o))
                if s != o && graph.nodes.contains_key(&s) && graph.nodes.contains_key(&o) =>
            {
                report.applied += 1;
                if graph.upsert_edge(s, o, &r.predicate) {
                    report.created += 1;
                }
            }
            _ => report.discarded += 1,
        }
    }
    report
}

/// Refreshes every edge distance from the current centroids. Returns how many
/// stored values moved by more than 1e-9.
pub fn recompute_edge_distances(graph: &mut SceneGraph3D) -> usize {
    let SceneGraph3D { nodes, edges, .. } = graph;
    let mut changed = 0;
    for e in edges.iter_mut() {
        let d = pairwise_distance(&nodes[&e.src].centroid, &nodes[&e.dst].centroid);
        if (d - e.distance_m).abs() > 1e-9 {
            changed += 1;
        }
        e.distance_m = d;
    }
    changed
}
