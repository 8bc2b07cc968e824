use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    apply_relations, associate_and_merge, lift_detections, recompute_edge_distances, FusionConfig,
    FusionError,
};
use crate::model::{
    validate_graph, ChunkId, Detection2D, FrameId, LocalId, NodeId, PosedFrame, SceneGraph3D,
};
use crate::perception::wire::ChunkRequest;
use crate::perception::{
    filter_objects, ground_objects, request_scene_graph_2d, PerceptionBackend, PerceptionConfig,
    PerceptionError,
};
use crate::text::normalize_label;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IngestOptions {
    pub fusion: FusionConfig,
    pub perception: PerceptionConfig,
    /// Negate camera Z before the pose transform (Z-up world frames).
    pub flip_z: bool,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("chunk {chunk_id}: {reason}")]
    InvalidChunk { chunk_id: ChunkId, reason: String },
    #[error("chunk {chunk_id} would leave the graph invalid: {violations}")]
    InvalidResult {
        chunk_id: ChunkId,
        violations: String,
    },
}

/// Wall-clock seconds spent in each stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub scene_graph_s: f64,
    pub filter_s: f64,
    pub grounding_s: f64,
    pub lift_s: f64,
    pub merge_s: f64,
    pub relations_s: f64,
    pub total_s: f64,
}

/// Per-chunk outcome, one JSON line per chunk in the report log.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChunkReport {
    pub chunk_id: ChunkId,
    pub frame_ids: Vec<FrameId>,
    pub objects_seen: usize,
    pub objects_excluded: usize,
    pub objects_grounded: usize,
    pub labels_absent: Vec<String>,
    pub instances_lifted: usize,
    pub instances_dropped: usize,
    pub nodes_merged: usize,
    pub nodes_created: usize,
    pub created_node_ids: Vec<NodeId>,
    pub relations_applied: usize,
    pub relations_discarded: usize,
    pub edges_created: usize,
    pub edges_updated: usize,
    pub timings: StageTimings,
}

/// Pairs grounded masks with the scene-graph objects that asked for them.
///
/// Objects are served in scene-graph order. An object with a bbox takes the
/// unclaimed same-label detection of highest IoU; otherwise the one of highest
/// confidence. Remaining ties go to the earlier detection.
fn assign_detections(objects: &[&Detection2D], grounded: Vec<Detection2D>) -> Vec<Detection2D> {
    let mut claimed = vec![false; grounded.len()];
    let mut out = Vec::new();
    for obj in objects {
        let key = normalize_label(&obj.label);
        let score = |d: &Detection2D| -> (f64, f64) {
            let iou = match (obj.bbox, d.bbox) {
                (Some(a), Some(b)) => a.iou(&b),
                _ => 0.0,
            };
            (iou, d.confidence)
        };
        let mut best: Option<(usize, (f64, f64))> = None;
        for (i, d) in grounded.iter().enumerate() {
            if claimed[i] || normalize_label(&d.label) != key {
                continue;
            }
            let s = score(d);
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((i, s));
            }
        }
        if let Some((i, _)) = best {
            claimed[i] = true;
            let d = &grounded[i];
            out.push(Detection2D {
                local_id: obj.local_id.clone(),
                label: obj.label.clone(),
                description: obj.description.clone(),
                category: obj.category.clone(),
                room_type: obj.room_type.clone(),
                bbox: d.bbox,
                mask: d.mask.clone(),
                frame_id: d.frame_id,
                confidence: d.confidence,
            });
        }
    }
    out
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Runs one chunk through perception, grounding, lifting and fusion.
///
/// All-or-nothing: the graph is only replaced when every stage succeeds.
/// Re-ingesting a chunk that is already in the graph changes nothing.
pub fn ingest_chunk(
    graph: &mut SceneGraph3D,
    chunk_id: ChunkId,
    frames: &[PosedFrame],
    backend: &dyn PerceptionBackend,
    opts: &IngestOptions,
) -> Result<ChunkReport, IngestError> {
    let invalid = |reason: String| IngestError::InvalidChunk { chunk_id, reason };
    for f in frames {
        f.validate().map_err(|e| invalid(e.to_string()))?;
    }
    let start = Instant::now();
    let mut report = ChunkReport {
        chunk_id,
        frame_ids: frames.iter().map(|f| f.frame_id).collect(),
        ..ChunkReport::default()
    };

    let t = Instant::now();
    let request = ChunkRequest::new(chunk_id, frames, opts.perception.chunk_size)?;
    let sg_full = request_scene_graph_2d(&request, backend)?;
    report.timings.scene_graph_s = secs(t);
    report.objects_seen = sg_full.objects.len();

    let t = Instant::now();
    let sg = filter_objects(&sg_full, &opts.perception.exclusions);
    report.objects_excluded = sg_full.objects.len() - sg.objects.len();
    report.timings.filter_s = secs(t);

    let t = Instant::now();
    let by_id: HashMap<FrameId, &PosedFrame> = frames.iter().map(|f| (f.frame_id, f)).collect();
    let mut per_frame: BTreeMap<FrameId, Vec<&Detection2D>> = BTreeMap::new();
    for o in &sg.objects {
        per_frame.entry(o.frame_id).or_default().push(o);
    }
    let mut grounded: Vec<(FrameId, Vec<Detection2D>)> = Vec::new();
    for (frame_id, objects) in &per_frame {
        let frame = by_id[frame_id];
        let mut labels: Vec<String> = Vec::new();
        for o in objects {
            if !labels
                .iter()
                .any(|l| normalize_label(l) == normalize_label(&o.label))
            {
                labels.push(o.label.clone());
            }
        }
        let g = ground_objects(&labels, frame, backend, opts.perception.grounding_threshold)?;
        report.labels_absent.extend(g.absent);
        let assigned = assign_detections(objects, g.detections);
        report.objects_grounded += assigned.len();
        grounded.push((*frame_id, assigned));
    }
    report.timings.grounding_s = secs(t);

    let t = Instant::now();
    let mut instances = Vec::new();
    for (frame_id, dets) in &grounded {
        let out = lift_detections(dets, by_id[frame_id], chunk_id, &opts.fusion, opts.flip_z)?;
        report.instances_dropped += out.dropped.len();
        instances.extend(out.instances);
    }
    report.instances_lifted = instances.len();
    report.timings.lift_s = secs(t);

    let t = Instant::now();
    let mut work = graph.clone();
    let merge = associate_and_merge(&mut work, &instances, &opts.fusion);
    report.nodes_merged = merge.merged.len();
    report.nodes_created = merge.created.len();
    report.created_node_ids = merge.created.clone();
    let id_map: HashMap<LocalId, NodeId> = instances
        .iter()
        .zip(&merge.assignments)
        .map(|(i, n)| (i.local_id.clone(), *n))
        .collect();
    report.timings.merge_s = secs(t);

    let t = Instant::now();
    let rel = apply_relations(&mut work, &sg, &id_map);
    report.relations_applied = rel.applied;
    report.relations_discarded = rel.discarded;
    report.edges_created = rel.created;
    report.edges_updated = recompute_edge_distances(&mut work);
    report.timings.relations_s = secs(t);

    work.chunks_ingested = work.chunks_ingested.max(chunk_id + 1);
    let violations = validate_graph(&work);
    if !violations.is_empty() {
        return Err(IngestError::InvalidResult {
            chunk_id,
            violations: violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; "),
        });
    }
    *graph = work;
    report.timings.total_s = secs(start);
    tracing::info!(
        chunk_id,
        created = report.nodes_created,
        merged = report.nodes_merged,
        dropped = report.instances_dropped,
        relations = report.relations_applied,
        scene_graph_s = report.timings.scene_graph_s,
        grounding_s = report.timings.grounding_s,
        lift_s = report.timings.lift_s,
        total_s = report.timings.total_s,
        "chunk ingested"
    );
    Ok(report)
}
