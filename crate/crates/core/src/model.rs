//! Shared domain types and the canonical in-memory scene graph.
//!
//! The global [`SceneGraph3D`] follows a single-writer contract: one owner
//! mutates it, readers work on clones.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{pairwise_distance, Aabb, Point3};

pub type NodeId = u64;
pub type FrameId = u64;
pub type ChunkId = u64;
pub type LocalId = String;

/// Current graph schema version.
pub const SCHEMA_VERSION: u32 = 1;

/// Unit-norm tolerance enforced when constructing a [`Pose`].
pub const POSE_UNIT_TOLERANCE: f64 = 1e-9;

/// Tolerance for the stored edge distance against the live centroid distance.
pub const STALE_DISTANCE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid {what}: {reason}")]
pub struct InvalidValue {
    pub what: &'static str,
    pub reason: String,
}

impl InvalidValue {
    fn new(what: &'static str, reason: impl Into<String>) -> Self {
        Self {
            what,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), InvalidValue> {
        let bad = |r: String| Err(InvalidValue::new("intrinsics", r));
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return bad(format!(
                "focal lengths must be positive ({}, {})",
                self.fx, self.fy
            ));
        }
        if self.width == 0 || self.height == 0 {
            return bad(format!("empty image {}x{}", self.width, self.height));
        }
        if !(0.0..=f64::from(self.width)).contains(&self.cx)
            || !(0.0..=f64::from(self.height)).contains(&self.cy)
        {
            return bad(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            ));
        }
        Ok(())
    }
}

/// Quaternion stored as `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct UnitQuat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuat {
    pub const IDENTITY: UnitQuat = UnitQuat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }
}

impl From<[f64; 4]> for UnitQuat {
    fn from(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl From<UnitQuat> for [f64; 4] {
    fn from(q: UnitQuat) -> Self {
        [q.w, q.x, q.y, q.z]
    }
}

/// Camera (robot) pose in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Point3,
    pub orientation: UnitQuat,
}

impl Pose {
    pub fn new(position: Point3, orientation: UnitQuat) -> Result<Self, InvalidValue> {
        let pose = Self {
            position,
            orientation,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// Renormalizes the quaternion when its norm is within `max_drift` of 1.
    pub fn renormalized(
        position: Point3,
        orientation: UnitQuat,
        max_drift: f64,
    ) -> Result<Self, InvalidValue> {
        if !position.is_finite() || !orientation.is_finite() {
            return Err(InvalidValue::new("pose", "non-finite component"));
        }
        let n = orientation.norm();
        if (n - 1.0).abs() > max_drift {
            return Err(InvalidValue::new(
                "pose",
                format!("quaternion norm {n} drifts more than {max_drift} from 1"),
            ));
        }
        Self::new(position, orientation.normalized())
    }

    pub fn identity() -> Self {
        Self {
            position: Point3::default(),
            orientation: UnitQuat::IDENTITY,
        }
    }

    pub fn validate(&self) -> Result<(), InvalidValue> {
        if !self.position.is_finite() || !self.orientation.is_finite() {
            return Err(InvalidValue::new("pose", "non-finite component"));
        }
        let n = self.orientation.norm();
        if (n - 1.0).abs() > POSE_UNIT_TOLERANCE {
            return Err(InvalidValue::new(
                "pose",
                format!("quaternion norm {n} is not 1"),
            ));
        }
        Ok(())
    }
}

/// Row-major range image in meters. `0` and non-finite values mark invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self, InvalidValue> {
        if data.len() != width as usize * height as usize {
            return Err(InvalidValue::new(
                "depth map",
                format!("{} values for {width}x{height}", data.len()),
            ));
        }
        if let Some(d) = data.iter().find(|d| d.is_finite() && **d < 0.0) {
            return Err(InvalidValue::new(
                "depth map",
                format!("negative depth {d}"),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.data[v as usize * self.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, d: f64) {
        let w = self.width as usize;
        self.data[v as usize * w + u as usize] = d;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Row-major binary segmentation mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, InvalidValue> {
        if bits.len() != width as usize * height as usize {
            return Err(InvalidValue::new(
                "mask",
                format!("{} bits for {width}x{height}", bits.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, u: u32, v: u32) -> bool {
        self.bits[v as usize * self.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, on: bool) {
        let w = self.width as usize;
        self.bits[v as usize * w + u as usize] = on;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn population(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Set pixels as `(u, v)` in row-major order.
    pub fn set_pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| ((i as u32) % w, (i as u32) / w))
    }

    /// Tight bounding box of the set pixels, if any.
    pub fn bounds(&self) -> Option<BBox> {
        let mut it = self.set_pixels();
        let (u0, v0) = it.next()?;
        let mut b = BBox::new(u0, v0, u0, v0);
        for (u, v) in it {
            b.u_min = b.u_min.min(u);
            b.u_max = b.u_max.max(u);
            b.v_min = b.v_min.min(v);
            b.v_max = b.v_max.max(v);
        }
        Some(b)
    }
}

/// Inclusive pixel box, serialized as `[u_min, v_min, u_max, v_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub u_min: u32,
    pub v_min: u32,
    pub u_max: u32,
    pub v_max: u32,
}

impl BBox {
    pub const fn new(u_min: u32, v_min: u32, u_max: u32, v_max: u32) -> Self {
        Self {
            u_min,
            v_min,
            u_max,
            v_max,
        }
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<(), InvalidValue> {
        if self.u_min > self.u_max
            || self.v_min > self.v_max
            || self.u_max >= width
            || self.v_max >= height
        {
            return Err(InvalidValue::new(
                "bbox",
                format!(
                    "{:?} does not fit a {width}x{height} image",
                    self.as_array()
                ),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, u: u32, v: u32) -> bool {
        self.u_min <= u && u <= self.u_max && self.v_min <= v && v <= self.v_max
    }

    pub fn area(&self) -> u64 {
        u64::from(self.u_max - self.u_min + 1) * u64::from(self.v_max - self.v_min + 1)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let u0 = self.u_min.max(other.u_min);
        let v0 = self.v_min.max(other.v_min);
        let u1 = self.u_max.min(other.u_max);
        let v1 = self.v_max.min(other.v_max);
        if u0 > u1 || v0 > v1 {
            return 0.0;
        }
        let inter = BBox::new(u0, v0, u1, v1).area() as f64;
        inter / ((self.area() + other.area()) as f64 - inter)
    }

    pub fn as_array(&self) -> [u32; 4] {
        [self.u_min, self.v_min, self.u_max, self.v_max]
    }
}

impl From<[u32; 4]> for BBox {
    fn from(a: [u32; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        b.as_array()
    }
}

/// One RGB-D observation with its camera pose and intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedFrame {
    pub frame_id: FrameId,
    pub rgb_ref: String,
    pub depth: DepthMap,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub timestamp: Option<f64>,
}

impl PosedFrame {
    pub fn validate(&self) -> Result<(), InvalidValue> {
        self.intrinsics.validate()?;
        self.pose.validate()?;
        if self.depth.width() != self.intrinsics.width
            || self.depth.height() != self.intrinsics.height
        {
            return Err(InvalidValue::new(
                "frame",
                format!(
                    "frame {}: depth {}x{} does not match intrinsics {}x{}",
                    self.frame_id,
                    self.depth.width(),
                    self.depth.height(),
                    self.intrinsics.width,
                    self.intrinsics.height
                ),
            ));
        }
        Ok(())
    }
}

/// An open-vocabulary object seen in a frame, optionally grounded with a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection2D {
    pub local_id: LocalId,
    pub label: String,
    pub description: String,
    pub category: String,
    pub room_type: String,
    pub bbox: Option<BBox>,
    pub mask: Option<BinaryMask>,
    pub frame_id: FrameId,
    pub confidence: f64,
}

impl Detection2D {
    pub fn validate(&self, width: u32, height: u32) -> Result<(), InvalidValue> {
        if let Some(b) = &self.bbox {
            b.validate(width, height)?;
        }
        if let Some(m) = &self.mask {
            if m.width() != width || m.height() != height {
                return Err(InvalidValue::new(
                    "detection",
                    format!(
                        "mask {}x{} for a {width}x{height} frame",
                        m.width(),
                        m.height()
                    ),
                ));
            }
            if let Some(b) = &self.bbox {
                if let Some((u, v)) = m.set_pixels().find(|(u, v)| !b.contains(*u, *v)) {
                    return Err(InvalidValue::new(
                        "detection",
                        format!(
                            "mask pixel ({u}, {v}) of '{}' lies outside its bbox",
                            self.label
                        ),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation2D {
    pub subject: LocalId,
    pub predicate: String,
    pub object: LocalId,
}

/// Backend output for one chunk of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph2D {
    pub chunk_id: ChunkId,
    pub objects: Vec<Detection2D>,
    pub relations: Vec<Relation2D>,
    pub frame_ids: Vec<FrameId>,
}

impl SceneGraph2D {
    /// Checks the structural invariants: unique local ids, no dangling or
    /// reflexive relations. Returns every problem found.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for o in &self.objects {
            if !seen.insert(o.local_id.as_str()) {
                out.push(format!("duplicate local_id '{}'", o.local_id));
            }
        }
        for r in &self.relations {
            for end in [&r.subject, &r.object] {
                if !seen.contains(end.as_str()) {
                    out.push(format!(
                        "relation '{}' references undeclared local_id '{end}'",
                        r.predicate
                    ));
                }
            }
            if r.subject == r.object {
                out.push(format!(
                    "self-relation '{}' on local_id '{}'",
                    r.predicate, r.subject
                ));
            }
        }
        out
    }
}

/// A fused world-frame object instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectNode3D {
    pub node_id: NodeId,
    pub label: String,
    pub description: String,
    pub category: String,
    pub room_type: String,
    pub centroid: Point3,
    pub point_count: u64,
    pub aabb: Aabb,
    pub observed_in: BTreeSet<FrameId>,
    pub created_chunk: ChunkId,
    pub last_updated_chunk: ChunkId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub predicate: String,
    pub distance_m: f64,
}

impl RelationEdge {
    pub fn key(&self) -> (NodeId, NodeId, &str) {
        (self.src, self.dst, self.predicate.as_str())
    }
}

/// The global incremental scene graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph3D {
    pub scene_id: String,
    pub nodes: BTreeMap<NodeId, ObjectNode3D>,
    /// Kept sorted by `(src, dst, predicate)`.
    pub edges: Vec<RelationEdge>,
    /// High-water mark: one past the largest chunk id ingested so far.
    pub chunks_ingested: u64,
    pub schema_version: u32,
    /// Next node id to hand out. Never decreases, so ids are never reused.
    pub next_node_id: NodeId,
}

impl SceneGraph3D {
    pub fn new(scene_id: impl Into<String>) -> Self {
        Self {
            scene_id: scene_id.into(),
            nodes: BTreeMap::new(),
            edges: Vec::new(),
            chunks_ingested: 0,
            schema_version: SCHEMA_VERSION,
            next_node_id: 0,
        }
    }

    pub fn allocate_node_id(&mut self) -> NodeId {
        let id = self.next_node_id;
        self.next_node_id += 1;
        id
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn edge_position(&self, src: NodeId, dst: NodeId, predicate: &str) -> Result<usize, usize> {
        self.edges
            .binary_search_by(|e| e.key().cmp(&(src, dst, predicate)))
    }

    pub fn find_edge(&self, src: NodeId, dst: NodeId, predicate: &str) -> Option<&RelationEdge> {
        self.edge_position(src, dst, predicate)
            .ok()
            .map(|i| &self.edges[i])
    }

    /// Inserts or refreshes the edge for `(src, dst, predicate)`, setting its
    /// distance from the current centroids. Returns `true` if it was new.
    ///
    /// Both endpoints must exist and differ.
    pub fn upsert_edge(&mut self, src: NodeId, dst: NodeId, predicate: &str) -> bool {
        debug_assert_ne!(src, dst);
        let distance_m = pairwise_distance(&self.nodes[&src].centroid, &self.nodes[&dst].centroid);
        match self.edge_position(src, dst, predicate) {
            Ok(i) => {
                self.edges[i].distance_m = distance_m;
                false
            }
            Err(i) => {
                self.edges.insert(
                    i,
                    RelationEdge {
                        src,
                        dst,
                        predicate: predicate.to_string(),
                        distance_m,
                    },
                );
                true
            }
        }
    }

    /// Restores the canonical edge order after direct manipulation of `edges`.
    pub fn sort_edges(&mut self) {
        self.edges.sort_by(|a, b| a.key().cmp(&b.key()));
    }
}

/// A single broken invariant found by [`validate_graph`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NodeKeyMismatch {
        key: NodeId,
        node_id: NodeId,
    },
    NoPoints {
        node: NodeId,
    },
    NonFiniteGeometry {
        node: NodeId,
    },
    CentroidOutsideAabb {
        node: NodeId,
    },
    IdCounterBehind {
        node: NodeId,
        next_node_id: NodeId,
    },
    DanglingEdge {
        src: NodeId,
        dst: NodeId,
        predicate: String,
        missing: NodeId,
    },
    SelfEdge {
        node: NodeId,
        predicate: String,
    },
    NegativeDistance {
        src: NodeId,
        dst: NodeId,
        predicate: String,
        distance_m: f64,
    },
    StaleDistance {
        src: NodeId,
        dst: NodeId,
        predicate: String,
        stored: f64,
        actual: f64,
    },
    DuplicateEdge {
        src: NodeId,
        dst: NodeId,
        predicate: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            NodeKeyMismatch { key, node_id } => {
                write!(f, "node stored under key {key} carries node_id {node_id}")
            }
            NoPoints { node } => write!(f, "node {node} has point_count 0"),
            NonFiniteGeometry { node } => write!(f, "node {node} has non-finite geometry"),
            CentroidOutsideAabb { node } => write!(f, "node {node} centroid lies outside its aabb"),
            IdCounterBehind { node, next_node_id } => write!(
                f,
                "node {node} is not below the id counter {next_node_id}"
            ),
            DanglingEdge { src, dst, predicate, missing } => write!(
                f,
                "edge {src} -[{predicate}]-> {dst} references missing node {missing}"
            ),
            SelfEdge { node, predicate } => write!(f, "self edge on node {node} ({predicate})"),
            NegativeDistance { src, dst, predicate, distance_m } => write!(
                f,
                "edge {src} -[{predicate}]-> {dst} has invalid distance {distance_m}"
            ),
            StaleDistance { src, dst, predicate, stored, actual } => write!(
                f,
                "stale distance on edge {src} -[{predicate}]-> {dst}: stored {stored}, centroids {actual}"
            ),
            DuplicateEdge { src, dst, predicate } => {
                write!(f, "duplicate edge {src} -[{predicate}]-> {dst}")
            }
        }
    }
}

/// Lists every invariant violation in `graph`. Empty means valid.
pub fn validate_graph(graph: &SceneGraph3D) -> Vec<Violation> {
    let mut out = Vec::new();
    for (&key, node) in &graph.nodes {
        if key != node.node_id {
            out.push(Violation::NodeKeyMismatch {
                key,
                node_id: node.node_id,
            });
        }
        if node.node_id >= graph.next_node_id {
            out.push(Violation::IdCounterBehind {
                node: node.node_id,
                next_node_id: graph.next_node_id,
            });
        }
        if node.point_count == 0 {
            out.push(Violation::NoPoints { node: key });
        }
        let finite =
            node.centroid.is_finite() && node.aabb.min.is_finite() && node.aabb.max.is_finite();
        if !finite {
            out.push(Violation::NonFiniteGeometry { node: key });
        } else if !node.aabb.contains(&node.centroid) {
            out.push(Violation::CentroidOutsideAabb { node: key });
        }
    }

    let mut seen = HashSet::new();
    for e in &graph.edges {
        let mut endpoints_ok = true;
        for end in [e.src, e.dst] {
            if !graph.nodes.contains_key(&end) {
                endpoints_ok = false;
                out.push(Violation::DanglingEdge {
                    src: e.src,
                    dst: e.dst,
                    predicate: e.predicate.clone(),
                    missing: end,
                });
                if e.src == e.dst {
                    break;
                }
            }
        }
        if e.src == e.dst {
            out.push(Violation::SelfEdge {
                node: e.src,
                predicate: e.predicate.clone(),
            });
        }
        if !(e.distance_m.is_finite() && e.distance_m >= 0.0) {
            out.push(Violation::NegativeDistance {
                src: e.src,
                dst: e.dst,
                predicate: e.predicate.clone(),
                distance_m: e.distance_m,
            });
        } else if endpoints_ok {
            let actual =
                pairwise_distance(&graph.nodes[&e.src].centroid, &graph.nodes[&e.dst].centroid);
            if (actual - e.distance_m).abs() > STALE_DISTANCE_TOLERANCE {
                out.push(Violation::StaleDistance {
                    src: e.src,
                    dst: e.dst,
                    predicate: e.predicate.clone(),
                    stored: e.distance_m,
                    actual,
                });
            }
        }
        if !seen.insert((e.src, e.dst, e.predicate.as_str())) {
            out.push(Violation::DuplicateEdge {
                src: e.src,
                dst: e.dst,
                predicate: e.predicate.clone(),
            });
        }
    }
    out
}
