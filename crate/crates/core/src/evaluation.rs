//! Scoring a graph against annotated ground truth.
//!
//! Nodes are matched to annotations greedily by centroid distance. Every ratio
//! is `None` when its denominator is empty and prints as `-`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{ChunkReport, StageTimings};
use crate::geometry::{pairwise_distance, Aabb, Point3};
use crate::model::{NodeId, ObjectNode3D, SceneGraph3D};
use crate::text::{normalize_label, normalize_predicate};

pub const DEFAULT_MATCH_RADIUS: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid annotations: {0}")]
    InvalidAnnotations(String),
    #[error("match_radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("{}: {source}", .path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed annotations: {0}")]
    Malformed(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedObject {
    pub id: String,
    pub label: String,
    /// Acceptable labels; matching is case-insensitive after normalization.
    pub synonyms: Vec<String>,
    pub centroid: Point3,
    /// Empty when the scene has no room ground truth.
    #[serde(default)]
    pub room_type: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedRelation {
    pub subject: String,
    pub predicates: Vec<String>,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationSet {
    pub scene_id: String,
    pub objects: Vec<AnnotatedObject>,
    #[serde(default)]
    pub relations: Vec<AnnotatedRelation>,
}

impl AnnotationSet {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidAnnotations(m));
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id.as_str()) {
                return bad(format!("duplicate object id {:?}", o.id));
            }
            if !o.centroid.is_finite() {
                return bad(format!("object {:?} has a non-finite centroid", o.id));
            }
            if o.synonyms.is_empty() {
                return bad(format!("object {:?} has no synonyms", o.id));
            }
        }
        for r in &self.relations {
            for end in [&r.subject, &r.object] {
                if !ids.contains(end.as_str()) {
                    return bad(format!("relation names unknown object {end:?}"));
                }
            }
            if r.predicates.is_empty() {
                return bad(format!(
                    "relation {} -> {} has no predicates",
                    r.subject, r.object
                ));
            }
        }
        Ok(())
    }

    pub fn accepts_label(&self, idx: usize, label: &str) -> bool {
        let o = &self.objects[idx];
        let l = normalize_label(label);
        normalize_label(&o.label) == l || o.synonyms.iter().any(|s| normalize_label(s) == l)
    }
}

pub fn load_annotations(path: &Path) -> Result<AnnotationSet, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let set: AnnotationSet = serde_json::from_str(&text)?;
    set.validate()?;
    Ok(set)
}

/// Node-to-annotation assignment. Annotations are referred to by index.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Matching {
    pub matched: BTreeMap<NodeId, usize>,
    /// Unmatched nodes lying within the radius of an already claimed annotation.
    pub duplicates: BTreeMap<NodeId, usize>,
    pub unmatched_nodes: Vec<NodeId>,
    pub unmatched_annotations: Vec<usize>,
}

/// Greedy nearest-centroid matching: candidate pairs within `match_radius`
/// (inclusive) are taken in order of distance, then node id, then annotation id.
pub fn match_nodes(
    graph: &SceneGraph3D,
    annotations: &AnnotationSet,
    match_radius: f64,
) -> Result<Matching, EvalError> {
    if !(match_radius.is_finite() && match_radius > 0.0) {
        return Err(EvalError::InvalidRadius(match_radius));
    }
    let mut pairs = Vec::new();
    for (id, n) in &graph.nodes {
        for (k, a) in annotations.objects.iter().enumerate() {
            let d = pairwise_distance(&n.centroid, &a.centroid);
            if d <= match_radius {
                pairs.push((d, *id, k));
            }
        }
    }
    let ann_id = |k: usize| annotations.objects[k].id.as_str();
    pairs.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then_with(|| ann_id(a.2).cmp(ann_id(b.2)))
    });
    let mut m = Matching::default();
    let mut claimed = vec![false; annotations.objects.len()];
    for &(_, id, k) in &pairs {
        if claimed[k] || m.matched.contains_key(&id) {
            continue;
        }
        claimed[k] = true;
        m.matched.insert(id, k);
    }
    for &(_, id, k) in &pairs {
        if !m.matched.contains_key(&id) && !m.duplicates.contains_key(&id) {
            debug_assert!(claimed[k]);
            m.duplicates.insert(id, k);
        }
    }
    m.unmatched_nodes = graph
        .nodes
        .keys()
        .filter(|id| !m.matched.contains_key(id) && !m.duplicates.contains_key(id))
        .copied()
        .collect();
    m.unmatched_annotations = (0..annotations.objects.len())
        .filter(|&k| !claimed[k])
        .collect();
    Ok(m)
}

/// Per-stage wall-clock totals over a run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingSummary {
    pub chunks: usize,
    pub total: StageTimings,
    pub mean_chunk_s: f64,
}

pub fn summarize_timings(reports: &[ChunkReport]) -> TimingSummary {
    let mut t = StageTimings::default();
    for r in reports {
        let s = &r.timings;
        t.scene_graph_s += s.scene_graph_s;
        t.filter_s += s.filter_s;
        t.grounding_s += s.grounding_s;
        t.lift_s += s.lift_s;
        t.merge_s += s.merge_s;
        t.relations_s += s.relations_s;
        t.total_s += s.total_s;
    }
    TimingSummary {
        chunks: reports.len(),
        mean_chunk_s: if reports.is_empty() {
            0.0
        } else {
            t.total_s / reports.len() as f64
        },
        total: t,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scene_id: String,
    pub nodes: usize,
    pub edges: usize,
    pub annotated_objects: usize,
    pub matched: usize,
    pub node_precision: Option<f64>,
    pub room_precision: Option<f64>,
    pub edge_precision: Option<f64>,
    pub duplicates: usize,
    pub valid_object_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<TimingSummary>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Node precision is over all graph nodes; room precision over matched nodes
/// whose annotation carries a room; edge precision over all graph edges.
pub fn compute_metrics(
    graph: &SceneGraph3D,
    annotations: &AnnotationSet,
    matching: &Matching,
) -> EvalReport {
    let mut correct_labels = 0;
    let mut room_den = 0;
    let mut room_ok = 0;
    for (id, &k) in &matching.matched {
        let node = &graph.nodes[id];
        if annotations.accepts_label(k, &node.label) {
            correct_labels += 1;
        }
        let want = &annotations.objects[k].room_type;
        if !want.trim().is_empty() {
            room_den += 1;
            if normalize_label(want) == normalize_label(&node.room_type) {
                room_ok += 1;
            }
        }
    }

    let idx: HashMap<&str, usize> = annotations
        .objects
        .iter()
        .enumerate()
        .map(|(k, o)| (o.id.as_str(), k))
        .collect();
    let mut acceptable: BTreeSet<(usize, String, usize)> = BTreeSet::new();
    for r in &annotations.relations {
        for p in &r.predicates {
            acceptable.insert((
                idx[r.subject.as_str()],
                normalize_label(&normalize_predicate(p)),
                idx[r.object.as_str()],
            ));
        }
    }
    let correct_edges = graph
        .edges
        .iter()
        .filter(
            |e| match (matching.matched.get(&e.src), matching.matched.get(&e.dst)) {
                (Some(&s), Some(&o)) => acceptable.contains(&(
                    s,
                    normalize_label(&normalize_predicate(&e.predicate)),
                    o,
                )),
                _ => false,
            },
        )
        .count();

    EvalReport {
        scene_id: graph.scene_id.clone(),
        nodes: graph.node_count(),
        edges: graph.edge_count(),
        annotated_objects: annotations.objects.len(),
        matched: matching.matched.len(),
        node_precision: ratio(correct_labels, graph.node_count()),
        room_precision: ratio(room_ok, room_den),
        edge_precision: ratio(correct_edges, graph.edge_count()),
        duplicates: matching.duplicates.len(),
        valid_object_fraction: ratio(matching.matched.len(), graph.node_count()),
        timings: None,
    }
}

pub fn evaluate(
    graph: &SceneGraph3D,
    annotations: &AnnotationSet,
    match_radius: f64,
) -> Result<EvalReport, EvalError> {
    let m = match_nodes(graph, annotations, match_radius)?;
    Ok(compute_metrics(graph, annotations, &m))
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let rows: Vec<(&str, String)> = vec![
            ("scene", self.scene_id.clone()),
            ("nodes", self.nodes.to_string()),
            ("edges", self.edges.to_string()),
            ("annotated objects", self.annotated_objects.to_string()),
            ("matched", self.matched.to_string()),
            ("node prec.", cell(self.node_precision)),
            ("room prec.", cell(self.room_precision)),
            ("edge prec.", cell(self.edge_precision)),
            ("duplicates", self.duplicates.to_string()),
            ("valid objects", cell(self.valid_object_fraction)),
        ];
        for (k, v) in rows {
            writeln!(s, "{k:<18} {v}").unwrap();
        }
        if let Some(t) = &self.timings {
            writeln!(s, "{:<18} {}", "chunks", t.chunks).unwrap();
            for (k, v) in [
                ("scene graph (s)", t.total.scene_graph_s),
                ("grounding (s)", t.total.grounding_s),
                ("lifting (s)", t.total.lift_s),
                ("merging (s)", t.total.merge_s),
                ("relations (s)", t.total.relations_s),
                ("total (s)", t.total.total_s),
                ("per chunk (s)", t.mean_chunk_s),
            ] {
                writeln!(s, "{k:<18} {v:.3}").unwrap();
            }
        }
        s
    }
}

/// A graph holding exactly the annotated objects and the first acceptable
/// predicate of each relation. Scores 1.0 on every defined metric.
pub fn graph_from_annotations(annotations: &AnnotationSet) -> SceneGraph3D {
    let mut g = SceneGraph3D::new(annotations.scene_id.clone());
    let mut ids = HashMap::new();
    for o in &annotations.objects {
        let id = g.allocate_node_id();
        ids.insert(o.id.as_str(), id);
        g.nodes.insert(
            id,
            ObjectNode3D {
                node_id: id,
                label: o.label.clone(),
                description: String::new(),
                category: String::new(),
                room_type: o.room_type.clone(),
                centroid: o.centroid,
                point_count: 1,
                aabb: Aabb::point(o.centroid),
                observed_in: BTreeSet::new(),
                created_chunk: 0,
                last_updated_chunk: 0,
            },
        );
    }
    for r in &annotations.relations {
        let (s, o) = (ids[r.subject.as_str()], ids[r.object.as_str()]);
        if s != o {
            g.upsert_edge(s, o, &normalize_predicate(&r.predicates[0]));
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(id: &str, label: &str, c: [f64; 3], room: &str) -> AnnotatedObject {
        AnnotatedObject {
            id: id.into(),
            label: label.into(),
            synonyms: vec![label.into()],
            centroid: Point3::from(c),
            room_type: room.into(),
        }
    }

    fn annotations() -> AnnotationSet {
        AnnotationSet {
            scene_id: "s".into(),
            objects: vec![
                obj("sofa_0", "sofa", [0.0, 2.0, 0.0], "living room"),
                obj("table_0", "table", [1.5, 2.0, 0.0], "living room"),
                obj("lamp_0", "lamp", [-2.0, 3.0, 0.5], ""),
            ],
            relations: vec![AnnotatedRelation {
                subject: "table_0".into(),
                predicates: vec!["next to".into(), "is near".into()],
                object: "sofa_0".into(),
            }],
        }
    }

    fn node_at(g: &mut SceneGraph3D, label: &str, c: [f64; 3], room: &str) -> NodeId {
        let id = g.allocate_node_id();
        let p = Point3::from(c);
        g.nodes.insert(
            id,
            ObjectNode3D {
                node_id: id,
                label: label.into(),
                description: String::new(),
                category: String::new(),
                room_type: room.into(),
                centroid: p,
                point_count: 1,
                aabb: Aabb::point(p),
                observed_in: BTreeSet::new(),
                created_chunk: 0,
                last_updated_chunk: 0,
            },
        );
        id
    }

    #[test]
    fn self_consistency() {
        let a = annotations();
        let g = graph_from_annotations(&a);
        let r = evaluate(&g, &a, DEFAULT_MATCH_RADIUS).unwrap();
        assert_eq!(r.node_precision, Some(1.0));
        assert_eq!(r.room_precision, Some(1.0));
        assert_eq!(r.edge_precision, Some(1.0));
        assert_eq!(r.valid_object_fraction, Some(1.0));
        assert_eq!(r.duplicates, 0);
    }

    #[test]
    fn nearer_of_two_matches_other_is_duplicate() {
        let a = annotations();
        let mut g = SceneGraph3D::new("s");
        let far = node_at(&mut g, "sofa", [0.3, 2.0, 0.0], "");
        let near = node_at(&mut g, "couch", [0.1, 2.0, 0.0], "");
        let lost = node_at(&mut g, "sofa", [10.0, 0.0, 0.0], "");
        let m = match_nodes(&g, &a, 0.5).unwrap();
        assert_eq!(m.matched.get(&near), Some(&0));
        assert_eq!(m.duplicates.get(&far), Some(&0));
        assert_eq!(m.unmatched_nodes, vec![lost]);
        assert_eq!(m.unmatched_annotations, vec![1, 2]);
        let r = compute_metrics(&g, &a, &m);
        // "couch" is not a synonym here
        assert_eq!(r.node_precision, Some(0.0));
        assert_eq!(r.duplicates, 1);
        assert_eq!(r.valid_object_fraction, Some(1.0 / 3.0));
    }

    #[test]
    fn radius_is_inclusive() {
        let a = annotations();
        let mut g = SceneGraph3D::new("s");
        node_at(&mut g, "sofa", [0.5, 2.0, 0.0], "");
        assert_eq!(match_nodes(&g, &a, 0.5).unwrap().matched.len(), 1);
        assert!(matches!(
            match_nodes(&g, &a, 0.0),
            Err(EvalError::InvalidRadius(_))
        ));
    }

    #[test]
    fn nine_of_ten_labels() {
        let mut a = AnnotationSet {
            scene_id: "s".into(),
            objects: vec![],
            relations: vec![],
        };
        let mut g = SceneGraph3D::new("s");
        for i in 0..10 {
            let c = [i as f64 * 2.0, 0.0, 0.0];
            a.objects.push(obj(&format!("o{i}"), "chair", c, ""));
            node_at(&mut g, if i == 0 { "stool" } else { "Chair" }, c, "");
        }
        let r = evaluate(&g, &a, 0.5).unwrap();
        assert!((r.node_precision.unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn no_room_truth_is_absent() {
        let mut a = annotations();
        for o in &mut a.objects {
            o.room_type.clear();
        }
        let g = graph_from_annotations(&a);
        let r = evaluate(&g, &a, 0.5).unwrap();
        assert_eq!(r.room_precision, None);
        assert!(r.to_table().contains("room prec.         -"));
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["room_precision"].is_null());
    }

    #[test]
    fn empty_graph_has_no_ratios() {
        let r = evaluate(&SceneGraph3D::new("s"), &annotations(), 0.5).unwrap();
        assert_eq!(r.node_precision, None);
        assert_eq!(r.edge_precision, None);
        assert_eq!(r.valid_object_fraction, None);
    }

    #[test]
    fn wrong_predicate_and_direction() {
        let a = annotations();
        let mut g = graph_from_annotations(&a);
        g.upsert_edge(0, 1, "is near");
        g.upsert_edge(1, 0, "on top of");
        let r = evaluate(&g, &a, 0.5).unwrap();
        assert!((r.edge_precision.unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        let mut a = annotations();
        a.objects[0].synonyms.clear();
        assert!(a.validate().is_err());
        let mut a = annotations();
        a.relations[0].object = "ghost".into();
        assert!(a.validate().is_err());
        let mut a = annotations();
        a.objects[2].centroid.x = f64::NAN;
        assert!(a.validate().is_err());
    }
}
