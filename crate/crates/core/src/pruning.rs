//! Task-guided pruning: pick the goal node for a navigation query, then keep
//! the nodes closest to it, up to a cap (8 by default, goal included).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::pairwise_distance;
use crate::model::{NodeId, Pose, SceneGraph3D};
use crate::perception::wire::{GoalRequest, GoalResponse, WIRE_SCHEMA_VERSION};
use crate::perception::{PerceptionBackend, PerceptionError};
use crate::persistence::GraphDocument;
use crate::text::tokens;

pub const DEFAULT_MAX_NODES: usize = 8;

/// Query words that say nothing about which object is meant.
const STOPWORDS: &[&str] = &[
    "a", "an", "the", "go", "goto", "to", "towards", "toward", "near", "next", "by", "at", "in",
    "on", "of", "and", "find", "navigate", "move", "walk", "get", "please", "me", "my", "your",
    "is", "are", "there", "where", "closest", "nearest", "with", "from", "into", "up", "over",
];

#[derive(Debug, Error)]
pub enum PruneError {
    #[error("no node matches query '{0}'")]
    NoCandidate(String),
    #[error("backend selected node {0}, which is not in the graph")]
    InvalidSelection(NodeId),
    #[error("invalid prune query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneQuery {
    pub query_text: String,
    pub robot_pose: Option<Pose>,
    pub max_nodes: usize,
    pub max_radius: Option<f64>,
}

impl PruneQuery {
    pub fn new(query_text: impl Into<String>) -> Self {
        Self {
            query_text: query_text.into(),
            robot_pose: None,
            max_nodes: DEFAULT_MAX_NODES,
            max_radius: None,
        }
    }
}

/// A goal-centred subgraph. `graph` holds the kept nodes and the edges of the
/// full graph running between them, unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedGraph {
    pub goal_node_id: NodeId,
    pub query: String,
    pub graph: SceneGraph3D,
    pub rationale: BTreeMap<NodeId, String>,
}

fn query_terms(query: &str) -> BTreeSet<String> {
    tokens(query)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Lexical goal choice: most query terms found in label + description, then
/// nearest to the robot (when a pose is given), then lowest node id.
pub fn lexical_goal(
    graph: &SceneGraph3D,
    query_text: &str,
    robot_pose: Option<&Pose>,
) -> Result<NodeId, PruneError> {
    let terms = query_terms(query_text);
    let mut best: Option<(usize, f64, NodeId)> = None;
    for (id, node) in &graph.nodes {
        let mut words = tokens(&node.label);
        words.extend(tokens(&node.description));
        let overlap = terms.iter().filter(|t| words.contains(*t)).count();
        if overlap == 0 {
            continue;
        }
        let dist = robot_pose
            .map(|p| pairwise_distance(&p.position, &node.centroid))
            .unwrap_or(0.0);
        let better = match best {
            None => true,
            Some((bo, bd, _)) => overlap > bo || (overlap == bo && dist < bd),
        };
        if better {
            best = Some((overlap, dist, *id));
        }
    }
    best.map(|(_, _, id)| id)
        .ok_or_else(|| PruneError::NoCandidate(query_text.to_string()))
}

/// Picks the goal node, through the backend when one is given.
pub fn select_goal(
    graph: &SceneGraph3D,
    query_text: &str,
    robot_pose: Option<&Pose>,
    backend: Option<&dyn PerceptionBackend>,
) -> Result<NodeId, PruneError> {
    if graph.is_empty() {
        return Err(PruneError::NoCandidate(query_text.to_string()));
    }
    let Some(backend) = backend else {
        return lexical_goal(graph, query_text, robot_pose);
    };
    let req = GoalRequest {
        schema_version: WIRE_SCHEMA_VERSION,
        query: query_text.to_string(),
        graph: serde_json::to_value(GraphDocument::from_graph(graph))
            .expect("graph documents always serialize"),
    };
    let raw = backend.select_goal_raw(&req)?;
    let resp: GoalResponse = serde_json::from_slice(&raw).map_err(|e| PerceptionError::Schema {
        message: format!("malformed goal selection: {e}"),
        raw: raw.clone(),
    })?;
    if resp.schema_version != WIRE_SCHEMA_VERSION {
        return Err(PerceptionError::Schema {
            message: format!("unsupported schema_version {}", resp.schema_version),
            raw,
        }
        .into());
    }
    if !graph.nodes.contains_key(&resp.node_id) {
        return Err(PruneError::InvalidSelection(resp.node_id));
    }
    Ok(resp.node_id)
}

/// Whether a non-goal node may be kept: within `max_radius` of the robot when
/// both are set, always otherwise.
pub fn is_eligible(graph: &SceneGraph3D, id: NodeId, q: &PruneQuery) -> bool {
    match (q.robot_pose.as_ref(), q.max_radius) {
        (Some(pose), Some(r)) => pairwise_distance(&pose.position, &graph.nodes[&id].centroid) <= r,
        _ => true,
    }
}

pub fn prune(
    graph: &SceneGraph3D,
    q: &PruneQuery,
    backend: Option<&dyn PerceptionBackend>,
) -> Result<PrunedGraph, PruneError> {
    if q.max_nodes < 1 {
        return Err(PruneError::InvalidQuery(
            "max_nodes must be at least 1".into(),
        ));
    }
    if let Some(r) = q.max_radius {
        if !(r.is_finite() && r >= 0.0) {
            return Err(PruneError::InvalidQuery(format!(
                "max_radius {r} is not a distance"
            )));
        }
    }
    let goal = select_goal(graph, &q.query_text, q.robot_pose.as_ref(), backend)?;
    let goal_c = graph.nodes[&goal].centroid;

    let mut candidates: Vec<(f64, NodeId)> = graph
        .nodes
        .iter()
        .filter(|(id, _)| **id != goal && is_eligible(graph, **id, q))
        .map(|(id, n)| (pairwise_distance(&goal_c, &n.centroid), *id))
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    candidates.truncate(q.max_nodes - 1);

    let mut rationale = BTreeMap::new();
    rationale.insert(
        goal,
        if backend.is_some() {
            "goal: selected by perception backend".to_string()
        } else {
            format!("goal: best lexical match for '{}'", q.query_text)
        },
    );
    let mut sub = SceneGraph3D {
        scene_id: graph.scene_id.clone(),
        nodes: BTreeMap::new(),
        edges: Vec::new(),
        chunks_ingested: graph.chunks_ingested,
        schema_version: graph.schema_version,
        next_node_id: graph.next_node_id,
    };
    sub.nodes.insert(goal, graph.nodes[&goal].clone());
    for (rank, (d, id)) in candidates.iter().enumerate() {
        sub.nodes.insert(*id, graph.nodes[id].clone());
        rationale.insert(*id, format!("neighbor #{}: {:.2} m from goal", rank + 1, d));
    }
    sub.edges = graph
        .edges
        .iter()
        .filter(|e| sub.nodes.contains_key(&e.src) && sub.nodes.contains_key(&e.dst))
        .cloned()
        .collect();
    Ok(PrunedGraph {
        goal_node_id: goal,
        query: q.query_text.clone(),
        graph: sub,
        rationale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Aabb, Point3};
    use crate::model::{validate_graph, ObjectNode3D, UnitQuat};

    fn graph(items: &[(&str, &str, Point3)]) -> SceneGraph3D {
        let mut g = SceneGraph3D::new("s");
        for (label, desc, c) in items {
            let id = g.allocate_node_id();
            g.nodes.insert(
                id,
                ObjectNode3D {
                    node_id: id,
                    label: label.to_string(),
                    description: desc.to_string(),
                    category: String::new(),
                    room_type: String::new(),
                    centroid: *c,
                    point_count: 1,
                    aabb: Aabb::point(*c),
                    observed_in: Default::default(),
                    created_chunk: 0,
                    last_updated_chunk: 0,
                },
            );
        }
        g
    }

    fn at(x: f64) -> Point3 {
        Point3::new(x, 0.0, 0.0)
    }

    #[test]
    fn sofa_query() {
        let g = graph(&[
            ("table", "near the window", at(0.0)),
            ("sofa", "grey fabric", at(2.0)),
            ("lamp", "", at(4.0)),
        ]);
        assert_eq!(select_goal(&g, "Go near the sofa", None, None).unwrap(), 1);
    }

    #[test]
    fn empty_graph_has_no_candidate() {
        let g = SceneGraph3D::new("e");
        assert!(matches!(
            select_goal(&g, "sofa", None, None),
            Err(PruneError::NoCandidate(_))
        ));
        let g = graph(&[("lamp", "", at(0.0))]);
        assert!(matches!(
            select_goal(&g, "go to the sofa", None, None),
            Err(PruneError::NoCandidate(_))
        ));
    }

    #[test]
    fn ties_broken_by_robot_distance_then_id() {
        let g = graph(&[("chair", "", at(5.0)), ("chair", "", at(1.0))]);
        let robot = Pose::new(Point3::default(), UnitQuat::IDENTITY).unwrap();
        assert_eq!(select_goal(&g, "chair", Some(&robot), None).unwrap(), 1);
        assert_eq!(select_goal(&g, "chair", None, None).unwrap(), 0);
    }

    #[test]
    fn cap_binds() {
        let items: Vec<_> = (0..12).map(|i| ("box", "", at(f64::from(i)))).collect();
        let mut items = items;
        items[5].0 = "sofa";
        let g = graph(&items);
        let p = prune(&g, &PruneQuery::new("sofa"), None).unwrap();
        assert_eq!(p.graph.node_count(), 8);
        assert_eq!(p.goal_node_id, 5);
        assert!(p.graph.nodes.contains_key(&5));
        assert_eq!(p.rationale.len(), 8);

        let p = prune(
            &g,
            &PruneQuery {
                max_nodes: 1,
                ..PruneQuery::new("sofa")
            },
            None,
        )
        .unwrap();
        assert_eq!(p.graph.nodes.keys().copied().collect::<Vec<_>>(), vec![5]);
    }

    #[test]
    fn cap_not_binding() {
        let g = graph(&[
            ("sofa", "", at(0.0)),
            ("lamp", "", at(1.0)),
            ("tv", "", at(2.0)),
        ]);
        let p = prune(&g, &PruneQuery::new("sofa"), None).unwrap();
        assert_eq!(p.graph.node_count(), 3);
    }

    #[test]
    fn radius_excludes_far_nodes_near_goal() {
        // robot at the origin; goal cluster around x = 1; a lamp at x = 3.5 is
        // 2.5 m from the goal but 3.5 m from the robot
        let g = graph(&[
            ("sofa", "", at(1.0)),
            ("lamp", "", at(3.5)),
            ("table", "", at(0.0)),
            ("tv", "", at(-0.9)),
        ]);
        let q = PruneQuery {
            robot_pose: Some(Pose::identity()),
            max_radius: Some(2.0),
            ..PruneQuery::new("sofa")
        };
        let p = prune(&g, &q, None).unwrap();
        let kept: Vec<_> = p.graph.nodes.keys().copied().collect();
        assert_eq!(kept, vec![0, 2, 3]);
    }

    #[test]
    fn induced_edges_only() {
        let mut g = graph(&[
            ("sofa", "", at(0.0)),
            ("lamp", "", at(1.0)),
            ("tv", "", at(9.0)),
        ]);
        g.upsert_edge(0, 1, "near");
        g.upsert_edge(1, 2, "far from");
        let p = prune(
            &g,
            &PruneQuery {
                max_nodes: 2,
                ..PruneQuery::new("sofa")
            },
            None,
        )
        .unwrap();
        assert_eq!(p.graph.edges.len(), 1);
        assert_eq!(p.graph.edges[0], g.edges[0]);
        assert!(validate_graph(&p.graph).is_empty());
    }

    #[test]
    fn invalid_queries() {
        let g = graph(&[("sofa", "", at(0.0))]);
        assert!(prune(
            &g,
            &PruneQuery {
                max_nodes: 0,
                ..PruneQuery::new("sofa")
            },
            None
        )
        .is_err());
    }
}
