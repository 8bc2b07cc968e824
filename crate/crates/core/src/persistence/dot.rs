use std::fmt::Write as _;
use std::path::Path;

use super::{write_atomic, PersistenceError};
use crate::model::{NodeId, SceneGraph3D};

/// Extra attributes on the goal node of a pruned graph.
pub const GOAL_NODE_STYLE: &str = r#"style="filled,bold", fillcolor="gold", penwidth=2"#;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out
}

/// Renders a DOT digraph. Nodes show label, room and centroid (2 decimals);
/// edges show predicate and distance in meters.
pub fn dot_string(graph: &SceneGraph3D, goal: Option<NodeId>) -> String {
    let mut s = String::new();
    writeln!(s, "digraph \"{}\" {{", escape(&graph.scene_id)).unwrap();
    writeln!(s, "  node [shape=box];").unwrap();
    for (id, n) in &graph.nodes {
        let c = n.centroid;
        let mut label = escape(&n.label);
        if !n.room_type.is_empty() {
            write!(label, "\\n[{}]", escape(&n.room_type)).unwrap();
        }
        write!(label, "\\n({:.2}, {:.2}, {:.2})", c.x, c.y, c.z).unwrap();
        if goal == Some(*id) {
            writeln!(s, "  n{id} [label=\"{label}\", {GOAL_NODE_STYLE}];").unwrap();
        } else {
            writeln!(s, "  n{id} [label=\"{label}\"];").unwrap();
        }
    }
    for e in &graph.edges {
        writeln!(
            s,
            "  n{} -> n{} [label=\"{} ({:.2} m)\"];",
            e.src,
            e.dst,
            escape(&e.predicate),
            e.distance_m
        )
        .unwrap();
    }
    s.push_str("}\n");
    s
}

pub fn export_dot(
    graph: &SceneGraph3D,
    goal: Option<NodeId>,
    path: &Path,
) -> Result<(), PersistenceError> {
    write_atomic(path, dot_string(graph, goal).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Aabb, Point3};
    use crate::model::ObjectNode3D;

    fn graph() -> SceneGraph3D {
        let mut g = SceneGraph3D::new("demo");
        for (label, c) in [
            ("sofa", Point3::new(0.0, 0.0, 0.0)),
            ("table \"low\"", Point3::new(0.75, 1.0, 0.0)),
        ] {
            let id = g.allocate_node_id();
            g.nodes.insert(
                id,
                ObjectNode3D {
                    node_id: id,
                    label: label.into(),
                    description: String::new(),
                    category: String::new(),
                    room_type: if id == 0 {
                        "living room".into()
                    } else {
                        String::new()
                    },
                    centroid: c,
                    point_count: 1,
                    aabb: Aabb::point(c),
                    observed_in: Default::default(),
                    created_chunk: 0,
                    last_updated_chunk: 0,
                },
            );
        }
        g.upsert_edge(0, 1, "is near");
        g
    }

    #[test]
    fn edge_label_format() {
        // |(0.75, 1, 0)| = 1.25
        let s = dot_string(&graph(), None);
        assert!(s.contains("\"is near (1.25 m)\""), "{s}");
        assert!(s.contains("sofa\\n[living room]\\n(0.00, 0.00, 0.00)"));
        assert!(s.contains("table \\\"low\\\""));
        assert!(!s.contains("gold"));
    }

    #[test]
    fn empty_graph() {
        let s = dot_string(&SceneGraph3D::new("empty"), None);
        assert_eq!(s, "digraph \"empty\" {\n  node [shape=box];\n}\n");
    }

    #[test]
    fn goal_is_styled() {
        let s = dot_string(&graph(), Some(1));
        let line = s.lines().find(|l| l.starts_with("  n1 [")).unwrap();
        assert!(line.contains(GOAL_NODE_STYLE));
    }
}
