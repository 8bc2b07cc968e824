//! Graph files, pruned-graph files and DOT export.
//!
//! Graph files are single JSON documents with sorted keys, nodes ordered by
//! id and edges by `(src, dst, predicate)`, so saving the same graph always
//! produces the same bytes. Floats are written in shortest round-trip form.

mod dot;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dot::{dot_string, export_dot, GOAL_NODE_STYLE};

use crate::model::{
    validate_graph, NodeId, ObjectNode3D, RelationEdge, SceneGraph3D, SCHEMA_VERSION,
};
use crate::pruning::PrunedGraph;

#[derive(Debug, Error)]
pub enum PersistenceError {
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported schema_version {found} (this build reads version {SCHEMA_VERSION})")]
    Version { found: u64 },
    #[error("malformed graph document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("graph fails validation: {}", .0.join("; "))]
    Validation(Vec<String>),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistenceError + '_ {
    move |source| PersistenceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// On-disk form of a [`SceneGraph3D`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub schema_version: u32,
    pub scene_id: String,
    pub id_counter: NodeId,
    pub chunks_ingested: u64,
    pub nodes: Vec<ObjectNode3D>,
    pub edges: Vec<RelationEdge>,
}

impl GraphDocument {
    pub fn from_graph(g: &SceneGraph3D) -> Self {
        let mut edges = g.edges.clone();
        edges.sort_by(|a, b| a.key().cmp(&b.key()));
        Self {
            schema_version: SCHEMA_VERSION,
            scene_id: g.scene_id.clone(),
            id_counter: g.next_node_id,
            chunks_ingested: g.chunks_ingested,
            nodes: g.nodes.values().cloned().collect(),
            edges,
        }
    }

    pub fn into_graph(self) -> Result<SceneGraph3D, PersistenceError> {
        let mut nodes = BTreeMap::new();
        let mut problems = Vec::new();
        for n in self.nodes {
            let id = n.node_id;
            if nodes.insert(id, n).is_some() {
                problems.push(format!("node id {id} appears more than once"));
            }
        }
        let mut g = SceneGraph3D {
            scene_id: self.scene_id,
            nodes,
            edges: self.edges,
            chunks_ingested: self.chunks_ingested,
            schema_version: self.schema_version,
            next_node_id: self.id_counter,
        };
        g.sort_edges();
        problems.extend(validate_graph(&g).iter().map(|v| v.to_string()));
        if !problems.is_empty() {
            return Err(PersistenceError::Validation(problems));
        }
        Ok(g)
    }
}

/// Checks `schema_version` before anything else so that future documents get
/// a version error rather than a field error.
fn check_version(v: &serde_json::Value) -> Result<(), PersistenceError> {
    match v.get("schema_version").and_then(|s| s.as_u64()) {
        Some(found) if found == u64::from(SCHEMA_VERSION) => Ok(()),
        Some(found) => Err(PersistenceError::Version { found }),
        None => Err(PersistenceError::Validation(vec![
            "missing or non-integer schema_version".into(),
        ])),
    }
}

fn canonical_bytes<T: Serialize>(doc: &T) -> Vec<u8> {
    // serde_json::Value maps are BTreeMaps: keys come out sorted
    let value = serde_json::to_value(doc).expect("documents always serialize");
    let mut out = serde_json::to_vec_pretty(&value).expect("values always serialize");
    out.push(b'\n');
    out
}

fn ensure_valid(graph: &SceneGraph3D) -> Result<(), PersistenceError> {
    let v = validate_graph(graph);
    if v.is_empty() {
        Ok(())
    } else {
        Err(PersistenceError::Validation(
            v.iter().map(|x| x.to_string()).collect(),
        ))
    }
}

pub fn graph_to_bytes(graph: &SceneGraph3D) -> Result<Vec<u8>, PersistenceError> {
    ensure_valid(graph)?;
    Ok(canonical_bytes(&GraphDocument::from_graph(graph)))
}

pub fn graph_from_bytes(bytes: &[u8]) -> Result<SceneGraph3D, PersistenceError> {
    let value: serde_json::Value = serde_json::from_slice(bytes)?;
    check_version(&value)?;
    let doc: GraphDocument = serde_json::from_value(value)?;
    doc.into_graph()
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PersistenceError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn save_graph(graph: &SceneGraph3D, path: &Path) -> Result<(), PersistenceError> {
    write_atomic(path, &graph_to_bytes(graph)?)
}

pub fn load_graph(path: &Path) -> Result<SceneGraph3D, PersistenceError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    graph_from_bytes(&bytes)
}

/// Pruned graphs use the graph schema plus the goal, the query and the
/// per-node admission reasons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedDocument {
    #[serde(flatten)]
    pub graph: GraphDocument,
    pub goal_node_id: NodeId,
    pub query: String,
    pub rationale: BTreeMap<NodeId, String>,
}

pub fn pruned_to_bytes(p: &PrunedGraph) -> Vec<u8> {
    canonical_bytes(&PrunedDocument {
        graph: GraphDocument::from_graph(&p.graph),
        goal_node_id: p.goal_node_id,
        query: p.query.clone(),
        rationale: p.rationale.clone(),
    })
}

pub fn save_pruned(p: &PrunedGraph, path: &Path) -> Result<(), PersistenceError> {
    ensure_valid(&p.graph)?;
    write_atomic(path, &pruned_to_bytes(p))
}

pub fn load_pruned(path: &Path) -> Result<PrunedGraph, PersistenceError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)?;
    check_version(&value)?;
    let doc: PrunedDocument = serde_json::from_value(value)?;
    let graph = doc.graph.into_graph()?;
    if !graph.nodes.contains_key(&doc.goal_node_id) {
        return Err(PersistenceError::Validation(vec![format!(
            "goal node {} is not in the pruned graph",
            doc.goal_node_id
        )]));
    }
    Ok(PrunedGraph {
        goal_node_id: doc.goal_node_id,
        query: doc.query,
        graph,
        rationale: doc.rationale,
    })
}

/// Appends one JSON object per line.
pub fn append_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), PersistenceError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    for r in records {
        let mut line = serde_json::to_vec(r)?;
        line.push(b'\n');
        f.write_all(&line).map_err(io_err(path))?;
    }
    Ok(())
}
