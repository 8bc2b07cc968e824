//! Incremental open-vocabulary 3D scene graphs from posed RGB-D sequences.
//!
//! Frames are processed in fixed-size chunks. A perception backend supplies a
//! 2D scene graph per chunk and segmentation masks per frame; masks are lifted
//! to world-frame points with the depth map and camera pose, then fused into a
//! persistent graph of object nodes and relation edges. The graph can be pruned
//! to a small goal-centred subgraph for a navigation query, saved, exported to
//! DOT and scored against annotations.
//!
//! ```no_run
//! use sg3d_core::{dataset, fusion, perception::BackendDescriptor, SceneGraph3D};
//!
//! let manifest = dataset::load_manifest("scene".as_ref())?;
//! let backend = BackendDescriptor::replay("fixtures").open()?;
//! let opts = fusion::IngestOptions { flip_z: manifest.flip_z, ..Default::default() };
//! let mut graph = SceneGraph3D::new(manifest.scene_id.clone());
//! for chunk in dataset::stream_chunks(&manifest, 10)? {
//!     let chunk = chunk?;
//!     fusion::ingest_chunk(&mut graph, chunk.chunk_id, &chunk.frames, backend.as_ref(), &opts)?;
//! }
//! sg3d_core::persistence::save_graph(&graph, "graph.json".as_ref())?;
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod fusion;
pub mod geometry;
pub mod model;
pub mod perception;
pub mod persistence;
pub mod pruning;
pub mod synthetic;
pub mod text;

pub use geometry::{Aabb, GeometryError, Point3};
pub use model::{
    validate_graph, BBox, BinaryMask, CameraIntrinsics, ChunkId, DepthMap, Detection2D, FrameId,
    NodeId, ObjectNode3D, Pose, PosedFrame, Relation2D, RelationEdge, SceneGraph2D, SceneGraph3D,
    UnitQuat, Violation,
};
