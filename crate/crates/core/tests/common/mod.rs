#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sg3d_core::model::{CameraIntrinsics, ObjectNode3D, Pose, SceneGraph3D, UnitQuat};
use sg3d_core::{Aabb, Point3};

pub const LABELS: &[&str] = &[
    "sofa", "chair", "table", "lamp", "bed", "tv", "plant", "shelf",
];
pub const PREDICATES: &[&str] = &["is near", "is left of", "is on", "faces"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn synthetic_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/synthetic_scene")
}

pub fn golden_graph_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden_graph_v1.json")
}

pub fn point(r: &mut impl Rng, span: f64) -> Point3 {
    Point3::new(
        r.random_range(-span..span),
        r.random_range(-span..span),
        r.random_range(-span..span),
    )
}

/// Uniformly distributed rotation: rejection-sample the unit 4-ball, then
/// normalize.
pub fn unit_quat(r: &mut impl Rng) -> UnitQuat {
    loop {
        let q = UnitQuat::new(
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        );
        let n = q.norm();
        if n > 0.1 && n <= 1.0 {
            return q.normalized();
        }
    }
}

pub fn pose(r: &mut impl Rng) -> Pose {
    Pose::new(point(r, 50.0), unit_quat(r)).expect("normalized quaternion")
}

pub fn intrinsics(r: &mut impl Rng) -> CameraIntrinsics {
    let width = r.random_range(2..4000u32);
    let height = r.random_range(2..3000u32);
    CameraIntrinsics {
        fx: r.random_range(50.0..3000.0),
        fy: r.random_range(50.0..3000.0),
        cx: r.random_range(0.0..f64::from(width)),
        cy: r.random_range(0.0..f64::from(height)),
        width,
        height,
    }
}

pub fn node(id: u64, label: &str, c: Point3, half: f64) -> ObjectNode3D {
    let h = Point3::new(half, half, half);
    ObjectNode3D {
        node_id: id,
        label: label.to_string(),
        description: format!("a {label}"),
        category: String::new(),
        room_type: String::new(),
        centroid: c,
        point_count: 1,
        aabb: Aabb {
            min: c - h,
            max: c + h,
        },
        observed_in: [id].into_iter().collect(),
        created_chunk: 0,
        last_updated_chunk: 0,
    }
}

/// A valid graph with `n` nodes spread over a cube of side `2 * span`, sparse
/// ids and up to `edges` random edges.
pub fn random_graph(r: &mut impl Rng, n: usize, edges: usize, span: f64) -> SceneGraph3D {
    let mut g = SceneGraph3D::new(format!("scene_{}", r.random_range(0..1000)));
    for _ in 0..n {
        // leave gaps so ids are not simply 0..n
        g.next_node_id += r.random_range(0..3);
        let id = g.allocate_node_id();
        let label = LABELS[r.random_range(0..LABELS.len())];
        let mut nd = node(id, label, point(r, span), r.random_range(0.0..0.5));
        nd.point_count = r.random_range(1..5000);
        nd.room_type = ["", "kitchen", "living room"][r.random_range(0..3)].to_string();
        nd.observed_in = (0..r.random_range(1..4))
            .map(|_| r.random_range(0..300))
            .collect();
        nd.created_chunk = r.random_range(0..5);
        nd.last_updated_chunk = nd.created_chunk + r.random_range(0..5);
        g.nodes.insert(id, nd);
    }
    let ids: Vec<u64> = g.nodes.keys().copied().collect();
    if ids.len() >= 2 {
        for _ in 0..edges {
            let s = ids[r.random_range(0..ids.len())];
            let d = ids[r.random_range(0..ids.len())];
            if s != d {
                g.upsert_edge(s, d, PREDICATES[r.random_range(0..PREDICATES.len())]);
            }
        }
    }
    g.chunks_ingested = r.random_range(0..10);
    g
}
