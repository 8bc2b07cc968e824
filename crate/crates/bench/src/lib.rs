//! Seeded inputs for the pipeline benchmarks.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sg3d_core::fusion::ObjectInstance3D;
use sg3d_core::geometry::intrinsics_from_fov;
use sg3d_core::{Aabb, BinaryMask, CameraIntrinsics, DepthMap, ObjectNode3D, Point3, SceneGraph3D};

const LABELS: &[&str] = &[
    "sofa", "chair", "table", "lamp", "bed", "tv", "plant", "shelf",
];
const PREDICATES: &[&str] = &["is near", "is left of", "is on"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Recorded synthetic scene shipped with the core crate's tests.
pub fn synthetic_scene_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/synthetic_scene")
}

/// A `width` x `height` frame at 90 degrees horizontal FOV, with depth in
/// 0.5..6 m (a tenth of the pixels invalid) and a centred mask covering
/// `coverage` of the image.
pub fn mask_frame(
    width: u32,
    height: u32,
    coverage: f64,
    seed: u64,
) -> (BinaryMask, DepthMap, CameraIntrinsics) {
    let mut r = rng(seed);
    let intr = intrinsics_from_fov(width, height, 90.0).expect("valid fov");
    let mut depth = DepthMap::filled(width, height, 0.0);
    for v in 0..height {
        for u in 0..width {
            if !r.random_bool(0.1) {
                depth.set(u, v, r.random_range(0.5..6.0));
            }
        }
    }
    let side = coverage.clamp(0.0, 1.0).sqrt();
    let (mw, mh) = (
        (f64::from(width) * side) as u32,
        (f64::from(height) * side) as u32,
    );
    let (u0, v0) = ((width - mw) / 2, (height - mh) / 2);
    let mut mask = BinaryMask::new(width, height);
    for v in v0..v0 + mh {
        for u in u0..u0 + mw {
            mask.set(u, v, true);
        }
    }
    (mask, depth, intr)
}

fn point(r: &mut impl Rng, span: f64) -> Point3 {
    Point3::new(
        r.random_range(-span..span),
        r.random_range(-span..span),
        r.random_range(-span..span),
    )
}

/// A graph of `n` nodes in a cube of side `2 * span` with about `2n` edges.
pub fn graph(n: usize, span: f64, seed: u64) -> SceneGraph3D {
    let mut r = rng(seed);
    let mut g = SceneGraph3D::new("bench");
    for _ in 0..n {
        let id = g.allocate_node_id();
        let c = point(&mut r, span);
        let h = Point3::new(0.2, 0.2, 0.2);
        let label = LABELS[r.random_range(0..LABELS.len())];
        g.nodes.insert(
            id,
            ObjectNode3D {
                node_id: id,
                label: label.to_string(),
                description: format!("a {label}"),
                category: String::new(),
                room_type: String::new(),
                centroid: c,
                point_count: r.random_range(100..5000),
                aabb: Aabb {
                    min: c - h,
                    max: c + h,
                },
                observed_in: [id].into_iter().collect(),
                created_chunk: 0,
                last_updated_chunk: 0,
            },
        );
    }
    if n >= 2 {
        for _ in 0..2 * n {
            let s = r.random_range(0..n as u64);
            let d = r.random_range(0..n as u64);
            if s != d {
                g.upsert_edge(s, d, PREDICATES[r.random_range(0..PREDICATES.len())]);
            }
        }
    }
    g
}

/// `n` instances from fresh frames scattered over the same cube as [`graph`].
pub fn instances(n: usize, span: f64, seed: u64) -> Vec<ObjectInstance3D> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let c = point(&mut r, span);
            let h = Point3::new(0.2, 0.2, 0.2);
            ObjectInstance3D {
                label: LABELS[r.random_range(0..LABELS.len())].to_string(),
                description: String::new(),
                category: String::new(),
                room_type: String::new(),
                centroid: c,
                point_count: r.random_range(100..5000),
                aabb: Aabb {
                    min: c - h,
                    max: c + h,
                },
                frame_id: 1_000_000 + i as u64,
                chunk_id: 1,
                local_id: i.to_string(),
            }
        })
        .collect()
}
