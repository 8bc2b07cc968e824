mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::Rng;
use sg3d_core::dataset::{load_manifest, stream_chunks, write_depth_png};
use sg3d_core::fusion::{
    associate_and_merge, recompute_edge_distances, FusionConfig, ObjectInstance3D,
};
use sg3d_core::geometry::{
    backproject_mask, camera_to_world, centroid_and_aabb, intrinsics_from_fov, is_valid_depth,
    transform_point, FrameTag, PointBatch,
};
use sg3d_core::persistence::{graph_from_bytes, graph_to_bytes};
use sg3d_core::pruning::{prune, PruneQuery};
use sg3d_core::{validate_graph, Aabb, BinaryMask, DepthMap, Point3};

use common::{intrinsics, node, point, pose, random_graph, rng, LABELS};

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(64)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn mask_backprojection_keeps_exactly_the_valid_masked_pixels(seed in any::<u64>(), w in 1u32..24, h in 1u32..24) {
        let mut r = rng(seed);
        let mut mask = BinaryMask::new(w, h);
        let mut depth = DepthMap::filled(w, h, 0.0);
        let mut expected = 0;
        for v in 0..h {
            for u in 0..w {
                let on = r.random_bool(0.5);
                let d = match r.random_range(0..4) {
                    0 => 0.0,
                    1 => f64::NAN,
                    _ => r.random_range(0.05..20.0),
                };
                mask.set(u, v, on);
                depth.set(u, v, d);
                if on && is_valid_depth(d) {
                    expected += 1;
                }
            }
        }
        let mut intr = intrinsics(&mut r);
        intr.width = w;
        intr.height = h;
        match backproject_mask(&mask, &depth, &intr) {
            Ok(batch) => {
                prop_assert_eq!(batch.len(), expected);
                prop_assert_eq!(batch.frame, FrameTag::Camera);
                // the depth axis carries the sensor reading unchanged
                let ys: BTreeSet<u64> = batch.points.iter().map(|p| p.y.to_bits()).collect();
                for (u, v) in mask.set_pixels() {
                    let d = depth.get(u, v);
                    if is_valid_depth(d) {
                        prop_assert!(ys.contains(&d.to_bits()));
                    }
                }
            }
            Err(_) => prop_assert_eq!(expected, 0),
        }
    }

    #[test]
    fn focal_length_shrinks_as_field_of_view_widens(w in 2u32..4000, h in 2u32..4000, a in 1.0f64..179.0, b in 1.0f64..179.0) {
        prop_assume!((a - b).abs() > 1e-9);
        let (narrow, wide) = if a < b { (a, b) } else { (b, a) };
        let n = intrinsics_from_fov(w, h, narrow).unwrap();
        let k = intrinsics_from_fov(w, h, wide).unwrap();
        prop_assert!(k.fx < n.fx);
        prop_assert_eq!(n.fx, n.fy);
        prop_assert_eq!(n.cx, f64::from(w) / 2.0);
        prop_assert_eq!(n.cy, f64::from(h) / 2.0);
    }

    #[test]
    fn centroid_commutes_with_rigid_transforms(seed in any::<u64>(), n in 1usize..60) {
        let mut r = rng(seed);
        let p = pose(&mut r);
        let batch = PointBatch {
            points: (0..n).map(|_| point(&mut r, 10.0)).collect(),
            frame: FrameTag::Camera,
        };
        let (c_cam, _) = centroid_and_aabb(&batch).unwrap();
        let world = camera_to_world(&batch, &p).unwrap();
        prop_assert_eq!(world.frame, FrameTag::World);
        let (c_world, _) = centroid_and_aabb(&world).unwrap();
        let moved = transform_point(c_cam, &p).unwrap();
        assert_relative_eq!(c_world.x, moved.x, epsilon = 1e-9, max_relative = 1e-9);
        assert_relative_eq!(c_world.y, moved.y, epsilon = 1e-9, max_relative = 1e-9);
        assert_relative_eq!(c_world.z, moved.z, epsilon = 1e-9, max_relative = 1e-9);
    }

    #[test]
    fn merging_conserves_instances_and_keeps_the_graph_valid(seed in any::<u64>(), n in 0usize..80, span in 0.2f64..5.0) {
        let mut r = rng(seed);
        let existing = r.random_range(0..10);
        let mut g = random_graph(&mut r, existing, 10, span);
        let before = g.node_count();
        let points_before: u64 = g.nodes.values().map(|n| n.point_count).sum();
        let cfg = FusionConfig::default();
        // fresh frame ids, so no instance is deduplicated
        let instances: Vec<ObjectInstance3D> = (0..n)
            .map(|i| {
                let c = point(&mut r, span);
                let h = Point3::new(0.1, 0.1, 0.1);
                ObjectInstance3D {
                    label: LABELS[r.random_range(0..LABELS.len())].to_string(),
                    description: String::new(),
                    category: String::new(),
                    room_type: String::new(),
                    centroid: c,
                    point_count: r.random_range(1..500),
                    aabb: Aabb { min: c - h, max: c + h },
                    frame_id: 1000 + i as u64,
                    chunk_id: 9,
                    local_id: i.to_string(),
                }
            })
            .collect();
        let report = associate_and_merge(&mut g, &instances, &cfg);
        prop_assert_eq!(report.merged.len() + report.created.len(), n);
        prop_assert_eq!(report.assignments.len(), n);
        prop_assert_eq!(g.node_count(), before + report.created.len());
        // merging moves centroids; ingest refreshes edge distances afterwards
        recompute_edge_distances(&mut g);
        prop_assert!(validate_graph(&g).is_empty(), "{:?}", validate_graph(&g));
        let points_after: u64 = g.nodes.values().map(|n| n.point_count).sum();
        prop_assert_eq!(points_after, points_before + instances.iter().map(|i| i.point_count).sum::<u64>());
        for (inst, id) in instances.iter().zip(&report.assignments) {
            let nd = &g.nodes[id];
            prop_assert_eq!(&nd.label, &inst.label);
            prop_assert!(nd.observed_in.contains(&inst.frame_id));
            prop_assert!(nd.aabb.contains(&nd.centroid));
        }
    }

    #[test]
    fn pruning_returns_a_sound_deterministic_subgraph(seed in any::<u64>(), n in 1usize..40, cap in 1usize..12) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, 3 * n, 10.0);
        let label = g.nodes.values().next().unwrap().label.clone();
        let mut q = PruneQuery::new(format!("go to the {label}"));
        q.max_nodes = cap;
        if r.random_bool(0.5) {
            q.robot_pose = Some(pose(&mut r));
            if r.random_bool(0.5) {
                q.max_radius = Some(r.random_range(0.0..60.0));
            }
        }
        let a = prune(&g, &q, None).unwrap();
        let b = prune(&g, &q, None).unwrap();
        prop_assert_eq!(&a, &b);

        let sub = &a.graph;
        prop_assert!(sub.nodes.contains_key(&a.goal_node_id));
        prop_assert_eq!(&sub.nodes[&a.goal_node_id].label, &label);
        prop_assert!(sub.node_count() <= cap);
        for (id, nd) in &sub.nodes {
            prop_assert_eq!(Some(nd), g.nodes.get(id));
        }
        let induced: Vec<_> = g
            .edges
            .iter()
            .filter(|e| sub.nodes.contains_key(&e.src) && sub.nodes.contains_key(&e.dst))
            .collect();
        prop_assert_eq!(sub.edges.iter().collect::<Vec<_>>(), induced);
        prop_assert!(validate_graph(sub).is_empty());
    }

    #[test]
    fn saving_is_deterministic_and_lossless(seed in any::<u64>(), n in 0usize..30) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, 2 * n, 100.0);
        let first = graph_to_bytes(&g).unwrap();
        prop_assert_eq!(&graph_to_bytes(&g).unwrap(), &first);
        let back = graph_from_bytes(&first).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(graph_to_bytes(&back).unwrap(), first);
    }
}

fn write_tiny_scene(dir: &Path, frames: usize) {
    fs::create_dir_all(dir.join("rgb")).unwrap();
    fs::create_dir_all(dir.join("depth")).unwrap();
    let manifest = serde_json::json!({
        "scene_id": "tiny",
        "frame_count": frames,
        "width": 4,
        "height": 3,
        "intrinsics": {"fov": {"hfov_deg": 90.0}},
    });
    fs::write(dir.join("manifest.json"), manifest.to_string()).unwrap();
    let mut poses = String::new();
    for i in 0..frames {
        let id = 3 * i as u64;
        poses.push_str(&format!(
            "{{\"frame_id\":{id},\"t\":[{i},0,0],\"q\":[1,0,0,0]}}\n"
        ));
        fs::write(dir.join(format!("rgb/{id:06}.png")), b"").unwrap();
        let depth = DepthMap::filled(4, 3, 1.0 + i as f64 * 0.001);
        write_depth_png(&dir.join(format!("depth/{id:06}.png")), &depth, 0.001).unwrap();
    }
    fs::write(dir.join("poses.jsonl"), poses).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn chunks_cover_every_frame_once_in_order(frames in 1usize..25, size in 1usize..12, skip in 0usize..6) {
        let dir = tempfile::tempdir().unwrap();
        write_tiny_scene(dir.path(), frames);
        let m = load_manifest(dir.path()).unwrap();
        let chunks: Vec<_> = stream_chunks(&m, size).unwrap().map(Result::unwrap).collect();
        prop_assert_eq!(chunks.len(), m.chunk_count(size));
        prop_assert_eq!(chunks.len(), frames.div_ceil(size));
        let ids: Vec<u64> = chunks.iter().flat_map(|c| c.frames.iter().map(|f| f.frame_id)).collect();
        let want: Vec<u64> = m.poses.iter().map(|p| p.frame_id).collect();
        prop_assert_eq!(ids, want);
        for (k, c) in chunks.iter().enumerate() {
            prop_assert_eq!(c.chunk_id, k as u64);
            prop_assert!(!c.frames.is_empty() && c.frames.len() <= size);
        }
        let resumed: Vec<_> = stream_chunks(&m, size).unwrap().starting_at(skip).map(Result::unwrap).collect();
        prop_assert_eq!(&resumed[..], &chunks[skip.min(chunks.len())..]);
    }
}

#[test]
fn merge_ties_go_to_the_lowest_id() {
    let mut g = sg3d_core::SceneGraph3D::new("t");
    for (id, x) in [(4, -0.2), (7, 0.2)] {
        g.nodes
            .insert(id, node(id, "chair", Point3::new(x, 0.0, 0.0), 0.1));
    }
    g.next_node_id = 8;
    let c = Point3::default();
    let inst = ObjectInstance3D {
        label: "chair".into(),
        description: String::new(),
        category: String::new(),
        room_type: String::new(),
        centroid: c,
        point_count: 1,
        aabb: Aabb::point(c),
        frame_id: 99,
        chunk_id: 1,
        local_id: "a".into(),
    };
    let report = associate_and_merge(&mut g, &[inst], &FusionConfig::default());
    assert_eq!(report.merged, vec![4]);
}
