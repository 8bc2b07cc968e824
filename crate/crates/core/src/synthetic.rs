//! A small synthetic room with exactly known geometry, rendered to a scene
//! directory together with replay fixtures and annotations.
//!
//! Objects are flat rectangles facing the camera, which slides sideways along
//! its own X axis under a fixed, non-trivial orientation. Rectangles sit at
//! whole-millimetre depths, so stored depth is exact and every mask is the
//! precise set of pixels whose ray hits the object.

use std::fs;
use std::path::Path;

use image::RgbImage;
use thiserror::Error;

use crate::dataset::{
    depth_rel_path, rgb_rel_path, write_depth_png, DatasetError, IntrinsicsSource, ManifestFile,
    PoseRecord,
};
use crate::evaluation::{AnnotatedObject, AnnotatedRelation, AnnotationSet};
use crate::geometry::{intrinsics_from_fov, transform_point, Point3};
use crate::model::{BBox, BinaryMask, CameraIntrinsics, DepthMap, FrameId, Pose, UnitQuat};
use crate::perception::rle;
use crate::perception::wire::{
    GroundingResponse, SceneGraphResponse, WireDetection, WireObject, WireRelation,
    WIRE_SCHEMA_VERSION,
};
use crate::perception::{chunk_fixture_name, ground_fixture_name};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{}: {source}", .path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

/// Axis-aligned rectangle in the rig frame (X right, Y forward, Z down) at
/// constant depth `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub z0: f64,
    pub z1: f64,
    pub y: f64,
}

impl Rect {
    pub fn center(&self) -> Point3 {
        Point3::new((self.x0 + self.x1) / 2.0, self.y, (self.z0 + self.z1) / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthObject {
    pub id: String,
    pub label: String,
    pub synonyms: Vec<String>,
    pub description: String,
    pub category: String,
    pub rect: Rect,
    pub color: [u8; 3],
    /// Backdrop objects are reported by the scene-graph backend but are
    /// expected to be excluded, so they are not annotated.
    pub backdrop: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub scene_id: String,
    pub room_type: String,
    pub width: u32,
    pub height: u32,
    pub hfov_deg: f64,
    pub chunk_size: usize,
    /// Rig-to-world transform.
    pub rig: Pose,
    /// Camera offset along rig X for each frame.
    pub camera_x: Vec<f64>,
    pub objects: Vec<SynthObject>,
}

/// Per-frame rendering: depth, the object owning each pixel, and for every
/// object its visible mask and whether it is entirely in view and unoccluded.
#[derive(Debug, Clone)]
pub struct Render {
    pub depth: DepthMap,
    pub owner: Vec<Option<usize>>,
    pub visible: Vec<BinaryMask>,
    pub fully_visible: Vec<bool>,
}

fn obj(
    id: &str,
    label: &str,
    synonyms: &[&str],
    description: &str,
    category: &str,
    rect: Rect,
    color: [u8; 3],
) -> SynthObject {
    SynthObject {
        id: id.into(),
        label: label.into(),
        synonyms: synonyms.iter().map(|s| s.to_string()).collect(),
        description: description.into(),
        category: category.into(),
        rect,
        color,
        backdrop: false,
    }
}

fn rect(x0: f64, x1: f64, z0: f64, z1: f64, y: f64) -> Rect {
    Rect { x0, x1, z0, z1, y }
}

impl SyntheticScene {
    /// The shipped scene: 640x480, 90 degree horizontal FOV, 30 frames in
    /// chunks of 10, six objects in front of a wall.
    pub fn standard() -> Self {
        let q = UnitQuat::new(0.9, 0.1, -0.2, 0.3).normalized();
        let rig = Pose::new(Point3::new(2.0, -1.0, 0.5), q).expect("normalized");
        let mut wall = obj(
            "wall_0",
            "wall",
            &["wall"],
            "plain grey wall",
            "structure",
            rect(-20.0, 20.0, -10.0, 10.0, 4.0),
            [150, 150, 150],
        );
        wall.backdrop = true;
        let objects = vec![
            obj(
                "sofa_0",
                "sofa",
                &["sofa", "couch"],
                "blue three-seat sofa",
                "furniture",
                rect(-1.8, -0.6, 0.0, 0.6, 3.0),
                [40, 60, 170],
            ),
            obj(
                "table_0",
                "coffee table",
                &["coffee table", "table"],
                "low wooden coffee table",
                "furniture",
                rect(-0.5, 0.3, 0.3, 0.7, 2.5),
                [140, 90, 40],
            ),
            obj(
                "chair_0",
                "chair",
                &["chair"],
                "red chair",
                "furniture",
                rect(0.5, 0.9, 0.2, 0.8, 2.0),
                [190, 30, 30],
            ),
            obj(
                "chair_1",
                "chair",
                &["chair"],
                "green chair",
                "furniture",
                rect(1.4, 1.8, 0.2, 0.8, 2.2),
                [30, 160, 60],
            ),
            obj(
                "lamp_0",
                "lamp",
                &["lamp", "standing lamp"],
                "tall standing lamp",
                "lighting",
                rect(2.3, 2.5, -0.8, 0.8, 3.2),
                [230, 210, 90],
            ),
            obj(
                "tv_0",
                "television",
                &["television", "tv"],
                "wall-mounted flat screen",
                "electronics",
                rect(3.0, 3.8, -0.6, -0.1, 3.4),
                [20, 20, 20],
            ),
            wall,
        ];
        Self {
            scene_id: "synthetic_room".into(),
            room_type: "living room".into(),
            width: 640,
            height: 480,
            hfov_deg: 90.0,
            chunk_size: 10,
            rig,
            camera_x: (0..30).map(|i| -1.0 + 0.1 * f64::from(i)).collect(),
            objects,
        }
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        intrinsics_from_fov(self.width, self.height, self.hfov_deg).expect("valid scene")
    }

    pub fn frame_count(&self) -> usize {
        self.camera_x.len()
    }

    pub fn camera_pose(&self, frame: usize) -> Pose {
        let position = transform_point(Point3::new(self.camera_x[frame], 0.0, 0.0), &self.rig)
            .expect("unit rig rotation");
        Pose {
            position,
            orientation: self.rig.orientation,
        }
    }

    /// Ground-truth world centroid of an object.
    pub fn world_center(&self, idx: usize) -> Point3 {
        transform_point(self.objects[idx].rect.center(), &self.rig).expect("unit rig rotation")
    }

    pub fn render(&self, frame: usize) -> Render {
        let intr = self.intrinsics();
        let (w, h) = (self.width, self.height);
        let cam_x = self.camera_x[frame];
        let n = self.objects.len();
        let mut depth = DepthMap::filled(w, h, 0.0);
        let mut owner = vec![None; (w * h) as usize];
        let mut visible = vec![BinaryMask::new(w, h); n];
        let mut solo = vec![0usize; n];
        let mut touches_border = vec![false; n];
        for v in 0..h {
            let dz = (f64::from(v) - intr.cy) / intr.fy;
            for u in 0..w {
                let dx = (f64::from(u) - intr.cx) / intr.fx;
                let mut best: Option<(f64, usize)> = None;
                for (k, o) in self.objects.iter().enumerate() {
                    let r = &o.rect;
                    let x = dx * r.y + cam_x;
                    let z = dz * r.y;
                    if x >= r.x0 && x <= r.x1 && z >= r.z0 && z <= r.z1 {
                        solo[k] += 1;
                        if u == 0 || v == 0 || u == w - 1 || v == h - 1 {
                            touches_border[k] = true;
                        }
                        if best.is_none_or(|(d, _)| r.y < d) {
                            best = Some((r.y, k));
                        }
                    }
                }
                if let Some((d, k)) = best {
                    depth.set(u, v, d);
                    owner[(v * w + u) as usize] = Some(k);
                    visible[k].set(u, v, true);
                }
            }
        }
        let fully_visible = (0..n)
            .map(|k| solo[k] > 0 && !touches_border[k] && visible[k].population() == solo[k])
            .collect();
        Render {
            depth,
            owner,
            visible,
            fully_visible,
        }
    }

    pub fn annotations(&self) -> AnnotationSet {
        let mut objects = Vec::new();
        let mut order = Vec::new();
        for (k, o) in self.objects.iter().enumerate().filter(|(_, o)| !o.backdrop) {
            objects.push(AnnotatedObject {
                id: o.id.clone(),
                label: o.label.clone(),
                synonyms: o.synonyms.clone(),
                centroid: self.world_center(k),
                room_type: self.room_type.clone(),
            });
            order.push(k);
        }
        let mut relations = Vec::new();
        for &a in &order {
            for &b in &order {
                if self.objects[a].rect.center().x < self.objects[b].rect.center().x {
                    relations.push(AnnotatedRelation {
                        subject: self.objects[a].id.clone(),
                        predicates: vec!["is left of".into()],
                        object: self.objects[b].id.clone(),
                    });
                }
            }
        }
        AnnotationSet {
            scene_id: self.scene_id.clone(),
            objects,
            relations,
        }
    }

    /// Writes `<out>/scene`, `<out>/fixtures` and `<out>/annotations.json`.
    pub fn write(&self, out: &Path) -> Result<(), SynthError> {
        let scene_dir = out.join("scene");
        let fixture_dir = out.join("fixtures");
        for d in [
            &scene_dir.join("rgb"),
            &scene_dir.join("depth"),
            &fixture_dir,
        ] {
            fs::create_dir_all(d).map_err(|source| SynthError::Io {
                path: d.to_path_buf(),
                source,
            })?;
        }
        let manifest = ManifestFile {
            scene_id: self.scene_id.clone(),
            frame_count: self.frame_count(),
            width: self.width,
            height: self.height,
            intrinsics: IntrinsicsSource::Fov {
                hfov_deg: self.hfov_deg,
                vfov_deg: None,
            },
            depth_scale: 0.001,
            flip_z: false,
        };
        write_json(&scene_dir.join("manifest.json"), &manifest)?;

        let mut poses = String::new();
        let mut renders = Vec::new();
        for f in 0..self.frame_count() {
            let pose = self.camera_pose(f);
            let rec = PoseRecord {
                frame_id: f as FrameId,
                t: pose.position.as_array(),
                q: pose.orientation.into(),
                timestamp: Some(f as f64 * 0.1),
            };
            poses.push_str(&serde_json::to_string(&rec).expect("serializable"));
            poses.push('\n');
            let r = self.render(f);
            write_depth_png(
                &scene_dir.join(depth_rel_path(f as FrameId)),
                &r.depth,
                0.001,
            )?;
            self.rgb(&r)
                .save(scene_dir.join(rgb_rel_path(f as FrameId)))?;
            renders.push(r);
        }
        write_bytes(&scene_dir.join("poses.jsonl"), poses.as_bytes())?;

        for (c, frames) in (0..self.frame_count())
            .collect::<Vec<_>>()
            .chunks(self.chunk_size)
            .enumerate()
        {
            let (sg, grounding) = self.chunk_responses(c as u64, frames, &renders);
            write_json(&fixture_dir.join(chunk_fixture_name(c as u64)), &sg)?;
            for (frame_id, g) in grounding {
                write_json(&fixture_dir.join(ground_fixture_name(frame_id)), &g)?;
            }
        }
        write_json(&out.join("annotations.json"), &self.annotations())
    }

    fn rgb(&self, r: &Render) -> RgbImage {
        RgbImage::from_fn(self.width, self.height, |u, v| {
            let c =
                r.owner[(v * self.width + u) as usize].map_or([0, 0, 0], |k| self.objects[k].color);
            image::Rgb(c)
        })
    }

    /// Scene-graph response for one chunk plus grounding responses for the
    /// frames it cites. Each object is cited in the frame where it is fully
    /// visible and projects closest to the image centre.
    fn chunk_responses(
        &self,
        chunk_id: u64,
        frames: &[usize],
        renders: &[Render],
    ) -> (SceneGraphResponse, Vec<(FrameId, GroundingResponse)>) {
        let intr = self.intrinsics();
        let mut cited: Vec<(usize, usize)> = Vec::new();
        for (k, o) in self.objects.iter().enumerate() {
            if o.backdrop {
                continue;
            }
            let best = frames
                .iter()
                .filter(|&&f| renders[f].fully_visible[k])
                .min_by(|&&a, &&b| {
                    let off = |f: usize| {
                        let c = o.rect.center();
                        ((c.x - self.camera_x[f]) / c.y * intr.fx).abs()
                    };
                    off(a).total_cmp(&off(b)).then(a.cmp(&b))
                });
            if let Some(&f) = best {
                cited.push((k, f));
            }
        }
        let mid = frames[frames.len() / 2];
        let wall = self
            .objects
            .iter()
            .position(|o| o.backdrop)
            .expect("scene has a backdrop");
        let mut objects: Vec<WireObject> = cited
            .iter()
            .map(|&(k, f)| {
                let o = &self.objects[k];
                WireObject {
                    local_id: o.id.clone(),
                    label: o.label.clone(),
                    description: o.description.clone(),
                    category: o.category.clone(),
                    room_type: self.room_type.clone(),
                    frame_id: f as FrameId,
                    bbox: renders[f].visible[k].bounds(),
                }
            })
            .collect();
        objects.push(WireObject {
            local_id: self.objects[wall].id.clone(),
            label: self.objects[wall].label.clone(),
            description: self.objects[wall].description.clone(),
            category: self.objects[wall].category.clone(),
            room_type: self.room_type.clone(),
            frame_id: mid as FrameId,
            bbox: renders[mid].visible[wall].bounds(),
        });
        objects.push(WireObject {
            local_id: "floor_0".into(),
            label: "floor".into(),
            description: "wooden floor".into(),
            category: "structure".into(),
            room_type: self.room_type.clone(),
            frame_id: mid as FrameId,
            bbox: Some(BBox::new(
                0,
                self.height - 40,
                self.width - 1,
                self.height - 1,
            )),
        });

        let mut by_x: Vec<usize> = cited.iter().map(|&(k, _)| k).collect();
        by_x.sort_by(|&a, &b| {
            self.objects[a]
                .rect
                .center()
                .x
                .total_cmp(&self.objects[b].rect.center().x)
        });
        let mut relations = Vec::new();
        for pair in by_x.windows(2) {
            relations.push(WireRelation {
                subject: self.objects[pair[0]].id.clone(),
                predicate: "is left of".into(),
                object: self.objects[pair[1]].id.clone(),
            });
        }
        for &k in &by_x {
            relations.push(WireRelation {
                subject: self.objects[k].id.clone(),
                predicate: "is in front of".into(),
                object: self.objects[wall].id.clone(),
            });
            if self.objects[k].category == "furniture" {
                relations.push(WireRelation {
                    subject: self.objects[k].id.clone(),
                    predicate: "is on".into(),
                    object: "floor_0".into(),
                });
            }
        }
        let sg = SceneGraphResponse {
            schema_version: WIRE_SCHEMA_VERSION,
            chunk_id,
            objects,
            relations,
            metadata: Some(serde_json::json!({ "source": "synthetic" })),
        };

        let mut cited_frames: Vec<usize> = cited.iter().map(|&(_, f)| f).collect();
        cited_frames.sort_unstable();
        cited_frames.dedup();
        let grounding = cited_frames
            .into_iter()
            .map(|f| (f as FrameId, self.grounding(f, &renders[f])))
            .collect();
        (sg, grounding)
    }

    /// Every non-backdrop object with visible pixels, plus one low-confidence
    /// false positive that the default threshold rejects.
    fn grounding(&self, frame: usize, r: &Render) -> GroundingResponse {
        let mut detections = Vec::new();
        for (k, o) in self.objects.iter().enumerate() {
            if o.backdrop {
                continue;
            }
            if let Some(bbox) = r.visible[k].bounds() {
                detections.push(WireDetection {
                    label: o.label.clone(),
                    frame_id: frame as FrameId,
                    bbox,
                    mask_rle: rle::encode(&r.visible[k]),
                    confidence: if r.fully_visible[k] { 0.92 } else { 0.61 },
                });
            }
        }
        if let Some(first) = detections.first().cloned() {
            let mut mask = BinaryMask::new(self.width, self.height);
            for v in 0..8 {
                for u in 0..8 {
                    mask.set(u, v, true);
                }
            }
            detections.push(WireDetection {
                label: first.label,
                frame_id: frame as FrameId,
                bbox: BBox::new(0, 0, 7, 7),
                mask_rle: rle::encode(&mask),
                confidence: 0.12,
            });
        }
        GroundingResponse {
            schema_version: WIRE_SCHEMA_VERSION,
            detections,
            metadata: None,
        }
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), SynthError> {
    fs::write(path, bytes).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), SynthError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_object_fully_seen_somewhere() {
        let s = SyntheticScene::standard();
        let mut seen = vec![false; s.objects.len()];
        for f in (0..s.frame_count()).step_by(3) {
            let r = s.render(f);
            for (k, v) in r.fully_visible.iter().enumerate() {
                seen[k] |= v;
            }
        }
        for (k, o) in s.objects.iter().enumerate() {
            assert!(seen[k] || o.backdrop, "{} never fully visible", o.id);
        }
    }

    #[test]
    fn depth_is_whole_millimetres() {
        let s = SyntheticScene::standard();
        let r = s.render(0);
        for &d in r.depth.values() {
            assert!(d > 0.0, "backdrop covers the whole image");
            assert!(((d * 1000.0).round() - d * 1000.0).abs() < 1e-9);
        }
    }

    #[test]
    fn same_label_objects_are_far_apart() {
        let s = SyntheticScene::standard();
        let a = s.world_center(2);
        let b = s.world_center(3);
        assert!(crate::geometry::pairwise_distance(&a, &b) > 0.5);
    }
}
