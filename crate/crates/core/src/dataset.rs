//! Scene directories on disk:
//!
//! ```text
//! <scene>/manifest.json
//! <scene>/poses.jsonl        {"frame_id": 0, "t": [x, y, z], "q": [w, x, y, z]} per line
//! <scene>/rgb/000000.png
//! <scene>/depth/000000.png   16-bit grayscale, stored value * depth_scale = meters
//! ```
//!
//! Depth is range along the optical axis; a stored 0 marks an invalid pixel.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{intrinsics_from_fovs, Point3};
use crate::model::{CameraIntrinsics, ChunkId, DepthMap, FrameId, Pose, PosedFrame, UnitQuat};

/// Quaternions within this distance of unit norm are renormalized on load.
pub const POSE_RENORMALIZE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no manifest.json in {}", .0.display())]
    MissingManifest(PathBuf),
    #[error("malformed {}: {message}", .path.display())]
    Malformed { path: PathBuf, message: String },
    #[error("invalid manifest: {0}")]
    Invalid(String),
    #[error("{} frame file(s) missing: {}", .0.len(), list_paths(.0))]
    MissingFiles(Vec<PathBuf>),
    #[error("corrupt image {}: {message}", .path.display())]
    CorruptImage { path: PathBuf, message: String },
    #[error("frame {frame_id}: bad pose: {reason}")]
    BadPose { frame_id: FrameId, reason: String },
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn list_paths(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntrinsicsSource {
    Fov {
        hfov_deg: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        vfov_deg: Option<f64>,
    },
    Explicit {
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
    },
}

/// `manifest.json` as stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub scene_id: String,
    pub frame_count: usize,
    pub width: u32,
    pub height: u32,
    pub intrinsics: IntrinsicsSource,
    /// Meters per stored depth unit (0.001 for millimeters).
    #[serde(default = "default_depth_scale")]
    pub depth_scale: f64,
    /// Negate camera Z before applying poses (for Z-up world frames).
    #[serde(default)]
    pub flip_z: bool,
}

fn default_depth_scale() -> f64 {
    0.001
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame_id: FrameId,
    pub t: [f64; 3],
    pub q: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneManifest {
    pub dir: PathBuf,
    pub scene_id: String,
    pub frame_count: usize,
    pub intrinsics_source: IntrinsicsSource,
    pub intrinsics: CameraIntrinsics,
    pub depth_scale: f64,
    pub flip_z: bool,
    pub poses: Vec<PoseRecord>,
}

pub fn rgb_rel_path(frame_id: FrameId) -> String {
    format!("rgb/{frame_id:06}.png")
}

pub fn depth_rel_path(frame_id: FrameId) -> String {
    format!("depth/{frame_id:06}.png")
}

fn read_poses(path: &Path) -> Result<Vec<PoseRecord>, DatasetError> {
    let f = fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PoseRecord = serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", n + 1),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_manifest(dir: &Path) -> Result<SceneManifest, DatasetError> {
    let mpath = dir.join("manifest.json");
    let text = match fs::read_to_string(&mpath) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(DatasetError::MissingManifest(dir.to_path_buf()))
        }
        Err(source) => {
            return Err(DatasetError::Io {
                path: mpath,
                source,
            })
        }
    };
    let m: ManifestFile = serde_json::from_str(&text).map_err(|e| DatasetError::Malformed {
        path: mpath.clone(),
        message: e.to_string(),
    })?;
    if !(m.depth_scale.is_finite() && m.depth_scale > 0.0) {
        return Err(DatasetError::Invalid(format!(
            "depth_scale must be positive, got {}",
            m.depth_scale
        )));
    }
    let intrinsics = match m.intrinsics {
        IntrinsicsSource::Fov { hfov_deg, vfov_deg } => {
            intrinsics_from_fovs(m.width, m.height, hfov_deg, vfov_deg)
                .map_err(|e| DatasetError::Invalid(e.to_string()))?
        }
        IntrinsicsSource::Explicit { fx, fy, cx, cy } => CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width: m.width,
            height: m.height,
        },
    };
    intrinsics
        .validate()
        .map_err(|e| DatasetError::Invalid(e.to_string()))?;

    let poses = read_poses(&dir.join("poses.jsonl"))?;
    if poses.len() != m.frame_count {
        return Err(DatasetError::Invalid(format!(
            "frame_count is {} but poses.jsonl lists {} frames",
            m.frame_count,
            poses.len()
        )));
    }
    if let Some(w) = poses.windows(2).find(|w| w[1].frame_id <= w[0].frame_id) {
        return Err(DatasetError::Invalid(format!(
            "frame ids must increase: {} follows {}",
            w[1].frame_id, w[0].frame_id
        )));
    }
    let missing: Vec<PathBuf> = poses
        .iter()
        .flat_map(|p| {
            [
                dir.join(rgb_rel_path(p.frame_id)),
                dir.join(depth_rel_path(p.frame_id)),
            ]
        })
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        return Err(DatasetError::MissingFiles(missing));
    }
    Ok(SceneManifest {
        dir: dir.to_path_buf(),
        scene_id: m.scene_id,
        frame_count: m.frame_count,
        intrinsics_source: m.intrinsics,
        intrinsics,
        depth_scale: m.depth_scale,
        flip_z: m.flip_z,
        poses,
    })
}

pub fn read_depth_png(path: &Path, scale: f64) -> Result<DepthMap, DatasetError> {
    let corrupt = |message: String| DatasetError::CorruptImage {
        path: path.to_path_buf(),
        message,
    };
    let img = image::open(path).map_err(|e| corrupt(e.to_string()))?;
    let gray = img.into_luma16();
    let (w, h) = gray.dimensions();
    let data = gray
        .into_raw()
        .into_iter()
        .map(|raw| f64::from(raw) * scale)
        .collect();
    DepthMap::new(w, h, data).map_err(|e| corrupt(e.to_string()))
}

/// Quantizes to `round(d / scale)`; invalid or non-positive depth becomes 0.
pub fn write_depth_png(path: &Path, depth: &DepthMap, scale: f64) -> Result<(), DatasetError> {
    let raw: Vec<u16> = depth
        .values()
        .iter()
        .map(|&d| {
            if d.is_finite() && d > 0.0 {
                (d / scale).round().clamp(0.0, f64::from(u16::MAX)) as u16
            } else {
                0
            }
        })
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width(), depth.height(), raw)
            .expect("sized from the depth map");
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| DatasetError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    img.save(path).map_err(|e| DatasetError::CorruptImage {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

impl SceneManifest {
    /// Number of chunks of `chunk_size` frames (the last may be short).
    pub fn chunk_count(&self, chunk_size: usize) -> usize {
        self.frame_count.div_ceil(chunk_size.max(1))
    }

    pub fn load_frame(&self, rec: &PoseRecord) -> Result<PosedFrame, DatasetError> {
        let bad = |reason: String| DatasetError::BadPose {
            frame_id: rec.frame_id,
            reason,
        };
        let pose = Pose::renormalized(
            Point3::from(rec.t),
            UnitQuat::from(rec.q),
            POSE_RENORMALIZE_TOLERANCE,
        )
        .map_err(|e| bad(e.reason))?;
        let dpath = self.dir.join(depth_rel_path(rec.frame_id));
        let depth = read_depth_png(&dpath, self.depth_scale)?;
        if depth.width() != self.intrinsics.width || depth.height() != self.intrinsics.height {
            return Err(DatasetError::CorruptImage {
                path: dpath,
                message: format!(
                    "{}x{} depth for a {}x{} scene",
                    depth.width(),
                    depth.height(),
                    self.intrinsics.width,
                    self.intrinsics.height
                ),
            });
        }
        Ok(PosedFrame {
            frame_id: rec.frame_id,
            rgb_ref: rgb_rel_path(rec.frame_id),
            depth,
            pose,
            intrinsics: self.intrinsics,
            timestamp: rec.timestamp,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameChunk {
    pub chunk_id: ChunkId,
    pub frames: Vec<PosedFrame>,
}

/// Yields consecutive chunks in trajectory order, decoding lazily.
#[derive(Debug)]
pub struct ChunkStream<'a> {
    manifest: &'a SceneManifest,
    chunk_size: usize,
    next_chunk: usize,
}

impl ChunkStream<'_> {
    /// Skips directly to chunk `k` without decoding the earlier ones.
    pub fn starting_at(mut self, k: usize) -> Self {
        self.next_chunk = k;
        self
    }
}

impl Iterator for ChunkStream<'_> {
    type Item = Result<FrameChunk, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        let start = self.next_chunk.checked_mul(self.chunk_size)?;
        if start >= self.manifest.poses.len() {
            return None;
        }
        let end = (start + self.chunk_size).min(self.manifest.poses.len());
        let chunk_id = self.next_chunk as ChunkId;
        self.next_chunk += 1;
        let frames: Result<Vec<_>, _> = self.manifest.poses[start..end]
            .par_iter()
            .map(|rec| self.manifest.load_frame(rec))
            .collect();
        Some(frames.map(|frames| FrameChunk { chunk_id, frames }))
    }
}

pub fn stream_chunks(
    manifest: &SceneManifest,
    chunk_size: usize,
) -> Result<ChunkStream<'_>, DatasetError> {
    if chunk_size < 1 {
        return Err(DatasetError::Invalid(
            "chunk_size must be at least 1".into(),
        ));
    }
    Ok(ChunkStream {
        manifest,
        chunk_size,
        next_chunk: 0,
    })
}
