//! Numerical kernel: pinhole intrinsics, depth back-projection, rigid
//! camera-to-world transforms, centroid/extent estimation and distances.
//!
//! Camera frame convention: X grows to the right with image `u`, Y is the
//! optical (depth) axis, Z grows with image `v` (downwards). A pixel `(u, v)`
//! with depth `d` maps to `X = (u - cx) / fx * d`, `Y = d`,
//! `Z = (v - cy) / fy * d`.

use std::ops::{Add, Sub};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BinaryMask, CameraIntrinsics, DepthMap, Pose};

/// Quaternions farther than this from unit norm are rejected by transforms.
pub const TRANSFORM_UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no valid depth pixel inside mask")]
    EmptyProjection,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// A point in meters. Serialized as `[x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k, self.z * k)
    }

    pub fn as_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        p.as_array()
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

/// Axis-aligned box, world frame unless stated otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn point(p: Point3) -> Self {
        Self { min: p, max: p }
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: Point3::new(
                self.min.x.min(other.min.x),
                self.min.y.min(other.min.y),
                self.min.z.min(other.min.z),
            ),
            max: Point3::new(
                self.max.x.max(other.max.x),
                self.max.y.max(other.max.y),
                self.max.z.max(other.max.z),
            ),
        }
    }

    pub fn contains(&self, p: &Point3) -> bool {
        self.min.x <= p.x
            && p.x <= self.max.x
            && self.min.y <= p.y
            && p.y <= self.max.y
            && self.min.z <= p.z
            && p.z <= self.max.z
    }

    /// Nearest point of the box. Used to absorb last-ulp rounding of means.
    pub fn clamp(&self, p: Point3) -> Point3 {
        Point3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameTag {
    Camera,
    World,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointBatch {
    pub points: Vec<Point3>,
    pub frame: FrameTag,
}

impl PointBatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Pinhole intrinsics from image size and horizontal field of view (degrees).
/// Pixels are square: `fy = fx`.
pub fn intrinsics_from_fov(
    width: u32,
    height: u32,
    hfov_deg: f64,
) -> Result<CameraIntrinsics, GeometryError> {
    intrinsics_from_fovs(width, height, hfov_deg, None)
}

/// Like [`intrinsics_from_fov`], with an optional vertical FOV overriding `fy`.
pub fn intrinsics_from_fovs(
    width: u32,
    height: u32,
    hfov_deg: f64,
    vfov_deg: Option<f64>,
) -> Result<CameraIntrinsics, GeometryError> {
    if width == 0 || height == 0 {
        return Err(GeometryError::Domain(format!(
            "image dimensions must be positive, got {width}x{height}"
        )));
    }
    let check = |fov: f64, name: &str| {
        if !(fov.is_finite() && fov > 0.0 && fov < 180.0) {
            Err(GeometryError::Domain(format!(
                "{name} must lie in (0, 180) degrees, got {fov}"
            )))
        } else {
            Ok(())
        }
    };
    check(hfov_deg, "hfov")?;
    let fx = (f64::from(width) / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
    let fy = match vfov_deg {
        Some(vfov) => {
            check(vfov, "vfov")?;
            (f64::from(height) / 2.0) / (vfov.to_radians() / 2.0).tan()
        }
        None => fx,
    };
    Ok(CameraIntrinsics {
        fx,
        fy,
        cx: f64::from(width) / 2.0,
        cy: f64::from(height) / 2.0,
        width,
        height,
    })
}

pub fn backproject_pixel(
    u: f64,
    v: f64,
    d: f64,
    intr: &CameraIntrinsics,
) -> Result<Point3, GeometryError> {
    if !(d.is_finite() && d > 0.0) {
        return Err(GeometryError::Domain(format!("invalid depth {d}")));
    }
    Ok(Point3::new(
        (u - intr.cx) / intr.fx * d,
        d,
        (v - intr.cy) / intr.fy * d,
    ))
}

/// Forward pinhole model, the inverse of [`backproject_pixel`]: returns `(u, v, d)`.
pub fn project_point(
    p: &Point3,
    intr: &CameraIntrinsics,
) -> Result<(f64, f64, f64), GeometryError> {
    if !(p.y.is_finite() && p.y > 0.0) {
        return Err(GeometryError::Domain(format!(
            "point is not in front of the camera (Y = {})",
            p.y
        )));
    }
    let d = p.y;
    Ok((p.x / d * intr.fx + intr.cx, p.z / d * intr.fy + intr.cy, d))
}

/// True when the stored depth value is usable.
#[inline]
pub fn is_valid_depth(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

/// Back-projects every masked pixel with valid depth. Invalid pixels are
/// skipped, never zero-filled.
pub fn backproject_mask(
    mask: &BinaryMask,
    depth: &DepthMap,
    intr: &CameraIntrinsics,
) -> Result<PointBatch, GeometryError> {
    if mask.width() != depth.width() || mask.height() != depth.height() {
        return Err(GeometryError::DimensionMismatch(format!(
            "mask {}x{} vs depth {}x{}",
            mask.width(),
            mask.height(),
            depth.width(),
            depth.height()
        )));
    }
    if depth.width() != intr.width || depth.height() != intr.height {
        return Err(GeometryError::DimensionMismatch(format!(
            "depth {}x{} vs intrinsics {}x{}",
            depth.width(),
            depth.height(),
            intr.width,
            intr.height
        )));
    }
    let mut points = Vec::new();
    for (u, v) in mask.set_pixels() {
        let d = depth.get(u, v);
        if is_valid_depth(d) {
            points.push(backproject_pixel(f64::from(u), f64::from(v), d, intr)?);
        }
    }
    if points.is_empty() {
        return Err(GeometryError::EmptyProjection);
    }
    Ok(PointBatch {
        points,
        frame: FrameTag::Camera,
    })
}

/// Negates camera Z (image-down becomes up) for datasets whose world frame is
/// Z-up. Applied in the camera frame before [`camera_to_world`].
pub fn flip_camera_z(batch: &mut PointBatch) {
    debug_assert_eq!(batch.frame, FrameTag::Camera);
    for p in &mut batch.points {
        p.z = -p.z;
    }
}

pub(crate) fn unit_rotation(pose: &Pose) -> Result<UnitQuaternion<f64>, GeometryError> {
    let q = pose.orientation;
    let norm = q.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > TRANSFORM_UNIT_TOLERANCE {
        return Err(GeometryError::Domain(format!(
            "orientation quaternion is not unit (norm {norm})"
        )));
    }
    Ok(UnitQuaternion::new_normalize(Quaternion::new(
        q.w, q.x, q.y, q.z,
    )))
}

/// Applies a rigid transform: `p -> R(q) p + t`.
pub fn transform_point(p: Point3, pose: &Pose) -> Result<Point3, GeometryError> {
    let r = unit_rotation(pose)?;
    Ok(Point3::from_vector(
        &(r * p.to_vector() + pose.position.to_vector()),
    ))
}

pub fn camera_to_world(batch: &PointBatch, pose: &Pose) -> Result<PointBatch, GeometryError> {
    if batch.frame != FrameTag::Camera {
        return Err(GeometryError::Domain(
            "camera_to_world expects a camera-frame batch".into(),
        ));
    }
    let r = unit_rotation(pose)?;
    let t = pose.position.to_vector();
    let points = batch
        .points
        .iter()
        .map(|p| Point3::from_vector(&(r * p.to_vector() + t)))
        .collect();
    Ok(PointBatch {
        points,
        frame: FrameTag::World,
    })
}

/// Arithmetic-mean centroid and component-wise extent.
pub fn centroid_and_aabb(batch: &PointBatch) -> Result<(Point3, Aabb), GeometryError> {
    let first = *batch
        .points
        .first()
        .ok_or_else(|| GeometryError::Domain("centroid of empty batch".into()))?;
    let mut aabb = Aabb::point(first);
    let mut sum = Point3::default();
    for p in &batch.points {
        sum = sum + *p;
        aabb = aabb.union(&Aabb::point(*p));
    }
    let mean = sum.scale(1.0 / batch.points.len() as f64);
    Ok((aabb.clamp(mean), aabb))
}

pub fn pairwise_distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UnitQuat;

    fn intr_640() -> CameraIntrinsics {
        intrinsics_from_fov(640, 480, 90.0).unwrap()
    }

    #[test]
    fn fov_640_by_480_at_90() {
        let i = intr_640();
        assert!((i.fx - 320.0).abs() < 1e-12);
        assert_eq!(i.fx, i.fy);
        assert_eq!((i.cx, i.cy), (320.0, 240.0));
    }

    #[test]
    fn fov_minimal_image() {
        let i = intrinsics_from_fov(2, 2, 90.0).unwrap();
        assert!((i.fx - 1.0).abs() < 1e-12);
        assert_eq!((i.cx, i.cy), (1.0, 1.0));
    }

    #[test]
    fn fov_domain_errors() {
        assert!(intrinsics_from_fov(640, 480, 0.0).is_err());
        assert!(intrinsics_from_fov(640, 480, 180.0).is_err());
        assert!(intrinsics_from_fov(0, 480, 90.0).is_err());
        assert!(intrinsics_from_fovs(640, 480, 90.0, Some(-1.0)).is_err());
    }

    #[test]
    fn vfov_overrides_fy() {
        let i = intrinsics_from_fovs(640, 480, 90.0, Some(90.0)).unwrap();
        assert!((i.fy - 240.0).abs() < 1e-12);
    }

    #[test]
    fn backproject_examples() {
        let i = intr_640();
        assert_eq!(
            backproject_pixel(i.cx, i.cy, 2.0, &i).unwrap(),
            Point3::new(0.0, 2.0, 0.0)
        );
        let p = backproject_pixel(640.0, i.cy, 1.0, &i).unwrap();
        assert!((p.x - 1.0).abs() < 1e-12 && p.y == 1.0 && p.z == 0.0);
        assert!(backproject_pixel(1.0, 1.0, 0.0, &i).is_err());
        assert!(backproject_pixel(1.0, 1.0, f64::NAN, &i).is_err());
    }

    #[test]
    fn mask_backprojection_counts_valid_pixels() {
        let i = intrinsics_from_fov(4, 4, 90.0).unwrap();
        let mut mask = BinaryMask::new(4, 4);
        let mut depth = DepthMap::filled(4, 4, 1.0);
        // principal point column u = cx = 2
        for v in 0..3 {
            mask.set(2, v, true);
        }
        let b = backproject_mask(&mask, &depth, &i).unwrap();
        assert_eq!(b.len(), 3);
        assert!(b.points.iter().all(|p| p.y == 1.0 && p.x == 0.0));

        depth.set(2, 0, 0.0);
        depth.set(2, 1, f64::INFINITY);
        assert_eq!(backproject_mask(&mask, &depth, &i).unwrap().len(), 1);
    }

    #[test]
    fn mask_backprojection_empty() {
        let i = intrinsics_from_fov(4, 4, 90.0).unwrap();
        let depth = DepthMap::filled(4, 4, 1.0);
        let mask = BinaryMask::new(4, 4);
        assert_eq!(
            backproject_mask(&mask, &depth, &i),
            Err(GeometryError::EmptyProjection)
        );
        let mut mask = BinaryMask::new(4, 4);
        mask.set(1, 1, true);
        let zero = DepthMap::filled(4, 4, 0.0);
        assert_eq!(
            backproject_mask(&mask, &zero, &i),
            Err(GeometryError::EmptyProjection)
        );
    }

    #[test]
    fn mask_dimension_mismatch() {
        let i = intrinsics_from_fov(4, 4, 90.0).unwrap();
        let depth = DepthMap::filled(4, 4, 1.0);
        let mask = BinaryMask::new(3, 4);
        assert!(matches!(
            backproject_mask(&mask, &depth, &i),
            Err(GeometryError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn transforms() {
        let batch = PointBatch {
            points: vec![Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 0.0, 0.0)],
            frame: FrameTag::Camera,
        };
        let out = camera_to_world(&batch, &Pose::identity()).unwrap();
        assert_eq!(out.points, batch.points);
        assert_eq!(out.frame, FrameTag::World);

        let shifted = Pose::new(Point3::new(1.0, 2.0, 3.0), UnitQuat::IDENTITY).unwrap();
        let out = camera_to_world(&batch, &shifted).unwrap();
        assert_eq!(out.points[1], Point3::new(1.0, 2.0, 3.0));

        // 180 degrees about Z: q = (w, x, y, z) = (0, 0, 0, 1)
        let flipped = Pose::new(
            Point3::new(1.0, 2.0, 3.0),
            UnitQuat::new(0.0, 0.0, 0.0, 1.0),
        )
        .unwrap();
        let out = camera_to_world(&batch, &flipped).unwrap();
        let p = out.points[0];
        assert!((p.x - 0.0).abs() < 1e-15, "{p:?}"); // -1 + 1
        assert!((p.y - 2.0).abs() < 1e-15);
        assert!((p.z - 3.0).abs() < 1e-15);
    }

    #[test]
    fn transform_rejects_non_unit() {
        let batch = PointBatch {
            points: vec![Point3::default()],
            frame: FrameTag::Camera,
        };
        let mut pose = Pose::identity();
        pose.orientation = UnitQuat::new(0.9, 0.0, 0.0, 0.0);
        assert!(camera_to_world(&batch, &pose).is_err());
        let world = PointBatch {
            points: vec![Point3::default()],
            frame: FrameTag::World,
        };
        assert!(camera_to_world(&world, &Pose::identity()).is_err());
    }

    #[test]
    fn centroid_examples() {
        let b = |pts: Vec<Point3>| PointBatch {
            points: pts,
            frame: FrameTag::World,
        };
        let (c, a) = centroid_and_aabb(&b(vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
        ]))
        .unwrap();
        assert_eq!(c, Point3::new(1.0, 0.0, 0.0));
        assert_eq!(a.min, Point3::new(0.0, 0.0, 0.0));
        assert_eq!(a.max, Point3::new(2.0, 0.0, 0.0));

        let p = Point3::new(0.3, -1.2, 7.0);
        let (c, a) = centroid_and_aabb(&b(vec![p])).unwrap();
        assert_eq!(c, p);
        assert_eq!(a, Aabb::point(p));

        let (c, _) = centroid_and_aabb(&b(vec![
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(0.0, 1.0, 1.0),
            Point3::new(1.0, 1.0, 1.0),
        ]))
        .unwrap();
        assert_eq!(c, Point3::new(0.5, 1.0, 0.5));

        assert!(centroid_and_aabb(&b(vec![])).is_err());
    }

    #[test]
    fn centroid_stays_inside_box_under_rounding() {
        let pts = vec![Point3::new(0.1, 0.1, 0.1); 3];
        let (c, a) = centroid_and_aabb(&PointBatch {
            points: pts,
            frame: FrameTag::World,
        })
        .unwrap();
        assert!(a.contains(&c));
    }

    #[test]
    fn distances() {
        let o = Point3::default();
        assert_eq!(pairwise_distance(&o, &o), 0.0);
        assert_eq!(pairwise_distance(&o, &Point3::new(3.0, 4.0, 0.0)), 5.0);
    }

    #[test]
    fn fov_monotone() {
        let a = intrinsics_from_fov(640, 480, 60.0).unwrap();
        let b = intrinsics_from_fov(640, 480, 61.0).unwrap();
        assert!(b.fx < a.fx);
    }
}
