//! Camera geometry: poses, pinhole intrinsics, depth images and point clouds.
//!
//! Conventions used throughout the crate:
//!
//! * The camera frame is z-forward, x-right, y-down.
//! * A pose stores the camera-to-world rotation `R` and the camera position
//!   `t` in the world frame, so `p_world = R * p_cam + t`.
//! * Depth is the camera-frame z coordinate (plane depth, not ray length).
//! * A depth value of exactly `0.0` marks "no return" (nothing within range).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Depth-image sentinel for pixels with no return.
pub const NO_RETURN: f64 = 0.0;

/// Tolerance for rotation-matrix orthonormality checks.
const ROT_TOL: f64 = 1e-9;

/// Rigid camera pose with a timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    /// Camera-to-world rotation.
    pub rotation: Mat3,
    /// Camera position in the world frame.
    pub translation: Vec3,
    /// Acquisition time in seconds.
    pub timestamp: f64,
}

impl CameraPose {
    /// Builds a pose, rejecting rotations that are not orthonormal with
    /// determinant +1 (within `1e-9`).
    pub fn new(rotation: Mat3, translation: Vec3, timestamp: f64) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let err = (gram - Mat3::identity()).norm();
        if err > ROT_TOL {
            return Err(Error::InvalidRotation(format!(
                "R'R deviates from identity by {err:.3e}"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROT_TOL {
            return Err(Error::InvalidRotation(format!("det = {det}")));
        }
        Ok(Self {
            rotation,
            translation,
            timestamp,
        })
    }

    /// Pose looking along `yaw` (about world z, from +x) and `pitch`
    /// (positive pitches the view up), camera z-forward/x-right/y-down.
    pub fn from_yaw_pitch(position: Vec3, yaw: f64, pitch: f64, timestamp: f64) -> Self {
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        // Forward in world coordinates.
        let fwd = Vec3::new(cy * cp, sy * cp, sp);
        // Camera x points right (horizontal), camera y completes it downwards.
        let right = Vec3::new(sy, -cy, 0.0);
        let down = fwd.cross(&right);
        let rotation = Mat3::from_columns(&[right, down, fwd]);
        Self {
            rotation,
            translation: position,
            timestamp,
        }
    }

    /// World-frame point into the camera frame.
    #[inline]
    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Camera-frame point into the world frame.
    #[inline]
    pub fn camera_to_world(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &CameraPose) -> CameraPose {
        CameraPose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            timestamp: self.timestamp,
        }
    }

    /// Inverse transform.
    pub fn inverse(&self) -> CameraPose {
        let rt = self.rotation.transpose();
        CameraPose {
            rotation: rt,
            translation: -(rt * self.translation),
            timestamp: self.timestamp,
        }
    }

    /// Unit vector of the camera optical axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into()
    }
}

/// Pinhole camera intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return Err(Error::InvalidIntrinsics(format!("fx = {fx}, fy = {fy}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidIntrinsics(format!("{width}x{height}")));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Intrinsics from horizontal/vertical field of view in degrees, with the
    /// principal point at the image center.
    pub fn from_fov_deg(width: usize, height: usize, fov_h: f64, fov_v: f64) -> Result<Self> {
        let fx = width as f64 / (2.0 * (fov_h.to_radians() / 2.0).tan());
        let fy = height as f64 / (2.0 * (fov_v.to_radians() / 2.0).tan());
        Self::new(fx, fy, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }
}

/// A world point successfully projected into the image.
#[derive(Debug, Clone, Copy)]
pub struct ImagePoint {
    /// Continuous pixel column.
    pub u: f64,
    /// Continuous pixel row.
    pub v: f64,
    /// The point in the camera frame; `cam.z` is its depth.
    pub cam: Vec3,
}

/// Projects a world point into the image. Returns `None` when the point is
/// behind the camera (`z <= 0`) or falls outside `[0, width) x [0, height)`.
pub fn project_to_image(
    p: Vec3,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
) -> Option<ImagePoint> {
    let cam = pose.world_to_camera(p);
    if cam.z <= 0.0 {
        return None;
    }
    let u = intr.fx * cam.x / cam.z + intr.cx;
    let v = intr.fy * cam.y / cam.z + intr.cy;
    if u < 0.0 || u >= intr.width as f64 || v < 0.0 || v >= intr.height as f64 {
        return None;
    }
    Some(ImagePoint { u, v, cam })
}

/// Recovers the world point seen at pixel `(u, v)` with the given depth.
/// Depth must be strictly positive.
pub fn unproject_pixel(
    u: f64,
    v: f64,
    depth: f64,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
) -> Result<Vec3> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth(depth));
    }
    let cam = Vec3::new(
        (u - intr.cx) / intr.fx * depth,
        (v - intr.cy) / intr.fy * depth,
        depth,
    );
    Ok(pose.camera_to_world(cam))
}

/// Dense depth image with the pose it was captured from.
#[derive(Debug, Clone)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    /// Row-major depth values; `0.0` means no return.
    pub depth: Vec<f64>,
    pub pose: CameraPose,
    pub timestamp: f64,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, pose: CameraPose, timestamp: f64) -> Self {
        Self {
            width,
            height,
            depth: vec![NO_RETURN; width * height],
            pose,
            timestamp,
        }
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.depth[iy * self.width + ix]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, d: f64) {
        self.depth[iy * self.width + ix] = d;
    }

    /// Depth at the pixel nearest to continuous coordinates `(u, v)`;
    /// `None` outside the image.
    pub fn sample_nearest(&self, u: f64, v: f64) -> Option<f64> {
        if u < 0.0 || u >= self.width as f64 || v < 0.0 || v >= self.height as f64 {
            return None;
        }
        let ix = (u.round() as usize).min(self.width - 1);
        let iy = (v.round() as usize).min(self.height - 1);
        Some(self.at(ix, iy))
    }

    /// Unprojects every valid pixel into a world-frame point cloud.
    pub fn to_point_cloud(&self, intr: &CameraIntrinsics) -> PointCloud {
        let mut points = Vec::new();
        for iy in 0..self.height {
            for ix in 0..self.width {
                let d = self.at(ix, iy);
                if d > 0.0 {
                    let cam = Vec3::new(
                        (ix as f64 - intr.cx) / intr.fx * d,
                        (iy as f64 - intr.cy) / intr.fy * d,
                        d,
                    );
                    points.push(self.pose.camera_to_world(cam));
                }
            }
        }
        PointCloud {
            points,
            timestamp: self.timestamp,
            source_pose: self.pose,
        }
    }
}

/// World-frame point cloud tagged with its capture time and camera pose.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub timestamp: f64,
    pub source_pose: CameraPose,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mean of all points; `None` when empty.
    pub fn centroid(&self) -> Option<Vec3> {
        if self.points.is_empty() {
            return None;
        }
        let sum: Vec3 = self.points.iter().sum();
        Some(sum / self.points.len() as f64)
    }
}
