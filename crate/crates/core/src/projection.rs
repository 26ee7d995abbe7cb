//! World to AR image-plane projection with a pinhole model.
//!
//! Frames:
//! * world: x east, y north, z up; the road surface is `z = 0`.
//! * AR (camera) frame: x right, y down, z forward along the optical axis.
//! * image: `u` right, `v` down, in pixels.
//!
//! `p_a = R * p_w + t`, then `u = (f/d_x) * x_a/z_a + u_0` and
//! `v = (f/d_y) * y_a/z_a + v_0`. The inverse-form intrinsic matrix
//! `[[z d_x/f, 0, -z d_x u_0/f], [0, z d_y/f, -z d_y v_0/f], [0, 0, z]]`
//! maps a homogeneous pixel `(u, v, 1)` at depth `z` back to `p_a`; see
//! [`back_project`]. Lens distortion is not modelled.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::Pose2;
use crate::network::Path;
use crate::slot::{Availability, SlotGeometry};
use crate::vehicle::VehicleId;

/// Intrinsics and mounting of the AR camera, as read from a config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    /// Focal length (m).
    pub f: f64,
    /// Physical pixel size (m/px).
    pub dx: f64,
    pub dy: f64,
    pub u0: f64,
    pub v0: f64,
    pub image_w: f64,
    pub image_h: f64,
    /// Eye height above the road (m).
    pub height: f64,
    /// Eye position ahead of the vehicle centre (m).
    pub forward_offset: f64,
    /// Downward tilt of the optical axis (rad).
    pub pitch: f64,
    /// Points closer than this along the optical axis are rejected (m).
    pub z_near: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            f: 0.004,
            dx: 4e-6,
            dy: 4e-6,
            u0: 640.0,
            v0: 360.0,
            image_w: 1280.0,
            image_h: 720.0,
            height: 1.2,
            forward_offset: 0.0,
            pitch: 0.0,
            z_near: 0.5,
        }
    }
}

impl CameraConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| SimError::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub f: f64,
    pub dx: f64,
    pub dy: f64,
    pub u0: f64,
    pub v0: f64,
    pub image_w: f64,
    pub image_h: f64,
    pub z_near: f64,
}

impl CameraModel {
    /// Checked constructor; the rotation must be orthonormal with det +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, cfg: &CameraConfig) -> Result<Self> {
        let cam = Self {
            rotation,
            translation,
            f: cfg.f,
            dx: cfg.dx,
            dy: cfg.dy,
            u0: cfg.u0,
            v0: cfg.v0,
            image_w: cfg.image_w,
            image_h: cfg.image_h,
            z_near: cfg.z_near,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        if !(err <= 1e-9) || self.rotation.determinant() <= 0.0 {
            return Err(SimError::config("camera.rotation", format!("not a rotation (|R^T R - I| = {err:e})")));
        }
        for (name, v) in [("camera.f", self.f), ("camera.dx", self.dx), ("camera.dy", self.dy)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::config(name, "must be > 0"));
            }
        }
        if !(0.0..=self.image_w).contains(&self.u0) || !(0.0..=self.image_h).contains(&self.v0) {
            return Err(SimError::config("camera.principal_point", "outside the image"));
        }
        if !(self.z_near > 0.0) {
            return Err(SimError::config("camera.z_near", "must be > 0"));
        }
        Ok(())
    }

    /// Driver-eye camera for a vehicle at `pose`, looking along its heading.
    pub fn from_pose(cfg: &CameraConfig, pose: &Pose2) -> Result<Self> {
        let (s, c) = pose.heading.sin_cos();
        let (sp, cp) = cfg.pitch.sin_cos();
        let fwd = Vector3::new(c, s, 0.0);
        let down = Vector3::new(0.0, 0.0, -1.0);
        let x_c = Vector3::new(s, -c, 0.0);
        let z_c = fwd * cp + down * sp;
        let y_c = down * cp - fwd * sp;
        let rotation = Matrix3::from_rows(&[x_c.transpose(), y_c.transpose(), z_c.transpose()]);
        let eye = Vector3::new(
            pose.pos.x + c * cfg.forward_offset,
            pose.pos.y + s * cfg.forward_offset,
            cfg.height,
        );
        Self::new(rotation, -(rotation * eye), cfg)
    }

    pub fn fx(&self) -> f64 {
        self.f / self.dx
    }

    pub fn fy(&self) -> f64 {
        self.f / self.dy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ProjectionError {
    #[error("point at or behind the near plane")]
    BehindNearPlane,
}

pub fn world_to_ar_frame(p_w: &Vector3<f64>, cam: &CameraModel) -> Vector3<f64> {
    cam.rotation * p_w + cam.translation
}

pub fn ar_frame_to_image(p_a: &Vector3<f64>, cam: &CameraModel) -> std::result::Result<(f64, f64), ProjectionError> {
    if !(p_a.z > cam.z_near) {
        return Err(ProjectionError::BehindNearPlane);
    }
    Ok((cam.fx() * p_a.x / p_a.z + cam.u0, cam.fy() * p_a.y / p_a.z + cam.v0))
}

/// Camera-frame point at depth `z` seen at pixel `(u, v)`.
pub fn back_project(u: f64, v: f64, z: f64, cam: &CameraModel) -> Vector3<f64> {
    let k_inv = Matrix3::new(
        z * cam.dx / cam.f, 0.0, -z * cam.dx * cam.u0 / cam.f,
        0.0, z * cam.dy / cam.f, -z * cam.dy * cam.v0 / cam.f,
        0.0, 0.0, z,
    );
    k_inv * Vector3::new(u, v, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectedQuad {
    /// `None` for green (available) regions.
    pub ref_vehicle: Option<VehicleId>,
    /// Image-plane polygon, `[u, v]` pixels. Four corners unless clipped.
    pub corners: Vec<[f64; 2]>,
    pub availability: Availability,
}

/// Keeps the part of a camera-frame polygon with `z >= z_near`.
pub fn clip_near(poly: &[Vector3<f64>], z_near: f64) -> Vec<Vector3<f64>> {
    let inside = |p: &Vector3<f64>| p.z >= z_near;
    let mut out = Vec::with_capacity(poly.len() + 2);
    for (k, cur) in poly.iter().enumerate() {
        let prev = &poly[(k + poly.len() - 1) % poly.len()];
        match (inside(prev), inside(cur)) {
            (true, true) => out.push(*cur),
            (true, false) => out.push(lerp_z(prev, cur, z_near)),
            (false, true) => {
                out.push(lerp_z(prev, cur, z_near));
                out.push(*cur);
            }
            (false, false) => {}
        }
    }
    out
}

fn lerp_z(a: &Vector3<f64>, b: &Vector3<f64>, z: f64) -> Vector3<f64> {
    let t = (z - a.z) / (b.z - a.z);
    let mut p = a + (b - a) * t;
    p.z = z;
    p
}

/// Sutherland-Hodgman clip of an image polygon to `[0, w] x [0, h]`.
pub fn clip_to_image(poly: &[[f64; 2]], w: f64, h: f64) -> Vec<[f64; 2]> {
    // (axis, bound, keep_greater)
    let edges = [(0usize, 0.0, true), (0, w, false), (1, 0.0, true), (1, h, false)];
    let mut cur = poly.to_vec();
    for (axis, bound, keep_ge) in edges {
        if cur.is_empty() {
            break;
        }
        let inside = |p: &[f64; 2]| if keep_ge { p[axis] >= bound } else { p[axis] <= bound };
        let cut = |a: &[f64; 2], b: &[f64; 2]| {
            let t = (bound - a[axis]) / (b[axis] - a[axis]);
            let mut p = [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t];
            p[axis] = bound;
            p
        };
        let input = std::mem::take(&mut cur);
        for (k, c) in input.iter().enumerate() {
            let prev = &input[(k + input.len() - 1) % input.len()];
            match (inside(prev), inside(c)) {
                (true, true) => cur.push(*c),
                (true, false) => cur.push(cut(prev, c)),
                (false, true) => {
                    cur.push(cut(prev, c));
                    cur.push(*c);
                }
                (false, false) => {}
            }
        }
    }
    cur
}

/// Road-plane corners of a slot laid along `path` (lateral offset positive
/// to the left of travel).
pub fn slot_corners_world(slot: &SlotGeometry, path: &Path) -> [Vector3<f64>; 4] {
    let (r0, r1) = slot.span();
    let (x0, x1) = (slot.x_s - slot.w_s / 2.0, slot.x_s + slot.w_s / 2.0);
    let at = |r: f64, x: f64| {
        let pose = path.pose_at(r);
        let p = pose.pos + pose.left().scale(x);
        Vector3::new(p.x, p.y, 0.0)
    };
    [at(r0, x0), at(r1, x0), at(r1, x1), at(r0, x1)]
}

/// Projects a slot rectangle into the AR image. `None` when nothing of it is
/// in view.
pub fn project_slot(slot: &SlotGeometry, path: &Path, cam: &CameraModel) -> Option<ProjectedQuad> {
    let cam_pts: Vec<_> = slot_corners_world(slot, path)
        .iter()
        .map(|p| world_to_ar_frame(p, cam))
        .collect();
    // Points exactly on z_near are accepted by the clip but not by the strict
    // projection; nudge them just in front.
    let near = cam.z_near * (1.0 + 1e-12);
    let clipped = clip_near(&cam_pts, near);
    if clipped.len() < 3 {
        return None;
    }
    let img: Vec<[f64; 2]> = clipped
        .iter()
        .filter_map(|p| ar_frame_to_image(p, cam).ok())
        .map(|(u, v)| [u, v])
        .collect();
    let img = clip_to_image(&img, cam.image_w, cam.image_h);
    if img.len() < 3 {
        return None;
    }
    Some(ProjectedQuad {
        ref_vehicle: match slot.availability {
            Availability::UnavailableRed => Some(slot.ref_vehicle),
            Availability::AvailableGreen => None,
        },
        corners: img,
        availability: slot.availability,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::network::Heading;

    fn identity_cam(t: Vector3<f64>) -> CameraModel {
        CameraModel::new(Matrix3::identity(), t, &CameraConfig::default()).unwrap()
    }

    #[test]
    fn identity_extrinsics() {
        let cam = identity_cam(Vector3::zeros());
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(world_to_ar_frame(&p, &cam), p);
    }

    #[test]
    fn translation_only() {
        let cam = identity_cam(Vector3::new(0.0, 0.0, -5.0));
        assert_eq!(world_to_ar_frame(&Vector3::new(0.0, 0.0, 10.0), &cam), Vector3::new(0.0, 0.0, 5.0));
    }

    #[test]
    fn ninety_degree_yaw() {
        // rotation about the camera's vertical (y) axis
        let r = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), std::f64::consts::FRAC_PI_2);
        let cam = CameraModel::new(*r.matrix(), Vector3::zeros(), &CameraConfig::default()).unwrap();
        let p = world_to_ar_frame(&Vector3::new(1.0, 0.0, 0.0), &cam);
        assert!((p - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn principal_point_and_pinhole_arithmetic() {
        let cam = identity_cam(Vector3::zeros());
        assert_eq!(ar_frame_to_image(&Vector3::new(0.0, 0.0, 7.0), &cam).unwrap(), (640.0, 360.0));
        let (u, v) = ar_frame_to_image(&Vector3::new(1.0, 0.0, 10.0), &cam).unwrap();
        assert!((u - 740.0).abs() < 1e-9 && v == 360.0);
        let (_, v) = ar_frame_to_image(&Vector3::new(0.0, 0.5, 5.0), &cam).unwrap();
        assert!((v - 460.0).abs() < 1e-9);
        assert_eq!(
            ar_frame_to_image(&Vector3::new(0.0, 0.0, 0.5), &cam),
            Err(ProjectionError::BehindNearPlane)
        );
    }

    #[test]
    fn rejects_non_orthonormal_rotation() {
        let mut m = Matrix3::identity();
        m[(0, 1)] = 0.1;
        assert!(CameraModel::new(m, Vector3::zeros(), &CameraConfig::default()).is_err());
    }

    fn straight_path() -> Path {
        Path::standalone(
            vec![Vec2::new(0.0, 0.0), Vec2::new(0.0, 300.0)],
            290.0,
            Heading::North,
        )
    }

    fn slot(r_s: f64, l_s: f64) -> SlotGeometry {
        SlotGeometry {
            ref_vehicle: VehicleId(9),
            r_s,
            x_s: 0.0,
            l_s,
            w_s: 1.8,
            availability: Availability::UnavailableRed,
        }
    }

    #[test]
    fn slot_ahead_is_symmetric_about_principal_column() {
        let path = straight_path();
        let cfg = CameraConfig {
            pitch: 0.1,
            ..Default::default()
        };
        let cam = CameraModel::from_pose(&cfg, &path.pose_at(10.0)).unwrap();
        let q = project_slot(&slot(30.0, 6.0), &path, &cam).unwrap();
        assert_eq!(q.corners.len(), 4);
        // corners: (near,right) (far,right) (far,left) (near,left)
        let c = &q.corners;
        assert!(((c[0][0] - 640.0) + (c[3][0] - 640.0)).abs() < 1e-9);
        assert!(((c[1][0] - 640.0) + (c[2][0] - 640.0)).abs() < 1e-9);
        assert!((c[0][1] - c[3][1]).abs() < 1e-9);
        assert!(c[0][1] > c[1][1], "near edge lower in the image");
    }

    #[test]
    fn slot_behind_is_not_shown() {
        let path = straight_path();
        let cam = CameraModel::from_pose(&CameraConfig { pitch: 0.1, ..Default::default() }, &path.pose_at(100.0)).unwrap();
        assert!(project_slot(&slot(60.0, 10.0), &path, &cam).is_none());
    }

    #[test]
    fn near_plane_clip_matches_hand_interpolation() {
        let poly = [
            Vector3::new(-1.0, 1.0, 0.0),
            Vector3::new(-1.0, 1.0, 4.0),
            Vector3::new(1.0, 1.0, 4.0),
            Vector3::new(1.0, 1.0, 0.0),
        ];
        let c = clip_near(&poly, 1.0);
        assert_eq!(c.len(), 4);
        // edge (1,1,0)->(-1,1,0) lies behind; entering edges cut at z = 1
        assert!(c.iter().all(|p| p.z >= 1.0));
        assert!(c.contains(&Vector3::new(-1.0, 1.0, 1.0)));
        assert!(c.contains(&Vector3::new(1.0, 1.0, 1.0)));
    }

    #[test]
    fn image_clip_keeps_inside_part() {
        let poly = [[-100.0, 100.0], [200.0, 100.0], [200.0, 200.0], [-100.0, 200.0]];
        let c = clip_to_image(&poly, 1280.0, 720.0);
        assert_eq!(c.len(), 4);
        assert!(c.iter().all(|p| p[0] >= 0.0));
        assert!(clip_to_image(&[[-10.0, -10.0], [-5.0, -10.0], [-5.0, -5.0]], 100.0, 100.0).is_empty());
    }
}
