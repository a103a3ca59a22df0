//! Pinhole camera with a LiDAR-to-camera extrinsic.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Maps sensor (cloud) coordinates into camera coordinates.
    pub extrinsic: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    /// Integer pixel containing the projection.
    pub fn pixel(&self) -> (usize, usize) {
        (self.u as usize, self.v as usize)
    }
}

/// Calibration file contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major 4x4 sensor-to-camera transform.
    pub extrinsic: Vec<f64>,
}

/// Camera frame is x right, y down, z forward; sensor frame is x forward,
/// y left, z up.
pub fn forward_looking_extrinsic(offset: Vec3) -> Pose {
    let r = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    Pose::new(rotation, rotation * -offset)
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, extrinsic: Pose) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            extrinsic,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.width > 0
            && self.height > 0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy)
            && self.extrinsic.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Calibration(format!(
                "invalid intrinsics fx={} fy={} cx={} cy={} for {}x{}",
                self.fx, self.fy, self.cx, self.cy, self.width, self.height
            )))
        }
    }

    /// Projects a sensor-frame point; `None` when it is behind the camera or
    /// falls outside the image.
    #[inline]
    pub fn project(&self, p: &Vec3) -> Option<Projection> {
        let q = self.extrinsic.transform_point(p);
        if q.z <= 0.0 {
            return None;
        }
        let u = self.fx * q.x / q.z + self.cx;
        let v = self.fy * q.y / q.z + self.cy;
        if u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64 {
            Some(Projection { u, v, depth: q.z })
        } else {
            None
        }
    }

    /// Unit ray through the centre of pixel `(x, y)`, in camera coordinates.
    pub fn pixel_ray(&self, x: usize, y: usize) -> Vec3 {
        Vec3::new(
            (x as f64 + 0.5 - self.cx) / self.fx,
            (y as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        )
        .normalize()
    }

    pub fn from_file(c: &CalibrationFile) -> Result<Self> {
        if c.extrinsic.len() != 16 {
            return Err(Error::Calibration(format!(
                "extrinsic must have 16 entries, found {}",
                c.extrinsic.len()
            )));
        }
        let m = Matrix4::from_row_slice(&c.extrinsic);
        let extrinsic = Pose::from_matrix(&m).map_err(|e| Error::Calibration(e.to_string()))?;
        Self::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height, extrinsic)
    }

    pub fn to_file(&self) -> CalibrationFile {
        let m = self.extrinsic.to_matrix();
        CalibrationFile {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            extrinsic: (0..4).flat_map(|r| (0..4).map(move |c| m[(r, c)])).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CalibrationFile = serde_json::from_str(&text)
            .map_err(|e| Error::Calibration(format!("{}: {e}", path.display())))?;
        Self::from_file(&file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file()).expect("calibration serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Free-function form of [`CameraModel::project`].
pub fn project_point(cam: &CameraModel, p: &Vec3) -> Option<Projection> {
    cam.project(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraModel {
        CameraModel::new(100.0, 100.0, 50.0, 50.0, 100, 100, Pose::identity()).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let p = project_point(&cam(), &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((p.u, p.v, p.depth), (50.0, 50.0, 1.0));
    }

    #[test]
    fn behind_camera_is_out_of_view() {
        assert!(project_point(&cam(), &Vec3::new(0.0, 0.0, -1.0)).is_none());
        assert!(project_point(&cam(), &Vec3::new(0.0, 0.0, 0.0)).is_none());
    }

    #[test]
    fn pinhole_arithmetic() {
        let c = CameraModel { width: 200, ..cam() };
        let p = project_point(&c, &Vec3::new(0.5, 0.0, 1.0)).unwrap();
        assert_eq!(p.u, 100.0);
        // same point is outside a 100-pixel-wide image
        assert!(project_point(&cam(), &Vec3::new(0.5, 0.0, 1.0)).is_none());
    }

    #[test]
    fn forward_extrinsic_maps_sensor_x_to_optical_axis() {
        let c = CameraModel { extrinsic: forward_looking_extrinsic(Vec3::zeros()), ..cam() };
        let p = c.project(&Vec3::new(2.0, 0.0, 0.0)).unwrap();
        assert!((p.u - 50.0).abs() < 1e-12 && (p.v - 50.0).abs() < 1e-12 && (p.depth - 2.0).abs() < 1e-12);
        // sensor +y (left) lands left of centre, +z (up) above centre
        let l = c.project(&Vec3::new(2.0, 0.5, 0.5)).unwrap();
        assert!(l.u < 50.0 && l.v < 50.0);
    }

    #[test]
    fn pixel_ray_reprojects_into_pixel() {
        let c = cam();
        let r = c.pixel_ray(10, 77);
        let p = c.project(&(r * 3.0)).unwrap();
        assert_eq!(p.pixel(), (10, 77));
    }

    #[test]
    fn calibration_file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let c = CameraModel { extrinsic: forward_looking_extrinsic(Vec3::new(0.05, 0.0, 0.02)), ..cam() };
        let path = dir.path().join("calib.json");
        c.save(&path).unwrap();
        let back = CameraModel::load(&path).unwrap();
        assert!((back.extrinsic.to_matrix() - c.extrinsic.to_matrix()).abs().max() < 1e-12);
        let mut f = c.to_file();
        f.extrinsic.pop();
        assert!(CameraModel::from_file(&f).is_err());
        let mut f = c.to_file();
        f.cx = 100.0;
        assert!(CameraModel::from_file(&f).is_err());
    }
}
