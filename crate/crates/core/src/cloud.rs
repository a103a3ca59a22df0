//! Point and point-cloud types.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

pub type Rgb = [u8; 3];

/// Per-point semantic state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Label {
    #[default]
    Unlabeled,
    Static,
    /// Moving-object point, optionally tagged with the instance it belongs to.
    Dynamic(Option<u32>),
}

impl Label {
    pub fn is_dynamic(&self) -> bool {
        matches!(self, Label::Dynamic(_))
    }

    /// Byte encoding used by the cloud and ground-truth label files:
    /// `0` unlabeled, `1` static, `2` dynamic without instance, `3 + k`
    /// dynamic instance `k` (instances above 252 collapse to `2`).
    pub fn to_byte(self) -> u8 {
        match self {
            Label::Unlabeled => 0,
            Label::Static => 1,
            Label::Dynamic(Some(k)) if k <= 252 => 3 + k as u8,
            Label::Dynamic(_) => 2,
        }
    }

    pub fn from_byte(b: u8) -> Self {
        match b {
            0 => Label::Unlabeled,
            1 => Label::Static,
            2 => Label::Dynamic(None),
            k => Label::Dynamic(Some(u32::from(k - 3))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub position: Vec3,
    pub color: Option<Rgb>,
    pub label: Label,
    /// Frame-local id; stable through filtering and transforms.
    pub scan_index: u32,
}

impl Point {
    pub fn new(position: Vec3) -> Self {
        Self {
            position,
            color: None,
            label: Label::Unlabeled,
            scan_index: 0,
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = label;
        self
    }

    pub fn with_color(mut self, color: Rgb) -> Self {
        self.color = Some(color);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub frame_id: u64,
    pub timestamp: f64,
}

impl PointCloud {
    pub fn new(frame_id: u64, timestamp: f64) -> Self {
        Self {
            points: Vec::new(),
            frame_id,
            timestamp,
        }
    }

    /// Builds a cloud from bare positions, numbering points in order.
    pub fn from_positions<I: IntoIterator<Item = Vec3>>(positions: I) -> Self {
        let points = positions
            .into_iter()
            .enumerate()
            .map(|(i, p)| Point {
                scan_index: i as u32,
                ..Point::new(p)
            })
            .collect();
        Self {
            points,
            frame_id: 0,
            timestamp: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }

    /// Re-numbers `scan_index` to match the storage order.
    pub fn reindex(&mut self) {
        for (i, p) in self.points.iter_mut().enumerate() {
            p.scan_index = i as u32;
        }
    }

    /// Checks that every position component is finite.
    pub fn validate(&self) -> Result<()> {
        match self
            .points
            .iter()
            .position(|p| !p.position.iter().all(|c| c.is_finite()))
        {
            Some(i) => Err(Error::InvalidArgument(format!(
                "frame {}: point {i} has a non-finite coordinate",
                self.frame_id
            ))),
            None => Ok(()),
        }
    }

    /// Sub-cloud of points matching `pred`, keeping frame metadata.
    pub fn filter<F: Fn(&Point) -> bool>(&self, pred: F) -> PointCloud {
        PointCloud {
            points: self.points.iter().filter(|p| pred(p)).copied().collect(),
            frame_id: self.frame_id,
            timestamp: self.timestamp,
        }
    }

    pub fn count_dynamic(&self) -> usize {
        self.points.iter().filter(|p| p.label.is_dynamic()).count()
    }
}

/// Applies `pose` to every position; all other point attributes are kept.
pub fn transform_cloud(pose: &Pose, cloud: &PointCloud) -> PointCloud {
    let r = pose.rotation_matrix();
    let t = pose.translation;
    PointCloud {
        points: cloud
            .points
            .iter()
            .map(|p| Point {
                position: r * p.position + t,
                ..*p
            })
            .collect(),
        frame_id: cloud.frame_id,
        timestamp: cloud.timestamp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{se3_exp, Twist};
    use proptest::prelude::*;

    #[test]
    fn label_byte_round_trip() {
        for b in 0..=255u8 {
            assert_eq!(Label::from_byte(b).to_byte(), b);
        }
        assert_eq!(Label::Dynamic(Some(1000)).to_byte(), 2);
    }

    #[test]
    fn identity_transform_keeps_cloud() {
        let mut c = PointCloud::from_positions([Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 0.0)]);
        c.points[1].label = Label::Dynamic(Some(4));
        c.points[0].color = Some([1, 2, 3]);
        assert_eq!(transform_cloud(&Pose::identity(), &c), c);
    }

    #[test]
    fn translation_moves_origin() {
        let c = PointCloud::from_positions([Vec3::zeros()]);
        let out = transform_cloud(&Pose::from_translation(Vec3::new(1.0, 0.0, 0.0)), &c);
        assert_eq!(out.points[0].position, Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn validate_rejects_nan() {
        let c = PointCloud::from_positions([Vec3::new(f64::NAN, 0.0, 0.0)]);
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn round_trip_and_rigidity(
            w in prop::array::uniform3(-1.5f64..1.5),
            v in prop::array::uniform3(-3.0f64..3.0),
            pts in prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 2..40),
        ) {
            let pose = se3_exp(&Twist::new(Vec3::from(w), Vec3::from(v)));
            let cloud = PointCloud::from_positions(pts.iter().map(|p| Vec3::from(*p)));
            let moved = transform_cloud(&pose, &cloud);
            let back = transform_cloud(&pose.inverse(), &moved);
            for (a, b) in cloud.points.iter().zip(&back.points) {
                prop_assert!((a.position - b.position).norm() < 1e-9);
                prop_assert_eq!(a.scan_index, b.scan_index);
            }
            for i in 0..cloud.len() {
                for j in (i + 1)..cloud.len() {
                    let d0 = (cloud.points[i].position - cloud.points[j].position).norm();
                    let d1 = (moved.points[i].position - moved.points[j].position).norm();
                    prop_assert!((d0 - d1).abs() < 1e-9);
                }
            }
        }
    }
}
