use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::Pose;

use super::features::{extract_features, FeatureConfig, FeatureSet};
use super::local_map::{LocalFeatureMap, LocalMapConfig};
use super::registration::{estimate_pose, is_keyframe, predict_pose, RegistrationConfig, RegistrationDiagnostics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyframeConfig {
    pub translation: f64,
    pub rotation_deg: f64,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        Self {
            translation: 0.3,
            rotation_deg: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdometryConfig {
    pub features: FeatureConfig,
    pub registration: RegistrationConfig,
    pub local_map: LocalMapConfig,
    pub keyframe: KeyframeConfig,
}

#[derive(Debug)]
pub struct OdometryFrame {
    pub frame_id: u64,
    pub pose: Pose,
    pub keyframe: bool,
    pub edge_features: usize,
    pub planar_features: usize,
    /// `None` for the first frame and for failed registrations.
    pub diagnostics: Option<RegistrationDiagnostics>,
    /// Registration failure; `pose` is then the prediction.
    pub error: Option<Error>,
}

/// Incremental frame-to-map odometry. Frames must be fed in order.
#[derive(Debug, Clone)]
pub struct Odometry {
    cfg: OdometryConfig,
    map: LocalFeatureMap,
    prev: Option<Pose>,
    last: Option<Pose>,
    last_keyframe: Option<Pose>,
}

impl Odometry {
    pub fn new(cfg: OdometryConfig) -> Self {
        Self {
            map: LocalFeatureMap::new(cfg.local_map.clone()),
            cfg,
            prev: None,
            last: None,
            last_keyframe: None,
        }
    }

    pub fn config(&self) -> &OdometryConfig {
        &self.cfg
    }

    pub fn local_map(&self) -> &LocalFeatureMap {
        &self.map
    }

    /// Pose the next frame's registration would start from.
    pub fn predicted(&self) -> Pose {
        match (self.prev, self.last) {
            (Some(p), Some(l)) => predict_pose(&p, &l),
            (None, Some(l)) => l,
            _ => Pose::identity(),
        }
    }

    /// Extracts features from a static-only cloud and registers them.
    /// Invalid input (dynamic points in the cloud) is an error; registration
    /// failures are reported in the returned frame and the predicted pose
    /// is used so the run can continue.
    pub fn process(&mut self, static_cloud: &PointCloud) -> Result<OdometryFrame> {
        let features = extract_features(static_cloud, &self.cfg.features)?;
        Ok(self.process_features(&features))
    }

    /// Advances past a frame that could not be processed: the prediction
    /// becomes its pose and the local map is left untouched.
    pub fn skip(&mut self) -> Pose {
        let pose = self.predicted();
        self.prev = self.last;
        self.last = Some(pose);
        pose
    }

    pub fn process_features(&mut self, features: &FeatureSet) -> OdometryFrame {
        let init = self.predicted();
        let (pose, diagnostics, error) = if self.last.is_none() {
            (init, None, None)
        } else {
            match estimate_pose(features, &self.map, &init, &self.cfg.registration) {
                Ok((p, d)) => (p, Some(d), None),
                Err(e) => (init, None, Some(e)),
            }
        };
        let keyframe = error.is_none()
            && match &self.last_keyframe {
            None => true,
            Some(kf) => is_keyframe(
                &pose,
                kf,
                self.cfg.keyframe.translation,
                self.cfg.keyframe.rotation_deg.to_radians(),
            ),
            };
        if keyframe {
            self.last_keyframe = Some(pose);
        }
        if error.is_none() {
            self.map.update(features, &pose);
        }
        self.prev = self.last;
        self.last = Some(pose);
        OdometryFrame {
            frame_id: features.frame_id,
            pose,
            keyframe,
            edge_features: features.edges.len(),
            planar_features: features.planars.len(),
            diagnostics,
            error,
        }
    }
}
