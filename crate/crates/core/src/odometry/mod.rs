//! Frame-to-map LiDAR odometry on edge and planar features.

pub mod features;
pub mod local_map;
pub mod registration;
pub mod residual;
pub mod tracker;

pub use features::{compute_smoothness, extract_features, FeatureConfig, FeatureKind, FeaturePoint, FeatureSet};
pub use local_map::{update_local_map, LocalFeatureMap, LocalMapConfig};
pub use residual::{residual_edge, residual_plane, DEGENERACY_EPS};
pub use registration::{estimate_pose, is_keyframe, predict_pose, Correspondence, RegistrationConfig, RegistrationDiagnostics};
pub use tracker::{KeyframeConfig, Odometry, OdometryConfig, OdometryFrame};
