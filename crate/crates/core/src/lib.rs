//! Dynamic-environment LiDAR SLAM with camera instance-mask fusion.
//!
//! Moving objects are removed from each scan before pose estimation by
//! fusing 2D instance masks with 3D Euclidean clustering. The remaining
//! static points drive a feature-based frame-to-map odometry, a keyframe
//! gated colored static map and a per-frame dynamic-object map.
//! [`sim`] provides a deterministic synthetic data source.

pub mod camera;
pub mod cloud;
pub mod cloud_io;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod index;
pub mod mapping;
pub mod mask;
pub mod mask_io;
pub mod odometry;
pub mod pipeline;
pub mod sim;
pub mod trajectory;
pub mod voxel;

pub use camera::{project_point, CameraModel, Projection};
pub use cloud::{transform_cloud, Label, Point, PointCloud, Rgb};
pub use config::{Mode, PipelineConfig};
pub use error::{Error, Result};
pub use fusion::{euclidean_cluster, fuse_frame, fuse_labels, label_points, Cluster, FusionOutput, FusionParams};
pub use geometry::{se3_exp, se3_log, Pose, Twist, Vec3};
pub use index::{KdTree, KnnResult};
pub use mask::{dilate, erode, flatten_dynamic, BinaryImage, ClassRegistry, DynamicMaskImage, InstanceMask, SegmentationResult};
pub use mapping::{DynamicMap, DynamicObjectBox, GlobalStaticMap};
pub use odometry::{Odometry, OdometryConfig, RegistrationConfig, RegistrationDiagnostics};
pub use pipeline::{bench_dataset, run_dataset, run_frames, FrameReport, Pipeline, RunSummary, Separator};
pub use trajectory::{evaluate, DriftReport, StampedPose};
pub use voxel::voxel_downsample;
