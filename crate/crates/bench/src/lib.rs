//! Shared fixtures for the benchmarks.

use mmslam::mask::{dilate, flatten_dynamic};
use mmslam::odometry::{extract_features, FeatureSet, LocalFeatureMap};
use mmslam::sim::{SceneConfig, SimFrame, Simulator};
use mmslam::{CameraModel, DynamicMaskImage, PipelineConfig, Result};

/// A few frames of the default scene (20k points per scan) with the
/// default pipeline configuration.
pub struct Fixture {
    pub frames: Vec<SimFrame>,
    pub camera: CameraModel,
    pub config: PipelineConfig,
}

impl Fixture {
    pub fn new(n: u64) -> Result<Self> {
        let sim = Simulator::new(SceneConfig::default())?;
        let frames = (0..n).map(|k| sim.frame(k)).collect::<Result<_>>()?;
        Ok(Self {
            frames,
            camera: sim.camera().clone(),
            config: PipelineConfig::default(),
        })
    }

    /// Flattened, dilated dynamic mask of frame `k`.
    pub fn mask(&self, k: usize) -> Result<DynamicMaskImage> {
        let filter = self.config.class_filter()?;
        Ok(dilate(&flatten_dynamic(&self.frames[k].segmentation, &filter), self.config.dilation_radius))
    }

    pub fn features(&self, k: usize) -> Result<FeatureSet> {
        extract_features(&self.frames[k].cloud, &self.config.odometry.features)
    }

    /// Local map holding frame `k`'s features at its true pose.
    pub fn local_map(&self, k: usize) -> Result<LocalFeatureMap> {
        let mut map = LocalFeatureMap::new(self.config.odometry.local_map.clone());
        map.update(&self.features(k)?, &self.frames[k].pose);
        Ok(map)
    }
}
