//! Deterministic synthetic scenes: ray-cast LiDAR scans, rendered camera
//! images with exact instance silhouettes, and ground truth.

pub mod dataset;
pub mod degrade;
pub mod scene;

use image::{Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::camera::CameraModel;
use crate::cloud::{Label, Point, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::mask::{BinaryImage, ClassRegistry, InstanceMask, SegmentationResult};

pub use dataset::write_dataset;
pub use degrade::{degrade_frame, degrade_masks, MaskDegradation};
pub use scene::{Primitive, SceneConfig, Snapshot, Surface};

/// Independent random streams derived from the scene seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngStream {
    RangeNoise = 1,
    Degradation = 2,
    Perturbation = 3,
}

/// Generator for `(seed, purpose, frame)`; streams never overlap.
pub fn frame_rng(seed: u64, stream: RngStream, frame: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(stream as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(frame);
    rng
}

/// One generated frame with its ground truth.
#[derive(Debug, Clone)]
pub struct SimFrame {
    pub frame_id: u64,
    pub timestamp: f64,
    /// Sensor pose in the world.
    pub pose: Pose,
    /// Sensor-frame scan, unlabeled, colored by surface.
    pub cloud: PointCloud,
    /// Per-point truth: `Dynamic(Some(object index + 1))` for moving-object
    /// returns, `Static` otherwise.
    pub gt_labels: Vec<Label>,
    pub segmentation: SegmentationResult,
    pub image: RgbImage,
}

impl SimFrame {
    pub fn gt_dynamic(&self) -> usize {
        self.gt_labels.iter().filter(|l| l.is_dynamic()).count()
    }
}

pub struct Simulator {
    cfg: SceneConfig,
    registry: ClassRegistry,
    camera: CameraModel,
    directions: Vec<Vec3>,
}

impl Simulator {
    pub fn new(cfg: SceneConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            registry: cfg.registry()?,
            camera: cfg.camera.model()?,
            directions: cfg.sensor.directions(),
            cfg,
        })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.cfg
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    pub fn registry(&self) -> &ClassRegistry {
        &self.registry
    }

    pub fn time(&self, k: u64) -> f64 {
        k as f64 / self.cfg.frame_rate
    }

    pub fn pose(&self, k: u64) -> Pose {
        self.cfg.trajectory.pose(self.time(k))
    }

    pub fn frame(&self, k: u64) -> Result<SimFrame> {
        if k as usize >= self.cfg.frames {
            return Err(Error::InvalidArgument(format!("frame {k} beyond the {} configured", self.cfg.frames)));
        }
        let t = self.time(k);
        let pose = self.pose(k);
        let snap = Snapshot::at(&self.cfg, t);
        let (cloud, gt_labels) = self.scan(&snap, &pose, k);
        let (image, segmentation) = self.render(&snap, &pose, k);
        Ok(SimFrame {
            frame_id: k,
            timestamp: t,
            pose,
            cloud,
            gt_labels,
            segmentation,
            image,
        })
    }

    fn scan(&self, snap: &Snapshot, pose: &Pose, k: u64) -> (PointCloud, Vec<Label>) {
        let s = &self.cfg.sensor;
        let mut rng = frame_rng(self.cfg.seed, RngStream::RangeNoise, k);
        let noise = Normal::new(0.0, s.range_noise).expect("validated noise");
        let mut cloud = PointCloud::new(k, self.time(k));
        let mut labels = Vec::new();
        for d in &self.directions {
            // one draw per ray keeps the stream aligned whatever is hit
            let n = noise.sample(&mut rng);
            let Some((r, surf)) = snap.cast(&pose.translation, &(pose.rotation * d)) else { continue };
            let r = r + n;
            if r < s.min_range || r > s.max_range {
                continue;
            }
            cloud.points.push(Point {
                position: d * r,
                color: Some(snap.color(surf)),
                label: Label::Unlabeled,
                scan_index: cloud.points.len() as u32,
            });
            labels.push(match surf {
                Surface::Object(i) => Label::Dynamic(Some(i as u32 + 1)),
                _ => Label::Static,
            });
        }
        (cloud, labels)
    }

    fn render(&self, snap: &Snapshot, pose: &Pose, k: u64) -> (RgbImage, SegmentationResult) {
        let cam = &self.camera;
        let cam_to_sensor = cam.extrinsic.inverse();
        let origin = pose.transform_point(&cam_to_sensor.translation);
        let rot = pose.rotation * cam_to_sensor.rotation;
        let (w, h) = (cam.width, cam.height);
        let hits: Vec<Option<Surface>> = (0..w * h)
            .into_par_iter()
            .map(|i| snap.cast(&origin, &(rot * cam.pixel_ray(i % w, i / w))).map(|(_, s)| s))
            .collect();
        let image = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            Rgb(hits[y as usize * w + x as usize].map_or([0, 0, 0], |s| snap.color(s)))
        });
        let mut seg = SegmentationResult::empty(k, w, h);
        for (i, obj) in self.cfg.objects.iter().enumerate() {
            let Some(class) = self.registry.by_id(obj.class_id).filter(|c| c.dynamic) else { continue };
            let bitmap = BinaryImage::from_fn(w, h, |x, y| hits[y * w + x] == Some(Surface::Object(i)));
            if let Some(inst) = InstanceMask::new(i as u32 + 1, class, 1.0, bitmap) {
                seg.instances.push(inst);
            }
        }
        (image, seg)
    }
}

/// Generates every configured frame (in parallel; output is independent of
/// the thread count).
pub fn generate_sequence(cfg: &SceneConfig) -> Result<Vec<SimFrame>> {
    let sim = Simulator::new(cfg.clone())?;
    (0..cfg.frames as u64).into_par_iter().map(|k| sim.frame(k)).collect()
}
