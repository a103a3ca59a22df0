//! End-to-end processing: label, fuse, register, map.
//!
//! Loading, mask decoding and fusion of upcoming frames run on a producer
//! thread while odometry and map updates consume frames strictly in order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::thread;
use std::time::Instant;

use image::RgbImage;
use serde::Serialize;

use crate::camera::CameraModel;
use crate::cloud::{Label, PointCloud};
use crate::cloud_io::write_cloud;
use crate::config::{Mode, PipelineConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fusion::{fuse_frame, label_points, split_by_labels, FusionParams};
use crate::geometry::Pose;
use crate::mapping::{update_dynamic_map, write_boxes, DynamicMap, DynamicObjectBox, GlobalStaticMap};
use crate::mask::{dilate, BinaryImage, ClassRegistry, DynamicClassFilter, SegmentationResult};
use crate::odometry::{Odometry, RegistrationDiagnostics};
use crate::trajectory::{write_tum, StampedPose};

/// A cloud split into the part used for odometry and the dynamic part.
#[derive(Debug, Clone)]
pub struct Separation {
    /// Final label of every input point.
    pub labels: Vec<Label>,
    pub static_cloud: PointCloud,
    pub dynamic: PointCloud,
    /// Points the (dilated) mask marked dynamic before any fusion.
    pub initial_dynamic: usize,
    pub dynamic_clusters: usize,
}

/// Stateless per-frame labeling for one mode.
#[derive(Debug, Clone)]
pub struct Separator {
    pub mode: Mode,
    pub dilation_radius: usize,
    pub filter: DynamicClassFilter,
    pub fusion: FusionParams,
    pub camera: CameraModel,
}

impl Separator {
    pub fn new(cfg: &PipelineConfig, camera: CameraModel) -> Result<Self> {
        Ok(Self {
            mode: cfg.mode,
            dilation_radius: cfg.dilation_radius,
            filter: cfg.class_filter()?,
            fusion: cfg.fusion.clone(),
            camera,
        })
    }

    /// Dilated bitmaps of the accepted instances, with their ids.
    fn dilated_instances(&self, seg: &SegmentationResult) -> Vec<(u32, BinaryImage)> {
        seg.instances
            .iter()
            .filter(|i| self.filter.accepts(i))
            .map(|i| (i.id, dilate(&i.bitmap, self.dilation_radius)))
            .collect()
    }

    pub fn separate(&self, cloud: &PointCloud, seg: Option<&SegmentationResult>) -> Result<Separation> {
        if self.mode == Mode::None {
            let labels = vec![Label::Static; cloud.len()];
            let (dynamic, static_cloud) = split_by_labels(cloud, &labels);
            return Ok(Separation {
                labels,
                static_cloud,
                dynamic,
                initial_dynamic: 0,
                dynamic_clusters: 0,
            });
        }
        let seg = seg.ok_or_else(|| Error::Segmentation {
            frame: cloud.frame_id,
            instance: None,
            reason: format!("mode {} needs a segmentation", self.mode),
        })?;
        let instances = self.dilated_instances(seg);
        let mut mask = BinaryImage::new(self.camera.width, self.camera.height);
        for (_, b) in &instances {
            if !mask.same_size(b) {
                return Err(Error::Segmentation {
                    frame: cloud.frame_id,
                    instance: None,
                    reason: "mask size differs from the camera resolution".into(),
                });
            }
            mask.union_with(b);
        }
        match self.mode {
            Mode::Vision => {
                let initial = label_points(cloud, &mask, &self.camera)?;
                let labels: Vec<Label> = initial
                    .points
                    .iter()
                    .map(|p| {
                        if !p.label.is_dynamic() {
                            return Label::Static;
                        }
                        let tag = self.camera.project(&p.position).and_then(|pr| {
                            let (x, y) = pr.pixel();
                            instances.iter().find(|(_, b)| b.get(x, y)).map(|(id, _)| *id)
                        });
                        Label::Dynamic(tag)
                    })
                    .collect();
                let initial_dynamic = initial.count_dynamic();
                let (dynamic, static_cloud) = split_by_labels(cloud, &labels);
                Ok(Separation {
                    labels,
                    static_cloud,
                    dynamic,
                    initial_dynamic,
                    dynamic_clusters: instances.len(),
                })
            }
            _ => {
                let f = fuse_frame(cloud, &mask, &self.camera, &self.fusion)?;
                Ok(Separation {
                    dynamic_clusters: f.clusters.iter().filter(|c| c.dynamic).count(),
                    labels: f.labels,
                    static_cloud: f.static_cloud,
                    dynamic: f.dynamic,
                    initial_dynamic: f.initial_dynamic,
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub load_ms: f64,
    pub segment_ms: f64,
    pub fuse_ms: f64,
    pub odometry_ms: f64,
    pub map_ms: f64,
}

impl StageTimings {
    pub fn total_ms(&self) -> f64 {
        self.load_ms + self.segment_ms + self.fuse_ms + self.odometry_ms + self.map_ms
    }

    fn add(&mut self, o: &StageTimings) {
        self.load_ms += o.load_ms;
        self.segment_ms += o.segment_ms;
        self.fuse_ms += o.fuse_ms;
        self.odometry_ms += o.odometry_ms;
        self.map_ms += o.map_ms;
    }

    fn scaled(&self, s: f64) -> StageTimings {
        StageTimings {
            load_ms: self.load_ms * s,
            segment_ms: self.segment_ms * s,
            fuse_ms: self.fuse_ms * s,
            odometry_ms: self.odometry_ms * s,
            map_ms: self.map_ms * s,
        }
    }
}

/// Everything a frame needs after separation.
#[derive(Debug)]
pub struct PreparedFrame {
    pub cloud: PointCloud,
    pub segmentation: Option<SegmentationResult>,
    pub image: Option<RgbImage>,
    pub separation: Separation,
}

#[derive(Debug, Clone)]
pub struct FrameReport {
    pub frame_id: u64,
    pub timestamp: f64,
    pub pose: Pose,
    pub keyframe: bool,
    pub edge_features: usize,
    pub planar_features: usize,
    pub diagnostics: Option<RegistrationDiagnostics>,
    pub dynamic_points: usize,
    pub boxes: Vec<DynamicObjectBox>,
    pub timings: StageTimings,
    /// Why the frame failed; its pose is then the motion prediction.
    pub error: Option<String>,
}

/// Odometry and map state, fed in frame order.
pub struct Pipeline {
    separator: Separator,
    odometry: Odometry,
    static_map: GlobalStaticMap,
    dynamic_map: DynamicMap,
}

impl Pipeline {
    pub fn new(cfg: &PipelineConfig, camera: CameraModel) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            separator: Separator::new(cfg, camera)?,
            odometry: Odometry::new(cfg.odometry.clone()),
            static_map: GlobalStaticMap::new(cfg.map_leaf)?,
            dynamic_map: DynamicMap::default(),
        })
    }

    pub fn separator(&self) -> &Separator {
        &self.separator
    }

    pub fn static_map(&self) -> &GlobalStaticMap {
        &self.static_map
    }

    pub fn dynamic_map(&self) -> &DynamicMap {
        &self.dynamic_map
    }

    pub fn odometry(&self) -> &Odometry {
        &self.odometry
    }

    /// Separates and integrates one in-memory frame.
    pub fn process(
        &mut self,
        cloud: PointCloud,
        segmentation: Option<SegmentationResult>,
        image: Option<RgbImage>,
    ) -> FrameReport {
        let (frame_id, timestamp) = (cloud.frame_id, cloud.timestamp);
        let t = Instant::now();
        let prepared = self.separator.separate(&cloud, segmentation.as_ref()).map(|separation| PreparedFrame {
            cloud,
            segmentation,
            image,
            separation,
        });
        let timings = StageTimings {
            fuse_ms: ms(t),
            ..Default::default()
        };
        self.integrate(frame_id, timestamp, prepared, timings)
    }

    pub fn integrate(
        &mut self,
        frame_id: u64,
        timestamp: f64,
        prepared: Result<PreparedFrame>,
        mut timings: StageTimings,
    ) -> FrameReport {
        let mut report = FrameReport {
            frame_id,
            timestamp,
            pose: Pose::identity(),
            keyframe: false,
            edge_features: 0,
            planar_features: 0,
            diagnostics: None,
            dynamic_points: 0,
            boxes: Vec::new(),
            timings,
            error: None,
        };
        let frame = match prepared {
            Ok(f) => f,
            Err(e) => {
                report.pose = self.odometry.skip();
                report.error = Some(e.to_string());
                self.dynamic_map = DynamicMap::default();
                return report;
            }
        };
        let t = Instant::now();
        let odo = match self.odometry.process(&frame.separation.static_cloud) {
            Ok(o) => o,
            Err(e) => {
                report.pose = self.odometry.skip();
                report.error = Some(e.to_string());
                return report;
            }
        };
        timings.odometry_ms = ms(t);
        report.pose = odo.pose;
        report.keyframe = odo.keyframe;
        report.edge_features = odo.edge_features;
        report.planar_features = odo.planar_features;
        report.diagnostics = odo.diagnostics;
        report.error = odo.error.map(|e| e.to_string());
        report.dynamic_points = frame.separation.dynamic.len();

        let t = Instant::now();
        if report.error.is_none() {
            let colour = frame.image.as_ref().map(|img| (&self.separator.camera, img));
            // a finite pose was checked by the odometry, so this cannot fail
            let _ = self
                .static_map
                .update(&frame.separation.static_cloud, &odo.pose, odo.keyframe, colour);
        }
        let cam = &self.separator.camera;
        let seg = frame.segmentation.as_ref();
        self.dynamic_map = update_dynamic_map(&frame.separation.dynamic, &odo.pose, |p| {
            let s = seg?;
            let (x, y) = cam.project(&p.position)?.pixel();
            s.class_at(x, y)
        });
        report.boxes = self.dynamic_map.boxes.clone();
        timings.map_ms = ms(t);
        report.timings = timings;
        report
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Loads frame `i` and separates it.
fn prepare(ds: &Dataset, sep: &Separator, registry: &ClassRegistry, i: usize) -> (Result<PreparedFrame>, StageTimings) {
    let mut tm = StageTimings::default();
    let t = Instant::now();
    let loaded = ds.cloud(i).and_then(|c| Ok((c, ds.image(i)?)));
    tm.load_ms = ms(t);
    let (cloud, image) = match loaded {
        Ok(v) => v,
        Err(e) => return (Err(e), tm),
    };
    let t = Instant::now();
    let segmentation = if sep.mode == Mode::None {
        None
    } else {
        match ds.segmentation(i, registry) {
            Ok(s) => Some(s),
            Err(e) => return (Err(e), tm),
        }
    };
    tm.segment_ms = ms(t);
    let t = Instant::now();
    let res = sep.separate(&cloud, segmentation.as_ref()).map(|separation| PreparedFrame {
        cloud,
        segmentation,
        image,
        separation,
    });
    tm.fuse_ms = ms(t);
    (res, tm)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub frames: usize,
    pub keyframes: usize,
    pub failed: Vec<(u64, String)>,
    pub static_map_points: usize,
    pub mean_timings: StageTimings,
    pub wall_seconds: f64,
}

impl RunSummary {
    pub fn hz(&self) -> f64 {
        self.frames as f64 / self.wall_seconds.max(1e-9)
    }
}

/// Runs every frame of `ds`, calling `sink` on each report in order.
pub fn run_frames<F>(ds: &Dataset, cfg: &PipelineConfig, mut sink: F) -> Result<(RunSummary, Pipeline)>
where
    F: FnMut(&FrameReport) -> Result<()> + Send,
{
    let registry = cfg.registry()?;
    let mut pipeline = Pipeline::new(cfg, ds.camera.clone())?;
    let sep = pipeline.separator().clone();
    let start = Instant::now();
    let mut summary = RunSummary {
        frames: ds.len(),
        keyframes: 0,
        failed: Vec::new(),
        static_map_points: 0,
        mean_timings: StageTimings::default(),
        wall_seconds: 0.0,
    };
    let mut total = StageTimings::default();
    let mut handle = |i: usize, prepared: Result<PreparedFrame>, tm: StageTimings| -> Result<()> {
        let report = pipeline.integrate(ds.frame_ids[i], ds.timestamps[i], prepared, tm);
        total.add(&report.timings);
        summary.keyframes += usize::from(report.keyframe);
        if let Some(e) = &report.error {
            summary.failed.push((report.frame_id, e.clone()));
        }
        sink(&report)
    };
    if thread::available_parallelism().map_or(1, |n| n.get()) > 1 {
        // loading and separation of the next frames overlap odometry
        thread::scope(|scope| -> Result<()> {
            let (tx, rx) = sync_channel(4);
            let (sep, registry) = (&sep, &registry);
            scope.spawn(move || {
                for i in 0..ds.len() {
                    if tx.send((i, prepare(ds, sep, registry, i))).is_err() {
                        break;
                    }
                }
            });
            for (i, (prepared, tm)) in rx {
                handle(i, prepared, tm)?;
            }
            Ok(())
        })?;
    } else {
        // One core: a second thread only adds contention, and running on a
        // private single-worker pool keeps parallel loops inline.
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| -> Result<()> {
            for i in 0..ds.len() {
                let (prepared, tm) = prepare(ds, &sep, &registry, i);
                handle(i, prepared, tm)?;
            }
            Ok(())
        })?;
    }
    summary.wall_seconds = start.elapsed().as_secs_f64();
    summary.mean_timings = total.scaled(1.0 / ds.len().max(1) as f64);
    summary.static_map_points = pipeline.static_map().len();
    Ok((summary, pipeline))
}

const DIAGNOSTICS_HEADER: &str =
    "frame,timestamp,status,iterations,cost,edge_inliers,planar_inliers,edge_features,planar_features,dynamic_points,boxes,keyframe";

fn diagnostics_row(r: &FrameReport) -> String {
    let d = r.diagnostics.clone().unwrap_or_default();
    format!(
        "{},{:.6},{},{},{:.9e},{},{},{},{},{},{},{}",
        r.frame_id,
        r.timestamp,
        if r.error.is_some() { "failed" } else { "ok" },
        d.iterations,
        d.final_cost,
        d.edge_inliers,
        d.planar_inliers,
        r.edge_features,
        r.planar_features,
        r.dynamic_points,
        r.boxes.len(),
        u8::from(r.keyframe)
    )
}

/// Output files written by [`run_dataset`].
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub trajectory: PathBuf,
    pub diagnostics: PathBuf,
    pub timings: PathBuf,
    pub static_map: PathBuf,
    pub static_map_ascii: PathBuf,
    pub boxes_dir: PathBuf,
}

impl RunOutputs {
    pub fn new(out: &Path) -> Self {
        Self {
            trajectory: out.join("trajectory.txt"),
            diagnostics: out.join("diagnostics.csv"),
            timings: out.join("timings.csv"),
            static_map: out.join("static_map.mmpc"),
            static_map_ascii: out.join("static_map.xyz"),
            boxes_dir: out.join("boxes"),
        }
    }
}

/// Runs the dataset at `dataset_dir` and writes all outputs under `out`.
pub fn run_dataset(dataset_dir: &Path, cfg: &PipelineConfig, out: &Path) -> Result<RunSummary> {
    let ds = Dataset::open(dataset_dir)?;
    let paths = RunOutputs::new(out);
    fs::create_dir_all(&paths.boxes_dir).map_err(|e| Error::io(&paths.boxes_dir, e))?;
    let mut traj = Vec::with_capacity(ds.len());
    let mut diag = format!("{DIAGNOSTICS_HEADER}\n");
    let mut timing = String::from("frame,load_ms,segment_ms,fuse_ms,odometry_ms,map_ms\n");
    let (summary, pipeline) = run_frames(&ds, cfg, |r| {
        traj.push(StampedPose {
            timestamp: r.timestamp,
            pose: r.pose,
        });
        diag.push_str(&diagnostics_row(r));
        diag.push('\n');
        let t = &r.timings;
        writeln!(
            timing,
            "{},{:.3},{:.3},{:.3},{:.3},{:.3}",
            r.frame_id, t.load_ms, t.segment_ms, t.fuse_ms, t.odometry_ms, t.map_ms
        )
        .unwrap();
        write_boxes(&paths.boxes_dir.join(format!("{:06}.json", r.frame_id)), &r.boxes)
    })?;
    write_tum(&paths.trajectory, &traj)?;
    fs::write(&paths.diagnostics, diag).map_err(|e| Error::io(&paths.diagnostics, e))?;
    fs::write(&paths.timings, timing).map_err(|e| Error::io(&paths.timings, e))?;
    let map = pipeline.static_map().to_cloud();
    write_cloud(&paths.static_map, &map)?;
    write_cloud(&paths.static_map_ascii, &map)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub frames: usize,
    pub points_per_frame: f64,
    pub mean_timings: StageTimings,
    pub wall_seconds: f64,
    pub hz: f64,
}

/// Runs the dataset without writing anything and reports throughput.
pub fn bench_dataset(dataset_dir: &Path, cfg: &PipelineConfig) -> Result<BenchReport> {
    let ds = Dataset::open(dataset_dir)?;
    let mut points = 0usize;
    let (summary, _) = run_frames(&ds, cfg, |r| {
        points += r.edge_features + r.planar_features;
        Ok(())
    })?;
    let points_per_frame = (0..ds.len().min(5))
        .map(|i| ds.cloud(i).map(|c| c.len()))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .sum::<usize>() as f64
        / ds.len().min(5) as f64;
    Ok(BenchReport {
        frames: summary.frames,
        points_per_frame,
        mean_timings: summary.mean_timings,
        wall_seconds: summary.wall_seconds,
        hz: summary.hz(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{write_dataset, SceneConfig};

    fn small_scene(frames: usize) -> SceneConfig {
        let mut cfg = SceneConfig { frames, ..Default::default() };
        cfg.sensor.points_per_scan = 8000;
        cfg.sensor.rings = 40;
        cfg
    }

    #[test]
    fn none_mode_keeps_everything_static() {
        let cam = small_scene(1).camera.model().unwrap();
        let sep = Separator::new(&PipelineConfig { mode: Mode::None, ..Default::default() }, cam).unwrap();
        let c = PointCloud::from_positions((0..10).map(|i| crate::geometry::Vec3::new(i as f64, 1.0, 0.0)));
        let s = sep.separate(&c, None).unwrap();
        assert_eq!(s.static_cloud.len(), 10);
        assert!(s.dynamic.is_empty());
    }

    #[test]
    fn vision_mode_needs_masks() {
        let cam = small_scene(1).camera.model().unwrap();
        let sep = Separator::new(&PipelineConfig { mode: Mode::Vision, ..Default::default() }, cam).unwrap();
        assert!(matches!(sep.separate(&PointCloud::default(), None), Err(Error::Segmentation { .. })));
    }

    #[test]
    fn run_writes_outputs_and_is_repeatable() {
        let data = tempfile::tempdir().unwrap();
        write_dataset(&small_scene(6), data.path()).unwrap();
        let cfg = PipelineConfig::default();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let s = run_dataset(data.path(), &cfg, a.path()).unwrap();
        run_dataset(data.path(), &cfg, b.path()).unwrap();
        assert!(s.failed.is_empty(), "{:?}", s.failed);
        assert_eq!(s.frames, 6);
        for f in ["trajectory.txt", "diagnostics.csv", "static_map.mmpc", "static_map.xyz", "boxes/000003.json"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let diag = fs::read_to_string(a.path().join("diagnostics.csv")).unwrap();
        assert_eq!(diag.lines().count(), 7);
        let boxes = crate::mapping::read_boxes(&a.path().join("boxes/000003.json")).unwrap();
        assert_eq!(boxes.len(), 1);
        assert_eq!(boxes[0].class_id, Some(0));
    }

    #[test]
    fn missing_mask_fails_only_that_frame() {
        let data = tempfile::tempdir().unwrap();
        write_dataset(&small_scene(4), data.path()).unwrap();
        fs::remove_file(data.path().join("masks/000002.json")).unwrap();
        let out = tempfile::tempdir().unwrap();
        let s = run_dataset(data.path(), &PipelineConfig::default(), out.path()).unwrap();
        assert_eq!(s.failed.iter().map(|f| f.0).collect::<Vec<_>>(), vec![2]);
        // none mode does not read masks
        let s = run_dataset(data.path(), &PipelineConfig { mode: Mode::None, ..Default::default() }, out.path()).unwrap();
        assert!(s.failed.is_empty());
    }
}
