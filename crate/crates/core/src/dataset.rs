//! On-disk dataset layout.
//!
//! ```text
//! calib.json               camera intrinsics and sensor-to-camera extrinsic
//! frames/NNNNNN.mmpc       sensor-frame scans
//! masks/NNNNNN.png|.json   16-bit instance ids plus metadata
//! images/NNNNNN.png        optional RGB images used to color the map
//! labels/NNNNNN.bin        optional per-point ground-truth label bytes
//! groundtruth.txt          optional TUM trajectory
//! timestamps.txt           optional, one stamp per frame
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::camera::CameraModel;
use crate::cloud::{Label, PointCloud};
use crate::cloud_io::read_cloud;
use crate::error::{Error, Result};
use crate::mask::{ClassRegistry, SegmentationResult};
use crate::mask_io::load_segmentation;
use crate::trajectory::{read_tum, StampedPose};

#[derive(Debug, Clone)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn calib(&self) -> PathBuf {
        self.root.join("calib.json")
    }

    pub fn groundtruth(&self) -> PathBuf {
        self.root.join("groundtruth.txt")
    }

    pub fn timestamps(&self) -> PathBuf {
        self.root.join("timestamps.txt")
    }

    pub fn frame(&self, k: u64) -> PathBuf {
        self.root.join("frames").join(format!("{k:06}.mmpc"))
    }

    pub fn mask(&self, k: u64) -> PathBuf {
        self.root.join("masks").join(format!("{k:06}.png"))
    }

    pub fn image(&self, k: u64) -> PathBuf {
        self.root.join("images").join(format!("{k:06}.png"))
    }

    pub fn labels(&self, k: u64) -> PathBuf {
        self.root.join("labels").join(format!("{k:06}.bin"))
    }

    pub fn create_dirs(&self) -> Result<()> {
        for d in ["frames", "masks", "images", "labels"] {
            let p = self.root.join(d);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

pub fn write_labels(path: &Path, labels: &[Label]) -> Result<()> {
    let bytes: Vec<u8> = labels.iter().map(|l| l.to_byte()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<Label>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(bytes.into_iter().map(Label::from_byte).collect())
}

/// An opened dataset: calibration plus the sorted list of frame ids.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub layout: DatasetLayout,
    pub camera: CameraModel,
    pub frame_ids: Vec<u64>,
    pub timestamps: Vec<f64>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let layout = DatasetLayout::new(root);
        let camera = CameraModel::load(&layout.calib())?;
        let dir = root.join("frames");
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut frame_ids = Vec::new();
        for e in entries {
            let path = e.map_err(|e| Error::io(&dir, e))?.path();
            if path.extension().and_then(|s| s.to_str()) != Some("mmpc") {
                continue;
            }
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(|| Error::Dataset(format!("frame file name is not a number: {}", path.display())))?;
            frame_ids.push(id);
        }
        frame_ids.sort_unstable();
        if frame_ids.is_empty() {
            return Err(Error::Dataset(format!("no frames in {}", dir.display())));
        }
        let ts_path = layout.timestamps();
        let timestamps = if ts_path.exists() {
            let text = fs::read_to_string(&ts_path).map_err(|e| Error::io(&ts_path, e))?;
            let ts: Vec<f64> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| l.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Dataset(format!("{}: {e}", ts_path.display())))?;
            if ts.len() != frame_ids.len() {
                return Err(Error::Dataset(format!(
                    "{} has {} stamps for {} frames",
                    ts_path.display(),
                    ts.len(),
                    frame_ids.len()
                )));
            }
            ts
        } else {
            frame_ids.iter().map(|&k| k as f64).collect()
        };
        Ok(Self {
            layout,
            camera,
            frame_ids,
            timestamps,
        })
    }

    pub fn len(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_ids.is_empty()
    }

    /// Scan `i` (position in `frame_ids`) with its id and stamp set.
    pub fn cloud(&self, i: usize) -> Result<PointCloud> {
        let k = self.frame_ids[i];
        let mut c = read_cloud(&self.layout.frame(k))?;
        c.frame_id = k;
        c.timestamp = self.timestamps[i];
        Ok(c)
    }

    pub fn segmentation(&self, i: usize, registry: &ClassRegistry) -> Result<SegmentationResult> {
        let k = self.frame_ids[i];
        let seg = load_segmentation(&self.layout.mask(k), registry)?;
        if seg.width != self.camera.width || seg.height != self.camera.height {
            return Err(Error::Segmentation {
                frame: k,
                instance: None,
                reason: format!(
                    "mask is {}x{} but the camera is {}x{}",
                    seg.width, seg.height, self.camera.width, self.camera.height
                ),
            });
        }
        Ok(seg)
    }

    /// The frame's RGB image, if the dataset has one.
    pub fn image(&self, i: usize) -> Result<Option<RgbImage>> {
        let path = self.layout.image(self.frame_ids[i]);
        if !path.exists() {
            return Ok(None);
        }
        let img = image::open(&path)
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?
            .into_rgb8();
        Ok(Some(img))
    }

    pub fn gt_labels(&self, i: usize) -> Result<Vec<Label>> {
        read_labels(&self.layout.labels(self.frame_ids[i]))
    }

    pub fn groundtruth(&self) -> Result<Option<Vec<StampedPose>>> {
        let p = self.layout.groundtruth();
        if p.exists() {
            read_tum(&p).map(Some)
        } else {
            Ok(None)
        }
    }
}
