use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::cloud_io::write_cloud;
use crate::dataset::{write_labels, DatasetLayout};
use crate::error::{Error, Result};
use crate::mask_io::write_segmentation;
use crate::trajectory::{write_tum, StampedPose};

use super::degrade::degrade_frame;
use super::{SceneConfig, SimFrame, Simulator};

/// Frames generated in parallel per batch; bounds peak memory.
const BATCH: usize = 32;

fn write_frame(layout: &DatasetLayout, sim: &Simulator, f: &SimFrame) -> Result<()> {
    let cfg = sim.config();
    write_cloud(&layout.frame(f.frame_id), &f.cloud)?;
    write_labels(&layout.labels(f.frame_id), &f.gt_labels)?;
    let seg = degrade_frame(&f.segmentation, &cfg.degradation, cfg.seed, sim.registry());
    write_segmentation(&layout.mask(f.frame_id), &seg)?;
    let img = layout.image(f.frame_id);
    f.image
        .save(&img)
        .map_err(|e| Error::Dataset(format!("{}: {e}", img.display())))
}

/// Generates the scene and writes the full dataset layout under `out`.
/// Masks are degraded with the scene's `degradation` settings.
pub fn write_dataset(cfg: &SceneConfig, out: &Path) -> Result<Vec<StampedPose>> {
    let sim = Simulator::new(cfg.clone())?;
    let layout = DatasetLayout::new(out);
    layout.create_dirs()?;
    sim.camera().save(&layout.calib())?;
    let scene = out.join("scene.toml");
    fs::write(&scene, cfg.to_toml()).map_err(|e| Error::io(&scene, e))?;

    let ids: Vec<u64> = (0..cfg.frames as u64).collect();
    for chunk in ids.chunks(BATCH) {
        chunk
            .par_iter()
            .map(|&k| sim.frame(k).and_then(|f| write_frame(&layout, &sim, &f)))
            .collect::<Result<Vec<()>>>()?;
    }

    let gt: Vec<StampedPose> = ids
        .iter()
        .map(|&k| StampedPose {
            timestamp: sim.time(k),
            pose: sim.pose(k),
        })
        .collect();
    write_tum(&layout.groundtruth(), &gt)?;
    let mut ts = String::new();
    for g in &gt {
        writeln!(ts, "{:.6}", g.timestamp).unwrap();
    }
    let ts_path = layout.timestamps();
    fs::write(&ts_path, ts).map_err(|e| Error::io(&ts_path, e))?;
    Ok(gt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::mask::ClassRegistry;

    fn tiny() -> SceneConfig {
        let mut cfg = SceneConfig { frames: 3, ..Default::default() };
        cfg.sensor.points_per_scan = 2000;
        cfg.sensor.rings = 20;
        cfg.camera.width = 80;
        cfg.camera.height = 60;
        cfg.camera.fx = 50.0;
        cfg.camera.fy = 50.0;
        cfg
    }

    fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        for sub in ["", "frames", "masks", "images", "labels"] {
            let mut entries: Vec<_> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_file()).collect();
            entries.sort();
            for p in entries {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
        out
    }

    #[test]
    fn written_dataset_is_readable_and_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_dataset(&tiny(), a.path()).unwrap();
        write_dataset(&tiny(), b.path()).unwrap();
        assert_eq!(read_all(a.path()), read_all(b.path()));

        let ds = Dataset::open(a.path()).unwrap();
        assert_eq!(ds.frame_ids, vec![0, 1, 2]);
        let sim = Simulator::new(tiny()).unwrap();
        let f = sim.frame(2).unwrap();
        let c = ds.cloud(2).unwrap();
        assert_eq!(c.len(), f.cloud.len());
        assert!((c.timestamp - 0.2).abs() < 1e-12);
        assert_eq!(ds.gt_labels(2).unwrap(), f.gt_labels);
        assert_eq!(ds.segmentation(2, &ClassRegistry::default()).unwrap(), f.segmentation);
        assert_eq!(ds.image(2).unwrap().unwrap(), f.image);
        assert_eq!(ds.groundtruth().unwrap().unwrap().len(), 3);
    }
}
