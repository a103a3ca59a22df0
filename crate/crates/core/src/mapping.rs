//! Global static map and per-frame dynamic map.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::cloud::{Label, Point, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::voxel::{voxel_key, VoxelAccumulator, VoxelKey};

/// Keyframe-gated, voxel-filtered, colored map of static points in the
/// world frame. Each voxel holds the centroid of everything inserted into it.
#[derive(Debug, Clone)]
pub struct GlobalStaticMap {
    leaf: f64,
    slots: HashMap<VoxelKey, usize>,
    cells: Vec<VoxelAccumulator>,
    keyframes: usize,
}

impl GlobalStaticMap {
    pub fn new(leaf: f64) -> Result<Self> {
        if !(leaf > 0.0 && leaf.is_finite()) {
            return Err(Error::InvalidArgument(format!("map leaf size must be positive, got {leaf}")));
        }
        Ok(Self {
            leaf,
            slots: HashMap::new(),
            cells: Vec::new(),
            keyframes: 0,
        })
    }

    pub fn leaf(&self) -> f64 {
        self.leaf
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn keyframes(&self) -> usize {
        self.keyframes
    }

    pub fn contains_voxel(&self, key: &VoxelKey) -> bool {
        self.slots.contains_key(key)
    }

    /// Inserts the sensor-frame static cloud at `pose` if `keyframe` is set.
    /// With a camera and image, in-view points take the color of the pixel
    /// they project to; other points keep their own color. Points labeled
    /// dynamic are never inserted. Returns whether the map changed.
    pub fn update(
        &mut self,
        cloud: &PointCloud,
        pose: &Pose,
        keyframe: bool,
        colour: Option<(&CameraModel, &RgbImage)>,
    ) -> Result<bool> {
        if !pose.is_finite() {
            return Err(Error::InvalidArgument("static map update with non-finite pose".into()));
        }
        if !keyframe {
            return Ok(false);
        }
        for p in cloud.points.iter().filter(|p| !p.label.is_dynamic()) {
            let mut q = *p;
            if let Some((cam, img)) = colour {
                if let Some(px) = cam.project(&p.position) {
                    let (u, v) = px.pixel();
                    if (u as u32) < img.width() && (v as u32) < img.height() {
                        q.color = Some(img.get_pixel(u as u32, v as u32).0);
                    }
                }
            }
            q.position = pose.transform_point(&p.position);
            q.label = Label::Static;
            let key = voxel_key(&q.position, self.leaf);
            let slot = *self.slots.entry(key).or_insert_with(|| {
                self.cells.push(VoxelAccumulator::default());
                self.cells.len() - 1
            });
            self.cells[slot].add(&q);
        }
        self.keyframes += 1;
        Ok(true)
    }

    /// Snapshot of the map as a cloud, one point per voxel in insertion
    /// order.
    pub fn to_cloud(&self) -> PointCloud {
        let mut c = PointCloud::new(0, 0.0);
        c.points = self
            .cells
            .iter()
            .enumerate()
            .map(|(i, a)| a.to_point(i as u32))
            .collect();
        c
    }
}

/// Axis-aligned world-frame box around one dynamic object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicObjectBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
    /// Majority class of the member points, when known.
    pub class_id: Option<u32>,
    /// Instance tag the members carried.
    pub instance: Option<u32>,
    pub frame_id: u64,
    pub points: usize,
}

impl DynamicObjectBox {
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| self.min[i] <= p[i] && p[i] <= self.max[i])
    }
}

/// Dynamic points of the current frame only, in the world frame.
#[derive(Debug, Clone, Default)]
pub struct DynamicMap {
    pub frame_id: u64,
    pub cloud: PointCloud,
    pub boxes: Vec<DynamicObjectBox>,
}

/// Builds this frame's dynamic map. Points are grouped by their dynamic
/// instance tag (untagged dynamic points form one group); `class_of`
/// gives the class of a sensor-frame point and the box takes the majority
/// (smallest id on ties).
pub fn update_dynamic_map<F>(dynamic: &PointCloud, pose: &Pose, class_of: F) -> DynamicMap
where
    F: Fn(&Point) -> Option<u32>,
{
    struct Group {
        min: Vec3,
        max: Vec3,
        n: usize,
        votes: BTreeMap<u32, usize>,
    }
    let mut groups: BTreeMap<Option<u32>, Group> = BTreeMap::new();
    let mut cloud = PointCloud::new(dynamic.frame_id, dynamic.timestamp);
    for p in dynamic.points.iter() {
        let Label::Dynamic(tag) = p.label else { continue };
        let w = pose.transform_point(&p.position);
        let g = groups.entry(tag).or_insert(Group {
            min: w,
            max: w,
            n: 0,
            votes: BTreeMap::new(),
        });
        g.min = g.min.inf(&w);
        g.max = g.max.sup(&w);
        g.n += 1;
        if let Some(c) = class_of(p) {
            *g.votes.entry(c).or_default() += 1;
        }
        cloud.points.push(Point { position: w, ..*p });
    }
    let boxes = groups
        .into_iter()
        .map(|(tag, g)| {
            let best = g.votes.iter().map(|(&c, &n)| (n, std::cmp::Reverse(c))).max();
            DynamicObjectBox {
                min: [g.min.x, g.min.y, g.min.z],
                max: [g.max.x, g.max.y, g.max.z],
                class_id: best.map(|(_, std::cmp::Reverse(c))| c),
                instance: tag,
                frame_id: dynamic.frame_id,
                points: g.n,
            }
        })
        .collect();
    DynamicMap {
        frame_id: dynamic.frame_id,
        cloud,
        boxes,
    }
}

pub fn write_boxes(path: &Path, boxes: &[DynamicObjectBox]) -> Result<()> {
    let text = serde_json::to_string_pretty(boxes).expect("boxes serialize");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_boxes(path: &Path) -> Result<Vec<DynamicObjectBox>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
}
