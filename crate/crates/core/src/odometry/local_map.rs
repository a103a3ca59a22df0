//! Sliding-window edge and planar feature maps.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{Pose, Vec3};
use crate::index::KdTree;
use crate::voxel::{voxel_key, VoxelKey};

use super::features::FeatureSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalMapConfig {
    /// Voxel size of both feature maps (m).
    pub leaf: f64,
    /// Points farther than this from the current position are evicted (m).
    pub window_radius: f64,
}

impl Default for LocalMapConfig {
    fn default() -> Self {
        Self {
            leaf: 0.05,
            window_radius: 20.0,
        }
    }
}

/// Voxel-filtered point set with a k-d tree over the voxel centroids.
/// Slots keep insertion order so queries are reproducible.
#[derive(Debug, Clone)]
pub struct VoxelPointSet {
    leaf: f64,
    slots: HashMap<VoxelKey, usize>,
    cells: Vec<(VoxelKey, Vec3, u32)>,
    points: Vec<Vec3>,
    tree: KdTree,
}

impl VoxelPointSet {
    pub fn new(leaf: f64) -> Self {
        Self {
            leaf,
            slots: HashMap::new(),
            cells: Vec::new(),
            points: Vec::new(),
            tree: KdTree::new(&[]),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }

    fn insert(&mut self, p: Vec3) {
        let key = voxel_key(&p, self.leaf);
        match self.slots.get(&key) {
            Some(&s) => {
                let cell = &mut self.cells[s];
                cell.1 += p;
                cell.2 += 1;
            }
            None => {
                self.slots.insert(key, self.cells.len());
                self.cells.push((key, p, 1));
            }
        }
    }

    fn evict_outside(&mut self, center: &Vec3, radius: f64) {
        let r2 = radius * radius;
        let before = self.cells.len();
        self.cells
            .retain(|(_, sum, n)| (sum / f64::from(*n) - center).norm_squared() <= r2);
        if self.cells.len() != before {
            self.slots = self
                .cells
                .iter()
                .enumerate()
                .map(|(i, (k, _, _))| (*k, i))
                .collect();
        }
    }

    fn rebuild(&mut self) {
        self.points = self
            .cells
            .iter()
            .map(|(_, sum, n)| sum / f64::from(*n))
            .collect();
        self.tree = KdTree::new(&self.points);
    }
}

#[derive(Debug, Clone)]
pub struct LocalFeatureMap {
    config: LocalMapConfig,
    pub edges: VoxelPointSet,
    pub planars: VoxelPointSet,
}

impl LocalFeatureMap {
    pub fn new(config: LocalMapConfig) -> Self {
        Self {
            edges: VoxelPointSet::new(config.leaf),
            planars: VoxelPointSet::new(config.leaf),
            config,
        }
    }

    pub fn config(&self) -> &LocalMapConfig {
        &self.config
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty() && self.planars.is_empty()
    }

    pub fn len(&self) -> usize {
        self.edges.len() + self.planars.len()
    }

    /// Inserts `features` observed at `pose`, evicts everything outside the
    /// window around the pose and rebuilds both indices.
    pub fn update(&mut self, features: &FeatureSet, pose: &Pose) {
        for f in &features.edges {
            self.edges.insert(pose.transform_point(&f.position));
        }
        for f in &features.planars {
            self.planars.insert(pose.transform_point(&f.position));
        }
        let c = pose.translation;
        self.edges.evict_outside(&c, self.config.window_radius);
        self.planars.evict_outside(&c, self.config.window_radius);
        self.edges.rebuild();
        self.planars.rebuild();
    }
}

/// Free-function form of [`LocalFeatureMap::update`].
pub fn update_local_map(mut map: LocalFeatureMap, features: &FeatureSet, pose: &Pose) -> LocalFeatureMap {
    map.update(features, pose);
    map
}
