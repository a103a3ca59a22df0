//! Camera/LiDAR semantic fusion.
//!
//! Points are first labelled by projecting them into the dilated dynamic
//! mask. The cloud is then clustered in Euclidean space and the labels are
//! refined per cluster:
//!
//! 1. a cluster is dynamic when at least `dyn_threshold` of its members
//!    were labelled dynamic,
//! 2. every point within `relabel_radius` of a dynamic cluster becomes
//!    dynamic,
//! 3. every other point becomes static, whatever its initial label,
//! 4. all members of a dynamic cluster are dynamic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::cloud::{Label, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::index::KdTree;
use crate::mask::DynamicMaskImage;
use crate::voxel::voxel_downsample_with_assignment;

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Member indices into the clustered cloud, ascending.
    pub indices: Vec<usize>,
    pub dynamic_fraction: f64,
    pub centroid: Vec3,
    /// Final verdict, set by [`fuse_labels`].
    pub dynamic: bool,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub dynamic: PointCloud,
    pub static_cloud: PointCloud,
    pub clusters: Vec<Cluster>,
    /// Final label of each input point.
    pub labels: Vec<Label>,
    /// Dynamic cluster (index into `clusters`) responsible for each final
    /// dynamic point.
    pub owner: Vec<Option<usize>>,
}

/// Initial labels from the 2D mask: in-view points on set pixels are
/// dynamic, everything else static.
pub fn label_points(cloud: &PointCloud, mask: &DynamicMaskImage, cam: &CameraModel) -> Result<PointCloud> {
    if mask.width() != cam.width || mask.height() != cam.height {
        return Err(Error::InvalidArgument(format!(
            "mask is {}x{} but camera resolution is {}x{}",
            mask.width(),
            mask.height(),
            cam.width,
            cam.height
        )));
    }
    let mut out = cloud.clone();
    for p in &mut out.points {
        let hit = cam.project(&p.position).is_some_and(|proj| {
            let (x, y) = proj.pixel();
            mask.get(x, y)
        });
        p.label = if hit { Label::Dynamic(None) } else { Label::Static };
    }
    Ok(out)
}

/// Connected components of the graph joining points at distance
/// `<= tolerance`, keeping components with `min_size..=max_size` members.
/// Sorted by descending size, ties by smallest member index.
pub fn euclidean_cluster(cloud: &PointCloud, tolerance: f64, min_size: usize, max_size: usize) -> Result<Vec<Cluster>> {
    if !(tolerance > 0.0) || min_size == 0 || min_size > max_size {
        return Err(Error::InvalidArgument(format!(
            "cluster tolerance {tolerance}, size range {min_size}..={max_size}"
        )));
    }
    let positions = cloud.positions();
    let tree = KdTree::new(&positions);
    let mut visited = vec![false; positions.len()];
    let mut clusters = Vec::new();
    let mut queue = Vec::new();
    for seed in 0..positions.len() {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.clear();
        queue.push(seed);
        let mut head = 0;
        while head < queue.len() {
            let i = queue[head];
            head += 1;
            tree.radius_visit(&positions[i], tolerance, |j, _| {
                if !visited[j] {
                    visited[j] = true;
                    queue.push(j);
                }
            });
        }
        if (min_size..=max_size).contains(&queue.len()) {
            let mut indices = queue.clone();
            indices.sort_unstable();
            clusters.push(make_cluster(cloud, indices));
        }
    }
    clusters.sort_by(|a, b| b.len().cmp(&a.len()).then(a.indices[0].cmp(&b.indices[0])));
    Ok(clusters)
}

fn make_cluster(cloud: &PointCloud, indices: Vec<usize>) -> Cluster {
    let n = indices.len() as f64;
    let dyn_count = indices
        .iter()
        .filter(|&&i| cloud.points[i].label.is_dynamic())
        .count();
    let centroid = indices
        .iter()
        .fold(Vec3::zeros(), |acc, &i| acc + cloud.points[i].position)
        / n;
    Cluster {
        indices,
        dynamic_fraction: dyn_count as f64 / n,
        centroid,
        dynamic: false,
    }
}

/// Applies the cluster-level label fusion rules.
pub fn fuse_labels(
    cloud: &PointCloud,
    clusters: &[Cluster],
    relabel_radius: f64,
    dyn_threshold: f64,
) -> Result<FusionOutput> {
    if !(dyn_threshold > 0.0 && dyn_threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "dynamic threshold must lie in (0, 1], got {dyn_threshold}"
        )));
    }
    if !(relabel_radius >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "relabel radius must be non-negative, got {relabel_radius}"
        )));
    }
    let mut clusters = clusters.to_vec();
    let mut owner: Vec<Option<usize>> = vec![None; cloud.len()];
    let mut dyn_positions = Vec::new();
    let mut dyn_owner = Vec::new();
    for (ci, c) in clusters.iter_mut().enumerate() {
        c.dynamic = c.dynamic_fraction >= dyn_threshold;
        if c.dynamic {
            for &i in &c.indices {
                owner[i] = Some(ci);
                dyn_positions.push(cloud.points[i].position);
                dyn_owner.push(ci);
            }
        }
    }

    if !dyn_positions.is_empty() {
        let tree = KdTree::new(&dyn_positions);
        let near: Vec<Option<usize>> = cloud
            .points
            .par_iter()
            .zip(owner.par_iter())
            .map(|(p, own)| {
                if own.is_some() {
                    return *own;
                }
                tree.nearest_within(&p.position, relabel_radius).map(|(j, _)| dyn_owner[j])
            })
            .collect();
        owner = near;
    }

    let labels: Vec<Label> = owner
        .iter()
        .map(|o| match o {
            Some(ci) => Label::Dynamic(Some(*ci as u32)),
            None => Label::Static,
        })
        .collect();
    let (dynamic, static_cloud) = split_by_labels(cloud, &labels);
    Ok(FusionOutput {
        dynamic,
        static_cloud,
        clusters,
        labels,
        owner,
    })
}

/// Partitions a cloud into `(dynamic, static)` using `labels`, which also
/// replace the stored point labels.
pub fn split_by_labels(cloud: &PointCloud, labels: &[Label]) -> (PointCloud, PointCloud) {
    let mut dynamic = PointCloud::new(cloud.frame_id, cloud.timestamp);
    let mut stat = PointCloud::new(cloud.frame_id, cloud.timestamp);
    for (p, &l) in cloud.points.iter().zip(labels) {
        let mut q = *p;
        q.label = l;
        if l.is_dynamic() {
            dynamic.points.push(q);
        } else {
            stat.points.push(q);
        }
    }
    (dynamic, stat)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionParams {
    /// Leaf size of the cloud that is clustered.
    pub cluster_leaf: f64,
    pub tolerance: f64,
    pub min_size: usize,
    pub max_size: usize,
    pub relabel_radius: f64,
    pub dyn_threshold: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            cluster_leaf: 0.15,
            tolerance: 0.3,
            min_size: 20,
            max_size: 50_000,
            relabel_radius: 0.3,
            dyn_threshold: 0.9,
        }
    }
}

/// Full-resolution result of fusing one frame.
#[derive(Debug, Clone)]
pub struct FrameFusion {
    pub initial_dynamic: usize,
    /// Final label per input point.
    pub labels: Vec<Label>,
    /// Dynamic cluster owning each final dynamic point.
    pub owner: Vec<Option<usize>>,
    pub dynamic: PointCloud,
    pub static_cloud: PointCloud,
    /// The downsampled cloud that was clustered, with initial labels.
    pub clustered: PointCloud,
    pub clusters: Vec<Cluster>,
}

/// Label, downsample, cluster, fuse, then propagate the verdicts back to
/// every input point through the voxel it fell into.
pub fn fuse_frame(
    cloud: &PointCloud,
    mask: &DynamicMaskImage,
    cam: &CameraModel,
    params: &FusionParams,
) -> Result<FrameFusion> {
    let initial = label_points(cloud, mask, cam)?;
    let initial_dynamic = initial.count_dynamic();
    let (small, voxel_of) = voxel_downsample_with_assignment(&initial, params.cluster_leaf)?;
    let clusters = euclidean_cluster(&small, params.tolerance, params.min_size, params.max_size)?;
    let fused = fuse_labels(&small, &clusters, params.relabel_radius, params.dyn_threshold)?;

    // each point inherits the verdict of its own voxel's centroid
    let owner: Vec<Option<usize>> = voxel_of.iter().map(|&v| fused.owner[v as usize]).collect();
    let labels: Vec<Label> = owner
        .iter()
        .map(|o| match o {
            Some(ci) => Label::Dynamic(Some(*ci as u32)),
            None => Label::Static,
        })
        .collect();
    let (dynamic, static_cloud) = split_by_labels(cloud, &labels);
    Ok(FrameFusion {
        initial_dynamic,
        labels,
        owner,
        dynamic,
        static_cloud,
        clustered: small,
        clusters: fused.clusters,
    })
}
