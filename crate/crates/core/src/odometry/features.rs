//! Range-smoothness feature extraction.
//!
//! The smoothness of point `p_k` is the mean difference between its range
//! and the ranges of its neighbours within a fixed radius,
//! `sigma_k = mean_i (|p_k| - |p_i|)`, with ranges taken in the sensor
//! frame. Concave creases (room corners, wall/floor junctions, silhouettes
//! seen against their own surface) give large positive values; flat
//! surfaces give values near zero.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::index::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Edge,
    Planar,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeaturePoint {
    pub position: Vec3,
    pub smoothness: f64,
    pub kind: FeatureKind,
    /// Index of the source point in the cloud the features came from.
    pub source: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    pub frame_id: u64,
    pub edges: Vec<FeaturePoint>,
    pub planars: Vec<FeaturePoint>,
    /// Set when the input had no usable points.
    pub degenerate: bool,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.edges.len() + self.planars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty() && self.planars.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Neighbourhood radius for the smoothness (m).
    pub radius: f64,
    pub min_neighbors: usize,
    /// Points with smoothness above this are edge candidates (m).
    pub edge_threshold: f64,
    /// Points with |smoothness| below this are planar candidates (m).
    pub planar_threshold: f64,
    pub sectors: usize,
    pub max_edges_per_sector: usize,
    pub max_planars_per_sector: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            radius: 0.25,
            min_neighbors: 5,
            edge_threshold: 0.05,
            planar_threshold: 0.01,
            sectors: 6,
            max_edges_per_sector: 100,
            max_planars_per_sector: 600,
        }
    }
}

/// Per-point smoothness; `None` for points with fewer than `min_neighbors`
/// neighbours (the point itself excluded) within `radius`.
pub fn compute_smoothness(cloud: &PointCloud, radius: f64, min_neighbors: usize) -> Vec<Option<f64>> {
    let positions = cloud.positions();
    let ranges: Vec<f64> = positions.iter().map(|p| p.norm()).collect();
    let tree = KdTree::new(&positions);
    (0..positions.len())
        .into_par_iter()
        .map(|k| {
            let mut sum = 0.0;
            let mut n = 0usize;
            tree.radius_visit(&positions[k], radius, |i, _| {
                if i != k {
                    sum += ranges[k] - ranges[i];
                    n += 1;
                }
            });
            (n >= min_neighbors.max(1)).then(|| sum / n as f64)
        })
        .collect()
}

fn sector_of(p: &Vec3, sectors: usize) -> usize {
    let az = p.y.atan2(p.x);
    (((az + PI) / (2.0 * PI) * sectors as f64) as usize).min(sectors - 1)
}

/// Selects edge and planar features per azimuthal sector.
pub fn extract_features(cloud: &PointCloud, cfg: &FeatureConfig) -> Result<FeatureSet> {
    if cfg.sectors == 0 || !(cfg.radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "feature extraction needs sectors > 0 and radius > 0 (got {} and {})",
            cfg.sectors, cfg.radius
        )));
    }
    if cloud.points.iter().any(|p| p.label.is_dynamic()) {
        return Err(Error::InvalidArgument(
            "feature extraction expects a cloud without dynamic points".into(),
        ));
    }
    let mut out = FeatureSet {
        frame_id: cloud.frame_id,
        ..Default::default()
    };
    if cloud.is_empty() {
        out.degenerate = true;
        return Ok(out);
    }
    let sigma = compute_smoothness(cloud, cfg.radius, cfg.min_neighbors);
    let mut edge_cand: Vec<Vec<(f64, usize)>> = vec![Vec::new(); cfg.sectors];
    let mut plane_cand: Vec<Vec<(f64, usize)>> = vec![Vec::new(); cfg.sectors];
    for (i, s) in sigma.iter().enumerate() {
        let Some(s) = *s else { continue };
        let sec = sector_of(&cloud.points[i].position, cfg.sectors);
        if s > cfg.edge_threshold {
            edge_cand[sec].push((s, i));
        } else if s.abs() < cfg.planar_threshold {
            plane_cand[sec].push((s, i));
        }
    }
    for sec in 0..cfg.sectors {
        let edges = &mut edge_cand[sec];
        edges.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        out.edges.extend(edges.iter().take(cfg.max_edges_per_sector).map(|&(s, i)| FeaturePoint {
            position: cloud.points[i].position,
            smoothness: s,
            kind: FeatureKind::Edge,
            source: i as u32,
        }));
        let planes = &mut plane_cand[sec];
        planes.sort_by(|a, b| a.0.abs().total_cmp(&b.0.abs()).then(a.1.cmp(&b.1)));
        out.planars.extend(planes.iter().take(cfg.max_planars_per_sector).map(|&(s, i)| FeaturePoint {
            position: cloud.points[i].position,
            smoothness: s,
            kind: FeatureKind::Planar,
            source: i as u32,
        }));
    }
    out.degenerate = out.is_empty();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Label;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sphere_has_zero_smoothness() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec3> = (0..500)
            .map(|_| {
                let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                v.normalize() * 3.0
            })
            .collect();
        let s = compute_smoothness(&PointCloud::from_positions(pts), 0.8, 1);
        assert!(s.iter().flatten().all(|v| v.abs() < 1e-12));
        assert!(s.iter().filter(|v| v.is_some()).count() > 400);
    }

    #[test]
    fn two_nearer_neighbours() {
        let c = PointCloud::from_positions([Vec3::new(2.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.2, 0.6, 0.0).normalize()]);
        let s = compute_smoothness(&c, 1.5, 2);
        assert!((s[0].unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sparse_points_are_ineligible() {
        let c = PointCloud::from_positions([Vec3::new(2.0, 0.0, 0.0), Vec3::new(10.0, 0.0, 0.0)]);
        assert_eq!(compute_smoothness(&c, 0.5, 1), vec![None, None]);
    }

    #[test]
    fn matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec3> = (0..200)
            .map(|_| Vec3::new(rng.random_range(1.0..3.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)))
            .collect();
        let got = compute_smoothness(&PointCloud::from_positions(pts.clone()), 0.4, 3);
        for k in 0..pts.len() {
            let nb: Vec<usize> = (0..pts.len()).filter(|&i| i != k && (pts[i] - pts[k]).norm() <= 0.4).collect();
            let want = (nb.len() >= 3).then(|| nb.iter().map(|&i| pts[k].norm() - pts[i].norm()).sum::<f64>() / nb.len() as f64);
            match (got[k], want) {
                (Some(g), Some(w)) => assert!((g - w).abs() <= 1e-9 * w.abs().max(1e-9) + 1e-15),
                (g, w) => assert_eq!(g.is_some(), w.is_some()),
            }
        }
    }

    fn plane_scan() -> PointCloud {
        // floor patch 1.5 m below the sensor
        let mut pts = Vec::new();
        for i in 0..60 {
            for j in 0..60 {
                pts.push(Vec3::new(2.0 + i as f64 * 0.05, -1.5 + j as f64 * 0.05, -1.5));
            }
        }
        let mut c = PointCloud::from_positions(pts);
        c.points.iter_mut().for_each(|p| p.label = Label::Static);
        c
    }

    #[test]
    fn plane_interior_has_no_edges() {
        // the patch border is a range discontinuity and may yield edges
        let cfg = FeatureConfig::default();
        let f = extract_features(&plane_scan(), &cfg).unwrap();
        let inner = |p: &Vec3| p.x > 2.0 + cfg.radius && p.x < 4.95 - cfg.radius && p.y.abs() < 1.45 - cfg.radius;
        assert!(f.edges.iter().all(|e| !inner(&e.position)));
        assert!(!f.planars.is_empty());
    }

    #[test]
    fn caps_are_respected() {
        let cfg = FeatureConfig { max_edges_per_sector: 2, max_planars_per_sector: 3, edge_threshold: -1.0, planar_threshold: 10.0, ..Default::default() };
        let f = extract_features(&plane_scan(), &cfg).unwrap();
        assert!(f.edges.len() <= 2 * cfg.sectors);
        assert!(f.planars.is_empty() || f.planars.len() <= 3 * cfg.sectors);
    }

    #[test]
    fn empty_cloud_is_degenerate() {
        let f = extract_features(&PointCloud::default(), &FeatureConfig::default()).unwrap();
        assert!(f.degenerate && f.is_empty());
    }

    #[test]
    fn dynamic_points_rejected() {
        let mut c = plane_scan();
        c.points[0].label = Label::Dynamic(None);
        assert!(extract_features(&c, &FeatureConfig::default()).is_err());
    }
}
