//! Gauss-Newton frame-to-map registration.
//!
//! Each iteration associates every feature with its nearest map points,
//! builds the normal equations of the squared point-to-edge and
//! point-to-plane residuals with respect to a left-multiplied twist, and
//! applies `T <- exp(delta) * T`. A step that increases the cost on the
//! iteration's correspondences is halved until it does not. Outliers are
//! gated loosely until the estimate settles, then tightly; convergence is
//! only declared under the tight gate.

use nalgebra::{Matrix6, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{se3_exp, Pose, Twist, Vec3};

use super::features::FeatureSet;
use super::local_map::{LocalFeatureMap, VoxelPointSet};
use super::residual::{edge_residual_vector, plane_normal, point_jacobian, residual_edge, DEGENERACY_EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub max_iterations: usize,
    /// Stop once the applied step norm drops below this.
    pub convergence: f64,
    /// Residual gate for the first iterations (m).
    pub outlier_gate: f64,
    /// Residual gate once the estimate has settled (m).
    pub tight_gate: f64,
    /// Switch to `tight_gate` after this many iterations at the latest...
    pub tighten_after: usize,
    /// ...or as soon as a step is shorter than this.
    pub tighten_step: f64,
    /// While loose, the gate is this multiple of the median absolute
    /// residual, kept within `[tight_gate, outlier_gate]`; 0 disables.
    pub median_gate_scale: f64,
    /// Map neighbours farther than this from the query invalidate it (m).
    pub max_neighbor_distance: f64,
    pub min_map_edges: usize,
    pub min_map_planars: usize,
    /// Fewer inlier correspondences than this is degenerate.
    pub min_correspondences: usize,
    pub max_halvings: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            convergence: 1e-6,
            outlier_gate: 1.0,
            tight_gate: 0.03,
            tighten_after: 8,
            tighten_step: 0.01,
            median_gate_scale: 3.0,
            max_neighbor_distance: 1.0,
            min_map_edges: 10,
            min_map_planars: 30,
            min_correspondences: 12,
            max_halvings: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Edge([Vec3; 2]),
    Plane([Vec3; 3]),
}

/// One feature paired with its map support points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// Feature position in the sensor frame.
    pub source: Vec3,
    pub support: Support,
    /// Residual at the pose used for association (m; signed for planes).
    pub residual: f64,
    pub valid: bool,
}

impl Correspondence {
    /// Residual of the source transformed by `pose`, `None` if degenerate.
    pub fn residual_at(&self, pose: &Pose) -> Option<f64> {
        let q = pose.transform_point(&self.source);
        match &self.support {
            Support::Edge([a, b]) => residual_edge(&q, a, b),
            Support::Plane([a, b, c]) => plane_normal(a, b, c).map(|n| (q - a).dot(&n)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    /// Cost of the iteration's correspondences before the step.
    pub cost_before: f64,
    /// Cost of the same correspondences after the accepted step.
    pub cost_after: f64,
    pub step_norm: f64,
    pub halvings: usize,
    pub edge_inliers: usize,
    pub planar_inliers: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RegistrationDiagnostics {
    pub iterations: usize,
    /// Sum of squared residuals over the last iteration's inliers.
    pub final_cost: f64,
    pub edge_inliers: usize,
    pub planar_inliers: usize,
    pub converged: bool,
    pub trace: Vec<IterationTrace>,
}

fn neighbours<const K: usize>(set: &VoxelPointSet, q: &Vec3, max_dist: f64) -> Option<[Vec3; K]> {
    if set.len() < K {
        return None;
    }
    let knn = set.tree().knn_search(q, K);
    if knn.indices.len() < K || knn.distances_sq.iter().any(|&d| d > max_dist * max_dist) {
        return None;
    }
    let pts = set.points();
    Some(std::array::from_fn(|i| pts[knn.indices[i]]))
}

/// Associates every feature of `features`, transformed by `pose`, with the
/// map. Correspondences whose support is degenerate, too far away or whose
/// residual exceeds `gate` are returned with `valid == false`.
pub fn associate(
    features: &FeatureSet,
    map: &LocalFeatureMap,
    pose: &Pose,
    gate: f64,
    max_neighbor_distance: f64,
) -> Vec<Correspondence> {
    let edges = features.edges.par_iter().map(|f| {
        let q = pose.transform_point(&f.position);
        match neighbours::<2>(&map.edges, &q, max_neighbor_distance) {
            Some(s) => {
                let r = residual_edge(&q, &s[0], &s[1]);
                Correspondence {
                    source: f.position,
                    support: Support::Edge(s),
                    residual: r.unwrap_or(f64::NAN),
                    valid: r.is_some_and(|r| r <= gate),
                }
            }
            None => Correspondence {
                source: f.position,
                support: Support::Edge([q, q]),
                residual: f64::NAN,
                valid: false,
            },
        }
    });
    let planes = features.planars.par_iter().map(|f| {
        let q = pose.transform_point(&f.position);
        match neighbours::<3>(&map.planars, &q, max_neighbor_distance) {
            Some(s) => {
                let r = plane_normal(&s[0], &s[1], &s[2]).map(|n| (q - s[0]).dot(&n));
                Correspondence {
                    source: f.position,
                    support: Support::Plane(s),
                    residual: r.unwrap_or(f64::NAN),
                    valid: r.is_some_and(|r| r.abs() <= gate),
                }
            }
            None => Correspondence {
                source: f.position,
                support: Support::Plane([q, q, q]),
                residual: f64::NAN,
                valid: false,
            },
        }
    });
    edges.chain(planes).collect()
}

/// Re-gates `corr` at `scale` times the median absolute residual of the
/// currently valid correspondences, clamped to `[lo, hi]`. Returns the gate.
fn apply_median_gate(corr: &mut [Correspondence], scale: f64, lo: f64, hi: f64) -> f64 {
    let mut abs: Vec<f64> = corr.iter().filter(|c| c.valid).map(|c| c.residual.abs()).collect();
    if abs.is_empty() {
        return hi;
    }
    let mid = abs.len() / 2;
    let (_, median, _) = abs.select_nth_unstable_by(mid, f64::total_cmp);
    let gate = (scale * *median).clamp(lo, hi);
    for c in corr.iter_mut().filter(|c| c.valid) {
        c.valid = c.residual.abs() <= gate;
    }
    gate
}

/// Sum of squared residuals of the valid correspondences at `pose`.
pub fn correspondence_cost(corr: &[Correspondence], pose: &Pose) -> f64 {
    corr.iter()
        .filter(|c| c.valid)
        .filter_map(|c| c.residual_at(pose))
        .map(|r| r * r)
        .sum()
}

fn normal_equations(corr: &[Correspondence], pose: &Pose) -> (Matrix6<f64>, Vector6<f64>) {
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for c in corr.iter().filter(|c| c.valid) {
        let q = pose.transform_point(&c.source);
        match &c.support {
            Support::Edge([a, b]) => {
                if let Some((w, j)) = edge_residual_vector(&q, a, b) {
                    h += j.transpose() * j;
                    g += j.transpose() * w;
                }
            }
            Support::Plane([a, b, c3]) => {
                if let Some(n) = plane_normal(a, b, c3) {
                    let r = (q - a).dot(&n);
                    let j = n.transpose() * point_jacobian(&q);
                    h += j.transpose() * j;
                    g += j.transpose() * r;
                }
            }
        }
    }
    (h, g)
}

fn solve(h: &Matrix6<f64>, g: &Vector6<f64>) -> Option<Vector6<f64>> {
    let rhs = -g;
    if let Some(ch) = h.cholesky() {
        return Some(ch.solve(&rhs));
    }
    // rank-deficient geometry: a tiny ridge keeps the unconstrained
    // directions at zero instead of failing outright
    let ridge = DEGENERACY_EPS * h.trace().max(1.0);
    (h + Matrix6::identity() * ridge).cholesky().map(|ch| ch.solve(&rhs))
}

/// Registers `features` (sensor frame) against `map` (world frame) starting
/// from `init`.
pub fn estimate_pose(
    features: &FeatureSet,
    map: &LocalFeatureMap,
    init: &Pose,
    cfg: &RegistrationConfig,
) -> Result<(Pose, RegistrationDiagnostics)> {
    if !init.is_finite() {
        return Err(Error::InvalidArgument("initial pose is not finite".into()));
    }
    if map.edges.len() < cfg.min_map_edges || map.planars.len() < cfg.min_map_planars {
        return Err(Error::DegenerateRegistration {
            reason: format!(
                "map has {} edge and {} planar points, need {} and {}",
                map.edges.len(),
                map.planars.len(),
                cfg.min_map_edges,
                cfg.min_map_planars
            ),
            init: *init,
        });
    }
    let mut pose = *init;
    let mut diag = RegistrationDiagnostics::default();
    let mut tight = false;
    for it in 0..cfg.max_iterations {
        tight |= it >= cfg.tighten_after;
        let gate = if tight { cfg.tight_gate } else { cfg.outlier_gate };
        let mut corr = associate(features, map, &pose, gate, cfg.max_neighbor_distance);
        if !tight && cfg.median_gate_scale > 0.0 {
            apply_median_gate(&mut corr, cfg.median_gate_scale, cfg.tight_gate, cfg.outlier_gate);
        }
        let n_edges = features.edges.len();
        let edge_inliers = corr[..n_edges].iter().filter(|c| c.valid).count();
        let planar_inliers = corr[n_edges..].iter().filter(|c| c.valid).count();
        if edge_inliers + planar_inliers < cfg.min_correspondences {
            return Err(Error::DegenerateRegistration {
                reason: format!(
                    "iteration {it}: {edge_inliers} edge and {planar_inliers} planar inliers, need {}",
                    cfg.min_correspondences
                ),
                init: *init,
            });
        }
        let cost = correspondence_cost(&corr, &pose);
        let (h, g) = normal_equations(&corr, &pose);
        let delta = solve(&h, &g)
            .filter(|d| d.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::SolverFailure(format!("iteration {it}: normal equations have no finite solution")))?;

        let mut step = delta;
        let mut halvings = 0;
        let (mut next, mut next_cost) = loop {
            let cand = se3_exp(&Twist::from_vector(&step)) * pose;
            let c = correspondence_cost(&corr, &cand);
            if c <= cost || halvings == cfg.max_halvings {
                break (cand, c);
            }
            step *= 0.5;
            halvings += 1;
        };
        if next_cost > cost {
            // no descent direction at this precision: stay put
            next = pose;
            next_cost = cost;
            step = Vector6::zeros();
        }
        pose = next;
        diag.iterations = it + 1;
        diag.final_cost = next_cost;
        diag.edge_inliers = edge_inliers;
        diag.planar_inliers = planar_inliers;
        diag.trace.push(IterationTrace {
            cost_before: cost,
            cost_after: next_cost,
            step_norm: step.norm(),
            halvings,
            edge_inliers,
            planar_inliers,
        });
        if step.norm() < cfg.convergence {
            if tight {
                diag.converged = true;
                break;
            }
            tight = true;
        } else if step.norm() < cfg.tighten_step {
            tight = true;
        }
    }
    Ok((pose, diag))
}

/// True iff the motion from `last_keyframe` to `current` exceeds either
/// threshold (strictly).
pub fn is_keyframe(current: &Pose, last_keyframe: &Pose, t_thresh: f64, r_thresh: f64) -> bool {
    let rel = last_keyframe.inverse() * *current;
    rel.translation.norm() > t_thresh || rel.rotation_angle() > r_thresh
}

/// Constant-velocity prediction from the previous two poses.
pub fn predict_pose(prev: &Pose, last: &Pose) -> Pose {
    *last * (prev.inverse() * *last)
}
