//! Voxel-grid centroid filtering.

use std::collections::HashMap;

use crate::cloud::{Label, Point, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub type VoxelKey = [i64; 3];

#[inline]
pub fn voxel_key(p: &Vec3, leaf: f64) -> VoxelKey {
    [
        (p.x / leaf).floor() as i64,
        (p.y / leaf).floor() as i64,
        (p.z / leaf).floor() as i64,
    ]
}

/// Running sums for one voxel.
#[derive(Debug, Clone, Default)]
pub struct VoxelAccumulator {
    pub sum: Vec3,
    pub count: u32,
    pub color_sum: [u64; 3],
    pub color_count: u32,
    pub dynamic: bool,
    /// Instance tag of the first dynamic member, if any.
    pub instance: Option<u32>,
    /// Smallest scan index among the members.
    pub first_index: u32,
}

impl VoxelAccumulator {
    pub fn add(&mut self, p: &Point) {
        if self.count == 0 {
            self.first_index = p.scan_index;
        } else {
            self.first_index = self.first_index.min(p.scan_index);
        }
        self.sum += p.position;
        self.count += 1;
        if let Some(c) = p.color {
            for (s, v) in self.color_sum.iter_mut().zip(c) {
                *s += u64::from(v);
            }
            self.color_count += 1;
        }
        if let Label::Dynamic(inst) = p.label {
            if !self.dynamic {
                self.instance = inst;
            }
            self.dynamic = true;
        }
    }

    pub fn centroid(&self) -> Vec3 {
        self.sum / f64::from(self.count)
    }

    pub fn color(&self) -> Option<[u8; 3]> {
        (self.color_count > 0).then(|| {
            let n = u64::from(self.color_count);
            self.color_sum.map(|s| ((s + n / 2) / n) as u8)
        })
    }

    pub fn label(&self) -> Label {
        if self.dynamic {
            Label::Dynamic(self.instance)
        } else {
            Label::Static
        }
    }

    pub fn to_point(&self, scan_index: u32) -> Point {
        Point {
            position: self.centroid(),
            color: self.color(),
            label: self.label(),
            scan_index,
        }
    }
}

/// One output point per occupied voxel at the centroid of its members.
///
/// Colors are averaged; the label is dynamic if any member is dynamic,
/// otherwise static. Output order follows first occurrence in the input,
/// and output points are renumbered `0..n`.
pub fn voxel_downsample(cloud: &PointCloud, leaf: f64) -> Result<PointCloud> {
    let (out, _) = voxel_downsample_with_assignment(cloud, leaf)?;
    Ok(out)
}

/// Like [`voxel_downsample`], also returning for each input point the index
/// of the output point that absorbed it.
pub fn voxel_downsample_with_assignment(
    cloud: &PointCloud,
    leaf: f64,
) -> Result<(PointCloud, Vec<u32>)> {
    if !(leaf > 0.0 && leaf.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "voxel leaf size must be positive, got {leaf}"
        )));
    }
    let mut slots: HashMap<VoxelKey, u32> = HashMap::with_capacity(cloud.len() / 2 + 1);
    let mut accs: Vec<VoxelAccumulator> = Vec::new();
    let mut assignment = Vec::with_capacity(cloud.len());
    for p in &cloud.points {
        let slot = *slots.entry(voxel_key(&p.position, leaf)).or_insert_with(|| {
            accs.push(VoxelAccumulator::default());
            (accs.len() - 1) as u32
        });
        accs[slot as usize].add(p);
        assignment.push(slot);
    }
    let points = accs
        .iter()
        .enumerate()
        .map(|(i, a)| a.to_point(i as u32))
        .collect();
    Ok((
        PointCloud {
            points,
            frame_id: cloud.frame_id,
            timestamp: cloud.timestamp,
        },
        assignment,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn two_close_points_merge_to_centroid() {
        let c = PointCloud::from_positions([Vec3::zeros(), Vec3::new(0.01, 0.0, 0.0)]);
        let out = voxel_downsample(&c, 0.1).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.points[0].position - Vec3::new(0.005, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn separated_points_survive() {
        let c = PointCloud::from_positions((0..10).map(|i| Vec3::new(i as f64, 2.0 * i as f64, -(i as f64))));
        assert_eq!(voxel_downsample(&c, 0.5).unwrap().len(), 10);
    }

    #[test]
    fn rejects_bad_leaf() {
        let c = PointCloud::from_positions([Vec3::zeros()]);
        assert!(voxel_downsample(&c, 0.0).is_err());
        assert!(voxel_downsample(&c, -1.0).is_err());
        assert!(voxel_downsample(&c, f64::NAN).is_err());
    }

    #[test]
    fn dynamic_label_dominates_and_colors_average() {
        let mut c = PointCloud::from_positions([Vec3::zeros(), Vec3::new(0.01, 0.0, 0.0), Vec3::new(0.02, 0.0, 0.0)]);
        c.points[0].label = Label::Static;
        c.points[1].label = Label::Dynamic(Some(7));
        c.points[2].label = Label::Static;
        c.points[0].color = Some([0, 10, 200]);
        c.points[2].color = Some([100, 20, 100]);
        let out = voxel_downsample(&c, 0.1).unwrap();
        assert_eq!(out.points[0].label, Label::Dynamic(Some(7)));
        assert_eq!(out.points[0].color, Some([50, 15, 150]));
    }

    #[test]
    fn count_matches_brute_force_hash() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = PointCloud::from_positions(
            (0..10_000).map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5))),
        );
        let leaf = 0.05;
        // independent oracle: distinct integer cells via division and truncation fix-up
        let cells: HashSet<(i64, i64, i64)> = c
            .points
            .iter()
            .map(|p| {
                let f = |x: f64| {
                    let q = x / leaf;
                    let t = q as i64;
                    if (t as f64) > q { t - 1 } else { t }
                };
                (f(p.position.x), f(p.position.y), f(p.position.z))
            })
            .collect();
        assert_eq!(voxel_downsample(&c, leaf).unwrap().len(), cells.len());
    }

    proptest! {
        #[test]
        fn output_inside_voxels_and_not_larger(
            pts in prop::collection::vec(prop::array::uniform3(-3.0f64..3.0), 1..300),
            leaf in 0.05f64..1.0,
        ) {
            let c = PointCloud::from_positions(pts.iter().map(|p| Vec3::from(*p)));
            let (out, assign) = voxel_downsample_with_assignment(&c, leaf).unwrap();
            prop_assert!(out.len() <= c.len());
            for (p, &slot) in c.points.iter().zip(&assign) {
                let key = voxel_key(&p.position, leaf);
                let q = out.points[slot as usize].position;
                for a in 0..3 {
                    let lo = key[a] as f64 * leaf - 1e-9;
                    let hi = (key[a] + 1) as f64 * leaf + 1e-9;
                    prop_assert!(q[a] >= lo && q[a] <= hi);
                }
            }
        }
    }
}
