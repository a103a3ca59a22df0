//! Seeded corruption of perfect instance masks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{erode, ClassRegistry, SegmentationResult};

use super::{frame_rng, RngStream};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskDegradation {
    /// Square structuring-element radius (px).
    pub erosion_radius: usize,
    /// Fraction of each instance's bounding-box rows removed from one side.
    pub truncation: f64,
    /// Probability that a frame has no masks at all.
    pub dropout: f64,
    /// Probability that an instance is reported with a static class.
    pub misclassification: f64,
}

impl MaskDegradation {
    pub fn is_identity(&self) -> bool {
        self.erosion_radius == 0 && self.truncation == 0.0 && self.dropout == 0.0 && self.misclassification == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if unit(self.truncation) && unit(self.dropout) && unit(self.misclassification) {
            Ok(())
        } else {
            Err(Error::Config(format!("degradation probabilities must lie in [0, 1]: {self:?}")))
        }
    }
}

/// Degrades one frame. The frame's random stream is consumed in a fixed
/// order: the dropout draw, then per instance a misclassification draw and
/// a truncation-side draw.
pub fn degrade_frame(seg: &SegmentationResult, d: &MaskDegradation, seed: u64, registry: &ClassRegistry) -> SegmentationResult {
    let mut rng = frame_rng(seed, RngStream::Degradation, seg.frame_id);
    if rng.random::<f64>() < d.dropout {
        return SegmentationResult::empty(seg.frame_id, seg.width, seg.height);
    }
    let fallback = registry.classes().iter().filter(|c| !c.dynamic).min_by_key(|c| c.id);
    let mut out = seg.clone();
    out.instances.retain_mut(|inst| {
        let misclassify = rng.random::<f64>() < d.misclassification;
        let from_top = rng.random::<bool>();
        if misclassify {
            if let Some(c) = fallback {
                inst.class_id = c.id;
                inst.class_name = c.name.clone();
            }
        }
        let rows = (d.truncation * inst.bbox.h as f64).round() as usize;
        if rows > 0 {
            let (y0, y1) = (inst.bbox.y as usize, (inst.bbox.y + inst.bbox.h) as usize);
            let cut = if from_top { y0..(y0 + rows).min(y1) } else { y1.saturating_sub(rows).max(y0)..y1 };
            for y in cut {
                for x in 0..inst.bitmap.width() {
                    inst.bitmap.set(x, y, false);
                }
            }
        }
        if d.erosion_radius > 0 {
            inst.bitmap = erode(&inst.bitmap, d.erosion_radius);
        }
        inst.refresh_bbox()
    });
    out
}

pub fn degrade_masks(seq: &[SegmentationResult], d: &MaskDegradation, seed: u64, registry: &ClassRegistry) -> Vec<SegmentationResult> {
    seq.iter().map(|s| degrade_frame(s, d, seed, registry)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{BinaryImage, InstanceMask};

    fn frame(id: u64) -> SegmentationResult {
        let reg = ClassRegistry::default();
        let person = reg.by_name("person").unwrap();
        let a = BinaryImage::from_fn(64, 48, |x, y| (10..30).contains(&x) && (5..40).contains(&y));
        let b = BinaryImage::from_fn(64, 48, |x, y| (40..60).contains(&x) && (20..30).contains(&y));
        SegmentationResult {
            frame_id: id,
            width: 64,
            height: 48,
            instances: vec![
                InstanceMask::new(1, person, 1.0, a).unwrap(),
                InstanceMask::new(2, person, 1.0, b).unwrap(),
            ],
        }
    }

    #[test]
    fn zero_parameters_are_identity() {
        let reg = ClassRegistry::default();
        for k in 0..20 {
            assert_eq!(degrade_frame(&frame(k), &MaskDegradation::default(), 9, &reg), frame(k));
        }
    }

    #[test]
    fn erosion_is_anti_extensive() {
        let reg = ClassRegistry::default();
        let d = MaskDegradation { erosion_radius: 2, ..Default::default() };
        let out = degrade_frame(&frame(0), &d, 1, &reg);
        for (a, b) in out.instances.iter().zip(&frame(0).instances) {
            assert!(a.bitmap.is_subset_of(&b.bitmap));
            assert!(a.bitmap.count() < b.bitmap.count());
        }
    }

    #[test]
    fn truncation_removes_rows_from_one_side() {
        let reg = ClassRegistry::default();
        let d = MaskDegradation { truncation: 0.2, ..Default::default() };
        let src = frame(3);
        let out = degrade_frame(&src, &d, 5, &reg);
        let (a, b) = (&out.instances[0], &src.instances[0]);
        assert_eq!(a.bbox.h, b.bbox.h - 7);
        assert_eq!(a.bbox.w, b.bbox.w);
        assert!(a.bbox.y == b.bbox.y || a.bbox.y == b.bbox.y + 7);
    }

    #[test]
    fn dropout_replays_from_seed() {
        let reg = ClassRegistry::default();
        let d = MaskDegradation { dropout: 0.1, ..Default::default() };
        let seq: Vec<_> = (0..1000).map(frame).collect();
        let out = degrade_masks(&seq, &d, 42, &reg);
        let dropped = out.iter().filter(|s| s.instances.is_empty()).count();
        let replay = (0..1000u64)
            .filter(|&k| frame_rng(42, RngStream::Degradation, k).random::<f64>() < 0.1)
            .count();
        assert_eq!(dropped, replay);
        assert!((60..140).contains(&dropped));
        assert_eq!(degrade_masks(&seq, &d, 42, &reg), out);
    }

    #[test]
    fn misclassification_uses_a_static_class() {
        let reg = ClassRegistry::default();
        let d = MaskDegradation { misclassification: 1.0, ..Default::default() };
        let out = degrade_frame(&frame(0), &d, 1, &reg);
        assert!(out.instances.iter().all(|i| !reg.by_id(i.class_id).unwrap().dynamic));
        assert!(out.validate().is_ok());
    }
}
