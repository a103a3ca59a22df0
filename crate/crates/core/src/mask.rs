//! Instance masks, the flattened dynamic-state image and binary morphology.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major binary image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

/// Binary image whose set pixels are in "dynamic state".
pub type DynamicMaskImage = BinaryImage;

impl BinaryImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn<F: FnMut(usize, usize) -> bool>(width: usize, height: usize, mut f: F) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(x, y);
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &BinaryImage) -> bool {
        self.same_size(other) && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn same_size(&self, other: &BinaryImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn union_with(&mut self, other: &BinaryImage) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
    }

    pub fn invert(&self) -> BinaryImage {
        BinaryImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| !b).collect(),
        }
    }

    /// Tight bounding rectangle of the set pixels.
    pub fn bbox(&self) -> Option<BBox> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    b = Some(match b {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        b.map(|(x0, y0, x1, y1)| BBox {
            x: x0 as u32,
            y: y0 as u32,
            w: (x1 - x0 + 1) as u32,
            h: (y1 - y0 + 1) as u32,
        })
    }
}

/// Pixel rectangle `[x, x + w) x [y, y + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl From<[u32; 4]> for BBox {
    fn from(v: [u32; 4]) -> Self {
        BBox {
            x: v[0],
            y: v[1],
            w: v[2],
            h: v[3],
        }
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    /// Instance id; also the pixel value in the mask PNG.
    pub id: u32,
    pub class_id: u32,
    pub class_name: String,
    pub confidence: f64,
    pub bitmap: BinaryImage,
    pub bbox: BBox,
}

impl InstanceMask {
    /// Builds an instance whose bounding box is derived from the bitmap.
    pub fn new(id: u32, class: &ClassInfo, confidence: f64, bitmap: BinaryImage) -> Option<Self> {
        let bbox = bitmap.bbox()?;
        Some(Self {
            id,
            class_id: class.id,
            class_name: class.name.clone(),
            confidence,
            bitmap,
            bbox,
        })
    }

    /// Recomputes the bounding box after editing the bitmap; `false` if the
    /// bitmap became empty.
    pub fn refresh_bbox(&mut self) -> bool {
        match self.bitmap.bbox() {
            Some(b) => {
                self.bbox = b;
                true
            }
            None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub frame_id: u64,
    pub width: usize,
    pub height: usize,
    pub instances: Vec<InstanceMask>,
}

impl SegmentationResult {
    pub fn empty(frame_id: u64, width: usize, height: usize) -> Self {
        Self {
            frame_id,
            width,
            height,
            instances: Vec::new(),
        }
    }

    /// Class of the first instance covering pixel `(x, y)`.
    pub fn class_at(&self, x: usize, y: usize) -> Option<u32> {
        self.instances
            .iter()
            .find(|inst| inst.bitmap.get(x, y))
            .map(|inst| inst.class_id)
    }

    pub fn validate(&self) -> Result<()> {
        for inst in &self.instances {
            let err = |reason: String| Error::Segmentation {
                frame: self.frame_id,
                instance: Some(inst.id),
                reason,
            };
            if inst.bitmap.width() != self.width || inst.bitmap.height() != self.height {
                return Err(err(format!(
                    "bitmap is {}x{}, frame is {}x{}",
                    inst.bitmap.width(),
                    inst.bitmap.height(),
                    self.width,
                    self.height
                )));
            }
            if !(0.0..=1.0).contains(&inst.confidence) {
                return Err(err(format!("confidence {} outside [0, 1]", inst.confidence)));
            }
            if inst.bitmap.bbox() != Some(inst.bbox) {
                return Err(err(format!(
                    "bbox {:?} is not the tight bound {:?} of the mask",
                    <[u32; 4]>::from(inst.bbox),
                    inst.bitmap.bbox().map(<[u32; 4]>::from)
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassInfo {
    pub name: String,
    pub id: u32,
    pub dynamic: bool,
}

/// Known object categories and whether each is treated as movable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassRegistry {
    classes: Vec<ClassInfo>,
}

impl Default for ClassRegistry {
    fn default() -> Self {
        let c = |name: &str, id, dynamic| ClassInfo {
            name: name.into(),
            id,
            dynamic,
        };
        Self {
            classes: vec![
                c("person", 0, true),
                c("bicycle", 1, true),
                c("car", 2, true),
                c("cat", 15, true),
                c("dog", 16, true),
                c("chair", 56, false),
                c("couch", 57, false),
                c("tv", 62, false),
            ],
        }
    }
}

impl ClassRegistry {
    pub fn new(classes: Vec<ClassInfo>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        let mut names = BTreeSet::new();
        for c in &classes {
            if !ids.insert(c.id) || !names.insert(c.name.as_str()) {
                return Err(Error::Config(format!("duplicate class entry {:?}", c.name)));
            }
        }
        Ok(Self { classes })
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn by_id(&self, id: u32) -> Option<&ClassInfo> {
        self.classes.iter().find(|c| c.id == id)
    }

    pub fn by_name(&self, name: &str) -> Option<&ClassInfo> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn dynamic_ids(&self) -> BTreeSet<u32> {
        self.classes.iter().filter(|c| c.dynamic).map(|c| c.id).collect()
    }
}

/// Which instances contribute to the dynamic-state image.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicClassFilter {
    pub classes: BTreeSet<u32>,
    pub min_confidence: f64,
}

impl DynamicClassFilter {
    pub fn new(classes: BTreeSet<u32>, min_confidence: f64) -> Self {
        Self {
            classes,
            min_confidence,
        }
    }

    pub fn accepts(&self, inst: &InstanceMask) -> bool {
        self.classes.contains(&inst.class_id) && inst.confidence >= self.min_confidence
    }
}

/// Union of the bitmaps of every accepted instance.
pub fn flatten_dynamic(seg: &SegmentationResult, filter: &DynamicClassFilter) -> DynamicMaskImage {
    let mut out = BinaryImage::new(seg.width, seg.height);
    for inst in seg.instances.iter().filter(|i| filter.accepts(i)) {
        out.union_with(&inst.bitmap);
    }
    out
}

/// Sliding "any set within `r`" along rows (`horizontal`) or columns.
fn dilate_1d(img: &BinaryImage, r: usize, horizontal: bool) -> BinaryImage {
    let (w, h) = (img.width, img.height);
    let mut out = BinaryImage::new(w, h);
    let (lines, len) = if horizontal { (h, w) } else { (w, h) };
    let mut prefix = vec![0u32; len + 1];
    for line in 0..lines {
        let at = |i: usize| if horizontal { line * w + i } else { i * w + line };
        for i in 0..len {
            prefix[i + 1] = prefix[i] + u32::from(img.data[at(i)]);
        }
        for i in 0..len {
            let lo = i.saturating_sub(r);
            let hi = (i + r + 1).min(len);
            out.data[at(i)] = prefix[hi] > prefix[lo];
        }
    }
    out
}

/// Binary dilation by the `(2r+1) x (2r+1)` square; pixels outside the image
/// are ignored. `r = 0` is the identity.
pub fn dilate(mask: &BinaryImage, radius: usize) -> BinaryImage {
    if radius == 0 {
        return mask.clone();
    }
    dilate_1d(&dilate_1d(mask, radius, true), radius, false)
}

/// Binary erosion by the same square element: a pixel survives when every
/// in-image pixel of its neighbourhood is set.
pub fn erode(mask: &BinaryImage, radius: usize) -> BinaryImage {
    if radius == 0 {
        return mask.clone();
    }
    dilate(&mask.invert(), radius).invert()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn person() -> ClassInfo {
        ClassRegistry::default().by_name("person").unwrap().clone()
    }

    fn rect(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> BinaryImage {
        BinaryImage::from_fn(w, h, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
    }

    fn brute_dilate(m: &BinaryImage, r: usize) -> BinaryImage {
        let r = r as i64;
        BinaryImage::from_fn(m.width(), m.height(), |x, y| {
            let mut any = false;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                    if xx >= 0 && yy >= 0 && (xx as usize) < m.width() && (yy as usize) < m.height() {
                        any |= m.get(xx as usize, yy as usize);
                    }
                }
            }
            any
        })
    }

    fn image_strategy(w: usize, h: usize) -> impl Strategy<Value = BinaryImage> {
        prop::collection::vec(prop::bool::weighted(0.1), w * h).prop_map(move |data| BinaryImage { width: w, height: h, data })
    }

    #[test]
    fn single_pixel_grows_to_block() {
        let mut m = BinaryImage::new(5, 5);
        m.set(2, 2, true);
        let d = dilate(&m, 1);
        assert_eq!(d, rect(5, 5, 1, 1, 4, 4));
        let mut corner = BinaryImage::new(5, 5);
        corner.set(0, 0, true);
        assert_eq!(dilate(&corner, 1), rect(5, 5, 0, 0, 2, 2));
    }

    #[test]
    fn radius_zero_is_identity() {
        let m = rect(8, 6, 1, 2, 4, 5);
        assert_eq!(dilate(&m, 0), m);
        assert_eq!(erode(&m, 0), m);
    }

    #[test]
    fn erosion_shrinks_rectangles() {
        let m = rect(20, 20, 5, 5, 15, 12);
        assert_eq!(erode(&m, 2), rect(20, 20, 7, 7, 13, 10));
        assert!(erode(&m, 2).is_subset_of(&m));
    }

    #[test]
    fn small_square_has_two_by_two_bbox() {
        let inst = InstanceMask::new(1, &person(), 0.9, rect(10, 10, 3, 4, 5, 6)).unwrap();
        assert_eq!(inst.bbox, BBox { x: 3, y: 4, w: 2, h: 2 });
        assert_eq!(inst.bitmap.count(), 4);
    }

    #[test]
    fn flatten_respects_class_and_confidence() {
        let reg = ClassRegistry::default();
        let chair = reg.by_name("chair").unwrap();
        let seg = SegmentationResult {
            frame_id: 0,
            width: 10,
            height: 10,
            instances: vec![
                InstanceMask::new(1, &person(), 0.9, rect(10, 10, 0, 0, 2, 2)).unwrap(),
                InstanceMask::new(2, &person(), 0.3, rect(10, 10, 5, 5, 6, 6)).unwrap(),
                InstanceMask::new(3, chair, 0.9, rect(10, 10, 8, 8, 10, 10)).unwrap(),
            ],
        };
        let f = DynamicClassFilter::new(reg.dynamic_ids(), 0.5);
        assert_eq!(flatten_dynamic(&seg, &f).count(), 4);
        let none = DynamicClassFilter::new(BTreeSet::new(), 0.5);
        assert_eq!(flatten_dynamic(&seg, &none).count(), 0);
    }

    #[test]
    fn flatten_union_counts() {
        let reg = ClassRegistry::default();
        let f = DynamicClassFilter::new(reg.dynamic_ids(), 0.5);
        let a = rect(16, 16, 0, 0, 4, 4);
        let b = rect(16, 16, 10, 10, 13, 16);
        let seg = |a: &BinaryImage, b: &BinaryImage| SegmentationResult {
            frame_id: 0,
            width: 16,
            height: 16,
            instances: vec![
                InstanceMask::new(1, &person(), 1.0, a.clone()).unwrap(),
                InstanceMask::new(2, &person(), 1.0, b.clone()).unwrap(),
            ],
        };
        assert_eq!(flatten_dynamic(&seg(&a, &b), &f).count(), a.count() + b.count());
        let c = rect(16, 16, 2, 2, 7, 9);
        // brute-force overlap
        let overlap = (0..16).flat_map(|y| (0..16).map(move |x| (x, y))).filter(|&(x, y)| a.get(x, y) && c.get(x, y)).count();
        assert_eq!(overlap, 4);
        assert_eq!(flatten_dynamic(&seg(&a, &c), &f).count(), a.count() + c.count() - overlap);
    }

    #[test]
    fn validation_catches_bad_bbox() {
        let mut inst = InstanceMask::new(1, &person(), 0.9, rect(10, 10, 3, 4, 5, 6)).unwrap();
        inst.bbox.w = 3;
        let seg = SegmentationResult { frame_id: 7, width: 10, height: 10, instances: vec![inst] };
        let e = seg.validate().unwrap_err().to_string();
        assert!(e.contains("frame 7") && e.contains("instance 1"), "{e}");
    }

    #[test]
    fn random_masks_match_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = BinaryImage::from_fn(64, 64, |_, _| rng.random_bool(0.05));
            assert_eq!(dilate(&m, 2), brute_dilate(&m, 2));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn extensive(m in image_strategy(24, 17), r in 0usize..5) {
            prop_assert!(m.is_subset_of(&dilate(&m, r)));
            prop_assert!(erode(&m, r).is_subset_of(&m));
        }

        #[test]
        fn monotone(a in image_strategy(20, 20), b in image_strategy(20, 20), r in 0usize..5) {
            let mut big = a.clone();
            big.union_with(&b);
            prop_assert!(dilate(&a, r).is_subset_of(&dilate(&big, r)));
        }

        #[test]
        fn radii_compose(m in image_strategy(20, 15), a in 0usize..4, b in 0usize..4) {
            prop_assert_eq!(dilate(&dilate(&m, a), b), dilate(&m, a + b));
        }

        #[test]
        fn flatten_is_permutation_invariant(
            rects in prop::collection::vec((0usize..12, 0usize..12, 1usize..6, 1usize..6, any::<bool>()), 1..6),
            shift in 0usize..6,
        ) {
            let reg = ClassRegistry::default();
            let chair = reg.by_name("chair").unwrap().clone();
            let insts: Vec<InstanceMask> = rects.iter().enumerate().map(|(i, &(x, y, w, h, dynamic))| {
                let class = if dynamic { person() } else { chair.clone() };
                InstanceMask::new(i as u32 + 1, &class, 0.9, rect(16, 16, x, y, (x + w).min(16), (y + h).min(16))).unwrap()
            }).collect();
            let mut rotated = insts.clone();
            let k = shift % rotated.len();
            rotated.rotate_left(k);
            rotated.reverse();
            let f = DynamicClassFilter::new(reg.dynamic_ids(), 0.5);
            let s1 = SegmentationResult { frame_id: 0, width: 16, height: 16, instances: insts };
            let s2 = SegmentationResult { instances: rotated, ..s1.clone() };
            prop_assert_eq!(flatten_dynamic(&s1, &f), flatten_dynamic(&s2, &f));
        }
    }
}
