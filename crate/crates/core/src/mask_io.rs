//! Per-frame segmentation files: a 16-bit grayscale PNG whose pixel value is
//! the instance id (0 = background) plus a JSON sidecar with the same stem.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BBox, BinaryImage, ClassRegistry, InstanceMask, SegmentationResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidecarInstance {
    pub id: u32,
    pub class_name: String,
    pub class_id: u32,
    pub confidence: f64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub frame_id: u64,
    pub width: usize,
    pub height: usize,
    pub instances: Vec<SidecarInstance>,
}

fn frame_hint(path: &Path) -> u64 {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}

/// Loads and validates one frame. `path` may name either the PNG or the
/// JSON sidecar.
pub fn load_segmentation(path: &Path, registry: &ClassRegistry) -> Result<SegmentationResult> {
    let json_path = path.with_extension("json");
    let png_path = path.with_extension("png");
    let hint = frame_hint(path);
    let frame_err = |frame: u64, instance: Option<u32>, reason: String| Error::Segmentation {
        frame,
        instance,
        reason,
    };

    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let meta: Sidecar = serde_json::from_str(&text)
        .map_err(|e| frame_err(hint, None, format!("malformed metadata: {e}")))?;
    let frame = meta.frame_id;

    let img = image::open(&png_path)
        .map_err(|e| frame_err(frame, None, format!("cannot read mask image: {e}")))?
        .into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if (w, h) != (meta.width, meta.height) {
        return Err(frame_err(
            frame,
            None,
            format!(
                "mask image is {w}x{h} but metadata says {}x{}",
                meta.width, meta.height
            ),
        ));
    }

    let mut slots: BTreeMap<u32, usize> = BTreeMap::new();
    let mut instances = Vec::with_capacity(meta.instances.len());
    for (slot, m) in meta.instances.iter().enumerate() {
        let err = |reason: String| frame_err(frame, Some(m.id), reason);
        if m.id == 0 || m.id > u32::from(u16::MAX) {
            return Err(err(format!("instance id must be in 1..=65535, got {}", m.id)));
        }
        if slots.insert(m.id, slot).is_some() {
            return Err(err("duplicate instance id".into()));
        }
        let class = registry
            .by_id(m.class_id)
            .ok_or_else(|| err(format!("unknown class id {}", m.class_id)))?;
        if class.name != m.class_name {
            return Err(err(format!(
                "class id {} is {:?}, metadata says {:?}",
                m.class_id, class.name, m.class_name
            )));
        }
        if !(0.0..=1.0).contains(&m.confidence) {
            return Err(err(format!("confidence {} outside [0, 1]", m.confidence)));
        }
        instances.push(InstanceMask {
            id: m.id,
            class_id: m.class_id,
            class_name: m.class_name.clone(),
            confidence: m.confidence,
            bitmap: BinaryImage::new(w, h),
            bbox: m.bbox,
        });
    }

    for (x, y, px) in img.enumerate_pixels() {
        let v = u32::from(px.0[0]);
        if v == 0 {
            continue;
        }
        match slots.get(&v) {
            Some(&s) => instances[s].bitmap.set(x as usize, y as usize, true),
            None => {
                return Err(frame_err(
                    frame,
                    Some(v),
                    "mask pixel refers to an instance missing from the metadata".into(),
                ))
            }
        }
    }
    for inst in &instances {
        if inst.bitmap.count() == 0 {
            return Err(frame_err(frame, Some(inst.id), "instance has no mask pixels".into()));
        }
    }

    let seg = SegmentationResult {
        frame_id: frame,
        width: w,
        height: h,
        instances,
    };
    seg.validate()?;
    Ok(seg)
}

/// Writes `<stem>.png` and `<stem>.json`. Instances must not overlap since
/// the PNG stores one id per pixel.
pub fn write_segmentation(path: &Path, seg: &SegmentationResult) -> Result<()> {
    seg.validate()?;
    let mut img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::new(seg.width as u32, seg.height as u32);
    for inst in &seg.instances {
        if inst.id == 0 || inst.id > u32::from(u16::MAX) {
            return Err(Error::Segmentation {
                frame: seg.frame_id,
                instance: Some(inst.id),
                reason: "instance id does not fit the 16-bit mask".into(),
            });
        }
        for y in 0..seg.height {
            for x in 0..seg.width {
                if inst.bitmap.get(x, y) {
                    let px = img.get_pixel_mut(x as u32, y as u32);
                    if px.0[0] != 0 {
                        return Err(Error::Segmentation {
                            frame: seg.frame_id,
                            instance: Some(inst.id),
                            reason: format!("overlaps instance {} at ({x}, {y})", px.0[0]),
                        });
                    }
                    px.0[0] = inst.id as u16;
                }
            }
        }
    }
    let png_path = path.with_extension("png");
    img.save(&png_path)
        .map_err(|e| Error::Dataset(format!("writing {}: {e}", png_path.display())))?;

    let meta = Sidecar {
        frame_id: seg.frame_id,
        width: seg.width,
        height: seg.height,
        instances: seg
            .instances
            .iter()
            .map(|i| SidecarInstance {
                id: i.id,
                class_name: i.class_name.clone(),
                class_id: i.class_id,
                confidence: i.confidence,
                bbox: i.bbox,
            })
            .collect(),
    };
    let json_path = path.with_extension("json");
    let text = serde_json::to_string_pretty(&meta).expect("sidecar serializes");
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(dir: &Path, stem: &str, w: u32, h: u32, pixels: &[(u32, u32, u16)], json: &str) -> std::path::PathBuf {
        let mut img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(w, h);
        for &(x, y, v) in pixels {
            img.put_pixel(x, y, Luma([v]));
        }
        let base = dir.join(stem);
        img.save(base.with_extension("png")).unwrap();
        fs::write(base.with_extension("json"), json).unwrap();
        base.with_extension("json")
    }

    #[test]
    fn empty_frame() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_fixture(dir.path(), "000003", 8, 6, &[], r#"{"frame_id":3,"width":8,"height":6,"instances":[]}"#);
        let seg = load_segmentation(&p, &ClassRegistry::default()).unwrap();
        assert_eq!(seg.frame_id, 3);
        assert!(seg.instances.is_empty());
    }

    #[test]
    fn hand_built_three_instances() {
        let dir = tempfile::tempdir().unwrap();
        let mut px = Vec::new();
        // person: 2x2 square at (1,1)
        for (x, y) in [(1, 1), (2, 1), (1, 2), (2, 2)] {
            px.push((x, y, 1));
        }
        // dog: L-shape spanning x 5..8, y 0..3
        for (x, y) in [(5, 0), (5, 1), (5, 2), (6, 2), (7, 2)] {
            px.push((x, y, 4));
        }
        // chair: single pixel
        px.push((9, 5, 9));
        let json = r#"{"frame_id":12,"width":10,"height":6,"instances":[
            {"id":1,"class_name":"person","class_id":0,"confidence":0.97,"bbox":[1,1,2,2]},
            {"id":4,"class_name":"dog","class_id":16,"confidence":0.6,"bbox":[5,0,3,3]},
            {"id":9,"class_name":"chair","class_id":56,"confidence":0.8,"bbox":[9,5,1,1]}]}"#;
        let p = write_fixture(dir.path(), "000012", 10, 6, &px, json);
        let seg = load_segmentation(&p.with_extension("png"), &ClassRegistry::default()).unwrap();
        let ids: Vec<u32> = seg.instances.iter().map(|i| i.id).collect();
        let classes: Vec<u32> = seg.instances.iter().map(|i| i.class_id).collect();
        assert_eq!(ids, vec![1, 4, 9]);
        assert_eq!(classes, vec![0, 16, 56]);
        assert_eq!(seg.instances[0].bbox, BBox { x: 1, y: 1, w: 2, h: 2 });
        assert_eq!(seg.instances[1].bbox, BBox { x: 5, y: 0, w: 3, h: 3 });
        assert_eq!(seg.instances[1].bitmap.count(), 5);

        let out = dir.path().join("copy");
        write_segmentation(&out, &seg).unwrap();
        assert_eq!(load_segmentation(&out, &ClassRegistry::default()).unwrap(), seg);
    }

    #[test]
    fn typed_errors() {
        let dir = tempfile::tempdir().unwrap();
        let reg = ClassRegistry::default();
        let px = [(0, 0, 2u16)];
        let cases = [
            (r#"{"frame_id":5,"width":4,"height":4,"instances":[{"id":2,"class_name":"person","class_id":0,"confidence":0.9,"bbox":[0,0,1,1]}]}"#, "4x4"),
            (r#"{"frame_id":5,"width":3,"height":3,"instances":[{"id":2,"class_name":"person","class_id":999,"confidence":0.9,"bbox":[0,0,1,1]}]}"#, "unknown class id"),
            (r#"{"frame_id":5,"width":3,"height":3,"instances":[{"id":2,"class_name":"person","class_id":0,"confidence":0.9,"bbox":[0,0,2,1]}]}"#, "tight bound"),
            (r#"{"frame_id":5,"width":3,"height":3,"instances":[]}"#, "missing from the metadata"),
            (r#"{"frame_id":5,"width":3,"height":3}"#, "malformed metadata"),
            (r#"{"frame_id":5,"width":3,"height":3,"instances":[],"extra":1}"#, "malformed metadata"),
        ];
        for (i, (json, needle)) in cases.iter().enumerate() {
            let p = write_fixture(dir.path(), &format!("00000{i}"), 3, 3, &px, json);
            let e = load_segmentation(&p, &reg).unwrap_err();
            let msg = e.to_string();
            assert!(matches!(e, Error::Segmentation { .. }), "{msg}");
            assert!(msg.contains(needle), "case {i}: {msg}");
            assert!(msg.contains("frame 5") || msg.contains(&format!("frame {i}")), "case {i}: {msg}");
        }
    }
}
