//! Point-cloud frame files.
//!
//! Binary layout (little endian): magic `MMPC`, `u32` point count, then per
//! point `3 x f32` position, `3 x u8` RGB and one label byte
//! (see [`Label::to_byte`]). Files ending in `.xyz`/`.txt` use the ASCII
//! variant: one `x y z [r g b [label]]` record per line, `#` comments.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::cloud::{Label, Point, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub const MAGIC: &[u8; 4] = b"MMPC";
const RECORD_LEN: usize = 16;

pub fn encode_mmpc(cloud: &PointCloud) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + RECORD_LEN * cloud.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for p in &cloud.points {
        for c in p.position.iter() {
            buf.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        buf.extend_from_slice(&p.color.unwrap_or([0, 0, 0]));
        buf.push(p.label.to_byte());
    }
    buf
}

pub fn decode_mmpc(bytes: &[u8]) -> std::result::Result<PointCloud, String> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err("missing MMPC magic".into());
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != n * RECORD_LEN {
        return Err(format!(
            "header declares {n} points but payload holds {} bytes",
            body.len()
        ));
    }
    let mut points = Vec::with_capacity(n);
    for (i, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let f = |o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().unwrap()) as f64;
        let position = Vec3::new(f(0), f(4), f(8));
        if !position.iter().all(|c| c.is_finite()) {
            return Err(format!("point {i} has a non-finite coordinate"));
        }
        points.push(Point {
            position,
            color: Some([rec[12], rec[13], rec[14]]),
            label: Label::from_byte(rec[15]),
            scan_index: i as u32,
        });
    }
    Ok(PointCloud {
        points,
        frame_id: 0,
        timestamp: 0.0,
    })
}

pub fn encode_ascii(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(48 * cloud.len());
    s.push_str("# x y z r g b label\n");
    for p in &cloud.points {
        let [r, g, b] = p.color.unwrap_or([0, 0, 0]);
        s.push_str(&format!(
            "{:.6} {:.6} {:.6} {r} {g} {b} {}\n",
            p.position.x,
            p.position.y,
            p.position.z,
            p.label.to_byte()
        ));
    }
    s
}

pub fn decode_ascii(text: &str) -> std::result::Result<PointCloud, String> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !matches!(fields.len(), 3 | 6 | 7) {
            return Err(format!(
                "line {}: expected 3, 6 or 7 fields, found {}",
                lineno + 1,
                fields.len()
            ));
        }
        let num = |i: usize| -> std::result::Result<f64, String> {
            fields[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("line {}: bad coordinate {:?}", lineno + 1, fields[i]))
        };
        let byte = |i: usize| -> std::result::Result<u8, String> {
            fields[i]
                .parse::<u8>()
                .map_err(|_| format!("line {}: bad byte {:?}", lineno + 1, fields[i]))
        };
        let position = Vec3::new(num(0)?, num(1)?, num(2)?);
        let color = if fields.len() >= 6 {
            Some([byte(3)?, byte(4)?, byte(5)?])
        } else {
            None
        };
        let label = if fields.len() == 7 {
            Label::from_byte(byte(6)?)
        } else {
            Label::Unlabeled
        };
        points.push(Point {
            position,
            color,
            label,
            scan_index: points.len() as u32,
        });
    }
    Ok(PointCloud {
        points,
        frame_id: 0,
        timestamp: 0.0,
    })
}

fn is_ascii_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("xyz") | Some("txt")
    )
}

/// Reads a cloud, choosing the binary or ASCII codec from the extension.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parsed = if is_ascii_path(path) {
        std::str::from_utf8(&bytes)
            .map_err(|e| e.to_string())
            .and_then(decode_ascii)
    } else {
        decode_mmpc(&bytes)
    };
    parsed.map_err(|reason| Error::CloudFormat {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let bytes = if is_ascii_path(path) {
        encode_ascii(cloud).into_bytes()
    } else {
        encode_mmpc(cloud)
    };
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binary_header_layout() {
        let mut c = PointCloud::from_positions([Vec3::new(1.0, -2.0, 0.5)]);
        c.points[0].color = Some([10, 20, 30]);
        c.points[0].label = Label::Dynamic(Some(0));
        let b = encode_mmpc(&c);
        assert_eq!(&b[..4], b"MMPC");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(f32::from_le_bytes(b[8..12].try_into().unwrap()), 1.0);
        assert_eq!(&b[20..24], &[10, 20, 30, 3]);
        assert_eq!(b.len(), 24);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let c = PointCloud::from_positions([Vec3::zeros(), Vec3::x()]);
        let b = encode_mmpc(&c);
        assert!(decode_mmpc(&b[..b.len() - 1]).is_err());
        assert!(decode_mmpc(b"XXXX\0\0\0\0").is_err());
    }

    #[test]
    fn ascii_fixture() {
        let text = "# hand written\n0 0 0\n1.5 2 3 255 0 0\n\n-1 -1 -1 1 2 3 1\n";
        let c = decode_ascii(text).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.points[0].color, None);
        assert_eq!(c.points[1].color, Some([255, 0, 0]));
        assert_eq!(c.points[2].label, Label::Static);
        assert_eq!(c.points[2].scan_index, 2);
        assert!(decode_ascii("1 2\n").is_err());
        assert!(decode_ascii("1 2 nan\n").is_err());
    }

    proptest! {
        #[test]
        fn binary_round_trip(pts in prop::collection::vec((prop::array::uniform3(-100.0f32..100.0), prop::array::uniform3(any::<u8>()), any::<u8>()), 0..50)) {
            let cloud = PointCloud {
                points: pts.iter().enumerate().map(|(i, (p, c, l))| Point {
                    position: Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64),
                    color: Some(*c),
                    label: Label::from_byte(*l),
                    scan_index: i as u32,
                }).collect(),
                frame_id: 0,
                timestamp: 0.0,
            };
            prop_assert_eq!(decode_mmpc(&encode_mmpc(&cloud)).unwrap(), cloud);
        }
    }
}
