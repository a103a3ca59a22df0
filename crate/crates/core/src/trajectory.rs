//! TUM-format trajectories and translational drift metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StampedPose {
    pub timestamp: f64,
    pub pose: Pose,
}

/// One line per pose: `timestamp tx ty tz qx qy qz qw`.
pub fn format_tum(traj: &[StampedPose]) -> String {
    let mut s = String::new();
    for sp in traj {
        let t = sp.pose.translation;
        let q = sp.pose.rotation.coords;
        writeln!(
            s,
            "{:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            sp.timestamp, t.x, t.y, t.z, q.x, q.y, q.z, q.w
        )
        .unwrap();
    }
    s
}

pub fn parse_tum(text: &str) -> Result<Vec<StampedPose>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Dataset(format!("trajectory line {}: {e}", n + 1)))?;
        if v.len() != 8 || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Dataset(format!(
                "trajectory line {}: expected 8 finite numbers, found {}",
                n + 1,
                v.len()
            )));
        }
        let q = Quaternion::new(v[7], v[4], v[5], v[6]);
        if q.norm() < 1e-9 {
            return Err(Error::Dataset(format!("trajectory line {}: zero quaternion", n + 1)));
        }
        out.push(StampedPose {
            timestamp: v[0],
            pose: Pose::new(UnitQuaternion::from_quaternion(q), Vec3::new(v[1], v[2], v[3])),
        });
    }
    Ok(out)
}

pub fn write_tum(path: &Path, traj: &[StampedPose]) -> Result<()> {
    fs::write(path, format_tum(traj)).map_err(|e| Error::io(path, e))
}

pub fn read_tum(path: &Path) -> Result<Vec<StampedPose>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tum(&text).map_err(|e| match e {
        Error::Dataset(m) => Error::Dataset(format!("{}: {m}", path.display())),
        e => e,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    /// Mean per-frame drift (cm).
    pub atde_cm: f64,
    /// Maximum per-frame drift (cm).
    pub mtde_cm: f64,
    pub drift_cm: Vec<f64>,
}

/// Aligns the estimate to the ground truth on the first pose and reports
/// the translational drift of every frame. Both trajectories must have the
/// same length with timestamps within half a frame period of each other.
pub fn evaluate(est: &[StampedPose], gt: &[StampedPose]) -> Result<DriftReport> {
    if est.is_empty() || est.len() != gt.len() {
        return Err(Error::Alignment(format!(
            "estimate has {} poses, ground truth {}",
            est.len(),
            gt.len()
        )));
    }
    let period = gt
        .windows(2)
        .map(|w| w[1].timestamp - w[0].timestamp)
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min);
    let tol = if period.is_finite() { 0.5 * period } else { 1e-6 };
    if let Some((i, (e, g))) = est
        .iter()
        .zip(gt)
        .enumerate()
        .find(|(_, (e, g))| (e.timestamp - g.timestamp).abs() > tol)
    {
        return Err(Error::Alignment(format!(
            "frame {i}: estimate stamp {} vs ground truth {} exceeds {tol}",
            e.timestamp, g.timestamp
        )));
    }
    let align = gt[0].pose * est[0].pose.inverse();
    let drift_cm: Vec<f64> = est
        .iter()
        .zip(gt)
        .map(|(e, g)| ((align * e.pose).translation - g.pose.translation).norm() * 100.0)
        .collect();
    let atde_cm = drift_cm.iter().sum::<f64>() / drift_cm.len() as f64;
    let mtde_cm = drift_cm.iter().copied().fold(0.0, f64::max);
    Ok(DriftReport {
        atde_cm,
        mtde_cm,
        drift_cm,
    })
}

/// Per-frame CSV followed by the two summary rows.
pub fn format_report_csv(report: &DriftReport, gt: &[StampedPose]) -> String {
    let mut s = String::from("frame,timestamp,drift_cm\n");
    for (i, (d, g)) in report.drift_cm.iter().zip(gt).enumerate() {
        writeln!(s, "{i},{:.6},{d:.6}", g.timestamp).unwrap();
    }
    writeln!(s, "ATDE,,{:.6}", report.atde_cm).unwrap();
    writeln!(s, "MTDE,,{:.6}", report.mtde_cm).unwrap();
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(n: usize) -> Vec<StampedPose> {
        (0..n)
            .map(|i| StampedPose {
                timestamp: i as f64 * 0.1,
                pose: Pose::from_axis_angle(Vec3::z() * 0.01 * i as f64, Vec3::new(0.05 * i as f64, 0.0, 1.0)),
            })
            .collect()
    }

    #[test]
    fn tum_round_trip() {
        let t = line(5);
        let back = parse_tum(&format_tum(&t)).unwrap();
        for (a, b) in t.iter().zip(&back) {
            let (dt, dr) = a.pose.distance_to(&b.pose);
            assert!(dt < 1e-8 && dr < 1e-8);
            assert!((a.timestamp - b.timestamp).abs() < 1e-6);
        }
        assert_eq!(format_tum(&back), format_tum(&t));
        assert!(parse_tum("0 1 2 3").is_err());
        assert!(parse_tum("# comment\n\n").unwrap().is_empty());
    }

    #[test]
    fn identical_is_zero() {
        let r = evaluate(&line(10), &line(10)).unwrap();
        assert_eq!((r.atde_cm, r.mtde_cm), (0.0, 0.0));
    }

    #[test]
    fn constant_offset_is_absorbed() {
        let gt = line(10);
        let est: Vec<_> = gt
            .iter()
            .map(|s| StampedPose { pose: Pose::from_translation(Vec3::new(0.01, 0.0, 0.0)) * s.pose, ..*s })
            .collect();
        let r = evaluate(&est, &gt).unwrap();
        assert!(r.atde_cm < 1e-9 && r.mtde_cm < 1e-9);
    }

    #[test]
    fn single_spike() {
        let gt: Vec<_> = (0..100)
            .map(|i| StampedPose { timestamp: i as f64 / 10.0, pose: Pose::identity() })
            .collect();
        let mut est = gt.clone();
        est[40].pose = Pose::from_translation(Vec3::new(0.0, 0.05, 0.0));
        let r = evaluate(&est, &gt).unwrap();
        assert!((r.mtde_cm - 5.0).abs() < 1e-9);
        assert!((r.atde_cm - 0.05).abs() < 1e-9);
    }

    #[test]
    fn misaligned_stamps_and_lengths() {
        let gt = line(10);
        assert!(matches!(evaluate(&line(9), &gt), Err(Error::Alignment(_))));
        let mut est = gt.clone();
        est[3].timestamp += 0.06;
        assert!(matches!(evaluate(&est, &gt), Err(Error::Alignment(_))));
        est[3].timestamp -= 0.02;
        assert!(evaluate(&est, &gt).is_ok());
    }

    proptest! {
        #[test]
        fn invariant_to_global_motion(
            seed in 0u64..1000,
            w in prop::array::uniform3(-2.0f64..2.0),
            t in prop::array::uniform3(-5.0f64..5.0),
        ) {
            let gt = line(12);
            let est: Vec<_> = gt.iter().enumerate().map(|(i, s)| {
                let k = (seed + i as u64) as f64;
                let noise = Pose::from_axis_angle(Vec3::new(0.0, 0.0, (k * 0.3).sin() * 0.01), Vec3::new((k * 0.7).cos() * 0.02, (k * 1.3).sin() * 0.02, 0.0));
                StampedPose { pose: s.pose * noise, ..*s }
            }).collect();
            let g = Pose::from_axis_angle(Vec3::from(w), Vec3::from(t));
            let moved = |v: &[StampedPose]| v.iter().map(|s| StampedPose { pose: g * s.pose, ..*s }).collect::<Vec<_>>();
            let a = evaluate(&est, &gt).unwrap();
            let b = evaluate(&moved(&est), &moved(&gt)).unwrap();
            prop_assert!((a.atde_cm - b.atde_cm).abs() < 1e-9);
            prop_assert!((a.mtde_cm - b.mtde_cm).abs() < 1e-9);
            prop_assert!(a.mtde_cm >= a.atde_cm && a.atde_cm >= 0.0);
        }
    }
}
