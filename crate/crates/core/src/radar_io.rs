//! Polar radar sweeps, their Cartesian point form, and on-disk formats.
//!
//! Range bins are numbered `d = 1..=nr` and stored in column `d - 1`, so a
//! detection in bin `d` lies at range `d·γ`. Azimuth bin `a` (0-based) points
//! at angle `2πa/na` from the sensor x-axis.
//!
//! `.cfrad` layout (little-endian): `b"CFRD"`, `u32` version, `u32` na,
//! `u32` nr, `f64` gamma, `f64` sweep duration, `f64` stamp, then `na·nr`
//! row-major `u16` intensities.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::geometry::{Point2, Pose2};
use crate::motion::time_offset;
use crate::trajectory::{StampedPose, Trajectory};

pub const SCAN_MAGIC: [u8; 4] = *b"CFRD";
pub const SCAN_VERSION: u32 = 1;
pub const SCAN_HEADER_LEN: usize = 40;

/// One full sweep of intensities, `na` azimuth rows by `nr` range columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarScan {
    pub na: usize,
    pub nr: usize,
    /// Meters per range bin.
    pub gamma: f64,
    /// Seconds for one full revolution.
    pub sweep_duration: f64,
    /// Time of the sweep center, seconds.
    pub stamp: f64,
    pub intensities: Vec<u16>,
}

impl PolarScan {
    /// All-zero scan.
    pub fn new(na: usize, nr: usize, gamma: f64, sweep_duration: f64, stamp: f64) -> Result<Self> {
        Self::from_intensities(na, nr, gamma, sweep_duration, stamp, vec![0; na * nr])
    }

    pub fn from_intensities(
        na: usize,
        nr: usize,
        gamma: f64,
        sweep_duration: f64,
        stamp: f64,
        intensities: Vec<u16>,
    ) -> Result<Self> {
        check_dimensions(na, nr, gamma, sweep_duration)?;
        if intensities.len() != na * nr {
            return Err(Error::Dimension(format!(
                "{} intensities for a {na}x{nr} scan",
                intensities.len()
            )));
        }
        Ok(Self {
            na,
            nr,
            gamma,
            sweep_duration,
            stamp,
            intensities,
        })
    }

    /// Intensities of azimuth row `a`; element `i` is range bin `i + 1`.
    pub fn row(&self, a: usize) -> &[u16] {
        &self.intensities[a * self.nr..(a + 1) * self.nr]
    }

    pub fn row_mut(&mut self, a: usize) -> &mut [u16] {
        let nr = self.nr;
        &mut self.intensities[a * nr..(a + 1) * nr]
    }

    /// Intensity at azimuth `a`, 1-based range bin `d`.
    pub fn intensity(&self, a: usize, d: usize) -> u16 {
        self.intensities[a * self.nr + d - 1]
    }

    pub fn azimuth_angle(&self, a: usize) -> f64 {
        TAU * a as f64 / self.na as f64
    }

    pub fn max_range(&self) -> f64 {
        self.nr as f64 * self.gamma
    }
}

fn check_dimensions(na: usize, nr: usize, gamma: f64, sweep_duration: f64) -> Result<()> {
    if na == 0 || nr == 0 {
        return Err(Error::Dimension(format!("na={na}, nr={nr}; both must be >= 1")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Dimension(format!("range resolution {gamma} must be positive")));
    }
    if !(sweep_duration > 0.0 && sweep_duration.is_finite()) {
        return Err(Error::Dimension(format!(
            "sweep duration {sweep_duration} must be positive"
        )));
    }
    Ok(())
}

/// A polar cell selected by a filter. `range_bin` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub azimuth: usize,
    pub range_bin: usize,
    pub intensity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarPoint {
    /// Position in the sensor frame.
    pub pos: Point2,
    pub intensity: f64,
    pub azimuth_index: usize,
    /// Measurement time relative to the sweep center, seconds.
    pub time_offset: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<RadarPoint>,
    pub stamp: f64,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Converts filtered detections to sensor-frame Cartesian points.
pub fn to_cartesian(scan: &PolarScan, detections: &[Detection]) -> Result<PointCloud> {
    let mut points = Vec::with_capacity(detections.len());
    for det in detections {
        if det.azimuth >= scan.na || det.range_bin == 0 || det.range_bin > scan.nr {
            return Err(Error::InvalidInput(format!(
                "detection (a={}, d={}) outside a {}x{} scan",
                det.azimuth, det.range_bin, scan.na, scan.nr
            )));
        }
        let range = det.range_bin as f64 * scan.gamma;
        let (s, c) = scan.azimuth_angle(det.azimuth).sin_cos();
        points.push(RadarPoint {
            pos: Point2::new(range * c, range * s),
            intensity: scan.intensity(det.azimuth, det.range_bin) as f64,
            azimuth_index: det.azimuth,
            time_offset: time_offset(det.azimuth, scan.na, scan.sweep_duration),
        });
    }
    Ok(PointCloud {
        points,
        stamp: scan.stamp,
    })
}

pub fn encode_scan(scan: &PolarScan) -> Vec<u8> {
    let mut buf = Vec::with_capacity(SCAN_HEADER_LEN + 2 * scan.intensities.len());
    buf.extend_from_slice(&SCAN_MAGIC);
    buf.extend_from_slice(&SCAN_VERSION.to_le_bytes());
    buf.extend_from_slice(&(scan.na as u32).to_le_bytes());
    buf.extend_from_slice(&(scan.nr as u32).to_le_bytes());
    buf.extend_from_slice(&scan.gamma.to_le_bytes());
    buf.extend_from_slice(&scan.sweep_duration.to_le_bytes());
    buf.extend_from_slice(&scan.stamp.to_le_bytes());
    for v in &scan.intensities {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_scan(bytes: &[u8]) -> Result<PolarScan> {
    if bytes.len() < SCAN_HEADER_LEN {
        return Err(Error::MalformedHeader(format!(
            "{} bytes, header needs {SCAN_HEADER_LEN}",
            bytes.len()
        )));
    }
    if bytes[0..4] != SCAN_MAGIC {
        return Err(Error::MalformedHeader("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != SCAN_VERSION {
        return Err(Error::MalformedHeader(format!("unsupported version {version}")));
    }
    let na = u32_at(8) as usize;
    let nr = u32_at(12) as usize;
    let gamma = f64_at(16);
    let sweep_duration = f64_at(24);
    let stamp = f64_at(32);
    check_dimensions(na, nr, gamma, sweep_duration)?;
    if !stamp.is_finite() {
        return Err(Error::MalformedHeader(format!("stamp {stamp} is not finite")));
    }
    let expected = SCAN_HEADER_LEN + 2 * na * nr;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Dimension(format!(
            "{} trailing bytes after a {na}x{nr} payload",
            bytes.len() - expected
        )));
    }
    let intensities = bytes[SCAN_HEADER_LEN..]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    PolarScan::from_intensities(na, nr, gamma, sweep_duration, stamp, intensities)
}

pub fn write_scan(scan: &PolarScan, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_scan(scan)).map_err(|e| Error::io(path, e))
}

pub fn read_scan(path: impl AsRef<Path>) -> Result<PolarScan> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_scan(&bytes)
}

/// `.traj` text: one `stamp x y theta` line per pose.
pub fn format_trajectory(traj: &Trajectory) -> String {
    let mut out = String::new();
    for p in &traj.poses {
        let _ = writeln!(out, "{} {} {} {}", p.stamp, p.pose.x, p.pose.y, p.pose.theta);
    }
    out
}

pub fn parse_trajectory(text: &str, origin: &str) -> Result<Trajectory> {
    let mut traj = Trajectory::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            message,
        };
        let fields = line
            .split_whitespace()
            .map(|f| f.parse::<f64>().map_err(|e| parse_err(format!("'{f}': {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if fields.len() != 4 {
            return Err(parse_err(format!(
                "expected 4 fields (stamp x y theta), found {}",
                fields.len()
            )));
        }
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(parse_err("non-finite value".into()));
        }
        traj.poses.push(StampedPose::new(
            fields[0],
            Pose2::new(fields[1], fields[2], fields[3]),
        ));
    }
    Ok(traj)
}

pub fn write_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_trajectory(traj)).map_err(|e| Error::io(path, e))
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text, &path.display().to_string())
}

/// KITTI pose rows: 3x4 row-major `[R | t]` with the plane embedded at z = 0.
pub fn format_kitti(traj: &Trajectory) -> String {
    let mut out = String::new();
    for p in &traj.poses {
        let (s, c) = p.pose.theta.sin_cos();
        let _ = writeln!(
            out,
            "{c} {} 0 {} {s} {c} 0 {} 0 0 1 0",
            -s + 0.0,
            p.pose.x,
            p.pose.y
        );
    }
    out
}

pub fn write_kitti(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_kitti(traj)).map_err(|e| Error::io(path, e))
}

/// Per-pose covariance rows: `stamp c_xx c_xy c_xt c_yy c_yt c_tt`, or `stamp nan`
/// when no covariance is available.
pub fn format_covariances(traj: &Trajectory) -> String {
    let mut out = String::new();
    for p in &traj.poses {
        match p.covariance {
            Some(c) => {
                let _ = writeln!(
                    out,
                    "{} {:e} {:e} {:e} {:e} {:e} {:e}",
                    p.stamp,
                    c[(0, 0)],
                    c[(0, 1)],
                    c[(0, 2)],
                    c[(1, 1)],
                    c[(1, 2)],
                    c[(2, 2)]
                );
            }
            None => {
                let _ = writeln!(out, "{} nan", p.stamp);
            }
        }
    }
    out
}

/// Inverse of [`format_covariances`]; returns `None` for `nan` rows.
pub fn parse_covariances(text: &str) -> Result<Vec<Option<Matrix3<f64>>>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: "<covariance>".into(),
            line: i + 1,
            message,
        };
        if fields.len() == 2 && fields[1] == "nan" {
            out.push(None);
            continue;
        }
        if fields.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", fields.len())));
        }
        let v = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| err(format!("'{f}': {e}"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(Some(Matrix3::new(
            v[0], v[1], v[2], v[1], v[3], v[4], v[2], v[4], v[5],
        )));
    }
    Ok(out)
}
