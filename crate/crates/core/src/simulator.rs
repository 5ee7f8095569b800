//! Synthetic spinning-radar sweeps of a 2-D world with known ground truth.
//!
//! Each azimuth is ray-cast from the sensor pose at that azimuth's measurement
//! time, so moving sensors produce the same per-azimuth distortion a real
//! rotating radar does. Returns are spread over neighbouring azimuths by the
//! beam pattern and over ±1 range bin, then corrupted by multiplicative
//! speckle, an exponential noise floor and optional single-bounce multipath.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt::Write as _;
use std::fs;
use std::path::Path as FsPath;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Point2, Pose2, Velocity2};
use crate::motion::time_offset;
use crate::radar_io::PolarScan;
use crate::trajectory::{StampedPose, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Point2,
    pub b: Point2,
    pub reflectivity: f64,
}

impl Segment {
    pub fn new(a: Point2, b: Point2, reflectivity: f64) -> Self {
        Self { a, b, reflectivity }
    }

    fn unit_normal(&self) -> Vector2<f64> {
        let d = self.b - self.a;
        Vector2::new(-d.y, d.x).normalize()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointReflector {
    pub pos: Point2,
    pub reflectivity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: Point2,
    pub max: Point2,
}

impl Bounds {
    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub segments: Vec<Segment>,
    pub point_reflectors: Vec<PointReflector>,
    pub bounds: Bounds,
}

impl World {
    pub fn empty(bounds: Bounds) -> Self {
        Self {
            segments: Vec::new(),
            point_reflectors: Vec::new(),
            bounds,
        }
    }

    pub fn add_segment(&mut self, a: (f64, f64), b: (f64, f64), reflectivity: f64) {
        self.segments.push(Segment::new(
            Point2::new(a.0, a.1),
            Point2::new(b.0, b.1),
            reflectivity,
        ));
    }

    pub fn add_point(&mut self, p: (f64, f64), reflectivity: f64) {
        self.point_reflectors.push(PointReflector {
            pos: Point2::new(p.0, p.1),
            reflectivity,
        });
    }

    /// Closed polygon through `corners`.
    pub fn add_polygon(&mut self, corners: &[Point2], reflectivity: f64) {
        for i in 0..corners.len() {
            let j = (i + 1) % corners.len();
            self.segments
                .push(Segment::new(corners[i], corners[j], reflectivity));
        }
    }

    /// Rectangle centered at `center`, rotated by `angle`.
    pub fn add_building(&mut self, center: Point2, size: (f64, f64), angle: f64, reflectivity: f64) {
        let pose = Pose2::new(center.x, center.y, angle);
        let (hx, hy) = (size.0 / 2.0, size.1 / 2.0);
        let corners: Vec<Point2> = [(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)]
            .iter()
            .map(|&(x, y)| pose.transform_point(&Point2::new(x, y)))
            .collect();
        self.add_polygon(&corners, reflectivity);
    }

    /// Fraction of the way from `a` to `b` at which the straight move first
    /// crosses a segment, if it does.
    pub fn crossing(&self, a: &Point2, b: &Point2) -> Option<f64> {
        let d = b - a;
        let len = d.norm();
        if len == 0.0 {
            return None;
        }
        self.cast(a, &(d / len), None)
            .map(|(t, _)| t / len)
            .filter(|&f| f <= 1.0)
    }

    /// Nearest segment hit along a ray: `(distance, segment index)`.
    fn cast(&self, origin: &Point2, dir: &Vector2<f64>, skip: Option<usize>) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, seg) in self.segments.iter().enumerate() {
            if Some(i) == skip {
                continue;
            }
            let e = seg.b - seg.a;
            let denom = cross(dir, &e);
            if denom.abs() < 1e-12 {
                continue;
            }
            let w = seg.a - origin;
            let t = cross(&w, &e) / denom;
            let u = cross(&w, dir) / denom;
            if t > 1e-9 && (0.0..=1.0).contains(&u) && best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, i));
            }
        }
        best
    }
}

fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Plain-text world description: `SEG x1 y1 x2 y2 refl`, `PT x y refl` and an
/// optional `BOUNDS xmin ymin xmax ymax`. `#` starts a comment line.
pub fn parse_world(text: &str, origin: &str) -> Result<World> {
    let mut segments = Vec::new();
    let mut points = Vec::new();
    let mut bounds = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            message,
        };
        let mut fields = line.split_whitespace();
        let tag = fields.next().unwrap_or_default();
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|e| err(format!("'{f}': {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite value".into()));
        }
        let expect = |n: usize| {
            if values.len() == n {
                Ok(())
            } else {
                Err(err(format!("{tag} takes {n} values, found {}", values.len())))
            }
        };
        match tag {
            "SEG" => {
                expect(5)?;
                if values[4] <= 0.0 {
                    return Err(err("reflectivity must be positive".into()));
                }
                segments.push(Segment::new(
                    Point2::new(values[0], values[1]),
                    Point2::new(values[2], values[3]),
                    values[4],
                ));
            }
            "PT" => {
                expect(3)?;
                if values[2] <= 0.0 {
                    return Err(err("reflectivity must be positive".into()));
                }
                points.push(PointReflector {
                    pos: Point2::new(values[0], values[1]),
                    reflectivity: values[2],
                });
            }
            "BOUNDS" => {
                expect(4)?;
                if values[0] >= values[2] || values[1] >= values[3] {
                    return Err(err("empty bounds".into()));
                }
                bounds = Some(Bounds {
                    min: Point2::new(values[0], values[1]),
                    max: Point2::new(values[2], values[3]),
                });
            }
            other => return Err(err(format!("unknown record '{other}'"))),
        }
    }
    let bounds = bounds.unwrap_or_else(|| {
        let all = segments
            .iter()
            .flat_map(|s| [s.a, s.b])
            .chain(points.iter().map(|p| p.pos));
        let (mut lo, mut hi) = (Point2::new(0.0, 0.0), Point2::new(0.0, 0.0));
        for p in all {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        Bounds {
            min: lo - Vector2::new(10.0, 10.0),
            max: hi + Vector2::new(10.0, 10.0),
        }
    });
    Ok(World {
        segments,
        point_reflectors: points,
        bounds,
    })
}

pub fn format_world(world: &World) -> String {
    let mut out = String::new();
    let b = &world.bounds;
    let _ = writeln!(out, "BOUNDS {} {} {} {}", b.min.x, b.min.y, b.max.x, b.max.y);
    for s in &world.segments {
        let _ = writeln!(out, "SEG {} {} {} {} {}", s.a.x, s.a.y, s.b.x, s.b.y, s.reflectivity);
    }
    for p in &world.point_reflectors {
        let _ = writeln!(out, "PT {} {} {}", p.pos.x, p.pos.y, p.reflectivity);
    }
    out
}

pub fn read_world(path: impl AsRef<FsPath>) -> Result<World> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_world(&text, &path.display().to_string())
}

pub fn write_world(world: &World, path: impl AsRef<FsPath>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_world(world)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub na: usize,
    pub nr: usize,
    pub gamma: f64,
    pub sweep_duration: f64,
    /// Return intensity of a unit reflector at 1 m.
    pub base_intensity: f64,
    pub range_falloff_exponent: f64,
    /// Relative standard deviation of the multiplicative speckle.
    pub speckle_sigma: f64,
    /// Mean of the additive exponential noise floor.
    pub noise_floor_mean: f64,
    /// Attenuation of single-bounce ghost echoes, in `[0, 1]`.
    pub multipath_gain: f64,
    /// Full two-sided beam width, radians.
    pub beam_width: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            na: 400,
            nr: 1000,
            gamma: 0.1,
            sweep_duration: 0.25,
            base_intensity: 5000.0,
            range_falloff_exponent: 1.0,
            speckle_sigma: 0.15,
            noise_floor_mean: 8.0,
            multipath_gain: 0.1,
            beam_width: 2f64.to_radians(),
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn noiseless(self) -> Self {
        Self {
            speckle_sigma: 0.0,
            noise_floor_mean: 0.0,
            multipath_gain: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.na == 0 || self.nr == 0 || !(self.gamma > 0.0) || !(self.sweep_duration > 0.0) {
            return Err(Error::Config("simulator: scan geometry must be positive".into()));
        }
        if !(self.base_intensity >= 0.0)
            || !(self.range_falloff_exponent >= 0.0)
            || !(self.speckle_sigma >= 0.0)
            || !(self.noise_floor_mean >= 0.0)
            || !(self.beam_width > 0.0)
        {
            return Err(Error::Config("simulator: negative or empty parameter".into()));
        }
        if !(0.0..=1.0).contains(&self.multipath_gain) {
            return Err(Error::Config("simulator: multipath gain outside [0, 1]".into()));
        }
        Ok(())
    }
}

const SUB_RAYS: usize = 5;

fn beam_pattern(offset: f64, beam_width: f64) -> f64 {
    let u = offset / (0.5 * beam_width);
    (-2.0 * u * u).exp()
}

fn deposit(row: &mut [f64], range: f64, gamma: f64, value: f64) {
    let d = (range / gamma).round() as i64;
    let nr = row.len() as i64;
    for (offset, scale) in [(-1i64, 0.5), (0, 1.0), (1, 0.5)] {
        let bin = d + offset;
        if (1..=nr).contains(&bin) {
            row[(bin - 1) as usize] += value * scale;
        }
    }
}

fn render_azimuth(world: &World, sensor: &Pose2, bearing: f64, cfg: &SimConfig) -> Vec<f64> {
    let mut row = vec![0.0; cfg.nr];
    let origin = Point2::new(sensor.x, sensor.y);
    let max_range = cfg.nr as f64 * cfg.gamma + cfg.gamma;
    let strength = |refl: f64, range: f64| {
        refl * cfg.base_intensity / range.max(cfg.gamma).powf(cfg.range_falloff_exponent)
    };

    // Extended surfaces: average over sub-rays across the beam.
    let mut weight_sum = 0.0;
    let subs: Vec<(f64, f64)> = (0..SUB_RAYS)
        .map(|k| {
            let off = (k as f64 / (SUB_RAYS - 1) as f64 - 0.5) * cfg.beam_width;
            let w = beam_pattern(off, cfg.beam_width);
            weight_sum += w;
            (off, w)
        })
        .collect();
    for &(off, w) in &subs {
        let phi = sensor.theta + bearing + off;
        let dir = Vector2::new(phi.cos(), phi.sin());
        if let Some((range, idx)) = world.cast(&origin, &dir, None) {
            if range > max_range {
                continue;
            }
            let seg = &world.segments[idx];
            let incidence = dir.dot(&seg.unit_normal()).abs();
            let value = strength(seg.reflectivity, range) * (0.3 + 0.7 * incidence) * w / weight_sum;
            deposit(&mut row, range, cfg.gamma, value);
        }
    }

    // Point reflectors within the beam, unless a wall is closer along their bearing.
    for pr in &world.point_reflectors {
        let rel = pr.pos - origin;
        let range = rel.norm();
        if range > max_range || range < 1e-6 {
            continue;
        }
        let off = normalize_angle(rel.y.atan2(rel.x) - sensor.theta - bearing);
        if off.abs() > 0.5 * cfg.beam_width {
            continue;
        }
        let dir = rel / range;
        if let Some((wall, _)) = world.cast(&origin, &dir, None) {
            if wall < range {
                continue;
            }
        }
        let value = strength(pr.reflectivity, range) * beam_pattern(off, cfg.beam_width);
        deposit(&mut row, range, cfg.gamma, value);
    }

    // Ghost: specular bounce off the wall hit by the beam center.
    if cfg.multipath_gain > 0.0 {
        let phi = sensor.theta + bearing;
        let dir = Vector2::new(phi.cos(), phi.sin());
        if let Some((r1, idx)) = world.cast(&origin, &dir, None) {
            let seg = &world.segments[idx];
            let n = seg.unit_normal();
            let bounced = dir - n * (2.0 * dir.dot(&n));
            let hit = origin + dir * r1;
            if let Some((r2, idx2)) = world.cast(&hit, &bounced, Some(idx)) {
                let total = r1 + r2;
                if total <= max_range {
                    let value = cfg.multipath_gain
                        * seg.reflectivity
                        * world.segments[idx2].reflectivity
                        * cfg.base_intensity
                        / total.powf(cfg.range_falloff_exponent);
                    deposit(&mut row, total, cfg.gamma, value);
                }
            }
        }
    }
    row
}

fn azimuth_seed(seed: u64, scan_index: u64, azimuth: usize) -> u64 {
    // SplitMix64 finalizer over the packed indices.
    let mut z = seed
        ^ scan_index.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (azimuth as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Renders one sweep; `pose_at(δ)` gives the world pose of the sensor `δ`
/// seconds after the sweep center.
pub fn render_with<F>(
    world: &World,
    pose_at: F,
    stamp: f64,
    scan_index: u64,
    cfg: &SimConfig,
) -> Result<PolarScan>
where
    F: Fn(f64) -> Pose2 + Sync,
{
    cfg.validate()?;
    let sensors: Vec<Pose2> = (0..cfg.na)
        .map(|a| pose_at(time_offset(a, cfg.na, cfg.sweep_duration)))
        .collect();
    for (a, s) in sensors.iter().enumerate() {
        if !world.bounds.contains(&Point2::new(s.x, s.y)) {
            return Err(Error::OutOfBounds {
                stamp: stamp + time_offset(a, cfg.na, cfg.sweep_duration),
                pose: (s.x, s.y),
            });
        }
    }
    let exp = (cfg.noise_floor_mean > 0.0).then(|| Exp::new(1.0 / cfg.noise_floor_mean).unwrap());
    let rows: Vec<Vec<u16>> = sensors
        .par_iter()
        .enumerate()
        .map(|(a, sensor)| {
            let bearing = TAU * a as f64 / cfg.na as f64;
            let signal = render_azimuth(world, sensor, bearing, cfg);
            let mut rng = ChaCha8Rng::seed_from_u64(azimuth_seed(cfg.seed, scan_index, a));
            signal
                .into_iter()
                .map(|s| {
                    let mut v = s;
                    if cfg.speckle_sigma > 0.0 && s > 0.0 {
                        let n: f64 = StandardNormal.sample(&mut rng);
                        v *= (1.0 + cfg.speckle_sigma * n).max(0.0);
                    }
                    if let Some(exp) = &exp {
                        v += exp.sample(&mut rng);
                    }
                    v.round().clamp(0.0, u16::MAX as f64) as u16
                })
                .collect()
        })
        .collect();
    PolarScan::from_intensities(
        cfg.na,
        cfg.nr,
        cfg.gamma,
        cfg.sweep_duration,
        stamp,
        rows.concat(),
    )
}

/// Renders a sweep centered at `pose_at_center` while moving at constant body-frame `velocity`.
pub fn render_scan(
    world: &World,
    pose_at_center: &Pose2,
    velocity: &Velocity2,
    cfg: &SimConfig,
) -> Result<PolarScan> {
    let center = *pose_at_center;
    let v = *velocity;
    render_with(world, move |dt| center.compose(&v.integrate(dt)), 0.0, 0, cfg)
}

/// A path parametrized by arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPath {
    pieces: Vec<Piece>,
    closed: bool,
    length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Piece {
    Line {
        start: Point2,
        heading: f64,
        length: f64,
    },
    Arc {
        center: Point2,
        radius: f64,
        start_angle: f64,
        /// Signed: positive turns left.
        sweep: f64,
    },
}

impl Piece {
    fn length(&self) -> f64 {
        match self {
            Piece::Line { length, .. } => *length,
            Piece::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    fn eval(&self, s: f64) -> (Pose2, f64) {
        match *self {
            Piece::Line {
                start,
                heading,
                ..
            } => (
                Pose2::new(start.x + s * heading.cos(), start.y + s * heading.sin(), heading),
                0.0,
            ),
            Piece::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let dir = sweep.signum();
                let ang = start_angle + dir * s / radius;
                let pos = center + Vector2::new(ang.cos(), ang.sin()) * radius;
                (Pose2::new(pos.x, pos.y, ang + dir * FRAC_PI_2), dir / radius)
            }
        }
    }
}

impl SimPath {
    /// Polyline through `waypoints` with circular fillets of radius `fillet` at the corners.
    pub fn polyline(waypoints: &[Point2], closed: bool, fillet: f64) -> Result<Self> {
        let n = waypoints.len();
        if n < 2 {
            return Err(Error::InvalidInput("a path needs at least two waypoints".into()));
        }
        let corner_count = if closed { n } else { n - 2 };
        // Tangent points and arcs per corner.
        let mut arcs: Vec<Option<(Point2, Point2, Piece)>> = vec![None; n];
        for c in 0..corner_count {
            let i = if closed { c } else { c + 1 };
            let prev = waypoints[(i + n - 1) % n];
            let here = waypoints[i];
            let next = waypoints[(i + 1) % n];
            let u1 = (here - prev).normalize();
            let u2 = (next - here).normalize();
            let turn = cross(&u1, &u2).atan2(u1.dot(&u2));
            if turn.abs() < 1e-9 || fillet <= 0.0 {
                continue;
            }
            let d = fillet * (turn.abs() / 2.0).tan();
            if d > 0.5 * (here - prev).norm() || d > 0.5 * (next - here).norm() {
                return Err(Error::InvalidInput(format!(
                    "fillet radius {fillet} too large for corner {i}"
                )));
            }
            let t_in = here - u1 * d;
            let t_out = here + u2 * d;
            let left = Vector2::new(-u1.y, u1.x);
            let center = t_in + left * (fillet * turn.signum());
            let start_angle = (t_in - center).y.atan2((t_in - center).x);
            arcs[i] = Some((
                t_in,
                t_out,
                Piece::Arc {
                    center,
                    radius: fillet,
                    start_angle,
                    sweep: turn,
                },
            ));
        }
        let mut pieces = Vec::new();
        let legs = if closed { n } else { n - 1 };
        let start_index = 0;
        for l in 0..legs {
            let i = (start_index + l) % n;
            let j = (i + 1) % n;
            let from = arcs[i].map(|a| a.1).unwrap_or(waypoints[i]);
            let to = arcs[j].map(|a| a.0).unwrap_or(waypoints[j]);
            let delta = to - from;
            if delta.norm() > 1e-12 {
                pieces.push(Piece::Line {
                    start: from,
                    heading: delta.y.atan2(delta.x),
                    length: delta.norm(),
                });
            }
            if let Some((_, _, arc)) = arcs[j] {
                if closed || j != n - 1 {
                    pieces.push(arc);
                }
            }
        }
        if closed {
            // Start at the first waypoint's outgoing tangent point.
            if let Some(pos) = pieces.iter().position(|p| matches!(p, Piece::Line { .. })) {
                pieces.rotate_left(pos);
            }
        }
        let length = pieces.iter().map(Piece::length).sum();
        Ok(Self {
            pieces,
            closed,
            length,
        })
    }

    /// Straight segment from `start` of the given length along `heading`.
    pub fn line(start: Point2, heading: f64, length: f64) -> Self {
        Self {
            pieces: vec![Piece::Line {
                start,
                heading,
                length,
            }],
            closed: false,
            length,
        }
    }

    /// Rounded rectangle centered at `center` with the given perimeter and
    /// width/height ratio, traversed counter-clockwise from the middle of the bottom side.
    pub fn rounded_rectangle(center: Point2, perimeter: f64, aspect: f64, fillet: f64) -> Result<Self> {
        // perimeter = 2(w + h) - 8r + 2πr
        let sum = (perimeter + 8.0 * fillet - TAU * fillet) / 2.0;
        let h = sum / (1.0 + aspect);
        let w = sum - h;
        let (hw, hh) = (w / 2.0, h / 2.0);
        let pts = [
            Point2::new(center.x, center.y - hh),
            Point2::new(center.x + hw, center.y - hh),
            Point2::new(center.x + hw, center.y + hh),
            Point2::new(center.x - hw, center.y + hh),
            Point2::new(center.x - hw, center.y - hh),
        ];
        Self::polyline(&pts, true, fillet)
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Pose and signed curvature at arc length `s`. Open paths continue straight
    /// beyond their ends; closed paths wrap.
    pub fn eval(&self, s: f64) -> (Pose2, f64) {
        let mut s = if self.closed {
            s.rem_euclid(self.length)
        } else {
            s
        };
        if s < 0.0 {
            let (p, _) = self.pieces[0].eval(0.0);
            return (p.compose(&Pose2::new(s, 0.0, 0.0)), 0.0);
        }
        for piece in &self.pieces {
            let len = piece.length();
            if s <= len {
                return piece.eval(s);
            }
            s -= len;
        }
        let last = self.pieces.last().unwrap();
        let (p, _) = last.eval(last.length());
        (p.compose(&Pose2::new(s, 0.0, 0.0)), 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpeedProfile {
    Constant(f64),
    /// `mean + amplitude·sin(2πt/period)`, `amplitude < mean`.
    Sinusoidal { mean: f64, amplitude: f64, period: f64 },
}

impl SpeedProfile {
    pub fn speed(&self, t: f64) -> f64 {
        match *self {
            SpeedProfile::Constant(v) => v,
            SpeedProfile::Sinusoidal {
                mean,
                amplitude,
                period,
            } => mean + amplitude * (TAU * t / period).sin(),
        }
    }

    /// Distance travelled after `t` seconds.
    pub fn distance(&self, t: f64) -> f64 {
        match *self {
            SpeedProfile::Constant(v) => v * t,
            SpeedProfile::Sinusoidal {
                mean,
                amplitude,
                period,
            } => mean * t + amplitude * period / TAU * (1.0 - (TAU * t / period).cos()),
        }
    }

    fn time_for(&self, distance: f64) -> f64 {
        match *self {
            SpeedProfile::Constant(v) => distance / v,
            SpeedProfile::Sinusoidal { mean, amplitude, .. } => {
                let (mut lo, mut hi) = (distance / (mean + amplitude), distance / (mean - amplitude));
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.distance(mid) < distance {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimTrajectory {
    /// Sensor parked at `pose` for `ticks` sweeps.
    Stationary { pose: Pose2, ticks: usize },
    Moving { path: SimPath, speed: SpeedProfile },
}

impl SimTrajectory {
    pub fn validate(&self) -> Result<()> {
        if let SimTrajectory::Moving { speed, .. } = self {
            let ok = match *speed {
                SpeedProfile::Constant(v) => v > 0.0,
                SpeedProfile::Sinusoidal {
                    mean,
                    amplitude,
                    period,
                } => mean > 0.0 && amplitude >= 0.0 && amplitude < mean && period > 0.0,
            };
            if !ok {
                return Err(Error::InvalidInput(
                    "speed profile must stay strictly positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// Pose at time `t` (seconds from the start).
    pub fn pose_at(&self, t: f64) -> Pose2 {
        match self {
            SimTrajectory::Stationary { pose, .. } => *pose,
            SimTrajectory::Moving { path, speed } => path.eval(speed.distance(t)).0,
        }
    }

    /// Body-frame velocity at time `t`.
    pub fn velocity_at(&self, t: f64) -> Velocity2 {
        match self {
            SimTrajectory::Stationary { .. } => Velocity2::zero(),
            SimTrajectory::Moving { path, speed } => {
                let v = speed.speed(t);
                let (_, curvature) = path.eval(speed.distance(t));
                Velocity2::new(v, 0.0, v * curvature)
            }
        }
    }

    /// Sweep-center times. Open paths get one sweep per period while the center
    /// lies before the end; closed paths end exactly where they started.
    pub fn sweep_times(&self, sweep_duration: f64) -> Vec<f64> {
        match self {
            SimTrajectory::Stationary { ticks, .. } => {
                (0..*ticks).map(|k| k as f64 * sweep_duration).collect()
            }
            SimTrajectory::Moving { path, speed } => {
                let total = speed.time_for(path.length());
                let n = (total / sweep_duration + 1e-9).floor() as usize;
                if path.is_closed() {
                    let n = ((total / sweep_duration).round() as usize).max(1);
                    (0..=n).map(|k| total * k as f64 / n as f64).collect()
                } else {
                    let n = if (n as f64 * sweep_duration - total).abs() < 1e-9 { n } else { n + 1 };
                    (0..n).map(|k| k as f64 * sweep_duration).collect()
                }
            }
        }
    }
}

/// Lazily rendered sweeps with their ground-truth poses.
pub struct SequenceGenerator<'a> {
    world: &'a World,
    traj: &'a SimTrajectory,
    cfg: SimConfig,
    times: Vec<f64>,
    next: usize,
}

impl<'a> SequenceGenerator<'a> {
    pub fn new(world: &'a World, traj: &'a SimTrajectory, cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        traj.validate()?;
        let times = traj.sweep_times(cfg.sweep_duration);
        // A sensor driving through a wall sees nothing useful; refuse early.
        for w in times.windows(2) {
            let (a, b) = (traj.pose_at(w[0]), traj.pose_at(w[1]));
            let (pa, pb) = (Point2::new(a.x, a.y), Point2::new(b.x, b.y));
            if let Some(f) = world.crossing(&pa, &pb) {
                let at = pa + (pb - pa) * f;
                return Err(Error::Collision {
                    stamp: w[0] + f * (w[1] - w[0]),
                    pose: (at.x, at.y),
                });
            }
        }
        Ok(Self {
            world,
            traj,
            cfg: *cfg,
            times,
            next: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn ground_truth(&self) -> Trajectory {
        Trajectory {
            poses: self
                .times
                .iter()
                .map(|&t| StampedPose::new(t, self.traj.pose_at(t)))
                .collect(),
        }
    }
}

impl Iterator for SequenceGenerator<'_> {
    type Item = Result<(PolarScan, StampedPose)>;

    fn next(&mut self) -> Option<Self::Item> {
        let t = *self.times.get(self.next)?;
        let index = self.next as u64;
        self.next += 1;
        let traj = self.traj;
        let scan = render_with(self.world, |dt| traj.pose_at(t + dt), t, index, &self.cfg);
        Some(scan.map(|s| (s, StampedPose::new(t, traj.pose_at(t)))))
    }
}

/// Renders the whole sequence in memory.
pub fn generate_sequence(
    world: &World,
    traj: &SimTrajectory,
    cfg: &SimConfig,
) -> Result<(Vec<PolarScan>, Trajectory)> {
    let generator = SequenceGenerator::new(world, traj, cfg)?;
    let truth = generator.ground_truth();
    let scans = generator
        .map(|r| r.map(|(scan, _)| scan))
        .collect::<Result<Vec<_>>>()?;
    Ok((scans, truth))
}

/// A 200 m × 200 m block of buildings, trees and poles around a 500 m loop
/// (see [`urban_loop`]).
pub fn urban_world(seed: u64) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world = World::empty(Bounds {
        min: Point2::new(-100.0, -100.0),
        max: Point2::new(100.0, 100.0),
    });
    let loop_path = urban_loop_path();
    // Half extents of the loop's bounding rectangle.
    let (hw, hh) = loop_half_extents();
    let setback = 9.0;

    let mut footprints: Vec<(Pose2, f64, f64)> = Vec::new();
    let mut building = |world: &mut World, center: Point2, size: (f64, f64), angle: f64, refl: f64| {
        world.add_building(center, size, angle, refl);
        footprints.push((Pose2::new(center.x, center.y, angle), size.0 / 2.0, size.1 / 2.0));
    };

    // Inner block: a grid of buildings inside the loop, separated by alleys.
    let inner = (hw - setback, hh - setback);
    let cols = 3;
    let rows = 2;
    let cell_w = 2.0 * inner.0 / cols as f64;
    let cell_h = 2.0 * inner.1 / rows as f64;
    for c in 0..cols {
        for r in 0..rows {
            let cx = -inner.0 + (c as f64 + 0.5) * cell_w + rng.random_range(-2.0..2.0);
            let cy = -inner.1 + (r as f64 + 0.5) * cell_h + rng.random_range(-2.0..2.0);
            let w = cell_w * rng.random_range(0.55..0.8);
            let h = cell_h * rng.random_range(0.55..0.8);
            let angle = rng.random_range(-6f64..6.0).to_radians();
            building(&mut world, Point2::new(cx, cy), (w, h), angle, rng.random_range(0.7..1.3));
        }
    }

    // Outer ring: rows of buildings facing the loop from outside.
    let outer_gap = setback;
    let rows_spec = [
        (-95.0, 95.0, hh + outer_gap, true, 1.0),
        (-95.0, 95.0, -hh - outer_gap, true, -1.0),
        (-hh, hh, hw + outer_gap, false, 1.0),
        (-hh, hh, -hw - outer_gap, false, -1.0),
    ];
    for (from, to, at, horizontal, outward) in rows_spec {
        let mut s = from;
        while s < to - 6.0 {
            let len = rng.random_range(10.0..24.0f64).min(to - s);
            let depth = rng.random_range(8.0..14.0);
            let jitter = rng.random_range(-1.5..1.5);
            let along = s + len / 2.0;
            let across = at + outward * (depth / 2.0 + jitter);
            let angle = rng.random_range(-4f64..4.0).to_radians();
            let (center, size) = if horizontal {
                (Point2::new(along, across), (len, depth))
            } else {
                (Point2::new(across, along), (depth, len))
            };
            building(&mut world, center, size, angle, rng.random_range(0.7..1.3));
            s += len + rng.random_range(3.0..9.0);
        }
    }

    // Street furniture: trees and poles on both sides, and parked cars.
    let mut s = 0.0;
    while s < loop_path.length() {
        let (p, _) = loop_path.eval(s);
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let q = p.transform_point(&Point2::new(0.0, side * rng.random_range(4.5..7.0)));
        world.add_point((q.x, q.y), rng.random_range(1.0..2.5));
        if rng.random_bool(0.25) {
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let c = p.transform_point(&Point2::new(0.0, side * rng.random_range(3.2..3.8)));
            let angle = p.theta + rng.random_range(-0.05..0.05);
            world.add_building(c, (4.4, 1.8), angle, rng.random_range(0.8..1.5));
        }
        s += rng.random_range(4.0..9.0);
    }

    // Scattered clutter away from the road: posts, bushes, sheds.
    let near_road = |q: &Point2| {
        let (hw, hh) = loop_half_extents();
        let dx = (q.x.abs() - hw).abs();
        let dy = (q.y.abs() - hh).abs();
        (dx < 8.0 && q.y.abs() < hh + 8.0) || (dy < 8.0 && q.x.abs() < hw + 8.0)
    };
    let inside_building = |q: &Point2, margin: f64| {
        footprints.iter().any(|(pose, hx, hy)| {
            let local = pose.inverse().transform_point(q);
            local.x.abs() < hx + margin && local.y.abs() < hy + margin
        })
    };
    let mut placed = 0;
    while placed < 260 {
        let q = Point2::new(rng.random_range(-97.0..97.0), rng.random_range(-97.0..97.0));
        if near_road(&q) || inside_building(&q, 1.5) {
            continue;
        }
        if placed % 6 == 0 {
            let size = (rng.random_range(2.0..5.0), rng.random_range(1.5..3.5));
            world.add_building(q, size, rng.random_range(0.0..PI), rng.random_range(0.8..1.5));
        } else {
            world.add_point((q.x, q.y), rng.random_range(0.8..2.5));
        }
        placed += 1;
    }
    world
}

fn loop_half_extents() -> (f64, f64) {
    let fillet = 10.0;
    let sum = (500.0 + 8.0 * fillet - TAU * fillet) / 2.0;
    let h = sum / (1.0 + 1.2);
    let w = sum - h;
    (w / 2.0, h / 2.0)
}

fn urban_loop_path() -> SimPath {
    SimPath::rounded_rectangle(Point2::origin(), 500.0, 1.2, 10.0).expect("valid loop geometry")
}

/// The benchmark loop: 500 m through [`urban_world`] at 5 ± 1.5 m/s.
///
/// A constant speed makes every sweep land at the same few offsets relative
/// to the keyframes' feature grids, which turns grid aliasing into a
/// systematic bias; real driving never holds speed that steadily.
pub fn default_loop() -> SimTrajectory {
    urban_loop(5.0, 1.5)
}

/// The 500 m loop through [`urban_world`] at `speed` m/s, optionally with a
/// sinusoidal speed variation of ±`accel_amplitude` m/s every 20 s.
pub fn urban_loop(speed: f64, accel_amplitude: f64) -> SimTrajectory {
    SimTrajectory::Moving {
        path: urban_loop_path(),
        speed: speed_profile(speed, accel_amplitude),
    }
}

/// A straight street of the given length lined with buildings whose side walls
/// face the direction of travel.
pub fn street_world(seed: u64, length: f64) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = length / 2.0 + 80.0;
    let mut world = World::empty(Bounds {
        min: Point2::new(-half, -60.0),
        max: Point2::new(half, 60.0),
    });
    for side in [1.0, -1.0] {
        let mut x = -half + 5.0;
        while x < half - 10.0 {
            let len = rng.random_range(8.0..16.0);
            let depth = rng.random_range(8.0..15.0);
            let y = side * (rng.random_range(8.0..14.0) + depth / 2.0);
            let angle = rng.random_range(-8f64..8.0).to_radians();
            world.add_building(Point2::new(x + len / 2.0, y), (len, depth), angle, rng.random_range(0.7..1.3));
            x += len + rng.random_range(4.0..10.0);
        }
    }
    let mut x = -half + 3.0;
    while x < half - 3.0 {
        world.add_point((x, rng.random_range(-6.0..6.0)), rng.random_range(0.3..0.8));
        x += rng.random_range(8.0..20.0);
    }
    world
}

/// Drive along the x axis of [`street_world`], centered at the origin, with an
/// optional sinusoidal speed variation of ±`accel_amplitude` m/s every 20 s.
pub fn street_run(length: f64, speed: f64, accel_amplitude: f64) -> SimTrajectory {
    SimTrajectory::Moving {
        path: SimPath::line(Point2::new(-length / 2.0, 0.0), 0.0, length),
        speed: speed_profile(speed, accel_amplitude),
    }
}

fn speed_profile(speed: f64, accel_amplitude: f64) -> SpeedProfile {
    if accel_amplitude > 0.0 {
        SpeedProfile::Sinusoidal {
            mean: speed,
            amplitude: accel_amplitude,
            period: 20.0,
        }
    } else {
        SpeedProfile::Constant(speed)
    }
}

/// Counter-clockwise circle of the given radius starting at angle `-π/2`.
pub fn circle_path(center: Point2, radius: f64) -> SimPath {
    let start = Point2::new(center.x, center.y - radius);
    SimPath {
        pieces: vec![Piece::Arc {
            center,
            radius,
            start_angle: -FRAC_PI_2,
            sweep: TAU,
        }],
        closed: true,
        length: TAU * radius,
    }
    .with_start_check(start)
}

impl SimPath {
    fn with_start_check(self, start: Point2) -> Self {
        debug_assert!({
            let (p, _) = self.eval(0.0);
            (p.x - start.x).hypot(p.y - start.y) < 1e-9
        });
        self
    }
}
