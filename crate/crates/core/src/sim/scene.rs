//! Scene description and ray casting.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{forward_looking_extrinsic, CameraModel};
use crate::cloud::Rgb;
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::mask::ClassInfo;

use super::degrade::MaskDegradation;

const HIT_EPS: f64 = 1e-9;

/// Static or moving rigid body. For moving objects `center` is an offset
/// from the current path point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum Primitive {
    /// Axis-aligned box given by its center and full extents.
    Box {
        center: [f64; 3],
        size: [f64; 3],
        #[serde(default = "grey")]
        color: Rgb,
    },
    /// Vertical cylinder; `center` is the center of the bottom cap.
    Cylinder {
        center: [f64; 3],
        radius: f64,
        height: f64,
        #[serde(default = "grey")]
        color: Rgb,
    },
}

fn grey() -> Rgb {
    [128, 128, 128]
}

impl Primitive {
    pub fn color(&self) -> Rgb {
        match self {
            Primitive::Box { color, .. } | Primitive::Cylinder { color, .. } => *color,
        }
    }

    fn valid(&self) -> bool {
        match self {
            Primitive::Box { size, .. } => size.iter().all(|s| *s > 0.0 && s.is_finite()),
            Primitive::Cylinder { radius, height, .. } => *radius > 0.0 && *height > 0.0,
        }
    }

    /// Axis-aligned bounds when placed at `offset`.
    pub fn bounds(&self, offset: &Vec3) -> (Vec3, Vec3) {
        match self {
            Primitive::Box { center, size, .. } => {
                let c = Vec3::from(*center) + offset;
                let h = Vec3::from(*size) / 2.0;
                (c - h, c + h)
            }
            Primitive::Cylinder { center, radius, height, .. } => {
                let c = Vec3::from(*center) + offset;
                (c - Vec3::new(*radius, *radius, 0.0), c + Vec3::new(*radius, *radius, *height))
            }
        }
    }

    /// Distance along the unit ray to the first surface hit from outside.
    pub fn intersect(&self, offset: &Vec3, o: &Vec3, d: &Vec3) -> Option<f64> {
        match self {
            Primitive::Box { .. } => {
                let (lo, hi) = self.bounds(offset);
                slab(&lo, &hi, o, d)
            }
            Primitive::Cylinder { center, radius, height, .. } => {
                let c = Vec3::from(*center) + offset;
                cylinder(&c, *radius, *height, o, d)
            }
        }
    }

    /// Distance of `p` to the primitive surface (used by tests and checks).
    pub fn surface_distance(&self, offset: &Vec3, p: &Vec3) -> f64 {
        match self {
            Primitive::Box { .. } => {
                let (lo, hi) = self.bounds(offset);
                let c = (lo + hi) / 2.0;
                let h = (hi - lo) / 2.0;
                let q = (p - c).abs() - h;
                let outside = q.sup(&Vec3::zeros()).norm();
                if outside > 0.0 {
                    outside
                } else {
                    -q.max()
                }
            }
            Primitive::Cylinder { center, radius, height, .. } => {
                let c = Vec3::from(*center) + offset;
                let r = ((p.x - c.x).powi(2) + (p.y - c.y).powi(2)).sqrt() - radius;
                let z = (p.z - c.z - height / 2.0).abs() - height / 2.0;
                if r <= 0.0 && z <= 0.0 {
                    r.max(z).abs()
                } else {
                    (r.max(0.0).powi(2) + z.max(0.0).powi(2)).sqrt()
                }
            }
        }
    }
}

fn slab(lo: &Vec3, hi: &Vec3, o: &Vec3, d: &Vec3) -> Option<f64> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for i in 0..3 {
        if d[i].abs() < 1e-15 {
            if o[i] < lo[i] || o[i] > hi[i] {
                return None;
            }
            continue;
        }
        let a = (lo[i] - o[i]) / d[i];
        let b = (hi[i] - o[i]) / d[i];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t0 <= t1 && t0 > HIT_EPS).then_some(t0)
}

fn cylinder(c: &Vec3, r: f64, h: f64, o: &Vec3, d: &Vec3) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut consider = |t: f64| {
        if t > HIT_EPS && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };
    let (ox, oy) = (o.x - c.x, o.y - c.y);
    let a = d.x * d.x + d.y * d.y;
    if a > 1e-15 {
        let b = 2.0 * (ox * d.x + oy * d.y);
        let cc = ox * ox + oy * oy - r * r;
        let disc = b * b - 4.0 * a * cc;
        if disc >= 0.0 {
            let s = disc.sqrt();
            for t in [(-b - s) / (2.0 * a), (-b + s) / (2.0 * a)] {
                let z = o.z + t * d.z;
                if z >= c.z && z <= c.z + h {
                    consider(t);
                }
            }
        }
    }
    if d.z.abs() > 1e-15 {
        for zc in [c.z, c.z + h] {
            let t = (zc - o.z) / d.z;
            let (x, y) = (ox + t * d.x, oy + t * d.y);
            if x * x + y * y <= r * r {
                consider(t);
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Room {
    /// Extents along x and y (centered on the origin) and height (floor at
    /// z = 0).
    pub size: [f64; 3],
    #[serde(default = "room_colors")]
    pub colors: [Rgb; 6],
}

fn room_colors() -> [Rgb; 6] {
    [[200, 180, 160], [190, 170, 150], [170, 190, 200], [160, 180, 190], [90, 90, 100], [230, 230, 230]]
}

impl Room {
    /// Exit distance of a ray starting inside; face order -x, +x, -y, +y,
    /// floor, ceiling.
    pub fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<(f64, usize)> {
        let lo = Vec3::new(-self.size[0] / 2.0, -self.size[1] / 2.0, 0.0);
        let hi = Vec3::new(self.size[0] / 2.0, self.size[1] / 2.0, self.size[2]);
        let mut best: Option<(f64, usize)> = None;
        for i in 0..3 {
            if d[i].abs() < 1e-15 {
                continue;
            }
            let (bound, face) = if d[i] > 0.0 { (hi[i], 2 * i + 1) } else { (lo[i], 2 * i) };
            let t = (bound - o[i]) / d[i];
            if t > HIT_EPS && best.is_none_or(|(b, _)| t < b) {
                best = Some((t, face));
            }
        }
        best
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        p.x.abs() < self.size[0] / 2.0 && p.y.abs() < self.size[1] / 2.0 && p.z > 0.0 && p.z < self.size[2]
    }

    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        let d = [
            p.x + self.size[0] / 2.0,
            self.size[0] / 2.0 - p.x,
            p.y + self.size[1] / 2.0,
            self.size[1] / 2.0 - p.y,
            p.z,
            self.size[2] - p.z,
        ];
        d.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)
    }
}

/// Ping-pong motion along a polyline at constant speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoints {
    pub waypoints: Vec<[f64; 3]>,
    /// m/s; zero keeps the first waypoint.
    #[serde(default)]
    pub speed: f64,
    /// Arc length already travelled at t = 0 (m).
    #[serde(default)]
    pub phase: f64,
}

impl Waypoints {
    pub fn stationary(p: [f64; 3]) -> Self {
        Self {
            waypoints: vec![p],
            speed: 0.0,
            phase: 0.0,
        }
    }

    fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| (Vec3::from(w[1]) - Vec3::from(w[0])).norm())
            .sum()
    }

    pub fn position(&self, t: f64) -> Vec3 {
        let first = Vec3::from(self.waypoints[0]);
        let len = self.length();
        if len <= 0.0 || self.speed == 0.0 && self.phase == 0.0 {
            return first;
        }
        let mut s = (self.speed * t + self.phase).rem_euclid(2.0 * len);
        if s > len {
            s = 2.0 * len - s;
        }
        for w in self.waypoints.windows(2) {
            let (a, b) = (Vec3::from(w[0]), Vec3::from(w[1]));
            let l = (b - a).norm();
            if s <= l && l > 0.0 {
                return a + (b - a) * (s / l);
            }
            s -= l;
        }
        Vec3::from(*self.waypoints.last().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovingObject {
    pub body: Primitive,
    pub path: Waypoints,
    pub class_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub points_per_scan: usize,
    pub rings: usize,
    /// Vertical field of view, lower and upper bound (degrees).
    pub vertical_fov_deg: [f64; 2],
    pub range_noise: f64,
    pub min_range: f64,
    pub max_range: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            points_per_scan: 20_000,
            rings: 64,
            vertical_fov_deg: [-60.0, 60.0],
            range_noise: 0.005,
            min_range: 0.2,
            max_range: 30.0,
        }
    }
}

impl SensorConfig {
    /// Unit ray directions in the sensor frame, ring-major.
    pub fn directions(&self) -> Vec<Vec3> {
        let rings = self.rings.max(1);
        let cols = self.points_per_scan.div_ceil(rings);
        let [lo, hi] = self.vertical_fov_deg.map(f64::to_radians);
        (0..self.points_per_scan)
            .map(|i| {
                let (r, c) = (i / cols, i % cols);
                let el = lo + (r as f64 + 0.5) / rings as f64 * (hi - lo);
                let az = -PI + (c as f64 + 0.5) / cols as f64 * 2.0 * PI;
                Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub width: usize,
    pub height: usize,
    /// Camera center in the sensor frame (m).
    pub offset: [f64; 3],
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fx: 200.0,
            fy: 200.0,
            width: 320,
            height: 240,
            offset: [0.05, 0.0, -0.05],
        }
    }
}

impl CameraConfig {
    pub fn model(&self) -> Result<CameraModel> {
        CameraModel::new(
            self.fx,
            self.fy,
            self.width as f64 / 2.0,
            self.height as f64 / 2.0,
            self.width,
            self.height,
            forward_looking_extrinsic(Vec3::from(self.offset)),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorTrajectory {
    pub path: Waypoints,
    #[serde(default)]
    pub yaw_deg: f64,
    /// Sinusoidal yaw oscillation amplitude (degrees).
    #[serde(default)]
    pub yaw_amplitude_deg: f64,
    #[serde(default = "one")]
    pub yaw_period: f64,
}

fn one() -> f64 {
    1.0
}

impl SensorTrajectory {
    pub fn pose(&self, t: f64) -> Pose {
        let yaw = self.yaw_deg + self.yaw_amplitude_deg * (2.0 * PI * t / self.yaw_period).sin();
        Pose::from_axis_angle(Vec3::z() * yaw.to_radians(), self.path.position(t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub frames: usize,
    pub frame_rate: f64,
    pub room: Room,
    pub obstacles: Vec<Primitive>,
    pub objects: Vec<MovingObject>,
    pub sensor: SensorConfig,
    pub camera: CameraConfig,
    pub trajectory: SensorTrajectory,
    pub degradation: MaskDegradation,
    /// Class table; the built-in one when empty.
    pub classes: Vec<ClassInfo>,
}

impl Default for SceneConfig {
    /// Stationary sensor in a furnished room, one person-class box walking
    /// back and forth in front of the camera.
    fn default() -> Self {
        Self {
            seed: 1,
            frames: 100,
            frame_rate: 10.0,
            room: Room {
                size: [8.0, 6.0, 3.0],
                colors: room_colors(),
            },
            obstacles: vec![
                Primitive::Box {
                    center: [-2.8, -2.0, 0.5],
                    size: [1.2, 1.0, 1.0],
                    color: [120, 60, 40],
                },
                Primitive::Cylinder {
                    center: [-1.5, 2.0, 0.0],
                    radius: 0.25,
                    height: 3.0,
                    color: [80, 120, 80],
                },
                Primitive::Box {
                    center: [1.0, -2.6, 0.4],
                    size: [0.8, 0.6, 0.8],
                    color: [60, 60, 140],
                },
            ],
            objects: vec![MovingObject {
                body: Primitive::Box {
                    center: [0.0, 0.0, 1.3],
                    size: [0.4, 0.5, 1.6],
                    color: [220, 40, 40],
                },
                path: Waypoints {
                    waypoints: vec![[2.6, -1.4, 0.0], [2.6, 1.4, 0.0]],
                    speed: 0.8,
                    phase: 0.0,
                },
                class_id: 0,
            }],
            sensor: SensorConfig::default(),
            camera: CameraConfig::default(),
            trajectory: SensorTrajectory {
                path: Waypoints::stationary([0.0, 0.0, 1.2]),
                yaw_deg: 0.0,
                yaw_amplitude_deg: 0.0,
                yaw_period: 1.0,
            },
            degradation: MaskDegradation::default(),
            classes: Vec::new(),
        }
    }
}

impl SceneConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.frames == 0 {
            return bad("scene needs at least one frame".into());
        }
        if !(self.frame_rate > 0.0) {
            return bad(format!("frame_rate must be positive, got {}", self.frame_rate));
        }
        if self.room.size.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad(format!("room size must be positive, got {:?}", self.room.size));
        }
        if self.sensor.points_per_scan == 0 || self.sensor.rings == 0 {
            return bad("sensor needs points_per_scan > 0 and rings > 0".into());
        }
        let [lo, hi] = self.sensor.vertical_fov_deg;
        if !(lo < hi && lo >= -90.0 && hi <= 90.0) {
            return bad(format!("invalid vertical field of view [{lo}, {hi}]"));
        }
        if !(self.sensor.range_noise >= 0.0) || !(self.sensor.max_range > self.sensor.min_range) {
            return bad("invalid sensor noise or range limits".into());
        }
        if !(self.trajectory.yaw_period > 0.0) {
            return bad("yaw_period must be positive".into());
        }
        for (name, path) in std::iter::once(("trajectory", &self.trajectory.path))
            .chain(self.objects.iter().map(|o| ("object", &o.path)))
        {
            if path.waypoints.is_empty() || !(path.speed >= 0.0) {
                return bad(format!("{name} path needs waypoints and a non-negative speed"));
            }
        }
        if let Some(p) = self.obstacles.iter().chain(self.objects.iter().map(|o| &o.body)).find(|p| !p.valid()) {
            return bad(format!("degenerate primitive {p:?}"));
        }
        let start = self.trajectory.pose(0.0).translation;
        if !self.room.contains(&start) {
            return bad(format!("sensor start {start:?} is outside the room"));
        }
        self.degradation.validate()?;
        self.camera.model()?;
        let registry = self.registry()?;
        if let Some(o) = self.objects.iter().find(|o| registry.by_id(o.class_id).is_none()) {
            return bad(format!("object class {} is not in the class table", o.class_id));
        }
        Ok(())
    }

    pub fn registry(&self) -> Result<crate::mask::ClassRegistry> {
        if self.classes.is_empty() {
            Ok(Default::default())
        } else {
            crate::mask::ClassRegistry::new(self.classes.clone())
        }
    }
}

/// What a ray hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Room(usize),
    Obstacle(usize),
    /// Index into the moving objects.
    Object(usize),
}

/// Scene geometry frozen at one instant.
#[derive(Debug, Clone)]
pub struct Snapshot<'a> {
    pub cfg: &'a SceneConfig,
    pub object_offsets: Vec<Vec3>,
    object_bounds: Vec<(Vec3, Vec3)>,
}

impl<'a> Snapshot<'a> {
    pub fn at(cfg: &'a SceneConfig, t: f64) -> Self {
        let object_offsets: Vec<Vec3> = cfg.objects.iter().map(|o| o.path.position(t)).collect();
        let object_bounds = cfg
            .objects
            .iter()
            .zip(&object_offsets)
            .map(|(o, off)| o.body.bounds(off))
            .collect();
        Self {
            cfg,
            object_offsets,
            object_bounds,
        }
    }

    pub fn object_bounds(&self, i: usize) -> (Vec3, Vec3) {
        self.object_bounds[i]
    }

    /// Nearest hit along a unit ray starting inside the room.
    pub fn cast(&self, o: &Vec3, d: &Vec3) -> Option<(f64, Surface)> {
        let mut best = self.cfg.room.intersect(o, d).map(|(t, f)| (t, Surface::Room(f)));
        let mut take = |t: Option<f64>, s: Surface| {
            if let Some(t) = t {
                if best.is_none_or(|(b, _)| t < b) {
                    best = Some((t, s));
                }
            }
        };
        let zero = Vec3::zeros();
        for (i, p) in self.cfg.obstacles.iter().enumerate() {
            take(p.intersect(&zero, o, d), Surface::Obstacle(i));
        }
        for (i, obj) in self.cfg.objects.iter().enumerate() {
            take(obj.body.intersect(&self.object_offsets[i], o, d), Surface::Object(i));
        }
        best
    }

    pub fn color(&self, s: Surface) -> Rgb {
        match s {
            Surface::Room(f) => self.cfg.room.colors[f],
            Surface::Obstacle(i) => self.cfg.obstacles[i].color(),
            Surface::Object(i) => self.cfg.objects[i].body.color(),
        }
    }

    /// Distance from `p` to the surface `s`.
    pub fn surface_distance(&self, s: Surface, p: &Vec3) -> f64 {
        match s {
            Surface::Room(_) => self.cfg.room.surface_distance(p),
            Surface::Obstacle(i) => self.cfg.obstacles[i].surface_distance(&Vec3::zeros(), p),
            Surface::Object(i) => self.cfg.objects[i].body.surface_distance(&self.object_offsets[i], p),
        }
    }
}
