//! Passage geometry, camera optics, twin-cylinder pedestrians and the ray
//! intersection primitives shared by the depth renderer and the channel model.
//!
//! The world frame has its origin at the centre of the passage floor: `x`
//! runs along the passage, `y` across it and `z` up.

use std::ops::{Add, Mul, Neg, Sub};

/// A point or direction in the world frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Unit vector in the same direction. Zero vectors come back unchanged.
    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n == 0.0 {
            self
        } else {
            self * (1.0 / n)
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Rectangular passage centred on the origin. Walls stand at `x = ±length/2`
/// and `y = ±width/2`; there is no ceiling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Passage {
    pub length: f64,
    pub width: f64,
    pub wall_height: f64,
}

impl Default for Passage {
    fn default() -> Self {
        Self { length: 10.0, width: 4.0, wall_height: 10.0 }
    }
}

impl Passage {
    pub fn is_valid(&self) -> bool {
        self.length > 0.0 && self.width > 0.0 && self.wall_height > 0.0
    }
}

/// Stacked body and head cylinders sharing one vertical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwinCylinder {
    pub center_x: f64,
    pub center_y: f64,
    pub body_radius: f64,
    pub body_height: f64,
    pub head_radius: f64,
    pub head_top: f64,
}

impl TwinCylinder {
    pub const BODY_RADIUS: f64 = 0.20;
    pub const BODY_HEIGHT: f64 = 1.50;
    pub const HEAD_RADIUS: f64 = 0.10;
    pub const HEAD_TOP: f64 = 1.75;

    /// Adult-sized pedestrian standing at `(x, y)`.
    pub fn adult(x: f64, y: f64) -> Self {
        Self {
            center_x: x,
            center_y: y,
            body_radius: Self::BODY_RADIUS,
            body_height: Self::BODY_HEIGHT,
            head_radius: Self::HEAD_RADIUS,
            head_top: Self::HEAD_TOP,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.body_radius > 0.0
            && self.head_radius > 0.0
            && self.head_radius < self.body_radius
            && self.body_height > 0.0
            && self.head_top > self.body_height
    }

    /// Nearest hit of the ray on either cylinder.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let axis = (self.center_x, self.center_y);
        let body = ray_cylinder_intersect(origin, dir, axis, self.body_radius, 0.0, self.body_height);
        let head = ray_cylinder_intersect(
            origin,
            dir,
            axis,
            self.head_radius,
            self.body_height,
            self.head_top,
        );
        match (body, head) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

/// Walking direction, named after the passage end a pedestrian entered from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// Entered at `x = -length/2`, walks towards `+x`.
    Left,
    /// Entered at `x = +length/2`, walks towards `-x`.
    Right,
}

impl Side {
    pub fn tag(self) -> &'static str {
        match self {
            Side::Left => "L",
            Side::Right => "R",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pedestrian {
    pub id: u64,
    pub side: Side,
    pub shape: TwinCylinder,
    /// Signed x-velocity in m/s.
    pub velocity: f64,
}

/// Live scene contents at one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneState {
    pub frame_index: u64,
    pub pedestrians: Vec<Pedestrian>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkEndpoints {
    pub ap_pos: Vec3,
    pub sta_pos: Vec3,
}

impl Default for LinkEndpoints {
    fn default() -> Self {
        Self { ap_pos: Vec3::new(0.0, -2.0, 2.25), sta_pos: Vec3::new(0.0, 2.0, 1.25) }
    }
}

impl LinkEndpoints {
    pub fn distance(&self) -> f64 {
        (self.sta_pos - self.ap_pos).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraConfig {
    pub position: Vec3,
    pub look_at: Vec3,
    pub hfov_deg: f64,
    pub vfov_deg: f64,
    pub width_px: u32,
    pub height_px: u32,
    pub min_range: f64,
    pub max_range: f64,
    pub fps: u32,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            position: Vec3::new(0.0, -2.0, 2.25),
            look_at: Vec3::new(0.0, 0.0, 1.75),
            hfov_deg: 70.0,
            vfov_deg: 60.0,
            width_px: 512,
            height_px: 424,
            min_range: 0.5,
            max_range: 8.0,
            fps: 30,
        }
    }
}

impl CameraConfig {
    /// Checks the optical invariants; returns the name of the first
    /// offending field.
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return Err("hfov_deg");
        }
        if !(self.vfov_deg > 0.0 && self.vfov_deg < 180.0) {
            return Err("vfov_deg");
        }
        if !(self.min_range > 0.0 && self.min_range < self.max_range) {
            return Err("min_range");
        }
        if self.width_px == 0 {
            return Err("width_px");
        }
        if self.height_px == 0 {
            return Err("height_px");
        }
        if self.fps == 0 {
            return Err("fps");
        }
        if !self.position.is_finite() || !self.look_at.is_finite() {
            return Err("position");
        }
        if (self.look_at - self.position).norm() == 0.0 {
            return Err("look_at");
        }
        Ok(())
    }

    /// Orthonormal (forward, right, up) camera basis. The up vector is world
    /// `+z` projected onto the image plane; a camera looking straight up or
    /// down falls back to world `+y` as the reference.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = (self.look_at - self.position).normalized();
        let world_up = Vec3::new(0.0, 0.0, 1.0);
        let reference = if forward.dot(world_up).abs() > 1.0 - 1e-9 {
            Vec3::new(0.0, 1.0, 0.0)
        } else {
            world_up
        };
        let right = forward.cross(reference).normalized();
        let up = right.cross(forward);
        (forward, right, up)
    }
}

/// Pinhole ray through continuous image coordinates `(px, py)`.
///
/// Pixel coordinates address pixel corners: `px = width/2` is the boresight
/// column and `px = 0` / `px = width` are the left and right image edges at
/// `∓hfov/2`. Rows grow downwards.
pub fn camera_ray(cam: &CameraConfig, px: f64, py: f64) -> (Vec3, Vec3) {
    let (forward, right, up) = cam.basis();
    let half_w = cam.width_px as f64 / 2.0;
    let half_h = cam.height_px as f64 / 2.0;
    let u = (px - half_w) / half_w * (cam.hfov_deg.to_radians() / 2.0).tan();
    let v = (half_h - py) / half_h * (cam.vfov_deg.to_radians() / 2.0).tan();
    let dir = (forward + right * u + up * v).normalized();
    (cam.position, dir)
}

/// Smallest `t >= 0` where the ray meets a vertical finite cylinder (lateral
/// surface or either cap). `dir` must be unit length.
pub fn ray_cylinder_intersect(
    origin: Vec3,
    dir: Vec3,
    axis_xy: (f64, f64),
    radius: f64,
    z_lo: f64,
    z_hi: f64,
) -> Option<f64> {
    let ox = origin.x - axis_xy.0;
    let oy = origin.y - axis_xy.1;
    let r2 = radius * radius;
    if ox * ox + oy * oy <= r2 && origin.z >= z_lo && origin.z <= z_hi {
        return Some(0.0);
    }
    let mut best: Option<f64> = None;
    let mut take = |t: f64| {
        if t >= 0.0 && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };

    // lateral surface
    let a = dir.x * dir.x + dir.y * dir.y;
    if a > 1e-15 {
        let b = ox * dir.x + oy * dir.y;
        let c = ox * ox + oy * oy - r2;
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-b - sq) / a, (-b + sq) / a] {
                let z = origin.z + t * dir.z;
                if z >= z_lo && z <= z_hi {
                    take(t);
                }
            }
        }
    }

    // caps
    if dir.z.abs() > 1e-15 {
        for zc in [z_lo, z_hi] {
            let t = (zc - origin.z) / dir.z;
            let x = ox + t * dir.x;
            let y = oy + t * dir.y;
            if x * x + y * y <= r2 {
                take(t);
            }
        }
    }
    best
}

/// What a scene ray landed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HitObject {
    /// End wall at `x = -length/2`.
    WallXNeg,
    /// End wall at `x = +length/2`.
    WallXPos,
    /// Side wall at `y = -width/2`.
    WallYNeg,
    /// Side wall at `y = +width/2`.
    WallYPos,
    Floor,
    /// Pedestrian by id.
    Pedestrian(u64),
}

impl HitObject {
    pub fn is_wall(self) -> bool {
        matches!(self, Self::WallXNeg | Self::WallXPos | Self::WallYNeg | Self::WallYPos)
    }
}

const CLIP_EPS: f64 = 1e-9;

/// Intersections with the static passage planes, each clipped to the box.
/// Planes face inwards: a ray only hits one while travelling out of the
/// passage, so a viewpoint mounted on a wall sees past it.
pub fn ray_static_hits(origin: Vec3, dir: Vec3, passage: &Passage) -> [Option<f64>; 5] {
    let hl = passage.length / 2.0;
    let hw = passage.width / 2.0;
    let within = |p: Vec3| {
        p.x.abs() <= hl + CLIP_EPS
            && p.y.abs() <= hw + CLIP_EPS
            && p.z >= -CLIP_EPS
            && p.z <= passage.wall_height + CLIP_EPS
    };
    let plane = |coord: f64, d: f64, target: f64| -> Option<f64> {
        // outward travel means d has the sign of the plane's offset (floor: below)
        if d.abs() < 1e-15 || (d > 0.0) != (target > 0.0) {
            return None;
        }
        let t = (target - coord) / d;
        if t < 0.0 {
            return None;
        }
        within(origin + dir * t).then_some(t)
    };
    [
        plane(origin.x, dir.x, -hl),
        plane(origin.x, dir.x, hl),
        plane(origin.y, dir.y, -hw),
        plane(origin.y, dir.y, hw),
        plane(origin.z, dir.z, 0.0),
    ]
}

/// Nearest hit among walls, floor and pedestrians.
pub fn ray_scene_intersect(
    origin: Vec3,
    dir: Vec3,
    scene: &SceneState,
    passage: &Passage,
) -> Option<(f64, HitObject)> {
    const STATIC: [HitObject; 5] = [
        HitObject::WallXNeg,
        HitObject::WallXPos,
        HitObject::WallYNeg,
        HitObject::WallYPos,
        HitObject::Floor,
    ];
    let mut best: Option<(f64, HitObject)> = None;
    for (hit, obj) in ray_static_hits(origin, dir, passage).into_iter().zip(STATIC) {
        if let Some(t) = hit {
            if best.is_none_or(|(b, _)| t < b) {
                best = Some((t, obj));
            }
        }
    }
    for ped in &scene.pedestrians {
        let s = &ped.shape;
        // reject pedestrians whose bounding circle the ray's ground track misses
        let ox = origin.x - s.center_x;
        let oy = origin.y - s.center_y;
        let a = dir.x * dir.x + dir.y * dir.y;
        if a > 1e-15 {
            let tc = (-(ox * dir.x + oy * dir.y) / a).max(0.0);
            let dx = ox + tc * dir.x;
            let dy = oy + tc * dir.y;
            if dx * dx + dy * dy > s.body_radius * s.body_radius * (1.0 + 1e-9) {
                continue;
            }
        }
        if let Some(t) = s.intersect(origin, dir) {
            if best.is_none_or(|(b, _)| t < b) {
                best = Some((t, HitObject::Pedestrian(ped.id)));
            }
        }
    }
    best
}

/// Where a pedestrian's vertical axis meets the AP-STA line of sight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LosCrossing {
    /// Distance from the AP to the crossing point.
    pub d1: f64,
    /// Distance from the STA to the crossing point.
    pub d2: f64,
    /// Signed horizontal offset of the pedestrian axis from the LOS line.
    pub center_offset: f64,
    /// Signed offsets of the body silhouette's two vertical edges,
    /// `(center_offset - body_radius, center_offset + body_radius)`.
    pub lateral_offsets: (f64, f64),
    /// Height of the LOS line at the crossing.
    pub los_height: f64,
}

/// Projects the pedestrian axis onto the AP-STA segment in the horizontal
/// plane. Returns `None` when the foot lies outside the open segment.
pub fn los_crossing(link: &LinkEndpoints, ped: &TwinCylinder) -> Option<LosCrossing> {
    let a = link.ap_pos;
    let seg = link.sta_pos - a;
    let hx = seg.x;
    let hy = seg.y;
    let h2 = hx * hx + hy * hy;
    if h2 < 1e-18 {
        return None;
    }
    let px = ped.center_x - a.x;
    let py = ped.center_y - a.y;
    let u = (px * hx + py * hy) / h2;
    if u <= 0.0 || u >= 1.0 {
        return None;
    }
    let len = seg.norm();
    let hlen = h2.sqrt();
    // positive to the right of the AP->STA ground track
    let center_offset = (hy * px - hx * py) / hlen;
    Some(LosCrossing {
        d1: u * len,
        d2: (1.0 - u) * len,
        center_offset,
        lateral_offsets: (center_offset - ped.body_radius, center_offset + ped.body_radius),
        los_height: a.z + u * seg.z,
    })
}
