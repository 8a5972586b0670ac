//! Orientation math and the overlapping viewport grid.
//!
//! Directions are expressed as (yaw, pitch) in degrees: yaw in (-180, 180]
//! measured about +z from +x, pitch in [-90, 90] above the horizon. The
//! viewing axis of a pose is the image of +x under the pose rotation.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::ops::{Mul, Neg};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const EPS_DEG: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion::new(1.0, 0.0, 0.0, 0.0);

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n == 0.0 || angle == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (angle / 2.0).sin_cos();
        Quaternion::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    /// Exponential map of a rotation vector (axis scaled by angle, radians).
    pub fn from_rotation_vector(v: [f64; 3]) -> Self {
        let angle = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        Self::from_axis_angle(v, angle)
    }

    /// Pose looking at (yaw, pitch) degrees with zero roll.
    pub fn from_yaw_pitch(yaw_deg: f64, pitch_deg: f64) -> Self {
        // Positive pitch lifts +x towards +z, i.e. a negative rotation about +y.
        let yaw = Self::from_axis_angle([0.0, 0.0, 1.0], yaw_deg.to_radians());
        let pitch = Self::from_axis_angle([0.0, 1.0, 0.0], -pitch_deg.to_radians());
        yaw * pitch
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quaternion::new(a[0], a[1], a[2], a[3])
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn conjugate(&self) -> Self {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn normalize(&self) -> Result<Quaternion> {
        normalize(*self)
    }

    /// Rotate a 3-vector by this (unit) quaternion.
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let p = Quaternion::new(0.0, v[0], v[1], v[2]);
        let r = *self * p * self.conjugate();
        [r.x, r.y, r.z]
    }

    /// Unit viewing axis (image of +x).
    pub fn view_axis(&self) -> [f64; 3] {
        let Quaternion { w, x, y, z } = *self;
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y + w * z),
            2.0 * (x * z - w * y),
        ]
    }

    /// Viewing direction as (yaw, pitch) degrees; roll is discarded.
    pub fn view_direction(&self) -> Direction {
        Direction::from_vector(self.view_axis())
    }

    /// Rotation vector (axis × angle) of this unit quaternion, taking the
    /// short way round.
    pub fn to_rotation_vector(&self) -> [f64; 3] {
        let q = if self.w < 0.0 { -*self } else { *self };
        let s = (q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
        if s < 1e-15 {
            return [2.0 * q.x, 2.0 * q.y, 2.0 * q.z];
        }
        let angle = 2.0 * s.atan2(q.w);
        [q.x / s * angle, q.y / s * angle, q.z / s * angle]
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, r: Quaternion) -> Quaternion {
        let l = self;
        Quaternion::new(
            l.w * r.w - l.x * r.x - l.y * r.y - l.z * r.z,
            l.w * r.x + l.x * r.w + l.y * r.z - l.z * r.y,
            l.w * r.y - l.x * r.z + l.y * r.w + l.z * r.x,
            l.w * r.z + l.x * r.y - l.y * r.x + l.z * r.w,
        )
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Quaternion {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }
}

pub fn normalize(q: Quaternion) -> Result<Quaternion> {
    let n = q.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Domain(format!("cannot normalize quaternion {q:?}")));
    }
    Ok(Quaternion::new(q.w / n, q.x / n, q.y / n, q.z / n))
}

/// Rotation angle in radians between two orientations, in `[0, π]`.
pub fn angular_distance(q0: Quaternion, q1: Quaternion) -> Result<f64> {
    let a = normalize(q0)?;
    let b = normalize(q1)?;
    let d = a.dot(&b).abs().clamp(-1.0, 1.0);
    Ok(2.0 * d.acos())
}

/// Flip signs so that consecutive quaternions have a non-negative dot
/// product. Orientations are unchanged.
pub fn sign_continuize(poses: &mut [Quaternion]) {
    for i in 1..poses.len() {
        if poses[i].dot(&poses[i - 1]) < 0.0 {
            poses[i] = -poses[i];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub yaw: f64,
    pub pitch: f64,
}

impl Direction {
    pub fn new(yaw: f64, pitch: f64) -> Self {
        Direction {
            yaw: wrap_degrees(yaw),
            pitch: pitch.clamp(-90.0, 90.0),
        }
    }

    pub fn from_vector(v: [f64; 3]) -> Self {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let pitch = (v[2] / n).clamp(-1.0, 1.0).asin().to_degrees();
        let yaw = v[1].atan2(v[0]).to_degrees();
        Direction::new(yaw, pitch)
    }

    pub fn to_vector(&self) -> [f64; 3] {
        let (sy, cy) = self.yaw.to_radians().sin_cos();
        let (sp, cp) = self.pitch.to_radians().sin_cos();
        [cp * cy, cp * sy, sp]
    }

    /// Great-circle angle in radians.
    pub fn angle_to(&self, other: &Direction) -> f64 {
        let a = self.to_vector();
        let b = other.to_vector();
        let d = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
        d.acos()
    }
}

/// Wrap an angle in degrees into (-180, 180].
pub fn wrap_degrees(a: f64) -> f64 {
    let mut r = a % 360.0;
    if r > 180.0 {
        r -= 360.0;
    } else if r <= -180.0 {
        r += 360.0;
    }
    r
}

/// Field of view of the display, as a yaw × pitch rectangle in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovSpec {
    pub yaw_extent: f64,
    pub pitch_extent: f64,
}

impl Default for FovSpec {
    fn default() -> Self {
        FovSpec {
            yaw_extent: 100.0,
            pitch_extent: 100.0,
        }
    }
}

impl FovSpec {
    pub fn new(yaw_extent: f64, pitch_extent: f64) -> Result<Self> {
        let fov = FovSpec {
            yaw_extent,
            pitch_extent,
        };
        fov.validate()?;
        Ok(fov)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("yaw", self.yaw_extent), ("pitch", self.pitch_extent)] {
            if !(v > 0.0 && v <= 180.0) {
                return Err(Error::Config(format!(
                    "FoV {name} extent must be in (0, 180], got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ViewportId {
    pub row: u16,
    pub col: u16,
}

impl ViewportId {
    pub const fn new(row: u16, col: u16) -> Self {
        ViewportId { row, col }
    }
}

/// Fixed, overlapping partition of the sphere. Row `i` is the `i`-th pitch
/// band counted from the bottom, column `j` the `j`-th yaw sector.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewportGrid {
    pub n_yaw: usize,
    pub n_pitch: usize,
    pub yaw_extent: f64,
    pub pitch_extent: f64,
    /// (yaw, pitch) of each viewport center, row-major.
    pub centers: Vec<(f64, f64)>,
}

/// Builds a grid whose per-axis viewport extent is the grid spacing plus the
/// FoV extent, which makes every FoV placement fit in its nearest viewport.
pub fn build_grid(n_yaw: usize, n_pitch: usize, fov: FovSpec) -> Result<ViewportGrid> {
    fov.validate()?;
    if n_yaw < 2 || n_pitch < 2 {
        return Err(Error::Config(format!(
            "grid needs at least 2 viewports per axis, got {n_yaw}x{n_pitch}"
        )));
    }
    let yaw_spacing = 360.0 / n_yaw as f64;
    let pitch_spacing = 180.0 / n_pitch as f64;
    let yaw_extent = yaw_spacing + fov.yaw_extent;
    let pitch_extent = pitch_spacing + fov.pitch_extent;
    if pitch_extent > 180.0 {
        return Err(Error::Config(format!(
            "viewport pitch extent {pitch_extent} exceeds 180 degrees"
        )));
    }
    let mut centers = Vec::with_capacity(n_yaw * n_pitch);
    for row in 0..n_pitch {
        let pitch = -90.0 + pitch_spacing * (row as f64 + 0.5);
        for col in 0..n_yaw {
            centers.push((wrap_degrees(yaw_spacing * col as f64), pitch));
        }
    }
    Ok(ViewportGrid {
        n_yaw,
        n_pitch,
        yaw_extent: yaw_extent.min(360.0),
        pitch_extent,
        centers,
    })
}

impl ViewportGrid {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ViewportId> + '_ {
        (0..self.n_pitch)
            .flat_map(move |r| (0..self.n_yaw).map(move |c| ViewportId::new(r as u16, c as u16)))
    }

    pub fn contains_id(&self, id: ViewportId) -> bool {
        (id.row as usize) < self.n_pitch && (id.col as usize) < self.n_yaw
    }

    pub fn index(&self, id: ViewportId) -> usize {
        id.row as usize * self.n_yaw + id.col as usize
    }

    pub fn center(&self, id: ViewportId) -> Direction {
        let (yaw, pitch) = self.centers[self.index(id)];
        Direction::new(yaw, pitch)
    }

    fn pitch_range(&self, id: ViewportId) -> (f64, f64) {
        let c = self.center(id).pitch;
        (
            (c - self.pitch_extent / 2.0).max(-90.0),
            (c + self.pitch_extent / 2.0).min(90.0),
        )
    }

    /// Whether the FoV centred on `dir` lies entirely inside viewport `id`.
    pub fn contains_fov(&self, id: ViewportId, dir: Direction, fov: FovSpec) -> bool {
        let center = self.center(id);
        let yaw_ok = if self.yaw_extent >= 360.0 {
            true
        } else {
            let slack = (self.yaw_extent - fov.yaw_extent) / 2.0;
            slack >= 0.0 && wrap_degrees(dir.yaw - center.yaw).abs() <= slack + EPS_DEG
        };
        if !yaw_ok {
            return false;
        }
        let (lo, hi) = self.pitch_range(id);
        let f_lo = (dir.pitch - fov.pitch_extent / 2.0).max(-90.0);
        let f_hi = (dir.pitch + fov.pitch_extent / 2.0).min(90.0);
        f_lo >= lo - EPS_DEG && f_hi <= hi + EPS_DEG
    }

    /// Whether a single direction falls inside viewport `id`.
    pub fn contains_point(&self, id: ViewportId, dir: Direction) -> bool {
        let center = self.center(id);
        let (lo, hi) = self.pitch_range(id);
        let yaw_ok = self.yaw_extent >= 360.0
            || wrap_degrees(dir.yaw - center.yaw).abs() <= self.yaw_extent / 2.0 + EPS_DEG;
        yaw_ok && dir.pitch >= lo - EPS_DEG && dir.pitch <= hi + EPS_DEG
    }

    /// Solid angle (sr) of one viewport, clipped at the poles.
    pub fn viewport_solid_angle(&self, id: ViewportId) -> f64 {
        let (lo, hi) = self.pitch_range(id);
        rect_solid_angle(self.yaw_extent, lo, hi)
    }

    /// Mean viewport solid angle over the grid.
    pub fn mean_viewport_solid_angle(&self) -> f64 {
        let total: f64 = self.ids().map(|id| self.viewport_solid_angle(id)).sum();
        total / self.len() as f64
    }
}

/// Solid angle of the yaw/pitch rectangle `yaw_extent × [pitch_lo, pitch_hi]`.
pub fn rect_solid_angle(yaw_extent: f64, pitch_lo: f64, pitch_hi: f64) -> f64 {
    yaw_extent.to_radians() * (pitch_hi.to_radians().sin() - pitch_lo.to_radians().sin())
}

/// Solid angle of a FoV rectangle centred on the horizon.
pub fn fov_solid_angle(fov: FovSpec) -> f64 {
    let half = (fov.pitch_extent / 2.0).min(90.0);
    rect_solid_angle(fov.yaw_extent, -half, half)
}

/// All viewports fully containing the FoV around the view direction of `q`,
/// nearest center first, ties by lowest (row, col).
pub fn candidate_viewports(q: Quaternion, fov: FovSpec, grid: &ViewportGrid) -> Result<Vec<ViewportId>> {
    let dir = normalize(q)?.view_direction();
    Ok(candidates_for_direction(dir, fov, grid))
}

pub fn candidates_for_direction(dir: Direction, fov: FovSpec, grid: &ViewportGrid) -> Vec<ViewportId> {
    let mut found: Vec<(f64, ViewportId)> = grid
        .ids()
        .filter(|&id| grid.contains_fov(id, dir, fov))
        // Distances are bucketed to 1e-9 rad so that rounding noise does not
        // override the index tie-break.
        .map(|id| ((grid.center(id).angle_to(&dir) * 1e9).round(), id))
        .collect();
    found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    assert!(
        !found.is_empty(),
        "viewport grid does not cover direction {dir:?}"
    );
    found.into_iter().map(|(_, id)| id).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionPolicy {
    #[default]
    NearestCenter,
    CachePreferring,
}

pub fn select_viewport(
    candidates: &[ViewportId],
    policy: SelectionPolicy,
    cached: &HashSet<ViewportId>,
) -> Result<ViewportId> {
    let first = *candidates
        .first()
        .ok_or_else(|| Error::Contract("empty candidate viewport list".into()))?;
    Ok(match policy {
        SelectionPolicy::NearestCenter => first,
        SelectionPolicy::CachePreferring => candidates
            .iter()
            .copied()
            .find(|c| cached.contains(c))
            .unwrap_or(first),
    })
}

/// Uniformly random unit quaternion (Shoemake's method) from three uniforms.
pub fn quaternion_from_uniforms(u1: f64, u2: f64, u3: f64) -> Quaternion {
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let (s2, c2) = (2.0 * PI * u2).sin_cos();
    let (s3, c3) = (2.0 * PI * u3).sin_cos();
    Quaternion::new(b * c3, a * s2, a * c2, b * s3)
}
