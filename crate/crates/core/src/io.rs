//! Pose-trace files and the synthetic head-motion generator.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{sign_continuize, Direction, Quaternion};
use crate::prediction::{PoseTrace, FRAME_DURATION_S};
use crate::{Error, Result};

const TRACE_HEADER: [&str; 6] = ["user_id", "frame_index", "w", "x", "y", "z"];

/// Write traces as `user_id,frame_index,w,x,y,z`.
pub fn write_traces<W: Write>(traces: &[PoseTrace], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for tr in traces {
        for (k, q) in tr.poses.iter().enumerate() {
            w.write_record([
                tr.user_id.clone(),
                k.to_string(),
                q.w.to_string(),
                q.x.to_string(),
                q.y.to_string(),
                q.z.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_traces(traces: &[PoseTrace], path: &Path) -> Result<()> {
    write_traces(traces, std::fs::File::create(path)?)
}

/// Parse trace CSV. Each user's frames must run 0, 1, 2, ... in file order;
/// rows of different users may interleave.
pub fn read_traces<R: Read>(input: R, origin: &Path) -> Result<Vec<PoseTrace>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = r.headers().map_err(|e| Error::parse(origin, 1, e.to_string()))?.clone();
    if headers.iter().map(str::trim).ne(TRACE_HEADER.iter().copied()) {
        return Err(Error::parse(origin, 1, format!("expected header {}", TRACE_HEADER.join(","))));
    }
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut traces: Vec<PoseTrace> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::parse(origin, line, e.to_string()))?;
        if rec.len() != 6 {
            return Err(Error::parse(origin, line, format!("expected 6 fields, got {}", rec.len())));
        }
        let user = rec[0].trim();
        if user.is_empty() {
            return Err(Error::parse(origin, line, "empty user_id"));
        }
        let frame: usize = rec[1]
            .trim()
            .parse()
            .map_err(|e| Error::parse(origin, line, format!("frame_index: {e}")))?;
        let mut c = [0.0; 4];
        for (k, v) in c.iter_mut().enumerate() {
            *v = rec[k + 2]
                .trim()
                .parse()
                .map_err(|e| Error::parse(origin, line, format!("{}: {e}", TRACE_HEADER[k + 2])))?;
        }
        let q = Quaternion::from_array(c)
            .normalize()
            .map_err(|e| Error::parse(origin, line, e.to_string()))?;
        let slot = *index.entry(user.to_string()).or_insert_with(|| {
            traces.push(PoseTrace::new(user, Vec::new()));
            traces.len() - 1
        });
        let expected = traces[slot].poses.len();
        if frame != expected {
            return Err(Error::parse(
                origin,
                line,
                format!("user {user}: frame_index {frame} out of order, expected {expected}"),
            ));
        }
        traces[slot].poses.push(q);
    }
    for tr in &mut traces {
        sign_continuize(&mut tr.poses);
    }
    Ok(traces)
}

pub fn load_traces(path: &Path) -> Result<Vec<PoseTrace>> {
    read_traces(std::fs::File::open(path)?, path)
}

/// Parameters of the synthetic head-motion model.
///
/// Angular velocity (world frame, rad/s) follows a mean-reverting random walk
/// per axis. Its mean points towards an attractor direction: a shared,
/// slowly drifting one for hotspot users and a personal one otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionModelParams {
    /// Rate at which angular velocity reverts to its mean, 1/s.
    pub mean_reversion: f64,
    /// Angular-velocity volatility, rad/s^1.5.
    pub volatility: f64,
    /// Clip on angular speed, rad/s.
    pub max_speed: f64,
    /// Noise weights on the world x, y (tilt) and z (yaw) axes.
    pub axis_weights: [f64; 3],
    /// Mean angular velocity per radian of offset from the attractor, 1/s.
    pub attraction: f64,
    /// Fraction of users drawn to the shared attractor.
    pub hotspot_fraction: f64,
    /// Yaw speed of attractors, deg/s.
    pub attractor_drift: f64,
    /// Pitch swing of attractors, deg.
    pub attractor_pitch: f64,
    /// Starting angular velocity, rad/s.
    pub initial_velocity: [f64; 3],
    pub frame_duration: f64,
    /// Seed for per-user randomness.
    pub seed: u64,
    /// Seed for the shared attractor path, so that separate user populations
    /// watching the same content agree on it.
    pub content_seed: u64,
}

impl Default for MotionModelParams {
    fn default() -> Self {
        Self::slow()
    }
}

impl MotionModelParams {
    pub fn slow() -> Self {
        MotionModelParams {
            mean_reversion: 1.5,
            volatility: 0.5,
            max_speed: 2.0,
            axis_weights: [0.4, 0.4, 1.0],
            attraction: 0.8,
            hotspot_fraction: 0.6,
            attractor_drift: 8.0,
            attractor_pitch: 10.0,
            initial_velocity: [0.0; 3],
            frame_duration: FRAME_DURATION_S,
            seed: 0,
            content_seed: 0,
        }
    }

    pub fn high_volatility() -> Self {
        MotionModelParams {
            mean_reversion: 2.0,
            volatility: 1.6,
            max_speed: 4.0,
            attraction: 0.8,
            ..Self::slow()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "slow" => Ok(Self::slow()),
            "high-volatility" => Ok(Self::high_volatility()),
            other => Err(Error::Config(format!(
                "unknown motion preset `{other}` (expected `slow` or `high-volatility`)"
            ))),
        }
    }

    /// Still poses: no noise, no pull.
    pub fn still() -> Self {
        MotionModelParams {
            mean_reversion: 0.0,
            volatility: 0.0,
            attraction: 0.0,
            ..Self::slow()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("mean_reversion", self.mean_reversion),
            ("volatility", self.volatility),
            ("max_speed", self.max_speed),
            ("attraction", self.attraction),
            ("attractor_drift", self.attractor_drift),
            ("attractor_pitch", self.attractor_pitch),
            ("frame_duration", self.frame_duration),
        ];
        for (k, v) in named {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{k} must be finite and non-negative, got {v}")));
            }
        }
        if self.axis_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("axis_weights must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.hotspot_fraction) {
            return Err(Error::Config("hotspot_fraction must lie in [0, 1]".into()));
        }
        if self.frame_duration == 0.0 {
            return Err(Error::Config("frame_duration must be positive".into()));
        }
        if self.attractor_pitch > 80.0 {
            return Err(Error::Config("attractor_pitch must not exceed 80 deg".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Attractor {
    yaw0: f64,
    drift: f64,
    pitch_amp: f64,
    phase: f64,
}

const ATTRACTOR_PERIOD_S: f64 = 20.0;

impl Attractor {
    fn draw<R: Rng>(p: &MotionModelParams, rng: &mut R) -> Self {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        Attractor {
            yaw0: rng.random_range(-180.0..180.0),
            drift: sign * p.attractor_drift * rng.random_range(0.5..1.5),
            pitch_amp: p.attractor_pitch,
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }

    fn at(&self, t: f64) -> Direction {
        let pitch = self.pitch_amp * (std::f64::consts::TAU * t / ATTRACTOR_PERIOD_S + self.phase).sin();
        Direction::new(self.yaw0 + self.drift * t, pitch)
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Synthetic traces for `n_users` viewers of one piece of content.
pub fn generate_traces(n_users: usize, n_frames: usize, p: &MotionModelParams) -> Result<Vec<PoseTrace>> {
    p.validate()?;
    if n_frames == 0 {
        return Err(Error::Config("n_frames must be at least 1".into()));
    }
    let shared = Attractor::draw(p, &mut ChaCha8Rng::seed_from_u64(p.content_seed));
    let dt = p.frame_duration;
    let sq = dt.sqrt();
    let mut out = Vec::with_capacity(n_users);
    for u in 0..n_users {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        rng.set_stream(u as u64 + 1);
        let hotspot = rng.random_bool(p.hotspot_fraction);
        let own = Attractor::draw(p, &mut rng);
        let target = if hotspot { shared } else { own };
        let start = if hotspot {
            shared.at(0.0)
        } else {
            Direction::new(rng.random_range(-180.0..180.0), rng.random_range(-15.0..15.0))
        };
        let mut q = Quaternion::from_yaw_pitch(start.yaw, start.pitch);
        let mut w = p.initial_velocity;
        let mut poses = Vec::with_capacity(n_frames);
        poses.push(q);
        for k in 1..n_frames {
            let t = (k - 1) as f64 * dt;
            let mut mean = [0.0; 3];
            if p.attraction > 0.0 {
                let f = q.view_axis();
                let a = target.at(t).to_vector();
                let axis = cross(f, a);
                let s = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
                if s > 1e-12 {
                    let c = f[0] * a[0] + f[1] * a[1] + f[2] * a[2];
                    let angle = s.atan2(c);
                    for i in 0..3 {
                        mean[i] = p.attraction * angle * axis[i] / s;
                    }
                }
            }
            for i in 0..3 {
                let xi: f64 = rng.sample(StandardNormal);
                w[i] += p.mean_reversion * (mean[i] - w[i]) * dt + p.volatility * p.axis_weights[i] * sq * xi;
            }
            let speed = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
            if speed > p.max_speed {
                let s = p.max_speed / speed;
                for v in &mut w {
                    *v *= s;
                }
            }
            q = (Quaternion::from_rotation_vector([w[0] * dt, w[1] * dt, w[2] * dt]) * q).normalize()?;
            poses.push(q);
        }
        let mut tr = PoseTrace::new(u.to_string(), poses);
        tr.frame_rate = 1.0 / dt;
        out.push(tr);
    }
    Ok(out)
}
