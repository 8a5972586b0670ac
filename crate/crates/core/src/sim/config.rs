use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelConfig, Point};
use crate::geometry::{build_grid, fov_solid_angle, FovSpec, SelectionPolicy, ViewportGrid};
use crate::io::MotionModelParams;
use crate::matching::QueueOrder;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Ml,
    MlCache,
    Nml,
    NmlCache,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Ml, Scheme::MlCache, Scheme::Nml, Scheme::NmlCache];

    pub fn proactive(self) -> bool {
        matches!(self, Scheme::Ml | Scheme::MlCache)
    }

    pub fn cached(self) -> bool {
        matches!(self, Scheme::MlCache | Scheme::NmlCache)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Ml => "ml",
            Scheme::MlCache => "ml-cache",
            Scheme::Nml => "nml",
            Scheme::NmlCache => "nml-cache",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}` (expected ml, ml-cache, nml or nml-cache)")))
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where proactive schemes get their pose forecasts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    /// The true future pose.
    Oracle,
    /// Constant angular velocity extrapolation.
    #[default]
    Baseline,
    /// A trained recurrent model supplied by the caller.
    Gru,
}

impl PredictorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictorKind::Oracle => "oracle",
            PredictorKind::Baseline => "baseline",
            PredictorKind::Gru => "gru",
        }
    }
}

/// Reference display FoV for the payload anchor: 1 Gbit/s for 150° × 120°.
pub const ANCHOR_FOV: FovSpec = FovSpec {
    yaw_extent: 150.0,
    pitch_extent: 120.0,
};
pub const ANCHOR_BITRATE: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Side of the square arcade, m.
    pub arcade_side: f64,
    /// SBS positions, m. Defaults to the four corners.
    pub sbs_positions: Option<Vec<[f64; 2]>>,
    pub num_users: usize,
    pub users_per_video: usize,
    pub sim_time_s: f64,
    pub slot_s: f64,
    pub frame_duration_s: f64,
    /// Pose history fed to the predictor, frames.
    pub history: usize,
    /// Prediction horizon and proactive lead time, frames.
    pub horizon: usize,
    pub backhaul_s: f64,
    /// Viewports per axis (the grid is n × n).
    pub grid: usize,
    pub fov: FovSpec,
    pub scheme: Scheme,
    pub predictor: PredictorKind,
    /// Multiplier on the anchored viewport payload.
    pub payload_scale: f64,
    /// Explicit payload per viewport-frame in bits; overrides the anchor.
    pub viewport_bits: Option<f64>,
    /// Cached viewports per video frame.
    pub cache_size: usize,
    /// Users per video in the historical population used for popularity.
    pub historical_users: usize,
    pub selection: SelectionPolicy,
    pub queue_order: QueueOrder,
    /// Walking speed for random-waypoint mobility, m/s; 0 keeps users still.
    pub mobility_speed: f64,
    pub channel: ChannelConfig,
    /// Motion preset name: `slow` or `high-volatility`.
    pub motion_preset: String,
    /// Explicit motion parameters; override the preset when present.
    pub motion: Option<MotionModelParams>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            arcade_side: 100.0,
            sbs_positions: None,
            num_users: 48,
            users_per_video: 12,
            sim_time_s: 30.0,
            slot_s: 0.25e-3,
            frame_duration_s: 0.033,
            history: 10,
            horizon: 10,
            backhaul_s: 3e-3,
            grid: 5,
            fov: FovSpec::default(),
            scheme: Scheme::Ml,
            predictor: PredictorKind::Baseline,
            payload_scale: 1.0,
            viewport_bits: None,
            cache_size: 2,
            historical_users: 24,
            selection: SelectionPolicy::NearestCenter,
            queue_order: QueueOrder::EarliestDeadline,
            mobility_speed: 0.0,
            channel: ChannelConfig::default(),
            motion_preset: "slow".into(),
            motion: None,
            seed: 0,
        }
    }
}

/// Frames allowed for start-up backlog to clear before metrics count.
pub const SETTLE_FRAMES: usize = 30;
const MAX_WINDOW_FRAMES: usize = 1000;
const MAX_SIM_TIME_S: f64 = 3600.0;

/// Slot counts derived from a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    pub slots_per_frame: u64,
    pub total_slots: u64,
    /// Frame instants inside the run (the last one included).
    pub frames: usize,
    pub backhaul_slots: u64,
    pub refresh_slots: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        let positive = [
            ("arcade_side", self.arcade_side),
            ("sim_time_s", self.sim_time_s),
            ("slot_s", self.slot_s),
            ("frame_duration_s", self.frame_duration_s),
            ("payload_scale", self.payload_scale),
        ];
        for (k, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return err(format!("{k} must be positive, got {v}"));
            }
        }
        if !(self.backhaul_s.is_finite() && self.backhaul_s >= 0.0) {
            return err("backhaul_s must be non-negative".into());
        }
        if !(self.mobility_speed.is_finite() && self.mobility_speed >= 0.0) {
            return err("mobility_speed must be non-negative".into());
        }
        if self.num_users == 0 || self.users_per_video == 0 {
            return err("num_users and users_per_video must be positive".into());
        }
        if self.num_users % self.users_per_video != 0 {
            return err(format!(
                "num_users ({}) must be a multiple of users_per_video ({})",
                self.num_users, self.users_per_video
            ));
        }
        if self.history < 2 || self.horizon == 0 {
            return err("history must be at least 2 and horizon at least 1".into());
        }
        if self.history > MAX_WINDOW_FRAMES || self.horizon > MAX_WINDOW_FRAMES {
            return err(format!("history and horizon must be at most {MAX_WINDOW_FRAMES} frames"));
        }
        if self.sim_time_s > MAX_SIM_TIME_S {
            return err(format!("sim_time_s must be at most {MAX_SIM_TIME_S}, got {}", self.sim_time_s));
        }
        if self.frame_duration_s < self.slot_s {
            return err("frame_duration_s must be at least one slot".into());
        }
        if let Some(b) = self.viewport_bits {
            if !(b.is_finite() && b > 0.0) {
                return err(format!("viewport_bits must be positive, got {b}"));
            }
        }
        if self.historical_users == 0 && self.scheme.cached() {
            return err("cached schemes need historical_users > 0".into());
        }
        if let Some(p) = &self.sbs_positions {
            if p.is_empty() {
                return err("sbs_positions must not be empty".into());
            }
        }
        self.channel.validate()?;
        self.motion_params()?.validate()?;
        self.grid()?;
        let frames = self.timing().frames;
        if frames <= self.warmup_frames() + 1 {
            return err(format!(
                "sim_time_s = {} covers {frames} frames, but metrics only start at frame {}",
                self.sim_time_s,
                self.warmup_frames()
            ));
        }
        Ok(())
    }

    pub fn timing(&self) -> Timing {
        let slots_per_frame = ((self.frame_duration_s / self.slot_s).round() as u64).max(1);
        let total_slots = (self.sim_time_s / self.slot_s).round() as u64;
        let frames = (total_slots.saturating_sub(1) / slots_per_frame) as usize + 1;
        Timing {
            slots_per_frame,
            total_slots,
            frames,
            backhaul_slots: (self.backhaul_s / self.slot_s).round() as u64,
            refresh_slots: ((self.channel.pathloss_refresh_s / self.slot_s).round() as u64).max(1),
        }
    }

    pub fn videos(&self) -> usize {
        self.num_users / self.users_per_video
    }

    pub fn grid(&self) -> Result<ViewportGrid> {
        build_grid(self.grid, self.grid, self.fov)
    }

    pub fn sbs(&self) -> Vec<Point> {
        match &self.sbs_positions {
            Some(p) => p.iter().map(|&[x, y]| Point::new(x, y)).collect(),
            None => {
                let s = self.arcade_side;
                vec![
                    Point::new(0.0, 0.0),
                    Point::new(s, 0.0),
                    Point::new(0.0, s),
                    Point::new(s, s),
                ]
            }
        }
    }

    pub fn motion_params(&self) -> Result<MotionModelParams> {
        match &self.motion {
            Some(m) => Ok(m.clone()),
            None => MotionModelParams::preset(&self.motion_preset),
        }
    }

    /// Payload of one viewport-frame in bits.
    pub fn payload_bits(&self) -> Result<f64> {
        if let Some(b) = self.viewport_bits {
            return Ok(b);
        }
        let grid = self.grid()?;
        let ratio = grid.mean_viewport_solid_angle() / fov_solid_angle(ANCHOR_FOV);
        Ok(self.payload_scale * ANCHOR_BITRATE * self.frame_duration_s * ratio)
    }

    /// Frames each user trace must cover.
    pub fn trace_frames(&self) -> usize {
        self.timing().frames + self.horizon.max(30) + 2
    }

    /// First frame counted in the metrics: proactive schemes make their
    /// first forecast for frame `history + horizon − 1`, and the backlog of
    /// the start-up period takes a while longer to clear.
    pub fn warmup_frames(&self) -> usize {
        self.history + self.horizon + SETTLE_FRAMES
    }
}
