use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::SimConfig;
use crate::caching::{build_popularity, PopularityProfile};
use crate::channel::Point;
use crate::geometry::{candidate_viewports, select_viewport, SelectionPolicy, ViewportGrid, ViewportId};
use crate::io::generate_traces;
use crate::prediction::PoseTrace;
use crate::{Error, Result};

/// Derives an independent seed for one purpose from a run seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer over the combined input
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const TAG_CONTENT: u64 = 1 << 32;
const TAG_USERS: u64 = 2 << 32;
const TAG_HISTORY: u64 = 3 << 32;
const TAG_POSITIONS: u64 = 4;

/// Everything a run consumes besides its configuration.
#[derive(Debug, Clone)]
pub struct Workload {
    /// One pose trace per simulated user.
    pub traces: Vec<PoseTrace>,
    /// Video watched by each user.
    pub videos: Vec<usize>,
    /// Starting position of each user, m.
    pub positions: Vec<Point>,
    /// Popularity of each video, from a separate historical population.
    pub profiles: Vec<PopularityProfile>,
}

/// Viewport a viewer at each pose would request under nearest-center
/// selection.
pub fn requested_viewports(trace: &PoseTrace, grid: &ViewportGrid, cfg: &SimConfig) -> Result<Vec<ViewportId>> {
    let none = Default::default();
    trace
        .poses
        .iter()
        .map(|q| select_viewport(&candidate_viewports(*q, cfg.fov, grid)?, SelectionPolicy::NearestCenter, &none))
        .collect()
}

/// Synthetic traces, positions and popularity profiles for `cfg`.
pub fn build_workload(cfg: &SimConfig) -> Result<Workload> {
    cfg.validate()?;
    let base = cfg.motion_params()?;
    let grid = cfg.grid()?;
    let n_frames = cfg.trace_frames();
    let mut traces = Vec::with_capacity(cfg.num_users);
    let mut videos = Vec::with_capacity(cfg.num_users);
    let mut profiles = Vec::with_capacity(cfg.videos());
    for v in 0..cfg.videos() {
        let content_seed = derive_seed(cfg.seed, TAG_CONTENT + v as u64);
        let users = crate::io::MotionModelParams {
            seed: derive_seed(cfg.seed, TAG_USERS + v as u64),
            content_seed,
            ..base.clone()
        };
        for (i, mut t) in generate_traces(cfg.users_per_video, n_frames, &users)?.into_iter().enumerate() {
            t.user_id = (v * cfg.users_per_video + i).to_string();
            traces.push(t);
            videos.push(v);
        }
        if cfg.historical_users > 0 {
            let hist = crate::io::MotionModelParams {
                seed: derive_seed(cfg.seed, TAG_HISTORY + v as u64),
                content_seed,
                ..base.clone()
            };
            let history = generate_traces(cfg.historical_users, n_frames, &hist)?
                .iter()
                .map(|t| requested_viewports(t, &grid, cfg))
                .collect::<Result<Vec<_>>>()?;
            profiles.push(build_popularity(v, &history));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_POSITIONS));
    let positions = (0..cfg.num_users)
        .map(|_| Point::new(rng.random_range(0.0..cfg.arcade_side), rng.random_range(0.0..cfg.arcade_side)))
        .collect();
    Ok(Workload {
        traces,
        videos,
        positions,
        profiles,
    })
}

impl Workload {
    /// Checks that the workload matches the configuration.
    pub fn check(&self, cfg: &SimConfig) -> Result<()> {
        let need = cfg.timing().frames + cfg.horizon;
        if self.traces.len() != cfg.num_users || self.videos.len() != cfg.num_users || self.positions.len() != cfg.num_users {
            return Err(Error::Config(format!(
                "workload has {} traces, {} video assignments and {} positions for {} users",
                self.traces.len(),
                self.videos.len(),
                self.positions.len(),
                cfg.num_users
            )));
        }
        if let Some(t) = self.traces.iter().find(|t| t.len() < need) {
            return Err(Error::Config(format!(
                "trace of user {} has {} frames, the run needs {need}",
                t.user_id,
                t.len()
            )));
        }
        if let Some(&v) = self.videos.iter().find(|&&v| v >= cfg.videos()) {
            return Err(Error::Config(format!("video {v} outside the catalog of {}", cfg.videos())));
        }
        let side = cfg.arcade_side;
        if self
            .positions
            .iter()
            .any(|p| !(0.0..=side).contains(&p.x) || !(0.0..=side).contains(&p.y))
        {
            return Err(Error::Config("user position outside the arcade".into()));
        }
        Ok(())
    }
}
