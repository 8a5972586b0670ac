//! Slot-level simulation of proactive viewport streaming in a mmWave arcade.
//!
//! Time runs in transmission slots. Frame `f`'s pose becomes known at the
//! frame instant `f · slots_per_frame`, which is also its display deadline.
//! Anything that arrives after the deadline but within the frame's display
//! interval still counts as HD, with its lateness recorded; after that the
//! frame is abandoned.

mod config;
mod engine;
mod metrics;
mod workload;

pub use config::{PredictorKind, Scheme, SimConfig, Timing, ANCHOR_BITRATE, ANCHOR_FOV};
pub use engine::{run, RequestTimes, RunOptions, RunOutput};
pub use metrics::{
    compute_metrics, metrics_row, percentile_nearest_rank, write_events, write_metrics, Counters, FrameRecord, RunKey,
    RunMetrics, ServeEvent, UserMetrics, EVENT_HEADER, METRICS_HEADER,
};
pub use workload::{build_workload, derive_seed, requested_viewports, Workload};
