//! Proactive wireless VR viewport streaming.
//!
//! The crate is split along the pipeline a frame travels through:
//!
//! * [`geometry`]: quaternions, the overlapping viewport grid and
//!   orientation-to-viewport mapping.
//! * [`prediction`]: head-pose prediction (constant-velocity baseline and a
//!   two-layer GRU trained from scratch with Adam).
//! * [`channel`]: the mmWave link model (LOS probability, path loss,
//!   sectored antennas, interference and SINR).
//! * [`matching`]: request admission into deadline queues and user/SBS
//!   deferred-acceptance matching.
//! * [`caching`]: per-frame spatial popularity profiles and a static top-K
//!   edge cache.
//! * [`sim`]: the slot-level discrete-event simulator and its metrics.
//! * [`io`]: trace CSV files and the synthetic head-motion generator.

pub mod caching;
pub mod channel;
pub mod error;
pub mod geometry;
pub mod io;
pub mod matching;
pub mod prediction;
pub mod sim;

pub use error::{Error, Result};
