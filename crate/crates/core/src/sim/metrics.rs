use std::io::Write;

use super::config::{PredictorKind, Scheme};
use crate::Result;

/// What happened to one user at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRecord {
    pub user: usize,
    pub frame: usize,
    pub hd: bool,
    /// Lateness past the display instant, ms.
    pub delay_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UserMetrics {
    pub user: usize,
    pub frames: usize,
    pub mean_delay_ms: f64,
    pub hd_delivery_rate: f64,
}

/// Request and delivery counters of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    pub admitted: u64,
    pub completed: u64,
    pub dropped: u64,
    pub pending_at_end: u64,
    pub predictions: u64,
    pub prediction_misses: u64,
    pub cache_hits: u64,
    pub cache_lookups: u64,
    pub backhaul_fetches: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetrics {
    pub mean_delay_ms: f64,
    pub p99_delay_ms: f64,
    pub hd_delivery_rate: f64,
    /// Fraction of consecutive frame pairs whose HD status differs.
    pub quality_transition: f64,
    /// Fraction of frames not delivered in HD.
    pub failure_ratio: f64,
    pub frames: usize,
    pub per_user: Vec<UserMetrics>,
}

/// Nearest-rank percentile: the value at rank ⌊p·n/100⌋ + 1 (capped at n) of
/// the ascending sample.
pub fn percentile_nearest_rank(values: &[f64], p: u32) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let rank = (p as usize * n / 100 + 1).min(n);
    v[rank - 1]
}

/// Aggregate frame records. Records must be grouped by user with frames in
/// ascending order.
pub fn compute_metrics(records: &[FrameRecord]) -> RunMetrics {
    if records.is_empty() {
        return RunMetrics::default();
    }
    let n = records.len() as f64;
    let delays: Vec<f64> = records.iter().map(|r| r.delay_ms).collect();
    let hd = records.iter().filter(|r| r.hd).count() as f64;

    let mut per_user: Vec<UserMetrics> = Vec::new();
    let mut changes = 0usize;
    let mut pairs = 0usize;
    for (i, r) in records.iter().enumerate() {
        let prev = (i > 0).then(|| records[i - 1]).filter(|p| p.user == r.user);
        if let Some(p) = prev {
            pairs += 1;
            if p.hd != r.hd {
                changes += 1;
            }
        }
        if per_user.last().is_none_or(|u| u.user != r.user) {
            per_user.push(UserMetrics {
                user: r.user,
                ..Default::default()
            });
        }
        let u = per_user.last_mut().unwrap();
        u.frames += 1;
        u.mean_delay_ms += r.delay_ms;
        u.hd_delivery_rate += if r.hd { 1.0 } else { 0.0 };
    }
    for u in &mut per_user {
        u.mean_delay_ms /= u.frames as f64;
        u.hd_delivery_rate /= u.frames as f64;
    }
    RunMetrics {
        mean_delay_ms: delays.iter().sum::<f64>() / n,
        p99_delay_ms: percentile_nearest_rank(&delays, 99),
        hd_delivery_rate: hd / n,
        quality_transition: if pairs == 0 { 0.0 } else { changes as f64 / pairs as f64 },
        failure_ratio: 1.0 - hd / n,
        frames: records.len(),
        per_user,
    }
}

/// One over-the-air transmission within a slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeEvent {
    pub slot: u64,
    pub user: usize,
    pub sbs: usize,
    pub request: u64,
    pub bits: f64,
    pub sinr: f64,
}

pub const EVENT_HEADER: [&str; 6] = ["slot", "user", "sbs", "request_id", "bits_served", "sinr"];

pub fn write_events<W: Write>(events: &[ServeEvent], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVENT_HEADER)?;
    for e in events {
        w.write_record([
            e.slot.to_string(),
            e.user.to_string(),
            e.sbs.to_string(),
            e.request.to_string(),
            e.bits.to_string(),
            e.sinr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Identifies a run in the metrics table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunKey {
    pub scheme: Scheme,
    pub predictor: PredictorKind,
    pub num_users: usize,
    pub horizon: usize,
    pub grid: usize,
    pub seed: u64,
}

pub const METRICS_HEADER: [&str; 11] = [
    "scheme",
    "predictor",
    "num_users",
    "t_h",
    "grid",
    "seed",
    "mean_delay_ms",
    "p99_delay_ms",
    "hd_delivery_rate",
    "quality_transition",
    "failure_ratio",
];

pub fn metrics_row(key: &RunKey, m: &RunMetrics) -> Vec<String> {
    vec![
        key.scheme.to_string(),
        key.predictor.as_str().to_string(),
        key.num_users.to_string(),
        key.horizon.to_string(),
        format!("{0}x{0}", key.grid),
        key.seed.to_string(),
        m.mean_delay_ms.to_string(),
        m.p99_delay_ms.to_string(),
        m.hd_delivery_rate.to_string(),
        m.quality_transition.to_string(),
        m.failure_ratio.to_string(),
    ]
}

pub fn write_metrics<W: Write>(rows: &[(RunKey, RunMetrics)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for (k, m) in rows {
        w.write_record(metrics_row(k, m))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(user: usize, frame: usize, hd: bool, delay_ms: f64) -> FrameRecord {
        FrameRecord { user, frame, hd, delay_ms }
    }

    #[test]
    fn all_on_time() {
        let r: Vec<_> = (0..50).map(|f| rec(0, f, true, 0.0)).collect();
        let m = compute_metrics(&r);
        assert_eq!((m.mean_delay_ms, m.hd_delivery_rate, m.quality_transition), (0.0, 1.0, 0.0));
    }

    #[test]
    fn alternating_status() {
        let r: Vec<_> = (0..101).map(|f| rec(0, f, f % 2 == 0, 0.0)).collect();
        let m = compute_metrics(&r);
        assert_eq!(m.quality_transition, 1.0);
        assert!((m.failure_ratio - 50.0 / 101.0).abs() < 1e-12);
    }

    #[test]
    fn one_late_frame_in_a_hundred() {
        let mut r: Vec<_> = (0..99).map(|f| rec(0, f, true, 0.0)).collect();
        r.push(rec(0, 99, false, 5.0));
        let m = compute_metrics(&r);
        assert!((m.mean_delay_ms - 0.05).abs() < 1e-12);
        assert_eq!(m.p99_delay_ms, 5.0);
    }

    #[test]
    fn transitions_do_not_cross_users() {
        let r = vec![rec(0, 0, true, 0.0), rec(0, 1, true, 0.0), rec(1, 0, false, 1.0), rec(1, 1, false, 1.0)];
        let m = compute_metrics(&r);
        assert_eq!(m.quality_transition, 0.0);
        assert_eq!(m.per_user.len(), 2);
        assert_eq!(m.per_user[1].mean_delay_ms, 1.0);
    }

    #[test]
    fn percentile_edges() {
        assert_eq!(percentile_nearest_rank(&[3.0], 99), 3.0);
        assert_eq!(percentile_nearest_rank(&[1.0, 2.0, 3.0, 4.0], 50), 3.0);
        assert!(percentile_nearest_rank(&[], 99).is_nan());
    }
}
