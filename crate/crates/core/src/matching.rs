//! Request admission, deadline queues and user–SBS deferred acceptance.
//!
//! Time is counted in transmission slots. Completion instants are
//! fractional slots because a request can finish part-way through a slot.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{achievable_rate, sinr, ChannelConfig, LinkState};
use crate::geometry::ViewportId;

pub type Slot = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RequestKind {
    Predicted,
    RealTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: u64,
    pub user: usize,
    pub video: usize,
    pub frame: usize,
    pub viewport: ViewportId,
    pub kind: RequestKind,
    pub size_bits: f64,
    pub remaining_bits: f64,
    pub deadline: Slot,
    pub created_at: Slot,
    /// First slot at which the content is present at the edge.
    pub available_at: Slot,
    pub completed_at: Option<f64>,
}

impl Request {
    pub fn is_pending(&self) -> bool {
        self.completed_at.is_none()
    }

    pub fn is_servable(&self, now: Slot) -> bool {
        self.is_pending() && self.available_at <= now
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueueOrder {
    /// Earliest deadline first.
    #[default]
    EarliestDeadline,
    /// Latest deadline first, for comparison.
    LatestDeadline,
}

/// Sort a queue by deadline; ties go to the earlier creation time, then the
/// lower frame index.
pub fn order_queue(queue: &mut [Request], order: QueueOrder) {
    queue.sort_by(|a, b| {
        let by_deadline = match order {
            QueueOrder::EarliestDeadline => a.deadline.cmp(&b.deadline),
            QueueOrder::LatestDeadline => b.deadline.cmp(&a.deadline),
        };
        by_deadline
            .then(a.created_at.cmp(&b.created_at))
            .then(a.frame.cmp(&b.frame))
            .then(a.id.cmp(&b.id))
    });
}

/// Everything Stage I needs to know about one user at one frame instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameAdmission {
    pub user: usize,
    pub video: usize,
    /// Frame whose pose just became known.
    pub frame: usize,
    pub now: Slot,
    pub slots_per_frame: u64,
    pub horizon_frames: usize,
    /// Viewport predicted now for frame `frame + horizon_frames`.
    pub predicted: Option<ViewportId>,
    /// Viewport that was predicted for `frame`, `horizon_frames` frames ago.
    pub prior_prediction: Option<ViewportId>,
    pub actual: ViewportId,
    pub size_bits: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdmissionOutcome {
    /// Requests appended to the queue; the caller fills in `available_at`.
    pub enqueued: Vec<u64>,
    /// Stale predicted requests turned into real-time requests in place.
    pub converted: Vec<u64>,
    /// Stale predicted requests removed because they target the wrong viewport.
    pub dropped: Vec<Request>,
    /// The real-time request was skipped because the content already exists.
    pub suppressed: bool,
    pub miss: bool,
}

/// One user's request queue together with what it has already received.
#[derive(Debug, Clone, Default)]
pub struct UserQueue {
    pub pending: Vec<Request>,
    /// Completed deliveries per frame: (viewport, completion slot).
    pub delivered: HashMap<usize, Vec<(ViewportId, f64)>>,
}

impl UserQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    pub fn has_servable(&self, now: Slot) -> bool {
        self.pending.iter().any(|r| r.is_servable(now))
    }

    fn holds(&self, frame: usize, vp: ViewportId) -> bool {
        self.pending.iter().any(|r| r.frame == frame && r.viewport == vp)
            || self
                .delivered
                .get(&frame)
                .is_some_and(|d| d.iter().any(|(v, _)| *v == vp))
    }

    /// Stage I for one user at one frame instant.
    ///
    /// `next_id` hands out request identifiers.
    pub fn admit(&mut self, a: &FrameAdmission, next_id: &mut u64) -> AdmissionOutcome {
        let mut out = AdmissionOutcome::default();
        let mut push = |queue: &mut Vec<Request>, frame: usize, vp, kind, deadline| {
            let id = *next_id;
            *next_id += 1;
            queue.push(Request {
                id,
                user: a.user,
                video: a.video,
                frame,
                viewport: vp,
                kind,
                size_bits: a.size_bits,
                remaining_bits: a.size_bits,
                deadline,
                created_at: a.now,
                available_at: a.now,
                completed_at: None,
            });
            id
        };

        if let Some(vp) = a.predicted {
            let target = a.frame + a.horizon_frames;
            if !self.holds(target, vp) {
                let deadline = a.now + a.horizon_frames as u64 * a.slots_per_frame;
                let id = push(&mut self.pending, target, vp, RequestKind::Predicted, deadline);
                out.enqueued.push(id);
            }
        }

        // Predicted requests for the current frame that are still in flight
        // either become real-time (right viewport) or are discarded.
        let mut i = 0;
        while i < self.pending.len() {
            let r = &mut self.pending[i];
            if r.kind == RequestKind::Predicted && r.frame == a.frame {
                if r.viewport == a.actual {
                    r.kind = RequestKind::RealTime;
                    r.deadline = a.now;
                    out.converted.push(r.id);
                    i += 1;
                } else {
                    out.dropped.push(self.pending.remove(i));
                }
            } else {
                i += 1;
            }
        }

        out.miss = a.prior_prediction != Some(a.actual);
        if out.miss {
            if self.holds(a.frame, a.actual) {
                out.suppressed = true;
            } else {
                let id = push(&mut self.pending, a.frame, a.actual, RequestKind::RealTime, a.now);
                out.enqueued.push(id);
            }
        }
        out
    }

    /// Record a completion and move the request out of the pending list.
    pub fn complete(&mut self, index: usize, at: f64) -> Request {
        let mut r = self.pending.remove(index);
        r.completed_at = Some(at);
        r.remaining_bits = 0.0;
        self.delivered.entry(r.frame).or_default().push((r.viewport, at));
        r
    }

    /// Remove pending requests for frames `<= frame`.
    pub fn drop_through(&mut self, frame: usize) -> Vec<Request> {
        let (old, keep): (Vec<_>, Vec<_>) = self.pending.drain(..).partition(|r| r.frame <= frame);
        self.pending = keep;
        old
    }
}

/// Users with at least one request that can be served at `now`.
pub fn eligible_users(queues: &[UserQueue], now: Slot) -> Vec<usize> {
    queues
        .iter()
        .enumerate()
        .filter(|(_, q)| q.has_servable(now))
        .map(|(u, _)| u)
        .collect()
}

/// Estimated rates `pref[u][b]` in bit/s for the eligible users.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceMatrix {
    /// User identifier of each row, ascending.
    pub users: Vec<usize>,
    pub n_sbs: usize,
    values: Vec<f64>,
}

impl PreferenceMatrix {
    pub fn from_rows(users: Vec<usize>, rows: &[Vec<f64>]) -> Self {
        let n_sbs = rows.first().map_or(0, Vec::len);
        assert_eq!(users.len(), rows.len(), "one row per user");
        let mut values = Vec::with_capacity(rows.len() * n_sbs);
        for r in rows {
            assert_eq!(r.len(), n_sbs, "ragged preference rows");
            assert!(r.iter().all(|v| v.is_finite()), "non-finite preference");
            values.extend_from_slice(r);
        }
        PreferenceMatrix { users, n_sbs, values }
    }

    /// Rows are users `0..rows.len()`.
    pub fn from_table(rows: &[Vec<f64>]) -> Self {
        Self::from_rows((0..rows.len()).collect(), rows)
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn get(&self, row: usize, sbs: usize) -> f64 {
        self.values[row * self.n_sbs + sbs]
    }

    /// Whether user row `u` strictly prefers SBS `a` to SBS `b`.
    pub fn user_prefers(&self, u: usize, a: usize, b: usize) -> bool {
        let (pa, pb) = (self.get(u, a), self.get(u, b));
        pa > pb || (pa == pb && a < b)
    }

    /// Whether SBS `b` strictly prefers user row `u` to user row `v`.
    pub fn sbs_prefers(&self, b: usize, u: usize, v: usize) -> bool {
        let (pu, pv) = (self.get(u, b), self.get(v, b));
        pu > pv || (pu == pv && u < v)
    }
}

/// Preference of every eligible user towards every SBS, using the estimated
/// interference of each user.
pub fn compute_preferences(
    eligible: &[usize],
    links: &[Vec<LinkState>],
    interference_estimate: &[f64],
    cfg: &ChannelConfig,
    sbs_bandwidth: &[f64],
) -> PreferenceMatrix {
    let n_sbs = sbs_bandwidth.len();
    let mut values = Vec::with_capacity(eligible.len() * n_sbs);
    for &u in eligible {
        for (b, &bw) in sbs_bandwidth.iter().enumerate() {
            let s = sinr(&links[u][b], interference_estimate[u], cfg);
            values.push(achievable_rate(s, bw));
        }
    }
    PreferenceMatrix {
        users: eligible.to_vec(),
        n_sbs,
        values,
    }
}

/// A one-to-one matching, as (user row, SBS) pairs sorted by user row.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub proposals: usize,
}

impl Matching {
    pub fn partner_of_user(&self, u: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == u).map(|p| p.1)
    }

    pub fn partner_of_sbs(&self, b: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.1 == b).map(|p| p.0)
    }

    /// Pairs (u, b) not in the matching that both strictly prefer each other
    /// to their current partner; being unmatched ranks below everything.
    pub fn blocking_pairs(&self, prefs: &PreferenceMatrix) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..prefs.n_users() {
            let pu = self.partner_of_user(u);
            for b in 0..prefs.n_sbs {
                if pu == Some(b) {
                    continue;
                }
                let u_wants = pu.is_none_or(|cur| prefs.user_prefers(u, b, cur));
                let b_wants = self
                    .partner_of_sbs(b)
                    .is_none_or(|cur| prefs.sbs_prefers(b, u, cur));
                if u_wants && b_wants {
                    out.push((u, b));
                }
            }
        }
        out
    }
}

/// User-proposing deferred acceptance. The proposing user is drawn uniformly
/// from the unmatched users that still have SBSs to propose to.
pub fn deferred_acceptance<R: Rng + ?Sized>(prefs: &PreferenceMatrix, rng: &mut R) -> Matching {
    let n_u = prefs.n_users();
    let n_b = prefs.n_sbs;
    let mut ranked: Vec<Vec<usize>> = (0..n_u)
        .map(|u| {
            let mut order: Vec<usize> = (0..n_b).collect();
            order.sort_by(|&a, &b| {
                if prefs.user_prefers(u, a, b) {
                    std::cmp::Ordering::Less
                } else if prefs.user_prefers(u, b, a) {
                    std::cmp::Ordering::Greater
                } else {
                    std::cmp::Ordering::Equal
                }
            });
            // Popped from the back.
            order.reverse();
            order
        })
        .collect();

    let mut user_match: Vec<Option<usize>> = vec![None; n_u];
    let mut sbs_match: Vec<Option<usize>> = vec![None; n_b];
    let mut free: Vec<usize> = (0..n_u).filter(|&u| !ranked[u].is_empty()).collect();
    let mut proposals = 0;

    while !free.is_empty() {
        let k = rng.random_range(0..free.len());
        let u = free[k];
        let Some(b) = ranked[u].pop() else {
            free.swap_remove(k);
            continue;
        };
        proposals += 1;
        match sbs_match[b] {
            None => {
                sbs_match[b] = Some(u);
                user_match[u] = Some(b);
                free.swap_remove(k);
            }
            Some(cur) if prefs.sbs_prefers(b, u, cur) => {
                sbs_match[b] = Some(u);
                user_match[u] = Some(b);
                user_match[cur] = None;
                free[k] = cur;
            }
            Some(_) => {}
        }
        // Users with nobody left to propose to stay unmatched.
        free.retain(|&v| user_match[v].is_none() && !ranked[v].is_empty());
    }

    let pairs = user_match
        .iter()
        .enumerate()
        .filter_map(|(u, b)| b.map(|b| (u, b)))
        .collect();
    Matching { pairs, proposals }
}
