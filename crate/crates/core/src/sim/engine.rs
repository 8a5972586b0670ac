//! The slot loop.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{PredictorKind, SimConfig, Timing};
use super::metrics::{compute_metrics, Counters, FrameRecord, RunMetrics, ServeEvent};
use super::workload::{derive_seed, Workload};
use crate::caching::{populate_cache, CacheLookup, CacheState};
use crate::channel::{
    achievable_rate, antenna_gain, effective_path_loss, misalignment_deg, sampled_path_loss, sinr, update_interference_ema,
    LinkState, LosMode, Point,
};
use crate::geometry::{candidate_viewports, select_viewport, ViewportGrid, ViewportId};
use crate::matching::{compute_preferences, deferred_acceptance, eligible_users, order_queue, FrameAdmission, Slot, UserQueue};
use crate::prediction::{Baseline, Predictor};
use crate::{Error, Result};

const TAG_MATCHING: u64 = 11;
const TAG_LOS: u64 = 12;
const TAG_MOBILITY: u64 = 13;

/// Bits below which a request counts as fully delivered.
const DONE_BITS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Keep every transmission and every request's timing.
    pub log_events: bool,
}

/// Timing of one admitted request, kept when events are logged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RequestTimes {
    pub id: u64,
    pub user: usize,
    pub frame: usize,
    pub created_at: Slot,
    pub available_at: Slot,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub records: Vec<FrameRecord>,
    pub counters: Counters,
    pub events: Vec<ServeEvent>,
    pub requests: Vec<RequestTimes>,
}

struct Links {
    n_users: usize,
    n_sbs: usize,
    /// [u][b]
    state: Vec<Vec<LinkState>>,
    /// Transmit gain of SBS b beamed at `target`, towards `victim`: [b][target][victim].
    g_tx: Vec<f64>,
    /// Receive gain of user u beamed at SBS `aim`, towards SBS `src`: [u][aim][src].
    g_rx: Vec<f64>,
}

impl Links {
    fn new(n_users: usize, n_sbs: usize, cfg: &SimConfig) -> Self {
        Links {
            n_users,
            n_sbs,
            state: vec![vec![LinkState::aligned(1.0, &cfg.channel); n_sbs]; n_users],
            g_tx: vec![0.0; n_sbs * n_users * n_users],
            g_rx: vec![0.0; n_users * n_sbs * n_sbs],
        }
    }

    fn rebuild_beams(&mut self, users: &[Point], sbs: &[Point], cfg: &SimConfig) {
        let ch = &cfg.channel;
        let (nu, nb) = (self.n_users, self.n_sbs);
        for (b, s) in sbs.iter().enumerate() {
            for (t, target) in users.iter().enumerate() {
                for (v, victim) in users.iter().enumerate() {
                    let g = if t == v {
                        ch.mainlobe_tx_gain()
                    } else {
                        antenna_gain(misalignment_deg(*s, *target, *victim), ch.tx_beamwidth_deg, ch.sidelobe_gain)
                    };
                    self.g_tx[(b * nu + t) * nu + v] = g;
                }
            }
        }
        for (u, p) in users.iter().enumerate() {
            for (a, aim) in sbs.iter().enumerate() {
                for (src_i, src) in sbs.iter().enumerate() {
                    let g = if a == src_i {
                        ch.mainlobe_rx_gain()
                    } else {
                        antenna_gain(misalignment_deg(*p, *aim, *src), ch.rx_beamwidth_deg, ch.sidelobe_gain)
                    };
                    self.g_rx[(u * nb + a) * nb + src_i] = g;
                }
            }
        }
    }

    fn refresh_pathloss(&mut self, users: &[Point], sbs: &[Point], cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<()> {
        for (u, p) in users.iter().enumerate() {
            for (b, s) in sbs.iter().enumerate() {
                let d = p.distance(s);
                let (pl, los) = match cfg.channel.los_mode {
                    LosMode::Expected => (effective_path_loss(d, &cfg.channel)?, None),
                    LosMode::Bernoulli => {
                        let (pl, los) = sampled_path_loss(d, &cfg.channel, rng)?;
                        (pl, Some(los))
                    }
                };
                let mut l = LinkState::aligned(pl, &cfg.channel);
                l.los = los;
                self.state[u][b] = l;
            }
        }
        Ok(())
    }

    /// Interference at `victim`, whose receive beam points at SBS `aim`,
    /// from the active (sbs, user) pairs other than its own.
    fn interference(&self, victim: usize, aim: usize, active: &[(usize, usize)], p_tx: f64) -> f64 {
        let (nu, nb) = (self.n_users, self.n_sbs);
        active
            .iter()
            .filter(|&&(_, t)| t != victim)
            .map(|&(b, t)| {
                p_tx * self.g_tx[(b * nu + t) * nu + victim] * self.g_rx[(victim * nb + aim) * nb + b]
                    / self.state[victim][b].pathloss
            })
            .sum()
    }
}

struct Mobility {
    speed: f64,
    waypoints: Vec<Point>,
    rng: ChaCha8Rng,
}

impl Mobility {
    fn step(&mut self, positions: &mut [Point], dt: f64, side: f64) {
        for (p, w) in positions.iter_mut().zip(self.waypoints.iter_mut()) {
            let mut left = self.speed * dt;
            while left > 0.0 {
                let d = p.distance(w);
                if d <= left {
                    *p = *w;
                    left -= d;
                    *w = Point::new(self.rng.random_range(0.0..side), self.rng.random_range(0.0..side));
                    if d == 0.0 {
                        break;
                    }
                } else {
                    p.x += (w.x - p.x) * left / d;
                    p.y += (w.y - p.y) * left / d;
                    left = 0.0;
                }
            }
        }
    }
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    work: &'a Workload,
    model: Option<&'a dyn Predictor>,
    grid: ViewportGrid,
    timing: Timing,
    payload: f64,
    sbs: Vec<Point>,
    positions: Vec<Point>,
    links: Links,
    cache: CacheState,
    queues: Vec<UserQueue>,
    forecasts: Vec<Vec<Option<ViewportId>>>,
    fetches: HashMap<(usize, usize, ViewportId), Slot>,
    ema: Vec<f64>,
    aim: Vec<usize>,
    next_id: u64,
    counters: Counters,
    records: Vec<Vec<FrameRecord>>,
    events: Vec<ServeEvent>,
    requests: Vec<RequestTimes>,
    log: bool,
    rng_matching: ChaCha8Rng,
    rng_los: ChaCha8Rng,
    mobility: Mobility,
}

impl Engine<'_> {
    fn viewport_for(&self, q: crate::geometry::Quaternion, video: usize, frame: usize) -> Result<ViewportId> {
        let cands = candidate_viewports(q, self.cfg.fov, &self.grid)?;
        let cached = if self.cfg.scheme.cached() {
            self.cache.cached(video, frame)
        } else {
            Default::default()
        };
        select_viewport(&cands, self.cfg.selection, &cached)
    }

    fn admit_frame(&mut self, f: usize, now: Slot) -> Result<()> {
        let cfg = self.cfg;
        let h = cfg.horizon;
        for u in 0..cfg.num_users {
            let video = self.work.videos[u];
            let poses = &self.work.traces[u].poses;
            let actual = self.viewport_for(poses[f], video, f)?;
            let mut predicted = None;
            if cfg.scheme.proactive() && f + 1 >= cfg.history {
                let q = match cfg.predictor {
                    PredictorKind::Oracle => poses[f + h],
                    PredictorKind::Baseline => Baseline.predict(&poses[f + 1 - cfg.history..=f], h)?,
                    PredictorKind::Gru => self
                        .model
                        .ok_or_else(|| Error::Config("the gru predictor needs a trained model".into()))?
                        .predict(&poses[f + 1 - cfg.history..=f], h)?,
                };
                let vp = self.viewport_for(q, video, f + h)?;
                self.forecasts[u][f + h] = Some(vp);
                predicted = Some(vp);
                self.counters.predictions += 1;
            }
            let prior = self.forecasts[u][f];
            if prior.is_some_and(|p| p != actual) {
                self.counters.prediction_misses += 1;
            }
            let adm = FrameAdmission {
                user: u,
                video,
                frame: f,
                now,
                slots_per_frame: self.timing.slots_per_frame,
                horizon_frames: h,
                predicted,
                prior_prediction: prior,
                actual,
                size_bits: self.payload,
            };
            let out = self.queues[u].admit(&adm, &mut self.next_id);
            self.counters.dropped += out.dropped.len() as u64;
            self.counters.admitted += out.enqueued.len() as u64;
            for id in out.enqueued {
                let r = self.queues[u]
                    .pending
                    .iter_mut()
                    .find(|r| r.id == id)
                    .expect("enqueued request is pending");
                self.counters.cache_lookups += 1;
                r.available_at = if self.cache.lookup(r.video, r.frame, r.viewport) == CacheLookup::Hit {
                    self.counters.cache_hits += 1;
                    now
                } else {
                    let key = (r.video, r.frame, r.viewport);
                    let at = *self.fetches.entry(key).or_insert_with(|| {
                        self.counters.backhaul_fetches += 1;
                        now + self.timing.backhaul_slots
                    });
                    at.max(now)
                };
                if self.log {
                    self.requests.push(RequestTimes {
                        id,
                        user: u,
                        frame: r.frame,
                        created_at: r.created_at,
                        available_at: r.available_at,
                    });
                }
            }
        }
        Ok(())
    }

    /// Outcome of frame `g` for every user, then drop what is left of it.
    /// Latency counts from the frame instant; the frame is HD if it arrives
    /// before the next one replaces it.
    fn finalize_frame(&mut self, g: usize) -> Result<()> {
        let spf = self.timing.slots_per_frame;
        let due = (g as u64 * spf) as f64;
        let shown_until = due + spf as f64;
        for u in 0..self.cfg.num_users {
            let dir = crate::geometry::normalize(self.work.traces[u].poses[g])?.view_direction();
            let delivered = self.queues[u].delivered.remove(&g).unwrap_or_default();
            let best = delivered
                .iter()
                .filter(|(vp, _)| self.grid.contains_fov(*vp, dir, self.cfg.fov))
                .map(|&(_, at)| at)
                .min_by(f64::total_cmp);
            let hd = best.is_some_and(|at| at <= shown_until);
            let late = match best {
                Some(at) if hd => (at - due).max(0.0),
                _ => spf as f64,
            };
            if g >= self.cfg.warmup_frames() {
                self.records[u].push(FrameRecord {
                    user: u,
                    frame: g,
                    hd,
                    delay_ms: late * self.cfg.slot_s * 1e3,
                });
            }
            self.counters.dropped += self.queues[u].drop_through(g).len() as u64;
        }
        self.fetches.retain(|k, _| k.1 > g);
        Ok(())
    }

    fn serve_slot(&mut self, t: Slot) {
        let cfg = self.cfg;
        let eligible = eligible_users(&self.queues, t);
        let mut active: Vec<(usize, usize)> = Vec::new();
        let p_tx = cfg.channel.tx_power_w();
        let bw = vec![cfg.channel.bandwidth_hz; self.sbs.len()];
        if !eligible.is_empty() {
            let prefs = compute_preferences(&eligible, &self.links.state, &self.ema, &cfg.channel, &bw);
            let m = deferred_acceptance(&prefs, &mut self.rng_matching);
            active = m.pairs.iter().map(|&(row, b)| (b, prefs.users[row])).collect();
            for &(b, u) in &active {
                self.aim[u] = b;
                let i = self.links.interference(u, b, &active, p_tx);
                let s = sinr(&self.links.state[u][b], i, &cfg.channel);
                let budget = achievable_rate(s, bw[b]) * cfg.slot_s;
                let q = &mut self.queues[u];
                order_queue(&mut q.pending, cfg.queue_order);
                let mut used = 0.0;
                let mut done = Vec::new();
                for (idx, r) in q.pending.iter_mut().enumerate() {
                    if used >= budget {
                        break;
                    }
                    if !r.is_servable(t) {
                        continue;
                    }
                    let take = r.remaining_bits.min(budget - used);
                    r.remaining_bits -= take;
                    used += take;
                    if self.log {
                        self.events.push(ServeEvent {
                            slot: t,
                            user: u,
                            sbs: b,
                            request: r.id,
                            bits: take,
                            sinr: s,
                        });
                    }
                    if r.remaining_bits <= DONE_BITS {
                        done.push((idx, t as f64 + used / budget));
                    }
                }
                for &(idx, at) in done.iter().rev() {
                    q.complete(idx, at);
                    self.counters.completed += 1;
                }
            }
        }
        let beta = cfg.channel.ema_beta;
        for u in 0..cfg.num_users {
            let inst = self.links.interference(u, self.aim[u], &active, p_tx);
            self.ema[u] = update_interference_ema(inst, self.ema[u], beta);
        }
    }
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a SimConfig, work: &'a Workload, model: Option<&'a dyn Predictor>, log: bool) -> Result<Self> {
        let timing = cfg.timing();
        let sbs = cfg.sbs();
        let cache = if cfg.scheme.cached() {
            populate_cache(&work.profiles, cfg.cache_size)
        } else {
            CacheState::disabled()
        };
        let n = cfg.num_users;
        let mut mob_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_MOBILITY));
        let waypoints = (0..n)
            .map(|_| Point::new(mob_rng.random_range(0.0..cfg.arcade_side), mob_rng.random_range(0.0..cfg.arcade_side)))
            .collect();
        Ok(Engine {
            cfg,
            work,
            model,
            grid: cfg.grid()?,
            timing,
            payload: cfg.payload_bits()?,
            links: Links::new(n, sbs.len(), cfg),
            sbs,
            positions: work.positions.clone(),
            cache,
            queues: vec![UserQueue::new(); n],
            forecasts: vec![vec![None; timing.frames + cfg.horizon + 1]; n],
            fetches: HashMap::new(),
            ema: vec![0.0; n],
            aim: vec![0; n],
            next_id: 0,
            counters: Counters::default(),
            records: vec![Vec::new(); n],
            events: Vec::new(),
            requests: Vec::new(),
            log,
            rng_matching: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_MATCHING)),
            rng_los: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_LOS)),
            mobility: Mobility {
                speed: cfg.mobility_speed,
                waypoints,
                rng: mob_rng,
            },
        })
    }

    fn refresh_channel(&mut self, first: bool) -> Result<()> {
        let moving = self.mobility.speed > 0.0;
        if moving && !first {
            let dt = self.timing.refresh_slots as f64 * self.cfg.slot_s;
            self.mobility.step(&mut self.positions, dt, self.cfg.arcade_side);
        }
        if first || moving {
            self.links.rebuild_beams(&self.positions, &self.sbs, self.cfg);
        }
        if first || moving || self.cfg.channel.los_mode == LosMode::Bernoulli {
            self.links.refresh_pathloss(&self.positions, &self.sbs, self.cfg, &mut self.rng_los)?;
        }
        if first {
            // Until first served, each user listens towards its strongest SBS.
            for u in 0..self.cfg.num_users {
                let row = &self.links.state[u];
                self.aim[u] = (0..row.len())
                    .min_by(|&a, &b| row[a].pathloss.total_cmp(&row[b].pathloss))
                    .unwrap_or(0);
            }
        }
        Ok(())
    }

    fn run(mut self) -> Result<RunOutput> {
        let spf = self.timing.slots_per_frame;
        for t in 0..self.timing.total_slots {
            if t % spf == 0 {
                let f = (t / spf) as usize;
                if f >= 1 {
                    self.finalize_frame(f - 1)?;
                }
                self.admit_frame(f, t)?;
            }
            if t % self.timing.refresh_slots == 0 {
                self.refresh_channel(t == 0)?;
            }
            self.serve_slot(t);
        }
        self.counters.pending_at_end = self.queues.iter().map(|q| q.pending.len() as u64).sum();
        let records: Vec<FrameRecord> = self.records.into_iter().flatten().collect();
        Ok(RunOutput {
            metrics: compute_metrics(&records),
            records,
            counters: self.counters,
            events: self.events,
            requests: self.requests,
        })
    }
}

/// Runs one simulation. `model` is required when the configuration asks for
/// the trained predictor and ignored otherwise.
pub fn run(cfg: &SimConfig, work: &Workload, model: Option<&dyn Predictor>, opts: RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    work.check(cfg)?;
    if cfg.scheme.proactive() && cfg.predictor == PredictorKind::Gru && model.is_none() {
        return Err(Error::Config("the gru predictor needs a trained model".into()));
    }
    Engine::new(cfg, work, model, opts.log_events)?.run()
}
