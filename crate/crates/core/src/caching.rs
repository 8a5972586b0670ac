//! Spatial popularity profiles and the static top-K edge cache.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use crate::geometry::ViewportId;
use crate::{Error, Result};

/// Per-frame viewport ranking of one video.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PopularityProfile {
    pub video: usize,
    /// Number of historical users that contributed at each frame.
    pub users_per_frame: Vec<usize>,
    /// Per frame: (viewport, requesting users), most popular first, ties by
    /// lowest viewport index.
    pub ranking: Vec<Vec<(ViewportId, usize)>>,
}

impl PopularityProfile {
    pub fn is_empty(&self) -> bool {
        self.ranking.is_empty()
    }

    pub fn n_frames(&self) -> usize {
        self.ranking.len()
    }

    /// (viewport, fraction) pairs of one frame, in rank order.
    pub fn fractions(&self, frame: usize) -> Vec<(ViewportId, f64)> {
        let Some(rank) = self.ranking.get(frame) else {
            return Vec::new();
        };
        let n = self.users_per_frame[frame] as f64;
        rank.iter().map(|&(vp, c)| (vp, c as f64 / n)).collect()
    }
}

fn rank(counts: HashMap<ViewportId, usize>) -> Vec<(ViewportId, usize)> {
    let mut v: Vec<_> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}

/// Popularity from historical viewport requests: `history[user][frame]` is
/// the viewport the user requested at that frame.
pub fn build_popularity(video: usize, history: &[Vec<ViewportId>]) -> PopularityProfile {
    let n_frames = history.iter().map(Vec::len).max().unwrap_or(0);
    let mut users_per_frame = Vec::with_capacity(n_frames);
    let mut ranking = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let mut counts: HashMap<ViewportId, usize> = HashMap::new();
        let mut n = 0;
        for user in history {
            if let Some(&vp) = user.get(f) {
                *counts.entry(vp).or_default() += 1;
                n += 1;
            }
        }
        users_per_frame.push(n);
        ranking.push(rank(counts));
    }
    PopularityProfile {
        video,
        users_per_frame,
        ranking,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheLookup {
    Hit,
    Miss,
}

/// Static per-frame edge cache.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CacheState {
    pub capacity: usize,
    contents: HashMap<(usize, usize), Vec<ViewportId>>,
}

impl CacheState {
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn lookup(&self, video: usize, frame: usize, vp: ViewportId) -> CacheLookup {
        match self.contents.get(&(video, frame)) {
            Some(c) if c.contains(&vp) => CacheLookup::Hit,
            _ => CacheLookup::Miss,
        }
    }

    pub fn cached(&self, video: usize, frame: usize) -> HashSet<ViewportId> {
        self.contents
            .get(&(video, frame))
            .map(|v| v.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn entries(&self, video: usize, frame: usize) -> &[ViewportId] {
        self.contents.get(&(video, frame)).map_or(&[], Vec::as_slice)
    }

    /// Backhaul delay in slots a request incurs before it can go over the air.
    pub fn backhaul_delay(&self, video: usize, frame: usize, vp: ViewportId, backhaul_slots: u64) -> u64 {
        match self.lookup(video, frame, vp) {
            CacheLookup::Hit => 0,
            CacheLookup::Miss => backhaul_slots,
        }
    }
}

/// Cache the `k` most popular viewports of every frame of every profile.
pub fn populate_cache<'a>(profiles: impl IntoIterator<Item = &'a PopularityProfile>, k: usize) -> CacheState {
    let mut contents = HashMap::new();
    if k > 0 {
        for p in profiles {
            for (f, rank) in p.ranking.iter().enumerate() {
                let top: Vec<ViewportId> = rank.iter().take(k).map(|&(vp, _)| vp).collect();
                if !top.is_empty() {
                    contents.insert((p.video, f), top);
                }
            }
        }
    }
    CacheState { capacity: k, contents }
}

/// Replay a population against the cache and return (hits, lookups).
pub fn replay_hits(cache: &CacheState, video: usize, history: &[Vec<ViewportId>]) -> (usize, usize) {
    let mut hits = 0;
    let mut total = 0;
    for user in history {
        for (f, &vp) in user.iter().enumerate() {
            total += 1;
            if cache.lookup(video, f, vp) == CacheLookup::Hit {
                hits += 1;
            }
        }
    }
    (hits, total)
}

const PROFILE_HEADER: [&str; 5] = ["video_id", "frame_index", "viewport_row", "viewport_col", "fraction"];

/// Write profiles as `video_id,frame_index,viewport_row,viewport_col,fraction`.
pub fn write_profiles<W: Write>(profiles: &[PopularityProfile], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PROFILE_HEADER)?;
    for p in profiles {
        for f in 0..p.n_frames() {
            for (vp, frac) in p.fractions(f) {
                w.write_record([
                    p.video.to_string(),
                    f.to_string(),
                    vp.row.to_string(),
                    vp.col.to_string(),
                    format!("{frac}"),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_profiles(profiles: &[PopularityProfile], path: &Path) -> Result<()> {
    write_profiles(profiles, std::fs::File::create(path)?)
}

/// Parse profile CSV. Fractions are kept as given; counts are reconstructed
/// as fractions of a nominal population so that ranks are preserved.
/// Frame slots one profile file may span, summed over videos.
const MAX_PROFILE_FRAME: usize = 1_000_000;

pub fn read_profiles<R: Read>(input: R, origin: &Path) -> Result<Vec<PopularityProfile>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = r.headers().map_err(|e| Error::parse(origin, 1, e.to_string()))?.clone();
    if headers.iter().map(str::trim).ne(PROFILE_HEADER.iter().copied()) {
        return Err(Error::parse(origin, 1, format!("expected header {}", PROFILE_HEADER.join(","))));
    }
    // video -> frame -> (vp, fraction)
    let mut raw: Vec<(usize, Vec<Vec<(ViewportId, f64)>>)> = Vec::new();
    let mut allocated = 0usize;
    for (i, rec) in r.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::parse(origin, line, e.to_string()))?;
        if rec.len() != 5 {
            return Err(Error::parse(origin, line, format!("expected 5 fields, got {}", rec.len())));
        }
        let field = |k: usize| rec[k].trim();
        let num = |k: usize| -> Result<usize> {
            field(k)
                .parse::<usize>()
                .map_err(|e| Error::parse(origin, line, format!("{}: {e}", PROFILE_HEADER[k])))
        };
        let video = num(0)?;
        let frame = num(1)?;
        let row = u16::try_from(num(2)?).map_err(|_| Error::parse(origin, line, "viewport_row out of range"))?;
        let col = u16::try_from(num(3)?).map_err(|_| Error::parse(origin, line, "viewport_col out of range"))?;
        let frac: f64 = field(4)
            .parse()
            .map_err(|e| Error::parse(origin, line, format!("fraction: {e}")))?;
        if !(0.0..=1.0).contains(&frac) {
            return Err(Error::parse(origin, line, format!("fraction {frac} outside [0, 1]")));
        }
        if frame > MAX_PROFILE_FRAME {
            return Err(Error::parse(origin, line, "frame_index too large"));
        }
        let slot = match raw.iter().position(|(v, _)| *v == video) {
            Some(p) => p,
            None => {
                raw.push((video, Vec::new()));
                raw.len() - 1
            }
        };
        let frames = &mut raw[slot].1;
        if frames.len() <= frame {
            allocated += frame + 1 - frames.len();
            if allocated > MAX_PROFILE_FRAME {
                return Err(Error::parse(origin, line, "too many frames across videos"));
            }
            frames.resize(frame + 1, Vec::new());
        }
        let vp = ViewportId::new(row, col);
        let entries = &mut frames[frame];
        if entries.iter().any(|(v, _)| *v == vp) {
            return Err(Error::parse(origin, line, format!("duplicate viewport ({row}, {col}) in frame {frame}")));
        }
        let total = entries.iter().map(|(_, f)| f).sum::<f64>() + frac;
        if total > 1.0 + 1e-6 {
            return Err(Error::parse(origin, line, format!("fractions of frame {frame} sum to {total:.6}")));
        }
        entries.push((vp, frac));
    }

    // Counts on a fixed population grid keep integer ranking semantics.
    const SCALE: f64 = 1e6;
    Ok(raw
        .into_iter()
        .map(|(video, frames)| {
            let mut users_per_frame = Vec::with_capacity(frames.len());
            let mut ranking = Vec::with_capacity(frames.len());
            for entries in frames {
                let counts: HashMap<ViewportId, usize> = entries
                    .into_iter()
                    .map(|(vp, f)| (vp, (f * SCALE).round() as usize))
                    .collect();
                users_per_frame.push(SCALE as usize);
                ranking.push(rank(counts));
            }
            PopularityProfile {
                video,
                users_per_frame,
                ranking,
            }
        })
        .collect())
}

pub fn load_profiles(path: &Path) -> Result<Vec<PopularityProfile>> {
    read_profiles(std::fs::File::open(path)?, path)
}
