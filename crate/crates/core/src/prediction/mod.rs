//! Pose prediction: sliding-window datasets, a constant-velocity baseline and
//! a recurrent network trained on pose-relative quaternions.

mod checkpoint;
mod gru;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, MAGIC};
pub use gru::{gru_backward, gru_forward, gru_forward_batch, rmse, GruModel, Layout, DEFAULT_HIDDEN, DEFAULT_LAYERS, RMSE_FLOOR};
pub use train::{fold_split, train, FoldReport, TrainConfig, TrainReport};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::geometry::{angular_distance, sign_continuize, Quaternion};
use crate::{Error, Result};

/// Frame duration used throughout (33 ms).
pub const FRAME_DURATION_S: f64 = 0.033;

/// Quaternion components fed to the network per step.
pub const INPUT_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrace {
    pub user_id: String,
    pub frame_rate: f64,
    pub poses: Vec<Quaternion>,
}

impl PoseTrace {
    pub fn new(user_id: impl Into<String>, poses: Vec<Quaternion>) -> Self {
        PoseTrace {
            user_id: user_id.into(),
            frame_rate: 1.0 / FRAME_DURATION_S,
            poses,
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionConfig {
    /// Frames of pose history in each input window.
    pub history: usize,
    /// Frames between the last observed pose and the predicted one.
    pub horizon: usize,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        PredictionConfig {
            history: 10,
            horizon: 10,
        }
    }
}

impl PredictionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history == 0 || self.horizon == 0 {
            return Err(Error::Config("history and horizon must be at least 1 frame".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub window: Vec<Quaternion>,
    pub target: Quaternion,
    /// Index of the source trace.
    pub trace: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Traces too short to yield a sample.
    pub skipped: usize,
}

/// Every window of `history` poses with the pose `horizon` frames after it.
pub fn make_dataset(traces: &[PoseTrace], cfg: &PredictionConfig) -> Dataset {
    make_dataset_strided(traces, cfg, 1)
}

/// Like [`make_dataset`] but keeps only every `stride`-th window.
pub fn make_dataset_strided(traces: &[PoseTrace], cfg: &PredictionConfig, stride: usize) -> Dataset {
    let stride = stride.max(1);
    let mut ds = Dataset::default();
    for (ti, tr) in traces.iter().enumerate() {
        let need = cfg.history + cfg.horizon;
        if tr.len() < need {
            ds.skipped += 1;
            continue;
        }
        let mut poses = tr.poses.clone();
        sign_continuize(&mut poses);
        for t in (cfg.history - 1..tr.len() - cfg.horizon).step_by(stride) {
            ds.samples.push(Sample {
                window: poses[t + 1 - cfg.history..=t].to_vec(),
                target: poses[t + cfg.horizon],
                trace: ti,
            });
        }
    }
    if ds.skipped > 0 {
        log::warn!("{} trace(s) shorter than history + horizon were skipped", ds.skipped);
    }
    ds
}

/// Constant angular velocity extrapolation from the last two poses.
pub fn baseline_predict(window: &[Quaternion], horizon: usize) -> Result<Quaternion> {
    if window.len() < 2 {
        return Err(Error::Contract("baseline needs at least two poses".into()));
    }
    let last = window[window.len() - 1].normalize()?;
    let prev = window[window.len() - 2].normalize()?;
    let step = last * prev.conjugate();
    let rv = step.to_rotation_vector();
    let h = horizon as f64;
    let advance = Quaternion::from_rotation_vector([rv[0] * h, rv[1] * h, rv[2] * h]);
    (advance * last).normalize()
}

/// Window expressed relative to its last pose, flattened for the network.
pub fn encode_window(window: &[Quaternion]) -> Result<Vec<f64>> {
    let last = window
        .last()
        .ok_or_else(|| Error::Contract("empty window".into()))?
        .normalize()?;
    let inv = last.conjugate();
    let mut rel: Vec<Quaternion> = window.iter().map(|q| inv * *q).collect();
    // Continuity runs backwards from the identity at the last step.
    rel.reverse();
    if rel[0].w < 0.0 {
        rel[0] = -rel[0];
    }
    sign_continuize(&mut rel);
    rel.reverse();
    Ok(rel.iter().flat_map(|q| q.as_array()).collect())
}

/// Target relative to the last pose of its window, on the w ≥ 0 hemisphere.
pub fn encode_target(last: Quaternion, target: Quaternion) -> Result<[f64; 4]> {
    let rel = last.normalize()?.conjugate() * target;
    let rel = if rel.w < 0.0 { -rel } else { rel };
    Ok(rel.as_array())
}

/// Maps a raw network output back to an absolute unit quaternion.
pub fn decode_output(last: Quaternion, output: &[f64]) -> Result<Quaternion> {
    let raw = Quaternion::from_array([output[0], output[1], output[2], output[3]]);
    let rel = raw.normalize().unwrap_or(Quaternion::IDENTITY);
    (last.normalize()? * rel).normalize()
}

pub trait Predictor {
    fn predict(&self, window: &[Quaternion], horizon: usize) -> Result<Quaternion>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Baseline;

impl Predictor for Baseline {
    fn predict(&self, window: &[Quaternion], horizon: usize) -> Result<Quaternion> {
        baseline_predict(window, horizon)
    }
}

/// A trained network. It predicts only the horizon it was trained for.
#[derive(Debug, Clone)]
pub struct GruPredictor {
    pub model: GruModel,
    pub config: PredictionConfig,
}

impl GruPredictor {
    pub fn from_checkpoint(ck: Checkpoint) -> Self {
        GruPredictor {
            model: ck.model,
            config: ck.config,
        }
    }
}

impl Predictor for GruPredictor {
    fn predict(&self, window: &[Quaternion], horizon: usize) -> Result<Quaternion> {
        if horizon != self.config.horizon {
            return Err(Error::Contract(format!(
                "model trained for horizon {}, asked for {horizon}",
                self.config.horizon
            )));
        }
        if window.len() != self.config.history {
            return Err(Error::Contract(format!(
                "model expects {} poses, got {}",
                self.config.history,
                window.len()
            )));
        }
        let x = encode_window(window)?;
        let y = gru_forward(&self.model, &x)?;
        decode_output(window[window.len() - 1], &y)
    }
}

/// Mean angular error in degrees of `predictor` over the samples.
pub fn mean_error_deg(predictor: &dyn Predictor, samples: &[Sample], horizon: usize) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut sum = 0.0;
    for s in samples {
        let p = predictor.predict(&s.window, horizon)?;
        sum += angular_distance(p, s.target)?.to_degrees();
    }
    Ok(sum / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonRow {
    pub horizon: usize,
    pub mean_error_deg: f64,
    pub samples: usize,
    /// Mean error per trace, in trace order; NaN for traces without samples.
    pub per_trace_deg: Vec<f64>,
}

/// Mean angular error per horizon. Each entry pairs a horizon with the
/// predictor to use for it.
pub fn evaluate_horizon(predictors: &[(usize, &dyn Predictor)], traces: &[PoseTrace], history: usize) -> Result<Vec<HorizonRow>> {
    let mut rows = Vec::with_capacity(predictors.len());
    for &(horizon, pred) in predictors {
        let cfg = PredictionConfig { history, horizon };
        cfg.validate()?;
        let ds = make_dataset(traces, &cfg);
        let mut sums = vec![(0.0, 0usize); traces.len()];
        for s in &ds.samples {
            let p = pred.predict(&s.window, horizon)?;
            let e = angular_distance(p, s.target)?.to_degrees();
            sums[s.trace].0 += e;
            sums[s.trace].1 += 1;
        }
        let total: f64 = sums.iter().map(|s| s.0).sum();
        let n = ds.samples.len();
        rows.push(HorizonRow {
            horizon,
            mean_error_deg: if n == 0 { f64::NAN } else { total / n as f64 },
            samples: n,
            per_trace_deg: sums
                .iter()
                .map(|&(s, c)| if c == 0 { f64::NAN } else { s / c as f64 })
                .collect(),
        });
    }
    Ok(rows)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    /// One-sided p-value for a positive association.
    pub p_value: f64,
    pub n: usize,
}

/// Spearman rank correlation with a t-distribution p-value.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Spearman> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::Contract("spearman needs two equal-length series of at least 3".into()));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    let rho = if sxx == 0.0 || syy == 0.0 { 0.0 } else { sxy / (sxx * syy).sqrt() };
    let df = n - 2.0;
    let p_value = if rho >= 1.0 {
        0.0
    } else if rho <= -1.0 {
        1.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Domain(e.to_string()))?;
        1.0 - dist.cdf(t)
    };
    Ok(Spearman {
        rho,
        p_value,
        n: x.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::quaternion_from_uniforms;
    use proptest::prelude::*;

    fn rotating(n: usize, deg_per_frame: f64) -> PoseTrace {
        let poses = (0..n)
            .map(|k| Quaternion::from_axis_angle([0.0, 0.0, 1.0], (k as f64 * deg_per_frame).to_radians()))
            .collect();
        PoseTrace::new("r", poses)
    }

    #[test]
    fn dataset_counts() {
        let cfg = PredictionConfig { history: 10, horizon: 10 };
        assert_eq!(make_dataset(&[rotating(40, 1.0)], &cfg).samples.len(), 21);
        assert_eq!(make_dataset(&[rotating(20, 1.0)], &cfg).samples.len(), 1);
        let short = make_dataset(&[rotating(19, 1.0)], &cfg);
        assert_eq!((short.samples.len(), short.skipped), (0, 1));
    }

    #[test]
    fn dataset_window_alignment() {
        let tr = rotating(25, 1.0);
        let cfg = PredictionConfig { history: 3, horizon: 2 };
        let ds = make_dataset(&[tr.clone()], &cfg);
        let s = &ds.samples[0];
        assert_eq!(s.window, tr.poses[0..3].to_vec());
        assert_eq!(s.target, tr.poses[4]);
        assert_eq!(make_dataset_strided(&[tr], &cfg, 5).samples.len(), 5);
    }

    #[test]
    fn baseline_static_and_rotating() {
        let q = Quaternion::from_yaw_pitch(30.0, 10.0);
        assert!(angular_distance(baseline_predict(&[q, q, q], 7).unwrap(), q).unwrap() < 1e-12);

        let tr = rotating(10, 1.0);
        let p = baseline_predict(&tr.poses, 10).unwrap();
        let truth = Quaternion::from_axis_angle([0.0, 0.0, 1.0], 19f64.to_radians());
        assert!(angular_distance(p, truth).unwrap() < 1e-6);

        let mut flipped = tr.poses.clone();
        let n = flipped.len();
        flipped[n - 1] = -flipped[n - 1];
        let p2 = baseline_predict(&flipped, 10).unwrap();
        assert!(angular_distance(p2, truth).unwrap() < 1e-6);
        assert!(baseline_predict(&tr.poses[..1], 3).is_err());
    }

    #[test]
    fn baseline_horizon_table() {
        let still = PoseTrace::new("s", vec![Quaternion::from_yaw_pitch(10.0, 5.0); 60]);
        let rot = rotating(60, 1.3);
        let b = Baseline;
        let preds: Vec<(usize, &dyn Predictor)> = vec![(5, &b), (10, &b), (30, &b)];
        for rows in [
            evaluate_horizon(&preds, &[still], 10).unwrap(),
            evaluate_horizon(&preds, &[rot], 10).unwrap(),
        ] {
            for r in rows {
                assert!(r.mean_error_deg < 1e-4, "{r:?}");
            }
        }
    }

    #[test]
    fn encoding_recovers_target() {
        let tr = rotating(20, 2.0);
        let last = tr.poses[9];
        let tgt = tr.poses[15];
        let y = encode_target(last, tgt).unwrap();
        let back = decode_output(last, &y).unwrap();
        assert!(angular_distance(back, tgt).unwrap() < 1e-12);
        let x = encode_window(&tr.poses[0..10]).unwrap();
        assert_eq!(x.len(), 40);
        assert!((x[36] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_basics() {
        let s = spearman(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 9.0, 10.0]).unwrap();
        assert!((s.rho - 1.0).abs() < 1e-12);
        assert_eq!(s.p_value, 0.0);
        let s = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[5.0, 6.0, 7.0, 8.0, 7.0]).unwrap();
        // Ranks of y: 1 2 3.5 5 3.5 → ρ = 0.8208
        assert!((s.rho - 0.820_782_681).abs() < 1e-6, "{}", s.rho);
        assert!(s.p_value > 0.0 && s.p_value < 0.05);
    }

    proptest! {
        #[test]
        fn gru_predictions_are_unit(seed in 0u64..50, a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
            use rand::SeedableRng;
            let model = GruModel::init(4, 3, 2, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let p = GruPredictor { model, config: PredictionConfig { history: 3, horizon: 2 } };
            let q0 = quaternion_from_uniforms(a, b, c);
            let w = [q0, q0 * Quaternion::from_yaw_pitch(2.0, 1.0), q0 * Quaternion::from_yaw_pitch(4.0, 1.5)];
            let out = p.predict(&w, 2).unwrap();
            prop_assert!((out.norm() - 1.0).abs() < 1e-12);
        }
    }
}
