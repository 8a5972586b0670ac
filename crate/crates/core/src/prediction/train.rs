//! K-fold training with Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::gru::{gru_backward, GruModel, DEFAULT_HIDDEN, DEFAULT_LAYERS};
use super::{encode_target, encode_window, make_dataset_strided, mean_error_deg, GruPredictor, PoseTrace, PredictionConfig, Sample, INPUT_DIM};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub folds: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub hidden: usize,
    pub layers: usize,
    /// Keep every n-th sliding window.
    pub window_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            folds: 5,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            hidden: DEFAULT_HIDDEN,
            layers: DEFAULT_LAYERS,
            window_stride: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if self.hidden == 0 || self.layers == 0 {
            return bad("hidden and layers must be at least 1");
        }
        if self.window_stride == 0 {
            return bad("window_stride must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub fold: usize,
    pub validation_traces: Vec<usize>,
    /// Mean validation angular error in degrees; NaN when the fold diverged.
    pub validation_error_deg: f64,
    /// Mean training loss per completed epoch.
    pub epoch_loss: Vec<f64>,
    pub diverged: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub checkpoint: Checkpoint,
    pub best_fold: usize,
    pub folds: Vec<FoldReport>,
}

impl TrainReport {
    pub fn predictor(&self) -> GruPredictor {
        GruPredictor::from_checkpoint(self.checkpoint.clone())
    }

    /// Mean validation error over folds that finished.
    pub fn mean_validation_error_deg(&self) -> f64 {
        let ok: Vec<f64> = self
            .folds
            .iter()
            .map(|f| f.validation_error_deg)
            .filter(|e| e.is_finite())
            .collect();
        ok.iter().sum::<f64>() / ok.len() as f64
    }
}

/// Shuffled trace indices cut into `k` near-equal validation groups.
pub fn fold_split(n_traces: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_traces).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (0..k)
        .map(|f| {
            let mut v = order[f * n_traces / k..(f + 1) * n_traces / k].to_vec();
            v.sort_unstable();
            v
        })
        .collect()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
        }
    }
}

struct Encoded {
    x: Vec<f64>,
    y: Vec<f64>,
    steps: usize,
}

fn encode(samples: &[&Sample], steps: usize) -> Result<Encoded> {
    let mut x = Vec::with_capacity(samples.len() * steps * INPUT_DIM);
    let mut y = Vec::with_capacity(samples.len() * INPUT_DIM);
    for s in samples {
        x.extend(encode_window(&s.window)?);
        y.extend(encode_target(s.window[s.window.len() - 1], s.target)?);
    }
    Ok(Encoded { x, y, steps })
}

fn train_fold(
    data: &Encoded,
    fold: usize,
    pred: &PredictionConfig,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> (GruModel, Vec<f64>, Option<Error>) {
    let d = INPUT_DIM;
    let mut model = GruModel::init(d, cfg.hidden, cfg.layers, rng);
    let mut adam = Adam::new(model.params.len());
    let n = data.y.len() / d;
    let steps = data.steps;
    debug_assert_eq!(steps, pred.history);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut bx = Vec::new();
    let mut by = Vec::new();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            bx.clear();
            by.clear();
            for &i in chunk {
                bx.extend_from_slice(&data.x[i * steps * d..(i + 1) * steps * d]);
                by.extend_from_slice(&data.y[i * d..(i + 1) * d]);
            }
            let (loss, grad) = match gru_backward(&model, &bx, &by, chunk.len(), steps) {
                Ok(v) => v,
                Err(e) => return (model, history, Some(e)),
            };
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return (
                    model,
                    history,
                    Some(Error::Diverged {
                        fold,
                        epoch,
                        batch: bi,
                    }),
                );
            }
            total += loss * chunk.len() as f64;
            adam.step(&mut model.params, &grad, cfg);
        }
        let mean = total / n as f64;
        log::debug!("fold {fold} epoch {epoch}: loss {mean:.6}");
        history.push(mean);
    }
    (model, history, None)
}

/// Trains one model per fold and keeps the one with the lowest validation
/// error.
pub fn train(traces: &[PoseTrace], pred: &PredictionConfig, cfg: &TrainConfig, seed: u64) -> Result<TrainReport> {
    pred.validate()?;
    cfg.validate()?;
    if traces.len() < cfg.folds {
        return Err(Error::Config(format!(
            "{} traces cannot be split into {} folds",
            traces.len(),
            cfg.folds
        )));
    }
    let ds = make_dataset_strided(traces, pred, cfg.window_stride);
    if ds.samples.is_empty() {
        return Err(Error::Config("no training samples: traces shorter than history + horizon".into()));
    }
    let splits = fold_split(traces.len(), cfg.folds, seed);
    let mut folds = Vec::with_capacity(cfg.folds);
    let mut best: Option<(f64, usize, GruModel)> = None;
    for (k, val) in splits.into_iter().enumerate() {
        let is_val = |t: usize| val.binary_search(&t).is_ok();
        let train_s: Vec<&Sample> = ds.samples.iter().filter(|s| !is_val(s.trace)).collect();
        let val_s: Vec<Sample> = ds.samples.iter().filter(|s| is_val(s.trace)).cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(k as u64 + 1)));
        if train_s.is_empty() {
            folds.push(FoldReport {
                fold: k,
                validation_traces: val,
                validation_error_deg: f64::NAN,
                epoch_loss: vec![],
                diverged: Some("no training samples".into()),
            });
            continue;
        }
        let data = encode(&train_s, pred.history)?;
        let (model, epoch_loss, failure) = train_fold(&data, k, pred, cfg, &mut rng);
        if let Some(e) = failure {
            log::warn!("fold {k} aborted: {e}");
            folds.push(FoldReport {
                fold: k,
                validation_traces: val,
                validation_error_deg: f64::NAN,
                epoch_loss,
                diverged: Some(e.to_string()),
            });
            continue;
        }
        let predictor = GruPredictor {
            model,
            config: *pred,
        };
        let err = mean_error_deg(&predictor, &val_s, pred.horizon)?;
        log::info!("fold {k}: validation error {err:.3} deg");
        if err.is_finite() && best.as_ref().is_none_or(|b| err < b.0) {
            best = Some((err, k, predictor.model));
        }
        folds.push(FoldReport {
            fold: k,
            validation_traces: val,
            validation_error_deg: err,
            epoch_loss,
            diverged: None,
        });
    }
    let (_, best_fold, model) = best.ok_or_else(|| Error::Config("every fold diverged or lacked data".into()))?;
    Ok(TrainReport {
        checkpoint: Checkpoint { model, config: *pred },
        best_fold,
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quaternion;

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            folds: 2,
            hidden: 6,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn ten_traces_five_folds() {
        let s = fold_split(10, 5, 3);
        assert!(s.iter().all(|f| f.len() == 2));
        let mut all: Vec<usize> = s.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn constant_poses_are_learned() {
        let traces: Vec<PoseTrace> = (0..4)
            .map(|i| PoseTrace::new(i.to_string(), vec![Quaternion::from_yaw_pitch(40.0 * i as f64, 10.0); 60]))
            .collect();
        let pred = PredictionConfig { history: 4, horizon: 3 };
        let rep = train(&traces, &pred, &quick(), 7).unwrap();
        for f in &rep.folds {
            assert!(f.validation_error_deg < 1.0, "{f:?}");
        }
    }

    #[test]
    fn seeded_runs_repeat() {
        let traces: Vec<PoseTrace> = (0..4)
            .map(|i| {
                let poses = (0..40)
                    .map(|k| Quaternion::from_yaw_pitch(k as f64 * (1.0 + i as f64), 5.0))
                    .collect();
                PoseTrace::new(i.to_string(), poses)
            })
            .collect();
        let pred = PredictionConfig { history: 4, horizon: 2 };
        let cfg = TrainConfig { epochs: 3, ..quick() };
        let a = train(&traces, &pred, &cfg, 11).unwrap();
        let b = train(&traces, &pred, &cfg, 11).unwrap();
        assert_eq!(a.folds, b.folds);
        assert_eq!(a.checkpoint, b.checkpoint);
    }

    #[test]
    fn bad_configs() {
        let tr = vec![PoseTrace::new("a", vec![Quaternion::IDENTITY; 30])];
        let pred = PredictionConfig { history: 4, horizon: 2 };
        assert!(train(&tr, &pred, &quick(), 0).is_err());
        assert!(TrainConfig { folds: 1, ..quick() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..quick() }.validate().is_err());
    }
}
