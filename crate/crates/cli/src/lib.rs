//! Batch front-end for the vpstream simulator: configuration files, single
//! runs, parameter sweeps and the CSV tables they produce.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use vpstream::caching::{build_popularity, PopularityProfile};
use vpstream::geometry::{build_grid, FovSpec};
use vpstream::io::{generate_traces, MotionModelParams};
use vpstream::prediction::{
    evaluate_horizon, load_checkpoint, Baseline, GruPredictor, PoseTrace, Predictor, TrainConfig, PredictionConfig,
};
use vpstream::sim::{build_workload, requested_viewports, run, PredictorKind, RunKey, RunMetrics, RunOptions, Scheme, SimConfig, METRICS_HEADER};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "VPSTREAM_OUT_DIR";

/// Output directory used when none is given on the command line.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from)
}

/// Reads a TOML file into `T`, or returns `T::default()` without a path.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_config(&text).with_context(|| format!("in {}", p.display()))
        }
    }
}

pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| anyhow!("{}", e.message().trim_end()))
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Trace generation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSpec {
    pub users: usize,
    pub frames: usize,
    /// Motion preset: `slow` or `high-volatility`.
    pub preset: String,
    /// Explicit motion parameters; override the preset.
    pub motion: Option<MotionModelParams>,
}

impl Default for GenerateSpec {
    fn default() -> Self {
        GenerateSpec {
            users: 12,
            frames: 1800,
            preset: "slow".into(),
            motion: None,
        }
    }
}

impl GenerateSpec {
    pub fn generate(&self, seed: u64) -> Result<Vec<PoseTrace>> {
        let base = match &self.motion {
            Some(m) => m.clone(),
            None => MotionModelParams::preset(&self.preset)?,
        };
        if self.frames == 0 {
            bail!("frames must be at least 1");
        }
        Ok(generate_traces(self.users, self.frames, &MotionModelParams { seed, ..base })?)
    }
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub prediction: PredictionConfig,
    pub training: TrainConfig,
}

// ---------------------------------------------------------------------------
// Predictor evaluation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSpec {
    pub history: usize,
    /// Horizons at which the baseline is evaluated.
    pub horizons: Vec<usize>,
}

impl Default for EvaluateSpec {
    fn default() -> Self {
        EvaluateSpec {
            history: 10,
            horizons: vec![5, 10, 20, 30],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub predictor: String,
    pub horizon: usize,
    pub mean_error_deg: f64,
    pub samples: usize,
}

pub const EVAL_HEADER: [&str; 4] = ["predictor", "horizon", "mean_error_deg", "samples"];

/// Baseline error at every configured horizon, then each model at its own
/// horizon.
pub fn evaluate(traces: &[PoseTrace], spec: &EvaluateSpec, models: &[(String, GruPredictor)]) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    let base: Vec<(usize, &dyn Predictor)> = spec.horizons.iter().map(|&h| (h, &Baseline as &dyn Predictor)).collect();
    for r in evaluate_horizon(&base, traces, spec.history)? {
        rows.push(EvalRow {
            predictor: "baseline".into(),
            horizon: r.horizon,
            mean_error_deg: r.mean_error_deg,
            samples: r.samples,
        });
    }
    for (name, m) in models {
        if m.config.history != spec.history {
            bail!("model {name} uses history {}, the evaluation {}", m.config.history, spec.history);
        }
        let r = evaluate_horizon(&[(m.config.horizon, m as &dyn Predictor)], traces, spec.history)?.remove(0);
        rows.push(EvalRow {
            predictor: name.clone(),
            horizon: r.horizon,
            mean_error_deg: r.mean_error_deg,
            samples: r.samples,
        });
    }
    Ok(rows)
}

pub fn write_eval<W: Write>(rows: &[EvalRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVAL_HEADER)?;
    for r in rows {
        w.write_record([
            r.predictor.clone(),
            r.horizon.to_string(),
            r.mean_error_deg.to_string(),
            r.samples.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Popularity

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopularitySpec {
    /// Viewports per axis.
    pub grid: usize,
    pub fov: FovSpec,
    /// Video the traces belong to.
    pub video: usize,
}

impl Default for PopularitySpec {
    fn default() -> Self {
        PopularitySpec {
            grid: 5,
            fov: FovSpec::default(),
            video: 0,
        }
    }
}

pub fn popularity(traces: &[PoseTrace], spec: &PopularitySpec) -> Result<PopularityProfile> {
    let cfg = SimConfig {
        grid: spec.grid,
        fov: spec.fov,
        ..SimConfig::default()
    };
    let grid = build_grid(spec.grid, spec.grid, spec.fov)?;
    let history = traces
        .iter()
        .map(|t| requested_viewports(t, &grid, &cfg))
        .collect::<vpstream::Result<Vec<_>>>()?;
    Ok(build_popularity(spec.video, &history))
}

// ---------------------------------------------------------------------------
// Experiments

/// One swept parameter. `parameter` is a configuration key; nested keys use
/// dots, e.g. `channel.los_mode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub parameter: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub base: SimConfig,
    #[serde(default)]
    pub sweep: Vec<SweepAxis>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "all_schemes")]
    pub schemes: Vec<Scheme>,
    /// Checkpoint for the trained predictor. `{horizon}` is replaced by the
    /// run's horizon, so one file per horizon can be swept.
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn all_schemes() -> Vec<Scheme> {
    Scheme::ALL.to_vec()
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            base: SimConfig::default(),
            sweep: Vec::new(),
            seeds: default_seeds(),
            schemes: all_schemes(),
            model: None,
            output_dir: None,
        }
    }
}

/// Keys a sweep axis may name at the top level of the configuration.
pub const SWEEPABLE_KEYS: [&str; 23] = [
    "arcade_side",
    "sbs_positions",
    "num_users",
    "users_per_video",
    "sim_time_s",
    "slot_s",
    "frame_duration_s",
    "history",
    "horizon",
    "backhaul_s",
    "grid",
    "fov",
    "predictor",
    "payload_scale",
    "viewport_bits",
    "cache_size",
    "historical_users",
    "selection",
    "queue_order",
    "mobility_speed",
    "channel",
    "motion_preset",
    "motion",
];

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts = path.split('.').peekable();
    let mut cur = table;
    while let Some(key) = parts.next() {
        if parts.peek().is_none() {
            cur.insert(key.to_string(), value);
            return Ok(());
        }
        cur = match cur.get_mut(key) {
            Some(toml::Value::Table(t)) => t,
            _ => bail!("`{path}`: `{key}` is not a nested table of the configuration"),
        };
    }
    bail!("empty sweep parameter")
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = parse_config(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate().context("base configuration")?;
        if self.schemes.is_empty() {
            bail!("schemes must list at least one of ml, ml-cache, nml, nml-cache");
        }
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        for axis in &self.sweep {
            let top = axis.parameter.split('.').next().unwrap_or_default();
            match top {
                "scheme" => bail!("sweep over schemes with the `schemes` list"),
                "seed" => bail!("sweep over seeds with the `seeds` list"),
                _ if !SWEEPABLE_KEYS.contains(&top) => bail!(
                    "unknown sweep parameter `{}`; valid keys: {}",
                    axis.parameter,
                    SWEEPABLE_KEYS.join(", ")
                ),
                _ => {}
            }
            if axis.values.is_empty() {
                bail!("sweep over `{}` has no values", axis.parameter);
            }
        }
        self.points()?;
        Ok(())
    }

    /// Seeds in order of first appearance, without repeats.
    pub fn unique_seeds(&self) -> Vec<u64> {
        let mut out: Vec<u64> = Vec::with_capacity(self.seeds.len());
        for &s in &self.seeds {
            if out.contains(&s) {
                log::warn!("seed {s} listed more than once; running it once");
            } else {
                out.push(s);
            }
        }
        out
    }

    /// Every point of the sweep grid, the last axis varying fastest.
    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        let base = match toml::Value::try_from(&self.base)? {
            toml::Value::Table(t) => t,
            _ => unreachable!("a struct serializes to a table"),
        };
        let mut points = vec![(base, Vec::<(String, String)>::new())];
        for axis in &self.sweep {
            let mut next = Vec::with_capacity(points.len() * axis.values.len());
            for (table, labels) in &points {
                for v in &axis.values {
                    let mut t = table.clone();
                    set_path(&mut t, &axis.parameter, v.clone())?;
                    let mut l = labels.clone();
                    l.push((axis.parameter.clone(), label(v)));
                    next.push((t, l));
                }
            }
            points = next;
        }
        points
            .into_iter()
            .map(|(table, labels)| {
                let config: SimConfig = toml::Value::Table(table)
                    .try_into()
                    .map_err(|e: toml::de::Error| anyhow!("{}", e.message().trim_end()))?;
                config
                    .validate()
                    .with_context(|| format!("sweep point {}", describe(&labels)))?;
                Ok(SweepPoint { labels, config })
            })
            .collect()
    }
}

fn label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn describe(labels: &[(String, String)]) -> String {
    if labels.is_empty() {
        return "(base)".into();
    }
    labels.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    /// (parameter, value) for every sweep axis.
    pub labels: Vec<(String, String)>,
    pub config: SimConfig,
}

/// Metrics of one (point, scheme, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub point: usize,
    pub key: RunKey,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<RunRow>,
    /// Extra label columns, one per sweep axis not already in the key.
    pub extra_columns: Vec<String>,
    pub points: Vec<SweepPoint>,
}

const KEY_AXES: [&str; 3] = ["num_users", "horizon", "grid"];

/// Loads each checkpoint the sweep needs once.
fn load_models(spec: &ExperimentSpec, points: &[SweepPoint]) -> Result<HashMap<usize, GruPredictor>> {
    let mut models = HashMap::new();
    let needs = |c: &SimConfig| c.predictor == PredictorKind::Gru && spec.schemes.iter().any(|s| s.proactive());
    for p in points.iter().filter(|p| needs(&p.config)) {
        let h = p.config.horizon;
        if models.contains_key(&h) {
            continue;
        }
        let template = spec
            .model
            .as_deref()
            .ok_or_else(|| anyhow!("predictor = \"gru\" needs `model`, the checkpoint path"))?;
        let path = PathBuf::from(template.replace("{horizon}", &h.to_string()));
        let ck = load_checkpoint(&path).with_context(|| format!("loading {}", path.display()))?;
        if ck.config.horizon != h || ck.config.history != p.config.history {
            bail!(
                "{} was trained for history {} and horizon {}, the run uses {} and {h}",
                path.display(),
                ck.config.history,
                ck.config.horizon,
                p.config.history
            );
        }
        models.insert(h, GruPredictor::from_checkpoint(ck));
    }
    Ok(models)
}

/// Runs every (point, scheme, seed) combination on the rayon pool. Results
/// come back in a fixed order regardless of scheduling.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let points = spec.points()?;
    let seeds = spec.unique_seeds();
    let models = load_models(spec, &points)?;
    let jobs: Vec<(usize, u64)> = (0..points.len()).flat_map(|p| seeds.iter().map(move |&s| (p, s))).collect();
    let per_job: Vec<Vec<RunRow>> = jobs
        .par_iter()
        .map(|&(p, seed)| -> Result<Vec<RunRow>> {
            let mut cfg = SimConfig {
                seed,
                ..points[p].config.clone()
            };
            cfg.scheme = spec.schemes[0];
            let work = build_workload(&cfg).with_context(|| format!("workload for {}", describe(&points[p].labels)))?;
            let mut rows = Vec::with_capacity(spec.schemes.len());
            for &scheme in &spec.schemes {
                cfg.scheme = scheme;
                let model = models.get(&cfg.horizon).map(|m| m as &dyn Predictor);
                let out = run(&cfg, &work, model, RunOptions::default())
                    .with_context(|| format!("{scheme} at {}, seed {seed}", describe(&points[p].labels)))?;
                rows.push(RunRow {
                    point: p,
                    key: key_of(&cfg),
                    metrics: out.metrics,
                });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<RunRow> = per_job.into_iter().flatten().collect();
    let scheme_rank = |s: Scheme| spec.schemes.iter().position(|&x| x == s).unwrap_or(usize::MAX);
    let seed_rank = |s: u64| seeds.iter().position(|&x| x == s).unwrap_or(usize::MAX);
    rows.sort_by_key(|r| (r.point, scheme_rank(r.key.scheme), seed_rank(r.key.seed)));
    let extra_columns = spec
        .sweep
        .iter()
        .map(|a| a.parameter.clone())
        .filter(|p| !KEY_AXES.contains(&p.as_str()))
        .collect();
    Ok(ExperimentOutput {
        rows,
        extra_columns,
        points,
    })
}

pub fn key_of(cfg: &SimConfig) -> RunKey {
    RunKey {
        scheme: cfg.scheme,
        predictor: cfg.predictor,
        num_users: cfg.num_users,
        horizon: cfg.horizon,
        grid: cfg.grid,
        seed: cfg.seed,
    }
}

fn extra_values(out: &ExperimentOutput, point: usize) -> Vec<String> {
    let labels: BTreeMap<&str, &str> = out.points[point]
        .labels
        .iter()
        .map(|(k, v)| (k.as_str(), v.as_str()))
        .collect();
    out.extra_columns
        .iter()
        .map(|c| labels.get(c.as_str()).copied().unwrap_or_default().to_string())
        .collect()
}

fn metric_values(m: &RunMetrics) -> [f64; 5] {
    [
        m.mean_delay_ms,
        m.p99_delay_ms,
        m.hd_delivery_rate,
        m.quality_transition,
        m.failure_ratio,
    ]
}

const METRIC_NAMES: [&str; 5] = [
    "mean_delay_ms",
    "p99_delay_ms",
    "hd_delivery_rate",
    "quality_transition",
    "failure_ratio",
];

/// One row per run: the standard metrics columns, then one column per extra
/// sweep axis.
pub fn write_runs<W: Write>(out: &ExperimentOutput, w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let mut header: Vec<String> = METRICS_HEADER.iter().map(|s| s.to_string()).collect();
    header.extend(out.extra_columns.iter().cloned());
    w.write_record(&header)?;
    for r in &out.rows {
        let mut rec = vpstream::sim::metrics_row(&r.key, &r.metrics);
        rec.extend(extra_values(out, r.point));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean ± standard deviation over seeds for every (point, scheme).
pub fn write_aggregate<W: Write>(out: &ExperimentOutput, w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["scheme", "predictor", "num_users", "t_h", "grid"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(out.extra_columns.iter().cloned());
    header.push("seeds".into());
    for m in METRIC_NAMES {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    w.write_record(&header)?;
    let mut i = 0;
    while i < out.rows.len() {
        let first = &out.rows[i];
        let mut j = i;
        while j < out.rows.len() && out.rows[j].point == first.point && out.rows[j].key.scheme == first.key.scheme {
            j += 1;
        }
        let group = &out.rows[i..j];
        let k = &first.key;
        let mut rec = vec![
            k.scheme.to_string(),
            k.predictor.as_str().to_string(),
            k.num_users.to_string(),
            k.horizon.to_string(),
            format!("{0}x{0}", k.grid),
        ];
        rec.extend(extra_values(out, first.point));
        rec.push(group.len().to_string());
        for m in 0..METRIC_NAMES.len() {
            let vals: Vec<f64> = group.iter().map(|r| metric_values(&r.metrics)[m]).collect();
            let (mean, std) = mean_std(&vals);
            rec.push(mean.to_string());
            rec.push(std.to_string());
        }
        w.write_record(&rec)?;
        i = j;
    }
    w.flush()?;
    Ok(())
}

/// Writes `metrics.csv` and `aggregate.csv` under `dir`.
pub fn save_experiment(out: &ExperimentOutput, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let runs = dir.join("metrics.csv");
    let agg = dir.join("aggregate.csv");
    let mut buf = Vec::new();
    write_runs(out, &mut buf)?;
    write_atomically(&runs, &buf)?;
    buf.clear();
    write_aggregate(out, &mut buf)?;
    write_atomically(&agg, &buf)?;
    Ok((runs, agg))
}
