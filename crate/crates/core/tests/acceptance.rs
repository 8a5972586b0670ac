//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary so the verdict lines are always shown. Pass
//! criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 4 5`.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vpstream::caching::{build_popularity, populate_cache, replay_hits};
use vpstream::channel::{achievable_rate, los_probability, thermal_noise_dbm, LosMode};
use vpstream::geometry::{build_grid, candidate_viewports, quaternion_from_uniforms, FovSpec};
use vpstream::io::{generate_traces, MotionModelParams};
use vpstream::matching::{deferred_acceptance, PreferenceMatrix};
use vpstream::prediction::{
    evaluate_horizon, gru_backward, gru_forward_batch, rmse, spearman, train, GruModel, GruPredictor,
    PredictionConfig, Predictor, TrainConfig,
};
use vpstream::sim::{
    build_workload, requested_viewports, run, write_metrics, PredictorKind, RunKey, RunMetrics, RunOptions,
    Scheme, SimConfig,
};

/// Desk-scale calibration shared by the simulation criteria.
///
/// The anchored payload (1 Gbit/s for a 150° × 120° FoV) saturates four SBSs
/// with 48 users under the expected-loss channel, so the payload is scaled to
/// 0.3 of the anchor. Path loss is redrawn LOS/NLOS at every refresh, which
/// gives the fluctuating channel that proactive delivery is meant to absorb.
const PAYLOAD_SCALE: f64 = 0.3;
const LOS_MODE: LosMode = LosMode::Bernoulli;
const SIM_SEEDS: u64 = 5;

/// Reduced GRU sizing so that training fits the time budget on one core.
fn train_config() -> TrainConfig {
    TrainConfig {
        epochs: 20,
        hidden: 32,
        layers: 1,
        window_stride: 3,
        ..TrainConfig::default()
    }
}

const HISTORY: usize = 10;
const TRAIN_TRACES: usize = 20;
const TRACE_FRAMES: usize = 1800;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Trained models by horizon, shared between criteria.
#[derive(Default)]
struct Models {
    by_horizon: BTreeMap<usize, GruPredictor>,
}

impl Models {
    fn get(&mut self, horizon: usize) -> &GruPredictor {
        self.by_horizon.entry(horizon).or_insert_with(|| {
            let slow = MotionModelParams::slow();
            let traces = generate_traces(
                TRAIN_TRACES,
                TRACE_FRAMES,
                &MotionModelParams {
                    seed: 1_000 + horizon as u64,
                    content_seed: 2_000 + horizon as u64,
                    ..slow
                },
            )
            .expect("training traces");
            let pred = PredictionConfig { history: HISTORY, horizon };
            let t = Instant::now();
            let report = train(&traces, &pred, &train_config(), 17 + horizon as u64).expect("training");
            println!(
                "  trained GRU for horizon {horizon} in {:.0} s, validation error {:.2}°",
                t.elapsed().as_secs_f64(),
                report.mean_validation_error_deg()
            );
            report.predictor()
        })
    }
}

// ---------------------------------------------------------------------------
// 1. Matching correctness

fn all_matchings(n_u: usize, n_b: usize) -> Vec<Vec<Option<usize>>> {
    fn rec(u: usize, n_u: usize, n_b: usize, used: &mut Vec<bool>, cur: &mut Vec<Option<usize>>, out: &mut Vec<Vec<Option<usize>>>) {
        if u == n_u {
            out.push(cur.clone());
            return;
        }
        cur.push(None);
        rec(u + 1, n_u, n_b, used, cur, out);
        cur.pop();
        for b in 0..n_b {
            if !used[b] {
                used[b] = true;
                cur.push(Some(b));
                rec(u + 1, n_u, n_b, used, cur, out);
                cur.pop();
                used[b] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(0, n_u, n_b, &mut vec![false; n_b], &mut Vec::new(), &mut out);
    out
}

fn is_stable(m: &[Option<usize>], p: &[Vec<f64>]) -> bool {
    let n_b = p[0].len();
    let holder = |b: usize| m.iter().position(|&x| x == Some(b));
    for u in 0..m.len() {
        for b in 0..n_b {
            if m[u] == Some(b) {
                continue;
            }
            let u_wants = m[u].is_none_or(|cur| p[u][b] > p[u][cur]);
            let b_wants = holder(b).is_none_or(|v| p[u][b] > p[v][b]);
            if u_wants && b_wants {
                return false;
            }
        }
    }
    true
}

fn user_optimal(p: &[Vec<f64>]) -> Vec<Option<usize>> {
    let stable: Vec<_> = all_matchings(p.len(), p[0].len())
        .into_iter()
        .filter(|m| is_stable(m, p))
        .collect();
    let value = |u: usize, m: &[Option<usize>]| m[u].map_or(f64::NEG_INFINITY, |b| p[u][b]);
    stable
        .iter()
        .find(|cand| stable.iter().all(|other| (0..p.len()).all(|u| value(u, cand) >= value(u, other))))
        .expect("a user-optimal stable matching exists")
        .clone()
}

fn criterion_1(_: &mut Models) -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = 0;
    let mut blocking = 0;
    for _ in 0..1000 {
        let n_u = rng.random_range(1..=6);
        let n_b = rng.random_range(1..=4);
        let mut vals: Vec<f64> = (1..=n_u * n_b).map(|v| v as f64 * 1e6).collect();
        vals.shuffle(&mut rng);
        let rows: Vec<Vec<f64>> = vals.chunks(n_b).map(<[f64]>::to_vec).collect();
        let prefs = PreferenceMatrix::from_table(&rows);
        let m = deferred_acceptance(&prefs, &mut rng);
        let got: Vec<Option<usize>> = (0..n_u).map(|u| m.partner_of_user(u)).collect();
        if !is_stable(&got, &rows) {
            blocking += 1;
        }
        if got != user_optimal(&rows) {
            failures += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        failures == 0 && blocking == 0 && secs < 5.0,
        format!("1000 instances, {blocking} unstable, {failures} differ from the brute-force user-optimal matching, {secs:.2} s"),
    )
}

// ---------------------------------------------------------------------------
// 2. GRU gradient check

fn criterion_2(_: &mut Models) -> Outcome {
    let t = Instant::now();
    let (d, hidden, steps, batch) = (4, 4, 3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = GruModel::init(d, hidden, 1, &mut rng);
    let inputs: Vec<f64> = (0..batch * steps * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let targets: Vec<f64> = (0..batch * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, grad) = gru_backward(&model, &inputs, &targets, batch, steps).expect("backward");
    let loss = |params: &[f64]| {
        let m = GruModel::from_params(d, hidden, 1, params.to_vec()).expect("params");
        rmse(&gru_forward_batch(&m, &inputs, batch, steps), &targets)
    };
    let eps = 1e-5;
    let mut worst = 0.0f64;
    let mut p = model.params.clone();
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let up = loss(&p);
        p[i] = orig - eps;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-4 && secs < 10.0,
        format!("{} parameters, worst relative error {worst:.2e}, {secs:.2} s", p.len()),
    )
}

// ---------------------------------------------------------------------------
// 3. Predictor calibration

fn criterion_3(models: &mut Models) -> Outcome {
    let t = Instant::now();
    let horizons = [5, 10, 20, 30];
    let test = generate_traces(
        20,
        TRACE_FRAMES,
        &MotionModelParams {
            seed: 3_003,
            content_seed: 3_004,
            ..MotionModelParams::slow()
        },
    )
    .expect("test traces");
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut means = Vec::new();
    for &h in &horizons {
        let model = models.get(h).clone();
        let row = evaluate_horizon(&[(h, &model as &dyn Predictor)], &test, HISTORY).expect("evaluation").remove(0);
        for e in &row.per_trace_deg {
            xs.push(h as f64);
            ys.push(*e);
        }
        means.push(row.mean_error_deg);
    }
    let s = spearman(&xs, &ys).expect("spearman");
    let secs = t.elapsed().as_secs_f64();
    let at_30 = means[3];
    let table: Vec<String> = horizons.iter().zip(&means).map(|(h, m)| format!("{h}: {m:.2}°")).collect();
    outcome(
        at_30 < 15.0 && s.rho > 0.0 && s.p_value < 0.05 && secs < 600.0,
        format!(
            "held-out mean error [{}], Spearman ρ = {:.3} (p = {:.1e}, n = {}), {secs:.0} s",
            table.join(", "),
            s.rho,
            s.p_value,
            s.n
        ),
    )
}

// ---------------------------------------------------------------------------
// 4 and 5. Proactive and caching gains

fn sim_config(num_users: usize, grid: usize, horizon: usize, scheme: Scheme, predictor: PredictorKind, seed: u64) -> SimConfig {
    let mut cfg = SimConfig {
        num_users,
        grid,
        horizon,
        scheme,
        predictor,
        seed,
        payload_scale: PAYLOAD_SCALE,
        ..SimConfig::default()
    };
    cfg.channel.los_mode = LOS_MODE;
    cfg
}

/// Seed-averaged metrics.
#[derive(Debug, Default, Clone, Copy)]
struct Avg {
    mean: f64,
    p99: f64,
    hd: f64,
}

fn averaged(num_users: usize, grid: usize, horizon: usize, scheme: Scheme, predictor: PredictorKind, model: Option<&GruPredictor>) -> Avg {
    let mut a = Avg::default();
    for seed in 0..SIM_SEEDS {
        let cfg = sim_config(num_users, grid, horizon, scheme, predictor, seed);
        let work = build_workload(&cfg).expect("workload");
        let m = run(&cfg, &work, model.map(|m| m as &dyn Predictor), RunOptions::default())
            .expect("run")
            .metrics;
        a.mean += m.mean_delay_ms;
        a.p99 += m.p99_delay_ms;
        a.hd += m.hd_delivery_rate;
    }
    let n = SIM_SEEDS as f64;
    Avg {
        mean: a.mean / n,
        p99: a.p99 / n,
        hd: a.hd / n,
    }
}

fn criterion_4(models: &mut Models) -> Outcome {
    let t = Instant::now();
    let gru = models.get(10).clone();
    let nml = averaged(48, 5, 10, Scheme::Nml, PredictorKind::Baseline, None);
    let oracle = averaged(48, 5, 10, Scheme::Ml, PredictorKind::Oracle, None);
    let learned = averaged(48, 5, 10, Scheme::Ml, PredictorKind::Gru, Some(&gru));
    let light = averaged(36, 5, 10, Scheme::Ml, PredictorKind::Gru, Some(&gru));
    let r_oracle = oracle.mean / nml.mean;
    let r_gru = learned.mean / nml.mean;
    let secs = t.elapsed().as_secs_f64();
    outcome(
        nml.mean > 0.0 && r_oracle <= 0.2 && r_gru <= 0.5 && light.hd >= 0.99 && secs < 900.0,
        format!(
            "payload scale {PAYLOAD_SCALE}: NML {:.3} ms, ML/NML oracle {r_oracle:.3}, GRU {r_gru:.3}; \
             ML HD rate at 36 users {:.4} (threshold 0.99), {secs:.0} s",
            nml.mean, light.hd
        ),
    )
}

fn criterion_5(models: &mut Models) -> Outcome {
    let gru = models.get(10).clone();
    let nml = averaged(48, 5, 10, Scheme::Nml, PredictorKind::Baseline, None);
    let nml_c = averaged(48, 5, 10, Scheme::NmlCache, PredictorKind::Baseline, None);
    let ml = averaged(48, 5, 10, Scheme::Ml, PredictorKind::Gru, Some(&gru));
    let ml_c = averaged(48, 5, 10, Scheme::MlCache, PredictorKind::Gru, Some(&gru));
    let gain = |base: f64, cached: f64| if base > 0.0 { 1.0 - cached / base } else { 0.0 };
    let nml_gain = gain(nml.p99, nml_c.p99);
    let ml_gain = gain(ml.p99, ml_c.p99);
    outcome(
        nml_c.p99 <= 0.95 * nml.p99 && nml_gain >= ml_gain,
        format!(
            "p99 NML {:.2} → {:.2} ms (gain {:.1}%), ML {:.2} → {:.2} ms (gain {:.1}%)",
            nml.p99,
            nml_c.p99,
            100.0 * nml_gain,
            ml.p99,
            ml_c.p99,
            100.0 * ml_gain
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Horizon U-shape

fn criterion_6(models: &mut Models) -> Outcome {
    let horizons = [5, 10, 15, 20, 25, 30];
    let mut delays = Vec::new();
    for &h in &horizons {
        let gru = models.get(h).clone();
        delays.push(averaged(72, 3, h, Scheme::Ml, PredictorKind::Gru, Some(&gru)).mean);
    }
    let min = delays.iter().copied().fold(f64::INFINITY, f64::min);
    let left = delays[0] / min - 1.0;
    let right = delays[5] / min - 1.0;
    let table: Vec<String> = horizons.iter().zip(&delays).map(|(h, d)| format!("{h}: {d:.3}")).collect();
    outcome(
        min > 0.0 && left >= 0.05 && right >= 0.05,
        format!(
            "slow preset, mean delay ms [{}]; horizon 5 is {:.0}% and horizon 30 {:.0}% above the minimum",
            table.join(", "),
            100.0 * left,
            100.0 * right
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Coverage

fn criterion_7(_: &mut Models) -> Outcome {
    let t = Instant::now();
    let fov = FovSpec::default();
    let g3 = build_grid(3, 3, fov).expect("3x3");
    let g5 = build_grid(5, 5, fov).expect("5x5");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut empty = 0;
    for _ in 0..100_000 {
        let q = quaternion_from_uniforms(rng.random(), rng.random(), rng.random());
        for g in [&g3, &g5] {
            if candidate_viewports(q, fov, g).expect("candidates").is_empty() {
                empty += 1;
            }
        }
    }
    let ratio = g3.mean_viewport_solid_angle() / g5.mean_viewport_solid_angle();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        empty == 0 && (1.45..=1.55).contains(&ratio) && secs < 30.0,
        format!("{empty} empty candidate sets over 2 × 10⁵ orientations, 3×3/5×5 solid-angle ratio {ratio:.4}, {secs:.1} s"),
    )
}

// ---------------------------------------------------------------------------
// 8. Channel spot checks

fn criterion_8(_: &mut Models) -> Outcome {
    let p5 = los_probability(5.0).expect("d = 5");
    let p49 = los_probability(49.0).expect("d = 49");
    let p100 = los_probability(100.0).expect("d = 100");
    let noise = thermal_noise_dbm(-174.0, 0.85e9);
    let rate = achievable_rate(1.0, 0.85e9);
    let pass = p5 == 1.0
        && (p49 - 0.5372).abs() <= 1e-3
        && (p100 - 0.4244).abs() <= 1e-3
        && (noise + 84.71).abs() <= 0.01
        && rate == 0.85e9;
    outcome(
        pass,
        format!("P_LOS(5) = {p5}, P_LOS(49) = {p49:.4}, P_LOS(100) = {p100:.4}, noise {noise:.3} dBm, rate(SINR 1) = {rate:e} bit/s"),
    )
}

// ---------------------------------------------------------------------------
// 9. Determinism

fn metrics_csv(cfg: &SimConfig) -> Vec<u8> {
    let work = build_workload(cfg).expect("workload");
    let m: RunMetrics = run(cfg, &work, None, RunOptions::default()).expect("run").metrics;
    let key = RunKey {
        scheme: cfg.scheme,
        predictor: cfg.predictor,
        num_users: cfg.num_users,
        horizon: cfg.horizon,
        grid: cfg.grid,
        seed: cfg.seed,
    };
    let mut out = Vec::new();
    write_metrics(&[(key, m)], &mut out).expect("csv");
    out
}

fn criterion_9(_: &mut Models) -> Outcome {
    let mut differing = Vec::new();
    for scheme in Scheme::ALL {
        let cfg = SimConfig {
            sim_time_s: 5.0,
            seed: 9,
            ..sim_config(48, 5, 10, scheme, PredictorKind::Baseline, 9)
        };
        if metrics_csv(&cfg) != metrics_csv(&cfg) {
            differing.push(scheme.as_str());
        }
    }
    outcome(
        differing.is_empty(),
        format!("four schemes run twice each, byte-identical metrics CSVs except {differing:?}"),
    )
}

// ---------------------------------------------------------------------------
// 10. Cache accounting identity

fn criterion_10(_: &mut Models) -> Outcome {
    let cfg = SimConfig::default();
    let grid = cfg.grid().expect("grid");
    let traces = generate_traces(
        24,
        600,
        &MotionModelParams {
            seed: 10,
            content_seed: 11,
            ..MotionModelParams::slow()
        },
    )
    .expect("traces");
    let history: Vec<_> = traces
        .iter()
        .map(|t| requested_viewports(t, &grid, &cfg).expect("viewports"))
        .collect();
    let profile = build_popularity(0, &history);
    let mut mismatches = Vec::new();
    for k in [1, 2, 3, 5] {
        let cache = populate_cache([&profile], k);
        let (hits, lookups) = replay_hits(&cache, 0, &history);
        let top_counts: usize = profile.ranking.iter().map(|r| r.iter().take(k).map(|&(_, c)| c).sum::<usize>()).sum();
        let frames = profile.n_frames();
        let fraction_sum: f64 = (0..frames)
            .map(|f| profile.fractions(f).iter().take(k).map(|&(_, x)| x).sum::<f64>())
            .sum::<f64>()
            / frames as f64;
        let ratio = hits as f64 / lookups as f64;
        if hits != top_counts || (ratio - fraction_sum).abs() > 1e-12 {
            mismatches.push(k);
        }
    }
    outcome(
        mismatches.is_empty(),
        format!("K ∈ {{1, 2, 3, 5}}: hits equal summed top-K counts, mismatching K {mismatches:?}"),
    )
}

type Criterion = (u32, &'static str, fn(&mut Models) -> Outcome);

const CRITERIA: [Criterion; 10] = [
    (1, "matching correctness", criterion_1),
    (2, "GRU gradient check", criterion_2),
    (3, "predictor calibration", criterion_3),
    (4, "proactive gain", criterion_4),
    (5, "caching gain", criterion_5),
    (6, "horizon U-shape", criterion_6),
    (7, "coverage invariant", criterion_7),
    (8, "channel spot checks", criterion_8),
    (9, "determinism", criterion_9),
    (10, "cache accounting identity", criterion_10),
];

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut models = Models::default();
    let mut failed = Vec::new();
    for (n, name, f) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let o = f(&mut models);
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {verdict} {name}: {}", o.detail);
        if !o.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
