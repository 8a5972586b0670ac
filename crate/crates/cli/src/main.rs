use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use vpstream::caching::save_profiles;
use vpstream::io::{load_traces, save_traces};
use vpstream::prediction::{load_checkpoint, save_checkpoint, train, GruPredictor, Predictor};
use vpstream::sim::{build_workload, run, write_events, write_metrics, PredictorKind, RunOptions, Scheme, SimConfig};
use vpstream_cli::{
    default_out_dir, evaluate, key_of, load_config, popularity, run_experiment, save_experiment, write_atomically,
    write_eval, EvaluateSpec, ExperimentSpec, GenerateSpec, PopularitySpec, TrainSpec,
};

/// Proactive viewport streaming: traces, predictors and slot-level simulation.
#[derive(Parser)]
#[command(name = "vpstream", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Seed for every random draw of the command.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; defaults to a standard name in $VPSTREAM_OUT_DIR, or the
    /// current directory when unset.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl Common {
    fn out_or(&self, name: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| default_out_dir().join(name))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic head-motion traces.
    GenerateTraces {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        /// Motion preset: slow or high-volatility.
        #[arg(long)]
        preset: Option<String>,
        /// Seed of the shared attractor path.
        #[arg(long)]
        content_seed: Option<u64>,
    },
    /// Train the recurrent predictor with K-fold cross-validation.
    Train {
        #[command(flatten)]
        common: Common,
        /// Trace CSV used for training.
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        history: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
    },
    /// Mean angular error per horizon for the baseline and trained models.
    EvaluatePredictor {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        traces: PathBuf,
        /// Checkpoints to evaluate, each at its own horizon.
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        /// Comma-separated horizons for the baseline.
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<usize>>,
    },
    /// Per-frame viewport popularity from a historical population.
    BuildPopularity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        video: Option<usize>,
    },
    /// Run one simulation and write its metrics row.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        grid: Option<usize>,
        /// Checkpoint for predictor = "gru".
        #[arg(long)]
        model: Option<PathBuf>,
        /// Also write the per-slot transmission log here.
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Run a parameter sweep over schemes, seeds and configuration keys.
    Sweep {
        /// Experiment TOML file.
        #[arg(long, short)]
        config: PathBuf,
        /// Replace the seed list; repeatable.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Output directory; defaults to the experiment file's output_dir, then the
        /// environment.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn load_gru(path: &Path) -> Result<GruPredictor> {
    let ck = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(GruPredictor::from_checkpoint(ck))
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenerateTraces {
            common,
            users,
            frames,
            preset,
            content_seed,
        } => {
            let mut spec: GenerateSpec = load_config(common.config.as_deref())?;
            spec.users = users.unwrap_or(spec.users);
            spec.frames = frames.unwrap_or(spec.frames);
            if let Some(p) = preset {
                spec.preset = p;
                spec.motion = None;
            }
            if let Some(c) = content_seed {
                let mut m = match spec.motion.take() {
                    Some(m) => m,
                    None => vpstream::io::MotionModelParams::preset(&spec.preset)?,
                };
                m.content_seed = c;
                spec.motion = Some(m);
            }
            let traces = spec.generate(common.seed)?;
            let out = common.out_or("traces.csv");
            save_traces(&traces, &out)?;
            info!("wrote {} traces of {} frames to {}", traces.len(), spec.frames, out.display());
        }
        Command::Train {
            common,
            traces,
            history,
            horizon,
            epochs,
            hidden,
        } => {
            let mut spec: TrainSpec = load_config(common.config.as_deref())?;
            spec.prediction.history = history.unwrap_or(spec.prediction.history);
            spec.prediction.horizon = horizon.unwrap_or(spec.prediction.horizon);
            spec.training.epochs = epochs.unwrap_or(spec.training.epochs);
            spec.training.hidden = hidden.unwrap_or(spec.training.hidden);
            let data = load_traces(&traces)?;
            let report = train(&data, &spec.prediction, &spec.training, common.seed)?;
            for f in &report.folds {
                match &f.diverged {
                    Some(why) => println!("fold {}: diverged ({why})", f.fold),
                    None => println!("fold {}: validation error {:.3} deg", f.fold, f.validation_error_deg),
                }
            }
            println!(
                "kept fold {}; mean validation error {:.3} deg",
                report.best_fold,
                report.mean_validation_error_deg()
            );
            let out = common.out_or(&format!("gru_h{}.ckpt", spec.prediction.horizon));
            save_checkpoint(&out, &report.checkpoint)?;
            info!("wrote {}", out.display());
        }
        Command::EvaluatePredictor {
            common,
            traces,
            models,
            horizons,
        } => {
            let mut spec: EvaluateSpec = load_config(common.config.as_deref())?;
            if let Some(h) = horizons {
                spec.horizons = h;
            }
            let data = load_traces(&traces)?;
            let loaded = models
                .iter()
                .map(|p| Ok((p.display().to_string(), load_gru(p)?)))
                .collect::<Result<Vec<_>>>()?;
            let rows = evaluate(&data, &spec, &loaded)?;
            let mut buf = Vec::new();
            write_eval(&rows, &mut buf)?;
            match &common.out {
                Some(p) => write_atomically(p, &buf)?,
                None => print!("{}", String::from_utf8_lossy(&buf)),
            }
        }
        Command::BuildPopularity {
            common,
            traces,
            grid,
            video,
        } => {
            let mut spec: PopularitySpec = load_config(common.config.as_deref())?;
            spec.grid = grid.unwrap_or(spec.grid);
            spec.video = video.unwrap_or(spec.video);
            let data = load_traces(&traces)?;
            let profile = popularity(&data, &spec)?;
            let out = common.out_or("popularity.csv");
            save_profiles(&[profile], &out)?;
            info!("wrote {}", out.display());
        }
        Command::Simulate {
            common,
            scheme,
            users,
            horizon,
            grid,
            model,
            events,
        } => {
            let mut cfg: SimConfig = load_config(common.config.as_deref())?;
            cfg.seed = common.seed;
            if let Some(s) = scheme {
                cfg.scheme = Scheme::parse(&s)?;
            }
            cfg.num_users = users.unwrap_or(cfg.num_users);
            cfg.horizon = horizon.unwrap_or(cfg.horizon);
            cfg.grid = grid.unwrap_or(cfg.grid);
            cfg.validate()?;
            let gru = match (&model, cfg.predictor) {
                (Some(p), _) => Some(load_gru(p)?),
                (None, PredictorKind::Gru) if cfg.scheme.proactive() => bail!("predictor = \"gru\" needs --model"),
                _ => None,
            };
            let work = build_workload(&cfg)?;
            let opts = RunOptions {
                log_events: events.is_some(),
            };
            let out = run(&cfg, &work, gru.as_ref().map(|m| m as &dyn Predictor), opts)?;
            let mut buf = Vec::new();
            write_metrics(&[(key_of(&cfg), out.metrics.clone())], &mut buf)?;
            write_atomically(&common.out_or("metrics.csv"), &buf)?;
            if let Some(p) = events {
                let mut ev = Vec::new();
                write_events(&out.events, &mut ev)?;
                write_atomically(&p, &ev)?;
            }
            let m = &out.metrics;
            println!(
                "{}: mean delay {:.3} ms, p99 {:.3} ms, HD rate {:.4}, quality transitions {:.4}",
                cfg.scheme, m.mean_delay_ms, m.p99_delay_ms, m.hd_delivery_rate, m.quality_transition
            );
        }
        Command::Sweep { config, seeds, out_dir } => {
            let mut spec = ExperimentSpec::load(&config)?;
            if !seeds.is_empty() {
                spec.seeds = seeds;
            }
            let dir = out_dir
                .or_else(|| spec.output_dir.clone())
                .unwrap_or_else(default_out_dir);
            let out = run_experiment(&spec)?;
            let (runs, agg) = save_experiment(&out, &dir)?;
            println!("{} runs; wrote {} and {}", out.rows.len(), runs.display(), agg.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
