use std::path::Path;
use std::process::Command;

use vpstream::io::MotionModelParams;
use vpstream::prediction::PoseTrace;
use vpstream_cli::{evaluate, popularity, run_experiment, save_experiment, EvaluateSpec, ExperimentSpec, GenerateSpec, PopularitySpec};

const SHORT: &str = r#"
seeds = [0, 1, 2]
[base]
sim_time_s = 3.0
payload_scale = 0.3
"#;

#[test]
fn users_sweep_has_one_row_per_scheme_point_and_seed() {
    let spec = ExperimentSpec::parse(&format!("{SHORT}\n[[sweep]]\nparameter = \"num_users\"\nvalues = [24, 48, 72]\n")).unwrap();
    let out = run_experiment(&spec).unwrap();
    assert_eq!(out.rows.len(), 36);
    let users: Vec<usize> = out.rows.iter().map(|r| r.key.num_users).collect();
    assert_eq!(users[0], 24);
    assert_eq!(users[35], 72);
}

#[test]
fn empty_sweep_is_a_single_point() {
    let out = run_experiment(&ExperimentSpec::parse(SHORT).unwrap()).unwrap();
    assert_eq!(out.rows.len(), 4 * 3);
    assert_eq!(out.points.len(), 1);
}

#[test]
fn horizon_sweep_on_a_small_grid() {
    let text = format!(
        "{SHORT}\nschemes = [\"ml\"]\n[[sweep]]\nparameter = \"horizon\"\nvalues = [5, 10, 15, 20, 25, 30]\n[[sweep]]\nparameter = \"grid\"\nvalues = [3]\n"
    );
    // `schemes` after a table header would land inside it, so rebuild.
    let text = text.replace("seeds = [0, 1, 2]", "seeds = [0]\nschemes = [\"ml\"]").replace("\nschemes = [\"ml\"]\n[[sweep]]", "\n[[sweep]]");
    let out = run_experiment(&ExperimentSpec::parse(&text).unwrap()).unwrap();
    let horizons: Vec<usize> = out.rows.iter().map(|r| r.key.horizon).collect();
    assert_eq!(horizons, vec![5, 10, 15, 20, 25, 30]);
    assert!(out.rows.iter().all(|r| r.key.grid == 3));
}

#[test]
fn duplicate_seeds_run_once() {
    let spec = ExperimentSpec::parse(&SHORT.replace("[0, 1, 2]", "[4, 4, 5, 4]")).unwrap();
    assert_eq!(spec.unique_seeds(), vec![4, 5]);
    let out = run_experiment(&spec).unwrap();
    assert_eq!(out.rows.len(), 4 * 2);
}

#[test]
fn nested_and_extra_axes_become_columns() {
    let text = format!("{SHORT}\n[[sweep]]\nparameter = \"channel.los_mode\"\nvalues = [\"expected\", \"bernoulli\"]\n")
        .replace("[0, 1, 2]", "[0]");
    let out = run_experiment(&ExperimentSpec::parse(&text).unwrap()).unwrap();
    assert_eq!(out.extra_columns, vec!["channel.los_mode".to_string()]);
    let mut buf = Vec::new();
    vpstream_cli::write_runs(&out, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.lines().next().unwrap().ends_with(",failure_ratio,channel.los_mode"));
    assert!(text.lines().nth(1).unwrap().ends_with(",expected"));
}

#[test]
fn unknown_keys_list_the_valid_ones() {
    let e = ExperimentSpec::parse("[base]\nnum_user = 4\n").unwrap_err().to_string();
    assert!(e.contains("num_user") && e.contains("num_users"), "{e}");
    let e = ExperimentSpec::parse("[[sweep]]\nparameter = \"speed\"\nvalues = [1]\n")
        .unwrap_err()
        .to_string();
    assert!(e.contains("speed") && e.contains("payload_scale"), "{e}");
    let e = ExperimentSpec::parse("colour = 1\n").unwrap_err().to_string();
    assert!(e.contains("colour") && e.contains("seeds"), "{e}");
}

#[test]
fn invalid_values_name_the_field() {
    let e = format!("{:#}", ExperimentSpec::parse("[base]\nnum_users = 50\n").unwrap_err());
    assert!(e.contains("num_users"), "{e}");
    let e = format!(
        "{:#}",
        ExperimentSpec::parse("[[sweep]]\nparameter = \"payload_scale\"\nvalues = [-1.0]\n").unwrap_err()
    );
    assert!(e.contains("payload_scale"), "{e}");
}

#[test]
fn rerunning_a_sweep_rewrites_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec::parse(&SHORT.replace("[0, 1, 2]", "[0, 1]")).unwrap();
    let (runs, agg) = save_experiment(&run_experiment(&spec).unwrap(), dir.path()).unwrap();
    let first = (std::fs::read(&runs).unwrap(), std::fs::read(&agg).unwrap());
    save_experiment(&run_experiment(&spec).unwrap(), dir.path()).unwrap();
    assert_eq!(first, (std::fs::read(&runs).unwrap(), std::fs::read(&agg).unwrap()));
    let agg = String::from_utf8(first.1).unwrap();
    assert_eq!(agg.lines().count(), 1 + 4);
    assert!(agg.lines().nth(1).unwrap().contains(",2,"), "two seeds per group");
}

fn still_traces(n: usize) -> Vec<PoseTrace> {
    GenerateSpec {
        users: n,
        frames: 120,
        motion: Some(MotionModelParams::still()),
        ..GenerateSpec::default()
    }
    .generate(3)
    .unwrap()
}

#[test]
fn constant_traces_evaluate_to_zero_error() {
    let rows = evaluate(&still_traces(3), &EvaluateSpec::default(), &[]).unwrap();
    assert_eq!(rows.len(), 4);
    for r in rows {
        assert!(r.mean_error_deg.abs() < 1e-6, "{r:?}");
        assert!(r.samples > 0);
    }
}

#[test]
fn hotspot_traces_have_a_single_popular_viewport() {
    let motion = MotionModelParams {
        hotspot_fraction: 1.0,
        volatility: 0.0,
        initial_velocity: [0.0; 3],
        ..MotionModelParams::slow()
    };
    let traces = GenerateSpec {
        users: 6,
        frames: 90,
        motion: Some(motion),
        ..GenerateSpec::default()
    }
    .generate(8)
    .unwrap();
    let p = popularity(&traces, &PopularitySpec::default()).unwrap();
    for f in 0..p.n_frames() {
        assert_eq!(p.fractions(f)[0].1, 1.0, "frame {f}");
    }
}

fn vpstream(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_vpstream"))
        .args(args)
        .env("VPSTREAM_OUT_DIR", dir)
        .env("RUST_LOG", "warn")
        .current_dir(dir)
        .output()
        .unwrap()
}

#[test]
fn binary_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |o: std::process::Output| {
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    ok(vpstream(d, &["generate-traces", "--users", "4", "--frames", "200", "--seed", "5"]));
    assert!(d.join("traces.csv").exists(), "default output lands in the output directory");

    std::fs::write(
        d.join("train.toml"),
        "[prediction]\nhistory = 10\nhorizon = 5\n[training]\nepochs = 1\nhidden = 4\nlayers = 1\nfolds = 2\n",
    )
    .unwrap();
    let out = ok(vpstream(d, &["train", "--traces", "traces.csv", "--config", "train.toml", "--seed", "1"]));
    assert!(out.contains("kept fold"), "{out}");
    assert!(d.join("gru_h5.ckpt").exists());

    let table = ok(vpstream(
        d,
        &["evaluate-predictor", "--traces", "traces.csv", "--model", "gru_h5.ckpt", "--horizons", "5,10"],
    ));
    assert_eq!(table.lines().next().unwrap(), "predictor,horizon,mean_error_deg,samples");
    assert_eq!(table.lines().count(), 4);

    ok(vpstream(d, &["build-popularity", "--traces", "traces.csv", "--grid", "3"]));
    assert!(std::fs::read_to_string(d.join("popularity.csv"))
        .unwrap()
        .starts_with("video_id,frame_index,viewport_row,viewport_col,fraction"));

    std::fs::write(
        d.join("sim.toml"),
        "num_users = 12\nsim_time_s = 3.0\nhorizon = 5\npredictor = \"gru\"\npayload_scale = 0.3\n",
    )
    .unwrap();
    ok(vpstream(
        d,
        &["simulate", "--config", "sim.toml", "--model", "gru_h5.ckpt", "--events", "events.csv", "--seed", "2"],
    ));
    let metrics = std::fs::read_to_string(d.join("metrics.csv")).unwrap();
    assert!(metrics.lines().nth(1).unwrap().starts_with("ml,gru,12,5,5x5,2,"), "{metrics}");
    assert!(std::fs::read_to_string(d.join("events.csv")).unwrap().starts_with("slot,user,sbs,request_id"));

    std::fs::write(
        d.join("exp.toml"),
        "seeds = [1, 1]\nschemes = [\"nml\"]\n[base]\nnum_users = 12\nsim_time_s = 3.0\n[[sweep]]\nparameter = \"grid\"\nvalues = [3, 5]\n",
    )
    .unwrap();
    let out = ok(vpstream(d, &["sweep", "--config", "exp.toml", "--out-dir", "sweep"]));
    assert!(out.starts_with("2 runs"), "{out}");
    assert_eq!(std::fs::read_to_string(d.join("sweep/metrics.csv")).unwrap().lines().count(), 3);
}

#[test]
fn binary_rejects_bad_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "num_users = 12\nwarp = 9\n").unwrap();
    let o = vpstream(d, &["simulate", "--config", "bad.toml"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("warp") && err.contains("payload_scale"), "{err}");

    std::fs::write(d.join("odd.toml"), "num_users = 13\n").unwrap();
    let o = vpstream(d, &["simulate", "--config", "odd.toml"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("num_users"));
}
