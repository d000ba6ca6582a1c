//! End-to-end checks of the command-line interface: byte determinism,
//! artifact layout, hyperparameter echoing, and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trajcast"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn trajcast")
}

fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "command {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

/// Small scenario and model so each command finishes in well under a second.
fn write_config(dir: &Path) {
    std::fs::write(
        dir.join("tiny.cfg"),
        "vehicles = 2\nbicycles = 1\npedestrians = 2\nduration_s = 10\nnoise_std = 0.02\n\
         t_obs = 3\nt_pred = 6\nstride = 3\n\
         embed_dim = 6\nedge_hidden = 8\nnode_hidden = 6\nattention_dim = 4\n\
         epochs = 1\ncheckpoint_every = 5\n",
    )
    .unwrap();
}

fn generate(dir: &Path) {
    write_config(dir);
    run_ok(dir, &["generate", "--config", "tiny.cfg", "--out", "traffic.csv"]);
}

#[test]
fn generate_is_deterministic_and_the_summary_recounts_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    write_config(dir);

    let summary = run_ok(dir, &["generate", "--config", "tiny.cfg", "--out", "a.csv"]);
    run_ok(dir, &["generate", "--config", "tiny.cfg", "--out", "b.csv"]);
    let a = std::fs::read(dir.join("a.csv")).unwrap();
    let b = std::fs::read(dir.join("b.csv")).unwrap();
    assert_eq!(a, b, "same seed must produce identical bytes");

    run_ok(dir, &["generate", "--config", "tiny.cfg", "--seed", "2", "--out", "c.csv"]);
    let c = std::fs::read(dir.join("c.csv")).unwrap();
    assert_ne!(a, c, "different seeds must produce different recordings");

    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "frame,agent_id,category,x,y");
    let mut ped = std::collections::BTreeSet::new();
    let mut bike = std::collections::BTreeSet::new();
    let mut veh = std::collections::BTreeSet::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let id: u64 = f[1].parse().unwrap();
        match f[2] {
            "1" => ped.insert(id),
            "2" => bike.insert(id),
            "3" => veh.insert(id),
            other => panic!("unexpected category code {other}"),
        };
    }
    let expect = format!(
        "{} pedestrians, {} bicycles, {} vehicles",
        ped.len(),
        bike.len(),
        veh.len()
    );
    assert!(summary.contains(&expect), "summary {summary:?} vs recount {expect:?}");
}

#[test]
fn train_echoes_the_optimizer_settings_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    generate(dir);

    let stdout = run_ok(
        dir,
        &["train", "--config", "tiny.cfg", "--data", "traffic.csv", "--out", "run"],
    );
    let header = stdout.lines().next().unwrap();
    for token in ["beta1=0.9", "beta2=0.999", "lr=0.001", "clip=±10", "batch=8"] {
        assert!(header.contains(token), "header {header:?} lacks {token:?}");
    }
    assert!(dir.join("run/full.ckpt").is_file());
    let curve = std::fs::read_to_string(dir.join("run/full.loss.csv")).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines[0], "epoch,mean_nll,lr");
    assert_eq!(lines.len(), 2, "one epoch, one curve row");
    assert!(lines[1].starts_with("1,"));
}

#[test]
fn resuming_continues_the_step_counter_monotonically() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    generate(dir);

    run_ok(dir, &["train", "--config", "tiny.cfg", "--data", "traffic.csv", "--out", "run"]);
    let meta_step = |p: &Path| -> u64 {
        trajcast::nn::load_checkpoint(p).unwrap().require("step").unwrap().parse().unwrap()
    };
    let after_one = meta_step(&dir.join("run/full.ckpt"));
    assert!(after_one > 0);

    run_ok(
        dir,
        &[
            "train", "--config", "tiny.cfg", "--data", "traffic.csv", "--out", "run",
            "--checkpoint", "run/full.ckpt", "--epochs", "3",
        ],
    );
    let after_resume = meta_step(&dir.join("run/full.ckpt"));
    assert!(after_resume > after_one, "{after_resume} vs {after_one}");

    run_ok(
        dir,
        &[
            "train", "--config", "tiny.cfg", "--data", "traffic.csv", "--out", "fresh",
            "--epochs", "3",
        ],
    );
    assert_eq!(meta_step(&dir.join("fresh/full.ckpt")), after_resume);
}

#[test]
fn predict_covers_the_horizon_with_valid_densities_and_identical_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    generate(dir);
    run_ok(dir, &["train", "--config", "tiny.cfg", "--data", "traffic.csv", "--out", "run"]);

    run_ok(
        dir,
        &[
            "predict", "--config", "tiny.cfg", "--data", "traffic.csv",
            "--checkpoint", "run/full.ckpt", "--out", "p1.csv",
        ],
    );
    run_ok(
        dir,
        &[
            "predict", "--config", "tiny.cfg", "--data", "traffic.csv",
            "--checkpoint", "run/full.ckpt", "--out", "p2.csv",
        ],
    );
    let p1 = std::fs::read(dir.join("p1.csv")).unwrap();
    assert_eq!(p1, std::fs::read(dir.join("p2.csv")).unwrap());

    let text = String::from_utf8(p1).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "frame,agent_id,category,x,y,sigma_x,sigma_y,rho");
    let mut frames = std::collections::BTreeSet::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 8);
        frames.insert(f[0].parse::<u64>().unwrap());
        let sx: f64 = f[5].parse().unwrap();
        let sy: f64 = f[6].parse().unwrap();
        let rho: f64 = f[7].parse().unwrap();
        assert!(sx > 0.0 && sy > 0.0);
        assert!(rho.abs() < 1.0);
    }
    // t_obs = 3, t_pred = 6, recording starts at frame 0: predictions
    // describe original frames 3, 4, and 5.
    assert_eq!(frames.into_iter().collect::<Vec<_>>(), vec![3, 4, 5]);

    // The checkpoint knows its own method; contradicting it is an error.
    let out = run(
        dir,
        &[
            "predict", "--config", "tiny.cfg", "--data", "traffic.csv",
            "--checkpoint", "run/full.ckpt", "--mode", "ed_baseline", "--out", "p3.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_reports_the_requested_methods_and_reruns_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    generate(dir);
    run_ok(dir, &["train", "--config", "tiny.cfg", "--data", "traffic.csv", "--out", "run"]);

    let args = [
        "eval", "--config", "tiny.cfg", "--data", "traffic.csv", "--checkpoint", "run",
        "--mode", "full,constant_velocity,perfect_oracle", "--out", "report.csv",
    ];
    let stdout_a = run_ok(dir, &args);
    let report_a = std::fs::read(dir.join("report.csv")).unwrap();
    run_ok(dir, &args);
    assert_eq!(report_a, std::fs::read(dir.join("report.csv")).unwrap());

    let text = String::from_utf8(report_a).unwrap();
    let mut methods = std::collections::BTreeSet::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        methods.insert(f[0].to_string());
        if f[0] == "perfect_oracle" {
            assert_eq!(f[2], "0", "oracle ADE must be zero, got {line}");
            assert_eq!(f[3], "0", "oracle FDE must be zero, got {line}");
        }
    }
    let want: std::collections::BTreeSet<String> =
        ["full", "constant_velocity", "perfect_oracle"].iter().map(|s| s.to_string()).collect();
    assert_eq!(methods, want);
    assert!(stdout_a.contains("coordinate scale: normalized"));
    assert!(stdout_a.contains("coordinate scale: meters"));
}

#[test]
fn failure_classes_map_to_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    generate(dir);

    // Missing checkpoint for a learned method: configuration error, named.
    let out = run(
        dir,
        &[
            "eval", "--config", "tiny.cfg", "--data", "traffic.csv", "--checkpoint", "run",
            "--mode", "ed_baseline,constant_velocity", "--out", "r.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("ed_baseline"), "stderr must name the method: {stderr}");

    // Unknown configuration key.
    std::fs::write(dir.join("bad.cfg"), "learning_rat = 0.01\n").unwrap();
    let out = run(dir, &["generate", "--config", "bad.cfg", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));

    // Missing required flag.
    let out = run(dir, &["train", "--config", "tiny.cfg"]);
    assert_eq!(out.status.code(), Some(2));

    // Unreadable input file.
    let out = run(
        dir,
        &["train", "--config", "tiny.cfg", "--data", "missing.csv", "--out", "run"],
    );
    assert_eq!(out.status.code(), Some(3));

    // Malformed field: parse failure.
    std::fs::write(dir.join("garbage.csv"), "frame,agent_id,category,x,y\n0,1,9,0,0\n").unwrap();
    let out = run(
        dir,
        &["train", "--config", "tiny.cfg", "--data", "garbage.csv", "--out", "run"],
    );
    assert_eq!(out.status.code(), Some(3));

    // Well-formed rows that contradict each other: validation failure.
    std::fs::write(
        dir.join("dup.csv"),
        "frame,agent_id,category,x,y\n0,1,1,0,0\n0,1,1,1,1\n",
    )
    .unwrap();
    let out = run(dir, &["train", "--config", "tiny.cfg", "--data", "dup.csv", "--out", "run"]);
    assert_eq!(out.status.code(), Some(5));
}
