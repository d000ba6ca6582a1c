//! Command-line entry point wiring generation, training, prediction, and
//! evaluation into reproducible runs.
//!
//! Every command is deterministic given its configuration, seed, and input
//! files. Exit codes distinguish failure classes: 2 for configuration and
//! usage mistakes, 3 for I/O and parse failures, 4 for numeric blowups,
//! 5 for internal invariant violations.

use crate::config::{sub_seed, RunConfig};
use crate::data::{
    load_trajectories, normalize_frames, records_to_frames, save_trajectories, slice_windows,
    generate_scenario,
};
use crate::eval::{evaluate, EvalConfig, Method, MethodRun};
use crate::graph::FrameObservation;
use crate::model::{ModelMode, Phase, RolloutConfig};
use crate::nn::load_checkpoint;
use crate::train::{
    predict_window, train_epochs, write_loss_csv, ModelKind, TrainConfig, TrainState,
};
use crate::{Error, Result};
use clap::{Args, Parser, Subcommand};
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "trajcast", version, about = "Trajectory prediction for mixed road traffic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic traffic recording to a trajectory CSV.
    Generate(CommandArgs),
    /// Fit a model; writes checkpoints and the loss curve.
    Train(CommandArgs),
    /// Roll a trained model forward from the first observed frames.
    Predict(CommandArgs),
    /// Compare methods on a recording with displacement metrics.
    Eval(CommandArgs),
}

#[derive(Args)]
struct CommandArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; every random stream derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Method name; eval takes a comma-separated list.
    #[arg(long)]
    mode: Option<String>,
    /// Input trajectory CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output file, or output directory for train.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint file to resume or predict from; directory for eval.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Total epochs to train to.
    #[arg(long)]
    epochs: Option<usize>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    workers: Option<usize>,
}

/// Parses the process arguments, runs the command, and returns the exit
/// code for the process.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => cmd_generate(&resolve_config(&args)?, &args),
        Command::Train(args) => cmd_train(&resolve_config(&args)?, &args),
        Command::Predict(args) => cmd_predict(&resolve_config(&args)?, &args),
        Command::Eval(args) => cmd_eval(&resolve_config(&args)?, &args),
    }
}

/// Defaults, then the config file, then individual flags.
fn resolve_config(args: &CommandArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        cfg.merge_file(path)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = &args.mode {
        cfg.mode = mode.clone();
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    Ok(cfg)
}

fn require_path(value: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    value
        .clone()
        .ok_or_else(|| Error::Config(format!("{flag} is required for this command")))
}

fn cmd_generate(cfg: &RunConfig, args: &CommandArgs) -> Result<()> {
    cfg.validate()?;
    let out = require_path(&args.out, "--out")?;
    let mut spec = cfg.scenario.clone();
    spec.seed = sub_seed(cfg.seed, "data");
    let records = generate_scenario(&spec)?;
    save_trajectories(&out, &records)?;

    let mut counts = [0usize; 3];
    let mut seen = BTreeSet::new();
    let mut frames = BTreeSet::new();
    for r in &records {
        if seen.insert(r.agent_id) {
            counts[r.category.index()] += 1;
        }
        frames.insert(r.frame);
    }
    println!(
        "wrote {}: {} rows, {} frames, {} pedestrians, {} bicycles, {} vehicles",
        out.display(),
        records.len(),
        frames.len(),
        counts[0],
        counts[1],
        counts[2]
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, args: &CommandArgs) -> Result<()> {
    cfg.validate()?;
    let data = require_path(&args.data, "--data")?;
    let out_dir = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    let mode_name = if cfg.mode.is_empty() { "full" } else { cfg.mode.as_str() };
    let requested = ModelKind::parse(mode_name)?;
    let tcfg = TrainConfig::from_run(cfg);

    let records = load_trajectories(&data)?;
    let (windows, skipped) = slice_windows(&records, cfg.t_pred, cfg.stride)?;
    if windows.is_empty() {
        return Err(Error::Config(format!(
            "no complete window of {} frames in {}",
            cfg.t_pred,
            data.display()
        )));
    }

    let mut state = match &args.checkpoint {
        Some(path) => {
            let state = TrainState::from_checkpoint(load_checkpoint(path)?, &tcfg)?;
            if args.mode.is_some() && state.kind != requested {
                return Err(Error::Config(format!(
                    "checkpoint {} was trained as {}, requested {}",
                    path.display(),
                    state.kind.name(),
                    requested.name()
                )));
            }
            state
        }
        None => TrainState::new(requested, cfg.dims, cfg.shared_summary, &tcfg)?,
    };
    let kind = state.kind;

    println!(
        "train {}: adam beta1={} beta2={}, lr={}, clip=±{}, batch={}, epochs={} (starting at {}), \
         windows={} (skipped {}), seed={}",
        kind.name(),
        state.optimizer.beta1,
        state.optimizer.beta2,
        tcfg.learning_rate,
        tcfg.clip,
        tcfg.batch_size,
        cfg.epochs,
        state.epoch,
        windows.len(),
        skipped,
        cfg.seed
    );

    let mut curve = Vec::new();
    while state.epoch < cfg.epochs {
        let chunk = (cfg.epochs - state.epoch).min(cfg.checkpoint_every);
        let records = train_epochs(&mut state, &windows, &tcfg, chunk)?;
        for r in &records {
            println!("epoch {:>4}: nll {:.6}, lr {:.6}", r.epoch, r.mean_nll, r.lr);
        }
        curve.extend(records);
        if state.epoch < cfg.epochs {
            let path = out_dir.join(format!("{}.epoch{}.ckpt", kind.name(), state.epoch));
            state.save(&path)?;
            println!("checkpoint {}", path.display());
        }
    }

    let final_path = out_dir.join(format!("{}.ckpt", kind.name()));
    state.save(&final_path)?;
    let curve_path = out_dir.join(format!("{}.loss.csv", kind.name()));
    write_loss_csv(&curve_path, &curve)?;
    println!("final checkpoint {} (step {})", final_path.display(), state.optimizer.step_count());
    Ok(())
}

fn cmd_predict(cfg: &RunConfig, args: &CommandArgs) -> Result<()> {
    cfg.validate()?;
    let data = require_path(&args.data, "--data")?;
    let ckpt = require_path(&args.checkpoint, "--checkpoint")?;
    let out = require_path(&args.out, "--out")?;

    let ck = load_checkpoint(&ckpt)?;
    let kind = ModelKind::parse(ck.require("kind")?)?;
    if let Some(mode) = &args.mode {
        if ModelKind::parse(mode)? != kind {
            return Err(Error::Config(format!(
                "checkpoint {} was trained as {}, requested {}",
                ckpt.display(),
                kind.name(),
                mode
            )));
        }
    }

    let records = load_trajectories(&data)?;
    let all_frames = records_to_frames(&records)?;
    if all_frames.len() < cfg.t_obs {
        return Err(Error::Config(format!(
            "observation file has {} frames, need t_obs = {}",
            all_frames.len(),
            cfg.t_obs
        )));
    }
    let observed = &all_frames[..cfg.t_obs];
    let first = observed[0].frame_index();
    for (i, f) in observed.iter().enumerate() {
        if f.frame_index() != first + i {
            return Err(Error::Validation(format!(
                "observed frames must be consecutive, got {} after {}",
                f.frame_index(),
                first + i - 1
            )));
        }
    }
    let reindexed: Vec<FrameObservation> = observed
        .iter()
        .enumerate()
        .map(|(i, f)| FrameObservation::new(i, f.agents().to_vec()))
        .collect::<Result<_>>()?;
    let (window, transform) = normalize_frames(&reindexed)?;

    let rcfg = RolloutConfig {
        t_obs: cfg.t_obs,
        t_pred: cfg.t_pred,
        mode: match kind {
            ModelKind::Interaction(mode) => mode,
            ModelKind::EncoderDecoder => ModelMode::Full,
        },
        phase: Phase::Predict,
        radius: cfg.radius,
        sample_seed: None,
    };
    let predictions = predict_window(kind, &ck.registry, &window, &rcfg)?;

    let mut category = BTreeMap::new();
    for f in observed {
        for a in f.agents() {
            category.insert(a.agent_id, a.category);
        }
    }

    let mut rows = Vec::new();
    for (id, steps) in &predictions {
        for s in steps {
            let g = &s.gaussian;
            let (x, y) = transform.invert(g.mean[0], g.mean[1]);
            let sx = g.sigma[0] / transform.scale;
            let sy = g.sigma[1] / transform.scale;
            rows.push((first as u64 + s.frame as u64, *id, category[id].code(), x, y, sx, sy, g.rho));
        }
    }
    rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    let mut text = String::from("frame,agent_id,category,x,y,sigma_x,sigma_y,rho\n");
    for (frame, id, code, x, y, sx, sy, rho) in &rows {
        text.push_str(&format!("{frame},{id},{code},{x},{y},{sx},{sy},{rho}\n"));
    }
    std::fs::write(&out, text)?;
    println!(
        "wrote {}: {} rows for frames {}..={}",
        out.display(),
        rows.len(),
        first + cfg.t_obs,
        first + cfg.t_pred - 1
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, args: &CommandArgs) -> Result<()> {
    cfg.validate()?;
    let data = require_path(&args.data, "--data")?;
    let out = require_path(&args.out, "--out")?;

    let methods: Vec<Method> = if cfg.mode.is_empty() {
        Method::standard().to_vec()
    } else {
        cfg.mode.split(',').map(|s| Method::parse(s.trim())).collect::<Result<_>>()?
    };

    let mut registries = Vec::with_capacity(methods.len());
    for m in &methods {
        match m.model_kind() {
            None => registries.push(None),
            Some(kind) => {
                let dir = args.checkpoint.as_ref().ok_or_else(|| {
                    Error::Config(format!(
                        "--checkpoint directory is required for method {}",
                        m.name()
                    ))
                })?;
                let path = dir.join(format!("{}.ckpt", m.name()));
                if !path.is_file() {
                    return Err(Error::Config(format!(
                        "missing checkpoint for method {}: {}",
                        m.name(),
                        path.display()
                    )));
                }
                let ck = load_checkpoint(&path)?;
                let ck_kind = ModelKind::parse(ck.require("kind")?)?;
                if ck_kind != kind {
                    return Err(Error::Config(format!(
                        "checkpoint {} was trained as {}, expected {}",
                        path.display(),
                        ck_kind.name(),
                        m.name()
                    )));
                }
                registries.push(Some(ck.registry));
            }
        }
    }
    let runs: Vec<MethodRun> = methods
        .iter()
        .zip(&registries)
        .map(|(m, r)| MethodRun { method: *m, registry: r.as_ref() })
        .collect();

    let records = load_trajectories(&data)?;
    let (windows, skipped) = slice_windows(&records, cfg.t_pred, cfg.stride)?;
    if windows.is_empty() {
        return Err(Error::Config(format!(
            "no complete window of {} frames in {}",
            cfg.t_pred,
            data.display()
        )));
    }
    let ecfg = EvalConfig {
        t_obs: cfg.t_obs,
        t_pred: cfg.t_pred,
        radius: cfg.radius,
        workers: cfg.workers,
    };
    let report = evaluate(&windows, &runs, &ecfg)?;
    std::fs::write(&out, report.to_csv())?;
    print!("{}", report.to_table());
    println!("windows skipped while slicing: {skipped}");
    println!("wrote {}", out.display());
    Ok(())
}
