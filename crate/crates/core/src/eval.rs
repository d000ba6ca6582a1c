//! Displacement metrics and the method-comparison harness.
//!
//! A report covers every requested method on the identical window set: if
//! any method fails on a window (numerically or by producing incomplete
//! output), that window is dropped for all methods, so the comparison stays
//! paired. Metrics are computed twice, on normalized window coordinates and
//! on the original meter coordinates recovered through each window's
//! transform.

use crate::data::SceneWindow;
use crate::graph::Category;
use crate::model::{ModelMode, Phase, RolloutConfig};
use crate::nn::ParamRegistry;
use crate::train::{predict_window, ModelKind};
use crate::{Error, Result};
use rayon::prelude::*;

type Point = (f64, f64);

/// Mean Euclidean distance between paired prediction and truth sequences.
pub fn ade(predicted: &[Point], truth: &[Point]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Usage(format!(
            "sequence lengths differ: {} predicted vs {} true",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Usage("cannot average over an empty sequence".into()));
    }
    let sum: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| ((p.0 - t.0).powi(2) + (p.1 - t.1).powi(2)).sqrt())
        .sum();
    Ok(sum / predicted.len() as f64)
}

/// Euclidean distance between the final prediction and the final truth.
pub fn fde(predicted: &[Point], truth: &[Point]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Usage(format!(
            "sequence lengths differ: {} predicted vs {} true",
            predicted.len(),
            truth.len()
        )));
    }
    let (Some(p), Some(t)) = (predicted.last(), truth.last()) else {
        return Err(Error::Usage("cannot take the final point of an empty sequence".into()));
    };
    Ok(((p.0 - t.0).powi(2) + (p.1 - t.1).powi(2)).sqrt())
}

/// Extrapolates `steps` future positions with the mean velocity of the last
/// two observed steps (or the single step when only two points exist).
pub fn constant_velocity_baseline(observed: &[Point], steps: usize) -> Result<Vec<Point>> {
    let n = observed.len();
    if n < 2 {
        return Err(Error::Usage(format!(
            "constant-velocity extrapolation needs at least 2 observed points, got {n}"
        )));
    }
    let (vx, vy) = if n >= 3 {
        ((observed[n - 1].0 - observed[n - 3].0) / 2.0, (observed[n - 1].1 - observed[n - 3].1) / 2.0)
    } else {
        (observed[n - 1].0 - observed[n - 2].0, observed[n - 1].1 - observed[n - 2].1)
    };
    let last = observed[n - 1];
    Ok((1..=steps).map(|k| (last.0 + vx * k as f64, last.1 + vy * k as f64)).collect())
}

/// A column of the comparison: either a trained model or a closed-form
/// reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Interaction(ModelMode),
    EncoderDecoder,
    ConstantVelocity,
    /// Returns the ground truth; pins the zero point of the metrics.
    PerfectOracle,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Method::Interaction(ModelMode::Full)),
            "no_category_layer" => Ok(Method::Interaction(ModelMode::NoCategoryLayer)),
            "no_self_attention" => Ok(Method::Interaction(ModelMode::NoSelfAttention)),
            "ed_baseline" => Ok(Method::EncoderDecoder),
            "constant_velocity" => Ok(Method::ConstantVelocity),
            "perfect_oracle" => Ok(Method::PerfectOracle),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected full, no_category_layer, \
                 no_self_attention, ed_baseline, constant_velocity, or perfect_oracle)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Interaction(mode) => mode.name(),
            Method::EncoderDecoder => "ed_baseline",
            Method::ConstantVelocity => "constant_velocity",
            Method::PerfectOracle => "perfect_oracle",
        }
    }

    /// The five comparison columns of a standard run.
    pub fn standard() -> [Method; 5] {
        [
            Method::Interaction(ModelMode::Full),
            Method::Interaction(ModelMode::NoCategoryLayer),
            Method::Interaction(ModelMode::NoSelfAttention),
            Method::EncoderDecoder,
            Method::ConstantVelocity,
        ]
    }

    /// Trainable model behind this method, if any.
    pub fn model_kind(self) -> Option<ModelKind> {
        match self {
            Method::Interaction(mode) => Some(ModelKind::Interaction(mode)),
            Method::EncoderDecoder => Some(ModelKind::EncoderDecoder),
            Method::ConstantVelocity | Method::PerfectOracle => None,
        }
    }
}

/// A method plus the parameters it runs with (learned methods only).
pub struct MethodRun<'a> {
    pub method: Method,
    pub registry: Option<&'a ParamRegistry>,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalConfig {
    pub t_obs: usize,
    pub t_pred: usize,
    pub radius: f64,
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { t_obs: 5, t_pred: 13, radius: f64::INFINITY, workers: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Normalized,
    Meters,
}

impl Scale {
    pub fn name(self) -> &'static str {
        match self {
            Scale::Normalized => "normalized",
            Scale::Meters => "meters",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReportRow {
    pub method: Method,
    /// `None` is the agent-weighted total over all categories.
    pub category: Option<Category>,
    pub scale: Scale,
    pub ade: f64,
    pub fde: f64,
    /// Agent-window pairs aggregated into this row.
    pub n_agents: usize,
    /// Windows contributing at least one agent.
    pub n_windows: usize,
}

#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
    /// Windows that produced metrics.
    pub windows_evaluated: usize,
    /// Windows dropped for every method because one method failed.
    pub windows_excluded: usize,
    /// Windows with no agent present in every frame.
    pub windows_empty: usize,
}

impl MetricsReport {
    pub fn row(&self, method: Method, category: Option<Category>, scale: Scale) -> &ReportRow {
        self.rows
            .iter()
            .find(|r| r.method == method && r.category == category && r.scale == scale)
            .expect("report covers every method x category x scale cell")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,category,ade,fde,n_windows,coordinate_scale\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.method.name(),
                r.category.map_or("total", |c| c.name()),
                r.ade,
                r.fde,
                r.n_windows,
                r.scale.name()
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for scale in [Scale::Normalized, Scale::Meters] {
            out.push_str(&format!("coordinate scale: {}\n", scale.name()));
            out.push_str(&format!(
                "{:<20} {:<12} {:>10} {:>10} {:>8}\n",
                "method", "category", "ADE", "FDE", "windows"
            ));
            for r in self.rows.iter().filter(|r| r.scale == scale) {
                let (ade, fde) = if r.n_agents == 0 {
                    ("-".to_string(), "-".to_string())
                } else {
                    (format!("{:.4}", r.ade), format!("{:.4}", r.fde))
                };
                out.push_str(&format!(
                    "{:<20} {:<12} {:>10} {:>10} {:>8}\n",
                    r.method.name(),
                    r.category.map_or("total", |c| c.name()),
                    ade,
                    fde,
                    r.n_windows
                ));
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "windows evaluated: {}, excluded: {}, without eligible agents: {}\n",
            self.windows_evaluated, self.windows_excluded, self.windows_empty
        ));
        out
    }
}

/// Truth and per-method errors of one agent in one window.
struct AgentOutcome {
    category: Category,
    /// Indexed `[method][scale]` with scale 0 = normalized, 1 = meters.
    ade: Vec<[f64; 2]>,
    fde: Vec<[f64; 2]>,
}

enum WindowOutcome {
    Metrics(Vec<AgentOutcome>),
    Excluded,
    Empty,
}

/// Runs every method over every window and aggregates paired ADE/FDE per
/// category and in total. Only agents present in every frame of a window
/// are scored.
pub fn evaluate(
    windows: &[SceneWindow],
    methods: &[MethodRun],
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    if methods.is_empty() {
        return Err(Error::Usage("method list is empty".into()));
    }
    for (i, m) in methods.iter().enumerate() {
        if m.method.model_kind().is_some() && m.registry.is_none() {
            return Err(Error::Config(format!(
                "method {} requires trained parameters",
                m.method.name()
            )));
        }
        if methods[..i].iter().any(|e| e.method == m.method) {
            return Err(Error::Usage(format!("method {} listed twice", m.method.name())));
        }
    }
    if cfg.t_obs < 1 || cfg.t_obs >= cfg.t_pred {
        return Err(Error::Config(format!(
            "need 1 <= t_obs < t_pred, got t_obs {} and t_pred {}",
            cfg.t_obs, cfg.t_pred
        )));
    }
    if cfg.t_obs < 2 && methods.iter().any(|m| m.method == Method::ConstantVelocity) {
        return Err(Error::Config(
            "constant_velocity needs t_obs >= 2 observed frames".into(),
        ));
    }
    if windows.is_empty() {
        return Err(Error::Usage("no windows to evaluate".into()));
    }
    for (i, w) in windows.iter().enumerate() {
        if w.frames.len() != cfg.t_pred {
            return Err(Error::Usage(format!(
                "window {i} has {} frames, expected t_pred = {}",
                w.frames.len(),
                cfg.t_pred
            )));
        }
    }

    let outcomes: Vec<WindowOutcome> = if cfg.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Internal(format!("worker pool: {e}")))?;
        pool.install(|| {
            windows.par_iter().map(|w| evaluate_window(w, methods, cfg)).collect::<Result<_>>()
        })?
    } else {
        windows.par_iter().map(|w| evaluate_window(w, methods, cfg)).collect::<Result<_>>()?
    };

    let mut windows_evaluated = 0;
    let mut windows_excluded = 0;
    let mut windows_empty = 0;
    // Sums indexed [method][category slot][scale]; slot 3 is the total.
    let mut ade_sum = vec![[[0.0f64; 2]; 4]; methods.len()];
    let mut fde_sum = vec![[[0.0f64; 2]; 4]; methods.len()];
    let mut agents = vec![[0usize; 4]; methods.len()];
    let mut win_count = vec![[0usize; 4]; methods.len()];

    for outcome in outcomes {
        match outcome {
            WindowOutcome::Excluded => windows_excluded += 1,
            WindowOutcome::Empty => windows_empty += 1,
            WindowOutcome::Metrics(per_agent) => {
                windows_evaluated += 1;
                let mut seen = vec![[false; 4]; methods.len()];
                for a in &per_agent {
                    let slot = a.category.index();
                    for m in 0..methods.len() {
                        for s in 0..2 {
                            ade_sum[m][slot][s] += a.ade[m][s];
                            fde_sum[m][slot][s] += a.fde[m][s];
                            ade_sum[m][3][s] += a.ade[m][s];
                            fde_sum[m][3][s] += a.fde[m][s];
                        }
                        agents[m][slot] += 1;
                        agents[m][3] += 1;
                        seen[m][slot] = true;
                        seen[m][3] = true;
                    }
                }
                for m in 0..methods.len() {
                    for slot in 0..4 {
                        if seen[m][slot] {
                            win_count[m][slot] += 1;
                        }
                    }
                }
            }
        }
    }

    let mut rows = Vec::new();
    for (s, scale) in [Scale::Normalized, Scale::Meters].into_iter().enumerate() {
        for (m, run) in methods.iter().enumerate() {
            for slot in 0..4 {
                let category = Category::ALL.get(slot).copied();
                let n = agents[m][slot];
                rows.push(ReportRow {
                    method: run.method,
                    category,
                    scale,
                    ade: if n == 0 { 0.0 } else { ade_sum[m][slot][s] / n as f64 },
                    fde: if n == 0 { 0.0 } else { fde_sum[m][slot][s] / n as f64 },
                    n_agents: n,
                    n_windows: win_count[m][slot],
                });
            }
        }
    }
    Ok(MetricsReport { rows, windows_evaluated, windows_excluded, windows_empty })
}

fn evaluate_window(
    window: &SceneWindow,
    methods: &[MethodRun],
    cfg: &EvalConfig,
) -> Result<WindowOutcome> {
    let horizon = cfg.t_pred - cfg.t_obs;
    // Agents observable for the whole window, with their tracks.
    let mut ids: Vec<u64> =
        window.frames[0].agents().iter().map(|a| a.agent_id).collect();
    ids.retain(|id| {
        window.frames.iter().all(|f| f.agents().iter().any(|a| a.agent_id == *id))
    });
    if ids.is_empty() {
        return Ok(WindowOutcome::Empty);
    }

    let track = |id: u64, range: std::ops::Range<usize>| -> Vec<Point> {
        range
            .map(|t| {
                let a = window.frames[t]
                    .agents()
                    .iter()
                    .find(|a| a.agent_id == id)
                    .expect("agent present in every frame");
                (a.x, a.y)
            })
            .collect()
    };
    let category_of = |id: u64| -> Category {
        window.frames[0]
            .agents()
            .iter()
            .find(|a| a.agent_id == id)
            .expect("agent present in frame 0")
            .category
    };

    // Predictions per method, per agent, in `ids` order.
    let mut predicted: Vec<Vec<Vec<Point>>> = Vec::with_capacity(methods.len());
    for run in methods {
        let per_agent = match run.method {
            Method::PerfectOracle => {
                ids.iter().map(|&id| track(id, cfg.t_obs..cfg.t_pred)).collect::<Vec<_>>()
            }
            Method::ConstantVelocity => {
                let mut out = Vec::with_capacity(ids.len());
                for &id in &ids {
                    out.push(constant_velocity_baseline(&track(id, 0..cfg.t_obs), horizon)?);
                }
                out
            }
            Method::Interaction(_) | Method::EncoderDecoder => {
                let kind = run.method.model_kind().expect("learned method");
                let registry = run.registry.expect("validated before dispatch");
                let rcfg = RolloutConfig {
                    t_obs: cfg.t_obs,
                    t_pred: cfg.t_pred,
                    mode: match run.method {
                        Method::Interaction(mode) => mode,
                        _ => ModelMode::Full,
                    },
                    phase: Phase::Predict,
                    radius: cfg.radius,
                    sample_seed: None,
                };
                let preds =
                    match predict_window(kind, registry, &window.frames[..cfg.t_obs], &rcfg) {
                        Ok(p) => p,
                        // A numeric blowup on one window drops the window
                        // for every method; structural errors abort.
                        Err(Error::NonFinite(_)) | Err(Error::Domain(_)) => {
                            return Ok(WindowOutcome::Excluded)
                        }
                        Err(e) => return Err(e),
                    };
                let mut out = Vec::with_capacity(ids.len());
                for &id in &ids {
                    let Some(steps) = preds.get(&id) else {
                        return Ok(WindowOutcome::Excluded);
                    };
                    let future: Vec<Point> = steps
                        .iter()
                        .filter(|p| p.frame >= cfg.t_obs)
                        .map(|p| (p.gaussian.mean[0], p.gaussian.mean[1]))
                        .collect();
                    if future.len() != horizon {
                        return Ok(WindowOutcome::Excluded);
                    }
                    out.push(future);
                }
                out
            }
        };
        predicted.push(per_agent);
    }

    let to_meters =
        |pts: &[Point]| -> Vec<Point> { pts.iter().map(|p| window.transform.invert(p.0, p.1)).collect() };

    let mut outcomes = Vec::with_capacity(ids.len());
    for (i, &id) in ids.iter().enumerate() {
        let truth = track(id, cfg.t_obs..cfg.t_pred);
        let truth_m = to_meters(&truth);
        let mut ade_cells = Vec::with_capacity(methods.len());
        let mut fde_cells = Vec::with_capacity(methods.len());
        for m in 0..methods.len() {
            let pred = &predicted[m][i];
            let pred_m = to_meters(pred);
            ade_cells.push([ade(pred, &truth)?, ade(&pred_m, &truth_m)?]);
            fde_cells.push([fde(pred, &truth)?, fde(&pred_m, &truth_m)?]);
        }
        outcomes.push(AgentOutcome { category: category_of(id), ade: ade_cells, fde: fde_cells });
    }
    Ok(WindowOutcome::Metrics(outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::NormTransform;
    use crate::graph::{AgentObservation, FrameObservation};
    use crate::model::ModelDims;
    use crate::nn::ParamRegistry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_sequences_have_zero_error() {
        let pts = vec![(1.0, 2.0), (3.0, -4.0), (5.0, 0.5)];
        assert_eq!(ade(&pts, &pts).unwrap(), 0.0);
        assert_eq!(fde(&pts, &pts).unwrap(), 0.0);
    }

    #[test]
    fn constant_offsets_give_the_hypotenuse() {
        let truth = vec![(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)];
        let pred: Vec<_> = truth.iter().map(|p| (p.0 + 0.3, p.1 + 0.4)).collect();
        assert!((ade(&pred, &truth).unwrap() - 0.5).abs() <= 1e-15);

        let pred_final: Vec<_> = vec![(0.0, 0.0), (1.0, 1.0), (3.0, 0.0)];
        assert!((fde(&pred_final, &truth).unwrap() - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn ade_matches_a_brute_force_mean_of_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.gen_range(1..8);
            let a: Vec<Point> =
                (0..n).map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0))).collect();
            let b: Vec<Point> =
                (0..n).map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0))).collect();
            let brute = a
                .iter()
                .zip(&b)
                .map(|(p, q)| (p.0 - q.0).hypot(p.1 - q.1))
                .sum::<f64>()
                / n as f64;
            assert!((ade(&a, &b).unwrap() - brute).abs() <= 1e-12);
            let last = (a[n - 1].0 - b[n - 1].0).hypot(a[n - 1].1 - b[n - 1].1);
            assert!((fde(&a, &b).unwrap() - last).abs() <= 1e-12);
        }
    }

    #[test]
    fn single_step_sequences_make_ade_and_fde_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let a = vec![(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0))];
            let b = vec![(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0))];
            assert_eq!(ade(&a, &b).unwrap(), fde(&a, &b).unwrap());
        }
    }

    #[test]
    fn malformed_inputs_are_usage_errors() {
        assert!(matches!(ade(&[(0.0, 0.0)], &[]), Err(Error::Usage(_))));
        assert!(matches!(ade(&[], &[]), Err(Error::Usage(_))));
        assert!(matches!(fde(&[], &[]), Err(Error::Usage(_))));
        assert!(matches!(constant_velocity_baseline(&[(0.0, 0.0)], 3), Err(Error::Usage(_))));
    }

    #[test]
    fn rigid_motions_leave_the_metrics_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.gen_range(2..6);
            let a: Vec<Point> =
                (0..n).map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0))).collect();
            let b: Vec<Point> =
                (0..n).map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0))).collect();
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (tx, ty) = (rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0));
            let rot = |p: &Point| -> Point {
                (
                    p.0 * theta.cos() - p.1 * theta.sin() + tx,
                    p.0 * theta.sin() + p.1 * theta.cos() + ty,
                )
            };
            let ra: Vec<Point> = a.iter().map(&rot).collect();
            let rb: Vec<Point> = b.iter().map(&rot).collect();
            assert!((ade(&a, &b).unwrap() - ade(&ra, &rb).unwrap()).abs() <= 1e-12);
            assert!((fde(&a, &b).unwrap() - fde(&ra, &rb).unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_velocity_extrapolates_lines_and_rest() {
        let line = constant_velocity_baseline(&[(0.0, 0.0), (1.0, 0.0)], 3).unwrap();
        assert_eq!(line, vec![(2.0, 0.0), (3.0, 0.0), (4.0, 0.0)]);

        let still = constant_velocity_baseline(&[(2.0, 5.0), (2.0, 5.0), (2.0, 5.0)], 2).unwrap();
        assert_eq!(still, vec![(2.0, 5.0), (2.0, 5.0)]);

        // Mean of the last two step vectors: (1,0) then (0,1).
        let turn = constant_velocity_baseline(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)], 2).unwrap();
        assert_eq!(turn, vec![(1.5, 1.5), (2.0, 2.0)]);
    }

    #[test]
    fn constant_velocity_suffers_more_on_turning_tracks() {
        let straight: Vec<Point> = (0..9).map(|k| (k as f64, 0.0)).collect();
        let r = 5.0;
        let arc: Vec<Point> = (0..9)
            .map(|k| {
                let phi = 0.2 * k as f64;
                (r * phi.sin(), r * (1.0 - phi.cos()))
            })
            .collect();
        let score = |track: &[Point]| {
            let pred = constant_velocity_baseline(&track[..4], 5).unwrap();
            ade(&pred, &track[4..]).unwrap()
        };
        assert!(score(&arc) > score(&straight));
        assert!(score(&straight) <= 1e-12);
    }

    fn frame(t: usize, rows: &[(u64, Category, f64, f64)]) -> FrameObservation {
        let agents = rows
            .iter()
            .map(|&(agent_id, category, x, y)| AgentObservation { agent_id, category, x, y })
            .collect();
        FrameObservation::new(t, agents).unwrap()
    }

    fn window_from(frames: Vec<FrameObservation>) -> SceneWindow {
        SceneWindow { start_frame: 0, frames, transform: NormTransform::identity() }
    }

    /// Three agents with hand-computable constant-velocity errors.
    fn crafted_window() -> SceneWindow {
        let p = Category::Pedestrian;
        let v = Category::Vehicle;
        let frames = (0..5)
            .map(|t| {
                let tf = t as f64;
                let b_y = if t < 3 { tf } else { 3.5 + (tf - 3.0) };
                let c_y = if t < 3 { 0.0 } else { tf - 2.0 };
                frame(
                    t,
                    &[
                        (1, p, tf, 0.0),
                        (2, p, 0.0, b_y),
                        (3, v, 2.0 * tf, c_y),
                    ],
                )
            })
            .collect();
        window_from(frames)
    }

    fn eval_cfg(t_obs: usize, t_pred: usize) -> EvalConfig {
        EvalConfig { t_obs, t_pred, ..EvalConfig::default() }
    }

    #[test]
    fn the_total_row_is_the_agent_weighted_mean() {
        let windows = vec![crafted_window()];
        let methods =
            [MethodRun { method: Method::ConstantVelocity, registry: None }];
        let report = evaluate(&windows, &methods, &eval_cfg(3, 5)).unwrap();

        let ped = report.row(Method::ConstantVelocity, Some(Category::Pedestrian), Scale::Normalized);
        let veh = report.row(Method::ConstantVelocity, Some(Category::Vehicle), Scale::Normalized);
        let total = report.row(Method::ConstantVelocity, None, Scale::Normalized);

        assert!((ped.ade - 0.25).abs() <= 1e-12, "{}", ped.ade);
        assert!((ped.fde - 0.25).abs() <= 1e-12);
        assert_eq!(ped.n_agents, 2);
        assert!((veh.ade - 1.5).abs() <= 1e-12);
        assert!((veh.fde - 2.0).abs() <= 1e-12);
        assert_eq!(veh.n_agents, 1);

        let want_ade = (0.25 * 2.0 + 1.5) / 3.0;
        let want_fde = (0.25 * 2.0 + 2.0) / 3.0;
        assert!((total.ade - want_ade).abs() <= 1e-12);
        assert!((total.fde - want_fde).abs() <= 1e-12);
        assert_eq!(total.n_agents, 3);
        assert_eq!(total.n_windows, 1);

        let bike = report.row(Method::ConstantVelocity, Some(Category::Bicycle), Scale::Normalized);
        assert_eq!(bike.n_agents, 0);
        assert_eq!(bike.n_windows, 0);
    }

    #[test]
    fn meter_rows_undo_the_window_transform() {
        let mut w = crafted_window();
        w.transform = NormTransform { center_x: 10.0, center_y: -4.0, scale: 0.5 };
        let methods = [MethodRun { method: Method::ConstantVelocity, registry: None }];
        let report = evaluate(&[w], &methods, &eval_cfg(3, 5)).unwrap();
        let norm = report.row(Method::ConstantVelocity, None, Scale::Normalized);
        let meters = report.row(Method::ConstantVelocity, None, Scale::Meters);
        // Distances divide by the scale; the translation cancels.
        assert!((meters.ade - norm.ade / 0.5).abs() <= 1e-12);
        assert!((meters.fde - norm.fde / 0.5).abs() <= 1e-12);
    }

    #[test]
    fn the_perfect_oracle_scores_zero_everywhere() {
        let windows = vec![crafted_window()];
        let methods = [
            MethodRun { method: Method::PerfectOracle, registry: None },
            MethodRun { method: Method::ConstantVelocity, registry: None },
        ];
        let report = evaluate(&windows, &methods, &eval_cfg(3, 5)).unwrap();
        for row in report.rows.iter().filter(|r| r.method == Method::PerfectOracle) {
            assert_eq!(row.ade, 0.0);
            assert_eq!(row.fde, 0.0);
        }
    }

    fn tiny_registry(seed: u64) -> ParamRegistry {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reg = ParamRegistry::new();
        crate::model::InteractionModel::init(
            &mut reg,
            ModelDims { embed: 4, edge_hidden: 6, node_hidden: 4, attention: 3 },
            false,
            &mut rng,
        )
        .unwrap();
        reg
    }

    #[test]
    fn one_failing_method_drops_the_window_for_everyone() {
        let benign = crafted_window();
        // Opposed near-max coordinates: the relative-offset feature
        // overflows inside the interaction model but never enters the
        // closed-form methods.
        let poisoned = window_from(
            (0..5)
                .map(|t| {
                    frame(
                        t,
                        &[
                            (1, Category::Pedestrian, 1e308, 0.0),
                            (2, Category::Pedestrian, -1e308, 0.0),
                        ],
                    )
                })
                .collect(),
        );
        let reg = tiny_registry(8);
        let oracle_only = [MethodRun { method: Method::PerfectOracle, registry: None }];
        let report =
            evaluate(&[benign.clone(), poisoned.clone()], &oracle_only, &eval_cfg(3, 5)).unwrap();
        assert_eq!(report.windows_evaluated, 2);
        assert_eq!(report.windows_excluded, 0);

        let paired = [
            MethodRun { method: Method::PerfectOracle, registry: None },
            MethodRun { method: Method::Interaction(ModelMode::Full), registry: Some(&reg) },
        ];
        let report = evaluate(&[benign, poisoned], &paired, &eval_cfg(3, 5)).unwrap();
        assert_eq!(report.windows_evaluated, 1);
        assert_eq!(report.windows_excluded, 1);
        let oracle_total = report.row(Method::PerfectOracle, None, Scale::Normalized);
        assert_eq!(oracle_total.n_windows, 1);
        assert_eq!(oracle_total.ade, 0.0);
    }

    #[test]
    fn learned_methods_produce_full_coverage_metrics() {
        let reg = tiny_registry(9);
        let windows = vec![crafted_window()];
        let methods = [
            MethodRun { method: Method::Interaction(ModelMode::Full), registry: Some(&reg) },
            MethodRun { method: Method::ConstantVelocity, registry: None },
        ];
        let report = evaluate(&windows, &methods, &eval_cfg(3, 5)).unwrap();
        let row = report.row(Method::Interaction(ModelMode::Full), None, Scale::Normalized);
        assert_eq!(row.n_agents, 3);
        assert!(row.ade.is_finite() && row.ade > 0.0);
        assert!(row.fde.is_finite() && row.fde > 0.0);

        // Bitwise repeatability of the whole report.
        let again = evaluate(&windows, &methods, &eval_cfg(3, 5)).unwrap();
        assert_eq!(report.to_csv(), again.to_csv());
    }

    #[test]
    fn setup_mistakes_are_rejected_before_any_window_runs() {
        let windows = vec![crafted_window()];
        let missing = [MethodRun { method: Method::EncoderDecoder, registry: None }];
        assert!(matches!(
            evaluate(&windows, &missing, &eval_cfg(3, 5)),
            Err(Error::Config(_))
        ));

        let dup = [
            MethodRun { method: Method::ConstantVelocity, registry: None },
            MethodRun { method: Method::ConstantVelocity, registry: None },
        ];
        assert!(matches!(evaluate(&windows, &dup, &eval_cfg(3, 5)), Err(Error::Usage(_))));

        let cv = [MethodRun { method: Method::ConstantVelocity, registry: None }];
        assert!(matches!(evaluate(&windows, &cv, &eval_cfg(1, 5)), Err(Error::Config(_))));

        let oracle = [MethodRun { method: Method::PerfectOracle, registry: None }];
        assert!(matches!(evaluate(&[], &oracle, &eval_cfg(3, 5)), Err(Error::Usage(_))));
        let short = vec![window_from(vec![frame(0, &[(1, Category::Pedestrian, 0.0, 0.0)])])];
        assert!(matches!(evaluate(&short, &oracle, &eval_cfg(3, 5)), Err(Error::Usage(_))));
    }

    #[test]
    fn csv_and_table_lay_out_every_cell() {
        let windows = vec![crafted_window()];
        let methods = [MethodRun { method: Method::ConstantVelocity, registry: None }];
        let report = evaluate(&windows, &methods, &eval_cfg(3, 5)).unwrap();
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "method,category,ade,fde,n_windows,coordinate_scale");
        // 1 method x 4 category rows x 2 scales.
        assert_eq!(csv.lines().count(), 1 + 8);
        assert!(csv.contains("constant_velocity,total,"));
        assert!(csv.contains(",normalized"));
        assert!(csv.contains(",meters"));

        let table = report.to_table();
        assert!(table.contains("coordinate scale: normalized"));
        assert!(table.contains("constant_velocity"));
        assert!(table.contains("windows evaluated: 1"));
    }

    #[test]
    fn method_names_round_trip_and_cover_the_standard_set() {
        for m in Method::standard() {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert_eq!(Method::parse("perfect_oracle").unwrap(), Method::PerfectOracle);
        assert!(matches!(Method::parse("kalman"), Err(Error::Config(_))));
    }
}
