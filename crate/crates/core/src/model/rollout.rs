//! Window rollout: builds per-frame graph links, advances the network, and
//! collects predictions and training loss.
//!
//! Frames are processed in order; at frame `t` the network state is updated
//! and, once `t + 1` enters the prediction span, a Gaussian for frame `t + 1`
//! is emitted from each live agent's refined hidden state. Training runs
//! teacher-forced on ground truth; prediction extends the window closed-loop
//! by feeding emitted means (or samples) back in as synthetic observations.

use super::{
    attention_aggregate, gaussian_head, gaussian_values, nll, sample_position, zero_leaf,
    EncoderDecoderModel, GaussianValues, InteractionModel, ModelMode,
};
use crate::autodiff::{Tape, Tensor, ValueId};
use crate::graph::{
    frame_links, node_feature, spatial_edge_feature, temporal_edge_feature, validate_radius,
    AgentObservation, Category, FrameObservation,
};
use crate::nn::{LstmState, ParamBinding};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Teacher forcing: ground truth feeds every step, losses collected on
    /// the prediction span.
    Train,
    /// Closed loop: the window carries only observed frames; the rest are
    /// synthesized from the model's own output.
    Predict,
}

#[derive(Clone, Copy, Debug)]
pub struct RolloutConfig {
    /// Number of observed frames at the start of the window.
    pub t_obs: usize,
    /// Total horizon; predictions cover frames `t_obs..t_pred`.
    pub t_pred: usize,
    pub mode: ModelMode,
    pub phase: Phase,
    /// Neighborhood radius for spatial edges; infinity keeps all pairs.
    pub radius: f64,
    /// Draw feedback positions from the predicted distribution with this
    /// seed instead of following the mean (predict phase only).
    pub sample_seed: Option<u64>,
}

#[derive(Clone, Copy, Debug)]
pub struct StepPrediction {
    /// Window-relative index of the frame this distribution describes.
    pub frame: usize,
    pub gaussian: GaussianValues,
}

#[derive(Debug)]
pub struct RolloutResult {
    /// Emitted distributions per agent, in frame order.
    pub predictions: BTreeMap<u64, Vec<StepPrediction>>,
    /// Mean over loss-eligible agents of their summed per-step losses;
    /// `None` when no agent qualified (prediction runs, short windows).
    pub loss: Option<ValueId>,
    /// Plain value of each eligible agent's summed loss.
    pub per_agent_nll: BTreeMap<u64, f64>,
    /// Last `(instance hidden, refined hidden)` per agent.
    pub final_hidden: BTreeMap<u64, (ValueId, ValueId)>,
}

/// Gate an instance hidden state by the softmax of its cell state. The
/// no-self-attention ablation passes the hidden state through untouched.
pub(crate) fn self_attention_gate(
    tape: &mut Tape,
    h1: ValueId,
    cell: ValueId,
    mode: ModelMode,
) -> Result<ValueId> {
    match mode {
        ModelMode::NoSelfAttention => Ok(h1),
        _ => {
            let w = tape.softmax(cell)?;
            tape.mul(h1, w)
        }
    }
}

fn validate_window(cfg: &RolloutConfig, window: &[FrameObservation]) -> Result<()> {
    validate_radius(cfg.radius)?;
    if cfg.t_obs < 1 || cfg.t_pred <= cfg.t_obs {
        return Err(Error::Usage(format!(
            "rollout needs 1 <= observed ({}) < horizon ({})",
            cfg.t_obs, cfg.t_pred
        )));
    }
    match cfg.phase {
        Phase::Train => {
            if window.len() < cfg.t_obs + 1 {
                return Err(Error::Usage(format!(
                    "training window has {} frames, needs at least {}",
                    window.len(),
                    cfg.t_obs + 1
                )));
            }
        }
        Phase::Predict => {
            if window.len() != cfg.t_obs {
                return Err(Error::Usage(format!(
                    "prediction window has {} frames, needs exactly {}",
                    window.len(),
                    cfg.t_obs
                )));
            }
        }
    }
    for (i, f) in window.iter().enumerate() {
        if f.frame_index() != window[0].frame_index() + i {
            return Err(Error::Usage(format!(
                "window frames must be consecutive; frame {} at position {i}",
                f.frame_index()
            )));
        }
    }
    Ok(())
}

/// Appearance counts over the observed span, for loss eligibility: an agent
/// must have been seen at least twice before the prediction span to carry a
/// loss term.
fn observed_counts(window: &[FrameObservation], t_obs: usize) -> BTreeMap<u64, usize> {
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for f in &window[..t_obs.min(window.len())] {
        for a in f.agents() {
            *counts.entry(a.agent_id).or_default() += 1;
        }
    }
    counts
}

fn aggregate_loss(
    tape: &mut Tape,
    loss_terms: &BTreeMap<u64, Vec<ValueId>>,
) -> Result<(Option<ValueId>, BTreeMap<u64, f64>)> {
    let mut per_agent = BTreeMap::new();
    let mut sums: Vec<ValueId> = Vec::new();
    for (&id, terms) in loss_terms {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = tape.add(acc, t)?;
        }
        per_agent.insert(id, tape.value(acc).data()[0]);
        sums.push(acc);
    }
    if sums.is_empty() {
        return Ok((None, per_agent));
    }
    let mut total = sums[0];
    for &s in &sums[1..] {
        total = tape.add(total, s)?;
    }
    let loss = tape.scale(1.0 / sums.len() as f64, total)?;
    Ok((Some(loss), per_agent))
}

#[derive(Default)]
struct AgentTrack {
    /// Instance LSTM cell state, carried across frames.
    cell: Option<ValueId>,
    /// Refined hidden state of the previous frame, fed back into the
    /// instance LSTM.
    refined: Option<ValueId>,
    h1: Option<ValueId>,
    /// Temporal-edge LSTM state; advances only on frames where the agent
    /// also existed in the frame before.
    temporal: Option<LstmState>,
}

/// Runs the two-layer interaction model over one window.
pub fn rollout(
    tape: &mut Tape,
    binding: &ParamBinding,
    model: &InteractionModel,
    window: &[FrameObservation],
    cfg: &RolloutConfig,
) -> Result<RolloutResult> {
    validate_window(cfg, window)?;
    let zero_edge = zero_leaf(tape, model.dims.edge_hidden);
    let zero_node = zero_leaf(tape, model.dims.node_hidden);
    let scale = model.attention_scale();
    let observed = observed_counts(window, cfg.t_obs);

    let mut frames: Vec<FrameObservation> = window.to_vec();
    let mut sampler = cfg.sample_seed.map(ChaCha8Rng::seed_from_u64);

    let mut tracks: BTreeMap<u64, AgentTrack> = BTreeMap::new();
    let mut spatial_states: BTreeMap<(u64, u64), LstmState> = BTreeMap::new();
    let mut summary_edge_states: BTreeMap<Category, LstmState> = BTreeMap::new();
    let mut summary_node_states: BTreeMap<Category, LstmState> = BTreeMap::new();
    let mut prev_pool: BTreeMap<Category, ValueId> = BTreeMap::new();

    let mut predictions: BTreeMap<u64, Vec<StepPrediction>> = BTreeMap::new();
    let mut loss_terms: BTreeMap<u64, Vec<ValueId>> = BTreeMap::new();

    let horizon = match cfg.phase {
        Phase::Train => cfg.t_pred.min(frames.len()),
        Phase::Predict => cfg.t_pred,
    };
    for t in 0..horizon.saturating_sub(1) {
        let cur = frames[t].clone();
        let prev = if t > 0 { Some(frames[t - 1].clone()) } else { None };
        let links = frame_links(prev.as_ref(), &cur, cfg.radius);

        let mut neighbors_of: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        for &(i, j) in &links.spatial_edges {
            neighbors_of.entry(i).or_default().push(j);
        }

        // Instance layer.
        let mut h1_map: BTreeMap<u64, ValueId> = BTreeMap::new();
        let mut cell_map: BTreeMap<u64, ValueId> = BTreeMap::new();
        for a in cur.agents() {
            let ci = a.category.index();
            let nf = tape.leaf(Tensor::vector(node_feature(a).to_vec()));
            let e_i = model.node_embed[ci].apply(tape, binding, nf)?;

            let h_self = if links.temporal_agents.binary_search(&a.agent_id).is_ok() {
                let prev_obs = prev.as_ref().unwrap().agent(a.agent_id).unwrap();
                let feat = temporal_edge_feature(prev_obs, a)?;
                let f = tape.leaf(Tensor::vector(feat.to_vec()));
                let emb = model.temporal_embed[ci].apply(tape, binding, f)?;
                let state = tracks
                    .get(&a.agent_id)
                    .and_then(|tr| tr.temporal)
                    .unwrap_or(LstmState { hidden: zero_edge, cell: zero_edge });
                let next = model.temporal_lstm[ci].step(tape, binding, &state, emb)?;
                tracks.entry(a.agent_id).or_default().temporal = Some(next);
                next.hidden
            } else {
                tracks
                    .get(&a.agent_id)
                    .and_then(|tr| tr.temporal)
                    .map(|s| s.hidden)
                    .unwrap_or(zero_edge)
            };

            let mut neighbor_hiddens = Vec::new();
            if let Some(list) = neighbors_of.get(&a.agent_id) {
                for &j in list {
                    let to = cur.agent(j).unwrap();
                    let feat = spatial_edge_feature(a, to);
                    let f = tape.leaf(Tensor::vector(feat.to_vec()));
                    let emb = model.spatial_embed.apply(tape, binding, f)?;
                    let state = spatial_states
                        .get(&(a.agent_id, j))
                        .copied()
                        .unwrap_or(LstmState { hidden: zero_edge, cell: zero_edge });
                    let next = model.spatial_lstm.step(tape, binding, &state, emb)?;
                    spatial_states.insert((a.agent_id, j), next);
                    neighbor_hiddens.push(next.hidden);
                }
            }

            let attn = attention_aggregate(
                tape,
                binding.value(model.attn_query),
                binding.value(model.attn_key),
                h_self,
                &neighbor_hiddens,
                scale,
            )?;
            let pair = tape.concat(h_self, attn.output)?;
            let a_i = model.merge_embed[ci].apply(tape, binding, pair)?;
            let input = tape.concat(e_i, a_i)?;

            let track = tracks.entry(a.agent_id).or_default();
            let state = LstmState {
                hidden: track.refined.unwrap_or(zero_node),
                cell: track.cell.unwrap_or(zero_node),
            };
            let next = model.instance_lstm[ci].step(tape, binding, &state, input)?;
            track.h1 = Some(next.hidden);
            track.cell = Some(next.cell);
            h1_map.insert(a.agent_id, next.hidden);
            cell_map.insert(a.agent_id, next.cell);
        }

        // Category layer.
        let refined: BTreeMap<u64, ValueId> = match cfg.mode {
            ModelMode::NoCategoryLayer => h1_map.clone(),
            _ => {
                let mut out = BTreeMap::new();
                for (cat, members) in &links.memberships {
                    let ci = cat.index();
                    let mut pooled: Option<ValueId> = None;
                    for &id in members {
                        let d = self_attention_gate(tape, h1_map[&id], cell_map[&id], cfg.mode)?;
                        pooled = Some(match pooled {
                            Some(acc) => tape.add(acc, d)?,
                            None => d,
                        });
                    }
                    let pool = tape.scale(1.0 / members.len() as f64, pooled.unwrap())?;

                    let f_uu = if links.super_temporal.contains(cat) {
                        let p = prev_pool[cat];
                        tape.sub(pool, p)?
                    } else {
                        zero_node
                    };
                    let edge_emb = model.summary_edge_embed[ci].apply(tape, binding, f_uu)?;
                    let e_state = summary_edge_states
                        .get(cat)
                        .copied()
                        .unwrap_or(LstmState { hidden: zero_edge, cell: zero_edge });
                    let e_next =
                        model.summary_edge_lstm[ci].step(tape, binding, &e_state, edge_emb)?;
                    summary_edge_states.insert(*cat, e_next);

                    let pool_emb = model.summary_node_embed[ci].apply(tape, binding, pool)?;
                    let n_input = tape.concat(pool_emb, e_next.hidden)?;
                    let n_state = summary_node_states
                        .get(cat)
                        .copied()
                        .unwrap_or(LstmState { hidden: zero_node, cell: zero_node });
                    let n_next =
                        model.summary_node_lstm[ci].step(tape, binding, &n_state, n_input)?;
                    summary_node_states.insert(*cat, n_next);
                    prev_pool.insert(*cat, pool);

                    for &id in members {
                        let pair = tape.concat(h1_map[&id], n_next.hidden)?;
                        out.insert(id, model.output_merge.linear(tape, binding, pair)?);
                    }
                }
                out
            }
        };
        for (&id, &h2) in &refined {
            tracks.get_mut(&id).unwrap().refined = Some(h2);
        }

        // Output head, loss, and closed-loop feedback.
        if t + 1 >= cfg.t_obs {
            let mut feedback: Vec<AgentObservation> = Vec::new();
            for a in cur.agents() {
                let g = gaussian_head(tape, binding, &model.head, refined[&a.agent_id])?;
                let values = gaussian_values(tape, &g);
                predictions
                    .entry(a.agent_id)
                    .or_default()
                    .push(StepPrediction { frame: t + 1, gaussian: values });

                match cfg.phase {
                    Phase::Train => {
                        if observed.get(&a.agent_id).copied().unwrap_or(0) >= 2 {
                            if let Some(target) = frames[t + 1].agent(a.agent_id) {
                                let term = nll(tape, &g, (target.x, target.y))?;
                                loss_terms.entry(a.agent_id).or_default().push(term);
                            }
                        }
                    }
                    Phase::Predict => {
                        let pos = match &mut sampler {
                            Some(rng) => sample_position(&values, rng),
                            None => (values.mean[0], values.mean[1]),
                        };
                        feedback.push(AgentObservation {
                            agent_id: a.agent_id,
                            category: a.category,
                            x: pos.0,
                            y: pos.1,
                        });
                    }
                }
            }
            if cfg.phase == Phase::Predict && t + 1 < cfg.t_pred - 1 {
                frames.push(FrameObservation::new(cur.frame_index() + 1, feedback)?);
            }
        }
    }

    let (loss, per_agent_nll) = aggregate_loss(tape, &loss_terms)?;
    let final_hidden = tracks
        .iter()
        .filter_map(|(id, tr)| Some((*id, (tr.h1?, tr.refined?))))
        .collect();
    Ok(RolloutResult { predictions, loss, per_agent_nll, final_hidden })
}

/// Runs the interaction-free encoder-decoder baseline over one window.
/// The config's mode and radius are ignored; the phase and spans mean the
/// same thing as in [`rollout`].
pub fn ed_rollout(
    tape: &mut Tape,
    binding: &ParamBinding,
    model: &EncoderDecoderModel,
    window: &[FrameObservation],
    cfg: &RolloutConfig,
) -> Result<RolloutResult> {
    validate_window(cfg, window)?;
    let zero = zero_leaf(tape, model.hidden);
    let observed = observed_counts(window, cfg.t_obs);
    let mut sampler = cfg.sample_seed.map(ChaCha8Rng::seed_from_u64);

    let mut categories: BTreeMap<u64, Category> = BTreeMap::new();
    for f in &window[..cfg.t_obs] {
        for a in f.agents() {
            categories.insert(a.agent_id, a.category);
        }
    }

    let mut predictions: BTreeMap<u64, Vec<StepPrediction>> = BTreeMap::new();
    let mut loss_terms: BTreeMap<u64, Vec<ValueId>> = BTreeMap::new();
    let mut final_hidden = BTreeMap::new();

    for (&id, &cat) in &categories {
        let mut state = LstmState { hidden: zero, cell: zero };
        for f in &window[..cfg.t_obs] {
            if let Some(a) = f.agent(id) {
                let feat = tape.leaf(Tensor::vector(node_feature(a).to_vec()));
                let emb = model.embed.apply(tape, binding, feat)?;
                state = model.encoder.step(tape, binding, &state, emb)?;
            }
        }
        // Decoding is anchored at the last observed frame.
        let Some(last_obs) = window[cfg.t_obs - 1].agent(id) else { continue };

        let mut dec = state;
        let code = cat.code() as f64;
        let mut input_pos = (last_obs.x, last_obs.y);
        for step in 0..cfg.t_pred - cfg.t_obs {
            let feat = tape.leaf(Tensor::vector(vec![input_pos.0, input_pos.1, code]));
            let emb = model.embed.apply(tape, binding, feat)?;
            dec = model.decoder.step(tape, binding, &dec, emb)?;
            let g = gaussian_head(tape, binding, &model.head, dec.hidden)?;
            let values = gaussian_values(tape, &g);
            let frame = cfg.t_obs + step;
            predictions.entry(id).or_default().push(StepPrediction { frame, gaussian: values });

            match cfg.phase {
                Phase::Train => {
                    if observed.get(&id).copied().unwrap_or(0) >= 2 && frame < window.len() {
                        if let Some(target) = window[frame].agent(id) {
                            let term = nll(tape, &g, (target.x, target.y))?;
                            loss_terms.entry(id).or_default().push(term);
                        }
                    }
                    // Next input: the true position when available, else the
                    // last one carried forward.
                    if frame < window.len() {
                        if let Some(a) = window[frame].agent(id) {
                            input_pos = (a.x, a.y);
                        }
                    }
                }
                Phase::Predict => {
                    input_pos = match &mut sampler {
                        Some(rng) => sample_position(&values, rng),
                        None => (values.mean[0], values.mean[1]),
                    };
                }
            }
        }
        final_hidden.insert(id, (dec.hidden, dec.hidden));
    }

    let (loss, per_agent_nll) = aggregate_loss(tape, &loss_terms)?;
    Ok(RolloutResult { predictions, loss, per_agent_nll, final_hidden })
}
