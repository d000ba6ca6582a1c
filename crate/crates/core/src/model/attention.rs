//! Scaled dot-product attention over a node's spatial-edge hidden states.

use crate::autodiff::{Tape, ValueId};
use crate::Result;

pub struct AttentionResult {
    /// Weighted sum of the neighbor hidden states (unprojected).
    pub output: ValueId,
    /// Softmax weights aligned with the input neighbor order; `None` when
    /// there were no neighbors.
    pub weights: Option<ValueId>,
}

/// Mixes `neighbors` into one vector. Scores are scaled dot products of the
/// projected self state (the agent's temporal-edge hidden) against each
/// projected neighbor state; weights are their softmax. No neighbors yields
/// a zero vector, so isolation contributes nothing downstream.
pub fn attention_aggregate(
    tape: &mut Tape,
    query_proj: ValueId,
    key_proj: ValueId,
    h_self: ValueId,
    neighbors: &[ValueId],
    scale: f64,
) -> Result<AttentionResult> {
    if neighbors.is_empty() {
        let len = tape.value(h_self).numel();
        return Ok(AttentionResult { output: super::zero_leaf(tape, len), weights: None });
    }

    let query = tape.matmul(query_proj, h_self)?;
    let mut scores = Vec::with_capacity(neighbors.len());
    for &n in neighbors {
        let key = tape.matmul(key_proj, n)?;
        let raw = tape.dot(query, key)?;
        scores.push(tape.scale(scale, raw)?);
    }
    let stacked = tape.stack(&scores)?;
    let weights = tape.softmax(stacked)?;

    let mut output: Option<ValueId> = None;
    for (j, &n) in neighbors.iter().enumerate() {
        let w = tape.slice(weights, j, 1)?;
        let term = tape.scalar_mul(w, n)?;
        output = Some(match output {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    Ok(AttentionResult { output: output.unwrap(), weights: Some(weights) })
}
