//! Trajectory prediction networks.
//!
//! The main model reads the per-frame interaction graph in two layers. The
//! instance layer advances one LSTM per spatial edge (all spatial edges
//! share weights), one temporal-edge LSTM per agent (weights per category),
//! and one node LSTM per agent (weights per category), mixing neighbor
//! information in through scaled dot-product attention. The category layer
//! pools refined instance states per category into a summary node with its
//! own temporal-edge and node LSTMs, then writes the summary back into each
//! member's hidden state. A Gaussian head turns hidden states into bivariate
//! position distributions one frame ahead.
//!
//! `EncoderDecoderModel` is the interaction-free baseline: a per-agent
//! encoder over the observed frames and a decoder emitting the same Gaussian
//! head, with no edge terms at all.

mod attention;
mod head;
mod rollout;

pub use attention::{attention_aggregate, AttentionResult};
pub use head::{gaussian_head, gaussian_values, nll, sample_position, GaussianIds, GaussianValues};
pub use rollout::{
    ed_rollout, rollout, Phase, RolloutConfig, RolloutResult, StepPrediction,
};

use crate::autodiff::Tape;
use crate::graph::Category;
use crate::nn::{Embedding, LstmCell, ParamId, ParamRegistry};
use crate::{Error, Result};
use rand::Rng;

/// Layer widths. Edge LSTMs (spatial, temporal, and the category summary's
/// temporal edge) use `edge_hidden`; node LSTMs use `node_hidden`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub embed: usize,
    pub edge_hidden: usize,
    pub node_hidden: usize,
    pub attention: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims { embed: 64, edge_hidden: 128, node_hidden: 64, attention: 64 }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.embed == 0 || self.edge_hidden == 0 || self.node_hidden == 0 || self.attention == 0
        {
            return Err(Error::Config(format!("model dimensions must be positive, got {self:?}")));
        }
        Ok(())
    }
}

/// Ablation switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelMode {
    Full,
    /// Skip the category layer; refined hidden states are the instance
    /// hidden states themselves.
    NoCategoryLayer,
    /// Keep the category layer but pool raw instance hiddens, without the
    /// softmax gate on the cell state.
    NoSelfAttention,
}

impl ModelMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ModelMode::Full),
            "no_category_layer" => Ok(ModelMode::NoCategoryLayer),
            "no_self_attention" => Ok(ModelMode::NoSelfAttention),
            other => Err(Error::Config(format!(
                "unknown model mode {other:?} (expected full, no_category_layer, or no_self_attention)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelMode::Full => "full",
            ModelMode::NoCategoryLayer => "no_category_layer",
            ModelMode::NoSelfAttention => "no_self_attention",
        }
    }
}

/// Input feature widths, fixed by the graph module: `[x, y, category]` for
/// nodes, `[dx, dy, pair code]` for edges.
pub const NODE_FEATURE_DIM: usize = 3;
pub const EDGE_FEATURE_DIM: usize = 3;
/// Gaussian head output: mean (2), log stddev (2), correlation logit (1).
pub const HEAD_DIM: usize = 5;

const SHARED_SUPER_KEY: &str = "summary.shared.edge_embed.weight";

fn per_category<T>(mut f: impl FnMut(Category) -> Result<T>) -> Result<[T; 3]> {
    let a = f(Category::ALL[0])?;
    let b = f(Category::ALL[1])?;
    let c = f(Category::ALL[2])?;
    Ok([a, b, c])
}

/// The two-layer interaction network. Fields hold parameter handles only;
/// activations live on a per-rollout tape.
#[derive(Clone, Debug)]
pub struct InteractionModel {
    pub dims: ModelDims,
    /// One summary-node parameter group for all categories instead of three.
    pub shared_summary: bool,
    pub(crate) spatial_embed: Embedding,
    pub(crate) spatial_lstm: LstmCell,
    pub(crate) temporal_embed: [Embedding; 3],
    pub(crate) temporal_lstm: [LstmCell; 3],
    pub(crate) node_embed: [Embedding; 3],
    pub(crate) merge_embed: [Embedding; 3],
    pub(crate) instance_lstm: [LstmCell; 3],
    pub(crate) attn_query: ParamId,
    pub(crate) attn_key: ParamId,
    pub(crate) summary_edge_embed: [Embedding; 3],
    pub(crate) summary_edge_lstm: [LstmCell; 3],
    pub(crate) summary_node_embed: [Embedding; 3],
    pub(crate) summary_node_lstm: [LstmCell; 3],
    pub(crate) output_merge: Embedding,
    pub(crate) head: Embedding,
}

impl InteractionModel {
    /// Registers all parameters under fixed names. Registration order is
    /// part of the format: it determines both the RNG draw sequence and the
    /// checkpoint layout.
    pub fn init<R: Rng>(
        registry: &mut ParamRegistry,
        dims: ModelDims,
        shared_summary: bool,
        rng: &mut R,
    ) -> Result<Self> {
        dims.validate()?;
        let e = dims.embed;
        let eh = dims.edge_hidden;
        let nh = dims.node_hidden;

        let spatial_embed =
            Embedding::init(registry, "spatial_edge.embed", EDGE_FEATURE_DIM, e, rng)?;
        let spatial_lstm = LstmCell::init(registry, "spatial_edge.lstm", e, eh, rng)?;

        let temporal_embed = per_category(|c| {
            Embedding::init(registry, &format!("temporal_edge.{}.embed", c.name()), EDGE_FEATURE_DIM, e, rng)
        })?;
        let temporal_lstm = per_category(|c| {
            LstmCell::init(registry, &format!("temporal_edge.{}.lstm", c.name()), e, eh, rng)
        })?;

        let node_embed = per_category(|c| {
            Embedding::init(registry, &format!("instance.{}.node_embed", c.name()), NODE_FEATURE_DIM, e, rng)
        })?;
        let merge_embed = per_category(|c| {
            Embedding::init(registry, &format!("instance.{}.merge_embed", c.name()), 2 * eh, e, rng)
        })?;
        let instance_lstm = per_category(|c| {
            LstmCell::init(registry, &format!("instance.{}.lstm", c.name()), 2 * e, nh, rng)
        })?;

        let attn_query = registry
            .register("attention.query", crate::nn::uniform_matrix(rng, dims.attention, eh, eh))?;
        let attn_key = registry
            .register("attention.key", crate::nn::uniform_matrix(rng, dims.attention, eh, eh))?;

        let summary_prefix =
            |c: Category| if shared_summary { "shared".to_string() } else { c.name().to_string() };
        let mut shared_done = false;
        let mut summary_group = |registry: &mut ParamRegistry,
                                 rng: &mut R,
                                 c: Category|
         -> Result<(Embedding, LstmCell, Embedding, LstmCell)> {
            let p = summary_prefix(c);
            if shared_summary && shared_done {
                return Ok((
                    Embedding::resolve(registry, &format!("summary.{p}.edge_embed"))?,
                    LstmCell::resolve(registry, &format!("summary.{p}.edge_lstm"))?,
                    Embedding::resolve(registry, &format!("summary.{p}.node_embed"))?,
                    LstmCell::resolve(registry, &format!("summary.{p}.node_lstm"))?,
                ));
            }
            shared_done = true;
            Ok((
                Embedding::init(registry, &format!("summary.{p}.edge_embed"), nh, e, rng)?,
                LstmCell::init(registry, &format!("summary.{p}.edge_lstm"), e, eh, rng)?,
                Embedding::init(registry, &format!("summary.{p}.node_embed"), nh, e, rng)?,
                LstmCell::init(registry, &format!("summary.{p}.node_lstm"), e + eh, nh, rng)?,
            ))
        };
        let mut edge_embeds = Vec::new();
        let mut edge_lstms = Vec::new();
        let mut node_embeds = Vec::new();
        let mut node_lstms = Vec::new();
        for c in Category::ALL {
            let (ee, el, ne, nl) = summary_group(registry, rng, c)?;
            edge_embeds.push(ee);
            edge_lstms.push(el);
            node_embeds.push(ne);
            node_lstms.push(nl);
        }
        let summary_edge_embed = [edge_embeds[0], edge_embeds[1], edge_embeds[2]];
        let summary_edge_lstm = [edge_lstms[0], edge_lstms[1], edge_lstms[2]];
        let summary_node_embed = [node_embeds[0], node_embeds[1], node_embeds[2]];
        let summary_node_lstm = [node_lstms[0], node_lstms[1], node_lstms[2]];

        let output_merge = Embedding::init(registry, "output_merge", 2 * nh, nh, rng)?;
        let head = Embedding::init(registry, "head", nh, HEAD_DIM, rng)?;

        Ok(InteractionModel {
            dims,
            shared_summary,
            spatial_embed,
            spatial_lstm,
            temporal_embed,
            temporal_lstm,
            node_embed,
            merge_embed,
            instance_lstm,
            attn_query,
            attn_key,
            summary_edge_embed,
            summary_edge_lstm,
            summary_node_embed,
            summary_node_lstm,
            output_merge,
            head,
        })
    }

    /// Re-attaches to a populated registry (e.g. a loaded checkpoint),
    /// recovering dimensions and the summary sharing layout from shapes.
    pub fn resolve(registry: &ParamRegistry) -> Result<Self> {
        let shared_summary = registry.lookup(SHARED_SUPER_KEY).is_some();
        let spatial_embed = Embedding::resolve(registry, "spatial_edge.embed")?;
        let spatial_lstm = LstmCell::resolve(registry, "spatial_edge.lstm")?;
        let temporal_embed = per_category(|c| {
            Embedding::resolve(registry, &format!("temporal_edge.{}.embed", c.name()))
        })?;
        let temporal_lstm = per_category(|c| {
            LstmCell::resolve(registry, &format!("temporal_edge.{}.lstm", c.name()))
        })?;
        let node_embed = per_category(|c| {
            Embedding::resolve(registry, &format!("instance.{}.node_embed", c.name()))
        })?;
        let merge_embed = per_category(|c| {
            Embedding::resolve(registry, &format!("instance.{}.merge_embed", c.name()))
        })?;
        let instance_lstm =
            per_category(|c| LstmCell::resolve(registry, &format!("instance.{}.lstm", c.name())))?;
        let attn_query = registry
            .lookup("attention.query")
            .ok_or_else(|| Error::Validation("missing parameter attention.query".into()))?;
        let attn_key = registry
            .lookup("attention.key")
            .ok_or_else(|| Error::Validation("missing parameter attention.key".into()))?;
        let summary = |c: Category| if shared_summary { "shared" } else { c.name() };
        let summary_edge_embed = per_category(|c| {
            Embedding::resolve(registry, &format!("summary.{}.edge_embed", summary(c)))
        })?;
        let summary_edge_lstm = per_category(|c| {
            LstmCell::resolve(registry, &format!("summary.{}.edge_lstm", summary(c)))
        })?;
        let summary_node_embed = per_category(|c| {
            Embedding::resolve(registry, &format!("summary.{}.node_embed", summary(c)))
        })?;
        let summary_node_lstm = per_category(|c| {
            LstmCell::resolve(registry, &format!("summary.{}.node_lstm", summary(c)))
        })?;
        let output_merge = Embedding::resolve(registry, "output_merge")?;
        let head = Embedding::resolve(registry, "head")?;

        let dims = ModelDims {
            embed: spatial_embed.out_dim,
            edge_hidden: spatial_lstm.hidden_size,
            node_hidden: instance_lstm[0].hidden_size,
            attention: registry.value(attn_query).rows(),
        };
        dims.validate()?;
        if head.out_dim != HEAD_DIM || head.in_dim != dims.node_hidden {
            return Err(Error::Validation(format!(
                "head maps {} -> {}, want {} -> {}",
                head.in_dim, head.out_dim, dims.node_hidden, HEAD_DIM
            )));
        }
        Ok(InteractionModel {
            dims,
            shared_summary,
            spatial_embed,
            spatial_lstm,
            temporal_embed,
            temporal_lstm,
            node_embed,
            merge_embed,
            instance_lstm,
            attn_query,
            attn_key,
            summary_edge_embed,
            summary_edge_lstm,
            summary_node_embed,
            summary_node_lstm,
            output_merge,
            head,
        })
    }

    /// Score scaling for neighbor attention: `1/sqrt(edge_hidden)`.
    pub fn attention_scale(&self) -> f64 {
        1.0 / (self.dims.edge_hidden as f64).sqrt()
    }
}

/// Per-agent sequence baseline: encoder LSTM over observed frames, decoder
/// LSTM over the prediction window, shared across categories.
#[derive(Clone, Debug)]
pub struct EncoderDecoderModel {
    pub embed_dim: usize,
    pub hidden: usize,
    pub(crate) embed: Embedding,
    pub(crate) encoder: LstmCell,
    pub(crate) decoder: LstmCell,
    pub(crate) head: Embedding,
}

impl EncoderDecoderModel {
    pub fn init<R: Rng>(
        registry: &mut ParamRegistry,
        embed_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if embed_dim == 0 || hidden == 0 {
            return Err(Error::Config(format!(
                "encoder-decoder dimensions must be positive, got embed {embed_dim}, hidden {hidden}"
            )));
        }
        let embed = Embedding::init(registry, "seq.embed", NODE_FEATURE_DIM, embed_dim, rng)?;
        let encoder = LstmCell::init(registry, "seq.encoder", embed_dim, hidden, rng)?;
        let decoder = LstmCell::init(registry, "seq.decoder", embed_dim, hidden, rng)?;
        let head = Embedding::init(registry, "seq.head", hidden, HEAD_DIM, rng)?;
        Ok(EncoderDecoderModel { embed_dim, hidden, embed, encoder, decoder, head })
    }

    pub fn resolve(registry: &ParamRegistry) -> Result<Self> {
        let embed = Embedding::resolve(registry, "seq.embed")?;
        let encoder = LstmCell::resolve(registry, "seq.encoder")?;
        let decoder = LstmCell::resolve(registry, "seq.decoder")?;
        let head = Embedding::resolve(registry, "seq.head")?;
        Ok(EncoderDecoderModel {
            embed_dim: embed.out_dim,
            hidden: encoder.hidden_size,
            embed,
            encoder,
            decoder,
            head,
        })
    }
}

/// Zero vector leaf, shared by rollouts for default states and features.
pub(crate) fn zero_leaf(tape: &mut Tape, len: usize) -> crate::autodiff::ValueId {
    tape.leaf(crate::autodiff::Tensor::zeros(&[len]))
}
