//! Scene graph over agents and frames.
//!
//! Each frame contributes instance nodes for the agents present. Spatial
//! edges connect pairs within a radius (both directions), temporal edges
//! connect an agent to itself across consecutive frames, and each category
//! present in a frame gets a summary node whose membership is the set of
//! its agents. Connectivity is recomputed every frame, so agents may enter
//! and leave freely.

use crate::{Error, Result};
use std::collections::BTreeMap;

/// Agent class. Codes 1 to 3 match the on-disk trajectory format.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Pedestrian,
    Bicycle,
    Vehicle,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Pedestrian, Category::Bicycle, Category::Vehicle];

    pub fn code(self) -> u8 {
        match self {
            Category::Pedestrian => 1,
            Category::Bicycle => 2,
            Category::Vehicle => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Category::Pedestrian),
            2 => Ok(Category::Bicycle),
            3 => Ok(Category::Vehicle),
            other => Err(Error::Validation(format!(
                "category code {other} is not one of 1 (pedestrian), 2 (bicycle), 3 (vehicle)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Pedestrian => "pedestrian",
            Category::Bicycle => "bicycle",
            Category::Vehicle => "vehicle",
        }
    }

    /// Zero-based position in [`Category::ALL`].
    pub fn index(self) -> usize {
        (self.code() - 1) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentObservation {
    pub agent_id: u64,
    pub category: Category,
    pub x: f64,
    pub y: f64,
}

/// All agents observed in one frame, sorted by id.
#[derive(Clone, Debug)]
pub struct FrameObservation {
    frame_index: usize,
    agents: Vec<AgentObservation>,
}

impl FrameObservation {
    /// Sorts by agent id and rejects duplicate ids or non-finite positions.
    pub fn new(frame_index: usize, mut agents: Vec<AgentObservation>) -> Result<Self> {
        agents.sort_by_key(|a| a.agent_id);
        for pair in agents.windows(2) {
            if pair[0].agent_id == pair[1].agent_id {
                return Err(Error::Validation(format!(
                    "frame {frame_index}: agent {} appears twice",
                    pair[0].agent_id
                )));
            }
        }
        for a in &agents {
            if !a.x.is_finite() || !a.y.is_finite() {
                return Err(Error::Validation(format!(
                    "frame {frame_index}: agent {} has non-finite position",
                    a.agent_id
                )));
            }
        }
        Ok(FrameObservation { frame_index, agents })
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn agents(&self) -> &[AgentObservation] {
        &self.agents
    }

    pub fn agent(&self, agent_id: u64) -> Option<&AgentObservation> {
        self.agents
            .binary_search_by_key(&agent_id, |a| a.agent_id)
            .ok()
            .map(|i| &self.agents[i])
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }
}

/// Connectivity of one frame relative to its predecessor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameLinks {
    /// Directed pairs `(from, to)` in lexicographic order. An undirected
    /// neighborhood always contributes both directions.
    pub spatial_edges: Vec<(u64, u64)>,
    /// Agents also present in the previous frame, ascending.
    pub temporal_agents: Vec<u64>,
    /// Category to member ids (ascending). Only non-empty categories appear.
    pub memberships: BTreeMap<Category, Vec<u64>>,
    /// Categories whose summary node also existed in the previous frame.
    pub super_temporal: Vec<Category>,
}

/// Connectivity for every frame of a window, aligned by index.
#[derive(Clone, Debug)]
pub struct SceneGraph {
    pub frames: Vec<FrameLinks>,
}

pub(crate) fn validate_radius(radius: f64) -> Result<()> {
    // Infinity is the "no pruning" setting, NaN or negatives are mistakes.
    if radius.is_nan() || radius < 0.0 {
        return Err(Error::Usage(format!("neighborhood radius {radius} must be >= 0")));
    }
    Ok(())
}

/// Links for `cur` given the previous frame, if any.
pub fn frame_links(prev: Option<&FrameObservation>, cur: &FrameObservation, radius: f64) -> FrameLinks {
    let agents = cur.agents();
    let mut spatial_edges = Vec::new();
    for a in agents {
        for b in agents {
            if a.agent_id == b.agent_id {
                continue;
            }
            let dist = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
            if dist <= radius {
                spatial_edges.push((a.agent_id, b.agent_id));
            }
        }
    }

    let temporal_agents = match prev {
        Some(p) => agents
            .iter()
            .filter(|a| p.agent(a.agent_id).is_some())
            .map(|a| a.agent_id)
            .collect(),
        None => Vec::new(),
    };

    let mut memberships: BTreeMap<Category, Vec<u64>> = BTreeMap::new();
    for a in agents {
        memberships.entry(a.category).or_default().push(a.agent_id);
    }

    let super_temporal = match prev {
        Some(p) => {
            let prev_cats: Vec<Category> = {
                let mut cats: Vec<Category> = p.agents().iter().map(|a| a.category).collect();
                cats.sort();
                cats.dedup();
                cats
            };
            memberships
                .keys()
                .filter(|c| prev_cats.contains(c))
                .cloned()
                .collect()
        }
        None => Vec::new(),
    };

    FrameLinks { spatial_edges, temporal_agents, memberships, super_temporal }
}

/// Builds connectivity for a frame sequence. Frame indices must strictly
/// increase; consecutive entries are treated as temporally adjacent.
pub fn build_graph(frames: &[FrameObservation], radius: f64) -> Result<SceneGraph> {
    validate_radius(radius)?;
    for pair in frames.windows(2) {
        if pair[1].frame_index() <= pair[0].frame_index() {
            return Err(Error::Validation(format!(
                "frame indices must increase: {} then {}",
                pair[0].frame_index(),
                pair[1].frame_index()
            )));
        }
    }
    let mut out = Vec::with_capacity(frames.len());
    for (i, cur) in frames.iter().enumerate() {
        let prev = if i > 0 { Some(&frames[i - 1]) } else { None };
        out.push(frame_links(prev, cur, radius));
    }
    Ok(SceneGraph { frames: out })
}

/// Pair code for the ordered category pair, mapped into [0, 1].
pub fn category_pair_code(from: Category, to: Category) -> f64 {
    ((from.code() - 1) as f64 * 3.0 + (to.code() - 1) as f64) / 8.0
}

/// Raw input feature of an instance node: position plus category code.
pub fn node_feature(a: &AgentObservation) -> [f64; 3] {
    [a.x, a.y, a.category.code() as f64]
}

/// Feature of the directed spatial edge `from -> to`: displacement to the
/// neighbor plus the ordered pair code.
pub fn spatial_edge_feature(from: &AgentObservation, to: &AgentObservation) -> [f64; 3] {
    [to.x - from.x, to.y - from.y, category_pair_code(from.category, to.category)]
}

/// Feature of an agent's temporal edge between consecutive observations.
pub fn temporal_edge_feature(prev: &AgentObservation, cur: &AgentObservation) -> Result<[f64; 3]> {
    if prev.agent_id != cur.agent_id {
        return Err(Error::Usage(format!(
            "temporal edge needs one agent, got {} and {}",
            prev.agent_id, cur.agent_id
        )));
    }
    Ok([cur.x - prev.x, cur.y - prev.y, category_pair_code(cur.category, cur.category)])
}
