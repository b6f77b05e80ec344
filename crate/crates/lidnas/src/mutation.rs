//! Child generation: swapping the layer contents of two blocks, replacing a
//! block's layer with a fresh draw from the option lists, and rebalancing
//! output channels so every block stays inside the per-block parameter
//! budget (growing one layer can shrink another's channels).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::genome::{
    block_params, chain_predecessor, ArchitectureGenome, LayerSpec, SearchSpaceConfig,
};
use crate::{Error, Result};

/// One mutation applied to a parent genome.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MutationOp {
    /// Exchange the layer specs of two slots (repeat counts stay put).
    Swap { slot_a: usize, slot_b: usize },
    /// Install a new layer and repeat draw at one slot.
    Replace {
        slot: usize,
        layer: LayerSpec,
        repeats: u8,
    },
}

/// Audit record tying a child to its parent and the op that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MutationRecord {
    pub parent_hash: String,
    pub child_hash: String,
    pub op: MutationOp,
    /// Whether the budget rebalance changed any channels.
    pub rebalanced: bool,
}

/// A proposed child with its provenance.
#[derive(Debug, Clone)]
pub struct ChildProposal {
    pub genome: ArchitectureGenome,
    pub record: MutationRecord,
}

/// Output of [`Mutator::propose_children`].
#[derive(Debug, Clone)]
pub struct ChildProposals {
    pub children: Vec<ChildProposal>,
    /// Set when the space could not yield the requested number of distinct
    /// children within the attempt cap.
    pub exhausted: bool,
}

/// Attempt cap for child proposal: `PROPOSAL_ATTEMPTS_PER_CHILD * n` draws
/// before giving up and returning fewer children.
pub const PROPOSAL_ATTEMPTS_PER_CHILD: usize = 64;

/// Mutation engine bound to one search space.
pub struct Mutator<'a> {
    config: &'a SearchSpaceConfig,
}

impl<'a> Mutator<'a> {
    pub fn new(config: &'a SearchSpaceConfig) -> Self {
        Mutator { config }
    }

    /// Exchanges the layer specs of `slot_a` and `slot_b`, re-chains the
    /// channel wiring, and checks the result.
    pub fn apply_swap(
        &self,
        genome: &ArchitectureGenome,
        slot_a: usize,
        slot_b: usize,
    ) -> Result<ArchitectureGenome> {
        let blocks = genome.blocks.len();
        if slot_a >= blocks || slot_b >= blocks {
            return Err(Error::Mutation(format!(
                "swap slots ({slot_a}, {slot_b}) out of range for {blocks} blocks"
            )));
        }
        let mut child = genome.clone();
        let layer_a = child.blocks[slot_a].layer;
        child.blocks[slot_a].layer = child.blocks[slot_b].layer;
        child.blocks[slot_b].layer = layer_a;
        child.rechain();
        let report = child.validate();
        if !report.is_ok() {
            return Err(Error::Mutation(format!(
                "swap ({slot_a}, {slot_b}) incompatible: {}",
                report.violations[0]
            )));
        }
        Ok(child)
    }

    /// Replaces `slot`'s layer and repeat count with a draw that must come
    /// from the configured option lists.
    pub fn apply_replace(
        &self,
        genome: &ArchitectureGenome,
        slot: usize,
        layer: LayerSpec,
        repeats: u8,
    ) -> Result<ArchitectureGenome> {
        if slot >= genome.blocks.len() {
            return Err(Error::Mutation(format!(
                "replace slot {slot} out of range for {} blocks",
                genome.blocks.len()
            )));
        }
        if !self.config.contains_layer(&layer, repeats) {
            return Err(Error::Mutation(format!(
                "replacement layer at slot {slot} is outside the option lists"
            )));
        }
        let mut child = genome.clone();
        child.blocks[slot].layer = layer;
        child.blocks[slot].repeats = repeats;
        child.rechain();
        let report = child.validate();
        if !report.is_ok() {
            return Err(Error::Mutation(format!(
                "replace at slot {slot} incompatible: {}",
                report.violations[0]
            )));
        }
        Ok(child)
    }

    /// Shrinks output channels until every block fits the per-block budget.
    /// Channels only decrease; the block with the largest overshoot is fixed
    /// first, falling back to its chain predecessor when it is already at
    /// the smallest option. Returns the rebalanced genome and whether
    /// anything changed.
    pub fn rebalance(&self, genome: &ArchitectureGenome) -> Result<(ArchitectureGenome, bool)> {
        let budget = self.config.block_budget();
        let min_option = *self
            .config
            .channel_options
            .iter()
            .min()
            .expect("non-empty channel options");
        let mut sorted_desc = self.config.channel_options.clone();
        sorted_desc.sort_unstable_by(|a, b| b.cmp(a));

        let mut child = genome.clone();
        child.rechain();
        let mut changed = false;
        loop {
            let victim = child
                .blocks
                .iter()
                .enumerate()
                .filter_map(|(slot, block)| {
                    let params = block_params(block, child.expansion);
                    (params > budget).then(|| (slot, params - budget))
                })
                .max_by_key(|&(slot, overshoot)| (overshoot, std::cmp::Reverse(slot)));
            let Some((slot, _)) = victim else {
                return Ok((child, changed));
            };
            let current = child.blocks[slot].layer.out_channels;
            let fitting = sorted_desc.iter().copied().find(|&option| {
                if option >= current {
                    return false;
                }
                let mut trial = child.blocks[slot];
                trial.layer.out_channels = option;
                block_params(&trial, child.expansion) <= budget
            });
            if let Some(option) = fitting {
                child.blocks[slot].layer.out_channels = option;
            } else if current > min_option {
                child.blocks[slot].layer.out_channels = min_option;
            } else {
                // victim is minimal; the only remaining lever is its input
                let pred = chain_predecessor(child.num_scales, slot);
                let Some(pred) = pred else {
                    return Err(Error::Unsatisfiable(format!(
                        "block {slot} exceeds budget {budget} even at minimum channels"
                    )));
                };
                let pred_out = child.blocks[pred].layer.out_channels;
                let next_lower = sorted_desc.iter().copied().find(|&o| o < pred_out);
                let Some(option) = next_lower else {
                    return Err(Error::Unsatisfiable(format!(
                        "block {slot} exceeds budget {budget} even at minimum channels"
                    )));
                };
                child.blocks[pred].layer.out_channels = option;
            }
            changed = true;
            child.rechain();
        }
    }

    /// Proposes up to `n` distinct valid children, each one mutation (plus
    /// rebalance) away from the parent. Deterministic in `(genome, seed, n)`.
    pub fn propose_children(
        &self,
        genome: &ArchitectureGenome,
        seed: u64,
        n: usize,
    ) -> Result<ChildProposals> {
        if n < 1 {
            return Err(Error::InvalidConfig("children count must be >= 1".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let parent_hash = genome.canonical_hash();
        let mut seen = std::collections::HashSet::new();
        seen.insert(parent_hash.clone());
        let slots = genome.blocks.len();
        let m = self.config.per_block_size();
        let mut children = Vec::with_capacity(n);
        let max_attempts = PROPOSAL_ATTEMPTS_PER_CHILD * n;
        for _ in 0..max_attempts {
            if children.len() == n {
                break;
            }
            let op = if rng.random_bool(0.5) {
                MutationOp::Swap {
                    slot_a: rng.random_range(0..slots),
                    slot_b: rng.random_range(0..slots),
                }
            } else {
                let (layer, repeats) = self.config.decode_block_option(rng.random_range(0..m));
                MutationOp::Replace {
                    slot: rng.random_range(0..slots),
                    layer,
                    repeats,
                }
            };
            let mutated = match &op {
                MutationOp::Swap { slot_a, slot_b } => self.apply_swap(genome, *slot_a, *slot_b),
                MutationOp::Replace {
                    slot,
                    layer,
                    repeats,
                } => self.apply_replace(genome, *slot, *layer, *repeats),
            };
            let Ok(mutated) = mutated else {
                continue;
            };
            let Ok((child, rebalanced)) = self.rebalance(&mutated) else {
                continue;
            };
            let child_hash = child.canonical_hash();
            if !seen.insert(child_hash.clone()) {
                continue;
            }
            children.push(ChildProposal {
                genome: child,
                record: MutationRecord {
                    parent_hash: parent_hash.clone(),
                    child_hash,
                    op,
                    rebalanced,
                },
            });
        }
        let exhausted = children.len() < n;
        Ok(ChildProposals {
            children,
            exhausted,
        })
    }
}
