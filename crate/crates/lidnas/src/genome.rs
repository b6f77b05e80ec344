//! Search-space encoding: the pyramid backbone template, per-block layer
//! options, genome validity, exact parameter counting, and space cardinality.
//!
//! A genome fixes one layer spec and repeat count for every slot of the
//! backbone. The backbone has five blocks at scale 1 (two encoder, two
//! decoder, one refine) and seven at every coarser scale (adds a downsample
//! and an upsample block), so with `S` scales there are `5 + (S-1)*7` slots
//! and the space holds `M^(5 + (S-1)*7)` genomes where `M` is the per-block
//! option count.

use std::fmt;

use num_bigint::BigUint;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Convolution operation choices for a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvOp {
    Vanilla2d,
    Depthwise,
    InvertedBottleneck,
}

/// Skip-connection choices for a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipOp {
    Residual,
    None,
}

/// Block roles in the backbone template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Encoder,
    Decoder,
    Refine,
    Downsample,
    Upsample,
}

/// One searchable layer: all repeats inside a block share this spec.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub conv_op: ConvOp,
    /// Kernel size, 3 or 5.
    pub ksize: u8,
    /// Squeeze-and-excitation ratio, 0 (absent) or 0.25.
    pub se_ratio: f64,
    pub skip: SkipOp,
    pub out_channels: usize,
}

/// One filled backbone slot: a layer spec replicated `repeats` times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    /// Resolution scale, 1-based; scale 1 is full resolution.
    pub scale: u8,
    /// Position of the block within its scale (1..=5 at scale 1, 1..=7 above).
    pub block_index: u8,
    /// Number of identical layers stacked in this block.
    pub repeats: u8,
    /// Input channel count under the backbone wiring (derived, stored for
    /// self-contained serialization; checked by [`ArchitectureGenome::validate`]).
    pub in_channels: usize,
    pub layer: LayerSpec,
}

/// Network input resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

/// Complete encoding of one candidate network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureGenome {
    pub schema_version: u32,
    pub num_scales: u8,
    pub input_resolution: Resolution,
    /// Inverted-bottleneck expansion factor (a space constant, not searched).
    pub expansion: u32,
    /// Blocks in template order (scale-major; see [`backbone_template`]).
    pub blocks: Vec<BlockSpec>,
}

/// Current genome serialization schema.
pub const SCHEMA_VERSION: u32 = 1;

/// One slot of the backbone template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotTemplate {
    pub kind: BlockKind,
    pub scale: u8,
    pub block_index: u8,
}

/// A single validity failure, naming the offending slot when one exists.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub slot: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slot {
            Some(slot) => write!(f, "slot {}: {}", slot, self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// Outcome of [`ArchitectureGenome::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityReport {
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidGenome(self.violations))
        }
    }
}

/// Returns the slot layout for a backbone with `num_scales` scales.
///
/// Slots are scale-major; within a scale the order is encoder 1, encoder 2,
/// decoder 1, decoder 2, refine, then downsample and upsample for scales
/// above 1. The length is always `5 + (num_scales - 1) * 7`.
pub fn backbone_template(num_scales: u8) -> Result<Vec<SlotTemplate>> {
    if num_scales < 1 {
        return Err(Error::InvalidConfig(
            "num_scales must be at least 1".into(),
        ));
    }
    let mut slots = Vec::with_capacity(5 + (num_scales as usize - 1) * 7);
    for scale in 1..=num_scales {
        let kinds: &[BlockKind] = if scale == 1 {
            &SCALE1_KINDS
        } else {
            &SCALE_KINDS
        };
        for (j, &kind) in kinds.iter().enumerate() {
            slots.push(SlotTemplate {
                kind,
                scale,
                block_index: j as u8 + 1,
            });
        }
    }
    Ok(slots)
}

const SCALE1_KINDS: [BlockKind; 5] = [
    BlockKind::Encoder,
    BlockKind::Encoder,
    BlockKind::Decoder,
    BlockKind::Decoder,
    BlockKind::Refine,
];
const SCALE_KINDS: [BlockKind; 7] = [
    BlockKind::Encoder,
    BlockKind::Encoder,
    BlockKind::Decoder,
    BlockKind::Decoder,
    BlockKind::Refine,
    BlockKind::Downsample,
    BlockKind::Upsample,
];

/// Slot index of `(scale, block_index)` in template order.
fn slot_at(scale: u8, block_index: u8) -> usize {
    debug_assert!(scale >= 1);
    if scale == 1 {
        block_index as usize - 1
    } else {
        5 + (scale as usize - 2) * 7 + block_index as usize - 1
    }
}

/// Dataflow predecessor of each slot under the backbone wiring, or `None`
/// for the first encoder (which reads the network input).
///
/// The wiring is a U-shaped traversal: encoders descend through downsample
/// blocks to the coarsest scale, decoders and refine blocks ascend back
/// through upsample blocks. The first decoder of scale `i < S` additionally
/// receives the upsampled scale `i+1` output, channel-aligned and added
/// element-wise (see [`fusion_source`]).
pub fn chain_predecessor(num_scales: u8, slot: usize) -> Option<usize> {
    let template = backbone_template(num_scales).expect("scales >= 1");
    let t = template[slot];
    match (t.kind, t.block_index) {
        (BlockKind::Encoder, 1) => {
            if t.scale == 1 {
                None
            } else {
                Some(slot_at(t.scale, 6)) // scale entry: the downsample block
            }
        }
        (BlockKind::Encoder, _) => Some(slot_at(t.scale, 1)),
        (BlockKind::Decoder, FIRST_DECODER_INDEX) => {
            Some(slot_at(t.scale, 2)) // same-scale second encoder
        }
        (BlockKind::Decoder, idx) => Some(slot_at(t.scale, idx - 1)),
        (BlockKind::Refine, idx) => Some(slot_at(t.scale, idx - 1)),
        (BlockKind::Downsample, _) => Some(slot_at(t.scale - 1, 2)),
        (BlockKind::Upsample, _) => Some(slot_at(t.scale, 5)), // same-scale refine
    }
}

/// Extra (fused) input of a slot: the upsample block of the next coarser
/// scale feeding the first decoder of scale `i < S`.
pub fn fusion_source(num_scales: u8, slot: usize) -> Option<usize> {
    let template = backbone_template(num_scales).expect("scales >= 1");
    let t = template[slot];
    if t.kind == BlockKind::Decoder
        && t.block_index == FIRST_DECODER_INDEX
        && t.scale < num_scales
    {
        Some(slot_at(t.scale + 1, 7))
    } else {
        None
    }
}

const FIRST_DECODER_INDEX: u8 = 3;

/// Slot indices in dataflow (execution) order.
pub fn execution_order(num_scales: u8) -> Vec<usize> {
    let mut order = Vec::with_capacity(5 + (num_scales as usize - 1) * 7);
    order.push(slot_at(1, 1));
    order.push(slot_at(1, 2));
    for scale in 2..=num_scales {
        order.push(slot_at(scale, 6));
        order.push(slot_at(scale, 1));
        order.push(slot_at(scale, 2));
    }
    for scale in (1..=num_scales).rev() {
        order.push(slot_at(scale, 3));
        order.push(slot_at(scale, 4));
        order.push(slot_at(scale, 5));
        if scale >= 2 {
            order.push(slot_at(scale, 7));
        }
    }
    order
}

/// Option lists defining one search space plus the fixed constants the
/// genomes inherit (resolution, expansion factor, per-block budget).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSpaceConfig {
    pub num_scales: u8,
    pub conv_options: Vec<ConvOp>,
    pub ksize_options: Vec<u8>,
    pub se_options: Vec<f64>,
    pub skip_options: Vec<SkipOp>,
    pub channel_options: Vec<usize>,
    pub repeat_options: Vec<u8>,
    pub input_resolution: Resolution,
    pub expansion: u32,
    /// Per-block parameter budget enforced by mutation rebalancing.
    /// `None` derives 1.5x the median block size of this space.
    pub block_budget: Option<u64>,
}

impl Default for SearchSpaceConfig {
    fn default() -> Self {
        SearchSpaceConfig {
            num_scales: 2,
            conv_options: vec![
                ConvOp::Vanilla2d,
                ConvOp::Depthwise,
                ConvOp::InvertedBottleneck,
            ],
            ksize_options: vec![3, 5],
            se_options: vec![0.0, 0.25],
            skip_options: vec![SkipOp::Residual, SkipOp::None],
            channel_options: vec![8, 16, 24, 32],
            repeat_options: vec![1, 2, 3],
            input_resolution: Resolution {
                height: 32,
                width: 32,
                channels: 3,
            },
            expansion: 3,
            block_budget: None,
        }
    }
}

impl SearchSpaceConfig {
    /// Checks option lists and geometry; every other genome operation
    /// assumes a config that passed here.
    pub fn check(&self) -> Result<()> {
        if self.num_scales < 1 {
            return Err(Error::InvalidConfig("num_scales must be >= 1".into()));
        }
        let lists: [(&str, usize); 6] = [
            ("conv_options", self.conv_options.len()),
            ("ksize_options", self.ksize_options.len()),
            ("se_options", self.se_options.len()),
            ("skip_options", self.skip_options.len()),
            ("channel_options", self.channel_options.len()),
            ("repeat_options", self.repeat_options.len()),
        ];
        for (name, len) in lists {
            if len == 0 {
                return Err(Error::InvalidConfig(format!("{name} is empty")));
            }
        }
        if self.ksize_options.iter().any(|&k| k != 3 && k != 5) {
            return Err(Error::InvalidConfig("ksize_options must be 3 or 5".into()));
        }
        if self
            .se_options
            .iter()
            .any(|&r| r != 0.0 && (r - 0.25).abs() > f64::EPSILON)
        {
            return Err(Error::InvalidConfig("se_options must be 0 or 0.25".into()));
        }
        if self.channel_options.contains(&0) {
            return Err(Error::InvalidConfig("channel_options must be positive".into()));
        }
        if self.repeat_options.contains(&0) {
            return Err(Error::InvalidConfig("repeat_options must be positive".into()));
        }
        if self.expansion < 1 {
            return Err(Error::InvalidConfig("expansion must be >= 1".into()));
        }
        let div = 1usize << (self.num_scales as usize - 1);
        let res = self.input_resolution;
        if res.height == 0 || res.width == 0 || res.channels == 0 {
            return Err(Error::InvalidConfig("input_resolution must be positive".into()));
        }
        if !res.height.is_multiple_of(div) || !res.width.is_multiple_of(div) {
            return Err(Error::InvalidConfig(format!(
                "input resolution {}x{} must be divisible by 2^(num_scales-1) = {div}",
                res.height, res.width
            )));
        }
        Ok(())
    }

    /// Per-block sub-space size `M`: the product of the option-list sizes.
    pub fn per_block_size(&self) -> u64 {
        (self.conv_options.len()
            * self.ksize_options.len()
            * self.se_options.len()
            * self.skip_options.len()
            * self.channel_options.len()
            * self.repeat_options.len()) as u64
    }

    /// Total space cardinality `M^(5 + (S-1)*7)`, exact.
    pub fn space_size(&self) -> BigUint {
        let slots = 5 + (self.num_scales as u32 - 1) * 7;
        BigUint::from(self.per_block_size()).pow(slots)
    }

    /// Effective per-block parameter budget.
    pub fn block_budget(&self) -> u64 {
        self.block_budget.unwrap_or_else(|| self.derived_block_budget())
    }

    /// Default budget: 1.5x the median parameter count over every
    /// (input-channel option, layer option, repeat) block combination.
    pub fn derived_block_budget(&self) -> u64 {
        let mut sizes = Vec::new();
        self.for_each_layer_option(|layer, repeats| {
            for &cin in &self.channel_options {
                let block = BlockSpec {
                    kind: BlockKind::Refine,
                    scale: 1,
                    block_index: 5,
                    repeats,
                    in_channels: cin,
                    layer,
                };
                sizes.push(block_params(&block, self.expansion));
            }
        });
        sizes.sort_unstable();
        let median = sizes[sizes.len() / 2];
        (median as f64 * 1.5).round() as u64
    }

    /// Visits every (layer, repeats) option combination in decode order.
    fn for_each_layer_option(&self, mut f: impl FnMut(LayerSpec, u8)) {
        for &conv_op in &self.conv_options {
            for &ksize in &self.ksize_options {
                for &se_ratio in &self.se_options {
                    for &skip in &self.skip_options {
                        for &out_channels in &self.channel_options {
                            for &repeats in &self.repeat_options {
                                f(
                                    LayerSpec {
                                        conv_op,
                                        ksize,
                                        se_ratio,
                                        skip,
                                        out_channels,
                                    },
                                    repeats,
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    /// Decodes a per-block option index (`0..M`) into a layer and repeat
    /// count. The axes nest as conv, ksize, se, skip, channels, repeats with
    /// repeats fastest.
    pub fn decode_block_option(&self, mut index: u64) -> (LayerSpec, u8) {
        debug_assert!(index < self.per_block_size());
        let pick = |index: &mut u64, len: usize| -> usize {
            let i = (*index % len as u64) as usize;
            *index /= len as u64;
            i
        };
        let repeats = self.repeat_options[pick(&mut index, self.repeat_options.len())];
        let out_channels = self.channel_options[pick(&mut index, self.channel_options.len())];
        let skip = self.skip_options[pick(&mut index, self.skip_options.len())];
        let se_ratio = self.se_options[pick(&mut index, self.se_options.len())];
        let ksize = self.ksize_options[pick(&mut index, self.ksize_options.len())];
        let conv_op = self.conv_options[pick(&mut index, self.conv_options.len())];
        (
            LayerSpec {
                conv_op,
                ksize,
                se_ratio,
                skip,
                out_channels,
            },
            repeats,
        )
    }

    /// Draws a genome uniformly: every slot samples each option list
    /// independently. Pure function of `(self, seed)`.
    pub fn random_genome(&self, seed: u64) -> ArchitectureGenome {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let template = backbone_template(self.num_scales).expect("checked config");
        let blocks = template
            .iter()
            .map(|slot| {
                let layer = LayerSpec {
                    conv_op: self.conv_options[rng.random_range(0..self.conv_options.len())],
                    ksize: self.ksize_options[rng.random_range(0..self.ksize_options.len())],
                    se_ratio: self.se_options[rng.random_range(0..self.se_options.len())],
                    skip: self.skip_options[rng.random_range(0..self.skip_options.len())],
                    out_channels: self.channel_options
                        [rng.random_range(0..self.channel_options.len())],
                };
                let repeats = self.repeat_options[rng.random_range(0..self.repeat_options.len())];
                BlockSpec {
                    kind: slot.kind,
                    scale: slot.scale,
                    block_index: slot.block_index,
                    repeats,
                    in_channels: 0, // rechained below
                    layer,
                }
            })
            .collect();
        let mut genome = ArchitectureGenome {
            schema_version: SCHEMA_VERSION,
            num_scales: self.num_scales,
            input_resolution: self.input_resolution,
            expansion: self.expansion,
            blocks,
        };
        genome.rechain();
        genome
    }

    /// Streams every genome of the space in a fixed order. Only call on
    /// spaces whose size fits in memory-reasonable iteration counts.
    pub fn for_each_genome(&self, mut f: impl FnMut(&ArchitectureGenome)) {
        let template = backbone_template(self.num_scales).expect("checked config");
        let slots = template.len();
        let m = self.per_block_size();
        let mut odometer = vec![0u64; slots];
        let mut genome = self.genome_from_option_indices(&odometer);
        loop {
            f(&genome);
            // advance the mixed-radix odometer, last slot fastest
            let mut pos = slots;
            loop {
                if pos == 0 {
                    return;
                }
                pos -= 1;
                odometer[pos] += 1;
                if odometer[pos] < m {
                    break;
                }
                odometer[pos] = 0;
            }
            genome = self.genome_from_option_indices(&odometer);
        }
    }

    /// Builds the genome whose blocks take the given per-slot option indices.
    pub fn genome_from_option_indices(&self, indices: &[u64]) -> ArchitectureGenome {
        let template = backbone_template(self.num_scales).expect("checked config");
        assert_eq!(indices.len(), template.len());
        let blocks = template
            .iter()
            .zip(indices)
            .map(|(slot, &idx)| {
                let (layer, repeats) = self.decode_block_option(idx);
                BlockSpec {
                    kind: slot.kind,
                    scale: slot.scale,
                    block_index: slot.block_index,
                    repeats,
                    in_channels: 0,
                    layer,
                }
            })
            .collect();
        let mut genome = ArchitectureGenome {
            schema_version: SCHEMA_VERSION,
            num_scales: self.num_scales,
            input_resolution: self.input_resolution,
            expansion: self.expansion,
            blocks,
        };
        genome.rechain();
        genome
    }

    /// True when every block's options come from this space's lists.
    pub fn contains(&self, genome: &ArchitectureGenome) -> bool {
        genome.num_scales == self.num_scales
            && genome.input_resolution == self.input_resolution
            && genome.expansion == self.expansion
            && genome.blocks.iter().all(|b| self.contains_layer(&b.layer, b.repeats))
    }

    /// True when the layer spec and repeat count come from this space's lists.
    pub fn contains_layer(&self, layer: &LayerSpec, repeats: u8) -> bool {
        self.conv_options.contains(&layer.conv_op)
            && self.ksize_options.contains(&layer.ksize)
            && self.se_options.contains(&layer.se_ratio)
            && self.skip_options.contains(&layer.skip)
            && self.channel_options.contains(&layer.out_channels)
            && self.repeat_options.contains(&repeats)
    }
}

impl ArchitectureGenome {
    /// Recomputes every block's `in_channels` from the backbone wiring.
    pub fn rechain(&mut self) {
        for slot in execution_order(self.num_scales) {
            let cin = match chain_predecessor(self.num_scales, slot) {
                None => self.input_resolution.channels,
                Some(pred) => self.blocks[pred].layer.out_channels,
            };
            self.blocks[slot].in_channels = cin;
        }
    }

    /// Checks every structural invariant; reports all violations rather than
    /// stopping at the first.
    pub fn validate(&self) -> ValidityReport {
        let mut violations = Vec::new();
        let mut push = |slot: Option<usize>, message: String| {
            violations.push(Violation { slot, message });
        };

        if self.num_scales < 1 {
            push(None, "num_scales must be >= 1".into());
            return ValidityReport { violations };
        }
        let template = backbone_template(self.num_scales).expect("scales >= 1");
        if self.blocks.len() != template.len() {
            push(
                None,
                format!(
                    "expected {} blocks for {} scales, found {}",
                    template.len(),
                    self.num_scales,
                    self.blocks.len()
                ),
            );
        }
        let mut layout_ok = self.blocks.len() == template.len();
        for (i, (block, slot)) in self.blocks.iter().zip(&template).enumerate() {
            if block.kind != slot.kind
                || block.scale != slot.scale
                || block.block_index != slot.block_index
            {
                push(
                    Some(i),
                    format!(
                        "block ({:?}, scale {}, index {}) does not match template slot \
                         ({:?}, scale {}, index {})",
                        block.kind,
                        block.scale,
                        block.block_index,
                        slot.kind,
                        slot.scale,
                        slot.block_index
                    ),
                );
                layout_ok = false;
            }
        }
        for (i, block) in self.blocks.iter().enumerate() {
            if block.repeats < 1 {
                push(Some(i), "repeats must be >= 1".into());
            }
            if block.layer.ksize != 3 && block.layer.ksize != 5 {
                push(Some(i), format!("ksize {} not in {{3, 5}}", block.layer.ksize));
            }
            if block.layer.se_ratio != 0.0 && block.layer.se_ratio != 0.25 {
                push(
                    Some(i),
                    format!("se_ratio {} not in {{0, 0.25}}", block.layer.se_ratio),
                );
            }
            if block.layer.out_channels == 0 {
                push(Some(i), "out_channels must be positive".into());
            }
        }
        if self.expansion < 1 {
            push(None, "expansion must be >= 1".into());
        }
        let res = self.input_resolution;
        if res.height == 0 || res.width == 0 || res.channels == 0 {
            push(None, "input_resolution must be positive".into());
        } else {
            let div = 1usize << (self.num_scales as usize - 1);
            if !res.height.is_multiple_of(div) || !res.width.is_multiple_of(div) {
                push(
                    None,
                    format!(
                        "input resolution {}x{} not divisible by 2^(num_scales-1) = {div}",
                        res.height, res.width
                    ),
                );
            }
        }
        if layout_ok {
            for slot in execution_order(self.num_scales) {
                let block = &self.blocks[slot];
                let derived = match chain_predecessor(self.num_scales, slot) {
                    None => self.input_resolution.channels,
                    Some(pred) => self.blocks[pred].layer.out_channels,
                };
                if block.in_channels != derived {
                    push(
                        Some(slot),
                        format!(
                            "channel chain broken: stored in_channels {} but wiring \
                             delivers {derived}",
                            block.in_channels
                        ),
                    );
                    // A residual bound to the first repeat spans the stored
                    // endpoints; with the chain broken those endpoints mismatch.
                    if block.layer.skip == SkipOp::Residual
                        && block.in_channels == block.layer.out_channels
                    {
                        push(
                            Some(slot),
                            format!(
                                "residual skip connects mismatched channel counts \
                                 ({derived} in, {} out)",
                                block.layer.out_channels
                            ),
                        );
                    }
                }
            }
        }
        ValidityReport { violations }
    }

    /// Exact learnable-scalar count, including the fixed 1-channel output
    /// head. Matches the compiled parameter-store size element for element.
    pub fn param_count(&self) -> u64 {
        let blocks: u64 = self
            .blocks
            .iter()
            .map(|b| block_params(b, self.expansion))
            .collect::<Vec<_>>()
            .iter()
            .sum();
        let head_in = self.blocks[slot_at(1, 5)].layer.out_channels as u64;
        blocks + head_in + 1
    }

    /// Canonical serialization: compact JSON with keys sorted at every level.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("genome serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    /// Hex SHA-256 digest of the canonical serialization. Stable across runs
    /// and platforms; equal genomes hash equal.
    pub fn canonical_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_json().as_bytes());
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for byte in digest {
            use fmt::Write;
            write!(out, "{byte:02x}").expect("write to string");
        }
        out
    }

    /// Parses the canonical JSON format, rejecting unknown schema versions.
    pub fn from_json(text: &str) -> Result<Self> {
        let genome: ArchitectureGenome =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("genome: {e}")))?;
        if genome.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported genome schema_version {}",
                genome.schema_version
            )));
        }
        Ok(genome)
    }
}

/// Parameters of one layer instance mapping `cin` to `cout` channels.
///
/// Vanilla: a dense k x k convolution with bias. Depthwise: a k x k
/// depthwise stage plus a pointwise projection, both biased. Inverted
/// bottleneck: 1x1 expansion to `expansion * cin`, depthwise k x k, 1x1
/// projection, all biased. An SE gate with ratio `r` adds two biased
/// fully-connected maps through `ceil(r * cout)` hidden units.
pub fn layer_params(layer: &LayerSpec, cin: usize, cout: usize, expansion: u32) -> u64 {
    let k = layer.ksize as u64;
    let cin = cin as u64;
    let cout = cout as u64;
    let conv = match layer.conv_op {
        ConvOp::Vanilla2d => k * k * cin * cout + cout,
        ConvOp::Depthwise => (k * k * cin + cin) + (cin * cout + cout),
        ConvOp::InvertedBottleneck => {
            let e = expansion as u64 * cin;
            (cin * e + e) + (k * k * e + e) + (e * cout + cout)
        }
    };
    let se = if layer.se_ratio > 0.0 {
        let m = (layer.se_ratio * cout as f64).ceil() as u64;
        cout * m + m + m * cout + cout
    } else {
        0
    };
    conv + se
}

/// Parameters of a whole block: the first repeat maps the block input to
/// `out_channels`, the remaining repeats preserve the width.
pub fn block_params(block: &BlockSpec, expansion: u32) -> u64 {
    let l = &block.layer;
    let first = layer_params(l, block.in_channels, l.out_channels, expansion);
    let rest = layer_params(l, l.out_channels, l.out_channels, expansion);
    first + (block.repeats as u64 - 1) * rest
}
