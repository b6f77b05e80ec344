//! Minimal dense-tensor runtime: compiles a genome into an executable op
//! graph, runs forward passes with optional activation tracing, and computes
//! reverse-mode gradients for the trainer.
//!
//! Everything is double precision. Kernels are deterministic and
//! single-threaded; concurrency happens across candidates, never inside one.

pub mod gradcheck;
pub mod ops;
mod tensor;

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::genome::{ArchitectureGenome, BlockKind, ConvOp, LayerSpec, SkipOp};
use crate::{Error, Result};
pub use tensor::Tensor;

/// Primitive operations of the compiled graph.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    /// The batch placeholder; always node 0.
    Input,
    Conv {
        weight: usize,
        bias: usize,
        stride: usize,
        pad: usize,
    },
    DepthwiseConv {
        weight: usize,
        bias: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    Sigmoid,
    GlobalAvgPool,
    /// Inputs: `[features, gate]` with gate shaped `(n, c, 1, 1)`.
    ChannelScale,
    Add,
    ChannelResize {
        to: usize,
    },
    NearestUp2,
}

/// One graph node. Nodes are stored in topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub op: OpKind,
    pub inputs: Vec<usize>,
    /// Per-batch-element output shape `(channels, height, width)`.
    pub shape: (usize, usize, usize),
}

/// Shape and initialization metadata for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMeta {
    pub name: String,
    pub shape: [usize; 4],
    /// `Some(fan_in)` for weights (normal init with variance `2 / fan_in`),
    /// `None` for biases (zero init).
    pub fan_in: Option<usize>,
}

/// An executable network: op graph plus parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInstance {
    nodes: Vec<Node>,
    output: usize,
    params: Vec<ParamMeta>,
    n_a: usize,
    /// Bit offset of each rectifier node's units inside a trace.
    relu_offsets: Vec<(usize, usize)>,
    input_shape: (usize, usize, usize),
    /// Node producing each genome slot's block output (empty for hand-built
    /// graphs).
    block_outputs: Vec<usize>,
}

impl NetworkInstance {
    /// Total number of scalar rectifier outputs for one input.
    pub fn n_a(&self) -> usize {
        self.n_a
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn params(&self) -> &[ParamMeta] {
        &self.params
    }

    /// Total learnable scalar count.
    pub fn param_len(&self) -> u64 {
        self.params
            .iter()
            .map(|p| p.shape.iter().product::<usize>() as u64)
            .sum()
    }

    /// Output shape `(channels, height, width)` of a genome block slot.
    pub fn block_output_shape(&self, slot: usize) -> (usize, usize, usize) {
        self.nodes[self.block_outputs[slot]].shape
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        self.nodes[self.output].shape
    }
}

/// Mutable collection of parameter tensors aligned with
/// [`NetworkInstance::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn total_len(&self) -> u64 {
        self.tensors.iter().map(|t| t.len() as u64).sum()
    }
}

/// Per-input binary indicator vector: one bit per rectifier unit, set when
/// the pre-activation is strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    len: usize,
    words: Vec<u64>,
}

impl ActivationTrace {
    pub fn new_zeroed(len: usize) -> Self {
        ActivationTrace {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    fn set(&mut self, bit: usize) {
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Hamming distance to another trace of the same length.
    pub fn hamming(&self, other: &ActivationTrace) -> Result<u64> {
        if self.len != other.len {
            return Err(Error::Shape(format!(
                "trace lengths differ: {} vs {}",
                self.len, other.len
            )));
        }
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as u64)
            .sum())
    }
}

/// Incremental graph constructor. `compile` drives it from a genome; tests
/// can also assemble ad-hoc graphs op by op.
pub struct GraphBuilder {
    nodes: Vec<Node>,
    params: Vec<ParamMeta>,
    input_shape: (usize, usize, usize),
}

impl GraphBuilder {
    pub fn new(input_shape: (usize, usize, usize)) -> Self {
        GraphBuilder {
            nodes: vec![Node {
                op: OpKind::Input,
                inputs: vec![],
                shape: input_shape,
            }],
            params: Vec::new(),
            input_shape,
        }
    }

    pub fn input(&self) -> usize {
        0
    }

    pub fn shape(&self, node: usize) -> (usize, usize, usize) {
        self.nodes[node].shape
    }

    fn push(&mut self, op: OpKind, inputs: Vec<usize>, shape: (usize, usize, usize)) -> usize {
        self.nodes.push(Node { op, inputs, shape });
        self.nodes.len() - 1
    }

    /// Dense convolution with same-style padding `k / 2`.
    pub fn conv(&mut self, input: usize, cout: usize, k: usize, stride: usize, name: &str) -> usize {
        let (cin, h, w) = self.shape(input);
        let pad = k / 2;
        let weight = self.add_param(format!("{name}.w"), [cout, cin, k, k], Some(k * k * cin));
        let bias = self.add_param(format!("{name}.b"), [cout, 1, 1, 1], None);
        let shape = (
            cout,
            ops::conv_out_extent(h, k, stride, pad),
            ops::conv_out_extent(w, k, stride, pad),
        );
        self.push(
            OpKind::Conv {
                weight,
                bias,
                stride,
                pad,
            },
            vec![input],
            shape,
        )
    }

    /// Depthwise convolution with same-style padding `k / 2`.
    pub fn depthwise(&mut self, input: usize, k: usize, stride: usize, name: &str) -> usize {
        let (c, h, w) = self.shape(input);
        let pad = k / 2;
        let weight = self.add_param(format!("{name}.w"), [c, 1, k, k], Some(k * k));
        let bias = self.add_param(format!("{name}.b"), [c, 1, 1, 1], None);
        let shape = (
            c,
            ops::conv_out_extent(h, k, stride, pad),
            ops::conv_out_extent(w, k, stride, pad),
        );
        self.push(
            OpKind::DepthwiseConv {
                weight,
                bias,
                stride,
                pad,
            },
            vec![input],
            shape,
        )
    }

    pub fn relu(&mut self, input: usize) -> usize {
        let shape = self.shape(input);
        self.push(OpKind::Relu, vec![input], shape)
    }

    pub fn sigmoid(&mut self, input: usize) -> usize {
        let shape = self.shape(input);
        self.push(OpKind::Sigmoid, vec![input], shape)
    }

    pub fn global_avg_pool(&mut self, input: usize) -> usize {
        let (c, _, _) = self.shape(input);
        self.push(OpKind::GlobalAvgPool, vec![input], (c, 1, 1))
    }

    pub fn channel_scale(&mut self, features: usize, gate: usize) -> usize {
        let shape = self.shape(features);
        debug_assert_eq!(self.shape(gate), (shape.0, 1, 1));
        self.push(OpKind::ChannelScale, vec![features, gate], shape)
    }

    pub fn add(&mut self, a: usize, b: usize) -> usize {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let shape = self.shape(a);
        self.push(OpKind::Add, vec![a, b], shape)
    }

    pub fn channel_resize(&mut self, input: usize, to: usize) -> usize {
        let (_, h, w) = self.shape(input);
        self.push(OpKind::ChannelResize { to }, vec![input], (to, h, w))
    }

    pub fn nearest_up2(&mut self, input: usize) -> usize {
        let (c, h, w) = self.shape(input);
        self.push(OpKind::NearestUp2, vec![input], (c, h * 2, w * 2))
    }

    fn add_param(&mut self, name: String, shape: [usize; 4], fan_in: Option<usize>) -> usize {
        self.params.push(ParamMeta {
            name,
            shape,
            fan_in,
        });
        self.params.len() - 1
    }

    pub fn finish(self, output: usize) -> NetworkInstance {
        self.finish_with_blocks(output, Vec::new())
    }

    fn finish_with_blocks(self, output: usize, block_outputs: Vec<usize>) -> NetworkInstance {
        let mut n_a = 0usize;
        let mut relu_offsets = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.op == OpKind::Relu {
                relu_offsets.push((i, n_a));
                let (c, h, w) = node.shape;
                n_a += c * h * w;
            }
        }
        NetworkInstance {
            nodes: self.nodes,
            output,
            params: self.params,
            n_a,
            relu_offsets,
            input_shape: self.input_shape,
            block_outputs,
        }
    }
}

/// Compiles a genome into its op graph. The graph realizes the backbone
/// wiring: encoders descend scale by scale through downsample blocks,
/// decoders ascend through upsample blocks, the first decoder of each scale
/// below the coarsest fuses (adds, channel-aligned) the upsampled
/// coarser-scale output, and a fixed 1x1 head maps the last refine block to
/// one channel.
pub fn compile(genome: &ArchitectureGenome) -> Result<NetworkInstance> {
    genome.validate().into_result()?;
    let res = genome.input_resolution;
    let mut builder = GraphBuilder::new((res.channels, res.height, res.width));
    let mut block_outputs = vec![usize::MAX; genome.blocks.len()];

    for slot in crate::genome::execution_order(genome.num_scales) {
        let block = &genome.blocks[slot];
        let mut current = match crate::genome::chain_predecessor(genome.num_scales, slot) {
            None => builder.input(),
            Some(pred) => block_outputs[pred],
        };
        if let Some(fused_slot) = crate::genome::fusion_source(genome.num_scales, slot) {
            let coarse = block_outputs[fused_slot];
            let want = builder.shape(current).0;
            let aligned = if builder.shape(coarse).0 == want {
                coarse
            } else {
                builder.channel_resize(coarse, want)
            };
            current = builder.add(current, aligned);
        }
        let prefix = format!(
            "s{}.{}{}",
            block.scale,
            kind_tag(block.kind),
            block.block_index
        );
        if block.kind == BlockKind::Upsample {
            current = builder.nearest_up2(current);
        }
        for repeat in 0..block.repeats {
            let stride = if block.kind == BlockKind::Downsample && repeat == 0 {
                2
            } else {
                1
            };
            current = build_layer(
                &mut builder,
                current,
                &block.layer,
                genome.expansion as usize,
                stride,
                &format!("{prefix}.r{repeat}"),
            );
        }
        block_outputs[slot] = current;
    }

    let refine1 = 4; // slot (scale 1, refine) in template order
    let head = builder.conv(block_outputs[refine1], 1, 1, 1, "head");
    Ok(builder.finish_with_blocks(head, block_outputs))
}

fn kind_tag(kind: BlockKind) -> &'static str {
    match kind {
        BlockKind::Encoder => "encoder",
        BlockKind::Decoder => "decoder",
        BlockKind::Refine => "refine",
        BlockKind::Downsample => "downsample",
        BlockKind::Upsample => "upsample",
    }
}

/// Appends one layer instance: the conv stack (each conv followed by a
/// rectifier), the optional SE gate, and a residual add wherever the layer
/// preserves its input shape.
fn build_layer(
    builder: &mut GraphBuilder,
    layer_input: usize,
    spec: &LayerSpec,
    expansion: usize,
    stride: usize,
    prefix: &str,
) -> usize {
    let cin = builder.shape(layer_input).0;
    let cout = spec.out_channels;
    let k = spec.ksize as usize;
    let mut current = match spec.conv_op {
        ConvOp::Vanilla2d => {
            let c = builder.conv(layer_input, cout, k, stride, &format!("{prefix}.conv"));
            builder.relu(c)
        }
        ConvOp::Depthwise => {
            let d = builder.depthwise(layer_input, k, stride, &format!("{prefix}.dw"));
            let a = builder.relu(d);
            let p = builder.conv(a, cout, 1, 1, &format!("{prefix}.pw"));
            builder.relu(p)
        }
        ConvOp::InvertedBottleneck => {
            let e = builder.conv(
                layer_input,
                expansion * cin,
                1,
                1,
                &format!("{prefix}.expand"),
            );
            let a = builder.relu(e);
            let d = builder.depthwise(a, k, stride, &format!("{prefix}.dw"));
            let a2 = builder.relu(d);
            let p = builder.conv(a2, cout, 1, 1, &format!("{prefix}.project"));
            builder.relu(p)
        }
    };
    if spec.se_ratio > 0.0 {
        let hidden = (spec.se_ratio * cout as f64).ceil() as usize;
        let pooled = builder.global_avg_pool(current);
        let reduce = builder.conv(pooled, hidden, 1, 1, &format!("{prefix}.se_reduce"));
        let mid = builder.relu(reduce);
        let expand = builder.conv(mid, cout, 1, 1, &format!("{prefix}.se_expand"));
        let gate = builder.sigmoid(expand);
        current = builder.channel_scale(current, gate);
    }
    if spec.skip == SkipOp::Residual && builder.shape(layer_input) == builder.shape(current) {
        current = builder.add(current, layer_input);
    }
    current
}

/// Fan-in-scaled normal initialization: weights draw from
/// `Normal(0, 2 / fan_in)` (variance), biases start at zero. One seeded
/// stream covers the store in parameter order.
pub fn init_params(net: &NetworkInstance, seed: u64) -> ParamStore {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let tensors = net
        .params
        .iter()
        .map(|meta| {
            let len: usize = meta.shape.iter().product();
            match meta.fan_in {
                Some(fan_in) => {
                    let normal =
                        Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid stddev");
                    let data = (0..len).map(|_| normal.sample(&mut rng)).collect();
                    Tensor::from_vec(meta.shape, data).expect("shape matches")
                }
                None => Tensor::zeros(meta.shape),
            }
        })
        .collect();
    ParamStore { tensors }
}

/// All node outputs of one forward pass, for reuse by [`backward`].
pub struct ForwardCache {
    values: Vec<Tensor>,
}

impl ForwardCache {
    pub fn output<'a>(&'a self, net: &NetworkInstance) -> &'a Tensor {
        &self.values[net.output]
    }
}

fn check_batch(net: &NetworkInstance, batch: &Tensor) -> Result<()> {
    let [_, c, h, w] = batch.shape();
    if (c, h, w) != net.input_shape {
        return Err(Error::Shape(format!(
            "batch shape ({c}, {h}, {w}) does not match network input {:?}",
            net.input_shape
        )));
    }
    Ok(())
}

fn eval_node(
    net: &NetworkInstance,
    store: &ParamStore,
    values: &[Option<Tensor>],
    id: usize,
) -> Tensor {
    let node = &net.nodes[id];
    let arg = |i: usize| values[node.inputs[i]].as_ref().expect("input alive");
    match node.op {
        OpKind::Input => unreachable!("input node is seeded"),
        OpKind::Conv {
            weight,
            bias,
            stride,
            pad,
        } => ops::conv2d(
            arg(0),
            &store.tensors[weight],
            &store.tensors[bias],
            stride,
            pad,
        ),
        OpKind::DepthwiseConv {
            weight,
            bias,
            stride,
            pad,
        } => ops::depthwise_conv2d(
            arg(0),
            &store.tensors[weight],
            &store.tensors[bias],
            stride,
            pad,
        ),
        OpKind::Relu => ops::relu(arg(0)),
        OpKind::Sigmoid => ops::sigmoid(arg(0)),
        OpKind::GlobalAvgPool => ops::global_avg_pool(arg(0)),
        OpKind::ChannelScale => ops::channel_scale(arg(0), arg(1)),
        OpKind::Add => ops::add(arg(0), arg(1)),
        OpKind::ChannelResize { to } => ops::channel_resize(arg(0), to),
        OpKind::NearestUp2 => ops::nearest_up2(arg(0)),
    }
}

fn numeric_check(net: &NetworkInstance, id: usize, value: &Tensor) -> Result<()> {
    if value.all_finite() {
        Ok(())
    } else {
        Err(Error::Numeric {
            op: format!("node {id} ({:?})", net.nodes[id].op),
            detail: "non-finite value in output".into(),
        })
    }
}

/// Forward evaluation. With `trace` set, returns one [`ActivationTrace`]
/// per batch element (bit per rectifier unit, in graph order).
///
/// Intermediate tensors are freed as soon as their consumers have run, so
/// scoring large graphs stays memory-bounded.
pub fn forward(
    net: &NetworkInstance,
    store: &ParamStore,
    batch: &Tensor,
    trace: bool,
) -> Result<(Tensor, Vec<ActivationTrace>)> {
    check_batch(net, batch)?;
    let n = batch.batch();
    let mut traces = if trace {
        vec![ActivationTrace::new_zeroed(net.n_a); n]
    } else {
        Vec::new()
    };
    let mut consumers = vec![0usize; net.nodes.len()];
    for node in &net.nodes {
        for &input in &node.inputs {
            consumers[input] += 1;
        }
    }
    consumers[net.output] += 1; // keep the output alive

    let mut relu_offsets = net.relu_offsets.iter().peekable();
    let mut values: Vec<Option<Tensor>> = vec![None; net.nodes.len()];
    values[0] = Some(batch.clone());
    for id in 1..net.nodes.len() {
        let value = eval_node(net, store, &values, id);
        numeric_check(net, id, &value)?;
        if trace {
            if let Some(&&(relu_id, offset)) = relu_offsets.peek() {
                if relu_id == id {
                    relu_offsets.next();
                    let pre = values[net.nodes[id].inputs[0]].as_ref().expect("alive");
                    let unit_count = pre.len() / n;
                    for (b, bits) in traces.iter_mut().enumerate() {
                        let base = b * unit_count;
                        for u in 0..unit_count {
                            if pre.data()[base + u] > 0.0 {
                                bits.set(offset + u);
                            }
                        }
                    }
                }
            }
        }
        values[id] = Some(value);
        for &input in &net.nodes[id].inputs {
            consumers[input] -= 1;
            if consumers[input] == 0 {
                values[input] = None;
            }
        }
    }
    let output = values[net.output].take().expect("output kept alive");
    Ok((output, traces))
}

/// Forward pass retaining every node output for [`backward`].
pub fn forward_cached(
    net: &NetworkInstance,
    store: &ParamStore,
    batch: &Tensor,
) -> Result<ForwardCache> {
    check_batch(net, batch)?;
    let mut values: Vec<Option<Tensor>> = vec![None; net.nodes.len()];
    values[0] = Some(batch.clone());
    for id in 1..net.nodes.len() {
        let value = eval_node(net, store, &values, id);
        numeric_check(net, id, &value)?;
        values[id] = Some(value);
    }
    Ok(ForwardCache {
        values: values.into_iter().map(|v| v.expect("computed")).collect(),
    })
}

/// Reverse-mode sweep. Returns one gradient tensor per parameter tensor
/// (same shapes) plus the gradient with respect to the input batch.
/// Parameters on branches the output never consumes get exactly zero.
pub fn backward(
    net: &NetworkInstance,
    store: &ParamStore,
    cache: &ForwardCache,
    out_grad: &Tensor,
) -> Result<(Vec<Tensor>, Tensor)> {
    if out_grad.shape() != cache.values[net.output].shape() {
        return Err(Error::Shape(format!(
            "loss gradient shape {:?} does not match output {:?}",
            out_grad.shape(),
            cache.values[net.output].shape()
        )));
    }
    let mut param_grads: Vec<Tensor> = net
        .params
        .iter()
        .map(|meta| Tensor::zeros(meta.shape))
        .collect();
    let mut node_grads: Vec<Option<Tensor>> = vec![None; net.nodes.len()];
    node_grads[net.output] = Some(out_grad.clone());

    for id in (1..net.nodes.len()).rev() {
        let Some(dy) = node_grads[id].take() else {
            continue;
        };
        if !dy.all_finite() {
            return Err(Error::Numeric {
                op: format!("node {id} ({:?})", net.nodes[id].op),
                detail: "non-finite gradient".into(),
            });
        }
        let node = &net.nodes[id];
        let x = |i: usize| &cache.values[node.inputs[i]];
        match node.op {
            OpKind::Input => unreachable!(),
            OpKind::Conv {
                weight,
                bias,
                stride,
                pad,
            } => {
                let (dx, dw, db) =
                    ops::conv2d_backward(x(0), &store.tensors[weight], &dy, stride, pad);
                accumulate(&mut param_grads[weight], &dw);
                accumulate(&mut param_grads[bias], &db);
                accumulate_node(&mut node_grads[node.inputs[0]], dx);
            }
            OpKind::DepthwiseConv {
                weight,
                bias,
                stride,
                pad,
            } => {
                let (dx, dw, db) =
                    ops::depthwise_conv2d_backward(x(0), &store.tensors[weight], &dy, stride, pad);
                accumulate(&mut param_grads[weight], &dw);
                accumulate(&mut param_grads[bias], &db);
                accumulate_node(&mut node_grads[node.inputs[0]], dx);
            }
            OpKind::Relu => {
                let dx = ops::relu_backward(x(0), &dy);
                accumulate_node(&mut node_grads[node.inputs[0]], dx);
            }
            OpKind::Sigmoid => {
                let dx = ops::sigmoid_backward(&cache.values[id], &dy);
                accumulate_node(&mut node_grads[node.inputs[0]], dx);
            }
            OpKind::GlobalAvgPool => {
                let dx = ops::global_avg_pool_backward(x(0).shape(), &dy);
                accumulate_node(&mut node_grads[node.inputs[0]], dx);
            }
            OpKind::ChannelScale => {
                let (dx, dgate) = ops::channel_scale_backward(x(0), x(1), &dy);
                accumulate_node(&mut node_grads[node.inputs[0]], dx);
                accumulate_node(&mut node_grads[node.inputs[1]], dgate);
            }
            OpKind::Add => {
                accumulate_node(&mut node_grads[node.inputs[0]], dy.clone());
                accumulate_node(&mut node_grads[node.inputs[1]], dy);
            }
            OpKind::ChannelResize { .. } => {
                let dx = ops::channel_resize_backward(x(0).shape(), &dy);
                accumulate_node(&mut node_grads[node.inputs[0]], dx);
            }
            OpKind::NearestUp2 => {
                let dx = ops::nearest_up2_backward(x(0).shape(), &dy);
                accumulate_node(&mut node_grads[node.inputs[0]], dx);
            }
        }
    }
    let input_grad = node_grads[0]
        .take()
        .unwrap_or_else(|| Tensor::zeros(cache.values[0].shape()));
    Ok((param_grads, input_grad))
}

fn accumulate(dst: &mut Tensor, src: &Tensor) {
    for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}

fn accumulate_node(slot: &mut Option<Tensor>, grad: Tensor) {
    match slot {
        None => *slot = Some(grad),
        Some(existing) => accumulate(existing, &grad),
    }
}

/// Writes the store as a little-endian f64 blob plus a text manifest with
/// one `name<TAB>d0 d1 d2 d3<TAB>byte_offset<TAB>count` line per tensor.
pub fn save_params(
    store: &ParamStore,
    net: &NetworkInstance,
    bin_path: &Path,
    manifest_path: &Path,
) -> Result<()> {
    let mut blob = Vec::with_capacity(store.total_len() as usize * 8);
    let mut manifest = String::new();
    for (meta, tensor) in net.params.iter().zip(&store.tensors) {
        let offset = blob.len();
        for v in tensor.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        let [d0, d1, d2, d3] = meta.shape;
        manifest.push_str(&format!(
            "{}\t{d0} {d1} {d2} {d3}\t{offset}\t{}\n",
            meta.name,
            tensor.len()
        ));
    }
    std::fs::File::create(bin_path)?.write_all(&blob)?;
    std::fs::File::create(manifest_path)?.write_all(manifest.as_bytes())?;
    Ok(())
}

/// Reads a store written by [`save_params`], checking the layout against
/// the network's parameter metadata.
pub fn load_params(
    net: &NetworkInstance,
    bin_path: &Path,
    manifest_path: &Path,
) -> Result<ParamStore> {
    let mut blob = Vec::new();
    std::fs::File::open(bin_path)?.read_to_end(&mut blob)?;
    let manifest = std::fs::read_to_string(manifest_path)?;
    let mut tensors = Vec::with_capacity(net.params.len());
    let mut lines = manifest.lines();
    for meta in &net.params {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse("manifest shorter than parameter list".into()))?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse(format!("bad manifest line: {line}")));
        }
        if fields[0] != meta.name {
            return Err(Error::Parse(format!(
                "manifest tensor {} does not match expected {}",
                fields[0], meta.name
            )));
        }
        let offset: usize = fields[2]
            .parse()
            .map_err(|_| Error::Parse(format!("bad offset in: {line}")))?;
        let count: usize = fields[3]
            .parse()
            .map_err(|_| Error::Parse(format!("bad count in: {line}")))?;
        let expected: usize = meta.shape.iter().product();
        if count != expected {
            return Err(Error::Parse(format!(
                "tensor {} count {count} does not match shape {:?}",
                meta.name, meta.shape
            )));
        }
        let end = offset + count * 8;
        if end > blob.len() {
            return Err(Error::Parse(format!(
                "tensor {} extends past blob end",
                meta.name
            )));
        }
        let data = blob[offset..end]
            .chunks_exact(8)
            .map(|chunk| f64::from_le_bytes(chunk.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::from_vec(meta.shape, data)?);
    }
    Ok(ParamStore { tensors })
}
