//! Turning attention tensors into flow networks.
//!
//! Capacities come from head-averaged attention: the edge from key token
//! `j` in column `l` to query token `k` in column `l + 1` carries
//! `mean_h A[h, l, k, j]`. A stack of `L` layers therefore yields `L + 1`
//! node columns. Source and terminal edges are always infinite.

use std::collections::HashMap;
use std::ops::Range;

use ndarray::{Array3, Array4, Axis};
use serde::Serialize;

use crate::bundle::AttentionBundle;
use crate::error::{Error, Result};
use crate::graph::{Capacity, FlowNetwork, Node, NodeId, Side, TokenNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    Encoder,
    Decoder,
    #[serde(rename = "encdec")]
    EncoderDecoder,
}

/// Non-empty, sorted, de-duplicated subset of attention heads.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HeadSet(Vec<usize>);

impl HeadSet {
    pub fn new(indices: impl IntoIterator<Item = usize>, total: usize) -> Result<Self> {
        let mut heads: Vec<usize> = indices.into_iter().collect();
        heads.sort_unstable();
        heads.dedup();
        if heads.is_empty() {
            return Err(Error::spec("head set is empty"));
        }
        if let Some(&h) = heads.iter().find(|&&h| h >= total) {
            return Err(Error::spec(format!(
                "head {h} out of range for {total} heads"
            )));
        }
        Ok(HeadSet(heads))
    }

    pub fn all(total: usize) -> Result<Self> {
        Self::new(0..total, total)
    }

    pub fn single(head: usize, total: usize) -> Result<Self> {
        Self::new([head], total)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Partition of `0..total` into consecutive, non-empty runs.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    runs: Vec<Range<usize>>,
    total: usize,
}

impl Partition {
    pub fn new(runs: Vec<Range<usize>>, total: usize) -> Result<Self> {
        let mut expect = 0;
        for r in &runs {
            if r.start != expect || r.end <= r.start {
                return Err(Error::spec(format!(
                    "groups must be non-empty consecutive runs; run {}..{} does not start at {expect}",
                    r.start, r.end
                )));
            }
            expect = r.end;
        }
        if expect != total {
            return Err(Error::spec(format!(
                "groups cover 0..{expect} but must cover 0..{total}"
            )));
        }
        Ok(Partition { runs, total })
    }

    pub fn singletons(total: usize) -> Self {
        Partition {
            runs: (0..total).map(|i| i..i + 1).collect(),
            total,
        }
    }

    /// Parses `"0-3,4,5-11"` (inclusive bounds) into a partition of `0..total`.
    pub fn parse(text: &str, total: usize) -> Result<Self> {
        let mut runs = Vec::new();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let bad = || Error::spec(format!("cannot parse group `{part}`"));
            let (lo, hi) = match part.split_once('-') {
                Some((a, b)) => (a.trim(), b.trim()),
                None => (part, part),
            };
            let lo: usize = lo.parse().map_err(|_| bad())?;
            let hi: usize = hi.parse().map_err(|_| bad())?;
            if hi < lo {
                return Err(bad());
            }
            runs.push(lo..hi + 1);
        }
        Self::new(runs, total)
    }

    pub fn runs(&self) -> &[Range<usize>] {
        &self.runs
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    fn group_of(&self, index: usize) -> Option<usize> {
        self.runs.iter().position(|r| r.contains(&index))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenGrouping {
    pub side: Side,
    pub groups: Partition,
}

/// Where the flow is collected.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Target {
    /// Encoder kind: final-column positions wired to the terminal.
    Terminals(Vec<usize>),
    /// Decoder kinds: the prediction step `n`; the terminal is the final
    /// embedding of token `n - 1`.
    Step(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildSpec {
    pub kind: NetworkKind,
    /// Input-token indices for encoder and encoder-decoder kinds, output-token
    /// indices for the decoder kind.
    pub sources: Vec<usize>,
    pub target: Target,
    pub heads: HeadSet,
    pub residual: bool,
    pub encoder_layer_groups: Option<Partition>,
    /// Applies to decoder self-attention and cross-attention alike.
    pub decoder_layer_groups: Option<Partition>,
    pub token_groups: Vec<TokenGrouping>,
}

impl BuildSpec {
    fn with(kind: NetworkKind, sources: Vec<usize>, target: Target, heads: HeadSet) -> Self {
        BuildSpec {
            kind,
            sources,
            target,
            heads,
            residual: true,
            encoder_layer_groups: None,
            decoder_layer_groups: None,
            token_groups: Vec::new(),
        }
    }

    pub fn encoder(sources: Vec<usize>, terminals: Vec<usize>, heads: HeadSet) -> Self {
        Self::with(
            NetworkKind::Encoder,
            sources,
            Target::Terminals(terminals),
            heads,
        )
    }

    pub fn decoder(sources: Vec<usize>, step: usize, heads: HeadSet) -> Self {
        Self::with(NetworkKind::Decoder, sources, Target::Step(step), heads)
    }

    pub fn encoder_decoder(sources: Vec<usize>, step: usize, heads: HeadSet) -> Self {
        Self::with(
            NetworkKind::EncoderDecoder,
            sources,
            Target::Step(step),
            heads,
        )
    }

    pub fn with_residual(mut self, residual: bool) -> Self {
        self.residual = residual;
        self
    }

    pub fn with_sources(mut self, sources: Vec<usize>) -> Self {
        self.sources = sources;
        self
    }

    pub fn with_target(mut self, target: Target) -> Self {
        self.target = target;
        self
    }

    pub fn with_heads(mut self, heads: HeadSet) -> Self {
        self.heads = heads;
        self
    }

    pub fn step(&self) -> Option<usize> {
        match self.target {
            Target::Step(n) => Some(n),
            Target::Terminals(_) => None,
        }
    }
}

/// Head-averaged attention, `[L, K, J]`.
pub fn average_heads(tensor: &Array4<f32>, heads: &HeadSet) -> Result<Array3<f64>> {
    let total = tensor.shape()[0];
    if heads.is_empty() {
        return Err(Error::spec("head set is empty"));
    }
    if let Some(&h) = heads.indices().iter().find(|&&h| h >= total) {
        return Err(Error::spec(format!(
            "head {h} out of range for {total} heads"
        )));
    }
    let [_, l, k, j] = [
        tensor.shape()[0],
        tensor.shape()[1],
        tensor.shape()[2],
        tensor.shape()[3],
    ];
    let mut sum = Array3::<f64>::zeros([l, k, j]);
    for &h in heads.indices() {
        let slice = tensor.index_axis(Axis(0), h);
        sum.zip_mut_with(&slice, |acc, &v| *acc += f64::from(v));
    }
    Ok(sum / heads.len() as f64)
}

/// `0.5 A + 0.5 I` per layer.
pub fn apply_residual(layers: &Array3<f64>) -> Result<Array3<f64>> {
    let shape = layers.shape();
    if shape[1] != shape[2] {
        return Err(Error::spec(format!(
            "residual mixing needs square matrices, got {}x{}",
            shape[1], shape[2]
        )));
    }
    let mut out = layers * 0.5;
    for mut layer in out.outer_iter_mut() {
        for i in 0..shape[1] {
            layer[[i, i]] += 0.5;
        }
    }
    Ok(out)
}

/// Elementwise mean of the layers in each run; one output layer per run.
pub fn merge_layers(layers: &Array3<f64>, groups: &Partition) -> Result<Array3<f64>> {
    let shape = layers.shape();
    if groups.total() != shape[0] {
        return Err(Error::spec(format!(
            "layer groups cover {} layers, stack has {}",
            groups.total(),
            shape[0]
        )));
    }
    let mut out = Array3::<f64>::zeros([groups.len(), shape[1], shape[2]]);
    for (g, run) in groups.runs().iter().enumerate() {
        let mut dst = out.index_axis_mut(Axis(0), g);
        for l in run.clone() {
            dst += &layers.index_axis(Axis(0), l);
        }
        dst /= run.len() as f64;
    }
    Ok(out)
}

/// Per-layer capacity matrices ready to be wired into a network.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStacks {
    pub encoder: Option<Array3<f64>>,
    pub decoder: Option<Array3<f64>>,
    pub cross: Option<Array3<f64>>,
}

impl LayerStacks {
    /// Stacks of the same shape with every entry set to `value`.
    pub fn uniform(&self, value: f64) -> LayerStacks {
        let fill =
            |a: &Option<Array3<f64>>| a.as_ref().map(|a| Array3::from_elem(a.raw_dim(), value));
        LayerStacks {
            encoder: fill(&self.encoder),
            decoder: fill(&self.decoder),
            cross: fill(&self.cross),
        }
    }

    pub fn shape_key(&self) -> [Option<[usize; 3]>; 3] {
        let dims = |a: &Option<Array3<f64>>| {
            a.as_ref()
                .map(|a| [a.shape()[0], a.shape()[1], a.shape()[2]])
        };
        [dims(&self.encoder), dims(&self.decoder), dims(&self.cross)]
    }
}

fn require<'a>(t: Option<&'a Array4<f32>>, name: &str) -> Result<&'a Array4<f32>> {
    t.ok_or_else(|| Error::spec(format!("bundle has no {name} tensor")))
}

/// Head averaging, layer merging and residual mixing for the tensors the
/// requested kind consumes.
pub fn prepare_stacks(bundle: &AttentionBundle, spec: &BuildSpec) -> Result<LayerStacks> {
    let self_stack = |tensor: &Array4<f32>, groups: &Option<Partition>| -> Result<Array3<f64>> {
        let mut stack = average_heads(tensor, &spec.heads)?;
        if let Some(groups) = groups {
            stack = merge_layers(&stack, groups)?;
        }
        if spec.residual {
            stack = apply_residual(&stack)?;
        }
        Ok(stack)
    };
    let (use_enc, use_dec) = match spec.kind {
        NetworkKind::Encoder => (true, false),
        NetworkKind::Decoder => (false, true),
        NetworkKind::EncoderDecoder => (true, true),
    };
    let encoder = if use_enc {
        Some(self_stack(
            require(bundle.enc_self.as_ref(), "enc_self")?,
            &spec.encoder_layer_groups,
        )?)
    } else {
        None
    };
    let decoder = if use_dec {
        Some(self_stack(
            require(bundle.dec_self.as_ref(), "dec_self")?,
            &spec.decoder_layer_groups,
        )?)
    } else {
        None
    };
    let cross = if spec.kind == NetworkKind::EncoderDecoder {
        let mut stack = average_heads(require(bundle.cross.as_ref(), "cross")?, &spec.heads)?;
        if let Some(groups) = &spec.decoder_layer_groups {
            stack = merge_layers(&stack, groups)?;
        }
        Some(stack)
    } else {
        None
    };
    Ok(LayerStacks {
        encoder,
        decoder,
        cross,
    })
}

fn sorted_sources(spec: &BuildSpec) -> Result<Vec<usize>> {
    let mut sources = spec.sources.clone();
    sources.sort_unstable();
    sources.dedup();
    if sources.is_empty() {
        return Err(Error::spec("source token set is empty"));
    }
    Ok(sources)
}

/// Node ids indexed `[layer][token]`.
type Grid = Vec<Vec<NodeId>>;

fn add_self_block(
    net: &mut FlowNetwork,
    side: Side,
    stack: &Array3<f64>,
    column_offset: usize,
    causal: bool,
) -> Grid {
    let (layers, tokens) = (stack.shape()[0], stack.shape()[1]);
    let grid: Grid = (0..=layers)
        .map(|layer| {
            (0..tokens)
                .map(|token| {
                    net.add_token_node(TokenNode {
                        side,
                        token,
                        span: 1,
                        layer,
                        column: column_offset + layer,
                    })
                })
                .collect()
        })
        .collect();
    for l in 0..layers {
        for k in 0..tokens {
            let keys = if causal { 0..k + 1 } else { 0..tokens };
            for j in keys {
                net.add_edge(
                    grid[l][j],
                    grid[l + 1][k],
                    Capacity::Finite(stack[[l, k, j]]),
                );
            }
        }
    }
    grid
}

fn check_layers(stack: &Array3<f64>, name: &str) -> Result<()> {
    if stack.shape()[0] == 0 {
        return Err(Error::spec(format!(
            "{name} stack has no layers; source and terminal would be joined by infinite edges"
        )));
    }
    Ok(())
}

fn check_step(step: Option<usize>, tokens: usize) -> Result<usize> {
    let n = step.ok_or_else(|| Error::spec("decoder kinds need a prediction step"))?;
    if n == 0 || n > tokens {
        return Err(Error::spec(format!(
            "prediction step {n} outside 1..={tokens}"
        )));
    }
    Ok(n)
}

/// Wires prepared stacks into the network `spec` describes, then applies
/// the spec's token grouping.
pub fn build_from_stacks(stacks: &LayerStacks, spec: &BuildSpec) -> Result<FlowNetwork> {
    let sources = sorted_sources(spec)?;
    let mut net = FlowNetwork::new();
    let (s, t) = (net.source(), net.terminal());
    match spec.kind {
        NetworkKind::Encoder => {
            let stack = stacks
                .encoder
                .as_ref()
                .ok_or_else(|| Error::spec("missing encoder stack"))?;
            check_layers(stack, "encoder")?;
            let tokens = stack.shape()[1];
            let Target::Terminals(terminals) = &spec.target else {
                return Err(Error::spec("encoder kind needs a terminal position set"));
            };
            let mut terminals = terminals.clone();
            terminals.sort_unstable();
            terminals.dedup();
            if terminals.is_empty() {
                return Err(Error::spec("terminal position set is empty"));
            }
            if let Some(&bad) = sources.iter().chain(&terminals).find(|&&i| i >= tokens) {
                return Err(Error::spec(format!(
                    "token {bad} out of range for {tokens} input tokens"
                )));
            }
            let grid = add_self_block(&mut net, Side::Encoder, stack, 0, false);
            for &i in &sources {
                net.add_edge(s, grid[0][i], Capacity::Infinite);
            }
            let last = grid.last().unwrap();
            for &j in &terminals {
                net.add_edge(last[j], t, Capacity::Infinite);
            }
        }
        NetworkKind::Decoder => {
            let stack = stacks
                .decoder
                .as_ref()
                .ok_or_else(|| Error::spec("missing decoder stack"))?;
            check_layers(stack, "decoder")?;
            let tokens = stack.shape()[1];
            let n = check_step(spec.step(), tokens)?;
            if let Some(&bad) = sources.iter().find(|&&m| m >= n) {
                return Err(Error::spec(format!(
                    "source token {bad} is not before prediction step {n}"
                )));
            }
            let grid = add_self_block(&mut net, Side::Decoder, stack, 0, true);
            for &m in &sources {
                net.add_edge(s, grid[0][m], Capacity::Infinite);
            }
            net.add_edge(grid.last().unwrap()[n - 1], t, Capacity::Infinite);
        }
        NetworkKind::EncoderDecoder => {
            let (Some(enc), Some(dec), Some(cross)) =
                (&stacks.encoder, &stacks.decoder, &stacks.cross)
            else {
                return Err(Error::spec("encoder-decoder kind needs all three stacks"));
            };
            check_layers(dec, "decoder")?;
            let (in_tokens, out_tokens) = (enc.shape()[1], dec.shape()[1]);
            if cross.shape() != [dec.shape()[0], out_tokens, in_tokens] {
                return Err(Error::spec(format!(
                    "cross stack shape {:?} does not match decoder {:?} and encoder {:?}",
                    cross.shape(),
                    dec.shape(),
                    enc.shape()
                )));
            }
            let n = check_step(spec.step(), out_tokens)?;
            if let Some(&bad) = sources.iter().find(|&&i| i >= in_tokens) {
                return Err(Error::spec(format!(
                    "token {bad} out of range for {in_tokens} input tokens"
                )));
            }
            let enc_grid = add_self_block(&mut net, Side::Encoder, enc, 0, false);
            let dec_grid = add_self_block(&mut net, Side::Decoder, dec, enc.shape()[0] + 1, true);
            let enc_last = enc_grid.last().unwrap();
            for l in 0..cross.shape()[0] {
                for k in 0..out_tokens {
                    for j in 0..in_tokens {
                        net.add_edge(
                            enc_last[j],
                            dec_grid[l + 1][k],
                            Capacity::Finite(cross[[l, k, j]]),
                        );
                    }
                }
            }
            for &i in &sources {
                net.add_edge(s, enc_grid[0][i], Capacity::Infinite);
            }
            net.add_edge(dec_grid.last().unwrap()[n - 1], t, Capacity::Infinite);
        }
    }

    let mut seen = Vec::new();
    for grouping in &spec.token_groups {
        if seen.contains(&grouping.side) {
            return Err(Error::spec("token grouping given twice for the same side"));
        }
        seen.push(grouping.side);
        net = group_tokens(&net, grouping.side, &grouping.groups)?;
    }
    Ok(net)
}

fn check_kind(spec: &BuildSpec, kind: NetworkKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::spec(format!(
            "spec kind {:?} where {kind:?} is required",
            spec.kind
        )));
    }
    Ok(())
}

pub fn build_network(bundle: &AttentionBundle, spec: &BuildSpec) -> Result<FlowNetwork> {
    build_from_stacks(&prepare_stacks(bundle, spec)?, spec)
}

pub fn build_encoder_network(bundle: &AttentionBundle, spec: &BuildSpec) -> Result<FlowNetwork> {
    check_kind(spec, NetworkKind::Encoder)?;
    build_network(bundle, spec)
}

pub fn build_decoder_network(bundle: &AttentionBundle, spec: &BuildSpec) -> Result<FlowNetwork> {
    check_kind(spec, NetworkKind::Decoder)?;
    build_network(bundle, spec)
}

pub fn build_encdec_network(bundle: &AttentionBundle, spec: &BuildSpec) -> Result<FlowNetwork> {
    check_kind(spec, NetworkKind::EncoderDecoder)?;
    build_network(bundle, spec)
}

/// Contracts same-column nodes of `side` whose tokens fall into one group.
/// Parallel edges created by the contraction have their capacities summed.
pub fn group_tokens(net: &FlowNetwork, side: Side, groups: &Partition) -> Result<FlowNetwork> {
    let tokens_on_side = net
        .token_nodes()
        .filter(|(_, t)| t.side == side)
        .map(|(_, t)| t.token + t.span)
        .max()
        .unwrap_or(0);
    if tokens_on_side != groups.total() {
        return Err(Error::spec(format!(
            "token groups cover {} tokens, {side:?} side has {tokens_on_side}",
            groups.total()
        )));
    }

    let mut out = FlowNetwork::new();
    let mut remap = vec![NodeId(0); net.node_count()];
    remap[1] = out.terminal();
    let mut merged: HashMap<(usize, usize), NodeId> = HashMap::new();
    for (id, tok) in net.token_nodes() {
        if tok.side != side {
            remap[id.0] = out.add_token_node(*tok);
            continue;
        }
        let g = groups.group_of(tok.token).unwrap();
        if groups.group_of(tok.token + tok.span - 1) != Some(g) {
            return Err(Error::spec(format!(
                "group boundaries split the already contracted tokens {}..{}",
                tok.token,
                tok.token + tok.span
            )));
        }
        let run = &groups.runs()[g];
        remap[id.0] = *merged.entry((g, tok.layer)).or_insert_with(|| {
            out.add_token_node(TokenNode {
                token: run.start,
                span: run.len(),
                ..*tok
            })
        });
    }

    let mut slot: HashMap<(NodeId, NodeId), usize> = HashMap::new();
    let mut edges: Vec<(NodeId, NodeId, Capacity)> = Vec::new();
    for e in net.edges() {
        let (from, to) = (remap[e.from.0], remap[e.to.0]);
        if from == to {
            continue;
        }
        match slot.get(&(from, to)) {
            Some(&i) => edges[i].2 = edges[i].2 + e.capacity,
            None => {
                slot.insert((from, to), edges.len());
                edges.push((from, to, e.capacity));
            }
        }
    }
    for (from, to, cap) in edges {
        out.add_edge(from, to, cap);
    }
    debug_assert!(matches!(out.nodes()[0], Node::Source));
    Ok(out)
}
