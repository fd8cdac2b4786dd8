#![allow(dead_code)]

use attnflow::graph::{Capacity, FlowNetwork, NodeId, Side, TokenNode};
use attnflow::AttentionBundle;
use ndarray::Array4;
use rand::Rng;

pub fn token(side: Side, column: usize, token: usize) -> TokenNode {
    TokenNode {
        side,
        token,
        span: 1,
        layer: column,
        column,
    }
}

/// Random layered network with at most `max_cols` columns of at most
/// `max_rows` nodes. Token-to-token capacities are uniform in [0, 1);
/// source and terminal edges are a mix of finite and infinite.
pub fn random_network(rng: &mut impl Rng, max_cols: usize, max_rows: usize) -> FlowNetwork {
    let cols = rng.gen_range(1..=max_cols);
    let mut net = FlowNetwork::new();
    let grid: Vec<Vec<NodeId>> = (0..cols)
        .map(|c| {
            let rows = rng.gen_range(1..=max_rows);
            (0..rows)
                .map(|r| net.add_token_node(token(Side::Decoder, c, r)))
                .collect()
        })
        .collect();
    for &v in &grid[0] {
        if rng.gen_bool(0.7) {
            let cap = if rng.gen_bool(0.5) {
                Capacity::Infinite
            } else {
                Capacity::Finite(rng.gen())
            };
            net.add_edge(net.source(), v, cap);
        }
    }
    for c in 0..cols.saturating_sub(1) {
        for &u in &grid[c] {
            for &v in &grid[c + 1] {
                if rng.gen_bool(0.75) {
                    net.add_edge(u, v, Capacity::Finite(rng.gen()));
                }
            }
        }
    }
    for &v in &grid[cols - 1] {
        if rng.gen_bool(0.7) {
            let cap = if cols > 1 && rng.gen_bool(0.5) {
                Capacity::Infinite
            } else {
                Capacity::Finite(rng.gen())
            };
            net.add_edge(v, net.terminal(), cap);
        }
    }
    net
}

pub fn causal(mut t: Array4<f32>) -> Array4<f32> {
    for ((_, _, k, j), v) in t.indexed_iter_mut() {
        if j > k {
            *v = 0.0;
        }
    }
    t
}

pub fn random_tensor(rng: &mut impl Rng, shape: [usize; 4]) -> Array4<f32> {
    Array4::from_shape_fn(shape, |_| rng.gen::<f32>())
}

pub fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn decoder_bundle(dec: Array4<f32>) -> AttentionBundle {
    let [h, l, n, _] = [
        dec.shape()[0],
        dec.shape()[1],
        dec.shape()[2],
        dec.shape()[3],
    ];
    AttentionBundle {
        model_name: "synthetic-dec".into(),
        heads: h,
        enc_layers: 0,
        dec_layers: l,
        input_tokens: vec![],
        output_tokens: names("o", n),
        enc_self: None,
        dec_self: Some(dec),
        cross: None,
    }
}

pub fn encoder_bundle(enc: Array4<f32>) -> AttentionBundle {
    let [h, l, m, _] = [
        enc.shape()[0],
        enc.shape()[1],
        enc.shape()[2],
        enc.shape()[3],
    ];
    AttentionBundle {
        model_name: "synthetic-enc".into(),
        heads: h,
        enc_layers: l,
        dec_layers: 0,
        input_tokens: names("i", m),
        output_tokens: vec![],
        enc_self: Some(enc),
        dec_self: None,
        cross: None,
    }
}

pub fn encdec_bundle(enc: Array4<f32>, dec: Array4<f32>, cross: Array4<f32>) -> AttentionBundle {
    AttentionBundle {
        model_name: "synthetic-encdec".into(),
        heads: enc.shape()[0],
        enc_layers: enc.shape()[1],
        dec_layers: dec.shape()[1],
        input_tokens: names("i", enc.shape()[2]),
        output_tokens: names("o", dec.shape()[2]),
        enc_self: Some(enc),
        dec_self: Some(dec),
        cross: Some(cross),
    }
}
