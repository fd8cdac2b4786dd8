#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use attnflow::{write_bundle, AttentionBundle};
use ndarray::Array4;
use rand::Rng;

pub fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn causal(mut t: Array4<f32>) -> Array4<f32> {
    for ((_, _, k, j), v) in t.indexed_iter_mut() {
        if j > k {
            *v = 0.0;
        }
    }
    t
}

/// Row-stochastic causal attention with random weights.
pub fn random_causal(rng: &mut impl Rng, heads: usize, layers: usize, n: usize) -> Array4<f32> {
    let mut t = causal(Array4::from_shape_fn([heads, layers, n, n], |_| {
        rng.gen_range(0.01f32..1.0)
    }));
    for h in 0..heads {
        for l in 0..layers {
            for k in 0..n {
                let sum: f32 = (0..=k).map(|j| t[[h, l, k, j]]).sum();
                for j in 0..=k {
                    t[[h, l, k, j]] /= sum;
                }
            }
        }
    }
    t
}

pub fn decoder_bundle(dec: Array4<f32>) -> AttentionBundle {
    let s = dec.shape().to_vec();
    AttentionBundle {
        model_name: "synthetic-dec".into(),
        heads: s[0],
        enc_layers: 0,
        dec_layers: s[1],
        input_tokens: vec![],
        output_tokens: names("o", s[2]),
        enc_self: None,
        dec_self: Some(dec),
        cross: None,
    }
}

pub fn encoder_bundle(enc: Array4<f32>) -> AttentionBundle {
    let s = enc.shape().to_vec();
    AttentionBundle {
        model_name: "synthetic-enc".into(),
        heads: s[0],
        enc_layers: s[1],
        dec_layers: 0,
        input_tokens: names("i", s[2]),
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

/// Decoder bundle where every causal entry is `c`.
pub fn constant_decoder(heads: usize, layers: usize, n: usize, c: f32) -> AttentionBundle {
    decoder_bundle(causal(Array4::from_elem([heads, layers, n, n], c)))
}

/// Two tokens each attended with 0.5 by a third, itself attended with 0.5.
pub fn competition_bundle() -> AttentionBundle {
    let mut t = Array4::zeros([1, 2, 4, 4]);
    t[[0, 0, 2, 0]] = 0.5;
    t[[0, 0, 2, 1]] = 0.5;
    t[[0, 1, 3, 2]] = 0.5;
    decoder_bundle(t)
}

pub fn save(bundle: &AttentionBundle, dir: &Path) {
    write_bundle(bundle, dir).expect("fixture bundle writes");
}

pub fn attnflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attnflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}
