//! Graphviz export. Token nodes are grouped into rank-aligned columns so
//! the drawing reads left to right, one column per embedding layer.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{Capacity, FlowNetwork, FlowResult, Node, NodeId, Side};

#[derive(Debug, Clone, Copy, Default)]
pub struct DotOptions<'a> {
    pub input_tokens: &'a [String],
    pub output_tokens: &'a [String],
    /// When present, edges are annotated with their flow and drawn with a
    /// pen width proportional to flow over capacity.
    pub flow: Option<&'a FlowResult>,
}

pub fn node_name(net: &FlowNetwork, id: NodeId) -> String {
    match net.nodes()[id.0] {
        Node::Source => "s".to_string(),
        Node::Terminal => "t".to_string(),
        Node::Token(t) => format!("tok{}_col{}", t.token, t.column),
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\")
        .replace('"', "\\\"")
        .replace('\n', "\\n")
}

fn pen_width(ratio: f64) -> f64 {
    0.5 + 4.5 * ratio.clamp(0.0, 1.0)
}

pub fn to_dot(net: &FlowNetwork, opts: &DotOptions<'_>) -> String {
    let mut out = String::new();
    out.push_str("digraph attention_flow {\n");
    out.push_str("  rankdir=LR;\n  splines=line;\n  node [shape=circle, fontsize=10];\n");
    out.push_str("  s [label=\"s\", shape=doublecircle, style=filled, fillcolor=\"#e34a33\"];\n");
    out.push_str("  t [label=\"t\", shape=doublecircle, style=filled, fillcolor=\"#3182bd\"];\n");

    let mut columns: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
    for (id, tok) in net.token_nodes() {
        columns.entry(tok.column).or_default().push(id);
    }
    for (column, ids) in &columns {
        let _ = writeln!(out, "  subgraph col{column} {{\n    rank=same;");
        for &id in ids {
            let Node::Token(tok) = net.nodes()[id.0] else {
                continue;
            };
            let names = match tok.side {
                Side::Encoder => opts.input_tokens,
                Side::Decoder => opts.output_tokens,
            };
            let text: Vec<&str> = (tok.token..tok.token + tok.span)
                .filter_map(|i| names.get(i).map(String::as_str))
                .collect();
            let token_text = if text.is_empty() {
                format!("{}{}", side_prefix(tok.side), tok.token)
            } else {
                text.join("")
            };
            let _ = writeln!(
                out,
                "    {} [label=\"{}\\nL{}\"];",
                node_name(net, id),
                escape(&token_text),
                tok.layer
            );
        }
        out.push_str("  }\n");
    }

    let max_finite = net
        .edges()
        .iter()
        .filter_map(|e| e.capacity.finite())
        .fold(0.0f64, f64::max);
    for (i, e) in net.edges().iter().enumerate() {
        let cap_text = match e.capacity {
            Capacity::Finite(c) => format!("{c:.4}"),
            Capacity::Infinite => "inf".to_string(),
        };
        let (label, width) = match opts.flow {
            Some(res) => {
                let f = res.edge_flows[i].flow;
                let ratio = match e.capacity {
                    Capacity::Finite(c) if c > 0.0 => f / c,
                    Capacity::Finite(_) => 0.0,
                    Capacity::Infinite if res.value > 0.0 => f / res.value,
                    Capacity::Infinite => 0.0,
                };
                (format!("{f:.4}/{cap_text}"), pen_width(ratio))
            }
            None => {
                let ratio = match e.capacity {
                    Capacity::Finite(c) if max_finite > 0.0 => c / max_finite,
                    Capacity::Finite(_) => 0.0,
                    Capacity::Infinite => 1.0,
                };
                (cap_text, pen_width(ratio))
            }
        };
        let style = if e.capacity.is_infinite() {
            ", style=dashed"
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "  {} -> {} [label=\"{}\", penwidth={:.3}{}];",
            node_name(net, e.from),
            node_name(net, e.to),
            label,
            width,
            style
        );
    }
    out.push_str("}\n");
    out
}

fn side_prefix(side: Side) -> &'static str {
    match side {
        Side::Encoder => "i",
        Side::Decoder => "o",
    }
}
