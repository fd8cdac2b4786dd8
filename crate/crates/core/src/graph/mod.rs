//! Layered flow networks and their max-flow solutions.
//!
//! Every network has exactly one source (node 0) and one terminal (node 1).
//! All other nodes are token embeddings placed in a column; edges between
//! token nodes must strictly increase the column, which keeps the graph
//! acyclic by construction.

mod dinic;
pub mod dot;
mod edmonds_karp;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

pub use dinic::max_flow;
pub use edmonds_karp::max_flow_reference;

/// Residual capacities at or below this are treated as exhausted.
pub const RESIDUAL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Encoder,
    Decoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenNode {
    pub side: Side,
    /// First token index covered by this node.
    pub token: usize,
    /// Number of consecutive tokens contracted into this node.
    pub span: usize,
    /// Layer index within the node's own stack (0 = embedded tokens).
    pub layer: usize,
    /// Global column used for the layering invariant and for drawing.
    pub column: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    Source,
    Terminal,
    Token(TokenNode),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Capacity {
    Finite(f64),
    Infinite,
}

impl Capacity {
    pub fn finite(self) -> Option<f64> {
        match self {
            Capacity::Finite(c) => Some(c),
            Capacity::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Capacity::Infinite)
    }
}

impl std::ops::Add for Capacity {
    type Output = Capacity;

    fn add(self, rhs: Capacity) -> Capacity {
        match (self, rhs) {
            (Capacity::Finite(a), Capacity::Finite(b)) => Capacity::Finite(a + b),
            _ => Capacity::Infinite,
        }
    }
}

impl fmt::Display for Capacity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Capacity::Finite(c) => write!(f, "{c}"),
            Capacity::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub capacity: Capacity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowNetwork {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

impl Default for FlowNetwork {
    fn default() -> Self {
        Self::new()
    }
}

impl FlowNetwork {
    pub fn new() -> Self {
        FlowNetwork {
            nodes: vec![Node::Source, Node::Terminal],
            edges: Vec::new(),
        }
    }

    pub fn source(&self) -> NodeId {
        NodeId(0)
    }

    pub fn terminal(&self) -> NodeId {
        NodeId(1)
    }

    pub fn add_token_node(&mut self, token: TokenNode) -> NodeId {
        self.nodes.push(Node::Token(token));
        NodeId(self.nodes.len() - 1)
    }

    pub fn add_edge(&mut self, from: NodeId, to: NodeId, capacity: Capacity) -> EdgeId {
        self.edges.push(Edge { from, to, capacity });
        EdgeId(self.edges.len() - 1)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(id.0).ok_or(Error::UnknownNode(id.0))
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn token_nodes(&self) -> impl Iterator<Item = (NodeId, &TokenNode)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n {
            Node::Token(t) => Some((NodeId(i), t)),
            _ => None,
        })
    }

    /// Finds the token node covering `token` at `layer` on `side`.
    pub fn find_token(&self, side: Side, token: usize, layer: usize) -> Option<NodeId> {
        self.token_nodes()
            .find(|(_, t)| {
                t.side == side && t.layer == layer && (t.token..t.token + t.span).contains(&token)
            })
            .map(|(id, _)| id)
    }

    /// Copy of the network with every finite capacity passed through `f`.
    pub fn map_finite_capacities(&self, f: impl Fn(f64) -> f64) -> FlowNetwork {
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                capacity: match e.capacity {
                    Capacity::Finite(c) => Capacity::Finite(f(c)),
                    Capacity::Infinite => Capacity::Infinite,
                },
                ..*e
            })
            .collect();
        FlowNetwork {
            nodes: self.nodes.clone(),
            edges,
        }
    }

    /// Stand-in value for infinite capacities: strictly larger than any cut
    /// made only of finite edges.
    pub fn infinite_value(&self) -> f64 {
        self.edges
            .iter()
            .filter_map(|e| e.capacity.finite())
            .sum::<f64>()
            + 1.0
    }

    pub(crate) fn effective_capacity(&self, edge: &Edge, infinite: f64) -> f64 {
        edge.capacity.finite().unwrap_or(infinite)
    }

    fn column(&self, id: NodeId) -> Option<usize> {
        match self.nodes[id.0] {
            Node::Token(t) => Some(t.column),
            _ => None,
        }
    }

    /// Checks the structural invariants every solver relies on.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::MalformedNetwork(msg));
        if self.nodes.len() < 2 || self.nodes[0] != Node::Source || self.nodes[1] != Node::Terminal
        {
            return bad("nodes 0 and 1 must be the source and terminal".into());
        }
        if let Some(i) = self.nodes[2..]
            .iter()
            .position(|n| !matches!(n, Node::Token(_)))
        {
            return bad(format!("node {} duplicates the source or terminal", i + 2));
        }
        for (i, e) in self.edges.iter().enumerate() {
            if e.from.0 >= self.nodes.len() || e.to.0 >= self.nodes.len() {
                return bad(format!("edge {i} references a missing node"));
            }
            if let Capacity::Finite(c) = e.capacity {
                if !c.is_finite() || c < 0.0 {
                    return bad(format!("edge {i} has invalid capacity {c}"));
                }
            }
            if e.to == self.source() {
                return bad(format!("edge {i} enters the source"));
            }
            if e.from == self.terminal() {
                return bad(format!("edge {i} leaves the terminal"));
            }
            if let (Some(a), Some(b)) = (self.column(e.from), self.column(e.to)) {
                if b <= a {
                    return bad(format!(
                        "edge {i} runs from column {a} to column {b}; columns must increase"
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdgeFlow {
    pub from: NodeId,
    pub to: NodeId,
    pub flow: f64,
}

/// A maximum flow together with its minimum-cut certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub value: f64,
    /// Parallel to [`FlowNetwork::edges`].
    pub edge_flows: Vec<EdgeFlow>,
    /// `true` for nodes reachable from the source in the final residual graph.
    pub source_side: Vec<bool>,
    pub cut_edges: Vec<EdgeId>,
    pub cut_capacity: f64,
}

impl FlowResult {
    pub(crate) fn assemble(
        net: &FlowNetwork,
        infinite: f64,
        flows: Vec<f64>,
        source_side: Vec<bool>,
    ) -> Result<FlowResult> {
        let mut cut_edges = Vec::new();
        let mut cut_capacity = 0.0;
        for (i, e) in net.edges().iter().enumerate() {
            if source_side[e.from.0] && !source_side[e.to.0] {
                if e.capacity.is_infinite() {
                    return Err(Error::Unbounded);
                }
                cut_edges.push(EdgeId(i));
                cut_capacity += net.effective_capacity(e, infinite);
            }
        }
        let edge_flows: Vec<EdgeFlow> = net
            .edges()
            .iter()
            .zip(flows)
            .map(|(e, flow)| EdgeFlow {
                from: e.from,
                to: e.to,
                flow,
            })
            .collect();
        let value = edge_flows
            .iter()
            .filter(|f| f.from == net.source())
            .map(|f| f.flow)
            .sum();
        Ok(FlowResult {
            value,
            edge_flows,
            source_side,
            cut_edges,
            cut_capacity,
        })
    }

    fn check_node(&self, v: NodeId) -> Result<()> {
        if v.0 < self.source_side.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode(v.0))
        }
    }

    pub fn node_outflow(&self, v: NodeId) -> Result<f64> {
        self.check_node(v)?;
        Ok(self
            .edge_flows
            .iter()
            .filter(|f| f.from == v)
            .map(|f| f.flow)
            .sum())
    }

    pub fn node_inflow(&self, v: NodeId) -> Result<f64> {
        self.check_node(v)?;
        Ok(self
            .edge_flows
            .iter()
            .filter(|f| f.to == v)
            .map(|f| f.flow)
            .sum())
    }

    /// Flow leaving the source, keyed by the first-hop node.
    pub fn flow_by_source_edge(&self) -> BTreeMap<NodeId, f64> {
        let source = NodeId(0);
        let mut map = BTreeMap::new();
        for f in self.edge_flows.iter().filter(|f| f.from == source) {
            *map.entry(f.to).or_insert(0.0) += f.flow;
        }
        map
    }

    /// Flow entering the network through the first-hop nodes in `nodes`.
    pub fn flow_through(&self, nodes: &[NodeId]) -> f64 {
        self.flow_by_source_edge()
            .iter()
            .filter(|(v, _)| nodes.contains(v))
            .map(|(_, f)| f)
            .sum()
    }

    /// Lists violated flow invariants (capacity, conservation, duality).
    pub fn violations(&self, net: &FlowNetwork) -> Vec<String> {
        let mut out = Vec::new();
        let infinite = net.infinite_value();
        for (i, (e, f)) in net.edges().iter().zip(&self.edge_flows).enumerate() {
            if f.flow < -RESIDUAL_EPS {
                out.push(format!("edge {i} carries negative flow {}", f.flow));
            }
            if let Capacity::Finite(c) = e.capacity {
                if f.flow > c + 1e-12 {
                    out.push(format!("edge {i} flow {} exceeds capacity {c}", f.flow));
                }
            } else if f.flow > infinite {
                out.push(format!(
                    "edge {i} flow {} exceeds infinite stand-in",
                    f.flow
                ));
            }
        }
        let mut balance = vec![0.0f64; net.node_count()];
        for f in &self.edge_flows {
            balance[f.from.0] -= f.flow;
            balance[f.to.0] += f.flow;
        }
        for (v, b) in balance.iter().enumerate().skip(2) {
            if b.abs() > 1e-9 {
                out.push(format!("node {v} violates conservation by {b}"));
            }
        }
        if (self.value - self.cut_capacity).abs() > 1e-9 {
            out.push(format!(
                "flow value {} differs from cut capacity {}",
                self.value, self.cut_capacity
            ));
        }
        out
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn rejects_decreasing_columns() {
        let mut net = FlowNetwork::new();
        let a = net.add_token_node(token(1, 0));
        let b = net.add_token_node(token(0, 0));
        net.add_edge(a, b, Capacity::Finite(1.0));
        assert!(matches!(net.validate(), Err(Error::MalformedNetwork(_))));
        assert!(max_flow(&net).is_err());
        assert!(max_flow_reference(&net).is_err());
    }

    #[test]
    fn rejects_negative_capacity() {
        let (mut net, a) = chain(1.0);
        net.add_edge(net.source(), a, Capacity::Finite(-0.1));
        assert!(net.validate().is_err());
    }

    #[test]
    fn rejects_edges_into_source() {
        let (mut net, a) = chain(1.0);
        net.add_edge(a, net.source(), Capacity::Finite(0.1));
        assert!(net.validate().is_err());
    }

    #[test]
    fn chain_node_flows() {
        let (net, a) = chain(1.0);
        let res = max_flow(&net).unwrap();
        assert_eq!(res.value, 1.0);
        assert_eq!(res.node_outflow(a).unwrap(), 1.0);
        assert_eq!(res.node_inflow(a).unwrap(), 1.0);
        assert!(res.node_outflow(NodeId(99)).is_err());
        assert_eq!(res.flow_by_source_edge(), BTreeMap::from([(a, 1.0)]));
    }

    #[test]
    fn competition_node_flows() {
        let (net, [o1, o2, o3]) = competition();
        for res in [max_flow(&net).unwrap(), max_flow_reference(&net).unwrap()] {
            assert!((res.value - 0.5).abs() < 1e-12);
            assert!((res.node_outflow(o3).unwrap() - 0.5).abs() < 1e-12);
            let by_source = res.flow_by_source_edge();
            assert!((by_source.values().sum::<f64>() - 0.5).abs() < 1e-12);
            assert!((res.flow_through(&[o1, o2]) - 0.5).abs() < 1e-12);
            assert!(res.violations(&net).is_empty());
        }
    }

    #[test]
    fn all_infinite_path_is_unbounded() {
        let mut net = FlowNetwork::new();
        let a = net.add_token_node(token(0, 0));
        net.add_edge(net.source(), a, Capacity::Infinite);
        net.add_edge(a, net.terminal(), Capacity::Infinite);
        assert!(matches!(max_flow(&net), Err(Error::Unbounded)));
        assert!(matches!(max_flow_reference(&net), Err(Error::Unbounded)));
    }

    #[test]
    fn capacity_sum_saturates_at_infinite() {
        assert_eq!(
            Capacity::Finite(0.3) + Capacity::Finite(0.2),
            Capacity::Finite(0.5)
        );
        assert_eq!(
            Capacity::Finite(0.3) + Capacity::Infinite,
            Capacity::Infinite
        );
    }
}
