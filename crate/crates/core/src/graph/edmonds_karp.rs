use std::collections::VecDeque;

use super::{FlowNetwork, FlowResult, RESIDUAL_EPS};
use crate::error::Result;

/// Maximum flow by Edmonds-Karp over a dense residual matrix.
///
/// Kept deliberately plain so it can serve as an oracle for [`super::max_flow`].
pub fn max_flow_reference(net: &FlowNetwork) -> Result<FlowResult> {
    net.validate()?;
    let n = net.node_count();
    let infinite = net.infinite_value();
    let (s, t) = (net.source().0, net.terminal().0);

    let mut capacity = vec![0.0f64; n * n];
    for e in net.edges() {
        capacity[e.from.0 * n + e.to.0] += net.effective_capacity(e, infinite);
    }
    let mut residual = capacity.clone();

    loop {
        let parent = bfs(&residual, n, s);
        if parent[t].is_none() {
            break;
        }
        let mut bottleneck = f64::INFINITY;
        let mut v = t;
        while v != s {
            let u = parent[v].unwrap();
            bottleneck = bottleneck.min(residual[u * n + v]);
            v = u;
        }
        if bottleneck <= RESIDUAL_EPS {
            break;
        }
        let mut v = t;
        while v != s {
            let u = parent[v].unwrap();
            residual[u * n + v] -= bottleneck;
            residual[v * n + u] += bottleneck;
            v = u;
        }
    }

    // Layered networks never hold antiparallel pairs, so the net flow on
    // (u, v) is simply what the forward residual lost. Parallel edges share
    // it greedily in insertion order.
    let mut remaining: Vec<f64> = capacity
        .iter()
        .zip(&residual)
        .map(|(c, r)| (c - r).max(0.0))
        .collect();
    let flows = net
        .edges()
        .iter()
        .map(|e| {
            let cap = net.effective_capacity(e, infinite);
            let slot = &mut remaining[e.from.0 * n + e.to.0];
            let f = slot.min(cap);
            *slot -= f;
            f
        })
        .collect();

    let parent = bfs(&residual, n, s);
    let source_side = parent.iter().map(Option::is_some).collect();
    FlowResult::assemble(net, infinite, flows, source_side)
}

/// Breadth-first search over positive residuals; `parent[s] = Some(s)`.
fn bfs(residual: &[f64], n: usize, s: usize) -> Vec<Option<usize>> {
    let mut parent = vec![None; n];
    parent[s] = Some(s);
    let mut queue = VecDeque::from([s]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if parent[v].is_none() && residual[u * n + v] > RESIDUAL_EPS {
                parent[v] = Some(u);
                queue.push_back(v);
            }
        }
    }
    parent
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::super::{Capacity, FlowNetwork};
    use super::*;

    #[test]
    fn single_chain() {
        let (net, _) = chain(1.0);
        assert_eq!(max_flow_reference(&net).unwrap().value, 1.0);
    }

    #[test]
    fn competing_sources_share_the_bottleneck() {
        let (net, _) = competition();
        assert!((max_flow_reference(&net).unwrap().value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_capacity_network() {
        let (net, _) = chain(0.0);
        let res = max_flow_reference(&net).unwrap();
        assert_eq!(res.value, 0.0);
        assert_eq!(res.cut_capacity, 0.0);
    }

    #[test]
    fn parallel_edges_split_flow() {
        let mut net = FlowNetwork::new();
        let a = net.add_token_node(token(0, 0));
        let b = net.add_token_node(token(1, 0));
        net.add_edge(net.source(), a, Capacity::Infinite);
        net.add_edge(a, b, Capacity::Finite(0.3));
        net.add_edge(a, b, Capacity::Finite(0.2));
        net.add_edge(b, net.terminal(), Capacity::Finite(0.4));
        let res = max_flow_reference(&net).unwrap();
        assert!((res.value - 0.4).abs() < 1e-12);
        assert!(res.violations(&net).is_empty());
    }
}
