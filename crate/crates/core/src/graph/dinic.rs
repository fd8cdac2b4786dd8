use std::collections::VecDeque;

use super::{FlowNetwork, FlowResult, RESIDUAL_EPS};
use crate::error::Result;

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    residual: f64,
    rev: usize,
}

struct Dinic {
    adj: Vec<Vec<Arc>>,
    level: Vec<Option<u32>>,
    next: Vec<usize>,
}

impl Dinic {
    fn new(n: usize) -> Self {
        Dinic {
            adj: vec![Vec::new(); n],
            level: vec![None; n],
            next: vec![0; n],
        }
    }

    fn add_arc(&mut self, from: usize, to: usize, cap: f64) -> (usize, usize) {
        let fwd = self.adj[from].len();
        let bwd = self.adj[to].len();
        self.adj[from].push(Arc {
            to,
            residual: cap,
            rev: bwd,
        });
        self.adj[to].push(Arc {
            to: from,
            residual: 0.0,
            rev: fwd,
        });
        (from, fwd)
    }

    fn build_levels(&mut self, s: usize, t: usize) -> bool {
        self.level.iter_mut().for_each(|l| *l = None);
        self.level[s] = Some(0);
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            let next_level = self.level[u].map(|l| l + 1);
            for arc in &self.adj[u] {
                if arc.residual > RESIDUAL_EPS && self.level[arc.to].is_none() {
                    self.level[arc.to] = next_level;
                    queue.push_back(arc.to);
                }
            }
        }
        self.level[t].is_some()
    }

    fn push(&mut self, u: usize, t: usize, limit: f64) -> f64 {
        if u == t {
            return limit;
        }
        while self.next[u] < self.adj[u].len() {
            let i = self.next[u];
            let Arc { to, residual, rev } = self.adj[u][i];
            let advances = match (self.level[u], self.level[to]) {
                (Some(a), Some(b)) => b == a + 1,
                _ => false,
            };
            if advances && residual > RESIDUAL_EPS {
                let pushed = self.push(to, t, limit.min(residual));
                if pushed > RESIDUAL_EPS {
                    self.adj[u][i].residual -= pushed;
                    self.adj[to][rev].residual += pushed;
                    return pushed;
                }
            }
            self.next[u] += 1;
        }
        0.0
    }

    fn run(&mut self, s: usize, t: usize) {
        while self.build_levels(s, t) {
            self.next.iter_mut().for_each(|i| *i = 0);
            while self.push(s, t, f64::INFINITY) > RESIDUAL_EPS {}
        }
    }
}

/// Maximum flow by Dinic's algorithm (level graph plus blocking flow).
pub fn max_flow(net: &FlowNetwork) -> Result<FlowResult> {
    net.validate()?;
    let infinite = net.infinite_value();
    let mut solver = Dinic::new(net.node_count());
    let handles: Vec<(usize, usize, f64)> = net
        .edges()
        .iter()
        .map(|e| {
            let cap = net.effective_capacity(e, infinite);
            let (u, i) = solver.add_arc(e.from.0, e.to.0, cap);
            (u, i, cap)
        })
        .collect();
    let (s, t) = (net.source().0, net.terminal().0);
    solver.run(s, t);

    let flows = handles
        .iter()
        .map(|&(u, i, cap)| (cap - solver.adj[u][i].residual).clamp(0.0, cap))
        .collect();
    // After the final failed BFS the levelled nodes are exactly the source side.
    let source_side = solver.level.iter().map(Option::is_some).collect();
    FlowResult::assemble(net, infinite, flows, source_side)
}
