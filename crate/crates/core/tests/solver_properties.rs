mod common;

use attnflow::graph::{Capacity, FlowNetwork, Side};
use attnflow::{group_tokens, max_flow, max_flow_reference, Partition};
use common::random_network;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn with_capacity(net: &FlowNetwork, edge: usize, cap: f64) -> FlowNetwork {
    let mut out = FlowNetwork::new();
    for (_, t) in net.token_nodes() {
        out.add_token_node(*t);
    }
    for (i, e) in net.edges().iter().enumerate() {
        let c = if i == edge {
            Capacity::Finite(cap)
        } else {
            e.capacity
        };
        out.add_edge(e.from, e.to, c);
    }
    out
}

#[test]
fn dinic_agrees_with_edmonds_karp() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa77e);
    for _ in 0..500 {
        let net = random_network(&mut rng, 6, 8);
        let fast = max_flow(&net).unwrap();
        let slow = max_flow_reference(&net).unwrap();
        assert!(
            (fast.value - slow.value).abs() < 1e-9,
            "{} vs {}",
            fast.value,
            slow.value
        );
        assert!((fast.value - fast.cut_capacity).abs() < 1e-9);
        assert!((slow.value - slow.cut_capacity).abs() < 1e-9);
        assert!(
            fast.violations(&net).is_empty(),
            "{:?}",
            fast.violations(&net)
        );
        assert!(
            slow.violations(&net).is_empty(),
            "{:?}",
            slow.violations(&net)
        );
    }
}

#[test]
fn source_edge_map_sums_to_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..200 {
        let net = random_network(&mut rng, 5, 6);
        let res = max_flow(&net).unwrap();
        let total: f64 = res.flow_by_source_edge().values().sum();
        assert!((total - res.value).abs() < 1e-9);
        for (id, _) in net.token_nodes() {
            let (i, o) = (res.node_inflow(id).unwrap(), res.node_outflow(id).unwrap());
            assert!((i - o).abs() < 1e-9);
        }
    }
}

#[test]
fn raising_a_capacity_never_lowers_the_flow() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..200 {
        let net = random_network(&mut rng, 5, 6);
        let finite: Vec<(usize, f64)> = net
            .edges()
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.capacity.finite().map(|c| (i, c)))
            .collect();
        if finite.is_empty() {
            continue;
        }
        let (edge, cap) = finite[rng.gen_range(0..finite.len())];
        let before = max_flow(&net).unwrap().value;
        let after = max_flow(&with_capacity(&net, edge, cap + rng.gen::<f64>()))
            .unwrap()
            .value;
        assert!(after >= before - 1e-9, "{after} < {before}");
    }
}

#[test]
fn scaling_capacities_scales_the_flow() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..200 {
        let net = random_network(&mut rng, 5, 6);
        let lambda = rng.gen_range(0.1..5.0);
        let base = max_flow(&net).unwrap().value;
        let scaled = max_flow(&net.map_finite_capacities(|c| c * lambda))
            .unwrap()
            .value;
        assert!(
            (scaled - lambda * base).abs() < 1e-9,
            "{scaled} vs {}",
            lambda * base
        );
    }
}

#[test]
fn solving_twice_is_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..50 {
        let net = random_network(&mut rng, 6, 8);
        let a = max_flow(&net).unwrap();
        let b = max_flow(&net).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.cut_capacity, b.cut_capacity);
    }
}

#[test]
fn grouping_never_decreases_flow() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    for _ in 0..200 {
        let net = random_network(&mut rng, 6, 8);
        let rows = net.token_nodes().map(|(_, t)| t.token + 1).max().unwrap();
        let mut runs = Vec::new();
        let mut start = 0;
        while start < rows {
            let len = rng.gen_range(1..=3).min(rows - start);
            runs.push(start..start + len);
            start += len;
        }
        let groups = Partition::new(runs, rows).unwrap();
        let grouped = group_tokens(&net, Side::Decoder, &groups).unwrap();
        grouped.validate().unwrap();
        let before = max_flow(&net).unwrap().value;
        let after = max_flow(&grouped).unwrap().value;
        assert!(after >= before - 1e-9, "{after} < {before}");
        assert!((after - max_flow_reference(&grouped).unwrap().value).abs() < 1e-9);
    }
}
