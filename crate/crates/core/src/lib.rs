//! Attention flow: Transformer attention tensors as layered flow networks.
//!
//! * [`bundle`] reads, writes and validates attention bundles.
//! * [`graph`] holds the flow network type, a Dinic solver, an
//!   Edmonds-Karp reference solver and Graphviz export.
//! * [`build`] wires encoder, decoder and encoder-decoder attention into
//!   networks, with head selection, residual mixing and shrinking.
//! * [`analysis`] normalizes flows, assembles heatmap matrices, runs
//!   per-head sweeps and produces Shapley reports.

pub mod analysis;
pub mod build;
pub mod bundle;
pub mod error;
pub mod graph;

pub use analysis::{
    flow_matrix, joint_flow, normalization_constant, paper_divisor, per_head_flows, shapley_values,
    token_flow, Analyzer, FlowMatrix, FlowValue, NormalizationMode, ShapleyReport,
};
pub use build::{
    apply_residual, average_heads, build_decoder_network, build_encdec_network,
    build_encoder_network, build_network, group_tokens, merge_layers, BuildSpec, HeadSet,
    NetworkKind, Partition, Target, TokenGrouping,
};
pub use bundle::{read_bundle, validate_bundle, write_bundle, AttentionBundle, ValidationReport};
pub use error::{Error, Result};
pub use graph::{max_flow, max_flow_reference, Capacity, FlowNetwork, FlowResult, NodeId, Side};
