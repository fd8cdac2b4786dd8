//! Token attribution from max-flows: normalization for positional
//! independence, heatmap matrices, per-head sweeps and Shapley reports.
//!
//! Decoder flows are biased towards late tokens, which reach the
//! prediction embedding through fewer causal layers of competition. The
//! default [`NormalizationMode::UniformOracle`] divides every raw flow by
//! the flow the same network would carry if every attention entry were 1,
//! so a bundle with constant attention `c` scores exactly `c` everywhere.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::Serialize;

use crate::build::{
    build_from_stacks, prepare_stacks, BuildSpec, HeadSet, LayerStacks, NetworkKind, Target,
    TokenGrouping,
};
use crate::bundle::AttentionBundle;
use crate::error::{Error, Result};
use crate::graph::max_flow;

/// Flows below this are considered zero when checking normalization constants.
const DEGENERATE_FLOW: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMode {
    /// Divide by the max-flow of the same topology with unit capacities.
    #[default]
    UniformOracle,
    /// Divide by `1 + (N - (n - m)) - m` with 1-based `n` and `m`.
    PaperFormula,
    None,
}

/// The literal divisor `1 + (N - (n - m)) - m`, all arguments 1-based.
/// The `m` terms cancel, leaving `1 + N - n`.
pub fn paper_divisor(tokens: usize, step: usize, source: usize) -> f64 {
    let (n_tok, n, m) = (tokens as f64, step as f64, source as f64);
    1.0 + (n_tok - (n - m)) - m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowValue {
    pub raw: f64,
    /// `None` when no normalization applies (encoder kind or mode `none`).
    pub divisor: Option<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct TopologyKey {
    kind: NetworkKind,
    shapes: [Option<[usize; 3]>; 3],
    sources: Vec<usize>,
    target: Target,
    token_groups: Vec<TokenGrouping>,
}

/// Analysis entry point over one bundle. Caches uniform-oracle constants,
/// which depend only on topology.
pub struct Analyzer<'a> {
    bundle: &'a AttentionBundle,
    uniform_cache: Mutex<HashMap<TopologyKey, f64>>,
}

impl<'a> Analyzer<'a> {
    pub fn new(bundle: &'a AttentionBundle) -> Self {
        Analyzer {
            bundle,
            uniform_cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn bundle(&self) -> &AttentionBundle {
        self.bundle
    }

    pub fn normalization_constant(&self, spec: &BuildSpec, mode: NormalizationMode) -> Result<f64> {
        let stacks = prepare_stacks(self.bundle, spec)?;
        self.constant_for(&stacks, spec, mode)?.ok_or_else(|| {
            Error::Normalization("no normalization applies to this kind or mode".into())
        })
    }

    fn constant_for(
        &self,
        stacks: &LayerStacks,
        spec: &BuildSpec,
        mode: NormalizationMode,
    ) -> Result<Option<f64>> {
        if spec.kind == NetworkKind::Encoder {
            return Ok(None);
        }
        let constant = match mode {
            NormalizationMode::None => return Ok(None),
            NormalizationMode::PaperFormula => {
                let [source] = spec.sources.as_slice() else {
                    return Err(Error::Normalization(
                        "the literal divisor is defined for single-token sources only".into(),
                    ));
                };
                let n = spec
                    .step()
                    .ok_or_else(|| Error::spec("decoder kinds need a prediction step"))?;
                // Internal step n predicts output token n (0-based), i.e. o_{n+1}.
                paper_divisor(self.bundle.output_len(), n + 1, source + 1)
            }
            NormalizationMode::UniformOracle => {
                let mut sources = spec.sources.clone();
                sources.sort_unstable();
                sources.dedup();
                let key = TopologyKey {
                    kind: spec.kind,
                    shapes: stacks.shape_key(),
                    sources,
                    target: spec.target.clone(),
                    token_groups: spec.token_groups.clone(),
                };
                if let Some(&c) = self.uniform_cache.lock().unwrap().get(&key) {
                    return Ok(Some(c));
                }
                let net = build_from_stacks(&stacks.uniform(1.0), spec)?;
                let c = max_flow(&net)?.value;
                self.uniform_cache.lock().unwrap().insert(key, c);
                c
            }
        };
        if constant.is_nan() || constant <= DEGENERATE_FLOW {
            return Err(Error::Normalization(format!(
                "normalization constant {constant} is not positive"
            )));
        }
        Ok(Some(constant))
    }

    fn flow_with(
        &self,
        stacks: &LayerStacks,
        spec: &BuildSpec,
        mode: NormalizationMode,
    ) -> Result<FlowValue> {
        let net = build_from_stacks(stacks, spec)?;
        let raw = max_flow(&net)?.value;
        let divisor = self.constant_for(stacks, spec, mode)?;
        Ok(FlowValue {
            raw,
            divisor,
            value: divisor.map_or(raw, |d| raw / d),
        })
    }

    /// Max-flow from the spec's sources to its target, normalized per `mode`.
    pub fn token_flow(&self, spec: &BuildSpec, mode: NormalizationMode) -> Result<FlowValue> {
        let stacks = prepare_stacks(self.bundle, spec)?;
        self.flow_with(&stacks, spec, mode)
    }

    /// Flow with every member of the spec's source set attached at once.
    /// Members compete for downstream capacity, so this is not a sum of
    /// singleton flows.
    pub fn joint_flow(&self, spec: &BuildSpec, mode: NormalizationMode) -> Result<FlowValue> {
        self.token_flow(spec, mode)
    }

    /// One flow per head, computed with each head alone.
    pub fn per_head_flows(
        &self,
        spec: &BuildSpec,
        mode: NormalizationMode,
    ) -> Result<Vec<FlowValue>> {
        (0..self.bundle.heads)
            .into_par_iter()
            .map(|h| {
                let single = spec
                    .clone()
                    .with_heads(HeadSet::single(h, self.bundle.heads)?);
                self.token_flow(&single, mode)
            })
            .collect()
    }

    /// Heatmap matrices for `template.kind`. The template's sources and
    /// step are ignored; its terminal set is used for the encoder kind.
    /// The encoder-decoder kind yields an input-token matrix followed by an
    /// output-token matrix computed with the decoder-only construction.
    pub fn flow_matrices(
        &self,
        template: &BuildSpec,
        mode: NormalizationMode,
    ) -> Result<Vec<FlowMatrix>> {
        match template.kind {
            NetworkKind::Encoder => Ok(vec![self.encoder_matrix(template)?]),
            NetworkKind::Decoder => Ok(vec![self.step_matrix(template, mode, "decoder")?]),
            NetworkKind::EncoderDecoder => {
                let input = self.step_matrix(template, mode, "input")?;
                let mut dec = template.clone();
                dec.kind = NetworkKind::Decoder;
                dec.token_groups.clear();
                let output = self.step_matrix(&dec, mode, "output")?;
                Ok(vec![input, output])
            }
        }
    }

    /// [`Self::flow_matrices`] once per head, each tagged with its head index.
    pub fn flow_matrices_per_head(
        &self,
        template: &BuildSpec,
        mode: NormalizationMode,
    ) -> Result<Vec<FlowMatrix>> {
        let per_head: Vec<Vec<FlowMatrix>> = (0..self.bundle.heads)
            .map(|h| {
                let spec = template
                    .clone()
                    .with_heads(HeadSet::single(h, self.bundle.heads)?);
                let mut ms = self.flow_matrices(&spec, mode)?;
                ms.iter_mut().for_each(|m| m.head = Some(h));
                Ok(ms)
            })
            .collect::<Result<_>>()?;
        Ok(per_head.into_iter().flatten().collect())
    }

    fn encoder_matrix(&self, template: &BuildSpec) -> Result<FlowMatrix> {
        let Target::Terminals(terminals) = &template.target else {
            return Err(Error::spec("encoder kind needs a terminal position set"));
        };
        let stacks = prepare_stacks(self.bundle, template)?;
        let tokens = &self.bundle.input_tokens;
        let cells: Vec<f64> = (0..tokens.len())
            .into_par_iter()
            .map(|m| {
                let spec = template.clone().with_sources(vec![m]);
                Ok(self
                    .flow_with(&stacks, &spec, NormalizationMode::None)?
                    .value)
            })
            .collect::<Result<_>>()?;
        let label = terminals
            .iter()
            .map(|&j| tokens.get(j).cloned().unwrap_or_default())
            .collect::<Vec<_>>()
            .join(" ");
        Ok(FlowMatrix {
            name: "encoder".into(),
            head: None,
            rows: axis_labels(tokens),
            columns: vec![ColumnLabel {
                step: None,
                token: label,
            }],
            cells: cells.into_iter().map(|v| vec![Some(v)]).collect(),
        })
    }

    fn step_matrix(
        &self,
        template: &BuildSpec,
        mode: NormalizationMode,
        name: &str,
    ) -> Result<FlowMatrix> {
        let stacks = prepare_stacks(self.bundle, template)?;
        let outputs = &self.bundle.output_tokens;
        let (rows, causal) = match template.kind {
            NetworkKind::Decoder => (outputs, true),
            _ => (&self.bundle.input_tokens, false),
        };
        let steps: Vec<usize> = (1..outputs.len()).collect();
        let tasks: Vec<(usize, usize)> = (0..rows.len())
            .flat_map(|m| steps.iter().map(move |&n| (m, n)))
            .filter(|&(m, n)| !causal || m < n)
            .collect();
        let values: Vec<f64> = tasks
            .par_iter()
            .map(|&(m, n)| {
                let spec = template
                    .clone()
                    .with_sources(vec![m])
                    .with_target(Target::Step(n));
                Ok(self.flow_with(&stacks, &spec, mode)?.value)
            })
            .collect::<Result<_>>()?;
        let mut cells = vec![vec![None; steps.len()]; rows.len()];
        for (&(m, n), v) in tasks.iter().zip(values) {
            cells[m][n - 1] = Some(v);
        }
        Ok(FlowMatrix {
            name: name.into(),
            head: None,
            rows: axis_labels(rows),
            columns: steps
                .iter()
                .map(|&n| ColumnLabel {
                    step: Some(n),
                    token: outputs[n].clone(),
                })
                .collect(),
            cells,
        })
    }

    /// Shapley values of `players` under the sum-of-independent-flows game.
    pub fn shapley_values(
        &self,
        template: &BuildSpec,
        players: &[usize],
        mode: NormalizationMode,
    ) -> Result<ShapleyReport> {
        let stacks = prepare_stacks(self.bundle, template)?;
        let values: Vec<f64> = players
            .par_iter()
            .map(|&p| {
                let spec = template.clone().with_sources(vec![p]);
                Ok(self.flow_with(&stacks, &spec, mode)?.value)
            })
            .collect::<Result<_>>()?;
        Ok(ShapleyReport::from_values(players.to_vec(), values))
    }
}

fn axis_labels(tokens: &[String]) -> Vec<AxisLabel> {
    tokens
        .iter()
        .enumerate()
        .map(|(index, token)| AxisLabel {
            index,
            token: token.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxisLabel {
    pub index: usize,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnLabel {
    /// Prediction step; `None` for the single encoder column.
    pub step: Option<usize>,
    pub token: String,
}

/// Source tokens by prediction steps. Cells the construction forbids
/// (source not before the step) are `None` and serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowMatrix {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head: Option<usize>,
    pub rows: Vec<AxisLabel>,
    pub columns: Vec<ColumnLabel>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl FlowMatrix {
    pub fn max_value(&self) -> f64 {
        self.cells
            .iter()
            .flatten()
            .flatten()
            .copied()
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapleyReport {
    pub players: Vec<usize>,
    pub values: Vec<f64>,
    pub total: f64,
    pub efficiency_residual: f64,
}

impl ShapleyReport {
    fn from_values(players: Vec<usize>, values: Vec<f64>) -> Self {
        let total: f64 = values.iter().sum();
        let efficiency_residual = (total - values.iter().sum::<f64>()).abs();
        ShapleyReport {
            players,
            values,
            total,
            efficiency_residual,
        }
    }

    pub fn value_of(&self, player: usize) -> Option<f64> {
        self.players
            .iter()
            .position(|&p| p == player)
            .map(|i| self.values[i])
    }

    /// `v(S)`: the coalition's payoff, a sum of its members' flows.
    pub fn coalition_value(&self, coalition: &[usize]) -> f64 {
        self.players
            .iter()
            .zip(&self.values)
            .filter(|(p, _)| coalition.contains(p))
            .map(|(_, v)| v)
            .sum()
    }

    /// Report for the game `v + w`; both reports must cover the same players.
    pub fn combine(&self, other: &ShapleyReport) -> Result<ShapleyReport> {
        if self.players != other.players {
            return Err(Error::spec("reports cover different players"));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(ShapleyReport::from_values(self.players.clone(), values))
    }
}

pub fn normalization_constant(
    bundle: &AttentionBundle,
    spec: &BuildSpec,
    mode: NormalizationMode,
) -> Result<f64> {
    Analyzer::new(bundle).normalization_constant(spec, mode)
}

pub fn token_flow(
    bundle: &AttentionBundle,
    spec: &BuildSpec,
    mode: NormalizationMode,
) -> Result<f64> {
    Ok(Analyzer::new(bundle).token_flow(spec, mode)?.value)
}

pub fn joint_flow(
    bundle: &AttentionBundle,
    spec: &BuildSpec,
    mode: NormalizationMode,
) -> Result<f64> {
    Ok(Analyzer::new(bundle).joint_flow(spec, mode)?.value)
}

pub fn flow_matrix(
    bundle: &AttentionBundle,
    template: &BuildSpec,
    mode: NormalizationMode,
) -> Result<Vec<FlowMatrix>> {
    Analyzer::new(bundle).flow_matrices(template, mode)
}

pub fn per_head_flows(
    bundle: &AttentionBundle,
    spec: &BuildSpec,
    mode: NormalizationMode,
) -> Result<Vec<f64>> {
    Ok(Analyzer::new(bundle)
        .per_head_flows(spec, mode)?
        .into_iter()
        .map(|f| f.value)
        .collect())
}

pub fn shapley_values(
    bundle: &AttentionBundle,
    template: &BuildSpec,
    players: &[usize],
    mode: NormalizationMode,
) -> Result<ShapleyReport> {
    Analyzer::new(bundle).shapley_values(template, players, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::build::{build_network, HeadSet};
    use crate::graph::max_flow_reference;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dec_bundle(tensor: Array4<f32>) -> AttentionBundle {
        let n = tensor.shape()[2];
        AttentionBundle {
            model_name: "toy".into(),
            heads: tensor.shape()[0],
            enc_layers: 0,
            dec_layers: tensor.shape()[1],
            input_tokens: vec![],
            output_tokens: (0..n).map(|i| format!("o{i}")).collect(),
            enc_self: None,
            dec_self: Some(tensor),
            cross: None,
        }
    }

    fn constant_decoder(heads: usize, layers: usize, n: usize, c: f32) -> AttentionBundle {
        dec_bundle(Array4::from_shape_fn(
            [heads, layers, n, n],
            |(_, _, k, j)| {
                if j <= k {
                    c
                } else {
                    0.0
                }
            },
        ))
    }

    fn random_decoder(
        rng: &mut impl Rng,
        heads: usize,
        layers: usize,
        n: usize,
    ) -> AttentionBundle {
        dec_bundle(Array4::from_shape_fn(
            [heads, layers, n, n],
            |(_, _, k, j)| {
                if j <= k {
                    rng.gen::<f32>()
                } else {
                    0.0
                }
            },
        ))
    }

    fn dec_spec(source: usize, step: usize, heads: usize) -> BuildSpec {
        BuildSpec::decoder(vec![source], step, HeadSet::all(heads).unwrap()).with_residual(false)
    }

    #[test]
    fn paper_divisor_examples() {
        assert_eq!(paper_divisor(5, 5, 4), 1.0);
        assert_eq!(paper_divisor(5, 2, 1), 4.0);
    }

    #[test]
    fn adjacent_source_has_unit_uniform_constant() {
        let bundle = constant_decoder(1, 3, 5, 0.3);
        for n in 1..=5 {
            let c = normalization_constant(
                &bundle,
                &dec_spec(n - 1, n, 1),
                NormalizationMode::UniformOracle,
            )
            .unwrap();
            // Reference route: unit network through the oracle solver.
            let unit =
                build_network(&constant_decoder(1, 3, 5, 1.0), &dec_spec(n - 1, n, 1)).unwrap();
            assert!((c - max_flow_reference(&unit).unwrap().value).abs() < 1e-12);
            assert!((c - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn literal_mode_rejects_coalitions_and_encoder_has_no_constant() {
        let bundle = constant_decoder(1, 2, 4, 0.5);
        let spec = dec_spec(0, 3, 1).with_sources(vec![0, 1]);
        assert!(normalization_constant(&bundle, &spec, NormalizationMode::PaperFormula).is_err());
        assert!(normalization_constant(&bundle, &spec, NormalizationMode::UniformOracle).is_ok());
        assert!(normalization_constant(&bundle, &spec, NormalizationMode::None).is_err());
    }

    #[test]
    fn literal_mode_divides_by_one_plus_n_minus_step() {
        let bundle = constant_decoder(1, 2, 5, 0.5);
        let analyzer = Analyzer::new(&bundle);
        let f = analyzer
            .token_flow(&dec_spec(0, 1, 1), NormalizationMode::PaperFormula)
            .unwrap();
        // internal step 1 is o_2 in 1-based terms, source o_1: 1 + (5 - 1) - 1.
        assert_eq!(f.divisor, Some(4.0));
        assert_eq!(f.value, f.raw / 4.0);
    }

    #[test]
    fn zero_step_divisor_is_rejected() {
        let bundle = constant_decoder(1, 2, 3, 0.5);
        // Step N has divisor 1 + N - (N + 1) = 0.
        let err = token_flow(&bundle, &dec_spec(0, 3, 1), NormalizationMode::PaperFormula);
        assert!(matches!(err, Err(Error::Normalization(_))));
    }

    #[test]
    fn single_chain_raw_flow_is_the_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (layers, n) = (rng.gen_range(1..5), rng.gen_range(2..7));
            let m = rng.gen_range(0..n);
            let c: f32 = rng.gen_range(0.05..1.0);
            let mut bundle = random_decoder(&mut rng, 1, layers, n);
            let t = bundle.dec_self.as_mut().unwrap();
            for l in 0..layers {
                t[[0, l, m, m]] = c;
            }
            let raw = token_flow(&bundle, &dec_spec(m, m + 1, 1), NormalizationMode::None).unwrap();
            assert!((raw - f64::from(c)).abs() < 1e-9, "{raw} vs {c}");
        }
    }

    #[test]
    fn constant_bundles_are_positionally_independent() {
        for c in [0.3f32, 1.0] {
            for n_tok in 2..=8 {
                for layers in 1..=4 {
                    let bundle = constant_decoder(2, layers, n_tok, c);
                    let analyzer = Analyzer::new(&bundle);
                    for n in 1..=n_tok {
                        for m in 0..n {
                            let f = analyzer
                                .token_flow(&dec_spec(m, n, 2), NormalizationMode::UniformOracle)
                                .unwrap();
                            assert!((f.value - f64::from(c)).abs() < 1e-9);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn zero_attention_gives_zero_flow() {
        let bundle = constant_decoder(1, 2, 4, 0.0);
        let v = token_flow(
            &bundle,
            &dec_spec(0, 3, 1),
            NormalizationMode::UniformOracle,
        )
        .unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn decoder_matrix_shape() {
        let bundle = constant_decoder(1, 2, 3, 0.5);
        let template = dec_spec(0, 1, 1);
        let ms = flow_matrix(&bundle, &template, NormalizationMode::UniformOracle).unwrap();
        assert_eq!(ms.len(), 1);
        let m = &ms[0];
        assert_eq!(
            m.columns.iter().map(|c| c.step).collect::<Vec<_>>(),
            vec![Some(1), Some(2)]
        );
        for (row, cells) in m.cells.iter().enumerate() {
            for (col, cell) in cells.iter().enumerate() {
                let step = col + 1;
                assert_eq!(cell.is_some(), row < step);
                if let Some(v) = cell {
                    assert!((v - 0.5).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn matrices_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bundle = random_decoder(&mut rng, 2, 3, 6);
        let template = BuildSpec::decoder(vec![0], 1, HeadSet::all(2).unwrap());
        let a = flow_matrix(&bundle, &template, NormalizationMode::UniformOracle).unwrap();
        let b = flow_matrix(&bundle, &template, NormalizationMode::UniformOracle).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn per_head_matches_single_head_flows() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bundle = random_decoder(&mut rng, 2, 2, 4);
        let spec = BuildSpec::decoder(vec![1], 3, HeadSet::all(2).unwrap());
        let per_head = per_head_flows(&bundle, &spec, NormalizationMode::UniformOracle).unwrap();
        assert_eq!(per_head.len(), 2);
        for (h, v) in per_head.iter().enumerate() {
            let single = spec.clone().with_heads(HeadSet::single(h, 2).unwrap());
            assert_eq!(
                *v,
                token_flow(&bundle, &single, NormalizationMode::UniformOracle).unwrap()
            );
        }
    }

    #[test]
    fn identical_and_silent_heads() {
        let base = constant_decoder(1, 2, 4, 0.4);
        let t = base.dec_self.as_ref().unwrap();
        let mut three = Array4::zeros([3, 2, 4, 4]);
        for h in 0..2 {
            three
                .index_axis_mut(ndarray::Axis(0), h)
                .assign(&t.index_axis(ndarray::Axis(0), 0));
        }
        let bundle = dec_bundle(three);
        let spec = BuildSpec::decoder(vec![0], 3, HeadSet::all(3).unwrap()).with_residual(false);
        let v = per_head_flows(&bundle, &spec, NormalizationMode::UniformOracle).unwrap();
        assert_eq!(v[0], v[1]);
        assert_eq!(v[2], 0.0);
    }

    #[test]
    fn single_head_mean_equals_its_only_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let bundle = random_decoder(&mut rng, 1, 3, 5);
        let spec = BuildSpec::decoder(vec![1], 4, HeadSet::all(1).unwrap());
        let all = token_flow(&bundle, &spec, NormalizationMode::UniformOracle).unwrap();
        let per = per_head_flows(&bundle, &spec, NormalizationMode::UniformOracle).unwrap();
        assert_eq!(per, vec![all]);
    }

    #[test]
    fn competition_counterexample() {
        let mut t = Array4::zeros([1, 2, 4, 4]);
        t[[0, 0, 2, 0]] = 0.5;
        t[[0, 0, 2, 1]] = 0.5;
        t[[0, 1, 3, 2]] = 0.5;
        let bundle = dec_bundle(t);
        let joint = joint_flow(
            &bundle,
            &dec_spec(0, 4, 1).with_sources(vec![0, 1]),
            NormalizationMode::None,
        )
        .unwrap();
        let singles: f64 = [0, 1]
            .iter()
            .map(|&m| token_flow(&bundle, &dec_spec(m, 4, 1), NormalizationMode::None).unwrap())
            .sum();
        assert!((joint - 0.5).abs() < 1e-12);
        assert!((singles - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shapley_report_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let bundle = random_decoder(&mut rng, 2, 2, 5);
        let template = BuildSpec::decoder(vec![0], 4, HeadSet::all(2).unwrap());
        let report = shapley_values(
            &bundle,
            &template,
            &[0, 1, 2, 3],
            NormalizationMode::UniformOracle,
        )
        .unwrap();
        assert_eq!(report.efficiency_residual, 0.0);
        assert_eq!(report.total, report.values.iter().sum::<f64>());
        assert_eq!(report.coalition_value(&[0, 1, 2, 3]), report.total);
        let doubled = report.combine(&report).unwrap();
        for (a, b) in doubled.values.iter().zip(&report.values) {
            assert_eq!(*a, 2.0 * b);
        }
        assert!(shapley_values(&bundle, &template, &[4], NormalizationMode::None).is_err());
    }
}
