use std::path::Path;

use anyhow::{Context, Result};
use attnflow::analysis::ShapleyReport;
use attnflow::graph::dot::{to_dot, DotOptions};
use attnflow::{
    build_network, max_flow, read_bundle, validate_bundle, Analyzer, AttentionBundle, BuildSpec,
    FlowMatrix, FlowValue, HeadSet, NetworkKind, NormalizationMode, Partition, Side, Target,
    TokenGrouping,
};
use serde::Serialize;

use crate::args::{
    Cli, Command, CommonArgs, DotArgs, FormatArg, KindArg, NormArg, OnOff, ValidateArgs,
};
use crate::emit::{matrices_to_csv, matrices_to_svg, to_json, write_atomic};
use crate::usage;

/// Runs one subcommand. `Ok` carries the exit status (validate reports
/// error findings with status 1); failures map through [`crate::exit_code`].
pub fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Validate(a) => validate(a),
        Command::Flow(a) => flow(a).map(|_| 0),
        Command::Heatmap(a) => heatmap(a).map(|_| 0),
        Command::Shapley(a) => shapley(a).map(|_| 0),
        Command::Heads(a) => heads(a).map(|_| 0),
        Command::ExportDot(a) => export_dot(a).map(|_| 0),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, text),
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn load(path: &Path) -> Result<AttentionBundle> {
    read_bundle(path).with_context(|| format!("reading bundle {}", path.display()))
}

fn validate(a: &ValidateArgs) -> Result<u8> {
    let bundle = load(&a.bundle)?;
    let report = validate_bundle(&bundle, a.tolerance);
    let mut text = String::new();
    for finding in &report.findings {
        text.push_str(&serde_json::to_string(finding)?);
        text.push('\n');
    }
    emit(a.out.as_deref(), &text)?;
    Ok(if report.has_errors() { 1 } else { 0 })
}

/// Comma list of indices and inclusive ranges, e.g. `0,2-4`.
fn parse_indices(text: &str, flag: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || usage(format!("--{flag}: cannot parse `{part}`"));
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => (part, part),
        };
        let lo: usize = lo.parse().map_err(|_| bad())?;
        let hi: usize = hi.parse().map_err(|_| bad())?;
        if hi < lo {
            return Err(bad());
        }
        out.extend(lo..=hi);
    }
    if out.is_empty() {
        return Err(usage(format!("--{flag} is empty")));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

enum HeadSelector {
    Set(HeadSet),
    Each,
}

fn infer_kind(bundle: &AttentionBundle) -> Result<NetworkKind> {
    match (bundle.enc_self.is_some(), bundle.dec_self.is_some()) {
        (true, true) => Ok(NetworkKind::EncoderDecoder),
        (true, false) => Ok(NetworkKind::Encoder),
        (false, true) => Ok(NetworkKind::Decoder),
        (false, false) => Err(usage("bundle holds no self-attention tensor")),
    }
}

fn kind_name(kind: NetworkKind) -> &'static str {
    match kind {
        NetworkKind::Encoder => "encoder",
        NetworkKind::Decoder => "decoder",
        NetworkKind::EncoderDecoder => "encdec",
    }
}

/// Splits `enc:RUNS;dec:RUNS` directives. A bare `RUNS` applies to `default`.
fn side_directives(text: &str, flag: &str, default: &[Side]) -> Result<Vec<(Side, String)>> {
    if !text.contains(':') {
        return Ok(default.iter().map(|&s| (s, text.to_string())).collect());
    }
    let mut out: Vec<(Side, String)> = Vec::new();
    for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (side, runs) = part
            .split_once(':')
            .ok_or_else(|| usage(format!("--{flag}: expected `enc:` or `dec:` in `{part}`")))?;
        let side = match side.trim() {
            "enc" => Side::Encoder,
            "dec" => Side::Decoder,
            other => return Err(usage(format!("--{flag}: unknown side `{other}`"))),
        };
        if out.iter().any(|(s, _)| *s == side) {
            return Err(usage(format!("--{flag}: side given twice")));
        }
        out.push((side, runs.trim().to_string()));
    }
    Ok(out)
}

fn partition(runs: &str, total: usize, flag: &str) -> Result<Partition> {
    Partition::parse(runs, total).map_err(|e| usage(format!("--{flag}: {e}")))
}

/// Resolved shared flags: the bundle, a build template and the options
/// each subcommand needs to interpret it.
struct Setup {
    bundle: AttentionBundle,
    kind: NetworkKind,
    heads: HeadSelector,
    mode: NormalizationMode,
    template: BuildSpec,
    sources_given: bool,
}

impl Setup {
    fn new(a: &CommonArgs) -> Result<Setup> {
        let bundle = load(&a.bundle)?;
        let kind = match a.kind {
            Some(KindArg::Enc) => NetworkKind::Encoder,
            Some(KindArg::Dec) => NetworkKind::Decoder,
            Some(KindArg::Encdec) => NetworkKind::EncoderDecoder,
            None => infer_kind(&bundle)?,
        };
        let needed: &[(bool, &str)] = match kind {
            NetworkKind::Encoder => &[(bundle.enc_self.is_some(), "enc_self")],
            NetworkKind::Decoder => &[(bundle.dec_self.is_some(), "dec_self")],
            NetworkKind::EncoderDecoder => &[
                (bundle.enc_self.is_some(), "enc_self"),
                (bundle.dec_self.is_some(), "dec_self"),
                (bundle.cross.is_some(), "cross"),
            ],
        };
        for (present, name) in needed {
            if !present {
                return Err(usage(format!(
                    "--kind {}: bundle has no {name} tensor",
                    kind_name(kind)
                )));
            }
        }

        let heads = match a.heads.trim() {
            "all" => HeadSelector::Set(HeadSet::all(bundle.heads)?),
            "each" => HeadSelector::Each,
            list => HeadSelector::Set(
                HeadSet::new(parse_indices(list, "heads")?, bundle.heads)
                    .map_err(|e| usage(format!("--heads: {e}")))?,
            ),
        };
        let template_heads = match &heads {
            HeadSelector::Set(h) => h.clone(),
            HeadSelector::Each => HeadSet::all(bundle.heads)?,
        };

        let mode = match a.norm {
            NormArg::Uniform => NormalizationMode::UniformOracle,
            NormArg::Paper => NormalizationMode::PaperFormula,
            NormArg::None => NormalizationMode::None,
        };

        let sources = match &a.sources {
            Some(s) => parse_indices(s, "sources")?,
            None => Vec::new(),
        };
        let mut template = match kind {
            NetworkKind::Encoder => {
                if a.step.is_some() {
                    return Err(usage("--step applies to decoder kinds; use --terminal"));
                }
                let terminals = match &a.terminal {
                    Some(t) => parse_indices(t, "terminal")?,
                    None => (0..bundle.input_len()).collect(),
                };
                BuildSpec::encoder(sources, terminals, template_heads)
            }
            NetworkKind::Decoder | NetworkKind::EncoderDecoder => {
                if a.terminal.is_some() {
                    return Err(usage("--terminal applies to the encoder kind; use --step"));
                }
                let step = a
                    .step
                    .unwrap_or(bundle.output_len().saturating_sub(1).max(1));
                if kind == NetworkKind::Decoder {
                    BuildSpec::decoder(sources, step, template_heads)
                } else {
                    BuildSpec::encoder_decoder(sources, step, template_heads)
                }
            }
        };
        template.residual = a.residual == OnOff::On;

        if let Some(text) = &a.merge_layers {
            let default: &[Side] = match kind {
                NetworkKind::Encoder => &[Side::Encoder],
                NetworkKind::Decoder => &[Side::Decoder],
                NetworkKind::EncoderDecoder => &[Side::Encoder, Side::Decoder],
            };
            for (side, runs) in side_directives(text, "merge-layers", default)? {
                match side {
                    Side::Encoder => {
                        if kind == NetworkKind::Decoder {
                            return Err(usage(
                                "--merge-layers: decoder kind has no encoder layers",
                            ));
                        }
                        template.encoder_layer_groups =
                            Some(partition(&runs, bundle.enc_layers, "merge-layers")?);
                    }
                    Side::Decoder => {
                        if kind == NetworkKind::Encoder {
                            return Err(usage(
                                "--merge-layers: encoder kind has no decoder layers",
                            ));
                        }
                        template.decoder_layer_groups =
                            Some(partition(&runs, bundle.dec_layers, "merge-layers")?);
                    }
                }
            }
        }

        if let Some(text) = &a.group_tokens {
            let default = match kind {
                NetworkKind::Decoder => Side::Decoder,
                _ => Side::Encoder,
            };
            for (side, runs) in side_directives(text, "group-tokens", &[default])? {
                let total = match side {
                    Side::Encoder if kind != NetworkKind::Decoder => bundle.input_len(),
                    Side::Decoder if kind != NetworkKind::Encoder => bundle.output_len(),
                    _ => {
                        return Err(usage(
                            "--group-tokens: side not present in this network kind",
                        ))
                    }
                };
                template.token_groups.push(TokenGrouping {
                    side,
                    groups: partition(&runs, total, "group-tokens")?,
                });
            }
        }

        Ok(Setup {
            bundle,
            kind,
            heads,
            mode,
            template,
            sources_given: a.sources.is_some(),
        })
    }

    fn require_sources(&self) -> Result<()> {
        if self.sources_given {
            Ok(())
        } else {
            Err(usage("--sources is required for this subcommand"))
        }
    }

    fn require_head_set(&self, cmd: &str) -> Result<()> {
        match self.heads {
            HeadSelector::Set(_) => Ok(()),
            HeadSelector::Each => Err(usage(format!("--heads each is not supported by {cmd}"))),
        }
    }

    fn reject_token_groups(&self, cmd: &str) -> Result<()> {
        if self.template.token_groups.is_empty() {
            Ok(())
        } else {
            Err(usage(format!("--group-tokens is not supported by {cmd}")))
        }
    }

    fn source_tokens(&self) -> &[String] {
        match self.kind {
            NetworkKind::Decoder => &self.bundle.output_tokens,
            _ => &self.bundle.input_tokens,
        }
    }

    fn target_json(&self) -> TargetJson {
        match &self.template.target {
            Target::Step(n) => TargetJson {
                step: Some(*n),
                terminals: None,
            },
            Target::Terminals(t) => TargetJson {
                step: None,
                terminals: Some(t.clone()),
            },
        }
    }
}

fn format_for(
    a: &CommonArgs,
    default: FormatArg,
    allowed: &[FormatArg],
    cmd: &str,
) -> Result<FormatArg> {
    let from_ext = || {
        let ext = a.out.as_ref()?.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "json" => Some(FormatArg::Json),
            "csv" => Some(FormatArg::Csv),
            "svg" => Some(FormatArg::Svg),
            "dot" | "gv" => Some(FormatArg::Dot),
            _ => None,
        }
    };
    let format = match a.format {
        Some(f) => f,
        None => from_ext()
            .filter(|f| allowed.contains(f))
            .unwrap_or(default),
    };
    if allowed.contains(&format) {
        Ok(format)
    } else {
        Err(usage(
            format!("{cmd} cannot emit {format:?} output").to_lowercase(),
        ))
    }
}

#[derive(Serialize)]
struct TargetJson {
    #[serde(skip_serializing_if = "Option::is_none")]
    step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    terminals: Option<Vec<usize>>,
}

#[derive(Serialize)]
struct FlowJson<'a> {
    kind: NetworkKind,
    sources: &'a [usize],
    #[serde(flatten)]
    target: TargetJson,
    heads: &'a [usize],
    residual: bool,
    normalization: NormalizationMode,
    #[serde(flatten)]
    flow: FlowValue,
}

fn flow(a: &CommonArgs) -> Result<()> {
    let setup = Setup::new(a)?;
    setup.require_sources()?;
    setup.require_head_set("flow")?;
    format_for(a, FormatArg::Json, &[FormatArg::Json], "flow")?;
    let analyzer = Analyzer::new(&setup.bundle);
    let value = analyzer.token_flow(&setup.template, setup.mode)?;
    let out = FlowJson {
        kind: setup.kind,
        sources: &setup.template.sources,
        target: setup.target_json(),
        heads: setup.template.heads.indices(),
        residual: setup.template.residual,
        normalization: setup.mode,
        flow: value,
    };
    emit(a.out.as_deref(), &to_json(&out)?)
}

#[derive(Serialize)]
struct HeatmapJson<'a> {
    kind: NetworkKind,
    residual: bool,
    normalization: NormalizationMode,
    matrices: &'a [FlowMatrix],
}

fn heatmap(a: &CommonArgs) -> Result<()> {
    let setup = Setup::new(a)?;
    setup.reject_token_groups("heatmap")?;
    if a.sources.is_some() || a.step.is_some() {
        return Err(usage(
            "heatmap covers every source and step; drop --sources and --step",
        ));
    }
    let format = format_for(
        a,
        FormatArg::Json,
        &[FormatArg::Json, FormatArg::Csv, FormatArg::Svg],
        "heatmap",
    )?;
    let analyzer = Analyzer::new(&setup.bundle);
    let matrices = match setup.heads {
        HeadSelector::Set(_) => analyzer.flow_matrices(&setup.template, setup.mode)?,
        HeadSelector::Each => analyzer.flow_matrices_per_head(&setup.template, setup.mode)?,
    };
    let text = match format {
        FormatArg::Csv => matrices_to_csv(&matrices)?,
        FormatArg::Svg => matrices_to_svg(&matrices),
        _ => to_json(&HeatmapJson {
            kind: setup.kind,
            residual: setup.template.residual,
            normalization: setup.mode,
            matrices: &matrices,
        })?,
    };
    emit(a.out.as_deref(), &text)
}

#[derive(Serialize)]
struct PlayerJson<'a> {
    index: usize,
    token: &'a str,
    phi: f64,
}

#[derive(Serialize)]
struct ShapleyJson<'a> {
    kind: NetworkKind,
    #[serde(flatten)]
    target: TargetJson,
    heads: &'a [usize],
    residual: bool,
    normalization: NormalizationMode,
    players: Vec<PlayerJson<'a>>,
    total: f64,
    efficiency_residual: f64,
}

fn shapley(a: &CommonArgs) -> Result<()> {
    let setup = Setup::new(a)?;
    setup.require_head_set("shapley")?;
    setup.reject_token_groups("shapley")?;
    format_for(a, FormatArg::Json, &[FormatArg::Json], "shapley")?;
    let players = if setup.sources_given {
        setup.template.sources.clone()
    } else {
        match setup.template.target {
            Target::Step(n) if setup.kind == NetworkKind::Decoder => (0..n).collect(),
            _ => (0..setup.source_tokens().len()).collect(),
        }
    };
    let analyzer = Analyzer::new(&setup.bundle);
    let report: ShapleyReport = analyzer.shapley_values(&setup.template, &players, setup.mode)?;
    let tokens = setup.source_tokens();
    let out = ShapleyJson {
        kind: setup.kind,
        target: setup.target_json(),
        heads: setup.template.heads.indices(),
        residual: setup.template.residual,
        normalization: setup.mode,
        players: report
            .players
            .iter()
            .zip(&report.values)
            .map(|(&index, &phi)| PlayerJson {
                index,
                token: tokens.get(index).map(String::as_str).unwrap_or(""),
                phi,
            })
            .collect(),
        total: report.total,
        efficiency_residual: report.efficiency_residual,
    };
    emit(a.out.as_deref(), &to_json(&out)?)
}

#[derive(Serialize)]
struct HeadRow {
    head: usize,
    #[serde(flatten)]
    flow: FlowValue,
}

#[derive(Serialize)]
struct HeadsJson<'a> {
    kind: NetworkKind,
    sources: &'a [usize],
    #[serde(flatten)]
    target: TargetJson,
    residual: bool,
    normalization: NormalizationMode,
    heads: Vec<HeadRow>,
}

fn heads(a: &CommonArgs) -> Result<()> {
    let setup = Setup::new(a)?;
    setup.require_sources()?;
    let format = format_for(
        a,
        FormatArg::Json,
        &[FormatArg::Json, FormatArg::Csv],
        "heads",
    )?;
    let wanted: Vec<usize> = match &setup.heads {
        HeadSelector::Set(h) => h.indices().to_vec(),
        HeadSelector::Each => (0..setup.bundle.heads).collect(),
    };
    let analyzer = Analyzer::new(&setup.bundle);
    let all = analyzer.per_head_flows(&setup.template, setup.mode)?;
    let rows: Vec<HeadRow> = wanted
        .iter()
        .map(|&h| HeadRow {
            head: h,
            flow: all[h],
        })
        .collect();
    let text = match format {
        FormatArg::Csv => {
            let mut wtr = csv::Writer::from_writer(Vec::new());
            wtr.write_record(["head", "raw", "divisor", "value"])?;
            for r in &rows {
                wtr.write_record([
                    r.head.to_string(),
                    crate::emit::format_number(r.flow.raw),
                    r.flow
                        .divisor
                        .map(crate::emit::format_number)
                        .unwrap_or_default(),
                    crate::emit::format_number(r.flow.value),
                ])?;
            }
            String::from_utf8(wtr.into_inner()?)?
        }
        _ => to_json(&HeadsJson {
            kind: setup.kind,
            sources: &setup.template.sources,
            target: setup.target_json(),
            residual: setup.template.residual,
            normalization: setup.mode,
            heads: rows,
        })?,
    };
    emit(a.out.as_deref(), &text)
}

fn export_dot(a: &DotArgs) -> Result<()> {
    let setup = Setup::new(&a.common)?;
    setup.require_sources()?;
    setup.require_head_set("export-dot")?;
    format_for(&a.common, FormatArg::Dot, &[FormatArg::Dot], "export-dot")?;
    let net = build_network(&setup.bundle, &setup.template)?;
    let flow = if a.with_flow {
        Some(max_flow(&net)?)
    } else {
        None
    };
    let text = to_dot(
        &net,
        &DotOptions {
            input_tokens: &setup.bundle.input_tokens,
            output_tokens: &setup.bundle.output_tokens,
            flow: flow.as_ref(),
        },
    );
    emit(a.common.out.as_deref(), &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_lists_expand_ranges() {
        assert_eq!(parse_indices("3, 0-1,1", "x").unwrap(), vec![0, 1, 3]);
        assert!(parse_indices("2-1", "x").is_err());
        assert!(parse_indices("", "x").is_err());
        assert!(parse_indices("a", "x").is_err());
    }

    #[test]
    fn side_directives_split_by_prefix() {
        let d = side_directives("enc:0-1;dec:0,1", "m", &[]).unwrap();
        assert_eq!(
            d,
            vec![(Side::Encoder, "0-1".into()), (Side::Decoder, "0,1".into())]
        );
        let d = side_directives("0-3", "m", &[Side::Decoder]).unwrap();
        assert_eq!(d, vec![(Side::Decoder, "0-3".into())]);
        assert!(side_directives("mid:0", "m", &[]).is_err());
        assert!(side_directives("enc:0;enc:1", "m", &[]).is_err());
    }
}
