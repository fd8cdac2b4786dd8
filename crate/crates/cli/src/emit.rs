//! Serializers for flow matrices: CSV, SVG heatmaps and JSON.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use attnflow::FlowMatrix;
use serde::Serialize;

/// Shortest representation that round-trips the value after rounding it
/// to 9 significant digits.
pub fn format_number(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let rounded: f64 = format!("{v:.8e}").parse().unwrap();
    if (1e-5..1e16).contains(&rounded.abs()) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// One row per cell. Columns are `source_token_index, source_token, step,
/// value`; a leading `head` column appears for per-head sweeps and a
/// leading `matrix` column when more than one matrix kind is present.
/// Undefined cells keep an empty value.
pub fn matrices_to_csv(matrices: &[FlowMatrix]) -> Result<String> {
    let with_head = matrices.iter().any(|m| m.head.is_some());
    let with_name = matrices.iter().any(|m| m.name != matrices[0].name);
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = Vec::new();
    if with_head {
        header.push("head");
    }
    if with_name {
        header.push("matrix");
    }
    header.extend(["source_token_index", "source_token", "step", "value"]);
    wtr.write_record(&header)?;
    for m in matrices {
        for (row, cells) in m.rows.iter().zip(&m.cells) {
            for (col, cell) in m.columns.iter().zip(cells) {
                let mut record = Vec::new();
                if with_head {
                    record.push(m.head.map(|h| h.to_string()).unwrap_or_default());
                }
                if with_name {
                    record.push(m.name.clone());
                }
                record.push(row.index.to_string());
                record.push(row.token.clone());
                record.push(col.step.map(|s| s.to_string()).unwrap_or_default());
                record.push(cell.map(format_number).unwrap_or_default());
                wtr.write_record(&record)?;
            }
        }
    }
    Ok(String::from_utf8(wtr.into_inner()?)?)
}

const CELL_W: usize = 44;
const CELL_H: usize = 26;
const CHAR_W: usize = 7;
const GRID_GAP: usize = 36;

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Linear white-to-navy ramp; `t` in [0, 1].
fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        lerp(255.0, 8.0),
        lerp(255.0, 48.0),
        lerp(255.0, 107.0)
    )
}

fn grid_title(m: &FlowMatrix) -> String {
    match m.head {
        Some(h) => format!("{} tokens, head {h}", m.name),
        None => format!("{} tokens", m.name),
    }
}

/// All matrices as stacked heatmap grids in one SVG document. Each grid
/// scales its colormap from 0 to its own maximum; undefined cells are hatched.
pub fn matrices_to_svg(matrices: &[FlowMatrix]) -> String {
    let label_w = matrices
        .iter()
        .flat_map(|m| m.rows.iter().map(|r| r.token.chars().count() + 6))
        .max()
        .unwrap_or(8)
        * CHAR_W
        + 12;
    let header_h = matrices
        .iter()
        .flat_map(|m| m.columns.iter().map(|c| c.token.chars().count() + 6))
        .max()
        .unwrap_or(6)
        * CHAR_W
        * 7
        / 10
        + 40;
    let width = label_w + matrices.iter().map(|m| m.columns.len()).max().unwrap_or(1) * CELL_W + 80;
    let height: usize = matrices
        .iter()
        .map(|m| header_h + m.rows.len() * CELL_H + GRID_GAP)
        .sum();

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"monospace\" font-size=\"11\">"
    );
    out.push_str(concat!(
        "<defs><pattern id=\"hatch\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\" patternTransform=\"rotate(45)\">",
        "<rect width=\"6\" height=\"6\" fill=\"#f0f0f0\"/><line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"6\" stroke=\"#b0b0b0\" stroke-width=\"2\"/>",
        "</pattern></defs>\n"
    ));

    let mut y0 = 0;
    for m in matrices {
        let max = m.max_value();
        let _ = writeln!(
            out,
            "<g class=\"heatmap\" data-matrix=\"{}\" transform=\"translate(0,{y0})\">",
            xml_escape(&m.name)
        );
        let _ = writeln!(
            out,
            "<text x=\"4\" y=\"14\" font-weight=\"bold\">{}</text>",
            xml_escape(&grid_title(m))
        );
        for (c, col) in m.columns.iter().enumerate() {
            let x = label_w + c * CELL_W + CELL_W / 2;
            let y = header_h - 6;
            let label = match col.step {
                Some(s) => format!("{s}:{}", col.token),
                None => col.token.clone(),
            };
            let _ = writeln!(
                out,
                "<text x=\"{x}\" y=\"{y}\" transform=\"rotate(-45 {x} {y})\">{}</text>",
                xml_escape(&label)
            );
        }
        for (r, (row, cells)) in m.rows.iter().zip(&m.cells).enumerate() {
            let y = header_h + r * CELL_H;
            let _ = writeln!(
                out,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}:{}</text>",
                label_w - 6,
                y + CELL_H / 2 + 4,
                row.index,
                xml_escape(&row.token)
            );
            for (c, cell) in cells.iter().enumerate() {
                let x = label_w + c * CELL_W;
                match cell {
                    Some(v) => {
                        let t = if max > 0.0 { v / max } else { 0.0 };
                        let _ = writeln!(
                            out,
                            "<rect class=\"cell\" x=\"{x}\" y=\"{y}\" width=\"{CELL_W}\" height=\"{CELL_H}\" fill=\"{}\" stroke=\"#ffffff\"><title>{}</title></rect>",
                            color(t),
                            format_number(*v)
                        );
                        let ink = if t > 0.5 { "#ffffff" } else { "#000000" };
                        let _ = writeln!(
                            out,
                            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"9\" fill=\"{ink}\">{v:.2}</text>",
                            x + CELL_W / 2,
                            y + CELL_H / 2 + 3
                        );
                    }
                    None => {
                        let _ = writeln!(
                            out,
                            "<rect class=\"undefined\" x=\"{x}\" y=\"{y}\" width=\"{CELL_W}\" height=\"{CELL_H}\" fill=\"url(#hatch)\" stroke=\"#ffffff\"/>"
                        );
                    }
                }
            }
        }
        // Colour bar: 0 at the bottom, matrix maximum at the top.
        let bar_x = label_w + m.columns.len() * CELL_W + 16;
        let bar_h = (m.rows.len() * CELL_H).max(CELL_H);
        for i in 0..10 {
            let _ = writeln!(
                out,
                "<rect x=\"{bar_x}\" y=\"{}\" width=\"12\" height=\"{}\" fill=\"{}\"/>",
                header_h + i * bar_h / 10,
                bar_h / 10 + 1,
                color(1.0 - i as f64 / 9.0)
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"9\">{}</text>",
            bar_x + 16,
            header_h + 8,
            format_number(max)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"9\">0</text>",
            bar_x + 16,
            header_h + bar_h
        );
        out.push_str("</g>\n");
        y0 += header_h + m.rows.len() * CELL_H + GRID_GAP;
    }
    out.push_str("</svg>\n");
    out
}

/// Writes via a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
