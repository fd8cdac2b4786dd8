//! Attention bundles: the on-disk exchange format between a model-side
//! extractor and the flow analysis.
//!
//! A bundle is a directory holding `manifest.json` plus one raw binary file
//! per tensor. Binary payloads are little-endian `f32`, row-major, with the
//! dimension order `[head, layer, query token, key token]` and no header.
//! Values are kept as `f32` in memory so that a read/write cycle is
//! bit-exact; all flow arithmetic widens to `f64`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DTYPE_F32LE: &str = "f32le";
pub const ORDER_ROW_MAJOR: &str = "row-major";
pub const DEFAULT_ROW_TOLERANCE: f64 = 1e-3;

/// The three attention tensors a Transformer can export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    EncSelf,
    DecSelf,
    Cross,
}

impl TensorKind {
    pub const ALL: [TensorKind; 3] = [TensorKind::EncSelf, TensorKind::DecSelf, TensorKind::Cross];

    pub fn name(self) -> &'static str {
        match self {
            TensorKind::EncSelf => "enc_self",
            TensorKind::DecSelf => "dec_self",
            TensorKind::Cross => "cross",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    fn file_name(self) -> String {
        format!("{}.bin", self.name())
    }
}

/// Attention tensors and token strings exported from one model run.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBundle {
    pub model_name: String,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub input_tokens: Vec<String>,
    /// Element 0 is the decoder start token when a decoder is present.
    pub output_tokens: Vec<String>,
    /// `[H, L_E, M, M]`
    pub enc_self: Option<Array4<f32>>,
    /// `[H, L_D, N, N]`, causal.
    pub dec_self: Option<Array4<f32>>,
    /// `[H, L_D, N, M]`
    pub cross: Option<Array4<f32>>,
}

impl AttentionBundle {
    pub fn input_len(&self) -> usize {
        self.input_tokens.len()
    }

    pub fn output_len(&self) -> usize {
        self.output_tokens.len()
    }

    pub fn tensor(&self, kind: TensorKind) -> Option<&Array4<f32>> {
        match kind {
            TensorKind::EncSelf => self.enc_self.as_ref(),
            TensorKind::DecSelf => self.dec_self.as_ref(),
            TensorKind::Cross => self.cross.as_ref(),
        }
    }

    /// Shape the header fields demand for `kind`.
    pub fn expected_shape(&self, kind: TensorKind) -> [usize; 4] {
        let (m, n) = (self.input_len(), self.output_len());
        match kind {
            TensorKind::EncSelf => [self.heads, self.enc_layers, m, m],
            TensorKind::DecSelf => [self.heads, self.dec_layers, n, n],
            TensorKind::Cross => [self.heads, self.dec_layers, n, m],
        }
    }

    fn present(&self) -> impl Iterator<Item = (TensorKind, &Array4<f32>)> {
        TensorKind::ALL
            .into_iter()
            .filter_map(move |k| self.tensor(k).map(|t| (k, t)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub file: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub order: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub model_name: String,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub input_tokens: Vec<String>,
    pub output_tokens: Vec<String>,
    pub tensors: BTreeMap<String, TensorEntry>,
}

pub fn read_bundle(dir: impl AsRef<Path>) -> Result<AttentionBundle> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let raw = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_slice(&raw).map_err(|source| Error::Manifest {
        path: manifest_path.clone(),
        source,
    })?;

    let mut bundle = AttentionBundle {
        model_name: manifest.model_name,
        heads: manifest.heads,
        enc_layers: manifest.enc_layers,
        dec_layers: manifest.dec_layers,
        input_tokens: manifest.input_tokens,
        output_tokens: manifest.output_tokens,
        enc_self: None,
        dec_self: None,
        cross: None,
    };

    for (name, entry) in &manifest.tensors {
        let kind = TensorKind::from_name(name)
            .ok_or_else(|| Error::Format(format!("unknown tensor name `{name}`")))?;
        let tensor = read_tensor(dir, name, entry)?;
        let expected = bundle.expected_shape(kind);
        if tensor.shape() != expected {
            return Err(Error::ShapeMismatch {
                tensor: name.clone(),
                detail: format!(
                    "manifest declares {:?} but header fields imply {:?}",
                    tensor.shape(),
                    expected
                ),
            });
        }
        match kind {
            TensorKind::EncSelf => bundle.enc_self = Some(tensor),
            TensorKind::DecSelf => bundle.dec_self = Some(tensor),
            TensorKind::Cross => bundle.cross = Some(tensor),
        }
    }

    if let Some(msg) = structural_problems(&bundle).into_iter().next() {
        return Err(Error::Format(msg));
    }
    Ok(bundle)
}

fn read_tensor(dir: &Path, name: &str, entry: &TensorEntry) -> Result<Array4<f32>> {
    if entry.dtype != DTYPE_F32LE {
        return Err(Error::UnknownDtype {
            tensor: name.to_string(),
            dtype: entry.dtype.clone(),
        });
    }
    if entry.order != ORDER_ROW_MAJOR {
        return Err(Error::Format(format!(
            "tensor `{name}` has unsupported order `{}`",
            entry.order
        )));
    }
    let shape: [usize; 4] =
        entry
            .shape
            .as_slice()
            .try_into()
            .map_err(|_| Error::ShapeMismatch {
                tensor: name.to_string(),
                detail: format!(
                    "expected 4 dimensions, manifest declares {}",
                    entry.shape.len()
                ),
            })?;
    let count: usize = shape.iter().product();

    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != count * 4 {
        return Err(Error::ShapeMismatch {
            tensor: name.to_string(),
            detail: format!(
                "shape {:?} needs {} bytes, file holds {}",
                shape,
                count * 4,
                bytes.len()
            ),
        });
    }

    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(offset) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            tensor: name.to_string(),
            offset,
        });
    }
    Array4::from_shape_vec(shape, values).map_err(|e| Error::ShapeMismatch {
        tensor: name.to_string(),
        detail: e.to_string(),
    })
}

/// Writes `bundle` into `dir`, creating it if needed. Bundles with
/// error-severity findings are refused; row-sum warnings are allowed.
pub fn write_bundle(bundle: &AttentionBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let report = validate_bundle(bundle, DEFAULT_ROW_TOLERANCE);
    if let Some(first) = report.errors().next() {
        return Err(Error::InvalidBundle(format!(
            "{} error finding(s), first: {}",
            report.errors().count(),
            first.message
        )));
    }

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = BTreeMap::new();
    for (kind, tensor) in bundle.present() {
        let file = kind.file_name();
        let mut bytes = Vec::with_capacity(tensor.len() * 4);
        // Iteration over an ndarray is logical row-major order regardless of memory layout.
        for v in tensor.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        tensors.insert(
            kind.name().to_string(),
            TensorEntry {
                file,
                shape: tensor.shape().to_vec(),
                dtype: DTYPE_F32LE.to_string(),
                order: ORDER_ROW_MAJOR.to_string(),
            },
        );
    }

    let manifest = Manifest {
        model_name: bundle.model_name.clone(),
        heads: bundle.heads,
        enc_layers: bundle.enc_layers,
        dec_layers: bundle.dec_layers,
        input_tokens: bundle.input_tokens.clone(),
        output_tokens: bundle.output_tokens.clone(),
        tensors,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_vec_pretty(&manifest).map_err(|source| Error::Manifest {
        path: path.clone(),
        source,
    })?;
    json.push(b'\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warn,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tensor: Option<&'static str>,
    /// `[h, l, k]` for row findings, `[h, l, k, j]` for entry findings.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub location: Vec<usize>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Warn)
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }
}

fn structural_problems(bundle: &AttentionBundle) -> Vec<String> {
    let mut out = Vec::new();
    if bundle.heads == 0 {
        out.push("bundle declares zero heads".to_string());
    }
    let (enc, dec, cross) = (
        bundle.enc_self.is_some(),
        bundle.dec_self.is_some(),
        bundle.cross.is_some(),
    );
    if !enc && !dec {
        out.push("bundle holds neither enc_self nor dec_self".to_string());
    }
    if cross != (enc && dec) {
        out.push("cross must be present exactly when both enc_self and dec_self are".to_string());
    }
    if !enc && !bundle.input_tokens.is_empty() {
        out.push("input_tokens given without an encoder tensor".to_string());
    }
    if !dec && !bundle.output_tokens.is_empty() {
        out.push("output_tokens given without a decoder tensor".to_string());
    }
    for (kind, tensor) in bundle.present() {
        let expected = bundle.expected_shape(kind);
        if tensor.shape() != expected {
            out.push(format!(
                "{} has shape {:?}, header fields imply {:?}",
                kind.name(),
                tensor.shape(),
                expected
            ));
        }
    }
    out
}

/// Checks every bundle invariant. Structural, sign, finiteness and causal
/// violations are errors; attention rows whose sum strays from 1 by more
/// than `tolerance` are warnings.
pub fn validate_bundle(bundle: &AttentionBundle, tolerance: f64) -> ValidationReport {
    let mut findings: Vec<Finding> = structural_problems(bundle)
        .into_iter()
        .map(|message| Finding {
            severity: Severity::Error,
            tensor: None,
            location: Vec::new(),
            message,
        })
        .collect();
    if !findings.is_empty() {
        return ValidationReport { findings };
    }

    for (kind, tensor) in bundle.present() {
        let name = kind.name();
        let [heads, layers, rows, cols] = bundle.expected_shape(kind);
        for h in 0..heads {
            for l in 0..layers {
                for k in 0..rows {
                    let mut sum = 0.0f64;
                    let mut row_ok = true;
                    for j in 0..cols {
                        let v = tensor[[h, l, k, j]];
                        let loc = vec![h, l, k, j];
                        if !v.is_finite() {
                            row_ok = false;
                            findings.push(entry_finding(
                                name,
                                loc,
                                format!("non-finite value {v}"),
                            ));
                            continue;
                        }
                        if v < 0.0 {
                            row_ok = false;
                            findings.push(entry_finding(name, loc, format!("negative value {v}")));
                            continue;
                        }
                        if kind == TensorKind::DecSelf && j > k {
                            if v != 0.0 {
                                findings.push(entry_finding(
                                    name,
                                    loc,
                                    format!("causal mask violated: query {k} attends to later key {j} with {v}"),
                                ));
                            }
                            continue;
                        }
                        sum += f64::from(v);
                    }
                    if row_ok && (sum - 1.0).abs() > tolerance {
                        findings.push(Finding {
                            severity: Severity::Warn,
                            tensor: Some(name),
                            location: vec![h, l, k],
                            message: format!("row sums to {sum}, expected 1 within {tolerance}"),
                        });
                    }
                }
            }
        }
    }
    ValidationReport { findings }
}

fn entry_finding(tensor: &'static str, location: Vec<usize>, message: String) -> Finding {
    Finding {
        severity: Severity::Error,
        tensor: Some(tensor),
        location,
        message,
    }
}
