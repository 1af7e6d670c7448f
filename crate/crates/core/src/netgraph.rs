//! Network topology notation: parser and renderer for compact layer strings
//! like "(2x48C3)-MP2-256FC-10SVM", shape inference, layer planning, MAC
//! counting, and the two built-in topologies.
//!
//! Tokens are dash-separated. "NC3" is a 3x3 ReLU convolution with N output
//! maps, "MP2" a 2x2 max-pool, "NFC" a fully connected layer with N outputs,
//! and "NSVM" the final linear SVM layer with N categories. A parenthesized
//! "(RxNC3)" or "(RxNFC)" repeats the layer R times; both "x" and the
//! multiplication sign are accepted as the separator, and the canonical
//! rendering uses "x".

use std::error::Error;
use std::fmt;

/// Ten-category topology the accelerator ships with.
pub const REDUCED_TOPOLOGY: &str = "(2x48C3)-MP2-(2x96C3)-MP2-(2x128C3)-MP2-(2x256FC)-10SVM";

/// Full-size BinaryConnect topology the reduced network is measured against.
pub const ORIGINAL_TOPOLOGY: &str = "(2x128C3)-MP2-(2x256C3)-MP2-(2x512C3)-MP2-(2x1024FC)-10SVM";

/// CIFAR-10 style input: 3 channels of 32x32.
pub const DEFAULT_INPUT_SHAPE: (usize, usize, usize) = (3, 32, 32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// 3x3 convolution with same padding, ReLU via the clamped activation.
    Conv3 { out_maps: usize },
    /// 2x2 max-pool halving both spatial dimensions.
    MaxPool2,
    /// Fully connected layer with the clamped activation.
    Dense { out_units: usize },
    /// Linear SVM output layer producing raw 32b scores.
    Svm { out_units: usize },
}

/// One notation token: a layer kind plus its repeat count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub repeat: usize,
}

/// A parsed topology: input shape as (channels, height, width) plus the
/// ordered layer list. Repeats are preserved so rendering is canonical.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Layers with repeats expanded into consecutive instances.
    pub fn expanded(&self) -> impl Iterator<Item = LayerKind> + '_ {
        self.layers.iter().flat_map(|l| std::iter::repeat(l.kind).take(l.repeat))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseError {
    UnknownToken { offset: usize, token: String },
    MalformedCount { offset: usize, token: String },
    SvmNotLast { offset: usize },
    ZeroRepeat { offset: usize, token: String },
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseError::UnknownToken { offset, token } => {
                write!(f, "unknown token `{token}` at byte {offset}")
            }
            ParseError::MalformedCount { offset, token } => {
                write!(f, "malformed count in `{token}` at byte {offset}")
            }
            ParseError::SvmNotLast { offset } => {
                write!(f, "SVM layer at byte {offset} must be the final layer")
            }
            ParseError::ZeroRepeat { offset, token } => {
                write!(f, "repeat must be at least 1 in `{token}` at byte {offset}")
            }
        }
    }
}

impl Error for ParseError {}

fn parse_count(digits: &str, offset: usize, token: &str) -> Result<usize, ParseError> {
    let malformed = || ParseError::MalformedCount { offset, token: token.to_string() };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(malformed());
    }
    let n: usize = digits.parse().map_err(|_| malformed())?;
    if n == 0 {
        return Err(malformed());
    }
    Ok(n)
}

fn parse_body(body: &str, offset: usize, token: &str) -> Result<LayerKind, ParseError> {
    if let Some(digits) = body.strip_suffix("SVM") {
        Ok(LayerKind::Svm { out_units: parse_count(digits, offset, token)? })
    } else if let Some(digits) = body.strip_suffix("FC") {
        Ok(LayerKind::Dense { out_units: parse_count(digits, offset, token)? })
    } else if let Some(digits) = body.strip_suffix("C3") {
        Ok(LayerKind::Conv3 { out_maps: parse_count(digits, offset, token)? })
    } else {
        Err(ParseError::UnknownToken { offset, token: token.to_string() })
    }
}

fn parse_token(token: &str, offset: usize) -> Result<LayerSpec, ParseError> {
    if token == "MP2" {
        return Ok(LayerSpec { kind: LayerKind::MaxPool2, repeat: 1 });
    }
    if let Some(open) = token.strip_prefix('(') {
        let unknown = || ParseError::UnknownToken { offset, token: token.to_string() };
        let inner = open.strip_suffix(')').ok_or_else(unknown)?;
        let sep = inner.find(['x', '\u{d7}']).ok_or_else(unknown)?;
        let sep_len = inner[sep..].chars().next().expect("found above").len_utf8();
        let digits = &inner[..sep];
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ParseError::MalformedCount { offset, token: token.to_string() });
        }
        let repeat: usize = digits
            .parse()
            .map_err(|_| ParseError::MalformedCount { offset, token: token.to_string() })?;
        let kind = parse_body(&inner[sep + sep_len..], offset, token)?;
        // Only conv and dense layers may carry a repeat prefix.
        if matches!(kind, LayerKind::Svm { .. }) {
            return Err(unknown());
        }
        if repeat == 0 {
            return Err(ParseError::ZeroRepeat { offset, token: token.to_string() });
        }
        return Ok(LayerSpec { kind, repeat });
    }
    Ok(LayerSpec { kind: parse_body(token, offset, token)?, repeat: 1 })
}

/// Parses a notation string into a spec with the default 3x32x32 input.
pub fn parse_network(notation: &str) -> Result<NetworkSpec, ParseError> {
    let mut layers = Vec::new();
    let mut offsets = Vec::new();
    let mut offset = 0;
    for token in notation.split('-') {
        layers.push(parse_token(token, offset)?);
        offsets.push(offset);
        offset += token.len() + 1;
    }
    for (i, layer) in layers.iter().enumerate() {
        if matches!(layer.kind, LayerKind::Svm { .. }) && i + 1 != layers.len() {
            return Err(ParseError::SvmNotLast { offset: offsets[i] });
        }
    }
    Ok(NetworkSpec { input_shape: DEFAULT_INPUT_SHAPE, layers })
}

fn render_kind(kind: LayerKind) -> String {
    match kind {
        LayerKind::Conv3 { out_maps } => format!("{out_maps}C3"),
        LayerKind::MaxPool2 => "MP2".to_string(),
        LayerKind::Dense { out_units } => format!("{out_units}FC"),
        LayerKind::Svm { out_units } => format!("{out_units}SVM"),
    }
}

/// Renders the canonical notation; `parse_network(render_network(s)) == s`
/// for any spec with the default input shape.
pub fn render_network(spec: &NetworkSpec) -> String {
    let tokens: Vec<String> = spec
        .layers
        .iter()
        .map(|l| {
            let body = render_kind(l.kind);
            if l.repeat > 1 { format!("({}x{})", l.repeat, body) } else { body }
        })
        .collect();
    tokens.join("-")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShapeError {
    /// Input shape has a zero dimension.
    ZeroInputDim { shape: (usize, usize, usize) },
    /// 2x2 max-pool applied to odd spatial dimensions.
    OddPoolInput { layer: usize, height: usize, width: usize },
}

impl fmt::Display for ShapeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShapeError::ZeroInputDim { shape } => {
                write!(f, "input shape {}x{}x{} has a zero dimension", shape.0, shape.1, shape.2)
            }
            ShapeError::OddPoolInput { layer, height, width } => {
                write!(f, "layer {layer}: 2x2 max-pool needs even dimensions, got {height}x{width}")
            }
        }
    }
}

impl Error for ShapeError {}

/// Shapes as (channels, height, width) before and after every expanded
/// layer: element 0 is the input shape, element i+1 the output of expanded
/// layer i. Convolutions preserve the spatial dims (same padding), pools
/// halve them, and dense/SVM layers flatten to (units, 1, 1).
pub fn infer_shapes(spec: &NetworkSpec) -> Result<Vec<(usize, usize, usize)>, ShapeError> {
    let (c, h, w) = spec.input_shape;
    if c == 0 || h == 0 || w == 0 {
        return Err(ShapeError::ZeroInputDim { shape: spec.input_shape });
    }
    let mut shapes = vec![(c, h, w)];
    for (i, kind) in spec.expanded().enumerate() {
        let (c, h, w) = *shapes.last().expect("starts non-empty");
        let next = match kind {
            LayerKind::Conv3 { out_maps } => (out_maps, h, w),
            LayerKind::MaxPool2 => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(ShapeError::OddPoolInput { layer: i, height: h, width: w });
                }
                (c, h / 2, w / 2)
            }
            LayerKind::Dense { out_units } | LayerKind::Svm { out_units } => (out_units, 1, 1),
        };
        shapes.push(next);
    }
    Ok(shapes)
}

/// One expanded layer with its input geometry resolved, the common currency
/// between the weight file layout and the execution engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlannedLayer {
    Conv3 { in_maps: usize, out_maps: usize, height: usize, width: usize },
    MaxPool2 { maps: usize, height: usize, width: usize },
    Dense { in_len: usize, out_units: usize },
    Svm { in_len: usize, out_units: usize },
}

/// Expands a spec into planned layers with resolved input dimensions.
pub fn plan_layers(spec: &NetworkSpec) -> Result<Vec<PlannedLayer>, ShapeError> {
    let shapes = infer_shapes(spec)?;
    let planned = spec
        .expanded()
        .zip(&shapes)
        .map(|(kind, &(c, h, w))| match kind {
            LayerKind::Conv3 { out_maps } => PlannedLayer::Conv3 { in_maps: c, out_maps, height: h, width: w },
            LayerKind::MaxPool2 => PlannedLayer::MaxPool2 { maps: c, height: h, width: w },
            LayerKind::Dense { out_units } => PlannedLayer::Dense { in_len: c * h * w, out_units },
            LayerKind::Svm { out_units } => PlannedLayer::Svm { in_len: c * h * w, out_units },
        })
        .collect();
    Ok(planned)
}

/// Per-layer MAC cost; a conditional-negate-and-add counts as one MAC.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerOps {
    pub label: String,
    pub macs: u64,
}

/// MAC totals for a topology. Max-pool layers cost zero MACs; they appear
/// in the per-layer list so indices line up with the expanded layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpCount {
    pub per_layer: Vec<LayerOps>,
    pub total: u64,
}

/// Counts MACs per expanded layer: conv costs H*W*Cin*Cout*9 at the layer's
/// (same-padded) spatial dims, dense and SVM cost in*out, pooling is free.
pub fn count_ops(spec: &NetworkSpec) -> Result<OpCount, ShapeError> {
    let mut per_layer = Vec::new();
    let mut total = 0u64;
    for layer in plan_layers(spec)? {
        let (label, macs) = match layer {
            PlannedLayer::Conv3 { in_maps, out_maps, height, width } => (
                format!("{out_maps}C3"),
                (height * width * in_maps * out_maps * 9) as u64,
            ),
            PlannedLayer::MaxPool2 { .. } => ("MP2".to_string(), 0),
            PlannedLayer::Dense { in_len, out_units } => {
                (format!("{out_units}FC"), (in_len * out_units) as u64)
            }
            PlannedLayer::Svm { in_len, out_units } => {
                (format!("{out_units}SVM"), (in_len * out_units) as u64)
            }
        };
        total += macs;
        per_layer.push(LayerOps { label, macs });
    }
    Ok(OpCount { per_layer, total })
}

/// Total weight sign bits: 9 per conv kernel element pair (in x out kernels),
/// one per dense/SVM matrix element.
pub fn sign_bit_count(spec: &NetworkSpec) -> Result<u64, ShapeError> {
    let mut bits = 0u64;
    for layer in plan_layers(spec)? {
        bits += match layer {
            PlannedLayer::Conv3 { in_maps, out_maps, .. } => (9 * in_maps * out_maps) as u64,
            PlannedLayer::MaxPool2 { .. } => 0,
            PlannedLayer::Dense { in_len, out_units } | PlannedLayer::Svm { in_len, out_units } => {
                (in_len * out_units) as u64
            }
        };
    }
    Ok(bits)
}
