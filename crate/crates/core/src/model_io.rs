//! Packed-weight model files, deterministic random model and image
//! generation, PPM image loading, and the camera-path preprocessing that
//! turns a 40x30 RGBA frame into padded convolution input planes.
//!
//! Model file layout, little-endian throughout: magic "TBNN"; format
//! version (u16); notation string (u16 length prefix, UTF-8, canonical
//! rendering); then one record per weighted layer in network order. A conv
//! record holds out_maps x in_maps kernel words (u16 each, output-major),
//! a dense or SVM record holds one row of ceil(in/8) sign bytes per output
//! (LSB-first within each byte). Every record ends with one i32 bias and
//! one u8 shift per output channel; SVM layers have no shift semantically,
//! so their shift bytes are reserved and must be zero. A CRC-32 of all
//! preceding bytes closes the file. The notation implies the fixed 3x32x32
//! input shape; record sizes must match the declared topology exactly.

use std::fmt;
use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fxcore::{PackedDenseRow, PackedKernel3x3, Plane};
use crate::netgraph::{self, NetworkSpec, ParseError, PlannedLayer, ShapeError, DEFAULT_INPUT_SHAPE};

pub const MODEL_MAGIC: [u8; 4] = *b"TBNN";
pub const MODEL_VERSION: u16 = 1;

/// Weights for one weighted layer (pools carry none). Conv kernels are
/// output-major: `kernels[o * in_maps + i]` filters input map `i` of output
/// map `o`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerWeights {
    Conv { kernels: Vec<PackedKernel3x3>, biases: Vec<i32>, shifts: Vec<u8> },
    Dense { rows: Vec<PackedDenseRow>, biases: Vec<i32>, shifts: Vec<u8> },
    Svm { rows: Vec<PackedDenseRow>, biases: Vec<i32> },
}

/// A topology plus weights for each of its weighted layers, in network
/// order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Model {
    pub spec: NetworkSpec,
    pub weights: Vec<LayerWeights>,
}

impl Model {
    /// Total weight sign bits actually stored: 9 per conv kernel, one per
    /// dense/SVM matrix element.
    pub fn sign_bits(&self) -> u64 {
        self.weights
            .iter()
            .map(|w| match w {
                LayerWeights::Conv { kernels, .. } => 9 * kernels.len() as u64,
                LayerWeights::Dense { rows, .. } | LayerWeights::Svm { rows, .. } => {
                    rows.iter().map(|r| r.len() as u64).sum()
                }
            })
            .sum()
    }
}

#[derive(Debug)]
pub enum ModelError {
    Io(io::Error),
    /// File too short for the fixed header, or a malformed notation field.
    CorruptHeader { detail: String },
    BadMagic { found: [u8; 4] },
    UnsupportedVersion { found: u16 },
    ChecksumMismatch { stored: u32, computed: u32 },
    BadNotation(ParseError),
    BadShape(ShapeError),
    /// Payload ends before the declared topology's records do.
    Truncated { needed: usize, available: usize },
    /// Payload continues past the declared topology's records.
    TrailingBytes { extra: usize },
    /// A kernel word has bits set above the low 9.
    BadKernelWord { layer: usize, index: usize, bits: u16 },
    /// A dense/SVM row byte has nonzero bits past the row length.
    BadRowPadding { layer: usize, row: usize },
    /// Activation shifts must be at most 31.
    ShiftOutOfRange { layer: usize, channel: usize, value: u8 },
    /// SVM shift bytes are reserved and must be zero.
    ReservedShiftNonzero { layer: usize, channel: usize, value: u8 },
    /// Model struct disagrees with its own declared topology.
    WeightMismatch { detail: String },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Io(e) => write!(f, "i/o error: {e}"),
            ModelError::CorruptHeader { detail } => write!(f, "corrupt header: {detail}"),
            ModelError::BadMagic { found } => write!(f, "bad magic {found:02x?}, expected \"TBNN\""),
            ModelError::UnsupportedVersion { found } => {
                write!(f, "unsupported format version {found}, expected {MODEL_VERSION}")
            }
            ModelError::ChecksumMismatch { stored, computed } => {
                write!(f, "checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")
            }
            ModelError::BadNotation(e) => write!(f, "bad notation: {e}"),
            ModelError::BadShape(e) => write!(f, "bad topology: {e}"),
            ModelError::Truncated { needed, available } => {
                write!(f, "truncated payload: needed {needed} more bytes, {available} available")
            }
            ModelError::TrailingBytes { extra } => {
                write!(f, "{extra} trailing payload bytes past the declared records")
            }
            ModelError::BadKernelWord { layer, index, bits } => {
                write!(f, "layer {layer} kernel {index}: invalid packed word {bits:#06x}")
            }
            ModelError::BadRowPadding { layer, row } => {
                write!(f, "layer {layer} row {row}: nonzero padding bits")
            }
            ModelError::ShiftOutOfRange { layer, channel, value } => {
                write!(f, "layer {layer} channel {channel}: shift {value} exceeds 31")
            }
            ModelError::ReservedShiftNonzero { layer, channel, value } => {
                write!(f, "layer {layer} channel {channel}: reserved SVM shift byte is {value}, must be 0")
            }
            ModelError::WeightMismatch { detail } => write!(f, "weights inconsistent with topology: {detail}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<io::Error> for ModelError {
    fn from(e: io::Error) -> Self {
        ModelError::Io(e)
    }
}

/// Weighted layers of a plan, keeping each one's expanded-layer index for
/// diagnostics.
fn weighted_layers(plan: &[PlannedLayer]) -> impl Iterator<Item = (usize, PlannedLayer)> + '_ {
    plan.iter().copied().enumerate().filter(|(_, l)| !matches!(l, PlannedLayer::MaxPool2 { .. }))
}

fn validate_model(model: &Model) -> Result<Vec<PlannedLayer>, ModelError> {
    if model.spec.input_shape != DEFAULT_INPUT_SHAPE {
        return Err(ModelError::WeightMismatch {
            detail: format!("model files are defined for the {:?} input shape", DEFAULT_INPUT_SHAPE),
        });
    }
    let plan = netgraph::plan_layers(&model.spec).map_err(ModelError::BadShape)?;
    let weighted: Vec<(usize, PlannedLayer)> = weighted_layers(&plan).collect();
    if weighted.len() != model.weights.len() {
        return Err(ModelError::WeightMismatch {
            detail: format!("topology has {} weighted layers, model has {}", weighted.len(), model.weights.len()),
        });
    }
    for ((layer, planned), weights) in weighted.iter().zip(&model.weights) {
        let mismatch = |detail: String| ModelError::WeightMismatch { detail: format!("layer {layer}: {detail}") };
        match (planned, weights) {
            (PlannedLayer::Conv3 { in_maps, out_maps, .. }, LayerWeights::Conv { kernels, biases, shifts }) => {
                if kernels.len() != in_maps * out_maps {
                    return Err(mismatch(format!("{} kernels, expected {}", kernels.len(), in_maps * out_maps)));
                }
                if biases.len() != *out_maps || shifts.len() != *out_maps {
                    return Err(mismatch(format!("bias/shift counts must be {out_maps}")));
                }
                if let Some((channel, &value)) = shifts.iter().enumerate().find(|(_, &s)| s > 31) {
                    return Err(ModelError::ShiftOutOfRange { layer: *layer, channel, value });
                }
            }
            (PlannedLayer::Dense { in_len, out_units }, LayerWeights::Dense { rows, biases, shifts }) => {
                if rows.len() != *out_units || biases.len() != *out_units || shifts.len() != *out_units {
                    return Err(mismatch(format!("row/bias/shift counts must be {out_units}")));
                }
                if let Some(row) = rows.iter().find(|r| r.len() != *in_len) {
                    return Err(mismatch(format!("row length {}, expected {in_len}", row.len())));
                }
                if let Some((channel, &value)) = shifts.iter().enumerate().find(|(_, &s)| s > 31) {
                    return Err(ModelError::ShiftOutOfRange { layer: *layer, channel, value });
                }
            }
            (PlannedLayer::Svm { in_len, out_units }, LayerWeights::Svm { rows, biases }) => {
                if rows.len() != *out_units || biases.len() != *out_units {
                    return Err(mismatch(format!("row/bias counts must be {out_units}")));
                }
                if let Some(row) = rows.iter().find(|r| r.len() != *in_len) {
                    return Err(mismatch(format!("row length {}, expected {in_len}", row.len())));
                }
            }
            (planned, _) => {
                return Err(mismatch(format!("weight record kind does not match planned {planned:?}")));
            }
        }
    }
    Ok(plan)
}

/// Serializes a model to bytes, including the trailing CRC-32.
pub fn encode_model(model: &Model) -> Result<Vec<u8>, ModelError> {
    validate_model(model)?;
    let notation = netgraph::render_network(&model.spec);
    if notation.len() > u16::MAX as usize {
        return Err(ModelError::CorruptHeader {
            detail: format!("notation string of {} bytes exceeds the u16 length prefix", notation.len()),
        });
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(&MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(notation.len() as u16).to_le_bytes());
    buf.extend_from_slice(notation.as_bytes());
    for weights in &model.weights {
        match weights {
            LayerWeights::Conv { kernels, biases, shifts } => {
                for k in kernels {
                    buf.extend_from_slice(&k.bits().to_le_bytes());
                }
                for b in biases {
                    buf.extend_from_slice(&b.to_le_bytes());
                }
                buf.extend_from_slice(shifts);
            }
            LayerWeights::Dense { rows, biases, shifts } => {
                for r in rows {
                    buf.extend_from_slice(r.bytes());
                }
                for b in biases {
                    buf.extend_from_slice(&b.to_le_bytes());
                }
                buf.extend_from_slice(shifts);
            }
            LayerWeights::Svm { rows, biases } => {
                for r in rows {
                    buf.extend_from_slice(r.bytes());
                }
                for b in biases {
                    buf.extend_from_slice(&b.to_le_bytes());
                }
                buf.extend_from_slice(&vec![0u8; biases.len()]);
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

pub fn write_model<W: Write>(model: &Model, sink: &mut W) -> Result<(), ModelError> {
    let bytes = encode_model(model)?;
    sink.write_all(&bytes)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(ModelError::Truncated { needed: n, available });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn take_u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn take_i32(&mut self) -> Result<i32, ModelError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Deserializes a model, rejecting bad magic, unsupported versions, checksum
/// failures, and any disagreement between the declared topology and the
/// record sizes. The checksum is verified before the payload is interpreted.
pub fn decode_model(bytes: &[u8]) -> Result<Model, ModelError> {
    if bytes.len() < 4 {
        return Err(ModelError::CorruptHeader { detail: format!("{} bytes is too short for the magic", bytes.len()) });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MODEL_MAGIC {
        return Err(ModelError::BadMagic { found: magic });
    }
    if bytes.len() < 6 {
        return Err(ModelError::CorruptHeader { detail: "missing format version".to_string() });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().expect("2 bytes"));
    if version != MODEL_VERSION {
        return Err(ModelError::UnsupportedVersion { found: version });
    }
    if bytes.len() < 10 {
        return Err(ModelError::CorruptHeader { detail: "missing checksum trailer".to_string() });
    }
    let (payload, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(ModelError::ChecksumMismatch { stored, computed });
    }

    let mut reader = Reader { bytes: payload, pos: 6 };
    let notation_len = reader.take_u16()? as usize;
    let notation = std::str::from_utf8(reader.take(notation_len)?)
        .map_err(|_| ModelError::CorruptHeader { detail: "notation string is not UTF-8".to_string() })?;
    let spec = netgraph::parse_network(notation).map_err(ModelError::BadNotation)?;
    let plan = netgraph::plan_layers(&spec).map_err(ModelError::BadShape)?;

    let mut weights = Vec::new();
    for (layer, planned) in weighted_layers(&plan) {
        match planned {
            PlannedLayer::Conv3 { in_maps, out_maps, .. } => {
                let mut kernels = Vec::with_capacity(in_maps * out_maps);
                for index in 0..in_maps * out_maps {
                    let bits = reader.take_u16()?;
                    let kernel = PackedKernel3x3::from_bits(bits)
                        .map_err(|_| ModelError::BadKernelWord { layer, index, bits })?;
                    kernels.push(kernel);
                }
                let biases = read_biases(&mut reader, out_maps)?;
                let shifts = read_shifts(&mut reader, out_maps, layer)?;
                weights.push(LayerWeights::Conv { kernels, biases, shifts });
            }
            PlannedLayer::Dense { in_len, out_units } => {
                let rows = read_rows(&mut reader, in_len, out_units, layer)?;
                let biases = read_biases(&mut reader, out_units)?;
                let shifts = read_shifts(&mut reader, out_units, layer)?;
                weights.push(LayerWeights::Dense { rows, biases, shifts });
            }
            PlannedLayer::Svm { in_len, out_units } => {
                let rows = read_rows(&mut reader, in_len, out_units, layer)?;
                let biases = read_biases(&mut reader, out_units)?;
                for channel in 0..out_units {
                    let value = reader.take(1)?[0];
                    if value != 0 {
                        return Err(ModelError::ReservedShiftNonzero { layer, channel, value });
                    }
                }
                weights.push(LayerWeights::Svm { rows, biases });
            }
            PlannedLayer::MaxPool2 { .. } => unreachable!("filtered by weighted_layers"),
        }
    }
    if reader.remaining() != 0 {
        return Err(ModelError::TrailingBytes { extra: reader.remaining() });
    }
    Ok(Model { spec, weights })
}

fn read_biases(reader: &mut Reader<'_>, count: usize) -> Result<Vec<i32>, ModelError> {
    (0..count).map(|_| reader.take_i32()).collect()
}

fn read_shifts(reader: &mut Reader<'_>, count: usize, layer: usize) -> Result<Vec<u8>, ModelError> {
    let shifts = reader.take(count)?.to_vec();
    if let Some((channel, &value)) = shifts.iter().enumerate().find(|(_, &s)| s > 31) {
        return Err(ModelError::ShiftOutOfRange { layer, channel, value });
    }
    Ok(shifts)
}

fn read_rows(reader: &mut Reader<'_>, in_len: usize, count: usize, layer: usize) -> Result<Vec<PackedDenseRow>, ModelError> {
    let row_bytes = in_len.div_ceil(8);
    (0..count)
        .map(|row| {
            let bytes = reader.take(row_bytes)?;
            PackedDenseRow::from_bytes(in_len, bytes.to_vec()).map_err(|_| ModelError::BadRowPadding { layer, row })
        })
        .collect()
}

pub fn read_model<R: Read>(source: &mut R) -> Result<Model, ModelError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_model(&bytes)
}

fn ceil_log2(n: usize) -> u8 {
    n.next_power_of_two().trailing_zeros() as u8
}

fn random_model_shift(taps: usize) -> u8 {
    ceil_log2(taps).div_ceil(2)
}

/// Deterministic random model: signs uniform, biases uniform in
/// [-1024, 1024], and per-layer shifts of ceil(log2(taps))/2 rounded up
/// (taps = 9 x in_maps for conv, the input length for dense). With uniform
/// random signs a layer's sum concentrates around +/- sqrt(taps) times the
/// typical activation, so halving the full-scale shift keeps activations
/// alive through deep stacks without saturating everything. SVM layers get
/// shift 0.
pub fn gen_random_model(spec: &NetworkSpec, seed: u64) -> Result<Model, ShapeError> {
    let plan = netgraph::plan_layers(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::new();
    for (_, planned) in weighted_layers(&plan) {
        match planned {
            PlannedLayer::Conv3 { in_maps, out_maps, .. } => {
                let kernels = (0..in_maps * out_maps)
                    .map(|_| PackedKernel3x3::from_bits(rng.gen::<u16>() & 0x01ff).expect("masked to 9 bits"))
                    .collect();
                let biases = (0..out_maps).map(|_| rng.gen_range(-1024..=1024)).collect();
                let shifts = vec![random_model_shift(9 * in_maps); out_maps];
                weights.push(LayerWeights::Conv { kernels, biases, shifts });
            }
            PlannedLayer::Dense { in_len, out_units } => {
                let rows = (0..out_units).map(|_| random_row(&mut rng, in_len)).collect();
                let biases = (0..out_units).map(|_| rng.gen_range(-1024..=1024)).collect();
                let shifts = vec![random_model_shift(in_len); out_units];
                weights.push(LayerWeights::Dense { rows, biases, shifts });
            }
            PlannedLayer::Svm { in_len, out_units } => {
                let rows = (0..out_units).map(|_| random_row(&mut rng, in_len)).collect();
                let biases = (0..out_units).map(|_| rng.gen_range(-1024..=1024)).collect();
                weights.push(LayerWeights::Svm { rows, biases });
            }
            PlannedLayer::MaxPool2 { .. } => unreachable!("filtered by weighted_layers"),
        }
    }
    Ok(Model { spec: spec.clone(), weights })
}

fn random_row(rng: &mut ChaCha8Rng, len: usize) -> PackedDenseRow {
    let mut bytes = vec![0u8; len.div_ceil(8)];
    rng.fill(&mut bytes[..]);
    if len % 8 != 0 {
        let last = bytes.len() - 1;
        bytes[last] &= (1u8 << (len % 8)) - 1;
    }
    PackedDenseRow::from_bytes(len, bytes).expect("padding masked")
}

/// Camera frame geometry: 40x30 RGBA pixels, alpha ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFrame {
    data: Vec<u8>,
}

impl RawFrame {
    pub const WIDTH: usize = 40;
    pub const HEIGHT: usize = 30;

    pub fn from_rgba(data: Vec<u8>) -> Result<Self, ImageError> {
        let expected = Self::WIDTH * Self::HEIGHT * 4;
        if data.len() != expected {
            return Err(ImageError::FrameSizeMismatch { len: data.len(), expected });
        }
        Ok(Self { data })
    }

    pub fn rgba(&self) -> &[u8] {
        &self.data
    }

    /// Channel c (0=R, 1=G, 2=B) of the pixel at (x, y).
    pub fn channel(&self, c: usize, x: usize, y: usize) -> u8 {
        self.data[(y * Self::WIDTH + x) * 4 + c]
    }
}

/// Where the centred crop window sits inside a preprocessed 40x34 plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

/// De-interleaves a camera frame into R, G, B planes of 40x34, padding rows
/// 0-1 and 32-33 with black: plane pixel (x, y+2) is frame pixel (x, y).
/// Also returns the crop window [`center_crop32`] will take.
pub fn preprocess(frame: &RawFrame) -> ([Plane; 3], CropWindow) {
    let planes = std::array::from_fn(|c| {
        let mut data = vec![0u8; RawFrame::WIDTH * 34];
        for y in 0..RawFrame::HEIGHT {
            for x in 0..RawFrame::WIDTH {
                data[(y + 2) * RawFrame::WIDTH + x] = frame.channel(c, x, y);
            }
        }
        Plane::new(RawFrame::WIDTH, 34, data).expect("sized to 40x34")
    });
    (planes, CropWindow { x0: 3, y0: 0, width: 34, height: 34 })
}

/// Cuts the centred 32x32 region plus its 1-pixel convolution border out of
/// 40x34 planes: the region starts at x=4, y=1, so the returned 34x34
/// sub-planes span x in [3, 37) and the full height. Feeding them to a
/// valid (unpadded) 3x3 convolution yields the 32x32 layer-1 outputs.
pub fn center_crop32(planes: &[Plane; 3]) -> Result<[Plane; 3], ImageError> {
    for plane in planes {
        if plane.width() != 40 || plane.height() != 34 {
            return Err(ImageError::WrongPlaneSize { width: plane.width(), height: plane.height() });
        }
    }
    Ok(std::array::from_fn(|c| {
        let src = &planes[c];
        let mut data = Vec::with_capacity(34 * 34);
        for y in 0..34 {
            data.extend_from_slice(&src.row(y)[3..37]);
        }
        Plane::new(34, 34, data).expect("sized to 34x34")
    }))
}

#[derive(Debug)]
pub enum ImageError {
    Io(io::Error),
    /// PPM header is not a P6 with well-formed dimension/maxval fields.
    MalformedPixmap { detail: String },
    /// Only 40x30 (camera path) and 32x32 (direct path) images are usable.
    WrongDimensions { width: usize, height: usize },
    BadMaxval { maxval: usize },
    TruncatedPixels { needed: usize, available: usize },
    FrameSizeMismatch { len: usize, expected: usize },
    WrongPlaneSize { width: usize, height: usize },
}

impl fmt::Display for ImageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageError::Io(e) => write!(f, "i/o error: {e}"),
            ImageError::MalformedPixmap { detail } => write!(f, "malformed PPM: {detail}"),
            ImageError::WrongDimensions { width, height } => {
                write!(f, "unsupported image size {width}x{height}, expected 40x30 or 32x32")
            }
            ImageError::BadMaxval { maxval } => write!(f, "PPM maxval {maxval}, only 255 is supported"),
            ImageError::TruncatedPixels { needed, available } => {
                write!(f, "truncated pixel data: needed {needed} bytes, found {available}")
            }
            ImageError::FrameSizeMismatch { len, expected } => {
                write!(f, "RGBA frame is {len} bytes, expected {expected}")
            }
            ImageError::WrongPlaneSize { width, height } => {
                write!(f, "plane is {width}x{height}, expected 40x34")
            }
        }
    }
}

impl std::error::Error for ImageError {}

impl From<io::Error> for ImageError {
    fn from(e: io::Error) -> Self {
        ImageError::Io(e)
    }
}

/// A loaded image, dispatched on dimensions: 40x30 takes the camera
/// preprocessing path, 32x32 feeds the engine directly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoadedImage {
    Camera(RawFrame),
    Direct([Plane; 3]),
}

struct PpmHeader {
    width: usize,
    height: usize,
    maxval: usize,
    pixel_offset: usize,
}

fn parse_ppm_header(bytes: &[u8]) -> Result<PpmHeader, ImageError> {
    let malformed = |detail: &str| ImageError::MalformedPixmap { detail: detail.to_string() };
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(malformed("missing P6 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Whitespace and '#' comment lines may precede each numeric field.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(b) if b.is_ascii_digit() => break,
                Some(_) => return Err(malformed("unexpected byte in header")),
                None => return Err(malformed("header ends before width/height/maxval")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text.parse().map_err(|_| malformed("numeric field out of range"))?;
    }
    // Exactly one whitespace byte separates the maxval from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(malformed("missing separator before pixel data")),
    }
    Ok(PpmHeader { width: fields[0], height: fields[1], maxval: fields[2], pixel_offset: pos })
}

/// Parses a binary PPM (P6, maxval 255) and dispatches on its dimensions.
pub fn decode_ppm(bytes: &[u8]) -> Result<LoadedImage, ImageError> {
    let header = parse_ppm_header(bytes)?;
    if header.maxval != 255 {
        return Err(ImageError::BadMaxval { maxval: header.maxval });
    }
    let (w, h) = (header.width, header.height);
    if !matches!((w, h), (40, 30) | (32, 32)) {
        return Err(ImageError::WrongDimensions { width: w, height: h });
    }
    let needed = w * h * 3;
    let pixels = &bytes[header.pixel_offset..];
    if pixels.len() < needed {
        return Err(ImageError::TruncatedPixels { needed, available: pixels.len() });
    }
    if pixels.len() > needed {
        return Err(ImageError::MalformedPixmap {
            detail: format!("{} bytes past the end of the raster", pixels.len() - needed),
        });
    }
    if (w, h) == (40, 30) {
        let mut rgba = Vec::with_capacity(w * h * 4);
        for px in pixels.chunks_exact(3) {
            rgba.extend_from_slice(px);
            rgba.push(0xff);
        }
        Ok(LoadedImage::Camera(RawFrame::from_rgba(rgba).expect("sized from dimensions")))
    } else {
        let planes = std::array::from_fn(|c| {
            let data = pixels.chunks_exact(3).map(|px| px[c]).collect();
            Plane::new(w, h, data).expect("sized from dimensions")
        });
        Ok(LoadedImage::Direct(planes))
    }
}

pub fn load_image_ppm<R: Read>(source: &mut R) -> Result<LoadedImage, ImageError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_ppm(&bytes)
}

/// Serializes interleaved RGB samples as a binary PPM.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3, "rgb length must match dimensions");
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// Deterministic random direct-path image: three uniform 32x32 planes.
pub fn gen_random_planes(seed: u64) -> [Plane; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::array::from_fn(|_| {
        let mut data = vec![0u8; 32 * 32];
        rng.fill(&mut data[..]);
        Plane::new(32, 32, data).expect("sized to 32x32")
    })
}

/// Deterministic random camera frame (alpha fixed at 0xff).
pub fn gen_random_frame(seed: u64) -> RawFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0u8; RawFrame::WIDTH * RawFrame::HEIGHT * 4];
    rng.fill(&mut data[..]);
    for a in data.iter_mut().skip(3).step_by(4) {
        *a = 0xff;
    }
    RawFrame::from_rgba(data).expect("sized from constants")
}
