//! Independent reference implementations used for differential testing: a
//! floating-point network evaluator and a naive scalar fixed-point path for
//! every kernel. These are written with plain index loops over nested
//! vectors, no strip tiling, no materialized padding, and multiplies
//! instead of conditional negation, so agreement with the accelerated
//! pipeline is meaningful evidence rather than shared code agreeing with
//! itself. Only the sign-unpacking helpers are shared.
//!
//! Float evaluation convention: every conv/dense layer computes
//! relu((sum of signed activations + bias) * 2^-shift) in f64 and the SVM
//! layer computes sum + bias unscaled, mirroring the fixed recurrence with
//! the bias applied before the shift. Where no activation saturates at 255
//! and no shift discards fraction bits, this equals the fixed pipeline
//! exactly; elsewhere the two are comparable but not equal, and comparisons
//! are reported rather than asserted.

use std::error::Error as StdError;
use std::fmt;

use crate::engine::TraceEntry;
use crate::fxcore::{Accum16Plane, PackedKernel3x3, Plane};
use crate::model_io::{LayerWeights, Model};
use crate::netgraph::{self, PlannedLayer, ShapeError};

#[derive(Debug)]
pub enum OracleError {
    /// Float planes must hold only finite values.
    NotFinite { index: usize },
    DataLenMismatch { width: usize, height: usize, len: usize },
    /// naive_conv3 needs at least a 3x3 input.
    UndersizedPlane { width: usize, height: usize },
    ChannelMismatch { expected: usize, got: usize },
    DimsMismatch { expected: (usize, usize), got: (usize, usize) },
    OddPool { width: usize, height: usize },
    BadShape(ShapeError),
    WeightMismatch { layer: usize, detail: String },
    PrepaddedNeedsLeadingConv,
    NoSvmOutput,
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::NotFinite { index } => write!(f, "non-finite value at index {index}"),
            OracleError::DataLenMismatch { width, height, len } => {
                write!(f, "{width}x{height} plane needs {} values, got {len}", width * height)
            }
            OracleError::UndersizedPlane { width, height } => {
                write!(f, "plane {width}x{height} too small for a 3x3 window")
            }
            OracleError::ChannelMismatch { expected, got } => {
                write!(f, "expected {expected} input planes, got {got}")
            }
            OracleError::DimsMismatch { expected, got } => {
                write!(f, "input plane is {}x{}, expected {}x{}", got.0, got.1, expected.0, expected.1)
            }
            OracleError::OddPool { width, height } => {
                write!(f, "2x2 max-pool needs even dimensions, got {width}x{height}")
            }
            OracleError::BadShape(e) => write!(f, "bad topology: {e}"),
            OracleError::WeightMismatch { layer, detail } => {
                write!(f, "layer {layer}: weights inconsistent with topology: {detail}")
            }
            OracleError::PrepaddedNeedsLeadingConv => {
                write!(f, "pre-padded input requires a leading convolution layer")
            }
            OracleError::NoSvmOutput => write!(f, "topology has no final SVM layer to produce scores"),
        }
    }
}

impl StdError for OracleError {}

/// Row-major real-valued activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatPlane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl FloatPlane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, OracleError> {
        if data.len() != width * height {
            return Err(OracleError::DataLenMismatch { width, height, len: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(OracleError::NotFinite { index });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_plane(plane: &Plane) -> Self {
        Self {
            width: plane.width(),
            height: plane.height(),
            data: plane.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Ground-truth valid 3x3 correlation: direct triple loop, multiplying each
/// activation by its +/-1 weight in wrapping 16b arithmetic.
pub fn naive_conv3(input: &Plane, kernel: PackedKernel3x3) -> Result<Accum16Plane, OracleError> {
    let (w, h) = (input.width(), input.height());
    if w < 3 || h < 3 {
        return Err(OracleError::UndersizedPlane { width: w, height: h });
    }
    let signs = kernel.signs();
    let (ow, oh) = (w - 2, h - 2);
    let mut data = vec![0i16; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut sum = 0i16;
            for dy in 0..3 {
                for dx in 0..3 {
                    let a = input.get(x + dx, y + dy) as i16;
                    sum = sum.wrapping_add(a * signs[dy * 3 + dx] as i16);
                }
            }
            data[y * ow + x] = sum;
        }
    }
    Ok(Accum16Plane::new(ow, oh, data).expect("sized to ow*oh"))
}

/// Result of the naive fixed-point forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NaiveRun {
    pub scores: Vec<i32>,
    pub argmax: usize,
    pub overflow_events: u64,
    pub trace: Option<Vec<TraceEntry>>,
}

type Grid<T> = Vec<Vec<T>>;

fn to_grid(plane: &Plane) -> Grid<u8> {
    (0..plane.height()).map(|y| plane.row(y).to_vec()).collect()
}

fn grid_to_plane(grid: &Grid<u8>) -> Plane {
    let h = grid.len();
    let w = grid.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(w * h);
    for row in grid {
        data.extend_from_slice(row);
    }
    Plane::new(w, h, data).expect("rectangular grid")
}

/// Full network on naive scalar kernels; must equal the accelerated
/// pipeline bit-for-bit, overflow events included.
pub fn fixed_forward_naive(model: &Model, input: &[Plane], collect_trace: bool) -> Result<NaiveRun, OracleError> {
    naive_run(model, input, false, collect_trace)
}

/// Camera-path variant: input planes already carry the 1-pixel border.
pub fn fixed_forward_naive_prepadded(
    model: &Model,
    input: &[Plane],
    collect_trace: bool,
) -> Result<NaiveRun, OracleError> {
    naive_run(model, input, true, collect_trace)
}

fn naive_run(model: &Model, input: &[Plane], prepadded: bool, collect_trace: bool) -> Result<NaiveRun, OracleError> {
    let plan = netgraph::plan_layers(&model.spec).map_err(OracleError::BadShape)?;
    let ops = netgraph::count_ops(&model.spec).map_err(OracleError::BadShape)?;
    let (channels, height, width) = model.spec.input_shape;

    if input.len() != channels {
        return Err(OracleError::ChannelMismatch { expected: channels, got: input.len() });
    }
    let expected = if prepadded { (width + 2, height + 2) } else { (width, height) };
    for plane in input {
        if (plane.width(), plane.height()) != expected {
            return Err(OracleError::DimsMismatch { expected, got: (plane.width(), plane.height()) });
        }
    }
    if prepadded && !matches!(plan.first(), Some(PlannedLayer::Conv3 { .. })) {
        return Err(OracleError::PrepaddedNeedsLeadingConv);
    }

    let mut maps: Vec<Grid<u8>> = input.iter().map(to_grid).collect();
    let mut weights = model.weights.iter();
    let mut overflow_events = 0u64;
    let mut trace = collect_trace.then(Vec::new);
    let mut scores = None;

    for (index, &planned) in plan.iter().enumerate() {
        match planned {
            PlannedLayer::Conv3 { in_maps, out_maps, height: lh, width: lw } => {
                let (kernels, biases, shifts) = match weights.next() {
                    Some(LayerWeights::Conv { kernels, biases, shifts }) => (kernels, biases, shifts),
                    _ => return Err(OracleError::WeightMismatch { layer: index, detail: "conv weights".into() }),
                };
                if kernels.len() != in_maps * out_maps || biases.len() != out_maps || shifts.len() != out_maps {
                    return Err(OracleError::WeightMismatch {
                        layer: index,
                        detail: format!("need {} kernels, {out_maps} biases/shifts", in_maps * out_maps),
                    });
                }
                let bordered = prepadded && index == 0;
                let mut next = Vec::with_capacity(out_maps);
                for o in 0..out_maps {
                    let mut total: Grid<i32> = vec![vec![0; lw]; lh];
                    let mut group: Grid<i16> = vec![vec![0; lw]; lh];
                    for i in 0..in_maps {
                        let signs = kernels[o * in_maps + i].signs();
                        let src = &maps[i];
                        for y in 0..lh {
                            for x in 0..lw {
                                let mut sum = 0i16;
                                for dy in 0..3 {
                                    for dx in 0..3 {
                                        // Window top-left is one pixel up-left
                                        // of the output position.
                                        let (iy, ix) = (y + dy, x + dx);
                                        let a = if bordered {
                                            src[iy][ix]
                                        } else if (1..=lh).contains(&iy) && (1..=lw).contains(&ix) {
                                            src[iy - 1][ix - 1]
                                        } else {
                                            0
                                        };
                                        sum = sum.wrapping_add(a as i16 * signs[dy * 3 + dx] as i16);
                                    }
                                }
                                let wide = group[y][x] as i32 + sum as i32;
                                if wide > i16::MAX as i32 || wide < i16::MIN as i32 {
                                    overflow_events += 1;
                                }
                                group[y][x] = wide as i16;
                            }
                        }
                        // Fold the finished 16-map group into the 32b total.
                        if (i + 1) % 16 == 0 || i + 1 == in_maps {
                            for y in 0..lh {
                                for x in 0..lw {
                                    total[y][x] = total[y][x].wrapping_add(group[y][x] as i32);
                                    group[y][x] = 0;
                                }
                            }
                        }
                    }
                    let mut act: Grid<u8> = vec![vec![0; lw]; lh];
                    for y in 0..lh {
                        for x in 0..lw {
                            let v = (total[y][x] as i64 + biases[o] as i64) as i32 >> shifts[o];
                            act[y][x] = v.clamp(0, 255) as u8;
                        }
                    }
                    next.push(act);
                }
                maps = next;
            }
            PlannedLayer::MaxPool2 { .. } => {
                let mut next = Vec::with_capacity(maps.len());
                for src in &maps {
                    let h = src.len();
                    let w = src.first().map_or(0, Vec::len);
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(OracleError::OddPool { width: w, height: h });
                    }
                    let mut out: Grid<u8> = vec![vec![0; w / 2]; h / 2];
                    for y in 0..h / 2 {
                        for x in 0..w / 2 {
                            let mut best = 0u8;
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    if src[2 * y + dy][2 * x + dx] > best {
                                        best = src[2 * y + dy][2 * x + dx];
                                    }
                                }
                            }
                            out[y][x] = best;
                        }
                    }
                    next.push(out);
                }
                maps = next;
            }
            PlannedLayer::Dense { in_len, out_units } => {
                let (rows, biases, shifts) = match weights.next() {
                    Some(LayerWeights::Dense { rows, biases, shifts }) => (rows, biases, shifts),
                    _ => return Err(OracleError::WeightMismatch { layer: index, detail: "dense weights".into() }),
                };
                let flat = flatten_grids(&maps);
                if flat.len() != in_len || rows.len() != out_units {
                    return Err(OracleError::WeightMismatch {
                        layer: index,
                        detail: format!("flattened input is {} values, planned {in_len}", flat.len()),
                    });
                }
                let mut next = Vec::with_capacity(out_units);
                for j in 0..out_units {
                    let signs = rows[j].signs();
                    let mut sum = 0i64;
                    for k in 0..in_len {
                        sum += flat[k] as i64 * signs[k] as i64;
                    }
                    let v = (sum + biases[j] as i64) as i32 >> shifts[j];
                    next.push(vec![vec![v.clamp(0, 255) as u8]]);
                }
                maps = next;
            }
            PlannedLayer::Svm { in_len, out_units } => {
                let (rows, biases) = match weights.next() {
                    Some(LayerWeights::Svm { rows, biases }) => (rows, biases),
                    _ => return Err(OracleError::WeightMismatch { layer: index, detail: "svm weights".into() }),
                };
                let flat = flatten_grids(&maps);
                if flat.len() != in_len || rows.len() != out_units {
                    return Err(OracleError::WeightMismatch {
                        layer: index,
                        detail: format!("flattened input is {} values, planned {in_len}", flat.len()),
                    });
                }
                let mut out = Vec::with_capacity(out_units);
                for j in 0..out_units {
                    let signs = rows[j].signs();
                    let mut sum = 0i64;
                    for k in 0..in_len {
                        sum += flat[k] as i64 * signs[k] as i64;
                    }
                    out.push((sum + biases[j] as i64) as i32);
                }
                if scores.is_some() {
                    return Err(OracleError::NoSvmOutput);
                }
                scores = Some(out);
            }
        }
        if let Some(trace) = &mut trace {
            if !matches!(planned, PlannedLayer::Svm { .. }) {
                trace.push(TraceEntry {
                    label: ops.per_layer[index].label.clone(),
                    planes: maps.iter().map(grid_to_plane).collect(),
                });
            }
        }
    }

    let scores = scores.ok_or(OracleError::NoSvmOutput)?;
    // Independent argmax: scan from the end so earlier indices win ties.
    let mut argmax = scores.len() - 1;
    for i in (0..scores.len()).rev() {
        if scores[i] >= scores[argmax] {
            argmax = i;
        }
    }
    Ok(NaiveRun { scores, argmax, overflow_events, trace })
}

fn flatten_grids(maps: &[Grid<u8>]) -> Vec<u8> {
    let mut flat = Vec::new();
    for grid in maps {
        for row in grid {
            flat.extend_from_slice(row);
        }
    }
    flat
}

/// Float forward pass over logical (unpadded) input planes.
pub fn float_forward(model: &Model, input: &[FloatPlane]) -> Result<Vec<f64>, OracleError> {
    float_run(model, input, false)
}

/// Float forward pass over pre-padded camera-path planes.
pub fn float_forward_prepadded(model: &Model, input: &[FloatPlane]) -> Result<Vec<f64>, OracleError> {
    float_run(model, input, true)
}

fn float_run(model: &Model, input: &[FloatPlane], prepadded: bool) -> Result<Vec<f64>, OracleError> {
    let plan = netgraph::plan_layers(&model.spec).map_err(OracleError::BadShape)?;
    let (channels, height, width) = model.spec.input_shape;

    if input.len() != channels {
        return Err(OracleError::ChannelMismatch { expected: channels, got: input.len() });
    }
    let expected = if prepadded { (width + 2, height + 2) } else { (width, height) };
    for plane in input {
        if (plane.width(), plane.height()) != expected {
            return Err(OracleError::DimsMismatch { expected, got: (plane.width(), plane.height()) });
        }
    }
    if prepadded && !matches!(plan.first(), Some(PlannedLayer::Conv3 { .. })) {
        return Err(OracleError::PrepaddedNeedsLeadingConv);
    }

    let mut maps: Vec<Grid<f64>> = input
        .iter()
        .map(|p| (0..p.height()).map(|y| (0..p.width()).map(|x| p.get(x, y)).collect()).collect())
        .collect();
    let mut weights = model.weights.iter();
    let mut scores = None;

    for (index, &planned) in plan.iter().enumerate() {
        match planned {
            PlannedLayer::Conv3 { in_maps, out_maps, height: lh, width: lw } => {
                let (kernels, biases, shifts) = match weights.next() {
                    Some(LayerWeights::Conv { kernels, biases, shifts }) => (kernels, biases, shifts),
                    _ => return Err(OracleError::WeightMismatch { layer: index, detail: "conv weights".into() }),
                };
                if kernels.len() != in_maps * out_maps || biases.len() != out_maps || shifts.len() != out_maps {
                    return Err(OracleError::WeightMismatch {
                        layer: index,
                        detail: format!("need {} kernels, {out_maps} biases/shifts", in_maps * out_maps),
                    });
                }
                let bordered = prepadded && index == 0;
                let mut next = Vec::with_capacity(out_maps);
                for o in 0..out_maps {
                    let scale = (shifts[o] as f64).exp2().recip();
                    let mut act: Grid<f64> = vec![vec![0.0; lw]; lh];
                    for y in 0..lh {
                        for x in 0..lw {
                            let mut sum = 0.0;
                            for i in 0..in_maps {
                                let signs = kernels[o * in_maps + i].signs();
                                for dy in 0..3 {
                                    for dx in 0..3 {
                                        let (iy, ix) = (y + dy, x + dx);
                                        let a = if bordered {
                                            maps[i][iy][ix]
                                        } else if (1..=lh).contains(&iy) && (1..=lw).contains(&ix) {
                                            maps[i][iy - 1][ix - 1]
                                        } else {
                                            0.0
                                        };
                                        sum += a * signs[dy * 3 + dx] as f64;
                                    }
                                }
                            }
                            act[y][x] = ((sum + biases[o] as f64) * scale).max(0.0);
                        }
                    }
                    next.push(act);
                }
                maps = next;
            }
            PlannedLayer::MaxPool2 { .. } => {
                let mut next = Vec::with_capacity(maps.len());
                for src in &maps {
                    let h = src.len();
                    let w = src.first().map_or(0, Vec::len);
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(OracleError::OddPool { width: w, height: h });
                    }
                    let mut out: Grid<f64> = vec![vec![0.0; w / 2]; h / 2];
                    for (y, row) in out.iter_mut().enumerate() {
                        for (x, v) in row.iter_mut().enumerate() {
                            *v = src[2 * y][2 * x]
                                .max(src[2 * y][2 * x + 1])
                                .max(src[2 * y + 1][2 * x])
                                .max(src[2 * y + 1][2 * x + 1]);
                        }
                    }
                    next.push(out);
                }
                maps = next;
            }
            PlannedLayer::Dense { in_len, out_units } => {
                let (rows, biases, shifts) = match weights.next() {
                    Some(LayerWeights::Dense { rows, biases, shifts }) => (rows, biases, shifts),
                    _ => return Err(OracleError::WeightMismatch { layer: index, detail: "dense weights".into() }),
                };
                let flat = flatten_float(&maps);
                if flat.len() != in_len || rows.len() != out_units {
                    return Err(OracleError::WeightMismatch {
                        layer: index,
                        detail: format!("flattened input is {} values, planned {in_len}", flat.len()),
                    });
                }
                let mut next = Vec::with_capacity(out_units);
                for j in 0..out_units {
                    let signs = rows[j].signs();
                    let sum: f64 = flat.iter().zip(&signs).map(|(&a, &s)| a * s as f64).sum();
                    let scale = (shifts[j] as f64).exp2().recip();
                    next.push(vec![vec![((sum + biases[j] as f64) * scale).max(0.0)]]);
                }
                maps = next;
            }
            PlannedLayer::Svm { in_len, out_units } => {
                let (rows, biases) = match weights.next() {
                    Some(LayerWeights::Svm { rows, biases }) => (rows, biases),
                    _ => return Err(OracleError::WeightMismatch { layer: index, detail: "svm weights".into() }),
                };
                let flat = flatten_float(&maps);
                if flat.len() != in_len || rows.len() != out_units {
                    return Err(OracleError::WeightMismatch {
                        layer: index,
                        detail: format!("flattened input is {} values, planned {in_len}", flat.len()),
                    });
                }
                let mut out = Vec::with_capacity(out_units);
                for j in 0..out_units {
                    let signs = rows[j].signs();
                    let sum: f64 = flat.iter().zip(&signs).map(|(&a, &s)| a * s as f64).sum();
                    out.push(sum + biases[j] as f64);
                }
                if scores.is_some() {
                    return Err(OracleError::NoSvmOutput);
                }
                scores = Some(out);
            }
        }
    }
    scores.ok_or(OracleError::NoSvmOutput)
}

fn flatten_float(maps: &[Grid<f64>]) -> Vec<f64> {
    let mut flat = Vec::new();
    for grid in maps {
        for row in grid {
            flat.extend_from_slice(row);
        }
    }
    flat
}

/// Index of the most positive float score; ties break to the lowest index.
pub fn argmax_f64(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{forward, forward_prepadded, ForwardOptions};
    use crate::fxcore::pack_kernel;
    use crate::kernels;
    use crate::model_io::{center_crop32, gen_random_frame, gen_random_model, gen_random_planes, preprocess};
    use crate::netgraph::parse_network;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn naive_conv_zero_and_undersized() {
        let kernel = pack_kernel([1, -1, 1, -1, 1, -1, 1, -1, 1]).unwrap();
        let out = naive_conv3(&Plane::zeros(7, 5), kernel).unwrap();
        assert_eq!((out.width(), out.height()), (5, 3));
        assert!(out.data().iter().all(|&v| v == 0));
        assert!(naive_conv3(&Plane::zeros(2, 9), kernel).is_err());
    }

    #[test]
    fn naive_conv_impulse_reproduces_flipped_kernel() {
        let signs = [1, -1, 1, 1, 1, -1, -1, 1, 1];
        let kernel = pack_kernel(signs).unwrap();
        let mut data = vec![0u8; 7 * 7];
        data[3 * 7 + 3] = 100;
        let input = Plane::new(7, 7, data).unwrap();
        let out = naive_conv3(&input, kernel).unwrap();
        // Output (x, y) sees the impulse through tap (3-y, 3-x), so the
        // kernel footprint appears index-flipped around the impulse.
        for y in 0..5 {
            for x in 0..5 {
                let want = if (1..=3).contains(&x) && (1..=3).contains(&y) {
                    100 * signs[(3 - y) * 3 + (3 - x)] as i16
                } else {
                    0
                };
                assert_eq!(out.get(x, y), want, "at ({x},{y})");
            }
        }
    }

    #[test]
    fn naive_conv_matches_strip_tiled_kernel() {
        let mut rng = StdRng::seed_from_u64(77);
        for _ in 0..300 {
            let w = 4 * rng.gen_range(1..10);
            let h = rng.gen_range(3..40);
            let plane = Plane::new(w, h, (0..w * h).map(|_| rng.gen()).collect()).unwrap();
            let kernel = pack_kernel(std::array::from_fn(|_| if rng.gen() { 1 } else { -1 })).unwrap();
            assert_eq!(kernels::conv_plane(&plane, kernel).unwrap(), naive_conv3(&plane, kernel).unwrap());
        }
    }

    fn random_model(notation: &str, seed: u64) -> Model {
        gen_random_model(&parse_network(notation).unwrap(), seed).unwrap()
    }

    #[test]
    fn naive_matches_engine_on_random_models() {
        let topologies = [
            "4C3-2SVM",
            "(2x5C3)-MP2-10SVM",
            "8C3-MP2-8C3-MP2-12FC-4SVM",
            "(3x4C3)-MP2-(2x6FC)-3SVM",
            "17C3-MP2-MP2-9SVM",
        ];
        for (t, notation) in topologies.iter().enumerate() {
            for seed in 0..3u64 {
                let model = random_model(notation, seed * 31 + t as u64);
                let input = gen_random_planes(seed * 77 + t as u64).to_vec();
                let fast = forward(&model, &input, &ForwardOptions { collect_trace: true }).unwrap();
                let naive = fixed_forward_naive(&model, &input, true).unwrap();
                assert_eq!(fast.scores, naive.scores, "{notation} seed {seed}");
                assert_eq!(fast.argmax, naive.argmax);
                assert_eq!(fast.overflow_events, naive.overflow_events);
                assert_eq!(
                    crate::engine::first_divergence(fast.trace.as_ref().unwrap(), naive.trace.as_ref().unwrap()),
                    None
                );
            }
        }
    }

    #[test]
    fn naive_matches_engine_on_camera_path() {
        let model = random_model("6C3-MP2-8C3-MP2-10SVM", 5);
        let frame = gen_random_frame(13);
        let (planes, _) = preprocess(&frame);
        let cropped = center_crop32(&planes).unwrap();
        let fast = forward_prepadded(&model, &cropped, &ForwardOptions::default()).unwrap();
        let naive = fixed_forward_naive_prepadded(&model, &cropped, false).unwrap();
        assert_eq!(fast.scores, naive.scores);
        assert_eq!(fast.overflow_events, naive.overflow_events);
    }

    #[test]
    fn naive_matches_engine_when_groups_overflow() {
        // All-plus kernels, zero biases/shifts, all-255 input: the second
        // conv layer wraps its 16-map groups.
        let spec = parse_network("16C3-16C3-2SVM").unwrap();
        let plan = netgraph::plan_layers(&spec).unwrap();
        let mut weights = Vec::new();
        for planned in plan {
            match planned {
                PlannedLayer::Conv3 { in_maps, out_maps, .. } => weights.push(LayerWeights::Conv {
                    kernels: vec![PackedKernel3x3::ALL_PLUS; in_maps * out_maps],
                    biases: vec![0; out_maps],
                    shifts: vec![0; out_maps],
                }),
                PlannedLayer::Svm { in_len, out_units } => weights.push(LayerWeights::Svm {
                    rows: vec![crate::fxcore::PackedDenseRow::from_signs(&vec![1i8; in_len]).unwrap(); out_units],
                    biases: vec![0; out_units],
                }),
                _ => {}
            }
        }
        let model = Model { spec, weights };
        let input = vec![Plane::filled(32, 32, 255); 3];
        let fast = forward(&model, &input, &ForwardOptions::default()).unwrap();
        let naive = fixed_forward_naive(&model, &input, false).unwrap();
        assert_eq!(fast.scores, naive.scores);
        assert_eq!(fast.overflow_events, naive.overflow_events);
        assert_eq!(fast.overflow_events, 16 * 30 * 30);
    }

    #[test]
    fn single_conv_layer_is_naive_conv_plus_activation() {
        let model = random_model("2C3-10SVM", 40);
        let input = gen_random_planes(41).to_vec();
        let run = forward(&model, &input, &ForwardOptions { collect_trace: true }).unwrap();
        let conv_trace = &run.trace.as_ref().unwrap()[0].planes;

        let (kernels_, biases, shifts) = match &model.weights[0] {
            LayerWeights::Conv { kernels, biases, shifts } => (kernels, biases, shifts),
            _ => unreachable!(),
        };
        // Compose by hand: pad each input, run the ground-truth conv, sum
        // the three partials, activate.
        for o in 0..2 {
            let mut total = vec![0i32; 32 * 32];
            for (i, plane) in input.iter().enumerate() {
                let mut padded = vec![0u8; 34 * 34];
                for y in 0..32 {
                    for x in 0..32 {
                        padded[(y + 1) * 34 + x + 1] = plane.get(x, y);
                    }
                }
                let padded = Plane::new(34, 34, padded).unwrap();
                let partial = naive_conv3(&padded, kernels_[o * 3 + i]).unwrap();
                for (t, &p) in total.iter_mut().zip(partial.data()) {
                    *t += p as i32;
                }
            }
            for (k, &t) in total.iter().enumerate() {
                let want = ((t + biases[o]) >> shifts[o]).clamp(0, 255) as u8;
                assert_eq!(conv_trace[o].data()[k], want);
            }
        }
    }

    fn clamp_hidden_biases(model: &mut Model) {
        for weights in &mut model.weights {
            match weights {
                LayerWeights::Conv { biases, .. } | LayerWeights::Dense { biases, .. } => {
                    for b in biases.iter_mut() {
                        *b = -b.abs();
                    }
                }
                LayerWeights::Svm { .. } => {}
            }
        }
    }

    #[test]
    fn zero_image_propagates_to_svm_biases() {
        let mut model = random_model("6C3-MP2-8FC-10SVM", 50);
        clamp_hidden_biases(&mut model);
        let svm_biases = match model.weights.last().unwrap() {
            LayerWeights::Svm { biases, .. } => biases.clone(),
            _ => unreachable!(),
        };
        let zeros = vec![Plane::zeros(32, 32); 3];
        let naive = fixed_forward_naive(&model, &zeros, false).unwrap();
        assert_eq!(naive.scores, svm_biases);

        let float_input: Vec<FloatPlane> = zeros.iter().map(FloatPlane::from_plane).collect();
        let float = float_forward(&model, &float_input).unwrap();
        let as_f64: Vec<f64> = svm_biases.iter().map(|&b| b as f64).collect();
        assert_eq!(float, as_f64);
    }

    #[test]
    fn float_equals_fixed_in_exact_regime() {
        // Zero biases, zero shifts, inputs <= 9: conv sums cap at
        // 9 * 9 * 3 = 243, below saturation, and nothing floors, so both
        // paths are exact integer arithmetic.
        let mut model = random_model("4C3-10SVM", 60);
        for weights in &mut model.weights {
            match weights {
                LayerWeights::Conv { biases, shifts, .. } => {
                    biases.iter_mut().for_each(|b| *b = 0);
                    shifts.iter_mut().for_each(|s| *s = 0);
                }
                LayerWeights::Dense { biases, shifts, .. } => {
                    biases.iter_mut().for_each(|b| *b = 0);
                    shifts.iter_mut().for_each(|s| *s = 0);
                }
                LayerWeights::Svm { biases, .. } => biases.iter_mut().for_each(|b| *b = 0),
            }
        }
        let mut rng = StdRng::seed_from_u64(61);
        let input: Vec<Plane> =
            (0..3).map(|_| Plane::new(32, 32, (0..32 * 32).map(|_| rng.gen_range(0..=9)).collect()).unwrap()).collect();
        let fixed = forward(&model, &input, &ForwardOptions::default()).unwrap();
        let float_input: Vec<FloatPlane> = input.iter().map(FloatPlane::from_plane).collect();
        let float = float_forward(&model, &float_input).unwrap();
        for (f, x) in float.iter().zip(&fixed.scores) {
            assert_eq!(*f, *x as f64);
        }
    }

    #[test]
    fn float_forward_is_scale_covariant() {
        // With zero hidden biases every layer is positively homogeneous, so
        // scaling the input and the SVM biases by c scales the scores by c.
        let mut model = random_model("5C3-MP2-7FC-10SVM", 70);
        for weights in &mut model.weights {
            match weights {
                LayerWeights::Conv { biases, .. } | LayerWeights::Dense { biases, .. } => {
                    biases.iter_mut().for_each(|b| *b = 0)
                }
                LayerWeights::Svm { .. } => {}
            }
        }
        let input: Vec<FloatPlane> = gen_random_planes(71).iter().map(FloatPlane::from_plane).collect();
        let base = float_forward(&model, &input).unwrap();

        for c in [0.5, 3.0] {
            let mut scaled_model = model.clone();
            if let Some(LayerWeights::Svm { biases, .. }) = scaled_model.weights.last_mut() {
                for b in biases.iter_mut() {
                    *b = (*b as f64 * c) as i32;
                }
            }
            // Integer SVM biases only scale exactly for integral results,
            // so rescale via the float plane and compare against by-hand
            // folded scores.
            let scaled_input: Vec<FloatPlane> = input
                .iter()
                .map(|p| FloatPlane::new(p.width(), p.height(), p.data().iter().map(|v| v * c).collect()).unwrap())
                .collect();
            let scaled = float_forward(&scaled_model, &scaled_input).unwrap();
            let expect: Vec<f64> = match (base.as_slice(), model.weights.last()) {
                (scores, Some(LayerWeights::Svm { biases, .. })) => scores
                    .iter()
                    .zip(biases)
                    .map(|(s, &b)| {
                        let features = s - b as f64;
                        features * c + (b as f64 * c) as i32 as f64
                    })
                    .collect(),
                _ => unreachable!(),
            };
            for (got, want) in scaled.iter().zip(&expect) {
                assert!((got - want).abs() <= want.abs() * 1e-12 + 1e-9, "{got} vs {want}");
            }
            assert_eq!(argmax_f64(&scaled), argmax_f64(&base));
        }
    }

    #[test]
    fn float_plane_rejects_bad_input() {
        assert!(matches!(
            FloatPlane::new(2, 2, vec![0.0, 1.0, f64::NAN, 3.0]),
            Err(OracleError::NotFinite { index: 2 })
        ));
        assert!(matches!(
            FloatPlane::new(2, 2, vec![0.0]),
            Err(OracleError::DataLenMismatch { .. })
        ));
    }

    #[test]
    fn naive_argmax_breaks_ties_low() {
        let mut model = random_model("3SVM", 80);
        if let Some(LayerWeights::Svm { rows, biases }) = model.weights.last_mut() {
            let all_plus = crate::fxcore::PackedDenseRow::from_signs(&vec![1i8; 3072]).unwrap();
            *rows = vec![all_plus.clone(), all_plus.clone(), all_plus];
            *biases = vec![5, 5, 1];
        }
        let input = vec![Plane::zeros(32, 32); 3];
        let naive = fixed_forward_naive(&model, &input, false).unwrap();
        assert_eq!(naive.scores, vec![5, 5, 1]);
        assert_eq!(naive.argmax, 0);
        let fast = forward(&model, &input, &ForwardOptions::default()).unwrap();
        assert_eq!(fast.argmax, 0);
    }
}
