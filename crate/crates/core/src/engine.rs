//! The inference pipeline built from the accelerator kernels: same-padded
//! strip-tiled convolutions with grouped 16b accumulation, max-pooling,
//! dense layers, and the final SVM scores, with per-layer timing, overflow
//! observability, and optional activation traces.
//!
//! Activations flatten in channel-major order (channel, then row, then
//! column) when entering dense/SVM layers; dense outputs are carried as
//! one 1x1 plane per unit so the state always matches the planned
//! (channels, height, width) shape.

use std::error::Error;
use std::fmt;
use std::time::{Duration, Instant};

use crate::fxcore::{Accum16Plane, Plane};
use crate::kernels::{self, KernelError, MAP_GROUP_SIZE};
use crate::model_io::{LayerWeights, Model};
use crate::netgraph::{self, PlannedLayer, ShapeError};

#[derive(Debug)]
pub enum EngineError {
    BadShape(ShapeError),
    Kernel(KernelError),
    /// Input channel count does not match the model's input shape.
    ChannelMismatch { expected: usize, got: usize },
    /// An input plane has the wrong dimensions.
    InputDimsMismatch { expected: (usize, usize), got: (usize, usize) },
    /// Pre-padded input requires the network to start with a convolution.
    PrepaddedNeedsLeadingConv,
    /// Scores come from the final SVM layer; the topology has none.
    NoSvmOutput,
    /// Weight records do not line up with the declared topology.
    WeightMismatch { layer: usize, detail: String },
}

impl fmt::Display for EngineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineError::BadShape(e) => write!(f, "bad topology: {e}"),
            EngineError::Kernel(e) => write!(f, "kernel error: {e}"),
            EngineError::ChannelMismatch { expected, got } => {
                write!(f, "expected {expected} input planes, got {got}")
            }
            EngineError::InputDimsMismatch { expected, got } => {
                write!(f, "input plane is {}x{}, expected {}x{}", got.0, got.1, expected.0, expected.1)
            }
            EngineError::PrepaddedNeedsLeadingConv => {
                write!(f, "pre-padded input requires a leading convolution layer")
            }
            EngineError::NoSvmOutput => write!(f, "topology has no final SVM layer to produce scores"),
            EngineError::WeightMismatch { layer, detail } => {
                write!(f, "layer {layer}: weights inconsistent with topology: {detail}")
            }
        }
    }
}

impl Error for EngineError {}

impl From<KernelError> for EngineError {
    fn from(e: KernelError) -> Self {
        EngineError::Kernel(e)
    }
}

impl From<ShapeError> for EngineError {
    fn from(e: ShapeError) -> Self {
        EngineError::BadShape(e)
    }
}

/// Coarse layer class used for benchmark aggregation; SVM layers count as
/// dense.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerClass {
    Conv,
    Pool,
    Dense,
}

#[derive(Debug, Clone)]
pub struct LayerStat {
    pub label: String,
    pub class: LayerClass,
    pub wall: Duration,
    pub macs: u64,
}

/// Post-activation planes of one layer, for divergence localization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub label: String,
    pub planes: Vec<Plane>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    pub collect_trace: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scores: Vec<i32>,
    pub argmax: usize,
    /// 16b wrap-arounds observed during grouped map accumulation.
    pub overflow_events: u64,
    pub layers: Vec<LayerStat>,
    pub total: Duration,
    pub trace: Option<Vec<TraceEntry>>,
}

impl RunOutput {
    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs).sum()
    }
}

/// Runs the network over logical input planes matching the model's input
/// shape; convolution inputs are zero-padded internally (same padding).
pub fn forward(model: &Model, input: &[Plane], options: &ForwardOptions) -> Result<RunOutput, EngineError> {
    run(model, input, false, options)
}

/// Camera-path entry point: the network must start with a convolution, and
/// `input` already carries the 1-pixel border that same padding would add,
/// so each plane is (width+2) x (height+2) of the model's input shape.
pub fn forward_prepadded(model: &Model, input: &[Plane], options: &ForwardOptions) -> Result<RunOutput, EngineError> {
    run(model, input, true, options)
}

fn run(model: &Model, input: &[Plane], prepadded: bool, options: &ForwardOptions) -> Result<RunOutput, EngineError> {
    let started = Instant::now();
    let plan = netgraph::plan_layers(&model.spec)?;
    let ops = netgraph::count_ops(&model.spec)?;
    let (channels, height, width) = model.spec.input_shape;

    if input.len() != channels {
        return Err(EngineError::ChannelMismatch { expected: channels, got: input.len() });
    }
    let expected = if prepadded { (width + 2, height + 2) } else { (width, height) };
    for plane in input {
        if (plane.width(), plane.height()) != expected {
            return Err(EngineError::InputDimsMismatch { expected, got: (plane.width(), plane.height()) });
        }
    }
    if prepadded && !matches!(plan.first(), Some(PlannedLayer::Conv3 { .. })) {
        return Err(EngineError::PrepaddedNeedsLeadingConv);
    }

    let mut planes: Vec<Plane> = input.to_vec();
    let mut weights = model.weights.iter();
    let mut overflow_events = 0u64;
    let mut layers = Vec::with_capacity(plan.len());
    let mut trace = options.collect_trace.then(Vec::new);
    let mut scores = None;

    for (index, &planned) in plan.iter().enumerate() {
        let label = ops.per_layer[index].label.clone();
        let macs = ops.per_layer[index].macs;
        let start = Instant::now();
        let class = match planned {
            PlannedLayer::Conv3 { in_maps, out_maps, width, .. } => {
                let (kernels_, biases, shifts) = match weights.next() {
                    Some(LayerWeights::Conv { kernels, biases, shifts }) => (kernels, biases, shifts),
                    other => return Err(weight_kind_mismatch(index, "conv", other.is_some())),
                };
                if kernels_.len() != in_maps * out_maps || biases.len() != out_maps || shifts.len() != out_maps {
                    return Err(EngineError::WeightMismatch {
                        layer: index,
                        detail: format!("need {} kernels and {out_maps} biases/shifts", in_maps * out_maps),
                    });
                }
                // One padded copy per input map serves all output maps. The
                // strip kernel wants widths in multiples of 4, so the planes
                // are zero-extended rightward and the excess output columns
                // dropped; zero fill cannot change the kept columns.
                let strip_width = (width + 2).next_multiple_of(4);
                let padded: Vec<Plane> = if prepadded && index == 0 {
                    planes.iter().map(|p| widen_right(p, strip_width)).collect()
                } else {
                    planes.iter().map(|p| widen_right(&pad_same(p), strip_width)).collect()
                };
                let mut out_planes = Vec::with_capacity(out_maps);
                for o in 0..out_maps {
                    let partials: Vec<Accum16Plane> = padded
                        .iter()
                        .enumerate()
                        .map(|(i, p)| {
                            kernels::conv_plane(p, kernels_[o * in_maps + i]).map(|a| trim_cols(&a, width))
                        })
                        .collect::<Result<_, _>>()?;
                    let acc = kernels::accumulate_maps(&partials, MAP_GROUP_SIZE)?;
                    overflow_events += acc.overflow_events;
                    out_planes.push(kernels::activate_32_to_8(&acc.total, biases[o], shifts[o] as u32));
                }
                planes = out_planes;
                LayerClass::Conv
            }
            PlannedLayer::MaxPool2 { .. } => {
                planes = planes.iter().map(kernels::maxpool2).collect::<Result<_, _>>()?;
                LayerClass::Pool
            }
            PlannedLayer::Dense { in_len, out_units } => {
                let (rows, biases, shifts) = match weights.next() {
                    Some(LayerWeights::Dense { rows, biases, shifts }) => (rows, biases, shifts),
                    other => return Err(weight_kind_mismatch(index, "dense", other.is_some())),
                };
                let flat = flatten(&planes);
                if flat.len() != in_len {
                    return Err(EngineError::WeightMismatch {
                        layer: index,
                        detail: format!("flattened input is {} values, planned {in_len}", flat.len()),
                    });
                }
                let out = kernels::dense(&flat, rows, biases, shifts)?;
                if out.data().len() != out_units {
                    return Err(EngineError::WeightMismatch {
                        layer: index,
                        detail: format!("{} outputs, planned {out_units}", out.data().len()),
                    });
                }
                planes = unit_planes(out.data());
                LayerClass::Dense
            }
            PlannedLayer::Svm { in_len, out_units } => {
                let (rows, biases) = match weights.next() {
                    Some(LayerWeights::Svm { rows, biases }) => (rows, biases),
                    other => return Err(weight_kind_mismatch(index, "svm", other.is_some())),
                };
                let flat = flatten(&planes);
                if flat.len() != in_len || rows.len() != out_units {
                    return Err(EngineError::WeightMismatch {
                        layer: index,
                        detail: format!("flattened input is {} values, planned {in_len}", flat.len()),
                    });
                }
                if scores.is_some() {
                    return Err(EngineError::NoSvmOutput);
                }
                scores = Some(kernels::svm_scores(&flat, rows, biases)?);
                LayerClass::Dense
            }
        };
        layers.push(LayerStat { label: label.clone(), class, wall: start.elapsed(), macs });
        if let Some(trace) = &mut trace {
            if !matches!(planned, PlannedLayer::Svm { .. }) {
                trace.push(TraceEntry { label, planes: planes.clone() });
            }
        }
    }

    let scores = scores.ok_or(EngineError::NoSvmOutput)?;
    let argmax = kernels::argmax(&scores);
    Ok(RunOutput { scores, argmax, overflow_events, layers, total: started.elapsed(), trace })
}

fn weight_kind_mismatch(layer: usize, expected: &str, present: bool) -> EngineError {
    let detail = if present {
        format!("expected {expected} weights")
    } else {
        format!("missing {expected} weights")
    };
    EngineError::WeightMismatch { layer, detail }
}

/// Adds the 1-pixel zero border of same padding.
fn pad_same(plane: &Plane) -> Plane {
    let (w, h) = (plane.width(), plane.height());
    let mut data = vec![0u8; (w + 2) * (h + 2)];
    for y in 0..h {
        data[(y + 1) * (w + 2) + 1..(y + 1) * (w + 2) + 1 + w].copy_from_slice(plane.row(y));
    }
    Plane::new(w + 2, h + 2, data).expect("sized to (w+2)*(h+2)")
}

/// Zero-extends a plane rightward to `target_w` columns.
fn widen_right(plane: &Plane, target_w: usize) -> Plane {
    let (w, h) = (plane.width(), plane.height());
    if w == target_w {
        return plane.clone();
    }
    let mut data = vec![0u8; target_w * h];
    for y in 0..h {
        data[y * target_w..y * target_w + w].copy_from_slice(plane.row(y));
    }
    Plane::new(target_w, h, data).expect("sized to target_w*h")
}

/// Keeps the first `keep` columns of every row.
fn trim_cols(acc: &Accum16Plane, keep: usize) -> Accum16Plane {
    if acc.width() == keep {
        return acc.clone();
    }
    let mut data = Vec::with_capacity(keep * acc.height());
    for y in 0..acc.height() {
        data.extend_from_slice(&acc.row(y)[..keep]);
    }
    Accum16Plane::new(keep, acc.height(), data).expect("sized to keep*height")
}

/// Channel-major flatten: channel, then row, then column.
fn flatten(planes: &[Plane]) -> Vec<u8> {
    let mut flat = Vec::with_capacity(planes.iter().map(|p| p.data().len()).sum());
    for plane in planes {
        flat.extend_from_slice(plane.data());
    }
    flat
}

/// Dense outputs as one 1x1 plane per unit, keeping the (units, 1, 1) shape.
fn unit_planes(values: &[u8]) -> Vec<Plane> {
    values.iter().map(|&v| Plane::new(1, 1, vec![v]).expect("1x1")).collect()
}

/// First coordinate where two traces disagree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub layer: usize,
    pub label: String,
    pub channel: usize,
    pub x: usize,
    pub y: usize,
    pub left: u8,
    pub right: u8,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "layer {} ({}), channel {}, ({}, {}): {} vs {}",
            self.layer, self.label, self.channel, self.x, self.y, self.left, self.right
        )
    }
}

/// Locates the first differing activation between two traces of the same
/// topology. Returns None when the traces agree everywhere they overlap.
pub fn first_divergence(left: &[TraceEntry], right: &[TraceEntry]) -> Option<Divergence> {
    for (layer, (l, r)) in left.iter().zip(right).enumerate() {
        for (channel, (lp, rp)) in l.planes.iter().zip(&r.planes).enumerate() {
            if lp == rp {
                continue;
            }
            for y in 0..lp.height().min(rp.height()) {
                for x in 0..lp.width().min(rp.width()) {
                    if lp.get(x, y) != rp.get(x, y) {
                        return Some(Divergence {
                            layer,
                            label: l.label.clone(),
                            channel,
                            x,
                            y,
                            left: lp.get(x, y),
                            right: rp.get(x, y),
                        });
                    }
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fxcore::{pack_kernel, PackedDenseRow, PackedKernel3x3};
    use crate::model_io::gen_random_model;
    use crate::netgraph::parse_network;

    fn all_plus_model(notation: &str) -> Model {
        let spec = parse_network(notation).unwrap();
        let plan = netgraph::plan_layers(&spec).unwrap();
        let mut weights = Vec::new();
        for planned in plan {
            match planned {
                PlannedLayer::Conv3 { in_maps, out_maps, .. } => weights.push(LayerWeights::Conv {
                    kernels: vec![pack_kernel([1; 9]).unwrap(); in_maps * out_maps],
                    biases: vec![0; out_maps],
                    shifts: vec![0; out_maps],
                }),
                PlannedLayer::Dense { in_len, out_units } => weights.push(LayerWeights::Dense {
                    rows: vec![PackedDenseRow::from_signs(&vec![1i8; in_len]).unwrap(); out_units],
                    biases: vec![0; out_units],
                    shifts: vec![0; out_units],
                }),
                PlannedLayer::Svm { in_len, out_units } => weights.push(LayerWeights::Svm {
                    rows: vec![PackedDenseRow::from_signs(&vec![1i8; in_len]).unwrap(); out_units],
                    biases: vec![0; out_units],
                }),
                PlannedLayer::MaxPool2 { .. } => {}
            }
        }
        Model { spec, weights }
    }

    fn planes(value: u8) -> Vec<Plane> {
        vec![Plane::filled(32, 32, value); 3]
    }

    #[test]
    fn zero_input_yields_svm_biases() {
        let mut model = all_plus_model("4C3-MP2-10SVM");
        if let LayerWeights::Svm { biases, .. } = model.weights.last_mut().unwrap() {
            *biases = (0..10).map(|i| 7 * i - 30).collect();
        }
        let out = forward(&model, &planes(0), &ForwardOptions::default()).unwrap();
        assert_eq!(out.scores, (0..10).map(|i| 7 * i - 30).collect::<Vec<i32>>());
        assert_eq!(out.argmax, 9);
        assert_eq!(out.overflow_events, 0);
    }

    #[test]
    fn uniform_input_conv_window_sums() {
        let model = all_plus_model("1C3-1SVM");
        let out = forward(&model, &planes(1), &ForwardOptions { collect_trace: true }).unwrap();
        let trace = out.trace.as_ref().unwrap();
        let conv = &trace[0].planes[0];
        // All +1 kernel over 3 all-ones maps: 3x3 window saturation-free
        // sums of 27 inside, 18 on edges, 12 at corners.
        assert_eq!(conv.get(15, 15), 27);
        assert_eq!(conv.get(0, 15), 18);
        assert_eq!(conv.get(0, 0), 12);
        // SVM consumes the 32x32 map: 4 corners, 120 edge, 900 interior.
        assert_eq!(out.scores, vec![4 * 12 + 120 * 18 + 900 * 27]);
    }

    #[test]
    fn prepadded_with_zero_border_matches_internal_padding() {
        let model = gen_random_model(&parse_network("(2x8C3)-MP2-20FC-10SVM").unwrap(), 99).unwrap();
        let input: Vec<Plane> = crate::model_io::gen_random_planes(5).to_vec();
        let plain = forward(&model, &input, &ForwardOptions::default()).unwrap();
        let padded: Vec<Plane> = input.iter().map(pad_same).collect();
        let pre = forward_prepadded(&model, &padded, &ForwardOptions::default()).unwrap();
        assert_eq!(plain.scores, pre.scores);
        assert_eq!(plain.overflow_events, pre.overflow_events);
    }

    #[test]
    fn camera_path_runs_end_to_end() {
        let model = gen_random_model(&parse_network("8C3-MP2-10SVM").unwrap(), 3).unwrap();
        let frame = crate::model_io::gen_random_frame(11);
        let (full, _) = crate::model_io::preprocess(&frame);
        let cropped = crate::model_io::center_crop32(&full).unwrap();
        let out = forward_prepadded(&model, &cropped, &ForwardOptions::default()).unwrap();
        assert_eq!(out.scores.len(), 10);
        assert!(out.argmax < 10);
    }

    #[test]
    fn saturating_model_reports_group_overflow() {
        // All-plus weights, zero biases/shifts, all-255 input: layer 1
        // saturates every activation to 255, so each of layer 2's 16
        // all-255 partials is 2295 and every interior element's group of 16
        // wraps exactly once: 16 maps x 30x30 interior elements.
        let model = all_plus_model("16C3-16C3-10SVM");
        let out = forward(&model, &planes(255), &ForwardOptions::default()).unwrap();
        assert_eq!(out.overflow_events, 16 * 30 * 30);
    }

    #[test]
    fn macs_match_the_op_counter() {
        let spec = parse_network("(2x8C3)-MP2-20FC-10SVM").unwrap();
        let model = gen_random_model(&spec, 1).unwrap();
        let out = forward(&model, &planes(7), &ForwardOptions::default()).unwrap();
        assert_eq!(out.total_macs(), netgraph::count_ops(&spec).unwrap().total);
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = gen_random_model(&parse_network("4C3-2SVM").unwrap(), 1).unwrap();
        let two = vec![Plane::zeros(32, 32); 2];
        assert!(matches!(
            forward(&model, &two, &ForwardOptions::default()),
            Err(EngineError::ChannelMismatch { expected: 3, got: 2 })
        ));
        let wrong = vec![Plane::zeros(40, 34); 3];
        assert!(matches!(
            forward(&model, &wrong, &ForwardOptions::default()),
            Err(EngineError::InputDimsMismatch { .. })
        ));
        // Prepadded planes must be 34x34 for a 32x32 input shape.
        assert!(matches!(
            forward_prepadded(&model, &two, &ForwardOptions::default()),
            Err(EngineError::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn topology_without_svm_cannot_score() {
        let model = gen_random_model(&parse_network("4C3-MP2").unwrap(), 1).unwrap();
        assert!(matches!(
            forward(&model, &planes(0), &ForwardOptions::default()),
            Err(EngineError::NoSvmOutput)
        ));
    }

    #[test]
    fn trace_snapshots_every_non_svm_layer() {
        let model = gen_random_model(&parse_network("4C3-MP2-6FC-2SVM").unwrap(), 8).unwrap();
        let out = forward(&model, &planes(100), &ForwardOptions { collect_trace: true }).unwrap();
        let trace = out.trace.unwrap();
        assert_eq!(trace.len(), 3);
        assert_eq!(trace[0].planes.len(), 4);
        assert_eq!((trace[0].planes[0].width(), trace[0].planes[0].height()), (32, 32));
        assert_eq!((trace[1].planes[0].width(), trace[1].planes[0].height()), (16, 16));
        assert_eq!(trace[2].planes.len(), 6);
        assert_eq!((trace[2].planes[0].width(), trace[2].planes[0].height()), (1, 1));
    }

    #[test]
    fn divergence_localizes_first_difference() {
        let model = gen_random_model(&parse_network("4C3-MP2-2SVM").unwrap(), 21).unwrap();
        let out = forward(&model, &planes(50), &ForwardOptions { collect_trace: true }).unwrap();
        let clean = out.trace.unwrap();
        assert_eq!(first_divergence(&clean, &clean), None);

        let mut faulty = clean.clone();
        let plane = &faulty[0].planes[2];
        let mut data = plane.data().to_vec();
        data[5 * 32 + 9] ^= 0x40;
        faulty[0].planes[2] = Plane::new(32, 32, data).unwrap();
        let div = first_divergence(&clean, &faulty).unwrap();
        assert_eq!((div.layer, div.channel, div.x, div.y), (0, 2, 9, 5));
        assert_eq!(div.label, "4C3");
    }

    #[test]
    fn kernel_constant_shortcut_matches_pack() {
        assert_eq!(PackedKernel3x3::ALL_PLUS, pack_kernel([1; 9]).unwrap());
    }
}
