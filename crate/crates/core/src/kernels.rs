//! Bit-exact functional models of the accelerator's three custom vector ALU
//! operations, plus the standard layer primitives composed from them.
//!
//! The convolution instruction consumes an 8-byte-wide column strip and
//! produces two adjacent 3x3 convolution output columns per pass (offsets
//! 0/1 on the first pass, 2/3 on the second), then the strip base advances
//! by 4 bytes. Sums are 16b two's complement and wrap on overflow; a single
//! 3x3 window never exceeds +/-2295 so wrap can only occur when partials
//! from multiple input maps are summed.

use std::error::Error;
use std::fmt;

use crate::fxcore::{conditional_negate, Accum16Plane, Accum32Plane, PackedDenseRow, PackedKernel3x3, Plane};

/// Input maps are accumulated in 16b for this many maps before being widened
/// into the 32b running total.
pub const MAP_GROUP_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KernelError {
    /// A convolution strip needs at least 3 rows.
    StripTooShort { rows: usize },
    /// Strip base column must be a multiple of 4.
    UnalignedStrip { base_x: usize },
    /// conv_plane requires the input width to be a multiple of 4.
    WidthNotAligned { width: usize },
    /// Plane too small to hold a valid 3x3 output.
    PlaneTooSmall { width: usize, height: usize },
    /// Element-wise operands must share dimensions.
    DimensionMismatch { left: (usize, usize), right: (usize, usize) },
    /// accumulate_maps needs at least one partial.
    EmptyPartials,
    /// accumulate_maps group size must be at least 1.
    ZeroGroupSize,
    /// Max-pooling requires even dimensions.
    OddPoolDim { width: usize, height: usize },
    /// Dense row length or parameter count does not match the input.
    LengthMismatch { expected: usize, got: usize },
}

impl fmt::Display for KernelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelError::StripTooShort { rows } => write!(f, "column strip has {rows} rows, need at least 3"),
            KernelError::UnalignedStrip { base_x } => write!(f, "strip base column {base_x} is not a multiple of 4"),
            KernelError::WidthNotAligned { width } => write!(f, "plane width {width} is not a multiple of 4"),
            KernelError::PlaneTooSmall { width, height } => {
                write!(f, "plane {width}x{height} too small for a 3x3 convolution")
            }
            KernelError::DimensionMismatch { left, right } => {
                write!(f, "dimension mismatch: {}x{} vs {}x{}", left.0, left.1, right.0, right.1)
            }
            KernelError::EmptyPartials => write!(f, "no partial maps to accumulate"),
            KernelError::ZeroGroupSize => write!(f, "accumulation group size must be at least 1"),
            KernelError::OddPoolDim { width, height } => {
                write!(f, "2x2 max-pool needs even dimensions, got {width}x{height}")
            }
            KernelError::LengthMismatch { expected, got } => {
                write!(f, "length mismatch: expected {expected}, got {got}")
            }
        }
    }
}

impl Error for KernelError {}

/// An 8-byte-wide vertical slice of a plane, the unit the dual-convolution
/// instruction consumes. Reads past the plane's right edge are zero-filled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnStrip {
    base_x: usize,
    rows: Vec<[u8; 8]>,
}

impl ColumnStrip {
    pub fn new(base_x: usize, rows: Vec<[u8; 8]>) -> Result<Self, KernelError> {
        if base_x % 4 != 0 {
            return Err(KernelError::UnalignedStrip { base_x });
        }
        Ok(Self { base_x, rows })
    }

    /// Extracts the strip starting at `base_x`, zero-filling columns beyond
    /// the plane's right edge.
    pub fn from_plane(plane: &Plane, base_x: usize) -> Result<Self, KernelError> {
        if base_x % 4 != 0 {
            return Err(KernelError::UnalignedStrip { base_x });
        }
        let width = plane.width();
        let mut rows = Vec::with_capacity(plane.height());
        for y in 0..plane.height() {
            let row = plane.row(y);
            let mut bytes = [0u8; 8];
            let avail = width.saturating_sub(base_x).min(8);
            bytes[..avail].copy_from_slice(&row[base_x..base_x + avail]);
            rows.push(bytes);
        }
        Ok(Self { base_x, rows })
    }

    pub fn base_x(&self) -> usize {
        self.base_x
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    #[inline(always)]
    pub fn row_bytes(&self, r: usize) -> &[u8; 8] {
        &self.rows[r]
    }
}

/// Which of the two passes over a column strip to run: the first produces
/// output columns at byte offsets 0 and 1, the second at offsets 2 and 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    First,
    Second,
}

impl Pass {
    pub fn offsets(self) -> (usize, usize) {
        match self {
            Pass::First => (0, 1),
            Pass::Second => (2, 3),
        }
    }
}

/// Two adjacent columns of 16b convolution sums, one per offset of a pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DualConvResult {
    columns: [Vec<i16>; 2],
}

impl DualConvResult {
    /// Output column for lane 0 or 1 of the pass; length is rows - 2.
    pub fn column(&self, lane: usize) -> &[i16] {
        &self.columns[lane]
    }
}

/// One pass of the dual-convolution instruction: computes two overlapping
/// 3x3 convolution output columns over the strip, accumulating each window
/// in wrapping 16b arithmetic.
pub fn dual_conv_pass(strip: &ColumnStrip, kernel: PackedKernel3x3, pass: Pass) -> Result<DualConvResult, KernelError> {
    let rows = strip.rows();
    if rows < 3 {
        return Err(KernelError::StripTooShort { rows });
    }
    let (o0, o1) = pass.offsets();
    let out_rows = rows - 2;
    let mut col0 = vec![0i16; out_rows];
    let mut col1 = vec![0i16; out_rows];
    for r in 0..out_rows {
        let mut s0 = 0i16;
        let mut s1 = 0i16;
        for dy in 0..3 {
            let bytes = strip.row_bytes(r + dy);
            for dx in 0..3 {
                let plus = kernel.sign_plus(dy, dx);
                s0 = s0.wrapping_add(conditional_negate(bytes[o0 + dx], plus));
                s1 = s1.wrapping_add(conditional_negate(bytes[o1 + dx], plus));
            }
        }
        col0[r] = s0;
        col1[r] = s1;
    }
    Ok(DualConvResult { columns: [col0, col1] })
}

/// Valid 3x3 convolution of a whole plane, tiled out of dual-convolution
/// passes: strips are taken at base columns 0, 4, 8, ... and each strip's
/// two passes produce output columns base..base+3. Output columns past
/// width-3 (which only exist because strips zero-fill beyond the right
/// edge) are discarded. The result is (width-2) x (height-2) and must be
/// bit-identical to a naive full-plane correlation.
pub fn conv_plane(input: &Plane, kernel: PackedKernel3x3) -> Result<Accum16Plane, KernelError> {
    let w = input.width();
    let h = input.height();
    if w % 4 != 0 {
        return Err(KernelError::WidthNotAligned { width: w });
    }
    if w < 4 || h < 3 {
        return Err(KernelError::PlaneTooSmall { width: w, height: h });
    }
    let out_w = w - 2;
    let out_h = h - 2;
    let mut out = vec![0i16; out_w * out_h];
    let mut base_x = 0;
    while base_x < out_w {
        let strip = ColumnStrip::from_plane(input, base_x)?;
        for pass in [Pass::First, Pass::Second] {
            let result = dual_conv_pass(&strip, kernel, pass)?;
            let (o0, o1) = pass.offsets();
            for (lane, off) in [(0, o0), (1, o1)] {
                let x = base_x + off;
                if x >= out_w {
                    continue;
                }
                for (r, &v) in result.column(lane).iter().enumerate() {
                    out[r * out_w + x] = v;
                }
            }
        }
        base_x += 4;
    }
    Ok(Accum16Plane::new(out_w, out_h, out).expect("sized to out_w*out_h"))
}

/// Quad-16b to 32b SIMD add: element-wise `acc + sign_extend(partial)` in
/// wrapping 32b arithmetic. (The hardware packs four 16b lanes per machine
/// word; semantically this is a pure element-wise widening add.)
pub fn quad_add_16_to_32(acc: &Accum32Plane, partial: &Accum16Plane) -> Result<Accum32Plane, KernelError> {
    if acc.width() != partial.width() || acc.height() != partial.height() {
        return Err(KernelError::DimensionMismatch {
            left: (acc.width(), acc.height()),
            right: (partial.width(), partial.height()),
        });
    }
    let data = acc
        .data()
        .iter()
        .zip(partial.data())
        .map(|(&a, &p)| a.wrapping_add(p as i32))
        .collect();
    Ok(Accum32Plane::new(acc.width(), acc.height(), data).expect("same dims"))
}

/// Result of [`accumulate_maps`]: the widened 32b total plus a count of 16b
/// wrap-around events observed inside the groups (0 when the every-N-maps
/// discipline kept all intra-group sums in range).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAccum {
    pub total: Accum32Plane,
    pub overflow_events: u64,
}

/// Sums per-input-map 16b convolution partials: within each group of up to
/// `group_size` consecutive maps the sums stay in wrapping 16b arithmetic,
/// then each completed group is widened into the 32b total via
/// [`quad_add_16_to_32`]. Every 16b add that wraps is counted as one
/// overflow event; results are unaffected by the counting.
pub fn accumulate_maps(partials: &[Accum16Plane], group_size: usize) -> Result<GroupAccum, KernelError> {
    if group_size == 0 {
        return Err(KernelError::ZeroGroupSize);
    }
    let first = partials.first().ok_or(KernelError::EmptyPartials)?;
    let (w, h) = (first.width(), first.height());
    for p in partials {
        if p.width() != w || p.height() != h {
            return Err(KernelError::DimensionMismatch { left: (w, h), right: (p.width(), p.height()) });
        }
    }
    let mut total = Accum32Plane::zeros(w, h);
    let mut overflow_events = 0u64;
    for group in partials.chunks(group_size) {
        let mut group_sum = group[0].data().to_vec();
        for partial in &group[1..] {
            for (g, &v) in group_sum.iter_mut().zip(partial.data()) {
                match g.checked_add(v) {
                    Some(x) => *g = x,
                    None => {
                        *g = g.wrapping_add(v);
                        overflow_events += 1;
                    }
                }
            }
        }
        let group_plane = Accum16Plane::new(w, h, group_sum).expect("same dims");
        total = quad_add_16_to_32(&total, &group_plane)?;
    }
    Ok(GroupAccum { total, overflow_events })
}

/// 32b-to-8b activation: add the per-channel bias, arithmetic-right-shift
/// (floor) by the per-channel shift, then clamp to [0, 255]. The clamp at 0
/// realizes ReLU; the clamp at 255 saturates.
pub fn activate_32_to_8(acc: &Accum32Plane, bias: i32, shift: u32) -> Plane {
    assert!(shift <= 31, "activation shift must be at most 31");
    let data = acc
        .data()
        .iter()
        .map(|&v| (v.wrapping_add(bias) >> shift).clamp(0, 255) as u8)
        .collect();
    Plane::new(acc.width(), acc.height(), data).expect("same dims")
}

/// 2x2 max-pooling over non-overlapping blocks; halves both dimensions.
pub fn maxpool2(input: &Plane) -> Result<Plane, KernelError> {
    let (w, h) = (input.width(), input.height());
    if w % 2 != 0 || h % 2 != 0 {
        return Err(KernelError::OddPoolDim { width: w, height: h });
    }
    let (ow, oh) = (w / 2, h / 2);
    let mut data = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        let top = input.row(2 * y);
        let bot = input.row(2 * y + 1);
        for x in 0..ow {
            let m = top[2 * x].max(top[2 * x + 1]).max(bot[2 * x]).max(bot[2 * x + 1]);
            data.push(m);
        }
    }
    Ok(Plane::new(ow, oh, data).expect("sized to ow*oh"))
}

fn signed_dot(input: &[u8], row: &PackedDenseRow) -> Result<i32, KernelError> {
    if row.len() != input.len() {
        return Err(KernelError::LengthMismatch { expected: input.len(), got: row.len() });
    }
    let mut sum = 0i32;
    for (i, &a) in input.iter().enumerate() {
        sum = sum.wrapping_add(conditional_negate(a, row.sign_plus(i)) as i32);
    }
    Ok(sum)
}

/// Fully connected layer: each output is the 32b signed sum of conditionally
/// negated inputs, passed through the bias/shift/clamp activation. Returns a
/// 1-row plane of the output activations.
pub fn dense(input: &[u8], rows: &[PackedDenseRow], biases: &[i32], shifts: &[u8]) -> Result<Plane, KernelError> {
    if biases.len() != rows.len() {
        return Err(KernelError::LengthMismatch { expected: rows.len(), got: biases.len() });
    }
    if shifts.len() != rows.len() {
        return Err(KernelError::LengthMismatch { expected: rows.len(), got: shifts.len() });
    }
    let mut out = Vec::with_capacity(rows.len());
    for (j, row) in rows.iter().enumerate() {
        let sum = signed_dot(input, row)?;
        let shift = shifts[j] as u32;
        assert!(shift <= 31, "activation shift must be at most 31");
        out.push((sum.wrapping_add(biases[j]) >> shift).clamp(0, 255) as u8);
    }
    Ok(Plane::new(rows.len(), 1, out).expect("sized to rows"))
}

/// Linear SVM output layer: raw 32b signed scores (sum plus bias), with no
/// activation or shift. A more positive score is better.
pub fn svm_scores(input: &[u8], rows: &[PackedDenseRow], biases: &[i32]) -> Result<Vec<i32>, KernelError> {
    if biases.len() != rows.len() {
        return Err(KernelError::LengthMismatch { expected: rows.len(), got: biases.len() });
    }
    rows.iter()
        .zip(biases)
        .map(|(row, &b)| signed_dot(input, row).map(|s| s.wrapping_add(b)))
        .collect()
}

/// Index of the most positive score; ties break to the lowest index.
pub fn argmax(scores: &[i32]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
