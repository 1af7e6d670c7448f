//! Fixed-point numeric foundation: activation planes, packed sign-bit
//! weights, and the conditional-negate primitive everything else builds on.
//!
//! Arithmetic conventions used across the crate:
//! - activations are 8b unsigned, intermediate sums are 16b/32b signed
//!   two's complement with wrap-around on overflow (what hardware adders do)
//! - a weight sign bit of 1 means +1, 0 means -1
//! - packed layouts are row-major and LSB-first within each word/byte

use std::error::Error;
use std::fmt;

/// Errors from constructing the foundation types.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FxError {
    /// Plane data length does not equal width * height.
    DataLenMismatch { width: usize, height: usize, len: usize },
    /// A weight sign outside {-1, +1} was supplied at the given index.
    InvalidSign { index: usize, value: i8 },
    /// A packed 3x3 kernel word had one of bits 9..16 set.
    KernelHighBitsSet { bits: u16 },
    /// A packed dense row had the wrong byte count or nonzero pad bits.
    BadRowBytes { length: usize, bytes: usize },
}

impl fmt::Display for FxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FxError::DataLenMismatch { width, height, len } => {
                write!(f, "plane data length {len} does not match {width}x{height}")
            }
            FxError::InvalidSign { index, value } => {
                write!(f, "weight sign at index {index} is {value}, expected -1 or +1")
            }
            FxError::KernelHighBitsSet { bits } => {
                write!(f, "packed 3x3 kernel word {bits:#06x} has bits above bit 8 set")
            }
            FxError::BadRowBytes { length, bytes } => {
                write!(f, "packed row of length {length} has bad byte payload ({bytes} bytes or nonzero padding)")
            }
        }
    }
}

impl Error for FxError {}

macro_rules! impl_plane {
    ($name:ident, $elem:ty, $doc:literal) => {
        #[doc = $doc]
        #[derive(Debug, Clone, PartialEq, Eq)]
        pub struct $name {
            width: usize,
            height: usize,
            data: Vec<$elem>,
        }

        impl $name {
            /// Builds a plane from row-major data; the length must be width * height.
            pub fn new(width: usize, height: usize, data: Vec<$elem>) -> Result<Self, FxError> {
                if data.len() != width * height {
                    return Err(FxError::DataLenMismatch { width, height, len: data.len() });
                }
                Ok(Self { width, height, data })
            }

            /// A plane with every element set to `value`.
            pub fn filled(width: usize, height: usize, value: $elem) -> Self {
                Self { width, height, data: vec![value; width * height] }
            }

            pub fn zeros(width: usize, height: usize) -> Self {
                Self::filled(width, height, 0 as $elem)
            }

            pub fn width(&self) -> usize {
                self.width
            }

            pub fn height(&self) -> usize {
                self.height
            }

            pub fn data(&self) -> &[$elem] {
                &self.data
            }

            pub fn get(&self, x: usize, y: usize) -> $elem {
                debug_assert!(x < self.width && y < self.height);
                self.data[y * self.width + x]
            }

            pub fn row(&self, y: usize) -> &[$elem] {
                &self.data[y * self.width..(y + 1) * self.width]
            }
        }
    };
}

impl_plane!(Plane, u8, "A 2-D map of 8b unsigned activations (one colour plane or feature map).");
impl_plane!(Accum16Plane, i16, "A 2-D map of 16b signed intermediate sums.");
impl_plane!(Accum32Plane, i32, "A 2-D map of 32b signed intermediate sums.");

/// Multiply an 8b activation by a +/-1 weight without multiplying: copy when
/// the sign bit is 1, negate when it is 0. The result always fits 16b.
#[inline(always)]
pub fn conditional_negate(activation: u8, sign_plus: bool) -> i16 {
    let a = activation as i16;
    if sign_plus {
        a
    } else {
        -a
    }
}

/// Sign bits of a 3x3 binary kernel packed row-major into one 16b word.
///
/// Bit `dy * 3 + dx` holds the sign of the tap at row `dy`, column `dx`
/// (bit 0 is the top-left tap, bit 8 the bottom-right). Bit value 1 means a
/// weight of +1, 0 means -1. Bits 9..16 are always zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackedKernel3x3 {
    bits: u16,
}

impl PackedKernel3x3 {
    /// The kernel with every tap at +1.
    pub const ALL_PLUS: PackedKernel3x3 = PackedKernel3x3 { bits: 0x01FF };

    /// Wraps a raw packed word, rejecting any set bit above bit 8.
    pub fn from_bits(bits: u16) -> Result<Self, FxError> {
        if bits & !0x01FF != 0 {
            return Err(FxError::KernelHighBitsSet { bits });
        }
        Ok(Self { bits })
    }

    pub fn bits(self) -> u16 {
        self.bits
    }

    /// True when the tap at (dy, dx) has weight +1.
    #[inline(always)]
    pub fn sign_plus(self, dy: usize, dx: usize) -> bool {
        debug_assert!(dy < 3 && dx < 3);
        self.bits >> (dy * 3 + dx) & 1 == 1
    }

    /// Unpacks back to the nine +/-1 signs, row-major.
    pub fn signs(self) -> [i8; 9] {
        let mut out = [0i8; 9];
        for (i, s) in out.iter_mut().enumerate() {
            *s = if self.bits >> i & 1 == 1 { 1 } else { -1 };
        }
        out
    }
}

/// Packs nine +/-1 signs (row-major) into a [`PackedKernel3x3`].
pub fn pack_kernel(signs: [i8; 9]) -> Result<PackedKernel3x3, FxError> {
    let mut bits = 0u16;
    for (i, &s) in signs.iter().enumerate() {
        match s {
            1 => bits |= 1 << i,
            -1 => {}
            _ => return Err(FxError::InvalidSign { index: i, value: s }),
        }
    }
    Ok(PackedKernel3x3 { bits })
}

/// Sign bits of one fully-connected output row, bit-packed LSB-first within
/// each byte and zero-padded to a byte boundary. Same 1 -> +1, 0 -> -1
/// convention as [`PackedKernel3x3`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedDenseRow {
    length: usize,
    bits: Vec<u8>,
}

impl PackedDenseRow {
    /// Packs a sign per input; rejects entries outside {-1, +1}.
    pub fn from_signs(signs: &[i8]) -> Result<Self, FxError> {
        let mut bits = vec![0u8; signs.len().div_ceil(8)];
        for (i, &s) in signs.iter().enumerate() {
            match s {
                1 => bits[i / 8] |= 1 << (i % 8),
                -1 => {}
                _ => return Err(FxError::InvalidSign { index: i, value: s }),
            }
        }
        Ok(Self { length: signs.len(), bits })
    }

    /// Wraps an already-packed byte payload; the byte count must be
    /// ceil(length / 8) and all pad bits must be zero.
    pub fn from_bytes(length: usize, bits: Vec<u8>) -> Result<Self, FxError> {
        if bits.len() != length.div_ceil(8) {
            return Err(FxError::BadRowBytes { length, bytes: bits.len() });
        }
        let pad = bits.len() * 8 - length;
        if pad > 0 && bits[bits.len() - 1] >> (8 - pad) != 0 {
            return Err(FxError::BadRowBytes { length, bytes: bits.len() });
        }
        Ok(Self { length, bits })
    }

    /// Count of inputs this row covers.
    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bits
    }

    /// True when input `i` has weight +1.
    #[inline(always)]
    pub fn sign_plus(&self, i: usize) -> bool {
        debug_assert!(i < self.length);
        self.bits[i / 8] >> (i % 8) & 1 == 1
    }

    /// Unpacks back to +/-1 signs.
    pub fn signs(&self) -> Vec<i8> {
        (0..self.length).map(|i| if self.sign_plus(i) { 1 } else { -1 }).collect()
    }
}
