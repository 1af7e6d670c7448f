//! Bit-exact software model of a binarized-weight CNN inference datapath.
//!
//! The engine computes with 1b weights (sign bits meaning +1/-1), 8b unsigned
//! activations and 16b/32b signed intermediate sums, mirroring the arithmetic
//! of a small vector accelerator: a dual-column 3x3 convolution instruction,
//! a quad 16b-to-32b widening add, and a 32b-to-8b shift/clamp activation.
//!
//! Modules:
//! - [`fxcore`]: planes, packed sign-bit weights, conditional negation
//! - [`kernels`]: the accelerated layer primitives (strip-tiled convolution,
//!   group accumulation, activation, pooling, dense, SVM scores)
//! - [`netgraph`]: topology notation parser, shape inference, MAC counting
//! - [`oracle`]: independent naive fixed-point and floating-point references
//! - [`model_io`]: packed model file format, random models, image ingestion
//! - [`engine`]: the full forward pipeline built on [`kernels`]

pub mod engine;
pub mod fxcore;
pub mod kernels;
pub mod model_io;
pub mod netgraph;
pub mod oracle;
