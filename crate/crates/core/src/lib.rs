//! Forward model of an HDRP-style render pipeline and the tools needed to
//! calibrate it against a physical display.
//!
//! The crate is organized bottom-up:
//!
//! - [`colorspace`]: the sRGB transfer function and 8-bit quantization.
//! - [`scene`]: Lambertian and unlit rendering with exposure and light direction.
//! - [`cube`]: `.cube` files, the non-uniform knot grid and trilinear tonemapping.
//! - [`display`]: achromatic and chromatic display models and their fits.
//! - [`calibration`]: gamma-correction cubes, scale-constant and knot estimation.
//! - [`harness`]: synthetic scene generation, sample I/O and model validation.
//!
//! Data-parallel loops such as sample generation and objective evaluation
//! run on rayon when the `parallel` feature is enabled and fall back to plain
//! iterators otherwise. Results are identical either way.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod colorspace;
pub mod cube;
pub mod display;
mod error;
pub mod harness;
pub mod optim;
pub mod par;
pub mod scene;
mod stats;

pub use colorspace::ColorTriplet;
pub use error::{Error, ErrorClass, Result};
pub use stats::{median, pairwise_sum};
