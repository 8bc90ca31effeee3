//! sRGB transfer function and 8-bit quantization.
//!
//! `srgb_decode` is the standard piecewise curve (linear toe, 2.4 power) that
//! maps encoded values to linear ones; `srgb_encode` is its exact inverse.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Encoded-domain breakpoint between the linear toe and the power segment.
pub const DECODE_BREAK: f64 = 0.04045;
/// Linear-domain breakpoint, `DECODE_BREAK / 12.92`.
pub const ENCODE_BREAK: f64 = 0.0031308;

const TOE_SLOPE: f64 = 12.92;
const OFFSET: f64 = 0.055;
const SCALE: f64 = 1.055;
const EXPONENT: f64 = 2.4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ColorError {
    #[error("{op}: input {value} outside [0, 1]")]
    Domain { op: &'static str, value: f64 },
    #[error("{op}: channel {channel} = {value} outside [0, 1]")]
    ChannelDomain {
        op: &'static str,
        channel: Channel,
        value: f64,
    },
    #[error("non-finite component {channel} = {value}")]
    NonFinite { channel: Channel, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    R,
    G,
    B,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::R, Channel::G, Channel::B];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Channel::R => "r",
            Channel::G => "g",
            Channel::B => "b",
        })
    }
}

/// An ordered (r, g, b) triple. The meaningful range depends on where the
/// triple sits in the pipeline, so range checks live with the consumers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ColorTriplet {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl ColorTriplet {
    pub const ZERO: ColorTriplet = ColorTriplet::splat(0.0);
    pub const ONE: ColorTriplet = ColorTriplet::splat(1.0);

    pub const fn new(r: f64, g: f64, b: f64) -> Self {
        Self { r, g, b }
    }

    pub const fn splat(x: f64) -> Self {
        Self { r: x, g: x, b: x }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    pub fn get(self, channel: Channel) -> f64 {
        self.to_array()[channel.index()]
    }

    pub fn map(self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self::new(f(self.r), f(self.g), f(self.b))
    }

    /// Component-wise map that may fail; the error carries the channel.
    pub fn try_map<E>(self, mut f: impl FnMut(Channel, f64) -> Result<f64, E>) -> Result<Self, E> {
        Ok(Self::new(
            f(Channel::R, self.r)?,
            f(Channel::G, self.g)?,
            f(Channel::B, self.b)?,
        ))
    }

    pub fn zip_map(self, other: Self, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        Self::new(f(self.r, other.r), f(self.g, other.g), f(self.b, other.b))
    }

    pub fn scale(self, k: f64) -> Self {
        self.map(|x| x * k)
    }

    pub fn max_component(self) -> f64 {
        self.r.max(self.g).max(self.b)
    }

    pub fn min_component(self) -> f64 {
        self.r.min(self.g).min(self.b)
    }

    pub fn ensure_finite(self) -> Result<Self, ColorError> {
        self.try_map(|channel, value| {
            if value.is_finite() {
                Ok(value)
            } else {
                Err(ColorError::NonFinite { channel, value })
            }
        })
    }

    /// Reject components outside [0, 1], naming the operation in the error.
    pub fn ensure_unit(self, op: &'static str) -> Result<Self, ColorError> {
        self.try_map(|channel, value| {
            if (0.0..=1.0).contains(&value) {
                Ok(value)
            } else {
                Err(ColorError::ChannelDomain { op, channel, value })
            }
        })
    }
}

impl std::ops::Add for ColorTriplet {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl std::ops::Sub for ColorTriplet {
    type Output = Self;

    fn sub(self, rhs: Self) -> Self {
        self.zip_map(rhs, |a, b| a - b)
    }
}

fn check_unit(op: &'static str, value: f64) -> Result<f64, ColorError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(ColorError::Domain { op, value })
    }
}

/// Encoded to linear: the sRGB transfer function `s`.
pub fn srgb_decode(x: f64) -> Result<f64, ColorError> {
    check_unit("srgb_decode", x).map(srgb_decode_unchecked)
}

/// Linear to encoded: `s⁻¹`.
pub fn srgb_encode(y: f64) -> Result<f64, ColorError> {
    check_unit("srgb_encode", y).map(srgb_encode_unchecked)
}

/// [`srgb_decode`] without the domain check, for inner loops whose inputs
/// are already known to lie in [0, 1].
#[inline]
pub fn srgb_decode_unchecked(x: f64) -> f64 {
    if x <= DECODE_BREAK {
        x / TOE_SLOPE
    } else {
        ((x + OFFSET) / SCALE).powf(EXPONENT)
    }
}

#[inline]
pub fn srgb_encode_unchecked(y: f64) -> f64 {
    if y <= ENCODE_BREAK {
        y * TOE_SLOPE
    } else {
        // 1.055·p − 0.055 rearranged so that y = 1 maps exactly to 1
        let p = y.powf(EXPONENT.recip());
        p + OFFSET * (p - 1.0)
    }
}

pub fn srgb_decode3(t: ColorTriplet) -> Result<ColorTriplet, ColorError> {
    t.try_map(|channel, value| {
        check_channel("srgb_decode", channel, value).map(srgb_decode_unchecked)
    })
}

pub fn srgb_encode3(t: ColorTriplet) -> Result<ColorTriplet, ColorError> {
    t.try_map(|channel, value| {
        check_channel("srgb_encode", channel, value).map(srgb_encode_unchecked)
    })
}

fn check_channel(op: &'static str, channel: Channel, value: f64) -> Result<f64, ColorError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(ColorError::ChannelDomain { op, channel, value })
    }
}

/// Round to the nearest multiple of 1/255, ties away from zero.
pub fn quantize_8bit(t: ColorTriplet) -> Result<ColorTriplet, ColorError> {
    t.try_map(|channel, value| {
        check_channel("quantize_8bit", channel, value).map(quantize_unchecked)
    })
}

#[inline]
pub(crate) fn quantize_unchecked(x: f64) -> f64 {
    // f64::round is half-away-from-zero.
    (x * 255.0).round() / 255.0
}
