//! Display models and their fits from photometric measurements.
//!
//! Achromatic: `L = L1 · h(v) + L0` with `h(x) = x^γ`.
//! Chromatic: `x = h_r(v_r)·r + h_g(v_g)·g + h_b(v_b)·b + z` in CIE XYZ.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colorspace::{Channel, ColorTriplet};
use crate::optim::{levenberg_marquardt, LevenbergMarquardtOptions};
use crate::ErrorClass;

/// Singular values below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DisplayError {
    #[error("invalid display parameter {what} = {value}")]
    Parameter { what: &'static str, value: f64 },
    #[error("post-processed value {0} outside [0, 1]")]
    Domain(f64),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("fit did not converge after {iterations} iterations (last iterate {last:?})")]
    NonConvergence { iterations: usize, last: Vec<f64> },
    #[error("primary matrix is singular (rank {rank}, condition {condition:e})")]
    Singular { rank: usize, condition: f64 },
    #[error("measurement {index}: {reason}")]
    Measurement { index: usize, reason: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error("json: {0}")]
    Json(String),
}

impl DisplayError {
    pub fn class(&self) -> ErrorClass {
        match self {
            DisplayError::Csv(_) | DisplayError::Json(_) => ErrorClass::Format,
            DisplayError::Parameter { .. } | DisplayError::Domain(_) => ErrorClass::Usage,
            _ => ErrorClass::Computation,
        }
    }
}

/// A monotone, invertible map from [0, 1] onto [0, 1].
pub trait Activation {
    fn forward(&self, x: f64) -> f64;
    fn inverse(&self, y: f64) -> f64;
}

/// `h(x) = x^γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaCurve(pub f64);

impl Activation for GammaCurve {
    fn forward(&self, x: f64) -> f64 {
        x.powf(self.0)
    }

    fn inverse(&self, y: f64) -> f64 {
        y.powf(self.0.recip())
    }
}

fn positive(what: &'static str, value: f64) -> Result<f64, DisplayError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(DisplayError::Parameter { what, value })
    }
}

fn unit(v: f64) -> Result<f64, DisplayError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(DisplayError::Domain(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AchromaticDisplay {
    /// Minimum displayable luminance, cd/m².
    pub l0: f64,
    /// Luminance range (maximum minus minimum), cd/m².
    pub l1: f64,
    pub gamma: f64,
}

impl AchromaticDisplay {
    pub fn new(l0: f64, l1: f64, gamma: f64) -> Result<Self, DisplayError> {
        if !(l0.is_finite() && l0 >= 0.0) {
            return Err(DisplayError::Parameter {
                what: "L0",
                value: l0,
            });
        }
        Ok(Self {
            l0,
            l1: positive("L1", l1)?,
            gamma: positive("gamma", gamma)?,
        })
    }

    /// `w = L0 / L1`.
    pub fn background_ratio(&self) -> f64 {
        self.l0 / self.l1
    }

    pub fn activation(&self) -> GammaCurve {
        GammaCurve(self.gamma)
    }

    pub fn luminance(&self, v: f64) -> Result<f64, DisplayError> {
        unit(v).map(|v| self.luminance_unchecked(v))
    }

    pub(crate) fn luminance_unchecked(&self, v: f64) -> f64 {
        self.l1 * v.powf(self.gamma) + self.l0
    }
}

pub fn achromatic_luminance(disp: &AchromaticDisplay, v: f64) -> Result<f64, DisplayError> {
    disp.luminance(v)
}

/// Weights expressing the background as a mix of the primaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundWeights {
    pub weights: [f64; 3],
    /// ‖[r g b]·w − z‖; nonzero only when z leaves the primaries' span.
    pub residual: f64,
    pub rank: usize,
    pub condition: f64,
}

fn primary_matrix(primaries: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_columns(&primaries.map(Vector3::from))
}

/// Solve `[r g b]·w = z`. Full-rank primaries give the exact solution; a
/// rank-2 set falls back to the minimum-norm least-squares solution with the
/// residual reported. Rank below 2 is an error.
pub fn solve_background_weights(
    primaries: &[[f64; 3]; 3],
    background: [f64; 3],
) -> Result<BackgroundWeights, DisplayError> {
    let m = primary_matrix(primaries);
    let svd = m.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    let tol = RANK_TOLERANCE * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < 2 {
        return Err(DisplayError::Singular { rank, condition });
    }
    let z = Vector3::from(background);
    let w = svd
        .solve(&z, tol)
        .map_err(|_| DisplayError::Singular { rank, condition })?;
    let residual = (m * w - z).norm();
    Ok(BackgroundWeights {
        weights: [w[0], w[1], w[2]],
        residual,
        rank,
        condition,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChromaticDisplay {
    /// XYZ of the red, green and blue primaries at full activation.
    pub primaries: [[f64; 3]; 3],
    /// XYZ emitted at `v = (0, 0, 0)`.
    pub background: [f64; 3],
    pub gammas: [f64; 3],
    /// `w` with `[r g b]·w = z`.
    pub weights: [f64; 3],
}

impl ChromaticDisplay {
    /// Validates the primaries and derives the background weights.
    pub fn new(
        primaries: [[f64; 3]; 3],
        background: [f64; 3],
        gammas: [f64; 3],
    ) -> Result<Self, DisplayError> {
        for (p, what) in primaries.iter().zip(["r.Y", "g.Y", "b.Y"]) {
            positive(what, p[1])?;
            if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(DisplayError::Parameter { what, value: p[1] });
            }
        }
        if background.iter().any(|x| !x.is_finite()) {
            return Err(DisplayError::Parameter {
                what: "background",
                value: background[1],
            });
        }
        for (g, what) in gammas.iter().zip(["gamma_r", "gamma_g", "gamma_b"]) {
            positive(what, *g)?;
        }
        let weights = solve_background_weights(&primaries, background)?.weights;
        Ok(Self {
            primaries,
            background,
            gammas,
            weights,
        })
    }

    pub fn activation(&self, channel: Channel) -> GammaCurve {
        GammaCurve(self.gammas[channel.index()])
    }

    pub fn xyz(&self, v: ColorTriplet) -> Result<[f64; 3], DisplayError> {
        v.try_map(|_, x| unit(x))?;
        Ok(self.xyz_unchecked(v))
    }

    pub(crate) fn xyz_unchecked(&self, v: ColorTriplet) -> [f64; 3] {
        let mut x = self.background;
        for (k, vk) in v.to_array().into_iter().enumerate() {
            let p = vk.powf(self.gammas[k]);
            for (xi, prim) in x.iter_mut().zip(self.primaries[k]) {
                *xi += p * prim;
            }
        }
        x
    }

    /// Coefficients `c` with `x = c_r·r + c_g·g + c_b·b`, i.e. `h_k(v_k) + w_k`
    /// when the background lies in the primaries' span.
    pub fn primary_coefficients(&self, xyz: [f64; 3]) -> Result<[f64; 3], DisplayError> {
        let m = primary_matrix(&self.primaries);
        let inv = m.try_inverse().ok_or(DisplayError::Singular {
            rank: 2,
            condition: f64::INFINITY,
        })?;
        let c = inv * Vector3::from(xyz);
        Ok([c[0], c[1], c[2]])
    }
}

pub fn chromatic_xyz(disp: &ChromaticDisplay, v: ColorTriplet) -> Result<[f64; 3], DisplayError> {
    disp.xyz(v)
}

/// Either kind of display.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DisplayModel {
    Achromatic(AchromaticDisplay),
    Chromatic(ChromaticDisplay),
}

/// Photometer or colorimeter reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Reading {
    Luminance(f64),
    Xyz([f64; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    /// Post-processed value shown on screen.
    pub v: ColorTriplet,
    pub reading: Reading,
}

impl Measurement {
    pub fn luminance(v: f64, l: f64) -> Self {
        Self {
            v: ColorTriplet::splat(v),
            reading: Reading::Luminance(l),
        }
    }

    pub fn xyz(v: ColorTriplet, xyz: [f64; 3]) -> Self {
        Self {
            v,
            reading: Reading::Xyz(xyz),
        }
    }
}

/// Summary of a least-squares fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub residual_rms: f64,
    pub point_count: usize,
    /// Model minus measurement, one entry per averaged input level.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

/// Group by exact input value and average the readings.
fn average_repeats<const N: usize>(
    points: impl IntoIterator<Item = (f64, [f64; N])>,
) -> Vec<(f64, [f64; N])> {
    let mut groups: BTreeMap<u64, (f64, [f64; N], usize)> = BTreeMap::new();
    for (v, y) in points {
        // +0.0 and -0.0 share a key
        let key = (v + 0.0).to_bits();
        let e = groups.entry(key).or_insert((v, [0.0; N], 0));
        for (acc, yi) in e.1.iter_mut().zip(y) {
            *acc += yi;
        }
        e.2 += 1;
    }
    let mut out: Vec<_> = groups
        .into_values()
        .map(|(v, sum, n)| (v, sum.map(|s| s / n as f64)))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn check_measurement_v(index: usize, v: ColorTriplet) -> Result<(), DisplayError> {
    v.ensure_unit("measurement")
        .map(|_| ())
        .map_err(|e| DisplayError::Measurement {
            index,
            reason: e.to_string(),
        })
}

/// Fit `(L0, L1, γ)` by nonlinear least squares.
///
/// Repeated `v` levels are averaged first. Needs at least five distinct
/// levels, one at or below 0.1 and one at or above 0.9.
pub fn fit_achromatic(
    meas: &[Measurement],
) -> Result<(AchromaticDisplay, FitReport), DisplayError> {
    let mut raw = Vec::with_capacity(meas.len());
    for (index, m) in meas.iter().enumerate() {
        check_measurement_v(index, m.v)?;
        match m.reading {
            Reading::Luminance(l) if l.is_finite() && l >= 0.0 => raw.push((m.v.r, [l])),
            Reading::Luminance(l) => {
                return Err(DisplayError::Measurement {
                    index,
                    reason: format!("luminance {l} must be nonnegative"),
                })
            }
            Reading::Xyz(_) => {
                return Err(DisplayError::Measurement {
                    index,
                    reason: "expected a luminance reading".into(),
                })
            }
        }
    }
    let points = average_repeats(raw);
    if points.len() < 5 {
        return Err(DisplayError::InsufficientData(format!(
            "{} distinct levels, need at least 5",
            points.len()
        )));
    }
    let (vmin, vmax) = (points[0].0, points[points.len() - 1].0);
    if vmin > 0.1 || vmax < 0.9 {
        return Err(DisplayError::InsufficientData(format!(
            "levels span [{vmin}, {vmax}]; need v ≤ 0.1 and v ≥ 0.9"
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1[0]).collect();
    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        return Err(DisplayError::Degenerate("readings are constant".into()));
    }

    let residuals = |p: &[f64]| -> Vec<f64> {
        xs.iter()
            .zip(&ys)
            .map(|(&v, &l)| p[1] * v.powf(p[2]) + p[0] - l)
            .collect()
    };
    let jacobian = |p: &[f64]| {
        DMatrix::from_fn(xs.len(), 3, |i, j| {
            let v = xs[i];
            match j {
                0 => 1.0,
                1 => v.powf(p[2]),
                _ if v > 0.0 => p[1] * v.powf(p[2]) * v.ln(),
                _ => 0.0,
            }
        })
    };
    let fit = levenberg_marquardt(
        residuals,
        jacobian,
        &[lo, hi - lo, 2.2],
        &LevenbergMarquardtOptions::default(),
    );
    if !fit.converged {
        return Err(DisplayError::NonConvergence {
            iterations: fit.iterations,
            last: fit.x,
        });
    }
    let display = AchromaticDisplay::new(fit.x[0].max(0.0), fit.x[1], fit.x[2])?;
    let res: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .map(|(&v, &l)| display.luminance_unchecked(v) - l)
        .collect();
    let rms = (res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64).sqrt();
    Ok((
        display,
        FitReport {
            residual_rms: rms,
            point_count: meas.len(),
            residuals: res,
            iterations: fit.iterations,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChromaticFitReport {
    /// Per-channel gamma fits on the extracted activations.
    pub channels: [FitReport; 3],
    pub condition: f64,
    pub background_residual: f64,
    /// Set when the background is not representable by the primaries.
    pub background_outside_span: bool,
    pub point_count: usize,
}

impl ChromaticFitReport {
    pub fn residual_rms(&self) -> f64 {
        let (sum, n) = self.channels.iter().fold((0.0, 0usize), |(s, n), c| {
            (
                s + c.residual_rms.powi(2) * c.residuals.len() as f64,
                n + c.residuals.len(),
            )
        });
        (sum / n.max(1) as f64).sqrt()
    }
}

/// Fit a chromatic display from per-channel ramps.
///
/// Rows with `v = (0,0,0)` measure the background. Every other row must drive
/// exactly one channel; each channel needs a row at full drive.
pub fn fit_chromatic(
    meas: &[Measurement],
) -> Result<(ChromaticDisplay, ChromaticFitReport), DisplayError> {
    let mut background = Vec::new();
    let mut ramps: [Vec<(f64, [f64; 3])>; 3] = Default::default();
    for (index, m) in meas.iter().enumerate() {
        check_measurement_v(index, m.v)?;
        let Reading::Xyz(x) = m.reading else {
            return Err(DisplayError::Measurement {
                index,
                reason: "expected an XYZ reading".into(),
            });
        };
        if x.iter().any(|c| !c.is_finite()) {
            return Err(DisplayError::Measurement {
                index,
                reason: "non-finite XYZ".into(),
            });
        }
        let driven: Vec<usize> = (0..3).filter(|&k| m.v.to_array()[k] > 0.0).collect();
        match driven.as_slice() {
            [] => background.push((0.0, x)),
            [k] => ramps[*k].push((m.v.to_array()[*k], x)),
            _ => {
                return Err(DisplayError::Measurement {
                    index,
                    reason: "chromatic ramps must drive a single channel".into(),
                })
            }
        }
    }
    if background.is_empty() {
        return Err(DisplayError::InsufficientData(
            "no v = (0,0,0) background measurement".into(),
        ));
    }
    let z = average_repeats(background)[0].1;
    let mut averaged: [Vec<(f64, [f64; 3])>; 3] = Default::default();
    let mut primaries = [[0.0; 3]; 3];
    for k in 0..3 {
        averaged[k] = average_repeats(std::mem::take(&mut ramps[k]));
        let full = averaged[k].iter().find(|p| p.0 == 1.0).ok_or_else(|| {
            DisplayError::InsufficientData(format!(
                "channel {} has no v = 1 measurement",
                Channel::ALL[k]
            ))
        })?;
        if !averaged[k].iter().any(|p| p.0 < 1.0) {
            return Err(DisplayError::InsufficientData(format!(
                "channel {} needs at least one level strictly between 0 and 1",
                Channel::ALL[k]
            )));
        }
        for i in 0..3 {
            primaries[k][i] = full.1[i] - z[i];
        }
    }

    let m = primary_matrix(&primaries);
    let svd = m.svd(false, false);
    let condition = svd.singular_values.max() / svd.singular_values.min();
    let inv = m
        .try_inverse()
        .filter(|_| condition.is_finite() && condition < 1.0 / RANK_TOLERANCE)
        .ok_or(DisplayError::Singular {
            rank: svd.rank(RANK_TOLERANCE * svd.singular_values.max()),
            condition,
        })?;

    let zv = Vector3::from(z);
    let mut gammas = [0.0; 3];
    let mut channels: Vec<FitReport> = Vec::with_capacity(3);
    for k in 0..3 {
        // activation of channel k at each ramp level, with the zero level
        // pinned by construction
        let mut pts: Vec<(f64, f64)> = vec![(0.0, 0.0)];
        pts.extend(
            averaged[k]
                .iter()
                .map(|(v, x)| (*v, (inv * (Vector3::from(*x) - zv))[k])),
        );
        let (gamma, report) = fit_gamma_only(&pts)?;
        gammas[k] = gamma;
        channels.push(report);
    }
    let bg = solve_background_weights(&primaries, z)?;
    let display = ChromaticDisplay {
        primaries,
        background: z,
        gammas,
        weights: bg.weights,
    };
    // validates ranges
    ChromaticDisplay::new(primaries, z, gammas)?;
    let scale = primaries
        .iter()
        .flatten()
        .fold(0.0f64, |a, b| a.max(b.abs()));
    Ok((
        display,
        ChromaticFitReport {
            channels: channels.try_into().expect("three channels"),
            condition,
            background_residual: bg.residual,
            background_outside_span: bg.residual > 1e-9 * scale.max(1.0),
            point_count: meas.len(),
        },
    ))
}

/// Least squares for `p ≈ v^γ`.
fn fit_gamma_only(points: &[(f64, f64)]) -> Result<(f64, FitReport), DisplayError> {
    let residuals = |p: &[f64]| {
        points
            .iter()
            .map(|&(v, a)| v.powf(p[0]) - a)
            .collect::<Vec<_>>()
    };
    let jacobian = |p: &[f64]| {
        DMatrix::from_fn(points.len(), 1, |i, _| {
            let v = points[i].0;
            if v > 0.0 {
                v.powf(p[0]) * v.ln()
            } else {
                0.0
            }
        })
    };
    let fit = levenberg_marquardt(
        residuals,
        jacobian,
        &[2.2],
        &LevenbergMarquardtOptions::default(),
    );
    if !fit.converged {
        return Err(DisplayError::NonConvergence {
            iterations: fit.iterations,
            last: fit.x,
        });
    }
    let gamma = positive("fitted gamma", fit.x[0])?;
    let res = residuals(&fit.x);
    let rms = (res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64).sqrt();
    Ok((
        gamma,
        FitReport {
            residual_rms: rms,
            point_count: points.len(),
            residuals: res,
            iterations: fit.iterations,
        },
    ))
}

/// Fit metadata stored next to a persisted display.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub residual_rms: f64,
    pub point_count: usize,
}

/// On-disk form of a fitted display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayDocument {
    #[serde(flatten)]
    pub model: DisplayModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitMetadata>,
}

impl DisplayDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("display serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DisplayError> {
        let doc: Self =
            serde_json::from_str(text).map_err(|e| DisplayError::Json(e.to_string()))?;
        match doc.model {
            DisplayModel::Achromatic(d) => {
                AchromaticDisplay::new(d.l0, d.l1, d.gamma)?;
            }
            DisplayModel::Chromatic(d) => {
                ChromaticDisplay::new(d.primaries, d.background, d.gammas)?;
            }
        }
        Ok(doc)
    }
}

fn csv_err(e: impl std::fmt::Display) -> DisplayError {
    DisplayError::Csv(e.to_string())
}

fn read_columns(text: &str, wanted: &[&str]) -> Result<Vec<Vec<f64>>, DisplayError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let idx: Vec<usize> = wanted
        .iter()
        .map(|w| {
            headers
                .iter()
                .position(|h| h == *w)
                .ok_or_else(|| DisplayError::Csv(format!("missing column '{w}'")))
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = idx
            .iter()
            .zip(wanted)
            .map(|(&i, name)| {
                let field = rec.get(i).unwrap_or("");
                field.parse::<f64>().map_err(|_| {
                    DisplayError::Csv(format!(
                        "row {}: column {name}: '{field}' is not a number",
                        n + 2
                    ))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Achromatic measurements from CSV with columns `v,L`.
pub fn read_achromatic_csv(text: &str) -> Result<Vec<Measurement>, DisplayError> {
    Ok(read_columns(text, &["v", "L"])?
        .into_iter()
        .map(|r| Measurement::luminance(r[0], r[1]))
        .collect())
}

/// Chromatic measurements from CSV with columns `v_r,v_g,v_b,X,Y,Z`.
pub fn read_chromatic_csv(text: &str) -> Result<Vec<Measurement>, DisplayError> {
    Ok(read_columns(text, &["v_r", "v_g", "v_b", "X", "Y", "Z"])?
        .into_iter()
        .map(|r| Measurement::xyz(ColorTriplet::new(r[0], r[1], r[2]), [r[3], r[4], r[5]]))
        .collect())
}

/// Write measurements in the CSV layout matching their reading kind.
/// Luminance rows use the red component of `v`.
pub fn write_measurements_csv(meas: &[Measurement]) -> String {
    let chromatic = meas.iter().any(|m| matches!(m.reading, Reading::Xyz(_)));
    let mut out = String::from(if chromatic {
        "v_r,v_g,v_b,X,Y,Z\n"
    } else {
        "v,L\n"
    });
    for m in meas {
        match m.reading {
            Reading::Luminance(l) => out.push_str(&format!("{},{}\n", m.v.r, l)),
            Reading::Xyz([x, y, z]) => out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                m.v.r, m.v.g, m.v.b, x, y, z
            )),
        }
    }
    out
}
