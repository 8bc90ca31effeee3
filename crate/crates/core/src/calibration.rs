//! Building gamma-correction cubes and estimating the renderer's hidden
//! constants: the scale constant `c` and the knot coordinates `u*_i`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colorspace::{srgb_decode_unchecked, srgb_encode_unchecked, Channel, ColorTriplet};
use crate::cube::{
    interpolate, locate, make_delta_cube, CubeError, CubeLut, KnotGrid, FIRST_ACTIVE,
};
use crate::display::DisplayModel;
use crate::harness::{median_abs_error_255, prediction_csv, PredictionRow, SceneSample};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::scene::{MaterialKind, SceneError, DEFAULT_SCALE_CONSTANT};
use crate::{pairwise_sum, par, ErrorClass};

/// Log-spaced points in the refinement grid, not counting the endpoints.
pub const REFINE_GRID_POINTS: usize = 2048;

/// Peak outputs at or below this count as no response in a delta sweep.
pub const NO_RESPONSE_LEVEL: f64 = 1e-6;

/// Flank samples used for the line fits lie between these fractions of the
/// peak output.
pub const FLANK_BAND: (f64, f64) = (0.2, 0.8);

/// Minimum Lambertian samples for a scale-constant estimate.
pub const MIN_SCALE_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("invalid {what}: {value}")]
    InvalidSpec { what: &'static str, value: f64 },
    #[error("{0}")]
    WrongDisplay(&'static str),
    #[error("unprocessed value {0} must be nonnegative and finite")]
    Domain(f64),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("missing delta sweep for m = {m}")]
    MissingSweep { m: usize },
    #[error("delta sweep m = {m}: {reason}")]
    Sweep { m: usize, reason: String },
    #[error("knot estimates are not strictly increasing at u*_{index}")]
    NonMonotone { index: usize },
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: SceneError,
    },
    #[error("sweep csv: {0}")]
    Csv(String),
}

impl CalibrationError {
    pub fn class(&self) -> ErrorClass {
        match self {
            CalibrationError::InvalidSpec { .. }
            | CalibrationError::WrongDisplay(_)
            | CalibrationError::Domain(_) => ErrorClass::Usage,
            CalibrationError::Cube(_) | CalibrationError::Csv(_) => ErrorClass::Format,
            _ => ErrorClass::Computation,
        }
    }
}

/// Target display and range constant for a gamma-correction tonemap.
///
/// Unprocessed values in `[0, r]` map onto the display's full range. For a
/// chromatic display each channel uses its own `w_k` and `γ_k`; with `r = 1`
/// this is `f_k(u) = s(h_k⁻¹(max((1 + w_k)·u − w_k, 0)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaCorrectionSpec {
    display: DisplayModel,
    r: f64,
}

impl GammaCorrectionSpec {
    pub fn new(display: DisplayModel, r: f64) -> Result<Self, CalibrationError> {
        if !(r.is_finite() && r > 0.0) {
            return Err(CalibrationError::InvalidSpec {
                what: "range constant r",
                value: r,
            });
        }
        let spec = Self { display, r };
        for w in spec.weights() {
            if !(w.is_finite() && w >= 0.0) {
                return Err(CalibrationError::InvalidSpec {
                    what: "background weight (must be >= 0)",
                    value: w,
                });
            }
        }
        Ok(spec)
    }

    pub fn display(&self) -> &DisplayModel {
        &self.display
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// `w_k`, equal across channels for an achromatic display.
    pub fn weights(&self) -> [f64; 3] {
        match &self.display {
            DisplayModel::Achromatic(d) => [d.background_ratio(); 3],
            DisplayModel::Chromatic(d) => d.weights,
        }
    }

    pub fn gammas(&self) -> [f64; 3] {
        match &self.display {
            DisplayModel::Achromatic(d) => [d.gamma; 3],
            DisplayModel::Chromatic(d) => d.gammas,
        }
    }

    /// Cutoff below which the display shows only its background,
    /// `r·w_k / (1 + w_k)`.
    pub fn u0(&self) -> [f64; 3] {
        self.weights().map(|w| self.r * w / (1.0 + w))
    }

    /// Exact tonemap for one channel; `u` is assumed nonnegative.
    pub fn channel_value(&self, channel: Channel, u: f64) -> f64 {
        let k = channel.index();
        let w = self.weights()[k];
        let x = ((1.0 + w) * u / self.r - w).clamp(0.0, 1.0);
        srgb_decode_unchecked(x.powf(self.gammas()[k].recip()))
    }
}

fn check_u(u: f64) -> Result<f64, CalibrationError> {
    if u.is_finite() && u >= 0.0 {
        Ok(u)
    } else {
        Err(CalibrationError::Domain(u))
    }
}

/// `f(u) = s(h⁻¹(max((1 + w)·u/r − w, 0)))`, saturating at 1 for `u > r`.
pub fn gamma_tonemap_achromatic(
    spec: &GammaCorrectionSpec,
    u: f64,
) -> Result<f64, CalibrationError> {
    if !matches!(spec.display, DisplayModel::Achromatic(_)) {
        return Err(CalibrationError::WrongDisplay(
            "achromatic tonemap needs an achromatic display",
        ));
    }
    Ok(spec.channel_value(Channel::R, check_u(u)?))
}

/// Per-channel gamma-correction tonemap. An achromatic spec applies the same
/// curve to every channel.
pub fn gamma_tonemap_chromatic(
    spec: &GammaCorrectionSpec,
    u: ColorTriplet,
) -> Result<ColorTriplet, CalibrationError> {
    u.try_map(|ch, x| check_u(x).map(|x| spec.channel_value(ch, x)))
}

/// Separable cube with `t_k = f(k, u*_i)` at every active knot. Knots 1 and
/// 2 repeat the value at knot 3. Outputs are clamped to [0, 1].
pub fn separable_cube(
    knots: &KnotGrid,
    f: impl Fn(Channel, f64) -> f64,
) -> Result<CubeLut, CalibrationError> {
    let columns = Channel::ALL.map(|ch| channel_column(knots, |u| f(ch, u)));
    Ok(CubeLut::separable(&columns[0], &columns[1], &columns[2])?)
}

fn channel_column(knots: &KnotGrid, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let active: Vec<f64> = knots
        .active()
        .iter()
        .map(|&u| f(u).clamp(0.0, 1.0))
        .collect();
    let mut col = vec![active[0]; FIRST_ACTIVE - 1];
    col.extend(active);
    col
}

/// Outcome of [`build_correction_cube`]. Errors are sums of squared
/// tonemap differences over all three channels on the refinement grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub refine_requested: bool,
    /// Whether the refined outputs were kept.
    pub refined: bool,
    pub unrefined_sse: f64,
    pub final_sse: f64,
    pub grid_points: usize,
    pub warning: Option<String>,
}

/// Refinement grid: 0, then [`REFINE_GRID_POINTS`] log-spaced points from
/// `u*_3` to `r`, then `r` again.
pub fn refinement_grid(knots: &KnotGrid, r: f64) -> Vec<f64> {
    let lo = knots.active()[0];
    let mut grid = vec![0.0];
    if r > lo && lo > 0.0 {
        let (a, b) = (lo.ln(), r.ln());
        let last = REFINE_GRID_POINTS - 1;
        grid.extend((0..REFINE_GRID_POINTS).map(|i| {
            if i == 0 {
                lo
            } else if i == last {
                r
            } else {
                (a + (b - a) * i as f64 / last as f64).exp()
            }
        }));
    }
    grid.push(r);
    grid
}

/// Piecewise-linear interpolation of `values` (one per active knot).
fn interp_1d(active: &[f64], values: &[f64], u: f64) -> f64 {
    let (cell, frac) = locate(active, u);
    values[cell] + (values[cell + 1] - values[cell]) * frac
}

fn sse_1d(active: &[f64], values: &[f64], grid: &[f64], target: &[f64]) -> f64 {
    let sq: Vec<f64> = grid
        .iter()
        .zip(target)
        .map(|(&u, &t)| (interp_1d(active, values, u) - t).powi(2))
        .collect();
    pairwise_sum(&sq)
}

/// Least-squares knot outputs for one channel, with outputs held in [0, 1]
/// by fixing violators at the bound and re-solving.
fn refine_channel(active: &[f64], start: &[f64], grid: &[f64], target: &[f64]) -> Option<Vec<f64>> {
    let na = active.len();
    let cells: Vec<(usize, f64)> = grid.iter().map(|&u| locate(active, u)).collect();
    let mut supported = vec![false; na];
    for &(c, f) in &cells {
        if 1.0 - f > 0.0 {
            supported[c] = true;
        }
        if f > 0.0 {
            supported[c + 1] = true;
        }
    }
    let mut values = start.to_vec();
    let mut free: Vec<bool> = supported.clone();
    for _ in 0..=na {
        let cols: Vec<usize> = (0..na).filter(|&i| free[i]).collect();
        if cols.is_empty() {
            break;
        }
        let mut col_of = vec![usize::MAX; na];
        for (j, &i) in cols.iter().enumerate() {
            col_of[i] = j;
        }
        let mut a = DMatrix::<f64>::zeros(grid.len(), cols.len());
        let mut b = DVector::<f64>::zeros(grid.len());
        for (row, (&(c, f), &t)) in cells.iter().zip(target).enumerate() {
            let mut rhs = t;
            for (i, wgt) in [(c, 1.0 - f), (c + 1, f)] {
                if wgt == 0.0 {
                    continue;
                }
                if free[i] {
                    a[(row, col_of[i])] += wgt;
                } else {
                    rhs -= wgt * values[i];
                }
            }
            b[row] = rhs;
        }
        let sol = a.svd(true, true).solve(&b, 1e-12).ok()?;
        let mut violated = false;
        for (j, &i) in cols.iter().enumerate() {
            let x = sol[j];
            if !x.is_finite() {
                return None;
            }
            if !(0.0..=1.0).contains(&x) {
                values[i] = x.clamp(0.0, 1.0);
                free[i] = false;
                violated = true;
            } else {
                values[i] = x;
            }
        }
        if !violated {
            break;
        }
    }
    Some(values)
}

/// Cube implementing the gamma-correction tonemap on the given knots.
///
/// Point construction evaluates the exact tonemap at each knot. With
/// `refine`, each channel's knot outputs are then re-fitted by least squares
/// against the exact tonemap on [`refinement_grid`]; the refined cube is
/// kept only if its error is no larger.
pub fn build_correction_cube(
    spec: &GammaCorrectionSpec,
    knots: &KnotGrid,
    refine: bool,
) -> Result<(CubeLut, CorrectionReport), CalibrationError> {
    let active = knots.active();
    let grid = refinement_grid(knots, spec.r);
    let mut columns: [Vec<f64>; 3] = Default::default();
    let mut unrefined_sse = 0.0;
    let mut refined_sse = 0.0;
    let mut failure = None;
    for ch in Channel::ALL {
        let point: Vec<f64> = active.iter().map(|&u| spec.channel_value(ch, u)).collect();
        let target: Vec<f64> = grid.iter().map(|&u| spec.channel_value(ch, u)).collect();
        let base = sse_1d(active, &point, &grid, &target);
        unrefined_sse += base;
        let chosen = if refine {
            match refine_channel(active, &point, &grid, &target) {
                Some(v) => {
                    refined_sse += sse_1d(active, &v, &grid, &target);
                    v
                }
                None => {
                    failure = Some(format!("least-squares refinement failed for channel {ch}"));
                    refined_sse += base;
                    point
                }
            }
        } else {
            point
        };
        let mut col = vec![chosen[0]; FIRST_ACTIVE - 1];
        col.extend(chosen);
        columns[ch.index()] = col;
    }

    let point_cube = || separable_cube(knots, |ch, u| spec.channel_value(ch, u));
    let mut report = CorrectionReport {
        refine_requested: refine,
        refined: false,
        unrefined_sse,
        final_sse: unrefined_sse,
        grid_points: grid.len(),
        warning: None,
    };
    let lut = if !refine {
        point_cube()?
    } else if let Some(msg) = failure {
        log::warn!("{msg}; using point construction");
        report.warning = Some(msg);
        point_cube()?
    } else if !(refined_sse <= unrefined_sse) {
        let msg = format!(
            "refinement raised the grid error ({refined_sse:e} > {unrefined_sse:e}); using point construction"
        );
        log::warn!("{msg}");
        report.warning = Some(msg);
        point_cube()?
    } else {
        report.refined = true;
        report.final_sse = refined_sse;
        CubeLut::separable(&columns[0], &columns[1], &columns[2])?
    };
    Ok((lut, report))
}

/// Through-origin regression of predicted on actual unprocessed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleEstimate {
    pub c: f64,
    /// Slope of predicted (`c = 1`) against actual `u = s(v)`; `c = 1/slope`.
    pub slope: f64,
    /// Channel values used in the fit.
    pub points: usize,
    /// Channel values left out because `v_k` had saturated at 1.
    pub excluded_saturated: usize,
    pub ignored_unlit: usize,
    /// RMS of `predicted − slope·actual`.
    pub residual_rms: f64,
}

/// Estimate the scale constant from Lambertian samples rendered without
/// tonemapping.
///
/// Channels that rendered to 1 are clipped, not proportional, and are left
/// out. Unlit samples carry no information about `c` and are skipped.
pub fn estimate_scale_constant(samples: &[SceneSample]) -> Result<ScaleEstimate, CalibrationError> {
    let lambert: Vec<(usize, &SceneSample)> = samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kind == MaterialKind::Lambertian)
        .collect();
    if lambert.len() < MIN_SCALE_SAMPLES {
        return Err(CalibrationError::InsufficientData(format!(
            "{} Lambertian samples, need at least {MIN_SCALE_SAMPLES}",
            lambert.len()
        )));
    }
    let mut pairs = Vec::with_capacity(3 * lambert.len());
    let mut excluded = 0;
    for (index, s) in &lambert {
        let p = s
            .unprocessed(1.0)
            .map_err(|source| CalibrationError::Sample {
                index: *index,
                source,
            })?;
        for ch in Channel::ALL {
            let v = s.v.get(ch);
            if v >= 1.0 {
                excluded += 1;
                continue;
            }
            pairs.push((p.get(ch), srgb_decode_unchecked(v.clamp(0.0, 1.0))));
        }
    }
    let spa = pairwise_sum(&pairs.iter().map(|(p, a)| p * a).collect::<Vec<_>>());
    let saa = pairwise_sum(&pairs.iter().map(|(_, a)| a * a).collect::<Vec<_>>());
    if !(saa > 0.0 && spa > 0.0) {
        return Err(CalibrationError::Degenerate(
            "predicted or actual values are all zero".into(),
        ));
    }
    let slope = spa / saa;
    let res: Vec<f64> = pairs.iter().map(|(p, a)| (p - slope * a).powi(2)).collect();
    Ok(ScaleEstimate {
        c: 1.0 / slope,
        slope,
        points: pairs.len(),
        excluded_saturated: excluded,
        ignored_unlit: samples.len() - lambert.len(),
        residual_rms: (pairwise_sum(&res) / pairs.len() as f64).sqrt(),
    })
}

/// Scalar response of one delta cube over a sweep of gray inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSweep {
    m: usize,
    samples: Vec<(f64, f64)>,
}

impl DeltaSweep {
    /// `samples` are `(u, t)` pairs with `u` strictly increasing and `t` in
    /// [0, 1].
    pub fn new(m: usize, samples: Vec<(f64, f64)>) -> Result<Self, CalibrationError> {
        let bad = |reason: String| Err(CalibrationError::Sweep { m, reason });
        if m == 0 {
            return bad("cube index starts at 1".into());
        }
        for (i, &(u, t)) in samples.iter().enumerate() {
            if !u.is_finite() || (i > 0 && u <= samples[i - 1].0) {
                return bad(format!("inputs not strictly increasing at sample {i}"));
            }
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("output {t} at sample {i} outside [0, 1]"));
            }
        }
        Ok(Self { m, samples })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }
}

/// `count` log-spaced inputs from `lo` to `hi` inclusive.
pub fn log_sweep(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    let last = count.saturating_sub(1).max(1) as f64;
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / last).exp())
        .collect()
}

/// Delta sweeps generated with the cube interpolator: for each `m` in
/// `1..=n`, the red output of cube `delta_m` at `u = (x, x, x)`.
pub fn simulate_delta_sweeps(
    knots: &KnotGrid,
    inputs: &[f64],
) -> Result<Vec<DeltaSweep>, CalibrationError> {
    (1..=knots.size())
        .map(|m| {
            let lut = make_delta_cube(m, knots.size())?;
            let samples = inputs
                .iter()
                .map(|&u| {
                    (
                        u,
                        interpolate(knots.active(), &lut, ColorTriplet::splat(u)).r,
                    )
                })
                .collect();
            DeltaSweep::new(m, samples)
        })
        .collect()
}

/// Sweeps as CSV with header `m,u,t`.
pub fn sweeps_to_csv(sweeps: &[DeltaSweep]) -> String {
    let mut out = String::from("m,u,t\n");
    for s in sweeps {
        for (u, t) in &s.samples {
            let _ = writeln!(out, "{},{u},{t}", s.m);
        }
    }
    out
}

pub fn sweeps_from_csv(text: &str) -> Result<Vec<DeltaSweep>, CalibrationError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| CalibrationError::Csv(e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != ["m", "u", "t"] {
        return Err(CalibrationError::Csv(format!(
            "expected header 'm,u,t', found '{}'",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<(f64, f64)>> = Default::default();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CalibrationError::Csv(e.to_string()))?;
        let field = |j: usize| rec.get(j).unwrap_or("");
        let err = |what: &str, tok: &str| {
            CalibrationError::Csv(format!("row {}: bad {what} '{tok}'", i + 1))
        };
        let m: usize = field(0).parse().map_err(|_| err("m", field(0)))?;
        let u: f64 = field(1).parse().map_err(|_| err("u", field(1)))?;
        let t: f64 = field(2).parse().map_err(|_| err("t", field(2)))?;
        groups.entry(m).or_default().push((u, t));
    }
    groups
        .into_iter()
        .map(|(m, mut s)| {
            s.sort_by(|a, b| a.0.total_cmp(&b.0));
            DeltaSweep::new(m, s)
        })
        .collect()
}

/// What the delta analysis found for one cube index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KnotStatus {
    /// Flank lines intersect at `u`. `rising` and `falling` count the samples
    /// in each flank fit; a flank with fewer than two is replaced by the
    /// peak level.
    Estimated {
        u: f64,
        rising: usize,
        falling: usize,
    },
    /// Every output is effectively zero.
    NoResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaKnotReport {
    pub m: usize,
    pub peak_input: f64,
    pub peak_output: f64,
    pub status: KnotStatus,
    /// Where the fitted rising and falling flank lines reach zero; for exact
    /// linear interpolation these are the neighboring knots.
    pub flank_zeros: (Option<f64>, Option<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaAnomaly {
    pub m: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaEstimate {
    pub knots: KnotGrid,
    pub reports: Vec<DeltaKnotReport>,
    pub anomalies: Vec<DeltaAnomaly>,
}

/// Ordinary least-squares line `t = a + b·u`.
fn fit_line(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mu = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mt = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sut: f64 = points.iter().map(|(u, t)| (u - mu) * (t - mt)).sum();
    let suu: f64 = points.iter().map(|(u, _)| (u - mu).powi(2)).sum();
    if !(suu > 0.0) {
        return None;
    }
    let b = sut / suu;
    Some((mt - b * mu, b))
}

fn analyze_sweep(sweep: &DeltaSweep, anomalies: &mut Vec<DeltaAnomaly>) -> DeltaKnotReport {
    let m = sweep.m;
    let s = &sweep.samples;
    let (peak_idx, &(peak_input, peak_output)) = s
        .iter()
        .enumerate()
        .fold(None::<(usize, &(f64, f64))>, |best, (i, p)| match best {
            Some((_, b)) if b.1 >= p.1 => best,
            _ => Some((i, p)),
        })
        .unwrap_or((0, &(f64::NAN, 0.0)));
    if !(peak_output > NO_RESPONSE_LEVEL) {
        return DeltaKnotReport {
            m,
            peak_input,
            peak_output: peak_output.max(0.0),
            status: KnotStatus::NoResponse,
            flank_zeros: (None, None),
        };
    }

    let tol = 0.02 * peak_output;
    let rising_ok = s[..=peak_idx].windows(2).all(|w| w[1].1 >= w[0].1 - tol);
    let falling_ok = s[peak_idx..].windows(2).all(|w| w[1].1 <= w[0].1 + tol);
    if !(rising_ok && falling_ok) {
        anomalies.push(DeltaAnomaly {
            m,
            message: "response is not unimodal".into(),
        });
    }

    let (lo, hi) = (FLANK_BAND.0 * peak_output, FLANK_BAND.1 * peak_output);
    let in_band = |p: &&(f64, f64)| (lo..=hi).contains(&p.1);
    let rising: Vec<(f64, f64)> = s[..peak_idx].iter().filter(in_band).copied().collect();
    let falling: Vec<(f64, f64)> = s[peak_idx + 1..].iter().filter(in_band).copied().collect();
    let level_crossing = |(a, b): (f64, f64)| (peak_output - a) / b;
    let (rise, fall) = (fit_line(&rising), fit_line(&falling));
    let zero = |l: Option<(f64, f64)>| l.filter(|l| l.1 != 0.0).map(|(a, b)| -a / b);
    let flank_zeros = (zero(rise), zero(fall));
    let u = match (rise, fall) {
        (Some((a1, b1)), Some((a2, b2))) if b1 != b2 => Some((a2 - a1) / (b1 - b2)),
        (Some(l), None) | (None, Some(l)) if l.1 != 0.0 => Some(level_crossing(l)),
        _ => None,
    };
    let u = match u {
        Some(u) if u.is_finite() && u > 0.0 => u,
        _ => {
            anomalies.push(DeltaAnomaly {
                m,
                message: "flank fit failed; using the input with the largest output".into(),
            });
            peak_input
        }
    };
    DeltaKnotReport {
        m,
        peak_input,
        peak_output,
        status: KnotStatus::Estimated {
            u,
            rising: rising.len(),
            falling: falling.len(),
        },
        flank_zeros,
    }
}

/// Estimate `u*_3 ..= u*_size` from delta-cube sweeps.
///
/// Sweeps for `m = 1, 2` are optional and expected to show no response.
/// Every `m` from 3 to `size` must be present and respond.
pub fn estimate_knots_delta(
    sweeps: &[DeltaSweep],
    size: usize,
) -> Result<DeltaEstimate, CalibrationError> {
    let mut by_m: Vec<Option<&DeltaSweep>> = vec![None; size + 1];
    for s in sweeps {
        if s.m > size {
            return Err(CalibrationError::Sweep {
                m: s.m,
                reason: format!("index exceeds grid size {size}"),
            });
        }
        if by_m[s.m].replace(s).is_some() {
            return Err(CalibrationError::Sweep {
                m: s.m,
                reason: "duplicate sweep".into(),
            });
        }
    }
    let mut anomalies = Vec::new();
    let mut reports = Vec::new();
    let mut estimates = Vec::new();
    for (m, sweep) in by_m.iter().enumerate().skip(1) {
        let Some(sweep) = sweep else {
            if m >= FIRST_ACTIVE {
                return Err(CalibrationError::MissingSweep { m });
            }
            continue;
        };
        let report = analyze_sweep(sweep, &mut anomalies);
        match (&report.status, m < FIRST_ACTIVE) {
            (KnotStatus::NoResponse, false) => {
                return Err(CalibrationError::Sweep {
                    m,
                    reason: "no response".into(),
                })
            }
            (KnotStatus::Estimated { .. }, true) => anomalies.push(DeltaAnomaly {
                m,
                message: "unexpected response from an inactive knot".into(),
            }),
            (KnotStatus::Estimated { u, .. }, false) => estimates.push(*u),
            (KnotStatus::NoResponse, true) => {}
        }
        reports.push(report);
    }
    if estimates.windows(2).any(|w| w[1] <= w[0]) {
        anomalies.push(DeltaAnomaly {
            m: 0,
            message: "estimates out of order in m; sorted".into(),
        });
        estimates.sort_by(f64::total_cmp);
    }
    if let Some(i) = estimates.windows(2).position(|w| w[1] <= w[0]) {
        return Err(CalibrationError::NonMonotone {
            index: i + 1 + FIRST_ACTIVE,
        });
    }
    for a in &anomalies {
        log::warn!("delta sweep m = {}: {}", a.m, a.message);
    }
    Ok(DeltaEstimate {
        knots: KnotGrid::new(size, estimates)?,
        reports,
        anomalies,
    })
}

/// Samples rendered under one known cube.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotTrainingSet {
    pub lut: CubeLut,
    pub samples: Vec<SceneSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOptions {
    pub scale_constant: f64,
    /// Samples with any `m_k` below this are dropped before fitting.
    pub m_threshold: f64,
    pub holdout_fraction: f64,
    /// Seed of the train/holdout shuffle.
    pub seed: u64,
    /// Weight of the squared log-gap penalty on out-of-order knots.
    pub penalty_weight: f64,
    pub nelder_mead: NelderMeadOptions,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            scale_constant: DEFAULT_SCALE_CONSTANT,
            m_threshold: 0.2,
            holdout_fraction: 0.2,
            seed: 0,
            penalty_weight: 1.0,
            nelder_mead: NelderMeadOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub train_count: usize,
    pub holdout_count: usize,
    /// Samples dropped by the `m_k` filter.
    pub excluded: usize,
    /// Mean squared error of `v` per channel at the start and the end.
    pub initial_objective: f64,
    pub final_objective: f64,
    pub train_median_abs_error_255: f64,
    pub holdout_median_abs_error_255: Option<f64>,
    pub evaluations: usize,
    pub converged: bool,
    pub warning: Option<String>,
    pub holdout_rows: Vec<PredictionRow>,
}

impl OptimizeReport {
    /// Holdout predictions in the shared error-report layout.
    pub fn holdout_csv(&self) -> String {
        let med = self
            .holdout_median_abs_error_255
            .map_or_else(|| "nan".into(), |m| m.to_string());
        prediction_csv(
            &self.holdout_rows,
            &[
                ("median_abs_error_x255", med),
                (
                    "train_median_abs_error_x255",
                    self.train_median_abs_error_255.to_string(),
                ),
                ("train_count", self.train_count.to_string()),
                ("holdout_count", self.holdout_count.to_string()),
                ("excluded", self.excluded.to_string()),
            ],
        )
    }
}

struct Prepared {
    index: usize,
    set: usize,
    kind: MaterialKind,
    m: ColorTriplet,
    u: ColorTriplet,
    v: ColorTriplet,
}

fn predict(active: &[f64], lut: &CubeLut, u: ColorTriplet) -> ColorTriplet {
    interpolate(active, lut, u).map(|t| srgb_encode_unchecked(t.clamp(0.0, 1.0)))
}

fn squared_error(active: &[f64], luts: &[CubeLut], p: &Prepared) -> f64 {
    let e = predict(active, &luts[p.set], p.u) - p.v;
    e.r * e.r + e.g * e.g + e.b * e.b
}

fn rows_for(active: &[f64], luts: &[CubeLut], items: &[&Prepared]) -> Vec<PredictionRow> {
    items
        .iter()
        .map(|p| PredictionRow {
            index: p.index,
            kind: p.kind,
            m: p.m,
            predicted: predict(active, &luts[p.set], p.u),
            actual: p.v,
        })
        .collect()
}

/// Fit the active knots so that the model reproduces samples rendered under
/// known cubes.
///
/// Knots are parameterized as `u*_i = init_i · exp(z_i)`, which keeps them
/// positive and leaves an optimal start exactly in place. Out-of-order knots
/// are discouraged by a penalty on negative log-gaps; a result that is
/// still out of order is an error.
pub fn estimate_knots_optimize(
    sets: &[KnotTrainingSet],
    init: &KnotGrid,
    opts: &OptimizeOptions,
) -> Result<(KnotGrid, OptimizeReport), CalibrationError> {
    let distinct = sets
        .iter()
        .enumerate()
        .any(|(i, a)| sets[..i].iter().any(|b| b.lut != a.lut));
    if !distinct {
        return Err(CalibrationError::InsufficientData(
            "need samples under at least two distinct cubes".into(),
        ));
    }
    if !(0.0..1.0).contains(&opts.holdout_fraction) {
        return Err(CalibrationError::InvalidSpec {
            what: "holdout fraction",
            value: opts.holdout_fraction,
        });
    }
    for s in sets {
        if s.lut.size() != init.size() {
            return Err(CubeError::SizeMismatch {
                lut: s.lut.size(),
                knots: init.size(),
            }
            .into());
        }
    }
    let luts: Vec<CubeLut> = sets.iter().map(|s| s.lut.clone()).collect();

    let mut prepared = Vec::new();
    let mut excluded = 0;
    let mut index = 0;
    for (set, s) in sets.iter().enumerate() {
        for sample in &s.samples {
            let i = index;
            index += 1;
            if sample.m.min_component() < opts.m_threshold {
                excluded += 1;
                continue;
            }
            let u = sample
                .unprocessed(opts.scale_constant)
                .map_err(|source| CalibrationError::Sample { index: i, source })?;
            prepared.push(Prepared {
                index: i,
                set,
                kind: sample.kind,
                m: sample.m,
                u,
                v: sample.v,
            });
        }
    }
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    let holdout_count = (prepared.len() as f64 * opts.holdout_fraction).round() as usize;
    let (hold_idx, train_idx) = order.split_at(holdout_count);
    let mut train_idx = train_idx.to_vec();
    let mut hold_idx = hold_idx.to_vec();
    train_idx.sort_unstable();
    hold_idx.sort_unstable();
    let train: Vec<&Prepared> = train_idx.iter().map(|&i| &prepared[i]).collect();
    let holdout: Vec<&Prepared> = hold_idx.iter().map(|&i| &prepared[i]).collect();
    if train.is_empty() {
        return Err(CalibrationError::InsufficientData(
            "no training samples left after filtering".into(),
        ));
    }

    let base = init.active().to_vec();
    let scale = 1.0 / (3 * train.len()) as f64;
    let knots_of =
        |z: &[f64]| -> Vec<f64> { base.iter().zip(z).map(|(b, zi)| b * zi.exp()).collect() };
    let objective = |z: &[f64]| -> f64 {
        let active = knots_of(z);
        let mut penalty = 0.0;
        for w in active.windows(2) {
            let gap = (w[1] / w[0]).ln();
            if !(gap > 0.0) {
                penalty += gap * gap + 1e-12;
            }
        }
        if penalty > 0.0 {
            // interpolation needs ordered knots; steer back without evaluating
            return 1.0 + opts.penalty_weight * penalty;
        }
        par::sum_slice(&train, |p| squared_error(&active, &luts, p)) * scale
    };

    let z0 = vec![0.0; base.len()];
    let initial_objective = objective(&z0);
    let min = nelder_mead(objective, &z0, &opts.nelder_mead);
    let active = knots_of(&min.x);
    if let Some(i) = active.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(CalibrationError::NonMonotone {
            index: i + 1 + FIRST_ACTIVE,
        });
    }
    let warning = (!min.converged).then(|| {
        let msg = format!(
            "knot optimization stopped after {} evaluations without converging",
            min.evaluations
        );
        log::warn!("{msg}");
        msg
    });
    let knots = KnotGrid::new(init.size(), active)?;
    let train_rows = rows_for(knots.active(), &luts, &train);
    let holdout_rows = rows_for(knots.active(), &luts, &holdout);
    let report = OptimizeReport {
        train_count: train.len(),
        holdout_count: holdout.len(),
        excluded,
        initial_objective,
        final_objective: min.value,
        train_median_abs_error_255: median_abs_error_255(&train_rows).unwrap_or(0.0),
        holdout_median_abs_error_255: median_abs_error_255(&holdout_rows),
        evaluations: min.evaluations,
        converged: min.converged,
        warning,
        holdout_rows,
    };
    Ok((knots, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorspace::srgb_encode;
    use crate::cube::{KnotSource, Tonemap, DEFAULT_SIZE, DELTA_KNOTS};
    use crate::display::{AchromaticDisplay, ChromaticDisplay};
    use crate::harness::{generate_samples, GenerationConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn achromatic(l0: f64, l1: f64, gamma: f64, r: f64) -> GammaCorrectionSpec {
        GammaCorrectionSpec::new(
            DisplayModel::Achromatic(AchromaticDisplay::new(l0, l1, gamma).unwrap()),
            r,
        )
        .unwrap()
    }

    fn chromatic() -> GammaCorrectionSpec {
        let primaries = [[41.2, 21.3, 1.9], [35.8, 71.5, 11.9], [18.0, 7.2, 95.0]];
        let mut z = [0.0; 3];
        for (k, w) in [0.01, 0.02, 0.03].into_iter().enumerate() {
            for i in 0..3 {
                z[i] += w * primaries[k][i];
            }
        }
        let d = ChromaticDisplay::new(primaries, z, [1.8, 2.2, 2.6]).unwrap();
        GammaCorrectionSpec::new(DisplayModel::Chromatic(d), 1.0).unwrap()
    }

    fn delta_grid() -> KnotGrid {
        KnotGrid::default_grid(KnotSource::Delta)
    }

    #[test]
    fn spec_validation() {
        let d = DisplayModel::Achromatic(AchromaticDisplay::new(2.0, 98.0, 2.2).unwrap());
        assert!(GammaCorrectionSpec::new(d, 0.0).is_err());
        assert!(GammaCorrectionSpec::new(d, f64::NAN).is_err());
        let s = GammaCorrectionSpec::new(d, 2.0).unwrap();
        let w = 2.0 / 98.0;
        assert_abs_diff_eq!(s.u0()[0], 2.0 * w / (1.0 + w), epsilon = 1e-15);
    }

    #[test]
    fn achromatic_tonemap_examples() {
        let s = achromatic(2.0, 98.0, 2.2, 1.0);
        assert_eq!(gamma_tonemap_achromatic(&s, 0.0).unwrap(), 0.0);
        assert_eq!(gamma_tonemap_achromatic(&s, 1.0).unwrap(), 1.0);
        assert_eq!(gamma_tonemap_achromatic(&s, 3.0).unwrap(), 1.0);
        let plain = achromatic(0.0, 1.0, 1.0, 1.0);
        assert_abs_diff_eq!(
            gamma_tonemap_achromatic(&plain, 0.5).unwrap(),
            0.214_041_140_482_232_44,
            epsilon = 1e-12
        );
        assert!(gamma_tonemap_achromatic(&s, -0.1).is_err());
        assert!(matches!(
            gamma_tonemap_achromatic(&chromatic(), 0.5),
            Err(CalibrationError::WrongDisplay(_))
        ));
    }

    #[test]
    fn chromatic_tonemap_examples() {
        let s = chromatic();
        assert_eq!(
            gamma_tonemap_chromatic(&s, ColorTriplet::ZERO).unwrap(),
            ColorTriplet::ZERO
        );
        assert_eq!(
            gamma_tonemap_chromatic(&s, ColorTriplet::ONE).unwrap(),
            ColorTriplet::ONE
        );
        let plain = achromatic(0.0, 1.0, 1.0, 1.0);
        let u = ColorTriplet::new(0.1, 0.5, 0.9);
        let t = gamma_tonemap_chromatic(&plain, u).unwrap();
        for (a, b) in t.to_array().iter().zip(u.to_array()) {
            assert_abs_diff_eq!(*a, srgb_decode_unchecked(b), epsilon = 1e-15);
        }
    }

    #[test]
    fn chromatic_tonemap_linearizes_each_primary() {
        let s = chromatic();
        let w = s.weights();
        let g = s.gammas();
        for i in 0..=100 {
            let u = i as f64 / 100.0;
            let t = gamma_tonemap_chromatic(&s, ColorTriplet::splat(u)).unwrap();
            for k in 0..3 {
                let v = srgb_encode(t.to_array()[k]).unwrap();
                let coef = v.powf(g[k]) + w[k];
                if u >= s.u0()[k] {
                    assert!((coef - (1.0 + w[k]) * u).abs() < 1e-12, "u {u} channel {k}");
                } else {
                    assert!((coef - w[k]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn point_cube_matches_formula_at_knots() {
        let s = achromatic(0.0, 1.0, 1.0, 1.0);
        let knots = delta_grid();
        let (lut, report) = build_correction_cube(&s, &knots, false).unwrap();
        assert!(!report.refined);
        let t = lut.get(15, 0, 0).r;
        assert_abs_diff_eq!(t, srgb_decode_unchecked(0.4406), epsilon = 1e-15);
        // knots 1 and 2 take knot 3's value
        assert_eq!(lut.get(0, 0, 0), lut.get(2, 2, 2));
        assert_eq!(lut.get(1, 5, 9).r, lut.get(2, 5, 9).r);
    }

    #[test]
    fn correction_cube_is_separable() {
        let (lut, _) = build_correction_cube(&chromatic(), &delta_grid(), true).unwrap();
        for i in 0..DEFAULT_SIZE {
            let r = lut.get(i, 0, 0).r;
            for (j, k) in [(5, 7), (31, 0), (12, 30)] {
                assert_eq!(lut.get(i, j, k).r, r);
            }
        }
    }

    #[test]
    fn refinement_never_increases_error() {
        for spec in [
            achromatic(2.0, 98.0, 2.2, 1.0),
            achromatic(0.5, 120.0, 2.4, 1.111),
            chromatic(),
        ] {
            let (_, report) = build_correction_cube(&spec, &delta_grid(), true).unwrap();
            assert!(report.refined, "{report:?}");
            assert!(report.final_sse <= report.unrefined_sse);
            assert_eq!(report.grid_points, REFINE_GRID_POINTS + 2);
        }
    }

    #[test]
    fn refinement_grid_shape() {
        let g = refinement_grid(&delta_grid(), 1.0);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], DELTA_KNOTS[0]);
        assert_eq!(g[g.len() - 1], 1.0);
        assert!(g.windows(2).all(|w| w[1] >= w[0]));
    }

    fn identity_samples(n: usize, seed: u64, quantize: bool, exposure: f64) -> Vec<SceneSample> {
        let mut cfg = GenerationConfig::new(n, seed, MaterialKind::Lambertian);
        cfg.quantize = quantize;
        cfg.ranges.exposures = vec![exposure];
        generate_samples(&cfg, &Tonemap::Identity).unwrap()
    }

    #[test]
    fn scale_constant_noiseless() {
        let est = estimate_scale_constant(&identity_samples(1000, 1, false, 0.0)).unwrap();
        assert!((est.c - 0.822).abs() < 1e-9, "{est:?}");
        assert!(est.excluded_saturated > 0);
    }

    #[test]
    fn scale_constant_ignores_exposure() {
        let a = estimate_scale_constant(&identity_samples(500, 2, false, 0.0)).unwrap();
        let b = estimate_scale_constant(&identity_samples(500, 2, false, 1.0)).unwrap();
        assert!((a.c - b.c).abs() < 1e-9);
    }

    #[test]
    fn scale_constant_is_equivariant() {
        // scaling every actual u by α scales c by α
        let samples = identity_samples(400, 3, false, 1.0);
        let alpha = 0.7;
        let scaled: Vec<SceneSample> = samples
            .iter()
            .map(|s| {
                let mut s = *s;
                s.v =
                    s.v.map(|v| srgb_encode_unchecked(alpha * srgb_decode_unchecked(v)));
                s
            })
            .collect();
        let a = estimate_scale_constant(&samples).unwrap();
        let b = estimate_scale_constant(&scaled).unwrap();
        assert!((b.c / a.c - alpha).abs() < 1e-9, "{} {}", a.c, b.c);
    }

    #[test]
    fn scale_constant_errors() {
        assert!(matches!(
            estimate_scale_constant(&identity_samples(50, 1, false, 0.0)),
            Err(CalibrationError::InsufficientData(_))
        ));
        let mut dark = identity_samples(200, 1, false, 0.0);
        for s in &mut dark {
            s.i_d = 0.0;
            s.i_a = 0.0;
            s.v = ColorTriplet::ZERO;
        }
        assert!(matches!(
            estimate_scale_constant(&dark),
            Err(CalibrationError::Degenerate(_))
        ));
    }

    fn sweep_inputs() -> Vec<f64> {
        log_sweep(1e-5, 100.0, 20_000)
    }

    #[test]
    fn delta_recovers_knots() {
        let sweeps = simulate_delta_sweeps(&delta_grid(), &sweep_inputs()).unwrap();
        assert_eq!(sweeps.len(), 32);
        let est = estimate_knots_delta(&sweeps, 32).unwrap();
        for (got, want) in est.knots.active().iter().zip(DELTA_KNOTS) {
            assert!((got / want - 1.0).abs() < 1e-9, "{got} vs {want}");
        }
        assert!(est.anomalies.is_empty(), "{:?}", est.anomalies);
        assert_eq!(est.reports[0].status, KnotStatus::NoResponse);
        assert_eq!(est.reports[1].status, KnotStatus::NoResponse);
    }

    #[test]
    fn delta_sweep_sixteen_peaks_near_044() {
        let sweeps = simulate_delta_sweeps(&delta_grid(), &sweep_inputs()).unwrap();
        let r = &estimate_knots_delta(&sweeps, 32).unwrap().reports[15];
        assert!((r.peak_input - 0.44).abs() < 0.005, "{r:?}");
    }

    #[test]
    fn delta_errors() {
        let mut sweeps = simulate_delta_sweeps(&delta_grid(), &sweep_inputs()).unwrap();
        sweeps.remove(10);
        assert_eq!(
            estimate_knots_delta(&sweeps, 32).unwrap_err(),
            CalibrationError::MissingSweep { m: 11 }
        );
        let flat = DeltaSweep::new(5, vec![(0.1, 0.0), (0.2, 0.0)]).unwrap();
        let mut sweeps = simulate_delta_sweeps(&delta_grid(), &sweep_inputs()).unwrap();
        sweeps[4] = flat;
        assert!(matches!(
            estimate_knots_delta(&sweeps, 32),
            Err(CalibrationError::Sweep { m: 5, .. })
        ));
        assert!(DeltaSweep::new(3, vec![(0.2, 0.0), (0.1, 0.0)]).is_err());
        assert!(DeltaSweep::new(3, vec![(0.1, 1.5)]).is_err());
    }

    #[test]
    fn delta_flags_bimodal_sweep() {
        let mut sweeps = simulate_delta_sweeps(&delta_grid(), &sweep_inputs()).unwrap();
        let mut s = sweeps[19].samples.clone();
        let n = s.len();
        s[n - 100].1 = 0.5;
        sweeps[19] = DeltaSweep::new(20, s).unwrap();
        let est = estimate_knots_delta(&sweeps, 32).unwrap();
        assert!(est.anomalies.iter().any(|a| a.m == 20));
    }

    #[test]
    fn sweep_csv_round_trip() {
        let knots = KnotGrid::new(6, vec![0.01, 0.1, 1.0, 10.0]).unwrap();
        let sweeps = simulate_delta_sweeps(&knots, &log_sweep(1e-3, 20.0, 50)).unwrap();
        assert_eq!(sweeps_from_csv(&sweeps_to_csv(&sweeps)).unwrap(), sweeps);
        assert!(sweeps_from_csv("m,x\n").is_err());
    }

    fn training_sets(knots: &KnotGrid, n: usize, quantize: bool) -> Vec<KnotTrainingSet> {
        let top = knots.range().1;
        let fns: [fn(f64) -> f64; 3] = [|x| x, f64::sqrt, |x| x * x];
        fns.iter()
            .enumerate()
            .map(|(i, g)| {
                let lut = separable_cube(knots, |_, u| g(u / top)).unwrap();
                let mut cfg = GenerationConfig::new(n, 100 + i as u64, MaterialKind::Lambertian);
                cfg.quantize = quantize;
                cfg.ranges.exposures = (-6..=4).map(f64::from).collect();
                let tm = Tonemap::external(knots.clone(), lut.clone()).unwrap();
                KnotTrainingSet {
                    lut,
                    samples: generate_samples(&cfg, &tm).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn optimize_keeps_optimal_start() {
        let knots = delta_grid();
        let sets = training_sets(&knots, 300, false);
        let (got, report) =
            estimate_knots_optimize(&sets, &knots, &OptimizeOptions::default()).unwrap();
        assert_eq!(report.initial_objective, 0.0);
        for (a, b) in got.active().iter().zip(knots.active()) {
            assert!((a - b).abs() <= 1e-9 * b);
        }
        assert!(report.excluded > 0);
        assert_eq!(
            report.holdout_count + report.train_count + report.excluded,
            900
        );
    }

    #[test]
    fn optimize_needs_two_cubes() {
        let knots = delta_grid();
        let mut sets = training_sets(&knots, 20, false);
        sets.truncate(1);
        assert!(matches!(
            estimate_knots_optimize(&sets, &knots, &OptimizeOptions::default()),
            Err(CalibrationError::InsufficientData(_))
        ));
    }

    #[test]
    fn optimize_report_csv() {
        let knots = delta_grid();
        let sets = training_sets(&knots, 50, false);
        let mut opts = OptimizeOptions::default();
        opts.nelder_mead.max_evaluations = 200;
        let (_, report) = estimate_knots_optimize(&sets, &knots, &opts).unwrap();
        let csv = report.holdout_csv();
        assert!(csv.lines().last().unwrap().starts_with("# excluded,"));
        assert_eq!(
            csv.lines().filter(|l| !l.starts_with('#')).count(),
            report.holdout_count + 1
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn achromatic_correction_is_exact(
            l0 in 0.0f64..5.0, l1 in 20.0f64..300.0, gamma in 1.5f64..3.0, r in 0.5f64..4.0, x in 0.0f64..1.0,
        ) {
            let spec = achromatic(l0, l1, gamma, r);
            let w = l0 / l1;
            prop_assume!(w <= 0.1);
            let u = x * r;
            let t = gamma_tonemap_achromatic(&spec, u).unwrap();
            let l = l1 * srgb_encode_unchecked(t).powf(gamma) + l0;
            let u0 = spec.u0()[0];
            if u >= u0 {
                let want = (l0 + l1) * u / r;
                prop_assert!((l - want).abs() <= 1e-9 * want.max(1e-300), "{} vs {}", l, want);
            } else {
                prop_assert_eq!(l, l0);
            }
        }

        #[test]
        fn tonemap_is_monotone(a in 0.0f64..2.0, b in 0.0f64..2.0) {
            prop_assume!(a < b);
            let spec = achromatic(2.0, 98.0, 2.2, 1.0);
            prop_assert!(gamma_tonemap_achromatic(&spec, a).unwrap() <= gamma_tonemap_achromatic(&spec, b).unwrap());
        }

        #[test]
        fn delta_estimates_strictly_increase(scale in 0.5f64..2.0) {
            let knots = KnotGrid::new(8, DELTA_KNOTS[10..16].iter().map(|k| k * scale).collect()).unwrap();
            let sweeps = simulate_delta_sweeps(&knots, &log_sweep(0.05, 20.0, 3000)).unwrap();
            let est = estimate_knots_delta(&sweeps, 8).unwrap();
            prop_assert!(est.knots.active().windows(2).all(|w| w[1] > w[0]));
        }
    }
}
