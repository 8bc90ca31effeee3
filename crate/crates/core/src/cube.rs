//! `.cube` 3D LUTs and External-mode tonemapping.
//!
//! A cube file only lists output triplets `t_ijk`. The input coordinates are
//! a fixed list of knots `u*_1 < … < u*_n` owned by the renderer, shared by all
//! three axes. Knots 1 and 2 have no observable effect, so interpolation runs
//! over the active sub-grid `3..=n` and inputs outside `[u*_3, u*_n]` clamp to
//! the nearest end.

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::colorspace::ColorTriplet;

/// Default HDRP grid size per axis.
pub const DEFAULT_SIZE: usize = 32;
/// 1-based index of the first knot that takes part in interpolation.
pub const FIRST_ACTIVE: usize = 3;

/// Knots `u*_3 ..= u*_32` estimated from delta-cube responses.
pub const DELTA_KNOTS: [f64; 30] = [
    0.0002606, 0.003104, 0.007305, 0.01288, 0.02056, 0.03061, 0.04468, 0.06393, 0.09056, 0.1245,
    0.1711, 0.2354, 0.3236, 0.4406, 0.5938, 0.8165, 1.111, 1.498, 2.039, 2.776, 3.780, 5.094,
    6.935, 9.441, 12.72, 17.32, 23.35, 31.78, 43.27, 58.90,
];

/// Knots `u*_3 ..= u*_32` estimated by optimizing model predictions.
///
/// The source list prints `u*_9` as 0.4479, which breaks monotonicity; the
/// value between 0.03086 and 0.06444 is 0.04479.
pub const OPTIMIZED_KNOTS: [f64; 30] = [
    1.657e-9, 0.002830, 0.007137, 0.01269, 0.02051, 0.03086, 0.04479, 0.06444, 0.08989, 0.1252,
    0.1726, 0.2370, 0.3253, 0.4422, 0.6039, 0.8207, 1.104, 1.495, 2.032, 2.756, 3.738, 5.083,
    6.864, 9.347, 12.62, 17.18, 23.24, 31.48, 42.75, 57.66,
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CubeError {
    #[error("missing LUT_3D_SIZE")]
    MissingSize,
    #[error("line {line}: 1D LUTs are not supported")]
    Unsupported1D { line: usize },
    #[error("line {line}: invalid LUT_3D_SIZE '{value}'")]
    InvalidSize { line: usize, value: String },
    #[error("line {line}, column {column}: cannot parse '{token}' as a number")]
    Parse {
        line: usize,
        column: usize,
        token: String,
    },
    #[error("line {line}: expected 3 values, found {found}")]
    Arity { line: usize, found: usize },
    #[error("line {line}: malformed {keyword}")]
    Keyword { line: usize, keyword: String },
    #[error("expected {expected} triplets, found {found} (last line {line})")]
    Truncated {
        expected: usize,
        found: usize,
        line: usize,
    },
    #[error("grid size {0} too small")]
    SizeTooSmall(usize),
    #[error("LUT of size {lut} does not match knot grid of size {knots}")]
    SizeMismatch { lut: usize, knots: usize },
    #[error("knots must be finite, nonnegative and strictly increasing (index {index})")]
    KnotOrder { index: usize },
    #[error("expected {expected} active knots, got {found}")]
    KnotCount { expected: usize, found: usize },
    #[error("delta index {m} outside 1..={size}")]
    DeltaIndex { m: usize, size: usize },
    #[error("{count} data triplets given for a grid of size {size}")]
    DataLength { size: usize, count: usize },
    #[error("non-finite output at triplet {index}")]
    NonFinite { index: usize },
}

/// Which reference knot estimate to start from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnotSource {
    Delta,
    Optimized,
}

/// Strictly increasing knot coordinates `u*_3 ..= u*_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotGrid {
    size: usize,
    active: Vec<f64>,
}

impl KnotGrid {
    pub fn new(size: usize, active: Vec<f64>) -> Result<Self, CubeError> {
        if size < FIRST_ACTIVE + 1 {
            return Err(CubeError::SizeTooSmall(size));
        }
        let expected = size - (FIRST_ACTIVE - 1);
        if active.len() != expected {
            return Err(CubeError::KnotCount {
                expected,
                found: active.len(),
            });
        }
        for (i, &u) in active.iter().enumerate() {
            let ordered = i == 0 || u > active[i - 1];
            if !(u.is_finite() && u >= 0.0 && ordered) {
                return Err(CubeError::KnotOrder {
                    index: i + FIRST_ACTIVE,
                });
            }
        }
        Ok(Self { size, active })
    }

    /// Reference n = 32 grid.
    pub fn default_grid(source: KnotSource) -> Self {
        let active = match source {
            KnotSource::Delta => DELTA_KNOTS,
            KnotSource::Optimized => OPTIMIZED_KNOTS,
        };
        Self {
            size: DEFAULT_SIZE,
            active: active.to_vec(),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Active knot values, starting at `u*_3`.
    pub fn active(&self) -> &[f64] {
        &self.active
    }

    /// Knot `u*_index` (1-based); `None` for the inactive knots.
    pub fn knot(&self, index: usize) -> Option<f64> {
        index
            .checked_sub(FIRST_ACTIVE)
            .and_then(|i| self.active.get(i).copied())
    }

    pub fn range(&self) -> (f64, f64) {
        (self.active[0], self.active[self.active.len() - 1])
    }

    /// CSV with header `index,u`, one row per active knot.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,u\n");
        for (i, u) in self.active.iter().enumerate() {
            writeln!(out, "{},{}", i + FIRST_ACTIVE, u).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, CubeError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, header)) if header.trim().replace(' ', "") == "index,u" => {}
            other => {
                return Err(CubeError::Keyword {
                    line: other.map_or(1, |(i, _)| i + 1),
                    keyword: "header 'index,u'".into(),
                })
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let mut fields = line.split(',');
            let mut next = |column: usize| -> Result<f64, CubeError> {
                let tok = fields.next().unwrap_or("").trim();
                tok.parse::<f64>().map_err(|_| CubeError::Parse {
                    line: lineno,
                    column,
                    token: tok.to_string(),
                })
            };
            let index = next(1)?;
            let u = next(2)?;
            rows.push((index, u, lineno));
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (expect, (index, _, line)) in (FIRST_ACTIVE..).zip(&rows) {
            if *index != expect as f64 {
                return Err(CubeError::Keyword {
                    line: *line,
                    keyword: format!("knot index (expected {expect})"),
                });
            }
        }
        let active: Vec<f64> = rows.iter().map(|r| r.1).collect();
        Self::new(active.len() + FIRST_ACTIVE - 1, active)
    }
}

/// `n × n × n` grid of output triplets, red index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeLut {
    size: usize,
    data: Vec<ColorTriplet>,
    pub title: Option<String>,
    pub domain_min: ColorTriplet,
    pub domain_max: ColorTriplet,
}

impl CubeLut {
    /// Build from raw data in file order. Components outside [0, 1] are
    /// clamped; the number clamped is returned alongside.
    pub fn from_data(size: usize, mut data: Vec<ColorTriplet>) -> Result<(Self, usize), CubeError> {
        if size < 2 {
            return Err(CubeError::SizeTooSmall(size));
        }
        if data.len() != size * size * size {
            return Err(CubeError::DataLength {
                size,
                count: data.len(),
            });
        }
        let mut clamped = 0;
        for (index, t) in data.iter_mut().enumerate() {
            if t.ensure_finite().is_err() {
                return Err(CubeError::NonFinite { index });
            }
            *t = t.map(|x| {
                if (0.0..=1.0).contains(&x) {
                    x
                } else {
                    clamped += 1;
                    x.clamp(0.0, 1.0)
                }
            });
        }
        Ok((
            Self {
                size,
                data,
                title: None,
                domain_min: ColorTriplet::ZERO,
                domain_max: ColorTriplet::ONE,
            },
            clamped,
        ))
    }

    /// Fill `t_ijk = f(i, j, k)` with 0-based indices.
    pub fn from_fn(
        size: usize,
        mut f: impl FnMut(usize, usize, usize) -> ColorTriplet,
    ) -> Result<Self, CubeError> {
        let mut data = Vec::with_capacity(size * size * size);
        for k in 0..size {
            for j in 0..size {
                for i in 0..size {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::from_data(size, data).map(|(lut, _)| lut)
    }

    /// Channel-independent cube: `t_ijk = (red[i], green[j], blue[k])`.
    pub fn separable(red: &[f64], green: &[f64], blue: &[f64]) -> Result<Self, CubeError> {
        let size = red.len();
        if green.len() != size || blue.len() != size {
            return Err(CubeError::DataLength {
                size,
                count: green.len().min(blue.len()),
            });
        }
        Self::from_fn(size, |i, j, k| ColorTriplet::new(red[i], green[j], blue[k]))
    }

    /// Identity lattice `t_ijk = (i, j, k) / (n - 1)`.
    pub fn identity(size: usize) -> Result<Self, CubeError> {
        let step = 1.0 / (size.max(2) - 1) as f64;
        Self::from_fn(size, |i, j, k| {
            ColorTriplet::new(i as f64 * step, j as f64 * step, k as f64 * step)
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Output triplets in file order.
    pub fn data(&self) -> &[ColorTriplet] {
        &self.data
    }

    /// `t_ijk` with 0-based indices.
    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> ColorTriplet {
        self.data[i + self.size * (j + self.size * k)]
    }
}

/// Cube `delta_m`: every output channel is 1 where its own index equals `m`
/// (1-based) and 0 elsewhere.
pub fn make_delta_cube(m: usize, size: usize) -> Result<CubeLut, CubeError> {
    if m == 0 || m > size {
        return Err(CubeError::DeltaIndex { m, size });
    }
    let d = |i: usize| if i + 1 == m { 1.0 } else { 0.0 };
    let mut lut = CubeLut::from_fn(size, |i, j, k| ColorTriplet::new(d(i), d(j), d(k)))?;
    lut.title = Some(format!("delta_{m:02}"));
    Ok(lut)
}

/// File name used for delta cube `m`.
pub fn delta_cube_file_name(m: usize) -> String {
    format!("delta_{m:02}.cube")
}

/// A non-fatal oddity encountered while parsing.
#[derive(Debug, Clone, PartialEq)]
pub enum CubeWarning {
    Clamped { count: usize },
    UnknownKeyword { line: usize, keyword: String },
}

pub fn parse_cube(text: &str) -> Result<CubeLut, CubeError> {
    let (lut, warnings) = parse_cube_with_warnings(text)?;
    for w in warnings {
        log::warn!("cube: {w:?}");
    }
    Ok(lut)
}

fn parse_floats<const N: usize>(
    tokens: &[(usize, &str)],
    line: usize,
) -> Result<[f64; N], CubeError> {
    if tokens.len() != N {
        return Err(CubeError::Arity {
            line,
            found: tokens.len(),
        });
    }
    let mut out = [0.0; N];
    for (slot, &(column, token)) in out.iter_mut().zip(tokens) {
        *slot = token.parse::<f64>().map_err(|_| CubeError::Parse {
            line,
            column,
            token: token.to_string(),
        })?;
    }
    Ok(out)
}

fn tokenize(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (pos, ch) in line.char_indices() {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some(pos),
            (true, Some(s)) => {
                out.push((s, &line[s..pos]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, &line[s..]));
    }
    // 1-based character columns
    out.into_iter()
        .map(|(byte, tok)| (line[..byte].chars().count() + 1, tok))
        .collect()
}

fn is_keyword(token: &str) -> bool {
    token.starts_with(|c: char| c.is_ascii_uppercase())
        && token
            .chars()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

/// Parse `.cube` text. Recognizes `TITLE`, `LUT_3D_SIZE`, `DOMAIN_MIN` and
/// `DOMAIN_MAX`; lines starting with `#` are comments.
pub fn parse_cube_with_warnings(text: &str) -> Result<(CubeLut, Vec<CubeWarning>), CubeError> {
    let mut size: Option<usize> = None;
    let mut title = None;
    let mut domain_min = ColorTriplet::ZERO;
    let mut domain_max = ColorTriplet::ONE;
    let mut data = Vec::new();
    let mut warnings = Vec::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        last_line = line;
        let tokens = tokenize(raw);
        let head = tokens[0].1;
        if is_keyword(head) {
            let rest = &tokens[1..];
            match head {
                "TITLE" => {
                    let body = raw.trim_start()["TITLE".len()..].trim();
                    title = Some(body.trim_matches('"').to_string());
                }
                "LUT_3D_SIZE" => {
                    let value = rest.first().map(|t| t.1).unwrap_or("");
                    let n = value
                        .parse::<usize>()
                        .ok()
                        .filter(|&n| n >= 2 && rest.len() == 1)
                        .ok_or_else(|| CubeError::InvalidSize {
                            line,
                            value: value.to_string(),
                        })?;
                    size = Some(n);
                }
                "LUT_1D_SIZE" => return Err(CubeError::Unsupported1D { line }),
                "DOMAIN_MIN" => {
                    domain_min = ColorTriplet::from_array(parse_floats::<3>(rest, line)?)
                }
                "DOMAIN_MAX" => {
                    domain_max = ColorTriplet::from_array(parse_floats::<3>(rest, line)?)
                }
                other => warnings.push(CubeWarning::UnknownKeyword {
                    line,
                    keyword: other.to_string(),
                }),
            }
            continue;
        }
        data.push(ColorTriplet::from_array(parse_floats::<3>(&tokens, line)?));
    }

    let size = size.ok_or(CubeError::MissingSize)?;
    let expected = size * size * size;
    if data.len() != expected {
        return Err(CubeError::Truncated {
            expected,
            found: data.len(),
            line: last_line,
        });
    }
    let (mut lut, clamped) = CubeLut::from_data(size, data)?;
    if clamped > 0 {
        warnings.push(CubeWarning::Clamped { count: clamped });
    }
    lut.title = title;
    lut.domain_min = domain_min;
    lut.domain_max = domain_max;
    Ok((lut, warnings))
}

fn fmt_value(x: f64) -> String {
    format!("{x:.10}")
}

pub fn serialize_cube(lut: &CubeLut) -> String {
    let mut out = String::with_capacity(lut.data.len() * 40 + 128);
    if let Some(title) = &lut.title {
        writeln!(out, "TITLE \"{title}\"").unwrap();
    }
    writeln!(out, "LUT_3D_SIZE {}", lut.size).unwrap();
    let d = |t: ColorTriplet| format!("{} {} {}", fmt_value(t.r), fmt_value(t.g), fmt_value(t.b));
    writeln!(out, "DOMAIN_MIN {}", d(lut.domain_min)).unwrap();
    writeln!(out, "DOMAIN_MAX {}", d(lut.domain_max)).unwrap();
    for t in &lut.data {
        out.push_str(&d(*t));
        out.push('\n');
    }
    out
}

/// Tonemapping function `f`.
#[derive(Debug, Clone, PartialEq)]
pub enum Tonemap {
    /// "None" mode: `f(u) = u`, clamped to the displayable range.
    Identity,
    /// "External" mode: interpolate a cube over the renderer's knots.
    External {
        knots: Arc<KnotGrid>,
        lut: Arc<CubeLut>,
    },
}

impl Tonemap {
    pub fn external(knots: KnotGrid, lut: CubeLut) -> Result<Self, CubeError> {
        Self::external_shared(Arc::new(knots), Arc::new(lut))
    }

    pub fn external_shared(knots: Arc<KnotGrid>, lut: Arc<CubeLut>) -> Result<Self, CubeError> {
        if knots.size() != lut.size() {
            return Err(CubeError::SizeMismatch {
                lut: lut.size(),
                knots: knots.size(),
            });
        }
        Ok(Tonemap::External { knots, lut })
    }

    /// Evaluate `f(u)`; callers guarantee `u ≥ 0`.
    pub fn apply(&self, u: ColorTriplet) -> ColorTriplet {
        match self {
            Tonemap::Identity => u.map(|x| x.clamp(0.0, 1.0)),
            Tonemap::External { knots, lut } => interpolate(knots.active(), lut, u),
        }
    }
}

pub fn apply_tonemap(f: &Tonemap, u: ColorTriplet) -> ColorTriplet {
    f.apply(u)
}

/// Cell index (into `active`) and fractional position of `x` after clamping
/// to the knot range.
#[inline]
pub(crate) fn locate(active: &[f64], x: f64) -> (usize, f64) {
    let last = active.len() - 1;
    let lo = active[0];
    let hi = active[last];
    if !(x > lo) {
        return (0, 0.0);
    }
    if x >= hi {
        return (last - 1, 1.0);
    }
    // first knot strictly greater than x, minus one
    let cell = active.partition_point(|&k| k <= x) - 1;
    let frac = (x - active[cell]) / (active[cell + 1] - active[cell]);
    (cell, frac)
}

/// Trilinear interpolation of `lut` over the active knots `active`
/// (`active[0]` is `u*_3`). `active.len()` must equal `lut.size() - 2`.
pub fn interpolate(active: &[f64], lut: &CubeLut, u: ColorTriplet) -> ColorTriplet {
    debug_assert_eq!(active.len() + FIRST_ACTIVE - 1, lut.size());
    let off = FIRST_ACTIVE - 1;
    let (i, fr) = locate(active, u.r);
    let (j, fg) = locate(active, u.g);
    let (k, fb) = locate(active, u.b);
    let (i, j, k) = (i + off, j + off, k + off);
    let lerp = |a: ColorTriplet, b: ColorTriplet, t: f64| a.zip_map(b, |x, y| x + (y - x) * t);
    let c00 = lerp(lut.get(i, j, k), lut.get(i + 1, j, k), fr);
    let c10 = lerp(lut.get(i, j + 1, k), lut.get(i + 1, j + 1, k), fr);
    let c01 = lerp(lut.get(i, j, k + 1), lut.get(i + 1, j, k + 1), fr);
    let c11 = lerp(lut.get(i, j + 1, k + 1), lut.get(i + 1, j + 1, k + 1), fr);
    let c0 = lerp(c00, c10, fg);
    let c1 = lerp(c01, c11, fg);
    lerp(c0, c1, fb)
}
