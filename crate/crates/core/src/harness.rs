//! Synthetic render experiments, sample CSV I/O and model validation.
//!
//! A [`SceneSample`] is one observation: the material and lighting
//! parameters of a flat patch and the post-processed value `v` it rendered
//! to. [`generate_samples`] produces them from the forward model with a
//! counter-based random stream, so the output does not depend on how the
//! work is split across threads.

use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colorspace::{Channel, ColorTriplet};
use crate::cube::Tonemap;
use crate::display::{DisplayError, DisplayModel, Measurement};
use crate::scene::{
    post_process, render, AmbientLight, DirectionalLight, LambertianMaterial, MaterialKind,
    RenderContext, Scene, SceneError, SurfaceNormal, DEFAULT_SCALE_CONSTANT,
};
use crate::{median, par, ErrorClass};

/// Tolerance on ‖n‖ and ‖l‖ for ingested samples.
pub const INGEST_UNIT_TOLERANCE: f64 = 1e-6;

/// Samples with any `m_k` below this are excluded from the filtered metrics.
pub const DEFAULT_M_THRESHOLD: f64 = 0.2;

/// Column order of the sample CSV.
pub const SAMPLE_HEADER: [&str; 22] = [
    "kind", "m_r", "m_g", "m_b", "n_x", "n_y", "n_z", "d_r", "d_g", "d_b", "i_d", "l_x", "l_y",
    "l_z", "a_r", "a_g", "a_b", "i_a", "e", "v_r", "v_g", "v_b",
];

/// The patch faces a camera looking along +z.
const CAMERA_FACING: [f64; 3] = [0.0, 0.0, -1.0];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("invalid parameter range: {0}")]
    InvalidRange(String),
    #[error("no samples")]
    Empty,
    #[error("sample csv: {0}")]
    Csv(String),
    #[error("sample csv header mismatch: expected '{expected}', found '{found}'")]
    Schema { expected: String, found: String },
    #[error("{} invalid row(s): {}", .0.len(), summarize_rows(.0))]
    Rows(Vec<RowError>),
    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: SceneError,
    },
    #[error(transparent)]
    Display(#[from] DisplayError),
}

impl HarnessError {
    pub fn class(&self) -> ErrorClass {
        match self {
            HarnessError::InvalidRange(_) | HarnessError::Empty => ErrorClass::Usage,
            HarnessError::Csv(_) | HarnessError::Schema { .. } | HarnessError::Rows(_) => {
                ErrorClass::Format
            }
            HarnessError::Sample { .. } => ErrorClass::Computation,
            HarnessError::Display(e) => e.class(),
        }
    }
}

/// A rejected CSV row; `row` counts data rows from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub row: usize,
    pub message: String,
}

fn summarize_rows(rows: &[RowError]) -> String {
    let mut s = String::new();
    for (i, r) in rows.iter().take(5).enumerate() {
        if i > 0 {
            s.push_str("; ");
        }
        let _ = write!(s, "row {}: {}", r.row, r.message);
    }
    if rows.len() > 5 {
        let _ = write!(s, "; and {} more", rows.len() - 5);
    }
    s
}

/// One observation of the random-scene experiment.
///
/// Unlit samples carry zeros in `d`, `i_d`, `l`, `a`, `i_a` and `e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSample {
    pub kind: MaterialKind,
    pub m: ColorTriplet,
    pub n: [f64; 3],
    pub d: ColorTriplet,
    pub i_d: f64,
    pub l: [f64; 3],
    pub a: ColorTriplet,
    pub i_a: f64,
    pub e: f64,
    pub v: ColorTriplet,
}

impl SceneSample {
    /// Rebuild the scene with scale constant `c`, checking unit vectors to
    /// `unit_tol`.
    pub fn scene_with_tolerance(&self, c: f64, unit_tol: f64) -> Result<Scene, SceneError> {
        Ok(match self.kind {
            MaterialKind::Unlit => {
                self.m
                    .ensure_unit("unlit color")
                    .map_err(|source| SceneError::Color {
                        what: "unlit material",
                        source,
                    })?;
                Scene::Unlit { color: self.m }
            }
            MaterialKind::Lambertian => Scene::Lambertian {
                material: LambertianMaterial::new(self.m)?,
                normal: SurfaceNormal::with_tolerance(Vector3::from(self.n), unit_tol)?,
                directional: DirectionalLight::with_tolerance(
                    self.d,
                    self.i_d,
                    Vector3::from(self.l),
                    unit_tol,
                )?,
                ambient: AmbientLight::new(self.a, self.i_a)?,
                context: RenderContext::new(self.e, c)?,
            },
        })
    }

    pub fn scene(&self, c: f64) -> Result<Scene, SceneError> {
        self.scene_with_tolerance(c, INGEST_UNIT_TOLERANCE)
    }

    /// Unprocessed value predicted with scale constant `c`.
    pub fn unprocessed(&self, c: f64) -> Result<ColorTriplet, SceneError> {
        self.scene(c)?.unprocessed()
    }
}

/// Sampling ranges for the parameters the experiment leaves open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRanges {
    /// Each ambient channel is drawn uniformly from this interval.
    pub ambient: (f64, f64),
    pub directional_intensity: (f64, f64),
    pub ambient_intensity: (f64, f64),
    /// Exposures are drawn uniformly from this set.
    pub exposures: Vec<f64>,
}

impl Default for ParameterRanges {
    fn default() -> Self {
        Self {
            ambient: (0.0, 1.0),
            directional_intensity: (0.0, 2.0),
            ambient_intensity: (0.0, 2.0),
            exposures: vec![0.0],
        }
    }
}

impl ParameterRanges {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let check = |what: &str, (lo, hi): (f64, f64)| {
            if lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi {
                Ok(())
            } else {
                Err(HarnessError::InvalidRange(format!(
                    "{what} must satisfy 0 <= lo <= hi, got [{lo}, {hi}]"
                )))
            }
        };
        check("ambient color", self.ambient)?;
        check("directional intensity", self.directional_intensity)?;
        check("ambient intensity", self.ambient_intensity)?;
        if self.exposures.is_empty() || self.exposures.iter().any(|e| !e.is_finite()) {
            return Err(HarnessError::InvalidRange(
                "exposure set must be nonempty and finite".into(),
            ));
        }
        Ok(())
    }
}

/// Settings for [`generate_samples`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub count: usize,
    pub seed: u64,
    pub kind: MaterialKind,
    pub quantize: bool,
    pub scale_constant: f64,
    pub ranges: ParameterRanges,
}

impl GenerationConfig {
    pub fn new(count: usize, seed: u64, kind: MaterialKind) -> Self {
        Self {
            count,
            seed,
            kind,
            quantize: false,
            scale_constant: DEFAULT_SCALE_CONSTANT,
            ranges: ParameterRanges::default(),
        }
    }
}

fn uniform_in(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn uniform_triplet(rng: &mut ChaCha8Rng, range: (f64, f64)) -> ColorTriplet {
    let r = uniform_in(rng, range);
    let g = uniform_in(rng, range);
    let b = uniform_in(rng, range);
    ColorTriplet::new(r, g, b)
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let v: [f64; 3] = UnitSphere.sample(rng);
    // renormalize so the 1e-9 construction check always holds
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Random stream for sample `index`: one ChaCha stream per sample.
fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn draw_sample(
    config: &GenerationConfig,
    tonemap: &Tonemap,
    index: usize,
) -> Result<SceneSample, HarnessError> {
    let mut rng = sample_rng(config.seed, index);
    let ranges = &config.ranges;
    // draws happen in a fixed order for both kinds so the streams line up
    let m = uniform_triplet(&mut rng, (0.0, 1.0));
    let mut n = unit_vector(&mut rng);
    let facing: f64 = n.iter().zip(CAMERA_FACING).map(|(a, b)| a * b).sum();
    if facing < 0.0 {
        n = n.map(|x| -x);
    }
    let d = uniform_triplet(&mut rng, (0.0, 1.0));
    let i_d = uniform_in(&mut rng, ranges.directional_intensity);
    let l = unit_vector(&mut rng);
    let a = uniform_triplet(&mut rng, ranges.ambient);
    let i_a = uniform_in(&mut rng, ranges.ambient_intensity);
    let e = ranges.exposures[rng.random_range(0..ranges.exposures.len())];

    let mut sample = match config.kind {
        MaterialKind::Lambertian => SceneSample {
            kind: MaterialKind::Lambertian,
            m,
            n,
            d,
            i_d,
            l,
            a,
            i_a,
            e,
            v: ColorTriplet::ZERO,
        },
        MaterialKind::Unlit => SceneSample {
            kind: MaterialKind::Unlit,
            m,
            n,
            d: ColorTriplet::ZERO,
            i_d: 0.0,
            l: [0.0; 3],
            a: ColorTriplet::ZERO,
            i_a: 0.0,
            e: 0.0,
            v: ColorTriplet::ZERO,
        },
    };
    let scene = sample
        .scene_with_tolerance(config.scale_constant, crate::scene::UNIT_TOLERANCE)
        .and_then(|s| render(&s, tonemap, config.quantize))
        .map_err(|source| HarnessError::Sample { index, source })?;
    sample.v = scene;
    Ok(sample)
}

/// Draw `config.count` samples and render them through `tonemap`.
///
/// Sample `i` depends only on `(config, i)`, so the result is the same for
/// any thread count.
pub fn generate_samples(
    config: &GenerationConfig,
    tonemap: &Tonemap,
) -> Result<Vec<SceneSample>, HarnessError> {
    if config.count == 0 {
        return Err(HarnessError::InvalidRange(
            "count must be at least 1".into(),
        ));
    }
    if !(config.scale_constant.is_finite() && config.scale_constant > 0.0) {
        return Err(HarnessError::InvalidRange(format!(
            "scale constant must be positive, got {}",
            config.scale_constant
        )));
    }
    config.ranges.validate()?;
    par::map_range(config.count, |i| draw_sample(config, tonemap, i))
        .into_iter()
        .collect()
}

fn push_fields(out: &mut String, values: &[f64]) {
    for v in values {
        let _ = write!(out, ",{v}");
    }
}

/// Sample CSV text. Floats use the shortest representation that parses
/// back to the same value.
pub fn save_samples(samples: &[SceneSample]) -> String {
    let mut out = SAMPLE_HEADER.join(",");
    out.push('\n');
    for s in samples {
        out.push_str(&s.kind.to_string());
        push_fields(&mut out, &s.m.to_array());
        push_fields(&mut out, &s.n);
        push_fields(&mut out, &s.d.to_array());
        push_fields(&mut out, &[s.i_d]);
        push_fields(&mut out, &s.l);
        push_fields(&mut out, &s.a.to_array());
        push_fields(&mut out, &[s.i_a, s.e]);
        push_fields(&mut out, &s.v.to_array());
        out.push('\n');
    }
    out
}

fn check_row(s: &SceneSample) -> Result<(), String> {
    s.v.ensure_unit("v").map_err(|e| e.to_string())?;
    s.scene(1.0).map_err(|e| e.to_string())?;
    if s.kind == MaterialKind::Unlit {
        // n is not used by the unlit model but must still be a direction
        SurfaceNormal::with_tolerance(Vector3::from(s.n), INGEST_UNIT_TOLERANCE)
            .map_err(|e| e.to_string())?;
    }
    if !s.e.is_finite() {
        return Err(format!("exposure {} is not finite", s.e));
    }
    Ok(())
}

fn parse_row(record: &csv::StringRecord) -> Result<SceneSample, String> {
    if record.len() != SAMPLE_HEADER.len() {
        return Err(format!(
            "expected {} fields, found {}",
            SAMPLE_HEADER.len(),
            record.len()
        ));
    }
    let kind: MaterialKind = record[0].parse()?;
    let mut x = [0.0; 21];
    for (i, slot) in x.iter_mut().enumerate() {
        let field = &record[i + 1];
        *slot = field.parse().map_err(|_| {
            format!(
                "column '{}': '{field}' is not a number",
                SAMPLE_HEADER[i + 1]
            )
        })?;
    }
    let t = |i: usize| ColorTriplet::new(x[i], x[i + 1], x[i + 2]);
    Ok(SceneSample {
        kind,
        m: t(0),
        n: [x[3], x[4], x[5]],
        d: t(6),
        i_d: x[9],
        l: [x[10], x[11], x[12]],
        a: t(13),
        i_a: x[16],
        e: x[17],
        v: t(18),
    })
}

/// Parse and validate sample CSV text.
///
/// The header must match [`SAMPLE_HEADER`]. Every bad row is reported, not
/// just the first one.
pub fn load_samples(text: &str) -> Result<Vec<SceneSample>, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| HarnessError::Csv(e.to_string()))?;
    let found: Vec<&str> = header.iter().collect();
    if found != SAMPLE_HEADER {
        return Err(HarnessError::Schema {
            expected: SAMPLE_HEADER.join(","),
            found: found.join(","),
        });
    }
    let mut samples = Vec::new();
    let mut bad = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| HarnessError::Csv(e.to_string()))?;
        match parse_row(&record).and_then(|s| check_row(&s).map(|_| s)) {
            Ok(s) => samples.push(s),
            Err(message) => bad.push(RowError { row, message }),
        }
    }
    if bad.is_empty() {
        Ok(samples)
    } else {
        Err(HarnessError::Rows(bad))
    }
}

/// Predicted versus recorded value for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub index: usize,
    pub kind: MaterialKind,
    pub m: ColorTriplet,
    pub predicted: ColorTriplet,
    pub actual: ColorTriplet,
}

impl PredictionRow {
    /// Predicted minus actual.
    pub fn error(&self) -> ColorTriplet {
        self.predicted - self.actual
    }
}

/// Median of |error| over all channels of `rows`, in units of 1/255.
pub fn median_abs_error_255<'a>(rows: impl IntoIterator<Item = &'a PredictionRow>) -> Option<f64> {
    let errs: Vec<f64> = rows
        .into_iter()
        .flat_map(|r| r.error().to_array())
        .map(f64::abs)
        .collect();
    median(&errs).map(|m| m * 255.0)
}

/// Per-sample prediction rows as CSV, followed by `#`-prefixed summary lines.
pub fn prediction_csv(rows: &[PredictionRow], summary: &[(&str, String)]) -> String {
    let mut out = String::from(
        "index,kind,m_r,m_g,m_b,pred_r,pred_g,pred_b,actual_r,actual_g,actual_b,err_r,err_g,err_b\n",
    );
    for r in rows {
        let _ = write!(out, "{},{}", r.index, r.kind);
        push_fields(&mut out, &r.m.to_array());
        push_fields(&mut out, &r.predicted.to_array());
        push_fields(&mut out, &r.actual.to_array());
        push_fields(&mut out, &r.error().to_array());
        out.push('\n');
    }
    for (key, value) in summary {
        let _ = writeln!(out, "# {key},{value}");
    }
    out
}

/// Settings for [`validate_model`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub scale_constant: f64,
    pub tonemap: Tonemap,
    /// Quantize predictions to 8 bits, as the renderer would.
    pub quantize: bool,
    pub m_threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            scale_constant: DEFAULT_SCALE_CONSTANT,
            tonemap: Tonemap::Identity,
            quantize: false,
            m_threshold: DEFAULT_M_THRESHOLD,
        }
    }
}

/// Error statistics for channel values `m_k` in `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub median_abs_error_255: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub rows: Vec<PredictionRow>,
    /// Median |predicted − actual| over all channels, in units of 1/255.
    pub median_abs_error_255: f64,
    /// Same, without samples that have any `m_k` below the threshold.
    pub filtered_median_abs_error_255: Option<f64>,
    pub m_threshold: f64,
    pub excluded: usize,
    /// Channel errors grouped by that channel's `m_k`, in tenths.
    pub bins: Vec<MaterialBin>,
}

impl ValidationReport {
    pub fn to_csv(&self) -> String {
        let fmt_opt = |x: Option<f64>| x.map_or_else(|| "nan".to_string(), |v| v.to_string());
        let mut summary = vec![
            (
                "median_abs_error_x255",
                self.median_abs_error_255.to_string(),
            ),
            (
                "filtered_median_abs_error_x255",
                fmt_opt(self.filtered_median_abs_error_255),
            ),
            ("m_threshold", self.m_threshold.to_string()),
            ("excluded", self.excluded.to_string()),
        ];
        for b in &self.bins {
            summary.push((
                "m_bin",
                format!(
                    "{},{},{},{}",
                    b.lo,
                    b.hi,
                    b.count,
                    fmt_opt(b.median_abs_error_255)
                ),
            ));
        }
        prediction_csv(&self.rows, &summary)
    }

    /// Two-panel SVG: predicted against actual, and error against actual
    /// with ±1/255 guides.
    pub fn to_svg(&self) -> String {
        scatter_svg(&self.rows)
    }
}

/// Predict `v` for every sample and summarize the errors.
pub fn validate_model(
    samples: &[SceneSample],
    config: &ModelConfig,
) -> Result<ValidationReport, HarnessError> {
    if samples.is_empty() {
        return Err(HarnessError::Empty);
    }
    let indexed: Vec<(usize, &SceneSample)> = samples.iter().enumerate().collect();
    let rows: Vec<PredictionRow> = par::map_slice(&indexed, |&(index, s)| {
        let scene = s
            .scene(config.scale_constant)
            .map_err(|source| HarnessError::Sample { index, source })?;
        let predicted = render(&scene, &config.tonemap, config.quantize)
            .map_err(|source| HarnessError::Sample { index, source })?;
        Ok(PredictionRow {
            index,
            kind: s.kind,
            m: s.m,
            predicted,
            actual: s.v,
        })
    })
    .into_iter()
    .collect::<Result<_, HarnessError>>()?;

    let keep = |r: &&PredictionRow| r.m.min_component() >= config.m_threshold;
    let excluded = rows.len() - rows.iter().filter(keep).count();
    let median_all = median_abs_error_255(&rows).expect("rows are nonempty");
    let filtered = median_abs_error_255(rows.iter().filter(keep));

    let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); 10];
    for r in &rows {
        for ch in Channel::ALL {
            let bin = ((r.m.get(ch) * 10.0) as usize).min(9);
            per_bin[bin].push(r.error().get(ch).abs());
        }
    }
    let bins = per_bin
        .iter()
        .enumerate()
        .map(|(i, errs)| MaterialBin {
            lo: i as f64 / 10.0,
            hi: (i + 1) as f64 / 10.0,
            count: errs.len(),
            median_abs_error_255: median(errs).map(|m| m * 255.0),
        })
        .collect();

    Ok(ValidationReport {
        rows,
        median_abs_error_255: median_all,
        filtered_median_abs_error_255: filtered,
        m_threshold: config.m_threshold,
        excluded,
        bins,
    })
}

fn scatter_svg(rows: &[PredictionRow]) -> String {
    const W: f64 = 900.0;
    const H: f64 = 420.0;
    const PANEL: f64 = 340.0;
    const MARGIN: f64 = 50.0;
    let colors = ["#d62728", "#2ca02c", "#1f77b4"];
    let max_err = rows
        .iter()
        .flat_map(|r| r.error().to_array())
        .map(|e| (e * 255.0).abs())
        .fold(2.0_f64, f64::max)
        .ceil();

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // left panel: predicted against actual
    let (x0, y0) = (MARGIN, MARGIN);
    let px = |v: f64| x0 + v * PANEL;
    let py = |v: f64| y0 + PANEL - v * PANEL;
    let _ = writeln!(
        s,
        r#"<rect x="{x0}" y="{y0}" width="{PANEL}" height="{PANEL}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black" stroke-width="0.8"/>"#,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">actual v</text>"#,
        x0 + PANEL / 2.0,
        y0 + PANEL + 30.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" transform="rotate(-90 {} {})">predicted v</text>"#,
        x0 - 30.0,
        y0 + PANEL / 2.0,
        x0 - 30.0,
        y0 + PANEL / 2.0
    );

    // right panel: error in units of 1/255 against actual
    let x1 = 2.0 * MARGIN + PANEL + 60.0;
    let qx = |v: f64| x1 + v * PANEL;
    let qy = |e: f64| y0 + PANEL / 2.0 - e / max_err * (PANEL / 2.0);
    let _ = writeln!(
        s,
        r#"<rect x="{x1}" y="{y0}" width="{PANEL}" height="{PANEL}" fill="none" stroke="black"/>"#
    );
    for g in [-1.0, 1.0] {
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="gray" stroke-dasharray="4 3"/>"#,
            qx(0.0),
            qx(1.0),
            y = qy(g)
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="black" stroke-width="0.8"/>"#,
        qx(0.0),
        qx(1.0),
        y = qy(0.0)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">actual v</text>"#,
        x1 + PANEL / 2.0,
        y0 + PANEL + 30.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" transform="rotate(-90 {} {})">error (1/255), range ±{max_err}</text>"#,
        x1 - 30.0,
        y0 + PANEL / 2.0,
        x1 - 30.0,
        y0 + PANEL / 2.0
    );

    for r in rows {
        for (k, color) in colors.iter().enumerate() {
            let a = r.actual.to_array()[k];
            let p = r.predicted.to_array()[k];
            let e = (p - a) * 255.0;
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="1.2" fill="{color}" fill-opacity="0.5"/>"#,
                px(a),
                py(p)
            );
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="1.2" fill="{color}" fill-opacity="0.5"/>"#,
                qx(a),
                qy(e)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Photometer or colorimeter readings for a series of unprocessed levels
/// shown through `tonemap`.
///
/// Achromatic displays see gray stimuli `u = (x, x, x)`; chromatic displays
/// see one ramp per channel with the other channels at zero, in r, g, b
/// order.
pub fn simulate_characterization(
    display: &DisplayModel,
    tonemap: &Tonemap,
    levels: &[f64],
) -> Result<Vec<Measurement>, HarnessError> {
    let show = |index: usize, u: ColorTriplet| {
        post_process(u, tonemap).map_err(|source| HarnessError::Sample { index, source })
    };
    let mut out = Vec::new();
    match display {
        DisplayModel::Achromatic(d) => {
            for (i, &x) in levels.iter().enumerate() {
                let v = show(i, ColorTriplet::splat(x))?;
                out.push(Measurement::luminance(v.r, d.luminance(v.r)?));
            }
        }
        DisplayModel::Chromatic(d) => {
            for ch in Channel::ALL {
                for (i, &x) in levels.iter().enumerate() {
                    let mut u = [0.0; 3];
                    u[ch.index()] = x;
                    let v = show(i, ColorTriplet::from_array(u))?;
                    out.push(Measurement::xyz(v, d.xyz(v)?));
                }
            }
        }
    }
    Ok(out)
}

/// Straight line through the origin fitted to `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linearity {
    pub slope: f64,
    /// Largest `|y − slope·x| / (slope·x)`.
    pub max_relative_deviation: f64,
}

/// Least-squares slope through the origin and the worst relative deviation
/// from it. Points with `x = 0` only contribute to the fit.
pub fn linearity(points: &[(f64, f64)]) -> Option<Linearity> {
    let sxy = crate::pairwise_sum(&points.iter().map(|(x, y)| x * y).collect::<Vec<_>>());
    let sxx = crate::pairwise_sum(&points.iter().map(|(x, _)| x * x).collect::<Vec<_>>());
    if !(sxx > 0.0) {
        return None;
    }
    let slope = sxy / sxx;
    let max_relative_deviation = points
        .iter()
        .filter(|(x, _)| *x != 0.0)
        .map(|(x, y)| ((y - slope * x) / (slope * x)).abs())
        .fold(0.0, f64::max);
    Some(Linearity {
        slope,
        max_relative_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::display::{AchromaticDisplay, Reading};
    use proptest::prelude::*;

    fn lambert(count: usize, seed: u64) -> Vec<SceneSample> {
        generate_samples(
            &GenerationConfig::new(count, seed, MaterialKind::Lambertian),
            &Tonemap::Identity,
        )
        .unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(lambert(1, 7), lambert(1, 7));
        assert_ne!(lambert(1, 7), lambert(1, 8));
        // sample i is the same whatever the count
        assert_eq!(lambert(20, 3)[..5], lambert(5, 3)[..]);
    }

    #[test]
    fn generated_samples_respect_ranges() {
        for s in lambert(500, 1) {
            assert!(s.n[2] <= 0.0, "normal must face the camera");
            assert!((Vector3::from(s.n).norm() - 1.0).abs() < 1e-12);
            assert!((Vector3::from(s.l).norm() - 1.0).abs() < 1e-12);
            assert!((0.0..=2.0).contains(&s.i_d) && (0.0..=2.0).contains(&s.i_a));
            assert!(s.v.ensure_unit("v").is_ok());
            assert_eq!(s.e, 0.0);
        }
    }

    #[test]
    fn unlit_samples_zero_lighting_and_ignore_it() {
        let cfg = GenerationConfig::new(50, 2, MaterialKind::Unlit);
        for s in generate_samples(&cfg, &Tonemap::Identity).unwrap() {
            assert_eq!(
                (s.d, s.i_d, s.l, s.a, s.i_a, s.e),
                (
                    ColorTriplet::ZERO,
                    0.0,
                    [0.0; 3],
                    ColorTriplet::ZERO,
                    0.0,
                    0.0
                )
            );
            let mut lit = s;
            lit.d = ColorTriplet::ONE;
            lit.i_a = 5.0;
            let scene = lit.scene(0.822).unwrap();
            assert_eq!(render(&scene, &Tonemap::Identity, false).unwrap(), s.v);
        }
    }

    #[test]
    fn invalid_generation_config() {
        let mut cfg = GenerationConfig::new(0, 1, MaterialKind::Lambertian);
        assert!(matches!(
            generate_samples(&cfg, &Tonemap::Identity),
            Err(HarnessError::InvalidRange(_))
        ));
        cfg.count = 1;
        cfg.ranges.ambient_intensity = (1.0, 0.5);
        assert!(matches!(
            generate_samples(&cfg, &Tonemap::Identity),
            Err(HarnessError::InvalidRange(_))
        ));
        cfg.ranges = ParameterRanges {
            exposures: vec![],
            ..Default::default()
        };
        assert!(generate_samples(&cfg, &Tonemap::Identity).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut samples = lambert(40, 9);
        samples.extend(
            generate_samples(
                &GenerationConfig::new(10, 9, MaterialKind::Unlit),
                &Tonemap::Identity,
            )
            .unwrap(),
        );
        let text = save_samples(&samples);
        assert!(text.starts_with("kind,m_r,m_g,m_b,n_x,n_y,n_z,d_r,d_g,d_b,i_d,l_x,l_y,l_z,a_r,a_g,a_b,i_a,e,v_r,v_g,v_b\n"));
        assert_eq!(load_samples(&text).unwrap(), samples);
    }

    #[test]
    fn empty_data_section_is_empty_list() {
        assert_eq!(load_samples(&save_samples(&[])).unwrap(), vec![]);
    }

    #[test]
    fn rejects_bad_rows_with_row_numbers() {
        let mut samples = lambert(3, 4);
        samples[1].n = [0.9, 0.0, 0.0];
        let text = save_samples(&samples);
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let mut fields: Vec<&str> = lines[3].split(',').collect();
        fields[1] = "abc";
        lines[3] = fields.join(",");
        let err = load_samples(&lines.join("\n")).unwrap_err();
        let HarnessError::Rows(rows) = &err else {
            panic!("{err:?}")
        };
        assert_eq!(rows.iter().map(|r| r.row).collect::<Vec<_>>(), vec![2, 3]);
        assert!(
            rows[0].message.contains("surface normal"),
            "{}",
            rows[0].message
        );
        assert_eq!(err.class(), ErrorClass::Format);
    }

    #[test]
    fn rejects_wrong_header() {
        let err = load_samples("kind,m_r\nunlit,0.5\n").unwrap_err();
        assert!(matches!(err, HarnessError::Schema { .. }));
        assert_eq!(err.class(), ErrorClass::Format);
    }

    #[test]
    fn tolerates_text_rounding_of_unit_vectors() {
        let mut s = lambert(1, 5);
        s[0].n = [0.0, 0.0, -1.0000005];
        assert!(load_samples(&save_samples(&s)).is_ok());
        s[0].n = [0.0, 0.0, -1.00001];
        assert!(load_samples(&save_samples(&s)).is_err());
    }

    #[test]
    fn validation_self_consistent() {
        let samples = lambert(300, 11);
        let report = validate_model(&samples, &ModelConfig::default()).unwrap();
        assert!(report.median_abs_error_255 <= 1e-9 * 255.0);
        assert!(report
            .rows
            .iter()
            .all(|r| r.error().to_array().iter().all(|e| e.abs() <= 1e-9)));
        assert!(report.excluded > 0);
        assert_eq!(report.bins.iter().map(|b| b.count).sum::<usize>(), 900);
    }

    #[test]
    fn quantized_data_within_half_step() {
        let mut cfg = GenerationConfig::new(500, 12, MaterialKind::Lambertian);
        cfg.quantize = true;
        let samples = generate_samples(&cfg, &Tonemap::Identity).unwrap();
        let report = validate_model(&samples, &ModelConfig::default()).unwrap();
        assert!(report.median_abs_error_255 <= 0.5);
        for r in &report.rows {
            for e in r.error().to_array() {
                assert!(e.abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn median_of_three_errors() {
        let row = |e: f64| PredictionRow {
            index: 0,
            kind: MaterialKind::Unlit,
            m: ColorTriplet::ONE,
            predicted: ColorTriplet::splat(0.5 + e),
            actual: ColorTriplet::splat(0.5),
        };
        let rows = [row(1.0 / 255.0), row(2.0 / 255.0), row(3.0 / 255.0)];
        assert!((median_abs_error_255(&rows).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn validation_rejects_empty() {
        assert_eq!(
            validate_model(&[], &ModelConfig::default()),
            Err(HarnessError::Empty)
        );
    }

    #[test]
    fn report_outputs() {
        let report = validate_model(&lambert(20, 2), &ModelConfig::default()).unwrap();
        let csv = report.to_csv();
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 21);
        assert!(csv.contains("# median_abs_error_x255,"));
        let svg = report.to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 120);
    }

    #[test]
    fn characterization_with_identity_matches_display() {
        let d = AchromaticDisplay::new(2.0, 98.0, 2.2).unwrap();
        let levels: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let meas =
            simulate_characterization(&DisplayModel::Achromatic(d), &Tonemap::Identity, &levels)
                .unwrap();
        for (m, &u) in meas.iter().zip(&levels) {
            let v = crate::colorspace::srgb_encode(u).unwrap();
            let Reading::Luminance(l) = m.reading else {
                panic!()
            };
            assert!((l - d.luminance(v).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn linearity_of_exact_line() {
        let pts: Vec<_> = (0..10).map(|i| (i as f64, 3.0 * i as f64)).collect();
        let lin = linearity(&pts).unwrap();
        assert!((lin.slope - 3.0).abs() < 1e-12 && lin.max_relative_deviation < 1e-12);
        assert!(linearity(&[(0.0, 1.0)]).is_none());
    }

    proptest! {
        #[test]
        fn any_seed_round_trips(seed in any::<u64>()) {
            let s = lambert(3, seed);
            prop_assert_eq!(load_samples(&save_samples(&s)).unwrap(), s);
        }
    }
}
