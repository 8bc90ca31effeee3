use std::path::Path;

use hdrp_core::calibration::{
    build_correction_cube, estimate_knots_delta, estimate_knots_optimize, estimate_scale_constant,
    log_sweep, simulate_delta_sweeps, sweeps_from_csv, sweeps_to_csv, DeltaEstimate,
    GammaCorrectionSpec, KnotStatus, KnotTrainingSet, OptimizeOptions,
};
use hdrp_core::cube::{
    delta_cube_file_name, make_delta_cube, parse_cube_with_warnings, serialize_cube, CubeLut,
    KnotGrid, KnotSource, Tonemap,
};
use hdrp_core::display::{
    fit_achromatic, fit_chromatic, read_achromatic_csv, read_chromatic_csv, write_measurements_csv,
    DisplayDocument, DisplayModel, FitMetadata, Reading,
};
use hdrp_core::harness::{
    generate_samples, linearity, load_samples, save_samples, simulate_characterization,
    validate_model, GenerationConfig, Linearity, ModelConfig,
};
use hdrp_core::scene::MaterialKind;
use serde_json::json;

use crate::args::*;
use crate::output::*;

pub fn run(cli: &Cli) -> CliResult<()> {
    let g = &cli.global;
    let out = g.out.as_deref();
    let summary = match &cli.command {
        Command::Simulate(a) => simulate(a, g.seed, out)?,
        Command::FitC(a) => fit_c(a, out)?,
        Command::GenDeltaCubes(a) => {
            let dir =
                out.ok_or_else(|| CliError::Usage("gen-delta-cubes needs --out <dir>".into()))?;
            gen_delta_cubes(a, dir)?
        }
        Command::SimulateSweeps(a) => simulate_sweeps(a, out)?,
        Command::EstimateKnots(a) => return estimate_knots(a, cli, out),
        Command::FitDisplay(a) => fit_display(a, out)?,
        Command::MakeCube(a) => make_cube(a, out)?,
        Command::Validate(a) => validate(a, out)?,
        Command::Characterize(a) => characterize(a, out)?,
    };
    if let Some(path) = out {
        write_sidecar(path, cli, &summary)?;
    }
    Ok(())
}

fn load_knots(path: Option<&Path>) -> CliResult<KnotGrid> {
    match path {
        Some(p) => parse_file(p, KnotGrid::from_csv),
        None => Ok(KnotGrid::default_grid(KnotSource::Delta)),
    }
}

fn load_cube(path: &Path) -> CliResult<CubeLut> {
    let (lut, warnings) = parse_file(path, parse_cube_with_warnings)?;
    for w in warnings {
        log::warn!("{}: {w:?}", path.display());
    }
    Ok(lut)
}

fn load_tonemap(spec: &str, knots: Option<&Path>) -> CliResult<Tonemap> {
    if spec == "none" {
        return Ok(Tonemap::Identity);
    }
    let lut = load_cube(Path::new(spec))?;
    Ok(Tonemap::external(load_knots(knots)?, lut)?)
}

fn simulate(a: &SimulateArgs, seed: u64, out: Option<&Path>) -> CliResult<serde_json::Value> {
    let kind = match a.material {
        Material::Lambert => MaterialKind::Lambertian,
        Material::Unlit => MaterialKind::Unlit,
    };
    let tonemap = load_tonemap(&a.tonemap, a.knots.as_deref())?;
    let mut cfg = GenerationConfig::new(a.samples, seed, kind);
    cfg.quantize = a.quantize;
    cfg.scale_constant = a.c;
    cfg.ranges.exposures = a.exposures.clone();
    let samples = generate_samples(&cfg, &tonemap)?;
    emit(out, &save_samples(&samples))?;
    log::info!("wrote {} {} samples", samples.len(), kind);
    Ok(json!({ "samples": samples.len() }))
}

fn fit_c(a: &FitCArgs, out: Option<&Path>) -> CliResult<serde_json::Value> {
    let samples = parse_file(&a.input, load_samples)?;
    let est = estimate_scale_constant(&samples)?;
    let body = serde_json::to_string_pretty(&est).expect("estimate serializes") + "\n";
    emit(out, &body)?;
    log::info!("c = {} from {} channel values", est.c, est.points);
    Ok(serde_json::to_value(&est).expect("estimate serializes"))
}

fn gen_delta_cubes(a: &GenDeltaCubesArgs, dir: &Path) -> CliResult<serde_json::Value> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_owned(),
        source,
    })?;
    for m in 1..=a.size {
        let lut = make_delta_cube(m, a.size)?;
        write_file(&dir.join(delta_cube_file_name(m)), &serialize_cube(&lut))?;
    }
    log::info!("wrote {} cubes to {}", a.size, dir.display());
    Ok(json!({ "cubes": a.size }))
}

fn simulate_sweeps(a: &SimulateSweepsArgs, out: Option<&Path>) -> CliResult<serde_json::Value> {
    if !(a.lo > 0.0 && a.hi > a.lo && a.hi.is_finite()) || a.points < 2 {
        return Err(CliError::Usage(
            "sweep needs 0 < --lo < --hi and at least 2 --points".into(),
        ));
    }
    let knots = load_knots(a.knots.as_deref())?;
    let sweeps = simulate_delta_sweeps(&knots, &log_sweep(a.lo, a.hi, a.points))?;
    emit(out, &sweeps_to_csv(&sweeps))?;
    Ok(json!({ "sweeps": sweeps.len(), "points": a.points }))
}

fn delta_report_csv(est: &DeltaEstimate) -> String {
    let opt = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
    let mut out = String::from("m,peak_input,peak_output,status,u,zero_rising,zero_falling\n");
    for r in &est.reports {
        let (status, u) = match &r.status {
            KnotStatus::Estimated { u, .. } => ("estimated", u.to_string()),
            KnotStatus::NoResponse => ("no_response", String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.m,
            r.peak_input,
            r.peak_output,
            status,
            u,
            opt(r.flank_zeros.0),
            opt(r.flank_zeros.1)
        ));
    }
    for an in &est.anomalies {
        out.push_str(&format!(
            "# anomaly,{},{}\n",
            an.m,
            an.message.replace(',', ";")
        ));
    }
    out
}

fn estimate_knots(a: &EstimateKnotsArgs, cli: &Cli, out: Option<&Path>) -> CliResult<()> {
    let summary = match a.mode {
        KnotMode::Delta => {
            let [input] = a.inputs.as_slice() else {
                return Err(CliError::Usage(
                    "delta mode takes exactly one --in sweep CSV".into(),
                ));
            };
            if !a.tonemap.is_empty() {
                return Err(CliError::Usage(
                    "--tonemap is only used in optimize mode".into(),
                ));
            }
            let sweeps = parse_file(input, sweeps_from_csv)?;
            let est = estimate_knots_delta(&sweeps, a.size)?;
            for an in &est.anomalies {
                log::warn!("delta m = {}: {}", an.m, an.message);
            }
            emit(out, &est.knots.to_csv())?;
            if let Some(path) = &a.report {
                write_file(path, &delta_report_csv(&est))?;
            }
            json!({ "knots": est.knots.active(), "anomalies": est.anomalies.len() })
        }
        KnotMode::Optimize => {
            if a.inputs.len() != a.tonemap.len() {
                return Err(CliError::Usage(format!(
                    "optimize mode pairs each --in with a --tonemap ({} vs {})",
                    a.inputs.len(),
                    a.tonemap.len()
                )));
            }
            let sets = a
                .inputs
                .iter()
                .zip(&a.tonemap)
                .map(|(samples, cube)| {
                    Ok(KnotTrainingSet {
                        lut: load_cube(cube)?,
                        samples: parse_file(samples, load_samples)?,
                    })
                })
                .collect::<CliResult<Vec<_>>>()?;
            let init = load_knots(a.init.as_deref())?;
            let opts = OptimizeOptions {
                scale_constant: a.c,
                m_threshold: a.filter_m,
                holdout_fraction: a.holdout,
                seed: cli.global.seed,
                ..OptimizeOptions::default()
            };
            let (knots, report) = estimate_knots_optimize(&sets, &init, &opts)?;
            if let Some(w) = &report.warning {
                log::warn!("{w}");
            }
            emit(out, &knots.to_csv())?;
            if let Some(path) = &a.report {
                write_file(path, &report.holdout_csv())?;
            }
            log::info!(
                "objective {:e} -> {:e}; holdout median |error| {:?}/255",
                report.initial_objective,
                report.final_objective,
                report.holdout_median_abs_error_255
            );
            let summary = json!({
                "knots": knots.active(),
                "initial_objective": report.initial_objective,
                "final_objective": report.final_objective,
                "train_median_abs_error_x255": report.train_median_abs_error_255,
                "holdout_median_abs_error_x255": report.holdout_median_abs_error_255,
                "evaluations": report.evaluations,
                "converged": report.converged,
            });
            if !report.converged {
                if let Some(path) = out {
                    write_sidecar(path, cli, &summary)?;
                }
                return Err(CliError::NotConverged(format!(
                    "knot optimization did not converge after {} evaluations",
                    report.evaluations
                )));
            }
            summary
        }
    };
    if let Some(path) = out {
        write_sidecar(path, cli, &summary)?;
    }
    Ok(())
}

fn fit_display(a: &FitDisplayArgs, out: Option<&Path>) -> CliResult<serde_json::Value> {
    let doc = match a.mode {
        DisplayKind::Achromatic => {
            let meas = parse_file(&a.input, read_achromatic_csv)?;
            let (d, rep) = fit_achromatic(&meas)?;
            DisplayDocument {
                model: DisplayModel::Achromatic(d),
                fit: Some(FitMetadata {
                    residual_rms: rep.residual_rms,
                    point_count: rep.point_count,
                }),
            }
        }
        DisplayKind::Chromatic => {
            let meas = parse_file(&a.input, read_chromatic_csv)?;
            let (d, rep) = fit_chromatic(&meas)?;
            if rep.background_outside_span {
                log::warn!(
                    "background lies outside the span of the primaries; weights are a best fit"
                );
            }
            DisplayDocument {
                model: DisplayModel::Chromatic(d),
                fit: Some(FitMetadata {
                    residual_rms: rep.residual_rms(),
                    point_count: rep.point_count,
                }),
            }
        }
    };
    emit(out, &(doc.to_json() + "\n"))?;
    Ok(serde_json::to_value(&doc).expect("display serializes"))
}

fn make_cube(a: &MakeCubeArgs, out: Option<&Path>) -> CliResult<serde_json::Value> {
    let doc = parse_file(&a.display, DisplayDocument::from_json)?;
    let knots = load_knots(a.knots.as_deref())?;
    let spec = GammaCorrectionSpec::new(doc.model, a.r)?;
    let (mut lut, report) = build_correction_cube(&spec, &knots, a.refine)?;
    if let Some(w) = &report.warning {
        log::warn!("{w}");
    }
    lut.title = Some(format!("gamma correction r={}", a.r));
    emit(out, &serialize_cube(&lut))?;
    log::info!(
        "cube error {:e} (point construction {:e}), refined: {}",
        report.final_sse,
        report.unrefined_sse,
        report.refined
    );
    Ok(serde_json::to_value(&report).expect("report serializes"))
}

fn validate(a: &ValidateArgs, out: Option<&Path>) -> CliResult<serde_json::Value> {
    let samples = parse_file(&a.input, load_samples)?;
    let config = ModelConfig {
        scale_constant: a.c,
        tonemap: load_tonemap(&a.tonemap, a.knots.as_deref())?,
        quantize: a.quantize,
        m_threshold: a.filter_m,
    };
    let report = validate_model(&samples, &config)?;
    emit(out, &report.to_csv())?;
    if let Some(plot) = &a.plot {
        write_file(plot, &report.to_svg())?;
    }
    log::info!(
        "median |error| {}/255 over {} samples",
        report.median_abs_error_255,
        report.rows.len()
    );
    Ok(json!({
        "samples": report.rows.len(),
        "median_abs_error_x255": report.median_abs_error_255,
        "filtered_median_abs_error_x255": report.filtered_median_abs_error_255,
        "excluded": report.excluded,
    }))
}

fn characterize(a: &CharacterizeArgs, out: Option<&Path>) -> CliResult<serde_json::Value> {
    if a.levels < 2 || !(0.0 <= a.lo && a.lo < a.hi && a.hi.is_finite()) {
        return Err(CliError::Usage(
            "characterize needs 0 <= --lo < --hi and at least 2 --levels".into(),
        ));
    }
    let doc = parse_file(&a.display, DisplayDocument::from_json)?;
    let tonemap = load_tonemap(&a.tonemap, a.knots.as_deref())?;
    let levels: Vec<f64> = (0..a.levels)
        .map(|i| a.lo + (a.hi - a.lo) * i as f64 / (a.levels - 1) as f64)
        .collect();
    let meas = simulate_characterization(&doc.model, &tonemap, &levels)?;
    emit(out, &write_measurements_csv(&meas))?;

    // Straight-line fits through the origin: luminance, or each primary's
    // coefficient, against the unprocessed level.
    let mut fits: Vec<Option<Linearity>> = Vec::new();
    match &doc.model {
        DisplayModel::Achromatic(_) => {
            let pts: Vec<(f64, f64)> = meas
                .iter()
                .zip(&levels)
                .filter_map(|(m, &u)| match m.reading {
                    Reading::Luminance(l) if u > 0.0 => Some((u, l)),
                    _ => None,
                })
                .collect();
            fits.push(linearity(&pts));
        }
        DisplayModel::Chromatic(d) => {
            for (k, chunk) in meas.chunks(levels.len()).enumerate() {
                let mut pts = Vec::new();
                for (m, &u) in chunk.iter().zip(&levels) {
                    if let (Reading::Xyz(xyz), true) = (m.reading, u > 0.0) {
                        pts.push((u, d.primary_coefficients(xyz)?[k]));
                    }
                }
                fits.push(linearity(&pts));
            }
        }
    }
    let fits: Vec<serde_json::Value> = fits
        .iter()
        .map(|f| match f {
            Some(l) => {
                log::info!(
                    "slope {:.6}, max relative deviation {:.3e}",
                    l.slope,
                    l.max_relative_deviation
                );
                json!({ "slope": l.slope, "max_relative_deviation": l.max_relative_deviation })
            }
            None => serde_json::Value::Null,
        })
        .collect();
    Ok(json!({ "levels": levels.len(), "linearity": fits }))
}
