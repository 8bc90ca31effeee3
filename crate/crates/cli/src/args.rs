use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "hdrpcal",
    version,
    about = "Simulate and calibrate the HDRP rendering and display model",
    propagate_version = true
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct GlobalArgs {
    /// Seed for sample generation and train/holdout splits.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output path; data goes to standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Only print errors.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Render random scenes with the reference model and write a sample CSV.
    Simulate(SimulateArgs),
    /// Estimate the scale constant c from Lambertian samples.
    FitC(FitCArgs),
    /// Write the delta cubes delta_01.cube ... delta_NN.cube into --out.
    GenDeltaCubes(GenDeltaCubesArgs),
    /// Sweep scalar inputs through every delta cube and write m,u,t rows.
    SimulateSweeps(SimulateSweepsArgs),
    /// Estimate the tonemapping knots from delta sweeps or tonemapped samples.
    EstimateKnots(EstimateKnotsArgs),
    /// Fit a display model to photometer or colorimeter measurements.
    FitDisplay(FitDisplayArgs),
    /// Build a gamma-correction cube for a fitted display.
    MakeCube(MakeCubeArgs),
    /// Compare model predictions against a sample CSV.
    Validate(ValidateArgs),
    /// Show test ramps through a tonemap on a display and record readings.
    Characterize(CharacterizeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Material {
    Lambert,
    Unlit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KnotMode {
    Delta,
    Optimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DisplayKind {
    Achromatic,
    Chromatic,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, value_enum, default_value_t = Material::Lambert)]
    pub material: Material,
    /// `none` or the path of a .cube file.
    #[arg(long, default_value = "none")]
    pub tonemap: String,
    /// Knot grid CSV for --tonemap [default: built-in delta-estimated knots]
    #[arg(long)]
    pub knots: Option<PathBuf>,
    /// Quantize post-processed values to 8 bits.
    #[arg(long)]
    pub quantize: bool,
    /// Scale constant of the renderer.
    #[arg(long, default_value_t = hdrp_core::scene::DEFAULT_SCALE_CONSTANT)]
    pub c: f64,
    /// Exposure values drawn uniformly per sample.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0",
        allow_hyphen_values = true
    )]
    pub exposures: Vec<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitCArgs {
    /// Sample CSV rendered without tonemapping.
    #[arg(long = "in")]
    pub input: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GenDeltaCubesArgs {
    /// Grid size n.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateSweepsArgs {
    /// Knot grid CSV [default: built-in delta-estimated knots]
    #[arg(long)]
    pub knots: Option<PathBuf>,
    /// Number of log-spaced inputs per sweep.
    #[arg(long, default_value_t = 2000)]
    pub points: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lo: f64,
    #[arg(long, default_value_t = 100.0)]
    pub hi: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimateKnotsArgs {
    #[arg(long, value_enum)]
    pub mode: KnotMode,
    /// Sweep CSV (delta), or one sample CSV per --tonemap (optimize).
    #[arg(long = "in", required = true)]
    pub inputs: Vec<PathBuf>,
    /// Cube each sample CSV was rendered with, paired with --in in order.
    #[arg(long)]
    pub tonemap: Vec<PathBuf>,
    /// Starting knot grid for optimize [default: built-in delta-estimated knots]
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Grid size n for delta mode.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = hdrp_core::scene::DEFAULT_SCALE_CONSTANT)]
    pub c: f64,
    /// Drop samples with any albedo channel below this (optimize).
    #[arg(long, default_value_t = 0.2)]
    pub filter_m: f64,
    /// Fraction of samples held out (optimize).
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    /// Per-knot report (delta) or holdout prediction CSV (optimize).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitDisplayArgs {
    /// Measurement CSV: `v,L` or `v_r,v_g,v_b,X,Y,Z`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub mode: DisplayKind,
}

#[derive(Debug, Args, Serialize)]
pub struct MakeCubeArgs {
    /// Display JSON written by fit-display.
    #[arg(long)]
    pub display: PathBuf,
    /// Unprocessed value mapped to full display output.
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    /// Refit knot outputs by least squares against the exact tonemap.
    #[arg(long)]
    pub refine: bool,
    /// Knot grid CSV [default: built-in delta-estimated knots]
    #[arg(long)]
    pub knots: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Knot grid CSV [default: built-in delta-estimated knots]
    #[arg(long)]
    pub knots: Option<PathBuf>,
    /// `none` or the path of a .cube file.
    #[arg(long, default_value = "none")]
    pub tonemap: String,
    #[arg(long, default_value_t = hdrp_core::scene::DEFAULT_SCALE_CONSTANT)]
    pub c: f64,
    /// Albedo threshold for the filtered summary.
    #[arg(long, default_value_t = 0.2)]
    pub filter_m: f64,
    /// Quantize predictions to 8 bits.
    #[arg(long)]
    pub quantize: bool,
    /// Also write an SVG scatter plot here.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CharacterizeArgs {
    /// Display JSON.
    #[arg(long)]
    pub display: PathBuf,
    /// `none` or the path of a .cube file.
    #[arg(long, default_value = "none")]
    pub tonemap: String,
    /// Knot grid CSV [default: built-in delta-estimated knots]
    #[arg(long)]
    pub knots: Option<PathBuf>,
    /// Number of ramp levels.
    #[arg(long, default_value_t = 64)]
    pub levels: usize,
    /// Lowest unprocessed level.
    #[arg(long, default_value_t = 0.0)]
    pub lo: f64,
    /// Highest unprocessed level.
    #[arg(long, default_value_t = 1.0)]
    pub hi: f64,
}
