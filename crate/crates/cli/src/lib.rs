//! Command-line front end: model fitting, distance and probability fields,
//! field metrics, the point-cloud oracle field and the pair benchmark.

pub mod bench;
pub mod robot;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gsm_core::field::{
    distance_field, isocontour, oracle_field, probability_field, read_distance_field, write_distance_csv,
    write_distance_ppm, write_gradient_csv, write_isocontour_csv, write_probability_csv, write_probability_ppm,
    FieldGrid, ProbabilityMode, SliceSpec,
};
use gsm_core::metrics::compare_fields;
use gsm_core::oracle::{sample_surface, CloudOracle, RobotProbe};
use gsm_core::{
    fit_gmm, load_model, load_point_cloud, save_model, FitOptions, GsmError, IsocontourParams, Pruning,
    SurfaceModel, SurfaceQueryOptions,
};
use thiserror::Error;

pub use robot::{RobotSpec, DEFAULT_ROBOT};

pub const DEFAULT_SLICE: &str = "-2 -2 0,1 0 0,0 1 0,4 4,200 200";
/// Probability level traced by the isocontour output.
pub const ISO_LEVEL: f64 = 0.1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("invalid model: {0}")]
    Model(GsmError),
    #[error("fit failed: {0}")]
    Fit(GsmError),
    #[error(transparent)]
    Core(#[from] GsmError),
}

impl CliError {
    /// 2 for unreadable input, 3 for numeric failures, 4 for empty or
    /// invalid models.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Model(_) => 4,
            CliError::Fit(_) => 3,
            CliError::Core(e) => match e {
                GsmError::Parse { .. }
                | GsmError::Io(_)
                | GsmError::InvalidParameter(_)
                | GsmError::InvalidRange(_)
                | GsmError::DimensionMismatch { .. }
                | GsmError::ShapeMismatch(_) => 2,
                GsmError::EmptyModel | GsmError::InvalidK(_) => 4,
                _ => 3,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gsm", version, about = "Distance fields and collision bounds for Gaussian surface models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a surface model to a point cloud (XYZ text or ASCII PLY).
    Fit(FitArgs),
    /// Distance and gradient maps on a slice.
    Field(FieldArgs),
    /// Collision-probability map on a slice.
    Prob(ProbArgs),
    /// RMSE and CES between two distance/gradient field pairs.
    Metrics(MetricsArgs),
    /// Point-cloud reference distance and normal maps on a slice.
    OracleField(OracleFieldArgs),
    /// Single-threaded timing of pair queries on random ellipsoids.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub cloud: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub components: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Isocontour level of the component ellipsoids.
    #[arg(long, default_value_t = gsm_core::DEFAULT_LEVEL)]
    pub level: f64,
}

#[derive(Debug, Args)]
pub struct SliceArgs {
    /// Semi-axes in meters, then yaw, pitch, roll in degrees.
    #[arg(long, env = "GSM_FIELD_ROBOT", default_value = DEFAULT_ROBOT, allow_hyphen_values = true)]
    pub robot: String,
    /// `origin,u,v,extents,res`: corner point, two orthonormal axes, side
    /// lengths and cell counts; numbers within a group are space-separated.
    #[arg(long, env = "GSM_FIELD_SLICE", default_value = DEFAULT_SLICE, allow_hyphen_values = true)]
    pub slice: String,
    /// Output path prefix.
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct FieldArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub common: SliceArgs,
    /// Bounding-sphere pruning of the component scan (exact either way).
    #[arg(long, env = "GSM_FIELD_PRUNE", value_enum, default_value_t = Switch::On)]
    pub prune: Switch,
}

#[derive(Debug, Args)]
pub struct ProbArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub common: SliceArgs,
    /// Isotropic variance of the robot center (m²).
    #[arg(long, env = "GSM_FIELD_SIGMA", default_value_t = 0.01)]
    pub sigma: f64,
    /// Neighbouring components blended per cell.
    #[arg(long = "K", env = "GSM_FIELD_K", default_value_t = 9, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[arg(long, env = "GSM_FIELD_BLEND", value_enum, default_value_t = Switch::On)]
    pub blend: Switch,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Prefix of the evaluated `.dist.csv` / `.grad.csv` pair.
    #[arg(long)]
    pub pred: String,
    /// Prefix of the reference pair.
    #[arg(long)]
    pub truth: String,
}

#[derive(Debug, Args)]
pub struct OracleFieldArgs {
    #[arg(long)]
    pub cloud: PathBuf,
    #[command(flatten)]
    pub common: SliceArgs,
    /// Robot boundary samples.
    #[arg(long, env = "GSM_FIELD_SAMPLES", default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub pairs: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "local")]
    pub device_label: String,
    /// Also write the CSV report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn input<T, E: std::fmt::Display>(what: &str, r: Result<T, E>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Input(format!("{what}: {e}")))
}

fn load_surface_model(path: &Path) -> Result<SurfaceModel<3>, CliError> {
    load_model(path).map_err(|e| match e {
        GsmError::Parse { .. } | GsmError::Io(_) => CliError::Input(format!("{}: {e}", path.display())),
        other => CliError::Model(other),
    })
}

fn create(path: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(input(path, File::create(path))?))
}

fn write_with(path: &str, f: impl FnOnce(&mut BufWriter<File>) -> gsm_core::Result<()>) -> Result<(), CliError> {
    let mut w = create(path)?;
    f(&mut w)?;
    input(path, w.flush())
}

fn slice_and_robot(args: &SliceArgs) -> Result<(SliceSpec, gsm_core::Ellipsoid3), CliError> {
    let slice: SliceSpec = input("--slice", args.slice.parse())?;
    let robot: RobotSpec = input("--robot", args.robot.parse())?;
    Ok((slice, input("--robot", robot.ellipsoid())?))
}

fn write_distance_outputs(prefix: &str, grid: &FieldGrid) -> Result<(), CliError> {
    write_with(&format!("{prefix}.dist.csv"), |w| write_distance_csv(w, grid))?;
    write_with(&format!("{prefix}.grad.csv"), |w| write_gradient_csv(w, grid))?;
    write_with(&format!("{prefix}.dist.ppm"), |w| write_distance_ppm(w, grid))
}

fn read_distance_prefix(prefix: &str) -> Result<FieldGrid, CliError> {
    let open = |suffix: &str| -> Result<BufReader<File>, CliError> {
        let path = format!("{prefix}.{suffix}");
        Ok(BufReader::new(input(&path, File::open(&path))?))
    };
    Ok(read_distance_field(open("dist.csv")?, open("grad.csv")?)?)
}

pub fn run<W: Write>(cli: Cli, out: &mut W) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(a) => cmd_fit(a, out),
        Command::Field(a) => cmd_field(a, out),
        Command::Prob(a) => cmd_prob(a, out),
        Command::Metrics(a) => cmd_metrics(a, out),
        Command::OracleField(a) => cmd_oracle_field(a, out),
        Command::Bench(a) => cmd_bench(a, out),
    }
}

fn report<W: Write>(out: &mut W, text: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    out.write_fmt(text).map_err(GsmError::from)?;
    Ok(())
}

pub fn cmd_fit<W: Write>(a: FitArgs, out: &mut W) -> Result<(), CliError> {
    let cloud = load_point_cloud::<3>(&a.cloud)?;
    if cloud.is_empty() {
        return Err(CliError::Input(format!("{}: point cloud is empty", a.cloud.display())));
    }
    let options = FitOptions {
        seed: a.seed,
        isocontour: input("--level", IsocontourParams::new(a.level))?,
        ..FitOptions::default()
    };
    let fit = fit_gmm(&cloud, a.components as usize, &options).map_err(CliError::Fit)?;
    save_model(&fit.model, &a.out)?;
    report(
        out,
        format_args!(
            "components {}\nlog_likelihood {:.6}\niterations {}\n",
            fit.model.len(),
            fit.log_likelihood,
            fit.iterations
        ),
    )
}

pub fn cmd_field<W: Write>(a: FieldArgs, out: &mut W) -> Result<(), CliError> {
    let (slice, robot) = slice_and_robot(&a.common)?;
    let model = load_surface_model(&a.model)?;
    let options = SurfaceQueryOptions {
        prune: match a.prune {
            Switch::On => Pruning::Exact,
            Switch::Off => Pruning::Off,
        },
        ..SurfaceQueryOptions::default()
    };
    let grid = distance_field(&model, &robot, &slice, &options)?;
    write_distance_outputs(&a.common.out, &grid)?;
    report(out, format_args!("cells {} valid {}\n", grid.cells.len(), grid.valid_count()))
}

pub fn cmd_prob<W: Write>(a: ProbArgs, out: &mut W) -> Result<(), CliError> {
    if !(a.sigma >= 0.0 && a.sigma.is_finite()) {
        return Err(CliError::Input(format!("--sigma must be a nonnegative variance, got {}", a.sigma)));
    }
    let (slice, robot) = slice_and_robot(&a.common)?;
    let model = load_surface_model(&a.model)?;
    let mode = match a.blend {
        Switch::On => ProbabilityMode::Blended(a.k as usize),
        Switch::Off => ProbabilityMode::Closest,
    };
    let grid = probability_field(&model, &robot, &slice, a.sigma, mode)?;
    let prefix = &a.common.out;
    write_with(&format!("{prefix}.prob.csv"), |w| write_probability_csv(w, &grid))?;
    write_with(&format!("{prefix}.prob.ppm"), |w| write_probability_ppm(w, &grid))?;
    let segments = isocontour(&grid, ISO_LEVEL);
    write_with(&format!("{prefix}.iso10.csv"), |w| write_isocontour_csv(w, &segments))?;
    let degraded = grid.cells.iter().filter(|c| c.degraded).count();
    report(
        out,
        format_args!(
            "cells {} valid {} degraded {} iso_segments {}\n",
            grid.cells.len(),
            grid.valid_count(),
            degraded,
            segments.len()
        ),
    )
}

pub fn cmd_metrics<W: Write>(a: MetricsArgs, out: &mut W) -> Result<(), CliError> {
    let pred = read_distance_prefix(&a.pred)?;
    let truth = read_distance_prefix(&a.truth)?;
    let m = compare_fields(&pred, &truth)?;
    report(
        out,
        format_args!(
            "rmse,ces,distance_cells,gradient_cells\n{},{},{},{}\n",
            m.rmse, m.ces, m.distance_cells, m.gradient_cells
        ),
    )
}

pub fn cmd_oracle_field<W: Write>(a: OracleFieldArgs, out: &mut W) -> Result<(), CliError> {
    if a.samples == 0 {
        return Err(CliError::Input("--samples must be positive".into()));
    }
    let (slice, robot) = slice_and_robot(&a.common)?;
    let cloud = load_point_cloud::<3>(&a.cloud)?;
    let oracle = CloudOracle::new(cloud)?;
    let probe = RobotProbe::new(&sample_surface(&robot, a.samples, a.seed));
    let grid = oracle_field(&oracle, &probe, &slice);
    write_distance_outputs(&a.common.out, &grid)?;
    report(out, format_args!("cells {} valid {}\n", grid.cells.len(), grid.valid_count()))
}

pub fn cmd_bench<W: Write>(a: BenchArgs, out: &mut W) -> Result<(), CliError> {
    let r = bench::run_bench(a.pairs as usize, a.seed, &a.device_label);
    let csv = format!("{}\n{}\n", bench::CSV_HEADER, r.csv_row());
    if let Some(path) = &a.out {
        let path = path.to_string_lossy();
        write_with(&path, |w| Ok(w.write_all(csv.as_bytes())?))?;
    }
    report(out, format_args!("{csv}"))?;
    if r.failures > 0 {
        report(out, format_args!("failures {}\n", r.failures))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Input("x".into()).exit_code(), 2);
        assert_eq!(CliError::Core(GsmError::EmptyModel).exit_code(), 4);
        assert_eq!(CliError::Core(GsmError::SingularSystem).exit_code(), 3);
        assert_eq!(CliError::Fit(GsmError::TooFewPoints { needed: 2, found: 1 }).exit_code(), 3);
        assert_eq!(CliError::Model(GsmError::NotPositiveDefinite { min_eigenvalue: 0.0 }).exit_code(), 4);
        assert_eq!(CliError::Core(GsmError::ShapeMismatch("a".into())).exit_code(), 2);
    }

    #[test]
    fn defaults_parse() {
        assert!(DEFAULT_SLICE.parse::<SliceSpec>().is_ok());
        let cli = Cli::try_parse_from(["gsm", "field", "--model", "m.gsm", "--out", "o"]).unwrap();
        let Command::Field(f) = cli.command else { panic!() };
        assert_eq!(f.prune, Switch::On);
        assert_eq!(f.common.robot, DEFAULT_ROBOT);
    }
}
