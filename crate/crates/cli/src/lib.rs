//! Command-line front end: run odometry over a directory of `.cfrad` scans,
//! render simulator datasets, and evaluate trajectories.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use cfear_core::evaluation::{self, SHORT_SEGMENT_LENGTHS};
use cfear_core::odometry::{run_sequence, OdometryConfig, OdometryOutput};
use cfear_core::presets::{format_config, preset, read_config, PRESET_NAMES};
use cfear_core::radar_io::{format_covariances, read_scan, read_trajectory, write_scan, write_trajectory};
use cfear_core::simulator::{
    default_loop, read_world, street_run, street_world, urban_loop, urban_world, write_world, SequenceGenerator,
    SimConfig, SimPath, SimTrajectory, SpeedProfile, World,
};
use cfear_core::{Point2, Pose2};
use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] cfear_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use cfear_core::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(E::Config(_)) => EXIT_USAGE,
            CliError::Core(E::Io { .. }) => EXIT_IO,
            CliError::Core(_) => EXIT_DATA,
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(cfear_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[derive(Debug, Parser)]
#[command(name = "cfear", version, about = "Spinning-radar odometry from oriented surface points")]
pub struct Cli {
    /// Worker threads for the parallel stages (1 is the determinism reference).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a trajectory from a directory of .cfrad scans.
    Odometry(OdometryArgs),
    /// Render a synthetic scan sequence with ground truth.
    Simulate(SimulateArgs),
    /// Compare an estimated trajectory with ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct OdometryArgs {
    /// Directory of .cfrad scans, processed in lexicographic order.
    #[arg(required_unless_present = "print_config")]
    pub scan_dir: Option<PathBuf>,
    /// Output trajectory; covariances go next to it with a .cov extension.
    #[arg(long, short, required_unless_present = "print_config")]
    pub out: Option<PathBuf>,
    /// One of cfear-1, cfear-2, cfear-3, cfear-3-s50, baseline.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// key = value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub print_config: bool,
    /// Write the per-stage timing report here.
    #[arg(long)]
    pub timing: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// World file, or `urban` / `street` for the built-in worlds.
    #[arg(long, default_value = "urban")]
    pub world: String,
    /// Trajectory: `loop[:speed[:accel]]`, `street[:length[:speed[:accel]]]`,
    /// `line:x,y,heading_deg,length[:speed[:accel]]`,
    /// `rect:cx,cy,perimeter,aspect,fillet[:speed[:accel]]` or `static:x,y,heading_deg,ticks`.
    #[arg(long, default_value = "loop")]
    pub trajectory: String,
    /// Output directory for scans, ground truth and the world file.
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 400)]
    pub na: usize,
    #[arg(long, default_value_t = 1000)]
    pub nr: usize,
    /// Range resolution, meters per bin.
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    /// Disable speckle, noise floor and multipath.
    #[arg(long)]
    pub noiseless: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub estimate: PathBuf,
    pub ground_truth: PathBuf,
    /// Comma-separated segment lengths in meters.
    #[arg(long, value_delimiter = ',', default_values_t = SHORT_SEGMENT_LENGTHS)]
    pub segments: Vec<f64>,
    /// Step between segment start indices.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Also write `metric,name,value` rows here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Resolves `--preset` / `--config`; cfear-3 when neither is given.
pub fn resolve_config(preset_name: Option<&str>, config: Option<&Path>) -> Result<OdometryConfig, CliError> {
    match (preset_name, config) {
        (Some(_), Some(_)) => Err(CliError::Usage("--preset and --config are mutually exclusive".into())),
        (Some(name), None) => preset(name).map_err(|_| {
            CliError::Usage(format!("unknown preset '{name}' (expected one of {})", PRESET_NAMES.join(", ")))
        }),
        (None, Some(path)) => read_config(path).map_err(|e| match e {
            cfear_core::Error::Io { .. } => CliError::Core(e),
            other => CliError::Usage(other.to_string()),
        }),
        (None, None) => Ok(preset("cfear-3")?),
    }
}

fn scan_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| io_error(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io_error(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "cfrad") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn covariance_path(out: &Path) -> PathBuf {
    out.with_extension("cov")
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Runs odometry over `scan_dir` and writes the trajectory to `out`.
pub fn cmd_odometry(
    scan_dir: &Path,
    cfg: &OdometryConfig,
    out: &Path,
    timing: Option<&Path>,
) -> Result<OdometryOutput, CliError> {
    let files = scan_files(scan_dir)?;
    if files.is_empty() {
        eprintln!("warning: no .cfrad scans in {}", scan_dir.display());
    }
    let output = run_sequence(files.iter().map(read_scan), cfg)?;
    write_trajectory(&output.trajectory, out)?;
    write_text(&covariance_path(out), &format_covariances(&output.trajectory))?;
    if let Some(path) = timing {
        write_text(path, &output.timing.report())?;
    }
    let divergences = output.divergences();
    if divergences > 0 {
        eprintln!("warning: {divergences} scan(s) fell back to the motion prediction");
    }
    Ok(output)
}

fn parse_numbers(text: &str, expected: usize, what: &str) -> Result<Vec<f64>, CliError> {
    let values: Vec<f64> = text
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("{what}: '{text}': {e}")))?;
    if values.len() != expected || values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Usage(format!("{what}: expected {expected} comma-separated numbers, found '{text}'")));
    }
    Ok(values)
}

fn parse_speed(parts: &[&str], spec: &str) -> Result<SpeedProfile, CliError> {
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|e| CliError::Usage(format!("trajectory '{spec}': '{s}': {e}")))
    };
    let speed = parts.first().map(|s| num(s)).transpose()?.unwrap_or(5.0);
    let accel = parts.get(1).map(|s| num(s)).transpose()?.unwrap_or(0.0);
    if parts.len() > 2 {
        return Err(CliError::Usage(format!("trajectory '{spec}': too many fields")));
    }
    Ok(if accel > 0.0 {
        SpeedProfile::Sinusoidal { mean: speed, amplitude: accel, period: 20.0 }
    } else {
        SpeedProfile::Constant(speed)
    })
}

/// Parses a trajectory specification (see `cfear simulate --help`).
pub fn parse_trajectory_spec(spec: &str) -> Result<SimTrajectory, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let usage = |m: &str| CliError::Usage(format!("trajectory '{spec}': {m}"));
    let traj = match parts[0] {
        "loop" if parts.len() == 1 => default_loop(),
        "loop" => {
            let SimTrajectory::Moving { path, .. } = urban_loop(5.0, 0.0) else { unreachable!() };
            SimTrajectory::Moving { path, speed: parse_speed(&parts[1..], spec)? }
        }
        "street" => {
            let length = parts.get(1).map(|s| s.parse::<f64>()).transpose().map_err(|e| usage(&e.to_string()))?.unwrap_or(300.0);
            let SimTrajectory::Moving { path, .. } = street_run(length, 5.0, 0.0) else { unreachable!() };
            let speed = if parts.len() > 2 { parse_speed(&parts[2..], spec)? } else { SpeedProfile::Sinusoidal { mean: 5.0, amplitude: 1.5, period: 20.0 } };
            SimTrajectory::Moving { path, speed }
        }
        "line" => {
            let v = parse_numbers(parts.get(1).ok_or_else(|| usage("missing x,y,heading_deg,length"))?, 4, "line")?;
            let path = SimPath::line(Point2::new(v[0], v[1]), v[2].to_radians(), v[3]);
            SimTrajectory::Moving { path, speed: parse_speed(&parts[2..], spec)? }
        }
        "rect" => {
            let v = parse_numbers(parts.get(1).ok_or_else(|| usage("missing cx,cy,perimeter,aspect,fillet"))?, 5, "rect")?;
            let path = SimPath::rounded_rectangle(Point2::new(v[0], v[1]), v[2], v[3], v[4])?;
            SimTrajectory::Moving { path, speed: parse_speed(&parts[2..], spec)? }
        }
        "static" => {
            let v = parse_numbers(parts.get(1).ok_or_else(|| usage("missing x,y,heading_deg,ticks"))?, 4, "static")?;
            if parts.len() > 2 || v[3] < 0.0 || v[3].fract() != 0.0 {
                return Err(usage("expected static:x,y,heading_deg,ticks"));
            }
            SimTrajectory::Stationary { pose: Pose2::new(v[0], v[1], v[2].to_radians()), ticks: v[3] as usize }
        }
        other => return Err(usage(&format!("unknown kind '{other}'"))),
    };
    traj.validate()?;
    Ok(traj)
}

pub fn scan_file_name(index: usize) -> String {
    format!("scan_{index:06}.cfrad")
}

pub const GROUND_TRUTH_FILE: &str = "groundtruth.traj";
pub const WORLD_FILE: &str = "world.txt";

/// Renders a sequence into `out_dir`: numbered scans, ground truth and the world used.
pub fn cmd_simulate(world: &str, traj_spec: &str, out_dir: &Path, cfg: &SimConfig) -> Result<usize, CliError> {
    let world: World = match world {
        "urban" => urban_world(cfg.seed),
        "street" => street_world(cfg.seed, 300.0),
        path => read_world(path)?,
    };
    let traj = parse_trajectory_spec(traj_spec)?;
    let generator = SequenceGenerator::new(&world, &traj, cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| io_error(out_dir, e))?;
    write_world(&world, out_dir.join(WORLD_FILE))?;
    write_trajectory(&generator.ground_truth(), out_dir.join(GROUND_TRUTH_FILE))?;
    let mut count = 0;
    for (index, item) in generator.enumerate() {
        let (scan, _) = item?;
        write_scan(&scan, out_dir.join(scan_file_name(index)))?;
        count += 1;
    }
    Ok(count)
}

/// Evaluates `est` against `gt`; returns the text report.
pub fn cmd_evaluate(est: &Path, gt: &Path, segments: &[f64], stride: usize, csv: Option<&Path>) -> Result<String, CliError> {
    let est = read_trajectory(est)?;
    let gt = read_trajectory(gt)?;
    let ev = evaluation::evaluate(&est, &gt, segments, stride)?;
    if let Some(path) = csv {
        write_text(path, &evaluation::format_csv(&ev))?;
    }
    Ok(evaluation::format_report(&ev))
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Odometry(a) => {
            let cfg = resolve_config(a.preset.as_deref(), a.config.as_deref())?;
            if a.print_config {
                print!("{}", format_config(&cfg));
                return Ok(());
            }
            let (Some(dir), Some(out)) = (a.scan_dir, a.out) else {
                return Err(CliError::Usage("odometry needs a scan directory and --out".into()));
            };
            let output = cmd_odometry(&dir, &cfg, &out, a.timing.as_deref())?;
            eprintln!("{} poses written to {}", output.trajectory.len(), out.display());
            Ok(())
        }
        Command::Simulate(a) => {
            let base = SimConfig { na: a.na, nr: a.nr, gamma: a.gamma, seed: a.seed, ..SimConfig::default() };
            let cfg = if a.noiseless { base.noiseless() } else { base };
            let n = cmd_simulate(&a.world, &a.trajectory, &a.out, &cfg)?;
            eprintln!("{n} scans written to {}", a.out.display());
            Ok(())
        }
        Command::Evaluate(a) => {
            let report = cmd_evaluate(&a.estimate, &a.ground_truth, &a.segments, a.stride, a.csv.as_deref())?;
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(report.as_bytes())
                .map_err(|e| io_error(Path::new("<stdout>"), e))
        }
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let pool = match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `args` (including the program name) and runs them.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_OK
            }
        }
    }
}
