//! Command-line front end: configuration files, subcommands and exit codes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector6;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ddvo::DdvoSettings;
use crate::dvo::{solve_coarse_to_fine, Damping};
use crate::geometry::{CameraIntrinsics, Pose6D};
use crate::gradcheck::{self, GradcheckConfig};
use crate::imaging::{read_image, read_pfm, write_atomic, write_pfm, write_pgm, Endianness, InverseDepthMap};
use crate::metrics::{ate, depth_metrics, kitti_line, DepthMetrics, Trajectory};
use crate::synth::{random_motion, Scene, SceneKind, SceneSpec};
use crate::training::{bundled_large_motion_triplet, bundled_triplet, train_triplet, TrainConfig, TrainMode};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_DEGENERATE: i32 = 2;
pub const EXIT_GRADCHECK: i32 = 3;

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::DegenerateOverlap { .. }
        | Error::SingularSystem { .. }
        | Error::DivergenceDetected { .. }
        | Error::NoValidPixels
        | Error::DegenerateDepth(_) => EXIT_DEGENERATE,
        _ => EXIT_IO,
    }
}

/// Every key accepted in a configuration file.
pub const CONFIG_KEYS: &[&str] = &[
    "camera.fx",
    "camera.fy",
    "camera.cx",
    "camera.cy",
    "dvo.levels",
    "dvo.max_iters_per_level",
    "dvo.step_norm_tol",
    "dvo.damping",
    "ddvo.levels",
    "ddvo.unroll_iters",
    "ddvo.damping",
    "ddvo.grad_through_jacobian",
    "hybrid.levels",
    "hybrid.unroll_iters",
    "hybrid.damping",
    "hybrid.grad_through_jacobian",
    "loss.lambda_prior",
    "loss.ssim_weight",
    "loss.ssim_c1",
    "loss.ssim_c2",
    "train.mode",
    "train.normalize_depth",
    "train.steps",
    "train.seed",
    "train.lr",
    "train.pose_lr",
    "train.warmup_steps",
    "gradcheck.instances",
    "gradcheck.size",
    "gradcheck.unroll_iters",
    "gradcheck.levels",
];

/// Camera entries; unset fields default from the image size.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CameraConfig {
    pub fx: Option<f64>,
    pub fy: Option<f64>,
    pub cx: Option<f64>,
    pub cy: Option<f64>,
}

impl CameraConfig {
    /// Intrinsics for a `width`×`height` image: `f = width`, centered principal point.
    pub fn intrinsics(&self, width: usize, height: usize) -> Result<CameraIntrinsics> {
        let f = width as f64;
        CameraIntrinsics::new(
            self.fx.unwrap_or(f),
            self.fy.unwrap_or(f),
            self.cx.unwrap_or((width as f64 - 1.0) / 2.0),
            self.cy.unwrap_or((height as f64 - 1.0) / 2.0),
        )
    }
}

/// Settings loaded from `section.key = value` lines.
///
/// Lines may be blank or start with `#`. Unknown keys and invalid values are
/// rejected when the file is loaded.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub camera: CameraConfig,
    pub train: TrainConfig,
    pub gradcheck: GradcheckConfig,
    assignments: Vec<(String, String)>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `section.key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            assign(&mut cfg.camera, &mut cfg.train, &mut cfg.gradcheck, key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
            cfg.assignments.push((key.to_string(), value.to_string()));
        }
        cfg.train.validate()?;
        cfg.gradcheck.validate()?;
        if let (Some(fx), Some(fy)) = (cfg.camera.fx, cfg.camera.fy) {
            CameraIntrinsics::new(fx, fy, 0.0, 0.0)?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Loads `path` when given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    /// `base` with every key set in the file applied on top.
    pub fn overlay_train(&self, base: TrainConfig) -> Result<TrainConfig> {
        let mut train = base;
        let (mut camera, mut gc) = (self.camera, self.gradcheck);
        for (k, v) in &self.assignments {
            assign(&mut camera, &mut train, &mut gc, k, v)?;
        }
        train.validate()?;
        Ok(train)
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_damping(key: &str, value: &str) -> Result<Damping> {
    let bad = || Error::Config(format!("{key}: expected `relative:<c>` or `absolute:<lambda>`, got {value:?}"));
    let (kind, number) = value.split_once(':').ok_or_else(bad)?;
    let x: f64 = number.trim().parse().map_err(|_| bad())?;
    match kind.trim() {
        "relative" => Ok(Damping::Relative(x)),
        "absolute" => Ok(Damping::Absolute(x)),
        _ => Err(bad()),
    }
}

fn assign_ddvo(s: &mut DdvoSettings, field: &str, key: &str, value: &str) -> Result<()> {
    match field {
        "levels" => s.levels = parse_value(key, value)?,
        "unroll_iters" => s.unroll_iters = parse_value(key, value)?,
        "damping" => s.damping = parse_damping(key, value)?,
        "grad_through_jacobian" => s.grad_through_jacobian = parse_value(key, value)?,
        _ => return Err(Error::Config(format!("unknown key {key:?}"))),
    }
    Ok(())
}

fn assign(
    camera: &mut CameraConfig,
    train: &mut TrainConfig,
    gc: &mut GradcheckConfig,
    key: &str,
    value: &str,
) -> Result<()> {
    let unknown = || Error::Config(format!("unknown key {key:?}"));
    let (section, field) = key.split_once('.').ok_or_else(unknown)?;
    match (section, field) {
        ("camera", "fx") => camera.fx = Some(parse_value(key, value)?),
        ("camera", "fy") => camera.fy = Some(parse_value(key, value)?),
        ("camera", "cx") => camera.cx = Some(parse_value(key, value)?),
        ("camera", "cy") => camera.cy = Some(parse_value(key, value)?),
        ("dvo", "levels") => train.dvo.levels = parse_value(key, value)?,
        ("dvo", "max_iters_per_level") => train.dvo.max_iters_per_level = parse_value(key, value)?,
        ("dvo", "step_norm_tol") => train.dvo.step_norm_tol = parse_value(key, value)?,
        ("dvo", "damping") => train.dvo.damping = parse_damping(key, value)?,
        ("ddvo", f) => assign_ddvo(&mut train.ddvo, f, key, value)?,
        ("hybrid", f) => assign_ddvo(&mut train.hybrid_ddvo, f, key, value)?,
        ("loss", "lambda_prior") => train.weights.lambda_prior = parse_value(key, value)?,
        ("loss", "ssim_weight") => train.weights.ssim_weight = parse_value(key, value)?,
        ("loss", "ssim_c1") => train.weights.ssim_c1 = parse_value(key, value)?,
        ("loss", "ssim_c2") => train.weights.ssim_c2 = parse_value(key, value)?,
        ("train", "mode") => train.mode = value.parse()?,
        ("train", "normalize_depth") => train.normalize_depth = parse_value(key, value)?,
        ("train", "steps") => train.steps = parse_value(key, value)?,
        ("train", "seed") => train.seed = parse_value(key, value)?,
        ("train", "lr") => train.lr = parse_value(key, value)?,
        ("train", "pose_lr") => train.pose_lr = parse_value(key, value)?,
        ("train", "warmup_steps") => train.warmup_steps = parse_value(key, value)?,
        ("gradcheck", "instances") => gc.instances = parse_value(key, value)?,
        ("gradcheck", "size") => gc.size = parse_value(key, value)?,
        ("gradcheck", "unroll_iters") => gc.unroll_iters = parse_value(key, value)?,
        ("gradcheck", "levels") => gc.levels = parse_value(key, value)?,
        _ => return Err(unknown()),
    }
    Ok(())
}

/// Caps the worker pool from `DDVO_THREADS` (unset or 0 leaves the default).
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("DDVO_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("DDVO_THREADS must be a count, got {raw:?}")))?;
    if n > 0 {
        // A pool that is already built keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "ddvo", version, about = "Direct visual odometry and depth learning tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the pose of a source image relative to a reference image.
    Odometry(OdometryArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Optimize per-pixel depth on a bundled synthetic triplet.
    TrainDemo(TrainDemoArgs),
    /// Depth metrics between two depth maps.
    Eval(EvalArgs),
    /// Absolute trajectory error between two trajectories.
    EvalAte(EvalAteArgs),
    /// Write a synthetic scene with two rendered views.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct OdometryArgs {
    /// Reference image (PGM or PPM).
    pub reference: PathBuf,
    /// Inverse depth of the reference (PFM).
    pub depth: PathBuf,
    /// Source image.
    pub source: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the reference and source camera poses as a two-line trajectory.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Clip {
    Small,
    Large,
}

#[derive(Debug, Args)]
pub struct TrainDemoArgs {
    #[arg(long, default_value = "pose-param")]
    pub mode: TrainMode,
    #[arg(long, value_enum, default_value = "on")]
    pub normalize: Switch,
    #[arg(long, value_enum, default_value = "small")]
    pub clip: Clip,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trace CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Final reference inverse depth; defaults to the trace path with a `.pfm` extension.
    #[arg(long)]
    pub depth_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted depth (PFM).
    pub pred: PathBuf,
    /// Ground-truth depth (PFM); values ≤ 0 are ignored.
    pub gt: PathBuf,
    /// Rescale the prediction by the ratio of medians first.
    #[arg(long)]
    pub align: bool,
    /// Ignore ground truth at or beyond this depth.
    #[arg(long)]
    pub cap: Option<f64>,
    /// Treat both files as inverse depth.
    #[arg(long)]
    pub inverse: bool,
}

#[derive(Debug, Args)]
pub struct EvalAteArgs {
    pub pred: PathBuf,
    pub gt: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub snippet: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Plane,
    TwoPlane,
    HeightField,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory, created when missing.
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "two-plane")]
    pub kind: Kind,
    #[arg(long, default_value_t = 160)]
    pub width: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    #[arg(long, default_value_t = 2.0)]
    pub near: f64,
    #[arg(long, default_value_t = 4.0)]
    pub far: f64,
    /// Translation length of the random motions.
    #[arg(long, default_value_t = 0.03)]
    pub translation: f64,
    /// Largest rotation angle of the random motions, radians.
    #[arg(long, default_value_t = 0.008)]
    pub max_angle: f64,
    /// Explicit motion to view 1 as `tx,ty,tz,wx,wy,wz`.
    #[arg(long)]
    pub p21: Option<String>,
    /// Explicit motion to view 3 as `tx,ty,tz,wx,wy,wz`.
    #[arg(long)]
    pub p23: Option<String>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_from_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { EXIT_IO } else { EXIT_OK };
        }
    };
    if let Err(e) = configure_threads() {
        let _ = writeln!(err, "error: {e}");
        return exit_code(&e);
    }
    match run(&cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs one command, writing its report to `out`.
pub fn run(command: &Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Odometry(a) => cmd_odometry(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::TrainDemo(a) => cmd_train_demo(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::EvalAte(a) => cmd_eval_ate(a, out),
        Command::Synth(a) => cmd_synth(a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

pub fn cmd_odometry(a: &OdometryArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let reference = read_image(&a.reference)?;
    let depth = InverseDepthMap::from_image(read_pfm(&a.depth)?.image)?;
    let src = read_image(&a.source)?;
    let k = cfg.camera.intrinsics(reference.width(), reference.height())?;
    let r = solve_coarse_to_fine(&reference, &depth, &src, &k, Pose6D::identity(), &cfg.train.dvo)?;
    let m = r.pose.to_matrix();
    let iters: Vec<String> = r.iterations_used.iter().map(|n| n.to_string()).collect();
    emit(
        out,
        &format!(
            "{}\nfinal_residual {:e}\nvalid_fraction {}\niterations {}\n",
            kitti_line(&m),
            r.final_residual,
            r.valid_fraction,
            iters.join(",")
        ),
    )?;
    if let Some(path) = &a.trajectory {
        Trajectory::from_relative(&[r.pose])?.write_kitti(path)?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let report = gradcheck::run(&cfg.gradcheck, &cfg.train.ddvo, &cfg.train.weights, a.seed)?;
    emit(out, &report.to_csv())?;
    Ok(if report.all_pass() { EXIT_OK } else { EXIT_GRADCHECK })
}

/// Configuration used by `train-demo`: the demo defaults with the file on top.
pub fn demo_train_config(mode: TrainMode, normalize: bool, config: Option<&Path>) -> Result<TrainConfig> {
    let base = TrainConfig::demo(mode, normalize);
    let cfg = RunConfig::load_or_default(config)?;
    let mut train = cfg.overlay_train(base)?;
    train.mode = mode;
    train.normalize_depth = normalize;
    Ok(train)
}

pub fn cmd_train_demo(a: &TrainDemoArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = demo_train_config(a.mode, a.normalize == Switch::On, a.config.as_deref())?;
    let inputs = match a.clip {
        Clip::Small => bundled_triplet(),
        Clip::Large => bundled_large_motion_triplet(),
    };
    let trace = train_triplet(&inputs, &cfg)?;
    trace.write_csv(&a.out)?;
    let depth_out = a.depth_out.clone().unwrap_or_else(|| a.out.with_extension("pfm"));
    write_pfm(&depth_out, trace.final_depths[1].image(), Endianness::Little)?;
    let first = trace.first();
    let last = trace.last();
    emit(
        out,
        &format!(
            "mode {} normalize {} steps {}\ntotal {:e} -> {:e}\nmean_inv_depth {} -> {}\n",
            cfg.mode,
            if cfg.normalize_depth { "on" } else { "off" },
            trace.records.len(),
            first.total,
            last.total,
            first.mean_inv_depth,
            last.mean_inv_depth,
        ),
    )?;
    if let (Some(e0), Some(e1)) = (first.gt_error, last.gt_error) {
        emit(out, &format!("gt_error {e0} -> {e1}\n"))?;
    }
    if let Some(step) = trace.halted_at {
        emit(out, &format!("halted at step {step}: non-finite loss\n"))?;
        return Ok(EXIT_DEGENERATE);
    }
    Ok(EXIT_OK)
}

fn read_depth_values(path: &Path, inverse: bool) -> Result<(usize, usize, Vec<f64>)> {
    let img = read_pfm(path)?.image;
    if img.channels() != 1 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: "expected a single-channel PFM".into(),
        });
    }
    let values = img
        .data()
        .iter()
        .map(|&v| if inverse { if v > 0.0 { 1.0 / v } else { 0.0 } } else { v })
        .collect();
    Ok((img.width(), img.height(), values))
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let (pw, ph, pred) = read_depth_values(&a.pred, a.inverse)?;
    let (gw, gh, gt) = read_depth_values(&a.gt, a.inverse)?;
    if (pw, ph) != (gw, gh) {
        return Err(Error::ShapeMismatch(format!("prediction is {pw}x{ph}, ground truth is {gw}x{gh}")));
    }
    let m = depth_metrics(&pred, &gt, None, a.align, a.cap)?;
    emit(out, &format!("{}\n{}\n", DepthMetrics::CSV_HEADER, m.csv_row()))?;
    Ok(EXIT_OK)
}

pub fn cmd_eval_ate(a: &EvalAteArgs, out: &mut dyn Write) -> Result<i32> {
    let pred = Trajectory::read_kitti(&a.pred)?;
    let gt = Trajectory::read_kitti(&a.gt)?;
    let r = ate(&pred, &gt, a.snippet)?;
    emit(out, &format!("mean,std\n{},{}\n", r.mean, r.std))?;
    Ok(EXIT_OK)
}

fn parse_pose(text: &str) -> Result<Pose6D> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("pose {text:?} is not six comma-separated numbers")))?;
    if v.len() != 6 {
        return Err(Error::Config(format!("pose {text:?} has {} values, expected 6", v.len())));
    }
    Ok(Pose6D::from_vector(&Vector6::from_column_slice(&v)))
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<i32> {
    let kind = match a.kind {
        Kind::Plane => SceneKind::TexturedPlane,
        Kind::TwoPlane => SceneKind::TwoPlane,
        Kind::HeightField => SceneKind::SmoothHeightField,
    };
    let scene = Scene::new(SceneSpec::new(kind, a.seed, a.width, a.height, (a.near, a.far)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed ^ 0x5eed);
    let p21 = match &a.p21 {
        Some(s) => parse_pose(s)?,
        None => random_motion(&mut rng, a.translation, a.max_angle),
    };
    let p23 = match &a.p23 {
        Some(s) => parse_pose(s)?,
        None => random_motion(&mut rng, a.translation, a.max_angle),
    };
    let t = scene.triplet(p21, p23);
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let k = t.intrinsics;
    write_pgm(a.out.join("reference.pgm"), &t.images[1])?;
    write_pfm(a.out.join("reference_depth.pfm"), t.depths[1].image(), Endianness::Little)?;
    write_pgm(a.out.join("view1.pgm"), &t.images[0])?;
    write_pgm(a.out.join("view3.pgm"), &t.images[2])?;
    Trajectory::new(vec![p21.to_matrix(), p23.to_matrix()])?.write_kitti(a.out.join("poses.txt"))?;
    let camera = format!("camera.fx = {}\ncamera.fy = {}\ncamera.cx = {}\ncamera.cy = {}\n", k.fx, k.fy, k.cx, k.cy);
    write_atomic(&a.out.join("camera.cfg"), camera.as_bytes())?;
    emit(out, &format!("wrote scene {} to {}\n", a.seed, a.out.display()))?;
    Ok(EXIT_OK)
}
