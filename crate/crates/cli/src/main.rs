//! `stflow`: synthesize events, build voxel grids, run the flow network,
//! profile it, and evaluate flow fields.

mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stflow::events::{read_events, write_events, write_events_csv, synthesize_events, EventStream, SynthConfig};
use stflow::flow::FlowField;
use stflow::flownet::{forward, init_weights, load_weights, FlowNet, NetworkConfig, Stage, DEFAULT_CHANNELS, DEFAULT_DIMS, DEFAULT_M};
use stflow::image::Frame;
use stflow::io_util::atomic_write;
use stflow::lk::{lk_flow, DEFAULT_RIDGE};
use stflow::metrics::evaluate_flow;
use stflow::profiler::count_macs;
use stflow::ssm::ScanMode;
use stflow::voxel::{build_voxel_grid, VoxelGrid, DEFAULT_BINS};
use thiserror::Error;

use settings::{List, Settings};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] stflow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(_) => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "stflow", version, about = "Event-camera optical flow toolkit")]
struct Cli {
    /// Plain `key=value` file; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a translating texture into events, ground-truth flow and a frame pair.
    Synth(SynthArgs),
    /// Accumulate an event file into a voxel grid.
    Voxelize(VoxelizeArgs),
    /// Predict dense flow from events or a voxel grid.
    Infer(InferArgs),
    /// Compare a predicted flow file against ground truth.
    Eval(EvalArgs),
    /// Report parameter and multiply-accumulate counts.
    Profile(ProfileArgs),
    /// Windowed least-squares flow from a frame pair.
    Lk(LkArgs),
    /// Write freshly initialized network weights.
    InitWeights(InitArgs),
    /// Render a flow file as a color-wheel PPM image.
    Viz(VizArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    /// Seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// `u,v` in pixels per second.
    #[arg(long, allow_hyphen_values = true)]
    velocity: Option<List<f64>>,
    #[arg(long)]
    contrast: Option<f64>,
    #[arg(long)]
    substeps: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Texture band limit in cycles per pixel.
    #[arg(long)]
    cutoff: Option<f64>,
    /// Events output; a `.csv` extension selects the text format.
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    flow: Option<PathBuf>,
    #[arg(long)]
    frame0: Option<PathBuf>,
    #[arg(long)]
    frame1: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct WindowArgs {
    #[arg(long)]
    bins: Option<usize>,
    /// Window start in nanoseconds.
    #[arg(long, allow_hyphen_values = true)]
    t_start: Option<i64>,
    /// Window end in nanoseconds; defaults to the last event.
    #[arg(long, allow_hyphen_values = true)]
    t_end: Option<i64>,
}

#[derive(Args, Debug)]
struct VoxelizeArgs {
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    window: WindowArgs,
}

#[derive(Args, Debug)]
struct NetArgs {
    /// lti-diagonal | lti-mimo | selective | attention
    #[arg(long)]
    backend: Option<String>,
    /// none | temporal | temporal+positional
    #[arg(long)]
    embedding: Option<String>,
    /// Output channels of the four stages.
    #[arg(long)]
    channels: Option<List<usize>>,
    /// Token widths of the four stages.
    #[arg(long)]
    dims: Option<List<usize>>,
    /// Temporal patch depths of the four stages.
    #[arg(long)]
    temporal_patch: Option<List<usize>>,
    #[arg(long)]
    n_blocks: Option<usize>,
    #[arg(long)]
    state_dim: Option<usize>,
    /// sequential | parallel
    #[arg(long)]
    scan: Option<String>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long, conflicts_with = "voxels")]
    events: Option<PathBuf>,
    #[arg(long)]
    voxels: Option<PathBuf>,
    /// Weight file or `random-seed-N`.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// 32 or 64.
    #[arg(long)]
    precision: Option<u32>,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    net: NetArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Outlier thresholds in pixels.
    #[arg(long)]
    n: Option<List<u32>>,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    /// table | kv
    #[arg(long)]
    format: Option<String>,
    #[command(flatten)]
    net: NetArgs,
}

#[derive(Args, Debug)]
struct LkArgs {
    #[arg(long)]
    frame0: Option<PathBuf>,
    #[arg(long)]
    frame1: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    radius: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    ridge: Option<f64>,
}

#[derive(Args, Debug)]
struct InitArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Input resolution, which sizes the positional table.
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    #[command(flatten)]
    net: NetArgs,
}

#[derive(Args, Debug)]
struct VizArgs {
    #[arg(long)]
    flow: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Magnitude mapped to full saturation; defaults to the field maximum.
    #[arg(long)]
    max_mag: Option<f32>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stflow: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut s = Settings::from_file(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => synth(&mut s, a),
        Command::Voxelize(a) => voxelize(&mut s, a),
        Command::Infer(a) => infer(&mut s, a),
        Command::Eval(a) => eval(&mut s, a),
        Command::Profile(a) => profile(&mut s, a),
        Command::Lk(a) => lk(&mut s, a),
        Command::InitWeights(a) => init(&mut s, a),
        Command::Viz(a) => viz(&mut s, a),
    }
}

/// Checks leftovers and prints the resolved configuration to stderr.
fn start(s: &Settings, name: &str) -> Result<()> {
    s.finish()?;
    eprint!("# stflow {name}\n{}", s.echo());
    Ok(())
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn synth(s: &mut Settings, a: SynthArgs) -> Result<()> {
    let d = SynthConfig::default();
    let velocity = s.get("velocity", a.velocity, List(d.velocity.to_vec()))?.exact::<2>("velocity")?;
    let cfg = SynthConfig {
        width: s.get("width", a.width, d.width)?,
        height: s.get("height", a.height, d.height)?,
        duration: s.get("duration", a.duration, d.duration)?,
        velocity,
        contrast_threshold: s.get("contrast", a.contrast, d.contrast_threshold)?,
        substeps: s.get("substeps", a.substeps, d.substeps)?,
        texture_seed: s.get("seed", a.seed, d.texture_seed)?,
        texture_cutoff: s.get("cutoff", a.cutoff, d.texture_cutoff)?,
    };
    let events = s.required("events", a.events.map(|p| path_str(&p)))?;
    let flow = s.required("flow", a.flow.map(|p| path_str(&p)))?;
    let frame0 = s.opt("frame0", a.frame0.map(|p| path_str(&p)))?;
    let frame1 = s.opt("frame1", a.frame1.map(|p| path_str(&p)))?;
    start(s, "synth")?;

    let out = synthesize_events(&cfg)?;
    if events.ends_with(".csv") {
        write_events_csv(&out.stream, &events)?;
    } else {
        write_events(&out.stream, &events)?;
    }
    out.flow.save(&flow)?;
    if let Some(p) = frame0 {
        out.frames.0.save_pfm(p)?;
    }
    if let Some(p) = frame1 {
        out.frames.1.save_pfm(p)?;
    }
    println!("events={}", out.stream.len());
    Ok(())
}

fn window(s: &mut Settings, a: WindowArgs, stream: &EventStream) -> Result<(usize, i64, i64)> {
    let bins = s.get("bins", a.bins, DEFAULT_BINS)?;
    let t_start = s.get("t-start", a.t_start, 0)?;
    let t_end = match s.opt("t-end", a.t_end)? {
        Some(t) => t,
        None => {
            let last = stream.events.last().map_or(t_start, |e| e.t);
            let t = last.max(t_start + 1);
            s.derived("t-end", t);
            t
        }
    };
    Ok((bins, t_start, t_end))
}

fn voxelize(s: &mut Settings, a: VoxelizeArgs) -> Result<()> {
    let events = s.required("events", a.events.map(|p| path_str(&p)))?;
    let out = s.required("out", a.out.map(|p| path_str(&p)))?;
    let stream = read_events(&events)?;
    let (bins, t0, t1) = window(s, a.window, &stream)?;
    start(s, "voxelize")?;
    let grid = build_voxel_grid(&stream, bins, t0, t1)?;
    grid.save(&out)?;
    println!("sum={}", grid.sum());
    Ok(())
}

fn parse_scan(v: &str) -> Result<ScanMode> {
    match v {
        "sequential" => Ok(ScanMode::Sequential),
        "parallel" => Ok(ScanMode::Parallel),
        _ => Err(stflow::Error::Config(format!("unknown scan mode {v:?}")).into()),
    }
}

fn scan_name(m: ScanMode) -> &'static str {
    match m {
        ScanMode::Sequential => "sequential",
        ScanMode::Parallel => "parallel",
    }
}

/// Applies network overrides on top of the defaults.
/// `fixed_bins` comes from an input that already determines the bin count.
fn network(
    s: &mut Settings,
    a: NetArgs,
    bins: Option<usize>,
    fixed_bins: Option<usize>,
    height: usize,
    width: usize,
) -> Result<NetworkConfig> {
    let channels = s.get("channels", a.channels, List(DEFAULT_CHANNELS.to_vec()))?.exact::<4>("channels")?;
    let dims = s.get("dims", a.dims, List(DEFAULT_DIMS.to_vec()))?.exact::<4>("dims")?;
    let m = s.get("temporal-patch", a.temporal_patch, List(DEFAULT_M.to_vec()))?.exact::<4>("temporal-patch")?;
    let mut cfg = NetworkConfig::with_widths(channels, dims);
    for (stage, m) in cfg.stages.iter_mut().zip(m) {
        *stage = Stage { m, ..*stage };
    }
    cfg.bins = match fixed_bins {
        Some(b) => b,
        None => s.get("bins", bins, cfg.bins)?,
    };
    cfg.backend = s.get("backend", a.backend, cfg.backend.name().to_string())?.parse()?;
    cfg.embedding = s.get("embedding", a.embedding, cfg.embedding.name().to_string())?.parse()?;
    cfg.n_blocks = s.get("n-blocks", a.n_blocks, cfg.n_blocks)?;
    cfg.state_dim = s.get("state-dim", a.state_dim, cfg.state_dim)?;
    cfg.scan_mode = parse_scan(&s.get("scan", a.scan, scan_name(cfg.scan_mode).to_string())?)?;
    (cfg.height, cfg.width) = (height, width);
    s.derived("height", height);
    s.derived("width", width);
    cfg.validate()?;
    Ok(cfg)
}

fn infer(s: &mut Settings, a: InferArgs) -> Result<()> {
    let events = s.opt("events", a.events.map(|p| path_str(&p)))?;
    let voxels = s.opt("voxels", a.voxels.map(|p| path_str(&p)))?;
    let grid = match (events, voxels) {
        (Some(e), None) => {
            let stream = read_events(&e)?;
            let (bins, t0, t1) = window(s, a.window, &stream)?;
            build_voxel_grid(&stream, bins, t0, t1)?
        }
        (None, Some(v)) => {
            let g = VoxelGrid::load(&v)?;
            s.derived("bins", g.bins);
            g
        }
        _ => return Err(CliError::Usage("give exactly one of --events or --voxels".into())),
    };
    let weights = s.required("weights", a.weights)?;
    let out = s.required("out", a.out.map(|p| path_str(&p)))?;
    let precision = s.get("precision", a.precision, 32)?;
    let cfg = network(s, a.net, None, Some(grid.bins), grid.height, grid.width)?;
    start(s, "infer")?;

    let container = load_weights(&weights, &cfg)?;
    let flow = match precision {
        32 => forward(&grid, &FlowNet::<f32>::from_container(&cfg, &container)?)?,
        64 => forward(&grid, &FlowNet::<f64>::from_container(&cfg, &container)?)?,
        p => return Err(CliError::Usage(format!("precision must be 32 or 64, got {p}"))),
    };
    flow.save(&out)?;
    Ok(())
}

fn eval(s: &mut Settings, a: EvalArgs) -> Result<()> {
    let pred = s.required("pred", a.pred.map(|p| path_str(&p)))?;
    let gt = s.required("gt", a.gt.map(|p| path_str(&p)))?;
    let n = s.get("n", a.n, List(vec![1, 3]))?;
    start(s, "eval")?;
    let m = evaluate_flow(&FlowField::load(&pred)?, &FlowField::load(&gt)?, &n.0)?;
    print!("{}", m.to_kv());
    Ok(())
}

fn profile(s: &mut Settings, a: ProfileArgs) -> Result<()> {
    let height = s.get("height", a.height, 480)?;
    let width = s.get("width", a.width, 640)?;
    let format = s.get("format", a.format, "table".to_string())?;
    let cfg = network(s, a.net, a.bins, None, height, width)?;
    start(s, "profile")?;
    let report = count_macs(&cfg, height, width)?;
    match format.as_str() {
        "table" => print!("{}", report.to_table()),
        "kv" => print!("{}", report.to_kv()),
        f => return Err(CliError::Usage(format!("unknown format {f:?}"))),
    }
    Ok(())
}

fn lk(s: &mut Settings, a: LkArgs) -> Result<()> {
    let f0 = s.required("frame0", a.frame0.map(|p| path_str(&p)))?;
    let f1 = s.required("frame1", a.frame1.map(|p| path_str(&p)))?;
    let out = s.required("out", a.out.map(|p| path_str(&p)))?;
    let radius = s.get("radius", a.radius, 7)?;
    let stride = s.get("stride", a.stride, 1)?;
    let ridge = s.get("ridge", a.ridge, DEFAULT_RIDGE)?;
    start(s, "lk")?;
    let flow = lk_flow(&Frame::load_pfm(&f0)?, &Frame::load_pfm(&f1)?, radius, stride, ridge)?;
    flow.save(&out)?;
    println!("valid={}", flow.valid_count());
    Ok(())
}

fn init(s: &mut Settings, a: InitArgs) -> Result<()> {
    let out = s.required("out", a.out.map(|p| path_str(&p)))?;
    let seed = s.get("seed", a.seed, 0)?;
    let height = s.get("height", a.height, 480)?;
    let width = s.get("width", a.width, 640)?;
    let cfg = network(s, a.net, a.bins, None, height, width)?;
    start(s, "init-weights")?;
    let c = init_weights(&cfg, seed)?;
    c.save(&out)?;
    println!("params={}", c.numel());
    Ok(())
}

fn viz(s: &mut Settings, a: VizArgs) -> Result<()> {
    let flow = s.required("flow", a.flow.map(|p| path_str(&p)))?;
    let out = s.required("out", a.out.map(|p| path_str(&p)))?;
    let max_mag = s.opt("max-mag", a.max_mag)?;
    start(s, "viz")?;
    let ppm = FlowField::load(&flow)?.to_ppm(max_mag);
    atomic_write(Path::new(&out), |w| w.write_all(&ppm))?;
    Ok(())
}
