use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use globalmap::io::{self, IoError, ReportFile};
use globalmap::metrics::{ap_stream, gap_map, EvalReport, ReportMetadata, DEFAULT_THRESHOLDS};
use globalmap::rasterizer::{clip_and_rasterize, GridSpec, TracedRegion};
use globalmap::simulator::{run_scenario, SimError};
use globalmap::{ClipWindow, Frame, GlobalMapState, Pose, VectorMap};

#[derive(Parser)]
#[command(name = "globalmap", version, about = "Build and evaluate vectorized global HD maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a synthetic scenario and write the artifact bundle.
    Simulate(SimulateArgs),
    /// Replay stored per-frame predictions through the map builder.
    Build(BuildArgs),
    /// Score a global map (GAP) and/or a frame stream (AP).
    Eval(EvalArgs),
    /// Render soft BEV masks of a global map around a pose.
    Rasterize(RasterizeArgs),
    /// Draw maps as SVG.
    Render(RenderArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the perception-noise seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BuildArgs {
    /// Directory of NNNN_pred.json frame files.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Global map to continue from.
    #[arg(long)]
    initial: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, requires = "gt")]
    pred: Option<PathBuf>,
    #[arg(long, requires = "pred")]
    gt: Option<PathBuf>,
    /// Restricts the ground truth to this traced region before GAP.
    #[arg(long, requires = "gt")]
    traced: Option<PathBuf>,
    /// Directory of NNNN_pred.json / NNNN_gt.json pairs, scored as AP.
    #[arg(long, required_unless_present = "pred")]
    frames: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS.to_vec())]
    thresholds: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RasterizeArgs {
    #[arg(long)]
    map: PathBuf,
    /// X,Y,YAW_DEG of the ego pose.
    #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
    pose: Pose,
    /// LENGTHxWIDTH in metres.
    #[arg(long, value_parser = parse_window, default_value = "60x30")]
    window: ClipWindow,
    #[arg(long, default_value_t = 0.3)]
    res: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long)]
    traced: Option<PathBuf>,
    /// Output directory, one mask file per channel.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    traced: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_pose(s: &str) -> Result<Pose, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [x, y, yaw] if v.iter().all(|c| c.is_finite()) => Ok(Pose::from_degrees(*x, *y, *yaw)),
        _ => Err("expected X,Y,YAW_DEG".into()),
    }
}

fn parse_window(s: &str) -> Result<ClipWindow, String> {
    let (l, w) = s.split_once(['x', 'X']).ok_or("expected LENGTHxWIDTH")?;
    let l: f64 = l.trim().parse().map_err(|e| format!("length: {e}"))?;
    let w: f64 = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    ClipWindow::new(l, w).map_err(|e| e.to_string())
}

/// Exit code 3 for bad input content, 1 for everything else.
enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn expect_global(map: &VectorMap, path: &Path) -> Result<(), Failure> {
    map.expect_frame(Frame::Global).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let mut cfg = io::load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let outcome = run_scenario(&cfg).map_err(|e| match e {
        SimError::InvalidConfig(_) => invalid(e),
        other => runtime(other),
    })?;
    let report = io::write_bundle(&args.out_dir, &cfg, &outcome)?;
    print_summary(&report.report);
    Ok(())
}

fn build(args: BuildArgs) -> Result<(), Failure> {
    let params = io::load_params(&args.params)?;
    let frames = io::load_frames(&args.frames, "pred")?;
    if frames.is_empty() {
        return Err(invalid(format!("{}: no *_pred.json frames", args.frames.display())));
    }
    let mut state = match &args.initial {
        Some(path) => {
            let map = io::load_map(path)?;
            expect_global(&map, path)?;
            GlobalMapState::from_map(map).map_err(invalid)?
        }
        None => GlobalMapState::new(),
    };
    // Frames without a merge flag are all merged.
    let flagged = frames.iter().any(|f| f.merge.is_some());
    for doc in &frames {
        if flagged && doc.merge != Some(true) {
            continue;
        }
        let pose = doc.pose.expect("load_frames checks poses");
        state.merge_step(&doc.map, &pose, &params).map_err(runtime)?;
    }
    io::save_map(state.map(), &args.out)?;
    eprintln!("built {} elements from {} frames", state.map().len(), frames.len());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let mut inputs = Vec::new();
    let ap = match &args.frames {
        Some(dir) => {
            let preds = io::load_frames(dir, "pred")?;
            let gts = io::load_frames(dir, "gt")?;
            inputs.push(dir.display().to_string());
            let preds: Vec<VectorMap> = preds.into_iter().map(|d| d.map).collect();
            let gts: Vec<VectorMap> = gts.into_iter().map(|d| d.map).collect();
            Some(ap_stream(&preds, &gts, &args.thresholds).map_err(invalid)?)
        }
        None => None,
    };
    let gap = match (&args.pred, &args.gt) {
        (Some(pred_path), Some(gt_path)) => {
            let pred = io::load_map(pred_path)?;
            let mut gt = io::load_map(gt_path)?;
            expect_global(&pred, pred_path)?;
            expect_global(&gt, gt_path)?;
            inputs.push(pred_path.display().to_string());
            inputs.push(gt_path.display().to_string());
            if let Some(tr_path) = &args.traced {
                let traced = io::load_traced(tr_path)?;
                gt = traced.clip_map(&gt).map_err(runtime)?;
                inputs.push(tr_path.display().to_string());
            }
            Some(gap_map(&pred, &gt, &args.thresholds).map_err(invalid)?)
        }
        _ => None,
    };
    let report = EvalReport { ap, gap, metadata: ReportMetadata::new(&args.thresholds, None) };
    print_summary(&report);
    io::save_report(&ReportFile::for_inputs("eval", inputs, report), &args.out)?;
    Ok(())
}

fn rasterize(args: RasterizeArgs) -> Result<(), Failure> {
    let map = io::load_map(&args.map)?;
    expect_global(&map, &args.map)?;
    let traced = match &args.traced {
        Some(p) => io::load_traced(p)?,
        None => TracedRegion::new(),
    };
    let spec = GridSpec::new(args.window, args.res).map_err(invalid)?;
    let masks = clip_and_rasterize(&map, &traced, &args.pose, &spec, args.tau).map_err(invalid)?;
    for mask in &masks {
        let path = args.out.join(format!("{}.mask", mask.category.name()));
        io::save_mask(mask, &spec, args.tau, &args.pose, &path)?;
    }
    eprintln!("wrote {} masks of {}x{} to {}", masks.len(), spec.rows(), spec.cols(), args.out.display());
    Ok(())
}

fn render(args: RenderArgs) -> Result<(), Failure> {
    let map = io::load_map(&args.map)?;
    expect_global(&map, &args.map)?;
    let gt = match &args.gt {
        Some(p) => {
            let gt = io::load_map(p)?;
            expect_global(&gt, p)?;
            Some(gt)
        }
        None => None,
    };
    let traced = args.traced.as_deref().map(io::load_traced).transpose()?;
    let svg = globalmap::svg::render_svg(&[&map], gt.as_ref(), traced.as_ref());
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(&args.out, svg).map_err(|e| runtime(format!("{}: {e}", args.out.display())))
}

fn print_summary(report: &EvalReport) {
    for (name, table) in [("AP", &report.ap), ("GAP", &report.gap)] {
        if let Some(t) = table {
            let cats: Vec<String> =
                t.categories.iter().map(|c| format!("{}={:.4}", c.category.short_name(), c.mean)).collect();
            println!("{name}: {} m{name}={:.4}", cats.join(" "), t.mean);
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Build(a) => build(a),
        Command::Eval(a) => eval(a),
        Command::Rasterize(a) => rasterize(a),
        Command::Render(a) => render(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
