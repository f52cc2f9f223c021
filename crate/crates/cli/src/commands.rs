use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use convflow::io::{
    colorize as render, list_flow_files, load_sequence, read_flo, read_flow, read_trace, save_png, speed_quantile,
    trace_records, write_flow, write_frames, write_trace, FrameSet, Window,
};
use convflow::{
    check_linear_independence, endpoint_error, scenario, DataWeighting, FlowParams, FlowProblem, IterationTrace,
    SpaceTimeGrid, VectorField,
};
use log::{info, warn};
use serde::Serialize;

use crate::manifest::{Manifest, Params, FLOW_UNITS, MANIFEST};
use crate::{ColorizeArgs, EstimateArgs, EvaluateArgs, FrameFormat, Preset, SynthArgs, TraceArgs, Weighting};

pub const TRACE_FILE: &str = "trace.txt";

fn parse_window(text: &str) -> Result<Window> {
    let bad = || anyhow!("--window: expected LENGTH or OFFSET:LENGTH, got `{text}`");
    let (offset, length) = match text.split_once(':') {
        Some((o, l)) => (o.trim().parse().map_err(|_| bad())?, l.trim().parse().map_err(|_| bad())?),
        None => (0, text.trim().parse().map_err(|_| bad())?),
    };
    if length < 2 {
        bail!("--window: at least 2 frames are needed, got {length}");
    }
    Ok(Window { offset, length })
}

fn positive(flag: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        bail!("{flag} must be positive, got {v}")
    }
}

pub fn flow_params(args: &EstimateArgs) -> Result<FlowParams> {
    let mut p = match args.preset {
        Some(Preset::Traffic) => FlowParams::traffic(),
        Some(Preset::Passat) => FlowParams::passat(),
        None => {
            let d = FlowParams::traffic();
            let alpha = args.alpha.unwrap_or(d.alpha1);
            if !(alpha >= 0.0 && alpha.is_finite()) {
                bail!("--alpha must be non-negative, got {alpha}");
            }
            FlowParams::new(alpha, positive("--beta", args.beta.unwrap_or(d.beta1))?)
        }
    };
    if let Some(b0) = args.beta0 {
        p.beta0 = positive("--beta0", b0)?;
    }
    p.epsilon = positive("--eps", args.eps)?;
    p.stabilization_tol = positive("--tol", args.tol)?;
    p.solver.rel_tolerance = positive("--cg-tol", args.cg_tol)?;
    if args.max_iters == 0 {
        bail!("--max-iters must be at least 1");
    }
    p.max_outer_iterations = args.max_iters;
    p.quadrature = usize::from(args.quadrature);
    p.weighting = match args.weighting {
        Weighting::Gradient => DataWeighting::Gradient,
        Weighting::Unit => DataWeighting::Unit,
    };
    p.validate()?;
    Ok(p)
}

fn write_trace_file(dir: &Path, trace: &IterationTrace) -> Result<PathBuf> {
    let path = dir.join(TRACE_FILE);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    write_trace(&mut out, &trace_records(trace))?;
    out.flush()?;
    Ok(path)
}

/// Velocities are stored in pixels per frame.
fn file_scale(grid: &SpaceTimeGrid) -> f64 {
    grid.dt() / grid.spacing()
}

fn write_pngs(u: &VectorField, dir: &Path, u_max: Option<f64>) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let u_max = u_max.unwrap_or_else(|| speed_quantile(u, 0.99));
    for k in 0..u.grid().frames() {
        save_png(&render(u, k, Some(u_max)), &dir.join(format!("flow_{k:04}.png")))?;
    }
    Ok(())
}

pub fn estimate(args: &EstimateArgs) -> Result<()> {
    if args.dt_factor == 0 {
        bail!("--dt-factor must be at least 1");
    }
    let params = flow_params(args)?;
    let window = parse_window(&args.window)?;
    let dt = 1.0 / f64::from(args.dt_factor);
    let set = FrameSet::scan(&args.frames, args.pattern.as_deref())?;
    let inputs: Vec<String> = set
        .window(window)?
        .iter()
        .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    let seq = load_sequence(&args.frames, args.pattern.as_deref(), window, dt)?;
    let grid = *seq.grid();
    info!("{} frames of {}×{} from {}", grid.frames(), grid.height(), grid.width(), args.frames.display());

    let problem = FlowProblem::new(&seq, &params)?;
    let overlap = check_linear_independence(problem.derivatives());
    if overlap > 0.99 {
        warn!("image gradients are nearly parallel (cosine {overlap:.4}); the flow is poorly determined");
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let (u, trace) = match problem.run() {
        Ok(result) => result,
        Err(failure) => {
            write_trace_file(&args.out, &failure.trace)?;
            return Err(failure.into());
        }
    };
    if !trace.stabilized && params.alpha1 > 0.0 {
        warn!("step norm did not fall below --tol {} within {} iterations", params.stabilization_tol, params.max_outer_iterations);
    }

    write_flow(&u, &args.out, file_scale(&grid))?;
    write_trace_file(&args.out, &trace)?;
    if args.png {
        write_pngs(&u, &args.out.join("color"), None)?;
    }
    let mut manifest = Manifest::new(&grid);
    manifest.params = Some(Params {
        alpha1: params.alpha1,
        beta1: params.beta1,
        beta0: params.beta0,
        epsilon: params.epsilon,
        max_outer_iterations: params.max_outer_iterations,
        stabilization_tol: params.stabilization_tol,
        cg_tolerance: params.solver.rel_tolerance,
        quadrature: params.quadrature,
        weighting: format!("{:?}", params.weighting).to_lowercase(),
    });
    manifest.inputs = inputs;
    manifest.write(&args.out)?;
    info!("wrote {} flow frames to {}", grid.frames(), args.out.display());
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let pair = scenario(&args.scenario)?;
    let grid = *pair.sequence.grid();
    let ext = match args.format {
        FrameFormat::Png => "png",
        FrameFormat::Pgm => "pgm",
    };
    write_frames(&pair.sequence, &args.out.join("frames"), ext)?;
    let truth = args.out.join("truth");
    write_flow(&pair.flow, &truth, file_scale(&grid))?;
    let mut manifest = Manifest::new(&grid);
    manifest.scenario = Some(args.scenario.clone());
    manifest.write(&args.out)?;
    manifest.write(&truth)?;
    info!("wrote {} to {}", args.scenario, args.out.display());
    Ok(())
}

/// Flow files of `dir` on a grid with unit frame spacing, so values stay in
/// pixels per frame.
fn load_flow_dir(dir: &Path, flag: &str) -> Result<VectorField> {
    let files = list_flow_files(dir).with_context(|| format!("{flag}: cannot list {}", dir.display()))?;
    let first = files.first().ok_or_else(|| anyhow!("{flag}: no .flo files in {}", dir.display()))?;
    let head = read_flo(first)?;
    let grid = SpaceTimeGrid::new(files.len(), head.height, head.width, 1.0)
        .with_context(|| format!("{flag}: {} is not a valid flow sequence", dir.display()))?;
    if dir.join(MANIFEST).exists() {
        let m = Manifest::read(dir)?;
        if (m.frames, m.height, m.width) != (grid.frames(), grid.height(), grid.width()) {
            bail!("{flag}: {} disagrees with the flow files in {}", MANIFEST, dir.display());
        }
        if m.units != FLOW_UNITS {
            bail!("{flag}: flow units `{}` are not supported", m.units);
        }
    }
    Ok(read_flow(&files, &grid, 1.0)?)
}

#[derive(Debug, Serialize)]
struct Stats {
    mean_endpoint: f64,
    max_endpoint: f64,
    mean_angular_deg: f64,
    count: usize,
    mask: String,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let estimate = load_flow_dir(&args.estimate, "estimate")?;
    let truth = load_flow_dir(&args.truth, "truth")?;
    let (eg, tg) = (estimate.grid(), truth.grid());
    if (eg.frames(), eg.height(), eg.width()) != (tg.frames(), tg.height(), tg.width()) {
        bail!(
            "estimate is {}×{}×{} but truth is {}×{}×{}",
            eg.frames(),
            eg.height(),
            eg.width(),
            tg.frames(),
            tg.height(),
            tg.width()
        );
    }
    let (mask, label) = match &args.scenario {
        Some(name) => {
            let pair = scenario(name).with_context(|| format!("--scenario {name}"))?;
            let mask = pair.interior_mask();
            if mask.len() != eg.node_count() {
                bail!("--scenario {name}: grid does not match the flow files");
            }
            (mask, format!("{name} object interiors"))
        }
        None => (vec![true; eg.node_count()], "all nodes".to_string()),
    };
    let s = endpoint_error(&estimate, &truth, &mask)?;
    let stats = Stats {
        mean_endpoint: s.mean_endpoint,
        max_endpoint: s.max_endpoint,
        mean_angular_deg: s.mean_angular,
        count: s.count,
        mask: label,
    };
    println!(
        "mean EE {:.6} px/frame, max EE {:.6}, mean AE {:.4}°, {} nodes ({})",
        stats.mean_endpoint, stats.max_endpoint, stats.mean_angular_deg, stats.count, stats.mask
    );
    if let Some(path) = &args.out {
        fs::write(path, serde_json::to_string_pretty(&stats)? + "\n").with_context(|| format!("--out: writing {}", path.display()))?;
    }
    Ok(())
}

pub fn colorize(args: &ColorizeArgs) -> Result<()> {
    if let Some(m) = args.max {
        positive("--max", m)?;
    }
    let u = load_flow_dir(&args.flow, "flow")?;
    write_pngs(&u, &args.out, args.max)?;
    info!("wrote {} images to {}", u.grid().frames(), args.out.display());
    Ok(())
}

pub fn trace(args: &TraceArgs) -> Result<()> {
    let file = File::open(&args.file).with_context(|| format!("opening {}", args.file.display()))?;
    let records = read_trace(BufReader::new(file)).map_err(|e| anyhow!("{}: {e}", args.file.display()))?;
    println!("{:>3} {:>14} {:>14} {:>14} {:>14} {:>11} {:>6}", "k", "data", "convective", "isotropic", "total", "step", "cg");
    for r in &records {
        println!(
            "{:>3} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e} {:>11.3e} {:>6}",
            r.k, r.data, r.convective, r.isotropic, r.total, r.step_norm, r.cg_iters
        );
    }
    Ok(())
}
