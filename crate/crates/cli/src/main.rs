//! Command-line front end: run closed-loop scenario suites under ablation
//! configs, render per-frame SVG debug images, and dump extracted maneuvers.

use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use trajwrap::geometry::{Sketch, Waypoint};
use trajwrap::maneuver::{Maneuver, Scene};
use trajwrap::mpc::MpcParams;
use trajwrap::planners::IdmParams;
use trajwrap::sim::generators::{self, Family};
use trajwrap::sim::{
    compute_metrics, oracle_predict, run_closed_loop, Planner, Scenario, SimCycle, SimLog,
};
use trajwrap::vehicle::AvPose;
use trajwrap::{extract_maneuver, WrapperConfig, WrapperMode};

#[derive(Parser)]
#[command(name = "trajwrap", version, about = "Safety wrapper for motion-planner sketches")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run scenarios closed-loop and write a metrics CSV plus per-run logs
    Run(RunArgs),
    /// Render frames of a run log as SVG debug images
    Render(RenderArgs),
    /// Extract a maneuver from a sketch + scene and print it as JSON
    Extract(ExtractArgs),
}

#[derive(Args)]
struct RunArgs {
    /// `gen:<family>:<count>:<seed>` or a glob of scenario JSON files
    #[arg(long)]
    scenarios: String,
    /// idm | astar | synthetic:<kind> | fixture:<sketches.json>
    #[arg(long)]
    planner: String,
    /// wrapper mode, a comma-separated list, or `all` for the ablation sweep
    #[arg(long, default_value = "stay-behind")]
    config: String,
    /// JSON file with wrapper/MPC/IDM parameters (falls back to MW_PARAMS)
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// record wall-clock solve times (off by default so CSVs are byte-stable)
    #[arg(long)]
    timing: bool,
    /// skip writing per-run log JSON files
    #[arg(long)]
    no_logs: bool,
}

#[derive(Args)]
struct RenderArgs {
    /// run log JSON written by `run` (scenario + cycle log)
    #[arg(long)]
    log: PathBuf,
    /// frame index or half-open range `a..b`
    #[arg(long)]
    frames: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    /// sketch JSON: either a full sketch object or a bare waypoint array
    #[arg(long)]
    sketch: PathBuf,
    /// scene JSON (map raster + agent predictions)
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    mode: String,
    #[arg(long)]
    params: Option<PathBuf>,
}

/// One JSON file holding every tunable; all fields optional.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct ParamsFile {
    wrapper: WrapperConfig,
    mpc: MpcParams,
    idm: IdmParams,
    /// duration of generated scenarios, seconds
    duration: f64,
}

impl Default for ParamsFile {
    fn default() -> Self {
        ParamsFile {
            wrapper: WrapperConfig::default(),
            mpc: MpcParams::default(),
            idm: IdmParams::default(),
            duration: 20.0,
        }
    }
}

fn load_params(flag: &Option<PathBuf>) -> Result<ParamsFile> {
    let path = flag
        .clone()
        .or_else(|| std::env::var_os("MW_PARAMS").map(PathBuf::from));
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(&p)
                .with_context(|| format!("reading params file {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(ParamsFile::default()),
    }
}

/// Everything `render` needs in one file: the scenario and its cycle log.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunRecord {
    scenario: Scenario,
    log: SimLog,
}

fn mode_name(mode: WrapperMode) -> &'static str {
    match mode {
        WrapperMode::Baseline => "baseline",
        WrapperMode::Tracking => "tracking",
        WrapperMode::Map => "map",
        WrapperMode::StayBehind => "stay-behind",
        WrapperMode::StayAhead => "stay-ahead",
    }
}

fn parse_modes(s: &str) -> Result<Vec<WrapperMode>> {
    if s == "all" {
        return Ok(vec![
            WrapperMode::Baseline,
            WrapperMode::Tracking,
            WrapperMode::Map,
            WrapperMode::StayBehind,
            WrapperMode::StayAhead,
        ]);
    }
    s.split(',')
        .map(|tok| tok.trim().parse::<WrapperMode>().map_err(|e| anyhow!(e)))
        .collect()
}

fn parse_planner(s: &str, idm: &IdmParams) -> Result<Planner> {
    if s == "idm" {
        return Ok(Planner::Idm(*idm));
    }
    if s == "astar" {
        return Ok(Planner::Astar);
    }
    if let Some(kind) = s.strip_prefix("synthetic:") {
        return Ok(Planner::Synthetic(kind.parse().map_err(|e: String| anyhow!(e))?));
    }
    if let Some(path) = s.strip_prefix("fixture:") {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading sketch fixtures {path}"))?;
        let sketches: Vec<Sketch> = serde_json::from_str(&text)?;
        if sketches.is_empty() {
            bail!("fixture file {path} holds no sketches");
        }
        return Ok(Planner::Fixture(sketches));
    }
    bail!("unknown planner '{s}' (expected idm, astar, synthetic:<kind>, fixture:<file>)")
}

fn load_scenarios(source: &str, duration: f64) -> Result<Vec<Scenario>> {
    if let Some(genspec) = source.strip_prefix("gen:") {
        let parts: Vec<&str> = genspec.split(':').collect();
        let [family, count, seed] = parts[..] else {
            bail!("generator spec must be gen:<family>:<count>:<seed>");
        };
        let family: Family = family.parse().map_err(|e: String| anyhow!(e))?;
        let count: u64 = count.parse().context("scenario count")?;
        let seed: u64 = seed.parse().context("seed")?;
        return Ok((0..count)
            .map(|i| generators::generate(family, seed + i, duration))
            .collect());
    }
    let mut out = Vec::new();
    for entry in glob::glob(source).context("scenario glob")? {
        let path = entry?;
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        let s: Scenario =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        out.push(s);
    }
    if out.is_empty() {
        bail!("no scenarios matched '{source}'");
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

struct Row {
    scenario_id: String,
    mode: WrapperMode,
    outcome: Option<RowMetrics>,
}

struct RowMetrics {
    coll: usize,
    road: usize,
    accel: usize,
    dist: f64,
    runtime_ms_mean: f64,
    solver_fail_count: usize,
}

fn csv_f(v: f64) -> String {
    // 9 significant digits, frozen
    format!("{v:.8e}")
}

fn write_csv(rows: &[Row], modes: &[WrapperMode]) -> String {
    let mut out = String::from(
        "scenario_id,config,coll,road,accel,dist_m,runtime_ms_mean,solver_fail_count\n",
    );
    for r in rows {
        match &r.outcome {
            Some(m) => out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.scenario_id,
                mode_name(r.mode),
                m.coll,
                m.road,
                m.accel,
                csv_f(m.dist),
                csv_f(m.runtime_ms_mean),
                m.solver_fail_count
            )),
            None => out.push_str(&format!(
                "{},{},crash,crash,crash,crash,crash,crash\n",
                r.scenario_id,
                mode_name(r.mode)
            )),
        }
    }
    for &mode in modes {
        let ok: Vec<&RowMetrics> = rows
            .iter()
            .filter(|r| r.mode == mode)
            .filter_map(|r| r.outcome.as_ref())
            .collect();
        if ok.is_empty() {
            continue;
        }
        let n = ok.len() as f64;
        let mean = |f: &dyn Fn(&RowMetrics) -> f64| ok.iter().map(|m| f(m)).sum::<f64>() / n;
        out.push_str(&format!(
            "aggregate,{},{},{},{},{},{},{}\n",
            mode_name(mode),
            csv_f(mean(&|m| m.coll as f64)),
            csv_f(mean(&|m| m.road as f64)),
            csv_f(mean(&|m| m.accel as f64)),
            csv_f(mean(&|m| m.dist)),
            csv_f(mean(&|m| m.runtime_ms_mean)),
            csv_f(mean(&|m| m.solver_fail_count as f64)),
        ));
    }
    out
}

fn cmd_run(args: &RunArgs) -> Result<u8> {
    let params = load_params(&args.params)?;
    let modes = parse_modes(&args.config)?;
    let planner = parse_planner(&args.planner, &params.idm)?;
    let scenarios = load_scenarios(&args.scenarios, params.duration)?;
    std::fs::create_dir_all(&args.out)?;

    let tasks: Vec<(usize, WrapperMode)> = scenarios
        .iter()
        .enumerate()
        .flat_map(|(i, _)| modes.iter().map(move |&m| (i, m)))
        .collect();

    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<Option<Row>>> =
        Mutex::new((0..tasks.len()).map(|_| None).collect());
    let jobs = args.jobs.max(1);

    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(si, mode)) = tasks.get(i) else {
                    break;
                };
                let scenario = &scenarios[si];
                let config = WrapperConfig {
                    mode,
                    ..params.wrapper
                };
                let outcome = std::panic::catch_unwind(AssertUnwindSafe(|| {
                    let t0 = std::time::Instant::now();
                    let log = run_closed_loop(scenario, &planner, &config, &params.mpc);
                    let elapsed_ms = t0.elapsed().as_secs_f64() * 1e3;
                    let metrics = compute_metrics(&log, scenario, &params.mpc);
                    let runtime_ms_mean = if args.timing {
                        elapsed_ms / log.cycles.len().max(1) as f64
                    } else {
                        0.0
                    };
                    let m = RowMetrics {
                        coll: metrics.coll,
                        road: metrics.road,
                        accel: metrics.accel,
                        dist: metrics.dist,
                        runtime_ms_mean,
                        solver_fail_count: log.solver_fail_count,
                    };
                    (log, m)
                }));
                let outcome = match outcome {
                    Ok((log, m)) => {
                        if !args.no_logs {
                            let record = RunRecord {
                                scenario: scenario.clone(),
                                log,
                            };
                            let path = args
                                .out
                                .join(format!("{}--{}.log.json", scenario.id, mode_name(mode)));
                            if let Err(e) = std::fs::write(
                                &path,
                                serde_json::to_vec(&record).expect("log serializes"),
                            ) {
                                eprintln!("warning: could not write {}: {e}", path.display());
                            }
                        }
                        Some(m)
                    }
                    Err(_) => {
                        eprintln!(
                            "scenario {} crashed under config {}",
                            scenario.id,
                            mode_name(mode)
                        );
                        None
                    }
                };
                rows.lock().unwrap()[i] = Some(Row {
                    scenario_id: scenario.id.clone(),
                    mode,
                    outcome,
                });
            });
        }
    });

    let mut rows: Vec<Row> = rows
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("all tasks ran"))
        .collect();
    rows.sort_by(|a, b| {
        a.scenario_id
            .cmp(&b.scenario_id)
            .then(a.mode.cmp(&b.mode))
    });
    let crashed = rows.iter().any(|r| r.outcome.is_none());
    let csv = write_csv(&rows, &modes);
    let csv_path = args.out.join("metrics.csv");
    std::fs::write(&csv_path, &csv)?;
    print!("{csv}");
    Ok(if crashed { 2 } else { 0 })
}

// ---------------------------------------------------------------------------
// render

fn fmt_pt(x: f64, y: f64) -> String {
    format!("{x:.3},{y:.3}")
}

fn polyline(points: &[[f64; 2]], style: &str) -> String {
    if points.len() < 2 {
        return String::new();
    }
    let pts: Vec<String> = points.iter().map(|p| fmt_pt(p[0], p[1])).collect();
    format!("<polyline points=\"{}\" {} fill=\"none\"/>\n", pts.join(" "), style)
}

fn polygon(points: &[[f64; 2]], style: &str) -> String {
    if points.len() < 3 {
        return String::new();
    }
    let pts: Vec<String> = points.iter().map(|p| fmt_pt(p[0], p[1])).collect();
    format!("<polygon points=\"{}\" {}/>\n", pts.join(" "), style)
}

/// Sample a tube profile into Cartesian points along the baseline.
fn tube_polyline(
    maneuver: &Maneuver,
    line: trajwrap::maneuver::TubeLine,
    step: usize,
) -> Vec<[f64; 2]> {
    let b = &maneuver.baseline;
    let (lo, hi) = b.domain();
    let samples = 80;
    (0..=samples)
        .filter_map(|i| {
            let p = lo + (hi - lo) * i as f64 / samples as f64;
            let (n, _) = maneuver.tube.eval(step, line, p);
            let c = b.eval(p).ok()?;
            let t = b.eval_tangent(p).ok()?;
            Some([c[0] - t[1] * n, c[1] + t[0] * n])
        })
        .collect()
}

/// Short segment across the baseline at progress `p`.
fn cross_mark(maneuver: &Maneuver, p: f64, half: f64) -> Vec<[f64; 2]> {
    let b = &maneuver.baseline;
    let p = b.clamp_to_domain(p);
    let (Ok(c), Ok(t)) = (b.eval(p), b.eval_tangent(p)) else {
        return Vec::new();
    };
    vec![
        [c[0] + t[1] * half, c[1] - t[0] * half],
        [c[0] - t[1] * half, c[1] + t[0] * half],
    ]
}

fn render_frame(scenario: &Scenario, cycle: &SimCycle) -> String {
    let map = &scenario.map;
    let (w, h) = (
        map.width as f64 * map.resolution,
        map.height as f64 * map.resolution,
    );
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{:.3} {:.3} {:.3} {:.3}\">\n\
         <g transform=\"scale(1,-1)\">\n",
        map.origin[0],
        -(map.origin[1] + h),
        w,
        h
    );

    // drivable cells as horizontal runs
    svg.push_str("<g id=\"map\">\n");
    for iy in 0..map.height {
        let mut ix = 0;
        while ix < map.width {
            if map.drivable[iy * map.width + ix] {
                let start = ix;
                while ix < map.width && map.drivable[iy * map.width + ix] {
                    ix += 1;
                }
                svg.push_str(&format!(
                    "<rect x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"#e8e8e8\"/>\n",
                    map.origin[0] + start as f64 * map.resolution,
                    map.origin[1] + iy as f64 * map.resolution,
                    (ix - start) as f64 * map.resolution,
                    map.resolution
                ));
            } else {
                ix += 1;
            }
        }
    }
    svg.push_str("</g>\n");

    svg.push_str("<g id=\"baseline\">\n");
    if let Some(m) = &cycle.maneuver {
        let b = &m.baseline;
        let (lo, hi) = b.domain();
        let pts: Vec<[f64; 2]> = (0..=100)
            .filter_map(|i| b.eval(lo + (hi - lo) * i as f64 / 100.0).ok())
            .collect();
        svg.push_str(&polyline(&pts, "stroke=\"blue\" stroke-width=\"0.15\""));
    }
    svg.push_str("</g>\n");

    svg.push_str("<g id=\"tubes\">\n");
    if let Some(m) = &cycle.maneuver {
        use trajwrap::maneuver::TubeLine::*;
        for (line, style) in [
            (LeftHard, "stroke=\"green\" stroke-width=\"0.15\""),
            (RightHard, "stroke=\"green\" stroke-width=\"0.15\""),
            (
                LeftSoft,
                "stroke=\"green\" stroke-width=\"0.1\" stroke-dasharray=\"0.5,0.5\"",
            ),
            (
                RightSoft,
                "stroke=\"green\" stroke-width=\"0.1\" stroke-dasharray=\"0.5,0.5\"",
            ),
        ] {
            svg.push_str(&polyline(&tube_polyline(m, line, 0), style));
        }
    }
    svg.push_str("</g>\n");

    svg.push_str("<g id=\"bounds\">\n");
    if let Some(m) = &cycle.maneuver {
        for k in 0..=m.horizon_steps {
            let lo = cross_mark(m, m.bounds.p_lower[k], 2.0);
            let hi = cross_mark(m, m.bounds.p_upper[k], 2.0);
            svg.push_str(&polyline(&lo, "stroke=\"gold\" stroke-width=\"0.1\""));
            svg.push_str(&polyline(&hi, "stroke=\"red\" stroke-width=\"0.1\""));
        }
    }
    svg.push_str("</g>\n");

    svg.push_str("<g id=\"sketch\">\n");
    if let Some(s) = &cycle.sketch {
        let pts: Vec<[f64; 2]> = s.waypoints.iter().map(|w| [w.x, w.y]).collect();
        svg.push_str(&polyline(&pts, "stroke=\"gray\" stroke-width=\"0.12\""));
        for p in &pts {
            svg.push_str(&format!(
                "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"0.25\" fill=\"gray\"/>\n",
                p[0], p[1]
            ));
        }
    }
    svg.push_str("</g>\n");

    svg.push_str("<g id=\"predictions\">\n");
    let horizon = cycle.maneuver.as_ref().map_or(16, |m| m.horizon_steps);
    let dt = cycle.maneuver.as_ref().map_or(0.5, |m| m.dt);
    for pred in oracle_predict(scenario, cycle.t, horizon, dt) {
        for (k, hull) in pred.hulls.iter().enumerate().step_by(4) {
            let opacity = 0.6 * (1.0 - k as f64 / (horizon + 1) as f64) + 0.1;
            svg.push_str(&polygon(
                hull,
                &format!("fill=\"none\" stroke=\"darkgreen\" stroke-width=\"0.1\" opacity=\"{opacity:.2}\""),
            ));
        }
    }
    svg.push_str("</g>\n");

    svg.push_str("<g id=\"trajectory\">\n");
    if let Some(sol) = &cycle.solution {
        let pts: Vec<[f64; 2]> = sol.cartesian.iter().map(|c| [c[0], c[1]]).collect();
        svg.push_str(&polyline(&pts, "stroke=\"red\" stroke-width=\"0.2\""));
    }
    svg.push_str(&format!(
        "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"0.4\" fill=\"red\"/>\n",
        cycle.av.x, cycle.av.y
    ));
    svg.push_str("</g>\n");

    svg.push_str("</g>\n</svg>\n");
    svg
}

fn parse_frames(s: &str) -> Result<std::ops::Range<usize>> {
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.parse().context("frame range start")?;
        let b: usize = b.parse().context("frame range end")?;
        Ok(a..b)
    } else {
        let k: usize = s.parse().context("frame index")?;
        Ok(k..k + 1)
    }
}

fn cmd_render(args: &RenderArgs) -> Result<u8> {
    let text = std::fs::read_to_string(&args.log)
        .with_context(|| format!("reading {}", args.log.display()))?;
    let record: RunRecord = serde_json::from_str(&text)?;
    let frames = parse_frames(&args.frames)?;
    std::fs::create_dir_all(&args.out)?;
    for f in frames {
        let cycle = record
            .log
            .cycles
            .get(f)
            .ok_or_else(|| anyhow!("frame {f} not in log ({} cycles)", record.log.cycles.len()))?;
        let svg = render_frame(&record.scenario, cycle);
        std::fs::write(args.out.join(format!("frame-{f:05}.svg")), svg)?;
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// extract

fn load_sketch(path: &Path) -> Result<Sketch> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(s) = serde_json::from_str::<Sketch>(&text) {
        return Ok(s);
    }
    let waypoints: Vec<Waypoint> = serde_json::from_str(&text)
        .with_context(|| format!("{} is neither a sketch nor a waypoint array", path.display()))?;
    Sketch::new(waypoints).map_err(|e| anyhow!(e))
}

/// A pose at the sketch start: heading from the first segment, speed from
/// timestamps when present.
fn pose_from_sketch(sketch: &Sketch) -> AvPose {
    let w0 = &sketch.waypoints[0];
    let w1 = &sketch.waypoints[1];
    let heading = (w1.y - w0.y).atan2(w1.x - w0.x);
    let v = match (w0.t, w1.t) {
        (Some(t0), Some(t1)) if t1 > t0 => {
            ((w1.x - w0.x).hypot(w1.y - w0.y)) / (t1 - t0)
        }
        _ => 0.0,
    };
    AvPose {
        x: w0.x,
        y: w0.y,
        heading,
        v,
        a: 0.0,
        steering: 0.0,
    }
}

fn cmd_extract(args: &ExtractArgs) -> Result<u8> {
    let params = load_params(&args.params)?;
    let sketch = load_sketch(&args.sketch)?;
    let text = std::fs::read_to_string(&args.scene)
        .with_context(|| format!("reading {}", args.scene.display()))?;
    let scene: Scene = serde_json::from_str(&text)?;
    let mode: WrapperMode = args.mode.parse().map_err(|e: String| anyhow!(e))?;
    let config = WrapperConfig {
        mode,
        ..params.wrapper
    };
    let av = pose_from_sketch(&sketch);
    let maneuver = extract_maneuver(&sketch, &scene, &av, &params.mpc.vehicle, &config)
        .map_err(|e| anyhow!("maneuver extraction failed: {e}"))?;
    println!("{}", serde_json::to_string_pretty(&maneuver)?);
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Render(args) => cmd_render(args),
        Cmd::Extract(args) => cmd_extract(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
