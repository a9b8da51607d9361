//! Command-line surface of the `mcfs` binary.

use crate::geometry::{check_noncollapsed, check_two_convex, GeometryError, ProfileSurface};
use crate::io::{self, IoError};
use crate::isotopy::{self, IsotopyError, IsotopyTrace, MonotonicityReport};
use crate::scenario::{self, ScenarioError};
use crate::skeleton::{self, Skeleton, SkeletonError};
use crate::surgery::{self, HistoryEvent, SurgeryError};
use clap::{Parser, Subcommand};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Parser, Debug)]
#[command(name = "mcfs", version, about = "Axisymmetric mean curvature flow with surgery")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run flow with surgery and build the isotopy trace for a scenario.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the finiteness bound and the cube-count cap.
    Bound { n: usize, d: f64, c: f64, alpha: f64 },
    /// Check that a trace is monotone; exits with 1 on failure.
    CheckMonotone { trace: PathBuf },
    /// Print the canonical code of a skeleton on the cover for `n d C alpha`.
    Canonicalize { skeleton: PathBuf, n: usize, d: f64, c: f64, alpha: f64 },
    /// Print topology, convexity and non-collapsedness of a surface.
    Classify {
        surface: PathBuf,
        /// Non-collapsing constant to test against.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Surgery(#[from] SurgeryError),
    #[error(transparent)]
    Isotopy(#[from] IsotopyError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|source| IoError::File { path: path.display().to_string(), source }.into())
}

fn verbose() -> bool {
    std::env::var_os("MCFS_VERBOSE").is_some_and(|v| v != "0")
}

#[derive(Serialize)]
struct RunSummary {
    surgeries: usize,
    discards: Vec<(u64, surgery::Topology, surgery::DiscardReason)>,
    frames: usize,
    trace_frames: usize,
    terminals: Vec<isotopy::Terminal>,
    monotonicity: MonotonicityReport,
}

fn diagnostics_csv(history: &surgery::SurgeryHistory) -> Result<String, CliError> {
    let mut out = String::from("t,component_id,area,volume,max_h,two_convexity_margin\n");
    for f in &history.frames {
        let conv = check_two_convex(&f.surface)?;
        let (_, h) = f.surface.max_mean_curvature()?;
        out.push_str(&format!(
            "{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            f.t,
            f.component_id,
            f.surface.area(),
            f.surface.enclosed_volume(),
            h,
            conv.min_lambda1_plus_lambda2
        ));
    }
    Ok(out)
}

/// Execute `run` and write every output file into `out`.
pub fn run_scenario(scenario_path: &Path, out: &Path) -> Result<MonotonicityReport, CliError> {
    let text = std::fs::read_to_string(scenario_path)
        .map_err(|source| IoError::File { path: scenario_path.display().to_string(), source })?;
    let sc = scenario::parse_scenario(&text)?;
    let state = sc.flow_state()?;
    if verbose() {
        eprintln!("running {}", scenario_path.display());
    }
    let history = surgery::surgery_flow(&state, &sc.surgery_params(), &sc.flow_options())?;
    let trace = isotopy::build_isotopy(&history, sc.isotopy_params())?;
    let sk = skeleton::extract_skeleton(&history, &trace)?;
    let report = isotopy::check_monotone(&trace);
    std::fs::create_dir_all(out)?;
    write_file(&out.join("scenario.toml"), &scenario::to_toml(&sc))?;
    write_file(&out.join("history.json"), &io::to_document("history", &history))?;
    write_file(&out.join("trace.json"), &io::to_document("trace", &trace))?;
    write_file(&out.join("skeleton.json"), &io::to_document("skeleton", &sk))?;
    write_file(&out.join("frames.csv"), &io::history_frames_csv(&history))?;
    write_file(&out.join("trace_frames.csv"), &io::trace_frames_csv(&trace))?;
    write_file(&out.join("diagnostics.csv"), &diagnostics_csv(&history)?)?;
    let summary = RunSummary {
        surgeries: history.surgery_count,
        discards: history.discards().into_iter().map(|(id, c, r)| (id, c.topology, r)).collect(),
        frames: history.frames.len(),
        trace_frames: trace.frames.len(),
        terminals: trace.terminals.clone(),
        monotonicity: report.clone(),
    };
    write_file(&out.join("summary.json"), &io::to_document("summary", &summary))?;
    if verbose() {
        let events = history.events.iter().filter(|e| !matches!(e, HistoryEvent::FlowSegment { .. })).count();
        eprintln!("{events} surgery and discard events");
    }
    Ok(report)
}

/// Run a parsed command, writing its report to `stdout`; returns the exit code.
pub fn execute(cli: &Cli, stdout: &mut impl Write) -> Result<i32, CliError> {
    match &cli.command {
        Command::Run { scenario, out } => {
            let report = run_scenario(scenario, out)?;
            writeln!(stdout, "wrote {}", out.display())?;
            writeln!(stdout, "monotone: {}", report.pass)?;
            Ok(if report.pass { 0 } else { 1 })
        }
        Command::Bound { n, d, c, alpha } => {
            let cover = skeleton::make_cover(*n, *d, *c, *alpha)?;
            writeln!(stdout, "count_bound {}", skeleton::count_bound(*n, *d, *c, *alpha))?;
            writeln!(stdout, "cube_cap {}", skeleton::cube_cap(*n, *d, *c, *alpha))?;
            writeln!(stdout, "cube_count {}", cover.cube_count)?;
            writeln!(stdout, "ell {:e}", cover.ell)?;
            Ok(0)
        }
        Command::CheckMonotone { trace } => {
            let trace: IsotopyTrace = io::read_document("trace", trace)?;
            let report = isotopy::check_monotone(&trace);
            stdout.write_all(serde_json::to_string_pretty(&report).expect("report serializes").as_bytes())?;
            writeln!(stdout)?;
            Ok(if report.pass { 0 } else { 1 })
        }
        Command::Canonicalize { skeleton: path, n, d, c, alpha } => {
            let sk: Skeleton = io::read_document("skeleton", path)?;
            let cover = skeleton::make_cover(*n, *d, *c, *alpha)?;
            let (code, _) = skeleton::canonicalize(&sk, &cover)?;
            stdout.write_all(io::to_document("code", &code).as_bytes())?;
            Ok(0)
        }
        Command::Classify { surface, alpha } => {
            let s: ProfileSurface = io::read_document("surface", surface)?;
            let classification = surgery::classify(&s)?;
            let convexity = check_two_convex(&s)?;
            let noncollapsed = check_noncollapsed(&s, *alpha)?;
            #[derive(Serialize)]
            struct Report {
                classification: surgery::Classification,
                convexity: crate::geometry::ConvexityReport,
                noncollapsedness: crate::geometry::NoncollapsednessReport,
            }
            let r = Report { classification, convexity, noncollapsedness: noncollapsed };
            stdout.write_all(serde_json::to_string_pretty(&r).expect("report serializes").as_bytes())?;
            writeln!(stdout)?;
            Ok(if convexity.is_two_convex && noncollapsed.pass { 0 } else { 1 })
        }
    }
}
