//! Batch front end: read a JSON system description, run the check,
//! synthesis and verification pipeline, and write `report.json` plus CSV
//! grids.
//!
//! Exit codes: 0 invariant, 1 not invariant, 2 inconclusive at singular
//! points, 3 input error.

mod input;
mod output;

pub use input::{
    ControlInput, DistributionInput, GridInput, Prepared, SimulationInput, Steps, SystemDescription,
    Tolerances,
};
pub use output::{fmt_f64, to_json_string, write_csv, write_json};

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::invariance::{check_local_invariance, FieldId, Verdict, DEFAULT_TOLERANCE};
use crate::synthesis::{synthesize, ClosedLoop, SynthesisOptions, SynthesisSummary, DEFAULT_QUADRATURE_INTERVALS};
use crate::verify::{
    bracket_residuals_at, leaf_invariance_test, BracketResiduals, PiecewiseConstant, Trajectory,
    DEFAULT_FD_STEP, DEFAULT_ODE_STEP,
};

pub const REPORT_FILE: &str = "report.json";
pub const ALPHA_FILE: &str = "feedback_alpha.csv";
pub const BETA_FILE: &str = "feedback_beta.csv";
pub const TRAJECTORY_FILE: &str = "trajectories.csv";

pub const DEFAULT_RESIDUAL_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_HORIZON: f64 = 1.0;
/// Numbers reproduced by `reverify` must agree to this absolute tolerance.
pub const REVERIFY_TOLERANCE: f64 = 1e-12;

pub const EXIT_INPUT_ERROR: i32 = 3;

/// Exit status of a verdict.
pub fn exit_code(verdict: Verdict) -> i32 {
    match verdict {
        Verdict::Invariant => 0,
        Verdict::NotInvariant => 1,
        Verdict::InconclusiveSingular => 2,
    }
}

/// Command-line values that take precedence over the description.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub grid: Option<usize>,
    pub tol: Option<f64>,
    pub fd_step: Option<f64>,
    pub ode_step: Option<f64>,
    pub simulate: bool,
    pub seed: Option<u64>,
}

/// Every knob of a run, recorded in the report.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunSettings {
    pub grid: Vec<usize>,
    pub tolerance: f64,
    pub residual_tolerance: f64,
    pub fd_step: f64,
    pub ode_step: f64,
    pub quadrature_intervals: usize,
    /// One-based leaf axes.
    pub axis_order: Vec<usize>,
    pub simulate: bool,
    pub seed: u64,
    pub horizon: f64,
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Input(format!("{name} must be positive and finite, got {v}")))
    }
}

impl RunSettings {
    pub fn resolve(prepared: &Prepared, o: &Overrides) -> Result<Self> {
        let d = &prepared.description;
        let tol = d.tolerances.clone().unwrap_or_default();
        let steps = d.steps.clone().unwrap_or_default();
        let horizon = d
            .simulation
            .as_ref()
            .and_then(|s| s.horizon)
            .unwrap_or(DEFAULT_HORIZON);
        Ok(RunSettings {
            grid: d.grid_counts(o.grid)?,
            tolerance: positive("invariance tolerance", o.tol.or(tol.invariance).unwrap_or(DEFAULT_TOLERANCE))?,
            residual_tolerance: positive(
                "residual tolerance",
                tol.residual.unwrap_or(DEFAULT_RESIDUAL_TOLERANCE),
            )?,
            fd_step: positive("finite-difference step", o.fd_step.or(steps.fd).unwrap_or(DEFAULT_FD_STEP))?,
            ode_step: positive("integrator step", o.ode_step.or(steps.ode).unwrap_or(DEFAULT_ODE_STEP))?,
            quadrature_intervals: steps
                .quadrature_intervals
                .unwrap_or(DEFAULT_QUADRATURE_INTERVALS)
                .max(2),
            axis_order: prepared.axis_order().iter().map(|a| a + 1).collect(),
            simulate: o.simulate,
            seed: o.seed.unwrap_or(0),
            horizon: positive("simulation horizon", horizon)?,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SystemInfo {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    /// Chart coordinates differ from the input coordinates.
    pub flattened: bool,
    /// Columns span `D` first; input coordinates are `x = T y`.
    pub flattening_matrix: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct OffenseOut {
    pub node: usize,
    pub point: Vec<f64>,
    /// `"drift"` or `"g1"`, `"g2"`, ...
    pub field: String,
    /// One-based leaf axis.
    pub axis: usize,
    pub residual: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct InvarianceOut {
    pub tolerance: f64,
    pub worst_drift_residual: f64,
    pub worst_control_residual: f64,
    pub offending_nodes: Vec<usize>,
    pub offending: Vec<OffenseOut>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SingularOut {
    pub node: usize,
    pub point: Vec<f64>,
    pub rank_g: usize,
    pub rank_quotient: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RanksOut {
    pub max_rank_g: usize,
    pub max_rank_quotient: usize,
    pub g_regular: bool,
    pub quotient_regular: bool,
    /// Nodes where `(G+D)/D` drops rank.
    pub singular: Vec<SingularOut>,
    pub rank_g: Vec<usize>,
    pub rank_d_plus_g: Vec<usize>,
    pub rank_quotient: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SynthesisOut {
    pub summary: Option<SynthesisSummary>,
    pub condition_numbers: Vec<f64>,
    pub alpha_file: Option<String>,
    pub beta_file: Option<String>,
    /// Closed forms, when available.
    pub expressions: Option<Value>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LeafOut {
    pub x0: Vec<f64>,
    pub x0_prime: Vec<f64>,
    pub open_loop_deviation: f64,
    pub closed_loop_deviation: f64,
    pub truncated: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerificationOut {
    pub residuals: BracketResiduals,
    pub max_residual: f64,
    pub residual_tolerance: f64,
    pub passed: bool,
    pub nodes_checked: usize,
    pub leaf_tests: Vec<LeafOut>,
    pub control: Option<PiecewiseConstant>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub settings: RunSettings,
    pub verdict: Verdict,
    pub exit_code: i32,
    pub system: SystemInfo,
    pub invariance: InvarianceOut,
    pub ranks: RanksOut,
    pub synthesis: Option<SynthesisOut>,
    pub verification: Option<VerificationOut>,
    pub advisories: Vec<String>,
}

/// A finished run: the report and the tables behind the CSV files.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: Report,
    pub alpha_rows: Vec<Vec<f64>>,
    pub beta_rows: Vec<Vec<f64>>,
    /// `(system, pair, start, trajectory)`
    pub trajectories: Vec<(String, usize, String, Trajectory)>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        self.report.exit_code
    }
}

fn field_name(f: FieldId) -> String {
    match f {
        FieldId::Drift => "drift".into(),
        FieldId::Control(i) => format!("g{}", i + 1),
    }
}

fn leaf_pairs(prepared: &Prepared, settings: &RunSettings) -> Result<Vec<[Vec<f64>; 2]>> {
    let chart = prepared.flat.chart();
    let fl = &prepared.flattening;
    if let Some(pairs) = prepared.description.simulation.as_ref().and_then(|s| s.pairs.clone()) {
        return Ok(pairs
            .into_iter()
            .map(|[a, b]| [fl.to_chart(&a), fl.to_chart(&b)])
            .collect());
    }
    let mut rng = StdRng::seed_from_u64(settings.seed);
    let x0 = chart.base_point().to_vec();
    let mut x1 = x0.clone();
    for i in 0..chart.k() {
        let half = 0.5 * (chart.upper()[i] - chart.lower()[i]);
        let v = x0[i] + rng.random_range(-0.3..=0.3) * half;
        x1[i] = v.clamp(chart.lower()[i], chart.upper()[i]);
    }
    Ok(vec![[x0, x1]])
}

fn control_signal(prepared: &Prepared, settings: &RunSettings) -> Result<PiecewiseConstant> {
    let m = prepared.flat.m();
    match prepared.description.simulation.as_ref().and_then(|s| s.control.clone()) {
        None => Ok(PiecewiseConstant::zero(m)),
        Some(ControlInput::Named(s)) if s == "zero" => Ok(PiecewiseConstant::zero(m)),
        Some(ControlInput::Named(s)) if s == "random" => Ok(PiecewiseConstant::random(
            m,
            10,
            settings.horizon / 10.0,
            1.0,
            settings.seed,
        )),
        Some(ControlInput::Named(s)) => Err(Error::Input(format!(
            "field `simulation.control`: unknown signal `{s}`; use \"zero\", \"random\" or a vector"
        ))),
        Some(ControlInput::Constant(u)) if u.len() == m => Ok(PiecewiseConstant::constant(u)),
        Some(ControlInput::Constant(u)) => Err(Error::Input(format!(
            "field `simulation.control`: expected {m} values, found {}",
            u.len()
        ))),
    }
}

/// Run the full pipeline without touching the file system.
pub fn execute(prepared: &Prepared, settings: &RunSettings) -> Result<Outcome> {
    let system = &prepared.flat;
    let fl = &prepared.flattening;
    let grid = prepared.grid(&settings.grid)?;
    let chart = system.chart();
    let (n, k, m) = (chart.n(), chart.k(), system.m());
    let original_point = |q: &[f64]| fl.to_original(q);

    let check = check_local_invariance(system, &grid, settings.tolerance)?;
    let verdict = check.verdict;
    let invariance = InvarianceOut {
        tolerance: check.tolerance,
        worst_drift_residual: check.worst_drift_residual,
        worst_control_residual: check.worst_control_residual,
        offending_nodes: check.offending_nodes(),
        offending: check
            .offending
            .iter()
            .map(|o| OffenseOut {
                node: o.node,
                point: original_point(&o.point),
                field: field_name(o.field),
                axis: o.axis + 1,
                residual: o.residual,
                threshold: o.threshold,
            })
            .collect(),
    };
    let r = &check.ranks;
    let ranks = RanksOut {
        max_rank_g: r.max_rank_g,
        max_rank_quotient: r.max_rank_quotient,
        g_regular: r.g_regular,
        quotient_regular: r.quotient_regular,
        singular: r
            .quotient_singular_nodes
            .iter()
            .map(|&node| SingularOut {
                node,
                point: original_point(&grid.node(node)),
                rank_g: r.rank_g[node],
                rank_quotient: r.rank_quotient[node],
            })
            .collect(),
        rank_g: r.rank_g.clone(),
        rank_d_plus_g: r.rank_d_plus_g.clone(),
        rank_quotient: r.rank_quotient.clone(),
    };
    let mut report = Report {
        tool: "ctrlinv",
        version: env!("CARGO_PKG_VERSION"),
        settings: settings.clone(),
        verdict,
        exit_code: exit_code(verdict),
        system: SystemInfo {
            n,
            k,
            m,
            flattened: !fl.is_identity(),
            flattening_matrix: fl
                .matrix()
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        },
        invariance,
        ranks,
        synthesis: None,
        verification: None,
        advisories: Vec::new(),
    };
    let mut outcome = Outcome {
        report: report.clone(),
        alpha_rows: Vec::new(),
        beta_rows: Vec::new(),
        trajectories: Vec::new(),
    };
    if verdict != Verdict::Invariant {
        return Ok(outcome);
    }

    let options = SynthesisOptions {
        order: settings.axis_order.iter().map(|a| a - 1).collect(),
        tolerance: settings.tolerance,
        quadrature_intervals: settings.quadrature_intervals,
    };
    let syn = match synthesize(system, &grid, &options) {
        Ok(s) => s,
        Err(e) => {
            report.synthesis = Some(SynthesisOut {
                summary: None,
                condition_numbers: Vec::new(),
                alpha_file: None,
                beta_file: None,
                expressions: None,
                error: Some(e.to_string()),
            });
            report.advisories.push(format!("synthesis failed: {e}"));
            outcome.report = report;
            return Ok(outcome);
        }
    };
    if let Some(a) = &syn.a.advisory {
        report.advisories.push(a.clone());
    }
    let fb = &syn.feedback;
    for flat in 0..grid.len() {
        let mut row = original_point(&grid.node(flat));
        row.extend(&fb.alpha[flat]);
        outcome.alpha_rows.push(row);
        let mut row = original_point(&grid.node(flat));
        row.extend(fb.beta[flat].transpose().iter());
        outcome.beta_rows.push(row);
    }
    report.synthesis = Some(SynthesisOut {
        summary: Some(syn.summary(&options.order)),
        condition_numbers: syn.a.condition.clone(),
        alpha_file: Some(ALPHA_FILE.into()),
        beta_file: Some(BETA_FILE.into()),
        expressions: None,
        error: None,
    });

    let closed = ClosedLoop::new(Arc::new(system.clone()), fb.law())?;
    let points: Vec<Vec<f64>> = (0..grid.len())
        .filter(|&i| fb.validity.contains_node(&grid, i))
        .map(|i| grid.node(i))
        .collect();
    let residuals = bracket_residuals_at(&closed, &points, settings.fd_step)?;
    let max_residual = residuals.max;
    let mut verification = VerificationOut {
        passed: max_residual <= settings.residual_tolerance,
        max_residual,
        residual_tolerance: settings.residual_tolerance,
        nodes_checked: points.len(),
        residuals,
        leaf_tests: Vec::new(),
        control: None,
    };
    if !verification.passed {
        report.advisories.push(format!(
            "verified residual {} exceeds {}",
            fmt_f64(max_residual),
            fmt_f64(settings.residual_tolerance)
        ));
    }
    if settings.simulate {
        let u = control_signal(prepared, settings)?;
        for (p, [a, b]) in leaf_pairs(prepared, settings)?.into_iter().enumerate() {
            let open = leaf_invariance_test(system, &a, &b, &u, settings.horizon, settings.ode_step)?;
            let shut = leaf_invariance_test(&closed, &a, &b, &u, settings.horizon, settings.ode_step)?;
            verification.leaf_tests.push(LeafOut {
                x0: original_point(&a),
                x0_prime: original_point(&b),
                open_loop_deviation: open.deviation,
                closed_loop_deviation: shut.deviation,
                truncated: open.truncated || shut.truncated,
            });
            for (label, t) in [("open_loop", open), ("closed_loop", shut)] {
                outcome.trajectories.push((label.into(), p, "a".into(), t.first));
                outcome.trajectories.push((label.into(), p, "b".into(), t.second));
            }
        }
        verification.control = Some(u);
    }
    report.verification = Some(verification);
    outcome.report = report;
    // trajectory states back to input coordinates
    for (_, _, _, t) in &mut outcome.trajectories {
        for s in &mut t.states {
            *s = fl.to_original(s);
        }
    }
    Ok(outcome)
}

fn coord_header(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

/// Write `report.json` and the CSV files into `dir`.
pub fn write_outputs(dir: &Path, outcome: &Outcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    write_json(&dir.join(REPORT_FILE), &outcome.report)?;
    let (n, m) = (outcome.report.system.n, outcome.report.system.m);
    if !outcome.alpha_rows.is_empty() {
        let mut h = coord_header(n);
        h.extend((1..=m).map(|i| format!("alpha{i}")));
        write_csv(&dir.join(ALPHA_FILE), &h, &outcome.alpha_rows)?;
        let mut h = coord_header(n);
        for i in 1..=m {
            h.extend((1..=m).map(|j| format!("beta{i}_{j}")));
        }
        write_csv(&dir.join(BETA_FILE), &h, &outcome.beta_rows)?;
    }
    if !outcome.trajectories.is_empty() {
        let mut h: Vec<String> = ["system", "pair", "start", "t"].map(String::from).to_vec();
        h.extend(coord_header(n));
        let rows: Vec<(Vec<String>, Vec<f64>)> = outcome
            .trajectories
            .iter()
            .flat_map(|(sys, pair, start, t)| {
                t.times.iter().zip(&t.states).map(move |(time, x)| {
                    let mut v = vec![*time];
                    v.extend(x);
                    (vec![sys.clone(), pair.to_string(), start.clone()], v)
                })
            })
            .collect();
        output::write_csv_with_labels(
            &dir.join(TRAJECTORY_FILE),
            &h,
            rows.iter().map(|(l, v)| (l.clone(), v.as_slice())),
        )?;
    }
    Ok(())
}

pub fn load_description(path: &Path) -> Result<Prepared> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    SystemDescription::from_json(&text)?.prepare()
}

/// Numeric or structural differences between two JSON trees, as paths.
fn compare(a: &Value, b: &Value, path: &str, tol: f64, out: &mut Vec<String>) {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap_or(f64::NAN), y.as_f64().unwrap_or(f64::NAN));
            if !((x - y).abs() <= tol || x == y) {
                out.push(format!("{path}: {} vs {}", fmt_f64(x), fmt_f64(y)));
            }
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            for (i, (p, q)) in x.iter().zip(y).enumerate() {
                compare(p, q, &format!("{path}/{i}"), tol, out);
            }
        }
        (Value::Object(x), Value::Object(y)) => {
            for (key, p) in x {
                match y.get(key) {
                    Some(q) => compare(p, q, &format!("{path}/{key}"), tol, out),
                    None => out.push(format!("{path}/{key}: missing")),
                }
            }
            for key in y.keys().filter(|k| !x.contains_key(*k)) {
                out.push(format!("{path}/{key}: unexpected"));
            }
        }
        _ if a == b => {}
        _ => out.push(format!("{path}: {a} vs {b}")),
    }
}

/// Re-run a recorded report's settings and list every reproduced number
/// that differs by more than [`REVERIFY_TOLERANCE`].
pub fn reverify(input: &Path, report_path: &Path) -> Result<Vec<String>> {
    let prepared = load_description(input)?;
    let text = std::fs::read_to_string(report_path)
        .map_err(|e| Error::Input(format!("{}: {e}", report_path.display())))?;
    let recorded: Value = serde_json::from_str(&text).map_err(|e| {
        Error::Input(format!("{}: line {} column {}: {e}", report_path.display(), e.line(), e.column()))
    })?;
    let settings: RunSettings = serde_json::from_value(recorded["settings"].clone())
        .map_err(|e| Error::Input(format!("report field `settings`: {e}")))?;
    let fresh = serde_json::to_value(execute(&prepared, &settings)?.report)
        .map_err(|e| Error::Io(e.to_string()))?;
    let mut diffs = Vec::new();
    for key in ["verdict", "invariance", "ranks", "verification"] {
        compare(&recorded[key], &fresh[key], &format!("/{key}"), REVERIFY_TOLERANCE, &mut diffs);
    }
    Ok(diffs)
}

#[derive(Parser, Debug)]
#[command(name = "ctrlinv", version, about = "Decide local controlled invariance, synthesize feedback, verify it")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check, synthesize and verify the system in INPUT.
    Run(RunArgs),
    /// Re-run the settings recorded in REPORT and compare the numbers.
    Reverify { input: PathBuf, report: PathBuf },
}

#[derive(Args, Debug)]
struct RunArgs {
    input: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "ctrlinv-out")]
    out: PathBuf,
    /// Nodes per axis.
    #[arg(long)]
    grid: Option<usize>,
    /// Invariance membership tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Finite-difference step for verification.
    #[arg(long = "fd-step")]
    fd_step: Option<f64>,
    /// Integrator step for simulations.
    #[arg(long = "ode-step")]
    ode_step: Option<f64>,
    /// Run leaf-quotient simulations and write trajectories.csv.
    #[arg(long)]
    simulate: bool,
    /// Seed for randomized start points and control signals.
    #[arg(long)]
    seed: Option<u64>,
}

fn run_command(args: &RunArgs) -> Result<Outcome> {
    let prepared = load_description(&args.input)?;
    let overrides = Overrides {
        grid: args.grid,
        tol: args.tol,
        fd_step: args.fd_step,
        ode_step: args.ode_step,
        simulate: args.simulate,
        seed: args.seed,
    };
    let settings = RunSettings::resolve(&prepared, &overrides)?;
    let outcome = execute(&prepared, &settings)?;
    write_outputs(&args.out, &outcome)?;
    Ok(outcome)
}

/// Process entry point; returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT_ERROR } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run(args) => match run_command(&args) {
            Ok(o) => {
                let r = &o.report;
                println!("verdict: {}", serde_json::to_string(&r.verdict).unwrap_or_default().trim_matches('"'));
                if let Some(v) = &r.verification {
                    println!("max residual: {}", fmt_f64(v.max_residual));
                }
                if !r.invariance.offending_nodes.is_empty() {
                    println!("offending nodes: {:?}", r.invariance.offending_nodes);
                }
                for s in &r.ranks.singular {
                    println!("singular node {} at {:?}", s.node, s.point);
                }
                for a in &r.advisories {
                    println!("advisory: {a}");
                }
                println!("report: {}", args.out.join(REPORT_FILE).display());
                o.exit_code()
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_INPUT_ERROR
            }
        },
        Command::Reverify { input, report } => match reverify(&input, &report) {
            Ok(d) if d.is_empty() => {
                println!("reproduced within {}", fmt_f64(REVERIFY_TOLERANCE));
                0
            }
            Ok(d) => {
                for line in d {
                    println!("mismatch {line}");
                }
                1
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_INPUT_ERROR
            }
        },
    }
}
