//! Command-line front end: simulate, respond, sweep and validate.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use koopfreq::analysis::{analyze, simulate, AnalysisError, Analysis, Settings};
use koopfreq::bode::{emit_csv, emit_svg, sweep, LogGrid, RowStatus};
use koopfreq::expr::{parse, Expr};
use koopfreq::plantfile::{load_plant, PlantFileError};
use koopfreq::response::{Method, OrderTag, ResponseError};
use koopfreq::sim::{find_steady_state, SimError};
use koopfreq::system::{PlantSpec, SystemError};
use koopfreq::{fmt_num, Complex64};
use serde_json::{json, Value};

mod validate;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_NOT_STEADY: i32 = 4;
pub const EXIT_CROSS_CHECK: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "koopfreq", version, about = "Nonlinear frequency response via the Koopman resolvent")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one forced trajectory, write it as CSV and report periodicity.
    Simulate(SimulateArgs),
    /// Estimate responses at a single frequency with every requested method.
    Respond(RespondArgs),
    /// Sweep a log-spaced frequency grid and write Bode tables and a plot.
    Sweep(SweepArgs),
    /// Check the estimators against the closed-form two-state example.
    Validate(ValidateArgs),
}

/// Options shared by the commands that read a plant file.
#[derive(Debug, Args)]
pub struct PlantArgs {
    /// Plant definition file.
    pub plant: PathBuf,
    /// Input amplitude as `mag` or `mag@phase_deg`.
    #[arg(long, default_value = "1")]
    pub u0: String,
    /// Initial state as comma-separated reals; defaults to the origin.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    /// Overrides the plant file's observable.
    #[arg(long, allow_hyphen_values = true)]
    pub observable: Option<String>,
    /// Integration step; defaults to min(period/256, 0.01).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Fixed horizon in forcing periods; sized automatically when omitted.
    #[arg(long)]
    pub horizon_periods: Option<f64>,
    /// Relative tolerance of the periodicity test.
    #[arg(long, default_value_t = koopfreq::sim::DEFAULT_PERIODICITY_TOL)]
    pub tol: f64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Response order, `n` or `1/n`; repeatable.
    #[arg(long = "order", default_value = "1")]
    pub orders: Vec<String>,
    /// Comma-separated subset of harm, abel, dmd.
    #[arg(long, default_value = "harm,abel")]
    pub methods: String,
    /// Averaging window in periods of the slowest order.
    #[arg(long, default_value_t = 8)]
    pub window: usize,
    /// Relative tolerance of the cross-check between methods.
    #[arg(long, default_value_t = 1e-2)]
    pub cross_tol: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub plant: PlantArgs,
    /// Forcing frequency.
    #[arg(long)]
    pub omega: f64,
}

#[derive(Debug, Args)]
pub struct RespondArgs {
    #[command(flatten)]
    pub plant: PlantArgs,
    #[command(flatten)]
    pub estimate: EstimateArgs,
    /// Forcing frequency.
    #[arg(long)]
    pub omega: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub plant: PlantArgs,
    #[command(flatten)]
    pub estimate: EstimateArgs,
    /// `min:max:points`, logarithmic.
    #[arg(long)]
    pub omega_grid: String,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Decay rate of x1.
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub a1: f64,
    /// Decay rate of x2.
    #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
    pub a2: f64,
    /// Forcing frequency.
    #[arg(long, default_value_t = 1.0)]
    pub omega: f64,
    /// Seed for the random test points.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Failure carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        let code = match &e {
            AnalysisError::Sim(SimError::NonFiniteState(_) | SimError::Eval(_)) => EXIT_DIVERGED,
            AnalysisError::Sim(SimError::TooShort { .. }) => EXIT_NOT_STEADY,
            AnalysisError::Response(ResponseError::NotSteady { .. }) => EXIT_NOT_STEADY,
            AnalysisError::System(SystemError::Eval(_)) => EXIT_DIVERGED,
            _ => EXIT_CONFIG,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

/// `mag` or `mag@phase_deg`.
pub fn parse_u0(s: &str) -> Result<Complex64, String> {
    let (mag, phase) = match s.split_once('@') {
        Some((m, p)) => (m, p),
        None => (s, "0"),
    };
    let mag: f64 = mag.trim().parse().map_err(|_| format!("bad u0 magnitude `{mag}`"))?;
    let phase: f64 = phase.trim().parse().map_err(|_| format!("bad u0 phase `{phase}`"))?;
    if !(mag > 0.0 && mag.is_finite() && phase.is_finite()) {
        return Err(format!("u0 `{s}` needs a positive magnitude"));
    }
    Ok(Complex64::from_polar(mag, phase.to_radians()))
}

pub fn parse_methods(s: &str) -> Result<Vec<Method>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let m = match Method::from_label(part) {
            Some(m @ (Method::HarmonicAverage | Method::AbelResidue | Method::Dmd)) => m,
            _ => return Err(format!("unknown method `{part}`; expected harm, abel or dmd")),
        };
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err("no method given".into());
    }
    Ok(out)
}

fn parse_x0(s: Option<&str>, dim: usize) -> Result<Vec<Complex64>, String> {
    let Some(s) = s else {
        return Ok(vec![Complex64::new(0.0, 0.0); dim]);
    };
    let v: Vec<Complex64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map(|r| Complex64::new(r, 0.0)))
        .collect::<Result<_, _>>()
        .map_err(|_| format!("bad x0 `{s}`"))?;
    if v.len() != dim {
        return Err(format!("x0 has {} components, plant has {dim}", v.len()));
    }
    Ok(v)
}

fn check_omega(omega: f64) -> Result<(), Failure> {
    if omega > 0.0 && omega.is_finite() {
        Ok(())
    } else {
        Err(Failure::config(format!("omega {omega} must be positive")))
    }
}

/// Plant, input and settings common to every plant command.
struct Setup {
    plant: PlantSpec,
    observable: Expr,
    u0: Complex64,
    x0: Vec<Complex64>,
    settings: Settings,
}

fn setup(p: &PlantArgs) -> Result<Setup, Failure> {
    let mut plant = load_plant(&p.plant).map_err(|e| match e {
        PlantFileError::Io { .. } => Failure::config(e.to_string()),
        PlantFileError::Syntax { .. } => Failure::config(format!("{}:{e}", p.plant.display())),
        PlantFileError::Invalid(_) => Failure::config(format!("{}: {e}", p.plant.display())),
    })?;
    if let Some(src) = &p.observable {
        let names = plant.params.keys().cloned().collect();
        let g = parse(src, plant.dim, &names).map_err(|e| Failure::config(format!("observable: {e}")))?;
        plant = plant.with_observable(g).map_err(|e| Failure::config(e.to_string()))?;
    }
    let u0 = parse_u0(&p.u0).map_err(Failure::config)?;
    let x0 = parse_x0(p.x0.as_deref(), plant.dim).map_err(Failure::config)?;
    if let Some(dt) = p.dt {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Failure::config(format!("dt {dt} must be positive")));
        }
    }
    if let Some(h) = p.horizon_periods {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Failure::config(format!("horizon-periods {h} must be positive")));
        }
    }
    let settings = Settings {
        dt: p.dt,
        horizon_periods: p.horizon_periods,
        periodicity_tol: p.tol,
        ..Settings::default()
    };
    Ok(Setup {
        observable: plant.observable.clone(),
        plant,
        u0,
        x0,
        settings,
    })
}

fn apply_estimate(settings: &mut Settings, e: &EstimateArgs) -> Result<Vec<OrderTag>, Failure> {
    settings.methods = parse_methods(&e.methods).map_err(Failure::config)?;
    if e.window == 0 {
        return Err(Failure::config("window must be at least one period"));
    }
    settings.window_periods = e.window;
    settings.cross_tol = e.cross_tol;
    let mut orders = Vec::new();
    for o in &e.orders {
        let tag: OrderTag = o.parse().map_err(Failure::config)?;
        if !orders.contains(&tag) {
            orders.push(tag);
        }
    }
    Ok(orders)
}

/// DMD samples at most every `pi / (8 n omega)`; a user step coarser than
/// that cannot resolve the highest requested harmonic.
fn check_dmd_step(settings: &Settings, orders: &[OrderTag], omega_max: f64) -> Result<(), Failure> {
    let (Some(dt), true) = (settings.dt, settings.wants(Method::Dmd)) else {
        return Ok(());
    };
    let n_max = orders.iter().map(|o| o.frequency(1.0)).fold(1.0, f64::max);
    let bound = std::f64::consts::PI / (8.0 * n_max * omega_max);
    if dt > bound {
        return Err(Failure::config(format!(
            "dt {dt} exceeds the DMD sampling bound {bound:.3e} at omega {omega_max}"
        )));
    }
    Ok(())
}

fn create_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::config(format!("cannot create {}: {e}", dir.display())))
}

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure::config(format!("cannot write {}: {e}", path.display()))
}

fn c_json(z: Complex64) -> Value {
    json!([z.re, z.im])
}

fn simulate_cmd(a: &SimulateArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    check_omega(a.omega)?;
    let mut s = setup(&a.plant)?;
    s.settings.methods = vec![Method::HarmonicAverage];
    let orders = [OrderTag::fundamental()];
    let traj = simulate(&s.plant, a.omega, s.u0, &s.x0, &orders, &s.settings)?;
    create_out(&a.plant.out)?;
    let path = a.plant.out.join("trajectory.csv");
    let file = fs::File::create(&path).map_err(|e| io_fail(&path, e))?;
    traj.write_csv(std::io::BufWriter::new(file)).map_err(|e| io_fail(&path, e))?;

    let report = find_steady_state(&traj, s.settings.periodicity_tol).map_err(AnalysisError::from)?;
    let doc = json!({
        "plant": s.plant.name,
        "observable": s.observable.to_string(),
        "omega": a.omega,
        "u0": c_json(s.u0),
        "dt": traj.dt,
        "horizon": traj.end_time(),
        "samples": traj.len(),
        "trajectory": path.display().to_string(),
        "periodic": report.periodic,
        "detected_period": report.detected_period,
        "residual": report.residual,
        "transient_end": report.transient_end,
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&doc).unwrap()).ok();
    Ok(EXIT_OK)
}

fn error_label(e: &AnalysisError) -> &'static str {
    if e.is_not_steady() {
        "not_steady"
    } else if e.is_divergence() {
        "diverged"
    } else {
        "failed"
    }
}

fn analysis_json(plant: &PlantSpec, observable: &Expr, a: &Analysis) -> Value {
    let estimates: Vec<Value> = a
        .estimates
        .iter()
        .map(|e| match &e.result {
            Ok(r) => json!({
                "order": e.order.to_string(),
                "method": e.method.label(),
                "value": c_json(r.value),
                "abs": r.value.norm(),
                "err_estimate": r.err_estimate,
                "status": "ok",
            }),
            Err(err) => json!({
                "order": e.order.to_string(),
                "method": e.method.label(),
                "status": error_label(err),
                "error": err.to_string(),
            }),
        })
        .collect();
    let checks: Vec<Value> = a
        .cross_checks
        .iter()
        .map(|c| {
            json!({
                "order": c.a.order.to_string(),
                "a": c.a.method.label(),
                "b": c.b.method.label(),
                "gap": c.gap,
                "rel_tol": c.rel_tol,
                "passed": c.passed,
            })
        })
        .collect();
    json!({
        "plant": plant.name,
        "observable": observable.to_string(),
        "omega": a.omega,
        "u0": c_json(a.u0),
        "dt": a.dt,
        "horizon": a.horizon,
        "periodicity": a.periodicity.as_ref().map(|p| json!({
            "periodic": p.periodic,
            "detected_period": p.detected_period,
            "residual": p.residual,
            "transient_end": p.transient_end,
        })),
        "estimates": estimates,
        "cross_checks": checks,
    })
}

fn respond_cmd(a: &RespondArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    check_omega(a.omega)?;
    let mut s = setup(&a.plant)?;
    let orders = apply_estimate(&mut s.settings, &a.estimate)?;
    check_dmd_step(&s.settings, &orders, a.omega)?;
    let analysis = analyze(&s.plant, a.omega, s.u0, &s.x0, &orders, &s.settings)?;

    create_out(&a.plant.out)?;
    let path = a.plant.out.join("response.csv");
    let mut csv = String::from("omega,order,method,re_H,im_H,err,status\n");
    for e in &analysis.estimates {
        let (re, im, err, status) = match &e.result {
            Ok(r) => {
                let passed = analysis
                    .checks_for(e.order)
                    .filter(|c| c.a.method == e.method || c.b.method == e.method)
                    .all(|c| c.passed);
                let status = if passed { "ok" } else { "cross_check_failed" };
                (fmt_num(r.value.re), fmt_num(r.value.im), fmt_num(r.err_estimate), status)
            }
            Err(err) => (String::new(), String::new(), String::new(), error_label(err)),
        };
        csv.push_str(&format!(
            "{},{},{},{re},{im},{err},{status}\n",
            fmt_num(a.omega),
            e.order,
            e.method.label()
        ));
    }
    fs::write(&path, csv).map_err(|e| io_fail(&path, e))?;

    let doc = analysis_json(&s.plant, &s.observable, &analysis);
    writeln!(out, "{}", serde_json::to_string_pretty(&doc).unwrap()).ok();

    let code = if analysis.estimates.iter().any(|e| e.result.as_ref().is_err_and(|x| x.is_not_steady())) {
        EXIT_NOT_STEADY
    } else if let Some(e) = analysis.estimates.iter().find_map(|e| e.result.as_ref().err()) {
        return Err(Failure::from(e.clone()));
    } else if !analysis.all_checks_pass() {
        EXIT_CROSS_CHECK
    } else {
        EXIT_OK
    };
    Ok(code)
}

/// File stem for an order's table: `bode_H2`, `bode_H1_2`.
fn table_stem(order: OrderTag) -> String {
    match order.kind {
        koopfreq::response::OrderKind::Harmonic => format!("bode_H{}", order.n),
        koopfreq::response::OrderKind::Subharmonic => format!("bode_H1_{}", order.n),
    }
}

fn sweep_cmd(a: &SweepArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let mut s = setup(&a.plant)?;
    let orders = apply_estimate(&mut s.settings, &a.estimate)?;
    let grid: LogGrid = a.omega_grid.parse().map_err(Failure::config)?;
    check_dmd_step(&s.settings, &orders, grid.max)?;
    let tables = sweep(&s.plant, &s.observable, &orders, grid, s.u0, &s.x0, &s.settings)?;

    create_out(&a.plant.out)?;
    let mut files = Vec::new();
    for t in &tables {
        let path = a.plant.out.join(format!("{}.csv", table_stem(t.order)));
        let file = fs::File::create(&path).map_err(|e| io_fail(&path, e))?;
        emit_csv(t, std::io::BufWriter::new(file)).map_err(|e| io_fail(&path, e))?;
        files.push(path.display().to_string());
    }
    let svg = a.plant.out.join("bode.svg");
    let file = fs::File::create(&svg).map_err(|e| io_fail(&svg, e))?;
    emit_svg(&tables, std::io::BufWriter::new(file)).map_err(|e| io_fail(&svg, e))?;

    let summary: Vec<Value> = tables
        .iter()
        .map(|t| {
            let count = |f: &dyn Fn(&RowStatus) -> bool| t.rows.iter().filter(|r| f(&r.status)).count();
            json!({
                "order": t.order.to_string(),
                "rows": t.rows.len(),
                "ok": count(&|s| *s == RowStatus::Ok),
                "cross_check_failed": count(&|s| *s == RowStatus::CrossCheckFailed),
                "failed": count(&|s| !matches!(s, RowStatus::Ok | RowStatus::CrossCheckFailed)),
            })
        })
        .collect();
    let doc = json!({
        "plant": s.plant.name,
        "observable": s.observable.to_string(),
        "grid": {"min": grid.min, "max": grid.max, "points": grid.points},
        "tables": summary,
        "csv": files,
        "svg": svg.display().to_string(),
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&doc).unwrap()).ok();
    Ok(EXIT_OK)
}

/// Runs a parsed command, writing results to `out` and diagnostics to
/// `err`; returns the exit code.
pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match &cli.command {
        Command::Simulate(a) => simulate_cmd(a, out),
        Command::Respond(a) => respond_cmd(a, out),
        Command::Sweep(a) => sweep_cmd(a, out),
        Command::Validate(a) => validate::run(a, out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            writeln!(err, "error: {}", f.message).ok();
            f.code
        }
    }
}
