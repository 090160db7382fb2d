//! Front end of the `fuio` binary.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use fuio_core::config::{
    self, LtiObserverFile, LtvObserverFile, ObserverFile, ScenarioFile, SystemSpec,
};
use fuio_core::linalg;
use fuio_core::ltv_gpebo;
use fuio_core::placement;
use fuio_core::presets;
use fuio_core::sim_engine::{self, BilinearDemo, DecayRate, ErrorMetrics, ScenarioResult, ZInit};
use fuio_core::system_model::{self, LtiSystem, LtvCanonicalSystem, RelativeDegreeProfile};
use fuio_core::uio_synth::{self, QMode, SynthesisOptions};
use fuio_core::{Complex64, Error, ErrorClass, SourceExpr};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Input for the MIMO demo; the plant input is not fixed by the model.
pub const MIMO_DEMO_INPUT: &str = "sin(2*t)";
pub const MIMO_DEMO_T_FINAL: f64 = 5.0;
pub const LTV_DEMO_T_FINAL: f64 = 20.0;
/// Horizon and step of the frozen-eigenvalue scan.
pub const SCAN_HORIZON: f64 = 50.0;
pub const SCAN_STEP: f64 = 1e-2;
pub const DEFAULT_ORACLE_TOL: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(
    name = "fuio",
    version,
    about = "Functional unknown-input observer synthesis and simulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Relative threshold below which Markov parameters count as zero.
    #[arg(long, global = true, default_value_t = system_model::DEFAULT_ZERO_TOL)]
    pub zero_tol: f64,
    /// Relative tolerance on the achieved observer spectrum.
    #[arg(long, global = true, default_value_t = placement::DEFAULT_POLE_TOL)]
    pub pole_tol: f64,
    /// Absolute singular-value threshold for rank decisions (default: size-scaled machine epsilon).
    #[arg(long, global = true)]
    pub rank_tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a system file and report feasibility of the observer design.
    Check {
        system: PathBuf,
        #[arg(long, value_delimiter = ',')]
        r_override: Option<Vec<usize>>,
    },
    /// Synthesize an observer and write it as JSON.
    Synth {
        system: PathBuf,
        /// Comma-separated observer poles, e.g. `-4,-5,-1+2i,-1-2i`.
        #[arg(long, allow_hyphen_values = true)]
        poles: Option<String>,
        #[arg(long, default_value = "full")]
        mode: QModeArg,
        #[arg(long, value_delimiter = ',')]
        r_override: Option<Vec<usize>>,
        /// Observer output file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a plant together with a stored observer.
    Sim {
        observer: PathBuf,
        scenario: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Run one of the built-in examples end to end.
    Demo {
        name: DemoName,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Observer file written by the MIMO demo.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Compare the derivative-free realization against the observer fed with exact output derivatives.
    OracleCompare {
        system: PathBuf,
        observer: PathBuf,
        scenario: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ORACLE_TOL)]
        tol: f64,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QModeArg {
    Full,
    Reduced,
}

impl From<QModeArg> for QMode {
    fn from(m: QModeArg) -> Self {
        match m {
            QModeArg::Full => QMode::Full,
            QModeArg::Reduced => QMode::Reduced,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemoName {
    Bilinear,
    #[value(name = "paper-ltv")]
    LtvStudy,
    #[value(name = "paper-mimo")]
    MimoStudy,
}

/// Failure with the process exit status it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e.class() {
            ErrorClass::Input => EXIT_USAGE,
            ErrorClass::Infeasible => EXIT_INFEASIBLE,
            ErrorClass::Numerical => EXIT_NUMERICAL,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command. Returns
/// the exit status; normal output goes to `out`, diagnostics to `err`.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match run(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

pub struct Tolerances {
    pub zero_tol: f64,
    pub pole_tol: f64,
    pub rank_tol: Option<f64>,
}

impl Tolerances {
    fn synthesis(&self) -> SynthesisOptions {
        SynthesisOptions {
            pole_tol: self.pole_tol,
            rank_tol: self.rank_tol,
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult<i32> {
    let non_negative = |v: f64| v >= 0.0;
    let positive = |v: f64| v > 0.0;
    if !non_negative(cli.zero_tol)
        || !positive(cli.pole_tol)
        || cli.rank_tol.is_some_and(|t| !non_negative(t))
    {
        return Err(CliError::usage(
            "tolerances must be non-negative (pole tolerance positive)",
        ));
    }
    let tol = Tolerances {
        zero_tol: cli.zero_tol,
        pole_tol: cli.pole_tol,
        rank_tol: cli.rank_tol,
    };
    let report = match &cli.command {
        Command::Check { system, r_override } => cmd_check(system, r_override.as_deref(), &tol)?,
        Command::Synth {
            system,
            poles,
            mode,
            r_override,
            out: path,
        } => cmd_synth(
            system,
            poles.as_deref(),
            (*mode).into(),
            r_override.as_deref(),
            path.as_deref(),
            &tol,
        )?,
        Command::Sim {
            observer,
            scenario,
            csv,
            t_final,
            dt,
        } => cmd_sim(observer, scenario, csv.as_deref(), *t_final, *dt)?,
        Command::Demo {
            name,
            csv,
            out: path,
            t_final,
            dt,
        } => cmd_demo(*name, csv.as_deref(), path.as_deref(), *t_final, *dt, &tol)?,
        Command::OracleCompare {
            system,
            observer,
            scenario,
            tol: dev_tol,
            t_final,
            dt,
        } => cmd_oracle_compare(system, observer, scenario, *dev_tol, *t_final, *dt)?,
    };
    let text = if cli.json {
        serde_json::to_string_pretty(&report.json).expect("reports serialize") + "\n"
    } else {
        report.text
    };
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::usage(format!("cannot write output: {e}")))?;
    Ok(report.code)
}

/// Text and JSON renderings of a command outcome.
pub struct Report {
    pub text: String,
    pub json: Value,
    pub code: i32,
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    fs::write(path, contents)
        .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
}

fn load_system(path: &Path) -> CliResult<SystemSpec> {
    Ok(SystemSpec::from_json(&read_file(path)?)?)
}

fn fmt_matrix(text: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(text, "{name} ({}x{}):", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{:>12.6}", clean(*v))).collect();
        let _ = writeln!(text, "  [{}]", cells.join(" "));
    }
}

/// Maps negative zero and round-off dust to zero for display.
fn clean(v: f64) -> f64 {
    if v.abs() < 1e-13 {
        0.0
    } else {
        v
    }
}

fn fmt_complex(c: &Complex64) -> String {
    if c.im == 0.0 {
        format!("{:.6}", clean(c.re))
    } else {
        format!("{:.6}{:+.6}i", clean(c.re), c.im)
    }
}

fn sorted_spectrum(eigs: &[Complex64]) -> Vec<Complex64> {
    let mut v = eigs.to_vec();
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    v
}

fn complex_json(eigs: &[Complex64]) -> Value {
    Value::Array(
        sorted_spectrum(eigs)
            .iter()
            .map(|c| json!([c.re, c.im]))
            .collect(),
    )
}

fn lti_profile(
    sys: &LtiSystem,
    over: Option<&[usize]>,
    tol: &Tolerances,
) -> CliResult<RelativeDegreeProfile> {
    let r = system_model::compute_relative_degrees(sys, tol.zero_tol)?;
    Ok(match over {
        Some(v) => r.with_override(v)?,
        None => r,
    })
}

pub fn cmd_check(path: &Path, r_flag: Option<&[usize]>, tol: &Tolerances) -> CliResult<Report> {
    match load_system(path)? {
        SystemSpec::Lti {
            a,
            b,
            c,
            r_override,
        } => {
            let sys = config::lti_from_rows(&a, &b, &c)?;
            check_lti(&sys, r_flag.or(r_override.as_deref()), tol)
        }
        SystemSpec::LtvChain { n, c } => check_ltv(&config::ltv_from_spec(n, &c)?),
    }
}

fn check_lti(sys: &LtiSystem, over: Option<&[usize]>, tol: &Tolerances) -> CliResult<Report> {
    let v = system_model::validate_lti(sys)?;
    let r = lti_profile(sys, over, tol)?;
    let n_mat = system_model::build_n(sys, &r)?;
    let rank_n = linalg::numerical_rank(&n_mat, tol.rank_tol)?;
    let t = uio_synth::build_t(&sys.a, &sys.b, r.r_max());
    let rank_t = linalg::numerical_rank(&t, tol.rank_tol)?;
    let detect_ac = system_model::check_detectability(&sys.a, &sys.c, 0.0)?;
    let mut reasons = Vec::new();
    if rank_n != v.rank_b {
        reasons.push(format!(
            "decoupling condition fails: rank(N) = {rank_n} differs from rank(B) = {}",
            v.rank_b
        ));
    } else if rank_n < v.m {
        reasons.push(format!(
            "N has rank {rank_n} < {} columns, N^T N is singular",
            v.m
        ));
    }
    if rank_t >= v.n {
        reasons.push(format!(
            "rank(T) = {rank_t} = n leaves no functional to observe"
        ));
    }
    let mut fixed = Vec::new();
    let mut detect_mc = None;
    if reasons.is_empty() {
        let g = uio_synth::compute_g(&sys.b, &n_mat, tol.rank_tol)?;
        let m = uio_synth::compute_m(&sys.a, &g, &system_model::build_p(sys, &r)?)?;
        fixed = system_model::unobservable_modes(&m, &sys.c, None)?;
        let ok = fixed.iter().all(|z| z.re < 0.0);
        if !ok {
            reasons.push("(M, C) is not detectable: an unobservable mode is not stable".into());
        }
        detect_mc = Some(ok);
    }
    let feasible = reasons.is_empty();

    let mut text = String::new();
    let _ = writeln!(text, "system: LTI, n = {}, m = {}, l = {}", v.n, v.m, v.l);
    let _ = writeln!(text, "relative degrees r = {:?}", r.degrees());
    let _ = writeln!(text, "rank(B) = {}, rank(N) = {rank_n}", v.rank_b);
    let _ = writeln!(
        text,
        "rank(T) = {rank_t}, functional rows available = {}",
        v.n.saturating_sub(rank_t)
    );
    let _ = writeln!(text, "(A, C) detectable: {detect_ac}");
    if let Some(d) = detect_mc {
        let _ = writeln!(text, "(M, C) detectable: {d}");
        let modes: Vec<String> = sorted_spectrum(&fixed).iter().map(fmt_complex).collect();
        let _ = writeln!(text, "fixed modes of (M, C): [{}]", modes.join(", "));
    }
    for reason in &reasons {
        let _ = writeln!(text, "infeasible: {reason}");
    }
    let _ = writeln!(text, "feasible: {feasible}");
    let json = json!({
        "type": "lti",
        "n": v.n, "m": v.m, "l": v.l,
        "r": r.degrees(),
        "rank_b": v.rank_b,
        "rank_n": rank_n,
        "rank_t": rank_t,
        "detectable_ac": detect_ac,
        "detectable_mc": detect_mc,
        "fixed_modes": complex_json(&fixed),
        "reasons": reasons,
        "feasible": feasible,
    });
    Ok(Report {
        text,
        json,
        code: if feasible { EXIT_OK } else { EXIT_INFEASIBLE },
    })
}

fn frozen_scan(sys: &LtvCanonicalSystem) -> CliResult<(usize, ltv_gpebo::FrozenScan)> {
    let red = ltv_gpebo::reduce_to_w(sys)?;
    let grid = ltv_gpebo::uniform_grid(0.0, SCAN_HORIZON, SCAN_STEP);
    Ok((red.beta(), ltv_gpebo::frozen_stability_scan(&red, &grid)?))
}

fn check_ltv(sys: &LtvCanonicalSystem) -> CliResult<Report> {
    let (beta, scan) = frozen_scan(sys)?;
    let mut text = String::new();
    let _ = writeln!(text, "system: LTV chain, n = {}", sys.n());
    let coeffs: Vec<&str> = sys.coefficients().iter().map(|c| c.source()).collect();
    let _ = writeln!(text, "output coefficients: [{}]", coeffs.join(", "));
    let _ = writeln!(
        text,
        "beta = {beta}, observed functional: x1..x{}",
        beta - 1
    );
    let _ = writeln!(
        text,
        "frozen stability margin = {:.6} at t = {:.2} (grid [0, {SCAN_HORIZON}], step {SCAN_STEP})",
        scan.margin, scan.argmin_t
    );
    let _ = writeln!(text, "note: {}", scan.note);
    let _ = writeln!(text, "feasible: {}", scan.frozen_hurwitz);
    let json = json!({
        "type": "ltv_chain",
        "n": sys.n(),
        "beta": beta,
        "frozen_margin": scan.margin,
        "argmin_t": scan.argmin_t,
        "note": scan.note,
        "feasible": scan.frozen_hurwitz,
    });
    Ok(Report {
        text,
        json,
        code: if scan.frozen_hurwitz {
            EXIT_OK
        } else {
            EXIT_INFEASIBLE
        },
    })
}

pub fn cmd_synth(
    path: &Path,
    poles: Option<&str>,
    mode: QMode,
    r_flag: Option<&[usize]>,
    out_path: Option<&Path>,
    tol: &Tolerances,
) -> CliResult<Report> {
    let (file, mut report) = match load_system(path)? {
        SystemSpec::Lti {
            a,
            b,
            c,
            r_override,
        } => {
            let sys = config::lti_from_rows(&a, &b, &c)?;
            let poles =
                poles.ok_or_else(|| CliError::usage("--poles is required for LTI systems"))?;
            let poles = placement::parse_pole_list(poles)?;
            synth_lti(&sys, &poles, mode, r_flag.or(r_override.as_deref()), tol)?
        }
        SystemSpec::LtvChain { n, c } => {
            let sys = config::ltv_from_spec(n, &c)?;
            let (beta, scan) = frozen_scan(&sys)?;
            let q = ltv_gpebo::functional_matrix_ltv(n, beta)?;
            let mut text = String::new();
            let _ = writeln!(text, "beta = {beta}");
            fmt_matrix(&mut text, "Q", &q);
            let _ = writeln!(text, "frozen stability margin = {:.6}", scan.margin);
            let file = ObserverFile::LtvGpebo(LtvObserverFile {
                n,
                beta,
                c,
                q: linalg::matrix_to_rows(&q),
            });
            let json = json!({"type": "ltv_gpebo", "beta": beta, "frozen_margin": scan.margin});
            (
                file,
                Report {
                    text,
                    json,
                    code: EXIT_OK,
                },
            )
        }
    };
    let body = file.to_json() + "\n";
    match out_path {
        Some(p) => {
            write_file(p, body.as_bytes())?;
            let _ = writeln!(report.text, "observer written to {}", p.display());
        }
        None => {
            // the observer itself is the primary output
            report.text = body.clone();
            report.json = serde_json::from_str(&body).expect("valid JSON");
        }
    }
    Ok(report)
}

fn synth_lti(
    sys: &LtiSystem,
    poles: &[Complex64],
    mode: QMode,
    over: Option<&[usize]>,
    tol: &Tolerances,
) -> CliResult<(ObserverFile, Report)> {
    let r = lti_profile(sys, over, tol)?;
    let design = uio_synth::design_observer(sys, &r, poles, mode, &tol.synthesis())?;
    let cond =
        uio_synth::verify_functional_condition(&design.realization.q, &sys.a, &sys.b, r.r_max());
    log::info!(
        "observer designed, max pole error {:e}",
        design.gains.max_pole_error
    );

    let mut text = String::new();
    let _ = writeln!(
        text,
        "relative degrees r = {:?}, Q mode = {mode}",
        r.degrees()
    );
    fmt_matrix(&mut text, "G", &design.gains.g);
    fmt_matrix(&mut text, "M", &design.gains.m);
    fmt_matrix(&mut text, "L", &design.gains.l);
    fmt_matrix(&mut text, "Q", &design.realization.q);
    let spec: Vec<String> = sorted_spectrum(&design.gains.achieved)
        .iter()
        .map(fmt_complex)
        .collect();
    let _ = writeln!(text, "achieved eig(F) = [{}]", spec.join(", "));
    let _ = writeln!(
        text,
        "max relative pole error = {:.3e}",
        design.gains.max_pole_error
    );
    for (i, res) in cond.residuals.iter().enumerate() {
        let _ = writeln!(text, "|Q A^{i} B|_inf = {res:.3e}");
    }
    let _ = writeln!(
        text,
        "(A, C) detectable: {}, (M, C) detectable: {}",
        design.detectable_ac, design.detectable_mc
    );
    let json = json!({
        "r": r.degrees(),
        "mode": mode.to_string(),
        "achieved": complex_json(&design.gains.achieved),
        "max_pole_error": design.gains.max_pole_error,
        "condition_residuals": cond.residuals,
        "detectable_ac": design.detectable_ac,
        "detectable_mc": design.detectable_mc,
    });
    let file = ObserverFile::LtiUio(LtiObserverFile::from_design(sys, &design));
    Ok((
        file,
        Report {
            text,
            json,
            code: EXIT_OK,
        },
    ))
}

fn rate_text(rate: DecayRate) -> String {
    match rate {
        DecayRate::Exact => "exact (error identically zero)".into(),
        DecayRate::Rate(r) => format!("{r:.4}"),
    }
}

fn rate_json(rate: DecayRate) -> Value {
    match rate {
        DecayRate::Exact => json!("exact"),
        DecayRate::Rate(r) => json!(r),
    }
}

fn metrics_report(text: &mut String, res: &ScenarioResult) -> Value {
    let m: &ErrorMetrics = &res.metrics;
    let finals: Vec<f64> = res
        .err
        .last()
        .map(|e| e.iter().copied().collect())
        .unwrap_or_default();
    let _ = writeln!(
        text,
        "samples = {}, t_final = {}",
        res.times.len(),
        res.times.last().copied().unwrap_or(0.0)
    );
    let cells: Vec<String> = finals.iter().map(|v| format!("{v:.3e}")).collect();
    let _ = writeln!(text, "final error per channel = [{}]", cells.join(", "));
    let _ = writeln!(
        text,
        "final error norm = {:.3e} (peak {:.3e})",
        m.final_norm, m.max_norm
    );
    let _ = writeln!(text, "fitted decay rate = {}", rate_text(m.decay_rate));
    match m.time_to_threshold {
        Some(t) => {
            let _ = writeln!(text, "error below {:e} from t = {t:.3}", m.threshold);
        }
        None => {
            let _ = writeln!(text, "error does not settle below {:e}", m.threshold);
        }
    }
    let mut v = json!({
        "samples": res.times.len(),
        "final_error": finals,
        "final_norm": m.final_norm,
        "max_norm": m.max_norm,
        "decay_rate": rate_json(m.decay_rate),
        "threshold": m.threshold,
        "time_to_threshold": m.time_to_threshold,
    });
    if let Some(d) = &res.ltv {
        let _ = writeln!(
            text,
            "identity residual |(w - xi) - Phi e(0)| = {:.3e}",
            d.identity_residual
        );
        let _ = writeln!(
            text,
            "|Phi(t_final)|_inf = {:.3e} (decays: {})",
            d.phi_final_norm, d.phi_decays
        );
        v["identity_residual"] = json!(d.identity_residual);
        v["phi_final_norm"] = json!(d.phi_final_norm);
        v["phi_decays"] = json!(d.phi_decays);
    }
    v
}

fn write_csv_file(
    path: Option<&Path>,
    res: &ScenarioResult,
    decimation: usize,
    text: &mut String,
) -> CliResult<()> {
    if let Some(p) = path {
        let mut buf = Vec::new();
        sim_engine::write_csv(&mut buf, res, decimation)?;
        write_file(p, &buf)?;
        let _ = writeln!(text, "trajectory written to {}", p.display());
    }
    Ok(())
}

fn horizon(scenario: &ScenarioFile, t_final: Option<f64>, dt: Option<f64>) -> (f64, f64) {
    (
        t_final.unwrap_or(scenario.t_final),
        dt.or(scenario.dt).unwrap_or(sim_engine::DEFAULT_DT),
    )
}

pub fn cmd_sim(
    observer: &Path,
    scenario: &Path,
    csv: Option<&Path>,
    t_final: Option<f64>,
    dt: Option<f64>,
) -> CliResult<Report> {
    let obs = ObserverFile::from_json(&read_file(observer)?)?;
    let sc = ScenarioFile::from_json(&read_file(scenario)?)?;
    let (tf, h) = horizon(&sc, t_final, dt);
    let res = match &obs {
        ObserverFile::LtiUio(o) => {
            let plant = o.plant()?;
            let real = o.realization()?;
            sim_engine::run_mimo_scenario(
                &plant,
                &real,
                &sc.inputs(plant.m())?,
                &sc.x0(),
                &sc.z_init()?,
                tf,
                h,
            )?
        }
        ObserverFile::LtvGpebo(o) => {
            let sys = config::ltv_from_spec(o.n, &o.c)?;
            let (a, b) = match &sc.plant {
                Some(p) => (
                    linalg::matrix_from_rows("A", &p.a)?,
                    linalg::matrix_from_rows("B", &p.b)?,
                ),
                None => (sys.chain_a(), sys.chain_b()),
            };
            let u = match &sc.u {
                Some(u) => u.clone(),
                None => SourceExpr::parse("0").map_err(Error::from)?,
            };
            let xi0 = sc.xi0.clone().map(DVector::from_vec);
            sim_engine::run_ltv_scenario(&a, &b, &sys, &u, &sc.x0(), xi0.as_ref(), tf, h)?
        }
    };
    let mut text = String::new();
    let json = metrics_report(&mut text, &res);
    write_csv_file(csv, &res, sc.decimation.unwrap_or(1), &mut text)?;
    Ok(Report {
        text,
        json,
        code: EXIT_OK,
    })
}

pub fn cmd_demo(
    name: DemoName,
    csv: Option<&Path>,
    out_path: Option<&Path>,
    t_final: Option<f64>,
    dt: Option<f64>,
    tol: &Tolerances,
) -> CliResult<Report> {
    let h = dt.unwrap_or(sim_engine::DEFAULT_DT);
    let mut text = String::new();
    let (res, mut json) = match name {
        DemoName::MimoStudy => {
            let sys = presets::mimo_plant();
            let (file, synth) = synth_lti(
                &sys,
                &presets::mimo_poles(),
                QMode::Full,
                Some(&presets::MIMO_R_OVERRIDE),
                tol,
            )?;
            text.push_str(&synth.text);
            if let Some(p) = out_path {
                write_file(p, (file.to_json() + "\n").as_bytes())?;
                let _ = writeln!(text, "observer written to {}", p.display());
            }
            let ObserverFile::LtiUio(o) = &file else {
                unreachable!()
            };
            let real = o.realization()?;
            let f = vec![SourceExpr::parse(MIMO_DEMO_INPUT).map_err(Error::from)?];
            let x0 = DVector::from_row_slice(&presets::MIMO_X0);
            let _ = writeln!(
                text,
                "simulation: x0 = {:?}, z0 = 0, f = {MIMO_DEMO_INPUT}",
                presets::MIMO_X0
            );
            let res = sim_engine::run_mimo_scenario(
                &sys,
                &real,
                &f,
                &x0,
                &ZInit::Zero,
                t_final.unwrap_or(MIMO_DEMO_T_FINAL),
                h,
            )?;
            (res, json!({"demo": "paper-mimo", "synthesis": synth.json}))
        }
        DemoName::LtvStudy => {
            let sys = presets::ltv_system();
            let (beta, scan) = frozen_scan(&sys)?;
            let _ = writeln!(
                text,
                "beta = {beta}, frozen stability margin = {:.6} at t = {:.2}",
                scan.margin, scan.argmin_t
            );
            let _ = writeln!(text, "note: {}", scan.note);
            let x0 = DVector::from_row_slice(&presets::LTV_X0);
            let u = SourceExpr::parse("0").map_err(Error::from)?;
            let _ = writeln!(
                text,
                "simulation: x0 = {:?}, xi0 = 0, u = 0",
                presets::LTV_X0
            );
            let res = sim_engine::run_ltv_scenario(
                &presets::ltv_plant_a(),
                &presets::ltv_plant_b(),
                &sys,
                &u,
                &x0,
                None,
                t_final.unwrap_or(LTV_DEMO_T_FINAL),
                h,
            )?;
            (
                res,
                json!({"demo": "paper-ltv", "beta": beta, "frozen_margin": scan.margin}),
            )
        }
        DemoName::Bilinear => {
            let mut cfg = BilinearDemo {
                dt: h,
                ..Default::default()
            };
            if let Some(tf) = t_final {
                cfg.t_final = tf;
            }
            let run = sim_engine::run_bilinear_demo(&cfg)?;
            fmt_matrix(&mut text, "K", &run.k);
            let _ = writeln!(
                text,
                "simulation: x0 = {:?}, observers start at zero",
                cfg.x0.as_slice()
            );
            let e0 = linalg::vec_inf_norm(&run.full.err[0]);
            let drop = if run.full.metrics.final_norm > 0.0 {
                (e0 / run.full.metrics.final_norm).log10()
            } else {
                f64::INFINITY
            };
            let _ = writeln!(
                text,
                "full-state error decreased by {drop:.2} orders of magnitude"
            );
            let json = json!({"demo": "bilinear", "orders_of_magnitude": drop});
            (run.full, json)
        }
    };
    json["metrics"] = metrics_report(&mut text, &res);
    write_csv_file(csv, &res, 1, &mut text)?;
    Ok(Report {
        text,
        json,
        code: EXIT_OK,
    })
}

pub fn cmd_oracle_compare(
    system: &Path,
    observer: &Path,
    scenario: &Path,
    dev_tol: f64,
    t_final: Option<f64>,
    dt: Option<f64>,
) -> CliResult<Report> {
    let sys = match load_system(system)? {
        SystemSpec::Lti { a, b, c, .. } => config::lti_from_rows(&a, &b, &c)?,
        SystemSpec::LtvChain { .. } => {
            return Err(CliError::usage("oracle comparison applies to LTI systems"));
        }
    };
    let ObserverFile::LtiUio(obs) = ObserverFile::from_json(&read_file(observer)?)? else {
        return Err(CliError::usage(
            "oracle comparison needs an lti_uio observer",
        ));
    };
    let sc = ScenarioFile::from_json(&read_file(scenario)?)?;
    let (tf, h) = horizon(&sc, t_final, dt);
    let real = obs.realization()?;
    let gains = uio_synth::UioGains {
        g: obs.matrix("G")?,
        m: obs.matrix("M")?,
        l: obs.matrix("L")?,
        f: obs.matrix("F")?,
        poles: obs.poles(),
        achieved: Vec::new(),
        max_pole_error: f64::NAN,
    };
    let xhat0 = sc.xhat0().unwrap_or_else(|| DVector::zeros(sys.n()));
    let cmp = sim_engine::oracle_deviation(
        &sys,
        &gains,
        &real,
        &sc.inputs(sys.m())?,
        &sc.x0(),
        &xhat0,
        tf,
        h,
    )?;
    let pass = cmp.max_deviation <= dev_tol;
    let mut text = String::new();
    let _ = writeln!(text, "horizon {tf}, dt {h}");
    let _ = writeln!(text, "initial deviation = {:.3e}", cmp.initial_deviation);
    let _ = writeln!(
        text,
        "max |Q x_hat_oracle - x_bar| = {:.3e} at t = {:.4} (tolerance {dev_tol:e})",
        cmp.max_deviation, cmp.at_time
    );
    let _ = writeln!(text, "{}", if pass { "PASS" } else { "FAIL" });
    let json = json!({
        "max_deviation": cmp.max_deviation,
        "at_time": cmp.at_time,
        "initial_deviation": cmp.initial_deviation,
        "tolerance": dev_tol,
        "pass": pass,
    });
    Ok(Report {
        text,
        json,
        code: if pass { EXIT_OK } else { EXIT_NUMERICAL },
    })
}
