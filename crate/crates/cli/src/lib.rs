//! `rearr`: batch interface over `rearr-core` with JSON reports on stdout.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rearr_core::appendix::{boyd_ratio_probe, dilation_operator_lower_probe, phi_csv, ratio_csv, separation_report, BmOrlicz};
use rearr_core::dilation::{certificate, split_preserving_phi, Governing};
use rearr_core::orbitlab::{convexify_bm, DEFAULT_TERM_BUDGET};
use rearr_core::rational::parse_q;
use rearr_core::spaces::norm_f64;
use rearr_core::transport::{approx_average_by_shifts, approx_dominated, approx_restriction, choose_shift_n};
use rearr_core::{
    bm_decompose, classify_extreme, dilate, majorizes, norm, orbit_approximate, orbit_member, partial_average,
    phi_estimate, submajorizes, AveragingScheme, DomainKind, Error, IntervalUnion, OrbitKind, PhiKind, Space,
    SpaceSpec, StepFunction,
};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod exit {
    pub const OK: i32 = 0;
    pub const NEGATIVE: i32 = 1;
    pub const INVALID: i32 = 2;
    pub const PRECONDITION: i32 = 3;
    pub const NUMERIC: i32 = 4;
}

#[derive(Parser, Debug)]
#[command(name = "rearr", version, about = "Exact rearrangement calculus on step functions")]
pub struct Cli {
    /// Seed recorded in the report.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Largest dyadic exponent sampled by phi estimators.
    #[arg(long, global = true, default_value_t = 20)]
    pub jmax: u32,
    /// Target accuracy of approximation commands.
    #[arg(long, global = true, default_value_t = 1e-2)]
    pub eps: f64,
    /// Term-count budget of approximation commands.
    #[arg(long, global = true, default_value_t = DEFAULT_TERM_BUDGET)]
    pub budget: u64,
    /// Proceed when the dilation functional is not certified to vanish.
    #[arg(long = "override-phi", global = true)]
    pub override_phi: bool,
    /// Pretty-print the JSON report.
    #[arg(long, global = true)]
    pub pretty: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct SpaceArg {
    /// SpaceSpec JSON file.
    #[arg(long)]
    pub space: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Decreasing rearrangement f*.
    Rearrange { f: PathBuf },
    /// Submajorization or majorization checks.
    Majorize {
        #[command(subcommand)]
        action: MajorizeCmd,
    },
    /// Norm of f in a symmetric space.
    Norm {
        #[command(flatten)]
        space: SpaceArg,
        f: PathBuf,
    },
    /// Dilation σ_τ f.
    Dilate {
        #[arg(long)]
        tau: String,
        f: PathBuf,
    },
    /// Conditional expectation P(f|𝒜).
    Average {
        /// Averaging scheme JSON: list of interval unions.
        #[arg(long)]
        scheme: PathBuf,
        f: PathBuf,
    },
    /// Dilation functional estimate.
    Phi {
        #[command(flatten)]
        space: SpaceArg,
        #[arg(long, default_value = "phi")]
        kind: String,
        f: PathBuf,
    },
    /// Split f* into y + z along dyadic blocks.
    SplitPhi {
        #[command(flatten)]
        space: SpaceArg,
        #[arg(long, default_value = "phi")]
        kind: String,
        f: PathBuf,
    },
    /// P(f|𝒜) by cyclic shifts.
    ShiftApprox {
        #[command(flatten)]
        space: SpaceArg,
        #[arg(long)]
        scheme: PathBuf,
        /// Shift count; chosen from --eps and --budget when absent.
        #[arg(long)]
        n: Option<u64>,
        f: PathBuf,
    },
    /// f·χ_A by rearrangements of f.
    RestrictApprox {
        #[command(flatten)]
        space: SpaceArg,
        /// Interval union JSON.
        #[arg(long)]
        set: PathBuf,
        #[arg(long, default_value_t = 16)]
        n: u64,
        f: PathBuf,
    },
    /// z ≤ y by restriction-type terms of y.
    DominateApprox {
        #[command(flatten)]
        space: SpaceArg,
        #[arg(long, default_value_t = 8)]
        n: u64,
        #[arg(long, default_value_t = 4)]
        rounds: u32,
        y: PathBuf,
        z: PathBuf,
    },
    /// Interval pairing of rearranged x, y with y ≺≺ x.
    BmDecompose {
        /// Also round the pairing to n levels in this space.
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long)]
        levels: Option<u64>,
        x: PathBuf,
        y: PathBuf,
    },
    /// y as a convex combination of orbit extreme points.
    OrbitApprox {
        #[command(flatten)]
        space: SpaceArg,
        #[arg(long, default_value = "prime")]
        kind: String,
        x: PathBuf,
        y: PathBuf,
    },
    /// Orbit membership and extreme-point test.
    Extreme {
        #[arg(long, default_value = "prime")]
        kind: String,
        x: PathBuf,
        y: PathBuf,
    },
    /// Orlicz counterexample and probes.
    Appendix {
        #[command(subcommand)]
        action: AppendixCmd,
    },
}

#[derive(Subcommand, Debug)]
pub enum MajorizeCmd {
    Check {
        #[arg(long, default_value = "submaj")]
        relation: String,
        x: PathBuf,
        y: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum AppendixCmd {
    /// φ samples against Boyd ratios for the iterated-exponential Orlicz function.
    SeparationReport {
        #[arg(long = "K", default_value_t = 3)]
        k: usize,
        /// Directory for phi.csv and ratio.csv.
        #[arg(long)]
        csv_dir: Option<PathBuf>,
    },
    /// M(a_2n) / (M(a_2n / n)·n^p).
    Boyd {
        #[arg(long = "K", default_value_t = 4)]
        k: usize,
        #[arg(long)]
        n: u32,
        #[arg(long)]
        p: f64,
    },
    /// max ‖σ_τ w‖ / (τ‖w‖) over witness files.
    DilationProbe {
        #[command(flatten)]
        space: SpaceArg,
        #[arg(long)]
        tau: String,
        #[arg(required = true)]
        witnesses: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommandReport {
    pub command: String,
    pub input_digest: String,
    pub outputs: Value,
    pub measured_errors: BTreeMap<String, f64>,
    pub certificates: Vec<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub version: String,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorReport>,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: String,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Domain(_) => (exit::INVALID, "domain"),
            Error::Parse(_) => (exit::INVALID, "parse"),
            Error::NotInSpace(_) => (exit::INVALID, "not_in_space"),
            Error::Precondition(_) => (exit::PRECONDITION, "precondition"),
            Error::PhiNotVanishing(_) => (exit::PRECONDITION, "phi_not_vanishing"),
            Error::Unsupported(_) => (exit::PRECONDITION, "unsupported"),
            Error::Numeric(_) => (exit::NUMERIC, "numeric"),
            Error::BudgetExceeded { .. } => (exit::NUMERIC, "budget_exceeded"),
            Error::Range(_) => (exit::NUMERIC, "range"),
            Error::Invariant(_) => (exit::NUMERIC, "invariant"),
        };
        Failure { code, kind: kind.into(), message: e.to_string() }
    }
}

fn invalid(kind: &str, message: impl Into<String>) -> Failure {
    Failure { code: exit::INVALID, kind: kind.into(), message: message.into() }
}

/// Files read by a command, hashed in order.
#[derive(Default)]
struct Inputs {
    hasher: Sha256,
}

impl Inputs {
    fn read(&mut self, path: &Path) -> Result<Vec<u8>, Failure> {
        let bytes = std::fs::read(path).map_err(|e| invalid("io", format!("{}: {e}", path.display())))?;
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(&bytes);
        Ok(bytes)
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self, path: &Path) -> Result<T, Failure> {
        let bytes = self.read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| invalid("parse", format!("{}: {e}", path.display())))
    }

    fn function(&mut self, path: &Path) -> Result<StepFunction, Failure> {
        self.json(path)
    }

    /// SpaceSpec JSON; the domain comes from an optional `"domain"` field or
    /// from the functions it is used with.
    fn space(&mut self, path: &Path, domain: DomainKind) -> Result<SpaceSpec, Failure> {
        let mut v: Value = self.json(path)?;
        let declared = match v.as_object_mut().and_then(|m| m.remove("domain")) {
            Some(d) => Some(serde_json::from_value::<DomainKind>(d).map_err(|e| invalid("parse", e.to_string()))?),
            None => None,
        };
        if declared.is_some_and(|d| d != domain) {
            return Err(invalid("domain", "space domain differs from the domain of the inputs"));
        }
        let space: Space = serde_json::from_value(v).map_err(|e| invalid("parse", format!("{}: {e}", path.display())))?;
        Ok(SpaceSpec::new(space, domain)?)
    }

    fn digest(self) -> String {
        self.hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn rational(s: &str) -> Result<rearr_core::Q, Failure> {
    parse_q(s).map_err(|e| invalid("parse", e.to_string()))
}

fn parsed<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, Failure> {
    s.parse().map_err(Failure::from)
}

fn to_value<T: Serialize>(t: &T) -> Value {
    serde_json::to_value(t).expect("report types serialize")
}

/// What a command produced before it is wrapped into a report.
#[derive(Default)]
struct Outcome {
    outputs: Value,
    errors: BTreeMap<String, f64>,
    certificates: Vec<Value>,
    negative: bool,
}

impl Outcome {
    fn new(outputs: Value) -> Self {
        Outcome { outputs, ..Default::default() }
    }

    fn error(mut self, name: &str, v: f64) -> Self {
        self.errors.insert(name.into(), v);
        self
    }

    fn cert<T: Serialize>(mut self, c: &T) -> Self {
        self.certificates.push(to_value(c));
        self
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Rearrange { .. } => "rearrange",
        Command::Majorize { .. } => "majorize",
        Command::Norm { .. } => "norm",
        Command::Dilate { .. } => "dilate",
        Command::Average { .. } => "average",
        Command::Phi { .. } => "phi",
        Command::SplitPhi { .. } => "split-phi",
        Command::ShiftApprox { .. } => "shift-approx",
        Command::RestrictApprox { .. } => "restrict-approx",
        Command::DominateApprox { .. } => "dominate-approx",
        Command::BmDecompose { .. } => "bm-decompose",
        Command::OrbitApprox { .. } => "orbit-approx",
        Command::Extreme { .. } => "extreme",
        Command::Appendix { action } => match action {
            AppendixCmd::SeparationReport { .. } => "appendix separation-report",
            AppendixCmd::Boyd { .. } => "appendix boyd",
            AppendixCmd::DilationProbe { .. } => "appendix dilation-probe",
        },
    }
}

fn execute(cli: &Cli, inp: &mut Inputs) -> Result<Outcome, Failure> {
    match &cli.command {
        Command::Rearrange { f } => {
            let f = inp.function(f)?;
            Ok(Outcome::new(json!({ "rearranged": f.rearrange() })))
        }
        Command::Majorize { action: MajorizeCmd::Check { relation, x, y } } => {
            let (x, y) = (inp.function(x)?, inp.function(y)?);
            let holds = match relation.as_str() {
                "submaj" => submajorizes(&x, &y)?,
                "maj" => majorizes(&x, &y)?,
                r => return Err(invalid("parse", format!("unknown relation {r:?}"))),
            };
            let mut o = Outcome::new(json!({ "relation": relation, "holds": holds }));
            o.negative = !holds;
            Ok(o)
        }
        Command::Norm { space, f } => {
            let f = inp.function(f)?;
            let e = inp.space(&space.space, f.domain())?;
            Ok(Outcome::new(json!({ "space": e.space, "domain": e.domain, "norm": norm(&e, &f)? })))
        }
        Command::Dilate { tau, f } => {
            let f = inp.function(f)?;
            Ok(Outcome::new(json!({ "tau": tau, "dilated": dilate(&f, &rational(tau)?)? })))
        }
        Command::Average { scheme, f } => {
            let f = inp.function(f)?;
            let scheme: AveragingScheme = inp.json(scheme)?;
            Ok(Outcome::new(json!({ "average": partial_average(&f, &scheme)? })))
        }
        Command::Phi { space, kind, f } => {
            let f = inp.function(f)?;
            let e = inp.space(&space.space, f.domain())?;
            let kind: PhiKind = parsed(kind)?;
            let est = phi_estimate(&e, &f, kind, cli.jmax)?;
            let functional = if kind == PhiKind::PhiFin { Governing::PhiFin } else { Governing::Phi };
            let cert = certificate(&e, functional, false);
            Ok(Outcome::new(to_value(&est)).cert(&cert))
        }
        Command::SplitPhi { space, kind, f } => {
            let f = inp.function(f)?;
            let e = inp.space(&space.space, f.domain())?;
            let (y, z, report) = split_preserving_phi(&e, &f, parsed(kind)?)?;
            let residual = norm_f64(&e, &f.sub(&y.add(&z)?)?)?;
            Ok(Outcome::new(json!({ "y": y, "z": z, "report": report })).error("residual", residual))
        }
        Command::ShiftApprox { space, scheme, n, f } => {
            let f = inp.function(f)?;
            let e = inp.space(&space.space, f.domain())?;
            let scheme: AveragingScheme = inp.json(scheme)?;
            let n = match n {
                Some(n) => *n,
                None => choose_shift_n(&e, &f, &scheme, cli.eps, cli.budget)?.0,
            };
            let (combo, report) = approx_average_by_shifts(&e, &f, &scheme, n)?;
            Ok(Outcome::new(json!({ "combination": combo, "report": report }))
                .error("measured", report.measured_error)
                .error("certified_bound", report.certified_bound))
        }
        Command::RestrictApprox { space, set, n, f } => {
            let f = inp.function(f)?;
            let e = inp.space(&space.space, f.domain())?;
            let set: IntervalUnion = inp.json(set)?;
            let cert = certificate(&e, Governing::Phi, cli.override_phi);
            let (combo, report) = approx_restriction(&e, &f, &set, *n, cli.override_phi)?;
            Ok(Outcome::new(json!({ "combination": combo, "report": report }))
                .error("measured", report.measured_error)
                .error("certified_bound", report.certified_bound)
                .cert(&cert))
        }
        Command::DominateApprox { space, n, rounds, y, z } => {
            let (y, z) = (inp.function(y)?, inp.function(z)?);
            let e = inp.space(&space.space, y.domain())?;
            let cert = certificate(&e, Governing::Phi, cli.override_phi);
            let (combo, report) = approx_dominated(&e, &y, &z, *n, *rounds, cli.override_phi)?;
            Ok(Outcome::new(json!({ "combination": combo, "report": report }))
                .error("measured", report.measured_error)
                .error("certified_bound", report.certified_bound)
                .cert(&cert))
        }
        Command::BmDecompose { space, levels, x, y } => {
            let (x, y) = (inp.function(x)?, inp.function(y)?);
            let pairings = bm_decompose(&x, &y)?;
            let mut out = json!({ "pairings": pairings });
            let mut errors = BTreeMap::new();
            if let Some(path) = space {
                let e = inp.space(path, x.domain())?;
                let n = levels.unwrap_or_else(|| (2.0 * norm_f64(&e, &x).unwrap_or(0.0) / cli.eps).ceil().max(1.0) as u64);
                let (combo, report) = convexify_bm(&e, &x, &y, &pairings, n)?;
                errors.insert("rounding".into(), report.measured_error);
                out["rounding"] = json!({ "combination": combo, "report": report });
            }
            Ok(Outcome { outputs: out, errors, ..Default::default() })
        }
        Command::OrbitApprox { space, kind, x, y } => {
            let (x, y) = (inp.function(x)?, inp.function(y)?);
            let e = inp.space(&space.space, x.domain())?;
            let kind: OrbitKind = parsed(kind)?;
            let (combo, report) = orbit_approximate(&e, &x, &y, kind, cli.eps, cli.override_phi, cli.budget)?;
            let mut o = Outcome::new(json!({ "combination": combo, "report": report }))
                .error("measured", report.measured_error)
                .error("certified_bound", report.certified_bound)
                .cert(&report.certificate);
            for s in &report.stages {
                o = o.error(&format!("{}.measured", s.name), s.measured_error);
            }
            Ok(o)
        }
        Command::Extreme { kind, x, y } => {
            let (x, y) = (inp.function(x)?, inp.function(y)?);
            let kind: OrbitKind = parsed(kind)?;
            let member = orbit_member(&x, &y, kind)?;
            if !member {
                let mut o = Outcome::new(json!({ "kind": kind, "member": false, "extreme": false }));
                o.negative = true;
                return Ok(o);
            }
            let extreme = classify_extreme(&x, &y, kind)?;
            let mut o = Outcome::new(json!({ "kind": kind, "member": true, "extreme": extreme }));
            o.negative = !extreme;
            Ok(o)
        }
        Command::Appendix { action } => appendix(cli, action, inp),
    }
}

fn appendix(cli: &Cli, action: &AppendixCmd, inp: &mut Inputs) -> Result<Outcome, Failure> {
    match action {
        AppendixCmd::SeparationReport { k, csv_dir } => {
            let r = separation_report(*k, cli.jmax)?;
            let mut out = json!({ "report": r });
            if let Some(dir) = csv_dir {
                std::fs::create_dir_all(dir).map_err(|e| invalid("io", e.to_string()))?;
                let phi = dir.join("phi.csv");
                let ratio = dir.join("ratio.csv");
                std::fs::write(&phi, phi_csv(&r)).map_err(|e| invalid("io", e.to_string()))?;
                std::fs::write(&ratio, ratio_csv(&r)).map_err(|e| invalid("io", e.to_string()))?;
                out["csv"] = json!({ "phi": phi.display().to_string(), "ratio": ratio.display().to_string() });
            }
            let mut o = Outcome::new(out);
            o.negative = !r.passed;
            Ok(o)
        }
        AppendixCmd::Boyd { k, n, p } => {
            let m = BmOrlicz::new(*k)?;
            Ok(Outcome::new(json!({ "probe": boyd_ratio_probe(&m, *n, *p)? })))
        }
        AppendixCmd::DilationProbe { space, tau, witnesses } => {
            let ws = witnesses.iter().map(|w| inp.function(w)).collect::<Result<Vec<_>, _>>()?;
            let domain = ws[0].domain();
            let e = inp.space(&space.space, domain)?;
            let tau = rational(tau)?;
            let lower = dilation_operator_lower_probe(&e, &tau, &ws)?;
            Ok(Outcome::new(json!({ "lower_bound": lower, "tau": rearr_core::rational::fmt_q(&tau) })))
        }
    }
}

/// Runs one parsed invocation, returning the exit code and the report.
pub fn run(cli: &Cli) -> (i32, CommandReport) {
    let mut inp = Inputs::default();
    let result = execute(cli, &mut inp);
    let mut report = CommandReport {
        command: command_name(&cli.command).into(),
        input_digest: String::new(),
        outputs: Value::Null,
        measured_errors: BTreeMap::new(),
        certificates: Vec::new(),
        seed: cli.seed,
        version: VERSION.into(),
        exit_code: exit::OK,
        error: None,
    };
    match result {
        Ok(o) => {
            report.outputs = o.outputs;
            report.measured_errors = o.errors;
            report.certificates = o.certificates;
            report.exit_code = if o.negative { exit::NEGATIVE } else { exit::OK };
        }
        Err(f) => {
            report.exit_code = f.code;
            report.error = Some(ErrorReport { kind: f.kind, message: f.message });
        }
    }
    report.input_digest = inp.digest();
    (report.exit_code, report)
}

/// Parses `argv`, runs the command and prints the report.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::INVALID } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    let (code, report) = run(&cli);
    if let Some(err) = &report.error {
        eprintln!("rearr {}: {}", report.command, err.message);
    }
    let text = if cli.pretty { serde_json::to_string_pretty(&report) } else { serde_json::to_string(&report) };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", text.expect("report serializes"));
    code
}
