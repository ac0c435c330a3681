use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;

use roughsens::crp::canonical_crp;
use roughsens::drivers::{DriverKind, DriverSpec};
use roughsens::fields::{parse_field, Elementwise, Field};
use roughsens::io::{rough_path_to_json, write_atomic, write_path_csv, ControlledPathFile};
use roughsens::rde::{solve_rough_path, solve_young, SolveSpec};
use roughsens::sensitivity::{
    invertibility_check, jacobian_fd, jacobian_flow, perturbation_response, relative_gap, Direction, PerturbationKind,
    PerturbationSpec, Problem,
};
use roughsens::verify::verify_suite;
use roughsens::{ControlFn, DiscretePath, RoughPath};

use crate::config::{Command, Format, Options, RunConfig};

pub const DEFAULT_TOL: f64 = 1e-10;
const DEFAULT_DELTAS: [f64; 3] = [1e-2, 1e-3, 1e-4];
const FD_STEP: f64 = 1e-5;

/// Raised when the invariant suite reports a failure.
#[derive(Debug)]
pub struct VerifyFailed(pub Vec<String>);

impl fmt::Display for VerifyFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "verification failed: {}", self.0.join(", "))
    }
}

impl std::error::Error for VerifyFailed {}

/// Fills every unset option that has a default, so the echoed config is complete.
pub fn resolve(command: Command, opts: Options) -> Result<RunConfig> {
    let mut o = opts;
    if o.driver.is_none() {
        o.driver = Some(match command {
            Command::Fbm => "fbm:H=0.4".to_string(),
            _ => "smooth-poly".to_string(),
        });
    }
    let driver = driver_spec(&o)?;
    if o.p.is_none() {
        o.p = Some(default_p(&driver));
    }
    if o.out.is_none() {
        o.out = Some(PathBuf::from("roughsens-out").join(command.name()));
    }
    if o.format.is_none() {
        o.format = Some(Format::Csv);
    }
    let uses_field = matches!(command, Command::Solve | Command::Jacobian | Command::Scan);
    if uses_field {
        if o.field.is_none() {
            o.field = Some("linear:lambda=0.5".to_string());
        }
        if o.tol.is_none() {
            o.tol = Some(DEFAULT_TOL);
        }
    }
    if command == Command::Scan {
        if o.deltas.is_none() {
            o.deltas = Some(DEFAULT_DELTAS.to_vec());
        }
        if o.kind.is_none() {
            o.kind = Some("initial".to_string());
        }
    }
    Ok(RunConfig { command, options: o })
}

/// `1/H` plus a margin for random drivers, 2.2 otherwise.
fn default_p(d: &DriverSpec) -> f64 {
    if d.kind.is_random() {
        (1.0 / d.hurst + 0.2).min(2.95)
    } else {
        2.2
    }
}

fn driver_spec(o: &Options) -> Result<DriverSpec> {
    let text = o.driver.as_deref().unwrap_or("smooth-poly");
    let mut d: DriverSpec = text.parse().with_context(|| format!("bad driver `{text}`"))?;
    if let Some(n) = o.n {
        d.n = n;
    }
    if let Some(seed) = o.seed {
        d.seed = seed;
    }
    d.validate()?;
    Ok(d)
}

pub struct Outputs {
    prefix: PathBuf,
    pub files: Vec<PathBuf>,
}

impl Outputs {
    fn new(prefix: &Path) -> Result<Self> {
        if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        }
        Ok(Self {
            prefix: prefix.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, suffix: &str) -> PathBuf {
        let mut s = self.prefix.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    }

    fn write(&mut self, suffix: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(suffix);
        write_atomic(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        self.files.push(path.clone());
        Ok(path)
    }

    fn json(&mut self, suffix: &str, value: &impl Serialize) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(suffix, text.as_bytes())
    }

    fn path_file(&mut self, stem: &str, x: &DiscretePath, format: Format) -> Result<PathBuf> {
        match format {
            Format::Csv => {
                let mut buf = Vec::new();
                write_path_csv(x, &mut buf)?;
                self.write(&format!(".{stem}.csv"), &buf)
            }
            Format::Json => {
                let value = json!({
                    "t": x.grid().times(),
                    "x": x.values().iter().map(|v| v.as_slice().to_vec()).collect::<Vec<_>>(),
                });
                self.json(&format!(".{stem}.json"), &value)
            }
        }
    }
}

pub fn prefix(cfg: &RunConfig) -> PathBuf {
    cfg.options.out.clone().unwrap_or_else(|| PathBuf::from("roughsens-out").join(cfg.command.name()))
}

/// Runs a resolved config, recording every file written in `out`.
pub fn execute(cfg: &RunConfig, out: &mut Option<Outputs>) -> Result<()> {
    let o = &cfg.options;
    *out = Some(Outputs::new(&prefix(cfg))?);
    let out = out.as_mut().unwrap();
    let format = o.format.unwrap_or_default();
    match cfg.command {
        Command::Verify => verify(out),
        Command::Fbm => {
            let d = driver_spec(o)?;
            if !d.kind.is_random() {
                bail!(roughsens::Error::InvalidParameter(format!(
                    "fbm samples random drivers (fbm, bm), got {}",
                    d.kind.name()
                )));
            }
            let x = d.path()?;
            let file = out.path_file("path", &x, format)?;
            println!("wrote {}", file.display());
            Ok(())
        }
        Command::Lift => {
            let d = driver_spec(o)?;
            let x = rough(&d, p_of(o)?)?;
            let rough_file = out.write(".rough.json", rough_path_to_json(&x)?.as_bytes())?;
            out.path_file("trace", &x.trace(), format)?;
            let norm = roughsens::tensor::rough_norm(&x)?;
            println!("rough norm {:.6e} (level 1 {:.6e}, level 2 {:.6e})", norm.value(), norm.level1, norm.level2);
            println!("wrote {}", rough_file.display());
            Ok(())
        }
        Command::Solve => solve(o, out, format),
        Command::Jacobian => jacobian(o, out, format),
        Command::Scan => scan(o, out),
    }
}

fn p_of(o: &Options) -> Result<f64> {
    o.p.ok_or_else(|| anyhow!("p unresolved"))
}

fn rough(d: &DriverSpec, p: f64) -> Result<RoughPath> {
    if !(2.0..3.0).contains(&p) {
        bail!(roughsens::Error::Regime(format!("the level-2 lift needs p in [2, 3), got {p}")));
    }
    d.validate_for_rough_solver()?;
    Ok(d.rough_path(p)?)
}

fn field_of(o: &Options) -> Result<Field> {
    let text = o.field.as_deref().unwrap_or("linear:lambda=0.5");
    parse_field(text).with_context(|| format!("bad field `{text}`"))
}

fn initial_point(o: &Options, f: &Field) -> Result<DVector<f64>> {
    let n = f.input_dim();
    match &o.a {
        None => Ok(DVector::from_element(n, 1.0)),
        Some(a) if a.len() == n => Ok(DVector::from_column_slice(a)),
        Some(a) => bail!(roughsens::Error::DimensionMismatch(format!(
            "initial point has {} entries, field `{}` needs {n}",
            a.len(),
            f.name()
        ))),
    }
}

fn solve_spec(o: &Options, a: DVector<f64>) -> SolveSpec {
    SolveSpec::new(a).with_tol(o.tol.unwrap_or(DEFAULT_TOL))
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn print_terminal(y: &DVector<f64>) {
    let parts: Vec<String> = y.iter().map(|v| roughsens::io::fmt_g17(*v)).collect();
    println!("yT = [{}]", parts.join(", "));
}

fn solve(o: &Options, out: &mut Outputs, format: Format) -> Result<()> {
    let d = driver_spec(o)?;
    let f = field_of(o)?;
    let spec = solve_spec(o, initial_point(o, &f)?);
    let p = p_of(o)?;
    if p < 2.0 {
        if d.kind == DriverKind::PureArea {
            bail!(roughsens::Error::Regime("a pure-area driver has no Young regime; use p in [2, 3)".into()));
        }
        let x = d.path()?;
        let sol = solve_young(f.as_ref(), &x, p, &ControlFn::Difference, &spec)?;
        warn_all(&sol.warnings);
        out.path_file("solution", &sol.y, format)?;
        out.json(".report.json", &sol.report(p, &ControlFn::Difference)?)?;
        print_terminal(sol.terminal());
        return Ok(());
    }
    let x = Arc::new(rough(&d, p)?);
    let sol = solve_rough_path(f.as_ref(), &x, &spec)?;
    warn_all(&sol.warnings);
    out.path_file("solution", &sol.y.path(), format)?;
    out.json(".report.json", &sol.report()?)?;
    let rough_file = out.write(".rough.json", rough_path_to_json(&x)?.as_bytes())?;
    let rough_ref = rough_file.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.json(".crp.json", &ControlledPathFile::from_crp(&sol.y, rough_ref))?;
    print_terminal(sol.terminal());
    Ok(())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn jacobian(o: &Options, out: &mut Outputs, format: Format) -> Result<()> {
    let d = driver_spec(o)?;
    let f = field_of(o)?;
    let a = initial_point(o, &f)?;
    let spec = solve_spec(o, a.clone());
    let x = Arc::new(rough(&d, p_of(o)?)?);
    let z = canonical_crp(x.clone());
    let last = x.grid().steps();
    let jf = jacobian_flow(&f, &z, &a, 0, last, &spec)?;
    let fd = jacobian_fd(f.as_ref(), &z, &a, 0, last, FD_STEP, &spec)?;
    let gap = jf.m.iter().zip(&fd).map(|(m, e)| relative_gap(m, e)).fold(0.0, f64::max);
    let inv = invertibility_check(&f, &z, &a, 0, last, &spec)?;
    // row-major vec(M) per instant
    let flat = DiscretePath::new(
        jf.grid.clone(),
        jf.m.iter().map(|m| DVector::from_iterator(m.len(), m.transpose().iter().copied())).collect(),
    )?;
    out.path_file("jacobian", &flat, format)?;
    let report = json!({
        "terminal": rows(jf.terminal()),
        "fd_terminal": rows(fd.last().unwrap()),
        "fd_step": FD_STEP,
        "relative_gap": gap,
        "invertibility": inv,
    });
    out.json(".report.json", &report)?;
    println!("relative gap to central differences {gap:.3e}");
    Ok(())
}

fn direction(kind: &PerturbationKind, o: &Options, f: &Field, x: &RoughPath) -> Result<Direction> {
    Ok(match kind {
        PerturbationKind::InitialPoint => {
            let n = f.input_dim();
            Direction::Vector(DVector::from_element(n, 1.0 / (n as f64).sqrt()))
        }
        PerturbationKind::FieldDirection => match &o.direction {
            Some(text) => Direction::Field(parse_field(text).with_context(|| format!("bad direction `{text}`"))?),
            None => {
                let (n, du) = (f.input_dim(), f.driver_dim());
                let g = Elementwise::linear(vec![DMatrix::zeros(n, n); du], Some(DMatrix::from_element(n, du, 1.0)))?;
                Direction::Field(Arc::new(g))
            }
        },
        PerturbationKind::Dilation => Direction::None,
        PerturbationKind::Translation => {
            let (du, horizon) = (x.dim(), x.grid().horizon());
            let h = DiscretePath::from_fn(x.grid().clone(), |t| {
                DVector::from_fn(du, |k, _| (std::f64::consts::PI * (k + 1) as f64 * t / horizon).sin())
            })?;
            Direction::Path { h, q: 1.0 }
        }
    })
}

fn scan(o: &Options, out: &mut Outputs) -> Result<()> {
    let d = driver_spec(o)?;
    let f = field_of(o)?;
    let spec = solve_spec(o, initial_point(o, &f)?);
    let x = Arc::new(rough(&d, p_of(o)?)?);
    let kind: PerturbationKind = o.kind.as_deref().unwrap_or("initial").parse()?;
    let pert = PerturbationSpec {
        direction: direction(&kind, o, &f, &x)?,
        kind,
        sizes: o.deltas.clone().unwrap_or_else(|| DEFAULT_DELTAS.to_vec()),
    };
    let report = perturbation_response(&Problem { f, x, spec }, &pert)?;
    for flag in &report.flags {
        eprintln!("warning: {flag}");
    }
    out.json(".scan.json", &report)?;
    println!("{} slope {:.4} (r2 {:.4})", report.kind, report.slope, report.r2);
    Ok(())
}

fn verify(out: &mut Outputs) -> Result<()> {
    let report = verify_suite();
    out.json(".verify.json", &report)?;
    for c in &report.checks {
        println!("{} {}", if c.passed { "pass" } else { "FAIL" }, c.name);
    }
    if !report.passed {
        bail!(VerifyFailed(report.failures().map(|c| c.name.clone()).collect()));
    }
    Ok(())
}
