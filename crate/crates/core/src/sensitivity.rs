//! Derivatives of the solution map in the initial point, the vector field
//! and the driver, with flow and cocycle checks and exponent scans.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crp::{canonical_crp, crp_distance, ControlledPath};
use crate::error::{Error, Result};
use crate::fields::{DirectionAugmented, Field, JacobianAugmented, Perturbed, VectorField};
use crate::grid::{DiscretePath, Grid};
use crate::linalg;
use crate::rde::{solve_rough, RoughSolution, SolveSpec};
use crate::stats::loglog;
use crate::tensor::{dilate, translate, RoughPath};

fn check_window(z: &ControlledPath, r: usize, t: usize) -> Result<()> {
    if r > t || t >= z.len() {
        return Err(Error::param(format!("window [{r}, {t}] outside 0..{}", z.len())));
    }
    Ok(())
}

fn window_spec(spec: &SolveSpec, a: DVector<f64>, r: usize, t: usize) -> Result<SolveSpec> {
    let mut s = spec.restarted(a);
    s.b = spec.b.as_ref().map(|b| b.restrict(r, t)).transpose()?;
    Ok(s)
}

/// `y_{·,r}(a)` on `[t_r, t_t]`.
pub fn flow(f: &dyn VectorField, z: &ControlledPath, a: &DVector<f64>, r: usize, t: usize, spec: &SolveSpec) -> Result<RoughSolution> {
    check_window(z, r, t)?;
    if r == t {
        return Err(Error::param("flow window needs at least one step"));
    }
    let zw = z.restrict(r, t)?;
    solve_rough(f, &zw, None, &window_spec(spec, a.clone(), r, t)?)
}

/// `y_{t,r}(a)`, the identity when `r = t`.
pub fn flow_endpoint(f: &dyn VectorField, z: &ControlledPath, a: &DVector<f64>, r: usize, t: usize, spec: &SolveSpec) -> Result<DVector<f64>> {
    check_window(z, r, t)?;
    if r == t {
        return Ok(a.clone());
    }
    Ok(flow(f, z, a, r, t, spec)?.terminal().clone())
}

/// `D_a y_{·,r}(a)` on `[t_r, t_t]` alongside the base solution.
#[derive(Clone, Debug)]
pub struct JacobianFlow {
    pub grid: Grid,
    pub y: Vec<DVector<f64>>,
    pub m: Vec<DMatrix<f64>>,
}

impl JacobianFlow {
    pub fn terminal(&self) -> &DMatrix<f64> {
        self.m.last().unwrap()
    }
}

/// Solves `M_t = Id + ∫_r^t Df(y_s) M_s dz_s` together with `y`.
pub fn jacobian_flow(f: &Field, z: &ControlledPath, a: &DVector<f64>, r: usize, t: usize, spec: &SolveSpec) -> Result<JacobianFlow> {
    check_window(z, r, t)?;
    let n = a.len();
    if r == t {
        return Err(Error::param("Jacobian window needs at least one step"));
    }
    let aug = JacobianAugmented::new(f.clone())?;
    let mut init = a.as_slice().to_vec();
    init.extend(linalg::flatten(&DMatrix::<f64>::identity(n, n)).iter());
    let mut s = window_spec(spec, DVector::from_vec(init), r, t)?;
    s.b = s.b.map(|b| b.map(|v| v.clone().resize_vertically(n + n * n, 0.0))).transpose()?;
    let zw = z.restrict(r, t)?;
    let sol = solve_rough(&aug, &zw, None, &s)?;
    let (y, m) = sol
        .y
        .values()
        .iter()
        .map(|v| (v.rows(0, n).into_owned(), DMatrix::from_row_slice(n, n, &v.as_slice()[n..])))
        .unzip();
    Ok(JacobianFlow {
        grid: zw.grid().clone(),
        y,
        m,
    })
}

/// Central differences `(y(a + δe_i) − y(a − δe_i)) / 2δ` at every instant of `[t_r, t_t]`.
pub fn jacobian_fd(
    f: &dyn VectorField,
    z: &ControlledPath,
    a: &DVector<f64>,
    r: usize,
    t: usize,
    delta: f64,
    spec: &SolveSpec,
) -> Result<Vec<DMatrix<f64>>> {
    check_window(z, r, t)?;
    if !(delta > 0.0) {
        return Err(Error::param(format!("difference step must be positive, got {delta}")));
    }
    let n = a.len();
    if r == t {
        return Ok(vec![DMatrix::identity(n, n)]);
    }
    let cols = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut e = DVector::zeros(n);
            e[i] = delta;
            let up = flow(f, z, &(a + &e), r, t, spec)?;
            let down = flow(f, z, &(a - &e), r, t, spec)?;
            Ok(up
                .y
                .values()
                .iter()
                .zip(down.y.values())
                .map(|(u, d)| (u - d) / (2.0 * delta))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..=t - r)
        .map(|k| DMatrix::from_fn(n, n, |row, col| cols[col][k][row]))
        .collect())
}

/// `‖A − B‖_op / ‖A‖_op`, or the absolute gap when `A = 0`.
pub fn relative_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = linalg::op_norm(a);
    let gap = linalg::op_norm(&(a - b));
    if scale > 0.0 {
        gap / scale
    } else {
        gap
    }
}

/// `|y_{t,r}(a) − y_{t,s}(y_{s,r}(a))|`.
pub fn flow_compose_check(
    f: &dyn VectorField,
    z: &ControlledPath,
    a: &DVector<f64>,
    (r, s, t): (usize, usize, usize),
    spec: &SolveSpec,
) -> Result<f64> {
    if !(r <= s && s <= t) {
        return Err(Error::param(format!("need r <= s <= t, got ({r}, {s}, {t})")));
    }
    let one = flow_endpoint(f, z, a, r, t, spec)?;
    let mid = flow_endpoint(f, z, a, r, s, spec)?;
    let two = flow_endpoint(f, z, &mid, s, t, spec)?;
    Ok((one - two).norm())
}

/// `‖M_{t,r} − M_{t,s} M_{s,r}‖_op`.
pub fn cocycle_check(f: &Field, z: &ControlledPath, a: &DVector<f64>, (r, s, t): (usize, usize, usize), spec: &SolveSpec) -> Result<f64> {
    if !(r < s && s < t) {
        return Err(Error::param(format!("need r < s < t, got ({r}, {s}, {t})")));
    }
    let whole = jacobian_flow(f, z, a, r, t, spec)?;
    let first = jacobian_flow(f, z, a, r, s, spec)?;
    let ys = first.y.last().unwrap().clone();
    let second = jacobian_flow(f, z, &ys, s, t, spec)?;
    Ok(linalg::op_norm(&(whole.terminal() - second.terminal() * first.terminal())))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvertibilityReport {
    /// `sup_t ‖M_t − Id‖_op` over the window.
    pub gap: f64,
    /// `gap < 1`, so every `M_t` inverts by a Neumann series.
    pub neumann: bool,
    /// `min_t |det M_t|`.
    pub min_abs_det: f64,
    pub det_nonzero: bool,
}

pub fn invertibility_check(f: &Field, z: &ControlledPath, a: &DVector<f64>, r: usize, t: usize, spec: &SolveSpec) -> Result<InvertibilityReport> {
    let jf = jacobian_flow(f, z, a, r, t, spec)?;
    let n = a.len();
    let id = DMatrix::<f64>::identity(n, n);
    let gap = jf.m.iter().map(|m| linalg::op_norm(&(m - &id))).fold(0.0, f64::max);
    let min_abs_det = jf.m.iter().map(|m| m.determinant().abs()).fold(f64::INFINITY, f64::min);
    Ok(InvertibilityReport {
        gap,
        neumann: gap < 1.0,
        min_abs_det,
        det_nonzero: min_abs_det > 0.0,
    })
}

/// Derivative `u` of the solution in the direction `f + εg`, solving
/// `u = ∫ Df(y) u dz + ∫ g(y) dz`.
pub fn field_directional_derivative(f: &Field, g: &Field, z: &ControlledPath, spec: &SolveSpec) -> Result<ControlledPath> {
    let aug = DirectionAugmented::new(f.clone(), g.clone())?;
    let n = spec.a.len();
    let mut s = spec.restarted(spec.a.clone().resize_vertically(2 * n, 0.0));
    s.b = s.b.map(|b| b.map(|v| v.clone().resize_vertically(2 * n, 0.0))).transpose()?;
    let sol = solve_rough(&aug, z, None, &s)?;
    let p = z.rough().p();
    ControlledPath::new(
        z.rough().clone(),
        sol.y.values().iter().map(|v| v.rows(n, n).into_owned()).collect(),
        sol.y.daggers().iter().map(|m| m.rows(n, n).into_owned()).collect(),
        p,
        p / 2.0,
    )
}

/// `(y(f + εg) − y(f − εg)) / 2ε` on the whole grid.
pub fn field_derivative_fd(f: &Field, g: &Field, z: &ControlledPath, eps: f64, spec: &SolveSpec) -> Result<DiscretePath> {
    let up = Perturbed::new(f.clone(), g.clone(), eps)?;
    let down = Perturbed::new(f.clone(), g.clone(), -eps)?;
    let (a, b) = rayon::join(|| solve_rough(&up, z, None, spec), || solve_rough(&down, z, None, spec));
    Ok(a?.y.path().sub(&b?.y.path())?.scale(0.5 / eps))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    /// `a + δ v`.
    InitialPoint,
    /// `f + δ g`.
    FieldDirection,
    /// `𝔡_{1+δ} x`.
    Dilation,
    /// `T_{δh} x`.
    Translation,
}

impl PerturbationKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::InitialPoint => "initial-point",
            Self::FieldDirection => "field-direction",
            Self::Dilation => "dilation",
            Self::Translation => "translation",
        }
    }
}

impl std::str::FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "initial" | "initial-point" => Ok(Self::InitialPoint),
            "field" | "field-direction" => Ok(Self::FieldDirection),
            "dilation" => Ok(Self::Dilation),
            "translation" => Ok(Self::Translation),
            other => Err(Error::Parse(format!(
                "unknown perturbation kind `{other}` (expected initial, field, dilation or translation)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Direction {
    Vector(DVector<f64>),
    Field(Field),
    None,
    Path { h: DiscretePath, q: f64 },
}

#[derive(Clone, Debug)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub direction: Direction,
    pub sizes: Vec<f64>,
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 3 {
            return Err(Error::param(format!("exponent fits need at least 3 sizes, got {}", self.sizes.len())));
        }
        if self.sizes.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::param("perturbation sizes must be positive and finite"));
        }
        if self.sizes.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::param("perturbation sizes must be strictly decreasing"));
        }
        let ok = matches!(
            (&self.kind, &self.direction),
            (PerturbationKind::InitialPoint, Direction::Vector(_))
                | (PerturbationKind::FieldDirection, Direction::Field(_))
                | (PerturbationKind::Dilation, Direction::None)
                | (PerturbationKind::Translation, Direction::Path { .. })
        );
        if !ok {
            return Err(Error::param(format!("direction does not match perturbation kind {}", self.kind.name())));
        }
        Ok(())
    }
}

/// Base problem `y = a + ∫ f(y) dx` over the canonical controlled path of `x`.
#[derive(Clone, Debug)]
pub struct Problem {
    pub f: Field,
    pub x: Arc<RoughPath>,
    pub spec: SolveSpec,
}

impl Problem {
    pub fn solve(&self) -> Result<RoughSolution> {
        solve_rough(self.f.as_ref(), &canonical_crp(self.x.clone()), None, &self.spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub kind: String,
    pub deltas: Vec<f64>,
    /// `‖y_δ − y‖_{x,full}`; `NaN` where the perturbed solve failed.
    pub responses: Vec<f64>,
    pub slope: f64,
    pub r2: f64,
    pub flags: Vec<String>,
    /// Lower regularity exponent guaranteed for the field, when it is below 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
}

impl ScanReport {
    pub fn reliable(&self) -> bool {
        self.flags.is_empty()
    }
}

/// `κ̄γ` with `κ̄ = 1` for fields with a single Hölder derivative.
fn regularity_floor(f: &dyn VectorField) -> Option<f64> {
    let reg = f.regularity();
    (reg.k <= 1 && reg.gamma < 1.0).then_some(reg.gamma)
}

pub fn perturbation_response(problem: &Problem, pert: &PerturbationSpec) -> Result<ScanReport> {
    pert.validate()?;
    let dmin = pert.sizes.iter().copied().fold(f64::INFINITY, f64::min);
    let mut spec = problem.spec.clone();
    spec.tol = spec.tol.min(dmin * dmin / 100.0);
    let base_problem = Problem { spec: spec.clone(), ..problem.clone() };
    let base = base_problem.solve()?;
    let z = canonical_crp(problem.x.clone());
    let outcomes: Vec<Result<f64>> = pert
        .sizes
        .par_iter()
        .map(|&d| {
            let sol = match &pert.direction {
                Direction::Vector(v) => solve_rough(problem.f.as_ref(), &z, None, &spec.restarted(&spec.a + v * d))?,
                Direction::Field(g) => {
                    let fp = Perturbed::new(problem.f.clone(), g.clone(), d)?;
                    solve_rough(&fp, &z, None, &spec)?
                }
                Direction::None => {
                    let x = canonical_crp(Arc::new(dilate(&problem.x, 1.0 + d)));
                    solve_rough(problem.f.as_ref(), &x, None, &spec)?
                }
                Direction::Path { h, q } => {
                    let x = canonical_crp(Arc::new(translate(&problem.x, &h.scale(d), *q)?));
                    solve_rough(problem.f.as_ref(), &x, None, &spec)?
                }
            };
            crp_distance(&sol.y, &base.y)
        })
        .collect();
    let mut flags = Vec::new();
    let mut responses = Vec::with_capacity(outcomes.len());
    for (d, o) in pert.sizes.iter().zip(outcomes) {
        match o {
            Ok(v) => responses.push(v),
            Err(Error::Divergence { .. }) => {
                flags.push(format!("partial: perturbed solve diverged at delta = {d:e}"));
                responses.push(f64::NAN);
            }
            Err(e) => return Err(e),
        }
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pert
        .sizes
        .iter()
        .zip(&responses)
        .filter(|(_, r)| r.is_finite() && **r > 0.0)
        .map(|(d, r)| (*d, *r))
        .unzip();
    let (slope, r2) = if xs.len() >= 2 {
        let fit = loglog(&xs, &ys)?;
        (fit.slope, fit.r2)
    } else {
        flags.push("degenerate: fewer than two positive responses".into());
        (f64::NAN, f64::NAN)
    };
    if r2.is_finite() && r2 < 0.98 {
        flags.push(format!("unreliable fit: r2 = {r2:.4} < 0.98"));
    }
    let floor = regularity_floor(problem.f.as_ref());
    Ok(ScanReport {
        kind: pert.kind.name().into(),
        deltas: pert.sizes.clone(),
        responses,
        slope,
        r2,
        flags,
        floor,
    })
}
