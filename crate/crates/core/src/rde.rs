//! Fixed-point solvers for `y = a + ∫ f(y) dx + b`.
//!
//! Each solver runs a Picard iteration on abutting windows. A window is
//! admitted when the Lipschitz estimate of the Picard map, measured on that
//! window, is below `½`; windows that still fail to converge are halved.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crp::{canonical_crp, crp_integral, crp_norms, crp_omega, full_norm, ControlledPath};
use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::grid::{pvar_norm, ControlFn, DiscretePath, Grid};
use crate::linalg;
use crate::tensor::{dilate, rough_norm, RoughPath};
use crate::young::young_integral;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitPolicy {
    /// Halve a window whose iteration does not converge, down to one step.
    Halve,
    /// Report divergence on the first failure.
    Fail,
}

#[derive(Clone, Debug)]
pub struct SolveSpec {
    pub a: DVector<f64>,
    /// Additive forcing; only its increments enter.
    pub b: Option<DiscretePath>,
    pub tol: f64,
    pub max_iter: usize,
    pub split: SplitPolicy,
    pub stack: bool,
    /// `K` in the admission test `L (1 + K) < ½`.
    pub window_constant: f64,
}

impl SolveSpec {
    pub fn new(a: DVector<f64>) -> Self {
        Self {
            a,
            b: None,
            tol: 1e-10,
            max_iter: 100,
            split: SplitPolicy::Halve,
            stack: true,
            window_constant: 1.0,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_forcing(mut self, b: DiscretePath) -> Self {
        self.b = Some(b);
        self
    }

    pub fn with_stack(mut self, stack: bool) -> Self {
        self.stack = stack;
        self
    }

    pub fn with_split(mut self, split: SplitPolicy) -> Self {
        self.split = split;
        self
    }

    /// The same settings started from another point.
    pub fn restarted(&self, a: DVector<f64>) -> Self {
        Self { a, ..self.clone() }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::param(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::param("max_iter must be at least 1"));
        }
        if !(self.window_constant >= 0.0) {
            return Err(Error::param("window constant must be non-negative"));
        }
        if let Some(b) = &self.b {
            if b.grid() != grid {
                return Err(Error::GridMismatch("forcing and driver grids differ".into()));
            }
            if b.dim() != self.a.len() {
                return Err(Error::dims(format!("forcing in R^{} for a solution in R^{}", b.dim(), self.a.len())));
            }
        }
        Ok(())
    }

    fn warnings(&self) -> Vec<String> {
        match &self.b {
            Some(b) if b.first().iter().any(|v| *v != 0.0) => {
                vec!["forcing has a nonzero initial value; only its increments are used".into()]
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub t0: f64,
    pub t1: f64,
    #[serde(skip)]
    pub i0: usize,
    #[serde(skip)]
    pub i1: usize,
    pub iters: usize,
    pub residual: f64,
    /// Picard residual after each iteration.
    #[serde(skip)]
    pub history: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Solution<T> {
    pub y: T,
    pub windows: Vec<WindowReport>,
    pub warnings: Vec<String>,
}

pub type YoungSolution = Solution<DiscretePath>;
pub type RoughSolution = Solution<ControlledPath>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub windows: Vec<WindowReport>,
    #[serde(rename = "yT")]
    pub y_t: Vec<f64>,
    pub norms: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl<T> Solution<T> {
    pub fn total_iterations(&self) -> usize {
        self.windows.iter().map(|w| w.iters).sum()
    }

    pub fn max_residual(&self) -> f64 {
        self.windows.iter().map(|w| w.residual).fold(0.0, f64::max)
    }
}

impl YoungSolution {
    pub fn terminal(&self) -> &DVector<f64> {
        self.y.last()
    }

    pub fn report(&self, p: f64, control: &ControlFn) -> Result<SolverReport> {
        let mut norms = BTreeMap::new();
        norms.insert("pvar".into(), pvar_norm(&self.y, p, control)?);
        norms.insert("sup".into(), self.y.sup_norm());
        Ok(SolverReport {
            windows: self.windows.clone(),
            y_t: self.y.last().iter().copied().collect(),
            norms,
            warnings: self.warnings.clone(),
        })
    }
}

impl RoughSolution {
    pub fn terminal(&self) -> &DVector<f64> {
        self.y.last()
    }

    pub fn report(&self) -> Result<SolverReport> {
        let n = crp_norms(&self.y)?;
        let mut norms = BTreeMap::new();
        norms.insert("dagger_q".into(), n.dagger_q);
        norms.insert("remainder_r".into(), n.remainder_r);
        norms.insert("x".into(), n.x_norm);
        norms.insert("full".into(), n.full);
        Ok(SolverReport {
            windows: self.windows.clone(),
            y_t: self.y.last().iter().copied().collect(),
            norms,
            warnings: self.warnings.clone(),
        })
    }
}

/// `sup |Df|` when the field declares it, otherwise twice the local value.
fn lipschitz(f: &dyn VectorField, y: &DVector<f64>) -> Result<f64> {
    if let Some(Some(b)) = f.norm_bounds().sup.get(1) {
        return Ok(*b);
    }
    Ok(2.0 * f.derivative(1, y)?.norm())
}

struct Converged<T> {
    path: T,
    last: DVector<f64>,
    iters: usize,
    residual: f64,
    history: Vec<f64>,
}

/// `Ok(Err(reason))` when the iteration fails to converge.
fn picard<T>(
    init: T,
    spec: &SolveSpec,
    mut step: impl FnMut(&T) -> Result<T>,
    dist: impl Fn(&T, &T) -> Result<f64>,
    last: impl Fn(&T) -> DVector<f64>,
) -> Result<std::result::Result<Converged<T>, String>> {
    let mut cur = init;
    let mut history = Vec::new();
    for it in 1..=spec.max_iter {
        let next = step(&cur)?;
        let res = dist(&next, &cur)?;
        history.push(res);
        if !res.is_finite() || res > 1e12 {
            return Ok(Err(format!("Picard residual blew up to {res:e} at iteration {it}")));
        }
        cur = next;
        if res <= spec.tol {
            return Ok(Ok(Converged {
                last: last(&cur),
                path: cur,
                iters: it,
                residual: res,
                history,
            }));
        }
    }
    Ok(Err(format!(
        "no convergence after {} iterations, residual {:e}",
        spec.max_iter,
        history.last().copied().unwrap_or(f64::NAN)
    )))
}

/// Windows, their solutions, and the admission/splitting logic.
fn stacked<T>(
    grid: &Grid,
    spec: &SolveSpec,
    mut factor: impl FnMut(usize, usize, &DVector<f64>) -> Result<f64>,
    mut run: impl FnMut(usize, usize, &DVector<f64>) -> Result<std::result::Result<Converged<T>, String>>,
) -> Result<(Vec<T>, Vec<WindowReport>)> {
    let steps = grid.steps();
    let mut i0 = 0;
    let mut y = spec.a.clone();
    let mut width = steps;
    let mut paths = Vec::new();
    let mut reports = Vec::new();
    while i0 < steps {
        let remaining = steps - i0;
        let mut m = if spec.stack { width.saturating_mul(2).min(remaining) } else { remaining };
        if spec.stack {
            while m > 1 && factor(i0, i0 + m, &y)? >= 0.5 {
                m /= 2;
            }
        }
        let done = loop {
            match run(i0, i0 + m, &y)? {
                Ok(c) => break c,
                Err(reason) => {
                    if spec.stack && spec.split == SplitPolicy::Halve && m > 1 {
                        m /= 2;
                    } else {
                        return Err(Error::Divergence { t0: grid.time(i0), reason });
                    }
                }
            }
        };
        reports.push(WindowReport {
            t0: grid.time(i0),
            t1: grid.time(i0 + m),
            i0,
            i1: i0 + m,
            iters: done.iters,
            residual: done.residual,
            history: done.history,
        });
        y = done.last;
        paths.push(done.path);
        width = m;
        i0 += m;
    }
    Ok((paths, reports))
}

fn concat<I: IntoIterator<Item = Vec<T>>, T>(parts: I) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for part in parts {
        let skip = usize::from(!out.is_empty());
        out.extend(part.into_iter().skip(skip));
    }
    out
}

fn check_field(f: &dyn VectorField, dim: usize, driver: usize) -> Result<()> {
    if f.input_dim() != dim || f.output_dim() != dim {
        return Err(Error::dims(format!(
            "field {} maps R^{} to L(R^{}, R^{}), solution lives in R^{dim}",
            f.name(),
            f.input_dim(),
            f.driver_dim(),
            f.output_dim()
        )));
    }
    if f.driver_dim() != driver {
        return Err(Error::dims(format!(
            "field {} expects a {}-dimensional driver, got {driver}",
            f.name(),
            f.driver_dim()
        )));
    }
    if f.regularity().k < 1 {
        return Err(Error::InsufficientDerivatives { requested: 1, available: 0 });
    }
    Ok(())
}

fn young_regularity(f: &dyn VectorField, p: f64) -> Result<()> {
    let reg = f.regularity();
    let gamma = if reg.k >= 2 { 1.0 } else { reg.gamma };
    if 1.0 + gamma <= p {
        return Err(Error::Regime(format!(
            "field {} with Hölder exponent {gamma} is too rough for p = {p}",
            f.name()
        )));
    }
    Ok(())
}

fn field_path(f: &dyn VectorField, y: &DiscretePath) -> DiscretePath {
    let v = y.values().par_iter().map(|v| linalg::flatten(&f.eval(v))).collect();
    DiscretePath::new(y.grid().clone(), v).expect("values match the grid")
}

fn forcing_window(b: Option<&DiscretePath>, i0: usize, i1: usize) -> Result<Option<DiscretePath>> {
    b.map(|b| b.restrict(i0, i1)).transpose()
}

/// Young-regime solution of `y = a + ∫ f(y) dx + b_{0,·}` for `1 ≤ p < 2`.
pub fn solve_young(f: &dyn VectorField, x: &DiscretePath, p: f64, control: &ControlFn, spec: &SolveSpec) -> Result<YoungSolution> {
    if !(1.0..2.0).contains(&p) {
        return Err(Error::Regime(format!("Young solver needs 1 <= p < 2, got {p}")));
    }
    let dim = spec.a.len();
    check_field(f, dim, x.dim())?;
    young_regularity(f, p)?;
    spec.validate(x.grid())?;
    let grid = x.grid();
    let k = spec.window_constant;
    // whole-path norm bounds every window norm
    let xn = pvar_norm(x, p, control)?;
    let factor = |i0: usize, i1: usize, y: &DVector<f64>| -> Result<f64> {
        let w = control.eval(grid.time(i0), grid.time(i1));
        Ok(lipschitz(f, y)? * xn * w.powf(1.0 / p) * (1.0 + k))
    };
    let run = |i0: usize, i1: usize, a: &DVector<f64>| {
        let xw = x.restrict(i0, i1)?;
        let bw = forcing_window(spec.b.as_ref(), i0, i1)?;
        let init = DiscretePath::constant(xw.grid().clone(), a.clone());
        picard(
            init,
            spec,
            |y| {
                let integral = young_integral(&field_path(f, y), &xw, p, p)?;
                let vals = (0..=i1 - i0)
                    .map(|t| {
                        let mut v = a + integral.value(t);
                        if let Some(b) = &bw {
                            v += b.increment(0, t);
                        }
                        v
                    })
                    .collect();
                DiscretePath::new(xw.grid().clone(), vals)
            },
            |u, v| {
                let d = u.sub(v)?;
                Ok(d.first().norm() + pvar_norm(&d, p, control)?)
            },
            |y| y.last().clone(),
        )
    };
    let (parts, windows) = stacked(grid, spec, factor, run)?;
    let y = DiscretePath::new(grid.clone(), concat(parts.into_iter().map(|p| p.values().to_vec())))?;
    Ok(Solution {
        y,
        windows,
        warnings: spec.warnings(),
    })
}

/// Young term `∫ g(y) dh` of the mixed equation.
pub struct YoungTerm<'a> {
    pub g: &'a dyn VectorField,
    pub h: &'a DiscretePath,
    pub q: f64,
}

fn rough_inputs(f: &dyn VectorField, z: &ControlledPath, bmat: Option<&DMatrix<f64>>, spec: &SolveSpec) -> Result<()> {
    let p = z.rough().p();
    if !(2.0..3.0).contains(&p) {
        return Err(Error::Regime(format!("rough solver needs 2 <= p < 3, got {p}")));
    }
    let dim = spec.a.len();
    check_field(f, dim, z.dim())?;
    if let Some(b) = bmat {
        if b.shape() != (dim, z.dim()) {
            return Err(Error::dims(format!(
                "forcing matrix is {}×{}, expected {dim}×{}",
                b.nrows(),
                b.ncols(),
                z.dim()
            )));
        }
    }
    spec.validate(z.grid())
}

fn solve_crp(
    f: &dyn VectorField,
    z: &ControlledPath,
    bmat: Option<&DMatrix<f64>>,
    young: Option<&YoungTerm<'_>>,
    spec: &SolveSpec,
) -> Result<RoughSolution> {
    rough_inputs(f, z, bmat, spec)?;
    let dim = spec.a.len();
    if let Some(yt) = young {
        check_field(yt.g, dim, yt.h.dim())?;
        if yt.h.grid() != z.grid() {
            return Err(Error::GridMismatch("Young driver and rough driver grids differ".into()));
        }
        if 1.0 / z.rough().p() + 1.0 / yt.q <= 1.0 {
            return Err(Error::YoungCondition { p: yt.q, q: z.rough().p() });
        }
    }
    let grid = z.grid();
    let p = z.rough().p();
    let control = z.rough().control().clone();
    let k = spec.window_constant;
    let dagger_of = |y: &DVector<f64>, zd: &DMatrix<f64>| -> DMatrix<f64> {
        let mut m = f.eval(y);
        if let Some(b) = bmat {
            m += b;
        }
        m * zd
    };

    // whole-path norms bound every window norm
    let xn = rough_norm(z.rough())?.value_or_square();
    let hn = young.map(|yt| pvar_norm(yt.h, yt.q, &control)).transpose()?.unwrap_or(0.0);
    let factor = |i0: usize, i1: usize, y: &DVector<f64>| -> Result<f64> {
        let w = control.eval(grid.time(i0), grid.time(i1));
        let mut l = lipschitz(f, y)? * xn * w.powf(1.0 / p) * (1.0 + k);
        if let Some(yt) = young {
            l += lipschitz(yt.g, y)? * hn * w.powf(1.0 / yt.q) * (1.0 + k);
        }
        Ok(l)
    };

    let run = |i0: usize, i1: usize, a: &DVector<f64>| {
        let zw = z.restrict(i0, i1)?;
        let bw = forcing_window(spec.b.as_ref(), i0, i1)?;
        let hw = young.map(|yt| yt.h.restrict(i0, i1)).transpose()?;
        let m = i1 - i0;
        let init = ControlledPath::new(
            zw.rough().clone(),
            vec![a.clone(); m + 1],
            zw.daggers().iter().map(|zd| dagger_of(a, zd)).collect(),
            p,
            p / 2.0,
        )?;
        picard(
            init,
            spec,
            |y| {
                let integral = crp_integral(&crp_omega(f, y)?, &zw)?;
                let drift = match (young, &hw) {
                    (Some(yt), Some(h)) => Some(young_integral(&field_path(yt.g, &y.path()), h, yt.q, p)?),
                    _ => None,
                };
                let vals = (0..=m)
                    .map(|t| {
                        let mut v = a + integral.value(t);
                        if let Some(b) = bmat {
                            v += b * zw.increment(0, t);
                        }
                        if let Some(b) = &bw {
                            v += b.increment(0, t);
                        }
                        if let Some(d) = &drift {
                            v += d.value(t);
                        }
                        v
                    })
                    .collect();
                let dags = (0..=m)
                    .map(|t| {
                        let mut d = integral.dagger(t).clone();
                        if let Some(b) = bmat {
                            d += b * zw.dagger(t);
                        }
                        d
                    })
                    .collect();
                ControlledPath::new(zw.rough().clone(), vals, dags, p, p / 2.0)
            },
            |u, v| full_norm(&u.sub(v)?),
            |y| y.last().clone(),
        )
    };

    let (parts, windows) = stacked(grid, spec, factor, run)?;
    let values = concat(parts.iter().map(|c| c.values().to_vec()));
    // the derivative is refreshed from the final values so that it satisfies its defining identity exactly
    let daggers = values.par_iter().zip(z.daggers().par_iter()).map(|(y, zd)| dagger_of(y, zd)).collect();
    let y = ControlledPath::new(z.rough().clone(), values, daggers, p, p / 2.0)?;
    Ok(Solution {
        y,
        windows,
        warnings: spec.warnings(),
    })
}

/// Rough-regime solution of `y = a + ∫ f(y) dz + b z_{0,·}`, `y† = f(y) z† + b z†`.
pub fn solve_rough(f: &dyn VectorField, z: &ControlledPath, bmat: Option<&DMatrix<f64>>, spec: &SolveSpec) -> Result<RoughSolution> {
    solve_crp(f, z, bmat, None, spec)
}

/// Rough solution driven by the canonical controlled path of `x`.
pub fn solve_rough_path(f: &dyn VectorField, x: &Arc<RoughPath>, spec: &SolveSpec) -> Result<RoughSolution> {
    solve_rough(f, &canonical_crp(x.clone()), None, spec)
}

/// `y = a + ∫ f(y) dz + ∫ g(y) dh + b z_{0,·}`.
pub fn solve_mixed(
    f: &dyn VectorField,
    z: &ControlledPath,
    young: &YoungTerm<'_>,
    bmat: Option<&DMatrix<f64>>,
    spec: &SolveSpec,
) -> Result<RoughSolution> {
    solve_crp(f, z, bmat, Some(young), spec)
}

/// `y^ε = a + ∫ f(y^ε) d𝔡_ε x + ∫ g(y^ε) dh` for every `ε` in `eps`.
pub fn dilated_family(
    f: &dyn VectorField,
    x: &RoughPath,
    young: &YoungTerm<'_>,
    eps: &[f64],
    spec: &SolveSpec,
) -> Result<Vec<RoughSolution>> {
    eps.par_iter()
        .map(|&e| {
            let z = canonical_crp(Arc::new(dilate(x, e)));
            solve_mixed(f, &z, young, None, spec)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{lift_piecewise_linear, pure_area};
    use crate::fields::parse_field;

    fn smooth(n: usize) -> DiscretePath {
        let g = Grid::uniform(1.0, n).unwrap();
        DiscretePath::from_fn(g, |t| DVector::from_element(1, t + 0.3 * (2.0 * std::f64::consts::PI * t).sin())).unwrap()
    }

    fn one(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn zero_field_young_is_forcing() {
        let x = smooth(64);
        let b = x.map(|v| v.map(|a| a * a + 1.0)).unwrap();
        let f = parse_field("linear:lambda=0").unwrap();
        let spec = SolveSpec::new(one(2.0)).with_forcing(b.clone());
        let s = solve_young(f.as_ref(), &x, 1.0, &ControlFn::Difference, &spec).unwrap();
        for t in 0..=64 {
            assert!((s.y.value(t)[0] - 2.0 - b.increment(0, t)[0]).abs() < 1e-14);
        }
        assert_eq!(s.warnings.len(), 1);
        assert_eq!(s.windows.len(), 1);
    }

    #[test]
    fn young_linear_oracle() {
        let g = Grid::uniform(1.0, 4096).unwrap();
        let f = parse_field("linear:lambda=0.5").unwrap();
        for (x, tol) in [(DiscretePath::from_fn(g.clone(), one).unwrap(), 1e-8), (smooth(4096), 1e-7)] {
            let s = solve_young(f.as_ref(), &x, 1.0, &ControlFn::Difference, &SolveSpec::new(one(1.5))).unwrap();
            let exact = 1.5 * (0.5 * x.increment(0, 4096)[0]).exp();
            let err = ((s.terminal()[0] - exact) / exact).abs();
            assert!(err < tol, "{err}");
            assert!(s.max_residual() <= 1e-10);
            let w = &s.windows;
            assert_eq!(w[0].t0, 0.0);
            assert_eq!(w.last().unwrap().t1, 1.0);
            assert!(w.windows(2).all(|p| p[0].t1 == p[1].t0));
        }
    }

    #[test]
    fn young_rotation_preserves_norm() {
        let x = smooth(4096);
        let f = parse_field("rotation:omega=1,d=1").unwrap();
        let a = DVector::from_vec(vec![1.0, 0.5]);
        let s = solve_young(f.as_ref(), &x, 1.0, &ControlFn::Difference, &SolveSpec::new(a.clone())).unwrap();
        for v in s.y.values() {
            assert!((v.norm() - a.norm()).abs() < 1e-8);
        }
        let th = x.increment(0, 4096)[0];
        let exact = DVector::from_vec(vec![th.cos() * a[0] - th.sin() * a[1], th.sin() * a[0] + th.cos() * a[1]]);
        let err = (s.terminal() - exact).norm();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn zero_field_rough_is_constant() {
        let x = Arc::new(lift_piecewise_linear(&smooth(32), 2.2).unwrap());
        let f = parse_field("linear:lambda=0").unwrap();
        let s = solve_rough_path(f.as_ref(), &x, &SolveSpec::new(one(3.0))).unwrap();
        assert!(s.y.values().iter().all(|v| v[0] == 3.0));
        assert!(s.y.daggers().iter().all(|d| d.norm() == 0.0));
    }

    #[test]
    fn rough_linear_oracle_and_geometric_residuals() {
        let x = Arc::new(lift_piecewise_linear(&smooth(4096), 2.2).unwrap());
        let f = parse_field("linear:lambda=0.5").unwrap();
        let s = solve_rough_path(f.as_ref(), &x, &SolveSpec::new(one(1.0))).unwrap();
        let exact = (0.5 * x.level1_increment(0, 4096)[0]).exp();
        assert!(((s.terminal()[0] - exact) / s.terminal()[0]).abs() < 1e-6);
        for w in &s.windows {
            for pair in w.history.windows(2).skip(1) {
                assert!(pair[1] <= 0.9 * pair[0] || pair[1] < 1e-13, "{:?}", w.history);
            }
        }
        for (t, d) in s.y.daggers().iter().enumerate() {
            assert!((d[(0, 0)] - 0.5 * s.y.value(t)[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn forcing_matrix_enters_value_and_dagger() {
        let x = Arc::new(lift_piecewise_linear(&smooth(64), 2.2).unwrap());
        let z = canonical_crp(x.clone());
        let f = parse_field("linear:lambda=0").unwrap();
        let b = DMatrix::from_element(1, 1, 2.0);
        let s = solve_rough(f.as_ref(), &z, Some(&b), &SolveSpec::new(one(1.0))).unwrap();
        for t in 0..=64 {
            assert!((s.y.value(t)[0] - 1.0 - 2.0 * z.increment(0, t)[0]).abs() < 1e-14);
            assert_eq!(s.y.dagger(t)[(0, 0)], 2.0);
        }
    }

    #[test]
    fn regime_errors() {
        let x = smooth(16);
        let f = parse_field("linear:lambda=1").unwrap();
        assert!(matches!(
            solve_young(f.as_ref(), &x, 2.2, &ControlFn::Difference, &SolveSpec::new(one(1.0))),
            Err(Error::Regime(_))
        ));
        let bad = SolveSpec::new(one(1.0)).with_tol(0.0);
        assert!(solve_young(f.as_ref(), &x, 1.0, &ControlFn::Difference, &bad).is_err());
    }

    #[test]
    fn divergence_when_splitting_is_disabled() {
        let x = smooth(256);
        let f = parse_field("linear:lambda=40").unwrap();
        let spec = SolveSpec::new(one(1.0)).with_stack(false).with_max_iter(5);
        assert!(matches!(
            solve_young(f.as_ref(), &x, 1.0, &ControlFn::Difference, &spec),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn pure_area_matches_induced_drift() {
        let g = Grid::uniform(1.0, 1024).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let x = Arc::new(pure_area(&a, 1.0, &g, 2.5).unwrap());
        let f = parse_field("linear:A0=[0,1;0,0],A1=[0,0;1,0]").unwrap();
        let y0 = DVector::from_vec(vec![1.0, 1.0]);
        let s = solve_rough_path(f.as_ref(), &x, &SolveSpec::new(y0.clone())).unwrap();
        // drift Σ A[u,w] (Df_w f_u) y = (A1 A0 − A0 A1) y = diag(−1, 1) y
        let exact = DVector::from_vec(vec![(-1.0f64).exp(), 1.0f64.exp()]);
        assert!((s.terminal() - exact).norm() < 5e-3, "{}", s.terminal());
    }

    #[test]
    fn mixed_linear_oracle() {
        let x = smooth(2048);
        let h = DiscretePath::from_fn(x.grid().clone(), |t| one(t * t - 0.5 * t)).unwrap();
        let r = Arc::new(lift_piecewise_linear(&x, 2.2).unwrap());
        let f = parse_field("linear:lambda=0.4").unwrap();
        let young = YoungTerm { g: f.as_ref(), h: &h, q: 1.0 };
        let s = solve_mixed(f.as_ref(), &canonical_crp(r.clone()), &young, None, &SolveSpec::new(one(1.0))).unwrap();
        let exact = (0.4 * (x.increment(0, 2048)[0] + h.increment(0, 2048)[0])).exp();
        assert!(((s.terminal()[0] - exact) / exact).abs() < 1e-4, "{}", s.terminal()[0] / exact - 1.0);
        let fam = dilated_family(f.as_ref(), &r, &young, &[0.0, 1.0], &SolveSpec::new(one(1.0))).unwrap();
        assert!((fam[1].terminal() - s.terminal()).norm() < 1e-12);
        let y0 = solve_young(f.as_ref(), &h, 1.0, &ControlFn::Difference, &SolveSpec::new(one(1.0))).unwrap();
        assert!((fam[0].terminal() - y0.terminal()).norm() < 1e-9);
    }
}
