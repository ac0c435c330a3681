//! Young integration `∫ y dx` for `1/p + 1/q > 1`.
//!
//! The integral is the sewing of the per-step trapezoid germ
//! `½(y_s + y_t) x_{s,t}`, which is the exact Young integral of the linear
//! interpolants of `y` and `x`. The compensated bound is measured against the
//! left-point germ `y_s x_{s,t}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{pvar_norm, sup_ratio, ControlFn, DiscretePath};
use crate::linalg;
use crate::sewing::{sew_additive, AdditiveGerm};

/// `∫_s^t a_{s,u} ⊗ db_u` over one step for linear `a` and `b`.
pub fn step_cross(a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    linalg::outer(a, b) * 0.5
}

/// How the germ evaluates the integrand over `[t_i, t_j]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    /// `y_s x_{s,t}`.
    LeftPoint,
    /// `½(y_s + y_t) x_{s,t}`.
    Trapezoid,
}

/// Young germ for `y` valued in `L(U, V)` (flattened row-major, `dim V`
/// rows) against `x` valued in `U`.
pub struct YoungGerm<'a> {
    y: &'a DiscretePath,
    x: &'a DiscretePath,
    out_dim: usize,
    rule: Rule,
}

impl<'a> YoungGerm<'a> {
    pub fn new(y: &'a DiscretePath, x: &'a DiscretePath, rule: Rule) -> Result<Self> {
        if y.grid() != x.grid() {
            return Err(Error::GridMismatch("integrand and integrator grids differ".into()));
        }
        let du = x.dim();
        if !y.dim().is_multiple_of(du) {
            return Err(Error::dims(format!(
                "integrand of dimension {} cannot act on a {}-dimensional integrator",
                y.dim(),
                du
            )));
        }
        Ok(Self {
            y,
            x,
            out_dim: y.dim() / du,
            rule,
        })
    }

    fn apply(&self, y: &DVector<f64>, dx: &DVector<f64>) -> DVector<f64> {
        let du = self.x.dim();
        DVector::from_fn(self.out_dim, |v, _| {
            (0..du).map(|u| y[v * du + u] * dx[u]).sum()
        })
    }
}

impl AdditiveGerm for YoungGerm<'_> {
    fn dim(&self) -> usize {
        self.out_dim
    }

    fn eval(&self, i: usize, j: usize) -> DVector<f64> {
        let dx = self.x.increment(i, j);
        match self.rule {
            Rule::LeftPoint => self.apply(self.y.value(i), &dx),
            Rule::Trapezoid => {
                let mid = (self.y.value(i) + self.y.value(j)) * 0.5;
                self.apply(&mid, &dx)
            }
        }
    }
}

fn check_young(p: f64, q: f64) -> Result<()> {
    if !(p >= 1.0 && q >= 1.0) {
        return Err(Error::param(format!("variation indices must be >= 1, got p = {p}, q = {q}")));
    }
    if 1.0 / p + 1.0 / q <= 1.0 {
        return Err(Error::YoungCondition { p, q });
    }
    Ok(())
}

/// `t ↦ ∫_0^t y dx` on the common grid, started at 0.
///
/// `y` has `dim V · dim U` components when `x` is `U`-valued; a scalar
/// integrand against a scalar integrator is the `1 × 1` case.
pub fn young_integral(y: &DiscretePath, x: &DiscretePath, p: f64, q: f64) -> Result<DiscretePath> {
    check_young(p, q)?;
    let germ = YoungGerm::new(y, x, Rule::Trapezoid)?;
    let fam = sew_additive(&germ, x.grid());
    DiscretePath::new(x.grid().clone(), fam.into_prefix())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegridReport {
    /// The integrand was linearly interpolated onto the integrator grid.
    pub integrand_interpolated: bool,
    pub steps: usize,
}

/// Young integral when `y` lives on a different grid: `y` is linearly
/// interpolated onto the grid of `x`; the integrator is never resampled.
pub fn young_integral_regrid(
    y: &DiscretePath,
    x: &DiscretePath,
    p: f64,
    q: f64,
) -> Result<(DiscretePath, RegridReport)> {
    check_young(p, q)?;
    if y.grid() == x.grid() {
        let out = young_integral(y, x, p, q)?;
        let steps = x.grid().steps();
        return Ok((out, RegridReport { integrand_interpolated: false, steps }));
    }
    let (gy, gx) = (y.grid(), x.grid());
    if gx.start() < gy.start() || gx.end() > gy.end() {
        return Err(Error::GridMismatch(format!(
            "integrator span [{}, {}] exceeds integrand span [{}, {}]",
            gx.start(),
            gx.end(),
            gy.start(),
            gy.end()
        )));
    }
    let y2 = y.interpolate_onto(gx)?;
    let out = young_integral(&y2, x, p, q)?;
    Ok((
        out,
        RegridReport {
            integrand_interpolated: true,
            steps: gx.steps(),
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct YoungBound {
    /// `max |∫_s^t y dx − y_s x_{s,t}| / (‖y‖_q ‖x‖_p ω^{1/p+1/q})`.
    pub k: f64,
    pub y_qvar: f64,
    pub x_pvar: f64,
}

/// Measures the constant of the compensated Young estimate.
pub fn young_bound_check(
    y: &DiscretePath,
    x: &DiscretePath,
    p: f64,
    q: f64,
    control: &ControlFn,
) -> Result<YoungBound> {
    check_young(p, q)?;
    let integral = young_integral(y, x, p, q)?;
    let left = YoungGerm::new(y, x, Rule::LeftPoint)?;
    let y_qvar = pvar_norm(y, q, control)?;
    let x_pvar = pvar_norm(x, p, control)?;
    let scale = y_qvar * x_pvar;
    if scale == 0.0 {
        return Ok(YoungBound { k: 0.0, y_qvar, x_pvar });
    }
    let sup = sup_ratio(x.grid(), control, 1.0 / p + 1.0 / q, |i, j| {
        (integral.increment(i, j) - left.eval(i, j)).norm()
    })?;
    Ok(YoungBound {
        k: sup / scale,
        y_qvar,
        x_pvar,
    })
}

/// `‖y‖_sup ‖x‖_p + K ‖y‖_q ‖x‖_p ω_{0,T}^{1/q}`, the p-variation bound on the integral.
pub fn young_pvar_bound(y: &DiscretePath, x: &DiscretePath, p: f64, q: f64, control: &ControlFn, k: f64) -> Result<f64> {
    let g = x.grid();
    let w = control.eval(g.start(), g.end());
    let xp = pvar_norm(x, p, control)?;
    Ok(y.sup_norm() * xp + k * pvar_norm(y, q, control)? * xp * w.powf(1.0 / q))
}
