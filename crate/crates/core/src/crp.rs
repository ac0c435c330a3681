//! Controlled rough paths `(y, y†)` over a reference rough path `x`.
//!
//! `y†_s` is a `n × d_U` matrix. The remainder `y♯_{s,t} = y_{s,t} − y†_s x¹_{s,t}`
//! is always derived. Matrix-valued paths (`y` in `L(W, V)`) are stored
//! flattened row-major, so `y` has `d_V d_W` components and `y†` has
//! `d_V d_W` rows.
//!
//! `y†_s` acts on `x² ∈ U ⊗ U` by `a ⊗ b ↦ a ⊗ y†_s b`; in coordinates
//! `(y† x²)[u, v] = Σ_{u'} x²[u, u'] y†[v, u']`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::grid::{sup_ratio, DiscretePath, Grid, ScanPolicy};
use crate::linalg;
use crate::sewing::{sew_additive, FnGerm, MonoidElem, MultiplicativeFamily, MultiplicativeGerm, sew_multiplicative};
use crate::tensor::{rough_norm, RoughNorm, RoughPath};

#[derive(Clone, Debug)]
pub struct ControlledPath {
    rough: Arc<RoughPath>,
    y: Vec<DVector<f64>>,
    ydag: Vec<DMatrix<f64>>,
    q: f64,
    r: f64,
}

impl PartialEq for ControlledPath {
    fn eq(&self, other: &Self) -> bool {
        self.y == other.y && self.ydag == other.ydag && self.q == other.q && self.r == other.r
    }
}

impl ControlledPath {
    pub fn new(rough: Arc<RoughPath>, y: Vec<DVector<f64>>, ydag: Vec<DMatrix<f64>>, q: f64, r: f64) -> Result<Self> {
        let n = rough.grid().len();
        if y.len() != n || ydag.len() != n {
            return Err(Error::GridMismatch(format!(
                "{} values and {} derivatives for {n} grid instants",
                y.len(),
                ydag.len()
            )));
        }
        let dim = y[0].len();
        let du = rough.dim();
        if y.iter().any(|v| v.len() != dim) || ydag.iter().any(|m| m.shape() != (dim, du)) {
            return Err(Error::dims(format!("controlled path needs values in R^{dim} and derivatives {dim}×{du}")));
        }
        if !(q > 0.0 && r > 0.0) {
            return Err(Error::param(format!("indices must be positive, got q = {q}, r = {r}")));
        }
        Ok(Self { rough, y, ydag, q, r })
    }

    /// Indices `(q, r) = (p, p/2)`.
    pub fn with_default_indices(rough: Arc<RoughPath>, y: Vec<DVector<f64>>, ydag: Vec<DMatrix<f64>>) -> Result<Self> {
        let p = rough.p();
        Self::new(rough, y, ydag, p, p / 2.0)
    }

    /// The constant path `a` with zero derivative.
    pub fn constant(rough: Arc<RoughPath>, a: DVector<f64>) -> Self {
        let n = rough.grid().len();
        let du = rough.dim();
        let dim = a.len();
        let p = rough.p();
        Self {
            y: vec![a; n],
            ydag: vec![DMatrix::zeros(dim, du); n],
            rough,
            q: p,
            r: p / 2.0,
        }
    }

    pub fn rough(&self) -> &Arc<RoughPath> {
        &self.rough
    }

    pub fn grid(&self) -> &Grid {
        self.rough.grid()
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.y[0].len()
    }

    pub fn driver_dim(&self) -> usize {
        self.rough.dim()
    }

    /// `(p, q, r)`.
    pub fn indices(&self) -> (f64, f64, f64) {
        (self.rough.p(), self.q, self.r)
    }

    pub fn with_indices(mut self, q: f64, r: f64) -> Self {
        self.q = q;
        self.r = r;
        self
    }

    pub fn value(&self, i: usize) -> &DVector<f64> {
        &self.y[i]
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.y
    }

    pub fn dagger(&self, i: usize) -> &DMatrix<f64> {
        &self.ydag[i]
    }

    pub fn daggers(&self) -> &[DMatrix<f64>] {
        &self.ydag
    }

    pub fn last(&self) -> &DVector<f64> {
        self.y.last().unwrap()
    }

    pub fn increment(&self, i: usize, j: usize) -> DVector<f64> {
        &self.y[j] - &self.y[i]
    }

    /// `y♯_{t_i,t_j}`.
    pub fn remainder(&self, i: usize, j: usize) -> DVector<f64> {
        self.increment(i, j) - &self.ydag[i] * self.rough.level1_increment(i, j)
    }

    pub fn path(&self) -> DiscretePath {
        DiscretePath::new(self.grid().clone(), self.y.clone()).expect("values match the grid")
    }

    /// `t ↦ y†_t`, flattened row-major.
    pub fn dagger_path(&self) -> DiscretePath {
        let v = self.ydag.iter().map(linalg::flatten).collect();
        DiscretePath::new(self.grid().clone(), v).expect("derivatives match the grid")
    }

    /// Restriction to `i0..=i1`.
    pub fn restrict(&self, i0: usize, i1: usize) -> Result<Self> {
        let rough = Arc::new(self.rough.restrict(i0, i1)?);
        Self::new(rough, self.y[i0..=i1].to_vec(), self.ydag[i0..=i1].to_vec(), self.q, self.r)
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if !Arc::ptr_eq(&self.rough, &other.rough) && self.rough.grid() != other.rough.grid() {
            return Err(Error::GridMismatch("controlled paths refer to different rough paths".into()));
        }
        Ok(())
    }

    /// `α Y + β Z`, indices the weaker of the two.
    pub fn combine(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self> {
        self.check_compatible(other)?;
        if self.dim() != other.dim() {
            return Err(Error::dims(format!("dimensions {} and {}", self.dim(), other.dim())));
        }
        let y = self.y.iter().zip(&other.y).map(|(a, b)| a * alpha + b * beta).collect();
        let d = self.ydag.iter().zip(&other.ydag).map(|(a, b)| a * alpha + b * beta).collect();
        Self::new(self.rough.clone(), y, d, self.q.max(other.q), self.r.max(other.r))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(1.0, other, -1.0)
    }

    /// Zero initial value and derivative.
    pub fn is_starred(&self) -> bool {
        self.y[0].iter().all(|v| *v == 0.0) && self.ydag[0].iter().all(|v| *v == 0.0)
    }
}

/// `(y† x²)[u, v]`.
pub(crate) fn dagger_on_area(ydag: &DMatrix<f64>, x2: &DMatrix<f64>) -> DMatrix<f64> {
    x2 * ydag.transpose()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slack {
    pub lhs: f64,
    pub rhs: f64,
}

impl Slack {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }

    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs * (1.0 + 1e-12) + 1e-300
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrpNorms {
    pub dagger_q: f64,
    pub remainder_r: f64,
    /// `‖y†‖_q + ‖y♯‖_r`.
    pub x_norm: f64,
    /// `|y_0| + |y†_0| + ‖y‖_x`.
    pub full: f64,
    /// `‖y†‖_sup ≤ (1 + ω^{1/q}) ‖y‖_full`.
    pub sup_dagger: Slack,
    /// `‖y‖_p ≤ ‖y†‖_sup ‖x‖_p + ‖y♯‖_r ω^{1/r − 1/p}`.
    pub pvar_value: Slack,
    /// `‖y‖_sup ≤ (1 + ω^{1/q} + ω^{1/r−1/p})(1 + ω^{1/p}) ‖y‖_full (1 + ‖x‖_p)`.
    pub sup_value: Slack,
}

/// `(‖y†‖_q, ‖y♯‖_r)`.
pub fn variation_norms(y: &ControlledPath) -> Result<(f64, f64)> {
    let grid = y.grid();
    let control = y.rough.control();
    let dq = sup_ratio(grid, control, 1.0 / y.q, |i, j| (&y.ydag[j] - &y.ydag[i]).norm())?;
    let sr = sup_ratio(grid, control, 1.0 / y.r, |i, j| y.remainder(i, j).norm())?;
    Ok((dq, sr))
}

/// `‖y‖_{x,full}`.
pub fn full_norm(y: &ControlledPath) -> Result<f64> {
    let (dq, sr) = variation_norms(y)?;
    Ok(y.y[0].norm() + y.ydag[0].norm() + dq + sr)
}

pub fn crp_norms(y: &ControlledPath) -> Result<CrpNorms> {
    let (dagger_q, remainder_r) = variation_norms(y)?;
    let x_norm = dagger_q + remainder_r;
    let full = y.y[0].norm() + y.ydag[0].norm() + x_norm;
    let grid = y.grid();
    let control = y.rough.control();
    let w = control.eval(grid.start(), grid.end());
    let (p, q, r) = y.indices();
    let xp = rough_norm(&y.rough)?.level1;
    let sup_dag = y.ydag.iter().map(|m| m.norm()).fold(0.0, f64::max);
    let sup_val = y.y.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let y_pvar = crate::grid::pvar_norm(&y.path(), p, control)?;
    let wr = w.powf(1.0 / r - 1.0 / p);
    Ok(CrpNorms {
        dagger_q,
        remainder_r,
        x_norm,
        full,
        sup_dagger: Slack { lhs: sup_dag, rhs: (1.0 + w.powf(1.0 / q)) * full },
        pvar_value: Slack { lhs: y_pvar, rhs: sup_dag * xp + remainder_r * wr },
        sup_value: Slack {
            lhs: sup_val,
            rhs: (1.0 + w.powf(1.0 / q) + wr) * (1.0 + w.powf(1.0 / p)) * full * (1.0 + xp),
        },
    })
}

/// `|y_0 − ỹ_0| + |y†_0 − ỹ†_0| + ‖y† − ỹ†‖_q + ‖y♯ − ỹ♯‖_r` for paths
/// controlled by possibly different rough paths on the same grid, each
/// remainder taken against its own reference path.
pub fn crp_distance(y: &ControlledPath, z: &ControlledPath) -> Result<f64> {
    if y.grid() != z.grid() {
        return Err(Error::GridMismatch("controlled paths live on different grids".into()));
    }
    if y.dim() != z.dim() || y.driver_dim() != z.driver_dim() {
        return Err(Error::dims("controlled paths of different shapes"));
    }
    let (q, r) = (y.q.max(z.q), y.r.max(z.r));
    let grid = y.grid();
    let control = y.rough.control();
    let dq = sup_ratio(grid, control, 1.0 / q, |i, j| {
        (&y.ydag[j] - &y.ydag[i] - &z.ydag[j] + &z.ydag[i]).norm()
    })?;
    let sr = sup_ratio(grid, control, 1.0 / r, |i, j| (y.remainder(i, j) - z.remainder(i, j)).norm())?;
    Ok((&y.y[0] - &z.y[0]).norm() + (&y.ydag[0] - &z.ydag[0]).norm() + dq + sr)
}

/// `y = π(x)`, `y† = Id`.
pub fn canonical_crp(x: Arc<RoughPath>) -> ControlledPath {
    let d = x.dim();
    let n = x.grid().len();
    let y = (0..n).map(|i| x.trace_at(i).clone()).collect();
    let p = x.p();
    ControlledPath {
        y,
        ydag: vec![DMatrix::identity(d, d); n],
        rough: x,
        q: p,
        r: p / 2.0,
    }
}

/// `min(2/p + 1/q, 1/p + 1/r)`.
pub fn flat_exponent(y: &ControlledPath) -> f64 {
    let (p, q, r) = y.indices();
    (2.0 / p + 1.0 / q).min(1.0 / p + 1.0 / r)
}

fn require_sewable(y: &ControlledPath, what: &str) -> Result<f64> {
    let theta = flat_exponent(y);
    if theta <= 1.0 {
        let (p, q, r) = y.indices();
        return Err(Error::Regime(format!(
            "{what}: min(2/p + 1/q, 1/p + 1/r) = {theta} <= 1 for (p, q, r) = ({p}, {q}, {r})"
        )));
    }
    Ok(theta)
}

/// Germ `φ_{s,t} = (x¹_{s,t}, y_{s,t}, y†_s x²_{s,t})`.
pub struct FlatGerm<'a>(pub &'a ControlledPath);

impl MultiplicativeGerm for FlatGerm<'_> {
    fn shape(&self) -> (usize, usize) {
        (self.0.driver_dim(), self.0.dim())
    }

    fn eval(&self, i: usize, j: usize) -> MonoidElem {
        let y = self.0;
        let inc = y.rough.increment(i, j).expect("grid indices");
        MonoidElem {
            c: dagger_on_area(&y.ydag[i], &inc.level2),
            a: inc.level1,
            b: y.increment(i, j),
        }
    }
}

/// `y♭`, stored by steps and reconstructed through the cocycle
/// `y♭_{r,t} = y♭_{r,s} + y♭_{s,t} + x¹_{r,s} ⊗ y_{s,t}`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatFamily {
    family: MultiplicativeFamily,
}

impl FlatFamily {
    pub fn grid(&self) -> &Grid {
        self.family.grid()
    }

    /// `y♭_{t_k,t_{k+1}}`.
    pub fn step(&self, k: usize) -> &DMatrix<f64> {
        &self.family.steps()[k].c
    }

    pub fn increment(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.family.increment(i, j).c
    }

    pub fn monoid(&self) -> &MultiplicativeFamily {
        &self.family
    }
}

pub fn flat(y: &ControlledPath) -> Result<FlatFamily> {
    require_sewable(y, "flat")?;
    Ok(FlatFamily {
        family: sew_multiplicative(&FlatGerm(y), y.grid())?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatBound {
    pub theta: f64,
    /// `max |y♭ − y† x²| / (‖y‖_x (‖x‖ ∨ ‖x‖²) ω^θ)`.
    pub k_local: f64,
    /// `‖y♭‖_{p/2} / (‖y‖_full (‖x‖ ∨ ‖x‖²))`.
    pub k_global: f64,
}

pub fn flat_bound(y: &ControlledPath) -> Result<FlatBound> {
    let theta = require_sewable(y, "flat")?;
    let fam = flat(y)?;
    let germ = FlatGerm(y);
    let xn = rough_norm(&y.rough)?.value_or_square();
    let (dq, sr) = variation_norms(y)?;
    let xnorm = dq + sr;
    let full = y.y[0].norm() + y.ydag[0].norm() + xnorm;
    let grid = y.grid();
    let control = y.rough.control();
    let p = y.rough.p();
    let rows = fam.family.for_each_pair(|i, j, m| {
        let w = control.on(grid, i, j);
        if w <= 0.0 {
            return Ok(0.0);
        }
        Ok((&m.c - &germ.eval(i, j).c).norm() / w.powf(theta))
    })?;
    let local = rows.into_iter().fold(0.0, f64::max);
    let rows = fam.family.for_each_pair(|i, j, m| {
        let w = control.on(grid, i, j);
        if w <= 0.0 {
            return Ok(0.0);
        }
        Ok(m.c.norm() / w.powf(2.0 / p))
    })?;
    let global = rows.into_iter().fold(0.0, f64::max);
    let div = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    Ok(FlatBound {
        theta,
        k_local: div(local, xnorm * xn),
        k_global: div(global, full * xn),
    })
}

/// Splits an integrand of dimension `d_V d_W` against a `d_W`-valued path.
fn integrand_shape(y: &ControlledPath, z: &ControlledPath) -> Result<(usize, usize)> {
    let dw = z.dim();
    if !y.dim().is_multiple_of(dw) {
        return Err(Error::dims(format!(
            "integrand of dimension {} cannot act on a {dw}-dimensional integrator",
            y.dim()
        )));
    }
    Ok((y.dim() / dw, dw))
}

/// `y_s z_{s,t} + y†_s z♭_{s,t}`.
fn integral_germ(y: &ControlledPath, dv: usize, dw: usize, s: usize, dz: &DVector<f64>, zflat: &DMatrix<f64>) -> DVector<f64> {
    let ys = &y.y[s];
    let yd = &y.ydag[s];
    let du = y.driver_dim();
    DVector::from_fn(dv, |v, _| {
        let mut acc = 0.0;
        for w in 0..dw {
            acc += ys[v * dw + w] * dz[w];
            for u in 0..du {
                acc += yd[(v * dw + w, u)] * zflat[(u, w)];
            }
        }
        acc
    })
}

/// `∫ y dz` for `y` valued in `L(W, V)` and `z` valued in `W`, started at 0,
/// with `(∫ y dz)†_s = y_s z†_s` and indices `(p, p ∨ q', p/2)`.
pub fn crp_integral(y: &ControlledPath, z: &ControlledPath) -> Result<ControlledPath> {
    y.check_compatible(z)?;
    require_sewable(y, "integrand")?;
    require_sewable(z, "integrator")?;
    let (dv, dw) = integrand_shape(y, z)?;
    let zflat = flat(z)?;
    let germ = FnGerm::new(dv, |i, j| {
        debug_assert_eq!(j, i + 1);
        integral_germ(y, dv, dw, i, &z.increment(i, j), zflat.step(i))
    });
    let fam = sew_additive(&germ, y.grid());
    let ydag = (0..y.len())
        .into_par_iter()
        .map(|s| DMatrix::from_row_slice(dv, dw, y.y[s].as_slice()) * &z.ydag[s])
        .collect();
    let p = y.rough.p();
    ControlledPath::new(y.rough.clone(), fam.into_prefix(), ydag, p.max(z.q), p / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegralBound {
    pub theta: f64,
    /// Constant of the compensated local estimate.
    pub k_local: f64,
    /// `‖∫ y dz‖_x / (‖y‖_full ‖z‖_full (1 + ‖x‖ ∨ ‖x‖²))`.
    pub k_global: f64,
}

/// Measures both constants of the CRP integral estimates.
pub fn crp_integral_bound(y: &ControlledPath, z: &ControlledPath) -> Result<IntegralBound> {
    let integral = crp_integral(y, z)?;
    let theta = flat_exponent(y);
    let (dv, dw) = integrand_shape(y, z)?;
    let zflat = flat(z)?;
    let grid = y.grid();
    let control = y.rough.control();
    let n = grid.len();
    let policy = ScanPolicy::for_steps(grid.steps());
    let (du, _) = zflat.monoid().shape();
    let rows: Vec<f64> = (0..n - 1)
        .into_par_iter()
        .map(|i| {
            let mut acc = MonoidElem::unit(du, dw);
            let mut last = i;
            let mut best = 0.0f64;
            for j in policy.partners(i, n) {
                for s in &zflat.monoid().steps()[last..j] {
                    acc.compose_assign(s);
                }
                last = j;
                let w = control.on(grid, i, j);
                if w <= 0.0 {
                    continue;
                }
                let g = integral_germ(y, dv, dw, i, &acc.b, &acc.c);
                best = best.max((integral.increment(i, j) - g).norm() / w.powf(theta));
            }
            best
        })
        .collect();
    let local = rows.into_iter().fold(0.0, f64::max);
    let rn = rough_norm(&y.rough)?;
    let xn = 1.0 + rn.value_or_square();
    let (ydq, ysr) = variation_norms(y)?;
    let yfull = y.y[0].norm() + y.ydag[0].norm() + ydq + ysr;
    let zfull = full_norm(z)?;
    let (idq, isr) = variation_norms(&integral)?;
    let div = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    Ok(IntegralBound {
        theta,
        k_local: div(local, (ydq + ysr) * zfull * xn),
        k_global: div(idq + isr, yfull * zfull * xn),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProductMode {
    /// `y ∈ L(W, V)`, `z ∈ W`: value `y_t z_t`.
    ComposeLinear,
    /// Value `y_t ⊗ z_t`.
    Tensor,
}

/// Pointwise product with the Leibniz derivative `y† z + y z†`.
pub fn crp_product(y: &ControlledPath, z: &ControlledPath, mode: ProductMode) -> Result<ControlledPath> {
    y.check_compatible(z)?;
    let du = y.driver_dim();
    let n = y.len();
    let (vals, dags): (Vec<DVector<f64>>, Vec<DMatrix<f64>>) = match mode {
        ProductMode::ComposeLinear => {
            let (dv, dw) = integrand_shape(y, z)?;
            (0..n)
                .map(|t| {
                    let ym = DMatrix::from_row_slice(dv, dw, y.y[t].as_slice());
                    let val = &ym * &z.y[t];
                    let mut d = &ym * &z.ydag[t];
                    for v in 0..dv {
                        for u in 0..du {
                            d[(v, u)] += (0..dw).map(|w| y.ydag[t][(v * dw + w, u)] * z.y[t][w]).sum::<f64>();
                        }
                    }
                    (val, d)
                })
                .unzip()
        }
        ProductMode::Tensor => {
            let (a, b) = (y.dim(), z.dim());
            (0..n)
                .map(|t| {
                    let val = DVector::from_fn(a * b, |k, _| y.y[t][k / b] * z.y[t][k % b]);
                    let d = DMatrix::from_fn(a * b, du, |k, u| {
                        let (i, j) = (k / b, k % b);
                        y.ydag[t][(i, u)] * z.y[t][j] + y.y[t][i] * z.ydag[t][(j, u)]
                    });
                    (val, d)
                })
                .unzip()
        }
    };
    let p = y.rough.p();
    ControlledPath::new(y.rough.clone(), vals, dags, y.q.max(z.q).max(p), y.r.max(z.r).max(p / 2.0))
}

/// `‖yz‖_full / (‖y‖_full ‖z‖_full (1 + ‖x‖_p))`.
pub fn product_constant(y: &ControlledPath, z: &ControlledPath, yz: &ControlledPath) -> Result<f64> {
    let (a, b) = (full_norm(y)?, full_norm(z)?);
    let x = rough_norm(&y.rough)?.value();
    if a * b == 0.0 {
        return Ok(0.0);
    }
    Ok(full_norm(yz)? / (a * b * (1.0 + x)))
}

/// `t ↦ f(y_t)` with derivative `Df(y_t) y†_t`, indices `(p, q ∨ p/γ, r ∨ p/(1+γ))`
/// where `γ` is the Hölder exponent of `Df`.
pub fn crp_omega(f: &dyn VectorField, y: &ControlledPath) -> Result<ControlledPath> {
    if f.regularity().k < 1 {
        return Err(Error::InsufficientDerivatives { requested: 1, available: 0 });
    }
    if f.input_dim() != y.dim() {
        return Err(Error::dims(format!(
            "field {} on R^{} applied to a path in R^{}",
            f.name(),
            f.input_dim(),
            y.dim()
        )));
    }
    let pairs = (0..y.len())
        .into_par_iter()
        .map(|t| {
            let v = linalg::flatten(&f.eval(&y.y[t]));
            let d = f.derivative(1, &y.y[t])? * &y.ydag[t];
            Ok((v, d))
        })
        .collect::<Result<Vec<_>>>()?;
    let (vals, dags): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let reg = f.regularity();
    let gamma = if reg.k >= 2 { 1.0 } else { reg.gamma };
    let p = y.rough.p();
    ControlledPath::new(y.rough.clone(), vals, dags, y.q.max(p / gamma), y.r.max(p / (1.0 + gamma)))
}

const GAUSS_LEGENDRE_8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
];

/// Largest gap, over `pairs`, between the remainder of `f(y)` and
/// `Df(y_s) y♯_{s,t} + ∫_0^1 (Df(y_s + θ y_{s,t}) − Df(y_s)) y_{s,t} dθ`.
pub fn omega_remainder_check(f: &dyn VectorField, y: &ControlledPath, pairs: &[(usize, usize)]) -> Result<f64> {
    let fy = crp_omega(f, y)?;
    let gaps = pairs
        .par_iter()
        .map(|&(s, t)| {
            let ys = &y.y[s];
            let dy = y.increment(s, t);
            let d0 = f.derivative(1, ys)?;
            let mut integral = DVector::zeros(d0.nrows());
            for (node, weight) in GAUSS_LEGENDRE_8 {
                let theta = 0.5 * (node + 1.0);
                let d = f.derivative(1, &(ys + &dy * theta))?;
                integral += (d - &d0) * &dy * (0.5 * weight);
            }
            let predicted = &d0 * y.remainder(s, t) + integral;
            Ok((fy.remainder(s, t) - predicted).norm())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(gaps.into_iter().fold(0.0, f64::max))
}

/// Rough-path norm pair of the reference path.
pub fn reference_norm(y: &ControlledPath) -> Result<RoughNorm> {
    rough_norm(&y.rough)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{lift_piecewise_linear, pure_area};
    use crate::fields::parse_field;
    use crate::tensor::dilate;

    fn smooth_lift(n: usize, p: f64) -> Arc<RoughPath> {
        let g = Grid::uniform(1.0, n).unwrap();
        let x = DiscretePath::from_fn(g, |t| DVector::from_vec(vec![(3.0 * t).sin(), t * t - 0.3 * t])).unwrap();
        Arc::new(lift_piecewise_linear(&x, p).unwrap())
    }

    fn scalar_lift(n: usize) -> Arc<RoughPath> {
        let g = Grid::uniform(1.0, n).unwrap();
        let x = DiscretePath::from_fn(g, |t| DVector::from_element(1, (2.0 * std::f64::consts::PI * t).sin() + t)).unwrap();
        Arc::new(lift_piecewise_linear(&x, 2.0).unwrap())
    }

    #[test]
    fn constant_path_has_zero_norms() {
        let x = smooth_lift(32, 2.2);
        let c = ControlledPath::constant(x, DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let n = crp_norms(&c).unwrap();
        assert_eq!((n.dagger_q, n.remainder_r, n.x_norm), (0.0, 0.0, 0.0));
        assert!(c.remainder(3, 20).norm() == 0.0);
    }

    #[test]
    fn canonical_crp_has_no_remainder() {
        let x = smooth_lift(64, 2.2);
        let c = canonical_crp(x.clone());
        let n = crp_norms(&c).unwrap();
        assert_eq!(n.dagger_q, 0.0);
        assert!(n.remainder_r < 1e-14);
        assert!(n.sup_dagger.holds() && n.pvar_value.holds() && n.sup_value.holds());
        let fl = flat(&c).unwrap();
        for (i, j) in [(0, 64), (7, 40), (5, 6)] {
            assert!((fl.increment(i, j) - x.increment(i, j).unwrap().level2).norm() < 1e-14);
        }
    }

    #[test]
    fn dilated_canonical_level1() {
        let x = smooth_lift(16, 2.2);
        let eps = 0.4;
        let a = canonical_crp(Arc::new(dilate(&x, eps)));
        let b = canonical_crp(x);
        for i in 0..16 {
            assert!((a.value(i) - b.value(i) * eps).norm() < 1e-15);
        }
    }

    #[test]
    fn flat_satisfies_cocycle() {
        let x = smooth_lift(48, 2.4);
        let f = parse_field("tanh").unwrap();
        let y = crp_omega(f.as_ref(), &canonical_crp(x.clone())).unwrap().with_indices(2.4, 1.2);
        let fl = flat(&y).unwrap();
        for (r, s, t) in [(0, 10, 48), (3, 4, 5), (12, 30, 31)] {
            let lhs = fl.increment(r, t);
            let rhs = fl.increment(r, s) + fl.increment(s, t) + linalg::outer(&x.level1_increment(r, s), &y.increment(s, t));
            assert!((lhs - rhs).norm() < 1e-13);
        }
        let zero = ControlledPath::constant(x, DVector::from_element(3, 2.0));
        assert!(flat(&zero).unwrap().increment(0, 48).norm() == 0.0);
    }

    #[test]
    fn flat_is_linear() {
        let x = smooth_lift(32, 2.2);
        let c = canonical_crp(x.clone());
        let f = crp_omega(parse_field("tanh").unwrap().as_ref(), &c).unwrap().with_indices(2.2, 1.1);
        let g = crp_omega(parse_field("sine:dim=2,d=2").unwrap().as_ref(), &c).unwrap().with_indices(2.2, 1.1);
        let sum = f.combine(1.0, &g, 1.0).unwrap();
        let (a, b, s) = (flat(&f).unwrap(), flat(&g).unwrap(), flat(&sum).unwrap());
        for (i, j) in [(0, 32), (4, 9)] {
            assert!((s.increment(i, j) - a.increment(i, j) - b.increment(i, j)).norm() < 1e-12);
        }
    }

    #[test]
    fn flat_rejects_subcritical_indices() {
        let x = smooth_lift(8, 2.8);
        let c = canonical_crp(x).with_indices(2.8, 2.8);
        assert!(matches!(flat(&c), Err(Error::Regime(_))));
    }

    #[test]
    fn constant_integrand_integral() {
        let x = smooth_lift(32, 2.2);
        let z = canonical_crp(x.clone());
        // c ∈ L(R², R¹) = [2, −1]
        let y = ControlledPath::constant(x, DVector::from_vec(vec![2.0, -1.0]));
        let i = crp_integral(&y, &z).unwrap();
        for t in [0, 5, 32] {
            let expect = 2.0 * z.increment(0, t)[0] - z.increment(0, t)[1];
            assert!((i.value(t)[0] - expect).abs() < 1e-14);
            assert!((i.dagger(t) - DMatrix::from_row_slice(1, 2, &[2.0, -1.0])).norm() < 1e-15);
        }
        assert_eq!(i.indices(), (2.2, 2.2, 1.1));
    }

    #[test]
    fn scalar_self_integral() {
        let x = scalar_lift(256);
        let c = canonical_crp(x);
        let i = crp_integral(&c, &c).unwrap();
        let exact = 0.5 * (c.last()[0].powi(2) - c.value(0)[0].powi(2));
        assert!((i.last()[0] - exact).abs() < 1e-13);
    }

    #[test]
    fn pure_area_integral_is_riemann_sum() {
        let g = Grid::uniform(1.0, 64).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let x = Arc::new(pure_area(&a, 0.7, &g, 2.5).unwrap());
        let z = canonical_crp(x.clone());
        // y ∈ L(R², R) with y† linear in t
        let y = ControlledPath::new(
            x.clone(),
            vec![DVector::from_vec(vec![1.0, 0.5]); 65],
            (0..65).map(|i| DMatrix::from_row_slice(2, 2, &[g.time(i), 1.0, -2.0, 0.3])).collect(),
            2.5,
            1.25,
        )
        .unwrap();
        let i = crp_integral(&y, &z).unwrap();
        // y†_s z♭ = Σ_{u,w} y†[w,u] · c dt A[u,w] = c dt (y†[1,0] − y†[0,1])
        let riemann: f64 = (0..64).map(|k| 0.7 * g.dt(k) * (-2.0 - 1.0)).sum();
        assert!((i.last()[0] - riemann).abs() < 1e-14);
    }

    #[test]
    fn integral_is_bilinear() {
        let x = smooth_lift(40, 2.2);
        let z = canonical_crp(x.clone());
        let f = crp_omega(parse_field("tanh").unwrap().as_ref(), &z).unwrap();
        let g = crp_omega(parse_field("sine:dim=2,d=2").unwrap().as_ref(), &z).unwrap();
        let comb = f.combine(0.3, &g, -1.7).unwrap();
        let lhs = crp_integral(&comb, &z).unwrap();
        let rhs = crp_integral(&f, &z).unwrap().combine(0.3, &crp_integral(&g, &z).unwrap(), -1.7).unwrap();
        assert!(lhs.sub(&rhs).unwrap().values().iter().all(|v| v.norm() < 1e-13));
    }

    #[test]
    fn integral_bounds_are_finite_and_stable() {
        let mut ks = Vec::new();
        for n in [128, 256] {
            let x = smooth_lift(n, 2.2);
            let z = canonical_crp(x);
            let f = crp_omega(parse_field("tanh").unwrap().as_ref(), &z).unwrap();
            let b = crp_integral_bound(&f, &z).unwrap();
            assert!(b.k_local.is_finite() && b.k_global.is_finite());
            ks.push(b.k_global);
        }
        assert!((ks[1] / ks[0] - 1.0).abs() < 0.5, "{ks:?}");
    }

    #[test]
    fn products() {
        let x = scalar_lift(32);
        let c = canonical_crp(x.clone());
        let sq = crp_product(&c, &c, ProductMode::Tensor).unwrap();
        for t in 0..=32 {
            assert!((sq.dagger(t)[(0, 0)] - 2.0 * c.value(t)[0]).abs() < 1e-15);
        }
        let one = ControlledPath::constant(x, DVector::from_element(1, 1.0));
        let same = crp_product(&c, &one, ProductMode::ComposeLinear).unwrap();
        assert_eq!(same.values(), c.values());
        assert_eq!(same.daggers(), c.daggers());
        let k = product_constant(&c, &c, &sq).unwrap();
        assert!(k.is_finite() && k > 0.0);
    }

    #[test]
    fn omega_of_simple_fields() {
        let x = smooth_lift(32, 2.2);
        let c = canonical_crp(x);
        let k = parse_field("linear:lambda=0,B=[3]").unwrap();
        let one_d = ControlledPath::new(
            c.rough().clone(),
            c.values().iter().map(|v| v.rows(0, 1).into_owned()).collect(),
            c.daggers().iter().map(|m| m.rows(0, 1).into_owned()).collect(),
            2.2,
            1.1,
        )
        .unwrap();
        let o = crp_omega(k.as_ref(), &one_d).unwrap();
        assert!(o.values().iter().all(|v| (v[0] - 3.0).abs() == 0.0));
        assert!(o.daggers().iter().all(|d| d.norm() == 0.0));
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 0.3]);
        let lin = parse_field("linear:A=[1,2;-0.5,0.3]").unwrap();
        let o = crp_omega(lin.as_ref(), &c).unwrap();
        for (s, t) in [(0, 32), (3, 11)] {
            assert!((o.remainder(s, t) - &a * c.remainder(s, t)).norm() < 1e-14);
        }
        assert!(crp_omega(parse_field("holder").unwrap().as_ref(), &one_d).is_err());
    }

    #[test]
    fn omega_remainder_formula() {
        let x = smooth_lift(64, 2.2);
        let f = parse_field("tanh").unwrap();
        let y = crp_omega(parse_field("sine:dim=2,d=2").unwrap().as_ref(), &canonical_crp(x.clone())).unwrap();
        // reshape the 4-vector into a 2-vector path by summing rows
        let v: Vec<DVector<f64>> = y.values().iter().map(|v| DVector::from_vec(vec![v[0] + v[1], v[2] - v[3]])).collect();
        let d: Vec<DMatrix<f64>> = y
            .daggers()
            .iter()
            .map(|m| DMatrix::from_fn(2, 2, |i, u| if i == 0 { m[(0, u)] + m[(1, u)] } else { m[(2, u)] - m[(3, u)] }))
            .collect();
        let y2 = ControlledPath::new(x, v, d, 2.2, 1.1).unwrap();
        let pairs: Vec<(usize, usize)> = vec![(0, 64), (10, 20), (5, 6), (30, 63)];
        let gap = omega_remainder_check(f.as_ref(), &y2, &pairs).unwrap();
        assert!(gap < 1e-8, "{gap}");
    }

    #[test]
    fn starred_integrand_gives_starred_integral() {
        let x = smooth_lift(32, 2.2);
        let z = canonical_crp(x.clone());
        let f = crp_omega(parse_field("tanh").unwrap().as_ref(), &z).unwrap();
        let y0 = f.value(0).clone();
        let d0 = f.dagger(0).clone();
        let shifted = ControlledPath::new(
            x,
            f.values().iter().map(|v| v - &y0).collect(),
            f.daggers().iter().map(|m| m - &d0).collect(),
            2.2,
            1.1,
        )
        .unwrap();
        assert!(shifted.is_starred());
        assert!(crp_integral(&shifted, &z).unwrap().is_starred());
    }
}
