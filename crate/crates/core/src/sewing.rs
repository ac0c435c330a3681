//! Additive and multiplicative sewing on a fixed grid.
//!
//! On a finite grid the sewing limit is the finest-mesh composition of the
//! germ over consecutive steps. Germ quality is measured, never enforced:
//! [`defect_scan`] fits `|δΞ_{r,s,t}| ≈ C ω(r,t)^θ` over sampled triples.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ControlFn, Grid, ScanPolicy};
use crate::linalg::{self, CompensatedSum};
use crate::stats;

/// Defects below this are treated as rounding noise by [`defect_scan`].
pub const DEFECT_FLOOR: f64 = 1e-13;

/// A two-parameter vector family `Ξ_{t_i,t_j}` on a grid.
pub trait AdditiveGerm: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, i: usize, j: usize) -> DVector<f64>;

    /// `|Ξ_{r,t} − Ξ_{r,s} − Ξ_{s,t}|`.
    fn defect(&self, r: usize, s: usize, t: usize) -> f64 {
        (self.eval(r, t) - self.eval(r, s) - self.eval(s, t)).norm()
    }
}

/// Germ backed by a closure.
pub struct FnGerm<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(usize, usize) -> DVector<f64> + Sync> FnGerm<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(usize, usize) -> DVector<f64> + Sync> AdditiveGerm for FnGerm<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, i: usize, j: usize) -> DVector<f64> {
        (self.f)(i, j)
    }
}

/// Exactly additive family `I_{t_i,t_j} = P_j − P_i` built from compensated
/// prefix sums of the step germs.
#[derive(Clone, Debug, PartialEq)]
pub struct AdditiveFamily {
    grid: Grid,
    prefix: Vec<DVector<f64>>,
}

impl AdditiveFamily {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.prefix[0].len()
    }

    pub fn increment(&self, i: usize, j: usize) -> DVector<f64> {
        &self.prefix[j] - &self.prefix[i]
    }

    /// `t_i ↦ I_{t_0,t_i}`.
    pub fn prefix(&self) -> &[DVector<f64>] {
        &self.prefix
    }

    pub fn into_prefix(self) -> Vec<DVector<f64>> {
        self.prefix
    }

    /// `max |I_{s,t} − Ξ_{s,t}| / ω(s,t)^θ` over grid pairs.
    pub fn sewing_constant(&self, germ: &impl AdditiveGerm, theta: f64, control: &ControlFn) -> Result<f64> {
        scan_pairs(&self.grid, control, theta, |i, j| {
            (self.increment(i, j) - germ.eval(i, j)).norm()
        })
    }
}

pub fn sew_additive(germ: &impl AdditiveGerm, grid: &Grid) -> AdditiveFamily {
    let steps: Vec<DVector<f64>> = (0..grid.steps())
        .into_par_iter()
        .map(|k| germ.eval(k, k + 1))
        .collect();
    let mut acc = CompensatedSum::new(germ.dim());
    let mut prefix = Vec::with_capacity(grid.len());
    prefix.push(DVector::zeros(germ.dim()));
    for s in &steps {
        acc.add(s);
        prefix.push(acc.value());
    }
    AdditiveFamily {
        grid: grid.clone(),
        prefix,
    }
}

/// Element `(a, b, c)` of `W = U ⊕ V ⊕ (U ⊗ V)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MonoidElem {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
}

impl MonoidElem {
    pub fn new(a: DVector<f64>, b: DVector<f64>, c: DMatrix<f64>) -> Result<Self> {
        if c.shape() != (a.len(), b.len()) {
            return Err(Error::dims(format!(
                "c is {:?}, expected ({}, {})",
                c.shape(),
                a.len(),
                b.len()
            )));
        }
        Ok(Self { a, b, c })
    }

    pub fn unit(du: usize, dv: usize) -> Self {
        Self {
            a: DVector::zeros(du),
            b: DVector::zeros(dv),
            c: DMatrix::zeros(du, dv),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.a.len(), self.b.len())
    }

    /// `self ← self ⊠ rhs`.
    pub fn compose_assign(&mut self, rhs: &MonoidElem) {
        self.c += &rhs.c;
        linalg::add_outer(&mut self.c, self.a.as_slice(), rhs.b.as_slice());
        self.a += &rhs.a;
        self.b += &rhs.b;
    }

    pub fn compose(&self, rhs: &MonoidElem) -> Result<MonoidElem> {
        if self.shape() != rhs.shape() {
            return Err(Error::dims(format!(
                "monoid shapes {:?} and {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        let mut out = self.clone();
        out.compose_assign(rhs);
        Ok(out)
    }

    /// `(−a, −b, −c + a ⊗ b)`.
    pub fn inverse(&self) -> MonoidElem {
        MonoidElem {
            a: -&self.a,
            b: -&self.b,
            c: linalg::outer(&self.a, &self.b) - &self.c,
        }
    }

    /// `max{|a|, |b|, |c|}`.
    pub fn norm(&self) -> f64 {
        self.a.norm().max(self.b.norm()).max(self.c.norm())
    }

    pub fn distance(&self, other: &MonoidElem) -> f64 {
        (&self.a - &other.a)
            .norm()
            .max((&self.b - &other.b).norm())
            .max((&self.c - &other.c).norm())
    }
}

pub trait MultiplicativeGerm: Sync {
    /// `(dim U, dim V)`.
    fn shape(&self) -> (usize, usize);
    fn eval(&self, i: usize, j: usize) -> MonoidElem;

    /// `|φ_{r,s} ⊠ φ_{s,t} − φ_{r,t}|`.
    fn defect(&self, r: usize, s: usize, t: usize) -> f64 {
        let mut left = self.eval(r, s);
        left.compose_assign(&self.eval(s, t));
        left.distance(&self.eval(r, t))
    }
}

/// `Y_{t_i,t_j} = φ_{i,i+1} ⊠ … ⊠ φ_{j−1,j}`, stored by steps.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiplicativeFamily {
    grid: Grid,
    steps: Vec<MonoidElem>,
}

impl MultiplicativeFamily {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn steps(&self) -> &[MonoidElem] {
        &self.steps
    }

    pub fn shape(&self) -> (usize, usize) {
        self.steps[0].shape()
    }

    /// Ordered composition of the steps between `i` and `j`.
    pub fn increment(&self, i: usize, j: usize) -> MonoidElem {
        let (du, dv) = self.shape();
        let mut acc = MonoidElem::unit(du, dv);
        for s in &self.steps[i..j] {
            acc.compose_assign(s);
        }
        acc
    }

    /// Calls `visit(i, j, Y_{i,j})` for every pair selected by the scan policy,
    /// reusing running products along each row.
    pub fn for_each_pair<F>(&self, visit: F) -> Result<Vec<f64>>
    where
        F: Fn(usize, usize, &MonoidElem) -> Result<f64> + Sync,
    {
        let n = self.grid.len();
        let policy = ScanPolicy::for_steps(self.grid.steps());
        let (du, dv) = self.shape();
        (0..n - 1)
            .into_par_iter()
            .map(|i| {
                let mut acc = MonoidElem::unit(du, dv);
                let mut best = 0.0f64;
                let mut last = i;
                for j in policy.partners(i, n) {
                    for s in &self.steps[last..j] {
                        acc.compose_assign(s);
                    }
                    last = j;
                    best = best.max(visit(i, j, &acc)?);
                }
                Ok(best)
            })
            .collect()
    }

    /// `max |Y_{s,t} − φ_{s,t}| / ω(s,t)^θ` over grid pairs.
    pub fn sewing_constant(&self, germ: &impl MultiplicativeGerm, theta: f64, control: &ControlFn) -> Result<f64> {
        let rows = self.for_each_pair(|i, j, y| {
            let d = y.distance(&germ.eval(i, j));
            ratio(d, control.on(&self.grid, i, j), theta, i, j)
        })?;
        Ok(rows.into_iter().fold(0.0, f64::max))
    }
}

pub fn sew_multiplicative(germ: &impl MultiplicativeGerm, grid: &Grid) -> Result<MultiplicativeFamily> {
    let shape = germ.shape();
    let steps: Vec<MonoidElem> = (0..grid.steps())
        .into_par_iter()
        .map(|k| germ.eval(k, k + 1))
        .collect();
    if let Some(k) = steps.iter().position(|s| s.shape() != shape) {
        return Err(Error::dims(format!(
            "germ step {k} has shape {:?}, expected {shape:?}",
            steps[k].shape()
        )));
    }
    Ok(MultiplicativeFamily {
        grid: grid.clone(),
        steps,
    })
}

fn ratio(m: f64, w: f64, exponent: f64, i: usize, j: usize) -> Result<f64> {
    if w <= 0.0 {
        return if m > 0.0 { Err(Error::InfiniteNorm { i, j }) } else { Ok(0.0) };
    }
    Ok(m / w.powf(exponent))
}

/// `max measure(i, j) / ω^θ` under the default scan policy.
pub(crate) fn scan_pairs<F>(grid: &Grid, control: &ControlFn, exponent: f64, measure: F) -> Result<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    crate::grid::sup_ratio(grid, control, exponent, measure)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    #[serde(rename = "C_hat")]
    pub c_hat: Option<f64>,
    pub theta_hat: Option<f64>,
    pub n_triples: usize,
    /// Triples whose defect exceeded [`DEFECT_FLOOR`].
    pub n_usable: usize,
    /// RMS residual of the log-log fit.
    pub residual: Option<f64>,
    pub max_defect: f64,
    pub identifiable: bool,
}

/// Fits `log |defect(r,s,t)| = log C + θ log ω(r,t)` over `triples`.
pub fn defect_scan<F>(defect: F, grid: &Grid, control: &ControlFn, triples: &[(usize, usize, usize)]) -> Result<DefectReport>
where
    F: Fn(usize, usize, usize) -> f64 + Sync,
{
    if triples.len() < 3 {
        return Err(Error::NotEnoughData(format!(
            "defect scan needs at least 3 triples, got {}",
            triples.len()
        )));
    }
    let n = grid.len();
    if let Some(&(r, s, t)) = triples.iter().find(|&&(r, s, t)| !(r < s && s < t && t < n)) {
        return Err(Error::param(format!("invalid triple ({r}, {s}, {t})")));
    }
    let samples: Vec<(f64, f64)> = triples
        .par_iter()
        .map(|&(r, s, t)| (control.on(grid, r, t), defect(r, s, t)))
        .collect();
    let max_defect = samples.iter().map(|s| s.1).fold(0.0, f64::max);
    let usable: Vec<(f64, f64)> = samples
        .into_iter()
        .filter(|&(w, d)| w > 0.0 && d > DEFECT_FLOOR)
        .collect();
    let mut report = DefectReport {
        c_hat: None,
        theta_hat: None,
        n_triples: triples.len(),
        n_usable: usable.len(),
        residual: None,
        max_defect,
        identifiable: false,
    };
    if usable.len() < 3 {
        return Ok(report);
    }
    let (w, d): (Vec<f64>, Vec<f64>) = usable.into_iter().unzip();
    match stats::loglog(&w, &d) {
        Ok(fit) => {
            report.c_hat = Some(fit.intercept.exp());
            report.theta_hat = Some(fit.slope);
            report.residual = Some(fit.rms);
            report.identifiable = true;
        }
        Err(Error::NotEnoughData(_)) => {}
        Err(e) => return Err(e),
    }
    Ok(report)
}

/// Nested triples `(i, i + h, i + 2h)` for `h = 1, 2, 4, …`, at most
/// `per_scale` per scale, spread evenly across the grid.
pub fn dyadic_triples(grid: &Grid, per_scale: usize) -> Vec<(usize, usize, usize)> {
    let n = grid.len();
    let mut out = Vec::new();
    let mut h = 1;
    while 2 * h < n {
        let starts = n - 2 * h;
        let stride = (starts / per_scale.max(1)).max(1);
        out.extend((0..starts).step_by(stride).take(per_scale).map(|i| (i, i + h, i + 2 * h)));
        h *= 2;
    }
    out
}

/// `count` uniformly random triples `r < s < t` of grid indices.
pub fn random_triples(grid: &Grid, count: usize, seed: u64) -> Vec<(usize, usize, usize)> {
    let n = grid.len();
    if n < 3 {
        return Vec::new();
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut v = [rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n)];
            v.sort_unstable();
            if v[0] == v[1] || v[1] == v[2] {
                let r = rng.random_range(0..n - 2);
                let s = rng.random_range(r + 1..n - 1);
                let t = rng.random_range(s + 1..n);
                (r, s, t)
            } else {
                (v[0], v[1], v[2])
            }
        })
        .collect()
}
