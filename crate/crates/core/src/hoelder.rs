//! Hölder seminorm estimates, the four-point interpolation inequality, and
//! the Omega map `y ↦ f(y)` on sampled paths.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{apply_derivative, VectorField};
use crate::grid::{full_norm, pvar_norm, ControlFn, DiscretePath};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoelderReport {
    pub alpha: f64,
    /// Lower bound on `H_α`.
    pub h_hat: f64,
    pub n_pairs: usize,
}

/// Axis-aligned sampling box.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBox {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl SampleBox {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::dims("box corners differ in dimension"));
        }
        if lo.iter().zip(hi.iter()).any(|(a, b)| !(a < b)) {
            return Err(Error::param("degenerate sampling box"));
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(dim: usize, radius: f64) -> Result<Self> {
        Self::new(DVector::from_element(dim, -radius), DVector::from_element(dim, radius))
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| rng.random_range(self.lo[i]..self.hi[i]))
    }
}

/// `max |g(x) − g(y)| / |x − y|^α` over the first `n` pairs of a seeded
/// stream, so the estimate is nondecreasing in `n`.
pub fn hoelder_seminorm_estimate<G>(g: G, alpha: f64, sample_box: &SampleBox, n: usize, seed: u64) -> Result<HoelderReport>
where
    G: Fn(&DVector<f64>) -> DVector<f64> + Sync,
{
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::param(format!("α must lie in (0, 1], got {alpha}")));
    }
    if n < 2 {
        return Err(Error::param("need at least 2 sample pairs"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let pairs: Vec<(DVector<f64>, DVector<f64>)> = (0..n)
        .map(|_| (sample_box.sample(&mut rng), sample_box.sample(&mut rng)))
        .collect();
    let h_hat = pairs
        .par_iter()
        .map(|(x, y)| {
            let d = (x - y).norm();
            if d == 0.0 {
                0.0
            } else {
                (g(x) - g(y)).norm() / d.powf(alpha)
            }
        })
        .reduce(|| 0.0, f64::max);
    Ok(HoelderReport { alpha, h_hat, n_pairs: n })
}

/// `f` viewed as a map into `R^{d_V d_U}`.
pub fn flat_eval(f: &dyn VectorField) -> impl Fn(&DVector<f64>) -> DVector<f64> + Sync + '_ {
    move |y| linalg::flatten(&f.eval(y))
}

pub type Quadruple = [DVector<f64>; 4];

pub fn random_quadruples(sample_box: &SampleBox, n: usize, seed: u64) -> Vec<Quadruple> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| std::array::from_fn(|_| sample_box.sample(&mut rng)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationReport {
    /// `max(LHS − RHS)`; nonpositive when the inequality holds everywhere.
    pub max_violation: f64,
    pub violations: usize,
    pub n: usize,
}

/// Checks `|g(z) − g(y) − g(z') + g(y')| ≤ H (|y'−y|^{κγ} + |z'−z|^{κγ})
/// (|z'−y'|^{κ̄γ} + |z−y|^{κ̄γ})` on quadruples `(y, z, y', z')`.
pub fn interpolation_check<G>(g: G, h_gamma: f64, gamma: f64, kappa: f64, quadruples: &[Quadruple], slack: f64) -> Result<InterpolationReport>
where
    G: Fn(&DVector<f64>) -> DVector<f64> + Sync,
{
    if !(gamma > 0.0 && gamma <= 1.0) || !(0.0..=1.0).contains(&kappa) {
        return Err(Error::param(format!("need γ ∈ (0, 1], κ ∈ [0, 1]; got γ = {gamma}, κ = {kappa}")));
    }
    let kbar = 1.0 - kappa;
    let excess: Vec<f64> = quadruples
        .par_iter()
        .map(|[y, z, y2, z2]| {
            let lhs = (g(z) - g(y) - g(z2) + g(y2)).norm();
            let pw = |d: f64, e: f64| if e == 0.0 { 1.0 } else { d.powf(e) };
            let a = pw((y2 - y).norm(), kappa * gamma) + pw((z2 - z).norm(), kappa * gamma);
            let b = pw((z2 - y2).norm(), kbar * gamma) + pw((z - y).norm(), kbar * gamma);
            lhs - h_gamma * a * b
        })
        .collect();
    Ok(InterpolationReport {
        max_violation: excess.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        violations: excess.iter().filter(|&&e| e > slack).count(),
        n: quadruples.len(),
    })
}

fn check_domain(f: &dyn VectorField, y: &DiscretePath) -> Result<()> {
    if y.dim() != f.input_dim() {
        return Err(Error::dims(format!(
            "path of dimension {} for field {} on R^{}",
            y.dim(),
            f.name(),
            f.input_dim()
        )));
    }
    Ok(())
}

/// `t ↦ f(y_t)`, flattened row-major.
pub fn omega_map(f: &dyn VectorField, y: &DiscretePath) -> Result<DiscretePath> {
    check_domain(f, y)?;
    let values = y.values().par_iter().map(|v| linalg::flatten(&f.eval(v))).collect();
    DiscretePath::new(y.grid().clone(), values)
}

/// `t ↦ Df(y_t) h_t`, flattened row-major.
pub fn omega_derivative(f: &dyn VectorField, y: &DiscretePath, h: &DiscretePath) -> Result<DiscretePath> {
    check_domain(f, y)?;
    check_domain(f, h)?;
    if y.grid() != h.grid() {
        return Err(Error::GridMismatch("direction lives on another grid".into()));
    }
    let values = (0..y.len())
        .into_par_iter()
        .map(|i| apply_derivative(f, y.value(i), h.value(i)).map(|m| linalg::flatten(&m)))
        .collect::<Result<Vec<_>>>()?;
    DiscretePath::new(y.grid().clone(), values)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub ratio: f64,
    pub bound: f64,
    pub q: f64,
    pub holds: bool,
}

/// Compares `‖f(y) − f(z)‖_q / ‖y − z‖^{κ̄γ}` (with `q = p/(κγ)` and the
/// full p-variation norm of `y − z`) against
/// `2 H_γ(f) max(1, ω_{0,T}^{1/p})^{κ̄γ} (‖y‖_p^{κγ} + ‖z‖_p^{κγ})`.
#[allow(clippy::too_many_arguments)]
pub fn omega_hoelder_probe(
    f: &dyn VectorField,
    h_gamma: f64,
    y: &DiscretePath,
    z: &DiscretePath,
    p: f64,
    kappa: f64,
    gamma: f64,
    control: &ControlFn,
) -> Result<ProbeReport> {
    if p < 1.0 {
        return Err(Error::param(format!("p-variation index must be >= 1, got {p}")));
    }
    if !(kappa > 0.0 && kappa < 1.0) || !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::param("need κ ∈ (0, 1) and γ ∈ (0, 1]"));
    }
    let q = p / (kappa * gamma);
    let kbar = 1.0 - kappa;
    let diff = omega_map(f, y)?.sub(&omega_map(f, z)?)?;
    let num = pvar_norm(&diff, q, control)?;
    let den = full_norm(&y.sub(z)?, p, control)?;
    let g = y.grid();
    let w = control.eval(g.start(), g.end());
    let bound = 2.0
        * h_gamma
        * w.powf(1.0 / p).max(1.0).powf(kbar * gamma)
        * (pvar_norm(y, p, control)?.powf(kappa * gamma) + pvar_norm(z, p, control)?.powf(kappa * gamma));
    let ratio = if den == 0.0 { 0.0 } else { num / den.powf(kbar * gamma) };
    Ok(ProbeReport {
        ratio,
        bound,
        q,
        holds: ratio <= bound * (1.0 + 1e-12),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCheck {
    /// Worst relative error per order `1..=k`.
    pub max_rel_error: Vec<f64>,
    pub points: usize,
}

/// Central differences of `D^{j−1} f` against `D^j f` at random points.
pub fn check_derivatives(f: &dyn VectorField, sample_box: &SampleBox, points: usize, step: f64, seed: u64) -> Result<DerivativeCheck> {
    let k = f.regularity().k;
    let n = f.input_dim();
    if sample_box.dim() != n {
        return Err(Error::dims("sampling box does not match the field domain"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let ys: Vec<DVector<f64>> = (0..points).map(|_| sample_box.sample(&mut rng)).collect();
    let mut max_rel_error = vec![0.0f64; k.min(3)];
    for (slot, order) in (1..=k.min(3)).enumerate() {
        for y in &ys {
            let exact = f.derivative(order, y)?;
            let lower = |p: &DVector<f64>| f.derivative(order - 1, p);
            let base_cols = exact.ncols() / n;
            let mut err = 0.0f64;
            for w in 0..n {
                let (mut yp, mut ym) = (y.clone(), y.clone());
                yp[w] += step;
                ym[w] -= step;
                let fd = (lower(&yp)? - lower(&ym)?) / (2.0 * step);
                for r in 0..exact.nrows() {
                    for c in 0..base_cols {
                        err = err.max((exact[(r, c * n + w)] - fd[(r, c)]).abs());
                    }
                }
            }
            let scale = exact.amax().max(1e-8);
            max_rel_error[slot] = max_rel_error[slot].max(err / scale);
        }
    }
    Ok(DerivativeCheck { max_rel_error, points })
}
