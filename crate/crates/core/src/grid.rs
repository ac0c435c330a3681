//! Time grids, control functions and grid-restricted p-variation norms.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;

/// Largest number of grid steps for which pair scans visit every pair.
pub const EXACT_SCAN_LIMIT: usize = 4096;

/// A strictly increasing list of instants `t_0 < t_1 < … < t_N`, `N ≥ 1`.
#[derive(Clone, PartialEq)]
pub struct Grid {
    times: Arc<[f64]>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Grid {{ steps: {}, span: [{}, {}] }}",
            self.steps(),
            self.start(),
            self.end()
        )
    }
}

impl Grid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 instants, got {}",
                times.len()
            )));
        }
        if let Some(t) = times.iter().find(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite instant {t}")));
        }
        if let Some(k) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "instants not strictly increasing at index {} ({} >= {})",
                k + 1,
                times[k],
                times[k + 1]
            )));
        }
        Ok(Self {
            times: times.into(),
        })
    }

    /// Uniform grid of `steps` intervals on `[0, horizon]`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(horizon > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "uniform grid needs steps >= 1 and horizon > 0 (got {steps}, {horizon})"
            )));
        }
        let mut times: Vec<f64> = (0..=steps)
            .map(|k| horizon * k as f64 / steps as f64)
            .collect();
        times[steps] = horizon;
        Self::new(times)
    }

    /// Uniform dyadic grid with `2^level` steps.
    pub fn dyadic(horizon: f64, level: u32) -> Result<Self> {
        Self::uniform(horizon, 1usize << level)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    /// Number of instants.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of intervals.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn horizon(&self) -> f64 {
        self.end() - self.start()
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }

    pub fn is_uniform(&self) -> bool {
        let h = self.horizon() / self.steps() as f64;
        (0..self.steps()).all(|i| (self.dt(i) - h).abs() <= 1e-12 * h.max(1.0))
    }

    /// Inserts the midpoint of every interval.
    pub fn refine(&self) -> Grid {
        let mut times = Vec::with_capacity(2 * self.len() - 1);
        for w in self.times.windows(2) {
            times.push(w[0]);
            times.push(0.5 * (w[0] + w[1]));
        }
        times.push(self.end());
        Grid {
            times: times.into(),
        }
    }

    /// Keeps every `stride`-th instant; the number of steps must be divisible by `stride`.
    pub fn coarsen(&self, stride: usize) -> Result<Grid> {
        if stride == 0 || !self.steps().is_multiple_of(stride) || self.steps() / stride == 0 {
            return Err(Error::InvalidGrid(format!(
                "cannot coarsen {} steps by stride {stride}",
                self.steps()
            )));
        }
        Grid::new(self.times.iter().step_by(stride).cloned().collect())
    }

    /// Sub-grid of instants `i0..=i1`.
    pub fn slice(&self, i0: usize, i1: usize) -> Result<Grid> {
        if i1 >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: i1,
                len: self.len(),
            });
        }
        if i1 <= i0 {
            return Err(Error::InvalidGrid(format!("empty slice {i0}..={i1}")));
        }
        Grid::new(self.times[i0..=i1].to_vec())
    }

    /// Whether every instant of `other` is an instant of `self`.
    pub fn contains_all(&self, other: &Grid) -> bool {
        other
            .times
            .iter()
            .all(|t| self.times.binary_search_by(|s| s.total_cmp(t)).is_ok())
    }

    /// Index of the interval `[t_k, t_{k+1}]` containing `t` (clamped to the grid).
    pub fn locate(&self, t: f64) -> usize {
        match self.times.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(k) => k.min(self.steps() - 1),
            Err(0) => 0,
            Err(k) => (k - 1).min(self.steps() - 1),
        }
    }
}

/// A super-additive control `ω(s, t) ≥ 0` with `ω(t, t) = 0`.
#[derive(Clone, Default)]
pub enum ControlFn {
    /// `ω(s, t) = t − s`.
    #[default]
    Difference,
    Custom {
        name: String,
        eval: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for ControlFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlFn::Difference => write!(f, "ControlFn::Difference"),
            ControlFn::Custom { name, .. } => write!(f, "ControlFn::Custom({name})"),
        }
    }
}

impl ControlFn {
    pub fn custom(
        name: impl Into<String>,
        eval: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ControlFn::Custom {
            name: name.into(),
            eval: Arc::new(eval),
        }
    }

    pub fn eval(&self, s: f64, t: f64) -> f64 {
        match self {
            ControlFn::Difference => t - s,
            ControlFn::Custom { eval, .. } => eval(s, t),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            ControlFn::Difference => "difference",
            ControlFn::Custom { name, .. } => name,
        }
    }

    pub(crate) fn on(&self, grid: &Grid, i: usize, j: usize) -> f64 {
        self.eval(grid.time(i), grid.time(j))
    }

    /// Checks non-negativity, `ω(t,t) = 0` and super-additivity on `samples`
    /// random grid triples `r ≤ s ≤ t`.
    pub fn validate(&self, grid: &Grid, samples: usize, seed: u64) -> Result<()> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let n = grid.len();
        for _ in 0..samples {
            let mut idx = [
                rng.random_range(0..n),
                rng.random_range(0..n),
                rng.random_range(0..n),
            ];
            idx.sort_unstable();
            let [r, s, t] = idx.map(|k| grid.time(k));
            let (rs, st, rt) = (self.eval(r, s), self.eval(s, t), self.eval(r, t));
            let diag = self.eval(s, s);
            if diag.abs() > 1e-14 {
                return Err(Error::InvalidControl(format!(
                    "{}: ω({s},{s}) = {diag} != 0",
                    self.name()
                )));
            }
            if rs < 0.0 || st < 0.0 || rt < 0.0 || !rt.is_finite() {
                return Err(Error::InvalidControl(format!(
                    "{}: negative or non-finite value on [{r}, {t}]",
                    self.name()
                )));
            }
            if rs + st > rt + 1e-12 * rt.abs().max(1.0) {
                return Err(Error::InvalidControl(format!(
                    "{}: super-additivity fails at ({r}, {s}, {t}): {rs} + {st} > {rt}",
                    self.name()
                )));
            }
        }
        Ok(())
    }
}

/// Which grid pairs a supremum scan visits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanPolicy {
    /// Every pair `i < j`.
    Exhaustive,
    /// Only pairs `(i, i + 2^k)`; the result is then a lower bound of the
    /// exhaustive value.
    Dyadic,
}

impl ScanPolicy {
    pub fn for_steps(steps: usize) -> Self {
        if steps <= EXACT_SCAN_LIMIT {
            ScanPolicy::Exhaustive
        } else {
            ScanPolicy::Dyadic
        }
    }

    /// Right endpoints visited from left endpoint `i` on a grid of `n` instants.
    pub(crate) fn partners(self, i: usize, n: usize) -> Box<dyn Iterator<Item = usize>> {
        match self {
            ScanPolicy::Exhaustive => Box::new(i + 1..n),
            ScanPolicy::Dyadic => Box::new(
                (0..usize::BITS)
                    .map(move |k| i.saturating_add(1usize << k))
                    .take_while(move |&j| j < n),
            ),
        }
    }
}

/// `max_{i<j} measure(i, j) / ω(t_i, t_j)^exponent` under the default scan policy.
pub(crate) fn sup_ratio<F>(
    grid: &Grid,
    control: &ControlFn,
    exponent: f64,
    measure: F,
) -> Result<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let n = grid.len();
    let policy = ScanPolicy::for_steps(grid.steps());
    let rows: Vec<Result<f64>> = (0..n - 1)
        .into_par_iter()
        .map(|i| {
            let mut best = 0.0f64;
            for j in policy.partners(i, n) {
                let m = measure(i, j);
                let w = control.on(grid, i, j);
                if w <= 0.0 {
                    if m > 0.0 {
                        return Err(Error::InfiniteNorm { i, j });
                    }
                    continue;
                }
                let r = m / w.powf(exponent);
                if r > best {
                    best = r;
                }
            }
            Ok(best)
        })
        .collect();
    rows.into_iter()
        .try_fold(0.0f64, |acc, r| r.map(|v| acc.max(v)))
}

/// A vector-valued path sampled on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretePath {
    grid: Grid,
    values: Vec<DVector<f64>>,
    dim: usize,
}

impl DiscretePath {
    pub fn new(grid: Grid, values: Vec<DVector<f64>>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::dims(format!(
                "{} values for {} grid instants",
                values.len(),
                grid.len()
            )));
        }
        let dim = values[0].len();
        if let Some(k) = values.iter().position(|v| v.len() != dim) {
            return Err(Error::dims(format!(
                "value {k} has dimension {} instead of {dim}",
                values[k].len()
            )));
        }
        Ok(Self { grid, values, dim })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> DVector<f64>) -> Result<Self> {
        let values = grid.times().iter().map(|&t| f(t)).collect();
        Self::new(grid, values)
    }

    pub fn scalar(grid: Grid, values: &[f64]) -> Result<Self> {
        Self::new(
            grid,
            values.iter().map(|&v| DVector::from_element(1, v)).collect(),
        )
    }

    pub fn zeros(grid: Grid, dim: usize) -> Self {
        let values = vec![DVector::zeros(dim); grid.len()];
        Self { grid, values, dim }
    }

    pub fn constant(grid: Grid, value: DVector<f64>) -> Self {
        let dim = value.len();
        let values = vec![value; grid.len()];
        Self { grid, values, dim }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn value(&self, i: usize) -> &DVector<f64> {
        &self.values[i]
    }

    pub fn first(&self) -> &DVector<f64> {
        &self.values[0]
    }

    pub fn last(&self) -> &DVector<f64> {
        &self.values[self.values.len() - 1]
    }

    /// `x_{t_i, t_j} = x_{t_j} − x_{t_i}`.
    pub fn increment(&self, i: usize, j: usize) -> DVector<f64> {
        &self.values[j] - &self.values[i]
    }

    pub fn map(&self, f: impl Fn(&DVector<f64>) -> DVector<f64>) -> Result<Self> {
        Self::new(self.grid.clone(), self.values.iter().map(f).collect())
    }

    pub fn scale(&self, lambda: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * lambda).collect(),
            dim: self.dim,
        }
    }

    fn zip_with(
        &self,
        other: &Self,
        f: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
    ) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("paths live on different grids".into()));
        }
        if self.dim != other.dim {
            return Err(Error::dims(format!("{} vs {}", self.dim, other.dim)));
        }
        Ok(Self {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| f(a, b))
                .collect(),
            dim: self.dim,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Path restricted to instants `i0..=i1`.
    pub fn restrict(&self, i0: usize, i1: usize) -> Result<Self> {
        let grid = self.grid.slice(i0, i1)?;
        Ok(Self {
            grid,
            values: self.values[i0..=i1].to_vec(),
            dim: self.dim,
        })
    }

    /// Path on the coarsened grid keeping every `stride`-th instant.
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        let grid = self.grid.coarsen(stride)?;
        Ok(Self {
            grid,
            values: self.values.iter().step_by(stride).cloned().collect(),
            dim: self.dim,
        })
    }

    /// Piecewise-linear interpolation onto `grid`, whose span must lie within ours.
    pub fn interpolate_onto(&self, grid: &Grid) -> Result<Self> {
        let eps = 1e-12 * self.grid.horizon().max(1.0);
        if grid.start() < self.grid.start() - eps || grid.end() > self.grid.end() + eps {
            return Err(Error::GridMismatch(
                "target grid exceeds the span of the path".into(),
            ));
        }
        let values = grid
            .times()
            .iter()
            .map(|&t| {
                let k = self.grid.locate(t);
                let (t0, t1) = (self.grid.time(k), self.grid.time(k + 1));
                let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
                &self.values[k] * (1.0 - w) + &self.values[k + 1] * w
            })
            .collect();
        Self::new(grid.clone(), values)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }
}

/// `sup_{i<j} |x_{t_i,t_j}| / ω(t_i,t_j)^{1/p}` over grid pairs.
///
/// Exhaustive up to [`EXACT_SCAN_LIMIT`] steps; beyond that only dyadic pairs
/// `(t_i, t_{i+2^k})` are visited and the value is a lower bound.
pub fn pvar_norm(x: &DiscretePath, p: f64, control: &ControlFn) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::param(format!("p-variation needs p >= 1, got {p}")));
    }
    let vals = x.values();
    sup_ratio(x.grid(), control, 1.0 / p, |i, j| {
        linalg::dist(vals[j].as_slice(), vals[i].as_slice())
    })
}

/// `|x_0| + ‖x‖_p`.
pub fn full_norm(x: &DiscretePath, p: f64, control: &ControlFn) -> Result<f64> {
    Ok(x.first().norm() + pvar_norm(x, p, control)?)
}

/// Outcome of comparing `sup_t |x_t|` against `|x_0| + ‖x‖_p ω(0,T)^{1/p}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbeddingCheck {
    pub sup: f64,
    pub bound: f64,
    /// `bound − sup`.
    pub slack: f64,
    pub holds: bool,
}

pub fn sup_embedding_check(
    x: &DiscretePath,
    p: f64,
    control: &ControlFn,
) -> Result<EmbeddingCheck> {
    let g = x.grid();
    let sup = x.sup_norm();
    let bound = x.first().norm()
        + pvar_norm(x, p, control)? * control.eval(g.start(), g.end()).powf(1.0 / p);
    let slack = bound - sup;
    Ok(EmbeddingCheck {
        sup,
        bound,
        slack,
        holds: slack >= -1e-12 * bound.max(1.0),
    })
}
