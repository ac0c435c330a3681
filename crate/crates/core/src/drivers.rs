//! Test drivers: closed-form smooth paths, synthetic Brownian and fractional
//! Brownian samples, pure-area rough paths, and piecewise-linear lifts.
//!
//! Random samples use `ChaCha20Rng` seeded with `seed`, one stream per
//! component, so a given spec string always reproduces the same path.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::{ControlFn, DiscretePath, Grid};
use crate::linalg;
use crate::tensor::{RoughPath, Tensor2};

/// Largest grid handled by the Cholesky fallback.
pub const CHOLESKY_LIMIT: usize = 1 << 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DriverKind {
    SmoothSin,
    SmoothPoly,
    Bm,
    Fbm,
    PureArea,
}

impl DriverKind {
    pub fn name(self) -> &'static str {
        match self {
            DriverKind::SmoothSin => "smooth-sin",
            DriverKind::SmoothPoly => "smooth-poly",
            DriverKind::Bm => "bm",
            DriverKind::Fbm => "fbm",
            DriverKind::PureArea => "pure-area",
        }
    }

    pub fn is_random(self) -> bool {
        matches!(self, DriverKind::Bm | DriverKind::Fbm)
    }
}

impl FromStr for DriverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "smooth-sin" | "sin" => DriverKind::SmoothSin,
            "smooth-poly" | "poly" => DriverKind::SmoothPoly,
            "bm" => DriverKind::Bm,
            "fbm" => DriverKind::Fbm,
            "pure-area" => DriverKind::PureArea,
            other => return Err(Error::Parse(format!("unknown driver kind `{other}`"))),
        })
    }
}

/// Parsed driver description, e.g. `fbm:H=0.4,d=2,N=4096,seed=7`.
///
/// Recognised keys: `d`, `N` (number of steps), `T` (horizon), `H`, `seed`;
/// anything else is kept in `params` (`freq`, `amp`, `c`, `A`).
#[derive(Clone, Debug, PartialEq)]
pub struct DriverSpec {
    pub kind: DriverKind,
    pub d: usize,
    pub n: usize,
    pub horizon: f64,
    pub hurst: f64,
    pub seed: u64,
    pub params: BTreeMap<String, String>,
}

impl DriverSpec {
    pub fn new(kind: DriverKind, d: usize, n: usize) -> Self {
        Self {
            kind,
            d,
            n,
            horizon: 1.0,
            hurst: if kind.is_random() { 0.5 } else { 1.0 },
            seed: 0,
            params: BTreeMap::new(),
        }
    }

    pub fn fbm(hurst: f64, d: usize, n: usize, seed: u64) -> Self {
        Self {
            hurst,
            seed,
            ..Self::new(DriverKind::Fbm, d, n)
        }
    }

    pub fn with_param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::uniform(self.horizon, self.n)
    }

    fn param_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Parse(format!("`{key}={v}` is not a number"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::param("driver dimension d must be positive"));
        }
        if self.n == 0 {
            return Err(Error::param("driver needs N >= 1 steps"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::param(format!("horizon T must be positive, got {}", self.horizon)));
        }
        if !(self.hurst > 0.0 && self.hurst <= 1.0) {
            return Err(Error::param(format!("Hurst index must lie in (0, 1], got {}", self.hurst)));
        }
        if self.kind == DriverKind::Fbm && !self.n.is_power_of_two() {
            return Err(Error::param(format!("fbm needs N a power of two, got {}", self.n)));
        }
        Ok(())
    }

    /// Checks that the piecewise-linear lift is a sensible input to the
    /// rough solver, which needs `H > 1/3` for `p ∈ [2, 3)`.
    pub fn validate_for_rough_solver(&self) -> Result<()> {
        if self.kind.is_random() && self.hurst <= 1.0 / 3.0 {
            return Err(Error::Regime(format!(
                "Hurst index {} is outside the level-2 regime H > 1/3",
                self.hurst
            )));
        }
        Ok(())
    }

    /// The underlying path; pure-area drivers have none beyond the origin.
    pub fn path(&self) -> Result<DiscretePath> {
        self.validate()?;
        match self.kind {
            DriverKind::SmoothSin | DriverKind::SmoothPoly => smooth_path(self),
            DriverKind::Bm => sample_bm(self),
            DriverKind::Fbm => sample_fbm(self),
            DriverKind::PureArea => Ok(DiscretePath::zeros(self.grid()?, self.d)),
        }
    }

    /// The rough path this driver denotes at regularity `p`.
    pub fn rough_path(&self, p: f64) -> Result<RoughPath> {
        self.validate()?;
        if self.kind == DriverKind::PureArea {
            let a = match self.params.get("A") {
                Some(s) => parse_matrix(s)?,
                None => unit_area(self.d)?,
            };
            return pure_area(&a, self.param_f64("c", 1.0)?, &self.grid()?, p);
        }
        lift_piecewise_linear(&self.path()?, p)
    }
}

impl fmt::Display for DriverSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:d={},N={},T={}", self.kind.name(), self.d, self.n, self.horizon)?;
        if self.kind == DriverKind::Fbm {
            write!(f, ",H={}", self.hurst)?;
        }
        if self.kind.is_random() {
            write!(f, ",seed={}", self.seed)?;
        }
        for (k, v) in &self.params {
            write!(f, ",{k}={v}")?;
        }
        Ok(())
    }
}

impl FromStr for DriverSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut spec = DriverSpec::new(kind.trim().parse()?, 1, 1024);
        for item in split_params(rest) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value, got `{item}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let bad = |_| Error::Parse(format!("invalid value `{v}` for `{k}`"));
            match k {
                "d" => spec.d = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "N" | "n" => spec.n = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "seed" => spec.seed = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "T" => spec.horizon = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "H" => spec.hurst = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                _ => {
                    spec.params.insert(k.to_string(), v.to_string());
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Splits `a=1,A=[0,1;-1,0],b=2` on commas outside brackets.
pub(crate) fn split_params(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let (mut depth, mut start) = (0i32, 0usize);
    for (i, ch) in s.char_indices() {
        match ch {
            '[' | '(' => depth += 1,
            ']' | ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out.into_iter().map(str::trim).filter(|p| !p.is_empty()).collect()
}

/// Parses `[a,b;c,d]` (rows separated by `;`) into a matrix.
pub fn parse_matrix(s: &str) -> Result<DMatrix<f64>> {
    let body = s.trim().trim_start_matches('[').trim_end_matches(']');
    let rows: Vec<Vec<f64>> = body
        .split(';')
        .map(|row| {
            row.split([',', ' '])
                .filter(|x| !x.is_empty())
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad matrix entry `{x}`")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Parse(format!("ragged or empty matrix `{s}`")));
    }
    let flat: Vec<f64> = rows.concat();
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

/// Parses `[a,b,c]` or `a;b;c` into a vector.
pub fn parse_vector(s: &str) -> Result<DVector<f64>> {
    let m = parse_matrix(&s.replace(';', ","))?;
    Ok(DVector::from_row_slice(m.as_slice()))
}

fn unit_area(d: usize) -> Result<DMatrix<f64>> {
    if d < 2 {
        return Err(Error::param("pure-area driver needs d >= 2"));
    }
    let mut a = DMatrix::zeros(d, d);
    a[(0, 1)] = 1.0;
    a[(1, 0)] = -1.0;
    Ok(a)
}

/// Piecewise-linear lift: each step is `(v, ½ v ⊗ v)`.
pub fn lift_piecewise_linear(x: &DiscretePath, p: f64) -> Result<RoughPath> {
    let steps = (0..x.grid().steps())
        .map(|k| {
            let v = x.increment(k, k + 1);
            let m = linalg::outer(&v, &v) * 0.5;
            Tensor2 { level1: v, level2: m }
        })
        .collect();
    RoughPath::new(x.grid().clone(), x.first().clone(), steps, p, ControlFn::Difference)
}

/// Rough path with zero trace and level2 increments `c (t − s) A`.
pub fn pure_area(a: &DMatrix<f64>, c: f64, grid: &Grid, p: f64) -> Result<RoughPath> {
    if !a.is_square() {
        return Err(Error::dims(format!("area matrix is {:?}", a.shape())));
    }
    let asym = (a + a.transpose()).norm();
    if asym > 1e-14 * (1.0 + a.norm()) {
        return Err(Error::param(format!("area matrix is not antisymmetric (|A + Aᵀ| = {asym})")));
    }
    let d = a.nrows();
    let steps = (0..grid.steps())
        .map(|k| Tensor2 {
            level1: DVector::zeros(d),
            level2: a * (c * grid.dt(k)),
        })
        .collect();
    RoughPath::new(grid.clone(), DVector::zeros(d), steps, p, ControlFn::Difference)
}

/// Closed-form drivers.
///
/// `smooth-sin`: component `k` is `amp · sin(2π freq (k+1) t)`.
/// `smooth-poly`: component `k` is `t^{k+1}`.
pub fn smooth_path(spec: &DriverSpec) -> Result<DiscretePath> {
    let d = spec.d;
    match spec.kind {
        DriverKind::SmoothSin => {
            let freq = spec.param_f64("freq", 1.0)?;
            let amp = spec.param_f64("amp", 1.0)?;
            DiscretePath::from_fn(spec.grid()?, |t| {
                DVector::from_fn(d, |k, _| amp * (2.0 * PI * freq * (k + 1) as f64 * t).sin())
            })
        }
        DriverKind::SmoothPoly => DiscretePath::from_fn(spec.grid()?, |t| {
            DVector::from_fn(d, |k, _| t.powi(k as i32 + 1))
        }),
        other => Err(Error::param(format!("{} is not a smooth driver", other.name()))),
    }
}

fn component_rng(seed: u64, component: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(component as u64);
    rng
}

fn assemble(grid: Grid, columns: Vec<Vec<f64>>) -> Result<DiscretePath> {
    let n = grid.len();
    let values = (0..n)
        .map(|i| DVector::from_fn(columns.len(), |k, _| columns[k][i]))
        .collect();
    DiscretePath::new(grid, values)
}

/// Standard Brownian motion from independent Gaussian increments.
pub fn sample_bm(spec: &DriverSpec) -> Result<DiscretePath> {
    let grid = spec.grid()?;
    let columns = (0..spec.d)
        .map(|k| {
            let mut rng = component_rng(spec.seed, k);
            let mut acc = vec![0.0; grid.len()];
            for i in 0..grid.steps() {
                let z: f64 = StandardNormal.sample(&mut rng);
                acc[i + 1] = acc[i] + z * grid.dt(i).sqrt();
            }
            acc
        })
        .collect();
    assemble(grid, columns)
}

/// Autocovariance of unit-spacing fractional Gaussian noise.
fn fgn_autocov(h: f64, k: usize) -> f64 {
    let k = k as f64;
    let e = 2.0 * h;
    0.5 * ((k + 1.0).powf(e) - 2.0 * k.powf(e) + (k - 1.0).abs().powf(e))
}

/// Eigenvalues of the minimal circulant embedding of the fGn covariance,
/// or `None` when the embedding is not nonnegative definite.
fn circulant_eigenvalues(h: f64, n: usize) -> Option<Vec<f64>> {
    let m = 2 * n;
    let mut c: Vec<Complex<f64>> = (0..m)
        .map(|j| {
            let lag = if j <= n { j } else { m - j };
            Complex::new(fgn_autocov(h, lag), 0.0)
        })
        .collect();
    FftPlanner::<f64>::new().plan_fft_forward(m).process(&mut c);
    let tol = 1e-10 * c.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    if c.iter().any(|z| z.re < -tol) {
        return None;
    }
    Some(c.into_iter().map(|z| z.re.max(0.0)).collect())
}

fn fgn_davies_harte(lambda: &[f64], n: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
    let m = lambda.len();
    let mut w: Vec<Complex<f64>> = lambda
        .iter()
        .map(|&l| {
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            Complex::new(a, b) * (l / m as f64).sqrt()
        })
        .collect();
    FftPlanner::<f64>::new().plan_fft_forward(m).process(&mut w);
    w.truncate(n);
    w.into_iter().map(|z| z.re).collect()
}

fn fgn_cholesky(h: f64, n: usize) -> Result<DMatrix<f64>> {
    let cov = DMatrix::from_fn(n, n, |i, j| fgn_autocov(h, i.abs_diff(j)));
    cov.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::param(format!("fGn covariance is not positive definite (H = {h})")))
}

/// Fractional Brownian motion with Hurst index `H ∈ (0, 1)` on a uniform grid
/// of `N = 2^k` steps, exact in law.
pub fn sample_fbm(spec: &DriverSpec) -> Result<DiscretePath> {
    if spec.kind != DriverKind::Fbm && spec.kind != DriverKind::Bm {
        return Err(Error::param(format!("{} is not an fbm driver", spec.kind.name())));
    }
    let h = spec.hurst;
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::param(format!("fbm needs H in (0, 1), got {h}")));
    }
    let n = spec.n;
    if !n.is_power_of_two() {
        return Err(Error::param(format!("fbm needs N a power of two, got {n}")));
    }
    let grid = spec.grid()?;
    let scale = (spec.horizon / n as f64).powf(h);
    enum Method {
        Circulant(Vec<f64>),
        Cholesky(DMatrix<f64>),
    }
    let method = match circulant_eigenvalues(h, n) {
        Some(l) => Method::Circulant(l),
        None if n <= CHOLESKY_LIMIT => Method::Cholesky(fgn_cholesky(h, n)?),
        None => {
            return Err(Error::param(format!(
                "circulant embedding fails for H = {h}, N = {n} and N exceeds the Cholesky limit"
            )))
        }
    };
    let columns = (0..spec.d)
        .map(|k| {
            let mut rng = component_rng(spec.seed, k);
            let noise = match &method {
                Method::Circulant(l) => fgn_davies_harte(l, n, &mut rng),
                Method::Cholesky(l) => {
                    let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                    (l * z).as_slice().to_vec()
                }
            };
            let mut acc = vec![0.0; n + 1];
            for i in 0..n {
                acc[i + 1] = acc[i] + noise[i] * scale;
            }
            acc
        })
        .collect();
    assemble(grid, columns)
}

/// Cholesky-only sampler, exposed so both methods can be compared.
pub fn sample_fbm_cholesky(spec: &DriverSpec) -> Result<DiscretePath> {
    spec.validate()?;
    let (h, n) = (spec.hurst, spec.n);
    if n > CHOLESKY_LIMIT || !(h > 0.0 && h < 1.0) {
        return Err(Error::param("Cholesky sampler needs N <= 2^11 and H in (0, 1)"));
    }
    let l = fgn_cholesky(h, n)?;
    let scale = (spec.horizon / n as f64).powf(h);
    let columns = (0..spec.d)
        .map(|k| {
            let mut rng = component_rng(spec.seed, k);
            let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let noise = l.clone() * z;
            let mut acc = vec![0.0; n + 1];
            for i in 0..n {
                acc[i + 1] = acc[i] + noise[i] * scale;
            }
            acc
        })
        .collect();
    assemble(spec.grid()?, columns)
}
