//! The step-2 truncated tensor group and grid-indexed rough paths.
//!
//! A [`RoughPath`] stores one group element per grid interval; every other
//! increment is the ordered product of the steps in between, so Chen's
//! relation `x_{r,t} = x_{r,s} ⊗ x_{s,t}` holds by construction.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ControlFn, DiscretePath, Grid, ScanPolicy};
use crate::linalg;
use crate::young;

/// `1 + level1 + level2` in `T_2(R^d)`; the scalar part is implicit.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor2 {
    pub level1: DVector<f64>,
    pub level2: DMatrix<f64>,
}

impl Tensor2 {
    pub fn new(level1: DVector<f64>, level2: DMatrix<f64>) -> Result<Self> {
        let d = level1.len();
        if level2.shape() != (d, d) {
            return Err(Error::dims(format!(
                "level2 is {:?}, expected ({d}, {d})",
                level2.shape()
            )));
        }
        Ok(Self { level1, level2 })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            level1: DVector::zeros(d),
            level2: DMatrix::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.level1.len()
    }

    /// `self ← self ⊗ rhs`, in place.
    pub fn mul_assign(&mut self, rhs: &Tensor2) {
        self.level2 += &rhs.level2;
        linalg::add_outer(
            &mut self.level2,
            self.level1.as_slice(),
            rhs.level1.as_slice(),
        );
        self.level1 += &rhs.level1;
    }

    /// `max(|level1|, |level2|)`.
    pub fn norm(&self) -> f64 {
        self.level1.norm().max(self.level2.norm())
    }

    /// `ε`-dilation `(εv, ε²M)`.
    pub fn dilate(&self, eps: f64) -> Tensor2 {
        Tensor2 {
            level1: &self.level1 * eps,
            level2: &self.level2 * (eps * eps),
        }
    }

    pub fn distance(&self, other: &Tensor2) -> f64 {
        (&self.level1 - &other.level1)
            .norm()
            .max((&self.level2 - &other.level2).norm())
    }
}

/// Truncated tensor product `(v, M)(v', M') = (v + v', M + M' + v ⊗ v')`.
pub fn tensor_mul(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    if a.dim() != b.dim() {
        return Err(Error::dims(format!(
            "tensor product of dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let mut out = a.clone();
    out.mul_assign(b);
    Ok(out)
}

/// `(v, M)^{-1} = (−v, −M + v ⊗ v)`.
pub fn tensor_inv(a: &Tensor2) -> Tensor2 {
    Tensor2 {
        level1: -&a.level1,
        level2: linalg::outer(&a.level1, &a.level1) - &a.level2,
    }
}

/// Level-wise homogeneous norms of a rough path over grid pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoughNorm {
    /// `sup |x¹_{s,t}| / ω^{1/p}`.
    pub level1: f64,
    /// `sup (|x²_{s,t}| / ω^{2/p})^{1/2}`.
    pub level2: f64,
}

impl RoughNorm {
    pub fn value(&self) -> f64 {
        self.level1.max(self.level2)
    }

    /// `‖x‖ ∨ ‖x‖²`.
    pub fn value_or_square(&self) -> f64 {
        let v = self.value();
        v.max(v * v)
    }
}

/// A level-2 rough path on a grid.
#[derive(Clone, Debug)]
pub struct RoughPath {
    grid: Grid,
    start: DVector<f64>,
    steps: Vec<Tensor2>,
    p: f64,
    control: ControlFn,
    /// Level-1 trace `start + Σ steps`, cached.
    trace: Vec<DVector<f64>>,
    /// Redundant non-adjacent increments carried by loaded files.
    stored: BTreeMap<(usize, usize), Tensor2>,
    /// `rough_norm`, computed on first use.
    norm: OnceLock<RoughNorm>,
}

impl RoughPath {
    pub fn new(
        grid: Grid,
        start: DVector<f64>,
        steps: Vec<Tensor2>,
        p: f64,
        control: ControlFn,
    ) -> Result<Self> {
        if !(2.0..3.0).contains(&p) {
            return Err(Error::Regime(format!(
                "rough path regularity p must lie in [2, 3), got {p}"
            )));
        }
        if steps.len() != grid.steps() {
            return Err(Error::dims(format!(
                "{} step increments for {} grid intervals",
                steps.len(),
                grid.steps()
            )));
        }
        let d = start.len();
        if let Some(k) = steps.iter().position(|s| s.dim() != d || s.level2.shape() != (d, d)) {
            return Err(Error::dims(format!("step {k} does not have dimension {d}")));
        }
        let mut trace = Vec::with_capacity(grid.len());
        trace.push(start.clone());
        for s in &steps {
            let next = trace.last().unwrap() + &s.level1;
            trace.push(next);
        }
        Ok(Self {
            grid,
            start,
            steps,
            p,
            control,
            trace,
            stored: BTreeMap::new(),
            norm: OnceLock::new(),
        })
    }

    /// Identity increments everywhere, started at the origin.
    pub fn zero(grid: Grid, d: usize, p: f64) -> Result<Self> {
        let steps = vec![Tensor2::identity(d); grid.steps()];
        Self::new(grid, DVector::zeros(d), steps, p, ControlFn::Difference)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn control(&self) -> &ControlFn {
        &self.control
    }

    pub fn start(&self) -> &DVector<f64> {
        &self.start
    }

    pub fn steps(&self) -> &[Tensor2] {
        &self.steps
    }

    pub fn step(&self, i: usize) -> &Tensor2 {
        &self.steps[i]
    }

    /// Point `start + x¹_{0,t_i}` of the underlying path.
    pub fn trace_at(&self, i: usize) -> &DVector<f64> {
        &self.trace[i]
    }

    /// The underlying path `π(x)`.
    pub fn trace(&self) -> DiscretePath {
        DiscretePath::new(self.grid.clone(), self.trace.clone())
            .expect("trace matches the grid")
    }

    /// `x¹_{t_i,t_j}` from the cached trace.
    pub fn level1_increment(&self, i: usize, j: usize) -> DVector<f64> {
        &self.trace[j] - &self.trace[i]
    }

    /// `x_{t_i,t_j}`, the ordered product of the steps between `i` and `j`.
    pub fn increment(&self, i: usize, j: usize) -> Result<Tensor2> {
        if j >= self.grid.len() {
            return Err(Error::IndexOutOfRange {
                index: j,
                len: self.grid.len(),
            });
        }
        if i > j {
            return Err(Error::param(format!("increment needs i <= j, got ({i}, {j})")));
        }
        let mut acc = Tensor2::identity(self.dim());
        for s in &self.steps[i..j] {
            acc.mul_assign(s);
        }
        Ok(acc)
    }

    /// Rough path restricted to instants `i0..=i1`, starting at `trace_at(i0)`.
    pub fn restrict(&self, i0: usize, i1: usize) -> Result<Self> {
        let grid = self.grid.slice(i0, i1)?;
        Self::new(
            grid,
            self.trace[i0].clone(),
            self.steps[i0..i1].to_vec(),
            self.p,
            self.control.clone(),
        )
    }

    /// The same increments re-indexed to another regularity `p`.
    pub fn with_p(&self, p: f64) -> Result<Self> {
        let mut out = Self::new(
            self.grid.clone(),
            self.start.clone(),
            self.steps.clone(),
            p,
            self.control.clone(),
        )?;
        out.stored = self.stored.clone();
        Ok(out)
    }

    /// Attaches a redundant increment for `(i, j)`, as read from a file.
    pub fn with_stored_increment(mut self, i: usize, j: usize, inc: Tensor2) -> Result<Self> {
        if i >= j || j >= self.grid.len() || inc.dim() != self.dim() {
            return Err(Error::param(format!("invalid stored increment ({i}, {j})")));
        }
        self.stored.insert((i, j), inc);
        Ok(self)
    }

    pub fn stored_increments(&self) -> impl Iterator<Item = (&(usize, usize), &Tensor2)> {
        self.stored.iter()
    }

    fn known_increment(&self, i: usize, j: usize) -> Tensor2 {
        match self.stored.get(&(i, j)) {
            Some(t) => t.clone(),
            None => self.increment(i, j).expect("indices checked by caller"),
        }
    }
}

/// `‖x‖_p` with the level-wise homogeneous convention.
pub fn rough_norm(x: &RoughPath) -> Result<RoughNorm> {
    if let Some(n) = x.norm.get() {
        return Ok(*n);
    }
    let n = scan_norm(x)?;
    Ok(*x.norm.get_or_init(|| n))
}

fn scan_norm(x: &RoughPath) -> Result<RoughNorm> {
    let grid = x.grid();
    let n = grid.len();
    let control = x.control();
    let e1 = 1.0 / x.p();
    // on uniform grids with ω = t − s the weights depend on the lag only
    let lag_weights: Option<Vec<f64>> = (matches!(control, ControlFn::Difference) && grid.is_uniform())
        .then(|| (0..n).map(|k| (grid.time(k) - grid.start()).powf(e1)).collect());
    let ratio = |i: usize, j: usize, inc: &Tensor2| -> Result<(f64, f64)> {
        let (a, b) = (inc.level1.norm(), inc.level2.norm());
        let we = match &lag_weights {
            Some(lw) => lw[j - i],
            None => control.on(grid, i, j).max(0.0).powf(e1),
        };
        if we <= 0.0 {
            if a > 0.0 || b > 0.0 {
                return Err(Error::InfiniteNorm { i, j });
            }
            return Ok((0.0, 0.0));
        }
        // (b / ω^{2/p})^{1/2} = b^{1/2} / ω^{1/p}
        Ok((a / we, b.sqrt() / we))
    };
    let combine = |acc: (f64, f64), r: (f64, f64)| (acc.0.max(r.0), acc.1.max(r.1));

    let rows: Vec<Result<(f64, f64)>> = match ScanPolicy::for_steps(grid.steps()) {
        ScanPolicy::Exhaustive => (0..n - 1)
            .into_par_iter()
            .map(|i| {
                let mut acc = Tensor2::identity(x.dim());
                let mut best = (0.0, 0.0);
                for j in i + 1..n {
                    acc.mul_assign(x.step(j - 1));
                    best = combine(best, ratio(i, j, &acc)?);
                }
                Ok(best)
            })
            .collect(),
        ScanPolicy::Dyadic => {
            // blocks[k][i] = x_{t_i, t_{i+2^k}}
            let mut rows = Vec::new();
            let mut level: Vec<Tensor2> = x.steps().to_vec();
            let mut width = 1usize;
            while !level.is_empty() {
                rows.extend(
                    level
                        .par_iter()
                        .enumerate()
                        .map(|(i, inc)| ratio(i, i + width, inc))
                        .collect::<Vec<_>>(),
                );
                let next: Vec<Tensor2> = (0..level.len().saturating_sub(width))
                    .into_par_iter()
                    .map(|i| {
                        let mut t = level[i].clone();
                        t.mul_assign(&level[i + width]);
                        t
                    })
                    .collect();
                level = next;
                width *= 2;
            }
            rows
        }
    };
    let (level1, level2) = rows
        .into_iter()
        .try_fold((0.0, 0.0), |acc, r| r.map(|v| combine(acc, v)))?;
    Ok(RoughNorm { level1, level2 })
}

/// `𝔡_ε x`: every step `(v, M) ↦ (εv, ε²M)`; the start point is scaled by `ε` too.
pub fn dilate(x: &RoughPath, eps: f64) -> RoughPath {
    let steps = x.steps().iter().map(|s| s.dilate(eps)).collect();
    RoughPath::new(
        x.grid().clone(),
        x.start() * eps,
        steps,
        x.p(),
        x.control().clone(),
    )
    .expect("dilation preserves shapes")
}

/// Translation `x(h)` with `π(x(h)) = π(x) + h`.
///
/// Per step the level-2 part gains `∫h⊗dx + ∫x⊗dh + ∫h⊗dh`, each cross term
/// being the Young integral of the linear interpolants over the step.
pub fn translate(x: &RoughPath, h: &DiscretePath, q: f64) -> Result<RoughPath> {
    if 1.0 / x.p() + 1.0 / q <= 1.0 {
        return Err(Error::YoungCondition { p: x.p(), q });
    }
    if h.grid() != x.grid() {
        return Err(Error::GridMismatch("translation must share the rough path grid".into()));
    }
    if h.dim() != x.dim() {
        return Err(Error::dims(format!(
            "translation of dimension {} for a rough path of dimension {}",
            h.dim(),
            x.dim()
        )));
    }
    let steps = x
        .steps()
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let dh = h.increment(k, k + 1);
            let v = &s.level1;
            let mut m = s.level2.clone();
            m += young::step_cross(&dh, v);
            m += young::step_cross(v, &dh);
            m += young::step_cross(&dh, &dh);
            Tensor2 {
                level1: v + &dh,
                level2: m,
            }
        })
        .collect();
    RoughPath::new(
        x.grid().clone(),
        x.start() + h.first(),
        steps,
        x.p(),
        x.control().clone(),
    )
}

/// Maximal violation of Chen's relation over sampled triples `i < j < k`.
///
/// Paths built in memory satisfy it up to rounding; for loaded paths the
/// stored redundant increments are checked against the step composition.
pub fn chen_defect(x: &RoughPath) -> f64 {
    let n = x.grid().len();
    let mut triples: Vec<(usize, usize, usize)> = Vec::new();
    for (&(i, k), _) in x.stored_increments() {
        for j in [i + (k - i) / 2, i + 1, k - 1] {
            if i < j && j < k {
                triples.push((i, j, k));
            }
        }
    }
    let stride = (n / 16).max(1);
    for i in (0..n).step_by(stride) {
        for k in (i + 2..n).step_by(stride) {
            triples.push((i, i + (k - i) / 2, k));
        }
    }
    triples
        .par_iter()
        .map(|&(i, j, k)| {
            let lhs = x.known_increment(i, k);
            let mut rhs = x.known_increment(i, j);
            rhs.mul_assign(&x.known_increment(j, k));
            lhs.distance(&rhs)
        })
        .reduce(|| 0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::lift_piecewise_linear;

    fn t2(v: &[f64], m: &[f64]) -> Tensor2 {
        let d = v.len();
        Tensor2::new(DVector::from_row_slice(v), DMatrix::from_row_slice(d, d, m)).unwrap()
    }

    #[test]
    fn identity_is_neutral() {
        let a = t2(&[1.0, -2.0], &[0.5, 1.0, -1.0, 3.0]);
        let e = Tensor2::identity(2);
        assert_eq!(tensor_mul(&e, &a).unwrap(), a);
        assert_eq!(tensor_mul(&a, &e).unwrap(), a);
    }

    #[test]
    fn orthogonal_units_produce_outer_product() {
        let a = t2(&[1.0, 0.0], &[0.0; 4]);
        let b = t2(&[0.0, 1.0], &[0.0; 4]);
        let c = tensor_mul(&a, &b).unwrap();
        assert_eq!(c.level1.as_slice(), &[1.0, 1.0]);
        assert_eq!(c.level2, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
    }

    #[test]
    fn inverse_of_pure_vector() {
        let a = t2(&[2.0, 3.0], &[0.0; 4]);
        let inv = tensor_inv(&a);
        assert_eq!(inv.level1.as_slice(), &[-2.0, -3.0]);
        assert_eq!(inv.level2, DMatrix::from_row_slice(2, 2, &[4.0, 6.0, 6.0, 9.0]));
        assert_eq!(tensor_inv(&Tensor2::identity(3)), Tensor2::identity(3));
        let prod = tensor_mul(&a, &inv).unwrap();
        assert_eq!(prod, Tensor2::identity(2));
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let a = Tensor2::identity(2);
        let b = Tensor2::identity(3);
        assert!(matches!(tensor_mul(&a, &b), Err(Error::DimensionMismatch(_))));
        assert!(Tensor2::new(DVector::zeros(2), DMatrix::zeros(2, 3)).is_err());
    }

    fn poly_lift(n: usize) -> RoughPath {
        let g = Grid::uniform(1.0, n).unwrap();
        let x = DiscretePath::from_fn(g, |t| DVector::from_vec(vec![t, t * t])).unwrap();
        lift_piecewise_linear(&x, 2.0).unwrap()
    }

    #[test]
    fn increments_compose_steps() {
        let x = poly_lift(2);
        assert_eq!(x.increment(1, 1).unwrap(), Tensor2::identity(2));
        assert_eq!(&x.increment(0, 1).unwrap(), x.step(0));
        // chords (1/2, 1/4) then (1/2, 3/4); level2 = ½v⊗v + ½w⊗w + v⊗w
        let whole = x.increment(0, 2).unwrap();
        let expect = DMatrix::from_row_slice(
            2,
            2,
            &[
                0.125 + 0.125 + 0.25,
                0.0625 + 0.1875 + 0.375,
                0.0625 + 0.1875 + 0.125,
                0.03125 + 0.28125 + 0.1875,
            ],
        );
        assert!((whole.level2 - expect).norm() < 1e-15);
        assert!(x.increment(0, 3).is_err());
    }

    #[test]
    fn refined_lift_converges_to_iterated_integrals() {
        // ∫∫ over [0,1] of (t, t²): [[1/2, 2/3], [1/3, 1/2]]
        let exact = DMatrix::from_row_slice(2, 2, &[0.5, 2.0 / 3.0, 1.0 / 3.0, 0.5]);
        let mut errs = Vec::new();
        for n in [8, 16, 32, 64] {
            let x = poly_lift(n);
            errs.push((x.increment(0, n).unwrap().level2 - &exact).norm());
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 1.9, "order {order}");
        }
    }

    #[test]
    fn rough_norm_of_linear_lift() {
        let g = Grid::uniform(1.0, 50).unwrap();
        let x = DiscretePath::from_fn(g, |t| DVector::from_element(1, 1.7 * t)).unwrap();
        let r = rough_norm(&lift_piecewise_linear(&x, 2.0).unwrap()).unwrap();
        assert!((r.level1 - 1.7).abs() < 1e-12);
        // |x²| = ½ c² (t−s)² over ω^{1}, sup at the whole interval
        assert!((r.level2 - (0.5f64).sqrt() * 1.7).abs() < 1e-12);
        let z = RoughPath::zero(Grid::uniform(1.0, 8).unwrap(), 2, 2.5).unwrap();
        assert_eq!(rough_norm(&z).unwrap().value(), 0.0);
    }

    #[test]
    fn dyadic_rough_norm_lower_bounds_exhaustive() {
        let n = 8192;
        let g = Grid::uniform(1.0, n).unwrap();
        let x = DiscretePath::from_fn(g, |t| DVector::from_vec(vec![(6.0 * t).sin(), t * t])).unwrap();
        let lift = lift_piecewise_linear(&x, 2.0).unwrap();
        let dy = rough_norm(&lift).unwrap();
        let coarse = rough_norm(&lift_piecewise_linear(&x.subsample(2).unwrap(), 2.0).unwrap()).unwrap();
        assert!(dy.value() > 0.0);
        assert!(dy.level1 <= coarse.level1 * 1.01 + 1e-12);
    }

    #[test]
    fn dilation_scales_levels() {
        let x = poly_lift(4);
        assert_eq!(dilate(&x, 1.0).steps(), x.steps());
        assert!(dilate(&x, 0.0).steps().iter().all(|s| s.norm() == 0.0));
        let two = dilate(&x, 2.0);
        let (a, b) = (x.increment(0, 4).unwrap(), two.increment(0, 4).unwrap());
        assert!((b.level2 - a.level2 * 4.0).norm() < 1e-14);
        assert!((b.level1 - a.level1 * 2.0).norm() < 1e-15);
    }

    #[test]
    fn dilation_composes_multiplicatively() {
        let x = poly_lift(8);
        let twice = dilate(&dilate(&x, 0.5), -4.0);
        let once = dilate(&x, -2.0);
        assert_eq!(twice.steps(), once.steps());
    }

    #[test]
    fn translation_by_zero_is_identity() {
        let x = poly_lift(8);
        let h = DiscretePath::zeros(x.grid().clone(), 2);
        let y = translate(&x, &h, 1.0).unwrap();
        assert_eq!(y.steps(), x.steps());
        assert_eq!(y.start(), x.start());
    }

    #[test]
    fn translation_needs_young_pairing() {
        let x = poly_lift(8).with_p(2.5).unwrap();
        let h = DiscretePath::zeros(x.grid().clone(), 2);
        assert!(matches!(translate(&x, &h, 1.8), Err(Error::YoungCondition { .. })));
    }

    #[test]
    fn translation_of_zero_path_is_the_lift() {
        let g = Grid::uniform(1.0, 32).unwrap();
        let h = DiscretePath::from_fn(g.clone(), |t| DVector::from_vec(vec![t.sin(), t * t])).unwrap();
        let zero = RoughPath::zero(g, 2, 2.0).unwrap();
        let y = translate(&zero, &h, 1.0).unwrap();
        let lift = lift_piecewise_linear(&h, 2.0).unwrap();
        for (a, b) in y.steps().iter().zip(lift.steps()) {
            assert!(a.distance(b) < 1e-15);
        }
    }

    #[test]
    fn scalar_translation_matches_square_of_sum() {
        let g = Grid::uniform(1.0, 64).unwrap();
        let xp = DiscretePath::from_fn(g.clone(), |t| DVector::from_element(1, (3.0 * t).sin())).unwrap();
        let h = DiscretePath::from_fn(g, |t| DVector::from_element(1, t * t - t)).unwrap();
        let y = translate(&lift_piecewise_linear(&xp, 2.0).unwrap(), &h, 1.0).unwrap();
        let sum = xp.add(&h).unwrap();
        let inc = y.increment(5, 50).unwrap();
        let d = sum.increment(5, 50)[0];
        assert!((inc.level2[(0, 0)] - 0.5 * d * d).abs() < 1e-13);
    }

    #[test]
    fn translation_roundtrip() {
        let g = Grid::uniform(1.0, 32).unwrap();
        let x = lift_piecewise_linear(
            &DiscretePath::from_fn(g.clone(), |t| DVector::from_vec(vec![t.cos(), t])).unwrap(),
            2.0,
        )
        .unwrap();
        let h = DiscretePath::from_fn(g, |t| DVector::from_vec(vec![0.3 * t, -t * t])).unwrap();
        let back = translate(&translate(&x, &h, 1.0).unwrap(), &h.scale(-1.0), 1.0).unwrap();
        for (a, b) in back.steps().iter().zip(x.steps()) {
            assert!((&a.level1 - &b.level1).norm() < 1e-15);
            assert!((&a.level2 - &b.level2).norm() < 1e-15);
        }
    }

    #[test]
    fn chen_defect_detects_corruption() {
        let x = poly_lift(8);
        assert!(chen_defect(&x) < 1e-15);
        let mut bad = x.increment(1, 6).unwrap();
        bad.level2[(0, 1)] += 1e-3;
        let x = x.with_stored_increment(1, 6, bad).unwrap();
        assert!(chen_defect(&x) > 5e-4);
    }

    #[test]
    fn lift_is_geometric() {
        let x = poly_lift(16);
        for s in x.steps() {
            let sym = (&s.level2 + s.level2.transpose()) * 0.5;
            let half = linalg::outer(&s.level1, &s.level1) * 0.5;
            assert!((sym - half).norm() < 1e-15);
        }
    }
}
