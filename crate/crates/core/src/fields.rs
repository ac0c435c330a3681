//! Vector fields `f: R^n → L(R^{d_U}, R^{d_V})` with analytic derivatives.
//!
//! `eval` returns the `d_V × d_U` matrix `f(y)`. The order-`j` derivative is
//! returned as a `(d_V d_U) × n^j` matrix: row `v d_U + u`, column
//! `w_1 n^{j−1} + … + w_j`.

use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::drivers::{parse_matrix, split_params};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regularity {
    pub k: usize,
    pub gamma: f64,
}

/// Constructor-supplied bounds: `sup[j] ≥ sup_y |D^j f(y)|` and
/// `hoelder ≥ H_γ(D^k f)`. `None` means unbounded or unknown.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub sup: Vec<Option<f64>>,
    pub hoelder: Option<f64>,
}

pub trait VectorField: Send + Sync + fmt::Debug {
    /// Dimension `n` of the domain.
    fn input_dim(&self) -> usize;
    /// `d_V`.
    fn output_dim(&self) -> usize;
    /// `d_U`.
    fn driver_dim(&self) -> usize;
    fn regularity(&self) -> Regularity;
    fn eval(&self, y: &DVector<f64>) -> DMatrix<f64>;
    /// `D^order f(y)`; order 0 is `f` flattened to a column.
    fn derivative(&self, order: usize, y: &DVector<f64>) -> Result<DMatrix<f64>>;
    fn norm_bounds(&self) -> NormBounds {
        NormBounds::default()
    }
    fn name(&self) -> String;

    /// Fields with a finite sup bound; unbounded ones are still admitted.
    fn is_bounded(&self) -> bool {
        matches!(self.norm_bounds().sup.first(), Some(Some(_)))
    }
}

pub type Field = Arc<dyn VectorField>;

pub(crate) fn require_order(f: &dyn VectorField, order: usize) -> Result<()> {
    let k = f.regularity().k;
    if order > k {
        return Err(Error::InsufficientDerivatives {
            requested: order,
            available: k,
        });
    }
    Ok(())
}

/// Checks that `f` can drive an equation on its own state space.
pub fn check_autonomous(f: &dyn VectorField) -> Result<()> {
    if f.input_dim() != f.output_dim() {
        return Err(Error::dims(format!(
            "field {} maps R^{} into L(R^{}, R^{})",
            f.name(),
            f.input_dim(),
            f.driver_dim(),
            f.output_dim()
        )));
    }
    Ok(())
}

/// `Df(y)·h` as a `d_V × d_U` matrix.
pub fn apply_derivative(f: &dyn VectorField, y: &DVector<f64>, h: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = f.derivative(1, y)?;
    Ok(contract(&d, h, f.output_dim(), f.driver_dim()))
}

/// `Σ_w D[(v,u), w] h_w` reshaped to `d_V × d_U`.
pub(crate) fn contract(d: &DMatrix<f64>, h: &DVector<f64>, dv: usize, du: usize) -> DMatrix<f64> {
    let flat = d * h;
    DMatrix::from_row_slice(dv, du, flat.as_slice())
}

/// Scalar profile `φ` applied entrywise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Profile {
    Identity,
    Tanh,
    Sin,
    /// `|z|^{1+γ}`, one derivative.
    Power { gamma: f64 },
    /// `|z|^γ`, no derivatives.
    Hoelder { gamma: f64 },
}

const SMOOTH_ORDER: usize = 4;

impl Profile {
    fn regularity(self) -> Regularity {
        match self {
            Profile::Identity | Profile::Tanh | Profile::Sin => Regularity { k: SMOOTH_ORDER, gamma: 1.0 },
            Profile::Power { gamma } => Regularity { k: 1, gamma },
            Profile::Hoelder { gamma } => Regularity { k: 0, gamma },
        }
    }

    /// `φ^{(j)}(z)`.
    fn deriv(self, j: usize, z: f64) -> f64 {
        match self {
            Profile::Identity => match j {
                0 => z,
                1 => 1.0,
                _ => 0.0,
            },
            Profile::Tanh => {
                let t = z.tanh();
                eval_poly(&tanh_poly(j), t)
            }
            Profile::Sin => match j % 4 {
                0 => z.sin(),
                1 => z.cos(),
                2 => -z.sin(),
                _ => -z.cos(),
            },
            Profile::Power { gamma } => match j {
                0 => z.abs().powf(1.0 + gamma),
                _ => (1.0 + gamma) * z.abs().powf(gamma) * z.signum(),
            },
            Profile::Hoelder { gamma } => z.abs().powf(gamma),
        }
    }

    /// `sup_z |φ^{(j)}(z)|`, `None` when unbounded.
    fn sup(self, j: usize) -> Option<f64> {
        match self {
            Profile::Identity => match j {
                0 => None,
                1 => Some(1.0),
                _ => Some(0.0),
            },
            Profile::Tanh => {
                static SUPS: OnceLock<Vec<f64>> = OnceLock::new();
                let sups = SUPS.get_or_init(|| (0..=SMOOTH_ORDER + 1).map(tanh_sup).collect());
                Some(sups.get(j).copied().unwrap_or_else(|| tanh_sup(j)))
            }
            Profile::Sin => Some(1.0),
            Profile::Power { .. } | Profile::Hoelder { .. } => None,
        }
    }

    /// `H_γ(φ^{(k)})` for the top derivative.
    fn top_hoelder(self) -> Option<f64> {
        match self {
            Profile::Identity => Some(0.0),
            Profile::Tanh | Profile::Sin => self.sup(SMOOTH_ORDER + 1),
            // |x|^γ sign x has γ-Hölder constant 2^{1−γ}
            Profile::Power { gamma } => Some((1.0 + gamma) * 2f64.powf(1.0 - gamma)),
            Profile::Hoelder { .. } => Some(1.0),
        }
    }
}

/// Coefficients of `P_j` with `tanh^{(j)}(z) = P_j(tanh z)`.
fn tanh_poly(j: usize) -> Vec<f64> {
    let mut p = vec![0.0, 1.0];
    for _ in 0..j {
        // P' (1 − t²)
        let dp: Vec<f64> = (1..p.len()).map(|i| p[i] * i as f64).collect();
        let mut next = vec![0.0; dp.len() + 2];
        for (i, c) in dp.iter().enumerate() {
            next[i] += c;
            next[i + 2] -= c;
        }
        p = next;
    }
    p
}

/// `sup |P_j|` on `[-1, 1]` from a fine scan, padded by 0.1%.
fn tanh_sup(j: usize) -> f64 {
    let p = tanh_poly(j);
    let m = (0..=20_000)
        .map(|i| eval_poly(&p, -1.0 + i as f64 / 10_000.0).abs())
        .fold(0.0, f64::max);
    m * 1.001
}

fn eval_poly(p: &[f64], t: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

/// `f(y)_{v,u} = scale · φ(A_u[v,:]·y + bias[v,u]) + offset`.
///
/// The identity profile gives affine fields; `tanh`, `sin`, `|z|^{1+γ}` and
/// `|z|^γ` give the saturated, oscillating and boundary-regularity fields.
#[derive(Clone, Debug, PartialEq)]
pub struct Elementwise {
    name: String,
    /// One `d_V × n` matrix per driver direction.
    a: Vec<DMatrix<f64>>,
    bias: DMatrix<f64>,
    profile: Profile,
    scale: f64,
    offset: f64,
}

impl Elementwise {
    pub fn new(
        name: impl Into<String>,
        a: Vec<DMatrix<f64>>,
        bias: DMatrix<f64>,
        profile: Profile,
        scale: f64,
        offset: f64,
    ) -> Result<Self> {
        let du = a.len();
        if du == 0 {
            return Err(Error::param("field needs at least one driver direction"));
        }
        let shape = a[0].shape();
        if a.iter().any(|m| m.shape() != shape) {
            return Err(Error::dims("coefficient matrices differ in shape"));
        }
        if bias.shape() != (shape.0, du) {
            return Err(Error::dims(format!(
                "bias is {:?}, expected ({}, {du})",
                bias.shape(),
                shape.0
            )));
        }
        match profile {
            Profile::Power { gamma } | Profile::Hoelder { gamma } if !(gamma > 0.0 && gamma <= 1.0) => {
                return Err(Error::param(format!("Hölder exponent must lie in (0, 1], got {gamma}")))
            }
            _ => {}
        }
        Ok(Self {
            name: name.into(),
            a,
            bias,
            profile,
            scale,
            offset,
        })
    }

    /// `f(y) = Σ_u A_u y ⊗ e_u + B`.
    pub fn linear(a: Vec<DMatrix<f64>>, bias: Option<DMatrix<f64>>) -> Result<Self> {
        let dv = a.first().map_or(0, |m| m.nrows());
        let b = bias.unwrap_or_else(|| DMatrix::zeros(dv, a.len()));
        Self::new("linear", a, b, Profile::Identity, 1.0, 0.0)
    }

    /// Scalar `f(y) = λ y`.
    pub fn scalar_linear(lambda: f64) -> Self {
        Self::linear(vec![DMatrix::from_element(1, 1, lambda)], None).expect("1×1 field")
    }

    /// Planar rotation `f(y) = ω J y` in each of `d` driver directions.
    pub fn rotation(omega: f64, d: usize) -> Result<Self> {
        let j = DMatrix::from_row_slice(2, 2, &[0.0, -omega, omega, 0.0]);
        let mut f = Self::linear(vec![j; d.max(1)], None)?;
        f.name = "rotation".into();
        Ok(f)
    }

    pub fn profile(&self) -> Profile {
        self.profile
    }

    fn z(&self, y: &DVector<f64>, v: usize, u: usize) -> f64 {
        self.a[u].row(v).iter().zip(y.iter()).map(|(a, b)| a * b).sum::<f64>() + self.bias[(v, u)]
    }

    /// `sqrt(Σ_{v,u} |A_u[v,:]|^{2e})`.
    fn row_factor(&self, e: f64) -> f64 {
        let mut s = 0.0;
        for m in &self.a {
            for v in 0..m.nrows() {
                s += m.row(v).norm().powf(2.0 * e);
            }
        }
        s.sqrt()
    }
}

impl VectorField for Elementwise {
    fn input_dim(&self) -> usize {
        self.a[0].ncols()
    }

    fn output_dim(&self) -> usize {
        self.a[0].nrows()
    }

    fn driver_dim(&self) -> usize {
        self.a.len()
    }

    fn regularity(&self) -> Regularity {
        self.profile.regularity()
    }

    fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.output_dim(), self.driver_dim(), |v, u| {
            self.scale * self.profile.deriv(0, self.z(y, v, u)) + self.offset
        })
    }

    fn derivative(&self, order: usize, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        require_order(self, order)?;
        let (dv, du, n) = (self.output_dim(), self.driver_dim(), self.input_dim());
        if order == 0 {
            let f = self.eval(y);
            return Ok(DMatrix::from_row_slice(dv * du, 1, f.transpose().as_slice()));
        }
        let cols = n.pow(order as u32);
        let mut out = DMatrix::zeros(dv * du, cols);
        for v in 0..dv {
            for u in 0..du {
                let c = self.scale * self.profile.deriv(order, self.z(y, v, u));
                if c == 0.0 {
                    continue;
                }
                let row = self.a[u].row(v);
                for col in 0..cols {
                    let mut prod = c;
                    let mut rest = col;
                    for _ in 0..order {
                        prod *= row[rest % n];
                        rest /= n;
                    }
                    out[(v * du + u, col)] = prod;
                }
            }
        }
        Ok(out)
    }

    fn norm_bounds(&self) -> NormBounds {
        let reg = self.regularity();
        let m = (self.output_dim() * self.driver_dim()) as f64;
        let s = self.scale.abs();
        let mut sup = Vec::with_capacity(reg.k + 1);
        sup.push(self.profile.sup(0).map(|b| m.sqrt() * (s * b + self.offset.abs())));
        for j in 1..=reg.k {
            sup.push(self.profile.sup(j).map(|b| s * b * self.row_factor(j as f64)));
        }
        let hoelder = self
            .profile
            .top_hoelder()
            .map(|h| s * h * self.row_factor(reg.k as f64 + reg.gamma));
        NormBounds { sup, hoelder }
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

/// `f + ε g`.
#[derive(Clone, Debug)]
pub struct Perturbed {
    pub base: Field,
    pub direction: Field,
    pub eps: f64,
}

impl Perturbed {
    pub fn new(base: Field, direction: Field, eps: f64) -> Result<Self> {
        let shape = |f: &Field| (f.input_dim(), f.output_dim(), f.driver_dim());
        if shape(&base) != shape(&direction) {
            return Err(Error::dims(format!(
                "cannot add fields {} and {}",
                base.name(),
                direction.name()
            )));
        }
        Ok(Self { base, direction, eps })
    }
}

impl VectorField for Perturbed {
    fn input_dim(&self) -> usize {
        self.base.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.base.output_dim()
    }
    fn driver_dim(&self) -> usize {
        self.base.driver_dim()
    }
    fn regularity(&self) -> Regularity {
        let (a, b) = (self.base.regularity(), self.direction.regularity());
        if a.k != b.k {
            return if a.k < b.k { a } else { b };
        }
        Regularity { k: a.k, gamma: a.gamma.min(b.gamma) }
    }
    fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        self.base.eval(y) + self.direction.eval(y) * self.eps
    }
    fn derivative(&self, order: usize, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        require_order(self, order)?;
        Ok(self.base.derivative(order, y)? + self.direction.derivative(order, y)? * self.eps)
    }
    fn name(&self) -> String {
        format!("{}+{}*{}", self.base.name(), self.eps, self.direction.name())
    }
}

/// `f ∘ g` for a point map `g` (a field with one driver direction).
#[derive(Clone, Debug)]
pub struct Composed {
    pub outer: Field,
    pub inner: Field,
}

impl Composed {
    pub fn new(outer: Field, inner: Field) -> Result<Self> {
        if inner.driver_dim() != 1 || inner.output_dim() != outer.input_dim() {
            return Err(Error::dims(format!(
                "{} is not a point map into the domain of {}",
                inner.name(),
                outer.name()
            )));
        }
        Ok(Self { outer, inner })
    }

    fn inner_point(&self, y: &DVector<f64>) -> DVector<f64> {
        self.inner.eval(y).column(0).into_owned()
    }
}

impl VectorField for Composed {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.outer.output_dim()
    }
    fn driver_dim(&self) -> usize {
        self.outer.driver_dim()
    }
    fn regularity(&self) -> Regularity {
        let (a, b) = (self.outer.regularity(), self.inner.regularity());
        Regularity {
            k: a.k.min(b.k).min(1),
            gamma: a.gamma.min(b.gamma),
        }
    }
    fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        self.outer.eval(&self.inner_point(y))
    }
    fn derivative(&self, order: usize, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        require_order(self, order)?;
        let z = self.inner_point(y);
        match order {
            0 => self.outer.derivative(0, &z),
            _ => Ok(self.outer.derivative(1, &z)? * self.inner.derivative(1, y)?),
        }
    }
    fn name(&self) -> String {
        format!("{}∘{}", self.outer.name(), self.inner.name())
    }
}

/// `F(y, M) = (f(y), Df(y) M)` on `R^n ⊕ R^{n×n}` (row-major `M`), whose
/// flow carries the Jacobian of the flow of `f`.
#[derive(Clone, Debug)]
pub struct JacobianAugmented {
    pub field: Field,
}

impl JacobianAugmented {
    pub fn new(field: Field) -> Result<Self> {
        check_autonomous(field.as_ref())?;
        require_order(field.as_ref(), 2)?;
        Ok(Self { field })
    }

    fn split(&self, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.field.input_dim();
        let y = z.rows(0, n).into_owned();
        let m = DMatrix::from_row_slice(n, n, &z.as_slice()[n..]);
        (y, m)
    }
}

impl VectorField for JacobianAugmented {
    fn input_dim(&self) -> usize {
        let n = self.field.input_dim();
        n + n * n
    }
    fn output_dim(&self) -> usize {
        self.input_dim()
    }
    fn driver_dim(&self) -> usize {
        self.field.driver_dim()
    }
    fn regularity(&self) -> Regularity {
        let r = self.field.regularity();
        Regularity { k: r.k - 1, gamma: r.gamma }
    }
    fn eval(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let (n, du) = (self.field.input_dim(), self.driver_dim());
        let (y, m) = self.split(z);
        let f = self.field.eval(&y);
        let df = self.field.derivative(1, &y).expect("order 2 checked at construction");
        let mut out = DMatrix::zeros(n + n * n, du);
        for u in 0..du {
            for v in 0..n {
                out[(v, u)] = f[(v, u)];
            }
            // (Df_u M)[v, c] = Σ_w ∂_w f_{v,u} M[w, c]
            for v in 0..n {
                for c in 0..n {
                    out[(n + v * n + c, u)] = (0..n).map(|w| df[(v * du + u, w)] * m[(w, c)]).sum();
                }
            }
        }
        out
    }
    fn derivative(&self, order: usize, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        require_order(self, order)?;
        if order == 0 {
            let e = self.eval(z);
            return Ok(DMatrix::from_row_slice(e.len(), 1, e.transpose().as_slice()));
        }
        if order > 1 {
            return Err(Error::InsufficientDerivatives { requested: order, available: 1 });
        }
        let (n, du) = (self.field.input_dim(), self.driver_dim());
        let dim = n + n * n;
        let (y, m) = self.split(z);
        let df = self.field.derivative(1, &y)?;
        let d2 = self.field.derivative(2, &y)?;
        let mut out = DMatrix::zeros(dim * du, dim);
        for u in 0..du {
            for v in 0..n {
                for w in 0..n {
                    out[(v * du + u, w)] = df[(v * du + u, w)];
                }
            }
            for v in 0..n {
                for c in 0..n {
                    let row = (n + v * n + c) * du + u;
                    // ∂/∂y_w: Σ_{w'} ∂_w ∂_{w'} f_{v,u} M[w', c]
                    for w in 0..n {
                        out[(row, w)] = (0..n).map(|w2| d2[(v * du + u, w * n + w2)] * m[(w2, c)]).sum();
                    }
                    // ∂/∂M[w, c]: ∂_w f_{v,u}
                    for w in 0..n {
                        out[(row, n + w * n + c)] = df[(v * du + u, w)];
                    }
                }
            }
        }
        Ok(out)
    }
    fn name(&self) -> String {
        format!("jacobian({})", self.field.name())
    }
}

/// `F(y, w) = (f(y), Df(y) w + g(y))`; the second block is the derivative of
/// the solution of `f + εg` in `ε` at `ε = 0`.
#[derive(Clone, Debug)]
pub struct DirectionAugmented {
    pub field: Field,
    pub direction: Field,
}

impl DirectionAugmented {
    pub fn new(field: Field, direction: Field) -> Result<Self> {
        check_autonomous(field.as_ref())?;
        Perturbed::new(field.clone(), direction.clone(), 0.0)?;
        require_order(field.as_ref(), 2)?;
        require_order(direction.as_ref(), 1)?;
        Ok(Self { field, direction })
    }
}

impl VectorField for DirectionAugmented {
    fn input_dim(&self) -> usize {
        2 * self.field.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.input_dim()
    }
    fn driver_dim(&self) -> usize {
        self.field.driver_dim()
    }
    fn regularity(&self) -> Regularity {
        let (a, b) = (self.field.regularity(), self.direction.regularity());
        Regularity {
            k: (a.k - 1).min(b.k),
            gamma: a.gamma.min(b.gamma),
        }
    }
    fn eval(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let n = self.field.input_dim();
        let y = z.rows(0, n).into_owned();
        let w = z.rows(n, n).into_owned();
        let top = self.field.eval(&y);
        let bottom = apply_derivative(self.field.as_ref(), &y, &w).expect("order checked") + self.direction.eval(&y);
        let mut out = DMatrix::zeros(2 * n, self.driver_dim());
        out.rows_mut(0, n).copy_from(&top);
        out.rows_mut(n, n).copy_from(&bottom);
        out
    }
    fn derivative(&self, order: usize, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        require_order(self, order)?;
        if order == 0 {
            let e = self.eval(z);
            return Ok(DMatrix::from_row_slice(e.len(), 1, e.transpose().as_slice()));
        }
        if order > 1 {
            return Err(Error::InsufficientDerivatives { requested: order, available: 1 });
        }
        let (n, du) = (self.field.input_dim(), self.driver_dim());
        let y = z.rows(0, n).into_owned();
        let w = z.rows(n, n).into_owned();
        let df = self.field.derivative(1, &y)?;
        let d2 = self.field.derivative(2, &y)?;
        let dg = self.direction.derivative(1, &y)?;
        let mut out = DMatrix::zeros(2 * n * du, 2 * n);
        for u in 0..du {
            for v in 0..n {
                let src = v * du + u;
                for c in 0..n {
                    out[(src, c)] = df[(src, c)];
                    let row = (n + v) * du + u;
                    out[(row, c)] = (0..n).map(|c2| d2[(src, c * n + c2)] * w[c2]).sum::<f64>() + dg[(src, c)];
                    out[(row, n + c)] = df[(src, c)];
                }
            }
        }
        Ok(out)
    }
    fn name(&self) -> String {
        format!("direction({}, {})", self.field.name(), self.direction.name())
    }
}

fn get_f64(params: &[(String, String)], key: &str, default: f64) -> Result<f64> {
    match params.iter().find(|(k, _)| k == key) {
        None => Ok(default),
        Some((_, v)) => v
            .parse()
            .map_err(|_| Error::Parse(format!("`{key}={v}` is not a number"))),
    }
}

fn get_usize(params: &[(String, String)], key: &str, default: usize) -> Result<usize> {
    match params.iter().find(|(k, _)| k == key) {
        None => Ok(default),
        Some((_, v)) => v
            .parse()
            .map_err(|_| Error::Parse(format!("`{key}={v}` is not a count"))),
    }
}

fn get_mat(params: &[(String, String)], key: &str) -> Result<Option<DMatrix<f64>>> {
    params
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| parse_matrix(v))
        .transpose()
}

/// Reads `A` or `A0, A1, …`, falling back to `default`.
fn get_coefficients(params: &[(String, String)], default: Vec<DMatrix<f64>>) -> Result<Vec<DMatrix<f64>>> {
    if let Some(a) = get_mat(params, "A")? {
        return Ok(vec![a]);
    }
    let mut out = Vec::new();
    while let Some(a) = get_mat(params, &format!("A{}", out.len()))? {
        out.push(a);
    }
    Ok(if out.is_empty() { default } else { out })
}

fn get_bias(params: &[(String, String)], dv: usize, du: usize, default: f64) -> Result<DMatrix<f64>> {
    let b = match get_mat(params, "B")? {
        Some(b) => Some(b),
        None => get_mat(params, "bias")?,
    };
    let b = b.unwrap_or_else(|| DMatrix::from_element(dv, du, default));
    if b.shape() == (1, 1) && (dv, du) != (1, 1) {
        return Ok(DMatrix::from_element(dv, du, b[(0, 0)]));
    }
    Ok(b)
}

fn default_mixing(n: usize, du: usize) -> Vec<DMatrix<f64>> {
    let base = [
        [1.0, 0.5, -0.3, 0.8],
        [0.2, -1.0, 0.7, 0.1],
        [-0.4, 0.3, 0.6, -0.9],
    ];
    (0..du)
        .map(|u| DMatrix::from_fn(n, n, |i, j| base[u % 3][(i * n + j) % 4] + if i == j { 0.1 * u as f64 } else { 0.0 }))
        .collect()
}

const KEYS: &[&str] = &["lambda", "omega", "scale", "offset", "gamma", "c", "dim", "d", "A", "B", "bias"];

/// Builds a field from `name:key=val,...`.
///
/// | name | parameters (defaults) |
/// |---|---|
/// | `linear` | `lambda` (1-d) or `A`/`A0,A1,…`, `B` |
/// | `rotation` | `omega=1`, `d=1` |
/// | `tanh` | `scale=1`, `A…`, `bias`, `dim=2`, `d=2` |
/// | `sine` | as `tanh`, `dim=1`, `d=1` |
/// | `powerlaw` | `gamma=0.5`, `c=0`, `offset=0.2`, `scale=1` |
/// | `holder` | `gamma=0.5`, `c=0`, `scale=1` |
pub fn parse_field(spec: &str) -> Result<Field> {
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let params: Vec<(String, String)> = split_params(rest)
        .into_iter()
        .map(|item| {
            item.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Parse(format!("expected key=value, got `{item}`")))
        })
        .collect::<Result<_>>()?;
    if let Some((k, _)) = params.iter().find(|(k, _)| {
        !KEYS.contains(&k.as_str()) && !(k.starts_with('A') && k[1..].parse::<usize>().is_ok())
    }) {
        return Err(Error::Parse(format!("unknown field parameter `{k}` for `{name}`")));
    }
    let field: Elementwise = match name.trim() {
        "linear" => {
            let a = if params.iter().any(|(k, _)| k == "lambda") {
                vec![DMatrix::from_element(1, 1, get_f64(&params, "lambda", 1.0)?)]
            } else {
                get_coefficients(&params, vec![DMatrix::from_element(1, 1, 1.0)])?
            };
            let (dv, du) = (a[0].nrows(), a.len());
            let b = get_bias(&params, dv, du, 0.0)?;
            Elementwise::linear(a, Some(b))?
        }
        "rotation" => Elementwise::rotation(get_f64(&params, "omega", 1.0)?, get_usize(&params, "d", 1)?)?,
        "tanh" | "sine" => {
            let (n0, d0) = if name == "tanh" { (2, 2) } else { (1, 1) };
            let n = get_usize(&params, "dim", n0)?;
            let du = get_usize(&params, "d", d0)?;
            let a = get_coefficients(&params, default_mixing(n, du))?;
            let (dv, du) = (a[0].nrows(), a.len());
            let bias = get_bias(&params, dv, du, if name == "tanh" { 0.1 } else { 0.0 })?;
            let profile = if name == "tanh" { Profile::Tanh } else { Profile::Sin };
            Elementwise::new(name, a, bias, profile, get_f64(&params, "scale", 1.0)?, 0.0)?
        }
        "powerlaw" | "holder" => {
            let gamma = get_f64(&params, "gamma", 0.5)?;
            let c = get_f64(&params, "c", 0.0)?;
            let (profile, offset) = if name == "powerlaw" {
                (Profile::Power { gamma }, get_f64(&params, "offset", 0.2)?)
            } else {
                (Profile::Hoelder { gamma }, 0.0)
            };
            Elementwise::new(
                name,
                vec![DMatrix::from_element(1, 1, 1.0)],
                DMatrix::from_element(1, 1, -c),
                profile,
                get_f64(&params, "scale", 1.0)?,
                offset,
            )?
        }
        other => return Err(Error::Parse(format!("unknown field `{other}`"))),
    };
    Ok(Arc::new(field))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_derivative(f: &dyn VectorField, order: usize, y: &DVector<f64>, h: f64) -> DMatrix<f64> {
        let n = f.input_dim();
        let lower = |p: &DVector<f64>| f.derivative(order - 1, p).unwrap();
        let base = lower(y);
        let mut out = DMatrix::zeros(base.nrows(), base.ncols() * n);
        for w in 0..n {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[w] += h;
            ym[w] -= h;
            let d = (lower(&yp) - lower(&ym)) / (2.0 * h);
            // lower has columns w_1..w_{j-1}; append w as the last index
            for r in 0..base.nrows() {
                for c in 0..base.ncols() {
                    out[(r, c * n + w)] = d[(r, c)];
                }
            }
        }
        out
    }

    #[test]
    fn tanh_polynomials() {
        assert_eq!(tanh_poly(0), vec![0.0, 1.0]);
        assert_eq!(tanh_poly(1), vec![1.0, 0.0, -1.0]);
        let z = 0.37f64;
        let t = z.tanh();
        let d3 = -2.0 * (1.0 - t * t) * (1.0 - 3.0 * t * t);
        assert!((Profile::Tanh.deriv(3, z) - d3).abs() < 1e-14);
    }

    #[test]
    fn builtin_derivatives_match_finite_differences() {
        let specs = ["linear:A0=[0,1;-1,0.5],A1=[0.3,0;0.2,-0.4]", "rotation:omega=2", "tanh", "sine:dim=2,d=3", "tanh:dim=3,d=1,scale=1.5"];
        for s in specs {
            let f = parse_field(s).unwrap();
            let n = f.input_dim();
            for k in 0..5 {
                let y = DVector::from_fn(n, |i, _| ((k * 7 + i * 3) as f64).sin());
                for order in 1..=3 {
                    let exact = f.derivative(order, &y).unwrap();
                    let fd = fd_derivative(f.as_ref(), order, &y, 1e-5);
                    let err = (&exact - &fd).norm() / exact.norm().max(1e-8);
                    assert!(err < 1e-5 || (&exact - &fd).norm() < 1e-8, "{s} order {order}: {err}");
                }
            }
        }
    }

    #[test]
    fn powerlaw_has_one_derivative() {
        let f = parse_field("powerlaw:gamma=0.5,c=0.1").unwrap();
        assert_eq!(f.regularity().k, 1);
        let y = DVector::from_element(1, 0.7);
        let d = f.derivative(1, &y).unwrap()[(0, 0)];
        assert!((d - 1.5 * 0.6f64.sqrt()).abs() < 1e-14);
        assert!(matches!(f.derivative(2, &y), Err(Error::InsufficientDerivatives { .. })));
        let h = parse_field("holder:gamma=0.7").unwrap();
        assert!(h.derivative(1, &y).is_err());
    }

    #[test]
    fn sampled_sups_respect_bounds() {
        for s in ["tanh", "sine:dim=2,d=2", "tanh:scale=-2,dim=1,d=1"] {
            let f = parse_field(s).unwrap();
            let b = f.norm_bounds();
            assert!(f.is_bounded());
            for k in 0..100 {
                let y = DVector::from_fn(f.input_dim(), |i, _| 5.0 * ((k * 13 + i) as f64 * 0.71).sin());
                for (j, bound) in b.sup.iter().enumerate() {
                    let v = f.derivative(j, &y).unwrap().norm();
                    assert!(v <= bound.unwrap() + 1e-12, "{s}: |D^{j}| = {v} > {bound:?}");
                }
            }
        }
        assert!(!parse_field("linear:lambda=2").unwrap().is_bounded());
    }

    #[test]
    fn rotation_field() {
        let f = parse_field("rotation:omega=3").unwrap();
        let y = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(f.eval(&y).as_slice(), &[-6.0, 3.0]);
    }

    #[test]
    fn jacobian_augmented_derivative() {
        let base = parse_field("tanh").unwrap();
        let aug = JacobianAugmented::new(base.clone()).unwrap();
        assert_eq!(aug.input_dim(), 6);
        let z = DVector::from_vec(vec![0.3, -0.2, 1.0, 0.5, -0.4, 2.0]);
        let exact = aug.derivative(1, &z).unwrap();
        let fd = fd_derivative(&aug, 1, &z, 1e-6);
        assert!((exact - fd).norm() < 1e-7);
        assert!(JacobianAugmented::new(parse_field("powerlaw").unwrap()).is_err());
    }

    #[test]
    fn direction_augmented_derivative() {
        let base = parse_field("tanh").unwrap();
        let g = parse_field("sine:dim=2,d=2").unwrap();
        let aug = DirectionAugmented::new(base, g).unwrap();
        let z = DVector::from_vec(vec![0.3, -0.2, 1.0, 0.5]);
        let exact = aug.derivative(1, &z).unwrap();
        let fd = fd_derivative(&aug, 1, &z, 1e-6);
        assert!((exact - fd).norm() < 1e-7);
    }

    #[test]
    fn composition_chain_rule() {
        let outer = parse_field("sine:dim=2,d=1").unwrap();
        let inner = parse_field("tanh:dim=2,d=1").unwrap();
        let c = Composed::new(outer.clone(), inner.clone()).unwrap();
        let y = DVector::from_vec(vec![0.4, -1.1]);
        let z = inner.eval(&y).column(0).into_owned();
        assert_eq!(c.eval(&y), outer.eval(&z));
        let fd = fd_derivative(&c, 1, &y, 1e-6);
        assert!((c.derivative(1, &y).unwrap() - fd).norm() < 1e-8);
    }

    #[test]
    fn registry_errors() {
        assert!(parse_field("nope").is_err());
        assert!(parse_field("tanh:foo=1").is_err());
        assert!(parse_field("linear:A=[1,2;3]").is_err());
        assert!(parse_field("holder:gamma=1.5").is_err());
        let f = parse_field("linear:lambda=0.5").unwrap();
        assert_eq!(f.eval(&DVector::from_element(1, 4.0))[(0, 0)], 2.0);
    }
}
