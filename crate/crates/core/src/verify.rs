//! Fixed-seed invariant suite with a machine-readable report.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::crp::{canonical_crp, crp_norms, crp_omega, flat};
use crate::drivers::{lift_piecewise_linear, DriverSpec};
use crate::error::Result;
use crate::fields::{parse_field, Field};
use crate::grid::{ControlFn, DiscretePath, Grid};
use crate::hoelder::{random_quadruples, interpolation_check, SampleBox};
use crate::io::{rough_path_from_json, rough_path_to_json};
use crate::rde::{solve_rough_path, SolveSpec};
use crate::sensitivity::{flow_compose_check, jacobian_fd, jacobian_flow, perturbation_response, relative_gap};
use crate::sensitivity::{Direction, PerturbationKind, PerturbationSpec, Problem};
use crate::sewing::{defect_scan, dyadic_triples, sew_additive, sew_multiplicative, FnGerm, MonoidElem, MultiplicativeGerm};
use crate::tensor::{chen_defect, tensor_inv, tensor_mul, RoughPath, Tensor2};
use crate::young::{young_bound_check, young_integral, Rule, YoungGerm};
use crate::sewing::AdditiveGerm;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub version: String,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Hooks for exercising the suite against deliberately broken primitives.
#[derive(Clone, Copy)]
pub struct VerifyOptions {
    pub inverse: fn(&Tensor2) -> Tensor2,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { inverse: tensor_inv }
    }
}

/// Measured values and a pass flag.
type Outcome = Result<(bool, Vec<(&'static str, f64)>)>;

fn record(name: &str, outcome: Outcome) -> CheckResult {
    match outcome {
        Ok((passed, values)) => CheckResult {
            name: name.into(),
            passed,
            measured: values.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            error: None,
        },
        Err(e) => CheckResult {
            name: name.into(),
            passed: false,
            measured: BTreeMap::new(),
            error: Some(e.to_string()),
        },
    }
}

fn random_tensor(rng: &mut ChaCha20Rng, d: usize) -> Tensor2 {
    let mut g = || -> f64 { StandardNormal.sample(rng) };
    let v = DVector::from_fn(d, |_, _| g());
    let m = DMatrix::from_fn(d, d, |_, _| g());
    Tensor2 { level1: v, level2: m }
}

fn group_axioms(opts: &VerifyOptions, count: usize) -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let d = 3;
    let id = Tensor2::identity(d);
    let (mut assoc, mut inv, mut unit) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..count {
        let (a, b, c) = (random_tensor(&mut rng, d), random_tensor(&mut rng, d), random_tensor(&mut rng, d));
        let l = tensor_mul(&tensor_mul(&a, &b)?, &c)?;
        let r = tensor_mul(&a, &tensor_mul(&b, &c)?)?;
        assoc = assoc.max(l.distance(&r));
        let ai = (opts.inverse)(&a);
        inv = inv.max(tensor_mul(&a, &ai)?.distance(&id)).max(tensor_mul(&ai, &a)?.distance(&id));
        unit = unit.max(tensor_mul(&a, &id)?.distance(&a)).max(tensor_mul(&id, &a)?.distance(&a));
    }
    let worst = assoc.max(inv).max(unit);
    Ok((worst <= 1e-12, vec![("associativity", assoc), ("inverse", inv), ("identity", unit)]))
}

fn chen_consistency() -> Outcome {
    let x = DriverSpec::fbm(0.4, 2, 1024, 3).rough_path(2.7)?;
    let defect = chen_defect(&x);
    let inc = x.increment(100, 900)?;
    let stored = x.clone().with_stored_increment(100, 900, inc)?;
    let loaded = rough_path_from_json(&rough_path_to_json(&stored)?)?;
    let loaded_defect = chen_defect(&loaded);
    Ok((defect <= 1e-12 && loaded_defect <= 1e-12, vec![("defect", defect), ("loaded_defect", loaded_defect)]))
}

fn sin_path(n: usize) -> Result<DiscretePath> {
    DiscretePath::from_fn(Grid::uniform(1.0, n)?, |t| DVector::from_element(1, (2.0 * PI * t).sin()))
}

fn young_oracle() -> Outcome {
    let x = sin_path(1 << 12)?;
    let i = young_integral(&x, &x, 1.0, 1.0)?;
    let exact = x.map(|v| v.map(|a| 0.5 * a * a))?;
    let err = i.sub(&exact)?.sup_norm() / exact.sup_norm();
    let k_fine = young_bound_check(&x, &x, 1.0, 1.0, &ControlFn::Difference)?.k;
    let coarse = sin_path(1 << 11)?;
    let k_coarse = young_bound_check(&coarse, &coarse, 1.0, 1.0, &ControlFn::Difference)?.k;
    let drift = (k_fine / k_coarse - 1.0).abs();
    Ok((
        err <= 1e-8 && k_fine.is_finite() && drift <= 0.3,
        vec![("relative_error", err), ("K", k_fine), ("K_coarse", k_coarse), ("K_drift", drift)],
    ))
}

struct RandomMonoidGerm {
    a: Vec<DVector<f64>>,
    b: Vec<DVector<f64>>,
    c: Vec<DMatrix<f64>>,
}

impl MultiplicativeGerm for RandomMonoidGerm {
    fn shape(&self) -> (usize, usize) {
        (self.a[0].len(), self.b[0].len())
    }

    fn eval(&self, i: usize, _j: usize) -> MonoidElem {
        MonoidElem {
            a: self.a[i].clone(),
            b: self.b[i].clone(),
            c: self.c[i].clone(),
        }
    }
}

fn sewing_exactness() -> Outcome {
    let n = 256;
    let grid = Grid::uniform(1.0, n)?;
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let steps: Vec<DVector<f64>> = (0..n).map(|_| DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng))).collect();
    let germ = FnGerm::new(2, |i, _j| steps[i].clone());
    let fam = sew_additive(&germ, &grid);
    let mg = RandomMonoidGerm {
        a: (0..n).map(|_| DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng))).collect(),
        b: (0..n).map(|_| DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng))).collect(),
        c: (0..n).map(|_| DMatrix::from_fn(2, 3, |_, _| StandardNormal.sample(&mut rng))).collect(),
    };
    let mfam = sew_multiplicative(&mg, &grid)?;
    let (mut add, mut mul) = (0.0f64, 0.0f64);
    for (i, j, k) in dyadic_triples(&grid, 16) {
        add = add.max((fam.increment(i, j) + fam.increment(j, k) - fam.increment(i, k)).norm());
        let lhs = mfam.increment(i, k);
        let rhs = mfam.increment(i, j).compose(&mfam.increment(j, k))?;
        mul = mul.max(lhs.distance(&rhs) / (1.0 + lhs.norm()));
    }
    let x = DriverSpec::fbm(0.4, 2, 256, 11).rough_path(2.7)?;
    let c = canonical_crp(Arc::new(x.clone()));
    let fl = flat(&c)?;
    let mut flat_gap = 0.0f64;
    for (i, j, k) in dyadic_triples(&grid, 8) {
        for (a, b) in [(i, j), (j, k), (i, k)] {
            flat_gap = flat_gap.max((fl.increment(a, b) - x.increment(a, b)?.level2).norm());
        }
    }
    Ok((
        add <= 1e-13 && mul <= 1e-13 && flat_gap <= 1e-13,
        vec![("additive_residual", add), ("multiplicative_residual", mul), ("flat_gap", flat_gap)],
    ))
}

fn left_point_defect() -> Outcome {
    let x = sin_path(1 << 10)?;
    let y = x.map(|v| v.map(|a| (a + 0.3).cos()))?;
    let germ = YoungGerm::new(&y, &x, Rule::LeftPoint)?;
    let grid = x.grid().clone();
    let rep = defect_scan(|r, s, t| germ.defect(r, s, t), &grid, &ControlFn::Difference, &dyadic_triples(&grid, 32))?;
    let theta = rep.theta_hat.unwrap_or(f64::NAN);
    Ok((
        rep.identifiable && theta > 1.0,
        vec![("theta_hat", theta), ("C_hat", rep.c_hat.unwrap_or(f64::NAN)), ("n_usable", rep.n_usable as f64)],
    ))
}

fn interpolation(count: usize) -> Outcome {
    let sb = SampleBox::cube(1, 2.0)?;
    let quads = random_quadruples(&sb, count, 17);
    let sqrt_abs = |v: &DVector<f64>| v.map(|a| a.abs().sqrt());
    let tanh = |v: &DVector<f64>| v.map(f64::tanh);
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for kappa in [0.25, 0.5, 0.75] {
        let a = interpolation_check(sqrt_abs, 1.0, 0.5, kappa, &quads, 1e-12)?;
        let b = interpolation_check(tanh, 1.0, 1.0, kappa, &quads, 1e-12)?;
        worst = worst.max(a.max_violation).max(b.max_violation);
        violations += a.violations + b.violations;
    }
    Ok((violations == 0, vec![("max_violation", worst), ("violations", violations as f64)]))
}

fn smooth_lift(n: usize, d: usize, p: f64) -> Result<RoughPath> {
    let x = DiscretePath::from_fn(Grid::uniform(1.0, n)?, |t| {
        DVector::from_fn(d, |k, _| t.powi(k as i32 + 1) + 0.2 * (2.0 * PI * (k + 1) as f64 * t).sin())
    })?;
    lift_piecewise_linear(&x, p)
}

fn rough_oracles() -> Outcome {
    let x = Arc::new(smooth_lift(1 << 11, 1, 2.2)?);
    let f = parse_field("linear:lambda=0.5")?;
    let s = solve_rough_path(f.as_ref(), &x, &SolveSpec::new(DVector::from_element(1, 1.0)))?;
    let exact = (0.5 * x.level1_increment(0, x.grid().steps())[0]).exp();
    let err = ((s.terminal()[0] - exact) / s.terminal()[0]).abs();
    let rot = parse_field("rotation:omega=1,d=1")?;
    let a = DVector::from_vec(vec![1.0, 0.0]);
    let r = solve_rough_path(rot.as_ref(), &x, &SolveSpec::new(a))?;
    let drift = r.y.values().iter().map(|v| (v.norm() - 1.0).abs()).fold(0.0, f64::max);
    let worst_ratio = s
        .windows
        .iter()
        .flat_map(|w| w.history.windows(2).skip(1).filter(|p| p[1] > 1e-13).map(|p| p[1] / p[0]).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    Ok((
        err <= 1e-6 && drift <= 1e-6 && worst_ratio <= 0.9,
        vec![("linear_relative_error", err), ("rotation_norm_drift", drift), ("picard_ratio", worst_ratio)],
    ))
}

fn jacobian_vs_fd() -> Outcome {
    let z = canonical_crp(Arc::new(smooth_lift(256, 2, 2.2)?));
    let f: Field = parse_field("tanh")?;
    let a = DVector::from_vec(vec![0.3, -0.2]);
    let spec = SolveSpec::new(a.clone());
    let jf = jacobian_flow(&f, &z, &a, 0, 256, &spec)?;
    let fd = jacobian_fd(f.as_ref(), &z, &a, 0, 256, 1e-4, &spec)?;
    let gap = relative_gap(jf.terminal(), fd.last().unwrap());
    let flow_gap = flow_compose_check(f.as_ref(), &z, &a, (0, 97, 256), &spec)?;
    Ok((gap <= 1e-3 && flow_gap <= 10.0 * spec.tol, vec![("jacobian_relative_gap", gap), ("flow_residual", flow_gap)]))
}

fn initial_scan() -> Outcome {
    let problem = Problem {
        f: parse_field("tanh")?,
        x: Arc::new(smooth_lift(256, 2, 2.2)?),
        spec: SolveSpec::new(DVector::from_vec(vec![0.1, 0.2])),
    };
    let pert = PerturbationSpec {
        kind: PerturbationKind::InitialPoint,
        direction: Direction::Vector(DVector::from_vec(vec![1.0, -1.0])),
        sizes: vec![1e-2, 1e-3, 1e-4],
    };
    let rep = perturbation_response(&problem, &pert)?;
    Ok((
        (0.95..=1.05).contains(&rep.slope) && rep.r2 >= 0.98,
        vec![("slope", rep.slope), ("r2", rep.r2)],
    ))
}

fn crp_inequalities() -> Outcome {
    let c = canonical_crp(Arc::new(smooth_lift(256, 2, 2.2)?));
    let y = crp_omega(parse_field("tanh")?.as_ref(), &c)?;
    let n = crp_norms(&y)?;
    let slack = n.sup_dagger.slack().min(n.pvar_value.slack()).min(n.sup_value.slack());
    Ok((
        n.sup_dagger.holds() && n.pvar_value.holds() && n.sup_value.holds(),
        vec![("min_slack", slack), ("full_norm", n.full)],
    ))
}

pub fn verify_suite() -> VerifyReport {
    verify_suite_with(&VerifyOptions::default())
}

pub fn verify_suite_with(opts: &VerifyOptions) -> VerifyReport {
    let checks = vec![
        record("tensor_group_axioms", group_axioms(opts, 1000)),
        record("chen_consistency", chen_consistency()),
        record("young_oracle", young_oracle()),
        record("sewing_exactness", sewing_exactness()),
        record("left_point_defect", left_point_defect()),
        record("interpolation_inequality", interpolation(10_000)),
        record("rough_solver_oracles", rough_oracles()),
        record("jacobian_and_flow", jacobian_vs_fd()),
        record("initial_point_scan", initial_scan()),
        record("crp_inequalities", crp_inequalities()),
    ];
    VerifyReport {
        version: env!("CARGO_PKG_VERSION").into(),
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}
