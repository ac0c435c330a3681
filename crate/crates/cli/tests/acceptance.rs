//! End-to-end acceptance criteria, one line per criterion.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use roughsens::crp::{canonical_crp, flat};
use roughsens::drivers::{lift_piecewise_linear, DriverSpec};
use roughsens::fields::{parse_field, Field, VectorField};
use roughsens::hoelder::{interpolation_check, random_quadruples, SampleBox};
use roughsens::io::{rough_path_from_json, rough_path_to_json};
use roughsens::rde::{solve_rough_path, SolveSpec};
use roughsens::sensitivity::{
    cocycle_check, flow_compose_check, jacobian_fd, jacobian_flow, perturbation_response, relative_gap, Direction,
    PerturbationKind, PerturbationSpec, Problem,
};
use roughsens::sewing::{dyadic_triples, random_triples, sew_additive, sew_multiplicative, FnGerm, MonoidElem, MultiplicativeGerm};
use roughsens::stats::loglog;
use roughsens::tensor::{chen_defect, tensor_inv, tensor_mul};
use roughsens::young::{young_bound_check, young_integral};
use roughsens::{ControlFn, DiscretePath, Grid, RoughPath, Tensor2};

type Outcome = roughsens::Result<(bool, String)>;
type Criterion = (&'static str, fn() -> Outcome);

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_tensor(rng: &mut ChaCha20Rng, d: usize) -> Tensor2 {
    let v = DVector::from_fn(d, |_, _| normal(rng));
    let m = DMatrix::from_fn(d, d, |_, _| normal(rng));
    Tensor2::new(v, m).unwrap()
}

fn smooth_lift(n: usize, d: usize, p: f64) -> roughsens::Result<RoughPath> {
    let x = DiscretePath::from_fn(Grid::uniform(1.0, n)?, |t| {
        DVector::from_fn(d, |k, _| t.powi(k as i32 + 1) + 0.2 * (2.0 * PI * (k + 1) as f64 * t).sin())
    })?;
    lift_piecewise_linear(&x, p)
}

fn fbm_lift(d: usize, n: usize, seed: u64) -> roughsens::Result<RoughPath> {
    DriverSpec::fbm(0.4, d, n, seed).rough_path(2.7)
}

fn algebra() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(101);
    let mut group = 0.0f64;
    for _ in 0..1000 {
        let d = rng.random_range(1..=4);
        let (a, b, c) = (random_tensor(&mut rng, d), random_tensor(&mut rng, d), random_tensor(&mut rng, d));
        let id = Tensor2::identity(d);
        let ai = tensor_inv(&a);
        group = group
            .max(tensor_mul(&tensor_mul(&a, &b)?, &c)?.distance(&tensor_mul(&a, &tensor_mul(&b, &c)?)?))
            .max(tensor_mul(&a, &ai)?.distance(&id))
            .max(tensor_mul(&ai, &a)?.distance(&id))
            .max(tensor_mul(&a, &id)?.distance(&a));
    }
    let mut chen = 0.0f64;
    for k in 0..1000 {
        let d = rng.random_range(1..=3);
        let n = 16;
        let steps = (0..n).map(|_| random_tensor(&mut rng, d)).collect();
        let x = RoughPath::new(Grid::uniform(1.0, n)?, DVector::zeros(d), steps, 2.5, ControlFn::Difference)?;
        let i = rng.random_range(0..n - 1);
        let j = rng.random_range(i + 1..=n);
        let inc = x.increment(i, j)?;
        let mut x = x.with_stored_increment(i, j, inc)?;
        if k % 10 == 0 {
            x = rough_path_from_json(&rough_path_to_json(&x)?)?;
        }
        chen = chen.max(chen_defect(&x));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        group <= 1e-12 && chen <= 1e-12 && secs < 5.0,
        format!("group residual {group:.2e}, Chen residual {chen:.2e}, {secs:.2} s"),
    ))
}

fn young_oracle() -> Outcome {
    let sin_path = |n: usize| DiscretePath::from_fn(Grid::uniform(1.0, n)?, |t| DVector::from_element(1, (2.0 * PI * t).sin()));
    let x = sin_path(1 << 12)?;
    let i = young_integral(&x, &x, 1.0, 1.0)?;
    let exact = x.map(|v| v.map(|a| 0.5 * (a * a - x.first()[0] * x.first()[0])))?;
    let err = i.sub(&exact)?.sup_norm() / exact.sup_norm();
    let fine = young_bound_check(&x, &x, 1.0, 1.0, &ControlFn::Difference)?.k;
    let coarse_path = sin_path(1 << 11)?;
    let coarse = young_bound_check(&coarse_path, &coarse_path, 1.0, 1.0, &ControlFn::Difference)?.k;
    let drift = (fine / coarse - 1.0).abs();
    Ok((
        err <= 1e-8 && fine.is_finite() && drift <= 0.3,
        format!("relative error {err:.2e}, K {fine:.4} (coarse {coarse:.4}, drift {:.1}%)", 100.0 * drift),
    ))
}

struct StepGerm(Vec<MonoidElem>);

impl MultiplicativeGerm for StepGerm {
    fn shape(&self) -> (usize, usize) {
        self.0[0].shape()
    }

    fn eval(&self, i: usize, _j: usize) -> MonoidElem {
        self.0[i].clone()
    }
}

fn sewing_exactness() -> Outcome {
    let n = 512;
    let grid = Grid::uniform(1.0, n)?;
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let steps: Vec<DVector<f64>> = (0..n).map(|_| DVector::from_fn(3, |_, _| normal(&mut rng))).collect();
    let fam = sew_additive(&FnGerm::new(3, |i, _| steps[i].clone()), &grid);
    let elems = (0..n)
        .map(|_| {
            MonoidElem::new(
                DVector::from_fn(2, |_, _| normal(&mut rng)),
                DVector::from_fn(3, |_, _| normal(&mut rng)),
                DMatrix::from_fn(2, 3, |_, _| normal(&mut rng)),
            )
        })
        .collect::<roughsens::Result<Vec<_>>>()?;
    let mfam = sew_multiplicative(&StepGerm(elems), &grid)?;
    let triples = random_triples(&grid, 4000, 3);
    let (mut add, mut mul) = (0.0f64, 0.0f64);
    for &(i, j, k) in &triples {
        add = add.max((fam.increment(i, j) + fam.increment(j, k) - fam.increment(i, k)).norm());
        let lhs = mfam.increment(i, k);
        mul = mul.max(lhs.distance(&mfam.increment(i, j).compose(&mfam.increment(j, k))?) / (1.0 + lhs.norm()));
    }
    let x = fbm_lift(2, 512, 11)?;
    let fl = flat(&canonical_crp(Arc::new(x.clone())))?;
    let mut gap = 0.0f64;
    for (i, j, k) in dyadic_triples(&grid, 16) {
        for (a, b) in [(i, j), (j, k), (i, k)] {
            gap = gap.max((fl.increment(a, b) - x.increment(a, b)?.level2).norm());
        }
    }
    Ok((
        add <= 1e-13 && mul <= 1e-13 && gap <= 1e-13,
        format!("additive {add:.2e}, multiplicative {mul:.2e}, flat vs area {gap:.2e}"),
    ))
}

fn interpolation() -> Outcome {
    let start = Instant::now();
    let quads = random_quadruples(&SampleBox::cube(1, 2.0)?, 100_000, 23);
    let sqrt_abs = |v: &DVector<f64>| v.map(|a| a.abs().sqrt());
    let tanh = |v: &DVector<f64>| v.map(f64::tanh);
    let (mut violations, mut worst) = (0, f64::NEG_INFINITY);
    for kappa in [0.25, 0.5, 0.75] {
        for rep in [
            interpolation_check(sqrt_abs, 1.0, 0.5, kappa, &quads, 1e-12)?,
            interpolation_check(tanh, 1.0, 1.0, kappa, &quads, 1e-12)?,
        ] {
            violations += rep.violations;
            worst = worst.max(rep.max_violation);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        violations == 0 && secs < 10.0,
        format!("{violations} violations in 6 x 1e5 quadruples, max excess {worst:.2e}, {secs:.2} s"),
    ))
}

/// `y' = c Σ_{u,w} A_{uw} Df_w(y) f_u(y)`, integrated with RK4.
fn induced_ode(f: &dyn VectorField, a: &DMatrix<f64>, c: f64, y0: &DVector<f64>, steps: usize) -> DVector<f64> {
    let h_fd = 1e-6;
    let drift = |y: &DVector<f64>| {
        let fy = f.eval(y);
        let n = y.len();
        let mut out = DVector::zeros(n);
        for u in 0..a.nrows() {
            for w in 0..a.ncols() {
                if a[(u, w)] == 0.0 {
                    continue;
                }
                let dir = fy.column(u).into_owned();
                let dfw = (f.eval(&(y + h_fd * &dir)).column(w) - f.eval(&(y - h_fd * &dir)).column(w)) / (2.0 * h_fd);
                out += c * a[(u, w)] * dfw;
            }
        }
        out
    };
    let h = 1.0 / steps as f64;
    let mut y = y0.clone();
    for _ in 0..steps {
        let k1 = drift(&y);
        let k2 = drift(&(&y + 0.5 * h * &k1));
        let k3 = drift(&(&y + 0.5 * h * &k2));
        let k4 = drift(&(&y + h * &k3));
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}

fn rough_oracle() -> Outcome {
    let start = Instant::now();
    let n = 1 << 12;
    let x = Arc::new(smooth_lift(n, 1, 2.2)?);
    let lin = parse_field("linear:lambda=0.5")?;
    let a = 1.3;
    let s = solve_rough_path(lin.as_ref(), &x, &SolveSpec::new(DVector::from_element(1, a)))?;
    let exact = a * (0.5 * x.level1_increment(0, n)[0]).exp();
    let lin_err = ((s.terminal()[0] - exact) / s.terminal()[0]).abs();

    let rot = parse_field("rotation:omega=1,d=1")?;
    let r = solve_rough_path(rot.as_ref(), &x, &SolveSpec::new(DVector::from_vec(vec![1.0, 0.0])))?;
    let drift = r.y.values().iter().map(|v| (v.norm() - 1.0).abs()).fold(0.0, f64::max);

    let area = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
    let c = 0.5;
    let pa = Arc::new(roughsens::drivers::pure_area(&area, c, &Grid::uniform(1.0, n)?, 2.5)?);
    let f = parse_field("tanh")?;
    let y0 = DVector::from_vec(vec![0.4, -0.3]);
    let sol = solve_rough_path(f.as_ref(), &pa, &SolveSpec::new(y0.clone()))?;
    let reference = induced_ode(f.as_ref(), &area, c, &y0, 1 << 14);
    let area_err = (sol.terminal() - &reference).norm() / reference.norm();
    let secs = start.elapsed().as_secs_f64();
    Ok((
        lin_err <= 1e-6 && drift <= 1e-6 && area_err <= 1e-4 && secs < 30.0,
        format!("linear {lin_err:.2e}, rotation drift {drift:.2e}, pure-area vs induced ODE {area_err:.2e}, {secs:.2} s"),
    ))
}

/// Field specs with their driver dimension and initial point.
fn field_cases() -> Vec<(&'static str, Field, DVector<f64>)> {
    vec![
        ("linear scalar", parse_field("linear:lambda=0.7").unwrap(), DVector::from_element(1, 1.0)),
        ("rotation", parse_field("rotation:omega=1.5,d=1").unwrap(), DVector::from_vec(vec![1.0, 0.5])),
        ("tanh 2x2", parse_field("tanh").unwrap(), DVector::from_vec(vec![0.3, -0.2])),
        (
            "linear non-commuting",
            parse_field("linear:A0=[0,1;0,0],A1=[0,0;1,0.5]").unwrap(),
            DVector::from_vec(vec![1.0, -0.5]),
        ),
    ]
}

fn driver_cases(d: usize) -> roughsens::Result<Vec<(&'static str, Arc<RoughPath>)>> {
    Ok(vec![
        ("smooth lift", Arc::new(smooth_lift(1 << 10, d, 2.2)?)),
        ("fBm H=0.4", Arc::new(fbm_lift(d, 1 << 10, 5)?)),
    ])
}

fn jacobian() -> Outcome {
    let mut worst_gap = 0.0f64;
    let mut worst_cocycle = 0.0f64;
    let mut cases = 0;
    let tol = SolveSpec::new(DVector::zeros(1)).tol;
    for (fname, f, a) in field_cases() {
        for (dname, x) in driver_cases(f.driver_dim())? {
            let z = canonical_crp(x);
            let spec = SolveSpec::new(a.clone());
            let n = z.grid().steps();
            let jf = jacobian_flow(&f, &z, &a, 0, n, &spec)?;
            let fd = jacobian_fd(f.as_ref(), &z, &a, 0, n, 1e-4, &spec)?;
            let gap = jf.m.iter().zip(&fd).map(|(m, e)| relative_gap(m, e)).fold(0.0, f64::max);
            let cocycle = cocycle_check(&f, &z, &a, (0, n / 3, n), &spec)?;
            if gap > 1e-3 || cocycle > 10.0 * tol {
                eprintln!("    {fname} / {dname}: gap {gap:.2e}, cocycle {cocycle:.2e}");
            }
            worst_gap = worst_gap.max(gap);
            worst_cocycle = worst_cocycle.max(cocycle);
            cases += 1;
        }
    }
    Ok((
        cases == 8 && worst_gap <= 1e-3 && worst_cocycle <= 10.0 * tol,
        format!("{cases} cases, max relative gap {worst_gap:.2e}, max cocycle residual {worst_cocycle:.2e}"),
    ))
}

fn flow_property() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    let fields = field_cases();
    let mut paths = Vec::new();
    for (_, f, _) in &fields {
        paths.push(driver_cases(f.driver_dim())?);
    }
    let tol = SolveSpec::new(DVector::zeros(1)).tol;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let k = rng.random_range(0..fields.len());
        let (_, f, a) = &fields[k];
        let x = paths[k][rng.random_range(0..2)].1.clone();
        let n = x.grid().steps();
        let mut cut = [rng.random_range(0..=n), rng.random_range(0..=n), rng.random_range(0..=n)];
        cut.sort_unstable();
        let z = canonical_crp(x);
        worst = worst.max(flow_compose_check(f.as_ref(), &z, a, (cut[0], cut[1], cut[2]), &SolveSpec::new(a.clone()))?);
    }
    Ok((worst <= 10.0 * tol, format!("20 splits, max residual {worst:.2e} (bound {:.0e})", 10.0 * tol)))
}

fn scan(f: Field, x: Arc<RoughPath>, a: DVector<f64>, kind: PerturbationKind, direction: Direction) -> roughsens::Result<roughsens::sensitivity::ScanReport> {
    let problem = Problem {
        f,
        x,
        spec: SolveSpec::new(a),
    };
    perturbation_response(
        &problem,
        &PerturbationSpec {
            kind,
            direction,
            sizes: vec![1e-2, 3e-3, 1e-3, 3e-4, 1e-4],
        },
    )
}

fn regularity_scans() -> Outcome {
    let smooth = Arc::new(smooth_lift(512, 2, 2.2)?);
    let rough = Arc::new(fbm_lift(2, 512, 9)?);
    let tanh = parse_field("tanh")?;
    let a = DVector::from_vec(vec![0.2, 0.1]);
    let v = Direction::Vector(DVector::from_vec(vec![0.6, -0.8]));
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, x) in [("smooth", &smooth), ("fBm", &rough)] {
        let rep = scan(tanh.clone(), x.clone(), a.clone(), PerturbationKind::InitialPoint, v.clone())?;
        ok &= (0.95..=1.05).contains(&rep.slope) && rep.r2 >= 0.98;
        parts.push(format!("initial/{name} {:.3} (r2 {:.3})", rep.slope, rep.r2));
    }
    let lin = parse_field("linear:lambda=0.5")?;
    let rep = scan(lin, Arc::new(smooth_lift(512, 1, 2.2)?), DVector::from_element(1, 1.0), PerturbationKind::InitialPoint, Direction::Vector(DVector::from_element(1, 1.0)))?;
    ok &= (0.95..=1.05).contains(&rep.slope) && rep.r2 >= 0.98;
    parts.push(format!("initial/linear {:.3}", rep.slope));

    let dil = scan(tanh.clone(), rough.clone(), a.clone(), PerturbationKind::Dilation, Direction::None)?;
    ok &= dil.slope >= 0.95;
    parts.push(format!("dilation {:.3}", dil.slope));
    let h = DiscretePath::from_fn(rough.grid().clone(), |t| DVector::from_vec(vec![(PI * t).sin(), t * t]))?;
    let tr = scan(tanh, rough.clone(), a, PerturbationKind::Translation, Direction::Path { h, q: 1.0 })?;
    ok &= tr.slope >= 0.95;
    parts.push(format!("translation {:.3}", tr.slope));

    // exploratory: only the floor is asserted, a poor fit is flagged
    let boundary = parse_field("powerlaw:gamma=0.3")?;
    let floor = 0.3;
    let b = scan(boundary, Arc::new(smooth_lift(512, 1, 2.2)?), DVector::from_element(1, 0.0), PerturbationKind::InitialPoint, Direction::Vector(DVector::from_element(1, 1.0)))?;
    ok &= b.slope >= floor - 0.1;
    let flag = if b.r2 < 0.98 { ", flagged: r2 below 0.98" } else { "" };
    parts.push(format!("boundary {:.3} vs floor {floor} (r2 {:.3}{flag})", b.slope, b.r2));
    Ok((ok, parts.join(", ")))
}

fn subsample(x: &DiscretePath, stride: usize) -> roughsens::Result<DiscretePath> {
    DiscretePath::new(x.grid().coarsen(stride)?, x.values().iter().step_by(stride).cloned().collect())
}

fn refinement() -> Outcome {
    let f = parse_field("tanh")?;
    let a = DVector::from_vec(vec![0.3, -0.2]);
    let terminal = |x: RoughPath| -> roughsens::Result<DVector<f64>> {
        Ok(solve_rough_path(f.as_ref(), &Arc::new(x), &SolveSpec::new(a.clone()))?.terminal().clone())
    };
    let sizes = [1usize << 9, 1 << 10, 1 << 11, 1 << 12];
    let smooth: Vec<DVector<f64>> = sizes.iter().map(|&n| terminal(smooth_lift(n, 2, 2.2)?)).collect::<roughsens::Result<_>>()?;
    let diffs: Vec<f64> = smooth.windows(2).map(|w| (&w[1] - &w[0]).norm()).collect();
    let fit = loglog(&sizes[..3].iter().map(|&n| n as f64).collect::<Vec<_>>(), &diffs)?;
    let order = -fit.slope;

    // successive differences along one path are noisy, so their root mean square over seeds is used
    let seeds: Vec<u64> = (0..16).collect();
    let per_seed: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|&seed| {
            let fine = DriverSpec::fbm(0.4, 2, 1 << 12, seed).path()?;
            let ys: Vec<DVector<f64>> = [8, 4, 2, 1]
                .iter()
                .map(|&s| terminal(lift_piecewise_linear(&subsample(&fine, s)?, 2.7)?))
                .collect::<roughsens::Result<_>>()?;
            Ok(ys.windows(2).map(|w| (&w[1] - &w[0]).norm()).collect())
        })
        .collect::<roughsens::Result<_>>()?;
    let rms: Vec<f64> = (0..3)
        .map(|k| (per_seed.iter().map(|d| d[k] * d[k]).sum::<f64>() / per_seed.len() as f64).sqrt())
        .collect();
    let monotone = rms.windows(2).all(|w| w[1] < w[0]);
    let single = per_seed.iter().filter(|d| d.windows(2).all(|w| w[1] < w[0])).count();
    let show = |v: &[f64]| v.iter().map(|d| format!("{d:.2e}")).collect::<Vec<_>>().join(", ");
    Ok((
        order >= 1.0 && monotone,
        format!(
            "smooth order {order:.2}, fBm rms differences [{}], monotone on {single} of {} single paths",
            show(&rms),
            per_seed.len()
        ),
    ))
}

fn run_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let runs: &[&[&str]] = &[
        &["verify", "--out", "v/verify"],
        &["solve", "--driver", "smooth-poly", "--field", "linear:lambda=0.5", "--out", "s/solve"],
        &["scan", "--kind", "initial", "--deltas", "1e-2,1e-3,1e-4", "--out", "s/scan"],
        &["solve", "--driver", "fbm:H=0.4,d=2,N=1024,seed=7", "--field", "tanh", "--out", "s/fbm"],
        &["jacobian", "--driver", "fbm:H=0.4,d=2,N=256,seed=3", "--field", "tanh", "--out", "j/jac"],
        &["lift", "--driver", "bm:d=2,N=512,seed=4", "--out", "l/lift"],
        &["fbm", "--driver", "fbm:H=0.3,N=2048,seed=9", "--format", "json", "--out", "f/path"],
    ];
    for args in runs {
        let status = Command::new(env!("CARGO_BIN_EXE_roughsens"))
            .current_dir(dir)
            .args(*args)
            .output()
            .expect("binary runs")
            .status;
        assert!(status.success(), "{args:?} exited with {status}");
    }
    let mut files = Vec::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().display().to_string();
        let mut bytes = fs::read(&entry).unwrap();
        if rel.ends_with(".manifest.json") {
            let mut m: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
            m.as_object_mut().unwrap().remove("wall_time");
            bytes = serde_json::to_vec(&m).unwrap();
        }
        files.push((rel, bytes));
    }
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
    let first = run_all(a.path());
    let second = run_all(b.path());
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    Ok((
        first.len() == second.len() && differing.is_empty(),
        format!("{} artifacts compared, {} differ {:?}", first.len(), differing.len(), differing),
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("algebra", algebra),
        ("young oracle", young_oracle),
        ("sewing exactness", sewing_exactness),
        ("interpolation inequality", interpolation),
        ("rough solver oracles", rough_oracle),
        ("jacobian", jacobian),
        ("flow property", flow_property),
        ("regularity scans", regularity_scans),
        ("refinement convergence", refinement),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (passed, detail) = match run() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!passed);
        println!(
            "criterion {:>2} {:<26} {}  {detail} [{:.1} s]",
            k + 1,
            name,
            if passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
