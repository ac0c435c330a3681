//! Path, rough-path and controlled-path files.
//!
//! Paths are CSV with header `t,x1,...,xd` and seventeen significant digits.
//! Rough paths and controlled paths are JSON with row-major matrices.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::crp::ControlledPath;
use crate::error::{Error, Result};
use crate::grid::{ControlFn, DiscretePath, Grid};
use crate::tensor::{RoughPath, Tensor2};

/// `printf("%.17g", x)`.
pub fn fmt_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..17).contains(&exp) {
        let decimals = (16 - exp) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let m = trim_zeros(mantissa.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub fn write_path_csv(x: &DiscretePath, mut w: impl Write) -> Result<()> {
    let mut header = String::from("t");
    for k in 1..=x.dim() {
        header.push_str(&format!(",x{k}"));
    }
    writeln!(w, "{header}")?;
    for (t, v) in x.grid().times().iter().zip(x.values()) {
        let mut line = fmt_g17(*t);
        for c in v.iter() {
            line.push(',');
            line.push_str(&fmt_g17(*c));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_path_csv(r: impl Read) -> Result<DiscretePath> {
    let mut lines = BufReader::new(r).lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty path file".into()))??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.first() != Some(&"t") || cols.iter().skip(1).enumerate().any(|(k, c)| *c != format!("x{}", k + 1)) {
        return Err(Error::Parse(format!("path header must be `t,x1,...,xd`, got `{header}`")));
    }
    let d = cols.len() - 1;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let nums = line
            .trim()
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|_| Error::Parse(format!("row {}: `{s}` is not a number", row + 1))))
            .collect::<Result<Vec<f64>>>()?;
        if nums.len() != d + 1 {
            return Err(Error::Parse(format!("row {} has {} fields, expected {}", row + 1, nums.len(), d + 1)));
        }
        times.push(nums[0]);
        values.push(DVector::from_column_slice(&nums[1..]));
    }
    DiscretePath::new(Grid::new(times)?, values)
}

pub fn save_path_csv(x: &DiscretePath, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_path_csv(x, &mut buf)?;
    write_atomic(path, &buf)
}

pub fn load_path_csv(path: impl AsRef<Path>) -> Result<DiscretePath> {
    read_path_csv(fs::File::open(path)?)
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>], shape: (usize, usize), what: &str) -> Result<DMatrix<f64>> {
    if r.len() != shape.0 || r.iter().any(|row| row.len() != shape.1) {
        return Err(Error::Parse(format!("{what} must be {}×{}", shape.0, shape.1)));
    }
    Ok(DMatrix::from_fn(shape.0, shape.1, |i, j| r[i][j]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub lvl1: Vec<f64>,
    pub lvl2: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub i: usize,
    pub j: usize,
    pub lvl1: Vec<f64>,
    pub lvl2: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoughPathFile {
    pub dim: usize,
    pub p: f64,
    pub grid: Vec<f64>,
    pub start: Vec<f64>,
    pub steps: Vec<StepRecord>,
    /// Redundant increments over non-adjacent pairs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<PairRecord>,
}

impl RoughPathFile {
    pub fn from_path(x: &RoughPath) -> Self {
        let step = |t: &Tensor2| StepRecord {
            lvl1: t.level1.iter().copied().collect(),
            lvl2: rows(&t.level2),
        };
        Self {
            dim: x.dim(),
            p: x.p(),
            grid: x.grid().times().to_vec(),
            start: x.start().iter().copied().collect(),
            steps: x.steps().iter().map(step).collect(),
            pairs: x
                .stored_increments()
                .map(|(&(i, j), t)| PairRecord {
                    i,
                    j,
                    lvl1: t.level1.iter().copied().collect(),
                    lvl2: rows(&t.level2),
                })
                .collect(),
        }
    }

    pub fn into_path(self) -> Result<RoughPath> {
        let d = self.dim;
        let tensor = |lvl1: &[f64], lvl2: &[Vec<f64>]| -> Result<Tensor2> {
            if lvl1.len() != d {
                return Err(Error::Parse(format!("level-1 entry of length {}, expected {d}", lvl1.len())));
            }
            Tensor2::new(DVector::from_column_slice(lvl1), from_rows(lvl2, (d, d), "level-2 entry")?)
        };
        if self.start.len() != d {
            return Err(Error::Parse(format!("start of length {}, expected {d}", self.start.len())));
        }
        let steps = self.steps.iter().map(|s| tensor(&s.lvl1, &s.lvl2)).collect::<Result<Vec<_>>>()?;
        let mut x = RoughPath::new(Grid::new(self.grid)?, DVector::from_vec(self.start), steps, self.p, ControlFn::Difference)?;
        for pr in &self.pairs {
            x = x.with_stored_increment(pr.i, pr.j, tensor(&pr.lvl1, &pr.lvl2)?)?;
        }
        Ok(x)
    }
}

pub fn rough_path_to_json(x: &RoughPath) -> Result<String> {
    Ok(serde_json::to_string_pretty(&RoughPathFile::from_path(x))?)
}

pub fn rough_path_from_json(s: &str) -> Result<RoughPath> {
    serde_json::from_str::<RoughPathFile>(s)?.into_path()
}

pub fn save_rough_path(x: &RoughPath, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, rough_path_to_json(x)?.as_bytes())
}

pub fn load_rough_path(path: impl AsRef<Path>) -> Result<RoughPath> {
    rough_path_from_json(&fs::read_to_string(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlledPathFile {
    /// File holding the reference rough path.
    pub rough_ref: String,
    pub y: Vec<Vec<f64>>,
    pub ydag: Vec<Vec<Vec<f64>>>,
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

impl ControlledPathFile {
    pub fn from_crp(y: &ControlledPath, rough_ref: impl Into<String>) -> Self {
        let (p, q, r) = y.indices();
        Self {
            rough_ref: rough_ref.into(),
            y: y.values().iter().map(|v| v.iter().copied().collect()).collect(),
            ydag: y.daggers().iter().map(rows).collect(),
            p,
            q,
            r,
        }
    }

    pub fn into_crp(self, rough: Arc<RoughPath>) -> Result<ControlledPath> {
        if (rough.p() - self.p).abs() > 0.0 {
            return Err(Error::Parse(format!("controlled path has p = {}, reference path p = {}", self.p, rough.p())));
        }
        let n = self.y.first().map_or(0, Vec::len);
        let du = rough.dim();
        let y = self.y.into_iter().map(DVector::from_vec).collect();
        let ydag = self
            .ydag
            .iter()
            .map(|m| from_rows(m, (n, du), "derivative"))
            .collect::<Result<Vec<_>>>()?;
        ControlledPath::new(rough, y, ydag, self.q, self.r)
    }
}
