//! Calibration of the fluid resistance `1/mubar_f` against a reference
//! temperature field by a least-squares sweep.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::newton::NewtonConfig;
use crate::physics::ReducedModel;
use crate::topopt::robust_solve;

/// `(1/N) sum (a - b)^2`.
pub fn lsq_error(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Setup(format!(
            "field lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Setup("empty fields".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// Nodal temperatures on a structured grid plus free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceField {
    pub nx: usize,
    pub ny: usize,
    pub t: Vec<f64>,
    pub meta: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct Row {
    node: usize,
    #[allow(dead_code)]
    x: f64,
    #[allow(dead_code)]
    y: f64,
    t: f64,
}

impl ReferenceField {
    pub fn new(mesh: &Mesh, t: Vec<f64>, meta: BTreeMap<String, String>) -> Result<Self> {
        let f = ReferenceField {
            nx: mesh.nx,
            ny: mesh.ny,
            t,
            meta,
        };
        f.check(mesh)?;
        Ok(f)
    }

    /// The field must live on exactly this grid.
    pub fn check(&self, mesh: &Mesh) -> Result<()> {
        if self.nx != mesh.nx || self.ny != mesh.ny || self.t.len() != mesh.n_nodes() {
            return Err(Error::Setup(format!(
                "reference grid {}x{} does not match mesh {}x{}",
                self.nx, self.ny, mesh.nx, mesh.ny
            )));
        }
        if self.t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Setup("reference field has non-finite values".into()));
        }
        Ok(())
    }

    /// CSV `node,x,y,t` preceded by `# key=value` metadata lines (`nx`, `ny` required).
    pub fn write(&self, path: &Path, mesh: &Mesh) -> Result<()> {
        self.check(mesh)?;
        let mut out = String::new();
        out.push_str(&format!("# nx={}\n# ny={}\n", self.nx, self.ny));
        for (k, v) in &self.meta {
            out.push_str(&format!("# {k}={v}\n"));
        }
        out.push_str("node,x,y,t\n");
        for (n, p) in mesh.node_coords.iter().enumerate() {
            out.push_str(&format!("{n},{:e},{:e},{:e}\n", p[0], p[1], self.t[n]));
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |m: String| Error::Parse {
            path: path.to_path_buf(),
            message: m,
        };
        let mut meta = BTreeMap::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
            }
        }
        let dim = |key: &str, meta: &mut BTreeMap<String, String>| -> Result<usize> {
            meta.remove(key)
                .ok_or_else(|| parse_err(format!("missing '# {key}=' header")))?
                .parse()
                .map_err(|e| parse_err(format!("bad {key}: {e}")))
        };
        let nx = dim("nx", &mut meta)?;
        let ny = dim("ny", &mut meta)?;
        let rows: Vec<Row> = crate::io::read_rows(path)?;
        let n = (nx + 1) * (ny + 1);
        if rows.len() != n {
            return Err(parse_err(format!("{} rows, expected {n}", rows.len())));
        }
        let mut t = vec![f64::NAN; n];
        for r in rows {
            if r.node >= n {
                return Err(parse_err(format!("node {} out of range", r.node)));
            }
            t[r.node] = r.t;
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(parse_err("missing or non-finite temperatures".into()));
        }
        Ok(ReferenceField { nx, ny, t, meta })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub inv_mubar_f: f64,
    /// `None` when the forward solve failed.
    pub error: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub argmin: Option<f64>,
    pub min_error: Option<f64>,
    /// Minimum at the first or last grid value.
    pub at_boundary: bool,
    /// Curve flat within 1e-12.
    pub non_unique: bool,
}

/// Grid `lo, lo + step, ..., hi`, rounded to twelve decimals so that values such
/// as 0.09 come out exactly as written.
pub fn sweep_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(lo < hi) || !(step > 0.0) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!(
            "invalid sweep range [{lo}, {hi}] step {step}"
        )));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|k| ((lo + k as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

/// Forward-solves the model at every grid value of `1/mubar_f` from the cold
/// state and records the least-squares temperature error against `reference`.
pub fn sweep_mubar(
    model: &ReducedModel,
    design: &[f64],
    reference: &ReferenceField,
    grid: &[f64],
    newton: &NewtonConfig,
) -> Result<SweepResult> {
    reference.check(&model.mesh)?;
    let mut points = Vec::with_capacity(grid.len());
    for &v in grid {
        let mut mats = model.mats.clone();
        mats.inv_mubar_f = v;
        let m = model.with_materials(mats)?;
        match robust_solve(&m, design, None, newton) {
            Ok((state, _)) => points.push(SweepPoint {
                inv_mubar_f: v,
                error: Some(lsq_error(state.t(), &reference.t)?),
                converged: true,
            }),
            Err(e) => {
                log::warn!("sweep point {v}: {e}");
                points.push(SweepPoint {
                    inv_mubar_f: v,
                    error: None,
                    converged: false,
                });
            }
        }
    }
    Ok(summarize(points))
}

fn summarize(points: Vec<SweepPoint>) -> SweepResult {
    let ok: Vec<(usize, f64)> = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.error.map(|e| (i, e)))
        .collect();
    let best = ok.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1));
    let (lo, hi) = ok
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(_, e)| (a.min(e), b.max(e)));
    SweepResult {
        argmin: best.map(|(i, _)| points[i].inv_mubar_f),
        min_error: best.map(|(_, e)| e),
        at_boundary: best.is_some_and(|(i, _)| i == 0 || i + 1 == points.len()),
        non_unique: ok.len() > 1 && hi - lo <= 1e-12,
        points,
    }
}
