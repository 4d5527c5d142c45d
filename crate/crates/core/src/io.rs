//! Field export (legacy VTK, CSV), history files, thresholding and cost reports.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::newton::SolveReport;

/// Everything written for one design iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub iter: usize,
    /// Raw design per element (frozen elements carry their fixed value).
    pub gamma: Vec<f64>,
    pub gamma_tilde: Vec<f64>,
    pub p: Vec<f64>,
    pub t: Vec<f64>,
    pub velocity: Vec<[f64; 2]>,
    pub psi: f64,
    pub constraint: f64,
    pub dt_max: f64,
}

impl FieldSnapshot {
    pub fn check(&self, mesh: &Mesh) -> Result<()> {
        let (nn, ne) = (mesh.n_nodes(), mesh.n_elems());
        if self.p.len() != nn
            || self.t.len() != nn
            || self.gamma.len() != ne
            || self.gamma_tilde.len() != ne
            || self.velocity.len() != ne
        {
            return Err(Error::Setup("snapshot arrays do not match the mesh".into()));
        }
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Legacy ASCII VTK structured grid with point data `p`, `t` and cell data
/// `gamma`, `gamma_tilde`, `speed`, `velocity`.
pub fn write_vtk(path: &Path, mesh: &Mesh, snap: &FieldSnapshot) -> Result<()> {
    snap.check(mesh)?;
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    let (nn, ne) = (mesh.n_nodes(), mesh.n_elems());
    writeln!(w, "# vtk DataFile Version 3.0").map_err(io)?;
    writeln!(w, "potflow iteration {} psi {:e}", snap.iter, snap.psi).map_err(io)?;
    writeln!(w, "ASCII\nDATASET STRUCTURED_GRID").map_err(io)?;
    writeln!(w, "DIMENSIONS {} {} 1", mesh.nx + 1, mesh.ny + 1).map_err(io)?;
    writeln!(w, "POINTS {nn} double").map_err(io)?;
    for p in &mesh.node_coords {
        writeln!(w, "{:e} {:e} 0", p[0], p[1]).map_err(io)?;
    }
    writeln!(w, "POINT_DATA {nn}").map_err(io)?;
    for (name, data) in [("p", &snap.p), ("t", &snap.t)] {
        writeln!(w, "SCALARS {name} double 1\nLOOKUP_TABLE default").map_err(io)?;
        for v in data.iter() {
            writeln!(w, "{v:e}").map_err(io)?;
        }
    }
    writeln!(w, "CELL_DATA {ne}").map_err(io)?;
    let speed: Vec<f64> = snap
        .velocity
        .iter()
        .map(|u| (u[0] * u[0] + u[1] * u[1]).sqrt())
        .collect();
    for (name, data) in [
        ("gamma", &snap.gamma),
        ("gamma_tilde", &snap.gamma_tilde),
        ("speed", &speed),
    ] {
        writeln!(w, "SCALARS {name} double 1\nLOOKUP_TABLE default").map_err(io)?;
        for v in data.iter() {
            writeln!(w, "{v:e}").map_err(io)?;
        }
    }
    writeln!(w, "VECTORS velocity double").map_err(io)?;
    for u in &snap.velocity {
        writeln!(w, "{:e} {:e} 0", u[0], u[1]).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeRow {
    pub node: usize,
    pub x: f64,
    pub y: f64,
    pub p: f64,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElementRow {
    pub elem: usize,
    pub xc: f64,
    pub yc: f64,
    pub gamma: f64,
    pub gamma_tilde: f64,
    pub ux: f64,
    pub uy: f64,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes `<stem>_nodes.csv` and `<stem>_elements.csv` next to `stem`.
pub fn write_csv(stem: &Path, mesh: &Mesh, snap: &FieldSnapshot) -> Result<()> {
    snap.check(mesh)?;
    let nodes = stem.with_file_name(format!("{}_nodes.csv", file_stem(stem)));
    let elems = stem.with_file_name(format!("{}_elements.csv", file_stem(stem)));
    let mut w = csv::Writer::from_writer(create(&nodes)?);
    for (n, c) in mesh.node_coords.iter().enumerate() {
        w.serialize(NodeRow {
            node: n,
            x: c[0],
            y: c[1],
            p: snap.p[n],
            t: snap.t[n],
        })
        .map_err(|e| csv_err(&nodes, e))?;
    }
    w.flush().map_err(|e| Error::io(&nodes, e))?;
    let mut w = csv::Writer::from_writer(create(&elems)?);
    for e in 0..mesh.n_elems() {
        let c = mesh.centroid(e);
        w.serialize(ElementRow {
            elem: e,
            xc: c[0],
            yc: c[1],
            gamma: snap.gamma[e],
            gamma_tilde: snap.gamma_tilde[e],
            ux: snap.velocity[e][0],
            uy: snap.velocity[e][1],
        })
        .map_err(|e| csv_err(&elems, e))?;
    }
    w.flush().map_err(|e| Error::io(&elems, e))
}

fn file_stem(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "fields".into())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// Reads back the CSV pair written by [`write_csv`].
pub fn read_csv(stem: &Path) -> Result<(Vec<NodeRow>, Vec<ElementRow>)> {
    let nodes = stem.with_file_name(format!("{}_nodes.csv", file_stem(stem)));
    let elems = stem.with_file_name(format!("{}_elements.csv", file_stem(stem)));
    Ok((read_rows(&nodes)?, read_rows(&elems)?))
}

/// Physical design per element from an elements CSV (`gamma_tilde` column).
pub fn read_design(path: &Path, n_elems: usize) -> Result<Vec<f64>> {
    let rows: Vec<ElementRow> = read_rows(path)?;
    if rows.len() != n_elems {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("{} rows, mesh has {n_elems} elements", rows.len()),
        });
    }
    let mut d = vec![0.0; n_elems];
    for r in rows {
        if r.elem >= n_elems {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!("element index {} out of range", r.elem),
            });
        }
        d[r.elem] = r.gamma_tilde;
    }
    Ok(d)
}

/// Appends serializable records as JSON lines.
pub struct JsonLines {
    w: BufWriter<File>,
    path: std::path::PathBuf,
}

impl JsonLines {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(JsonLines {
            w: create(path)?,
            path: path.to_path_buf(),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::Parse {
            path: self.path.clone(),
            message: e.to_string(),
        })?;
        writeln!(self.w, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Writes a pretty JSON document.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Element-wise threshold: solid where `gamma_tilde >= cutoff`. Returns the
/// binary field and its solid fraction.
pub fn threshold_design(gamma_tilde: &[f64], cutoff: f64) -> (Vec<f64>, f64) {
    let bin: Vec<f64> = gamma_tilde
        .iter()
        .map(|&g| if g >= cutoff { 1.0 } else { 0.0 })
        .collect();
    let frac = if bin.is_empty() {
        0.0
    } else {
        bin.iter().sum::<f64>() / bin.len() as f64
    };
    (bin, frac)
}

/// Direct-solve cost ratio of a 2-field against a 4-field model, `(2/4)^3`.
pub const THEORETICAL_COST_RATIO: f64 = 0.125;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostSummary {
    pub nodes: usize,
    pub dofs: usize,
    pub full_order_dofs: usize,
    pub solves: usize,
    pub newton_iterations: usize,
    pub wall_time_s: f64,
    pub mean_newton_iterations: f64,
    pub theoretical_ratio: f64,
}

/// Summary of a set of forward solves on a mesh with `n_nodes` nodes.
pub fn report_cost(n_nodes: usize, reports: &[SolveReport]) -> CostSummary {
    let its: usize = reports.iter().map(|r| r.iterations).sum();
    CostSummary {
        nodes: n_nodes,
        dofs: 2 * n_nodes,
        full_order_dofs: 4 * n_nodes,
        solves: reports.len(),
        newton_iterations: its,
        wall_time_s: reports.iter().map(|r| r.wall_time_s).sum(),
        mean_newton_iterations: if reports.is_empty() {
            0.0
        } else {
            its as f64 / reports.len() as f64
        },
        theoretical_ratio: THEORETICAL_COST_RATIO,
    }
}

impl fmt::Display for CostSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "nodes                    {}", self.nodes)?;
        writeln!(f, "DOFs (P, T)              {}", self.dofs)?;
        writeln!(f, "DOFs of a 4-field model  {}", self.full_order_dofs)?;
        writeln!(f, "forward solves           {}", self.solves)?;
        writeln!(
            f,
            "Newton iterations        {} (mean {:.2})",
            self.newton_iterations, self.mean_newton_iterations
        )?;
        writeln!(f, "solve wall time          {:.3} s", self.wall_time_s)?;
        write!(
            f,
            "theoretical direct-solve cost ratio (2n/4n)^3 = {:.1}%",
            100.0 * self.theoretical_ratio
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snapshot(mesh: &Mesh) -> FieldSnapshot {
        let (nn, ne) = (mesh.n_nodes(), mesh.n_elems());
        FieldSnapshot {
            iter: 3,
            gamma: (0..ne).map(|e| e as f64 / 7.0).collect(),
            gamma_tilde: (0..ne).map(|e| (e as f64).sqrt() / 3.0).collect(),
            p: (0..nn).map(|n| -(n as f64) * 0.1f64.powi(3)).collect(),
            t: (0..nn).map(|n| 1.0 / (n as f64 + 3.0)).collect(),
            velocity: (0..ne).map(|e| [e as f64 * 1e-7, -1.0 / 3.0]).collect(),
            psi: 0.5,
            constraint: 0.0,
            dt_max: 1.0,
        }
    }

    #[test]
    fn vtk_counts() {
        let mesh = Mesh::structured(2, 2, 1.0, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.vtk");
        write_vtk(&path, &mesh, &snapshot(&mesh)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("DIMENSIONS 3 3 1"));
        assert!(text.contains("POINTS 9 double"));
        assert!(text.contains("CELL_DATA 4"));
        assert!(text.contains("VECTORS velocity double"));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mesh = Mesh::structured(3, 2, 1.0, 0.7).unwrap();
        let snap = snapshot(&mesh);
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("f");
        write_csv(&stem, &mesh, &snap).unwrap();
        let (nodes, elems) = read_csv(&stem).unwrap();
        for r in nodes {
            assert_eq!(r.p, snap.p[r.node]);
            assert_eq!(r.t, snap.t[r.node]);
        }
        for r in elems {
            assert_eq!(r.gamma, snap.gamma[r.elem]);
            assert_eq!(r.gamma_tilde, snap.gamma_tilde[r.elem]);
            assert_eq!([r.ux, r.uy], snap.velocity[r.elem]);
        }
        let d = read_design(&dir.path().join("f_elements.csv"), 6).unwrap();
        assert_eq!(d, snap.gamma_tilde);
    }

    #[test]
    fn thresholds() {
        assert_eq!(threshold_design(&[0.3; 5], 0.1), (vec![1.0; 5], 1.0));
        assert_eq!(threshold_design(&[0.3; 5], 0.5), (vec![0.0; 5], 0.0));
    }

    #[test]
    fn cost_accounting() {
        let c = report_cost(141 * 161, &[]);
        assert_eq!(c.dofs, 45_402);
        assert_eq!(c.full_order_dofs, 90_804);
        assert_eq!(c.newton_iterations, 0);
        assert_eq!(c.wall_time_s, 0.0);
        assert!(c.to_string().contains("12.5%"));
    }
}
