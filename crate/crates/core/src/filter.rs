//! Linear density filter with conic weights `max(0, r - dist)` between element
//! centroids, restricted to the design domain.

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Row-normalized sparse filter matrix acting on design variables.
#[derive(Debug, Clone)]
pub struct DensityFilter {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

impl DensityFilter {
    pub fn identity(n: usize) -> Self {
        DensityFilter {
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            weights: vec![1.0; n],
        }
    }

    /// Filter over the elements listed in `design_elems`; variable `k` lives on
    /// element `design_elems[k]`. Neighbours outside the list do not contribute.
    pub fn new(mesh: &Mesh, design_elems: &[usize], r_min: f64) -> Result<Self> {
        if !(r_min >= 0.0) || !r_min.is_finite() {
            return Err(Error::Setup(format!("filter radius must be >= 0, got {r_min}")));
        }
        let n = design_elems.len();
        if r_min == 0.0 {
            return Ok(Self::identity(n));
        }
        let mut index = vec![usize::MAX; mesh.n_elems()];
        for (k, &e) in design_elems.iter().enumerate() {
            if e >= mesh.n_elems() || index[e] != usize::MAX {
                return Err(Error::Setup("design elements must be unique mesh elements".into()));
            }
            index[e] = k;
        }
        let ri = (r_min / mesh.hx).ceil() as isize;
        let rj = (r_min / mesh.hy).ceil() as isize;
        let area = mesh.elem_area();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        row_ptr.push(0);
        for &e in design_elems {
            let (i, j) = mesh.elem_ij(e);
            let start = cols.len();
            let mut total = 0.0;
            for dj in -rj..=rj {
                for di in -ri..=ri {
                    let (ii, jj) = (i as isize + di, j as isize + dj);
                    if ii < 0 || jj < 0 || ii >= mesh.nx as isize || jj >= mesh.ny as isize {
                        continue;
                    }
                    let k = index[mesh.elem_index(ii as usize, jj as usize)];
                    if k == usize::MAX {
                        continue;
                    }
                    let dist = ((di as f64 * mesh.hx).powi(2) + (dj as f64 * mesh.hy).powi(2)).sqrt();
                    let w = (r_min - dist).max(0.0) * area;
                    if w > 0.0 {
                        cols.push(k);
                        weights.push(w);
                        total += w;
                    }
                }
            }
            for w in &mut weights[start..] {
                *w /= total;
            }
            row_ptr.push(cols.len());
        }
        Ok(DensityFilter {
            row_ptr,
            cols,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Weights of one row as `(column, weight)` pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.row(i).map(|(j, w)| w * x[j]).sum())
            .collect()
    }

    /// Chain rule: sensitivities with respect to filtered values mapped back to raw ones.
    pub fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for i in 0..self.len() {
            for (j, w) in self.row(i) {
                out[j] += w * g[i];
            }
        }
        out
    }
}

/// Filters a field defined on every element of the mesh.
pub fn density_filter(gamma: &[f64], mesh: &Mesh, r_min: f64) -> Result<Vec<f64>> {
    if gamma.len() != mesh.n_elems() {
        return Err(Error::Setup("design length must equal element count".into()));
    }
    let all: Vec<usize> = (0..mesh.n_elems()).collect();
    Ok(DensityFilter::new(mesh, &all, r_min)?.apply(gamma))
}
