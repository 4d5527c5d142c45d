//! Fixed-pattern sparse assembly and the direct LU solve behind it.
//!
//! The sparsity of every system here is fixed by the mesh, so the pattern and the
//! symbolic factorization are computed once and reused for every numeric
//! factorization.

use std::sync::OnceLock;

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{Conj, MatMut};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// CSC pattern of a finite element matrix with `fields` unknowns per node,
/// blocked by field (`dof = field * n_nodes + node`).
#[derive(Debug)]
pub struct SparsePattern {
    n: usize,
    ndof_e: usize,
    symbolic: SymbolicSparseColMat<usize>,
    /// Value slot of local entry `(i, j)` of element `e` at `e * ndof_e^2 + i * ndof_e + j`.
    slots: Vec<usize>,
    lu_symbolic: OnceLock<std::result::Result<SymbolicLu<usize>, String>>,
}

impl SparsePattern {
    pub fn for_mesh(mesh: &Mesh, fields: usize) -> Self {
        let nn = mesh.n_nodes();
        let n = fields * nn;
        let ndof_e = 4 * fields;
        let local = |e: usize| -> Vec<usize> {
            let nodes = mesh.elem_nodes[e];
            (0..fields)
                .flat_map(|f| nodes.iter().map(move |&a| f * nn + a))
                .collect()
        };

        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in 0..mesh.n_elems() {
            let dofs = local(e);
            for &c in &dofs {
                cols[c].extend_from_slice(&dofs);
            }
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for col in &mut cols {
            col.sort_unstable();
            col.dedup();
            row_idx.extend_from_slice(col);
            col_ptr.push(row_idx.len());
        }

        let mut slots = Vec::with_capacity(mesh.n_elems() * ndof_e * ndof_e);
        for e in 0..mesh.n_elems() {
            let dofs = local(e);
            for &r in &dofs {
                for &c in &dofs {
                    let range = col_ptr[c]..col_ptr[c + 1];
                    let pos = row_idx[range.clone()]
                        .binary_search(&r)
                        .expect("entry present in pattern");
                    slots.push(range.start + pos);
                }
            }
        }
        let symbolic = SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx);
        SparsePattern {
            n,
            ndof_e,
            symbolic,
            slots,
            lu_symbolic: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.symbolic.row_idx().len()
    }

    pub fn zeros(&self) -> Vec<f64> {
        vec![0.0; self.nnz()]
    }

    /// Adds a dense element matrix (row-major, `ndof_e x ndof_e`) into `values`.
    pub fn add_element(&self, values: &mut [f64], e: usize, local: &[f64]) {
        let m = self.ndof_e * self.ndof_e;
        let slots = &self.slots[e * m..(e + 1) * m];
        for (s, v) in slots.iter().zip(local) {
            values[*s] += v;
        }
    }

    /// Zeroes rows and columns of constrained dofs and puts 1 on their diagonal.
    pub fn apply_dirichlet(&self, values: &mut [f64], fixed: &[bool]) {
        let col_ptr = self.symbolic.col_ptr();
        let row_idx = self.symbolic.row_idx();
        for c in 0..self.n {
            for k in col_ptr[c]..col_ptr[c + 1] {
                let r = row_idx[k];
                if fixed[c] || fixed[r] {
                    values[k] = if r == c { 1.0 } else { 0.0 };
                }
            }
        }
    }

    /// Entry `(r, c)` or zero when outside the pattern.
    pub fn get(&self, values: &[f64], r: usize, c: usize) -> f64 {
        let col_ptr = self.symbolic.col_ptr();
        let range = col_ptr[c]..col_ptr[c + 1];
        match self.symbolic.row_idx()[range.clone()].binary_search(&r) {
            Ok(pos) => values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`.
    pub fn matvec(&self, values: &[f64], x: &[f64]) -> Vec<f64> {
        let col_ptr = self.symbolic.col_ptr();
        let row_idx = self.symbolic.row_idx();
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            for k in col_ptr[c]..col_ptr[c + 1] {
                y[row_idx[k]] += values[k] * x[c];
            }
        }
        y
    }

    /// `y = A^T x`.
    pub fn matvec_transpose(&self, values: &[f64], x: &[f64]) -> Vec<f64> {
        let col_ptr = self.symbolic.col_ptr();
        let row_idx = self.symbolic.row_idx();
        (0..self.n)
            .map(|c| {
                (col_ptr[c]..col_ptr[c + 1])
                    .map(|k| values[k] * x[row_idx[k]])
                    .sum()
            })
            .collect()
    }

    /// Sparse LU of the matrix with these values.
    pub fn factorize(&self, values: &[f64]) -> Result<LuFactor> {
        let symbolic = self
            .lu_symbolic
            .get_or_init(|| {
                SymbolicLu::try_new(self.symbolic.as_ref()).map_err(|e| format!("{e:?}"))
            })
            .as_ref()
            .map_err(|e| Error::Solver(format!("symbolic factorization: {e}")))?;
        if values.len() != self.nnz() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("matrix has non-finite entries".into()));
        }
        let mat = SparseColMatRef::new(self.symbolic.as_ref(), values);
        let lu = Lu::try_new_with_symbolic(symbolic.clone(), mat)
            .map_err(|e| Error::Solver(format!("numeric factorization: {e:?}")))?;
        Ok(LuFactor { lu, n: self.n })
    }
}

pub struct LuFactor {
    lu: Lu<usize, f64>,
    n: usize,
}

impl LuFactor {
    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) -> Result<()> {
        self.check(b)?;
        self.lu
            .solve_in_place_with_conj(Conj::No, MatMut::from_column_major_slice_mut(b, self.n, 1));
        finite(b)
    }

    /// Solves `A^T x = b` in place.
    pub fn solve_transpose(&self, b: &mut [f64]) -> Result<()> {
        self.check(b)?;
        self.lu.solve_transpose_in_place_with_conj(
            Conj::No,
            MatMut::from_column_major_slice_mut(b, self.n, 1),
        );
        finite(b)
    }

    fn check(&self, b: &[f64]) -> Result<()> {
        if b.len() != self.n {
            return Err(Error::Solver(format!(
                "rhs length {} does not match system size {}",
                b.len(),
                self.n
            )));
        }
        Ok(())
    }
}

fn finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Solver("singular matrix (non-finite solution)".into()))
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assembled_laplacian_solves_linear_field() {
        // Conduction on a 3x3 grid with T = x imposed on the boundary is exact for bilinears.
        let mesh = Mesh::structured(3, 3, 1.0, 1.0).unwrap();
        let em = crate::element::ElementMatrices::for_mesh(&mesh);
        let pat = SparsePattern::for_mesh(&mesh, 1);
        let mut vals = pat.zeros();
        let local: Vec<f64> = em.lap.iter().flatten().copied().collect();
        for e in 0..mesh.n_elems() {
            pat.add_element(&mut vals, e, &local);
        }
        let fixed: Vec<bool> = (0..mesh.n_nodes()).map(|n| mesh.is_boundary_node(n)).collect();
        let exact: Vec<f64> = mesh.node_coords.iter().map(|p| p[0]).collect();
        let k_full = vals.clone();
        let mut rhs: Vec<f64> = pat.matvec(&k_full, &exact.iter().zip(&fixed).map(|(x, f)| if *f { *x } else { 0.0 }).collect::<Vec<_>>());
        for (i, r) in rhs.iter_mut().enumerate() {
            *r = if fixed[i] { exact[i] } else { -*r };
        }
        pat.apply_dirichlet(&mut vals, &fixed);
        let lu = pat.factorize(&vals).unwrap();
        lu.solve(&mut rhs).unwrap();
        for (a, b) in rhs.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-13);
        }
        let mut r2 = rhs.clone();
        lu.solve_transpose(&mut r2).unwrap();
        let back = pat.matvec_transpose(&vals, &r2);
        for (a, b) in back.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
