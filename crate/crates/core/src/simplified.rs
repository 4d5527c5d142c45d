//! Conduction with a Newton-cooling sink on fluid/solid interfaces.
//!
//! The interface is located through the density gradient: the sink term is
//! `|grad g| h (T - T0)` with `g` the nodal projection of the element densities.
//! No flow is modelled, so the problem is linear in `T`.

use serde::{Deserialize, Serialize};

use crate::boundary::BoundaryConditions;
use crate::element::{matvec, ElementMatrices};
use crate::error::{Error, Result};
use crate::filter::DensityFilter;
use crate::linalg::{dot, LuFactor, SparsePattern};
use crate::mesh::Mesh;
use crate::mma::{mma_update, MmaState};
use crate::topopt::{volume_constraint, DesignDomain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimplifiedMaterial {
    pub k_s: f64,
    pub k_min: f64,
    pub p: f64,
    /// Convection coefficient.
    pub h: f64,
    pub t0: f64,
}

impl Default for SimplifiedMaterial {
    fn default() -> Self {
        SimplifiedMaterial {
            k_s: 100.0,
            k_min: 1e-6,
            p: 6.0,
            h: 0.0,
            t0: 0.0,
        }
    }
}

impl SimplifiedMaterial {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_min > 0.0 && self.k_s > self.k_min && self.p >= 1.0 && self.h >= 0.0) {
            return Err(Error::Setup(
                "need k_s > k_min > 0, p >= 1 and h >= 0".into(),
            ));
        }
        if !self.t0.is_finite() || !self.h.is_finite() {
            return Err(Error::Setup("non-finite material parameter".into()));
        }
        Ok(())
    }

    /// Modified SIMP conductivity and its derivative.
    pub fn conductivity(&self, g: f64) -> (f64, f64) {
        let d = self.k_s - self.k_min;
        (self.k_min + d * g.powf(self.p), d * self.p * g.powf(self.p - 1.0))
    }
}

#[derive(Debug, Clone)]
pub struct SimplifiedModel {
    pub mesh: Mesh,
    pub em: ElementMatrices,
    pub bcs: BoundaryConditions,
    pub mat: SimplifiedMaterial,
    pub source: Vec<f64>,
    pattern: std::sync::Arc<SparsePattern>,
    fixed: Vec<bool>,
    fixed_values: Vec<f64>,
    /// Number of elements around each node.
    valence: Vec<f64>,
}

impl SimplifiedModel {
    pub fn new(
        mesh: Mesh,
        bcs: BoundaryConditions,
        mat: SimplifiedMaterial,
        source: Vec<f64>,
    ) -> Result<Self> {
        mat.validate()?;
        if source.len() != mesh.n_elems() || bcs.dirichlet_t.len() != mesh.n_nodes() {
            return Err(Error::Setup("source or boundary data sized for another mesh".into()));
        }
        let fixed: Vec<bool> = bcs.dirichlet_t.iter().map(Option::is_some).collect();
        let fixed_values = bcs.dirichlet_t.iter().map(|v| v.unwrap_or(0.0)).collect();
        let mut valence = vec![0.0; mesh.n_nodes()];
        for nodes in &mesh.elem_nodes {
            for &n in nodes {
                valence[n] += 1.0;
            }
        }
        Ok(SimplifiedModel {
            em: ElementMatrices::for_mesh(&mesh),
            pattern: std::sync::Arc::new(SparsePattern::for_mesh(&mesh, 1)),
            mesh,
            bcs,
            mat,
            source,
            fixed,
            fixed_values,
            valence,
        })
    }

    pub fn with_material(&self, mat: SimplifiedMaterial) -> Result<Self> {
        mat.validate()?;
        Ok(SimplifiedModel {
            mat,
            ..self.clone()
        })
    }

    fn check(&self, design: &[f64]) -> Result<()> {
        if design.len() != self.mesh.n_elems() {
            return Err(Error::Assembly(format!(
                "design has {} entries, mesh has {} elements",
                design.len(),
                self.mesh.n_elems()
            )));
        }
        if design.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::Assembly("physical density outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Volume-weighted average of the element densities around each node.
    pub fn nodal_projection(&self, design: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.mesh.n_nodes()];
        for (e, nodes) in self.mesh.elem_nodes.iter().enumerate() {
            for &n in nodes {
                g[n] += design[e];
            }
        }
        for (v, c) in g.iter_mut().zip(&self.valence) {
            *v /= c;
        }
        g
    }

    fn gradient_norms(&self, gn: &[f64; 4]) -> [([f64; 2], f64); 4] {
        let mut out = [([0.0; 2], 0.0); 4];
        for (q, qp) in self.em.qp.iter().enumerate() {
            let mut g = [0.0; 2];
            for a in 0..4 {
                g[0] += qp.grad[a][0] * gn[a];
                g[1] += qp.grad[a][1] * gn[a];
            }
            out[q] = (g, (g[0] * g[0] + g[1] * g[1]).sqrt());
        }
        out
    }

    fn nodal(&self, e: usize, field: &[f64]) -> [f64; 4] {
        let n = self.mesh.elem_nodes[e];
        [field[n[0]], field[n[1]], field[n[2]], field[n[3]]]
    }

    /// Element stiffness including the interface sink.
    fn element_matrix(&self, e: usize, design: &[f64], gproj: &[f64]) -> [[f64; 4]; 4] {
        let (k, _) = self.mat.conductivity(design[e]);
        let grads = self.gradient_norms(&self.nodal(e, gproj));
        let mut m = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] = k * self.em.lap[i][j];
            }
        }
        if self.mat.h > 0.0 {
            for (qp, (_, s)) in self.em.qp.iter().zip(grads) {
                let c = self.mat.h * s * qp.wdet;
                for i in 0..4 {
                    for j in 0..4 {
                        m[i][j] += c * qp.n[i] * qp.n[j];
                    }
                }
            }
        }
        m
    }

    /// Unconstrained system matrix and load; the sink reference `T0` sits in the load.
    fn assemble_raw(&self, design: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let gproj = self.nodal_projection(design);
        let mut values = self.pattern.zeros();
        let mut f = self.bcs.heat_load.clone();
        let mut local = [0.0; 16];
        for e in 0..self.mesh.n_elems() {
            let m = self.element_matrix(e, design, &gproj);
            for i in 0..4 {
                local[i * 4..i * 4 + 4].copy_from_slice(&m[i]);
            }
            self.pattern.add_element(&mut values, e, &local);
            let nodes = self.mesh.elem_nodes[e];
            let sink = if self.mat.t0 != 0.0 && self.mat.h > 0.0 {
                let mut km = m;
                let (k, _) = self.mat.conductivity(design[e]);
                for i in 0..4 {
                    for j in 0..4 {
                        km[i][j] -= k * self.em.lap[i][j];
                    }
                }
                matvec(&km, &[self.mat.t0; 4])
            } else {
                [0.0; 4]
            };
            for a in 0..4 {
                f[nodes[a]] += self.source[e] * self.em.int_n[a] + sink[a];
            }
        }
        (values, f)
    }

    /// Residual `K T - f` without Dirichlet elimination.
    pub fn residual_full(&self, t: &[f64], design: &[f64]) -> Result<Vec<f64>> {
        self.check(design)?;
        let (values, f) = self.assemble_raw(design);
        let kt = self.pattern.matvec(&values, t);
        Ok(kt.iter().zip(&f).map(|(a, b)| a - b).collect())
    }

    /// Residual with constrained rows zeroed, and the Dirichlet-eliminated tangent.
    pub fn assemble_simplified(&self, t: &[f64], design: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut r = self.residual_full(t, design)?;
        for (v, &fx) in r.iter_mut().zip(&self.fixed) {
            if fx {
                *v = 0.0;
            }
        }
        let (mut values, _) = self.assemble_raw(design);
        self.pattern.apply_dirichlet(&mut values, &self.fixed);
        Ok((r, values))
    }

    fn factorize(&self, design: &[f64]) -> Result<(LuFactor, Vec<f64>)> {
        let (mut values, f) = self.assemble_raw(design);
        let td: Vec<f64> = self
            .fixed
            .iter()
            .zip(&self.fixed_values)
            .map(|(&fx, &v)| if fx { v } else { 0.0 })
            .collect();
        let lifted = self.pattern.matvec(&values, &td);
        let rhs: Vec<f64> = (0..f.len())
            .map(|i| if self.fixed[i] { td[i] } else { f[i] - lifted[i] })
            .collect();
        self.pattern.apply_dirichlet(&mut values, &self.fixed);
        Ok((self.pattern.factorize(&values)?, rhs))
    }

    pub fn solve(&self, design: &[f64]) -> Result<Vec<f64>> {
        self.check(design)?;
        let (lu, mut t) = self.factorize(design)?;
        lu.solve(&mut t)?;
        Ok(t)
    }

    pub fn compliance(&self, t: &[f64]) -> f64 {
        dot(&self.bcs.heat_load, t)
    }

    /// `int |grad g| dOmega`, the interface measure seen by the sink.
    pub fn interface_measure(&self, design: &[f64]) -> f64 {
        let gproj = self.nodal_projection(design);
        (0..self.mesh.n_elems())
            .map(|e| {
                let grads = self.gradient_norms(&self.nodal(e, &gproj));
                self.em.qp.iter().zip(grads).map(|(q, (_, s))| s * q.wdet).sum::<f64>()
            })
            .sum()
    }

    /// Total heat removed by the interface sink.
    pub fn sink_total(&self, t: &[f64], design: &[f64]) -> f64 {
        let gproj = self.nodal_projection(design);
        (0..self.mesh.n_elems())
            .map(|e| {
                let grads = self.gradient_norms(&self.nodal(e, &gproj));
                let te = self.nodal(e, t);
                self.em
                    .qp
                    .iter()
                    .zip(grads)
                    .map(|(q, (_, s))| {
                        let tq: f64 = (0..4).map(|a| q.n[a] * te[a]).sum();
                        self.mat.h * s * (tq - self.mat.t0) * q.wdet
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    /// Compliance and its gradient with respect to every element's physical density.
    pub fn simplified_sensitivities(&self, design: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        self.check(design)?;
        let (lu, mut t) = self.factorize(design)?;
        lu.solve(&mut t)?;
        let psi = self.compliance(&t);
        let mut lam: Vec<f64> = self
            .bcs
            .heat_load
            .iter()
            .zip(&self.fixed)
            .map(|(&f, &fx)| if fx { 0.0 } else { f })
            .collect();
        lu.solve_transpose(&mut lam)?;

        let gproj = self.nodal_projection(design);
        let mut dpsi = vec![0.0; self.mesh.n_elems()];
        let mut dpsi_dnode = vec![0.0; self.mesh.n_nodes()];
        for e in 0..self.mesh.n_elems() {
            let te = self.nodal(e, &t);
            let le = self.nodal(e, &lam);
            let (_, dk) = self.mat.conductivity(design[e]);
            let lt = matvec(&self.em.lap, &te);
            dpsi[e] -= dk * (0..4).map(|a| le[a] * lt[a]).sum::<f64>();
            if self.mat.h == 0.0 {
                continue;
            }
            let grads = self.gradient_norms(&self.nodal(e, &gproj));
            let nodes = self.mesh.elem_nodes[e];
            for (q, (g, s)) in self.em.qp.iter().zip(grads) {
                if s == 0.0 {
                    continue;
                }
                let tq: f64 = (0..4).map(|a| q.n[a] * te[a]).sum();
                let lq: f64 = (0..4).map(|a| q.n[a] * le[a]).sum();
                let c = self.mat.h * q.wdet * lq * (tq - self.mat.t0);
                for a in 0..4 {
                    let ds = (g[0] * q.grad[a][0] + g[1] * q.grad[a][1]) / s;
                    dpsi_dnode[nodes[a]] -= c * ds;
                }
            }
        }
        for (e, nodes) in self.mesh.elem_nodes.iter().enumerate() {
            for &n in nodes {
                dpsi[e] += dpsi_dnode[n] / self.valence[n];
            }
        }
        Ok((psi, dpsi, t))
    }
}

/// Data of one interface edge for the average convection coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceEdge {
    pub length: f64,
    /// Temperature at the two end points.
    pub t: [f64; 2],
    /// Normal heat flux at the two end points.
    pub q: [f64; 2],
}

/// `(1/A) int q_n / T ds` with two-point Gauss quadrature per edge. Edges where
/// `T` vanishes at a quadrature point are skipped.
pub fn avg_convection_coefficient(edges: &[InterfaceEdge]) -> Result<f64> {
    let mut area = 0.0;
    let mut total = 0.0;
    for (k, e) in edges.iter().enumerate() {
        let mut sum = 0.0;
        let mut ok = true;
        for (s, w) in crate::element::gauss_line_2() {
            let (na, nb) = (0.5 * (1.0 - s), 0.5 * (1.0 + s));
            let t = na * e.t[0] + nb * e.t[1];
            let q = na * e.q[0] + nb * e.q[1];
            if t == 0.0 {
                ok = false;
                break;
            }
            sum += w * 0.5 * e.length * q / t;
        }
        if ok {
            total += sum;
            area += e.length;
        } else {
            log::warn!("interface edge {k} skipped: zero temperature");
        }
    }
    if area <= 0.0 {
        return Err(Error::Setup("interface has zero area".into()));
    }
    Ok(total / area)
}

/// Filter-radius continuation for the simplified model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimplifiedSchedule {
    pub radii: Vec<f64>,
    pub switch_every: usize,
    /// Relative objective change regarded as stalled.
    pub stall_change: f64,
    /// Consecutive stalled iterations that end a stage.
    pub stall_count: usize,
    pub move_limit: f64,
    pub volume_fraction: f64,
    pub max_outer_iter: usize,
}

impl Default for SimplifiedSchedule {
    fn default() -> Self {
        SimplifiedSchedule {
            radii: vec![0.48, 0.36, 0.24, 0.12],
            switch_every: 50,
            stall_change: 1e-3,
            stall_count: 10,
            move_limit: 0.2,
            volume_fraction: 0.5,
            max_outer_iter: 1000,
        }
    }
}

impl SimplifiedSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.radii.is_empty() || self.radii.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("filter radii must be strictly decreasing".into()));
        }
        if !(self.move_limit > 0.0 && self.move_limit <= 1.0) {
            return Err(Error::Config("move_limit must lie in (0, 1]".into()));
        }
        if !(self.volume_fraction > 0.0 && self.volume_fraction <= 1.0) {
            return Err(Error::Config("volume fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimplifiedProblem {
    pub model: SimplifiedModel,
    pub domain: DesignDomain,
    pub schedule: SimplifiedSchedule,
    pub initial_design: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplifiedRecord {
    pub iter: usize,
    pub psi: f64,
    pub constraint: f64,
    pub max_change: f64,
    pub stage: usize,
    pub r_min: f64,
}

#[derive(Debug, Clone)]
pub struct SimplifiedResult {
    pub gamma: Vec<f64>,
    pub gamma_tilde: Vec<f64>,
    pub temperature: Vec<f64>,
    pub psi: f64,
    pub history: Vec<SimplifiedRecord>,
}

/// Optimization loop with the simplified physics and a shrinking filter radius.
pub fn run_simplified_optimization(
    problem: &SimplifiedProblem,
    mut observe: impl FnMut(&SimplifiedRecord),
) -> Result<SimplifiedResult> {
    let sched = &problem.schedule;
    sched.validate()?;
    let dom = &problem.domain;
    let mesh = &problem.model.mesh;
    let filters: Vec<DensityFilter> = sched
        .radii
        .iter()
        .map(|&r| DensityFilter::new(mesh, &dom.elems, r))
        .collect::<Result<_>>()?;
    let n = dom.len();
    let mut x = vec![problem.initial_design; n];
    let mut mma = MmaState::new(n);
    let (mut stage, mut in_stage, mut stalled, mut updates) = (0, 0, 0, 0);
    let mut last_change = 0.0;
    let mut prev_psi: Option<f64> = None;
    let mut psi0 = None;
    let mut history = Vec::new();
    let mut final_pass = false;
    loop {
        let phys = dom.physical(&filters[stage].apply(&x));
        let (psi, dpsi, t) = problem.model.simplified_sensitivities(&phys)?;
        let (g, dg) = volume_constraint(&x, sched.volume_fraction);
        let rec = SimplifiedRecord {
            iter: history.len(),
            psi,
            constraint: g,
            max_change: last_change,
            stage,
            r_min: sched.radii[stage],
        };
        log::info!(
            "it {:4} r {:.3} psi {:.6e} g {:+.3e} change {:.3e}",
            rec.iter,
            rec.r_min,
            psi,
            g,
            last_change
        );
        observe(&rec);
        history.push(rec);
        if final_pass || updates >= sched.max_outer_iter {
            return Ok(SimplifiedResult {
                gamma: x,
                gamma_tilde: phys,
                temperature: t,
                psi,
                history,
            });
        }
        if let Some(p) = prev_psi {
            if (psi - p).abs() / psi.abs().max(f64::MIN_POSITIVE) < sched.stall_change {
                stalled += 1;
            } else {
                stalled = 0;
            }
        }
        prev_psi = Some(psi);
        let scale = *psi0.get_or_insert(psi.abs().max(f64::MIN_POSITIVE));
        let df: Vec<f64> = filters[stage]
            .apply_transpose(&dom.restrict(&dpsi))
            .into_iter()
            .map(|v| v / scale)
            .collect();
        let x_new = mma_update(&mut mma, &x, &df, g, &dg, sched.move_limit)?;
        last_change = x_new
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = x_new;
        updates += 1;
        in_stage += 1;
        if in_stage >= sched.switch_every || stalled >= sched.stall_count {
            if stage + 1 == sched.radii.len() {
                final_pass = true;
            } else {
                stage += 1;
                in_stage = 0;
                stalled = 0;
                prev_psi = None;
            }
        }
    }
}
