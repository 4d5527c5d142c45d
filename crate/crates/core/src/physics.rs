//! Reduced-order natural convection model.
//!
//! The flow is not solved for. The velocity is recovered from the modified pressure
//! `P` and the temperature `T` through
//!
//! ```text
//! u = -(1/mubar) (grad P + rho0 beta (T - T0) g)
//! ```
//!
//! and inserting it into incompressibility gives a variable-coefficient Poisson
//! problem for `P`. Temperature follows a convection-diffusion equation stabilized
//! with SUPG. Both fields use bilinear elements; the convecting velocity is
//! evaluated at element centroids. The unknown vector is packed as `s = {p; t}`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::boundary::BoundaryConditions;
use crate::element::{matvec, ElementMatrices, Mat4};
use crate::error::{Error, Result};
use crate::linalg::{LuFactor, SparsePattern};
use crate::mesh::Mesh;

/// Material parameters of the reduced-order model. Conductivity and the
/// reciprocal resistance `1/mubar` are interpolated between the fluid (`_f`,
/// design value 0) and solid (`_s`, design value 1) phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialSet {
    pub rho0: f64,
    pub cp: f64,
    pub beta: f64,
    pub k_f: f64,
    pub k_s: f64,
    pub inv_mubar_f: f64,
    pub inv_mubar_s: f64,
    pub t0: f64,
    pub gravity: [f64; 2],
    /// Volumetric heat source in heated elements.
    pub q0: f64,
    pub p_k: f64,
    pub p_mubar: f64,
}

impl Default for MaterialSet {
    fn default() -> Self {
        MaterialSet {
            rho0: 1.0,
            cp: 1.0,
            beta: 1.0,
            k_f: 1.0,
            k_s: 100.0,
            inv_mubar_f: 0.09,
            inv_mubar_s: 1e-7,
            t0: 0.0,
            gravity: [0.0, -1.0],
            q0: 0.0,
            p_k: 2.0,
            p_mubar: 8.0,
        }
    }
}

impl MaterialSet {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.rho0,
            self.cp,
            self.beta,
            self.k_f,
            self.k_s,
            self.inv_mubar_f,
            self.inv_mubar_s,
            self.t0,
            self.gravity[0],
            self.gravity[1],
            self.q0,
            self.p_k,
            self.p_mubar,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Setup("material parameters must be finite".into()));
        }
        if !(self.k_f > 0.0 && self.k_s > 0.0) {
            return Err(Error::Setup("conductivities must be positive".into()));
        }
        if !(self.inv_mubar_s >= 0.0 && self.inv_mubar_f >= self.inv_mubar_s) {
            return Err(Error::Setup(
                "need inv_mubar_f >= inv_mubar_s >= 0".into(),
            ));
        }
        if !(self.p_k >= 1.0 && self.p_mubar >= 1.0) {
            return Err(Error::Setup("penalization exponents must be >= 1".into()));
        }
        if !(self.rho0 > 0.0 && self.cp > 0.0) {
            return Err(Error::Setup("rho0 and cp must be positive".into()));
        }
        Ok(())
    }

    /// `1/mubar` and its derivative with respect to the physical density.
    #[inline]
    pub fn inv_mubar(&self, g: f64) -> (f64, f64) {
        let d = self.inv_mubar_f - self.inv_mubar_s;
        let w = (1.0 - g).powf(self.p_mubar);
        let dw = if self.p_mubar == 1.0 {
            -1.0
        } else {
            -self.p_mubar * (1.0 - g).powf(self.p_mubar - 1.0)
        };
        (self.inv_mubar_s + w * d, dw * d)
    }

    /// Conductivity and its derivative with respect to the physical density.
    #[inline]
    pub fn conductivity(&self, g: f64) -> (f64, f64) {
        let d = self.k_s - self.k_f;
        let w = g.powf(self.p_k);
        let dw = if self.p_k == 1.0 {
            1.0
        } else {
            self.p_k * g.powf(self.p_k - 1.0)
        };
        (self.k_f + w * d, dw * d)
    }

    pub fn with_penalization(&self, p_k: f64, p_mubar: f64) -> Self {
        MaterialSet {
            p_k,
            p_mubar,
            ..self.clone()
        }
    }
}

fn check_density(g: f64) -> Result<()> {
    if (0.0..=1.0).contains(&g) {
        Ok(())
    } else {
        Err(Error::Assembly(format!("physical density {g} outside [0, 1]")))
    }
}

/// `1/mubar(g) = 1/mubar_s + (1 - g)^p (1/mubar_f - 1/mubar_s)`.
pub fn interp_inv_mubar(g: f64, mats: &MaterialSet) -> Result<f64> {
    check_density(g)?;
    Ok(mats.inv_mubar(g).0)
}

/// `k(g) = k_f + g^p (k_s - k_f)`.
pub fn interp_k(g: f64, mats: &MaterialSet) -> Result<f64> {
    check_density(g)?;
    Ok(mats.conductivity(g).0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionlessGroups {
    pub gr: f64,
    pub ra: f64,
    pub pr: f64,
    pub delta_t: f64,
    pub height: f64,
}

/// Grashof, Rayleigh and Prandtl numbers for a reference viscosity `mu`.
pub fn dimensionless_groups(
    mats: &MaterialSet,
    height: f64,
    delta_t: f64,
    mu: f64,
) -> DimensionlessGroups {
    let g = (mats.gravity[0].powi(2) + mats.gravity[1].powi(2)).sqrt();
    let gr = g * mats.beta * delta_t * height.powi(3) * mats.rho0.powi(2) / (mu * mu);
    let pr = mats.cp * mu / mats.k_f;
    DimensionlessGroups {
        gr,
        ra: gr * pr,
        pr,
        delta_t,
        height,
    }
}

/// Dimensionless groups with the unit reference viscosity used for reporting.
pub fn grashof(mats: &MaterialSet, height: f64, delta_t: f64) -> DimensionlessGroups {
    dimensionless_groups(mats, height, delta_t, 1.0)
}

/// Expansion coefficient giving `Gr = beta H^3` when every other parameter is one.
pub fn beta_for_grashof(gr: f64, height: f64) -> f64 {
    gr / height.powi(3)
}

/// Centroid velocity of one element.
pub fn recover_velocity(
    em: &ElementMatrices,
    p: &[f64; 4],
    t: &[f64; 4],
    gamma: f64,
    mats: &MaterialSet,
) -> [f64; 2] {
    let (a, _) = mats.inv_mubar(gamma);
    let v = driving_term(em, p, t, mats);
    [a * v[0], a * v[1]]
}

/// `-(grad P + rho0 beta (T - T0) g)` at the centroid.
#[inline]
fn driving_term(em: &ElementMatrices, p: &[f64; 4], t: &[f64; 4], mats: &MaterialSet) -> [f64; 2] {
    let mut gp = [0.0; 2];
    for a in 0..4 {
        gp[0] += em.centroid_grad[a][0] * p[a];
        gp[1] += em.centroid_grad[a][1] * p[a];
    }
    let tc = 0.25 * (t[0] + t[1] + t[2] + t[3]);
    let b = mats.rho0 * mats.beta * (tc - mats.t0);
    [-(gp[0] + b * mats.gravity[0]), -(gp[1] + b * mats.gravity[1])]
}

/// SUPG parameter `[(2|u|/h)^2 + 9 (4 nu / h^2)^2]^(-1/2)`.
pub fn compute_tau(u: [f64; 2], diffusivity: f64, h: f64) -> f64 {
    let speed = (u[0] * u[0] + u[1] * u[1]).sqrt();
    let adv = 2.0 * speed / h;
    let dif = 4.0 * diffusivity / (h * h);
    1.0 / (adv * adv + 9.0 * dif * dif).sqrt()
}

/// Which diffusivity enters the stabilization parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TauDiffusivity {
    /// Local thermal diffusivity `k(g) / (rho0 cp)`.
    #[default]
    Thermal,
    /// A fixed kinematic viscosity.
    Kinematic { nu: f64 },
}

/// Whether the stabilization parameter is recomputed from the state or held fixed
/// per element. Its dependence on the state is never differentiated.
#[derive(Debug, Clone, Copy)]
pub enum TauMode<'a> {
    Live,
    Frozen(&'a [f64]),
}

/// Packed nodal solution `s = {p; t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub values: Vec<f64>,
}

impl State {
    pub fn zeros(n_nodes: usize) -> Self {
        State {
            values: vec![0.0; 2 * n_nodes],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len() / 2
    }

    pub fn p(&self) -> &[f64] {
        &self.values[..self.n_nodes()]
    }

    pub fn t(&self) -> &[f64] {
        &self.values[self.n_nodes()..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatBalance {
    pub input: f64,
    pub output: f64,
}

impl HeatBalance {
    pub fn relative_imbalance(&self) -> f64 {
        (self.input - self.output).abs() / self.input.abs()
    }
}

#[derive(Default)]
struct ElementOut {
    res: [f64; 8],
    jac: Option<[[f64; 8]; 8]>,
    dgamma: Option<[f64; 8]>,
}

/// Reduced-order model on a fixed mesh with fixed boundary conditions.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub mesh: Mesh,
    pub em: ElementMatrices,
    pub bcs: BoundaryConditions,
    pub mats: MaterialSet,
    /// Volumetric heat source per element.
    pub source: Vec<f64>,
    pub diffusivity: TauDiffusivity,
    /// Multiplier on heat-flux and source loads (used when ramping).
    pub heat_scale: f64,
    fixed: Vec<bool>,
    fixed_values: Vec<f64>,
    pattern: Arc<SparsePattern>,
}

/// Dirichlet mask and values. Without any flow (`1/mubar` zero in both phases)
/// the pressure equations vanish, so every pressure dof is pinned.
fn constraints(bcs: &BoundaryConditions, mats: &MaterialSet) -> (Vec<bool>, Vec<f64>) {
    let nn = bcs.dirichlet_p.len();
    let no_flow = mats.inv_mubar_f == 0.0;
    let gauge = bcs.dirichlet_p.iter().flatten().next().copied().unwrap_or(0.0);
    let mut fixed = vec![false; 2 * nn];
    let mut fixed_values = vec![0.0; 2 * nn];
    for n in 0..nn {
        if let Some(v) = bcs.dirichlet_p[n] {
            fixed[n] = true;
            fixed_values[n] = v;
        } else if no_flow {
            fixed[n] = true;
            fixed_values[n] = gauge;
        }
        if let Some(v) = bcs.dirichlet_t[n] {
            fixed[nn + n] = true;
            fixed_values[nn + n] = v;
        }
    }
    (fixed, fixed_values)
}

impl ReducedModel {
    pub fn new(
        mesh: Mesh,
        bcs: BoundaryConditions,
        mats: MaterialSet,
        source: Vec<f64>,
    ) -> Result<Self> {
        mats.validate()?;
        let nn = mesh.n_nodes();
        if source.len() != mesh.n_elems() {
            return Err(Error::Setup("source length must equal element count".into()));
        }
        if bcs.dirichlet_p.len() != nn {
            return Err(Error::Setup("boundary conditions built for another mesh".into()));
        }
        let (fixed, fixed_values) = constraints(&bcs, &mats);
        let em = ElementMatrices::for_mesh(&mesh);
        let pattern = Arc::new(SparsePattern::for_mesh(&mesh, 2));
        Ok(ReducedModel {
            mesh,
            em,
            bcs,
            mats,
            source,
            diffusivity: TauDiffusivity::Thermal,
            heat_scale: 1.0,
            fixed,
            fixed_values,
            pattern,
        })
    }

    /// Same mesh and boundary conditions with other materials; shares the sparse pattern.
    pub fn with_materials(&self, mats: MaterialSet) -> Result<Self> {
        mats.validate()?;
        let (fixed, fixed_values) = constraints(&self.bcs, &mats);
        Ok(ReducedModel {
            mats,
            fixed,
            fixed_values,
            ..self.clone()
        })
    }

    pub fn with_heat_scale(&self, scale: f64) -> Self {
        ReducedModel {
            heat_scale: scale,
            ..self.clone()
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.n_nodes()
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.mesh.n_nodes()
    }

    pub fn fixed(&self) -> &[bool] {
        &self.fixed
    }

    pub fn pattern(&self) -> &SparsePattern {
        &self.pattern
    }

    /// Zero state with Dirichlet values imposed.
    pub fn initial_state(&self) -> State {
        let mut s = State::zeros(self.n_nodes());
        self.impose_dirichlet(&mut s.values);
        s
    }

    pub fn impose_dirichlet(&self, s: &mut [f64]) {
        for (i, v) in s.iter_mut().enumerate() {
            if self.fixed[i] {
                *v = self.fixed_values[i];
            }
        }
    }

    pub fn check_design(&self, design: &[f64]) -> Result<()> {
        if design.len() != self.mesh.n_elems() {
            return Err(Error::Assembly(format!(
                "design has {} entries, mesh has {} elements",
                design.len(),
                self.mesh.n_elems()
            )));
        }
        design.iter().try_for_each(|&g| check_density(g))
    }

    fn check_state(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.n_dofs() {
            return Err(Error::Assembly(format!(
                "state has {} entries, expected {}",
                s.len(),
                self.n_dofs()
            )));
        }
        Ok(())
    }

    fn gather(&self, e: usize, s: &[f64]) -> ([f64; 4], [f64; 4]) {
        let nn = self.n_nodes();
        let nodes = self.mesh.elem_nodes[e];
        let mut p = [0.0; 4];
        let mut t = [0.0; 4];
        for a in 0..4 {
            p[a] = s[nodes[a]];
            t[a] = s[nn + nodes[a]];
        }
        (p, t)
    }

    fn element_diffusivity(&self, k: f64) -> f64 {
        match self.diffusivity {
            TauDiffusivity::Thermal => k / (self.mats.rho0 * self.mats.cp),
            TauDiffusivity::Kinematic { nu } => nu,
        }
    }

    /// Stabilization parameter of every element at the given state.
    pub fn taus(&self, s: &[f64], design: &[f64]) -> Vec<f64> {
        let h = self.mesh.h();
        (0..self.mesh.n_elems())
            .map(|e| {
                let (p, t) = self.gather(e, s);
                let u = recover_velocity(&self.em, &p, &t, design[e], &self.mats);
                let (k, _) = self.mats.conductivity(design[e]);
                compute_tau(u, self.element_diffusivity(k), h)
            })
            .collect()
    }

    /// Centroid velocity of every element.
    pub fn velocities(&self, s: &[f64], design: &[f64]) -> Vec<[f64; 2]> {
        (0..self.mesh.n_elems())
            .map(|e| {
                let (p, t) = self.gather(e, s);
                recover_velocity(&self.em, &p, &t, design[e], &self.mats)
            })
            .collect()
    }

    fn element(
        &self,
        e: usize,
        s: &[f64],
        gamma: f64,
        tau: TauMode<'_>,
        want_jac: bool,
        want_dgamma: bool,
    ) -> ElementOut {
        let m = &self.mats;
        let em = &self.em;
        let (p, t) = self.gather(e, s);
        let (a, da) = m.inv_mubar(gamma);
        let (k, dk) = m.conductivity(gamma);
        let tau = match tau {
            TauMode::Live => {
                let v = driving_term(em, &p, &t, m);
                compute_tau([a * v[0], a * v[1]], self.element_diffusivity(k), self.mesh.h())
            }
            TauMode::Frozen(taus) => taus[e],
        };
        let rc = m.rho0 * m.cp;
        let rb = m.rho0 * m.beta;
        let q = self.source[e] * self.heat_scale;

        // Pressure rows: a [lap P + rho0 beta Bg (T - T0)], Bg_ij = int (g . grad Ni) Nj.
        let mut bg: Mat4 = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                bg[i][j] = m.gravity[0] * em.cx[j][i] + m.gravity[1] * em.cy[j][i];
            }
        }
        let lp = matvec(&em.lap, &p);
        let tt = [t[0] - m.t0, t[1] - m.t0, t[2] - m.t0, t[3] - m.t0];
        let bt = matvec(&bg, &tt);
        let mut out = ElementOut::default();
        for i in 0..4 {
            out.res[i] = a * (lp[i] + rb * bt[i]);
        }

        // Temperature rows: int W_i (rho0 cp u . grad T - Q) + k lap T with the
        // SUPG test function W_i = N_i + tau u . grad N_i. The velocity is taken at
        // each Gauss point, the same field the pressure rows integrate.
        let lt = matvec(&em.lap, &t);
        let mut dr_du = [[[0.0; 2]; 4]; 4];
        let mut us = [[0.0; 2]; 4];
        let mut vs = [[0.0; 2]; 4];
        for (qi, qp) in em.qp.iter().enumerate() {
            let (n, g, w) = (&qp.n, &qp.grad, qp.wdet);
            let mut gp = [0.0; 2];
            let mut gt = [0.0; 2];
            let mut tq = 0.0;
            for a in 0..4 {
                gp[0] += g[a][0] * p[a];
                gp[1] += g[a][1] * p[a];
                gt[0] += g[a][0] * t[a];
                gt[1] += g[a][1] * t[a];
                tq += n[a] * t[a];
            }
            let b = rb * (tq - m.t0);
            let v = [-(gp[0] + b * m.gravity[0]), -(gp[1] + b * m.gravity[1])];
            let u = [a * v[0], a * v[1]];
            let r = rc * (u[0] * gt[0] + u[1] * gt[1]) - q;
            for i in 0..4 {
                let wi = n[i] + tau * (u[0] * g[i][0] + u[1] * g[i][1]);
                out.res[4 + i] += w * wi * r;
                for d in 0..2 {
                    dr_du[qi][i][d] = w * (tau * g[i][d] * r + wi * rc * gt[d]);
                }
            }
            us[qi] = u;
            vs[qi] = v;
        }
        for i in 0..4 {
            out.res[4 + i] += k * lt[i];
        }

        if want_jac {
            let mut jac = [[0.0; 8]; 8];
            for i in 0..4 {
                for j in 0..4 {
                    jac[i][j] = a * em.lap[i][j];
                    jac[i][4 + j] = a * rb * bg[i][j];
                    jac[4 + i][4 + j] = k * em.lap[i][j];
                }
            }
            for (qi, qp) in em.qp.iter().enumerate() {
                let (n, g, w) = (&qp.n, &qp.grad, qp.wdet);
                let u = us[qi];
                for i in 0..4 {
                    let wi = n[i] + tau * (u[0] * g[i][0] + u[1] * g[i][1]);
                    let du = dr_du[qi][i];
                    for j in 0..4 {
                        let ugj = u[0] * g[j][0] + u[1] * g[j][1];
                        jac[4 + i][j] -= a * (du[0] * g[j][0] + du[1] * g[j][1]);
                        jac[4 + i][4 + j] += w * wi * rc * ugj
                            - a * rb * n[j] * (du[0] * m.gravity[0] + du[1] * m.gravity[1]);
                    }
                }
            }
            out.jac = Some(jac);
        }

        if want_dgamma {
            let mut d = [0.0; 8];
            for i in 0..4 {
                d[i] = da * (lp[i] + rb * bt[i]);
                d[4 + i] = dk * lt[i];
                for qi in 0..em.qp.len() {
                    let du = dr_du[qi][i];
                    d[4 + i] += da * (du[0] * vs[qi][0] + du[1] * vs[qi][1]);
                }
            }
            out.dgamma = Some(d);
        }
        out
    }

    fn scatter(&self, e: usize, local: &[f64; 8], global: &mut [f64]) {
        let nn = self.n_nodes();
        for (a, &n) in self.mesh.elem_nodes[e].iter().enumerate() {
            global[n] += local[a];
            global[nn + n] += local[4 + a];
        }
    }

    /// Residual without Dirichlet elimination; rows of constrained dofs hold the
    /// boundary reactions.
    pub fn residual_full(&self, s: &[f64], design: &[f64], tau: TauMode<'_>) -> Result<Vec<f64>> {
        self.check_state(s)?;
        self.check_design(design)?;
        let nn = self.n_nodes();
        let mut r = vec![0.0; self.n_dofs()];
        for e in 0..self.mesh.n_elems() {
            let out = self.element(e, s, design[e], tau, false, false);
            self.scatter(e, &out.res, &mut r);
        }
        for n in 0..nn {
            r[n] += self.bcs.flow_load[n];
            r[nn + n] -= self.heat_scale * self.bcs.heat_load[n];
        }
        Ok(r)
    }

    /// Residual with the rows of constrained dofs set to zero.
    pub fn residual(&self, s: &[f64], design: &[f64], tau: TauMode<'_>) -> Result<Vec<f64>> {
        let mut r = self.residual_full(s, design, tau)?;
        for (ri, &f) in r.iter_mut().zip(&self.fixed) {
            if f {
                *ri = 0.0;
            }
        }
        Ok(r)
    }

    /// Tangent matrix values in the model's sparse pattern. With `eliminate`,
    /// constrained rows and columns are replaced by identity.
    pub fn tangent(
        &self,
        s: &[f64],
        design: &[f64],
        tau: TauMode<'_>,
        eliminate: bool,
    ) -> Result<Vec<f64>> {
        self.check_state(s)?;
        self.check_design(design)?;
        let mut values = self.pattern.zeros();
        // Pattern rows/cols per element are ordered (p0..p3, t0..t3).
        let mut local = [0.0; 64];
        for e in 0..self.mesh.n_elems() {
            let out = self.element(e, s, design[e], tau, true, false);
            let jac = out.jac.expect("requested");
            for i in 0..8 {
                local[i * 8..(i + 1) * 8].copy_from_slice(&jac[i]);
            }
            self.pattern.add_element(&mut values, e, &local);
        }
        if eliminate {
            self.pattern.apply_dirichlet(&mut values, &self.fixed);
        }
        Ok(values)
    }

    pub fn factorize_tangent(&self, s: &[f64], design: &[f64], tau: TauMode<'_>) -> Result<LuFactor> {
        let values = self.tangent(s, design, tau, true)?;
        self.pattern.factorize(&values)
    }

    /// Derivative of the element residual with respect to that element's physical
    /// density, local ordering `(p0..p3, t0..t3)`.
    pub fn element_design_derivative(
        &self,
        e: usize,
        s: &[f64],
        gamma: f64,
        tau: TauMode<'_>,
    ) -> [f64; 8] {
        self.element(e, s, gamma, tau, false, true)
            .dgamma
            .expect("requested")
    }

    /// Global dof indices of an element in local order.
    pub fn element_dofs(&self, e: usize) -> [usize; 8] {
        let nn = self.n_nodes();
        let n = self.mesh.elem_nodes[e];
        [n[0], n[1], n[2], n[3], nn + n[0], nn + n[1], nn + n[2], nn + n[3]]
    }

    /// Heat entering through flux boundaries and sources versus heat leaving
    /// through Dirichlet temperature boundaries (from the consistent reactions).
    pub fn heat_balance(&self, s: &[f64], design: &[f64]) -> Result<HeatBalance> {
        let r = self.residual_full(s, design, TauMode::Live)?;
        let nn = self.n_nodes();
        let output: f64 = (0..nn)
            .filter(|&n| self.fixed[nn + n])
            .map(|n| -r[nn + n])
            .sum();
        let input = self.heat_scale
            * (self.bcs.heat_input() + self.source.iter().sum::<f64>() * self.em.area);
        Ok(HeatBalance { input, output })
    }

    /// Norm of the residual at the zero state, the scale for relative convergence.
    pub fn reference_residual_norm(&self, design: &[f64]) -> Result<f64> {
        let s0 = self.initial_state();
        let r = self.residual(&s0.values, design, TauMode::Live)?;
        Ok(crate::linalg::norm2(&r))
    }
}
