//! Thermal compliance and its adjoint sensitivities with respect to the physical
//! (filtered) density of every element.

use crate::error::{Error, Result};
use crate::linalg::{dot, LuFactor};
use crate::physics::{ReducedModel, State, TauMode};

/// `psi = f_t^T t`, the heat-flux-weighted temperature integral over heated edges.
pub fn objective_thermal_compliance(model: &ReducedModel, state: &State) -> Result<f64> {
    let rhs = compliance_gradient(model)?;
    Ok(dot(&rhs, &state.values))
}

/// `d psi / d s = (0; f_t)`.
pub fn compliance_gradient(model: &ReducedModel) -> Result<Vec<f64>> {
    if !model.bcs.has_heat_flux {
        return Err(Error::Setup("thermal compliance needs a heat-flux boundary".into()));
    }
    let nn = model.n_nodes();
    let mut g = vec![0.0; 2 * nn];
    for n in 0..nn {
        g[nn + n] = model.heat_scale * model.bcs.heat_load[n];
    }
    Ok(g)
}

/// Solves `J^T lambda = d psi / d s` with the Dirichlet-eliminated tangent. Entries
/// on constrained dofs come out zero.
pub fn solve_adjoint(
    model: &ReducedModel,
    lu: &LuFactor,
    dpsi_ds: &[f64],
) -> Result<Vec<f64>> {
    let mut rhs = dpsi_ds.to_vec();
    for (v, &f) in rhs.iter_mut().zip(model.fixed()) {
        if f {
            *v = 0.0;
        }
    }
    lu.solve_transpose(&mut rhs)?;
    Ok(rhs)
}

/// `d psi / d gamma_e = -lambda_e^T dR_e/d gamma_e` for every element.
pub fn physical_sensitivities(
    model: &ReducedModel,
    state: &State,
    design: &[f64],
    adjoint: &[f64],
    tau: TauMode<'_>,
) -> Result<Vec<f64>> {
    model.check_design(design)?;
    if adjoint.len() != model.n_dofs() || state.values.len() != model.n_dofs() {
        return Err(Error::Assembly("adjoint or state length mismatch".into()));
    }
    let fixed = model.fixed();
    Ok((0..model.mesh.n_elems())
        .map(|e| {
            let d = model.element_design_derivative(e, &state.values, design[e], tau);
            let dofs = model.element_dofs(e);
            -(0..8)
                .filter(|&k| !fixed[dofs[k]])
                .map(|k| adjoint[dofs[k]] * d[k])
                .sum::<f64>()
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct ComplianceSensitivity {
    pub psi: f64,
    pub adjoint: Vec<f64>,
    /// Derivative with respect to the physical density of every mesh element.
    pub dpsi_dgamma: Vec<f64>,
}

/// Objective, adjoint and physical-density gradient at a converged state.
/// The stabilization parameter is evaluated at `state` and held fixed.
pub fn compliance_sensitivity(
    model: &ReducedModel,
    state: &State,
    design: &[f64],
) -> Result<ComplianceSensitivity> {
    let taus = model.taus(&state.values, design);
    let tau = TauMode::Frozen(&taus);
    let lu = model.factorize_tangent(&state.values, design, tau)?;
    let g = compliance_gradient(model)?;
    let psi = dot(&g, &state.values);
    let adjoint = solve_adjoint(model, &lu, &g)?;
    let dpsi_dgamma = physical_sensitivities(model, state, design, &adjoint, tau)?;
    if dpsi_dgamma.iter().any(|v| !v.is_finite()) {
        return Err(Error::Assembly("non-finite sensitivities".into()));
    }
    Ok(ComplianceSensitivity {
        psi,
        adjoint,
        dpsi_dgamma,
    })
}
