//! Newton solver behaviour on the coupled model.

mod common;

use common::*;
use potflow::mesh::Mesh;
use potflow::newton::{scaled_model, solve_model, NewtonConfig, Ramp, RampTarget};
use potflow::physics::{MaterialSet, ReducedModel};

fn conduction_model() -> ReducedModel {
    let mesh = Mesh::structured(6, 6, 1.0, 1.0).unwrap();
    let bcs = small_bcs(&mesh, 0.0);
    let mats = MaterialSet {
        beta: 0.0,
        ..MaterialSet::default()
    };
    ReducedModel::new(mesh, bcs, mats, vec![0.0; 36]).unwrap()
}

#[test]
fn linear_problem_takes_one_iteration() {
    let model = conduction_model();
    let design = random_design(36, 0.0, 1.0, 1);
    let (_, report) = solve_model(&model, &design, None, &NewtonConfig::default()).unwrap();
    assert!(report.converged);
    assert_eq!(report.iterations, 1);
    assert_eq!(report.n_dofs, 2 * 49);
}

#[test]
fn warm_start_from_converged_state_needs_no_iterations() {
    let model = small_model(10, 6400.0, 2.0, 8.0);
    let design = random_design(100, 0.0, 1.0, 2);
    let (state, first) = solve_model(&model, &design, None, &NewtonConfig::default()).unwrap();
    assert!(first.iterations >= 2);
    let (again, report) = solve_model(&model, &design, Some(&state), &NewtonConfig::default()).unwrap();
    assert_eq!(report.iterations, 0);
    assert_eq!(again, state);
}

#[test]
fn residual_history_meets_tolerance() {
    let model = small_model(10, 6400.0, 2.0, 8.0);
    let design = random_design(100, 0.0, 1.0, 3);
    let cfg = NewtonConfig::default();
    let (_, report) = solve_model(&model, &design, None, &cfg).unwrap();
    assert_eq!(report.residual_history[0], 1.0);
    assert!(*report.residual_history.last().unwrap() <= cfg.rel_tol);
    assert_eq!(report.damping_history.len(), report.iterations);
    assert!(report.damping_history.iter().all(|l| (0.05..=1.0).contains(l)));
}

#[test]
fn heat_flux_ramp_is_linear_in_conduction() {
    let model = conduction_model();
    let design = random_design(36, 0.0, 1.0, 4);
    let cfg = NewtonConfig::default();
    let (full, _) = solve_model(&model, &design, None, &cfg).unwrap();
    let half_model = scaled_model(&model, RampTarget::HeatFlux, 0.5).unwrap();
    let (half, _) = solve_model(&half_model, &design, None, &cfg).unwrap();
    for (a, b) in half.t().iter().zip(full.t()) {
        assert!((a - 0.5 * b).abs() < 1e-12 * b.abs().max(1.0));
    }
    let ramped = NewtonConfig {
        ramp: Some(Ramp {
            target: RampTarget::HeatFlux,
            stages: vec![0.25, 0.5, 1.0],
        }),
        ..cfg
    };
    let (r, report) = solve_model(&model, &design, None, &ramped).unwrap();
    assert_eq!(report.ramp_stages, vec![0.25, 0.5, 1.0]);
    for (a, b) in r.t().iter().zip(full.t()) {
        assert!((a - b).abs() < 1e-10 * b.abs().max(1.0));
    }
}

#[test]
fn ramped_and_direct_solves_agree() {
    let model = small_model(10, 6400.0, 2.0, 8.0);
    let design = random_design(100, 0.0, 1.0, 5);
    let cfg = NewtonConfig {
        rel_tol: 1e-9,
        ..NewtonConfig::default()
    };
    let (direct, _) = solve_model(&model, &design, None, &cfg).unwrap();
    let ramped = NewtonConfig {
        ramp: Some(Ramp {
            target: RampTarget::Beta,
            stages: vec![0.5, 1.0],
        }),
        ..cfg
    };
    let (r, _) = solve_model(&model, &design, None, &ramped).unwrap();
    let scale = direct.t().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in r.t().iter().zip(direct.t()) {
        assert!((a - b).abs() < 1e-6 * scale);
    }
}

#[test]
fn converged_solve_balances_heat() {
    let model = small_model(20, 640.0, 2.0, 8.0);
    let design = random_design(400, 0.0, 1.0, 6);
    for (tol, limit) in [(1e-4, 1e-3), (1e-10, 1e-8)] {
        let cfg = NewtonConfig {
            rel_tol: tol,
            ..NewtonConfig::default()
        };
        let (state, _) = solve_model(&model, &design, None, &cfg).unwrap();
        let hb = model.heat_balance(&state.values, &design).unwrap();
        assert!((hb.input - 4.0).abs() < 1e-12);
        assert!(hb.relative_imbalance() < limit, "{}", hb.relative_imbalance());
    }
}

#[test]
fn bad_design_is_rejected() {
    let model = small_model(4, 640.0, 2.0, 8.0);
    let mut design = vec![0.5; 16];
    design[3] = 1.5;
    assert!(solve_model(&model, &design, None, &NewtonConfig::default()).is_err());
    assert!(solve_model(&model, &[0.5; 15], None, &NewtonConfig::default()).is_err());
}
