//! Optimization loop: density filter, forward solve, adjoint, MMA update and the
//! penalization continuation.

use serde::{Deserialize, Serialize};

use crate::adjoint::compliance_sensitivity;
use crate::error::{Error, Result};
use crate::filter::DensityFilter;
use crate::mma::{mma_update, MmaState};
use crate::newton::{solve_model, NewtonConfig, Ramp, RampTarget, SolveReport};
use crate::physics::{ReducedModel, State};

/// Continuation and stopping parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub p_k: Vec<f64>,
    pub p_mubar: Vec<f64>,
    /// Iterations spent in a stage before moving on.
    pub switch_every: usize,
    /// A stage also ends once the largest design change drops below this.
    pub switch_change: f64,
    pub move_limit: f64,
    pub volume_fraction: f64,
    /// Cap on design updates over the whole run.
    pub max_outer_iter: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            p_k: vec![2.0, 8.0, 16.0, 16.0],
            p_mubar: vec![8.0, 8.0, 8.0, 20.0],
            switch_every: 50,
            switch_change: 0.01,
            move_limit: 0.2,
            volume_fraction: 0.5,
            max_outer_iter: 1000,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.p_k.is_empty() || self.p_k.len() != self.p_mubar.len() {
            return Err(Error::Config(
                "penalization sequences must be non-empty and of equal length".into(),
            ));
        }
        if !(self.move_limit > 0.0 && self.move_limit <= 1.0) {
            return Err(Error::Config("move_limit must lie in (0, 1]".into()));
        }
        if !(self.volume_fraction > 0.0 && self.volume_fraction <= 1.0) {
            return Err(Error::Config("volume fraction must lie in (0, 1]".into()));
        }
        if self.switch_every == 0 {
            return Err(Error::Config("switch_every must be positive".into()));
        }
        Ok(())
    }

    pub fn n_stages(&self) -> usize {
        self.p_k.len()
    }

    /// Keeps only the first continuation stage.
    pub fn first_stage_only(mut self) -> Self {
        self.p_k.truncate(1);
        self.p_mubar.truncate(1);
        self
    }
}

/// Which elements carry design variables; the rest keep a fixed physical density.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignDomain {
    pub elems: Vec<usize>,
    /// Physical density of every element outside the design domain.
    pub base: Vec<f64>,
}

impl DesignDomain {
    pub fn new(n_elems: usize, elems: Vec<usize>, background: f64) -> Result<Self> {
        if elems.is_empty() {
            return Err(Error::Setup("design domain is empty".into()));
        }
        if elems.iter().any(|&e| e >= n_elems) {
            return Err(Error::Setup("design element outside mesh".into()));
        }
        Ok(DesignDomain {
            elems,
            base: vec![background; n_elems],
        })
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    /// Physical density on every element from the filtered design variables.
    pub fn physical(&self, filtered: &[f64]) -> Vec<f64> {
        let mut g = self.base.clone();
        for (k, &e) in self.elems.iter().enumerate() {
            g[e] = filtered[k].clamp(0.0, 1.0);
        }
        g
    }

    /// Restriction of a per-element field to the design variables.
    pub fn restrict(&self, field: &[f64]) -> Vec<f64> {
        self.elems.iter().map(|&e| field[e]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct OptProblem {
    /// Model whose penalization exponents are overridden by the schedule.
    pub model: ReducedModel,
    pub domain: DesignDomain,
    pub filter: DensityFilter,
    pub schedule: Schedule,
    pub newton: NewtonConfig,
    pub initial_design: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iter: usize,
    pub psi: f64,
    pub constraint: f64,
    pub max_change: f64,
    pub stage: usize,
    pub p_k: f64,
    pub p_mubar: f64,
    pub newton_iterations: usize,
    pub heat_imbalance: f64,
}

#[derive(Debug, Clone)]
pub struct OptResult {
    /// Raw design variables.
    pub gamma: Vec<f64>,
    /// Physical density on every element.
    pub gamma_tilde: Vec<f64>,
    pub state: State,
    pub psi: f64,
    pub history: Vec<HistoryRecord>,
    pub reports: Vec<SolveReport>,
}

/// Volume constraint `sum(gamma) v / V_design - V*` and its gradient.
pub fn volume_constraint(gamma: &[f64], v_star: f64) -> (f64, Vec<f64>) {
    let n = gamma.len() as f64;
    let g = gamma.iter().sum::<f64>() / n - v_star;
    (g, vec![1.0 / n; gamma.len()])
}

/// Forward solve warm-started from `warm`; on failure, one retry from the cold
/// state ramped on the expansion coefficient.
pub fn robust_solve(
    model: &ReducedModel,
    design: &[f64],
    warm: Option<&State>,
    newton: &NewtonConfig,
) -> Result<(State, SolveReport)> {
    match solve_model(model, design, warm, newton) {
        Ok(r) => Ok(r),
        Err(first) => {
            log::warn!("forward solve failed ({first}); retrying with a ramp on beta");
            let cfg = NewtonConfig {
                ramp: Some(Ramp {
                    target: RampTarget::Beta,
                    stages: vec![0.25, 0.5, 1.0],
                }),
                ..newton.clone()
            };
            solve_model(model, design, None, &cfg)
        }
    }
}

/// Runs the optimization, calling `observe` after every evaluated design.
pub fn run_optimization(
    problem: &OptProblem,
    mut observe: impl FnMut(&HistoryRecord, &[f64], &State),
) -> Result<OptResult> {
    let sched = &problem.schedule;
    sched.validate()?;
    let dom = &problem.domain;
    if problem.filter.len() != dom.len() {
        return Err(Error::Setup("filter size does not match design domain".into()));
    }
    if !(0.0..=1.0).contains(&problem.initial_design) {
        return Err(Error::Setup("initial design must lie in [0, 1]".into()));
    }
    let n = dom.len();
    let mut x = vec![problem.initial_design; n];
    let mut mma = MmaState::new(n);
    let mut stage = 0;
    let mut in_stage = 0;
    let mut updates = 0;
    let mut last_change = 0.0;
    let mut warm: Option<State> = None;
    let mut psi0 = None;
    let mut history = Vec::new();
    let mut reports = Vec::new();
    loop {
        let mats = problem
            .model
            .mats
            .with_penalization(sched.p_k[stage], sched.p_mubar[stage]);
        let model = problem.model.with_materials(mats)?;
        let phys = dom.physical(&problem.filter.apply(&x));
        let (state, report) = robust_solve(&model, &phys, warm.as_ref(), &problem.newton)?;
        let sens = compliance_sensitivity(&model, &state, &phys)?;
        let balance = model.heat_balance(&state.values, &phys)?;
        let (g, dg) = volume_constraint(&x, sched.volume_fraction);
        let rec = HistoryRecord {
            iter: history.len(),
            psi: sens.psi,
            constraint: g,
            max_change: last_change,
            stage,
            p_k: sched.p_k[stage],
            p_mubar: sched.p_mubar[stage],
            newton_iterations: report.iterations,
            heat_imbalance: balance.relative_imbalance(),
        };
        log::info!(
            "it {:4} stage {} psi {:.6e} g {:+.3e} change {:.3e} newton {}",
            rec.iter,
            stage,
            rec.psi,
            g,
            last_change,
            report.iterations
        );
        observe(&rec, &phys, &state);
        history.push(rec);
        reports.push(report);

        if updates >= sched.max_outer_iter {
            return Ok(OptResult {
                gamma: x,
                gamma_tilde: phys,
                psi: sens.psi,
                state,
                history,
                reports,
            });
        }

        let scale = *psi0.get_or_insert(sens.psi.abs().max(f64::MIN_POSITIVE));
        let df_phys: Vec<f64> = dom.restrict(&sens.dpsi_dgamma);
        let df: Vec<f64> = problem
            .filter
            .apply_transpose(&df_phys)
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
        warm = Some(state);
        if in_stage >= sched.switch_every || last_change < sched.switch_change {
            // Past the last stage the next evaluation is the final one.
            stage += 1;
            in_stage = 0;
            if stage == sched.n_stages() {
                stage = sched.n_stages() - 1;
                return finish(problem, &x, stage, last_change, warm, history, reports, observe);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &OptProblem,
    x: &[f64],
    stage: usize,
    last_change: f64,
    warm: Option<State>,
    mut history: Vec<HistoryRecord>,
    mut reports: Vec<SolveReport>,
    mut observe: impl FnMut(&HistoryRecord, &[f64], &State),
) -> Result<OptResult> {
    let sched = &problem.schedule;
    let mats = problem
        .model
        .mats
        .with_penalization(sched.p_k[stage], sched.p_mubar[stage]);
    let model = problem.model.with_materials(mats)?;
    let phys = problem.domain.physical(&problem.filter.apply(x));
    let (state, report) = robust_solve(&model, &phys, warm.as_ref(), &problem.newton)?;
    let psi = crate::adjoint::objective_thermal_compliance(&model, &state)?;
    let balance = model.heat_balance(&state.values, &phys)?;
    let (g, _) = volume_constraint(x, sched.volume_fraction);
    let rec = HistoryRecord {
        iter: history.len(),
        psi,
        constraint: g,
        max_change: last_change,
        stage,
        p_k: sched.p_k[stage],
        p_mubar: sched.p_mubar[stage],
        newton_iterations: report.iterations,
        heat_imbalance: balance.relative_imbalance(),
    };
    observe(&rec, &phys, &state);
    history.push(rec);
    reports.push(report);
    Ok(OptResult {
        gamma: x.to_vec(),
        gamma_tilde: phys,
        state,
        psi,
        history,
        reports,
    })
}

/// Compliance and peak temperature rise of each design under each condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossCheck {
    /// `psi[i][j]`: design `i` under condition `j`.
    pub psi: Vec<Vec<f64>>,
    pub dt_max: Vec<Vec<f64>>,
    pub heat_imbalance: Vec<Vec<f64>>,
}

impl CrossCheck {
    /// True when every design is the best one under its own condition.
    pub fn diagonal_dominant(&self) -> bool {
        let n = self.psi.len();
        (0..n).all(|j| (0..n).all(|i| self.psi[j][j] <= self.psi[i][j]))
    }
}

/// Evaluates physical designs under each model (one per operating condition).
pub fn cross_check(
    designs: &[Vec<f64>],
    conditions: &[ReducedModel],
    newton: &NewtonConfig,
) -> Result<CrossCheck> {
    let mut out = CrossCheck {
        psi: Vec::new(),
        dt_max: Vec::new(),
        heat_imbalance: Vec::new(),
    };
    for d in designs {
        let mut row = Vec::new();
        let mut dt = Vec::new();
        let mut hb = Vec::new();
        for model in conditions {
            let (state, _) = robust_solve(model, d, None, newton)?;
            row.push(crate::adjoint::objective_thermal_compliance(model, &state)?);
            dt.push(max_temperature_rise(model, &state));
            hb.push(model.heat_balance(&state.values, d)?.relative_imbalance());
        }
        out.psi.push(row);
        out.dt_max.push(dt);
        out.heat_imbalance.push(hb);
    }
    Ok(out)
}

/// Largest nodal `T - T0`.
pub fn max_temperature_rise(model: &ReducedModel, state: &State) -> f64 {
    state
        .t()
        .iter()
        .map(|t| t - model.mats.t0)
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_constraint_gradient_is_uniform() {
        let (g, dg) = volume_constraint(&[0.2, 0.4, 0.6, 0.8], 0.5);
        assert!(g.abs() < 1e-15);
        assert!(dg.iter().all(|v| *v == 0.25));
    }

    #[test]
    fn schedule_defaults_and_validation() {
        let s = Schedule::default();
        assert!(s.validate().is_ok());
        assert_eq!(s.n_stages(), 4);
        assert_eq!(s.clone().first_stage_only().p_k, vec![2.0]);
        let bad = Schedule {
            p_mubar: vec![8.0],
            ..Schedule::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn physical_field_keeps_frozen_elements() {
        let d = DesignDomain::new(5, vec![1, 3], 1.0).unwrap();
        assert_eq!(d.physical(&[0.2, 0.7]), vec![1.0, 0.2, 1.0, 0.7, 1.0]);
        assert_eq!(d.restrict(&[9.0, 8.0, 7.0, 6.0, 5.0]), vec![8.0, 6.0]);
    }

    #[test]
    fn dominance_check() {
        let c = CrossCheck {
            psi: vec![vec![1.0, 3.0], vec![2.0, 2.5]],
            dt_max: vec![],
            heat_imbalance: vec![],
        };
        assert!(c.diagonal_dominant());
        let c = CrossCheck {
            psi: vec![vec![1.0, 2.0], vec![2.0, 2.5]],
            ..c
        };
        assert!(!c.diagonal_dominant());
    }
}
