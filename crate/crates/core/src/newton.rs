//! Damped Newton iteration with a three-point quadratic line fit, plus ramping
//! on the heat load or the expansion coefficient for hard starts.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm2;
use crate::physics::{ReducedModel, State, TauMode};

/// Trial step lengths for the line fit.
pub const TRIAL_STEPS: [f64; 3] = [0.1, 0.55, 1.0];
const MIN_STEP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Damping {
    Fixed { lambda: f64 },
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampTarget {
    HeatFlux,
    Beta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ramp {
    pub target: RampTarget,
    pub stages: Vec<f64>,
}

impl Ramp {
    pub fn validate(&self) -> Result<()> {
        let ok = !self.stages.is_empty()
            && self.stages.iter().all(|s| s.is_finite() && *s > 0.0)
            && *self.stages.last().unwrap() == 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("ramp stages must be positive and end at 1.0".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonConfig {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub damping: Damping,
    pub ramp: Option<Ramp>,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            rel_tol: 1e-4,
            max_iter: 50,
            damping: Damping::Adaptive,
            ramp: None,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::Config("rel_tol must lie in (0, 1)".into()));
        }
        if let Damping::Fixed { lambda } = self.damping {
            if !(lambda > 0.0 && lambda <= 1.0) {
                return Err(Error::Config("fixed damping must lie in (0, 1]".into()));
            }
        }
        if let Some(r) = &self.ramp {
            r.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    /// `||R|| / ||R_ref||` before each iteration and at the end.
    pub residual_history: Vec<f64>,
    pub damping_history: Vec<f64>,
    pub ramp_stages: Vec<f64>,
    pub wall_time_s: f64,
    pub n_dofs: usize,
}

/// A square nonlinear system with constrained dofs already eliminated.
pub trait NonlinearProblem {
    fn n_dofs(&self) -> usize;
    fn residual(&self, s: &[f64]) -> Result<Vec<f64>>;
    /// Solves `J(s) ds = r`.
    fn newton_step(&self, s: &[f64], r: &[f64]) -> Result<Vec<f64>>;
    /// Scale for the relative tolerance.
    fn reference_norm(&self) -> Result<f64>;
}

/// Picks the damping factor from residual norms sampled at trial step lengths by
/// fitting a quadratic in `lambda`.
pub fn update_damping(samples: &[(f64, f64)]) -> Result<f64> {
    let finite: Vec<(f64, f64)> = samples
        .iter()
        .copied()
        .filter(|(l, r)| l.is_finite() && r.is_finite())
        .collect();
    let best = finite
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::Solver("all damping trials non-finite".into()))?;
    if finite.len() < 3 {
        return Ok(best.0);
    }
    let [(x0, y0), (x1, y1), (x2, y2)] = [finite[0], finite[1], finite[2]];
    // Divided differences: y = y0 + d1 (x - x0) + d2 (x - x0)(x - x1).
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let d2 = (d12 - d01) / (x2 - x0);
    let scale = y0.abs().max(y1.abs()).max(y2.abs()).max(f64::MIN_POSITIVE);
    if !(d2 > 1e-12 * scale) {
        return Ok(best.0);
    }
    let b = d01 - d2 * (x0 + x1);
    Ok((-b / (2.0 * d2)).clamp(MIN_STEP, 1.0))
}

fn axpy(s: &[f64], lambda: f64, ds: &[f64]) -> Vec<f64> {
    s.iter().zip(ds).map(|(a, d)| a - lambda * d).collect()
}

/// Damped Newton iteration from `initial`.
pub fn solve_state<P: NonlinearProblem>(
    problem: &P,
    initial: &[f64],
    cfg: &NewtonConfig,
) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let n = problem.n_dofs();
    if initial.len() != n {
        return Err(Error::Solver(format!(
            "initial state has {} entries, expected {n}",
            initial.len()
        )));
    }
    let mut report = SolveReport {
        converged: false,
        iterations: 0,
        residual_history: Vec::new(),
        damping_history: Vec::new(),
        ramp_stages: Vec::new(),
        wall_time_s: 0.0,
        n_dofs: n,
    };
    let reference = problem.reference_norm()?;
    let mut s = initial.to_vec();
    let mut r = problem.residual(&s)?;
    let mut rn = norm2(&r);
    if !rn.is_finite() {
        return Err(Error::Solver("non-finite initial residual".into()));
    }
    if reference == 0.0 || rn == 0.0 {
        report.converged = true;
        report.residual_history.push(0.0);
        report.wall_time_s = start.elapsed().as_secs_f64();
        return Ok((s, report));
    }
    let mut best = (rn, s.clone());
    report.residual_history.push(rn / reference);
    loop {
        if rn <= cfg.rel_tol * reference {
            report.converged = true;
            break;
        }
        if report.iterations == cfg.max_iter {
            break;
        }
        let ds = problem.newton_step(&s, &r).map_err(|e| {
            Error::Solver(format!("Newton iteration {}: {e}", report.iterations + 1))
        })?;
        let (lambda, s_new, r_new) = match cfg.damping {
            Damping::Fixed { lambda } => {
                let s_new = axpy(&s, lambda, &ds);
                let r_new = problem.residual(&s_new)?;
                (lambda, s_new, r_new)
            }
            Damping::Adaptive => {
                let mut trials = Vec::with_capacity(3);
                for &l in &TRIAL_STEPS {
                    let st = axpy(&s, l, &ds);
                    let rt = problem.residual(&st)?;
                    trials.push((l, norm2(&rt), st, rt));
                }
                let samples: Vec<(f64, f64)> = trials.iter().map(|t| (t.0, t.1)).collect();
                let lambda = update_damping(&samples)?;
                let best_trial = trials
                    .iter()
                    .filter(|t| t.1.is_finite())
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("at least one finite trial");
                if let Some(t) = trials.iter().find(|t| t.0 == lambda) {
                    (lambda, t.2.clone(), t.3.clone())
                } else {
                    let st = axpy(&s, lambda, &ds);
                    let rt = problem.residual(&st)?;
                    if norm2(&rt) <= best_trial.1 {
                        (lambda, st, rt)
                    } else {
                        (best_trial.0, best_trial.2.clone(), best_trial.3.clone())
                    }
                }
            }
        };
        s = s_new;
        r = r_new;
        rn = norm2(&r);
        if !rn.is_finite() {
            return Err(Error::Solver(format!(
                "non-finite residual after Newton iteration {}",
                report.iterations + 1
            )));
        }
        report.iterations += 1;
        report.damping_history.push(lambda);
        report.residual_history.push(rn / reference);
        if rn < best.0 {
            best = (rn, s.clone());
        }
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    if report.converged {
        Ok((s, report))
    } else {
        Err(Error::NotConverged {
            iterations: report.iterations,
            relative_residual: best.0 / reference,
            best_state: best.1,
        })
    }
}

/// Solves a sequence of problems built for each ramp stage, each warm-started from
/// the previous solution.
pub fn ramp_solve<P, F>(
    build: F,
    initial: &[f64],
    stages: &[f64],
    cfg: &NewtonConfig,
) -> Result<(Vec<f64>, SolveReport)>
where
    P: NonlinearProblem,
    F: Fn(f64) -> Result<P>,
{
    if stages.is_empty() || *stages.last().unwrap() != 1.0 {
        return Err(Error::Config("ramp stages must end at 1.0".into()));
    }
    let start = Instant::now();
    let mut s = initial.to_vec();
    let mut total: Option<SolveReport> = None;
    for (k, &scale) in stages.iter().enumerate() {
        let problem = build(scale)?;
        let (next, rep) = solve_state(&problem, &s, cfg).map_err(|e| Error::RampStage {
            stage: k,
            scale,
            source: Box::new(e),
        })?;
        s = next;
        total = Some(match total {
            None => rep,
            Some(mut t) => {
                t.iterations += rep.iterations;
                t.residual_history.extend(rep.residual_history);
                t.damping_history.extend(rep.damping_history);
                t.converged = rep.converged;
                t
            }
        });
    }
    let mut report = total.expect("at least one stage");
    report.ramp_stages = stages.to_vec();
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((s, report))
}

/// Reduced-order model at a fixed physical design.
pub struct CoupledProblem<'a> {
    pub model: &'a ReducedModel,
    pub design: &'a [f64],
    pub tau: TauMode<'a>,
}

impl NonlinearProblem for CoupledProblem<'_> {
    fn n_dofs(&self) -> usize {
        self.model.n_dofs()
    }

    fn residual(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.model.residual(s, self.design, self.tau)
    }

    fn newton_step(&self, s: &[f64], r: &[f64]) -> Result<Vec<f64>> {
        let lu = self.model.factorize_tangent(s, self.design, self.tau)?;
        let mut ds = r.to_vec();
        lu.solve(&mut ds)?;
        Ok(ds)
    }

    fn reference_norm(&self) -> Result<f64> {
        self.model.reference_residual_norm(self.design)
    }
}

/// Model with the ramp scale applied to the heat load or the expansion coefficient.
pub fn scaled_model(model: &ReducedModel, target: RampTarget, scale: f64) -> Result<ReducedModel> {
    match target {
        RampTarget::HeatFlux => Ok(model.with_heat_scale(model.heat_scale * scale)),
        RampTarget::Beta => {
            let mut mats = model.mats.clone();
            mats.beta *= scale;
            model.with_materials(mats)
        }
    }
}

/// Forward solve of the reduced-order model, ramped when the configuration asks for it.
pub fn solve_model(
    model: &ReducedModel,
    design: &[f64],
    initial: Option<&State>,
    cfg: &NewtonConfig,
) -> Result<(State, SolveReport)> {
    model.check_design(design)?;
    let init = match initial {
        Some(s) => {
            let mut v = s.values.clone();
            model.impose_dirichlet(&mut v);
            v
        }
        None => model.initial_state().values,
    };
    let (values, report) = match &cfg.ramp {
        None => solve_state(
            &CoupledProblem {
                model,
                design,
                tau: TauMode::Live,
            },
            &init,
            cfg,
        )?,
        Some(ramp) => {
            ramp.validate()?;
            let models: Vec<ReducedModel> = ramp
                .stages
                .iter()
                .map(|&sc| scaled_model(model, ramp.target, sc))
                .collect::<Result<_>>()?;
            let lookup = |sc: f64| -> Result<CoupledProblem<'_>> {
                let k = ramp.stages.iter().position(|&x| x == sc).expect("stage");
                Ok(CoupledProblem {
                    model: &models[k],
                    design,
                    tau: TauMode::Live,
                })
            };
            ramp_solve(lookup, &init, &ramp.stages, cfg)?
        }
    };
    Ok((State { values }, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_quadratic_minimum() {
        let f = |l: f64| 2.0 * (l - 0.4).powi(2) + 0.3;
        let samples: Vec<_> = TRIAL_STEPS.iter().map(|&l| (l, f(l))).collect();
        assert!((update_damping(&samples).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn monotone_samples_take_full_step() {
        let samples = [(0.1, 3.0), (0.55, 2.0), (1.0, 1.0)];
        assert_eq!(update_damping(&samples).unwrap(), 1.0);
        let samples = [(0.1, 3.0), (0.55, 1.5), (1.0, 0.2)];
        assert_eq!(update_damping(&samples).unwrap(), 1.0);
    }

    #[test]
    fn concave_samples_fall_back_to_best() {
        let samples = [(0.1, 1.0), (0.55, 2.0), (1.0, 1.5)];
        assert_eq!(update_damping(&samples).unwrap(), 0.1);
    }

    #[test]
    fn vertex_is_clamped_below() {
        let f = |l: f64| (l + 0.3).powi(2);
        let samples: Vec<_> = TRIAL_STEPS.iter().map(|&l| (l, f(l))).collect();
        assert_eq!(update_damping(&samples).unwrap(), MIN_STEP);
    }

    #[test]
    fn non_finite_trials() {
        assert!(update_damping(&[(0.1, f64::NAN), (1.0, f64::INFINITY)]).is_err());
        assert_eq!(update_damping(&[(0.1, 2.0), (0.55, f64::NAN), (1.0, 1.0)]).unwrap(), 1.0);
    }

    struct Scalar;
    impl NonlinearProblem for Scalar {
        fn n_dofs(&self) -> usize {
            1
        }
        fn residual(&self, s: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![s[0].powi(3) - 8.0])
        }
        fn newton_step(&self, s: &[f64], r: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![r[0] / (3.0 * s[0] * s[0])])
        }
        fn reference_norm(&self) -> Result<f64> {
            Ok(8.0)
        }
    }

    #[test]
    fn scalar_cubic_converges() {
        let cfg = NewtonConfig {
            rel_tol: 1e-10,
            ..Default::default()
        };
        let (s, rep) = solve_state(&Scalar, &[5.0], &cfg).unwrap();
        assert!((s[0] - 2.0).abs() < 1e-9);
        assert!(rep.converged);
        let (_, rep2) = solve_state(&Scalar, &s, &cfg).unwrap();
        assert_eq!(rep2.iterations, 0);
    }

    #[test]
    fn iteration_cap_reports_best_state() {
        let cfg = NewtonConfig {
            rel_tol: 1e-12,
            max_iter: 1,
            damping: Damping::Fixed { lambda: 0.5 },
            ramp: None,
        };
        match solve_state(&Scalar, &[5.0], &cfg) {
            Err(Error::NotConverged {
                iterations,
                best_state,
                ..
            }) => {
                assert_eq!(iterations, 1);
                assert!(best_state[0] < 5.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let mut c = NewtonConfig::default();
        assert!(c.validate().is_ok());
        c.rel_tol = 1.5;
        assert!(c.validate().is_err());
        c.rel_tol = 1e-4;
        c.damping = Damping::Fixed { lambda: 0.0 };
        assert!(c.validate().is_err());
        c.damping = Damping::Adaptive;
        c.ramp = Some(Ramp {
            target: RampTarget::Beta,
            stages: vec![0.5, 0.9],
        });
        assert!(c.validate().is_err());
    }
}
