//! Method of Moving Asymptotes for one inequality constraint, variables in `[0, 1]`.
//!
//! The convex subproblem is separable, so for a given multiplier each variable
//! has a closed-form minimizer; the multiplier is found by bisection on the
//! (monotone) approximated constraint.

use crate::error::{Error, Result};

const ASYINIT: f64 = 0.5;
const ASYINCR: f64 = 1.2;
const ASYDECR: f64 = 0.7;
const ALBEFA: f64 = 0.1;
const RAA0: f64 = 1e-5;
const DUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MmaState {
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
    pub xold1: Vec<f64>,
    pub xold2: Vec<f64>,
    pub iter: usize,
    /// Constraint multiplier of the last subproblem.
    pub lambda: f64,
}

impl MmaState {
    pub fn new(n: usize) -> Self {
        MmaState {
            low: vec![0.0; n],
            upp: vec![1.0; n],
            xold1: Vec::new(),
            xold2: Vec::new(),
            iter: 0,
            lambda: 0.0,
        }
    }
}

/// One MMA step. `df` is the objective gradient, `g` the constraint value
/// (feasible when `<= 0`) and `dg` its gradient.
pub fn mma_update(
    state: &mut MmaState,
    x: &[f64],
    df: &[f64],
    g: f64,
    dg: &[f64],
    move_limit: f64,
) -> Result<Vec<f64>> {
    let n = x.len();
    if df.len() != n || dg.len() != n || state.low.len() != n {
        return Err(Error::Optimizer("MMA input lengths disagree".into()));
    }
    if !(move_limit > 0.0 && move_limit <= 1.0) {
        return Err(Error::Optimizer("move limit must lie in (0, 1]".into()));
    }
    if !g.is_finite() || df.iter().chain(dg).any(|v| !v.is_finite()) {
        return Err(Error::Optimizer("non-finite sensitivities".into()));
    }
    let (xmin, xmax) = (0.0, 1.0);
    let range = xmax - xmin;
    state.iter += 1;

    // Asymptotes.
    if state.iter <= 2 || state.xold2.len() != n {
        for j in 0..n {
            state.low[j] = x[j] - ASYINIT * range;
            state.upp[j] = x[j] + ASYINIT * range;
        }
    } else {
        for j in 0..n {
            let z = (x[j] - state.xold1[j]) * (state.xold1[j] - state.xold2[j]);
            let f = if z > 0.0 {
                ASYINCR
            } else if z < 0.0 {
                ASYDECR
            } else {
                1.0
            };
            let low = x[j] - f * (state.xold1[j] - state.low[j]);
            let upp = x[j] + f * (state.upp[j] - state.xold1[j]);
            state.low[j] = low.clamp(x[j] - 10.0 * range, x[j] - 0.01 * range);
            state.upp[j] = upp.clamp(x[j] + 0.01 * range, x[j] + 10.0 * range);
        }
    }

    // Bounds, approximation coefficients.
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    let mut p0 = vec![0.0; n];
    let mut q0 = vec![0.0; n];
    let mut p1 = vec![0.0; n];
    let mut q1 = vec![0.0; n];
    let mut r1 = g;
    for j in 0..n {
        let (l, u) = (state.low[j], state.upp[j]);
        alpha[j] = xmin.max(l + ALBEFA * (x[j] - l)).max(x[j] - move_limit);
        beta[j] = xmax.min(u - ALBEFA * (u - x[j])).min(x[j] + move_limit);
        let (ux, xl) = ((u - x[j]).powi(2), (x[j] - l).powi(2));
        let (dp, dm) = (df[j].max(0.0), (-df[j]).max(0.0));
        p0[j] = ux * (1.001 * dp + 0.001 * dm + RAA0 / range);
        q0[j] = xl * (0.001 * dp + 1.001 * dm + RAA0 / range);
        p1[j] = ux * dg[j].max(0.0);
        q1[j] = xl * (-dg[j]).max(0.0);
        r1 -= p1[j] / (u - x[j]) + q1[j] / (x[j] - l);
    }

    let solve_x = |lam: f64, out: &mut [f64]| {
        for j in 0..n {
            let pp = (p0[j] + lam * p1[j]).sqrt();
            let qq = (q0[j] + lam * q1[j]).sqrt();
            let xj = (pp * state.low[j] + qq * state.upp[j]) / (pp + qq);
            out[j] = xj.clamp(alpha[j], beta[j]);
        }
    };
    let approx_g = |xs: &[f64]| -> f64 {
        r1 + (0..n)
            .map(|j| p1[j] / (state.upp[j] - xs[j]) + q1[j] / (xs[j] - state.low[j]))
            .sum::<f64>()
    };

    let mut xnew = vec![0.0; n];
    solve_x(0.0, &mut xnew);
    let mut lambda = 0.0;
    if approx_g(&xnew) > 0.0 {
        // Bracket the multiplier, then bisect.
        let mut hi = 1.0;
        let cap = 1e12;
        loop {
            solve_x(hi, &mut xnew);
            if approx_g(&xnew) <= 0.0 || hi >= cap {
                break;
            }
            hi *= 10.0;
        }
        let mut lo = 0.0;
        if approx_g(&xnew) <= 0.0 {
            let mut it = 0;
            while (hi - lo) > DUAL_TOL * hi.max(1.0) {
                let mid = 0.5 * (lo + hi);
                solve_x(mid, &mut xnew);
                if approx_g(&xnew) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                it += 1;
                if it > 500 {
                    return Err(Error::Optimizer(format!(
                        "MMA dual bisection stalled in [{lo}, {hi}]"
                    )));
                }
            }
        }
        lambda = hi;
        solve_x(lambda, &mut xnew);
    }
    if xnew.iter().any(|v| !v.is_finite()) {
        return Err(Error::Optimizer("MMA subproblem produced non-finite design".into()));
    }
    state.lambda = lambda;
    state.xold2 = std::mem::replace(&mut state.xold1, x.to_vec());
    Ok(xnew)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stationary_subproblem_keeps_design() {
        let x = vec![0.3, 0.5, 0.7];
        let mut st = MmaState::new(3);
        let out = mma_update(&mut st, &x, &[0.0; 3], -0.1, &[1.0 / 3.0; 3], 0.2).unwrap();
        for (a, b) in out.iter().zip(&x) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(st.lambda, 0.0);
    }

    #[test]
    fn negative_gradient_with_slack_hits_move_limit() {
        // One variable, x = 0.4, asymptotes at 0.4 -/+ 0.5. The unconstrained
        // minimizer sits above x; beta = min(1, 0.9 - 0.05, 0.6) = 0.6.
        let mut st = MmaState::new(1);
        let out = mma_update(&mut st, &[0.4], &[-1.0], -0.5, &[1.0], 0.2).unwrap();
        let (l, u) = (-0.1f64, 0.9f64);
        let p0 = (u - 0.4).powi(2) * (0.001 + 1e-5);
        let q0 = (0.4 - l).powi(2) * (1.001 + 1e-5);
        let free = (p0.sqrt() * l + q0.sqrt() * u) / (p0.sqrt() + q0.sqrt());
        assert!(free > 0.6);
        assert!((out[0] - 0.6).abs() < 1e-14);
        let mut st = MmaState::new(4);
        let x = [0.1, 0.2, 0.3, 0.95];
        let out = mma_update(&mut st, &x, &[-1.0; 4], -0.9, &[0.25; 4], 0.2).unwrap();
        for (a, b) in out.iter().zip(&x) {
            assert!(a > b && *a <= (b + 0.2).min(1.0) + 1e-15);
        }
    }

    #[test]
    fn infeasible_start_reduces_constraint() {
        let n = 10;
        let x = vec![0.8; n];
        let v = vec![0.1; n];
        let g = x.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() - 0.5;
        let mut st = MmaState::new(n);
        let out = mma_update(&mut st, &x, &vec![-0.1; n], g, &v, 0.2).unwrap();
        let g_new = out.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() - 0.5;
        assert!(g_new < g);
        assert!(st.lambda > 0.0);
    }

    #[test]
    fn bounds_and_move_limit_hold_over_iterations() {
        let n = 20;
        let mut x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let mut st = MmaState::new(n);
        let dg = vec![1.0 / n as f64; n];
        for k in 0..15 {
            let df: Vec<f64> = (0..n).map(|j| ((j + k) as f64).sin()).collect();
            let g = x.iter().sum::<f64>() / n as f64 - 0.4;
            let out = mma_update(&mut st, &x, &df, g, &dg, 0.2).unwrap();
            for (a, b) in out.iter().zip(&x) {
                assert!((0.0..=1.0).contains(a));
                assert!((a - b).abs() <= 0.2 + 1e-15);
            }
            for j in 0..n {
                assert!(st.low[j] < x[j] && x[j] < st.upp[j]);
            }
            x = out;
        }
    }
}
