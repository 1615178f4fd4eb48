//! Constant-modulus linear-transform method: every iteration rebuilds the
//! linear surrogates at the current pattern and solves the resulting
//! unit-modulus LP globally through its dual, which is a small convex
//! problem in the K dual variables.

use super::{
    is_feasible, min_slack, objective_and_slacks, SolverConfig, SolverError, SolverReport,
    SolverStatus, TraceEntry,
};
use crate::numerics::{CVector, C64};
use crate::scenario::{RisPattern, Scenario};
use crate::sensing::{bcrlb, SensingMetricCache};
use crate::transforms::{build_p3_surrogates_fast, LinearSurrogate};
use std::time::Instant;

/// Outcome of one dual subproblem: the dual point, the recovered primal
/// pattern, and the zero-coefficient flag with both objective values.
#[derive(Debug, Clone)]
pub struct DualLpSolution {
    pub nu: Vec<f64>,
    pub x: CVector,
    pub zero_hit: bool,
    /// L(x(nu*), nu*), an upper bound on the subproblem optimum.
    pub dual_value: f64,
    /// Surrogate objective at the recovered x.
    pub primal_value: f64,
}

fn sign_or_zero(c: C64) -> C64 {
    let r = c.norm();
    if r == 0.0 {
        C64::new(0.0, 0.0)
    } else {
        c / r
    }
}

/// Dual objective L(x(nu), nu) = 2 ||sigma(nu)||_1 + const(nu) and its
/// coefficient vector sigma(nu) = d_obj + sum_k nu_k d_k.
fn dual_objective(
    objective: &LinearSurrogate,
    constraints: &[(LinearSurrogate, f64)],
    nu: &[f64],
) -> (f64, CVector) {
    let mut sigma = objective.d.clone();
    let mut constant = objective.constant;
    for (k, (lin, gamma)) in constraints.iter().enumerate() {
        sigma += lin.d.scale(nu[k]);
        constant += nu[k] * (lin.constant - gamma);
    }
    let l1: f64 = sigma.iter().map(|c| c.norm()).sum();
    (2.0 * l1 + constant, sigma)
}

/// d q / d nu_k at the current sigma.
fn dual_derivative(
    sigma: &CVector,
    constraint: &LinearSurrogate,
    gamma: f64,
) -> f64 {
    let mut acc = 0.0;
    for (s, d) in sigma.iter().zip(constraint.d.iter()) {
        acc += (sign_or_zero(*s).conj() * d).re;
    }
    2.0 * acc + constraint.constant - gamma
}

/// Globally solves the unit-modulus LP subproblem through its dual:
/// minimize over nu >= 0 the phase-aligned Lagrangian, by exact coordinate
/// bisection sweeps (the dual is convex and K is small). The primal is
/// recovered as exp(j arg sigma(nu*)); entries failing the
/// zero-coefficient test keep the phase of `fallback`.
pub fn dual_lp_solve(
    objective: &LinearSurrogate,
    constraints: &[(LinearSurrogate, f64)],
    fallback: &CVector,
    cfg: &SolverConfig,
) -> DualLpSolution {
    let k_total = constraints.len();
    let mut nu = vec![0.0; k_total];
    if k_total > 0 {
        let mut last_q = f64::INFINITY;
        for _sweep in 0..80 {
            for k in 0..k_total {
                // Convex in nu_k: bisect the partial derivative.
                let eval = |s: f64, nu: &mut Vec<f64>| -> f64 {
                    nu[k] = s;
                    let (_, sigma) = dual_objective(objective, constraints, nu);
                    dual_derivative(&sigma, &constraints[k].0, constraints[k].1)
                };
                if eval(0.0, &mut nu) >= 0.0 {
                    nu[k] = 0.0;
                    continue;
                }
                let mut lo = 0.0;
                let mut hi = (nu[k].max(1.0)) * 2.0;
                let mut expand = 0;
                while eval(hi, &mut nu) < 0.0 {
                    lo = hi;
                    hi *= 4.0;
                    expand += 1;
                    if expand > 100 {
                        break;
                    }
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if eval(mid, &mut nu) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                nu[k] = 0.5 * (lo + hi);
            }
            let (q, _) = dual_objective(objective, constraints, &nu);
            if (last_q - q).abs() <= cfg.dual_tol * (1.0 + q.abs()) {
                break;
            }
            last_q = q;
        }
    }

    let (dual_value, sigma) = dual_objective(objective, constraints, &nu);
    let n = sigma.len();
    let max_mod = sigma.iter().map(|c| c.norm()).fold(0.0_f64, f64::max);
    let threshold = cfg.zero_coeff_eps * max_mod / n.max(1) as f64;
    let mut zero_hit = false;
    let x = CVector::from_fn(n, |i, _| {
        let s = sigma[i];
        if s.norm() <= threshold {
            zero_hit = true;
            let f = fallback[i];
            if f.norm() == 0.0 {
                C64::new(1.0, 0.0)
            } else {
                f / f.norm()
            }
        } else {
            s / s.norm()
        }
    });
    let primal_value = objective.value(&x);
    DualLpSolution {
        nu,
        x,
        zero_hit,
        dual_value,
        primal_value,
    }
}

/// Linear transform based method. Requires a feasible unit-modulus start.
pub fn solve_cmlt(
    scen: &Scenario,
    cache: &SensingMetricCache,
    cfg: &SolverConfig,
    x0: &RisPattern,
) -> Result<SolverReport, SolverError> {
    let start = Instant::now();
    let gammas: Vec<f64> = (0..scen.num_users()).map(|k| scen.gamma_k(k)).collect();
    let mut x = x0.project_unit();
    let (a0, slacks0) = objective_and_slacks(&x, cache, scen)?;
    if !is_feasible(&slacks0, scen, 1e-6) {
        let bound = bcrlb(&x, cache, scen, scen.sensing.alpha_true)?;
        return Ok(SolverReport {
            x_final: x,
            objective_trace: Vec::new(),
            constraint_slacks: slacks0,
            bcrlb_final: bound,
            final_objective: a0,
            inner_iterations: 0,
            outer_iterations: 0,
            wall_time: start.elapsed().as_secs_f64(),
            status: SolverStatus::InfeasibleInit,
            zero_hits: 0,
        });
    }

    let mut trace = Vec::new();
    let mut zero_hits = 0usize;
    let mut status = SolverStatus::MaxIter;
    let mut prev_a = a0;
    let mut stall = 0usize;
    let mut iterations = 0usize;
    const PATIENCE: usize = 20;
    for iter in 0..cfg.max_inner {
        let sur = build_p3_surrogates_fast(&x, cache, scen)?;
        let constraints: Vec<(LinearSurrogate, f64)> = sur
            .constraints
            .into_iter()
            .zip(gammas.iter().cloned())
            .collect();
        let sol = dual_lp_solve(&sur.objective, &constraints, x.coeffs(), cfg);
        if sol.zero_hit {
            zero_hits += 1;
        }
        x = RisPattern::unit(sol.x);
        let (a, slacks) = objective_and_slacks(&x, cache, scen)?;
        trace.push(TraceEntry {
            outer: 0,
            inner: iter,
            objective: a,
            min_slack: min_slack(&slacks),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        iterations = iter + 1;
        if (a - prev_a).abs() <= cfg.inner_tol * (1.0 + a.abs()) {
            stall += 1;
            if stall >= PATIENCE {
                status = SolverStatus::Converged;
                break;
            }
        } else {
            stall = 0;
        }
        prev_a = a;
    }

    let (a_final, slacks) = objective_and_slacks(&x, cache, scen)?;
    if status == SolverStatus::Converged && !is_feasible(&slacks, scen, 1e-6) {
        status = SolverStatus::MaxIter;
    }
    if zero_hits > 0 && status == SolverStatus::MaxIter {
        status = SolverStatus::ZeroCoefficientFallback;
    }
    Ok(SolverReport {
        bcrlb_final: bcrlb(&x, cache, scen, scen.sensing.alpha_true)?,
        x_final: x,
        objective_trace: trace,
        constraint_slacks: slacks,
        final_objective: a_final,
        inner_iterations: iterations,
        outer_iterations: 1,
        wall_time: start.elapsed().as_secs_f64(),
        status,
        zero_hits,
    })
}
