//! Penalty plus quadratic-transform method: alternate closed-form
//! multiplier updates with a convex QCQP in x, growing the penalty weight
//! until the iterate reaches the unit-modulus torus.

use super::barrier::{
    embed_hermitian, embed_vector, solve_qcqp, BarrierOptions, BarrierSolution, BarrierStatus,
    Objective, QcqpProblem, RealQuad,
};
use super::{
    is_feasible, min_slack, objective_and_slacks, SolverConfig, SolverError, SolverReport,
    SolverStatus, TraceEntry,
};
use crate::numerics::CVector;
use crate::scenario::{RisPattern, Scenario};
use crate::sensing::{bcrlb, SensingMetricCache};
use crate::transforms::{build_p2_surrogates, QuadraticSurrogate};
use std::time::Instant;

/// Solves the penalized convex subproblem
///   maximize objective(x) - mu ||x - z||^2
///   s.t. constraint_k(x) >= Gamma_k, |x_n| <= 1
/// by the log-barrier method on the real embedding. `obj_scale` normalizes
/// the objective to O(1); `x_start` warm-starts the barrier.
pub fn inner_convex_solve(
    objective: &QuadraticSurrogate,
    constraints: &[(QuadraticSurrogate, f64)],
    penalty_mu: f64,
    z: &CVector,
    x_start: &CVector,
    obj_scale: f64,
    opts: &BarrierOptions,
) -> Result<BarrierSolution, SolverError> {
    let mut quad = RealQuad {
        m: embed_hermitian(&objective.m_mat),
        lin: embed_vector(&objective.lin),
        constant: objective.constant,
    };
    quad.add_penalty(penalty_mu, &embed_vector(z));
    quad.scale_by(1.0 / obj_scale);
    let constraint_quads: Vec<RealQuad> = constraints
        .iter()
        .map(|(sur, gamma)| RealQuad {
            m: embed_hermitian(&sur.m_mat),
            lin: embed_vector(&sur.lin),
            constant: sur.constant - gamma,
        })
        .collect();
    let problem = QcqpProblem {
        objective: Objective::Quadratic(&quad),
        constraints: constraint_quads,
        n_complex: z.len(),
        domain_margin: 0.0,
    };
    solve_qcqp(&problem, x_start, opts)
}

/// Quadratic transform and penalty based method. Requires a feasible
/// unit-modulus start.
pub fn solve_pnqt(
    scen: &Scenario,
    cache: &SensingMetricCache,
    cfg: &SolverConfig,
    x0: &RisPattern,
) -> Result<SolverReport, SolverError> {
    let start = Instant::now();
    let gammas: Vec<f64> = (0..scen.num_users()).map(|k| scen.gamma_k(k)).collect();
    let mut x = x0.clone();
    let (a0, slacks0) = objective_and_slacks(&x, cache, scen)?;
    if !is_feasible(&slacks0, scen, 1e-6) {
        return Ok(infeasible_report(scen, cache, x0, start));
    }
    let obj_scale = a0.abs().max(1e-300);
    let mut mu = cfg.mu0.unwrap_or(1e-3 * obj_scale);
    let mut trace = Vec::new();
    let mut inner_total = 0usize;
    let mut outer = 0usize;
    let mut status = SolverStatus::MaxIter;
    let mut warm = false;
    loop {
        let mut prev_penalized = f64::NEG_INFINITY;
        for _ in 0..cfg.max_inner {
            let z = x.project_unit();
            let sur = build_p2_surrogates(&x, cache, scen)?;
            let constraints: Vec<(QuadraticSurrogate, f64)> = sur
                .constraints
                .into_iter()
                .zip(gammas.iter().cloned())
                .collect();
            let opts = if warm {
                BarrierOptions {
                    gap_tol: cfg.kkt_tol.min(1e-9),
                    ..BarrierOptions::default().warm()
                }
            } else {
                BarrierOptions {
                    gap_tol: cfg.kkt_tol.min(1e-9),
                    ..BarrierOptions::default()
                }
            };
            let sol = inner_convex_solve(
                &sur.objective,
                &constraints,
                mu,
                z.coeffs(),
                x.coeffs(),
                obj_scale,
                &opts,
            )?;
            if sol.status == BarrierStatus::Infeasible {
                return Err(SolverError::Inner(
                    "penalized subproblem infeasible from a feasible iterate".into(),
                ));
            }
            x = RisPattern::bounded(clamp_ball(sol.x));
            warm = true;
            let (a, slacks) = objective_and_slacks(&x, cache, scen)?;
            let dist2 = (x.coeffs() - x.project_unit().coeffs()).norm_squared();
            let penalized = a - mu * dist2;
            trace.push(TraceEntry {
                outer,
                inner: inner_total,
                objective: penalized,
                min_slack: min_slack(&slacks),
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            inner_total += 1;
            let done = (penalized - prev_penalized).abs()
                <= cfg.inner_tol * (1.0 + penalized.abs());
            prev_penalized = penalized;
            if done {
                break;
            }
        }
        outer += 1;
        let dist_inf = x
            .coeffs()
            .iter()
            .zip(x.project_unit().coeffs().iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0_f64, f64::max);
        if dist_inf <= cfg.unit_tol {
            status = SolverStatus::Converged;
            break;
        }
        if outer >= cfg.max_outer {
            break;
        }
        // Growing the penalty beyond what the exit tolerance resolves only
        // stiffens the barrier.
        mu = (mu * cfg.xi).min(1e6 * obj_scale);
    }

    let x_final = x.project_unit();
    let (a_final, slacks) = objective_and_slacks(&x_final, cache, scen)?;
    if status == SolverStatus::Converged && !is_feasible(&slacks, scen, 1e-6) {
        status = SolverStatus::MaxIter;
    }
    Ok(SolverReport {
        bcrlb_final: bcrlb(&x_final, cache, scen, scen.sensing.alpha_true)?,
        x_final,
        objective_trace: trace,
        constraint_slacks: slacks,
        final_objective: a_final,
        inner_iterations: inner_total,
        outer_iterations: outer,
        wall_time: start.elapsed().as_secs_f64(),
        status,
        zero_hits: 0,
    })
}

/// Barrier iterates live strictly inside the ball, but the final complex
/// round-trip can overshoot by an ulp.
fn clamp_ball(mut x: CVector) -> CVector {
    for c in x.iter_mut() {
        let r = c.norm();
        if r > 1.0 {
            *c /= r;
        }
    }
    x
}

fn infeasible_report(
    scen: &Scenario,
    cache: &SensingMetricCache,
    x0: &RisPattern,
    start: Instant,
) -> SolverReport {
    let x_final = x0.project_unit();
    let bcrlb_final = bcrlb(&x_final, cache, scen, scen.sensing.alpha_true)
        .unwrap_or(f64::INFINITY);
    let (a, slacks) =
        objective_and_slacks(&x_final, cache, scen).unwrap_or((0.0, vec![]));
    SolverReport {
        x_final,
        objective_trace: Vec::new(),
        constraint_slacks: slacks,
        bcrlb_final,
        final_objective: a,
        inner_iterations: 0,
        outer_iterations: 0,
        wall_time: start.elapsed().as_secs_f64(),
        status: SolverStatus::InfeasibleInit,
        zero_hits: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::CMatrix;
    use crate::scenario::{PriorGrid, ScenarioConfig};
    use crate::sensing::metric_a;
    use crate::solvers::feasible_init;
    use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

    #[test]
    fn unconstrained_inner_solve_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let n = 6;
        let b = CMatrix::from_fn(n, n, |_, _| crate::scenario::sample_cn(&mut rng, 1.0));
        let m = &b * b.adjoint() + CMatrix::identity(n, n).scale(4.0);
        let lin = CVector::from_fn(n, |_, _| crate::scenario::sample_cn(&mut rng, 0.02));
        let sur = QuadraticSurrogate {
            m_mat: m.clone(),
            lin: lin.clone(),
            constant: 0.0,
        };
        let z = crate::scenario::RisPattern::random_unit(n, &mut rng);
        let sol = inner_convex_solve(
            &sur,
            &[],
            0.0,
            z.coeffs(),
            &CVector::zeros(n),
            1.0,
            &BarrierOptions::default(),
        )
        .unwrap();
        let closed = crate::numerics::solve_hpd_vec(&m, &lin).unwrap();
        assert!(closed.iter().all(|c| c.norm() < 0.9));
        assert!((&sol.x - &closed).norm() < 1e-5);
    }

    #[test]
    fn huge_penalty_returns_anchor() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let n = 5;
        let sur = QuadraticSurrogate {
            m_mat: CMatrix::zeros(n, n),
            lin: CVector::from_fn(n, |_, _| crate::scenario::sample_cn(&mut rng, 1.0)),
            constant: 0.0,
        };
        let z = crate::scenario::RisPattern::random_unit(n, &mut rng);
        let sol = inner_convex_solve(
            &sur,
            &[],
            1e6,
            z.coeffs(),
            z.coeffs(),
            1e6,
            &BarrierOptions::default(),
        )
        .unwrap();
        assert!((&sol.x - z.coeffs()).norm() < 1e-4);
    }

    #[test]
    fn sensing_only_run_improves_metric() {
        // No users, rank-one prior, identity-like channel; the method must
        // increase A from the start point and end unit-modulus.
        let mut cfg = ScenarioConfig::with_seed(92);
        cfg.apply_desk_profile();
        cfg.comm_users = Some(vec![]);
        let scen = cfg.build().unwrap();
        let prior = PriorGrid::weighted(vec![1.1], vec![1.0]);
        let cache = SensingMetricCache::build(&scen, &prior).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(92);
        let x0 = RisPattern::random_unit(scen.n_elements(), &mut rng);
        let a0 = metric_a(&x0, &cache, &scen).unwrap();
        let mut solver_cfg = SolverConfig::default();
        solver_cfg.max_outer = 10;
        let report = solve_pnqt(&scen, &cache, &solver_cfg, &x0).unwrap();
        assert!(report.final_objective >= a0);
        for c in report.x_final.coeffs().iter() {
            assert!((c.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn desk_run_is_monotone_and_reaches_torus() {
        let mut cfg = ScenarioConfig::with_seed(93);
        cfg.apply_desk_profile();
        cfg.prior = Some(crate::scenario::PriorConfig {
            eta_support: None,
            eta_nodes: Some(15),
            alpha_lattice_side: None,
            alpha_lattice_sigmas: None,
        });
        let scen = cfg.build().unwrap();
        let cache = SensingMetricCache::build(&scen, &scen.prior_grid()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(93);
        let solver_cfg = SolverConfig::default();
        let x0 = feasible_init(&scen, &cache, &mut rng, &solver_cfg).unwrap();
        let report = solve_pnqt(&scen, &cache, &solver_cfg, &x0).unwrap();
        assert_eq!(report.status, SolverStatus::Converged, "{:?}", report.constraint_slacks);
        // Penalized objective nondecreasing within each outer phase.
        for pair in report.objective_trace.windows(2) {
            if pair[0].outer == pair[1].outer {
                assert!(
                    pair[1].objective >= pair[0].objective - 1e-9 * (1.0 + pair[0].objective.abs()),
                    "trace dipped: {:?} -> {:?}",
                    pair[0],
                    pair[1]
                );
            }
        }
        // Converged means the pattern sits on the torus.
        let dist = report
            .x_final
            .coeffs()
            .iter()
            .map(|c| (c.norm() - 1.0).abs())
            .fold(0.0_f64, f64::max);
        assert!(dist < 1e-9);
        // Feasible at the end.
        for (k, s) in report.constraint_slacks.iter().enumerate() {
            assert!(*s >= -1e-6 * scen.gamma_k(k).max(1.0), "slack {k}: {s}");
        }
    }
}
