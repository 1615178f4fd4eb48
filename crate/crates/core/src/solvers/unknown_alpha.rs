//! Unknown-fading solver: minimizes the modified bound (the expected
//! per-alpha reciprocal of the quadratic-transformed information) under
//! SINR constraints, by the same penalty alternation as the quadratic
//! method. The inner subproblem is concave thanks to the composition of
//! the reciprocal-sum outer function with concave quadratic denominators;
//! their strict positivity is enforced as explicit domain constraints.

use super::barrier::{
    embed_hermitian, embed_vector, solve_qcqp, BarrierOptions, BarrierStatus, Objective,
    QcqpProblem, RealQuad, ReciprocalSum,
};
use super::{
    is_feasible, min_slack, sinr_slacks, SolverConfig, SolverError, SolverReport, SolverStatus,
    TraceEntry,
};
use crate::numerics::{cholesky_hpd, CVector, C64};
use crate::scenario::{AlphaGrid, PriorGrid, RisPattern, Scenario, RAD2_TO_DEG2};
use crate::sensing::{metric_a, modified_bcrlb, SensingMetricCache};
use crate::transforms::build_sinr_surrogates;
use std::time::Instant;

/// Strict-positivity margin for the transformed denominators.
const DOMAIN_MARGIN: f64 = 1e-9;

/// The modified bound in rad^2 evaluated from cached samples.
fn bound_rad(
    x: &CVector,
    cache: &SensingMetricCache,
    alpha: &AlphaGrid,
    scen: &Scenario,
) -> Result<f64, SolverError> {
    let cov = cache.sensing_cov(x, scen);
    let chol = cholesky_hpd(&cov)?;
    let quads: Vec<f64> = cache
        .udot_samples
        .iter()
        .map(|udot| {
            let ux = udot * x;
            let sol = chol.solve(&ux);
            ux.dotc(&sol).re
        })
        .collect();
    let mut bound = 0.0;
    for (i, wi) in alpha.weights.iter().enumerate() {
        let scale = 2.0 * scen.sensing.power * alpha.nodes[i].norm_sqr() * cache.los_scale;
        let denom: f64 = alpha.eta_weights_cond[i]
            .iter()
            .zip(&quads)
            .map(|(w, q)| w * scale * q)
            .sum::<f64>()
            + alpha.fip[i];
        if denom <= 0.0 {
            return Err(SolverError::Inner(format!(
                "bound denominator {denom:.3e} nonpositive at alpha node {i}"
            )));
        }
        bound += wi / denom;
    }
    Ok(bound)
}

/// Factored reciprocal-sum terms at the build point: every denominator is
/// the quadratic transform of its Fisher-information sum with multipliers
/// (Sigma^o)^-1 (scaled dU x), shared across alpha nodes up to scalars.
fn build_reciprocal_terms(
    x: &CVector,
    cache: &SensingMetricCache,
    alpha: &AlphaGrid,
    scen: &Scenario,
) -> Result<ReciprocalSum, SolverError> {
    let cov = cache.sensing_cov(x, scen);
    let chol = cholesky_hpd(&cov)?;
    let l_nodes = cache.udot_samples.len();
    let k_users = cache.comm_channels.len();
    let mut u_vecs = Vec::with_capacity(l_nodes);
    let mut base_consts = Vec::with_capacity(l_nodes);
    let mut shared = Vec::with_capacity(2 * k_users * l_nodes);
    for udot in &cache.udot_samples {
        let t = chol.solve(&(udot * x));
        u_vecs.push(udot.adjoint() * &t);
        base_consts.push(t.dotc(&(&cache.base_cov * &t)).re);
        for h in &cache.comm_channels {
            let g = h.adjoint() * &t;
            shared.push(embed_vector(&g));
            shared.push(embed_vector(&g.map(|c| c * C64::new(0.0, 1.0))));
        }
    }

    let s_nodes = alpha.nodes.len();
    let mut weights = Vec::with_capacity(s_nodes);
    let mut lin = Vec::with_capacity(s_nodes);
    let mut consts = Vec::with_capacity(s_nodes);
    let mut coeff = Vec::with_capacity(s_nodes);
    for i in 0..s_nodes {
        let fi_scale =
            2.0 * scen.sensing.power * alpha.nodes[i].norm_sqr() * cache.los_scale;
        let w_cond = &alpha.eta_weights_cond[i];
        let mut b = CVector::zeros(x.len());
        let mut c0 = alpha.fip[i];
        for (j, u) in u_vecs.iter().enumerate() {
            b += u.map(|v| v * (fi_scale * w_cond[j]));
            c0 -= fi_scale * w_cond[j] * base_consts[j];
        }
        let mut ci = Vec::with_capacity(shared.len());
        for j in 0..l_nodes {
            for (k, _) in cache.comm_channels.iter().enumerate() {
                let c = fi_scale * w_cond[j] * scen.comm_users[k].power;
                ci.push(c);
                ci.push(c);
            }
        }
        weights.push(alpha.weights[i]);
        lin.push(embed_vector(&b));
        consts.push(c0);
        coeff.push(ci);
    }
    Ok(ReciprocalSum {
        weights,
        lin,
        consts,
        shared,
        coeff,
    })
}

/// Penalty + quadratic-transform solver for the unknown fading case.
/// Trace objectives are the negated modified bound in deg^2, so traces
/// increase as the bound improves.
pub fn solve_unknown_alpha(
    scen: &Scenario,
    prior: &PriorGrid,
    cfg: &SolverConfig,
    x0: &RisPattern,
) -> Result<SolverReport, SolverError> {
    let start = Instant::now();
    let alpha = prior
        .alpha
        .as_ref()
        .ok_or_else(|| SolverError::Inner("prior carries no alpha lattice".into()))?;
    let cache = SensingMetricCache::build(scen, prior)?;
    let gammas: Vec<f64> = (0..scen.num_users()).map(|k| scen.gamma_k(k)).collect();

    let mut x = x0.clone();
    let slacks0 = sinr_slacks(&x, &cache, scen)?;
    if !is_feasible(&slacks0, scen, 1e-6) {
        let x_final = x.project_unit();
        return Ok(SolverReport {
            bcrlb_final: modified_bcrlb(&x_final, prior, scen)?,
            final_objective: metric_a(&x_final, &cache, scen)?,
            x_final,
            objective_trace: Vec::new(),
            constraint_slacks: slacks0,
            inner_iterations: 0,
            outer_iterations: 0,
            wall_time: start.elapsed().as_secs_f64(),
            status: SolverStatus::InfeasibleInit,
            zero_hits: 0,
        });
    }

    let b0 = bound_rad(x.coeffs(), &cache, alpha, scen)?;
    let scale = b0.abs().max(1e-300);
    let mut mu = cfg.mu0.unwrap_or(1e-3 * scale);
    let mut trace = Vec::new();
    let mut inner_total = 0usize;
    let mut outer = 0usize;
    let mut status = SolverStatus::MaxIter;
    let mut warm = false;
    loop {
        let mut prev_penalized = f64::NEG_INFINITY;
        for _ in 0..cfg.max_inner {
            let z = x.project_unit();
            // Damped rebuild if a denominator leaves its domain at the
            // build point (the transform is tight there, so this means the
            // true denominator itself collapsed).
            let mut terms = None;
            for _attempt in 0..5 {
                match bound_rad(x.coeffs(), &cache, alpha, scen) {
                    Ok(_) => {
                        terms = Some(build_reciprocal_terms(x.coeffs(), &cache, alpha, scen)?);
                        break;
                    }
                    Err(_) => {
                        let damped = (x.coeffs() + z.coeffs()).scale(0.5);
                        x = RisPattern::bounded(damped);
                    }
                }
            }
            let terms = terms
                .ok_or_else(|| SolverError::Inner("denominators stayed degenerate".into()))?;
            let constraints: Vec<RealQuad> = build_sinr_surrogates(&x, &cache, scen)?
                .into_iter()
                .zip(gammas.iter())
                .map(|(sur, gamma)| RealQuad {
                    m: embed_hermitian(&sur.m_mat),
                    lin: embed_vector(&sur.lin),
                    constant: sur.constant - gamma,
                })
                .collect();
            let problem = QcqpProblem {
                objective: Objective::ReciprocalSum {
                    terms: &terms,
                    penalty_mu: mu,
                    penalty_center: embed_vector(z.coeffs()),
                    scale,
                },
                constraints,
                n_complex: x.len(),
                domain_margin: DOMAIN_MARGIN,
            };
            let opts = if warm {
                BarrierOptions {
                    gap_tol: cfg.kkt_tol.min(1e-8),
                    ..BarrierOptions::default().warm()
                }
            } else {
                BarrierOptions {
                    gap_tol: cfg.kkt_tol.min(1e-8),
                    ..BarrierOptions::default()
                }
            };
            let sol = solve_qcqp(&problem, x.coeffs(), &opts)?;
            if sol.status == BarrierStatus::Infeasible {
                return Err(SolverError::Inner(
                    "subproblem infeasible from a feasible iterate".into(),
                ));
            }
            x = RisPattern::bounded(clamp_ball(sol.x));
            warm = true;
            let b = bound_rad(x.coeffs(), &cache, alpha, scen)?;
            let slacks = sinr_slacks(&x, &cache, scen)?;
            let dist2 = (x.coeffs() - x.project_unit().coeffs()).norm_squared();
            let penalized = (-b - mu * dist2) / scale;
            trace.push(TraceEntry {
                outer,
                inner: inner_total,
                objective: -b * RAD2_TO_DEG2,
                min_slack: min_slack(&slacks),
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            inner_total += 1;
            let done = (penalized - prev_penalized).abs() <= cfg.inner_tol * (1.0 + penalized.abs());
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
        mu = (mu * cfg.xi).min(1e6 * scale);
    }

    let x_final = x.project_unit();
    let slacks = sinr_slacks(&x_final, &cache, scen)?;
    if status == SolverStatus::Converged && !is_feasible(&slacks, scen, 1e-6) {
        status = SolverStatus::MaxIter;
    }
    Ok(SolverReport {
        bcrlb_final: modified_bcrlb(&x_final, prior, scen)?,
        final_objective: metric_a(&x_final, &cache, scen)?,
        x_final,
        objective_trace: trace,
        constraint_slacks: slacks,
        inner_iterations: inner_total,
        outer_iterations: outer,
        wall_time: start.elapsed().as_secs_f64(),
        status,
        zero_hits: 0,
    })
}

fn clamp_ball(mut x: CVector) -> CVector {
    for c in x.iter_mut() {
        let r = c.norm();
        if r > 1.0 {
            *c /= r;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioConfig;
    use crate::solvers::{feasible_init, solve_pnqt};
    use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

    fn desk_unknown(seed: u64, nodes: usize, side: usize) -> (Scenario, PriorGrid) {
        let mut cfg = ScenarioConfig::with_seed(seed);
        cfg.apply_desk_profile();
        cfg.prior = Some(crate::scenario::PriorConfig {
            eta_support: None,
            eta_nodes: Some(nodes),
            alpha_lattice_side: Some(side),
            alpha_lattice_sigmas: Some(3.0),
        });
        cfg.sensing = Some(crate::scenario::SensingConfig {
            angle_true: None,
            power: None,
            fading: Some(crate::scenario::FadingKnowledge::Unknown),
            rician_factor: None,
            alpha_factor: None,
        });
        let scen = cfg.build().unwrap();
        let prior = scen.prior_grid();
        (scen, prior)
    }

    #[test]
    fn transformed_denominators_are_tight_at_build_point() {
        let (scen, prior) = desk_unknown(120, 9, 3);
        let alpha = prior.alpha.as_ref().unwrap();
        let cache = SensingMetricCache::build(&scen, &prior).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(120);
        let x = RisPattern::random_unit(scen.n_elements(), &mut rng);
        let terms = build_reciprocal_terms(x.coeffs(), &cache, alpha, &scen).unwrap();
        let u = embed_vector(x.coeffs());
        let denoms = terms.denominators(&u);
        // Compare against the true denominators inside the modified bound.
        let b_direct = bound_rad(x.coeffs(), &cache, alpha, &scen).unwrap();
        let b_terms: f64 = terms
            .weights
            .iter()
            .zip(&denoms)
            .map(|(w, d)| w / d)
            .sum();
        assert!(
            (b_direct - b_terms).abs() / b_direct < 1e-9,
            "direct {b_direct:.6e} vs transformed {b_terms:.6e}"
        );
    }

    #[test]
    fn two_symmetric_alpha_nodes_average_the_per_alpha_bounds() {
        let (scen, mut prior) = desk_unknown(121, 9, 3);
        let a1 = C64::new(0.002, 0.0);
        let a2 = C64::new(0.0, 0.002);
        prior.alpha = Some(crate::scenario::AlphaGrid {
            nodes: vec![a1, a2],
            weights: vec![0.5, 0.5],
            eta_weights_cond: vec![prior.eta_weights.clone(), prior.eta_weights.clone()],
            fip: vec![0.0, 0.0],
        });
        let cache = SensingMetricCache::build(&scen, &prior).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(121);
        let x = RisPattern::random_unit(scen.n_elements(), &mut rng);
        let b = bound_rad(x.coeffs(), &cache, prior.alpha.as_ref().unwrap(), &scen).unwrap();
        // |a1| = |a2| so both per-alpha bounds coincide; the mean equals
        // either one.
        let mut single = prior.clone();
        single.alpha = Some(crate::scenario::AlphaGrid {
            nodes: vec![a1],
            weights: vec![1.0],
            eta_weights_cond: vec![prior.eta_weights.clone()],
            fip: vec![0.0],
        });
        let b1 = bound_rad(
            x.coeffs(),
            &SensingMetricCache::build(&scen, &single).unwrap(),
            single.alpha.as_ref().unwrap(),
            &scen,
        )
        .unwrap();
        assert!((b - b1).abs() / b1 < 1e-12);
    }

    #[test]
    fn bound_improves_from_start() {
        let (scen, prior) = desk_unknown(122, 9, 3);
        let cache = SensingMetricCache::build(&scen, &prior).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(122);
        let solver_cfg = SolverConfig {
            max_outer: 6,
            inner_tol: 1e-5,
            ..SolverConfig::default()
        };
        let x0 = feasible_init(&scen, &cache, &mut rng, &solver_cfg).unwrap();
        let b0 = modified_bcrlb(&x0, &prior, &scen).unwrap();
        let report = solve_unknown_alpha(&scen, &prior, &solver_cfg, &x0).unwrap();
        assert!(
            report.bcrlb_final <= b0 * (1.0 + 1e-9),
            "bound got worse: {} -> {}",
            b0,
            report.bcrlb_final
        );
        for (k, s) in report.constraint_slacks.iter().enumerate() {
            assert!(*s >= -1e-6 * scen.gamma_k(k).max(1.0));
        }
    }

    #[test]
    fn single_alpha_node_reduces_to_known_fading_solution() {
        let (scen, mut prior) = desk_unknown(123, 11, 1);
        // Force exactly one alpha node at the true value with the marginal
        // eta prior: minimizing the bound is then maximizing the metric.
        prior.alpha = Some(crate::scenario::AlphaGrid {
            nodes: vec![scen.sensing.alpha_true],
            weights: vec![1.0],
            eta_weights_cond: vec![prior.eta_weights.clone()],
            fip: vec![0.0],
        });
        let cache = SensingMetricCache::build(&scen, &prior).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let solver_cfg = SolverConfig {
            max_outer: 12,
            ..SolverConfig::default()
        };
        let x0 = feasible_init(&scen, &cache, &mut rng, &solver_cfg).unwrap();
        let ua = solve_unknown_alpha(&scen, &prior, &solver_cfg, &x0).unwrap();
        let qt = solve_pnqt(&scen, &cache, &solver_cfg, &x0).unwrap();
        let rel = (ua.final_objective - qt.final_objective).abs() / qt.final_objective;
        assert!(
            rel < 0.01,
            "objectives differ by {rel:.4}: {} vs {}",
            ua.final_objective,
            qt.final_objective
        );
    }
}
