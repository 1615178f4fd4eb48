//! Feasible starting points: random unit-modulus phases improved toward
//! max-min SINR slack with the linear-transform machinery.

use super::{min_slack, sinr_slacks, SolverConfig, SolverError};
use crate::numerics::CVector;
use crate::scenario::{project_unit_vector, RisPattern, Scenario};
use crate::sensing::SensingMetricCache;
use crate::transforms::{cm_linear_surrogate, optimal_multiplier, sinr_ratio_spec};
use rand::Rng;

/// Slack margin (relative to max(1, Gamma_k)) that counts as comfortably
/// feasible; gradient-based solvers need strict interiors.
const TARGET_MARGIN: f64 = 1e-3;

/// Finds a unit-modulus pattern satisfying every SINR constraint, running
/// a max-min slack ascent from random phase starts (up to
/// `cfg.feas_restarts` restarts).
pub fn feasible_init(
    scen: &Scenario,
    cache: &SensingMetricCache,
    rng: &mut impl Rng,
    cfg: &SolverConfig,
) -> Result<RisPattern, SolverError> {
    let n = scen.n_elements();
    if scen.num_users() == 0 || scen.sinr_threshold == 0.0 {
        return Ok(RisPattern::random_unit(n, rng));
    }
    let scales: Vec<f64> = (0..scen.num_users())
        .map(|k| scen.gamma_k(k).max(1.0))
        .collect();
    let normalized = |slacks: &[f64]| -> Vec<f64> {
        slacks.iter().zip(&scales).map(|(s, c)| s / c).collect()
    };

    let mut best_slack = f64::NEG_INFINITY;
    let mut best: Option<RisPattern> = None;
    for _ in 0..cfg.feas_restarts.max(1) {
        let mut x = RisPattern::random_unit(n, rng);
        // Coarse alignment steps, then a subgradient polish on the worst
        // slack; both stop as soon as the margin is met.
        for stage in 0..2 {
            for iter in 0..60 {
                let slacks = normalized(&sinr_slacks(&x, cache, scen)?);
                let worst = min_slack(&slacks);
                if worst > best_slack {
                    best_slack = worst;
                    best = Some(x.clone());
                }
                if worst >= TARGET_MARGIN {
                    return Ok(x);
                }
                x = if stage == 0 {
                    max_min_step(&x, &slacks, cache, scen)?
                } else {
                    subgradient_step(&x, &slacks, iter, cache, scen)?
                };
            }
        }
        let slacks = normalized(&sinr_slacks(&x, cache, scen)?);
        let worst = min_slack(&slacks);
        if worst > best_slack {
            best_slack = worst;
            best = Some(x);
        }
    }
    if best_slack >= 0.0 {
        return Ok(best.expect("best is set whenever best_slack is finite"));
    }
    Err(SolverError::Infeasible {
        restarts: cfg.feas_restarts,
        best_slack,
    })
}

/// One majorize-then-align step on the softmax-weighted slack: builds the
/// linear surrogates of the constraints at x and aligns the phases with
/// the weighted coefficient, emphasizing the worst users.
fn max_min_step(
    x: &RisPattern,
    normalized_slacks: &[f64],
    cache: &SensingMetricCache,
    scen: &Scenario,
) -> Result<RisPattern, SolverError> {
    let worst = min_slack(normalized_slacks);
    let spread = normalized_slacks
        .iter()
        .map(|s| s - worst)
        .fold(0.0_f64, f64::max)
        .max(1e-6);
    let tau = spread / 4.0;
    let mut weights: Vec<f64> = normalized_slacks
        .iter()
        .map(|s| (-(s - worst) / tau).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    let n = scen.n_elements();
    let mut direction = CVector::zeros(n);
    for k in 0..scen.num_users() {
        let spec = sinr_ratio_spec(k, cache, scen);
        let lambda = optimal_multiplier(&spec, x.coeffs())?;
        let lin = cm_linear_surrogate(&spec, &lambda, x.coeffs())?;
        direction += lin.d.scale(weights[k] / scen.gamma_k(k).max(1.0));
    }
    Ok(RisPattern::unit(project_unit_vector(&direction)))
}

/// Projected subgradient ascent step on the worst normalized slack.
fn subgradient_step(
    x: &RisPattern,
    normalized_slacks: &[f64],
    iter: usize,
    cache: &SensingMetricCache,
    scen: &Scenario,
) -> Result<RisPattern, SolverError> {
    let worst_idx = normalized_slacks
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .expect("called with at least one user");
    let g = crate::comm::sinr_ratio_gradient(worst_idx, x, cache, scen)?;
    let gn = g.norm().max(1e-300);
    let step = 0.5 * (x.len() as f64).sqrt() / gn / (1.0 + iter as f64 / 20.0);
    Ok(RisPattern::unit(project_unit_vector(
        &(x.coeffs() + g.scale(step)),
    )))
}
