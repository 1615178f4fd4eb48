//! Benchmark solvers: interior-point-like projected gradient ascent (IPGA)
//! and quantized-phase alternating optimization (AO).

use super::{
    is_feasible, min_slack, objective_and_slacks, sinr_slacks, SolverConfig, SolverError,
    SolverReport, SolverStatus, TraceEntry,
};
use crate::comm::sinr_ratio_gradient;
use crate::numerics::{cholesky_hpd, CMatrix, CVector, C64};
use crate::scenario::{project_unit_vector, RisPattern, Scenario};
use crate::sensing::{bcrlb, metric_a_gradient, SensingMetricCache};
use std::f64::consts::PI;
use std::time::Instant;

/// Interior-point-like benchmark: projected gradient ascent on
/// A(x) + sum_k (1/mu) log(gamma_k(x) - Gamma), the barrier weight decaying
/// on a fixed schedule. Requires a strictly feasible start; returns the
/// best feasible iterate seen.
pub fn solve_ipga(
    scen: &Scenario,
    cache: &SensingMetricCache,
    cfg: &SolverConfig,
    x0: &RisPattern,
) -> Result<SolverReport, SolverError> {
    let start = Instant::now();
    let mut x = x0.project_unit();
    let (a0, slacks0) = objective_and_slacks(&x, cache, scen)?;
    let strictly = slacks0
        .iter()
        .enumerate()
        .all(|(k, s)| s * scen.comm_users[k].power > 0.0 || scen.num_users() == 0);
    if !is_feasible(&slacks0, scen, 0.0) || !strictly {
        return Ok(SolverReport {
            x_final: x,
            objective_trace: Vec::new(),
            constraint_slacks: slacks0,
            bcrlb_final: f64::INFINITY,
            final_objective: a0,
            inner_iterations: 0,
            outer_iterations: 0,
            wall_time: start.elapsed().as_secs_f64(),
            status: SolverStatus::InfeasibleInit,
            zero_hits: 0,
        });
    }
    let obj_scale = a0.abs().max(1e-300);

    // gamma_k(x) - Gamma in absolute SINR units, for the barrier argument.
    let barrier_args = |slacks: &[f64]| -> Vec<f64> {
        slacks
            .iter()
            .enumerate()
            .map(|(k, s)| s * scen.comm_users[k].power)
            .collect()
    };
    let barrier_value = |a: f64, args: &[f64], mu: f64| -> f64 {
        a + args.iter().map(|&g| g.max(1e-300).ln()).sum::<f64>() / mu
    };

    let mut mu = cfg.mu0.unwrap_or(10.0 / obj_scale).max(1e-300);
    let mut trace = Vec::new();
    let mut best_x = x.clone();
    let mut best_a = a0;
    let mut inner_total = 0usize;
    let mut outer = 0usize;
    let steps_per_stage = (cfg.max_inner / cfg.max_outer.max(1)).max(20);
    let mut status = SolverStatus::MaxIter;
    'outer: for stage in 0..cfg.max_outer {
        outer = stage + 1;
        let mut step_scale = 1.0;
        let mut stalled = 0usize;
        for _ in 0..steps_per_stage {
            let (a, slacks) = objective_and_slacks(&x, cache, scen)?;
            let args = barrier_args(&slacks);
            let f = barrier_value(a, &args, mu);
            if a > best_a && is_feasible(&slacks, scen, 0.0) {
                best_a = a;
                best_x = x.clone();
            }
            trace.push(TraceEntry {
                outer: stage,
                inner: inner_total,
                objective: a,
                min_slack: min_slack(&slacks),
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            inner_total += 1;

            // Wirtinger ascent direction of the barrier objective.
            let mut grad = metric_a_gradient(&x, cache, scen)?;
            for k in 0..scen.num_users() {
                let gk = sinr_ratio_gradient(k, &x, cache, scen)?;
                let w = scen.comm_users[k].power / (mu * args[k].max(1e-300));
                grad += gk.scale(w);
            }
            let gn = grad.norm().max(1e-300);
            let base = (x.len() as f64).sqrt() / gn;
            let mut accepted = false;
            for _ in 0..30 {
                let trial = RisPattern::unit(project_unit_vector(
                    &(x.coeffs() + grad.scale(step_scale * base)),
                ));
                let (ta, tslacks) = objective_and_slacks(&trial, cache, scen)?;
                let targs = barrier_args(&tslacks);
                // Barrier domain requires strict feasibility.
                if targs.iter().all(|&g| g > 0.0) {
                    let tf = barrier_value(ta, &targs, mu);
                    if tf > f + 1e-12 * (1.0 + f.abs()) {
                        x = trial;
                        accepted = true;
                        break;
                    }
                }
                step_scale *= 0.5;
            }
            if !accepted {
                stalled += 1;
                if stalled >= 2 {
                    break;
                }
            } else {
                stalled = 0;
                step_scale = (step_scale * 2.0).min(4.0);
            }
            if inner_total >= cfg.max_inner {
                status = SolverStatus::MaxIter;
                break 'outer;
            }
        }
        mu *= cfg.xi;
        status = SolverStatus::Converged;
    }

    let (a_final, slacks) = objective_and_slacks(&best_x, cache, scen)?;
    Ok(SolverReport {
        bcrlb_final: bcrlb(&best_x, cache, scen, scen.sensing.alpha_true)?,
        x_final: best_x,
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

/// Cached per-pattern products for fast single-coordinate updates:
/// h_k = H_k x, rho_r = R_r x, s_l = U_l x.
struct IncrementalEval<'a> {
    cache: &'a SensingMetricCache,
    scen: &'a Scenario,
    h: Vec<CVector>,
    rho: Vec<CVector>,
    us: Vec<CVector>,
}

impl<'a> IncrementalEval<'a> {
    fn new(x: &CVector, cache: &'a SensingMetricCache, scen: &'a Scenario) -> Self {
        Self {
            cache,
            scen,
            h: cache.comm_channels.iter().map(|m| m * x).collect(),
            rho: cache.eigen_terms.iter().map(|t| &t.r_mat * x).collect(),
            us: cache.u_samples.iter().map(|u| u * x).collect(),
        }
    }

    fn commit(&mut self, coord: usize, delta: C64) {
        for (k, h) in self.h.iter_mut().enumerate() {
            h.axpy(delta, &self.cache.comm_channels[k].column(coord).clone_owned(), C64::new(1.0, 0.0));
        }
        for (r, rho) in self.rho.iter_mut().enumerate() {
            rho.axpy(delta, &self.cache.eigen_terms[r].r_mat.column(coord).clone_owned(), C64::new(1.0, 0.0));
        }
        for (l, us) in self.us.iter_mut().enumerate() {
            us.axpy(delta, &self.cache.u_samples[l].column(coord).clone_owned(), C64::new(1.0, 0.0));
        }
    }

    /// Objective and slacks after hypothetically changing coordinate
    /// `coord` by `delta` (no state mutation).
    fn evaluate(&self, coord: Option<(usize, C64)>, gammas: &[f64]) -> (f64, f64) {
        let m = self.scen.bs_antennas;
        let shift = |v: &CVector, col: &dyn Fn(usize) -> CVector| -> CVector {
            match coord {
                Some((n, d)) => v + col(n).scale_complex(d),
                None => v.clone(),
            }
        };
        let h: Vec<CVector> = (0..self.h.len())
            .map(|k| shift(&self.h[k], &|n| self.cache.comm_channels[k].column(n).clone_owned()))
            .collect();
        let rho: Vec<CVector> = (0..self.rho.len())
            .map(|r| shift(&self.rho[r], &|n| self.cache.eigen_terms[r].r_mat.column(n).clone_owned()))
            .collect();
        let us: Vec<CVector> = (0..self.us.len())
            .map(|l| shift(&self.us[l], &|n| self.cache.u_samples[l].column(n).clone_owned()))
            .collect();

        // Sensing covariance and metric A.
        let mut cov = self.cache.base_cov.clone();
        for (k, hk) in h.iter().enumerate() {
            cov.gerc(
                C64::new(self.scen.comm_users[k].power, 0.0),
                hk,
                hk,
                C64::new(1.0, 0.0),
            );
        }
        let chol = match cholesky_hpd(&cov) {
            Ok(c) => c,
            Err(_) => return (f64::NEG_INFINITY, f64::NEG_INFINITY),
        };
        let mut a = 0.0;
        for (term, rx) in self.cache.eigen_terms.iter().zip(&rho) {
            let sol = chol.solve(rx);
            a += term.kappa * rx.dotc(&sol).re;
        }

        // Pilot expectation matrix shared by every user's covariance.
        let pilot_scale = self.scen.sensing.power * self.cache.los_scale;
        let mut pilot_q = CMatrix::zeros(m, m);
        for (c, ul) in self.cache.pilot_eta_weights.iter().zip(&us) {
            pilot_q.gerc(C64::new(pilot_scale * c, 0.0), ul, ul, C64::new(1.0, 0.0));
        }
        let mut worst = f64::INFINITY;
        for k in 0..self.scen.num_users() {
            let pk = self.scen.comm_users[k].power;
            let mut ck = &cov + &pilot_q;
            ck.gerc(C64::new(-pk, 0.0), &h[k], &h[k], C64::new(1.0, 0.0));
            let chol_k = match cholesky_hpd(&ck) {
                Ok(c) => c,
                Err(_) => return (f64::NEG_INFINITY, f64::NEG_INFINITY),
            };
            let sol = chol_k.solve(&h[k]);
            let ratio = h[k].dotc(&sol).re;
            worst = worst.min(ratio - gammas[k]);
        }
        (a, worst)
    }
}

trait ScaleComplex {
    fn scale_complex(&self, c: C64) -> CVector;
}
impl ScaleComplex for CVector {
    fn scale_complex(&self, c: C64) -> CVector {
        self.map(|v| v * c)
    }
}

/// Alternating optimization over quantized phases: sweep the coordinates,
/// trying every 2^ao_bits phase level and keeping the best feasible
/// improvement, until a full sweep changes nothing.
pub fn solve_ao(
    scen: &Scenario,
    cache: &SensingMetricCache,
    cfg: &SolverConfig,
    x0: &RisPattern,
) -> Result<SolverReport, SolverError> {
    let start = Instant::now();
    let gammas: Vec<f64> = (0..scen.num_users()).map(|k| scen.gamma_k(k)).collect();
    let n = scen.n_elements();
    let levels: Vec<C64> = (0..1u32 << cfg.ao_bits)
        .map(|i| C64::from_polar(1.0, -PI + 2.0 * PI * i as f64 / (1u32 << cfg.ao_bits) as f64))
        .collect();

    // Quantize the start; keep the original if quantization breaks
    // feasibility.
    let quantized = CVector::from_fn(n, |i, _| {
        let phase = x0.coeffs()[i].arg();
        let idx = (((phase + PI) / (2.0 * PI) * levels.len() as f64).round() as usize)
            % levels.len();
        levels[idx]
    });
    let mut x = RisPattern::unit(quantized);
    let slacks_q = sinr_slacks(&x, cache, scen)?;
    if !is_feasible(&slacks_q, scen, 0.0) {
        x = x0.project_unit();
        let slacks = sinr_slacks(&x, cache, scen)?;
        if !is_feasible(&slacks, scen, 0.0) {
            let (a0, _) = objective_and_slacks(&x, cache, scen)?;
            return Ok(SolverReport {
                x_final: x,
                objective_trace: Vec::new(),
                constraint_slacks: slacks,
                bcrlb_final: f64::INFINITY,
                final_objective: a0,
                inner_iterations: 0,
                outer_iterations: 0,
                wall_time: start.elapsed().as_secs_f64(),
                status: SolverStatus::InfeasibleInit,
                zero_hits: 0,
            });
        }
    }

    let mut inc = IncrementalEval::new(x.coeffs(), cache, scen);
    let mut coeffs = x.coeffs().clone();
    let (mut current_a, _) = inc.evaluate(None, &gammas);
    let mut trace = Vec::new();
    let mut sweeps = 0usize;
    let mut moves_total = 0usize;
    loop {
        let mut improved = false;
        for coord in 0..n {
            let mut best: Option<(C64, f64)> = None;
            for &level in &levels {
                let delta = level - coeffs[coord];
                if delta.norm() < 1e-15 {
                    continue;
                }
                let (a, worst) = inc.evaluate(Some((coord, delta)), &gammas);
                if worst < 0.0 {
                    continue;
                }
                if a > current_a * (1.0 + 1e-12) + 1e-300
                    && best.map_or(true, |(_, ba)| a > ba)
                {
                    best = Some((level, a));
                }
            }
            if let Some((level, a)) = best {
                let delta = level - coeffs[coord];
                inc.commit(coord, delta);
                coeffs[coord] = level;
                current_a = a;
                improved = true;
                moves_total += 1;
            }
        }
        sweeps += 1;
        let x_now = RisPattern::unit(coeffs.clone());
        let slacks = sinr_slacks(&x_now, cache, scen)?;
        trace.push(TraceEntry {
            outer: sweeps,
            inner: moves_total,
            objective: current_a,
            min_slack: min_slack(&slacks),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if !improved || sweeps >= 50 {
            break;
        }
    }

    let x_final = RisPattern::unit(coeffs);
    let (a_final, slacks) = objective_and_slacks(&x_final, cache, scen)?;
    Ok(SolverReport {
        bcrlb_final: bcrlb(&x_final, cache, scen, scen.sensing.alpha_true)?,
        x_final,
        objective_trace: trace,
        constraint_slacks: slacks,
        final_objective: a_final,
        inner_iterations: moves_total,
        outer_iterations: sweeps,
        wall_time: start.elapsed().as_secs_f64(),
        status: SolverStatus::Converged,
        zero_hits: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{PriorGrid, ScenarioConfig};
    use crate::sensing::{metric_a, metric_a_gradient};
    use crate::solvers::{feasible_init, solve_cmlt};
    use approx::assert_relative_eq;
    use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

    fn desk(seed: u64, nodes: usize) -> (Scenario, SensingMetricCache) {
        let mut cfg = ScenarioConfig::with_seed(seed);
        cfg.apply_desk_profile();
        cfg.prior = Some(crate::scenario::PriorConfig {
            eta_support: None,
            eta_nodes: Some(nodes),
            alpha_lattice_side: None,
            alpha_lattice_sigmas: None,
        });
        let scen = cfg.build().unwrap();
        let cache = SensingMetricCache::build(&scen, &scen.prior_grid()).unwrap();
        (scen, cache)
    }

    #[test]
    fn ipga_sensing_only_is_monotone_ascent() {
        let mut cfg = ScenarioConfig::with_seed(110);
        cfg.apply_desk_profile();
        cfg.comm_users = Some(vec![]);
        let scen = cfg.build().unwrap();
        let cache = SensingMetricCache::build(&scen, &scen.prior_grid()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(110);
        let x0 = RisPattern::random_unit(scen.n_elements(), &mut rng);
        let a0 = metric_a(&x0, &cache, &scen).unwrap();
        let mut solver_cfg = SolverConfig::default();
        solver_cfg.max_outer = 3;
        solver_cfg.max_inner = 300;
        let report = solve_ipga(&scen, &cache, &solver_cfg, &x0).unwrap();
        // Barrier term vanishes with no users: projected gradient on A.
        for pair in report.objective_trace.windows(2) {
            assert!(pair[1].objective >= pair[0].objective - 1e-9 * (1.0 + pair[0].objective.abs()));
        }
        assert!(report.final_objective > a0);
    }

    #[test]
    fn ipga_barrier_gradient_matches_finite_differences() {
        let (scen, cache) = desk(111, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(111);
        let solver_cfg = SolverConfig::default();
        let x = feasible_init(&scen, &cache, &mut rng, &solver_cfg).unwrap();
        let mu = 3.0;
        // F = A + sum (1/mu) log(gamma_k - Gamma) via Wirtinger gradient.
        let value = |xv: &CVector| -> f64 {
            let xp = RisPattern::bounded(xv.clone());
            let a = metric_a(&xp, &cache, &scen).unwrap();
            let slacks = sinr_slacks(&xp, &cache, &scen).unwrap();
            a + slacks
                .iter()
                .enumerate()
                .map(|(k, s)| (s * scen.comm_users[k].power).ln())
                .sum::<f64>()
                / mu
        };
        let mut grad = metric_a_gradient(&x, &cache, &scen).unwrap();
        let slacks = sinr_slacks(&x, &cache, &scen).unwrap();
        for k in 0..scen.num_users() {
            let gk = sinr_ratio_gradient(k, &x, &cache, &scen).unwrap();
            grad += gk.scale(
                scen.comm_users[k].power / (mu * slacks[k] * scen.comm_users[k].power),
            );
        }
        // Interior point for the finite-difference probe.
        let x_in = x.coeffs().scale(0.995);
        let grad_in = {
            let xp = RisPattern::bounded(x_in.clone());
            let mut g = metric_a_gradient(&xp, &cache, &scen).unwrap();
            let s = sinr_slacks(&xp, &cache, &scen).unwrap();
            for k in 0..scen.num_users() {
                let gk = sinr_ratio_gradient(k, &xp, &cache, &scen).unwrap();
                g += gk.scale(scen.comm_users[k].power / (mu * s[k] * scen.comm_users[k].power));
            }
            g
        };
        let h = 1e-7;
        for probe in 0..3 {
            let mut dx = CVector::zeros(x_in.len());
            dx[probe * 7] = if probe % 2 == 0 {
                C64::new(h, 0.0)
            } else {
                C64::new(0.0, h)
            };
            let fd = (value(&(&x_in + &dx)) - value(&(&x_in - &dx))) / (2.0 * h);
            let analytic = 2.0 * grad_in.dotc(&dx).re / h;
            assert!(
                (fd - analytic).abs() / (1.0 + fd.abs()) < 1e-5,
                "fd {fd:.6e} vs {analytic:.6e}"
            );
        }
        let _ = grad;
    }

    #[test]
    fn ao_single_coordinate_matches_dense_scan() {
        let mut cfg = ScenarioConfig::with_seed(112);
        cfg.apply_desk_profile();
        cfg.comm_users = Some(vec![]);
        let scen = cfg.build().unwrap();
        let prior = PriorGrid::weighted(vec![1.2], vec![1.0]);
        let cache = SensingMetricCache::build(&scen, &prior).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(112);
        let x0 = RisPattern::random_unit(scen.n_elements(), &mut rng);
        // Dense 3600-level scan of coordinate 0 versus the evaluator.
        let inc = IncrementalEval::new(x0.coeffs(), &cache, &scen);
        let mut best_dense = f64::NEG_INFINITY;
        let mut best_phase = 0.0;
        for i in 0..3600 {
            let phase = -PI + 2.0 * PI * i as f64 / 3600.0;
            let delta = C64::from_polar(1.0, phase) - x0.coeffs()[0];
            let (a, _) = inc.evaluate(Some((0, delta)), &[]);
            if a > best_dense {
                best_dense = a;
                best_phase = phase;
            }
        }
        // The 256-level argmax must be within one quantization step.
        let mut best_q = f64::NEG_INFINITY;
        let mut best_q_phase = 0.0;
        for i in 0..256 {
            let phase = -PI + 2.0 * PI * i as f64 / 256.0;
            let delta = C64::from_polar(1.0, phase) - x0.coeffs()[0];
            let (a, _) = inc.evaluate(Some((0, delta)), &[]);
            if a > best_q {
                best_q = a;
                best_q_phase = phase;
            }
        }
        let mut diff = (best_q_phase - best_phase).abs();
        if diff > PI {
            diff = 2.0 * PI - diff;
        }
        assert!(diff <= 2.0 * PI / 256.0 + 2.0 * PI / 3600.0);

        // And the evaluator agrees with the direct metric.
        let mut xv = x0.coeffs().clone();
        xv[0] = C64::from_polar(1.0, best_q_phase);
        let direct = metric_a(&RisPattern::unit(xv), &cache, &scen).unwrap();
        assert_relative_eq!(best_q, direct, max_relative = 1e-9);
    }

    #[test]
    fn incremental_evaluator_matches_direct_metrics() {
        let (scen, cache) = desk(115, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(115);
        let x = RisPattern::random_unit(scen.n_elements(), &mut rng);
        let gammas: Vec<f64> = (0..scen.num_users()).map(|k| scen.gamma_k(k)).collect();
        let inc = IncrementalEval::new(x.coeffs(), &cache, &scen);
        let (a, worst) = inc.evaluate(None, &gammas);
        let a_direct = metric_a(&x, &cache, &scen).unwrap();
        assert_relative_eq!(a, a_direct, max_relative = 1e-10);
        let slacks = sinr_slacks(&x, &cache, &scen).unwrap();
        let worst_direct = slacks.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_relative_eq!(worst, worst_direct, max_relative = 1e-9);
        // And after a hypothetical single-coordinate change.
        let delta = C64::from_polar(1.0, 1.0) - x.coeffs()[3];
        let (a2, worst2) = inc.evaluate(Some((3, delta)), &gammas);
        let mut xv = x.coeffs().clone();
        xv[3] = C64::from_polar(1.0, 1.0);
        let x2 = RisPattern::unit(xv);
        assert_relative_eq!(a2, metric_a(&x2, &cache, &scen).unwrap(), max_relative = 1e-10);
        let slacks2 = sinr_slacks(&x2, &cache, &scen).unwrap();
        assert_relative_eq!(
            worst2,
            slacks2.iter().cloned().fold(f64::INFINITY, f64::min),
            max_relative = 1e-9
        );
    }

    #[test]
    fn ao_is_monotone_and_terminates() {
        let (scen, cache) = desk(113, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(113);
        let solver_cfg = SolverConfig {
            ao_bits: 4,
            ..SolverConfig::default()
        };
        let x0 = feasible_init(&scen, &cache, &mut rng, &solver_cfg).unwrap();
        let report = solve_ao(&scen, &cache, &solver_cfg, &x0).unwrap();
        for pair in report.objective_trace.windows(2) {
            assert!(pair[1].objective >= pair[0].objective - 1e-12 * (1.0 + pair[0].objective.abs()));
        }
        for (k, s) in report.constraint_slacks.iter().enumerate() {
            assert!(*s >= -1e-9 * scen.gamma_k(k).max(1.0), "slack {k} = {s}");
        }
        assert!(report.outer_iterations <= 50);
    }

    #[test]
    fn ipga_trails_cmlt_on_desk_scenario() {
        let (scen, cache) = desk(114, 15);
        let mut rng = ChaCha8Rng::seed_from_u64(114);
        let solver_cfg = SolverConfig::default();
        let x0 = feasible_init(&scen, &cache, &mut rng, &solver_cfg).unwrap();
        let cmlt = solve_cmlt(&scen, &cache, &solver_cfg, &x0).unwrap();
        let ipga = solve_ipga(&scen, &cache, &solver_cfg, &x0).unwrap();
        assert!(
            ipga.bcrlb_final >= cmlt.bcrlb_final * 0.95,
            "ipga {} vs cmlt {}",
            ipga.bcrlb_final,
            cmlt.bcrlb_final
        );
    }
}
