//! Received-signal simulation, Gaussian likelihoods, grid posteriors over
//! the angle (and optionally the fading coefficient), maximum-likelihood
//! estimation, and the Monte Carlo MSE harness.
//!
//! Posterior weights live in log domain with max-shift normalization:
//! M-dimensional Gaussian likelihoods underflow linear weights
//! immediately.

use crate::numerics::{cholesky_hpd, CVector, NumericsError, C64};
use crate::scenario::{
    sample_cn, sample_rician_sensing_channel, sensing_matrix, FadingKnowledge, PriorGrid,
    RisPattern, Scenario, RAD2_TO_DEG2,
};
use crate::sensing::{bcrlb, sensing_interference_cov, SensingError, SensingMetricCache};
use crate::solvers::SolverError;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use rayon::prelude::*;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BayesError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("posterior degenerated: every node has zero likelihood")]
    DegeneratePosterior,
    #[error("operation requires a joint (eta, alpha) posterior")]
    NotJoint,
}

/// Grid posterior over eta (length L) or jointly over (alpha, eta)
/// (row-major, index i * L + j).
#[derive(Debug, Clone)]
pub struct PosteriorState {
    pub grid: PriorGrid,
    pub log_weights: Vec<f64>,
    pub iteration: usize,
}

impl PosteriorState {
    pub fn from_prior(prior: &PriorGrid) -> Self {
        let log_weights = match &prior.alpha {
            Some(alpha) => {
                let l = prior.eta_nodes.len();
                let mut lw = Vec::with_capacity(alpha.nodes.len() * l);
                for (i, wi) in alpha.weights.iter().enumerate() {
                    for j in 0..l {
                        lw.push((wi * alpha.eta_weights_cond[i][j]).max(1e-300).ln());
                    }
                }
                lw
            }
            None => prior
                .eta_weights
                .iter()
                .map(|w| w.max(1e-300).ln())
                .collect(),
        };
        let mut state = Self {
            grid: prior.clone(),
            log_weights,
            iteration: 0,
        };
        state.normalize();
        state
    }

    pub fn is_joint(&self) -> bool {
        self.grid.alpha.is_some()
    }

    fn normalize(&mut self) {
        let max = self
            .log_weights
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let log_sum = max
            + self
                .log_weights
                .iter()
                .map(|lw| (lw - max).exp())
                .sum::<f64>()
                .ln();
        for lw in self.log_weights.iter_mut() {
            *lw -= log_sum;
        }
    }

    /// Normalized linear weights.
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|lw| lw.exp()).collect()
    }

    /// Re-derives a prior grid from the posterior: same nodes, new weights.
    pub fn to_prior_grid(&self) -> PriorGrid {
        let w = self.weights();
        let mut grid = self.grid.clone();
        match &mut grid.alpha {
            Some(alpha) => {
                let l = grid.eta_nodes.len();
                let s = alpha.nodes.len();
                let mut alpha_w = vec![0.0; s];
                let mut eta_w = vec![0.0; l];
                for i in 0..s {
                    for j in 0..l {
                        alpha_w[i] += w[i * l + j];
                        eta_w[j] += w[i * l + j];
                    }
                }
                for i in 0..s {
                    let row: Vec<f64> = if alpha_w[i] > 0.0 {
                        (0..l).map(|j| w[i * l + j] / alpha_w[i]).collect()
                    } else {
                        vec![1.0 / l as f64; l]
                    };
                    alpha.eta_weights_cond[i] = row;
                }
                alpha.weights = alpha_w;
                grid.eta_weights = eta_w;
            }
            None => {
                grid.eta_weights = w;
            }
        }
        grid
    }

    /// Posterior mass within `half_width` radians of `eta0`.
    pub fn eta_mass_near(&self, eta0: f64, half_width: f64) -> f64 {
        let (eta_m, _) = marginals(self);
        self.grid
            .eta_nodes
            .iter()
            .zip(&eta_m)
            .filter(|(&node, _)| (node - eta0).abs() <= half_width)
            .map(|(_, w)| w)
            .sum()
    }
}

/// Simulates one received symbol: pilot through the (possibly Rician)
/// sensing channel plus Gaussian communication symbols and noise. The
/// pilot is sqrt(p) with zero phase; `_t` names the symbol slot but the
/// symbols are i.i.d.
pub fn simulate_rx(
    x: &RisPattern,
    scen: &Scenario,
    rng: &mut impl Rng,
    _t: usize,
) -> CVector {
    let channel = sample_rician_sensing_channel(
        scen.sensing.eta_true,
        scen.rician_zeta,
        scen.sensing.alpha_true,
        &scen.g,
        &scen.geometry,
        rng,
    )
    .expect("scenario validated the Rician factor");
    let pilot = scen.sensing.power.sqrt();
    let mut y = channel * x.coeffs() * C64::new(pilot, 0.0);
    for k in 0..scen.num_users() {
        let symbol = sample_cn(rng, scen.comm_users[k].power);
        y += scen.comm_matrix(k) * x.coeffs() * symbol;
    }
    for i in 0..y.len() {
        y[i] += sample_cn(rng, scen.noise_power);
    }
    y
}

/// Complex Gaussian log-density of y under hypothesis (eta, alpha):
/// -log det(pi Sigma) - (y - m)^H Sigma^-1 (y - m), with the mean through
/// the LoS fraction of the sensing channel.
pub fn log_likelihood(
    y: &CVector,
    eta: f64,
    alpha: C64,
    x: &RisPattern,
    scen: &Scenario,
) -> Result<f64, BayesError> {
    let cov = sensing_interference_cov(x, scen);
    let chol = cholesky_hpd(&cov)?;
    let logdet = chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|d| 2.0 * d.re.ln())
        .sum::<f64>();
    let mean = mean_vector(eta, alpha, x, scen);
    let r = y - mean;
    let sol = chol.solve(&r);
    let quad = r.dotc(&sol).re;
    Ok(-(y.len() as f64) * PI.ln() - logdet - quad)
}

fn mean_vector(eta: f64, alpha: C64, x: &RisPattern, scen: &Scenario) -> CVector {
    let los_amp = (1.0 / (1.0 + scen.rician_zeta)).sqrt();
    sensing_matrix(eta, &scen.g, &scen.geometry)
        * x.coeffs()
        * (alpha * scen.sensing.power.sqrt() * los_amp)
}

/// One Bayes update: adds the per-node log-likelihood of y and
/// renormalizes.
pub fn posterior_update(
    state: &PosteriorState,
    y: &CVector,
    x: &RisPattern,
    scen: &Scenario,
) -> Result<PosteriorState, BayesError> {
    let cov = sensing_interference_cov(x, scen);
    let chol = cholesky_hpd(&cov)?;
    let los_amp = (1.0 / (1.0 + scen.rician_zeta)).sqrt();
    let pilot = scen.sensing.power.sqrt();
    // U(eta_j) x is alpha-independent; share it across the alpha lattice.
    let node_responses: Vec<CVector> = state
        .grid
        .eta_nodes
        .iter()
        .map(|&eta| (sensing_matrix(eta, &scen.g, &scen.geometry) * x.coeffs()).scale(pilot * los_amp))
        .collect();
    let mut next = state.clone();
    let quad = |mean_scale: C64, j: usize| -> f64 {
        let r = y - node_responses[j].map(|v| v * mean_scale);
        let sol = chol.solve(&r);
        r.dotc(&sol).re
    };
    match &state.grid.alpha {
        Some(alpha) => {
            let l = state.grid.eta_nodes.len();
            for (i, a) in alpha.nodes.iter().enumerate() {
                for j in 0..l {
                    next.log_weights[i * l + j] -= quad(*a, j);
                }
            }
        }
        None => {
            let a = scen.sensing.alpha_true;
            for j in 0..state.grid.eta_nodes.len() {
                next.log_weights[j] -= quad(a, j);
            }
        }
    }
    if next.log_weights.iter().all(|lw| !lw.is_finite()) {
        return Err(BayesError::DegeneratePosterior);
    }
    next.normalize();
    next.iteration += 1;
    Ok(next)
}

/// Marginal posteriors: over eta always, over alpha when the state is
/// joint.
pub fn marginals(state: &PosteriorState) -> (Vec<f64>, Option<Vec<f64>>) {
    let w = state.weights();
    match &state.grid.alpha {
        Some(alpha) => {
            let l = state.grid.eta_nodes.len();
            let s = alpha.nodes.len();
            let mut eta_m = vec![0.0; l];
            let mut alpha_m = vec![0.0; s];
            for i in 0..s {
                for j in 0..l {
                    eta_m[j] += w[i * l + j];
                    alpha_m[i] += w[i * l + j];
                }
            }
            (eta_m, Some(alpha_m))
        }
        None => (w, None),
    }
}

/// Maximum-likelihood estimate of the angle (and the fading coefficient
/// when unknown): grid argmax followed by one golden-section refinement.
#[derive(Debug, Clone)]
pub struct MleEstimate {
    pub eta_hat: f64,
    pub alpha_hat: Option<C64>,
    /// Argmax landed on the first or last grid node.
    pub boundary: bool,
    /// Another local maximum ties the global one within 1e-9 relative.
    pub ambiguous: bool,
}

/// Golden-section refinement tolerance in radians.
pub const MLE_REFINE_TOL: f64 = 1e-4;

/// Precomputed state for repeated MLE evaluations with a fixed pattern
/// and search grid: solved node responses make each trial's grid pass
/// O(M) per node.
pub struct MleContext<'a> {
    scen: &'a Scenario,
    x: RisPattern,
    chol: nalgebra::Cholesky<C64, nalgebra::Dyn>,
    grid: &'a [f64],
    /// (v_j, Sigma^-1 v_j, v_j^H Sigma^-1 v_j) per grid node.
    node_solved: Vec<(CVector, CVector, f64)>,
    unknown_alpha: bool,
    mean_scale: f64,
}

impl<'a> MleContext<'a> {
    pub fn new(
        x: &RisPattern,
        scen: &'a Scenario,
        search_grid: &'a [f64],
    ) -> Result<Self, BayesError> {
        assert!(search_grid.len() >= 3, "search grid too coarse");
        let cov = sensing_interference_cov(x, scen);
        let chol = cholesky_hpd(&cov)?;
        let mean_scale =
            scen.sensing.power.sqrt() * (1.0 / (1.0 + scen.rician_zeta)).sqrt();
        let node_solved = search_grid
            .iter()
            .map(|&eta| {
                let v = (sensing_matrix(eta, &scen.g, &scen.geometry) * x.coeffs())
                    .scale(mean_scale);
                let sol = chol.solve(&v);
                let vv = v.dotc(&sol).re;
                (v, sol, vv)
            })
            .collect();
        Ok(Self {
            scen,
            x: x.clone(),
            chol,
            grid: search_grid,
            node_solved,
            unknown_alpha: scen.sensing.fading == FadingKnowledge::Unknown,
            mean_scale,
        })
    }

    fn score_from_parts(&self, y_quad: f64, vy: C64, vv: f64, alpha: C64) -> f64 {
        if self.unknown_alpha {
            if vv <= 0.0 {
                return -y_quad;
            }
            -(y_quad - vy.norm_sqr() / vv)
        } else {
            // -(y - a v)^H S^-1 (y - a v) expanded around the cached parts.
            -(y_quad - 2.0 * (alpha.conj() * vy).re + alpha.norm_sqr() * vv)
        }
    }

    fn score_at(&self, eta: f64, y: &CVector, y_sol: &CVector, y_quad: f64) -> f64 {
        let v = (sensing_matrix(eta, &self.scen.g, &self.scen.geometry) * self.x.coeffs())
            .scale(self.mean_scale);
        let vy = v.dotc(y_sol);
        let vv = v.dotc(&self.chol.solve(&v)).re;
        let _ = y;
        self.score_from_parts(y_quad, vy, vv, self.scen.sensing.alpha_true)
    }

    pub fn estimate(&self, y: &CVector) -> MleEstimate {
        let y_sol = self.chol.solve(y);
        let y_quad = y.dotc(&y_sol).re;
        let alpha = self.scen.sensing.alpha_true;
        let values: Vec<f64> = self
            .node_solved
            .iter()
            .map(|(v, _, vv)| self.score_from_parts(y_quad, v.dotc(&y_sol), *vv, alpha))
            .collect();
        let (best_idx, best_val) = values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, v)| (i, *v))
            .unwrap();
        let boundary = best_idx == 0 || best_idx == self.grid.len() - 1;
        let mut ambiguous = false;
        for j in 1..self.grid.len() - 1 {
            if (j as i64 - best_idx as i64).abs() <= 2 {
                continue;
            }
            if values[j] >= values[j - 1]
                && values[j] >= values[j + 1]
                && (best_val - values[j]).abs() <= 1e-9 * (1.0 + best_val.abs())
            {
                ambiguous = true;
            }
        }
        let lo = self.grid[best_idx.saturating_sub(1)];
        let hi = self.grid[(best_idx + 1).min(self.grid.len() - 1)];
        let eta_hat = if hi > lo {
            golden_section_max(
                |eta| self.score_at(eta, y, &y_sol, y_quad),
                lo,
                hi,
                MLE_REFINE_TOL,
            )
        } else {
            self.grid[best_idx]
        };
        let alpha_hat = if self.unknown_alpha {
            let v = (sensing_matrix(eta_hat, &self.scen.g, &self.scen.geometry)
                * self.x.coeffs())
            .scale(self.mean_scale);
            let vv = v.dotc(&self.chol.solve(&v)).re;
            let vy = v.dotc(&y_sol);
            Some(if vv > 0.0 { vy / vv } else { C64::new(0.0, 0.0) })
        } else {
            None
        };
        MleEstimate {
            eta_hat,
            alpha_hat,
            boundary,
            ambiguous,
        }
    }
}

pub fn mle_estimate(
    y: &CVector,
    x: &RisPattern,
    scen: &Scenario,
    search_grid: &[f64],
) -> Result<MleEstimate, BayesError> {
    Ok(MleContext::new(x, scen, search_grid)?.estimate(y))
}

#[cfg(test)]
fn mle_estimate_reference(
    y: &CVector,
    x: &RisPattern,
    scen: &Scenario,
    search_grid: &[f64],
) -> Result<MleEstimate, BayesError> {
    assert!(search_grid.len() >= 3, "search grid too coarse");
    let cov = sensing_interference_cov(x, scen);
    let chol = cholesky_hpd(&cov)?;
    let unknown_alpha = scen.sensing.fading == FadingKnowledge::Unknown;
    let pilot = scen.sensing.power.sqrt();
    let los_amp = (1.0 / (1.0 + scen.rician_zeta)).sqrt();
    let y_sol = chol.solve(y);
    let y_quad = y.dotc(&y_sol).re;

    // Negative quadratic part of the log-likelihood (all other terms are
    // eta-independent); profiled over alpha when unknown.
    let score = |eta: f64| -> f64 {
        let v = (sensing_matrix(eta, &scen.g, &scen.geometry) * x.coeffs()).scale(pilot * los_amp);
        let v_sol = chol.solve(&v);
        if unknown_alpha {
            let vv = v.dotc(&v_sol).re;
            if vv <= 0.0 {
                return -y_quad;
            }
            let vy = v.dotc(&y_sol);
            -(y_quad - vy.norm_sqr() / vv)
        } else {
            let a = scen.sensing.alpha_true;
            let r = y - v.map(|e| e * a);
            let r_sol = chol.solve(&r);
            -r.dotc(&r_sol).re
        }
    };

    let values: Vec<f64> = search_grid.iter().map(|&eta| score(eta)).collect();
    let (best_idx, best_val) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, v)| (i, *v))
        .unwrap();
    let boundary = best_idx == 0 || best_idx == search_grid.len() - 1;
    // A distant local maximum within relative 1e-9 of the peak flags
    // ambiguity (e.g. symmetric two-peak likelihoods).
    let mut ambiguous = false;
    for j in 1..search_grid.len() - 1 {
        if (j as i64 - best_idx as i64).abs() <= 2 {
            continue;
        }
        if values[j] >= values[j - 1]
            && values[j] >= values[j + 1]
            && (best_val - values[j]).abs() <= 1e-9 * (1.0 + best_val.abs())
        {
            ambiguous = true;
        }
    }

    // Golden-section polish within the bracketing nodes.
    let lo = search_grid[best_idx.saturating_sub(1)];
    let hi = search_grid[(best_idx + 1).min(search_grid.len() - 1)];
    let eta_hat = if hi > lo {
        golden_section_max(score, lo, hi, MLE_REFINE_TOL)
    } else {
        search_grid[best_idx]
    };

    let alpha_hat = if unknown_alpha {
        let v = (sensing_matrix(eta_hat, &scen.g, &scen.geometry) * x.coeffs())
            .scale(pilot * los_amp);
        let v_sol = chol.solve(&v);
        let vv = v.dotc(&v_sol).re;
        let vy = v.dotc(&y_sol);
        Some(if vv > 0.0 {
            vy / vv
        } else {
            C64::new(0.0, 0.0)
        })
    } else {
        None
    };
    Ok(MleEstimate {
        eta_hat,
        alpha_hat,
        boundary,
        ambiguous,
    })
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while (hi - lo) > tol {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Default MLE search grid: 721 nodes over the prior support.
pub fn default_search_grid(scen: &Scenario) -> Vec<f64> {
    let (lo, hi) = scen.prior_support();
    (0..721)
        .map(|i| lo + (hi - lo) * i as f64 / 720.0)
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct MseResult {
    pub mse_deg2: f64,
    pub bcrlb_deg2: f64,
    pub trials: usize,
    /// Standard error of the MSE estimate, deg^2.
    pub std_error_deg2: f64,
}

/// Monte Carlo MSE of the angle MLE over independent trials, paired with
/// the bound for the same pattern. Trials use per-trial RNG streams split
/// from the master seed and run in parallel; the reduction is by trial
/// index, so results are independent of thread scheduling.
pub fn monte_carlo_mse(
    scen: &Scenario,
    x: &RisPattern,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<MseResult, BayesError> {
    assert!(trials >= 1);
    let grid = default_search_grid(scen);
    let ctx = MleContext::new(x, scen, &grid)?;
    let trial_seeds: Vec<u64> = (0..trials).map(|_| rng.gen()).collect();
    let errors: Vec<f64> = trial_seeds
        .par_iter()
        .map(|&seed| {
            let mut trial_rng = ChaCha8Rng::seed_from_u64(seed);
            let y = simulate_rx(x, scen, &mut trial_rng, 0);
            let est = ctx.estimate(&y);
            (est.eta_hat - scen.sensing.eta_true).powi(2)
        })
        .collect();
    let mse_rad2 = errors.iter().sum::<f64>() / trials as f64;
    let var_of_sq = errors
        .iter()
        .map(|e| (e - mse_rad2).powi(2))
        .sum::<f64>()
        / trials as f64;
    let se_rad2 = (var_of_sq / trials as f64).sqrt();
    let prior = scen.prior_grid();
    let cache = SensingMetricCache::build(scen, &prior)?;
    let bound = bcrlb(x, &cache, scen, scen.sensing.alpha_true)?;
    Ok(MseResult {
        mse_deg2: mse_rad2 * RAD2_TO_DEG2,
        bcrlb_deg2: bound,
        trials,
        std_error_deg2: se_rad2 * RAD2_TO_DEG2,
    })
}

/// One pass of the adaptive sensing loop: optimize the pattern for the
/// current prior, observe one symbol, update the posterior, re-derive the
/// prior. `optimize` maps the current prior to the next pattern.
pub fn adaptive_sensing_loop<F>(
    scen: &Scenario,
    initial_prior: &PriorGrid,
    iterations: usize,
    rng: &mut impl Rng,
    mut optimize: F,
) -> Result<Vec<PosteriorState>, BayesError>
where
    F: FnMut(&PriorGrid) -> Result<RisPattern, BayesError>,
{
    let mut states = vec![PosteriorState::from_prior(initial_prior)];
    for t in 0..iterations {
        let prior = states.last().unwrap().to_prior_grid();
        let x = optimize(&prior)?;
        let y = simulate_rx(&x, scen, rng, t);
        let next = posterior_update(states.last().unwrap(), &y, &x, scen)?;
        states.push(next);
    }
    Ok(states)
}
