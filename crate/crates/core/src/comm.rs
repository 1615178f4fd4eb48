//! Communication-side metrics: interference covariances, LMMSE combiners,
//! SINR, and reflecting beampatterns.

use crate::numerics::{cholesky_hpd, CMatrix, CVector, NumericsError};
use crate::scenario::{array_response, RisPattern, Scenario};
use crate::sensing::SensingMetricCache;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CommError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("user index {0} out of range (K = {1})")]
    UserIndex(usize, usize),
}

/// Unit-norm receive combiners for every communication user plus the
/// sensing-side combiner used for beampattern comparison.
#[derive(Debug, Clone)]
pub struct CombinerSet {
    pub comm: Vec<CVector>,
    pub sensing: CVector,
}

/// Covariance of interference plus noise seen by user k: the other users,
/// the expected pilot return over the eta prior, and the noise floor.
pub fn comm_interference_cov(
    k: usize,
    x: &RisPattern,
    cache: &SensingMetricCache,
    scen: &Scenario,
) -> Result<CMatrix, CommError> {
    if k >= scen.num_users() {
        return Err(CommError::UserIndex(k, scen.num_users()));
    }
    let xv = x.coeffs();
    let mut cov = cache.base_cov.clone();
    for (j, h) in cache.comm_channels.iter().enumerate() {
        if j == k {
            continue;
        }
        let hx = h * xv;
        add_rank_one(&mut cov, &hx, scen.comm_users[j].power);
    }
    let pilot_scale = scen.sensing.power * cache.los_scale;
    for (c, u) in cache.pilot_eta_weights.iter().zip(&cache.u_samples) {
        let ux = u * xv;
        add_rank_one(&mut cov, &ux, pilot_scale * c);
    }
    Ok(cov)
}

fn add_rank_one(cov: &mut CMatrix, v: &CVector, weight: f64) {
    let m = v.len();
    for j in 0..m {
        let c = v[j].conj() * weight;
        for i in 0..m {
            cov[(i, j)] += v[i] * c;
        }
    }
}

/// LMMSE receive combiner: (Sigma_k^c)^-1 H_k x, normalized.
pub fn lmmse_combiner(
    k: usize,
    x: &RisPattern,
    cache: &SensingMetricCache,
    scen: &Scenario,
) -> Result<CVector, CommError> {
    let cov = comm_interference_cov(k, x, cache, scen)?;
    let hx = &cache.comm_channels[k] * x.coeffs();
    let w = crate::numerics::solve_hpd_vec(&cov, &hx)?;
    let norm = w.norm();
    Ok(if norm > 0.0 { w.unscale(norm) } else { w })
}

/// SINR of user k at the optimal combiner:
/// p_k (H_k x)^H (Sigma_k^c)^-1 (H_k x).
pub fn sinr(
    k: usize,
    x: &RisPattern,
    cache: &SensingMetricCache,
    scen: &Scenario,
) -> Result<f64, CommError> {
    let cov = comm_interference_cov(k, x, cache, scen)?;
    let hx = &cache.comm_channels[k] * x.coeffs();
    let sol = crate::numerics::solve_hpd_vec(&cov, &hx)?;
    Ok(scen.comm_users[k].power * hx.dotc(&sol).re)
}

/// SINR of user k for a given (not necessarily optimal) unit-norm combiner,
/// evaluated from the pre-combining definition.
pub fn sinr_at_combiner(
    k: usize,
    w: &CVector,
    x: &RisPattern,
    cache: &SensingMetricCache,
    scen: &Scenario,
) -> Result<f64, CommError> {
    let cov = comm_interference_cov(k, x, cache, scen)?;
    let hx = &cache.comm_channels[k] * x.coeffs();
    let signal = scen.comm_users[k].power * w.dotc(&hx).norm_sqr();
    let denom = w.dotc(&(&cov * w)).re;
    Ok(signal / denom)
}

/// Wirtinger gradient of gamma_k(x) / p_k with respect to conjugate(x);
/// the total derivative is d(gamma_k/p_k) = 2 Re(g^H dx).
pub fn sinr_ratio_gradient(
    k: usize,
    x: &RisPattern,
    cache: &SensingMetricCache,
    scen: &Scenario,
) -> Result<CVector, CommError> {
    let xv = x.coeffs();
    let cov = comm_interference_cov(k, x, cache, scen)?;
    let chol = cholesky_hpd(&cov)?;
    let hx = &cache.comm_channels[k] * xv;
    let u = chol.solve(&hx);
    let mut grad = cache.comm_channels[k].adjoint() * &u;
    for (j, h) in cache.comm_channels.iter().enumerate() {
        if j == k {
            continue;
        }
        let hjx = h * xv;
        let coupling = u.dotc(&hjx) * scen.comm_users[j].power;
        grad -= (h.adjoint() * &u).map(|e| e * coupling);
    }
    let pilot_scale = scen.sensing.power * cache.los_scale;
    for (c, um) in cache.pilot_eta_weights.iter().zip(&cache.u_samples) {
        let ux = um * xv;
        let coupling = u.dotc(&ux) * (pilot_scale * c);
        grad -= (um.adjoint() * &u).map(|e| e * coupling);
    }
    Ok(grad)
}

/// Reflecting beampattern |w^H G diag(x) v(phi)|^2 over an angle grid,
/// in dB relative to the peak.
pub fn beampattern(
    w: &CVector,
    x: &RisPattern,
    phi_grid: &[f64],
    scen: &Scenario,
) -> Vec<f64> {
    // w^H G diag(x) v(phi) = (diag(x)^H G^H w)^H v(phi)
    let raw = beampattern_power(w, x, phi_grid, scen);
    let peak = raw.iter().cloned().fold(f64::MIN, f64::max).max(1e-300);
    raw.iter().map(|q| 10.0 * (q / peak).max(1e-30).log10()).collect()
}

/// Raw (not normalized) beampattern power over an angle grid.
pub fn beampattern_power(
    w: &CVector,
    x: &RisPattern,
    phi_grid: &[f64],
    scen: &Scenario,
) -> Vec<f64> {
    // w^H G diag(x) v(phi) = sum_n (G^H w)_n^* x_n v_n(phi)
    let gw = scen.g.adjoint() * w;
    let weighted = CVector::from_fn(scen.n_elements(), |n, _| gw[n] * x.coeffs()[n].conj());
    phi_grid
        .iter()
        .map(|&phi| {
            let v = array_response(phi, &scen.geometry);
            weighted.dotc(&v).norm_sqr()
        })
        .collect()
}

/// Default beampattern grid: 721 points over [0, 180] degrees.
pub fn default_phi_grid() -> Vec<f64> {
    (0..721).map(|i| (i as f64 * 0.25).to_radians()).collect()
}

/// Sensing-side combiner: principal eigenvector of
/// (Sigma^o)^-1 E[(dU x)(dU x)^H], computed through the equivalent
/// Hermitian generalized eigenproblem E u = mu Sigma^o u.
pub fn sensing_combiner(
    x: &RisPattern,
    cache: &SensingMetricCache,
    scen: &Scenario,
) -> Result<CVector, CommError> {
    let xv = x.coeffs();
    let m = scen.bs_antennas;
    let mut expect = CMatrix::zeros(m, m);
    for (w, udot) in cache.eta_weights.iter().zip(&cache.udot_samples) {
        let ux = udot * xv;
        add_rank_one(&mut expect, &ux, *w);
    }
    let cov = cache.sensing_cov(xv, scen);
    // With Sigma = L L^H, the problem E u = mu Sigma u maps to the ordinary
    // Hermitian problem (L^-1 E L^-H) y = mu y with u = L^-H y.
    let chol = cholesky_hpd(&cov)?;
    let l = chol.l();
    let linv = l
        .clone()
        .solve_lower_triangular(&CMatrix::identity(m, m))
        .expect("triangular factor is invertible after cholesky_hpd");
    let reduced = &linv * expect * linv.adjoint();
    let (_, vecs) = crate::numerics::hermitian_eig(&((&reduced + reduced.adjoint()).scale(0.5)))?;
    let y = vecs.column(0).clone_owned();
    let u = linv.adjoint() * y;
    let norm = u.norm();
    Ok(if norm > 0.0 { u.unscale(norm) } else { u })
}

/// Builds the full combiner set used for beampattern plots.
pub fn combiner_set(
    x: &RisPattern,
    cache: &SensingMetricCache,
    scen: &Scenario,
) -> Result<CombinerSet, CommError> {
    let comm = (0..scen.num_users())
        .map(|k| lmmse_combiner(k, x, cache, scen))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CombinerSet {
        comm,
        sensing: sensing_combiner(x, cache, scen)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{self, kron, unvec, vec, C64};
    use crate::scenario::{PriorGrid, ScenarioConfig};
    use approx::assert_relative_eq;
    use rand::Rng;
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
        let prior = scen.prior_grid();
        let cache = SensingMetricCache::build(&scen, &prior).unwrap();
        (scen, cache)
    }

    #[test]
    fn cov_single_user_no_pilot_is_noise() {
        let mut cfg = ScenarioConfig::with_seed(30);
        cfg.apply_desk_profile();
        cfg.comm_users.as_mut().unwrap().truncate(1);
        let mut scen = cfg.build().unwrap();
        scen.sensing.power = 0.0;
        let prior = scen.prior_grid();
        let cache = SensingMetricCache::build(&scen, &prior).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let x = RisPattern::random_unit(scen.n_elements(), &mut rng);
        let cov = comm_interference_cov(0, &x, &cache, &scen).unwrap();
        let expect = CMatrix::identity(scen.bs_antennas, scen.bs_antennas)
            .scale(scen.noise_power);
        assert!((cov - expect).norm() < 1e-18);
    }

    #[test]
    fn cov_pilot_term_matches_kronecker_oracle() {
        let (scen, cache) = desk(31, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = RisPattern::random_unit(scen.n_elements(), &mut rng);
        let xv = x.coeffs();
        let alpha = scen.sensing.alpha_true;
        // E[(alpha U x)(alpha U x)^H] via vec/kron identity, Eq-21 style:
        // vec^-1( E[(alpha U)* kron (alpha U)] vec(x x^H) ).
        let m = scen.bs_antennas;
        let xxh = xv * xv.adjoint();
        let mut acc = CVector::zeros(m * m);
        for (w, u) in cache.eta_weights.iter().zip(&cache.u_samples) {
            let au = u.scale(1.0) * alpha;
            let big = kron(&au.map(|c| c.conj()), &au);
            acc += (big * vec(&xxh)).scale(*w);
        }
        let oracle = unvec(&acc, m, m).unwrap();
        // Direct quadrature path (as used inside the covariance).
        let mut direct = CMatrix::zeros(m, m);
        for (c, u) in cache.pilot_eta_weights.iter().zip(&cache.u_samples) {
            let ux = u * xv;
            add_rank_one(&mut direct, &ux, *c);
        }
        assert!((&direct - &oracle).norm() / oracle.norm() < 1e-9);
    }

    #[test]
    fn cov_is_hermitian_and_expectation_psd() {
        let (scen, cache) = desk(32, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let x = RisPattern::random_unit(scen.n_elements(), &mut rng);
        let cov = comm_interference_cov(0, &x, &cache, &scen).unwrap();
        assert!((&cov - cov.adjoint()).norm() / cov.norm() < 1e-12);
        let mut expect = CMatrix::zeros(scen.bs_antennas, scen.bs_antennas);
        for (c, u) in cache.pilot_eta_weights.iter().zip(&cache.u_samples) {
            let ux = u * x.coeffs();
            add_rank_one(&mut expect, &ux, *c);
        }
        let (vals, _) = numerics::hermitian_eig(&expect).unwrap();
        assert!(vals[vals.len() - 1] >= -1e-10 * vals[0].max(1e-300));
    }

    #[test]
    fn lmmse_interference_free_aligns_with_channel() {
        let mut cfg = ScenarioConfig::with_seed(33);
        cfg.apply_desk_profile();
        cfg.comm_users.as_mut().unwrap().truncate(1);
        let mut scen = cfg.build().unwrap();
        scen.sensing.power = 0.0;
        let prior = scen.prior_grid();
        let cache = SensingMetricCache::build(&scen, &prior).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let x = RisPattern::random_unit(scen.n_elements(), &mut rng);
        let w = lmmse_combiner(0, &x, &cache, &scen).unwrap();
        let hx = &cache.comm_channels[0] * x.coeffs();
        let cosine = w.dotc(&hx).norm() / hx.norm();
        assert_relative_eq!(cosine, 1.0, max_relative = 1e-10);
        assert_relative_eq!(w.norm(), 1.0, max_relative = 1e-10);
    }

    #[test]
    fn lmmse_beats_random_combiners() {
        let (scen, cache) = desk(34, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let x = RisPattern::random_unit(scen.n_elements(), &mut rng);
        let w_star = lmmse_combiner(0, &x, &cache, &scen).unwrap();
        let best = sinr_at_combiner(0, &w_star, &x, &cache, &scen).unwrap();
        let gamma = sinr(0, &x, &cache, &scen).unwrap();
        assert_relative_eq!(best, gamma, max_relative = 1e-9);
        for _ in 0..100 {
            let w = CVector::from_fn(scen.bs_antennas, |_, _| {
                crate::scenario::sample_cn(&mut rng, 1.0)
            });
            let w = w.clone().unscale(w.norm());
            let val = sinr_at_combiner(0, &w, &x, &cache, &scen).unwrap();
            assert!(val <= best * (1.0 + 1e-9));
        }
    }

    #[test]
    fn sinr_zero_power_and_closed_form() {
        let mut cfg = ScenarioConfig::with_seed(35);
        cfg.apply_desk_profile();
        cfg.comm_users.as_mut().unwrap().truncate(1);
        let mut scen = cfg.build().unwrap();
        scen.sensing.power = 0.0;
        let prior = scen.prior_grid();
        let cache = SensingMetricCache::build(&scen, &prior).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let x = RisPattern::random_unit(scen.n_elements(), &mut rng);
        let gamma = sinr(0, &x, &cache, &scen).unwrap();
        let hx = &cache.comm_channels[0] * x.coeffs();
        let expect = scen.comm_users[0].power * hx.norm_squared() / scen.noise_power;
        assert_relative_eq!(gamma, expect, max_relative = 1e-10);

        let mut scen0 = scen.clone();
        scen0.comm_users[0].power = 0.0;
        let cache0 = SensingMetricCache::build(&scen0, &scen0.prior_grid()).unwrap();
        assert_eq!(sinr(0, &x, &cache0, &scen0).unwrap(), 0.0);
    }

    #[test]
    fn sinr_monotone_in_interference() {
        let (scen, _) = desk(36, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let x = RisPattern::random_unit(scen.n_elements(), &mut rng);
        for _ in 0..5 {
            let mut stronger = scen.clone();
            stronger.comm_users[1].power *= 1.0 + rng.gen::<f64>() * 4.0;
            let cache_a = SensingMetricCache::build(&scen, &scen.prior_grid()).unwrap();
            let cache_b = SensingMetricCache::build(&stronger, &stronger.prior_grid()).unwrap();
            let a = sinr(0, &x, &cache_a, &scen).unwrap();
            let b = sinr(0, &x, &cache_b, &stronger).unwrap();
            assert!(b <= a * (1.0 + 1e-12));
        }
    }

    #[test]
    fn beampattern_matched_phase_peaks_at_target() {
        let mut cfg = ScenarioConfig::with_seed(37);
        cfg.apply_desk_profile();
        let mut scen = cfg.build().unwrap();
        // Rank-one all-ones channel makes the pattern a pure array factor.
        scen.g = CMatrix::from_element(scen.bs_antennas, scen.n_elements(), C64::new(1.0, 0.0));
        let phi0 = 110f64.to_radians();
        let v0 = array_response(phi0, &scen.geometry);
        let x = RisPattern::unit(v0.map(|c| c.conj()));
        let w = CVector::from_element(scen.bs_antennas, C64::new(1.0, 0.0))
            .unscale((scen.bs_antennas as f64).sqrt());
        let grid = default_phi_grid();
        let q = beampattern_power(&w, &x, &grid, &scen);
        let (best, _) = q
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let peak_deg = grid[best].to_degrees();
        assert!((peak_deg - 110.0).abs() < 0.5, "peak at {peak_deg}");
    }

    #[test]
    fn beampattern_nonnegative_and_phase_invariant() {
        let (scen, cache) = desk(38, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let x = RisPattern::random_unit(scen.n_elements(), &mut rng);
        let w = lmmse_combiner(0, &x, &cache, &scen).unwrap();
        let grid: Vec<f64> = (0..90).map(|i| (i as f64 * 2.0).to_radians()).collect();
        let q1 = beampattern_power(&w, &x, &grid, &scen);
        assert!(q1.iter().all(|&v| v >= 0.0));
        let w2 = w.map(|c| c * C64::from_polar(1.0, 0.83));
        let q2 = beampattern_power(&w2, &x, &grid, &scen);
        for (a, b) in q1.iter().zip(&q2) {
            assert_relative_eq!(a, b, max_relative = 1e-9);
        }
    }

    #[test]
    fn sensing_combiner_rank_one_prior_aligns() {
        let mut cfg = ScenarioConfig::with_seed(39);
        cfg.apply_desk_profile();
        cfg.comm_users.as_mut().unwrap().truncate(1);
        let mut scen = cfg.build().unwrap();
        scen.comm_users[0].power = 0.0;
        let eta0 = 1.1;
        let prior = PriorGrid::weighted(vec![eta0], vec![1.0]);
        let cache = SensingMetricCache::build(&scen, &prior).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let x = RisPattern::random_unit(scen.n_elements(), &mut rng);
        let w = sensing_combiner(&x, &cache, &scen).unwrap();
        let target = &cache.udot_samples[0] * x.coeffs();
        let cosine = w.dotc(&target).norm() / target.norm();
        assert_relative_eq!(cosine, 1.0, max_relative = 1e-9);
        assert_relative_eq!(w.norm(), 1.0, max_relative = 1e-10);
    }

    #[test]
    fn sensing_combiner_scale_invariant() {
        let (scen, cache) = desk(40, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let x = RisPattern::random_unit(scen.n_elements(), &mut rng);
        let w1 = sensing_combiner(&x, &cache, &scen).unwrap();
        let mut cache2 = cache.clone();
        for w in cache2.eta_weights.iter_mut() {
            *w *= 7.5;
        }
        let w2 = sensing_combiner(&x, &cache2, &scen).unwrap();
        let cosine = w1.dotc(&w2).norm();
        assert_relative_eq!(cosine, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn rayleigh_quotient_identity_over_users() {
        let (scen, cache) = desk(41, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..3 {
            let x = RisPattern::random_unit(scen.n_elements(), &mut rng);
            for k in 0..scen.num_users() {
                let w = lmmse_combiner(k, &x, &cache, &scen).unwrap();
                let at_w = sinr_at_combiner(k, &w, &x, &cache, &scen).unwrap();
                let closed = sinr(k, &x, &cache, &scen).unwrap();
                assert!((at_w - closed).abs() / closed < 1e-9);
            }
        }
    }

    #[test]
    fn sinr_gradient_matches_finite_differences() {
        let (scen, cache) = desk(42, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let raw = CVector::from_fn(scen.n_elements(), |_, _| {
            crate::scenario::sample_cn(&mut rng, 0.5)
        });
        let max_mod = raw.iter().map(|c| c.norm()).fold(0.0_f64, f64::max);
        let x0 = raw.unscale(max_mod / 0.8);
        let grad = sinr_ratio_gradient(0, &RisPattern::bounded(x0.clone()), &cache, &scen).unwrap();
        let h = 1e-7;
        let p0 = scen.comm_users[0].power;
        for probe in 0..4 {
            let mut dx = CVector::zeros(x0.len());
            dx[probe * 5] = if probe % 2 == 0 {
                C64::new(h, 0.0)
            } else {
                C64::new(0.0, h)
            };
            let gp = sinr(0, &RisPattern::bounded(&x0 + &dx), &cache, &scen).unwrap() / p0;
            let gm = sinr(0, &RisPattern::bounded(&x0 - &dx), &cache, &scen).unwrap() / p0;
            let fd = (gp - gm) / (2.0 * h);
            let analytic = 2.0 * grad.dotc(&dx).re / h;
            assert!(
                (fd - analytic).abs() / (1.0 + fd.abs()) < 1e-5,
                "fd {fd:.6e} vs analytic {analytic:.6e}"
            );
        }
    }
}
