//! Sensing-side metrics: Fisher information, BCRLB, the surrogate metric
//! A(x), and the second-moment matrix of the response derivative with its
//! eigendecomposition.
//!
//! Two algebraic routes to A(x) coexist and are tested against each other:
//! the eigen route (weighted sum over rank-one factors of the second-moment
//! matrix) and the direct quadrature route (weighted sum over prior nodes).
//! Production code uses the eigen route; the direct route doubles as its
//! oracle. The full MN x MN second-moment matrix is only materialized at
//! desk scale; the cache is built from an L x L Gram factorization instead.

use crate::numerics::{
    self, cholesky_hpd, hermitian_eig_psd, unvec, vec, CMatrix, CVector, NumericsError, C64,
};
use crate::scenario::{
    sensing_matrix, sensing_matrix_derivative, FadingKnowledge, PriorGrid, RisPattern, Scenario,
    RAD2_TO_DEG2,
};
use thiserror::Error;

/// Default relative eigenvalue threshold below which second-moment
/// eigenpairs are dropped.
pub const DEFAULT_TRUNC_EPS: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SensingError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("prior grid has no alpha lattice but one is required")]
    MissingAlphaGrid,
    #[error("denominator of the modified bound is nonpositive ({0:.3e}) for some alpha node")]
    DegenerateDenominator(f64),
}

/// One retained eigenpair of the second-moment matrix: kappa_r > 0 and the
/// un-stacked eigenvector R_r (an M x N matrix).
#[derive(Debug, Clone)]
pub struct EigenTerm {
    pub kappa: f64,
    pub r_mat: CMatrix,
}

/// Immutable per-(scenario, prior) cache shared by the sensing and
/// communication metrics and by every solver.
#[derive(Debug, Clone)]
pub struct SensingMetricCache {
    /// Eigenpairs of the second-moment matrix, kappa descending.
    pub eigen_terms: Vec<EigenTerm>,
    /// U(eta_j) per prior node.
    pub u_samples: Vec<CMatrix>,
    /// dU/d eta (eta_j) per prior node.
    pub udot_samples: Vec<CMatrix>,
    /// Marginal eta weights of the prior.
    pub eta_weights: Vec<f64>,
    /// Pilot-interference weights c_j with the fading magnitude folded in:
    /// E[|alpha|^2 (U x)(U x)^H] = sum_j c_j (U_j x)(U_j x)^H.
    pub pilot_eta_weights: Vec<f64>,
    /// Fisher information of the eta prior itself.
    pub fip: f64,
    /// Cascaded communication channels H_k.
    pub comm_channels: Vec<CMatrix>,
    /// x-independent covariance floor: sigma_n^2 I plus, under Rician
    /// fading, the scattered pilot power p E|alpha|^2 zeta/(1+zeta) G G^H
    /// (exact for unit-modulus patterns).
    pub base_cov: CMatrix,
    /// LoS power fraction 1/(1+zeta).
    pub los_scale: f64,
    /// E|alpha|^2 under the prior (|alpha|^2 itself when known).
    pub expected_alpha_sq: f64,
    /// Relative truncation threshold used for the eigen terms.
    pub trunc_eps: f64,
    /// trace of the second-moment matrix (before truncation).
    pub trace_second_moment: f64,
}

impl SensingMetricCache {
    pub fn build(scen: &Scenario, prior: &PriorGrid) -> Result<Self, SensingError> {
        Self::build_with_eps(scen, prior, DEFAULT_TRUNC_EPS)
    }

    pub fn build_with_eps(
        scen: &Scenario,
        prior: &PriorGrid,
        trunc_eps: f64,
    ) -> Result<Self, SensingError> {
        let m = scen.bs_antennas;
        let n = scen.n_elements();
        let u_samples: Vec<CMatrix> = prior
            .eta_nodes
            .iter()
            .map(|&eta| sensing_matrix(eta, &scen.g, &scen.geometry))
            .collect();
        let udot_samples: Vec<CMatrix> = prior
            .eta_nodes
            .iter()
            .map(|&eta| sensing_matrix_derivative(eta, &scen.g, &scen.geometry))
            .collect();
        let eigen_terms = eigen_terms_from_gram(&udot_samples, &prior.eta_weights, trunc_eps)?;
        let trace_second_moment = prior
            .eta_weights
            .iter()
            .zip(&udot_samples)
            .map(|(w, u)| w * u.norm_squared())
            .sum();

        let comm_channels: Vec<CMatrix> =
            (0..scen.num_users()).map(|k| scen.comm_matrix(k)).collect();

        let (expected_alpha_sq, pilot_eta_weights) = match (&prior.alpha, scen.sensing.fading) {
            (Some(grid), FadingKnowledge::Unknown) => {
                let e_sq: f64 = grid
                    .weights
                    .iter()
                    .zip(&grid.nodes)
                    .map(|(w, a)| w * a.norm_sqr())
                    .sum();
                let mut c = vec![0.0; prior.len()];
                for (i, wi) in grid.weights.iter().enumerate() {
                    let mag = grid.nodes[i].norm_sqr();
                    for (j, cj) in c.iter_mut().enumerate() {
                        *cj += wi * mag * grid.eta_weights_cond[i][j];
                    }
                }
                (e_sq, c)
            }
            _ => {
                let mag = scen.sensing.alpha_true.norm_sqr();
                (
                    mag,
                    prior.eta_weights.iter().map(|w| w * mag).collect(),
                )
            }
        };

        let zeta = scen.rician_zeta;
        let los_scale = 1.0 / (1.0 + zeta);
        let mut base_cov = CMatrix::identity(m, m).scale(scen.noise_power);
        if zeta > 0.0 {
            let gg = &scen.g * scen.g.adjoint();
            base_cov += gg.scale(scen.sensing.power * expected_alpha_sq * zeta / (1.0 + zeta));
        }
        let _ = n;

        Ok(Self {
            eigen_terms,
            u_samples,
            udot_samples,
            eta_weights: prior.eta_weights.clone(),
            pilot_eta_weights,
            fip: prior.fip,
            comm_channels,
            base_cov,
            los_scale,
            expected_alpha_sq,
            trunc_eps,
            trace_second_moment,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.u_samples.len()
    }

    pub fn rank(&self) -> usize {
        self.eigen_terms.len()
    }

    /// Interference-plus-noise covariance seen by the sensing pilot,
    /// using the cached channels.
    pub fn sensing_cov(&self, x: &CVector, scen: &Scenario) -> CMatrix {
        let mut cov = self.base_cov.clone();
        for (k, h) in self.comm_channels.iter().enumerate() {
            let hx = h * x;
            rank_one_update(&mut cov, &hx, scen.comm_users[k].power);
        }
        cov
    }
}

fn rank_one_update(cov: &mut CMatrix, v: &CVector, weight: f64) {
    // cov += weight * v v^H, touching only what ger would.
    let m = v.len();
    for j in 0..m {
        let c = v[j].conj() * weight;
        for i in 0..m {
            cov[(i, j)] += v[i] * c;
        }
    }
}

/// Covariance of the interference plus noise for sensing (the pilot's own
/// return excluded): sum_k p_k (H_k x)(H_k x)^H + sigma_n^2 I, plus the
/// scattered-pilot floor under Rician fading.
pub fn sensing_interference_cov(x: &RisPattern, scen: &Scenario) -> CMatrix {
    let m = scen.bs_antennas;
    let mut cov = CMatrix::identity(m, m).scale(scen.noise_power);
    if scen.rician_zeta > 0.0 {
        let zeta = scen.rician_zeta;
        let gg = &scen.g * scen.g.adjoint();
        let e_alpha_sq = scen.sensing.alpha_true.norm_sqr();
        cov += gg.scale(scen.sensing.power * e_alpha_sq * zeta / (1.0 + zeta));
    }
    for k in 0..scen.num_users() {
        let hx = scen.comm_matrix(k) * x.coeffs();
        rank_one_update(&mut cov, &hx, scen.comm_users[k].power);
    }
    cov
}

/// Fisher information for estimating eta at a fixed fading coefficient:
/// 2 p (alpha dU x)^H (Sigma^o)^-1 (alpha dU x), with the LoS fraction
/// applied under Rician fading.
pub fn fisher_information(
    eta: f64,
    alpha: C64,
    x: &RisPattern,
    scen: &Scenario,
) -> Result<f64, SensingError> {
    let cov = sensing_interference_cov(x, scen);
    let udot_x = sensing_matrix_derivative(eta, &scen.g, &scen.geometry) * x.coeffs();
    let sol = numerics::solve_hpd_vec(&cov, &udot_x)?;
    let quad = udot_x.dotc(&sol).re;
    let los_scale = 1.0 / (1.0 + scen.rician_zeta);
    Ok(2.0 * scen.sensing.power * alpha.norm_sqr() * los_scale * quad)
}

/// Dense second-moment matrix of the stacked response derivative over the
/// prior, together with its retained eigen terms. MN x MN; desk scale only.
pub fn second_moment_matrix(
    prior: &PriorGrid,
    scen: &Scenario,
) -> Result<(CMatrix, Vec<EigenTerm>), SensingError> {
    let m = scen.bs_antennas;
    let n = scen.n_elements();
    let mn = m * n;
    let mut rdot = CMatrix::zeros(mn, mn);
    for (w, eta) in prior.eta_weights.iter().zip(&prior.eta_nodes) {
        let udot = sensing_matrix_derivative(*eta, &scen.g, &scen.geometry);
        let v = vec(&udot);
        rank_one_update(&mut rdot, &v, *w);
    }
    let (vals, vecs) = hermitian_eig_psd(&rdot)?;
    let max = vals.iter().cloned().fold(0.0_f64, f64::max);
    let mut terms = Vec::new();
    for r in 0..mn {
        if vals[r] > DEFAULT_TRUNC_EPS * max && vals[r] > 0.0 {
            terms.push(EigenTerm {
                kappa: vals[r],
                r_mat: unvec(&vecs.column(r).clone_owned(), m, n)?,
            });
        }
    }
    Ok((rdot, terms))
}

/// Eigen terms of the second-moment matrix computed from the L x L Gram
/// matrix of weighted stacked derivatives, never forming the MN x MN
/// matrix. Exact up to the truncation threshold.
pub fn eigen_terms_from_gram(
    udot_samples: &[CMatrix],
    weights: &[f64],
    trunc_eps: f64,
) -> Result<Vec<EigenTerm>, SensingError> {
    assert_eq!(udot_samples.len(), weights.len());
    let l = udot_samples.len();
    if l == 0 {
        return Ok(Vec::new());
    }
    let (m, n) = (udot_samples[0].nrows(), udot_samples[0].ncols());
    // Columns sqrt(w_j) vec(Udot_j); Gram entry = sqrt(w_i w_j) <vec_i, vec_j>.
    let cols: Vec<CVector> = udot_samples
        .iter()
        .zip(weights)
        .map(|(u, w)| vec(u).scale(w.sqrt()))
        .collect();
    let mut gram = CMatrix::zeros(l, l);
    for i in 0..l {
        for j in i..l {
            let g = cols[i].dotc(&cols[j]);
            gram[(i, j)] = g;
            gram[(j, i)] = g.conj();
        }
    }
    let (vals, vecs) = hermitian_eig_psd(&gram)?;
    let max = vals.iter().cloned().fold(0.0_f64, f64::max);
    let mut terms = Vec::new();
    for r in 0..l {
        let s = vals[r];
        if s > trunc_eps * max && s > 0.0 {
            let mut stacked = CVector::zeros(m * n);
            for (ci, col) in cols.iter().enumerate() {
                stacked += col.scale_by_complex(vecs[(ci, r)]);
            }
            stacked /= C64::new(s.sqrt(), 0.0);
            terms.push(EigenTerm {
                kappa: s,
                r_mat: unvec(&stacked, m, n)?,
            });
        }
    }
    Ok(terms)
}

trait ScaleByComplex {
    fn scale_by_complex(&self, c: C64) -> CVector;
}

impl ScaleByComplex for CVector {
    fn scale_by_complex(&self, c: C64) -> CVector {
        self.map(|v| v * c)
    }
}

/// The sensing metric A(x) through the eigen route.
pub fn metric_a(
    x: &RisPattern,
    cache: &SensingMetricCache,
    scen: &Scenario,
) -> Result<f64, SensingError> {
    let cov = cache.sensing_cov(x.coeffs(), scen);
    let chol = cholesky_hpd(&cov)?;
    let mut total = 0.0;
    for term in &cache.eigen_terms {
        let rx = &term.r_mat * x.coeffs();
        let sol = chol.solve(&rx);
        total += term.kappa * rx.dotc(&sol).re;
    }
    Ok(total)
}

/// The sensing metric A(x) by direct quadrature over the prior nodes; the
/// independent oracle for the eigen route.
pub fn metric_a_direct(
    x: &RisPattern,
    cache: &SensingMetricCache,
    scen: &Scenario,
) -> Result<f64, SensingError> {
    let cov = cache.sensing_cov(x.coeffs(), scen);
    let chol = cholesky_hpd(&cov)?;
    let mut total = 0.0;
    for (w, udot) in cache.eta_weights.iter().zip(&cache.udot_samples) {
        let ux = udot * x.coeffs();
        let sol = chol.solve(&ux);
        total += w * ux.dotc(&sol).re;
    }
    Ok(total)
}

/// Wirtinger gradient of A(x) with respect to conjugate(x); the total
/// derivative is dA = 2 Re(g^H dx).
pub fn metric_a_gradient(
    x: &RisPattern,
    cache: &SensingMetricCache,
    scen: &Scenario,
) -> Result<CVector, SensingError> {
    let xv = x.coeffs();
    let cov = cache.sensing_cov(xv, scen);
    let chol = cholesky_hpd(&cov)?;
    let hx: Vec<CVector> = cache.comm_channels.iter().map(|h| h * xv).collect();
    let mut grad = CVector::zeros(xv.len());
    for term in &cache.eigen_terms {
        let rx = &term.r_mat * xv;
        let u = chol.solve(&rx);
        grad += (term.r_mat.adjoint() * &u).scale(term.kappa);
        for (k, h) in cache.comm_channels.iter().enumerate() {
            let p = scen.comm_users[k].power;
            let coupling = u.dotc(&hx[k]); // u^H H_k x
            grad -= (h.adjoint() * &u).scale_by_complex(
                C64::new(term.kappa * p, 0.0) * coupling,
            );
        }
    }
    Ok(grad)
}

/// Bayesian Cramer-Rao lower bound in deg^2 for a known fading coefficient.
/// Returns infinity when the information denominator is zero.
pub fn bcrlb(
    x: &RisPattern,
    cache: &SensingMetricCache,
    scen: &Scenario,
    alpha: C64,
) -> Result<f64, SensingError> {
    let a = metric_a(x, cache, scen)?;
    let denom = 2.0 * scen.sensing.power * alpha.norm_sqr() * cache.los_scale * a + cache.fip;
    if denom <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(RAD2_TO_DEG2 / denom)
}

/// Modified BCRLB in deg^2 for an unknown fading coefficient: the expected
/// per-alpha bound over the alpha lattice.
pub fn modified_bcrlb(
    x: &RisPattern,
    prior: &PriorGrid,
    scen: &Scenario,
) -> Result<f64, SensingError> {
    let alpha_grid = prior.alpha.as_ref().ok_or(SensingError::MissingAlphaGrid)?;
    let cov = {
        // Same covariance floor as the cache would build for this prior.
        let mut cov = CMatrix::identity(scen.bs_antennas, scen.bs_antennas)
            .scale(scen.noise_power);
        if scen.rician_zeta > 0.0 {
            let e_sq: f64 = alpha_grid
                .weights
                .iter()
                .zip(&alpha_grid.nodes)
                .map(|(w, a)| w * a.norm_sqr())
                .sum();
            let zeta = scen.rician_zeta;
            cov += (&scen.g * scen.g.adjoint())
                .scale(scen.sensing.power * e_sq * zeta / (1.0 + zeta));
        }
        for k in 0..scen.num_users() {
            let hx = scen.comm_matrix(k) * x.coeffs();
            rank_one_update(&mut cov, &hx, scen.comm_users[k].power);
        }
        cov
    };
    let chol = cholesky_hpd(&cov)?;
    let los_scale = 1.0 / (1.0 + scen.rician_zeta);
    // Per-node quadratic forms are alpha-independent; compute once.
    let quads: Vec<f64> = prior
        .eta_nodes
        .iter()
        .map(|&eta| {
            let ux = sensing_matrix_derivative(eta, &scen.g, &scen.geometry) * x.coeffs();
            let sol = chol.solve(&ux);
            ux.dotc(&sol).re
        })
        .collect();
    let mut bound = 0.0;
    for (i, wi) in alpha_grid.weights.iter().enumerate() {
        let fi_scale =
            2.0 * scen.sensing.power * alpha_grid.nodes[i].norm_sqr() * los_scale;
        let denom: f64 = alpha_grid.eta_weights_cond[i]
            .iter()
            .zip(&quads)
            .map(|(w, q)| w * fi_scale * q)
            .sum::<f64>()
            + alpha_grid.fip[i];
        if denom <= 0.0 {
            return Err(SensingError::DegenerateDenominator(denom));
        }
        bound += wi / denom;
    }
    Ok(bound * RAD2_TO_DEG2)
}
