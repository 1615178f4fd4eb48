//! The FCFP surrogate algebra: standard multi-dimensional ratios, the
//! quadratic transform that lower-bounds them, and the constant-modulus
//! linear transform that further majorizes the quadratic term for
//! unit-modulus variables. One code path serves both the sensing objective
//! and the SINR constraints; the problem builders below adapt scenario
//! quantities into [`RatioSpec`] form.

use crate::numerics::{solve_hpd_vec, CMatrix, CVector, NumericsError, C64};
use crate::scenario::{RisPattern, Scenario};
use crate::sensing::SensingMetricCache;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("vector entry {index} has modulus {modulus:.6e}, expected unit")]
    NotUnitModulus { index: usize, modulus: f64 },
}

/// A standard multi-dimensional ratio (A x)^H D(x)^-1 (A x) with
/// D(x) = sum_m rho_m (B_m x)(B_m x)^H + C, rho_m > 0 and C positive
/// definite.
#[derive(Debug, Clone)]
pub struct RatioSpec {
    pub numerator: CMatrix,
    pub denom_terms: Vec<(f64, CMatrix)>,
    pub offset: CMatrix,
}

impl RatioSpec {
    pub fn new(numerator: CMatrix, denom_terms: Vec<(f64, CMatrix)>, offset: CMatrix) -> Self {
        debug_assert!(denom_terms.iter().all(|(rho, _)| *rho > 0.0));
        Self {
            numerator,
            denom_terms,
            offset,
        }
    }

    /// Denominator matrix D(x).
    pub fn denominator(&self, x: &CVector) -> CMatrix {
        let mut d = self.offset.clone();
        for (rho, b) in &self.denom_terms {
            let bx = b * x;
            let m = bx.len();
            for j in 0..m {
                let c = bx[j].conj() * *rho;
                for i in 0..m {
                    d[(i, j)] += bx[i] * c;
                }
            }
        }
        d
    }
}

/// Evaluates the ratio f(x) = (A x)^H D(x)^-1 (A x).
pub fn ratio_value(spec: &RatioSpec, x: &CVector) -> Result<f64, TransformError> {
    let ax = &spec.numerator * x;
    let d = spec.denominator(x);
    let sol = solve_hpd_vec(&d, &ax)?;
    Ok(ax.dotc(&sol).re)
}

/// The multiplier lambda* = D(x)^-1 A x at which the quadratic surrogate
/// touches the ratio.
pub fn optimal_multiplier(spec: &RatioSpec, x: &CVector) -> Result<CVector, TransformError> {
    let ax = &spec.numerator * x;
    let d = spec.denominator(x);
    Ok(solve_hpd_vec(&d, &ax)?)
}

/// Concave quadratic surrogate -x^H M x + 2 Re(lin^H x) + constant.
#[derive(Debug, Clone)]
pub struct QuadraticSurrogate {
    pub m_mat: CMatrix,
    pub lin: CVector,
    pub constant: f64,
}

impl QuadraticSurrogate {
    pub fn value(&self, x: &CVector) -> f64 {
        let mx = &self.m_mat * x;
        -x.dotc(&mx).re + 2.0 * self.lin.dotc(x).re + self.constant
    }

    pub fn dims(&self) -> usize {
        self.lin.len()
    }
}

/// Quadratic transform of a ratio at a fixed multiplier:
/// f~(x) = 2 Re(lambda^H A x) - lambda^H D(x) lambda, organized as a
/// concave quadratic with the Gram matrix M = sum rho_m (B_m^H l)(B_m^H l)^H.
pub fn quadratic_surrogate(spec: &RatioSpec, lambda: &CVector) -> QuadraticSurrogate {
    let n = spec.numerator.ncols();
    let mut m_mat = CMatrix::zeros(n, n);
    for (rho, b) in &spec.denom_terms {
        let bl = b.adjoint() * lambda;
        for j in 0..n {
            let c = bl[j].conj() * *rho;
            for i in 0..n {
                m_mat[(i, j)] += bl[i] * c;
            }
        }
    }
    let lin = spec.numerator.adjoint() * lambda;
    let constant = -lambda.dotc(&(&spec.offset * lambda)).re;
    QuadraticSurrogate {
        m_mat,
        lin,
        constant,
    }
}

/// Linear surrogate 2 Re(x^H d) + constant, valid for unit-modulus x.
#[derive(Debug, Clone)]
pub struct LinearSurrogate {
    pub d: CVector,
    pub constant: f64,
}

impl LinearSurrogate {
    pub fn value(&self, x: &CVector) -> f64 {
        2.0 * x.dotc(&self.d).re + self.constant
    }
}

fn check_unit(x: &CVector) -> Result<(), TransformError> {
    for (index, c) in x.iter().enumerate() {
        let modulus = c.norm();
        if (modulus - 1.0).abs() > 1e-9 {
            return Err(TransformError::NotUnitModulus { index, modulus });
        }
    }
    Ok(())
}

/// Constant-modulus linear transform: majorizes the quadratic term of the
/// quadratic surrogate around a unit-modulus anchor z using delta I with
/// delta = trace(M), giving a surrogate linear in x:
/// d = (delta I - M) z + A^H lambda, constant = z^H M z - 2 delta N - l^H C l.
pub fn cm_linear_surrogate(
    spec: &RatioSpec,
    lambda: &CVector,
    z: &CVector,
) -> Result<LinearSurrogate, TransformError> {
    check_unit(z)?;
    let quad = quadratic_surrogate(spec, lambda);
    Ok(linearize_quadratic(&quad, z))
}

/// The same majorization applied to an already-built quadratic surrogate.
pub fn linearize_quadratic(quad: &QuadraticSurrogate, z: &CVector) -> LinearSurrogate {
    let n = z.len() as f64;
    let delta: f64 = quad.m_mat.diagonal().iter().map(|c| c.re).sum();
    let mz = &quad.m_mat * z;
    let d = z.scale(delta) - &mz + &quad.lin;
    let constant = z.dotc(&mz).re - 2.0 * delta * n + quad.constant;
    LinearSurrogate { d, constant }
}

/// Surrogates for the quadratic-transform reformulation of the joint
/// problem: one combined concave quadratic for the weighted-sum sensing
/// objective and one per SINR constraint.
#[derive(Debug, Clone)]
pub struct P2Surrogates {
    pub objective: QuadraticSurrogate,
    pub constraints: Vec<QuadraticSurrogate>,
}

/// Surrogates for the constant-modulus linear reformulation, the per-term
/// coefficients combined the same way.
#[derive(Debug, Clone)]
pub struct P3Surrogates {
    pub objective: LinearSurrogate,
    pub constraints: Vec<LinearSurrogate>,
}

/// Ratio spec of the r-th sensing eigen term:
/// numerator map R_r, denominator from the communication channels plus the
/// covariance floor.
pub fn sensing_ratio_spec(r: usize, cache: &SensingMetricCache, scen: &Scenario) -> RatioSpec {
    let denom_terms: Vec<(f64, CMatrix)> = cache
        .comm_channels
        .iter()
        .enumerate()
        .map(|(k, h)| (scen.comm_users[k].power, h.clone()))
        .collect();
    RatioSpec::new(
        cache.eigen_terms[r].r_mat.clone(),
        denom_terms,
        cache.base_cov.clone(),
    )
}

/// Ratio spec of user k's normalized SINR gamma_k / p_k:
/// numerator map H_k, denominator from the other users and the expected
/// pilot return over the prior.
pub fn sinr_ratio_spec(k: usize, cache: &SensingMetricCache, scen: &Scenario) -> RatioSpec {
    let mut denom_terms: Vec<(f64, CMatrix)> = Vec::new();
    for (j, h) in cache.comm_channels.iter().enumerate() {
        if j != k {
            denom_terms.push((scen.comm_users[j].power, h.clone()));
        }
    }
    let pilot_scale = scen.sensing.power * cache.los_scale;
    for (c, u) in cache.pilot_eta_weights.iter().zip(&cache.u_samples) {
        let w = pilot_scale * c;
        if w > 0.0 {
            denom_terms.push((w, u.clone()));
        }
    }
    RatioSpec::new(
        cache.comm_channels[k].clone(),
        denom_terms,
        cache.base_cov.clone(),
    )
}

/// Builds the quadratic surrogates of the joint problem at the point x:
/// multipliers lambda_r = (Sigma^o)^-1 R_r x for the objective terms and
/// lambda_k = (Sigma_k^c)^-1 H_k x for the constraints. At x itself the
/// objective surrogate equals A(x) and constraint k equals gamma_k / p_k.
pub fn build_p2_surrogates(
    x: &RisPattern,
    cache: &SensingMetricCache,
    scen: &Scenario,
) -> Result<P2Surrogates, TransformError> {
    let xv = x.coeffs();
    let n = xv.len();
    let mut objective = QuadraticSurrogate {
        m_mat: CMatrix::zeros(n, n),
        lin: CVector::zeros(n),
        constant: 0.0,
    };
    for r in 0..cache.eigen_terms.len() {
        let spec = sensing_ratio_spec(r, cache, scen);
        let lambda = optimal_multiplier(&spec, xv)?;
        let quad = quadratic_surrogate(&spec, &lambda);
        let kappa = cache.eigen_terms[r].kappa;
        objective.m_mat += quad.m_mat.scale(kappa);
        objective.lin += quad.lin.scale(kappa);
        objective.constant += kappa * quad.constant;
    }
    Ok(P2Surrogates {
        objective,
        constraints: build_sinr_surrogates(x, cache, scen)?,
    })
}

/// Quadratic surrogates of every user's normalized SINR at the optimal
/// multipliers for the point x.
pub fn build_sinr_surrogates(
    x: &RisPattern,
    cache: &SensingMetricCache,
    scen: &Scenario,
) -> Result<Vec<QuadraticSurrogate>, TransformError> {
    let xv = x.coeffs();
    let mut constraints = Vec::with_capacity(scen.num_users());
    for k in 0..scen.num_users() {
        let spec = sinr_ratio_spec(k, cache, scen);
        let lambda = optimal_multiplier(&spec, xv)?;
        constraints.push(quadratic_surrogate(&spec, &lambda));
    }
    Ok(constraints)
}

/// Builds the linear surrogates of the joint problem at a unit-modulus x,
/// anchoring the majorization at z = x with optimal multipliers.
pub fn build_p3_surrogates(
    x: &RisPattern,
    cache: &SensingMetricCache,
    scen: &Scenario,
) -> Result<P3Surrogates, TransformError> {
    let xv = x.coeffs();
    check_unit(xv)?;
    let n = xv.len();
    let mut objective = LinearSurrogate {
        d: CVector::zeros(n),
        constant: 0.0,
    };
    for r in 0..cache.eigen_terms.len() {
        let spec = sensing_ratio_spec(r, cache, scen);
        let lambda = optimal_multiplier(&spec, xv)?;
        let lin = cm_linear_surrogate(&spec, &lambda, xv)?;
        let kappa = cache.eigen_terms[r].kappa;
        objective.d += lin.d.scale(kappa);
        objective.constant += kappa * lin.constant;
    }
    let mut constraints = Vec::with_capacity(scen.num_users());
    for k in 0..scen.num_users() {
        let spec = sinr_ratio_spec(k, cache, scen);
        let lambda = optimal_multiplier(&spec, xv)?;
        constraints.push(cm_linear_surrogate(&spec, &lambda, xv)?);
    }
    Ok(P3Surrogates {
        objective,
        constraints,
    })
}

/// Builds the same linear surrogates as [`build_p3_surrogates`] in
/// O((K + R + L) N) without materializing denominator matrices: every
/// Gram matrix enters only through its factor vectors B_m^H lambda.
pub fn build_p3_surrogates_fast(
    x: &RisPattern,
    cache: &SensingMetricCache,
    scen: &Scenario,
) -> Result<P3Surrogates, TransformError> {
    let xv = x.coeffs();
    check_unit(xv)?;
    let n = xv.len();
    let cov = cache.sensing_cov(xv, scen);
    let cov_chol = crate::numerics::cholesky_hpd(&cov)?;

    // One ratio's linear surrogate from its factored quadratic part.
    let assemble = |lin: CVector, lam_c_lam: f64, factors: &[(f64, CVector)]| -> LinearSurrogate {
        let mut delta = 0.0;
        let mut mz = CVector::zeros(n);
        let mut zmz = 0.0;
        for (rho, t) in factors {
            let tz = t.dotc(xv);
            delta += rho * t.norm_squared();
            zmz += rho * tz.norm_sqr();
            mz.axpy(C64::new(*rho, 0.0) * tz, t, C64::new(1.0, 0.0));
        }
        let d = xv.scale(delta) - mz + lin;
        let constant = zmz - 2.0 * delta * n as f64 - lam_c_lam;
        LinearSurrogate { d, constant }
    };

    let mut objective = LinearSurrogate {
        d: CVector::zeros(n),
        constant: 0.0,
    };
    for term in &cache.eigen_terms {
        let lambda = cov_chol.solve(&(&term.r_mat * xv));
        let lam_c_lam = lambda.dotc(&(&cache.base_cov * &lambda)).re;
        let factors: Vec<(f64, CVector)> = cache
            .comm_channels
            .iter()
            .enumerate()
            .map(|(k, h)| (scen.comm_users[k].power, h.adjoint() * &lambda))
            .collect();
        let lin = assemble(term.r_mat.adjoint() * &lambda, lam_c_lam, &factors);
        objective.d += lin.d.scale(term.kappa);
        objective.constant += term.kappa * lin.constant;
    }

    let pilot_scale = scen.sensing.power * cache.los_scale;
    // Shared pilot-return covariance; user k's covariance is the sensing
    // covariance plus this, minus the user's own rank-one term.
    let m = scen.bs_antennas;
    let mut pilot_q = CMatrix::zeros(m, m);
    for (c, u) in cache.pilot_eta_weights.iter().zip(&cache.u_samples) {
        let ux = u * xv;
        pilot_q.gerc(
            C64::new(pilot_scale * c, 0.0),
            &ux,
            &ux,
            C64::new(1.0, 0.0),
        );
    }
    let h_products: Vec<CVector> = cache.comm_channels.iter().map(|h| h * xv).collect();
    let mut constraints = Vec::with_capacity(scen.num_users());
    for k in 0..scen.num_users() {
        let mut cov_k = &cov + &pilot_q;
        cov_k.gerc(
            C64::new(-scen.comm_users[k].power, 0.0),
            &h_products[k],
            &h_products[k],
            C64::new(1.0, 0.0),
        );
        let chol_k = crate::numerics::cholesky_hpd(&cov_k)?;
        let lambda = chol_k.solve(&h_products[k]);
        let lam_c_lam = lambda.dotc(&(&cache.base_cov * &lambda)).re;
        let mut factors: Vec<(f64, CVector)> = Vec::with_capacity(
            scen.num_users().saturating_sub(1) + cache.u_samples.len(),
        );
        for (j, h) in cache.comm_channels.iter().enumerate() {
            if j != k {
                factors.push((scen.comm_users[j].power, h.adjoint() * &lambda));
            }
        }
        for (c, u) in cache.pilot_eta_weights.iter().zip(&cache.u_samples) {
            let w = pilot_scale * c;
            if w > 0.0 {
                factors.push((w, u.adjoint() * &lambda));
            }
        }
        constraints.push(assemble(
            cache.comm_channels[k].adjoint() * &lambda,
            lam_c_lam,
            &factors,
        ));
    }
    Ok(P3Surrogates {
        objective,
        constraints,
    })
}
