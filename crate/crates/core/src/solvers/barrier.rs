//! Log-barrier Newton solver for the inner convex subproblems, working on
//! the real embedding u = [Re x; Im x] of the complex pattern.
//!
//! The problem class is
//!     maximize   f0(u)
//!     subject to g_k(u) >= 0          (concave quadratic constraints)
//!                |x_n|^2 <= 1
//! where f0 is either a concave quadratic (the penalized quadratic
//! surrogate) or a reciprocal-sum composition (the unknown-fading
//! objective). Internally the objective is normalized to O(1); reported
//! gap and KKT figures are unscaled back.

use crate::numerics::{CMatrix, CVector, C64};
use nalgebra::{DMatrix, DVector};

use super::SolverError;

/// Concave quadratic q(u) = -u' M u + 2 lin' u + constant on the real
/// embedding. M is symmetric PSD.
#[derive(Debug, Clone)]
pub struct RealQuad {
    pub m: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub constant: f64,
}

impl RealQuad {
    pub fn zeros(dim: usize) -> Self {
        Self {
            m: DMatrix::zeros(dim, dim),
            lin: DVector::zeros(dim),
            constant: 0.0,
        }
    }

    pub fn value(&self, u: &DVector<f64>) -> f64 {
        let mu = &self.m * u;
        -u.dot(&mu) + 2.0 * self.lin.dot(u) + self.constant
    }

    /// grad = -2 M u + 2 lin
    pub fn grad(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut g = &self.m * u;
        g *= -2.0;
        g += self.lin.scale(2.0);
        g
    }

    /// Adds the penalty -mu ||x - z||^2 (as a quadratic in u).
    pub fn add_penalty(&mut self, mu: f64, center: &DVector<f64>) {
        let dim = self.lin.len();
        for i in 0..dim {
            self.m[(i, i)] += mu;
        }
        self.lin += center.scale(mu);
        self.constant -= mu * center.norm_squared();
    }

    pub fn scale_by(&mut self, s: f64) {
        self.m *= s;
        self.lin *= s;
        self.constant *= s;
    }
}

/// Embeds a Hermitian complex matrix as the symmetric real matrix
/// [[Re M, -Im M], [Im M, Re M]] so that x^H M x = u' M~ u.
pub fn embed_hermitian(m: &CMatrix) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for j in 0..n {
        for i in 0..n {
            let c = m[(i, j)];
            out[(i, j)] = c.re;
            out[(i, j + n)] = -c.im;
            out[(i + n, j)] = c.im;
            out[(i + n, j + n)] = c.re;
        }
    }
    out
}

/// Embeds a complex vector as [Re b; Im b] so that Re(b^H x) = b~ . u.
pub fn embed_vector(b: &CVector) -> DVector<f64> {
    let n = b.len();
    DVector::from_fn(2 * n, |i, _| if i < n { b[i].re } else { b[i - n].im })
}

pub fn complex_from_real(u: &DVector<f64>) -> CVector {
    let n = u.len() / 2;
    CVector::from_fn(n, |i, _| C64::new(u[i], u[i + n]))
}

/// Reciprocal-sum objective sum_i w_i / D_i(u) (to be *minimized*; the
/// maximization target is its negative). Each denominator is
/// D_i(u) = 2 lin_i . u - sum_q c_iq (shared_q . u)^2 + const_i,
/// with the quadratic part factored over vectors shared across i.
#[derive(Debug, Clone)]
pub struct ReciprocalSum {
    pub weights: Vec<f64>,
    pub lin: Vec<DVector<f64>>,
    pub consts: Vec<f64>,
    pub shared: Vec<DVector<f64>>,
    /// coeff[i][q] >= 0 multiplying (shared_q . u)^2 in D_i.
    pub coeff: Vec<Vec<f64>>,
}

impl ReciprocalSum {
    pub fn denominators(&self, u: &DVector<f64>) -> Vec<f64> {
        let dots: Vec<f64> = self.shared.iter().map(|v| v.dot(u)).collect();
        (0..self.weights.len())
            .map(|i| {
                let quad: f64 = self.coeff[i]
                    .iter()
                    .zip(&dots)
                    .map(|(c, d)| c * d * d)
                    .sum();
                2.0 * self.lin[i].dot(u) - quad + self.consts[i]
            })
            .collect()
    }

    fn denominator_grads(&self, _u: &DVector<f64>, dots: &[f64]) -> Vec<DVector<f64>> {
        (0..self.weights.len())
            .map(|i| {
                let mut g = self.lin[i].scale(2.0);
                for (q, v) in self.shared.iter().enumerate() {
                    let c = self.coeff[i][q];
                    if c != 0.0 {
                        g.axpy(-2.0 * c * dots[q], v, 1.0);
                    }
                }
                g
            })
            .collect()
    }
}

/// Objective of the barrier subproblem.
pub enum Objective<'a> {
    /// Concave quadratic (quadratic surrogate plus penalty), already
    /// normalized to O(1) scale by the caller.
    Quadratic(&'a RealQuad),
    /// -(sum_i w_i / D_i) - mu ||x - z||^2, normalized by `scale`.
    ReciprocalSum {
        terms: &'a ReciprocalSum,
        penalty_mu: f64,
        penalty_center: DVector<f64>,
        scale: f64,
    },
}

pub struct QcqpProblem<'a> {
    pub objective: Objective<'a>,
    /// Quadratic constraints g_k(u) >= 0 (thresholds folded into the
    /// constants).
    pub constraints: Vec<RealQuad>,
    pub n_complex: usize,
    /// Margin for the reciprocal denominators (the transformed-domain
    /// constraints); ignored for quadratic objectives.
    pub domain_margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierStatus {
    Solved,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct BarrierSolution {
    pub x: CVector,
    pub u: DVector<f64>,
    /// Objective value in the caller's (normalized) units.
    pub objective: f64,
    /// Certified optimality gap in normalized units.
    pub gap: f64,
    /// Stationarity residual of the KKT system at the implicit barrier
    /// multipliers, normalized units.
    pub kkt_residual: f64,
    pub newton_steps: usize,
    pub status: BarrierStatus,
}

#[derive(Debug, Clone)]
pub struct BarrierOptions {
    /// Target duality gap in normalized objective units.
    pub gap_tol: f64,
    /// Newton decrement threshold per centering stage.
    pub newton_tol: f64,
    pub t0: f64,
    pub t_factor: f64,
    pub max_newton_per_stage: usize,
    pub max_stages: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            gap_tol: 5e-10,
            newton_tol: 1e-12,
            t0: 10.0,
            t_factor: 15.0,
            max_newton_per_stage: 60,
            max_stages: 40,
        }
    }
}

impl BarrierOptions {
    pub fn warm(mut self) -> Self {
        self.t0 = 1e4;
        self
    }
}

struct BarrierEval {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

/// Barrier arguments this close to zero only arise from line-search
/// overshoot; treating them as infeasible keeps curvatures finite.
const BARRIER_FLOOR: f64 = 1e-30;

/// phi_t(u) = -t f0(u) - sum log g_k - sum log(1 - |x_n|^2)
/// [- sum log(D_i - margin) for reciprocal objectives].
fn eval_barrier(problem: &QcqpProblem, u: &DVector<f64>, t: f64) -> Option<BarrierEval> {
    let dim = u.len();
    let n = problem.n_complex;
    let mut value;
    let mut grad;
    let mut hess;

    match &problem.objective {
        Objective::Quadratic(q) => {
            value = -t * q.value(u);
            grad = q.grad(u).scale(-t);
            hess = q.m.scale(2.0 * t);
        }
        Objective::ReciprocalSum {
            terms,
            penalty_mu,
            penalty_center,
            scale,
        } => {
            let dots: Vec<f64> = terms.shared.iter().map(|v| v.dot(u)).collect();
            let denoms = terms.denominators(u);
            for (&d, _) in denoms.iter().zip(&terms.weights) {
                if d <= problem.domain_margin + BARRIER_FLOOR {
                    return None;
                }
            }
            let dgrads = terms.denominator_grads(u, &dots);
            // f0 = -(sum w_i / D_i)/scale - (mu/scale)||u - z||^2
            let recip: f64 = terms
                .weights
                .iter()
                .zip(&denoms)
                .map(|(w, d)| w / d)
                .sum();
            let diff = u - penalty_center;
            let pen = penalty_mu / scale;
            value = t * (recip / scale + pen * diff.norm_squared());
            grad = DVector::zeros(dim);
            for ((w, d), g) in terms.weights.iter().zip(&denoms).zip(&dgrads) {
                grad.axpy(-t * w / (d * d) / scale, g, 1.0);
            }
            grad.axpy(2.0 * t * pen, &diff, 1.0);
            hess = DMatrix::zeros(dim, dim);
            // Collapsed PSD part: sum_i (w_i/D_i^2) * 2 M_i with
            // M_i = sum_q c_iq v_q v_q'.
            let mut eq = vec![0.0; terms.shared.len()];
            for (i, (w, d)) in terms.weights.iter().zip(&denoms).enumerate() {
                let gi = t * w / (d * d) / scale;
                for (q, c) in terms.coeff[i].iter().enumerate() {
                    eq[q] += 2.0 * gi * c;
                }
            }
            for (q, v) in terms.shared.iter().enumerate() {
                if eq[q] != 0.0 {
                    hess.ger(eq[q], v, v, 1.0);
                }
            }
            for ((w, d), g) in terms.weights.iter().zip(&denoms).zip(&dgrads) {
                hess.ger(2.0 * t * w / (d * d * d) / scale, g, g, 1.0);
            }
            for i in 0..dim {
                hess[(i, i)] += 2.0 * t * pen;
            }
            // Domain barrier terms -log(D_i - margin).
            for ((d, g), i) in denoms.iter().zip(&dgrads).zip(0..) {
                let s = d - problem.domain_margin;
                value -= s.ln();
                grad.axpy(-1.0 / s, g, 1.0);
                hess.ger(1.0 / (s * s), g, g, 1.0);
                // -hess(D_i)/s = 2 M_i / s, add via shared factors.
                for (q, c) in terms.coeff[i].iter().enumerate() {
                    if *c != 0.0 {
                        let v = &terms.shared[q];
                        hess.ger(2.0 * c / s, v, v, 1.0);
                    }
                }
            }
        }
    }

    for g in &problem.constraints {
        let gv = g.value(u);
        if gv <= BARRIER_FLOOR {
            return None;
        }
        let gg = g.grad(u);
        value -= gv.ln();
        grad.axpy(-1.0 / gv, &gg, 1.0);
        hess.ger(1.0 / (gv * gv), &gg, &gg, 1.0);
        hess += g.m.scale(2.0 / gv);
    }

    for i in 0..n {
        let b = 1.0 - u[i] * u[i] - u[i + n] * u[i + n];
        if b <= BARRIER_FLOOR {
            return None;
        }
        value -= b.ln();
        let (gi, gj) = (-2.0 * u[i], -2.0 * u[i + n]);
        grad[i] -= gi / b;
        grad[i + n] -= gj / b;
        let b2 = b * b;
        hess[(i, i)] += gi * gi / b2 + 2.0 / b;
        hess[(i + n, i + n)] += gj * gj / b2 + 2.0 / b;
        let cross = gi * gj / b2;
        hess[(i, i + n)] += cross;
        hess[(i + n, i)] += cross;
    }

    Some(BarrierEval { value, grad, hess })
}

fn feasible(problem: &QcqpProblem, u: &DVector<f64>) -> bool {
    let n = problem.n_complex;
    if (0..n).any(|i| u[i] * u[i] + u[i + n] * u[i + n] >= 1.0) {
        return false;
    }
    if problem.constraints.iter().any(|g| g.value(u) <= 0.0) {
        return false;
    }
    if let Objective::ReciprocalSum { terms, .. } = &problem.objective {
        if terms
            .denominators(u)
            .iter()
            .any(|&d| d <= problem.domain_margin)
        {
            return false;
        }
    }
    true
}

fn objective_value(problem: &QcqpProblem, u: &DVector<f64>) -> f64 {
    match &problem.objective {
        Objective::Quadratic(q) => q.value(u),
        Objective::ReciprocalSum {
            terms,
            penalty_mu,
            penalty_center,
            scale,
        } => {
            let recip: f64 = terms
                .weights
                .iter()
                .zip(terms.denominators(u))
                .map(|(w, d)| w / d)
                .sum();
            let diff = u - penalty_center;
            -(recip + penalty_mu * diff.norm_squared()) / scale
        }
    }
}

/// Subgradient restoration toward max-min constraint slack, used when the
/// warm start is not strictly feasible. Implements the phase-1 slack
/// minimization: returns an interior point or reports the best slack found.
fn phase_one(
    problem: &QcqpProblem,
    u0: &DVector<f64>,
    target: f64,
) -> Result<DVector<f64>, f64> {
    let n = problem.n_complex;
    let shrink = |u: &DVector<f64>| -> DVector<f64> {
        let mut v = u.clone();
        for i in 0..n {
            let r = (v[i] * v[i] + v[i + n] * v[i + n]).sqrt();
            if r > 1.0 - 1e-9 {
                let s = (1.0 - 1e-7) / r;
                v[i] *= s;
                v[i + n] *= s;
            }
        }
        v
    };
    let slack_scale: Vec<f64> = problem
        .constraints
        .iter()
        .map(|g| g.lin.norm().max(1.0))
        .collect();
    let min_slack = |u: &DVector<f64>| -> (f64, usize) {
        let mut worst = f64::INFINITY;
        let mut idx = 0;
        for (k, g) in problem.constraints.iter().enumerate() {
            let s = g.value(u) / slack_scale[k];
            if s < worst {
                worst = s;
                idx = k;
            }
        }
        (worst, idx)
    };
    let mut u = shrink(u0);
    if problem.constraints.is_empty() {
        return Ok(u);
    }
    let (mut best_slack, _) = min_slack(&u);
    let mut best = u.clone();
    for iter in 0..600 {
        let (s, k) = min_slack(&u);
        if s > best_slack {
            best_slack = s;
            best = u.clone();
        }
        if s >= target {
            return Ok(u);
        }
        let g = problem.constraints[k].grad(&u).unscale(slack_scale[k]);
        let gn = g.norm_squared();
        if gn < 1e-300 {
            break;
        }
        // Polyak step toward slack level `target`.
        let step = ((target * 1.5 - s) / gn).min(1.0 / (1.0 + iter as f64 / 50.0));
        u.axpy(step, &g, 1.0);
        u = shrink(&u);
    }
    let (s, _) = min_slack(&best);
    if s >= target {
        Ok(best)
    } else {
        Err(s)
    }
}

/// Solves the barrier subproblem from a warm start. The start is made
/// strictly feasible by shrinking into the modulus ball and, if needed, a
/// phase-1 restoration pass.
pub fn solve_qcqp(
    problem: &QcqpProblem,
    x_start: &CVector,
    opts: &BarrierOptions,
) -> Result<BarrierSolution, SolverError> {
    let dim = 2 * problem.n_complex;
    let mut u = embed_vector(x_start);
    // Pull boundary entries strictly inside the modulus ball.
    let n = problem.n_complex;
    for i in 0..n {
        let r = (u[i] * u[i] + u[i + n] * u[i + n]).sqrt();
        if r > 1.0 - 1e-9 {
            let s = (1.0 - 1e-7) / r.max(1e-300);
            u[i] *= s;
            u[i + n] *= s;
        }
    }
    if !feasible(problem, &u) {
        match phase_one(problem, &u, 1e-9) {
            Ok(v) => u = v,
            Err(_best) => {
                return Ok(BarrierSolution {
                    x: complex_from_real(&u),
                    u,
                    objective: f64::NEG_INFINITY,
                    gap: f64::INFINITY,
                    kkt_residual: f64::INFINITY,
                    newton_steps: 0,
                    status: BarrierStatus::Infeasible,
                });
            }
        }
        if !feasible(problem, &u) {
            return Ok(BarrierSolution {
                x: complex_from_real(&u),
                u,
                objective: f64::NEG_INFINITY,
                gap: f64::INFINITY,
                kkt_residual: f64::INFINITY,
                newton_steps: 0,
                status: BarrierStatus::Infeasible,
            });
        }
    }

    let m_total = problem.constraints.len()
        + problem.n_complex
        + match &problem.objective {
            Objective::ReciprocalSum { terms, .. } => terms.weights.len(),
            _ => 0,
        };
    let mut t = opts.t0;
    let mut newton_steps = 0;
    #[allow(unused_assignments)]
    let mut last_grad_norm = f64::INFINITY;
    let mut stage = 0;
    let mut stalled_stages = 0;
    loop {
        // Centering at this t.
        let mut inner = 0;
        let mut accepted_any = false;
        loop {
            let eval = eval_barrier(problem, &u, t)
                .ok_or_else(|| SolverError::Inner("barrier left the domain".into()))?;
            // Newton direction with diagonal regularization fallback.
            let mut reg = 0.0;
            let diag_scale = 1.0 + eval.hess.diagonal().amax();
            let delta = loop {
                let mut h = eval.hess.clone();
                if reg > 0.0 {
                    for i in 0..dim {
                        h[(i, i)] += reg;
                    }
                }
                match h.cholesky() {
                    Some(ch) => break ch.solve(&eval.grad),
                    None => {
                        reg = if reg == 0.0 {
                            1e-14 * diag_scale
                        } else {
                            reg * 100.0
                        };
                        if reg > 1e3 * diag_scale {
                            return Err(SolverError::Inner(format!(
                                "newton system is irreparably singular (t = {t:.3e})"
                            )));
                        }
                    }
                }
            };
            let decrement = eval.grad.dot(&delta);
            last_grad_norm = eval.grad.norm();
            if decrement.abs() / 2.0 <= opts.newton_tol * (1.0 + eval.value.abs()) {
                break;
            }
            // Backtracking line search on phi_t.
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial = &u - delta.scale(step);
                if let Some(te) = eval_barrier(problem, &trial, t) {
                    if te.value <= eval.value - 0.25 * step * decrement {
                        u = trial;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            newton_steps += 1;
            inner += 1;
            if accepted {
                accepted_any = true;
            }
            if !accepted || inner >= opts.max_newton_per_stage {
                break;
            }
        }
        stage += 1;
        if inner > 0 && !accepted_any {
            stalled_stages += 1;
            // Two stages without a single accepted step: the iterate is as
            // centered as floating point allows; pushing t further only
            // amplifies curvature.
            if stalled_stages >= 2 {
                break;
            }
        } else {
            stalled_stages = 0;
        }
        if m_total as f64 / t <= opts.gap_tol || stage >= opts.max_stages {
            break;
        }
        t *= opts.t_factor;
    }

    let objective = objective_value(problem, &u);
    let gap = m_total as f64 / t + last_grad_norm * 1e-16;
    Ok(BarrierSolution {
        x: complex_from_real(&u),
        kkt_residual: last_grad_norm / t,
        u,
        objective,
        gap,
        newton_steps,
        status: BarrierStatus::Solved,
    })
}

/// Explicit weak-duality certificate for a quadratic-objective QCQP: the
/// Lagrangian dual evaluated at the barrier's implicit multipliers upper
/// bounds the optimum, so dual - objective(u) bounds the true gap.
pub fn explicit_dual_gap(
    objective: &RealQuad,
    constraints: &[RealQuad],
    n_complex: usize,
    u: &DVector<f64>,
    t: f64,
) -> Option<f64> {
    let dim = u.len();
    let mut m = objective.m.clone();
    let mut lin = objective.lin.clone();
    let mut constant = objective.constant;
    for g in constraints {
        let gv = g.value(u);
        if gv <= 0.0 {
            return None;
        }
        let nu = 1.0 / (t * gv);
        m += g.m.scale(nu);
        lin += g.lin.scale(nu);
        constant += nu * g.constant;
    }
    for i in 0..n_complex {
        let b = 1.0 - u[i] * u[i] - u[i + n_complex] * u[i + n_complex];
        if b <= 0.0 {
            return None;
        }
        let om = 1.0 / (t * b);
        m[(i, i)] += om;
        m[(i + n_complex, i + n_complex)] += om;
        constant += om;
    }
    // max_u -u'Mu + 2 lin'u + c = lin' M^-1 lin + c at u* = M^-1 lin.
    let chol = m.cholesky()?;
    let ustar = chol.solve(&lin);
    let dual = lin.dot(&ustar) + constant;
    let _ = dim;
    Some(dual - objective.value(u))
}
