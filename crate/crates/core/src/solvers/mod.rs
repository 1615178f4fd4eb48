//! RIS reflection-coefficient solvers: the penalty + quadratic-transform
//! method, the constant-modulus linear-transform method with its dual
//! subproblem, the unknown-fading variant, and the projected-gradient and
//! alternating-optimization baselines.
//!
//! A solver run is single-threaded and deterministic given (scenario,
//! config, seed). Reports serialize to JSON and iterate traces to CSV.

mod barrier;
mod baselines;
mod cmlt;
mod init;
mod pnqt;
mod unknown_alpha;

pub use barrier::{explicit_dual_gap, BarrierOptions, BarrierSolution, BarrierStatus};
pub use baselines::{solve_ao, solve_ipga};
pub use cmlt::{dual_lp_solve, solve_cmlt, DualLpSolution};
pub use init::feasible_init;
pub use pnqt::{inner_convex_solve, solve_pnqt};
pub use unknown_alpha::solve_unknown_alpha;

use crate::comm::{sinr, CommError};
use crate::numerics::NumericsError;
use crate::scenario::{RisPattern, Scenario};
use crate::sensing::{metric_a, SensingError, SensingMetricCache};
use crate::transforms::TransformError;
use serde::Serialize;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("no feasible initialization found after {restarts} restarts (best slack {best_slack:.3e})")]
    Infeasible { restarts: usize, best_slack: f64 },
    #[error("inner solver failed: {0}")]
    Inner(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Knobs shared by every solver. `mu0 = None` picks the penalty weight
/// automatically as 1e-3 |A(x0)|.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Initial penalty coefficient; auto-scaled from the start point when
    /// unset.
    pub mu0: Option<f64>,
    /// Penalty growth factor, > 1.
    pub xi: f64,
    /// Maximum outer (penalty or barrier-stage) iterations.
    pub max_outer: usize,
    /// Relative objective-change tolerance for inner loops.
    pub inner_tol: f64,
    /// KKT/duality-gap tolerance for the inner convex solves, relative to
    /// the objective scale.
    pub kkt_tol: f64,
    /// Tolerance for the dual subproblem of the linear-transform method.
    pub dual_tol: f64,
    /// Maximum inner iterations (per penalty stage for the quadratic
    /// method, total for the linear method).
    pub max_inner: usize,
    /// Relative threshold for the dual-coefficient zero test.
    pub zero_coeff_eps: f64,
    /// Phase quantization bits for the alternating-optimization baseline.
    pub ao_bits: u32,
    /// Exit threshold on ||x - exp(j arg x)||_inf.
    pub unit_tol: f64,
    /// Random restarts allowed while searching for a feasible start.
    pub feas_restarts: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mu0: None,
            xi: 3.0,
            max_outer: 20,
            inner_tol: 1e-6,
            kkt_tol: 1e-7,
            dual_tol: 1e-10,
            max_inner: 4000,
            zero_coeff_eps: 1e-9,
            ao_bits: 8,
            unit_tol: 1e-6,
            feas_restarts: 20,
        }
    }
}

impl SolverConfig {
    /// Loose tolerances for scaling benchmarks.
    pub fn relaxed() -> Self {
        Self {
            inner_tol: 1e-4,
            max_outer: 8,
            max_inner: 1500,
            kkt_tol: 1e-6,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStatus {
    Converged,
    MaxIter,
    InfeasibleInit,
    ZeroCoefficientFallback,
}

/// One row of the iterate trace.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TraceEntry {
    pub outer: usize,
    pub inner: usize,
    /// Solver objective at this iterate (the penalized objective for
    /// penalty methods, the plain metric otherwise).
    pub objective: f64,
    /// min_k (gamma_k / p_k - Gamma_k), infinity with no users.
    pub min_slack: f64,
    pub wall_ms: f64,
}

/// Outcome of a solver run: final pattern, iterate trace, constraint
/// slacks, bound value, timing, and status flags.
#[derive(Debug, Clone)]
pub struct SolverReport {
    pub x_final: RisPattern,
    pub objective_trace: Vec<TraceEntry>,
    pub constraint_slacks: Vec<f64>,
    pub bcrlb_final: f64,
    pub final_objective: f64,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub wall_time: f64,
    pub status: SolverStatus,
    pub zero_hits: usize,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    x_final: Vec<[f64; 2]>,
    objective_trace: &'a [TraceEntry],
    constraint_slacks: &'a [f64],
    bcrlb_final_deg2: f64,
    final_objective: f64,
    inner_iterations: usize,
    outer_iterations: usize,
    wall_time_s: f64,
    status: SolverStatus,
    zero_hits: usize,
}

impl SolverReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(ReportJson {
            x_final: self
                .x_final
                .coeffs()
                .iter()
                .map(|c| [c.re, c.im])
                .collect(),
            objective_trace: &self.objective_trace,
            constraint_slacks: &self.constraint_slacks,
            bcrlb_final_deg2: self.bcrlb_final,
            final_objective: self.final_objective,
            inner_iterations: self.inner_iterations,
            outer_iterations: self.outer_iterations,
            wall_time_s: self.wall_time,
            status: self.status,
            zero_hits: self.zero_hits,
        })
        .expect("report serialization cannot fail")
    }

    /// Writes the iterate trace as CSV: iteration, objective, min_slack,
    /// wall_ms.
    pub fn write_trace_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "iteration,outer,objective,min_slack,wall_ms")?;
        for (i, e) in self.objective_trace.iter().enumerate() {
            writeln!(
                w,
                "{},{},{:.12e},{:.12e},{:.3}",
                i, e.outer, e.objective, e.min_slack, e.wall_ms
            )?;
        }
        Ok(())
    }
}

/// True metric value and per-user normalized slacks gamma_k/p_k - Gamma_k.
pub fn objective_and_slacks(
    x: &RisPattern,
    cache: &SensingMetricCache,
    scen: &Scenario,
) -> Result<(f64, Vec<f64>), SolverError> {
    let a = metric_a(x, cache, scen)?;
    let slacks = sinr_slacks(x, cache, scen)?;
    Ok((a, slacks))
}

pub fn sinr_slacks(
    x: &RisPattern,
    cache: &SensingMetricCache,
    scen: &Scenario,
) -> Result<Vec<f64>, SolverError> {
    (0..scen.num_users())
        .map(|k| {
            let gamma = sinr(k, x, cache, scen)?;
            Ok(gamma / scen.comm_users[k].power - scen.gamma_k(k))
        })
        .collect()
}

pub fn min_slack(slacks: &[f64]) -> f64 {
    slacks.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Relative feasibility test: every slack at least -tol max(1, Gamma_k).
pub fn is_feasible(slacks: &[f64], scen: &Scenario, tol: f64) -> bool {
    slacks
        .iter()
        .enumerate()
        .all(|(k, &s)| s >= -tol * scen.gamma_k(k).max(1.0))
}
