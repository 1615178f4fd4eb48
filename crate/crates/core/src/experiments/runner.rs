//! Named, reproducible experiments binding scenarios, solvers, and metrics
//! into CSV (and optional SVG) artifacts. Every output file is listed in a
//! JSON manifest alongside the spec hash and seed; under a fixed seed the
//! CSVs are byte-identical across runs on one platform, except for
//! runtime-bench whose measurements are inherently machine-dependent.

use super::plot::{emit_plot, PlotSpec};
use crate::bayes::{adaptive_sensing_loop, marginals, monte_carlo_mse};
use crate::comm::{beampattern, combiner_set};
use crate::scenario::{PriorGrid, Scenario, ScenarioConfig, ScenarioError};
use crate::sensing::{SensingError, SensingMetricCache};
use crate::solvers::{
    feasible_init, solve_ao, solve_cmlt, solve_ipga, solve_pnqt, solve_unknown_alpha,
    SolverConfig, SolverError, SolverReport,
};
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Bayes(#[from] crate::bayes::BayesError),
    #[error(transparent)]
    Comm(#[from] crate::comm::CommError),
    #[error(transparent)]
    Plot(#[from] super::plot::PlotError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown experiment {0:?}")]
    UnknownExperiment(String),
    #[error("unknown solver {0:?}")]
    UnknownSolver(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}

macro_rules! kebab_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? } err $err:ident) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
        #[serde(rename_all = "kebab-case")]
        pub enum $name {
            $($variant),+
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let text = match self {
                    $(Self::$variant => $text),+
                };
                f.write_str(text)
            }
        }

        impl FromStr for $name {
            type Err = ExperimentError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok(Self::$variant),)+
                    other => Err(ExperimentError::$err(other.to_string())),
                }
            }
        }
    };
}

kebab_enum!(ExperimentName {
    Beampattern => "beampattern",
    PosteriorEvolution => "posterior-evolution",
    MseVsPower => "mse-vs-power",
    BcrlbVsPower => "bcrlb-vs-power",
    BcrlbVsSinr => "bcrlb-vs-sinr",
    BcrlbVsRician => "bcrlb-vs-rician",
    RuntimeBench => "runtime-bench",
    Table2 => "table2",
} err UnknownExperiment);

kebab_enum!(SolverKind {
    Pnqt => "pnqt",
    Cmlt => "cmlt",
    Ipga => "ipga",
    Ao => "ao",
    UnknownAlpha => "unknown-alpha",
} err UnknownSolver);

/// A named experiment run: which experiment, against which scenario, with
/// which solver and sweep, writing where, under which seed.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: ExperimentName,
    pub scenario_path: Option<PathBuf>,
    pub solver: SolverKind,
    pub sweep: Vec<f64>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub desk: bool,
    pub emit_plots: bool,
}

impl ExperimentSpec {
    pub fn new(name: ExperimentName, out_dir: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            name,
            scenario_path: None,
            solver: SolverKind::Cmlt,
            sweep: Vec::new(),
            out_dir: out_dir.into(),
            seed,
            desk: false,
            emit_plots: true,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub experiment: ExperimentName,
    pub solver: SolverKind,
    pub spec_hash: String,
    pub seed: u64,
    pub desk: bool,
    pub sweep: Vec<f64>,
    pub version: String,
    pub outputs: Vec<String>,
    pub statuses: Vec<String>,
    pub wall_time_s: f64,
}

impl Manifest {
    pub fn output_paths(&self, spec_dir: &Path) -> Vec<PathBuf> {
        self.outputs.iter().map(|f| spec_dir.join(f)).collect()
    }
}

struct Run<'a> {
    spec: &'a ExperimentSpec,
    outputs: Vec<String>,
    statuses: Vec<String>,
}

impl<'a> Run<'a> {
    fn write_csv(&mut self, name: &str, content: &str) -> Result<(), ExperimentError> {
        std::fs::write(self.spec.out_dir.join(name), content)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn plot(&mut self, csv: &str, plot: PlotSpec) -> Result<(), ExperimentError> {
        if !self.spec.emit_plots {
            return Ok(());
        }
        let svg = csv.replace(".csv", ".svg");
        emit_plot(
            &self.spec.out_dir.join(csv),
            &plot,
            &self.spec.out_dir.join(&svg),
        )?;
        self.outputs.push(svg);
        Ok(())
    }

    fn status(&mut self, s: impl Into<String>) {
        self.statuses.push(s.into());
    }
}

/// Runs an experiment to completion, writing artifacts plus manifest.json
/// into the output directory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Manifest, ExperimentError> {
    let start = Instant::now();
    std::fs::create_dir_all(&spec.out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| ExperimentError::InvalidSpec(e.to_string()))?;
    let mut run = Run {
        spec,
        outputs: Vec::new(),
        statuses: Vec::new(),
    };
    pool.install(|| match spec.name {
        ExperimentName::Beampattern => beampattern_experiment(&mut run),
        ExperimentName::PosteriorEvolution => posterior_experiment(&mut run),
        ExperimentName::MseVsPower => mse_vs_power(&mut run),
        ExperimentName::BcrlbVsPower => bcrlb_vs_power(&mut run),
        ExperimentName::BcrlbVsSinr => bcrlb_sweep(&mut run, SweepAxis::SinrDb),
        ExperimentName::BcrlbVsRician => bcrlb_sweep(&mut run, SweepAxis::Rician),
        ExperimentName::RuntimeBench => runtime_bench(&mut run),
        ExperimentName::Table2 => table2(&mut run),
    })?;

    let manifest = Manifest {
        experiment: spec.name,
        solver: spec.solver,
        spec_hash: spec_hash(spec),
        seed: spec.seed,
        desk: spec.desk,
        sweep: spec.sweep.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: run.outputs,
        statuses: run.statuses,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(spec.out_dir.join("manifest.json"), json)?;
    Ok(manifest)
}

/// Worker count for sweep parallelism, from FCFP_RIS_WORKERS (0 or unset
/// lets rayon decide).
pub fn worker_count() -> usize {
    std::env::var("FCFP_RIS_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0)
}

fn spec_hash(spec: &ExperimentSpec) -> String {
    let mut hasher = Sha256::new();
    hasher.update(spec.name.to_string());
    hasher.update([0]);
    hasher.update(spec.solver.to_string());
    hasher.update([0]);
    hasher.update(spec.seed.to_le_bytes());
    hasher.update([spec.desk as u8]);
    for v in &spec.sweep {
        hasher.update(v.to_le_bytes());
    }
    if let Some(path) = &spec.scenario_path {
        if let Ok(text) = std::fs::read(path) {
            hasher.update(&text);
        }
    }
    hex::encode(hasher.finalize())
}

fn base_config(spec: &ExperimentSpec) -> Result<ScenarioConfig, ExperimentError> {
    let mut cfg = match &spec.scenario_path {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(ScenarioError::Parse)?,
        None => ScenarioConfig::with_seed(spec.seed),
    };
    cfg.seed = spec.seed;
    if spec.desk {
        cfg.apply_desk_profile();
    }
    Ok(cfg)
}

fn dbm(v: f64) -> String {
    format!("{v} dBm")
}

fn set_all_powers(cfg: &mut ScenarioConfig, power_dbm: f64) {
    let p = dbm(power_dbm);
    let mut sensing = cfg.sensing.clone().unwrap_or(crate::scenario::SensingConfig {
        angle_true: None,
        power: None,
        fading: None,
        rician_factor: None,
        alpha_factor: None,
    });
    sensing.power = Some(p.clone());
    cfg.sensing = Some(sensing);
    if let Some(users) = &mut cfg.comm_users {
        for u in users.iter_mut() {
            u.power = Some(p.clone());
        }
    } else {
        cfg.comm_users = Some(
            ["110 deg", "120 deg", "130 deg"]
                .iter()
                .map(|a| crate::scenario::CommUserConfig {
                    angle: (*a).to_string(),
                    power: Some(p.clone()),
                })
                .collect(),
        );
        if cfg.bs_antennas == Some(4) {
            cfg.comm_users.as_mut().unwrap().truncate(2);
        }
    }
}

/// Shared solve pipeline: cache, feasible start, dispatch. The RNG stream
/// is derived from (seed, stream) so sweep points are independent and
/// deterministic regardless of scheduling.
fn solve(
    scen: &Scenario,
    prior: &PriorGrid,
    kind: SolverKind,
    seed: u64,
    stream: u64,
) -> Result<SolverReport, SolverError> {
    let cache = SensingMetricCache::build(scen, prior)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1000 + stream);
    let cfg = SolverConfig::default();
    let x0 = feasible_init(scen, &cache, &mut rng, &cfg)?;
    match kind {
        SolverKind::Pnqt => solve_pnqt(scen, &cache, &cfg, &x0),
        SolverKind::Cmlt => solve_cmlt(scen, &cache, &cfg, &x0),
        SolverKind::Ipga => solve_ipga(scen, &cache, &cfg, &x0),
        SolverKind::Ao => solve_ao(scen, &cache, &cfg, &x0),
        SolverKind::UnknownAlpha => solve_unknown_alpha(scen, prior, &cfg, &x0),
    }
}

fn status_line(kind: SolverKind, report: &SolverReport) -> String {
    format!(
        "{kind}: {:?}, bcrlb {:.6e} deg2, {} inner iterations",
        report.status, report.bcrlb_final, report.inner_iterations
    )
}

// ---------------------------------------------------------------------------
// Individual experiments
// ---------------------------------------------------------------------------

fn beampattern_experiment(run: &mut Run) -> Result<(), ExperimentError> {
    let cfg = base_config(run.spec)?;
    let scen = cfg.build()?;
    let prior = scen.prior_grid();
    let report = solve(&scen, &prior, run.spec.solver, run.spec.seed, 0)?;
    run.status(status_line(run.spec.solver, &report));
    let cache = SensingMetricCache::build(&scen, &prior)?;
    let combiners = combiner_set(&report.x_final, &cache, &scen)?;
    let grid = crate::comm::default_phi_grid();

    let emit = |run: &mut Run, name: &str, w: &crate::numerics::CVector| -> Result<(), ExperimentError> {
        let q = beampattern(w, &report.x_final, &grid, &scen);
        let mut csv = String::from("phi_deg,q_db\n");
        for (phi, v) in grid.iter().zip(&q) {
            csv.push_str(&format!("{:.4},{:.6e}\n", phi.to_degrees(), v));
        }
        run.write_csv(name, &csv)?;
        run.plot(
            name,
            PlotSpec {
                x_column: "phi_deg".into(),
                y_columns: vec!["q_db".into()],
                log_y: false,
                title: name.trim_end_matches(".csv").replace('_', " "),
            },
        )
    };
    for (k, w) in combiners.comm.iter().enumerate() {
        emit(run, &format!("beampattern_comm_user_{k}.csv"), w)?;
    }
    emit(run, "beampattern_sensing.csv", &combiners.sensing)?;
    Ok(())
}

fn posterior_experiment(run: &mut Run) -> Result<(), ExperimentError> {
    let cfg = base_config(run.spec)?;
    let scen = cfg.build()?;
    let prior = scen.prior_grid();
    let unknown = prior.alpha.is_some();
    let iterations = if run.spec.sweep.is_empty() {
        if unknown {
            5
        } else {
            3
        }
    } else {
        run.spec.sweep[0] as usize
    };
    let mut rng = ChaCha8Rng::seed_from_u64(run.spec.seed);
    rng.set_stream(2000);
    let solver = run.spec.solver;
    let seed = run.spec.seed;
    let states = adaptive_sensing_loop(&scen, &prior, iterations, &mut rng, |current| {
        let kind = if unknown && solver == SolverKind::Cmlt {
            SolverKind::UnknownAlpha
        } else {
            solver
        };
        let report = solve(&scen, current, kind, seed, 3000)?;
        Ok(report.x_final)
    })?;

    let mut eta_csv = String::from("iteration,eta_deg,weight\n");
    let mut alpha_csv = String::from("iteration,alpha_re,alpha_im,weight\n");
    for state in &states {
        let (eta_m, alpha_m) = marginals(state);
        for (node, w) in state.grid.eta_nodes.iter().zip(&eta_m) {
            eta_csv.push_str(&format!(
                "{},{:.6},{:.12e}\n",
                state.iteration,
                node.to_degrees(),
                w
            ));
        }
        if let (Some(am), Some(grid)) = (alpha_m, state.grid.alpha.as_ref()) {
            for (node, w) in grid.nodes.iter().zip(&am) {
                alpha_csv.push_str(&format!(
                    "{},{:.9e},{:.9e},{:.12e}\n",
                    state.iteration, node.re, node.im, w
                ));
            }
        }
    }
    run.write_csv("posterior_eta.csv", &eta_csv)?;
    if unknown {
        run.write_csv("posterior_alpha.csv", &alpha_csv)?;
    }
    let last = states.last().expect("loop yields at least the prior");
    run.status(format!(
        "posterior iterations: {}, mass within 2 deg of truth: {:.4}",
        last.iteration,
        last.eta_mass_near(scen.sensing.eta_true, 2f64.to_radians())
    ));
    Ok(())
}

fn mse_vs_power(run: &mut Run) -> Result<(), ExperimentError> {
    let powers = if run.spec.sweep.is_empty() {
        vec![9.0, 12.0, 15.0, 18.0, 21.0]
    } else {
        run.spec.sweep.clone()
    };
    let trials = if run.spec.desk { 1000 } else { 1000 };
    let base = base_config(run.spec)?;
    let solver = run.spec.solver;
    let seed = run.spec.seed;
    let rows: Vec<Result<(f64, crate::bayes::MseResult, String), ExperimentError>> = {
        use rayon::prelude::*;
        powers
            .par_iter()
            .enumerate()
            .map(|(i, &p)| {
                let mut cfg = base.clone();
                set_all_powers(&mut cfg, p);
                let scen = cfg.build()?;
                let prior = scen.prior_grid();
                let report = solve(&scen, &prior, solver, seed, 100 + i as u64)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(4000 + i as u64);
                let mse = monte_carlo_mse(&scen, &report.x_final, trials, &mut rng)?;
                Ok((p, mse, status_line(solver, &report)))
            })
            .collect()
    };
    let mut csv = String::from("power_dbm,mse_deg2,bcrlb_deg2,trials\n");
    for row in rows {
        let (p, mse, status) = row?;
        run.status(format!("{p} dBm / {status}"));
        csv.push_str(&format!(
            "{p},{:.9e},{:.9e},{}\n",
            mse.mse_deg2, mse.bcrlb_deg2, mse.trials
        ));
    }
    run.write_csv("mse_vs_power.csv", &csv)?;
    run.plot(
        "mse_vs_power.csv",
        PlotSpec {
            x_column: "power_dbm".into(),
            y_columns: vec!["mse_deg2".into(), "bcrlb_deg2".into()],
            log_y: true,
            title: "MSE and bound vs transmit power".into(),
        },
    )
}

fn bcrlb_vs_power(run: &mut Run) -> Result<(), ExperimentError> {
    let powers = if run.spec.sweep.is_empty() {
        vec![9.0, 12.0, 15.0, 18.0, 21.0]
    } else {
        run.spec.sweep.clone()
    };
    let base = base_config(run.spec)?;
    let seed = run.spec.seed;
    let solvers = [
        SolverKind::Pnqt,
        SolverKind::Cmlt,
        SolverKind::Ipga,
        SolverKind::Ao,
    ];
    let rows: Vec<Result<(f64, Vec<(SolverKind, SolverReport)>), ExperimentError>> = {
        use rayon::prelude::*;
        powers
            .par_iter()
            .enumerate()
            .map(|(i, &p)| {
                let mut cfg = base.clone();
                set_all_powers(&mut cfg, p);
                let scen = cfg.build()?;
                let prior = scen.prior_grid();
                let mut reports = Vec::new();
                for kind in solvers {
                    reports.push((kind, solve(&scen, &prior, kind, seed, 200 + i as u64)?));
                }
                Ok((p, reports))
            })
            .collect()
    };
    let mut csv =
        String::from("power_dbm,bcrlb_pnqt_deg2,bcrlb_cmlt_deg2,bcrlb_ipga_deg2,bcrlb_ao_deg2\n");
    for row in rows {
        let (p, reports) = row?;
        for (kind, report) in &reports {
            run.status(format!("{p} dBm / {}", status_line(*kind, report)));
        }
        csv.push_str(&format!(
            "{p},{:.9e},{:.9e},{:.9e},{:.9e}\n",
            reports[0].1.bcrlb_final,
            reports[1].1.bcrlb_final,
            reports[2].1.bcrlb_final,
            reports[3].1.bcrlb_final
        ));
    }
    run.write_csv("bcrlb_vs_power.csv", &csv)?;
    run.plot(
        "bcrlb_vs_power.csv",
        PlotSpec {
            x_column: "power_dbm".into(),
            y_columns: vec![
                "bcrlb_pnqt_deg2".into(),
                "bcrlb_cmlt_deg2".into(),
                "bcrlb_ipga_deg2".into(),
                "bcrlb_ao_deg2".into(),
            ],
            log_y: true,
            title: "Optimized bound vs transmit power".into(),
        },
    )
}

enum SweepAxis {
    SinrDb,
    Rician,
}

fn bcrlb_sweep(run: &mut Run, axis: SweepAxis) -> Result<(), ExperimentError> {
    let values = if run.spec.sweep.is_empty() {
        match axis {
            SweepAxis::SinrDb => vec![0.0, 4.0, 8.0, 12.0],
            SweepAxis::Rician => vec![0.0, 1.0, 5.0, 10.0],
        }
    } else {
        run.spec.sweep.clone()
    };
    let base = base_config(run.spec)?;
    let solver = run.spec.solver;
    let seed = run.spec.seed;
    let rows: Vec<Result<(f64, SolverReport), ExperimentError>> = {
        use rayon::prelude::*;
        values
            .par_iter()
            .enumerate()
            .map(|(i, &v)| {
                let mut cfg = base.clone();
                match axis {
                    SweepAxis::SinrDb => cfg.sinr_threshold = Some(format!("{v} dB")),
                    SweepAxis::Rician => {
                        let mut sensing =
                            cfg.sensing.clone().unwrap_or(crate::scenario::SensingConfig {
                                angle_true: None,
                                power: None,
                                fading: None,
                                rician_factor: None,
                                alpha_factor: None,
                            });
                        sensing.rician_factor = Some(v);
                        cfg.sensing = Some(sensing);
                    }
                }
                let scen = cfg.build()?;
                let prior = scen.prior_grid();
                Ok((v, solve(&scen, &prior, solver, seed, 300 + i as u64)?))
            })
            .collect()
    };
    let (axis_name, file, title) = match axis {
        SweepAxis::SinrDb => (
            "sinr_db",
            "bcrlb_vs_sinr.csv",
            "Optimized bound vs SINR threshold",
        ),
        SweepAxis::Rician => (
            "rician_zeta",
            "bcrlb_vs_rician.csv",
            "Optimized bound vs Rician factor",
        ),
    };
    let mut csv = format!("{axis_name},bcrlb_deg2,status\n");
    for row in rows {
        let (v, report) = row?;
        run.status(format!("{axis_name} = {v} / {}", status_line(solver, &report)));
        csv.push_str(&format!(
            "{v},{:.9e},{:?}\n",
            report.bcrlb_final, report.status
        ));
    }
    run.write_csv(file, &csv)?;
    run.plot(
        file,
        PlotSpec {
            x_column: axis_name.into(),
            y_columns: vec!["bcrlb_deg2".into()],
            log_y: true,
            title: title.into(),
        },
    )
}

fn runtime_bench(run: &mut Run) -> Result<(), ExperimentError> {
    let sides: Vec<usize> = if run.spec.sweep.is_empty() {
        vec![10, 15, 20]
    } else {
        run.spec
            .sweep
            .iter()
            .map(|&n| (n.sqrt().round() as usize).max(1))
            .collect()
    };
    let base = base_config(run.spec)?;
    let seed = run.spec.seed;
    let mut csv =
        String::from("n_elements,solver,per_iter_ms,iterations,total_s,bcrlb_deg2\n");
    for (i, &side) in sides.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.ris = Some(crate::scenario::RisConfig {
            rows: side,
            cols: side,
            spacing_ratio: 0.5,
        });
        // Benchmarks compare scaling, not final accuracy.
        let mut prior_cfg = cfg.prior.clone().unwrap_or_default();
        prior_cfg.eta_nodes = Some(prior_cfg.eta_nodes.unwrap_or(101).min(21));
        cfg.prior = Some(prior_cfg);
        let scen = cfg.build()?;
        let prior = scen.prior_grid();
        let cache = SensingMetricCache::build(&scen, &prior)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(5000 + i as u64);
        let solver_cfg = SolverConfig::relaxed();
        let x0 = feasible_init(&scen, &cache, &mut rng, &solver_cfg)?;
        for kind in [SolverKind::Pnqt, SolverKind::Cmlt] {
            let report = match kind {
                SolverKind::Pnqt => solve_pnqt(&scen, &cache, &solver_cfg, &x0)?,
                _ => solve_cmlt(&scen, &cache, &solver_cfg, &x0)?,
            };
            let iters = report.inner_iterations.max(1);
            csv.push_str(&format!(
                "{},{kind},{:.4},{},{:.4},{:.9e}\n",
                side * side,
                report.wall_time * 1e3 / iters as f64,
                iters,
                report.wall_time,
                report.bcrlb_final
            ));
            run.status(format!(
                "N = {}: {}",
                side * side,
                status_line(kind, &report)
            ));
        }
    }
    run.write_csv("runtime_bench.csv", &csv)?;
    Ok(())
}

fn table2(run: &mut Run) -> Result<(), ExperimentError> {
    let base = base_config(run.spec)?;
    let seed = run.spec.seed;
    let scenarios: [(&str, &[&str]); 3] = [
        ("scenario-1", &["110 deg", "130 deg"]),
        ("scenario-2", &["110 deg", "120 deg", "130 deg"]),
        ("scenario-3", &["100 deg", "110 deg", "120 deg", "130 deg"]),
    ];
    let solvers = [
        SolverKind::Cmlt,
        SolverKind::Pnqt,
        SolverKind::Ao,
        SolverKind::Ipga,
    ];
    let mut csv = String::from("scenario,solver,bcrlb_deg2,status\n");
    for (si, (label, angles)) in scenarios.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.comm_users = Some(
            angles
                .iter()
                .map(|a| crate::scenario::CommUserConfig {
                    angle: (*a).to_string(),
                    power: None,
                })
                .collect(),
        );
        let scen = match cfg.build() {
            Ok(s) => s,
            Err(e) => {
                run.status(format!("{label}: skipped ({e})"));
                continue;
            }
        };
        let prior = scen.prior_grid();
        let reports: Vec<Result<(SolverKind, SolverReport), ExperimentError>> = {
            use rayon::prelude::*;
            solvers
                .par_iter()
                .map(|&kind| Ok((kind, solve(&scen, &prior, kind, seed, 600 + si as u64)?)))
                .collect()
        };
        for report in reports {
            let (kind, report) = report?;
            run.status(format!("{label} / {}", status_line(kind, &report)));
            csv.push_str(&format!(
                "{label},{kind},{:.9e},{:?}\n",
                report.bcrlb_final, report.status
            ));
        }
    }
    run.write_csv("table2.csv", &csv)?;
    Ok(())
}
