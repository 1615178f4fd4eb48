pub mod plot;
pub mod runner;

pub use plot::{emit_plot, PlotError, PlotSpec};
pub use runner::{
    run_experiment, worker_count, ExperimentError, ExperimentName, ExperimentSpec, Manifest,
    SolverKind,
};
