pub mod bayes;
pub mod comm;
pub mod experiments;
pub mod numerics;
pub mod scenario;
pub mod sensing;
pub mod solvers;
pub mod transforms;
