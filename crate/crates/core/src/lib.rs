//! Finite-volume solvers for 1-D hyperbolic conservation laws and learning of
//! flux closures as shallow networks embedded in the scheme.

pub mod closure;
pub mod data;
pub mod evaluation;
pub mod godunov;
pub mod grid;
pub mod models;
pub mod riemann;
pub mod sampling;
pub mod system;
pub mod training;

pub use godunov::{LimiterKind, SourceIntegrator, StepConfig, StepError};
pub use grid::{BoundaryKind, CellField, Grid};
pub use models::{Burgers, InitialCondition, Lwr, Model, PayneWhitham, ShallowWater};
pub use system::{HyperbolicSystem, SolverKind, SystemError};
