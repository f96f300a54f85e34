//! Euler–Lagrange minimization (ELM): time stepping for field theories given
//! only a Lagrangian density, by minimizing the Euler–Lagrange residual over
//! small space-time patches of a Hermite interpolant.
//!
//! The usual entry point is a [`Scenario`], which bundles a density, grid,
//! initial condition and [`IntegratorConfig`]:
//!
//! ```no_run
//! use elm_core::scenarios;
//!
//! let scenario = scenarios::wave_1d(21, None);
//! let mut elm = scenario.integrator()?;
//! for _ in 0..10 {
//!     elm.step()?;
//! }
//! # Ok::<(), elm_core::Error>(())
//! ```

pub mod analysis;
pub mod autodiff;
pub mod baselines;
pub mod error;
pub mod grid;
pub mod hermite;
pub mod integrator;
pub mod lagrangian;
pub mod mlp;
pub mod patch;
pub mod quadrature;
pub mod scenarios;

pub use error::{Error, Result};
pub use grid::{Axis, BoundaryCondition, Grid, Wall};
pub use integrator::{rollout, FieldState, GuessMode, Integrator, IntegratorConfig, Sink, StepStats};
pub use lagrangian::{
    AnyDensity, DensitySpec, DoublePendulum, Jet, LagrangianDensity, Layout, Wave1d, Wave2d,
};
pub use mlp::MlpDensity;
pub use scenarios::Scenario;
