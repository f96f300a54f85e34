//! Shared fixtures for the benchmarks.

use elm_core::{AnyDensity, Integrator, Result, Scenario};

/// Integrator for `scenario` past its first (copy-guess) step, with error
/// tracking off so a step measures only the Jacobi sweep.
pub fn warmed(scenario: &Scenario) -> Result<Integrator<AnyDensity>> {
    let mut elm = scenario.integrator()?;
    elm.set_error_tracking(false);
    elm.step()?;
    Ok(elm)
}
