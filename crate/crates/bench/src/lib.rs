//! Fixtures shared by the benchmarks.

use gendyne_core::fock::FockDensity;
use gendyne_core::povm::Unravelling;
use gendyne_core::sme::{Engine, InitialState, SmeConfig, Stepper};

/// Single-step configuration at `Υ = 0.5`, `N = 1`.
pub fn step_config(dim: usize, stepper: Stepper) -> SmeConfig {
    let mut cfg = SmeConfig::new(Unravelling::new(0.5, 1.0).unwrap(), 1e-3, 1, dim, 1, Engine::Fock).unwrap();
    cfg.stepper = stepper;
    cfg.positivity_check_every = 0;
    cfg
}

/// A mixed, displaced Gaussian state well inside the truncation.
pub fn initial() -> InitialState {
    InitialState::Gaussian {
        mean: [1.0, -0.5],
        cov: [[1.8, 0.2], [0.2, 1.4]],
    }
}

pub fn initial_density(dim: usize) -> FockDensity {
    initial().density(dim).unwrap()
}
