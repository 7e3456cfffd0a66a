//! Harnack coupling by change of measure.

pub mod dini;
pub mod gamma;
pub mod run;

pub use dini::{dini_gate, dini_integral, psi, psi_inverse, DiniGate, DiniIntegral, Modulus};
pub use gamma::{gamma_schedule, GammaSchedule};
pub use run::{
    coupled_batch, coupled_simulate, coupling_success, CouplingBatch, CouplingRun, CouplingSetup, CouplingSuccess,
    RunSummary,
};
