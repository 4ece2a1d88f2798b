//! Simulation library for mem-element compute-in-memory accelerators.
//!
//! * [`devices`]: programmable memristor / memcapacitor cells and their non-idealities
//! * [`crossbar`]: weight mapping plus ideal and wire-resistance-aware VMM
//! * [`periphery`]: input bit slicing, ADC quantization, shift-and-add
//! * [`training`]: small CNN/MLP training through the analog path
//! * [`meminductor`]: behavioral OTA meminductor emulator and circuits built from it
//! * [`costmodel`]: tile planning and area / latency / energy estimates
//!
//! All randomness is drawn from caller-supplied seeded generators.

pub mod costmodel;
pub mod crossbar;
pub mod devices;
pub mod error;
pub mod meminductor;
pub mod periphery;
pub mod training;

pub use error::{Result, SimError};

/// Deterministic generator used throughout the crate.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Build a [`SimRng`] from a seed.
pub fn rng_from_seed(seed: u64) -> SimRng {
    use rand::SeedableRng;
    SimRng::seed_from_u64(seed)
}
