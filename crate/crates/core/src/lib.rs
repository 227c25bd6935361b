//! Admission control for volatile edge clusters.
//!
//! Before every service execution a policy decides which devices of the
//! cluster may be used. Three policies share one interface:
//!
//! * [`dqn::DqnAgent`]: a masked deep Q-learning agent that toggles at most
//!   one device per execution,
//! * [`policies::TelPolicy`]: blocks the devices with the worst observed
//!   availability,
//! * [`policies::RndPolicy`]: blocks a random subset of devices.
//!
//! [`sim::Cluster`] emulates device volatility and decides whether an
//! execution was disrupted.
//!
//! The crate is `no_std` and only needs `alloc`. Wall-clock access is
//! injected through [`sim::Clock`].

#![no_std]
#![deny(missing_debug_implementations)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dqn;
pub mod env;
mod error;
pub mod nn;
pub mod policies;
pub mod seed;
pub mod sim;

pub use error::{Error, FormatError};

/// Deterministic generator used for every random stream in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Seed a [`Rng`] from a 64-bit value.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
