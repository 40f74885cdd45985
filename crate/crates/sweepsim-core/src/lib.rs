//! Exact event-driven simulation of a fixed-size population in which
//! individuals accumulate beneficial mutations.
//!
//! The model: `N` individuals each carry some number `k` of mutations
//! ("type k") and have fitness `(1+s)^k`. Each individual dies at rate 1
//! and is replaced by the offspring of a parent chosen with probability
//! proportional to fitness; independently, each individual acquires a new
//! mutation at rate `mu`, moving from type `k` to type `k+1`. Replacements
//! of an individual by one of the same type do not change the composition
//! and are excluded from the event space.
//!
//! The crate provides:
//!
//! * [`engine`] — the exact continuous-time simulator (one exponential
//!   clock per composition-changing event, no time discretization),
//! * [`observe`] — threshold crossing times, mutation counters, sweep
//!   counts, and width profiles extracted from runs or recorded event logs,
//! * [`branching`] — closed forms and Monte Carlo simulators for the
//!   birth-death-with-immigration processes that bound the population
//!   from above and below,
//! * [`coupling`] — joint constructions that run a companion process on
//!   the same randomness as the population and assert pathwise domination,
//! * [`rng`] — splittable seeding so replicate streams never collide.
//!
//! The crate is `no_std`-compatible (enable the `libm` feature instead of
//! the default `std` feature); all simulation state lives in `alloc`
//! collections.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("sweepsim-core needs either the `std` or the `libm` feature for f64 math");

pub mod branching;
pub mod coupling;
pub mod engine;
pub mod math;
pub mod observe;
pub mod params;
pub mod rng;
pub mod state;

pub use engine::{Engine, Monitor, RunOutcome, StopCondition, StopReason};
pub use params::{Parameters, RegimeReport};
pub use state::{Event, EventKind, PopulationState, Trajectory};
