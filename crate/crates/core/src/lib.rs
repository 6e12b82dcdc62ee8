//! Simulation of memristor-crossbar neural-network accelerators.
//!
//! The crate covers the device model ([`devices`]), crossbar tiles with
//! converters and mitigation ([`crossbar`]), SIREN networks in digital and
//! analog form ([`nets`]), hardware-aware training ([`training`]), two
//! regression tasks ([`geodesy`], [`gcnet`]) and the experiment sweeps
//! built on top of them ([`analysis`]).

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod crossbar;
pub mod devices;
pub mod error;
pub mod exec;
pub mod gcnet;
pub mod geodesy;
pub mod ndcore;
pub mod nets;
pub mod rng;
pub mod training;

pub use error::{MemsimError, Result};
