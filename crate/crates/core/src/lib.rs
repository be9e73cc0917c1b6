//! Multi-timescale bandwidth profiles (MTS-BWP).
//!
//! A profile extends the two-rate three-color marker to `N_DP` drop
//! precedences, each guarded by `N_TS` token buckets that track the
//! sending history of a node over different timescales. This crate holds
//! the pure algorithmic pieces:
//!
//! * [`profile`]: profile types, the dimensioning pipeline and validation.
//! * [`packet`]: a packet-level marker and a FIFO with drop-largest-DP-from-head AQM.
//! * [`alloc`]: the instantaneous fluid bandwidth allocation.
//! * [`fluid`]: the discrete-event fluid simulator.
//! * [`traffic`]: compound Poisson flow arrivals and the load setups.
//! * [`stats`]: node and flow bandwidth statistics over simulation traces.
//!
//! Units are fixed throughout: rates in Gbps, data volumes in Gbit, time
//! in seconds. Packet sizes are the one exception and are carried in bytes.
//! Drop precedences, timescales and nodes are 0-based indices in the API.
#![no_std]

extern crate alloc as std_alloc;

pub mod alloc;
mod error;
pub mod fluid;
mod matrix;
pub mod packet;
pub mod profile;
pub mod stats;
pub mod traffic;

pub use error::{Error, Result};
pub use matrix::Matrix;

/// Gbit per GByte.
pub const GBIT_PER_GBYTE: f64 = 8.0;

/// Converts a byte count to Gbit.
pub fn bytes_to_gbit(bytes: f64) -> f64 {
    bytes * 8e-9
}

/// Converts Gbit to bytes.
pub fn gbit_to_bytes(gbit: f64) -> f64 {
    gbit * 1.25e8
}
