//! File formats, scenario runs and experiment grids on top of
//! [`mtsbwp_core`].

pub mod experiment;
pub mod formats;
pub mod scenario;
