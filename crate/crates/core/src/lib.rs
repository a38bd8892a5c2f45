pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod evidence;
pub mod io;
pub mod model;
pub mod pmmh;
pub mod prior;
pub mod proposal;
pub mod rng;
pub mod smc;
