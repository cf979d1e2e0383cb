pub mod analysis;
pub mod closure;
pub mod cluster_scan;
pub mod config;
pub mod dynamics;
pub mod harness;
pub mod infometrics;
pub mod population;
pub mod scenario;
