//! Latency modeling and joint pruning/bandwidth optimization for federated
//! fine-tuning of large language models over wireless links.
//!
//! * [`arch`] counts parameters, bits and FLOPs of an emulator/adapter split.
//! * [`channel`] draws Rayleigh-faded gains and Shannon rates.
//! * [`latency`] evaluates per-client computation and communication time.
//! * [`jcpba`] solves the min-max latency allocation problem.
//! * [`fedsim`] runs multi-round simulations and heterogeneity sweeps.
//! * [`scenario`] and [`commands`] back the `fedlat` command-line tool.

pub mod arch;
pub mod channel;
pub mod commands;
pub mod fedsim;
pub mod jcpba;
pub mod latency;
pub mod scenario;
