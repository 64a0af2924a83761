//! Brute-force incoherent dedispersion and an exhaustive auto-tuner for its
//! tiled kernel.
//!
//! The crate is organised bottom-up:
//!
//! * [`setup`]: observational setups, delay tables and instance sizing.
//! * [`signal`]: filterbank containers, synthetic pulses and file formats.
//! * [`kernels`]: reference and tiled dedispersion, load accounting.
//! * [`tuner`]: configuration enumeration, benchmarking and statistics.
//! * [`analysis`]: arithmetic intensity, roofline and deployment arithmetic.
//! * [`report`]: manifests, persisted results and the analysis report.

pub mod analysis;
pub mod error;
pub mod kernels;
pub mod report;
pub mod setup;
pub mod signal;
pub mod tuner;

pub use error::{DedispError, Result};
pub use kernels::{
    count_loads, dedisperse_reference, dedisperse_tiled, dedisperse_tiled_instrumented,
    DedispersedSeries, KernelConfig, KernelCounters, KernelLimits, LoadCounts, WorkerPool,
};
pub use setup::{
    builtin_setups, delay_seconds, instance_sizing, DelayTable, ObservationSetup, ProblemInstance,
};
pub use signal::{generate, Filterbank, PulseSpec};
pub use tuner::{
    benchmark, best_fixed_config, enumerate_configs, histogram, tune, zero_dm_experiment,
    TuneOptions, TuningRecord, TuningResult,
};
