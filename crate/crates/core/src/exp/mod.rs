//! Experiment driver: configuration, runs, sweeps, records and the CLI.

pub mod cli;
pub mod config;
pub mod records;
pub mod runner;
pub mod verify;

pub use config::{load_config, Profile, RunConfig, SystemConfig};
pub use runner::{
    build_scenario, evaluate_scheme, make_env, run_sweep, stream_rng, train_scheme, EvalSummary, PolicyCache, Scenario,
    Scheme, Stream, SweepAxis, SweepSpec, TrainedRun,
};
