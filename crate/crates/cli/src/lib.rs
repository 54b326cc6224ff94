//! Orchestration of swarmfield experiments and the command-line front end.

pub mod cli;
pub mod orchestrator;

pub use orchestrator::{
    build_child, launch, launch_with, read_manifest, run_simulated, shutdown, ChildSpec, ExitReport, LaunchError,
    LaunchOptions, RunHandle, RunManifest,
};
