//! Filesystem, process, and terminal glue around `cmbd-core`: dataset
//! manifests and PNG handling, mining sidecars, checkpoints, run
//! configuration, the external-surrogate adapter, and the stage drivers
//! behind each subcommand.

pub mod backend;
pub mod checkpoint;
pub mod errors;
pub mod imageio;
pub mod manifest;
pub mod report;
pub mod runcfg;
pub mod sidecar;
pub mod stages;
pub mod surrogate_ext;
pub mod toyset;
