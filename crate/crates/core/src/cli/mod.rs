//! Artifact plumbing behind the `cplearn` binary.

pub mod data;
pub mod run;
pub mod verify;

pub use data::{gaussian_clusters, ClusterSpec, Dataset};
pub use run::{run_train, DataSource, DictionaryChoice, RunConfig, RunReport};
pub use verify::{verify, Suite, VerifyReport};
