//! Staged pipeline over [`epialloc_core`]: configuration, artifact store and stage runners.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod store;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use pipeline::{Mode, Pipeline, PolicyRef};

/// Sizes the global rayon pool. Later calls are ignored once the pool exists.
pub fn configure_threads(threads: Option<usize>) {
    if let Some(n) = threads.filter(|n| *n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
