//! Command-line pipeline around the `eddytv` library: configuration,
//! run manifests, VTK export and the `mesh`/`synth`/`invert`/`report`
//! stages.

pub mod commands;
pub mod config;
pub mod error;
pub mod vtk;

pub use error::{CliError, Result};

/// Sets the thread count of the dense factorization and of the global
/// rayon pool. Only the first call configures rayon.
pub fn configure_threads(n: usize) {
    faer::set_global_parallelism(if n > 1 { faer::Par::rayon(n) } else { faer::Par::Seq });
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        log::debug!("rayon pool already configured: {e}");
    }
}
