//! A desk-scale continual-learning laboratory.
//!
//! Trains small ReLU perceptrons on MNIST-family task streams with several
//! continual-learning algorithms (including mode-connectivity SGD), and
//! measures the geometry of the minima they reach: interpolation barriers,
//! loss planes, Hessian spectra, representation similarity and forgetting.

pub mod analysis;
pub mod data;
pub mod eigen;
pub mod error;
pub mod eval;
pub mod learners;
pub mod linalg;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use model::{Batch, MlpConfig, ParamVector};
pub use rng::Rng;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "MODECONN_THREADS";

/// Sizes the global worker pool from `MODECONN_THREADS` when it is set to a
/// positive integer. Returns the thread count in effect. Results never depend
/// on the thread count.
pub fn configure_threads() -> usize {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            // The pool may already exist; keeping it is harmless.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    rayon::current_num_threads()
}
