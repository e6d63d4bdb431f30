pub mod autodiff;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod real;
pub mod rng;

pub use config::Config;
pub use error::{Error, Result};
pub mod sim;
pub mod dataset;
pub mod taskchain;
pub mod trainer;

/// Worker cap for parallel sections, from LVLA_THREADS (0 or 1 = serial;
/// unset = available parallelism, capped).
pub fn worker_count() -> usize {
    match std::env::var("LVLA_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) => 1,
            Ok(n) => n,
            Err(_) => 1,
        },
        Err(_) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(8),
    }
}
