//! Experiment driver library behind the `ppp-bayes` binary: config parsing,
//! pipeline orchestration, and report serialization.

pub mod config;
pub mod experiment;
pub mod report;

/// Initializes the global worker pool from `PPP_THREADS` (defaults to the
/// hardware concurrency). Call once at startup; later calls are no-ops.
pub fn init_thread_pool() {
    if let Ok(value) = std::env::var("PPP_THREADS") {
        if let Ok(threads) = value.parse::<usize>() {
            if threads >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
        }
    }
}
