//! Everything around the algorithm: configuration, persisted traces, the BIC
//! auditor, Monte-Carlo lemma checks, counterexample scenarios and the
//! command implementations behind the `bicx` binary.

pub mod audit;
pub mod cmd;
pub mod config;
pub mod lemmas;
pub mod scenarios;
pub mod trace;

pub use audit::{audit_bic, audit_bic_file, AuditOptions, AuditReport};
pub use cmd::{cmd_run, run_config, run_single, RunOutcome};
pub use config::RunConfig;
pub use lemmas::{verify_lemmas, LemmaReport, Suite};
pub use scenarios::{counterexample_scenarios, ScenarioReport};

/// Caps the global rayon pool at `BICX_THREADS` workers when that variable
/// is set. Safe to call more than once; later calls are ignored.
pub fn init_thread_pool() {
    let Some(n) = std::env::var("BICX_THREADS").ok().and_then(|s| s.trim().parse::<usize>().ok()) else {
        return;
    };
    if n == 0 {
        return;
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        log::debug!("thread pool already initialised: {e}");
    }
}
