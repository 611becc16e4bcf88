//! The acceptance gate: every criterion of the build contract, run end to
//! end at the default experiment scale, one pass/fail line per criterion.
//!
//! This trains both models from scratch, so the full run takes on the order
//! of a couple of hours on a small CPU box. Run it with:
//!
//! ```sh
//! cargo test --release --test acceptance -- --nocapture
//! ```
//!
//! `HOIGEN_ACCEPT_CONFIG` can point at an alternative experiment config
//! (development override; the default is the gate).

use hoigen::app::{accept_suite, ExperimentConfig, RunPaths};

#[test]
fn acceptance_suite() {
    let cfg = match std::env::var("HOIGEN_ACCEPT_CONFIG") {
        Ok(p) => ExperimentConfig::load(std::path::Path::new(&p)).expect("override config parses"),
        Err(_) => ExperimentConfig::default(),
    };
    let root = std::env::var("HOIGEN_OUT_ROOT")
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|_| std::env::temp_dir())
        .join("hoigen_acceptance");
    let _ = std::fs::remove_dir_all(&root);
    let paths = RunPaths { root };

    let outcome = accept_suite(&cfg, &paths).expect("acceptance suite runs to completion");
    let failed: Vec<String> = outcome
        .criteria
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("criterion {} ({}): {}", c.id, c.name, c.details))
        .collect();
    assert!(
        outcome.all_pass,
        "acceptance criteria failed:\n{}",
        failed.join("\n")
    );
}
