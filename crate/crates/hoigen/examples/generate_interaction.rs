//! End-to-end generation at micro scale: build a tiny corpus, train both
//! stages briefly, then generate images for each verb, with and without a
//! background/box constraint.
//!
//! ```sh
//! cargo run --release --example generate_interaction -- [out_dir]
//! ```

use hoigen::app::{pipeline_smoke, RunPaths};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/example-e2e".into());
    let paths = RunPaths {
        root: std::path::PathBuf::from(&out),
    };
    let _ = std::fs::remove_dir_all(&paths.root);
    println!("running the micro pipeline under {out} (a few minutes on a laptop)...");
    let outcome = pipeline_smoke(11, &paths)?;
    for (name, ok) in &outcome.checks {
        println!("[{}] {name}", if *ok { "pass" } else { "FAIL" });
    }
    println!("artifact hash: {}", outcome.artifact_hash);
    println!("generated samples under {out}/samples/");
    anyhow::ensure!(outcome.ok(), "smoke checks failed");
    Ok(())
}
