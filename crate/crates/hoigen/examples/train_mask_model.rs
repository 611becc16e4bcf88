//! Train the interaction-aware mask model at a configurable micro scale and
//! report per-category oracle pass rates of its samples.
//!
//! ```sh
//! cargo run --release --example train_mask_model -- [per_category] [steps] [eval_n]
//! ```

use hoigen::datasets::{build_split, write_manifest};
use hoigen::iamg::train::windowed_loss;
use hoigen::iamg::{generate_masks_batch, train_iamg, IamgTrainConfig, MaskDataset, MaskModelConfig};
use hoigen::synthworld::sample::Split;
use hoigen::synthworld::{check_interaction, RuleConfig};

fn main() -> anyhow::Result<()> {
    let cfg = RuleConfig::builtin();
    let args: Vec<String> = std::env::args().collect();
    let per_cat: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let eval_n: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(24);

    let dir = std::env::temp_dir().join("hoigen_example_mask_model");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir)?;
    let samples = build_split(1, Split::Train, per_cat, cfg)?;
    let manifest = write_manifest(&samples, &dir, Split::Train, 1, cfg)?;
    drop(samples);
    let data = MaskDataset::from_manifest(&dir, &manifest, cfg)?;

    let tcfg = IamgTrainConfig {
        steps,
        seed: 7,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let mut trained = train_iamg(&data, MaskModelConfig::default(), &tcfg)?;
    let (head, tail) = windowed_loss(&trained.meta.loss_history, 100);
    println!(
        "trained {steps} steps in {:.0}s ({:.3} s/step), loss {head:.4} -> {tail:.4}",
        t0.elapsed().as_secs_f64(),
        t0.elapsed().as_secs_f64() / steps as f64
    );

    for cat in &cfg.categories {
        let ids = vec![cat.id; eval_n];
        let masks = generate_masks_batch(&mut trained.model, &trained.schedule, &ids, None, 99)?;
        let pass = masks
            .iter()
            .filter(|(h, o)| check_interaction(h, o, cat, cfg).unwrap_or(false))
            .count();
        println!("  {:6}: {pass}/{eval_n} samples pass the oracle", cat.verb);
    }
    println!("(acceptance-scale training uses 20k steps over 12k records)");
    Ok(())
}
