//! Build a mask bank from a small corpus and query it with free-form text.
//!
//! ```sh
//! cargo run --release --example retrieve_masks -- "riding the bar"
//! ```

use hoigen::datasets::{build_split, write_manifest};
use hoigen::iamg::{build_mask_bank, retrieve_mask};
use hoigen::synthworld::sample::Split;
use hoigen::synthworld::RuleConfig;

fn main() -> anyhow::Result<()> {
    let cfg = RuleConfig::builtin();
    let query = std::env::args().nth(1).unwrap_or_else(|| "a person riding the bar".into());

    let dir = std::env::temp_dir().join("hoigen_example_bank");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir)?;
    let samples = build_split(3, Split::Train, 40, cfg)?;
    let manifest = write_manifest(&samples, &dir, Split::Train, 3, cfg)?;
    let bank = build_mask_bank(&dir, &manifest, cfg)?;
    println!("bank holds {} de-duplicated mask pairs", bank.entries.len());

    let hit = retrieve_mask(&bank, &query)?;
    println!("query:       \"{query}\"");
    println!("best match:  \"{}\" (category {})", hit.description, hit.category_id);
    let out = std::env::temp_dir().join("hoigen_retrieved_mask.png");
    hoigen::raster::Mask::save_pair_png(&hit.mask_human, &hit.mask_object, &out)?;
    println!("mask written to {}", out.display());

    for q in ["holding the circle", "object above", "kicking"] {
        let h = retrieve_mask(&bank, q)?;
        println!("query \"{q}\" -> \"{}\"", h.description);
    }
    Ok(())
}
