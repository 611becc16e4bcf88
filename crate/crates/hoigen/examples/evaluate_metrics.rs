//! Exercise the metric suite on ground-truth data: identity similarity,
//! holistic accuracy, KL distance and its orderings against degraded mask
//! sources (retrieval, random).
//!
//! ```sh
//! cargo run --release --example evaluate_metrics -- [per_category]
//! ```

use hoigen::datasets::{build_split, write_manifest};
use hoigen::eval::{holistic_accuracy, identity_similarity, mask_kl_distance, segment_scene_palette, ScenePalette};
use hoigen::iamg::{build_mask_bank, position_word, retrieve_mask};
use hoigen::raster::Mask;
use hoigen::rng::{stream, Stream};
use hoigen::synthworld::sample::Split;
use hoigen::synthworld::{pair_features, RuleConfig};
use rand::Rng;

fn main() -> anyhow::Result<()> {
    let cfg = RuleConfig::builtin();
    let per_cat: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);

    let dir = std::env::temp_dir().join("hoigen_example_eval");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir)?;
    let train = build_split(5, Split::Train, per_cat, cfg)?;
    let train_manifest = write_manifest(&train, &dir, Split::Train, 5, cfg)?;
    let test = build_split(5, Split::Test, per_cat.max(20), cfg)?;

    // Identity similarity of the ground truth against its own references.
    let s = &test[0];
    let pal = ScenePalette::of(&s.scene);
    let (hm, om) = segment_scene_palette(&s.gt_image, &pal);
    let g = cfg.palette.neutral_gray as f32;
    let (h, o, p) = identity_similarity(&s.gt_image, &hm, &om, &s.human_ref, &s.object_ref, [g, g, g]);
    println!("identity (gt vs own refs):   human={:.4} object={:.4} pair={:.4}", h.unwrap(), o.unwrap(), p.unwrap());
    let other = &test[7];
    let (h2, o2, p2) = identity_similarity(&s.gt_image, &hm, &om, &other.human_ref, &other.object_ref, [g, g, g]);
    println!("identity (shuffled refs):    human={:.4} object={:.4} pair={:.4}", h2.unwrap(), o2.unwrap(), p2.unwrap());

    // Holistic accuracy.
    let gt: Vec<(Mask, Mask)> = test.iter().map(|s| (s.mask_human.clone(), s.mask_object.clone())).collect();
    let cats: Vec<usize> = test.iter().map(|s| s.category_id).collect();
    println!("holistic accuracy (gt):      {:.3}", holistic_accuracy(&gt, &cats, cfg)?);

    // KL orderings: retrieval beats random selection.
    let bank = build_mask_bank(&dir, &train_manifest, cfg)?;
    let mut retrieved = Vec::new();
    for (s, (hm, om)) in test.iter().zip(&gt) {
        let f = pair_features(hm, om, cfg)?;
        let cat = cfg.category(s.category_id)?;
        let q = format!("{} the {}, object {}", cat.gerund, s.scene.object.shape.word(), position_word(&f));
        let e = retrieve_mask(&bank, &q)?;
        retrieved.push((e.mask_human.clone(), e.mask_object.clone()));
    }
    let kl_r = mask_kl_distance(&retrieved, &cats, &gt, &cats, cfg)?.mean;
    let mut rng = stream(5, Stream::Shuffle, 0);
    let random: Vec<(Mask, Mask)> = (0..gt.len())
        .map(|_| {
            let e = &bank.entries[rng.gen_range(0..bank.entries.len())];
            (e.mask_human.clone(), e.mask_object.clone())
        })
        .collect();
    let kl_rand = mask_kl_distance(&random, &cats, &gt, &cats, cfg)?.mean;
    println!("KL(retrieved || gt):         {kl_r:.4}");
    println!("KL(random    || gt):         {kl_rand:.4}   (retrieval should be smaller)");
    Ok(())
}
