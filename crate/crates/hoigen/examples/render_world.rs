//! Sample one scene per interaction category, render it, and print the
//! full oracle confusion matrix over a small sweep.
//!
//! ```sh
//! cargo run --release --example render_world -- [scenes_per_category] [out_dir]
//! ```

use hoigen::synthworld::sample::{sample_scene, Split, CANVAS};
use hoigen::synthworld::{check_interaction, render_scene, RuleConfig};

fn main() -> anyhow::Result<()> {
    let cfg = RuleConfig::builtin();
    let n: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let out = std::env::args().nth(2).unwrap_or_else(|| "runs/world".into());
    std::fs::create_dir_all(&out)?;

    println!("categories: {:?}", cfg.categories.iter().map(|c| &c.verb).collect::<Vec<_>>());
    let mut masks: Vec<Vec<(hoigen::raster::Mask, hoigen::raster::Mask)>> = vec![Vec::new(); cfg.k()];
    for cat in &cfg.categories {
        for seed in 0..n {
            let scene = sample_scene(seed, cat, None, None, Split::Train, cfg)?;
            let (img, hm, om) = render_scene(&scene, (CANVAS, CANVAS))?;
            if seed == 0 {
                let path = format!("{out}/{}.png", cat.verb);
                img.save_png(std::path::Path::new(&path))?;
                println!("wrote {path}");
            }
            masks[cat.id].push((hm.downsample2_or(), om.downsample2_or()));
        }
    }

    println!("\noracle confusion matrix (rows = sampled category, cols = rule):");
    print!("{:8}", "");
    for c in &cfg.categories {
        print!("{:>8}", c.verb);
    }
    println!();
    for ci in &cfg.categories {
        print!("{:8}", ci.verb);
        for cj in &cfg.categories {
            let pass = masks[ci.id]
                .iter()
                .filter(|(h, o)| check_interaction(h, o, cj, cfg).unwrap_or(false))
                .count();
            print!("{:8.3}", pass as f64 / n as f64);
        }
        println!();
    }
    Ok(())
}
