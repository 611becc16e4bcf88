// dev scratch: terminal-SNR hypothesis — pass rate vs schedule length
use hoigen::datasets::{build_split, write_manifest};
use hoigen::iamg::{generate_masks_batch, train_iamg, IamgTrainConfig, MaskDataset, MaskModelConfig};
use hoigen::synthworld::sample::Split;
use hoigen::synthworld::{check_interaction, pair_features, RuleConfig};

fn main() {
    let cfg = RuleConfig::builtin();
    let args: Vec<String> = std::env::args().collect();
    let t_total: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2500);

    let dir = std::env::temp_dir().join(format!("hoigen_tsweep"));
    let manifest = if dir.join("manifest.json").exists() {
        hoigen::datasets::load_manifest(&dir).unwrap()
    } else {
        std::fs::create_dir_all(&dir).unwrap();
        let samples = build_split(1, Split::Train, 200, cfg).unwrap();
        write_manifest(&samples, &dir, Split::Train, 1, cfg).unwrap()
    };
    let data = MaskDataset::from_manifest(&dir, &manifest, cfg).unwrap();
    let tcfg = IamgTrainConfig { steps, t_total, seed: 7, ..Default::default() };
    let t0 = std::time::Instant::now();
    let mut tr = train_iamg(&data, MaskModelConfig::default(), &tcfg).unwrap();
    let (h, t) = hoigen::iamg::train::windowed_loss(&tr.meta.loss_history, 100);
    println!("T={t_total}: {steps} steps in {:.0}s, loss {h:.3}->{t:.3}", t0.elapsed().as_secs_f64());
    let mut total_pass = 0; let mut total = 0;
    for cat in &cfg.categories {
        let ids = vec![cat.id; 24];
        let masks = generate_masks_batch(&mut tr.model, &tr.schedule, &ids, None, 99).unwrap();
        let pass = masks.iter().filter(|(h, o)| check_interaction(h, o, cat, cfg).unwrap_or(false)).count();
        total_pass += pass; total += 24;
        // diagnostics: mean mask sizes + dy for this category
        let mut hc = 0.0; let mut oc = 0.0; let mut dys = Vec::new();
        for (hm, om) in &masks {
            hc += hm.count() as f64; oc += om.count() as f64;
            if let Ok(f) = pair_features(hm, om, cfg) { dys.push(f.dy); }
        }
        let mdy = dys.iter().sum::<f64>() / dys.len().max(1) as f64;
        println!("  {:6}: {pass}/24 pass  (|h|={:.0} |o|={:.0} mean_dy={mdy:+.2})", cat.verb, hc / 24.0, oc / 24.0);
    }
    println!("T={t_total} overall: {total_pass}/{total}");
}
