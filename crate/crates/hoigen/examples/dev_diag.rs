// dev scratch: visual + reconstruction diagnostics for the mask model
use hoigen::datasets::{build_split, write_manifest};
use hoigen::diffusion::{ddpm_sample, q_sample, standard_normal};
use hoigen::iamg::{generate_masks_batch, train_iamg, ConditionBundle, IamgTrainConfig, MaskDataset, MaskModelConfig};
use hoigen::rng::{stream, Stream};
use hoigen::synthworld::sample::Split;
use hoigen::synthworld::RuleConfig;
use hoigen::tensor::Tensor;

fn ascii(h: &hoigen::raster::Mask, o: &hoigen::raster::Mask) -> String {
    let mut s = String::new();
    for y in 0..h.h {
        for x in 0..h.w {
            s.push(if o.get(x, y) { 'O' } else if h.get(x, y) { '#' } else { '.' });
        }
        s.push('\n');
    }
    s
}

fn main() {
    let cfg = RuleConfig::builtin();
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let dir = std::env::temp_dir().join("hoigen_tsweep");
    let manifest = if dir.join("manifest.json").exists() {
        hoigen::datasets::load_manifest(&dir).unwrap()
    } else {
        std::fs::create_dir_all(&dir).unwrap();
        let samples = build_split(1, Split::Train, 200, cfg).unwrap();
        write_manifest(&samples, &dir, Split::Train, 1, cfg).unwrap()
    };
    let data = MaskDataset::from_manifest(&dir, &manifest, cfg).unwrap();
    let tcfg = IamgTrainConfig { steps, t_total: 400, seed: 7, ..Default::default() };
    let mut tr = train_iamg(&data, MaskModelConfig::default(), &tcfg).unwrap();
    println!("loss tail {:.4}", hoigen::iamg::train::windowed_loss(&tr.meta.loss_history, 100).1);

    // 1. Show one GT mask and one generated mask for 'ride'.
    let mut z0 = Tensor::zeros(&[1, 2, 32, 32]);
    let ride_idx = (0..data.len()).find(|&i| data.category(i) == 1).unwrap();
    data.write_latent(ride_idx, &mut z0, 0);
    let to_masks = |z: &Tensor<f32>| {
        let mut h = hoigen::raster::Mask::zeros(32, 32);
        let mut o = hoigen::raster::Mask::zeros(32, 32);
        for y in 0..32 { for x in 0..32 {
            h.set(x, y, z.data[y * 32 + x] > 0.0);
            o.set(x, y, z.data[1024 + y * 32 + x] > 0.0);
        }}
        (h, o)
    };
    let (gh, go) = to_masks(&z0);
    println!("GT ride:\n{}", ascii(&gh, &go));

    // 2. Reconstruction: noise GT to t, then reverse-denoise from there.
    for t_start in [100usize, 250, 400] {
        let mut rng = stream(5, Stream::DiffusionNoise, t_start as u64);
        let eps = standard_normal(&z0.shape, &mut rng);
        let mut z = q_sample(&z0, t_start, &eps, &tr.schedule).unwrap();
        let cond = ConditionBundle::for_categories(&[1]);
        for t in (1..=t_start).rev() {
            let pred = tr.model.predict_noise(&z, &cond, &vec![t], false).unwrap();
            let alpha = tr.schedule.alphas[t - 1];
            let abar = tr.schedule.alpha_bars[t - 1];
            let coef = ((1.0 - alpha) / (1.0 - abar).sqrt()) as f32;
            let isq = (1.0 / alpha.sqrt()) as f32;
            let sigma = (tr.schedule.betas[t - 1]).sqrt() as f32;
            let noise = if t > 1 { Some(standard_normal(&z.shape, &mut rng)) } else { None };
            for i in 0..z.data.len() {
                let mean = isq * (z.data[i] - coef * pred.data[i]);
                z.data[i] = match &noise { Some(n) => mean + sigma * n.data[i], None => mean };
            }
        }
        let (rh, ro) = to_masks(&z);
        let iou_h = hoigen::raster::iou(&rh, &gh);
        println!("reconstruction from t={t_start}: iou_h={iou_h:.3}  |h|={} |o|={}", rh.count(), ro.count());
        if t_start == 400 { println!("{}", ascii(&rh, &ro)); }
    }

    // 3. Fresh samples per category.
    for cat in [1usize, 3] {
        let m = generate_masks_batch(&mut tr.model, &tr.schedule, &[cat], None, 123).unwrap();
        println!("sampled category {cat}:\n{}", ascii(&m[0].0, &m[0].1));
    }
}
