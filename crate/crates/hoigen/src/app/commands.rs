//! Command implementations behind the CLI; the acceptance suite calls these
//! directly.

use std::path::Path;

use rand::Rng;

use crate::datasets::{build_split, load_manifest, load_sample, write_manifest, Manifest};
use crate::eval::{
    box_compliance, compare_reports, holistic_accuracy, identity_similarity, mask_kl_distance,
    segment_scene_palette, MetricReport, OrderingCheck, ReportBaselines, ScenePalette,
};
use crate::iamg::{
    build_mask_bank, generate_masks_batch, position_word, retrieve_mask, train_iamg, MaskBank,
    MaskDataset, TrainedIamg,
};
use crate::mgig::{
    generate_image, train_mgig, GenerateInputs, PairedDataset, TrainedMgig,
};
use crate::raster::{ImageRgb, Mask};
use crate::rng::{fnv1a, fnv1a_combine, mix, stream, Stream};
use crate::synthworld::sample::Split;
use crate::synthworld::{check_interaction, pair_features, RuleConfig};
use crate::tensor::Tensor;

use super::config::{ExperimentConfig, RunPaths};
use super::AppError;

/// Build both splits and persist their manifests.
pub fn synth_data(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<(Manifest, Manifest), AppError> {
    let rules = RuleConfig::builtin();
    let train = build_split(cfg.seed, Split::Train, cfg.corpus.train_per_category, rules)
        .map_err(AppError::runtime)?;
    let train_dir = paths.data_dir(Split::Train);
    let train_manifest = write_manifest(&train, &train_dir, Split::Train, cfg.seed, rules)
        .map_err(AppError::runtime)?;
    drop(train);
    let test = build_split(cfg.seed, Split::Test, cfg.corpus.test_per_category, rules)
        .map_err(AppError::runtime)?;
    let test_dir = paths.data_dir(Split::Test);
    let test_manifest = write_manifest(&test, &test_dir, Split::Test, cfg.seed, rules)
        .map_err(AppError::runtime)?;
    Ok((train_manifest, test_manifest))
}

pub fn load_split(paths: &RunPaths, split: Split) -> Result<Manifest, AppError> {
    let dir = paths.data_dir(split);
    load_manifest(&dir).map_err(|e| match e {
        crate::datasets::DatasetError::Io { .. } => AppError::MissingCheckpoint(format!(
            "no manifest under {} (run synth-data first): {e}",
            dir.display()
        )),
        other => AppError::runtime(other),
    })
}

/// Train the mask model from the train manifest; writes the checkpoint.
pub fn train_iamg_cmd(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<TrainedIamg, AppError> {
    let rules = RuleConfig::builtin();
    let manifest = load_split(paths, Split::Train)?;
    let data = MaskDataset::from_manifest(&paths.data_dir(Split::Train), &manifest, rules)
        .map_err(AppError::runtime)?;
    let mut trained =
        train_iamg(&data, cfg.mask_model(), &cfg.iamg_train()).map_err(AppError::runtime)?;
    let ckpt = paths.iamg_checkpoint();
    if let Some(dir) = ckpt.parent() {
        std::fs::create_dir_all(dir).map_err(|e| AppError::Runtime(e.to_string()))?;
    }
    trained.save(&ckpt).map_err(AppError::runtime)?;
    Ok(trained)
}

pub fn load_iamg(paths: &RunPaths) -> Result<TrainedIamg, AppError> {
    let ckpt = paths.iamg_checkpoint();
    if !ckpt.exists() {
        return Err(AppError::MissingCheckpoint(format!(
            "mask-model checkpoint not found at {}",
            ckpt.display()
        )));
    }
    TrainedIamg::load(&ckpt).map_err(AppError::runtime)
}

pub fn load_mgig(paths: &RunPaths) -> Result<TrainedMgig, AppError> {
    let ckpt = paths.mgig_checkpoint();
    if !ckpt.exists() {
        return Err(AppError::MissingCheckpoint(format!(
            "image-model checkpoint not found at {}",
            ckpt.display()
        )));
    }
    TrainedMgig::load(&ckpt).map_err(AppError::runtime)
}

/// Two-stage image-model training; stage 2 needs the mask checkpoint.
pub fn train_mgig_cmd(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<TrainedMgig, AppError> {
    let rules = RuleConfig::builtin();
    let manifest = load_split(paths, Split::Train)?;
    let data = PairedDataset::from_manifest(&paths.data_dir(Split::Train), &manifest, rules)
        .map_err(AppError::runtime)?;
    let mut iamg = if cfg.mgig.stage2_steps > 0 {
        Some(load_iamg(paths)?)
    } else {
        None
    };
    let mut trained = train_mgig(
        &data,
        iamg.as_mut(),
        cfg.hoi_model(),
        &cfg.mgig_train(),
        rules.k(),
    )
    .map_err(AppError::runtime)?;
    let ckpt = paths.mgig_checkpoint();
    if let Some(dir) = ckpt.parent() {
        std::fs::create_dir_all(dir).map_err(|e| AppError::Runtime(e.to_string()))?;
    }
    trained.save(&ckpt).map_err(AppError::runtime)?;
    Ok(trained)
}

/// Everything the acceptance criteria need beyond the metric report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EvalDetails {
    pub mask_pass_rate: Vec<f64>,
    pub mask_pass_rate_mean: f64,
    pub shuffled_gt_rate: f64,
    /// cross_rates[c][c2] = rate of category-c samples passing rule c2.
    pub cross_rates: Vec<Vec<f64>>,
    pub kl_generated: f64,
    pub kl_retrieval: f64,
    pub kl_random: f64,
    pub box_compliance_masks: f64,
    pub background_mae: f64,
    pub mask_iou_mean: f64,
    pub attn_sensitivity: f64,
    pub detail_sensitivity: f64,
    pub identity: (f64, f64, f64),
    pub identity_shuffled: (f64, f64, f64),
    pub holistic: f64,
    pub holistic_shuffled: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// The full metric suite over a trained run.
pub fn evaluate_cmd(
    cfg: &ExperimentConfig,
    paths: &RunPaths,
) -> Result<(MetricReport, MetricReport, EvalDetails), AppError> {
    let rules = RuleConfig::builtin();
    let mut iamg = load_iamg(paths)?;
    let mut mgig = load_mgig(paths)?;
    let train_manifest = load_split(paths, Split::Train)?;
    let test_manifest = load_split(paths, Split::Test)?;
    let test_dir = paths.data_dir(Split::Test);

    // Ground-truth reference mask set from the test split.
    let mut gt_pairs: Vec<(Mask, Mask)> = Vec::new();
    let mut gt_cats: Vec<usize> = Vec::new();
    for rec in &test_manifest.records {
        let (h, o) = Mask::load_pair_png(&test_dir.join(&rec.masks.path))
            .map_err(AppError::runtime)?;
        gt_pairs.push((h, o));
        gt_cats.push(rec.category_id);
    }

    // 1. Generated-mask sweep per category.
    let mut gen_pairs: Vec<(Mask, Mask)> = Vec::new();
    let mut gen_cats: Vec<usize> = Vec::new();
    let per_cat = cfg.eval.masks_per_category;
    for cat in 0..rules.k() {
        let ids = vec![cat; per_cat];
        let masks = generate_masks_batch(
            &mut iamg.model,
            &iamg.schedule,
            &ids,
            None,
            mix(cfg.seed ^ 0xe7a1 ^ ((cat as u64) << 16)),
        )
        .map_err(AppError::runtime)?;
        for m in masks {
            gen_pairs.push(m);
            gen_cats.push(cat);
        }
    }
    let mut mask_pass_rate = vec![0.0f64; rules.k()];
    let mut cross_rates = vec![vec![0.0f64; rules.k()]; rules.k()];
    for cat in 0..rules.k() {
        let members: Vec<&(Mask, Mask)> = gen_pairs
            .iter()
            .zip(&gen_cats)
            .filter(|(_, &c)| c == cat)
            .map(|(p, _)| p)
            .collect();
        for rule in 0..rules.k() {
            let r = rules.category(rule).map_err(AppError::runtime)?;
            let pass = members
                .iter()
                .filter(|(h, o)| check_interaction(h, o, r, rules).unwrap_or(false))
                .count();
            cross_rates[cat][rule] = pass as f64 / members.len().max(1) as f64;
        }
        mask_pass_rate[cat] = cross_rates[cat][cat];
    }

    // Shuffled-category GT baseline (the synthetic world's confusion floor).
    let mut shuffle_rng = stream(cfg.seed, Stream::Shuffle, 0xba5e);
    let shuffled_cats: Vec<usize> = gt_cats
        .iter()
        .map(|&c| {
            let mut alt = shuffle_rng.gen_range(0..rules.k());
            while alt == c {
                alt = shuffle_rng.gen_range(0..rules.k());
            }
            alt
        })
        .collect();
    let shuffled_gt_rate =
        holistic_accuracy(&gt_pairs, &shuffled_cats, rules).map_err(AppError::runtime)?;

    // 2. KL distances: generated vs GT, retrieval vs GT, random vs GT.
    let kl_generated = mask_kl_distance(&gen_pairs, &gen_cats, &gt_pairs, &gt_cats, rules)
        .map_err(AppError::runtime)?
        .mean;
    let bank = build_mask_bank(&paths.data_dir(Split::Train), &train_manifest, rules)
        .map_err(AppError::runtime)?;
    let (kl_retrieval, kl_random) =
        retrieval_baselines(&bank, &test_manifest, &gt_pairs, &gt_cats, rules, cfg.seed)?;

    // 3. Box-conditioned mask compliance.
    let box_compliance_masks = box_conditioned_compliance(cfg, &mut iamg, &test_manifest, &test_dir)?;

    // 4. Image generations and their metrics.
    let img = image_metrics(
        cfg,
        &mut iamg,
        &mut mgig,
        &test_manifest,
        &test_dir,
        rules,
    )?;

    let details = EvalDetails {
        mask_pass_rate_mean: mean(&mask_pass_rate),
        mask_pass_rate,
        shuffled_gt_rate,
        cross_rates,
        kl_generated,
        kl_retrieval,
        kl_random,
        box_compliance_masks,
        background_mae: img.background_mae,
        mask_iou_mean: img.iou_mean,
        attn_sensitivity: img.attn_sensitivity,
        detail_sensitivity: img.detail_sensitivity,
        identity: img.identity,
        identity_shuffled: img.identity_shuffled,
        holistic: img.holistic,
        holistic_shuffled: img.holistic_shuffled,
    };

    let rules_hash = format!("{:016x}", RuleConfig::builtin_hash());
    let ours = MetricReport {
        identity_human: img.identity.0,
        identity_object: img.identity.1,
        identity_pair: img.identity.2,
        holistic_accuracy: img.holistic,
        kl_distance: kl_generated,
        box_compliance: box_compliance_masks,
        sample_count: cfg.eval.generations.max(1),
        rules_hash: rules_hash.clone(),
        baselines: ReportBaselines {
            identity_human_shuffled: img.identity_shuffled.0,
            identity_object_shuffled: img.identity_shuffled.1,
            identity_pair_shuffled: img.identity_shuffled.2,
            holistic_shuffled: img.holistic_shuffled,
            kl_retrieval,
            kl_random,
        },
        notes: vec![],
    };
    let baseline = MetricReport {
        identity_human: img.identity_shuffled.0,
        identity_object: img.identity_shuffled.1,
        identity_pair: img.identity_shuffled.2,
        holistic_accuracy: img.holistic_shuffled,
        kl_distance: kl_random,
        box_compliance: box_compliance_masks,
        sample_count: cfg.eval.generations.max(1),
        rules_hash,
        baselines: ReportBaselines::default(),
        notes: vec!["baseline: shuffled identities/categories, random mask selection".into()],
    };
    Ok((ours, baseline, details))
}

fn retrieval_baselines(
    bank: &MaskBank,
    test_manifest: &Manifest,
    gt_pairs: &[(Mask, Mask)],
    gt_cats: &[usize],
    rules: &RuleConfig,
    seed: u64,
) -> Result<(f64, f64), AppError> {
    let mut retrieved: Vec<(Mask, Mask)> = Vec::new();
    let mut retrieved_cats: Vec<usize> = Vec::new();
    for (rec, (h, o)) in test_manifest.records.iter().zip(gt_pairs) {
        let f = pair_features(h, o, rules).map_err(AppError::runtime)?;
        let cat = rules.category(rec.category_id).map_err(AppError::runtime)?;
        let query = format!(
            "{} the {}, object {}",
            cat.gerund,
            rec.scene.object.shape.word(),
            position_word(&f)
        );
        let hit = retrieve_mask(bank, &query).map_err(AppError::runtime)?;
        retrieved.push((hit.mask_human.clone(), hit.mask_object.clone()));
        retrieved_cats.push(rec.category_id);
    }
    let kl_retrieval = mask_kl_distance(&retrieved, &retrieved_cats, gt_pairs, gt_cats, rules)
        .map_err(AppError::runtime)?
        .mean;

    let mut rng = stream(seed, Stream::Shuffle, 0x7a2d);
    let mut random: Vec<(Mask, Mask)> = Vec::new();
    for _ in 0..gt_pairs.len() {
        let e = &bank.entries[rng.gen_range(0..bank.entries.len())];
        random.push((e.mask_human.clone(), e.mask_object.clone()));
    }
    let kl_random = mask_kl_distance(&random, gt_cats, gt_pairs, gt_cats, rules)
        .map_err(AppError::runtime)?
        .mean;
    Ok((kl_retrieval, kl_random))
}

fn box_conditioned_compliance(
    cfg: &ExperimentConfig,
    iamg: &mut TrainedIamg,
    test_manifest: &Manifest,
    test_dir: &Path,
) -> Result<f64, AppError> {
    let n = cfg.eval.box_conditioned_masks.min(test_manifest.records.len());
    let mut pairs = Vec::with_capacity(n);
    let mut boxes = Vec::with_capacity(n);
    for (i, rec) in test_manifest.records.iter().take(n).enumerate() {
        let s = load_sample(test_dir, rec).map_err(AppError::runtime)?;
        let (bg, b) = match (&s.background, s.bbox) {
            (Some(bg), Some(b)) => (bg.clone(), b),
            _ => continue,
        };
        let m = crate::iamg::generate_mask(
            &mut iamg.model,
            &iamg.schedule,
            rec.category_id,
            Some((&bg, b)),
            mix(cfg.seed ^ 0xb0c5 ^ (i as u64)),
        )
        .map_err(AppError::runtime)?;
        pairs.push(m);
        boxes.push(b);
    }
    if pairs.is_empty() {
        return Ok(0.0);
    }
    box_compliance(&pairs, &boxes).map_err(AppError::runtime)
}

struct ImageMetrics {
    identity: (f64, f64, f64),
    identity_shuffled: (f64, f64, f64),
    holistic: f64,
    holistic_shuffled: f64,
    iou_mean: f64,
    background_mae: f64,
    attn_sensitivity: f64,
    detail_sensitivity: f64,
}

fn image_metrics(
    cfg: &ExperimentConfig,
    iamg: &mut TrainedIamg,
    mgig: &mut TrainedMgig,
    test_manifest: &Manifest,
    test_dir: &Path,
    rules: &RuleConfig,
) -> Result<ImageMetrics, AppError> {
    let n = cfg.eval.generations.min(test_manifest.records.len()).max(1);
    let neutral = {
        let g = rules.palette.neutral_gray as f32;
        [g, g, g]
    };
    let mut gens: Vec<(ImageRgb, Mask, Mask, usize)> = Vec::new(); // image, used masks
    let mut samples = Vec::new();
    let mut mae_acc = 0.0f64;
    let mut mae_n = 0usize;
    for i in 0..n {
        let rec = &test_manifest.records[i * test_manifest.records.len() / n];
        let s = load_sample(test_dir, rec).map_err(AppError::runtime)?;
        let with_bg = i % 2 == 0;
        let bgref;
        let bg_box = if with_bg {
            match (&s.background, s.bbox) {
                (Some(bg), Some(b)) => {
                    bgref = bg.clone();
                    Some((&bgref, b))
                }
                _ => None,
            }
        } else {
            None
        };
        let out = generate_image(
            Some(iamg),
            mgig,
            GenerateInputs {
                human_ref: &s.human_ref,
                object_ref: &s.object_ref,
                category_id: s.category_id,
                bg_box: bg_box.as_ref().map(|(b, x)| (&**b, *x)),
                mask: None,
                seed: mix(cfg.seed ^ 0x9e17 ^ (i as u64)),
            },
        )
        .map_err(AppError::runtime)?;
        if let Some((bg, b)) = &bg_box {
            let mut acc = 0.0f64;
            let mut cnt = 0usize;
            for y in 0..bg.h {
                for x in 0..bg.w {
                    if !b.contains(x as u32, y as u32) {
                        let g = out.image.get(x, y);
                        let r = bg.get(x, y);
                        for k in 0..3 {
                            acc += (g[k] - r[k]).abs() as f64;
                        }
                        cnt += 3;
                    }
                }
            }
            if cnt > 0 {
                mae_acc += acc / cnt as f64;
                mae_n += 1;
            }
        }
        gens.push((out.image, out.mask_human, out.mask_object, s.category_id));
        samples.push(s);
    }

    // Palette segmentation of each generation, reference scoring, holistic.
    let (mut ih, mut io, mut ip) = (Vec::new(), Vec::new(), Vec::new());
    let (mut sh, mut so, mut sp) = (Vec::new(), Vec::new(), Vec::new());
    let mut seg_pairs = Vec::new();
    let mut cats = Vec::new();
    let mut ious = Vec::new();
    for (i, (img, mh, mo, cat)) in gens.iter().enumerate() {
        let s = &samples[i];
        let pal = ScenePalette::of(&s.scene);
        let (seg_h, seg_o) = segment_scene_palette(img, &pal);
        let (a, b, c) = identity_similarity(img, &seg_h, &seg_o, &s.human_ref, &s.object_ref, neutral);
        if let Some(v) = a {
            ih.push(v);
        }
        if let Some(v) = b {
            io.push(v);
        }
        if let Some(v) = c {
            ip.push(v);
        }
        // Shuffled-identity baseline: other sample's references.
        let other = &samples[(i + 1) % samples.len()];
        let (a2, b2, c2) =
            identity_similarity(img, &seg_h, &seg_o, &other.human_ref, &other.object_ref, neutral);
        if let Some(v) = a2 {
            sh.push(v);
        }
        if let Some(v) = b2 {
            so.push(v);
        }
        if let Some(v) = c2 {
            sp.push(v);
        }
        // Mask compliance: segmented foreground IoU with the mask used.
        let seg_union32 = seg_h.union(&seg_o).downsample2_or();
        let used_union = mh.union(mo);
        ious.push(crate::raster::iou(&seg_union32, &used_union));
        seg_pairs.push((seg_h.downsample2_or(), seg_o.downsample2_or()));
        cats.push(*cat);
    }
    let holistic = holistic_accuracy(&seg_pairs, &cats, rules).map_err(AppError::runtime)?;
    let mut rng = stream(cfg.seed, Stream::Shuffle, 0x5f42);
    let shuffled: Vec<usize> = cats
        .iter()
        .map(|&c| {
            let mut alt = rng.gen_range(0..rules.k());
            while alt == c {
                alt = rng.gen_range(0..rules.k());
            }
            alt
        })
        .collect();
    let holistic_shuffled =
        holistic_accuracy(&seg_pairs, &shuffled, rules).map_err(AppError::runtime)?;

    // Conditioning-path ablation sensitivities on a fixed probe input.
    let (attn_sensitivity, detail_sensitivity) = ablation_sensitivities(mgig, &samples[0])?;

    Ok(ImageMetrics {
        identity: (mean(&ih), mean(&io), mean(&ip)),
        identity_shuffled: (mean(&sh), mean(&so), mean(&sp)),
        holistic,
        holistic_shuffled,
        iou_mean: mean(&ious),
        background_mae: if mae_n > 0 { mae_acc / mae_n as f64 } else { 0.0 },
        attn_sensitivity,
        detail_sensitivity,
    })
}

fn ablation_sensitivities(
    mgig: &mut TrainedMgig,
    sample: &crate::datasets::HOISample,
) -> Result<(f64, f64), AppError> {
    use crate::mgig::{compose_detail, sobel_high_freq};
    let f_high = sobel_high_freq(&sample.human_ref, &sample.object_ref);
    let fd = compose_detail(&sample.mask_human, &sample.mask_object, &f_high, None)
        .map_err(AppError::runtime)?;
    let mut f_detail = Tensor::zeros(&[1, 3, 64, 64]);
    f_detail.data.copy_from_slice(&fd.data);
    let crops = crate::mgig::generate::crops_tensor(&[(&sample.human_ref, &sample.object_ref)]);
    let tokens = mgig.model.encode_identity(&crops, false);
    let mut z = Tensor::zeros(&[1, 3, 64, 64]);
    let mut zr = stream(31, Stream::DiffusionNoise, 77);
    for v in z.data.iter_mut() {
        *v = zr.sample::<f64, _>(rand_distr::StandardNormal) as f32;
    }
    let ts = vec![mgig.schedule.t_total / 2];
    let base = mgig
        .model
        .predict_noise(&z, &f_detail, &tokens, &ts, false)
        .map_err(AppError::runtime)?;
    let zero_tok = Tensor::zeros(&tokens.shape);
    let no_tok = mgig
        .model
        .predict_noise(&z, &f_detail, &zero_tok, &ts, false)
        .map_err(AppError::runtime)?;
    let zero_det = Tensor::zeros(&f_detail.shape);
    let no_det = mgig
        .model
        .predict_noise(&z, &zero_det, &tokens, &ts, false)
        .map_err(AppError::runtime)?;
    let l2 = |a: &Tensor<f32>, b: &Tensor<f32>| -> f64 {
        a.data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    Ok((l2(&base, &no_tok), l2(&base, &no_det)))
}

/// Print the three paper-ordering families and return overall success.
pub fn compare_cmd(ours_path: &Path, baseline_path: &Path) -> Result<Vec<OrderingCheck>, AppError> {
    let ours = MetricReport::load(ours_path).map_err(AppError::runtime)?;
    let baseline = MetricReport::load(baseline_path).map_err(AppError::runtime)?;
    Ok(compare_reports(&ours, &baseline))
}

/// Deterministic artifact hash over a run directory (sorted relative paths,
/// file bytes).
pub fn hash_dir(root: &Path) -> Result<u64, AppError> {
    let mut files: Vec<std::path::PathBuf> = Vec::new();
    fn walk(dir: &Path, files: &mut Vec<std::path::PathBuf>) -> std::io::Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let e = entry?;
            let p = e.path();
            if p.is_dir() {
                walk(&p, files)?;
            } else {
                files.push(p);
            }
        }
        Ok(())
    }
    walk(root, &mut files).map_err(|e| AppError::Runtime(e.to_string()))?;
    files.sort();
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for f in files {
        let rel = f.strip_prefix(root).unwrap_or(&f);
        h = fnv1a_combine(h, fnv1a(rel.to_string_lossy().as_bytes()));
        let bytes = std::fs::read(&f).map_err(|e| AppError::Runtime(e.to_string()))?;
        h = fnv1a_combine(h, fnv1a(&bytes));
    }
    Ok(h)
}
