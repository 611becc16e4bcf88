//! End-to-end micro pipeline: two categories, a few hundred samples, a few
//! hundred training steps, structural invariants only. The artifact hash
//! over the run directory is the determinism witness.

use rand::Rng;

use crate::datasets::{build_image_adapted_sample, load_manifest, load_sample, validate_sample, write_manifest};
use crate::iamg::{train_iamg, MaskDataset};
use crate::mgig::{generate_image, train_mgig, GenerateInputs, PairedDataset};
use crate::rng::{mix, stream, Stream};
use crate::synthworld::sample::Split;
use crate::synthworld::RuleConfig;

use super::commands::hash_dir;
use super::config::{ExperimentConfig, RunPaths};
use super::AppError;

#[derive(Debug, Clone, serde::Serialize)]
pub struct SmokeOutcome {
    pub checks: Vec<(String, bool)>,
    pub artifact_hash: String,
}

impl SmokeOutcome {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|(_, ok)| *ok)
    }
}

/// Run the smoke pipeline under `paths`. Failures are tagged by module.
pub fn pipeline_smoke(seed: u64, paths: &RunPaths) -> Result<SmokeOutcome, AppError> {
    let cfg = ExperimentConfig::smoke(seed);
    paths.prepare(&cfg)?;
    let rules = RuleConfig::builtin();
    let mut checks: Vec<(String, bool)> = Vec::new();
    let mut check = |name: &str, ok: bool| checks.push((name.to_string(), ok));

    // Corpus over two categories.
    let cats = [rules.category(0).unwrap(), rules.category(1).unwrap()];
    let mut train = Vec::new();
    let mut test = Vec::new();
    for cat in cats {
        for s in 0..cfg.corpus.train_per_category {
            let sample_seed = mix(seed ^ ((cat.id as u64) << 24) ^ s as u64);
            train.push(
                build_image_adapted_sample(sample_seed, cat, Split::Train, rules)
                    .map_err(|e| AppError::Runtime(format!("datasets: {e}")))?,
            );
        }
        for s in 0..cfg.corpus.test_per_category {
            let sample_seed = mix(seed ^ 0x7e57 ^ ((cat.id as u64) << 24) ^ s as u64);
            test.push(
                build_image_adapted_sample(sample_seed, cat, Split::Test, rules)
                    .map_err(|e| AppError::Runtime(format!("datasets: {e}")))?,
            );
        }
    }
    check(
        "datasets: every sample passes structural validation",
        train.iter().chain(&test).all(|s| validate_sample(s, rules).is_ok()),
    );

    let train_dir = paths.data_dir(Split::Train);
    let manifest = write_manifest(&train, &train_dir, Split::Train, seed, rules)
        .map_err(|e| AppError::Runtime(format!("datasets: {e}")))?;
    let reloaded = load_manifest(&train_dir).map_err(|e| AppError::Runtime(format!("datasets: {e}")))?;
    check("datasets: manifest round-trip", reloaded == manifest);
    let first = load_sample(&train_dir, &reloaded.records[0])
        .map_err(|e| AppError::Runtime(format!("datasets: {e}")))?;
    check("datasets: sample round-trip bitwise", first == train[0]);
    let test_dir = paths.data_dir(Split::Test);
    write_manifest(&test, &test_dir, Split::Test, seed, rules)
        .map_err(|e| AppError::Runtime(format!("datasets: {e}")))?;

    // Mask-model training at micro scale.
    let data = MaskDataset::from_manifest(&train_dir, &manifest, rules)
        .map_err(|e| AppError::Runtime(format!("iamg: {e}")))?;
    let mut tcfg = cfg.iamg_train();
    tcfg.seed = seed;
    let mut iamg = train_iamg(&data, cfg.mask_model(), &tcfg)
        .map_err(|e| AppError::Runtime(format!("iamg: {e}")))?;
    check(
        "iamg: loss history finite",
        iamg.meta.loss_history.iter().all(|v| v.is_finite()),
    );
    check(
        "iamg: parameter budget",
        crate::nn::Params::param_count(&mut iamg.model) < 5_000_000,
    );
    let ckpt = paths.iamg_checkpoint();
    std::fs::create_dir_all(ckpt.parent().unwrap()).ok();
    iamg.save(&ckpt).map_err(|e| AppError::Runtime(format!("iamg: {e}")))?;
    let mut reloaded_iamg = crate::iamg::TrainedIamg::load(&ckpt)
        .map_err(|e| AppError::Runtime(format!("iamg: {e}")))?;
    // Checkpoint round-trip: bit-identical predictions.
    {
        use crate::iamg::ConditionBundle;
        use crate::tensor::Tensor;
        let mut z = Tensor::zeros(&[1, 2, 32, 32]);
        let mut r = stream(seed, Stream::DiffusionNoise, 0xc4ec);
        for v in z.data.iter_mut() {
            *v = r.sample::<f64, _>(rand_distr::StandardNormal) as f32;
        }
        let cond = ConditionBundle::for_categories(&[0]);
        let a = iamg
            .model
            .predict_noise(&z, &cond, &[10], false)
            .map_err(|e| AppError::Runtime(format!("iamg: {e}")))?;
        let b = reloaded_iamg
            .model
            .predict_noise(&z, &cond, &[10], false)
            .map_err(|e| AppError::Runtime(format!("iamg: {e}")))?;
        check("iamg: checkpoint round-trip bit-identical", a.data == b.data);
    }

    // Mask sampling shape/finiteness.
    let masks = crate::iamg::generate_masks_batch(
        &mut iamg.model,
        &iamg.schedule,
        &[0, 1, 0, 1],
        None,
        mix(seed ^ 0x3a3a),
    )
    .map_err(|e| AppError::Runtime(format!("iamg: {e}")))?;
    check(
        "iamg: sampled masks nonempty and 32x32",
        masks.iter().all(|(h, o)| {
            h.w == 32 && h.h == 32 && !h.is_empty() && !o.is_empty()
        }),
    );

    // Image-model training, both stages.
    let paired = PairedDataset::from_manifest(&train_dir, &manifest, rules)
        .map_err(|e| AppError::Runtime(format!("mgig: {e}")))?;
    let mut mcfg = cfg.mgig_train();
    mcfg.seed = seed;
    let mut mgig = train_mgig(&paired, Some(&mut iamg), cfg.hoi_model(), &mcfg, rules.k())
        .map_err(|e| AppError::Runtime(format!("mgig: {e}")))?;
    check(
        "mgig: loss history finite",
        mgig.meta
            .stage1_loss
            .iter()
            .chain(&mgig.meta.stage2_loss)
            .all(|v| v.is_finite()),
    );
    check(
        "mgig: parameter budget",
        crate::nn::Params::param_count(&mut mgig.model) < 15_000_000,
    );
    mgig.save(&paths.mgig_checkpoint())
        .map_err(|e| AppError::Runtime(format!("mgig: {e}")))?;

    // End-to-end generations: determinism and shape contracts.
    let sdir = paths.samples_dir();
    std::fs::create_dir_all(&sdir).map_err(|e| AppError::Runtime(e.to_string()))?;
    for (i, s) in test.iter().take(cfg.eval.generations).enumerate() {
        let out = generate_image(
            Some(&mut iamg),
            &mut mgig,
            GenerateInputs {
                human_ref: &s.human_ref,
                object_ref: &s.object_ref,
                category_id: s.category_id,
                bg_box: None,
                mask: None,
                seed: mix(seed ^ 0x9e9e ^ i as u64),
            },
        )
        .map_err(|e| AppError::Runtime(format!("mgig: {e}")))?;
        let again = generate_image(
            Some(&mut iamg),
            &mut mgig,
            GenerateInputs {
                human_ref: &s.human_ref,
                object_ref: &s.object_ref,
                category_id: s.category_id,
                bg_box: None,
                mask: None,
                seed: mix(seed ^ 0x9e9e ^ i as u64),
            },
        )
        .map_err(|e| AppError::Runtime(format!("mgig: {e}")))?;
        if i == 0 {
            check(
                "mgig: same-seed generation identical",
                out.image == again.image && out.mask_human == again.mask_human,
            );
            check(
                "mgig: output in range",
                out.image.data.iter().all(|v| (0.0..=1.0).contains(v)),
            );
        }
        out.image
            .save_png(&sdir.join(format!("gen_{i:02}.png")))
            .map_err(|e| AppError::Runtime(format!("mgig: {e}")))?;
        crate::raster::Mask::save_pair_png(
            &out.mask_human,
            &out.mask_object,
            &sdir.join(format!("mask_{i:02}.png")),
        )
        .map_err(|e| AppError::Runtime(format!("mgig: {e}")))?;
    }

    // Metrics run shape-level on the micro corpus.
    {
        let gt: Vec<_> = test
            .iter()
            .map(|s| (s.mask_human.clone(), s.mask_object.clone()))
            .collect();
        let cats: Vec<_> = test.iter().map(|s| s.category_id).collect();
        let acc = crate::eval::holistic_accuracy(&gt, &cats, rules)
            .map_err(|e| AppError::Runtime(format!("eval: {e}")))?;
        check("eval: ground-truth holistic accuracy is 1", acc == 1.0);
        let kl = crate::eval::mask_kl_distance(&gt, &cats, &gt, &cats, rules)
            .map_err(|e| AppError::Runtime(format!("eval: {e}")))?;
        check("eval: self KL under 1e-3", kl.mean < 1e-3);
    }

    let artifact_hash = format!("{:016x}", hash_dir(&paths.root)?);
    let outcome = SmokeOutcome {
        checks,
        artifact_hash,
    };
    let text = serde_json::to_string_pretty(&outcome).expect("smoke outcome serializes");
    std::fs::write(paths.root.join("smoke.json"), text)
        .map_err(|e| AppError::Runtime(e.to_string()))?;
    Ok(outcome)
}
