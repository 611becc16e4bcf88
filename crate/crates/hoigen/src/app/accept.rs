//! The acceptance suite: every gate criterion, run end to end against one
//! config, emitting a pass/fail ledger plus the final metric report.

use std::time::Instant;

use crate::diffusion::{make_schedule, q_sample, ScheduleKind};
use crate::eval::mask_kl_distance;
use crate::iamg::train::windowed_loss;
use crate::raster::{BoxPx, ImageRgb, Mask, Plane};
use crate::rng::{stream, Stream};
use rand::Rng;
use crate::synthworld::sample::Split;
use crate::synthworld::RuleConfig;
use crate::tensor::Tensor;

use super::commands::{evaluate_cmd, synth_data, train_iamg_cmd, train_mgig_cmd};
use super::config::{ExperimentConfig, RunPaths};
use super::smoke::pipeline_smoke;
use super::AppError;

#[derive(Debug, Clone, serde::Serialize)]
pub struct CriterionOutcome {
    pub id: String,
    pub name: String,
    pub pass: bool,
    pub details: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct AcceptanceOutcome {
    pub criteria: Vec<CriterionOutcome>,
    pub all_pass: bool,
}

impl AcceptanceOutcome {
    pub fn print(&self) {
        for c in &self.criteria {
            println!(
                "criterion {:<3} [{}] {:<44} {} ({:.1}s)",
                c.id,
                if c.pass { "pass" } else { "FAIL" },
                c.name,
                c.details,
                c.seconds
            );
        }
        println!(
            "acceptance: {}",
            if self.all_pass { "ALL PASS" } else { "FAILURES PRESENT" }
        );
    }
}

struct Ledger {
    criteria: Vec<CriterionOutcome>,
}

impl Ledger {
    fn add(&mut self, id: &str, name: &str, pass: bool, details: String, t0: Instant) {
        let c = CriterionOutcome {
            id: id.to_string(),
            name: name.to_string(),
            pass,
            details,
            seconds: t0.elapsed().as_secs_f64(),
        };
        println!(
            "criterion {:<3} [{}] {:<44} {} ({:.1}s)",
            c.id,
            if c.pass { "pass" } else { "FAIL" },
            c.name,
            c.details,
            c.seconds
        );
        self.criteria.push(c);
    }
}

/// Criterion 1: unit exactness, no training required.
fn unit_exactness() -> (bool, String) {
    // Sobel ramp interior = 8.
    let mut lum = Plane::zeros(12, 10);
    for y in 0..10 {
        for x in 0..12 {
            lum.put(x, y, x as f32);
        }
    }
    let m = crate::mgig::sobel_magnitude(&lum);
    let sobel_ok = (1..9).all(|y| (1..11).all(|x| (m.get(x, y) - 8.0).abs() < 1e-5));

    // q_sample closed form.
    let mut s = make_schedule(1, ScheduleKind::Linear).unwrap();
    s.alpha_bars[0] = 0.25;
    let z = q_sample(
        &Tensor::from_vec(&[1], vec![1.0f32]),
        1,
        &Tensor::from_vec(&[1], vec![2.0f32]),
        &s,
    )
    .unwrap();
    let q_ok = (z.data[0] as f64 - 2.232_050_807_568_877).abs() < 1e-6;

    // compose_detail region arithmetic.
    let mh = Mask::zeros(32, 32);
    let mo = Mask::zeros(32, 32);
    let mut fh = Plane::zeros(64, 32);
    fh.data.iter_mut().for_each(|v| *v = 1.0);
    let g = crate::raster::quantize(0.5);
    let bg = ImageRgb::filled(64, 64, [g, g, g]);
    let b = BoxPx {
        x0: 8,
        y0: 8,
        x1: 23,
        y1: 23,
    };
    let fd = crate::mgig::compose_detail(&mh, &mo, &fh, Some((&bg, b))).unwrap();
    let lum_bg = crate::raster::luma([g, g, g]);
    let n = 64 * 64;
    let compose_ok = (0..64usize).all(|y| {
        (0..64usize).all(|x| {
            let v = fd.data[2 * n + y * 64 + x];
            let expect = if (8..=23).contains(&x) && (8..=23).contains(&y) {
                lum_bg + 1.0
            } else {
                lum_bg
            };
            (v - expect).abs() < 1e-6
        })
    });

    // make_bg_condition region arithmetic.
    let cbg = crate::iamg::make_bg_condition(&bg, b).unwrap();
    let bg_ok = (0..64usize).all(|y| {
        (0..64usize).all(|x| {
            let c = cbg.get(x, y);
            if b.contains(x as u32, y as u32) {
                c == [0.0, 0.0, 0.0]
            } else {
                c == bg.get(x, y)
            }
        })
    });

    // KL(P || P) < 1e-3 on a generated set.
    let rules = RuleConfig::builtin();
    let mut pairs = Vec::new();
    let mut cats = Vec::new();
    for cat in &rules.categories {
        for seed in 0..170u64 {
            let scene = crate::synthworld::sample_scene(
                90_000 + seed,
                cat,
                None,
                None,
                Split::Train,
                rules,
            )
            .unwrap();
            let (_, hm, om) = crate::synthworld::render_scene(&scene, (64, 64)).unwrap();
            pairs.push((hm.downsample2_or(), om.downsample2_or()));
            cats.push(cat.id);
        }
    }
    let kl = mask_kl_distance(&pairs, &cats, &pairs, &cats, rules)
        .unwrap()
        .mean;
    let kl_ok = kl < 1e-3;

    let pass = sobel_ok && q_ok && compose_ok && bg_ok && kl_ok;
    (
        pass,
        format!(
            "sobel={sobel_ok} q_sample={q_ok} compose={compose_ok} bg_cond={bg_ok} self_kl={kl:.2e}"
        ),
    )
}

/// Criterion 2 checks over freshly built manifests.
fn corpus_invariants(
    cfg: &ExperimentConfig,
    paths: &RunPaths,
) -> Result<(bool, String), AppError> {
    let rules = RuleConfig::builtin();
    let (train_manifest, test_manifest) = synth_data(cfg, paths)?;
    let expected_train = cfg.corpus.train_per_category * rules.k();
    let expected_test = cfg.corpus.test_per_category * rules.k();
    let counts_ok = train_manifest.records.len() == expected_train
        && test_manifest.records.len() == expected_test;

    // Oracle holds for every GT record (checked from the persisted masks).
    let mut oracle_ok = true;
    let mut video_pose_nonzero = 0usize;
    let mut video_total = 0usize;
    for (dir, manifest) in [
        (paths.data_dir(Split::Train), &train_manifest),
        (paths.data_dir(Split::Test), &test_manifest),
    ] {
        for rec in &manifest.records {
            let (h, o) =
                Mask::load_pair_png(&dir.join(&rec.masks.path)).map_err(AppError::runtime)?;
            let cat = rules.category(rec.category_id).map_err(AppError::runtime)?;
            if !crate::synthworld::check_interaction(&h, &o, cat, rules)
                .map_err(AppError::runtime)?
            {
                oracle_ok = false;
            }
            if rec.source == crate::datasets::SampleSource::VideoPair {
                video_total += 1;
                if rec.ref_pose.l1_distance(&rec.scene.pose) > 0.0 {
                    video_pose_nonzero += 1;
                }
            }
        }
    }
    let pose_frac = video_pose_nonzero as f64 / video_total.max(1) as f64;
    let pose_ok = pose_frac >= 0.99;

    // Identity palettes: reference crop colors equal the scene palette for a
    // loaded subsample (bit-level, since all rasters live on the 1/255 grid).
    let train_dir = paths.data_dir(Split::Train);
    let mut palette_ok = true;
    let step = (train_manifest.records.len() / 64).max(1);
    for rec in train_manifest.records.iter().step_by(step) {
        let s = crate::datasets::load_sample(&train_dir, rec).map_err(AppError::runtime)?;
        let body = crate::raster::quantize_rgb(s.scene.human.body_color);
        let found = (0..s.human_ref.h)
            .any(|y| (0..s.human_ref.w).any(|x| s.human_ref.get(x, y) == body));
        palette_ok &= found;
    }

    // Manifest round-trip: reload equals the written struct; a subsample of
    // records reloads bit-identically.
    let reloaded = crate::datasets::load_manifest(&train_dir).map_err(AppError::runtime)?;
    let mut roundtrip_ok = reloaded == train_manifest;
    for rec in train_manifest.records.iter().step_by(step * 4) {
        let a = crate::datasets::load_sample(&train_dir, rec).map_err(AppError::runtime)?;
        let b = crate::datasets::load_sample(&train_dir, rec).map_err(AppError::runtime)?;
        roundtrip_ok &= a == b;
    }

    // Split hygiene: no identity tuple shared across splits.
    let key = |r: &crate::datasets::ManifestRecord| {
        format!(
            "{:?}|{:?}|{:?}|{:?}",
            r.scene.human.body_color,
            r.scene.human.head_color,
            r.scene.object.fill_color,
            r.scene.object.shape
        )
    };
    let train_keys: std::collections::HashSet<String> =
        train_manifest.records.iter().map(key).collect();
    let split_ok = !test_manifest.records.iter().any(|r| train_keys.contains(&key(r)));

    let pass = counts_ok && oracle_ok && pose_ok && palette_ok && roundtrip_ok && split_ok;
    Ok((
        pass,
        format!(
            "counts={counts_ok} oracle={oracle_ok} pose_frac={pose_frac:.4} palette={palette_ok} roundtrip={roundtrip_ok} split={split_ok}"
        ),
    ))
}

/// Criterion 7: finite-difference probes on both models at f64.
fn gradient_probe() -> (bool, String) {
    use crate::nn::gradcheck::{check_gradients, max_rel_error};
    use crate::nn::Params;

    let mut rng = stream(1234, Stream::ParamInit, 0);
    let mcfg = crate::iamg::MaskModelConfig {
        base_width: 8,
        temb_hidden: 32,
        bg_channels: 4,
        k: 6,
        zero_head: false,
    };
    let mut mask_model = crate::iamg::MaskUNet::<f64>::new(mcfg, &mut rng);
    let z = {
        let mut t = Tensor::zeros(&[1, 2, 32, 32]);
        for v in t.data.iter_mut() {
            *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        t
    };
    let cond = crate::iamg::ConditionBundle::for_categories(&[2]);
    let target = {
        let mut t = Tensor::zeros(&[1, 2, 32, 32]);
        for v in t.data.iter_mut() {
            *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        t
    };
    let loss_mask = |m: &mut crate::iamg::MaskUNet<f64>| {
        let p = m.predict_noise(&z, &cond, &[50], false).unwrap();
        p.data
            .iter()
            .zip(&target.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / p.len() as f64
    };
    mask_model.zero_grad();
    let p = mask_model.predict_noise(&z, &cond, &[50], true).unwrap();
    let n = p.len() as f64;
    let mut d = Tensor::zeros(&p.shape);
    for i in 0..p.len() {
        d.data[i] = 2.0 * (p.data[i] - target.data[i]) / n;
    }
    mask_model.backward(&d);
    let mut probe_rng = stream(77, Stream::Custom(3), 0);
    let r1 = check_gradients(&mut mask_model, loss_mask, 16, &mut probe_rng);
    let e1 = max_rel_error(&r1);

    let hcfg = crate::mgig::HoiModelConfig {
        w0: 8,
        w1: 16,
        w2: 24,
        temb_hidden: 32,
        zero_head: false,
    };
    let mut hoi = crate::mgig::HoiUNet::<f64>::new(hcfg, &mut rng);
    let z2 = {
        let mut t = Tensor::zeros(&[1, 3, 64, 64]);
        for v in t.data.iter_mut() {
            *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        t
    };
    let fd = z2.clone();
    let crops = {
        let mut t = Tensor::zeros(&[2, 3, 32, 32]);
        for v in t.data.iter_mut() {
            *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        t
    };
    let target2 = {
        let mut t = Tensor::zeros(&[1, 3, 64, 64]);
        for v in t.data.iter_mut() {
            *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        t
    };
    let loss_hoi = |m: &mut crate::mgig::HoiUNet<f64>| {
        let tok = m.encode_identity(&crops, false);
        let p = m.predict_noise(&z2, &fd, &tok, &[50], false).unwrap();
        p.data
            .iter()
            .zip(&target2.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / p.len() as f64
    };
    hoi.zero_grad();
    let tok = hoi.encode_identity(&crops, true);
    let p2 = hoi.predict_noise(&z2, &fd, &tok, &[50], true).unwrap();
    let n2 = p2.len() as f64;
    let mut d2 = Tensor::zeros(&p2.shape);
    for i in 0..p2.len() {
        d2.data[i] = 2.0 * (p2.data[i] - target2.data[i]) / n2;
    }
    hoi.backward(&d2);
    let mut probe_rng2 = stream(78, Stream::Custom(3), 0);
    let r2 = check_gradients(&mut hoi, loss_hoi, 16, &mut probe_rng2);
    let e2 = max_rel_error(&r2);

    (
        e1 <= 1e-3 && e2 <= 1e-3,
        format!("mask_model_max_rel={e1:.2e} image_model_max_rel={e2:.2e}"),
    )
}

/// Run the whole acceptance suite under one run directory.
pub fn accept_suite(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<AcceptanceOutcome, AppError> {
    paths.prepare(cfg)?;
    let mut ledger = Ledger { criteria: Vec::new() };

    let t = Instant::now();
    let (pass, details) = unit_exactness();
    ledger.add("1", "unit exactness", pass, details, t);

    let t = Instant::now();
    let (pass, details) = corpus_invariants(cfg, paths)?;
    ledger.add("2", "corpus invariants", pass, details, t);

    // Criterion 3: train the mask model, check the loss criterion; the
    // pass-rate half lands after evaluation.
    let t = Instant::now();
    let iamg = train_iamg_cmd(cfg, paths)?;
    let (head, tail) = windowed_loss(&iamg.meta.loss_history, 100);
    let init_ok = iamg.meta.loss_history.first().map(|v| (*v - 1.0).abs() < 0.2) == Some(true);
    let loss_ok = tail < 0.1 * head;
    drop(iamg);
    let train_secs = t.elapsed().as_secs_f64();

    let t_mgig = Instant::now();
    let mgig = train_mgig_cmd(cfg, paths)?;
    let (mh, mt) = windowed_loss(&mgig.meta.stage1_loss, 100);
    let mgig_loss_ok = mt < 0.15 * mh;
    let bg_mix = mgig.meta.bg_present_fraction;
    let bg_mix_ok = (bg_mix - 0.5).abs() <= 0.05;
    drop(mgig);
    let mgig_secs = t_mgig.elapsed().as_secs_f64();

    let t_eval = Instant::now();
    let (ours, baseline, details) = evaluate_cmd(cfg, paths)?;
    ours.save(&paths.report_path()).map_err(AppError::runtime)?;
    baseline
        .save(&paths.baseline_report_path())
        .map_err(AppError::runtime)?;
    let eval_secs = t_eval.elapsed().as_secs_f64();

    let per_cat_ok = details.mask_pass_rate.iter().all(|r| *r >= 0.70);
    let vs_baseline_ok = details
        .mask_pass_rate
        .iter()
        .all(|r| *r >= 3.0 * details.shuffled_gt_rate);
    let mono_ok = (0..details.cross_rates.len()).all(|c| {
        (0..details.cross_rates.len())
            .all(|c2| c == c2 || details.cross_rates[c][c] > details.cross_rates[c][c2])
    });
    ledger.criteria.push(CriterionOutcome {
        id: "3".into(),
        name: "mask-model learning".into(),
        pass: init_ok && loss_ok && per_cat_ok && vs_baseline_ok && mono_ok,
        details: format!(
            "init~1={init_ok} loss {head:.3}->{tail:.3} (<0.1x={loss_ok}) pass_rates={:?} (>=0.70={per_cat_ok}) shuffled_gt={:.3} (3x={vs_baseline_ok}) monotone={mono_ok}",
            details
                .mask_pass_rate
                .iter()
                .map(|v| (v * 100.0).round() / 100.0)
                .collect::<Vec<_>>(),
            details.shuffled_gt_rate
        ),
        seconds: train_secs + eval_secs * 0.4,
    });
    ledger.criteria.last().map(|c| {
        println!(
            "criterion {:<3} [{}] {:<44} {} ({:.1}s)",
            c.id,
            if c.pass { "pass" } else { "FAIL" },
            c.name,
            c.details,
            c.seconds
        )
    });

    let t = Instant::now();
    let kl_ok = details.kl_generated < details.kl_retrieval
        && details.kl_retrieval < details.kl_random
        && details.kl_retrieval >= 1.2 * details.kl_generated
        && details.kl_random >= 1.2 * details.kl_retrieval;
    ledger.add(
        "4",
        "spatial-configuration KL ordering",
        kl_ok,
        format!(
            "generated={:.4} retrieval={:.4} random={:.4}",
            details.kl_generated, details.kl_retrieval, details.kl_random
        ),
        t,
    );

    let t = Instant::now();
    let box_ok = details.box_compliance_masks >= 0.90;
    let mae_ok = details.background_mae <= 0.10;
    ledger.add(
        "5",
        "box and background control",
        box_ok && mae_ok,
        format!(
            "box_compliance={:.4} background_mae={:.4}",
            details.box_compliance_masks, details.background_mae
        ),
        t,
    );

    let t = Instant::now();
    let iou_ok = details.mask_iou_mean >= 0.5;
    let id_ok = details.identity.0 > details.identity_shuffled.0
        && details.identity.1 > details.identity_shuffled.1
        && details.identity.2 > details.identity_shuffled.2;
    let sens_ok = details.attn_sensitivity > 0.0 && details.detail_sensitivity > 0.0;
    let holistic_ok = details.holistic >= 0.70 && details.holistic > details.holistic_shuffled;
    ledger.add(
        "6",
        "image-model quality orderings",
        iou_ok && id_ok && sens_ok && mgig_loss_ok && bg_mix_ok && holistic_ok,
        format!(
            "iou={:.3} identity=({:.3},{:.3},{:.3})>({:.3},{:.3},{:.3}) sens=({:.2e},{:.2e}) s1_loss {mh:.3}->{mt:.3} bg_mix={bg_mix:.3} holistic={:.3}>{:.3}",
            details.mask_iou_mean,
            details.identity.0,
            details.identity.1,
            details.identity.2,
            details.identity_shuffled.0,
            details.identity_shuffled.1,
            details.identity_shuffled.2,
            details.attn_sensitivity,
            details.detail_sensitivity,
            details.holistic,
            details.holistic_shuffled,
        ),
        t,
    );
    let _ = mgig_secs;

    let t = Instant::now();
    let (pass, gdetails) = gradient_probe();
    ledger.add("7", "gradient vs finite differences", pass, gdetails, t);

    let t = Instant::now();
    let smoke_a = pipeline_smoke(cfg.seed + 500, &RunPaths {
        root: paths.root.join("smoke_a"),
    })?;
    let smoke_b = pipeline_smoke(cfg.seed + 500, &RunPaths {
        root: paths.root.join("smoke_b"),
    })?;
    let smoke_ok = smoke_a.ok() && smoke_b.ok() && smoke_a.artifact_hash == smoke_b.artifact_hash;
    let report_ok = paths.report_path().exists() && paths.baseline_report_path().exists();
    ledger.add(
        "8",
        "reproducibility",
        smoke_ok && report_ok,
        format!(
            "smoke_checks={} hash_a={} hash_b={} equal={} reports={report_ok}",
            smoke_a.ok() && smoke_b.ok(),
            smoke_a.artifact_hash,
            smoke_b.artifact_hash,
            smoke_a.artifact_hash == smoke_b.artifact_hash
        ),
        t,
    );

    let all_pass = ledger.criteria.iter().all(|c| c.pass);
    let outcome = AcceptanceOutcome {
        criteria: ledger.criteria,
        all_pass,
    };
    let text = serde_json::to_string_pretty(&outcome).expect("outcome serializes");
    std::fs::write(paths.root.join("acceptance.json"), text)
        .map_err(|e| AppError::Runtime(e.to_string()))?;
    Ok(outcome)
}
