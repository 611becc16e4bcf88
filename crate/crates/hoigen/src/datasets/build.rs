//! Sample builders: image-adapted records, clips, video-pair records.

use rand::Rng;

use crate::raster::{BoxPx, ImageRgb, Mask, Rgb};
use crate::rng::{mix, stream, Stream};
use crate::synthworld::render::{figure_geometry, render_scene, render_single_human};
use crate::synthworld::sample::{sample_free_pose, sample_scene, Split};
pub use crate::synthworld::sample::{CANVAS, MASK_RES};
use crate::synthworld::{
    check_interaction, InteractionCategory, ObjectShape, Pose, RuleConfig, Scene,
};

use super::{DatasetError, HOISample, SampleSource, VideoClip};

/// The interaction prompt template.
pub fn render_prompt(category: &InteractionCategory, shape: ObjectShape) -> String {
    format!("A person is {} the {}", category.gerund, shape.word())
}

fn neutral(cfg: &RuleConfig) -> Rgb {
    let g = cfg.palette.neutral_gray as f32;
    [g, g, g]
}

/// Cut the pixels under `mask` out of `img` onto a neutral canvas and crop to
/// the mask bbox with 1px padding.
fn segment_crop(img: &ImageRgb, mask: &Mask, cfg: &RuleConfig) -> ImageRgb {
    let b = mask.bbox().expect("segment_crop needs a nonempty mask");
    let b = b.dilate(1, img.w, img.h);
    let mut out = ImageRgb::filled(b.width() as usize, b.height() as usize, neutral(cfg));
    for y in 0..out.h {
        for x in 0..out.w {
            let (sx, sy) = (b.x0 as usize + x, b.y0 as usize + y);
            if mask.get(sx, sy) {
                out.put(x, y, img.get(sx, sy));
            }
        }
    }
    out
}

/// Render the scene's background alone (the "foreground inpainted by
/// background fill" image).
fn render_background(scene: &Scene) -> ImageRgb {
    let mut img = ImageRgb::zeros(CANVAS, CANVAS);
    for y in 0..CANVAS {
        let c = scene.background.color_at(y, CANVAS);
        for x in 0..CANVAS {
            img.put(x, y, c);
        }
    }
    img
}

fn union_bbox_dilated(hm: &Mask, om: &Mask) -> BoxPx {
    let u = hm.union(om);
    u.bbox()
        .expect("foreground nonempty by construction")
        .dilate(2, u.w, u.h)
}

/// Build one record by the image-adaptation procedure: the ground truth is a
/// sampled scene; the human reference is the same identity re-rendered under
/// an independently drawn pose on a neutral background; the object reference
/// keeps its ground-truth rendering.
pub fn build_image_adapted_sample(
    seed: u64,
    category: &InteractionCategory,
    split: Split,
    cfg: &RuleConfig,
) -> Result<HOISample, DatasetError> {
    let scene = sample_scene(seed, category, None, None, split, cfg)?;
    let (gt, hm64, om64) = render_scene(&scene, (CANVAS, CANVAS))?;
    let mut rng = stream(seed, Stream::DatasetBuild, category.id as u64);
    let mut ref_pose = sample_free_pose(&mut rng, &scene.human);
    while ref_pose.l1_distance(&scene.pose) == 0.0 {
        ref_pose = sample_free_pose(&mut rng, &scene.human);
    }
    let (href_full, href_mask) =
        render_single_human(&scene.human, &ref_pose, (CANVAS, CANVAS), neutral(cfg))?;
    let human_ref = segment_crop(&href_full, &href_mask, cfg);
    let (oimg, omask_alone) = crate::synthworld::render_object_only(
        &scene.object,
        scene.object_pos,
        (CANVAS, CANVAS),
        neutral(cfg),
    );
    let object_ref = segment_crop(&oimg, &omask_alone, cfg);
    Ok(HOISample {
        human_ref,
        object_ref,
        prompt: render_prompt(category, scene.object.shape),
        category_id: category.id,
        gt_image: gt,
        mask_human: hm64.downsample2_or(),
        mask_object: om64.downsample2_or(),
        background: Some(render_background(&scene)),
        bbox: Some(union_bbox_dilated(&hm64, &om64)),
        source: SampleSource::ImageAdapted,
        scene,
        ref_pose,
    })
}

/// Which body point the object is attached to for a category; the side index
/// is fixed once per clip from the base scene.
#[derive(Debug, Clone, Copy)]
enum Anchor {
    Wrist(usize),
    Foot(usize),
    Head,
    Root,
}

fn pick_anchor(cat: &InteractionCategory, scene: &Scene) -> Anchor {
    let g = figure_geometry(&scene.human, &scene.pose);
    let (ox, oy) = scene.object_pos;
    let nearer = |a: (f32, f32), b: (f32, f32)| -> usize {
        let da = (a.0 - ox).powi(2) + (a.1 - oy).powi(2);
        let db = (b.0 - ox).powi(2) + (b.1 - oy).powi(2);
        usize::from(da > db)
    };
    match cat.verb.as_str() {
        "hold" | "push" => Anchor::Wrist(nearer(g.wrists[0], g.wrists[1])),
        "kick" => Anchor::Foot(nearer(g.feet[0], g.feet[1])),
        "carry" => Anchor::Head,
        _ => Anchor::Root,
    }
}

fn anchor_point(anchor: Anchor, scene: &Scene, pose: &Pose) -> (f32, f32) {
    let g = figure_geometry(&scene.human, pose);
    match anchor {
        Anchor::Wrist(s) => g.wrists[s],
        Anchor::Foot(s) => g.feet[s],
        Anchor::Head => g.head_center,
        Anchor::Root => g.root,
    }
}

/// Generate a clip: fixed identities, pose linearly interpolated between a
/// base keypose and a bounded perturbation of it, the object following its
/// category anchor. Every frame must pass some category's rule (preferring
/// the clip's own), or the keypose pair is re-drawn.
pub fn generate_clip(
    seed: u64,
    category: &InteractionCategory,
    n_frames: usize,
    split: Split,
    cfg: &RuleConfig,
) -> Result<VideoClip, DatasetError> {
    if n_frames < 4 {
        return Err(DatasetError::TooFewFrames(n_frames));
    }
    let base = sample_scene(seed, category, None, None, split, cfg)?;
    let anchor = pick_anchor(category, &base);
    let g0 = anchor_point(anchor, &base, &base.pose);
    let offset = (base.object_pos.0 - g0.0, base.object_pos.1 - g0.1);
    let mut rng = stream(seed, Stream::DatasetBuild, mix(category.id as u64 ^ 0xc11b));

    const MAX_RETRIES: u32 = 400;
    for retry in 0..MAX_RETRIES {
        // Perturb each joint within the per-frame delta budget; later
        // retries shrink the perturbation to guarantee progress. Kick keeps
        // the arms nearly still so the object stays horizontally outside.
        let shrink = 1.0 / (1.0 + retry as f32 / 40.0);
        let lim = (0.2_f32 * (n_frames - 1) as f32).min(0.45) * shrink;
        let arm_lim = if category.verb == "kick" { lim * 0.3 } else { lim };
        let a0 = base.pose.angles();
        let mut a1 = a0;
        for (j, v) in a1.iter_mut().enumerate() {
            let l = if j < 4 { arm_lim } else { lim };
            let d = rng.gen_range(-l..=l);
            *v = (*v + d).clamp(-1.45, 1.45);
        }
        let root_drift = (
            rng.gen_range(-2.0..=2.0) * shrink,
            rng.gen_range(-1.5..=1.5) * shrink,
        );
        let end_pose = Pose {
            root: (
                base.pose.root.0 + root_drift.0,
                base.pose.root.1 + root_drift.1,
            ),
            ..base.pose.with_angles(a1)
        };

        let mut frames = Vec::with_capacity(n_frames);
        let mut verbs = Vec::with_capacity(n_frames);
        let mut ok = true;
        for i in 0..n_frames {
            let tau = i as f32 / (n_frames - 1) as f32;
            let ai: Vec<f32> = a0
                .iter()
                .zip(end_pose.angles().iter())
                .map(|(x, y)| x + (y - x) * tau)
                .collect();
            let pose = Pose {
                root: (
                    base.pose.root.0 + root_drift.0 * tau,
                    base.pose.root.1 + root_drift.1 * tau,
                ),
                ..base.pose.with_angles([
                    ai[0], ai[1], ai[2], ai[3], ai[4], ai[5], ai[6], ai[7],
                ])
            };
            let a = anchor_point(anchor, &base, &pose);
            let pos = (a.0 + offset.0, a.1 + offset.1);
            let frame = Scene {
                pose,
                object_pos: pos,
                ..base.clone()
            };
            // Bounds and rule check; allow category drift.
            let geom = figure_geometry(&frame.human, &frame.pose);
            let ext = geom.extent();
            let half = frame.object.size as f32 / 2.0;
            let in_canvas = ext.0 >= 1.0
                && ext.1 >= 1.0
                && ext.2 <= CANVAS as f32 - 2.0
                && ext.3 <= CANVAS as f32 - 2.0
                && pos.0 - half >= 1.0
                && pos.1 - half >= 1.0
                && pos.0 + half <= CANVAS as f32 - 2.0
                && pos.1 + half <= CANVAS as f32 - 2.0;
            if !in_canvas {
                ok = false;
                break;
            }
            let (_, hm, om) = render_scene(&frame, (CANVAS, CANVAS))?;
            if hm.is_empty() || om.is_empty() {
                ok = false;
                break;
            }
            let h32 = hm.downsample2_or();
            let o32 = om.downsample2_or();
            let mut verb = None;
            if check_interaction(&hm, &om, category, cfg)?
                && !h32.is_empty()
                && !o32.is_empty()
                && check_interaction(&h32, &o32, category, cfg)?
            {
                verb = Some(category.id);
            } else {
                for cat in &cfg.categories {
                    if cat.id == category.id {
                        continue;
                    }
                    if check_interaction(&hm, &om, cat, cfg)?
                        && !h32.is_empty()
                        && !o32.is_empty()
                        && check_interaction(&h32, &o32, cat, cfg)?
                    {
                        verb = Some(cat.id);
                        break;
                    }
                }
            }
            match verb {
                Some(v) => {
                    verbs.push(v);
                    frames.push(frame);
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            let clip = VideoClip {
                frames,
                verbs,
                seed,
            };
            debug_assert!(clip.validate(cfg).is_ok());
            return Ok(clip);
        }
    }
    Err(DatasetError::ClipRejected {
        verb: category.verb.clone(),
        retries: MAX_RETRIES,
    })
}

/// Build one record from two clip frames: references segmented from frame i,
/// target and conditions from frame j.
pub fn build_video_pair_sample(
    clip: &VideoClip,
    i: usize,
    j: usize,
    cfg: &RuleConfig,
) -> Result<HOISample, DatasetError> {
    let len = clip.frames.len();
    if i == j || i >= len || j >= len {
        return Err(DatasetError::BadFrameIndices { i, j, len });
    }
    let fi = &clip.frames[i];
    let fj = &clip.frames[j];
    let (img_i, hm_i, om_i) = render_scene(fi, (CANVAS, CANVAS))?;
    let (img_j, hm_j, om_j) = render_scene(fj, (CANVAS, CANVAS))?;
    let human_ref = segment_crop(&img_i, &hm_i, cfg);
    let object_ref = segment_crop(&img_i, &om_i, cfg);
    let cat_j = cfg.category(clip.verbs[j]).map_err(crate::synthworld::SynthError::Rule)?;
    Ok(HOISample {
        human_ref,
        object_ref,
        prompt: render_prompt(cat_j, fj.object.shape),
        category_id: cat_j.id,
        gt_image: img_j,
        mask_human: hm_j.downsample2_or(),
        mask_object: om_j.downsample2_or(),
        background: Some(render_background(fj)),
        bbox: Some(union_bbox_dilated(&hm_j, &om_j)),
        source: SampleSource::VideoPair,
        scene: fj.clone(),
        ref_pose: fi.pose,
    })
}

/// Structural invariants of one record; used by tests and the smoke run.
pub fn validate_sample(s: &HOISample, cfg: &RuleConfig) -> Result<(), String> {
    if s.mask_human.is_empty() || s.mask_object.is_empty() {
        return Err("empty ground-truth mask channel".into());
    }
    let cat = cfg.category(s.category_id).map_err(|e| e.to_string())?;
    if !check_interaction(&s.mask_human, &s.mask_object, cat, cfg).map_err(|e| e.to_string())? {
        return Err(format!("ground truth fails its own rule '{}'", cat.verb));
    }
    if s.prompt != render_prompt(cat, s.scene.object.shape) {
        return Err(format!("prompt deviates from the template: '{}'", s.prompt));
    }
    match (&s.background, &s.bbox) {
        (Some(bg), Some(b)) => {
            if !b.valid_for(bg.w, bg.h) {
                return Err(format!("box {b:?} out of bounds"));
            }
            // Foreground (at canvas resolution) must lie inside the box.
            let (_, hm64, om64) = render_scene(&s.scene, (CANVAS, CANVAS)).map_err(|e| e.to_string())?;
            let u = hm64.union(&om64);
            if let Some(fb) = u.bbox() {
                if fb.x0 < b.x0 || fb.y0 < b.y0 || fb.x1 > b.x1 || fb.y1 > b.y1 {
                    return Err("foreground escapes its box".into());
                }
            }
        }
        (None, None) => {}
        _ => return Err("background and box must be jointly present or absent".into()),
    }
    if s.gt_image.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err("ground-truth image values outside [0,1]".into());
    }
    Ok(())
}

/// Build a full split: an even image-adapted / video-pair mix per category.
pub fn build_split(
    seed: u64,
    split: Split,
    per_category: usize,
    cfg: &RuleConfig,
) -> Result<Vec<HOISample>, DatasetError> {
    let mut out = Vec::with_capacity(per_category * cfg.k());
    let salt = match split {
        Split::Train => 0x7261_u64,
        Split::Test => 0x7465_u64,
    };
    for cat in &cfg.categories {
        let n_image = per_category / 2;
        for s in 0..per_category {
            let sample_seed = mix(seed ^ salt ^ ((cat.id as u64) << 32) ^ s as u64);
            if s < n_image {
                out.push(build_image_adapted_sample(sample_seed, cat, split, cfg)?);
            } else {
                let mut rng = stream(sample_seed, Stream::DatasetBuild, 0x636c_6970);
                let n_frames = rng.gen_range(4..=8);
                let clip = generate_clip(sample_seed, cat, n_frames, split, cfg)?;
                let i = rng.gen_range(0..clip.len());
                let mut j = rng.gen_range(0..clip.len());
                while j == i {
                    j = rng.gen_range(0..clip.len());
                }
                out.push(build_video_pair_sample(&clip, i, j, cfg)?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_template_exact() {
        let cfg = RuleConfig::builtin();
        let ride = cfg.by_verb("ride").unwrap();
        assert_eq!(render_prompt(ride, ObjectShape::Bar), "A person is riding the bar");
        let sit = cfg.by_verb("sit").unwrap();
        assert_eq!(
            render_prompt(sit, ObjectShape::Circle),
            "A person is sitting on the circle"
        );
    }

    #[test]
    fn image_adapted_sample_properties() {
        let cfg = RuleConfig::builtin();
        let kick = cfg.by_verb("kick").unwrap();
        for seed in 0..8 {
            let s = build_image_adapted_sample(seed, kick, Split::Train, cfg).unwrap();
            validate_sample(&s, cfg).expect("sample invariants");
            // Reference pose differs from the ground-truth pose.
            assert!(s.ref_pose.l1_distance(&s.scene.pose) > 0.0);
            // Identity palette preserved: the reference crop contains the
            // body color of the ground-truth human.
            let body = crate::raster::quantize_rgb(s.scene.human.body_color);
            let found = (0..s.human_ref.h)
                .any(|y| (0..s.human_ref.w).any(|x| s.human_ref.get(x, y) == body));
            assert!(found, "body color present in reference crop");
        }
    }

    #[test]
    fn clip_invariants_and_oracle() {
        let cfg = RuleConfig::builtin();
        let hold = cfg.by_verb("hold").unwrap();
        let clip = generate_clip(11, hold, 8, Split::Train, cfg).unwrap();
        assert_eq!(clip.len(), 8);
        clip.validate(cfg).expect("clip invariants");
        // Identities equal between first and last frame.
        assert_eq!(clip.frames[0].human, clip.frames[7].human);
        assert_eq!(clip.frames[0].object, clip.frames[7].object);
    }

    #[test]
    fn video_pair_sample_rules() {
        let cfg = RuleConfig::builtin();
        let ride = cfg.by_verb("ride").unwrap();
        let clip = generate_clip(3, ride, 6, Split::Train, cfg).unwrap();
        assert!(matches!(
            build_video_pair_sample(&clip, 2, 2, cfg),
            Err(DatasetError::BadFrameIndices { .. })
        ));
        let s = build_video_pair_sample(&clip, 0, 5, cfg).unwrap();
        validate_sample(&s, cfg).expect("sample invariants");
        assert_eq!(s.source, SampleSource::VideoPair);
        assert_eq!(s.ref_pose, clip.frames[0].pose);
    }

    #[test]
    fn split_identities_disjoint() {
        let cfg = RuleConfig::builtin();
        let hold = cfg.by_verb("hold").unwrap();
        let tr = build_image_adapted_sample(5, hold, Split::Train, cfg).unwrap();
        let te = build_image_adapted_sample(5, hold, Split::Test, cfg).unwrap();
        assert_ne!(tr.scene.human.body_color, te.scene.human.body_color);
    }
}
