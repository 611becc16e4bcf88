//! Spatial-configuration distribution distance: KL divergence between
//! histograms of (dx, dy, contact) features of mask pairs, computed per
//! category then averaged.

use crate::raster::Mask;
use crate::synthworld::{pair_features, RuleConfig};

use super::EvalError;

const GRID: usize = 8;
const RANGE: f64 = 2.0; // dx, dy binned over [-2, 2]
const CELLS: usize = GRID * GRID * 2;

#[derive(Debug, Clone)]
pub struct KlResult {
    pub mean: f64,
    pub per_category: Vec<Option<f64>>,
    /// Pairs dropped because a channel was empty.
    pub skipped_pairs: usize,
}

fn bin(v: f64) -> usize {
    let t = ((v + RANGE) / (2.0 * RANGE) * GRID as f64).floor();
    (t.max(0.0) as usize).min(GRID - 1)
}

fn histogram(
    pairs: &[(Mask, Mask)],
    cats: &[usize],
    want: usize,
    cfg: &RuleConfig,
    skipped: &mut usize,
) -> (Vec<f64>, usize) {
    let mut counts = vec![0.0f64; CELLS];
    let mut n = 0usize;
    for ((h, o), &c) in pairs.iter().zip(cats) {
        if c != want {
            continue;
        }
        if h.is_empty() || o.is_empty() {
            *skipped += 1;
            continue;
        }
        let f = pair_features(h, o, cfg).expect("nonempty masks");
        let idx = (bin(f.dx) * GRID + bin(f.dy)) * 2 + usize::from(f.contact);
        counts[idx] += 1.0;
        n += 1;
    }
    (counts, n)
}

fn kl_smoothed(p_counts: &[f64], p_n: usize, q_counts: &[f64], q_n: usize) -> f64 {
    // Add-one smoothing on both histograms.
    let pn = p_n as f64 + CELLS as f64;
    let qn = q_n as f64 + CELLS as f64;
    let mut kl = 0.0;
    for i in 0..CELLS {
        let p = (p_counts[i] + 1.0) / pn;
        let q = (q_counts[i] + 1.0) / qn;
        kl += p * (p / q).ln();
    }
    kl
}

/// KL(gen || ref) per category, averaged over categories that have samples
/// on both sides.
pub fn mask_kl_distance(
    gen: &[(Mask, Mask)],
    gen_cats: &[usize],
    reference: &[(Mask, Mask)],
    ref_cats: &[usize],
    cfg: &RuleConfig,
) -> Result<KlResult, EvalError> {
    if gen.is_empty() || reference.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if gen.len() != gen_cats.len() {
        return Err(EvalError::Misaligned(gen.len(), gen_cats.len()));
    }
    if reference.len() != ref_cats.len() {
        return Err(EvalError::Misaligned(reference.len(), ref_cats.len()));
    }
    let mut skipped = 0usize;
    let mut per_category = Vec::with_capacity(cfg.k());
    let mut acc = 0.0;
    let mut used = 0usize;
    for cat in 0..cfg.k() {
        let (pg, ng) = histogram(gen, gen_cats, cat, cfg, &mut skipped);
        let (pr, nr) = histogram(reference, ref_cats, cat, cfg, &mut skipped);
        if ng == 0 || nr == 0 {
            per_category.push(None);
            continue;
        }
        let kl = kl_smoothed(&pg, ng, &pr, nr);
        per_category.push(Some(kl));
        acc += kl;
        used += 1;
    }
    if used == 0 {
        return Err(EvalError::EmptyInput);
    }
    Ok(KlResult {
        mean: acc / used as f64,
        per_category,
        skipped_pairs: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use crate::synthworld::sample::{sample_scene, Split};
    use crate::synthworld::render_scene;
    use rand::Rng;

    fn gt_set(n: u64, cfg: &RuleConfig, seed0: u64) -> (Vec<(Mask, Mask)>, Vec<usize>) {
        let mut pairs = Vec::new();
        let mut cats = Vec::new();
        for cat in &cfg.categories {
            for s in 0..n {
                let scene =
                    sample_scene(seed0 + s, cat, None, None, Split::Train, cfg).unwrap();
                let (_, hm, om) = render_scene(&scene, (64, 64)).unwrap();
                pairs.push((hm.downsample2_or(), om.downsample2_or()));
                cats.push(cat.id);
            }
        }
        (pairs, cats)
    }

    #[test]
    fn kl_zero_against_itself_and_small_between_halves() {
        let cfg = RuleConfig::builtin();
        let (pairs, cats) = gt_set(170, cfg, 1000);
        let r = mask_kl_distance(&pairs, &cats, &pairs, &cats, cfg).unwrap();
        assert!(r.mean < 1e-3, "self-KL {}", r.mean);

        // Split halves (interleaved): small KL. Category shuffle: much larger.
        let (mut pa, mut ca, mut pb, mut cb) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, (p, c)) in pairs.iter().zip(&cats).enumerate() {
            if i % 2 == 0 {
                pa.push(p.clone());
                ca.push(*c);
            } else {
                pb.push(p.clone());
                cb.push(*c);
            }
        }
        let ra = mask_kl_distance(&pa, &ca, &pb, &cb, cfg).unwrap();
        let mut rng = stream(5, Stream::Shuffle, 0);
        let shuffled: Vec<usize> = cats.iter().map(|_| rng.gen_range(0..cfg.k())).collect();
        let rb = mask_kl_distance(&pairs, &shuffled, &pairs, &cats, cfg).unwrap();
        assert!(
            rb.mean > 10.0 * ra.mean,
            "shuffled {} vs split-half {}",
            rb.mean,
            ra.mean
        );
    }

    #[test]
    fn kl_monotone_under_offset_jitter() {
        // Injecting growing uniform jitter into generated centroids must
        // increase KL on average (5-point sweep).
        let cfg = RuleConfig::builtin();
        let (pairs, cats) = gt_set(60, cfg, 4000);
        let mut prev = -1.0f64;
        let mut increases = 0;
        let mut total = 0;
        for (i, radius) in [0usize, 2, 4, 6, 9].iter().enumerate() {
            let mut rng = stream(17, Stream::Shuffle, *radius as u64);
            let jittered: Vec<(Mask, Mask)> = pairs
                .iter()
                .map(|(h, o)| {
                    let dx = rng.gen_range(-(*radius as i32)..=(*radius as i32));
                    let dy = rng.gen_range(-(*radius as i32)..=(*radius as i32));
                    (h.clone(), translate(o, dx, dy))
                })
                .collect();
            let r = mask_kl_distance(&jittered, &cats, &pairs, &cats, cfg).unwrap();
            if i > 0 {
                total += 1;
                if r.mean > prev {
                    increases += 1;
                }
            }
            prev = r.mean;
        }
        assert!(increases >= total - 1, "KL not increasing under jitter");
    }

    fn translate(m: &Mask, dx: i32, dy: i32) -> Mask {
        let mut out = Mask::zeros(m.w, m.h);
        let mut any = false;
        for y in 0..m.h {
            for x in 0..m.w {
                if m.get(x, y) {
                    let nx = x as i32 + dx;
                    let ny = y as i32 + dy;
                    if nx >= 0 && ny >= 0 && (nx as usize) < m.w && (ny as usize) < m.h {
                        out.set(nx as usize, ny as usize, true);
                        any = true;
                    }
                }
            }
        }
        if any {
            out
        } else {
            m.clone()
        }
    }
}
