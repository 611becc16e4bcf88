//! Evaluation metrics grounded in the analytic world: palette-histogram
//! identity similarity, rule-based holistic semantic accuracy, spatial-
//! configuration KL distance, box compliance.

pub mod identity;
pub mod kl;
pub mod report;

use thiserror::Error;

use crate::raster::{BoxPx, Mask};
use crate::synthworld::{check_interaction, RuleConfig};

pub use identity::{identity_similarity, segment_scene_palette, ScenePalette};
pub use kl::{mask_kl_distance, KlResult};
pub use report::{compare_reports, MetricReport, OrderingCheck, ReportBaselines};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input set")]
    EmptyInput,
    #[error("inputs misaligned: {0} items vs {1} labels")]
    Misaligned(usize, usize),
    #[error(transparent)]
    Rule(#[from] crate::synthworld::RuleError),
    #[error("report io at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("report parse error: {0}")]
    Parse(String),
}

/// Fraction of (human, object) mask pairs passing their own category's rule.
/// Pairs with an empty channel count as failures rather than errors.
pub fn holistic_accuracy(
    pairs: &[(Mask, Mask)],
    categories: &[usize],
    cfg: &RuleConfig,
) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if pairs.len() != categories.len() {
        return Err(EvalError::Misaligned(pairs.len(), categories.len()));
    }
    let mut pass = 0usize;
    for ((h, o), &cat) in pairs.iter().zip(categories) {
        if h.is_empty() || o.is_empty() {
            continue;
        }
        let rule = cfg.category(cat)?;
        if check_interaction(h, o, rule, cfg)? {
            pass += 1;
        }
    }
    Ok(pass as f64 / pairs.len() as f64)
}

/// Mean fraction of foreground mass (union of channels) inside each box.
/// Masks live on the 32px grid, boxes in 64px canvas coordinates.
pub fn box_compliance(pairs: &[(Mask, Mask)], boxes: &[BoxPx]) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if pairs.len() != boxes.len() {
        return Err(EvalError::Misaligned(pairs.len(), boxes.len()));
    }
    let mut acc = 0.0;
    for ((h, o), b) in pairs.iter().zip(boxes) {
        let u = h.union(o);
        let total = u.count();
        if total == 0 {
            continue;
        }
        let scale = u.w as u32 * 2 / 64; // 1 for 32px masks on a 64px canvas
        let _ = scale;
        let (bx0, by0, bx1, by1) = (
            (b.x0 / 2) as usize,
            (b.y0 / 2) as usize,
            (b.x1 / 2) as usize,
            (b.y1 / 2) as usize,
        );
        let mut inside = 0usize;
        for y in 0..u.h {
            for x in 0..u.w {
                if u.get(x, y) && x >= bx0 && x <= bx1 && y >= by0 && y <= by1 {
                    inside += 1;
                }
            }
        }
        acc += inside as f64 / total as f64;
    }
    Ok(acc / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_compliance_counting() {
        // 4 foreground pixels, half inside the box.
        let mut h = Mask::zeros(32, 32);
        h.set(4, 4, true);
        h.set(5, 4, true);
        let mut o = Mask::zeros(32, 32);
        o.set(20, 20, true);
        o.set(21, 20, true);
        let b = BoxPx {
            x0: 0,
            y0: 0,
            x1: 23, // mask-grid 11: covers x 4..=11
            y1: 23,
        };
        let c = box_compliance(&[(h.clone(), o.clone())], &[b]).unwrap();
        assert!((c - 0.5).abs() < 1e-12);
        // Fully inside box.
        let full = BoxPx {
            x0: 0,
            y0: 0,
            x1: 63,
            y1: 63,
        };
        let c2 = box_compliance(&[(h, o)], &[full]).unwrap();
        assert_eq!(c2, 1.0);
    }

    #[test]
    fn holistic_on_gt_is_one() {
        let cfg = RuleConfig::builtin();
        let mut pairs = Vec::new();
        let mut cats = Vec::new();
        for cat in &cfg.categories {
            let scene = crate::synthworld::sample_scene(
                9,
                cat,
                None,
                None,
                crate::synthworld::sample::Split::Train,
                cfg,
            )
            .unwrap();
            let (_, hm, om) = crate::synthworld::render_scene(&scene, (64, 64)).unwrap();
            pairs.push((hm.downsample2_or(), om.downsample2_or()));
            cats.push(cat.id);
        }
        assert_eq!(holistic_accuracy(&pairs, &cats, cfg).unwrap(), 1.0);
        assert!(holistic_accuracy(&[], &[], cfg).is_err());
    }
}
