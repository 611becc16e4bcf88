//! Interaction categories and the geometric oracle that decides whether a
//! (human, object) mask pair expresses a category.
//!
//! Rules are pure predicates over normalized centroid offsets, bbox
//! relations and pixel contact; constants live in `config/rules.toml`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Mask;
use crate::rng::fnv1a;

pub const RULES_TOML: &str = include_str!("../../config/rules.toml");

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("rule config parse error: {0}")]
    Parse(String),
    #[error("empty {0} mask given to the interaction oracle")]
    EmptyMask(&'static str),
    #[error("mask shapes differ: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("unknown category id {0}")]
    UnknownCategory(usize),
    #[error("unknown verb token '{0}'")]
    UnknownVerb(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Horizontal {
    /// No constraint on the bbox x-ranges.
    Any,
    /// The bboxes must share at least one column.
    Overlap,
    /// The object bbox must be entirely left or right of the human bbox.
    Outside,
}

/// One interaction category: identity plus its geometric rule parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InteractionCategory {
    pub id: usize,
    pub verb: String,
    pub gerund: String,
    pub requires_contact: bool,
    #[serde(default)]
    pub max_gap: Option<u32>,
    pub dy_min: f64,
    pub dy_max: f64,
    #[serde(default)]
    pub abs_dx_min: Option<f64>,
    #[serde(default)]
    pub abs_dx_max: Option<f64>,
    pub horizontal: Horizontal,
    #[serde(default)]
    pub lower_third_on_object_top: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PaletteConfig {
    pub min_separation: f64,
    pub hue_count: usize,
    pub background_gray_min: f64,
    pub background_gray_max: f64,
    pub neutral_gray: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContactConfig {
    pub contact_max_chebyshev: usize,
    pub gap_search_max: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleConfig {
    pub schema_version: u32,
    pub palette: PaletteConfig,
    pub contact: ContactConfig,
    pub categories: Vec<InteractionCategory>,
}

impl RuleConfig {
    pub fn parse(toml_text: &str) -> Result<RuleConfig, RuleError> {
        let cfg: RuleConfig = toml::from_str(toml_text).map_err(|e| RuleError::Parse(e.to_string()))?;
        for (i, c) in cfg.categories.iter().enumerate() {
            if c.id != i {
                return Err(RuleError::Parse(format!(
                    "category ids must be dense and ordered; found id {} at position {i}",
                    c.id
                )));
            }
        }
        let mut verbs: Vec<&str> = cfg.categories.iter().map(|c| c.verb.as_str()).collect();
        verbs.sort_unstable();
        verbs.dedup();
        if verbs.len() != cfg.categories.len() {
            return Err(RuleError::Parse("verbs must be unique".into()));
        }
        Ok(cfg)
    }

    /// The repo-versioned rule set.
    pub fn builtin() -> &'static RuleConfig {
        static CFG: OnceLock<RuleConfig> = OnceLock::new();
        CFG.get_or_init(|| RuleConfig::parse(RULES_TOML).expect("builtin rules.toml must parse"))
    }

    /// Hash of the builtin config text; embedded in metric reports.
    pub fn builtin_hash() -> u64 {
        fnv1a(RULES_TOML.as_bytes())
    }

    pub fn k(&self) -> usize {
        self.categories.len()
    }

    pub fn category(&self, id: usize) -> Result<&InteractionCategory, RuleError> {
        self.categories.get(id).ok_or(RuleError::UnknownCategory(id))
    }

    pub fn by_verb(&self, token: &str) -> Option<&InteractionCategory> {
        let t = token.to_ascii_lowercase();
        self.categories
            .iter()
            .find(|c| c.verb == t || c.gerund == t || c.gerund.split_whitespace().next() == Some(t.as_str()))
    }
}

/// Normalized spatial features of a mask pair; shared by the oracle, the
/// retrieval descriptors and the KL metric.
#[derive(Debug, Clone, Copy)]
pub struct PairFeatures {
    pub dx: f64,
    pub dy: f64,
    pub contact: bool,
    /// Chebyshev pixel distance between the masks, capped by the search limit.
    pub distance: Option<usize>,
}

pub fn pair_features(
    human: &Mask,
    object: &Mask,
    cfg: &RuleConfig,
) -> Result<PairFeatures, RuleError> {
    if human.w != object.w || human.h != object.h {
        return Err(RuleError::ShapeMismatch(human.w, human.h, object.w, object.h));
    }
    if human.is_empty() {
        return Err(RuleError::EmptyMask("human"));
    }
    if object.is_empty() {
        return Err(RuleError::EmptyMask("object"));
    }
    let hb = human.bbox().unwrap();
    let (hx, hy) = human.centroid().unwrap();
    let (ox, oy) = object.centroid().unwrap();
    let hh = hb.height() as f64;
    let distance = human.chebyshev_distance(object, cfg.contact.gap_search_max);
    let contact = matches!(distance, Some(d) if d <= cfg.contact.contact_max_chebyshev);
    Ok(PairFeatures {
        dx: (ox - hx) / hh,
        dy: (oy - hy) / hh,
        contact,
        distance,
    })
}

/// The interaction oracle: does this mask pair express `category`?
pub fn check_interaction(
    human: &Mask,
    object: &Mask,
    category: &InteractionCategory,
    cfg: &RuleConfig,
) -> Result<bool, RuleError> {
    let f = pair_features(human, object, cfg)?;
    if category.requires_contact && !f.contact {
        return Ok(false);
    }
    if let Some(max_gap) = category.max_gap {
        // gap = pixels of empty space; Chebyshev distance d means gap d-1.
        match f.distance {
            Some(d) if d.saturating_sub(1) <= max_gap as usize => {}
            _ => return Ok(false),
        }
    }
    if !(f.dy > category.dy_min && f.dy <= category.dy_max) {
        return Ok(false);
    }
    let adx = f.dx.abs();
    if let Some(lo) = category.abs_dx_min {
        if adx < lo {
            return Ok(false);
        }
    }
    if let Some(hi) = category.abs_dx_max {
        if adx > hi {
            return Ok(false);
        }
    }
    let hb = human.bbox().unwrap();
    let ob = object.bbox().unwrap();
    match category.horizontal {
        Horizontal::Any => {}
        Horizontal::Overlap => {
            if ob.x1 < hb.x0 || ob.x0 > hb.x1 {
                return Ok(false);
            }
        }
        Horizontal::Outside => {
            if !(ob.x1 < hb.x0 || ob.x0 > hb.x1) {
                return Ok(false);
            }
        }
    }
    if category.lower_third_on_object_top {
        // The human's lower-third rows must touch the object's top-quarter rows.
        let band_start = hb.y0 as f64 + 2.0 * hb.height() as f64 / 3.0;
        let mut lower = Mask::zeros(human.w, human.h);
        for y in 0..human.h {
            if (y as f64) >= band_start {
                for x in 0..human.w {
                    if human.get(x, y) {
                        lower.set(x, y, true);
                    }
                }
            }
        }
        let top_end = ob.y0 as f64 + (ob.height() as f64 / 4.0).max(1.0);
        let mut top = Mask::zeros(object.w, object.h);
        for y in 0..object.h {
            if (y as f64) <= top_end {
                for x in 0..object.w {
                    if object.get(x, y) {
                        top.set(x, y, true);
                    }
                }
            }
        }
        if lower.is_empty() || top.is_empty() {
            return Ok(false);
        }
        match lower.chebyshev_distance(&top, cfg.contact.contact_max_chebyshev) {
            Some(d) if d <= cfg.contact.contact_max_chebyshev => {}
            _ => return Ok(false),
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_config_parses_with_six_unique_categories() {
        let cfg = RuleConfig::builtin();
        assert_eq!(cfg.k(), 6);
        assert_eq!(cfg.categories[1].verb, "ride");
        assert!(cfg.by_verb("riding").is_some());
        assert!(cfg.by_verb("sitting").is_some());
        assert!(cfg.by_verb("teleporting").is_none());
    }

    #[test]
    fn empty_mask_rejected() {
        let cfg = RuleConfig::builtin();
        let m = Mask::zeros(8, 8);
        let mut o = Mask::zeros(8, 8);
        o.set(1, 1, true);
        assert!(matches!(
            check_interaction(&m, &o, &cfg.categories[0], cfg),
            Err(RuleError::EmptyMask("human"))
        ));
    }

    #[test]
    fn far_translation_breaks_contact_categories() {
        let cfg = RuleConfig::builtin();
        // A vertical "human" bar and an adjacent object blob at mid height.
        let mut h = Mask::zeros(32, 32);
        for y in 8..24 {
            h.set(10, y, true);
            h.set(11, y, true);
        }
        let mut o = Mask::zeros(32, 32);
        for y in 14..18 {
            for x in 12..16 {
                o.set(x, y, true);
            }
        }
        let hold = &cfg.categories[0];
        assert!(check_interaction(&h, &o, hold, cfg).unwrap());
        // Translate the object two human-bbox-heights away: contact impossible.
        let mut far = Mask::zeros(32, 32);
        for y in 14..18 {
            for x in 28..32 {
                far.set(x, y, true);
            }
        }
        for cat in &cfg.categories {
            if cat.requires_contact {
                assert!(
                    !check_interaction(&h, &far, cat, cfg).unwrap(),
                    "category {} should fail without contact",
                    cat.verb
                );
            }
        }
    }
}
