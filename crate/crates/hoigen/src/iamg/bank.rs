//! Retrieval-based mask source: a de-duplicated bank of ground-truth masks
//! with text descriptors, queried by bag-of-tokens cosine similarity.

use std::collections::HashSet;
use std::path::Path;

use crate::datasets::Manifest;
use crate::raster::Mask;
use crate::rng::{fnv1a, fnv1a_combine};
use crate::synthworld::{pair_features, PairFeatures, RuleConfig};

use super::IamgError;

#[derive(Debug, Clone)]
pub struct BankEntry {
    pub mask_human: Mask,
    pub mask_object: Mask,
    pub description: String,
    pub descriptor: Vec<f32>,
    pub category_id: usize,
}

#[derive(Debug, Clone)]
pub struct MaskBank {
    pub entries: Vec<BankEntry>,
    pub vocab: Vec<String>,
}

/// Coarse relative-position word from pair features.
pub fn position_word(f: &PairFeatures) -> &'static str {
    if f.dy <= -0.3 {
        "above"
    } else if f.dy >= 0.3 {
        "below"
    } else if f.dx.abs() >= 0.3 {
        "beside"
    } else {
        "near"
    }
}

fn vocab_from(cfg: &RuleConfig) -> Vec<String> {
    let mut v: Vec<String> = Vec::new();
    for c in &cfg.categories {
        v.push(c.verb.clone());
        if let Some(first) = c.gerund.split_whitespace().next() {
            if !v.contains(&first.to_string()) {
                v.push(first.to_string());
            }
        }
    }
    for s in crate::synthworld::ObjectShape::ALL {
        v.push(s.word().to_string());
    }
    for w in ["above", "below", "beside", "near"] {
        v.push(w.to_string());
    }
    v
}

fn bag(text: &str, vocab: &[String]) -> Vec<f32> {
    let mut v = vec![0.0f32; vocab.len()];
    for tok in text
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_ascii_lowercase())
    {
        if let Some(i) = vocab.iter().position(|w| *w == tok) {
            v[i] += 1.0;
        }
    }
    v
}

fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn mask_pair_hash(h: &Mask, o: &Mask) -> u64 {
    let hb: Vec<u8> = h.data.iter().map(|&b| u8::from(b)).collect();
    let ob: Vec<u8> = o.data.iter().map(|&b| u8::from(b)).collect();
    fnv1a_combine(fnv1a(&hb), fnv1a(&ob))
}

/// Build the bank from a manifest: one entry per distinct ground-truth mask
/// pair, described by verb, object shape and coarse relative position.
pub fn build_mask_bank(
    dir: &Path,
    manifest: &Manifest,
    cfg: &RuleConfig,
) -> Result<MaskBank, IamgError> {
    let vocab = vocab_from(cfg);
    let mut seen: HashSet<u64> = HashSet::new();
    let mut entries = Vec::new();
    for rec in &manifest.records {
        let full = dir.join(&rec.masks.path);
        let (h, o) = Mask::load_pair_png(&full)?;
        let key = mask_pair_hash(&h, &o);
        if !seen.insert(key) {
            continue;
        }
        let f = pair_features(&h, &o, cfg)?;
        let cat = cfg.category(rec.category_id)?;
        let description = format!(
            "{} the {}, object {}",
            cat.gerund,
            rec.scene.object.shape.word(),
            position_word(&f)
        );
        let descriptor = bag(&description, &vocab);
        entries.push(BankEntry {
            mask_human: h,
            mask_object: o,
            description,
            descriptor,
            category_id: rec.category_id,
        });
    }
    Ok(MaskBank { entries, vocab })
}

/// Top-1 retrieval by cosine similarity between the query's bag-of-tokens
/// vector and stored descriptors; ties resolve to the lowest entry index.
pub fn retrieve_mask<'b>(bank: &'b MaskBank, query: &str) -> Result<&'b BankEntry, IamgError> {
    if bank.entries.is_empty() {
        return Err(IamgError::EmptyBank);
    }
    let q = bag(query, &bank.vocab);
    let mut best = 0usize;
    let mut best_sim = f32::NEG_INFINITY;
    for (i, e) in bank.entries.iter().enumerate() {
        let s = cosine(&q, &e.descriptor);
        if s > best_sim {
            best_sim = s;
            best = i;
        }
    }
    Ok(&bank.entries[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{build_split, write_manifest};
    use crate::synthworld::sample::Split;

    #[test]
    fn self_retrieval_and_unique_match() {
        let cfg = RuleConfig::builtin();
        let dir = std::env::temp_dir().join("hoigen_bank_test");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let samples = build_split(77, Split::Train, 2, cfg).unwrap();
        let manifest = write_manifest(&samples, &dir, Split::Train, 77, cfg).unwrap();
        let bank = build_mask_bank(&dir, &manifest, cfg).unwrap();
        assert!(!bank.entries.is_empty());

        // Query equal to a stored description returns that entry (or one
        // with an identical descriptor at a lower index).
        let target = bank.entries.last().unwrap();
        let hit = retrieve_mask(&bank, &target.description).unwrap();
        assert_eq!(hit.descriptor, target.descriptor);

        // A verb-only query hits an entry of that category.
        let hit = retrieve_mask(&bank, "riding").unwrap();
        assert_eq!(hit.category_id, 1);

        let empty = MaskBank {
            entries: Vec::new(),
            vocab: bank.vocab.clone(),
        };
        assert!(matches!(retrieve_mask(&empty, "x"), Err(IamgError::EmptyBank)));
    }
}
