//! On-disk corpus layout: lossless PNG rasters plus one JSON manifest per
//! split.
//!
//! Layout under a split directory:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/images/NNNNNN_h.png    human reference crop
//! <dir>/images/NNNNNN_o.png    object reference crop
//! <dir>/images/NNNNNN_gt.png   ground-truth image
//! <dir>/images/NNNNNN_m.png    masks (R = human, G = object)
//! <dir>/images/NNNNNN_bg.png   background, when present
//! ```
//!
//! Every file's FNV-64 hash is recorded; loading verifies existence and
//! hashes before decoding anything.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::raster::{BoxPx, ImageRgb, Mask};
use crate::rng::fnv1a;
use crate::synthworld::sample::Split;
use crate::synthworld::{Pose, RuleConfig, Scene};

use super::{DatasetError, HOISample, SampleSource};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub fnv64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: usize,
    pub human_ref: FileRef,
    pub object_ref: FileRef,
    pub gt_image: FileRef,
    pub masks: FileRef,
    #[serde(default)]
    pub background: Option<FileRef>,
    #[serde(default)]
    pub bbox: Option<BoxPx>,
    pub prompt: String,
    pub category_id: usize,
    pub verb: String,
    pub source: SampleSource,
    pub scene: Scene,
    pub ref_pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub split: Split,
    pub seed: u64,
    pub rules_hash: String,
    /// Record count per category id.
    pub counts: Vec<usize>,
    pub records: Vec<ManifestRecord>,
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_and_ref(dir: &Path, rel: &str, write: impl FnOnce(&Path) -> Result<(), DatasetError>) -> Result<FileRef, DatasetError> {
    let full = dir.join(rel);
    write(&full)?;
    let bytes = std::fs::read(&full).map_err(|e| io_err(&full, e))?;
    Ok(FileRef {
        path: rel.to_string(),
        fnv64: format!("{:016x}", fnv1a(&bytes)),
    })
}

/// Persist samples and return the manifest (also written to disk).
pub fn write_manifest(
    samples: &[HOISample],
    dir: &Path,
    split: Split,
    seed: u64,
    cfg: &RuleConfig,
) -> Result<Manifest, DatasetError> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| io_err(&images, e))?;
    let mut records = Vec::with_capacity(samples.len());
    let mut counts = vec![0usize; cfg.k()];
    for (id, s) in samples.iter().enumerate() {
        counts[s.category_id] += 1;
        let stem = format!("images/{id:06}");
        let human_ref = write_and_ref(dir, &format!("{stem}_h.png"), |p| {
            s.human_ref.save_png(p).map_err(DatasetError::Raster)
        })?;
        let object_ref = write_and_ref(dir, &format!("{stem}_o.png"), |p| {
            s.object_ref.save_png(p).map_err(DatasetError::Raster)
        })?;
        let gt_image = write_and_ref(dir, &format!("{stem}_gt.png"), |p| {
            s.gt_image.save_png(p).map_err(DatasetError::Raster)
        })?;
        let masks = write_and_ref(dir, &format!("{stem}_m.png"), |p| {
            Mask::save_pair_png(&s.mask_human, &s.mask_object, p).map_err(DatasetError::Raster)
        })?;
        let background = match &s.background {
            Some(bg) => Some(write_and_ref(dir, &format!("{stem}_bg.png"), |p| {
                bg.save_png(p).map_err(DatasetError::Raster)
            })?),
            None => None,
        };
        let verb = cfg
            .category(s.category_id)
            .map_err(crate::synthworld::SynthError::Rule)?
            .verb
            .clone();
        records.push(ManifestRecord {
            id,
            human_ref,
            object_ref,
            gt_image,
            masks,
            background,
            bbox: s.bbox,
            prompt: s.prompt.clone(),
            category_id: s.category_id,
            verb,
            source: s.source,
            scene: s.scene.clone(),
            ref_pose: s.ref_pose,
        });
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        split,
        seed,
        rules_hash: format!("{:016x}", RuleConfig::builtin_hash()),
        counts,
        records,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| DatasetError::Parse(e.to_string()))?;
    let mpath = dir.join("manifest.json");
    std::fs::write(&mpath, text).map_err(|e| io_err(&mpath, e))?;
    Ok(manifest)
}

fn verify_file(dir: &Path, f: &FileRef) -> Result<PathBuf, DatasetError> {
    let full = dir.join(&f.path);
    let bytes = match std::fs::read(&full) {
        Ok(b) => b,
        Err(_) => return Err(DatasetError::MissingFile(full.display().to_string())),
    };
    if format!("{:016x}", fnv1a(&bytes)) != f.fnv64 {
        return Err(DatasetError::ChecksumMismatch(full.display().to_string()));
    }
    Ok(full)
}

/// Read and verify a manifest: schema, file existence, checksums, counts.
pub fn load_manifest(dir: &Path) -> Result<Manifest, DatasetError> {
    let mpath = dir.join("manifest.json");
    let text = std::fs::read_to_string(&mpath).map_err(|e| io_err(&mpath, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| DatasetError::Parse(e.to_string()))?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(DatasetError::Parse(format!(
            "unsupported manifest schema {}",
            manifest.schema_version
        )));
    }
    let mut counts = vec![0usize; manifest.counts.len()];
    for r in &manifest.records {
        verify_file(dir, &r.human_ref)?;
        verify_file(dir, &r.object_ref)?;
        verify_file(dir, &r.gt_image)?;
        verify_file(dir, &r.masks)?;
        if let Some(bg) = &r.background {
            verify_file(dir, bg)?;
        }
        if r.category_id >= counts.len() {
            return Err(DatasetError::BadRecord {
                id: r.id,
                reason: format!("category id {} out of range", r.category_id),
            });
        }
        counts[r.category_id] += 1;
        if r.background.is_some() != r.bbox.is_some() {
            return Err(DatasetError::BadRecord {
                id: r.id,
                reason: "background and bbox must be jointly present".into(),
            });
        }
    }
    if counts != manifest.counts {
        return Err(DatasetError::Parse(format!(
            "declared counts {:?} disagree with records {:?}",
            manifest.counts, counts
        )));
    }
    Ok(manifest)
}

/// Materialize one record.
pub fn load_sample(dir: &Path, r: &ManifestRecord) -> Result<HOISample, DatasetError> {
    let human_ref = ImageRgb::load_png(&verify_file(dir, &r.human_ref)?)?;
    let object_ref = ImageRgb::load_png(&verify_file(dir, &r.object_ref)?)?;
    let gt_image = ImageRgb::load_png(&verify_file(dir, &r.gt_image)?)?;
    let (mask_human, mask_object) = Mask::load_pair_png(&verify_file(dir, &r.masks)?)?;
    let background = match &r.background {
        Some(bg) => Some(ImageRgb::load_png(&verify_file(dir, bg)?)?),
        None => None,
    };
    Ok(HOISample {
        human_ref,
        object_ref,
        prompt: r.prompt.clone(),
        category_id: r.category_id,
        gt_image,
        mask_human,
        mask_object,
        background,
        bbox: r.bbox,
        source: r.source,
        scene: r.scene.clone(),
        ref_pose: r.ref_pose,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::build::{build_image_adapted_sample, build_split};

    fn tmpdir(tag: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("hoigen_manifest_{tag}"));
        let _ = std::fs::remove_dir_all(&d);
        std::fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn roundtrip_bitwise() {
        let cfg = RuleConfig::builtin();
        let dir = tmpdir("rt");
        let samples = build_split(21, Split::Train, 2, cfg).unwrap();
        assert_eq!(samples.len(), 2 * cfg.k());
        let manifest = write_manifest(&samples, &dir, Split::Train, 21, cfg).unwrap();
        let loaded = load_manifest(&dir).unwrap();
        assert_eq!(manifest, loaded);
        for (rec, orig) in loaded.records.iter().zip(&samples) {
            let s = load_sample(&dir, rec).unwrap();
            assert_eq!(&s, orig, "record {} not bit-identical", rec.id);
        }
        // Counts agree with a recount.
        let mut counts = vec![0usize; cfg.k()];
        for r in &loaded.records {
            counts[r.category_id] += 1;
        }
        assert_eq!(counts, loaded.counts);
    }

    #[test]
    fn missing_file_and_corruption_detected() {
        let cfg = RuleConfig::builtin();
        let dir = tmpdir("err");
        let hold = cfg.by_verb("hold").unwrap();
        let samples = vec![build_image_adapted_sample(2, hold, Split::Train, cfg).unwrap()];
        write_manifest(&samples, &dir, Split::Train, 2, cfg).unwrap();

        let gt = dir.join("images/000000_gt.png");
        let bytes = std::fs::read(&gt).unwrap();
        std::fs::remove_file(&gt).unwrap();
        match load_manifest(&dir) {
            Err(DatasetError::MissingFile(p)) => assert!(p.contains("000000_gt.png")),
            other => panic!("expected MissingFile, got {other:?}"),
        }

        // Restore but corrupt: checksum must catch it.
        let mut corrupted = bytes.clone();
        let last = corrupted.len() - 20;
        corrupted[last] ^= 0xff;
        std::fs::write(&gt, &corrupted).unwrap();
        assert!(matches!(
            load_manifest(&dir),
            Err(DatasetError::ChecksumMismatch(_))
        ));
        std::fs::write(&gt, &bytes).unwrap();
        assert!(load_manifest(&dir).is_ok());
    }
}
