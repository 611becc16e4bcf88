//! Experiment orchestration: configs, run directories, CLI commands, the
//! smoke pipeline and the acceptance suite.

pub mod accept;
pub mod commands;
pub mod config;
pub mod smoke;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::datasets::load_sample;
use crate::mgig::{generate_image, GenerateInputs};
use crate::raster::{BoxPx, ImageRgb, Mask};
use crate::rng::mix;
use crate::synthworld::sample::Split;
use crate::synthworld::RuleConfig;

pub use accept::{accept_suite, AcceptanceOutcome, CriterionOutcome};
pub use commands::{
    compare_cmd, evaluate_cmd, hash_dir, load_iamg, load_mgig, load_split, synth_data,
    train_iamg_cmd, train_mgig_cmd, EvalDetails,
};
pub use config::{ExperimentConfig, RunPaths, OUT_ROOT_ENV};
pub use smoke::{pipeline_smoke, SmokeOutcome};

#[derive(Debug, Error)]
pub enum AppError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("{0}")]
    Runtime(String),
}

impl AppError {
    pub fn runtime(e: impl std::fmt::Display) -> AppError {
        AppError::Runtime(e.to_string())
    }

    /// Process exit code contract: 2 config, 3 missing checkpoint, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::InvalidConfig(_) => 2,
            AppError::MissingCheckpoint(_) => 3,
            AppError::Runtime(_) => 1,
        }
    }
}

/// Parsed CLI invocation; the thin binary maps clap output onto this.
#[derive(Debug, Clone)]
pub enum Command {
    SynthData,
    TrainIamg,
    TrainMgig,
    Generate(GenerateOpts),
    Evaluate,
    RetrieveMask { query: String },
    CompareReports { ours: PathBuf, baseline: PathBuf },
    Smoke,
    Accept,
}

#[derive(Debug, Clone, Default)]
pub struct GenerateOpts {
    pub category: Option<String>,
    pub count: usize,
    pub record: Option<usize>,
    pub bg: Option<PathBuf>,
    pub bbox: Option<BoxPx>,
    pub human_ref: Option<PathBuf>,
    pub object_ref: Option<PathBuf>,
}

/// Machine-readable error record written next to the artifacts on failure.
fn write_error_record(paths: &RunPaths, command: &str, err: &AppError) {
    let record = serde_json::json!({
        "command": command,
        "error": err.to_string(),
        "exit_code": err.exit_code(),
    });
    if std::fs::create_dir_all(&paths.root).is_ok() {
        let _ = std::fs::write(
            paths.root.join("error.json"),
            serde_json::to_string_pretty(&record).unwrap_or_default(),
        );
    }
}

/// Run one command against a config; returns the process exit code.
pub fn cli_run(
    command: Command,
    config_path: Option<&Path>,
    seed_override: Option<u64>,
    out_override: Option<&Path>,
) -> i32 {
    let mut cfg = match config_path {
        Some(p) => match ExperimentConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return e.exit_code();
            }
        },
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    let paths = RunPaths::resolve(&cfg, out_override);
    let name = command_name(&command);
    match dispatch(command, &cfg, &paths) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            write_error_record(&paths, name, &e);
            e.exit_code()
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::SynthData => "synth-data",
        Command::TrainIamg => "train-iamg",
        Command::TrainMgig => "train-mgig",
        Command::Generate(_) => "generate",
        Command::Evaluate => "evaluate",
        Command::RetrieveMask { .. } => "retrieve-mask",
        Command::CompareReports { .. } => "compare-reports",
        Command::Smoke => "smoke",
        Command::Accept => "accept",
    }
}

fn dispatch(command: Command, cfg: &ExperimentConfig, paths: &RunPaths) -> Result<(), AppError> {
    match command {
        Command::SynthData => {
            paths.prepare(cfg)?;
            let (train, test) = synth_data(cfg, paths)?;
            println!(
                "wrote {} train and {} test records under {}",
                train.records.len(),
                test.records.len(),
                paths.root.display()
            );
            Ok(())
        }
        Command::TrainIamg => {
            paths.prepare(cfg)?;
            let trained = train_iamg_cmd(cfg, paths)?;
            let (head, tail) =
                crate::iamg::train::windowed_loss(&trained.meta.loss_history, 100);
            println!(
                "mask model trained: {} steps, loss {head:.4} -> {tail:.4}, checkpoint {}",
                trained.meta.train.steps,
                paths.iamg_checkpoint().display()
            );
            Ok(())
        }
        Command::TrainMgig => {
            paths.prepare(cfg)?;
            let trained = train_mgig_cmd(cfg, paths)?;
            let (h1, t1) = crate::iamg::train::windowed_loss(&trained.meta.stage1_loss, 100);
            println!(
                "image model trained: s1 {} + s2 {} steps, stage-1 loss {h1:.4} -> {t1:.4}, checkpoint {}",
                trained.meta.train.stage1_steps,
                trained.meta.train.stage2_steps,
                paths.mgig_checkpoint().display()
            );
            Ok(())
        }
        Command::Generate(opts) => run_generate(cfg, paths, opts),
        Command::Evaluate => {
            let (ours, baseline, details) = evaluate_cmd(cfg, paths)?;
            ours.save(&paths.report_path()).map_err(AppError::runtime)?;
            baseline
                .save(&paths.baseline_report_path())
                .map_err(AppError::runtime)?;
            let dpath = paths.root.join("eval_details.json");
            std::fs::write(
                &dpath,
                serde_json::to_string_pretty(&details).unwrap_or_default(),
            )
            .map_err(|e| AppError::Runtime(e.to_string()))?;
            println!(
                "report: identity=({:.3},{:.3},{:.3}) holistic={:.3} kl={:.4} box={:.3} -> {}",
                ours.identity_human,
                ours.identity_object,
                ours.identity_pair,
                ours.holistic_accuracy,
                ours.kl_distance,
                ours.box_compliance,
                paths.report_path().display()
            );
            Ok(())
        }
        Command::RetrieveMask { query } => {
            let rules = RuleConfig::builtin();
            let manifest = load_split(paths, Split::Train)?;
            let bank = crate::iamg::build_mask_bank(
                &paths.data_dir(Split::Train),
                &manifest,
                rules,
            )
            .map_err(AppError::runtime)?;
            let entry = crate::iamg::retrieve_mask(&bank, &query).map_err(AppError::runtime)?;
            let out = paths.samples_dir().join("retrieved_mask.png");
            std::fs::create_dir_all(paths.samples_dir())
                .map_err(|e| AppError::Runtime(e.to_string()))?;
            Mask::save_pair_png(&entry.mask_human, &entry.mask_object, &out)
                .map_err(AppError::runtime)?;
            println!(
                "query '{query}' -> \"{}\" (category {}), mask at {}",
                entry.description,
                entry.category_id,
                out.display()
            );
            Ok(())
        }
        Command::CompareReports { ours, baseline } => {
            let checks = compare_cmd(&ours, &baseline)?;
            let mut all = true;
            for c in &checks {
                println!(
                    "[{}] {:<32} ours={:.4} reference={:.4}",
                    if c.pass { "pass" } else { "FAIL" },
                    c.name,
                    c.ours,
                    c.reference
                );
                all &= c.pass;
            }
            if all {
                Ok(())
            } else {
                Err(AppError::Runtime("ordering checks failed".into()))
            }
        }
        Command::Smoke => {
            let outcome = pipeline_smoke(cfg.seed, paths)?;
            for (name, ok) in &outcome.checks {
                println!("[{}] {name}", if *ok { "pass" } else { "FAIL" });
            }
            println!("artifact hash {}", outcome.artifact_hash);
            if outcome.ok() {
                Ok(())
            } else {
                Err(AppError::Runtime("smoke checks failed".into()))
            }
        }
        Command::Accept => {
            let outcome = accept_suite(cfg, paths)?;
            if outcome.all_pass {
                Ok(())
            } else {
                Err(AppError::Runtime("acceptance criteria failed".into()))
            }
        }
    }
}

fn run_generate(cfg: &ExperimentConfig, paths: &RunPaths, opts: GenerateOpts) -> Result<(), AppError> {
    let rules = RuleConfig::builtin();
    let mut iamg = load_iamg(paths)?;
    let mut mgig = load_mgig(paths)?;
    let bg = match (&opts.bg, &opts.bbox) {
        (Some(p), Some(b)) => {
            let img = ImageRgb::load_png(p).map_err(AppError::runtime)?;
            Some((img, *b))
        }
        (None, None) => None,
        _ => {
            return Err(AppError::InvalidConfig(
                "--bg and --box must be given together".into(),
            ))
        }
    };
    let count = opts.count.max(1);
    let sdir = paths.samples_dir();
    std::fs::create_dir_all(&sdir).map_err(|e| AppError::Runtime(e.to_string()))?;

    // Reference images: explicit paths, or a test-split record.
    let (refs, record_category): ((ImageRgb, ImageRgb), Option<usize>) =
        match (&opts.human_ref, &opts.object_ref) {
            (Some(h), Some(o)) => (
                (
                    ImageRgb::load_png(h).map_err(AppError::runtime)?,
                    ImageRgb::load_png(o).map_err(AppError::runtime)?,
                ),
                None,
            ),
            (None, None) => {
                let manifest = load_split(paths, Split::Test)?;
                let idx = opts
                    .record
                    .unwrap_or(cfg.seed as usize % manifest.records.len().max(1));
                let rec = manifest.records.get(idx).ok_or_else(|| {
                    AppError::InvalidConfig(format!("record index {idx} out of range"))
                })?;
                let s = load_sample(&paths.data_dir(Split::Test), rec)
                    .map_err(AppError::runtime)?;
                ((s.human_ref, s.object_ref), Some(rec.category_id))
            }
            _ => {
                return Err(AppError::InvalidConfig(
                    "--human-ref and --object-ref must be given together".into(),
                ))
            }
        };
    let category_id = match &opts.category {
        Some(text) => crate::iamg::parse_interaction(text, rules)
            .map_err(|e| AppError::InvalidConfig(e.to_string()))?,
        None => record_category.ok_or_else(|| {
            AppError::InvalidConfig("--category required with explicit references".into())
        })?,
    };

    for i in 0..count {
        let seed = mix(cfg.seed ^ 0x6765_6e ^ (i as u64) << 8);
        let out = generate_image(
            Some(&mut iamg),
            &mut mgig,
            GenerateInputs {
                human_ref: &refs.0,
                object_ref: &refs.1,
                category_id,
                bg_box: bg.as_ref().map(|(img, b)| (img, *b)),
                mask: None,
                seed,
            },
        )
        .map_err(AppError::runtime)?;
        let img_path = sdir.join(format!("gen_{i:03}.png"));
        out.image.save_png(&img_path).map_err(AppError::runtime)?;
        Mask::save_pair_png(
            &out.mask_human,
            &out.mask_object,
            &sdir.join(format!("gen_{i:03}_mask.png")),
        )
        .map_err(AppError::runtime)?;
        let sidecar = serde_json::json!({
            "seed": seed,
            "category_id": category_id,
            "verb": rules.category(category_id).map(|c| c.verb.clone()).unwrap_or_default(),
            "bg_conditioned": bg.is_some(),
            "bbox": bg.as_ref().map(|(_, b)| [b.x0, b.y0, b.x1, b.y1]),
            "iamg_checkpoint": paths.iamg_checkpoint().display().to_string(),
            "mgig_checkpoint": paths.mgig_checkpoint().display().to_string(),
        });
        std::fs::write(
            sdir.join(format!("gen_{i:03}.json")),
            serde_json::to_string_pretty(&sidecar).unwrap_or_default(),
        )
        .map_err(|e| AppError::Runtime(e.to_string()))?;
        println!("wrote {}", img_path.display());
    }
    Ok(())
}
