use std::path::Path;

use hypcbm::bank::{dedup, norm_filter, points_from_container, FilterOutcome, Removal};
use hypcbm::calibration::{aperture_diagnostics, ApertureReport};
use hypcbm::io::{read_json, write_hierarchy_tsv, EmbeddingContainer};
use hypcbm::synth::{generate, SynthFiles, SynthSpec};
use serde::Serialize;

use super::{bank, head, hierarchy, images, matrix};
use crate::args::{Activate, Filter, Synth, Validate};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::RunContext;

#[derive(Serialize)]
struct BankSummary {
    concepts: usize,
    dim: usize,
    curvature: f64,
    tau: f64,
    #[serde(rename = "K")]
    cone_k: f64,
    content_hash: String,
    min_norm: f64,
    max_norm: f64,
    below_tau: usize,
}

#[derive(Serialize)]
struct ImageSummary {
    path: String,
    samples: usize,
    labeled: bool,
    classes: usize,
}

#[derive(Serialize)]
struct ValidationReport {
    bank: BankSummary,
    aperture: Vec<ApertureReport>,
    images: Vec<ImageSummary>,
    hierarchy_pairs: Option<usize>,
    head_classes: Option<usize>,
}

pub fn validate(args: &Validate, cfg: &RunConfig) -> Result<()> {
    let mut ctx = RunContext::new(cfg.out()?)?;
    let bank = bank(cfg, &mut ctx)?;
    let norms: Vec<f64> = bank.concepts().iter().map(|c| c.norm()).collect();
    let summary = BankSummary {
        concepts: bank.len(),
        dim: bank.dim(),
        curvature: bank.curvature().get(),
        tau: bank.tau(),
        cone_k: bank.cone_k(),
        content_hash: bank.content_hash(),
        min_norm: norms.iter().copied().fold(f64::INFINITY, f64::min),
        max_norm: norms.iter().copied().fold(0.0, f64::max),
        below_tau: norms.iter().filter(|&&n| n < bank.tau()).count(),
    };
    let mut image_reports = Vec::new();
    for path in [&cfg.images, &cfg.train_images, &cfg.test_images].into_iter().flatten() {
        let set = images(path, &bank, &mut ctx)?;
        if !set.is_empty() && set.points[0].dim() != bank.dim() {
            return Err(CliError::Invalid(format!(
                "{} has dimension {}, bank has {}",
                path.display(),
                set.points[0].dim(),
                bank.dim()
            )));
        }
        image_reports.push(ImageSummary {
            path: path.display().to_string(),
            samples: set.len(),
            labeled: set.labels.is_some(),
            classes: set.num_classes(),
        });
    }
    let hierarchy_pairs = match cfg.hierarchy {
        Some(_) => Some(hierarchy(cfg, &bank, &mut ctx)?.len()),
        None => None,
    };
    let head_classes = match cfg.head {
        Some(_) => Some(head(cfg, &bank, &mut ctx)?.num_classes()),
        None => None,
    };
    let report = ValidationReport {
        bank: summary,
        aperture: aperture_diagnostics(&bank, &args.k_values),
        images: image_reports,
        hierarchy_pairs,
        head_classes,
    };
    ctx.json("validation.json", &report)?;
    ctx.finish("validate", cfg, args)
}

#[derive(Serialize)]
struct FilterReport {
    input_concepts: usize,
    kept: usize,
    norm_removed: Vec<Removal>,
    dedup_removed: Vec<Removal>,
}

pub fn filter(args: &Filter, cfg: &RunConfig) -> Result<()> {
    let mut ctx = RunContext::new(cfg.out()?)?;
    let original = bank(cfg, &mut ctx)?;
    let tau = cfg.tau.unwrap_or(original.tau());
    let by_norm = norm_filter(&original, tau)?;
    let by_sim = if args.no_dedup {
        FilterOutcome {
            id_map: (0..by_norm.bank.len()).map(Some).collect(),
            bank: by_norm.bank.clone(),
            removed: Vec::new(),
        }
    } else {
        let classes = match &args.classes {
            Some(p) => {
                let container = EmbeddingContainer::read(ctx.input(p)?)?;
                Some(points_from_container(&container, container.space, p)?.0)
            }
            None => None,
        };
        dedup(&by_norm.bank, classes.as_deref(), args.class_sim, args.concept_sim)?
    };
    // Dedup ids refer to the norm-filtered bank; report them in original ids.
    let survivors: Vec<usize> = (0..original.len()).filter(|&i| by_norm.id_map[i].is_some()).collect();
    let dedup_removed = by_sim
        .removed
        .iter()
        .map(|r| Removal {
            id: survivors[r.id],
            ..r.clone()
        })
        .collect();
    let final_bank = &by_sim.bank;
    final_bank.save(&ctx.path("bank.hcbe"), &ctx.path("bank.json"))?;
    if cfg.hierarchy.is_some() {
        let pairs = hierarchy(cfg, &original, &mut ctx)?;
        let composed: Vec<Option<usize>> = by_norm
            .id_map
            .iter()
            .map(|m| m.and_then(|mid| by_sim.id_map[mid]))
            .collect();
        let kept = pairs.remap(&composed);
        write_hierarchy_tsv(&ctx.path("hierarchy.tsv"), &kept.to_names(final_bank))?;
    }
    ctx.json(
        "filter_report.json",
        &FilterReport {
            input_concepts: original.len(),
            kept: final_bank.len(),
            norm_removed: by_norm.removed,
            dedup_removed,
        },
    )?;
    ctx.finish("filter", cfg, args)
}

pub fn activate(args: &Activate, cfg: &RunConfig) -> Result<()> {
    let mut ctx = RunContext::new(cfg.out()?)?;
    let bank = bank(cfg, &mut ctx)?;
    let set = images(cfg.images()?, &bank, &mut ctx)?;
    let acts = matrix(&set, &bank, args.mode, cfg)?;
    ctx.bytes("activations.hcam", &acts.to_bytes()?)?;
    ctx.json("activation_stats.json", &acts.stats())?;
    ctx.finish("activate", cfg, args)
}

fn read_spec(path: &Path) -> Result<SynthSpec> {
    let bad = |reason: String| CliError::Config {
        path: path.to_path_buf(),
        reason,
    };
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(read_json(path)?);
    }
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| bad(e.to_string().replace('\n', " ")))
}

pub fn synth(args: &Synth, cfg: &RunConfig) -> Result<()> {
    let mut ctx = RunContext::new(cfg.out()?)?;
    let mut spec = match &args.spec {
        Some(p) => read_spec(ctx.input(p)?)?,
        None => SynthSpec::default(),
    };
    macro_rules! set {
        ($($field:ident),+) => { $(if let Some(v) = args.$field.clone() { spec.$field = v; })+ };
    }
    set!(depth, branching, dim, norms, image_norm, images_per_leaf, test_images_per_leaf, noise_scale);
    if let Some(c) = cfg.curvature {
        spec.curvature = c;
    }
    if let Some(k) = cfg.cone_k {
        spec.cone_k = k;
    }
    if let Some(s) = cfg.seed {
        spec.seed = s;
    }
    let data = generate(&spec)?;
    let files = data.write_all(&ctx.out)?;
    let SynthFiles {
        bank,
        bank_manifest,
        hierarchy,
        train,
        train_manifest,
        test,
        test_manifest,
        ground_truth,
        spec: spec_file,
    } = files;
    for p in [bank, bank_manifest, hierarchy, train, train_manifest, test, test_manifest, ground_truth, spec_file] {
        if let Some(name) = p.file_name().and_then(|n| n.to_str()) {
            ctx.path(name);
        }
    }
    log::info!(
        "generated {} concepts, {} train and {} test images ({} redrawn)",
        data.bank.len(),
        data.train.len(),
        data.test.len(),
        data.rejected_images
    );
    ctx.finish("synth", cfg, args)
}
