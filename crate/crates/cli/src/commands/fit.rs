use std::collections::{BTreeMap, BTreeSet};

use hypcbm::activation::ImageSet;
use hypcbm::bank::ConceptBank;
use hypcbm::calibration::{
    entailment_ratios, fit_line, scaling_law_samples, sweep_select, youden_threshold, CalibrationResult, RatioSample,
    ThresholdGrid,
};
use hypcbm::head::{anec as anec_values, fit, lambda_sweep, AnecCurve, AnecValue, FitParams, SweepOptions};
use hypcbm::metrics::accuracy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{bank, ground_truth_chains, hierarchy, ids_of, images, labels, matrix};
use crate::args::{Anec, CalibrateEta, CalibrationMethod, FitLaw, Mode, Train};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::{num, RunContext};

fn class_count(sets: &[&ImageSet]) -> usize {
    sets.iter().map(|s| s.num_classes()).max().unwrap_or(0)
}

#[derive(Serialize)]
struct TrainReport {
    lambda: f64,
    alpha: f64,
    converged: bool,
    iterations: usize,
    kkt_residual: f64,
    objective: Option<f64>,
    effective_concepts: usize,
    train_accuracy: f64,
    test_accuracy: Option<f64>,
}

pub fn train(args: &Train, cfg: &RunConfig) -> Result<()> {
    let mut ctx = RunContext::new(cfg.out()?)?;
    let bank = bank(cfg, &mut ctx)?;
    let train = images(cfg.train_images()?, &bank, &mut ctx)?;
    let test = match &cfg.test_images {
        Some(p) => Some(images(p, &bank, &mut ctx)?),
        None => None,
    };
    let y = labels(&train, "training")?;
    let acts = matrix(&train, &bank, args.mode, cfg)?;
    let params = FitParams {
        alpha: cfg.alpha(),
        ..FitParams::with_lambda(cfg.lambda()?)
    };
    let classes = class_count(&[Some(&train), test.as_ref()].into_iter().flatten().collect::<Vec<_>>());
    let mut head = fit(&acts, &y, classes, &params)?;
    if let Some(names) = &train.class_names {
        head.class_names = names.clone();
    }
    let train_accuracy = accuracy(&head.predict(&acts)?.labels, &y)?;
    let test_accuracy = match &test {
        Some(t) => {
            let ta = matrix(t, &bank, args.mode, cfg)?;
            Some(accuracy(&head.predict(&ta)?.labels, &labels(t, "test")?)?)
        }
        None => None,
    };
    if !head.converged {
        log::warn!("solver stopped at max_iter with KKT residual {:e}", head.kkt_residual);
    }
    ctx.bytes("model.hcmh", &head.to_bytes()?)?;
    ctx.json(
        "train_report.json",
        &TrainReport {
            lambda: head.lambda,
            alpha: head.alpha,
            converged: head.converged,
            iterations: head.iterations,
            kkt_residual: head.kkt_residual,
            objective: head.objective,
            effective_concepts: head.num_effective(),
            train_accuracy,
            test_accuracy,
        },
    )?;
    ctx.finish("train", cfg, args)
}

#[derive(Serialize)]
struct AnecRow {
    method: &'static str,
    values: Vec<AnecValue>,
    shrinkage_violations: Vec<(f64, f64)>,
    curve: AnecCurve,
}

fn curve_rows(curve: &AnecCurve) -> Vec<Vec<String>> {
    curve
        .points
        .iter()
        .map(|p| vec![num(p.lambda), p.k.to_string(), num(p.accuracy)])
        .collect()
}

pub fn anec(args: &Anec, cfg: &RunConfig) -> Result<()> {
    let mut ctx = RunContext::new(cfg.out()?)?;
    let bank = bank(cfg, &mut ctx)?;
    let train = images(cfg.train_images()?, &bank, &mut ctx)?;
    let test = images(cfg.test_images()?, &bank, &mut ctx)?;
    let (ytr, yte) = (labels(&train, "training")?, labels(&test, "test")?);
    let classes = class_count(&[&train, &test]);
    let opts = SweepOptions {
        grid: cfg.lambda_grid()?,
        refine_rounds: args.refine_rounds,
        alpha: cfg.alpha(),
        ..SweepOptions::default()
    };
    let budgets = cfg.budgets();
    let mut methods = vec![("hypcbm", Mode::Entailment)];
    if args.cosine_baseline {
        methods.push(("cosine", Mode::Cosine));
    }
    let mut rows = Vec::new();
    for (method, mode) in methods {
        let a_tr = matrix(&train, &bank, mode, cfg)?;
        let a_te = matrix(&test, &bank, mode, cfg)?;
        let curve = lambda_sweep(&a_tr, &ytr, &a_te, &yte, classes, &opts)?;
        let name = if method == "hypcbm" {
            "anec_curve.csv".to_string()
        } else {
            format!("anec_curve_{method}.csv")
        };
        ctx.csv(&name, &["lambda", "K", "accuracy"], &curve_rows(&curve))?;
        rows.push(AnecRow {
            method,
            values: anec_values(&curve, &budgets)?,
            shrinkage_violations: curve.shrinkage_violations(),
            curve,
        });
    }
    let mut header = vec!["method".to_string()];
    header.extend(budgets.iter().map(|b| format!("ANEC-{b}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![r.method.to_string()];
            row.extend(r.values.iter().map(|v| num(v.accuracy)));
            row
        })
        .collect();
    ctx.csv("anec.csv", &header, &table)?;
    ctx.json("anec.json", &rows)?;
    ctx.finish("anec", cfg, args)
}

/// Positive (image, concept) pairs from a TSV or from generator ground truth.
fn positive_pairs(
    args: &CalibrateEta,
    set: &ImageSet,
    bank: &ConceptBank,
    ctx: &mut RunContext,
) -> Result<Vec<(usize, usize)>> {
    let mut named: BTreeMap<String, Vec<String>> = BTreeMap::new();
    match (&args.positives, &args.ground_truth) {
        (Some(p), None) => {
            let path = ctx.input(p)?;
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let (sample, concept) = line.split_once('\t').ok_or_else(|| {
                    CliError::Invalid(format!("{}:{}: expected `sample_id TAB concept`", path.display(), i + 1))
                })?;
                named.entry(sample.to_string()).or_default().push(concept.trim().to_string());
            }
        }
        (None, Some(gt)) => named = ground_truth_chains(gt, ctx)?,
        _ => {
            return Err(CliError::Invalid(
                "youden calibration needs exactly one of --positives or --ground-truth".into(),
            ))
        }
    }
    let mut out = Vec::new();
    for (i, sid) in set.sample_ids.iter().enumerate() {
        if let Some(concepts) = named.get(sid) {
            out.extend(ids_of(concepts, bank)?.into_iter().map(|c| (i, c)));
        }
    }
    if out.is_empty() {
        return Err(CliError::Invalid("no positive pair matches a loaded sample id".into()));
    }
    Ok(out)
}

/// Uniform random concepts outside each image's positive set.
fn negative_pairs(positives: &[(usize, usize)], m: usize, per: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let mut own: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &(i, c) in positives {
        own.entry(i).or_default().insert(c);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(positives.len() * per);
    for &(i, _) in positives {
        let taken = &own[&i];
        if taken.len() >= m {
            return Err(CliError::Invalid(format!("sample {i} is positive for every concept")));
        }
        for _ in 0..per {
            let c = loop {
                let c = rng.gen_range(0..m);
                if !taken.contains(&c) {
                    break c;
                }
            };
            out.push((i, c));
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct YoudenReport<'a> {
    method: &'static str,
    positives: usize,
    negatives: usize,
    #[serde(flatten)]
    result: &'a CalibrationResult,
}

#[derive(Serialize)]
struct SweepReport {
    method: &'static str,
    eta_img: f64,
    lambda: f64,
    scores: Vec<SweepScore>,
}

#[derive(Serialize)]
struct SweepScore {
    eta_img: f64,
    accuracy: f64,
}

pub fn calibrate_eta(args: &CalibrateEta, cfg: &RunConfig) -> Result<()> {
    let mut ctx = RunContext::new(cfg.out()?)?;
    let bank = bank(cfg, &mut ctx)?;
    match args.method {
        CalibrationMethod::Youden => {
            let set = images(cfg.images()?, &bank, &mut ctx)?;
            let pos = positive_pairs(args, &set, &bank, &mut ctx)?;
            let neg = negative_pairs(&pos, bank.len(), args.negatives_per_positive, cfg.seed())?;
            let pairs: Vec<_> = pos
                .iter()
                .chain(&neg)
                .map(|&(i, c)| (set.points[i].clone(), bank.concepts()[c].point.clone()))
                .collect();
            let ratios = entailment_ratios(&pairs, bank.cone_k(), bank.curvature(), bank.policy())?;
            let samples: Vec<RatioSample> = ratios
                .iter()
                .enumerate()
                .map(|(k, &ratio)| RatioSample {
                    ratio,
                    label: k < pos.len(),
                })
                .collect();
            let grid = ThresholdGrid {
                start: args.grid_start,
                stop: args.grid_stop,
                step: args.grid_step,
            };
            let result = youden_threshold(&samples, &grid)?;
            let roc: Vec<Vec<String>> = result
                .roc
                .iter()
                .map(|p| vec![num(p.threshold), num(p.tpr), num(p.fpr)])
                .collect();
            ctx.csv("roc.csv", &["threshold", "tpr", "fpr"], &roc)?;
            ctx.json(
                "calibration.json",
                &YoudenReport {
                    method: "youden",
                    positives: pos.len(),
                    negatives: neg.len(),
                    result: &result,
                },
            )?;
        }
        CalibrationMethod::Sweep => {
            let train = images(cfg.train_images()?, &bank, &mut ctx)?;
            let val = images(cfg.test_images()?, &bank, &mut ctx)?;
            let (ytr, yva) = (labels(&train, "training")?, labels(&val, "validation")?);
            let classes = class_count(&[&train, &val]);
            let lambda = cfg.lambda()?;
            let params = FitParams {
                alpha: cfg.alpha(),
                ..FitParams::with_lambda(lambda)
            };
            let (best, scored) = sweep_select(&args.candidates, |eta| {
                let c = RunConfig {
                    eta_img: Some(eta),
                    ..cfg.clone()
                };
                let a_tr = matrix(&train, &bank, Mode::Entailment, &c).map_err(into_core)?;
                let a_va = matrix(&val, &bank, Mode::Entailment, &c).map_err(into_core)?;
                let head = fit(&a_tr, &ytr, classes, &params)?;
                accuracy(&head.predict(&a_va)?.labels, &yva)
            })?;
            ctx.json(
                "calibration.json",
                &SweepReport {
                    method: "sweep",
                    eta_img: best,
                    lambda,
                    scores: scored
                        .into_iter()
                        .map(|(eta_img, accuracy)| SweepScore { eta_img, accuracy })
                        .collect(),
                },
            )?;
        }
    }
    ctx.finish("calibrate-eta", cfg, args)
}

fn into_core(e: CliError) -> hypcbm::Error {
    match e {
        CliError::Core(e) => e,
        other => hypcbm::Error::Degenerate(other.to_string()),
    }
}

pub fn fit_law(args: &FitLaw, cfg: &RunConfig) -> Result<()> {
    let mut ctx = RunContext::new(cfg.out()?)?;
    let bank = bank(cfg, &mut ctx)?;
    let pairs = hierarchy(cfg, &bank, &mut ctx)?;
    let samples = scaling_law_samples(&pairs, &bank, args.min_norm)?;
    let rows: Vec<Vec<String>> = samples.iter().map(|&(x, y)| vec![num(x), num(y)]).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
    let law = fit_line(&xs, &ys)?;
    ctx.csv("scaling_law_samples.csv", &["parent_norm", "eta_text"], &rows)?;
    ctx.json("scaling_law.json", &law)?;
    ctx.finish("fit-law", cfg, args)
}
