use std::collections::BTreeSet;

use hypcbm::activation::binarize_sparsity_matched;
use hypcbm::intervention::{response_curve, write_audit_jsonl, InterventionConfig, InterventionSample, PropagationIndex};
use hypcbm::metrics::{accuracy, hierarchical_consistency, jaccard_stability, ConsistencyReport};
use serde::Serialize;

use super::{bank, child_rule, ground_truth_chains, head, hierarchy, ids_of, images, labels, matrix, transitive};
use crate::args::{Consistency, Intervene, Mode, Stability};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::{num, RunContext};

#[derive(Serialize)]
struct ConsistencyOutput {
    hypcbm: ConsistencyReport,
    cosine: Option<ConsistencyReport>,
}

pub fn consistency(args: &Consistency, cfg: &RunConfig) -> Result<()> {
    let mut ctx = RunContext::new(cfg.out()?)?;
    let bank = bank(cfg, &mut ctx)?;
    let set = images(cfg.images()?, &bank, &mut ctx)?;
    let mut pairs = hierarchy(cfg, &bank, &mut ctx)?;
    if args.transitive {
        pairs = transitive(&pairs, &bank)?;
    }
    let eta = cfg.eta_img();
    let hyp = matrix(&set, &bank, Mode::Entailment, cfg)?;
    let hyp_sets = hyp.active_sets();
    let cos_sets = if args.no_baseline {
        None
    } else {
        let cos = matrix(&set, &bank, Mode::Cosine, cfg)?;
        Some(binarize_sparsity_matched(&cos, &hyp)?)
    };
    let mut rows = Vec::with_capacity(set.len());
    for (i, sid) in set.sample_ids.iter().enumerate() {
        let h = hierarchical_consistency(std::slice::from_ref(&hyp_sets[i]), &pairs, eta);
        let mut row = vec![
            sid.clone(),
            hyp_sets[i].len().to_string(),
            h.child_activations.to_string(),
            h.violations.to_string(),
        ];
        if let Some(cs) = &cos_sets {
            let c = hierarchical_consistency(std::slice::from_ref(&cs[i]), &pairs, eta);
            row.push(c.child_activations.to_string());
            row.push(c.violations.to_string());
        }
        rows.push(row);
    }
    let mut header = vec!["sample_id", "active", "child_activations", "violations"];
    if cos_sets.is_some() {
        header.extend(["cosine_child_activations", "cosine_violations"]);
    }
    ctx.csv("consistency_per_sample.csv", &header, &rows)?;
    let out = ConsistencyOutput {
        hypcbm: hierarchical_consistency(&hyp_sets, &pairs, eta),
        cosine: cos_sets.map(|cs| hierarchical_consistency(&cs, &pairs, eta)),
    };
    ctx.json("consistency.json", &out)?;
    ctx.finish("consistency", cfg, args)
}

pub fn stability(args: &Stability, cfg: &RunConfig) -> Result<()> {
    let mut ctx = RunContext::new(cfg.out()?)?;
    let bank = bank(cfg, &mut ctx)?;
    let set = images(cfg.images()?, &bank, &mut ctx)?;
    let noisy = set.perturbed(args.sigma, cfg.seed())?;
    let clean = matrix(&set, &bank, Mode::Entailment, cfg)?;
    let pert = matrix(&noisy, &bank, Mode::Entailment, cfg)?;
    let mut report = jaccard_stability(
        &set.sample_ids,
        &clean.active_sets(),
        &noisy.sample_ids,
        &pert.active_sets(),
        args.sigma,
    )?;
    if cfg.head.is_some() {
        let head = head(cfg, &bank, &mut ctx)?;
        let y = labels(&set, "evaluation")?;
        report.clean_accuracy = Some(accuracy(&head.predict(&clean)?.labels, &y)?);
        report.perturbed_accuracy = Some(accuracy(&head.predict(&pert)?.labels, &y)?);
    }
    let rows: Vec<Vec<String>> = report
        .per_sample
        .iter()
        .map(|s| {
            vec![
                s.sample_id.clone(),
                num(s.jaccard),
                s.clean_size.to_string(),
                s.perturbed_size.to_string(),
            ]
        })
        .collect();
    ctx.csv(
        "stability_per_sample.csv",
        &["sample_id", "jaccard", "clean_active", "perturbed_active"],
        &rows,
    )?;
    ctx.json("stability.json", &report)?;
    ctx.finish("stability", cfg, args)
}

#[derive(Serialize)]
struct InterventionSummary {
    strategy: String,
    n_samples: usize,
    /// Largest `|mean_t - mean_0| / stderr_0` over the curve.
    max_standardized_change: f64,
    final_flip_rate: f64,
    final_cumulative_flip_rate: f64,
}

pub fn intervene(args: &Intervene, cfg: &RunConfig) -> Result<()> {
    let mut ctx = RunContext::new(cfg.out()?)?;
    let bank = bank(cfg, &mut ctx)?;
    let set = images(cfg.images()?, &bank, &mut ctx)?;
    let head = head(cfg, &bank, &mut ctx)?;
    let y = labels(&set, "evaluation")?;
    let acts = matrix(&set, &bank, Mode::Entailment, cfg)?;
    let pred = head.predict(&acts)?;
    let chains = match &args.ground_truth {
        Some(p) => Some(ground_truth_chains(p, &mut ctx)?),
        None => None,
    };
    let mut samples = Vec::new();
    for (i, &label) in y.iter().enumerate() {
        if pred.labels[i] == label {
            continue;
        }
        let sid = &set.sample_ids[i];
        let absent = match &chains {
            Some(map) => {
                let chain = map
                    .get(sid)
                    .ok_or_else(|| CliError::Invalid(format!("ground truth has no entry for sample `{sid}`")))?;
                let present: BTreeSet<usize> = ids_of(chain, &bank)?.into_iter().collect();
                Some((0..bank.len()).filter(|c| !present.contains(c)).collect())
            }
            None => None,
        };
        samples.push(InterventionSample {
            sample_id: sid.clone(),
            row: acts.dense_row(i),
            label,
            absent,
        });
    }
    log::info!("{} of {} samples are misclassified", samples.len(), set.len());
    let config = InterventionConfig {
        delta: args.delta,
        steps: args.steps,
        strategy: args.strategy.clone(),
        propagate: args.propagate,
        seed: cfg.seed(),
        reselect: !args.no_reselect,
    };
    let index = if args.propagate {
        Some(PropagationIndex::new(&bank, child_rule(&args.propagation, &mut ctx)?))
    } else {
        None
    };
    let (curve, audit) = response_curve(&samples, &head, &config, index.as_ref())?;
    curve.write_csv(&ctx.path("response_curve.csv"))?;
    write_audit_jsonl(&ctx.path("intervention_audit.jsonl"), &audit)?;
    let last = curve.steps.last().expect("curve includes step 0");
    ctx.json(
        "intervention.json",
        &InterventionSummary {
            strategy: curve.strategy.clone(),
            n_samples: curve.n_samples,
            max_standardized_change: curve.max_standardized_change(),
            final_flip_rate: last.flip_rate,
            final_cumulative_flip_rate: last.cumulative_flip_rate,
        },
    )?;
    ctx.finish("intervene", cfg, args)
}
