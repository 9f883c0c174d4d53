mod data;
mod eval;
mod fit;
mod serve;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use hypcbm::activation::{build_matrix, kernel_registry, ActivationMatrix, BuildOptions, ImageSet, KernelParams};
use hypcbm::bank::{load_bank, ChildRule, ConceptBank, HierarchyPairs};
use hypcbm::calibration::ScalingLaw;
use hypcbm::head::SparseHead;
use hypcbm::io::read_json;
use hypcbm::synth::GroundTruth;

use crate::args::{Command, Mode, PropagationArgs, Rule};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::RunContext;

pub fn dispatch(command: &Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Validate(a) => data::validate(a, cfg),
        Command::Filter(a) => data::filter(a, cfg),
        Command::Activate(a) => data::activate(a, cfg),
        Command::Synth(a) => data::synth(a, cfg),
        Command::Train(a) => fit::train(a, cfg),
        Command::Anec(a) => fit::anec(a, cfg),
        Command::CalibrateEta(a) => fit::calibrate_eta(a, cfg),
        Command::FitLaw(a) => fit::fit_law(a, cfg),
        Command::Consistency(a) => eval::consistency(a, cfg),
        Command::Stability(a) => eval::stability(a, cfg),
        Command::Intervene(a) => eval::intervene(a, cfg),
        Command::Serve(a) => serve::serve(a, cfg),
    }
}

/// Containers carry their manifest as a sibling `.json`.
pub(crate) fn manifest_of(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub(crate) fn bank(cfg: &RunConfig, ctx: &mut RunContext) -> Result<ConceptBank> {
    let path = ctx.input(cfg.bank()?)?;
    let manifest = manifest_of(path);
    ctx.input(&manifest)?;
    let mut bank = load_bank(path, &manifest, None)?;
    if let Some(c) = cfg.curvature {
        check_curvature(c, bank.curvature().get(), path)?;
    }
    if cfg.tau.is_some() || cfg.cone_k.is_some() {
        bank = bank.reparameterized(
            cfg.tau.unwrap_or(bank.tau()),
            cfg.cone_k.unwrap_or(bank.cone_k()),
            *bank.policy(),
        )?;
    }
    Ok(bank)
}

fn check_curvature(expected: f64, got: f64, path: &Path) -> Result<()> {
    if (expected - got).abs() > 1e-12 * expected.abs().max(1.0) {
        return Err(CliError::Invalid(format!(
            "{} has curvature {got}, expected {expected}",
            path.display()
        )));
    }
    Ok(())
}

pub(crate) fn images(path: &Path, bank: &ConceptBank, ctx: &mut RunContext) -> Result<ImageSet> {
    ctx.input(path)?;
    let manifest = manifest_of(path);
    ctx.input(&manifest)?;
    let set = ImageSet::load(path, &manifest, None)?;
    check_curvature(bank.curvature().get(), set.curvature.get(), path)?;
    Ok(set)
}

pub(crate) fn labels(set: &ImageSet, what: &str) -> Result<Vec<usize>> {
    set.labels
        .clone()
        .ok_or_else(|| CliError::Invalid(format!("{what} images carry no labels")))
}

pub(crate) fn head(cfg: &RunConfig, bank: &ConceptBank, ctx: &mut RunContext) -> Result<SparseHead> {
    let path = ctx.input(cfg.head()?)?;
    let head = SparseHead::read(path)?;
    let hash = bank.content_hash();
    if head.bank_hash != hash {
        return Err(CliError::Invalid(format!(
            "head {} was trained on bank {}, but the loaded bank hashes to {hash}",
            path.display(),
            head.bank_hash
        )));
    }
    Ok(head)
}

pub(crate) fn matrix(set: &ImageSet, bank: &ConceptBank, mode: Mode, cfg: &RunConfig) -> Result<ActivationMatrix> {
    let kernel = kernel_registry().create(
        mode.kernel_name(),
        &KernelParams {
            eta_img: cfg.eta_img(),
        },
    )?;
    let opts = BuildOptions {
        batch: cfg.batch(),
        ..Default::default()
    };
    Ok(build_matrix(set, bank, kernel.as_ref(), opts)?)
}

pub(crate) fn hierarchy(cfg: &RunConfig, bank: &ConceptBank, ctx: &mut RunContext) -> Result<HierarchyPairs> {
    let path = ctx.input(cfg.hierarchy()?)?;
    Ok(HierarchyPairs::load(path, bank)?)
}

/// Every (ancestor, descendant) pair reachable through the direct edges.
pub(crate) fn transitive(pairs: &HierarchyPairs, bank: &ConceptBank) -> Result<HierarchyPairs> {
    let mut children: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(p, c) in &pairs.pairs {
        children.entry(p).or_default().push(c);
    }
    let mut out = BTreeSet::new();
    for &start in children.keys() {
        let mut stack = children[&start].clone();
        let mut seen = BTreeSet::new();
        while let Some(d) = stack.pop() {
            if d == start || !seen.insert(d) {
                continue;
            }
            out.insert((start, d));
            if let Some(next) = children.get(&d) {
                stack.extend(next);
            }
        }
    }
    Ok(HierarchyPairs::new(
        out.into_iter().collect(),
        format!("{} (transitive)", pairs.source),
        bank,
    )?)
}

pub(crate) fn child_rule(args: &PropagationArgs, ctx: &mut RunContext) -> Result<ChildRule> {
    Ok(match args.rule {
        Rule::Constant => ChildRule::Constant {
            eta_text: args.eta_text,
        },
        Rule::Law => match &args.law {
            Some(p) => ChildRule::Law(read_json::<ScalingLaw>(ctx.input(p)?)?),
            None => ChildRule::Law(ScalingLaw::paper()),
        },
    })
}

/// Ancestor chains by sample id, merged over both splits.
pub(crate) fn ground_truth_chains(path: &Path, ctx: &mut RunContext) -> Result<BTreeMap<String, Vec<String>>> {
    let gt: GroundTruth = read_json(ctx.input(path)?)?;
    let mut chains = gt.train;
    chains.extend(gt.test);
    Ok(chains)
}

pub(crate) fn ids_of(names: &[String], bank: &ConceptBank) -> Result<Vec<usize>> {
    Ok(names.iter().map(|n| bank.id_of(n)).collect::<Result<_, _>>()?)
}
