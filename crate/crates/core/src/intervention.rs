//! Test-time concept suppression, hierarchical propagation, target
//! selection strategies and intervention response curves.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{children_table, find_children, ChildRule, ConceptBank};
use crate::calibration::ScalingLaw;
use crate::error::{Error, Result};
use crate::head::{argmax, softmax, SparseHead};
use crate::io;
use crate::registry::Registry;

/// `a[id] <- max(0, a[id] - delta)`.
pub fn suppress(row: &[f64], concept_id: usize, delta: f64) -> Result<Vec<f64>> {
    let mut out = row.to_vec();
    suppress_in_place(&mut out, &[concept_id], delta)?;
    Ok(out)
}

fn suppress_in_place(row: &mut [f64], ids: &[usize], delta: f64) -> Result<()> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::param("delta", "must be finite and > 0"));
    }
    if let Some(&bad) = ids.iter().find(|&&id| id >= row.len()) {
        return Err(Error::UnknownConcept(bad));
    }
    for &id in ids {
        row[id] = (row[id] - delta).max(0.0);
    }
    Ok(())
}

/// Suppress `parent_id` and every concept it geometrically entails.
/// Returns the new row and the sorted affected ids.
pub fn suppress_with_propagation(
    row: &[f64],
    parent_id: usize,
    delta: f64,
    bank: &ConceptBank,
    law: &ScalingLaw,
) -> Result<(Vec<f64>, Vec<usize>)> {
    if row.len() != bank.len() {
        return Err(Error::DimensionMismatch {
            expected: bank.len(),
            got: row.len(),
        });
    }
    let mut affected = find_children(bank, parent_id, law)?;
    affected.push(parent_id);
    affected.sort_unstable();
    let mut out = row.to_vec();
    suppress_in_place(&mut out, &affected, delta)?;
    Ok((out, affected))
}

/// Precomputed children sets, so repeated interventions skip the geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationIndex {
    children: Vec<Vec<usize>>,
}

impl PropagationIndex {
    pub fn new(bank: &ConceptBank, rule: impl Into<ChildRule>) -> Self {
        PropagationIndex {
            children: children_table(bank, &rule.into()),
        }
    }

    pub fn children(&self, id: usize) -> Result<&[usize]> {
        self.children
            .get(id)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownConcept(id))
    }

    /// Sorted ids touched by an intervention on `id`.
    pub fn affected(&self, id: usize, propagate: bool) -> Result<Vec<usize>> {
        let mut out = if propagate { self.children(id)?.to_vec() } else { Vec::new() };
        if id >= self.children.len() {
            return Err(Error::UnknownConcept(id));
        }
        out.push(id);
        out.sort_unstable();
        Ok(out)
    }

    /// Apply one intervention in place and return the affected ids.
    pub fn apply(&self, row: &mut [f64], id: usize, delta: f64, propagate: bool) -> Result<Vec<usize>> {
        let affected = self.affected(id, propagate)?;
        suppress_in_place(row, &affected, delta)?;
        Ok(affected)
    }
}

pub struct SelectionContext<'a> {
    pub row: &'a [f64],
    pub head: &'a SparseHead,
    pub predicted_class: usize,
    pub absent: Option<&'a BTreeSet<usize>>,
    pub rng: &'a mut ChaCha8Rng,
}

impl SelectionContext<'_> {
    fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.row.iter().enumerate().filter(|(_, &a)| a > 0.0).map(|(i, _)| i)
    }

    fn best_contributor(&self, allowed: impl Fn(usize) -> bool) -> Option<usize> {
        let w = self.head.class_weights(self.predicted_class);
        let mut best: Option<(usize, f64)> = None;
        for i in self.active().filter(|&i| allowed(i)) {
            let c = w[i] * self.row[i];
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((i, c));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Picks the next concept to suppress. `Ok(None)` means no candidate remains.
pub trait TargetSelector: Send + Sync {
    fn name(&self) -> &'static str;
    fn select(&self, ctx: &mut SelectionContext<'_>) -> Result<Option<usize>>;
}

/// Highest `W[pred, i] * a_i` among active concepts.
pub struct TopContributing;

impl TargetSelector for TopContributing {
    fn name(&self) -> &'static str {
        "top_contributing"
    }

    fn select(&self, ctx: &mut SelectionContext<'_>) -> Result<Option<usize>> {
        Ok(ctx.best_contributor(|_| true))
    }
}

/// Highest contributor among concepts known to be absent from the sample.
pub struct ManualOracle;

impl TargetSelector for ManualOracle {
    fn name(&self) -> &'static str {
        "manual_oracle"
    }

    fn select(&self, ctx: &mut SelectionContext<'_>) -> Result<Option<usize>> {
        let absent = ctx
            .absent
            .ok_or_else(|| Error::param("absent", "manual_oracle needs the ground-truth absent set"))?;
        Ok(ctx.best_contributor(|i| absent.contains(&i)))
    }
}

/// Uniform over active concepts.
pub struct RandomTarget;

impl TargetSelector for RandomTarget {
    fn name(&self) -> &'static str {
        "random"
    }

    fn select(&self, ctx: &mut SelectionContext<'_>) -> Result<Option<usize>> {
        let active: Vec<usize> = ctx.active().collect();
        if active.is_empty() {
            return Ok(None);
        }
        let k = ctx.rng.gen_range(0..active.len());
        Ok(Some(active[k]))
    }
}

pub type SelectorRegistry = Registry<dyn TargetSelector, ()>;

pub fn selector_registry() -> SelectorRegistry {
    let mut reg = SelectorRegistry::new("intervention strategy");
    reg.register("top_contributing", |_| Ok(Box::new(TopContributing) as Box<dyn TargetSelector>));
    reg.register("manual_oracle", |_| Ok(Box::new(ManualOracle) as Box<dyn TargetSelector>));
    reg.register("random", |_| Ok(Box::new(RandomTarget) as Box<dyn TargetSelector>));
    reg
}

/// One-shot target selection by strategy name.
pub fn select_target(
    row: &[f64],
    head: &SparseHead,
    predicted_class: usize,
    strategy: &str,
    absent: Option<&BTreeSet<usize>>,
    seed: u64,
) -> Result<usize> {
    if row.len() != head.num_concepts() {
        return Err(Error::DimensionMismatch {
            expected: head.num_concepts(),
            got: row.len(),
        });
    }
    if predicted_class >= head.num_classes() {
        return Err(Error::param("predicted_class", "out of range"));
    }
    let selector = selector_registry().create(strategy, &())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = SelectionContext {
        row,
        head,
        predicted_class,
        absent,
        rng: &mut rng,
    };
    selector
        .select(&mut ctx)?
        .ok_or_else(|| Error::Infeasible("no eligible active concept to select".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionConfig {
    pub delta: f64,
    pub steps: usize,
    pub strategy: String,
    pub propagate: bool,
    pub seed: u64,
    /// Re-select a target at every step; otherwise keep deepening the first one.
    #[serde(default = "default_true")]
    pub reselect: bool,
}

fn default_true() -> bool {
    true
}

impl Default for InterventionConfig {
    fn default() -> Self {
        InterventionConfig {
            delta: 0.1,
            steps: 10,
            strategy: "top_contributing".into(),
            propagate: false,
            seed: 0,
            reselect: true,
        }
    }
}

impl InterventionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::param("delta", "must be finite and > 0"));
        }
        if self.steps == 0 {
            return Err(Error::param("steps", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterventionSample {
    pub sample_id: String,
    /// Dense clean activation row.
    pub row: Vec<f64>,
    pub label: usize,
    pub absent: Option<BTreeSet<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub mean_confidence: f64,
    pub stderr: f64,
    /// Fraction whose current prediction equals the ground truth.
    pub flip_rate: f64,
    /// Fraction that reached the ground truth at any step so far.
    pub cumulative_flip_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseCurve {
    pub strategy: String,
    pub delta: f64,
    pub propagate: bool,
    pub n_samples: usize,
    /// Step 0 is the unmodified state.
    pub steps: Vec<StepStats>,
}

impl ResponseCurve {
    pub fn to_csv_rows(&self) -> Vec<Vec<String>> {
        self.steps
            .iter()
            .map(|s| {
                vec![
                    s.step.to_string(),
                    format!("{:.9}", s.mean_confidence),
                    format!("{:.9}", s.stderr),
                    format!("{:.6}", s.flip_rate),
                    format!("{:.6}", s.cumulative_flip_rate),
                ]
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_csv(
            path,
            &["step", "mean_confidence", "stderr", "flip_rate", "cumulative_flip_rate"],
            &self.to_csv_rows(),
        )
    }

    /// Largest `|mean_t - mean_0| / stderr_t` over steps; zero stderr with a
    /// nonzero change counts as infinite.
    pub fn max_standardized_change(&self) -> f64 {
        let base = self.steps[0].mean_confidence;
        self.steps
            .iter()
            .skip(1)
            .map(|s| {
                let d = (s.mean_confidence - base).abs();
                if d == 0.0 {
                    0.0
                } else if s.stderr == 0.0 {
                    f64::INFINITY
                } else {
                    d / s.stderr
                }
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditStep {
    pub step: usize,
    pub concept_id: Option<usize>,
    pub affected: Vec<usize>,
    pub confidence: f64,
    pub prediction: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub sample_id: String,
    pub strategy: String,
    pub label: usize,
    pub original_prediction: usize,
    pub steps: Vec<AuditStep>,
}

pub fn write_audit_jsonl(path: &Path, records: &[AuditRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    io::write_bytes(path, &out)
}

fn run_sample(
    sample: &InterventionSample,
    index: usize,
    head: &SparseHead,
    config: &InterventionConfig,
    selector: &dyn TargetSelector,
    propagation: Option<&PropagationIndex>,
) -> Result<AuditRecord> {
    if sample.row.len() != head.num_concepts() {
        return Err(Error::DimensionMismatch {
            expected: head.num_concepts(),
            got: sample.row.len(),
        });
    }
    let logits = head.logits_dense(&sample.row)?;
    let wrong = argmax(&logits);
    if wrong == sample.label {
        return Err(Error::param(
            "samples",
            format!("sample {} is not misclassified", sample.sample_id),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let mut row = sample.row.clone();
    let mut steps = vec![AuditStep {
        step: 0,
        concept_id: None,
        affected: Vec::new(),
        confidence: softmax(&logits)[wrong],
        prediction: wrong,
    }];
    let mut fixed: Option<usize> = None;
    for step in 1..=config.steps {
        let target = match fixed {
            Some(t) if !config.reselect => Some(t),
            _ => {
                let mut ctx = SelectionContext {
                    row: &row,
                    head,
                    predicted_class: wrong,
                    absent: sample.absent.as_ref(),
                    rng: &mut rng,
                };
                selector.select(&mut ctx)?
            }
        };
        fixed = fixed.or(target);
        let affected = match target {
            None => Vec::new(),
            Some(t) => match (config.propagate, propagation) {
                (true, Some(index)) => index.apply(&mut row, t, config.delta, true)?,
                (true, None) => {
                    return Err(Error::param("propagate", "propagation requested without a children index"))
                }
                (false, _) => {
                    suppress_in_place(&mut row, &[t], config.delta)?;
                    vec![t]
                }
            },
        };
        let z = head.logits_dense(&row)?;
        steps.push(AuditStep {
            step,
            concept_id: target,
            affected,
            confidence: softmax(&z)[wrong],
            prediction: argmax(&z),
        });
    }
    Ok(AuditRecord {
        sample_id: sample.sample_id.clone(),
        strategy: selector.name().to_string(),
        label: sample.label,
        original_prediction: wrong,
        steps,
    })
}

/// Progressive suppression on misclassified samples, tracking the softmax
/// confidence of the originally predicted class.
pub fn response_curve(
    samples: &[InterventionSample],
    head: &SparseHead,
    config: &InterventionConfig,
    propagation: Option<&PropagationIndex>,
) -> Result<(ResponseCurve, Vec<AuditRecord>)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Degenerate("no misclassified samples to intervene on".into()));
    }
    let selector = selector_registry().create(&config.strategy, &())?;
    let records: Vec<AuditRecord> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| run_sample(s, i, head, config, selector.as_ref(), propagation))
        .collect::<Result<_>>()?;
    let n = records.len() as f64;
    let mut ever = vec![false; records.len()];
    let steps = (0..=config.steps)
        .map(|t| {
            let conf: Vec<f64> = records.iter().map(|r| r.steps[t].confidence).collect();
            let mean = conf.iter().sum::<f64>() / n;
            let stderr = if records.len() > 1 {
                let var = conf.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            } else {
                0.0
            };
            let mut flipped = 0usize;
            for (k, r) in records.iter().enumerate() {
                if r.steps[t].prediction == r.label {
                    flipped += 1;
                    ever[k] = true;
                }
            }
            StepStats {
                step: t,
                mean_confidence: mean,
                stderr,
                flip_rate: flipped as f64 / n,
                cumulative_flip_rate: ever.iter().filter(|&&e| e).count() as f64 / n,
            }
        })
        .collect();
    Ok((
        ResponseCurve {
            strategy: config.strategy.clone(),
            delta: config.delta,
            propagate: config.propagate,
            n_samples: records.len(),
            steps,
        },
        records,
    ))
}
