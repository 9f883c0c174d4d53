//! Hierarchical consistency, Jaccard concept stability and accuracy.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::activation::ActiveSet;
use crate::bank::HierarchyPairs;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// `None` when no child concept was ever active.
    pub consistency: Option<f64>,
    pub child_activations: usize,
    pub violations: usize,
    pub eta_img: f64,
    pub pair_source: String,
    /// Reported so that sparsity matching can be audited.
    pub mean_active: f64,
    pub samples: usize,
    pub pairs: usize,
}

/// `1 - #[child active and parent inactive] / #[child active]` over all
/// (sample, pair) combinations.
pub fn hierarchical_consistency(
    acts: &[ActiveSet],
    pairs: &HierarchyPairs,
    eta_img: f64,
) -> ConsistencyReport {
    let mut child_activations = 0;
    let mut violations = 0;
    let mut total_active = 0;
    for set in acts {
        total_active += set.len();
        let active: BTreeSet<usize> = set.iter().copied().collect();
        for &(parent, child) in &pairs.pairs {
            if active.contains(&child) {
                child_activations += 1;
                if !active.contains(&parent) {
                    violations += 1;
                }
            }
        }
    }
    ConsistencyReport {
        consistency: (child_activations > 0)
            .then(|| 1.0 - violations as f64 / child_activations as f64),
        child_activations,
        violations,
        eta_img,
        pair_source: pairs.source.clone(),
        mean_active: if acts.is_empty() { 0.0 } else { total_active as f64 / acts.len() as f64 },
        samples: acts.len(),
        pairs: pairs.len(),
    }
}

/// `|A n B| / |A u B|`, with two empty sets scoring 1.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let a: BTreeSet<usize> = a.iter().copied().collect();
    let b: BTreeSet<usize> = b.iter().copied().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStability {
    pub sample_id: String,
    pub jaccard: f64,
    pub clean_size: usize,
    pub perturbed_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub sigma: f64,
    pub mean_jaccard: f64,
    pub std_jaccard: f64,
    pub clean_accuracy: Option<f64>,
    pub perturbed_accuracy: Option<f64>,
    pub per_sample: Vec<SampleStability>,
}

/// Per-sample Jaccard between clean and perturbed active sets. Sample ids
/// must match position by position.
pub fn jaccard_stability(
    sample_ids: &[String],
    clean: &[ActiveSet],
    perturbed_ids: &[String],
    perturbed: &[ActiveSet],
    sigma: f64,
) -> Result<StabilityReport> {
    if sample_ids != perturbed_ids {
        return Err(Error::param("sample_ids", "clean and perturbed sample ids differ"));
    }
    if clean.len() != sample_ids.len() || perturbed.len() != sample_ids.len() {
        return Err(Error::DimensionMismatch {
            expected: sample_ids.len(),
            got: clean.len().min(perturbed.len()),
        });
    }
    if clean.is_empty() {
        return Err(Error::Degenerate("no samples".into()));
    }
    let per_sample: Vec<SampleStability> = sample_ids
        .iter()
        .zip(clean.iter().zip(perturbed))
        .map(|(id, (a, b))| SampleStability {
            sample_id: id.clone(),
            jaccard: jaccard(a, b),
            clean_size: a.len(),
            perturbed_size: b.len(),
        })
        .collect();
    let n = per_sample.len() as f64;
    let mean = per_sample.iter().map(|s| s.jaccard).sum::<f64>() / n;
    let var = per_sample.iter().map(|s| (s.jaccard - mean).powi(2)).sum::<f64>() / n;
    Ok(StabilityReport {
        sigma,
        mean_jaccard: mean,
        std_jaccard: var.sqrt(),
        clean_accuracy: None,
        perturbed_accuracy: None,
        per_sample,
    })
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Degenerate("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}
