use hypcbm::activation::{activation_matrix, ActivationMatrix, ImageSet, DEFAULT_BATCH};
use hypcbm::bank::{ChildRule, ConceptBank};
use hypcbm::head::{argmax, softmax, SparseHead};
use hypcbm::intervention::PropagationIndex;
use serde::Serialize;

use crate::error::ServiceError;

/// Everything the service needs to answer requests. Immutable once built.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub bank: ConceptBank,
    pub head: SparseHead,
    pub images: ImageSet,
    pub eta_img: f64,
    pub rule: ChildRule,
}

pub struct Model {
    pub bundle: Bundle,
    pub acts: ActivationMatrix,
    pub propagation: PropagationIndex,
    pub class_names: Vec<String>,
}

impl Model {
    pub fn new(bundle: Bundle) -> Result<Self, ServiceError> {
        let bank_hash = bundle.bank.content_hash();
        if bundle.head.bank_hash != bank_hash {
            return Err(ServiceError::BundleMismatch {
                head: bundle.head.bank_hash.clone(),
                bank: bank_hash,
            });
        }
        if bundle.head.num_concepts() != bundle.bank.len() {
            return Err(ServiceError::BadBundle(format!(
                "head expects {} concepts, bank has {}",
                bundle.head.num_concepts(),
                bundle.bank.len()
            )));
        }
        let acts = activation_matrix(&bundle.images, &bundle.bank, bundle.eta_img, DEFAULT_BATCH)?;
        let propagation = PropagationIndex::new(&bundle.bank, bundle.rule);
        let k = bundle.head.num_classes();
        let class_names = if bundle.head.class_names.len() == k {
            bundle.head.class_names.clone()
        } else {
            match &bundle.images.class_names {
                Some(names) if names.len() == k => names.clone(),
                _ => (0..k).map(|i| format!("class_{i}")).collect(),
            }
        };
        Ok(Model {
            bundle,
            acts,
            propagation,
            class_names,
        })
    }

    pub fn sample_index(&self, sample_id: &str) -> Result<usize, ServiceError> {
        self.bundle
            .images
            .index_of(sample_id)
            .ok_or_else(|| ServiceError::NotFound(format!("sample `{sample_id}`")))
    }

    pub fn clean_row(&self, sample: usize) -> Vec<f64> {
        self.acts.dense_row(sample)
    }

    pub fn label(&self, sample: usize) -> Option<usize> {
        self.bundle.images.labels.as_ref().map(|l| l[sample])
    }

    pub fn prediction(&self, logits: &[f64]) -> PredictionView {
        let probabilities = softmax(logits);
        let class_id = argmax(logits);
        PredictionView {
            class_id,
            class_name: self.class_names[class_id].clone(),
            confidence: probabilities[class_id],
            probabilities,
        }
    }

    /// Concepts active in either the clean or the working row, ranked by
    /// contribution to the currently predicted class.
    pub fn concept_views(&self, clean: &[f64], working: &[f64], predicted: usize) -> Vec<ConceptView> {
        let head = &self.bundle.head;
        let concepts = self.bundle.bank.concepts();
        let mut out: Vec<ConceptView> = (0..clean.len())
            .filter(|&j| clean[j] > 0.0 || working[j] > 0.0)
            .map(|j| ConceptView {
                id: j,
                name: concepts[j].name.clone(),
                activation: working[j],
                clean_activation: clean[j],
                contributions: (0..head.num_classes()).map(|k| head.weight(k, j) * working[j]).collect(),
            })
            .collect();
        out.sort_by(|a, b| {
            b.contributions[predicted]
                .total_cmp(&a.contributions[predicted])
                .then(a.id.cmp(&b.id))
        });
        out
    }

    pub fn snapshot(&self, sample: usize, working: &[f64]) -> Result<Snapshot, ServiceError> {
        let logits = self.bundle.head.logits_dense(working)?;
        let prediction = self.prediction(&logits);
        let clean = self.clean_row(sample);
        Ok(Snapshot {
            concepts: self.concept_views(&clean, working, prediction.class_id),
            logits,
            prediction,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionView {
    pub class_id: usize,
    pub class_name: String,
    pub confidence: f64,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConceptView {
    pub id: usize,
    pub name: String,
    pub activation: f64,
    pub clean_activation: f64,
    /// `W[k, id] * activation` for every class `k`.
    pub contributions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub concepts: Vec<ConceptView>,
    pub logits: Vec<f64>,
    pub prediction: PredictionView,
}
