//! Concept bottleneck models over hyperbolic (Lorentz-model) embeddings.
//!
//! Images activate concepts through entailment cones: a concept is active
//! when the image lies inside its cone, with strength given by the margin of
//! inclusion. A sparse Elastic-Net head maps activations to classes, and
//! suppressing a concept can propagate to every concept its cone entails.

// Parameter guards use negated comparisons so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod bank;
pub mod calibration;
pub mod error;
pub mod geometry;
pub mod head;
pub mod intervention;
pub mod io;
pub mod metrics;
pub mod registry;
pub mod synth;

pub use activation::{activate, activation_matrix, cosine_activation_matrix, ActivationMatrix, ActiveSet, ImageSet};
pub use bank::{find_children, load_bank, ConceptBank, HierarchyPairs};
pub use calibration::{fit_scaling_law, youden_threshold, ScalingLaw};
pub use error::{Error, Result};
pub use geometry::{exterior_angle, half_aperture, lift, Curvature, HyperbolicPoint, NumericPolicy};
pub use head::{anec, fit, lambda_sweep, AnecCurve, FitParams, SparseHead};
pub use intervention::{response_curve, suppress, suppress_with_propagation, InterventionConfig};
pub use metrics::{accuracy, hierarchical_consistency, jaccard_stability};
pub use synth::{generate, SynthSpec};
