//! Threshold calibration: Youden's J over entailment ratios, the linear
//! `eta_text` scaling law, and aperture saturation diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{ConceptBank, HierarchyPairs};
use crate::error::{Error, Result};
use crate::geometry::{
    aperture_argument, exterior_angle, half_aperture, Curvature, HyperbolicPoint, NumericPolicy,
};

/// `eta_text(|c|) = slope * (|c| - shift)`, floored at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingLaw {
    pub slope: f64,
    pub shift: f64,
    #[serde(default)]
    pub r: f64,
    #[serde(default)]
    pub n_pairs: usize,
}

impl ScalingLaw {
    /// Reference coefficients fitted on WordNet hierarchy pairs.
    pub fn paper() -> Self {
        ScalingLaw {
            slope: 8.62,
            shift: 0.09,
            r: 0.729,
            n_pairs: 4504,
        }
    }

    #[inline]
    pub fn eta_text(&self, norm: f64) -> f64 {
        (self.slope * (norm - self.shift)).max(0.0)
    }
}

impl Default for ScalingLaw {
    fn default() -> Self {
        Self::paper()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioSample {
    pub ratio: f64,
    /// True for a known entailment pair, false for a random pair.
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub eta_img: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub n_positive: usize,
    pub n_negative: usize,
    pub roc: Vec<RocPoint>,
}

/// Evenly spaced thresholds `start, start + step, ..., stop`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        ThresholdGrid {
            start: 0.0,
            stop: 3.0,
            step: 0.001,
        }
    }
}

impl ThresholdGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || !(self.stop >= self.start) {
            return Err(Error::param("grid", "need step > 0 and stop >= start"));
        }
        let n = ((self.stop - self.start) / self.step).round() as usize;
        // Round to 1e-12 so grid values print and compare as their decimals.
        Ok((0..=n)
            .map(|i| ((self.start + i as f64 * self.step) * 1e12).round() / 1e12)
            .collect())
    }
}

/// `phi(z, c) / omega(c)` for one pair.
pub fn entailment_ratio(
    z: &HyperbolicPoint,
    concept: &HyperbolicPoint,
    cone_k: f64,
    c: Curvature,
    policy: &NumericPolicy,
) -> Result<f64> {
    let omega = half_aperture(concept, cone_k, c, policy)?;
    Ok(exterior_angle(z, concept, c, policy)? / omega)
}

/// Entailment ratios for a batch of `(z, concept)` pairs.
pub fn entailment_ratios(
    pairs: &[(HyperbolicPoint, HyperbolicPoint)],
    cone_k: f64,
    c: Curvature,
    policy: &NumericPolicy,
) -> Result<Vec<f64>> {
    pairs
        .par_iter()
        .map(|(z, concept)| entailment_ratio(z, concept, cone_k, c, policy))
        .collect()
}

/// Pick the grid threshold maximizing `J = sensitivity + specificity - 1`,
/// where a pair counts as entailed when `ratio <= threshold`. Ties resolve to
/// the smallest threshold.
pub fn youden_threshold(samples: &[RatioSample], grid: &ThresholdGrid) -> Result<CalibrationResult> {
    let mut pos: Vec<f64> = samples.iter().filter(|s| s.label).map(|s| s.ratio).collect();
    let mut neg: Vec<f64> = samples.iter().filter(|s| !s.label).map(|s| s.ratio).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Degenerate(
            "Youden calibration needs both positive and negative samples".into(),
        ));
    }
    if samples.iter().any(|s| !(s.ratio >= 0.0)) {
        return Err(Error::param("ratio", "entailment ratios must be finite and >= 0"));
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let (mut ip, mut ineg) = (0usize, 0usize);
    let mut roc = Vec::new();
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for t in grid.values()? {
        while ip < pos.len() && pos[ip] <= t {
            ip += 1;
        }
        while ineg < neg.len() && neg[ineg] <= t {
            ineg += 1;
        }
        let sens = ip as f64 / np;
        let spec = (neg.len() - ineg) as f64 / nn;
        let j = sens + spec - 1.0;
        roc.push(RocPoint {
            threshold: t,
            tpr: sens,
            fpr: 1.0 - spec,
        });
        if best.is_none_or(|(_, bj, _, _)| j > bj) {
            best = Some((t, j, sens, spec));
        }
    }
    let (eta_img, j, sensitivity, specificity) = best.expect("grid is non-empty");
    Ok(CalibrationResult {
        eta_img,
        j,
        sensitivity,
        specificity,
        n_positive: pos.len(),
        n_negative: neg.len(),
        roc,
    })
}

/// Choose the candidate with the highest score; ties go to the smaller value.
pub fn sweep_select<F>(candidates: &[f64], mut score: F) -> Result<(f64, Vec<(f64, f64)>)>
where
    F: FnMut(f64) -> Result<f64>,
{
    if candidates.is_empty() {
        return Err(Error::param("candidates", "empty candidate list"));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut scored = Vec::with_capacity(sorted.len());
    let mut best = (sorted[0], f64::NEG_INFINITY);
    for &eta in &sorted {
        let s = score(eta)?;
        scored.push((eta, s));
        if s > best.1 {
            best = (eta, s);
        }
    }
    Ok((best.0, scored))
}

/// Pairwise (cascade) summation; fixed association order.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Ordinary least squares `y = m x + q`, reported as `slope = m`,
/// `shift = -q / m` and Pearson `r`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<ScalingLaw> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 valid pairs, got {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = pairwise_sum(xs) / n;
    let my = pairwise_sum(ys) / n;
    let dx: Vec<f64> = xs.iter().map(|x| x - mx).collect();
    let dy: Vec<f64> = ys.iter().map(|y| y - my).collect();
    let sxx = pairwise_sum(&dx.iter().map(|d| d * d).collect::<Vec<_>>());
    let syy = pairwise_sum(&dy.iter().map(|d| d * d).collect::<Vec<_>>());
    let sxy = pairwise_sum(&dx.iter().zip(&dy).map(|(a, b)| a * b).collect::<Vec<_>>());
    if sxx <= f64::EPSILON * n * mx.abs().max(1.0) {
        return Err(Error::Degenerate(
            "all parent norms are equal; the regression is undetermined".into(),
        ));
    }
    let slope = sxy / sxx;
    if slope == 0.0 {
        return Err(Error::Degenerate("fitted slope is zero; shift undefined".into()));
    }
    let r = if syy > 0.0 { sxy / (sxx * syy).sqrt() } else { 0.0 };
    Ok(ScalingLaw {
        slope,
        // shift = -q / m with q = my - m * mx
        shift: mx - my / slope,
        r,
        n_pairs: xs.len(),
    })
}

/// Per-pair `eta_text` targets after the norm-consistency and
/// hierarchical-integrity filters, as `(parent_norm, eta_text)`.
pub fn scaling_law_samples(
    pairs: &HierarchyPairs,
    bank: &ConceptBank,
    min_norm: f64,
) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for &(p, ch) in &pairs.pairs {
        let parent = bank.get(p)?;
        let child = bank.get(ch)?;
        if parent.norm() < min_norm || child.norm() < min_norm || parent.norm() >= child.norm() {
            continue;
        }
        let phi = bank.exterior_angle(&child.point, p)?;
        out.push((parent.norm(), phi / bank.aperture(p)?));
    }
    Ok(out)
}

pub fn fit_scaling_law(pairs: &HierarchyPairs, bank: &ConceptBank, min_norm: f64) -> Result<ScalingLaw> {
    let samples = scaling_law_samples(pairs, bank, min_norm)?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
    fit_line(&xs, &ys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApertureReport {
    #[serde(rename = "K")]
    pub cone_k: f64,
    pub n: usize,
    pub u_min: f64,
    pub u_mean: f64,
    pub u_median: f64,
    pub u_max: f64,
    pub saturated_fraction: f64,
    /// `2K / sqrt(c)`: concepts below this norm saturate.
    pub saturation_norm: f64,
}

/// Distribution of the unclamped aperture argument over the bank for each K.
pub fn aperture_diagnostics(bank: &ConceptBank, k_values: &[f64]) -> Vec<ApertureReport> {
    let c = bank.curvature();
    let eps = bank.policy().clamp_eps;
    k_values
        .iter()
        .map(|&k| {
            let mut u: Vec<f64> = bank
                .concepts()
                .iter()
                .map(|cn| aperture_argument(cn.norm(), k, c))
                .collect();
            u.sort_by(f64::total_cmp);
            let n = u.len();
            let saturated = u.iter().filter(|&&x| x >= 1.0 - eps).count();
            ApertureReport {
                cone_k: k,
                n,
                u_min: u.first().copied().unwrap_or(f64::NAN),
                u_mean: if n == 0 { f64::NAN } else { pairwise_sum(&u) / n as f64 },
                u_median: if n == 0 {
                    f64::NAN
                } else if n % 2 == 1 {
                    u[n / 2]
                } else {
                    0.5 * (u[n / 2 - 1] + u[n / 2])
                },
                u_max: u.last().copied().unwrap_or(f64::NAN),
                saturated_fraction: if n == 0 { 0.0 } else { saturated as f64 / n as f64 },
                saturation_norm: 2.0 * k / c.sqrt(),
            }
        })
        .collect()
}
