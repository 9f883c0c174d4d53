//! Independent oracles and planted data shared by integration tests.
#![allow(dead_code)]

use astro_float::{BigFloat, Consts, RoundingMode};
use hypcbm::bank::{ConceptBank, HierarchyPairs};
use hypcbm::calibration::RatioSample;
use hypcbm::geometry::{lift, Curvature, HyperbolicPoint, NumericPolicy};
use hypcbm::synth::place_at_exterior_angle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

const P: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

fn big(x: f64) -> BigFloat {
    BigFloat::from_f64(x, P)
}

fn to_f64(x: &BigFloat) -> f64 {
    x.to_string().parse().expect("BigFloat renders as a decimal float")
}

fn big_inner(x: &HyperbolicPoint, y: &HyperbolicPoint) -> BigFloat {
    let mut acc = big(x.time()).mul(&big(y.time()), P, RM).neg();
    for (a, b) in x.spatial().iter().zip(y.spatial()) {
        acc = acc.add(&big(*a).mul(&big(*b), P, RM), P, RM);
    }
    acc
}

/// Minkowski product evaluated in 256-bit arithmetic on the stored f64 coordinates.
pub fn oracle_inner(x: &HyperbolicPoint, y: &HyperbolicPoint) -> f64 {
    to_f64(&big_inner(x, y))
}

/// Exterior angle by the textbook `acos` expression, in 256-bit arithmetic.
pub fn oracle_exterior_angle(z: &HyperbolicPoint, concept: &HyperbolicPoint, c: f64) -> f64 {
    let mut cc = Consts::new().unwrap();
    let bc = big(c);
    let cz = bc.mul(&big_inner(z, concept), P, RM);
    let num = big(z.time()).add(&big(concept.time()).mul(&cz, P, RM), P, RM);
    let mut norm2 = big(0.0);
    for a in concept.spatial() {
        norm2 = norm2.add(&big(*a).mul(&big(*a), P, RM), P, RM);
    }
    let rad = cz.mul(&cz, P, RM).sub(&big(1.0), P, RM);
    let den = norm2.sqrt(P, RM).mul(&rad.sqrt(P, RM), P, RM);
    to_f64(&num.div(&den, P, RM).acos(P, RM, &mut cc))
}

/// Random spatial vector with entries uniform in `[-scale, scale]`.
pub fn random_spatial(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Two-class ratio samples drawn at stratified normal quantiles, so the
/// empirical distributions track the planted CDFs closely.
pub fn planted_two_gaussian(n: usize, mu_pos: f64, mu_neg: f64, sd: f64) -> Vec<RatioSample> {
    let pos = Normal::new(mu_pos, sd).unwrap();
    let neg = Normal::new(mu_neg, sd).unwrap();
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let q = (i as f64 + 0.5) / n as f64;
        out.push(RatioSample {
            ratio: pos.inverse_cdf(q).max(0.0),
            label: true,
        });
        out.push(RatioSample {
            ratio: neg.inverse_cdf(q).max(0.0),
            label: false,
        });
    }
    out
}

/// Bank and pairs where every child sits at exactly the exterior angle the
/// linear law `slope * (|parent| - shift)` prescribes.
pub fn planted_scaling_pairs(n: usize, slope: f64, shift: f64, seed: u64) -> (ConceptBank, HierarchyPairs) {
    let c = Curvature::new(0.1).unwrap();
    let policy = NumericPolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 8;
    let mut entries = Vec::with_capacity(2 * n);
    let mut pairs = Vec::with_capacity(n);
    let mut i = 0;
    while pairs.len() < n {
        i += 1;
        let pn = 0.3 + 0.7 * pairs.len() as f64 / n as f64;
        let dir = random_spatial(&mut rng, dim, 1.0);
        let dn = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let parent = lift(dir.iter().map(|v| v / dn * pn).collect(), c).unwrap();
        let omega = hypcbm::geometry::half_aperture(&parent, 0.04, c, &policy).unwrap();
        let eta = slope * (pn - shift);
        let toward = random_spatial(&mut rng, dim, 1.0);
        let child_norm = pn + rng.gen_range(0.2..1.0);
        let Ok(child) = place_at_exterior_angle(&parent, &toward, eta * omega, child_norm, c, &policy) else {
            continue;
        };
        let id = entries.len();
        entries.push((format!("p{i}"), parent));
        entries.push((format!("c{i}"), child));
        pairs.push((id, id + 1));
    }
    let bank = ConceptBank::new(entries, 0.27, 0.04, c, "planted").unwrap();
    let pairs = HierarchyPairs::new(pairs, "planted", &bank).unwrap();
    (bank, pairs)
}

/// Penalized two-class objective in the reduced parameterization
/// `d = w1 - w0`, `beta = b1 - b0`: the optimal split of `d` is `-d/2, d/2`,
/// giving `|W|_1 = |d|_1` and `|W|_2^2 = |d|_2^2 / 2`.
fn reduced_objective(rows: &[Vec<f64>], labels: &[usize], d: &[f64], beta: f64, lambda: f64, alpha: f64) -> f64 {
    let mut loss = 0.0;
    for (a, &y) in rows.iter().zip(labels) {
        let m = beta + a.iter().zip(d).map(|(x, w)| x * w).sum::<f64>();
        let s = if y == 1 { -m } else { m };
        loss += if s > 0.0 { s + (-s).exp().ln_1p() } else { s.exp().ln_1p() };
    }
    let l1: f64 = d.iter().map(|v| v.abs()).sum();
    let l2: f64 = d.iter().map(|v| v * v).sum();
    loss / rows.len() as f64 + lambda * (alpha * l1 + 0.5 * (1.0 - alpha) * 0.5 * l2)
}

/// Exact minimization over the unpenalized intercept by Newton's method.
fn best_beta(rows: &[Vec<f64>], labels: &[usize], d: &[f64], mut beta: f64) -> f64 {
    let base: Vec<f64> = rows.iter().map(|a| a.iter().zip(d).map(|(x, w)| x * w).sum()).collect();
    for _ in 0..30 {
        let (mut g, mut h) = (0.0, 0.0);
        for (m, &y) in base.iter().zip(labels) {
            let p = 1.0 / (1.0 + (-(m + beta)).exp());
            g += p - y as f64;
            h += p * (1.0 - p);
        }
        let step = g / h.max(1e-12);
        beta -= step;
        if step.abs() < 1e-14 {
            break;
        }
    }
    beta
}

/// Coarse-to-fine grid search over the four weight differences; each level
/// re-centres on the best point and shrinks the step by 4.
pub fn grid_oracle_objective(rows: &[Vec<f64>], labels: &[usize], lambda: f64, alpha: f64) -> f64 {
    const PTS: i32 = 12;
    let mut center = [0.0f64; 4];
    let mut step = 0.4;
    let mut best = f64::INFINITY;
    let mut beta0 = 0.0;
    while step > 1e-5 {
        let mut level_best = (f64::INFINITY, center, beta0);
        for i0 in -PTS..=PTS {
            for i1 in -PTS..=PTS {
                for i2 in -PTS..=PTS {
                    for i3 in -PTS..=PTS {
                        let d = [
                            center[0] + i0 as f64 * step,
                            center[1] + i1 as f64 * step,
                            center[2] + i2 as f64 * step,
                            center[3] + i3 as f64 * step,
                        ];
                        let beta = best_beta(rows, labels, &d, beta0);
                        let f = reduced_objective(rows, labels, &d, beta, lambda, alpha);
                        if f < level_best.0 {
                            level_best = (f, d, beta);
                        }
                    }
                }
            }
        }
        best = best.min(level_best.0);
        center = level_best.1;
        beta0 = level_best.2;
        step /= 4.0;
    }
    best
}
