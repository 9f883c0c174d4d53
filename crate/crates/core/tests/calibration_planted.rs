#[path = "support/mod.rs"]
mod support;

use hypcbm::calibration::{fit_scaling_law, youden_threshold, RatioSample, ThresholdGrid};
use statrs::distribution::{Continuous, Normal};

/// Optimal Youden threshold for two normals: the crossing of the densities
/// between the means, found by bisection.
fn density_crossing(mu_pos: f64, mu_neg: f64, sd_pos: f64, sd_neg: f64) -> f64 {
    let p = Normal::new(mu_pos, sd_pos).unwrap();
    let q = Normal::new(mu_neg, sd_neg).unwrap();
    let (mut lo, mut hi) = (mu_pos, mu_neg);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if p.pdf(mid) > q.pdf(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn planted_equal_variance_threshold_within_one_step() {
    for (mp, mn, sd) in [(0.6, 1.4, 0.2), (0.8, 1.5, 0.15), (0.5, 1.2, 0.25)] {
        let samples = support::planted_two_gaussian(200_000, mp, mn, sd);
        let r = youden_threshold(&samples, &ThresholdGrid::default()).unwrap();
        let want = density_crossing(mp, mn, sd, sd);
        assert!((r.eta_img - want).abs() <= 0.001 + 1e-12, "got {} want {want}", r.eta_img);
    }
}

#[test]
fn separated_data_gives_full_j() {
    let mut s: Vec<RatioSample> = (0..100).map(|i| RatioSample { ratio: 0.3 + 0.005 * i as f64, label: true }).collect();
    s.extend((0..100).map(|i| RatioSample { ratio: 1.5 + 0.01 * i as f64, label: false }));
    let r = youden_threshold(&s, &ThresholdGrid::default()).unwrap();
    assert_eq!(r.j, 1.0);
    assert_eq!((r.sensitivity, r.specificity), (1.0, 1.0));
    assert!(r.eta_img >= 0.795 && r.eta_img < 1.5);
}

#[test]
fn planted_scaling_law_recovered() {
    let (bank, pairs) = support::planted_scaling_pairs(1000, 8.62, 0.09, 11);
    let law = fit_scaling_law(&pairs, &bank, 0.27).unwrap();
    assert!((law.slope - 8.62).abs() < 1e-9, "slope {}", law.slope);
    assert!((law.shift - 0.09).abs() < 1e-9, "shift {}", law.shift);
    assert!((law.r - 1.0).abs() < 1e-9);
    assert_eq!(law.n_pairs, 1000);
}
