#![allow(clippy::needless_range_loop)]

use hypcbm::activation::{activate, activation_matrix, binarize_sparsity_matched, ActivationMatrix, ActivationMode, ImageSet};
use hypcbm::bank::{dedup, find_children, norm_filter, ConceptBank, HierarchyPairs};
use hypcbm::calibration::{aperture_diagnostics, fit_line, youden_threshold, RatioSample, ScalingLaw, ThresholdGrid};
use hypcbm::geometry::{
    exp_map, exterior_angle, half_aperture_from_norm, lift, log_map, minkowski_inner, Curvature, NumericPolicy,
    TangentVector,
};
use hypcbm::head::{anec, AnecCurve, CurvePoint, SparseHead};
use hypcbm::intervention::{suppress, suppress_with_propagation};
use hypcbm::metrics::{hierarchical_consistency, jaccard};
use proptest::prelude::*;

fn c01() -> Curvature {
    Curvature::new(0.1).unwrap()
}

fn vec_in(dim: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, dim)
}

fn bank_from(rows: &[Vec<f64>]) -> ConceptBank {
    let entries = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (format!("c{i}"), lift(r.clone(), c01()).unwrap()))
        .collect();
    ConceptBank::new(entries, 0.0, 0.04, c01(), "prop").unwrap()
}

fn nonzero_rows(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(vec_in(dim, 2.0), n).prop_filter("concepts need a direction", |rows| {
        rows.iter().all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-4)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lifted_points_satisfy_constraint(x in vec_in(6, 20.0), c in 0.01f64..2.0) {
        let c = Curvature::new(c).unwrap();
        let p = lift(x, c).unwrap();
        let q = minkowski_inner(&p, &p).unwrap();
        prop_assert!((q + 1.0 / c.get()).abs() < 1e-9 / c.get());
    }

    #[test]
    fn exp_log_round_trip(v in vec_in(5, 4.4)) {
        prop_assume!(v.iter().map(|x| x * x).sum::<f64>().sqrt() <= 10.0);
        let x = exp_map(&TangentVector(v.clone()), c01()).unwrap();
        let q = minkowski_inner(&x, &x).unwrap();
        prop_assert!((q + 10.0).abs() < 1e-9 * 10.0);
        let back = log_map(&x, c01()).unwrap();
        let err = back.0.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err < 1e-8, "round trip error {err}");
    }

    #[test]
    fn aperture_decreases_past_saturation(a in 0.64f64..5.0, b in 0.64f64..5.0) {
        prop_assume!((a - b).abs() > 1e-9);
        let pol = NumericPolicy::default();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let wl = half_aperture_from_norm(lo, 0.04, c01(), &pol).unwrap();
        let wh = half_aperture_from_norm(hi, 0.04, c01(), &pol).unwrap();
        prop_assert!(wh < wl);
    }

    #[test]
    fn exterior_angle_in_range_and_zero_on_axis(x in vec_in(4, 2.0), s in 1.01f64..5.0) {
        let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(n > 1e-3);
        let pol = NumericPolicy::default();
        let concept = lift(x.clone(), c01()).unwrap();
        let deeper = lift(x.iter().map(|v| v * s).collect(), c01()).unwrap();
        let phi = exterior_angle(&deeper, &concept, c01(), &pol).unwrap();
        prop_assert!(phi.abs() < 1e-9);
        let other = lift(x.iter().rev().map(|v| v * s + 0.3).collect(), c01()).unwrap();
        let phi = exterior_angle(&other, &concept, c01(), &pol).unwrap();
        prop_assert!((0.0..=std::f64::consts::PI).contains(&phi));
    }

    #[test]
    fn activations_bounded_and_monotone_in_eta(
        concepts in nonzero_rows(5, 3),
        z in vec_in(3, 4.0),
        e1 in 0.2f64..3.0,
        e2 in 0.2f64..3.0,
    ) {
        let bank = bank_from(&concepts);
        let z = lift(z, c01()).unwrap();
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        let a_lo = activate(&z, &bank, lo);
        let a_hi = activate(&z, &bank, hi);
        for &(_, v) in &a_lo {
            prop_assert!(v > 0.0 && v <= lo);
        }
        for &(j, v) in &a_lo {
            let up = a_hi.iter().find(|e| e.0 == j).map(|e| e.1);
            prop_assert!(up.is_some_and(|u| u >= v));
        }
    }

    #[test]
    fn batch_size_does_not_change_bits(
        concepts in nonzero_rows(6, 3),
        images in prop::collection::vec(vec_in(3, 4.0), 1..40),
        batch in 1usize..17,
    ) {
        let bank = bank_from(&concepts);
        let ids = (0..images.len()).map(|i| format!("s{i}")).collect();
        let pts = images.into_iter().map(|v| lift(v, c01()).unwrap()).collect();
        let set = ImageSet::new(pts, ids, None, None, c01()).unwrap();
        let a = activation_matrix(&set, &bank, 1.3, batch).unwrap();
        let b = activation_matrix(&set, &bank, 1.3, 512).unwrap();
        prop_assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    }

    #[test]
    fn sparsity_match_counts(
        base in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 6), 1..10),
        refr in prop::collection::vec(prop::collection::vec(prop_oneof![Just(0.0), 0.1f64..1.0], 6), 1..10),
    ) {
        let n = base.len().min(refr.len());
        let baseline = ActivationMatrix::from_dense(&base[..n], 6, 1.0, ActivationMode::Cosine).unwrap();
        let reference = ActivationMatrix::from_dense(&refr[..n], 6, 1.0, ActivationMode::Entailment).unwrap();
        let sets = binarize_sparsity_matched(&baseline, &reference).unwrap();
        for (i, s) in sets.iter().enumerate() {
            prop_assert_eq!(s.len(), reference.active_counts()[i]);
        }
    }

    #[test]
    fn jaccard_symmetric_and_relabel_invariant(
        a in prop::collection::btree_set(0usize..20, 0..10),
        b in prop::collection::btree_set(0usize..20, 0..10),
        shift in 1usize..50,
    ) {
        let a: Vec<usize> = a.into_iter().collect();
        let b: Vec<usize> = b.into_iter().collect();
        let j = jaccard(&a, &b);
        prop_assert_eq!(j, jaccard(&b, &a));
        prop_assert!((0.0..=1.0).contains(&j));
        let relabel = |s: &[usize]| s.iter().map(|x| (x * 7 + shift) % 1000).collect::<Vec<_>>();
        prop_assert_eq!(j, jaccard(&relabel(&a), &relabel(&b)));
    }

    #[test]
    fn scaling_fit_is_scale_consistent(
        xs in prop::collection::vec(0.27f64..1.2, 3..30),
        noise in prop::collection::vec(-0.5f64..0.5, 30),
        s in 0.1f64..10.0,
    ) {
        prop_assume!(xs.iter().any(|x| (x - xs[0]).abs() > 1e-3));
        let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, e)| 8.62 * (x - 0.09) + e).collect();
        let scaled: Vec<f64> = ys.iter().map(|y| y * s).collect();
        let a = fit_line(&xs, &ys).unwrap();
        let b = fit_line(&xs, &scaled).unwrap();
        prop_assert!((b.slope - s * a.slope).abs() <= 1e-9 * (s * a.slope).abs().max(1.0));
        prop_assert!((b.shift - a.shift).abs() <= 1e-9 * a.shift.abs().max(1.0));
    }

    #[test]
    fn youden_roc_monotone_and_j_exact(
        pos in prop::collection::vec(0.0f64..3.0, 1..50),
        neg in prop::collection::vec(0.0f64..3.0, 1..50),
    ) {
        let samples: Vec<RatioSample> = pos.iter().map(|&r| RatioSample { ratio: r, label: true })
            .chain(neg.iter().map(|&r| RatioSample { ratio: r, label: false }))
            .collect();
        let res = youden_threshold(&samples, &ThresholdGrid::default()).unwrap();
        for w in res.roc.windows(2) {
            prop_assert!(w[1].tpr >= w[0].tpr && w[1].fpr >= w[0].fpr);
        }
        let sens = pos.iter().filter(|&&r| r <= res.eta_img).count() as f64 / pos.len() as f64;
        let spec = neg.iter().filter(|&&r| r > res.eta_img).count() as f64 / neg.len() as f64;
        prop_assert_eq!(sens + spec - 1.0, res.j);
    }

    #[test]
    fn saturation_monotone_in_k(norms in prop::collection::vec(0.05f64..2.0, 1..20)) {
        let rows: Vec<Vec<f64>> = norms.iter().map(|&n| vec![n, 0.0]).collect();
        let bank = bank_from(&rows);
        let ks = [0.005, 0.01, 0.02, 0.04, 0.08, 0.1, 0.2];
        let reps = aperture_diagnostics(&bank, &ks);
        for w in reps.windows(2) {
            prop_assert!(w[1].saturated_fraction >= w[0].saturated_fraction);
        }
    }

    #[test]
    fn filter_and_dedup_are_idempotent(concepts in nonzero_rows(8, 3), tau in 0.0f64..2.0) {
        let bank = bank_from(&concepts);
        let once = norm_filter(&bank, tau).unwrap().bank;
        let twice = norm_filter(&once, tau).unwrap();
        prop_assert!(twice.removed.is_empty());
        let d1 = dedup(&bank, None, 0.85, 0.9).unwrap().bank;
        let d2 = dedup(&d1, None, 0.85, 0.9).unwrap();
        prop_assert!(d2.removed.is_empty());
        prop_assert_eq!(d2.bank.names(), d1.names());
    }

    #[test]
    fn suppression_only_lowers_listed_entries(
        row in prop::collection::vec(0.0f64..1.5, 6),
        id in 0usize..6,
        delta in 0.01f64..2.0,
    ) {
        let out = suppress(&row, id, delta).unwrap();
        for (j, (a, b)) in row.iter().zip(&out).enumerate() {
            if j == id {
                prop_assert!(*b <= *a && *b >= 0.0);
            } else {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn propagation_set_is_children_plus_parent(concepts in nonzero_rows(7, 3), parent in 0usize..7) {
        let bank = bank_from(&concepts);
        let law = ScalingLaw::paper();
        let row = vec![1.0; 7];
        let (out, affected) = suppress_with_propagation(&row, parent, 0.3, &bank, &law).unwrap();
        let mut expect = find_children(&bank, parent, &law).unwrap();
        expect.push(parent);
        expect.sort_unstable();
        prop_assert_eq!(&affected, &expect);
        for j in 0..7 {
            let hit = affected.contains(&j);
            prop_assert_eq!(out[j] < 1.0, hit);
        }
    }

    #[test]
    fn consistency_ignores_samples_without_active_children(
        sets in prop::collection::vec(prop::collection::btree_set(0usize..4, 0..4), 1..20),
        extra in prop::collection::vec(prop::collection::btree_set(prop_oneof![Just(0usize), Just(2usize)], 0..2), 0..10),
    ) {
        let bank = bank_from(&[vec![0.3, 0.0], vec![0.6, 0.0], vec![0.0, 0.3], vec![0.0, 0.6]]);
        let pairs = HierarchyPairs::new(vec![(0, 1), (2, 3)], "prop", &bank).unwrap();
        let acts: Vec<Vec<usize>> = sets.iter().map(|s| s.iter().copied().collect()).collect();
        let mut more = acts.clone();
        more.extend(extra.iter().map(|s| s.iter().copied().collect::<Vec<_>>()));
        let a = hierarchical_consistency(&acts, &pairs, 1.0);
        let b = hierarchical_consistency(&more, &pairs, 1.0);
        prop_assert_eq!(a.consistency, b.consistency);
        let all: Vec<Vec<usize>> = acts.iter().map(|_| vec![0, 1, 2, 3]).collect();
        prop_assert_eq!(hierarchical_consistency(&all, &pairs, 1.0).consistency, Some(1.0));
    }

    #[test]
    fn anec_exact_on_points_and_linear_between(
        ks in prop::collection::btree_set(0usize..200, 2..8),
        accs in prop::collection::vec(0.0f64..1.0, 8),
    ) {
        let ks: Vec<usize> = ks.into_iter().collect();
        let points: Vec<CurvePoint> = ks.iter().zip(&accs).enumerate().map(|(i, (&k, &a))| CurvePoint {
            lambda: 1.0 / (i + 1) as f64, k, accuracy: a, converged: true, kkt_residual: 0.0,
        }).collect();
        let curve = AnecCurve::new(points.clone());
        let exact = anec(&curve, &ks).unwrap();
        for (v, p) in exact.iter().zip(ks.iter().zip(&accs)) {
            prop_assert_eq!(v.accuracy, *p.1);
            prop_assert!(!v.extrapolated);
        }
        for w in ks.windows(2).zip(accs.windows(2)) {
            let ((k0, k1), (a0, a1)) = ((w.0[0], w.0[1]), (w.1[0], w.1[1]));
            for b in k0..=k1 {
                let v = anec(&curve, &[b]).unwrap()[0].accuracy;
                let want = a0 + (a1 - a0) * (b - k0) as f64 / (k1 - k0) as f64;
                prop_assert!((v - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn logits_match_naive_multiply_add(
        w in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 5), 3),
        b in prop::collection::vec(-1.0f64..1.0, 3),
        rows in prop::collection::vec(prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.5], 5), 1..8),
    ) {
        let head = SparseHead::from_weights(w.clone(), b.clone()).unwrap();
        let acts = ActivationMatrix::from_dense(&rows, 5, 1.5, ActivationMode::Entailment).unwrap();
        let pred = head.predict(&acts).unwrap();
        for (i, r) in rows.iter().enumerate() {
            for k in 0..3 {
                let mut z = b[k];
                for j in 0..5 {
                    z += w[k][j] * r[j];
                }
                prop_assert!((pred.logits[i][k] - z).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn asymmetry_on_sampled_pairs() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let pol = NumericPolicy::default();
    let mut asymmetric = 0;
    for _ in 0..100 {
        let a = lift((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(), c01()).unwrap();
        let b = lift((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(), c01()).unwrap();
        let ab = exterior_angle(&a, &b, c01(), &pol).unwrap();
        let ba = exterior_angle(&b, &a, c01(), &pol).unwrap();
        if (ab - ba).abs() > 1e-6 {
            asymmetric += 1;
        }
    }
    assert!(asymmetric > 90);
}
