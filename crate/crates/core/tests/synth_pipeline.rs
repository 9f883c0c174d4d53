use std::collections::BTreeSet;

use hypcbm::activation::{activation_matrix, binarize_sparsity_matched, cosine_activation_matrix, ImageSet};
use hypcbm::bank::{load_bank, ChildRule, HierarchyPairs};
use hypcbm::calibration::ScalingLaw;
use hypcbm::head::{fit, FitParams};
use hypcbm::intervention::PropagationIndex;
use hypcbm::metrics::{accuracy, hierarchical_consistency};
use hypcbm::synth::{generate, SynthData, SynthSpec};

fn default_data() -> SynthData {
    generate(&SynthSpec::default()).unwrap()
}

fn all_pairs(d: &SynthData) -> HierarchyPairs {
    HierarchyPairs::new(d.transitive_pairs(), "synth", &d.bank).unwrap()
}

#[test]
fn tree_shape() {
    let d = default_data();
    assert_eq!(d.bank.len(), 13);
    assert_eq!(d.leaves.len(), 9);
    assert_eq!(d.pairs.len(), 12);
    assert_eq!(d.transitive_pairs().len(), 12 + 9);
    assert_eq!(d.train.len(), 9 * 50);
    assert_eq!(d.descendants(d.root()).len(), 12);
}

#[test]
fn interior_images_never_violate() {
    let d = generate(&SynthSpec {
        images_per_leaf: 112,
        test_images_per_leaf: 1,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    assert!(d.train.len() >= 1000);
    let acts = activation_matrix(&d.train, &d.bank, 1.0, 512).unwrap();
    let sets = acts.active_sets();
    for (set, chain) in sets.iter().zip(&d.truth_train) {
        let active: BTreeSet<usize> = set.iter().copied().collect();
        assert!(chain.iter().all(|c| active.contains(c)), "chain {chain:?} not inside {set:?}");
    }
    let r = hierarchical_consistency(&sets, &all_pairs(&d), 1.0);
    assert_eq!(r.violations, 0);
    assert_eq!(r.consistency, Some(1.0));
}

#[test]
fn cones_beat_cosine_on_consistency() {
    let d = default_data();
    let pairs = all_pairs(&d);
    let hyp = activation_matrix(&d.test, &d.bank, 1.0, 512).unwrap();
    let cos = cosine_activation_matrix(&d.test, &d.bank).unwrap();
    let hyp_r = hierarchical_consistency(&hyp.active_sets(), &pairs, 1.0);
    let cos_sets = binarize_sparsity_matched(&cos, &hyp).unwrap();
    let cos_r = hierarchical_consistency(&cos_sets, &pairs, 1.0);
    assert_eq!(hyp_r.consistency, Some(1.0));
    assert!(cos_r.consistency.unwrap() < 1.0, "cosine {:?}", cos_r.consistency);
    assert_eq!(hyp_r.mean_active, cos_r.mean_active);
}

#[test]
fn head_separates_leaves() {
    let d = default_data();
    let train = activation_matrix(&d.train, &d.bank, 1.0, 512).unwrap();
    let test = activation_matrix(&d.test, &d.bank, 1.0, 512).unwrap();
    let ytr = d.train.labels.clone().unwrap();
    let yte = d.test.labels.clone().unwrap();
    let head = fit(&train, &ytr, d.train.num_classes(), &FitParams::with_lambda(1e-5)).unwrap();
    assert!(head.converged);
    assert!(head.kkt_residual <= 1e-6);
    let pred = head.predict(&test).unwrap();
    assert_eq!(accuracy(&pred.labels, &yte).unwrap(), 1.0);
}

#[test]
fn propagation_matches_descendants() {
    let d = default_data();
    let law = PropagationIndex::new(&d.bank, ScalingLaw::paper());
    let root = d.root();
    let mut want = d.descendants(root);
    want.push(root);
    want.sort_unstable();
    assert_eq!(law.affected(root, true).unwrap(), want);

    let constant = PropagationIndex::new(&d.bank, ChildRule::Constant { eta_text: 1.0 });
    for id in 0..d.bank.len() {
        assert_eq!(constant.children(id).unwrap(), d.descendants(id).as_slice(), "node {id}");
    }

    let mut row = vec![0.7; d.bank.len()];
    constant.apply(&mut row, root, 10.0, true).unwrap();
    assert!(row.iter().all(|&v| v == 0.0));
}

#[test]
fn files_round_trip() {
    let d = default_data();
    let dir = tempfile::tempdir().unwrap();
    let files = d.write_all(dir.path()).unwrap();
    let bank = load_bank(&files.bank, &files.bank_manifest, None).unwrap();
    assert_eq!(bank.content_hash(), d.bank.content_hash());
    let test = ImageSet::load(&files.test, &files.test_manifest, None).unwrap();
    assert_eq!(test.sample_ids, d.test.sample_ids);
    assert_eq!(test.labels, d.test.labels);
    let a = activation_matrix(&test, &bank, 1.0, 512).unwrap();
    let b = activation_matrix(&d.test, &d.bank, 1.0, 512).unwrap();
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    let pairs = HierarchyPairs::load(&files.hierarchy, &bank).unwrap();
    assert_eq!(pairs.pairs, d.pairs.pairs);
}
