mod support;

use hypcbm::activation::{ActivationMatrix, ActivationMode};
use hypcbm::head::{fit, fit_traced, FitParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_instance(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = [1.5, -1.0, 0.0, 0.5];
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..20 {
        let a: Vec<f64> = (0..4)
            .map(|_| if rng.gen_bool(0.6) { rng.gen_range(0.0..1.0) } else { 0.0 })
            .collect();
        let m: f64 = a.iter().zip(truth).map(|(x, w)| x * w).sum::<f64>() - 0.2 + rng.gen_range(-0.5..0.5);
        labels.push(usize::from(m > 0.0));
        rows.push(a);
    }
    (rows, labels)
}

#[test]
fn objective_matches_grid_oracle() {
    let (rows, labels) = tiny_instance(5);
    assert!(labels.contains(&0) && labels.contains(&1));
    let acts = ActivationMatrix::from_dense(&rows, 4, 1.0, ActivationMode::Entailment).unwrap();
    let params = FitParams::with_lambda(0.1);
    let (head, trace) = fit_traced(&acts, &labels, 2, &params).unwrap();
    assert!(head.converged);
    assert!(head.kkt_residual <= params.tol);
    assert!(trace.objective.windows(2).all(|w| w[1] <= w[0]));
    let solver = head.objective.unwrap();
    let oracle = support::grid_oracle_objective(&rows, &labels, 0.1, params.alpha);
    assert!((solver - oracle).abs() < 1e-4, "solver {solver} oracle {oracle}");
    assert!(solver <= oracle + 1e-9, "grid found a lower objective: solver {solver} oracle {oracle}");
}

#[test]
fn smaller_lambda_also_matches_oracle() {
    let (rows, labels) = tiny_instance(9);
    let acts = ActivationMatrix::from_dense(&rows, 4, 1.0, ActivationMode::Entailment).unwrap();
    let head = fit(&acts, &labels, 2, &FitParams::with_lambda(0.02)).unwrap();
    assert!(head.converged);
    let oracle = support::grid_oracle_objective(&rows, &labels, 0.02, 0.99);
    assert!((head.objective.unwrap() - oracle).abs() < 1e-4);
}
