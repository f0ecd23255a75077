mod common;

use proptest::prelude::*;
use rand::Rng;
use toneprobe::svm::{train_binary, train_ovr, Matrix, SvmConfig, DEFAULT_MAX_EPOCHS};

const ORACLE_TOL: f64 = 1e-8;

fn check_against_oracle(seed: u64) -> Result<(), String> {
    let mut rng = common::rng(seed);
    let n = rng.random_range(2..=30);
    let dim = rng.random_range(1..=4);
    let shift = [0.0, 0.5, 1.5, 3.0][rng.random_range(0..4)];
    let c = [0.1, 1.0, 10.0][rng.random_range(0..3)];
    let (x, y) = common::random_binary_problem(&mut rng, n, dim, shift);
    // the default stopping tolerance bounds the dual violation, not the primal gap
    let fit = train_binary(&x, &y, c, ORACLE_TOL, 100 * DEFAULT_MAX_EPOCHS, seed).map_err(|e| e.to_string())?;
    let oracle = common::qp_oracle(&x, &y, c);

    let xa = common::augment(&x);
    let mut w = fit.model.weights.clone();
    w.push(fit.model.bias);
    let primal = common::primal_objective(&xa, &y, &w, c);
    let rel = (primal - oracle.primal).abs() / oracle.primal.abs().max(1e-12);
    if rel > 1e-3 {
        return Err(format!(
            "seed {seed}: primal {primal} vs oracle {} (rel {rel:.2e})",
            oracle.primal
        ));
    }
    for &a in &fit.alphas {
        if !(0.0..=c).contains(&a) {
            return Err(format!("seed {seed}: alpha {a} outside [0, {c}]"));
        }
    }
    let mut w_dual = vec![0.0; dim + 1];
    for (i, row) in xa.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            w_dual[j] += fit.alphas[i] * y[i] * v;
        }
    }
    let gap = w.iter().zip(&w_dual).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if gap > 1e-6 {
        return Err(format!("seed {seed}: |w - sum a y x| = {gap:.2e}"));
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn dcd_matches_qp_oracle(seed in any::<u64>()) {
        prop_assert_eq!(check_against_oracle(seed), Ok(()));
    }

    #[test]
    fn dual_objective_never_decreases(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let (x, y) = common::random_binary_problem(&mut rng, 40, 3, 0.7);
        let fit = train_binary(&x, &y, 1.0, 1e-6, 500, seed).unwrap();
        for w in fit.dual_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn power_of_two_scaling_leaves_standardized_model_unchanged(seed in any::<u64>(), k in -6i32..6) {
        let mut rng = common::rng(seed);
        let (x, y) = common::random_binary_problem(&mut rng, 30, 3, 1.0);
        let labels: Vec<&str> = y.iter().map(|&v| if v > 0.0 { "a" } else { "b" }).collect();
        let cfg = SvmConfig { seed, ..SvmConfig::default() };
        let m1 = train_ovr(&x, &labels, &["a", "b"], &cfg).unwrap();
        let m2 = train_ovr(&x.scaled(2f64.powi(k)), &labels, &["a", "b"], &cfg).unwrap();
        prop_assert_eq!(&m1.models, &m2.models);
    }
}

#[test]
fn separable_blobs_are_fit_exactly() {
    let mut rng = common::rng(5);
    // centers +-3 on every axis: margin well above 1 after noise clipping
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..200 {
        let label = if i % 2 == 0 { 1.0 } else { -1.0 };
        rows.push(
            (0..5)
                .map(|_| label * 3.0 + rng.random_range(-1.0..1.0))
                .collect::<Vec<f64>>(),
        );
        y.push(label);
    }
    let x = Matrix::from_rows(&rows).unwrap();
    let fit = train_binary(&x, &y, 1.0, 1e-6, 10_000, 1).unwrap();
    assert!(fit.model.converged);
    for (r, &yi) in x.iter_rows().zip(&y) {
        assert!(yi * fit.model.decision(r) > 0.0);
    }
}

#[test]
fn three_class_ovr() {
    let mut rng = common::rng(8);
    let centers = [[0.0, 4.0], [4.0, 0.0], [-4.0, -4.0]];
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..90 {
        let c = i % 3;
        rows.push(vec![
            centers[c][0] + rng.random_range(-1.0..1.0),
            centers[c][1] + rng.random_range(-1.0..1.0),
        ]);
        labels.push(["x", "y", "z"][c]);
    }
    let x = Matrix::from_rows(&rows).unwrap();
    let m = train_ovr(&x, &labels, &["z", "x", "y"], &SvmConfig::default()).unwrap();
    assert_eq!(m.classes, vec!["x", "y", "z"]);
    assert_eq!(m.models.len(), 3);
    assert!(m.models.iter().all(|b| b.epochs_run >= 1));
    assert_eq!(m.predict(&x).unwrap(), labels);
    let again = train_ovr(&x, &labels, &["x", "y", "z"], &SvmConfig::default()).unwrap();
    assert_eq!(again.to_json(), m.to_json());
}
