use proptest::prelude::*;
use toneprobe::evalreport::{aggregate, confusion_and_metrics, mean_std, LayerResult};

fn labels(n: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..6).prop_flat_map(move |k| {
        (proptest::collection::vec(0..k, n), proptest::collection::vec(0..k, n)).prop_map(move |(a, b)| {
            let mut a = a;
            a[0] = k - 1; // keep k classes in play
            (a, b)
        })
    })
}

fn names(idx: &[usize], prefix: &str) -> Vec<String> {
    idx.iter().map(|i| format!("{prefix}{i}")).collect()
}

/// Macro-F1 straight from the definition, counting per class.
fn f1_oracle(truth: &[usize], pred: &[usize], k: usize) -> f64 {
    let mut sum = 0.0;
    for c in 0..k {
        let tp = truth.iter().zip(pred).filter(|(t, p)| **t == c && **p == c).count() as f64;
        let fp = truth.iter().zip(pred).filter(|(t, p)| **t != c && **p == c).count() as f64;
        let fn_ = truth.iter().zip(pred).filter(|(t, p)| **t == c && **p != c).count() as f64;
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    sum / k as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn metrics_match_definitions((truth, pred) in labels(40)) {
        let k = *truth.iter().chain(&pred).max().unwrap() + 1;
        let classes = names(&(0..k).collect::<Vec<_>>(), "c");
        let m = confusion_and_metrics(&names(&truth, "c"), &names(&pred, "c"), &classes).unwrap();
        let trace: usize = (0..k).map(|i| m.confusion[i][i]).sum();
        let total: usize = m.confusion.iter().flatten().sum();
        prop_assert_eq!(m.accuracy, trace as f64 / total as f64);
        for (c, row) in m.confusion.iter().enumerate() {
            prop_assert_eq!(row.iter().sum::<usize>(), truth.iter().filter(|&&t| t == c).count());
        }
        prop_assert!((m.macro_f1 - f1_oracle(&truth, &pred, k)).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_ignores_class_order_and_names((truth, pred) in labels(30), rot in 0usize..5) {
        let k = *truth.iter().chain(&pred).max().unwrap() + 1;
        let mut classes = names(&(0..k).collect::<Vec<_>>(), "c");
        let base = confusion_and_metrics(&names(&truth, "c"), &names(&pred, "c"), &classes).unwrap().macro_f1;
        classes.rotate_left(rot % k);
        let rotated = confusion_and_metrics(&names(&truth, "c"), &names(&pred, "c"), &classes).unwrap().macro_f1;
        let renamed: Vec<String> = (0..k).map(|i| format!("tone-{}", k - i)).collect();
        let rn = |v: &[usize]| v.iter().map(|&i| renamed[i].clone()).collect::<Vec<_>>();
        let relabeled = confusion_and_metrics(&rn(&truth), &rn(&pred), &renamed).unwrap().macro_f1;
        prop_assert!((base - rotated).abs() < 1e-12);
        prop_assert!((base - relabeled).abs() < 1e-12);
    }

    #[test]
    fn aggregation_is_order_invariant(vals in proptest::collection::vec(0.0f64..1.0, 1..12), seed in any::<u64>()) {
        let results: Vec<LayerResult> = vals
            .iter()
            .enumerate()
            .map(|(i, &v)| LayerResult {
                model_tag: "m".into(),
                language: "l".into(),
                mode: "speaker_independent".into(),
                layer: 3,
                fold: i,
                test_fold: i,
                n_test: 1,
                accuracy: v,
                macro_f1: 1.0 - v,
                classes: vec![],
                confusion: vec![],
                per_class_recall: vec![],
            })
            .collect();
        let mut shuffled = results.clone();
        let n = shuffled.len();
        for i in 0..n {
            shuffled.swap(i, (seed as usize).wrapping_add(i * 7) % n);
        }
        prop_assert_eq!(aggregate(&results), aggregate(&shuffled));
        let (_, std) = mean_std(&vals);
        prop_assert!(std >= 0.0);
    }
}

#[test]
fn worked_examples() {
    let m = confusion_and_metrics(&["A", "A", "B", "B"], &["A", "B", "B", "B"], &["A", "B"]).unwrap();
    assert_eq!(m.accuracy, 0.75);
    assert!((m.macro_f1 - 11.0 / 15.0).abs() < 1e-12);
    let absent = confusion_and_metrics(&["A", "B"], &["A", "B"], &["A", "B", "C"]).unwrap();
    assert!((absent.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
    let (mean, std) = mean_std(&[0.6, 0.8]);
    assert!((mean - 0.7).abs() < 1e-12);
    assert!((std - 0.02f64.sqrt()).abs() < 1e-12);
    assert!(confusion_and_metrics(&["A"], &["A", "B"], &["A", "B"]).is_err());
    assert!(confusion_and_metrics(&["A"], &["Z"], &["A", "B"]).is_err());
}
