mod common;

use common::oracle::{auc_instance, auc_sweep};
use proptest::prelude::*;
use ueeg::metrics::{accuracy, auc_roc, macro_f1, ConfusionMatrix};

#[test]
fn auc_formulations_agree_on_random_instances() {
    let worst = auc_sweep(1000);
    assert!(worst < 1e-12, "max disagreement {worst}");
}

#[test]
fn auc_of_negated_scores_is_complementary() {
    for seed in 0..1000 {
        let (s, l) = auc_instance(seed);
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        assert_eq!(
            auc_roc(&s, &l).unwrap() + auc_roc(&neg, &l).unwrap(),
            1.0,
            "seed {seed}"
        );
    }
}

proptest! {
    #[test]
    fn confusion_trace_over_total_is_accuracy(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..100)) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let cm = ConfusionMatrix::new(&pred, &truth, 4).unwrap();
        prop_assert_eq!(cm.total(), pred.len() as u64);
        prop_assert_eq!(cm.trace() as f64 / cm.total() as f64, accuracy(&pred, &truth).unwrap());
    }

    #[test]
    fn macro_f1_equals_accuracy_for_symmetric_binary_errors(half in 1usize..50, errors in 0usize..50) {
        // balanced classes with the same number of errors in each direction
        let errors = errors.min(half);
        let truth: Vec<usize> = (0..2 * half).map(|i| usize::from(i >= half)).collect();
        let mut pred = truth.clone();
        for i in 0..errors {
            pred[i] = 1;
            pred[half + i] = 0;
        }
        let acc = accuracy(&pred, &truth).unwrap();
        let f1 = macro_f1(&pred, &truth, 2).unwrap();
        prop_assert!((acc - f1).abs() < 1e-12, "acc {} f1 {}", acc, f1);
    }
}
