use emo2vec_core::{
    compute_metric, metric_accuracy, metric_f1_ovr_mean, metric_f1_positive, MetricKind,
};
use proptest::prelude::*;

fn labelled(classes: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..60).prop_flat_map(move |n| {
        (
            prop::collection::vec(0..classes, n),
            prop::collection::vec(0..classes, n),
        )
    })
}

proptest! {
    #[test]
    fn values_stay_in_unit_interval((pred, gold) in labelled(4)) {
        for v in [
            metric_accuracy(&pred, &gold).unwrap(),
            metric_f1_ovr_mean(&pred, &gold, 4).unwrap(),
        ] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn relabeling_classes_leaves_macro_f1_and_accuracy_unchanged(
        (pred, gold) in labelled(4),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let map = |v: &[usize]| v.iter().map(|&l| perm[l]).collect::<Vec<_>>();
        let (p2, g2) = (map(&pred), map(&gold));
        prop_assert_eq!(metric_accuracy(&pred, &gold).unwrap(), metric_accuracy(&p2, &g2).unwrap());
        let a = metric_f1_ovr_mean(&pred, &gold, 4).unwrap();
        let b = metric_f1_ovr_mean(&p2, &g2, 4).unwrap();
        // summation order differs after relabelling
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn binary_macro_f1_averages_both_positive_classes((pred, gold) in labelled(2)) {
        let ovr = metric_f1_ovr_mean(&pred, &gold, 2).unwrap();
        let pos1 = metric_f1_positive(&pred, &gold, 1).unwrap();
        let pos0 = metric_f1_positive(&pred, &gold, 0).unwrap();
        prop_assert!((ovr - (pos0 + pos1) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions_score_one(gold in prop::collection::vec(0usize..3, 1..40)) {
        prop_assert_eq!(metric_accuracy(&gold, &gold).unwrap(), 1.0);
        let present = (0..3).filter(|c| gold.contains(c)).count() as f64;
        // absent classes have F1 0 by convention
        let v = metric_f1_ovr_mean(&gold, &gold, 3).unwrap();
        prop_assert!((v - present / 3.0).abs() < 1e-15);
    }
}

#[test]
fn compute_metric_dispatches_by_kind() {
    let pred = [1, 0, 1, 1];
    let gold = [1, 1, 0, 1];
    assert_eq!(
        compute_metric(MetricKind::Accuracy, &pred, &gold, 2).unwrap(),
        0.5
    );
    // TP=2 FP=1 FN=1
    assert_eq!(
        compute_metric(MetricKind::F1Positive, &pred, &gold, 2).unwrap(),
        2.0 / 3.0
    );
    let ovr = compute_metric(MetricKind::F1OvrMean, &pred, &gold, 2).unwrap();
    assert!((ovr - (2.0 / 3.0 + 0.0) / 2.0).abs() < 1e-15);
}

#[test]
fn empty_and_mismatched_inputs_are_errors() {
    assert!(metric_accuracy(&[], &[]).is_err());
    assert!(metric_f1_ovr_mean(&[0], &[0, 1], 2).is_err());
    assert!(metric_f1_ovr_mean(&[0], &[0], 0).is_err());
}
