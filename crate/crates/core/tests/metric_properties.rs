use cyclefocal::data::Label;
use cyclefocal::evaluation::{auc, confusion, roc_curve, sensitivity};
use proptest::prelude::*;

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<Label>)> {
    (2usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..20, n).prop_map(|v| v.into_iter().map(|x| x as f64 / 20.0).collect()),
            prop::collection::vec(any::<bool>(), n).prop_map(|v| {
                let mut l: Vec<Label> = v
                    .into_iter()
                    .map(|m| if m { Label::Malignant } else { Label::Benign })
                    .collect();
                l[0] = Label::Malignant;
                l[1] = Label::Benign;
                l
            }),
        )
    })
}

proptest! {
    #[test]
    fn auc_ignores_strictly_increasing_transforms((scores, labels) in scored()) {
        let a = auc(&roc_curve(&scores, &labels).unwrap());
        let squashed: Vec<f64> = scores.iter().map(|s| (3.0 * s - 1.0).exp() / 7.0 + 0.25).collect();
        let b = auc(&roc_curve(&squashed, &labels).unwrap());
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn auc_ignores_sample_order((scores, labels) in scored(), rot in 0usize..80) {
        let a = auc(&roc_curve(&scores, &labels).unwrap());
        let k = rot % scores.len();
        let (mut s, mut l) = (scores.clone(), labels.clone());
        s.rotate_left(k);
        l.rotate_left(k);
        s.reverse();
        l.reverse();
        let b = auc(&roc_curve(&s, &l).unwrap());
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn sensitivity_does_not_rise_with_threshold((scores, labels) in scored()) {
        let at = |t: f64| {
            let preds: Vec<Label> = scores
                .iter()
                .map(|&p| if p >= t { Label::Malignant } else { Label::Benign })
                .collect();
            sensitivity(&confusion(&labels, &preds).unwrap()).unwrap()
        };
        let mut last = f64::INFINITY;
        for i in 0..=21 {
            let s = at(i as f64 / 20.0);
            prop_assert!(s <= last);
            last = s;
        }
    }

    #[test]
    fn auc_stays_in_unit_interval((scores, labels) in scored()) {
        let a = auc(&roc_curve(&scores, &labels).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn constant_scores_give_chance_auc() {
    let labels = [Label::Malignant, Label::Benign, Label::Benign, Label::Malignant];
    let a = auc(&roc_curve(&[0.3; 4], &labels).unwrap());
    assert!((a - 0.5).abs() < 1e-15);
}
