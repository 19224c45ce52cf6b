use rand::seq::SliceRandom;

use super::{Label, LabelledDataset};
use crate::error::{Error, Result};
use crate::seed;

/// Randomly subsamples the majority class, without replacement, down to the
/// minority count. Minority samples and relative order are kept.
pub fn undersample_balance(dataset: &LabelledDataset, seed: u64) -> Result<LabelledDataset> {
    let counts = dataset.class_counts();
    if counts.benign == 0 || counts.malignant == 0 {
        return Err(Error::Data(format!(
            "cannot balance a single-class dataset (benign {}, malignant {})",
            counts.benign, counts.malignant
        )));
    }
    if counts.benign == counts.malignant {
        return Ok(dataset.clone());
    }
    let (majority, keep) = if counts.benign > counts.malignant {
        (Label::Benign, counts.malignant)
    } else {
        (Label::Malignant, counts.benign)
    };
    let mut majority_idx: Vec<usize> = dataset
        .samples()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.label == majority)
        .map(|(i, _)| i)
        .collect();
    majority_idx.shuffle(&mut seed::rng(seed, "undersample"));
    let mut selected = vec![false; dataset.len()];
    for &i in &majority_idx[..keep] {
        selected[i] = true;
    }
    let samples = dataset
        .samples()
        .iter()
        .enumerate()
        .filter(|(i, s)| s.label != majority || selected[*i])
        .map(|(_, s)| s.clone())
        .collect();
    LabelledDataset::new(samples)
}

/// Concatenates two disjoint datasets and applies a seeded permutation.
pub fn merge_and_shuffle(original: &LabelledDataset, synthetic: &LabelledDataset, seed: u64) -> Result<LabelledDataset> {
    let mut samples = original.samples().to_vec();
    samples.extend_from_slice(synthetic.samples());
    samples.shuffle(&mut seed::rng(seed, "merge_shuffle"));
    let mut merged = LabelledDataset::new(samples).map_err(|e| Error::Data(format!("id collision while merging: {e}")))?;
    merged.permutation_seed = Some(seed);
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::super::{ClassCounts, LabelledSample, Provenance};
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn balances_727_to_173() {
        let d = dataset(727, 173);
        let b = undersample_balance(&d, 3).unwrap();
        assert_eq!(b.class_counts(), ClassCounts { benign: 173, malignant: 173 });
        let all: HashSet<_> = d.ids().into_iter().collect();
        assert!(b.ids().iter().all(|id| all.contains(id)));
        assert_eq!(undersample_balance(&d, 3).unwrap().ids(), b.ids());
        assert_ne!(undersample_balance(&d, 4).unwrap().ids(), b.ids());
    }

    #[test]
    fn balanced_input_is_untouched_and_single_class_fails() {
        let d = dataset(50, 50);
        assert_eq!(undersample_balance(&d, 1).unwrap(), d);
        assert!(undersample_balance(&dataset(5, 0), 1).is_err());
    }

    #[test]
    fn merge_counts_and_determinism() {
        let original = dataset(727, 173);
        let synthetic = LabelledDataset::new(
            original
                .with_label(Label::Benign)
                .samples()
                .iter()
                .map(|s| LabelledSample {
                    id: format!("syn_{}", s.id),
                    label: Label::Malignant,
                    provenance: Provenance::Synthetic { source_id: s.id.clone() },
                    image: s.image.clone(),
                })
                .collect(),
        )
        .unwrap();
        let merged = merge_and_shuffle(&original, &synthetic, 9).unwrap();
        assert_eq!(merged.len(), 1627);
        assert_eq!(merged.class_counts(), ClassCounts { benign: 727, malignant: 900 });
        assert_eq!(merged.ids(), merge_and_shuffle(&original, &synthetic, 9).unwrap().ids());
        assert_eq!(merged.permutation_seed, Some(9));
    }

    #[test]
    fn merge_with_empty_and_collisions() {
        let original = dataset(4, 3);
        let merged = merge_and_shuffle(&original, &LabelledDataset::default(), 1).unwrap();
        let mut a = merged.ids();
        let mut b = original.ids();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert!(merge_and_shuffle(&original, &original, 1).is_err());
    }
}
