use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::NUM_CLASSES;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate(predictions: &[usize], labels: &[usize]) -> Result<Metrics> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::Data(format!(
            "need equal non-empty prediction and label lists, got {} and {}",
            predictions.len(),
            labels.len()
        )));
    }
    let mut confusion = vec![vec![0usize; NUM_CLASSES]; NUM_CLASSES];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= NUM_CLASSES || l >= NUM_CLASSES {
            return Err(Error::Label(format!("class index {}", p.max(l))));
        }
        confusion[l][p] += 1;
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let per_class: Vec<ClassMetrics> = (0..NUM_CLASSES)
        .map(|c| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let n = labels.len() as f64;
    let weighted_f1 = per_class.iter().map(|c| c.f1 * c.support as f64).sum::<f64>() / n;
    let correct: usize = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
    Ok(Metrics {
        weighted_f1,
        accuracy: correct as f64 / n,
        per_class,
        confusion,
    })
}

pub fn weighted_f1(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    Ok(evaluate(predictions, labels)?.weighted_f1)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    const NEG: usize = 0;
    const POS: usize = 2;

    #[test]
    fn perfect_is_one() {
        assert_eq!(weighted_f1(&[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap(), 1.0);
    }

    #[test]
    fn hand_computed_two_thirds() {
        let f = weighted_f1(&[POS, NEG, NEG], &[POS, POS, NEG]).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_class_predictions_on_uniform_labels() {
        let f = weighted_f1(&[0, 0, 0], &[0, 1, 2]).unwrap();
        assert!((f - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn empty_and_mismatched_rejected() {
        assert!(weighted_f1(&[], &[]).is_err());
        assert!(weighted_f1(&[0], &[0, 1]).is_err());
        assert!(matches!(weighted_f1(&[3], &[0]), Err(Error::Label(_))));
    }

    #[test]
    fn confusion_rows_match_support() {
        let m = evaluate(&[0, 1, 1, 2, 0], &[0, 1, 2, 2, 2]).unwrap();
        for (c, row) in m.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), m.per_class[c].support);
        }
    }

    proptest! {
        #[test]
        fn invariant_under_relabeling(pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..60), perm in Just([0usize, 1, 2]).prop_shuffle()) {
            let (p, l): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let base = weighted_f1(&p, &l).unwrap();
            let pp: Vec<usize> = p.iter().map(|&x| perm[x]).collect();
            let ll: Vec<usize> = l.iter().map(|&x| perm[x]).collect();
            let relabeled = weighted_f1(&pp, &ll).unwrap();
            prop_assert!((base - relabeled).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&base));
        }

        #[test]
        fn per_class_recombines(pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..60)) {
            let (p, l): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let m = evaluate(&p, &l).unwrap();
            let re: f64 = m.per_class.iter().map(|c| c.f1 * c.support as f64 / l.len() as f64).sum();
            prop_assert!((re - m.weighted_f1).abs() <= 1e-12);
        }
    }
}
