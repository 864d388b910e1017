//! Confusion matrices, macro-averaged precision/recall/F1 and bagging deltas.
//!
//! Averaging is macro (unweighted over classes). A class with no predicted
//! (resp. actual) records gets precision (resp. recall) 0. Abstentions count
//! towards their true row, never towards a predicted column, and are never
//! correct.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::rng::{self, Domain};
use crate::vote::{plurality_from_counts, TiePolicy, VoteOutcome};

/// `counts[t][p]`: records with true label `t` and prediction `p` (1-based
/// in the accessors).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<Vec<u64>>,
    abstained: Vec<u64>,
}

impl ConfusionMatrix {
    /// From a `k x k` table, rows = true labels.
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k < 2 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("confusion matrix must be square with k >= 2"));
        }
        let cm = Self {
            k,
            counts,
            abstained: vec![0; k],
        };
        if cm.total() == 0 {
            return Err(Error::invalid("confusion matrix has no records"));
        }
        Ok(cm)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, true_label: usize, predicted: usize) -> u64 {
        self.counts[true_label - 1][predicted - 1]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn abstained(&self, true_label: usize) -> u64 {
        self.abstained[true_label - 1]
    }

    /// Records whose true label is `t`, abstentions included.
    pub fn row_sum(&self, t: usize) -> u64 {
        self.counts[t - 1].iter().sum::<u64>() + self.abstained[t - 1]
    }

    pub fn col_sum(&self, p: usize) -> u64 {
        self.counts.iter().map(|r| r[p - 1]).sum()
    }

    pub fn total(&self) -> u64 {
        (1..=self.k).map(|t| self.row_sum(t)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    pub fn abstention_rate(&self) -> f64 {
        self.abstained.iter().sum::<u64>() as f64 / self.total() as f64
    }

    /// Row `t` normalized by its sum (abstentions excluded from the entries
    /// but included in the denominator).
    pub fn row_distribution(&self, t: usize) -> Vec<f64> {
        let sum = self.row_sum(t) as f64;
        self.counts[t - 1].iter().map(|&c| c as f64 / sum).collect()
    }

    /// Relabels classes: old label `l` becomes `perm[l - 1]`.
    pub fn relabeled(&self, perm: &[usize]) -> Self {
        let mut counts = vec![vec![0u64; self.k]; self.k];
        let mut abstained = vec![0u64; self.k];
        for t in 0..self.k {
            for p in 0..self.k {
                counts[perm[t] - 1][perm[p] - 1] = self.counts[t][p];
            }
            abstained[perm[t] - 1] = self.abstained[t];
        }
        Self {
            k: self.k,
            counts,
            abstained,
        }
    }
}

/// Tallies `(true label, prediction)` pairs.
pub fn confusion_matrix<P>(records: &[(usize, P)], k: usize) -> Result<ConfusionMatrix>
where
    P: Into<VoteOutcome> + Copy,
{
    if k < 2 {
        return Err(Error::invalid(format!("class count k must be >= 2, got {k}")));
    }
    if records.is_empty() {
        return Err(Error::invalid("no records to tabulate"));
    }
    let mut counts = vec![vec![0u64; k]; k];
    let mut abstained = vec![0u64; k];
    for (i, &(t, p)) in records.iter().enumerate() {
        if !(1..=k).contains(&t) {
            return Err(Error::invalid(format!("record {i}: true label {t} outside 1..={k}")));
        }
        match p.into() {
            VoteOutcome::Label(p) if (1..=k).contains(&p) => counts[t - 1][p - 1] += 1,
            VoteOutcome::Label(p) => {
                return Err(Error::invalid(format!(
                    "record {i}: predicted label {p} outside 1..={k}"
                )))
            }
            VoteOutcome::Abstain => abstained[t - 1] += 1,
        }
    }
    Ok(ConfusionMatrix {
        k,
        counts,
        abstained,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub abstention_rate: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics_report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    if cm.total() == 0 {
        return Err(Error::invalid("confusion matrix has no records"));
    }
    let per_class: Vec<ClassMetrics> = (1..=cm.k)
        .map(|c| {
            let diag = cm.get(c, c);
            let precision = ratio(diag, cm.col_sum(c));
            let recall = ratio(diag, cm.row_sum(c));
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / cm.k as f64;
    Ok(MetricsReport {
        accuracy: cm.accuracy(),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        abstention_rate: cm.abstention_rate(),
        per_class,
    })
}

/// Ensemble minus best solo model, per metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaggingDelta {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

impl BaggingDelta {
    /// Rounded to two decimals for display.
    pub fn rounded(&self) -> Self {
        let r = |x: f64| {
            let v = (x * 100.0).round() / 100.0;
            if v == 0.0 {
                0.0
            } else {
                v
            }
        };
        Self {
            f1: r(self.f1),
            precision: r(self.precision),
            recall: r(self.recall),
        }
    }
}

pub fn bagging_delta(ensemble: &MetricsReport, best_solo: &MetricsReport) -> BaggingDelta {
    BaggingDelta {
        f1: ensemble.macro_f1 - best_solo.macro_f1,
        precision: ensemble.macro_precision - best_solo.macro_precision,
        recall: ensemble.macro_recall - best_solo.macro_recall,
    }
}

/// Plurality vote of `models` on every record. Ties are broken with a single
/// stream derived from `seed`, consumed in record order.
pub fn ensemble_predictions(
    dataset: &Dataset,
    models: &[&str],
    policy: TiePolicy,
    seed: u64,
) -> Result<Vec<VoteOutcome>> {
    if models.is_empty() {
        return Err(Error::invalid("ensemble needs at least one model"));
    }
    let columns: Vec<usize> = models
        .iter()
        .map(|m| dataset.model_index(m))
        .collect::<Result<_>>()?;
    let k = dataset.labels().k();
    let mut rng = rng::stream(seed, Domain::Ensemble, 0, 0);
    let mut counts = vec![0u64; k];
    dataset
        .records()
        .iter()
        .map(|record| {
            counts.fill(0);
            for (&col, name) in columns.iter().zip(models) {
                let label = record.predictions[col].ok_or_else(|| {
                    Error::invalid(format!(
                        "record {:?} has no prediction for model {name:?}",
                        record.id
                    ))
                })?;
                counts[label - 1] += 1;
            }
            Ok(plurality_from_counts(&counts, policy, &mut rng))
        })
        .collect()
}

/// Confusion matrix of predictions against the dataset's true labels.
pub fn dataset_confusion(dataset: &Dataset, predictions: &[VoteOutcome]) -> Result<ConfusionMatrix> {
    let pairs: Vec<(usize, VoteOutcome)> = dataset
        .records()
        .iter()
        .zip(predictions)
        .map(|(r, &p)| (r.true_label, p))
        .collect();
    confusion_matrix(&pairs, dataset.labels().k())
}

/// Confusion matrix of one model's column.
pub fn model_confusion(dataset: &Dataset, model: &str) -> Result<ConfusionMatrix> {
    let column = dataset.model_column(model)?;
    let pairs: Vec<(usize, usize)> = dataset
        .records()
        .iter()
        .zip(column)
        .map(|(r, p)| (r.true_label, p))
        .collect();
    confusion_matrix(&pairs, dataset.labels().k())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::PredictionRecord;
    use crate::model::LabelSpace;
    use proptest::prelude::*;

    #[test]
    fn confusion_examples() {
        let cm = confusion_matrix(&[(1, 1), (2, 2), (3, 3)], 3).unwrap();
        assert_eq!(cm.rows(), &[vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        assert!(confusion_matrix::<usize>(&[], 3).is_err());
        let cm = confusion_matrix(&[(1, 2), (1, 2)], 2).unwrap();
        assert_eq!(cm.rows(), &[vec![0, 2], vec![0, 0]]);
        let err = confusion_matrix(&[(1, 1), (1, 4)], 3).unwrap_err().to_string();
        assert!(err.contains("record 1"), "{err}");
    }

    #[test]
    fn report_examples() {
        let cm = ConfusionMatrix::from_counts(vec![vec![10, 0, 0], vec![0, 10, 0], vec![0, 0, 10]]).unwrap();
        let r = metrics_report(&cm).unwrap();
        assert_eq!((r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1), (1.0, 1.0, 1.0, 1.0));

        let cm = ConfusionMatrix::from_counts(vec![vec![8, 2], vec![4, 6]]).unwrap();
        let r = metrics_report(&cm).unwrap();
        assert_close!(r.accuracy, 0.7, 1e-15);
        assert_close!(r.per_class[0].precision, 8.0 / 12.0, 1e-15);
        assert_close!(r.per_class[0].recall, 0.8, 1e-15);
        assert_close!(r.per_class[1].precision, 0.75, 1e-15);
        assert_close!(r.per_class[1].recall, 0.6, 1e-15);
        // F1: 2·(2/3)(4/5)/(22/15) = 8/11; 2·(3/4)(3/5)/(27/20) = 2/3
        assert_close!(r.macro_f1, (8.0 / 11.0 + 2.0 / 3.0) / 2.0, 1e-15);
        assert_close!(r.macro_f1, 0.697, 5e-4);

        let cm = ConfusionMatrix::from_counts(vec![vec![5; 3]; 3]).unwrap();
        let r = metrics_report(&cm).unwrap();
        assert_close!(r.accuracy, 1.0 / 3.0, 1e-15);
        assert_close!(r.macro_f1, 1.0 / 3.0, 1e-15);
    }

    #[test]
    fn empty_classes_score_zero() {
        let cm = ConfusionMatrix::from_counts(vec![vec![3, 0], vec![2, 0]]).unwrap();
        let r = metrics_report(&cm).unwrap();
        assert_eq!(r.per_class[1], ClassMetrics { precision: 0.0, recall: 0.0, f1: 0.0 });
        assert!(ConfusionMatrix::from_counts(vec![vec![0, 0], vec![0, 0]]).is_err());
    }

    #[test]
    fn abstentions_hit_recall_only() {
        let recs = [(1, VoteOutcome::Label(1)), (1, VoteOutcome::Abstain), (2, VoteOutcome::Label(2))];
        let cm = confusion_matrix(&recs, 2).unwrap();
        let r = metrics_report(&cm).unwrap();
        assert_close!(r.accuracy, 2.0 / 3.0, 1e-15);
        assert_close!(r.abstention_rate, 1.0 / 3.0, 1e-15);
        assert_eq!(r.per_class[0].precision, 1.0);
        assert_eq!(r.per_class[0].recall, 0.5);
    }

    #[test]
    fn deltas() {
        let report = |f1, precision, recall| MetricsReport {
            accuracy: 0.5,
            macro_precision: precision,
            macro_recall: recall,
            macro_f1: f1,
            abstention_rate: 0.0,
            per_class: vec![],
        };
        let solo = report(0.51, 0.54, 0.53);
        let d = bagging_delta(&solo, &solo);
        assert_eq!((d.f1, d.precision, d.recall), (0.0, 0.0, 0.0));
        let d = bagging_delta(&report(0.51, 0.55, 0.52), &solo).rounded();
        assert_eq!((d.f1, d.precision, d.recall), (0.0, 0.01, -0.01));
        let d = bagging_delta(&report(0.52, 0.54, 0.53), &solo).rounded();
        assert_eq!(d.f1, 0.01);
    }

    fn tiny_dataset(rows: &[(usize, [Option<usize>; 3])]) -> Dataset {
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, (t, preds))| PredictionRecord {
                id: format!("r{i}"),
                date: None,
                true_label: *t,
                predictions: preds.to_vec(),
            })
            .collect();
        Dataset::new(LabelSpace::numbered(3).unwrap(), vec!["a".into(), "b".into(), "c".into()], records).unwrap()
    }

    #[test]
    fn ensemble_examples() {
        let ds = tiny_dataset(&[
            (1, [Some(2), Some(2), Some(2)]),
            (1, [Some(1), Some(2), Some(3)]),
            (2, [Some(2), Some(2), Some(3)]),
        ]);
        let out = ensemble_predictions(&ds, &["a", "b", "c"], TiePolicy::StrictFail, 0).unwrap();
        assert_eq!(out, vec![VoteOutcome::Label(2), VoteOutcome::Abstain, VoteOutcome::Label(2)]);
        let cm = dataset_confusion(&ds, &out).unwrap();
        assert_eq!(cm.abstained(1), 1);
        assert!(ensemble_predictions(&ds, &["a", "zzz"], TiePolicy::StrictFail, 0).is_err());

        let missing = tiny_dataset(&[(1, [Some(1), None, Some(1)])]);
        let err = ensemble_predictions(&missing, &["a", "b"], TiePolicy::StrictFail, 0).unwrap_err().to_string();
        assert!(err.contains("r0") && err.contains("\"b\""), "{err}");
    }

    #[test]
    fn ensemble_is_seed_deterministic() {
        let rows: Vec<(usize, [Option<usize>; 3])> =
            (0..200).map(|i| (1 + i % 3, [Some(1), Some(2), Some(3)])).collect();
        let ds = tiny_dataset(&rows);
        let a = ensemble_predictions(&ds, &["a", "b", "c"], TiePolicy::UniformRandom, 9).unwrap();
        let b = ensemble_predictions(&ds, &["a", "b", "c"], TiePolicy::UniformRandom, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().any(|o| o.is(1)) && a.iter().any(|o| o.is(3)));
    }

    fn matrix_strategy() -> impl Strategy<Value = (Vec<Vec<u64>>, Vec<usize>)> {
        (2usize..6).prop_flat_map(|k| {
            let perm = Just((1..=k).collect::<Vec<_>>()).prop_shuffle();
            (proptest::collection::vec(proptest::collection::vec(0u64..50, k), k), perm)
        })
    }

    proptest! {
        #[test]
        fn relabeling_permutes_per_class_metrics((counts, perm) in matrix_strategy()) {
            prop_assume!(counts.iter().flatten().sum::<u64>() > 0);
            let cm = ConfusionMatrix::from_counts(counts).unwrap();
            let a = metrics_report(&cm).unwrap();
            let b = metrics_report(&cm.relabeled(&perm)).unwrap();
            for (old, &new) in perm.iter().enumerate() {
                prop_assert_eq!(a.per_class[old], b.per_class[new - 1]);
            }
            prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
            prop_assert!((a.macro_precision - b.macro_precision).abs() < 1e-12);
            prop_assert!((a.macro_recall - b.macro_recall).abs() < 1e-12);
            prop_assert_eq!(a.accuracy, b.accuracy);
        }

        #[test]
        fn accuracy_matches_raw_agreement(pairs in proptest::collection::vec((1usize..=4, 1usize..=4), 1..200)) {
            let cm = confusion_matrix(&pairs, 4).unwrap();
            let agree = pairs.iter().filter(|(t, p)| t == p).count() as f64 / pairs.len() as f64;
            prop_assert_eq!(metrics_report(&cm).unwrap().accuracy, agree);
            let r = metrics_report(&cm).unwrap();
            prop_assert_eq!(bagging_delta(&r, &r), BaggingDelta { f1: 0.0, precision: 0.0, recall: 0.0 });
        }
    }
}
