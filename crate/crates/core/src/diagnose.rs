//! Independence diagnostics for a bagged ensemble.
//!
//! The marginal conditions (identical distribution, better than random,
//! uniform errors) are tested per model. Independence is judged by comparing
//! the ensemble's observed accuracy with what independent members with the
//! same marginals would achieve, estimated two ways: exactly from the fitted
//! advantages, and by shuffling each model's predictions within true-label
//! strata, which keeps every confusion matrix and destroys cross-model
//! alignment.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::exact::exact_plurality_accuracy;
use crate::ingest::Dataset;
use crate::metrics::{confusion_matrix, ensemble_predictions, ConfusionMatrix};
use crate::model::total_variation;
use crate::rng::{self, Domain};
use crate::vote::{plurality_from_counts, TiePolicy};

pub const DEFAULT_TOLERANCE: f64 = 0.05;
pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_MARGIN: f64 = 0.01;
pub const DEFAULT_PERMUTATIONS: usize = 200;
pub const DEFAULT_BOOTSTRAP: usize = 200;
pub const DEFAULT_MIN_RECORDS: usize = 100;
pub const MIN_PERMUTATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionOptions {
    /// Largest allowed total-variation distance between models.
    pub tolerance: f64,
    /// Significance level of the per-model tests.
    pub alpha: f64,
    pub min_records: usize,
}

impl Default for ConditionOptions {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            alpha: DEFAULT_ALPHA,
            min_records: DEFAULT_MIN_RECORDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelConditionStats {
    pub model: String,
    pub accuracy: f64,
    /// One-sided exact binomial p-value of `accuracy > 1/k`.
    pub binomial_p_value: f64,
    /// Pooled chi-square of error uniformity over wrong labels.
    pub chi_square: f64,
    pub chi_square_df: usize,
    pub chi_square_p_value: f64,
    /// Largest per-row wrong-label rate.
    pub max_wrong_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionResults {
    pub identical: bool,
    pub max_pairwise_tv: f64,
    pub better_than_random: bool,
    pub uniform_errors: bool,
    pub per_model: Vec<ModelConditionStats>,
}

fn columns(dataset: &Dataset, models: &[&str]) -> Result<Vec<Vec<usize>>> {
    if models.len() < 2 {
        return Err(Error::invalid("diagnostics need at least 2 models"));
    }
    models.iter().map(|m| dataset.model_column(m)).collect()
}

fn column_confusion(truth: &[usize], column: &[usize], k: usize) -> Result<ConfusionMatrix> {
    let pairs: Vec<(usize, usize)> = truth.iter().copied().zip(column.iter().copied()).collect();
    confusion_matrix(&pairs, k)
}

/// Largest row-wise total-variation distance between two confusion matrices.
fn matrix_distance(a: &ConfusionMatrix, b: &ConfusionMatrix) -> f64 {
    (1..=a.k())
        .map(|t| total_variation(&a.row_distribution(t), &b.row_distribution(t)))
        .fold(0.0, f64::max)
}

/// `P(X >= hits)` for `X ~ Bin(n, p)`.
fn binomial_upper_tail(hits: u64, n: u64, p: f64) -> f64 {
    if hits == 0 {
        return 1.0;
    }
    let dist = Binomial::new(p, n).expect("valid binomial parameters");
    dist.sf(hits - 1).clamp(0.0, 1.0)
}

/// Chi-square of wrong-label counts against uniformity, pooled over true rows.
fn error_uniformity(cm: &ConfusionMatrix) -> (f64, usize, f64) {
    let k = cm.k();
    let mut stat = 0.0;
    let mut df = 0usize;
    for t in 1..=k {
        let wrong: Vec<u64> = (1..=k).filter(|&p| p != t).map(|p| cm.get(t, p)).collect();
        let errors: u64 = wrong.iter().sum();
        if errors == 0 || wrong.len() < 2 {
            continue;
        }
        let expected = errors as f64 / wrong.len() as f64;
        stat += wrong.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum::<f64>();
        df += wrong.len() - 1;
    }
    let p = if df == 0 {
        1.0
    } else {
        ChiSquared::new(df as f64).expect("positive df").sf(stat)
    };
    (stat, df, p)
}

pub fn check_conditions(dataset: &Dataset, models: &[&str], options: &ConditionOptions) -> Result<ConditionResults> {
    let cols = columns(dataset, models)?;
    if dataset.len() < options.min_records {
        return Err(Error::invalid(format!(
            "need at least {} records, have {}",
            options.min_records,
            dataset.len()
        )));
    }
    let k = dataset.labels().k();
    let truth = dataset.true_labels();
    for label in 1..=k {
        if !truth.contains(&label) {
            return Err(Error::invalid(format!(
                "class {:?} never occurs as a true label",
                dataset.labels().name(label).unwrap_or("?")
            )));
        }
    }

    let matrices: Vec<ConfusionMatrix> = cols
        .iter()
        .map(|c| column_confusion(&truth, c, k))
        .collect::<Result<_>>()?;
    let mut max_pairwise_tv = 0.0f64;
    for (i, a) in matrices.iter().enumerate() {
        for b in &matrices[i + 1..] {
            max_pairwise_tv = max_pairwise_tv.max(matrix_distance(a, b));
        }
    }

    let chance = 1.0 / k as f64;
    let per_model: Vec<ModelConditionStats> = models
        .iter()
        .zip(&matrices)
        .map(|(name, cm)| {
            let (chi_square, chi_square_df, chi_square_p_value) = error_uniformity(cm);
            let max_wrong_rate = (1..=k)
                .flat_map(|t| (1..=k).filter(move |&p| p != t).map(move |p| (t, p)))
                .map(|(t, p)| cm.get(t, p) as f64 / cm.row_sum(t) as f64)
                .fold(0.0, f64::max);
            ModelConditionStats {
                model: name.to_string(),
                accuracy: cm.accuracy(),
                binomial_p_value: binomial_upper_tail(cm.trace(), cm.total(), chance),
                chi_square,
                chi_square_df,
                chi_square_p_value,
                max_wrong_rate,
            }
        })
        .collect();

    Ok(ConditionResults {
        identical: max_pairwise_tv <= options.tolerance,
        max_pairwise_tv,
        better_than_random: per_model.iter().all(|m| m.binomial_p_value < options.alpha),
        uniform_errors: per_model
            .iter()
            .all(|m| m.chi_square_p_value >= options.alpha && m.max_wrong_rate < chance),
        per_model,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndependenceOptions {
    pub tie_policy: TiePolicy,
    /// Bootstrap resamples for the observed-accuracy interval; 0 skips it.
    pub bootstrap: usize,
    pub permutations: usize,
    pub seed: u64,
    /// Required shortfall below the parametric prediction.
    pub margin: f64,
    /// Two-sided level of the permutation and bootstrap intervals.
    pub alpha: f64,
}

impl Default for IndependenceOptions {
    fn default() -> Self {
        Self {
            tie_policy: TiePolicy::UniformRandom,
            bootstrap: DEFAULT_BOOTSTRAP,
            permutations: DEFAULT_PERMUTATIONS,
            seed: 0,
            margin: DEFAULT_MARGIN,
            alpha: DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Consistent,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndependenceResult {
    pub predicted_accuracy_parametric: f64,
    pub predicted_accuracy_permutation_mean: f64,
    pub predicted_accuracy_permutation_ci: (f64, f64),
    pub observed_ensemble_accuracy: f64,
    pub observed_ci: Option<(f64, f64)>,
    pub best_solo_accuracy: f64,
    /// observed minus parametric prediction
    pub gap: f64,
    pub verdict: Verdict,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn interval(mut values: Vec<f64>, alpha: f64) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    (quantile(&values, alpha / 2.0), quantile(&values, 1.0 - alpha / 2.0))
}

/// Row indices grouped by true label.
fn strata(truth: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); k];
    for (i, &t) in truth.iter().enumerate() {
        groups[t - 1].push(i);
    }
    groups
}

fn shuffle_within<R: Rng>(column: &[usize], groups: &[Vec<usize>], rng: &mut R) -> Vec<usize> {
    let mut out = column.to_vec();
    for group in groups {
        let mut values: Vec<usize> = group.iter().map(|&i| column[i]).collect();
        values.shuffle(rng);
        for (&i, v) in group.iter().zip(values) {
            out[i] = v;
        }
    }
    out
}

fn bagged_accuracy<R: Rng>(truth: &[usize], cols: &[Vec<usize>], k: usize, policy: TiePolicy, rng: &mut R) -> f64 {
    let mut counts = vec![0u64; k];
    let hits = truth
        .iter()
        .enumerate()
        .filter(|&(i, &t)| {
            counts.fill(0);
            for c in cols {
                counts[c[i] - 1] += 1;
            }
            plurality_from_counts(&counts, policy, rng).is(t)
        })
        .count();
    hits as f64 / truth.len() as f64
}

/// The model columns after permutation replicate `replicate`: each column is
/// shuffled within true-label strata.
pub fn permuted_columns(dataset: &Dataset, models: &[&str], seed: u64, replicate: u64) -> Result<Vec<Vec<usize>>> {
    let cols = columns(dataset, models)?;
    let groups = strata(&dataset.true_labels(), dataset.labels().k());
    let mut rng = rng::stream(seed, Domain::Permutation, 0, replicate);
    Ok(cols.iter().map(|c| shuffle_within(c, &groups, &mut rng)).collect())
}

pub fn independence_gap(dataset: &Dataset, models: &[&str], options: &IndependenceOptions) -> Result<IndependenceResult> {
    if options.permutations < MIN_PERMUTATIONS {
        return Err(Error::invalid(format!(
            "at least {MIN_PERMUTATIONS} permutations are needed for a meaningful interval, got {}",
            options.permutations
        )));
    }
    let cols = columns(dataset, models)?;
    if dataset.is_empty() {
        return Err(Error::invalid("dataset has no records"));
    }
    let k = dataset.labels().k();
    let truth = dataset.true_labels();
    let kf = k as f64;

    let accuracies: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().zip(&truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64)
        .collect();
    let best_solo_accuracy = accuracies.iter().copied().fold(0.0, f64::max);
    // keep fitted advantages strictly inside the model's domain
    let lower = -1.0 / kf + 1e-12;
    let upper = (kf - 1.0) / kf;
    let fitted: Vec<f64> = accuracies.iter().map(|acc| (acc - 1.0 / kf).clamp(lower, upper)).collect();
    let predicted_accuracy_parametric = exact_plurality_accuracy(k, &fitted, options.tie_policy)?;

    let groups = strata(&truth, k);
    let permuted: Vec<f64> = (0..options.permutations as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(options.seed, Domain::Permutation, 0, r);
            let shuffled: Vec<Vec<usize>> = cols.iter().map(|c| shuffle_within(c, &groups, &mut rng)).collect();
            bagged_accuracy(&truth, &shuffled, k, options.tie_policy, &mut rng)
        })
        .collect();
    let predicted_accuracy_permutation_mean = permuted.iter().sum::<f64>() / permuted.len() as f64;
    let predicted_accuracy_permutation_ci = interval(permuted, options.alpha);

    let predictions = ensemble_predictions(dataset, models, options.tie_policy, options.seed)?;
    let correct: Vec<bool> = predictions.iter().zip(&truth).map(|(p, &t)| p.is(t)).collect();
    let observed_ensemble_accuracy = correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64;

    let observed_ci = (options.bootstrap > 0).then(|| {
        let n = correct.len();
        let resampled: Vec<f64> = (0..options.bootstrap as u64)
            .into_par_iter()
            .map(|b| {
                let mut rng = rng::stream(options.seed, Domain::Bootstrap, 0, b);
                (0..n).filter(|_| correct[rng.gen_range(0..n)]).count() as f64 / n as f64
            })
            .collect();
        interval(resampled, options.alpha)
    });

    let rejected = observed_ensemble_accuracy < predicted_accuracy_permutation_ci.0
        && observed_ensemble_accuracy < predicted_accuracy_parametric - options.margin;

    Ok(IndependenceResult {
        predicted_accuracy_parametric,
        predicted_accuracy_permutation_mean,
        predicted_accuracy_permutation_ci,
        observed_ensemble_accuracy,
        observed_ci,
        best_solo_accuracy,
        gap: observed_ensemble_accuracy - predicted_accuracy_parametric,
        verdict: if rejected { Verdict::Rejected } else { Verdict::Consistent },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticReport {
    pub models: Vec<String>,
    pub records: usize,
    pub conditions: ConditionResults,
    pub independence: IndependenceResult,
}

pub fn diagnose(
    dataset: &Dataset,
    models: &[&str],
    conditions: &ConditionOptions,
    independence: &IndependenceOptions,
) -> Result<DiagnosticReport> {
    Ok(DiagnosticReport {
        models: models.iter().map(|m| m.to_string()).collect(),
        records: dataset.len(),
        conditions: check_conditions(dataset, models, conditions)?,
        independence: independence_gap(dataset, models, independence)?,
    })
}
