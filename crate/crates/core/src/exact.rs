//! Exact ensemble accuracy for independent classifiers.
//!
//! The plurality rule is evaluated by dynamic programming over count vectors:
//! classifiers are folded in one at a time and each layer holds the
//! probability of every composition of the processed count into `k` parts.
//! The true label is canonically `k`.

use crate::error::{Error, Result};
use crate::model::UbtcaPmf;
use crate::vote::{score_exceeds_threshold, win_credit, Rule, TiePolicy};

/// Default upper bound on the number of count vectors in one DP layer.
pub const DEFAULT_STATE_CAP: u128 = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactOptions {
    pub state_cap: u128,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self {
            state_cap: DEFAULT_STATE_CAP,
        }
    }
}

/// Accuracy plus bookkeeping from one DP run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactOutcome {
    pub accuracy: f64,
    /// Largest `|Σ mass - 1|` seen over all layers.
    pub max_mass_error: f64,
    /// Count vectors in the final layer.
    pub states: usize,
}

/// `C(n, r)`, saturating at `u128::MAX`.
fn binomial(n: u128, r: u128) -> u128 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Number of weak compositions of `m` into `k` parts.
pub fn composition_count(m: usize, k: usize) -> u128 {
    binomial((m + k - 1) as u128, (k - 1) as u128)
}

/// Ranks weak compositions of a fixed total into `0..C(m+k-1, k-1)` via the
/// combinatorial number system on stars-and-bars positions.
struct Ranker {
    /// `table[p][i] = C(p, i)`
    table: Vec<Vec<usize>>,
}

impl Ranker {
    fn new(max_total: usize, k: usize) -> Self {
        let rows = max_total + k;
        let table = (0..rows)
            .map(|p| (0..k).map(|i| binomial(p as u128, i as u128) as usize).collect())
            .collect();
        Self { table }
    }

    fn rank(&self, counts: &[u32]) -> usize {
        let mut rank = 0;
        let mut position = 0usize;
        for (i, &c) in counts[..counts.len() - 1].iter().enumerate() {
            position += c as usize;
            // bar i+1 sits at position (prefix sum) + i
            rank += self.table[position + i][i + 1];
        }
        rank
    }
}

/// Steps `counts` to the next weak composition with the same total.
/// Returns `false` once every composition has been visited.
fn next_composition(counts: &mut [u32]) -> bool {
    let last = counts.len() - 1;
    let tail = counts[last];
    counts[last] = 0;
    match counts[..last].iter().rposition(|&c| c > 0) {
        Some(i) => {
            counts[i] -= 1;
            counts[i + 1] = tail + 1;
            true
        }
        None => {
            counts[last] = tail;
            false
        }
    }
}

fn pmfs_for(k: usize, advantages: &[f64]) -> Result<Vec<UbtcaPmf>> {
    if advantages.is_empty() {
        return Err(Error::invalid("need at least one classifier"));
    }
    advantages
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            UbtcaPmf::new(k, a).map_err(|e| match e {
                Error::Domain(msg) => Error::Domain(format!("classifier {}: {msg}", i + 1)),
                other => other,
            })
        })
        .collect()
}

/// Plurality accuracy with full DP diagnostics.
pub fn exact_plurality(
    k: usize,
    advantages: &[f64],
    policy: TiePolicy,
    options: &ExactOptions,
) -> Result<ExactOutcome> {
    let pmfs = pmfs_for(k, advantages)?;
    let n = pmfs.len();
    let states = composition_count(n, k);
    if states > options.state_cap {
        return Err(Error::StateCap {
            states,
            cap: options.state_cap,
        });
    }

    let ranker = Ranker::new(n, k);
    let mut current = vec![1.0f64]; // the empty profile
    let mut max_mass_error = 0.0f64;
    let mut counts = vec![0u32; k];

    for (m, pmf) in pmfs.iter().enumerate() {
        let probs = pmf.to_vec();
        let mut next = vec![0.0f64; composition_count(m + 1, k) as usize];
        counts.fill(0);
        counts[0] = m as u32;
        loop {
            let mass = current[ranker.rank(&counts)];
            if mass != 0.0 {
                for (j, &p) in probs.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    counts[j] += 1;
                    next[ranker.rank(&counts)] += mass * p;
                    counts[j] -= 1;
                }
            }
            if !next_composition(&mut counts) {
                break;
            }
        }
        let total: f64 = next.iter().sum();
        max_mass_error = max_mass_error.max((total - 1.0).abs());
        current = next;
    }

    let mut accuracy = 0.0;
    let mut wide = vec![0u64; k];
    counts.fill(0);
    counts[0] = n as u32;
    loop {
        let mass = current[ranker.rank(&counts)];
        if mass != 0.0 {
            for (w, &c) in wide.iter_mut().zip(&counts) {
                *w = u64::from(c);
            }
            accuracy += mass * win_credit(&wide, k, policy);
        }
        if !next_composition(&mut counts) {
            break;
        }
    }

    Ok(ExactOutcome {
        accuracy,
        max_mass_error,
        states: current.len(),
    })
}

/// Probability that a plurality vote of independent classifiers with the
/// given advantages names the true label.
pub fn exact_plurality_accuracy(k: usize, advantages: &[f64], policy: TiePolicy) -> Result<f64> {
    Ok(exact_plurality(k, advantages, policy, &ExactOptions::default())?.accuracy)
}

/// Probability that the mean vote exceeds `(k+1)/2`, by DP over the vote sum.
pub fn exact_score_threshold_accuracy(k: usize, advantages: &[f64]) -> Result<f64> {
    let pmfs = pmfs_for(k, advantages)?;
    let n = pmfs.len();
    // index s holds P(S = s + processed)
    let mut current = vec![1.0f64];
    for pmf in &pmfs {
        let probs = pmf.to_vec();
        let mut next = vec![0.0f64; current.len() + k - 1];
        for (s, &mass) in current.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (j, &p) in probs.iter().enumerate() {
                next[s + j] += mass * p;
            }
        }
        current = next;
    }
    Ok(current
        .iter()
        .enumerate()
        .filter(|(offset, _)| score_exceeds_threshold((offset + n) as u64, n as u64, k as u64))
        .map(|(_, &mass)| mass)
        .sum())
}

/// Baseline accuracy of a single classifier, `1/k + a`.
pub fn single_classifier_accuracy(k: usize, a: f64) -> Result<f64> {
    Ok(UbtcaPmf::new(k, a)?.p_true())
}

/// Exact accuracy for `rule` over independent classifiers.
pub fn exact_accuracy(k: usize, advantages: &[f64], rule: Rule, policy: TiePolicy) -> Result<f64> {
    match rule {
        Rule::Plurality => exact_plurality_accuracy(k, advantages, policy),
        Rule::ScoreThreshold => exact_score_threshold_accuracy(k, advantages),
    }
}

/// Accuracy of `n` identical classifiers under the common-cause mixture:
/// with probability `rho` all copy one shared draw, otherwise they vote
/// independently, so the result is linear in `rho` between the two endpoints.
pub fn mixture_accuracy(
    k: usize,
    n: usize,
    a: f64,
    rho: f64,
    rule: Rule,
    policy: TiePolicy,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::domain(format!("rho must lie in [0, 1], got {rho}")));
    }
    let shared = exact_accuracy(k, &[a], rule, policy)?;
    let independent = exact_accuracy(k, &vec![a; n], rule, policy)?;
    Ok(rho * shared + (1.0 - rho) * independent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute force over all k^n vote strings.
    fn enumerate(k: usize, advantages: &[f64], mut credit: impl FnMut(&[usize]) -> f64) -> f64 {
        let n = advantages.len();
        let pmfs: Vec<UbtcaPmf> = advantages.iter().map(|&a| UbtcaPmf::new(k, a).unwrap()).collect();
        let mut votes = vec![1usize; n];
        let mut total = 0.0;
        loop {
            let p: f64 = votes.iter().zip(&pmfs).map(|(&v, pmf)| pmf.prob(v)).product();
            total += p * credit(&votes);
            let mut i = 0;
            loop {
                if i == n {
                    return total;
                }
                votes[i] += 1;
                if votes[i] <= k {
                    break;
                }
                votes[i] = 1;
                i += 1;
            }
        }
    }

    fn brute_plurality(k: usize, advantages: &[f64], policy: TiePolicy) -> f64 {
        enumerate(k, advantages, |votes| {
            let mut counts = vec![0u64; k];
            for &v in votes {
                counts[v - 1] += 1;
            }
            win_credit(&counts, k, policy)
        })
    }

    fn brute_score(k: usize, advantages: &[f64]) -> f64 {
        enumerate(k, advantages, |votes| {
            let s: usize = votes.iter().sum();
            if 2 * s > votes.len() * (k + 1) {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn ranks_are_a_bijection() {
        for k in 2..=5 {
            for m in 0..=6 {
                let ranker = Ranker::new(m, k);
                let total = composition_count(m, k) as usize;
                let mut seen = vec![false; total];
                let mut counts = vec![0u32; k];
                counts[0] = m as u32;
                let mut visited = 0;
                loop {
                    assert_eq!(counts.iter().sum::<u32>(), m as u32);
                    let r = ranker.rank(&counts);
                    assert!(!seen[r], "rank {r} repeated");
                    seen[r] = true;
                    visited += 1;
                    if !next_composition(&mut counts) {
                        break;
                    }
                }
                assert_eq!(visited, total);
            }
        }
    }

    #[test]
    fn single_classifier_is_p_true() {
        for policy in [TiePolicy::StrictFail, TiePolicy::UniformRandom, TiePolicy::LowestIndex] {
            assert_close!(exact_plurality_accuracy(3, &[0.1], policy).unwrap(), 0.43333333333333335, 1e-15);
        }
    }

    #[test]
    fn frozen_examples() {
        // binomial: 0.6^3 + 3 * 0.6^2 * 0.4
        assert_close!(exact_plurality_accuracy(2, &[0.1; 3], TiePolicy::UniformRandom).unwrap(), 0.648, 1e-12);
        // 27 vote triples, 1/3 credit on the 1-1-1 split
        assert_close!(
            exact_plurality_accuracy(3, &[0.1; 3], TiePolicy::UniformRandom).unwrap(),
            0.4701666666666666,
            1e-12
        );
        assert_close!(
            exact_plurality_accuracy(3, &[0.1; 3], TiePolicy::StrictFail).unwrap(),
            0.4005925925925926,
            1e-12
        );
        // independent 0.53-accuracy models
        let a = 0.53 - 1.0 / 3.0;
        assert_close!(
            exact_plurality_accuracy(3, &[a; 3], TiePolicy::UniformRandom).unwrap(),
            0.6034845,
            1e-9
        );
    }

    #[test]
    fn score_threshold_examples() {
        assert_close!(exact_score_threshold_accuracy(2, &[0.1; 3]).unwrap(), 0.648, 1e-12);
        assert_close!(exact_score_threshold_accuracy(3, &[0.1]).unwrap(), 0.43333333333333335, 1e-15);
        // (2,3), (3,2), (3,3) out of 9 pairs
        assert_close!(exact_score_threshold_accuracy(3, &[0.0; 2]).unwrap(), 1.0 / 3.0, 1e-15);
        // by convolution of the per-vote pmfs
        assert_close!(exact_score_threshold_accuracy(3, &[0.1; 101]).unwrap(), 0.9591622344828113, 1e-10);
        assert_close!(exact_score_threshold_accuracy(2, &[0.1; 101]).unwrap(), 0.9791033089952994, 1e-10);
    }

    #[test]
    fn single_classifier_baseline() {
        assert_close!(single_classifier_accuracy(3, 0.1).unwrap(), 0.43333333333333335, 1e-15);
        assert_close!(single_classifier_accuracy(3, 0.0).unwrap(), 1.0 / 3.0, 1e-15);
        assert_close!(single_classifier_accuracy(4, 0.25).unwrap(), 0.5, 1e-15);
    }

    #[test]
    fn dp_matches_enumeration() {
        let grid = [0.0, 0.1, 0.3, -0.2];
        for k in 2..=3 {
            for n in 1..=4 {
                for (i, &a) in grid.iter().enumerate() {
                    // a heterogeneous list too
                    let mixed: Vec<f64> = (0..n).map(|j| grid[(i + j) % grid.len()] / k as f64).collect();
                    for advs in [vec![a; n], mixed] {
                        for policy in [TiePolicy::StrictFail, TiePolicy::UniformRandom, TiePolicy::LowestIndex] {
                            let dp = exact_plurality(k, &advs, policy, &ExactOptions::default()).unwrap();
                            assert_close!(dp.accuracy, brute_plurality(k, &advs, policy), 1e-12);
                            assert!(dp.max_mass_error <= 1e-10);
                        }
                        assert_close!(
                            exact_score_threshold_accuracy(k, &advs).unwrap(),
                            brute_score(k, &advs),
                            1e-12
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn layers_stay_normalized_on_large_runs() {
        let out = exact_plurality(5, &[0.05; 31], TiePolicy::UniformRandom, &ExactOptions::default()).unwrap();
        assert!(out.max_mass_error <= 1e-10, "{}", out.max_mass_error);
        assert_eq!(out.states as u128, composition_count(31, 5));
    }

    #[test]
    fn state_cap_is_enforced() {
        let options = ExactOptions { state_cap: 1000 };
        let err = exact_plurality(5, &[0.1; 20], TiePolicy::UniformRandom, &options).unwrap_err();
        assert!(matches!(err, Error::StateCap { .. }));
        assert!(err.to_string().contains("simulate"));
    }

    #[test]
    fn invalid_inputs() {
        assert!(exact_plurality_accuracy(3, &[], TiePolicy::UniformRandom).is_err());
        assert!(exact_plurality_accuracy(3, &[0.1, 0.9], TiePolicy::UniformRandom).is_err());
        assert!(exact_score_threshold_accuracy(1, &[0.0]).is_err());
    }

    #[test]
    fn condorcet_growth_and_converse() {
        for k in [2usize, 3, 5] {
            for a in [0.05, 0.1, 0.3] {
                let single = single_classifier_accuracy(k, a).unwrap();
                let mut prev = 0.0;
                for n in (1..=31).step_by(2) {
                    let acc = exact_plurality_accuracy(k, &vec![a; n], TiePolicy::UniformRandom).unwrap();
                    assert!(acc >= prev - 1e-12, "k={k} a={a} n={n}");
                    assert!(acc >= single - 1e-12, "k={k} a={a} n={n}");
                    prev = acc;
                }
                let neg = -a.min(0.5 / k as f64);
                let mut prev = 1.0;
                for n in (1..=31).step_by(2) {
                    let acc = exact_plurality_accuracy(k, &vec![neg; n], TiePolicy::UniformRandom).unwrap();
                    assert!(acc <= prev + 1e-12, "k={k} a={neg} n={n}");
                    if n >= 3 {
                        assert!(acc < 1.0 / k as f64, "k={k} a={neg} n={n}");
                    }
                    prev = acc;
                }
            }
        }
    }

    #[test]
    fn mixture_endpoints() {
        let single = single_classifier_accuracy(3, 0.1).unwrap();
        let indep = exact_plurality_accuracy(3, &[0.1; 11], TiePolicy::UniformRandom).unwrap();
        let m = |rho| mixture_accuracy(3, 11, 0.1, rho, Rule::Plurality, TiePolicy::UniformRandom).unwrap();
        assert_close!(m(1.0), single, 1e-15);
        assert_close!(m(0.0), indep, 1e-15);
        assert!(m(0.5) < m(0.25));
        assert!(mixture_accuracy(3, 11, 0.1, 1.5, Rule::Plurality, TiePolicy::UniformRandom).is_err());
    }

    proptest! {
        #[test]
        fn advantage_order_does_not_matter(
            advs in proptest::collection::vec(-0.3f64..0.6, 1..7),
            rotate in 0usize..7,
        ) {
            let mut rotated = advs.clone();
            rotated.rotate_left(rotate % advs.len());
            rotated.reverse();
            let a = exact_plurality_accuracy(3, &advs, TiePolicy::UniformRandom).unwrap();
            let b = exact_plurality_accuracy(3, &rotated, TiePolicy::UniformRandom).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            let a = exact_score_threshold_accuracy(3, &advs).unwrap();
            let b = exact_score_threshold_accuracy(3, &rotated).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
