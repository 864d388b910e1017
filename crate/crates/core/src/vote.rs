//! Aggregation rules over a profile of votes.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// How a plurality vote resolves a tie for the top count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiePolicy {
    /// Ties abstain; an abstention is never correct.
    StrictFail,
    /// Pick uniformly among the tied labels.
    #[default]
    UniformRandom,
    /// Pick the smallest tied label index.
    LowestIndex,
}

impl fmt::Display for TiePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TiePolicy::StrictFail => "strict-fail",
            TiePolicy::UniformRandom => "uniform-random",
            TiePolicy::LowestIndex => "lowest-index",
        })
    }
}

impl FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict-fail" => Ok(TiePolicy::StrictFail),
            "uniform-random" => Ok(TiePolicy::UniformRandom),
            "lowest-index" => Ok(TiePolicy::LowestIndex),
            _ => Err(Error::invalid(format!(
                "unknown tie policy {s:?} (expected strict-fail, uniform-random or lowest-index)"
            ))),
        }
    }
}

/// Which aggregation rule decides the ensemble label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    #[default]
    Plurality,
    /// Declares the canonical true label `k` when the mean vote exceeds `(k+1)/2`.
    ScoreThreshold,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Plurality => "plurality",
            Rule::ScoreThreshold => "score-threshold",
        })
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plurality" => Ok(Rule::Plurality),
            "score-threshold" => Ok(Rule::ScoreThreshold),
            _ => Err(Error::invalid(format!(
                "unknown rule {s:?} (expected plurality or score-threshold)"
            ))),
        }
    }
}

/// Result of a plurality vote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VoteOutcome {
    Label(usize),
    /// Unresolved tie under [`TiePolicy::StrictFail`].
    Abstain,
}

impl VoteOutcome {
    pub fn label(self) -> Option<usize> {
        match self {
            VoteOutcome::Label(l) => Some(l),
            VoteOutcome::Abstain => None,
        }
    }

    pub fn is(self, label: usize) -> bool {
        self == VoteOutcome::Label(label)
    }
}

impl From<usize> for VoteOutcome {
    fn from(label: usize) -> Self {
        VoteOutcome::Label(label)
    }
}

/// `n >= 1` votes, each a label in `1..=k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteProfile {
    k: usize,
    votes: Vec<usize>,
}

impl VoteProfile {
    pub fn new(k: usize, votes: Vec<usize>) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!("class count k must be >= 2, got {k}")));
        }
        if votes.is_empty() {
            return Err(Error::invalid("empty vote profile"));
        }
        if let Some((i, v)) = votes.iter().enumerate().find(|(_, v)| !(1..=k).contains(*v)) {
            return Err(Error::invalid(format!("vote {i} is {v}, outside 1..={k}")));
        }
        Ok(Self { k, votes })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.votes.len()
    }

    pub fn votes(&self) -> &[usize] {
        &self.votes
    }

    /// `counts[j - 1]` = number of votes for label `j`.
    pub fn counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.k];
        for &v in &self.votes {
            counts[v - 1] += 1;
        }
        counts
    }

    /// Sum of the vote indices.
    pub fn score(&self) -> u64 {
        self.votes.iter().map(|&v| v as u64).sum()
    }
}

/// Labels (1-based) sharing the top count.
pub fn argmax_set(counts: &[u64]) -> Vec<usize> {
    let max = counts.iter().copied().max().unwrap_or(0);
    counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == max)
        .map(|(i, _)| i + 1)
        .collect()
}

/// Plurality decision from a count vector. `rng` is only touched on ties
/// under [`TiePolicy::UniformRandom`].
pub fn plurality_from_counts<R: Rng + ?Sized>(
    counts: &[u64],
    policy: TiePolicy,
    rng: &mut R,
) -> VoteOutcome {
    let max = counts.iter().copied().max().unwrap_or(0);
    let mut tied = 0usize;
    let mut first = 0usize;
    for (i, &c) in counts.iter().enumerate() {
        if c == max {
            if tied == 0 {
                first = i + 1;
            }
            tied += 1;
        }
    }
    if tied == 1 {
        return VoteOutcome::Label(first);
    }
    match policy {
        TiePolicy::StrictFail => VoteOutcome::Abstain,
        TiePolicy::LowestIndex => VoteOutcome::Label(first),
        TiePolicy::UniformRandom => {
            let pick = rng.gen_range(0..tied);
            let label = counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c == max)
                .nth(pick)
                .map(|(i, _)| i + 1)
                .expect("pick is within the tied set");
            VoteOutcome::Label(label)
        }
    }
}

/// Expected credit for `label` from a count vector: 1 for a unique winner,
/// the tie-break share otherwise.
pub fn win_credit(counts: &[u64], label: usize, policy: TiePolicy) -> f64 {
    let max = counts.iter().copied().max().unwrap_or(0);
    if counts[label - 1] != max {
        return 0.0;
    }
    let tied = counts.iter().filter(|&&c| c == max).count();
    if tied == 1 {
        return 1.0;
    }
    match policy {
        TiePolicy::StrictFail => 0.0,
        TiePolicy::UniformRandom => 1.0 / tied as f64,
        TiePolicy::LowestIndex => {
            let lowest = counts.iter().position(|&c| c == max).unwrap() + 1;
            if lowest == label {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Plurality vote over `profile`. A seed is required for uniform-random ties.
pub fn plurality_vote(
    profile: &VoteProfile,
    policy: TiePolicy,
    seed: Option<u64>,
) -> Result<VoteOutcome> {
    let counts = profile.counts();
    match (policy, seed) {
        (TiePolicy::UniformRandom, None) if argmax_set(&counts).len() > 1 => Err(Error::invalid(
            "uniform-random tie-breaking needs a seed",
        )),
        (_, seed) => {
            let mut rng = rng::stream(seed.unwrap_or(0), Domain::Ensemble, 0, 0);
            Ok(plurality_from_counts(&counts, policy, &mut rng))
        }
    }
}

/// Whether the mean vote exceeds `(k+1)/2`, i.e. `2 S > n (k+1)` in integers.
pub fn score_exceeds_threshold(score: u64, n: u64, k: u64) -> bool {
    2 * u128::from(score) > u128::from(n) * u128::from(k + 1)
}

/// The score-threshold rule: true when the profile declares label `k`.
pub fn score_threshold_vote(profile: &VoteProfile) -> bool {
    score_exceeds_threshold(profile.score(), profile.n() as u64, profile.k() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UbtcaPmf;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn profile(k: usize, votes: &[usize]) -> VoteProfile {
        VoteProfile::new(k, votes.to_vec()).unwrap()
    }

    #[test]
    fn plurality_examples() {
        let p = profile(3, &[2, 2, 3, 3, 3]);
        assert_eq!(plurality_vote(&p, TiePolicy::StrictFail, None).unwrap(), VoteOutcome::Label(3));
        let p = profile(3, &[1, 2]);
        assert_eq!(plurality_vote(&p, TiePolicy::StrictFail, None).unwrap(), VoteOutcome::Abstain);
        assert_eq!(plurality_vote(&p, TiePolicy::LowestIndex, None).unwrap(), VoteOutcome::Label(1));
        assert!(plurality_vote(&p, TiePolicy::UniformRandom, None).is_err());
    }

    #[test]
    fn uniform_ties_split_evenly() {
        let p = profile(3, &[1, 1, 2, 2, 3]);
        let seeds = 20_000u64;
        let ones = (0..seeds)
            .filter(|&s| {
                let out = plurality_vote(&p, TiePolicy::UniformRandom, Some(s)).unwrap();
                assert!(matches!(out, VoteOutcome::Label(1 | 2)));
                out.is(1)
            })
            .count();
        let se = (0.25 / seeds as f64).sqrt();
        assert!((ones as f64 / seeds as f64 - 0.5).abs() <= 4.0 * se);
    }

    #[test]
    fn invalid_profiles() {
        assert!(VoteProfile::new(3, vec![]).is_err());
        assert!(VoteProfile::new(3, vec![0]).is_err());
        assert!(VoteProfile::new(3, vec![4]).is_err());
        assert!(VoteProfile::new(1, vec![1]).is_err());
    }

    #[test]
    fn score_threshold_examples() {
        assert!(score_threshold_vote(&profile(3, &[3, 3, 1])));
        assert!(!score_threshold_vote(&profile(3, &[1, 2, 3])));
        assert!(score_threshold_vote(&profile(2, &[2, 2])));
    }

    #[test]
    fn score_threshold_is_exact_at_extremes() {
        // n = 10^6 votes at k = 100, with the mean exactly on the threshold
        let (n, k) = (1_000_000u64, 100u64);
        let boundary = n * (k + 1) / 2;
        assert!(!score_exceeds_threshold(boundary, n, k));
        assert!(score_exceeds_threshold(boundary + 1, n, k));
        assert!(!score_exceeds_threshold(boundary - 1, n, k));
        // odd n with odd k+1: the threshold n(k+1)/2 is a half-integer
        let n = 999_999u64;
        let half_up = (n * (k + 1)).div_ceil(2);
        assert!(score_exceeds_threshold(half_up, n, k));
        assert!(!score_exceeds_threshold(half_up - 1, n, k));
    }

    #[test]
    fn binary_plurality_agrees_with_score_threshold() {
        for n in (1..=11usize).step_by(2) {
            for mask in 0u32..(1 << n) {
                let votes: Vec<usize> = (0..n).map(|i| 1 + ((mask >> i) & 1) as usize).collect();
                let p = profile(2, &votes);
                let plural = plurality_vote(&p, TiePolicy::StrictFail, None).unwrap().is(2);
                assert_eq!(plural, score_threshold_vote(&p), "{votes:?}");
            }
        }
    }

    #[test]
    fn win_credit_matches_policies() {
        assert_eq!(win_credit(&[1, 1, 1], 3, TiePolicy::UniformRandom), 1.0 / 3.0);
        assert_eq!(win_credit(&[1, 1, 1], 3, TiePolicy::StrictFail), 0.0);
        assert_eq!(win_credit(&[1, 1, 1], 1, TiePolicy::LowestIndex), 1.0);
        assert_eq!(win_credit(&[1, 1, 1], 3, TiePolicy::LowestIndex), 0.0);
        assert_eq!(win_credit(&[0, 1, 2], 3, TiePolicy::StrictFail), 1.0);
        assert_eq!(win_credit(&[2, 1, 0], 3, TiePolicy::UniformRandom), 0.0);
    }

    #[test]
    fn parse_policies_and_rules() {
        for p in [TiePolicy::StrictFail, TiePolicy::UniformRandom, TiePolicy::LowestIndex] {
            assert_eq!(p.to_string().parse::<TiePolicy>().unwrap(), p);
        }
        for r in [Rule::Plurality, Rule::ScoreThreshold] {
            assert_eq!(r.to_string().parse::<Rule>().unwrap(), r);
        }
        assert!("coin".parse::<TiePolicy>().is_err());
    }

    /// Relabeling wrong labels leaves the distribution of plurality
    /// correctness unchanged under uniformly biased sampling.
    #[test]
    fn wrong_label_relabeling_is_fair() {
        let (k, n, trials) = (4usize, 5usize, 100_000u64);
        let pmf = UbtcaPmf::new(k, 0.1).unwrap();
        let perm = [3usize, 1, 2, 4]; // fixes the true label 4
        let mut plain = 0u64;
        let mut relabeled = 0u64;
        for t in 0..trials {
            let mut draw = rng::stream(5, Domain::Trials, 0, t);
            let votes: Vec<usize> = (0..n).map(|_| pmf.sample_canonical(&mut draw)).collect();
            let mut tie_a = rng::stream(5, Domain::Ensemble, 0, t);
            let mut tie_b = rng::stream(5, Domain::Ensemble, 1, t);
            let a = profile(k, &votes);
            let b = profile(k, &votes.iter().map(|&v| perm[v - 1]).collect::<Vec<_>>());
            plain += plurality_from_counts(&a.counts(), TiePolicy::UniformRandom, &mut tie_a).is(k) as u64;
            relabeled += plurality_from_counts(&b.counts(), TiePolicy::UniformRandom, &mut tie_b).is(k) as u64;
        }
        let (pa, pb) = (plain as f64 / trials as f64, relabeled as f64 / trials as f64);
        let se = (pa * (1.0 - pa) / trials as f64 + pb * (1.0 - pb) / trials as f64).sqrt();
        assert!((pa - pb).abs() <= 4.0 * se, "{pa} vs {pb}");
    }

    proptest! {
        #[test]
        fn plurality_is_permutation_invariant(
            votes in proptest::collection::vec(1usize..=4, 1..30),
            seed in any::<u64>(),
        ) {
            let mut shuffled = votes.clone();
            let mut r = rng::stream(seed, Domain::Trials, 0, 0);
            shuffled.shuffle(&mut r);
            let a = profile(4, &votes);
            let b = profile(4, &shuffled);
            for policy in [TiePolicy::StrictFail, TiePolicy::LowestIndex, TiePolicy::UniformRandom] {
                prop_assert_eq!(
                    plurality_vote(&a, policy, Some(seed)).unwrap(),
                    plurality_vote(&b, policy, Some(seed)).unwrap()
                );
            }
            prop_assert_eq!(score_threshold_vote(&a), score_threshold_vote(&b));
        }
    }
}
