//! Seeded Monte Carlo over ensembles of uniformly biased classifiers.
//!
//! Trial `t` of a run draws all of its randomness from
//! `rng::stream(seed, Domain::Trials, lane, t)`, so estimates are identical
//! whatever the size of the rayon pool. Success counts are integers and are
//! summed in any order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{AdvantageSequence, UbtcaPmf};
use crate::rng::{self, Domain};
use crate::vote::{plurality_from_counts, score_exceeds_threshold, Rule, TiePolicy, VoteProfile};

/// Common-cause mixture: with probability `rho` one shared draw is copied to
/// every classifier, otherwise all classifiers draw independently.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DependenceModel {
    rho: f64,
}

impl DependenceModel {
    pub fn new(rho: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::domain(format!("rho must lie in [0, 1], got {rho}")));
        }
        Ok(Self { rho })
    }

    pub fn independent() -> Self {
        Self { rho: 0.0 }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

/// A fully validated experiment configuration.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    k: usize,
    advantages: AdvantageSequence,
    dependence: DependenceModel,
    tie_policy: TiePolicy,
    rule: Rule,
    pmfs: Vec<UbtcaPmf>,
}

impl EnsembleSpec {
    pub fn new(
        k: usize,
        n: usize,
        advantages: AdvantageSequence,
        dependence: DependenceModel,
        tie_policy: TiePolicy,
        rule: Rule,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("ensemble size n must be >= 1"));
        }
        if dependence.rho() > 0.0 && advantages.as_constant().is_none() {
            return Err(Error::invalid(
                "rho > 0 requires a constant advantage (the shared draw needs one reference distribution)",
            ));
        }
        let pmfs = advantages
            .take(n, k)?
            .into_iter()
            .map(|a| UbtcaPmf::new(k, a))
            .collect::<Result<_>>()?;
        Ok(Self {
            k,
            advantages,
            dependence,
            tie_policy,
            rule,
            pmfs,
        })
    }

    /// Independent classifiers sharing a constant advantage.
    pub fn constant(k: usize, n: usize, a: f64, rule: Rule) -> Result<Self> {
        Self::new(
            k,
            n,
            AdvantageSequence::constant(a)?,
            DependenceModel::independent(),
            TiePolicy::UniformRandom,
            rule,
        )
    }

    pub fn with_rho(self, rho: f64) -> Result<Self> {
        let n = self.n();
        Self::new(self.k, n, self.advantages, DependenceModel::new(rho)?, self.tie_policy, self.rule)
    }

    pub fn with_tie_policy(mut self, policy: TiePolicy) -> Self {
        self.tie_policy = policy;
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.pmfs.len()
    }

    pub fn advantages(&self) -> &AdvantageSequence {
        &self.advantages
    }

    pub fn rho(&self) -> f64 {
        self.dependence.rho()
    }

    pub fn tie_policy(&self) -> TiePolicy {
        self.tie_policy
    }

    pub fn rule(&self) -> Rule {
        self.rule
    }

    /// Draws one profile into `votes` (canonical frame, true label `k`).
    fn sample_into(&self, rng: &mut ChaCha8Rng, votes: &mut Vec<usize>) {
        votes.clear();
        let rho = self.dependence.rho();
        if rho > 0.0 && rng.gen::<f64>() < rho {
            let shared = self.pmfs[0].sample_canonical(rng);
            votes.resize(self.pmfs.len(), shared);
        } else {
            votes.extend(self.pmfs.iter().map(|pmf| pmf.sample_canonical(rng)));
        }
    }

    /// Runs one trial and reports whether the rule declared label `k`.
    fn trial(&self, rng: &mut ChaCha8Rng, counts: &mut [u64], votes: &mut Vec<usize>) -> bool {
        self.sample_into(rng, votes);
        let k = self.k;
        match self.rule {
            Rule::ScoreThreshold => {
                let score: u64 = votes.iter().map(|&v| v as u64).sum();
                score_exceeds_threshold(score, votes.len() as u64, k as u64)
            }
            Rule::Plurality => {
                counts.fill(0);
                for &v in votes.iter() {
                    counts[v - 1] += 1;
                }
                plurality_from_counts(counts, self.tie_policy, rng).is(k)
            }
        }
    }
}

/// One profile of `n` votes, reproducible from `(spec, seed)`.
pub fn sample_ensemble_votes(spec: &EnsembleSpec, seed: u64) -> VoteProfile {
    let mut rng = rng::stream(seed, Domain::Trials, 0, 0);
    let mut votes = Vec::with_capacity(spec.n());
    spec.sample_into(&mut rng, &mut votes);
    VoteProfile::new(spec.k, votes).expect("sampled votes are in range")
}

/// Binomial proportion estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn new(successes: u64, trials: u64) -> Self {
        let estimate = successes as f64 / trials as f64;
        Self {
            successes,
            trials,
            estimate,
            stderr: (estimate * (1.0 - estimate) / trials as f64).sqrt(),
        }
    }

    /// `|estimate - target| <= z * stderr`; a zero stderr demands equality.
    pub fn within(&self, target: f64, z: f64) -> bool {
        (self.estimate - target).abs() <= z * self.stderr + 1e-12
    }
}

fn run_trials(spec: &EnsembleSpec, trials: u64, seed: u64, lane: u64) -> Result<Estimate> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    let successes = (0..trials)
        .into_par_iter()
        .map_init(
            || (vec![0u64; spec.k], Vec::with_capacity(spec.n())),
            |(counts, votes), t| {
                let mut rng = rng::stream(seed, Domain::Trials, lane, t);
                u64::from(spec.trial(&mut rng, counts, votes))
            },
        )
        .sum();
    Ok(Estimate::new(successes, trials))
}

/// Fraction of `trials` in which the spec's rule declares the true label.
pub fn mc_accuracy(spec: &EnsembleSpec, trials: u64, seed: u64) -> Result<Estimate> {
    run_trials(spec, trials, seed, 0)
}

/// Empirical accuracy of each individual classifier over `trials` profiles.
pub fn mc_classifier_accuracy(spec: &EnsembleSpec, trials: u64, seed: u64) -> Result<Vec<Estimate>> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    let n = spec.n();
    let k = spec.k;
    let hits = (0..trials)
        .into_par_iter()
        .fold(
            || (vec![0u64; n], Vec::with_capacity(n)),
            |(mut hits, mut votes), t| {
                let mut rng = rng::stream(seed, Domain::Trials, 0, t);
                spec.sample_into(&mut rng, &mut votes);
                for (h, &v) in hits.iter_mut().zip(&votes) {
                    *h += u64::from(v == k);
                }
                (hits, votes)
            },
        )
        .map(|(hits, _)| hits)
        .reduce(
            || vec![0u64; n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(hits.into_iter().map(|h| Estimate::new(h, trials)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub n: usize,
    pub estimate: f64,
    pub stderr: f64,
    /// `Σ_{i<=n} a_i / √n`
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ConvergenceCurve {
    pub rows: Vec<CurveRow>,
}

fn check_grid(name: &str, grid: &[usize]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid(format!("{name} is empty")));
    }
    if grid[0] == 0 {
        return Err(Error::invalid(format!("{name} must start at n >= 1")));
    }
    if let Some(w) = grid.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!(
            "{name} must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Accuracy of independent ensembles of each size in `n_grid`.
pub fn convergence_experiment(
    k: usize,
    advantages: &AdvantageSequence,
    n_grid: &[usize],
    rule: Rule,
    tie_policy: TiePolicy,
    trials: u64,
    seed: u64,
) -> Result<ConvergenceCurve> {
    check_grid("n grid", n_grid)?;
    let mut rows = Vec::with_capacity(n_grid.len());
    for (lane, &n) in n_grid.iter().enumerate() {
        let spec = EnsembleSpec::new(
            k,
            n,
            advantages.clone(),
            DependenceModel::independent(),
            tie_policy,
            rule,
        )?;
        let est = run_trials(&spec, trials, seed, lane as u64)?;
        rows.push(CurveRow {
            n,
            estimate: est.estimate,
            stderr: est.stderr,
            drift: advantages.drift(n, k)?,
        });
    }
    Ok(ConvergenceCurve { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridRow {
    pub n: usize,
    pub rho: f64,
    pub estimate: f64,
    pub stderr: f64,
}

/// Monte Carlo accuracy over every `(n, rho)` pair, row-major in `n`.
#[allow(clippy::too_many_arguments)]
pub fn accuracy_grid(
    k: usize,
    advantages: &AdvantageSequence,
    n_grid: &[usize],
    rho_grid: &[f64],
    rule: Rule,
    tie_policy: TiePolicy,
    trials: u64,
    seed: u64,
) -> Result<Vec<GridRow>> {
    check_grid("n grid", n_grid)?;
    if rho_grid.is_empty() {
        return Err(Error::invalid("rho grid is empty"));
    }
    let mut rows = Vec::with_capacity(n_grid.len() * rho_grid.len());
    let mut lane = 0u64;
    for &n in n_grid {
        for &rho in rho_grid {
            let spec = EnsembleSpec::new(
                k,
                n,
                advantages.clone(),
                DependenceModel::new(rho)?,
                tie_policy,
                rule,
            )?;
            let est = run_trials(&spec, trials, seed, lane)?;
            lane += 1;
            rows.push(GridRow {
                n,
                rho,
                estimate: est.estimate,
                stderr: est.stderr,
            });
        }
    }
    Ok(rows)
}
