//! Label spaces, the uniformly-biased classifier model and advantage schedules.
//!
//! Analytic routines use labels `1..=k` with the true label mapped to `k`.
//! A classifier with advantage `a` names the true label with probability
//! `1/k + a` and spreads the remaining mass evenly over the `k - 1` wrong
//! labels.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when comparing distributions that should sum to one.
const NORMALIZATION_EPS: f64 = 1e-9;

/// Ordered, distinct class names. Label `i` (1-based) is `names[i - 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    names: Vec<String>,
}

impl LabelSpace {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::invalid(format!(
                "a label space needs at least 2 classes, got {}",
                names.len()
            )));
        }
        for (i, name) in names.iter().enumerate() {
            if name.trim().is_empty() {
                return Err(Error::invalid(format!("label {} has an empty name", i + 1)));
            }
            if names[..i].contains(name) {
                return Err(Error::invalid(format!("duplicate label name {name:?}")));
            }
        }
        Ok(Self { names })
    }

    /// `Negative, Neutral, Positive`: the three-class sentiment layout.
    pub fn sentiment() -> Self {
        Self {
            names: vec!["Negative".into(), "Neutral".into(), "Positive".into()],
        }
    }

    /// Anonymous labels `"1".."k"`.
    pub fn numbered(k: usize) -> Result<Self> {
        Self::new((1..=k).map(|i| i.to_string()))
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Name of 1-based label `label`.
    pub fn name(&self, label: usize) -> Option<&str> {
        label
            .checked_sub(1)
            .and_then(|i| self.names.get(i))
            .map(String::as_str)
    }

    /// 1-based index of `name`. `Indecisive` is accepted as an alias of
    /// `Neutral` when the space contains the latter.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        if let Some(i) = self.names.iter().position(|n| n == name) {
            return Some(i + 1);
        }
        if name == "Indecisive" {
            return self.names.iter().position(|n| n == "Neutral").map(|i| i + 1);
        }
        None
    }
}

/// Checks `-1/k < a <= (k-1)/k`.
pub fn validate_advantage(k: usize, a: f64) -> Result<()> {
    if k < 2 {
        return Err(Error::domain(format!("class count k must be >= 2, got {k}")));
    }
    if !a.is_finite() {
        return Err(Error::domain(format!("advantage must be finite, got {a}")));
    }
    let kf = k as f64;
    let lower = -1.0 / kf;
    let upper = (kf - 1.0) / kf;
    if a <= lower {
        return Err(Error::domain(format!(
            "advantage {a} violates the lower bound a > -1/k = {lower} (k = {k})"
        )));
    }
    if a > upper {
        return Err(Error::domain(format!(
            "advantage {a} violates the upper bound a <= (k-1)/k = {upper} (k = {k})"
        )));
    }
    Ok(())
}

/// Label distribution of a classifier that is uniformly biased towards the
/// correct alternative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UbtcaPmf {
    k: usize,
    a: f64,
    p_true: f64,
    p_wrong: f64,
}

impl UbtcaPmf {
    pub fn new(k: usize, a: f64) -> Result<Self> {
        validate_advantage(k, a)?;
        let kf = k as f64;
        let p_true = (1.0 / kf + a).min(1.0);
        let p_wrong = ((1.0 - p_true) / (kf - 1.0)).max(0.0);
        Ok(Self {
            k,
            a,
            p_true,
            p_wrong,
        })
    }

    /// Distribution matching a given accuracy, i.e. advantage `accuracy - 1/k`.
    pub fn from_accuracy(k: usize, accuracy: f64) -> Result<Self> {
        Self::new(k, accuracy - 1.0 / k as f64)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn advantage(&self) -> f64 {
        self.a
    }

    pub fn p_true(&self) -> f64 {
        self.p_true
    }

    pub fn p_wrong(&self) -> f64 {
        self.p_wrong
    }

    /// Probability of emitting 1-based `label` when the true label is `k`.
    pub fn prob(&self, label: usize) -> f64 {
        match label {
            l if l == self.k => self.p_true,
            l if (1..self.k).contains(&l) => self.p_wrong,
            _ => 0.0,
        }
    }

    /// Full pmf over labels `1..=k`, true label last.
    pub fn to_vec(&self) -> Vec<f64> {
        (1..=self.k).map(|l| self.prob(l)).collect()
    }

    /// Maps a uniform `u in [0, 1)` to a label given the row's true label.
    ///
    /// Classifiers fed the same `u` are comonotone: this is the coupling
    /// used by the common-cause dependence model.
    pub fn label_from_uniform(&self, u: f64, true_label: usize) -> usize {
        if u < self.p_true {
            return true_label;
        }
        let wrong = self.k - 1;
        let scaled = (u - self.p_true) / (1.0 - self.p_true) * wrong as f64;
        let w = (scaled as usize).min(wrong - 1);
        // the w-th label in 1..=k that is not the true label
        if w + 1 < true_label {
            w + 1
        } else {
            w + 2
        }
    }

    /// Draws a label for a row whose true label is `true_label`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, true_label: usize) -> usize {
        self.label_from_uniform(rng.gen::<f64>(), true_label)
    }

    /// Draws a label in the canonical frame (true label = `k`).
    pub fn sample_canonical<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sample(rng, self.k)
    }
}

pub fn true_label_probability(k: usize, a: f64) -> Result<f64> {
    Ok(UbtcaPmf::new(k, a)?.p_true())
}

pub fn wrong_label_probability(k: usize, a: f64) -> Result<f64> {
    Ok(UbtcaPmf::new(k, a)?.p_wrong())
}

/// Closed-form mean `(k+1)/2 + a k/2` of the label index.
pub fn classifier_mean(k: usize, a: f64) -> Result<f64> {
    validate_advantage(k, a)?;
    let kf = k as f64;
    Ok((kf + 1.0) / 2.0 + a * kf / 2.0)
}

/// Moments of the label index under a [`UbtcaPmf`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentReport {
    pub mean: f64,
    pub second_moment: f64,
    pub variance: f64,
    /// The commonly quoted variance `(k²-1)/12 + a k(5k-4)/6 - a² k²/4`,
    /// kept for comparison only.
    pub paper_formula_variance: f64,
    /// Set when the quoted formula disagrees with direct summation.
    pub discrepancy_flag: bool,
    /// Variance at the limiting advantage of a schedule, when requested.
    pub asymptotic_variance_sigma: Option<f64>,
}

/// Mean, second moment and variance by direct summation over the pmf.
fn summed_moments(pmf: &UbtcaPmf) -> (f64, f64, f64) {
    let (mut mean, mut second) = (0.0, 0.0);
    for label in 1..=pmf.k() {
        let j = label as f64;
        let p = pmf.prob(label);
        mean += j * p;
        second += j * j * p;
    }
    (mean, second, second - mean * mean)
}

/// Closed-form variance from direct summation:
/// `(k²-1)/12 + a k(k-2)/6 - a² k²/4`.
pub fn closed_form_variance(k: usize, a: f64) -> f64 {
    let kf = k as f64;
    (kf * kf - 1.0) / 12.0 + a * kf * (kf - 2.0) / 6.0 - a * a * kf * kf / 4.0
}

/// The quoted variance expression with linear coefficient `k(5k-4)/6`.
pub fn quoted_variance(k: usize, a: f64) -> f64 {
    let kf = k as f64;
    (kf * kf - 1.0) / 12.0 + a * kf * (5.0 * kf - 4.0) / 6.0 - a * a * kf * kf / 4.0
}

pub fn classifier_moments(k: usize, a: f64) -> Result<MomentReport> {
    classifier_moments_with_limit(k, a, None)
}

/// Like [`classifier_moments`], additionally evaluating the variance at the
/// limiting advantage `a_limit` of a schedule.
pub fn classifier_moments_with_limit(
    k: usize,
    a: f64,
    a_limit: Option<f64>,
) -> Result<MomentReport> {
    let pmf = UbtcaPmf::new(k, a)?;
    let (mean, second_moment, variance) = summed_moments(&pmf);
    let paper_formula_variance = quoted_variance(k, a);
    let discrepancy_flag = a != 0.0 && (variance - paper_formula_variance).abs() > 1e-9;
    let asymptotic_variance_sigma = match a_limit {
        Some(limit) => Some(summed_moments(&UbtcaPmf::new(k, limit)?).2),
        None => None,
    };
    Ok(MomentReport {
        mean,
        second_moment,
        variance,
        paper_formula_variance,
        discrepancy_flag,
        asymptotic_variance_sigma,
    })
}

/// Shape of an advantage schedule `a_1, a_2, ...`.
#[derive(Debug, Clone, PartialEq)]
pub enum AdvantageKind {
    /// `a_i = λ`.
    Constant(f64),
    /// `a_i = 1 / ln(i + 1)`.
    LogDecay,
    /// `a_i = i^(-α)`, `α > 0`.
    PowerDecay(f64),
    /// A finite list; indices past its end are an error.
    Explicit(Vec<f64>),
}

/// Per-classifier advantages indexed from 1.
///
/// The decaying schedules start above `(k-1)/k` (`1/ln 2 ≈ 1.44`, `1^(-α) = 1`);
/// their early terms are capped at `(k-1)/k`, i.e. a perfect classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSequence {
    kind: AdvantageKind,
}

impl AdvantageSequence {
    pub fn new(kind: AdvantageKind) -> Result<Self> {
        match &kind {
            AdvantageKind::Constant(l) if !l.is_finite() => {
                return Err(Error::domain(format!("constant advantage must be finite, got {l}")))
            }
            AdvantageKind::PowerDecay(alpha) if !(*alpha > 0.0 && alpha.is_finite()) => {
                return Err(Error::domain(format!(
                    "power-decay exponent must be positive, got {alpha}"
                )))
            }
            AdvantageKind::Explicit(list) if list.is_empty() => {
                return Err(Error::invalid("explicit advantage list is empty"))
            }
            _ => {}
        }
        Ok(Self { kind })
    }

    pub fn constant(lambda: f64) -> Result<Self> {
        Self::new(AdvantageKind::Constant(lambda))
    }

    pub fn log_decay() -> Self {
        Self {
            kind: AdvantageKind::LogDecay,
        }
    }

    pub fn power_decay(alpha: f64) -> Result<Self> {
        Self::new(AdvantageKind::PowerDecay(alpha))
    }

    pub fn explicit(values: Vec<f64>) -> Result<Self> {
        Self::new(AdvantageKind::Explicit(values))
    }

    pub fn kind(&self) -> &AdvantageKind {
        &self.kind
    }

    /// `Some(λ)` for constant schedules.
    pub fn as_constant(&self) -> Option<f64> {
        match self.kind {
            AdvantageKind::Constant(l) => Some(l),
            _ => None,
        }
    }

    /// `a_∞` when the schedule has a limit.
    pub fn limit(&self) -> Option<f64> {
        match &self.kind {
            AdvantageKind::Constant(l) => Some(*l),
            AdvantageKind::LogDecay | AdvantageKind::PowerDecay(_) => Some(0.0),
            AdvantageKind::Explicit(_) => None,
        }
    }

    /// `a_i` for 1-based `i`, validated against `k`.
    pub fn advantage(&self, i: usize, k: usize) -> Result<f64> {
        if i == 0 {
            return Err(Error::invalid("advantage indices start at 1"));
        }
        let cap = (k as f64 - 1.0) / k as f64;
        let a = match &self.kind {
            AdvantageKind::Constant(l) => *l,
            AdvantageKind::LogDecay => (1.0 / ((i + 1) as f64).ln()).min(cap),
            AdvantageKind::PowerDecay(alpha) => (i as f64).powf(-alpha).min(cap),
            AdvantageKind::Explicit(list) => *list.get(i - 1).ok_or_else(|| {
                Error::invalid(format!(
                    "advantage index {i} is beyond the explicit list of length {}",
                    list.len()
                ))
            })?,
        };
        validate_advantage(k, a).map_err(|e| match e {
            Error::Domain(msg) => Error::Domain(format!("a_{i}: {msg}")),
            other => other,
        })?;
        Ok(a)
    }

    /// `a_1..=a_n`.
    pub fn take(&self, n: usize, k: usize) -> Result<Vec<f64>> {
        (1..=n).map(|i| self.advantage(i, k)).collect()
    }

    /// `Σ_{i<=n} a_i / √n`.
    pub fn drift(&self, n: usize, k: usize) -> Result<f64> {
        if n == 0 {
            return Err(Error::invalid("drift needs n >= 1"));
        }
        if let Some(l) = self.as_constant() {
            validate_advantage(k, l)?;
            return Ok(l * (n as f64).sqrt());
        }
        let sum: f64 = self.take(n, k)?.iter().sum();
        Ok(sum / (n as f64).sqrt())
    }
}

impl fmt::Display for AdvantageSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            AdvantageKind::Constant(l) => write!(f, "{l}"),
            AdvantageKind::LogDecay => write!(f, "log"),
            AdvantageKind::PowerDecay(alpha) => write!(f, "power:{alpha}"),
            AdvantageKind::Explicit(list) => {
                let parts: Vec<String> = list.iter().map(f64::to_string).collect();
                write!(f, "list:{}", parts.join(","))
            }
        }
    }
}

/// Parses `0.1`, `const:0.1`, `log`, `power:2` or `list:0.1,0.2,0.3`.
impl FromStr for AdvantageSequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let number = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("cannot parse {v:?} as a number")))
        };
        let (head, rest) = match s.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (s, None),
        };
        match (head, rest) {
            ("log", None) => Ok(Self::log_decay()),
            ("const" | "constant", Some(v)) => Self::constant(number(v)?),
            ("power", Some(v)) => Self::power_decay(number(v)?),
            ("list", Some(v)) => Self::explicit(v.split(',').map(number).collect::<Result<_>>()?),
            (v, None) => Self::constant(number(v)?),
            _ => Err(Error::invalid(format!(
                "unrecognised advantage spec {s:?} (expected <value>, log, power:<alpha> or list:<a1,a2,...>)"
            ))),
        }
    }
}

/// An empirical label distribution given as the true-label mass plus the
/// masses of the wrong labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalPmf {
    pub true_prob: f64,
    pub wrong_probs: Vec<f64>,
}

impl EmpiricalPmf {
    /// From a vector whose first entry is the true label.
    pub fn from_truth_first(probs: &[f64]) -> Result<Self> {
        match probs.split_first() {
            Some((&t, rest)) if !rest.is_empty() => Ok(Self {
                true_prob: t,
                wrong_probs: rest.to_vec(),
            }),
            _ => Err(Error::invalid("a distribution needs at least 2 entries")),
        }
    }

    pub fn k(&self) -> usize {
        self.wrong_probs.len() + 1
    }

    fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.true_prob).chain(self.wrong_probs.iter().copied())
    }
}

impl From<&UbtcaPmf> for EmpiricalPmf {
    fn from(pmf: &UbtcaPmf) -> Self {
        Self {
            true_prob: pmf.p_true(),
            wrong_probs: vec![pmf.p_wrong(); pmf.k() - 1],
        }
    }
}

/// Total-variation distance between two equally sized distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Marginal checks for the identical / better-than-random / uniform-error
/// conditions. Independence cannot be judged from marginals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IwtubMarginalVerdict {
    pub identical: bool,
    pub better_than_random: bool,
    pub uniform_errors: bool,
    pub max_pairwise_tv: f64,
    pub min_true_prob: f64,
    pub max_wrong_deviation: f64,
    pub max_wrong_prob: f64,
}

pub fn iwtub_validate(pmfs: &[EmpiricalPmf], tolerance: f64) -> Result<IwtubMarginalVerdict> {
    let first = pmfs
        .first()
        .ok_or_else(|| Error::invalid("no distributions to validate"))?;
    let k = first.k();
    for (i, pmf) in pmfs.iter().enumerate() {
        if pmf.k() != k {
            return Err(Error::invalid(format!(
                "distribution {i} has {} classes, expected {k}",
                pmf.k()
            )));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > tolerance.max(NORMALIZATION_EPS) || pmf.iter().any(|p| p < 0.0) {
            return Err(Error::invalid(format!(
                "distribution {i} is not normalized (sums to {total})"
            )));
        }
    }

    let vectors: Vec<Vec<f64>> = pmfs.iter().map(|p| p.iter().collect()).collect();
    let mut max_pairwise_tv = 0.0f64;
    for (i, p) in vectors.iter().enumerate() {
        for q in &vectors[i + 1..] {
            max_pairwise_tv = max_pairwise_tv.max(total_variation(p, q));
        }
    }

    let chance = 1.0 / k as f64;
    let min_true_prob = pmfs.iter().map(|p| p.true_prob).fold(f64::INFINITY, f64::min);
    let mut max_wrong_deviation = 0.0f64;
    let mut max_wrong_prob = 0.0f64;
    for pmf in pmfs {
        let mean = pmf.wrong_probs.iter().sum::<f64>() / pmf.wrong_probs.len() as f64;
        for &w in &pmf.wrong_probs {
            max_wrong_deviation = max_wrong_deviation.max((w - mean).abs());
            max_wrong_prob = max_wrong_prob.max(w);
        }
    }

    Ok(IwtubMarginalVerdict {
        identical: max_pairwise_tv <= tolerance,
        better_than_random: min_true_prob > chance,
        uniform_errors: max_wrong_deviation <= tolerance && max_wrong_prob < chance,
        max_pairwise_tv,
        min_true_prob,
        max_wrong_deviation,
        max_wrong_prob,
    })
}
