//! Logged interactions, validation and importance-weight derivation.
//!
//! A [`Dataset`] (one action per context) or [`RankedDataset`] (one action per
//! ranking position) can only be obtained through validation, so every value
//! in one satisfies the overlap requirement and the caller-declared reward and
//! weight envelopes. The envelopes are recorded as declared, never tightened to
//! the empirical maximum: the tail bound in [`crate::analysis`] needs the true
//! envelope, which the data cannot reveal.

use std::sync::Arc;

use crate::error::{Error, Quantity, Result};
use crate::scalar::Real;

/// Opaque context or action identifier. Cheap to clone.
pub type Id = Arc<str>;

/// One logged `(x, a, r)` tuple with both propensities.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry<T> {
    pub context_id: Id,
    pub action_id: Id,
    /// `π₀(a|x)`, must lie in `(0, 1]`.
    pub propensity_logging: T,
    /// `π(a|x)`, must lie in `[0, 1]`.
    pub propensity_target: T,
    pub reward: T,
}

/// The item shown at one ranking position.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionRecord<T> {
    pub action_id: Id,
    /// `π₀(a_j|x, j)`.
    pub propensity_logging: T,
    /// `π(a_j|x, j)`.
    pub propensity_target: T,
    pub reward: T,
}

/// One logged ranking of length `k` with position-level rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedLogEntry<T> {
    pub context_id: Id,
    pub per_position: Vec<PositionRecord<T>>,
}

/// Read access to paired `(w_i, r_i)` columns plus their declared envelopes.
///
/// Every scalar estimator is written against this trait, so a position
/// marginal of a ranked dataset or a cross-fitting fold is estimated by exactly
/// the same code as a full scalar dataset.
pub trait WeightedSample<T: Real> {
    fn weights(&self) -> &[T];
    fn rewards(&self) -> &[T];
    /// Declared `R` with `|r_i| <= R`.
    fn reward_bound(&self) -> T;
    /// Declared `W` with `0 <= w_i <= W`.
    fn weight_bound(&self) -> T;

    fn len(&self) -> usize {
        self.weights().len()
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Borrowed weight/reward columns.
#[derive(Debug, Clone, Copy)]
pub struct Columns<'a, T> {
    weights: &'a [T],
    rewards: &'a [T],
    reward_bound: T,
    weight_bound: T,
}

impl<'a, T: Real> Columns<'a, T> {
    /// Panics if the two columns differ in length.
    pub fn new(weights: &'a [T], rewards: &'a [T], reward_bound: T, weight_bound: T) -> Self {
        assert_eq!(
            weights.len(),
            rewards.len(),
            "weight/reward columns differ in length"
        );
        Self {
            weights,
            rewards,
            reward_bound,
            weight_bound,
        }
    }
}

impl<T: Real> WeightedSample<T> for Columns<'_, T> {
    fn weights(&self) -> &[T] {
        self.weights
    }
    fn rewards(&self) -> &[T] {
        self.rewards
    }
    fn reward_bound(&self) -> T {
        self.reward_bound
    }
    fn weight_bound(&self) -> T {
        self.weight_bound
    }
}

/// Validated scalar (one action per context) log.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    entries: Vec<LogEntry<T>>,
    weights: Vec<T>,
    rewards: Vec<T>,
    reward_bound: T,
    weight_bound: T,
}

impl<T: Real> Dataset<T> {
    pub fn entries(&self) -> &[LogEntry<T>] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<LogEntry<T>> {
        self.entries
    }

    pub fn as_columns(&self) -> Columns<'_, T> {
        Columns::new(
            &self.weights,
            &self.rewards,
            self.reward_bound,
            self.weight_bound,
        )
    }
}

impl<T: Real> WeightedSample<T> for Dataset<T> {
    fn weights(&self) -> &[T] {
        &self.weights
    }
    fn rewards(&self) -> &[T] {
        &self.rewards
    }
    fn reward_bound(&self) -> T {
        self.reward_bound
    }
    fn weight_bound(&self) -> T {
        self.weight_bound
    }
}

/// Validated ranked log; every entry has the same number of positions `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedDataset<T> {
    entries: Vec<RankedLogEntry<T>>,
    k: usize,
    // Column-major: one weight and one reward column per position.
    weights: Vec<Vec<T>>,
    rewards: Vec<Vec<T>>,
    reward_bound: T,
    weight_bound: T,
}

impl<T: Real> RankedDataset<T> {
    pub fn entries(&self) -> &[RankedLogEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Ranking length.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn reward_bound(&self) -> T {
        self.reward_bound
    }

    pub fn weight_bound(&self) -> T {
        self.weight_bound
    }

    /// The `(w_j, r_j)` marginal at position `j` (0-based).
    pub fn position(&self, j: usize) -> Columns<'_, T> {
        Columns::new(
            &self.weights[j],
            &self.rewards[j],
            self.reward_bound,
            self.weight_bound,
        )
    }

    pub fn positions(&self) -> impl Iterator<Item = Columns<'_, T>> + '_ {
        (0..self.k).map(move |j| self.position(j))
    }
}

fn check_bounds<T: Real>(reward_bound: T, weight_bound: T) -> Result<()> {
    for (value, quantity) in [
        (reward_bound, Quantity::RewardBound),
        (weight_bound, Quantity::WeightBound),
    ] {
        if !(value > T::zero() && value.is_finite()) {
            return Err(Error::BoundViolation {
                index: 0,
                position: None,
                quantity,
                value: value.as_f64(),
                bound: 0.0,
            });
        }
    }
    Ok(())
}

/// Checks one record and returns its importance weight.
fn validate_record<T: Real>(
    index: usize,
    position: Option<usize>,
    p_log: T,
    p_tgt: T,
    reward: T,
    reward_bound: T,
    weight_bound: T,
) -> Result<T> {
    let violation = |quantity, value: T, bound: T| Error::BoundViolation {
        index,
        position,
        quantity,
        value: value.as_f64(),
        bound: bound.as_f64(),
    };
    // Written so that NaN fails every check.
    if !(p_log > T::zero()) {
        return Err(Error::NonPositiveLoggingPropensity {
            index,
            position,
            value: p_log.as_f64(),
        });
    }
    if !(p_log <= T::one()) {
        return Err(violation(Quantity::LoggingPropensity, p_log, T::one()));
    }
    if !(p_tgt >= T::zero() && p_tgt <= T::one()) {
        return Err(violation(Quantity::TargetPropensity, p_tgt, T::one()));
    }
    let w = p_tgt / p_log;
    if !(w <= weight_bound) {
        return Err(violation(Quantity::Weight, w, weight_bound));
    }
    if !(reward.abs() <= reward_bound) {
        return Err(violation(Quantity::Reward, reward, reward_bound));
    }
    Ok(w)
}

/// Validates raw scalar entries against declared bounds and derives `w_i = π/π₀`.
pub fn validate_dataset<T: Real>(
    raw_entries: Vec<LogEntry<T>>,
    reward_bound: T,
    weight_bound: T,
) -> Result<Dataset<T>> {
    if raw_entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_bounds(reward_bound, weight_bound)?;
    let mut weights = Vec::with_capacity(raw_entries.len());
    let mut rewards = Vec::with_capacity(raw_entries.len());
    for (i, e) in raw_entries.iter().enumerate() {
        weights.push(validate_record(
            i,
            None,
            e.propensity_logging,
            e.propensity_target,
            e.reward,
            reward_bound,
            weight_bound,
        )?);
        rewards.push(e.reward);
    }
    Ok(Dataset {
        entries: raw_entries,
        weights,
        rewards,
        reward_bound,
        weight_bound,
    })
}

/// Ranked counterpart of [`validate_dataset`]; weights are derived per position.
pub fn validate_ranked_dataset<T: Real>(
    raw_entries: Vec<RankedLogEntry<T>>,
    reward_bound: T,
    weight_bound: T,
) -> Result<RankedDataset<T>> {
    let first = raw_entries.first().ok_or(Error::EmptyDataset)?;
    check_bounds(reward_bound, weight_bound)?;
    let k = first.per_position.len();
    if k == 0 {
        return Err(Error::LengthMismatch {
            expected: 1,
            actual: 0,
        });
    }
    let n = raw_entries.len();
    let mut weights = vec![Vec::with_capacity(n); k];
    let mut rewards = vec![Vec::with_capacity(n); k];
    for (i, e) in raw_entries.iter().enumerate() {
        if e.per_position.len() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                actual: e.per_position.len(),
            });
        }
        for (j, p) in e.per_position.iter().enumerate() {
            weights[j].push(validate_record(
                i,
                Some(j),
                p.propensity_logging,
                p.propensity_target,
                p.reward,
                reward_bound,
                weight_bound,
            )?);
            rewards[j].push(p.reward);
        }
    }
    Ok(RankedDataset {
        entries: raw_entries,
        k,
        weights,
        rewards,
        reward_bound,
        weight_bound,
    })
}
