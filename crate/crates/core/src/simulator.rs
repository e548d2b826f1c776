//! Finite synthetic environments with exact-enumeration oracles and seeded
//! log sampling.
//!
//! Rewards are Bernoulli, so every expectation the oracles need is a finite
//! sum over `(context, action, reward ∈ {0, 1})`.
//!
//! Sampling uses `ChaCha8Rng` from `rand_chacha` 0.9.0 (pinned in the crate
//! manifest). A dataset is a pure function of the scenario, `n`, and the
//! generator; [`replicate_rng`] gives replicate `r` of a study its own ChaCha
//! stream under the study's master seed, so replicates never share state.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{
    validate_dataset, validate_ranked_dataset, Id, LogEntry, PositionRecord, RankedLogEntry,
};
use crate::error::{Error, Result};
use crate::{Dataset, MomentSummary, RankedDataset};

const ROW_TOL: f64 = 1e-12;

/// Generator for stream `stream` under `master_seed`.
pub fn replicate_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.is_empty() {
        return Err(Error::InvalidDistribution(format!("{what}: empty")));
    }
    if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::InvalidDistribution(format!(
            "{what}: entries must lie in [0, 1]: {row:?}"
        )));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_TOL {
        return Err(Error::InvalidDistribution(format!(
            "{what}: sums to {total}, not 1"
        )));
    }
    Ok(())
}

/// Draws an index from a probability row by inversion.
fn draw<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding slack above the last cumulative sum.
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

fn bernoulli<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    if rng.random::<f64>() < mean {
        1.0
    } else {
        0.0
    }
}

/// Conditional action distribution `π(a|x)`, one row per context.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    probs: Vec<Vec<f64>>,
}

impl PolicyTable {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution(
                "policy has no context rows".into(),
            ));
        }
        let width = probs[0].len();
        for (x, row) in probs.iter().enumerate() {
            if row.len() != width {
                return Err(Error::DimensionMismatch(format!(
                    "policy row {x} has {} actions, row 0 has {width}",
                    row.len()
                )));
            }
            check_distribution(row, &format!("policy row {x}"))?;
        }
        Ok(Self { probs })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn n_contexts(&self) -> usize {
        self.probs.len()
    }

    pub fn n_actions(&self) -> usize {
        self.probs[0].len()
    }

    pub fn prob(&self, context: usize, action: usize) -> f64 {
        self.probs[context][action]
    }
}

/// Contexts with known probabilities and Bernoulli reward means per `(x, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditEnv {
    context_probs: Vec<f64>,
    reward_means: Vec<Vec<f64>>,
}

fn check_means(means: &[Vec<f64>], n_contexts: usize, what: &str) -> Result<usize> {
    if means.len() != n_contexts || means.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {} reward rows for {n_contexts} contexts",
            means.len()
        )));
    }
    let width = means[0].len();
    if width == 0 {
        return Err(Error::DimensionMismatch(format!("{what}: no actions")));
    }
    for row in means {
        if row.len() != width {
            return Err(Error::DimensionMismatch(format!(
                "{what}: ragged reward matrix"
            )));
        }
        if row.iter().any(|&m| !(0.0..=1.0).contains(&m)) {
            return Err(Error::InvalidDistribution(format!(
                "{what}: Bernoulli means must lie in [0, 1]: {row:?}"
            )));
        }
    }
    Ok(width)
}

impl BanditEnv {
    pub fn new(context_probs: Vec<f64>, reward_means: Vec<Vec<f64>>) -> Result<Self> {
        check_distribution(&context_probs, "context distribution")?;
        check_means(&reward_means, context_probs.len(), "bandit")?;
        Ok(Self {
            context_probs,
            reward_means,
        })
    }

    pub fn n_contexts(&self) -> usize {
        self.context_probs.len()
    }

    pub fn n_actions(&self) -> usize {
        self.reward_means[0].len()
    }

    pub fn context_probs(&self) -> &[f64] {
        &self.context_probs
    }

    pub fn reward_means(&self) -> &[Vec<f64>] {
        &self.reward_means
    }

    fn check_policy(&self, pi: &PolicyTable) -> Result<()> {
        if pi.n_contexts() != self.n_contexts() || pi.n_actions() != self.n_actions() {
            return Err(Error::DimensionMismatch(format!(
                "policy is {}x{}, environment is {}x{}",
                pi.n_contexts(),
                pi.n_actions(),
                self.n_contexts(),
                self.n_actions()
            )));
        }
        Ok(())
    }
}

/// `V(π) = Σ_x P(x) Σ_a π(a|x) μ(x, a)`.
pub fn true_value(env: &BanditEnv, pi: &PolicyTable) -> Result<f64> {
    env.check_policy(pi)?;
    Ok(value_of(&env.context_probs, &env.reward_means, pi))
}

fn value_of(context_probs: &[f64], means: &[Vec<f64>], pi: &PolicyTable) -> f64 {
    context_probs
        .iter()
        .zip(means)
        .zip(pi.rows())
        .map(|((&px, mu), row)| px * row.iter().zip(mu).map(|(p, m)| p * m).sum::<f64>())
        .sum()
}

fn check_support(pi0: &PolicyTable, pi: &PolicyTable, position: Option<usize>) -> Result<()> {
    for (x, (r0, r)) in pi0.rows().iter().zip(pi.rows()).enumerate() {
        for (a, (&p0, &p)) in r0.iter().zip(r).enumerate() {
            if p > 0.0 && p0 == 0.0 {
                return Err(Error::SupportViolation {
                    position,
                    context: x,
                    action: a,
                });
            }
        }
    }
    Ok(())
}

/// Exact population moments of `(w, w r)` under logging, normalised to `n = 1`.
fn moments_of(
    context_probs: &[f64],
    means: &[Vec<f64>],
    pi0: &PolicyTable,
    pi: &PolicyTable,
) -> MomentSummary {
    // (probability, w, w r) over every outcome with positive mass.
    let mut outcomes = Vec::new();
    for (x, &px) in context_probs.iter().enumerate() {
        for (a, &p0) in pi0.rows()[x].iter().enumerate() {
            if p0 == 0.0 || px == 0.0 {
                continue;
            }
            let w = pi.prob(x, a) / p0;
            let mu = means[x][a];
            outcomes.push((px * p0 * mu, w, w));
            outcomes.push((px * p0 * (1.0 - mu), w, 0.0));
        }
    }
    let mean_w: f64 = outcomes.iter().map(|(p, w, _)| p * w).sum();
    let mean_wr: f64 = outcomes.iter().map(|(p, _, x)| p * x).sum();
    let (mut var_w, mut var_wr, mut cov) = (0.0, 0.0, 0.0);
    for &(p, w, x) in &outcomes {
        var_w += p * (w - mean_w) * (w - mean_w);
        var_wr += p * (x - mean_wr) * (x - mean_wr);
        cov += p * (w - mean_w) * (x - mean_wr);
    }
    MomentSummary {
        mean_w,
        mean_wr,
        var_w,
        var_wr,
        cov_w_wr: cov,
        n: 1,
    }
}

/// Exact moments of `(w, w r)` under `π₀`, with `n = 1`.
///
/// Rescale with [`MomentSummary::with_n`] before feeding the variance
/// formulas. `mean_w` is 1 (up to rounding) whenever overlap holds.
pub fn population_moments(
    env: &BanditEnv,
    pi0: &PolicyTable,
    pi: &PolicyTable,
) -> Result<MomentSummary> {
    env.check_policy(pi0)?;
    env.check_policy(pi)?;
    check_support(pi0, pi, None)?;
    Ok(moments_of(&env.context_probs, &env.reward_means, pi0, pi))
}

fn max_weight(pi0: &PolicyTable, pi: &PolicyTable) -> f64 {
    pi0.rows()
        .iter()
        .flatten()
        .zip(pi.rows().iter().flatten())
        .filter(|(&p0, _)| p0 > 0.0)
        .map(|(&p0, &p)| p / p0)
        .fold(0.0, f64::max)
}

fn ids(prefix: &str, n: usize) -> Vec<Id> {
    (0..n).map(|i| Arc::from(format!("{prefix}{i}"))).collect()
}

/// An environment together with the logging and target policies under study.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditScenario {
    pub env: BanditEnv,
    pub logging: PolicyTable,
    pub target: PolicyTable,
    context_ids: Vec<Id>,
    action_ids: Vec<Id>,
}

impl BanditScenario {
    pub fn new(env: BanditEnv, logging: PolicyTable, target: PolicyTable) -> Result<Self> {
        env.check_policy(&logging)?;
        env.check_policy(&target)?;
        check_support(&logging, &target, None)?;
        let context_ids = ids("x", env.n_contexts());
        let action_ids = ids("a", env.n_actions());
        Ok(Self {
            env,
            logging,
            target,
            context_ids,
            action_ids,
        })
    }

    pub fn true_value(&self) -> f64 {
        value_of(
            &self.env.context_probs,
            &self.env.reward_means,
            &self.target,
        )
    }

    pub fn population_moments(&self) -> MomentSummary {
        moments_of(
            &self.env.context_probs,
            &self.env.reward_means,
            &self.logging,
            &self.target,
        )
    }

    /// Largest importance weight the logging policy can produce.
    pub fn weight_bound(&self) -> f64 {
        max_weight(&self.logging, &self.target)
    }

    /// Draws `n` i.i.d. logged tuples from `rng`.
    pub fn sample_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Dataset> {
        let mut raw = Vec::with_capacity(n);
        for _ in 0..n {
            let x = draw(&self.env.context_probs, rng);
            let a = draw(&self.logging.rows()[x], rng);
            let reward = bernoulli(self.env.reward_means[x][a], rng);
            raw.push(LogEntry {
                context_id: self.context_ids[x].clone(),
                action_id: self.action_ids[a].clone(),
                propensity_logging: self.logging.prob(x, a),
                propensity_target: self.target.prob(x, a),
                reward,
            });
        }
        validate_dataset(raw, 1.0, self.weight_bound())
    }
}

/// `n` i.i.d. tuples `x ~ P(X)`, `a ~ π₀(·|x)`, `r ~ Bernoulli(μ(x, a))`, deterministic in `seed`.
pub fn sample_logs(
    env: &BanditEnv,
    pi0: &PolicyTable,
    pi: &PolicyTable,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    BanditScenario::new(env.clone(), pi0.clone(), pi.clone())?
        .sample_with(n, &mut replicate_rng(seed, 0))
}

/// Logging policy, target policy and reward means for one ranking position.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionSpec {
    pub logging: PolicyTable,
    pub target: PolicyTable,
    pub reward_means: Vec<Vec<f64>>,
}

/// Ranking environment under the item-position model: the item at position
/// `j` is drawn from `π₀(·|x, j)` independently of other positions, and its
/// reward depends only on `(x, j, a_j)`. Duplicate items across positions
/// are allowed; this keeps position-marginal propensities exact.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingEnv {
    context_probs: Vec<f64>,
    positions: Vec<PositionSpec>,
    context_ids: Vec<Id>,
    action_ids: Vec<Vec<Id>>,
}

impl RankingEnv {
    pub fn new(context_probs: Vec<f64>, positions: Vec<PositionSpec>) -> Result<Self> {
        check_distribution(&context_probs, "context distribution")?;
        if positions.is_empty() {
            return Err(Error::DimensionMismatch(
                "ranking needs at least one position".into(),
            ));
        }
        let nx = context_probs.len();
        let mut action_ids = Vec::with_capacity(positions.len());
        for (j, p) in positions.iter().enumerate() {
            let what = format!("position {j}");
            let na = check_means(&p.reward_means, nx, &what)?;
            for pol in [&p.logging, &p.target] {
                if pol.n_contexts() != nx || pol.n_actions() != na {
                    return Err(Error::DimensionMismatch(format!(
                        "{what}: policy is {}x{}, rewards are {nx}x{na}",
                        pol.n_contexts(),
                        pol.n_actions()
                    )));
                }
            }
            check_support(&p.logging, &p.target, Some(j))?;
            action_ids.push(ids(&format!("p{j}a"), na));
        }
        Ok(Self {
            context_ids: ids("x", nx),
            context_probs,
            positions,
            action_ids,
        })
    }

    pub fn k(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[PositionSpec] {
        &self.positions
    }

    pub fn context_probs(&self) -> &[f64] {
        &self.context_probs
    }

    /// `V_j(π)` for each position; the ranking value is their sum.
    pub fn true_position_values(&self) -> Vec<f64> {
        self.positions
            .iter()
            .map(|p| value_of(&self.context_probs, &p.reward_means, &p.target))
            .collect()
    }

    /// Exact `(w_j, w_j r_j)` moments at position `j`, with `n = 1`.
    pub fn position_moments(&self, j: usize) -> MomentSummary {
        let p = &self.positions[j];
        moments_of(&self.context_probs, &p.reward_means, &p.logging, &p.target)
    }

    pub fn weight_bound(&self) -> f64 {
        self.positions
            .iter()
            .map(|p| max_weight(&p.logging, &p.target))
            .fold(0.0, f64::max)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<RankedDataset> {
        let mut raw = Vec::with_capacity(n);
        for _ in 0..n {
            let x = draw(&self.context_probs, rng);
            let per_position = self
                .positions
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    let a = draw(&p.logging.rows()[x], rng);
                    PositionRecord {
                        action_id: self.action_ids[j][a].clone(),
                        propensity_logging: p.logging.prob(x, a),
                        propensity_target: p.target.prob(x, a),
                        reward: bernoulli(p.reward_means[x][a], rng),
                    }
                })
                .collect();
            raw.push(RankedLogEntry {
                context_id: self.context_ids[x].clone(),
                per_position,
            });
        }
        validate_ranked_dataset(raw, 1.0, self.weight_bound())
    }
}

/// Exact per-position values of the environment's target policies.
pub fn true_position_values(env: &RankingEnv) -> Vec<f64> {
    env.true_position_values()
}

pub fn sample_ranked_logs(env: &RankingEnv, n: usize, seed: u64) -> Result<RankedDataset> {
    env.sample_with(n, &mut replicate_rng(seed, 0))
}

/// A named or inline simulation setting.
#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    Bandit(BanditScenario),
    Ranking(RankingEnv),
}

/// Preset names with one-line descriptions.
pub const PRESETS: &[(&str, &str)] = &[
    ("flip2", "1 context, 2 actions; logging (0.9, 0.1), target (0.1, 0.9), means (0.8, 0.2); V = 0.26, beta* = 0.1925"),
    ("identity2", "flip2 rewards with target = logging; all weights 1"),
    ("constant2", "flip2 policies with constant reward mean 0.5; beta* = V"),
    ("mixed3x3", "3 contexts, 3 actions, heterogeneous rewards and policies"),
    ("rankflip2x2", "2 positions, each an independent copy of flip2; V_j = 0.26"),
    ("rankidentity2x2", "2 positions with target = logging at both"),
];

fn flip_policies() -> (PolicyTable, PolicyTable) {
    (
        PolicyTable::new(vec![vec![0.9, 0.1]]).expect("static policy"),
        PolicyTable::new(vec![vec![0.1, 0.9]]).expect("static policy"),
    )
}

fn flip_position(identity: bool) -> PositionSpec {
    let (logging, target) = flip_policies();
    PositionSpec {
        target: if identity { logging.clone() } else { target },
        logging,
        reward_means: vec![vec![0.8, 0.2]],
    }
}

/// Looks up a named scenario.
pub fn preset(name: &str) -> Result<Scenario> {
    let bandit =
        |means: Vec<Vec<f64>>, contexts: Vec<f64>, logging: PolicyTable, target: PolicyTable| {
            BanditScenario::new(BanditEnv::new(contexts, means)?, logging, target)
                .map(Scenario::Bandit)
        };
    match name {
        "flip2" => {
            let (l, t) = flip_policies();
            bandit(vec![vec![0.8, 0.2]], vec![1.0], l, t)
        }
        "identity2" => {
            let (l, _) = flip_policies();
            bandit(vec![vec![0.8, 0.2]], vec![1.0], l.clone(), l)
        }
        "constant2" => {
            let (l, t) = flip_policies();
            bandit(vec![vec![0.5, 0.5]], vec![1.0], l, t)
        }
        "mixed3x3" => bandit(
            vec![
                vec![0.9, 0.5, 0.1],
                vec![0.2, 0.6, 0.4],
                vec![0.3, 0.3, 0.8],
            ],
            vec![0.5, 0.3, 0.2],
            PolicyTable::new(vec![
                vec![0.6, 0.3, 0.1],
                vec![0.2, 0.5, 0.3],
                vec![0.4, 0.4, 0.2],
            ])?,
            PolicyTable::new(vec![
                vec![0.1, 0.2, 0.7],
                vec![0.5, 0.3, 0.2],
                vec![0.1, 0.1, 0.8],
            ])?,
        ),
        "rankflip2x2" => {
            RankingEnv::new(vec![1.0], vec![flip_position(false), flip_position(false)])
                .map(Scenario::Ranking)
        }
        "rankidentity2x2" => {
            RankingEnv::new(vec![1.0], vec![flip_position(true), flip_position(true)])
                .map(Scenario::Ranking)
        }
        _ => Err(Error::UnknownPreset(name.to_string())),
    }
}
