//! Seeded Monte Carlo studies over the simulator's scenarios.
//!
//! Every study draws `replicates` datasets per sample size. Replicate `r` of
//! grid cell `c` uses ChaCha stream `(c << 32) | r` under the master seed, and
//! all estimators in a study see the same dataset for a given replicate, so
//! comparisons are paired. Replicates run on rayon; results are gathered in
//! replicate order and reduced sequentially, so a report is bit-identical for
//! any thread count.

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{
    beta_ips_variance, hoeffding_tail_bound, optimal_variance, remainder_diagnostics, snips_avar,
};
use crate::error::{Error, Result};
use crate::estimators::{
    beta_ips, beta_star_ips, cross_fitted_beta_ips, ips, snips, CrossFitConfig,
};
use crate::ranking::{beta_ipm, beta_perp_star_ipm, ipm, snipm};
use crate::simulator::{replicate_rng, Scenario};
use crate::{Dataset, MomentSummary, RankedDataset};

/// Estimators a study can run.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorSpec {
    Ips,
    Snips,
    BetaIps(f64),
    BetaStarIps,
    CrossFitBetaStarIps,
    Ipm,
    Snipm,
    BetaIpm(Vec<f64>),
    BetaPerpStarIpm,
}

impl EstimatorSpec {
    /// Parses `ips`, `snips`, `beta-ips:<β>`, `beta-star-ips`,
    /// `cross-fit-beta-star-ips`, `ipm`, `snipm`, `beta-ipm:<β1>,<β2>,…`,
    /// `beta-perp-star-ipm`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = |message: String| Error::Config {
            path: "estimators".into(),
            message,
        };
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let number = |a: &str| a.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
        let spec = match (name, arg) {
            ("ips", None) => Self::Ips,
            ("snips", None) => Self::Snips,
            ("beta-ips", Some(a)) => Self::BetaIps(number(a)?),
            ("beta-star-ips", None) => Self::BetaStarIps,
            ("cross-fit-beta-star-ips", None) => Self::CrossFitBetaStarIps,
            ("ipm", None) => Self::Ipm,
            ("snipm", None) => Self::Snipm,
            ("beta-ipm", Some(a)) => {
                Self::BetaIpm(a.split(',').map(number).collect::<Result<_>>()?)
            }
            ("beta-perp-star-ipm", None) => Self::BetaPerpStarIpm,
            _ => return Err(bad(format!("unknown estimator `{s}`"))),
        };
        Ok(spec)
    }

    pub fn label(&self) -> String {
        let join = |b: &[f64]| b.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        match self {
            Self::Ips => "ips".into(),
            Self::Snips => "snips".into(),
            Self::BetaIps(b) => format!("beta-ips:{b}"),
            Self::BetaStarIps => "beta-star-ips".into(),
            Self::CrossFitBetaStarIps => "cross-fit-beta-star-ips".into(),
            Self::Ipm => "ipm".into(),
            Self::Snipm => "snipm".into(),
            Self::BetaIpm(b) => format!("beta-ipm:{}", join(b)),
            Self::BetaPerpStarIpm => "beta-perp-star-ipm".into(),
        }
    }

    pub fn is_ranked(&self) -> bool {
        matches!(
            self,
            Self::Ipm | Self::Snipm | Self::BetaIpm(_) | Self::BetaPerpStarIpm
        )
    }

    /// Fixed baseline whose β-IPS the estimator tracks to first order.
    ///
    /// β-IPS at any fixed baseline has expectation exactly `V`, so
    /// `mean(estimate − β-IPS(anchor))` estimates the estimator's bias with
    /// noise of the same order as the bias itself.
    fn anchor(&self, true_value: f64, beta_star: Option<f64>) -> Option<f64> {
        match self {
            Self::Ips | Self::Ipm => Some(0.0),
            Self::BetaIps(b) => Some(*b),
            Self::Snips | Self::Snipm => Some(true_value),
            Self::BetaStarIps | Self::CrossFitBetaStarIps | Self::BetaPerpStarIpm => beta_star,
            Self::BetaIpm(_) => None,
        }
    }

    /// Closed-form variance at position moments `m` (already scaled to `n`).
    fn theory_variance(&self, m: &MomentSummary, true_value: f64, position: usize) -> Option<f64> {
        match self {
            Self::Ips | Self::Ipm => Some(beta_ips_variance(m, 0.0)),
            Self::BetaIps(b) => Some(beta_ips_variance(m, *b)),
            Self::BetaIpm(b) => b.get(position).map(|&b| beta_ips_variance(m, b)),
            Self::Snips | Self::Snipm => Some(snips_avar(m, true_value)),
            Self::BetaStarIps | Self::CrossFitBetaStarIps | Self::BetaPerpStarIpm => {
                optimal_variance(m).ok()
            }
        }
    }
}

/// One dataset drawn for a replicate.
pub enum Draw {
    Bandit(Dataset),
    Ranked(RankedDataset),
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub scenario: Scenario,
    /// Preset name or a description of the inline scenario; copied into reports.
    pub scenario_label: String,
    pub estimators: Vec<EstimatorSpec>,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub master_seed: u64,
    pub folds_k: Option<usize>,
    /// Worker threads; `None` uses rayon's global pool. Never affects results.
    pub threads: Option<usize>,
}

pub const MIN_REPLICATES: usize = 100;

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: String| {
            Err(Error::Config {
                path: path.into(),
                message,
            })
        };
        if self.n_grid.is_empty() {
            return bad("n_grid", "must not be empty".into());
        }
        if self.n_grid[0] < 2 || self.n_grid.windows(2).any(|p| p[1] <= p[0]) {
            return bad(
                "n_grid",
                format!(
                    "must be strictly increasing with every n >= 2, got {:?}",
                    self.n_grid
                ),
            );
        }
        if self.replicates < MIN_REPLICATES {
            return bad(
                "replicates",
                format!("must be >= {MIN_REPLICATES}, got {}", self.replicates),
            );
        }
        if let Some(k) = self.folds_k {
            if k < 2 {
                return bad("folds", format!("must be >= 2, got {k}"));
            }
        }
        if self.threads == Some(0) {
            return bad("threads", "must be >= 1".into());
        }
        let ranked = matches!(self.scenario, Scenario::Ranking(_));
        for (i, e) in self.estimators.iter().enumerate() {
            if e.is_ranked() != ranked {
                return bad(
                    &format!("estimators[{i}]"),
                    format!(
                        "`{}` does not apply to a {} scenario",
                        e.label(),
                        if ranked { "ranking" } else { "bandit" }
                    ),
                );
            }
            if let (EstimatorSpec::BetaIpm(b), Scenario::Ranking(env)) = (e, &self.scenario) {
                if b.len() != env.k() {
                    return bad(
                        &format!("estimators[{i}]"),
                        format!("needs {} baselines, got {}", env.k(), b.len()),
                    );
                }
            }
        }
        Ok(())
    }

    fn folds(&self) -> CrossFitConfig {
        CrossFitConfig {
            folds_k: self.folds_k.unwrap_or(5),
            seed: self.master_seed,
        }
    }

    fn k(&self) -> usize {
        match &self.scenario {
            Scenario::Bandit(_) => 1,
            Scenario::Ranking(env) => env.k(),
        }
    }

    /// Draws every replicate for grid cell `cell` and maps it through `f`, in replicate order.
    fn replicates<T: Send>(
        &self,
        cell: usize,
        n: usize,
        f: impl Fn(&Draw) -> T + Sync,
    ) -> Result<Vec<T>> {
        let run = || {
            (0..self.replicates)
                .into_par_iter()
                .map(|r| {
                    let mut rng = replicate_rng(self.master_seed, ((cell as u64) << 32) | r as u64);
                    let draw = match &self.scenario {
                        Scenario::Bandit(s) => Draw::Bandit(s.sample_with(n, &mut rng)?),
                        Scenario::Ranking(env) => Draw::Ranked(env.sample_with(n, &mut rng)?),
                    };
                    Ok(f(&draw))
                })
                .collect::<Result<Vec<T>>>()
        };
        match self.threads {
            Some(t) => rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::Config {
                    path: "threads".into(),
                    message: e.to_string(),
                })?
                .install(run),
            None => run(),
        }
    }

    fn evaluate(&self, spec: &EstimatorSpec, draw: &Draw) -> Result<Vec<f64>> {
        match (spec, draw) {
            (EstimatorSpec::Ips, Draw::Bandit(d)) => Ok(vec![ips(d).value]),
            (EstimatorSpec::Snips, Draw::Bandit(d)) => Ok(vec![snips(d)?.value]),
            (EstimatorSpec::BetaIps(b), Draw::Bandit(d)) => Ok(vec![beta_ips(d, *b).value]),
            (EstimatorSpec::BetaStarIps, Draw::Bandit(d)) => Ok(vec![beta_star_ips(d)?.value]),
            (EstimatorSpec::CrossFitBetaStarIps, Draw::Bandit(d)) => {
                Ok(vec![cross_fitted_beta_ips(d, self.folds())?.value])
            }
            (EstimatorSpec::Ipm, Draw::Ranked(d)) => Ok(ipm(d).estimates()),
            (EstimatorSpec::Snipm, Draw::Ranked(d)) => Ok(snipm(d)?.estimates()),
            (EstimatorSpec::BetaIpm(b), Draw::Ranked(d)) => Ok(beta_ipm(d, b)?.estimates()),
            (EstimatorSpec::BetaPerpStarIpm, Draw::Ranked(d)) => {
                Ok(beta_perp_star_ipm(d)?.estimates())
            }
            (spec, _) => Err(Error::Config {
                path: "estimators".into(),
                message: format!("`{}` does not match the scenario", spec.label()),
            }),
        }
    }
}

/// Bias, `1/M` variance and MSE of a set of replicate estimates about `V`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MseDecomposition {
    pub mean: f64,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
}

/// `mse = bias² + variance` holds up to rounding under the `1/M` convention.
pub fn mse_decompose(estimates: &[f64], true_value: f64) -> Result<MseDecomposition> {
    if estimates.len() < 2 {
        return Err(Error::TooFewReplicates(estimates.len()));
    }
    let m = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / m;
    let variance = estimates
        .iter()
        .map(|e| (e - mean) * (e - mean))
        .sum::<f64>()
        / m;
    let mse = estimates
        .iter()
        .map(|e| (e - true_value) * (e - true_value))
        .sum::<f64>()
        / m;
    Ok(MseDecomposition {
        mean,
        bias: mean - true_value,
        variance,
        mse,
    })
}

/// Mean of `xs` and its standard error `sd / √M` (`1/M` variance).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m;
    (mean, (var / m).sqrt())
}

/// `Var(a) − Var(b)` over paired replicates, with its delta-method standard
/// error (standard error of the mean of `(a_i − ā)² − (b_i − b̄)²`).
pub fn paired_variance_difference(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (ma, _) = mean_and_se(a);
    let (mb, _) = mean_and_se(b);
    let z: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (x - ma) - (y - mb) * (y - mb))
        .collect();
    mean_and_se(&z)
}

/// `MSE(a) − MSE(b)` about `V` over paired replicates, with standard error.
pub fn paired_mse_difference(a: &[f64], b: &[f64], true_value: f64) -> (f64, f64) {
    let z: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - true_value) * (x - true_value) - (y - true_value) * (y - true_value))
        .collect();
    mean_and_se(&z)
}

/// Ordinary least squares on `(ln x, ln y)`; returns `(slope, intercept)`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::DegenerateX);
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::NonPositivePoint { x, y });
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let m = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateX);
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Ground truth for a scenario; one entry per position (one for a bandit).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Oracle {
    pub true_values: Vec<f64>,
    pub total_value: f64,
    /// Per-sample population moments (`n = 1`).
    pub moments: Vec<MomentSummary>,
    pub beta_star: Vec<Option<f64>>,
    pub weight_bound: f64,
    pub per_n: Vec<OracleAtN>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleAtN {
    pub n: usize,
    pub gap_delta: Vec<Option<f64>>,
    pub avar_snips: Vec<f64>,
    pub var_beta_star: Vec<Option<f64>>,
    /// Ceiling on `P(W̄ < 1/2)`, printed next to replicate failure counts.
    pub hoeffding_bound: f64,
}

impl Oracle {
    pub fn for_config(cfg: &StudyConfig) -> Self {
        let (true_values, moments, weight_bound) = match &cfg.scenario {
            Scenario::Bandit(s) => (
                vec![s.true_value()],
                vec![s.population_moments()],
                s.weight_bound(),
            ),
            Scenario::Ranking(env) => (
                env.true_position_values(),
                (0..env.k()).map(|j| env.position_moments(j)).collect(),
                env.weight_bound(),
            ),
        };
        let per_n = cfg
            .n_grid
            .iter()
            .map(|&n| {
                let scaled: Vec<MomentSummary> = moments.iter().map(|m| m.with_n(n)).collect();
                OracleAtN {
                    n,
                    gap_delta: scaled
                        .iter()
                        .zip(&true_values)
                        .map(|(m, &v)| {
                            crate::analysis::variance_gap(m, v)
                                .ok()
                                .map(|g| g.gap_delta)
                        })
                        .collect(),
                    avar_snips: scaled
                        .iter()
                        .zip(&true_values)
                        .map(|(m, &v)| snips_avar(m, v))
                        .collect(),
                    var_beta_star: scaled.iter().map(|m| optimal_variance(m).ok()).collect(),
                    hoeffding_bound: hoeffding_tail_bound(n, weight_bound),
                }
            })
            .collect();
        Oracle {
            total_value: true_values.iter().sum(),
            beta_star: moments.iter().map(MomentSummary::beta_star).collect(),
            true_values,
            moments,
            weight_bound,
            per_n,
        }
    }
}

/// One CSV row: an estimator (or one position of it) at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    /// Estimator label; `label[j]` for position `j` of a ranking estimator.
    pub estimator: String,
    pub n: usize,
    pub mean: f64,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    /// Monte Carlo standard error of `mean`.
    pub se: f64,
    pub replicates_used: usize,
    pub failures: usize,
    pub theory_variance: Option<f64>,
}

impl StudyRow {
    fn from_values(
        estimator: String,
        n: usize,
        values: &[f64],
        true_value: f64,
        failures: usize,
    ) -> Result<Self> {
        let d = mse_decompose(values, true_value)?;
        Ok(Self {
            estimator,
            n,
            mean: d.mean,
            bias: d.bias,
            variance: d.variance,
            mse: d.mse,
            se: (d.variance / values.len() as f64).sqrt(),
            replicates_used: values.len(),
            failures,
            theory_variance: None,
        })
    }
}

/// Empirical `Var(SNIPS) − Var(β̂*-IPS)` against the closed-form gap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapCheck {
    pub n: usize,
    pub position: Option<usize>,
    pub empirical: f64,
    pub se: f64,
    pub theory: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub scenario: String,
    pub replicates: usize,
    pub master_seed: u64,
    pub oracle: Oracle,
    pub rows: Vec<StudyRow>,
    pub gap_checks: Vec<GapCheck>,
}

/// Per-replicate outputs for one grid cell: `[estimator][replicate]`,
/// each a vector of per-position values (length 1 for a bandit).
struct Cell {
    n: usize,
    values: Vec<Vec<Result<Vec<f64>>>>,
}

impl Cell {
    /// Successful replicate indices for estimator `e`, or an error when more than 1% failed.
    fn successes(&self, e: usize, label: &str) -> Result<Vec<usize>> {
        let vals = &self.values[e];
        let ok: Vec<usize> = (0..vals.len()).filter(|&r| vals[r].is_ok()).collect();
        let failed = vals.len() - ok.len();
        if failed * 100 > vals.len() {
            let first = vals
                .iter()
                .find_map(|v| v.as_ref().err())
                .map(ToString::to_string)
                .unwrap_or_default();
            return Err(Error::TooManyFailures {
                estimator: label.to_string(),
                n: self.n,
                failed,
                total: vals.len(),
                first,
            });
        }
        Ok(ok)
    }

    fn column(&self, e: usize, position: usize, replicates: &[usize]) -> Vec<f64> {
        replicates
            .iter()
            .map(|&r| self.values[e][r].as_ref().expect("successful replicate")[position])
            .collect()
    }
}

fn collect_cells(cfg: &StudyConfig, estimators: &[EstimatorSpec]) -> Result<Vec<Cell>> {
    cfg.n_grid
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            let per_rep = cfg.replicates(c, n, |draw| {
                estimators
                    .iter()
                    .map(|e| cfg.evaluate(e, draw))
                    .collect::<Vec<_>>()
            })?;
            let mut values: Vec<Vec<Result<Vec<f64>>>> = (0..estimators.len())
                .map(|_| Vec::with_capacity(per_rep.len()))
                .collect();
            for rep in per_rep {
                for (e, v) in rep.into_iter().enumerate() {
                    values[e].push(v);
                }
            }
            Ok(Cell { n, values })
        })
        .collect()
}

fn rows_for(
    cfg: &StudyConfig,
    oracle: &Oracle,
    estimators: &[EstimatorSpec],
    cells: &[Cell],
) -> Result<Vec<StudyRow>> {
    let k = cfg.k();
    let ranked = matches!(cfg.scenario, Scenario::Ranking(_));
    let mut rows = Vec::new();
    for (e, spec) in estimators.iter().enumerate() {
        let label = spec.label();
        for cell in cells {
            let ok = cell.successes(e, &label)?;
            let failures = cell.values[e].len() - ok.len();
            for j in 0..k {
                let name = if ranked {
                    format!("{label}[{j}]")
                } else {
                    label.clone()
                };
                let mut row = StudyRow::from_values(
                    name,
                    cell.n,
                    &cell.column(e, j, &ok),
                    oracle.true_values[j],
                    failures,
                )?;
                row.theory_variance = spec.theory_variance(
                    &oracle.moments[j].with_n(cell.n),
                    oracle.true_values[j],
                    j,
                );
                rows.push(row);
            }
            if ranked {
                let totals: Vec<f64> = ok
                    .iter()
                    .map(|&r| {
                        cell.values[e][r]
                            .as_ref()
                            .expect("successful replicate")
                            .iter()
                            .sum()
                    })
                    .collect();
                rows.push(StudyRow::from_values(
                    label.clone(),
                    cell.n,
                    &totals,
                    oracle.total_value,
                    failures,
                )?);
            }
        }
    }
    Ok(rows)
}

/// Replicates where both estimators succeeded.
fn paired(cell: &Cell, a: usize, b: usize, la: &str, lb: &str) -> Result<Vec<usize>> {
    let sa = cell.successes(a, la)?;
    let sb = cell.successes(b, lb)?;
    Ok(sa
        .into_iter()
        .filter(|r| sb.binary_search(r).is_ok())
        .collect())
}

fn gap_checks(
    cfg: &StudyConfig,
    oracle: &Oracle,
    estimators: &[EstimatorSpec],
    cells: &[Cell],
) -> Result<Vec<GapCheck>> {
    let find = |want: &[EstimatorSpec]| estimators.iter().position(|e| want.contains(e));
    let (Some(s), Some(b)) = (
        find(&[EstimatorSpec::Snips, EstimatorSpec::Snipm]),
        find(&[EstimatorSpec::BetaStarIps, EstimatorSpec::BetaPerpStarIpm]),
    ) else {
        return Ok(vec![]);
    };
    let ranked = matches!(cfg.scenario, Scenario::Ranking(_));
    let mut out = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        let pairs = paired(cell, s, b, &estimators[s].label(), &estimators[b].label())?;
        for j in 0..cfg.k() {
            let (empirical, se) =
                paired_variance_difference(&cell.column(s, j, &pairs), &cell.column(b, j, &pairs));
            out.push(GapCheck {
                n: cell.n,
                position: ranked.then_some(j),
                empirical,
                se,
                theory: oracle.per_n[c].gap_delta[j],
            });
        }
    }
    Ok(out)
}

/// Runs every configured estimator over the grid and decomposes each against the oracle.
///
/// Replicates on which an estimator fails (e.g. a zero weight sum at tiny
/// `n`) are excluded from that estimator's row and counted; more than 1%
/// failures in any cell aborts the study.
pub fn run_mc_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    if cfg.estimators.is_empty() {
        return Err(Error::Config {
            path: "estimators".into(),
            message: "must not be empty".into(),
        });
    }
    let oracle = Oracle::for_config(cfg);
    let cells = collect_cells(cfg, &cfg.estimators)?;
    Ok(StudyReport {
        scenario: cfg.scenario_label.clone(),
        replicates: cfg.replicates,
        master_seed: cfg.master_seed,
        rows: rows_for(cfg, &oracle, &cfg.estimators, &cells)?,
        gap_checks: gap_checks(cfg, &oracle, &cfg.estimators, &cells)?,
        oracle,
    })
}

fn require_rate_grid(cfg: &StudyConfig) -> Result<()> {
    let (first, last) = (
        cfg.n_grid[0] as f64,
        *cfg.n_grid.last().expect("validated non-empty") as f64,
    );
    if cfg.n_grid.len() < 4 || (last / first).log10() < 1.5 {
        return Err(Error::Config {
            path: "n_grid".into(),
            message: format!(
                "a rate study needs >= 4 points spanning >= 1.5 decades, got {:?}",
                cfg.n_grid
            ),
        });
    }
    Ok(())
}

fn bandit_only<'a>(
    cfg: &'a StudyConfig,
    what: &str,
) -> Result<&'a crate::simulator::BanditScenario> {
    match &cfg.scenario {
        Scenario::Bandit(s) => Ok(s),
        Scenario::Ranking(_) => Err(Error::Config {
            path: "environment".into(),
            message: format!("{what} needs a bandit scenario"),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayPoint {
    pub n: usize,
    /// Monte Carlo estimate of `E[R_n²]`.
    pub mean_r_sq: f64,
    pub se: f64,
    /// Replicates with `W̄ < 1/2`.
    pub event_failures: usize,
    pub hoeffding_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub scenario: String,
    pub true_value: f64,
    pub slope: f64,
    pub intercept: f64,
    pub points: Vec<DecayPoint>,
    /// Grid sizes whose mean `R_n²` was zero, so had no logarithm.
    pub dropped: Vec<usize>,
    /// `R_n` summarised as an "estimator" of 0; its `mse` column is `E[R_n²]`.
    pub rows: Vec<StudyRow>,
}

/// Empirical decay rate of `E[R_n²]` for the remainder at baseline `true_value`.
pub fn decay_rate_study(cfg: &StudyConfig, true_value: f64) -> Result<DecayReport> {
    cfg.validate()?;
    require_rate_grid(cfg)?;
    let scenario = bandit_only(cfg, "the remainder decay study")?;
    let mut points = Vec::new();
    let mut dropped = Vec::new();
    let mut rows = Vec::new();
    for (c, &n) in cfg.n_grid.iter().enumerate() {
        let reps = cfg.replicates(c, n, |draw| match draw {
            Draw::Bandit(d) => remainder_diagnostics(d, true_value).map(|r| (r.r_n, r.event_holds)),
            Draw::Ranked(_) => unreachable!("bandit scenario checked"),
        })?;
        let failures = reps.iter().filter(|r| r.is_err()).count();
        if failures * 100 > reps.len() {
            return Err(Error::TooManyFailures {
                estimator: "remainder".into(),
                n,
                failed: failures,
                total: reps.len(),
                first: Error::ZeroWeightSum { position: None }.to_string(),
            });
        }
        let ok: Vec<(f64, bool)> = reps.into_iter().filter_map(Result::ok).collect();
        let r_n: Vec<f64> = ok.iter().map(|p| p.0).collect();
        rows.push(StudyRow::from_values(
            "remainder".into(),
            n,
            &r_n,
            0.0,
            failures,
        )?);
        let sq: Vec<f64> = r_n.iter().map(|r| r * r).collect();
        let (mean_r_sq, se) = mean_and_se(&sq);
        if mean_r_sq > 0.0 {
            points.push(DecayPoint {
                n,
                mean_r_sq,
                se,
                event_failures: ok.iter().filter(|p| !p.1).count(),
                hoeffding_bound: hoeffding_tail_bound(n, scenario.weight_bound()),
            });
        } else {
            dropped.push(n);
        }
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.n as f64, p.mean_r_sq)).collect();
    let (slope, intercept) = fit_loglog_slope(&xy)?;
    Ok(DecayReport {
        scenario: cfg.scenario_label.clone(),
        true_value,
        slope,
        intercept,
        points,
        dropped,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasPoint {
    pub n: usize,
    /// `mean(estimate − β-IPS(anchor))`, an unbiased estimate of the bias.
    pub bias: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasSeries {
    pub estimator: String,
    pub anchor: f64,
    pub points: Vec<BiasPoint>,
    /// Log-log slope of `|bias|` against `n`; `None` if any `|bias|` is zero.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasRateReport {
    pub scenario: String,
    pub series: Vec<BiasSeries>,
    pub rows: Vec<StudyRow>,
}

/// Bias of each estimator across the grid, measured against a paired
/// β-IPS control at the estimator's anchor baseline.
///
/// For SNIPS the anchor is `V`, so the paired difference is exactly the
/// remainder `R_n`, whose spread shrinks like `1/n`; a plain `mean − V`
/// estimate would be swamped by `1/√n` noise long before the `1/n` bias
/// becomes measurable.
pub fn bias_rate_study(cfg: &StudyConfig) -> Result<BiasRateReport> {
    cfg.validate()?;
    require_rate_grid(cfg)?;
    bandit_only(cfg, "the bias-rate study")?;
    let oracle = Oracle::for_config(cfg);
    let v = oracle.true_values[0];
    let anchors: Vec<f64> = cfg
        .estimators
        .iter()
        .map(|e| {
            e.anchor(v, oracle.beta_star[0]).ok_or_else(|| {
                Error::PreconditionNotMet(format!(
                    "no anchor baseline for `{}` (degenerate weights)",
                    e.label()
                ))
            })
        })
        .collect::<Result<_>>()?;
    let mut series: Vec<BiasSeries> = cfg
        .estimators
        .iter()
        .zip(&anchors)
        .map(|(e, &anchor)| BiasSeries {
            estimator: e.label(),
            anchor,
            points: vec![],
            slope: None,
        })
        .collect();
    let mut cells = Vec::new();
    for (c, &n) in cfg.n_grid.iter().enumerate() {
        let per_rep = cfg.replicates(c, n, |draw| {
            let Draw::Bandit(d) = draw else {
                unreachable!("bandit scenario checked")
            };
            cfg.estimators
                .iter()
                .zip(&anchors)
                .map(|(e, &a)| cfg.evaluate(e, draw).map(|v| (v[0], beta_ips(d, a).value)))
                .collect::<Vec<_>>()
        })?;
        let mut values: Vec<Vec<Result<Vec<f64>>>> = vec![Vec::new(); cfg.estimators.len()];
        for (e, s) in series.iter_mut().enumerate() {
            let diffs: Vec<f64> = per_rep
                .iter()
                .filter_map(|rep| rep[e].as_ref().ok())
                .map(|(x, a)| x - a)
                .collect();
            let (bias, se) = mean_and_se(&diffs);
            s.points.push(BiasPoint { n, bias, se });
        }
        for rep in per_rep {
            for (e, v) in rep.into_iter().enumerate() {
                values[e].push(v.map(|(x, _)| vec![x]));
            }
        }
        cells.push(Cell { n, values });
    }
    let rows = rows_for(cfg, &oracle, &cfg.estimators, &cells)?;
    for s in &mut series {
        let xy: Vec<(f64, f64)> = s
            .points
            .iter()
            .map(|p| (p.n as f64, p.bias.abs()))
            .collect();
        s.slope = fit_loglog_slope(&xy).ok().map(|(slope, _)| slope);
    }
    Ok(BiasRateReport {
        scenario: cfg.scenario_label.clone(),
        series,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceCell {
    pub n: usize,
    pub position: Option<usize>,
    pub mse_snips: f64,
    pub mse_beta_star: f64,
    /// `MSE(SNIPS) − MSE(β̂*-IPS)` over paired replicates.
    pub margin: f64,
    pub se: f64,
    pub theory_gap: Option<f64>,
    /// `margin > 2 se`.
    pub dominant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceReport {
    pub scenario: String,
    pub cells: Vec<DominanceCell>,
    /// Per position: smallest grid `n` from which β̂*-IPS dominates at every larger grid point.
    pub dominant_from: Vec<Option<usize>>,
    pub rows: Vec<StudyRow>,
}

impl DominanceReport {
    pub fn all_dominant(&self) -> bool {
        self.cells.iter().all(|c| c.dominant)
    }
}

/// Paired MSE comparison of β̂*-IPS (β⊥*-IPM per position) against SNIPS (SNIPM).
///
/// Refuses to run where the oracle certifies `β* = V` or `Var(w) = 0`, since
/// no dominance is predicted there.
pub fn dominance_check(cfg: &StudyConfig) -> Result<DominanceReport> {
    cfg.validate()?;
    let oracle = Oracle::for_config(cfg);
    for (j, (&v, beta)) in oracle.true_values.iter().zip(&oracle.beta_star).enumerate() {
        match beta {
            None => {
                return Err(Error::PreconditionNotMet(format!(
                    "position {j}: importance weights have zero variance"
                )))
            }
            Some(b) if (b - v).abs() <= 1e-9 * v.abs().max(1.0) => {
                return Err(Error::PreconditionNotMet(format!(
                    "position {j}: beta* = V = {v}; the variance gap is zero and no dominance is predicted"
                )))
            }
            _ => {}
        }
    }
    let ranked = matches!(cfg.scenario, Scenario::Ranking(_));
    let estimators = if ranked {
        vec![EstimatorSpec::Snipm, EstimatorSpec::BetaPerpStarIpm]
    } else {
        vec![EstimatorSpec::Snips, EstimatorSpec::BetaStarIps]
    };
    let cells = collect_cells(cfg, &estimators)?;
    let (ls, lb) = (estimators[0].label(), estimators[1].label());
    let mut out = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        let pairs = paired(cell, 0, 1, &ls, &lb)?;
        for j in 0..cfg.k() {
            let v = oracle.true_values[j];
            let s = cell.column(0, j, &pairs);
            let b = cell.column(1, j, &pairs);
            let (margin, se) = paired_mse_difference(&s, &b, v);
            out.push(DominanceCell {
                n: cell.n,
                position: ranked.then_some(j),
                mse_snips: mse_decompose(&s, v)?.mse,
                mse_beta_star: mse_decompose(&b, v)?.mse,
                margin,
                se,
                theory_gap: oracle.per_n[c].gap_delta[j],
                dominant: margin > 2.0 * se,
            });
        }
    }
    let dominant_from = (0..cfg.k())
        .map(|j| {
            let at_j: Vec<&DominanceCell> = out
                .iter()
                .filter(|c| c.position.unwrap_or(0) == j)
                .collect();
            let tail = at_j.iter().rev().take_while(|c| c.dominant).count();
            (tail > 0).then(|| at_j[at_j.len() - tail].n)
        })
        .collect();
    Ok(DominanceReport {
        scenario: cfg.scenario_label.clone(),
        rows: rows_for(cfg, &oracle, &estimators, &cells)?,
        cells: out,
        dominant_from,
    })
}
