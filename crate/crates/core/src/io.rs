//! File formats and command orchestration.
//!
//! # Log files (JSONL)
//!
//! An optional first line carries the declared envelopes (and, when the
//! file was produced by the simulator, the run manifest):
//!
//! ```text
//! {"_meta":{"reward_bound":1.0,"weight_bound":9.0}}
//! ```
//!
//! Every other non-blank line is one record. Scalar records:
//!
//! ```text
//! {"context":"u1","action":"a2","p_log":0.5,"p_tgt":0.5,"reward":1.0}
//! ```
//!
//! Ranked records:
//!
//! ```text
//! {"context":"u1","positions":[{"action":"a2","p_log":0.5,"p_tgt":0.5,"reward":1.0}, …]}
//! ```
//!
//! A file is either all scalar or all ranked. Numbers are written with
//! shortest round-trip formatting, so writing and re-reading a dataset
//! reproduces it exactly.
//!
//! # Study configuration (TOML)
//!
//! See [`StudyFile`]; the schema is also documented in the repository README.
//!
//! # Reports
//!
//! CSV with header `estimator,n,mean,bias,variance,mse,se`, every number in
//! `{:.16e}` (17 significant digits), plus a JSON document holding the run
//! manifest, oracle values and study-specific results. The CSV carries no
//! timestamps, so reruns of one configuration are byte-identical.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analysis::{remainder_diagnostics, variance_gap};
use crate::dataset::{
    validate_dataset, validate_ranked_dataset, LogEntry, PositionRecord, RankedLogEntry,
    WeightedSample,
};
use crate::error::{Error, Quantity, Result};
use crate::estimators::{
    beta_ips, beta_star_hat, beta_star_ips, cross_fitted_beta_ips, empirical_moments, ips, snips,
    CrossFitConfig,
};
use crate::experiments::{
    bias_rate_study, decay_rate_study, dominance_check, run_mc_study, BiasRateReport, DecayReport,
    DominanceReport, EstimatorSpec, StudyConfig, StudyReport, StudyRow,
};
use crate::ranking::{beta_ipm, beta_perp_star_hat, beta_perp_star_ipm, ipm, snipm};
use crate::simulator::{
    preset, BanditEnv, BanditScenario, PolicyTable, PositionSpec, RankingEnv, Scenario,
};
use crate::{Dataset, RankedDataset};

/// Environment variable naming the default output directory for reports.
pub const OUT_DIR_ENV: &str = "OPE_OUT_DIR";

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes `bytes` to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Declared reward and weight envelopes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub reward_bound: f64,
    pub weight_bound: f64,
}

/// A parsed, validated log file.
#[derive(Debug, Clone, PartialEq)]
pub enum LogFile {
    Scalar(Dataset),
    Ranked(RankedDataset),
}

impl LogFile {
    pub fn len(&self) -> usize {
        match self {
            LogFile::Scalar(d) => d.len(),
            LogFile::Ranked(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bounds(&self) -> Bounds {
        match self {
            LogFile::Scalar(d) => Bounds {
                reward_bound: d.reward_bound(),
                weight_bound: d.weight_bound(),
            },
            LogFile::Ranked(d) => Bounds {
                reward_bound: d.reward_bound(),
                weight_bound: d.weight_bound(),
            },
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScalarRecord {
    context: String,
    action: String,
    p_log: f64,
    p_tgt: f64,
    reward: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PositionRow {
    action: String,
    p_log: f64,
    p_tgt: f64,
    reward: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RankedRecord {
    context: String,
    positions: Vec<PositionRow>,
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    #[serde(rename = "_meta")]
    meta: MetaBody,
}

#[derive(Serialize, Deserialize)]
struct MetaBody {
    reward_bound: f64,
    weight_bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    manifest: Option<Value>,
}

/// Parses JSONL log text. `bounds` overrides the `_meta` header when given.
pub fn parse_logs(text: &str, bounds: Option<Bounds>) -> Result<LogFile> {
    let mut header: Option<Bounds> = None;
    let mut scalar = Vec::new();
    let mut ranked = Vec::new();
    // Physical line of each record, for mapping validation errors back.
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let parse_err = |e: serde_json::Error| Error::Parse {
            line,
            message: e.to_string(),
        };
        if value.get("_meta").is_some() {
            if !lines.is_empty() || header.is_some() {
                return Err(Error::Parse {
                    line,
                    message: "`_meta` header must be the first line".into(),
                });
            }
            let m: MetaLine = serde_json::from_value(value).map_err(parse_err)?;
            header = Some(Bounds {
                reward_bound: m.meta.reward_bound,
                weight_bound: m.meta.weight_bound,
            });
            continue;
        }
        if value.get("positions").is_some() {
            let r: RankedRecord = serde_json::from_value(value).map_err(parse_err)?;
            ranked.push(RankedLogEntry {
                context_id: r.context.into(),
                per_position: r
                    .positions
                    .into_iter()
                    .map(|p| PositionRecord {
                        action_id: p.action.into(),
                        propensity_logging: p.p_log,
                        propensity_target: p.p_tgt,
                        reward: p.reward,
                    })
                    .collect(),
            });
        } else {
            let r: ScalarRecord = serde_json::from_value(value).map_err(parse_err)?;
            scalar.push(LogEntry {
                context_id: r.context.into(),
                action_id: r.action.into(),
                propensity_logging: r.p_log,
                propensity_target: r.p_tgt,
                reward: r.reward,
            });
        }
        if !scalar.is_empty() && !ranked.is_empty() {
            return Err(Error::Parse {
                line,
                message: "file mixes scalar and ranked records".into(),
            });
        }
        lines.push(line);
    }
    let b = bounds.or(header).ok_or(Error::MissingBounds)?;
    // Record-level errors carry an index; map it to the physical line.
    let at_line = |e: Error| {
        let index = match &e {
            Error::NonPositiveLoggingPropensity { index, .. } => Some(*index),
            Error::BoundViolation {
                index, quantity, ..
            } if !matches!(quantity, Quantity::RewardBound | Quantity::WeightBound) => Some(*index),
            _ => None,
        };
        match index.and_then(|i| lines.get(i)) {
            Some(&line) => Error::AtLine {
                line,
                source: Box::new(e),
            },
            None => e,
        }
    };
    if ranked.is_empty() {
        validate_dataset(scalar, b.reward_bound, b.weight_bound)
            .map(LogFile::Scalar)
            .map_err(at_line)
    } else {
        validate_ranked_dataset(ranked, b.reward_bound, b.weight_bound)
            .map(LogFile::Ranked)
            .map_err(at_line)
    }
}

/// Reads and validates a JSONL log file.
pub fn read_logs(path: &Path, bounds: Option<Bounds>) -> Result<LogFile> {
    parse_logs(&read_text(path)?, bounds)
}

/// Serialises a log with its `_meta` header; `manifest` is embedded in the header when given.
pub fn write_logs(log: &LogFile, manifest: Option<&RunManifest>) -> String {
    let b = log.bounds();
    let meta = MetaLine {
        meta: MetaBody {
            reward_bound: b.reward_bound,
            weight_bound: b.weight_bound,
            manifest: manifest.map(|m| serde_json::to_value(m).expect("manifest serialises")),
        },
    };
    let mut out = serde_json::to_string(&meta).expect("meta serialises");
    out.push('\n');
    let mut push = |v: String| {
        out.push_str(&v);
        out.push('\n');
    };
    match log {
        LogFile::Scalar(d) => {
            for e in d.entries() {
                push(
                    serde_json::to_string(&ScalarRecord {
                        context: e.context_id.to_string(),
                        action: e.action_id.to_string(),
                        p_log: e.propensity_logging,
                        p_tgt: e.propensity_target,
                        reward: e.reward,
                    })
                    .expect("record serialises"),
                );
            }
        }
        LogFile::Ranked(d) => {
            for e in d.entries() {
                push(
                    serde_json::to_string(&RankedRecord {
                        context: e.context_id.to_string(),
                        positions: e
                            .per_position
                            .iter()
                            .map(|p| PositionRow {
                                action: p.action_id.to_string(),
                                p_log: p.propensity_logging,
                                p_tgt: p.propensity_target,
                                reward: p.reward,
                            })
                            .collect(),
                    })
                    .expect("record serialises"),
                );
            }
        }
    }
    out
}

/// Provenance attached to every emitted report.
///
/// Timestamps are excluded from [`RunManifest::same_run`], so two runs with
/// equal manifests are expected to produce identical outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// SHA-256 of the configuration bytes (or of the command parameters).
    pub config_hash: String,
    pub master_seed: u64,
    /// Preset name, or `inline:<sha256>` of an inline environment.
    pub environment: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn start(config_bytes: &[u8], master_seed: u64, environment: String) -> Self {
        let t = now_ms();
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: sha256_hex(config_bytes),
            master_seed,
            environment,
            started_unix_ms: t,
            finished_unix_ms: t,
        }
    }

    pub fn finish(mut self) -> Self {
        self.finished_unix_ms = now_ms();
        self
    }

    pub fn same_run(&self, other: &Self) -> bool {
        self.tool_version == other.tool_version
            && self.config_hash == other.config_hash
            && self.master_seed == other.master_seed
            && self.environment == other.environment
    }
}

/// `[environment]` table of a study or simulation config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub preset: Option<String>,
    pub bandit: Option<BanditSpec>,
    pub ranking: Option<RankingSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditSpec {
    pub context_probs: Vec<f64>,
    pub reward_means: Vec<Vec<f64>>,
    pub logging: Vec<Vec<f64>>,
    pub target: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingSpec {
    pub context_probs: Vec<f64>,
    pub positions: Vec<PositionTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionTable {
    pub reward_means: Vec<Vec<f64>>,
    pub logging: Vec<Vec<f64>>,
    pub target: Vec<Vec<f64>>,
}

fn at_path(path: String) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Config { .. } | Error::UnknownPreset(_) => e,
        e => Error::Config {
            path: path.clone(),
            message: e.to_string(),
        },
    }
}

impl EnvironmentSpec {
    /// Builds the scenario and a label (preset name or `inline:<hash>`).
    pub fn build(&self) -> Result<(Scenario, String)> {
        let chosen = [
            self.preset.is_some(),
            self.bandit.is_some(),
            self.ranking.is_some(),
        ]
        .iter()
        .filter(|b| **b)
        .count();
        if chosen != 1 {
            return Err(Error::Config {
                path: "environment".into(),
                message: "set exactly one of `preset`, `bandit`, `ranking`".into(),
            });
        }
        let inline_label = || {
            format!(
                "inline:{}",
                sha256_hex(
                    serde_json::to_string(self)
                        .expect("spec serialises")
                        .as_bytes()
                )
            )
        };
        if let Some(name) = &self.preset {
            return Ok((preset(name)?, name.clone()));
        }
        if let Some(b) = &self.bandit {
            let env = BanditEnv::new(b.context_probs.clone(), b.reward_means.clone())
                .map_err(at_path("environment.bandit".into()))?;
            let logging = PolicyTable::new(b.logging.clone())
                .map_err(at_path("environment.bandit.logging".into()))?;
            let target = PolicyTable::new(b.target.clone())
                .map_err(at_path("environment.bandit.target".into()))?;
            let s = BanditScenario::new(env, logging, target)
                .map_err(at_path("environment.bandit".into()))?;
            return Ok((Scenario::Bandit(s), inline_label()));
        }
        let r = self.ranking.as_ref().expect("exactly one variant set");
        let positions = r
            .positions
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let path = |f: &str| format!("environment.ranking.positions[{j}].{f}");
                Ok(PositionSpec {
                    logging: PolicyTable::new(p.logging.clone())
                        .map_err(at_path(path("logging")))?,
                    target: PolicyTable::new(p.target.clone()).map_err(at_path(path("target")))?,
                    reward_means: p.reward_means.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let env = RankingEnv::new(r.context_probs.clone(), positions)
            .map_err(at_path("environment.ranking".into()))?;
        Ok((Scenario::Ranking(env), inline_label()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    Mc,
    Decay,
    Dominance,
    BiasRate,
}

/// Study configuration file.
///
/// ```toml
/// kind = "mc"                 # mc | decay | dominance | bias-rate
/// replicates = 10000          # >= 100
/// seed = 7
/// n_grid = [100, 400, 1600, 6400]
/// estimators = ["snips", "beta-star-ips"]
/// folds = 5                   # optional, cross-fitting
/// threads = 8                 # optional; never changes results
/// true_value = 0.26           # optional, decay only; defaults to the oracle V
///
/// [environment]
/// preset = "flip2"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub kind: StudyKind,
    pub replicates: usize,
    pub seed: u64,
    pub n_grid: Vec<usize>,
    #[serde(default)]
    pub estimators: Vec<String>,
    pub folds: Option<usize>,
    pub threads: Option<usize>,
    pub true_value: Option<f64>,
    pub environment: EnvironmentSpec,
}

fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::Config {
        path: "<root>".into(),
        message: e.to_string(),
    })?;
    serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

impl StudyFile {
    pub fn parse(text: &str) -> Result<Self> {
        parse_toml(text)
    }

    pub fn to_config(&self) -> Result<StudyConfig> {
        let (scenario, scenario_label) = self.environment.build()?;
        let estimators = self
            .estimators
            .iter()
            .enumerate()
            .map(|(i, s)| {
                EstimatorSpec::parse(s).map_err(|e| match e {
                    Error::Config { message, .. } => Error::Config {
                        path: format!("estimators[{i}]"),
                        message,
                    },
                    e => e,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cfg = StudyConfig {
            scenario,
            scenario_label,
            estimators,
            n_grid: self.n_grid.clone(),
            replicates: self.replicates,
            master_seed: self.seed,
            folds_k: self.folds,
            threads: self.threads,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Environment-only config accepted by `simulate --config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    pub environment: EnvironmentSpec,
}

impl SimulateFile {
    pub fn parse(text: &str) -> Result<Self> {
        parse_toml(text)
    }
}

/// Result of any study kind.
#[derive(Debug, Clone, PartialEq)]
pub enum StudyOutcome {
    Mc(StudyReport),
    Decay(DecayReport),
    Dominance(DominanceReport),
    BiasRate(BiasRateReport),
}

impl StudyOutcome {
    pub fn rows(&self) -> &[StudyRow] {
        match self {
            StudyOutcome::Mc(r) => &r.rows,
            StudyOutcome::Decay(r) => &r.rows,
            StudyOutcome::Dominance(r) => &r.rows,
            StudyOutcome::BiasRate(r) => &r.rows,
        }
    }

    fn to_json(&self) -> Value {
        match self {
            StudyOutcome::Mc(r) => json!({ "kind": "mc", "result": r }),
            StudyOutcome::Decay(r) => json!({ "kind": "decay", "result": r }),
            StudyOutcome::Dominance(r) => {
                json!({ "kind": "dominance", "all_dominant": r.all_dominant(), "result": r })
            }
            StudyOutcome::BiasRate(r) => json!({ "kind": "bias-rate", "result": r }),
        }
    }
}

pub fn run_study(file: &StudyFile) -> Result<StudyOutcome> {
    let cfg = file.to_config()?;
    match file.kind {
        StudyKind::Mc => run_mc_study(&cfg).map(StudyOutcome::Mc),
        StudyKind::Decay => {
            let v = match (file.true_value, &cfg.scenario) {
                (Some(v), _) => v,
                (None, Scenario::Bandit(s)) => s.true_value(),
                (None, Scenario::Ranking(_)) => {
                    return Err(Error::Config {
                        path: "environment".into(),
                        message: "the remainder decay study needs a bandit scenario".into(),
                    })
                }
            };
            decay_rate_study(&cfg, v).map(StudyOutcome::Decay)
        }
        StudyKind::Dominance => dominance_check(&cfg).map(StudyOutcome::Dominance),
        StudyKind::BiasRate => bias_rate_study(&cfg).map(StudyOutcome::BiasRate),
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV with columns `estimator,n,mean,bias,variance,mse,se`.
pub fn rows_to_csv(rows: &[StudyRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["estimator", "n", "mean", "bias", "variance", "mse", "se"])
        .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.estimator.clone(),
            r.n.to_string(),
            fmt_num(r.mean),
            fmt_num(r.bias),
            fmt_num(r.variance),
            fmt_num(r.mse),
            fmt_num(r.se),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub struct StudyOutputs {
    pub csv_path: PathBuf,
    pub json_path: PathBuf,
    pub outcome: StudyOutcome,
    pub manifest: RunManifest,
}

/// Runs a study config file and writes `<stem>.csv` and `<stem>.json` into `out_dir`.
pub fn study_command(config_path: &Path, out_dir: &Path) -> Result<StudyOutputs> {
    let text = read_text(config_path)?;
    let file = StudyFile::parse(&text)?;
    let (_, env_label) = file.environment.build()?;
    let manifest = RunManifest::start(text.as_bytes(), file.seed, env_label);
    let outcome = run_study(&file)?;
    let manifest = manifest.finish();
    let stem = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "study".into());
    let csv_path = out_dir.join(format!("{stem}.csv"));
    let json_path = out_dir.join(format!("{stem}.json"));
    write_atomic(&csv_path, rows_to_csv(outcome.rows()).as_bytes())?;
    let mut doc = outcome.to_json();
    doc["manifest"] = serde_json::to_value(&manifest).expect("manifest serialises");
    doc["config"] = serde_json::to_value(&file).expect("config serialises");
    write_atomic(
        &json_path,
        serde_json::to_string_pretty(&doc)
            .expect("report serialises")
            .as_bytes(),
    )?;
    Ok(StudyOutputs {
        csv_path,
        json_path,
        outcome,
        manifest,
    })
}

/// Where `simulate` draws from.
pub enum SimulateSource<'a> {
    Preset(&'a str),
    Config(&'a Path),
}

/// Samples `n` logs and writes them (with a manifest-bearing `_meta` header) to `out`.
pub fn simulate_command(
    source: SimulateSource<'_>,
    n: usize,
    seed: u64,
    out: &Path,
) -> Result<RunManifest> {
    let (scenario, label, config_bytes) = match source {
        SimulateSource::Preset(name) => (
            preset(name)?,
            name.to_string(),
            format!("preset={name}").into_bytes(),
        ),
        SimulateSource::Config(path) => {
            let text = read_text(path)?;
            let (scenario, label) = SimulateFile::parse(&text)?.environment.build()?;
            (scenario, label, text.into_bytes())
        }
    };
    if n == 0 {
        return Err(Error::Config {
            path: "n".into(),
            message: "must be >= 1".into(),
        });
    }
    let mut bytes = config_bytes;
    bytes.extend_from_slice(format!(";n={n}").as_bytes());
    let manifest = RunManifest::start(&bytes, seed, label);
    let mut rng = crate::simulator::replicate_rng(seed, 0);
    let log = match &scenario {
        Scenario::Bandit(s) => LogFile::Scalar(s.sample_with(n, &mut rng)?),
        Scenario::Ranking(env) => LogFile::Ranked(env.sample_with(n, &mut rng)?),
    };
    // Timestamps stay out of the data file so reruns are byte-identical.
    let mut stamped = manifest.clone();
    stamped.started_unix_ms = 0;
    stamped.finished_unix_ms = 0;
    write_atomic(out, write_logs(&log, Some(&stamped)).as_bytes())?;
    Ok(manifest.finish())
}

/// Options for [`evaluate`].
#[derive(Debug, Clone, Default)]
pub struct EvaluateOptions {
    pub estimators: Vec<String>,
    /// Emit the variance-gap report (needs `true_values`).
    pub gap: bool,
    /// Emit remainder diagnostics (needs `true_values`).
    pub remainder: bool,
    /// `V(π)`, or one `V_j(π)` per position for ranked logs.
    pub true_values: Option<Vec<f64>>,
    pub folds: CrossFitConfig,
}

fn estimate_json(label: &str, r: Result<Value>) -> Value {
    match r {
        Ok(mut v) => {
            v["estimator"] = Value::from(label);
            v
        }
        Err(e) => json!({ "estimator": label, "error": e.to_string() }),
    }
}

/// Computes the requested estimates and diagnostics for a log file.
///
/// Estimator failures (e.g. degenerate weights for `beta-star-ips`) are
/// reported per row; gap and remainder outputs refuse to run without an
/// explicit true value, because both are defined relative to `V(π)`.
pub fn evaluate(log: &LogFile, opts: &EvaluateOptions) -> Result<Value> {
    if opts.gap && opts.true_values.is_none() {
        return Err(Error::TrueValueRequired("the variance gap"));
    }
    if opts.remainder && opts.true_values.is_none() {
        return Err(Error::TrueValueRequired("remainder diagnostics"));
    }
    let specs = opts
        .estimators
        .iter()
        .map(|s| EstimatorSpec::parse(s))
        .collect::<Result<Vec<_>>>()?;
    let mut doc = json!({ "n": log.len(), "bounds": log.bounds() });
    match log {
        LogFile::Scalar(d) => {
            let mut rows = Vec::new();
            for spec in &specs {
                let label = spec.label();
                let r = match spec {
                    EstimatorSpec::Ips => Ok(ips(d)),
                    EstimatorSpec::Snips => snips(d),
                    EstimatorSpec::BetaIps(b) => Ok(beta_ips(d, *b)),
                    EstimatorSpec::BetaStarIps => beta_star_ips(d),
                    EstimatorSpec::CrossFitBetaStarIps => cross_fitted_beta_ips(d, opts.folds),
                    _ => {
                        return Err(Error::Config {
                            path: "estimators".into(),
                            message: format!("`{label}` needs a ranked log"),
                        })
                    }
                };
                rows.push(estimate_json(
                    &label,
                    r.map(|e| json!({ "value": e.value, "baseline": e.baseline })),
                ));
            }
            doc["estimates"] = Value::from(rows);
            doc["moments"] = serde_json::to_value(empirical_moments(d)).expect("moments serialise");
            doc["beta_star_hat"] = beta_star_hat(d).map(Value::from).unwrap_or(Value::Null);
            if let Some(tv) = &opts.true_values {
                if tv.len() != 1 {
                    return Err(Error::LengthMismatch {
                        expected: 1,
                        actual: tv.len(),
                    });
                }
                let v = tv[0];
                if opts.gap {
                    let g = variance_gap(&empirical_moments(d), v)?;
                    doc["variance_gap"] = json!({
                        "true_value": v,
                        "var_beta": g.var_beta,
                        "var_beta_star": g.var_beta_star,
                        "avar_snips": g.avar_snips,
                        "gap_delta": g.gap_delta,
                        "n": g.n,
                    });
                }
                if opts.remainder {
                    doc["remainder"] = remainder_json(&d.as_columns(), v)?;
                }
            }
        }
        LogFile::Ranked(d) => {
            let mut rows = Vec::new();
            for spec in &specs {
                let label = spec.label();
                let r = match spec {
                    EstimatorSpec::Ipm => Ok(ipm(d)),
                    EstimatorSpec::Snipm => snipm(d),
                    EstimatorSpec::BetaIpm(b) => beta_ipm(d, b),
                    EstimatorSpec::BetaPerpStarIpm => beta_perp_star_ipm(d),
                    _ => {
                        return Err(Error::Config {
                            path: "estimators".into(),
                            message: format!("`{label}` needs a scalar log"),
                        })
                    }
                };
                rows.push(estimate_json(
                    &label,
                    r.map(|rep| json!({ "value": rep.total, "per_position": rep.estimates(), "baselines": rep.baselines() })),
                ));
            }
            doc["estimates"] = Value::from(rows);
            let moments: Vec<_> = d.positions().map(|p| empirical_moments(&p)).collect();
            doc["moments"] = serde_json::to_value(&moments).expect("moments serialise");
            doc["beta_perp_star_hat"] = beta_perp_star_hat(d)
                .map(Value::from)
                .unwrap_or(Value::Null);
            if let Some(tv) = &opts.true_values {
                if tv.len() != d.k() {
                    return Err(Error::LengthMismatch {
                        expected: d.k(),
                        actual: tv.len(),
                    });
                }
                if opts.gap {
                    let gaps = moments
                        .iter()
                        .zip(tv)
                        .map(|(m, &v)| variance_gap(m, v).map(|g| json!({"true_value": v, "var_beta_star": g.var_beta_star, "avar_snips": g.avar_snips, "gap_delta": g.gap_delta})))
                        .collect::<Result<Vec<_>>>()?;
                    doc["variance_gap"] = Value::from(gaps);
                }
                if opts.remainder {
                    let rem = d
                        .positions()
                        .zip(tv)
                        .map(|(p, &v)| remainder_json(&p, v))
                        .collect::<Result<Vec<_>>>()?;
                    doc["remainder"] = Value::from(rem);
                }
            }
        }
    }
    Ok(doc)
}

fn remainder_json<S: WeightedSample<f64>>(d: &S, v: f64) -> Result<Value> {
    let r = remainder_diagnostics(d, v)?;
    Ok(json!({
        "true_value": v,
        "l_n": r.l_n,
        "w_bar": r.w_bar,
        "r_n": r.r_n,
        "r_n_linearised": r.r_n_linearised,
        "event_holds": r.event_holds,
        "centred_bounds_hold": r.centred_bounds_hold(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = r#"{"_meta":{"reward_bound":1.0,"weight_bound":10.0}}"#;

    #[test]
    fn identity_record() {
        let text = format!(
            "{HEADER}\n{}\n",
            r#"{"context":"u1","action":"a2","p_log":0.5,"p_tgt":0.5,"reward":1.0}"#
        );
        let LogFile::Scalar(d) = parse_logs(&text, None).unwrap() else {
            panic!("scalar expected")
        };
        assert_eq!(d.weights(), &[1.0]);
        assert_eq!(&*d.entries()[0].context_id, "u1");
    }

    #[test]
    fn validation_error_reports_line() {
        let rec = r#"{"context":"u","action":"a","p_log":0.5,"p_tgt":0.5,"reward":1.0}"#;
        let bad = r#"{"context":"u","action":"a","p_log":0.0,"p_tgt":0.5,"reward":1.0}"#;
        let text = format!("{HEADER}\n{rec}\n{bad}\n");
        match parse_logs(&text, None).unwrap_err() {
            Error::AtLine { line, source } => {
                assert_eq!(line, 3);
                assert!(matches!(
                    *source,
                    Error::NonPositiveLoggingPropensity { index: 1, .. }
                ));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn parse_errors_and_missing_bounds() {
        let rec = r#"{"context":"u","action":"a","p_log":0.5,"p_tgt":0.5,"reward":1.0}"#;
        assert_eq!(parse_logs(rec, None).unwrap_err(), Error::MissingBounds);
        let b = Bounds {
            reward_bound: 1.0,
            weight_bound: 2.0,
        };
        assert!(matches!(parse_logs(rec, Some(b)), Ok(LogFile::Scalar(_))));
        assert!(matches!(
            parse_logs(&format!("{HEADER}\n{{oops"), None),
            Err(Error::Parse { line: 2, .. })
        ));
        let missing = r#"{"context":"u","action":"a","p_log":0.5,"reward":1.0}"#;
        assert!(matches!(
            parse_logs(&format!("{HEADER}\n{missing}"), None),
            Err(Error::Parse { line: 2, .. })
        ));
        let ranked =
            r#"{"context":"u","positions":[{"action":"a","p_log":0.5,"p_tgt":0.5,"reward":1.0}]}"#;
        assert!(matches!(
            parse_logs(&format!("{HEADER}\n{rec}\n{ranked}"), None),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_logs(&format!("{rec}\n{HEADER}"), Some(b)),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn round_trip_scalar_and_ranked() {
        let Scenario::Bandit(s) = preset("mixed3x3").unwrap() else {
            unreachable!()
        };
        let d = LogFile::Scalar(
            s.sample_with(200, &mut crate::simulator::replicate_rng(1, 0))
                .unwrap(),
        );
        assert_eq!(parse_logs(&write_logs(&d, None), None).unwrap(), d);
        let Scenario::Ranking(r) = preset("rankflip2x2").unwrap() else {
            unreachable!()
        };
        let d = LogFile::Ranked(
            r.sample_with(50, &mut crate::simulator::replicate_rng(1, 0))
                .unwrap(),
        );
        assert_eq!(parse_logs(&write_logs(&d, None), None).unwrap(), d);
    }

    #[test]
    fn csv_fixed_precision() {
        let rows = vec![StudyRow {
            estimator: "ips".into(),
            n: 10,
            mean: 0.26,
            bias: 0.0,
            variance: 1.0 / 3.0,
            mse: 1e-300,
            se: 2.5,
            replicates_used: 100,
            failures: 0,
            theory_variance: None,
        }];
        let csv = rows_to_csv(&rows);
        assert_eq!(
            csv,
            "estimator,n,mean,bias,variance,mse,se\n\
             ips,10,2.6000000000000001e-1,0.0000000000000000e0,3.3333333333333331e-1,1.0000000000000000e-300,2.5000000000000000e0\n"
        );
    }

    #[test]
    fn study_file_schema_errors_carry_paths() {
        let err = StudyFile::parse("kind = \"mc\"\nreplicates = \"many\"\nseed = 1\nn_grid = [10]\n[environment]\npreset = \"flip2\"\n").unwrap_err();
        assert!(
            matches!(err, Error::Config { ref path, .. } if path == "replicates"),
            "{err:?}"
        );
        let err = StudyFile::parse("kind = \"mc\"\nreplicates = 100\nseed = 1\nn_grid = [10]\nbogus = 1\n[environment]\npreset = \"flip2\"\n").unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
        let f = StudyFile::parse("kind = \"mc\"\nreplicates = 100\nseed = 1\nn_grid = [10]\nestimators = [\"ips\", \"nope\"]\n[environment]\npreset = \"flip2\"\n").unwrap();
        assert!(
            matches!(f.to_config(), Err(Error::Config { ref path, .. }) if path == "estimators[1]")
        );
        let f = StudyFile::parse("kind = \"mc\"\nreplicates = 100\nseed = 1\nn_grid = [10]\n[environment.bandit]\ncontext_probs = [1.0]\nreward_means = [[0.5, 0.5]]\nlogging = [[0.5, 0.4]]\ntarget = [[0.5, 0.5]]\n").unwrap();
        assert!(
            matches!(f.to_config(), Err(Error::Config { ref path, .. }) if path == "environment.bandit.logging")
        );
    }

    #[test]
    fn inline_environments() {
        let f = StudyFile::parse(
            "kind = \"mc\"\nreplicates = 100\nseed = 1\nn_grid = [10]\nestimators = [\"ipm\"]\n\
             [environment.ranking]\ncontext_probs = [1.0]\n\
             [[environment.ranking.positions]]\nreward_means = [[0.8, 0.2]]\nlogging = [[0.9, 0.1]]\ntarget = [[0.1, 0.9]]\n",
        )
        .unwrap();
        let cfg = f.to_config().unwrap();
        assert!(cfg.scenario_label.starts_with("inline:"));
        assert!(matches!(cfg.scenario, Scenario::Ranking(ref r) if r.k() == 1));
    }

    #[test]
    fn evaluate_guards_and_outputs() {
        let rec = |w_tgt: f64, r: f64| {
            format!(r#"{{"context":"u","action":"a","p_log":0.5,"p_tgt":{w_tgt},"reward":{r}}}"#)
        };
        let text = format!("{HEADER}\n{}\n{}\n", rec(1.0, 1.0), rec(0.25, 0.0));
        let log = parse_logs(&text, None).unwrap();
        let mut opts = EvaluateOptions {
            estimators: vec!["ips".into(), "snips".into(), "beta-star-ips".into()],
            gap: true,
            ..Default::default()
        };
        assert_eq!(
            evaluate(&log, &opts).unwrap_err(),
            Error::TrueValueRequired("the variance gap")
        );
        opts.true_values = Some(vec![0.5]);
        opts.remainder = true;
        let doc = evaluate(&log, &opts).unwrap();
        assert_eq!(doc["estimates"][0]["value"], 1.0);
        assert_eq!(doc["estimates"][1]["value"], 0.8);
        assert!(
            (doc["variance_gap"]["gap_delta"].as_f64().unwrap()
                - (0.5f64 * 0.5625 - 0.75).powi(2) / (2.0 * 0.5625))
                .abs()
                < 1e-15
        );
        assert!((doc["remainder"]["r_n"].as_f64().unwrap() + 0.075).abs() < 1e-15);
    }

    #[test]
    fn manifest_equality_ignores_time() {
        let a = RunManifest::start(b"x", 1, "flip2".into());
        let mut b = a.clone();
        b.started_unix_ms += 5;
        assert!(a.same_run(&b));
        let c = RunManifest::start(b"y", 1, "flip2".into());
        assert!(!a.same_run(&c));
    }
}
