//! Config-driven Monte Carlo experiments with anytime checkpoints.
//!
//! Trial `t` of the `a`-th configured algorithm draws all randomness from
//! `trial_rng(seed, a, t)`, and per-trial results are reduced in trial order,
//! so outputs do not depend on the worker count.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{
    ActiveRanking, AnytimeRanker, DuelSource, LucbRanker, QuicksortParam, UniformParam,
    UniformSampler,
};
use crate::bernoulli::{ExplorationSchedule, MathError, DEFAULT_ALPHA, DEFAULT_K1_MARGIN};
use crate::complexity::ComplexityReport;
use crate::engine::{EngineError, SampleError};
use crate::env::{draw_opponent, trial_rng, BtlInstance, EnvError, Environment, Instance, InstanceFile, PreferenceMatrix, TrialRng};
use crate::metrics::{cluster_mistake, inversion_decomposition, kendall_tau_fraction, pac_violation, EvalContext};
use crate::ranking::{ClusterSpec, CoarseRanking, SpecError};

/// Column order of the results table.
pub const RESULTS_HEADER: [&str; 13] = [
    "algorithm",
    "checkpoint",
    "trials",
    "mistake_rate",
    "mistake_se",
    "pac_violation_rate",
    "pac_violation_se",
    "kendall_tau",
    "kendall_tau_se",
    "inter_inversions",
    "inter_inversions_se",
    "intra_inversions",
    "intra_inversions_se",
];

/// Column order of the termination table.
pub const TERMINATION_HEADER: [&str; 6] = [
    "algorithm",
    "trial",
    "samples",
    "natural",
    "mistake",
    "pac_violation",
];

/// Default sample cap as a multiple of the last checkpoint.
pub const DEFAULT_CAP_FACTOR: u64 = 10;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown builtin instance {0:?}")]
    UnknownBuiltin(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("every trial of {algorithm} failed; first error: {first}")]
    AllTrialsFailed { algorithm: String, first: String },
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Named instance shipped with the crate.
///
/// * `B`: 15 Bernoulli arms, `p_1 = 1/2`, `p_a = 1/2 - a/40`.
/// * `btl-uniform(K, span)`: `K` BTL items with scores equally spaced on `[0, span]`.
pub fn builtin_instance(name: &str) -> Result<Instance, HarnessError> {
    let trimmed = name.trim();
    if trimmed == "B" {
        let mut means = vec![0.5];
        means.extend((2..=15).map(|a| 0.5 - a as f64 / 40.0));
        return Ok(Instance::Direct { means });
    }
    let unknown = || HarnessError::UnknownBuiltin(name.to_string());
    let args = trimmed
        .strip_prefix("btl-uniform(")
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(unknown)?;
    let (k, span) = args.split_once(',').ok_or_else(unknown)?;
    let k: usize = k.trim().parse().map_err(|_| unknown())?;
    let span: f64 = span.trim().parse().map_err(|_| unknown())?;
    let btl = BtlInstance::equally_spaced(k, span)?;
    Ok(Instance::Btl {
        scores: btl.scores().to_vec(),
    })
}

/// Where a config gets its instance from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceSource {
    Builtin(String),
    File(PathBuf),
    Inline(Instance),
}

impl InstanceSource {
    pub fn resolve(&self) -> Result<Instance, HarnessError> {
        match self {
            InstanceSource::Builtin(name) => builtin_instance(name),
            InstanceSource::File(path) => Ok(InstanceFile::load(path)?.instance),
            InstanceSource::Inline(inst) => {
                inst.validate()?;
                Ok(inst.clone())
            }
        }
    }
}

/// Cluster layout in a config: explicit boundaries (the trailing `K` may be
/// omitted), `{"equal_sized": c}`, or `"complete"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClusterLayout {
    Boundaries(Vec<usize>),
    Named(NamedLayout),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedLayout {
    EqualSized(usize),
    Complete,
}

impl ClusterLayout {
    pub fn resolve(&self, num_arms: usize) -> Result<ClusterSpec, SpecError> {
        match self {
            ClusterLayout::Boundaries(b) => {
                let mut b = b.clone();
                if b.last().is_some_and(|&last| last < num_arms) {
                    b.push(num_arms);
                }
                let spec = ClusterSpec::new(b)?;
                spec.check_arms(num_arms)?;
                Ok(spec)
            }
            ClusterLayout::Named(NamedLayout::EqualSized(c)) => ClusterSpec::equal_sized(num_arms, *c),
            ClusterLayout::Named(NamedLayout::Complete) => ClusterSpec::complete(num_arms),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Lucbrank,
    Uniform,
    ActiveRanking,
    /// Repeated early-stopping quicksort passes aggregated by BTL MLE.
    Quicksort,
    /// Uniformly random pairs aggregated by BTL MLE.
    UniformParam,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Lucbrank => "lucbrank",
            Algorithm::Uniform => "uniform",
            Algorithm::ActiveRanking => "active_ranking",
            Algorithm::Quicksort => "quicksort",
            Algorithm::UniformParam => "uniform_param",
        }
    }

    fn needs_pairs(self) -> bool {
        matches!(self, Algorithm::Quicksort | Algorithm::UniformParam)
    }
}

fn default_delta() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSource,
    pub algorithms: Vec<Algorithm>,
    pub clusters: ClusterLayout,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
    pub trials: u64,
    /// Sample budgets at which every algorithm's anytime ranking is scored.
    pub checkpoints: Vec<u64>,
    #[serde(default)]
    pub seed: u64,
    /// Trials stop here even if the algorithm has not finished; defaults to
    /// ten times the last checkpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_cap: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    /// Whether the manifest's complexity report optimizes boundary anchors.
    #[serde(default = "default_true")]
    pub optimize_anchors: bool,
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let shown = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: shown.clone(),
            source,
        })?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|source| HarnessError::Json {
            path: shown,
            source,
        })?;
        // Relative instance paths are taken relative to the config file.
        if let InstanceSource::File(p) = &mut cfg.instance {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.trials < 1 {
            return bad("trials must be at least 1".into());
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms listed".into());
        }
        if self.checkpoints.is_empty() || self.checkpoints[0] == 0 {
            return bad("checkpoints must be non-empty and positive".into());
        }
        if !self.checkpoints.windows(2).all(|w| w[0] < w[1]) {
            return bad(format!("checkpoints must be strictly increasing: {:?}", self.checkpoints));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad(format!("epsilon must be finite and nonnegative, got {}", self.epsilon));
        }
        if self.jobs == Some(0) {
            return bad("jobs must be at least 1".into());
        }
        if self.budget_cap.is_some_and(|c| c < self.last_checkpoint()) {
            return bad("budget_cap is below the last checkpoint".into());
        }
        Ok(())
    }

    fn last_checkpoint(&self) -> u64 {
        self.checkpoints.last().copied().unwrap_or(0)
    }

    pub fn effective_cap(&self) -> u64 {
        self.budget_cap
            .unwrap_or_else(|| self.last_checkpoint().saturating_mul(DEFAULT_CAP_FACTOR))
    }

    pub fn schedule(&self, num_arms: usize, num_clusters: usize) -> Result<ExplorationSchedule, MathError> {
        let alpha = self.alpha.unwrap_or(DEFAULT_ALPHA);
        let k1 = self
            .k1
            .unwrap_or_else(|| DEFAULT_K1_MARGIN * ExplorationSchedule::min_k1(alpha, num_clusters));
        ExplorationSchedule::new(k1, alpha, self.delta, num_arms, num_clusters)
    }
}

/// Scores of one ranking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub mistake: bool,
    pub pac_violation: bool,
    pub kendall_tau: f64,
    pub inter: u64,
    pub intra: u64,
}

pub fn score(ranking: &CoarseRanking, ctx: &EvalContext) -> Scores {
    let split = inversion_decomposition(&ranking.ranks, ctx);
    Scores {
        mistake: cluster_mistake(ranking, ctx),
        pac_violation: pac_violation(ranking, ctx),
        kendall_tau: kendall_tau_fraction(&ranking.ranks, ctx.true_order()),
        inter: split.inter,
        intra: split.intra,
    }
}

/// Everything recorded about one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    /// Scores at each checkpoint, in checkpoint order.
    pub checkpoints: Vec<Scores>,
    /// Samples used when the trial stopped.
    pub samples: u64,
    /// Whether the algorithm stopped on its own rather than at the cap.
    pub natural: bool,
    pub last: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub algorithm: String,
    pub trial: u64,
    pub error: String,
}

/// Mean and standard error over trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn from_values(values: impl Iterator<Item = f64> + Clone) -> Self {
        let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
        if n == 0 {
            return Self { mean: f64::NAN, se: f64::NAN };
        }
        let mean = sum / n as f64;
        if n < 2 {
            return Self { mean, se: 0.0 };
        }
        let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
        let var = ss / (n - 1) as f64;
        Self {
            mean,
            se: (var / n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub checkpoint: u64,
    pub trials: u64,
    pub mistake: Estimate,
    pub pac_violation: Estimate,
    pub kendall_tau: Estimate,
    pub inter: Estimate,
    pub intra: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmResult {
    pub algorithm: Algorithm,
    pub trials: Vec<TrialRecord>,
    pub failures: Vec<TrialFailure>,
    pub rows: Vec<SummaryRow>,
}

impl AlgorithmResult {
    /// Mean samples at stop over successful trials.
    pub fn mean_samples(&self) -> f64 {
        Estimate::from_values(self.trials.iter().map(|t| t.samples as f64)).mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub config: ExperimentConfig,
    pub true_means: Vec<f64>,
    pub spec: ClusterSpec,
    pub algorithms: Vec<AlgorithmResult>,
}

impl ExperimentResults {
    pub fn get(&self, algorithm: Algorithm) -> Option<&AlgorithmResult> {
        self.algorithms.iter().find(|a| a.algorithm == algorithm)
    }
}

struct PairwiseSource<'a> {
    matrix: &'a PreferenceMatrix,
    rng: &'a mut TrialRng,
}

impl DuelSource for PairwiseSource<'_> {
    fn duel(&mut self, i: usize, j: usize) -> Result<usize, EngineError> {
        self.matrix
            .duel(i, j, self.rng)
            .map_err(|e| EngineError::Sample(SampleError(e.to_string())))
    }
    fn random_pair(&mut self, k: usize) -> (usize, usize) {
        let i = self.rng.gen_range(0..k);
        (i, draw_opponent(k, i, self.rng))
    }
    fn seed(&mut self) -> u64 {
        self.rng.gen()
    }
}

/// One algorithm instance being driven through a trial.
enum Runner {
    Bandit(Box<dyn AnytimeRanker + Send>),
    UniformParam(UniformParam),
    Quicksort(QuicksortParam),
}

impl Runner {
    fn new(alg: Algorithm, spec: &ClusterSpec, eps: f64, schedule: ExplorationSchedule) -> Self {
        match alg {
            Algorithm::Lucbrank => Runner::Bandit(Box::new(LucbRanker::new(spec.clone(), eps, schedule))),
            Algorithm::Uniform => Runner::Bandit(Box::new(UniformSampler::new(spec.clone()))),
            Algorithm::ActiveRanking => Runner::Bandit(Box::new(ActiveRanking::new(spec.clone(), schedule))),
            Algorithm::Quicksort => Runner::Quicksort(QuicksortParam::new(spec.clone())),
            Algorithm::UniformParam => Runner::UniformParam(UniformParam::new(spec.clone())),
        }
    }

    fn samples(&self) -> u64 {
        match self {
            Runner::Bandit(a) => a.total_samples(),
            Runner::UniformParam(a) => a.total_samples(),
            Runner::Quicksort(a) => a.total_samples(),
        }
    }

    fn done(&self) -> bool {
        match self {
            Runner::Bandit(a) => a.is_done(),
            _ => false,
        }
    }

    fn ranking(&self) -> CoarseRanking {
        match self {
            Runner::Bandit(a) => a.ranking(),
            Runner::UniformParam(a) => a.ranking(),
            Runner::Quicksort(a) => a.ranking(),
        }
    }

    fn advance(&mut self, env: &Environment, rng: &mut TrialRng) -> Result<(), EngineError> {
        match self {
            Runner::Bandit(a) => a.step(&mut env.sampler(rng)),
            Runner::UniformParam(a) => a.step_duel(&mut pair_source(env, rng)?),
            Runner::Quicksort(a) => a.step_pass(&mut pair_source(env, rng)?),
        }
    }
}

fn pair_source<'a>(env: &'a Environment, rng: &'a mut TrialRng) -> Result<PairwiseSource<'a>, EngineError> {
    match env.matrix() {
        Some(matrix) => Ok(PairwiseSource { matrix, rng }),
        None => Err(EngineError::Sample(SampleError(
            "pairwise algorithm on a direct-means instance".into(),
        ))),
    }
}

/// Everything a trial needs besides its index.
pub struct TrialSetup<'a> {
    pub algorithm: Algorithm,
    pub stream: u64,
    pub seed: u64,
    pub env: &'a Environment,
    pub ctx: &'a EvalContext,
    pub epsilon: f64,
    pub schedule: ExplorationSchedule,
    pub checkpoints: &'a [u64],
    pub cap: u64,
}

/// Runs one trial: advances until the algorithm stops or reaches the cap,
/// scoring its anytime ranking the first time the sample count reaches each
/// checkpoint. Checkpoints past the stopping point reuse the final ranking.
pub fn run_trial(setup: &TrialSetup<'_>, trial: u64) -> Result<TrialRecord, EngineError> {
    let mut rng = trial_rng(setup.seed, setup.stream, trial);
    let spec = setup.ctx.spec();
    let mut runner = Runner::new(setup.algorithm, spec, setup.epsilon, setup.schedule);
    let mut scores = Vec::with_capacity(setup.checkpoints.len());
    loop {
        let used = runner.samples();
        while scores.len() < setup.checkpoints.len() && used >= setup.checkpoints[scores.len()] {
            scores.push(score(&runner.ranking(), setup.ctx));
        }
        if runner.done() || used >= setup.cap {
            break;
        }
        runner.advance(setup.env, &mut rng)?;
    }
    let last = score(&runner.ranking(), setup.ctx);
    scores.resize(setup.checkpoints.len(), last);
    Ok(TrialRecord {
        trial,
        checkpoints: scores,
        samples: runner.samples(),
        natural: runner.done(),
        last,
    })
}

fn summarize(alg: Algorithm, checkpoints: &[u64], trials: &[TrialRecord]) -> Vec<SummaryRow> {
    checkpoints
        .iter()
        .enumerate()
        .map(|(c, &checkpoint)| {
            let at = trials.iter().map(move |t| t.checkpoints[c]);
            SummaryRow {
                algorithm: alg.name().to_string(),
                checkpoint,
                trials: trials.len() as u64,
                mistake: Estimate::from_values(at.clone().map(|s| f64::from(u8::from(s.mistake)))),
                pac_violation: Estimate::from_values(at.clone().map(|s| f64::from(u8::from(s.pac_violation)))),
                kendall_tau: Estimate::from_values(at.clone().map(|s| s.kendall_tau)),
                inter: Estimate::from_values(at.clone().map(|s| s.inter as f64)),
                intra: Estimate::from_values(at.map(|s| s.intra as f64)),
            }
        })
        .collect()
}

/// Runs every configured algorithm for the configured number of trials.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResults, HarnessError> {
    config.validate()?;
    let instance = config.instance.resolve()?;
    let env = instance.environment()?;
    let k = env.num_arms();
    let spec = config.clusters.resolve(k)?;
    let schedule = config.schedule(k, spec.num_clusters())?;
    for alg in &config.algorithms {
        if alg.needs_pairs() && env.matrix().is_none() {
            return Err(HarnessError::Config(format!(
                "{} needs a pairwise instance",
                alg.name()
            )));
        }
    }
    let true_means = env.true_means();
    let ctx = EvalContext::new(true_means.clone(), spec.clone(), config.epsilon)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let mut algorithms = Vec::with_capacity(config.algorithms.len());
    for (stream, &alg) in config.algorithms.iter().enumerate() {
        let setup = TrialSetup {
            algorithm: alg,
            stream: stream as u64,
            seed: config.seed,
            env: &env,
            ctx: &ctx,
            epsilon: config.epsilon,
            schedule,
            checkpoints: &config.checkpoints,
            cap: config.effective_cap(),
        };
        let outcomes: Vec<Result<TrialRecord, EngineError>> = pool.install(|| {
            (0..config.trials)
                .into_par_iter()
                .map(|t| run_trial(&setup, t))
                .collect()
        });
        let mut trials = Vec::new();
        let mut failures = Vec::new();
        for (t, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(rec) => trials.push(rec),
                Err(e) => failures.push(TrialFailure {
                    algorithm: alg.name().to_string(),
                    trial: t as u64,
                    error: e.to_string(),
                }),
            }
        }
        if trials.is_empty() {
            return Err(HarnessError::AllTrialsFailed {
                algorithm: alg.name().to_string(),
                first: failures.first().map(|f| f.error.clone()).unwrap_or_default(),
            });
        }
        let rows = summarize(alg, &config.checkpoints, &trials);
        algorithms.push(AlgorithmResult {
            algorithm: alg,
            trials,
            failures,
            rows,
        });
    }
    Ok(ExperimentResults {
        config: config.clone(),
        true_means,
        spec,
        algorithms,
    })
}

/// Config echo, complexity report and provenance of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub true_means: Vec<f64>,
    pub boundaries: Vec<usize>,
    /// Trial `t` of algorithm number `a` uses stream `(seed, a, t)`.
    pub seed: u64,
    pub streams: Vec<String>,
    pub complexity: Option<ComplexityReport>,
    pub complexity_error: Option<String>,
    pub failures: Vec<TrialFailure>,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let shown = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: shown.clone(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| HarnessError::Json { path: shown, source })
    }
}

pub const RESULTS_FILE: &str = "results.csv";
pub const TERMINATION_FILE: &str = "termination.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Results table as CSV text.
pub fn results_csv(results: &ExperimentResults) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULTS_HEADER)?;
    for alg in &results.algorithms {
        for r in &alg.rows {
            let mut rec = vec![r.algorithm.clone(), r.checkpoint.to_string(), r.trials.to_string()];
            for e in [r.mistake, r.pac_violation, r.kendall_tau, r.inter, r.intra] {
                rec.push(e.mean.to_string());
                rec.push(e.se.to_string());
            }
            w.write_record(&rec)?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv output is utf-8"))
}

/// Per-trial stopping times as CSV text.
pub fn termination_csv(results: &ExperimentResults) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TERMINATION_HEADER)?;
    for alg in &results.algorithms {
        for t in &alg.trials {
            w.write_record([
                alg.algorithm.name().to_string(),
                t.trial.to_string(),
                t.samples.to_string(),
                t.natural.to_string(),
                t.last.mistake.to_string(),
                t.last.pac_violation.to_string(),
            ])?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv output is utf-8"))
}

pub fn build_manifest(results: &ExperimentResults) -> Manifest {
    let cfg = &results.config;
    let complexity = cfg
        .schedule(results.true_means.len(), results.spec.num_clusters())
        .map_err(|e| e.to_string())
        .and_then(|s| {
            ComplexityReport::compute(&results.true_means, &results.spec, cfg.epsilon, &s, cfg.optimize_anchors)
                .map_err(|e| e.to_string())
        });
    let (complexity, complexity_error) = match complexity {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e)),
    };
    Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        true_means: results.true_means.clone(),
        boundaries: results.spec.boundaries().to_vec(),
        seed: cfg.seed,
        streams: cfg
            .algorithms
            .iter()
            .enumerate()
            .map(|(a, alg)| format!("{}: stream {a}", alg.name()))
            .collect(),
        complexity,
        complexity_error,
        failures: results.algorithms.iter().flat_map(|a| a.failures.clone()).collect(),
        files: vec![RESULTS_FILE.into(), TERMINATION_FILE.into(), MANIFEST_FILE.into()],
    }
}

/// Writes the results table, termination table and manifest into `dir`.
pub fn emit_report(results: &ExperimentResults, dir: &Path) -> Result<Manifest, HarnessError> {
    let io_err = |p: &Path| {
        let path = p.display().to_string();
        move |source| HarnessError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_err = |p: &Path| {
        let path = p.display().to_string();
        move |source| HarnessError::Csv { path, source }
    };
    let results_path = dir.join(RESULTS_FILE);
    let text = results_csv(results).map_err(csv_err(&results_path))?;
    fs::write(&results_path, text).map_err(io_err(&results_path))?;
    let term_path = dir.join(TERMINATION_FILE);
    let text = termination_csv(results).map_err(csv_err(&term_path))?;
    fs::write(&term_path, text).map_err(io_err(&term_path))?;
    let manifest = build_manifest(results);
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        serde_json::from_str(
            r#"{
                "instance": {"builtin": "B"},
                "algorithms": ["lucbrank", "uniform", "active_ranking"],
                "clusters": [3, 12],
                "trials": 3,
                "checkpoints": [100, 1000],
                "seed": 11,
                "budget_cap": 2000
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn builtin_b_means() {
        let Instance::Direct { means } = builtin_instance("B").unwrap() else {
            panic!("B is a direct instance");
        };
        assert_eq!(means.len(), 15);
        assert_eq!(means[0], 0.5);
        assert_eq!(means[1], 0.45);
        assert_eq!(means[14], 0.125);
        let spec = ClusterLayout::Boundaries(vec![3, 12]).resolve(15).unwrap();
        let ctx = EvalContext::new(means, spec, 0.0).unwrap();
        assert_eq!(ctx.true_labels(), &[0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn builtin_btl_spacing() {
        let Instance::Btl { scores } = builtin_instance("btl-uniform(4, 3.77)").unwrap() else {
            panic!("btl builtin");
        };
        let expect = [0.0, 3.77 / 3.0, 2.0 * 3.77 / 3.0, 3.77];
        for (s, e) in scores.iter().zip(expect) {
            assert!((s - e).abs() < 1e-12);
        }
        assert!(matches!(builtin_instance("C"), Err(HarnessError::UnknownBuiltin(_))));
        assert!(builtin_instance("btl-uniform(4)").is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = small_config();
        c.validate().unwrap();
        c.trials = 0;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.checkpoints = vec![10, 10];
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.budget_cap = Some(10);
        assert!(c.validate().is_err());
    }

    #[test]
    fn layouts() {
        assert_eq!(
            ClusterLayout::Named(NamedLayout::EqualSized(5)).resolve(50).unwrap().boundaries(),
            &[10, 20, 30, 40, 50]
        );
        let c: ClusterLayout = serde_json::from_str(r#""complete""#).unwrap();
        assert_eq!(c.resolve(3).unwrap().boundaries(), &[1, 2, 3]);
        let c: ClusterLayout = serde_json::from_str(r#"{"equal_sized": 2}"#).unwrap();
        assert_eq!(c.resolve(4).unwrap().boundaries(), &[2, 4]);
        assert!(ClusterLayout::Boundaries(vec![3, 16]).resolve(15).is_err());
    }

    #[test]
    fn run_is_reproducible_and_thread_independent() {
        let mut c = small_config();
        c.jobs = Some(1);
        let a = run_experiment(&c).unwrap();
        c.jobs = Some(3);
        let b = run_experiment(&c).unwrap();
        assert_eq!(results_csv(&a).unwrap(), results_csv(&b).unwrap());
        assert_eq!(termination_csv(&a).unwrap(), termination_csv(&b).unwrap());
        let rows = results_csv(&a).unwrap().lines().count() - 1;
        assert_eq!(rows, c.algorithms.len() * c.checkpoints.len());
    }

    #[test]
    fn checkpoints_are_reached_in_order() {
        let c = small_config();
        let r = run_experiment(&c).unwrap();
        for alg in &r.algorithms {
            for t in &alg.trials {
                assert_eq!(t.checkpoints.len(), 2);
                assert!(t.samples <= c.budget_cap.unwrap() + 2 * 15);
            }
        }
    }

    #[test]
    fn pairwise_algorithms_need_a_matrix() {
        let mut c = small_config();
        c.algorithms = vec![Algorithm::Quicksort];
        assert!(matches!(run_experiment(&c), Err(HarnessError::Config(_))));
        c.instance = InstanceSource::Builtin("btl-uniform(10, 3)".into());
        c.clusters = ClusterLayout::Named(NamedLayout::EqualSized(2));
        c.algorithms = vec![Algorithm::Quicksort, Algorithm::UniformParam];
        let r = run_experiment(&c).unwrap();
        assert_eq!(r.algorithms.len(), 2);
    }

    #[test]
    fn estimate_standard_error() {
        let e = Estimate::from_values([1.0, 0.0, 1.0, 0.0].into_iter());
        assert_eq!(e.mean, 0.5);
        assert!((e.se - (1.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-12);
        assert_eq!(Estimate::from_values([2.0].into_iter()).se, 0.0);
    }
}
