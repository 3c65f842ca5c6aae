//! Reward oracles: direct Bernoulli arms, pairwise duels from a preference
//! matrix or a BTL model, and the Borda reduction that turns duels into
//! Bernoulli pulls.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{SampleError, Sampler};

/// Generator used for every simulated trial.
pub type TrialRng = ChaCha8Rng;

/// Independent stream for `(master seed, stream label, trial index)`.
pub fn trial_rng(master: u64, stream: u64, trial: u64) -> TrialRng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&stream.to_le_bytes());
    seed[16..24].copy_from_slice(&trial.to_le_bytes());
    seed[24..].copy_from_slice(b"lucbrank");
    ChaCha8Rng::from_seed(seed)
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("mean {value} of arm {arm} is outside [0, 1]")]
    InvalidMean { arm: usize, value: f64 },
    #[error("P[{i}][{j}] + P[{j}][{i}] must equal 1")]
    NotComplementary { i: usize, j: usize },
    #[error("preference matrix must be square, row {row} has {len} entries for {k} items")]
    NotSquare { row: usize, len: usize, k: usize },
    #[error("score {value} of item {item} is not finite")]
    NonFiniteScore { item: usize, value: f64 },
    #[error("an item cannot duel itself ({0})")]
    SelfDuel(usize),
    #[error("need at least {need} items, got {got}")]
    TooFewItems { need: usize, got: usize },
    #[error("arm {arm} out of range for {k} arms")]
    ArmOutOfRange { arm: usize, k: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Arms with Bernoulli rewards of known means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliInstance {
    means: Vec<f64>,
}

impl BernoulliInstance {
    pub fn new(means: Vec<f64>) -> Result<Self, EnvError> {
        for (arm, &value) in means.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(EnvError::InvalidMean { arm, value });
            }
        }
        if means.is_empty() {
            return Err(EnvError::TooFewItems { need: 1, got: 0 });
        }
        Ok(Self { means })
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn num_arms(&self) -> usize {
        self.means.len()
    }

    /// One Bernoulli reward for `arm`.
    pub fn draw<R: Rng + ?Sized>(&self, arm: usize, rng: &mut R) -> f64 {
        let p = self.means[arm];
        if rng.gen::<f64>() < p {
            1.0
        } else {
            0.0
        }
    }
}

/// `P[i][j]` = probability that item `i` beats item `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct PreferenceMatrix {
    k: usize,
    p: Vec<f64>,
}

const COMPLEMENT_TOL: f64 = 1e-9;

impl PreferenceMatrix {
    /// Builds from full rows; the diagonal is ignored and stored as 0.5.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, EnvError> {
        let k = rows.len();
        if k < 2 {
            return Err(EnvError::TooFewItems { need: 2, got: k });
        }
        let mut p = Vec::with_capacity(k * k);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != k {
                return Err(EnvError::NotSquare {
                    row,
                    len: r.len(),
                    k,
                });
            }
            for (j, &v) in r.iter().enumerate() {
                if j == row {
                    p.push(0.5);
                } else if !(0.0..=1.0).contains(&v) {
                    return Err(EnvError::InvalidMean { arm: row, value: v });
                } else {
                    p.push(v);
                }
            }
        }
        for i in 0..k {
            for j in (i + 1)..k {
                if (p[i * k + j] + p[j * k + i] - 1.0).abs() > COMPLEMENT_TOL {
                    return Err(EnvError::NotComplementary { i, j });
                }
            }
        }
        Ok(Self { k, p })
    }

    /// Builds from the strict upper triangle, `upper(i, j)` for `i < j`.
    pub fn from_upper(k: usize, upper: impl Fn(usize, usize) -> f64) -> Result<Self, EnvError> {
        let rows = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| match i.cmp(&j) {
                        std::cmp::Ordering::Less => upper(i, j),
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Greater => 1.0 - upper(j, i),
                    })
                    .collect()
            })
            .collect();
        Self::new(rows)
    }

    pub fn num_items(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.k + j]
    }

    /// Borda score of every item: its mean win probability against a
    /// uniformly drawn opponent.
    pub fn borda_scores(&self) -> Vec<f64> {
        let denom = (self.k - 1) as f64;
        (0..self.k)
            .map(|i| {
                (0..self.k)
                    .filter(|&j| j != i)
                    .map(|j| self.prob(i, j))
                    .sum::<f64>()
                    / denom
            })
            .collect()
    }

    fn check_item(&self, i: usize) -> Result<(), EnvError> {
        if i < self.k {
            Ok(())
        } else {
            Err(EnvError::ArmOutOfRange { arm: i, k: self.k })
        }
    }

    /// One noisy comparison; returns the winner.
    pub fn duel<R: Rng + ?Sized>(&self, i: usize, j: usize, rng: &mut R) -> Result<usize, EnvError> {
        self.check_item(i)?;
        self.check_item(j)?;
        if i == j {
            return Err(EnvError::SelfDuel(i));
        }
        Ok(if rng.gen::<f64>() < self.prob(i, j) { i } else { j })
    }

    /// Uniform opponent for `arm` among the other items.
    pub fn draw_opponent<R: Rng + ?Sized>(&self, arm: usize, rng: &mut R) -> usize {
        draw_opponent(self.k, arm, rng)
    }

    /// Borda-reduction pull: duel `arm` against a uniform opponent and
    /// reward 1 iff `arm` wins.
    pub fn borda_pull<R: Rng + ?Sized>(&self, arm: usize, rng: &mut R) -> Result<BordaPull, EnvError> {
        self.check_item(arm)?;
        let opponent = self.draw_opponent(arm, rng);
        let winner = self.duel(arm, opponent, rng)?;
        Ok(BordaPull {
            arm,
            opponent,
            reward: if winner == arm { 1.0 } else { 0.0 },
        })
    }
}

/// Uniform draw from `{0..k} \ {arm}`.
pub fn draw_opponent<R: Rng + ?Sized>(k: usize, arm: usize, rng: &mut R) -> usize {
    let j = rng.gen_range(0..k - 1);
    if j >= arm {
        j + 1
    } else {
        j
    }
}

impl TryFrom<Vec<Vec<f64>>> for PreferenceMatrix {
    type Error = EnvError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Self::new(rows)
    }
}

impl From<PreferenceMatrix> for Vec<Vec<f64>> {
    fn from(m: PreferenceMatrix) -> Self {
        m.p.chunks(m.k).map(<[f64]>::to_vec).collect()
    }
}

/// Outcome of one Borda-reduction pull.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BordaPull {
    pub arm: usize,
    pub opponent: usize,
    pub reward: f64,
}

/// Bradley-Terry-Luce scores; `P(i beats j) = e^θi / (e^θi + e^θj)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtlInstance {
    scores: Vec<f64>,
}

/// `e^a / (e^a + e^b)` without overflow.
pub fn btl_win_prob(a: f64, b: f64) -> f64 {
    1.0 / (1.0 + (b - a).exp())
}

impl BtlInstance {
    pub fn new(scores: Vec<f64>) -> Result<Self, EnvError> {
        if scores.len() < 2 {
            return Err(EnvError::TooFewItems {
                need: 2,
                got: scores.len(),
            });
        }
        for (item, &value) in scores.iter().enumerate() {
            if !value.is_finite() {
                return Err(EnvError::NonFiniteScore { item, value });
            }
        }
        Ok(Self { scores })
    }

    /// `k` scores equally spaced over `[0, span]`.
    pub fn equally_spaced(k: usize, span: f64) -> Result<Self, EnvError> {
        if k < 2 {
            return Err(EnvError::TooFewItems { need: 2, got: k });
        }
        let step = span / (k - 1) as f64;
        Self::new((0..k).map(|i| i as f64 * step).collect())
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn matrix(&self) -> PreferenceMatrix {
        let s = &self.scores;
        PreferenceMatrix::from_upper(s.len(), |i, j| btl_win_prob(s[i], s[j]))
            .expect("BTL probabilities are complementary by construction")
    }
}

/// Any instance the harness and the service can load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Instance {
    Direct { means: Vec<f64> },
    Matrix { matrix: PreferenceMatrix },
    Btl { scores: Vec<f64> },
}

/// On-disk instance description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    #[serde(flatten)]
    pub instance: Instance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl InstanceFile {
    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| EnvError::Io {
            path: shown.clone(),
            source,
        })?;
        let file: Self = serde_json::from_str(&text).map_err(|source| EnvError::Parse {
            path: shown.clone(),
            source,
        })?;
        file.instance.validate()?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }
}

/// Feedback model an instance resolves to.
#[derive(Debug, Clone, PartialEq)]
pub enum Environment {
    Direct(BernoulliInstance),
    Pairwise(PreferenceMatrix),
}

impl Instance {
    pub fn validate(&self) -> Result<(), EnvError> {
        self.environment().map(|_| ())
    }

    pub fn num_items(&self) -> usize {
        match self {
            Instance::Direct { means } => means.len(),
            Instance::Matrix { matrix } => matrix.num_items(),
            Instance::Btl { scores } => scores.len(),
        }
    }

    pub fn environment(&self) -> Result<Environment, EnvError> {
        Ok(match self {
            Instance::Direct { means } => {
                Environment::Direct(BernoulliInstance::new(means.clone())?)
            }
            Instance::Matrix { matrix } => Environment::Pairwise(matrix.clone()),
            Instance::Btl { scores } => {
                Environment::Pairwise(BtlInstance::new(scores.clone())?.matrix())
            }
        })
    }
}

impl Environment {
    pub fn num_arms(&self) -> usize {
        match self {
            Environment::Direct(b) => b.num_arms(),
            Environment::Pairwise(m) => m.num_items(),
        }
    }

    /// Ground-truth arm means: direct means or Borda scores.
    pub fn true_means(&self) -> Vec<f64> {
        match self {
            Environment::Direct(b) => b.means().to_vec(),
            Environment::Pairwise(m) => m.borda_scores(),
        }
    }

    pub fn matrix(&self) -> Option<&PreferenceMatrix> {
        match self {
            Environment::Pairwise(m) => Some(m),
            Environment::Direct(_) => None,
        }
    }

    /// Sampler over this environment (Borda reduction for pairwise feedback).
    pub fn sampler<'a, R: Rng>(&'a self, rng: &'a mut R) -> EnvSampler<'a, R> {
        EnvSampler {
            env: self,
            rng,
            log: None,
        }
    }
}

/// Reward source backed by an [`Environment`]; optionally records every
/// Borda pull so a run can be replayed.
pub struct EnvSampler<'a, R: Rng> {
    env: &'a Environment,
    rng: &'a mut R,
    log: Option<Vec<BordaPull>>,
}

impl<'a, R: Rng> EnvSampler<'a, R> {
    pub fn recording(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn take_log(&mut self) -> Vec<BordaPull> {
        self.log.take().unwrap_or_default()
    }

    pub fn rng(&mut self) -> &mut R {
        self.rng
    }
}

impl<R: Rng> Sampler for EnvSampler<'_, R> {
    fn sample(&mut self, arm: usize) -> Result<f64, SampleError> {
        let k = self.env.num_arms();
        if arm >= k {
            return Err(SampleError(format!("arm {arm} out of range for {k} arms")));
        }
        match self.env {
            Environment::Direct(b) => Ok(b.draw(arm, self.rng)),
            Environment::Pairwise(m) => {
                let pull = m
                    .borda_pull(arm, self.rng)
                    .map_err(|e| SampleError(e.to_string()))?;
                if let Some(log) = self.log.as_mut() {
                    log.push(pull);
                }
                Ok(pull.reward)
            }
        }
    }
}

/// Per-arm `(pulls, reward sum)` rebuilt from a Borda pull log.
pub fn replay_borda_counts(k: usize, log: &[BordaPull]) -> Vec<(u64, f64)> {
    let mut counts = vec![(0u64, 0.0f64); k];
    for pull in log {
        let c = &mut counts[pull.arm];
        c.0 += 1;
        c.1 += pull.reward;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn three_item() -> PreferenceMatrix {
        let upper = [[0.0, 0.9, 0.8], [0.0, 0.0, 0.6]];
        PreferenceMatrix::from_upper(3, |i, j| upper[i][j]).unwrap()
    }

    #[test]
    fn direct_draws_at_extremes() {
        let b = BernoulliInstance::new(vec![1.0, 0.0]).unwrap();
        let mut rng = trial_rng(1, 0, 0);
        for _ in 0..1000 {
            assert_eq!(b.draw(0, &mut rng), 1.0);
            assert_eq!(b.draw(1, &mut rng), 0.0);
        }
        assert!(BernoulliInstance::new(vec![1.1]).is_err());
    }

    #[test]
    fn direct_draw_frequency() {
        let b = BernoulliInstance::new(vec![0.3]).unwrap();
        let mut rng = trial_rng(2, 0, 0);
        let n = 100_000;
        let mean = (0..n).map(|_| b.draw(0, &mut rng)).sum::<f64>() / n as f64;
        assert_abs_diff_eq!(mean, 0.3, epsilon = 0.01);
    }

    #[test]
    fn duel_behaviour() {
        let m = PreferenceMatrix::from_upper(2, |_, _| 1.0).unwrap();
        let mut rng = trial_rng(3, 0, 0);
        for _ in 0..100 {
            assert_eq!(m.duel(0, 1, &mut rng).unwrap(), 0);
        }
        assert!(matches!(m.duel(1, 1, &mut rng), Err(EnvError::SelfDuel(1))));

        let m = PreferenceMatrix::from_upper(2, |_, _| 0.5).unwrap();
        let n = 100_000;
        let wins = (0..n).filter(|_| m.duel(0, 1, &mut rng).unwrap() == 0).count();
        assert_abs_diff_eq!(wins as f64 / n as f64, 0.5, epsilon = 0.01);

        let btl = BtlInstance::new(vec![0.7, 0.7]).unwrap().matrix();
        assert_eq!(btl.prob(0, 1), 0.5);
    }

    #[test]
    fn borda_scores_exact() {
        let s = three_item().borda_scores();
        assert_abs_diff_eq!(s[0], 0.85, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1], 0.35, epsilon = 1e-12);
        assert_abs_diff_eq!(s[2], 0.30, epsilon = 1e-12);

        let flat = PreferenceMatrix::from_upper(5, |_, _| 0.5).unwrap();
        assert!(flat.borda_scores().iter().all(|&x| x == 0.5));

        let pair = PreferenceMatrix::from_upper(2, |_, _| 0.37).unwrap();
        assert_eq!(pair.borda_scores()[0], 0.37);
    }

    #[test]
    fn borda_pull_mean_and_opponents() {
        let m = three_item();
        let mut rng = trial_rng(4, 0, 0);
        let n = 100_000;
        let mut total = 0.0;
        for _ in 0..n {
            let pull = m.borda_pull(0, &mut rng).unwrap();
            assert_ne!(pull.opponent, 0);
            total += pull.reward;
        }
        assert_abs_diff_eq!(total / n as f64, 0.85, epsilon = 0.01);
    }

    #[test]
    fn matrix_validation() {
        assert!(PreferenceMatrix::new(vec![vec![0.5, 0.7], vec![0.7, 0.5]]).is_err());
        assert!(PreferenceMatrix::new(vec![vec![0.5, 0.7], vec![0.3]]).is_err());
        assert!(PreferenceMatrix::new(vec![vec![0.5]]).is_err());
        let m: PreferenceMatrix = serde_json::from_str("[[0.5,0.25],[0.75,0.5]]").unwrap();
        assert_eq!(m.prob(1, 0), 0.75);
    }

    #[test]
    fn instance_file_format() {
        let text = r#"{"kind":"btl","scores":[0.0,1.0,2.0],"seed":9}"#;
        let f: InstanceFile = serde_json::from_str(text).unwrap();
        assert_eq!(f.seed, Some(9));
        let env = f.instance.environment().unwrap();
        assert_eq!(env.num_arms(), 3);
        let back: InstanceFile = serde_json::from_str(&f.to_json()).unwrap();
        assert_eq!(back, f);

        let d: InstanceFile = serde_json::from_str(r#"{"kind":"direct","means":[0.2,0.4]}"#).unwrap();
        assert_eq!(d.instance.environment().unwrap().true_means(), vec![0.2, 0.4]);
        assert!(serde_json::from_str::<InstanceFile>(r#"{"kind":"other"}"#).is_err());
    }

    #[test]
    fn trial_streams_differ() {
        let a: u64 = trial_rng(1, 0, 0).gen();
        let b: u64 = trial_rng(1, 0, 1).gen();
        let c: u64 = trial_rng(1, 1, 0).gen();
        let a2: u64 = trial_rng(1, 0, 0).gen();
        assert_eq!(a, a2);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }
}
