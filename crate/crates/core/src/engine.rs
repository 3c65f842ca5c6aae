//! The LUCBRank engine.
//!
//! Each round samples the two critical arms of every active boundary: the
//! weakest-looking member of the empirical top-`k_i` set (smallest lower
//! bound) and the strongest-looking outsider (largest upper bound). After the
//! round's rewards are folded in, all KL-UCB bounds are recomputed at the new
//! exploration rate and a boundary retires once its critical arms overlap by
//! less than `epsilon`.
//!
//! Ties are always broken towards the lowest arm index, so a run is a pure
//! function of the reward sequence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bernoulli::{lower_unchecked, upper_unchecked, ExplorationSchedule};
use crate::ranking::{desc_then_index, ClusterSpec, CoarseRanking, SpecError};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("sampler failed: {0}")]
pub struct SampleError(pub String);

/// Anything that can produce a reward in `[0, 1]` for an arm.
pub trait Sampler {
    fn sample(&mut self, arm: usize) -> Result<f64, SampleError>;
}

impl<F: FnMut(usize) -> f64> Sampler for F {
    fn sample(&mut self, arm: usize) -> Result<f64, SampleError> {
        Ok(self(arm))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("reward {value} for arm {arm} is outside [0, 1]")]
    InvalidReward { arm: usize, value: f64 },
    #[error("expected {expected} rewards, got {got}")]
    RewardCount { expected: usize, got: usize },
    #[error("boundary {0} is not active")]
    InactiveBoundary(usize),
    #[error("epsilon must be finite and nonnegative, got {0}")]
    Epsilon(f64),
    #[error("schedule was built for {schedule_arms} arms / {schedule_clusters} clusters, spec has {spec_arms} / {spec_clusters}")]
    ScheduleMismatch {
        schedule_arms: usize,
        schedule_clusters: usize,
        spec_arms: usize,
        spec_clusters: usize,
    },
    #[error("corrupt engine state: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

/// Running statistics and confidence interval of one arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub pulls: u64,
    pub reward_sum: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Default for ArmStats {
    fn default() -> Self {
        Self {
            pulls: 0,
            reward_sum: 0.0,
            mean: 0.0,
            lower: 0.0,
            upper: 1.0,
        }
    }
}

impl ArmStats {
    pub fn record(&mut self, reward: f64) {
        self.pulls += 1;
        self.reward_sum += reward;
        self.mean = self.reward_sum / self.pulls as f64;
    }

    /// Recomputes the KL-UCB interval at exploration level `beta`.
    pub fn refresh_bounds(&mut self, beta: f64) {
        if self.pulls == 0 {
            self.lower = 0.0;
            self.upper = 1.0;
            return;
        }
        let n = self.pulls as f64;
        self.lower = lower_unchecked(self.mean, n, beta);
        self.upper = upper_unchecked(self.mean, n, beta);
    }
}

/// Pull count and reward total of one arm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub pulls: u64,
    pub reward_sum: f64,
    pub mean: f64,
}

impl Tally {
    pub(crate) fn record(&mut self, reward: f64) {
        self.pulls += 1;
        self.reward_sum += reward;
        self.mean = self.reward_sum / self.pulls as f64;
    }
}

/// Exact bounds plus cheap brackets around them. `cheap_lower <= lower` and
/// `upper <= cheap_upper` must hold.
pub(crate) trait Bounds {
    fn cheap_lower(&self, arm: usize) -> f64;
    fn cheap_upper(&self, arm: usize) -> f64;
    fn lower(&mut self, arm: usize) -> f64;
    fn upper(&mut self, arm: usize) -> f64;
}

/// KL-UCB bounds at one exploration level, computed on first use. Pinsker's
/// inequality `d(p, q) >= 2 (p - q)^2` gives the brackets.
pub(crate) struct LazyBounds<'a> {
    tallies: &'a [Tally],
    beta: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl<'a> LazyBounds<'a> {
    pub(crate) fn new(tallies: &'a [Tally], beta: f64) -> Self {
        Self {
            tallies,
            beta,
            lower: vec![f64::NAN; tallies.len()],
            upper: vec![f64::NAN; tallies.len()],
        }
    }

    fn half_width(&self, arm: usize) -> f64 {
        (0.5 * self.beta / self.tallies[arm].pulls as f64).sqrt()
    }
}

impl Bounds for LazyBounds<'_> {
    fn cheap_lower(&self, arm: usize) -> f64 {
        self.tallies[arm].mean - self.half_width(arm)
    }
    fn cheap_upper(&self, arm: usize) -> f64 {
        self.tallies[arm].mean + self.half_width(arm)
    }
    fn lower(&mut self, arm: usize) -> f64 {
        if self.lower[arm].is_nan() {
            let t = self.tallies[arm];
            self.lower[arm] = lower_unchecked(t.mean, t.pulls as f64, self.beta);
        }
        self.lower[arm]
    }
    fn upper(&mut self, arm: usize) -> f64 {
        if self.upper[arm].is_nan() {
            let t = self.tallies[arm];
            self.upper[arm] = upper_unchecked(t.mean, t.pulls as f64, self.beta);
        }
        self.upper[arm]
    }
}

/// Slack absorbing rounding in the bracket comparisons.
const PRUNE_SLACK: f64 = 1e-9;

/// Critical pair at one boundary with the bounds that decide elimination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Critical {
    pub l: usize,
    pub u: usize,
    pub lower_l: f64,
    pub upper_u: f64,
}

/// Smallest lower bound among `order[..kappa]` and largest upper bound among
/// `order[kappa..]`, ties to the lowest index. Exact bounds are only computed
/// for arms whose bracket does not already rule them out.
pub(crate) fn select_critical(
    order: &[usize],
    kappa: usize,
    bounds: &mut impl Bounds,
    scratch: &mut Vec<usize>,
) -> Critical {
    scratch.clear();
    scratch.extend_from_slice(&order[..kappa]);
    scratch.sort_by(|&a, &b| {
        bounds
            .cheap_lower(a)
            .total_cmp(&bounds.cheap_lower(b))
            .then(a.cmp(&b))
    });
    let mut best: Option<(usize, f64)> = None;
    for &a in scratch.iter() {
        if let Some((_, lb)) = best {
            if bounds.cheap_lower(a) > lb + PRUNE_SLACK {
                break;
            }
        }
        let la = bounds.lower(a);
        if best.is_none_or(|(ba, lb)| la < lb || (la == lb && a < ba)) {
            best = Some((a, la));
        }
    }
    let (l, lower_l) = best.expect("top set is non-empty");

    scratch.clear();
    scratch.extend_from_slice(&order[kappa..]);
    scratch.sort_by(|&a, &b| {
        bounds
            .cheap_upper(b)
            .total_cmp(&bounds.cheap_upper(a))
            .then(a.cmp(&b))
    });
    let mut best: Option<(usize, f64)> = None;
    for &a in scratch.iter() {
        if let Some((_, ub)) = best {
            if bounds.cheap_upper(a) < ub - PRUNE_SLACK {
                break;
            }
        }
        let ua = bounds.upper(a);
        if best.is_none_or(|(ba, ub)| ua > ub || (ua == ub && a < ba)) {
            best = Some((a, ua));
        }
    }
    let (u, upper_u) = best.expect("complement is non-empty");
    Critical { l, u, lower_l, upper_u }
}

/// One sample requested by the engine for the current round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmRequest {
    /// Inner boundary (0-based) this sample serves.
    pub boundary: usize,
    pub arm: usize,
}

fn check_reward(arm: usize, value: f64) -> Result<(), EngineError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(EngineError::InvalidReward { arm, value })
    }
}

/// Full state of one LUCBRank run.
///
/// Confidence bounds are not stored: they are a function of the tallies and
/// the round, and are recomputed when needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    round: u64,
    arms: Vec<Tally>,
    /// Active inner boundaries, ascending.
    active: Vec<usize>,
    /// Critical pair `(l, u)` of each active boundary, aligned with `active`.
    critical: Vec<(usize, usize)>,
    epsilon: f64,
    schedule: ExplorationSchedule,
    spec: ClusterSpec,
    total_samples: u64,
}

impl EngineState {
    /// Initializes from one reward per arm and retires every boundary that is
    /// already resolved at `t = 1`.
    pub fn init(
        spec: ClusterSpec,
        epsilon: f64,
        schedule: ExplorationSchedule,
        first_rewards: &[f64],
    ) -> Result<Self, EngineError> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(EngineError::Epsilon(epsilon));
        }
        if schedule.num_arms() != spec.num_arms() || schedule.num_clusters() != spec.num_clusters()
        {
            return Err(EngineError::ScheduleMismatch {
                schedule_arms: schedule.num_arms(),
                schedule_clusters: schedule.num_clusters(),
                spec_arms: spec.num_arms(),
                spec_clusters: spec.num_clusters(),
            });
        }
        spec.check_arms(first_rewards.len())?;
        for (arm, &r) in first_rewards.iter().enumerate() {
            check_reward(arm, r)?;
        }
        let mut arms = vec![Tally::default(); first_rewards.len()];
        for (tally, &r) in arms.iter_mut().zip(first_rewards) {
            tally.record(r);
        }
        let mut state = Self {
            round: 1,
            arms,
            active: (0..spec.num_inner()).collect(),
            critical: Vec::new(),
            epsilon,
            schedule,
            total_samples: first_rewards.len() as u64,
            spec,
        };
        state.refresh_and_eliminate();
        Ok(state)
    }

    pub fn round(&self) -> u64 {
        self.round
    }
    pub fn tallies(&self) -> &[Tally] {
        &self.arms
    }
    pub fn active_boundaries(&self) -> &[usize] {
        &self.active
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn schedule(&self) -> &ExplorationSchedule {
        &self.schedule
    }
    pub fn spec(&self) -> &ClusterSpec {
        &self.spec
    }
    pub fn total_samples(&self) -> u64 {
        self.total_samples
    }
    pub fn is_done(&self) -> bool {
        self.active.is_empty()
    }
    pub fn pulls(&self) -> Vec<u64> {
        self.arms.iter().map(|a| a.pulls).collect()
    }
    pub fn means(&self) -> Vec<f64> {
        self.arms.iter().map(|a| a.mean).collect()
    }

    /// Exploration rate of the current round.
    pub fn beta(&self) -> f64 {
        self.schedule.rate(self.round)
    }

    /// Statistics and current KL-UCB interval of every arm.
    pub fn arms(&self) -> Vec<ArmStats> {
        let beta = self.beta();
        self.arms
            .iter()
            .map(|t| {
                let mut s = ArmStats {
                    pulls: t.pulls,
                    reward_sum: t.reward_sum,
                    mean: t.mean,
                    ..ArmStats::default()
                };
                s.refresh_bounds(beta);
                s
            })
            .collect()
    }

    /// Arms by decreasing empirical mean, ties by lowest index.
    fn empirical_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.arms.len()).collect();
        order.sort_by(|&a, &b| desc_then_index(self.arms[a].mean, a, self.arms[b].mean, b));
        order
    }

    /// Critical arms `(l, u)` at active inner boundary `i`.
    pub fn critical_arms(&self, i: usize) -> Result<(usize, usize), EngineError> {
        self.active
            .iter()
            .position(|&b| b == i)
            .map(|pos| self.critical[pos])
            .ok_or(EngineError::InactiveBoundary(i))
    }

    /// Samples needed for the current round, in the order they must be
    /// supplied to [`apply_round`](Self::apply_round).
    pub fn round_requests(&self) -> Vec<ArmRequest> {
        self.active
            .iter()
            .zip(&self.critical)
            .flat_map(|(&i, &(l, u))| {
                [
                    ArmRequest { boundary: i, arm: l },
                    ArmRequest { boundary: i, arm: u },
                ]
            })
            .collect()
    }

    /// Folds in the rewards for [`round_requests`](Self::round_requests),
    /// advances the round counter and retires resolved boundaries. The state
    /// is untouched if any reward is rejected.
    pub fn apply_round(&mut self, rewards: &[f64]) -> Result<(), EngineError> {
        let requests = self.round_requests();
        self.apply_requests(&requests, rewards)
    }

    fn apply_requests(&mut self, requests: &[ArmRequest], rewards: &[f64]) -> Result<(), EngineError> {
        if requests.len() != rewards.len() {
            return Err(EngineError::RewardCount {
                expected: requests.len(),
                got: rewards.len(),
            });
        }
        for (req, &r) in requests.iter().zip(rewards) {
            check_reward(req.arm, r)?;
        }
        if requests.is_empty() {
            return Ok(());
        }
        for (req, &r) in requests.iter().zip(rewards) {
            self.arms[req.arm].record(r);
        }
        self.total_samples += requests.len() as u64;
        self.round += 1;
        self.refresh_and_eliminate();
        Ok(())
    }

    /// One round against a live sampler.
    pub fn step<S: Sampler + ?Sized>(&mut self, sampler: &mut S) -> Result<(), EngineError> {
        let requests = self.round_requests();
        let rewards = requests
            .iter()
            .map(|req| sampler.sample(req.arm))
            .collect::<Result<Vec<_>, _>>()?;
        self.apply_requests(&requests, &rewards)
    }

    /// Critical pairs of the active boundaries at the current round.
    fn compute_critical(&self) -> Vec<Critical> {
        let order = self.empirical_order();
        let mut bounds = LazyBounds::new(&self.arms, self.beta());
        let mut scratch = Vec::with_capacity(order.len());
        self.active
            .iter()
            .map(|&i| select_critical(&order, self.spec.inner(i), &mut bounds, &mut scratch))
            .collect()
    }

    fn refresh_and_eliminate(&mut self) {
        let critical = self.compute_critical();
        let eps = self.epsilon;
        let mut active = Vec::with_capacity(self.active.len());
        let mut pairs = Vec::with_capacity(self.active.len());
        for (&i, c) in self.active.iter().zip(&critical) {
            if c.upper_u - c.lower_l >= eps {
                active.push(i);
                pairs.push((c.l, c.u));
            }
        }
        self.active = active;
        self.critical = pairs;
    }

    /// Current ranking by empirical mean (valid at any time).
    pub fn ranking(&self) -> CoarseRanking {
        CoarseRanking::from_order(&self.empirical_order(), &self.spec)
    }

    /// Checks internal consistency after deserialization.
    pub fn validate(&self) -> Result<(), EngineError> {
        let corrupt = |m: &str| Err(EngineError::Corrupt(m.to_string()));
        self.spec.check_arms(self.arms.len())?;
        if self.round == 0 {
            return corrupt("round counter is zero");
        }
        if !self.active.windows(2).all(|w| w[0] < w[1])
            || self.active.iter().any(|&i| i >= self.spec.num_inner())
        {
            return corrupt("active boundary set is malformed");
        }
        let mut total = 0;
        for a in &self.arms {
            let sane = a.pulls >= 1
                && a.reward_sum >= 0.0
                && a.reward_sum <= a.pulls as f64
                && a.mean == a.reward_sum / a.pulls as f64;
            if !sane {
                return corrupt("arm statistics are inconsistent");
            }
            total += a.pulls;
        }
        if total != self.total_samples {
            return corrupt("sample total does not match pull counts");
        }
        let mut again = self.clone();
        again.refresh_and_eliminate();
        if again.active != self.active || again.critical != self.critical {
            return corrupt("critical arms do not match the statistics");
        }
        Ok(())
    }
}

/// Outcome of [`run_to_completion`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub ranking: CoarseRanking,
    pub total_samples: u64,
    pub pulls: Vec<u64>,
    /// `false` when the sample budget ran out before every boundary retired.
    pub natural: bool,
    pub state: EngineState,
}

/// Runs LUCBRank until every boundary retires or the next round would push
/// the sample count past `budget_cap`.
pub fn run_to_completion<S: Sampler + ?Sized>(
    spec: ClusterSpec,
    epsilon: f64,
    schedule: ExplorationSchedule,
    sampler: &mut S,
    budget_cap: Option<u64>,
) -> Result<RunOutcome, EngineError> {
    let first = (0..spec.num_arms())
        .map(|a| sampler.sample(a))
        .collect::<Result<Vec<_>, _>>()?;
    let mut state = EngineState::init(spec, epsilon, schedule, &first)?;
    while !state.is_done() {
        let next = 2 * state.active.len() as u64;
        if budget_cap.is_some_and(|cap| state.total_samples + next > cap) {
            break;
        }
        state.step(sampler)?;
    }
    Ok(RunOutcome {
        ranking: state.ranking(),
        total_samples: state.total_samples,
        pulls: state.pulls(),
        natural: state.is_done(),
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule(k: usize, c: usize) -> ExplorationSchedule {
        ExplorationSchedule::with_delta(0.1, k, c).unwrap()
    }

    /// Fixed bounds whose brackets are the bounds themselves.
    struct Fixed {
        lower: Vec<f64>,
        upper: Vec<f64>,
    }

    impl Bounds for Fixed {
        fn cheap_lower(&self, a: usize) -> f64 {
            self.lower[a]
        }
        fn cheap_upper(&self, a: usize) -> f64 {
            self.upper[a]
        }
        fn lower(&mut self, a: usize) -> f64 {
            self.lower[a]
        }
        fn upper(&mut self, a: usize) -> f64 {
            self.upper[a]
        }
    }

    fn pick(means: &[f64], lower: &[f64], upper: &[f64], kappa: usize) -> (usize, usize) {
        let order = crate::ranking::order_by_score(means);
        let mut b = Fixed {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
        };
        let c = select_critical(&order, kappa, &mut b, &mut Vec::new());
        (c.l, c.u)
    }

    #[test]
    fn critical_arms_by_definition() {
        assert_eq!(pick(&[0.8, 0.5, 0.4], &[0.6, 0.3, 0.2], &[0.9, 0.7, 0.6], 1), (0, 1));
    }

    #[test]
    fn critical_arm_ties_and_singleton_complement() {
        assert_eq!(pick(&[0.5; 4], &[0.2; 4], &[0.8; 4], 2), (0, 2));
        // J = {0, 3, 2}; lowest lower bound is arm 2; arm 1 is the only outsider.
        assert_eq!(
            pick(&[0.9, 0.1, 0.5, 0.7], &[0.5, 0.0, 0.2, 0.4], &[1.0, 0.3, 0.9, 0.95], 3),
            (2, 1)
        );
    }

    #[test]
    fn inactive_boundary_is_an_error() {
        let spec = ClusterSpec::new(vec![1, 3]).unwrap();
        let s = EngineState::init(spec, 2.0, schedule(3, 2), &[1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(s.critical_arms(0), Err(EngineError::InactiveBoundary(0))));
    }

    proptest::proptest! {
        #[test]
        fn pruned_selection_matches_full_scan(
            data in proptest::collection::vec((0u64..40, 1u64..60), 2..20),
            beta in 0.1f64..30.0,
            kappa_frac in 0.0f64..1.0,
        ) {
            let tallies: Vec<Tally> = data
                .iter()
                .map(|&(s, n)| {
                    let s = s.min(n);
                    Tally { pulls: n, reward_sum: s as f64, mean: s as f64 / n as f64 }
                })
                .collect();
            let k = tallies.len();
            let kappa = 1 + ((k - 1) as f64 * kappa_frac) as usize % (k - 1);
            let means: Vec<f64> = tallies.iter().map(|t| t.mean).collect();
            let order = crate::ranking::order_by_score(&means);
            let mut lazy = LazyBounds::new(&tallies, beta);
            let got = select_critical(&order, kappa, &mut lazy, &mut Vec::new());
            let exact: Vec<(f64, f64)> = tallies
                .iter()
                .map(|t| (
                    lower_unchecked(t.mean, t.pulls as f64, beta),
                    upper_unchecked(t.mean, t.pulls as f64, beta),
                ))
                .collect();
            for a in 0..k {
                let (lo, hi) = exact[a];
                proptest::prop_assert!(lazy.cheap_lower(a) <= lo && hi <= lazy.cheap_upper(a));
            }
            let l = *order[..kappa]
                .iter()
                .min_by(|&&a, &&b| exact[a].0.total_cmp(&exact[b].0).then(a.cmp(&b)))
                .unwrap();
            let u = *order[kappa..]
                .iter()
                .max_by(|&&a, &&b| exact[a].1.total_cmp(&exact[b].1).then(b.cmp(&a)))
                .unwrap();
            proptest::prop_assert_eq!((got.l, got.u), (l, u));
            proptest::prop_assert_eq!(got.lower_l, exact[l].0);
            proptest::prop_assert_eq!(got.upper_u, exact[u].1);
        }
    }

    #[test]
    fn init_two_arms_keeps_boundary_active() {
        let spec = ClusterSpec::new(vec![1, 2]).unwrap();
        let s = EngineState::init(spec, 0.0, schedule(2, 2), &[1.0, 0.0]).unwrap();
        assert_eq!(s.means(), vec![1.0, 0.0]);
        // With a single pull each interval is nearly all of [0, 1].
        let arms = s.arms();
        assert!(arms[1].upper - arms[0].lower >= 0.0);
        assert_eq!(s.active_boundaries(), &[0]);
        assert_eq!(s.round_requests().len(), 2);
    }

    #[test]
    fn init_with_large_epsilon_finishes_immediately() {
        let spec = ClusterSpec::new(vec![1, 3]).unwrap();
        let s = EngineState::init(spec, 2.0, schedule(3, 2), &[1.0, 0.0, 1.0]).unwrap();
        assert!(s.is_done());
        assert!(s.round_requests().is_empty());
    }

    #[test]
    fn identical_rewards_rank_by_index() {
        let spec = ClusterSpec::new(vec![1, 3]).unwrap();
        let s = EngineState::init(spec, 0.0, schedule(3, 2), &[1.0; 3]).unwrap();
        assert_eq!(s.ranking().ranks, vec![1, 2, 3]);
        assert_eq!(s.critical_arms(0).unwrap(), (0, 1));
    }

    #[test]
    fn init_rejects_bad_input() {
        let spec = ClusterSpec::new(vec![1, 2]).unwrap();
        assert!(matches!(
            EngineState::init(spec.clone(), 0.0, schedule(2, 2), &[1.5, 0.0]),
            Err(EngineError::InvalidReward { arm: 0, .. })
        ));
        assert!(EngineState::init(spec.clone(), 0.0, schedule(2, 2), &[1.0]).is_err());
        assert!(EngineState::init(spec.clone(), -1.0, schedule(2, 2), &[1.0, 0.0]).is_err());
        assert!(matches!(
            EngineState::init(spec, 0.0, schedule(3, 2), &[1.0, 0.0]),
            Err(EngineError::ScheduleMismatch { .. })
        ));
    }

    #[test]
    fn samples_per_step() {
        let spec = ClusterSpec::new(vec![1, 2, 3, 4]).unwrap();
        let mut s = EngineState::init(spec, 0.0, schedule(4, 4), &[0.5; 4]).unwrap();
        assert_eq!(s.active_boundaries().len(), 3);
        let mut calls = 0;
        let mut sampler = |_arm: usize| {
            calls += 1;
            0.5
        };
        s.step(&mut sampler).unwrap();
        assert_eq!(calls, 6);
        assert_eq!(s.total_samples(), 4 + 6);
        assert_eq!(s.round(), 2);

        let spec = ClusterSpec::new(vec![1, 2]).unwrap();
        let mut s = EngineState::init(spec, 0.0, schedule(2, 2), &[0.5; 2]).unwrap();
        let before = s.total_samples();
        s.step(&mut |_| 0.5).unwrap();
        assert_eq!(s.total_samples() - before, 2);
    }

    #[test]
    fn sampler_failure_leaves_state_untouched() {
        struct Failing(usize);
        impl Sampler for Failing {
            fn sample(&mut self, _arm: usize) -> Result<f64, SampleError> {
                if self.0 == 0 {
                    return Err(SampleError("offline".into()));
                }
                self.0 -= 1;
                Ok(1.0)
            }
        }
        let spec = ClusterSpec::new(vec![1, 2, 3]).unwrap();
        let mut s = EngineState::init(spec, 0.0, schedule(3, 3), &[0.5; 3]).unwrap();
        let before = s.clone();
        assert!(matches!(s.step(&mut Failing(3)), Err(EngineError::Sample(_))));
        assert_eq!(s, before);
        assert!(s.apply_round(&[0.5, 2.0, 0.5, 0.5]).is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn deterministic_sampler_terminates_with_constant_order() {
        let constants = [0.0, 1.0, 0.0, 1.0, 1.0];
        let spec = ClusterSpec::new(vec![3, 5]).unwrap();
        let out = run_to_completion(
            spec.clone(),
            0.0,
            schedule(5, 2),
            &mut |a: usize| constants[a],
            None,
        )
        .unwrap();
        assert!(out.natural);
        assert_eq!(out.ranking.clusters[0], vec![1, 3, 4]);
        assert_eq!(out.pulls.iter().sum::<u64>(), out.total_samples);
    }

    #[test]
    fn large_epsilon_uses_only_initial_samples() {
        let spec = ClusterSpec::new(vec![2, 4, 6]).unwrap();
        let out = run_to_completion(spec, 2.0, schedule(6, 3), &mut |_| 0.3, None).unwrap();
        assert_eq!(out.total_samples, 6);
        assert!(out.natural);
    }

    #[test]
    fn budget_cap_flags_partial_result() {
        let spec = ClusterSpec::new(vec![1, 2]).unwrap();
        let mut flip = 0u64;
        let out = run_to_completion(
            spec,
            0.0,
            schedule(2, 2),
            &mut |_| {
                flip += 1;
                (flip % 2) as f64
            },
            Some(40),
        )
        .unwrap();
        assert!(!out.natural);
        assert!(out.total_samples <= 40);
        assert_eq!(out.ranking.ranks.len(), 2);
    }

    #[test]
    fn state_round_trips_through_json() {
        let spec = ClusterSpec::new(vec![1, 3]).unwrap();
        let mut s = EngineState::init(spec, 0.0, schedule(3, 2), &[1.0, 0.0, 1.0]).unwrap();
        s.step(&mut |a: usize| if a == 0 { 1.0 } else { 0.0 }).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: EngineState = serde_json::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back, s);
    }
}
