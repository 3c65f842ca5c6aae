//! Comparator algorithms and the anytime interface shared with LUCBRank.
//!
//! Active Ranking here reuses LUCBRank's KL-UCB bounds and exploration rate
//! so that the two differ only in which arms they sample. It is a
//! successive-elimination reimplementation, not a reproduction of the
//! original confidence construction.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bernoulli::ExplorationSchedule;
use crate::engine::{ArmStats, Bounds, EngineError, EngineState, LazyBounds, Sampler, Tally};
use crate::ranking::{ClusterSpec, CoarseRanking};

/// Common face of every algorithm the harness drives.
pub trait AnytimeRanker {
    /// Samples (pulls or comparisons) consumed so far.
    fn total_samples(&self) -> u64;
    /// True once the algorithm stops on its own.
    fn is_done(&self) -> bool;
    /// Advances by the algorithm's natural unit of work.
    fn step(&mut self, sampler: &mut dyn Sampler) -> Result<(), EngineError>;
    /// Current best guess.
    fn ranking(&self) -> CoarseRanking;
}

/// LUCBRank behind the anytime interface; the first step draws the
/// initial sample of every arm.
#[derive(Debug, Clone)]
pub struct LucbRanker {
    spec: ClusterSpec,
    epsilon: f64,
    schedule: ExplorationSchedule,
    state: Option<EngineState>,
}

impl LucbRanker {
    pub fn new(spec: ClusterSpec, epsilon: f64, schedule: ExplorationSchedule) -> Self {
        Self {
            spec,
            epsilon,
            schedule,
            state: None,
        }
    }

    pub fn state(&self) -> Option<&EngineState> {
        self.state.as_ref()
    }
}

impl AnytimeRanker for LucbRanker {
    fn total_samples(&self) -> u64 {
        self.state.as_ref().map_or(0, EngineState::total_samples)
    }

    fn is_done(&self) -> bool {
        self.state.as_ref().is_some_and(EngineState::is_done)
    }

    fn step(&mut self, sampler: &mut dyn Sampler) -> Result<(), EngineError> {
        match self.state.as_mut() {
            Some(state) => state.step(sampler),
            None => {
                let first = (0..self.spec.num_arms())
                    .map(|a| sampler.sample(a))
                    .collect::<Result<Vec<_>, _>>()?;
                self.state = Some(EngineState::init(
                    self.spec.clone(),
                    self.epsilon,
                    self.schedule,
                    &first,
                )?);
                Ok(())
            }
        }
    }

    fn ranking(&self) -> CoarseRanking {
        match &self.state {
            Some(s) => s.ranking(),
            None => CoarseRanking::from_order(&(0..self.spec.num_arms()).collect::<Vec<_>>(), &self.spec),
        }
    }
}

fn check_reward(arm: usize, value: f64) -> Result<f64, EngineError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(EngineError::InvalidReward { arm, value })
    }
}

/// Round-robin sampling of every arm.
#[derive(Debug, Clone)]
pub struct UniformSampler {
    spec: ClusterSpec,
    arms: Vec<ArmStats>,
    next: usize,
    total: u64,
}

impl UniformSampler {
    pub fn new(spec: ClusterSpec) -> Self {
        let k = spec.num_arms();
        Self {
            spec,
            arms: vec![ArmStats::default(); k],
            next: 0,
            total: 0,
        }
    }

    pub fn arms(&self) -> &[ArmStats] {
        &self.arms
    }

    fn pull_next(&mut self, sampler: &mut dyn Sampler) -> Result<(), EngineError> {
        let arm = self.next;
        let r = check_reward(arm, sampler.sample(arm)?)?;
        self.arms[arm].record(r);
        self.next = (arm + 1) % self.arms.len();
        self.total += 1;
        Ok(())
    }

    /// One pull of every arm, starting wherever the last round stopped.
    pub fn uniform_round(&mut self, sampler: &mut dyn Sampler) -> Result<(), EngineError> {
        let requests: Vec<usize> = (0..self.arms.len())
            .map(|j| (self.next + j) % self.arms.len())
            .collect();
        let rewards = requests
            .iter()
            .map(|&a| sampler.sample(a).map_err(EngineError::from).and_then(|r| check_reward(a, r)))
            .collect::<Result<Vec<_>, _>>()?;
        for (&a, &r) in requests.iter().zip(&rewards) {
            self.arms[a].record(r);
        }
        self.total += rewards.len() as u64;
        Ok(())
    }
}

impl AnytimeRanker for UniformSampler {
    fn total_samples(&self) -> u64 {
        self.total
    }
    fn is_done(&self) -> bool {
        false
    }
    fn step(&mut self, sampler: &mut dyn Sampler) -> Result<(), EngineError> {
        self.pull_next(sampler)
    }
    fn ranking(&self) -> CoarseRanking {
        let means: Vec<f64> = self.arms.iter().map(|a| a.mean).collect();
        CoarseRanking::from_scores(&means, &self.spec)
    }
}

/// Successive elimination: sample every unresolved arm each round and retire
/// an arm once its interval pins down a single cluster.
#[derive(Debug, Clone)]
pub struct ActiveRanking {
    spec: ClusterSpec,
    schedule: ExplorationSchedule,
    tallies: Vec<Tally>,
    /// Cluster assigned at retirement.
    assigned: Vec<Option<usize>>,
    round: u64,
    total: u64,
}

/// Slack absorbing rounding when brackets decide a comparison.
const BRACKET_SLACK: f64 = 1e-9;

impl ActiveRanking {
    pub fn new(spec: ClusterSpec, schedule: ExplorationSchedule) -> Self {
        let k = spec.num_arms();
        Self {
            spec,
            schedule,
            tallies: vec![Tally::default(); k],
            assigned: vec![None; k],
            round: 0,
            total: 0,
        }
    }

    /// Statistics and current confidence interval of every arm.
    pub fn arms(&self) -> Vec<ArmStats> {
        let beta = self.beta();
        self.tallies
            .iter()
            .map(|t| {
                let mut s = ArmStats {
                    pulls: t.pulls,
                    reward_sum: t.reward_sum,
                    mean: t.mean,
                    ..ArmStats::default()
                };
                if self.round > 0 {
                    s.refresh_bounds(beta);
                }
                s
            })
            .collect()
    }

    fn beta(&self) -> f64 {
        self.schedule.rate(self.round.max(1))
    }

    pub fn assigned(&self) -> &[Option<usize>] {
        &self.assigned
    }

    pub fn active(&self) -> Vec<usize> {
        (0..self.tallies.len()).filter(|&a| self.assigned[a].is_none()).collect()
    }

    /// Samples each active arm once, then retires arms whose cluster is
    /// resolved by the refreshed bounds.
    pub fn active_ranking_round(&mut self, sampler: &mut dyn Sampler) -> Result<(), EngineError> {
        let active = self.active();
        if active.is_empty() {
            return Ok(());
        }
        let rewards = active
            .iter()
            .map(|&a| sampler.sample(a).map_err(EngineError::from).and_then(|r| check_reward(a, r)))
            .collect::<Result<Vec<_>, _>>()?;
        for (&a, &r) in active.iter().zip(&rewards) {
            self.tallies[a].record(r);
        }
        self.total += rewards.len() as u64;
        self.round += 1;
        let beta = self.beta();
        let mut bounds = LazyBounds::new(&self.tallies, beta);
        let decided: Vec<(usize, usize)> = active
            .iter()
            .filter_map(|&a| resolved_cluster(&self.spec, &self.tallies, &mut bounds, a).map(|g| (a, g)))
            .collect();
        for (a, g) in decided {
            self.assigned[a] = Some(g);
        }
        Ok(())
    }

    /// Cluster of `a` if its interval already resolves it.
    pub fn resolved_cluster(&self, a: usize) -> Option<usize> {
        if self.round == 0 {
            return None;
        }
        let mut bounds = LazyBounds::new(&self.tallies, self.beta());
        resolved_cluster(&self.spec, &self.tallies, &mut bounds, a)
    }
}

/// Cluster `g` is resolved for arm `a` when at least `k_{g-1}` other arms sit
/// confidently above it and at least `K - k_g` confidently below.
fn resolved_cluster(spec: &ClusterSpec, tallies: &[Tally], bounds: &mut impl Bounds, a: usize) -> Option<usize> {
    let (mut above, mut below) = (0usize, 0usize);
    let mean_a = tallies[a].mean;
    for (b, tb) in tallies.iter().enumerate() {
        if b == a {
            continue;
        }
        // L_b <= mean_b and U_a >= mean_a, so b can only be above a if
        // mean_b > mean_a; symmetrically for below.
        if tb.mean > mean_a {
            let sure = bounds.cheap_lower(b) > bounds.cheap_upper(a) + BRACKET_SLACK;
            if sure || bounds.lower(b) > bounds.upper(a) {
                above += 1;
            }
        } else if tb.mean < mean_a {
            let sure = bounds.cheap_upper(b) < bounds.cheap_lower(a) - BRACKET_SLACK;
            if sure || bounds.upper(b) < bounds.lower(a) {
                below += 1;
            }
        }
    }
    let k = tallies.len();
    let need = k - below;
    let g = spec.boundaries().partition_point(|&kappa| kappa < need);
    let prev = if g == 0 { 0 } else { spec.boundaries()[g - 1] };
    (g < spec.num_clusters() && prev <= above).then_some(g)
}

impl AnytimeRanker for ActiveRanking {
    fn total_samples(&self) -> u64 {
        self.total
    }
    fn is_done(&self) -> bool {
        self.round > 0 && self.assigned.iter().all(Option::is_some)
    }
    fn step(&mut self, sampler: &mut dyn Sampler) -> Result<(), EngineError> {
        self.active_ranking_round(sampler)
    }
    fn ranking(&self) -> CoarseRanking {
        let means: Vec<f64> = self.tallies.iter().map(|a| a.mean).collect();
        CoarseRanking::from_scores(&means, &self.spec)
    }
}

/// Result of one noisy quicksort.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuicksortOutcome {
    /// Items best-first as placed by the sort.
    pub order: Vec<usize>,
    pub comparisons: u64,
}

impl QuicksortOutcome {
    /// Ranking over item ids `0..K` when `items` was a permutation of them.
    pub fn ranking(&self, spec: &ClusterSpec) -> CoarseRanking {
        CoarseRanking::from_order(&self.order, spec)
    }
}

/// Quicksort with noisy single-shot comparisons; `prefer(x, y)` reports
/// whether `x` beat `y`. Recursion into a sub-array stops once its rank
/// interval lies inside one cluster of `spec`.
pub fn noisy_quicksort<R: Rng + ?Sized>(
    items: &[usize],
    prefer: impl FnMut(usize, usize) -> bool,
    spec: &ClusterSpec,
    rng: &mut R,
) -> QuicksortOutcome {
    quicksort_impl(items, prefer, Some(spec), rng)
}

/// Quicksort run to completion (no early stop).
pub fn noisy_quicksort_full<R: Rng + ?Sized>(
    items: &[usize],
    prefer: impl FnMut(usize, usize) -> bool,
    rng: &mut R,
) -> QuicksortOutcome {
    quicksort_impl(items, prefer, None, rng)
}

fn quicksort_impl<R: Rng + ?Sized>(
    items: &[usize],
    mut prefer: impl FnMut(usize, usize) -> bool,
    spec: Option<&ClusterSpec>,
    rng: &mut R,
) -> QuicksortOutcome {
    let mut order = items.to_vec();
    let mut comparisons = 0;
    // Each sub-array carries its own seed so pivot choices in one part never
    // depend on whether another part was skipped.
    let mut stack = vec![(0usize, order.len(), rng.gen::<u64>())];
    let mut better = Vec::new();
    let mut worse = Vec::new();
    while let Some((start, end, seed)) = stack.pop() {
        if end - start < 2 {
            continue;
        }
        if let Some(spec) = spec {
            if spec.cluster_of_rank(start + 1) == spec.cluster_of_rank(end) {
                continue;
            }
        }
        let mut local = ChaCha8Rng::seed_from_u64(seed);
        let left_seed: u64 = local.gen();
        let right_seed: u64 = local.gen();
        let pivot_pos = local.gen_range(start..end);
        let pivot = order[pivot_pos];
        better.clear();
        worse.clear();
        for (pos, &x) in order[start..end].iter().enumerate() {
            if start + pos == pivot_pos {
                continue;
            }
            comparisons += 1;
            if prefer(x, pivot) {
                better.push(x);
            } else {
                worse.push(x);
            }
        }
        let mid = start + better.len();
        order[start..mid].copy_from_slice(&better);
        order[mid] = pivot;
        order[mid + 1..end].copy_from_slice(&worse);
        stack.push((mid + 1, end, right_seed));
        stack.push((start, mid, left_seed));
    }
    QuicksortOutcome { order, comparisons }
}

/// Comparator under the noisy-permutation model: the true order is
/// reported, flipped independently with probability `flip`.
pub fn noisy_permutation_comparator<'a, R: Rng + ?Sized>(
    true_ranks: &'a [usize],
    flip: f64,
    rng: &'a mut R,
) -> impl FnMut(usize, usize) -> bool + 'a {
    move |x, y| {
        let truth = true_ranks[x] < true_ranks[y];
        if rng.gen::<f64>() < flip {
            !truth
        } else {
            truth
        }
    }
}

/// One recorded comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Duel {
    pub i: usize,
    pub j: usize,
    pub winner: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BtlError {
    #[error("duel between {i} and {j} names winner {winner}")]
    BadWinner { i: usize, j: usize, winner: usize },
    #[error("duel references item {item} but only {k} items exist")]
    ItemOutOfRange { item: usize, k: usize },
    #[error("an item cannot duel itself ({0})")]
    SelfDuel(usize),
    #[error("comparison graph is disconnected: components {0:?}")]
    Disconnected(Vec<Vec<usize>>),
}

/// Maximum-likelihood BTL scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtlFit {
    /// Scores shifted so that the smallest is 0.
    pub scores: Vec<f64>,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Whether the phantom-opponent prior was needed to keep the MLE finite.
    pub regularized: bool,
}

/// Weight of the phantom win and phantom loss given to every item.
pub const BTL_PRIOR_WEIGHT: f64 = 0.01;
const BTL_TOL: f64 = 1e-8;
const BTL_MAX_ITERS: usize = 10_000;

/// Pairwise win counts `wins[i][j]` = times `i` beat `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct WinMatrix {
    k: usize,
    wins: Vec<f64>,
}

impl WinMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            wins: vec![0.0; k * k],
        }
    }

    pub fn from_duels(k: usize, duels: &[Duel]) -> Result<Self, BtlError> {
        let mut m = Self::new(k);
        for d in duels {
            m.record(*d)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, d: Duel) -> Result<(), BtlError> {
        for item in [d.i, d.j] {
            if item >= self.k {
                return Err(BtlError::ItemOutOfRange { item, k: self.k });
            }
        }
        if d.i == d.j {
            return Err(BtlError::SelfDuel(d.i));
        }
        let loser = if d.winner == d.i {
            d.j
        } else if d.winner == d.j {
            d.i
        } else {
            return Err(BtlError::BadWinner {
                i: d.i,
                j: d.j,
                winner: d.winner,
            });
        };
        self.wins[d.winner * self.k + loser] += 1.0;
        Ok(())
    }

    pub fn num_items(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn wins(&self, i: usize, j: usize) -> f64 {
        self.wins[i * self.k + j]
    }

    /// Empirical win rate of each item over all its comparisons.
    pub fn win_rates(&self) -> Vec<f64> {
        (0..self.k)
            .map(|i| {
                let (w, n) = (0..self.k).fold((0.0, 0.0), |(w, n), j| {
                    (w + self.wins(i, j), n + self.wins(i, j) + self.wins(j, i))
                });
                if n > 0.0 {
                    w / n
                } else {
                    0.5
                }
            })
            .collect()
    }

    fn reachable(&self, start: usize, forward: bool) -> Vec<bool> {
        let mut seen = vec![false; self.k];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for j in 0..self.k {
                let edge = if forward { self.wins(i, j) } else { self.wins(j, i) };
                if edge > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    }

    fn undirected_components(&self) -> Vec<Vec<usize>> {
        let mut label = vec![usize::MAX; self.k];
        let mut comps = Vec::new();
        for s in 0..self.k {
            if label[s] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut members = vec![s];
            label[s] = id;
            let mut idx = 0;
            while idx < members.len() {
                let i = members[idx];
                idx += 1;
                for j in 0..self.k {
                    if label[j] == usize::MAX && self.wins(i, j) + self.wins(j, i) > 0.0 {
                        label[j] = id;
                        members.push(j);
                    }
                }
            }
            members.sort_unstable();
            comps.push(members);
        }
        comps
    }

    fn strongly_connected(&self) -> bool {
        self.reachable(0, true).iter().all(|&x| x) && self.reachable(0, false).iter().all(|&x| x)
    }
}

fn log_likelihood(m: &WinMatrix, theta: &[f64], regularized: bool) -> f64 {
    let k = m.k;
    let mut ll = 0.0;
    for i in 0..k {
        for j in 0..k {
            let w = m.wins(i, j);
            if w > 0.0 {
                ll -= w * (1.0 + (theta[j] - theta[i]).exp()).ln();
            }
        }
        if regularized {
            // Phantom win and loss against an opponent fixed at score 0.
            ll -= BTL_PRIOR_WEIGHT * (1.0 + (-theta[i]).exp()).ln();
            ll -= BTL_PRIOR_WEIGHT * (1.0 + theta[i].exp()).ln();
        }
    }
    ll
}

/// Minorization-maximization fit of BTL scores to a duel log.
pub fn btl_mle(k: usize, duels: &[Duel]) -> Result<BtlFit, BtlError> {
    btl_mle_from_wins(&WinMatrix::from_duels(k, duels)?)
}

pub fn btl_mle_from_wins(m: &WinMatrix) -> Result<BtlFit, BtlError> {
    let k = m.k;
    if k == 0 {
        return Ok(BtlFit {
            scores: Vec::new(),
            iterations: 0,
            log_likelihood: 0.0,
            regularized: false,
        });
    }
    let comps = m.undirected_components();
    if comps.len() > 1 {
        return Err(BtlError::Disconnected(comps));
    }
    let regularized = !m.strongly_connected();
    let totals: Vec<f64> = (0..k).map(|i| (0..k).map(|j| m.wins(i, j)).sum()).collect();
    let mut strength = vec![1.0f64; k];
    let mut theta = vec![0.0f64; k];
    let mut ll = log_likelihood(m, &theta, regularized);
    let mut iterations = 0;
    let mut next = vec![0.0f64; k];
    while iterations < BTL_MAX_ITERS {
        iterations += 1;
        for i in 0..k {
            let mut denom = 0.0;
            for j in 0..k {
                let n = m.wins(i, j) + m.wins(j, i);
                if n > 0.0 {
                    denom += n / (strength[i] + strength[j]);
                }
            }
            let mut numer = totals[i];
            if regularized {
                numer += BTL_PRIOR_WEIGHT;
                denom += 2.0 * BTL_PRIOR_WEIGHT / (strength[i] + 1.0);
            }
            next[i] = numer / denom;
        }
        if !regularized {
            // The likelihood is scale-free; pin the geometric mean at 1.
            let log_mean = next.iter().map(|s| s.ln()).sum::<f64>() / k as f64;
            for s in &mut next {
                *s = (s.ln() - log_mean).exp();
            }
        }
        let mut max_change = 0.0f64;
        for i in 0..k {
            let t = next[i].ln();
            max_change = max_change.max((t - theta[i]).abs());
            theta[i] = t;
            strength[i] = next[i];
        }
        let new_ll = log_likelihood(m, &theta, regularized);
        debug_assert!(
            new_ll >= ll - 1e-9 * ll.abs().max(1.0),
            "MM step decreased the log-likelihood: {ll} -> {new_ll}"
        );
        ll = new_ll;
        if max_change < BTL_TOL {
            break;
        }
    }
    let min = theta.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(BtlFit {
        scores: theta.iter().map(|t| t - min).collect(),
        iterations,
        log_likelihood: ll,
        regularized,
    })
}

/// Parametric aggregation shared by the BTL-based baselines.
fn btl_ranking(wins: &WinMatrix, spec: &ClusterSpec) -> CoarseRanking {
    match btl_mle_from_wins(wins) {
        Ok(fit) => CoarseRanking::from_scores(&fit.scores, spec),
        Err(_) => CoarseRanking::from_scores(&wins.win_rates(), spec),
    }
}

/// Source of single comparisons for the parametric baselines.
pub trait DuelSource {
    fn duel(&mut self, i: usize, j: usize) -> Result<usize, EngineError>;
    fn random_pair(&mut self, k: usize) -> (usize, usize);
    fn seed(&mut self) -> u64;
}

/// Uniformly random pairs, ranked by the BTL MLE of all outcomes.
#[derive(Debug, Clone)]
pub struct UniformParam {
    spec: ClusterSpec,
    wins: WinMatrix,
    total: u64,
}

impl UniformParam {
    pub fn new(spec: ClusterSpec) -> Self {
        let k = spec.num_arms();
        Self {
            spec,
            wins: WinMatrix::new(k),
            total: 0,
        }
    }

    pub fn step_duel(&mut self, source: &mut dyn DuelSource) -> Result<(), EngineError> {
        let (i, j) = source.random_pair(self.spec.num_arms());
        let winner = source.duel(i, j)?;
        self.wins
            .record(Duel { i, j, winner })
            .map_err(|e| EngineError::Corrupt(e.to_string()))?;
        self.total += 1;
        Ok(())
    }

    pub fn total_samples(&self) -> u64 {
        self.total
    }

    pub fn ranking(&self) -> CoarseRanking {
        btl_ranking(&self.wins, &self.spec)
    }
}

/// Repeated early-stopping quicksort passes, ranked by the BTL MLE of every
/// comparison made so far.
#[derive(Debug, Clone)]
pub struct QuicksortParam {
    spec: ClusterSpec,
    wins: WinMatrix,
    total: u64,
    passes: u64,
}

impl QuicksortParam {
    pub fn new(spec: ClusterSpec) -> Self {
        let k = spec.num_arms();
        Self {
            spec,
            wins: WinMatrix::new(k),
            total: 0,
            passes: 0,
        }
    }

    pub fn step_pass(&mut self, source: &mut dyn DuelSource) -> Result<(), EngineError> {
        let k = self.spec.num_arms();
        let items: Vec<usize> = (0..k).collect();
        let mut seed_rng = ChaCha8Rng::seed_from_u64(source.seed());
        let mut failure = None;
        let mut log = Vec::new();
        let outcome = noisy_quicksort(
            &items,
            |x, pivot| {
                if failure.is_some() {
                    return false;
                }
                match source.duel(x, pivot) {
                    Ok(w) => {
                        log.push(Duel { i: x, j: pivot, winner: w });
                        w == x
                    }
                    Err(e) => {
                        failure = Some(e);
                        false
                    }
                }
            },
            &self.spec,
            &mut seed_rng,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        for d in log {
            self.wins
                .record(d)
                .map_err(|e| EngineError::Corrupt(e.to_string()))?;
        }
        self.total += outcome.comparisons;
        self.passes += 1;
        Ok(())
    }

    pub fn total_samples(&self) -> u64 {
        self.total
    }

    pub fn passes(&self) -> u64 {
        self.passes
    }

    pub fn ranking(&self) -> CoarseRanking {
        btl_ranking(&self.wins, &self.spec)
    }
}

/// Groups duel outcomes by unordered pair; used by tests and reports.
pub fn pair_counts(duels: &[Duel]) -> BTreeMap<(usize, usize), (u64, u64)> {
    let mut map = BTreeMap::new();
    for d in duels {
        let key = (d.i.min(d.j), d.i.max(d.j));
        let e = map.entry(key).or_insert((0, 0));
        if d.winner == key.0 {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::trial_rng;
    use approx::assert_abs_diff_eq;

    fn schedule(k: usize, c: usize) -> ExplorationSchedule {
        ExplorationSchedule::with_delta(0.1, k, c).unwrap()
    }

    #[test]
    fn uniform_round_robin_exact() {
        let spec = ClusterSpec::new(vec![2, 5]).unwrap();
        let mut u = UniformSampler::new(spec);
        let mut s = |a: usize| a as f64 / 4.0;
        for _ in 0..3 {
            u.uniform_round(&mut s).unwrap();
        }
        assert!(u.arms().iter().all(|a| a.pulls == 3));
        for _ in 0..2 {
            u.step(&mut s).unwrap();
        }
        let pulls: Vec<u64> = u.arms().iter().map(|a| a.pulls).collect();
        assert_eq!(pulls, vec![4, 4, 3, 3, 3]);
        u.uniform_round(&mut s).unwrap();
        assert!(u.arms().iter().all(|a| a.pulls == 4 || a.pulls == 5));
    }

    #[test]
    fn uniform_constant_rewards_rank_after_one_round() {
        let spec = ClusterSpec::new(vec![1, 3]).unwrap();
        let mut u = UniformSampler::new(spec);
        let c = [0.2, 0.9, 0.5];
        u.uniform_round(&mut |a: usize| c[a]).unwrap();
        assert_eq!(u.ranking().ranks, vec![3, 1, 2]);
    }

    #[test]
    fn active_ranking_retires_separated_singleton() {
        let spec = ClusterSpec::new(vec![1, 4]).unwrap();
        let mut ar = ActiveRanking::new(spec, schedule(4, 2));
        let c = [0.0, 1.0, 0.0, 0.0];
        let mut s = |a: usize| c[a];
        for _ in 0..5000 {
            ar.step(&mut s).unwrap();
            if ar.assigned()[1].is_some() {
                break;
            }
        }
        assert_eq!(ar.assigned()[1], Some(0));
        assert_eq!(ar.ranking().clusters[0], vec![1]);
    }

    #[test]
    fn active_ranking_overlap_keeps_everyone() {
        let spec = ClusterSpec::new(vec![2, 4]).unwrap();
        let mut ar = ActiveRanking::new(spec, schedule(4, 2));
        ar.step(&mut |_| 0.5).unwrap();
        assert_eq!(ar.active().len(), 4);
        assert!(!ar.is_done());
    }

    proptest::proptest! {
        #[test]
        fn bracketed_resolution_matches_exact_bounds(
            data in proptest::collection::vec((0u64..50, 1u64..80), 4..16),
            beta in 0.1f64..20.0,
        ) {
            let tallies: Vec<Tally> = data
                .iter()
                .map(|&(s, n)| {
                    let s = s.min(n);
                    Tally { pulls: n, reward_sum: s as f64, mean: s as f64 / n as f64 }
                })
                .collect();
            let k = tallies.len();
            let spec = ClusterSpec::equal_sized(k, 3).unwrap();
            let exact: Vec<ArmStats> = tallies
                .iter()
                .map(|t| {
                    let mut s = ArmStats { pulls: t.pulls, reward_sum: t.reward_sum, mean: t.mean, ..ArmStats::default() };
                    s.refresh_bounds(beta);
                    s
                })
                .collect();
            for a in 0..k {
                let above = (0..k).filter(|&b| b != a && exact[b].lower > exact[a].upper).count();
                let below = (0..k).filter(|&b| b != a && exact[b].upper < exact[a].lower).count();
                // Cluster g fits iff k_{g-1} <= above and K - below <= k_g.
                let oracle = (0..spec.num_clusters()).find(|&g| {
                    let prev = if g == 0 { 0 } else { spec.boundaries()[g - 1] };
                    prev <= above && k - below <= spec.boundaries()[g]
                });
                let mut lazy = LazyBounds::new(&tallies, beta);
                proptest::prop_assert_eq!(resolved_cluster(&spec, &tallies, &mut lazy, a), oracle);
            }
        }
    }

    #[test]
    fn quicksort_noiseless_is_exact() {
        let k = 40;
        let true_ranks: Vec<usize> = (0..k).map(|a| (a * 7) % k).collect();
        let items: Vec<usize> = (0..k).collect();
        let spec = ClusterSpec::equal_sized(k, 4).unwrap();
        let mut rng = trial_rng(5, 0, 0);
        let early = noisy_quicksort(&items, |x, y| true_ranks[x] < true_ranks[y], &spec, &mut rng);
        let mut rng = trial_rng(5, 0, 0);
        let full = noisy_quicksort_full(&items, |x, y| true_ranks[x] < true_ranks[y], &mut rng);
        for (pos, &a) in full.order.iter().enumerate() {
            assert_eq!(true_ranks[a], pos);
        }
        assert!(early.comparisons <= full.comparisons);
        let truth = full.ranking(&spec);
        assert_eq!(early.ranking(&spec).cluster_labels(), truth.cluster_labels());
    }

    #[test]
    fn quicksort_last_element_separation() {
        let k = 10;
        let items: Vec<usize> = (0..k).collect();
        let spec = ClusterSpec::new(vec![k - 1, k]).unwrap();
        let mut rng = trial_rng(6, 0, 0);
        let out = noisy_quicksort(&items, |x, y| x < y, &spec, &mut rng);
        assert_eq!(out.order[k - 1], k - 1);
        let r = out.ranking(&spec);
        assert_eq!(r.clusters[1], vec![k - 1]);
    }

    #[test]
    fn early_stop_preserves_clusters_under_fixed_outcomes() {
        for trial in 0..50 {
            let k = 30;
            let mut rng = trial_rng(7, 1, trial);
            // Fixed noisy outcome per unordered pair.
            let mut outcome = vec![vec![false; k]; k];
            for x in 0..k {
                for y in (x + 1)..k {
                    let x_wins = if rng.gen::<f64>() < 0.2 { x > y } else { x < y };
                    outcome[x][y] = x_wins;
                    outcome[y][x] = !x_wins;
                }
            }
            let items: Vec<usize> = (0..k).collect();
            let spec = ClusterSpec::equal_sized(k, 3).unwrap();
            let seed: u64 = rng.gen();
            let early = noisy_quicksort(
                &items,
                |x, y| outcome[x][y],
                &spec,
                &mut ChaCha8Rng::seed_from_u64(seed),
            );
            let full = noisy_quicksort_full(&items, |x, y| outcome[x][y], &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(
                early.ranking(&spec).cluster_labels(),
                full.ranking(&spec).cluster_labels()
            );
        }
    }

    #[test]
    fn btl_two_items_closed_form() {
        let duels = [
            Duel { i: 0, j: 1, winner: 0 },
            Duel { i: 0, j: 1, winner: 0 },
            Duel { i: 1, j: 0, winner: 0 },
            Duel { i: 0, j: 1, winner: 1 },
        ];
        let fit = btl_mle(2, &duels).unwrap();
        assert!(!fit.regularized);
        assert_abs_diff_eq!(fit.scores[0] - fit.scores[1], 3f64.ln(), epsilon = 1e-6);
        assert_eq!(fit.scores[1], 0.0);
    }

    #[test]
    fn btl_symmetric_log_gives_equal_scores() {
        let mut duels = Vec::new();
        for i in 0..4 {
            for j in (i + 1)..4 {
                duels.push(Duel { i, j, winner: i });
                duels.push(Duel { i, j, winner: j });
            }
        }
        let fit = btl_mle(4, &duels).unwrap();
        assert!(fit.scores.iter().all(|&s| s.abs() < 1e-8));
    }

    #[test]
    fn btl_unbeaten_item_stays_finite() {
        let duels = [Duel { i: 0, j: 1, winner: 0 }, Duel { i: 1, j: 2, winner: 1 }];
        let fit = btl_mle(3, &duels).unwrap();
        assert!(fit.regularized);
        assert!(fit.scores.iter().all(|s| s.is_finite()));
        assert!(fit.scores[0] > fit.scores[1] && fit.scores[1] > fit.scores[2]);
    }

    #[test]
    fn btl_disconnected_names_components() {
        let duels = [Duel { i: 0, j: 1, winner: 0 }, Duel { i: 2, j: 3, winner: 3 }];
        match btl_mle(4, &duels) {
            Err(BtlError::Disconnected(c)) => assert_eq!(c, vec![vec![0, 1], vec![2, 3]]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(btl_mle(2, &[Duel { i: 0, j: 1, winner: 2 }]).is_err());
    }

    #[test]
    fn btl_recovers_rank_order() {
        let k = 10;
        let theta: Vec<f64> = (0..k).map(|i| 0.3 * i as f64).collect();
        let m = crate::env::BtlInstance::new(theta.clone()).unwrap().matrix();
        let mut rng = trial_rng(8, 0, 0);
        let mut duels = Vec::with_capacity(100_000);
        for _ in 0..100_000 {
            let i = rng.gen_range(0..k);
            let j = crate::env::draw_opponent(k, i, &mut rng);
            let winner = m.duel(i, j, &mut rng).unwrap();
            duels.push(Duel { i, j, winner });
        }
        let fit = btl_mle(k, &duels).unwrap();
        let order = crate::ranking::order_by_score(&fit.scores);
        assert_eq!(order, (0..k).rev().collect::<Vec<_>>());
        assert_eq!(pair_counts(&duels).len(), k * (k - 1) / 2);
    }
}
