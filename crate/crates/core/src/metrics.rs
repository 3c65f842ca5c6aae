//! Evaluation of a returned ranking against known means.

use crate::ranking::{order_by_score, ClusterSpec, CoarseRanking, SpecError};

/// Ground truth a ranking is scored against.
#[derive(Debug, Clone)]
pub struct EvalContext {
    means: Vec<f64>,
    spec: ClusterSpec,
    epsilon: f64,
    /// Arms best-first by true mean (ties by index).
    true_order: Vec<usize>,
    /// True cluster of each arm.
    true_labels: Vec<usize>,
}

impl EvalContext {
    pub fn new(means: Vec<f64>, spec: ClusterSpec, epsilon: f64) -> Result<Self, SpecError> {
        spec.check_arms(means.len())?;
        let true_order = order_by_score(&means);
        let mut true_labels = vec![0; means.len()];
        for (pos, &a) in true_order.iter().enumerate() {
            true_labels[a] = spec.cluster_of_rank(pos + 1);
        }
        Ok(Self {
            means,
            spec,
            epsilon,
            true_order,
            true_labels,
        })
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }
    pub fn spec(&self) -> &ClusterSpec {
        &self.spec
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn true_order(&self) -> &[usize] {
        &self.true_order
    }
    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    /// True ranks (1-based) per arm.
    pub fn true_ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.means.len()];
        for (pos, &a) in self.true_order.iter().enumerate() {
            ranks[a] = pos + 1;
        }
        ranks
    }

    /// Sorted mean at 1-based position `pos`.
    fn sorted_mean(&self, pos: usize) -> f64 {
        self.means[self.true_order[pos - 1]]
    }
}

/// Whether any returned cluster differs from the true cluster.
pub fn cluster_mistake(result: &CoarseRanking, ctx: &EvalContext) -> bool {
    result
        .cluster_labels()
        .iter()
        .zip(&ctx.true_labels)
        .any(|(a, b)| a != b)
}

/// Whether some returned cluster contains an arm outside the true cluster
/// widened by `epsilon` in mean.
pub fn pac_violation(result: &CoarseRanking, ctx: &EvalContext) -> bool {
    let eps = ctx.epsilon;
    result.clusters.iter().enumerate().any(|(i, members)| {
        let top = ctx.sorted_mean(ctx.spec.cluster_start(i)) + eps;
        let bottom = ctx.sorted_mean(ctx.spec.boundaries()[i]) - eps;
        members.iter().any(|&a| {
            let p = ctx.means[a];
            !(top >= p && p >= bottom)
        })
    })
}

/// Counts inversions of `seq` by merge sort.
fn count_inversions(seq: &mut [usize]) -> u64 {
    let n = seq.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = count_inversions(&mut seq[..mid]) + count_inversions(&mut seq[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if seq[i] <= seq[j] {
            merged.push(seq[i]);
            i += 1;
        } else {
            merged.push(seq[j]);
            count += (mid - i) as u64;
            j += 1;
        }
    }
    merged.extend_from_slice(&seq[i..mid]);
    merged.extend_from_slice(&seq[j..]);
    seq.copy_from_slice(&merged);
    count
}

/// Number of arm pairs ordered differently by `ranks` and by `true_order`.
pub fn inversions(ranks: &[usize], true_order: &[usize]) -> u64 {
    let mut seq: Vec<usize> = true_order.iter().map(|&a| ranks[a]).collect();
    count_inversions(&mut seq)
}

/// Fraction of pairs inverted relative to the true order.
pub fn kendall_tau_fraction(ranks: &[usize], true_order: &[usize]) -> f64 {
    let k = ranks.len() as u64;
    if k < 2 {
        return 0.0;
    }
    inversions(ranks, true_order) as f64 / (k * (k - 1) / 2) as f64
}

/// Inverted pairs split into (different true clusters, same true cluster).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InversionSplit {
    pub inter: u64,
    pub intra: u64,
}

impl InversionSplit {
    pub fn total(&self) -> u64 {
        self.inter + self.intra
    }
}

pub fn inversion_decomposition(ranks: &[usize], ctx: &EvalContext) -> InversionSplit {
    let total = inversions(ranks, &ctx.true_order);
    let mut intra = 0;
    for i in 0..ctx.spec.num_clusters() {
        let start = ctx.spec.cluster_start(i) - 1;
        let end = ctx.spec.boundaries()[i];
        let mut seq: Vec<usize> = ctx.true_order[start..end].iter().map(|&a| ranks[a]).collect();
        intra += count_inversions(&mut seq);
    }
    InversionSplit {
        inter: total - intra,
        intra,
    }
}
