//! Cluster boundaries and the coarse rankings produced against them.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("need at least two clusters, got {0}")]
    TooFewClusters(usize),
    #[error("boundaries must satisfy 1 <= k_1 < ... < k_c, got {0:?}")]
    NotIncreasing(Vec<usize>),
    #[error("cluster spec covers {spec} arms but {got} were supplied")]
    ArmCount { spec: usize, got: usize },
}

/// Cluster boundaries `k_1 < k_2 < ... < k_c = K`. Cluster `i` (0-based) holds
/// ranks `k_{i-1} + 1 ..= k_i`, with `k_{-1} = 0`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ClusterSpec {
    boundaries: Vec<usize>,
}

impl ClusterSpec {
    pub fn new(boundaries: Vec<usize>) -> Result<Self, SpecError> {
        if boundaries.len() < 2 {
            return Err(SpecError::TooFewClusters(boundaries.len()));
        }
        let increasing = boundaries[0] >= 1 && boundaries.windows(2).all(|w| w[0] < w[1]);
        if !increasing {
            return Err(SpecError::NotIncreasing(boundaries));
        }
        Ok(Self { boundaries })
    }

    /// `c` clusters of (nearly) equal size over `num_arms` arms; the first
    /// `num_arms % c` clusters get one extra arm.
    pub fn equal_sized(num_arms: usize, clusters: usize) -> Result<Self, SpecError> {
        if clusters < 2 || clusters > num_arms {
            return Err(SpecError::TooFewClusters(clusters));
        }
        let base = num_arms / clusters;
        let extra = num_arms % clusters;
        let mut acc = 0;
        let boundaries = (0..clusters)
            .map(|i| {
                acc += base + usize::from(i < extra);
                acc
            })
            .collect();
        Self::new(boundaries)
    }

    /// One cluster per rank: `k_i = i`.
    pub fn complete(num_arms: usize) -> Result<Self, SpecError> {
        Self::new((1..=num_arms).collect())
    }

    pub fn parse(text: &str) -> Result<Self, SpecError> {
        let parsed: Result<Vec<usize>, _> = text
            .split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect();
        match parsed {
            Ok(b) => Self::new(b),
            Err(_) => Err(SpecError::NotIncreasing(Vec::new())),
        }
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn num_arms(&self) -> usize {
        *self.boundaries.last().expect("spec has at least two boundaries")
    }

    pub fn num_clusters(&self) -> usize {
        self.boundaries.len()
    }

    /// Number of boundaries that separate two clusters (`c - 1`).
    pub fn num_inner(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// `k_i` for inner boundary `i` (0-based, `i < c - 1`).
    pub fn inner(&self, i: usize) -> usize {
        self.boundaries[i]
    }

    /// First rank (1-based) of cluster `i`.
    pub fn cluster_start(&self, i: usize) -> usize {
        if i == 0 {
            1
        } else {
            self.boundaries[i - 1] + 1
        }
    }

    pub fn cluster_size(&self, i: usize) -> usize {
        self.boundaries[i] + 1 - self.cluster_start(i)
    }

    /// Cluster index (0-based) of a 1-based rank.
    pub fn cluster_of_rank(&self, rank: usize) -> usize {
        self.boundaries.partition_point(|&k| k < rank)
    }

    pub fn check_arms(&self, got: usize) -> Result<(), SpecError> {
        if got == self.num_arms() {
            Ok(())
        } else {
            Err(SpecError::ArmCount {
                spec: self.num_arms(),
                got,
            })
        }
    }
}

impl TryFrom<Vec<usize>> for ClusterSpec {
    type Error = SpecError;
    fn try_from(value: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ClusterSpec> for Vec<usize> {
    fn from(value: ClusterSpec) -> Self {
        value.boundaries
    }
}

/// Arm indices sorted by decreasing score, ties broken by lowest index.
pub fn order_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| desc_then_index(scores[a], a, scores[b], b));
    order
}

#[inline]
pub(crate) fn desc_then_index(xa: f64, a: usize, xb: f64, b: usize) -> Ordering {
    xb.total_cmp(&xa).then(a.cmp(&b))
}

/// A ranking of all arms plus the clusters it induces under a [`ClusterSpec`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseRanking {
    /// `ranks[a]` is the 1-based rank of arm `a`.
    pub ranks: Vec<usize>,
    /// `clusters[i]` holds the arms whose rank falls in cluster `i`, in rank order.
    pub clusters: Vec<Vec<usize>>,
}

impl CoarseRanking {
    /// Builds the ranking from arms listed best-first.
    pub fn from_order(order: &[usize], spec: &ClusterSpec) -> Self {
        debug_assert_eq!(order.len(), spec.num_arms());
        let mut ranks = vec![0; order.len()];
        let mut clusters = vec![Vec::new(); spec.num_clusters()];
        for (pos, &arm) in order.iter().enumerate() {
            ranks[arm] = pos + 1;
            clusters[spec.cluster_of_rank(pos + 1)].push(arm);
        }
        Self { ranks, clusters }
    }

    pub fn from_scores(scores: &[f64], spec: &ClusterSpec) -> Self {
        Self::from_order(&order_by_score(scores), spec)
    }

    pub fn num_arms(&self) -> usize {
        self.ranks.len()
    }

    /// Arms in rank order.
    pub fn order(&self) -> Vec<usize> {
        let mut order = vec![0; self.ranks.len()];
        for (arm, &r) in self.ranks.iter().enumerate() {
            order[r - 1] = arm;
        }
        order
    }

    /// Cluster index assigned to each arm.
    pub fn cluster_labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.ranks.len()];
        for (i, members) in self.clusters.iter().enumerate() {
            for &a in members {
                labels[a] = i;
            }
        }
        labels
    }
}
