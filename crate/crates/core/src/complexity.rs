//! Sample-complexity quantities: Chernoff distances to boundary anchors, the
//! hardness `H*`, the high-probability upper bound on LUCBRank's sample
//! count, and the KL-based lower bound for any PAC coarse-ranking method.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bernoulli::{chernoff_information, kl_bernoulli, solve_c0, ExplorationSchedule, MathError};
use crate::ranking::{order_by_score, ClusterSpec, SpecError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ComplexityError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("anchor {index} = {value} is outside [{low}, {high}]")]
    Anchor {
        index: usize,
        value: f64,
        low: f64,
        high: f64,
    },
    #[error("expected {expected} anchors, got {got}")]
    AnchorCount { expected: usize, got: usize },
    #[error("arm {arm} has zero distance to its boundary and epsilon is 0: complexity is infinite")]
    InfiniteComplexity { arm: usize },
    #[error("boundary {boundary} is not strictly separated: p[{upper}] = p[{lower}]")]
    NotSeparated {
        boundary: usize,
        upper: usize,
        lower: usize,
    },
}

/// Means sorted in decreasing order, with the original arm index of each.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedMeans {
    pub values: Vec<f64>,
    pub arms: Vec<usize>,
}

impl SortedMeans {
    pub fn new(means: &[f64]) -> Self {
        let arms = order_by_score(means);
        let values = arms.iter().map(|&a| means[a]).collect();
        Self { values, arms }
    }
}

/// One anchor per inner boundary, each inside its boundary's gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryAnchors(pub Vec<f64>);

impl BoundaryAnchors {
    /// Closed interval `[p_{k_i + 1}, p_{k_i}]` for inner boundary `i` over sorted means.
    pub fn gap(sorted: &[f64], spec: &ClusterSpec, i: usize) -> (f64, f64) {
        let k = spec.inner(i);
        (sorted[k], sorted[k - 1])
    }

    pub fn midpoints(sorted: &[f64], spec: &ClusterSpec) -> Self {
        Self(
            (0..spec.num_inner())
                .map(|i| {
                    let (lo, hi) = Self::gap(sorted, spec, i);
                    0.5 * (lo + hi)
                })
                .collect(),
        )
    }

    pub fn validate(&self, sorted: &[f64], spec: &ClusterSpec) -> Result<(), ComplexityError> {
        if self.0.len() != spec.num_inner() {
            return Err(ComplexityError::AnchorCount {
                expected: spec.num_inner(),
                got: self.0.len(),
            });
        }
        for (index, &value) in self.0.iter().enumerate() {
            let (low, high) = Self::gap(sorted, spec, index);
            if !(low <= value && value <= high) {
                return Err(ComplexityError::Anchor {
                    index,
                    value,
                    low,
                    high,
                });
            }
        }
        Ok(())
    }
}

/// Reference boundaries for the arm at 0-based sorted position `pos`:
/// the top cluster looks at boundary 0, the bottom at the last, middle
/// clusters at both sides.
fn adjacent_boundaries(spec: &ClusterSpec, pos: usize) -> (Option<usize>, Option<usize>) {
    let g = spec.cluster_of_rank(pos + 1);
    let last = spec.num_inner() - 1;
    let above = (g > 0).then(|| g - 1);
    let below = (g <= last).then_some(g);
    (above, below)
}

/// Chernoff distance of every arm (in sorted order) to its nearest anchor.
pub fn delta_star(
    sorted: &[f64],
    spec: &ClusterSpec,
    anchors: &BoundaryAnchors,
) -> Result<Vec<f64>, ComplexityError> {
    spec.check_arms(sorted.len())?;
    anchors.validate(sorted, spec)?;
    delta_star_unchecked(sorted, spec, &anchors.0)
}

fn delta_star_unchecked(
    sorted: &[f64],
    spec: &ClusterSpec,
    anchors: &[f64],
) -> Result<Vec<f64>, ComplexityError> {
    (0..sorted.len())
        .map(|pos| {
            let (above, below) = adjacent_boundaries(spec, pos);
            let d = |b: usize| chernoff_information(sorted[pos], anchors[b]);
            Ok(match (above, below) {
                (Some(a), Some(b)) => d(a)?.min(d(b)?),
                (Some(a), None) => d(a)?,
                (None, Some(b)) => d(b)?,
                (None, None) => unreachable!("spec has at least one inner boundary"),
            })
        })
        .collect()
}

/// `sum_a 1 / max(delta*(a), epsilon^2 / 2)`.
pub fn h_star(delta_star: &[f64], epsilon: f64) -> Result<f64, ComplexityError> {
    let floor = epsilon * epsilon / 2.0;
    let mut total = 0.0;
    for (arm, &d) in delta_star.iter().enumerate() {
        let m = d.max(floor);
        if !(m > 0.0) {
            return Err(ComplexityError::InfiniteComplexity { arm });
        }
        total += 1.0 / m;
    }
    Ok(total)
}

fn h_star_or_inf(sorted: &[f64], spec: &ClusterSpec, anchors: &[f64], epsilon: f64) -> f64 {
    delta_star_unchecked(sorted, spec, anchors)
        .ok()
        .and_then(|d| h_star(&d, epsilon).ok())
        .unwrap_or(f64::INFINITY)
}

const GOLDEN_TOL: f64 = 1e-10;
const DESCENT_TOL: f64 = 1e-12;
const MAX_DESCENT_PASSES: usize = 200;

/// Golden-section minimization of `f` on `[lo, hi]`.
pub(crate) fn golden_section(mut lo: f64, mut hi: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > GOLDEN_TOL {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}

/// Anchors minimizing `H*` by coordinate descent with a golden-section line
/// search per boundary, started from the gap midpoints.
pub fn optimize_anchors(
    sorted: &[f64],
    spec: &ClusterSpec,
    epsilon: f64,
) -> Result<(BoundaryAnchors, f64), ComplexityError> {
    spec.check_arms(sorted.len())?;
    let mut anchors = BoundaryAnchors::midpoints(sorted, spec).0;
    let mut best = h_star_or_inf(sorted, spec, &anchors, epsilon);
    for _ in 0..MAX_DESCENT_PASSES {
        let before = best;
        for i in 0..anchors.len() {
            let (lo, hi) = BoundaryAnchors::gap(sorted, spec, i);
            if lo == hi {
                continue;
            }
            let mut trial = anchors.clone();
            let x = golden_section(lo, hi, |b| {
                trial[i] = b;
                h_star_or_inf(sorted, spec, &trial, epsilon)
            });
            trial[i] = x;
            let value = h_star_or_inf(sorted, spec, &trial, epsilon);
            if value < best {
                best = value;
                anchors = trial;
            }
        }
        if !(before - best >= DESCENT_TOL) {
            break;
        }
    }
    if !best.is_finite() {
        // Re-run on the final anchors to surface the offending arm.
        let d = delta_star_unchecked(sorted, spec, &anchors)?;
        h_star(&d, epsilon)?;
    }
    Ok((BoundaryAnchors(anchors), best))
}

/// `2 C0(alpha) H* ln(k1 K (2 H*)^alpha / delta)`.
pub fn theorem2_bound(h_star: f64, schedule: &ExplorationSchedule) -> Result<f64, MathError> {
    let c0 = solve_c0(schedule.alpha())?;
    let log_arg = schedule.k1().ln() + (schedule.num_arms() as f64).ln()
        + schedule.alpha() * (2.0 * h_star).ln()
        - schedule.delta().ln();
    Ok(2.0 * c0 * h_star * log_arg)
}

/// KL distances to the nearest arm across each adjacent boundary and the
/// resulting lower bound on the expected sample count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    /// Per arm in sorted order.
    pub delta_kl: Vec<f64>,
    pub value: f64,
    /// The constant in the bound is only established for `delta <= 0.15`.
    pub delta_out_of_range: bool,
}

/// Largest `delta` for which the lower bound's constant is established.
pub const LOWER_BOUND_MAX_DELTA: f64 = 0.15;

pub fn delta_kl_and_lower_bound(
    sorted: &[f64],
    spec: &ClusterSpec,
    delta: f64,
) -> Result<LowerBound, ComplexityError> {
    spec.check_arms(sorted.len())?;
    for i in 0..spec.num_inner() {
        let k = spec.inner(i);
        if !(sorted[k - 1] > sorted[k]) {
            return Err(ComplexityError::NotSeparated {
                boundary: i,
                upper: k - 1,
                lower: k,
            });
        }
    }
    let delta_kl = (0..sorted.len())
        .map(|pos| {
            let (above, below) = adjacent_boundaries(spec, pos);
            // Across boundary i above: the last arm of the cluster above (p_{k_i}).
            // Across boundary i below: the first arm of the cluster below (p_{k_i + 1}).
            let up = |b: usize| kl_bernoulli(sorted[pos], sorted[spec.inner(b) - 1]);
            let down = |b: usize| kl_bernoulli(sorted[pos], sorted[spec.inner(b)]);
            Ok(match (above, below) {
                (Some(a), Some(b)) => up(a)?.min(down(b)?),
                (Some(a), None) => up(a)?,
                (None, Some(b)) => down(b)?,
                (None, None) => unreachable!("spec has at least one inner boundary"),
            })
        })
        .collect::<Result<Vec<f64>, ComplexityError>>()?;
    let sum: f64 = delta_kl.iter().map(|d| 1.0 / d).sum();
    Ok(LowerBound {
        value: sum * (1.0 / (2.4 * delta)).ln(),
        delta_kl,
        delta_out_of_range: delta > LOWER_BOUND_MAX_DELTA,
    })
}

/// Everything the analyzer reports for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub sorted_means: Vec<f64>,
    /// Original arm index at each sorted position.
    pub sorted_arms: Vec<usize>,
    pub boundaries: Vec<usize>,
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
    pub k1: f64,
    pub c0: f64,
    pub midpoint_anchors: Vec<f64>,
    pub delta_star_midpoint: Vec<f64>,
    pub h_star_midpoint: f64,
    pub optimized_anchors: Option<Vec<f64>>,
    pub delta_star_optimized: Option<Vec<f64>>,
    pub h_star_optimized: Option<f64>,
    /// Upper bound evaluated with the optimized anchors when available,
    /// otherwise with the midpoints.
    pub upper_bound: f64,
    pub delta_kl: Vec<f64>,
    pub lower_bound: f64,
    pub lower_bound_delta_out_of_range: bool,
    /// Set when the lower bound exceeds the upper bound.
    pub bounds_inverted: bool,
}

impl ComplexityReport {
    pub fn compute(
        means: &[f64],
        spec: &ClusterSpec,
        epsilon: f64,
        schedule: &ExplorationSchedule,
        optimize: bool,
    ) -> Result<Self, ComplexityError> {
        let sorted = SortedMeans::new(means);
        let s = &sorted.values;
        let mid = BoundaryAnchors::midpoints(s, spec);
        let ds_mid = delta_star(s, spec, &mid)?;
        let h_mid = h_star(&ds_mid, epsilon)?;
        let (opt_anchors, ds_opt, h_opt) = if optimize {
            let (anchors, h) = optimize_anchors(s, spec, epsilon)?;
            let ds = delta_star(s, spec, &anchors)?;
            (Some(anchors.0), Some(ds), Some(h))
        } else {
            (None, None, None)
        };
        let upper_bound = theorem2_bound(h_opt.unwrap_or(h_mid), schedule)?;
        let lower = delta_kl_and_lower_bound(s, spec, schedule.delta())?;
        Ok(Self {
            sorted_means: sorted.values.clone(),
            sorted_arms: sorted.arms.clone(),
            boundaries: spec.boundaries().to_vec(),
            epsilon,
            delta: schedule.delta(),
            alpha: schedule.alpha(),
            k1: schedule.k1(),
            c0: solve_c0(schedule.alpha())?,
            midpoint_anchors: mid.0,
            delta_star_midpoint: ds_mid,
            h_star_midpoint: h_mid,
            optimized_anchors: opt_anchors,
            delta_star_optimized: ds_opt,
            h_star_optimized: h_opt,
            upper_bound,
            bounds_inverted: lower.value > upper_bound,
            delta_kl: lower.delta_kl,
            lower_bound: lower.value,
            lower_bound_delta_out_of_range: lower.delta_out_of_range,
        })
    }
}
