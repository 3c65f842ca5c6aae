//! Bernoulli divergence kernel: KL divergence, KL-UCB confidence bounds,
//! Chernoff information, the exploration-rate schedule and the `C0(alpha)`
//! constant of the sample-complexity bound.
//!
//! KL-UCB bounds are found by Newton steps started on the infeasible side,
//! where convexity of the divergence keeps the iterates monotone, and then
//! settled on the last feasible double. Other roots are located by bisection,
//! which runs until no representable double separates the two ends or until
//! [`MAX_BISECTION_ITERS`] halvings.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute bracket width below which a bisection is allowed to stop.
pub const BISECTION_TOL: f64 = 1e-12;
/// Hard cap on bisection halvings.
pub const MAX_BISECTION_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MathError {
    #[error("divergence d({x}, {y}) is infinite")]
    InfiniteDivergence { x: f64, y: f64 },
    #[error("{name} = {value} is outside {expected}")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("invalid exploration schedule: {0}")]
    Schedule(String),
}

fn check_probability(name: &'static str, value: f64) -> Result<(), MathError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(MathError::Domain {
            name,
            value,
            expected: "[0, 1]",
        })
    }
}

/// `a ln(a / b)` with `0 ln(0 / b) = 0`, given `diff = a - b` computed by
/// the caller without rounding `a` and `b` separately.
#[inline]
fn xlog_ratio(a: f64, b: f64, diff: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else if 0.5 * b <= a && a <= 2.0 * b {
        a * (diff / b).ln_1p()
    } else {
        a * (a / b).ln()
    }
}

/// Unchecked divergence for callers that already know `y` is admissible.
#[inline]
pub(crate) fn kl_raw(x: f64, y: f64) -> f64 {
    let d = xlog_ratio(x, y, x - y) + xlog_ratio(1.0 - x, 1.0 - y, y - x);
    // Cancellation can leave a tiny negative residue when x ~ y.
    d.max(0.0)
}

/// Kullback-Leibler divergence between `Bernoulli(x)` and `Bernoulli(y)`.
pub fn kl_bernoulli(x: f64, y: f64) -> Result<f64, MathError> {
    check_probability("x", x)?;
    check_probability("y", y)?;
    if x == y {
        return Ok(0.0);
    }
    if y == 0.0 || y == 1.0 {
        return Err(MathError::InfiniteDivergence { x, y });
    }
    Ok(kl_raw(x, y))
}

/// Bisects `[lo, hi]` for the boundary of `feasible`, which must hold at `lo`
/// and fail at `hi`. Returns the last feasible point.
fn bisect_feasible(mut lo: f64, mut hi: f64, feasible: impl Fn(f64) -> bool) -> f64 {
    for _ in 0..MAX_BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn check_bound_inputs(p_hat: f64, n: u64, beta: f64) -> Result<(), MathError> {
    check_probability("p_hat", p_hat)?;
    if n == 0 {
        return Err(MathError::Domain {
            name: "n",
            value: 0.0,
            expected: "n >= 1",
        });
    }
    if !(beta >= 0.0) {
        return Err(MathError::Domain {
            name: "beta",
            value: beta,
            expected: "[0, inf)",
        });
    }
    Ok(())
}

/// KL-UCB upper bound: `max { q in [p_hat, 1] : n d(p_hat, q) <= beta }`.
pub fn kl_ucb_upper(p_hat: f64, n: u64, beta: f64) -> Result<f64, MathError> {
    check_bound_inputs(p_hat, n, beta)?;
    Ok(upper_unchecked(p_hat, n as f64, beta))
}

/// KL-UCB lower bound: `min { q in [0, p_hat] : n d(p_hat, q) <= beta }`.
pub fn kl_ucb_lower(p_hat: f64, n: u64, beta: f64) -> Result<f64, MathError> {
    check_bound_inputs(p_hat, n, beta)?;
    Ok(lower_unchecked(p_hat, n as f64, beta))
}

/// Largest feasible double at or below `q` (feasibility fails at `q` itself
/// or a few ulps above the answer); falls back to bisection on `[lo, q]`.
fn settle_down(lo: f64, q: f64, feasible: impl Fn(f64) -> bool) -> f64 {
    let mut x = q;
    for _ in 0..64 {
        if feasible(x) {
            return x;
        }
        if x <= lo {
            return lo;
        }
        x = f64::from_bits(x.to_bits() - 1);
    }
    bisect_feasible(lo, x, feasible)
}

/// Newton iteration on `g(q) = d(p, q) - budget` from a point where `g > 0`,
/// moving towards `p`. `g` is convex and monotone on either side of `p`, so
/// the iterates never cross the root in exact arithmetic.
fn newton_towards(p: f64, mut q: f64, budget: f64) -> f64 {
    for _ in 0..100 {
        let g = kl_raw(p, q) - budget;
        if !(g > 0.0) {
            break;
        }
        let slope = (q - p) / (q * (1.0 - q));
        let next = q - g / slope;
        let moved = if q > p { next < q } else { next > q };
        if !moved || !next.is_finite() {
            break;
        }
        q = next;
    }
    q
}

/// Largest double below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

pub(crate) fn upper_unchecked(p_hat: f64, n: f64, beta: f64) -> f64 {
    if p_hat >= 1.0 {
        return 1.0;
    }
    if beta == 0.0 {
        return p_hat;
    }
    let budget = beta / n;
    let feasible = |q: f64| q < 1.0 && kl_raw(p_hat, q) <= budget;
    // Pinsker: d(p, q) >= 2 (q - p)^2, so the root lies below p + sqrt(budget / 2).
    // Every double below 1 is feasible: the bound is 1 at this precision.
    if feasible(BELOW_ONE) {
        return 1.0;
    }
    let pinsker = p_hat + (0.5 * budget).sqrt();
    if pinsker < 1.0 && kl_raw(p_hat, pinsker) > budget {
        let q = newton_towards(p_hat, pinsker, budget).max(p_hat);
        // Rounding may land a hair inside the feasible set; step back out first.
        if feasible(q) {
            return walk_to_edge(q, pinsker, feasible);
        }
        settle_down(p_hat, q, feasible)
    } else {
        bisect_feasible(p_hat, 1.0, feasible)
    }
}

pub(crate) fn lower_unchecked(p_hat: f64, n: f64, beta: f64) -> f64 {
    if p_hat <= 0.0 {
        return 0.0;
    }
    if beta == 0.0 {
        return p_hat;
    }
    // Mirror image of the upper bound.
    let budget = beta / n;
    let feasible = |q: f64| q > 0.0 && kl_raw(p_hat, q) <= budget;
    // Smallest positive double.
    if feasible(f64::from_bits(1)) {
        return 0.0;
    }
    let pinsker = p_hat - (0.5 * budget).sqrt();
    if pinsker > 0.0 && kl_raw(p_hat, pinsker) > budget {
        let q = newton_towards(p_hat, pinsker, budget).min(p_hat);
        if feasible(q) {
            return walk_to_edge(q, pinsker, feasible);
        }
        settle_up(p_hat, q, feasible)
    } else {
        -bisect_feasible(-p_hat, 0.0, |neg_q| feasible(-neg_q))
    }
}

/// From a feasible `q`, the last feasible double in the direction of the
/// infeasible point `far`.
fn walk_to_edge(q: f64, far: f64, feasible: impl Fn(f64) -> bool) -> f64 {
    let step = |x: f64| {
        if far > x {
            f64::from_bits(x.to_bits() + 1)
        } else {
            f64::from_bits(x.to_bits() - 1)
        }
    };
    let mut x = q;
    for _ in 0..64 {
        let next = step(x);
        if !feasible(next) {
            return x;
        }
        x = next;
    }
    if far > x {
        bisect_feasible(x, far, feasible)
    } else {
        -bisect_feasible(-x, -far, |neg| feasible(-neg))
    }
}

/// Smallest feasible double at or above `q`; counterpart of [`settle_down`].
fn settle_up(hi: f64, q: f64, feasible: impl Fn(f64) -> bool) -> f64 {
    let mut x = q;
    for _ in 0..64 {
        if feasible(x) {
            return x;
        }
        if x >= hi {
            return hi;
        }
        x = f64::from_bits(x.to_bits() + 1);
    }
    -bisect_feasible(-hi, -x, |neg_q| feasible(-neg_q))
}

/// Equalizing point `z*` strictly between `x` and `y` with `d(z*, x) = d(z*, y)`,
/// together with the Chernoff information `d(z*, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChernoffPoint {
    pub z: f64,
    pub value: f64,
}

/// Chernoff information between `Bernoulli(x)` and `Bernoulli(y)` with the
/// equalizing point exposed.
pub fn chernoff_point(x: f64, y: f64) -> Result<ChernoffPoint, MathError> {
    for (name, v) in [("x", x), ("y", y)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(MathError::Domain {
                name,
                value: v,
                expected: "(0, 1)",
            });
        }
    }
    if x == y {
        return Ok(ChernoffPoint { z: x, value: 0.0 });
    }
    let (small, large) = if x < y { (x, y) } else { (y, x) };
    // h(z) = d(z, small) - d(z, large) is increasing in z, negative at `small`
    // and positive at `large`.
    let h = |z: f64| kl_raw(z, small) - kl_raw(z, large);
    let z = bisect_feasible(small, large, |z| h(z) <= 0.0);
    let value = 0.5 * (kl_raw(z, small) + kl_raw(z, large));
    Ok(ChernoffPoint { z, value })
}

/// Chernoff information `d*(x, y)`.
pub fn chernoff_information(x: f64, y: f64) -> Result<f64, MathError> {
    chernoff_point(x, y).map(|p| p.value)
}

/// Parameters of the exploration rate
/// `beta(t) = ln(k1 K t^alpha / delta) + ln ln(k1 K t^alpha / delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    k1: f64,
    alpha: f64,
    delta: f64,
    num_arms: usize,
    num_clusters: usize,
}

/// Default exploration exponent.
pub const DEFAULT_ALPHA: f64 = 1.1;
/// Multiplier applied to the smallest admissible `k1` by [`ExplorationSchedule::with_delta`].
pub const DEFAULT_K1_MARGIN: f64 = 1.01;

impl ExplorationSchedule {
    pub fn new(
        k1: f64,
        alpha: f64,
        delta: f64,
        num_arms: usize,
        num_clusters: usize,
    ) -> Result<Self, MathError> {
        if !(alpha > 1.0) || !alpha.is_finite() {
            return Err(MathError::Schedule(format!("alpha must exceed 1, got {alpha}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(MathError::Schedule(format!(
                "delta must lie in (0, 1), got {delta}"
            )));
        }
        if num_arms == 0 {
            return Err(MathError::Schedule("need at least one arm".into()));
        }
        if num_clusters < 2 {
            return Err(MathError::Schedule(format!(
                "need at least two clusters, got {num_clusters}"
            )));
        }
        let min_k1 = Self::min_k1(alpha, num_clusters);
        if !(k1 > min_k1) || !k1.is_finite() {
            return Err(MathError::Schedule(format!(
                "k1 = {k1} must exceed {min_k1} for alpha = {alpha} and {num_clusters} clusters"
            )));
        }
        Ok(Self {
            k1,
            alpha,
            delta,
            num_arms,
            num_clusters,
        })
    }

    /// Schedule with `alpha = 1.1` and `k1` one percent above its lower limit.
    pub fn with_delta(delta: f64, num_arms: usize, num_clusters: usize) -> Result<Self, MathError> {
        Self::with_alpha(DEFAULT_ALPHA, delta, num_arms, num_clusters)
    }

    pub fn with_alpha(
        alpha: f64,
        delta: f64,
        num_arms: usize,
        num_clusters: usize,
    ) -> Result<Self, MathError> {
        if !(alpha > 1.0) {
            return Err(MathError::Schedule(format!("alpha must exceed 1, got {alpha}")));
        }
        let k1 = DEFAULT_K1_MARGIN * Self::min_k1(alpha, num_clusters.max(2));
        Self::new(k1, alpha, delta, num_arms, num_clusters)
    }

    /// `((c - 1) / 2)^alpha + 2e / (alpha - 1) + 4e / (alpha - 1)^2`.
    pub fn min_k1(alpha: f64, num_clusters: usize) -> f64 {
        let half = (num_clusters as f64 - 1.0) / 2.0;
        let a1 = alpha - 1.0;
        half.powf(alpha) + 2.0 * E / a1 + 4.0 * E / (a1 * a1)
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn num_arms(&self) -> usize {
        self.num_arms
    }
    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    /// `ln(k1 K / delta)`, the logarithm of the rate argument at `t = 1`.
    fn log_base(&self) -> f64 {
        self.k1.ln() + (self.num_arms as f64).ln() - self.delta.ln()
    }

    /// `beta(t, delta)` for round `t >= 1`.
    pub fn rate(&self, t: u64) -> f64 {
        let log_a = self.log_base() + self.alpha * (t.max(1) as f64).ln();
        log_a + log_a.ln()
    }
}

/// Free-function form of [`ExplorationSchedule::rate`].
pub fn exploration_rate(t: u64, schedule: &ExplorationSchedule) -> f64 {
    schedule.rate(t)
}

/// Smallest `C0 >= 1` with `C0 >= (1 + 1/e)(alpha ln C0 + 1 + alpha / e)`,
/// by fixed-point iteration of the right-hand side started at `e`.
pub fn solve_c0(alpha: f64) -> Result<f64, MathError> {
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(MathError::Domain {
            name: "alpha",
            value: alpha,
            expected: "(1, inf)",
        });
    }
    let map = |c: f64| (1.0 + 1.0 / E) * (alpha * c.ln() + 1.0 + alpha / E);
    let mut c = E;
    for _ in 0..10_000 {
        let next = map(c);
        if (next - c).abs() <= 1e-13 * next.max(1.0) {
            c = next;
            break;
        }
        c = next;
    }
    // The iterate approaches the fixed point from below; nudge up until the
    // inequality holds in floating point.
    while c < map(c) {
        c = f64::from_bits(c.to_bits() + 1);
    }
    Ok(c)
}
