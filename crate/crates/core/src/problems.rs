//! Convex objective oracles.
//!
//! * [`HingeLossProblem`]: mean hinge loss over sparse samples, constrained
//!   to an ℓ₁ ball.
//! * [`HardFunctionProblem`]: the max-of-linear function on the unit ball on
//!   which the last iterate of fixed-schedule gradient descent stays above
//!   `ln T / (32 c √T)`.
//! * [`MaxLinearProblem`]: generic `max_i ⟨aᵢ, w⟩ + bᵢ` over any set, used by
//!   the randomized invariant suites.

use rand::seq::index;
use rand::Rng;

use crate::dataio::Dataset;
use crate::error::{check_dim, invalid, Result};
use crate::projections::FeasibleSet;
use crate::vecmath::{dense_dot, Vector};
use crate::SeededRng;

/// A convex objective with subgradient access over a feasible set.
pub trait ProblemOracle: Send + Sync {
    fn dim(&self) -> usize;

    fn feasible_set(&self) -> &FeasibleSet;

    fn value(&self, w: &Vector) -> Result<f64>;

    fn subgradient(&self, w: &Vector) -> Result<Vector>;

    /// Unbiased subgradient estimate. Deterministic oracles return the exact
    /// subgradient and ignore `batch` and `rng`.
    fn stochastic_subgradient(&self, w: &Vector, batch: usize, rng: &mut SeededRng) -> Result<Vector> {
        let _ = (batch, rng);
        self.subgradient(w)
    }

    /// Declared bound `M ≥ ‖g(w)‖` over the feasible set, when known.
    fn subgradient_bound(&self) -> Option<f64> {
        None
    }

    /// Number of summands for finite-sum objectives.
    fn sample_count(&self) -> Option<usize> {
        None
    }
}

fn dense_of(w: &Vector) -> std::borrow::Cow<'_, [f64]> {
    match w.as_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(w.to_dense()),
    }
}

/// `(1/n) Σ max(0, 1 − yᵢ⟨xᵢ, w⟩)` over `‖w‖₁ ≤ τ`.
#[derive(Clone, Debug)]
pub struct HingeLossProblem {
    features: Vec<Vector>,
    labels: Vec<f64>,
    set: FeasibleSet,
    bound: f64,
}

impl HingeLossProblem {
    pub fn new(features: Vec<Vector>, labels: Vec<f64>, dim: usize, tau: f64) -> Result<Self> {
        if features.is_empty() {
            return Err(invalid("hinge loss needs at least one sample"));
        }
        check_dim(features.len(), labels.len())?;
        for (x, &y) in features.iter().zip(&labels) {
            check_dim(dim, x.dim())?;
            if y != 1.0 && y != -1.0 {
                return Err(invalid(format!("hinge labels must be ±1, got {y}")));
            }
        }
        let bound = features.iter().map(Vector::norm2).fold(0.0, f64::max);
        Ok(Self {
            features,
            labels,
            set: FeasibleSet::l1_ball(dim, tau)?,
            bound,
        })
    }

    pub fn from_dataset(data: &Dataset, tau: f64) -> Result<Self> {
        Self::new(
            data.samples.iter().map(|(x, _)| x.clone()).collect(),
            data.samples.iter().map(|(_, y)| *y).collect(),
            data.dim.max(1),
            tau,
        )
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn tau(&self) -> f64 {
        match self.set.kind() {
            crate::projections::SetKind::L1Ball { radius } => *radius,
            _ => unreachable!("hinge problems are l1-constrained"),
        }
    }

    /// Subgradient of the loss restricted to `indices` (ascending), averaged
    /// over their count. Samples with margin exactly 1 contribute zero.
    fn subgradient_over(&self, w: &[f64], indices: impl Iterator<Item = usize>, count: usize) -> Result<Vector> {
        let mut g = vec![0.0; self.set.dim()];
        for i in indices {
            let y = self.labels[i];
            let margin = y * self.features[i].dot_dense(w)?;
            if margin < 1.0 {
                self.features[i].add_scaled_to(-y, &mut g)?;
            }
        }
        let scale = 1.0 / count as f64;
        g.iter_mut().for_each(|v| *v *= scale);
        Vector::dense(g)
    }
}

impl ProblemOracle for HingeLossProblem {
    fn dim(&self) -> usize {
        self.set.dim()
    }

    fn feasible_set(&self) -> &FeasibleSet {
        &self.set
    }

    fn value(&self, w: &Vector) -> Result<f64> {
        check_dim(self.dim(), w.dim())?;
        let w = dense_of(w);
        let mut total = 0.0;
        for (x, &y) in self.features.iter().zip(&self.labels) {
            total += (1.0 - y * x.dot_dense(&w)?).max(0.0);
        }
        Ok(total / self.len() as f64)
    }

    fn subgradient(&self, w: &Vector) -> Result<Vector> {
        check_dim(self.dim(), w.dim())?;
        self.subgradient_over(&dense_of(w), 0..self.len(), self.len())
    }

    /// Uniform batch drawn without replacement, accumulated in index order
    /// so that `batch == n` reproduces the full subgradient bit for bit.
    fn stochastic_subgradient(&self, w: &Vector, batch: usize, rng: &mut SeededRng) -> Result<Vector> {
        check_dim(self.dim(), w.dim())?;
        let n = self.len();
        if batch == 0 || batch > n {
            return Err(invalid(format!("batch size {batch} outside 1..={n}")));
        }
        let mut picked = index::sample(rng, n, batch).into_vec();
        picked.sort_unstable();
        self.subgradient_over(&dense_of(w), picked.into_iter(), batch)
    }

    fn subgradient_bound(&self) -> Option<f64> {
        Some(self.bound)
    }

    fn sample_count(&self) -> Option<usize> {
        Some(self.len())
    }
}

/// `f(w) = max_{i ∈ [T+1]} ⟨hᵢ, w⟩` on the unit ball of `ℝᵀ`, with
/// `hᵢⱼ = aⱼ` for `j < i`, `hᵢᵢ = −bᵢ` for `i ≤ T`, and zero after the diagonal.
#[derive(Clone, Debug)]
pub struct HardFunctionProblem {
    horizon: usize,
    scale: f64,
    a: Vec<f64>,
    b: Vec<f64>,
    set: FeasibleSet,
    bound: f64,
}

impl HardFunctionProblem {
    pub fn new(horizon: usize, scale: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(invalid("hard function horizon must be positive"));
        }
        if !(scale.is_finite() && scale >= 1.0) {
            return Err(invalid(format!("hard function scale c must be ≥ 1, got {scale}")));
        }
        let t = horizon as f64;
        let a: Vec<f64> = (1..=horizon)
            .map(|i| 1.0 / (8.0 * scale * (t - i as f64 + 1.0)))
            .collect();
        let b: Vec<f64> = (1..=horizon)
            .map(|i| (i as f64).sqrt() / (2.0 * scale * t.sqrt()))
            .collect();

        // same accumulation order as Vector::norm_sq on hᵢ
        let mut prefix = 0.0;
        let mut bound_sq = 0.0f64;
        for i in 0..horizon {
            bound_sq = bound_sq.max(prefix + b[i] * b[i]);
            prefix += a[i] * a[i];
        }
        bound_sq = bound_sq.max(prefix);

        Ok(Self {
            horizon,
            scale,
            a,
            b,
            set: FeasibleSet::l2_ball(horizon, 1.0)?,
            bound: bound_sq.sqrt(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// `hᵢ` for 1-based `i ∈ [1, T+1]`.
    pub fn h(&self, i: usize) -> Vec<f64> {
        assert!((1..=self.horizon + 1).contains(&i), "h index out of range");
        let mut h = vec![0.0; self.horizon];
        h[..i - 1].copy_from_slice(&self.a[..i - 1]);
        if i <= self.horizon {
            h[i - 1] = -self.b[i - 1];
        }
        h
    }

    /// Smallest 1-based index attaining the max, and the max itself.
    fn argmax(&self, w: &[f64]) -> (usize, f64) {
        // written as 0 − b₁w₁ so that w = 0 yields +0 and f(0) == 0 exactly
        let mut best = (1, 0.0 - self.b[0] * w[0]);
        let mut prefix = 0.0;
        for i in 1..=self.horizon {
            prefix += self.a[i - 1] * w[i - 1];
            let value = if i < self.horizon {
                prefix - self.b[i] * w[i]
            } else {
                prefix
            };
            if value > best.1 {
                best = (i + 1, value);
            }
        }
        best
    }

    /// `ln T / (32 c √T)`, the floor on the final objective of gradient descent
    /// with step `c/√t`.
    pub fn gd_lower_bound(&self) -> f64 {
        let t = self.horizon as f64;
        t.ln() / (32.0 * self.scale * t.sqrt())
    }
}

impl ProblemOracle for HardFunctionProblem {
    fn dim(&self) -> usize {
        self.horizon
    }

    fn feasible_set(&self) -> &FeasibleSet {
        &self.set
    }

    fn value(&self, w: &Vector) -> Result<f64> {
        check_dim(self.horizon, w.dim())?;
        Ok(self.argmax(&dense_of(w)).1)
    }

    fn subgradient(&self, w: &Vector) -> Result<Vector> {
        check_dim(self.horizon, w.dim())?;
        let (i, _) = self.argmax(&dense_of(w));
        Vector::dense(self.h(i))
    }

    fn subgradient_bound(&self) -> Option<f64> {
        Some(self.bound)
    }
}

/// `f(w) = max_i ⟨aᵢ, w⟩ + bᵢ` over an arbitrary feasible set.
#[derive(Clone, Debug)]
pub struct MaxLinearProblem {
    slopes: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    set: FeasibleSet,
    bound: f64,
}

impl MaxLinearProblem {
    pub fn new(slopes: Vec<Vec<f64>>, offsets: Vec<f64>, set: FeasibleSet) -> Result<Self> {
        if slopes.is_empty() {
            return Err(invalid("max-of-linear needs at least one piece"));
        }
        check_dim(slopes.len(), offsets.len())?;
        for a in &slopes {
            check_dim(set.dim(), a.len())?;
        }
        let bound = slopes
            .iter()
            .map(|a| a.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        Ok(Self {
            slopes,
            offsets,
            set,
            bound,
        })
    }

    /// `pieces` random affine pieces with slopes uniform in `[-1, 1]ᵈ` and
    /// offsets uniform in `[-0.5, 0.5]`.
    pub fn random(set: FeasibleSet, pieces: usize, rng: &mut SeededRng) -> Result<Self> {
        let d = set.dim();
        let slopes = (0..pieces)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let offsets = (0..pieces).map(|_| rng.gen_range(-0.5..0.5)).collect();
        Self::new(slopes, offsets, set)
    }

    pub fn pieces(&self) -> usize {
        self.slopes.len()
    }

    fn argmax(&self, w: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, (a, b)) in self.slopes.iter().zip(&self.offsets).enumerate() {
            let v = dense_dot(a, w) + b;
            if v > best.1 {
                best = (i, v);
            }
        }
        best
    }
}

impl ProblemOracle for MaxLinearProblem {
    fn dim(&self) -> usize {
        self.set.dim()
    }

    fn feasible_set(&self) -> &FeasibleSet {
        &self.set
    }

    fn value(&self, w: &Vector) -> Result<f64> {
        check_dim(self.dim(), w.dim())?;
        Ok(self.argmax(&dense_of(w)).1)
    }

    fn subgradient(&self, w: &Vector) -> Result<Vector> {
        check_dim(self.dim(), w.dim())?;
        let (i, _) = self.argmax(&dense_of(w));
        Vector::dense(self.slopes[i].clone())
    }

    fn subgradient_bound(&self) -> Option<f64> {
        Some(self.bound)
    }
}
