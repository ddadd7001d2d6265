//! Runtime checkers for the reformulation identities and the EMA bounds,
//! plus empirical convergence-rate estimation from traces.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::optimizers::{run, EmaConfig, GradientMode, OptimizerKind, RunSpec, Schedule};
use crate::problems::ProblemOracle;
use crate::projections::FeasibleSet;

/// One row of per-iteration telemetry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub f_individual: f64,
    pub f_averaged: f64,
    pub gap_individual: Option<f64>,
    pub gap_averaged: Option<f64>,
    pub alpha_t: f64,
    pub beta1_t: f64,
    pub beta2_t: Option<f64>,
    pub identity_residual: Option<f64>,
    pub lemma3_slack: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Individual,
    Averaged,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::Individual => "individual",
            Quantity::Averaged => "averaged",
        }
    }
}

/// Least-squares fit of `log gap = slope · log t + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub window: (usize, usize),
    pub r_squared: f64,
    pub points: usize,
}

/// Minimum number of points a rate fit accepts.
pub const MIN_FIT_POINTS: usize = 20;

/// Window `[lo, ⌊0.95 T⌋]`, dropping the tail where gaps approach the
/// reference noise floor.
pub fn default_window(lo: usize, last_t: usize) -> (usize, usize) {
    (lo, (last_t as f64 * 0.95).floor() as usize)
}

/// Fits the log–log slope of the chosen gap over `t ∈ [window.0, window.1]`.
pub fn fit_rate(trace: &[TraceRecord], quantity: Quantity, window: (usize, usize)) -> Result<RateFit> {
    let mut points = Vec::new();
    for r in trace.iter().filter(|r| r.t >= window.0 && r.t <= window.1) {
        let gap = match quantity {
            Quantity::Individual => r.gap_individual,
            Quantity::Averaged => r.gap_averaged,
        }
        .ok_or_else(|| invalid(format!("trace has no {} gap column", quantity.name())))?;
        if gap.is_nan() || gap <= 0.0 {
            return Err(invalid(format!(
                "non-positive {} gap {gap} at t={}; reference f* is too high",
                quantity.name(),
                r.t
            )));
        }
        points.push(((r.t as f64).ln(), gap.ln()));
    }
    if points.len() < MIN_FIT_POINTS {
        return Err(invalid(format!(
            "rate fit needs at least {MIN_FIT_POINTS} points in window {window:?}, found {}",
            points.len()
        )));
    }
    let (slope, intercept, r_squared) = least_squares(&points);
    Ok(RateFit {
        slope,
        intercept,
        window,
        r_squared,
        points: points.len(),
    })
}

fn least_squares(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    // a perfectly flat sequence is fitted exactly
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r_squared)
}

/// Which reformulation identity a trajectory is checked against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant")]
pub enum Reformulation {
    /// `pₜ = t(wₜ − wₜ₋₁)`, step `α/√t`.
    TimeVarying,
    /// `pₜ = β/(1−β)(wₜ − wₜ₋₁)`, step `α/((1−β)√t)`.
    ConstantBeta { beta: f64 },
    /// As `TimeVarying`, with the direction preconditioned by `V̂ₜ⁻¹`.
    Adaptive,
    /// As `ConstantBeta`, with the direction preconditioned by `V̂ₜ⁻¹`.
    AdaptiveConstantBeta { beta: f64 },
}

impl Reformulation {
    fn is_adaptive(self) -> bool {
        matches!(self, Reformulation::Adaptive | Reformulation::AdaptiveConstantBeta { .. })
    }

    /// Momentum multiplier `κₜ` in `pₜ = κₜ(wₜ − wₜ₋₁)`.
    fn p_scale(self, t: usize) -> f64 {
        match self {
            Reformulation::TimeVarying | Reformulation::Adaptive => t as f64,
            Reformulation::ConstantBeta { beta } | Reformulation::AdaptiveConstantBeta { beta } => {
                beta / (1.0 - beta)
            }
        }
    }

    fn step(self, alpha: f64, t: usize) -> f64 {
        let base = alpha / (t as f64).sqrt();
        match self {
            Reformulation::TimeVarying | Reformulation::Adaptive => base,
            Reformulation::ConstantBeta { beta } | Reformulation::AdaptiveConstantBeta { beta } => {
                base / (1.0 - beta)
            }
        }
    }
}

/// Iterates `w₀ … w_T` with the subgradient (and, for adaptive runs, the
/// diagonal of `V̂ₜ`) used at each step. `w₋₁ = w₀`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub iterates: Vec<Vec<f64>>,
    pub gradients: Vec<Vec<f64>>,
    pub metrics: Option<Vec<Vec<f64>>>,
}

/// Residuals of one step of the identity `zₜ₊₁ = P_Q[zₜ − sₜ dₜ]`, `z = w + p`.
///
/// The projection identity follows from the variational inequality
/// `⟨zₜ₊₁ − yₜ, zₜ₊₁ − u⟩ ≤ 0 ∀u ∈ Q` only when `zₜ₊₁ ∈ Q`; the residual is
/// therefore taken where that holds (per coordinate on boxes, whole-vector
/// otherwise), while the inequality itself is checked at every step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepResidual {
    pub residual: f64,
    pub unconditional: f64,
    pub vi_violation: f64,
    pub checked: usize,
    pub skipped: usize,
}

const DOMAIN_TOL: f64 = 1e-12;

/// Residual of step `t` (1-based) mapping `w` to `w_next`.
#[allow(clippy::too_many_arguments)]
pub fn reformulation_step(
    set: &FeasibleSet,
    variant: Reformulation,
    alpha: f64,
    t: usize,
    w_prev: &[f64],
    w: &[f64],
    w_next: &[f64],
    gradient: &[f64],
    metric: Option<&[f64]>,
) -> Result<StepResidual> {
    let d = set.dim();
    for v in [w_prev, w, w_next, gradient] {
        check_dim(d, v.len())?;
    }
    if variant.is_adaptive() != metric.is_some() {
        return Err(invalid("adaptive identities need the V̂ log, others must not supply one"));
    }
    let (k_now, k_next) = (variant.p_scale(t), variant.p_scale(t + 1));
    let step = variant.step(alpha, t);

    let z: Vec<f64> = (0..d).map(|i| w[i] + k_now * (w[i] - w_prev[i])).collect();
    let z_next: Vec<f64> = (0..d).map(|i| w_next[i] + k_next * (w_next[i] - w[i])).collect();
    let y: Vec<f64> = (0..d)
        .map(|i| {
            let dir = match metric {
                Some(h) => gradient[i] / h[i],
                None => gradient[i],
            };
            z[i] - step * dir
        })
        .collect();
    let mut rhs = y.clone();
    set.project_in_place(&mut rhs)?;

    let mut out = StepResidual::default();
    let whole_inside = !set.is_separable() && set.contains_dense(&z_next, DOMAIN_TOL);
    for i in 0..d {
        let err = (z_next[i] - rhs[i]).abs();
        out.unconditional = out.unconditional.max(err);
        let inside = match set.coordinate_bounds(i) {
            Some((l, u)) => z_next[i] >= l - DOMAIN_TOL && z_next[i] <= u + DOMAIN_TOL,
            None => whole_inside,
        };
        if inside {
            out.residual = out.residual.max(err);
            out.checked += 1;
        } else {
            out.skipped += 1;
        }
    }

    // max_{u ∈ Q} ⟨r, z_next − u⟩ with r = z_next − y
    let r: Vec<f64> = z_next.iter().zip(&y).map(|(a, b)| a - b).collect();
    let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
    let r_dot_z: f64 = r.iter().zip(&z_next).map(|(a, b)| a * b).sum();
    out.vi_violation = match set.support(&neg_r)? {
        Some(s) => r_dot_z + s,
        None => r.iter().fold(0.0f64, |m, v| m.max(v.abs())),
    };
    Ok(out)
}

/// Aggregate of [`reformulation_step`] over a trajectory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReformulationReport {
    pub steps: usize,
    /// Max ∞-norm residual over the checked domain.
    pub max_residual: f64,
    /// Max ∞-norm residual over every coordinate, including those where the
    /// identity's hypothesis fails.
    pub max_unconditional_residual: f64,
    pub max_vi_violation: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl ReformulationReport {
    pub fn absorb(&mut self, s: &StepResidual) {
        self.steps += 1;
        self.max_residual = self.max_residual.max(s.residual);
        self.max_unconditional_residual = self.max_unconditional_residual.max(s.unconditional);
        self.max_vi_violation = self.max_vi_violation.max(s.vi_violation);
        self.checked += s.checked;
        self.skipped += s.skipped;
    }
}

/// Recomputes `z` from the iterates and checks the projected reformulated
/// step at every iteration.
pub fn check_reformulation(
    trajectory: &Trajectory,
    variant: Reformulation,
    alpha: f64,
    set: &FeasibleSet,
) -> Result<ReformulationReport> {
    let Trajectory {
        iterates,
        gradients,
        metrics,
    } = trajectory;
    if iterates.len() != gradients.len() + 1 {
        return Err(invalid(format!(
            "misaligned logs: {} iterates for {} gradients",
            iterates.len(),
            gradients.len()
        )));
    }
    if let Some(m) = metrics {
        if m.len() != gradients.len() {
            return Err(invalid(format!(
                "misaligned logs: {} metrics for {} gradients",
                m.len(),
                gradients.len()
            )));
        }
    }
    let mut report = ReformulationReport::default();
    for k in 0..gradients.len() {
        let prev = if k == 0 { &iterates[0] } else { &iterates[k - 1] };
        let s = reformulation_step(
            set,
            variant,
            alpha,
            k + 1,
            prev,
            &iterates[k],
            &iterates[k + 1],
            &gradients[k],
            metrics.as_ref().map(|m| m[k].as_slice()),
        )?;
        report.absorb(&s);
    }
    Ok(report)
}

/// Running check of
/// `Σᵢ Σ_{k≤t} g²ₖᵢ / (√(k vₖᵢ) + δ) ≤ Σᵢ 2(2−γ)/γ · (√(t vₜᵢ) + δ)`.
#[derive(Clone, Debug)]
pub struct Lemma3Monitor {
    gamma: f64,
    delta: f64,
    t: usize,
    lhs: f64,
    min_slack: f64,
}

impl Lemma3Monitor {
    pub fn new(gamma: f64, delta: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(invalid(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(invalid(format!("delta must be non-negative, got {delta}")));
        }
        Ok(Self {
            gamma,
            delta,
            t: 0,
            lhs: 0.0,
            min_slack: f64::INFINITY,
        })
    }

    /// Adds step `t+1` and returns its slack (RHS − LHS).
    pub fn push(&mut self, gradient: &[f64], v: &[f64]) -> Result<f64> {
        check_dim(gradient.len(), v.len())?;
        self.t += 1;
        let k = self.t as f64;
        for (g, vi) in gradient.iter().zip(v) {
            if *g != 0.0 {
                self.lhs += g * g / ((k * vi).sqrt() + self.delta);
            }
        }
        let c = 2.0 * (2.0 - self.gamma) / self.gamma;
        let rhs: f64 = v.iter().map(|vi| c * ((k * vi).sqrt() + self.delta)).sum();
        let slack = rhs - self.lhs;
        self.min_slack = self.min_slack.min(slack);
        Ok(slack)
    }

    pub fn min_slack(&self) -> f64 {
        self.min_slack
    }
}

/// Minimum EMA bound slack over aligned gradient and `V` logs.
pub fn check_lemma3(grad_log: &[Vec<f64>], v_log: &[Vec<f64>], gamma: f64, delta: f64) -> Result<f64> {
    if grad_log.is_empty() {
        return Err(invalid("EMA bound check needs a non-empty log"));
    }
    if grad_log.len() != v_log.len() {
        return Err(invalid("gradient and V logs are misaligned"));
    }
    let mut monitor = Lemma3Monitor::new(gamma, delta)?;
    for (g, v) in grad_log.iter().zip(v_log) {
        monitor.push(g, v)?;
    }
    Ok(monitor.min_slack())
}

/// Smallest per-coordinate increment of `√k · v̂ₖ` over a `V̂` log; the
/// sequence is non-decreasing when `β₂ₖ ≥ 1 − 1/k`. Returns `+∞` for logs
/// shorter than two steps.
pub fn check_ema_monotone(v_hat_log: &[Vec<f64>]) -> f64 {
    let mut worst = f64::INFINITY;
    for k in 1..v_hat_log.len() {
        let (now, before) = (((k + 1) as f64).sqrt(), (k as f64).sqrt());
        for (a, b) in v_hat_log[k].iter().zip(&v_hat_log[k - 1]) {
            worst = worst.min(now * a - before * b);
        }
    }
    worst
}

/// Settings for [`estimate_fstar_with`].
#[derive(Clone, Debug)]
pub struct FStarOptions {
    /// Step scales, multiplied by `diameter / M` when both are known.
    pub alpha_grid: Vec<f64>,
    pub mode: GradientMode,
    pub seed: u64,
}

impl Default for FStarOptions {
    fn default() -> Self {
        Self {
            alpha_grid: vec![0.1, 1.0],
            mode: GradientMode::Exact,
            seed: 0,
        }
    }
}

/// Smallest objective seen over adaptive HB and PSG (last and averaged
/// iterates) runs of `budget` steps each. An upper bound on `f*`.
pub fn estimate_fstar(oracle: &dyn ProblemOracle, budget: usize) -> Result<f64> {
    estimate_fstar_with(oracle, budget, &FStarOptions::default())
}

pub fn estimate_fstar_with(oracle: &dyn ProblemOracle, budget: usize, opts: &FStarOptions) -> Result<f64> {
    if budget == 0 {
        return Err(invalid("f* budget must be positive"));
    }
    let scale = match (oracle.feasible_set().diameter(), oracle.subgradient_bound()) {
        (Some(d), Some(m)) if m > 0.0 => d / m,
        _ => 1.0,
    };
    let mut best = f64::INFINITY;
    for &a in &opts.alpha_grid {
        let alpha = a * scale;
        let specs = [
            RunSpec::new(OptimizerKind::AdaHbTimeVarying, Schedule::time_varying(alpha)?, budget)
                .with_ema(EmaConfig::default()),
            RunSpec::new(OptimizerKind::Psg, Schedule::constant_beta(alpha, 0.0)?, budget),
        ];
        for spec in specs {
            let out = run(oracle, &spec.with_mode(opts.mode).with_seed(opts.seed), &mut ())?;
            best = best.min(out.best_value);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(gap: impl Fn(f64) -> f64, range: std::ops::RangeInclusive<usize>) -> Vec<TraceRecord> {
        range
            .map(|t| TraceRecord {
                t,
                f_individual: gap(t as f64),
                f_averaged: gap(t as f64),
                gap_individual: Some(gap(t as f64)),
                gap_averaged: Some(gap(t as f64)),
                alpha_t: 1.0,
                beta1_t: 0.0,
                beta2_t: None,
                identity_residual: None,
                lemma3_slack: None,
            })
            .collect()
    }

    #[test]
    fn power_laws_recovered() {
        for p in [-1.0, -0.5, 0.0] {
            let trace = synthetic(|t| 3.0 * t.powf(p), 1..=500);
            let fit = fit_rate(&trace, Quantity::Individual, (1, 500)).unwrap();
            assert!((fit.slope - p).abs() <= 1e-6, "p={p} slope={}", fit.slope);
            if p != 0.0 {
                assert!(fit.r_squared > 0.999_999);
            }
        }
        let flat = synthetic(|_| 0.25, 1..=100);
        let fit = fit_rate(&flat, Quantity::Averaged, (1, 100)).unwrap();
        assert!(fit.slope.abs() <= 1e-9);
    }

    #[test]
    fn log_factor_flattens_slope() {
        let trace = synthetic(|t| t.ln() / t.sqrt(), 100..=10_000);
        let fit = fit_rate(&trace, Quantity::Individual, (100, 10_000)).unwrap();
        assert!(fit.slope > -0.5, "{}", fit.slope);
    }

    #[test]
    fn fit_rejects_nonpositive_gap_and_small_windows() {
        let trace = synthetic(|t| 1.0 - t / 50.0, 1..=100);
        assert!(fit_rate(&trace, Quantity::Individual, (1, 100)).is_err());
        let trace = synthetic(|t| 1.0 / t, 1..=100);
        assert!(fit_rate(&trace, Quantity::Individual, (1, 10)).is_err());
    }

    #[test]
    fn default_window_drops_tail() {
        assert_eq!(default_window(100, 10_000), (100, 9_500));
    }

    #[test]
    fn lemma3_hand_example() {
        // γ = 1 gives β₂₁ = 0, so v₁ = g₁² = 1
        let slack = check_lemma3(&[vec![1.0]], &[vec![1.0]], 1.0, 0.0).unwrap();
        assert_eq!(slack, 1.0);
    }

    #[test]
    fn lemma3_zero_gradients() {
        let g = vec![vec![0.0, 0.0]; 5];
        let v = vec![vec![0.0, 0.0]; 5];
        let slack = check_lemma3(&g, &v, 0.5, 1e-3).unwrap();
        assert!((slack - 2.0 * 3.0 * 1e-3 * 2.0).abs() < 1e-15);
        assert!(check_lemma3(&[], &[], 0.5, 1e-3).is_err());
        assert!(check_lemma3(&g, &v[..2], 0.5, 1e-3).is_err());
    }

    #[test]
    fn ema_monotone_detects_drop() {
        assert!(check_ema_monotone(&[vec![1.0], vec![1.0]]) > 0.0);
        assert!(check_ema_monotone(&[vec![1.0], vec![0.5]]) < 0.0);
        assert_eq!(check_ema_monotone(&[vec![1.0]]), f64::INFINITY);
    }

    #[test]
    fn single_step_identity_is_exact() {
        let set = FeasibleSet::cube(2, -1.0, 1.0).unwrap();
        let w0 = vec![0.5, -0.2];
        let g = vec![1.0, -2.0];
        // time-varying step 1: α₁ = α/3, β₁ = 1/3, w₋₁ = w₀
        let alpha = 0.3;
        let mut w1: Vec<f64> = w0.iter().zip(&g).map(|(w, g)| w - alpha / 3.0 * g).collect();
        set.project_in_place(&mut w1).unwrap();
        let traj = Trajectory {
            iterates: vec![w0, w1],
            gradients: vec![g],
            metrics: None,
        };
        let rep = check_reformulation(&traj, Reformulation::TimeVarying, alpha, &set).unwrap();
        assert!(rep.max_residual <= 1e-12);
        assert!(rep.max_vi_violation <= 1e-12);
    }

    #[test]
    fn fstar_of_hard_function_is_nonpositive() {
        let p = crate::problems::HardFunctionProblem::new(50, 2.0).unwrap();
        let a = estimate_fstar(&p, 200).unwrap();
        assert!(a <= 0.0);
        assert_eq!(a.to_bits(), estimate_fstar(&p, 200).unwrap().to_bits());
    }

    #[test]
    fn misaligned_logs_rejected() {
        let set = FeasibleSet::cube(1, -1.0, 1.0).unwrap();
        let traj = Trajectory {
            iterates: vec![vec![0.0]],
            gradients: vec![vec![1.0]],
            metrics: None,
        };
        assert!(check_reformulation(&traj, Reformulation::TimeVarying, 1.0, &set).is_err());
        let traj = Trajectory {
            iterates: vec![vec![0.0], vec![0.0]],
            gradients: vec![vec![1.0]],
            metrics: None,
        };
        assert!(check_reformulation(&traj, Reformulation::Adaptive, 1.0, &set).is_err());
    }
}
