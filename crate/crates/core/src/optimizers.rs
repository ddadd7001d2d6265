//! Projected subgradient, heavy-ball and adaptive heavy-ball iterations.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::TraceCsvWriter;
use crate::diagnostics::{reformulation_step, Reformulation, ReformulationReport, TraceRecord, Trajectory};
use crate::error::{check_dim, invalid, Error, Result};
use crate::problems::ProblemOracle;
use crate::projections::FeasibleSet;
use crate::vecmath::Vector;
use crate::{seeded_rng, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "psg")]
    Psg,
    #[serde(rename = "hb_tv")]
    HbTimeVarying,
    #[serde(rename = "hb_const")]
    HbConstantBeta,
    #[serde(rename = "adahb_tv")]
    AdaHbTimeVarying,
    #[serde(rename = "adahb_const")]
    AdaHbConstantBeta,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 5] = [
        OptimizerKind::Psg,
        OptimizerKind::HbTimeVarying,
        OptimizerKind::HbConstantBeta,
        OptimizerKind::AdaHbTimeVarying,
        OptimizerKind::AdaHbConstantBeta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Psg => "psg",
            OptimizerKind::HbTimeVarying => "hb_tv",
            OptimizerKind::HbConstantBeta => "hb_const",
            OptimizerKind::AdaHbTimeVarying => "adahb_tv",
            OptimizerKind::AdaHbConstantBeta => "adahb_const",
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, OptimizerKind::AdaHbTimeVarying | OptimizerKind::AdaHbConstantBeta)
    }

    pub fn is_time_varying(self) -> bool {
        matches!(self, OptimizerKind::HbTimeVarying | OptimizerKind::AdaHbTimeVarying)
    }

    /// Identity satisfied by this method's iterates under `schedule`.
    pub fn reformulation(self, schedule: &Schedule) -> Reformulation {
        let beta = schedule.beta1(1);
        match self {
            OptimizerKind::Psg => Reformulation::ConstantBeta { beta: 0.0 },
            OptimizerKind::HbTimeVarying => Reformulation::TimeVarying,
            OptimizerKind::HbConstantBeta => Reformulation::ConstantBeta { beta },
            OptimizerKind::AdaHbTimeVarying => Reformulation::Adaptive,
            OptimizerKind::AdaHbConstantBeta => Reformulation::AdaptiveConstantBeta { beta },
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown optimizer `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Momentum {
    /// `β₁ₜ = t/(t+2)`, `αₜ = α/((t+2)√t)`.
    TimeVarying,
    /// Fixed `β ∈ [0, 1)`, `αₜ = α/√t`.
    Constant(f64),
}

/// Step-size and momentum schedule.
///
/// With `horizon = Some(T)` every `√t` becomes `√T`. With `epoch_size = n > 1`
/// the schedule index advances once every `n` steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub alpha: f64,
    pub momentum: Momentum,
    pub horizon: Option<usize>,
    pub epoch_size: usize,
}

impl Schedule {
    pub fn time_varying(alpha: f64) -> Result<Self> {
        Self::validated(alpha, Momentum::TimeVarying)
    }

    pub fn constant_beta(alpha: f64, beta: f64) -> Result<Self> {
        Self::validated(alpha, Momentum::Constant(beta))
    }

    fn validated(alpha: f64, momentum: Momentum) -> Result<Self> {
        let s = Self {
            alpha,
            momentum,
            horizon: None,
            epoch_size: 1,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid(format!("alpha must be positive and finite, got {}", self.alpha)));
        }
        if let Momentum::Constant(b) = self.momentum {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(format!("beta must lie in [0, 1), got {b}")));
            }
        }
        if self.horizon == Some(0) {
            return Err(invalid("horizon must be positive"));
        }
        if self.epoch_size == 0 {
            return Err(invalid("epoch size must be positive"));
        }
        Ok(())
    }

    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        self.horizon = Some(horizon);
        self.validate()?;
        Ok(self)
    }

    pub fn with_epoch_size(mut self, epoch_size: usize) -> Result<Self> {
        self.epoch_size = epoch_size;
        self.validate()?;
        Ok(self)
    }

    /// True when the schedule is the plain per-step one the identities assume.
    pub fn is_per_step(&self) -> bool {
        self.horizon.is_none() && self.epoch_size == 1
    }

    fn index(&self, t: usize) -> f64 {
        ((t - 1) / self.epoch_size + 1) as f64
    }

    fn root(&self, t: usize) -> f64 {
        match self.horizon {
            Some(h) => (h as f64).sqrt(),
            None => self.index(t).sqrt(),
        }
    }

    /// Momentum coefficient for step `t ≥ 1`.
    pub fn beta1(&self, t: usize) -> f64 {
        match self.momentum {
            Momentum::TimeVarying => {
                let s = self.index(t);
                s / (s + 2.0)
            }
            Momentum::Constant(b) => b,
        }
    }

    /// `α/√t`, the step used by PSG.
    pub fn base_step(&self, t: usize) -> f64 {
        self.alpha / self.root(t)
    }

    /// Coefficient multiplying the (preconditioned) subgradient at step `t`.
    pub fn step_size(&self, t: usize) -> f64 {
        match self.momentum {
            Momentum::TimeVarying => self.base_step(t) / (self.index(t) + 2.0),
            Momentum::Constant(_) => self.base_step(t),
        }
    }
}

/// Second-moment EMA with `β₂ₜ = 1 − γ/t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmaConfig {
    pub gamma: f64,
    pub delta: f64,
}

impl Default for EmaConfig {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            delta: 1e-8,
        }
    }
}

impl EmaConfig {
    pub fn new(gamma: f64, delta: f64) -> Result<Self> {
        let c = Self { gamma, delta };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(invalid(format!("delta must be positive and finite, got {}", self.delta)));
        }
        Ok(())
    }

    /// `β₂ₜ`, kept inside `[1 − 1/t, 1 − γ/t]`.
    pub fn beta2(&self, t: usize) -> f64 {
        let t = t as f64;
        (1.0 - self.gamma / t).clamp(1.0 - 1.0 / t, 1.0 - self.gamma / t)
    }
}

/// Mutable iteration state. `t` is the index of the next step.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub t: usize,
    pub w: Vec<f64>,
    pub w_prev: Vec<f64>,
    /// EMA of squared subgradients; present for adaptive methods.
    pub v: Option<Vec<f64>>,
    pub avg: Vec<f64>,
    pub f_best: f64,
}

impl OptimizerState {
    /// Starts at `w0` with zero momentum (`w₋₁ = w₀`) and `V₀ = 0`.
    pub fn new(w0: Vec<f64>, set: &FeasibleSet, adaptive: bool) -> Result<Self> {
        check_dim(set.dim(), w0.len())?;
        if w0.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("initial point"));
        }
        if !set.contains_dense(&w0, 1e-10) {
            return Err(invalid("initial point is not feasible"));
        }
        let d = w0.len();
        Ok(Self {
            t: 1,
            w_prev: w0.clone(),
            avg: w0.clone(),
            v: adaptive.then(|| vec![0.0; d]),
            w: w0,
            f_best: f64::INFINITY,
        })
    }

    /// Steps taken so far.
    pub fn steps(&self) -> usize {
        self.t - 1
    }

    pub fn current(&self) -> Vector {
        Vector::dense(self.w.clone()).expect("iterates stay finite")
    }

    pub fn averaged(&self) -> Vector {
        Vector::dense(self.avg.clone()).expect("iterates stay finite")
    }

    pub fn observe(&mut self, f: f64) {
        self.f_best = self.f_best.min(f);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Exact,
    /// Minibatch estimate; a batch of 0 means the exact subgradient.
    Batch(usize),
}

/// Subgradient provider for the step functions.
pub struct GradientSource {
    mode: GradientMode,
    rng: SeededRng,
}

impl GradientSource {
    pub fn exact() -> Self {
        Self::new(GradientMode::Exact, 0)
    }

    pub fn new(mode: GradientMode, seed: u64) -> Self {
        Self {
            mode,
            rng: seeded_rng(seed),
        }
    }

    pub fn sample(&mut self, oracle: &dyn ProblemOracle, w: &Vector) -> Result<Vector> {
        match self.mode {
            GradientMode::Exact | GradientMode::Batch(0) => oracle.subgradient(w),
            GradientMode::Batch(n) => oracle.stochastic_subgradient(w, n, &mut self.rng),
        }
    }
}

/// What one step used, for telemetry and identity checks.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub gradient: Vec<f64>,
    /// Diagonal of `V̂ₜ` for adaptive steps.
    pub metric: Option<Vec<f64>>,
    pub alpha_t: f64,
    pub beta1_t: f64,
    pub beta2_t: Option<f64>,
}

fn gradient_at(state: &OptimizerState, oracle: &dyn ProblemOracle, source: &mut GradientSource) -> Result<Vec<f64>> {
    check_dim(oracle.dim(), state.w.len())?;
    let g = source.sample(oracle, &state.current())?;
    check_dim(state.w.len(), g.dim())?;
    let g = g.into_dense();
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("subgradient"));
    }
    Ok(g)
}

/// `w ← P[w − coef·H⁻¹g + β(w − w_prev)]`, then advances `t` and the average.
fn advance(
    state: &mut OptimizerState,
    set: &FeasibleSet,
    g: &[f64],
    coef: f64,
    beta: f64,
    metric: Option<&[f64]>,
) -> Result<()> {
    let mut next: Vec<f64> = (0..state.w.len())
        .map(|i| {
            let dir = metric.map_or(g[i], |h| g[i] / h[i]);
            state.w[i] - coef * dir + beta * (state.w[i] - state.w_prev[i])
        })
        .collect();
    set.project_in_place(&mut next)?;
    if next.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("iterate"));
    }
    state.w_prev = std::mem::replace(&mut state.w, next);
    let inv = 1.0 / state.t as f64;
    for (a, w) in state.avg.iter_mut().zip(&state.w) {
        *a += (w - *a) * inv;
    }
    state.t += 1;
    Ok(())
}

fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(invalid(msg))
    }
}

/// `w' = P[w − (α/√t) g]`. Any momentum in `schedule` is ignored.
pub fn psg_step(
    state: &mut OptimizerState,
    oracle: &dyn ProblemOracle,
    schedule: &Schedule,
    source: &mut GradientSource,
) -> Result<StepOutcome> {
    let t = state.t;
    let g = gradient_at(state, oracle, source)?;
    let alpha_t = schedule.base_step(t);
    advance(state, oracle.feasible_set(), &g, alpha_t, 0.0, None)?;
    Ok(StepOutcome {
        gradient: g,
        metric: None,
        alpha_t,
        beta1_t: 0.0,
        beta2_t: None,
    })
}

fn hb_step(
    state: &mut OptimizerState,
    oracle: &dyn ProblemOracle,
    schedule: &Schedule,
    source: &mut GradientSource,
) -> Result<StepOutcome> {
    let t = state.t;
    let g = gradient_at(state, oracle, source)?;
    let (alpha_t, beta1_t) = (schedule.step_size(t), schedule.beta1(t));
    advance(state, oracle.feasible_set(), &g, alpha_t, beta1_t, None)?;
    Ok(StepOutcome {
        gradient: g,
        metric: None,
        alpha_t,
        beta1_t,
        beta2_t: None,
    })
}

/// `w' = P[w − αₜ g + βₜ(w − w_prev)]` with `βₜ = t/(t+2)`, `αₜ = α/((t+2)√t)`.
pub fn hb_step_timevarying(
    state: &mut OptimizerState,
    oracle: &dyn ProblemOracle,
    schedule: &Schedule,
    source: &mut GradientSource,
) -> Result<StepOutcome> {
    require(schedule.momentum == Momentum::TimeVarying, "hb_tv needs a time-varying schedule")?;
    hb_step(state, oracle, schedule, source)
}

/// `w' = P[w − (α/√t) g + β(w − w_prev)]`.
pub fn hb_step_constbeta(
    state: &mut OptimizerState,
    oracle: &dyn ProblemOracle,
    schedule: &Schedule,
    source: &mut GradientSource,
) -> Result<StepOutcome> {
    require(
        matches!(schedule.momentum, Momentum::Constant(_)),
        "hb_const needs a constant-beta schedule",
    )?;
    hb_step(state, oracle, schedule, source)
}

fn adahb_step(
    state: &mut OptimizerState,
    oracle: &dyn ProblemOracle,
    schedule: &Schedule,
    ema: &EmaConfig,
    source: &mut GradientSource,
) -> Result<StepOutcome> {
    ema.validate()?;
    let t = state.t;
    let g = gradient_at(state, oracle, source)?;
    let beta2 = ema.beta2(t);
    let shift = ema.delta / (t as f64).sqrt();
    let v = state
        .v
        .as_mut()
        .ok_or_else(|| invalid("state was not created for an adaptive method"))?;
    let mut metric = Vec::with_capacity(v.len());
    for (vi, gi) in v.iter_mut().zip(&g) {
        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
        metric.push(vi.sqrt() + shift);
    }
    if metric.iter().any(|h| h.is_nan() || *h <= 0.0) {
        return Err(invalid("preconditioner lost positive definiteness"));
    }
    let (alpha_t, beta1_t) = (schedule.step_size(t), schedule.beta1(t));
    advance(state, oracle.feasible_set(), &g, alpha_t, beta1_t, Some(&metric))?;
    Ok(StepOutcome {
        gradient: g,
        metric: Some(metric),
        alpha_t,
        beta1_t,
        beta2_t: Some(beta2),
    })
}

/// Adaptive HB with `β₁ₜ = t/(t+2)`:
/// `w' = P[w − α/((t+2)√t) V̂ₜ⁻¹ĝ + β₁ₜ(w − w_prev)]`, `V̂ₜ = √Vₜ + δ/√t`.
pub fn adahb_step_timevarying(
    state: &mut OptimizerState,
    oracle: &dyn ProblemOracle,
    schedule: &Schedule,
    ema: &EmaConfig,
    source: &mut GradientSource,
) -> Result<StepOutcome> {
    require(schedule.momentum == Momentum::TimeVarying, "adahb_tv needs a time-varying schedule")?;
    adahb_step(state, oracle, schedule, ema, source)
}

/// Adaptive HB with fixed `β`: `w' = P[w − (α/√t) V̂ₜ⁻¹ĝ + β(w − w_prev)]`.
pub fn adahb_step_constbeta(
    state: &mut OptimizerState,
    oracle: &dyn ProblemOracle,
    schedule: &Schedule,
    ema: &EmaConfig,
    source: &mut GradientSource,
) -> Result<StepOutcome> {
    require(
        matches!(schedule.momentum, Momentum::Constant(_)),
        "adahb_const needs a constant-beta schedule",
    )?;
    adahb_step(state, oracle, schedule, ema, source)
}

/// Dispatches one step of `kind`.
pub fn step(
    kind: OptimizerKind,
    state: &mut OptimizerState,
    oracle: &dyn ProblemOracle,
    schedule: &Schedule,
    ema: &EmaConfig,
    source: &mut GradientSource,
) -> Result<StepOutcome> {
    match kind {
        OptimizerKind::Psg => psg_step(state, oracle, schedule, source),
        OptimizerKind::HbTimeVarying => hb_step_timevarying(state, oracle, schedule, source),
        OptimizerKind::HbConstantBeta => hb_step_constbeta(state, oracle, schedule, source),
        OptimizerKind::AdaHbTimeVarying => adahb_step_timevarying(state, oracle, schedule, ema, source),
        OptimizerKind::AdaHbConstantBeta => adahb_step_constbeta(state, oracle, schedule, ema, source),
    }
}

/// Consumer of per-step trace records.
pub trait TraceSink {
    fn record(&mut self, r: &TraceRecord) -> Result<()>;

    /// Flushes buffered rows; called on success and on error.
    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

impl TraceSink for () {
    fn record(&mut self, _: &TraceRecord) -> Result<()> {
        Ok(())
    }
}

impl TraceSink for Vec<TraceRecord> {
    fn record(&mut self, r: &TraceRecord) -> Result<()> {
        self.push(r.clone());
        Ok(())
    }
}

impl<W: Write> TraceSink for TraceCsvWriter<W> {
    fn record(&mut self, r: &TraceRecord) -> Result<()> {
        self.write(r)
    }

    fn finish(&mut self) -> Result<()> {
        self.flush()
    }
}

impl<S: TraceSink + ?Sized> TraceSink for &mut S {
    fn record(&mut self, r: &TraceRecord) -> Result<()> {
        (**self).record(r)
    }

    fn finish(&mut self) -> Result<()> {
        (**self).finish()
    }
}

/// Configuration of a full run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub kind: OptimizerKind,
    pub schedule: Schedule,
    pub ema: EmaConfig,
    pub iterations: usize,
    pub mode: GradientMode,
    pub seed: u64,
    /// Start point; the projection of the origin when absent.
    pub w0: Option<Vec<f64>>,
    /// Reference optimum for the gap columns.
    pub f_star: Option<f64>,
    /// Evaluate the reformulation identity at every step.
    pub check_identity: bool,
    /// Keep iterates, subgradients and `V̂` in the output.
    pub record_trajectory: bool,
}

impl RunSpec {
    pub fn new(kind: OptimizerKind, schedule: Schedule, iterations: usize) -> Self {
        Self {
            kind,
            schedule,
            ema: EmaConfig::default(),
            iterations,
            mode: GradientMode::Exact,
            seed: 0,
            w0: None,
            f_star: None,
            check_identity: false,
            record_trajectory: false,
        }
    }

    pub fn with_ema(mut self, ema: EmaConfig) -> Self {
        self.ema = ema;
        self
    }

    pub fn with_mode(mut self, mode: GradientMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_start(mut self, w0: Vec<f64>) -> Self {
        self.w0 = Some(w0);
        self
    }

    pub fn with_f_star(mut self, f_star: f64) -> Self {
        self.f_star = Some(f_star);
        self
    }

    pub fn with_identity_check(mut self) -> Self {
        self.check_identity = true;
        self
    }

    pub fn with_trajectory(mut self) -> Self {
        self.record_trajectory = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("iterations must be at least 1"));
        }
        self.schedule.validate()?;
        if self.kind.is_adaptive() {
            self.ema.validate()?;
        }
        let tv = self.schedule.momentum == Momentum::TimeVarying;
        if self.kind.is_time_varying() != tv && self.kind != OptimizerKind::Psg {
            return Err(invalid(format!("{} does not accept this momentum schedule", self.kind)));
        }
        if self.check_identity && !self.schedule.is_per_step() {
            return Err(invalid("identity checks need a per-step schedule without horizon"));
        }
        Ok(())
    }
}

/// Result of [`run`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub final_w: Vec<f64>,
    pub averaged: Vec<f64>,
    pub final_f_individual: f64,
    pub final_f_averaged: f64,
    /// Smallest objective over the start point, the iterates and the averages.
    pub best_value: f64,
    pub identity: Option<ReformulationReport>,
    pub lemma3_min_slack: Option<f64>,
    /// Smallest per-coordinate increment of `√t · v̂ₜ`.
    pub ema_min_increment: Option<f64>,
    pub trajectory: Option<Trajectory>,
}

/// Runs `spec.iterations` steps, emitting one record per step into `sink`.
/// On error the sink is flushed before the error is returned.
pub fn run(oracle: &dyn ProblemOracle, spec: &RunSpec, sink: &mut dyn TraceSink) -> Result<RunOutput> {
    let result = run_inner(oracle, spec, sink);
    let flushed = sink.finish();
    let out = result?;
    flushed?;
    Ok(out)
}

fn run_inner(oracle: &dyn ProblemOracle, spec: &RunSpec, sink: &mut dyn TraceSink) -> Result<RunOutput> {
    spec.validate()?;
    let set = oracle.feasible_set();
    let w0 = match &spec.w0 {
        Some(w) => w.clone(),
        None => {
            let mut z = vec![0.0; oracle.dim()];
            set.project_in_place(&mut z)?;
            z
        }
    };
    let adaptive = spec.kind.is_adaptive();
    let mut state = OptimizerState::new(w0, set, adaptive)?;
    state.observe(oracle.value(&state.current())?);
    let mut source = GradientSource::new(spec.mode, spec.seed);
    let reformulation = spec.kind.reformulation(&spec.schedule);
    let mut identity = spec.check_identity.then(ReformulationReport::default);
    let mut lemma3 = if adaptive {
        Some(crate::diagnostics::Lemma3Monitor::new(spec.ema.gamma, spec.ema.delta)?)
    } else {
        None
    };
    let mut ema_min = adaptive.then_some(f64::INFINITY);
    let mut prev_scaled: Option<Vec<f64>> = None;
    let mut trajectory = spec.record_trajectory.then(|| Trajectory {
        iterates: vec![state.w.clone()],
        gradients: Vec::new(),
        metrics: adaptive.then(Vec::new),
    });

    let (mut f_ind, mut f_avg) = (f64::NAN, f64::NAN);
    for _ in 0..spec.iterations {
        let t = state.t;
        let before_prev = state.w_prev.clone();
        let before = state.w.clone();
        let out = step(spec.kind, &mut state, oracle, &spec.schedule, &spec.ema, &mut source)?;

        let residual = match identity.as_mut() {
            Some(report) => {
                let s = reformulation_step(
                    set,
                    reformulation,
                    spec.schedule.alpha,
                    t,
                    &before_prev,
                    &before,
                    &state.w,
                    &out.gradient,
                    out.metric.as_deref(),
                )?;
                report.absorb(&s);
                Some(s.residual)
            }
            None => None,
        };
        let slack = match (lemma3.as_mut(), state.v.as_ref()) {
            (Some(m), Some(v)) => Some(m.push(&out.gradient, v)?),
            _ => None,
        };
        if let (Some(min), Some(h)) = (ema_min.as_mut(), out.metric.as_ref()) {
            let root = (t as f64).sqrt();
            let scaled: Vec<f64> = h.iter().map(|x| root * x).collect();
            if let Some(prev) = &prev_scaled {
                for (a, b) in scaled.iter().zip(prev) {
                    *min = min.min(a - b);
                }
            }
            prev_scaled = Some(scaled);
        }

        f_ind = oracle.value(&state.current())?;
        f_avg = oracle.value(&state.averaged())?;
        if !f_ind.is_finite() || !f_avg.is_finite() {
            return Err(Error::NonFinite("objective value"));
        }
        state.observe(f_ind);
        state.observe(f_avg);

        sink.record(&TraceRecord {
            t,
            f_individual: f_ind,
            f_averaged: f_avg,
            gap_individual: spec.f_star.map(|f| f_ind - f),
            gap_averaged: spec.f_star.map(|f| f_avg - f),
            alpha_t: out.alpha_t,
            beta1_t: out.beta1_t,
            beta2_t: out.beta2_t,
            identity_residual: residual,
            lemma3_slack: slack,
        })?;

        if let Some(tr) = trajectory.as_mut() {
            tr.iterates.push(state.w.clone());
            tr.gradients.push(out.gradient);
            if let (Some(ms), Some(m)) = (tr.metrics.as_mut(), out.metric) {
                ms.push(m);
            }
        }
    }

    Ok(RunOutput {
        final_w: state.w.clone(),
        averaged: state.avg.clone(),
        final_f_individual: f_ind,
        final_f_averaged: f_avg,
        best_value: state.f_best,
        identity,
        lemma3_min_slack: lemma3.map(|m| m.min_slack()),
        ema_min_increment: ema_min,
        trajectory,
    })
}
