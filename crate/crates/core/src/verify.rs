//! Seeded property suites over random instances. Each returns one
//! [`CheckResult`] per invariant.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::dataio::CheckResult;
use crate::diagnostics::{fit_rate, Quantity, ReformulationReport, TraceRecord};
use crate::error::{invalid, Error, Result};
use crate::optimizers::{run, EmaConfig, OptimizerKind, RunSpec, Schedule};
use crate::problems::MaxLinearProblem;
use crate::projections::FeasibleSet;
use crate::vecmath::Vector;
use crate::{seeded_rng, SeededRng};

pub const IDENTITY_TOL: f64 = 1e-9;
pub const PROJECTION_TOL: f64 = 1e-8;
pub const VI_TOL: f64 = 1e-10;
pub const LEMMA3_TOL: f64 = 1e-9;
pub const EMA_TOL: f64 = 1e-12;
pub const SLOPE_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Projections,
    Identities,
    Ema,
    Rates,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 5] = ["projections", "identities", "ema", "rates", "all"];
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "projections" => Suite::Projections,
            "identities" => Suite::Identities,
            "ema" => Suite::Ema,
            "rates" => Suite::Rates,
            "all" => Suite::All,
            _ => return Err(invalid(format!("unknown suite `{s}`"))),
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = *self as usize;
        f.write_str(Self::NAMES[i])
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckResult>> {
    match suite {
        Suite::Projections => projection_suite(seed, 500, 1000),
        Suite::Identities => identity_suite(seed, 50, 1000),
        Suite::Ema => ema_suite(seed, 50, 1000),
        Suite::Rates => rate_suite(),
        Suite::All => {
            let mut all = projection_suite(seed, 500, 1000)?;
            all.extend(identity_suite(seed, 50, 1000)?);
            all.extend(ema_suite(seed, 50, 1000)?);
            all.extend(rate_suite()?);
            Ok(all)
        }
    }
}

fn upper_check(name: &str, value: f64, threshold: f64, detail: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed: value <= threshold,
        value,
        threshold,
        detail,
    }
}

fn lower_check(name: &str, value: f64, threshold: f64, detail: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed: value >= threshold,
        value,
        threshold,
        detail,
    }
}

/// Sort-based vs brute-force projection on `instances` random ℓ₁/ℓ₂ balls of
/// dimension ≤ 6, and the variational inequality at `vi_samples` feasible
/// points each.
pub fn projection_suite(seed: u64, instances: usize, vi_samples: usize) -> Result<Vec<CheckResult>> {
    let mut rng = seeded_rng(seed);
    let (mut max_diff, mut min_slack) = (0.0f64, f64::INFINITY);
    for k in 0..instances {
        let d = rng.gen_range(1..=6);
        let radius = rng.gen_range(0.1..3.0);
        let set = if k % 2 == 0 {
            FeasibleSet::l1_ball(d, radius)?
        } else {
            FeasibleSet::l2_ball(d, radius)?
        };
        let spread = rng.gen_range(0.1..4.0) * radius;
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-spread..=spread)).collect();
        let xv = Vector::dense(x.clone())?;
        let fast = set.project(&xv)?.into_dense();
        let slow = set.project_bruteforce(&xv)?.into_dense();
        for (a, b) in fast.iter().zip(&slow) {
            max_diff = max_diff.max((a - b).abs());
        }
        let r: Vec<f64> = x.iter().zip(&fast).map(|(a, b)| a - b).collect();
        for _ in 0..vi_samples {
            let u = set.sample_point(&mut rng, 1.0);
            // ⟨x − P(x), u − P(x)⟩ ≤ 0, reported as a slack ≥ 0
            let slack: f64 = -r.iter().zip(u.iter().zip(&fast)).map(|(ri, (ui, pi))| ri * (ui - pi)).sum::<f64>();
            min_slack = min_slack.min(slack);
        }
    }
    Ok(vec![
        upper_check(
            "projection_oracle",
            max_diff,
            PROJECTION_TOL,
            format!("{instances} instances, max inf-norm gap to brute force"),
        ),
        lower_check(
            "projection_vi",
            min_slack,
            -VI_TOL,
            format!("{} sampled feasible points", instances * vi_samples),
        ),
    ])
}

/// Random max-of-linear objective (`2d+1` pieces) over a random box
/// containing the origin, `d ≤ 20`.
pub fn random_box_problem(rng: &mut SeededRng) -> Result<MaxLinearProblem> {
    let d = rng.gen_range(1..=20);
    let lower: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..-0.1)).collect();
    let upper: Vec<f64> = (0..d).map(|_| rng.gen_range(0.1..1.0)).collect();
    MaxLinearProblem::random(FeasibleSet::boxed(lower, upper)?, 2 * d + 1, rng)
}

/// Aggregated outcome of one optimizer over a batch of random box problems.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdentityStats {
    pub report: ReformulationReport,
    pub lemma3_min_slack: Option<f64>,
    pub ema_min_increment: Option<f64>,
}

/// Runs `kind` on `problems` random box instances with the reformulation
/// check enabled.
pub fn identity_batch(
    kind: OptimizerKind,
    schedule: Schedule,
    ema: EmaConfig,
    seed: u64,
    problems: usize,
    steps: usize,
) -> Result<IdentityStats> {
    let mut rng = seeded_rng(seed);
    let mut stats = IdentityStats::default();
    let mut agg = ReformulationReport::default();
    for _ in 0..problems {
        let p = random_box_problem(&mut rng)?;
        let spec = RunSpec::new(kind, schedule, steps).with_ema(ema).with_identity_check();
        let out = run(&p, &spec, &mut ())?;
        let r = out.identity.expect("identity check was enabled");
        agg.steps += r.steps;
        agg.max_residual = agg.max_residual.max(r.max_residual);
        agg.max_unconditional_residual = agg.max_unconditional_residual.max(r.max_unconditional_residual);
        agg.max_vi_violation = agg.max_vi_violation.max(r.max_vi_violation);
        agg.checked += r.checked;
        agg.skipped += r.skipped;
        if let Some(s) = out.lemma3_min_slack {
            stats.lemma3_min_slack = Some(stats.lemma3_min_slack.map_or(s, |m: f64| m.min(s)));
        }
        if let Some(e) = out.ema_min_increment {
            stats.ema_min_increment = Some(stats.ema_min_increment.map_or(e, |m: f64| m.min(e)));
        }
    }
    stats.report = agg;
    Ok(stats)
}

/// Check built from an [`IdentityStats`]: passes when the residual over the
/// checked domain and the variational-inequality violation are both within
/// tolerance.
pub fn identity_check(name: &str, stats: &IdentityStats) -> CheckResult {
    let r = &stats.report;
    CheckResult {
        name: name.into(),
        passed: r.max_residual <= IDENTITY_TOL && r.max_vi_violation <= IDENTITY_TOL && r.checked > 0,
        value: r.max_residual,
        threshold: IDENTITY_TOL,
        detail: format!(
            "vi violation {:e}; {} coordinate-steps checked, {} at the step a bound is reached (unconditional residual {:e})",
            r.max_vi_violation, r.checked, r.skipped, r.max_unconditional_residual
        ),
    }
}

/// The identity cases: time-varying HB, constant-β HB for β ∈ {0, 0.5, 0.9},
/// adaptive HB for γ ∈ {0.1, 0.5, 1} and constant-β adaptive HB.
pub fn identity_cases() -> Result<Vec<(String, OptimizerKind, Schedule, EmaConfig)>> {
    let ema = EmaConfig::default();
    let mut cases = vec![(
        "identity_hb_tv".to_string(),
        OptimizerKind::HbTimeVarying,
        Schedule::time_varying(1.0)?,
        ema,
    )];
    for beta in [0.0, 0.5, 0.9] {
        cases.push((
            format!("identity_hb_const_beta{beta}"),
            OptimizerKind::HbConstantBeta,
            Schedule::constant_beta(0.3, beta)?,
            ema,
        ));
    }
    for gamma in [0.1, 0.5, 1.0] {
        cases.push((
            format!("identity_adahb_tv_gamma{gamma}"),
            OptimizerKind::AdaHbTimeVarying,
            Schedule::time_varying(1.0)?,
            EmaConfig::new(gamma, 1e-8)?,
        ));
    }
    cases.push((
        "identity_adahb_const_beta0.9".to_string(),
        OptimizerKind::AdaHbConstantBeta,
        Schedule::constant_beta(0.3, 0.9)?,
        ema,
    ));
    Ok(cases)
}

pub fn identity_suite(seed: u64, problems: usize, steps: usize) -> Result<Vec<CheckResult>> {
    identity_cases()?
        .into_iter()
        .map(|(name, kind, schedule, ema)| {
            let stats = identity_batch(kind, schedule, ema, seed, problems, steps)?;
            Ok(identity_check(&name, &stats))
        })
        .collect()
}

/// EMA bound slack and `√k·v̂ₖ` monotonicity over adaptive runs on random box
/// problems, for γ ∈ {0.1, 0.5, 1}.
pub fn ema_suite(seed: u64, problems: usize, steps: usize) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for gamma in [0.1, 0.5, 1.0] {
        let ema = EmaConfig::new(gamma, 1e-8)?;
        let mut slack = f64::INFINITY;
        let mut incr = f64::INFINITY;
        for (kind, schedule) in [
            (OptimizerKind::AdaHbTimeVarying, Schedule::time_varying(1.0)?),
            (OptimizerKind::AdaHbConstantBeta, Schedule::constant_beta(0.3, 0.9)?),
        ] {
            let s = identity_batch(kind, schedule, ema, seed, problems, steps)?;
            slack = slack.min(s.lemma3_min_slack.unwrap_or(f64::INFINITY));
            incr = incr.min(s.ema_min_increment.unwrap_or(f64::INFINITY));
        }
        out.push(lower_check(
            &format!("lemma3_gamma{gamma}"),
            slack,
            -LEMMA3_TOL,
            format!("min RHS - LHS over {problems} problems x 2 variants"),
        ));
        out.push(lower_check(
            &format!("ema_monotone_gamma{gamma}"),
            incr,
            -EMA_TOL,
            "min per-coordinate increment of sqrt(k) * vhat_k".into(),
        ));
    }
    Ok(out)
}

fn synthetic_trace(gap: impl Fn(f64) -> f64, lo: usize, hi: usize) -> Vec<TraceRecord> {
    (lo..=hi)
        .map(|t| {
            let g = gap(t as f64);
            TraceRecord {
                t,
                f_individual: g,
                f_averaged: g,
                gap_individual: Some(g),
                gap_averaged: Some(g),
                alpha_t: 0.0,
                beta1_t: 0.0,
                beta2_t: None,
                identity_residual: None,
                lemma3_slack: None,
            }
        })
        .collect()
}

/// Slope recovery on exact power laws and the log-factor case.
pub fn rate_suite() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for p in [-1.0, -0.5, 0.0] {
        let trace = synthetic_trace(|t| 2.0 * t.powf(p), 1, 10_000);
        let fit = fit_rate(&trace, Quantity::Individual, (1, 10_000))?;
        out.push(upper_check(
            &format!("rate_power_law_{p}"),
            (fit.slope - p).abs(),
            SLOPE_TOL,
            format!("fitted slope {}", fit.slope),
        ));
    }
    let trace = synthetic_trace(|t| t.ln() / t.sqrt(), 100, 10_000);
    let fit = fit_rate(&trace, Quantity::Individual, (100, 10_000))?;
    out.push(CheckResult {
        name: "rate_log_factor".into(),
        passed: fit.slope > -0.5,
        value: fit.slope,
        threshold: -0.5,
        detail: "log(t)/sqrt(t) must fit flatter than -0.5".into(),
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for name in Suite::NAMES {
            assert_eq!(name.parse::<Suite>().unwrap().to_string(), name);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn small_suites_pass() {
        for c in projection_suite(1, 40, 50).unwrap() {
            assert!(c.passed, "{c:?}");
        }
        for c in identity_suite(2, 3, 200).unwrap() {
            assert!(c.passed, "{c:?}");
        }
        for c in ema_suite(3, 3, 200).unwrap() {
            assert!(c.passed, "{c:?}");
        }
        for c in rate_suite().unwrap() {
            assert!(c.passed, "{c:?}");
        }
    }
}
