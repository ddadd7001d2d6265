//! Run configuration: JSON manifest plus command-line overrides.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use heavyball::dataio::load_libsvm;
use heavyball::{EmaConfig, GradientMode, HardFunctionProblem, HingeLossProblem, OptimizerKind, ProblemOracle, RunSpec, Schedule};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    Hinge {
        dataset: PathBuf,
        tau: f64,
    },
    Hard {
        #[serde(rename = "T")]
        horizon: usize,
        c: f64,
    },
}

impl ProblemConfig {
    pub fn label(&self) -> String {
        match self {
            ProblemConfig::Hinge { dataset, .. } => {
                let stem = dataset.file_stem().map(|s| s.to_string_lossy().into_owned());
                format!("hinge-{}", stem.unwrap_or_else(|| "data".into()))
            }
            ProblemConfig::Hard { horizon, c } => format!("hard-T{horizon}-c{c}"),
        }
    }

    pub fn build(&self) -> Result<Box<dyn ProblemOracle>, CliError> {
        Ok(match self {
            ProblemConfig::Hinge { dataset, tau } => {
                let data = load_libsvm(dataset).map_err(|e| CliError::Usage(format!("{}: {e}", dataset.display())))?;
                Box::new(HingeLossProblem::from_dataset(&data, *tau).map_err(CliError::usage)?)
            }
            ProblemConfig::Hard { horizon, c } => {
                Box::new(HardFunctionProblem::new(*horizon, *c).map_err(CliError::usage)?)
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Reformulation,
    Lemma3,
    Rate,
}

fn default_gamma() -> f64 {
    EmaConfig::default().gamma
}

fn default_delta() -> f64 {
    EmaConfig::default().delta
}

fn default_epoch() -> usize {
    1
}

fn default_fstar_budget() -> usize {
    10_000
}

/// Everything needed to reproduce one run; echoed into the summary JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub optimizer: OptimizerKind,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub iterations: usize,
    /// Minibatch size; 0 selects the exact subgradient.
    #[serde(default)]
    pub batch: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(default)]
    pub checks: Vec<CheckKind>,
    #[serde(default = "default_epoch")]
    pub schedule_epoch_size: usize,
    /// Use `α/√T` in place of `α/√t`.
    #[serde(default)]
    pub fixed_horizon: bool,
    /// Reference optimum; estimated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_star: Option<f64>,
    #[serde(default = "default_fstar_budget")]
    pub fstar_budget: usize,
}

impl RunConfig {
    pub fn schedule(&self) -> Result<Schedule, CliError> {
        let s = if self.optimizer.is_time_varying() {
            if self.beta.is_some() {
                return Err(CliError::Usage(format!("{} uses t/(t+2) momentum; drop --beta", self.optimizer)));
            }
            Schedule::time_varying(self.alpha)
        } else {
            let beta = match self.optimizer {
                OptimizerKind::Psg => self.beta.unwrap_or(0.0),
                _ => self
                    .beta
                    .ok_or_else(|| CliError::Usage(format!("{} needs --beta", self.optimizer)))?,
            };
            Schedule::constant_beta(self.alpha, beta)
        }
        .map_err(CliError::usage)?;
        let s = s.with_epoch_size(self.schedule_epoch_size).map_err(CliError::usage)?;
        if self.fixed_horizon {
            s.with_horizon(self.iterations).map_err(CliError::usage)
        } else {
            Ok(s)
        }
    }

    pub fn ema(&self) -> Result<EmaConfig, CliError> {
        EmaConfig::new(self.gamma, self.delta).map_err(CliError::usage)
    }

    pub fn spec(&self) -> Result<RunSpec, CliError> {
        let schedule = self.schedule()?;
        let mode = if self.batch == 0 {
            GradientMode::Exact
        } else {
            GradientMode::Batch(self.batch)
        };
        let mut spec = RunSpec::new(self.optimizer, schedule, self.iterations)
            .with_ema(self.ema()?)
            .with_mode(mode)
            .with_seed(self.seed);
        if self.checks.contains(&CheckKind::Reformulation) {
            spec = spec.with_identity_check();
        }
        if self.checks.contains(&CheckKind::Lemma3) && !self.optimizer.is_adaptive() {
            return Err(CliError::Usage(format!("lemma3 check needs an adaptive optimizer, got {}", self.optimizer)));
        }
        spec.validate().map_err(CliError::usage)?;
        Ok(spec)
    }

    /// Trace path, relative to `dir` unless given absolutely.
    pub fn trace_path(&self, dir: &Path) -> PathBuf {
        match &self.trace {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => dir.join(p),
            None => dir.join(format!("{}_{}_seed{}.csv", self.problem.label(), self.optimizer, self.seed)),
        }
    }
}

/// Flags shared by `run` and `compare`. Each overrides the JSON config.
#[derive(Args, Clone, Debug, Default)]
pub struct RunFlags {
    /// JSON run configuration; flags given alongside override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = ["hard", "hinge"])]
    pub problem: Option<String>,
    /// Horizon (dimension) of the hard function
    #[arg(long = "T")]
    pub horizon: Option<usize>,
    /// Scale of the hard function
    #[arg(long)]
    pub c: Option<f64>,
    /// LibSVM file for the hinge problem
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// l1 radius for the hinge problem
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Minibatch size, 0 for exact subgradients
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Invariant checks to evaluate; a failure exits with status 1
    #[arg(long, value_enum, value_delimiter = ',')]
    pub checks: Vec<CheckKind>,
    #[arg(long)]
    pub schedule_epoch_size: Option<usize>,
    /// Use the constant step alpha/sqrt(iters)
    #[arg(long)]
    pub fixed_horizon: bool,
    /// Trace CSV path; the summary JSON is written beside it
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Reference optimum for the gap columns
    #[arg(long = "f-star", allow_hyphen_values = true)]
    pub f_star: Option<f64>,
    /// Steps per run used to estimate f* when it is not given
    #[arg(long)]
    pub fstar_budget: Option<usize>,
}

impl RunFlags {
    fn base(&self) -> Result<Option<serde_json::Value>, CliError> {
        let Some(path) = &self.config else { return Ok(None) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        // summary files carry the run configuration under "config"
        Ok(Some(match v.get("config") {
            Some(c) if v.get("optimizer").is_some() => c.clone(),
            _ => v,
        }))
    }

    fn problem(&self, base: Option<ProblemConfig>) -> Result<ProblemConfig, CliError> {
        let kind = match (&self.problem, &base) {
            (Some(k), _) => k.as_str(),
            (None, Some(ProblemConfig::Hard { .. })) => "hard",
            (None, Some(ProblemConfig::Hinge { .. })) => "hinge",
            (None, None) => return Err(CliError::Usage("--problem is required".into())),
        };
        Ok(match (kind, base) {
            ("hard", b) => {
                let (h0, c0) = match b {
                    Some(ProblemConfig::Hard { horizon, c }) => (Some(horizon), Some(c)),
                    _ => (None, None),
                };
                ProblemConfig::Hard {
                    horizon: self.horizon.or(h0).ok_or_else(|| CliError::Usage("--T is required".into()))?,
                    c: self.c.or(c0).ok_or_else(|| CliError::Usage("--c is required".into()))?,
                }
            }
            (_, b) => {
                let (d0, t0) = match b {
                    Some(ProblemConfig::Hinge { dataset, tau }) => (Some(dataset), Some(tau)),
                    _ => (None, None),
                };
                ProblemConfig::Hinge {
                    dataset: self
                        .dataset
                        .clone()
                        .or(d0)
                        .ok_or_else(|| CliError::Usage("--dataset is required".into()))?,
                    tau: self.tau.or(t0).ok_or_else(|| CliError::Usage("--tau is required".into()))?,
                }
            }
        })
    }

    /// Resolves the config file and flags into a full configuration.
    /// `optimizer` overrides whatever the file says.
    pub fn resolve(&self, optimizer: Option<OptimizerKind>) -> Result<RunConfig, CliError> {
        let base: Option<RunConfig> = match self.base()? {
            Some(v) => Some(serde_json::from_value(v).map_err(|e| CliError::Usage(format!("config: {e}")))?),
            None => None,
        };
        let b = base.as_ref();
        let missing = |flag: &str| CliError::Usage(format!("--{flag} is required"));
        let cfg = RunConfig {
            problem: self.problem(b.map(|b| b.problem.clone()))?,
            optimizer: optimizer.or(b.map(|b| b.optimizer)).ok_or_else(|| missing("optimizer"))?,
            alpha: self.alpha.or(b.map(|b| b.alpha)).ok_or_else(|| missing("alpha"))?,
            beta: self.beta.or(b.and_then(|b| b.beta)),
            gamma: self.gamma.or(b.map(|b| b.gamma)).unwrap_or_else(default_gamma),
            delta: self.delta.or(b.map(|b| b.delta)).unwrap_or_else(default_delta),
            iterations: self.iters.or(b.map(|b| b.iterations)).ok_or_else(|| missing("iters"))?,
            batch: self.batch.or(b.map(|b| b.batch)).unwrap_or(0),
            seed: self.seed.or(b.map(|b| b.seed)).unwrap_or(0),
            trace: self.trace.clone().or(b.and_then(|b| b.trace.clone())),
            checks: if self.checks.is_empty() {
                b.map(|b| b.checks.clone()).unwrap_or_default()
            } else {
                self.checks.clone()
            },
            schedule_epoch_size: self
                .schedule_epoch_size
                .or(b.map(|b| b.schedule_epoch_size))
                .unwrap_or(1),
            fixed_horizon: self.fixed_horizon || b.is_some_and(|b| b.fixed_horizon),
            f_star: self.f_star.or(b.and_then(|b| b.f_star)),
            fstar_budget: self.fstar_budget.or(b.map(|b| b.fstar_budget)).unwrap_or_else(default_fstar_budget),
        };
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hard_flags() -> RunFlags {
        RunFlags {
            problem: Some("hard".into()),
            horizon: Some(10),
            c: Some(2.0),
            alpha: Some(1.0),
            iters: Some(10),
            ..Default::default()
        }
    }

    #[test]
    fn resolves_flags() {
        let cfg = hard_flags().resolve(Some(OptimizerKind::HbTimeVarying)).unwrap();
        assert_eq!(cfg.problem, ProblemConfig::Hard { horizon: 10, c: 2.0 });
        assert_eq!(cfg.gamma, 0.1);
        assert_eq!(cfg.delta, 1e-8);
        assert!(cfg.spec().is_ok());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = hard_flags().resolve(Some(OptimizerKind::AdaHbConstantBeta)).unwrap();
        let cfg = RunConfig { beta: Some(0.9), ..cfg };
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"T\":10"));
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn momentum_flags_validated() {
        let cfg = hard_flags().resolve(Some(OptimizerKind::HbConstantBeta)).unwrap();
        assert!(matches!(cfg.spec(), Err(CliError::Usage(_))));
        let cfg = RunConfig { beta: Some(0.5), ..cfg };
        assert!(cfg.spec().is_ok());
        let tv = RunConfig {
            optimizer: OptimizerKind::HbTimeVarying,
            ..cfg.clone()
        };
        assert!(matches!(tv.spec(), Err(CliError::Usage(_))));
        let lemma = RunConfig {
            checks: vec![CheckKind::Lemma3],
            ..cfg
        };
        assert!(matches!(lemma.spec(), Err(CliError::Usage(_))));
    }

    #[test]
    fn missing_fields_are_usage_errors() {
        let flags = RunFlags {
            problem: Some("hinge".into()),
            alpha: Some(1.0),
            iters: Some(5),
            ..Default::default()
        };
        assert!(matches!(flags.resolve(Some(OptimizerKind::Psg)), Err(CliError::Usage(_))));
        assert!(matches!(RunFlags::default().resolve(None), Err(CliError::Usage(_))));
    }
}
