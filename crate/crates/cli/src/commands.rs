use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use heavyball::dataio::{write_synthetic_libsvm, CheckResult, NamedRateFit, RunSummary, TraceCsvWriter};
use heavyball::diagnostics::{default_window, estimate_fstar_with, fit_rate, FStarOptions, Quantity, TraceRecord};
use heavyball::optimizers::TraceSink;
use heavyball::verify::{self, Suite};
use heavyball::{run, OptimizerKind, ProblemOracle, Result as CoreResult};

use crate::config::{CheckKind, ProblemConfig, RunConfig, RunFlags};
use crate::CliError;

pub const RATE_BAND: (f64, f64) = (-0.65, -0.35);
const RATE_WINDOW_START: usize = 100;
const LEMMA3_TOL: f64 = verify::LEMMA3_TOL;
const EMA_TOL: f64 = verify::EMA_TOL;
const IDENTITY_TOL: f64 = verify::IDENTITY_TOL;

/// Writes to the CSV file and keeps an in-memory copy for the rate fits.
struct Tee<W: Write> {
    csv: TraceCsvWriter<W>,
    rows: Vec<TraceRecord>,
}

impl<W: Write> TraceSink for Tee<W> {
    fn record(&mut self, r: &TraceRecord) -> CoreResult<()> {
        self.csv.write(r)?;
        self.rows.push(r.clone());
        Ok(())
    }

    fn finish(&mut self) -> CoreResult<()> {
        self.csv.flush()
    }
}

fn create(path: &Path) -> Result<File, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    File::create(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn estimate_reference(oracle: &dyn ProblemOracle, cfg: &RunConfig) -> Result<f64, CliError> {
    if let Some(f) = cfg.f_star {
        return Ok(f);
    }
    let opts = FStarOptions {
        seed: cfg.seed,
        ..FStarOptions::default()
    };
    estimate_fstar_with(oracle, cfg.fstar_budget, &opts).map_err(CliError::usage)
}

/// Outcome of one configured run.
pub struct RunReport {
    pub summary: RunSummary,
    pub trace: Vec<TraceRecord>,
    pub trace_path: PathBuf,
}

/// Executes one configuration, writing its trace CSV and summary JSON.
pub fn execute(cfg: &RunConfig, oracle: &dyn ProblemOracle, f_star: f64, dir: &Path) -> Result<RunReport, CliError> {
    let spec = cfg.spec()?.with_f_star(f_star);
    let trace_path = cfg.trace_path(dir);
    let file = create(&trace_path)?;
    let mut tee = Tee {
        csv: TraceCsvWriter::new(BufWriter::new(file)).map_err(CliError::runtime)?,
        rows: Vec::new(),
    };
    let out = run(oracle, &spec, &mut tee).map_err(CliError::runtime)?;

    let mut checks = Vec::new();
    let mut rate_fits = Vec::new();
    if let Some(r) = out.identity {
        checks.push(CheckResult {
            name: "reformulation".into(),
            passed: r.max_residual <= IDENTITY_TOL && r.max_vi_violation <= IDENTITY_TOL,
            value: r.max_residual,
            threshold: IDENTITY_TOL,
            detail: format!(
                "vi violation {:e}; {} coordinate-steps checked, {} skipped where z(t+1) leaves the set",
                r.max_vi_violation, r.checked, r.skipped
            ),
        });
    }
    if cfg.checks.contains(&CheckKind::Lemma3) {
        let slack = out.lemma3_min_slack.unwrap_or(f64::INFINITY);
        checks.push(CheckResult {
            name: "lemma3".into(),
            passed: slack >= -LEMMA3_TOL,
            value: slack,
            threshold: -LEMMA3_TOL,
            detail: "min over t of RHS - LHS".into(),
        });
        let incr = out.ema_min_increment.unwrap_or(f64::INFINITY);
        checks.push(CheckResult {
            name: "ema_monotone".into(),
            passed: incr >= -EMA_TOL,
            value: incr,
            threshold: -EMA_TOL,
            detail: "min per-coordinate increment of sqrt(t) * vhat_t".into(),
        });
    }
    if cfg.checks.contains(&CheckKind::Rate) {
        let last = tee.rows.last().map_or(0, |r| r.t);
        let window = default_window(RATE_WINDOW_START.min(last / 10).max(1), last);
        let target = if cfg.optimizer.is_time_varying() {
            Quantity::Individual
        } else {
            Quantity::Averaged
        };
        for q in [Quantity::Individual, Quantity::Averaged] {
            match fit_rate(&tee.rows, q, window) {
                Ok(fit) => {
                    if q == target {
                        checks.push(CheckResult {
                            name: format!("rate_{}", q.name()),
                            passed: fit.slope >= RATE_BAND.0 && fit.slope <= RATE_BAND.1,
                            value: fit.slope,
                            threshold: RATE_BAND.1,
                            detail: format!(
                                "log-log slope over t in [{}, {}], band [{}, {}], r2 {:.4}",
                                window.0, window.1, RATE_BAND.0, RATE_BAND.1, fit.r_squared
                            ),
                        });
                    }
                    rate_fits.push(NamedRateFit {
                        quantity: q.name().into(),
                        fit,
                    });
                }
                Err(e) if q == target => checks.push(CheckResult {
                    name: format!("rate_{}", q.name()),
                    passed: false,
                    value: f64::NAN,
                    threshold: RATE_BAND.1,
                    detail: e.to_string(),
                }),
                Err(_) => {}
            }
        }
    }
    if let ProblemConfig::Hard { horizon, c } = cfg.problem {
        // the floor applies to gradient descent with step c/√t run for T steps
        if cfg.optimizer == OptimizerKind::Psg
            && cfg.alpha == c
            && cfg.iterations == horizon
            && cfg.beta.unwrap_or(0.0) == 0.0
            && cfg.batch == 0
            && !cfg.fixed_horizon
        {
            let floor = (horizon as f64).ln() / (32.0 * c * (horizon as f64).sqrt());
            checks.push(CheckResult {
                name: "gd_floor".into(),
                passed: out.final_f_individual >= floor,
                value: out.final_f_individual,
                threshold: floor,
                detail: "f(w_T) >= ln T / (32 c sqrt T)".into(),
            });
        }
    }

    let summary = RunSummary {
        config: serde_json::to_value(cfg).map_err(|e| CliError::Runtime(e.to_string()))?,
        optimizer: cfg.optimizer.name().into(),
        iterations: cfg.iterations,
        f_star: Some(f_star),
        final_f_individual: out.final_f_individual,
        final_f_averaged: out.final_f_averaged,
        final_gap_individual: Some(out.final_f_individual - f_star),
        final_gap_averaged: Some(out.final_f_averaged - f_star),
        rate_fits,
        checks,
    };
    let json = summary.to_json_pretty().map_err(CliError::runtime)?;
    let summary_path = trace_path.with_extension("json");
    fs::write(&summary_path, json + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", summary_path.display())))?;
    Ok(RunReport {
        summary,
        trace: tee.rows,
        trace_path,
    })
}

fn print_summary(r: &RunReport) {
    let s = &r.summary;
    println!(
        "{}: f(w_T) = {:.6e}, f(avg) = {:.6e}, gap = {:.6e} / {:.6e}  [{}]",
        s.optimizer,
        s.final_f_individual,
        s.final_f_averaged,
        s.final_gap_individual.unwrap_or(f64::NAN),
        s.final_gap_averaged.unwrap_or(f64::NAN),
        r.trace_path.display()
    );
    for c in &s.checks {
        print_check(c);
    }
}

fn print_check(c: &CheckResult) {
    println!(
        "  {} {}: {:e} (threshold {:e}) {}",
        if c.passed { "PASS" } else { "FAIL" },
        c.name,
        c.value,
        c.threshold,
        c.detail
    );
}

fn failed_checks<'a>(reports: impl IntoIterator<Item = &'a RunSummary>) -> Vec<String> {
    reports
        .into_iter()
        .flat_map(|s| {
            s.checks
                .iter()
                .filter(|c| !c.passed)
                .map(move |c| format!("{}: {}", s.optimizer, c.name))
        })
        .collect()
}

pub fn cmd_run(flags: &RunFlags, optimizer: Option<OptimizerKind>, dir: &Path) -> Result<(), CliError> {
    let cfg = flags.resolve(optimizer)?;
    cfg.spec()?;
    let oracle = cfg.problem.build()?;
    let f_star = estimate_reference(oracle.as_ref(), &cfg)?;
    let report = execute(&cfg, oracle.as_ref(), f_star, dir)?;
    print_summary(&report);
    let failed = failed_checks([&report.summary]);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::ChecksFailed(failed))
    }
}

/// One `--run KIND:ALPHA[:BETA]` entry.
#[derive(Clone, Debug, PartialEq)]
pub struct RunEntry {
    pub optimizer: OptimizerKind,
    pub alpha: f64,
    pub beta: Option<f64>,
}

impl std::str::FromStr for RunEntry {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if !(2..=3).contains(&parts.len()) {
            return Err(format!("expected KIND:ALPHA[:BETA], got `{s}`"));
        }
        let optimizer = parts[0].parse().map_err(|e: heavyball::Error| e.to_string())?;
        let alpha = parts[1].parse().map_err(|_| format!("bad alpha `{}`", parts[1]))?;
        let beta = match parts.get(2) {
            Some(b) => Some(b.parse().map_err(|_| format!("bad beta `{b}`"))?),
            None => None,
        };
        Ok(Self { optimizer, alpha, beta })
    }
}

pub fn cmd_compare(
    flags: &RunFlags,
    entries: &[RunEntry],
    config_files: &[PathBuf],
    output: Option<&Path>,
    dir: &Path,
) -> Result<(), CliError> {
    let mut configs = Vec::new();
    for path in config_files {
        let f = RunFlags {
            config: Some(path.clone()),
            ..flags.clone()
        };
        configs.push(f.resolve(None)?);
    }
    for e in entries {
        let f = RunFlags {
            alpha: Some(e.alpha),
            beta: e.beta,
            ..flags.clone()
        };
        configs.push(f.resolve(Some(e.optimizer))?);
    }
    let Some(first) = configs.first() else {
        return Err(CliError::Usage("compare needs at least one --run or --configs entry".into()));
    };
    if let Some(other) = configs.iter().find(|c| c.problem != first.problem) {
        return Err(CliError::Usage(format!(
            "all runs must share one problem: {} vs {}",
            first.problem.label(),
            other.problem.label()
        )));
    }
    for c in &configs {
        c.spec()?;
    }
    let oracle = first.problem.build()?;
    let f_star = estimate_reference(oracle.as_ref(), first)?;

    // distinct trace files and column names for repeated optimizers
    let mut seen: HashMap<OptimizerKind, usize> = HashMap::new();
    let mut reports = Vec::new();
    let mut names = Vec::new();
    for cfg in &configs {
        let n = seen.entry(cfg.optimizer).or_insert(0);
        *n += 1;
        let name = if *n == 1 {
            cfg.optimizer.name().to_string()
        } else {
            format!("{}_{}", cfg.optimizer, n)
        };
        let mut cfg = cfg.clone();
        if configs.len() > 1 {
            cfg.trace = Some(PathBuf::from(format!("{}_{}_seed{}.csv", cfg.problem.label(), name, cfg.seed)));
        }
        let report = execute(&cfg, oracle.as_ref(), f_star, dir)?;
        print_summary(&report);
        names.push(name);
        reports.push(report);
    }

    if configs.len() > 1 || output.is_some() {
        let path = match output {
            Some(p) if p.is_absolute() => p.to_path_buf(),
            Some(p) => dir.join(p),
            None => dir.join(format!("{}_compare.csv", first.problem.label())),
        };
        let mut out = BufWriter::new(create(&path)?);
        write_wide_csv(&mut out, &names, &reports).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let combined: Vec<&RunSummary> = reports.iter().map(|r| &r.summary).collect();
        let json = serde_json::to_string_pretty(&combined).map_err(|e| CliError::Runtime(e.to_string()))?;
        let json_path = path.with_extension("json");
        fs::write(&json_path, json + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", json_path.display())))?;
        println!("comparison: {}", path.display());
    }

    let failed = failed_checks(reports.iter().map(|r| &r.summary));
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::ChecksFailed(failed))
    }
}

/// One row per `t`, two gap columns per run; missing entries are empty.
fn write_wide_csv(out: &mut impl Write, names: &[String], reports: &[RunReport]) -> std::io::Result<()> {
    let mut header = vec!["t".to_string()];
    for n in names {
        header.push(format!("{n}_gap_individual"));
        header.push(format!("{n}_gap_averaged"));
    }
    writeln!(out, "{}", header.join(","))?;
    let mut rows: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (k, r) in reports.iter().enumerate() {
        for rec in &r.trace {
            let row = rows.entry(rec.t).or_insert_with(|| vec![String::new(); 2 * reports.len()]);
            row[2 * k] = rec.gap_individual.map(|g| format!("{g:?}")).unwrap_or_default();
            row[2 * k + 1] = rec.gap_averaged.map(|g| format!("{g:?}")).unwrap_or_default();
        }
    }
    for (t, row) in rows {
        writeln!(out, "{t},{}", row.join(","))?;
    }
    out.flush()
}

pub fn cmd_verify(suite: Suite, seed: u64) -> Result<(), CliError> {
    let checks = verify::run_suite(suite, seed).map_err(CliError::runtime)?;
    for c in &checks {
        print_check(c);
    }
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    println!("{} of {} checks passed", checks.len() - failed.len(), checks.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::ChecksFailed(failed))
    }
}

pub fn cmd_synth(path: &Path, samples: usize, features: usize, nnz: usize, flip: f64, seed: u64) -> Result<(), CliError> {
    if samples == 0 || features == 0 || nnz == 0 {
        return Err(CliError::Usage("samples, features and nnz must be positive".into()));
    }
    if !(0.0..=1.0).contains(&flip) {
        return Err(CliError::Usage(format!("flip must lie in [0, 1], got {flip}")));
    }
    let mut out = BufWriter::new(create(path)?);
    write_synthetic_libsvm(&mut out, samples, features, nnz, flip, seed)
        .and_then(|_| out.flush())
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    println!("wrote {samples} samples to {}", path.display());
    Ok(())
}
