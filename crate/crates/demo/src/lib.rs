//! Browser bindings: convergence curves on the hard function, 2-D ball
//! projections and the momentum/step schedules.
//!
//! Each exported function returns JSON so the page can plot it directly.
//! The `*_json` functions are plain Rust and carry the logic; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use heavyball::diagnostics::TraceRecord;
use heavyball::{
    run, EmaConfig, FeasibleSet, HardFunctionProblem, OptimizerKind, RunSpec, Schedule, Vector,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest horizon the page may request; the hard function is dense in T.
pub const MAX_HORIZON: usize = 2000;

#[derive(Serialize)]
struct Curve {
    name: &'static str,
    alpha: f64,
    f: Vec<f64>,
}

#[derive(Serialize)]
struct Curves {
    horizon: usize,
    floor: f64,
    curves: Vec<Curve>,
}

fn curve(p: &HardFunctionProblem, name: &'static str, spec: RunSpec, alpha: f64) -> heavyball::Result<Curve> {
    let mut trace: Vec<TraceRecord> = Vec::new();
    run(p, &spec, &mut trace)?;
    Ok(Curve {
        name,
        alpha,
        f: trace.iter().map(|r| r.f_individual).collect(),
    })
}

/// Last-iterate objective of PSG, time-varying HB and AdaHB on the hard
/// function with horizon `horizon` and scale `c`. PSG uses `alpha = c`.
pub fn hard_curves_json(horizon: usize, c: f64, alpha_hb: f64, alpha_ada: f64) -> Result<String, String> {
    if horizon == 0 || horizon > MAX_HORIZON {
        return Err(format!("horizon must lie in 1..={MAX_HORIZON}"));
    }
    let inner = || -> heavyball::Result<Curves> {
        let p = HardFunctionProblem::new(horizon, c)?;
        let psg = RunSpec::new(OptimizerKind::Psg, Schedule::constant_beta(c, 0.0)?, horizon);
        let hb = RunSpec::new(OptimizerKind::HbTimeVarying, Schedule::time_varying(alpha_hb)?, horizon);
        let ada = RunSpec::new(OptimizerKind::AdaHbTimeVarying, Schedule::time_varying(alpha_ada)?, horizon)
            .with_ema(EmaConfig::new(0.9, 1e-8)?);
        Ok(Curves {
            horizon,
            floor: p.gd_lower_bound(),
            curves: vec![
                curve(&p, "psg", psg, c)?,
                curve(&p, "hb_tv", hb, alpha_hb)?,
                curve(&p, "adahb_tv", ada, alpha_ada)?,
            ],
        })
    };
    let curves = inner().map_err(|e| e.to_string())?;
    serde_json::to_string(&curves).map_err(|e| e.to_string())
}

/// Euclidean projection of `(x, y)` onto the `"l1"` or `"l2"` ball.
pub fn project_point(ball: &str, radius: f64, x: f64, y: f64) -> Result<[f64; 2], String> {
    let set = match ball {
        "l1" => FeasibleSet::l1_ball(2, radius),
        "l2" => FeasibleSet::l2_ball(2, radius),
        other => return Err(format!("unknown ball {other:?}, expected l1 or l2")),
    }
    .map_err(|e| e.to_string())?;
    let p = Vector::dense(vec![x, y])
        .and_then(|v| set.project(&v))
        .map_err(|e| e.to_string())?
        .to_dense();
    Ok([p[0], p[1]])
}

#[derive(Serialize)]
struct ScheduleTable {
    t: Vec<usize>,
    beta_time_varying: Vec<f64>,
    step_time_varying: Vec<f64>,
    beta_constant: Vec<f64>,
    step_constant: Vec<f64>,
    beta2: Vec<f64>,
}

/// β₁ and step sizes of both momentum schedules, and the EMA β₂, for t = 1..=n.
pub fn schedules_json(n: usize, alpha: f64, beta: f64, gamma: f64) -> Result<String, String> {
    if n == 0 || n > 100_000 {
        return Err("n must lie in 1..=100000".into());
    }
    let inner = || -> heavyball::Result<ScheduleTable> {
        let tv = Schedule::time_varying(alpha)?;
        let cb = Schedule::constant_beta(alpha, beta)?;
        let ema = EmaConfig::new(gamma, 1e-8)?;
        let t: Vec<usize> = (1..=n).collect();
        Ok(ScheduleTable {
            beta_time_varying: t.iter().map(|&k| tv.beta1(k)).collect(),
            step_time_varying: t.iter().map(|&k| tv.step_size(k)).collect(),
            beta_constant: t.iter().map(|&k| cb.beta1(k)).collect(),
            step_constant: t.iter().map(|&k| cb.step_size(k)).collect(),
            beta2: t.iter().map(|&k| ema.beta2(k)).collect(),
            t,
        })
    };
    let table = inner().map_err(|e| e.to_string())?;
    serde_json::to_string(&table).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = hardCurves)]
pub fn hard_curves(horizon: usize, c: f64, alpha_hb: f64, alpha_ada: f64) -> Result<String, JsError> {
    hard_curves_json(horizon, c, alpha_hb, alpha_ada).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = projectPoint)]
pub fn project_point_js(ball: &str, radius: f64, x: f64, y: f64) -> Result<Vec<f64>, JsError> {
    project_point(ball, radius, x, y).map(|p| p.to_vec()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn schedules(n: usize, alpha: f64, beta: f64, gamma: f64) -> Result<String, JsError> {
    schedules_json(n, alpha, beta, gamma).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_have_one_value_per_step() {
        let json = hard_curves_json(50, 2.0, 8.0, 0.08).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let curves = v["curves"].as_array().unwrap();
        assert_eq!(curves.len(), 3);
        for c in curves {
            assert_eq!(c["f"].as_array().unwrap().len(), 50);
        }
        assert!(v["floor"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn curves_reject_bad_input() {
        assert!(hard_curves_json(0, 2.0, 1.0, 1.0).is_err());
        assert!(hard_curves_json(MAX_HORIZON + 1, 2.0, 1.0, 1.0).is_err());
        assert!(hard_curves_json(10, 2.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn projections_land_on_the_ball() {
        let [x, y] = project_point("l2", 1.0, 3.0, 4.0).unwrap();
        assert!((x - 0.6).abs() < 1e-12 && (y - 0.8).abs() < 1e-12);
        let [x, y] = project_point("l1", 1.0, 2.0, 0.5).unwrap();
        assert!((x - 1.0).abs() < 1e-12 && y.abs() < 1e-12);
        assert_eq!(project_point("l2", 1.0, 0.1, -0.2).unwrap(), [0.1, -0.2]);
        assert!(project_point("linf", 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn schedule_table_matches_closed_forms() {
        let v: serde_json::Value = serde_json::from_str(&schedules_json(4, 1.0, 0.9, 0.1).unwrap()).unwrap();
        let tv: Vec<f64> = serde_json::from_value(v["beta_time_varying"].clone()).unwrap();
        for (k, b) in tv.iter().enumerate() {
            let t = (k + 1) as f64;
            assert!((b - t / (t + 2.0)).abs() < 1e-15);
        }
        let step: Vec<f64> = serde_json::from_value(v["step_constant"].clone()).unwrap();
        assert!((step[3] - 0.5).abs() < 1e-15);
        assert!(schedules_json(0, 1.0, 0.9, 0.1).is_err());
    }
}
