//! Experiment drivers behind the command line.
//!
//! Each driver consumes a validated config, runs the library, and returns a
//! deterministic report: a JSON document, a fixed-column CSV, a one-line
//! summary, and a pass/fail verdict. The process exit code is 0 exactly
//! when every verdict in the emitted JSON is "pass".

use crate::config::{Experiment, ExperimentConfig, ModelConfig, PhiConfig, PieceConfig, SchedulePointConfig};
use crate::report::{cell_b, cell_f, cell_s, cell_u, fval, Csv};
use rand::Rng;
use serde_json::{Map, Value};
use splitfield::bounds::{
    cascade, default_grid, epsilon_from_quarter_bound, BoundTable, CascadePlan, LeakSpec,
    PPolicy, Provenance, Witness,
};
use splitfield::cgf::{
    analytic_cgf, holder_sandwich_check, mc_cgf, model_f_properties, subexp_quadratic_check,
    subexp_quadratic_check_sampled, DiscreteVar, SubexpPremise,
};
use splitfield::fields::{CellLaw, FieldModel, ModelKind};
use splitfield::mdp::{clt_check, mdp_tail, theorem1_scan, CgfMode, CltVerdict, KS_BUDGET};
use splitfield::measure::{fmt_g12, Rect, Scaling, TestFunction};
use splitfield::rng::{stream_key, stream_rng, tags};

pub struct RunOutcome {
    pub experiment: &'static str,
    pub pass: bool,
    pub summary: String,
    pub json: Value,
    pub csv: Csv,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, String> {
    match cfg.experiment()? {
        Experiment::Sample => run_sample(cfg),
        Experiment::Cgf => run_cgf(cfg),
        Experiment::Theorem1 => run_theorem1(cfg),
        Experiment::Tail => run_tail(cfg),
        Experiment::Clt => run_clt(cfg),
        Experiment::Bounds => run_bounds(cfg),
        Experiment::VerifySplit => run_verify_split(cfg),
        Experiment::Properties => run_properties(cfg),
    }
}

fn verdict_value(pass: bool) -> Value {
    Value::from(if pass { "pass" } else { "fail" })
}

fn base_json(cfg: &ExperimentConfig, exp: Experiment, model: &FieldModel) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("experiment".into(), Value::from(exp.name()));
    m.insert("model".into(), Value::from(model.name()));
    m.insert("dim".into(), Value::from(model.dim() as u64));
    m.insert("seed".into(), Value::from(cfg.seed));
    m
}

fn coords(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| fval(x)).collect())
}

fn join_coords(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_g12(x)).collect::<Vec<_>>().join(";")
}

fn core_err(e: splitfield::Error) -> String {
    e.to_string()
}

fn run_sample(cfg: &ExperimentConfig) -> Result<RunOutcome, String> {
    let model = cfg.model()?;
    let r = cfg.require_r()?;
    let d = model.dim();
    let window = Rect::new(vec![0.0; d], vec![r; d]).map_err(core_err)?;
    let m = model.sample(&window, cfg.seed).map_err(core_err)?;

    let mut csv = Csv::new(&["kind", "lower", "upper", "value"]);
    let mut atoms = Vec::new();
    for a in m.atoms() {
        let p = join_coords(&a.point);
        csv.push(vec![cell_s("atom"), p.clone(), p, cell_f(a.weight)]);
        atoms.push(serde_json::json!({
            "point": coords(&a.point),
            "weight": fval(a.weight),
        }));
    }
    let mut cells = Vec::new();
    for c in m.cells() {
        csv.push(vec![
            cell_s("cell"),
            join_coords(&c.rect.lower),
            join_coords(&c.rect.upper),
            cell_f(c.density),
        ]);
        cells.push(serde_json::json!({
            "lower": coords(&c.rect.lower),
            "upper": coords(&c.rect.upper),
            "density": fval(c.density),
        }));
    }
    let atom_weight: f64 = m.atoms().iter().map(|a| a.weight).sum();
    let cell_mass: f64 = m.cells().iter().map(|c| c.density * c.rect.volume()).sum();

    let summary = format!(
        "sample: pass atoms={} cells={} window=[0,{})^{}",
        atoms.len(),
        cells.len(),
        fmt_g12(r),
        d
    );
    let mut j = base_json(cfg, Experiment::Sample, &model);
    j.insert("r".into(), fval(r));
    j.insert("atoms".into(), Value::Array(atoms));
    j.insert("cells".into(), Value::Array(cells));
    j.insert("atom_weight_total".into(), fval(atom_weight));
    j.insert("cell_mass_total".into(), fval(cell_mass));
    j.insert("verdict".into(), verdict_value(true));
    Ok(RunOutcome {
        experiment: "sample",
        pass: true,
        summary,
        json: Value::Object(j),
        csv,
    })
}

fn run_cgf(cfg: &ExperimentConfig) -> Result<RunOutcome, String> {
    let model = cfg.model()?;
    let phi = cfg.phi()?;
    let r = cfg.require_r()?;
    let lambdas = cfg.lambdas()?;
    let mode = cfg.mode()?;
    let scale = Scaling::uniform(model.dim(), r).map_err(core_err)?;

    let analytic: Vec<Option<f64>> = if model.has_exact_cgf() {
        let mut vals = Vec::with_capacity(lambdas.len());
        for &l in &lambdas {
            vals.push(Some(analytic_cgf(&model, &phi, &scale, l).map_err(core_err)?));
        }
        vals
    } else {
        vec![None; lambdas.len()]
    };

    let mut csv = Csv::new(&["lambda", "value", "ci_low", "ci_high", "n", "ess", "flag"]);
    let mut points = Vec::new();
    let mut pass = true;
    let mut max_err = 0.0f64;

    match mode {
        CgfMode::Analytic => {
            if !model.has_exact_cgf() {
                return Err(format!(
                    "/mode: model {} has no exact CGF, use mc",
                    model.name()
                ));
            }
            for (&l, a) in lambdas.iter().zip(&analytic) {
                let v = a.expect("analytic value present");
                csv.push(vec![
                    cell_f(l),
                    cell_f(v),
                    cell_f(v),
                    cell_f(v),
                    cell_u(0),
                    cell_f(0.0),
                    cell_b(false),
                ]);
                points.push(serde_json::json!({
                    "lambda": fval(l),
                    "analytic": fval(v),
                    "value": fval(v),
                    "unstable": false,
                }));
            }
        }
        CgfMode::Mc => {
            let n = cfg.require_n()?;
            let ests = mc_cgf(&model, &phi, &scale, &lambdas, n, cfg.seed).map_err(core_err)?;
            for (est, a) in ests.iter().zip(&analytic) {
                csv.push(vec![
                    cell_f(est.lambda),
                    cell_f(est.value),
                    cell_f(est.ci_low),
                    cell_f(est.ci_high),
                    cell_u(est.n),
                    cell_f(est.ess),
                    cell_b(est.unstable),
                ]);
                let mut p = serde_json::json!({
                    "lambda": fval(est.lambda),
                    "value": fval(est.value),
                    "ci_low": fval(est.ci_low),
                    "ci_high": fval(est.ci_high),
                    "ess": fval(est.ess),
                    "n": est.n,
                    "unstable": est.unstable,
                });
                if est.unstable {
                    pass = false;
                }
                if let Some(av) = a {
                    p["analytic"] = fval(*av);
                    max_err = max_err.max((est.value - av).abs());
                    // Widen the interval threefold about its center so the
                    // verdict is not a coin flip at the nominal 95% level.
                    let mid = 0.5 * (est.ci_low + est.ci_high);
                    let half = 1.5 * (est.ci_high - est.ci_low);
                    if (av - mid).abs() > half {
                        pass = false;
                    }
                }
                points.push(p);
            }
        }
    }

    let summary = format!(
        "cgf: {} points={} max_err={}",
        if pass { "pass" } else { "fail" },
        lambdas.len(),
        fmt_g12(max_err)
    );
    let mut j = base_json(cfg, Experiment::Cgf, &model);
    j.insert("r".into(), fval(r));
    j.insert(
        "mode".into(),
        Value::from(match mode {
            CgfMode::Analytic => "analytic",
            CgfMode::Mc => "mc",
        }),
    );
    j.insert("points".into(), Value::Array(points));
    j.insert("max_abs_error".into(), fval(max_err));
    j.insert("verdict".into(), verdict_value(pass));
    Ok(RunOutcome {
        experiment: "cgf",
        pass,
        summary,
        json: Value::Object(j),
        csv,
    })
}

fn run_theorem1(cfg: &ExperimentConfig) -> Result<RunOutcome, String> {
    let model = cfg.model()?;
    let phi = cfg.phi()?;
    let schedule = cfg.schedule()?;
    let mode = cfg.mode()?;
    let n = match mode {
        CgfMode::Analytic => cfg.n.unwrap_or(0),
        CgfMode::Mc => cfg.require_n()?,
    };
    let rep = theorem1_scan(&model, &phi, &schedule, mode, n, cfg.seed).map_err(core_err)?;

    let final_dev = rep.points.last().map(|p| p.deviation.abs()).unwrap_or(f64::NAN);
    let rel_tol = cfg.tolerance.unwrap_or(0.02);
    let pass = !rep.any_unstable && final_dev <= rel_tol * rep.target;

    let mut csv = Csv::new(&[
        "volume",
        "lambda",
        "constraint",
        "ratio",
        "ci_low",
        "ci_high",
        "deviation",
        "unstable",
    ]);
    let mut points = Vec::new();
    for p in &rep.points {
        let vol: f64 = p.r.iter().product();
        let (lo, hi) = p.ci.unwrap_or((f64::NAN, f64::NAN));
        csv.push(vec![
            cell_f(vol),
            cell_f(p.lambda),
            cell_f(p.constraint),
            cell_f(p.ratio),
            cell_f(lo),
            cell_f(hi),
            cell_f(p.deviation),
            cell_b(p.unstable),
        ]);
        let mut o = serde_json::json!({
            "r": coords(&p.r),
            "lambda": fval(p.lambda),
            "constraint": fval(p.constraint),
            "ratio": fval(p.ratio),
            "deviation": fval(p.deviation),
            "unstable": p.unstable,
        });
        if let Some((l, h)) = p.ci {
            o["ci_low"] = fval(l);
            o["ci_high"] = fval(h);
        }
        points.push(o);
    }

    let summary = format!(
        "theorem1: {} target={} final_dev={}",
        if pass { "pass" } else { "fail" },
        fmt_g12(rep.target),
        fmt_g12(final_dev)
    );
    let mut j = base_json(cfg, Experiment::Theorem1, &model);
    j.insert("target".into(), fval(rep.target));
    j.insert("sigma".into(), fval(rep.sigma));
    j.insert("points".into(), Value::Array(points));
    j.insert("max_abs_deviation".into(), fval(rep.max_abs_deviation));
    j.insert("final_deviation".into(), fval(final_dev));
    j.insert("relative_tolerance".into(), fval(rel_tol));
    j.insert("verdict".into(), verdict_value(pass));
    Ok(RunOutcome {
        experiment: "theorem1",
        pass,
        summary,
        json: Value::Object(j),
        csv,
    })
}

fn run_tail(cfg: &ExperimentConfig) -> Result<RunOutcome, String> {
    let model = cfg.model()?;
    let phi = cfg.phi()?;
    let r = cfg.require_r()?;
    let c = cfg.require_c()?;
    let method = cfg.tail_method()?;
    let n = cfg.n.unwrap_or(0);
    let rep = mdp_tail(&model, &phi, r, c, method, n, cfg.seed).map_err(core_err)?;

    let rate_ok = match cfg.tolerance {
        Some(t) => (rep.rate_calibrated + 0.5).abs() <= t,
        None => true,
    };
    let pass = !rep.low_events && rate_ok;

    let mut csv = Csv::new(&[
        "method",
        "r",
        "c",
        "threshold",
        "log_prob",
        "ci_low",
        "ci_high",
        "rate_plain",
        "rate_calibrated",
        "rate_ci_low",
        "rate_ci_high",
        "events",
        "low_events",
    ]);
    let (lo, hi) = rep.ci_log_prob.unwrap_or((f64::NAN, f64::NAN));
    let (rlo, rhi) = rep.ci_rate_calibrated.unwrap_or((f64::NAN, f64::NAN));
    csv.push(vec![
        cell_s(rep.method),
        cell_f(rep.r),
        cell_f(rep.c),
        cell_f(rep.threshold),
        cell_f(rep.log_prob),
        cell_f(lo),
        cell_f(hi),
        cell_f(rep.rate_plain),
        cell_f(rep.rate_calibrated),
        cell_f(rlo),
        cell_f(rhi),
        rep.events.map(cell_u).unwrap_or_else(|| cell_s("nan")),
        cell_b(rep.low_events),
    ]);

    let summary = format!(
        "tail: {} method={} log_prob={} rate_calibrated={}",
        if pass { "pass" } else { "fail" },
        rep.method,
        fmt_g12(rep.log_prob),
        fmt_g12(rep.rate_calibrated)
    );
    let mut j = base_json(cfg, Experiment::Tail, &model);
    j.insert("method".into(), Value::from(rep.method));
    j.insert("r".into(), fval(rep.r));
    j.insert("c".into(), fval(rep.c));
    j.insert("threshold".into(), fval(rep.threshold));
    j.insert("log_prob".into(), fval(rep.log_prob));
    if let Some((l, h)) = rep.ci_log_prob {
        j.insert("ci_low".into(), fval(l));
        j.insert("ci_high".into(), fval(h));
    }
    j.insert("rate_plain".into(), fval(rep.rate_plain));
    j.insert("rate_calibrated".into(), fval(rep.rate_calibrated));
    if let Some((l, h)) = rep.ci_rate_calibrated {
        j.insert("rate_ci_low".into(), fval(l));
        j.insert("rate_ci_high".into(), fval(h));
    }
    if let Some(e) = rep.events {
        j.insert("events".into(), Value::from(e as u64));
    }
    j.insert("low_events".into(), Value::from(rep.low_events));
    j.insert("verdict".into(), verdict_value(pass));
    Ok(RunOutcome {
        experiment: "tail",
        pass,
        summary,
        json: Value::Object(j),
        csv,
    })
}

fn run_clt(cfg: &ExperimentConfig) -> Result<RunOutcome, String> {
    let model = cfg.model()?;
    let phi = cfg.phi()?;
    let r = cfg.require_r()?;
    let n = cfg.require_n()?;
    let rep = clt_check(&model, &phi, r, n, cfg.seed).map_err(core_err)?;

    let status = match rep.verdict {
        CltVerdict::Pass => "pass",
        CltVerdict::Fail => "fail",
        CltVerdict::Skipped => "skipped",
    };
    let pass = !matches!(rep.verdict, CltVerdict::Fail);

    let mut csv = Csv::new(&["n", "sigma_phi", "ks", "stat_threshold", "ks_budget", "status"]);
    csv.push(vec![
        cell_u(rep.n),
        cell_f(rep.sigma_phi),
        cell_f(rep.ks),
        cell_f(rep.stat_threshold),
        cell_f(rep.threshold),
        cell_s(status),
    ]);

    let summary = format!(
        "clt: {} ks={} budget={} status={}",
        if pass { "pass" } else { "fail" },
        fmt_g12(rep.ks),
        fmt_g12(KS_BUDGET),
        status
    );
    let mut j = base_json(cfg, Experiment::Clt, &model);
    j.insert("r".into(), fval(r));
    j.insert("n".into(), Value::from(rep.n as u64));
    j.insert("sigma_phi".into(), fval(rep.sigma_phi));
    j.insert("ks".into(), fval(rep.ks));
    j.insert("stat_threshold".into(), fval(rep.stat_threshold));
    j.insert("ks_budget".into(), fval(rep.threshold));
    j.insert("status".into(), Value::from(status));
    j.insert("note".into(), Value::from(rep.note.as_str()));
    j.insert("verdict".into(), verdict_value(pass));
    Ok(RunOutcome {
        experiment: "clt",
        pass,
        summary,
        json: Value::Object(j),
        csv,
    })
}

fn run_bounds(cfg: &ExperimentConfig) -> Result<RunOutcome, String> {
    let model = cfg.model()?;
    if !model.has_exact_cgf() {
        return Err(format!(
            "/model: bounds experiment needs an exact CGF, {} has none",
            model.name()
        ));
    }
    let d = model.dim();
    let base_side = match cfg.base_side {
        None => 2.0,
        Some(s) if s.is_finite() && s > 0.0 => s,
        Some(_) => return Err("/base_side: must be positive and finite".into()),
    };
    let doublings = match cfg.doublings {
        None => 6,
        Some(k) if (1..=30).contains(&k) => k,
        Some(_) => return Err("/doublings: must lie between 1 and 30".into()),
    };
    let c_prev = match cfg.c_prev {
        None => 1.0,
        Some(c) if c.is_finite() && c > 0.0 => c,
        Some(_) => return Err("/c_prev: must be positive and finite".into()),
    };

    let phi = TestFunction::indicator(Rect::new(vec![0.0; d], vec![1.0; d]).map_err(core_err)?)
        .map_err(core_err)?;
    let table_for = |shape: &[f64]| -> Result<BoundTable, String> {
        let sc = Scaling::new(shape.to_vec()).map_err(core_err)?;
        let v: f64 = shape.iter().product();
        let grid = default_grid(1.0);
        let mut values = Vec::with_capacity(grid.len());
        for &l in &grid {
            values.push(analytic_cgf(&model, &phi, &sc, l / v.sqrt()).map_err(core_err)?);
        }
        BoundTable::new(shape.to_vec(), grid, values, Provenance::Base).map_err(core_err)
    };

    let base_shape = vec![base_side; d];
    let base = table_for(&base_shape)?;
    let eps_rep = epsilon_from_quarter_bound(&base).map_err(core_err)?;
    let eps = match (&eps_rep.witness, eps_rep.holds) {
        (Witness::Epsilon(e), true) => *e,
        _ => {
            let mut j = base_json(cfg, Experiment::Bounds, &model);
            j.insert("base_shape".into(), coords(&base_shape));
            j.insert(
                "note".into(),
                Value::from("no quadratic envelope certified on the base grid"),
            );
            j.insert("verdict".into(), verdict_value(false));
            return Ok(RunOutcome {
                experiment: "bounds",
                pass: false,
                summary: "bounds: fail no quadratic envelope on the base grid".into(),
                json: Value::Object(j),
                csv: Csv::new(&["lambda", "value"]),
            });
        }
    };
    let a = 1.0 / (eps * eps);

    let plan = CascadePlan {
        a,
        delta: eps,
        doublings: vec![doublings; d],
        c_prev,
        policy: PPolicy::Optimize,
    };
    let leak = match model.kind() {
        ModelKind::CenteredPoisson { .. } => LeakSpec::Zero,
        _ => LeakSpec::Absent,
    };
    let out = cascade(&base, &plan, leak).map_err(core_err)?;

    // Soundness audit: the cascaded table must dominate the exact law of
    // its final shape everywhere on a dense lambda sweep.
    let final_shape = out.table.shape().to_vec();
    let sc = Scaling::new(final_shape.clone()).map_err(core_err)?;
    let v: f64 = final_shape.iter().product();
    let gmax = out.table.grid().last().copied().unwrap_or(1.0);
    let checked_points = 1000usize;
    let mut violations = 0usize;
    let mut min_margin = f64::INFINITY;
    for i in 0..checked_points {
        let l = -gmax + 2.0 * gmax * (i as f64) / (checked_points as f64 - 1.0);
        let exact = analytic_cgf(&model, &phi, &sc, l / v.sqrt()).map_err(core_err)?;
        let bound = out.table.eval(l);
        if bound.is_finite() {
            min_margin = min_margin.min(bound - exact);
        }
        if bound < exact - 1e-12 * (1.0 + exact.abs()) {
            violations += 1;
        }
    }
    // The verdict is the soundness audit. Whether the doubled table also
    // meets the fixed 2a envelope on its region depends on the seed volume
    // (the boundary term decays like 1/side), so holds_2a is reported as
    // data rather than gated.
    let pass = violations == 0;

    let mut csv = Csv::new(&["lambda", "value"]);
    for (&l, &val) in out.table.grid().iter().zip(out.table.values()) {
        csv.push(vec![cell_f(l), cell_f(val)]);
    }

    let summary = format!(
        "bounds: {} final_shape=[{}] violations={} holds_2a={}",
        if pass { "pass" } else { "fail" },
        join_coords(&final_shape),
        violations,
        out.holds_2a
    );
    let mut j = base_json(cfg, Experiment::Bounds, &model);
    j.insert("base_shape".into(), coords(&base_shape));
    j.insert("final_shape".into(), coords(&final_shape));
    j.insert("doublings".into(), Value::from(doublings as u64));
    j.insert("a".into(), fval(a));
    j.insert("delta_seed".into(), fval(eps));
    j.insert("c_prev".into(), fval(c_prev));
    j.insert("delta".into(), fval(out.delta));
    j.insert("holds_2a".into(), Value::from(out.holds_2a));
    j.insert("env_coeff".into(), fval(out.env_coeff));
    j.insert("env_region".into(), fval(out.env_region));
    j.insert("leak_coeff".into(), fval(out.leak_coeff));
    j.insert(
        "empirical_n".into(),
        out.empirical_n
            .map(|n| Value::from(n as u64))
            .unwrap_or(Value::Null),
    );
    j.insert("stages".into(), Value::from(out.stages.len() as u64));
    j.insert(
        "p_schedule".into(),
        Value::Array(out.p_schedule.iter().map(|&p| fval(p)).collect()),
    );
    j.insert("checked_points".into(), Value::from(checked_points as u64));
    j.insert("violations".into(), Value::from(violations as u64));
    j.insert("min_margin".into(), fval(min_margin));
    j.insert("verdict".into(), verdict_value(pass));
    Ok(RunOutcome {
        experiment: "bounds",
        pass,
        summary,
        json: Value::Object(j),
        csv,
    })
}

fn run_verify_split(cfg: &ExperimentConfig) -> Result<RunOutcome, String> {
    let model = cfg.model()?;
    let r = cfg.require_r()?;
    let n = cfg.require_n()?;
    let d = model.dim();
    let window = Rect::new(vec![-r; d], vec![r; d]).map_err(core_err)?;
    let rep = model
        .verify_split_statistics(&window, 0, 0.0, n, cfg.seed)
        .map_err(core_err)?;

    let allowed_leak = match model.kind() {
        ModelKind::CenteredPoisson { .. } => 0.0,
        ModelKind::ShotNoise { .. } => model.kernel_widths()[0],
        // Lattice cells have unit width, so a cut cell reaches at most one
        // unit from the splitting plane.
        ModelKind::BlockIid { .. } => 1.0,
    };
    let leak_ok = rep.leak_radius <= allowed_leak + 1e-9;
    let pass = rep.marginals_ok && rep.independence_ok && leak_ok;

    let mut csv = Csv::new(&[
        "n_draws",
        "ks_threshold",
        "ks_x0",
        "ks_xminus",
        "ks_xplus",
        "ks_control",
        "max_cov_score",
        "leak_radius",
        "allowed_leak_radius",
        "marginals_ok",
        "independence_ok",
        "leak_ok",
    ]);
    csv.push(vec![
        cell_u(rep.n_draws),
        cell_f(rep.ks_threshold),
        cell_f(rep.ks_x0),
        cell_f(rep.ks_xminus),
        cell_f(rep.ks_xplus),
        cell_f(rep.ks_control),
        cell_f(rep.max_cov_score),
        cell_f(rep.leak_radius),
        cell_f(allowed_leak),
        cell_b(rep.marginals_ok),
        cell_b(rep.independence_ok),
        cell_b(leak_ok),
    ]);

    let summary = format!(
        "verify-split: {} leak_radius={} max_ks={} cov_score={}",
        if pass { "pass" } else { "fail" },
        fmt_g12(rep.leak_radius),
        fmt_g12(rep.ks_x0.max(rep.ks_xminus).max(rep.ks_xplus)),
        fmt_g12(rep.max_cov_score)
    );
    let mut j = base_json(cfg, Experiment::VerifySplit, &model);
    j.insert("r".into(), fval(r));
    j.insert("n_draws".into(), Value::from(rep.n_draws as u64));
    j.insert("ks_threshold".into(), fval(rep.ks_threshold));
    j.insert("ks_x0".into(), fval(rep.ks_x0));
    j.insert("ks_xminus".into(), fval(rep.ks_xminus));
    j.insert("ks_xplus".into(), fval(rep.ks_xplus));
    j.insert("ks_control".into(), fval(rep.ks_control));
    j.insert("max_cov_score".into(), fval(rep.max_cov_score));
    j.insert("leak_radius".into(), fval(rep.leak_radius));
    j.insert("allowed_leak_radius".into(), fval(allowed_leak));
    j.insert("leak_certificate".into(), fval(model.leak_certificate()));
    j.insert("c_split".into(), fval(model.c_split()));
    j.insert("marginals_ok".into(), Value::from(rep.marginals_ok));
    j.insert("independence_ok".into(), Value::from(rep.independence_ok));
    j.insert("leak_ok".into(), Value::from(leak_ok));
    j.insert("verdict".into(), verdict_value(pass));
    Ok(RunOutcome {
        experiment: "verify-split",
        pass,
        summary,
        json: Value::Object(j),
        csv,
    })
}

fn run_properties(cfg: &ExperimentConfig) -> Result<RunOutcome, String> {
    let model = cfg.model()?;
    let cases = match cfg.cases {
        None => 1000,
        Some(c) if c > 0 => c,
        Some(_) => return Err("/cases: must be positive".into()),
    };
    let draws = match cfg.n {
        None => 1000,
        Some(n) if n >= 1000 => n,
        Some(_) => return Err("/n: sampled suite needs n >= 1000".into()),
    };
    let seed = cfg.seed;

    let suites = vec![
        suite_quadratic_exact(cases, stream_key(seed, &[tags::CASES, 0]))?,
        suite_sum_sandwich(cases, stream_key(seed, &[tags::CASES, 1]))?,
        suite_model_f(cases, Some(&model), stream_key(seed, &[tags::CASES, 2]))?,
        suite_quadratic_sampled(cases, draws, stream_key(seed, &[tags::CASES, 3]))?,
    ];
    let pass = suites.iter().all(|s| s.violations == 0);

    let mut csv = Csv::new(&["suite", "cases", "violations", "worst_slack", "ok"]);
    let mut arr = Vec::new();
    for s in &suites {
        csv.push(vec![
            cell_s(s.name),
            cell_u(s.cases),
            cell_u(s.violations),
            cell_f(s.worst_slack),
            cell_b(s.violations == 0),
        ]);
        arr.push(serde_json::json!({
            "name": s.name,
            "cases": s.cases,
            "violations": s.violations,
            "worst_slack": fval(s.worst_slack),
            "ok": s.violations == 0,
        }));
    }

    let summary = format!(
        "properties: {} suites={} cases={}",
        if pass { "pass" } else { "fail" },
        suites.len(),
        cases
    );
    let mut j = base_json(cfg, Experiment::Properties, &model);
    j.insert("cases".into(), Value::from(cases as u64));
    j.insert("suites".into(), Value::Array(arr));
    j.insert("verdict".into(), verdict_value(pass));
    Ok(RunOutcome {
        experiment: "properties",
        pass,
        summary,
        json: Value::Object(j),
        csv,
    })
}

/// Outcome of one randomized invariant suite.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub violations: usize,
    /// Largest observed slack; a nonpositive (or sub-tolerance) value means
    /// the inequality held with room to spare.
    pub worst_slack: f64,
}

/// Quadratic CGF bound on randomized finite variables whose moment premise
/// holds by construction: symmetric two-point laws and saturated skewed
/// two-point laws under the E exp|Z| <= 2 premise, plus symmetric laws
/// under the E exp(+-Z) <= 5/4 premise.
pub fn suite_quadratic_exact(cases: usize, seed: u64) -> Result<SuiteResult, String> {
    let mut violations = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..cases {
        let mut rng = stream_rng(seed, &[tags::CASES, i as u64]);
        let grid: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rep = match i % 3 {
            0 => {
                let a = rng.gen_range(0.05..0.69);
                let var = DiscreteVar::sign(a).map_err(core_err)?;
                subexp_quadratic_check(&var, SubexpPremise::AbsExpTwo, &grid)
            }
            1 => {
                let p = rng.gen_range(0.05..0.95);
                let skew = rng.gen_range(0.2..3.0);
                let var = DiscreteVar::two_point_saturated(p, skew).map_err(core_err)?;
                subexp_quadratic_check(&var, SubexpPremise::AbsExpTwo, &grid)
            }
            _ => {
                // cosh(a) <= 5/4 exactly when a <= ln 2.
                let a = rng.gen_range(0.05..0.69);
                let var = DiscreteVar::sign(a).map_err(core_err)?;
                subexp_quadratic_check(&var, SubexpPremise::QuarterBound, &grid)
            }
        }
        .map_err(core_err)?;
        if !rep.ok {
            violations += 1;
        }
        worst = worst.max(rep.max_slack);
    }
    Ok(SuiteResult {
        name: "quadratic_exact",
        cases,
        violations,
        worst_slack: worst,
    })
}

fn random_var(rng: &mut impl Rng) -> Result<DiscreteVar, String> {
    let k = rng.gen_range(2..=3usize);
    let outcomes: Vec<(f64, f64)> = (0..k)
        .map(|_| (rng.gen_range(-2.0..2.0), rng.gen_range(0.05..1.0)))
        .collect();
    DiscreteVar::new(outcomes).map_err(core_err)
}

/// Two-sided CGF sandwich for sums, exercised on independent pairs (CGFs
/// add) and on fully dependent pairs (Y = X, the sum CGF is a dilation).
/// The inequality holds for every joint law, so both extremes must pass.
pub fn suite_sum_sandwich(cases: usize, seed: u64) -> Result<SuiteResult, String> {
    let mut violations = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..cases {
        let mut rng = stream_rng(seed, &[tags::CASES, i as u64]);
        let p = 1.0 + 10f64.powf(rng.gen_range(-0.7..0.7));
        let grid: Vec<f64> = (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = random_var(&mut rng)?;
        let rep = if i % 2 == 0 {
            let y = random_var(&mut rng)?;
            holder_sandwich_check(
                &|l| x.cgf(l),
                &|l| y.cgf(l),
                &|l| x.cgf(l) + y.cgf(l),
                p,
                &grid,
                1e-12,
            )
        } else {
            holder_sandwich_check(&|l| x.cgf(l), &|l| x.cgf(l), &|l| x.cgf(2.0 * l), p, &grid, 1e-12)
        }
        .map_err(core_err)?;
        if !rep.ok {
            violations += 1;
        }
        worst = worst
            .max(rep.max_lower_violation)
            .max(rep.max_upper_violation);
    }
    Ok(SuiteResult {
        name: "sum_sandwich",
        cases,
        violations,
        worst_slack: worst,
    })
}

/// Normalized-window CGF structure on randomized models and shape ladders:
/// ratio monotonicity in the shape, volume subadditivity, quadratic ratio
/// limit. The optional extra model joins the three built-in families.
pub fn suite_model_f(
    cases: usize,
    extra: Option<&FieldModel>,
    seed: u64,
) -> Result<SuiteResult, String> {
    let arms = 3 + usize::from(extra.is_some());
    let mut violations = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..cases {
        let mut rng = stream_rng(seed, &[tags::CASES, i as u64]);
        let arm = i % arms;
        let built;
        let model: &FieldModel = match arm {
            0 => {
                built = FieldModel::centered_poisson(
                    1,
                    rng.gen_range(0.5..2.0),
                    rng.gen_range(0.5..1.5),
                )
                .map_err(core_err)?;
                &built
            }
            1 => {
                let law = if rng.gen_bool(0.5) {
                    CellLaw::Rademacher {
                        scale: rng.gen_range(0.5..1.5),
                    }
                } else {
                    CellLaw::Uniform {
                        bound: rng.gen_range(0.5..2.0),
                    }
                };
                built = FieldModel::block_iid(1, law).map_err(core_err)?;
                &built
            }
            2 => {
                let w = rng.gen_range(0.5..1.5);
                let h = rng.gen_range(0.3..1.2);
                let kernel = TestFunction::new(
                    vec![(Rect::interval(0.0, w).map_err(core_err)?, h)],
                    0.0,
                )
                .map_err(core_err)?;
                built = FieldModel::shot_noise(
                    1,
                    rng.gen_range(0.5..1.5),
                    rng.gen_range(0.5..1.2),
                    kernel,
                )
                .map_err(core_err)?;
                &built
            }
            _ => extra.expect("extra arm only when a model was supplied"),
        };
        let d = model.dim();
        let s0 = rng.gen_range(1.0..3.0);
        let shapes = vec![vec![s0; d], vec![2.0 * s0; d], vec![4.0 * s0; d]];
        let mut lambdas: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.8..0.8)).collect();
        lambdas.push(rng.gen_range(0.05..0.8));
        let rep = model_f_properties(model, &shapes, &lambdas).map_err(core_err)?;
        if !rep.ok {
            violations += 1;
        }
        worst = worst.max(rep.subadd_max_violation);
    }
    Ok(SuiteResult {
        name: "model_f",
        cases,
        violations,
        worst_slack: worst,
    })
}

/// Monte-Carlo path of the quadratic bound: the normalized unit-window
/// integral of a Poisson field, divided by its splittability constant,
/// satisfies E exp|Z| <= 2 by construction, and the sampled CGF lower
/// confidence bound must stay below lambda^2.
pub fn suite_quadratic_sampled(
    cases: usize,
    draws: usize,
    seed: u64,
) -> Result<SuiteResult, String> {
    let unit = Rect::interval(0.0, 1.0).map_err(core_err)?;
    let mut violations = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..cases {
        let case_seed = stream_key(seed, &[tags::CASES, i as u64]);
        let mut rng = stream_rng(seed, &[tags::CASES, i as u64]);
        let model = FieldModel::centered_poisson(
            1,
            rng.gen_range(0.5..2.0),
            rng.gen_range(0.5..1.5),
        )
        .map_err(core_err)?;
        let c = model.c_split();
        let grid = [rng.gen_range(-1.0..-0.1), rng.gen_range(0.1..1.0)];
        let m = &model;
        let u = &unit;
        let rep = subexp_quadratic_check_sampled(
            |k| {
                let s = m.sample(u, k).expect("unit window sample");
                s.integrate_box(u).expect("unit window integral") / c
            },
            SubexpPremise::AbsExpTwo,
            true,
            &grid,
            draws,
            case_seed,
        )
        .map_err(core_err)?;
        if !rep.ok {
            violations += 1;
        }
        worst = worst.max(rep.max_slack);
    }
    Ok(SuiteResult {
        name: "quadratic_sampled",
        cases,
        violations,
        worst_slack: worst,
    })
}

/// The fixed battery behind `selftest`: one small config per experiment,
/// sized to finish in seconds while still exercising every driver.
pub fn selftest_battery(seed: u64) -> Vec<ExperimentConfig> {
    let poisson = || ModelConfig::CenteredPoisson {
        dim: 1,
        intensity: 1.0,
        mass: 1.0,
    };
    let unit_phi = || PhiConfig {
        pieces: Some(vec![PieceConfig {
            bounds: vec![(0.0, 1.0)],
            value: 1.0,
        }]),
        continuous: None,
    };
    let blank = |experiment: &str| ExperimentConfig {
        experiment: experiment.into(),
        seed,
        model: poisson(),
        phi: None,
        n: None,
        r: None,
        c: None,
        method: None,
        mode: None,
        lambdas: None,
        schedule: None,
        tolerance: None,
        doublings: None,
        base_side: None,
        c_prev: None,
        cases: None,
        out: None,
    };
    let point = |r: f64, lambda: f64| SchedulePointConfig { r: vec![r], lambda };

    let mut battery = Vec::new();

    // The smoothed model never produces atoms, so this report doubles as
    // the empty-array emission example.
    let mut c = blank("sample");
    c.model = ModelConfig::ShotNoise {
        dim: 1,
        intensity: 1.0,
        mass: 1.0,
        kernel: unit_phi(),
    };
    c.r = Some(8.0);
    battery.push(c);

    let mut c = blank("cgf");
    c.phi = Some(unit_phi());
    c.r = Some(4.0);
    c.lambdas = Some(vec![-0.4, -0.2, 0.1, 0.3]);
    c.mode = Some("mc".into());
    c.n = Some(4000);
    battery.push(c);

    let mut c = blank("theorem1");
    c.phi = Some(unit_phi());
    c.schedule = Some(vec![
        point(40.0, 0.2),
        point(100.0, 0.1),
        point(400.0, 0.05),
        point(2500.0, 0.02),
    ]);
    battery.push(c);

    let mut c = blank("tail");
    c.phi = Some(unit_phi());
    c.r = Some(1e4);
    c.c = Some(2.0);
    c.method = Some("exact".into());
    c.tolerance = Some(0.05);
    battery.push(c);

    let mut c = blank("clt");
    c.phi = Some(unit_phi());
    c.r = Some(1024.0);
    c.n = Some(20_000);
    battery.push(c);

    let mut c = blank("bounds");
    c.base_side = Some(2.0);
    c.doublings = Some(6);
    battery.push(c);

    let mut c = blank("verify-split");
    c.r = Some(4.0);
    c.n = Some(1500);
    battery.push(c);

    let mut c = blank("properties");
    c.cases = Some(60);
    c.n = Some(1000);
    battery.push(c);

    battery
}
