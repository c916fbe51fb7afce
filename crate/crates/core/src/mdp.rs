//! Desk-scale experiments on the simulated fields: the linear-response
//! ratio scan, moderate-deviation tail estimates, a distributional
//! normality check, the half-space CGF sandwich at finite window size,
//! and step approximation of continuous test functions.

use crate::cgf;
use crate::error::{Error, Result};
use crate::fields::{FieldModel, ModelKind};
use crate::measure::{fmt_g12, Rect, Scaling, TestFunction};
use crate::rng::{stream_key, stream_rng, tags};
use crate::stats;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

/// Absolute budget for the normality check. It absorbs both the alpha =
/// 0.01 sampling threshold (below 0.0163 for n >= 10^4) and the finite
/// window bias that the normal limit leaves behind at desk scale.
pub const KS_BUDGET: f64 = 0.02;

/// One window in a scan: per-axis side lengths and the tilt parameter.
#[derive(Debug, Clone)]
pub struct ScanPoint {
    pub r: Vec<f64>,
    pub lambda: f64,
}

impl ScanPoint {
    pub fn volume(&self) -> f64 {
        self.r.iter().product()
    }

    /// The joint-limit control quantity |lambda| * (log r_eff)^d, where
    /// r_eff is the side of the cube with the same volume. Scans drive it
    /// to zero; schedules must make it strictly decreasing.
    pub fn constraint_value(&self) -> f64 {
        let d = self.r.len();
        let side = self.volume().powf(1.0 / d as f64);
        self.lambda.abs() * side.ln().powi(d as i32)
    }
}

/// A sequence of (window, lambda) pairs with the control quantity
/// |lambda| * log^d r strictly decreasing along the sequence.
#[derive(Debug, Clone)]
pub struct ScanSchedule {
    points: Vec<ScanPoint>,
}

impl ScanSchedule {
    pub fn new(points: Vec<ScanPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("schedule needs at least one point"));
        }
        let d = points[0].r.len();
        if d == 0 {
            return Err(Error::invalid("scan points need at least one axis"));
        }
        for (i, pt) in points.iter().enumerate() {
            if pt.r.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "scan point",
                    expected: d,
                    got: pt.r.len(),
                });
            }
            if pt.r.iter().any(|s| !s.is_finite() || *s <= 0.0) {
                return Err(Error::invalid(format!(
                    "scan point {i} needs finite positive sides"
                )));
            }
            let side = pt.volume().powf(1.0 / d as f64);
            if !(side > 1.0) {
                return Err(Error::invalid(format!(
                    "scan point {i} needs effective side > 1 so its log is positive"
                )));
            }
            if !pt.lambda.is_finite() || pt.lambda == 0.0 {
                return Err(Error::invalid(format!(
                    "scan point {i} needs a finite nonzero lambda"
                )));
            }
        }
        for (i, w) in points.windows(2).enumerate() {
            let (a, b) = (w[0].constraint_value(), w[1].constraint_value());
            if !(b < a) {
                return Err(Error::invalid(format!(
                    "schedule constraint lambda * log^d r must be strictly decreasing: \
                     point {} has {} after {}",
                    i + 1,
                    fmt_g12(b),
                    fmt_g12(a)
                )));
            }
        }
        Ok(ScanSchedule { points })
    }

    /// Cubic windows of side r per point.
    pub fn isotropic(dim: usize, pairs: &[(f64, f64)]) -> Result<Self> {
        ScanSchedule::new(
            pairs
                .iter()
                .map(|&(r, lambda)| ScanPoint {
                    r: vec![r; dim],
                    lambda,
                })
                .collect(),
        )
    }

    pub fn points(&self) -> &[ScanPoint] {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.points[0].r.len()
    }
}

/// How a scan evaluates the CGF: closed form, or Monte Carlo with CIs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgfMode {
    Analytic,
    Mc,
}

/// One evaluated scan point: the normalized ratio cgf / (vol * lambda^2)
/// and its distance from the limit value.
#[derive(Debug, Clone)]
pub struct ScanPointResult {
    pub r: Vec<f64>,
    pub lambda: f64,
    pub constraint: f64,
    pub ratio: f64,
    pub ci: Option<(f64, f64)>,
    pub deviation: f64,
    pub unstable: bool,
}

#[derive(Debug, Clone)]
pub struct Theorem1Report {
    /// Limit value of the ratio: half the squared L2 norm of phi times the
    /// variance density of the field.
    pub target: f64,
    pub sigma: f64,
    pub points: Vec<ScanPointResult>,
    pub max_abs_deviation: f64,
    pub any_unstable: bool,
}

/// Evaluates the ratio cgf(lambda, r, phi) / (vol(r) * lambda^2) along a
/// schedule and compares it with the limit (1/2) ||phi||^2 sigma^2. The
/// ratio depends on the window through its volume only, so anisotropic
/// points are normalized the same way as cubes.
pub fn theorem1_scan(
    model: &FieldModel,
    phi: &TestFunction,
    schedule: &ScanSchedule,
    mode: CgfMode,
    n: usize,
    seed: u64,
) -> Result<Theorem1Report> {
    if phi.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "theorem1_scan phi",
            expected: model.dim(),
            got: phi.dim(),
        });
    }
    if schedule.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "theorem1_scan schedule",
            expected: model.dim(),
            got: schedule.dim(),
        });
    }
    let target = 0.5 * phi.l2_norm_sq() * model.sigma_sq();
    let mut points = Vec::with_capacity(schedule.points().len());
    for (idx, pt) in schedule.points().iter().enumerate() {
        let scale = Scaling::new(pt.r.clone())?;
        let denom = scale.volume() * pt.lambda * pt.lambda;
        let (ratio, ci, unstable) = match mode {
            CgfMode::Analytic => {
                let v = cgf::analytic_cgf(model, phi, &scale, pt.lambda)?;
                (v / denom, None, false)
            }
            CgfMode::Mc => {
                let point_seed = stream_key(seed, &[tags::CASES, idx as u64]);
                let draws = cgf::mc_draws(model, phi, &scale, n, point_seed)?;
                let est = cgf::estimate_from_draws(&draws, pt.lambda, point_seed, 0);
                let ci = (est.ci_low / denom, est.ci_high / denom);
                (est.value / denom, Some(ci), est.unstable)
            }
        };
        points.push(ScanPointResult {
            r: pt.r.clone(),
            lambda: pt.lambda,
            constraint: pt.constraint_value(),
            ratio,
            ci,
            deviation: ratio - target,
            unstable,
        });
    }
    let max_abs_deviation = points
        .iter()
        .map(|p| p.deviation.abs())
        .fold(0.0, f64::max);
    let any_unstable = points.iter().any(|p| p.unstable);
    Ok(Theorem1Report {
        target,
        sigma: model.sigma(),
        points,
        max_abs_deviation,
        any_unstable,
    })
}

/// Tail estimation method: exact count summation, tilted Monte Carlo with
/// the mean shifted onto the event, or plain Monte Carlo counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailMethod {
    Exact,
    Tilted,
    Plain,
}

#[derive(Debug, Clone)]
pub struct TailReport {
    pub r: f64,
    pub c: f64,
    /// The event is {integral of phi(t/r) against the field >= threshold}
    /// with threshold = c * ||phi|| * sigma * r^(d/2).
    pub threshold: f64,
    pub log_prob: f64,
    pub ci_log_prob: Option<(f64, f64)>,
    /// log P / c^2. Converges to -1/2 only when c grows with r; at fixed c
    /// it carries the O(log c / c^2) prefactor of the normal tail.
    pub rate_plain: f64,
    /// -z^2 / (2 c^2) with z the upper normal quantile of the estimated
    /// probability. Removes the prefactor, so it tends to -1/2 at fixed c.
    pub rate_calibrated: f64,
    pub ci_rate_calibrated: Option<(f64, f64)>,
    pub events: Option<usize>,
    pub low_events: bool,
    pub method: &'static str,
}

fn calibrated_rate(log_prob: f64, c: f64) -> f64 {
    let p = log_prob.exp();
    if !(p > 0.0 && p < 1.0) {
        return f64::NAN;
    }
    let z = stats::normal_isf(p);
    -(z * z) / (2.0 * c * c)
}

fn calibrated_ci(ci: (f64, f64), c: f64) -> (f64, f64) {
    let (a, b) = (calibrated_rate(ci.0, c), calibrated_rate(ci.1, c));
    (a.min(b), a.max(b))
}

/// For a Poisson model and a single-level nonnegative phi, the scaled
/// integral is mass * level * (N - Lambda) with N a Poisson count, so the
/// tail event {integral >= c ||phi|| sigma r^(d/2)} is exactly
/// {N >= Lambda + c sqrt(Lambda)}. Returns (Lambda, k0).
fn poisson_count_event(
    model: &FieldModel,
    phi: &TestFunction,
    r: f64,
    c: f64,
    method: &str,
) -> Result<(f64, u64)> {
    let intensity = match model.kind() {
        ModelKind::CenteredPoisson { intensity, .. } => *intensity,
        _ => {
            return Err(Error::unsupported(format!(
                "{method} tail needs the pure Poisson count model, got {}",
                model.name()
            )))
        }
    };
    let level = phi.pieces()[0].1;
    if !(level > 0.0) || phi.pieces().iter().any(|(_, v)| *v != level) {
        return Err(Error::unsupported(format!(
            "{method} tail needs phi at one positive level so the event is a count"
        )));
    }
    let vol_b: f64 = phi.pieces().iter().map(|(b, _)| b.volume()).sum();
    let lam = intensity * vol_b * r.powi(model.dim() as i32);
    if !(lam > 0.0 && lam <= 1e9) {
        return Err(Error::precondition(
            "tail count mean must lie in (0, 1e9] at desk scale",
        ));
    }
    Ok((lam, (lam + c * lam.sqrt()).ceil() as u64))
}

/// Estimates (1/c^2) log P[integral of phi(t/r) against the field exceeds
/// c ||phi|| sigma r^(d/2)]. Exact and tilted methods require the Poisson
/// count reduction; plain counting works for every model but is flagged
/// when fewer than 50 events land in the sample.
pub fn mdp_tail(
    model: &FieldModel,
    phi: &TestFunction,
    r: f64,
    c: f64,
    method: TailMethod,
    n: usize,
    seed: u64,
) -> Result<TailReport> {
    if phi.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "mdp_tail phi",
            expected: model.dim(),
            got: phi.dim(),
        });
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::invalid("window side r must be positive and finite"));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid("tail level c must be positive and finite"));
    }
    let sigma_phi = phi.l2_norm_sq().sqrt() * model.sigma();
    if !(sigma_phi > 0.0) {
        return Err(Error::precondition(
            "tail threshold needs ||phi|| sigma > 0, the scaling is degenerate otherwise",
        ));
    }
    let d = model.dim() as i32;
    let threshold = c * sigma_phi * r.powi(d).sqrt();
    let c2 = c * c;
    match method {
        TailMethod::Exact => {
            let (lam, k0) = poisson_count_event(model, phi, r, c, "exact")?;
            let log_prob = stats::poisson_log_sf(lam, k0);
            Ok(TailReport {
                r,
                c,
                threshold,
                log_prob,
                ci_log_prob: None,
                rate_plain: log_prob / c2,
                rate_calibrated: calibrated_rate(log_prob, c),
                ci_rate_calibrated: None,
                events: None,
                low_events: false,
                method: "exact",
            })
        }
        TailMethod::Tilted => {
            let (lam, k0) = poisson_count_event(model, phi, r, c, "tilted")?;
            if n < 1000 {
                return Err(Error::precondition("tilted tail needs n >= 1000"));
            }
            // Tilting the count law by e^(ls * N) with ls solving the mean
            // shift equation Lambda e^ls = k0 turns the rare event into an
            // even chance; the importance weights on the event lie in [0, 1].
            let ls = (k0 as f64 / lam).ln();
            let pois = Poisson::new(k0 as f64)
                .map_err(|_| Error::invalid("tilted count mean must be positive"))?;
            let k0f = k0 as f64;
            let terms: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut rng = stream_rng(seed, &[tags::TAIL, i as u64]);
                    let count: f64 = pois.sample(&mut rng);
                    if count >= k0f {
                        (ls * (k0f - count)).exp()
                    } else {
                        0.0
                    }
                })
                .collect();
            let events = terms.iter().filter(|t| **t > 0.0).count();
            let shift = lam * (k0f / lam - 1.0) - ls * k0f;
            let log_prob = shift + stats::mean(&terms).ln();
            let ci = stats::bootstrap_mean_ci(&terms, |m| shift + m.ln(), 1000, 0.05, seed, 1);
            Ok(TailReport {
                r,
                c,
                threshold,
                log_prob,
                ci_log_prob: Some(ci),
                rate_plain: log_prob / c2,
                rate_calibrated: calibrated_rate(log_prob, c),
                ci_rate_calibrated: Some(calibrated_ci(ci, c)),
                events: Some(events),
                low_events: events < 50,
                method: "tilted",
            })
        }
        TailMethod::Plain => {
            if n < 1000 {
                return Err(Error::precondition("plain tail needs n >= 1000"));
            }
            let scale = Scaling::uniform(model.dim(), r)?;
            let terms: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|i| -> Result<f64> {
                    let s = model.integral_scaled_fast(
                        phi,
                        &scale,
                        stream_key(seed, &[tags::TAIL, i as u64]),
                    )?;
                    Ok(if s >= threshold { 1.0 } else { 0.0 })
                })
                .collect::<Result<_>>()?;
            let events = terms.iter().filter(|t| **t > 0.0).count();
            let log_prob = stats::mean(&terms).ln();
            let ci = stats::bootstrap_mean_ci(&terms, |m| m.ln(), 1000, 0.05, seed, 1);
            Ok(TailReport {
                r,
                c,
                threshold,
                log_prob,
                ci_log_prob: Some(ci),
                rate_plain: log_prob / c2,
                rate_calibrated: calibrated_rate(log_prob, c),
                ci_rate_calibrated: Some(calibrated_ci(ci, c)),
                events: Some(events),
                low_events: events < 50,
                method: "plain",
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CltVerdict {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone)]
pub struct CltReport {
    pub n: usize,
    pub sigma_phi: f64,
    pub ks: f64,
    /// Pure sampling threshold at alpha = 0.01, reported for context; the
    /// verdict compares against the absolute budget.
    pub stat_threshold: f64,
    pub threshold: f64,
    pub verdict: CltVerdict,
    pub note: String,
}

/// KS distance between the law of the normalized window integral
/// r^(-d/2) * integral of phi(t/r) against the field and the centered
/// normal with standard deviation ||phi|| sigma. Skipped when that
/// deviation vanishes, since the limit degenerates to a point mass.
pub fn clt_check(
    model: &FieldModel,
    phi: &TestFunction,
    r: f64,
    n: usize,
    seed: u64,
) -> Result<CltReport> {
    if phi.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "clt_check phi",
            expected: model.dim(),
            got: phi.dim(),
        });
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::invalid("window side r must be positive and finite"));
    }
    if n < 10_000 {
        return Err(Error::precondition("clt_check needs n >= 10^4"));
    }
    let sigma_phi = phi.l2_norm_sq().sqrt() * model.sigma();
    let stat_threshold = stats::ks_quantile(0.01) / (n as f64).sqrt();
    if !(sigma_phi > 0.0) {
        return Ok(CltReport {
            n,
            sigma_phi,
            ks: f64::NAN,
            stat_threshold,
            threshold: KS_BUDGET,
            verdict: CltVerdict::Skipped,
            note: "hypothesis ||phi|| sigma != 0 violated: the limit degenerates, \
                   normality check skipped"
                .into(),
        });
    }
    let scale = Scaling::uniform(model.dim(), r)?;
    let norm = r.powi(model.dim() as i32).sqrt();
    let data: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            model
                .integral_scaled_fast(phi, &scale, stream_key(seed, &[tags::MC_DRAW, i as u64]))
                .map(|s| s / norm)
        })
        .collect::<Result<_>>()?;
    let ks = stats::ks_one_sample(&data, |x| stats::normal_cdf(x / sigma_phi));
    let verdict = if ks <= KS_BUDGET {
        CltVerdict::Pass
    } else {
        CltVerdict::Fail
    };
    Ok(CltReport {
        n,
        sigma_phi,
        ks,
        stat_threshold,
        threshold: KS_BUDGET,
        verdict,
        note: format!(
            "ks {} against budget {} (sampling part {})",
            fmt_g12(ks),
            fmt_g12(KS_BUDGET),
            fmt_g12(stat_threshold)
        ),
    })
}

/// One lambda of the half-space sandwich. Slack is how far the bound holds;
/// a negative slack within the allowance is Monte Carlo noise, below the
/// allowance it is a violation.
#[derive(Debug, Clone)]
pub struct HalfspacePoint {
    pub lambda: f64,
    pub whole: f64,
    pub lower: f64,
    pub upper: f64,
    pub lower_slack: f64,
    pub upper_slack: f64,
    pub lower_allowance: f64,
    pub upper_allowance: f64,
    pub unstable: bool,
}

#[derive(Debug, Clone)]
pub struct HalfspaceReport {
    pub p: f64,
    pub points: Vec<HalfspacePoint>,
    /// Largest |cgf(whole) - cgf(left) - cgf(right)| over the grid, present
    /// for the Poisson model where the two halves are independent.
    pub additive_gap: Option<f64>,
    pub min_lower_slack: f64,
    pub min_upper_slack: f64,
    pub any_unstable: bool,
    pub ok: bool,
}

/// Splits phi along the hyperplane {first coordinate = 0}; pieces that
/// straddle it are cut in two.
fn split_at_zero(phi: &TestFunction) -> Result<(Option<TestFunction>, Option<TestFunction>)> {
    let mut lo_pieces = Vec::new();
    let mut hi_pieces = Vec::new();
    for (b, v) in phi.pieces() {
        if b.upper[0] <= 0.0 {
            lo_pieces.push((b.clone(), *v));
        } else if b.lower[0] >= 0.0 {
            hi_pieces.push((b.clone(), *v));
        } else {
            let mut left = b.clone();
            left.upper[0] = 0.0;
            let mut right = b.clone();
            right.lower[0] = 0.0;
            lo_pieces.push((left, *v));
            hi_pieces.push((right, *v));
        }
    }
    let build = |pieces: Vec<(Rect, f64)>| -> Result<Option<TestFunction>> {
        if pieces.is_empty() {
            Ok(None)
        } else {
            TestFunction::new(pieces, phi.sup_error()).map(Some)
        }
    };
    Ok((build(lo_pieces)?, build(hi_pieces)?))
}

/// Checks, at finite window size, the two-sided bound on the CGF of the
/// whole integral I in terms of the integrals I- and I+ over the two
/// half-spaces {t_1 < 0} and {t_1 >= 0}:
///   p cgf-(l/p) - (p-1) cgf+(-l/(p-1)) <= cgf(l)
///       <= (1/p) cgf-(p l) + ((p-1)/p) cgf+(p l / (p-1)).
/// The analytic mode demands the bound up to rounding; the Monte Carlo mode
/// allows slack up to the combined CI half-widths. For the Poisson model
/// the halves are independent, so the additive identity is checked too.
pub fn halfspace_inequality(
    model: &FieldModel,
    phi: &TestFunction,
    r: f64,
    p: f64,
    lambdas: &[f64],
    mode: CgfMode,
    n: usize,
    seed: u64,
) -> Result<HalfspaceReport> {
    if phi.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "halfspace phi",
            expected: model.dim(),
            got: phi.dim(),
        });
    }
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::invalid("Hoelder exponent must exceed 1"));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::invalid("window side r must be positive and finite"));
    }
    if lambdas.is_empty() || lambdas.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("need a nonempty grid of finite lambdas"));
    }
    let (minus, plus) = split_at_zero(phi)?;
    let scale = Scaling::uniform(model.dim(), r)?;
    let q = p - 1.0;

    let analytic_part = |tf: &Option<TestFunction>, l: f64| -> Result<f64> {
        match tf {
            Some(t) => cgf::analytic_cgf(model, t, &scale, l),
            None => Ok(0.0),
        }
    };

    let mut points = Vec::with_capacity(lambdas.len());
    match mode {
        CgfMode::Analytic => {
            for &l in lambdas {
                let whole = cgf::analytic_cgf(model, phi, &scale, l)?;
                let lower = p * analytic_part(&minus, l / p)? - q * analytic_part(&plus, -l / q)?;
                let upper =
                    analytic_part(&minus, p * l)? / p + (q / p) * analytic_part(&plus, p * l / q)?;
                let allow = 1e-10 * (1.0 + whole.abs() + lower.abs() + upper.abs());
                points.push(HalfspacePoint {
                    lambda: l,
                    whole,
                    lower,
                    upper,
                    lower_slack: whole - lower,
                    upper_slack: upper - whole,
                    lower_allowance: allow,
                    upper_allowance: allow,
                    unstable: false,
                });
            }
        }
        CgfMode::Mc => {
            if n < 1000 {
                return Err(Error::precondition("halfspace MC needs n >= 1000"));
            }
            // One realization per replicate feeds all three integrals, so
            // the three CGF estimates share every sampled configuration.
            let window = phi.support().scaled(&scale);
            let draws: Vec<(f64, f64, f64)> = (0..n)
                .into_par_iter()
                .map(|i| -> Result<(f64, f64, f64)> {
                    let m = model.sample(&window, stream_key(seed, &[tags::MC_DRAW, i as u64]))?;
                    let w = m.integrate_scaled(phi, &scale)?;
                    let a = match &minus {
                        Some(t) => m.integrate_scaled(t, &scale)?,
                        None => 0.0,
                    };
                    let b = match &plus {
                        Some(t) => m.integrate_scaled(t, &scale)?,
                        None => 0.0,
                    };
                    Ok((w, a, b))
                })
                .collect::<Result<_>>()?;
            let whole_d: Vec<f64> = draws.iter().map(|t| t.0).collect();
            let minus_d: Vec<f64> = draws.iter().map(|t| t.1).collect();
            let plus_d: Vec<f64> = draws.iter().map(|t| t.2).collect();
            let half_width = |e: &cgf::CgfEstimate| 0.5 * (e.ci_high - e.ci_low);
            for (idx, &l) in lambdas.iter().enumerate() {
                let t = (idx as u64) * 8;
                let ew = cgf::estimate_from_draws(&whole_d, l, seed, t);
                let el1 = cgf::estimate_from_draws(&minus_d, l / p, seed, t + 1);
                let el2 = cgf::estimate_from_draws(&plus_d, -l / q, seed, t + 2);
                let eu1 = cgf::estimate_from_draws(&minus_d, p * l, seed, t + 3);
                let eu2 = cgf::estimate_from_draws(&plus_d, p * l / q, seed, t + 4);
                let lower = p * el1.value - q * el2.value;
                let upper = eu1.value / p + (q / p) * eu2.value;
                let lower_allowance =
                    p * half_width(&el1) + q * half_width(&el2) + half_width(&ew) + 1e-12;
                let upper_allowance =
                    half_width(&eu1) / p + (q / p) * half_width(&eu2) + half_width(&ew) + 1e-12;
                points.push(HalfspacePoint {
                    lambda: l,
                    whole: ew.value,
                    lower,
                    upper,
                    lower_slack: ew.value - lower,
                    upper_slack: upper - ew.value,
                    lower_allowance,
                    upper_allowance,
                    unstable: ew.unstable
                        || el1.unstable
                        || el2.unstable
                        || eu1.unstable
                        || eu2.unstable,
                });
            }
        }
    }

    let additive_gap = match model.kind() {
        ModelKind::CenteredPoisson { .. } => {
            let mut gap = 0.0f64;
            for &l in lambdas {
                let whole = cgf::analytic_cgf(model, phi, &scale, l)?;
                let sum = analytic_part(&minus, l)? + analytic_part(&plus, l)?;
                gap = gap.max((whole - sum).abs());
            }
            Some(gap)
        }
        _ => None,
    };
    let min_lower_slack = points
        .iter()
        .map(|pt| pt.lower_slack)
        .fold(f64::INFINITY, f64::min);
    let min_upper_slack = points
        .iter()
        .map(|pt| pt.upper_slack)
        .fold(f64::INFINITY, f64::min);
    let any_unstable = points.iter().any(|pt| pt.unstable);
    let sandwich_ok = points
        .iter()
        .all(|pt| pt.lower_slack >= -pt.lower_allowance && pt.upper_slack >= -pt.upper_allowance);
    let additive_ok = additive_gap.is_none_or(|g| g <= 1e-10);
    Ok(HalfspaceReport {
        p,
        points,
        additive_gap,
        min_lower_slack,
        min_upper_slack,
        any_unstable,
        ok: sandwich_ok && additive_ok,
    })
}

/// A continuous compactly supported target to approximate by a step
/// function: an existing step function (returned as is), a tent, or a
/// raised-cosine bump. The two continuous shapes live on [lo, hi).
#[derive(Debug, Clone)]
pub enum ContinuousTarget {
    Step(TestFunction),
    Tent { lo: f64, hi: f64, height: f64 },
    CosineBump { lo: f64, hi: f64, height: f64 },
}

impl ContinuousTarget {
    fn interval(&self) -> Result<(f64, f64, f64)> {
        let (lo, hi, height) = match self {
            ContinuousTarget::Step(_) => {
                return Err(Error::invalid("step targets carry their own support"))
            }
            ContinuousTarget::Tent { lo, hi, height } => (*lo, *hi, *height),
            ContinuousTarget::CosineBump { lo, hi, height } => (*lo, *hi, *height),
        };
        if !(lo.is_finite() && hi.is_finite() && hi > lo) || !height.is_finite() {
            return Err(Error::invalid(
                "continuous target needs finite bounds with hi > lo and finite height",
            ));
        }
        Ok((lo, hi, height))
    }

    /// Best Lipschitz constant of the target, the modulus that converts a
    /// sup-error budget into a mesh.
    pub fn lipschitz(&self) -> f64 {
        match self {
            ContinuousTarget::Step(_) => 0.0,
            ContinuousTarget::Tent { lo, hi, height } => 2.0 * height.abs() / (hi - lo),
            ContinuousTarget::CosineBump { lo, hi, height } => {
                std::f64::consts::PI * height.abs() / (hi - lo)
            }
        }
    }

    /// Exact squared L2 norm of the target.
    pub fn l2_norm_sq(&self) -> f64 {
        match self {
            ContinuousTarget::Step(f) => f.l2_norm_sq(),
            ContinuousTarget::Tent { lo, hi, height } => height * height * (hi - lo) / 3.0,
            ContinuousTarget::CosineBump { lo, hi, height } => {
                3.0 * height * height * (hi - lo) / 8.0
            }
        }
    }

    pub fn support_volume(&self) -> f64 {
        match self {
            ContinuousTarget::Step(f) => f.support().volume(),
            ContinuousTarget::Tent { lo, hi, .. } => hi - lo,
            ContinuousTarget::CosineBump { lo, hi, .. } => hi - lo,
        }
    }

    /// Pointwise value along the axis; step targets answer only in
    /// dimension one.
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            ContinuousTarget::Step(f) => {
                if f.dim() == 1 {
                    f.eval(&[t])
                } else {
                    0.0
                }
            }
            ContinuousTarget::Tent { lo, hi, height } => {
                if t < *lo || t >= *hi {
                    return 0.0;
                }
                let half = 0.5 * (hi - lo);
                let mid = lo + half;
                height * (1.0 - (t - mid).abs() / half)
            }
            ContinuousTarget::CosineBump { lo, hi, height } => {
                if t < *lo || t >= *hi {
                    return 0.0;
                }
                let w = hi - lo;
                let mid = lo + 0.5 * w;
                0.5 * height * (1.0 + (2.0 * std::f64::consts::PI * (t - mid) / w).cos())
            }
        }
    }
}

/// Replaces a continuous target by a step function on a uniform mesh fine
/// enough that the sup error stays within eps: mesh = eps / L for a target
/// with Lipschitz constant L, sampled at cell centers, which lands the
/// actual error at L * mesh / 2. Step targets pass through unchanged.
pub fn step_approximate(target: &ContinuousTarget, eps: f64) -> Result<TestFunction> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid("sup-error budget eps must be positive"));
    }
    if let ContinuousTarget::Step(f) = target {
        return Ok(f.clone());
    }
    let (lo, hi, _) = target.interval()?;
    let width = hi - lo;
    let lip = target.lipschitz();
    if lip == 0.0 {
        let mid = lo + 0.5 * width;
        return TestFunction::new(
            vec![(Rect::interval(lo, hi)?, target.eval(mid))],
            0.0,
        );
    }
    let n_pieces = ((width * lip / eps).ceil() as usize).max(1);
    let mesh = width / n_pieces as f64;
    let mut pieces = Vec::with_capacity(n_pieces);
    for k in 0..n_pieces {
        let a = lo + k as f64 * mesh;
        let b = if k + 1 == n_pieces {
            hi
        } else {
            lo + (k + 1) as f64 * mesh
        };
        let center = lo + (k as f64 + 0.5) * mesh;
        pieces.push((Rect::interval(a, b)?, target.eval(center)));
    }
    TestFunction::new(pieces, 0.5 * lip * mesh)
}
