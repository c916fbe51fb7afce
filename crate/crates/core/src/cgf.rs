//! Cumulant generating functions of field integrals.
//!
//! For every model in the zoo the CGF of the scaled integral has a closed
//! form or reduces to a low-dimensional smooth integral evaluated by
//! breakpoint-aligned Gauss-Legendre quadrature. The Monte-Carlo estimator
//! provides the independent cross-check: log-mean-exp with max shift,
//! percentile-bootstrap intervals, and an effective-sample-size flag.

use crate::error::{Error, Result};
use crate::fields::{CellLaw, FieldModel, ModelKind};
use crate::measure::{Rect, Scaling, TestFunction};
use crate::rng::{stream_key, tags};
use crate::stats;
use rand::Rng;
use rayon::prelude::*;

/// One point of an estimated CGF curve.
#[derive(Debug, Clone, Copy)]
pub struct CgfEstimate {
    pub lambda: f64,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub ess: f64,
    pub unstable: bool,
}

/// e^x - 1 - x without cancellation near zero.
pub fn exp_m1_mx(x: f64) -> f64 {
    if x.abs() < 9e-3 {
        let x2 = x * x;
        x2 * (0.5
            + x * (1.0 / 6.0
                + x * (1.0 / 24.0 + x * (1.0 / 120.0 + x * (1.0 / 720.0 + x / 5040.0)))))
    } else {
        x.exp_m1() - x
    }
}

/// log cosh x, stable for large |x|.
pub fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// log(sinh x / x), the CGF of a uniform density on [-1, 1] at x; even, 0 at 0.
pub fn ln_sinhc(x: f64) -> f64 {
    let a = x.abs();
    if a < 1e-4 {
        let a2 = a * a;
        a2 / 6.0 - a2 * a2 / 180.0
    } else {
        a + (-(-2.0 * a).exp()).ln_1p() - (2.0 * a).ln()
    }
}

/// Exact CGF of the scaled integral: log E exp(lambda * integral of
/// phi(t / scale) against the field). Closed form per piece for the Poisson
/// and block models; aligned tensor quadrature for the kernel model.
pub fn analytic_cgf(
    model: &FieldModel,
    phi: &TestFunction,
    scale: &Scaling,
    lambda: f64,
) -> Result<f64> {
    if !model.has_exact_cgf() {
        return Err(Error::unsupported(format!(
            "model {} has no exact CGF",
            model.name()
        )));
    }
    if phi.dim() != model.dim() || scale.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "analytic_cgf",
            expected: model.dim(),
            got: if phi.dim() != model.dim() {
                phi.dim()
            } else {
                scale.dim()
            },
        });
    }
    if !lambda.is_finite() {
        return Err(Error::invalid("lambda must be finite"));
    }
    match model.kind() {
        ModelKind::CenteredPoisson { intensity, mass } => {
            // Independent increments: each piece contributes
            // intensity * vol * (e^{lambda * mass * value} - 1 - ...).
            let mut acc = 0.0f64;
            for (b, v) in phi.pieces() {
                acc += intensity * b.scaled(scale).volume() * exp_m1_mx(lambda * mass * v);
            }
            Ok(acc)
        }
        ModelKind::ShotNoise {
            intensity,
            mass,
            kernel,
        } => {
            // The integral is a compensated Poisson functional of the
            // correlation g(p) = integral of phi(t/scale) kernel(t - p) dt:
            // CGF = intensity * integral of (e^{lambda mass g(p)} - 1 - ...) dp.
            // g is multilinear between breakpoints, so per-cell tensor
            // Gauss-Legendre converges to machine precision.
            let d = model.dim();
            let grids: Vec<Vec<f64>> = (0..d)
                .map(|i| correlation_breakpoints(phi, scale, kernel, i))
                .collect();
            let (nodes, weights) = gauss_legendre_32();
            if grids.iter().any(|g| g.len() < 2) {
                return Ok(0.0);
            }
            let mut acc = 0.0f64;
            let mut cell_idx = vec![0usize; d];
            loop {
                let lo: Vec<f64> = (0..d).map(|i| grids[i][cell_idx[i]]).collect();
                let hi: Vec<f64> = (0..d).map(|i| grids[i][cell_idx[i] + 1]).collect();
                acc += quad_cell(&lo, &hi, &nodes, &weights, &mut |p| {
                    exp_m1_mx(lambda * mass * correlation(phi, scale, kernel, p))
                });
                // Advance the multi-index.
                let mut axis = d;
                loop {
                    if axis == 0 {
                        return Ok(intensity * acc);
                    }
                    axis -= 1;
                    cell_idx[axis] += 1;
                    if cell_idx[axis] + 1 < grids[axis].len() {
                        break;
                    }
                    cell_idx[axis] = 0;
                }
            }
        }
        ModelKind::BlockIid { law } => {
            // One independent value per unit cell: sum over cells of the
            // cell law's CGF at lambda times the cell's phi-mass.
            let support = phi.support().scaled(scale);
            let mut acc = 0.0f64;
            let lo: Vec<i64> = support.lower.iter().map(|l| l.floor() as i64).collect();
            let hi: Vec<i64> = support.upper.iter().map(|u| u.ceil() as i64).collect();
            let mut k = lo.clone();
            if k.iter().zip(&hi).any(|(a, b)| a >= b) {
                return Ok(0.0);
            }
            loop {
                let cell = Rect {
                    lower: k.iter().map(|&i| i as f64).collect(),
                    upper: k.iter().map(|&i| (i + 1) as f64).collect(),
                };
                let mut a = 0.0f64;
                for (b, v) in phi.pieces() {
                    if let Some(inter) = cell.intersection(&b.scaled(scale)) {
                        a += v * inter.volume();
                    }
                }
                if a != 0.0 {
                    acc += match law {
                        CellLaw::Rademacher { scale: s } => ln_cosh(lambda * a * s),
                        CellLaw::Uniform { bound } => ln_sinhc(lambda * a * bound),
                    };
                }
                let mut axis = model.dim();
                loop {
                    if axis == 0 {
                        return Ok(acc);
                    }
                    axis -= 1;
                    k[axis] += 1;
                    if k[axis] < hi[axis] {
                        break;
                    }
                    k[axis] = lo[axis];
                }
            }
        }
    }
}

fn correlation(phi: &TestFunction, scale: &Scaling, kernel: &TestFunction, p: &[f64]) -> f64 {
    let mut acc = 0.0f64;
    for (pb, pv) in phi.pieces() {
        for (kb, kv) in kernel.pieces() {
            let mut vol = 1.0f64;
            for i in 0..p.len() {
                let l = (pb.lower[i] * scale.factors[i]).max(kb.lower[i] + p[i]);
                let u = (pb.upper[i] * scale.factors[i]).min(kb.upper[i] + p[i]);
                if l >= u {
                    vol = 0.0;
                    break;
                }
                vol *= u - l;
            }
            acc += pv * kv * vol;
        }
    }
    acc
}

/// Axis-i breakpoints of p -> correlation(...): every difference of a scaled
/// phi boundary and a kernel boundary, deduplicated and sorted.
fn correlation_breakpoints(
    phi: &TestFunction,
    scale: &Scaling,
    kernel: &TestFunction,
    axis: usize,
) -> Vec<f64> {
    let mut phi_b = Vec::new();
    for (b, _) in phi.pieces() {
        phi_b.push(b.lower[axis] * scale.factors[axis]);
        phi_b.push(b.upper[axis] * scale.factors[axis]);
    }
    let mut ker_b = Vec::new();
    for (b, _) in kernel.pieces() {
        ker_b.push(b.lower[axis]);
        ker_b.push(b.upper[axis]);
    }
    let mut pts: Vec<f64> = phi_b
        .iter()
        .flat_map(|pb| ker_b.iter().map(move |kb| pb - kb))
        .collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + a.abs()));
    pts
}

/// Tensor Gauss-Legendre integral of f over the box [lo, hi).
fn quad_cell(
    lo: &[f64],
    hi: &[f64],
    nodes: &[f64],
    weights: &[f64],
    f: &mut dyn FnMut(&[f64]) -> f64,
) -> f64 {
    let d = lo.len();
    let mut jac = 1.0f64;
    for i in 0..d {
        jac *= 0.5 * (hi[i] - lo[i]);
    }
    if jac == 0.0 {
        return 0.0;
    }
    let m = nodes.len();
    let mut idx = vec![0usize; d];
    let mut p = vec![0.0f64; d];
    let mut acc = 0.0f64;
    loop {
        let mut w = jac;
        for i in 0..d {
            p[i] = 0.5 * (lo[i] + hi[i]) + 0.5 * (hi[i] - lo[i]) * nodes[idx[i]];
            w *= weights[idx[i]];
        }
        acc += w * f(&p);
        let mut axis = d;
        loop {
            if axis == 0 {
                return acc;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < m {
                break;
            }
            idx[axis] = 0;
        }
    }
}

/// 32-point Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration
/// on the Legendre polynomial (symmetric, so only half are solved).
fn gauss_legendre_32() -> (Vec<f64>, Vec<f64>) {
    gauss_legendre(32)
}

pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0f64; n];
    let mut weights = vec![0.0f64; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev initial guess for the i-th root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0f64;
        for _ in 0..100 {
            // Evaluate P_n and P_n' by the three-term recurrence.
            let mut p0 = 1.0f64;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Independent draws of the scaled integral, shared across the lambda grid.
pub fn mc_draws(
    model: &FieldModel,
    phi: &TestFunction,
    scale: &Scaling,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n < 1000 {
        return Err(Error::Precondition("mc_cgf needs n >= 1000".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|i| model.integral_scaled_fast(phi, scale, stream_key(seed, &[tags::MC_DRAW, i as u64])))
        .collect()
}

/// CGF estimate at one lambda from precomputed draws: max-shifted
/// log-mean-exp, percentile-bootstrap CI (1000 resamples, 95%), effective
/// sample size (sum w)^2 / sum w^2 of the exponential weights.
pub fn estimate_from_draws(draws: &[f64], lambda: f64, seed: u64, tag: u64) -> CgfEstimate {
    let n = draws.len();
    if lambda == 0.0 {
        return CgfEstimate {
            lambda,
            value: 0.0,
            ci_low: 0.0,
            ci_high: 0.0,
            n,
            ess: n as f64,
            unstable: false,
        };
    }
    let shift = draws
        .iter()
        .map(|s| lambda * s)
        .fold(f64::NEG_INFINITY, f64::max);
    let terms: Vec<f64> = draws.iter().map(|s| (lambda * s - shift).exp()).collect();
    let sum: f64 = terms.iter().sum();
    let sum_sq: f64 = terms.iter().map(|w| w * w).sum();
    let ess = if sum_sq > 0.0 { sum * sum / sum_sq } else { 0.0 };
    let value = shift + (sum / n as f64).ln();
    let (lo, hi) = stats::bootstrap_mean_ci(&terms, |m| shift + m.ln(), 1000, 0.05, seed, tag);
    CgfEstimate {
        lambda,
        value,
        ci_low: lo.min(value),
        ci_high: hi.max(value),
        n,
        ess,
        unstable: ess < 0.01 * n as f64,
    }
}

/// Monte-Carlo CGF curve: one set of draws reused across the lambda grid.
pub fn mc_cgf(
    model: &FieldModel,
    phi: &TestFunction,
    scale: &Scaling,
    lambdas: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<CgfEstimate>> {
    let draws = mc_draws(model, phi, scale, n, seed)?;
    Ok(lambdas
        .iter()
        .enumerate()
        .map(|(j, &lam)| estimate_from_draws(&draws, lam, seed, j as u64))
        .collect())
}

/// Limit standard deviation of the normalized window integral.
pub fn sigma_of_model(
    model: &FieldModel,
    empirical: bool,
    r: f64,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if !empirical {
        return Ok(model.sigma());
    }
    if r < 16.0 {
        return Err(Error::Precondition(
            "empirical sigma needs r >= 16".into(),
        ));
    }
    if n < 10_000 {
        return Err(Error::Precondition(
            "empirical sigma needs n >= 10^4".into(),
        ));
    }
    let d = model.dim();
    let phi = TestFunction::indicator(Rect::new(vec![0.0; d], vec![1.0; d])?)?;
    let scale = Scaling::uniform(d, r)?;
    let vals: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            model
                .integral_scaled_fast(&phi, &scale, stream_key(seed, &[tags::MC_DRAW, i as u64]))
                .map(|x| x / r.powi(d as i32).sqrt())
        })
        .collect::<Result<_>>()?;
    Ok(stats::variance(&vals).sqrt())
}

/// Finite random variable given by outcomes and probabilities.
#[derive(Debug, Clone)]
pub struct DiscreteVar {
    outcomes: Vec<(f64, f64)>,
}

impl DiscreteVar {
    pub fn new(outcomes: Vec<(f64, f64)>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::invalid("need at least one outcome"));
        }
        let total: f64 = outcomes.iter().map(|(_, p)| p).sum();
        if outcomes.iter().any(|(z, p)| !z.is_finite() || !(*p > 0.0)) || !(total > 0.0) {
            return Err(Error::invalid("outcomes need finite values, positive probs"));
        }
        Ok(DiscreteVar {
            outcomes: outcomes.into_iter().map(|(z, p)| (z, p / total)).collect(),
        })
    }

    /// Symmetric two-point variable at +-a.
    pub fn sign(a: f64) -> Result<Self> {
        DiscreteVar::new(vec![(a, 0.5), (-a, 0.5)])
    }

    /// Mean-zero two-point variable (x, -y) with P[x] = p, rescaled so that
    /// E e^{|Z|} = 2 holds with equality.
    pub fn two_point_saturated(p: f64, skew: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) || !(skew > 0.0) {
            return Err(Error::invalid("need 0 < p < 1 and skew > 0"));
        }
        // Mean zero fixes the ratio of the outcomes; bisect the scale t so
        // p e^{t x} + (1-p) e^{t y} = 2 with x = skew (1-p)/p, y = skew.
        let x = skew * (1.0 - p) / p;
        let y = skew;
        let g = |t: f64| p * (t * x).exp() + (1.0 - p) * (t * y).exp() - 2.0;
        let mut hi = 1.0f64;
        while g(hi) < 0.0 {
            hi *= 2.0;
        }
        let mut lo = 0.0f64;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        DiscreteVar::new(vec![(t * x, p), (-t * y, 1.0 - p)])
    }

    pub fn outcomes(&self) -> &[(f64, f64)] {
        &self.outcomes
    }

    pub fn mean(&self) -> f64 {
        self.outcomes.iter().map(|(z, p)| z * p).sum()
    }

    /// E exp(|Z|).
    pub fn abs_exp_moment(&self) -> f64 {
        self.outcomes.iter().map(|(z, p)| p * z.abs().exp()).sum()
    }

    /// E exp(s Z).
    pub fn exp_moment(&self, s: f64) -> f64 {
        self.outcomes.iter().map(|(z, p)| p * (s * z).exp()).sum()
    }

    pub fn cgf(&self, lambda: f64) -> f64 {
        let logs: Vec<f64> = self
            .outcomes
            .iter()
            .map(|(z, p)| p.ln() + lambda * z)
            .collect();
        stats::log_sum_exp(&logs)
    }

    pub fn draw(&self, rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
        let u: f64 = rng.gen_range(0.0..1.0);
        let mut acc = 0.0;
        for (z, p) in &self.outcomes {
            acc += p;
            if u < acc {
                return *z;
            }
        }
        self.outcomes.last().unwrap().0
    }
}

/// Which moment premise a quadratic-bound check certifies before testing
/// log E e^{lambda Z} <= lambda^2 on [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubexpPremise {
    /// E exp|Z| <= 2 and E Z = 0.
    AbsExpTwo,
    /// E exp(+-Z) <= 5/4 and E Z = 0.
    QuarterBound,
}

#[derive(Debug, Clone)]
pub struct SubexpReport {
    pub premise: SubexpPremise,
    pub n_lambda: usize,
    /// Max over the grid of cgf(lambda) - lambda^2 (MC variant: of
    /// ci_low - lambda^2).
    pub max_slack: f64,
    pub ok: bool,
}

/// Exact quadratic-bound check on a finite variable. Refuses when the
/// premise itself fails, so a passing report certifies the implication on
/// the given grid.
pub fn subexp_quadratic_check(
    var: &DiscreteVar,
    premise: SubexpPremise,
    lambdas: &[f64],
) -> Result<SubexpReport> {
    let scale: f64 = var.outcomes().iter().map(|(z, _)| z.abs()).fold(1.0, f64::max);
    if var.mean().abs() > 1e-12 * scale {
        return Err(Error::precondition("premise requires E Z = 0"));
    }
    match premise {
        SubexpPremise::AbsExpTwo => {
            if var.abs_exp_moment() > 2.0 + 1e-12 {
                return Err(Error::precondition("premise requires E exp|Z| <= 2"));
            }
        }
        SubexpPremise::QuarterBound => {
            if var.exp_moment(1.0) > 1.25 + 1e-12 || var.exp_moment(-1.0) > 1.25 + 1e-12 {
                return Err(Error::precondition("premise requires E exp(+-Z) <= 5/4"));
            }
        }
    }
    let mut max_slack = f64::NEG_INFINITY;
    let mut n_lambda = 0;
    for &lam in lambdas {
        if lam.abs() > 1.0 + 1e-15 {
            continue;
        }
        n_lambda += 1;
        max_slack = max_slack.max(var.cgf(lam) - lam * lam);
    }
    Ok(SubexpReport {
        premise,
        n_lambda,
        max_slack,
        ok: max_slack <= 1e-12,
    })
}

/// Monte-Carlo quadratic-bound check for a sampled variable whose premise is
/// certified externally; the conclusion is contradicted only when the lower
/// confidence bound exceeds lambda^2.
pub fn subexp_quadratic_check_sampled(
    draw: impl Fn(u64) -> f64 + Sync,
    premise: SubexpPremise,
    premise_certified: bool,
    lambdas: &[f64],
    n: usize,
    seed: u64,
) -> Result<SubexpReport> {
    if !premise_certified {
        return Err(Error::precondition(
            "sampled check requires an externally certified premise",
        ));
    }
    let draws: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| draw(stream_key(seed, &[tags::CASES, i as u64])))
        .collect();
    let mut max_slack = f64::NEG_INFINITY;
    let mut n_lambda = 0;
    for (j, &lam) in lambdas.iter().enumerate() {
        if lam.abs() > 1.0 + 1e-15 {
            continue;
        }
        n_lambda += 1;
        let est = estimate_from_draws(&draws, lam, seed, j as u64);
        max_slack = max_slack.max(est.ci_low - lam * lam);
    }
    Ok(SubexpReport {
        premise,
        n_lambda,
        max_slack,
        ok: max_slack <= 0.0,
    })
}

#[derive(Debug, Clone)]
pub struct HolderReport {
    pub max_lower_violation: f64,
    pub max_upper_violation: f64,
    pub ok: bool,
}

/// Checks the two-sided Hoelder sandwich for cgf_{X+Y} against cgf_X and
/// cgf_Y at every lambda:
///   p cgf_X(l/p) - (p-1) cgf_Y(-l/(p-1)) <= cgf_{X+Y}(l)
///                 <= (1/p) cgf_X(p l) + ((p-1)/p) cgf_Y(p l / (p-1)).
pub fn holder_sandwich_check(
    cgf_x: &dyn Fn(f64) -> f64,
    cgf_y: &dyn Fn(f64) -> f64,
    cgf_xy: &dyn Fn(f64) -> f64,
    p: f64,
    lambdas: &[f64],
    tol: f64,
) -> Result<HolderReport> {
    if !(p > 1.0) {
        return Err(Error::invalid("Hoelder exponent must exceed 1"));
    }
    let q = p - 1.0;
    let mut lower_v = f64::NEG_INFINITY;
    let mut upper_v = f64::NEG_INFINITY;
    for &l in lambdas {
        let mid = cgf_xy(l);
        let lower = p * cgf_x(l / p) - q * cgf_y(-l / q);
        let upper = cgf_x(p * l) / p + (q / p) * cgf_y(p * l / q);
        lower_v = lower_v.max(lower - mid);
        upper_v = upper_v.max(mid - upper);
    }
    Ok(HolderReport {
        max_lower_violation: lower_v,
        max_upper_violation: upper_v,
        ok: lower_v <= tol && upper_v <= tol,
    })
}

#[derive(Debug, Clone)]
pub struct FPropertiesReport {
    /// Ratios f(lambda, shape)/lambda^2 per shape at the reference lambda.
    pub ratios: Vec<f64>,
    pub monotone_ok: bool,
    pub subadd_max_violation: f64,
    /// f(lambda)/lambda^2 at the smallest grid lambda on the largest shape.
    pub quad_ratio_limit: f64,
    /// Largest grid epsilon with f(+-eps) <= log(5/4) on the smallest shape.
    pub eps_quarter: f64,
    pub ok: bool,
}

/// Model analogs of the structural CGF facts used by the cascade: monotone
/// approach of f(lambda)/lambda^2 under box growth, Cauchy-Schwarz
/// subadditivity in the first axis, and quadratic decay at small lambda.
/// Here f(lambda; shape) is the CGF of the volume-normalized integral over
/// [0, shape).
pub fn model_f_properties(
    model: &FieldModel,
    shapes: &[Vec<f64>],
    lambdas: &[f64],
) -> Result<FPropertiesReport> {
    if shapes.is_empty() || lambdas.is_empty() {
        return Err(Error::invalid("need at least one shape and lambda"));
    }
    let d = model.dim();
    let phi = TestFunction::indicator(Rect::new(vec![0.0; d], vec![1.0; d])?)?;
    let f = |lam: f64, shape: &[f64]| -> Result<f64> {
        let sc = Scaling::new(shape.to_vec())?;
        let v: f64 = shape.iter().product();
        analytic_cgf(model, &phi, &sc, lam / v.sqrt())
    };
    let lam_ref = lambdas
        .iter()
        .copied()
        .filter(|l| *l > 0.0)
        .fold(f64::INFINITY, f64::min)
        .min(1.0);
    let mut ratios = Vec::with_capacity(shapes.len());
    for s in shapes {
        ratios.push(f(lam_ref, s)? / (lam_ref * lam_ref));
    }
    let mut monotone_ok = true;
    if ratios.len() >= 2 {
        let increasing = ratios[1] >= ratios[0] - 1e-12;
        for w in ratios.windows(2) {
            let step_up = w[1] >= w[0] - 1e-10 * (1.0 + w[0].abs());
            let step_down = w[1] <= w[0] + 1e-10 * (1.0 + w[0].abs());
            if (increasing && !step_up) || (!increasing && !step_down) {
                monotone_ok = false;
            }
        }
    }

    // Subadditivity of the unnormalized CGF in the first axis:
    // F(l; r+s) <= (F(2l; r) + F(2l; s)) / 2.
    let mut subadd_max_violation = f64::NEG_INFINITY;
    let base = &shapes[0];
    let f_un = |lam: f64, first: f64| -> Result<f64> {
        let mut shape = base.clone();
        shape[0] = first;
        analytic_cgf(model, &phi, &Scaling::new(shape)?, lam)
    };
    for &lam in lambdas {
        for &(r, s) in &[(1.0, 1.0), (1.0, 2.0), (2.0, 3.0)] {
            let whole = f_un(lam, r + s)?;
            let parts = 0.5 * (f_un(2.0 * lam, r)? + f_un(2.0 * lam, s)?);
            subadd_max_violation = subadd_max_violation.max(whole - parts);
        }
    }

    let biggest = shapes.last().unwrap();
    let lam_min = lam_ref;
    let quad_ratio_limit = f(lam_min, biggest)? / (lam_min * lam_min);

    let quarter = 1.25f64.ln();
    let mut eps_quarter = 0.0f64;
    for &lam in lambdas {
        if lam <= 0.0 {
            continue;
        }
        if f(lam, base)? <= quarter && f(-lam, base)? <= quarter {
            eps_quarter = eps_quarter.max(lam);
        }
    }
    Ok(FPropertiesReport {
        ratios,
        monotone_ok,
        subadd_max_violation,
        quad_ratio_limit,
        eps_quarter,
        ok: monotone_ok && subadd_max_violation <= 1e-12 && quad_ratio_limit.is_finite(),
    })
}

/// Symmetric geometric lambda grid: 0 plus +-100 points covering
/// [1e-6, 1] geometrically, 201 points in ascending order.
pub fn lambda_grid_symmetric() -> Vec<f64> {
    let mut grid = Vec::with_capacity(201);
    for k in (0..100).rev() {
        grid.push(-1e-6 * 1e6f64.powf(k as f64 / 99.0));
    }
    grid.push(0.0);
    for k in 0..100 {
        grid.push(1e-6 * 1e6f64.powf(k as f64 / 99.0));
    }
    grid
}
