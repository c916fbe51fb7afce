//! Certified propagation of CGF upper bounds under box doubling.
//!
//! A `BoundTable` stores f(lambda; r_1..r_d), the CGF of the
//! volume-normalized integral over [0, r_1) x .. x [0, r_d), sampled on a
//! symmetric lambda grid with +infinity as a first-class value. The
//! doubling step rewrites the table for a box with one side doubled: inside
//! an admissible lambda region it may add a closed quadratic leak term, and
//! everywhere it may split generically against a caller-supplied leak
//! table; it keeps the sharper of the two certified routes. The cascade
//! iterates doublings to grow a seed box to a target volume, tracks the
//! exact scalar recursion for the quadratic envelope coefficient in
//! parallel with the table, and certifies a 2a lambda^2 envelope on a
//! volume-dependent lambda range. Everything here is deterministic.

use crate::error::{Error, Result};
use crate::measure::fmt_g12;
use std::io::{BufRead, Write};

/// How a table's values were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Base,
    Propagated,
}

/// f sampled on a lambda grid for one box shape. Dimension 0 (empty shape)
/// is allowed and means a plain lambda -> f(lambda) table.
#[derive(Debug, Clone)]
pub struct BoundTable {
    shape: Vec<f64>,
    grid: Vec<f64>,
    values: Vec<f64>,
    provenance: Provenance,
}

/// Snapping tolerance for grid lookups: a query this close to a grid point
/// (relative to its magnitude) reads the stored value instead of a chord.
const SNAP_REL: f64 = 1e-12;

impl BoundTable {
    pub fn new(
        shape: Vec<f64>,
        grid: Vec<f64>,
        values: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if shape.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::invalid("shape entries must be positive and finite"));
        }
        if grid.len() < 3 || grid.len() != values.len() {
            return Err(Error::invalid(
                "grid needs >= 3 points and one value per point",
            ));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("grid must be strictly increasing"));
        }
        let n = grid.len();
        for i in 0..n {
            let mirror = -grid[n - 1 - i];
            if (grid[i] - mirror).abs() > SNAP_REL * (1.0 + grid[i].abs()) {
                return Err(Error::invalid("grid must be symmetric about zero"));
            }
        }
        let zero = match grid.iter().position(|&g| g == 0.0) {
            Some(i) => i,
            None => return Err(Error::invalid("grid must contain zero")),
        };
        if values[zero] != 0.0 {
            return Err(Error::invalid("value at lambda = 0 must be 0"));
        }
        if values.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::invalid("values must lie in [0, +inf]"));
        }
        Ok(BoundTable {
            shape,
            grid,
            values,
            provenance,
        })
    }

    /// Tabulates f on the grid. Infinite values are allowed.
    pub fn from_fn(
        shape: Vec<f64>,
        grid: Vec<f64>,
        f: impl Fn(f64) -> f64,
        provenance: Provenance,
    ) -> Result<Self> {
        let values = grid.iter().map(|&l| f(l)).collect();
        BoundTable::new(shape, grid, values, provenance)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[f64] {
        &self.shape
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn volume(&self) -> f64 {
        self.shape.iter().product()
    }

    /// Conservative evaluation: exact grid values at (snapped) grid points,
    /// chords between them, +infinity outside the covered range. Chords
    /// over-estimate convex functions, so propagation stays an upper bound.
    pub fn eval(&self, lambda: f64) -> f64 {
        let n = self.grid.len();
        if lambda < self.grid[0] || lambda > self.grid[n - 1] {
            return f64::INFINITY;
        }
        // Binary search for the bracketing cell.
        let mut lo = 0usize;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.grid[mid] <= lambda {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        for &i in &[lo, hi] {
            if (lambda - self.grid[i]).abs() <= SNAP_REL * (1.0 + self.grid[i].abs()) {
                return self.values[i];
            }
        }
        let (g0, g1) = (self.grid[lo], self.grid[hi]);
        let (v0, v1) = (self.values[lo], self.values[hi]);
        if !v0.is_finite() || !v1.is_finite() {
            return f64::INFINITY;
        }
        let t = (lambda - g0) / (g1 - g0);
        v0 + t * (v1 - v0)
    }

    /// Largest grid point epsilon > 0 such that eps^2 f(lambda) <= lambda^2
    /// for every grid lambda in [-eps, eps]. Zero when none qualifies.
    fn largest_quadratic_eps(&self, tol: f64) -> (f64, f64) {
        let mut best = 0.0f64;
        let mut best_margin = f64::INFINITY;
        for &eps in self.grid.iter().filter(|&&g| g > 0.0) {
            let mut ok = true;
            let mut margin = f64::INFINITY;
            for (&l, &v) in self.grid.iter().zip(&self.values) {
                if l.abs() > eps * (1.0 + SNAP_REL) {
                    continue;
                }
                let slack = l * l - eps * eps * v;
                if !(slack >= -tol) {
                    ok = false;
                    break;
                }
                margin = margin.min(slack);
            }
            if ok && eps > best {
                best = eps;
                best_margin = margin;
            }
        }
        (best, if best > 0.0 { best_margin } else { f64::NAN })
    }

    /// CSV form: a `shape` header row, then one (lambda, value) row per
    /// grid point with "inf" for infinite entries.
    pub fn write_csv(&self, out: &mut dyn Write) -> std::io::Result<()> {
        write!(out, "shape")?;
        for r in &self.shape {
            write!(out, ",{}", fmt_g12(*r))?;
        }
        writeln!(out)?;
        writeln!(out, "lambda,value")?;
        for (&l, &v) in self.grid.iter().zip(&self.values) {
            if v.is_finite() {
                writeln!(out, "{},{}", fmt_g12(l), fmt_g12(v))?;
            } else {
                writeln!(out, "{},inf", fmt_g12(l))?;
            }
        }
        Ok(())
    }

    pub fn read_csv(input: &mut dyn BufRead) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::invalid("empty table file"))?
            .map_err(|e| Error::invalid(format!("read failed: {e}")))?;
        let mut cols = header.split(',');
        if cols.next() != Some("shape") {
            return Err(Error::invalid("first row must start with 'shape'"));
        }
        let shape: Vec<f64> = cols
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("bad shape entry: {e}")))?;
        match lines.next() {
            Some(Ok(l)) if l.trim() == "lambda,value" => {}
            _ => return Err(Error::invalid("second row must be 'lambda,value'")),
        }
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::invalid(format!("read failed: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let l = parts
                .next()
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::invalid("bad lambda entry"))?;
            let vs = parts
                .next()
                .ok_or_else(|| Error::invalid("missing value entry"))?
                .trim();
            let v = if vs == "inf" {
                f64::INFINITY
            } else {
                vs.parse::<f64>()
                    .map_err(|e| Error::invalid(format!("bad value entry: {e}")))?
            };
            grid.push(l);
            values.push(v);
        }
        BoundTable::new(shape, grid, values, Provenance::Base)
    }
}

/// Default grid: 0 plus +-120 geometric points covering [1e-6, max], with
/// the endpoints pinned exactly to +-max.
pub fn default_grid(max: f64) -> Vec<f64> {
    let per_side = 120usize;
    let lo = 1e-6f64 * max;
    let ratio = (max / lo).powf(1.0 / (per_side as f64 - 1.0));
    let mut pos = Vec::with_capacity(per_side);
    for k in 0..per_side {
        pos.push(lo * ratio.powi(k as i32));
    }
    pos[per_side - 1] = max;
    let mut grid: Vec<f64> = pos.iter().rev().map(|x| -x).collect();
    grid.push(0.0);
    grid.extend(pos);
    grid
}

/// Grid whose positive points form a geometric sequence of ratio sqrt(2),
/// so the rescaling lambda -> p lambda / sqrt(2) with p = 2 maps grid
/// points onto grid points and closed-form tests are exact.
pub fn sqrt2_grid(max: f64, steps: usize) -> Vec<f64> {
    let mut pos = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        pos.push(max / 2f64.powf(k as f64 / 2.0));
    }
    pos.reverse();
    let mut grid: Vec<f64> = pos.iter().rev().map(|x| -x).collect();
    grid.push(0.0);
    grid.extend(pos);
    grid
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionKind {
    /// Dimension-0 quadratic smallness.
    A0,
    /// Permutation symmetry of shape-indexed tables.
    APerm,
    /// Doubling-step soundness.
    ADup,
    /// Quadratic smallness for d >= 1 seed boxes.
    AEps,
    /// Existence of a table constant on the searched region.
    BD,
}

#[derive(Debug, Clone)]
pub enum Witness {
    Epsilon(f64),
    Constant(f64),
    Point { lambda: f64, shape: Vec<f64>, violation: f64 },
    None,
}

#[derive(Debug, Clone)]
pub struct ConditionReport {
    pub condition: ConditionKind,
    pub holds: bool,
    pub witness: Witness,
    pub margin: f64,
}

/// Dimension-0 check: largest grid epsilon with eps^2 f(lambda) <= lambda^2
/// on [-eps, eps]; holds iff such a positive epsilon exists.
pub fn check_a0(table: &BoundTable) -> Result<ConditionReport> {
    if table.dim() != 0 {
        return Err(Error::Precondition(
            "check_a0 takes a dimension-0 table".into(),
        ));
    }
    let (eps, margin) = table.largest_quadratic_eps(1e-12);
    Ok(ConditionReport {
        condition: ConditionKind::A0,
        holds: eps > 0.0,
        witness: Witness::Epsilon(eps),
        margin,
    })
}

/// The universal dimension-0 table: lambda^2 inside [-1, 1], +infinity
/// outside, on a grid extending past 1 so the infinite tail is present.
pub fn universal_a0_table() -> BoundTable {
    let mut grid = default_grid(1.0);
    grid.insert(0, -2.0);
    grid.push(2.0);
    BoundTable::from_fn(
        vec![],
        grid,
        |l| if l.abs() <= 1.0 { l * l } else { f64::INFINITY },
        Provenance::Base,
    )
    .expect("static table construction cannot fail")
}

/// Admissibility scale of the doubling branch before the (p-1)/p factor:
///   sqrt(2v) * ln^{-(d-1)}(v / r1) / c_prev,
/// v the undoubled volume; the d = 1 case reads sqrt(2 r1) with no log.
fn threshold_unit(c_prev: f64, shape: &[f64], axis: usize) -> f64 {
    let v: f64 = shape.iter().product();
    let d = shape.len();
    let base = (2.0 * v).sqrt() / c_prev;
    if d == 1 {
        return base;
    }
    let rest = v / shape[axis];
    let ln = rest.ln();
    if ln <= 0.0 {
        return 0.0;
    }
    base * ln.powi(-(d as i32 - 1))
}

/// Admissible-lambda threshold for the doubling branch at exponent p: the
/// closed quadratic leak term is valid only while
///   c_prev * |lambda| <= ((p-1)/p) sqrt(2v) * ln^{-(d-1)}(v / r1).
fn doubling_threshold(p: f64, c_prev: f64, shape: &[f64], axis: usize) -> f64 {
    (p - 1.0) / p * threshold_unit(c_prev, shape, axis)
}

/// One doubling of `axis`. Two certified routes exist per lambda:
/// inside the admissible region
///   (2/p) f(p lambda / sqrt 2) + c_prev (p/(p-1)) lambda^2 / (2 r_axis),
/// and, with a leak table, the generic split
///   (2/p) f(p lambda / sqrt 2)
///     + ((p-1)/p) leak(-(p/(p-1)) lambda / sqrt(2 r_axis)).
/// The result keeps the smaller of the available routes; with neither
/// available the value is +infinity.
pub fn duplication_step(
    table: &BoundTable,
    leak_table: Option<&BoundTable>,
    p: f64,
    c_prev: f64,
    axis: usize,
) -> Result<BoundTable> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::invalid("duplication exponent p must exceed 1"));
    }
    if !(c_prev > 0.0) {
        return Err(Error::invalid("c_prev must be positive"));
    }
    let d = table.dim();
    if d == 0 {
        return Err(Error::Precondition(
            "duplication needs a table of dimension >= 1".into(),
        ));
    }
    if axis >= d {
        return Err(Error::invalid("axis out of range"));
    }
    let r1 = table.shape()[axis];
    let threshold = doubling_threshold(p, c_prev, table.shape(), axis);
    let q = p / (p - 1.0);
    let mut new_shape = table.shape().to_vec();
    new_shape[axis] = 2.0 * r1;
    let values: Vec<f64> = table
        .grid()
        .iter()
        .map(|&l| {
            let carried = 2.0 / p * table.eval(p * l / std::f64::consts::SQRT_2);
            let admissible = if l.abs() <= threshold {
                carried + c_prev * q * l * l / (2.0 * r1)
            } else {
                f64::INFINITY
            };
            let generic = match leak_table {
                Some(leak) => {
                    let mu = -q * l / (2.0 * r1).sqrt();
                    carried + (p - 1.0) / p * leak.eval(mu)
                }
                None => f64::INFINITY,
            };
            admissible.min(generic)
        })
        .collect();
    BoundTable::new(new_shape, table.grid().to_vec(), values, Provenance::Propagated)
}

/// Per-step choice of the duplication exponent.
#[derive(Debug, Clone, Copy)]
pub enum PPolicy {
    /// Closed-form minimizer of the envelope recursion
    ///   env <- p env + (p/(p-1)) c_prev / (2 r1),
    /// namely p = 1 + sqrt(c_prev / (2 r1 env)), raised when necessary to
    /// keep the target lambda admissible and clamped to (1, 64].
    Optimize,
    Fixed(f64),
}

/// Leak input for the cascade: no information (+infinity outside the
/// admissible region), exactly zero (fields whose split leaks nothing), or
/// a per-shape table over the non-doubled sides.
pub enum LeakSpec<'a> {
    Absent,
    Zero,
    ByShape(&'a dyn Fn(&[f64]) -> BoundTable),
}

#[derive(Debug, Clone)]
pub struct CascadeOutcome {
    pub table: BoundTable,
    /// Base table followed by the table after each doubling.
    pub stages: Vec<BoundTable>,
    /// Certified half-width of the lambda region for the 2a bound.
    pub delta: f64,
    /// Whether the final table satisfies f <= 2a lambda^2 on the grid
    /// restricted to [-delta, delta].
    pub holds_2a: bool,
    /// First stage index from which every later stage satisfies the 2a
    /// envelope on its own volume-dependent region. None when the final
    /// stage fails.
    pub empirical_n: Option<usize>,
    /// Quadratic envelope coefficient from the exact scalar recursion,
    /// starting at a.
    pub env_coeff: f64,
    /// Half-width of the lambda region where env_coeff lambda^2 is proven.
    pub env_region: f64,
    /// Pure-leak part of the same recursion, starting at 0.
    pub leak_coeff: f64,
    /// Exponents chosen per step.
    pub p_schedule: Vec<f64>,
}

pub struct CascadePlan {
    /// Quadratic envelope constant certified for the base table.
    pub a: f64,
    /// Base envelope region half-width.
    pub delta: f64,
    /// Doublings to perform per axis.
    pub doublings: Vec<usize>,
    /// Constant of the one-lower-dimension bound entering the leak term.
    pub c_prev: f64,
    pub policy: PPolicy,
}

/// S(v) = v^{(d-1)/d}; the lambda-region scale of the cascade conclusion.
fn shape_scale(v: f64, d: usize) -> f64 {
    v.powf((d as f64 - 1.0) / d as f64)
}

/// Certified region half-width for volume v:
///   (1/c_prev) sqrt(S(v)/a) * ln^{-(d-1)} S(v), with the d = 1 convention
/// that the log factor is 1.
pub fn cascade_delta(v: f64, d: usize, a: f64, c_prev: f64) -> f64 {
    let s = shape_scale(v, d);
    let base = (s / a).sqrt() / c_prev;
    if d == 1 {
        return base;
    }
    let ln = s.ln();
    if ln <= 0.0 {
        return base;
    }
    base * ln.powi(-(d as i32 - 1))
}

fn violates_envelope(table: &BoundTable, coeff: f64, half_width: f64) -> Option<(f64, f64)> {
    for (&l, &v) in table.grid().iter().zip(table.values()) {
        if l.abs() > half_width * (1.0 + SNAP_REL) {
            continue;
        }
        let bound = coeff * l * l;
        if v > bound + 1e-12 * (1.0 + bound) {
            return Some((l, v - bound));
        }
    }
    None
}

/// Minimal p keeping `lambda` admissible for the doubling branch, if any.
fn min_admissible_p(lambda: f64, c_prev: f64, shape: &[f64], axis: usize) -> Option<f64> {
    let unit = threshold_unit(c_prev, shape, axis);
    if unit <= 0.0 {
        return None;
    }
    let need = lambda.abs() / unit;
    if need >= 1.0 {
        return None;
    }
    Some(1.0 / (1.0 - need))
}

/// What one doubling would produce at a single lambda; mirrors the value
/// rule of `duplication_step`.
fn step_value_at(
    table: &BoundTable,
    leak: Option<&BoundTable>,
    p: f64,
    c_prev: f64,
    axis: usize,
    lambda: f64,
) -> f64 {
    let r1 = table.shape()[axis];
    let threshold = doubling_threshold(p, c_prev, table.shape(), axis);
    let q = p / (p - 1.0);
    let carried = 2.0 / p * table.eval(p * lambda / std::f64::consts::SQRT_2);
    let admissible = if lambda.abs() <= threshold {
        carried + c_prev * q * lambda * lambda / (2.0 * r1)
    } else {
        f64::INFINITY
    };
    let generic = match leak {
        Some(lt) => carried + (p - 1.0) / p * lt.eval(-q * lambda / (2.0 * r1).sqrt()),
        None => f64::INFINITY,
    };
    admissible.min(generic)
}

fn choose_p(
    policy: PPolicy,
    env: f64,
    c_prev: f64,
    table: &BoundTable,
    leak: Option<&BoundTable>,
    axis: usize,
    target: f64,
) -> Result<f64> {
    match policy {
        PPolicy::Fixed(p) => {
            if !(p > 1.0) || !p.is_finite() {
                return Err(Error::invalid("fixed p must exceed 1"));
            }
            Ok(p)
        }
        PPolicy::Optimize => {
            // The envelope-optimal exponent, the admissibility floor for
            // the target, and a just-below-sqrt(2) fallback that keeps
            // every rescaled grid query inside the grid. Pick the one
            // with the smallest propagated value at the target; break
            // ties by envelope growth, then by p itself.
            let k = c_prev / (2.0 * table.shape()[axis]);
            let p_star = if env > 0.0 {
                1.0 + (k / env).sqrt()
            } else {
                64.0
            };
            let mut candidates = vec![p_star, std::f64::consts::SQRT_2 * 0.999, 2.0];
            if let Some(floor) = min_admissible_p(target, c_prev, table.shape(), axis) {
                if floor <= 64.0 {
                    candidates.push(floor * (1.0 + 1e-12));
                }
            }
            let score = |p: f64| {
                let p = p.clamp(1.0 + 1e-9, 64.0);
                let value = step_value_at(table, leak, p, c_prev, axis, target);
                let growth = p * env + p / (p - 1.0) * k;
                (value, growth, p)
            };
            let mut best = score(candidates[0]);
            for &c in &candidates[1..] {
                let s = score(c);
                if s.0 < best.0
                    || (s.0 == best.0 && s.1 < best.1)
                    || (s.0 == best.0 && s.1 == best.1 && s.2 < best.2)
                {
                    best = s;
                }
            }
            Ok(best.2)
        }
    }
}

/// Grows the base box by the planned doublings, always doubling the
/// currently shortest side with remaining budget (lowest axis on ties).
///
/// Two certified routes run in parallel. The table route propagates grid
/// values through `duplication_step`. The scalar route applies the exact
/// recursion env <- p env + (p/(p-1)) c_prev / (2 r1) on the shrinking
/// admissible region; since both routes prove upper bounds, each new table
/// is clamped pointwise with the scalar envelope where that envelope is in
/// force. The 2a certificate is then read off the final table on the grid
/// restricted to the volume-dependent delta region.
pub fn cascade(base: &BoundTable, plan: &CascadePlan, leak: LeakSpec) -> Result<CascadeOutcome> {
    let d = base.dim();
    if d == 0 {
        return Err(Error::Precondition("cascade needs dimension >= 1".into()));
    }
    if plan.doublings.len() != d {
        return Err(Error::DimensionMismatch {
            context: "cascade doublings",
            expected: d,
            got: plan.doublings.len(),
        });
    }
    if !(plan.a > 0.0) || !(plan.delta > 0.0) || !(plan.c_prev > 0.0) {
        return Err(Error::invalid("a, delta, c_prev must be positive"));
    }
    if let Some((l, viol)) = violates_envelope(base, plan.a, plan.delta) {
        return Err(Error::Precondition(format!(
            "base table exceeds a lambda^2 at lambda = {l} by {viol}"
        )));
    }
    let total: usize = plan.doublings.iter().sum();
    let final_volume = base.volume() * 2f64.powi(total as i32);
    let delta = cascade_delta(final_volume, d, plan.a, plan.c_prev);
    let grid_max = base.grid()[base.grid().len() - 1];
    let target = delta.min(grid_max);

    let mut table = base.clone();
    let mut stages = Vec::with_capacity(total + 1);
    stages.push(table.clone());
    let mut remaining = plan.doublings.clone();
    let mut env = plan.a;
    let mut region = plan.delta;
    let mut leak_coeff = 0.0f64;
    let mut p_schedule = Vec::with_capacity(total);
    for step in 0..total {
        // Shortest side with remaining budget; lowest axis breaks ties.
        let axis = (0..d)
            .filter(|&i| remaining[i] > 0)
            .min_by(|&i, &j| {
                table.shape()[i]
                    .partial_cmp(&table.shape()[j])
                    .unwrap()
                    .then(i.cmp(&j))
            })
            .expect("total counts remaining budgets");
        let rest: Vec<f64> = table
            .shape()
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != axis)
            .map(|(_, r)| *r)
            .collect();
        let lt: Option<BoundTable> = match &leak {
            LeakSpec::Absent => None,
            // A field whose split leaks nothing has zero leak CGF at every
            // lambda, so the table covers any query the step can make.
            LeakSpec::Zero => Some(
                BoundTable::new(
                    rest,
                    vec![-1e300, 0.0, 1e300],
                    vec![0.0, 0.0, 0.0],
                    Provenance::Base,
                )
                .expect("zero table is always valid"),
            ),
            LeakSpec::ByShape(f) => Some(f(&rest)),
        };
        let p = choose_p(plan.policy, env, plan.c_prev, &table, lt.as_ref(), axis, target)?;
        let r1 = table.shape()[axis];
        let beta = plan.c_prev * p / (p - 1.0) / (2.0 * r1);
        let threshold = doubling_threshold(p, plan.c_prev, table.shape(), axis);
        table = duplication_step(&table, lt.as_ref(), p, plan.c_prev, axis)?;
        env = p * env + beta;
        leak_coeff = p * leak_coeff + beta;
        region = (region * std::f64::consts::SQRT_2 / p).min(threshold);
        // The scalar envelope is an independently proven upper bound, so
        // the table may be tightened with it where it is in force.
        if region > 0.0 {
            let clamped: Vec<f64> = table
                .grid()
                .iter()
                .zip(table.values())
                .map(|(&l, &v)| {
                    if l.abs() <= region * (1.0 + SNAP_REL) {
                        v.min(env * l * l)
                    } else {
                        v
                    }
                })
                .collect();
            table = BoundTable::new(
                table.shape().to_vec(),
                table.grid().to_vec(),
                clamped,
                Provenance::Propagated,
            )?;
        }
        remaining[axis] -= 1;
        stages.push(table.clone());
        p_schedule.push(p);
        if table
            .values()
            .iter()
            .zip(table.grid())
            .all(|(v, l)| *l == 0.0 || !v.is_finite())
        {
            return Err(Error::Precondition(format!(
                "cascade halted at step {step}: no finite values remain"
            )));
        }
    }
    let holds_2a = violates_envelope(&table, 2.0 * plan.a, target).is_none();
    let empirical_n = if holds_2a {
        let mut n = None;
        for start in (0..stages.len()).rev() {
            let stage_delta =
                cascade_delta(stages[start].volume(), d, plan.a, plan.c_prev).min(grid_max);
            if violates_envelope(&stages[start], 2.0 * plan.a, stage_delta).is_none() {
                n = Some(start);
            } else {
                break;
            }
        }
        n
    } else {
        None
    };
    Ok(CascadeOutcome {
        table,
        stages,
        delta,
        holds_2a,
        empirical_n,
        env_coeff: env,
        env_region: region,
        leak_coeff,
        p_schedule,
    })
}

/// Pointwise maximum over tables of equal volume and min side >= c, the
/// finite under-approximation of the shape supremum at that volume.
pub fn sup_over_shapes(tables: &[BoundTable], c: f64) -> Result<BoundTable> {
    let first = tables
        .first()
        .ok_or_else(|| Error::invalid("need at least one table"))?;
    let v = first.volume();
    for t in tables {
        if (t.volume() - v).abs() > 1e-9 * v {
            return Err(Error::invalid("tables must share one volume"));
        }
        if t.shape().iter().any(|&r| r < c * (1.0 - SNAP_REL)) {
            return Err(Error::invalid("every side must be >= c"));
        }
        if t.grid() != first.grid() {
            return Err(Error::invalid("tables must share one grid"));
        }
    }
    let values: Vec<f64> = (0..first.grid().len())
        .map(|i| {
            tables
                .iter()
                .map(|t| t.values()[i])
                .fold(0.0f64, f64::max)
        })
        .collect();
    BoundTable::new(vec![v], first.grid().to_vec(), values, Provenance::Propagated)
}

/// Tables for permuted shapes must agree pointwise; shapes are grouped by
/// their sorted side multiset.
pub fn check_permutation_symmetry(tables: &[BoundTable]) -> Result<ConditionReport> {
    let mut groups: Vec<(Vec<u64>, usize)> = Vec::new();
    let key = |shape: &[f64]| -> Vec<u64> {
        let mut s: Vec<f64> = shape.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s.iter().map(|r| r.to_bits()).collect()
    };
    let mut worst: Option<(f64, Vec<f64>, f64)> = None;
    for (i, t) in tables.iter().enumerate() {
        let k = key(t.shape());
        match groups.iter().find(|(gk, _)| *gk == k) {
            None => groups.push((k, i)),
            Some(&(_, j)) => {
                let rep = &tables[j];
                if rep.grid() != t.grid() {
                    return Err(Error::invalid("permuted tables must share one grid"));
                }
                for (idx, (&a, &b)) in rep.values().iter().zip(t.values()).enumerate() {
                    let diff = if a == b { 0.0 } else { (a - b).abs() };
                    let tolerance = 1e-12 * (1.0 + a.abs().min(b.abs()));
                    if diff > tolerance
                        && worst.as_ref().is_none_or(|(w, _, _)| diff > *w)
                    {
                        worst = Some((diff, t.shape().to_vec(), t.grid()[idx]));
                    }
                }
            }
        }
    }
    Ok(match worst {
        None => ConditionReport {
            condition: ConditionKind::APerm,
            holds: true,
            witness: Witness::None,
            margin: 0.0,
        },
        Some((diff, shape, lambda)) => ConditionReport {
            condition: ConditionKind::APerm,
            holds: false,
            witness: Witness::Point {
                lambda,
                shape,
                violation: diff,
            },
            margin: -diff,
        },
    })
}

/// Finds the largest grid epsilon with f(+-eps) <= log(5/4), then verifies
/// the quadratic-smallness inequality eps^2 f(lambda) <= lambda^2 on the
/// grid restricted to [-eps, eps].
pub fn epsilon_from_quarter_bound(table: &BoundTable) -> Result<ConditionReport> {
    let quarter = 1.25f64.ln();
    let mut eps = 0.0f64;
    for &g in table.grid().iter().filter(|&&g| g > 0.0) {
        if table.eval(g) <= quarter + 1e-15 && table.eval(-g) <= quarter + 1e-15 {
            eps = eps.max(g);
        }
    }
    if eps == 0.0 {
        return Ok(ConditionReport {
            condition: ConditionKind::AEps,
            holds: false,
            witness: Witness::None,
            margin: f64::NEG_INFINITY,
        });
    }
    let mut margin = f64::INFINITY;
    let mut witness_point = None;
    for (&l, &v) in table.grid().iter().zip(table.values()) {
        if l.abs() > eps * (1.0 + SNAP_REL) {
            continue;
        }
        let slack = l * l - eps * eps * v;
        if slack < -1e-12 {
            witness_point = Some((l, -slack));
        }
        margin = margin.min(slack);
    }
    Ok(match witness_point {
        None => ConditionReport {
            condition: ConditionKind::AEps,
            holds: true,
            witness: Witness::Epsilon(eps),
            margin,
        },
        Some((l, viol)) => ConditionReport {
            condition: ConditionKind::AEps,
            holds: false,
            witness: Witness::Point {
                lambda: l,
                shape: table.shape().to_vec(),
                violation: viol,
            },
            margin,
        },
    })
}

pub struct SearchBudget {
    /// Candidate seed constants C = 2^k for k in 1..=max_c_exponent.
    pub max_c_exponent: u32,
    /// Doublings per axis in each probe cascade.
    pub doublings_per_axis: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            max_c_exponent: 8,
            doublings_per_axis: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CdReport {
    pub report: ConditionReport,
    /// First seed constant C whose probe family certified.
    pub seed_c: Option<f64>,
    /// Pipeline constant max(2a, 2C 2^{ceil(N/d)}) for the certified seed.
    pub pipeline_m: Option<f64>,
    /// Empirical doubling count N at the certified seed.
    pub empirical_n: Option<usize>,
}

/// Searches seed constants C in {2^k} and, for the first C whose corner
/// family certifies the quarter-bound epsilon and the 2a cascade envelope,
/// scans {2^k} for the least table constant cd with
///   f(lambda) <= cd lambda^2 whenever cd |lambda| <= sqrt(v) ln^{-d}(v)
///   and min side >= cd,
/// checked on every table the probe cascades produced.
pub fn derive_cd(
    base_family: &dyn Fn(&[f64]) -> Result<BoundTable>,
    d: usize,
    c_prev: f64,
    budget: &SearchBudget,
    leak: &LeakSpec,
) -> Result<CdReport> {
    if d == 0 {
        return Err(Error::Precondition("derive_cd needs d >= 1".into()));
    }
    let mut last_witness = Witness::None;
    for k in 1..=budget.max_c_exponent {
        let c = 2f64.powi(k as i32);
        // Corner shapes of [C, 2C]^d.
        let mut shapes: Vec<Vec<f64>> = Vec::new();
        for mask in 0..(1usize << d) {
            let shape: Vec<f64> = (0..d)
                .map(|i| if mask >> i & 1 == 1 { 2.0 * c } else { c })
                .collect();
            shapes.push(shape);
        }
        let tables: Vec<BoundTable> = match shapes
            .iter()
            .map(|s| base_family(s))
            .collect::<Result<Vec<_>>>()
        {
            Ok(t) => t,
            Err(_) => continue,
        };
        let perm = check_permutation_symmetry(&tables)?;
        if !perm.holds {
            return Ok(CdReport {
                report: perm,
                seed_c: None,
                pipeline_m: None,
                empirical_n: None,
            });
        }
        let mut eps = f64::INFINITY;
        let mut eps_ok = true;
        for t in &tables {
            let rep = epsilon_from_quarter_bound(t)?;
            match (rep.holds, rep.witness) {
                (true, Witness::Epsilon(e)) => eps = eps.min(e),
                _ => {
                    eps_ok = false;
                    break;
                }
            }
        }
        if !eps_ok || !eps.is_finite() || eps <= 0.0 {
            continue;
        }
        let a = (1.0f64).max(1.0 / (eps * eps));
        let plan = CascadePlan {
            a,
            delta: eps,
            doublings: vec![budget.doublings_per_axis; d],
            c_prev,
            policy: PPolicy::Optimize,
        };
        let mut stage_pool: Vec<BoundTable> = Vec::new();
        let mut all_hold = true;
        let mut worst_n = 0usize;
        for t in &tables {
            let leak_ref = match leak {
                LeakSpec::Absent => LeakSpec::Absent,
                LeakSpec::Zero => LeakSpec::Zero,
                LeakSpec::ByShape(f) => LeakSpec::ByShape(*f),
            };
            let outcome = match cascade(t, &plan, leak_ref) {
                Ok(o) => o,
                Err(_) => {
                    all_hold = false;
                    break;
                }
            };
            if !outcome.holds_2a {
                all_hold = false;
                break;
            }
            worst_n = worst_n.max(outcome.empirical_n.unwrap_or(usize::MAX));
            stage_pool.extend(outcome.stages);
        }
        if !all_hold {
            continue;
        }
        let total = budget.doublings_per_axis * d;
        let n_for_m = worst_n.min(total);
        let pipeline_m = (2.0 * a).max(2.0 * c * 2f64.powi(n_for_m.div_ceil(d) as i32));
        // Least table constant on the candidate grid.
        for j in 1..=(budget.max_c_exponent + 8) {
            let cd = 2f64.powi(j as i32);
            let mut ok = true;
            let mut margin = f64::INFINITY;
            let mut bad = None;
            for t in &stage_pool {
                if t.shape().iter().any(|&r| r < cd) {
                    continue;
                }
                let v = t.volume();
                let ln = v.ln();
                if ln <= 0.0 {
                    continue;
                }
                let lam_max = v.sqrt() * ln.powi(-(d as i32)) / cd;
                for (&l, &val) in t.grid().iter().zip(t.values()) {
                    if l.abs() > lam_max {
                        continue;
                    }
                    let slack = cd * l * l - val;
                    if slack < -1e-12 {
                        ok = false;
                        bad = Some((l, t.shape().to_vec(), -slack));
                        break;
                    }
                    margin = margin.min(slack);
                }
                if !ok {
                    break;
                }
            }
            if ok {
                return Ok(CdReport {
                    report: ConditionReport {
                        condition: ConditionKind::BD,
                        holds: true,
                        witness: Witness::Constant(cd),
                        margin: if margin.is_finite() { margin } else { 0.0 },
                    },
                    seed_c: Some(c),
                    pipeline_m: Some(pipeline_m),
                    empirical_n: Some(n_for_m),
                });
            }
            if let Some((l, shape, viol)) = bad {
                last_witness = Witness::Point {
                    lambda: l,
                    shape,
                    violation: viol,
                };
            }
        }
    }
    Ok(CdReport {
        report: ConditionReport {
            condition: ConditionKind::BD,
            holds: false,
            witness: last_witness,
            margin: f64::NEG_INFINITY,
        },
        seed_c: None,
        pipeline_m: None,
        empirical_n: None,
    })
}
