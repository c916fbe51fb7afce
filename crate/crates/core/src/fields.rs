//! Stationary field models with constructive splits.
//!
//! Each model knows how to draw a realization on a bounded window, how to
//! draw a coupled triple (x0, xminus, xplus) split across an axis-aligned
//! hyperplane together with the exact leak measure, and how to certify its
//! splittability constant from a closed-form (or certified dominating) law
//! of its unit-cube variation. Couplings are built from region-keyed
//! counter-based streams: the randomness for each region of the driving
//! noise is a pure function of (seed, region id), so shared regions agree
//! bit for bit and fresh regions are independent by construction.

use crate::error::{Error, Result};
use crate::measure::{overlay_cells, Atom, GridCell, Rect, SampleMeasure, Scaling, TestFunction};
use crate::rng::{stream_key, stream_rng, tag_i64, tags};
use crate::stats;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

/// Law of one unit-cell density in the block model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellLaw {
    /// Density +scale or -scale with probability 1/2 each.
    Rademacher { scale: f64 },
    /// Density uniform on [-bound, bound).
    Uniform { bound: f64 },
}

impl CellLaw {
    pub fn std_dev(&self) -> f64 {
        match self {
            CellLaw::Rademacher { scale } => *scale,
            CellLaw::Uniform { bound } => bound / 3.0f64.sqrt(),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            CellLaw::Rademacher { scale } => {
                if rng.gen::<bool>() {
                    *scale
                } else {
                    -*scale
                }
            }
            CellLaw::Uniform { bound } => rng.gen_range(-*bound..*bound),
        }
    }
}

#[derive(Debug, Clone)]
pub enum ModelKind {
    /// Atoms of a homogeneous Poisson process carrying weight `mass`, minus
    /// the compensating constant density intensity * mass.
    CenteredPoisson { intensity: f64, mass: f64 },
    /// Poisson atoms smoothed by a step kernel supported in [0, width)^d,
    /// compensated to mean zero.
    ShotNoise {
        intensity: f64,
        mass: f64,
        kernel: TestFunction,
    },
    /// Independent constant density per unit lattice cell [k, k+1)^d.
    BlockIid { law: CellLaw },
}

/// A stationary splittable field model with its certificates.
#[derive(Debug, Clone)]
pub struct FieldModel {
    dim: usize,
    name: &'static str,
    kind: ModelKind,
    c_split: f64,
    sigma_sq: f64,
    has_exact_cgf: bool,
}

/// Coupled draw of a split: three realizations sharing driving noise on one
/// half-space each, plus the leak measure, which equals xminus - x0 on the
/// lower half-window and xplus - x0 on the upper half-window exactly.
#[derive(Debug, Clone)]
pub struct SplitSample {
    pub x0: SampleMeasure,
    pub xminus: SampleMeasure,
    pub xplus: SampleMeasure,
    pub leak: SampleMeasure,
    pub axis: usize,
    pub offset: f64,
}

/// One coupled draw of the half-window decomposition: u and v are the
/// lower/upper integrals of the independent pair, w the full integral of the
/// base realization, z the leak integral; w + z = u + v by construction.
#[derive(Debug, Clone, Copy)]
pub struct UVWZSample {
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub z: f64,
}

/// Split-verification report: marginal KS statistics (max over probe boxes),
/// cross-half dependence scores, and the observed leak support radius.
#[derive(Debug, Clone)]
pub struct SplitStatsReport {
    pub n_draws: usize,
    /// Two-sample threshold at family-wise alpha 0.01 (Bonferroni over the
    /// 16 marginal statistics).
    pub ks_threshold: f64,
    pub ks_x0: f64,
    pub ks_xminus: f64,
    pub ks_xplus: f64,
    pub ks_control: f64,
    /// Max |covariance| / SE over the 8 x 8 bounded-functional dictionary.
    pub max_cov_score: f64,
    pub leak_radius: f64,
    pub marginals_ok: bool,
    pub independence_ok: bool,
}

fn bisect_decreasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    // Root of a continuous decreasing function with f(lo) > 0 > f(hi).
    debug_assert!(f(lo) > 0.0 && f(hi) < 0.0);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Smallest C with E exp(V / C) <= 2 for V = a + s * N, N ~ Poisson(mu):
/// the root of exp(a/C) * exp(mu (e^{s/C} - 1)) = 2.
fn c_for_shifted_poisson(a: f64, s: f64, mu: f64) -> f64 {
    let g = |c: f64| a / c + mu * ((s / c).exp() - 1.0) - std::f64::consts::LN_2;
    let mut hi = 1.0;
    while g(hi) > 0.0 {
        hi *= 2.0;
    }
    let mut lo = hi / 2.0;
    while g(lo) < 0.0 {
        lo /= 2.0;
    }
    bisect_decreasing(g, lo, hi, 1e-12 * hi.max(1.0)).max(f64::MIN_POSITIVE)
}

impl FieldModel {
    pub fn centered_poisson(dim: usize, intensity: f64, mass: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim must be >= 1"));
        }
        if !(intensity > 0.0) || !(mass > 0.0) {
            return Err(Error::invalid("intensity and mass must be positive"));
        }
        let kind = ModelKind::CenteredPoisson { intensity, mass };
        let c_split = compute_c_split(&kind, dim);
        Ok(FieldModel {
            dim,
            name: "centered_poisson",
            kind,
            c_split,
            sigma_sq: mass * mass * intensity,
            has_exact_cgf: true,
        })
    }

    pub fn shot_noise(dim: usize, intensity: f64, mass: f64, kernel: TestFunction) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim must be >= 1"));
        }
        if !(intensity > 0.0) || !(mass > 0.0) {
            return Err(Error::invalid("intensity and mass must be positive"));
        }
        if kernel.dim() != dim {
            return Err(Error::DimensionMismatch {
                context: "kernel",
                expected: dim,
                got: kernel.dim(),
            });
        }
        if kernel.support().lower.iter().any(|l| *l < 0.0) {
            return Err(Error::invalid("kernel support must sit in [0, width)^d"));
        }
        let h_signed: f64 = kernel.pieces().iter().map(|(r, v)| v * r.volume()).sum();
        let kind = ModelKind::ShotNoise {
            intensity,
            mass,
            kernel,
        };
        let c_split = compute_c_split(&kind, dim);
        Ok(FieldModel {
            dim,
            name: "shot_noise",
            kind,
            c_split,
            sigma_sq: mass * mass * intensity * h_signed * h_signed,
            has_exact_cgf: true,
        })
    }

    pub fn block_iid(dim: usize, law: CellLaw) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim must be >= 1"));
        }
        let ok = match law {
            CellLaw::Rademacher { scale } => scale > 0.0,
            CellLaw::Uniform { bound } => bound > 0.0,
        };
        if !ok {
            return Err(Error::invalid("cell law parameter must be positive"));
        }
        let kind = ModelKind::BlockIid { law };
        let c_split = compute_c_split(&kind, dim);
        let sd = law.std_dev();
        Ok(FieldModel {
            dim,
            name: "block_iid",
            kind,
            c_split,
            sigma_sq: sd * sd,
            has_exact_cgf: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn has_exact_cgf(&self) -> bool {
        self.has_exact_cgf
    }

    /// Variance density: var of the window integral per unit volume, in the
    /// large-window limit (exact at any size for the Poisson model, exact at
    /// integer sizes for the block model).
    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_sq.sqrt()
    }

    /// Certified splittability constant, computed at construction.
    pub fn c_split(&self) -> f64 {
        self.c_split
    }

    /// Per-axis kernel widths (zero for models whose value at t depends only
    /// on the driving noise at t).
    pub fn kernel_widths(&self) -> Vec<f64> {
        match &self.kind {
            ModelKind::ShotNoise { kernel, .. } => kernel.support().upper.clone(),
            _ => vec![0.0; self.dim],
        }
    }

    /// One realization on a bounded window. Deterministic in
    /// (model, window, seed).
    pub fn sample(&self, window: &Rect, seed: u64) -> Result<SampleMeasure> {
        if window.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "sample window",
                expected: self.dim,
                got: window.dim(),
            });
        }
        match &self.kind {
            ModelKind::CenteredPoisson { intensity, mass } => {
                let mut rng = stream_rng(seed, &[tags::SAMPLE]);
                let pts = poisson_points(&mut rng, *intensity, window);
                poisson_measure(pts, *intensity, *mass, window)
            }
            ModelKind::ShotNoise {
                intensity,
                mass,
                kernel,
            } => {
                let ext = extended_region(window, kernel);
                let mut rng = stream_rng(seed, &[tags::SAMPLE]);
                let pts = poisson_points(&mut rng, *intensity, &ext);
                shot_noise_measure(&pts, *intensity, *mass, kernel, window)
            }
            ModelKind::BlockIid { law } => {
                let mut cells = Vec::new();
                for_each_lattice_cell(window, |k| {
                    let cell = lattice_cell(k);
                    if let Some(clip) = cell.intersection(window) {
                        cells.push(GridCell {
                            rect: clip,
                            density: block_cell_value(*law, seed, tags::SAMPLE, k),
                        });
                    }
                });
                SampleMeasure::new(Vec::new(), cells, window.clone())
            }
        }
    }

    /// Coupled draw of the split across {t_axis = offset}: x0, xminus, xplus
    /// each distributed as `sample`, xminus independent of xplus, and the
    /// leak returned as an explicit measure.
    pub fn split_sample(
        &self,
        window: &Rect,
        axis: usize,
        offset: f64,
        seed: u64,
    ) -> Result<SplitSample> {
        if window.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "split window",
                expected: self.dim,
                got: window.dim(),
            });
        }
        if axis >= self.dim {
            return Err(Error::invalid("split axis out of range"));
        }
        if !(window.lower[axis] < offset && offset < window.upper[axis]) {
            return Err(Error::invalid(format!(
                "hyperplane t_{axis} = {offset} does not cut the window interior"
            )));
        }
        match &self.kind {
            ModelKind::CenteredPoisson { intensity, mass } => {
                self.split_poisson(window, axis, offset, seed, *intensity, *mass)
            }
            ModelKind::ShotNoise {
                intensity,
                mass,
                kernel,
            } => self.split_shot_noise(window, axis, offset, seed, *intensity, *mass, kernel),
            ModelKind::BlockIid { law } => self.split_block(window, axis, offset, seed, *law),
        }
    }

    fn split_poisson(
        &self,
        window: &Rect,
        axis: usize,
        offset: f64,
        seed: u64,
        intensity: f64,
        mass: f64,
    ) -> Result<SplitSample> {
        let (lower, upper) = halves(window, axis, offset);
        let draw = |tag: u64, region: &Rect| {
            let mut rng = stream_rng(seed, &[tag]);
            poisson_points(&mut rng, intensity, region)
        };
        let p_lo = draw(tags::SPLIT_LOWER, &lower);
        let p_up = draw(tags::SPLIT_UPPER, &upper);
        let p_lo_fresh = draw(tags::SPLIT_LOWER_FRESH, &lower);
        let p_up_fresh = draw(tags::SPLIT_UPPER_FRESH, &upper);
        let glue = |a: &[Vec<f64>], b: &[Vec<f64>]| {
            let mut pts = a.to_vec();
            pts.extend_from_slice(b);
            poisson_measure(pts, intensity, mass, window)
        };
        Ok(SplitSample {
            x0: glue(&p_lo, &p_up)?,
            xminus: glue(&p_lo, &p_up_fresh)?,
            xplus: glue(&p_lo_fresh, &p_up)?,
            leak: SampleMeasure::zero(window.clone())?,
            axis,
            offset,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn split_shot_noise(
        &self,
        window: &Rect,
        axis: usize,
        offset: f64,
        seed: u64,
        intensity: f64,
        mass: f64,
        kernel: &TestFunction,
    ) -> Result<SplitSample> {
        // Split the driving points by their own location, then smooth. A
        // point below the hyperplane influences values up to one kernel
        // width above it, so the leak lives in [offset, offset + width).
        let ext = extended_region(window, kernel);
        let (ext_lower, ext_upper) = halves(&ext, axis, offset);
        let draw = |tag: u64, region: &Rect| {
            let mut rng = stream_rng(seed, &[tag]);
            poisson_points(&mut rng, intensity, region)
        };
        let p_lo = draw(tags::SPLIT_LOWER, &ext_lower);
        let p_up = draw(tags::SPLIT_UPPER, &ext_upper);
        let p_lo_fresh = draw(tags::SPLIT_LOWER_FRESH, &ext_lower);
        let p_up_fresh = draw(tags::SPLIT_UPPER_FRESH, &ext_upper);
        let glue = |a: &[Vec<f64>], b: &[Vec<f64>]| {
            let mut pts = a.to_vec();
            pts.extend_from_slice(b);
            shot_noise_measure(&pts, intensity, mass, kernel, window)
        };
        // Leak = (xplus - x0) restricted to the upper half-window: the fresh
        // and shared lower points smoothed, differenced, clipped above the
        // hyperplane. Compensators cancel. Below the hyperplane xminus
        // agrees with x0 on every kernel contribution, so the lower part of
        // the leak vanishes identically.
        let (_, upper_win) = halves(window, axis, offset);
        let mut pieces = Vec::new();
        let mut add_kernels = |pts: &[Vec<f64>], sign: f64| {
            for p in pts {
                for (kr, kv) in kernel.pieces() {
                    let shifted = Rect {
                        lower: kr.lower.iter().zip(p).map(|(l, c)| l + c).collect(),
                        upper: kr.upper.iter().zip(p).map(|(u, c)| u + c).collect(),
                    };
                    if let Some(clip) = shifted.intersection(&upper_win) {
                        pieces.push((clip, sign * mass * kv));
                    }
                }
            }
        };
        add_kernels(&p_lo_fresh, 1.0);
        add_kernels(&p_lo, -1.0);
        let leak = SampleMeasure::new(Vec::new(), overlay_cells(pieces), window.clone())?;
        Ok(SplitSample {
            x0: glue(&p_lo, &p_up)?,
            xminus: glue(&p_lo, &p_up_fresh)?,
            xplus: glue(&p_lo_fresh, &p_up)?,
            leak,
            axis,
            offset,
        })
    }

    fn split_block(
        &self,
        window: &Rect,
        axis: usize,
        offset: f64,
        seed: u64,
        law: CellLaw,
    ) -> Result<SplitSample> {
        // Cells wholly below the hyperplane share their value between x0 and
        // xminus (xplus redraws them); symmetrically above. Cells cut by the
        // hyperplane get three independent values, producing the leak.
        let mut c0 = Vec::new();
        let mut cm = Vec::new();
        let mut cp = Vec::new();
        let mut leak = Vec::new();
        for_each_lattice_cell(window, |k| {
            let cell = lattice_cell(k);
            let clip = match cell.intersection(window) {
                Some(c) => c,
                None => return,
            };
            let lo = cell.lower[axis];
            let hi = cell.upper[axis];
            if hi <= offset {
                let shared = block_cell_value(law, seed, tags::SPLIT_LOWER, k);
                let fresh = block_cell_value(law, seed, tags::SPLIT_LOWER_FRESH, k);
                push_cell(&mut c0, &clip, shared);
                push_cell(&mut cm, &clip, shared);
                push_cell(&mut cp, &clip, fresh);
            } else if lo >= offset {
                let shared = block_cell_value(law, seed, tags::SPLIT_UPPER, k);
                let fresh = block_cell_value(law, seed, tags::SPLIT_UPPER_FRESH, k);
                push_cell(&mut c0, &clip, shared);
                push_cell(&mut cm, &clip, fresh);
                push_cell(&mut cp, &clip, shared);
            } else {
                let base = block_cell_value(law, seed, tags::SPLIT_CUT_BASE, k);
                let minus = block_cell_value(law, seed, tags::SPLIT_CUT_MINUS, k);
                let plus = block_cell_value(law, seed, tags::SPLIT_CUT_PLUS, k);
                push_cell(&mut c0, &clip, base);
                push_cell(&mut cm, &clip, minus);
                push_cell(&mut cp, &clip, plus);
                let mut below = clip.clone();
                below.upper[axis] = offset;
                let mut above = clip.clone();
                above.lower[axis] = offset;
                if !below.is_empty() && minus != base {
                    leak.push(GridCell {
                        rect: below,
                        density: minus - base,
                    });
                }
                if !above.is_empty() && plus != base {
                    leak.push(GridCell {
                        rect: above,
                        density: plus - base,
                    });
                }
            }
        });
        Ok(SplitSample {
            x0: SampleMeasure::new(Vec::new(), c0, window.clone())?,
            xminus: SampleMeasure::new(Vec::new(), cm, window.clone())?,
            xplus: SampleMeasure::new(Vec::new(), cp, window.clone())?,
            leak: SampleMeasure::new(Vec::new(), leak, window.clone())?,
            axis,
            offset,
        })
    }

    /// One coupled draw of (u, v, w, z) on [-r, r) x b, split at t_1 = 0:
    /// u and v are the lower/upper integrals of the independent pair, w the
    /// full integral of x0, z the leak integral, so w + z = u + v.
    pub fn decompose_uvwz(&self, r: f64, b: Option<&Rect>, seed: u64) -> Result<UVWZSample> {
        if !(r > 0.0) {
            return Err(Error::invalid("r must be positive"));
        }
        let window = match (self.dim, b) {
            (1, None) => Rect::interval(-r, r)?,
            (1, Some(_)) => {
                return Err(Error::invalid("cross-section box not allowed when dim = 1"))
            }
            (_, None) => {
                return Err(Error::invalid("cross-section box required when dim >= 2"))
            }
            (d, Some(b)) => {
                if b.dim() != d - 1 {
                    return Err(Error::DimensionMismatch {
                        context: "cross-section box",
                        expected: d - 1,
                        got: b.dim(),
                    });
                }
                let mut lower = vec![-r];
                let mut upper = vec![r];
                lower.extend_from_slice(&b.lower);
                upper.extend_from_slice(&b.upper);
                Rect::new(lower, upper)?
            }
        };
        let split = self.split_sample(&window, 0, 0.0, seed)?;
        let (lower, upper) = halves(&window, 0, 0.0);
        Ok(UVWZSample {
            u: split.xminus.integrate_box(&lower)?,
            v: split.xplus.integrate_box(&upper)?,
            w: split.x0.integrate_box(&window)?,
            z: split.leak.integrate_box(&window)?,
        })
    }

    /// Fast draw of the scaled integral: same law as
    /// integrate_scaled(sample(window, seed), phi, scale) without building
    /// the measure. For the block and kernel models the value reproduces the
    /// sampled path bit for bit; for the Poisson model the per-piece counts
    /// carry the same joint law under a different coupling.
    pub fn integral_scaled_fast(
        &self,
        phi: &TestFunction,
        scale: &Scaling,
        seed: u64,
    ) -> Result<f64> {
        if phi.dim() != self.dim || scale.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "integral_scaled_fast",
                expected: self.dim,
                got: if phi.dim() != self.dim {
                    phi.dim()
                } else {
                    scale.dim()
                },
            });
        }
        match &self.kind {
            ModelKind::CenteredPoisson { intensity, mass } => {
                // phi is constant on each scaled piece, so only the count of
                // points per piece matters.
                let mut rng = stream_rng(seed, &[tags::SAMPLE]);
                let mut acc = 0.0f64;
                for (b, v) in phi.pieces() {
                    let vol = b.scaled(scale).volume();
                    let lam = intensity * vol;
                    let n = if lam > 0.0 {
                        Poisson::new(lam).unwrap().sample(&mut rng)
                    } else {
                        0.0
                    };
                    acc += mass * v * (n - lam);
                }
                Ok(acc)
            }
            ModelKind::ShotNoise {
                intensity,
                mass,
                kernel,
            } => {
                let window = phi.support().scaled(scale);
                let ext = extended_region(&window, kernel);
                let mut rng = stream_rng(seed, &[tags::SAMPLE]);
                let pts = poisson_points(&mut rng, *intensity, &ext);
                let mut acc = 0.0f64;
                for p in &pts {
                    acc += mass * correlation_at(phi, scale, kernel, p);
                }
                let h_signed: f64 = kernel.pieces().iter().map(|(r, v)| v * r.volume()).sum();
                let phi_int: f64 = phi
                    .pieces()
                    .iter()
                    .map(|(b, v)| v * b.scaled(scale).volume())
                    .sum();
                Ok(acc - intensity * mass * h_signed * phi_int)
            }
            ModelKind::BlockIid { law } => {
                let support = phi.support().scaled(scale);
                let mut acc = 0.0f64;
                for_each_lattice_cell(&support, |k| {
                    let cell = lattice_cell(k);
                    let mut a = 0.0f64;
                    for (b, v) in phi.pieces() {
                        if let Some(inter) = cell.intersection(&b.scaled(scale)) {
                            a += v * inter.volume();
                        }
                    }
                    if a != 0.0 {
                        acc += a * block_cell_value(*law, seed, tags::SAMPLE, k);
                    }
                });
                Ok(acc)
            }
        }
    }

    /// Smallest constant C (to about 1e-12 relative) such that the certified
    /// law of the unit-cube variation V satisfies E exp(V / C) <= 2. The
    /// Poisson and block laws are exact; the kernel model uses the
    /// dominating bound V <= mass * |kernel|_1 * N + compensator with N the
    /// count of points within kernel reach of the cube.
    pub fn splittable_constant(&self) -> f64 {
        compute_c_split(&self.kind, self.dim)
    }

    /// Certified constant for the leak of a unit split, same convention as
    /// `splittable_constant`; zero means the leak vanishes identically.
    pub fn leak_certificate(&self) -> f64 {
        match &self.kind {
            ModelKind::CenteredPoisson { .. } => 0.0,
            ModelKind::BlockIid { law } => {
                // Cut cells differ by at most twice the density bound over a
                // region of unit-cube volume at most 1.
                let bound = match law {
                    CellLaw::Rademacher { scale } => 2.0 * scale,
                    CellLaw::Uniform { bound } => 2.0 * bound,
                };
                bound / std::f64::consts::LN_2
            }
            ModelKind::ShotNoise {
                intensity,
                mass,
                kernel,
            } => {
                let h_abs: f64 = kernel
                    .pieces()
                    .iter()
                    .map(|(r, v)| v.abs() * r.volume())
                    .sum();
                let reach: f64 = kernel.support().upper.iter().map(|w| 1.0 + w).product();
                // Two independent point streams feed the leak band.
                c_for_shifted_poisson(0.0, mass * h_abs, 2.0 * intensity * reach)
            }
        }
    }

    /// Distributional checks of the split construction: marginal agreement
    /// of x0, xminus, xplus with fresh samples (two-sample KS over probe
    /// boxes), cross-half dependence scores, and the leak support radius.
    pub fn verify_split_statistics(
        &self,
        window: &Rect,
        axis: usize,
        offset: f64,
        n_draws: usize,
        seed: u64,
    ) -> Result<SplitStatsReport> {
        if n_draws < 1000 {
            return Err(Error::Precondition(
                "verify_split_statistics needs n_draws >= 1000".into(),
            ));
        }
        let probes = probe_boxes(window, axis, offset);
        let (lower_win, upper_win) = halves(window, axis, offset);

        struct DrawRow {
            x0: Vec<f64>,
            xm: Vec<f64>,
            xp: Vec<f64>,
            r1: Vec<f64>,
            r2: Vec<f64>,
            lo_fun: Vec<f64>,
            up_fun: Vec<f64>,
            radius: f64,
        }
        let rows: Vec<DrawRow> = (0..n_draws)
            .into_par_iter()
            .map(|i| {
                let s = self
                    .split_sample(
                        window,
                        axis,
                        offset,
                        stream_key(seed, &[tags::VERIFY, i as u64]),
                    )
                    .unwrap();
                let ref1 = self
                    .sample(window, stream_key(seed, &[tags::VERIFY, i as u64, 1]))
                    .unwrap();
                let ref2 = self
                    .sample(window, stream_key(seed, &[tags::VERIFY, i as u64, 2]))
                    .unwrap();
                let ints = |m: &SampleMeasure| -> Vec<f64> {
                    probes.iter().map(|b| m.integrate_box(b).unwrap()).collect()
                };
                DrawRow {
                    x0: ints(&s.x0),
                    xm: ints(&s.xminus),
                    xp: ints(&s.xplus),
                    r1: ints(&ref1),
                    r2: ints(&ref2),
                    lo_fun: half_functionals(&s.xminus, &lower_win),
                    up_fun: half_functionals(&s.xplus, &upper_win),
                    radius: leak_radius(&s.leak, axis, offset),
                }
            })
            .collect();

        let n_stats = 4 * probes.len();
        let threshold =
            stats::ks_two_sample_threshold(n_draws, n_draws, 0.01 / n_stats as f64);
        let max_ks = |pick: &dyn Fn(&DrawRow) -> &Vec<f64>| -> f64 {
            (0..probes.len())
                .map(|j| {
                    let a: Vec<f64> = rows.iter().map(|r| pick(r)[j]).collect();
                    let b: Vec<f64> = rows.iter().map(|r| r.r1[j]).collect();
                    stats::ks_two_sample(&a, &b)
                })
                .fold(0.0, f64::max)
        };
        let ks_x0 = max_ks(&|r| &r.x0);
        let ks_xminus = max_ks(&|r| &r.xm);
        let ks_xplus = max_ks(&|r| &r.xp);
        let ks_control = max_ks(&|r| &r.r2);

        // Dependence: centered products of every (lower, upper) functional
        // pair, scored against the empirical standard error of the product.
        let nf = rows[0].lo_fun.len();
        let mut max_cov_score = 0.0f64;
        for a in 0..nf {
            for b in 0..nf {
                let xs: Vec<f64> = rows.iter().map(|r| r.lo_fun[a]).collect();
                let ys: Vec<f64> = rows.iter().map(|r| r.up_fun[b]).collect();
                let mx = stats::mean(&xs);
                let my = stats::mean(&ys);
                let prods: Vec<f64> = xs
                    .iter()
                    .zip(&ys)
                    .map(|(x, y)| (x - mx) * (y - my))
                    .collect();
                let cov = stats::mean(&prods);
                let se = (stats::variance(&prods) / prods.len() as f64).sqrt();
                if se > 0.0 {
                    max_cov_score = max_cov_score.max(cov.abs() / se);
                }
            }
        }
        let leak_radius = rows.iter().map(|r| r.radius).fold(0.0, f64::max);
        let marginals_ok = [ks_x0, ks_xminus, ks_xplus, ks_control]
            .iter()
            .all(|k| *k < threshold);
        Ok(SplitStatsReport {
            n_draws,
            ks_threshold: threshold,
            ks_x0,
            ks_xminus,
            ks_xplus,
            ks_control,
            max_cov_score,
            leak_radius,
            marginals_ok,
            independence_ok: max_cov_score < 4.0,
        })
    }
}

/// Marginal of the leak over the first axis: the (d-1)-dimensional measure
/// B |-> integral over b1 x B of the leak. Needs d >= 2; the d = 1 theory
/// treats the leak as a scalar and has no marginal to take.
pub fn leak_marginal(split: &SplitSample, b1: &Rect) -> Result<SampleMeasure> {
    let d = split.leak.dim();
    if d < 2 {
        return Err(Error::unsupported(
            "leak marginal requires dim >= 2",
        ));
    }
    if b1.dim() != 1 {
        return Err(Error::DimensionMismatch {
            context: "leak marginal slice",
            expected: 1,
            got: b1.dim(),
        });
    }
    let keep: Vec<usize> = (1..d).collect();
    split.leak.marginalize(&keep, b1)
}

fn compute_c_split(kind: &ModelKind, dim: usize) -> f64 {
    match kind {
        ModelKind::CenteredPoisson { intensity, mass } => {
            // Unit-cube variation is mass * N + intensity * mass exactly.
            c_for_shifted_poisson(intensity * mass, *mass, *intensity)
        }
        ModelKind::BlockIid { law } => match law {
            // Variation over the unit cube is the mean absolute density,
            // deterministic for the sign law.
            CellLaw::Rademacher { scale } => scale / std::f64::consts::LN_2,
            CellLaw::Uniform { bound } => {
                // E exp(|V|/C) with V uniform on [-b, b): (C/b)(e^{b/C} - 1).
                let b = *bound;
                let g = |c: f64| (c / b) * ((b / c).exp() - 1.0) - 2.0;
                let mut hi = b;
                while g(hi) > 0.0 {
                    hi *= 2.0;
                }
                let mut lo = hi / 2.0;
                while g(lo) < 0.0 {
                    lo /= 2.0;
                }
                bisect_decreasing(g, lo, hi, 1e-10 * b)
            }
        },
        ModelKind::ShotNoise {
            intensity,
            mass,
            kernel,
        } => {
            let h_abs: f64 = kernel
                .pieces()
                .iter()
                .map(|(r, v)| v.abs() * r.volume())
                .sum();
            let reach: f64 = kernel
                .support()
                .upper
                .iter()
                .take(dim)
                .map(|w| 1.0 + w)
                .product();
            c_for_shifted_poisson(intensity * mass * h_abs, mass * h_abs, intensity * reach)
        }
    }
}

fn halves(window: &Rect, axis: usize, offset: f64) -> (Rect, Rect) {
    let mut lower = window.clone();
    lower.upper[axis] = offset;
    let mut upper = window.clone();
    upper.lower[axis] = offset;
    (lower, upper)
}

fn extended_region(window: &Rect, kernel: &TestFunction) -> Rect {
    // Points p influence t in p + support(kernel), so every point that can
    // touch the window lies in [window.lower - width, window.upper).
    Rect {
        lower: window
            .lower
            .iter()
            .zip(&kernel.support().upper)
            .map(|(l, w)| l - w)
            .collect(),
        upper: window.upper.clone(),
    }
}

fn poisson_points(rng: &mut ChaCha8Rng, intensity: f64, region: &Rect) -> Vec<Vec<f64>> {
    let lam = intensity * region.volume();
    if lam <= 0.0 {
        return Vec::new();
    }
    let n = Poisson::new(lam).unwrap().sample(rng) as usize;
    (0..n)
        .map(|_| {
            region
                .lower
                .iter()
                .zip(&region.upper)
                .map(|(l, u)| rng.gen_range(*l..*u))
                .collect()
        })
        .collect()
}

fn poisson_measure(
    pts: Vec<Vec<f64>>,
    intensity: f64,
    mass: f64,
    window: &Rect,
) -> Result<SampleMeasure> {
    let atoms = pts
        .into_iter()
        .map(|point| Atom {
            point,
            weight: mass,
        })
        .collect();
    let cells = vec![GridCell {
        rect: window.clone(),
        density: -intensity * mass,
    }];
    SampleMeasure::new(atoms, cells, window.clone())
}

fn shot_noise_measure(
    pts: &[Vec<f64>],
    intensity: f64,
    mass: f64,
    kernel: &TestFunction,
    window: &Rect,
) -> Result<SampleMeasure> {
    let h_signed: f64 = kernel.pieces().iter().map(|(r, v)| v * r.volume()).sum();
    let mut pieces = vec![(window.clone(), -intensity * mass * h_signed)];
    for p in pts {
        for (kr, kv) in kernel.pieces() {
            let shifted = Rect {
                lower: kr.lower.iter().zip(p).map(|(l, c)| l + c).collect(),
                upper: kr.upper.iter().zip(p).map(|(u, c)| u + c).collect(),
            };
            if let Some(clip) = shifted.intersection(window) {
                pieces.push((clip, mass * kv));
            }
        }
    }
    SampleMeasure::new(Vec::new(), overlay_cells(pieces), window.clone())
}

/// Exact correlation integral of the scaled test function with the kernel
/// shifted to p: the integral of phi(t / scale) * kernel(t - p) dt, a sum of
/// box-overlap volumes since both factors are step functions.
fn correlation_at(phi: &TestFunction, scale: &Scaling, kernel: &TestFunction, p: &[f64]) -> f64 {
    let mut acc = 0.0f64;
    for (pb, pv) in phi.pieces() {
        let sb = pb.scaled(scale);
        for (kb, kv) in kernel.pieces() {
            let mut vol = 1.0f64;
            for i in 0..p.len() {
                let l = sb.lower[i].max(kb.lower[i] + p[i]);
                let u = sb.upper[i].min(kb.upper[i] + p[i]);
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

fn lattice_cell(k: &[i64]) -> Rect {
    Rect {
        lower: k.iter().map(|&i| i as f64).collect(),
        upper: k.iter().map(|&i| (i + 1) as f64).collect(),
    }
}

fn block_cell_value(law: CellLaw, seed: u64, role: u64, k: &[i64]) -> f64 {
    let mut t = Vec::with_capacity(k.len() + 1);
    t.push(role);
    t.extend(k.iter().map(|&i| tag_i64(i)));
    law.draw(&mut stream_rng(seed, &t))
}

/// Visits every integer lattice cell [k, k+1)^d that meets the box.
fn for_each_lattice_cell(region: &Rect, mut f: impl FnMut(&[i64])) {
    let d = region.dim();
    let lo: Vec<i64> = region.lower.iter().map(|l| l.floor() as i64).collect();
    let hi: Vec<i64> = region
        .upper
        .iter()
        .map(|u| u.ceil() as i64)
        .collect();
    if lo.iter().zip(&hi).any(|(l, h)| l >= h) {
        return;
    }
    let mut k = lo.clone();
    loop {
        f(&k);
        let mut axis = d;
        loop {
            if axis == 0 {
                return;
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

fn push_cell(cells: &mut Vec<GridCell>, rect: &Rect, density: f64) {
    cells.push(GridCell {
        rect: rect.clone(),
        density,
    });
}

fn probe_boxes(window: &Rect, axis: usize, offset: f64) -> Vec<Rect> {
    let (lower, upper) = halves(window, axis, offset);
    let q = (offset - window.lower[axis]).min(window.upper[axis] - offset) / 2.0;
    let mut band = window.clone();
    band.lower[axis] = offset - q;
    band.upper[axis] = offset + q;
    vec![window.clone(), lower, upper, band]
}

/// Bounded functionals of one half-window realization: tanh and sign of the
/// integral over four nested boxes shrinking toward the hyperplane.
fn half_functionals(m: &SampleMeasure, half: &Rect) -> Vec<f64> {
    let mut boxes = vec![half.clone()];
    let mut b = half.clone();
    for _ in 0..3 {
        let mut shrunk = b.clone();
        for i in 0..b.dim() {
            let mid = 0.5 * (shrunk.lower[i] + shrunk.upper[i]);
            shrunk.lower[i] = 0.5 * (shrunk.lower[i] + mid);
            shrunk.upper[i] = 0.5 * (shrunk.upper[i] + mid);
        }
        boxes.push(shrunk.clone());
        b = shrunk;
    }
    let mut out = Vec::with_capacity(8);
    for bx in &boxes {
        let x = m.integrate_box(bx).unwrap();
        out.push(x.tanh());
        out.push(if x > 0.0 { 1.0 } else { 0.0 });
    }
    out
}

/// Largest distance from the hyperplane reached by the leak's support.
fn leak_radius(leak: &SampleMeasure, axis: usize, offset: f64) -> f64 {
    let mut r = 0.0f64;
    for c in leak.cells() {
        r = r.max(offset - c.rect.lower[axis]);
        r = r.max(c.rect.upper[axis] - offset);
    }
    for a in leak.atoms() {
        r = r.max((a.point[axis] - offset).abs());
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::TestFunction;

    fn unit_kernel_1d() -> TestFunction {
        TestFunction::indicator(Rect::interval(0.0, 1.0).unwrap()).unwrap()
    }

    fn two_piece_kernel_2d() -> TestFunction {
        TestFunction::new(
            vec![
                (Rect::from_bounds(&[(0.0, 0.5), (0.0, 1.0)]).unwrap(), 1.0),
                (Rect::from_bounds(&[(0.5, 1.0), (0.0, 1.0)]).unwrap(), 0.5),
            ],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn poisson_constant_solves_closed_form() {
        let m = FieldModel::centered_poisson(1, 1.0, 1.0).unwrap();
        let c = m.c_split();
        // Root of y + e^y = 1 + ln 2 with y = 1/C, found independently.
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if mid + mid.exp() < 1.0 + std::f64::consts::LN_2 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let want = 1.0 / (0.5 * (lo + hi));
        assert!((c - want).abs() < 1e-7, "c = {c}, want {want}");
        assert!((c - 3.1414469238713076).abs() < 1e-6);
        // The moment condition itself holds with equality.
        let y = 1.0 / c;
        assert!((y.exp() * ((y.exp() - 1.0).exp()) - 2.0).abs() < 1e-8);
    }

    #[test]
    fn rademacher_constant_is_reciprocal_log_two() {
        let m = FieldModel::block_iid(1, CellLaw::Rademacher { scale: 1.0 }).unwrap();
        assert!((m.c_split() - 1.0 / std::f64::consts::LN_2).abs() < 1e-12);
        // The constant scales linearly with the density scale.
        let m2 = FieldModel::block_iid(1, CellLaw::Rademacher { scale: 2.0 }).unwrap();
        assert!((m2.c_split() - 2.0 * m.c_split()).abs() < 1e-10);
    }

    #[test]
    fn uniform_constant_solves_moment_equation() {
        let m = FieldModel::block_iid(1, CellLaw::Uniform { bound: 1.0 }).unwrap();
        let c = m.c_split();
        assert!((c * ((1.0 / c).exp() - 1.0) - 2.0).abs() < 1e-8);
    }

    #[test]
    fn certificate_soundness_by_monte_carlo() {
        // E exp(variation over the unit cube / C) <= 2 within MC error.
        let window = Rect::interval(0.0, 1.0).unwrap();
        let models = vec![
            FieldModel::centered_poisson(1, 1.0, 1.0).unwrap(),
            FieldModel::block_iid(1, CellLaw::Rademacher { scale: 1.0 }).unwrap(),
            FieldModel::block_iid(1, CellLaw::Uniform { bound: 1.5 }).unwrap(),
            FieldModel::shot_noise(1, 1.0, 1.0, unit_kernel_1d()).unwrap(),
        ];
        for m in models {
            let c = m.c_split();
            let n = 4000;
            let vals: Vec<f64> = (0..n)
                .map(|i| {
                    let s = m.sample(&window, stream_key(7, &[i])).unwrap();
                    (s.variation_box(&window).unwrap() / c).exp()
                })
                .collect();
            let mean = stats::mean(&vals);
            let se = (stats::variance(&vals) / n as f64).sqrt();
            assert!(
                mean <= 2.0 + 3.0 * se,
                "{}: E exp(V/C) = {mean} (se {se})",
                m.name()
            );
        }
    }

    #[test]
    fn sample_mean_is_centered() {
        let window = Rect::interval(0.0, 2.0).unwrap();
        for m in [
            FieldModel::centered_poisson(1, 1.0, 1.0).unwrap(),
            FieldModel::shot_noise(1, 1.0, 1.0, unit_kernel_1d()).unwrap(),
            FieldModel::block_iid(1, CellLaw::Uniform { bound: 1.0 }).unwrap(),
        ] {
            let n = 4000;
            let vals: Vec<f64> = (0..n)
                .map(|i| {
                    m.sample(&window, stream_key(11, &[i]))
                        .unwrap()
                        .integrate_box(&window)
                        .unwrap()
                })
                .collect();
            let mean = stats::mean(&vals);
            let se = (stats::variance(&vals) / n as f64).sqrt();
            assert!(mean.abs() <= 4.0 * se, "{}: mean {mean}, se {se}", m.name());
        }
    }

    #[test]
    fn block_sample_takes_sign_values() {
        let m = FieldModel::block_iid(2, CellLaw::Rademacher { scale: 1.0 }).unwrap();
        let window = Rect::from_bounds(&[(0.0, 4.0), (0.0, 4.0)]).unwrap();
        let s = m.sample(&window, 5).unwrap();
        assert_eq!(s.cells().len(), 16);
        for c in s.cells() {
            assert!(c.density == 1.0 || c.density == -1.0);
        }
        // Same seed, larger window: shared cells keep their values.
        let wider = Rect::from_bounds(&[(0.0, 6.0), (0.0, 4.0)]).unwrap();
        let s2 = m.sample(&wider, 5).unwrap();
        for c in s.cells() {
            let mid: Vec<f64> = c
                .rect
                .lower
                .iter()
                .zip(&c.rect.upper)
                .map(|(l, u)| 0.5 * (l + u))
                .collect();
            let probe = Rect::new(
                mid.iter().map(|x| x - 0.25).collect(),
                mid.iter().map(|x| x + 0.25).collect(),
            )
            .unwrap();
            assert_eq!(
                s.integrate_box(&probe).unwrap(),
                s2.integrate_box(&probe).unwrap()
            );
        }
    }

    #[test]
    fn poisson_split_has_zero_leak() {
        let m = FieldModel::centered_poisson(1, 2.0, 1.0).unwrap();
        let window = Rect::interval(-2.0, 2.0).unwrap();
        for seed in 0..20 {
            let s = m.split_sample(&window, 0, 0.0, seed).unwrap();
            assert!(s.leak.is_zero());
            // xminus agrees with x0 below the cut, xplus above it.
            let lower = Rect::interval(-2.0, 0.0).unwrap();
            let upper = Rect::interval(0.0, 2.0).unwrap();
            assert_eq!(
                s.x0.integrate_box(&lower).unwrap(),
                s.xminus.integrate_box(&lower).unwrap()
            );
            assert_eq!(
                s.x0.integrate_box(&upper).unwrap(),
                s.xplus.integrate_box(&upper).unwrap()
            );
        }
    }

    #[test]
    fn split_rejects_hyperplane_outside_window() {
        let m = FieldModel::centered_poisson(1, 1.0, 1.0).unwrap();
        let window = Rect::interval(0.0, 1.0).unwrap();
        assert!(m.split_sample(&window, 0, 2.0, 1).is_err());
        assert!(m.split_sample(&window, 0, 0.0, 1).is_err());
    }

    #[test]
    fn leak_identity_on_half_boxes() {
        // On any box inside one half-window, leak = x^{-/+} - x0 exactly.
        let window = Rect::interval(-3.0, 3.0).unwrap();
        let models = vec![
            FieldModel::shot_noise(1, 1.5, 1.0, unit_kernel_1d()).unwrap(),
            FieldModel::block_iid(1, CellLaw::Uniform { bound: 1.0 }).unwrap(),
        ];
        for m in models {
            for seed in 0..30 {
                let s = m.split_sample(&window, 0, 0.5, seed).unwrap();
                for &(lo, hi) in &[(-3.0, 0.5), (-2.0, 0.0), (-1.0, 0.25)] {
                    let b = Rect::interval(lo, hi).unwrap();
                    let want = s.xminus.integrate_box(&b).unwrap()
                        - s.x0.integrate_box(&b).unwrap();
                    let got = s.leak.integrate_box(&b).unwrap();
                    assert!((got - want).abs() < 1e-12, "{}: lower leak", m.name());
                }
                for &(lo, hi) in &[(0.5, 3.0), (0.5, 1.25), (1.0, 2.0)] {
                    let b = Rect::interval(lo, hi).unwrap();
                    let want = s.xplus.integrate_box(&b).unwrap()
                        - s.x0.integrate_box(&b).unwrap();
                    let got = s.leak.integrate_box(&b).unwrap();
                    assert!((got - want).abs() < 1e-12, "{}: upper leak", m.name());
                }
            }
        }
    }

    #[test]
    fn shot_noise_leak_stays_within_kernel_width() {
        let m = FieldModel::shot_noise(1, 2.0, 1.0, unit_kernel_1d()).unwrap();
        let window = Rect::interval(-4.0, 4.0).unwrap();
        for seed in 0..30 {
            let s = m.split_sample(&window, 0, 0.0, seed).unwrap();
            let radius = leak_radius(&s.leak, 0, 0.0);
            assert!(radius <= 1.0 + 1e-12, "radius {radius}");
            // Boxes clear of the band see no leak variation.
            for b in [
                Rect::interval(-4.0, -0.5).unwrap(),
                Rect::interval(1.0, 4.0).unwrap(),
            ] {
                assert_eq!(s.leak.variation_box(&b).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn uvwz_identity_holds_on_every_draw() {
        let models: Vec<FieldModel> = vec![
            FieldModel::centered_poisson(1, 1.0, 1.0).unwrap(),
            FieldModel::shot_noise(1, 1.0, 1.0, unit_kernel_1d()).unwrap(),
            FieldModel::block_iid(1, CellLaw::Rademacher { scale: 1.0 }).unwrap(),
            FieldModel::shot_noise(2, 0.5, 1.0, two_piece_kernel_2d()).unwrap(),
        ];
        let b2 = Rect::interval(0.0, 2.0).unwrap();
        for m in &models {
            for seed in 0..200 {
                let b = if m.dim() == 1 { None } else { Some(&b2) };
                let s = m.decompose_uvwz(2.5, b, seed).unwrap();
                let scale = 1.0 + s.u.abs() + s.v.abs() + s.w.abs();
                assert!(
                    (s.w + s.z - s.u - s.v).abs() <= 1e-12 * scale,
                    "{}: w+z-u-v = {}",
                    m.name(),
                    s.w + s.z - s.u - s.v
                );
            }
        }
        // Poisson d=1: zero leak makes w = u + v on the nose.
        let m = &models[0];
        for seed in 0..50 {
            let s = m.decompose_uvwz(1.0, None, seed).unwrap();
            assert_eq!(s.z, 0.0);
        }
    }

    #[test]
    fn uvwz_halves_are_uncorrelated() {
        let m = FieldModel::block_iid(1, CellLaw::Uniform { bound: 1.0 }).unwrap();
        let n = 3000usize;
        let draws: Vec<UVWZSample> = (0..n)
            .map(|i| m.decompose_uvwz(3.0, None, stream_key(3, &[i as u64])).unwrap())
            .collect();
        let us: Vec<f64> = draws.iter().map(|d| d.u).collect();
        let vs: Vec<f64> = draws.iter().map(|d| d.v).collect();
        let mu = stats::mean(&us);
        let mv = stats::mean(&vs);
        let corr: f64 = us
            .iter()
            .zip(&vs)
            .map(|(u, v)| (u - mu) * (v - mv))
            .sum::<f64>()
            / ((n as f64 - 1.0)
                * stats::variance(&us).sqrt()
                * stats::variance(&vs).sqrt());
        assert!(corr.abs() <= 4.0 / (n as f64).sqrt(), "corr = {corr}");
    }

    #[test]
    fn fast_integral_matches_sampled_path_for_block_and_kernel() {
        let phi = TestFunction::new(
            vec![
                (Rect::interval(0.0, 0.5).unwrap(), 1.0),
                (Rect::interval(0.5, 1.0).unwrap(), -2.0),
            ],
            0.0,
        )
        .unwrap();
        let scale = Scaling::uniform(1, 4.0).unwrap();
        let window = Rect::interval(0.0, 4.0).unwrap();
        for m in [
            FieldModel::block_iid(1, CellLaw::Uniform { bound: 1.0 }).unwrap(),
            FieldModel::shot_noise(1, 1.0, 1.0, unit_kernel_1d()).unwrap(),
        ] {
            for seed in 0..50 {
                let fast = m.integral_scaled_fast(&phi, &scale, seed).unwrap();
                let slow = m
                    .sample(&window, seed)
                    .unwrap()
                    .integrate_scaled(&phi, &scale)
                    .unwrap();
                assert!(
                    (fast - slow).abs() <= 1e-9 * (1.0 + fast.abs()),
                    "{}: fast {fast} slow {slow}",
                    m.name()
                );
            }
        }
    }

    #[test]
    fn fast_integral_matches_poisson_moments() {
        // The Poisson fast path uses a different coupling; its first two
        // moments must match the closed form mean 0, var = mass^2 *
        // intensity * r * |phi|_2^2.
        let phi = TestFunction::new(
            vec![
                (Rect::interval(0.0, 0.5).unwrap(), 1.0),
                (Rect::interval(0.5, 1.0).unwrap(), -1.0),
            ],
            0.0,
        )
        .unwrap();
        let m = FieldModel::centered_poisson(1, 2.0, 1.0).unwrap();
        let scale = Scaling::uniform(1, 8.0).unwrap();
        let n = 20000usize;
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                m.integral_scaled_fast(&phi, &scale, stream_key(13, &[i as u64]))
                    .unwrap()
            })
            .collect();
        let mean = stats::mean(&vals);
        let var = stats::variance(&vals);
        let want_var = 2.0 * 8.0 * phi.l2_norm_sq();
        let se_mean = (var / n as f64).sqrt();
        assert!(mean.abs() <= 4.0 * se_mean);
        assert!((var - want_var).abs() <= 5.0 * want_var / (n as f64).sqrt() * 2.0);
    }

    #[test]
    fn verify_split_statistics_passes_for_models() {
        let window = Rect::interval(-2.0, 2.0).unwrap();
        for m in [
            FieldModel::centered_poisson(1, 1.0, 1.0).unwrap(),
            FieldModel::block_iid(1, CellLaw::Rademacher { scale: 1.0 }).unwrap(),
        ] {
            let rep = m.verify_split_statistics(&window, 0, 0.25, 1000, 19).unwrap();
            assert!(rep.marginals_ok, "{}: {rep:?}", m.name());
            assert!(rep.independence_ok, "{}: {rep:?}", m.name());
        }
        let m = FieldModel::shot_noise(1, 1.0, 1.0, unit_kernel_1d()).unwrap();
        let rep = m.verify_split_statistics(&window, 0, 0.25, 1000, 23).unwrap();
        assert!(rep.leak_radius <= 1.0 + 1e-12);
        assert!(rep.marginals_ok && rep.independence_ok, "{rep:?}");
    }

    #[test]
    fn stationarity_of_box_integrals() {
        // Law of the integral over B + s matches the law over B across
        // seeds; integer shifts for the lattice model, arbitrary for Poisson.
        let n = 800usize;
        let window = Rect::interval(0.0, 8.0).unwrap();
        let cases: Vec<(FieldModel, f64)> = vec![
            (FieldModel::centered_poisson(1, 1.0, 1.0).unwrap(), 1.7),
            (
                FieldModel::block_iid(1, CellLaw::Uniform { bound: 1.0 }).unwrap(),
                3.0,
            ),
        ];
        for (m, shift) in cases {
            let b0 = Rect::interval(1.0, 3.0).unwrap();
            let b1 = Rect::interval(1.0 + shift, 3.0 + shift).unwrap();
            let xs: Vec<f64> = (0..n)
                .map(|i| {
                    m.sample(&window, stream_key(1, &[i as u64]))
                        .unwrap()
                        .integrate_box(&b0)
                        .unwrap()
                })
                .collect();
            let ys: Vec<f64> = (0..n)
                .map(|i| {
                    m.sample(&window, stream_key(2, &[i as u64]))
                        .unwrap()
                        .integrate_box(&b1)
                        .unwrap()
                })
                .collect();
            let d = stats::ks_two_sample(&xs, &ys);
            let thr = stats::ks_two_sample_threshold(n, n, 0.01);
            assert!(d < thr, "{}: KS {d} vs {thr}", m.name());
        }
    }

    #[test]
    fn leak_marginal_requires_two_dimensions() {
        let m = FieldModel::shot_noise(1, 1.0, 1.0, unit_kernel_1d()).unwrap();
        let window = Rect::interval(-2.0, 2.0).unwrap();
        let s = m.split_sample(&window, 0, 0.0, 3).unwrap();
        assert!(matches!(
            leak_marginal(&s, &Rect::interval(0.0, 1.0).unwrap()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn leak_marginal_matches_direct_integral() {
        let m = FieldModel::shot_noise(2, 1.0, 1.0, two_piece_kernel_2d()).unwrap();
        let window = Rect::from_bounds(&[(-3.0, 3.0), (0.0, 4.0)]).unwrap();
        for seed in 0..20 {
            let s = m.split_sample(&window, 0, 0.0, seed).unwrap();
            let b1 = Rect::interval(0.0, 1.0).unwrap();
            let marg = leak_marginal(&s, &b1).unwrap();
            assert_eq!(marg.dim(), 1);
            for &(lo, hi) in &[(0.0, 4.0), (1.0, 2.5)] {
                let b2 = Rect::interval(lo, hi).unwrap();
                let got = marg.integrate_box(&b2).unwrap();
                let want = s
                    .leak
                    .integrate_box(&Rect::from_bounds(&[(0.0, 1.0), (lo, hi)]).unwrap())
                    .unwrap();
                assert!((got - want).abs() < 1e-12);
            }
        }
        // Zero leak gives a zero marginal.
        let mp = FieldModel::centered_poisson(2, 1.0, 1.0).unwrap();
        let s = mp.split_sample(&window, 0, 0.0, 1).unwrap();
        assert!(leak_marginal(&s, &Rect::interval(0.0, 1.0).unwrap())
            .unwrap()
            .is_zero());
    }

    #[test]
    fn shot_noise_split_marginal_matches_plain_sample() {
        // xminus from the coupled construction has the same law as sample();
        // spot-check the variance of the window integral.
        let m = FieldModel::shot_noise(1, 1.0, 1.0, unit_kernel_1d()).unwrap();
        let window = Rect::interval(-2.0, 2.0).unwrap();
        let n = 3000usize;
        let a: Vec<f64> = (0..n)
            .map(|i| {
                let s = m
                    .split_sample(&window, 0, 0.0, stream_key(5, &[i as u64]))
                    .unwrap();
                s.xminus.integrate_box(&window).unwrap()
            })
            .collect();
        let b: Vec<f64> = (0..n)
            .map(|i| {
                m.sample(&window, stream_key(6, &[i as u64]))
                    .unwrap()
                    .integrate_box(&window)
                    .unwrap()
            })
            .collect();
        let d = stats::ks_two_sample(&a, &b);
        assert!(d < stats::ks_two_sample_threshold(n, n, 0.01));
    }
}
