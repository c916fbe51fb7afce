//! Exact calculus for sample measures.
//!
//! A sample measure is one realization of a random field on a bounded window:
//! a finite list of weighted atoms plus a piecewise-constant density given on
//! pairwise disjoint half-open boxes. All operations are closed-form box
//! arithmetic in plain f64 with a fixed summation order, so identical inputs
//! give bitwise identical outputs.
//!
//! Boxes are half-open products prod_i [lower_i, upper_i), so splitting a box
//! along a hyperplane partitions it exactly: every point lands in exactly one
//! part and integrals add up without double counting at the seam.

use crate::error::{Error, Result};

/// Axis-aligned half-open box prod_i [lower_i, upper_i).
#[derive(Debug, Clone, PartialEq)]
pub struct Rect {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Rect {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                context: "box bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for i in 0..lower.len() {
            if !lower[i].is_finite() || !upper[i].is_finite() {
                return Err(Error::invalid("box bounds must be finite"));
            }
            if lower[i] > upper[i] {
                return Err(Error::invalid(format!(
                    "box axis {i}: lower {} exceeds upper {}",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(Rect { lower, upper })
    }

    /// 1-d convenience constructor.
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Rect::new(vec![lo], vec![hi])
    }

    /// Unit-coordinate constructor for d-dim boxes given as (lo, hi) pairs.
    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self> {
        Rect::new(
            bounds.iter().map(|b| b.0).collect(),
            bounds.iter().map(|b| b.1).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .product()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.iter().zip(&self.upper).any(|(l, u)| l >= u)
    }

    /// Membership under the half-open convention.
    pub fn contains_point(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| *x >= *l && *x < *u)
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.is_empty()
            || (self.dim() == other.dim()
                && (0..self.dim())
                    .all(|i| other.lower[i] >= self.lower[i] && other.upper[i] <= self.upper[i]))
    }

    /// Intersection, or None when the overlap has no interior.
    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        debug_assert_eq!(self.dim(), other.dim());
        let mut lower = Vec::with_capacity(self.dim());
        let mut upper = Vec::with_capacity(self.dim());
        for i in 0..self.dim() {
            let l = self.lower[i].max(other.lower[i]);
            let u = self.upper[i].min(other.upper[i]);
            if l >= u {
                return None;
            }
            lower.push(l);
            upper.push(u);
        }
        Some(Rect { lower, upper })
    }

    /// Length of the overlap of the axis-i shadows of `self` and `other`.
    pub fn overlap_len(&self, other: &Rect, axis: usize) -> f64 {
        (self.upper[axis].min(other.upper[axis]) - self.lower[axis].max(other.lower[axis])).max(0.0)
    }

    /// Per-axis scaling by strictly positive factors.
    pub fn scaled(&self, scale: &Scaling) -> Rect {
        Rect {
            lower: self
                .lower
                .iter()
                .zip(&scale.factors)
                .map(|(l, f)| l * f)
                .collect(),
            upper: self
                .upper
                .iter()
                .zip(&scale.factors)
                .map(|(u, f)| u * f)
                .collect(),
        }
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &Rect) -> Rect {
        Rect {
            lower: self
                .lower
                .iter()
                .zip(&other.lower)
                .map(|(a, b)| a.min(*b))
                .collect(),
            upper: self
                .upper
                .iter()
                .zip(&other.upper)
                .map(|(a, b)| a.max(*b))
                .collect(),
        }
    }
}

/// Guillotine decomposition of `outer \ inner` (inner must be contained in
/// outer) into at most 2*dim disjoint boxes.
fn rect_subtract(outer: &Rect, inner: &Rect) -> Vec<Rect> {
    debug_assert!(outer.contains_rect(inner));
    let mut parts = Vec::new();
    let mut core = outer.clone();
    for i in 0..outer.dim() {
        if inner.lower[i] > core.lower[i] {
            let mut part = core.clone();
            part.upper[i] = inner.lower[i];
            if !part.is_empty() {
                parts.push(part);
            }
            core.lower[i] = inner.lower[i];
        }
        if inner.upper[i] < core.upper[i] {
            let mut part = core.clone();
            part.lower[i] = inner.upper[i];
            if !part.is_empty() {
                parts.push(part);
            }
            core.upper[i] = inner.upper[i];
        }
    }
    parts
}

/// Point atom with a signed weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub point: Vec<f64>,
    pub weight: f64,
}

/// Constant density on a box.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub rect: Rect,
    pub density: f64,
}

/// Per-axis positive scaling factors. A scalar scale r acts as (r, ..., r).
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub factors: Vec<f64>,
}

impl Scaling {
    pub fn new(factors: Vec<f64>) -> Result<Self> {
        if factors.is_empty() || factors.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(Error::invalid("scale factors must be finite and positive"));
        }
        Ok(Scaling { factors })
    }

    pub fn uniform(dim: usize, r: f64) -> Result<Self> {
        Scaling::new(vec![r; dim])
    }

    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    pub fn volume(&self) -> f64 {
        self.factors.iter().product()
    }
}

/// One realization of a field on a window: atoms plus a piecewise-constant
/// density on pairwise disjoint cells, all contained in the window.
#[derive(Debug, Clone)]
pub struct SampleMeasure {
    dim: usize,
    atoms: Vec<Atom>,
    cells: Vec<GridCell>,
    window: Rect,
}

impl SampleMeasure {
    /// Builds a measure, normalizing atom order (lexicographic by coordinates,
    /// then by weight) and dropping empty cells. Constructors are responsible
    /// for cell disjointness; `cells_disjoint` checks it explicitly.
    pub fn new(atoms: Vec<Atom>, cells: Vec<GridCell>, window: Rect) -> Result<Self> {
        let dim = window.dim();
        if dim == 0 {
            return Err(Error::invalid("window must have dimension >= 1"));
        }
        for a in &atoms {
            if a.point.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "atom point",
                    expected: dim,
                    got: a.point.len(),
                });
            }
            if !a.weight.is_finite() || a.point.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("atom coordinates and weights must be finite"));
            }
            if !window.contains_point(&a.point) {
                return Err(Error::invalid(format!(
                    "atom at {:?} lies outside the window",
                    a.point
                )));
            }
        }
        let mut kept = Vec::with_capacity(cells.len());
        for c in cells {
            if c.rect.dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: "cell box",
                    expected: dim,
                    got: c.rect.dim(),
                });
            }
            if !c.density.is_finite() {
                return Err(Error::invalid("cell density must be finite"));
            }
            if c.rect.is_empty() {
                continue;
            }
            if !window.contains_rect(&c.rect) {
                return Err(Error::invalid("cell box escapes the window"));
            }
            kept.push(c);
        }
        let mut m = SampleMeasure {
            dim,
            atoms,
            cells: kept,
            window,
        };
        m.normalize_atoms();
        Ok(m)
    }

    pub fn zero(window: Rect) -> Result<Self> {
        SampleMeasure::new(Vec::new(), Vec::new(), window)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn window(&self) -> &Rect {
        &self.window
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn cells(&self) -> &[GridCell] {
        &self.cells
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty() && self.cells.is_empty()
    }

    fn normalize_atoms(&mut self) {
        self.atoms.sort_by(|a, b| {
            a.point
                .iter()
                .zip(&b.point)
                .find_map(|(x, y)| {
                    let o = x.partial_cmp(y).unwrap();
                    (o != std::cmp::Ordering::Equal).then_some(o)
                })
                .unwrap_or_else(|| a.weight.partial_cmp(&b.weight).unwrap())
        });
    }

    fn check_dim(&self, b: &Rect, context: &'static str) -> Result<()> {
        if b.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.dim,
                got: b.dim(),
            });
        }
        Ok(())
    }

    /// Measure of a box: sum of atom weights inside plus density-weighted
    /// overlap volumes, in fixed (normalized) order.
    pub fn integrate_box(&self, b: &Rect) -> Result<f64> {
        self.check_dim(b, "integrate_box")?;
        let mut acc = 0.0f64;
        for a in &self.atoms {
            if b.contains_point(&a.point) {
                acc += a.weight;
            }
        }
        for c in &self.cells {
            let mut v = c.density;
            for i in 0..self.dim {
                v *= c.rect.overlap_len(b, i);
            }
            acc += v;
        }
        Ok(acc)
    }

    /// Total-variation measure of a box: as `integrate_box` with absolute
    /// atom weights and densities.
    pub fn variation_box(&self, b: &Rect) -> Result<f64> {
        self.check_dim(b, "variation_box")?;
        let mut acc = 0.0f64;
        for a in &self.atoms {
            if b.contains_point(&a.point) {
                acc += a.weight.abs();
            }
        }
        for c in &self.cells {
            let mut v = c.density.abs();
            for i in 0..self.dim {
                v *= c.rect.overlap_len(b, i);
            }
            acc += v;
        }
        Ok(acc)
    }

    /// Integral of t -> phi(t / scale) against the measure, evaluated as the
    /// exact piece sum  sum_k value_k * m(scale * box_k). The scaled support
    /// of phi must sit inside the window; truncation is never silent.
    pub fn integrate_scaled(&self, phi: &TestFunction, scale: &Scaling) -> Result<f64> {
        if phi.dim() != self.dim || scale.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "integrate_scaled",
                expected: self.dim,
                got: if phi.dim() != self.dim {
                    phi.dim()
                } else {
                    scale.dim()
                },
            });
        }
        let scaled_support = phi.support().scaled(scale);
        if !self.window.contains_rect(&scaled_support) {
            return Err(Error::SupportEscapesWindow(format!(
                "scaled support {:?}..{:?} not contained in window {:?}..{:?}",
                scaled_support.lower, scaled_support.upper, self.window.lower, self.window.upper
            )));
        }
        let mut acc = 0.0f64;
        for (rect, value) in phi.pieces() {
            acc += value * self.integrate_box(&rect.scaled(scale))?;
        }
        Ok(acc)
    }

    /// Pointwise product with a step function: atom weights are scaled by
    /// phi at the atom position (zero outside all pieces), cells are clipped
    /// to the pieces with densities scaled by the piece value. Exact-zero
    /// results are dropped.
    pub fn multiply_by_function(&self, phi: &TestFunction) -> Result<SampleMeasure> {
        if phi.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "multiply_by_function",
                expected: self.dim,
                got: phi.dim(),
            });
        }
        let atoms = self
            .atoms
            .iter()
            .filter_map(|a| {
                let w = a.weight * phi.eval(&a.point);
                (w != 0.0).then(|| Atom {
                    point: a.point.clone(),
                    weight: w,
                })
            })
            .collect();
        let mut cells = Vec::new();
        for c in &self.cells {
            for (rect, value) in phi.pieces() {
                if let Some(inter) = c.rect.intersection(rect) {
                    let density = c.density * value;
                    if density != 0.0 {
                        cells.push(GridCell {
                            rect: inter,
                            density,
                        });
                    }
                }
            }
        }
        SampleMeasure::new(atoms, cells, self.window.clone())
    }

    /// Pushforward under the isometry beta(t)_i = t[perm[i]] + shift[i]:
    /// atom points and boxes move forward by beta, so integrating the result
    /// over a box B equals integrating the original over the preimage of B.
    pub fn apply_isometry(&self, perm: &[usize], shift: &[f64]) -> Result<SampleMeasure> {
        if perm.len() != self.dim || shift.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "apply_isometry",
                expected: self.dim,
                got: if perm.len() != self.dim {
                    perm.len()
                } else {
                    shift.len()
                },
            });
        }
        let mut seen = vec![false; self.dim];
        for &p in perm {
            if p >= self.dim || seen[p] {
                return Err(Error::invalid("perm must be a permutation of 0..dim"));
            }
            seen[p] = true;
        }
        if shift.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("shift must be finite"));
        }
        let map_point =
            |p: &[f64]| -> Vec<f64> { (0..self.dim).map(|i| p[perm[i]] + shift[i]).collect() };
        let map_rect = |r: &Rect| -> Rect {
            Rect {
                lower: map_point(&r.lower),
                upper: map_point(&r.upper),
            }
        };
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                point: map_point(&a.point),
                weight: a.weight,
            })
            .collect();
        let cells = self
            .cells
            .iter()
            .map(|c| GridCell {
                rect: map_rect(&c.rect),
                density: c.density,
            })
            .collect();
        SampleMeasure::new(atoms, cells, map_rect(&self.window))
    }

    /// Marginal over the dropped axes: atoms restricted to the slice and
    /// projected; cells projected with density scaled by the overlap volume
    /// of the dropped-axis cross section with the slice. Projections may
    /// overlap, so they are re-overlaid into disjoint cells.
    pub fn marginalize(&self, keep: &[usize], slice: &Rect) -> Result<SampleMeasure> {
        if keep.is_empty() {
            return Err(Error::invalid("kept axis set must be nonempty"));
        }
        let mut sorted = keep.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != keep.len() || *sorted.last().unwrap() >= self.dim {
            return Err(Error::invalid("kept axes must be distinct and in 0..dim"));
        }
        let dropped: Vec<usize> = (0..self.dim).filter(|i| !sorted.contains(i)).collect();
        if slice.dim() != dropped.len() {
            return Err(Error::DimensionMismatch {
                context: "marginalize slice",
                expected: dropped.len(),
                got: slice.dim(),
            });
        }
        let project = |p: &[f64]| -> Vec<f64> { sorted.iter().map(|&i| p[i]).collect() };
        let atoms = self
            .atoms
            .iter()
            .filter(|a| {
                let dp: Vec<f64> = dropped.iter().map(|&i| a.point[i]).collect();
                slice.contains_point(&dp)
            })
            .map(|a| Atom {
                point: project(&a.point),
                weight: a.weight,
            })
            .collect();
        let mut flat = Vec::new();
        for c in &self.cells {
            let mut factor = 1.0f64;
            for (j, &i) in dropped.iter().enumerate() {
                factor *= (c.rect.upper[i].min(slice.upper[j])
                    - c.rect.lower[i].max(slice.lower[j]))
                .max(0.0);
            }
            let density = c.density * factor;
            if density != 0.0 {
                flat.push((
                    Rect {
                        lower: project(&c.rect.lower),
                        upper: project(&c.rect.upper),
                    },
                    density,
                ));
            }
        }
        let window = Rect {
            lower: project(&self.window.lower),
            upper: project(&self.window.upper),
        };
        SampleMeasure::new(atoms, overlay_cells(flat), window)
    }

    /// Linear combination ca * a + cb * b. Atoms at bitwise-equal coordinates
    /// merge (weights add, exact zeros are dropped); cells pass through an
    /// exact-equal-box merge and then a disjoint overlay, so opposite copies
    /// of shared material cancel structurally. Windows merge by bounding box.
    pub fn combine(a: &SampleMeasure, b: &SampleMeasure, ca: f64, cb: f64) -> Result<SampleMeasure> {
        if a.dim != b.dim {
            return Err(Error::DimensionMismatch {
                context: "combine",
                expected: a.dim,
                got: b.dim,
            });
        }
        if !ca.is_finite() || !cb.is_finite() {
            return Err(Error::invalid("combination coefficients must be finite"));
        }
        let mut atoms: Vec<Atom> = Vec::with_capacity(a.atoms.len() + b.atoms.len());
        if ca != 0.0 {
            atoms.extend(a.atoms.iter().map(|t| Atom {
                point: t.point.clone(),
                weight: ca * t.weight,
            }));
        }
        if cb != 0.0 {
            atoms.extend(b.atoms.iter().map(|t| Atom {
                point: t.point.clone(),
                weight: cb * t.weight,
            }));
        }
        atoms.sort_by(|x, y| {
            x.point
                .iter()
                .zip(&y.point)
                .find_map(|(u, v)| {
                    let o = u.partial_cmp(v).unwrap();
                    (o != std::cmp::Ordering::Equal).then_some(o)
                })
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for t in atoms {
            match merged.last_mut() {
                Some(last) if last.point == t.point => last.weight += t.weight,
                _ => merged.push(t),
            }
        }
        merged.retain(|t| t.weight != 0.0);

        let mut flat: Vec<(Rect, f64)> = Vec::with_capacity(a.cells.len() + b.cells.len());
        if ca != 0.0 {
            flat.extend(a.cells.iter().map(|c| (c.rect.clone(), ca * c.density)));
        }
        if cb != 0.0 {
            flat.extend(b.cells.iter().map(|c| (c.rect.clone(), cb * c.density)));
        }
        // Exact-equal boxes merge first: coupled constructions share most of
        // their material bit for bit, and this keeps the overlay small.
        flat.sort_by(|(r1, _), (r2, _)| {
            r1.lower
                .iter()
                .chain(&r1.upper)
                .zip(r2.lower.iter().chain(&r2.upper))
                .find_map(|(u, v)| {
                    let o = u.partial_cmp(v).unwrap();
                    (o != std::cmp::Ordering::Equal).then_some(o)
                })
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut pre: Vec<(Rect, f64)> = Vec::with_capacity(flat.len());
        for (rect, density) in flat {
            match pre.last_mut() {
                Some((last, d)) if *last == rect => *d += density,
                _ => pre.push((rect, density)),
            }
        }
        pre.retain(|(_, d)| *d != 0.0);

        SampleMeasure::new(merged, overlay_cells(pre), a.window.hull(&b.window))
    }

    /// Pairwise-disjointness check for the cell list (interior overlap).
    /// Quadratic; intended for tests and validation, not hot paths.
    pub fn cells_disjoint(&self) -> bool {
        for i in 0..self.cells.len() {
            for j in (i + 1)..self.cells.len() {
                if self.cells[i].rect.intersection(&self.cells[j].rect).is_some() {
                    return false;
                }
            }
        }
        true
    }

    /// Canonical JSON debug dump:
    /// {"dim":d,"atoms":[[coords...,weight],...],"cells":[[lower...,upper...,density],...]}.
    pub fn debug_dump_json(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        write!(s, "{{\"dim\":{},\"atoms\":[", self.dim).unwrap();
        for (k, a) in self.atoms.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            s.push('[');
            for x in &a.point {
                s.push_str(&fmt_g12(*x));
                s.push(',');
            }
            s.push_str(&fmt_g12(a.weight));
            s.push(']');
        }
        s.push_str("],\"cells\":[");
        for (k, c) in self.cells.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            s.push('[');
            for x in c.rect.lower.iter().chain(&c.rect.upper) {
                s.push_str(&fmt_g12(*x));
                s.push(',');
            }
            s.push_str(&fmt_g12(c.density));
            s.push(']');
        }
        s.push_str("]}");
        s
    }
}

/// Overlays possibly overlapping constant-density boxes into a pairwise
/// disjoint cell list with summed densities; exact zeros are dropped.
pub fn overlay_cells(pieces: Vec<(Rect, f64)>) -> Vec<GridCell> {
    let mut acc: Vec<GridCell> = Vec::with_capacity(pieces.len());
    for (rect, density) in pieces {
        if density != 0.0 && !rect.is_empty() {
            overlay_insert(&mut acc, rect, density);
        }
    }
    acc.retain(|c| c.density != 0.0);
    acc
}

fn overlay_insert(acc: &mut Vec<GridCell>, rect: Rect, density: f64) {
    let mut stack = vec![rect];
    'pieces: while let Some(piece) = stack.pop() {
        for i in 0..acc.len() {
            if let Some(inter) = acc[i].rect.intersection(&piece) {
                let host = acc.swap_remove(i);
                for part in rect_subtract(&host.rect, &inter) {
                    acc.push(GridCell {
                        rect: part,
                        density: host.density,
                    });
                }
                for part in rect_subtract(&piece, &inter) {
                    stack.push(part);
                }
                acc.push(GridCell {
                    rect: inter,
                    density: host.density + density,
                });
                continue 'pieces;
            }
        }
        acc.push(GridCell {
            rect: piece,
            density,
        });
    }
}

/// Compactly supported step function: disjoint boxes with constant values,
/// zero elsewhere, plus a certified sup-norm error against the continuous
/// target it may approximate (zero for exact step specifications).
#[derive(Debug, Clone)]
pub struct TestFunction {
    pieces: Vec<(Rect, f64)>,
    support: Rect,
    sup_error: f64,
    l2_norm_sq: f64,
}

impl TestFunction {
    pub fn new(pieces: Vec<(Rect, f64)>, sup_error: f64) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::invalid("test function needs at least one piece"));
        }
        if !(sup_error >= 0.0) {
            return Err(Error::invalid("sup_error must be >= 0"));
        }
        let dim = pieces[0].0.dim();
        for (r, v) in &pieces {
            if r.dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: "test function piece",
                    expected: dim,
                    got: r.dim(),
                });
            }
            if !v.is_finite() {
                return Err(Error::invalid("piece values must be finite"));
            }
            if r.is_empty() {
                return Err(Error::invalid("piece boxes must have positive volume"));
            }
        }
        for i in 0..pieces.len() {
            for j in (i + 1)..pieces.len() {
                if pieces[i].0.intersection(&pieces[j].0).is_some() {
                    return Err(Error::invalid(format!(
                        "piece boxes {i} and {j} overlap"
                    )));
                }
            }
        }
        let support = pieces
            .iter()
            .skip(1)
            .fold(pieces[0].0.clone(), |h, (r, _)| h.hull(r));
        let l2_norm_sq = pieces.iter().map(|(r, v)| v * v * r.volume()).sum();
        Ok(TestFunction {
            pieces,
            support,
            sup_error,
            l2_norm_sq,
        })
    }

    /// Indicator of a box.
    pub fn indicator(rect: Rect) -> Result<Self> {
        TestFunction::new(vec![(rect, 1.0)], 0.0)
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    pub fn pieces(&self) -> &[(Rect, f64)] {
        &self.pieces
    }

    pub fn support(&self) -> &Rect {
        &self.support
    }

    pub fn sup_error(&self) -> f64 {
        self.sup_error
    }

    /// Squared L2 norm, computed exactly from the pieces at construction.
    pub fn l2_norm_sq(&self) -> f64 {
        self.l2_norm_sq
    }

    pub fn sup_abs(&self) -> f64 {
        self.pieces.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max)
    }

    /// Pointwise evaluation (zero outside all pieces).
    pub fn eval(&self, p: &[f64]) -> f64 {
        for (r, v) in &self.pieces {
            if r.contains_point(p) {
                return *v;
            }
        }
        0.0
    }
}

/// Formats a float with 12 significant digits, choosing fixed or scientific
/// notation like C's %.12g and trimming trailing zeros. Used everywhere a
/// float is written to a report, so identical values always print the same.
pub fn fmt_g12(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    let sci = format!("{:.11e}", x);
    let (mant, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-4..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, x);
        let trimmed = fixed.trim_end_matches('0').trim_end_matches('.');
        trimmed.to_string()
    } else {
        let mant = mant.trim_end_matches('0').trim_end_matches('.');
        format!("{}e{}{:02}", mant, if exp < 0 { "-" } else { "+" }, exp.abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_interval() -> Rect {
        Rect::interval(0.0, 1.0).unwrap()
    }

    #[test]
    fn empty_measure_integrates_to_zero() {
        let m = SampleMeasure::zero(unit_interval()).unwrap();
        assert_eq!(m.integrate_box(&unit_interval()).unwrap(), 0.0);
        assert_eq!(m.variation_box(&unit_interval()).unwrap(), 0.0);
    }

    #[test]
    fn atom_and_cell_example() {
        // Atom weight 2 at 0.5 plus density -1 on [0,1): integral over [0,1) is 1.
        let m = SampleMeasure::new(
            vec![Atom {
                point: vec![0.5],
                weight: 2.0,
            }],
            vec![GridCell {
                rect: unit_interval(),
                density: -1.0,
            }],
            unit_interval(),
        )
        .unwrap();
        assert_eq!(m.integrate_box(&unit_interval()).unwrap(), 1.0);
        assert_eq!(m.variation_box(&unit_interval()).unwrap(), 3.0);
        // Half-open convention: atom at 0.5 is excluded from [0, 0.5).
        let half = Rect::interval(0.0, 0.5).unwrap();
        assert_eq!(m.integrate_box(&half).unwrap(), -0.5);
    }

    #[test]
    fn debug_dump_golden() {
        let m = SampleMeasure::new(
            vec![Atom {
                point: vec![0.5],
                weight: 2.0,
            }],
            vec![GridCell {
                rect: unit_interval(),
                density: -1.0,
            }],
            unit_interval(),
        )
        .unwrap();
        assert_eq!(
            m.debug_dump_json(),
            "{\"dim\":1,\"atoms\":[[0.5,2]],\"cells\":[[0,1,-1]]}"
        );
    }

    #[test]
    fn fmt_g12_cases() {
        assert_eq!(fmt_g12(0.0), "0");
        assert_eq!(fmt_g12(-0.0), "0");
        assert_eq!(fmt_g12(1.0), "1");
        assert_eq!(fmt_g12(-1.5), "-1.5");
        assert_eq!(fmt_g12(0.00517091808), "0.00517091808");
        assert_eq!(fmt_g12(1e15), "1e+15");
        assert_eq!(fmt_g12(1.25e-9), "1.25e-09");
        assert_eq!(fmt_g12(f64::INFINITY), "inf");
        assert_eq!(fmt_g12(123456789.0), "123456789");
        // 12 significant digits, not more.
        assert_eq!(fmt_g12(1.0 / 3.0), "0.333333333333");
    }

    #[test]
    fn integrate_scaled_indicator_reduces_to_box() {
        let window = Rect::interval(0.0, 8.0).unwrap();
        let m = SampleMeasure::new(
            vec![
                Atom {
                    point: vec![1.0],
                    weight: 1.0,
                },
                Atom {
                    point: vec![5.0],
                    weight: 3.0,
                },
            ],
            vec![GridCell {
                rect: Rect::interval(0.0, 8.0).unwrap(),
                density: 0.25,
            }],
            window,
        )
        .unwrap();
        let phi = TestFunction::indicator(unit_interval()).unwrap();
        let r = Scaling::uniform(1, 4.0).unwrap();
        let direct = m.integrate_box(&Rect::interval(0.0, 4.0).unwrap()).unwrap();
        assert_eq!(m.integrate_scaled(&phi, &r).unwrap(), direct);
    }

    #[test]
    fn integrate_scaled_rejects_support_escape() {
        let m = SampleMeasure::zero(unit_interval()).unwrap();
        let phi = TestFunction::indicator(unit_interval()).unwrap();
        let r = Scaling::uniform(1, 2.0).unwrap();
        assert!(matches!(
            m.integrate_scaled(&phi, &r),
            Err(Error::SupportEscapesWindow(_))
        ));
    }

    #[test]
    fn multiply_identity_and_restriction() {
        let window = Rect::interval(-2.0, 2.0).unwrap();
        let m = SampleMeasure::new(
            vec![Atom {
                point: vec![-1.0],
                weight: 2.0,
            }],
            vec![GridCell {
                rect: Rect::interval(-2.0, 2.0).unwrap(),
                density: 1.5,
            }],
            window.clone(),
        )
        .unwrap();
        let one = TestFunction::indicator(window.clone()).unwrap();
        let id = m.multiply_by_function(&one).unwrap();
        assert_eq!(id.integrate_box(&window).unwrap(), m.integrate_box(&window).unwrap());
        // Restriction to [0, 2) kills the atom and clips the cell.
        let right = TestFunction::indicator(Rect::interval(0.0, 2.0).unwrap()).unwrap();
        let r = m.multiply_by_function(&right).unwrap();
        assert_eq!(r.atoms().len(), 0);
        assert_eq!(r.integrate_box(&window).unwrap(), 3.0);
    }

    #[test]
    fn isometry_swap_and_roundtrip() {
        let window = Rect::from_bounds(&[(0.0, 4.0), (0.0, 4.0)]).unwrap();
        let m = SampleMeasure::new(
            vec![Atom {
                point: vec![1.0, 2.0],
                weight: 1.0,
            }],
            vec![GridCell {
                rect: Rect::from_bounds(&[(0.0, 1.0), (2.0, 3.0)]).unwrap(),
                density: 2.0,
            }],
            window,
        )
        .unwrap();
        let swapped = m.apply_isometry(&[1, 0], &[0.0, 0.0]).unwrap();
        assert_eq!(swapped.atoms()[0].point, vec![2.0, 1.0]);
        assert_eq!(swapped.cells()[0].rect, Rect::from_bounds(&[(2.0, 3.0), (0.0, 1.0)]).unwrap());
        let back = swapped.apply_isometry(&[1, 0], &[0.0, 0.0]).unwrap();
        assert_eq!(back.atoms()[0].point, m.atoms()[0].point);

        // Shift roundtrip: inverse permutation with negated permuted shift.
        let moved = m.apply_isometry(&[0, 1], &[2.5, -1.0]).unwrap();
        let back2 = moved.apply_isometry(&[0, 1], &[-2.5, 1.0]).unwrap();
        assert_eq!(back2.atoms()[0].point, m.atoms()[0].point);
    }

    #[test]
    fn isometry_preimage_identity() {
        let window = Rect::from_bounds(&[(0.0, 4.0), (0.0, 4.0)]).unwrap();
        let m = SampleMeasure::new(
            vec![Atom {
                point: vec![1.5, 2.5],
                weight: 1.0,
            }],
            vec![GridCell {
                rect: Rect::from_bounds(&[(1.0, 3.0), (0.0, 2.0)]).unwrap(),
                density: 0.5,
            }],
            window,
        )
        .unwrap();
        let perm = [1usize, 0];
        let shift = [0.25, -0.5];
        let pushed = m.apply_isometry(&perm, &shift).unwrap();
        let b = Rect::from_bounds(&[(1.0, 3.5), (0.5, 2.0)]).unwrap();
        // Preimage of b under beta: old axis perm[i] gets [b_i - shift_i).
        let mut lo = vec![0.0; 2];
        let mut hi = vec![0.0; 2];
        for i in 0..2 {
            lo[perm[i]] = b.lower[i] - shift[i];
            hi[perm[i]] = b.upper[i] - shift[i];
        }
        let pre = Rect::new(lo, hi).unwrap();
        let a = pushed.integrate_box(&b).unwrap();
        let e = m.integrate_box(&pre).unwrap();
        assert!((a - e).abs() < 1e-12);
    }

    #[test]
    fn marginalize_cell_example() {
        // Density 1 on [0,1)x[0,2), marginalized over axis 1 with slice [0,1):
        // 1-d density 1 on [0,1).
        let window = Rect::from_bounds(&[(0.0, 1.0), (0.0, 2.0)]).unwrap();
        let m = SampleMeasure::new(
            Vec::new(),
            vec![GridCell {
                rect: window.clone(),
                density: 1.0,
            }],
            window,
        )
        .unwrap();
        let mg = m
            .marginalize(&[0], &Rect::interval(0.0, 1.0).unwrap())
            .unwrap();
        assert_eq!(mg.dim(), 1);
        assert_eq!(mg.integrate_box(&unit_interval()).unwrap(), 1.0);
        assert!(m.marginalize(&[], &Rect::interval(0.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn combine_cancels_exactly() {
        let window = Rect::interval(0.0, 2.0).unwrap();
        let m = SampleMeasure::new(
            vec![Atom {
                point: vec![0.5],
                weight: 1.25,
            }],
            vec![GridCell {
                rect: Rect::interval(0.0, 2.0).unwrap(),
                density: -0.75,
            }],
            window.clone(),
        )
        .unwrap();
        let z = SampleMeasure::combine(&m, &m, 1.0, -1.0).unwrap();
        assert!(z.is_zero());
        let d = SampleMeasure::combine(&m, &m, 1.0, 1.0).unwrap();
        assert_eq!(
            d.integrate_box(&window).unwrap(),
            2.0 * m.integrate_box(&window).unwrap()
        );
        assert!(d.cells_disjoint());
    }

    #[test]
    fn combine_overlays_partial_overlap() {
        let w = Rect::interval(0.0, 3.0).unwrap();
        let a = SampleMeasure::new(
            Vec::new(),
            vec![GridCell {
                rect: Rect::interval(0.0, 2.0).unwrap(),
                density: 1.0,
            }],
            w.clone(),
        )
        .unwrap();
        let b = SampleMeasure::new(
            Vec::new(),
            vec![GridCell {
                rect: Rect::interval(1.0, 3.0).unwrap(),
                density: -1.0,
            }],
            w.clone(),
        )
        .unwrap();
        let c = SampleMeasure::combine(&a, &b, 1.0, 1.0).unwrap();
        assert!(c.cells_disjoint());
        // Overlap [1,2) cancels exactly; variation sees only the flanks.
        assert_eq!(c.variation_box(&w).unwrap(), 2.0);
        assert_eq!(c.integrate_box(&w).unwrap(), 0.0);
        assert_eq!(c.integrate_box(&Rect::interval(0.0, 1.0).unwrap()).unwrap(), 1.0);
        assert_eq!(c.integrate_box(&Rect::interval(2.0, 3.0).unwrap()).unwrap(), -1.0);
    }

    #[test]
    fn overlay_2d_cross() {
        let pieces = vec![
            (Rect::from_bounds(&[(0.0, 3.0), (1.0, 2.0)]).unwrap(), 1.0),
            (Rect::from_bounds(&[(1.0, 2.0), (0.0, 3.0)]).unwrap(), 1.0),
        ];
        let cells = overlay_cells(pieces);
        let total: f64 = cells.iter().map(|c| c.density * c.rect.volume()).sum();
        assert!((total - 6.0).abs() < 1e-12);
        // Center square counted twice.
        let m = SampleMeasure::new(
            Vec::new(),
            cells,
            Rect::from_bounds(&[(0.0, 3.0), (0.0, 3.0)]).unwrap(),
        )
        .unwrap();
        assert!(m.cells_disjoint());
        let center = Rect::from_bounds(&[(1.0, 2.0), (1.0, 2.0)]).unwrap();
        assert_eq!(m.integrate_box(&center).unwrap(), 2.0);
    }

    #[test]
    fn test_function_l2_and_disjointness() {
        let phi = TestFunction::new(
            vec![
                (Rect::interval(0.0, 1.0).unwrap(), 2.0),
                (Rect::interval(1.0, 3.0).unwrap(), -0.5),
            ],
            0.0,
        )
        .unwrap();
        assert!((phi.l2_norm_sq() - (4.0 + 0.25 * 2.0)).abs() < 1e-15);
        assert_eq!(phi.eval(&[0.5]), 2.0);
        assert_eq!(phi.eval(&[2.0]), -0.5);
        assert_eq!(phi.eval(&[5.0]), 0.0);
        assert!(TestFunction::new(
            vec![
                (Rect::interval(0.0, 2.0).unwrap(), 1.0),
                (Rect::interval(1.0, 3.0).unwrap(), 1.0),
            ],
            0.0,
        )
        .is_err());
    }

    #[test]
    fn two_piece_antisymmetric_integral_vanishes() {
        // Uniform density; phi = +1 on [0,1), -1 on [1,2): exact cancellation.
        let window = Rect::interval(0.0, 4.0).unwrap();
        let m = SampleMeasure::new(
            Vec::new(),
            vec![GridCell {
                rect: window.clone(),
                density: 0.7,
            }],
            window,
        )
        .unwrap();
        let phi = TestFunction::new(
            vec![
                (Rect::interval(0.0, 1.0).unwrap(), 1.0),
                (Rect::interval(1.0, 2.0).unwrap(), -1.0),
            ],
            0.0,
        )
        .unwrap();
        let v = m
            .integrate_scaled(&phi, &Scaling::uniform(1, 2.0).unwrap())
            .unwrap();
        assert_eq!(v, 0.0);
    }
}
