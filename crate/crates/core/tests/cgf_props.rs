//! Inequality suites for the CGF layer: the two-sided Hoelder sandwich on a
//! dense parameter grid, the quadratic bound for mean-zero variables with a
//! certified exponential moment, and Monte-Carlo/analytic agreement.

use proptest::prelude::*;
use splitfield::cgf::{
    analytic_cgf, holder_sandwich_check, lambda_grid_symmetric, mc_cgf, subexp_quadratic_check,
    DiscreteVar, SubexpPremise,
};
use splitfield::fields::{CellLaw, FieldModel};
use splitfield::measure::{Rect, Scaling, TestFunction};

fn indicator(lo: f64, hi: f64) -> TestFunction {
    TestFunction::indicator(Rect::interval(lo, hi).unwrap()).unwrap()
}

/// Hoelder sandwich over 10 x 10 x 10 (lambda, p, r) combinations on the
/// Poisson half-window family, where the joint CGF is exactly additive.
#[test]
fn holder_sandwich_grid_has_zero_violations() {
    let model = FieldModel::centered_poisson(1, 1.0, 1.0).unwrap();
    let one = Scaling::uniform(1, 1.0).unwrap();
    let lambdas = [-1.0, -0.75, -0.5, -0.25, -0.1, 0.1, 0.25, 0.5, 0.75, 1.0];
    let ps = [1.1, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0, 6.0, 8.0, 16.0];
    let rs = [0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0];
    let mut checked = 0usize;
    for &r in &rs {
        let left = indicator(0.0, r);
        let right = indicator(r, 2.0 * r);
        let both = indicator(0.0, 2.0 * r);
        let cx = |l: f64| analytic_cgf(&model, &left, &one, l).unwrap();
        let cy = |l: f64| analytic_cgf(&model, &right, &one, l).unwrap();
        let cxy = |l: f64| analytic_cgf(&model, &both, &one, l).unwrap();
        for &p in &ps {
            for &lam in &lambdas {
                let rep = holder_sandwich_check(&cx, &cy, &cxy, p, &[lam], 1e-12).unwrap();
                assert!(
                    rep.ok,
                    "violation at r={r} p={p} lambda={lam}: {rep:?}"
                );
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 1000);
}

/// 100 mean-zero families saturating or satisfying E exp|Z| <= 2; the
/// quadratic bound on [-1, 1] must hold for every one of them.
#[test]
fn quadratic_bound_holds_for_100_families() {
    let grid = lambda_grid_symmetric();
    let mut families: Vec<DiscreteVar> = Vec::new();
    for k in 1..=34 {
        families.push(DiscreteVar::sign(std::f64::consts::LN_2 * k as f64 / 34.0).unwrap());
    }
    for i in 0..33 {
        let p = 0.03 + 0.94 * i as f64 / 32.0;
        families.push(DiscreteVar::two_point_saturated(p, 1.0).unwrap());
    }
    for i in 0..33 {
        // Symmetric three-point family {-b, 0, b} with the weight on the
        // extremes chosen just inside the moment budget.
        let b = 0.2 + 2.8 * i as f64 / 32.0;
        let q = (1.0 / (b.exp() - 1.0)).min(0.98) * 0.999;
        families.push(
            DiscreteVar::new(vec![(-b, q / 2.0), (0.0, 1.0 - q), (b, q / 2.0)]).unwrap(),
        );
    }
    assert_eq!(families.len(), 100);
    for (i, z) in families.iter().enumerate() {
        assert!(z.abs_exp_moment() <= 2.0 + 1e-12, "family {i} breaks premise");
        let rep = subexp_quadratic_check(z, SubexpPremise::AbsExpTwo, &grid).unwrap();
        assert!(rep.ok, "family {i}: max slack {}", rep.max_slack);
    }
}

/// The quarter-bound variant: E exp(+-W) <= 5/4 families also satisfy the
/// quadratic bound on [-1, 1].
#[test]
fn quarter_premise_families_hold() {
    let grid = lambda_grid_symmetric();
    for k in 1..=25 {
        let a = std::f64::consts::LN_2 * k as f64 / 25.0;
        // cosh(ln 2) = 5/4 exactly, so every a <= ln 2 is inside the budget.
        let w = DiscreteVar::sign(a).unwrap();
        assert!(w.exp_moment(1.0) <= 1.25 + 1e-12);
        let rep = subexp_quadratic_check(&w, SubexpPremise::QuarterBound, &grid).unwrap();
        assert!(rep.ok, "a = {a}: slack {}", rep.max_slack);
    }
    // Asymmetric two-point variables under the same budget.
    for i in 0..25 {
        let p: f64 = 0.1 + 0.8 * i as f64 / 24.0;
        let x = (1.0 - p) / p;
        // Scale so the worse of E e^W, E e^-W equals 5/4.
        let g = |t: f64| {
            let up = p * (t * x).exp() + (1.0 - p) * (-t).exp();
            let dn = p * (-t * x).exp() + (1.0 - p) * t.exp();
            up.max(dn) - 1.25
        };
        let mut lo = 0.0f64;
        let mut hi = 0.5f64;
        while g(hi) < 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = lo;
        let w = DiscreteVar::new(vec![(t * x, p), (-t, 1.0 - p)]).unwrap();
        let rep = subexp_quadratic_check(&w, SubexpPremise::QuarterBound, &grid).unwrap();
        assert!(rep.ok, "p = {p}: slack {}", rep.max_slack);
    }
}

/// Bootstrap intervals from a moderate-size run should bracket the exact
/// CGF for most (model, lambda) cells.
#[test]
fn mc_intervals_cover_analytic_values() {
    let models = [
        FieldModel::centered_poisson(1, 1.0, 1.0).unwrap(),
        FieldModel::centered_poisson(1, 2.0, 0.5).unwrap(),
        FieldModel::block_iid(1, CellLaw::Rademacher { scale: 1.0 }).unwrap(),
        FieldModel::block_iid(1, CellLaw::Uniform { bound: 1.5 }).unwrap(),
    ];
    let lambdas = [-0.5, -0.3, -0.2, -0.1, -0.05, 0.05, 0.1, 0.2, 0.3, 0.5];
    let phi = indicator(0.0, 1.0);
    let scale = Scaling::uniform(1, 4.0).unwrap();
    let mut covered = 0usize;
    let mut total = 0usize;
    for (mi, m) in models.iter().enumerate() {
        let ests = mc_cgf(m, &phi, &scale, &lambdas, 8000, 1300 + mi as u64).unwrap();
        for e in &ests {
            let truth = analytic_cgf(m, &phi, &scale, e.lambda).unwrap();
            total += 1;
            if e.ci_low <= truth && truth <= e.ci_high {
                covered += 1;
            }
        }
    }
    assert_eq!(total, 40);
    assert!(covered * 10 >= total * 9, "coverage {covered}/{total}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    /// Analytic curves are convex and vanish at zero for arbitrary model
    /// parameters and window sizes.
    #[test]
    fn analytic_cgf_convex_and_zero_at_zero(
        which in 0usize..4,
        intensity in 0.25f64..4.0,
        mass in 0.25f64..2.0,
        r in 1.0f64..12.0,
    ) {
        let model = match which {
            0 => FieldModel::centered_poisson(1, intensity, mass).unwrap(),
            1 => FieldModel::block_iid(1, CellLaw::Rademacher { scale: mass }).unwrap(),
            2 => FieldModel::block_iid(1, CellLaw::Uniform { bound: mass }).unwrap(),
            _ => {
                let kernel = TestFunction::indicator(Rect::interval(0.0, 1.0).unwrap()).unwrap();
                FieldModel::shot_noise(1, intensity, mass, kernel).unwrap()
            }
        };
        let phi = indicator(0.0, 1.0);
        let scale = Scaling::uniform(1, r).unwrap();
        prop_assert_eq!(analytic_cgf(&model, &phi, &scale, 0.0).unwrap(), 0.0);
        let grid: Vec<f64> = (-12..=12).map(|k| k as f64 / 12.0).collect();
        let vals: Vec<f64> = grid
            .iter()
            .map(|&l| analytic_cgf(&model, &phi, &scale, l).unwrap())
            .collect();
        for w in vals.windows(3) {
            prop_assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-10);
        }
        for v in &vals {
            prop_assert!(*v >= -1e-12);
        }
    }

    /// The sandwich holds for independent discrete pairs at random
    /// parameters, not only on the curated grid.
    #[test]
    fn holder_sandwich_random_discrete_pairs(
        a in 0.05f64..1.5,
        w in 0.1f64..0.9,
        p in 1.05f64..12.0,
        lam in -1.2f64..1.2,
    ) {
        let x = DiscreteVar::sign(a).unwrap();
        let y = DiscreteVar::new(vec![(1.0 - w, w), (-w, 1.0 - w)]).unwrap();
        let cx = |l: f64| x.cgf(l);
        let cy = |l: f64| y.cgf(l);
        let cxy = |l: f64| x.cgf(l) + y.cgf(l);
        let rep = holder_sandwich_check(&cx, &cy, &cxy, p, &[lam], 1e-12).unwrap();
        prop_assert!(rep.ok, "{:?}", rep);
    }
}
