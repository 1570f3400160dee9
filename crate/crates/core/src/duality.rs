//! Numerical checks of the primal/dual relations: conjugacy, weak duality and
//! the shape of value functions.
//!
//! ```text
//! u(x) = inf_{y>0} [v(y) + x y]            v(y) = sup_{x>0} [u(x) − x y]
//! u(x) ≤ E^P[max{V₁(y dQ/dP), 0}] + x y
//! V₁(y) = sup_{x≥0} [U(x + 1) − x y]
//! ```

use serde::Serialize;

use crate::conditions::Certificates;
use crate::error::{Error, Result};
use crate::model::UncertaintySpec;
use crate::simulate::{mean_se, terminal_log_densities, Direction, Selector};
use crate::value::{initial_fractions, SurfaceKind, UtilitySpec, ValueSurface};

/// Tabulated values above this are treated as `+∞`.
pub const VALUE_CAP: f64 = 1e9;
/// Shape sweeps allow violations up to this fraction of the value range.
pub const SHAPE_REL_TOL: f64 = 1e-6;
const REFINE_TOL: f64 = 1e-12;

/// Maximize a unimodal `g` on `[lo, hi]`; returns `(argmax, max)`.
pub fn golden_section_max(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - r * (hi - lo);
    let mut d = lo + r * (hi - lo);
    let (mut gc, mut gd) = (g(c), g(d));
    while hi - lo > tol * (1.0 + c.abs() + d.abs()) {
        if gc >= gd {
            hi = d;
            d = c;
            gd = gc;
            c = hi - r * (hi - lo);
            gc = g(c);
        } else {
            lo = c;
            c = d;
            gc = gd;
            d = lo + r * (hi - lo);
            gd = g(d);
        }
    }
    if gc >= gd { (c, gc) } else { (d, gd) }
}

/// `sup_z [g(z)]` over tabulated nodes `(z, g(z))` (sorted by `z`), refined
/// by golden-section search in `log z` around the best node. `eval` gives
/// `g` between nodes.
fn refined_sup(nodes: &[(f64, f64)], eval: impl Fn(f64) -> f64) -> f64 {
    let Some((best, &(_, top))) = nodes
        .iter()
        .enumerate()
        .filter(|(_, p)| p.1.is_finite())
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
    else {
        return f64::NEG_INFINITY;
    };
    let lo = nodes[best.saturating_sub(1)].0.ln();
    let hi = nodes[(best + 1).min(nodes.len() - 1)].0.ln();
    if hi <= lo {
        return top;
    }
    let (_, refined) = golden_section_max(|s| eval(s.exp()), lo, hi, REFINE_TOL);
    top.max(refined)
}

/// `inf_y [v(y) + x y]` over the tabulated `t = 0` curve of a dual surface.
pub fn legendre_inf(v: &ValueSurface, x: f64) -> Result<f64> {
    let nodes: Vec<(f64, f64)> = v
        .initial_points()
        .into_iter()
        .filter(|(_, val)| *val <= VALUE_CAP)
        .map(|(y, val)| (y, -(val + x * y)))
        .collect();
    let eval = |y: f64| v.eval_initial(y).map(|val| -(val + x * y)).unwrap_or(f64::NEG_INFINITY);
    Ok(-refined_sup(&nodes, eval))
}

/// `sup_x [u(x) − x y]` over the tabulated `t = 0` curve of a primal surface.
pub fn legendre_sup(u: &ValueSurface, y: f64) -> Result<f64> {
    let nodes: Vec<(f64, f64)> = u.initial_points().into_iter().map(|(x, val)| (x, val - x * y)).collect();
    let eval = |x: f64| u.eval_initial(x).map(|val| val - x * y).unwrap_or(f64::NEG_INFINITY);
    Ok(refined_sup(&nodes, eval))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjugacyReport {
    pub x_grid: Vec<f64>,
    pub y_grid: Vec<f64>,
    pub u_vals: Vec<f64>,
    pub v_vals: Vec<f64>,
    /// `inf_y [v(y) + x y]` on `x_grid`.
    pub biconj_u: Vec<f64>,
    /// `sup_x [u(x) − x y]` on `y_grid`.
    pub biconj_v: Vec<f64>,
    pub gap_u: f64,
    pub gap_v: f64,
    pub tolerance: f64,
    /// Dual values above [`VALUE_CAP`], treated as `+∞`.
    pub capped_v: usize,
    pub pass: bool,
}

fn check_grid(name: &str, grid: &[f64], domain: Option<(f64, f64)>) -> Result<()> {
    let (lo, hi) = domain.ok_or_else(|| Error::DomainMismatch(format!("{name} surface has no tabulated domain")))?;
    if grid.is_empty() {
        return Err(Error::DomainMismatch(format!("empty {name} grid")));
    }
    if let Some(z) = grid.iter().find(|z| !(**z >= lo * (1.0 - 1e-12) && **z <= hi * (1.0 + 1e-12))) {
        return Err(Error::DomainMismatch(format!("{name} grid point {z} outside the tabulated range [{lo}, {hi}]")));
    }
    Ok(())
}

/// Compare `u` and `v` with each other's Legendre transforms.
pub fn conjugacy_check(
    u: &ValueSurface,
    v: &ValueSurface,
    x_grid: &[f64],
    y_grid: &[f64],
    tolerance: f64,
) -> Result<ConjugacyReport> {
    check_grid("x", x_grid, u.domain)?;
    check_grid("y", y_grid, v.domain)?;
    let u_vals: Vec<f64> = x_grid.iter().map(|&x| u.eval_initial(x)).collect::<Result<_>>()?;
    let v_vals: Vec<f64> = y_grid.iter().map(|&y| v.eval_initial(y)).collect::<Result<_>>()?;
    let biconj_u: Vec<f64> = x_grid.iter().map(|&x| legendre_inf(v, x)).collect::<Result<_>>()?;
    let biconj_v: Vec<f64> = y_grid.iter().map(|&y| legendre_sup(u, y)).collect::<Result<_>>()?;
    let gap = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let capped_v = v_vals.iter().filter(|&&val| val > VALUE_CAP).count();
    let (gap_u, gap_v) = (gap(&u_vals, &biconj_u), gap(&v_vals, &biconj_v));
    Ok(ConjugacyReport {
        pass: gap_u <= tolerance && gap_v <= tolerance,
        x_grid: x_grid.to_vec(),
        y_grid: y_grid.to_vec(),
        u_vals,
        v_vals,
        biconj_u,
        biconj_v,
        gap_u,
        gap_v,
        tolerance,
        capped_v,
    })
}

/// `V₁(y) = sup_{x ≥ 0} [U(x + 1) − x y]` for log and power `p ∈ (0, 1)`.
pub fn eval_shifted_conjugate(utility: &UtilitySpec, y: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::Domain(format!("shifted conjugate needs y > 0, got {y}")));
    }
    match *utility {
        // x* = max(1/y − 1, 0)
        UtilitySpec::Log => Ok(if y >= 1.0 { 0.0 } else { -y.ln() - 1.0 + y }),
        // x* = max(y^{1/(p−1)} − 1, 0)
        UtilitySpec::Power { p } if p > 0.0 && p < 1.0 => Ok(if y >= 1.0 {
            1.0 / p
        } else {
            y.powf(p / (p - 1.0)) * (1.0 / p - 1.0) + y
        }),
        other => Err(Error::Unsupported(format!(
            "shifted conjugate is defined for log and power p in (0, 1), not `{other}`"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakDualityReport {
    pub x: f64,
    pub y: f64,
    /// The primal value supplied by the caller (normally from the DP).
    pub u_x: f64,
    /// Monte Carlo estimate of `E^P[max{V₁(y Z_T), 0}] + x y`.
    pub bound: f64,
    pub se: f64,
    pub slack: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub selector: String,
    pub pass: bool,
}

/// Monte Carlo upper bound on `u(x)` under the model induced by `selector`,
/// with `dQ/dP` the stochastic exponential removing the drift.
#[allow(clippy::too_many_arguments)]
pub fn weak_duality_check(
    spec: &UncertaintySpec,
    utility: &UtilitySpec,
    x: f64,
    y: f64,
    u_x: f64,
    selector: &Selector,
    certs: &Certificates,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    mpr_residual_tol: f64,
) -> Result<WeakDualityReport> {
    match &certs.mpr {
        Some(m) if m.feasible => {}
        _ => {
            return Err(Error::PreconditionNotCertified(
                "weak duality needs a feasible market-price-of-risk certificate".into(),
            ))
        }
    }
    if !(x > 0.0) {
        return Err(Error::Domain(format!("x must be positive, got {x}")));
    }
    eval_shifted_conjugate(utility, y)?;
    let log_z = terminal_log_densities(spec, spec, selector, n_paths, n_steps, seed, Direction::PtoQ, mpr_residual_tol)?;
    let samples: Vec<f64> = log_z
        .iter()
        .map(|l| eval_shifted_conjugate(utility, y * l.exp()).map(|v| v.max(0.0)))
        .collect::<Result<_>>()?;
    let (mean, se) = mean_se(&samples);
    let se = if se.is_nan() { 0.0 } else { se };
    let bound = mean + x * y;
    Ok(WeakDualityReport {
        x,
        y,
        u_x,
        bound,
        se,
        slack: bound - u_x,
        n_paths,
        n_steps,
        selector: selector.label().to_string(),
        pass: u_x <= bound + 4.0 * se,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeViolation {
    pub check: &'static str,
    pub t: f64,
    pub node: usize,
    pub index: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeReport {
    pub kind: SurfaceKind,
    pub checks: Vec<&'static str>,
    pub range: f64,
    pub tolerance: f64,
    pub triples_checked: usize,
    pub worst: f64,
    pub violations: Vec<ShapeViolation>,
    pub pass: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum Sense {
    Increasing,
    Decreasing,
    Concave,
    Convex,
}

impl Sense {
    fn name(self) -> &'static str {
        match self {
            Sense::Increasing => "nondecreasing",
            Sense::Decreasing => "nonincreasing",
            Sense::Concave => "concave",
            Sense::Convex => "convex",
        }
    }

    /// Amount by which the point at `i` violates the property (≤ 0 if
    /// none): against its left neighbour for monotonicity, against the chord
    /// of its two neighbours for curvature.
    fn excess(self, xs: &[f64], ys: &[f64], i: usize) -> Option<f64> {
        match self {
            Sense::Increasing => (i >= 1).then(|| ys[i - 1] - ys[i]),
            Sense::Decreasing => (i >= 1).then(|| ys[i] - ys[i - 1]),
            Sense::Concave | Sense::Convex => {
                if i == 0 || i + 1 >= xs.len() {
                    return None;
                }
                let lam = (xs[i + 1] - xs[i]) / (xs[i + 1] - xs[i - 1]);
                let chord = lam * ys[i - 1] + (1.0 - lam) * ys[i + 1];
                Some(if self == Sense::Concave { chord - ys[i] } else { ys[i] - chord })
            }
        }
    }
}

/// A 1-D section of a surface to sweep.
struct Section {
    t: f64,
    node: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Original axis index of `xs[0]`.
    offset: usize,
}

fn sections(surface: &ValueSurface) -> Vec<Section> {
    let mut out = Vec::new();
    match surface.kind {
        SurfaceKind::PrimalU | SurfaceKind::DualV => {
            let axis = surface.axis.points();
            let (lo, hi) = surface.domain.unwrap_or((0.0, f64::INFINITY));
            let keep: Vec<usize> = (0..axis.len())
                .filter(|&i| axis[i] >= lo * (1.0 - 1e-12) && axis[i] <= hi * (1.0 + 1e-12))
                .collect();
            let m = surface.axis.len();
            for s in &surface.slices {
                for node in 0..s.n_nodes() {
                    out.push(Section {
                        t: s.t,
                        node,
                        xs: keep.iter().map(|&i| axis[i]).collect(),
                        ys: keep.iter().map(|&i| s.values[node * m + i]).collect(),
                        offset: keep.first().copied().unwrap_or(0),
                    });
                }
            }
        }
        SurfaceKind::Superhedge => {
            for s in &surface.slices {
                if s.running_max.is_empty() {
                    out.push(Section {
                        t: s.t,
                        node: 0,
                        xs: s.states.clone(),
                        ys: s.values.clone(),
                        offset: 0,
                    });
                }
            }
        }
    }
    out
}

fn sweep(sec: &Section, sense: Sense, tol: f64, violations: &mut Vec<ShapeViolation>) -> (usize, f64) {
    let usable = |i: usize| sec.ys[i].is_finite() && sec.ys[i] <= VALUE_CAP;
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    for i in 0..sec.xs.len() {
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(sec.xs.len() - 1);
        if !(lo..=hi).all(usable) {
            continue;
        }
        let Some(e) = sense.excess(&sec.xs, &sec.ys, i) else {
            continue;
        };
        count += 1;
        worst = worst.max(e);
        if e > tol {
            violations.push(ShapeViolation {
                check: sense.name(),
                t: sec.t,
                node: sec.node,
                index: sec.offset + i,
                magnitude: e,
            });
        }
    }
    (count, worst)
}

/// Monotonicity and midpoint concavity/convexity sweeps. Primal surfaces must
/// be nondecreasing and concave in wealth, dual surfaces nonincreasing and
/// convex in `y` (inside the tabulated domain). Superhedge surfaces must keep
/// whatever of these shapes in the state the payoff has.
pub fn shape_check(surface: &ValueSurface) -> ShapeReport {
    let secs = sections(surface);
    let finite = secs.iter().flat_map(|s| &s.ys).filter(|v| v.is_finite() && **v <= VALUE_CAP);
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = if hi >= lo { hi - lo } else { 0.0 };
    let tolerance = SHAPE_REL_TOL * range.max(f64::MIN_POSITIVE);
    let senses: Vec<Sense> = match surface.kind {
        SurfaceKind::PrimalU => vec![Sense::Increasing, Sense::Concave],
        SurfaceKind::DualV => vec![Sense::Decreasing, Sense::Convex],
        SurfaceKind::Superhedge => match secs.last() {
            Some(terminal) => [Sense::Increasing, Sense::Decreasing, Sense::Concave, Sense::Convex]
                .into_iter()
                .filter(|&s| sweep(terminal, s, tolerance, &mut Vec::new()).1 <= tolerance)
                .collect(),
            None => Vec::new(),
        },
    };
    let mut violations = Vec::new();
    let mut triples = 0;
    let mut worst = f64::NEG_INFINITY;
    for sec in &secs {
        for &s in &senses {
            let (c, w) = sweep(sec, s, tolerance, &mut violations);
            triples += c;
            worst = worst.max(w);
        }
    }
    ShapeReport {
        kind: surface.kind,
        checks: senses.iter().map(|s| s.name()).collect(),
        range,
        tolerance,
        triples_checked: triples,
        worst: worst.max(0.0),
        pass: violations.is_empty(),
        violations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub scale: f64,
    pub p: f64,
    /// Largest `|π_c(c w) − π(w)|` of the position per unit of wealth.
    pub fraction_deviation: f64,
    /// Largest change of `π` across one wealth-grid cell.
    pub cell_tolerance: f64,
    /// Largest `|u_c(c w) − c^p u(w)|`.
    pub value_deviation: f64,
    pub value_tolerance: f64,
    pub pass: bool,
}

/// Compare a power-utility surface with one computed on the wealth grid scaled
/// by `scale`: values must scale as `c^p` and positions per unit of wealth
/// must not move by more than they vary across one grid cell.
pub fn power_scaling_check(base: &ValueSurface, scaled: &ValueSurface, scale: f64, p: f64) -> Result<ScalingReport> {
    let (fa, fb) = (initial_fractions(base), initial_fractions(scaled));
    if fa.len() != fb.len() || fa.len() < 3 || base.kind != SurfaceKind::PrimalU || scaled.kind != SurfaceKind::PrimalU {
        return Err(Error::DomainMismatch("scaling check needs two primal surfaces on matching grids".into()));
    }
    if fa.iter().zip(&fb).any(|(a, b)| (b.0 / (scale * a.0) - 1.0).abs() > 1e-9) {
        return Err(Error::DomainMismatch(format!("second grid is not the first scaled by {scale}")));
    }
    let interior = 1..fa.len() - 1;
    let fraction_deviation = interior.clone().map(|i| (fa[i].1 - fb[i].1).abs()).fold(0.0, f64::max);
    let cell_tolerance = interior.clone().map(|i| (fa[i + 1].1 - fa[i].1).abs()).fold(0.0, f64::max) + 1e-12;
    let (ua, ub) = (base.initial_curve(), scaled.initial_curve());
    let value_deviation = (0..ua.len()).map(|i| (ub[i] - scale.powf(p) * ua[i]).abs()).fold(0.0, f64::max);
    let range = ub.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - ub.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let value_tolerance = 2.0 * SHAPE_REL_TOL * range;
    Ok(ScalingReport {
        scale,
        p,
        fraction_deviation,
        cell_tolerance,
        value_deviation,
        value_tolerance,
        pass: fraction_deviation <= cell_tolerance && value_deviation <= value_tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn log_pair(c: f64, shift: f64) -> (ValueSurface, ValueSurface) {
        let u = ValueSurface::from_curve(SurfaceKind::PrimalU, 1e-3, 1e3, 4001, move |x| x.ln() + c);
        let v = ValueSurface::from_curve(SurfaceKind::DualV, 1e-3, 1e3, 4001, move |y| -y.ln() - 1.0 + c + shift);
        (u, v)
    }

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
    }

    #[test]
    fn analytic_log_pair_is_conjugate() {
        let (u, v) = log_pair(0.3, 0.0);
        let r = conjugacy_check(&u, &v, &grid(0.25, 4.0, 17), &grid(0.25, 4.0, 17), 1e-9).unwrap();
        assert!(r.pass, "{} {}", r.gap_u, r.gap_v);
    }

    #[test]
    fn shifted_dual_fails_by_the_shift() {
        let (u, v) = log_pair(0.0, 0.1);
        let r = conjugacy_check(&u, &v, &grid(0.25, 4.0, 9), &grid(0.25, 4.0, 9), 0.02).unwrap();
        assert!(!r.pass);
        assert!((r.gap_u - 0.1).abs() < 1e-6 && (r.gap_v - 0.1).abs() < 1e-6);
    }

    #[test]
    fn grids_outside_the_tabulation_are_rejected() {
        let (u, v) = log_pair(0.0, 0.0);
        assert!(matches!(
            conjugacy_check(&u, &v, &[1e4], &[1.0], 0.1),
            Err(Error::DomainMismatch(_))
        ));
    }

    #[test]
    fn shifted_conjugate_closed_forms() {
        assert_eq!(eval_shifted_conjugate(&UtilitySpec::Log, 1.0).unwrap(), 0.0);
        let v = eval_shifted_conjugate(&UtilitySpec::Log, 0.5).unwrap();
        assert!((v - (2f64.ln() - 0.5)).abs() < 1e-15);
        assert_eq!(eval_shifted_conjugate(&UtilitySpec::Power { p: 0.5 }, 1.0).unwrap(), 2.0);
        assert!(eval_shifted_conjugate(&UtilitySpec::Log, 0.0).is_err());
        assert!(eval_shifted_conjugate(&UtilitySpec::Power { p: -1.0 }, 1.0).is_err());
    }

    #[test]
    fn shape_check_flags_a_corrupted_node() {
        let (u, v) = log_pair(0.0, 0.0);
        let (ru, rv) = (shape_check(&u), shape_check(&v));
        assert!(ru.pass && rv.pass && ru.violations.is_empty());
        let mut bad = u.clone();
        let range = ru.range;
        bad.slices[0].values[2000] -= 0.1 * range;
        let r = shape_check(&bad);
        assert!(!r.pass);
        assert!(r.violations.iter().all(|v| (1999..=2001).contains(&v.index)), "{:?}", r.violations);
        assert!(r.violations.iter().any(|v| v.index == 2000 && v.check == "concave"));
    }

    fn numeric_shifted(u: &UtilitySpec, y: f64) -> f64 {
        let g = |s: f64| {
            let x = s.exp() - 1.0;
            u.u(x + 1.0) - x * y
        };
        // The maximizer y^(-1/(1-p)) - 1 stays below e^31 for p < 0.9, y >= 0.05.
        golden_section_max(g, 0.0, 40.0, 1e-13).1.max(u.u(1.0))
    }

    proptest! {
        #[test]
        fn shifted_conjugate_matches_numeric_maximization(y in 0.05f64..4.0, p in 0.1f64..0.9) {
            for u in [UtilitySpec::Log, UtilitySpec::Power { p }] {
                let exact = eval_shifted_conjugate(&u, y).unwrap();
                let numeric = numeric_shifted(&u, y);
                prop_assert!((exact - numeric).abs() < 1e-8 * (1.0 + exact.abs()), "{u}: {exact} vs {numeric}");
            }
        }

        #[test]
        fn gaps_are_invariant_under_a_common_shift(c in -5.0f64..5.0, s in 0.0f64..0.3) {
            let (u0, v0) = log_pair(0.0, s);
            let (u1, v1) = log_pair(c, s);
            let (xg, yg) = (grid(0.5, 2.0, 5), grid(0.5, 2.0, 5));
            let r0 = conjugacy_check(&u0, &v0, &xg, &yg, 1.0).unwrap();
            let r1 = conjugacy_check(&u1, &v1, &xg, &yg, 1.0).unwrap();
            prop_assert!((r0.gap_u - r1.gap_u).abs() < 1e-10);
            prop_assert!((r0.gap_v - r1.gap_v).abs() < 1e-10);
        }

        #[test]
        fn biconjugation_reproduces_the_dual(p in 0.2f64..0.8) {
            // v for U = x^p/p, tabulated; transform to u and back.
            let ut = UtilitySpec::Power { p };
            let v = ValueSurface::from_curve(SurfaceKind::DualV, 1e-2, 1e2, 2001, move |y| {
                crate::value::eval_conjugate(&ut, y).unwrap()
            });
            let xs = grid(1e-3, 1e3, 2001);
            let u_vals: Vec<f64> = xs.iter().map(|&x| legendre_inf(&v, x).unwrap()).collect();
            let mut i = 0;
            let u = ValueSurface::from_curve(SurfaceKind::PrimalU, 1e-3, 1e3, 2001, move |_| {
                i += 1;
                u_vals[i - 1]
            });
            let ys = grid(0.5, 2.0, 7);
            let once = conjugacy_check(&u, &v, &grid(0.5, 2.0, 7), &ys, 1.0).unwrap();
            let single = ys
                .iter()
                .map(|&y| (crate::value::eval_conjugate(&ut, y).unwrap() - v.eval_initial(y).unwrap()).abs())
                .fold(0.0, f64::max);
            let twice = ys
                .iter()
                .map(|&y| (legendre_sup(&u, y).unwrap() - v.eval_initial(y).unwrap()).abs())
                .fold(0.0, f64::max);
            prop_assert!(twice <= 2.0 * once.gap_u.max(single).max(1e-6), "{twice} vs {}", once.gap_u);
        }
    }
}
