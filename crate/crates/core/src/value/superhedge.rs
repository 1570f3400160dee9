//! Superhedging prices on the trinomial lattice and hedge verification.
//!
//! ```text
//! V_n(x) = f(x)
//! V_k(x) = max_{a ∈ grid} [ p₋(a) V_{k+1}(x − h) + p₀(a) V_{k+1}(x) + p₊(a) V_{k+1}(x + h) ]
//! H_k(x) = (V_{k+1}(x + h) − V_{k+1}(x − h)) / 2h
//! ```
//!
//! The drift is zero. With the default stretch `h² = a_max Δt`, the middle
//! branch carries no mass under `a_max`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::lattice::{trinomial, LatticeConfig, StateLattice};
use super::surface::{Axis, Slice, SurfaceKind, ValueSurface};
use crate::error::{Error, Result};
use crate::expr::{Env, Expr, Scope};
use crate::model::UncertaintySpec;
use crate::rng::{self, Purpose};

const RUNNING_MAX: &str = "max_X";

/// A payoff of the terminal state and optionally its running maximum.
#[derive(Clone)]
pub struct Payoff {
    label: String,
    uses_max: bool,
    f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Payoff").field("label", &self.label).finish()
    }
}

impl Payoff {
    /// Parse an expression in `X` and `max_X`.
    pub fn parse(source: &str) -> Result<Self> {
        let scope = Scope {
            n_params: 0,
            dim: 1,
            extras: vec![RUNNING_MAX.into()],
            ..Default::default()
        };
        let expr = Expr::parse(source, &scope)?;
        let uses_max = expr.uses_extras();
        Ok(Payoff {
            label: source.to_string(),
            uses_max,
            f: Arc::new(move |x, m| {
                expr.eval(&Env {
                    t: 0.0,
                    params: &[],
                    path: None,
                    state: &[x],
                    extras: &[m],
                })
            }),
        })
    }

    pub fn from_fn(label: impl Into<String>, uses_max: bool, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Payoff {
            label: label.into(),
            uses_max,
            f: Arc::new(f),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn uses_running_max(&self) -> bool {
        self.uses_max
    }

    pub fn eval(&self, x: f64, running_max: f64) -> f64 {
        (self.f)(x, running_max)
    }
}

/// Node layout of one slice: `(j, m)` pairs, `m` the running-maximum index
/// (always 0 without a running maximum).
struct Layout {
    width: i64,
    running: bool,
    /// Offsets of each `j` block when `running`.
    offsets: Vec<usize>,
    nodes: Vec<(i64, i64)>,
}

impl Layout {
    fn new(width: i64, running: bool) -> Self {
        let mut nodes = Vec::new();
        let mut offsets = Vec::new();
        for j in -width..=width {
            offsets.push(nodes.len());
            if running {
                for m in j.max(0)..=width {
                    nodes.push((j, m));
                }
            } else {
                nodes.push((j, 0));
            }
        }
        Layout {
            width,
            running,
            offsets,
            nodes,
        }
    }

    fn index(&self, j: i64, m: i64) -> Option<usize> {
        if j.abs() > self.width {
            return None;
        }
        let block = self.offsets[(j + self.width) as usize];
        Some(if self.running { block + (m - j.max(0)) as usize } else { block })
    }
}

/// Superhedging price surface of `payoff` under the zero-drift counterpart of
/// `spec`. Needs a growth certificate upstream; the payoff must be finite and
/// nonnegative on the lattice.
pub fn superhedge(spec: &UncertaintySpec, payoff: &Payoff, cfg: &LatticeConfig) -> Result<ValueSurface> {
    let q = spec.martingale_version();
    let lattice = StateLattice::new(&q, cfg, 1.0, false)?;
    let running = payoff.uses_running_max();
    if running && !lattice.full_tree() {
        return Err(Error::Unsupported("running-maximum payoffs need the full tree (no half_width)".into()));
    }
    let n = lattice.n_steps;
    let h = lattice.h;
    let k_dims = q.param_box.dims();
    let layouts: Vec<Layout> = (0..=n).map(|k| Layout::new(lattice.width(k) as i64, running)).collect();
    let stencils = lattice.all_stencils(&q, true)?;

    let term = &layouts[n];
    let mut values = Vec::with_capacity(term.nodes.len());
    for &(j, m) in &term.nodes {
        let v = payoff.eval(lattice.state(j), lattice.state(m));
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Domain(format!(
                "payoff `{}` is {v} at x = {}; it must be finite and nonnegative",
                payoff.label(),
                lattice.state(j)
            )));
        }
        values.push(v);
    }
    let mut slices = vec![slice_of(&lattice, term, n, values, Vec::new(), Vec::new())];

    for k in (0..n).rev() {
        let next = &slices.last().expect("terminal slice").values;
        let (lay, lay_next) = (&layouts[k], &layouts[k + 1]);
        let w = lay.width;
        let rows: Vec<(f64, f64, usize)> = lay
            .nodes
            .par_iter()
            .map(|&(j, m)| {
                let v = |jj: i64| -> f64 {
                    let mm = m.max(jj);
                    match lay_next.index(jj, mm) {
                        Some(i) => next[i],
                        None => {
                            // One-sided extrapolation beyond a truncated edge.
                            let inward = jj - jj.signum();
                            let i0 = lay_next.index(inward, mm).expect("edge node");
                            let i1 = lay_next.index(inward - jj.signum(), mm).expect("inner node");
                            2.0 * next[i0] - next[i1]
                        }
                    }
                };
                let (down, mid, up) = (v(j - 1), v(j), v(j + 1));
                let mut best = (f64::NEG_INFINITY, 0);
                for s in &stencils[k][(j + w) as usize] {
                    let e = s.p[0] * down + s.p[1] * mid + s.p[2] * up;
                    if e > best.0 {
                        best = (e, s.param);
                    }
                }
                (best.0, (up - down) / (2.0 * h), best.1)
            })
            .collect();
        let mut values = Vec::with_capacity(rows.len());
        let mut hedge = Vec::with_capacity(rows.len());
        let mut adversary = Vec::with_capacity(rows.len() * k_dims);
        for (v, hh, f) in rows {
            values.push(v);
            hedge.push(hh);
            adversary.extend_from_slice(&lattice.params[f]);
        }
        slices.push(slice_of(&lattice, lay, k, values, hedge, adversary));
    }
    slices.reverse();
    Ok(ValueSurface {
        kind: SurfaceKind::Superhedge,
        lattice,
        axis: Axis::None,
        interpolation: cfg.interpolation,
        n_params: k_dims,
        domain: None,
        slices,
    })
}

fn slice_of(lattice: &StateLattice, lay: &Layout, k: usize, values: Vec<f64>, hedge: Vec<f64>, adversary: Vec<f64>) -> Slice {
    Slice {
        t: k as f64 * lattice.dt,
        states: lay.nodes.iter().map(|&(j, _)| lattice.state(j)).collect(),
        running_max: if lay.running {
            lay.nodes.iter().map(|&(_, m)| lattice.state(m)).collect()
        } else {
            Vec::new()
        },
        values,
        hedge,
        adversary,
    }
}

/// Outcome of rolling the tabulated hedge along lattice paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuperhedgeReport {
    pub price: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub exhaustive: bool,
    /// Slack constant `c`; allowed shortfall is `c·Δt + floor`.
    pub slack_const: f64,
    pub slack: f64,
    /// Floating-point floor added to the slack.
    pub floor: f64,
    pub violations: usize,
    /// Largest `payoff − (price + Σ H ΔX)` seen, and its path.
    pub worst_shortfall: f64,
    pub worst_path: usize,
    pub pass: bool,
}

impl SuperhedgeReport {
    pub fn require_pass(self) -> Result<Self> {
        if self.pass {
            Ok(self)
        } else {
            Err(Error::SuperhedgeViolation {
                path: self.worst_path,
                shortfall: self.worst_shortfall,
                slack: self.slack,
            })
        }
    }
}

struct Roller<'a> {
    surface: &'a ValueSurface,
    layouts: Vec<Layout>,
}

impl<'a> Roller<'a> {
    fn new(surface: &'a ValueSurface) -> Result<Self> {
        if surface.kind != SurfaceKind::Superhedge {
            return Err(Error::Domain("hedge verification needs a superhedge surface".into()));
        }
        let lat = &surface.lattice;
        if !lat.full_tree() {
            return Err(Error::Unsupported("hedge verification needs the full tree (no half_width)".into()));
        }
        let running = surface.slices.iter().any(|s| !s.running_max.is_empty());
        let layouts = (0..=lat.n_steps).map(|k| Layout::new(lat.width(k) as i64, running)).collect();
        Ok(Roller { surface, layouts })
    }

    /// Shortfall at `T` for a move sequence given by `pick(k, node) -> move`.
    fn shortfall(&self, mut pick: impl FnMut(usize, usize) -> Result<i64>) -> Result<f64> {
        let s = self.surface;
        let h = s.lattice.h;
        let (mut j, mut m) = (0i64, 0i64);
        let mut wealth = s.root_value();
        for k in 0..s.lattice.n_steps {
            let node = self.layouts[k].index(j, m).expect("node on the tree");
            let mv = pick(k, node)?;
            wealth += s.slices[k].hedge[node] * mv as f64 * h;
            j += mv;
            m = m.max(j);
        }
        let n = s.lattice.n_steps;
        let node = self.layouts[n].index(j, m).expect("terminal node");
        Ok(s.slices[n].values[node] - wealth)
    }
}

fn floor_of(surface: &ValueSurface) -> f64 {
    let scale = surface.slices.last().map(|s| s.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()))).unwrap_or(0.0);
    1e-10 * (1.0 + scale)
}

fn summarize(surface: &ValueSurface, shortfalls: &[f64], exhaustive: bool, slack_const: f64) -> SuperhedgeReport {
    let floor = floor_of(surface);
    let slack = slack_const * surface.lattice.dt + floor;
    let (worst_path, worst_shortfall) = shortfalls
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let violations = shortfalls.iter().filter(|&&v| v > slack).count();
    SuperhedgeReport {
        price: surface.root_value(),
        n_paths: shortfalls.len(),
        n_steps: surface.lattice.n_steps,
        exhaustive,
        slack_const,
        slack,
        floor,
        violations,
        worst_shortfall,
        worst_path,
        pass: violations == 0,
    }
}

/// Roll the tabulated hedge along `n_paths` adversarial lattice paths. At
/// every node the adversary plays the tabulated maximizing `a` (which
/// minimizes the expected hedging profit) and the move is drawn from that
/// stencil. Violations are counted, not raised; see [`verify_superhedge`].
pub fn audit_superhedge(
    surface: &ValueSurface,
    spec: &UncertaintySpec,
    n_paths: usize,
    seed: u64,
    slack_const: f64,
) -> Result<SuperhedgeReport> {
    let roller = Roller::new(surface)?;
    let q = spec.martingale_version();
    let lat = &surface.lattice;
    let k_dims = surface.n_params;
    let shortfalls: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, Purpose::Adversary, i as u64);
            let (mut b, mut a) = ([0.0], [0.0]);
            roller.shortfall(|k, node| {
                let s = &surface.slices[k];
                let f = &s.adversary[node * k_dims..(node + 1) * k_dims];
                let x = [s.states[node]];
                let view = crate::path::PathView::new(lat.dt, 1, &x);
                q.eval_into(f, s.t, &view, &mut b, &mut a)?;
                let p = trinomial(0.0, a[0], lat.dt, lat.h).ok_or_else(|| Error::GridTooCoarse {
                    reason: format!("stencil for a = {} leaves [0, 1]", a[0]),
                    suggestion: "rebuild the surface with the same spec".into(),
                })?;
                let u: f64 = rng.random();
                Ok(if u < p[0] {
                    -1
                } else if u < p[0] + p[1] {
                    0
                } else {
                    1
                })
            })
        })
        .collect::<Result<_>>()?;
    Ok(summarize(surface, &shortfalls, false, slack_const))
}

/// [`audit_superhedge`], failing with the worst violating path.
pub fn verify_superhedge(
    surface: &ValueSurface,
    spec: &UncertaintySpec,
    n_paths: usize,
    seed: u64,
    slack_const: f64,
) -> Result<SuperhedgeReport> {
    audit_superhedge(surface, spec, n_paths, seed, slack_const)?.require_pass()
}

/// Largest lattice depth accepted by [`audit_superhedge_exhaustive`].
pub const MAX_EXHAUSTIVE_STEPS: usize = 14;

/// Check the hedge on all `3ⁿ` move sequences, zero-probability branches
/// included, with no slack beyond the floating-point floor.
pub fn audit_superhedge_exhaustive(surface: &ValueSurface) -> Result<SuperhedgeReport> {
    let n = surface.lattice.n_steps;
    if n > MAX_EXHAUSTIVE_STEPS {
        return Err(Error::Domain(format!(
            "exhaustive enumeration limited to {MAX_EXHAUSTIVE_STEPS} steps, got {n}"
        )));
    }
    let roller = Roller::new(surface)?;
    let total = 3usize.pow(n as u32);
    let shortfalls: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|code| {
            let mut rem = code;
            roller.shortfall(|_, _| {
                let mv = (rem % 3) as i64 - 1;
                rem /= 3;
                Ok(mv)
            })
        })
        .collect::<Result<_>>()?;
    Ok(summarize(surface, &shortfalls, true, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, Builtin};
    use proptest::prelude::*;

    fn interval() -> UncertaintySpec {
        builtin(Builtin::GbmInterval { b: [0.0, 0.0], a: [0.04, 0.09] }, 1.0, vec![1.0]).unwrap()
    }

    fn fixed(a: f64) -> UncertaintySpec {
        builtin(Builtin::GbmInterval { b: [0.0, 0.0], a: [a, a] }, 1.0, vec![1.0]).unwrap()
    }

    fn cfg(n: usize) -> LatticeConfig {
        LatticeConfig {
            n_steps: n,
            param_grid_per_dim: 3,
            ..Default::default()
        }
    }

    #[test]
    fn constant_payoff_is_priced_exactly() {
        let s = superhedge(&interval(), &Payoff::parse("1").unwrap(), &cfg(16)).unwrap();
        assert_eq!(s.root_value(), 1.0);
        assert!(s.slices.iter().flat_map(|sl| &sl.hedge).all(|&h| h == 0.0));
        let r = verify_superhedge(&s, &interval(), 200, 1, 0.0).unwrap();
        assert_eq!(r.worst_shortfall, 0.0);
    }

    #[test]
    fn convex_and_concave_payoffs_pick_the_extreme_volatility() {
        let c = cfg(64);
        let h = (0.09f64 / 64.0).sqrt();
        let pinned = LatticeConfig {
            state_grid: super::super::lattice::StateGrid {
                step: Some(h),
                ..Default::default()
            },
            ..c.clone()
        };
        let call = Payoff::parse("max(X - 1, 0)").unwrap();
        let robust = superhedge(&interval(), &call, &c).unwrap().root_value();
        let single = superhedge(&fixed(0.09), &call, &pinned).unwrap().root_value();
        assert!((robust - single).abs() <= 1e-12 * single, "{robust} vs {single}");
        // Bachelier price σ√T φ(0) as a sanity anchor.
        let bachelier = 0.3 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((robust - bachelier).abs() < 0.01 * bachelier);

        // Concave; shifted so it stays nonnegative on the tree.
        let cap = Payoff::parse("min(X, 1) + 3").unwrap();
        let robust = superhedge(&interval(), &cap, &c).unwrap().root_value();
        let low = superhedge(&fixed(0.04), &cap, &pinned).unwrap().root_value();
        assert!((robust - low).abs() <= 1e-12, "{robust} vs {low}");
    }

    #[test]
    fn convex_hedge_superreplicates_and_the_zero_hedge_does_not() {
        let spec = interval();
        let call = Payoff::parse("max(X - 1, 0)").unwrap();
        let s = superhedge(&spec, &call, &cfg(10)).unwrap();
        let ex = audit_superhedge_exhaustive(&s).unwrap();
        assert_eq!(ex.n_paths, 59_049);
        assert!(ex.pass, "worst {}", ex.worst_shortfall);
        verify_superhedge(&s, &spec, 2_000, 3, 0.0).unwrap();

        let mut broken = s.clone();
        for sl in &mut broken.slices {
            sl.hedge.iter_mut().for_each(|h| *h = 0.0);
        }
        let err = verify_superhedge(&broken, &spec, 2_000, 3, 0.0).unwrap_err();
        assert!(matches!(err, Error::SuperhedgeViolation { .. }), "{err}");
        assert!(!audit_superhedge_exhaustive(&broken).unwrap().pass);
    }

    #[test]
    fn running_maximum_payoff() {
        let spec = interval();
        let lookback = Payoff::parse("max_X - X").unwrap();
        assert!(lookback.uses_running_max());
        let s = superhedge(&spec, &lookback, &cfg(10)).unwrap();
        assert!(s.root_value() > 0.0);
        assert!(!s.slices[10].running_max.is_empty());
        let r = audit_superhedge_exhaustive(&s).unwrap();
        assert!(r.n_paths == 59_049 && r.worst_shortfall.is_finite());
        verify_superhedge(&s, &spec, 500, 1, 0.0).unwrap();
    }

    #[test]
    fn negative_payoff_is_rejected() {
        assert!(matches!(
            superhedge(&interval(), &Payoff::parse("X - 2").unwrap(), &cfg(8)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn truncated_tree_extrapolates() {
        let mut c = cfg(32);
        c.state_grid.half_width = Some(12);
        let call = Payoff::parse("max(X - 1, 0)").unwrap();
        let t = superhedge(&interval(), &call, &c).unwrap().root_value();
        let full = superhedge(&interval(), &call, &cfg(32)).unwrap().root_value();
        assert!((t - full).abs() < 1e-3, "{t} vs {full}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn price_is_monotone_and_sublinear(
            k1 in 0.6f64..1.4, k2 in 0.6f64..1.4, c1 in 0.0f64..2.0, c2 in 0.0f64..2.0, w in 0.0f64..1.0,
        ) {
            let spec = interval();
            let c = cfg(16);
            let f = Payoff::from_fn("f", false, move |x, _| c1 * (x - k1).max(0.0) + w * (k2 - x).max(0.0));
            let g = Payoff::from_fn("g", false, move |x, _| c2 * (k2 - x).max(0.0) + w * (x - k1).abs().min(0.3));
            let bigger = Payoff::from_fn("f+1", false, move |x, _| c1 * (x - k1).max(0.0) + w * (k2 - x).max(0.0) + 0.1);
            let sum = Payoff::from_fn("f+g", false, move |x, _| {
                c1 * (x - k1).max(0.0) + w * (k2 - x).max(0.0) + c2 * (k2 - x).max(0.0) + w * (x - k1).abs().min(0.3)
            });
            let pf = superhedge(&spec, &f, &c).unwrap().root_value();
            let pg = superhedge(&spec, &g, &c).unwrap().root_value();
            let pb = superhedge(&spec, &bigger, &c).unwrap().root_value();
            let ps = superhedge(&spec, &sum, &c).unwrap().root_value();
            prop_assert!(pf <= pb + 1e-12);
            prop_assert!((pb - pf - 0.1).abs() < 1e-12);
            prop_assert!(ps <= pf + pg + 1e-12);
            prop_assert!(ps >= pf.max(pg) - 1e-12);
        }
    }
}
