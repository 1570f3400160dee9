//! Robust utility maximization by backward max–min recursion on
//! `(state, wealth)`.
//!
//! ```text
//! u_n(x, w) = U(w)
//! u_k(x, w) = max_H min_f E_f[ u_{k+1}(x + ΔX, w + H ΔX) ],   ΔX ∈ {−h, 0, +h}
//! |H| ≤ (w − w_min)/h,   u_k(·, w_min) = U(w_min)
//! ```
//!
//! Values are interpolated in `log w`. The three continuation values do not
//! depend on `f`, so the inner minimum is a scan over precomputed stencils
//! and the outer maximum a golden-section search (the objective is concave
//! in `H`).

use rayon::prelude::*;

use super::lattice::{LatticeConfig, SliceCurves, StateLattice, UniformGrid};
use super::surface::{Axis, Slice, SurfaceKind, ValueSurface};
use super::utility::UtilitySpec;
use crate::conditions::{classify, Certificates};
use crate::duality::golden_section_max;
use crate::error::{Error, Result};
use crate::model::UncertaintySpec;

/// Relative tolerance of the hedge search.
const HEDGE_TOL: f64 = 1e-10;

pub(crate) fn require_applicable(utility: &UtilitySpec, certs: &Certificates) -> Result<()> {
    utility.validate()?;
    let table = classify(utility, certs);
    if table.any() {
        return Ok(());
    }
    let mut failed: Vec<&str> = table.conjugacy_bounded.failed();
    for h in table.main_pos_power_exp.failed().into_iter().chain(table.main_neg_power_log.failed()) {
        if !failed.contains(&h) {
            failed.push(h);
        }
    }
    Err(Error::NotApplicable(format!(
        "no duality theorem covers `{utility}` for this spec; unmet hypotheses: {}",
        failed.join(", ")
    )))
}

/// The wealth grid for `x_list`, in `log w`.
pub(crate) fn wealth_grid(cfg: &LatticeConfig, x_list: &[f64]) -> Result<UniformGrid> {
    if x_list.iter().any(|x| !(*x > 0.0 && x.is_finite())) || x_list.is_empty() {
        return Err(Error::Domain("initial wealths must be positive and finite".into()));
    }
    let x_min = x_list.iter().copied().fold(f64::INFINITY, f64::min);
    let x_max = x_list.iter().copied().fold(0.0, f64::max);
    let lo = cfg.wealth_grid.min.unwrap_or(1e-6 * x_min);
    let hi = cfg.wealth_grid.max.unwrap_or(1e3 * x_max);
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::config("lattice.wealth_grid", format!("need 0 < min < max, got [{lo}, {hi}]")));
    }
    if x_min < lo || x_max > hi {
        return Err(Error::Domain(format!(
            "wealths [{x_min}, {x_max}] are not covered by the wealth grid [{lo}, {hi}]"
        )));
    }
    Ok(UniformGrid::spanning(lo.ln(), hi.ln(), cfg.wealth_grid.nodes))
}

/// Primal value surface `u_k(x, w)`; `u(x)` is the root curve at `t = 0`.
pub fn primal_value(
    spec: &UncertaintySpec,
    utility: &UtilitySpec,
    x_list: &[f64],
    cfg: &LatticeConfig,
    certs: &Certificates,
) -> Result<ValueSurface> {
    require_applicable(utility, certs)?;
    let lattice = StateLattice::new(spec, cfg, 1.5, true)?;
    let grid = wealth_grid(cfg, x_list)?;
    let wealth: Vec<f64> = grid.points().into_iter().map(f64::exp).collect();
    let w_min = wealth[0];
    let floor = utility.u(w_min);
    let n = lattice.n_steps;
    let h = lattice.h;
    let m = grid.n;
    let k_dims = spec.param_box.dims();
    let stencils = lattice.all_stencils(spec, false)?;

    let node_states = |k: usize| -> Vec<f64> {
        let w = lattice.width(k) as i64;
        (-w..=w).map(|j| lattice.state(j)).collect()
    };
    let terminal: Vec<f64> = (0..node_states(n).len()).flat_map(|_| wealth.iter().map(|&w| utility.u(w))).collect();
    if terminal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("utility is not finite on the wealth grid [{w_min}, ..]")));
    }
    let mut slices = vec![Slice {
        t: spec.horizon,
        states: node_states(n),
        running_max: Vec::new(),
        values: terminal,
        hedge: Vec::new(),
        adversary: Vec::new(),
    }];

    for k in (0..n).rev() {
        let next = SliceCurves::new(&lattice, k + 1, grid, &slices.last().expect("slice").values, cfg.interpolation);
        let width = lattice.width(k) as i64;
        let rows: Vec<(f64, f64, usize)> = (0..(2 * width as usize + 1) * m)
            .into_par_iter()
            .map(|e| {
                let (node, i) = (e / m, e % m);
                let j = node as i64 - width;
                let st = &stencils[k][node];
                let w = wealth[i];
                let mid = next.eval(j, grid.at(i));
                let inner = |hh: f64| -> (f64, usize) {
                    let down = next.eval(j - 1, (w - hh * h).max(w_min).ln());
                    let up = next.eval(j + 1, (w + hh * h).ln());
                    let mut best = (f64::INFINITY, 0);
                    for s in st {
                        let v = s.p[0] * down + s.p[1] * mid + s.p[2] * up;
                        if v < best.0 {
                            best = (v, s.param);
                        }
                    }
                    best
                };
                if i == 0 {
                    return (floor, 0.0, inner(0.0).1);
                }
                let h_max = (w - w_min) / h;
                let (h_star, v_star) = golden_section_max(|hh| inner(hh).0, -h_max, h_max, HEDGE_TOL);
                let (v0, f0) = inner(0.0);
                if v0 >= v_star {
                    (v0, 0.0, f0)
                } else {
                    (v_star, h_star, inner(h_star).1)
                }
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
        slices.push(Slice {
            t: k as f64 * lattice.dt,
            states: node_states(k),
            running_max: Vec::new(),
            values,
            hedge,
            adversary,
        });
    }
    slices.reverse();
    Ok(ValueSurface {
        kind: SurfaceKind::PrimalU,
        axis: Axis::Wealth { log_grid: grid },
        interpolation: cfg.interpolation,
        n_params: k_dims,
        domain: Some((w_min, grid.end().exp())),
        slices,
        lattice,
    })
}

/// Position per unit of wealth, `H / w`, at each `t = 0` wealth node.
pub fn initial_fractions(surface: &ValueSurface) -> Vec<(f64, f64)> {
    surface
        .axis
        .points()
        .into_iter()
        .zip(surface.initial_hedge().iter().copied())
        .map(|(w, hh)| (w, hh / w))
        .collect()
}
