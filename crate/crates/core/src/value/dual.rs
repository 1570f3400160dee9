//! Dual value by backward minimization on `(state, η)`, `η = log(y Z)`.
//!
//! ```text
//! v_n(x, η) = V(e^η)
//! v_k(x, η) = min_f Σ_i p_i(f) v_{k+1}(x + i h, η + log(q_i(f) / p_i(f)))
//! ```
//!
//! `p(f)` is the stencil of `(b(f), a(f))` and `q(f)` the zero-drift stencil
//! with the same `a(f)`, so each step's density ratio is the lattice
//! counterpart of the stochastic exponential removing the drift `b(f)`.

use rayon::prelude::*;

use super::lattice::{trinomial, LatticeConfig, SliceCurves, StateLattice, Stencil, UniformGrid};
use super::primal::require_applicable;
use super::surface::{Axis, Slice, SurfaceKind, ValueSurface};
use super::utility::{eval_conjugate, UtilitySpec};
use crate::conditions::Certificates;
use crate::error::{Error, Result};
use crate::model::UncertaintySpec;

/// Grid nodes added beyond the reachable cone on each side.
const MARGIN_NODES: usize = 8;

#[derive(Debug, Clone, Copy)]
struct DualStencil {
    param: usize,
    p: [f64; 3],
    log_ratio: [f64; 3],
}

/// `None` when the two stencils are not equivalent.
fn dual_stencil(s: &Stencil, dt: f64, h: f64) -> Option<DualStencil> {
    let q = trinomial(0.0, s.a, dt, h)?;
    let mut log_ratio = [0.0; 3];
    for i in 0..3 {
        match (s.p[i] > 0.0, q[i] > 0.0) {
            (true, true) => log_ratio[i] = (q[i] / s.p[i]).ln(),
            (false, false) => {}
            _ => return None,
        }
    }
    Some(DualStencil {
        param: s.param,
        p: s.p,
        log_ratio,
    })
}

/// Dual value surface `v_k(x, yZ)`; `v(y)` is the root curve at `t = 0`.
pub fn dual_value(
    spec: &UncertaintySpec,
    utility: &UtilitySpec,
    y_list: &[f64],
    cfg: &LatticeConfig,
    certs: &Certificates,
) -> Result<ValueSurface> {
    require_applicable(utility, certs)?;
    match &certs.mpr {
        Some(m) if m.feasible => {}
        _ => {
            return Err(Error::PreconditionNotCertified(
                "the dual recursion needs a feasible market-price-of-risk certificate".into(),
            ))
        }
    }
    let lattice = StateLattice::new(spec, cfg, 1.5, true)?;
    let dg = &cfg.density_grid;
    if let Some(y) = y_list.iter().find(|y| !(**y >= dg.y_min && **y <= dg.y_max)) {
        return Err(Error::Domain(format!("y = {y} outside the tabulated range [{}, {}]", dg.y_min, dg.y_max)));
    }
    let n = lattice.n_steps;
    let k_dims = spec.param_box.dims();
    let stencils: Vec<Vec<Vec<DualStencil>>> = lattice
        .all_stencils(spec, false)?
        .into_iter()
        .map(|step| {
            step.into_iter()
                .map(|node| {
                    let ds: Vec<DualStencil> =
                        node.iter().filter_map(|s| dual_stencil(s, lattice.dt, lattice.h)).collect();
                    if ds.is_empty() {
                        Err(Error::GridTooCoarse {
                            reason: "no parameter admits an equivalent zero-drift stencil".into(),
                            suggestion: "raise lattice.state_grid.stretch above 1".into(),
                        })
                    } else {
                        Ok(ds)
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let reach = stencils
        .iter()
        .flatten()
        .flatten()
        .flat_map(|s| s.log_ratio)
        .fold(0.0_f64, |a, l| a.max(l.abs()));

    let lo = dg.y_min.ln() - n as f64 * reach - MARGIN_NODES as f64 * dg.step;
    let hi = dg.y_max.ln() + n as f64 * reach + MARGIN_NODES as f64 * dg.step;
    let required = ((hi - lo) / dg.step).ceil() as usize + 1;
    if required > dg.max_nodes {
        return Err(Error::LogDensityGridExceeded {
            required,
            allowed: dg.max_nodes,
        });
    }
    let grid = UniformGrid {
        start: lo,
        step: dg.step,
        n: required,
    };
    let m = grid.n;

    let node_states = |k: usize| -> Vec<f64> {
        let w = lattice.width(k) as i64;
        (-w..=w).map(|j| lattice.state(j)).collect()
    };
    let terminal_curve: Vec<f64> =
        grid.points().into_iter().map(|eta| eval_conjugate(utility, eta.exp())).collect::<Result<_>>()?;
    let mut slices = vec![Slice {
        t: spec.horizon,
        states: node_states(n),
        running_max: Vec::new(),
        values: terminal_curve.repeat(node_states(n).len()),
        hedge: Vec::new(),
        adversary: Vec::new(),
    }];

    for k in (0..n).rev() {
        let next = SliceCurves::new(&lattice, k + 1, grid, &slices.last().expect("slice").values, cfg.interpolation);
        let width = lattice.width(k) as i64;
        let rows: Vec<(f64, usize)> = (0..(2 * width as usize + 1) * m)
            .into_par_iter()
            .map(|e| {
                let (node, i) = (e / m, e % m);
                let j = node as i64 - width;
                let eta = grid.at(i);
                let mut best = (f64::INFINITY, stencils[k][node][0].param);
                for s in &stencils[k][node] {
                    let mut v = 0.0;
                    for (r, mv) in (-1i64..=1).enumerate() {
                        if s.p[r] > 0.0 {
                            v += s.p[r] * next.eval(j + mv, eta + s.log_ratio[r]);
                        }
                    }
                    if v < best.0 {
                        best = (v, s.param);
                    }
                }
                best
            })
            .collect();
        let mut values = Vec::with_capacity(rows.len());
        let mut adversary = Vec::with_capacity(rows.len() * k_dims);
        for (v, f) in rows {
            values.push(v);
            adversary.extend_from_slice(&lattice.params[f]);
        }
        slices.push(Slice {
            t: k as f64 * lattice.dt,
            states: node_states(k),
            running_max: Vec::new(),
            values,
            hedge: Vec::new(),
            adversary,
        });
    }
    slices.reverse();
    Ok(ValueSurface {
        kind: SurfaceKind::DualV,
        axis: Axis::ScaledDensity { log_grid: grid },
        interpolation: cfg.interpolation,
        n_params: k_dims,
        domain: Some((dg.y_min, dg.y_max)),
        slices,
        lattice,
    })
}
