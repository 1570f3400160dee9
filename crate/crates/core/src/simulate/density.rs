//! Stochastic exponentials along simulated paths.
//!
//! ```text
//! P → Q   Δlog Z = −⟨θ, ΔX − b Δt⟩ − ½ ⟨θ, aθ⟩ Δt
//! Q → P   Δlog Z = +⟨θ, ΔX⟩        − ½ ⟨θ, aθ⟩ Δt
//! ```
//!
//! with `θ` the minimum-norm solution of `aθ = b` at the step's parameter.

use rayon::prelude::*;
use serde::Serialize;

use super::{check_sizes, mean_se, run_path, PathEnsemble, Selector};
use crate::conditions::{mpr_from_sample, Certificates};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Structure, UncertaintySpec};
use crate::path::PathView;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Removes the drift: density of a martingale measure w.r.t. the model.
    PtoQ,
    /// Adds the drift back: density of the model w.r.t. its martingale measure.
    QtoP,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityProcess {
    pub direction: Direction,
    pub n_paths: usize,
    pub n_steps: usize,
    /// `n_paths × (n_steps + 1)`, row-major; column 0 is zero.
    pub log_z: Vec<f64>,
}

impl DensityProcess {
    pub fn log_path(&self, i: usize) -> &[f64] {
        let len = self.n_steps + 1;
        &self.log_z[i * len..(i + 1) * len]
    }

    pub fn terminal(&self, i: usize) -> f64 {
        self.log_path(i)[self.n_steps].exp()
    }
}

/// Log-density increments along one path; `params` holds the per-step choices.
pub(crate) fn path_log_density(
    spec: &UncertaintySpec,
    path: &PathView<'_>,
    params: &[f64],
    direction: Direction,
    tol: f64,
    index: usize,
    out: &mut Vec<f64>,
) -> Result<()> {
    let d = spec.dim();
    let k_dims = spec.param_box.dims();
    let n_steps = path.len() - 1;
    let dt = path.dt;
    let reuse = spec.structure() == Structure::Constant;
    let mut b = vec![0.0; d];
    let mut a = vec![0.0; d * d];
    let mut at = vec![0.0; d];
    let mut theta = vec![0.0; d];
    let mut energy = 0.0;
    let mut prev: &[f64] = &[];
    let mut acc = 0.0;
    out.push(0.0);
    for k in 0..n_steps {
        let f = &params[k * k_dims..(k + 1) * k_dims];
        let t = k as f64 * dt;
        if !(reuse && f == prev) {
            let prefix = path.truncated(k + 1);
            spec.eval_into(f, t, &prefix, &mut b, &mut a)?;
            let (th, _) = mpr_from_sample(&b, &a, d, tol, || format!("path {index}, step {k}"))?;
            theta = th;
            linalg::mat_vec(&a, &theta, d, &mut at);
            energy = linalg::dot(&theta, &at);
            prev = f;
        }
        let x0 = path.point(k);
        let x1 = path.point(k + 1);
        let mut inc = 0.0;
        for j in 0..d {
            let dx = x1[j] - x0[j];
            inc += theta[j]
                * match direction {
                    Direction::PtoQ => -(dx - b[j] * dt),
                    Direction::QtoP => dx,
                };
        }
        acc += inc - 0.5 * energy * dt;
        out.push(acc);
    }
    Ok(())
}

/// Density process along every path of `ensemble`, using the parameters the
/// ensemble recorded. `spec` supplies `(b, a)` and hence `θ`; for `QtoP` the
/// ensemble is normally simulated under `spec.martingale_version()`.
pub fn stochastic_exponential(
    spec: &UncertaintySpec,
    ensemble: &PathEnsemble,
    direction: Direction,
    mpr_residual_tol: f64,
) -> Result<DensityProcess> {
    let rows: Vec<Result<Vec<f64>>> = (0..ensemble.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::with_capacity(ensemble.n_steps + 1);
            path_log_density(
                spec,
                &ensemble.path(i),
                ensemble.params_of_path(i),
                direction,
                mpr_residual_tol,
                i,
                &mut out,
            )?;
            Ok(out)
        })
        .collect();
    let mut log_z = Vec::with_capacity(ensemble.n_paths * (ensemble.n_steps + 1));
    for row in rows {
        log_z.extend(row?);
    }
    Ok(DensityProcess {
        direction,
        n_paths: ensemble.n_paths,
        n_steps: ensemble.n_steps,
        log_z,
    })
}

/// Simulate under `sim` and return only `log Z_T` per path, with densities
/// computed from `theta_spec`; nothing beyond one path is held in memory.
#[allow(clippy::too_many_arguments)]
pub fn terminal_log_densities(
    sim: &UncertaintySpec,
    theta_spec: &UncertaintySpec,
    selector: &Selector,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    direction: Direction,
    mpr_residual_tol: f64,
) -> Result<Vec<f64>> {
    check_sizes(n_paths, n_steps)?;
    let rows: Vec<Result<f64>> = (0..n_paths)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n_steps + 1),
            |buf, i| {
                let run = run_path(sim, selector, n_steps, seed, i)?;
                buf.clear();
                path_log_density(theta_spec, &run.path.view(), &run.params, direction, mpr_residual_tol, i, buf)?;
                Ok(buf[n_steps])
            },
        )
        .collect();
    rows.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftBucket {
    pub step: usize,
    pub weighted_mean: Vec<f64>,
    pub weighted_se: Vec<f64>,
    pub unweighted_mean: Vec<f64>,
    pub unweighted_se: Vec<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GirsanovReport {
    pub n_paths: usize,
    pub n_steps: usize,
    pub z_mean: f64,
    pub z_se: f64,
    /// `|E Z_T − 1| ≤ 4 SE`.
    pub martingale_pass: bool,
    /// Largest `|weighted mean| / weighted SE` over buckets and components.
    pub max_z_score: f64,
    pub buckets: Vec<DriftBucket>,
    /// Every bucket's `Z_T`-weighted drift is within 4 SE of zero.
    pub pass: bool,
}

/// `Z_T`-weighted mean increment per step; under the reweighted measure the
/// drift must vanish.
pub fn girsanov_drift_check(ensemble: &PathEnsemble, density: &DensityProcess) -> Result<GirsanovReport> {
    if density.direction != Direction::PtoQ {
        return Err(Error::Domain("drift check needs a drift-removing (PtoQ) density".into()));
    }
    if density.n_paths != ensemble.n_paths || density.n_steps != ensemble.n_steps {
        return Err(Error::DomainMismatch("density and ensemble sizes differ".into()));
    }
    let n = ensemble.n_paths;
    let d = ensemble.dim;
    let w: Vec<f64> = (0..n).map(|i| density.terminal(i)).collect();
    let (z_mean, z_se) = mean_se(&w);
    let w_sum: f64 = w.iter().sum();
    let mut buckets = Vec::with_capacity(ensemble.n_steps);
    let mut max_z_score: f64 = 0.0;
    let mut inc = vec![0.0; n];
    for k in 0..ensemble.n_steps {
        let mut bucket = DriftBucket {
            step: k,
            weighted_mean: vec![0.0; d],
            weighted_se: vec![0.0; d],
            unweighted_mean: vec![0.0; d],
            unweighted_se: vec![0.0; d],
            pass: true,
        };
        for j in 0..d {
            for (i, v) in inc.iter_mut().enumerate() {
                *v = ensemble.state(i, k + 1)[j] - ensemble.state(i, k)[j];
            }
            let (um, use_) = mean_se(&inc);
            let wm = w.iter().zip(&inc).map(|(wi, x)| wi * x).sum::<f64>() / w_sum;
            // Self-normalized importance-sampling standard error.
            let var = w.iter().zip(&inc).map(|(wi, x)| wi * wi * (x - wm) * (x - wm)).sum::<f64>();
            let wse = var.sqrt() / w_sum;
            let score = if wse > 0.0 { wm.abs() / wse } else if wm == 0.0 { 0.0 } else { f64::INFINITY };
            max_z_score = max_z_score.max(score);
            bucket.pass &= score <= 4.0;
            bucket.weighted_mean[j] = wm;
            bucket.weighted_se[j] = wse;
            bucket.unweighted_mean[j] = um;
            bucket.unweighted_se[j] = use_;
        }
        buckets.push(bucket);
    }
    let martingale_pass = (z_mean - 1.0).abs() <= 4.0 * z_se || (z_mean == 1.0 && z_se == 0.0);
    Ok(GirsanovReport {
        n_paths: n,
        n_steps: ensemble.n_steps,
        z_mean,
        z_se,
        martingale_pass,
        max_z_score,
        pass: buckets.iter().all(|b| b.pass),
        buckets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentRow {
    pub p: f64,
    pub n_steps: usize,
    pub moment: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub n_paths: usize,
    pub rows: Vec<MomentRow>,
    /// Largest factor between successive refinements, per `p`.
    pub max_drift_factor: Vec<(f64, f64)>,
    pub pass: bool,
}

/// Empirical `E^Q[(Z^Q_T)^p]` across time-step refinements, simulating under
/// the martingale counterpart with `selector`. Passes when no moment changes
/// by a factor 3 or more between successive refinements.
#[allow(clippy::too_many_arguments)]
pub fn moment_stability_check(
    spec: &UncertaintySpec,
    selector: &Selector,
    certs: &Certificates,
    p_list: &[f64],
    refinements: &[usize],
    n_paths: usize,
    seed: u64,
    mpr_residual_tol: f64,
) -> Result<MomentReport> {
    if !certs.bounded_or_elliptic() {
        return Err(Error::PreconditionNotCertified(
            "moment control needs a passing bounded-MPR or ellipticity certificate".into(),
        ));
    }
    let q = spec.martingale_version();
    let mut rows = Vec::new();
    for &n_steps in refinements {
        let log_z =
            terminal_log_densities(&q, spec, selector, n_paths, n_steps, seed, Direction::QtoP, mpr_residual_tol)?;
        for &p in p_list {
            let zp: Vec<f64> = log_z.iter().map(|l| (p * l).exp()).collect();
            let (moment, se) = mean_se(&zp);
            rows.push(MomentRow { p, n_steps, moment, se });
        }
    }
    let mut max_drift_factor = Vec::new();
    let mut pass = rows.iter().all(|r| r.moment.is_finite());
    for &p in p_list {
        let series: Vec<f64> = rows.iter().filter(|r| r.p == p).map(|r| r.moment).collect();
        let worst = series
            .windows(2)
            .map(|w| (w[1] / w[0]).max(w[0] / w[1]))
            .fold(1.0, f64::max);
        pass &= worst < 3.0;
        max_drift_factor.push((p, worst));
    }
    Ok(MomentReport {
        n_paths,
        rows,
        max_drift_factor,
        pass,
    })
}
