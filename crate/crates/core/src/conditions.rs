//! Sampling-based certifiers for the structural conditions on an uncertainty
//! set, the robust market price of risk, and the resulting theorem table.
//!
//! ```text
//! growth        ‖b‖² + ‖a‖ ≤ C (1 + sup_{s≤t} ‖ω(s)‖²)
//! convexity     {(b(f), a(f)) : f ∈ F} convex
//! MPR           b = a θ,   sup { ⟨θ, aθ⟩ : f ∈ F, ‖ω‖ < N } = C_N < ∞
//! MPR bounded   sup ⟨θ, aθ⟩ < ∞ globally
//! ellipticity   1/K ≤ ⟨ξ, a ξ⟩ ≤ K  for unit ξ
//! ```
//!
//! Certificates are statistical: each reports the budget it used and a
//! witness for its extreme value. All samples draw from per-index random
//! streams, so results do not depend on the thread count.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ThetaSample, UncertaintySpec};
use crate::path::{Path, PathView};
use crate::rng::{self, Purpose};
use crate::value::UtilitySpec;

/// Default residual tolerance for `‖aθ − b‖`.
pub const MPR_RESIDUAL_TOL: f64 = 1e-9;

/// Time grid used for sampled prefixes.
const PREFIX_STEPS: usize = 32;

/// Fractional lattice offset; irrational, so no lattice point hits the origin.
const LATTICE_OFFSET: f64 = 0.618_033_988_749_894_8;

/// Number of sampling refinements in [`certify_mpr`]; each is 16× finer.
const MPR_REFINEMENTS: usize = 3;

/// A sampled evaluation point, summarized.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplePoint {
    pub param: Vec<f64>,
    pub t: f64,
    pub terminal: Vec<f64>,
    pub sup_norm: f64,
}

impl SamplePoint {
    fn new(param: &[f64], t: f64, prefix: &PathView<'_>) -> Self {
        SamplePoint {
            param: param.to_vec(),
            t,
            terminal: prefix.terminal().to_vec(),
            sup_norm: prefix.sup_norm(),
        }
    }
}

fn uniform_param<R: Rng>(spec: &UncertaintySpec, rng: &mut R) -> Vec<f64> {
    let b = &spec.param_box;
    b.lower()
        .iter()
        .zip(b.upper())
        .map(|(lo, hi)| if hi > lo { rng.random_range(*lo..=*hi) } else { *lo })
        .collect()
}

/// A driverless random walk from `x0` with `k` steps, rescaled so that its
/// excursion is a uniform fraction of `scale`.
fn random_prefix<R: Rng>(x0: &[f64], dt: f64, k: usize, scale: f64, rng: &mut R) -> Path {
    let d = x0.len();
    let amp = scale * rng.random::<f64>();
    let step = amp / (k.max(1) as f64).sqrt();
    let mut path = Path::start(x0, dt);
    let mut x = x0.to_vec();
    for _ in 0..k {
        for xi in x.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *xi += step * z;
        }
        path.push(&x);
    }
    debug_assert_eq!(path.data.len(), (k + 1) * d);
    path
}

/// A straight-line prefix from `x0` to `x` over `k ≥ 1` steps.
fn line_prefix(x0: &[f64], x: &[f64], dt: f64, k: usize) -> Path {
    let mut path = Path::start(x0, dt);
    for s in 1..=k {
        let w = s as f64 / k as f64;
        let p: Vec<f64> = x0.iter().zip(x).map(|(a, b)| a + w * (b - a)).collect();
        path.push(&p);
    }
    path
}

fn prefix_grid(spec: &UncertaintySpec) -> f64 {
    spec.horizon / PREFIX_STEPS as f64
}

/// `max(a, b)` on `(value, index)` pairs with the lower index winning ties.
fn argmax_first<T>(items: impl IntoIterator<Item = (f64, T)>) -> Option<(f64, T)> {
    let mut best: Option<(f64, T)> = None;
    for (v, w) in items {
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, w));
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthCertificate {
    pub estimated_c: f64,
    pub sample_budget: usize,
    pub worst_point: Option<SamplePoint>,
    pub declared_c: Option<f64>,
    /// The estimate exceeds the declared constant.
    pub violated: bool,
    /// Samples skipped because evaluation failed (non-PSD output).
    pub eval_failures: usize,
}

impl GrowthCertificate {
    pub fn passes(&self) -> bool {
        self.estimated_c.is_finite() && !self.violated
    }
}

/// Estimate the linear-growth constant from `budget` random points plus a
/// sweep of the parameter corners at `(t, ω) = (0, x₀)`.
pub fn certify_growth(spec: &UncertaintySpec, budget: usize, seed: u64) -> Result<GrowthCertificate> {
    if budget < 100 {
        return Err(Error::Domain(format!("growth budget must be >= 100, got {budget}")));
    }
    let dt = prefix_grid(spec);
    let reach = 10.0 * (1.0 + linalg::norm(&spec.x0));
    let d = spec.dim();
    let ratio = |f: &[f64], t: f64, path: &Path| -> Option<(f64, SamplePoint)> {
        let view = path.view();
        let mut b = vec![0.0; d];
        let mut a = vec![0.0; d * d];
        spec.eval_into(f, t, &view, &mut b, &mut a).ok()?;
        let sup = view.sup_norm();
        let r = (linalg::dot(&b, &b) + linalg::frobenius(&a)) / (1.0 + sup * sup);
        Some((r, SamplePoint::new(f, t, &view)))
    };
    let start = spec.start_path(dt);
    let corners = spec.param_box.corners();
    let mut results: Vec<Option<(f64, SamplePoint)>> = corners.iter().map(|f| ratio(f, 0.0, &start)).collect();
    let sampled: Vec<Option<(f64, SamplePoint)>> = (0..budget)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, Purpose::Growth, i as u64);
            let f = uniform_param(spec, &mut rng);
            let k = rng.random_range(0..=PREFIX_STEPS);
            let path = random_prefix(&spec.x0, dt, k, reach, &mut rng);
            ratio(&f, k as f64 * dt, &path)
        })
        .collect();
    results.extend(sampled);
    let eval_failures = results.iter().filter(|r| r.is_none()).count();
    let best = argmax_first(results.into_iter().flatten());
    let (estimated_c, worst_point) = match best {
        Some((c, p)) => (c, Some(p)),
        None => (0.0, None),
    };
    let declared_c = spec.coeffs.declared_growth_const;
    Ok(GrowthCertificate {
        estimated_c,
        sample_budget: budget + corners.len(),
        worst_point,
        declared_c,
        violated: declared_c.is_some_and(|c| estimated_c > c),
        eval_failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityWitness {
    pub param_a: Vec<f64>,
    pub param_b: Vec<f64>,
    pub midpoint_drift: Vec<f64>,
    pub midpoint_diffusion: Vec<f64>,
    /// Distance from the midpoint to the nearest sampled value.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityCertificate {
    pub passes: bool,
    pub max_distance: f64,
    pub tolerance: f64,
    pub pairs_checked: usize,
    pub witness: Option<ConvexityWitness>,
}

fn theta_distance(b: &[f64], a: &[f64], s: &ThetaSample) -> f64 {
    let db: f64 = b.iter().zip(&s.drift).map(|(x, y)| (x - y) * (x - y)).sum();
    let da: f64 = a.iter().zip(&s.diffusion).map(|(x, y)| (x - y) * (x - y)).sum();
    (db + da).sqrt()
}

/// Compass search over `F` for the image point closest to `(b, a)`.
fn nearest_in_image(
    spec: &UncertaintySpec,
    t: f64,
    prefix: &PathView<'_>,
    start: &[f64],
    b: &[f64],
    a: &[f64],
) -> f64 {
    let d = spec.dim();
    let mut db = vec![0.0; d];
    let mut da = vec![0.0; d * d];
    let mut dist = |f: &[f64]| -> f64 {
        match spec.eval_into(f, t, prefix, &mut db, &mut da) {
            Ok(()) => {
                let s: f64 = b.iter().zip(&db).chain(a.iter().zip(&da)).map(|(x, y)| (x - y) * (x - y)).sum();
                s.sqrt()
            }
            Err(_) => f64::INFINITY,
        }
    };
    let pbox = &spec.param_box;
    let widths: Vec<f64> = pbox.lower().iter().zip(pbox.upper()).map(|(l, h)| h - l).collect();
    let mut f = start.to_vec();
    let mut best = dist(&f);
    let mut step = 0.25;
    while step > 1e-12 && best > 0.0 {
        let mut improved = false;
        for i in 0..f.len() {
            if widths[i] == 0.0 {
                continue;
            }
            for sign in [1.0, -1.0] {
                let mut g = f.clone();
                g[i] += sign * step * widths[i];
                pbox.clamp(&mut g);
                let v = dist(&g);
                if v < best {
                    best = v;
                    f = g;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

/// Midpoint test on the image of the parameter grid.
///
/// Midpoints of pairs from the `g`-point grid are first compared against the
/// image of the `2g − 1`-point grid, which contains every parameter midpoint,
/// so affine parameterizations pass exactly. Otherwise the distance to the
/// image is minimized by compass search over `F` from the nearest grid point.
pub fn certify_convexity(
    spec: &UncertaintySpec,
    t: f64,
    prefix: &PathView<'_>,
    grid_per_dim: usize,
    midpoint_tol: f64,
) -> Result<ConvexityCertificate> {
    if grid_per_dim < 3 {
        return Err(Error::Domain(format!("convexity grid must be >= 3 per dim, got {grid_per_dim}")));
    }
    let coarse = spec.sample_theta_set(t, prefix, grid_per_dim)?;
    let fine = spec.sample_theta_set(t, prefix, 2 * grid_per_dim - 1)?;
    let n = coarse.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    let distances: Vec<(f64, ConvexityWitness)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (p, q) = (&coarse[i], &coarse[j]);
            let mb: Vec<f64> = p.drift.iter().zip(&q.drift).map(|(x, y)| 0.5 * (x + y)).collect();
            let ma: Vec<f64> = p.diffusion.iter().zip(&q.diffusion).map(|(x, y)| 0.5 * (x + y)).collect();
            let (start, coarse_dist) = argmax_first(fine.iter().map(|s| (-theta_distance(&mb, &ma, s), s)))
                .map(|(d, s)| (s, -d))
                .expect("grid is non-empty");
            let dist = if coarse_dist <= midpoint_tol {
                coarse_dist
            } else {
                nearest_in_image(spec, t, prefix, &start.param, &mb, &ma).min(coarse_dist)
            };
            (
                dist,
                ConvexityWitness {
                    param_a: p.param.clone(),
                    param_b: q.param.clone(),
                    midpoint_drift: mb,
                    midpoint_diffusion: ma,
                    distance: dist,
                },
            )
        })
        .collect();
    let worst = argmax_first(distances);
    let max_distance = worst.as_ref().map_or(0.0, |w| w.0);
    let passes = max_distance <= midpoint_tol;
    Ok(ConvexityCertificate {
        passes,
        max_distance,
        tolerance: midpoint_tol,
        pairs_checked: pairs.len(),
        witness: if passes { None } else { worst.map(|w| w.1) },
    })
}

/// Minimum-norm solution of `a θ = b` at one point; returns `(θ, ‖aθ − b‖)`.
pub fn solve_mpr(
    spec: &UncertaintySpec,
    f: &[f64],
    t: f64,
    prefix: &PathView<'_>,
    mpr_residual_tol: f64,
) -> Result<(Vec<f64>, f64)> {
    let s = spec.eval_coefficients(f, t, prefix)?;
    mpr_from_sample(&s.drift, &s.diffusion, spec.dim(), mpr_residual_tol, || {
        format!("f = {f:?}, t = {t}, terminal = {:?}", prefix.terminal())
    })
}

pub(crate) fn mpr_from_sample(
    drift: &[f64],
    diffusion: &[f64],
    d: usize,
    tol: f64,
    location: impl FnOnce() -> String,
) -> Result<(Vec<f64>, f64)> {
    let (theta, residual) = linalg::pinv_solve(diffusion, drift, d);
    if !(residual <= tol) {
        return Err(Error::MprInfeasible {
            location: location(),
            residual,
            tolerance: tol,
        });
    }
    Ok((theta, residual))
}

/// Local bounds at one level across refinements.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MprLevel {
    pub level: f64,
    /// `C_N` per refinement, coarse to fine.
    pub bounds: Vec<f64>,
    /// Pool samples inside the level, per refinement.
    pub samples: Vec<usize>,
    /// `C_N` growth over the last refinement, when both are positive.
    pub last_ratio: Option<f64>,
    pub divergent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MprResult {
    pub feasible: bool,
    pub residual_sup: f64,
    pub tolerance: f64,
    /// First point where `b ∉ range(a)`, if any.
    pub infeasible_at: Option<String>,
    /// `(N, C_N)` at the finest refinement.
    pub local_bounds: Vec<(f64, f64)>,
    pub levels: Vec<MprLevel>,
    /// Unconfined `sup ⟨θ, aθ⟩` per refinement.
    pub unconfined: Vec<f64>,
    /// Set when the unconfined estimate is stable to 1% across the last
    /// refinement.
    pub global_bound: Option<f64>,
    /// Some level grows by more than a factor 2 across the last refinement.
    pub divergent: bool,
    /// Spatial samples per scale, per refinement.
    pub refinements: Vec<usize>,
    pub sample_budget: usize,
}

impl MprResult {
    /// Feasible with locally bounded `⟨θ, aθ⟩`.
    pub fn passes(&self) -> bool {
        self.feasible && !self.divergent
    }

    pub fn bounded(&self) -> bool {
        self.feasible && self.global_bound.is_some()
    }

    pub fn require_feasible(&self) -> Result<()> {
        match &self.infeasible_at {
            None => Ok(()),
            Some(loc) => Err(Error::MprInfeasible {
                location: loc.clone(),
                residual: self.residual_sup,
                tolerance: self.tolerance,
            }),
        }
    }
}

struct MprSample {
    sup_norm: f64,
    energy: f64,
    residual: f64,
    infeasible: Option<String>,
}

/// Terminal points for one scale: an offset lattice on `(−r, r)` for `d = 1`,
/// seeded uniform points in the ball otherwise.
fn scale_points(d: usize, radius: f64, m: usize, seed: u64, tag: u64) -> Vec<Vec<f64>> {
    if d == 1 {
        return (0..m)
            .map(|j| vec![-radius + (j as f64 + LATTICE_OFFSET) * 2.0 * radius / m as f64])
            .collect();
    }
    (0..m)
        .map(|j| {
            let mut rng = rng::stream(seed, Purpose::Mpr, (tag << 32) | j as u64);
            let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let n = linalg::norm(&dir).max(1e-300);
            let r = radius * rng.random::<f64>().powf(1.0 / d as f64) * (1.0 - 1e-12);
            dir.iter().map(|v| v * r / n).collect()
        })
        .collect()
}

/// Estimate `C_N = sup ⟨θ, aθ⟩` over prefixes confined to `‖ω‖ < N`.
///
/// One pool of straight-line prefixes ending on terminal points drawn for
/// each level and for an unconfined radius `10 (1 + ‖x₀‖)` is evaluated on
/// the `3^k` parameter grid; `C_N` maximizes over the pool members inside
/// the level, which makes it nondecreasing in `N`. The pool is refined
/// 16-fold twice and a level is divergent when `C_N` more than doubles
/// over the last refinement.
pub fn certify_mpr(
    spec: &UncertaintySpec,
    levels: &[f64],
    budget: usize,
    seed: u64,
    mpr_residual_tol: f64,
) -> Result<MprResult> {
    if levels.is_empty() || levels.windows(2).any(|w| !(w[0] < w[1])) || !(levels[0] > 0.0) {
        return Err(Error::Domain(format!("levels must be positive and increasing, got {levels:?}")));
    }
    if budget < 100 {
        return Err(Error::Domain(format!("MPR budget must be >= 100, got {budget}")));
    }
    let d = spec.dim();
    let dt = prefix_grid(spec);
    let params = spec.param_box.grid(3);
    let unconfined_radius = levels[levels.len() - 1].max(10.0 * (1.0 + linalg::norm(&spec.x0)));
    let mut radii = levels.to_vec();
    radii.push(unconfined_radius);

    let refinements: Vec<usize> = (0..MPR_REFINEMENTS)
        .map(|r| (budget / 16usize.pow((MPR_REFINEMENTS - 1 - r) as u32)).max(4))
        .collect();
    let mut per_level: Vec<Vec<(f64, usize)>> = vec![Vec::new(); levels.len()];
    let mut unconfined = Vec::new();
    let mut residual_sup: f64 = 0.0;
    let mut infeasible_at = None;
    let mut total = 0;

    for &m in &refinements {
        let points: Vec<Vec<f64>> = radii
            .iter()
            .enumerate()
            .flat_map(|(tag, &r)| scale_points(d, r, m, seed, tag as u64))
            .collect();
        total += points.len() * params.len();
        let samples: Vec<MprSample> = points
            .par_iter()
            .enumerate()
            .map(|(j, x)| {
                let k = 1 + (j * 7) % PREFIX_STEPS;
                let t = k as f64 * dt;
                let path = line_prefix(&spec.x0, x, dt, k);
                let view = path.view();
                let mut out = MprSample {
                    sup_norm: view.sup_norm(),
                    energy: 0.0,
                    residual: 0.0,
                    infeasible: None,
                };
                let mut b = vec![0.0; d];
                let mut a = vec![0.0; d * d];
                let mut at = vec![0.0; d];
                for f in &params {
                    if let Err(e) = spec.eval_into(f, t, &view, &mut b, &mut a) {
                        out.infeasible.get_or_insert_with(|| format!("{e} at f = {f:?}, terminal = {x:?}"));
                        continue;
                    }
                    let (theta, res) = linalg::pinv_solve(&a, &b, d);
                    out.residual = out.residual.max(res);
                    if !(res <= mpr_residual_tol) {
                        out.infeasible.get_or_insert_with(|| format!("f = {f:?}, t = {t}, terminal = {x:?}"));
                        continue;
                    }
                    linalg::mat_vec(&a, &theta, d, &mut at);
                    out.energy = out.energy.max(linalg::dot(&theta, &at));
                }
                out
            })
            .collect();
        for s in &samples {
            residual_sup = residual_sup.max(s.residual);
            if infeasible_at.is_none() {
                infeasible_at.clone_from(&s.infeasible);
            }
        }
        for (li, &n) in levels.iter().enumerate() {
            let inside = samples.iter().filter(|s| s.sup_norm < n);
            let (c, count) = inside.fold((0.0_f64, 0), |(c, k), s| (c.max(s.energy), k + 1));
            per_level[li].push((c, count));
        }
        unconfined.push(samples.iter().fold(0.0_f64, |c, s| c.max(s.energy)));
    }

    let ratio = |seq: &[f64]| -> Option<f64> {
        let (prev, last) = (seq[seq.len() - 2], seq[seq.len() - 1]);
        (prev > 0.0 && last > 0.0).then(|| last / prev)
    };
    let levels_out: Vec<MprLevel> = levels
        .iter()
        .zip(&per_level)
        .map(|(&level, rows)| {
            let bounds: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let last_ratio = ratio(&bounds);
            MprLevel {
                level,
                samples: rows.iter().map(|r| r.1).collect(),
                divergent: last_ratio.is_some_and(|q| q > 2.0),
                last_ratio,
                bounds,
            }
        })
        .collect();
    let divergent = levels_out.iter().any(|l| l.divergent);
    let (prev, last) = (unconfined[unconfined.len() - 2], unconfined[unconfined.len() - 1]);
    let stable = if prev == 0.0 { last == 0.0 } else { (last / prev - 1.0).abs() <= 0.01 };
    let global_bound = (stable && !divergent && last.is_finite()).then_some(last);
    Ok(MprResult {
        feasible: infeasible_at.is_none(),
        residual_sup,
        tolerance: mpr_residual_tol,
        infeasible_at,
        local_bounds: levels_out.iter().map(|l| (l.level, *l.bounds.last().unwrap())).collect(),
        levels: levels_out,
        unconfined,
        global_bound,
        divergent,
        refinements,
        sample_budget: total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleRange {
    pub scale: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EllipticityCertificate {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `max(λ_max, 1/λ_min)`; infinite when `λ_min ≤ 0`.
    pub k_estimate: f64,
    pub passes: bool,
    pub per_scale: Vec<ScaleRange>,
    pub witness_min: Option<SamplePoint>,
    pub sample_budget: usize,
}

/// Number of escalating path scales `10^k (1 + ‖x₀‖)`.
const ELLIPTICITY_SCALES: usize = 4;

/// Eigenvalue range of `a` over the parameter grid and random prefixes at
/// escalating scales; passes when `λ_min > 0` and neither end of the range
/// moves by more than a factor 2 from one scale to the next.
pub fn certify_ellipticity(spec: &UncertaintySpec, budget: usize, seed: u64) -> Result<EllipticityCertificate> {
    if budget < 100 {
        return Err(Error::Domain(format!("ellipticity budget must be >= 100, got {budget}")));
    }
    let d = spec.dim();
    let dt = prefix_grid(spec);
    let grid = spec.param_box.grid(3);
    let per_scale = budget.div_ceil(ELLIPTICITY_SCALES);
    let base = 1.0 + linalg::norm(&spec.x0);
    let start = spec.start_path(dt);
    let eval = |f: &[f64], t: f64, view: &PathView<'_>| -> Option<(f64, f64, SamplePoint)> {
        let mut b = vec![0.0; d];
        let mut a = vec![0.0; d * d];
        spec.eval_into(f, t, view, &mut b, &mut a).ok()?;
        let (lo, hi) = linalg::eigen_range(&a, d);
        Some((lo, hi, SamplePoint::new(f, t, view)))
    };
    let mut ranges = Vec::with_capacity(ELLIPTICITY_SCALES);
    let mut lambda_min = f64::INFINITY;
    let mut lambda_max = f64::NEG_INFINITY;
    let mut witness_min = None;
    let mut failed = false;
    for level in 0..ELLIPTICITY_SCALES {
        let scale = 10f64.powi(level as i32) * base;
        let mut results: Vec<Option<(f64, f64, SamplePoint)>> = if level == 0 {
            grid.iter().map(|f| eval(f, 0.0, &start.view())).collect()
        } else {
            Vec::new()
        };
        let sampled: Vec<Option<(f64, f64, SamplePoint)>> = (0..per_scale)
            .into_par_iter()
            .map(|i| {
                let idx = (level * per_scale + i) as u64;
                let mut rng = rng::stream(seed, Purpose::Ellipticity, idx);
                let f = if i < grid.len() { grid[i].clone() } else { uniform_param(spec, &mut rng) };
                let k = rng.random_range(1..=PREFIX_STEPS);
                let path = random_prefix(&spec.x0, dt, k, scale, &mut rng);
                eval(&f, k as f64 * dt, &path.view())
            })
            .collect();
        results.extend(sampled);
        failed |= results.iter().any(|r| r.is_none());
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (l, h, p) in results.into_iter().flatten() {
            if l < lambda_min {
                lambda_min = l;
                witness_min = Some(p);
            }
            lo = lo.min(l);
            hi = hi.max(h);
        }
        lambda_max = lambda_max.max(hi);
        ranges.push(ScaleRange {
            scale,
            lambda_min: lo,
            lambda_max: hi,
        });
    }
    // Exact zeros from a vanishing diffusion can come out as tiny negatives.
    if lambda_min.abs() < 1e-14 {
        lambda_min = 0.0;
    }
    let stable = ranges
        .windows(2)
        .all(|w| w[1].lambda_max <= 2.0 * w[0].lambda_max && w[1].lambda_min >= 0.5 * w[0].lambda_min);
    let passes = !failed && lambda_min > 0.0 && lambda_max.is_finite() && stable;
    Ok(EllipticityCertificate {
        lambda_min,
        lambda_max,
        k_estimate: if lambda_min > 0.0 { lambda_max.max(1.0 / lambda_min) } else { f64::INFINITY },
        passes,
        per_scale: ranges,
        witness_min,
        sample_budget: per_scale * ELLIPTICITY_SCALES + grid.len(),
    })
}

/// Outcome of one hypothesis in the theorem table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Not computable; taken as given.
    Assumed,
    /// No certificate was supplied.
    Missing,
}

impl Status {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    fn holds(self) -> bool {
        matches!(self, Status::Pass | Status::Assumed)
    }
}

/// All certificates for one spec; `None` entries count as not certified.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Certificates {
    pub growth: Option<GrowthCertificate>,
    pub convexity: Option<ConvexityCertificate>,
    pub mpr: Option<MprResult>,
    pub ellipticity: Option<EllipticityCertificate>,
}

impl Certificates {
    pub fn growth_status(&self) -> Status {
        self.growth.as_ref().map_or(Status::Missing, |c| Status::from_bool(c.passes()))
    }

    pub fn convexity_status(&self) -> Status {
        self.convexity.as_ref().map_or(Status::Missing, |c| Status::from_bool(c.passes))
    }

    pub fn mpr_status(&self) -> Status {
        self.mpr.as_ref().map_or(Status::Missing, |c| Status::from_bool(c.passes()))
    }

    pub fn mpr_bounded_status(&self) -> Status {
        self.mpr.as_ref().map_or(Status::Missing, |c| Status::from_bool(c.bounded()))
    }

    pub fn ellipticity_status(&self) -> Status {
        self.ellipticity.as_ref().map_or(Status::Missing, |c| Status::from_bool(c.passes))
    }

    /// The integrability hypothesis used by the moment check.
    pub fn bounded_or_elliptic(&self) -> bool {
        self.mpr_bounded_status() == Status::Pass || self.ellipticity_status() == Status::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hypothesis {
    pub name: &'static str,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Applicability {
    pub applicable: bool,
    pub hypotheses: Vec<Hypothesis>,
}

impl Applicability {
    fn from(hypotheses: Vec<Hypothesis>) -> Self {
        Applicability {
            applicable: hypotheses.iter().all(|h| h.status.holds()),
            hypotheses,
        }
    }

    pub fn failed(&self) -> Vec<&'static str> {
        self.hypotheses.iter().filter(|h| !h.status.holds()).map(|h| h.name).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremApplicability {
    pub utility: String,
    /// Conjugacy for utilities bounded from below.
    pub conjugacy_bounded: Applicability,
    /// Duality and optimal portfolios for power `p ∈ (0, 1)` and exponential.
    pub main_pos_power_exp: Applicability,
    /// Duality for power `p < 0` and log, through generalized portfolios.
    pub main_neg_power_log: Applicability,
}

impl TheoremApplicability {
    /// Whether any theorem covering this utility applies.
    pub fn any(&self) -> bool {
        self.conjugacy_bounded.applicable || self.main_pos_power_exp.applicable || self.main_neg_power_log.applicable
    }
}

/// Evaluate the hypothesis table of the duality theorems.
pub fn classify(utility: &UtilitySpec, certs: &Certificates) -> TheoremApplicability {
    let h = |name, status| Hypothesis { name, status };
    let base = || {
        vec![
            h("growth", certs.growth_status()),
            h("continuity", Status::Assumed),
            h("convexity", certs.convexity_status()),
            h("mpr", certs.mpr_status()),
        ]
    };
    let alt = if certs.mpr_bounded_status() == Status::Pass || certs.ellipticity_status() == Status::Pass {
        Status::Pass
    } else if certs.mpr.is_none() && certs.ellipticity.is_none() {
        Status::Missing
    } else {
        Status::Fail
    };
    let (pos_class, neg_class, needs_alt) = match *utility {
        UtilitySpec::Exponential { .. } => (true, false, false),
        UtilitySpec::Power { p } if p > 0.0 => (true, false, true),
        UtilitySpec::Power { .. } => (false, true, false),
        UtilitySpec::Log => (false, true, true),
    };

    let mut conj = base();
    conj.push(h("utility_bounded_below", Status::from_bool(utility.bounded_below())));
    conj.push(h("finite_value", Status::Assumed));

    let mut pos = base();
    pos.push(h("utility_power_pos_or_exponential", Status::from_bool(pos_class)));
    if pos_class && needs_alt {
        pos.push(h("mpr_bounded_or_ellipticity", alt));
    }

    let mut neg = base();
    neg.push(h("medial_limit", Status::Assumed));
    neg.push(h("utility_power_neg_or_log", Status::from_bool(neg_class)));
    if neg_class && needs_alt {
        neg.push(h("mpr_bounded_or_ellipticity", alt));
    }

    TheoremApplicability {
        utility: utility.to_string(),
        conjugacy_bounded: Applicability::from(conj),
        main_pos_power_exp: Applicability::from(pos),
        main_neg_power_log: Applicability::from(neg),
    }
}

/// Budgets and tolerances for [`certify_all`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifyOptions {
    pub budget: usize,
    pub seed: u64,
    /// MPR levels `N`; defaults to `{1/4, 1/2, 1, 2, 4} · (1 + ‖x₀‖)`.
    pub levels: Option<Vec<f64>>,
    pub mpr_residual_tol: f64,
    pub convexity_grid: usize,
    pub convexity_tol: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            budget: 4096,
            seed: 42,
            levels: None,
            mpr_residual_tol: MPR_RESIDUAL_TOL,
            convexity_grid: 3,
            convexity_tol: 1e-7,
        }
    }
}

impl CertifyOptions {
    pub fn levels_for(&self, spec: &UncertaintySpec) -> Vec<f64> {
        self.levels.clone().unwrap_or_else(|| {
            let s = 1.0 + linalg::norm(&spec.x0);
            [0.25, 0.5, 1.0, 2.0, 4.0].iter().map(|m| m * s).collect()
        })
    }
}

/// Run every certifier. Convexity is tested at `(0, x₀)` and at the end of
/// four random prefixes; the worst case is kept.
pub fn certify_all(spec: &UncertaintySpec, opts: &CertifyOptions) -> Result<Certificates> {
    let dt = prefix_grid(spec);
    let mut prefixes = vec![(0.0, spec.start_path(dt))];
    let reach = 2.0 * (1.0 + linalg::norm(&spec.x0));
    for i in 0..4u64 {
        let mut rng = rng::stream(opts.seed, Purpose::Growth, u64::MAX - i);
        let k = rng.random_range(1..=PREFIX_STEPS);
        prefixes.push((k as f64 * dt, random_prefix(&spec.x0, dt, k, reach, &mut rng)));
    }
    let mut convexity: Option<ConvexityCertificate> = None;
    for (t, p) in &prefixes {
        let c = certify_convexity(spec, *t, &p.view(), opts.convexity_grid, opts.convexity_tol)?;
        if convexity.as_ref().is_none_or(|best| c.max_distance > best.max_distance) {
            convexity = Some(c);
        }
    }
    Ok(Certificates {
        growth: Some(certify_growth(spec, opts.budget, opts.seed)?),
        convexity,
        mpr: Some(certify_mpr(
            spec,
            &opts.levels_for(spec),
            opts.budget,
            opts.seed,
            opts.mpr_residual_tol,
        )?),
        ellipticity: Some(certify_ellipticity(spec, opts.budget, opts.seed)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, Builtin, CoefficientField, DelayParams, GammaTable, ParameterBox, Structure};
    use proptest::prelude::*;

    fn gbm() -> UncertaintySpec {
        builtin(Builtin::GbmInterval { b: [0.05, 0.1], a: [0.04, 0.09] }, 1.0, vec![1.0]).unwrap()
    }

    fn zero_spec() -> UncertaintySpec {
        let field = CoefficientField::from_fn(1, Structure::Constant, |_, _, _, b, a| {
            b[0] = 0.0;
            a[0] = 0.0;
        });
        UncertaintySpec::new("zero", ParameterBox::new(vec![0.0], vec![1.0]).unwrap(), field, 1.0, vec![0.0]).unwrap()
    }

    fn delay() -> UncertaintySpec {
        builtin(
            Builtin::Delay(DelayParams {
                r: [0.0, 0.02],
                lambda: [0.0, 1.0],
                sigma2: [0.04, 0.09],
                tau: 0.5,
                gamma: GammaTable::positive_part(0.1),
            }),
            1.0,
            vec![1.0],
        )
        .unwrap()
    }

    #[test]
    fn growth_constants() {
        let z = certify_growth(&zero_spec(), 200, 1).unwrap();
        assert_eq!(z.estimated_c, 0.0);
        let g = certify_growth(&gbm(), 500, 1).unwrap();
        // Constant coefficients: the ratio peaks where the prefix stays at x₀.
        let oracle = (0.1f64.powi(2) + 0.09) / (1.0 + 1.0);
        assert!((g.estimated_c - oracle).abs() < 1e-15, "{}", g.estimated_c);
        let r = certify_growth(&builtin(Builtin::Remark210, 1.0, vec![1.0]).unwrap(), 2000, 1).unwrap();
        assert!(r.estimated_c.is_finite() && r.estimated_c < 10.0);
    }

    #[test]
    fn declared_growth_violation_has_witness() {
        let mut spec = gbm();
        spec.coeffs.declared_growth_const = Some(0.01);
        let c = certify_growth(&spec, 200, 3).unwrap();
        assert!(c.violated);
        assert!(c.worst_point.is_some());
    }

    #[test]
    fn convexity_cases() {
        let spec = gbm();
        let p = spec.start_path(0.1);
        assert!(certify_convexity(&spec, 0.0, &p.view(), 3, 1e-12).unwrap().passes);

        let field = CoefficientField::from_fn(1, Structure::Constant, |f, _, _, b, a| {
            b[0] = (std::f64::consts::PI * f[0]).cos();
            a[0] = (std::f64::consts::PI * f[0]).sin() + 1.0;
        });
        let arc = UncertaintySpec::new("arc", ParameterBox::new(vec![0.0], vec![1.0]).unwrap(), field, 1.0, vec![0.0])
            .unwrap();
        let c = certify_convexity(&arc, 0.0, &arc.start_path(0.1).view(), 5, 1e-6).unwrap();
        assert!(!c.passes);
        let w = c.witness.unwrap();
        // Endpoint midpoint (0, 1) sits at distance 1 from every arc point.
        assert_eq!((w.param_a[0], w.param_b[0]), (0.0, 1.0));
        assert!((w.distance - 1.0).abs() < 1e-12);

        let single =
            builtin(Builtin::GbmInterval { b: [0.05, 0.05], a: [0.09, 0.09] }, 1.0, vec![1.0]).unwrap();
        assert!(certify_convexity(&single, 0.0, &single.start_path(0.1).view(), 3, 0.0).unwrap().passes);
    }

    #[test]
    fn mpr_solves() {
        let field = CoefficientField::from_fn(2, Structure::Constant, |_, _, _, b, a| {
            b.copy_from_slice(&[1.0, 2.0]);
            a.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        });
        let spec =
            UncertaintySpec::new("id", ParameterBox::new(vec![0.0], vec![0.0]).unwrap(), field, 1.0, vec![0.0, 0.0])
                .unwrap();
        let (theta, res) = solve_mpr(&spec, &[0.0], 0.0, &spec.start_path(0.1).view(), 1e-9).unwrap();
        assert_eq!(theta, vec![1.0, 2.0]);
        assert_eq!(res, 0.0);

        let r = builtin(Builtin::Remark210, 1.0, vec![4.0]).unwrap();
        let (theta, res) = solve_mpr(&r, &[1.0, 1.0], 0.0, &r.start_path(0.1).view(), 1e-9).unwrap();
        assert!((theta[0] - 0.25).abs() < 1e-15);
        assert!(res < 1e-15);

        let field = CoefficientField::from_fn(1, Structure::Constant, |_, _, _, b, a| {
            b[0] = 1.0;
            a[0] = 0.0;
        });
        let bad =
            UncertaintySpec::new("bad", ParameterBox::new(vec![0.0], vec![0.0]).unwrap(), field, 1.0, vec![0.0])
                .unwrap();
        assert!(matches!(
            solve_mpr(&bad, &[0.0], 0.0, &bad.start_path(0.1).view(), 1e-9),
            Err(Error::MprInfeasible { .. })
        ));
        let res = certify_mpr(&bad, &[1.0], 256, 1, 1e-9).unwrap();
        assert!(!res.feasible);
        assert!(res.require_feasible().is_err());
    }

    #[test]
    fn mpr_global_bound_for_intervals() {
        let res = certify_mpr(&gbm(), &[1.0, 2.0, 4.0], 1024, 7, MPR_RESIDUAL_TOL).unwrap();
        // Corner oracle: max over the four corners of b²/a.
        let oracle = [(0.05f64, 0.04f64), (0.05, 0.09), (0.1, 0.04), (0.1, 0.09)]
            .iter()
            .map(|(b, a)| b * b / a)
            .fold(0.0, f64::max);
        assert!((res.global_bound.unwrap() - oracle).abs() < 1e-12);
        assert!(res.feasible && !res.divergent);
        // x₀ = 1 lies outside the level N = 1, so only the larger levels see samples.
        assert_eq!(res.levels[0].samples, vec![0, 0, 0]);
        assert!(res.levels[1].samples[0] > 0);
    }

    #[test]
    fn remark_local_bounds_diverge() {
        let spec = builtin(Builtin::Remark210, 1.0, vec![0.1]).unwrap();
        let res = certify_mpr(&spec, &[0.25, 0.5, 1.0], 4096, 42, MPR_RESIDUAL_TOL).unwrap();
        assert!(res.feasible);
        assert!(res.divergent);
        assert!(res.global_bound.is_none());
        for l in &res.levels {
            assert!(l.last_ratio.unwrap() > 2.0, "{l:?}");
        }
        let z = certify_mpr(&zero_spec(), &[1.0, 2.0], 256, 1, MPR_RESIDUAL_TOL).unwrap();
        assert!(z.local_bounds.iter().all(|(_, c)| *c == 0.0));
        assert_eq!(z.global_bound, Some(0.0));
    }

    #[test]
    fn ellipticity_cases() {
        let e = certify_ellipticity(&delay(), 400, 5).unwrap();
        assert_eq!((e.lambda_min, e.lambda_max), (0.04, 0.09));
        assert!(e.passes);
        let s = builtin(Builtin::GbmScaled { b_bar: 0.1, a_bar: 0.09 }, 1.0, vec![1.0]).unwrap();
        let e = certify_ellipticity(&s, 400, 5).unwrap();
        assert_eq!(e.lambda_min, 0.0);
        assert!(!e.passes);
        let field = CoefficientField::from_fn(2, Structure::Constant, |_, _, _, b, a| {
            b.fill(0.0);
            a.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        });
        let id = UncertaintySpec::new("id", ParameterBox::new(vec![0.0], vec![1.0]).unwrap(), field, 1.0, vec![0.0, 0.0])
            .unwrap();
        let e = certify_ellipticity(&id, 100, 5).unwrap();
        assert_eq!((e.lambda_min, e.lambda_max), (1.0, 1.0));
        assert!(e.passes);
    }

    #[test]
    fn classification_table() {
        let opts = CertifyOptions { budget: 512, ..Default::default() };
        let g = certify_all(&gbm(), &opts).unwrap();
        let t = classify(&UtilitySpec::Log, &g);
        assert!(t.main_neg_power_log.applicable);
        assert!(!t.conjugacy_bounded.applicable);
        assert!(!t.main_pos_power_exp.applicable);

        let r = builtin(Builtin::Remark210, 1.0, vec![0.1]).unwrap();
        let rc = certify_all(&r, &CertifyOptions { budget: 4096, ..Default::default() }).unwrap();
        for u in [UtilitySpec::Log, UtilitySpec::Power { p: 0.5 }, UtilitySpec::Exponential { lambda: 1.0 }] {
            assert!(!classify(&u, &rc).any(), "{u}");
        }

        let dc = certify_all(&delay(), &opts).unwrap();
        let t = classify(&UtilitySpec::Power { p: 0.5 }, &dc);
        assert!(t.main_pos_power_exp.applicable, "{:?}", t.main_pos_power_exp.failed());
    }

    fn arb_certs() -> impl Strategy<Value = (bool, bool, bool, bool, bool)> {
        (any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>())
    }

    fn synth(flags: (bool, bool, bool, bool, bool)) -> Certificates {
        let (growth, conv, mpr, bounded, ell) = flags;
        Certificates {
            growth: growth.then_some(GrowthCertificate {
                estimated_c: 1.0,
                sample_budget: 100,
                worst_point: None,
                declared_c: None,
                violated: false,
                eval_failures: 0,
            }),
            convexity: conv.then_some(ConvexityCertificate {
                passes: true,
                max_distance: 0.0,
                tolerance: 0.0,
                pairs_checked: 0,
                witness: None,
            }),
            mpr: mpr.then(|| MprResult {
                feasible: true,
                residual_sup: 0.0,
                tolerance: 1e-9,
                infeasible_at: None,
                local_bounds: vec![],
                levels: vec![],
                unconfined: vec![],
                global_bound: bounded.then_some(1.0),
                divergent: false,
                refinements: vec![],
                sample_budget: 0,
            }),
            ellipticity: ell.then(|| EllipticityCertificate {
                lambda_min: 1.0,
                lambda_max: 1.0,
                k_estimate: 1.0,
                passes: true,
                per_scale: vec![],
                witness_min: None,
                sample_budget: 0,
            }),
        }
    }

    proptest! {
        #[test]
        fn classify_is_monotone(base in arb_certs(), extra in 0usize..5, p in prop_oneof![-2.0f64..-0.1, 0.1f64..0.9]) {
            let mut more = base;
            match extra {
                0 => more.0 = true,
                1 => more.1 = true,
                2 => more.2 = true,
                3 => { more.2 = true; more.3 = true; }
                _ => more.4 = true,
            }
            for u in [UtilitySpec::Log, UtilitySpec::Power { p }, UtilitySpec::Exponential { lambda: 1.0 }] {
                let a = classify(&u, &synth(base));
                let b = classify(&u, &synth(more));
                prop_assert!(!a.conjugacy_bounded.applicable || b.conjugacy_bounded.applicable);
                prop_assert!(!a.main_pos_power_exp.applicable || b.main_pos_power_exp.applicable);
                prop_assert!(!a.main_neg_power_log.applicable || b.main_neg_power_log.applicable);
            }
        }

        #[test]
        fn mpr_residual_is_rotation_invariant(
            angle in 0.0f64..std::f64::consts::TAU,
            l1 in 0.1f64..3.0, l2 in 0.1f64..3.0, c in -1.0f64..1.0,
            b1 in -2.0f64..2.0, b2 in -2.0f64..2.0,
        ) {
            let off = c * (l1 * l2).sqrt();
            let a = [l1, off, off, l2];
            let b = [b1, b2];
            let (cs, sn) = (angle.cos(), angle.sin());
            let r = [cs, -sn, sn, cs];
            // a' = R a Rᵀ, b' = R b
            let mut ra = [0.0; 4];
            for i in 0..2 { for j in 0..2 {
                ra[i * 2 + j] = (0..2).flat_map(|k| (0..2).map(move |l| (k, l)))
                    .map(|(k, l)| r[i * 2 + k] * a[k * 2 + l] * r[j * 2 + l]).sum();
            }}
            let mut rb = [0.0; 2];
            linalg::mat_vec(&r, &b, 2, &mut rb);
            let (_, r1) = linalg::pinv_solve(&a, &b, 2);
            let (_, r2) = linalg::pinv_solve(&ra, &rb, 2);
            prop_assert!((r1 - r2).abs() <= 1e-10);
        }

        #[test]
        fn elliptic_mpr_is_exact_inverse(l1 in 0.05f64..3.0, l2 in 0.05f64..3.0, c in -0.9f64..0.9, b1 in -2.0f64..2.0, b2 in -2.0f64..2.0) {
            let off = c * (l1 * l2).sqrt();
            let a = [l1, off, off, l2];
            let (theta, res) = linalg::pinv_solve(&a, &[b1, b2], 2);
            prop_assert!(res <= 1e-10);
            let det = l1 * l2 - off * off;
            let exact = [(l2 * b1 - off * b2) / det, (l1 * b2 - off * b1) / det];
            prop_assert!((theta[0] - exact[0]).abs() < 1e-8 * (1.0 + exact[0].abs()));
            prop_assert!((theta[1] - exact[1]).abs() < 1e-8 * (1.0 + exact[1].abs()));
        }

        #[test]
        fn local_bounds_nondecreasing(seed in 0u64..1000) {
            let spec = builtin(Builtin::default_nonlinear_diffusion(), 1.0, vec![0.3]).unwrap();
            let res = certify_mpr(&spec, &[0.5, 1.0, 2.0, 4.0], 128, seed, 1e-9).unwrap();
            for w in res.local_bounds.windows(2) {
                prop_assert!(w[0].1 <= w[1].1);
            }
        }
    }
}
