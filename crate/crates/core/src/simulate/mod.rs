//! Euler–Maruyama paths under parameter selectors and Girsanov densities.
//!
//! ```text
//! X_{k+1} = X_k + b(f_k, t_k, X_{0..k}) Δt + σ(f_k, t_k, X_{0..k}) √Δt ξ_k,   σ = a^{1/2}
//! ```
//!
//! Path `i` draws its normals from its own counter-based stream, so an
//! ensemble is bit-identical for any thread count.

mod density;
mod selector;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

pub use density::{
    girsanov_drift_check, moment_stability_check, stochastic_exponential, terminal_log_densities, DensityProcess,
    Direction, DriftBucket, GirsanovReport, MomentReport, MomentRow,
};
pub use selector::{AdversaryTable, Selector, SelectorKind};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Structure, UncertaintySpec};
use crate::path::{Path, PathView};
use crate::rng::{self, Purpose};

/// States beyond this magnitude abort the simulation.
pub const OVERFLOW_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathEnsemble {
    pub n_paths: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub dim: usize,
    pub n_params: usize,
    /// `n_paths × (n_steps + 1) × dim`, row-major.
    pub states: Vec<f64>,
    /// `n_paths × n_steps × n_params`, row-major.
    pub chosen_params: Vec<f64>,
    pub seed: u64,
    /// Selector outputs that had to be clamped into the parameter box.
    pub clamped: usize,
}

impl PathEnsemble {
    pub fn path(&self, i: usize) -> PathView<'_> {
        let len = (self.n_steps + 1) * self.dim;
        PathView::new(self.dt, self.dim, &self.states[i * len..(i + 1) * len])
    }

    pub fn state(&self, i: usize, k: usize) -> &[f64] {
        let base = (i * (self.n_steps + 1) + k) * self.dim;
        &self.states[base..base + self.dim]
    }

    pub fn params(&self, i: usize, k: usize) -> &[f64] {
        let base = (i * self.n_steps + k) * self.n_params;
        &self.chosen_params[base..base + self.n_params]
    }

    pub fn params_of_path(&self, i: usize) -> &[f64] {
        let len = self.n_steps * self.n_params;
        &self.chosen_params[i * len..(i + 1) * len]
    }
}

/// One simulated path with its parameter choices.
pub(crate) struct PathRun {
    pub path: Path,
    pub params: Vec<f64>,
    pub clamped: usize,
}

fn check_sizes(n_paths: usize, n_steps: usize) -> Result<()> {
    if n_paths == 0 || n_steps == 0 {
        return Err(Error::Domain(format!("need n_paths >= 1 and n_steps >= 1, got {n_paths} and {n_steps}")));
    }
    Ok(())
}

/// Simulate path `index`. For constant-structure specs the coefficients and
/// their square root are reused while the selector repeats itself.
pub(crate) fn run_path(
    spec: &UncertaintySpec,
    selector: &Selector,
    n_steps: usize,
    seed: u64,
    index: usize,
) -> Result<PathRun> {
    let d = spec.dim();
    let k_dims = spec.param_box.dims();
    let dt = spec.horizon / n_steps as f64;
    let sqrt_dt = dt.sqrt();
    let reuse = spec.structure() == Structure::Constant;
    let mut rng = rng::stream(seed, Purpose::Paths, index as u64);
    let mut path = Path {
        dt,
        dim: d,
        data: Vec::with_capacity((n_steps + 1) * d),
    };
    path.data.extend_from_slice(&spec.x0);
    let mut params = Vec::with_capacity(n_steps * k_dims);
    let mut f = vec![0.0; k_dims];
    let mut prev_f = vec![f64::NAN; k_dims];
    let mut b = vec![0.0; d];
    let mut a = vec![0.0; d * d];
    let mut sigma = vec![0.0; d * d];
    let mut xi = vec![0.0; d];
    let mut shock = vec![0.0; d];
    let mut x = spec.x0.clone();
    let mut clamped = 0;
    for k in 0..n_steps {
        let t = k as f64 * dt;
        let view = PathView::new(dt, d, &path.data);
        clamped += selector.select(spec, t, &view, &mut f) as usize;
        if !(reuse && f == prev_f) {
            spec.eval_into(&f, t, &view, &mut b, &mut a)?;
            if d == 1 {
                sigma[0] = a[0].max(0.0).sqrt();
            } else {
                sigma = linalg::psd_sqrt(&a, d);
            }
            prev_f.copy_from_slice(&f);
        }
        params.extend_from_slice(&f);
        for z in xi.iter_mut() {
            *z = StandardNormal.sample(&mut rng);
        }
        if d == 1 {
            shock[0] = sigma[0] * xi[0];
        } else {
            linalg::mat_vec(&sigma, &xi, d, &mut shock);
        }
        for j in 0..d {
            x[j] += b[j] * dt + shock[j] * sqrt_dt;
            if !(x[j].abs() <= OVERFLOW_LIMIT) {
                return Err(Error::NumericOverflow { path: index, step: k + 1 });
            }
        }
        path.data.extend_from_slice(&x);
    }
    Ok(PathRun { path, params, clamped })
}

/// Simulate `n_paths` paths of `n_steps` Euler steps each.
pub fn euler_paths(
    spec: &UncertaintySpec,
    selector: &Selector,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    check_sizes(n_paths, n_steps)?;
    let runs: Vec<Result<PathRun>> = (0..n_paths)
        .into_par_iter()
        .map(|i| run_path(spec, selector, n_steps, seed, i))
        .collect();
    let d = spec.dim();
    let k_dims = spec.param_box.dims();
    let mut states = Vec::with_capacity(n_paths * (n_steps + 1) * d);
    let mut chosen_params = Vec::with_capacity(n_paths * n_steps * k_dims);
    let mut clamped = 0;
    for run in runs {
        let run = run?;
        states.extend_from_slice(&run.path.data);
        chosen_params.extend_from_slice(&run.params);
        clamped += run.clamped;
    }
    Ok(PathEnsemble {
        n_paths,
        n_steps,
        dt: spec.horizon / n_steps as f64,
        dim: d,
        n_params: k_dims,
        states,
        chosen_params,
        seed,
        clamped,
    })
}

/// Mean and standard error of a sample.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, Builtin, CoefficientField, DelayParams, GammaTable, ParameterBox};

    fn constant_spec(b: f64, a: f64) -> UncertaintySpec {
        builtin(Builtin::GbmInterval { b: [b, b], a: [a, a] }, 1.0, vec![0.0]).unwrap()
    }

    #[test]
    fn zero_coefficients_stay_put() {
        let spec = constant_spec(0.0, 0.0);
        let e = euler_paths(&spec, &Selector::constant(vec![0.0, 0.0]), 10, 16, 1).unwrap();
        assert!(e.states.iter().all(|&x| x == 0.0));
        assert_eq!(e.path(3).len(), 17);
    }

    #[test]
    fn terminal_variance_matches() {
        let sigma2 = 0.09;
        let spec = constant_spec(0.0, sigma2);
        let n = 100_000;
        let e = euler_paths(&spec, &Selector::constant(vec![0.0, sigma2]), n, 8, 11).unwrap();
        let xt: Vec<f64> = (0..n).map(|i| e.state(i, 8)[0]).collect();
        let m = xt.iter().sum::<f64>() / n as f64;
        let var = xt.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0);
        // Gaussian: Var(s²) = 2σ⁴/(n−1).
        let se = (2.0 * sigma2 * sigma2 / (n as f64 - 1.0)).sqrt();
        assert!((var - sigma2).abs() < 4.0 * se, "{var} vs {sigma2} ± {se}");
    }

    #[test]
    fn delay_runs_and_taps_correctly() {
        let spec = builtin(
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
        .unwrap();
        let f = vec![0.02, 1.0, 0.09];
        let n_steps = 256;
        let e = euler_paths(&spec, &Selector::constant(f.clone()), 4, n_steps, 3).unwrap();
        // Hand-rolled recursion from the same normals.
        let dt = 1.0 / n_steps as f64;
        let mut rng = rng::stream(3, Purpose::Paths, 2);
        let mut y = vec![1.0];
        for k in 0..n_steps {
            let t = k as f64 * dt;
            let lag_pos = ((t - 0.5).max(0.0)) / dt;
            let lagged = y[lag_pos.round() as usize];
            let cur = y[k];
            let drift = (f[0] + f[2] * f[1]) * cur - 0.1 * (cur - lagged).max(0.0);
            let z: f64 = StandardNormal.sample(&mut rng);
            y.push(cur + drift * dt + f[2].sqrt() * dt.sqrt() * z);
        }
        let sim = e.path(2);
        for (k, yk) in y.iter().enumerate() {
            assert!((sim.point(k)[0] - yk).abs() < 1e-12, "step {k}");
        }
    }

    #[test]
    fn overflow_is_reported() {
        let field = CoefficientField::from_fn(1, Structure::Markovian, |_, _, p, b, a| {
            let x = p.terminal()[0];
            b[0] = x * x;
            a[0] = 0.0;
        });
        let spec = UncertaintySpec::new("blowup", ParameterBox::new(vec![0.0], vec![0.0]).unwrap(), field, 1.0, vec![10.0])
            .unwrap();
        let err = euler_paths(&spec, &Selector::constant(vec![0.0]), 2, 64, 1).unwrap_err();
        assert!(matches!(err, Error::NumericOverflow { path: 0, .. }), "{err}");
    }

    #[test]
    fn ensembles_do_not_depend_on_thread_count() {
        let spec = builtin(Builtin::default_nonlinear_diffusion(), 1.0, vec![0.2]).unwrap();
        let sel = Selector::named_feedback(&spec, "threshold").unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| euler_paths(&spec, &sel, 64, 32, 9).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a, b);
        assert!(a.chosen_params.chunks(3).all(|f| spec.param_box.contains(f)));
    }
}
