//! Uncertainty sets: a compact parameter box `F` and coefficient fields
//! `b(f, t, ω)`, `a(f, t, ω)`.
//!
//! For fixed `(t, ω)` the set of attainable characteristics is
//!
//! ```text
//! Θ(t, ω) = { (b(f, t, ω), a(f, t, ω)) : f ∈ F }
//! ```
//!
//! and the martingale counterpart keeps only the diffusion part with zero
//! drift. Everything here is immutable after construction and safe to share
//! across threads.

mod builtin;
mod config;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use builtin::{builtin, Builtin, DelayParams, GammaTable};
pub use config::{
    BoxSection, DelaySection, ExpressionsSection, Family, IntervalsSection, ModelConfig,
    ModelSection, ScaledSection,
};

use crate::error::{Error, Result};
use crate::linalg;
use crate::path::{Path, PathView};

/// Eigenvalue floor below which a symmetrized diffusion matrix is rejected.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// The compact parameter space `F`, restricted to a product of intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParameterBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::config(
                "box",
                format!(
                    "lower and upper must be non-empty and of equal length (got {} and {})",
                    lower.len(),
                    upper.len()
                ),
            ));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::config(
                    format!("box[{i}]"),
                    format!("need finite lower <= upper, got [{lo}, {hi}]"),
                ));
            }
        }
        Ok(ParameterBox { lower, upper })
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, f: &[f64]) -> bool {
        f.len() == self.dims()
            && f.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (lo, hi))| {
                let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
                *v >= lo - slack && *v <= hi + slack
            })
    }

    /// Componentwise projection onto the box; returns whether anything moved.
    pub fn clamp(&self, f: &mut [f64]) -> bool {
        let mut moved = false;
        for (v, (lo, hi)) in f.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            let c = v.clamp(*lo, *hi);
            moved |= c != *v;
            *v = c;
        }
        moved
    }

    /// Tensor grid with `per_dim` points per axis, last axis fastest.
    pub fn grid(&self, per_dim: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| {
                if per_dim == 1 {
                    vec![*lo]
                } else {
                    (0..per_dim)
                        .map(|k| {
                            if k + 1 == per_dim {
                                *hi
                            } else {
                                lo + (hi - lo) * k as f64 / (per_dim - 1) as f64
                            }
                        })
                        .collect()
                }
            })
            .collect();
        let total = per_dim.pow(self.dims() as u32);
        let mut out = Vec::with_capacity(total);
        for idx in 0..total {
            let mut rem = idx;
            let mut point = vec![0.0; self.dims()];
            for axis in (0..self.dims()).rev() {
                point[axis] = axes[axis][rem % per_dim];
                rem /= per_dim;
            }
            out.push(point);
        }
        out
    }

    /// The `2^dims` vertices of the box.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        self.grid(2)
    }
}

/// How the coefficients depend on `(t, ω)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    /// Depends on `f` only.
    Constant,
    /// Depends on the path only through `(t, ω(t))`.
    Markovian,
    PathDependent,
}

/// A coefficient field evaluated into caller-provided buffers.
///
/// `drift` has length `d`, `diffusion` is a row-major `d × d` matrix.
pub trait CoefficientModel: Send + Sync + fmt::Debug {
    fn eval(&self, f: &[f64], t: f64, prefix: &PathView<'_>, drift: &mut [f64], diffusion: &mut [f64]);
}

type CoefficientFn = dyn Fn(&[f64], f64, &PathView<'_>, &mut [f64], &mut [f64]) + Send + Sync;

/// Adapter turning a closure into a [`CoefficientModel`].
pub struct FnModel(Box<CoefficientFn>);

impl fmt::Debug for FnModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnModel")
    }
}

impl CoefficientModel for FnModel {
    fn eval(&self, f: &[f64], t: f64, prefix: &PathView<'_>, drift: &mut [f64], diffusion: &mut [f64]) {
        (self.0)(f, t, prefix, drift, diffusion)
    }
}

#[derive(Debug, Clone)]
pub struct CoefficientField {
    pub dim: usize,
    pub structure: Structure,
    pub declared_growth_const: Option<f64>,
    pub declared_lipschitz_const: Option<f64>,
    model: Arc<dyn CoefficientModel>,
}

impl CoefficientField {
    pub fn new(dim: usize, structure: Structure, model: Arc<dyn CoefficientModel>) -> Self {
        CoefficientField {
            dim,
            structure,
            declared_growth_const: None,
            declared_lipschitz_const: None,
            model,
        }
    }

    pub fn from_fn<F>(dim: usize, structure: Structure, f: F) -> Self
    where
        F: Fn(&[f64], f64, &PathView<'_>, &mut [f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self::new(dim, structure, Arc::new(FnModel(Box::new(f))))
    }

    pub fn with_growth_const(mut self, c: Option<f64>) -> Self {
        self.declared_growth_const = c;
        self
    }

    pub fn with_lipschitz_const(mut self, c: Option<f64>) -> Self {
        self.declared_lipschitz_const = c;
        self
    }
}

/// One element of `Θ(t, ω)` together with the parameter producing it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaSample {
    pub drift: Vec<f64>,
    pub diffusion: Vec<f64>,
    pub param: Vec<f64>,
}

/// An uncertainty set: parameter box, coefficient field, horizon and start.
#[derive(Debug, Clone)]
pub struct UncertaintySpec {
    pub name: String,
    pub param_box: ParameterBox,
    pub coeffs: CoefficientField,
    pub horizon: f64,
    pub x0: Vec<f64>,
    config: Option<ModelConfig>,
}

impl UncertaintySpec {
    pub fn new(
        name: impl Into<String>,
        param_box: ParameterBox,
        coeffs: CoefficientField,
        horizon: f64,
        x0: Vec<f64>,
    ) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::config("model.T", format!("horizon must be positive, got {horizon}")));
        }
        if x0.len() != coeffs.dim {
            return Err(Error::config(
                "model.x0",
                format!("expected {} components, got {}", coeffs.dim, x0.len()),
            ));
        }
        Ok(UncertaintySpec {
            name: name.into(),
            param_box,
            coeffs,
            horizon,
            x0,
            config: None,
        })
    }

    pub(crate) fn with_config(mut self, config: ModelConfig) -> Self {
        self.config = Some(config);
        self
    }

    /// The configuration this spec was built from, when it came from one.
    pub fn config(&self) -> Option<&ModelConfig> {
        self.config.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.coeffs.dim
    }

    pub fn structure(&self) -> Structure {
        self.coeffs.structure
    }

    /// The same uncertainty set with the drift forced to zero (the martingale
    /// counterpart `{0} × {a(f, t, ω)}`).
    pub fn martingale_version(&self) -> UncertaintySpec {
        let inner = self.coeffs.model.clone();
        let model = FnModel(Box::new(move |f, t, p, drift, diff| {
            inner.eval(f, t, p, drift, diff);
            drift.iter_mut().for_each(|v| *v = 0.0);
        }));
        let mut coeffs = self.coeffs.clone();
        coeffs.model = Arc::new(model);
        UncertaintySpec {
            name: format!("{}/martingale", self.name),
            param_box: self.param_box.clone(),
            coeffs,
            horizon: self.horizon,
            x0: self.x0.clone(),
            config: None,
        }
    }

    /// Evaluate into buffers; validates `f`, symmetrizes the diffusion and
    /// checks positive semidefiniteness.
    pub fn eval_into(
        &self,
        f: &[f64],
        t: f64,
        prefix: &PathView<'_>,
        drift: &mut [f64],
        diffusion: &mut [f64],
    ) -> Result<()> {
        if !self.param_box.contains(f) {
            return Err(Error::ParamOutOfBox { param: f.to_vec() });
        }
        let d = self.dim();
        self.coeffs.model.eval(f, t, prefix, drift, diffusion);
        if d > 1 {
            linalg::symmetrize(diffusion, d);
        }
        let (lo, _) = linalg::eigen_range(diffusion, d);
        if lo < -PSD_TOLERANCE || lo.is_nan() {
            return Err(Error::NonPsdDiffusion { min_eigenvalue: lo });
        }
        Ok(())
    }

    /// `(b(f, t, prefix), a(f, t, prefix))` with the checks of [`Self::eval_into`]
    /// plus the domain checks on `t` and the prefix start.
    pub fn eval_coefficients(&self, f: &[f64], t: f64, prefix: &PathView<'_>) -> Result<ThetaSample> {
        let d = self.dim();
        if !(0.0..=self.horizon * (1.0 + 1e-12)).contains(&t) {
            return Err(Error::Domain(format!("t = {t} outside [0, {}]", self.horizon)));
        }
        if prefix.dim != d {
            return Err(Error::Domain(format!("prefix has dimension {}, expected {d}", prefix.dim)));
        }
        let start = prefix.initial();
        if start.iter().zip(&self.x0).any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + b.abs())) {
            return Err(Error::Domain(format!("prefix starts at {start:?}, expected x0 = {:?}", self.x0)));
        }
        let mut drift = vec![0.0; d];
        let mut diffusion = vec![0.0; d * d];
        self.eval_into(f, t, prefix, &mut drift, &mut diffusion)?;
        Ok(ThetaSample {
            drift,
            diffusion,
            param: f.to_vec(),
        })
    }

    /// Evaluate on the `grid_per_dim^dims` tensor grid over `F`.
    pub fn sample_theta_set(
        &self,
        t: f64,
        prefix: &PathView<'_>,
        grid_per_dim: usize,
    ) -> Result<Vec<ThetaSample>> {
        if grid_per_dim < 2 {
            return Err(Error::Domain(format!("grid_per_dim must be >= 2, got {grid_per_dim}")));
        }
        self.param_box
            .grid(grid_per_dim)
            .into_iter()
            .map(|f| {
                self.eval_coefficients(&f, t, prefix).map_err(|e| match e {
                    Error::NonPsdDiffusion { min_eigenvalue } => Error::Domain(format!(
                        "non-PSD diffusion (min eigenvalue {min_eigenvalue:e}) at grid point {f:?}"
                    )),
                    other => other,
                })
            })
            .collect()
    }

    /// The prefix at `t = 0`.
    pub fn start_path(&self, dt: f64) -> Path {
        Path::start(&self.x0, dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gbm() -> UncertaintySpec {
        builtin(
            Builtin::GbmInterval {
                b: [0.05, 0.1],
                a: [0.04, 0.09],
            },
            1.0,
            vec![1.0],
        )
        .unwrap()
    }

    #[test]
    fn gbm_interval_returns_its_parameter() {
        let spec = gbm();
        let p = spec.start_path(0.01);
        let s = spec.eval_coefficients(&[0.05, 0.04], 0.3, &p.view()).unwrap();
        assert_eq!(s.drift, vec![0.05]);
        assert_eq!(s.diffusion, vec![0.04]);
    }

    #[test]
    fn constant_identity_field() {
        let field = CoefficientField::from_fn(2, Structure::Constant, |_, _, _, b, a| {
            b.fill(0.0);
            a.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        });
        let spec = UncertaintySpec::new(
            "id",
            ParameterBox::new(vec![0.0], vec![1.0]).unwrap(),
            field,
            1.0,
            vec![0.0, 0.0],
        )
        .unwrap();
        let s = spec
            .eval_coefficients(&[0.5], 0.0, &spec.start_path(0.1).view())
            .unwrap();
        assert_eq!(s.drift, vec![0.0, 0.0]);
        assert_eq!(s.diffusion, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn remark_field_at_four() {
        let spec = builtin(Builtin::Remark210, 1.0, vec![4.0]).unwrap();
        let s = spec
            .eval_coefficients(&[1.0, 1.0], 0.0, &spec.start_path(0.1).view())
            .unwrap();
        assert!((s.drift[0] - 2.0).abs() < 1e-15);
        assert!((s.diffusion[0] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_box_and_non_psd_are_rejected() {
        let spec = gbm();
        let p = spec.start_path(0.01);
        assert!(matches!(
            spec.eval_coefficients(&[0.2, 0.05], 0.0, &p.view()),
            Err(Error::ParamOutOfBox { .. })
        ));
        let field = CoefficientField::from_fn(1, Structure::Constant, |f, _, _, b, a| {
            b[0] = 0.0;
            a[0] = f[0];
        });
        let spec = UncertaintySpec::new(
            "neg",
            ParameterBox::new(vec![-1.0], vec![1.0]).unwrap(),
            field,
            1.0,
            vec![0.0],
        )
        .unwrap();
        assert!(matches!(
            spec.eval_coefficients(&[-0.5], 0.0, &spec.start_path(0.1).view()),
            Err(Error::NonPsdDiffusion { .. })
        ));
    }

    #[test]
    fn asymmetric_input_is_symmetrized() {
        let field = CoefficientField::from_fn(2, Structure::Constant, |_, _, _, b, a| {
            b.fill(0.0);
            a.copy_from_slice(&[1.0, 0.2, 0.0, 1.0]);
        });
        let spec = UncertaintySpec::new(
            "asym",
            ParameterBox::new(vec![0.0], vec![0.0]).unwrap(),
            field,
            1.0,
            vec![0.0, 0.0],
        )
        .unwrap();
        let s = spec
            .eval_coefficients(&[0.0], 0.0, &spec.start_path(0.1).view())
            .unwrap();
        assert_eq!(s.diffusion[1], s.diffusion[2]);
        assert!((s.diffusion[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn grid_sampling() {
        let field = CoefficientField::from_fn(1, Structure::Constant, |f, _, _, b, a| {
            b[0] = f[0];
            a[0] = 1.0;
        });
        let spec = UncertaintySpec::new(
            "unit",
            ParameterBox::new(vec![0.0], vec![1.0]).unwrap(),
            field,
            1.0,
            vec![0.0],
        )
        .unwrap();
        let p = spec.start_path(0.1);
        let samples = spec.sample_theta_set(0.0, &p.view(), 3).unwrap();
        let fs: Vec<f64> = samples.iter().map(|s| s.param[0]).collect();
        assert_eq!(fs, vec![0.0, 0.5, 1.0]);
        assert!(spec.sample_theta_set(0.0, &p.view(), 1).is_err());

        let g = gbm();
        assert_eq!(g.sample_theta_set(0.0, &g.start_path(0.1).view(), 2).unwrap().len(), 4);

        let r = builtin(Builtin::Remark210, 1.0, vec![0.0]).unwrap();
        for s in r.sample_theta_set(0.0, &r.start_path(0.1).view(), 4).unwrap() {
            assert_eq!(s.drift[0], 0.0);
            assert_eq!(s.diffusion[0], 0.0);
        }
    }
}
