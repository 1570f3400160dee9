//! Builtin families of uncertainty sets.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::config::{
    BoxSection, DelaySection, ExpressionsSection, Family, IntervalsSection, ModelConfig,
    ModelSection, ScaledSection,
};
use super::{CoefficientModel, UncertaintySpec};
use crate::error::{Error, Result};
use crate::expr::{Env, Expr, Scope};
use crate::path::PathView;

/// A piecewise-linear function `R → R₊` given by sorted `(z, γ(z))` knots,
/// extended linearly beyond the end knots and floored at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaTable {
    knots: Vec<[f64; 2]>,
}

impl GammaTable {
    pub fn new(knots: Vec<[f64; 2]>) -> Result<Self> {
        let bad = |reason: String| Error::BadFamilyParams {
            family: "delay".into(),
            reason,
        };
        if knots.len() < 2 {
            return Err(bad("gamma_table needs at least two knots".into()));
        }
        for w in knots.windows(2) {
            if !(w[0][0] < w[1][0]) {
                return Err(bad("gamma_table abscissae must be strictly increasing".into()));
            }
        }
        if knots.iter().any(|k| !(k[1] >= 0.0) || !k[0].is_finite() || !k[1].is_finite()) {
            return Err(bad("gamma_table values must be finite and nonnegative".into()));
        }
        Ok(GammaTable { knots })
    }

    /// The table for `γ(z) = slope · z⁺`.
    pub fn positive_part(slope: f64) -> Self {
        GammaTable {
            knots: vec![[-1.0, 0.0], [0.0, 0.0], [1.0, slope]],
        }
    }

    pub fn knots(&self) -> &[[f64; 2]] {
        &self.knots
    }

    pub fn eval(&self, z: f64) -> f64 {
        let k = &self.knots;
        let seg = match k.iter().position(|p| p[0] > z) {
            Some(0) => 0,
            Some(i) => i - 1,
            None => k.len() - 2,
        };
        let (a, b) = (k[seg], k[seg + 1]);
        let v = a[1] + (b[1] - a[1]) * (z - a[0]) / (b[0] - a[0]);
        v.max(0.0)
    }

    /// Largest absolute slope; `γ(z) ≤ γ(0) + slope·|z|`.
    pub fn max_slope(&self) -> f64 {
        self.knots
            .windows(2)
            .map(|w| ((w[1][1] - w[0][1]) / (w[1][0] - w[0][0])).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayParams {
    pub r: [f64; 2],
    pub lambda: [f64; 2],
    pub sigma2: [f64; 2],
    pub tau: f64,
    pub gamma: GammaTable,
}

/// Builtin families and their parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Builtin {
    /// Constant drift and volatility in intervals; `F = [b̲, b̄] × [a̲, a̅]`,
    /// `b(f) = f₁`, `a(f) = f₂`.
    GbmInterval { b: [f64; 2], a: [f64; 2] },
    /// `F = [0, 1]`, `b = f·b̄`, `a = f·ā`; the volatility may vanish.
    GbmScaled { b_bar: f64, a_bar: f64 },
    /// Markovian `b'(f, X)`, `a'(f, X)` from expressions.
    NonlinearDiffusion {
        lower: Vec<f64>,
        upper: Vec<f64>,
        drift: Vec<String>,
        diffusion: Vec<String>,
        constants: BTreeMap<String, f64>,
    },
    /// `b = (f₁ + f₃f₂)X(t) − γ(X(t) − X((t−τ)∨0))`, `a = f₃`.
    Delay(DelayParams),
    /// `F = [1, 2]²`, `b = f₁|X|^{1/2}`, `a = f₂|X|^{3/2}`.
    Remark210,
}

impl Builtin {
    /// The default Markovian instance: mean reversion with uncertain speed and
    /// level, and a volatility growing linearly in `|X|`.
    pub fn default_nonlinear_diffusion() -> Self {
        Builtin::NonlinearDiffusion {
            lower: vec![0.5, -0.5, 0.04],
            upper: vec![1.5, 0.5, 0.09],
            drift: vec!["f1 * (f2 - X)".into()],
            diffusion: vec!["f3 * (1 + 0.5 * |X|)".into()],
            constants: BTreeMap::new(),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Builtin::GbmInterval { .. } => Family::GbmInterval,
            Builtin::GbmScaled { .. } => Family::GbmScaled,
            Builtin::NonlinearDiffusion { .. } => Family::NonlinearDiffusion,
            Builtin::Delay(_) => Family::Delay,
            Builtin::Remark210 => Family::Remark210,
        }
    }

    pub fn to_config(&self, horizon: f64, x0: Vec<f64>) -> ModelConfig {
        let mut cfg = ModelConfig {
            model: ModelSection {
                family: self.family(),
                horizon,
                x0,
                d: None,
                growth_const: None,
                lipschitz_const: None,
            },
            ..ModelConfig::default()
        };
        match self {
            Builtin::GbmInterval { b, a } => {
                cfg.intervals = Some(IntervalsSection {
                    b: Some(*b),
                    a: Some(*a),
                    ..Default::default()
                });
            }
            Builtin::GbmScaled { b_bar, a_bar } => {
                cfg.scaled = Some(ScaledSection {
                    b_bar: *b_bar,
                    a_bar: *a_bar,
                });
            }
            Builtin::NonlinearDiffusion {
                lower,
                upper,
                drift,
                diffusion,
                constants,
            } => {
                cfg.param_box = Some(BoxSection {
                    lower: lower.clone(),
                    upper: upper.clone(),
                });
                cfg.expressions = Some(ExpressionsSection {
                    drift: drift.clone(),
                    diffusion: diffusion.clone(),
                });
                if !constants.is_empty() {
                    cfg.constants = Some(constants.clone());
                }
            }
            Builtin::Delay(p) => {
                cfg.intervals = Some(IntervalsSection {
                    r: Some(p.r),
                    lambda: Some(p.lambda),
                    sigma2: Some(p.sigma2),
                    ..Default::default()
                });
                cfg.delay = Some(DelaySection {
                    tau: p.tau,
                    gamma_table: p.gamma.knots.clone(),
                });
            }
            Builtin::Remark210 => {}
        }
        cfg
    }
}

/// Build a builtin family. The result remembers its configuration, so it can
/// be dumped and re-parsed.
pub fn builtin(family: Builtin, horizon: f64, x0: Vec<f64>) -> Result<UncertaintySpec> {
    family.to_config(horizon, x0).build()
}

fn check_interval(family: &str, name: &str, iv: [f64; 2]) -> Result<()> {
    if iv[0].is_finite() && iv[1].is_finite() && iv[0] <= iv[1] {
        Ok(())
    } else {
        Err(Error::BadFamilyParams {
            family: family.into(),
            reason: format!("{name} interval must satisfy lower <= upper, got {iv:?}"),
        })
    }
}

pub(super) fn gbm_interval_model(b: [f64; 2], a: [f64; 2]) -> Result<Arc<dyn CoefficientModel>> {
    check_interval("gbm_interval", "b", b)?;
    check_interval("gbm_interval", "a", a)?;
    if a[0] < 0.0 {
        return Err(Error::BadFamilyParams {
            family: "gbm_interval".into(),
            reason: format!("volatility interval must be nonnegative, got {a:?}"),
        });
    }
    Ok(Arc::new(GbmInterval))
}

#[derive(Debug)]
struct GbmInterval;

impl CoefficientModel for GbmInterval {
    fn eval(&self, f: &[f64], _t: f64, _p: &PathView<'_>, drift: &mut [f64], diffusion: &mut [f64]) {
        drift[0] = f[0];
        diffusion[0] = f[1];
    }
}

#[derive(Debug)]
pub(super) struct GbmScaled {
    pub b_bar: f64,
    pub a_bar: f64,
}

impl CoefficientModel for GbmScaled {
    fn eval(&self, f: &[f64], _t: f64, _p: &PathView<'_>, drift: &mut [f64], diffusion: &mut [f64]) {
        drift[0] = f[0] * self.b_bar;
        diffusion[0] = f[0] * self.a_bar;
    }
}

#[derive(Debug)]
pub(super) struct Delay {
    pub tau: f64,
    pub gamma: GammaTable,
}

impl CoefficientModel for Delay {
    fn eval(&self, f: &[f64], t: f64, p: &PathView<'_>, drift: &mut [f64], diffusion: &mut [f64]) {
        let y = p.terminal()[0];
        let lagged = p.component_at(0, (t - self.tau).max(0.0));
        drift[0] = (f[0] + f[2] * f[1]) * y - self.gamma.eval(y - lagged);
        diffusion[0] = f[2];
    }
}

pub(super) fn delay_params_check(p: &DelayParams, horizon: f64) -> Result<()> {
    check_interval("delay", "r", p.r)?;
    check_interval("delay", "lambda", p.lambda)?;
    check_interval("delay", "sigma2", p.sigma2)?;
    if !(p.sigma2[0] > 0.0) {
        return Err(Error::BadFamilyParams {
            family: "delay".into(),
            reason: format!("need 0 < sigma2_lower <= sigma2_upper, got {:?}", p.sigma2),
        });
    }
    if !(0.0..=horizon).contains(&p.tau) {
        return Err(Error::BadFamilyParams {
            family: "delay".into(),
            reason: format!("tau = {} must lie in [0, T = {horizon}]", p.tau),
        });
    }
    Ok(())
}

#[derive(Debug)]
pub(super) struct Remark210;

impl CoefficientModel for Remark210 {
    fn eval(&self, f: &[f64], _t: f64, p: &PathView<'_>, drift: &mut [f64], diffusion: &mut [f64]) {
        let x = p.terminal()[0].abs();
        drift[0] = f[0] * x.sqrt();
        diffusion[0] = f[1] * x * x.sqrt();
    }
}

/// Coefficients given by parsed expressions; `diffusion` is row-major `d × d`.
#[derive(Debug)]
pub(super) struct DslModel {
    pub drift: Vec<Expr>,
    pub diffusion: Vec<Expr>,
}

impl DslModel {
    pub fn parse(drift: &[String], diffusion: &[String], scope: &Scope) -> Result<Self> {
        let d = scope.dim;
        if drift.len() != d {
            return Err(Error::config(
                "expressions.drift",
                format!("expected {d} entries, got {}", drift.len()),
            ));
        }
        if diffusion.len() != d * d {
            return Err(Error::config(
                "expressions.diffusion",
                format!("expected {} row-major entries, got {}", d * d, diffusion.len()),
            ));
        }
        let parse = |key: &str, v: &[String]| -> Result<Vec<Expr>> {
            v.iter()
                .enumerate()
                .map(|(i, s)| {
                    Expr::parse(s, scope).map_err(|e| Error::config(format!("{key}[{i}]"), e.to_string()))
                })
                .collect()
        };
        Ok(DslModel {
            drift: parse("expressions.drift", drift)?,
            diffusion: parse("expressions.diffusion", diffusion)?,
        })
    }

    pub fn exprs(&self) -> impl Iterator<Item = &Expr> {
        self.drift.iter().chain(self.diffusion.iter())
    }
}

impl CoefficientModel for DslModel {
    fn eval(&self, f: &[f64], t: f64, p: &PathView<'_>, drift: &mut [f64], diffusion: &mut [f64]) {
        let env = Env {
            t,
            params: f,
            path: Some(*p),
            state: p.terminal(),
            extras: &[],
        };
        for (out, e) in drift.iter_mut().zip(&self.drift) {
            *out = e.eval(&env);
        }
        for (out, e) in diffusion.iter_mut().zip(&self.diffusion) {
            *out = e.eval(&env);
        }
    }
}
