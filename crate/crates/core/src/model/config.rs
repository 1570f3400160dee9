//! TOML model configuration.
//!
//! ```toml
//! [model]
//! family = "delay"
//! T = 1.0
//! x0 = [1.0]
//!
//! [intervals]
//! r = [0.0, 0.02]
//! lambda = [0.0, 1.0]
//! sigma2 = [0.04, 0.09]
//!
//! [delay]
//! tau = 0.5
//! gamma_table = [[-1.0, 0.0], [0.0, 0.0], [1.0, 0.1]]
//! ```

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::builtin::{self, DelayParams, DslModel, GammaTable};
use super::{CoefficientField, CoefficientModel, ParameterBox, Structure, UncertaintySpec};
use crate::error::{Error, Result};
use crate::expr::Scope;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    GbmInterval,
    GbmScaled,
    NonlinearDiffusion,
    Delay,
    #[serde(rename = "remark_2_10")]
    Remark210,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: Family,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth_const: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz_const: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct IntervalsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelaySection {
    pub tau: f64,
    pub gamma_table: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaledSection {
    pub b_bar: f64,
    pub a_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// `drift` has `d` entries, `diffusion` has `d²` row-major entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpressionsSection {
    pub drift: Vec<String>,
    pub diffusion: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals: Option<IntervalsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<DelaySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaled: Option<ScaledSection>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub param_box: Option<BoxSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expressions: Option<ExpressionsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<BTreeMap<String, f64>>,
}

fn missing(key: &str) -> Error {
    Error::config(key, "missing")
}

impl ModelConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let key = e
                .span()
                .map(|s| format!("bytes {}..{}", s.start, s.end))
                .unwrap_or_else(|| "model".into());
            Error::config(key, e.message().to_string())
        })
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config is always serializable")
    }

    /// Validate and build the uncertainty set.
    pub fn build(&self) -> Result<UncertaintySpec> {
        let m = &self.model;
        let family = m.family;
        let one_dim = |name: &str| -> Result<()> {
            if m.x0.len() != 1 || m.d.is_some_and(|d| d != 1) {
                return Err(Error::BadFamilyParams {
                    family: name.into(),
                    reason: "family is one-dimensional: use d = 1 and a single x0".into(),
                });
            }
            Ok(())
        };
        let (param_box, model, structure, name): (ParameterBox, Arc<dyn CoefficientModel>, Structure, &str) =
            match family {
                Family::GbmInterval => {
                    one_dim("gbm_interval")?;
                    let iv = self.intervals.as_ref().ok_or_else(|| missing("intervals"))?;
                    let b = iv.b.ok_or_else(|| missing("intervals.b"))?;
                    let a = iv.a.ok_or_else(|| missing("intervals.a"))?;
                    let model = builtin::gbm_interval_model(b, a)?;
                    (
                        ParameterBox::new(vec![b[0], a[0]], vec![b[1], a[1]])?,
                        model,
                        Structure::Constant,
                        "gbm_interval",
                    )
                }
                Family::GbmScaled => {
                    one_dim("gbm_scaled")?;
                    let s = self.scaled.as_ref().ok_or_else(|| missing("scaled"))?;
                    if !(s.a_bar >= 0.0 && s.a_bar.is_finite() && s.b_bar.is_finite()) {
                        return Err(Error::BadFamilyParams {
                            family: "gbm_scaled".into(),
                            reason: format!("need finite b_bar and a_bar >= 0, got {s:?}"),
                        });
                    }
                    (
                        ParameterBox::new(vec![0.0], vec![1.0])?,
                        Arc::new(builtin::GbmScaled {
                            b_bar: s.b_bar,
                            a_bar: s.a_bar,
                        }),
                        Structure::Constant,
                        "gbm_scaled",
                    )
                }
                Family::Delay => {
                    one_dim("delay")?;
                    let iv = self.intervals.as_ref().ok_or_else(|| missing("intervals"))?;
                    let ds = self.delay.as_ref().ok_or_else(|| missing("delay"))?;
                    let p = DelayParams {
                        r: iv.r.ok_or_else(|| missing("intervals.r"))?,
                        lambda: iv.lambda.ok_or_else(|| missing("intervals.lambda"))?,
                        sigma2: iv.sigma2.ok_or_else(|| missing("intervals.sigma2"))?,
                        tau: ds.tau,
                        gamma: GammaTable::new(ds.gamma_table.clone())?,
                    };
                    builtin::delay_params_check(&p, m.horizon)?;
                    (
                        ParameterBox::new(
                            vec![p.r[0], p.lambda[0], p.sigma2[0]],
                            vec![p.r[1], p.lambda[1], p.sigma2[1]],
                        )?,
                        Arc::new(builtin::Delay {
                            tau: p.tau,
                            gamma: p.gamma,
                        }),
                        Structure::PathDependent,
                        "delay",
                    )
                }
                Family::Remark210 => {
                    one_dim("remark_2_10")?;
                    (
                        ParameterBox::new(vec![1.0, 1.0], vec![2.0, 2.0])?,
                        Arc::new(builtin::Remark210),
                        Structure::Markovian,
                        "remark_2_10",
                    )
                }
                Family::NonlinearDiffusion | Family::Custom => {
                    let markov_only = family == Family::NonlinearDiffusion;
                    let dim = m.d.unwrap_or(m.x0.len());
                    if dim == 0 || dim != m.x0.len() {
                        return Err(Error::config("model.d", format!("d = {dim} does not match x0")));
                    }
                    let bx = self.param_box.as_ref().ok_or_else(|| missing("box"))?;
                    let param_box = ParameterBox::new(bx.lower.clone(), bx.upper.clone())?;
                    let ex = self.expressions.as_ref().ok_or_else(|| missing("expressions"))?;
                    let scope = Scope {
                        n_params: param_box.dims(),
                        dim,
                        allow_time: !markov_only,
                        allow_taps: !markov_only,
                        constants: self.constants.clone().unwrap_or_default(),
                        extras: vec![],
                    };
                    let dsl = DslModel::parse(&ex.drift, &ex.diffusion, &scope)?;
                    let structure = if dsl.exprs().any(|e| e.uses_lagged_taps()) {
                        Structure::PathDependent
                    } else if dsl.exprs().any(|e| e.uses_state() || e.uses_time()) {
                        Structure::Markovian
                    } else {
                        Structure::Constant
                    };
                    let name = if markov_only { "nonlinear_diffusion" } else { "custom" };
                    (param_box, Arc::new(dsl), structure, name)
                }
            };
        let field = CoefficientField::new(m.x0.len(), structure, model)
            .with_growth_const(m.growth_const)
            .with_lipschitz_const(m.lipschitz_const);
        Ok(UncertaintySpec::new(name, param_box, field, m.horizon, m.x0.clone())?.with_config(self.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CUSTOM: &str = r#"
[model]
family = "custom"
T = 1.0
x0 = [0.5]

[box]
lower = [0.0, 0.1]
upper = [1.0, 0.2]

[expressions]
drift = ["f1 * (X(t) - X(t - tau))"]
diffusion = ["f2 * (1 + max(X, 0))"]

[constants]
tau = 0.25
"#;

    #[test]
    fn custom_dsl_round_trips_to_identical_evaluations() {
        let cfg = ModelConfig::from_toml(CUSTOM).unwrap();
        let spec = cfg.build().unwrap();
        assert_eq!(spec.structure(), Structure::PathDependent);
        let again = ModelConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        let spec2 = again.build().unwrap();
        let p = crate::path::Path {
            dt: 0.125,
            dim: 1,
            data: vec![0.5, 0.7, 0.2, 0.9],
        };
        let a = spec.eval_coefficients(&[0.3, 0.15], 0.375, &p.view()).unwrap();
        let b = spec2.eval_coefficients(&[0.3, 0.15], 0.375, &p.view()).unwrap();
        assert_eq!(a.drift[0].to_bits(), b.drift[0].to_bits());
        assert_eq!(a.diffusion[0].to_bits(), b.diffusion[0].to_bits());
    }

    #[test]
    fn nonlinear_diffusion_rejects_taps() {
        let text = CUSTOM.replace("\"custom\"", "\"nonlinear_diffusion\"");
        let err = ModelConfig::from_toml(&text).unwrap().build().unwrap_err();
        assert!(matches!(err, Error::Config { .. }), "{err}");
    }

    #[test]
    fn unknown_keys_are_reported() {
        let err = ModelConfig::from_toml("[model]\nfamily = \"gbm_interval\"\nT = 1.0\nx0 = [1.0]\nbogus = 3\n")
            .unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }
}
