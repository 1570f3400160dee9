//! Experiment configuration (TOML).
//!
//! ```toml
//! seed = 42
//! model = "models/gbm_interval.toml"
//!
//! [value]
//! utility = "log"
//! x = [1.0]
//!
//! [value.lattice]
//! n_steps = 64
//! ```
//!
//! `model` is either a path (relative to the config file) or an inline model
//! table. Exactly one engine section is allowed per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conditions::{CertifyOptions, MPR_RESIDUAL_TOL};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, UncertaintySpec};
use crate::value::LatticeConfig;

pub const DEFAULT_SEED: u64 = 42;

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    File(PathBuf),
    Inline(Box<ModelConfig>),
}

impl ModelSource {
    pub fn load(&self) -> Result<ModelConfig> {
        match self {
            ModelSource::File(p) => ModelConfig::from_file(p),
            ModelSource::Inline(c) => Ok((**c).clone()),
        }
    }
}

/// Certifier budgets shared by every engine that needs certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifySection {
    pub budget: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<f64>>,
    pub mpr_residual_tol: f64,
    pub convexity_grid: usize,
    pub convexity_tol: f64,
}

impl Default for CertifySection {
    fn default() -> Self {
        let d = CertifyOptions::default();
        CertifySection {
            budget: d.budget,
            levels: d.levels,
            mpr_residual_tol: MPR_RESIDUAL_TOL,
            convexity_grid: d.convexity_grid,
            convexity_tol: d.convexity_tol,
        }
    }
}

impl CertifySection {
    pub fn options(&self, seed: u64) -> CertifyOptions {
        CertifyOptions {
            budget: self.budget,
            seed,
            levels: self.levels.clone(),
            mpr_residual_tol: self.mpr_residual_tol,
            convexity_grid: self.convexity_grid,
            convexity_tol: self.convexity_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSection {
    pub certify: CertifySection,
    /// Conditions that must pass for the run to pass.
    pub conditions: Vec<String>,
    /// Utilities listed in the applicability table.
    pub utilities: Vec<String>,
}

impl Default for CheckSection {
    fn default() -> Self {
        CheckSection {
            certify: CertifySection::default(),
            conditions: super::engines::CONDITIONS.map(String::from).to_vec(),
            utilities: ["log", "power:0.5", "power:-1", "exp:1"].map(String::from).to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentSection {
    pub p: Vec<f64>,
    pub steps: Vec<usize>,
    pub paths: usize,
}

impl Default for MomentSection {
    fn default() -> Self {
        MomentSection {
            p: vec![2.0, 4.0],
            steps: vec![64, 128, 256],
            paths: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub paths: usize,
    pub steps: usize,
    /// `constant:f=..`, `feedback:<name>` or `adversarial:<csv>`.
    pub selector: String,
    /// Run the Girsanov check once per corner of the parameter box instead of
    /// once for `selector`.
    pub corners: bool,
    /// Write `paths.csv` with every simulated state and `log Z`.
    pub dump: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moments: Option<MomentSection>,
    pub certify: CertifySection,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            paths: 10_000,
            steps: 64,
            selector: "feedback:upper".into(),
            corners: false,
            dump: false,
            moments: None,
            certify: CertifySection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuperhedgeSection {
    /// Payoff expression in `X` and `max_X`.
    pub payoff: String,
    pub lattice: LatticeConfig,
    /// Adversarial paths for the hedge audit.
    pub verify_paths: usize,
    /// `c` in the audit slack `c·Δt`.
    pub slack_const: f64,
    /// Steps of a second, fully enumerated tree; 0 skips it.
    pub exhaustive_steps: usize,
    /// Price the refined lattice as well.
    pub refine: bool,
    /// Write the surface at every time step, not only `t = 0`.
    pub dump_all_times: bool,
}

impl Default for SuperhedgeSection {
    fn default() -> Self {
        SuperhedgeSection {
            payoff: "max(X - 1, 0)".into(),
            lattice: LatticeConfig::default(),
            verify_paths: 10_000,
            slack_const: 0.0,
            exhaustive_steps: 10,
            refine: true,
            dump_all_times: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValueSection {
    pub utility: String,
    /// Initial wealths for the primal value.
    pub x: Vec<f64>,
    /// Dual arguments; empty skips the dual recursion.
    pub y: Vec<f64>,
    pub lattice: LatticeConfig,
    pub refine: bool,
    /// Also solve on the wealth grid scaled by this factor and compare
    /// (power utilities only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scaling: Option<f64>,
    pub dump_all_times: bool,
    pub certify: CertifySection,
}

impl Default for ValueSection {
    fn default() -> Self {
        ValueSection {
            utility: "log".into(),
            x: vec![1.0],
            y: Vec::new(),
            lattice: LatticeConfig::default(),
            refine: true,
            scaling: None,
            dump_all_times: false,
            certify: CertifySection::default(),
        }
    }
}

/// Geometric grid `lo … hi` with `n` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeomGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GeomGrid {
    pub fn points(&self, key: &str) -> Result<Vec<f64>> {
        if !(self.lo > 0.0 && self.hi > self.lo && self.n >= 2) {
            return Err(Error::config(key, "need 0 < lo < hi and n >= 2"));
        }
        let (a, b) = (self.lo.ln(), self.hi.ln());
        Ok((0..self.n)
            .map(|i| match i {
                0 => self.lo,
                _ if i + 1 == self.n => self.hi,
                _ => (a + (b - a) * i as f64 / (self.n - 1) as f64).exp(),
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeakDualitySection {
    pub x: f64,
    pub y: f64,
    pub selector: String,
    pub paths: usize,
    pub steps: usize,
}

impl Default for WeakDualitySection {
    fn default() -> Self {
        WeakDualitySection {
            x: 50.0,
            y: 1.0 / 50.0,
            selector: "feedback:mpr_max".into(),
            paths: 20_000,
            steps: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualitySection {
    pub utility: String,
    pub x_grid: GeomGrid,
    pub y_grid: GeomGrid,
    /// Absolute gap tolerance; `None` uses `0.02·(1 + |u(1)|)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    pub lattice: LatticeConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weak_duality: Option<WeakDualitySection>,
    /// Write `conjugacy_u.csv` and `conjugacy_v.csv`.
    pub dump: bool,
    pub certify: CertifySection,
}

impl Default for DualitySection {
    fn default() -> Self {
        let g = GeomGrid { lo: 0.25, hi: 4.0, n: 9 };
        DualitySection {
            utility: "log".into(),
            x_grid: g,
            y_grid: g,
            tolerance: None,
            lattice: LatticeConfig::default(),
            weak_duality: None,
            dump: false,
            certify: CertifySection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superhedge: Option<SuperhedgeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<ValueSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duality: Option<DualitySection>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: DEFAULT_SEED,
            output: None,
            model: None,
            check: None,
            simulate: None,
            superhedge: None,
            value: None,
            duality: None,
        }
    }
}

/// The engine section selected for a run.
#[derive(Debug, Clone, PartialEq)]
pub enum Engine<'a> {
    Check(&'a CheckSection),
    Simulate(&'a SimulateSection),
    Superhedge(&'a SuperhedgeSection),
    Value(&'a ValueSection),
    Duality(&'a DualitySection),
}

impl Engine<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Engine::Check(_) => "check",
            Engine::Simulate(_) => "simulate",
            Engine::Superhedge(_) => "superhedge",
            Engine::Value(_) => "value",
            Engine::Duality(_) => "duality",
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let key = e
                .span()
                .map(|s| format!("bytes {}..{}", s.start, s.end))
                .unwrap_or_else(|| "config".into());
            Error::config(key, e.message().to_string())
        })
    }

    /// Read a config file; a relative model path is resolved against the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(ModelSource::File(p)) = &mut cfg.model {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    /// The single engine section, or a config error naming the problem.
    pub fn engine(&self) -> Result<Engine<'_>> {
        let mut found = Vec::new();
        if let Some(s) = &self.check {
            found.push(Engine::Check(s));
        }
        if let Some(s) = &self.simulate {
            found.push(Engine::Simulate(s));
        }
        if let Some(s) = &self.superhedge {
            found.push(Engine::Superhedge(s));
        }
        if let Some(s) = &self.value {
            found.push(Engine::Value(s));
        }
        if let Some(s) = &self.duality {
            found.push(Engine::Duality(s));
        }
        match found.len() {
            1 => Ok(found.pop().expect("one section")),
            0 => Err(Error::config("engine", "no engine section (check, simulate, superhedge, value, duality)")),
            _ => Err(Error::config(
                "engine",
                format!(
                    "exactly one engine section allowed, found {}",
                    found.iter().map(Engine::name).collect::<Vec<_>>().join(", ")
                ),
            )),
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::config("model", "missing: pass --model or set `model` in the config"))?
            .load()
    }

    pub fn build_model(&self) -> Result<UncertaintySpec> {
        self.model_config()?.build()
    }

    /// Replace a model file reference by its contents, so the config is
    /// self-contained.
    pub fn inline_model(&mut self) -> Result<()> {
        if let Some(ModelSource::File(_)) = &self.model {
            self.model = Some(ModelSource::Inline(Box::new(self.model_config()?)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn engine_sections_are_exclusive() {
        let mut c = ExperimentConfig::default();
        assert!(c.engine().is_err());
        c.check = Some(CheckSection::default());
        assert_eq!(c.engine().unwrap().name(), "check");
        c.value = Some(ValueSection::default());
        let err = c.engine().unwrap_err().to_string();
        assert!(err.contains("check, value"), "{err}");
    }

    #[test]
    fn full_config_round_trips_through_toml() {
        let mut c = ExperimentConfig {
            model: Some(ModelSource::Inline(Box::new(
                crate::model::Builtin::GbmInterval { b: [0.05, 0.1], a: [0.04, 0.09] }.to_config(1.0, vec![1.0]),
            ))),
            ..Default::default()
        };
        c.duality = Some(DualitySection {
            weak_duality: Some(WeakDualitySection::default()),
            ..Default::default()
        });
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml("seed = 1\n[value]\nutilty = \"log\"\n").unwrap_err();
        assert!(err.to_string().contains("utilty"), "{err}");
    }

    #[test]
    fn geometric_grid_hits_its_ends() {
        let g = GeomGrid { lo: 0.25, hi: 4.0, n: 5 }.points("g").unwrap();
        assert_eq!(g[0], 0.25);
        assert_eq!(g[4], 4.0);
        assert!((g[2] - 1.0).abs() < 1e-15);
    }
}
