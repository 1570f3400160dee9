//! Lattice configuration, trinomial stencils and 1-D interpolation.
//!
//! One time step moves the state by `{−h, 0, +h}` with probabilities matched
//! to the first two moments of the increment:
//!
//! ```text
//! m₁ = b Δt,   m₂ = a Δt + b² Δt²
//! p_± = (m₂/h² ± m₁/h) / 2,   p₀ = 1 − m₂/h²,   h² = stretch · a_max · Δt
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Structure, UncertaintySpec};
use crate::path::PathView;

/// Probabilities within this distance of `[0, 1]` are rounding noise.
const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Linear,
    /// Piecewise cubic Hermite with Fritsch–Carlson slopes.
    #[default]
    MonotoneCubic,
}

/// Arithmetic state lattice `x₀ + j h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct StateGrid {
    /// Truncate the tree at `|j| ≤ half_width`; `None` keeps the full tree.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_width: Option<usize>,
    /// `h² / (a_max Δt)`; `None` uses the engine default (1 for superhedging,
    /// 1.5 for the utility problems).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stretch: Option<f64>,
    /// Fixed spacing `h`, overriding `stretch`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

/// Geometric wealth grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WealthGrid {
    /// Defaults to `1e-6 · min(x)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    /// Defaults to `1e3 · max(x)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    pub nodes: usize,
}

impl Default for WealthGrid {
    fn default() -> Self {
        WealthGrid {
            min: None,
            max: None,
            nodes: 201,
        }
    }
}

/// Uniform grid in `η = log(y Z)` for the dual recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityGrid {
    /// Tabulated range of `y`.
    pub y_min: f64,
    pub y_max: f64,
    pub step: f64,
    pub max_nodes: usize,
}

impl Default for DensityGrid {
    fn default() -> Self {
        DensityGrid {
            y_min: 1.0 / 16.0,
            y_max: 16.0,
            step: 0.01,
            max_nodes: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeConfig {
    pub n_steps: usize,
    pub state_grid: StateGrid,
    pub wealth_grid: WealthGrid,
    pub density_grid: DensityGrid,
    pub param_grid_per_dim: usize,
    pub interpolation: Interpolation,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig {
            n_steps: 64,
            state_grid: StateGrid::default(),
            wealth_grid: WealthGrid::default(),
            density_grid: DensityGrid::default(),
            param_grid_per_dim: 9,
            interpolation: Interpolation::default(),
        }
    }
}

impl LatticeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::config("lattice.n_steps", "must be >= 1"));
        }
        if self.param_grid_per_dim < 2 {
            return Err(Error::config("lattice.param_grid_per_dim", "must be >= 2"));
        }
        let w = &self.wealth_grid;
        if w.nodes < 3 {
            return Err(Error::config("lattice.wealth_grid.nodes", "must be >= 3"));
        }
        if let (Some(lo), Some(hi)) = (w.min, w.max) {
            if !(lo > 0.0 && hi > lo) {
                return Err(Error::config("lattice.wealth_grid", format!("need 0 < min < max, got [{lo}, {hi}]")));
            }
        }
        if w.min.is_some_and(|m| !(m > 0.0)) {
            return Err(Error::config("lattice.wealth_grid.min", "must be positive"));
        }
        let g = &self.density_grid;
        if !(g.y_min > 0.0 && g.y_max > g.y_min && g.step > 0.0) {
            return Err(Error::config("lattice.density_grid", "need 0 < y_min < y_max and step > 0"));
        }
        if let Some(s) = self.state_grid.stretch {
            if !(s >= 1.0 && s.is_finite()) {
                return Err(Error::config("lattice.state_grid.stretch", format!("must be >= 1, got {s}")));
            }
        }
        if self.state_grid.step.is_some_and(|h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::config("lattice.state_grid.step", "must be positive"));
        }
        Ok(())
    }

    /// Same grids at twice the resolution: `2n` steps and `2N − 1` wealth nodes.
    pub fn refined(&self) -> LatticeConfig {
        let mut c = self.clone();
        c.n_steps *= 2;
        c.wealth_grid.nodes = 2 * c.wealth_grid.nodes - 1;
        c.density_grid.step /= 2.0;
        c.density_grid.max_nodes *= 2;
        if let Some(hw) = c.state_grid.half_width.as_mut() {
            *hw *= 2;
        }
        c
    }
}

/// `{start + i·step : i < n}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniformGrid {
    pub start: f64,
    pub step: f64,
    pub n: usize,
}

impl UniformGrid {
    pub fn spanning(lo: f64, hi: f64, n: usize) -> Self {
        UniformGrid {
            start: lo,
            step: (hi - lo) / (n - 1) as f64,
            n,
        }
    }

    pub fn at(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.end()
        } else {
            self.start + i as f64 * self.step
        }
    }

    pub fn end(&self) -> f64 {
        self.start + (self.n - 1) as f64 * self.step
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.at(i)).collect()
    }
}

/// Tabulated values on a uniform grid, extrapolated linearly outside it.
#[derive(Debug, Clone)]
pub struct Curve<'a> {
    grid: UniformGrid,
    values: &'a [f64],
    slopes: Option<Vec<f64>>,
}

impl<'a> Curve<'a> {
    pub fn new(grid: UniformGrid, values: &'a [f64], interpolation: Interpolation) -> Self {
        debug_assert_eq!(values.len(), grid.n);
        let slopes = match interpolation {
            Interpolation::Linear => None,
            Interpolation::MonotoneCubic => Some(pchip_slopes(values, grid.step)),
        };
        Curve { grid, values, slopes }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let g = &self.grid;
        let v = self.values;
        let s = (x - g.start) / g.step;
        if s <= 0.0 {
            return v[0] + s * (v[1] - v[0]);
        }
        let last = g.n - 1;
        if s >= last as f64 {
            return v[last] + (s - last as f64) * (v[last] - v[last - 1]);
        }
        let i = (s.floor() as usize).min(last - 1);
        let u = s - i as f64;
        match &self.slopes {
            None => v[i] + u * (v[i + 1] - v[i]),
            Some(m) => {
                let (u2, u3) = (u * u, u * u * u);
                let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
                let h10 = u3 - 2.0 * u2 + u;
                let h01 = -2.0 * u3 + 3.0 * u2;
                let h11 = u3 - u2;
                h00 * v[i] + h10 * g.step * m[i] + h01 * v[i + 1] + h11 * g.step * m[i + 1]
            }
        }
    }
}

/// The curves of one slice, indexed by lattice node `j ∈ [−width, width]`,
/// with one-sided linear extrapolation past a truncated edge. A collapsed
/// lattice has a single curve serving every `j`.
pub(crate) struct SliceCurves<'a> {
    width: i64,
    collapsed: bool,
    curves: Vec<Curve<'a>>,
}

impl<'a> SliceCurves<'a> {
    pub fn new(lattice: &StateLattice, k: usize, grid: UniformGrid, values: &'a [f64], interpolation: Interpolation) -> Self {
        let curves: Vec<Curve<'a>> = values.chunks(grid.n).map(|v| Curve::new(grid, v, interpolation)).collect();
        let width = lattice.width(k);
        debug_assert_eq!(curves.len(), 2 * width + 1);
        SliceCurves {
            width: width as i64,
            collapsed: lattice.collapsed,
            curves,
        }
    }

    pub fn eval(&self, j: i64, x: f64) -> f64 {
        if self.collapsed {
            return self.curves[0].eval(x);
        }
        if j.abs() <= self.width {
            return self.curves[(j + self.width) as usize].eval(x);
        }
        let s = j.signum();
        let inward = j - s;
        let second = (inward - s).clamp(-self.width, self.width);
        2.0 * self.curves[(inward + self.width) as usize].eval(x) - self.curves[(second + self.width) as usize].eval(x)
    }
}

fn pchip_slopes(v: &[f64], step: f64) -> Vec<f64> {
    let n = v.len();
    let d: Vec<f64> = v.windows(2).map(|w| (w[1] - w[0]) / step).collect();
    let mut m = vec![0.0; n];
    m[0] = d[0];
    m[n - 1] = d[n - 2];
    for i in 1..n - 1 {
        let (a, b) = (d[i - 1], d[i]);
        m[i] = if a * b <= 0.0 { 0.0 } else { 2.0 / (1.0 / a + 1.0 / b) };
    }
    m
}

/// Moment-matched trinomial probabilities `[p₋, p₀, p₊]`.
pub fn trinomial(b: f64, a: f64, dt: f64, h: f64) -> Option<[f64; 3]> {
    let m1 = b * dt / h;
    let m2 = (a * dt + b * b * dt * dt) / (h * h);
    let mut p = [0.5 * (m2 - m1), 1.0 - m2, 0.5 * (m2 + m1)];
    for q in p.iter_mut() {
        if !(*q >= -PROB_EPS && *q <= 1.0 + PROB_EPS) {
            return None;
        }
        *q = q.clamp(0.0, 1.0);
    }
    Some(p)
}

/// One parameter choice at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub param: usize,
    pub b: f64,
    pub a: f64,
    pub p: [f64; 3],
}

/// The state lattice shared by all recursions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateLattice {
    pub n_steps: usize,
    pub dt: f64,
    pub h: f64,
    pub x0: f64,
    pub half_width: usize,
    /// Constant-structure specs ignore the state: one node per slice.
    pub collapsed: bool,
    #[serde(skip)]
    pub params: Vec<Vec<f64>>,
}

impl StateLattice {
    /// Build the lattice for `spec` (one-dimensional, not path-dependent).
    /// The spacing is taken from the largest `a` over the parameter grid at
    /// `(0, x₀)` unless fixed in the config.
    pub fn new(spec: &UncertaintySpec, cfg: &LatticeConfig, default_stretch: f64, collapse: bool) -> Result<Self> {
        cfg.validate()?;
        if spec.dim() != 1 {
            return Err(Error::Unsupported(format!(
                "lattice engines need a one-dimensional state, got d = {}",
                spec.dim()
            )));
        }
        if spec.structure() == Structure::PathDependent {
            return Err(Error::Unsupported(format!(
                "`{}` is path-dependent; lattice value functions need a Markovian spec",
                spec.name
            )));
        }
        let n_steps = cfg.n_steps;
        let dt = spec.horizon / n_steps as f64;
        let params = spec.param_box.grid(cfg.param_grid_per_dim);
        let h = match cfg.state_grid.step {
            Some(h) => h,
            None => {
                let x0 = [spec.x0[0]];
                let view = PathView::new(dt, 1, &x0);
                let (mut b, mut a) = ([0.0], [0.0]);
                let mut a_max = 0.0_f64;
                for f in &params {
                    spec.eval_into(f, 0.0, &view, &mut b, &mut a)?;
                    a_max = a_max.max(a[0]);
                }
                if a_max <= 0.0 {
                    return Err(Error::GridTooCoarse {
                        reason: "diffusion vanishes on the whole parameter grid at x0".into(),
                        suggestion: "set lattice.state_grid.step explicitly".into(),
                    });
                }
                (cfg.state_grid.stretch.unwrap_or(default_stretch) * a_max * dt).sqrt()
            }
        };
        Ok(StateLattice {
            n_steps,
            dt,
            h,
            x0: spec.x0[0],
            half_width: cfg.state_grid.half_width.unwrap_or(n_steps).min(n_steps),
            collapsed: collapse && spec.structure() == Structure::Constant,
            params,
        })
    }

    /// Nodes at step `k` are `j ∈ [−w, w]` with `w = width(k)`.
    pub fn width(&self, k: usize) -> usize {
        if self.collapsed {
            0
        } else {
            k.min(self.half_width)
        }
    }

    pub fn state(&self, j: i64) -> f64 {
        self.x0 + j as f64 * self.h
    }

    pub fn full_tree(&self) -> bool {
        self.collapsed || self.half_width >= self.n_steps
    }

    /// Stencils for every grid parameter at `(t_k, x_j)`.
    pub fn stencils(&self, spec: &UncertaintySpec, k: usize, j: i64, zero_drift: bool) -> Result<Vec<Stencil>> {
        let t = k as f64 * self.dt;
        let x = [self.state(j)];
        let view = PathView::new(self.dt, 1, &x);
        let (mut b, mut a) = ([0.0], [0.0]);
        let mut out = Vec::with_capacity(self.params.len());
        for (i, f) in self.params.iter().enumerate() {
            spec.eval_into(f, t, &view, &mut b, &mut a)?;
            let drift = if zero_drift { 0.0 } else { b[0] };
            let p = trinomial(drift, a[0], self.dt, self.h).ok_or_else(|| self.too_coarse(drift, a[0], t, x[0]))?;
            out.push(Stencil {
                param: i,
                b: drift,
                a: a[0],
                p,
            });
        }
        Ok(out)
    }

    /// Stencils for all nodes of all steps `k < n`, indexed `[k][j + width(k)]`.
    pub fn all_stencils(&self, spec: &UncertaintySpec, zero_drift: bool) -> Result<Vec<Vec<Vec<Stencil>>>> {
        if self.collapsed {
            let s = self.stencils(spec, 0, 0, zero_drift)?;
            return Ok(vec![vec![s]; self.n_steps]);
        }
        (0..self.n_steps)
            .map(|k| {
                let w = self.width(k) as i64;
                (-w..=w).map(|j| self.stencils(spec, k, j, zero_drift)).collect()
            })
            .collect()
    }

    fn too_coarse(&self, b: f64, a: f64, t: f64, x: f64) -> Error {
        let m2 = a * self.dt + b * b * self.dt * self.dt;
        let need_h2 = m2;
        let max_h = if b != 0.0 { m2 / (b.abs() * self.dt) } else { f64::INFINITY };
        let suggestion = if self.h * self.h < need_h2 {
            format!(
                "raise lattice.state_grid.stretch by a factor of at least {:.3}",
                need_h2 / (self.h * self.h)
            )
        } else {
            format!(
                "the spacing h = {:.4e} exceeds a/|b| ≈ {:.4e}; increase n_steps or lower the stretch",
                self.h, max_h
            )
        };
        Error::GridTooCoarse {
            reason: format!("trinomial probabilities leave [0, 1] at t = {t}, x = {x} (b = {b}, a = {a})"),
            suggestion,
        }
    }
}
