//! Tabulated value functions with their policies.

use std::path::Path as FsPath;

use serde::Serialize;

use super::lattice::{Curve, Interpolation, StateLattice, UniformGrid};
use crate::error::{Error, Result};
use crate::simulate::AdversaryTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKind {
    PrimalU,
    DualV,
    Superhedge,
}

/// How the second axis of a slice is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Axis {
    /// No second axis (superhedging prices).
    None,
    /// Geometric wealth grid `exp(log_grid)`.
    Wealth { log_grid: UniformGrid },
    /// `y·Z` on the grid `exp(log_grid)`.
    ScaledDensity { log_grid: UniformGrid },
}

impl Axis {
    pub fn len(&self) -> usize {
        match self {
            Axis::None => 1,
            Axis::Wealth { log_grid } | Axis::ScaledDensity { log_grid } => log_grid.n,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn log_grid(&self) -> Option<UniformGrid> {
        match self {
            Axis::None => None,
            Axis::Wealth { log_grid } | Axis::ScaledDensity { log_grid } => Some(*log_grid),
        }
    }

    /// Point values of the axis (empty for [`Axis::None`]).
    pub fn points(&self) -> Vec<f64> {
        self.log_grid()
            .map(|g| g.points().into_iter().map(f64::exp).collect())
            .unwrap_or_default()
    }
}

/// One time slice: `values[node · axis_len + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub t: f64,
    /// State of each node.
    pub states: Vec<f64>,
    /// Running maximum per node, only for running-maximum payoffs.
    pub running_max: Vec<f64>,
    pub values: Vec<f64>,
    /// Hedge ratio per entry; empty where no trading decision is tabulated.
    pub hedge: Vec<f64>,
    /// Adversary parameter per entry, `values.len() × n_params`; empty at `T`.
    pub adversary: Vec<f64>,
}

impl Slice {
    pub fn n_nodes(&self) -> usize {
        self.states.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueSurface {
    pub kind: SurfaceKind,
    pub lattice: StateLattice,
    pub axis: Axis,
    pub interpolation: Interpolation,
    pub n_params: usize,
    /// Tabulated domain of the second axis, where values are trusted.
    pub domain: Option<(f64, f64)>,
    /// Indexed by time step, `0..=n_steps`.
    pub slices: Vec<Slice>,
}

impl ValueSurface {
    /// A surface holding a single `t = 0` curve on a geometric axis, for
    /// closed-form comparisons.
    pub fn from_curve(kind: SurfaceKind, lo: f64, hi: f64, nodes: usize, f: impl FnMut(f64) -> f64) -> Self {
        let log_grid = UniformGrid::spanning(lo.ln(), hi.ln(), nodes);
        let axis = match kind {
            SurfaceKind::DualV => Axis::ScaledDensity { log_grid },
            _ => Axis::Wealth { log_grid },
        };
        let values = axis.points().into_iter().map(f).collect();
        ValueSurface {
            kind,
            lattice: StateLattice {
                n_steps: 0,
                dt: 0.0,
                h: 0.0,
                x0: 0.0,
                half_width: 0,
                collapsed: true,
                params: Vec::new(),
            },
            axis,
            interpolation: Interpolation::Linear,
            n_params: 0,
            domain: Some((lo, hi)),
            slices: vec![Slice {
                t: 0.0,
                states: vec![0.0],
                running_max: Vec::new(),
                values,
                hedge: Vec::new(),
                adversary: Vec::new(),
            }],
        }
    }

    pub fn initial(&self) -> &Slice {
        &self.slices[0]
    }

    /// The `t = 0` value at the root node (the price for superhedging).
    pub fn root_value(&self) -> f64 {
        self.slices[0].values[0]
    }

    /// The `t = 0` curve at the root node.
    pub fn initial_curve(&self) -> &[f64] {
        &self.slices[0].values[..self.axis.len()]
    }

    /// Interpolated `t = 0` root value at axis point `z` (wealth or `y`).
    pub fn eval_initial(&self, z: f64) -> Result<f64> {
        let grid = self
            .axis
            .log_grid()
            .ok_or_else(|| Error::Domain("surface has no wealth or density axis".into()))?;
        if let Some((lo, hi)) = self.domain {
            if !(z >= lo * (1.0 - 1e-12) && z <= hi * (1.0 + 1e-12)) {
                return Err(Error::DomainMismatch(format!("{z} outside the tabulated range [{lo}, {hi}]")));
            }
        }
        Ok(Curve::new(grid, self.initial_curve(), self.interpolation).eval(z.ln()))
    }

    /// Tabulated `t = 0` root points `(z, value)` inside the trusted domain.
    pub fn initial_points(&self) -> Vec<(f64, f64)> {
        let (lo, hi) = self.domain.unwrap_or((0.0, f64::INFINITY));
        self.axis
            .points()
            .into_iter()
            .zip(self.initial_curve().iter().copied())
            .filter(|(z, _)| *z >= lo * (1.0 - 1e-12) && *z <= hi * (1.0 + 1e-12))
            .collect()
    }

    /// `t = 0` root hedge ratios per axis point.
    pub fn initial_hedge(&self) -> &[f64] {
        let s = &self.slices[0];
        if s.hedge.is_empty() {
            &[]
        } else {
            &s.hedge[..self.axis.len()]
        }
    }

    /// Adversary choices as a `(t, state)` table for the simulator. For
    /// surfaces with a wealth axis the column nearest `axis_ref` is used.
    pub fn adversary_table(&self, axis_ref: Option<f64>) -> Result<AdversaryTable> {
        if self.slices.len() < 2 || self.n_params == 0 {
            return Err(Error::Domain("surface has no adversary policy".into()));
        }
        if self.slices.iter().any(|s| !s.running_max.is_empty()) {
            return Err(Error::Unsupported("adversary tables for running-maximum payoffs".into()));
        }
        let col = match (self.axis.log_grid(), axis_ref) {
            (None, _) => 0,
            (Some(g), Some(z)) => (((z.ln() - g.start) / g.step).round().max(0.0) as usize).min(g.n - 1),
            (Some(_), None) => return Err(Error::Domain("pick a wealth or y column for the adversary table".into())),
        };
        let decisions = &self.slices[..self.slices.len() - 1];
        let widest = decisions.iter().max_by_key(|s| s.n_nodes()).expect("non-empty");
        let states = widest.states.clone();
        let m = self.axis.len();
        let k_dims = self.n_params;
        let params = decisions
            .iter()
            .map(|s| {
                states
                    .iter()
                    .map(|&x| {
                        let node = nearest(&s.states, x);
                        let e = node * m + col;
                        s.adversary[e * k_dims..(e + 1) * k_dims].to_vec()
                    })
                    .collect()
            })
            .collect();
        AdversaryTable::new(decisions.iter().map(|s| s.t).collect(), states, params)
    }

    /// Write `t,state[,running_max],wealth,value,H,f1..fk`. Only the initial
    /// slice is written unless `all_times` is set.
    pub fn write_csv(&self, path: &FsPath, all_times: bool) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path.display().to_string(), e.into()))?;
        let running = self.slices.iter().any(|s| !s.running_max.is_empty());
        let mut header = vec!["t".to_string(), "state".to_string()];
        if running {
            header.push("running_max".into());
        }
        header.extend(["wealth", "value", "H"].map(String::from));
        header.extend((1..=self.n_params).map(|i| format!("f{i}")));
        let io = |e: csv::Error| Error::io(path.display().to_string(), e.into());
        w.write_record(&header).map_err(io)?;
        let axis = self.axis.points();
        let m = self.axis.len();
        let take = if all_times { self.slices.len() } else { 1 };
        for s in &self.slices[..take] {
            for node in 0..s.n_nodes() {
                for i in 0..m {
                    let e = node * m + i;
                    let mut row = vec![fmt(s.t), fmt(s.states[node])];
                    if running {
                        row.push(s.running_max.get(node).map(|v| fmt(*v)).unwrap_or_default());
                    }
                    row.push(axis.get(i).map(|v| fmt(*v)).unwrap_or_default());
                    row.push(fmt(s.values[e]));
                    row.push(s.hedge.get(e).map(|v| fmt(*v)).unwrap_or_default());
                    for p in 0..self.n_params {
                        row.push(s.adversary.get(e * self.n_params + p).map(|v| fmt(*v)).unwrap_or_default());
                    }
                    w.write_record(&row).map_err(io)?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn nearest(xs: &[f64], x: f64) -> usize {
    xs.iter()
        .enumerate()
        .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}
