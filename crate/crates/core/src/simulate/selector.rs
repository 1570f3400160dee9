//! Parameter selectors: predictable policies `(t, prefix) ↦ f ∈ F`.

use std::fmt;
use std::path::Path as FsPath;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::UncertaintySpec;
use crate::path::PathView;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    ConstantParam,
    StateFeedback,
    Adversarial,
}

type Policy = dyn Fn(f64, &PathView<'_>, &mut [f64]) + Send + Sync;

/// A selector writes its choice into a buffer; the simulator clamps the result
/// into the parameter box and counts clamping events.
#[derive(Clone)]
pub struct Selector {
    kind: SelectorKind,
    label: String,
    policy: Arc<Policy>,
}

impl fmt::Debug for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Selector").field("kind", &self.kind).field("label", &self.label).finish()
    }
}

impl Selector {
    pub fn constant(f: Vec<f64>) -> Self {
        let label = format!("constant:f={}", join(&f));
        Selector {
            kind: SelectorKind::ConstantParam,
            label,
            policy: Arc::new(move |_, _, out| out.copy_from_slice(&f)),
        }
    }

    pub fn feedback<P>(label: impl Into<String>, policy: P) -> Self
    where
        P: Fn(f64, &PathView<'_>, &mut [f64]) + Send + Sync + 'static,
    {
        Selector {
            kind: SelectorKind::StateFeedback,
            label: format!("feedback:{}", label.into()),
            policy: Arc::new(policy),
        }
    }

    pub fn adversarial(table: AdversaryTable, label: impl Into<String>) -> Self {
        let table = Arc::new(table);
        Selector {
            kind: SelectorKind::Adversarial,
            label: format!("adversarial:{}", label.into()),
            policy: Arc::new(move |t, p, out| out.copy_from_slice(table.lookup(t, p.terminal()[0]))),
        }
    }

    /// Builtin feedback rules:
    ///
    /// - `upper`, `lower`: the corresponding box corner;
    /// - `threshold`: `upper` while the first state component is at or above
    ///   its start value, `lower` otherwise;
    /// - `mpr_max`, `mpr_min`: the box corner with the largest (smallest)
    ///   `⟨θ, aθ⟩` at the current point.
    pub fn named_feedback(spec: &UncertaintySpec, name: &str) -> Result<Self> {
        let lo = spec.param_box.lower().to_vec();
        let hi = spec.param_box.upper().to_vec();
        match name {
            "upper" => Ok(Self::feedback(name, move |_, _, out| out.copy_from_slice(&hi))),
            "lower" => Ok(Self::feedback(name, move |_, _, out| out.copy_from_slice(&lo))),
            "threshold" => {
                let x0 = spec.x0[0];
                Ok(Self::feedback(name, move |_, p, out| {
                    out.copy_from_slice(if p.terminal()[0] >= x0 { &hi } else { &lo })
                }))
            }
            "mpr_max" | "mpr_min" => {
                let sign = if name == "mpr_max" { 1.0 } else { -1.0 };
                let spec = spec.clone();
                let corners = spec.param_box.corners();
                Ok(Self::feedback(name, move |t, p, out| {
                    let d = spec.dim();
                    let mut b = vec![0.0; d];
                    let mut a = vec![0.0; d * d];
                    let mut at = vec![0.0; d];
                    let mut best = (f64::NEG_INFINITY, 0);
                    for (i, f) in corners.iter().enumerate() {
                        if spec.eval_into(f, t, p, &mut b, &mut a).is_err() {
                            continue;
                        }
                        let (theta, _) = linalg::pinv_solve(&a, &b, d);
                        linalg::mat_vec(&a, &theta, d, &mut at);
                        let e = sign * linalg::dot(&theta, &at);
                        if e > best.0 {
                            best = (e, i);
                        }
                    }
                    out.copy_from_slice(&corners[best.1]);
                }))
            }
            _ => Err(Error::config(
                "selector",
                format!("unknown feedback rule `{name}` (upper | lower | threshold | mpr_max | mpr_min)"),
            )),
        }
    }

    /// Parse `constant:f=v1,v2,..`, `feedback:<name>` or `adversarial:<csv file>`.
    pub fn parse(spec: &UncertaintySpec, s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::config("selector", format!("expected `kind:argument`, got `{s}`")))?;
        match kind {
            "constant" => {
                let values = rest.strip_prefix("f=").unwrap_or(rest);
                let f = values
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<f64>, _>>()
                    .map_err(|e| Error::config("selector", format!("bad parameter list `{values}`: {e}")))?;
                if f.len() != spec.param_box.dims() {
                    return Err(Error::config(
                        "selector",
                        format!("expected {} parameters, got {}", spec.param_box.dims(), f.len()),
                    ));
                }
                if !spec.param_box.contains(&f) {
                    return Err(Error::ParamOutOfBox { param: f });
                }
                Ok(Self::constant(f))
            }
            "feedback" => Self::named_feedback(spec, rest),
            "adversarial" => {
                let table = AdversaryTable::from_csv(FsPath::new(rest), spec.param_box.dims())?;
                Ok(Self::adversarial(table, rest))
            }
            _ => Err(Error::config("selector", format!("unknown selector kind `{kind}`"))),
        }
    }

    pub fn kind(&self) -> SelectorKind {
        self.kind
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Write the clamped choice into `out`; returns whether clamping moved it.
    pub fn select(&self, spec: &UncertaintySpec, t: f64, prefix: &PathView<'_>, out: &mut [f64]) -> bool {
        (self.policy)(t, prefix, out);
        let moved = spec.param_box.clamp(out);
        if moved {
            log::debug!("selector `{}` clamped into the parameter box at t = {t}", self.label);
        }
        moved
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// A tabulated policy on a one-dimensional state grid: row `k` applies on
/// `[t_k, t_{k+1})`, and the nearest state node is used.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdversaryTable {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    /// `params[k][j]` for time row `k` and state node `j`.
    pub params: Vec<Vec<Vec<f64>>>,
}

impl AdversaryTable {
    pub fn new(times: Vec<f64>, states: Vec<f64>, params: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let ok = !times.is_empty()
            && !states.is_empty()
            && times.windows(2).all(|w| w[0] < w[1])
            && states.windows(2).all(|w| w[0] < w[1])
            && params.len() == times.len()
            && params.iter().all(|row| row.len() == states.len());
        if !ok {
            return Err(Error::config("adversary", "table must be a full, sorted time × state grid"));
        }
        Ok(AdversaryTable { times, states, params })
    }

    pub fn lookup(&self, t: f64, x: f64) -> &[f64] {
        let k = self.times.partition_point(|&s| s <= t * (1.0 + 1e-12) + 1e-15).saturating_sub(1);
        let j = match self.states.partition_point(|&s| s < x) {
            0 => 0,
            n if n == self.states.len() => n - 1,
            n => {
                if x - self.states[n - 1] <= self.states[n] - x {
                    n - 1
                } else {
                    n
                }
            }
        };
        &self.params[k][j]
    }

    /// Read `t,state,f1..fk` rows (any header line is skipped).
    pub fn from_csv(path: &FsPath, dims: usize) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        let mut rows: Vec<(f64, f64, Vec<f64>)> = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::config(format!("{}:{}", path.display(), i + 2), e.to_string()))?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::config(format!("{}:{}", path.display(), i + 2), e.to_string()))?;
            if vals.len() != 2 + dims {
                return Err(Error::config(
                    format!("{}:{}", path.display(), i + 2),
                    format!("expected {} columns, got {}", 2 + dims, vals.len()),
                ));
            }
            rows.push((vals[0], vals[1], vals[2..].to_vec()));
        }
        let mut times: Vec<f64> = rows.iter().map(|r| r.0).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let mut states: Vec<f64> = rows.iter().map(|r| r.1).collect();
        states.sort_by(f64::total_cmp);
        states.dedup();
        let mut params = vec![vec![Vec::new(); states.len()]; times.len()];
        for (t, x, f) in rows {
            let k = times.partition_point(|&s| s < t);
            let j = states.partition_point(|&s| s < x);
            params[k][j] = f;
        }
        if params.iter().flatten().any(|f| f.is_empty()) {
            return Err(Error::config(path.display().to_string(), "adversary table has missing (t, state) cells"));
        }
        Self::new(times, states, params)
    }
}
