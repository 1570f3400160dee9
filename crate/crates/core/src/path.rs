//! Discrete trajectories on a uniform time grid.

use serde::{Deserialize, Serialize};

/// An owned path sampled at `0, dt, 2dt, …`; `data` is row-major `(len × dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub dt: f64,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Path {
    pub fn constant(x: &[f64], dt: f64, len: usize) -> Self {
        let mut data = Vec::with_capacity(x.len() * len);
        for _ in 0..len {
            data.extend_from_slice(x);
        }
        Path {
            dt,
            dim: x.len(),
            data,
        }
    }

    /// A one-point path, i.e. the prefix at `t = 0`.
    pub fn start(x0: &[f64], dt: f64) -> Self {
        Self::constant(x0, dt, 1)
    }

    pub fn view(&self) -> PathView<'_> {
        PathView {
            dt: self.dt,
            dim: self.dim,
            data: &self.data,
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim);
        self.data.extend_from_slice(x);
    }
}

/// Borrowed prefix of a path; the terminal sample is `X(t)`.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    pub dt: f64,
    pub dim: usize,
    pub data: &'a [f64],
}

impl<'a> PathView<'a> {
    pub fn new(dt: f64, dim: usize, data: &'a [f64]) -> Self {
        debug_assert!(dim > 0 && data.len().is_multiple_of(dim) && !data.is_empty());
        PathView { dt, dim, data }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, k: usize) -> &'a [f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn initial(&self) -> &'a [f64] {
        self.point(0)
    }

    pub fn terminal(&self) -> &'a [f64] {
        self.point(self.len() - 1)
    }

    /// Component `i` at time `s`, linearly interpolated; `s` is clamped to the
    /// sampled range.
    pub fn component_at(&self, i: usize, s: f64) -> f64 {
        let last = self.len() - 1;
        if last == 0 || s <= 0.0 {
            return self.data[i];
        }
        let pos = s / self.dt;
        if pos >= last as f64 {
            return self.data[last * self.dim + i];
        }
        let k = pos.floor() as usize;
        let w = pos - k as f64;
        let lo = self.data[k * self.dim + i];
        let hi = self.data[(k + 1) * self.dim + i];
        lo + w * (hi - lo)
    }

    /// `sup_s ‖ω(s)‖` over the sampled points.
    pub fn sup_norm(&self) -> f64 {
        self.data
            .chunks(self.dim)
            .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Prefix truncated to the first `len` samples.
    pub fn truncated(&self, len: usize) -> PathView<'a> {
        PathView {
            dt: self.dt,
            dim: self.dim,
            data: &self.data[..len * self.dim],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_between_samples() {
        let p = Path {
            dt: 0.5,
            dim: 1,
            data: vec![0.0, 1.0, 3.0],
        };
        let v = p.view();
        assert_eq!(v.component_at(0, 0.25), 0.5);
        assert_eq!(v.component_at(0, 0.75), 2.0);
        assert_eq!(v.component_at(0, -1.0), 0.0);
        assert_eq!(v.component_at(0, 7.0), 3.0);
        assert_eq!(v.sup_norm(), 3.0);
    }
}
