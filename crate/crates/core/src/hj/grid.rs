use serde::{Deserialize, Serialize};

use crate::dynamics::MAX_STATE;
use crate::error::{Error, Result};

/// Rectangular grid with both end points included on every axis.
///
/// On a periodic axis the last node is the same point as the first, so the
/// period is `upper − lower`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points: Vec<usize>,
    pub periodic: Vec<bool>,
}

impl Grid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, points: Vec<usize>, periodic: Vec<bool>) -> Result<Self> {
        let g = Grid { lower, upper, points, periodic };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.lower.len();
        if d == 0 || d > MAX_STATE || self.upper.len() != d || self.points.len() != d || self.periodic.len() != d {
            return Err(Error::Config(format!("grid axes must agree and number 1..={MAX_STATE}")));
        }
        for i in 0..d {
            if self.points[i] < 3 {
                return Err(Error::Config(format!("grid axis {i} needs at least 3 points")));
            }
            if !(self.lower[i].is_finite() && self.upper[i].is_finite() && self.lower[i] < self.upper[i]) {
                return Err(Error::Config(format!("grid axis {i} needs finite lower < upper")));
            }
        }
        if self.node_count() > (1usize << 31) {
            return Err(Error::Config("grid too large".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn spacing(&self, d: usize) -> f64 {
        (self.upper[d] - self.lower[d]) / (self.points[d] - 1) as f64
    }

    pub fn node_count(&self) -> usize {
        self.points.iter().product()
    }

    /// Row-major strides; the last axis varies fastest.
    pub fn strides(&self) -> Vec<usize> {
        let d = self.dims();
        let mut s = vec![1; d];
        for i in (0..d.saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.points[i + 1];
        }
        s
    }

    pub fn coord(&self, d: usize, i: usize) -> f64 {
        if i == self.points[d] - 1 {
            self.upper[d]
        } else {
            self.lower[d] + self.spacing(d) * i as f64
        }
    }

    /// Multi-index of a flat node index.
    pub fn unflatten(&self, mut flat: usize, out: &mut [usize]) {
        for d in (0..self.dims()).rev() {
            out[d] = flat % self.points[d];
            flat /= self.points[d];
        }
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.points).fold(0, |acc, (i, n)| acc * n + i)
    }

    /// State at a flat node index.
    pub fn node_state(&self, flat: usize, out: &mut [f64]) {
        let mut idx = [0usize; MAX_STATE];
        self.unflatten(flat, &mut idx);
        for d in 0..self.dims() {
            out[d] = self.coord(d, idx[d]);
        }
    }

    /// Wraps periodic coordinates into `[lower, upper)`.
    pub fn wrap(&self, d: usize, v: f64) -> f64 {
        if !self.periodic[d] {
            return v;
        }
        let p = self.upper[d] - self.lower[d];
        let mut w = (v - self.lower[d]).rem_euclid(p) + self.lower[d];
        if w >= self.upper[d] {
            w = self.lower[d];
        }
        w
    }
}
