use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::MAX_STATE;
use crate::error::{check_dim, Error, Result};

use super::grid::Grid;

const VF_MAGIC: &str = "reachsafe-vf";
const VF_VERSION: u32 = 1;

/// How a field was computed; stored in the `.vf` header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeInfo {
    pub hamiltonian: String,
    pub spatial: String,
    pub cfl: f64,
    pub dt: f64,
    pub steps: usize,
    /// Per-axis Lax-Friedrichs dissipation coefficients.
    pub dissipation: Vec<f64>,
}

/// Value function samples `V(x, t)` on a grid at descending times `0 ≥ t ≥ −T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub grid: Grid,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub scheme: Option<SchemeInfo>,
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Query {
    pub value: f64,
    /// A non-periodic coordinate or the time fell outside the field and was clamped.
    pub clamped: bool,
}

#[derive(Serialize, Deserialize)]
struct VfHeader {
    format: String,
    version: u32,
    grid: Grid,
    times: Vec<f64>,
    nodes: usize,
    scheme: Option<SchemeInfo>,
    config_hash: Option<String>,
}

impl ValueField {
    pub fn new(grid: Grid, times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let f = ValueField {
            grid,
            times,
            values,
            scheme: None,
            config_hash: None,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.times.is_empty() || self.times.len() != self.values.len() {
            return Err(Error::Config("value field needs one slice per time".into()));
        }
        if self.times[0] != 0.0 || self.times.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("value field times must descend strictly from 0".into()));
        }
        let n = self.grid.node_count();
        for v in &self.values {
            check_dim("value slice", n, v.len())?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("value field slice".into()));
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        -self.times.last().copied().unwrap_or(0.0)
    }

    pub fn final_slice(&self) -> &[f64] {
        self.values.last().expect("nonempty field")
    }

    /// Keeps `count` slices evenly spaced in index, always including `t = 0`
    /// and the final slice.
    pub fn decimate(&mut self, count: usize) {
        let n = self.times.len();
        if count >= n || n < 2 {
            return;
        }
        let count = count.max(2);
        let keep: Vec<usize> = (0..count)
            .map(|i| ((i as f64) * (n - 1) as f64 / (count - 1) as f64).round() as usize)
            .collect();
        self.times = keep.iter().map(|&k| self.times[k]).collect();
        self.values = keep.iter().map(|&k| std::mem::take(&mut self.values[k])).collect();
    }

    /// Index of the stored slice closest to `t`.
    pub fn nearest_slice(&self, t: f64) -> usize {
        let mut best = 0;
        for (k, tk) in self.times.iter().enumerate() {
            if (tk - t).abs() < (self.times[best] - t).abs() {
                best = k;
            }
        }
        best
    }

    /// Bracketing slices and the weight of the later (more negative) one.
    fn time_bracket(&self, t: f64) -> (usize, usize, f64, bool) {
        let last = self.times.len() - 1;
        if t >= 0.0 || last == 0 {
            return (0, 0, 0.0, t > 0.0 || (last == 0 && t < 0.0));
        }
        if t <= self.times[last] {
            return (last, last, 0.0, t < self.times[last]);
        }
        let k = self.times.iter().position(|tk| *tk < t).expect("bracketed") - 1;
        let w = (self.times[k] - t) / (self.times[k] - self.times[k + 1]);
        (k, k + 1, w, false)
    }

    /// Multilinear interpolation of one slice.
    pub fn interpolate_slice(&self, k: usize, x: &[f64]) -> Result<Query> {
        let d = self.grid.dims();
        check_dim("query state", d, x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("query state".into()));
        }
        let mut base = [0usize; MAX_STATE];
        let mut frac = [0.0; MAX_STATE];
        let mut clamped = false;
        for i in 0..d {
            let g = &self.grid;
            let xi = g.wrap(i, x[i]);
            let n = g.points[i];
            let mut u = (xi - g.lower[i]) / g.spacing(i);
            if u < 0.0 || u > (n - 1) as f64 {
                clamped |= !g.periodic[i];
                u = u.clamp(0.0, (n - 1) as f64);
            }
            let i0 = (u.floor() as usize).min(n - 2);
            base[i] = i0;
            frac[i] = u - i0 as f64;
        }
        let strides = self.grid.strides();
        let slice = &self.values[k];
        let mut value = 0.0;
        for corner in 0..1usize << d {
            let mut w = 1.0;
            let mut flat = 0;
            for i in 0..d {
                let up = corner >> (d - 1 - i) & 1 == 1;
                w *= if up { frac[i] } else { 1.0 - frac[i] };
                flat += (base[i] + up as usize) * strides[i];
            }
            if w != 0.0 {
                value += w * slice[flat];
            }
        }
        Ok(Query { value, clamped })
    }

    /// `V(x, t)`: multilinear in space, linear in time.
    pub fn value_at(&self, x: &[f64], t: f64) -> Result<Query> {
        let (k0, k1, w, tc) = self.time_bracket(t);
        let a = self.interpolate_slice(k0, x)?;
        if k0 == k1 || w == 0.0 {
            return Ok(Query {
                value: a.value,
                clamped: a.clamped || tc,
            });
        }
        let b = self.interpolate_slice(k1, x)?;
        Ok(Query {
            value: (1.0 - w) * a.value + w * b.value,
            clamped: a.clamped || b.clamped || tc,
        })
    }

    /// `∇ₓV(x, t)` by central differences of the interpolant with step equal
    /// to the grid spacing; one-sided at non-periodic edges.
    pub fn spatial_gradient(&self, x: &[f64], t: f64) -> Result<(Vec<f64>, bool)> {
        let d = self.grid.dims();
        check_dim("query state", d, x.len())?;
        let mut grad = vec![0.0; d];
        let mut clamped = self.value_at(x, t)?.clamped;
        let mut xp = x.to_vec();
        for i in 0..d {
            let h = self.grid.spacing(i);
            let (mut lo, mut hi) = (x[i] - h, x[i] + h);
            if !self.grid.periodic[i] {
                lo = lo.max(self.grid.lower[i]);
                hi = hi.min(self.grid.upper[i]);
                if hi <= lo {
                    clamped = true;
                    continue;
                }
            }
            xp[i] = hi;
            let vp = self.value_at(&xp, t)?.value;
            xp[i] = lo;
            let vm = self.value_at(&xp, t)?.value;
            xp[i] = x[i];
            grad[i] = (vp - vm) / (hi - lo);
        }
        Ok((grad, clamped))
    }

    /// `∂V/∂t` from the stored slices bracketing `t`.
    pub fn time_derivative(&self, x: &[f64], t: f64) -> Result<f64> {
        if self.times.len() < 2 {
            return Ok(0.0);
        }
        let last = self.times.len() - 1;
        let k = match self.time_bracket(t) {
            (k0, k1, _, _) if k0 != k1 => k0,
            (k0, _, _, _) => k0.min(last - 1),
        };
        let a = self.interpolate_slice(k, x)?.value;
        let b = self.interpolate_slice(k + 1, x)?.value;
        Ok((a - b) / (self.times[k] - self.times[k + 1]))
    }

    pub fn write_vf<W: Write>(&self, mut w: W) -> Result<()> {
        let header = VfHeader {
            format: VF_MAGIC.into(),
            version: VF_VERSION,
            grid: self.grid.clone(),
            times: self.times.clone(),
            nodes: self.grid.node_count(),
            scheme: self.scheme.clone(),
            config_hash: self.config_hash.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::with_capacity(8 * self.grid.node_count());
        for slice in &self.values {
            buf.clear();
            for v in slice {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_vf<R: Read>(mut r: R) -> Result<Self> {
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 30 {
            return Err(Error::Dataset("implausible .vf header length".into()));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let h: VfHeader = serde_json::from_slice(&json)?;
        if h.format != VF_MAGIC || h.version != VF_VERSION {
            return Err(Error::Dataset(format!("unsupported value file {} v{}", h.format, h.version)));
        }
        h.grid.validate()?;
        if h.nodes != h.grid.node_count() {
            return Err(Error::Dataset("node count disagrees with grid".into()));
        }
        let mut values = Vec::with_capacity(h.times.len());
        let mut buf = vec![0u8; 8 * h.nodes];
        for _ in &h.times {
            r.read_exact(&mut buf)?;
            values.push(
                buf.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            );
        }
        let f = ValueField {
            grid: h.grid,
            times: h.times,
            values,
            scheme: h.scheme,
            config_hash: h.config_hash,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_vf(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_vf(std::io::BufReader::new(f))
    }
}
