//! Vertex enumeration for a control box cut by one halfspace.

use serde::{Deserialize, Serialize};

use crate::dynamics::{dot, ControlBox, MAX_CONTROL};

/// `{u : normal·u + offset ≥ 0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Halfspace {
    pub fn new(normal: Vec<f64>, offset: f64) -> Self {
        Halfspace { normal, offset }
    }

    /// The whole space (`0·u + 0 ≥ 0`).
    pub fn everything(dim: usize) -> Self {
        Halfspace {
            normal: vec![0.0; dim],
            offset: 0.0,
        }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        dot(&self.normal, u) + self.offset
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        self.eval(u) >= -tol
    }
}

/// `box ∩ halfspace` described by its vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasiblePolytope {
    pub vertices: Vec<Vec<f64>>,
    pub empty: bool,
    pub bounds: ControlBox,
    pub halfspace: Halfspace,
}

const DEDUP_TOL: f64 = 1e-12;

impl FeasiblePolytope {
    /// Enumerates the vertices of `bounds ∩ halfspace`: box corners inside the
    /// halfspace plus the points where the bounding hyperplane crosses box edges.
    pub fn new(bounds: &ControlBox, halfspace: Halfspace) -> Self {
        let d = bounds.dim();
        assert_eq!(d, halfspace.normal.len(), "halfspace dimension");
        let corners = bounds.corners();
        let vals: Vec<f64> = corners.iter().map(|c| halfspace.eval(c)).collect();
        let mut vertices: Vec<Vec<f64>> = Vec::new();
        for (c, v) in corners.iter().zip(&vals) {
            if *v >= 0.0 {
                push_unique(&mut vertices, c.clone());
            }
        }
        // edges: pairs of corners differing in exactly one channel
        for mask in 0..corners.len() {
            for j in 0..d {
                if mask >> j & 1 == 1 {
                    continue;
                }
                let other = mask | 1 << j;
                let (va, vb) = (vals[mask], vals[other]);
                if (va < 0.0) == (vb < 0.0) || halfspace.normal[j] == 0.0 {
                    continue;
                }
                let mut p = corners[mask].clone();
                let rest = halfspace.offset
                    + (0..d)
                        .filter(|&k| k != j)
                        .map(|k| halfspace.normal[k] * p[k])
                        .sum::<f64>();
                p[j] = (-rest / halfspace.normal[j]).clamp(bounds.lower[j], bounds.upper[j]);
                push_unique(&mut vertices, p);
            }
        }
        let empty = vertices.is_empty();
        let mut poly = FeasiblePolytope {
            vertices,
            empty,
            bounds: bounds.clone(),
            halfspace,
        };
        if d == 2 {
            poly.order_ccw();
        }
        poly
    }

    /// The full box (no cut).
    pub fn full(bounds: &ControlBox) -> Self {
        Self::new(bounds, Halfspace::everything(bounds.dim()))
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        self.bounds.contains(u, tol) && self.halfspace.contains(u, tol)
    }

    /// Maximizes `coeff·u` over the vertices; first vertex wins ties.
    pub fn argmax(&self, coeff: &[f64]) -> Option<(&[f64], f64)> {
        let mut best: Option<(&[f64], f64)> = None;
        for v in &self.vertices {
            let val = dot(coeff, v);
            if best.is_none_or(|(_, b)| val > b) {
                best = Some((v, val));
            }
        }
        best
    }

    /// Minimizes `coeff·u` over the vertices; first vertex wins ties.
    pub fn argmin(&self, coeff: &[f64]) -> Option<(&[f64], f64)> {
        let mut best: Option<(&[f64], f64)> = None;
        for v in &self.vertices {
            let val = dot(coeff, v);
            if best.is_none_or(|(_, b)| val < b) {
                best = Some((v, val));
            }
        }
        best
    }

    /// Length (1-D) or area (2-D) of the polytope.
    pub fn measure(&self) -> f64 {
        if self.empty {
            return 0.0;
        }
        match self.dim() {
            0 => 1.0,
            1 => {
                let lo = self.vertices.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
                let hi = self.vertices.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            }
            2 => {
                let n = self.vertices.len();
                let mut s = 0.0;
                for i in 0..n {
                    let (a, b) = (&self.vertices[i], &self.vertices[(i + 1) % n]);
                    s += a[0] * b[1] - b[0] * a[1];
                }
                0.5 * s.abs()
            }
            _ => f64::NAN,
        }
    }

    fn order_ccw(&mut self) {
        if self.vertices.len() < 3 {
            return;
        }
        let n = self.vertices.len() as f64;
        let cx = self.vertices.iter().map(|v| v[0]).sum::<f64>() / n;
        let cy = self.vertices.iter().map(|v| v[1]).sum::<f64>() / n;
        self.vertices.sort_by(|a, b| {
            let ta = (a[1] - cy).atan2(a[0] - cx);
            let tb = (b[1] - cy).atan2(b[0] - cx);
            ta.total_cmp(&tb)
        });
    }

    /// Closest point of a 2-D (or 1-D) polytope to `target`.
    pub fn project(&self, target: &[f64]) -> Option<Vec<f64>> {
        if self.empty {
            return None;
        }
        if self.contains(target, 0.0) {
            return Some(target.to_vec());
        }
        match self.dim() {
            1 => {
                let lo = self.vertices.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
                let hi = self.vertices.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
                Some(vec![target[0].clamp(lo, hi)])
            }
            2 => {
                let n = self.vertices.len();
                let mut best: Option<(Vec<f64>, f64)> = None;
                for i in 0..n {
                    let a = &self.vertices[i];
                    let b = &self.vertices[(i + 1) % n];
                    let p = closest_on_segment(a, b, target);
                    let d = (p[0] - target[0]).powi(2) + (p[1] - target[1]).powi(2);
                    if best.as_ref().is_none_or(|(_, bd)| d < *bd) {
                        best = Some((p, d));
                    }
                }
                best.map(|(p, _)| p)
            }
            _ => None,
        }
    }
}

/// Calls `f` on every vertex of `[lower, upper] ∩ {normal·u + offset ≥ 0}`
/// without allocating. Vertices may repeat; the visiting order is fixed
/// (surviving corners first, then edge crossings).
pub fn for_each_vertex(lower: &[f64], upper: &[f64], normal: &[f64], offset: f64, mut f: impl FnMut(&[f64])) {
    let d = lower.len();
    debug_assert!(d <= MAX_CONTROL);
    let corner = |mask: usize, out: &mut [f64; MAX_CONTROL]| {
        for j in 0..d {
            out[j] = if mask >> j & 1 == 1 { upper[j] } else { lower[j] };
        }
    };
    let eval = |u: &[f64]| dot(normal, u) + offset;
    let mut u = [0.0; MAX_CONTROL];
    for mask in 0..1usize << d {
        corner(mask, &mut u);
        if eval(&u[..d]) >= 0.0 {
            f(&u[..d]);
        }
    }
    for mask in 0..1usize << d {
        for j in 0..d {
            if mask >> j & 1 == 1 || normal[j] == 0.0 {
                continue;
            }
            corner(mask, &mut u);
            let va = eval(&u[..d]);
            let vb = va + normal[j] * (upper[j] - lower[j]);
            if (va < 0.0) == (vb < 0.0) {
                continue;
            }
            let rest = va - normal[j] * u[j];
            u[j] = (-rest / normal[j]).clamp(lower[j], upper[j]);
            f(&u[..d]);
        }
    }
}

fn closest_on_segment(a: &[f64], b: &[f64], p: &[f64]) -> Vec<f64> {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return a.to_vec();
    }
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
    vec![a[0] + t * dx, a[1] + t * dy]
}

fn push_unique(vs: &mut Vec<Vec<f64>>, p: Vec<f64>) {
    let dup = vs
        .iter()
        .any(|v| v.iter().zip(&p).all(|(a, b)| (a - b).abs() <= DEDUP_TOL));
    if !dup {
        vs.push(p);
    }
}
