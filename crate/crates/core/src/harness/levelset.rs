use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::hj::ValueField;

/// 2-D slice of a field: vary `axes`, hold the other coordinates at `fixed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSpec {
    pub axes: [usize; 2],
    /// Full state; entries on `axes` are ignored.
    pub fixed: Vec<f64>,
    #[serde(default)]
    pub t: Option<f64>,
}

pub type Polyline = Vec<[f64; 2]>;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Edge {
    /// `(i, j)–(i+1, j)`
    H(usize, usize),
    /// `(i, j)–(i, j+1)`
    V(usize, usize),
}

/// Marching-squares contour of `values` (row-major, `ny` fastest) on the
/// tensor grid `xs × ys`.
pub fn contour(xs: &[f64], ys: &[f64], values: &[f64], level: f64) -> Vec<Polyline> {
    let (nx, ny) = (xs.len(), ys.len());
    let v = |i: usize, j: usize| values[i * ny + j];
    let inside = |i: usize, j: usize| v(i, j) < level;
    let point = |e: Edge| -> [f64; 2] {
        let ((i0, j0), (i1, j1)) = match e {
            Edge::H(i, j) => ((i, j), (i + 1, j)),
            Edge::V(i, j) => ((i, j), (i, j + 1)),
        };
        let (a, b) = (v(i0, j0), v(i1, j1));
        let s = (level - a) / (b - a);
        [xs[i0] + s * (xs[i1] - xs[i0]), ys[j0] + s * (ys[j1] - ys[j0])]
    };
    let mut segments: Vec<(Edge, Edge)> = Vec::new();
    for i in 0..nx.saturating_sub(1) {
        for j in 0..ny.saturating_sub(1) {
            let c = [inside(i, j), inside(i + 1, j), inside(i + 1, j + 1), inside(i, j + 1)];
            let edges = [Edge::H(i, j), Edge::V(i + 1, j), Edge::H(i, j + 1), Edge::V(i, j)];
            let crossed: Vec<Edge> = (0..4).filter(|&k| c[k] != c[(k + 1) % 4]).map(|k| edges[k]).collect();
            match crossed.len() {
                2 => segments.push((crossed[0], crossed[1])),
                4 => {
                    let centre = 0.25 * (v(i, j) + v(i + 1, j) + v(i + 1, j + 1) + v(i, j + 1)) < level;
                    if centre == c[0] {
                        segments.push((edges[0], edges[1]));
                        segments.push((edges[2], edges[3]));
                    } else {
                        segments.push((edges[0], edges[3]));
                        segments.push((edges[1], edges[2]));
                    }
                }
                _ => {}
            }
        }
    }
    chain(&segments).into_iter().map(|p| p.into_iter().map(point).collect()).collect()
}

/// Joins segments sharing an edge crossing into polylines; open chains first.
fn chain(segments: &[(Edge, Edge)]) -> Vec<Vec<Edge>> {
    let mut at: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        at.entry(*a).or_default().push(k);
        at.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut out = Vec::new();
    let walk = |start: usize, from: Edge, used: &mut Vec<bool>| {
        let mut line = vec![from];
        let mut k = start;
        let mut cur = from;
        loop {
            used[k] = true;
            let (a, b) = segments[k];
            let next = if a == cur { b } else { a };
            line.push(next);
            match at[&next].iter().find(|&&s| !used[s]) {
                Some(&s) => {
                    k = s;
                    cur = next;
                }
                None => break,
            }
        }
        line
    };
    for k in 0..segments.len() {
        if used[k] {
            continue;
        }
        let (a, b) = segments[k];
        if at[&a].len() == 1 {
            out.push(walk(k, a, &mut used));
        } else if at[&b].len() == 1 {
            out.push(walk(k, b, &mut used));
        }
    }
    for k in 0..segments.len() {
        if !used[k] {
            out.push(walk(k, segments[k].0, &mut used));
        }
    }
    out
}

/// Zero (or `level`) level set of a field slice.
pub fn export_levelset(field: &ValueField, slice: &SliceSpec, level: f64) -> Result<Vec<Polyline>> {
    let g = &field.grid;
    check_dim("slice state", g.dims(), slice.fixed.len())?;
    let [a, b] = slice.axes;
    if a == b || a >= g.dims() || b >= g.dims() {
        return Err(Error::Config(format!("invalid slice axes {:?}", slice.axes)));
    }
    let t = slice.t.unwrap_or(field.times[field.times.len() - 1]);
    let xs: Vec<f64> = (0..g.points[a]).map(|i| g.coord(a, i)).collect();
    let ys: Vec<f64> = (0..g.points[b]).map(|j| g.coord(b, j)).collect();
    let mut x = slice.fixed.clone();
    let mut values = Vec::with_capacity(xs.len() * ys.len());
    for &xa in &xs {
        for &yb in &ys {
            x[a] = xa;
            x[b] = yb;
            values.push(field.value_at(&x, t)?.value);
        }
    }
    Ok(contour(&xs, &ys, &values, level))
}

/// CSV with columns `polyline,x,y`.
pub fn write_polylines<W: Write>(lines: &[Polyline], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["polyline", "x", "y"])?;
    for (k, line) in lines.iter().enumerate() {
        for p in line {
            wr.write_record([k.to_string(), format!("{:?}", p[0]), format!("{:?}", p[1])])?;
        }
    }
    wr.flush()?;
    Ok(())
}
