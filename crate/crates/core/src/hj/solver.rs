use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{AffineDynamics, ControlBox, MAX_CONTROL, MAX_STATE};
use crate::error::{check_dim, Error, Result};
use crate::game::{constrained_solve, GameRef};
use crate::hocbf::HocbfModel;

use super::boundary::BoundaryFn;
use super::field::{SchemeInfo, ValueField};
use super::grid::Grid;

const CHUNK: usize = 2048;

/// Inner optimization used at every node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HamiltonianKind {
    /// `max_{u_A} min_{u_B}` over the full boxes.
    WorstCase,
    /// Contender restricted to `Ũ_B` and acting first; needs an HOCBF model.
    Constrained,
    /// Contender input ignored (`u_B = 0`); for single-agent systems.
    NoContender,
}

impl HamiltonianKind {
    pub fn label(self) -> &'static str {
        match self {
            HamiltonianKind::WorstCase => "worst-case",
            HamiltonianKind::Constrained => "constrained",
            HamiltonianKind::NoContender => "no-contender",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialScheme {
    /// First-order one-sided differences with forward Euler in time.
    Upwind1,
    /// Second-order ENO differences with two-stage TVD Runge-Kutta.
    Eno2,
}

/// Which time slices the returned field keeps. `t = 0` and the final slice
/// are always kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Retention {
    All,
    Final,
    Every(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub scheme: SpatialScheme,
    pub cfl: f64,
    pub retention: Retention,
    /// Where to write the last finite slice if the solve hits a non-finite value.
    pub nan_dump: Option<PathBuf>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            scheme: SpatialScheme::Upwind1,
            cfl: 0.5,
            retention: Retention::All,
            nan_dump: None,
        }
    }
}

pub struct SolveProblem<'a> {
    pub dynamics: &'a dyn AffineDynamics,
    pub kind: HamiltonianKind,
    pub boundary: &'a BoundaryFn,
    pub grid: &'a Grid,
    pub horizon: f64,
    pub hocbf: Option<&'a HocbfModel>,
    pub ego_box: &'a ControlBox,
    pub contender_box: &'a ControlBox,
}

struct Ctx<'a> {
    p: &'a SolveProblem<'a>,
    strides: Vec<usize>,
    spacing: Vec<f64>,
    alpha: Vec<f64>,
    /// Per node `[a (m_A), b (m_B), c]` for the constrained kind.
    constraints: Vec<f64>,
    scheme: SpatialScheme,
}

impl SolveProblem<'_> {
    pub fn validate(&self) -> Result<()> {
        let d = self.dynamics;
        self.grid.validate()?;
        check_dim("grid", d.state_dim(), self.grid.dims())?;
        check_dim("ego box", d.ego_dim(), self.ego_box.dim())?;
        self.ego_box.validate()?;
        if self.kind != HamiltonianKind::NoContender {
            check_dim("contender box", d.contender_dim(), self.contender_box.dim())?;
            self.contender_box.validate()?;
        }
        if d.ego_dim() > MAX_CONTROL || d.contender_dim() > MAX_CONTROL {
            return Err(Error::Config("too many control channels".into()));
        }
        self.boundary.validate(d.state_dim())?;
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::Config(format!("horizon {} must be positive", self.horizon)));
        }
        match (self.kind, self.hocbf) {
            (HamiltonianKind::Constrained, None) => {
                Err(Error::Config("constrained Hamiltonian requires an HOCBF model".into()))
            }
            (HamiltonianKind::Constrained, Some(_)) => Ok(()),
            (_, Some(_)) => Err(Error::Config("HOCBF model given for an unconstrained Hamiltonian".into())),
            (_, None) => Ok(()),
        }
    }
}

/// Node coordinates; periodic axes map their last node onto the first.
fn node_state(grid: &Grid, flat: usize, idx: &mut [usize], x: &mut [f64]) {
    grid.unflatten(flat, idx);
    for d in 0..grid.dims() {
        x[d] = if grid.periodic[d] && idx[d] == grid.points[d] - 1 {
            grid.lower[d]
        } else {
            grid.coord(d, idx[d])
        };
    }
}

/// Per-axis bound on `|∂H/∂p_i|` over the grid.
pub fn dissipation_coefficients(p: &SolveProblem<'_>) -> Vec<f64> {
    let dyn_ = p.dynamics;
    let n = dyn_.state_dim();
    let (ma, mb) = (dyn_.ego_dim(), dyn_.contender_dim());
    let with_contender = p.kind != HamiltonianKind::NoContender && mb > 0;
    let amax: Vec<f64> = (0..ma).map(|j| p.ego_box.max_abs(j)).collect();
    let bmax: Vec<f64> = if with_contender {
        (0..mb).map(|j| p.contender_box.max_abs(j)).collect()
    } else {
        Vec::new()
    };
    let node_alpha = |flat: usize| {
        let mut idx = [0usize; MAX_STATE];
        let mut x = [0.0; MAX_STATE];
        let mut f = [0.0; MAX_STATE];
        let mut g = [0.0; MAX_STATE * MAX_CONTROL];
        let mut h = [0.0; MAX_STATE * MAX_CONTROL];
        node_state(p.grid, flat, &mut idx, &mut x);
        dyn_.drift(&x[..n], &mut f[..n]);
        dyn_.ego_gain(&x[..n], &mut g[..n * ma]);
        if with_contender {
            dyn_.contender_gain(&x[..n], &mut h[..n * mb]);
        }
        let mut a = [0.0; MAX_STATE];
        for i in 0..n {
            a[i] = f[i].abs();
            for j in 0..ma {
                a[i] += g[i * ma + j].abs() * amax[j];
            }
            for j in 0..bmax.len() {
                a[i] += h[i * mb + j].abs() * bmax[j];
            }
        }
        a
    };
    let total = p.grid.node_count();
    let res = (0..total)
        .into_par_iter()
        .with_min_len(CHUNK)
        .map(node_alpha)
        .reduce(
            || [0.0; MAX_STATE],
            |mut a, b| {
                for i in 0..MAX_STATE {
                    a[i] = a[i].max(b[i]);
                }
                a
            },
        );
    res[..n].to_vec()
}

fn build_constraints(p: &SolveProblem<'_>) -> Result<Vec<f64>> {
    let Some(model) = p.hocbf else {
        return Ok(Vec::new());
    };
    let dyn_ = p.dynamics;
    let (ma, mb) = (dyn_.ego_dim(), dyn_.contender_dim());
    let w = ma + mb + 1;
    let n = dyn_.state_dim();
    let mut out = vec![0.0; p.grid.node_count() * w];
    out.par_chunks_mut(w * CHUNK).enumerate().try_for_each(|(ci, chunk)| {
        let mut idx = [0usize; MAX_STATE];
        let mut x = [0.0; MAX_STATE];
        for (k, row) in chunk.chunks_mut(w).enumerate() {
            node_state(p.grid, ci * CHUNK + k, &mut idx, &mut x);
            let t = model.lie_terms(dyn_, &x[..n])?;
            let c = model.constraint_from_terms(&t);
            row[..ma].copy_from_slice(&c.ego_coeff);
            row[ma..ma + mb].copy_from_slice(&c.contender_coeff);
            row[ma + mb] = c.offset;
        }
        Ok::<(), Error>(())
    })?;
    Ok(out)
}

impl Ctx<'_> {
    /// `V` at offset `o` along axis `d` from the node with axis index `i`;
    /// linear extrapolation past non-periodic edges.
    #[inline]
    fn neighbor(&self, v: &[f64], base: usize, d: usize, i: usize, o: isize) -> f64 {
        let g = self.p.grid;
        let n = g.points[d];
        let s = self.strides[d];
        if g.periodic[d] {
            let m = (n - 1) as isize;
            let j = ((i as isize % m) + o).rem_euclid(m) as usize;
            return v[base + j * s];
        }
        let j = i as isize + o;
        if j < 0 {
            let v0 = v[base];
            v0 + j as f64 * (v[base + s] - v0)
        } else if j as usize > n - 1 {
            let vl = v[base + (n - 1) * s];
            vl + (j - (n as isize - 1)) as f64 * (vl - v[base + (n - 2) * s])
        } else {
            v[base + j as usize * s]
        }
    }

    /// One-sided derivatives `(p⁻, p⁺)` along axis `d`.
    #[inline]
    fn derivs(&self, v: &[f64], flat: usize, d: usize, i: usize) -> (f64, f64) {
        let base = flat - i * self.strides[d];
        let h = self.spacing[d];
        let at = |o: isize| self.neighbor(v, base, d, i, o);
        let (vm1, v0, vp1) = (at(-1), at(0), at(1));
        let dm = (v0 - vm1) / h;
        let dp = (vp1 - v0) / h;
        match self.scheme {
            SpatialScheme::Upwind1 => (dm, dp),
            SpatialScheme::Eno2 => {
                let (vm2, vp2) = (at(-2), at(2));
                let d2m = (v0 - 2.0 * vm1 + vm2) / (h * h);
                let d20 = (vp1 - 2.0 * v0 + vm1) / (h * h);
                let d2p = (vp2 - 2.0 * vp1 + v0) / (h * h);
                let pick = |a: f64, b: f64| if a.abs() <= b.abs() { a } else { b };
                (dm + 0.5 * h * pick(d2m, d20), dp - 0.5 * h * pick(d20, d2p))
            }
        }
    }

    /// Lax-Friedrichs rate `min{0, H(x, p̄) + Σ αᵢ(p⁺ᵢ − p⁻ᵢ)/2}` at every node.
    fn rate(&self, v: &[f64], out: &mut [f64]) {
        let p = self.p;
        let dyn_ = p.dynamics;
        let n = dyn_.state_dim();
        let (ma, mb) = (dyn_.ego_dim(), dyn_.contender_dim());
        let cw = ma + mb + 1;
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, chunk)| {
            let mut idx = [0usize; MAX_STATE];
            let mut x = [0.0; MAX_STATE];
            let mut pbar = [0.0; MAX_STATE];
            let mut f = [0.0; MAX_STATE];
            let mut g = [0.0; MAX_STATE * MAX_CONTROL];
            let mut h = [0.0; MAX_STATE * MAX_CONTROL];
            let mut ga = [0.0; MAX_CONTROL];
            let mut gb = [0.0; MAX_CONTROL];
            let mut ua = [0.0; MAX_CONTROL];
            let mut ub = [0.0; MAX_CONTROL];
            for (k, r) in chunk.iter_mut().enumerate() {
                let flat = ci * CHUNK + k;
                node_state(p.grid, flat, &mut idx, &mut x);
                let mut diss = 0.0;
                for d in 0..n {
                    let (dm, dp) = self.derivs(v, flat, d, idx[d]);
                    pbar[d] = 0.5 * (dm + dp);
                    diss += 0.5 * self.alpha[d] * (dp - dm);
                }
                dyn_.drift(&x[..n], &mut f[..n]);
                dyn_.ego_gain(&x[..n], &mut g[..n * ma]);
                let drift: f64 = (0..n).map(|i| pbar[i] * f[i]).sum();
                for j in 0..ma {
                    ga[j] = (0..n).map(|i| pbar[i] * g[i * ma + j]).sum();
                }
                let ham = match p.kind {
                    HamiltonianKind::NoContender => drift + p.ego_box.max_linear(&ga[..ma]),
                    kind => {
                        dyn_.contender_gain(&x[..n], &mut h[..n * mb]);
                        for j in 0..mb {
                            gb[j] = (0..n).map(|i| pbar[i] * h[i * mb + j]).sum();
                        }
                        if kind == HamiltonianKind::WorstCase {
                            drift + (p.ego_box.max_linear(&ga[..ma]) + p.contender_box.min_linear(&gb[..mb]))
                        } else {
                            let row = &self.constraints[flat * cw..(flat + 1) * cw];
                            let game = GameRef {
                                drift_term: drift,
                                ego_grad: &ga[..ma],
                                contender_grad: &gb[..mb],
                                a: &row[..ma],
                                b: &row[ma..ma + mb],
                                c: row[ma + mb],
                                ego_box: p.ego_box,
                                contender_box: p.contender_box,
                            };
                            constrained_solve(&game, &mut ua[..ma], &mut ub[..mb]).0
                        }
                    }
                };
                *r = (ham + diss).min(0.0);
            }
        });
    }
}

/// Backward reachable value function of the avoid problem
/// `∂V/∂t + min{0, H(x, ∇V)} = 0`, `V(x, 0) = ℓ(x)`, over `t ∈ [−horizon, 0]`.
pub fn solve(problem: &SolveProblem<'_>, opts: &SolverOptions) -> Result<ValueField> {
    problem.validate()?;
    if !(opts.cfl > 0.0 && opts.cfl <= 1.0) {
        return Err(Error::Config(format!("CFL factor {} must lie in (0, 1]", opts.cfl)));
    }
    if let Retention::Every(0) = opts.retention {
        return Err(Error::Config("retention stride must be positive".into()));
    }
    let grid = problem.grid;
    let n = grid.dims();
    let total = grid.node_count();
    let ctx = Ctx {
        p: problem,
        strides: grid.strides(),
        spacing: (0..n).map(|d| grid.spacing(d)).collect(),
        alpha: dissipation_coefficients(problem),
        constraints: build_constraints(problem)?,
        scheme: opts.scheme,
    };
    let speed: f64 = (0..n).map(|d| ctx.alpha[d] / ctx.spacing[d]).sum();
    let (steps, dt) = if speed > 0.0 {
        let s = (problem.horizon * speed / opts.cfl - 1e-9).ceil().max(1.0) as usize;
        (s, problem.horizon / s as f64)
    } else {
        (1, problem.horizon)
    };
    log::info!(
        "solving {} on {} nodes: {} steps of {:.4e} s",
        problem.kind.label(),
        total,
        steps,
        dt
    );

    let mut v = vec![0.0; total];
    v.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, chunk)| {
        let mut idx = [0usize; MAX_STATE];
        let mut x = [0.0; MAX_STATE];
        for (k, out) in chunk.iter_mut().enumerate() {
            node_state(grid, ci * CHUNK + k, &mut idx, &mut x);
            *out = problem.boundary.eval(&x[..n]);
        }
    });
    let mut times = vec![0.0];
    let mut values = vec![v.clone()];
    let mut rate = vec![0.0; total];
    let mut stage = vec![0.0; total];
    for step in 1..=steps {
        match opts.scheme {
            SpatialScheme::Upwind1 => {
                ctx.rate(&v, &mut rate);
                v.par_iter_mut().zip(&rate).for_each(|(a, r)| *a += dt * r);
            }
            SpatialScheme::Eno2 => {
                ctx.rate(&v, &mut rate);
                stage.par_iter_mut().zip(&v).zip(&rate).for_each(|((s, a), r)| *s = a + dt * r);
                ctx.rate(&stage, &mut rate);
                v.par_iter_mut()
                    .zip(&stage)
                    .zip(&rate)
                    .for_each(|((a, s), r)| *a = 0.5 * (*a + s + dt * r));
            }
        }
        if let Some(bad) = v.iter().position(|x| !x.is_finite()) {
            let mut x = vec![0.0; n];
            grid.node_state(bad, &mut x);
            if let Some(path) = &opts.nan_dump {
                let dump = ValueField::new(grid.clone(), vec![0.0], vec![values.last().expect("slice").clone()])?;
                dump.save(path)?;
            }
            return Err(Error::Numerical(format!(
                "non-finite value at step {step} (t = {:.4}) near state {x:?}",
                -(step as f64) * dt
            )));
        }
        let keep = match opts.retention {
            Retention::All => true,
            Retention::Final => step == steps,
            Retention::Every(k) => step % k == 0 || step == steps,
        };
        if keep {
            times.push(-(step as f64) * dt);
            values.push(v.clone());
        }
    }
    let mut field = ValueField::new(grid.clone(), times, values)?;
    field.scheme = Some(SchemeInfo {
        hamiltonian: problem.kind.label().into(),
        spatial: match opts.scheme {
            SpatialScheme::Upwind1 => "upwind1".into(),
            SpatialScheme::Eno2 => "eno2".into(),
        },
        cfl: opts.cfl,
        dt,
        steps,
        dissipation: ctx.alpha.clone(),
    });
    Ok(field)
}
