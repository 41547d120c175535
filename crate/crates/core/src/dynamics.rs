//! Control-disturbance-affine vehicle models.
//!
//! Every model is written as `ẋ = f(x) + g(x)·u_A + h(x)·u_B`. The ego agent
//! owns `u_A`, the contender owns `u_B`; single-agent systems have an empty
//! contender channel. Gains are returned row-major (`n × m`).
//!
//! Car models use the steering channel `tan δ` rather than `δ` so that the
//! heading rate `(v/ℓ)·tan δ` stays affine in the input. [`ControlBox`]
//! limits given in radians are mapped through `tan` with [`steering_box`].

use std::f64::consts::PI;
use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, ensure_finite, Error, Result};

/// Largest state dimension supported by the stack-allocated hot paths.
pub const MAX_STATE: usize = 8;
/// Largest per-agent control dimension.
pub const MAX_CONTROL: usize = 4;

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    if a == -PI {
        a = PI;
    }
    a
}

/// Axis-aligned control bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ControlBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = ControlBox { lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// Box `[-bound, bound]` in every listed channel.
    pub fn symmetric(bounds: &[f64]) -> Result<Self> {
        Self::new(bounds.iter().map(|b| -b).collect(), bounds.to_vec())
    }

    /// Zero-dimensional box for agents without controls.
    pub fn empty() -> Self {
        ControlBox {
            lower: Vec::new(),
            upper: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("control box upper", self.lower.len(), self.upper.len())?;
        ensure_finite("control box lower", &self.lower)?;
        ensure_finite("control box upper", &self.upper)?;
        if self.lower.len() > MAX_CONTROL {
            return Err(Error::Config(format!(
                "control dimension {} exceeds {MAX_CONTROL}",
                self.lower.len()
            )));
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lo > hi {
                return Err(Error::Config(format!(
                    "control box channel {i}: lower {lo} > upper {hi}"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        u.len() == self.dim()
            && u
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
    }

    /// Clamps `u` into the box, reporting whether anything moved.
    pub fn clamp(&self, u: &[f64]) -> (Vec<f64>, bool) {
        let mut moved = false;
        let out = u
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| {
                let c = v.clamp(*lo, *hi);
                if c != *v {
                    moved = true;
                }
                c
            })
            .collect();
        (out, moved)
    }

    /// All `2^dim` corners in binary-counter order (channel 0 toggles fastest).
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..1usize << d)
            .map(|mask| {
                (0..d)
                    .map(|j| {
                        if mask >> j & 1 == 1 {
                            self.upper[j]
                        } else {
                            self.lower[j]
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Largest magnitude reachable in channel `j`.
    pub fn max_abs(&self, j: usize) -> f64 {
        self.lower[j].abs().max(self.upper[j].abs())
    }

    /// Minimizes `coeff·u` over the box; ties go to the lower bound.
    pub fn argmin_linear(&self, coeff: &[f64]) -> Vec<f64> {
        coeff
            .iter()
            .enumerate()
            .map(|(j, c)| if *c < 0.0 { self.upper[j] } else { self.lower[j] })
            .collect()
    }

    /// Maximizes `coeff·u` over the box; ties go to the lower bound.
    pub fn argmax_linear(&self, coeff: &[f64]) -> Vec<f64> {
        coeff
            .iter()
            .enumerate()
            .map(|(j, c)| if *c > 0.0 { self.upper[j] } else { self.lower[j] })
            .collect()
    }

    pub fn max_linear(&self, coeff: &[f64]) -> f64 {
        coeff
            .iter()
            .enumerate()
            .map(|(j, c)| c * if *c > 0.0 { self.upper[j] } else { self.lower[j] })
            .sum()
    }

    pub fn min_linear(&self, coeff: &[f64]) -> f64 {
        coeff
            .iter()
            .enumerate()
            .map(|(j, c)| c * if *c < 0.0 { self.upper[j] } else { self.lower[j] })
            .sum()
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .product()
    }
}

/// Car control box from a steering-angle limit [rad] and acceleration range.
/// The steering channel is stored as `tan δ`.
pub fn steering_box(max_steer: f64, accel: (f64, f64)) -> Result<ControlBox> {
    if !(max_steer > 0.0 && max_steer < PI / 2.0) {
        return Err(Error::Config(format!(
            "steering limit {max_steer} must lie in (0, π/2)"
        )));
    }
    let t = max_steer.tan();
    ControlBox::new(vec![-t, accel.0], vec![t, accel.1])
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Which state entries and control channels belong to one agent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentLayout {
    pub speed_index: Option<usize>,
    pub heading_index: Option<usize>,
    pub steer_channel: Option<usize>,
    pub accel_channel: Option<usize>,
}

/// Control-disturbance-affine dynamics `ẋ = f(x) + g(x)·u_A + h(x)·u_B`.
///
/// Evaluators write into caller-provided buffers so the grid solver can call
/// them per node without allocating.
pub trait AffineDynamics: Send + Sync + Debug {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn ego_dim(&self) -> usize;
    fn contender_dim(&self) -> usize {
        0
    }

    /// `f(x)`, length `n`.
    fn drift(&self, x: &[f64], out: &mut [f64]);
    /// `∂f/∂x`, row-major `n × n`.
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]);
    /// `g(x)`, row-major `n × m_A`.
    fn ego_gain(&self, x: &[f64], out: &mut [f64]);
    /// `h(x)`, row-major `n × m_B`.
    fn contender_gain(&self, _x: &[f64], _out: &mut [f64]) {}

    fn periodic_dims(&self) -> Vec<bool> {
        vec![false; self.state_dim()]
    }

    fn ego_layout(&self) -> AgentLayout {
        AgentLayout::default()
    }

    fn contender_layout(&self) -> AgentLayout {
        AgentLayout::default()
    }

    /// Full state rate for given controls.
    fn rate(&self, x: &[f64], u_a: &[f64], u_b: &[f64], out: &mut [f64]) {
        let n = self.state_dim();
        let (ma, mb) = (self.ego_dim(), self.contender_dim());
        self.drift(x, out);
        let mut g = [0.0; MAX_STATE * MAX_CONTROL];
        if ma > 0 {
            self.ego_gain(x, &mut g[..n * ma]);
            for i in 0..n {
                out[i] += dot(&g[i * ma..(i + 1) * ma], u_a);
            }
        }
        if mb > 0 {
            self.contender_gain(x, &mut g[..n * mb]);
            for i in 0..n {
                out[i] += dot(&g[i * mb..(i + 1) * mb], u_b);
            }
        }
    }

    /// Wraps periodic coordinates in place.
    fn wrap_state(&self, x: &mut [f64]) {
        for (v, p) in x.iter_mut().zip(self.periodic_dims()) {
            if p {
                *v = wrap_angle(*v);
            }
        }
    }
}

/// Allocating convenience wrapper around [`AffineDynamics::rate`].
pub fn state_rate(dyn_: &dyn AffineDynamics, x: &[f64], u_a: &[f64], u_b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; dyn_.state_dim()];
    dyn_.rate(x, u_a, u_b, &mut out);
    out
}

/// `f ≡ g ≡ h ≡ 0`.
#[derive(Debug, Clone)]
pub struct ZeroDynamics {
    pub state_dim: usize,
    pub ego_dim: usize,
    pub contender_dim: usize,
}

impl AffineDynamics for ZeroDynamics {
    fn name(&self) -> &'static str {
        "zero"
    }
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn ego_dim(&self) -> usize {
        self.ego_dim
    }
    fn contender_dim(&self) -> usize {
        self.contender_dim
    }
    fn drift(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn drift_jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn ego_gain(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn contender_gain(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// 1-D double integrator `ṗ = v, v̇ = u`, state `(p, v)`.
#[derive(Debug, Clone, Default)]
pub struct DoubleIntegrator;

impl AffineDynamics for DoubleIntegrator {
    fn name(&self) -> &'static str {
        "double-integrator"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn ego_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[1];
        out[1] = 0.0;
    }
    fn drift_jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&[0.0, 1.0, 0.0, 0.0]);
    }
    fn ego_gain(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = 1.0;
    }
    fn ego_layout(&self) -> AgentLayout {
        AgentLayout {
            speed_index: Some(1),
            accel_channel: Some(0),
            ..Default::default()
        }
    }
}

/// Single simple car, state `(x, y, θ, v)`, controls `(tan δ, a)`.
#[derive(Debug, Clone)]
pub struct SimpleCar {
    pub wheelbase: f64,
}

impl AffineDynamics for SimpleCar {
    fn name(&self) -> &'static str {
        "simple-car"
    }
    fn state_dim(&self) -> usize {
        4
    }
    fn ego_dim(&self) -> usize {
        2
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let (s, c) = x[2].sin_cos();
        out[0] = x[3] * c;
        out[1] = x[3] * s;
        out[2] = 0.0;
        out[3] = 0.0;
    }
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        let (s, c) = x[2].sin_cos();
        let v = x[3];
        out.fill(0.0);
        out[2] = -v * s;
        out[3] = c;
        out[4 + 2] = v * c;
        out[4 + 3] = s;
    }
    fn ego_gain(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        out[2 * 2] = x[3] / self.wheelbase;
        out[3 * 2 + 1] = 1.0;
    }
    fn periodic_dims(&self) -> Vec<bool> {
        vec![false, false, true, false]
    }
    fn ego_layout(&self) -> AgentLayout {
        AgentLayout {
            speed_index: Some(3),
            heading_index: Some(2),
            steer_channel: Some(0),
            accel_channel: Some(1),
        }
    }
}

/// Planar pose and speed of one car.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimpleCarState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

impl SimpleCarState {
    pub fn new(x: f64, y: f64, theta: f64, v: f64) -> Result<Self> {
        ensure_finite("simple car state", &[x, y, theta, v])?;
        Ok(SimpleCarState {
            x,
            y,
            theta: wrap_angle(theta),
            v,
        })
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.x, self.y, self.theta, self.v]
    }
}

/// Simple-car state rate for a steering angle `δ` [rad] and acceleration `a`.
pub fn eval_simple_car(state: &SimpleCarState, control: (f64, f64), wheelbase: f64) -> Result<[f64; 4]> {
    let (steer, accel) = control;
    ensure_finite(
        "simple car input",
        &[state.x, state.y, state.theta, state.v, steer, accel, wheelbase],
    )?;
    if steer.abs() >= PI / 2.0 {
        return Err(Error::Config(format!("|steering| = {} must be < π/2", steer.abs())));
    }
    if wheelbase <= 0.0 {
        return Err(Error::Config(format!("wheelbase {wheelbase} must be positive")));
    }
    let (s, c) = state.theta.sin_cos();
    Ok([
        state.v * c,
        state.v * s,
        state.v / wheelbase * steer.tan(),
        accel,
    ])
}

/// Coordinate frame of the pairwise car model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "frame", rename_all = "kebab-case")]
pub enum PairFrame {
    /// `(Δx, Δy, θ_A, θ_B, v_A, v_B)` with `Δ = B − A` in the ground frame.
    Ground6,
    /// `(p_x, p_y, ψ, v_A, v_B)`: contender position in the ego body frame and
    /// relative heading `ψ = θ_B − θ_A`.
    EgoFrame5,
    /// `(p_x, p_y, ψ, v_B)` with the ego at constant speed; the ego only steers.
    EgoFrame4 { ego_speed: f64 },
    /// `(Δx, Δy, θ_B, v_A)` in the ground frame: the ego holds heading 0 and
    /// only accelerates; the contender steers at constant speed.
    Lane4 { contender_speed: f64 },
}

/// Two simple cars sharing one wheelbase, written as one affine system.
#[derive(Debug, Clone)]
pub struct PairwiseCars {
    pub wheelbase: f64,
    pub frame: PairFrame,
}

impl PairwiseCars {
    pub fn new(wheelbase: f64, frame: PairFrame) -> Result<Self> {
        if !(wheelbase > 0.0 && wheelbase.is_finite()) {
            return Err(Error::Config(format!("wheelbase {wheelbase} must be positive")));
        }
        match frame {
            PairFrame::EgoFrame4 { ego_speed } => ensure_finite("ego speed", &[ego_speed])?,
            PairFrame::Lane4 { contender_speed } => ensure_finite("contender speed", &[contender_speed])?,
            _ => {}
        }
        Ok(PairwiseCars { wheelbase, frame })
    }

    /// Joint state for two absolute car states in this model's frame.
    pub fn joint_state(&self, ego: &SimpleCarState, contender: &SimpleCarState) -> Vec<f64> {
        let dx = contender.x - ego.x;
        let dy = contender.y - ego.y;
        match self.frame {
            PairFrame::Ground6 => vec![dx, dy, ego.theta, contender.theta, ego.v, contender.v],
            PairFrame::Lane4 { .. } => vec![dx, dy, contender.theta, ego.v],
            PairFrame::EgoFrame5 | PairFrame::EgoFrame4 { .. } => {
                let (s, c) = ego.theta.sin_cos();
                let px = c * dx + s * dy;
                let py = -s * dx + c * dy;
                let psi = wrap_angle(contender.theta - ego.theta);
                if matches!(self.frame, PairFrame::EgoFrame5) {
                    vec![px, py, psi, ego.v, contender.v]
                } else {
                    vec![px, py, psi, contender.v]
                }
            }
        }
    }

    fn ego_speed(&self, x: &[f64]) -> f64 {
        match self.frame {
            PairFrame::Ground6 => x[4],
            PairFrame::EgoFrame5 => x[3],
            PairFrame::EgoFrame4 { ego_speed } => ego_speed,
            PairFrame::Lane4 { .. } => x[3],
        }
    }

    fn contender_speed(&self, x: &[f64]) -> f64 {
        match self.frame {
            PairFrame::Ground6 => x[5],
            PairFrame::EgoFrame5 => x[4],
            PairFrame::EgoFrame4 { .. } => x[3],
            PairFrame::Lane4 { contender_speed } => contender_speed,
        }
    }
}

impl AffineDynamics for PairwiseCars {
    fn name(&self) -> &'static str {
        match self.frame {
            PairFrame::Ground6 => "pairwise-cars-ground6",
            PairFrame::EgoFrame5 => "pairwise-cars-ego5",
            PairFrame::EgoFrame4 { .. } => "pairwise-cars-ego4",
            PairFrame::Lane4 { .. } => "pairwise-cars-lane4",
        }
    }

    fn state_dim(&self) -> usize {
        match self.frame {
            PairFrame::Ground6 => 6,
            PairFrame::EgoFrame5 => 5,
            PairFrame::EgoFrame4 { .. } | PairFrame::Lane4 { .. } => 4,
        }
    }

    fn ego_dim(&self) -> usize {
        match self.frame {
            PairFrame::EgoFrame4 { .. } | PairFrame::Lane4 { .. } => 1,
            _ => 2,
        }
    }

    fn contender_dim(&self) -> usize {
        match self.frame {
            PairFrame::Lane4 { .. } => 1,
            _ => 2,
        }
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        match self.frame {
            PairFrame::Ground6 => {
                let (sa, ca) = x[2].sin_cos();
                let (sb, cb) = x[3].sin_cos();
                out[0] = x[5] * cb - x[4] * ca;
                out[1] = x[5] * sb - x[4] * sa;
            }
            PairFrame::Lane4 { contender_speed: vb } => {
                let (s, c) = x[2].sin_cos();
                out[0] = vb * c - x[3];
                out[1] = vb * s;
            }
            _ => {
                let (s, c) = x[2].sin_cos();
                let vb = self.contender_speed(x);
                out[0] = vb * c - self.ego_speed(x);
                out[1] = vb * s;
            }
        }
    }

    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let n = self.state_dim();
        match self.frame {
            PairFrame::Ground6 => {
                let (sa, ca) = x[2].sin_cos();
                let (sb, cb) = x[3].sin_cos();
                let (va, vb) = (x[4], x[5]);
                out[2] = va * sa;
                out[3] = -vb * sb;
                out[4] = -ca;
                out[5] = cb;
                out[n + 2] = -va * ca;
                out[n + 3] = vb * cb;
                out[n + 4] = -sa;
                out[n + 5] = sb;
            }
            PairFrame::EgoFrame5 => {
                let (s, c) = x[2].sin_cos();
                let vb = x[4];
                out[2] = -vb * s;
                out[3] = -1.0;
                out[4] = c;
                out[n + 2] = vb * c;
                out[n + 4] = s;
            }
            PairFrame::EgoFrame4 { .. } => {
                let (s, c) = x[2].sin_cos();
                let vb = x[3];
                out[2] = -vb * s;
                out[3] = c;
                out[n + 2] = vb * c;
                out[n + 3] = s;
            }
            PairFrame::Lane4 { contender_speed: vb } => {
                let (s, c) = x[2].sin_cos();
                out[2] = -vb * s;
                out[3] = -1.0;
                out[n + 2] = vb * c;
            }
        }
    }

    fn ego_gain(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let l = self.wheelbase;
        match self.frame {
            PairFrame::Ground6 => {
                out[2 * 2] = x[4] / l;
                out[4 * 2 + 1] = 1.0;
            }
            PairFrame::EgoFrame5 => {
                let k = x[3] / l;
                out[0] = k * x[1];
                out[2] = -k * x[0];
                out[2 * 2] = -k;
                out[3 * 2 + 1] = 1.0;
            }
            PairFrame::EgoFrame4 { ego_speed } => {
                let k = ego_speed / l;
                out[0] = k * x[1];
                out[1] = -k * x[0];
                out[2] = -k;
            }
            PairFrame::Lane4 { .. } => {
                out[3] = 1.0;
            }
        }
    }

    fn contender_gain(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let l = self.wheelbase;
        match self.frame {
            PairFrame::Ground6 => {
                out[3 * 2] = x[5] / l;
                out[5 * 2 + 1] = 1.0;
            }
            PairFrame::EgoFrame5 => {
                out[2 * 2] = x[4] / l;
                out[4 * 2 + 1] = 1.0;
            }
            PairFrame::EgoFrame4 { .. } => {
                out[2 * 2] = x[3] / l;
                out[3 * 2 + 1] = 1.0;
            }
            PairFrame::Lane4 { contender_speed } => {
                out[2] = contender_speed / l;
            }
        }
    }

    fn periodic_dims(&self) -> Vec<bool> {
        match self.frame {
            PairFrame::Ground6 => vec![false, false, true, true, false, false],
            PairFrame::EgoFrame5 => vec![false, false, true, false, false],
            PairFrame::EgoFrame4 { .. } | PairFrame::Lane4 { .. } => vec![false, false, true, false],
        }
    }

    fn ego_layout(&self) -> AgentLayout {
        match self.frame {
            PairFrame::Ground6 => AgentLayout {
                speed_index: Some(4),
                heading_index: Some(2),
                steer_channel: Some(0),
                accel_channel: Some(1),
            },
            PairFrame::EgoFrame5 => AgentLayout {
                speed_index: Some(3),
                heading_index: None,
                steer_channel: Some(0),
                accel_channel: Some(1),
            },
            PairFrame::EgoFrame4 { .. } => AgentLayout {
                steer_channel: Some(0),
                ..Default::default()
            },
            PairFrame::Lane4 { .. } => AgentLayout {
                speed_index: Some(3),
                accel_channel: Some(0),
                ..Default::default()
            },
        }
    }

    fn contender_layout(&self) -> AgentLayout {
        match self.frame {
            PairFrame::Ground6 => AgentLayout {
                speed_index: Some(5),
                heading_index: Some(3),
                steer_channel: Some(0),
                accel_channel: Some(1),
            },
            PairFrame::EgoFrame5 => AgentLayout {
                speed_index: Some(4),
                heading_index: Some(2),
                steer_channel: Some(0),
                accel_channel: Some(1),
            },
            PairFrame::EgoFrame4 { .. } => AgentLayout {
                speed_index: Some(3),
                heading_index: Some(2),
                steer_channel: Some(0),
                accel_channel: Some(1),
            },
            PairFrame::Lane4 { .. } => AgentLayout {
                heading_index: Some(2),
                steer_channel: Some(0),
                ..Default::default()
            },
        }
    }
}

/// Builds the 6-D ground-frame pairwise model and the joint state of two cars.
pub fn joint_relative_dynamics(
    ego: &SimpleCarState,
    contender: &SimpleCarState,
    wheelbase: f64,
) -> Result<(PairwiseCars, Vec<f64>)> {
    ensure_finite("ego state", &ego.to_vec())?;
    ensure_finite("contender state", &contender.to_vec())?;
    let model = PairwiseCars::new(wheelbase, PairFrame::Ground6)?;
    let x = model.joint_state(ego, contender);
    Ok((model, x))
}

/// Policy signature: `(t, x) -> control`.
pub type Policy<'a> = dyn Fn(f64, &[f64]) -> Vec<f64> + 'a;

/// Sampled trajectory. `states[k]` is the state at `times[k]`; controls are
/// held over `[times[k], times[k+1])`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub ego_controls: Vec<Vec<f64>>,
    pub contender_controls: Vec<Vec<f64>>,
    /// Number of policy outputs that had to be clamped into their box.
    pub clamped: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Fixed-step integration settings.
#[derive(Debug, Clone, Copy)]
pub struct RolloutSpec {
    pub dt: f64,
    pub horizon: f64,
}

impl Default for RolloutSpec {
    fn default() -> Self {
        RolloutSpec {
            dt: 0.05,
            horizon: 2.0,
        }
    }
}

impl RolloutSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt {} must be positive", self.dt)));
        }
        if !(self.horizon >= self.dt) {
            return Err(Error::Config(format!(
                "horizon {} must be at least dt {}",
                self.horizon, self.dt
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt - 1e-9).ceil() as usize
    }
}

/// One RK4 step with controls held constant.
pub fn rk4_step(dyn_: &dyn AffineDynamics, x: &[f64], u_a: &[f64], u_b: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    dyn_.rate(x, u_a, u_b, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    dyn_.rate(&tmp, u_a, u_b, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    dyn_.rate(&tmp, u_a, u_b, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    dyn_.rate(&tmp, u_a, u_b, &mut k4);
    (0..n)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Integrates the closed loop with fixed-step RK4. Policy outputs outside
/// their box are clamped and counted in [`Trajectory::clamped`].
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    dyn_: &dyn AffineDynamics,
    x0: &[f64],
    ego_policy: &Policy<'_>,
    contender_policy: &Policy<'_>,
    ego_box: &ControlBox,
    contender_box: &ControlBox,
    spec: RolloutSpec,
) -> Result<Trajectory> {
    rollout_projected(dyn_, x0, ego_policy, contender_policy, ego_box, contender_box, spec, |_| {})
}

/// [`rollout`] with a state projection applied after every step (used to stop
/// braking cars at zero speed).
#[allow(clippy::too_many_arguments)]
pub fn rollout_projected(
    dyn_: &dyn AffineDynamics,
    x0: &[f64],
    ego_policy: &Policy<'_>,
    contender_policy: &Policy<'_>,
    ego_box: &ControlBox,
    contender_box: &ControlBox,
    spec: RolloutSpec,
    project: impl Fn(&mut [f64]),
) -> Result<Trajectory> {
    spec.validate()?;
    check_dim("initial state", dyn_.state_dim(), x0.len())?;
    check_dim("ego box", dyn_.ego_dim(), ego_box.dim())?;
    check_dim("contender box", dyn_.contender_dim(), contender_box.dim())?;
    ensure_finite("initial state", x0)?;

    let steps = spec.steps();
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        ..Default::default()
    };
    let mut x = x0.to_vec();
    let mut t = 0.0;
    traj.times.push(t);
    traj.states.push(x.clone());
    for k in 0..steps {
        let h = if k + 1 == steps { spec.horizon - t } else { spec.dt };
        let (ua, ca) = ego_box.clamp(&ego_policy(t, &x));
        let (ub, cb) = contender_box.clamp(&contender_policy(t, &x));
        traj.clamped += usize::from(ca) + usize::from(cb);
        let mut next = rk4_step(dyn_, &x, &ua, &ub, h);
        project(&mut next);
        dyn_.wrap_state(&mut next);
        ensure_finite("rollout state", &next)?;
        traj.ego_controls.push(ua);
        traj.contender_controls.push(ub);
        x = next;
        t = (k + 1) as f64 * spec.dt;
        if k + 1 == steps {
            t = spec.horizon;
        }
        traj.times.push(t);
        traj.states.push(x.clone());
    }
    if traj.clamped > 0 {
        log::warn!("rollout clamped {} control samples", traj.clamped);
    }
    Ok(traj)
}

/// Serializable choice of dynamics model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum DynamicsSpec {
    Zero {
        state_dim: usize,
        ego_dim: usize,
        #[serde(default)]
        contender_dim: usize,
    },
    DoubleIntegrator,
    SimpleCar { wheelbase: f64 },
    PairwiseCars {
        wheelbase: f64,
        #[serde(flatten)]
        frame: PairFrame,
    },
}

impl DynamicsSpec {
    pub fn build(&self) -> Result<Box<dyn AffineDynamics>> {
        Ok(match self {
            DynamicsSpec::Zero {
                state_dim,
                ego_dim,
                contender_dim,
            } => {
                if *state_dim == 0 || *state_dim > MAX_STATE || *ego_dim > MAX_CONTROL || *contender_dim > MAX_CONTROL {
                    return Err(Error::Config("zero dynamics dimensions out of range".into()));
                }
                Box::new(ZeroDynamics {
                    state_dim: *state_dim,
                    ego_dim: *ego_dim,
                    contender_dim: *contender_dim,
                })
            }
            DynamicsSpec::DoubleIntegrator => Box::new(DoubleIntegrator),
            DynamicsSpec::SimpleCar { wheelbase } => {
                if !(*wheelbase > 0.0 && wheelbase.is_finite()) {
                    return Err(Error::Config(format!("wheelbase {wheelbase} must be positive")));
                }
                Box::new(SimpleCar { wheelbase: *wheelbase })
            }
            DynamicsSpec::PairwiseCars { wheelbase, frame } => Box::new(PairwiseCars::new(*wheelbase, *frame)?),
        })
    }
}
