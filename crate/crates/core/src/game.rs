//! Inner optimization of the HJI Hamiltonian for each behavioral assumption.
//!
//! All objectives are linear in the controls and every feasible set is a box
//! cut by one halfspace, so optima are found by enumerating polytope vertices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{dot, ControlBox, MAX_CONTROL};
use crate::hocbf::HocbfAffineConstraint;
use crate::polytope::{for_each_vertex, FeasiblePolytope, Halfspace};

/// Relative slack granted to the inner feasibility test so that contender
/// vertices lying exactly on the `Ũ_B` boundary keep a nonempty ego set.
const BOUNDARY_SLACK: f64 = 1e-12;

/// Tolerance of the max-min ≥ min-max comparison.
pub const MINIMAX_TOL: f64 = 1e-9;

/// One node's game: objective `drift + A·u_A + B·u_B` and coupling
/// constraint `a·u_A + b·u_B + c ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGameInstance {
    pub drift_term: f64,
    pub ego_grad_coeff: Vec<f64>,
    pub contender_grad_coeff: Vec<f64>,
    pub constraint: HocbfAffineConstraint,
    pub ego_box: ControlBox,
    pub contender_box: ControlBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSolution {
    pub value: f64,
    pub u_a: Vec<f64>,
    pub u_b: Vec<f64>,
    /// `Ũ_B` was empty and the worst-case Hamiltonian was used instead.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimaxCheck {
    pub maxmin: f64,
    pub minmax: f64,
    /// `None` when `Ũ_A` or `Ũ_B` is empty.
    pub holds: Option<bool>,
}

/// Borrowed view of a game, so the grid solver can avoid allocating.
#[derive(Debug, Clone, Copy)]
pub struct GameRef<'a> {
    pub drift_term: f64,
    pub ego_grad: &'a [f64],
    pub contender_grad: &'a [f64],
    pub a: &'a [f64],
    pub b: &'a [f64],
    pub c: f64,
    pub ego_box: &'a ControlBox,
    pub contender_box: &'a ControlBox,
}

impl LinearGameInstance {
    pub fn as_ref(&self) -> GameRef<'_> {
        GameRef {
            drift_term: self.drift_term,
            ego_grad: &self.ego_grad_coeff,
            contender_grad: &self.contender_grad_coeff,
            a: &self.constraint.ego_coeff,
            b: &self.constraint.contender_coeff,
            c: self.constraint.offset,
            ego_box: &self.ego_box,
            contender_box: &self.contender_box,
        }
    }

    /// Random instance with `|a_i| ≥ 0.1` whose `Ũ_A` and `Ũ_B` are both
    /// nonempty, for property sweeps.
    pub fn random<R: Rng>(rng: &mut R, ego_dim: usize, contender_dim: usize) -> Self {
        let bx = |rng: &mut R, d: usize| {
            let lo: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..0.0)).collect();
            let hi: Vec<f64> = lo.iter().map(|l| l + rng.gen_range(0.2..3.0)).collect();
            ControlBox::new(lo, hi).expect("valid box")
        };
        let away_from_zero = |rng: &mut R| {
            let m = rng.gen_range(0.1..2.0);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        };
        loop {
            let inst = LinearGameInstance {
                drift_term: rng.gen_range(-2.0..2.0),
                ego_grad_coeff: (0..ego_dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                contender_grad_coeff: (0..contender_dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                constraint: HocbfAffineConstraint {
                    ego_coeff: (0..ego_dim).map(|_| away_from_zero(rng)).collect(),
                    contender_coeff: (0..contender_dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                    offset: rng.gen_range(-3.0..3.0),
                },
                ego_box: bx(rng, ego_dim),
                contender_box: bx(rng, contender_dim),
            };
            let r = inst.as_ref();
            if !ego_feasible_set(&r).empty && !contender_safe_polytope(&r).empty {
                return inst;
            }
        }
    }
}

/// Separable bang-bang solution of `max_{u_A} min_{u_B}` over the boxes.
pub fn hamiltonian_worst_case(inst: &LinearGameInstance) -> GameSolution {
    let u_a = inst.ego_box.argmax_linear(&inst.ego_grad_coeff);
    let u_b = inst.contender_box.argmin_linear(&inst.contender_grad_coeff);
    GameSolution {
        value: inst.drift_term + (dot(&inst.ego_grad_coeff, &u_a) + dot(&inst.contender_grad_coeff, &u_b)),
        u_a,
        u_b,
        fallback: false,
    }
}

/// Worst-case Hamiltonian value without allocating.
pub fn worst_case_value(g: &GameRef<'_>) -> f64 {
    g.drift_term + (g.ego_box.max_linear(g.ego_grad) + g.contender_box.min_linear(g.contender_grad))
}

/// `{u_B : b·u_B + max_{u_A ∈ U_A} a·u_A + c ≥ 0}`.
pub fn contender_safe_set_halfspace(inst: &LinearGameInstance) -> Halfspace {
    let r = inst.as_ref();
    Halfspace::new(r.b.to_vec(), r.c + r.ego_box.max_linear(r.a))
}

fn contender_safe_polytope(g: &GameRef<'_>) -> FeasiblePolytope {
    FeasiblePolytope::new(g.contender_box, Halfspace::new(g.b.to_vec(), g.c + g.ego_box.max_linear(g.a)))
}

fn ego_feasible_set(g: &GameRef<'_>) -> FeasiblePolytope {
    FeasiblePolytope::new(g.ego_box, Halfspace::new(g.a.to_vec(), g.c + g.contender_box.max_linear(g.b)))
}

/// `Ũ_B` as a polytope.
pub fn contender_safe_set(inst: &LinearGameInstance) -> FeasiblePolytope {
    contender_safe_polytope(&inst.as_ref())
}

/// Optimum of `min_{u_B ∈ Ũ_B} max_{u_A ∈ U_A(u_B)}`, writing the optimizers
/// into `u_a`, `u_b`. Returns `(value, fallback)`.
///
/// The inner maximum is a concave function of `u_B` (an LP value in its
/// right-hand side), so the outer minimum is attained at a vertex of `Ũ_B`.
pub fn constrained_solve(g: &GameRef<'_>, u_a: &mut [f64], u_b: &mut [f64]) -> (f64, bool) {
    let max_a = g.ego_box.max_linear(g.a);
    let a_scale: f64 = g.a.iter().enumerate().map(|(j, v)| v.abs() * g.ego_box.max_abs(j)).sum();
    let mut best = f64::INFINITY;
    for_each_vertex(&g.contender_box.lower, &g.contender_box.upper, g.b, g.c + max_a, |ub| {
        let r = dot(g.b, ub) + g.c;
        let slack = BOUNDARY_SLACK * (1.0 + r.abs() + a_scale);
        let mut inner = f64::NEG_INFINITY;
        let mut arg = [0.0; MAX_CONTROL];
        for_each_vertex(&g.ego_box.lower, &g.ego_box.upper, g.a, r + slack, |ua| {
            let v = dot(g.ego_grad, ua);
            if v > inner {
                inner = v;
                arg[..ua.len()].copy_from_slice(ua);
            }
        });
        if inner == f64::NEG_INFINITY {
            // roundoff at the Ũ_B boundary: the only feasible ego controls maximize a·u_A
            let ua = g.ego_box.argmax_linear(g.a);
            inner = dot(g.ego_grad, &ua);
            arg[..ua.len()].copy_from_slice(&ua);
        }
        let v = inner + dot(g.contender_grad, ub);
        if v < best {
            best = v;
            u_b.copy_from_slice(ub);
            u_a.copy_from_slice(&arg[..u_a.len()]);
        }
    });
    if best == f64::INFINITY {
        let ua = g.ego_box.argmax_linear(g.ego_grad);
        let ub = g.contender_box.argmin_linear(g.contender_grad);
        u_a.copy_from_slice(&ua);
        u_b.copy_from_slice(&ub);
        return (worst_case_value(g), true);
    }
    (g.drift_term + best, false)
}

/// Constrained Hamiltonian with the contender acting first.
pub fn hamiltonian_constrained(inst: &LinearGameInstance) -> GameSolution {
    let mut u_a = vec![0.0; inst.ego_box.dim()];
    let mut u_b = vec![0.0; inst.contender_box.dim()];
    let (value, fallback) = constrained_solve(&inst.as_ref(), &mut u_a, &mut u_b);
    GameSolution { value, u_a, u_b, fallback }
}

/// Both sides of the constrained minimax inequality, without the drift term.
///
/// The max-min side is exact for the same reason as [`constrained_solve`]:
/// the inner minimum is convex in `u_A`, so its maximum sits on a vertex of `Ũ_A`.
pub fn check_minimax_order(inst: &LinearGameInstance) -> MinimaxCheck {
    let g = inst.as_ref();
    let ua_set = ego_feasible_set(&g);
    let ub_set = contender_safe_polytope(&g);
    let b_scale: f64 = g.b.iter().enumerate().map(|(j, v)| v.abs() * g.contender_box.max_abs(j)).sum();
    let mut maxmin = f64::NEG_INFINITY;
    for ua in &ua_set.vertices {
        let r = dot(g.a, ua) + g.c;
        let slack = BOUNDARY_SLACK * (1.0 + r.abs() + b_scale);
        let mut inner = f64::INFINITY;
        for_each_vertex(&g.contender_box.lower, &g.contender_box.upper, g.b, r + slack, |ub| {
            inner = inner.min(dot(g.contender_grad, ub));
        });
        if inner == f64::INFINITY {
            inner = dot(g.contender_grad, &g.contender_box.argmax_linear(g.b));
        }
        maxmin = maxmin.max(dot(g.ego_grad, ua) + inner);
    }
    let mut ua = vec![0.0; g.ego_box.dim()];
    let mut ub = vec![0.0; g.contender_box.dim()];
    let (v, _) = constrained_solve(&g, &mut ua, &mut ub);
    let minmax = v - g.drift_term;
    let holds = (!ua_set.empty && !ub_set.empty).then_some(maxmin >= minmax - MINIMAX_TOL);
    MinimaxCheck { maxmin, minmax, holds }
}

/// `{u_A ∈ box : drift + A·u_A + contender_min + ∂V/∂t ≥ 0}`, where
/// `contender_min` is the contender's best response under the assumption.
pub fn safe_control_polytope(
    drift_term: f64,
    ego_grad: &[f64],
    contender_min: f64,
    dv_dt: f64,
    ego_box: &ControlBox,
) -> FeasiblePolytope {
    FeasiblePolytope::new(ego_box, Halfspace::new(ego_grad.to_vec(), drift_term + contender_min + dv_dt))
}

/// Minimum of `B·u_B` over `Ũ_B`, falling back to the full box when `Ũ_B` is empty.
pub fn constrained_contender_min(inst: &LinearGameInstance) -> (f64, bool) {
    let set = contender_safe_set(inst);
    match set.argmin(&inst.contender_grad_coeff) {
        Some((_, v)) => (v, false),
        None => (inst.contender_box.min_linear(&inst.contender_grad_coeff), true),
    }
}
