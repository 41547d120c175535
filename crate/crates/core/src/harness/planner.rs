use serde::{Deserialize, Serialize};

use crate::dynamics::{rk4_step, wrap_angle, AffineDynamics, ControlBox, Trajectory};
use crate::error::{check_dim, ensure_finite, Error, Result};
use crate::hocbf::{ContenderRule, HocbfModel};

/// Proportional goal-tracking reference law and planner limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// `tan δ_ref = k_heading · (bearing to goal − θ)`
    pub k_heading: f64,
    /// `a_ref = k_speed · (v_ref − v)`
    pub k_speed: f64,
    pub v_ref: f64,
    pub dt: f64,
    pub horizon: f64,
    /// Episode ends once the position is this close to the goal.
    pub goal_tolerance: f64,
    /// Abort after this many consecutive infeasible steps.
    pub max_infeasible: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            k_heading: 1.0,
            k_speed: 1.0,
            v_ref: 6.0,
            dt: 0.05,
            horizon: 8.0,
            goal_tolerance: 1.0,
            max_infeasible: 5,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_finite(
            "planner config",
            &[self.k_heading, self.k_speed, self.v_ref, self.dt, self.horizon, self.goal_tolerance],
        )?;
        if !(self.dt > 0.0 && self.horizon >= self.dt && self.goal_tolerance >= 0.0) {
            return Err(Error::Config("planner needs dt > 0, horizon ≥ dt, goal tolerance ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PlanResult {
    pub trajectory: Trajectory,
    /// Step indices where the HOCBF set was empty and the fallback vertex was used.
    pub infeasible_steps: Vec<usize>,
    pub reached_goal: bool,
}

impl PlanResult {
    pub fn min_barrier(&self, model: &HocbfModel) -> f64 {
        self.trajectory
            .states
            .iter()
            .map(|x| model.barrier().value(x))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Reference control for a single car with layout `(x, y, θ, v)` and
/// controls `(tan δ, a)`.
pub fn reference_control(cfg: &PlannerConfig, x: &[f64], goal: [f64; 2], bx: &ControlBox) -> Vec<f64> {
    let bearing = (goal[1] - x[1]).atan2(goal[0] - x[0]);
    let u = [cfg.k_heading * wrap_angle(bearing - x[2]), cfg.k_speed * (cfg.v_ref - x[3])];
    bx.clamp(&u).0
}

/// Goal-reaching rollout filtered by the HOCBF quadratic program
/// `min ‖u − u_ref‖²` over the control box and the HOCBF halfspace.
pub fn plan_hocbf_qp(
    model: &HocbfModel,
    dyn_: &dyn AffineDynamics,
    x0: &[f64],
    goal: [f64; 2],
    bx: &ControlBox,
    cfg: &PlannerConfig,
) -> Result<PlanResult> {
    cfg.validate()?;
    check_dim("initial state", dyn_.state_dim(), x0.len())?;
    check_dim("ego box", dyn_.ego_dim(), bx.dim())?;
    if dyn_.state_dim() != 4 || dyn_.ego_dim() != 2 {
        return Err(Error::Config("planner expects a single car (x, y, θ, v) with (tan δ, a)".into()));
    }
    ensure_finite("initial state", x0)?;
    let psi = model.psi_sequence(dyn_, x0)?;
    if psi.iter().any(|&p| p < 0.0) {
        return Err(Error::Config(format!("initial state outside the HOCBF safe sets: ψ = {psi:?}")));
    }
    let steps = (cfg.horizon / cfg.dt - 1e-9).ceil() as usize;
    let mut res = PlanResult::default();
    let traj = &mut res.trajectory;
    let mut x = x0.to_vec();
    traj.times.push(0.0);
    traj.states.push(x.clone());
    let mut run = 0;
    for k in 0..steps {
        if ((x[0] - goal[0]).powi(2) + (x[1] - goal[1]).powi(2)).sqrt() <= cfg.goal_tolerance {
            res.reached_goal = true;
            break;
        }
        let u_ref = reference_control(cfg, &x, goal, bx);
        let set = model.admissible_control_set(dyn_, &x, bx, ContenderRule::Absent)?;
        let u = match set.project(&u_ref) {
            Some(u) => {
                run = 0;
                u
            }
            None => {
                res.infeasible_steps.push(k);
                run += 1;
                if run > cfg.max_infeasible {
                    return Err(Error::Numerical(format!(
                        "HOCBF program infeasible for {run} consecutive steps at t = {:.2}",
                        k as f64 * cfg.dt
                    )));
                }
                let c = model.constraint_at(dyn_, &x)?;
                bx.argmax_linear(&c.ego_coeff)
            }
        };
        let mut next = rk4_step(dyn_, &x, &u, &[], cfg.dt);
        dyn_.wrap_state(&mut next);
        ensure_finite("planner state", &next)?;
        traj.ego_controls.push(u);
        traj.contender_controls.push(Vec::new());
        x = next;
        traj.times.push((k + 1) as f64 * cfg.dt);
        traj.states.push(x.clone());
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{steering_box, SimpleCar};
    use crate::hocbf::{BarrierSpec, ClassKappaFn};

    fn model(center: [f64; 2]) -> HocbfModel {
        HocbfModel::new(
            BarrierSpec::circle(center, 3.0),
            vec![ClassKappaFn::power(0.54, 1.16).unwrap(), ClassKappaFn::power(0.68, 1.11).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn slack_constraint_gives_clamped_reference() {
        let m = model([500.0, 500.0]);
        let car = SimpleCar { wheelbase: 2.7 };
        let bx = steering_box(0.5, (-4.0, 3.0)).unwrap();
        let cfg = PlannerConfig {
            horizon: 1.0,
            ..Default::default()
        };
        let r = plan_hocbf_qp(&m, &car, &[0.0, 5.0, 0.0, 2.0], [30.0, 0.0], &bx, &cfg).unwrap();
        for (x, u) in r.trajectory.states.iter().zip(&r.trajectory.ego_controls) {
            assert_eq!(u, &reference_control(&cfg, x, [30.0, 0.0], &bx));
        }
        assert!(r.infeasible_steps.is_empty());
    }

    #[test]
    fn active_constraint_projects_onto_the_line() {
        let m = model([15.0, 0.0]);
        let car = SimpleCar { wheelbase: 2.7 };
        let wide = ControlBox::symmetric(&[100.0, 100.0]).unwrap();
        let cfg = PlannerConfig {
            v_ref: 20.0,
            ..Default::default()
        };
        // heading straight at the obstacle, fast: braking is required
        let x = [9.0, 0.2, 0.0, 8.0];
        let c = m.constraint_at(&car, &x).unwrap();
        let u_ref = reference_control(&cfg, &x, [30.0, 0.0], &wide);
        let lhs = crate::dynamics::dot(&c.ego_coeff, &u_ref) + c.offset;
        assert!(lhs < 0.0, "constraint should be active");
        let a2: f64 = c.ego_coeff.iter().map(|v| v * v).sum();
        let want: Vec<f64> = u_ref.iter().zip(&c.ego_coeff).map(|(u, a)| u - lhs * a / a2).collect();
        let set = m.admissible_control_set(&car, &x, &wide, ContenderRule::Absent).unwrap();
        let got = set.project(&u_ref).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9 * (1.0 + w.abs()), "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn rejects_start_outside_safe_set() {
        let m = model([15.0, 0.0]);
        let car = SimpleCar { wheelbase: 2.7 };
        let bx = steering_box(0.5, (-4.0, 3.0)).unwrap();
        assert!(plan_hocbf_qp(&m, &car, &[15.0, 1.0, 0.0, 3.0], [30.0, 0.0], &bx, &PlannerConfig::default()).is_err());
    }
}
