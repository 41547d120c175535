use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{steering_box, ControlBox, SimpleCar};
use crate::error::{Error, Result};
use crate::hocbf::{BarrierSpec, ClassKappaFn, HocbfModel};
use crate::learning::{DemoDataset, DemoSample};

use super::planner::{plan_hocbf_qp, PlannerConfig};

fn gt_alphas() -> Vec<ClassKappaFn> {
    vec![
        ClassKappaFn::power(0.54, 1.16).expect("valid"),
        ClassKappaFn::power(0.68, 1.11).expect("valid"),
    ]
}

/// Circular-obstacle reach-avoid scenario used to generate demonstrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyScenario {
    pub wheelbase: f64,
    pub obstacle_center: [f64; 2],
    pub obstacle_radius: f64,
    pub goal: [f64; 2],
    pub alphas: Vec<ClassKappaFn>,
    pub max_steer: f64,
    pub accel: (f64, f64),
    pub start_x: (f64, f64),
    pub start_y: (f64, f64),
    pub start_heading: (f64, f64),
    pub start_speed: (f64, f64),
    pub planner: PlannerConfig,
}

impl Default for ToyScenario {
    fn default() -> Self {
        ToyScenario {
            wheelbase: 2.7,
            obstacle_center: [15.0, 0.0],
            obstacle_radius: 3.0,
            goal: [30.0, 0.0],
            alphas: gt_alphas(),
            max_steer: 0.5,
            accel: (-4.0, 3.0),
            start_x: (0.0, 5.0),
            start_y: (-4.0, 4.0),
            start_heading: (-0.3, 0.3),
            start_speed: (3.0, 8.0),
            planner: PlannerConfig::default(),
        }
    }
}

impl ToyScenario {
    pub fn model(&self) -> Result<HocbfModel> {
        HocbfModel::new(
            BarrierSpec::circle(self.obstacle_center, self.obstacle_radius),
            self.alphas.clone(),
        )
    }

    pub fn dynamics(&self) -> SimpleCar {
        SimpleCar {
            wheelbase: self.wheelbase,
        }
    }

    pub fn control_box(&self) -> Result<ControlBox> {
        steering_box(self.max_steer, self.accel)
    }

    /// Sampling box of the initial states, `(lower, upper)` per coordinate.
    pub fn start_box(&self) -> [(f64, f64); 4] {
        [self.start_x, self.start_y, self.start_heading, self.start_speed]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub episodes: usize,
    pub samples: usize,
    /// Samples dropped because the HOCBF program was infeasible at that step.
    pub discarded: usize,
    pub reached_goal: usize,
    pub min_barrier: f64,
}

/// Planner episodes from random initial states; one sample per control step.
pub fn gen_demo_corpus(scenario: &ToyScenario, episodes: usize, seed: u64) -> Result<(DemoDataset, CorpusStats)> {
    if episodes == 0 {
        return Err(Error::Config("episode count must be positive".into()));
    }
    let model = scenario.model()?;
    let car = scenario.dynamics();
    let bx = scenario.control_box()?;
    for (lo, hi) in scenario.start_box() {
        if !(lo <= hi) {
            return Err(Error::Config(format!("empty start range [{lo}, {hi}]")));
        }
    }
    let runs = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut x0 = None;
            for _ in 0..1000 {
                let x: Vec<f64> = scenario
                    .start_box()
                    .iter()
                    .map(|&(lo, hi)| if lo == hi { lo } else { rng.gen_range(lo..hi) })
                    .collect();
                if model.psi_sequence(&car, &x)?.iter().all(|&p| p >= 0.0) {
                    x0 = Some(x);
                    break;
                }
            }
            let x0 = x0.ok_or_else(|| Error::Config("no admissible initial state in the start box".into()))?;
            plan_hocbf_qp(&model, &car, &x0, scenario.goal, &bx, &scenario.planner)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut data = DemoDataset::new("toy-circle", scenario.planner.dt, 4, 2, 0);
    let mut stats = CorpusStats {
        episodes,
        min_barrier: f64::INFINITY,
        ..Default::default()
    };
    for run in &runs {
        stats.reached_goal += usize::from(run.reached_goal);
        stats.min_barrier = stats.min_barrier.min(run.min_barrier(&model));
        let traj = &run.trajectory;
        for (k, u) in traj.ego_controls.iter().enumerate() {
            if run.infeasible_steps.contains(&k) {
                stats.discarded += 1;
                continue;
            }
            data.push(DemoSample {
                t: traj.times[k],
                x: traj.states[k].clone(),
                u_a: u.clone(),
                u_b: None,
            })?;
        }
    }
    stats.samples = data.len();
    Ok((data, stats))
}
