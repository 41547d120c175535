use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{rk4_step, AffineDynamics, AgentLayout, PairFrame, PairwiseCars, SimpleCar, SimpleCarState};
use crate::error::{Error, Result};
use crate::learning::{DemoDataset, DemoSample};

/// Multi-car highway scenes standing in for a recorded driving log.
///
/// Each car keeps a lane with a proportional heading law, tracks its own
/// cruise speed with noisy acceleration, brakes when the gap ahead drops
/// below a time headway, and changes lanes at random. Car 0 is the ego; the
/// nearest other car is the contender at every sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HighwayConfig {
    pub frame: PairFrame,
    pub wheelbase: f64,
    pub cars: usize,
    pub lanes: usize,
    pub lane_width: f64,
    pub speed: (f64, f64),
    pub dt: f64,
    pub scene_duration: f64,
    pub max_tan_steer: f64,
    pub accel: (f64, f64),
    pub accel_noise: f64,
    /// Expected lane changes per car and second.
    pub lane_change_rate: f64,
    pub headway: f64,
}

impl Default for HighwayConfig {
    fn default() -> Self {
        HighwayConfig {
            frame: PairFrame::Ground6,
            wheelbase: 2.7,
            cars: 4,
            lanes: 3,
            lane_width: 3.7,
            speed: (15.0, 30.0),
            dt: 0.1,
            scene_duration: 10.0,
            max_tan_steer: 0.3,
            accel: (-4.0, 3.0),
            accel_noise: 0.5,
            lane_change_rate: 0.05,
            headway: 1.5,
        }
    }
}

impl HighwayConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.cars >= 2
            && self.lanes >= 1
            && self.lane_width > 0.0
            && self.speed.0 > 0.0
            && self.speed.0 <= self.speed.1
            && self.dt > 0.0
            && self.scene_duration >= self.dt
            && self.max_tan_steer > 0.0
            && self.accel.0 < 0.0
            && self.accel.1 > 0.0
            && self.accel_noise >= 0.0
            && self.lane_change_rate >= 0.0
            && self.headway > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid highway generator settings".into()))
        }
    }
}

struct Car {
    s: SimpleCarState,
    lane: usize,
    cruise: f64,
    u: (f64, f64),
}

fn place(layout: AgentLayout, dim: usize, u: (f64, f64)) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if let Some(i) = layout.steer_channel {
        out[i] = u.0;
    }
    if let Some(i) = layout.accel_channel {
        out[i] = u.1;
    }
    out
}

/// Exactly `samples` pairwise samples in `cfg.frame`, deterministic in `seed`.
pub fn synthetic_highway_log(cfg: &HighwayConfig, samples: usize, seed: u64) -> Result<DemoDataset> {
    cfg.validate()?;
    let pair = PairwiseCars::new(cfg.wheelbase, cfg.frame)?;
    let car = SimpleCar {
        wheelbase: cfg.wheelbase,
    };
    let (ma, mb) = (pair.ego_dim(), pair.contender_dim());
    let mut data = DemoDataset::new("synthetic-highway", cfg.dt, pair.state_dim(), ma, mb);
    let steps = (cfg.scene_duration / cfg.dt).round() as usize;
    let mut scene = 0u64;
    while data.len() < samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(scene);
        scene += 1;
        let mut cars: Vec<Car> = Vec::with_capacity(cfg.cars);
        while cars.len() < cfg.cars {
            let lane = rng.gen_range(0..cfg.lanes);
            let x = rng.gen_range(0.0..25.0 * cfg.cars as f64);
            if cars.iter().any(|c| c.lane == lane && (c.s.x - x).abs() < 12.0) {
                continue;
            }
            let v = rng.gen_range(cfg.speed.0..=cfg.speed.1);
            cars.push(Car {
                s: SimpleCarState {
                    x,
                    y: lane as f64 * cfg.lane_width,
                    theta: 0.0,
                    v,
                },
                lane,
                cruise: v,
                u: (0.0, 0.0),
            });
        }
        for k in 0..steps {
            for i in 0..cars.len() {
                if cfg.lanes > 1 && rng.gen::<f64>() < cfg.lane_change_rate * cfg.dt {
                    let l = cars[i].lane;
                    cars[i].lane = if l == 0 {
                        1
                    } else if l + 1 == cfg.lanes || rng.gen::<bool>() {
                        l - 1
                    } else {
                        l + 1
                    };
                }
                let c = &cars[i];
                let target_y = c.lane as f64 * cfg.lane_width;
                let heading = (0.15 * (target_y - c.s.y)).clamp(-0.15, 0.15);
                let steer = (0.8 * (heading - c.s.theta)).clamp(-cfg.max_tan_steer, cfg.max_tan_steer);
                let gap = cars
                    .iter()
                    .enumerate()
                    .filter(|&(j, o)| j != i && (o.s.y - c.s.y).abs() < 0.5 * cfg.lane_width && o.s.x > c.s.x)
                    .map(|(_, o)| o.s.x - c.s.x)
                    .fold(f64::INFINITY, f64::min);
                let mut a = 0.5 * (c.cruise - c.s.v) + cfg.accel_noise * (rng.gen::<f64>() - 0.5) * 2.0;
                if gap < cfg.headway * c.s.v {
                    a = cfg.accel.0 * (1.0 - gap / (cfg.headway * c.s.v)).min(1.0);
                }
                if c.s.v <= 0.0 {
                    a = a.max(0.0);
                }
                cars[i].u = (steer, a.clamp(cfg.accel.0, cfg.accel.1));
            }
            let ego = &cars[0];
            let (j, other) = cars
                .iter()
                .enumerate()
                .skip(1)
                .map(|(j, o)| (j, (o.s.x - ego.s.x).hypot(o.s.y - ego.s.y)))
                .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
            debug_assert!(other.is_finite());
            data.push(DemoSample {
                t: k as f64 * cfg.dt,
                x: pair.joint_state(&ego.s, &cars[j].s),
                u_a: place(pair.ego_layout(), ma, ego.u),
                u_b: Some(place(pair.contender_layout(), mb, cars[j].u)),
            })?;
            if data.len() == samples {
                break;
            }
            for c in cars.iter_mut() {
                let x = rk4_step(&car, &c.s.to_vec(), &[c.u.0, c.u.1], &[], cfg.dt);
                c.s = SimpleCarState {
                    x: x[0],
                    y: x[1],
                    theta: x[2],
                    v: x[3].max(0.0),
                };
            }
        }
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_count_and_seeded() {
        let cfg = HighwayConfig::default();
        let a = synthetic_highway_log(&cfg, 250, 4).unwrap();
        assert_eq!(a.len(), 250);
        assert_eq!(a, synthetic_highway_log(&cfg, 250, 4).unwrap());
        assert_ne!(a, synthetic_highway_log(&cfg, 250, 5).unwrap());
        assert!(a.has_contender_controls());
        assert!(a.samples.iter().all(|s| s.x.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn lane4_frame_shapes() {
        let cfg = HighwayConfig {
            frame: PairFrame::Lane4 { contender_speed: 25.0 },
            ..Default::default()
        };
        let a = synthetic_highway_log(&cfg, 50, 1).unwrap();
        assert_eq!((a.state_dim, a.ego_dim, a.contender_dim), (4, 1, 1));
        let bx = crate::dynamics::ControlBox::new(vec![-4.0], vec![3.0]).unwrap();
        let bb = crate::dynamics::ControlBox::symmetric(&[0.3]).unwrap();
        a.validate(&bx, Some(&bb)).unwrap();
    }
}
