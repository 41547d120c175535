use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Barrier functions whose zero sub-level set is the obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum BarrierSpec {
    /// `b = ‖pos − center‖² − radius²`
    Circle {
        center: [f64; 2],
        radius: f64,
        #[serde(default = "default_position")]
        position: [usize; 2],
    },
    /// `b = Δx²/a² + Δy²/b² − 1`, centred at the origin of the position pair.
    Ellipse {
        a: f64,
        b: f64,
        #[serde(default = "default_position")]
        position: [usize; 2],
    },
    /// `b = x[index] − offset`
    Coordinate { index: usize, offset: f64 },
}

fn default_position() -> [usize; 2] {
    [0, 1]
}

impl BarrierSpec {
    pub fn circle(center: [f64; 2], radius: f64) -> Self {
        BarrierSpec::Circle {
            center,
            radius,
            position: default_position(),
        }
    }

    pub fn ellipse(a: f64, b: f64) -> Self {
        BarrierSpec::Ellipse {
            a,
            b,
            position: default_position(),
        }
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        let in_range = |i: usize| {
            if i < state_dim {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "barrier index {i} outside state dimension {state_dim}"
                )))
            }
        };
        match self {
            BarrierSpec::Circle { center, radius, position } => {
                position.iter().try_for_each(|&i| in_range(i))?;
                if !(radius.is_finite() && *radius > 0.0 && center.iter().all(|c| c.is_finite())) {
                    return Err(Error::Config("circle barrier needs finite center and radius > 0".into()));
                }
            }
            BarrierSpec::Ellipse { a, b, position } => {
                position.iter().try_for_each(|&i| in_range(i))?;
                if !(a.is_finite() && b.is_finite() && *a > 0.0 && *b > 0.0) {
                    return Err(Error::Config("ellipse barrier needs positive semi-axes".into()));
                }
            }
            BarrierSpec::Coordinate { index, offset } => {
                in_range(*index)?;
                if !offset.is_finite() {
                    return Err(Error::Config("coordinate barrier offset must be finite".into()));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            BarrierSpec::Circle { center, radius, position } => {
                let dx = x[position[0]] - center[0];
                let dy = x[position[1]] - center[1];
                dx * dx + dy * dy - radius * radius
            }
            BarrierSpec::Ellipse { a, b, position } => {
                let (px, py) = (x[position[0]], x[position[1]]);
                px * px / (a * a) + py * py / (b * b) - 1.0
            }
            BarrierSpec::Coordinate { index, offset } => x[*index] - offset,
        }
    }

    /// Value, gradient (`n`) and row-major Hessian (`n × n`).
    pub fn eval(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let n = x.len();
        grad.fill(0.0);
        hess.fill(0.0);
        match self {
            BarrierSpec::Circle { center, position, .. } => {
                let [i, j] = *position;
                grad[i] = 2.0 * (x[i] - center[0]);
                grad[j] = 2.0 * (x[j] - center[1]);
                hess[i * n + i] = 2.0;
                hess[j * n + j] = 2.0;
            }
            BarrierSpec::Ellipse { a, b, position } => {
                let [i, j] = *position;
                grad[i] = 2.0 * x[i] / (a * a);
                grad[j] = 2.0 * x[j] / (b * b);
                hess[i * n + i] = 2.0 / (a * a);
                hess[j * n + j] = 2.0 / (b * b);
            }
            BarrierSpec::Coordinate { index, .. } => {
                grad[*index] = 1.0;
            }
        }
        self.value(x)
    }

    /// Position of the obstacle-relevant coordinates (for plotting and sampling).
    pub fn position_indices(&self) -> Vec<usize> {
        match self {
            BarrierSpec::Circle { position, .. } | BarrierSpec::Ellipse { position, .. } => position.to_vec(),
            BarrierSpec::Coordinate { index, .. } => vec![*index],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sublevel_set_is_the_obstacle() {
        let c = BarrierSpec::circle([15.0, 0.0], 3.0);
        assert!(c.value(&[15.0, 2.9, 0.0, 1.0]) < 0.0);
        assert_eq!(c.value(&[18.0, 0.0, 0.0, 1.0]), 0.0);
        assert!(c.value(&[19.0, 0.0, 0.0, 1.0]) > 0.0);
        let e = BarrierSpec::ellipse(5.4, 2.4);
        assert!(e.value(&[5.0, 0.5, 0.0, 0.0, 0.0, 0.0]) < 0.0);
        assert!(e.value(&[0.0, 2.5, 0.0, 0.0, 0.0, 0.0]) > 0.0);
    }

    #[test]
    fn gradient_and_hessian_match_central_differences() {
        let specs = [
            BarrierSpec::circle([1.0, -2.0], 1.5),
            BarrierSpec::ellipse(5.4, 2.4),
            BarrierSpec::Coordinate { index: 1, offset: 0.3 },
        ];
        let x = [0.7, -1.3, 0.4, 2.0];
        let n = x.len();
        let h = 1e-5;
        for s in &specs {
            let mut g = vec![0.0; n];
            let mut hs = vec![0.0; n * n];
            s.eval(&x, &mut g, &mut hs);
            for k in 0..n {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let fd = (s.value(&xp) - s.value(&xm)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-5);
                let mut gp = vec![0.0; n];
                let mut gm = vec![0.0; n];
                let mut scratch = vec![0.0; n * n];
                s.eval(&xp, &mut gp, &mut scratch);
                s.eval(&xm, &mut gm, &mut scratch);
                for i in 0..n {
                    assert!(((gp[i] - gm[i]) / (2.0 * h) - hs[i * n + k]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn json_shape() {
        let e = BarrierSpec::ellipse(5.4, 2.4);
        let v = serde_json::to_value(&e).unwrap();
        assert_eq!(v["kind"], "ellipse");
        assert_eq!(v["params"]["a"], 5.4);
        let back: BarrierSpec = serde_json::from_str(r#"{"kind":"circle","params":{"center":[1,2],"radius":3}}"#).unwrap();
        assert_eq!(back, BarrierSpec::circle([1.0, 2.0], 3.0));
    }

    #[test]
    fn validation() {
        assert!(BarrierSpec::circle([0.0, 0.0], -1.0).validate(4).is_err());
        assert!(BarrierSpec::Coordinate { index: 5, offset: 0.0 }.validate(2).is_err());
        assert!(BarrierSpec::ellipse(5.4, 2.4).validate(6).is_ok());
    }
}
