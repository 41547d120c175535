use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `ℓ(x)`, negative inside the target set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum BoundaryFn {
    /// `ℓ = x[index] − offset`: the target is `x[index] < offset`.
    Coordinate { index: usize, offset: f64 },
    /// Signed distance to a disc.
    Circle {
        center: [f64; 2],
        radius: f64,
        #[serde(default = "default_position")]
        position: [usize; 2],
    },
    /// `‖(p_x, p_y·a/b)‖ − a`: zero on the ellipse with semi-axes `a`, `b`,
    /// distance-like along the long axis.
    Ellipse {
        a: f64,
        b: f64,
        #[serde(default = "default_position")]
        position: [usize; 2],
    },
}

fn default_position() -> [usize; 2] {
    [0, 1]
}

impl BoundaryFn {
    pub fn circle(center: [f64; 2], radius: f64) -> Self {
        BoundaryFn::Circle {
            center,
            radius,
            position: default_position(),
        }
    }

    pub fn ellipse(a: f64, b: f64) -> Self {
        BoundaryFn::Ellipse {
            a,
            b,
            position: default_position(),
        }
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        let idx: Vec<usize> = match self {
            BoundaryFn::Coordinate { index, .. } => vec![*index],
            BoundaryFn::Circle { position, .. } | BoundaryFn::Ellipse { position, .. } => position.to_vec(),
        };
        if idx.iter().any(|&i| i >= state_dim) {
            return Err(Error::Config(format!("boundary index outside state dimension {state_dim}")));
        }
        let ok = match self {
            BoundaryFn::Coordinate { offset, .. } => offset.is_finite(),
            BoundaryFn::Circle { radius, center, .. } => *radius > 0.0 && center.iter().all(|c| c.is_finite()),
            BoundaryFn::Ellipse { a, b, .. } => *a > 0.0 && *b > 0.0 && a.is_finite() && b.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("boundary parameters out of range".into()))
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            BoundaryFn::Coordinate { index, offset } => x[*index] - offset,
            BoundaryFn::Circle { center, radius, position } => {
                (x[position[0]] - center[0]).hypot(x[position[1]] - center[1]) - radius
            }
            BoundaryFn::Ellipse { a, b, position } => x[position[0]].hypot(x[position[1]] * a / b) - a,
        }
    }

    pub fn in_target(&self, x: &[f64]) -> bool {
        self.eval(x) < 0.0
    }
}
