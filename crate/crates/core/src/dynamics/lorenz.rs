use serde::{Deserialize, Serialize};

use super::VectorField;

/// Lorenz system in its bistable regime, control on the first state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lorenz {
    pub sigma: f64,
    pub b: f64,
    pub r: f64,
}

impl Default for Lorenz {
    fn default() -> Self {
        Lorenz { sigma: 10.0, b: 8.0 / 3.0, r: 1.5 }
    }
}

impl VectorField for Lorenz {
    fn dim(&self) -> usize {
        3
    }

    fn eval(&self, s: &[f64], u: f64, dx: &mut [f64]) {
        let (x, y, z) = (s[0], s[1], s[2]);
        dx[0] = self.sigma * (y - x) + u;
        dx[1] = self.r * x - y - x * z;
        dx[2] = x * y - self.b * z;
    }
}
