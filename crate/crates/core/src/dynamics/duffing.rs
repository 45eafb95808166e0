use serde::{Deserialize, Serialize};

use super::VectorField;

/// Unforced Duffing oscillator `x' = y + u`, `y' = x - x^3 - delta*y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Duffing {
    pub delta: f64,
}

impl Default for Duffing {
    fn default() -> Self {
        Duffing { delta: 0.1 }
    }
}

impl VectorField for Duffing {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        let (p, q) = (x[0], x[1]);
        dx[0] = q + u;
        dx[1] = p - p * p * p - self.delta * q;
    }
}
