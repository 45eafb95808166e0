//! Small analytic systems with known answers, used to check the integrator,
//! event detection, phase-response machinery and the training rules.

use std::f64::consts::TAU;

use super::VectorField;

/// Scalar linear field `x' = a*x + u`.
#[derive(Debug, Clone, Copy)]
pub struct Linear1d {
    pub a: f64,
}

impl VectorField for Linear1d {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        dx[0] = self.a * x[0] + u;
    }
}

/// Harmonic rotator `x' = y + u`, `y' = -x`; from `(0, 1)` the first
/// coordinate is `sin t`.
#[derive(Debug, Clone, Copy)]
pub struct Rotator;

impl VectorField for Rotator {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        dx[0] = x[1] + u;
        dx[1] = -x[0];
    }
}

/// Radial isochron clock `r' = r(1 - r^2)`, `theta' = omega` in Cartesian
/// coordinates, control on `x`. Its isochrons are rays, so the infinitesimal
/// phase response to an `x` impulse on the unit circle is `-sin(theta)`.
#[derive(Debug, Clone, Copy)]
pub struct RadialClock {
    pub omega: f64,
}

impl RadialClock {
    pub fn period(&self) -> f64 {
        TAU / self.omega
    }

    /// Point on the unit circle at polar angle `theta`.
    pub fn point(theta: f64) -> Vec<f64> {
        vec![theta.cos(), theta.sin()]
    }
}

impl VectorField for RadialClock {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, s: &[f64], u: f64, dx: &mut [f64]) {
        let (x, y) = (s[0], s[1]);
        let g = 1.0 - (x * x + y * y);
        dx[0] = x * g - self.omega * y + u;
        dx[1] = y * g + self.omega * x;
    }
}
