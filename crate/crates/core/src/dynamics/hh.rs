//! Two-variable reduction of the Hodgkin-Huxley neuron (`h = 0.8 - n`).

use serde::{Deserialize, Serialize};

use super::VectorField;

/// `scale * x / (1 - exp(-x / 10))`, with the removable singularity at `x = 0`
/// replaced by its limit `10 * scale`.
fn linoid(scale: f64, x: f64) -> f64 {
    let den = -(-x / 10.0).exp_m1();
    if den.abs() < 1e-12 {
        10.0 * scale
    } else {
        scale * x / den
    }
}

pub fn a_n(v: f64) -> f64 {
    linoid(0.01, v + 55.0)
}

pub fn b_n(v: f64) -> f64 {
    0.125 * (-(v + 65.0) / 80.0).exp()
}

pub fn a_m(v: f64) -> f64 {
    linoid(0.1, v + 40.0)
}

pub fn b_m(v: f64) -> f64 {
    4.0 * (-(v + 65.0) / 18.0).exp()
}

pub fn m_inf(v: f64) -> f64 {
    let a = a_m(v);
    a / (a + b_m(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedHh {
    /// Baseline current. 6.69 puts the model in its bistable regime; the
    /// parameter table alternative is 20.
    pub i_base: f64,
    pub c: f64,
    pub g_na: f64,
    pub g_k: f64,
    pub g_l: f64,
    pub v_na: f64,
    pub v_k: f64,
    pub v_l: f64,
}

impl Default for ReducedHh {
    fn default() -> Self {
        ReducedHh {
            i_base: 6.69,
            c: 1.0,
            g_na: 120.0,
            g_k: 36.0,
            g_l: 0.3,
            v_na: 50.0,
            v_k: -77.0,
            v_l: -54.4,
        }
    }
}

impl ReducedHh {
    pub(crate) fn param_mut(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "i" | "i_base" => &mut self.i_base,
            "c" => &mut self.c,
            "g_na" => &mut self.g_na,
            "g_k" => &mut self.g_k,
            "g_l" => &mut self.g_l,
            "v_na" => &mut self.v_na,
            "v_k" => &mut self.v_k,
            "v_l" => &mut self.v_l,
            _ => return None,
        })
    }
}

impl VectorField for ReducedHh {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        let (v, n) = (x[0], x[1]);
        let m = m_inf(v);
        let n2 = n * n;
        let i_na = self.g_na * m * m * m * (0.8 - n) * (v - self.v_na);
        let i_k = self.g_k * n2 * n2 * (v - self.v_k);
        let i_l = self.g_l * (v - self.v_l);
        dx[0] = (self.i_base - i_na - i_k - i_l) / self.c + u;
        dx[1] = a_n(v) * (1.0 - n) - b_n(v) * n;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_finite_at_removable_singularities() {
        assert_eq!(a_n(-55.0), 0.1);
        assert_eq!(a_m(-40.0), 1.0);
        // Continuity across the singular voltage.
        assert!((a_n(-55.0 + 1e-7) - 0.1).abs() < 1e-8);
        assert!((a_m(-40.0 - 1e-7) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn rates_finite_on_voltage_range() {
        let mut v = -120.0;
        while v <= 60.0 {
            for f in [a_n(v), b_n(v), a_m(v), b_m(v), m_inf(v)] {
                assert!(f.is_finite() && f >= 0.0, "v = {v}");
            }
            v += 0.01;
        }
    }
}
