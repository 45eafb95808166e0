//! Three-variable thalamocortical relay neuron.

use serde::{Deserialize, Serialize};

use super::VectorField;

pub fn h_inf(v: f64) -> f64 {
    1.0 / (1.0 + ((v + 41.0) / 4.0).exp())
}

pub fn r_inf(v: f64) -> f64 {
    1.0 / (1.0 + ((v + 84.0) / 4.0).exp())
}

pub fn alpha_h(v: f64) -> f64 {
    0.128 * (-(v + 46.0) / 18.0).exp()
}

pub fn beta_h(v: f64) -> f64 {
    4.0 / (1.0 + (-(v + 23.0) / 5.0).exp())
}

pub fn tau_h(v: f64) -> f64 {
    1.0 / (alpha_h(v) + beta_h(v))
}

pub fn tau_r(v: f64) -> f64 {
    28.0 + (-(v + 25.0) / 10.5).exp()
}

pub fn m_inf(v: f64) -> f64 {
    1.0 / (1.0 + (-(v + 37.0) / 7.0).exp())
}

pub fn p_inf(v: f64) -> f64 {
    1.0 / (1.0 + (-(v + 60.0) / 6.2).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thalamic {
    pub c_m: f64,
    pub g_l: f64,
    pub e_l: f64,
    pub g_na: f64,
    pub e_na: f64,
    pub g_k: f64,
    pub e_k: f64,
    pub g_t: f64,
    pub e_t: f64,
    pub i_b: f64,
}

impl Default for Thalamic {
    fn default() -> Self {
        Thalamic {
            c_m: 1.0,
            g_l: 0.05,
            e_l: -70.0,
            g_na: 3.0,
            e_na: 50.0,
            g_k: 5.0,
            e_k: -90.0,
            g_t: 5.0,
            e_t: 0.0,
            i_b: 5.0,
        }
    }
}

impl Thalamic {
    pub(crate) fn param_mut(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "c_m" => &mut self.c_m,
            "g_l" => &mut self.g_l,
            "e_l" => &mut self.e_l,
            "g_na" => &mut self.g_na,
            "e_na" => &mut self.e_na,
            "g_k" => &mut self.g_k,
            "e_k" => &mut self.e_k,
            "g_t" => &mut self.g_t,
            "e_t" => &mut self.e_t,
            "i_b" => &mut self.i_b,
            _ => return None,
        })
    }

    /// Sum of ionic currents plus bias, i.e. `C_m dv/dt` without input.
    #[inline]
    pub(crate) fn membrane_current(&self, v: f64, h: f64, r: f64) -> f64 {
        let m = m_inf(v);
        let p = p_inf(v);
        let k = 0.75 * (1.0 - h);
        let k2 = k * k;
        let i_l = self.g_l * (v - self.e_l);
        let i_na = self.g_na * m * m * m * h * (v - self.e_na);
        let i_k = self.g_k * k2 * k2 * (v - self.e_k);
        let i_t = self.g_t * p * p * r * (v - self.e_t);
        -i_l - i_na - i_k - i_t + self.i_b
    }

    #[inline]
    pub(crate) fn gates(&self, v: f64, h: f64, r: f64) -> (f64, f64) {
        ((h_inf(v) - h) / tau_h(v), (r_inf(v) - r) / tau_r(v))
    }
}

impl VectorField for Thalamic {
    fn dim(&self) -> usize {
        3
    }

    fn eval(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        let (v, h, r) = (x[0], x[1], x[2]);
        dx[0] = self.membrane_current(v, h, r) / self.c_m + u;
        let (dh, dr) = self.gates(v, h, r);
        dx[1] = dh;
        dx[2] = dr;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gating_functions_finite_on_voltage_range() {
        let mut v = -120.0;
        while v <= 60.0 {
            for f in [h_inf(v), r_inf(v), alpha_h(v), beta_h(v), tau_h(v), tau_r(v), m_inf(v), p_inf(v)] {
                assert!(f.is_finite() && f > 0.0, "v = {v}");
            }
            v += 0.01;
        }
    }
}
