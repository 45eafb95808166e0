use serde::{Deserialize, Serialize};

use super::{Thalamic, VectorField};

/// `M` electrotonically coupled thalamic cells sharing one control input.
///
/// State layout is blockwise: `(v_1..v_M, h_1..h_M, r_1..r_M)`. The coupling
/// current into cell `i` is `(1/M) * sum_j alpha[i][j] * (v_j - v_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledThalamic {
    pub cell: Thalamic,
    pub m: usize,
    /// Row-major `M x M` coupling matrix with zero diagonal.
    pub alpha: Vec<f64>,
    /// Set when every off-diagonal entry equals this value; enables an O(M) coupling sum.
    #[serde(skip)]
    uniform_alpha: Option<f64>,
}

impl Default for CoupledThalamic {
    fn default() -> Self {
        CoupledThalamic::uniform(Thalamic::default(), 51, 0.01)
    }
}

impl CoupledThalamic {
    /// All-to-all coupling of strength `alpha` (zero self-coupling).
    pub fn uniform(cell: Thalamic, m: usize, alpha: f64) -> Self {
        assert!(m >= 1, "population must be non-empty");
        let mut a = vec![alpha; m * m];
        for i in 0..m {
            a[i * m + i] = 0.0;
        }
        CoupledThalamic { cell, m, alpha: a, uniform_alpha: Some(alpha) }
    }

    /// Arbitrary coupling matrix (row-major, zero diagonal).
    pub fn with_matrix(cell: Thalamic, m: usize, alpha: Vec<f64>) -> Self {
        assert!(m >= 1 && alpha.len() == m * m, "coupling matrix must be M x M");
        assert!((0..m).all(|i| alpha[i * m + i] == 0.0), "coupling diagonal must be zero");
        CoupledThalamic { cell, m, alpha, uniform_alpha: None }
    }

    pub(crate) fn alpha_uniform(&self) -> f64 {
        if self.m > 1 {
            self.alpha[1]
        } else {
            0.0
        }
    }
}

impl VectorField for CoupledThalamic {
    fn dim(&self) -> usize {
        3 * self.m
    }

    fn eval(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        let m = self.m;
        let (v, rest) = x.split_at(m);
        let (h, r) = rest.split_at(m);
        let inv_m = 1.0 / m as f64;
        let total: f64 = v.iter().sum();
        for i in 0..m {
            let coupling = match self.uniform_alpha {
                // sum_{j != i} a (v_j - v_i) = a (S - M v_i)
                Some(a) => a * (total - m as f64 * v[i]),
                None => {
                    let row = &self.alpha[i * m..(i + 1) * m];
                    row.iter().zip(v).map(|(a, vj)| a * (vj - v[i])).sum()
                }
            };
            let current = self.cell.membrane_current(v[i], h[i], r[i]) + inv_m * coupling;
            dx[i] = current / self.cell.c_m + u;
            let (dh, dr) = self.cell.gates(v[i], h[i], r[i]);
            dx[m + i] = dh;
            dx[2 * m + i] = dr;
        }
    }

    fn actuated(&self) -> usize {
        self.m
    }

    fn population(&self) -> usize {
        self.m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_fast_path_matches_matrix_sum() {
        let m = 5;
        let fast = CoupledThalamic::uniform(Thalamic::default(), m, 0.3);
        let slow = CoupledThalamic::with_matrix(Thalamic::default(), m, fast.alpha.clone());
        let x: Vec<f64> = (0..3 * m).map(|i| if i < m { -70.0 + 7.0 * i as f64 } else { 0.1 * (i % m) as f64 + 0.05 }).collect();
        let (mut a, mut b) = (vec![0.0; 3 * m], vec![0.0; 3 * m]);
        fast.eval(&x, 0.7, &mut a);
        slow.eval(&x, 0.7, &mut b);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12 * p.abs().max(1.0));
        }
    }
}
