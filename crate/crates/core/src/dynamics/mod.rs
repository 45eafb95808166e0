//! Controlled vector fields.
//!
//! Every model has the form `dx/dt = F(x) + u·e`, where `u` is a scalar control
//! and `e` has ones on the actuated (voltage-like) coordinates and zeros
//! elsewhere. For single-oscillator and mechanical models only the first
//! component is actuated; the coupled population drives every membrane voltage
//! with the same input.

mod coupled;
mod duffing;
pub mod hh;
mod lorenz;
pub mod thalamic;
pub mod toy;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use coupled::CoupledThalamic;
pub use duffing::Duffing;
pub use hh::ReducedHh;
pub use lorenz::Lorenz;
pub use thalamic::Thalamic;

/// A vector field with an additive scalar control.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;

    /// Writes `F(x) + u·e` into `dx`. Callers guarantee slice lengths.
    fn eval(&self, x: &[f64], u: f64, dx: &mut [f64]);

    /// Number of leading components the control is added to.
    fn actuated(&self) -> usize {
        1
    }

    /// Number of oscillators. The event (voltage) coordinate of oscillator
    /// `i` is state index `i`.
    fn population(&self) -> usize {
        1
    }
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        (**self).eval(x, u, dx)
    }
    fn actuated(&self) -> usize {
        (**self).actuated()
    }
    fn population(&self) -> usize {
        (**self).population()
    }
}

/// The built-in benchmark models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Model {
    Duffing(Duffing),
    ReducedHh(ReducedHh),
    Thalamic(Thalamic),
    CoupledThalamic(CoupledThalamic),
    Lorenz(Lorenz),
}

pub const MODEL_IDS: [&str; 5] = ["duffing", "reduced_hh", "thalamic", "coupled_thalamic", "lorenz"];

impl Model {
    pub fn from_id(id: &str) -> Result<Model> {
        Model::with_overrides(id, &BTreeMap::new())
    }

    /// Builds a model by identifier and applies named parameter overrides.
    ///
    /// Unknown parameter names are rejected.
    pub fn with_overrides(id: &str, overrides: &BTreeMap<String, f64>) -> Result<Model> {
        let mut model = match id {
            "duffing" => Model::Duffing(Duffing::default()),
            "reduced_hh" => Model::ReducedHh(ReducedHh::default()),
            "thalamic" => Model::Thalamic(Thalamic::default()),
            "coupled_thalamic" => Model::CoupledThalamic(CoupledThalamic::default()),
            "lorenz" => Model::Lorenz(Lorenz::default()),
            other => return Err(Error::Config(format!("unknown model `{other}`"))),
        };
        for (key, &value) in overrides {
            model.set_param(key, value)?;
        }
        Ok(model)
    }

    pub fn id(&self) -> &'static str {
        match self {
            Model::Duffing(_) => "duffing",
            Model::ReducedHh(_) => "reduced_hh",
            Model::Thalamic(_) => "thalamic",
            Model::CoupledThalamic(_) => "coupled_thalamic",
            Model::Lorenz(_) => "lorenz",
        }
    }

    fn set_param(&mut self, key: &str, value: f64) -> Result<()> {
        let slot: Option<&mut f64> = match self {
            Model::Duffing(p) => match key {
                "delta" => Some(&mut p.delta),
                _ => None,
            },
            Model::ReducedHh(p) => p.param_mut(key),
            Model::Thalamic(p) => p.param_mut(key),
            Model::CoupledThalamic(p) => {
                match key {
                    "m" => {
                        if value < 1.0 || value.fract() != 0.0 {
                            return Err(invalid("m must be a positive integer"));
                        }
                        *p = CoupledThalamic::uniform(p.cell.clone(), value as usize, p.alpha_uniform());
                        return Ok(());
                    }
                    "alpha" => {
                        *p = CoupledThalamic::uniform(p.cell.clone(), p.m, value);
                        return Ok(());
                    }
                    _ => p.cell.param_mut(key),
                }
            }
            Model::Lorenz(p) => match key {
                "sigma" => Some(&mut p.sigma),
                "b" => Some(&mut p.b),
                "r" => Some(&mut p.r),
                _ => None,
            },
        };
        match slot {
            Some(s) => {
                if !value.is_finite() {
                    return Err(invalid(format!("parameter `{key}` must be finite")));
                }
                *s = value;
                Ok(())
            }
            None => Err(Error::Config(format!("model `{}` has no parameter `{key}`", self.id()))),
        }
    }

    fn inner(&self) -> &dyn VectorField {
        match self {
            Model::Duffing(m) => m,
            Model::ReducedHh(m) => m,
            Model::Thalamic(m) => m,
            Model::CoupledThalamic(m) => m,
            Model::Lorenz(m) => m,
        }
    }
}

impl VectorField for Model {
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn eval(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        match self {
            Model::Duffing(m) => m.eval(x, u, dx),
            Model::ReducedHh(m) => m.eval(x, u, dx),
            Model::Thalamic(m) => m.eval(x, u, dx),
            Model::CoupledThalamic(m) => m.eval(x, u, dx),
            Model::Lorenz(m) => m.eval(x, u, dx),
        }
    }
    fn actuated(&self) -> usize {
        self.inner().actuated()
    }
    fn population(&self) -> usize {
        self.inner().population()
    }
}

pub(crate) fn check_state(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
    }
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(())
}

/// Checked evaluation of `F(x) + u·e`.
pub fn eval_field<F: VectorField + ?Sized>(model: &F, x: &[f64], u: f64) -> Result<Vec<f64>> {
    check_state(x, model.dim())?;
    if !u.is_finite() {
        return Err(invalid("control must be finite"));
    }
    let mut dx = vec![0.0; x.len()];
    model.eval(x, u, &mut dx);
    Ok(dx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    StableFixedPoint,
    UnstableFixedPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateLabel {
    pub kind: Stability,
    pub location: Vec<f64>,
}

/// Closed-form equilibria of the Duffing and Lorenz models.
pub fn fixed_points(model: &Model) -> Result<Vec<StateLabel>> {
    use Stability::*;
    match model {
        Model::Duffing(_) => Ok(vec![
            StateLabel { kind: StableFixedPoint, location: vec![-1.0, 0.0] },
            StateLabel { kind: StableFixedPoint, location: vec![1.0, 0.0] },
            StateLabel { kind: UnstableFixedPoint, location: vec![0.0, 0.0] },
        ]),
        Model::Lorenz(p) => {
            if p.r <= 1.0 {
                return Ok(vec![StateLabel { kind: StableFixedPoint, location: vec![0.0; 3] }]);
            }
            let c = (p.b * (p.r - 1.0)).sqrt();
            // The symmetric pair is stable only below the Hopf value of r.
            let hopf = p.sigma * (p.sigma + p.b + 3.0) / (p.sigma - p.b - 1.0);
            let pair = if p.sigma > p.b + 1.0 && p.r >= hopf { UnstableFixedPoint } else { StableFixedPoint };
            Ok(vec![
                StateLabel { kind: pair, location: vec![-c, -c, p.r - 1.0] },
                StateLabel { kind: pair, location: vec![c, c, p.r - 1.0] },
                StateLabel { kind: UnstableFixedPoint, location: vec![0.0; 3] },
            ])
        }
        other => Err(Error::NoClosedForm(other.id().to_string())),
    }
}

/// Newton iteration for an equilibrium of the uncontrolled field, with a
/// central-difference Jacobian.
pub fn find_equilibrium<F: VectorField + ?Sized>(model: &F, guess: &[f64], tol: f64) -> Result<Vec<f64>> {
    check_state(guess, model.dim())?;
    let n = model.dim();
    let mut x = guess.to_vec();
    let mut f = vec![0.0; n];
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for _ in 0..100 {
        model.eval(&x, 0.0, &mut f);
        if f.iter().all(|v| v.abs() < tol) {
            return Ok(x);
        }
        let mut jac = vec![vec![0.0; n]; n];
        for j in 0..n {
            let h = 1e-6 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            model.eval(&xp, 0.0, &mut fp);
            model.eval(&xm, 0.0, &mut fm);
            for i in 0..n {
                jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let step = solve_dense(jac, f.iter().map(|v| -v).collect())
            .ok_or_else(|| invalid("singular Jacobian in equilibrium search"))?;
        for (xi, si) in x.iter_mut().zip(&step) {
            *xi += si;
        }
        check_state(&x, n)?;
    }
    Err(invalid("equilibrium search did not converge"))
}

// Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Mean over the population of a block-layout state `(v_1..v_M, h_1..h_M, r_1..r_M)`.
pub fn mean_population_state(x_full: &[f64], m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(invalid("population size must be positive"));
    }
    if !x_full.len().is_multiple_of(m) {
        return Err(Error::DimensionMismatch { expected: m * (x_full.len() / m + 1), got: x_full.len() });
    }
    let k = x_full.len() / m;
    Ok(x_full.chunks_exact(m).map(|block| block.iter().sum::<f64>() / m as f64).take(k).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duffing_examples() {
        let m = Model::from_id("duffing").unwrap();
        assert_eq!(eval_field(&m, &[1.0, 0.0], 0.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(eval_field(&m, &[0.0, 1.0], 0.0).unwrap(), vec![1.0, -0.1]);
    }

    #[test]
    fn lorenz_control_enters_first_state() {
        let m = Model::from_id("lorenz").unwrap();
        assert_eq!(eval_field(&m, &[0.0, 0.0, 0.0], 5.0).unwrap(), vec![5.0, 0.0, 0.0]);
    }

    #[test]
    fn eval_field_rejects_bad_input() {
        let m = Model::from_id("duffing").unwrap();
        assert!(matches!(eval_field(&m, &[1.0], 0.0), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(eval_field(&m, &[f64::NAN, 0.0], 0.0), Err(Error::NonFinite { index: 0 })));
    }

    #[test]
    fn fixed_points_have_zero_residual() {
        for id in ["duffing", "lorenz"] {
            let m = Model::from_id(id).unwrap();
            for fp in fixed_points(&m).unwrap() {
                let f = eval_field(&m, &fp.location, 0.0).unwrap();
                assert!(f.iter().all(|v| v.abs() < 1e-9), "{id} {:?} {:?}", fp, f);
            }
        }
    }

    #[test]
    fn lorenz_fixed_points_match_closed_form() {
        let fps = fixed_points(&Model::from_id("lorenz").unwrap()).unwrap();
        let c = (4.0f64 / 3.0).sqrt();
        assert!((fps[1].location[0] - c).abs() < 1e-15);
        assert!((fps[1].location[0] - 1.15).abs() < 0.005);
        assert_eq!(fps[1].location[2], 0.5);
        assert_eq!(fps[1].kind, Stability::StableFixedPoint);
        assert_eq!(fps[2].kind, Stability::UnstableFixedPoint);
    }

    #[test]
    fn thalamic_has_no_closed_form() {
        assert!(matches!(fixed_points(&Model::from_id("thalamic").unwrap()), Err(Error::NoClosedForm(_))));
    }

    #[test]
    fn population_mean() {
        assert_eq!(mean_population_state(&[-65.0, -65.0, 0.4, 0.4, 0.1, 0.1], 2).unwrap(), vec![-65.0, 0.4, 0.1]);
        assert_eq!(mean_population_state(&[0.0, 2.0, 0.0, 4.0, 0.0, 6.0], 2).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(mean_population_state(&[1.0, 2.0, 3.0], 0).is_err());
    }

    #[test]
    fn overrides_apply_and_reject_unknown_names() {
        let mut ov = BTreeMap::new();
        ov.insert("delta".to_string(), 0.25);
        match Model::with_overrides("duffing", &ov).unwrap() {
            Model::Duffing(d) => assert_eq!(d.delta, 0.25),
            _ => unreachable!(),
        }
        ov.insert("bogus".to_string(), 1.0);
        assert!(Model::with_overrides("duffing", &ov).is_err());
        assert!(Model::from_id("pendulum").is_err());
    }

    #[test]
    fn newton_finds_duffing_equilibrium() {
        let m = Model::from_id("duffing").unwrap();
        let x = find_equilibrium(&m, &[0.8, 0.1], 1e-12).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-10 && x[1].abs() < 1e-10);
    }
}
