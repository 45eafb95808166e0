//! Model-based comparison controllers and phase-reduction tools.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{Classifier, NormalizeMode, Normalizer};
use crate::cycle::{find_limit_cycle, LimitCycle};
use crate::dynamics::{check_state, Lorenz, VectorField};
use crate::error::{invalid, Error, Result};
use crate::integrate::{first_maxima, simulate, Trajectory};

/// Phase response curve sampled on a uniform grid, with `theta = 0` at the spike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prc {
    pub period: f64,
    pub phases: Vec<f64>,
    pub z: Vec<f64>,
    /// Centered-difference derivative of `z` on the periodic grid.
    pub dz: Vec<f64>,
    pub cycle_points: Vec<Vec<f64>>,
    /// Fitted on `cycle_points`; used for nearest-phase lookup.
    pub normalizer: Normalizer,
}

/// Options for [`compute_prc_direct`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrcOptions {
    /// Impulse on the first coordinate.
    pub epsilon: f64,
    pub n_phases: usize,
    /// Spike index at which the asymptotic shift is read.
    pub periods: usize,
    pub dt: f64,
}

impl Default for PrcOptions {
    fn default() -> Self {
        PrcOptions { epsilon: 1e-3, n_phases: 256, periods: 8, dt: 1e-3 }
    }
}

/// Time of the `k`-th voltage maximum after `x0` under zero control.
fn kth_spike<F: VectorField + ?Sized>(model: &F, x0: &[f64], k: usize, dt: f64, window: f64) -> Result<f64> {
    let mut x = x0.to_vec();
    let mut elapsed = 0.0;
    for _ in 0..k {
        let s = first_maxima(model, &x, dt, window, &[0], true)?.remove(0);
        elapsed += s.time;
        x = s.state;
    }
    Ok(elapsed)
}

/// PRC by direct perturbation: kick the first coordinate by `epsilon` at each
/// phase and compare the `periods`-th spike time with the unkicked run.
/// `Z = (2 pi / T) * (t_free - t_kicked) / epsilon`, with the shift wrapped
/// into `(-T/2, T/2]`.
pub fn compute_prc_direct<F: VectorField + ?Sized>(model: &F, cycle: &LimitCycle, opts: &PrcOptions) -> Result<Prc> {
    if opts.n_phases < 16 {
        return Err(invalid("need at least 16 phases"));
    }
    if !(opts.epsilon != 0.0 && opts.epsilon.is_finite()) || opts.periods == 0 || !(opts.dt > 0.0) {
        return Err(invalid("PRC needs nonzero epsilon, positive dt and at least one period"));
    }
    let t = cycle.period;
    let n = opts.n_phases;
    let window = 1.5 * t;
    let cycle_points: Vec<Vec<f64>> = (0..n).map(|j| cycle.state_at(model, t * j as f64 / n as f64)).collect();
    let z: Vec<f64> = cycle_points
        .par_iter()
        .enumerate()
        .map(|(j, x)| {
            let theta = std::f64::consts::TAU * j as f64 / n as f64;
            let left = |e: Error| match e {
                Error::Timeout { .. } => Error::LeftBasin { phase: theta },
                other => other,
            };
            let free = kth_spike(model, x, opts.periods, opts.dt, window).map_err(left)?;
            let mut kicked = x.clone();
            kicked[0] += opts.epsilon;
            let pert = kth_spike(model, &kicked, opts.periods, opts.dt, window).map_err(left)?;
            let mut shift = (free - pert).rem_euclid(t);
            if shift > 0.5 * t {
                shift -= t;
            }
            Ok(std::f64::consts::TAU / t * shift / opts.epsilon)
        })
        .collect::<Result<_>>()?;
    let h = std::f64::consts::TAU / n as f64;
    let dz = (0..n).map(|j| (z[(j + 1) % n] - z[(j + n - 1) % n]) / (2.0 * h)).collect();
    let phases = (0..n).map(|j| h * j as f64).collect();
    let normalizer = Normalizer::fit(&cycle_points, NormalizeMode::Std)?;
    Ok(Prc { period: t, phases, z, dz, cycle_points, normalizer })
}

impl Prc {
    /// Linear interpolation of `z` at phase `theta` (periodic).
    pub fn z_at(&self, theta: f64) -> f64 {
        let n = self.z.len();
        let h = std::f64::consts::TAU / n as f64;
        let s = theta.rem_euclid(std::f64::consts::TAU) / h;
        let j = (s.floor() as usize).min(n - 1);
        let f = s - j as f64;
        (1.0 - f) * self.z[j] + f * self.z[(j + 1) % n]
    }

    /// Index of the grid point nearest to `x` in normalized coordinates, with
    /// its distance. Ties go to the smaller phase.
    pub fn nearest_phase(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (j, p) in self.cycle_points.iter().enumerate() {
            let d = self.normalizer.distance(x, p);
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    }

    /// Phase of the nearest cycle point; fails if that point is farther than `bound`.
    pub fn phase_of_state(&self, x: &[f64], bound: f64) -> Result<f64> {
        check_state(x, self.normalizer.dim())?;
        let (j, d) = self.nearest_phase(x);
        if d > bound {
            return Err(Error::OffCycle { distance: d, bound });
        }
        Ok(self.phases[j])
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "theta,Z,Zprime")?;
        for j in 0..self.z.len() {
            writeln!(out, "{},{},{}", self.phases[j], self.z[j], self.dz[j])?;
        }
        Ok(())
    }
}

/// `-sign(Z(theta)) * u1`, with `Z = 0` mapped to `+u1`.
pub fn prc_sign_control(prc: &Prc, theta: f64, u1: f64) -> f64 {
    if prc.z_at(theta) > 0.0 {
        -u1
    } else {
        u1
    }
}

/// State feedback that looks up the phase of the nearest cycle point and
/// applies `sign * sign(Z) * u1`; `sign = -1` is the printed law.
pub fn prc_feedback(prc: &Prc, u1: f64, sign: f64) -> impl Fn(&[f64]) -> f64 + '_ {
    move |x| {
        let (j, _) = prc.nearest_phase(x);
        let law = prc_sign_control(prc, prc.phases[j], u1);
        if sign < 0.0 {
            law
        } else {
            -law
        }
    }
}

/// `U(x) = -F(x) - gain (x - target)`, one control per state component.
pub fn fully_actuated_control<F: VectorField + ?Sized>(model: &F, x: &[f64], target: &[f64], gain: f64) -> Vec<f64> {
    let mut f = vec![0.0; model.dim()];
    model.eval(x, 0.0, &mut f);
    f.iter().zip(x).zip(target).map(|((fi, xi), ti)| -fi - gain * (xi - ti)).collect()
}

/// Closed loop `x' = F(x) + U(x)`, which is exactly `x' = -gain (x - target)`.
struct FullyActuated<'a, F: VectorField + ?Sized> {
    model: &'a F,
    target: &'a [f64],
    gain: f64,
}

impl<F: VectorField + ?Sized> VectorField for FullyActuated<'_, F> {
    fn dim(&self) -> usize {
        self.model.dim()
    }
    fn eval(&self, x: &[f64], _u: f64, dx: &mut [f64]) {
        for i in 0..x.len() {
            dx[i] = -self.gain * (x[i] - self.target[i]);
        }
    }
}

/// Result of a fully actuated run.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorRun {
    pub trajectory: Trajectory,
    /// `sum_k |U(x_k)|^2 dt` up to convergence (or the whole run).
    pub energy: f64,
    pub convergence_time: Option<f64>,
}

/// Integrates the fully actuated closed loop until `done` holds or `duration` elapses.
pub fn run_fully_actuated<F, D>(model: &F, x0: &[f64], target: &[f64], gain: f64, dt: f64, duration: f64, done: D) -> Result<VectorRun>
where
    F: VectorField + ?Sized,
    D: Fn(&[f64]) -> bool,
{
    check_state(target, model.dim())?;
    if !(gain > 0.0) {
        return Err(invalid("gain must be positive"));
    }
    let closed = FullyActuated { model, target, gain };
    let mut trajectory = Trajectory::default();
    let mut energy = 0.0;
    let mut convergence_time = None;
    crate::integrate::drive(&closed, x0, |_| 0.0, duration, dt, None, |s| {
        trajectory.times.push(s.t);
        trajectory.states.push(s.x.to_vec());
        if done(s.x) {
            convergence_time = Some(s.t);
            return true;
        }
        if s.u.is_some() {
            trajectory.controls.push(0.0);
        }
        false
    })?;
    for k in 0..trajectory.controls.len() {
        let u = fully_actuated_control(model, &trajectory.states[k], target, gain);
        energy += u.iter().map(|v| v * v).sum::<f64>() * (trajectory.times[k + 1] - trajectory.times[k]);
    }
    Ok(VectorRun { trajectory, energy, convergence_time })
}

/// `u = -(sigma + r) y`.
pub fn lyapunov_control_lorenz(x: &[f64], sigma: f64, r: f64) -> f64 {
    -(sigma + r) * x[1]
}

pub fn lyapunov_controller(model: &Lorenz) -> impl Fn(&[f64]) -> f64 + '_ {
    move |x| lyapunov_control_lorenz(x, model.sigma, model.r)
}

/// Agreement between the sign of a desynchronizing policy and `sign(Z'(theta))`
/// over the PRC grid, skipping phases with `|Z'|` below 5% of its maximum.
pub fn validate_desync_policy(classifier: &Classifier, prc: &Prc) -> Result<f64> {
    let dz_max = prc.dz.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut counted = 0usize;
    let mut agree = 0usize;
    for (j, x) in prc.cycle_points.iter().enumerate() {
        if prc.dz[j].abs() < 0.05 * dz_max {
            continue;
        }
        let u = classifier.classify_reduced(x);
        counted += 1;
        agree += usize::from((u > 0.0) == (prc.dz[j] > 0.0));
    }
    if counted == 0 {
        return Err(invalid("Z' vanishes everywhere"));
    }
    Ok(agree as f64 / counted as f64)
}

/// Time-reversed vector field: `x' = -F(x)`. Unstable orbits become attracting.
pub struct Reversed<'a, F: VectorField + ?Sized>(pub &'a F);

impl<F: VectorField + ?Sized> VectorField for Reversed<'_, F> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn eval(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        self.0.eval(x, u, dx);
        dx.iter_mut().for_each(|v| *v = -*v);
    }
}

/// The unstable periodic orbit surrounding a stable focus.
#[derive(Debug, Clone, PartialEq)]
pub struct UnstableOrbit {
    /// Point on the orbit found by bisection along the ray.
    pub boundary: Vec<f64>,
    pub cycle: LimitCycle,
}

/// Locates the unstable orbit around the stable equilibrium `fp` by bisecting
/// along `fp + s * direction` between a start that returns to `fp` and one that
/// escapes, then measures its period in reversed time.
pub fn unstable_orbit<F: VectorField + ?Sized>(
    model: &F,
    fp: &[f64],
    direction: &[f64],
    s_out: f64,
    dt: f64,
    horizon: f64,
) -> Result<UnstableOrbit> {
    check_state(fp, model.dim())?;
    let point = |s: f64| -> Vec<f64> { fp.iter().zip(direction).map(|(a, d)| a + s * d).collect() };
    let captured = |s: f64| -> Result<bool> {
        let tr = simulate(model, &point(s), |_| 0.0, horizon, dt, None)?;
        let x = tr.last_state().unwrap();
        let d: f64 = x.iter().zip(fp).zip(direction).map(|((a, b), d)| ((a - b) / d.abs().max(1e-12)).powi(2)).sum::<f64>();
        Ok(d.sqrt() < 1e-2 * s_out)
    };
    if captured(s_out)? {
        return Err(invalid("outer bisection point does not escape"));
    }
    let (mut lo, mut hi) = (1e-3 * s_out, s_out);
    if !captured(lo)? {
        return Err(invalid("inner bisection point is not captured"));
    }
    while hi - lo > 1e-9 * s_out {
        let mid = 0.5 * (lo + hi);
        if captured(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let boundary = point(lo);
    // Start halfway between the focus and the orbit; reversed flow carries it out to the orbit.
    let start = point(0.5 * lo);
    let cycle = find_limit_cycle(&Reversed(model), &start, dt, horizon)?;
    Ok(UnstableOrbit { boundary, cycle })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::toy::RadialClock;
    use crate::train::{Algorithm, TrainingSet};

    fn clock_prc(eps: f64, n: usize) -> Prc {
        let clock = RadialClock { omega: 1.0 };
        let cycle = find_limit_cycle(&clock, &[1.0, 0.0], 1e-3, 0.0).unwrap();
        compute_prc_direct(&clock, &cycle, &PrcOptions { epsilon: eps, n_phases: n, periods: 3, dt: 1e-3 }).unwrap()
    }

    #[test]
    fn radial_clock_prc_is_minus_sine() {
        let prc = clock_prc(1e-3, 64);
        for (th, z) in prc.phases.iter().zip(&prc.z) {
            assert!((z + th.sin()).abs() < 1e-3, "theta {th}: {z}");
        }
    }

    #[test]
    fn prc_is_odd_in_the_kick() {
        let a = clock_prc(1e-3, 32);
        let b = clock_prc(-1e-3, 32);
        for (x, y) in a.z.iter().zip(&b.z) {
            assert!((x - y).abs() < 2e-3);
        }
    }

    #[test]
    fn derivative_of_minus_sine() {
        let prc = clock_prc(1e-3, 64);
        for (th, dz) in prc.phases.iter().zip(&prc.dz) {
            assert!((dz + th.cos()).abs() < 1e-2);
        }
    }

    #[test]
    fn sign_law_and_codomain() {
        let prc = clock_prc(1e-3, 64);
        // Z(pi/2) = -1 < 0 gives +u1; Z(3 pi/2) = 1 > 0 gives -u1.
        assert_eq!(prc_sign_control(&prc, std::f64::consts::FRAC_PI_2, 2.0), 2.0);
        assert_eq!(prc_sign_control(&prc, 3.0 * std::f64::consts::FRAC_PI_2, 2.0), -2.0);
        for k in 0..100 {
            let u = prc_sign_control(&prc, k as f64 * 0.063, 2.0);
            assert!(u == 2.0 || u == -2.0);
        }
    }

    #[test]
    fn phase_lookup() {
        let prc = clock_prc(1e-3, 64);
        assert_eq!(prc.phase_of_state(&prc.cycle_points[0], 1e-6).unwrap(), 0.0);
        assert_eq!(prc.phase_of_state(&prc.cycle_points[10], 1e-6).unwrap(), prc.phases[10]);
        let mut x = prc.cycle_points[10].clone();
        let th = prc.phases[10];
        x[0] += 1e-4 * th.cos();
        x[1] += 1e-4 * th.sin();
        assert_eq!(prc.phase_of_state(&x, 1e-2).unwrap(), prc.phases[10]);
        assert!(matches!(prc.phase_of_state(&[3.0, 0.0], 0.1), Err(Error::OffCycle { .. })));
    }

    #[test]
    fn fully_actuated_examples() {
        let m = crate::dynamics::Model::from_id("duffing").unwrap();
        let target = [1.0, 0.0];
        let x = [0.3, -0.4];
        let u = fully_actuated_control(&m, &target, &target, 0.2);
        assert_eq!(u, vec![-0.0, -0.0]);
        let run = run_fully_actuated(&m, &x, &target, 0.2, 0.001, 5.0, |_| false).unwrap();
        let d0 = ((x[0] - 1.0f64).powi(2) + x[1] * x[1]).sqrt();
        let last = run.trajectory.last_state().unwrap();
        let d = ((last[0] - 1.0).powi(2) + last[1] * last[1]).sqrt();
        assert!((d / d0 - (-1.0f64).exp()).abs() < 1e-9);
        assert!(run.energy > 0.0);
    }

    #[test]
    fn lyapunov_examples() {
        assert_eq!(lyapunov_control_lorenz(&[3.0, 0.0, 1.0], 10.0, 1.5), 0.0);
        assert_eq!(lyapunov_control_lorenz(&[0.0, 1.0, 0.0], 10.0, 1.5), -11.5);
    }

    #[test]
    fn desync_validation_self_consistency() {
        let prc = clock_prc(1e-3, 64);
        let labels: Vec<f64> = prc.dz.iter().map(|d| if *d > 0.0 { 1.0 } else { -1.0 }).collect();
        let ts = TrainingSet::from_parts(prc.cycle_points.clone(), labels.clone(), Algorithm::Two, 1.0, 1e-3).unwrap();
        let c = Classifier::new(&ts, 1e-4, NormalizeMode::Identity).unwrap();
        assert_eq!(validate_desync_policy(&c, &prc).unwrap(), 1.0);
        let neg: Vec<f64> = labels.iter().map(|u| -u).collect();
        let ts = TrainingSet::from_parts(prc.cycle_points.clone(), neg, Algorithm::Two, 1.0, 1e-3).unwrap();
        let c = Classifier::new(&ts, 1e-4, NormalizeMode::Identity).unwrap();
        assert_eq!(validate_desync_policy(&c, &prc).unwrap(), 0.0);
    }
}
