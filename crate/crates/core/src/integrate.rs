//! Fixed-step RK4 integration, event detection and measurement noise.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::{check_state, VectorField};
use crate::error::{invalid, Error, Result};
use crate::rng::{standard_normals, streams};

/// Time-stamped states with the zero-order-hold control applied on each step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `controls[k]` is held over `[times[k], times[k + 1])`.
    pub controls: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }

    pub fn end_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Writes `t,x1..xn,u`. The control column of the final row is empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.states.first().map_or(0, Vec::len);
        let mut header = String::from("t");
        for i in 1..=n {
            write!(header, ",x{i}").unwrap();
        }
        header.push_str(",u");
        writeln!(out, "{header}")?;
        let mut line = String::new();
        for (k, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            line.clear();
            write!(line, "{t}").unwrap();
            for v in x {
                write!(line, ",{v}").unwrap();
            }
            line.push(',');
            if let Some(u) = self.controls.get(k) {
                write!(line, "{u}").unwrap();
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Trajectory> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| invalid("empty trajectory csv"))??;
        let cols = header.split(',').count();
        if cols < 3 {
            return Err(invalid("trajectory csv needs t, states and u"));
        }
        let mut traj = Trajectory::default();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols {
                return Err(invalid(format!("expected {cols} columns, got {}", fields.len())));
            }
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| invalid(format!("bad number `{s}`: {e}")));
            traj.times.push(parse(fields[0])?);
            traj.states.push(fields[1..cols - 1].iter().map(|s| parse(s)).collect::<Result<_>>()?);
            let u = fields[cols - 1].trim();
            if !u.is_empty() {
                traj.controls.push(parse(u)?);
            }
        }
        Ok(traj)
    }
}

/// Gaussian measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(invalid("noise sigma must be finite and non-negative"));
        }
        Ok(NoiseSpec { sigma, seed })
    }

    pub(crate) fn perturb_into(&self, stream: u64, index: u64, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
        if self.sigma == 0.0 {
            return;
        }
        let mut z = vec![0.0; x.len()];
        standard_normals(self.seed, stream, index, &mut z);
        for (o, zi) in out.iter_mut().zip(&z) {
            *o += self.sigma * zi;
        }
    }
}

/// `x + sigma * z` with `z` standard normal, fixed by `(seed, draw_index)`.
pub fn add_gaussian_noise(x: &[f64], noise: &NoiseSpec, draw_index: u64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    noise.perturb_into(streams::MEASUREMENT, draw_index, x, &mut out);
    out
}

/// Reusable RK4 workspace.
pub(crate) struct Rk4<'a, F: VectorField + ?Sized> {
    field: &'a F,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl<'a, F: VectorField + ?Sized> Rk4<'a, F> {
    pub(crate) fn new(field: &'a F) -> Self {
        let n = field.dim();
        Rk4 { field, k1: vec![0.0; n], k2: vec![0.0; n], k3: vec![0.0; n], k4: vec![0.0; n], tmp: vec![0.0; n] }
    }

    /// Advances `x` in place by one classical RK4 step with `u` held constant.
    pub(crate) fn step(&mut self, x: &mut [f64], u: f64, dt: f64) {
        let f = self.field;
        let half = 0.5 * dt;
        f.eval(x, u, &mut self.k1);
        for i in 0..x.len() {
            self.tmp[i] = x[i] + half * self.k1[i];
        }
        f.eval(&self.tmp, u, &mut self.k2);
        for i in 0..x.len() {
            self.tmp[i] = x[i] + half * self.k2[i];
        }
        f.eval(&self.tmp, u, &mut self.k3);
        for i in 0..x.len() {
            self.tmp[i] = x[i] + dt * self.k3[i];
        }
        f.eval(&self.tmp, u, &mut self.k4);
        let sixth = dt / 6.0;
        for i in 0..x.len() {
            x[i] += sixth * (self.k1[i] + 2.0 * (self.k2[i] + self.k3[i]) + self.k4[i]);
        }
    }

    /// Like `step`, but restores `x` and reports a blow-up on a non-finite result.
    pub(crate) fn checked_step(&mut self, x: &mut [f64], u: f64, dt: f64, t: f64) -> Result<()> {
        let before = x.to_vec();
        self.step(x, u, dt);
        if x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            x.copy_from_slice(&before);
            Err(Error::Blowup { time: t, last_state: before })
        }
    }
}

/// One classical RK4 step under zero-order-hold control.
pub fn rk4_step<F: VectorField + ?Sized>(model: &F, x: &[f64], u: f64, dt: f64) -> Result<Vec<f64>> {
    check_state(x, model.dim())?;
    if !(dt > 0.0) {
        return Err(invalid("dt must be positive"));
    }
    let mut y = x.to_vec();
    Rk4::new(model).checked_step(&mut y, u, dt, 0.0)?;
    Ok(y)
}

/// Step sizes covering `[0, duration]`: whole steps of `dt`, then at most one
/// shorter final step.
pub(crate) fn step_plan(duration: f64, dt: f64) -> Result<(usize, f64)> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(invalid("duration must be positive"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt must be positive"));
    }
    let ratio = duration / dt;
    let whole = (ratio + 1e-9).floor();
    let rest = duration - whole * dt;
    let partial = if rest > 1e-9 * dt { rest } else { 0.0 };
    Ok((whole as usize, partial))
}

/// What the observer saw at one grid point.
pub(crate) struct Sample<'s> {
    pub t: f64,
    pub x: &'s [f64],
    /// Control for the step starting here; `None` at the final time.
    pub u: Option<f64>,
}

/// Core closed-loop driver. The controller sees the (optionally corrupted)
/// measurement; the dynamics advance on the true state. Returning `true` from
/// `visit` stops the run after that sample.
pub(crate) fn drive<F, C, V>(
    model: &F,
    x0: &[f64],
    mut controller: C,
    duration: f64,
    dt: f64,
    noise: Option<&NoiseSpec>,
    mut visit: V,
) -> Result<()>
where
    F: VectorField + ?Sized,
    C: FnMut(&[f64]) -> f64,
    V: FnMut(Sample<'_>) -> bool,
{
    check_state(x0, model.dim())?;
    let (whole, partial) = step_plan(duration, dt)?;
    let total = whole + usize::from(partial > 0.0);
    let mut rk = Rk4::new(model);
    let mut x = x0.to_vec();
    let mut measured = vec![0.0; x.len()];
    for k in 0..total {
        let t = k as f64 * dt;
        let u = match noise {
            Some(n) if n.sigma > 0.0 => {
                n.perturb_into(streams::MEASUREMENT, k as u64, &x, &mut measured);
                controller(&measured)
            }
            _ => controller(&x),
        };
        if !u.is_finite() {
            return Err(Error::BadControl { time: t, value: u });
        }
        if visit(Sample { t, x: &x, u: Some(u) }) {
            return Ok(());
        }
        let h = if k < whole { dt } else { partial };
        rk.checked_step(&mut x, u, h, t)?;
    }
    let t_end = if partial > 0.0 { whole as f64 * dt + partial } else { whole as f64 * dt };
    visit(Sample { t: t_end, x: &x, u: None });
    Ok(())
}

/// Integrates `model` under state feedback and records the full trajectory.
pub fn simulate<F, C>(
    model: &F,
    x0: &[f64],
    controller: C,
    duration: f64,
    dt: f64,
    noise: Option<&NoiseSpec>,
) -> Result<Trajectory>
where
    F: VectorField + ?Sized,
    C: FnMut(&[f64]) -> f64,
{
    let mut traj = Trajectory::default();
    drive(model, x0, controller, duration, dt, noise, |s| {
        traj.times.push(s.t);
        traj.states.push(s.x.to_vec());
        if let Some(u) = s.u {
            traj.controls.push(u);
        }
        false
    })?;
    Ok(traj)
}

/// Replays a recorded control sequence open loop on the step plan of
/// `(duration, dt)` used by [`simulate`].
pub fn replay_controls<F: VectorField + ?Sized>(model: &F, x0: &[f64], duration: f64, dt: f64, controls: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_state(x0, model.dim())?;
    let (whole, partial) = step_plan(duration, dt)?;
    if controls.len() != whole + usize::from(partial > 0.0) {
        return Err(invalid("control count does not match the step plan"));
    }
    let mut rk = Rk4::new(model);
    let mut x = x0.to_vec();
    let mut out = vec![x.clone()];
    for (k, &u) in controls.iter().enumerate() {
        let h = if k < whole { dt } else { partial };
        rk.checked_step(&mut x, u, h, k as f64 * dt)?;
        out.push(x.clone());
    }
    Ok(out)
}

/// A detected voltage maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct Spike {
    pub time: f64,
    /// State at `time`, reached by a partial RK4 step from the preceding sample.
    pub state: Vec<f64>,
}

/// Vertex of the parabola through `(−h, a)`, `(0, b)`, `(h, c)`, as an offset from the centre.
pub(crate) fn vertex_offset(a: f64, b: f64, c: f64, h: f64) -> f64 {
    let den = a - 2.0 * b + c;
    if den == 0.0 {
        0.0
    } else {
        (0.5 * h * (a - c) / den).clamp(-h, h)
    }
}

/// First local maximum of each listed coordinate under zero control.
///
/// A maximum is flagged at sample `k ≥ 1` when `v_k > v_{k-1}` and
/// `v_{k+1} ≤ v_k`; its time is refined by quadratic interpolation through the
/// three bracketing samples.
pub(crate) fn first_maxima<F: VectorField + ?Sized>(
    model: &F,
    x0: &[f64],
    dt: f64,
    timeout: f64,
    coords: &[usize],
    want_state: bool,
) -> Result<Vec<Spike>> {
    check_state(x0, model.dim())?;
    if !(dt > 0.0) || !(timeout > 0.0) {
        return Err(invalid("dt and timeout must be positive"));
    }
    let max_steps = (timeout / dt).ceil() as usize + 1;
    let mut rk = Rk4::new(model);
    let mut prev_state = x0.to_vec();
    let mut x = x0.to_vec();
    let mut older: Vec<f64> = coords.iter().map(|&i| x[i]).collect();
    rk.checked_step(&mut x, 0.0, dt, 0.0)?;
    let mut mid: Vec<f64> = coords.iter().map(|&i| x[i]).collect();
    let mut found: Vec<Option<Spike>> = vec![None; coords.len()];
    let mut remaining = coords.len();
    for k in 1..max_steps {
        let mid_state = x.clone();
        rk.checked_step(&mut x, 0.0, dt, k as f64 * dt)?;
        for (j, &i) in coords.iter().enumerate() {
            let newer = x[i];
            if found[j].is_none() && mid[j] > older[j] && newer <= mid[j] {
                let offset = vertex_offset(older[j], mid[j], newer, dt);
                let time = k as f64 * dt + offset;
                let state = if want_state {
                    // Partial step from the sample preceding the vertex.
                    let (base, from) = if offset >= 0.0 { (&mid_state, k as f64 * dt) } else { (&prev_state, (k - 1) as f64 * dt) };
                    let mut s = base.clone();
                    let h = time - from;
                    if h > 0.0 {
                        Rk4::new(model).step(&mut s, 0.0, h);
                    }
                    s
                } else {
                    Vec::new()
                };
                found[j] = Some(Spike { time, state });
                remaining -= 1;
            }
            older[j] = mid[j];
            mid[j] = newer;
        }
        if remaining == 0 {
            return Ok(found.into_iter().map(Option::unwrap).collect());
        }
        prev_state = mid_state;
    }
    Err(Error::Timeout { timeout })
}

/// Time of the first maximum of the event (first) coordinate under zero control.
pub fn detect_spike_time<F: VectorField + ?Sized>(model: &F, x0: &[f64], dt: f64, timeout: f64) -> Result<f64> {
    Ok(first_maxima(model, x0, dt, timeout, &[0], false)?[0].time)
}

/// First spike together with the state at the spike.
pub fn detect_spike<F: VectorField + ?Sized>(model: &F, x0: &[f64], dt: f64, timeout: f64) -> Result<Spike> {
    Ok(first_maxima(model, x0, dt, timeout, &[0], true)?.remove(0))
}

/// First spike time of every oscillator's voltage.
pub fn detect_population_spikes<F: VectorField + ?Sized>(model: &F, x0: &[f64], dt: f64, timeout: f64) -> Result<Vec<f64>> {
    let coords: Vec<usize> = (0..model.population()).collect();
    Ok(first_maxima(model, x0, dt, timeout, &coords, false)?.into_iter().map(|s| s.time).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::toy::{Linear1d, Rotator};
    use crate::dynamics::Model;

    #[test]
    fn rk4_linear_decay_matches_stage_expansion() {
        // For x' = -x the four stages collapse to 1 - h + h^2/2 - h^3/6 + h^4/24.
        let h: f64 = 0.1;
        let expected = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        let y = rk4_step(&Linear1d { a: -1.0 }, &[1.0], 0.0, h).unwrap();
        assert!((y[0] - expected).abs() < 1e-15);
        assert!((y[0] - 0.9048375).abs() < 1e-7);
    }

    #[test]
    fn rk4_preserves_equilibrium() {
        let m = Model::from_id("duffing").unwrap();
        let y = rk4_step(&m, &[1.0, 0.0], 0.0, 0.01).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-14 && y[1].abs() < 1e-14);
    }

    #[test]
    fn rk4_reports_blowup_with_last_state() {
        let m = Linear1d { a: 1.0 };
        match rk4_step(&m, &[1e308], 0.0, 10.0) {
            Err(Error::Blowup { last_state, .. }) => assert_eq!(last_state, vec![1e308]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn step_plan_handles_partial_final_step() {
        assert_eq!(step_plan(1.0, 0.1).unwrap(), (10, 0.0));
        let (n, p) = step_plan(1.05, 0.1).unwrap();
        assert_eq!(n, 10);
        assert!((p - 0.05).abs() < 1e-12);
        assert!(step_plan(0.0, 0.1).is_err());
    }

    #[test]
    fn trajectory_shape_invariants() {
        let m = Model::from_id("duffing").unwrap();
        let tr = simulate(&m, &[0.1, 0.0], |_| 0.0, 1.05, 0.1, None).unwrap();
        assert_eq!(tr.len(), 12);
        assert_eq!(tr.controls.len(), tr.len() - 1);
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        assert!((tr.end_time() - 1.05).abs() < 1e-12);
    }

    #[test]
    fn zero_sigma_matches_noiseless_bitwise() {
        let m = Model::from_id("duffing").unwrap();
        let ctl = |x: &[f64]| if x[0] < 0.3 { 4.0 } else { 0.0 };
        let a = simulate(&m, &[-0.5, 0.2], ctl, 5.0, 0.001, None).unwrap();
        let b = simulate(&m, &[-0.5, 0.2], ctl, 5.0, 0.001, Some(&NoiseSpec::new(0.0, 99).unwrap())).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noisy_run_replays_open_loop_bitwise() {
        let m = Model::from_id("duffing").unwrap();
        let ctl = |x: &[f64]| if x[0] < 0.3 { 4.0 } else { 0.0 };
        let noise = NoiseSpec::new(0.3, 5).unwrap();
        let tr = simulate(&m, &[-0.5, 0.2], ctl, 5.0, 0.001, Some(&noise)).unwrap();
        let replay = replay_controls(&m, &tr.states[0], 5.0, 0.001, &tr.controls).unwrap();
        assert_eq!(replay, tr.states);
    }

    #[test]
    fn non_finite_control_is_rejected() {
        let m = Model::from_id("duffing").unwrap();
        let r = simulate(&m, &[0.0, 0.0], |_| f64::NAN, 1.0, 0.1, None);
        assert!(matches!(r, Err(Error::BadControl { .. })));
    }

    #[test]
    fn sine_maximum_at_half_pi() {
        let dt = 0.01;
        let t = detect_spike_time(&Rotator, &[0.0, 1.0], dt, 10.0).unwrap();
        assert!((t - std::f64::consts::FRAC_PI_2).abs() < dt);
        assert!((t - std::f64::consts::FRAC_PI_2).abs() < 1e-6);
    }

    #[test]
    fn spike_state_sits_at_the_maximum() {
        let s = detect_spike(&Rotator, &[0.0, 1.0], 0.01, 10.0).unwrap();
        assert!((s.state[0] - 1.0).abs() < 1e-9);
        assert!(s.state[1].abs() < 1e-6);
    }

    #[test]
    fn spike_timeout() {
        let r = detect_spike_time(&Linear1d { a: -1.0 }, &[1.0], 0.01, 1.0);
        assert!(matches!(r, Err(Error::Timeout { .. })));
    }

    #[test]
    fn csv_roundtrip_is_lossless() {
        let m = Model::from_id("lorenz").unwrap();
        let tr = simulate(&m, &[1.0, -2.0, 0.3], |x| -11.5 * x[1], 0.05, 0.001, None).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2,x3,u\n"));
        assert!(text.trim_end().ends_with(','));
        let back = Trajectory::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, tr);
    }

    #[test]
    fn noise_is_deterministic_and_zero_sigma_is_identity() {
        let x = [1.0, -2.0];
        let n0 = NoiseSpec::new(0.0, 1).unwrap();
        assert_eq!(add_gaussian_noise(&x, &n0, 17), x.to_vec());
        let n = NoiseSpec::new(0.5, 1).unwrap();
        assert_eq!(add_gaussian_noise(&x, &n, 17), add_gaussian_noise(&x, &n, 17));
        assert_ne!(add_gaussian_noise(&x, &n, 17), add_gaussian_noise(&x, &n, 18));
        assert!(NoiseSpec::new(-1.0, 0).is_err());
    }

    #[test]
    fn noise_moments() {
        let sigma = 0.7;
        let n = NoiseSpec::new(sigma, 2024).unwrap();
        let x = [3.0, -1.0];
        let draws = 100_000;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for k in 0..draws {
            let y = add_gaussian_noise(&x, &n, k);
            for i in 0..2 {
                let d = y[i] - x[i];
                sum[i] += d;
                sq[i] += d * d;
            }
        }
        for i in 0..2 {
            let mean = sum[i] / draws as f64;
            let std = (sq[i] / draws as f64 - mean * mean).sqrt();
            assert!(mean.abs() < 3.0 * sigma / (draws as f64).sqrt(), "mean {mean}");
            assert!((std / sigma - 1.0).abs() < 0.02, "std {std}");
        }
    }
}
