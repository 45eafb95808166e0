//! Closed-loop runs and the metrics reported for them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{Classifier, Normalizer};
use crate::dynamics::{check_state, VectorField};
use crate::error::{invalid, Result};
use crate::integrate::{drive, simulate, vertex_offset, NoiseSpec, Trajectory};
use crate::rng::{self, streams};

/// Ball around a target state, optionally measured in normalized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetBall {
    pub center: Vec<f64>,
    pub radius: f64,
    #[serde(default)]
    pub normalizer: Option<Normalizer>,
}

impl TargetBall {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(invalid("target radius must be positive"));
        }
        Ok(TargetBall { center, radius, normalizer: None })
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        match &self.normalizer {
            Some(n) => n.distance(x, &self.center),
            None => x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.distance(x) <= self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub converged: bool,
    /// First time the true state is inside the target ball.
    pub convergence_time: Option<f64>,
    /// Fraction of steps with zero control up to convergence (whole run otherwise).
    pub off_fraction: f64,
    /// Energy over the whole recorded run.
    pub control_energy: f64,
    /// Energy up to convergence (whole run otherwise).
    pub energy_to_convergence: f64,
    pub final_distance: f64,
}

/// `sum_k u_k^2 (t_{k+1} - t_k)`, the exact integral of the held control.
pub fn control_energy(traj: &Trajectory) -> f64 {
    energy_until(traj, f64::INFINITY)
}

/// Energy over the steps that start before `until`.
pub fn energy_until(traj: &Trajectory, until: f64) -> f64 {
    traj.controls
        .iter()
        .enumerate()
        .take_while(|(k, _)| traj.times[*k] < until)
        .map(|(k, u)| u * u * (traj.times[k + 1] - traj.times[k]))
        .sum()
}

/// Fraction of steps starting before `until` whose control is zero. A run with
/// no such steps counts as fully OFF.
pub fn off_fraction(traj: &Trajectory, until: f64) -> f64 {
    let mut total = 0usize;
    let mut off = 0usize;
    for (k, &u) in traj.controls.iter().enumerate() {
        if traj.times[k] >= until {
            break;
        }
        total += 1;
        if u == 0.0 {
            off += 1;
        }
    }
    if total == 0 {
        1.0
    } else {
        off as f64 / total as f64
    }
}

/// Recomputes every metric from a recorded trajectory.
pub fn metrics_from_trajectory(traj: &Trajectory, target: &TargetBall) -> RunMetrics {
    let hit = traj.states.iter().position(|x| target.contains(x));
    let convergence_time = hit.map(|k| traj.times[k]);
    let until = convergence_time.unwrap_or(f64::INFINITY);
    RunMetrics {
        converged: hit.is_some(),
        convergence_time,
        off_fraction: off_fraction(traj, until),
        control_energy: control_energy(traj),
        energy_to_convergence: energy_until(traj, until),
        final_distance: traj.last_state().map_or(f64::NAN, |x| target.distance(x)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub dt: f64,
    pub duration: f64,
    pub noise: Option<NoiseSpec>,
    /// End the run at the first sample inside the target ball.
    pub stop_on_convergence: bool,
}

/// Runs an arbitrary state-feedback controller and records the trajectory.
pub fn run_controller<F, C>(model: &F, controller: C, x0: &[f64], opts: &RunOptions, target: &TargetBall) -> Result<(Trajectory, RunMetrics)>
where
    F: VectorField + ?Sized,
    C: FnMut(&[f64]) -> f64,
{
    check_state(&target.center, model.dim())?;
    let traj = if opts.stop_on_convergence {
        let mut traj = Trajectory::default();
        drive(model, x0, controller, opts.duration, opts.dt, opts.noise.as_ref(), |s| {
            traj.times.push(s.t);
            traj.states.push(s.x.to_vec());
            if target.contains(s.x) {
                return true;
            }
            if let Some(u) = s.u {
                traj.controls.push(u);
            }
            false
        })?;
        traj
    } else {
        simulate(model, x0, controller, opts.duration, opts.dt, opts.noise.as_ref())?
    };
    let metrics = metrics_from_trajectory(&traj, target);
    Ok((traj, metrics))
}

/// Closed loop under a trained classifier.
pub fn run_closed_loop<F: VectorField + ?Sized>(
    model: &F,
    classifier: &Classifier,
    x0: &[f64],
    opts: &RunOptions,
    target: &TargetBall,
) -> Result<(Trajectory, RunMetrics)> {
    classifier.check_input(x0)?;
    run_controller(model, |x| classifier.decide(x), x0, opts, target)
}

/// Outcome of one effectiveness trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub converged: bool,
    pub convergence_time: Option<f64>,
    /// Fraction of zero-control steps up to convergence (whole run otherwise).
    pub off_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectivenessReport {
    pub fraction: f64,
    pub master_seed: u64,
    pub trials: Vec<TrialReport>,
}

impl EffectivenessReport {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "trial,seed,converged,convergence_time,off_fraction,x0")?;
        for t in &self.trials {
            let x0: Vec<String> = t.x0.iter().map(f64::to_string).collect();
            let time = t.convergence_time.map_or(String::new(), |v| v.to_string());
            writeln!(out, "{},{},{},{},{},{}", t.trial, t.seed, u8::from(t.converged), time, t.off_fraction, x0.join(" "))?;
        }
        Ok(())
    }
}

/// Per-trial settings for [`effectiveness`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrialPlan {
    pub trials: usize,
    pub master_seed: u64,
    pub ic_lo: Vec<f64>,
    pub ic_hi: Vec<f64>,
    pub dt: f64,
    pub duration: f64,
    /// Measurement noise level; each trial gets its own noise seed.
    pub sigma: f64,
}

/// Initial condition and noise seed of trial `i`.
pub fn trial_setup(plan: &TrialPlan, i: usize) -> (u64, Vec<f64>) {
    let seed = rng::child_seed(plan.master_seed, i as u64);
    let x0 = rng::uniform_in_box(seed, streams::INITIAL_CONDITION, 0, &plan.ic_lo, &plan.ic_hi);
    (seed, x0)
}

/// Fraction of random initial conditions whose closed loop reaches the target.
///
/// `make_controller` builds a fresh controller per trial. Trials stop at
/// convergence and run in parallel; results do not depend on the thread count.
pub fn effectiveness<F, M, C>(model: &F, make_controller: M, plan: &TrialPlan, target: &TargetBall) -> Result<EffectivenessReport>
where
    F: VectorField + ?Sized,
    M: Fn() -> C + Sync,
    C: FnMut(&[f64]) -> f64,
{
    if plan.trials == 0 {
        return Err(invalid("need at least one trial"));
    }
    if plan.ic_lo.len() != model.dim() || plan.ic_hi.len() != model.dim() {
        return Err(invalid("initial-condition box does not match the model dimension"));
    }
    let reports: Vec<Result<TrialReport>> = (0..plan.trials)
        .into_par_iter()
        .map(|i| {
            let (seed, x0) = trial_setup(plan, i);
            let noise = NoiseSpec::new(plan.sigma, seed)?;
            let mut hit = None;
            let (mut steps, mut off) = (0usize, 0usize);
            drive(model, &x0, make_controller(), plan.duration, plan.dt, Some(&noise), |s| {
                if target.contains(s.x) {
                    hit = Some(s.t);
                    return true;
                }
                if let Some(u) = s.u {
                    steps += 1;
                    off += usize::from(u == 0.0);
                }
                false
            })?;
            let off_fraction = if steps == 0 { 1.0 } else { off as f64 / steps as f64 };
            Ok(TrialReport { trial: i, seed, x0, converged: hit.is_some(), convergence_time: hit, off_fraction })
        })
        .collect();
    let trials = reports.into_iter().collect::<Result<Vec<_>>>()?;
    let fraction = trials.iter().filter(|t| t.converged).count() as f64 / trials.len() as f64;
    Ok(EffectivenessReport { fraction, master_seed: plan.master_seed, trials })
}

/// Effectiveness of a trained classifier.
pub fn classifier_effectiveness<F: VectorField + ?Sized>(
    model: &F,
    classifier: &Classifier,
    plan: &TrialPlan,
    target: &TargetBall,
) -> Result<EffectivenessReport> {
    classifier.check_input(&plan.ic_lo)?;
    effectiveness(model, || |x: &[f64]| classifier.decide(x), plan, target)
}

/// First voltage maximum of coordinate `coord` in a recorded trajectory that
/// follows a downward crossing of `threshold`.
///
/// Detection is armed only once the coordinate is below `threshold` and the
/// maximum itself must lie above it, so small bumps caused by switching the
/// control are not mistaken for spikes. The time is refined by the parabola
/// through the three bracketing samples.
pub fn controlled_spike_time(traj: &Trajectory, coord: usize, threshold: f64) -> Option<f64> {
    let v: Vec<f64> = traj.states.iter().map(|s| s[coord]).collect();
    let mut armed = v.first().is_some_and(|&v0| v0 < threshold);
    for k in 1..v.len().saturating_sub(1) {
        if v[k] < threshold {
            armed = true;
            continue;
        }
        if armed && v[k] > v[k - 1] && v[k + 1] <= v[k] {
            let h = traj.times[k + 1] - traj.times[k];
            return Some(traj.times[k] + vertex_offset(v[k - 1], v[k], v[k + 1], h));
        }
    }
    None
}

/// Width of the shortest arc of the circle of circumference `period` that
/// holds every event time.
pub fn circular_spread(times: &[f64], period: f64) -> f64 {
    if times.len() < 2 {
        return 0.0;
    }
    let mut p: Vec<f64> = times.iter().map(|t| t.rem_euclid(period)).collect();
    p.sort_by(f64::total_cmp);
    let mut gap = p[0] + period - p[p.len() - 1];
    for w in p.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    period - gap
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Model;

    fn traj(controls: Vec<f64>, dt: f64) -> Trajectory {
        let n = controls.len();
        Trajectory { times: (0..=n).map(|k| k as f64 * dt).collect(), states: vec![vec![0.0]; n + 1], controls }
    }

    #[test]
    fn energy_examples() {
        assert!((control_energy(&traj(vec![2.0; 100], 0.01)) - 4.0).abs() < 1e-12);
        assert_eq!(control_energy(&traj(vec![0.0; 10], 0.1)), 0.0);
        let pattern: Vec<f64> = (0..300).map(|k| if (k * 7) % 5 < 2 { 3.0 } else { -3.0 }).collect();
        assert!((control_energy(&traj(pattern, 0.01)) - 27.0).abs() < 1e-9);
    }

    #[test]
    fn off_fraction_examples() {
        assert_eq!(off_fraction(&traj(vec![0.0; 10], 0.1), f64::INFINITY), 1.0);
        assert_eq!(off_fraction(&traj(vec![4.0; 10], 0.1), f64::INFINITY), 0.0);
        assert_eq!(off_fraction(&traj(vec![0.0, 4.0, 4.0, 0.0], 0.1), 0.15), 0.5);
        assert_eq!(off_fraction(&traj(vec![4.0], 0.1), 0.0), 1.0);
    }

    #[test]
    fn zero_controller_matches_simulate() {
        let m = Model::from_id("duffing").unwrap();
        let opts = RunOptions { dt: 0.01, duration: 5.0, noise: None, stop_on_convergence: false };
        let target = TargetBall::new(vec![1.0, 0.0], 0.45).unwrap();
        let (t, metrics) = run_controller(&m, |_| 0.0, &[0.3, 0.2], &opts, &target).unwrap();
        let s = simulate(&m, &[0.3, 0.2], |_| 0.0, 5.0, 0.01, None).unwrap();
        assert_eq!(t, s);
        assert_eq!(metrics.control_energy, 0.0);
    }

    #[test]
    fn uncontrolled_duffing_left_basin() {
        let m = Model::from_id("duffing").unwrap();
        let opts = RunOptions { dt: 0.01, duration: 200.0, noise: None, stop_on_convergence: false };
        let target = TargetBall::new(vec![-1.0, 0.0], 0.05).unwrap();
        let (_, metrics) = run_controller(&m, |_| 0.0, &[-0.5, 0.0], &opts, &target).unwrap();
        assert!(metrics.final_distance < 0.05);
    }

    #[test]
    fn uncontrolled_duffing_effectiveness_is_about_half() {
        // The two basins are symmetric under x -> -x, so about half the box
        // reaches each stable point.
        let m = Model::from_id("duffing").unwrap();
        let plan = TrialPlan { trials: 400, master_seed: 3, ic_lo: vec![-2.0, -2.0], ic_hi: vec![2.0, 2.0], dt: 0.01, duration: 100.0, sigma: 0.0 };
        let target = TargetBall::new(vec![1.0, 0.0], 0.45).unwrap();
        let r = effectiveness(&m, || |_: &[f64]| 0.0, &plan, &target).unwrap();
        assert!((r.fraction - 0.5).abs() < 0.1, "{}", r.fraction);
    }

    #[test]
    fn effectiveness_is_thread_count_independent() {
        let m = Model::from_id("duffing").unwrap();
        let plan = TrialPlan { trials: 16, master_seed: 9, ic_lo: vec![-2.0, -2.0], ic_hi: vec![2.0, 2.0], dt: 0.01, duration: 20.0, sigma: 0.3 };
        let target = TargetBall::new(vec![1.0, 0.0], 0.45).unwrap();
        let ctl = || |x: &[f64]| if x[0] < 0.0 { 4.0 } else { 0.0 };
        let a = effectiveness(&m, ctl, &plan, &target).unwrap();
        let b = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(|| effectiveness(&m, ctl, &plan, &target).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn metrics_survive_csv_round_trip() {
        let m = Model::from_id("duffing").unwrap();
        let opts = RunOptions { dt: 0.01, duration: 30.0, noise: None, stop_on_convergence: true };
        let target = TargetBall::new(vec![1.0, 0.0], 0.45).unwrap();
        let (t, metrics) = run_controller(&m, |x| if x[0] < 0.5 { 4.0 } else { 0.0 }, &[-1.2, 0.1], &opts, &target).unwrap();
        assert!(metrics.converged);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = Trajectory::read_csv(&buf[..]).unwrap();
        let again = metrics_from_trajectory(&back, &target);
        assert_eq!(again, metrics);
    }

    #[test]
    fn energy_is_monotone_in_duration() {
        let m = Model::from_id("duffing").unwrap();
        let target = TargetBall::new(vec![1.0, 0.0], 0.45).unwrap();
        let mut last = 0.0;
        for d in [1.0, 2.0, 5.0, 10.0] {
            let opts = RunOptions { dt: 0.01, duration: d, noise: None, stop_on_convergence: false };
            let (_, r) = run_controller(&m, |x| if x[1] < 0.0 { 4.0 } else { 0.0 }, &[-1.0, 0.5], &opts, &target).unwrap();
            assert!(r.control_energy >= last);
            last = r.control_energy;
        }
    }
    #[test]
    fn circular_spread_wraps() {
        assert!((circular_spread(&[0.1, 9.9], 10.0) - 0.2).abs() < 1e-12);
        assert!((circular_spread(&[1.0, 2.0, 4.0], 10.0) - 3.0).abs() < 1e-12);
        assert_eq!(circular_spread(&[3.0], 10.0), 0.0);
    }

    #[test]
    fn controlled_spike_skips_bumps_above_threshold_until_rearmed() {
        // Starts at a peak, wiggles above threshold, dips below, then peaks at t = 0.5.
        let f = |t: f64| if t < 0.2 { 1.0 - t + 0.05 * (60.0 * t).sin() } else { -(t - 0.5).powi(2) * 10.0 + 0.8 };
        let dt = 1e-3;
        let n = 1000;
        let tr = Trajectory {
            times: (0..=n).map(|k| k as f64 * dt).collect(),
            states: (0..=n).map(|k| vec![f(k as f64 * dt)]).collect(),
            controls: vec![0.0; n],
        };
        let t = controlled_spike_time(&tr, 0, 0.5).unwrap();
        assert!((t - 0.5).abs() < 1e-9, "{t}");
    }
}
