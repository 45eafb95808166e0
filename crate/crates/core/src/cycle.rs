//! Periodic orbits anchored at the voltage maximum.

use serde::{Deserialize, Serialize};

use crate::dynamics::VectorField;
use crate::error::{invalid, Error, Result};
use crate::integrate::{detect_spike, simulate, Rk4};

/// One period of a limit cycle, sampled uniformly in time from the spike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCycle {
    pub period: f64,
    /// Sample spacing; `points.len() * spacing == period`.
    pub spacing: f64,
    /// `points[0]` is the state at the voltage maximum.
    pub points: Vec<Vec<f64>>,
}

impl LimitCycle {
    /// State on the cycle `t` time units after the spike (taken modulo the period).
    pub fn state_at<F: VectorField + ?Sized>(&self, model: &F, t: f64) -> Vec<f64> {
        let t = t.rem_euclid(self.period);
        let k = ((t / self.spacing).floor() as usize).min(self.points.len() - 1);
        let mut x = self.points[k].clone();
        let h = t - k as f64 * self.spacing;
        if h > 0.0 {
            Rk4::new(model).step(&mut x, 0.0, h);
        }
        x
    }

    pub fn omega(&self) -> f64 {
        std::f64::consts::TAU / self.period
    }
}

/// Integrates past transients, then measures two successive inter-spike
/// intervals. Fails if they disagree by more than `1e-3 * T`.
pub fn find_limit_cycle<F: VectorField + ?Sized>(model: &F, x0: &[f64], dt: f64, settle_time: f64) -> Result<LimitCycle> {
    if !(settle_time >= 0.0) {
        return Err(invalid("settle time must be non-negative"));
    }
    let start = if settle_time > 0.0 {
        let tr = simulate(model, x0, |_| 0.0, settle_time, dt, None)?;
        tr.states.last().cloned().unwrap()
    } else {
        x0.to_vec()
    };
    // Generous search window: no model here has a natural period above 100.
    let window = 1000.0;
    let spike = |x: &[f64]| {
        detect_spike(model, x, dt, window).map_err(|e| match e {
            Error::Timeout { .. } => Error::NoPeriodicity("no spike after settling".into()),
            other => other,
        })
    };
    let s1 = spike(&start)?;
    let s2 = spike(&s1.state)?;
    let s3 = spike(&s2.state)?;
    let (t1, t2) = (s2.time, s3.time);
    if (t1 - t2).abs() > 1e-3 * t2 {
        return Err(Error::NoPeriodicity(format!("successive periods {t1} and {t2}")));
    }
    let period = t2;
    let n = ((period / dt).round() as usize).max(16);
    let spacing = period / n as f64;
    let mut rk = Rk4::new(model);
    let mut x = s3.state;
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        points.push(x.clone());
        rk.step(&mut x, 0.0, spacing);
    }
    Ok(LimitCycle { period, spacing, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::toy::RadialClock;

    #[test]
    fn radial_clock_period() {
        let clock = RadialClock { omega: 1.0 };
        let c = find_limit_cycle(&clock, &[0.5, 0.0], 0.001, 20.0).unwrap();
        assert!((c.period - std::f64::consts::TAU).abs() < 1e-6, "{}", c.period);
        // Anchored at the maximum of x: angle zero.
        assert!((c.points[0][0] - 1.0).abs() < 1e-6 && c.points[0][1].abs() < 1e-6);
    }

    #[test]
    fn state_at_wraps() {
        let clock = RadialClock { omega: 1.0 };
        let c = find_limit_cycle(&clock, &[1.0, 0.0], 0.001, 0.0).unwrap();
        let p = c.state_at(&clock, c.period + std::f64::consts::FRAC_PI_2);
        assert!(p[0].abs() < 1e-6 && (p[1] - 1.0).abs() < 1e-6, "{p:?}");
    }

    #[test]
    fn decaying_system_has_no_cycle() {
        let m = crate::dynamics::toy::Linear1d { a: -1.0 };
        assert!(matches!(find_limit_cycle(&m, &[1.0], 0.01, 1.0), Err(Error::NoPeriodicity(_))));
    }
}
