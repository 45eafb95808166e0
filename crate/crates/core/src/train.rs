//! Training algorithms that label sampled states with bang-bang controls.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{NormalizeMode, Normalizer, Reduction};
use crate::cycle::LimitCycle;
use crate::dynamics::{check_state, VectorField};
use crate::error::{invalid, Error, Result};
use crate::integrate::{detect_population_spikes, detect_spike_time, NoiseSpec, Rk4};
use crate::rng::{self, streams};

/// Maximum number of replacement draws per sample after a reward timeout.
pub const MAX_RESAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Algorithm {
    /// ON/OFF control with `u_off = 0`.
    One,
    /// Bang-bang control with `u_off = -u_on`.
    Two,
}

impl TryFrom<u8> for Algorithm {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Algorithm::One),
            2 => Ok(Algorithm::Two),
            other => Err(format!("algorithm must be 1 or 2, got {other}")),
        }
    }
}

impl From<Algorithm> for u8 {
    fn from(a: Algorithm) -> u8 {
        match a {
            Algorithm::One => 1,
            Algorithm::Two => 2,
        }
    }
}

impl Algorithm {
    pub fn u_off(self, u_on: f64) -> f64 {
        match self {
            Algorithm::One => 0.0,
            Algorithm::Two => -u_on,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardSpec {
    /// `-|eta(x) - eta(target)|`, with `eta` fitted on the sampled states.
    DistanceToTarget {
        target: Vec<f64>,
        #[serde(default = "identity_mode")]
        normalize: NormalizeMode,
    },
    /// `-t_spike`, the time to the next voltage maximum under zero control.
    NegativeSpikeTime { dt: f64, timeout: f64 },
    /// Spread between the first and last spike of a population.
    SpikeSpread { dt: f64, timeout: f64 },
}

fn identity_mode() -> NormalizeMode {
    NormalizeMode::Identity
}

impl RewardSpec {
    pub fn name(&self) -> &'static str {
        match self {
            RewardSpec::DistanceToTarget { .. } => "distance_to_target",
            RewardSpec::NegativeSpikeTime { .. } => "negative_spike_time",
            RewardSpec::SpikeSpread { .. } => "spike_spread",
        }
    }
}

/// A reward bound to a model and (for distance rewards) a fitted normalizer.
pub struct Reward<'a, F: VectorField + ?Sized> {
    model: &'a F,
    spec: &'a RewardSpec,
    normalizer: Option<Normalizer>,
}

impl<'a, F: VectorField + ?Sized> Reward<'a, F> {
    /// For distance rewards with a non-identity mode, `fit_on` supplies the
    /// states the normalizer is fitted on.
    pub fn new(model: &'a F, spec: &'a RewardSpec, fit_on: &[Vec<f64>]) -> Result<Self> {
        let normalizer = match spec {
            RewardSpec::DistanceToTarget { target, normalize } => {
                check_state(target, model.dim())?;
                Some(Normalizer::fit(fit_on, *normalize)?)
            }
            RewardSpec::NegativeSpikeTime { dt, timeout } | RewardSpec::SpikeSpread { dt, timeout } => {
                if !(*dt > 0.0 && *timeout > 0.0) {
                    return Err(invalid("spike reward needs positive dt and timeout"));
                }
                None
            }
        };
        Ok(Reward { model, spec, normalizer })
    }

    pub fn normalizer(&self) -> Option<&Normalizer> {
        self.normalizer.as_ref()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self.spec {
            RewardSpec::DistanceToTarget { target, .. } => {
                Ok(reward_distance(x, target, self.normalizer.as_ref()))
            }
            RewardSpec::NegativeSpikeTime { dt, timeout } => reward_negative_spike_time(self.model, x, *dt, *timeout),
            RewardSpec::SpikeSpread { dt, timeout } => reward_spike_spread(self.model, x, *dt, *timeout),
        }
    }
}

/// `-|eta(x) - eta(target)|`; `eta` is the identity when no normalizer is given.
pub fn reward_distance(x: &[f64], target: &[f64], normalizer: Option<&Normalizer>) -> f64 {
    match normalizer {
        Some(n) => -n.distance(x, target),
        None => -x.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
    }
}

pub fn reward_negative_spike_time<F: VectorField + ?Sized>(model: &F, x: &[f64], dt: f64, timeout: f64) -> Result<f64> {
    Ok(-detect_spike_time(model, x, dt, timeout)?)
}

pub fn reward_spike_spread<F: VectorField + ?Sized>(model: &F, x: &[f64], dt: f64, timeout: f64) -> Result<f64> {
    let times = detect_population_spikes(model, x, dt, timeout)?;
    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(hi - lo)
}

/// Serializable description of where training states come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerSpec {
    UniformBox { lo: Vec<f64>, hi: Vec<f64>, seed: u64 },
    /// Stratified random phases on a limit cycle. For populations, member `j`
    /// of `M` is shifted in cycle time by `spread * (j / (M - 1) - 1/2)`.
    OnLimitCycle {
        seed: u64,
        #[serde(default)]
        spread: f64,
    },
}

impl SamplerSpec {
    pub fn seed(&self) -> u64 {
        match self {
            SamplerSpec::UniformBox { seed, .. } | SamplerSpec::OnLimitCycle { seed, .. } => *seed,
        }
    }
}

/// A source of training states addressed by `(index, attempt)`.
pub trait StateSampler: Sync {
    /// Full model state for sample `index`; `attempt > 0` draws a replacement.
    fn draw(&self, index: usize, attempt: usize) -> Vec<f64>;
    fn spec(&self) -> SamplerSpec;
}

#[derive(Debug, Clone)]
pub struct BoxSampler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub seed: u64,
}

impl BoxSampler {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, seed: u64) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(invalid("box bounds must be non-empty and of equal length"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite()) {
            return Err(invalid("box bounds must be finite with lo <= hi"));
        }
        Ok(BoxSampler { lo, hi, seed })
    }
}

/// Draw index for `(index, attempt)`; replacements live far past any real index.
fn draw_index(index: usize, attempt: usize) -> u64 {
    ((attempt as u64) << 40) | index as u64
}

impl StateSampler for BoxSampler {
    fn draw(&self, index: usize, attempt: usize) -> Vec<f64> {
        rng::uniform_in_box(self.seed, streams::SAMPLER, draw_index(index, attempt), &self.lo, &self.hi)
    }

    fn spec(&self) -> SamplerSpec {
        SamplerSpec::UniformBox { lo: self.lo.clone(), hi: self.hi.clone(), seed: self.seed }
    }
}

/// Samples `n` cycle times `T (i + U_i) / n`; a population of `population`
/// identical cells is placed around each time.
pub struct CycleSampler<'a> {
    pub cell: &'a dyn VectorField,
    pub cycle: &'a LimitCycle,
    pub n: usize,
    pub population: usize,
    pub spread: f64,
    pub seed: u64,
}

impl CycleSampler<'_> {
    /// Cycle time of sample `index`.
    pub fn time(&self, index: usize, attempt: usize) -> f64 {
        let u = rng::unit(self.seed, streams::SAMPLER, draw_index(index, attempt));
        self.cycle.period * ((index % self.n) as f64 + u) / self.n as f64
    }
}

impl StateSampler for CycleSampler<'_> {
    fn draw(&self, index: usize, attempt: usize) -> Vec<f64> {
        population_state(self.cell, self.cycle, self.time(index, attempt), self.population, self.spread)
    }

    fn spec(&self) -> SamplerSpec {
        SamplerSpec::OnLimitCycle { seed: self.seed, spread: self.spread }
    }
}

/// Block-layout population whose members sit at cycle times spread evenly over
/// `[t - spread/2, t + spread/2]`. With one member this is the cycle state at `t`.
pub fn population_state<F: VectorField + ?Sized>(cell: &F, cycle: &LimitCycle, t: f64, m: usize, spread: f64) -> Vec<f64> {
    if m == 1 {
        return cycle.state_at(cell, t);
    }
    let d = cycle.points[0].len();
    let mut x = vec![0.0; d * m];
    for j in 0..m {
        let offset = spread * (j as f64 / (m - 1) as f64 - 0.5);
        let s = cycle.state_at(cell, t + offset);
        for k in 0..d {
            x[k * m + j] = s[k];
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    pub reward: Option<RewardSpec>,
    pub sampler: Option<SamplerSpec>,
    /// Replacement draws taken after reward timeouts.
    #[serde(default)]
    pub resampled: usize,
}

/// Sampled states `X` with their control labels `U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub algorithm: Algorithm,
    pub u_on: f64,
    pub u_off: f64,
    pub probe_dt: f64,
    #[serde(default)]
    pub reduction: Reduction,
    pub samples: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    /// Normalizer used inside the reward, if any.
    #[serde(default)]
    pub reward_normalizer: Option<Normalizer>,
    pub provenance: Provenance,
}

impl TrainingSet {
    /// Assembles and validates a set directly.
    pub fn from_parts(samples: Vec<Vec<f64>>, labels: Vec<f64>, algorithm: Algorithm, u_on: f64, probe_dt: f64) -> Result<Self> {
        let ts = TrainingSet {
            algorithm,
            u_on,
            u_off: algorithm.u_off(u_on),
            probe_dt,
            reduction: Reduction::Identity,
            samples,
            labels,
            reward_normalizer: None,
            provenance: Provenance { model: "custom".into(), reward: None, sampler: None, resampled: 0 },
        };
        ts.validate()?;
        Ok(ts)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(invalid("training set is empty"));
        }
        if self.samples.len() != self.labels.len() {
            return Err(invalid(format!("{} samples but {} labels", self.samples.len(), self.labels.len())));
        }
        if !(self.u_on > 0.0 && self.u_on.is_finite()) {
            return Err(invalid("u_on must be positive"));
        }
        if self.u_off != self.algorithm.u_off(self.u_on) {
            return Err(invalid("u_off does not match the algorithm"));
        }
        let d = self.samples[0].len();
        for (i, s) in self.samples.iter().enumerate() {
            if s.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: s.len() });
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index: i });
            }
        }
        if let Some(bad) = self.labels.iter().find(|&&u| u != self.u_on && u != self.u_off) {
            return Err(invalid(format!("label {bad} is neither {} nor {}", self.u_on, self.u_off)));
        }
        Ok(())
    }

    pub fn fraction_on(&self) -> f64 {
        self.labels.iter().filter(|&&u| u == self.u_on).count() as f64 / self.labels.len() as f64
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let ts: TrainingSet = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        ts.validate()?;
        Ok(ts)
    }
}

/// Shared training configuration.
pub struct TrainSpec<'a, F: VectorField + ?Sized> {
    pub model: &'a F,
    pub model_name: &'a str,
    pub reward: &'a RewardSpec,
    pub sampler: &'a dyn StateSampler,
    pub n: usize,
    pub probe_dt: f64,
    pub u1: f64,
    pub reduction: Reduction,
}

impl<F: VectorField + ?Sized> TrainSpec<'_, F> {
    fn check(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("N must be at least 1"));
        }
        if !(self.probe_dt > 0.0 && self.probe_dt.is_finite()) {
            return Err(invalid("probe dt must be positive"));
        }
        if !(self.u1 > 0.0 && self.u1.is_finite()) {
            return Err(invalid("u1 must be positive"));
        }
        Ok(())
    }
}

/// State after a probe of length `dt` under constant control `u`.
fn probe<F: VectorField + ?Sized>(model: &F, x0: &[f64], u: f64, dt: f64) -> Result<Vec<f64>> {
    let mut x = x0.to_vec();
    Rk4::new(model).checked_step(&mut x, u, dt, 0.0)?;
    Ok(x)
}

/// Labels every sample in parallel; timeouts trigger up to [`MAX_RESAMPLES`]
/// replacement draws for that sample.
fn label_all<F, L>(spec: &TrainSpec<'_, F>, algorithm: Algorithm, label: L) -> Result<TrainingSet>
where
    F: VectorField + ?Sized,
    L: Fn(&Reward<'_, F>, &[f64]) -> Result<f64> + Sync,
{
    spec.check()?;
    let first: Vec<Vec<f64>> = (0..spec.n).map(|i| spec.sampler.draw(i, 0)).collect();
    for x in &first {
        check_state(x, spec.model.dim())?;
    }
    let reward = Reward::new(spec.model, spec.reward, &first)?;
    let results: Vec<Result<(Vec<f64>, f64, usize)>> = first
        .into_par_iter()
        .enumerate()
        .map(|(i, mut x)| {
            for attempt in 0..=MAX_RESAMPLES {
                if attempt > 0 {
                    x = spec.sampler.draw(i, attempt);
                }
                match label(&reward, &x) {
                    Ok(u) => return Ok((x, u, attempt)),
                    Err(Error::Timeout { .. }) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::SamplerExhausted(format!("sample {i}: reward timed out on {} draws", MAX_RESAMPLES + 1)))
        })
        .collect();
    let mut samples = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    let mut resampled = 0;
    for r in results {
        let (x, u, attempts) = r?;
        samples.push(spec.reduction.apply(&x)?);
        labels.push(u);
        resampled += attempts;
    }
    let ts = TrainingSet {
        algorithm,
        u_on: spec.u1,
        u_off: algorithm.u_off(spec.u1),
        probe_dt: spec.probe_dt,
        reduction: spec.reduction,
        samples,
        labels,
        reward_normalizer: reward.normalizer().filter(|n| n.mode != NormalizeMode::Identity).cloned(),
        provenance: Provenance {
            model: spec.model_name.to_string(),
            reward: Some(spec.reward.clone()),
            sampler: Some(spec.sampler.spec()),
            resampled,
        },
    };
    ts.validate()?;
    Ok(ts)
}

/// ON/OFF labelling: OFF whenever free flow does not lower the reward over
/// one probe, otherwise ON only if the ON probe beats the OFF probe.
pub fn train_algorithm1<F: VectorField + ?Sized>(spec: &TrainSpec<'_, F>) -> Result<TrainingSet> {
    let (dt, u1) = (spec.probe_dt, spec.u1);
    label_all(spec, Algorithm::One, |reward, x0| {
        let r0 = reward.eval(x0)?;
        let off = probe(spec.model, x0, 0.0, dt)?;
        let r_off = reward.eval(&off)?;
        if r_off >= r0 {
            return Ok(0.0);
        }
        let on = probe(spec.model, x0, u1, dt)?;
        let r_on = reward.eval(&on)?;
        Ok(if r_on > r_off { u1 } else { 0.0 })
    })
}

/// Bang-bang labelling: probe with `+u1` and `-u1`, let each run freely until
/// the reward's event resolves, keep `+u1` on ties.
pub fn train_algorithm2<F: VectorField + ?Sized>(spec: &TrainSpec<'_, F>) -> Result<TrainingSet> {
    let (dt, u1) = (spec.probe_dt, spec.u1);
    label_all(spec, Algorithm::Two, |reward, x0| {
        let plus = reward.eval(&probe(spec.model, x0, u1, dt)?)?;
        let minus = reward.eval(&probe(spec.model, x0, -u1, dt)?)?;
        Ok(if plus >= minus { u1 } else { -u1 })
    })
}

/// Adds independent Gaussian noise to every stored state; labels are untouched.
pub fn corrupt_training_set(ts: &TrainingSet, noise: &NoiseSpec) -> TrainingSet {
    let mut out = ts.clone();
    if noise.sigma > 0.0 {
        for (i, s) in out.samples.iter_mut().enumerate() {
            let src = s.clone();
            noise.perturb_into(streams::CORRUPTION, i as u64, &src, s);
        }
    }
    out
}
