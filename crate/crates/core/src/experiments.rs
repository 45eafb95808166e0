//! Scenario configuration, the built-in scenario registry and the runner that
//! takes a scenario from training through closed-loop evaluation to files on disk.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{compute_prc_direct, lyapunov_controller, prc_feedback, run_fully_actuated, validate_desync_policy, Prc, PrcOptions};
use crate::classify::{decision_region_grid, Classifier, ClassifierSpec, NormalizeMode, Normalizer, Reduction};
use crate::control::{
    circular_spread, classifier_effectiveness, controlled_spike_time, effectiveness, run_closed_loop, run_controller, trial_setup,
    EffectivenessReport, RunMetrics, RunOptions, TargetBall, TrialPlan,
};
use crate::cycle::{find_limit_cycle, LimitCycle};
use crate::dynamics::{mean_population_state, Model, VectorField};
use crate::error::{Error, Result};
use crate::integrate::{detect_population_spikes, simulate, NoiseSpec, Trajectory};
use crate::rng::child_seed;
use crate::train::{
    corrupt_training_set, population_state, train_algorithm1, train_algorithm2, Algorithm, BoxSampler, CycleSampler, RewardSpec,
    SamplerSpec, StateSampler, TrainSpec, TrainingSet,
};

pub const SCENARIOS: [&str; 6] = ["duffing", "reduced_hh", "thalamic_phase", "desync", "lorenz", "duffing_noise"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub id: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

/// How to locate the natural limit cycle of the (single) oscillator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleSection {
    pub x0: Vec<f64>,
    pub dt: f64,
    pub settle_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub algorithm: Algorithm,
    pub n: usize,
    pub probe_dt: f64,
    pub u1: f64,
    pub reward: RewardSpec,
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub reduction: Reduction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    pub tau: f64,
    #[serde(default)]
    pub normalize: NormalizeMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub dt: f64,
    pub duration: f64,
    /// Start of the demonstration run. Scenarios with a limit cycle default to its spike point.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

/// Measurement noise on the classifier input during closed-loop runs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectivenessSection {
    pub trials: usize,
    pub master_seed: u64,
    pub ic_lo: Vec<f64>,
    pub ic_hi: Vec<f64>,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub center: Vec<f64>,
    pub radius: f64,
    /// Measure the ball in coordinates normalized on the training samples.
    #[serde(default)]
    pub normalize: Option<NormalizeMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrcSection {
    pub n_phases: usize,
    pub periods: usize,
    pub epsilon: f64,
    pub dt: f64,
}

impl Default for PrcSection {
    fn default() -> Self {
        let d = PrcOptions::default();
        PrcSection { n_phases: d.n_phases, periods: d.periods, epsilon: d.epsilon, dt: d.dt }
    }
}

impl From<PrcSection> for PrcOptions {
    fn from(p: PrcSection) -> Self {
        PrcOptions { epsilon: p.epsilon, n_phases: p.n_phases, periods: p.periods, dt: p.dt }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Baseline {
    FullyActuated { gain: f64 },
    Lyapunov,
}

/// Scenario-specific evaluation that follows training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Analysis {
    /// Switching between two stable states; reports the OFF share of runs that needed control.
    Bistable,
    /// Stabilization with an energy comparison against a model-based controller.
    Stabilize {
        baseline: Baseline,
        /// Extra random initial conditions for paired energies (0: the run start only).
        #[serde(default)]
        energy_ics: usize,
        /// Fixed comparison horizon; without it energies are taken up to convergence.
        #[serde(default)]
        energy_window: Option<f64>,
    },
    /// Spike advancement compared with a PRC-sign controller.
    Phase {
        bounds: Vec<f64>,
        /// `-1` applies `-u1 sign Z`, `+1` applies `+u1 sign Z`.
        prc_sign: f64,
        #[serde(default)]
        prc: PrcSection,
    },
    /// Desynchronization of a coupled population.
    Desync {
        /// Cycle-time spread of the initial population.
        initial_spread: f64,
        /// Initial population centre as a fraction of the period after the spike.
        initial_phase: f64,
        /// Interval between spread measurements.
        checkpoint: f64,
        spike_dt: f64,
        #[serde(default)]
        prc: PrcSection,
    },
    /// Effectiveness over a grid of noise levels and bandwidths.
    NoiseSweep {
        sigmas: Vec<f64>,
        taus: Vec<f64>,
        trials: usize,
        master_seed: u64,
        corruption_seed: u64,
        ic_lo: Vec<f64>,
        ic_hi: Vec<f64>,
        duration: f64,
    },
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub model: ModelSection,
    #[serde(default)]
    pub cycle: Option<CycleSection>,
    pub train: TrainSection,
    pub classifier: ClassifierSection,
    pub run: RunSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub effectiveness: Option<EffectivenessSection>,
    #[serde(default)]
    pub target: Option<TargetSection>,
    pub analysis: Analysis,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.name == "custom" || SCENARIOS.contains(&self.name.as_str())) {
            return Err(Error::Config(format!("scenario `{}` is not built in; name it `custom`", self.name)));
        }
        if self.train.n == 0 {
            return Err(Error::Config("train.n must be at least 1".into()));
        }
        positive("train.probe_dt", self.train.probe_dt)?;
        positive("train.u1", self.train.u1)?;
        positive("classifier.tau", self.classifier.tau)?;
        positive("run.dt", self.run.dt)?;
        positive("run.duration", self.run.duration)?;
        if !(self.noise.sigma >= 0.0 && self.noise.sigma.is_finite()) {
            return Err(Error::Config("noise.sigma must be non-negative".into()));
        }
        if let Some(c) = &self.cycle {
            positive("cycle.dt", c.dt)?;
        }
        if let Some(e) = &self.effectiveness {
            if e.trials == 0 {
                return Err(Error::Config("effectiveness.trials must be at least 1".into()));
            }
            positive("effectiveness.duration", e.duration)?;
        }
        if let Some(t) = &self.target {
            positive("target.radius", t.radius)?;
        }
        let needs_cycle = matches!(self.train.sampler, SamplerSpec::OnLimitCycle { .. })
            || matches!(self.analysis, Analysis::Phase { .. } | Analysis::Desync { .. });
        if needs_cycle && self.cycle.is_none() {
            return Err(Error::Config("this scenario needs a [cycle] section".into()));
        }
        match &self.analysis {
            Analysis::Bistable | Analysis::Stabilize { .. } => {
                if self.target.is_none() || self.effectiveness.is_none() {
                    return Err(Error::Config("target and effectiveness sections are required".into()));
                }
            }
            Analysis::Phase { bounds, prc_sign, .. } => {
                if bounds.iter().any(|b| !(*b >= 0.0)) || prc_sign.abs() != 1.0 {
                    return Err(Error::Config("bounds must be non-negative and prc_sign ±1".into()));
                }
            }
            Analysis::Desync { initial_spread, checkpoint, spike_dt, .. } => {
                positive("initial_spread", *initial_spread)?;
                positive("checkpoint", *checkpoint)?;
                positive("spike_dt", *spike_dt)?;
            }
            Analysis::NoiseSweep { sigmas, taus, trials, duration, .. } => {
                if self.target.is_none() {
                    return Err(Error::Config("a noise sweep needs a target section".into()));
                }
                if *trials == 0 || sigmas.is_empty() || taus.is_empty() {
                    return Err(Error::Config("sweep needs trials, sigmas and taus".into()));
                }
                if sigmas.iter().any(|s| !(*s >= 0.0)) {
                    return Err(Error::Config("sweep sigmas must be non-negative".into()));
                }
                for t in taus {
                    positive("sweep tau", *t)?;
                }
                positive("sweep duration", *duration)?;
            }
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<Model> {
        Model::with_overrides(&self.model.id, &self.model.params)
    }
}

/// Fixed point of the reduced Hodgkin-Huxley model at the default drive.
const HH_FIXED_POINT: [f64; 2] = [-61.043231135871, 0.3796541620229715];

fn thalamic_cycle() -> CycleSection {
    CycleSection { x0: vec![-65.0, 0.5, 0.1], dt: 0.01, settle_time: 1000.0 }
}

fn duffing_base(name: &str) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        output: None,
        model: ModelSection { id: "duffing".into(), params: BTreeMap::new() },
        cycle: None,
        train: TrainSection {
            algorithm: Algorithm::One,
            n: 50,
            probe_dt: 0.001,
            u1: 4.0,
            reward: RewardSpec::DistanceToTarget { target: vec![1.0, 0.0], normalize: NormalizeMode::Identity },
            sampler: SamplerSpec::UniformBox { lo: vec![-2.0, -2.0], hi: vec![2.0, 2.0], seed: 2 },
            reduction: Reduction::Identity,
        },
        classifier: ClassifierSection { tau: 0.4, normalize: NormalizeMode::Identity },
        run: RunSection { dt: 0.001, duration: 50.0, x0: Some(vec![-1.0, 0.0]) },
        noise: NoiseSection::default(),
        effectiveness: Some(EffectivenessSection {
            trials: 1000,
            master_seed: 1,
            ic_lo: vec![-2.0, -2.0],
            ic_hi: vec![2.0, 2.0],
            duration: 50.0,
        }),
        target: Some(TargetSection { center: vec![1.0, 0.0], radius: 0.45, normalize: None }),
        analysis: Analysis::Bistable,
    }
}

/// Built-in scenario by name.
pub fn builtin(name: &str) -> Result<ScenarioConfig> {
    let cfg = match name {
        "duffing" => duffing_base("duffing"),
        "duffing_noise" => {
            let mut cfg = duffing_base("duffing_noise");
            cfg.effectiveness = None;
            cfg.analysis = Analysis::NoiseSweep {
                sigmas: vec![0.2, 0.3, 0.4, 0.5, 0.6],
                taus: vec![0.1, 0.4, 0.8, 1.2, 1.6],
                trials: 1000,
                master_seed: 11,
                corruption_seed: 7,
                ic_lo: vec![-2.0, -2.0],
                ic_hi: vec![2.0, 2.0],
                duration: 100.0,
            };
            cfg
        }
        "reduced_hh" => {
            let (lo, hi) = (vec![-100.0, 0.0], vec![40.0, 1.0]);
            ScenarioConfig {
                name: name.into(),
                output: None,
                model: ModelSection { id: "reduced_hh".into(), params: BTreeMap::new() },
                cycle: None,
                train: TrainSection {
                    algorithm: Algorithm::One,
                    n: 1000,
                    probe_dt: 0.001,
                    u1: 15.0,
                    reward: RewardSpec::DistanceToTarget { target: HH_FIXED_POINT.to_vec(), normalize: NormalizeMode::VarianceVerbatim },
                    sampler: SamplerSpec::UniformBox { lo: lo.clone(), hi: hi.clone(), seed: 2 },
                    reduction: Reduction::Identity,
                },
                classifier: ClassifierSection { tau: 0.001, normalize: NormalizeMode::VarianceVerbatim },
                run: RunSection { dt: 0.01, duration: 300.0, x0: Some(vec![-20.0, 0.5]) },
                noise: NoiseSection::default(),
                effectiveness: Some(EffectivenessSection { trials: 1000, master_seed: 1, ic_lo: lo, ic_hi: hi, duration: 300.0 }),
                target: Some(TargetSection { center: HH_FIXED_POINT.to_vec(), radius: 0.03, normalize: Some(NormalizeMode::Std) }),
                analysis: Analysis::Stabilize { baseline: Baseline::FullyActuated { gain: 0.2 }, energy_ics: 0, energy_window: None },
            }
        }
        "thalamic_phase" => ScenarioConfig {
            name: name.into(),
            output: None,
            model: ModelSection { id: "thalamic".into(), params: BTreeMap::new() },
            cycle: Some(thalamic_cycle()),
            train: TrainSection {
                algorithm: Algorithm::Two,
                n: 100,
                probe_dt: 0.001,
                u1: 1.0,
                reward: RewardSpec::NegativeSpikeTime { dt: 0.001, timeout: 42.0 },
                sampler: SamplerSpec::OnLimitCycle { seed: 0, spread: 0.0 },
                reduction: Reduction::Identity,
            },
            classifier: ClassifierSection { tau: 0.01, normalize: NormalizeMode::Std },
            run: RunSection { dt: 0.01, duration: 20.0, x0: None },
            noise: NoiseSection::default(),
            effectiveness: None,
            target: None,
            analysis: Analysis::Phase { bounds: vec![0.5, 1.0, 2.0], prc_sign: 1.0, prc: PrcSection::default() },
        },
        "desync" => ScenarioConfig {
            name: name.into(),
            output: None,
            model: ModelSection {
                id: "coupled_thalamic".into(),
                params: BTreeMap::from([("m".to_string(), 51.0), ("alpha".to_string(), 0.01)]),
            },
            cycle: Some(thalamic_cycle()),
            train: TrainSection {
                algorithm: Algorithm::Two,
                n: 51,
                probe_dt: 0.001,
                u1: 0.5,
                reward: RewardSpec::SpikeSpread { dt: 0.01, timeout: 84.0 },
                sampler: SamplerSpec::OnLimitCycle { seed: 0, spread: 0.4 },
                reduction: Reduction::PopulationMean { m: 51 },
            },
            classifier: ClassifierSection { tau: 0.01, normalize: NormalizeMode::Std },
            run: RunSection { dt: 0.01, duration: 120.0, x0: None },
            noise: NoiseSection::default(),
            effectiveness: None,
            target: None,
            analysis: Analysis::Desync {
                initial_spread: 0.4,
                initial_phase: 0.5,
                checkpoint: 5.0,
                spike_dt: 0.01,
                prc: PrcSection { n_phases: 128, ..PrcSection::default() },
            },
        },
        "lorenz" => {
            let (lo, hi) = (vec![-3.0, -3.0, -1.0], vec![3.0, 3.0, 3.0]);
            ScenarioConfig {
                name: name.into(),
                output: None,
                model: ModelSection { id: "lorenz".into(), params: BTreeMap::new() },
                cycle: None,
                train: TrainSection {
                    algorithm: Algorithm::Two,
                    n: 1000,
                    probe_dt: 0.001,
                    u1: 5.0,
                    reward: RewardSpec::DistanceToTarget { target: vec![0.0; 3], normalize: NormalizeMode::Identity },
                    sampler: SamplerSpec::UniformBox { lo: lo.clone(), hi: hi.clone(), seed: 0 },
                    reduction: Reduction::Identity,
                },
                classifier: ClassifierSection { tau: 5.0, normalize: NormalizeMode::Identity },
                run: RunSection { dt: 0.001, duration: 50.0, x0: Some(vec![1.0, 1.0, 1.0]) },
                noise: NoiseSection::default(),
                effectiveness: Some(EffectivenessSection { trials: 1000, master_seed: 1, ic_lo: lo, ic_hi: hi, duration: 50.0 }),
                target: Some(TargetSection { center: vec![0.0; 3], radius: 0.09, normalize: None }),
                analysis: Analysis::Stabilize { baseline: Baseline::Lyapunov, energy_ics: 100, energy_window: Some(6.0) },
            }
        }
        other => return Err(Error::Config(format!("unknown scenario `{other}`; known: {}", SCENARIOS.join(", ")))),
    };
    Ok(cfg)
}

/// Training set plus the classifier settings needed to rebuild the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub training_set: TrainingSet,
    pub classifier: ClassifierSpec,
}

impl PolicyFile {
    pub fn new(ts: &TrainingSet, c: &Classifier) -> Self {
        PolicyFile { training_set: ts.clone(), classifier: c.spec() }
    }

    pub fn classifier(&self) -> Result<Classifier> {
        let c = Classifier::with_normalizer(&self.training_set, self.classifier.tau, self.classifier.normalizer.clone())?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p: PolicyFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        p.training_set.validate()?;
        Ok(p)
    }
}

/// Natural limit cycle of the single oscillator underlying `model`.
pub fn natural_cycle(model: &Model, section: &CycleSection) -> Result<LimitCycle> {
    match model {
        Model::CoupledThalamic(p) => find_limit_cycle(&p.cell, &section.x0, section.dt, section.settle_time),
        other => find_limit_cycle(other, &section.x0, section.dt, section.settle_time),
    }
}

fn cell_of(model: &Model) -> &dyn VectorField {
    match model {
        Model::CoupledThalamic(p) => &p.cell,
        other => other,
    }
}

/// Trains the scenario's policy with `u1` in place of the configured bound.
pub fn train_with(cfg: &ScenarioConfig, model: &Model, cycle: Option<&LimitCycle>, u1: f64) -> Result<TrainingSet> {
    let t = &cfg.train;
    let box_sampler;
    let cycle_sampler;
    let sampler: &dyn StateSampler = match &t.sampler {
        SamplerSpec::UniformBox { lo, hi, seed } => {
            box_sampler = BoxSampler::new(lo.clone(), hi.clone(), *seed)?;
            &box_sampler
        }
        SamplerSpec::OnLimitCycle { seed, spread } => {
            let cycle = cycle.ok_or_else(|| Error::Config("limit-cycle sampling needs a cycle".into()))?;
            cycle_sampler = CycleSampler {
                cell: cell_of(model),
                cycle,
                n: t.n,
                population: model.population(),
                spread: *spread,
                seed: *seed,
            };
            &cycle_sampler
        }
    };
    let spec = TrainSpec {
        model,
        model_name: model.id(),
        reward: &t.reward,
        sampler,
        n: t.n,
        probe_dt: t.probe_dt,
        u1,
        reduction: t.reduction,
    };
    match t.algorithm {
        Algorithm::One => train_algorithm1(&spec),
        Algorithm::Two => train_algorithm2(&spec),
    }
}

fn build_target(cfg: &ScenarioConfig, ts: &TrainingSet) -> Result<Option<TargetBall>> {
    let Some(t) = &cfg.target else { return Ok(None) };
    let mut ball = TargetBall::new(t.center.clone(), t.radius)?;
    if let Some(mode) = t.normalize {
        ball.normalizer = Some(Normalizer::fit(&ts.samples, mode)?);
    }
    Ok(Some(ball))
}

fn plan_from(e: &EffectivenessSection, dt: f64, sigma: f64) -> TrialPlan {
    TrialPlan { trials: e.trials, master_seed: e.master_seed, ic_lo: e.ic_lo.clone(), ic_hi: e.ic_hi.clone(), dt, duration: e.duration, sigma }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub algorithm: Algorithm,
    pub n: usize,
    pub u1: f64,
    pub fraction_on: f64,
    pub resampled: usize,
    pub sampler_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRun {
    pub x0: Vec<f64>,
    pub noise: NoiseSection,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectivenessSummary {
    pub trials: usize,
    pub master_seed: u64,
    pub sigma: f64,
    pub fraction: f64,
    pub max_convergence_time: Option<f64>,
    /// Mean OFF share over converged trials.
    pub mean_off_fraction: Option<f64>,
    /// Trials the uncontrolled flow does not bring to the target (bistable scenarios).
    pub needing_control: Option<usize>,
    /// Mean OFF share over converged trials that needed control.
    pub off_fraction_needing_control: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn summarize(r: &EffectivenessReport, sigma: f64, uncontrolled: Option<&EffectivenessReport>) -> EffectivenessSummary {
    let converged = || r.trials.iter().filter(|t| t.converged);
    let needing = uncontrolled.map(|u| r.trials.iter().zip(&u.trials).filter(|(_, free)| !free.converged).map(|(t, _)| t).collect::<Vec<_>>());
    EffectivenessSummary {
        trials: r.trials.len(),
        master_seed: r.master_seed,
        sigma,
        fraction: r.fraction,
        max_convergence_time: converged().filter_map(|t| t.convergence_time).reduce(f64::max),
        mean_off_fraction: mean(converged().map(|t| t.off_fraction)),
        needing_control: needing.as_ref().map(Vec::len),
        off_fraction_needing_control: needing.and_then(|v| mean(v.iter().filter(|t| t.converged).map(|t| t.off_fraction))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyPair {
    pub x0: Vec<f64>,
    pub learned: f64,
    pub baseline: f64,
    pub ratio: f64,
    pub learned_converged: bool,
    pub baseline_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyComparison {
    pub baseline: Baseline,
    /// Fixed horizon, or `None` when energies run to convergence.
    pub window: Option<f64>,
    pub pairs: Vec<EnergyPair>,
    pub median_learned: f64,
    pub median_baseline: f64,
    pub median_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundPoint {
    pub u1: f64,
    pub learned_spike_time: f64,
    pub learned_decrease_pct: f64,
    pub prc_spike_time: f64,
    pub prc_decrease_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub period: f64,
    pub prc_sign: f64,
    /// Result at the configured bound.
    pub at_u1: BoundPoint,
    pub curve: Vec<BoundPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadSample {
    pub t: f64,
    /// Shortest arc holding every cell's next spike time, modulo the period.
    pub circular: f64,
    /// Latest minus earliest next spike time.
    pub linear: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesyncReport {
    pub period: f64,
    /// Agreement between the policy sign and `sign(Z')` outside the near-zero band.
    pub prc_agreement: f64,
    pub spread: Vec<SpreadSample>,
    pub max_circular: f64,
    /// First checkpoint with circular spread of at least half a period.
    pub half_period_reached_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub sigma: f64,
    pub tau: f64,
    pub cell_seed: u64,
    pub fraction: f64,
}

/// Effectiveness over a `(sigma, tau)` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub sigmas: Vec<f64>,
    pub taus: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
    pub corruption_seed: u64,
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn fraction(&self, sigma: f64, tau: f64) -> Option<f64> {
        self.cells.iter().find(|c| c.sigma == sigma && c.tau == tau).map(|c| c.fraction)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "sigma,tau,cell_seed,fraction")?;
        for c in &self.cells {
            writeln!(out, "{},{},{},{}", c.sigma, c.tau, c.cell_seed, c.fraction)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalysisReport {
    Bistable,
    Energy(EnergyComparison),
    Phase(PhaseReport),
    Desync(DesyncReport),
    Sweep(SweepResult),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub model: String,
    pub training: TrainingSummary,
    pub period: Option<f64>,
    pub demo: Option<DemoRun>,
    pub effectiveness: Option<EffectivenessSummary>,
    pub analysis: AnalysisReport,
}

impl ScenarioReport {
    /// Human-readable key figures.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let mut line = |t: String| {
            s.push_str(&t);
            s.push('\n');
        };
        line(format!("scenario {} (model {})", self.name, self.model));
        line(format!(
            "training: N={} u1={} fraction_on={:.4} resampled={} sampler_seed={}",
            self.training.n, self.training.u1, self.training.fraction_on, self.training.resampled, self.training.sampler_seed
        ));
        if let Some(t) = self.period {
            line(format!("natural period: {t:.5}"));
        }
        if let Some(d) = &self.demo {
            let m = &d.metrics;
            line(format!(
                "demo run from {:?}: converged={} t={:?} off_fraction={:.4} energy_to_convergence={:.4}",
                d.x0, m.converged, m.convergence_time, m.off_fraction, m.energy_to_convergence
            ));
        }
        if let Some(e) = &self.effectiveness {
            line(format!(
                "effectiveness: {:.4} over {} trials (master seed {}, sigma {})",
                e.fraction, e.trials, e.master_seed, e.sigma
            ));
            if let Some(off) = e.mean_off_fraction {
                line(format!("mean off fraction (converged): {off:.4}"));
            }
            if let (Some(n), Some(off)) = (e.needing_control, e.off_fraction_needing_control) {
                line(format!("mean off fraction over {n} trials needing control: {off:.4}"));
            }
        }
        match &self.analysis {
            AnalysisReport::Bistable => {}
            AnalysisReport::Energy(c) => line(format!(
                "energy over {} start(s): learned median {:.4}, baseline median {:.4}, median ratio {:.4}",
                c.pairs.len(),
                c.median_learned,
                c.median_baseline,
                c.median_ratio
            )),
            AnalysisReport::Phase(p) => {
                for b in &p.curve {
                    line(format!(
                        "u1={}: learned spike {:.4} ({:.2}% decrease), PRC-sign spike {:.4} ({:.2}% decrease)",
                        b.u1, b.learned_spike_time, b.learned_decrease_pct, b.prc_spike_time, b.prc_decrease_pct
                    ));
                }
            }
            AnalysisReport::Desync(d) => {
                line(format!("policy/sign(Z') agreement: {:.4}", d.prc_agreement));
                if let (Some(first), Some(last)) = (d.spread.first(), d.spread.last()) {
                    line(format!(
                        "spread: {:.4} at t={} -> {:.4} at t={} (max {:.4}, half period {:.4} reached at {:?})",
                        first.circular,
                        first.t,
                        last.circular,
                        last.t,
                        d.max_circular,
                        0.5 * d.period,
                        d.half_period_reached_at
                    ));
                }
            }
            AnalysisReport::Sweep(r) => {
                line(format!("sweep ({} trials/cell, master seed {}):", r.trials, r.master_seed));
                let header: Vec<String> = r.taus.iter().map(|t| format!("{t:>7}")).collect();
                line(format!("sigma\\tau {}", header.join(" ")));
                for &sg in &r.sigmas {
                    let row: Vec<String> = r.taus.iter().map(|&t| format!("{:>7.3}", r.fraction(sg, t).unwrap_or(f64::NAN))).collect();
                    line(format!("{sg:>9} {}", row.join(" ")));
                }
            }
        }
        s
    }
}

fn create(dir: Option<&Path>, name: &str) -> Result<Option<BufWriter<File>>> {
    match dir {
        Some(d) => Ok(Some(BufWriter::new(File::create(d.join(name))?))),
        None => Ok(None),
    }
}

fn write_trajectory(dir: Option<&Path>, name: &str, traj: &Trajectory) -> Result<()> {
    if let Some(mut w) = create(dir, name)? {
        traj.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

/// Cached pieces shared between scenario stages.
struct Prepared {
    model: Model,
    cycle: Option<LimitCycle>,
    ts: TrainingSet,
    classifier: Classifier,
    target: Option<TargetBall>,
}

fn prepare(cfg: &ScenarioConfig) -> Result<Prepared> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let model = cfg.build_model().map_err(|e| e.in_stage("model"))?;
    let cycle = match &cfg.cycle {
        Some(c) => Some(natural_cycle(&model, c).map_err(|e| e.in_stage("cycle"))?),
        None => None,
    };
    let ts = train_with(cfg, &model, cycle.as_ref(), cfg.train.u1).map_err(|e| e.in_stage("train"))?;
    let normalizer = Normalizer::fit(&ts.samples, cfg.classifier.normalize).map_err(|e| e.in_stage("normalize"))?;
    let classifier = Classifier::with_normalizer(&ts, cfg.classifier.tau, normalizer).map_err(|e| e.in_stage("classifier"))?;
    let target = build_target(cfg, &ts).map_err(|e| e.in_stage("target"))?;
    Ok(Prepared { model, cycle, ts, classifier, target })
}

/// Trains the scenario's policy and returns it with the fitted classifier.
pub fn train_policy(cfg: &ScenarioConfig) -> Result<(TrainingSet, Classifier)> {
    let p = prepare(cfg)?;
    Ok((p.ts, p.classifier))
}

fn run_options(cfg: &ScenarioConfig, duration: f64, stop: bool) -> Result<RunOptions> {
    let noise = if cfg.noise.sigma > 0.0 { Some(NoiseSpec::new(cfg.noise.sigma, cfg.noise.seed)?) } else { None };
    Ok(RunOptions { dt: cfg.run.dt, duration, noise, stop_on_convergence: stop })
}

/// Runs the full pipeline: train, fit the normalizer, build the classifier,
/// run the closed loop and the scenario analysis, then write artifacts.
///
/// Artifacts go to `out` (or the configured output directory) as they are
/// produced, so a failing stage leaves the earlier files in place.
pub fn run_scenario(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<ScenarioReport> {
    let out = out.map(Path::to_path_buf).or_else(|| cfg.output.clone());
    let dir = out.as_deref();
    if let Some(d) = dir {
        std::fs::create_dir_all(d).map_err(|e| Error::from(e).in_stage("write"))?;
        std::fs::write(d.join("scenario.toml"), cfg.to_toml()).map_err(|e| Error::from(e).in_stage("write"))?;
    }
    let p = prepare(cfg)?;
    if let Some(d) = dir {
        PolicyFile::new(&p.ts, &p.classifier).save(&d.join("policy.json")).map_err(|e| e.in_stage("write"))?;
        if p.classifier.dim() == 2 {
            if let SamplerSpec::UniformBox { lo, hi, .. } = &cfg.train.sampler {
                let grid = decision_region_grid(&p.classifier, (0, 1), [lo[0], lo[1]], [hi[0], hi[1]], [101, 101], &[])
                    .map_err(|e| e.in_stage("region grid"))?;
                let mut w = create(dir, "region_grid.csv")?.unwrap();
                grid.write_csv(&mut w).and_then(|_| Ok(w.flush()?)).map_err(|e| e.in_stage("write"))?;
            }
        }
    }
    let training = TrainingSummary {
        algorithm: p.ts.algorithm,
        n: p.ts.len(),
        u1: p.ts.u_on,
        fraction_on: p.ts.fraction_on(),
        resampled: p.ts.provenance.resampled,
        sampler_seed: cfg.train.sampler.seed(),
    };

    let demo = match (&p.target, &cfg.run.x0) {
        (Some(target), Some(x0)) if !matches!(cfg.analysis, Analysis::NoiseSweep { .. }) => {
            let opts = run_options(cfg, cfg.run.duration, false).map_err(|e| e.in_stage("simulate"))?;
            let (traj, metrics) = run_closed_loop(&p.model, &p.classifier, x0, &opts, target).map_err(|e| e.in_stage("simulate"))?;
            write_trajectory(dir, "trajectory.csv", &traj).map_err(|e| e.in_stage("write"))?;
            Some(DemoRun { x0: x0.clone(), noise: cfg.noise, metrics })
        }
        _ => None,
    };

    let effectiveness_summary = match (&cfg.effectiveness, &p.target) {
        (Some(e), Some(target)) => {
            let plan = plan_from(e, cfg.run.dt, cfg.noise.sigma);
            let report = classifier_effectiveness(&p.model, &p.classifier, &plan, target).map_err(|e| e.in_stage("effectiveness"))?;
            if let Some(mut w) = create(dir, "effectiveness.csv").map_err(|e| e.in_stage("write"))? {
                report.write_csv(&mut w).and_then(|_| Ok(w.flush()?)).map_err(|e| e.in_stage("write"))?;
            }
            let free = if matches!(cfg.analysis, Analysis::Bistable) {
                let plan0 = TrialPlan { sigma: 0.0, ..plan.clone() };
                Some(effectiveness(&p.model, || |_: &[f64]| 0.0, &plan0, target).map_err(|e| e.in_stage("effectiveness"))?)
            } else {
                None
            };
            Some(summarize(&report, plan.sigma, free.as_ref()))
        }
        _ => None,
    };

    let analysis = analyze(cfg, &p, dir).map_err(|e| match e {
        Error::Stage { .. } => e,
        other => other.in_stage("analysis"),
    })?;

    let report = ScenarioReport {
        name: cfg.name.clone(),
        model: p.model.id().to_string(),
        training,
        period: p.cycle.as_ref().map(|c| c.period),
        demo,
        effectiveness: effectiveness_summary,
        analysis,
    };
    if let Some(d) = dir {
        std::fs::write(d.join("report.json"), serde_json::to_string_pretty(&report)?).map_err(|e| Error::from(e).in_stage("write"))?;
        std::fs::write(d.join("report.txt"), report.summary()).map_err(|e| Error::from(e).in_stage("write"))?;
    }
    Ok(report)
}

fn analyze(cfg: &ScenarioConfig, p: &Prepared, dir: Option<&Path>) -> Result<AnalysisReport> {
    match &cfg.analysis {
        Analysis::Bistable => Ok(AnalysisReport::Bistable),
        Analysis::Stabilize { .. } => {
            let c = energy_comparison_with(cfg, p)?;
            if let Some(mut w) = create(dir, "energy.csv")? {
                writeln!(w, "pair,learned,baseline,ratio,learned_converged,baseline_converged")?;
                for (i, e) in c.pairs.iter().enumerate() {
                    writeln!(w, "{i},{},{},{},{},{}", e.learned, e.baseline, e.ratio, e.learned_converged, e.baseline_converged)?;
                }
                w.flush()?;
            }
            Ok(AnalysisReport::Energy(c))
        }
        Analysis::Phase { bounds, prc_sign, prc } => {
            let cycle = p.cycle.as_ref().expect("validated");
            let prc = compute_prc_direct(&p.model, cycle, &(*prc).into()).map_err(|e| e.in_stage("prc"))?;
            if let Some(mut w) = create(dir, "prc.csv")? {
                prc.write_csv(&mut w)?;
                w.flush()?;
            }
            let at_u1 = phase_point(cfg, p, &prc, *prc_sign, cfg.train.u1, Some(&p.classifier), dir)?;
            let mut curve = Vec::with_capacity(bounds.len());
            for &u1 in bounds {
                let point = if u1 == cfg.train.u1 { at_u1.clone() } else { phase_point(cfg, p, &prc, *prc_sign, u1, None, None)? };
                curve.push(point);
            }
            if let Some(mut w) = create(dir, "spike_time_vs_bound.csv")? {
                writeln!(w, "u1,learned_spike_time,learned_decrease_pct,prc_spike_time,prc_decrease_pct")?;
                for b in &curve {
                    writeln!(w, "{},{},{},{},{}", b.u1, b.learned_spike_time, b.learned_decrease_pct, b.prc_spike_time, b.prc_decrease_pct)?;
                }
                w.flush()?;
            }
            Ok(AnalysisReport::Phase(PhaseReport { period: cycle.period, prc_sign: *prc_sign, at_u1, curve }))
        }
        Analysis::Desync { initial_spread, initial_phase, checkpoint, spike_dt, prc } => {
            let cycle = p.cycle.as_ref().expect("validated");
            let Model::CoupledThalamic(pop) = &p.model else {
                return Err(Error::Config("desynchronization needs the coupled_thalamic model".into()));
            };
            let prc = compute_prc_direct(&pop.cell, cycle, &(*prc).into()).map_err(|e| e.in_stage("prc"))?;
            let agreement = validate_desync_policy(&p.classifier, &prc)?;
            let x0 = population_state(&pop.cell, cycle, initial_phase * cycle.period, pop.m, *initial_spread);
            let traj = simulate(&p.model, &x0, |x| p.classifier.decide(x), cfg.run.duration, cfg.run.dt, None).map_err(|e| e.in_stage("simulate"))?;
            let every = ((checkpoint / cfg.run.dt).round() as usize).max(1);
            let mut spread = Vec::new();
            for k in (0..traj.len()).step_by(every) {
                let times = detect_population_spikes(&p.model, &traj.states[k], *spike_dt, 10.0 * cycle.period).map_err(|e| e.in_stage("spread"))?;
                let lin = times.iter().copied().fold(f64::NEG_INFINITY, f64::max) - times.iter().copied().fold(f64::INFINITY, f64::min);
                spread.push(SpreadSample { t: traj.times[k], circular: circular_spread(&times, cycle.period), linear: lin });
            }
            if let Some(mut w) = create(dir, "spread.csv")? {
                writeln!(w, "t,circular,linear")?;
                for s in &spread {
                    writeln!(w, "{},{},{}", s.t, s.circular, s.linear)?;
                }
                w.flush()?;
            }
            if dir.is_some() {
                let mean_traj = Trajectory {
                    times: traj.times.clone(),
                    states: traj.states.iter().map(|x| mean_population_state(x, pop.m)).collect::<Result<_>>()?,
                    controls: traj.controls.clone(),
                };
                write_trajectory(dir, "mean_trajectory.csv", &mean_traj)?;
            }
            let max_circular = spread.iter().map(|s| s.circular).fold(0.0, f64::max);
            let half_period_reached_at = spread.iter().find(|s| s.circular >= 0.5 * cycle.period).map(|s| s.t);
            Ok(AnalysisReport::Desync(DesyncReport { period: cycle.period, prc_agreement: agreement, spread, max_circular, half_period_reached_at }))
        }
        Analysis::NoiseSweep { sigmas, taus, trials, .. } => {
            let result = sweep_with(cfg, p, sigmas, taus, *trials, dir)?;
            if let Some(mut w) = create(dir, "sweep.csv")? {
                result.write_csv(&mut w)?;
                w.flush()?;
            }
            Ok(AnalysisReport::Sweep(result))
        }
    }
}

/// Spike time under a controller started at the spike point of the cycle.
fn controlled_spike<C: FnMut(&[f64]) -> f64>(model: &Model, cycle: &LimitCycle, controller: C, dt: f64, duration: f64) -> Result<(Trajectory, f64)> {
    let x0 = cycle.points[0].clone();
    let traj = simulate(model, &x0, controller, duration, dt, None)?;
    let (lo, hi) = cycle.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x[0]), hi.max(x[0])));
    let t = controlled_spike_time(&traj, 0, 0.5 * (lo + hi)).ok_or(Error::Timeout { timeout: duration })?;
    Ok((traj, t))
}

fn phase_point(
    cfg: &ScenarioConfig,
    p: &Prepared,
    prc: &Prc,
    sign: f64,
    u1: f64,
    trained: Option<&Classifier>,
    dir: Option<&Path>,
) -> Result<BoundPoint> {
    let cycle = p.cycle.as_ref().expect("validated");
    let pct = |t: f64| 100.0 * (1.0 - t / cycle.period);
    let (learned_t, prc_t) = if u1 == 0.0 {
        let (_, t) = controlled_spike(&p.model, cycle, |_| 0.0, cfg.run.dt, cfg.run.duration)?;
        (t, t)
    } else {
        let retrained;
        let classifier = match trained {
            Some(c) => c,
            None => {
                let ts = train_with(cfg, &p.model, Some(cycle), u1).map_err(|e| e.in_stage("train"))?;
                let n = Normalizer::fit(&ts.samples, cfg.classifier.normalize)?;
                retrained = Classifier::with_normalizer(&ts, cfg.classifier.tau, n)?;
                &retrained
            }
        };
        let (lt, l) = controlled_spike(&p.model, cycle, |x| classifier.decide(x), cfg.run.dt, cfg.run.duration).map_err(|e| e.in_stage("simulate"))?;
        let (pt, b) = controlled_spike(&p.model, cycle, prc_feedback(prc, u1, sign), cfg.run.dt, cfg.run.duration).map_err(|e| e.in_stage("simulate"))?;
        write_trajectory(dir, "trajectory.csv", &lt)?;
        write_trajectory(dir, "prc_trajectory.csv", &pt)?;
        (l, b)
    };
    Ok(BoundPoint {
        u1,
        learned_spike_time: learned_t,
        learned_decrease_pct: pct(learned_t),
        prc_spike_time: prc_t,
        prc_decrease_pct: pct(prc_t),
    })
}

/// Percent spike-time decrease of the learned and PRC-sign controllers for each bound.
pub fn spike_time_vs_bound(cfg: &ScenarioConfig, bounds: &[f64]) -> Result<Vec<BoundPoint>> {
    let Analysis::Phase { prc_sign, prc, .. } = &cfg.analysis else {
        return Err(Error::Config("spike_time_vs_bound needs a phase scenario".into()));
    };
    let p = prepare(cfg)?;
    let cycle = p.cycle.as_ref().expect("validated");
    let prc = compute_prc_direct(&p.model, cycle, &(*prc).into()).map_err(|e| e.in_stage("prc"))?;
    bounds.iter().map(|&u1| phase_point(cfg, &p, &prc, *prc_sign, u1, None, None)).collect()
}

fn energy_comparison_with(cfg: &ScenarioConfig, p: &Prepared) -> Result<EnergyComparison> {
    let Analysis::Stabilize { baseline, energy_ics, energy_window } = &cfg.analysis else {
        return Err(Error::Config("energy comparison needs a stabilization scenario".into()));
    };
    let target = p.target.as_ref().expect("validated");
    let eff = cfg.effectiveness.as_ref().expect("validated");
    let mut starts: Vec<Vec<f64>> = cfg.run.x0.iter().cloned().collect();
    let plan = plan_from(eff, cfg.run.dt, 0.0);
    starts.extend((0..*energy_ics).map(|i| trial_setup(&plan, i).1));
    if starts.is_empty() {
        return Err(Error::Config("energy comparison needs run.x0 or energy_ics > 0".into()));
    }
    let (duration, stop) = match energy_window {
        Some(w) => (*w, false),
        None => (cfg.run.duration, true),
    };
    let opts = RunOptions { dt: cfg.run.dt, duration, noise: None, stop_on_convergence: stop };
    let mut pairs = Vec::with_capacity(starts.len());
    for x0 in starts {
        let (_, m) = run_closed_loop(&p.model, &p.classifier, &x0, &opts, target)?;
        let learned = if stop { m.energy_to_convergence } else { m.control_energy };
        let (baseline_energy, baseline_converged) = match baseline {
            Baseline::Lyapunov => {
                let Model::Lorenz(lz) = &p.model else {
                    return Err(Error::Config("the Lyapunov baseline is defined for the Lorenz model".into()));
                };
                let (_, b) = run_controller(&p.model, lyapunov_controller(lz), &x0, &opts, target)?;
                (if stop { b.energy_to_convergence } else { b.control_energy }, b.converged)
            }
            Baseline::FullyActuated { gain } => {
                let r = run_fully_actuated(&p.model, &x0, &target.center, *gain, cfg.run.dt, duration, |x| stop && target.contains(x))?;
                let converged = r.convergence_time.is_some() || r.trajectory.last_state().is_some_and(|x| target.contains(x));
                (r.energy, converged)
            }
        };
        pairs.push(EnergyPair {
            x0,
            learned,
            baseline: baseline_energy,
            ratio: baseline_energy / learned,
            learned_converged: m.converged,
            baseline_converged,
        });
    }
    let mut l: Vec<f64> = pairs.iter().map(|e| e.learned).collect();
    let mut b: Vec<f64> = pairs.iter().map(|e| e.baseline).collect();
    let mut r: Vec<f64> = pairs.iter().map(|e| e.ratio).collect();
    Ok(EnergyComparison {
        baseline: baseline.clone(),
        window: *energy_window,
        median_learned: median(&mut l),
        median_baseline: median(&mut b),
        median_ratio: median(&mut r),
        pairs,
    })
}

/// Learned versus model-based control energy from the same starts.
pub fn energy_comparison(cfg: &ScenarioConfig) -> Result<EnergyComparison> {
    let p = prepare(cfg)?;
    energy_comparison_with(cfg, &p)
}

fn sweep_with(cfg: &ScenarioConfig, p: &Prepared, sigmas: &[f64], taus: &[f64], trials: usize, dir: Option<&Path>) -> Result<SweepResult> {
    let Analysis::NoiseSweep { master_seed, corruption_seed, ic_lo, ic_hi, duration, .. } = &cfg.analysis else {
        return Err(Error::Config("noise_sweep needs a noise-sweep scenario".into()));
    };
    let target = p.target.as_ref().ok_or_else(|| Error::Config("noise sweep needs a target".into()))?;
    let mut per_trial = create(dir, "sweep_trials.csv")?;
    if let Some(w) = per_trial.as_mut() {
        writeln!(w, "sigma,tau,trial,seed,converged,convergence_time")?;
    }
    let mut cells = Vec::with_capacity(sigmas.len() * taus.len());
    for (i, &sigma) in sigmas.iter().enumerate() {
        let noisy = corrupt_training_set(&p.ts, &NoiseSpec::new(sigma, *corruption_seed)?);
        for (j, &tau) in taus.iter().enumerate() {
            let n = Normalizer::fit(&noisy.samples, cfg.classifier.normalize)?;
            let c = Classifier::with_normalizer(&noisy, tau, n)?;
            let cell_seed = child_seed(*master_seed, (i * taus.len() + j) as u64);
            let plan = TrialPlan { trials, master_seed: cell_seed, ic_lo: ic_lo.clone(), ic_hi: ic_hi.clone(), dt: cfg.run.dt, duration: *duration, sigma };
            let r = classifier_effectiveness(&p.model, &c, &plan, target)?;
            if let Some(w) = per_trial.as_mut() {
                for t in &r.trials {
                    let ct = t.convergence_time.map(|v| v.to_string()).unwrap_or_default();
                    writeln!(w, "{sigma},{tau},{},{},{},{ct}", t.trial, t.seed, t.converged)?;
                }
            }
            cells.push(SweepCell { sigma, tau, cell_seed, fraction: r.fraction });
        }
    }
    if let Some(mut w) = per_trial {
        w.flush()?;
    }
    Ok(SweepResult { sigmas: sigmas.to_vec(), taus: taus.to_vec(), trials, master_seed: *master_seed, corruption_seed: *corruption_seed, cells })
}

/// Effectiveness over every `(sigma, tau)` pair for a noise-sweep scenario.
///
/// Each sigma corrupts the stored training states once; each cell derives its
/// own master seed from the sweep seed, and each trial its own noise seed.
pub fn noise_sweep(base: &ScenarioConfig, sigmas: &[f64], taus: &[f64], trials: usize) -> Result<SweepResult> {
    let p = prepare(base)?;
    sweep_with(base, &p, sigmas, taus, trials, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_validates_and_round_trips_through_toml() {
        for name in SCENARIOS {
            let cfg = builtin(name).unwrap();
            cfg.validate().unwrap();
            let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
    }

    #[test]
    fn unknown_names_are_rejected() {
        assert!(builtin("pendulum").is_err());
        let mut cfg = builtin("duffing").unwrap();
        cfg.name = "pendulum".into();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.name = "custom".into();
        cfg.validate().unwrap();
    }

    #[test]
    fn non_positive_hyperparameters_are_rejected() {
        let mut cfg = builtin("duffing").unwrap();
        cfg.classifier.tau = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = builtin("duffing").unwrap();
        cfg.train.probe_dt = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let text = builtin("duffing").unwrap().to_toml().replace("[run]", "[run]\nspeed = 3");
        assert!(ScenarioConfig::from_toml(&text).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn sweep_cell_lookup() {
        let r = SweepResult {
            sigmas: vec![0.2],
            taus: vec![0.1, 0.4],
            trials: 1,
            master_seed: 0,
            corruption_seed: 0,
            cells: vec![SweepCell { sigma: 0.2, tau: 0.1, cell_seed: 1, fraction: 0.5 }, SweepCell { sigma: 0.2, tau: 0.4, cell_seed: 2, fraction: 1.0 }],
        };
        assert_eq!(r.fraction(0.2, 0.4), Some(1.0));
        assert_eq!(r.fraction(0.3, 0.4), None);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "sigma,tau,cell_seed,fraction\n0.2,0.1,1,0.5\n0.2,0.4,2,1\n");
    }
}
