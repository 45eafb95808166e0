use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bangbang::baselines::{compute_prc_direct, PrcOptions};
use bangbang::control::{classifier_effectiveness, run_closed_loop, RunOptions, TargetBall, TrialPlan};
use bangbang::dynamics::{Model, VectorField};
use bangbang::experiments::{
    builtin, natural_cycle, noise_sweep, run_scenario, train_policy, Analysis, PolicyFile, ScenarioConfig, SCENARIOS,
};
use bangbang::integrate::{simulate, NoiseSpec};
use bangbang::train::{Algorithm, SamplerSpec};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bangbang", version, about = "Train and evaluate bang-bang feedback policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write it as JSON.
    Train(Common),
    /// Run one closed loop and write the trajectory CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Policy file from `train`; trains from the scenario when omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Initial state, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
    },
    /// Fraction of random initial conditions that reach the target.
    Effectiveness {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Effectiveness over a grid of noise levels and bandwidths.
    SweepNoise {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<f64>>,
    },
    /// Phase response curve of an oscillator model.
    Prc {
        #[arg(long, default_value = "thalamic")]
        model: String,
        #[arg(long, default_value_t = 256)]
        phases: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Built-in and file-based scenarios.
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Subcommand)]
enum ScenarioAction {
    /// List built-in scenarios.
    List,
    /// Print a built-in scenario as a config file.
    Show { name: String },
    /// Run a built-in scenario or a config file.
    Run {
        /// Scenario name or path to a TOML config.
        target: String,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct Common {
    /// Base scenario (name or TOML file). Defaults to the scenario of `--model`.
    #[arg(long)]
    scenario: Option<String>,
    /// Model id; selects its default scenario.
    #[arg(long)]
    model: Option<String>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    algorithm: Option<u8>,
    /// Number of training samples.
    #[arg(long)]
    n: Option<usize>,
    /// Closed-loop integration step.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    probe_dt: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    u1: Option<f64>,
    /// Measurement noise level.
    #[arg(long)]
    sigma: Option<f64>,
    /// Training sampler seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise_seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    duration: Option<f64>,
    /// Output file or directory, depending on the command.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn scenario_for_model(model: &str) -> Result<&'static str> {
    Ok(match model {
        "duffing" => "duffing",
        "reduced_hh" => "reduced_hh",
        "thalamic" => "thalamic_phase",
        "coupled_thalamic" => "desync",
        "lorenz" => "lorenz",
        other => bail!("unknown model `{other}`"),
    })
}

fn load_scenario(spec: &str) -> Result<ScenarioConfig> {
    if SCENARIOS.contains(&spec) {
        return Ok(builtin(spec)?);
    }
    let path = Path::new(spec);
    if path.exists() {
        return ScenarioConfig::load(path).with_context(|| format!("reading {}", path.display()));
    }
    bail!("`{spec}` is neither a built-in scenario ({}) nor a file", SCENARIOS.join(", "))
}

impl Overrides {
    fn apply(&self, cfg: &mut ScenarioConfig) -> Result<()> {
        if let Some(a) = self.algorithm {
            cfg.train.algorithm = Algorithm::try_from(a).map_err(|e| anyhow::anyhow!("{e}"))?;
        }
        if let Some(n) = self.n {
            cfg.train.n = n;
        }
        if let Some(dt) = self.dt {
            cfg.run.dt = dt;
        }
        if let Some(dt) = self.probe_dt {
            cfg.train.probe_dt = dt;
        }
        if let Some(t) = self.tau {
            cfg.classifier.tau = t;
        }
        if let Some(u) = self.u1 {
            cfg.train.u1 = u;
        }
        if let Some(s) = self.sigma {
            cfg.noise.sigma = s;
        }
        if let Some(s) = self.noise_seed {
            cfg.noise.seed = s;
        }
        if let Some(s) = self.seed {
            match &mut cfg.train.sampler {
                SamplerSpec::UniformBox { seed, .. } | SamplerSpec::OnLimitCycle { seed, .. } => *seed = s,
            }
        }
        if let Some(t) = self.trials {
            if let Some(e) = cfg.effectiveness.as_mut() {
                e.trials = t;
            }
            if let Analysis::NoiseSweep { trials, .. } = &mut cfg.analysis {
                *trials = t;
            }
        }
        if let Some(d) = self.duration {
            cfg.run.duration = d;
        }
        cfg.validate()?;
        Ok(())
    }
}

impl Common {
    fn config(&self) -> Result<ScenarioConfig> {
        let base = match (&self.scenario, &self.model) {
            (Some(s), _) => s.clone(),
            (None, Some(m)) => scenario_for_model(m)?.to_string(),
            (None, None) => "duffing".to_string(),
        };
        let mut cfg = load_scenario(&base)?;
        self.overrides.apply(&mut cfg)?;
        Ok(cfg)
    }
}

fn writer(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn policy_for(cfg: &ScenarioConfig, path: Option<&Path>) -> Result<PolicyFile> {
    match path {
        Some(p) => Ok(PolicyFile::load(p).with_context(|| format!("reading policy {}", p.display()))?),
        None => {
            let (ts, c) = train_policy(cfg)?;
            Ok(PolicyFile::new(&ts, &c))
        }
    }
}

fn target_for(cfg: &ScenarioConfig, policy: &PolicyFile) -> Result<Option<TargetBall>> {
    let Some(t) = &cfg.target else { return Ok(None) };
    let mut ball = TargetBall::new(t.center.clone(), t.radius)?;
    if let Some(mode) = t.normalize {
        ball.normalizer = Some(bangbang::classify::Normalizer::fit(&policy.training_set.samples, mode)?);
    }
    Ok(Some(ball))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.config()?;
            let (ts, c) = train_policy(&cfg)?;
            let out = common.overrides.out.unwrap_or_else(|| PathBuf::from("policy.json"));
            PolicyFile::new(&ts, &c).save(&out)?;
            println!("trained {} samples ({:.4} labelled u_on) -> {}", ts.len(), ts.fraction_on(), out.display());
        }
        Command::Simulate { common, policy, x0 } => {
            let cfg = common.config()?;
            let model = cfg.build_model()?;
            let policy = policy_for(&cfg, policy.as_deref())?;
            let classifier = policy.classifier()?;
            let x0 = match x0.or_else(|| cfg.run.x0.clone()) {
                Some(x) => x,
                None => match &cfg.cycle {
                    Some(c) if model.population() == 1 => natural_cycle(&model, c)?.points[0].clone(),
                    _ => bail!("pass --x0"),
                },
            };
            let noise = if cfg.noise.sigma > 0.0 { Some(NoiseSpec::new(cfg.noise.sigma, cfg.noise.seed)?) } else { None };
            let traj = match target_for(&cfg, &policy)? {
                Some(target) => {
                    let opts = RunOptions { dt: cfg.run.dt, duration: cfg.run.duration, noise, stop_on_convergence: false };
                    let (traj, m) = run_closed_loop(&model, &classifier, &x0, &opts, &target)?;
                    println!(
                        "converged={} t={:?} off_fraction={:.4} energy={:.4}",
                        m.converged, m.convergence_time, m.off_fraction, m.control_energy
                    );
                    traj
                }
                None => simulate(&model, &x0, |x| classifier.decide(x), cfg.run.duration, cfg.run.dt, noise.as_ref())?,
            };
            let out = common.overrides.out.unwrap_or_else(|| PathBuf::from("trajectory.csv"));
            let mut w = writer(&out)?;
            traj.write_csv(&mut w)?;
            w.flush()?;
            println!("{} samples -> {}", traj.len(), out.display());
        }
        Command::Effectiveness { common, policy } => {
            let cfg = common.config()?;
            let Some(e) = &cfg.effectiveness else { bail!("scenario `{}` has no effectiveness section", cfg.name) };
            let model = cfg.build_model()?;
            let policy = policy_for(&cfg, policy.as_deref())?;
            let classifier = policy.classifier()?;
            let target = target_for(&cfg, &policy)?.expect("validated");
            let plan = TrialPlan {
                trials: e.trials,
                master_seed: e.master_seed,
                ic_lo: e.ic_lo.clone(),
                ic_hi: e.ic_hi.clone(),
                dt: cfg.run.dt,
                duration: e.duration,
                sigma: cfg.noise.sigma,
            };
            let r = classifier_effectiveness(&model, &classifier, &plan, &target)?;
            println!("effectiveness {:.4} over {} trials (master seed {})", r.fraction, plan.trials, plan.master_seed);
            if let Some(out) = common.overrides.out {
                let mut w = writer(&out)?;
                r.write_csv(&mut w)?;
                w.flush()?;
            }
        }
        Command::SweepNoise { common, sigmas, taus } => {
            let mut common = common;
            if common.scenario.is_none() && common.model.as_deref().is_none_or(|m| m == "duffing") {
                common.scenario = Some("duffing_noise".into());
            }
            let cfg = common.config()?;
            let Analysis::NoiseSweep { sigmas: s0, taus: t0, trials, .. } = &cfg.analysis else {
                bail!("scenario `{}` is not a noise sweep", cfg.name)
            };
            let sigmas = sigmas.unwrap_or_else(|| s0.clone());
            let taus = taus.unwrap_or_else(|| t0.clone());
            let r = noise_sweep(&cfg, &sigmas, &taus, *trials)?;
            for c in &r.cells {
                println!("sigma={} tau={} effectiveness={:.4}", c.sigma, c.tau, c.fraction);
            }
            if let Some(out) = common.overrides.out {
                let mut w = writer(&out)?;
                r.write_csv(&mut w)?;
                w.flush()?;
            }
        }
        Command::Prc { model, phases, dt, out } => {
            let cfg = builtin(scenario_for_model(&model)?)?;
            let Some(section) = &cfg.cycle else { bail!("model `{model}` has no limit cycle configured") };
            let m = Model::from_id(&model)?;
            let cycle = natural_cycle(&m, section)?;
            let prc = match &m {
                Model::CoupledThalamic(p) => compute_prc_direct(&p.cell, &cycle, &PrcOptions { n_phases: phases, dt, ..PrcOptions::default() })?,
                other => compute_prc_direct(other, &cycle, &PrcOptions { n_phases: phases, dt, ..PrcOptions::default() })?,
            };
            println!("period {:.5}", cycle.period);
            let out = out.unwrap_or_else(|| PathBuf::from("prc.csv"));
            let mut w = writer(&out)?;
            prc.write_csv(&mut w)?;
            w.flush()?;
            println!("{} phases -> {}", prc.phases.len(), out.display());
        }
        Command::Scenario { action } => match action {
            ScenarioAction::List => {
                for name in SCENARIOS {
                    let cfg = builtin(name)?;
                    println!("{name:<16} model={}", cfg.model.id);
                }
            }
            ScenarioAction::Show { name } => print!("{}", builtin(&name)?.to_toml()),
            ScenarioAction::Run { target, overrides } => {
                let mut cfg = load_scenario(&target)?;
                overrides.apply(&mut cfg)?;
                let out = overrides.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
                let report = run_scenario(&cfg, Some(&out))?;
                print!("{}", report.summary());
                println!("artifacts in {}", out.display());
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
