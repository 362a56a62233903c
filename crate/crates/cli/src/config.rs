//! Run configuration: profiles, JSON loading and flag overrides.

use std::path::{Path, PathBuf};

use dyndiff::denoiser::{Activation, DenoiserConfig, TrainConfig};
use dyndiff::diffusion::ScheduleParams;
use dyndiff::lti::LtiSystem;
use dyndiff::projector::{ExperimentConfig, ProjectionRule};
use dyndiff::rng::{derive_seed, tag};
use dyndiff::sampler::Algorithm;
use dyndiff::tasks::{LqrDatasetConfig, TaskFamily, WaypointDatasetConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Full-scale settings: 10,000 trajectories, 30,000 steps, L = 1000.
    Paper,
    /// Reduced settings that finish in minutes on one core.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub dt: f64,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub time_embed_dim: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    /// Derived from `seed` during resolution.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub algorithms: Vec<Algorithm>,
    /// Test conditions drawn from the same task distribution as training.
    pub conditions: usize,
    pub samples_per_condition: usize,
    /// Leading samples per algorithm that keep per-step diagnostics; for the
    /// projected algorithms their iterates are stored as well.
    pub traced: usize,
    /// Train one denoiser per algorithm instead of sharing one.
    pub per_algorithm_training: bool,
    /// Scaled projection applied after every denoising step.
    pub projection: ProjectionRule,
    /// Derived from `seed` during resolution.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub plots: bool,
}

/// Everything a run needs. Sub-seeds are derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub family: TaskFamily,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub system: SystemConfig,
    pub lqr: LqrDatasetConfig,
    pub waypoint: WaypointDatasetConfig,
    pub schedule: ScheduleParams,
    pub denoiser: NetworkConfig,
    pub training: TrainConfig,
    pub experiment: ExperimentConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub profile: Option<Profile>,
    pub family: Option<TaskFamily>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub per_algorithm_training: bool,
}

impl RunConfig {
    pub fn profile(profile: Profile, family: TaskFamily) -> Self {
        let paper = profile == Profile::Paper;
        let (count, epochs, schedule) = if paper {
            (10_000, 30_000, ScheduleParams { k: 0.001, steps: 1000 })
        } else {
            (2_000, 2_000, ScheduleParams { k: 0.005, steps: 200 })
        };
        let lqr = LqrDatasetConfig {
            count,
            ..LqrDatasetConfig::default()
        };
        let waypoint = WaypointDatasetConfig {
            count,
            waypoint_times: (!paper).then(|| vec![5, 33]),
            ..WaypointDatasetConfig::default()
        };
        let (noise_std, length) = match family {
            TaskFamily::Lqr => (1.0, 100),
            TaskFamily::Waypoint => (0.0, 200),
        };
        Self {
            profile,
            family,
            seed: 0,
            out: PathBuf::from("out"),
            threads: None,
            system: SystemConfig { dt: 0.1, noise_std },
            lqr,
            waypoint,
            schedule,
            denoiser: NetworkConfig {
                time_embed_dim: 64,
                hidden_dim: 256,
                hidden_layers: 3,
                activation: Activation::Silu,
                seed: 0,
            },
            training: TrainConfig {
                epochs,
                ..TrainConfig::default()
            },
            experiment: ExperimentConfig {
                length,
                ..ExperimentConfig::default()
            },
            sampler: SamplerConfig {
                algorithms: Algorithm::ALL.to_vec(),
                conditions: 100,
                samples_per_condition: 10,
                traced: 100,
                per_algorithm_training: false,
                projection: ProjectionRule::Residual,
                seed: 0,
            },
            eval: EvalConfig { plots: true },
        }
    }

    /// Profile defaults, then the config file, then flags; the result is
    /// validated and its sub-seeds derived.
    pub fn load(ov: &Overrides) -> Result<Self, CliError> {
        let file = match &ov.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::io(format!("reading config {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?
            }
            None => Value::Object(Default::default()),
        };
        build(file, ov)
    }

    /// Fills every sub-seed from the master seed.
    pub fn resolve(&mut self) {
        self.lqr.seed = derive_seed(self.seed, tag::TRAIN_SET);
        self.waypoint.seed = derive_seed(self.seed, tag::TRAIN_SET);
        self.waypoint.solver.seed = derive_seed(self.seed, tag::SOLVER);
        self.experiment.seed = derive_seed(self.seed, tag::EXPERIMENT);
        self.denoiser.seed = derive_seed(self.seed, tag::INIT);
        self.training.seed = derive_seed(self.seed, tag::TRAINING);
        self.sampler.seed = derive_seed(self.seed, tag::SAMPLING);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::validation(msg));
        if !(self.system.dt.is_finite() && self.system.dt > 0.0) {
            return bad(format!("system.dt must be positive, got {}", self.system.dt));
        }
        if !(self.system.noise_std.is_finite() && self.system.noise_std >= 0.0) {
            return bad(format!("system.noise_std must be non-negative, got {}", self.system.noise_std));
        }
        if self.family == TaskFamily::Waypoint && self.system.noise_std != 0.0 {
            return bad("the waypoint family needs a noiseless system (system.noise_std = 0)".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        if self.horizon() == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.dataset_count() == 0 || self.sampler.conditions == 0 || self.sampler.samples_per_condition == 0 {
            return bad("dataset count, test conditions and samples per condition must be positive".into());
        }
        if self.sampler.algorithms.is_empty() {
            return bad("sampler.algorithms is empty".into());
        }
        if self.training.epochs == 0 || self.training.batch_size == 0 {
            return bad("training epochs and batch size must be positive".into());
        }
        self.schedule
            .build()
            .map_err(|e| CliError::validation(format!("schedule: {e}")))?;
        let sys = self.system()?;
        self.denoiser_config(&sys)
            .validate()
            .map_err(|e| CliError::validation(format!("denoiser: {e}")))?;
        match self.family {
            TaskFamily::Lqr => {
                let n = sys.state_dim();
                if self.lqr.q_diag.len() != n || self.lqr.r_diag.len() != sys.input_dim() {
                    return bad(format!("lqr.q_diag needs {n} entries and lqr.r_diag {}", sys.input_dim()));
                }
            }
            TaskFamily::Waypoint => {
                if let Some(times) = &self.waypoint.waypoint_times {
                    if times.len() > self.waypoint.v_max || times.iter().any(|&t| t == 0 || t >= self.waypoint.horizon) {
                        return bad("waypoint.waypoint_times must lie in 1..horizon and fit in v_max".into());
                    }
                }
            }
        }
        Ok(())
    }

    pub fn system(&self) -> Result<LtiSystem, CliError> {
        LtiSystem::double_integrator(self.system.dt, self.system.noise_std)
            .map_err(|e| CliError::validation(format!("system: {e}")))
    }

    pub fn horizon(&self) -> usize {
        match self.family {
            TaskFamily::Lqr => self.lqr.horizon,
            TaskFamily::Waypoint => self.waypoint.horizon,
        }
    }

    pub fn dataset_count(&self) -> usize {
        match self.family {
            TaskFamily::Lqr => self.lqr.count,
            TaskFamily::Waypoint => self.waypoint.count,
        }
    }

    pub fn denoiser_config(&self, sys: &LtiSystem) -> DenoiserConfig {
        let n = sys.state_dim();
        let cond_dim = match self.family {
            TaskFamily::Lqr => 2 * n,
            TaskFamily::Waypoint => self.waypoint.layout(n).len(),
        };
        DenoiserConfig {
            input_dim: sys.dims(self.horizon()).flat_len(),
            cond_dim,
            time_embed_dim: self.denoiser.time_embed_dim,
            hidden_dim: self.denoiser.hidden_dim,
            hidden_layers: self.denoiser.hidden_layers,
            activation: self.denoiser.activation,
            seed: self.denoiser.seed,
        }
    }

    /// Test-set generator: the training distribution with its own seed.
    pub fn test_lqr(&self) -> LqrDatasetConfig {
        LqrDatasetConfig {
            count: self.sampler.conditions,
            seed: derive_seed(self.seed, tag::TEST_SET),
            ..self.lqr.clone()
        }
    }

    pub fn test_waypoint(&self) -> WaypointDatasetConfig {
        WaypointDatasetConfig {
            count: self.sampler.conditions,
            seed: derive_seed(self.seed, tag::TEST_SET),
            ..self.waypoint.clone()
        }
    }

    pub fn dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }

    pub fn checkpoint_dir(&self, alg: Algorithm) -> PathBuf {
        if self.sampler.per_algorithm_training {
            self.out.join(format!("checkpoint-{alg}"))
        } else {
            self.out.join("checkpoint")
        }
    }

    pub fn samples_dir(&self, alg: Algorithm) -> PathBuf {
        self.out.join("samples").join(alg.as_str())
    }
}

/// Recursive object merge; non-object values in `patch` replace `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses a config document with no flag overrides.
pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    let value: Value = serde_json::from_str(text).map_err(|e| CliError::validation(format!("config: {e}")))?;
    build(value, &Overrides::default())
}

fn pick<T: serde::de::DeserializeOwned>(file: &Value, key: &str) -> Result<Option<T>, CliError> {
    file.get(key)
        .cloned()
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| CliError::validation(format!("config key {key}: {e}")))
}

fn build(file: Value, ov: &Overrides) -> Result<RunConfig, CliError> {
    if !file.is_object() {
        return Err(CliError::validation("config must be a JSON object"));
    }
    let profile = match ov.profile {
        Some(p) => p,
        None => pick(&file, "profile")?.unwrap_or(Profile::Desk),
    };
    let family = match ov.family {
        Some(f) => f,
        None => pick(&file, "family")?.unwrap_or(TaskFamily::Lqr),
    };
    let mut merged = serde_json::to_value(RunConfig::profile(profile, family)).expect("config serializes");
    merge(&mut merged, file);
    let mut cfg: RunConfig =
        serde_json::from_value(merged).map_err(|e| CliError::validation(format!("config: {e}")))?;
    cfg.profile = profile;
    cfg.family = family;
    if let Some(seed) = ov.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &ov.out {
        cfg.out = out.clone();
    }
    if ov.threads.is_some() {
        cfg.threads = ov.threads;
    }
    if ov.per_algorithm_training {
        cfg.sampler.per_algorithm_training = true;
    }
    cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_resolved(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    dyndiff::io::write_json(&dir.join("resolved_config.json"), cfg).map_err(CliError::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_pin_their_scales() {
        let paper = RunConfig::profile(Profile::Paper, TaskFamily::Lqr);
        assert_eq!(paper.lqr.count, 10_000);
        assert_eq!(paper.training.epochs, 30_000);
        assert_eq!(paper.training.batch_size, 64);
        assert_eq!(paper.schedule.steps, 1000);
        assert_eq!(paper.schedule.k, 0.001);
        assert_eq!(paper.experiment.length, 100);
        let desk = RunConfig::profile(Profile::Desk, TaskFamily::Lqr);
        assert_eq!((desk.lqr.count, desk.training.epochs, desk.schedule.steps), (2_000, 2_000, 200));
        let wp = RunConfig::profile(Profile::Desk, TaskFamily::Waypoint);
        assert_eq!(wp.system.noise_std, 0.0);
    }

    #[test]
    fn empty_document_is_the_desk_profile() {
        let mut expect = RunConfig::profile(Profile::Desk, TaskFamily::Lqr);
        expect.resolve();
        assert_eq!(parse("{}").unwrap(), expect);
    }

    #[test]
    fn partial_documents_merge_into_defaults() {
        let cfg = parse(r#"{"seed": 7, "training": {"epochs": 5}, "sampler": {"algorithms": ["alg1"]}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.training.epochs, 5);
        assert_eq!(cfg.training.batch_size, 64);
        assert_eq!(cfg.sampler.algorithms, vec![Algorithm::Alg1]);
        assert_eq!(cfg.training.seed, derive_seed(7, tag::TRAINING));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(parse(r#"{"sede": 1}"#).is_err());
        assert!(parse(r#"{"training": {"epochs": 0}}"#).is_err());
        assert!(parse(r#"{"family": "waypoint", "system": {"noise_std": 1.0}}"#).is_err());
        assert!(parse(r#"{"schedule": {"k": 0.5, "steps": 200}}"#).is_err());
        assert!(parse("[1]").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = parse(r#"{"family": "waypoint", "seed": 3}"#).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(parse(&text).unwrap(), cfg);
    }
}
