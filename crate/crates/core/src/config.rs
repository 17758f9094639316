//! TOML system and scenario files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::consensus::SharedMeasurement;
use crate::defense::{AgentConfig, StaticDetectorConfig};
use crate::error::{Error, Result};
use crate::game::{Detector, EnvConfig};
use crate::threat::{AttackSchedule, AttackStage, StageTrigger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenderKind {
    Static,
    Dqn,
}

impl DefenderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DefenderKind::Static => "static",
            DefenderKind::Dqn => "dqn",
        }
    }
}

/// One attack stage as written in a scenario file. DG numbers are one-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub trigger: StageTrigger,
    pub dgs: Vec<usize>,
    pub offsets: SharedMeasurement,
}

/// Offline pretraining schedule for the DQN defender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub episodes: usize,
    /// Simulated length of each pretraining episode (s).
    pub episode_seconds: f64,
    /// Share of episodes with no attack at all.
    pub benign_fraction: f64,
    /// Window for the injection onset inside an episode (s).
    pub onset_min: f64,
    pub onset_max: f64,
    /// Gradient steps averaged when checking for a loss plateau.
    pub plateau_window: usize,
    /// Relative improvement between consecutive windows below which training stops.
    pub plateau_tolerance: f64,
    pub max_offline_steps: usize,
    /// Largest injected frequency offset (rad/s).
    pub omega_offset_max: f64,
    /// Largest injected offset on the power-share channels.
    pub share_offset_max: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            episodes: 24,
            episode_seconds: 4.0,
            benign_fraction: 0.25,
            onset_min: 0.3,
            onset_max: 1.5,
            plateau_window: 200,
            plateau_tolerance: 0.02,
            max_offline_steps: 4000,
            omega_offset_max: 0.1,
            share_offset_max: 0.04,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.plateau_window == 0 {
            return Err(Error::InvalidParameter("pretraining needs at least one episode and a positive plateau window".into()));
        }
        if !(self.episode_seconds > 0.0) {
            return Err(Error::InvalidParameter("pretraining episode length must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.benign_fraction) {
            return Err(Error::InvalidParameter("benign fraction must lie in [0, 1]".into()));
        }
        if !(self.onset_min >= 0.0 && self.onset_min <= self.onset_max && self.onset_max < self.episode_seconds) {
            return Err(Error::InvalidParameter("injection onset window must lie inside the episode".into()));
        }
        if !(self.omega_offset_max > 0.0 && self.share_offset_max > 0.0) {
            return Err(Error::InvalidParameter("pretraining offsets must be positive".into()));
        }
        if !(self.plateau_tolerance >= 0.0) {
            return Err(Error::InvalidParameter("plateau tolerance must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Scenario file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    /// System file, relative to the scenario file.
    pub system: PathBuf,
    pub defender: DefenderKind,
    /// Simulated run length (s).
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Attack-free run used to reach the operating point before the scenario starts (s).
    #[serde(default = "default_settle")]
    pub settle: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub static_detector: StaticDetectorConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub stages: Vec<StageSpec>,
}

fn default_settle() -> f64 {
    3.0
}

/// A scenario with its system file resolved and validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub env: EnvConfig,
    pub schedule: AttackSchedule,
    pub defender: DefenderKind,
    pub duration: f64,
    pub seed: u64,
    pub settle: f64,
    pub output: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub static_detector: StaticDetectorConfig,
    pub agent: AgentConfig,
    pub pretrain: PretrainConfig,
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads a system file. Missing keys fall back to the four-DG test system.
pub fn load_system(path: &Path) -> Result<EnvConfig> {
    let cfg: EnvConfig = parse_toml(&read(path)?, path)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_system(text: &str) -> Result<EnvConfig> {
    let cfg: EnvConfig = parse_toml(text, Path::new("<system>"))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ScenarioSpec {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Config(format!("scenario file {} does not exist", path.display())));
        }
        let file: ScenarioFile = parse_toml(&read(path)?, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let system_path = base.join(&file.system);
        if !system_path.is_file() {
            return Err(Error::Config(format!("system file {} does not exist", system_path.display())));
        }
        let env = load_system(&system_path)?;
        let checkpoint = file.checkpoint.as_ref().map(|c| base.join(c));
        Self::assemble(file, env, checkpoint)
    }

    /// Builds a spec from an in-memory scenario file and system configuration.
    pub fn from_parts(file: ScenarioFile, env: EnvConfig) -> Result<Self> {
        let checkpoint = file.checkpoint.clone();
        Self::assemble(file, env, checkpoint)
    }

    fn assemble(file: ScenarioFile, mut env: EnvConfig, checkpoint: Option<PathBuf>) -> Result<Self> {
        if !(file.duration > 0.0 && file.duration.is_finite()) {
            return Err(Error::Config(format!("scenario duration must be positive, got {}", file.duration)));
        }
        if !(file.settle >= 0.0 && file.settle.is_finite()) {
            return Err(Error::Config("settle time must be nonnegative".into()));
        }
        if let Some(c) = &checkpoint {
            if !c.is_file() {
                return Err(Error::Config(format!("checkpoint {} does not exist", c.display())));
            }
        }
        env.detector = match file.defender {
            DefenderKind::Static => Detector::Static(file.static_detector),
            DefenderKind::Dqn => Detector::Dynamic,
        };
        let n = env.plant.dg_count();
        let mut stages = Vec::with_capacity(file.stages.len());
        for (i, s) in file.stages.iter().enumerate() {
            if let Some(&bad) = s.dgs.iter().find(|&&d| d == 0 || d > n) {
                return Err(Error::Config(format!("stage {} names DG {bad}; DGs are numbered 1..={n}", i + 1)));
            }
            stages.push(AttackStage { trigger: s.trigger, dgs: s.dgs.iter().map(|d| d - 1).collect(), offsets: s.offsets });
        }
        let schedule = AttackSchedule { stages };
        schedule.validate(n)?;
        env.validate()?;
        file.agent.validate()?;
        file.pretrain.validate()?;
        Ok(Self {
            name: file.name,
            env,
            schedule,
            defender: file.defender,
            duration: file.duration,
            seed: file.seed,
            settle: file.settle,
            output: file.output,
            checkpoint,
            static_detector: file.static_detector,
            agent: file.agent,
            pretrain: file.pretrain,
        })
    }

    /// Swaps the defender, keeping everything else.
    pub fn with_defender(mut self, defender: DefenderKind) -> Self {
        self.defender = defender;
        self.env.detector = match defender {
            DefenderKind::Static => Detector::Static(self.static_detector),
            DefenderKind::Dqn => Detector::Dynamic,
        };
        self
    }

    pub fn epochs(&self) -> usize {
        (self.duration / self.env.epoch).round() as usize
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        parse_toml(text, Path::new("<scenario>"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCENARIO: &str = r#"
name = "t"
system = "system.toml"
defender = "static"
duration = 1.0

[[stages]]
trigger = { kind = "at", time = 0.5 }
dgs = [2]
offsets = { omega = 0.05, power_share = 0.0, reactive_share = 0.0 }
"#;

    #[test]
    fn stages_become_zero_based() {
        let file = ScenarioFile::parse(SCENARIO).unwrap();
        let spec = ScenarioSpec::from_parts(file, EnvConfig::default()).unwrap();
        assert_eq!(spec.schedule.stages[0].dgs, vec![1]);
        assert!(matches!(spec.env.detector, Detector::Static(_)));
        assert_eq!(spec.epochs(), 10);
    }

    #[test]
    fn dg_zero_is_rejected() {
        let file = ScenarioFile::parse(&SCENARIO.replace("dgs = [2]", "dgs = [0]")).unwrap();
        assert!(ScenarioSpec::from_parts(file, EnvConfig::default()).unwrap_err().is_config());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = ScenarioFile::parse("name = \"x\"\nduration = = 1\n").unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn empty_system_is_the_default() {
        assert_eq!(parse_system("").unwrap(), EnvConfig::default());
        assert!(parse_system("epoch = 0.1\nbogus = 1\n").is_err());
    }
}
