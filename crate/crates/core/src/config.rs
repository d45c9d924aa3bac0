//! Pipeline configuration: one TOML file, every field defaulted.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{build_library, Arena, LibraryConfig, NoiseModel};
use crate::imm::TransitionModel;
use crate::policy::TrainConfig;
use crate::scenario::{MissionSetup, ScenarioConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImmConfig {
    /// Probability of keeping the same controller between steps; the rest is
    /// spread evenly over the other controllers.
    pub self_probability: f64,
}

impl Default for ImmConfig {
    fn default() -> Self {
        Self { self_probability: 0.95 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Expert demonstration episodes.
    pub demo: usize,
    /// Evaluation episodes per policy.
    pub eval: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { demo: 1000, eval: 120 }
    }
}

/// Standalone random-switching test of the filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferDemoConfig {
    pub horizon_steps: usize,
    pub mean_sojourn_steps: f64,
    /// Independent runs averaged in the report.
    pub runs: usize,
    /// Initial spread of the team around the origin (m).
    pub initial_spread: f64,
}

impl Default for InferDemoConfig {
    fn default() -> Self {
        Self {
            horizon_steps: 4000,
            mean_sojourn_steps: 200.0,
            runs: 10,
            initial_spread: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Integration step (s).
    pub dt: f64,
    pub arena: Arena,
    pub noise: NoiseModel,
    pub library: LibraryConfig,
    pub scenario: ScenarioConfig,
    pub imm: ImmConfig,
    pub training: TrainConfig,
    pub episodes: EpisodeConfig,
    pub infer_demo: InferDemoConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            dt: 0.05,
            arena: Arena::default(),
            noise: NoiseModel::default(),
            library: LibraryConfig::default(),
            scenario: ScenarioConfig::default(),
            imm: ImmConfig::default(),
            training: TrainConfig::default(),
            episodes: EpisodeConfig::default(),
            infer_demo: InferDemoConfig::default(),
        }
    }
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// Line declaring `key` inside table `table` (dotted), if any.
fn locate(source: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = header.trim().to_string();
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else {
            continue;
        };
        let lhs = lhs.trim();
        let full = if current.is_empty() {
            lhs.to_string()
        } else {
            format!("{current}.{lhs}")
        };
        if full == format!("{table}.{key}").trim_start_matches('.') {
            return Some(i + 1);
        }
    }
    None
}

impl PipelineConfig {
    /// Parses and validates; errors name the offending line where possible.
    pub fn from_toml(source: &str) -> Result<Self> {
        let config: Self = toml::from_str(source).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(source, s.start));
            match line {
                Some(l) => Error::Config(format!("line {l}: {}", e.message())),
                None => Error::Config(e.message().to_string()),
            }
        })?;
        config.validate_located(Some(source))?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_located(None)
    }

    fn validate_located(&self, source: Option<&str>) -> Result<()> {
        let sections: [(&str, Result<()>); 8] = [
            ("", self.check_top()),
            ("noise", self.noise.validate()),
            ("library", self.library.validate().and_then(|_| build_library(&self.library).map(|_| ()))),
            ("scenario", self.scenario.validate(&self.arena, &self.library)),
            (
                "imm",
                TransitionModel::sticky(crate::dynamics::ControllerId::COUNT, self.imm.self_probability).map(|_| ()),
            ),
            ("training", self.training.validate()),
            ("episodes", self.check_episodes()),
            ("infer_demo", self.check_infer_demo()),
        ];
        for (section, result) in sections {
            if let Err(e) = result {
                let msg = match e {
                    Error::InvalidArgument(m) | Error::Config(m) | Error::Dimension(m) => m,
                    other => other.to_string(),
                };
                let key = msg.split_whitespace().next().unwrap_or("").trim_end_matches(':');
                let line = source.and_then(|s| {
                    locate(s, section, key)
                        .or_else(|| locate(s, &format!("{section}.geometry"), key))
                        .or_else(|| locate(s, &format!("{section}.expert"), key))
                });
                let place = if section.is_empty() { "top level".to_string() } else { format!("[{section}]") };
                return Err(Error::Config(match line {
                    Some(l) => format!("line {l}: {place}: {msg}"),
                    None => format!("{place}: {msg}"),
                }));
            }
        }
        Ok(())
    }

    fn check_top(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.arena.half_width > 0.0 && self.arena.half_height > 0.0) {
            return Err(Error::InvalidArgument("arena half extents must be > 0".into()));
        }
        Ok(())
    }

    fn check_episodes(&self) -> Result<()> {
        if self.episodes.demo < 2 || self.episodes.eval == 0 {
            return Err(Error::InvalidArgument("demo needs >= 2 episodes and eval >= 1".into()));
        }
        Ok(())
    }

    fn check_infer_demo(&self) -> Result<()> {
        let d = &self.infer_demo;
        if d.horizon_steps < 2 || d.runs == 0 || !(d.mean_sojourn_steps >= 1.0) || !(d.initial_spread >= 0.0) {
            return Err(Error::InvalidArgument(
                "horizon_steps >= 2, runs >= 1, mean_sojourn_steps >= 1, initial_spread >= 0 required".into(),
            ));
        }
        Ok(())
    }

    /// Short digest of the canonical serialization, embedded in artifacts.
    /// Episode counts are left out: they size the data, not how it is made.
    pub fn hash(&self) -> String {
        let canonical = Self {
            episodes: EpisodeConfig::default(),
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn mission_setup(&self) -> Result<MissionSetup> {
        Ok(MissionSetup {
            library: build_library(&self.library)?,
            library_config: self.library.clone(),
            scenario: self.scenario.clone(),
            noise: self.noise,
            arena: self.arena,
            dt: self.dt,
        })
    }

    pub fn transition(&self) -> Result<TransitionModel> {
        TransitionModel::sticky(crate::dynamics::ControllerId::COUNT, self.imm.self_probability)
    }
}
