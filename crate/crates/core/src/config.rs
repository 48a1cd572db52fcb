//! Experiment configuration shared by every pipeline stage.
//!
//! A single TOML file describes the scenario family, agent, twin, switching policy and the
//! settings of each stage. Unknown keys are rejected. The configuration hash is the SHA-256
//! of the canonical JSON form and is written into every output header.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::AgentConfig;
use crate::array::ScenarioSpec;
use crate::environment::NoiseModel;
use crate::orchestrator::SwitchPolicy;
use crate::twin::{TwinArchitecture, TwinConfig};
use crate::{Error, Result};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Real agent steps of the real-only baseline.
    pub iterations: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { iterations: 5000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectConfig {
    /// Random codebook beams measured by `collect`.
    pub samples: u64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self { samples: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Training-set sizes.
    pub sizes: Vec<u64>,
    pub architectures: Vec<TwinArchitecture>,
    /// Fresh random beams used for held-out NMSE.
    pub heldout: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sizes: vec![50, 200, 1000, 10000],
            architectures: vec![TwinArchitecture::Quadratic, TwinArchitecture::Dense],
            heldout: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternConfig {
    /// Azimuth grid points over `[-pi/2, pi/2]`.
    pub points: usize,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self { points: 361 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default = "default_twin")]
    pub twin: TwinConfig,
    #[serde(default)]
    pub policy: SwitchPolicy,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub collect: CollectConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub pattern: PatternConfig,
    /// Measurement error of the real environment; its seed is offset by the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseModel>,
    /// Largest codebook the exhaustive oracle may enumerate.
    #[serde(default = "default_oracle_cap")]
    pub oracle_cap: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_twin() -> TwinConfig {
    TwinConfig::new(TwinArchitecture::Quadratic)
}

fn default_oracle_cap() -> u64 {
    crate::beamforming::DEFAULT_ENUMERATION_CAP
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Config with defaults everywhere except the scenario.
    pub fn with_scenario(scenario: ScenarioSpec) -> Self {
        Self {
            scenario,
            agent: AgentConfig::default(),
            twin: default_twin(),
            policy: SwitchPolicy::default(),
            baseline: BaselineConfig::default(),
            collect: CollectConfig::default(),
            sweep: SweepConfig::default(),
            pattern: PatternConfig::default(),
            noise: None,
            oracle_cap: default_oracle_cap(),
            seeds: default_seeds(),
            output_dir: default_output_dir(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.agent.validate()?;
        self.twin.validate()?;
        self.policy.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.sweep.sizes.contains(&0) || self.sweep.heldout < 2 {
            return Err(Error::config("sweep sizes must be positive and heldout at least 2"));
        }
        if self.pattern.points < 2 {
            return Err(Error::config("pattern needs at least two grid points"));
        }
        if let Some(n) = &self.noise {
            if !(n.sigma_db >= 0.0) {
                return Err(Error::config("noise sigma_db must be non-negative"));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// Header line embedded in every output file.
    pub fn header(&self, seed: u64) -> String {
        output_header(&self.hash(), seed)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn output_header(config_hash: &str, seed: u64) -> String {
    format!("twinbeam {ARTIFACT_VERSION} config={config_hash} seed={seed}")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seeds = [1, 2]

[scenario]
num_antennas = 8
phase_bits = 2
tx_power = 1.0
noise_power = 0.1
ue = { kind = "random", num_paths = 3, mean_power = 1.0 }
interferers = [{ kind = "random", num_paths = 1, mean_power = 1.0 }]
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.agent, AgentConfig::default());
        assert_eq!(cfg.policy, SwitchPolicy::default());
        assert_eq!(cfg.twin.architecture, TwinArchitecture::Quadratic);
        assert_eq!(cfg.seeds, vec![1, 2]);
    }

    #[test]
    fn round_trip_is_identity() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[agent]\ngama = 0.5\n");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::InvalidConfig(_))));
        let text = MINIMAL.replace("seeds", "sedes");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn invalid_values_are_rejected() {
        let text = MINIMAL.replace("noise_power = 0.1", "noise_power = -0.1");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let mut b = a.clone();
        b.agent.gamma = 0.9;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        assert!(a.header(3).ends_with("seed=3"));
    }
}
